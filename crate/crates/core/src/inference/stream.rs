use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::datagen::{first_instant, MotionSequence, DECIMATE, SMOOTH_HALF, SMOOTH_WIDTH};
use crate::error::{Error, Result};
use crate::features::{Measurement, SensorConfig};
use crate::kinematics::{KinematicTree, Mat3, Vec3, NUM_CONTACTS, NUM_SITES};

pub const STREAM_VERSION: u32 = 1;

/// One 60 Hz sample of one sensor site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub site: String,
    /// Global orientation, `[w, x, y, z]`.
    pub quat: [f64; 4],
    /// World-frame acceleration, m/s².
    pub acc: [f64; 3],
}

/// One line of the input stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub v: u32,
    pub t_ms: f64,
    #[serde(default)]
    pub sites: Vec<SiteRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insoles: Option<[f64; NUM_CONTACTS]>,
}

/// One line of the output stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub v: u32,
    pub t_ms: f64,
    pub frame: u64,
    pub root: [f64; 3],
    /// Global orientation per segment, `[w, x, y, z]`.
    pub quats: Vec<[f64; 4]>,
    pub contacts: [f64; NUM_CONTACTS],
    pub latency_ms: f64,
}

/// Parsed 60 Hz frame with site indices resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    pub t_ms: f64,
    pub imus: Vec<(usize, Mat3, Vec3)>,
    pub insoles: Option<[f64; NUM_CONTACTS]>,
}

impl RawFrame {
    pub fn from_record(rec: &InputRecord, tree: &KinematicTree) -> Result<Self> {
        if rec.v != STREAM_VERSION {
            return Err(Error::format(format!("stream record version {} (expected {STREAM_VERSION})", rec.v)));
        }
        let mut imus = Vec::with_capacity(rec.sites.len());
        for s in &rec.sites {
            let i = tree.site_index(&s.site).ok_or_else(|| Error::format(format!("unknown site {:?}", s.site)))?;
            if imus.iter().any(|(j, _, _)| *j == i) {
                return Err(Error::format(format!("site {:?} listed twice at t = {} ms", s.site, rec.t_ms)));
            }
            let r = Mat3::from_quaternion(s.quat)?;
            imus.push((i, r, Vec3(s.acc)));
        }
        Ok(Self { t_ms: rec.t_ms, imus, insoles: rec.insoles })
    }

    pub fn to_record(&self, tree: &KinematicTree) -> InputRecord {
        InputRecord {
            v: STREAM_VERSION,
            t_ms: self.t_ms,
            sites: self
                .imus
                .iter()
                .map(|(i, r, a)| SiteRecord { site: tree.sites[*i].name.clone(), quat: r.to_quaternion(), acc: a.0 })
                .collect(),
            insoles: self.insoles,
        }
    }
}

/// A 20 Hz measurement with the time of its source frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TimedMeasurement {
    pub t_ms: f64,
    pub measurement: Measurement,
}

/// Centered mean of the present samples; `None` if none is present.
pub fn box_mean(taps: &[Option<Vec3>]) -> Option<Vec3> {
    let (sum, n) = taps.iter().flatten().fold((Vec3::zero(), 0usize), |(s, n), v| (s + *v, n + 1));
    (n > 0).then(|| Vec3(sum.0.map(|v| v / n as f64)))
}

/// 60 Hz → 20 Hz: accelerations averaged over the 11 frames centered on each
/// output instant, orientations and insoles taken at the instant. Instants are
/// the accepted frames `k = 6, 9, 12, …`, matching training synthesis; each is
/// emitted once frame `k + 5` has arrived. A site is present at an instant iff
/// it is present in frame `k`.
pub struct StreamIngest {
    config: SensorConfig,
    buffer: VecDeque<RawFrame>,
    accepted: u64,
    last_t: Option<f64>,
    pub dropped: u64,
}

impl StreamIngest {
    pub fn new(config: SensorConfig) -> Self {
        Self { config, buffer: VecDeque::with_capacity(SMOOTH_WIDTH), accepted: 0, last_t: None, dropped: 0 }
    }

    /// Feeds one frame; returns the measurement that became complete, if any.
    pub fn push(&mut self, mut frame: RawFrame) -> Option<TimedMeasurement> {
        if let Some(t) = self.last_t {
            if !(frame.t_ms > t) {
                log::warn!("dropping frame at t = {} ms (not after {} ms)", frame.t_ms, t);
                self.dropped += 1;
                return None;
            }
        }
        self.last_t = Some(frame.t_ms);
        frame.imus.retain(|(s, _, _)| self.config.contains(*s));
        if !self.config.insoles {
            frame.insoles = None;
        }
        if self.buffer.len() == SMOOTH_WIDTH {
            self.buffer.pop_front();
        }
        self.buffer.push_back(frame);
        self.accepted += 1;
        let newest = self.accepted - 1;
        let k = newest.checked_sub(SMOOTH_HALF as u64)?;
        if k < first_instant() as u64 || (k - first_instant() as u64) % DECIMATE as u64 != 0 {
            return None;
        }
        Some(self.measure())
    }

    fn measure(&self) -> TimedMeasurement {
        let center = &self.buffer[SMOOTH_HALF];
        let mut imus = Vec::with_capacity(center.imus.len());
        let mut sites: Vec<usize> = center.imus.iter().map(|m| m.0).collect();
        sites.sort_unstable();
        for s in sites {
            let r = center.imus.iter().find(|m| m.0 == s).expect("present").1;
            let taps: Vec<Option<Vec3>> =
                self.buffer.iter().map(|f| f.imus.iter().find(|m| m.0 == s).map(|m| m.2)).collect();
            imus.push((s, r, box_mean(&taps).expect("center tap is present")));
        }
        TimedMeasurement { t_ms: center.t_ms, measurement: Measurement { imus, insoles: center.insoles } }
    }
}

/// The sensor stream a 60 Hz motion would produce, with unsmoothed
/// accelerations from second differences of site positions (zero on the
/// first and last frame).
pub fn simulate_stream(
    motion: &MotionSequence,
    tree: &KinematicTree,
    contacts: Option<&[[f64; NUM_CONTACTS]]>,
) -> Result<Vec<RawFrame>> {
    motion.validate()?;
    let subject = motion.subject_tree(tree)?;
    let fk = motion.forward(&subject)?;
    let rate = motion.rate as f64;
    let n = fk.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let imus = (0..NUM_SITES)
            .map(|s| {
                let a = if k == 0 || k + 1 >= n {
                    Vec3::zero()
                } else {
                    (fk[k + 1].sites[s] - fk[k].sites[s].scale(2.0) + fk[k - 1].sites[s]).scale(rate * rate)
                };
                (s, fk[k].global[subject.sites[s].segment], a)
            })
            .collect();
        out.push(RawFrame { t_ms: k as f64 * 1000.0 / rate, imus, insoles: contacts.and_then(|c| c.get(k).copied()) });
    }
    Ok(out)
}

/// Reads newline-delimited input records; blank lines are skipped.
pub fn read_input_records(r: impl BufRead) -> Result<Vec<InputRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(format!("stream line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_records<R: Serialize>(w: &mut impl Write, records: &[R]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r).map_err(|e| Error::format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_output_records(r: impl BufRead) -> Result<Vec<OutputRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: OutputRecord =
            serde_json::from_str(&line).map_err(|e| Error::format(format!("output line {}: {e}", i + 1)))?;
        if rec.v != STREAM_VERSION {
            return Err(Error::format(format!("output record version {}", rec.v)));
        }
        out.push(rec);
    }
    Ok(out)
}
