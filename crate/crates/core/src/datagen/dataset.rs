use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generate::{generate_motion, MotionKind, MotionParams};
use super::synth::{add_acceleration_noise, label_contacts, synthesize_imu, trial_energy, weights_from_energies};
use super::MotionSequence;
use crate::error::{Error, Result};
use crate::features::{encode, layout_hash, FeatureSequence};
use crate::kinematics::{KinematicTree, Mat3, Pose, Rotation6D, Vec3, NUM_CONTACTS, NUM_SEGMENTS, NUM_SITES};

pub const DATASET_MAGIC: &[u8; 8] = b"SPMOSET\0";
pub const DATASET_VERSION: u32 = 1;

/// One trial at 20 Hz with its synthesized sensor signals.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub kind: MotionKind,
    pub motion: MotionSequence,
    /// Per frame, per site: global orientation.
    pub orientations: Vec<Vec<Mat3>>,
    /// Per frame, per site: world-frame acceleration, m/s².
    pub accelerations: Vec<Vec<Vec3>>,
    pub contacts: Vec<[f64; NUM_CONTACTS]>,
    pub energy: f64,
    pub probability: f64,
}

impl Trial {
    pub fn features(&self, tree: &KinematicTree) -> Result<FeatureSequence> {
        encode(&self.motion, tree, &self.accelerations, &self.contacts)
    }

    pub fn len(&self) -> usize {
        self.motion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motion.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub skeleton_hash: String,
    pub layout_hash: String,
    pub trials: Vec<Trial>,
}

/// Corpus generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub kinds: Vec<MotionKind>,
    pub trials: usize,
    pub seconds: f64,
    pub seed: u64,
    /// Standard deviation of additive acceleration noise, m/s².
    pub acc_noise: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { kinds: MotionKind::ALL.to_vec(), trials: 200, seconds: 30.0, seed: 0, acc_noise: 0.0 }
    }
}

/// Generates and synthesizes one trial; `index` picks the kind round-robin
/// and an independent random stream.
pub fn generate_trial(cfg: &CorpusConfig, index: usize, tree: &KinematicTree) -> Result<(Trial, f64)> {
    if cfg.kinds.is_empty() {
        return Err(Error::contract("corpus needs at least one motion kind"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let kind = cfg.kinds[index % cfg.kinds.len()];
    let params = MotionParams::random(kind, cfg.seconds, &mut rng);
    let seed: u64 = rng.random();
    let generated = generate_motion(&params, tree, seed)?;
    let motion60 = MotionSequence { trial_id: index as u64, ..generated.motion };
    let mut imu = synthesize_imu(&motion60, tree)?;
    add_acceleration_noise(&mut imu, cfg.acc_noise, &mut rng)?;
    let contacts = label_contacts(&motion60, tree)?;
    let energy = trial_energy(&motion60, tree)?;
    let first = imu.instants[0];
    let last = *imu.instants.last().unwrap();
    let trial = Trial {
        kind,
        motion: motion60.decimate(first, last),
        orientations: imu.orientations,
        accelerations: imu.accelerations,
        contacts,
        energy,
        probability: 0.0,
    };
    Ok((quantize(trial)?, energy))
}

pub fn generate_corpus(cfg: &CorpusConfig, tree: &KinematicTree) -> Result<Dataset> {
    if cfg.trials == 0 {
        return Err(Error::contract("corpus needs at least one trial"));
    }
    let mut trials = Vec::with_capacity(cfg.trials);
    for i in 0..cfg.trials {
        trials.push(generate_trial(cfg, i, tree)?.0);
    }
    let ids: Vec<u64> = trials.iter().map(|t| t.motion.trial_id).collect();
    let energies: Vec<f64> = trials.iter().map(|t| t.energy).collect();
    for (t, w) in trials.iter_mut().zip(weights_from_energies(&ids, &energies)?) {
        t.probability = w.probability;
    }
    Ok(Dataset { skeleton_hash: tree.source_hash.clone(), layout_hash: layout_hash(), trials })
}

/// Passes a trial through the on-disk precision so in-memory and loaded
/// corpora are identical.
fn quantize(trial: Trial) -> Result<Trial> {
    let mut buf = Vec::new();
    write_trial(&mut buf, &trial)?;
    read_trial(&mut buf.as_slice())
}

fn kind_code(k: MotionKind) -> u8 {
    MotionKind::ALL.iter().position(|x| *x == k).unwrap() as u8
}

fn put6(w: &mut impl Write, r: &Mat3) -> Result<()> {
    for v in Rotation6D::encode(r).0 {
        w.write_f32::<LE>(v as f32)?;
    }
    Ok(())
}

fn get6(r: &mut impl Read) -> Result<Mat3> {
    let mut six = [0.0; 6];
    for v in &mut six {
        *v = r.read_f32::<LE>()? as f64;
    }
    if !six.iter().all(|v| v.is_finite()) {
        return Err(Error::format("stored rotation is not finite"));
    }
    // The stored columns are kept verbatim so a reload re-encodes to the same bits.
    let a = Vec3([six[0], six[1], six[2]]);
    let b = Vec3([six[3], six[4], six[5]]);
    Ok(Mat3::from_cols(a, b, a.cross(b)))
}

fn write_trial(w: &mut impl Write, t: &Trial) -> Result<()> {
    let m = &t.motion;
    w.write_u64::<LE>(m.trial_id)?;
    w.write_u8(kind_code(t.kind))?;
    w.write_u32::<LE>(m.rate)?;
    w.write_u32::<LE>(m.len() as u32)?;
    for v in [m.height, m.mass, t.energy, t.probability] {
        w.write_f64::<LE>(v)?;
    }
    for (i, p) in m.frames.iter().enumerate() {
        for r in &p.rotations {
            put6(w, r)?;
        }
        for v in p.root_position.0 {
            w.write_f64::<LE>(v)?;
        }
        for s in 0..NUM_SITES {
            put6(w, &t.orientations[i][s])?;
            for v in t.accelerations[i][s].0 {
                w.write_f32::<LE>(v as f32)?;
            }
        }
        for v in t.contacts[i] {
            w.write_f32::<LE>(v as f32)?;
        }
    }
    Ok(())
}

fn read_trial(r: &mut impl Read) -> Result<Trial> {
    let trial_id = r.read_u64::<LE>()?;
    let kind = *MotionKind::ALL
        .get(r.read_u8()? as usize)
        .ok_or_else(|| Error::format("unknown motion kind code"))?;
    let rate = r.read_u32::<LE>()?;
    let n = r.read_u32::<LE>()? as usize;
    let mut head = [0.0; 4];
    for v in &mut head {
        *v = r.read_f64::<LE>()?;
    }
    let [height, mass, energy, probability] = head;
    let mut frames = Vec::with_capacity(n);
    let mut orientations = Vec::with_capacity(n);
    let mut accelerations = Vec::with_capacity(n);
    let mut contacts = Vec::with_capacity(n);
    for _ in 0..n {
        let rotations = (0..NUM_SEGMENTS).map(|_| get6(r)).collect::<Result<Vec<_>>>()?;
        let mut root = [0.0; 3];
        for v in &mut root {
            *v = r.read_f64::<LE>()?;
        }
        frames.push(Pose { rotations, root_position: Vec3(root) });
        let mut o = Vec::with_capacity(NUM_SITES);
        let mut a = Vec::with_capacity(NUM_SITES);
        for _ in 0..NUM_SITES {
            o.push(get6(r)?);
            let mut v = [0.0; 3];
            for x in &mut v {
                *x = r.read_f32::<LE>()? as f64;
            }
            a.push(Vec3(v));
        }
        orientations.push(o);
        accelerations.push(a);
        let mut c = [0.0; NUM_CONTACTS];
        for x in &mut c {
            *x = r.read_f32::<LE>()? as f64;
        }
        contacts.push(c);
    }
    let motion = MotionSequence { rate, frames, height, mass, trial_id };
    motion.validate().map_err(|e| Error::format(format!("trial {trial_id}: {e}")))?;
    Ok(Trial { kind, motion, orientations, accelerations, contacts, energy, probability })
}

pub(crate) fn hash_bytes(hex: &str) -> Result<[u8; 32]> {
    let mut out = [0u8; 32];
    if hex.len() != 64 {
        return Err(Error::format("hash must be 64 hex digits"));
    }
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| Error::format("bad hash digit"))?;
    }
    Ok(out)
}

impl Dataset {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_u32::<LE>(DATASET_VERSION)?;
        w.write_all(&hash_bytes(&self.skeleton_hash)?)?;
        w.write_all(&hash_bytes(&self.layout_hash)?)?;
        w.write_u32::<LE>(self.trials.len() as u32)?;
        for t in &self.trials {
            write_trial(w, t)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::format("not a dataset file (bad magic)"));
        }
        let version = r.read_u32::<LE>()?;
        if version != DATASET_VERSION {
            return Err(Error::format(format!("unsupported dataset version {version}")));
        }
        let mut h = [0u8; 32];
        r.read_exact(&mut h)?;
        let skeleton_hash = crate::kinematics::hex(&h);
        r.read_exact(&mut h)?;
        let layout = crate::kinematics::hex(&h);
        let n = r.read_u32::<LE>()? as usize;
        let trials = (0..n).map(|_| read_trial(r)).collect::<Result<Vec<_>>>()?;
        Ok(Self { skeleton_hash, layout_hash: layout, trials })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    /// Loads and checks that the file was made for `tree` and this layout.
    pub fn load_for(path: &std::path::Path, tree: &KinematicTree) -> Result<Self> {
        let d = Self::load(path)?;
        d.check(tree)?;
        Ok(d)
    }

    pub fn check(&self, tree: &KinematicTree) -> Result<()> {
        if self.skeleton_hash != tree.source_hash {
            return Err(Error::HashMismatch {
                what: "skeleton",
                found: self.skeleton_hash.clone(),
                expected: tree.source_hash.clone(),
            });
        }
        if self.layout_hash != layout_hash() {
            return Err(Error::HashMismatch {
                what: "feature layout",
                found: self.layout_hash.clone(),
                expected: layout_hash(),
            });
        }
        Ok(())
    }

    pub fn features(&self, tree: &KinematicTree) -> Result<Vec<FeatureSequence>> {
        self.trials.iter().map(|t| t.features(tree)).collect()
    }

    /// Lossless text form: the stored single-precision values verbatim.
    pub fn to_json(&self) -> Result<String> {
        let text = TextDataset {
            format: "sparsemo-dataset".into(),
            version: DATASET_VERSION,
            skeleton_hash: self.skeleton_hash.clone(),
            layout_hash: self.layout_hash.clone(),
            trials: self.trials.iter().map(TextTrial::from).collect(),
        };
        serde_json::to_string_pretty(&text).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: TextDataset = serde_json::from_str(text).map_err(|e| Error::format(e.to_string()))?;
        if t.format != "sparsemo-dataset" || t.version != DATASET_VERSION {
            return Err(Error::format("unsupported text dataset"));
        }
        let trials = t.trials.into_iter().map(TextTrial::into_trial).collect::<Result<Vec<_>>>()?;
        Ok(Self { skeleton_hash: t.skeleton_hash, layout_hash: t.layout_hash, trials })
    }
}

#[derive(Serialize, Deserialize)]
struct TextDataset {
    format: String,
    version: u32,
    skeleton_hash: String,
    layout_hash: String,
    trials: Vec<TextTrial>,
}

#[derive(Serialize, Deserialize)]
struct TextFrame {
    rotations: Vec<[f32; 6]>,
    root: [f64; 3],
    site_orientations: Vec<[f32; 6]>,
    accelerations: Vec<[f32; 3]>,
    contacts: [f32; NUM_CONTACTS],
}

#[derive(Serialize, Deserialize)]
struct TextTrial {
    trial_id: u64,
    kind: MotionKind,
    rate: u32,
    height: f64,
    mass: f64,
    energy: f64,
    probability: f64,
    frames: Vec<TextFrame>,
}

fn six32(r: &Mat3) -> [f32; 6] {
    Rotation6D::encode(r).0.map(|v| v as f32)
}

impl From<&Trial> for TextTrial {
    fn from(t: &Trial) -> Self {
        let frames = (0..t.len())
            .map(|i| TextFrame {
                rotations: t.motion.frames[i].rotations.iter().map(six32).collect(),
                root: t.motion.frames[i].root_position.0,
                site_orientations: t.orientations[i].iter().map(six32).collect(),
                accelerations: t.accelerations[i].iter().map(|a| a.0.map(|v| v as f32)).collect(),
                contacts: t.contacts[i].map(|v| v as f32),
            })
            .collect();
        Self {
            trial_id: t.motion.trial_id,
            kind: t.kind,
            rate: t.motion.rate,
            height: t.motion.height,
            mass: t.motion.mass,
            energy: t.energy,
            probability: t.probability,
            frames,
        }
    }
}

impl TextTrial {
    fn into_trial(self) -> Result<Trial> {
        // Reuse the binary decoder so both paths reconstruct identically.
        let mut buf = Vec::new();
        buf.write_u64::<LE>(self.trial_id)?;
        buf.write_u8(kind_code(self.kind))?;
        buf.write_u32::<LE>(self.rate)?;
        buf.write_u32::<LE>(self.frames.len() as u32)?;
        for v in [self.height, self.mass, self.energy, self.probability] {
            buf.write_f64::<LE>(v)?;
        }
        for f in &self.frames {
            if f.rotations.len() != NUM_SEGMENTS || f.site_orientations.len() != NUM_SITES || f.accelerations.len() != NUM_SITES {
                return Err(Error::format("text frame has wrong block sizes"));
            }
            for r in &f.rotations {
                for v in r {
                    buf.write_f32::<LE>(*v)?;
                }
            }
            for v in f.root {
                buf.write_f64::<LE>(v)?;
            }
            for s in 0..NUM_SITES {
                for v in f.site_orientations[s] {
                    buf.write_f32::<LE>(v)?;
                }
                for v in f.accelerations[s] {
                    buf.write_f32::<LE>(v)?;
                }
            }
            for v in f.contacts {
                buf.write_f32::<LE>(v)?;
            }
        }
        read_trial(&mut buf.as_slice())
    }
}
