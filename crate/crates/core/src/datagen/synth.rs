use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::MotionSequence;
use crate::error::{Error, Result};
use crate::features::{FeatureSequence, FeatureWindow, WINDOW};
use crate::kinematics::{KinematicTree, Mat3, Vec3, NUM_CONTACTS};

/// Centered moving-average width used on accelerations (5 past + current + 5 future).
pub const SMOOTH_WIDTH: usize = 11;
pub const SMOOTH_HALF: usize = SMOOTH_WIDTH / 2;
/// Decimation factor from 60 Hz to 20 Hz.
pub const DECIMATE: usize = 3;
/// Strict speed threshold below which a contact point is labeled in contact.
pub const CONTACT_SPEED: f64 = 0.3;

/// Signals for one trial at 20 Hz, all sampled at the same instants.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthesizedImu {
    /// 60 Hz frame indices of the 20 Hz samples.
    pub instants: Vec<usize>,
    pub orientations: Vec<Vec<Mat3>>,
    pub accelerations: Vec<Vec<Vec3>>,
}

/// First 60 Hz frame at which every filter tap has a valid second difference.
pub fn first_instant() -> usize {
    SMOOTH_HALF + 1
}

/// 20 Hz sample instants for a motion of `n` frames at 60 Hz.
pub fn sample_instants(n: usize) -> Vec<usize> {
    let first = first_instant();
    if n < first + SMOOTH_HALF + 2 {
        return Vec::new();
    }
    (first..=n - SMOOTH_HALF - 2).step_by(DECIMATE).collect()
}

/// Centered box average; `out[i]` averages `x[i-half ..= i+half]`, defined for
/// `half ≤ i < len-half`. Other entries are `None`.
pub fn moving_average(x: &[Vec3], half: usize) -> Vec<Option<Vec3>> {
    let w = (2 * half + 1) as f64;
    (0..x.len())
        .map(|i| {
            if i < half || i + half >= x.len() {
                return None;
            }
            let s = x[i - half..=i + half].iter().fold(Vec3::zero(), |a, b| a + *b);
            Some(Vec3(s.0.map(|v| v / w)))
        })
        .collect()
}

fn second_difference(track: &[Vec3], rate: f64) -> Vec<Vec3> {
    let r2 = rate * rate;
    (0..track.len())
        .map(|k| {
            if k == 0 || k + 1 >= track.len() {
                Vec3::zero()
            } else {
                (track[k + 1] - track[k].scale(2.0) + track[k - 1]).scale(r2)
            }
        })
        .collect()
}

/// World-frame site accelerations by double differentiation of site positions,
/// smoothed and decimated; orientations are the segments' global orientations.
pub fn synthesize_imu(motion: &MotionSequence, tree: &KinematicTree) -> Result<SynthesizedImu> {
    motion.validate()?;
    if motion.rate != 60 {
        return Err(Error::contract("IMU synthesis expects 60 Hz motion"));
    }
    let instants = sample_instants(motion.len());
    if instants.is_empty() {
        return Err(Error::contract(format!(
            "motion of {} frames is too short for synthesis (need ≥ {})",
            motion.len(),
            2 * SMOOTH_HALF + 3
        )));
    }
    let subject = motion.subject_tree(tree)?;
    let fk = motion.forward(&subject)?;
    let rate = motion.rate as f64;
    let sites = subject.sites.len();
    let mut acc: Vec<Vec<Vec3>> = vec![Vec::with_capacity(sites); instants.len()];
    for s in 0..sites {
        let track: Vec<Vec3> = fk.iter().map(|f| f.sites[s]).collect();
        let a = second_difference(&track, rate);
        // Only interior second differences are averaged.
        let smooth = moving_average(&a, SMOOTH_HALF);
        for (j, &k) in instants.iter().enumerate() {
            acc[j].push(smooth[k].expect("instants keep the filter in range"));
        }
    }
    let orientations = instants
        .iter()
        .map(|&k| subject.sites.iter().map(|s| fk[k].global[s.segment]).collect())
        .collect();
    Ok(SynthesizedImu { instants, orientations, accelerations: acc })
}

/// Binary contact labels at the synthesis instants.
pub fn label_contacts(motion: &MotionSequence, tree: &KinematicTree) -> Result<Vec<[f64; NUM_CONTACTS]>> {
    motion.validate()?;
    let subject = motion.subject_tree(tree)?;
    let fk = motion.forward(&subject)?;
    let rate = motion.rate as f64;
    let instants = sample_instants(motion.len());
    Ok(instants
        .iter()
        .map(|&k| {
            std::array::from_fn(|c| {
                contact_label((fk[k + 1].contacts[c] - fk[k - 1].contacts[c]).norm() * rate / 2.0)
            })
        })
        .collect())
}

/// 1 below the speed threshold, 0 at or above it.
pub fn contact_label(speed: f64) -> f64 {
    if speed < CONTACT_SPEED {
        1.0
    } else {
        0.0
    }
}

/// Contact flags of a generator, reduced to the synthesis instants: a point is
/// in stance at an instant when it is held static on both neighboring frames.
pub fn stance_at_instants(stance: &[[bool; NUM_CONTACTS]]) -> Vec<[bool; NUM_CONTACTS]> {
    sample_instants(stance.len())
        .iter()
        .map(|&k| std::array::from_fn(|c| stance[k - 1][c] && stance[k][c] && stance[k + 1][c]))
        .collect()
}

/// Adds zero-mean Gaussian noise to accelerations.
pub fn add_acceleration_noise(imu: &mut SynthesizedImu, sigma: f64, rng: &mut impl Rng) -> Result<()> {
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::contract(format!("noise sigma: {e}")))?;
    for frame in &mut imu.accelerations {
        for a in frame.iter_mut() {
            *a += Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        }
    }
    Ok(())
}

/// Mean over frame intervals of Σ ½ m ‖v‖² given per-segment COM tracks.
pub fn kinetic_energy(masses: &[f64], com: &[Vec<Vec3>], rate: f64) -> f64 {
    let frames = com.first().map(|c| c.len()).unwrap_or(0);
    if frames < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 1..frames {
        for (m, track) in masses.iter().zip(com) {
            let v = (track[k] - track[k - 1]).scale(rate);
            total += 0.5 * m * v.dot(v);
        }
    }
    total / (frames - 1) as f64
}

/// Segment centres of mass: midpoint of the joint and its children's mean.
pub fn segment_com(tree: &KinematicTree, joints: &[Vec3]) -> Vec<Vec3> {
    (0..tree.len())
        .map(|s| {
            let kids: Vec<usize> = tree.children(s).collect();
            if kids.is_empty() {
                joints[s]
            } else {
                let end = kids.iter().fold(Vec3::zero(), |a, c| a + joints[*c]).scale(1.0 / kids.len() as f64);
                (joints[s] + end).scale(0.5)
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialWeight {
    pub trial_id: u64,
    pub energy: f64,
    pub probability: f64,
}

pub fn trial_energy(motion: &MotionSequence, tree: &KinematicTree) -> Result<f64> {
    let subject = motion.subject_tree(tree)?;
    let fk = motion.forward(&subject)?;
    let masses: Vec<f64> = subject.segments.iter().map(|s| s.mass).collect();
    let coms: Vec<Vec<Vec3>> = fk.iter().map(|f| segment_com(&subject, &f.joints)).collect();
    let tracks: Vec<Vec<Vec3>> = (0..subject.len()).map(|s| coms.iter().map(|c| c[s]).collect()).collect();
    Ok(kinetic_energy(&masses, &tracks, motion.rate as f64))
}

/// Sampling probability ∝ energy + 1% of the corpus mean energy.
pub fn weights_from_energies(ids: &[u64], energies: &[f64]) -> Result<Vec<TrialWeight>> {
    if energies.is_empty() {
        return Err(Error::contract("cannot weight an empty corpus"));
    }
    let mean = energies.iter().sum::<f64>() / energies.len() as f64;
    let eps = 0.01 * mean;
    let raw: Vec<f64> = energies.iter().map(|e| e + eps).collect();
    let total: f64 = raw.iter().sum();
    Ok(ids
        .iter()
        .zip(energies)
        .zip(&raw)
        .map(|((&trial_id, &energy), &r)| TrialWeight {
            trial_id,
            energy,
            probability: if total > 0.0 { r / total } else { 1.0 / energies.len() as f64 },
        })
        .collect())
}

pub fn compute_trial_weights(corpus: &[MotionSequence], tree: &KinematicTree) -> Result<Vec<TrialWeight>> {
    let energies = corpus.iter().map(|m| trial_energy(m, tree)).collect::<Result<Vec<_>>>()?;
    let ids: Vec<u64> = corpus.iter().map(|m| m.trial_id).collect();
    weights_from_energies(&ids, &energies)
}

/// Draws training windows: trial ∝ weight, start frame uniform.
pub struct WindowSampler<'a> {
    trials: Vec<&'a FeatureSequence>,
    pick: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl<'a> WindowSampler<'a> {
    pub fn new(corpus: &'a [FeatureSequence], weights: &[f64], seed: u64) -> Result<Self> {
        if corpus.len() != weights.len() {
            return Err(Error::contract("one weight per trial required"));
        }
        let mut trials = Vec::new();
        let mut w = Vec::new();
        for (i, (t, &p)) in corpus.iter().zip(weights).enumerate() {
            if t.frames() < WINDOW {
                log::warn!("trial {i}: {} frames is shorter than a window, skipped", t.frames());
                continue;
            }
            trials.push(t);
            w.push(p);
        }
        if trials.is_empty() {
            return Err(Error::contract("no trial is long enough for a window"));
        }
        let pick = WeightedIndex::new(&w).map_err(|e| Error::contract(format!("trial weights: {e}")))?;
        Ok(Self { trials, pick, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    /// Draws only the trial index.
    pub fn pick_trial(&mut self) -> usize {
        self.pick.sample(&mut self.rng)
    }

    /// Index among the retained trials and the sampled window.
    pub fn next_indexed(&mut self) -> (usize, FeatureWindow) {
        let i = self.pick_trial();
        let t = self.trials[i];
        let start = self.rng.random_range(0..=t.frames() - WINDOW);
        (i, t.window(start).expect("start keeps the window in range"))
    }
}

impl Iterator for WindowSampler<'_> {
    type Item = (FeatureWindow, f64);
    fn next(&mut self) -> Option<Self::Item> {
        let (_, w) = self.next_indexed();
        let h = w.height;
        Some((w, h))
    }
}
