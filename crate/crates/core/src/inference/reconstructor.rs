use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use super::root::root_correct;
use super::sampler::{inpaint_denoise, SamplerKind};
use super::spread::{StepSpread, DEFAULT_SPREAD_LEN};
use super::stream::{OutputRecord, STREAM_VERSION};
use crate::datagen::{MotionSequence, Trial};
use crate::diffusion::Checkpoint;
use crate::error::{Error, Result};
use crate::features::{
    apply_observation, build_inference_mask, decode_frame, frame_orientations, ori_range, FeatureWindow, Measurement,
    SensorConfig, CONTACT, DP, FEATURES, PY, RATE_HZ, WINDOW,
};
use crate::kinematics::{KinematicTree, Mat3, Pose, Rotation6D, Vec3, NUM_CONTACTS, NUM_SEGMENTS};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Per-session settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionConfig {
    pub sensors: SensorConfig,
    /// Subject height in meters; conditions the model and scales the skeleton.
    pub height: f64,
    pub spread: StepSpread,
    pub sampler: SamplerKind,
    pub root_correction: bool,
    pub seed: u64,
}

impl SessionConfig {
    pub fn new(sensors: SensorConfig, height: f64, t_max: usize) -> Result<Self> {
        Ok(Self {
            sensors,
            height,
            spread: StepSpread::with_count(DEFAULT_SPREAD_LEN, t_max)?,
            sampler: SamplerKind::default(),
            root_correction: true,
            seed: 0,
        })
    }
}

/// One emitted 20 Hz frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutput {
    pub frame: u64,
    pub t_ms: f64,
    /// Physical feature vector as stored in the history.
    pub features: Vec<f64>,
    pub pose: Pose,
    pub global: Vec<Mat3>,
    pub latency_ms: f64,
}

impl FrameOutput {
    pub fn contacts(&self) -> [f64; NUM_CONTACTS] {
        std::array::from_fn(|k| self.features[CONTACT + k])
    }

    pub fn to_record(&self) -> OutputRecord {
        OutputRecord {
            v: STREAM_VERSION,
            t_ms: self.t_ms,
            frame: self.frame,
            root: self.pose.root_position.0,
            quats: self.global.iter().map(|g| g.to_quaternion()).collect(),
            contacts: self.contacts().map(|c| c.clamp(0.0, 1.0)),
            latency_ms: self.latency_ms,
        }
    }
}

/// Rolling autoregressive reconstruction for one subject and sensor setup.
/// The window holds the most recent 61 emitted frames in physical units.
pub struct Reconstructor<T> {
    ckpt: Checkpoint<T>,
    tree: KinematicTree,
    session: SessionConfig,
    window: Option<FeatureWindow>,
    root: Vec3,
    rng: ChaCha8Rng,
    pub frame: u64,
    pub latencies_ms: Vec<f64>,
}

/// T-pose frame: identity orientations, no accelerations, no root motion,
/// standing root height, all contacts on.
pub fn neutral_frame(subject: &KinematicTree) -> Vec<f64> {
    let mut f = vec![0.0; FEATURES];
    let six = Rotation6D::encode(&Mat3::identity()).0;
    for s in 0..NUM_SEGMENTS {
        f[ori_range(s)].copy_from_slice(&six);
    }
    f[PY] = subject.standing_root_height();
    for c in &mut f[CONTACT..FEATURES] {
        *c = 1.0;
    }
    f
}

impl<T: Scalar> Reconstructor<T> {
    /// `tree` is the reference skeleton the checkpoint was trained with.
    pub fn new(ckpt: Checkpoint<T>, tree: &KinematicTree, session: SessionConfig) -> Result<Self> {
        ckpt.check(tree)?;
        session.spread.check(ckpt.schedule.steps)?;
        if !(session.height > 0.0 && session.height.is_finite()) {
            return Err(Error::contract(format!("subject height {} must be > 0", session.height)));
        }
        let subject = tree.scaled(session.height, tree.subject_mass)?;
        let rng = ChaCha8Rng::seed_from_u64(session.seed);
        Ok(Self {
            ckpt,
            tree: subject,
            session,
            window: None,
            root: Vec3::zero(),
            rng,
            frame: 0,
            latencies_ms: Vec::new(),
        })
    }

    pub fn session(&self) -> &SessionConfig {
        &self.session
    }

    /// The subject-scaled skeleton.
    pub fn tree(&self) -> &KinematicTree {
        &self.tree
    }

    pub fn window(&self) -> Option<&FeatureWindow> {
        self.window.as_ref()
    }

    /// Horizontal start position of the root.
    pub fn set_origin(&mut self, x: f64, z: f64) {
        self.root = Vec3::new(x, self.root.y(), z);
    }

    /// 61 neutral frames with the last one overwritten by the measured channels.
    pub fn cold_start(&mut self, first: &Measurement) -> Result<FeatureWindow> {
        let neutral = neutral_frame(&self.tree);
        let mut data = Vec::with_capacity(WINDOW * FEATURES);
        for _ in 0..WINDOW {
            data.extend_from_slice(&neutral);
        }
        let w = FeatureWindow { x: Tensor::new([WINDOW, FEATURES], data)?, height: self.session.height };
        self.check_measurement(first)?;
        let mut out = w.clone();
        first.write(&self.tree, out.frame_mut(WINDOW - 1));
        self.window = Some(w);
        Ok(out)
    }

    /// Continues from known history: `history` becomes the emitted window and
    /// `root` the position of its last frame.
    pub fn warm_start(&mut self, history: FeatureWindow, root: Vec3) -> Result<()> {
        if history.x.shape() != [WINDOW, FEATURES] {
            return Err(Error::Dimension { op: "warm_start", lhs: history.x.shape().to_vec(), rhs: vec![WINDOW, FEATURES] });
        }
        self.window = Some(history);
        self.root = root;
        Ok(())
    }

    fn check_measurement(&self, m: &Measurement) -> Result<()> {
        if !m.config().is_subset_of(&self.session.sensors) {
            return Err(Error::contract(format!(
                "measurement covers {} outside the session configuration {}",
                m.config().without(&self.session.sensors).label(&self.tree),
                self.session.sensors.label(&self.tree)
            )));
        }
        Ok(())
    }

    /// Observation, inpainting, assembly, root correction, decoding, history shift.
    pub fn step(&mut self, m: &Measurement, t_ms: f64) -> Result<FrameOutput> {
        let started = Instant::now();
        self.check_measurement(m)?;
        let x_input = match &self.window {
            None => self.cold_start(m)?,
            Some(w) => {
                let mut shifted = w.clone();
                let last = w.frame(WINDOW - 1).to_vec();
                shifted.shift_in(&last);
                apply_observation(&shifted, &self.session.sensors, m, &self.tree)?
            }
        };
        // Channels present in this frame; missing sensors are generated.
        let present = m.config();
        let mask = build_inference_mask(&present, &self.tree);
        let mut sample: Vec<T> = x_input.x.data().iter().map(|&v| T::from_f64_lossy(v)).collect();
        let norm = self.ckpt.normalizer;
        norm.normalize(&mut sample);
        let sample = Tensor::new([WINDOW, FEATURES], sample)?;
        let out = inpaint_denoise(
            &self.ckpt.params,
            &self.ckpt.schedule,
            &sample,
            &mask,
            self.session.height,
            &self.session.spread,
            self.session.sampler,
            &mut self.rng,
        )
        .map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("frame {}: {msg}", self.frame)),
            e => e,
        })?;
        let mut generated: Vec<T> = out.data()[(WINDOW - 1) * FEATURES..].to_vec();
        norm.denormalize(&mut generated);
        let measured = x_input.frame(WINDOW - 1);
        let mut cur: Vec<f64> = generated
            .iter()
            .zip(measured)
            .zip(mask.last_frame())
            .map(|((&g, &x), &keep)| if keep { x } else { g.to_f64_lossy() })
            .collect();
        if !cur.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("frame {}: generated features", self.frame)));
        }
        let prev = x_input.frame(WINDOW - 2);
        if self.session.root_correction {
            let dp = root_correct(prev, &cur, &self.tree)?;
            cur[DP] = dp[0];
            cur[DP + 1] = dp[1];
        }
        let pose = decode_frame(&cur, &self.tree, self.root)?;
        let global = frame_orientations(&cur)?;
        self.root = pose.root_position;
        let mut window = x_input;
        window.frame_mut(WINDOW - 1).copy_from_slice(&cur);
        self.window = Some(window);
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        self.latencies_ms.push(latency_ms);
        let out = FrameOutput { frame: self.frame, t_ms, features: cur, pose, global, latency_ms };
        self.frame += 1;
        Ok(out)
    }
}

/// Measurements a trial provides under a sensor configuration.
pub fn trial_measurements(trial: &Trial, config: &SensorConfig) -> Vec<Measurement> {
    (0..trial.len())
        .map(|i| Measurement {
            imus: config.sites().map(|s| (s, trial.orientations[i][s], trial.accelerations[i][s])).collect(),
            insoles: config.insoles.then(|| trial.contacts[i]),
        })
        .collect()
}

/// Emitted frames as a motion at 20 Hz.
pub fn outputs_to_motion(frames: &[FrameOutput], height: f64, mass: f64, trial_id: u64) -> MotionSequence {
    MotionSequence { rate: RATE_HZ, frames: frames.iter().map(|f| f.pose.clone()).collect(), height, mass, trial_id }
}

/// Runs a whole trial from a cold start, rooted at the trial's first position.
pub fn reconstruct_trial<T: Scalar>(
    ckpt: &Checkpoint<T>,
    tree: &KinematicTree,
    trial: &Trial,
    session: &SessionConfig,
) -> Result<Vec<FrameOutput>> {
    let mut r = Reconstructor::new(ckpt.clone(), tree, session.clone())?;
    let start = trial.motion.frames.first().ok_or_else(|| Error::contract("empty trial"))?.root_position;
    r.set_origin(start.x(), start.z());
    let period = 1000.0 / RATE_HZ as f64;
    trial_measurements(trial, &session.sensors)
        .iter()
        .enumerate()
        .map(|(i, m)| r.step(m, i as f64 * period))
        .collect()
}
