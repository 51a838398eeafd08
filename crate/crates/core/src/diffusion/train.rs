use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::denoiser::{forward, DenoiserParams, ModelSize};
use super::loss::{breakdown, LossBreakdown, LossContext, LossWeights};
use super::schedule::{DiffusionSchedule, DEFAULT_STEPS};
use crate::datagen::WindowSampler;
use crate::error::{Error, Result};
use crate::features::{FeatureSequence, FeatureWindow, Normalizer, FEATURES, WINDOW};
use crate::kinematics::KinematicTree;
use crate::numerics::{adam_step, AdamConfig, AdamState, Graph, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub size: ModelSize,
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub weights: LossWeights,
    pub schedule_steps: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            size: ModelSize::TOY,
            steps: 1000,
            batch: 32,
            adam: AdamConfig::default(),
            seed: 0,
            weights: LossWeights::default(),
            schedule_steps: DEFAULT_STEPS,
            log_every: 50,
        }
    }
}

/// Windows stacked into `[batch·61, 190]` sample-space rows.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub x: Tensor<T>,
    pub heights: Vec<f64>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_windows(windows: &[FeatureWindow], normalizer: &Normalizer) -> Result<Self> {
        let mut data = Vec::with_capacity(windows.len() * WINDOW * FEATURES);
        for w in windows {
            data.extend_from_slice(w.x.data());
        }
        normalizer.normalize(&mut data);
        let rows = windows.len() * WINDOW;
        Ok(Self {
            x: Tensor::new([rows, FEATURES], data.into_iter().map(T::from_f64_lossy).collect())?,
            heights: windows.iter().map(|w| w.height).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }
}

/// Noising at `steps`, prediction, all five terms, and their gradients with
/// respect to every parameter tensor (in `param_specs` order).
pub fn training_step<T: Scalar>(
    params: &DenoiserParams<T>,
    ctx: &LossContext<T>,
    schedule: &DiffusionSchedule,
    batch: &Batch<T>,
    steps: &[usize],
    rng: &mut impl Rng,
) -> Result<(LossBreakdown, Vec<Tensor<T>>)> {
    if steps.len() != batch.len() {
        return Err(Error::contract("one diffusion step per batch element required"));
    }
    let rows_per = batch.x.shape()[0] / batch.len().max(1);
    let mut z = Vec::with_capacity(batch.x.len());
    for (b, &t) in steps.iter().enumerate() {
        let part = Tensor::new([rows_per, FEATURES], batch.x.data()[b * rows_per * FEATURES..(b + 1) * rows_per * FEATURES].to_vec())?;
        z.extend_from_slice(schedule.noise(&part, t, rng)?.data());
    }
    let z = Tensor::new(batch.x.shape().to_vec(), z)?;
    let mut g = Graph::new();
    let vars: Vec<Var> = params.tensors.iter().map(|t| g.param(t.clone())).collect();
    let zv = g.constant(z);
    let pred = forward(&mut g, &params.size, &vars, zv, steps, &batch.heights)?;
    let lv = ctx.record(&mut g, pred, &batch.x, &batch.heights)?;
    let losses = breakdown(&g, &lv);
    if !losses.is_finite() || g.non_finite().is_some() {
        let node = g.non_finite().map(|(i, op)| format!(" (first at node {i}, op {op})")).unwrap_or_default();
        return Err(Error::NonFinite(format!("training loss {losses:?}{node}")));
    }
    let grads = g.backward(lv.total)?;
    let grads = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
    Ok((losses, grads))
}

/// Single-writer optimization loop with a deterministic window stream.
pub struct Trainer<'a, T> {
    sampler: WindowSampler<'a>,
    pub params: DenoiserParams<T>,
    state: AdamState<T>,
    pub ctx: LossContext<T>,
    pub schedule: DiffusionSchedule,
    rng: ChaCha8Rng,
    pub cfg: TrainConfig,
    pub step: u64,
    pub curve: Vec<LossBreakdown>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(corpus: &'a [FeatureSequence], weights: &[f64], tree: &KinematicTree, cfg: TrainConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::contract("training corpus is empty"));
        }
        if cfg.batch == 0 {
            return Err(Error::contract("batch size must be ≥ 1"));
        }
        let normalizer = Normalizer::fit(corpus)?;
        let params = DenoiserParams::init(cfg.size, cfg.seed)?;
        Self::resume(corpus, weights, tree, cfg, normalizer, params)
    }

    /// Starts from given weights and normalization.
    pub fn resume(
        corpus: &'a [FeatureSequence],
        weights: &[f64],
        tree: &KinematicTree,
        cfg: TrainConfig,
        normalizer: Normalizer,
        params: DenoiserParams<T>,
    ) -> Result<Self> {
        let sampler = WindowSampler::new(corpus, weights, cfg.seed)?;
        let schedule = DiffusionSchedule::cosine(cfg.schedule_steps)?;
        let ctx = LossContext::new(tree, normalizer, cfg.weights);
        let state = AdamState::new(&params.tensors);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_d1ff);
        Ok(Self { sampler, params, state, ctx, schedule, rng, cfg, step: 0, curve: Vec::new() })
    }

    pub fn step(&mut self) -> Result<LossBreakdown> {
        let windows: Vec<FeatureWindow> = (0..self.cfg.batch).map(|_| self.sampler.next_indexed().1).collect();
        let batch = Batch::from_windows(&windows, &self.ctx.normalizer)?;
        let steps: Vec<usize> = (0..batch.len()).map(|_| self.rng.random_range(0..=self.schedule.steps)).collect();
        let (losses, grads) = training_step(&self.params, &self.ctx, &self.schedule, &batch, &steps, &mut self.rng)
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("diverged at step {}: {m}", self.step)),
                e => e,
            })?;
        adam_step(&mut self.params.tensors, &grads, &mut self.state, &self.cfg.adam)?;
        if !self.params.is_finite() {
            return Err(Error::NonFinite(format!("parameters became non-finite at step {}", self.step)));
        }
        self.step += 1;
        if self.cfg.log_every > 0 && self.step % self.cfg.log_every as u64 == 0 {
            log::info!(
                "step {:>6}  total {:.5}  simple {:.5}  vel {:.5}  fk {:.5}  drift {:.5}  slide {:.5}",
                self.step,
                losses.total,
                losses.simple,
                losses.vel,
                losses.fk,
                losses.drift,
                losses.slide
            );
        }
        self.curve.push(losses);
        Ok(losses)
    }

    pub fn run(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn checkpoint(&self, tree: &KinematicTree) -> Checkpoint<T> {
        let mut c = Checkpoint::new(self.params.clone(), self.schedule.clone(), self.ctx.normalizer, tree);
        c.trained_steps = self.step;
        c
    }
}

pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub curve: Vec<LossBreakdown>,
}

/// Runs the configured step budget from a fresh initialization.
pub fn train<T: Scalar>(
    corpus: &[FeatureSequence],
    weights: &[f64],
    tree: &KinematicTree,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let mut t = Trainer::new(corpus, weights, tree, cfg.clone())?;
    t.run(cfg.steps)?;
    Ok(TrainOutcome { checkpoint: t.checkpoint(tree), curve: t.curve })
}

/// Mean losses over fixed windows at evenly spaced diffusion steps with a
/// fixed noise seed; comparable across checkpoints of one run.
pub fn validation_loss<T: Scalar>(
    params: &DenoiserParams<T>,
    ctx: &LossContext<T>,
    schedule: &DiffusionSchedule,
    windows: &[FeatureWindow],
    levels: usize,
    seed: u64,
) -> Result<LossBreakdown> {
    if windows.is_empty() || levels == 0 {
        return Err(Error::contract("validation needs windows and ≥ 1 level"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = Batch::<T>::from_windows(windows, &ctx.normalizer)?;
    let mut acc = LossBreakdown::default();
    for l in 0..levels {
        let t = if levels == 1 { 0 } else { l * schedule.steps / (levels - 1) };
        let steps = vec![t; batch.len()];
        let mut z = Vec::with_capacity(batch.x.len());
        let rows = WINDOW * FEATURES;
        for b in 0..batch.len() {
            let part = Tensor::new([WINDOW, FEATURES], batch.x.data()[b * rows..(b + 1) * rows].to_vec())?;
            z.extend_from_slice(schedule.noise(&part, t, &mut rng)?.data());
        }
        let pred = params.denoise(&Tensor::new(batch.x.shape().to_vec(), z)?, &steps, &batch.heights)?;
        let v = ctx.evaluate(&pred, &batch.x, &batch.heights)?;
        acc.simple += v.simple;
        acc.vel += v.vel;
        acc.fk += v.fk;
        acc.drift += v.drift;
        acc.slide += v.slide;
        acc.total += v.total;
    }
    let n = levels as f64;
    Ok(LossBreakdown {
        simple: acc.simple / n,
        vel: acc.vel / n,
        fk: acc.fk / n,
        drift: acc.drift / n,
        slide: acc.slide / n,
        total: acc.total / n,
    })
}
