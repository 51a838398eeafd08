use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
pub const DEFAULT_STEPS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine,
}

/// Cumulative signal coefficients ᾱ_t for t = 0..=T.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::contract(format!("schedule needs T ≥ 2, got {steps}")));
        }
        let s = COSINE_OFFSET;
        let f = |t: f64| (((t / steps as f64) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let f0 = f(0.0);
        let alpha_bar = (0..=steps).map(|t| f(t as f64) / f0).collect();
        Ok(Self { kind: ScheduleKind::Cosine, steps, alpha_bar })
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t.min(self.steps)]
    }

    /// ẑ_t = √ᾱ_t·x + √(1−ᾱ_t)·ε with ε standard normal.
    pub fn noise<T: Scalar>(&self, x: &Tensor<T>, t: usize, rng: &mut impl Rng) -> Result<Tensor<T>> {
        if t > self.steps {
            return Err(Error::contract(format!("step {t} beyond T = {}", self.steps)));
        }
        let a = self.alpha_bar(t);
        let (sa, sn) = (T::from_f64_lossy(a.sqrt()), T::from_f64_lossy((1.0 - a).max(0.0).sqrt()));
        let data = x
            .data()
            .iter()
            .map(|&v| {
                let e: f64 = rng.sample(StandardNormal);
                sa * v + sn * T::from_f64_lossy(e)
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}
