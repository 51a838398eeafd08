use serde::{Deserialize, Serialize};

use super::{FeatureSequence, ACC, ACC_LEN, DP, FEATURES, PY};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-block affine map into the model's sample space. Orientations and
/// contacts are already O(1) and pass through unchanged; accelerations and
/// Δp are divided by their RMS, root height is standardized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub acc_scale: f64,
    pub dp_scale: f64,
    pub py_mean: f64,
    pub py_scale: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { acc_scale: 1.0, dp_scale: 1.0, py_mean: 0.0, py_scale: 1.0 }
    }
}

impl Normalizer {
    pub fn fit(corpus: &[FeatureSequence]) -> Result<Self> {
        let (mut acc, mut dp, mut py, mut py2, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for seq in corpus {
            for i in 0..seq.frames() {
                let f = seq.frame(i);
                acc += f[ACC..ACC + ACC_LEN].iter().map(|v| v * v).sum::<f64>();
                dp += f[DP] * f[DP] + f[DP + 1] * f[DP + 1];
                py += f[PY];
                py2 += f[PY] * f[PY];
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::contract("cannot fit a normalizer on an empty corpus"));
        }
        let nf = n as f64;
        let mean = py / nf;
        let var = (py2 / nf - mean * mean).max(0.0);
        Ok(Self {
            acc_scale: (acc / (nf * ACC_LEN as f64)).sqrt().max(0.1),
            dp_scale: (dp / (2.0 * nf)).sqrt().max(1e-3),
            py_mean: mean,
            py_scale: var.sqrt().max(0.01),
        })
    }

    /// In place over row-major frames.
    pub fn normalize<T: Scalar>(&self, data: &mut [T]) {
        let acc = T::from_f64_lossy(1.0 / self.acc_scale);
        let dp = T::from_f64_lossy(1.0 / self.dp_scale);
        let (m, s) = (T::from_f64_lossy(self.py_mean), T::from_f64_lossy(self.py_scale));
        for f in data.chunks_exact_mut(FEATURES) {
            for v in &mut f[ACC..ACC + ACC_LEN] {
                *v *= acc;
            }
            f[DP] *= dp;
            f[DP + 1] *= dp;
            f[PY] = (f[PY] - m) / s;
        }
    }

    pub fn denormalize<T: Scalar>(&self, data: &mut [T]) {
        let acc = T::from_f64_lossy(self.acc_scale);
        let dp = T::from_f64_lossy(self.dp_scale);
        let (m, s) = (T::from_f64_lossy(self.py_mean), T::from_f64_lossy(self.py_scale));
        for f in data.chunks_exact_mut(FEATURES) {
            for v in &mut f[ACC..ACC + ACC_LEN] {
                *v *= acc;
            }
            f[DP] *= dp;
            f[DP + 1] *= dp;
            f[PY] = f[PY] * s + m;
        }
    }

    /// Per-channel multiplier from sample space back to physical units.
    pub fn channel_scale(&self, c: usize) -> f64 {
        match c {
            _ if (ACC..ACC + ACC_LEN).contains(&c) => self.acc_scale,
            _ if c == DP || c == DP + 1 => self.dp_scale,
            PY => self.py_scale,
            _ => 1.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.acc_scale, self.dp_scale, self.py_mean, self.py_scale].iter().all(|v| v.is_finite())
            && self.acc_scale > 0.0
            && self.dp_scale > 0.0
            && self.py_scale > 0.0
    }
}
