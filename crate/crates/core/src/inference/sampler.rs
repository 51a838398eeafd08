use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::spread::StepSpread;
use crate::diffusion::{DenoiserParams, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::features::{FeatureMask, FEATURES, WINDOW};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// How consecutive spread entries are chained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Renoise the last edited estimate at every step, predict, edit.
    #[default]
    Renoise,
    /// Deterministic DDIM update between spread entries, known channels
    /// re-injected at the matching noise level.
    Ddim,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "renoise" => Ok(Self::Renoise),
            "ddim" => Ok(Self::Ddim),
            _ => Err(Error::contract(format!("unknown sampler {s:?} (renoise, ddim)"))),
        }
    }
}

fn select<T: Scalar>(mask: &[bool], known: &[T], generated: &mut [T]) {
    for ((g, &k), &m) in generated.iter_mut().zip(known).zip(mask) {
        if m {
            *g = k;
        }
    }
}

fn predict<T: Scalar>(params: &DenoiserParams<T>, z: &Tensor<T>, t: usize, height: f64) -> Result<Tensor<T>> {
    let x0 = params
        .denoise(z, &[t], &[height])
        .map_err(|e| Error::NonFinite(format!("denoiser input at step {t}: {e}")))?;
    if !x0.all_finite() {
        return Err(Error::NonFinite(format!("denoiser output at step {t}")));
    }
    Ok(x0)
}

/// Inpainting sampler over a `[61, 190]` sample-space window. Channels set in
/// `mask` are copied from `x_input` after every prediction, so they leave
/// bit-exactly as they came in.
#[allow(clippy::too_many_arguments)]
pub fn inpaint_denoise<T: Scalar>(
    params: &DenoiserParams<T>,
    schedule: &DiffusionSchedule,
    x_input: &Tensor<T>,
    mask: &FeatureMask,
    height: f64,
    spread: &StepSpread,
    kind: SamplerKind,
    rng: &mut impl Rng,
) -> Result<Tensor<T>> {
    if x_input.shape() != [WINDOW, FEATURES] || mask.bits.len() != WINDOW * FEATURES {
        return Err(Error::Dimension { op: "inpaint_denoise", lhs: x_input.shape().to_vec(), rhs: vec![WINDOW, FEATURES] });
    }
    spread.check(schedule.steps)?;
    let known = x_input.data();
    match kind {
        SamplerKind::Renoise => {
            let mut x = x_input.clone();
            for &t in spread.steps() {
                let z = schedule.noise(&x, t, rng)?;
                let mut x0 = predict(params, &z, t, height)?;
                select(&mask.bits, known, x0.data_mut());
                x = x0;
            }
            Ok(x)
        }
        SamplerKind::Ddim => {
            let steps = spread.steps();
            let mut z = schedule.noise(x_input, steps[0], rng)?;
            let mut x0 = x_input.clone();
            for (i, &t) in steps.iter().enumerate() {
                x0 = predict(params, &z, t, height)?;
                select(&mask.bits, known, x0.data_mut());
                let Some(&next) = steps.get(i + 1) else { break };
                let (a, an) = (schedule.alpha_bar(t), schedule.alpha_bar(next));
                let (sa, sn) = (a.sqrt(), (1.0 - a).max(0.0).sqrt());
                let (san, snn) = (T::from_f64_lossy(an.sqrt()), T::from_f64_lossy((1.0 - an).max(0.0).sqrt()));
                let zd = z.data_mut();
                for (j, zv) in zd.iter_mut().enumerate() {
                    // At ᾱ ≈ 1 the implied noise is undefined; draw it fresh.
                    let eps = if sn < 1e-6 {
                        T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal))
                    } else {
                        (*zv - T::from_f64_lossy(sa) * x0.data()[j]) / T::from_f64_lossy(sn)
                    };
                    *zv = san * x0.data()[j] + snn * eps;
                }
                if !z.all_finite() {
                    return Err(Error::NonFinite(format!("DDIM update at step {t}")));
                }
            }
            Ok(x0)
        }
    }
}
