use serde::{Deserialize, Serialize};

use crate::diffusion::Checkpoint;
use crate::error::{Error, Result};
use crate::features::Measurement;
use crate::inference::{Reconstructor, SessionConfig};
use crate::kinematics::KinematicTree;
use crate::scalar::Scalar;

/// Overrides the per-frame p95 budget (milliseconds) on slower machines.
pub const BENCH_BUDGET_ENV: &str = "SPARSEMO_BENCH_P95_MS";
pub const DEFAULT_BUDGET_MS: f64 = 50.0;

pub fn p95_budget_ms() -> f64 {
    std::env::var(BENCH_BUDGET_ENV).ok().and_then(|v| v.parse().ok()).unwrap_or(DEFAULT_BUDGET_MS)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub size: String,
    pub spread: String,
    pub spread_len: usize,
    pub frames: usize,
    pub warmup: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

/// Nearest-rank percentile of an ascending list.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Per-frame wall time of [`Reconstructor::step`] over `measurements`
/// (cycled), after a short warm-up that is not counted.
pub fn bench<T: Scalar>(
    ckpt: &Checkpoint<T>,
    tree: &KinematicTree,
    session: &SessionConfig,
    measurements: &[Measurement],
    frames: usize,
) -> Result<BenchReport> {
    if measurements.is_empty() || frames == 0 {
        return Err(Error::contract("bench needs measurements and ≥ 1 frame"));
    }
    let warmup = (frames / 10).min(5);
    let mut r = Reconstructor::new(ckpt.clone(), tree, session.clone())?;
    for i in 0..frames + warmup {
        r.step(&measurements[i % measurements.len()], i as f64 * 50.0)?;
    }
    let mut lat = r.latencies_ms[warmup..].to_vec();
    lat.sort_by(f64::total_cmp);
    Ok(BenchReport {
        size: ckpt.params.size.to_string(),
        spread: session.spread.to_string(),
        spread_len: session.spread.len(),
        frames,
        warmup,
        p50_ms: percentile(&lat, 50.0),
        p95_ms: percentile(&lat, 95.0),
        mean_ms: lat.iter().sum::<f64>() / lat.len() as f64,
        max_ms: *lat.last().expect("frames ≥ 1"),
    })
}
