use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Metrics, MetricsReport, TrialReport, REPORT_VERSION};
use crate::datagen::Trial;
use crate::diffusion::Checkpoint;
use crate::error::{Error, Result};
use crate::features::SensorConfig;
use crate::inference::{outputs_to_motion, reconstruct_trial, SessionConfig};
use crate::kinematics::KinematicTree;
use crate::scalar::Scalar;

/// Metric a sweep ranks configurations by; lower is better for all.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Ga,
    La,
    LegsLa,
    BackLa,
    Jpe,
    Jitter,
    Re2,
    Re5,
    Re10,
}

impl Objective {
    pub const DEFAULT: [Objective; 4] = [Objective::Ga, Objective::LegsLa, Objective::BackLa, Objective::Re10];

    /// Absent values rank last.
    pub fn value(&self, m: &Metrics) -> f64 {
        let v = match self {
            Objective::Ga => Some(m.ga),
            Objective::La => Some(m.la),
            Objective::LegsLa => Some(m.legs_la),
            Objective::BackLa => Some(m.back_la),
            Objective::Jpe => Some(m.jpe),
            // Distance from the ground truth's smoothness, either direction.
            Objective::Jitter => Some((m.jitter - 1.0).abs()),
            Objective::Re2 => m.re2,
            Objective::Re5 => m.re5,
            Objective::Re10 => m.re10,
        };
        v.unwrap_or(f64::INFINITY)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Objective::Ga => "ga",
            Objective::La => "la",
            Objective::LegsLa => "legs_la",
            Objective::BackLa => "back_la",
            Objective::Jpe => "jpe",
            Objective::Jitter => "jitter",
            Objective::Re2 => "re2",
            Objective::Re5 => "re5",
            Objective::Re10 => "re10",
        }
    }
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let all = [
            Objective::Ga,
            Objective::La,
            Objective::LegsLa,
            Objective::BackLa,
            Objective::Jpe,
            Objective::Jitter,
            Objective::Re2,
            Objective::Re5,
            Objective::Re10,
        ];
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let key = match key.as_str() {
            "legsla" => "legs_la".to_string(),
            "backla" => "back_la".to_string(),
            _ => key,
        };
        all.into_iter().find(|o| o.name() == key).ok_or_else(|| Error::contract(format!("unknown objective {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub config: String,
    pub sensors: usize,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub objective: Objective,
    /// Entry indices, best first.
    pub order: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub v: u32,
    pub entries: Vec<SweepEntry>,
    pub rankings: Vec<Ranking>,
}

/// Orders entries by (objective on the aggregate mean, fewer sensors, label).
pub fn rank(entries: &[SweepEntry], objective: Objective) -> Vec<usize> {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&entries[a], &entries[b]);
        objective
            .value(&ea.report.aggregate.mean)
            .total_cmp(&objective.value(&eb.report.aggregate.mean))
            .then(ea.sensors.cmp(&eb.sensors))
            .then_with(|| ea.config.cmp(&eb.config))
            .then(a.cmp(&b))
    });
    order
}

/// Reconstructs every trial under every configuration from a cold start and
/// ranks the configurations. `base` supplies height-independent settings;
/// each trial's own subject height is used.
pub fn sweep_configs<T: Scalar>(
    ckpt: &Checkpoint<T>,
    tree: &KinematicTree,
    trials: &[Trial],
    configs: &[SensorConfig],
    objectives: &[Objective],
    base: &SessionConfig,
) -> Result<SweepResult> {
    if configs.is_empty() || trials.is_empty() {
        return Err(Error::contract("sweep needs at least one configuration and one trial"));
    }
    let mut entries = Vec::with_capacity(configs.len());
    for config in configs {
        let label = config.label(tree);
        let mut reports = Vec::with_capacity(trials.len());
        for trial in trials {
            let metrics = evaluate_trial(ckpt, tree, trial, *config, base)?;
            log::info!("config {label}  trial {}  GA {:.2}", trial.motion.trial_id, metrics.ga);
            reports.push(TrialReport { trial_id: trial.motion.trial_id, config: label.clone(), metrics });
        }
        entries.push(SweepEntry { config: label, sensors: config.num_sensors(), report: MetricsReport::new(reports) });
    }
    let rankings = objectives.iter().map(|&o| Ranking { objective: o, order: rank(&entries, o) }).collect();
    Ok(SweepResult { v: REPORT_VERSION, entries, rankings })
}

/// Reconstruction and metrics of one trial under one configuration.
pub fn evaluate_trial<T: Scalar>(
    ckpt: &Checkpoint<T>,
    tree: &KinematicTree,
    trial: &Trial,
    config: SensorConfig,
    base: &SessionConfig,
) -> Result<Metrics> {
    let session = SessionConfig { sensors: config, height: trial.motion.height, ..base.clone() };
    let out = reconstruct_trial(ckpt, tree, trial, &session)?;
    let rec = outputs_to_motion(&out, trial.motion.height, trial.motion.mass, trial.motion.trial_id);
    compute_metrics(&trial.motion, &rec, tree)
}

impl SweepResult {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(format!("sweep report: {e}")))
    }

    /// Best configuration per objective followed by the full metric table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| objective | best config | #sensors | value |");
        let _ = writeln!(s, "|---|---|---|---|");
        for r in &self.rankings {
            if let Some(&i) = r.order.first() {
                let e = &self.entries[i];
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {:.3} |",
                    r.objective.name(),
                    e.config,
                    e.sensors,
                    r.objective.value(&e.report.aggregate.mean)
                );
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "| config | #sensors | GA | LA | legsLA | backLA | JPE | Jitter | RE2 | RE10 |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|");
        for e in &self.entries {
            let m = &e.report.aggregate.mean;
            let o = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "| {} | {} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.3} | {} | {} |",
                e.config,
                e.sensors,
                m.ga,
                m.la,
                m.legs_la,
                m.back_la,
                m.jpe,
                m.jitter,
                o(m.re2),
                o(m.re10)
            );
        }
        s
    }
}
