use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Normalizer, CONTACT, DP, FEATURES, ORI, ORI_LEN, PY};
use crate::kinematics::{KinematicTree, NUM_CONTACTS, NUM_SEGMENTS};
use crate::numerics::{Graph, PointPlan, Tensor, Var};
use crate::scalar::Scalar;

/// Values of the five training terms for one batch (batch mean of per-window sums).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub simple: f64,
    pub vel: f64,
    pub fk: f64,
    pub drift: f64,
    pub slide: f64,
    /// Weighted sum; with unit weights exactly the sum of the five terms.
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.simple, self.vel, self.fk, self.drift, self.slide, self.total].iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub simple: f64,
    pub vel: f64,
    pub fk: f64,
    pub drift: f64,
    pub slide: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { simple: 1.0, vel: 1.0, fk: 1.0, drift: 1.0, slide: 1.0 }
    }
}

/// Everything the loss needs besides prediction and target.
#[derive(Clone, Debug)]
pub struct LossContext<T> {
    joints: Arc<PointPlan<T>>,
    contacts: Arc<PointPlan<T>>,
    reference_height: f64,
    pub normalizer: Normalizer,
    pub weights: LossWeights,
}

/// Graph handles of the individual terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub simple: Var,
    pub vel: Var,
    pub fk: Var,
    pub drift: Var,
    pub slide: Var,
    pub total: Var,
}

impl<T: Scalar> LossContext<T> {
    pub fn new(tree: &KinematicTree, normalizer: Normalizer, weights: LossWeights) -> Self {
        Self {
            joints: tree.joint_plan(),
            contacts: tree.contact_plan(),
            reference_height: tree.reference_height,
            normalizer,
            weights,
        }
    }

    fn row_scale(&self, heights: &[f64], frames: usize) -> Tensor<T> {
        let data = heights
            .iter()
            .flat_map(|h| std::iter::repeat(T::from_f64_lossy(h / self.reference_height)).take(frames))
            .collect::<Vec<_>>();
        let n = data.len();
        Tensor::new([n, 1], data).expect("shape")
    }

    /// Root-relative points of a `[rows, 144]` orientation block, scaled per row.
    fn points(&self, g: &mut Graph<T>, r6: Var, plan: &Arc<PointPlan<T>>, scale: Var) -> Result<Var> {
        let rows = g.value(r6).shape()[0];
        let r = g.reshape(r6, [rows * NUM_SEGMENTS, 6])?;
        let m = g.rot6d_to_matrix(r)?;
        let m = g.reshape(m, [rows, NUM_SEGMENTS * 9])?;
        let p = g.points(m, plan.clone())?;
        g.mul(p, scale)
    }

    /// Records all terms for `pred` against `target`, both `[batch·frames, 190]`
    /// in sample space, with one subject height per batch element.
    pub fn record(&self, g: &mut Graph<T>, pred: Var, target: &Tensor<T>, heights: &[f64]) -> Result<LossVars> {
        let (rows, cols) = g.value(pred).dims2("loss")?;
        if target.shape() != [rows, cols] || cols != FEATURES {
            return Err(Error::Dimension { op: "loss", lhs: vec![rows, cols], rhs: target.shape().to_vec() });
        }
        let batch = heights.len();
        if batch == 0 || rows % batch != 0 || rows / batch < 2 {
            return Err(Error::contract("loss needs ≥ 2 frames per batch element"));
        }
        let frames = rows / batch;
        let inv_b = T::from_f64_lossy(1.0 / batch as f64);
        let tgt = g.constant(target.clone());
        let scale = g.constant(self.row_scale(heights, frames));

        let diff = g.sub(pred, tgt)?;
        let sq = g.square(diff);
        let s = g.sum(sq);
        let simple = g.scale(s, inv_b);

        let prev: Vec<(usize, usize)> =
            (0..batch).flat_map(|b| (0..frames - 1).map(move |i| (0, b * frames + i))).collect();
        let next: Vec<(usize, usize)> = prev.iter().map(|&(s, r)| (s, r + 1)).collect();

        let r_hat = g.slice_cols(pred, ORI, ORI_LEN)?;
        let r_true = g.slice_cols(tgt, ORI, ORI_LEN)?;
        let vel = {
            let dr = g.sub(r_hat, r_true)?;
            let n = g.gather_rows(&[dr], next.clone())?;
            let p = g.gather_rows(&[dr], prev.clone())?;
            let d = g.sub(n, p)?;
            let sq = g.square(d);
            let s = g.sum(sq);
            g.scale(s, inv_b)
        };

        let fk = {
            let jp = self.points(g, r_hat, &self.joints, scale)?;
            let jt = self.points(g, r_true, &self.joints, scale)?;
            let d = g.sub(jp, jt)?;
            let sq = g.square(d);
            let s = g.sum(sq);
            g.scale(s, inv_b)
        };

        let dp_scale = T::from_f64_lossy(self.normalizer.dp_scale);
        let drift = {
            let e = g.sub(pred, tgt)?;
            let e = g.gather_cols(e, vec![DP, DP + 1])?;
            let e = g.scale(e, dp_scale);
            let mut acc: Option<Var> = None;
            for b in 0..batch {
                let part = g.slice_rows(e, b * frames, frames)?;
                let cum = g.cumsum_rows(part)?;
                let sq = g.square(cum);
                let s = g.sum(sq);
                acc = Some(match acc {
                    Some(a) => g.add(a, s)?,
                    None => s,
                });
            }
            g.scale(acc.expect("batch ≥ 1"), inv_b)
        };

        let slide = {
            let c = self.points(g, r_hat, &self.contacts, scale)?;
            let cn = g.gather_rows(&[c], next.clone())?;
            let cp = g.gather_rows(&[c], prev.clone())?;
            let foot = g.sub(cn, cp)?;
            // Root displacement in world units: (Δp_x of the later frame, p_y change, Δp_z).
            let root = g.gather_cols(pred, vec![DP, PY, DP + 1])?;
            let units = g.constant(Tensor::new(
                [3],
                [self.normalizer.dp_scale, self.normalizer.py_scale, self.normalizer.dp_scale]
                    .map(T::from_f64_lossy)
                    .to_vec(),
            )?);
            let root = g.mul(root, units)?;
            let rn = g.gather_rows(&[root], next)?;
            let rp = g.gather_rows(&[root], prev.clone())?;
            let only_y = g.constant(Tensor::new([3], vec![T::zero(), T::one(), T::zero()])?);
            let rp = g.mul(rp, only_y)?;
            let rd = g.sub(rn, rp)?;
            let rd = g.gather_cols(rd, (0..NUM_CONTACTS).flat_map(|_| 0..3).collect())?;
            let world = g.add(foot, rd)?;
            let gate_cols = (0..NUM_CONTACTS).flat_map(|k| std::iter::repeat(CONTACT + k).take(3)).collect();
            let gate = g.gather_cols(pred, gate_cols)?;
            let gate = g.gather_rows(&[gate], prev)?;
            let gated = g.mul(world, gate)?;
            let sq = g.square(gated);
            let s = g.sum(sq);
            g.scale(s, inv_b)
        };

        let w = &self.weights;
        let terms = [(simple, w.simple), (vel, w.vel), (fk, w.fk), (drift, w.drift), (slide, w.slide)];
        let mut total = None;
        for (v, wt) in terms {
            let v = if wt == 1.0 { v } else { g.scale(v, T::from_f64_lossy(wt)) };
            total = Some(match total {
                Some(t) => g.add(t, v)?,
                None => v,
            });
        }
        Ok(LossVars { simple, vel, fk, drift, slide, total: total.expect("five terms") })
    }

    /// Plain evaluation without gradients.
    pub fn evaluate(&self, pred: &Tensor<T>, target: &Tensor<T>, heights: &[f64]) -> Result<LossBreakdown> {
        let mut g = Graph::new();
        let p = g.constant(pred.clone());
        let v = self.record(&mut g, p, target, heights)?;
        Ok(breakdown(&g, &v))
    }
}

pub fn breakdown<T: Scalar>(g: &Graph<T>, v: &LossVars) -> LossBreakdown {
    let f = |x: Var| g.value(x).data()[0].to_f64_lossy();
    LossBreakdown {
        simple: f(v.simple),
        vel: f(v.vel),
        fk: f(v.fk),
        drift: f(v.drift),
        slide: f(v.slide),
        total: f(v.total),
    }
}
