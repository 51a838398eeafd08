use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FEATURES, WINDOW};
use crate::numerics::{Graph, Tensor, Var};
use crate::scalar::{lit, Scalar};

/// Height condition is fed to its MLP as (h − HEIGHT_CENTER) / HEIGHT_SPREAD.
pub const HEIGHT_CENTER: f64 = 1.75;
pub const HEIGHT_SPREAD: f64 = 0.2;
const LN_EPS: f64 = 1e-5;

/// Layers / model width / feed-forward width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSize {
    pub layers: usize,
    pub width: usize,
    pub ff: usize,
}

impl ModelSize {
    pub const TOY: Self = Self { layers: 2, width: 64, ff: 128 };
    pub const FULL: Self = Self { layers: 8, width: 512, ff: 2048 };

    pub fn new(layers: usize, width: usize, ff: usize) -> Result<Self> {
        let s = Self { layers, width, ff };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.width < 2 || self.width % 2 != 0 || self.ff == 0 {
            return Err(Error::contract(format!(
                "model size {self}: need L ≥ 1, even d ≥ 2, f ≥ 1"
            )));
        }
        Ok(())
    }

    /// One head per 16 channels, at most 8.
    pub fn heads(&self) -> usize {
        let h = (self.width / 16).clamp(1, 8);
        if self.width % h == 0 {
            h
        } else {
            1
        }
    }
}

impl fmt::Display for ModelSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.layers, self.width, self.ff)
    }
}

impl FromStr for ModelSize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => return Ok(Self::TOY),
            "full" => return Ok(Self::FULL),
            _ => {}
        }
        let parts: Vec<&str> = s.split('/').collect();
        let parse = |p: &str| p.trim().parse::<usize>().map_err(|_| Error::contract(format!("bad model size '{s}'")));
        match parts.as_slice() {
            [l, d, f] => Self::new(parse(l)?, parse(d)?, parse(f)?),
            _ => Err(Error::contract(format!("model size '{s}' is not L/d/f"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    /// Normal with std 1/√fan_in.
    Weight(usize),
    Zero,
    One,
}

/// Name, shape and initializer of every tensor, in checkpoint order.
#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

fn spec(name: impl Into<String>, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec { name: name.into(), shape: shape.to_vec(), init }
}

fn linear_specs(out: &mut Vec<ParamSpec>, name: &str, fan_in: usize, fan_out: usize) {
    out.push(spec(format!("{name}.w"), &[fan_in, fan_out], Init::Weight(fan_in)));
    out.push(spec(format!("{name}.b"), &[fan_out], Init::Zero));
}

fn norm_specs(out: &mut Vec<ParamSpec>, name: &str, d: usize) {
    out.push(spec(format!("{name}.g"), &[d], Init::One));
    out.push(spec(format!("{name}.b"), &[d], Init::Zero));
}

pub fn param_specs(size: &ModelSize) -> Vec<ParamSpec> {
    let (d, f) = (size.width, size.ff);
    let mut s = Vec::new();
    linear_specs(&mut s, "input", FEATURES, d);
    linear_specs(&mut s, "step.fc1", d, d);
    linear_specs(&mut s, "step.fc2", d, d);
    linear_specs(&mut s, "height.fc1", 1, d);
    linear_specs(&mut s, "height.fc2", d, d);
    for l in 0..size.layers {
        norm_specs(&mut s, &format!("layer{l}.norm1"), d);
        linear_specs(&mut s, &format!("layer{l}.self.qkv"), d, 3 * d);
        linear_specs(&mut s, &format!("layer{l}.self.out"), d, d);
        norm_specs(&mut s, &format!("layer{l}.norm2"), d);
        linear_specs(&mut s, &format!("layer{l}.cross.q"), d, d);
        linear_specs(&mut s, &format!("layer{l}.cross.kv"), d, 2 * d);
        linear_specs(&mut s, &format!("layer{l}.cross.out"), d, d);
        norm_specs(&mut s, &format!("layer{l}.norm3"), d);
        linear_specs(&mut s, &format!("layer{l}.ff1"), d, f);
        linear_specs(&mut s, &format!("layer{l}.ff2"), f, d);
    }
    norm_specs(&mut s, "final_norm", d);
    linear_specs(&mut s, "output", d, FEATURES);
    s
}

/// Transformer weights; tensors follow [`param_specs`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams<T> {
    pub size: ModelSize,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> DenoiserParams<T> {
    pub fn init(size: ModelSize, seed: u64) -> Result<Self> {
        size.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = param_specs(&size)
            .into_iter()
            .map(|p| match p.init {
                Init::Zero => Tensor::zeros(p.shape),
                Init::One => Tensor::ones(p.shape),
                Init::Weight(fan_in) => {
                    let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
                    Tensor::from_fn(p.shape, |_| T::from_f64_lossy(normal.sample(&mut rng)))
                }
            })
            .collect();
        Ok(Self { size, tensors })
    }

    /// Total number of scalars; a function of the size only.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> DenoiserParams<U> {
        DenoiserParams { size: self.size, tensors: self.tensors.iter().map(|t| t.cast()).collect() }
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        param_specs(&self.size).iter().position(|p| p.name == name)
    }

    /// Zeroes the last layer of the height MLP, which makes the network
    /// ignore the height condition.
    pub fn zero_height_embedding(&mut self) {
        for name in ["height.fc2.w", "height.fc2.b"] {
            let i = self.index_of(name).expect("height layer exists");
            self.tensors[i] = Tensor::zeros(self.tensors[i].shape().to_vec());
        }
    }

    /// Network output for a batch without recording gradients.
    pub fn denoise(&self, z: &Tensor<T>, steps: &[usize], heights: &[f64]) -> Result<Tensor<T>> {
        if !z.all_finite() {
            return Err(Error::contract("denoiser input contains non-finite values"));
        }
        let mut g = Graph::new();
        let vars: Vec<Var> = self.tensors.iter().map(|t| g.constant(t.clone())).collect();
        let zv = g.constant(z.clone());
        let out = forward(&mut g, &self.size, &vars, zv, steps, heights)?;
        Ok(g.value(out).clone())
    }
}

/// Sinusoidal code of a scalar position/step, `dim` entries: sines then cosines.
pub fn sinusoid<T: Scalar>(pos: f64, dim: usize, out: &mut [T]) {
    let half = dim / 2;
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = T::from_f64_lossy((pos * freq).sin());
        out[half + i] = T::from_f64_lossy((pos * freq).cos());
    }
}

fn position_encoding<T: Scalar>(batch: usize, frames: usize, d: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); batch * frames * d];
    for b in 0..batch {
        for i in 0..frames {
            let o = (b * frames + i) * d;
            sinusoid(i as f64, d, &mut data[o..o + d]);
        }
    }
    Tensor::new([batch * frames, d], data).expect("shape")
}

struct Cursor<'a> {
    vars: &'a [Var],
    at: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Var {
        let v = self.vars[self.at];
        self.at += 1;
        v
    }

    fn pair(&mut self) -> (Var, Var) {
        let a = self.next();
        (a, self.next())
    }
}

fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, p: (Var, Var)) -> Result<Var> {
    g.linear(x, p.0, p.1)
}

fn norm<T: Scalar>(g: &mut Graph<T>, x: Var, p: (Var, Var)) -> Result<Var> {
    g.layer_norm(x, p.0, p.1, lit(LN_EPS))
}

fn mlp<T: Scalar>(g: &mut Graph<T>, x: Var, c: &mut Cursor) -> Result<Var> {
    let h = linear(g, x, c.pair())?;
    let h = g.gelu(h);
    linear(g, h, c.pair())
}

/// Records the denoiser on `g`. `z` is `[batch·frames, 190]` with one step and
/// one height per batch element; `params` are graph leaves in `param_specs` order.
/// Returns the predicted clean sample with the same shape as `z`.
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    size: &ModelSize,
    params: &[Var],
    z: Var,
    steps: &[usize],
    heights: &[f64],
) -> Result<Var> {
    let expected = param_specs(size).len();
    if params.len() != expected {
        return Err(Error::contract(format!("denoiser expects {expected} tensors, got {}", params.len())));
    }
    let batch = steps.len();
    if batch == 0 || heights.len() != batch {
        return Err(Error::contract("one step and one height per batch element required"));
    }
    if heights.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(Error::contract("heights must be positive and finite"));
    }
    let (rows, cols) = g.value(z).dims2("denoiser input")?;
    if cols != FEATURES || rows % batch != 0 {
        return Err(Error::Dimension { op: "denoiser input", lhs: vec![rows, cols], rhs: vec![batch * WINDOW, FEATURES] });
    }
    let frames = rows / batch;
    let d = size.width;
    let heads = size.heads();
    let tokens = frames + 2;
    let mut c = Cursor { vars: params, at: 0 };

    let x = linear(g, z, c.pair())?;
    let pe = g.constant(position_encoding(batch, frames, d));
    let x = g.add(x, pe)?;

    let mut codes = vec![T::zero(); batch * d];
    for (b, &t) in steps.iter().enumerate() {
        sinusoid(t as f64, d, &mut codes[b * d..(b + 1) * d]);
    }
    let codes = g.constant(Tensor::new([batch, d], codes)?);
    let step_tok = mlp(g, codes, &mut c)?;
    let hin: Vec<T> = heights.iter().map(|h| T::from_f64_lossy((h - HEIGHT_CENTER) / HEIGHT_SPREAD)).collect();
    let hin = g.constant(Tensor::new([batch, 1], hin)?);
    let height_tok = mlp(g, hin, &mut c)?;

    let mut index = Vec::with_capacity(batch * tokens);
    for b in 0..batch {
        index.extend((0..frames).map(|i| (0, b * frames + i)));
        index.push((1, b));
        index.push((2, b));
    }
    let mut h = g.gather_rows(&[x, step_tok, height_tok], index)?;
    let memory = g.gather_rows(&[step_tok, height_tok], (0..batch).flat_map(|b| [(0, b), (1, b)]).collect())?;

    for _ in 0..size.layers {
        let n1 = c.pair();
        let qkv_p = c.pair();
        let so = c.pair();
        let a = norm(g, h, n1)?;
        let qkv = linear(g, a, qkv_p)?;
        let q = g.slice_cols(qkv, 0, d)?;
        let k = g.slice_cols(qkv, d, d)?;
        let v = g.slice_cols(qkv, 2 * d, d)?;
        let att = g.attention(q, k, v, batch, heads, None)?;
        let att = linear(g, att, so)?;
        h = g.add(h, att)?;

        let n2 = c.pair();
        let cq = c.pair();
        let ckv = c.pair();
        let co = c.pair();
        let a = norm(g, h, n2)?;
        let q = linear(g, a, cq)?;
        let kv = linear(g, memory, ckv)?;
        let k = g.slice_cols(kv, 0, d)?;
        let v = g.slice_cols(kv, d, d)?;
        let att = g.attention(q, k, v, batch, heads, None)?;
        let att = linear(g, att, co)?;
        h = g.add(h, att)?;

        let n3 = c.pair();
        let f1 = c.pair();
        let f2 = c.pair();
        let a = norm(g, h, n3)?;
        let a = linear(g, a, f1)?;
        let a = g.gelu(a);
        let a = linear(g, a, f2)?;
        h = g.add(h, a)?;
    }

    let frame_rows = (0..batch).flat_map(|b| (0..frames).map(move |i| (0, b * tokens + i))).collect();
    let h = g.gather_rows(&[h], frame_rows)?;
    let fin = c.pair();
    let h = norm(g, h, fin)?;
    let out = linear(g, h, c.pair())?;
    debug_assert_eq!(c.at, params.len());
    Ok(out)
}
