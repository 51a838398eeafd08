//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only arena of nodes. Every op evaluates eagerly and
//! records its inputs, so node indices are already a topological order and the
//! backward pass is a single reverse sweep.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::tensor::{gemm_into, Tensor};
use crate::scalar::{lit, Scalar};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sum of `G[segment] · vector` terms per output point. Each term maps a
/// row-major 3×3 rotation block of the input to a 3-vector contribution.
#[derive(Clone, Debug)]
pub struct PointPlan<T> {
    pub segments: usize,
    pub points: Vec<Vec<(usize, [T; 3])>>,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Gelu(Var),
    Relu(Var),
    MatMul(Var, Var),
    Linear(Var, Var, Var),
    Sum(Var),
    SumLast(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
        probs: Vec<T>,
    },
    GatherRows {
        sources: Vec<Var>,
        index: Vec<(usize, usize)>,
    },
    GatherCols {
        x: Var,
        cols: Vec<usize>,
    },
    Reshape(Var),
    Rot6d(Var),
    Points {
        g: Var,
        plan: Arc<PointPlan<T>>,
    },
    CumsumRows(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sqrt(_) => "sqrt",
            Op::Square(_) => "square",
            Op::Gelu(_) => "gelu",
            Op::Relu(_) => "relu",
            Op::MatMul(..) => "matmul",
            Op::Linear(..) => "linear",
            Op::Sum(_) => "sum",
            Op::SumLast(_) => "sum_last",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Attention { .. } => "attention",
            Op::GatherRows { .. } => "gather_rows",
            Op::GatherCols { .. } => "gather_cols",
            Op::Reshape(_) => "reshape",
            Op::Rot6d(_) => "rot6d",
            Op::Points { .. } => "points",
            Op::CumsumRows(_) => "cumsum_rows",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording arena for one forward/backward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    non_finite: Option<(usize, &'static str)>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.0].clone()))
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Broadcast two shapes, aligned on trailing dimensions.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out`, the flat index of the broadcast operand.
fn broadcast_map(out: &[usize], operand: &[usize]) -> Vec<usize> {
    let n: usize = out.iter().product();
    let m: usize = operand.iter().product();
    if out == operand {
        return (0..n).collect();
    }
    let rank = out.len();
    let offset = rank - operand.len();
    // Operand equal to a trailing slice of the output: plain modulo.
    if operand == &out[offset..] {
        return (0..n).map(|i| i % m.max(1)).collect();
    }
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..operand.len()).rev() {
        strides[i + offset] = if operand[i] == 1 { 0 } else { acc };
        acc *= operand[i];
    }
    let mut idx = vec![0usize; rank];
    let mut map = Vec::with_capacity(n);
    for _ in 0..n {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

// One exp instead of libm tanh; saturates correctly at ±inf.
fn tanh_exp<T: Scalar>(u: T) -> T {
    let two: T = lit(2.0);
    T::one() - two / ((two * u).exp() + T::one())
}

fn gelu<T: Scalar>(x: T) -> T {
    let c: T = lit(0.797_884_560_802_865_4);
    let k: T = lit(0.044715);
    let half: T = lit(0.5);
    half * x * (T::one() + tanh_exp(c * (x + k * x * x * x)))
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c: T = lit(0.797_884_560_802_865_4);
    let k: T = lit(0.044715);
    let half: T = lit(0.5);
    let three: T = lit(3.0);
    let th = tanh_exp(c * (x + k * x * x * x));
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + three * k * x * x)
}

type V3<T> = [T; 3];

fn dot3<T: Scalar>(a: V3<T>, b: V3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3<T: Scalar>(a: V3<T>, b: V3<T>) -> V3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn axpy3<T: Scalar>(y: V3<T>, alpha: T, x: V3<T>) -> V3<T> {
    [y[0] + alpha * x[0], y[1] + alpha * x[1], y[2] + alpha * x[2]]
}

fn scale3<T: Scalar>(a: V3<T>, s: T) -> V3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Gram-Schmidt of the two 3-vectors in `six`, returning (b1, b2, b3, |a1|, |u|).
pub(crate) fn gram_schmidt<T: Scalar>(six: &[T]) -> (V3<T>, V3<T>, V3<T>, T, T) {
    let a1 = [six[0], six[1], six[2]];
    let a2 = [six[3], six[4], six[5]];
    let n1 = dot3(a1, a1).sqrt();
    let b1 = scale3(a1, T::one() / n1);
    let u = axpy3(a2, -dot3(b1, a2), b1);
    let n2 = dot3(u, u).sqrt();
    let b2 = scale3(u, T::one() / n2);
    let b3 = cross3(b1, b2);
    (b1, b2, b3, n1, n2)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// First node (index, op name) whose value contained NaN or ±Inf.
    pub fn non_finite(&self) -> Option<(usize, &'static str)> {
        self.non_finite
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        if self.non_finite.is_none() && !value.all_finite() {
            self.non_finite = Some((idx, op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(idx)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, bool)> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let shape = broadcast_shape(sa, sb).ok_or_else(|| Error::Dimension {
            op: name,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data: Vec<T> = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else if shape == sa && !db.is_empty() && sb == &sa[sa.len() - sb.len()..] {
            let mut out = da.to_vec();
            for row in out.chunks_exact_mut(db.len()) {
                for (x, &y) in row.iter_mut().zip(db) {
                    *x = f(*x, y);
                }
            }
            out
        } else if shape == sa && sa.len() == 2 && sb == [sa[0], 1] {
            let mut out = da.to_vec();
            if sa[1] > 0 {
                for (row, &y) in out.chunks_exact_mut(sa[1]).zip(db) {
                    for x in row {
                        *x = f(*x, y);
                    }
                }
            }
            out
        } else {
            let ma = broadcast_map(&shape, sa);
            let mb = broadcast_map(&shape, sb);
            ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect()
        };
        let rg = self.rg(a) || self.rg(b);
        Ok((Tensor::new(shape, data)?, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Division by zero yields ±Inf/NaN and is reported by [`Graph::non_finite`].
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b), rg))
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let t = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, Op::Scale(a, s), move |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, Op::AddScalar(a), move |x| x + s)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), |x| x.sqrt())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Gelu(a), gelu)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm_into(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(x).dims2("linear")?;
        let (k2, n) = self.value(w).dims2("linear")?;
        if k != k2 || self.value(b).len() != n {
            return Err(Error::Dimension {
                op: "linear",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(w).shape().to_vec(),
            });
        }
        let bias = self.value(b).data();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bias);
        }
        gemm_into(m, k, n, self.value(x).data(), false, self.value(w).data(), false, &mut out, true);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::Linear(x, w, b), rg))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, T::one() / lit::<T>(n as f64))
    }

    /// Sum over the last dimension, keeping it with size 1.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let n = *shape.last().ok_or_else(|| Error::Dimension {
            op: "sum_last",
            lhs: shape.clone(),
            rhs: vec![],
        })?;
        let data: Vec<T> = self
            .value(a)
            .data()
            .chunks(n.max(1))
            .map(|row| row.iter().fold(T::zero(), |s, &v| s + v))
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = 1;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::SumLast(a), rg))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let n = *shape.last().ok_or_else(|| Error::Dimension {
            op: "softmax",
            lhs: shape.clone(),
            rhs: vec![],
        })?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Softmax(a), rg))
    }

    /// Row-wise layer normalization of a 2-D tensor with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (m, n) = self.value(x).dims2("layer_norm")?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(gain).shape().to_vec(),
            });
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let inv_n = T::one() / lit::<T>(n as f64);
        let mut normed = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) * inv_n;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) * inv_n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                normed[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        let t = Tensor::new([m, n], out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is `[batch·tq, d]`, `k` and `v` are `[batch·tk, d]`; rows of each
    /// batch element attend only within that element. `mask` is an optional
    /// additive `[tq, tk]` term shared by all batch elements and heads.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let (rq, d) = self.value(q).dims2("attention")?;
        let (rk, dk) = self.value(k).dims2("attention")?;
        let (rv, dv) = self.value(v).dims2("attention")?;
        let dim_err = || Error::Dimension {
            op: "attention",
            lhs: vec![rq, d],
            rhs: vec![rk, dk, rv, dv],
        };
        if d == 0 || heads == 0 || d % heads != 0 || dk != d || dv != d || rk != rv || batch == 0 {
            return Err(dim_err());
        }
        if rq % batch != 0 || rk % batch != 0 {
            return Err(dim_err());
        }
        let (tq, tk) = (rq / batch, rk / batch);
        if let Some(m) = mask {
            if m.shape() != [tq, tk] {
                return Err(Error::Dimension {
                    op: "attention mask",
                    lhs: vec![tq, tk],
                    rhs: m.shape().to_vec(),
                });
            }
        }
        let dh = d / heads;
        let scale = T::one() / lit::<T>(dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); batch * heads * tq * tk];
        let mut out = vec![T::zero(); rq * d];
        for b in 0..batch {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * tq * tk..(b * heads + h + 1) * tq * tk];
                // SAFETY: all views stay inside the q/k/v/out buffers.
                unsafe {
                    T::gemm(
                        tq,
                        dh,
                        tk,
                        scale,
                        qd.as_ptr().add(b * tq * d + h * dh),
                        d as isize,
                        1,
                        kd.as_ptr().add(b * tk * d + h * dh),
                        1,
                        d as isize,
                        T::zero(),
                        p.as_mut_ptr(),
                        tk as isize,
                        1,
                    );
                }
                if let Some(m) = mask {
                    for (pi, &mi) in p.iter_mut().zip(m.data()) {
                        *pi += mi;
                    }
                }
                for row in p.chunks_mut(tk) {
                    softmax_in_place(row);
                }
                unsafe {
                    T::gemm(
                        tq,
                        tk,
                        dh,
                        T::one(),
                        p.as_ptr(),
                        tk as isize,
                        1,
                        vd.as_ptr().add(b * tk * d + h * dh),
                        d as isize,
                        1,
                        T::zero(),
                        out.as_mut_ptr().add(b * tq * d + h * dh),
                        d as isize,
                        1,
                    );
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let t = Tensor::new([rq, d], out)?;
        Ok(self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                batch,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Attention probabilities saved by an attention node, `[batch, heads, tq, tk]` flattened.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Rows picked from 2-D sources: `index[i] = (source, row)` becomes output row `i`.
    pub fn gather_rows(&mut self, sources: &[Var], index: Vec<(usize, usize)>) -> Result<Var> {
        let first = *sources.first().ok_or_else(|| Error::contract("gather_rows needs a source"))?;
        let (_, cols) = self.value(first).dims2("gather_rows")?;
        for &s in sources {
            let (_, c) = self.value(s).dims2("gather_rows")?;
            if c != cols {
                return Err(Error::Dimension {
                    op: "gather_rows",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: self.value(s).shape().to_vec(),
                });
            }
        }
        let mut data = Vec::with_capacity(index.len() * cols);
        for &(s, r) in &index {
            let src = self.value(*sources.get(s).ok_or_else(|| Error::contract("gather_rows source index"))?);
            let rows = src.shape()[0];
            if r >= rows {
                return Err(Error::contract(format!("gather_rows row {r} out of {rows}")));
            }
            data.extend_from_slice(&src.data()[r * cols..(r + 1) * cols]);
        }
        let rg = sources.iter().any(|&s| self.rg(s));
        let t = Tensor::new([index.len(), cols], data)?;
        Ok(self.push(
            t,
            Op::GatherRows {
                sources: sources.to_vec(),
                index,
            },
            rg,
        ))
    }

    /// Contiguous row range of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.gather_rows(&[x], (start..start + len).map(|r| (0, r)).collect())
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mut index = Vec::new();
        for (i, &p) in parts.iter().enumerate() {
            let (rows, _) = self.value(p).dims2("concat_rows")?;
            index.extend((0..rows).map(|r| (i, r)));
        }
        self.gather_rows(parts, index)
    }

    /// Columns of a 2-D tensor, in the given order (repeats allowed).
    pub fn gather_cols(&mut self, x: Var, cols: Vec<usize>) -> Result<Var> {
        let (m, n) = self.value(x).dims2("gather_cols")?;
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(Error::contract(format!("gather_cols column {bad} out of {n}")));
        }
        let xs = self.value(x).data();
        let mut data = Vec::with_capacity(m * cols.len());
        for r in 0..m {
            data.extend(cols.iter().map(|&c| xs[r * n + c]));
        }
        let rg = self.rg(x);
        let t = Tensor::new([m, cols.len()], data)?;
        Ok(self.push(t, Op::GatherCols { x, cols }, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.gather_cols(x, (start..start + len).collect())
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// `[m, 6]` continuous rotation encodings to `[m, 9]` row-major rotation matrices.
    pub fn rot6d_to_matrix(&mut self, x: Var) -> Result<Var> {
        let (m, c) = self.value(x).dims2("rot6d")?;
        if c != 6 {
            return Err(Error::Dimension {
                op: "rot6d",
                lhs: vec![m, c],
                rhs: vec![m, 6],
            });
        }
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); m * 9];
        for r in 0..m {
            let (b1, b2, b3, _, _) = gram_schmidt(&xs[r * 6..r * 6 + 6]);
            let o = &mut out[r * 9..r * 9 + 9];
            for i in 0..3 {
                o[i * 3] = b1[i];
                o[i * 3 + 1] = b2[i];
                o[i * 3 + 2] = b3[i];
            }
        }
        let rg = self.rg(x);
        let t = Tensor::new([m, 9], out)?;
        Ok(self.push(t, Op::Rot6d(x), rg))
    }

    /// Points that are linear in per-segment rotations. `g` is `[frames, segments·9]`,
    /// the result is `[frames, points·3]`.
    pub fn points(&mut self, g: Var, plan: Arc<PointPlan<T>>) -> Result<Var> {
        let (f, c) = self.value(g).dims2("points")?;
        if c != plan.segments * 9 {
            return Err(Error::Dimension {
                op: "points",
                lhs: vec![f, c],
                rhs: vec![f, plan.segments * 9],
            });
        }
        let p = plan.points.len();
        let gs = self.value(g).data();
        let mut out = vec![T::zero(); f * p * 3];
        for fr in 0..f {
            let row = &gs[fr * c..(fr + 1) * c];
            for (pi, terms) in plan.points.iter().enumerate() {
                let o = &mut out[(fr * p + pi) * 3..(fr * p + pi) * 3 + 3];
                for &(s, v) in terms {
                    let r = &row[s * 9..s * 9 + 9];
                    for i in 0..3 {
                        o[i] += r[i * 3] * v[0] + r[i * 3 + 1] * v[1] + r[i * 3 + 2] * v[2];
                    }
                }
            }
        }
        let rg = self.rg(g);
        let t = Tensor::new([f, p * 3], out)?;
        Ok(self.push(t, Op::Points { g, plan }, rg))
    }

    /// Running sum down the rows of a 2-D tensor.
    pub fn cumsum_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2("cumsum_rows")?;
        let mut data = self.value(x).data().to_vec();
        for r in 1..m {
            for c in 0..n {
                let prev = data[(r - 1) * n + c];
                data[r * n + c] += prev;
            }
        }
        let rg = self.rg(x);
        let t = Tensor::new([m, n], data)?;
        Ok(self.push(t, Op::CumsumRows(x), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn accumulate_broadcast(&self, grads: &mut [Option<Vec<T>>], v: Var, out_shape: &[usize], contrib: impl Fn(usize) -> T) {
        let shape = self.value(v).shape().to_vec();
        self.accumulate(grads, v, |slot| {
            if shape == out_shape {
                for (i, s) in slot.iter_mut().enumerate() {
                    *s += contrib(i);
                }
            } else if !slot.is_empty() && shape.len() <= out_shape.len() && shape == out_shape[out_shape.len() - shape.len()..] {
                let m = slot.len();
                let n: usize = out_shape.iter().product();
                for i in 0..n {
                    slot[i % m] += contrib(i);
                }
            } else if out_shape.len() == 2 && shape == [out_shape[0], 1] {
                let cols = out_shape[1];
                for i in 0..out_shape[0] * cols {
                    slot[i / cols] += contrib(i);
                }
            } else {
                for (i, j) in broadcast_map(out_shape, &shape).into_iter().enumerate() {
                    slot[j] += contrib(i);
                }
            }
        });
    }

    fn operand_at(&self, v: Var, out_shape: &[usize]) -> Vec<T> {
        let t = self.value(v);
        if t.shape() == out_shape {
            t.data().to_vec()
        } else if !t.is_empty() && t.shape().len() <= out_shape.len() && t.shape() == &out_shape[out_shape.len() - t.shape().len()..] {
            let n: usize = out_shape.iter().product();
            t.data().iter().copied().cycle().take(n).collect()
        } else {
            broadcast_map(out_shape, t.shape()).into_iter().map(|j| t.data()[j]).collect()
        }
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let shape = out.shape();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate_broadcast(grads, *a, shape, |i| g[i]);
                self.accumulate_broadcast(grads, *b, shape, |i| g[i]);
            }
            Op::Sub(a, b) => {
                self.accumulate_broadcast(grads, *a, shape, |i| g[i]);
                self.accumulate_broadcast(grads, *b, shape, |i| -g[i]);
            }
            Op::Mul(a, b) => {
                let av = self.operand_at(*a, shape);
                let bv = self.operand_at(*b, shape);
                self.accumulate_broadcast(grads, *a, shape, |i| g[i] * bv[i]);
                self.accumulate_broadcast(grads, *b, shape, |i| g[i] * av[i]);
            }
            Op::Div(a, b) => {
                let bv = self.operand_at(*b, shape);
                let o = out.data();
                self.accumulate_broadcast(grads, *a, shape, |i| g[i] / bv[i]);
                self.accumulate_broadcast(grads, *b, shape, |i| -g[i] * o[i] / bv[i]);
            }
            Op::Neg(a) => self.accumulate(grads, *a, |s| s.iter_mut().zip(g).for_each(|(s, &g)| *s -= g)),
            Op::Scale(a, k) => self.accumulate(grads, *a, |s| s.iter_mut().zip(g).for_each(|(s, &g)| *s += g * *k)),
            Op::AddScalar(a) | Op::Reshape(a) => {
                self.accumulate(grads, *a, |s| s.iter_mut().zip(g).for_each(|(s, &g)| *s += g))
            }
            Op::Exp(a) => {
                let o = out.data();
                self.accumulate(grads, *a, |s| {
                    s.iter_mut().zip(g).zip(o).for_each(|((s, &g), &o)| *s += g * o)
                })
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |s| {
                    s.iter_mut().zip(g).zip(x).for_each(|((s, &g), &x)| *s += g / x)
                })
            }
            Op::Sqrt(a) => {
                let o = out.data();
                let two: T = lit(2.0);
                self.accumulate(grads, *a, |s| {
                    s.iter_mut().zip(g).zip(o).for_each(|((s, &g), &o)| *s += g / (two * o))
                })
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                let two: T = lit(2.0);
                self.accumulate(grads, *a, |s| {
                    s.iter_mut().zip(g).zip(x).for_each(|((s, &g), &x)| *s += two * g * x)
                })
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |s| {
                    s.iter_mut().zip(g).zip(x).for_each(|((s, &g), &x)| *s += g * gelu_grad(x))
                })
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |s| {
                    s.iter_mut()
                        .zip(g)
                        .zip(x)
                        .for_each(|((s, &g), &x)| if x > T::zero() { *s += g })
                })
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2("matmul").expect("2-D");
                let n = shape[1];
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                self.accumulate(grads, *a, |s| gemm_into(m, n, k, g, false, bd, true, s, true));
                self.accumulate(grads, *b, |s| gemm_into(k, m, n, ad, true, g, false, s, true));
            }
            Op::Linear(x, w, b) => {
                let (m, k) = self.value(*x).dims2("linear").expect("2-D");
                let n = shape[1];
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                self.accumulate(grads, *x, |s| gemm_into(m, n, k, g, false, wd, true, s, true));
                self.accumulate(grads, *w, |s| gemm_into(k, m, n, xd, true, g, false, s, true));
                self.accumulate(grads, *b, |s| {
                    for row in g.chunks_exact(n.max(1)) {
                        s.iter_mut().zip(row).for_each(|(s, &g)| *s += g);
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                self.accumulate(grads, *a, |s| s.iter_mut().for_each(|s| *s += g0))
            }
            Op::SumLast(a) => {
                let n = *self.value(*a).shape().last().unwrap();
                self.accumulate(grads, *a, |s| {
                    for (row, &gr) in s.chunks_mut(n.max(1)).zip(g) {
                        row.iter_mut().for_each(|v| *v += gr);
                    }
                })
            }
            Op::Softmax(a) => {
                let n = *shape.last().unwrap();
                let y = out.data();
                self.accumulate(grads, *a, |s| {
                    for ((srow, grow), yrow) in s.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot = grow.iter().zip(yrow).fold(T::zero(), |acc, (&g, &y)| acc + g * y);
                        for ((s, &g), &y) in srow.iter_mut().zip(grow).zip(yrow) {
                            *s += y * (g - dot);
                        }
                    }
                })
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            } => {
                let (m, n) = (shape[0], shape[1]);
                let gv = self.value(*gain).data();
                self.accumulate(grads, *gain, |s| {
                    for r in 0..m {
                        for c in 0..n {
                            s[c] += g[r * n + c] * normed[r * n + c];
                        }
                    }
                });
                self.accumulate(grads, *bias, |s| {
                    for r in 0..m {
                        for c in 0..n {
                            s[c] += g[r * n + c];
                        }
                    }
                });
                let inv_n = T::one() / lit::<T>(n as f64);
                self.accumulate(grads, *x, |s| {
                    let mut dh = vec![T::zero(); n];
                    for r in 0..m {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for c in 0..n {
                            dh[c] = g[r * n + c] * gv[c];
                            mean_dh += dh[c];
                            mean_dh_h += dh[c] * normed[r * n + c];
                        }
                        mean_dh *= inv_n;
                        mean_dh_h *= inv_n;
                        for c in 0..n {
                            s[r * n + c] += rstd[r] * (dh[c] - mean_dh - normed[r * n + c] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                batch,
                heads,
                probs,
            } => self.attention_backward(*q, *k, *v, *batch, *heads, probs, g, grads),
            Op::GatherRows { sources, index } => {
                let cols = shape[1];
                for (si, &src) in sources.iter().enumerate() {
                    self.accumulate(grads, src, |s| {
                        for (i, &(from, r)) in index.iter().enumerate() {
                            if from == si {
                                let dst = &mut s[r * cols..(r + 1) * cols];
                                for (d, &gv) in dst.iter_mut().zip(&g[i * cols..(i + 1) * cols]) {
                                    *d += gv;
                                }
                            }
                        }
                    });
                }
            }
            Op::GatherCols { x, cols } => {
                let n = self.value(*x).shape()[1];
                let m = shape[0];
                let w = cols.len();
                self.accumulate(grads, *x, |s| {
                    for r in 0..m {
                        for (j, &c) in cols.iter().enumerate() {
                            s[r * n + c] += g[r * w + j];
                        }
                    }
                })
            }
            Op::Rot6d(x) => {
                let xs = self.value(*x).data();
                let m = shape[0];
                self.accumulate(grads, *x, |s| {
                    for r in 0..m {
                        let six = &xs[r * 6..r * 6 + 6];
                        let gr = &g[r * 9..r * 9 + 9];
                        let col = |c: usize| [gr[c], gr[3 + c], gr[6 + c]];
                        let d = rot6d_vjp(six, col(0), col(1), col(2));
                        for i in 0..6 {
                            s[r * 6 + i] += d[i];
                        }
                    }
                })
            }
            Op::Points { g: gv, plan } => {
                let (f, c) = self.value(*gv).dims2("points").expect("2-D");
                let p = plan.points.len();
                self.accumulate(grads, *gv, |s| {
                    for fr in 0..f {
                        let row = &mut s[fr * c..(fr + 1) * c];
                        for (pi, terms) in plan.points.iter().enumerate() {
                            let go = &g[(fr * p + pi) * 3..(fr * p + pi) * 3 + 3];
                            for &(seg, vv) in terms {
                                let r = &mut row[seg * 9..seg * 9 + 9];
                                for i in 0..3 {
                                    for j in 0..3 {
                                        r[i * 3 + j] += go[i] * vv[j];
                                    }
                                }
                            }
                        }
                    }
                })
            }
            Op::CumsumRows(x) => {
                let (m, n) = (shape[0], shape[1]);
                self.accumulate(grads, *x, |s| {
                    let mut acc = vec![T::zero(); n];
                    for r in (0..m).rev() {
                        for c in 0..n {
                            acc[c] += g[r * n + c];
                            s[r * n + c] += acc[c];
                        }
                    }
                })
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
        probs: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (rq, d) = self.value(q).dims2("attention").expect("2-D");
        let rk = self.value(k).shape()[0];
        let (tq, tk) = (rq / batch, rk / batch);
        let dh = d / heads;
        let scale = T::one() / lit::<T>(dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![T::zero(); rq * d];
        let mut dk = vec![T::zero(); rk * d];
        let mut dvv = vec![T::zero(); rk * d];
        let mut dp = vec![T::zero(); tq * tk];
        for b in 0..batch {
            for h in 0..heads {
                let p = &probs[(b * heads + h) * tq * tk..(b * heads + h + 1) * tq * tk];
                let go = b * tq * d + h * dh;
                let ko = b * tk * d + h * dh;
                // SAFETY: every view is a strided sub-block of a buffer sized above.
                unsafe {
                    // dV = Pᵀ · dO
                    T::gemm(
                        tk,
                        tq,
                        dh,
                        T::one(),
                        p.as_ptr(),
                        1,
                        tk as isize,
                        g.as_ptr().add(go),
                        d as isize,
                        1,
                        T::one(),
                        dvv.as_mut_ptr().add(ko),
                        d as isize,
                        1,
                    );
                    // dP = dO · Vᵀ
                    T::gemm(
                        tq,
                        dh,
                        tk,
                        T::one(),
                        g.as_ptr().add(go),
                        d as isize,
                        1,
                        vd.as_ptr().add(ko),
                        1,
                        d as isize,
                        T::zero(),
                        dp.as_mut_ptr(),
                        tk as isize,
                        1,
                    );
                }
                for (dprow, prow) in dp.chunks_mut(tk).zip(p.chunks(tk)) {
                    let dot = dprow.iter().zip(prow).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                    for (x, &pv) in dprow.iter_mut().zip(prow) {
                        *x = pv * (*x - dot) * scale;
                    }
                }
                unsafe {
                    // dQ = dS · K
                    T::gemm(
                        tq,
                        tk,
                        dh,
                        T::one(),
                        dp.as_ptr(),
                        tk as isize,
                        1,
                        kd.as_ptr().add(ko),
                        d as isize,
                        1,
                        T::one(),
                        dq.as_mut_ptr().add(go),
                        d as isize,
                        1,
                    );
                    // dK = dSᵀ · Q
                    T::gemm(
                        tk,
                        tq,
                        dh,
                        T::one(),
                        dp.as_ptr(),
                        1,
                        tk as isize,
                        qd.as_ptr().add(go),
                        d as isize,
                        1,
                        T::one(),
                        dk.as_mut_ptr().add(ko),
                        d as isize,
                        1,
                    );
                }
            }
        }
        self.accumulate(grads, q, |s| s.iter_mut().zip(&dq).for_each(|(s, &x)| *s += x));
        self.accumulate(grads, k, |s| s.iter_mut().zip(&dk).for_each(|(s, &x)| *s += x));
        self.accumulate(grads, v, |s| s.iter_mut().zip(&dvv).for_each(|(s, &x)| *s += x));
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Vector-Jacobian product of the Gram-Schmidt decoding, given cotangents of
/// the three output columns.
fn rot6d_vjp<T: Scalar>(six: &[T], gb1: V3<T>, gb2: V3<T>, gb3: V3<T>) -> [T; 6] {
    let a2 = [six[3], six[4], six[5]];
    let (b1, b2, _, n1, n2) = gram_schmidt(six);
    // b3 = b1 × b2
    let mut gb1 = axpy3(gb1, T::one(), cross3(b2, gb3));
    let gb2 = axpy3(gb2, T::one(), cross3(gb3, b1));
    // b2 = u / |u|
    let gu = scale3(axpy3(gb2, -dot3(b2, gb2), b2), T::one() / n2);
    // u = a2 - (b1·a2) b1
    let b1gu = dot3(b1, gu);
    let ga2 = axpy3(gu, -b1gu, b1);
    gb1 = axpy3(gb1, -b1gu, a2);
    gb1 = axpy3(gb1, -dot3(b1, a2), gu);
    // b1 = a1 / |a1|
    let ga1 = scale3(axpy3(gb1, -dot3(b1, gb1), b1), T::one() / n1);
    [ga1[0], ga1[1], ga1[2], ga2[0], ga2[1], ga2[2]]
}
