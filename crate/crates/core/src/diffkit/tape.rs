//! Reverse-mode differentiation over a linear operation record.
//!
//! Every op evaluates eagerly, pushes one node holding its value and whatever
//! the backward rule needs, and hands back a [`Var`]. [`Tape::backward`]
//! walks the record in reverse and returns fresh [`Gradients`]; the tape is
//! left untouched so the pass can be replayed.

use std::collections::HashMap;

use super::real::gemm;
use super::{ParamId, ParamStore, Real, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MulScalar(Var, Var),
    Sum(Var),
    Tanh(Var),
    Gelu(Var),
    Silu(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention(Box<AttnRecord<T>>),
    Transpose01(Var),
    Reshape(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Concat(Vec<Var>),
    Mse {
        pred: Var,
        target: Tensor<T>,
    },
}

struct AttnRecord<T> {
    q: Var,
    k: Var,
    v: Var,
    dims: AttnDims,
    scale: T,
    /// Softmax weights laid out `[group, head, query, key]`.
    probs: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
struct AttnDims {
    groups: usize,
    kv_groups: usize,
    nq: usize,
    nk: usize,
    d: usize,
    dv: usize,
    heads: usize,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-writer record of a forward pass.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    node_grads: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a recorded value; `None` if it does not
    /// influence the loss or does not require a gradient.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.node_grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Dense per-parameter gradients in store order. Parameters that were
    /// never used, or are frozen, get exact zeros.
    pub fn for_params(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        store
            .iter()
            .map(|(id, p)| {
                self.params
                    .get(&id)
                    .and_then(|v| self.wrt(*v))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
            })
            .collect()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id).and_then(|v| self.wrt(*v))
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Real>(x: T) -> T {
    let c = T::cast_from(GELU_C);
    let a = T::cast_from(GELU_A);
    let half = T::cast_from(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::cast_from(GELU_C);
    let a = T::cast_from(GELU_A);
    let half = T::cast_from(0.5);
    let three = T::cast_from(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Maps every element index of `out_shape` to the index of a broadcast
/// operand whose shape is `small` (left-padded with ones).
fn broadcast_index_map(out_shape: &[usize], small: &[usize]) -> Result<Vec<usize>> {
    if small.len() > out_shape.len() {
        return Err(Error::shape(
            "add_broadcast",
            format!("{small:?} has more dims than {out_shape:?}"),
        ));
    }
    let pad = out_shape.len() - small.len();
    let mut padded = vec![1usize; pad];
    padded.extend_from_slice(small);
    for (o, s) in out_shape.iter().zip(&padded) {
        if *s != 1 && s != o {
            return Err(Error::shape(
                "add_broadcast",
                format!("{small:?} does not broadcast to {out_shape:?}"),
            ));
        }
    }
    let mut strides = vec![0usize; padded.len()];
    let mut acc = 1;
    for i in (0..padded.len()).rev() {
        strides[i] = if padded[i] == 1 { 0 } else { acc };
        acc *= padded[i];
    }
    let total: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..total {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(map)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an external input. Gradients are tracked when `requires_grad`.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    /// Places a parameter on the tape (once per tape); frozen parameters do
    /// not request gradients.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let mut out = self.value(a).clone();
        for (o, &y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += y;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// `a + b` where `b` broadcasts over the dims of `a` that it holds as 1.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let map = broadcast_index_map(self.shape(a), self.shape(b))?;
        let mut out = self.value(a).clone();
        let bd = self.value(b).data();
        for (o, &j) in out.data_mut().iter_mut().zip(&map) {
            *o += bd[j];
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::AddBroadcast(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let mut out = self.value(a).clone();
        for (o, &y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= y;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    /// Multiplies every element of `x` by the single value held in `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape(
                "mul_scalar",
                format!("scalar operand has shape {:?}", self.shape(s)),
            ));
        }
        let c = self.value(s).data()[0];
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::MulScalar(x, s), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        let rg = self.rg(x);
        self.push(out, Op::Silu(x), rg)
    }

    /// Affine map over the last dimension: `x·W + b` with `W: [in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let din = *xs.last().unwrap();
        if ws.len() != 2 || ws[0] != din {
            return Err(Error::shape(
                "linear",
                format!("input {xs:?} against weight {ws:?}"),
            ));
        }
        let dout = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::shape(
                    "linear",
                    format!("bias {:?} for output width {dout}", self.shape(b)),
                ));
            }
        }
        let rows = self.value(x).len() / din;
        let mut out = vec![T::zero(); rows * dout];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bd);
            }
        }
        gemm(
            rows,
            din,
            dout,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut out,
            b.is_some(),
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(&shape, out)?, Op::Linear { x, w, b }, rg))
    }

    /// Matrix product of 2-D values; with `trans_b` the right operand is
    /// stored `[n, k]`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(Error::shape(
                "matmul",
                format!("{sa:?} x {sb:?} (trans_b={trans_b})"),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            trans_b,
            &mut out,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b, trans_b }, rg))
    }

    /// Layer normalization over the last dimension with learnable scale and
    /// shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "width {d} with gamma {:?}, beta {:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let eps = T::cast_from(eps);
        let dn = T::cast_from(d as f64);
        let xv = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.rows();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention,
    /// `softmax((Q·Kᵀ + bias) / sqrt(d_head)) · V`, per group and head.
    ///
    /// `q: [G, nq, d]`, `k: [Gk, nk, d]`, `v: [Gk, nk, dv]` with `Gk` either
    /// `G` or 1 (keys shared by every group). `bias: [Gb, nq, nk]` with `Gb`
    /// either `G` or 1 is a constant; `-inf` entries receive exactly zero
    /// weight. 2-D operands are treated as a single group.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        bias: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let as3 = |s: &[usize]| -> Option<[usize; 3]> {
            match *s {
                [a, b] => Some([1, a, b]),
                [g, a, b] => Some([g, a, b]),
                _ => None,
            }
        };
        let err = |detail: String| Error::shape("attention", detail);
        let (qs, ks, vs) = (self.shape(q), self.shape(k), self.shape(v));
        let report = format!("q {qs:?}, k {ks:?}, v {vs:?}, heads {heads}");
        let (Some([g, nq, d]), Some([gk, nk, dk]), Some([gv, nkv, dv])) =
            (as3(qs), as3(ks), as3(vs))
        else {
            return Err(err(report));
        };
        if heads == 0
            || d != dk
            || gk != gv
            || nk != nkv
            || (gk != g && gk != 1)
            || d % heads != 0
            || dv % heads != 0
        {
            return Err(err(report));
        }
        let bias_groups = match bias {
            None => 0,
            Some(b) => match as3(b.shape()) {
                Some([gb, bq, bk]) if (gb == g || gb == 1) && bq == nq && bk == nk => gb,
                _ => {
                    return Err(err(format!("bias {:?} for {report}", b.shape())));
                }
            },
        };
        let out_shape = if qs.len() == 2 {
            vec![nq, dv]
        } else {
            vec![g, nq, dv]
        };
        let dims = AttnDims {
            groups: g,
            kv_groups: gk,
            nq,
            nk,
            d,
            dv,
            heads,
        };
        let dh = d / heads;
        let dvh = dv / heads;
        let scale = T::one() / T::cast_from(dh as f64).sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut probs = vec![T::zero(); g * heads * nq * nk];
        let mut out = vec![T::zero(); g * nq * dv];
        let mut logits = vec![T::zero(); nk];
        for gi in 0..g {
            let kg = if gk == 1 { 0 } else { gi };
            let bias_rows = bias.map(|b| {
                let bg = if bias_groups == 1 { 0 } else { gi };
                &b.data()[bg * nq * nk..(bg + 1) * nq * nk]
            });
            for h in 0..heads {
                for i in 0..nq {
                    let qrow = &qd[(gi * nq + i) * d + h * dh..][..dh];
                    let brow = bias_rows.map(|b| &b[i * nk..(i + 1) * nk]);
                    let mut max = T::neg_infinity();
                    for j in 0..nk {
                        let masked = brow.is_some_and(|b| b[j] == T::neg_infinity());
                        if masked {
                            logits[j] = T::neg_infinity();
                            continue;
                        }
                        let krow = &kd[(kg * nk + j) * d + h * dh..][..dh];
                        let mut s = T::zero();
                        for t in 0..dh {
                            s += qrow[t] * krow[t];
                        }
                        if let Some(b) = brow {
                            s += b[j];
                        }
                        let l = s * scale;
                        logits[j] = l;
                        if l > max {
                            max = l;
                        }
                    }
                    if max == T::neg_infinity() {
                        return Err(Error::AllSuppressed { query: i });
                    }
                    let prow = &mut probs[((gi * heads + h) * nq + i) * nk..][..nk];
                    let mut total = T::zero();
                    for j in 0..nk {
                        let p = if logits[j] == T::neg_infinity() {
                            T::zero()
                        } else {
                            (logits[j] - max).exp()
                        };
                        prow[j] = p;
                        total += p;
                    }
                    for p in prow.iter_mut() {
                        *p /= total;
                    }
                    let orow = &mut out[(gi * nq + i) * dv + h * dvh..][..dvh];
                    for (j, &p) in prow.iter().enumerate() {
                        if p == T::zero() {
                            continue;
                        }
                        let vrow = &vd[(kg * nk + j) * dv + h * dvh..][..dvh];
                        for t in 0..dvh {
                            orow[t] += p * vrow[t];
                        }
                    }
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::Attention(Box::new(AttnRecord {
                q,
                k,
                v,
                dims,
                scale,
                probs,
            })),
            rg,
        ))
    }

    /// Softmax weights recorded by an attention op, `[group, head, query, key]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention(rec) => Some(&rec.probs),
            _ => None,
        }
    }

    /// Swaps the first two axes of a 3-D value.
    pub fn transpose01(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [a, b, c] = s[..] else {
            return Err(Error::shape("transpose01", format!("{s:?} is not 3-D")));
        };
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for i in 0..a {
            for j in 0..b {
                out[(j * a + i) * c..][..c].copy_from_slice(&src[(i * b + j) * c..][..c]);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[b, a, c], out)?, Op::Transpose01(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Row lookup into a `[rows, d]` table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 || ids.is_empty() || ids.iter().any(|&i| i >= s[0]) {
            return Err(Error::shape(
                "gather",
                format!("ids {ids:?} into table {s:?}"),
            ));
        }
        let d = s[1];
        let td = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(&[ids.len(), d], out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenation along the first axis.
    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat0", "no inputs"));
        };
        let tail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(Error::shape(
                    "concat0",
                    format!("{s:?} against trailing dims {tail:?}"),
                ));
            }
            lead += s[0];
            out.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&shape, out)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        same_shape("mse", self.shape(pred), target.shape())?;
        let n = T::cast_from(target.len() as f64);
        let s: T = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(s / n),
            Op::Mse {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// Backward pass from a scalar `loss` with seed 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.backward_with_seed(loss, T::one())
    }

    pub fn backward_with_seed(&self, loss: Var, seed: T) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::EmptyTape);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.rg(loss) {
            grads[loss.0] = Some(Tensor::new(self.shape(loss), vec![seed])?);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            node_grads: grads,
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn zeros_like(&self, v: Var) -> Tensor<T> {
        Tensor::zeros(self.shape(v))
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddBroadcast(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    let map = broadcast_index_map(g.shape(), self.shape(*b))?;
                    let mut gb = self.zeros_like(*b);
                    let gbd = gb.data_mut();
                    for (&j, &v) in map.iter().zip(g.data()) {
                        gbd[j] += v;
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let mut ga = g.clone();
                    for (o, &y) in ga.data_mut().iter_mut().zip(self.value(*b).data()) {
                        *o *= y;
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let mut gb = g.clone();
                    for (o, &y) in gb.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *o *= y;
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, g.map(|v| v * *c)),
            Op::MulScalar(x, s) => {
                let c = self.value(*s).data()[0];
                if self.rg(*x) {
                    self.accumulate(grads, *x, g.map(|v| v * c));
                }
                if self.rg(*s) {
                    let dot: T = g
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(&a, &b)| a * b)
                        .sum();
                    let gs = Tensor::new(self.shape(*s), vec![dot])?;
                    self.accumulate(grads, *s, gs);
                }
            }
            Op::Sum(x) => {
                let c = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), c));
            }
            Op::Tanh(x) => {
                let mut gx = g.clone();
                for (o, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                    *o *= T::one() - y * y;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Gelu(x) => {
                let mut gx = g.clone();
                for (o, &xv) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    *o *= gelu_grad(xv);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Silu(x) => {
                let mut gx = g.clone();
                for (o, &xv) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    let s = sigmoid(xv);
                    *o *= s * (T::one() + xv * (T::one() - s));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (din, dout) = (ws[0], ws[1]);
                let rows = g.len() / dout;
                if self.rg(*x) {
                    let mut gx = self.zeros_like(*x);
                    gemm(
                        rows,
                        dout,
                        din,
                        g.data(),
                        false,
                        self.value(*w).data(),
                        true,
                        gx.data_mut(),
                        false,
                    );
                    self.accumulate(grads, *x, gx);
                }
                if self.rg(*w) {
                    let mut gw = self.zeros_like(*w);
                    gemm(
                        din,
                        rows,
                        dout,
                        self.value(*x).data(),
                        true,
                        g.data(),
                        false,
                        gw.data_mut(),
                        false,
                    );
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut gb = self.zeros_like(*b);
                        let gbd = gb.data_mut();
                        for row in g.data().chunks(dout) {
                            for (o, &v) in gbd.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        self.accumulate(grads, *b, gb);
                    }
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let sa = self.shape(*a);
                let (m, k) = (sa[0], sa[1]);
                let n = g.shape()[1];
                if self.rg(*a) {
                    // dA = dY · Bᵀ
                    let mut ga = self.zeros_like(*a);
                    gemm(
                        m,
                        n,
                        k,
                        g.data(),
                        false,
                        self.value(*b).data(),
                        !*trans_b,
                        ga.data_mut(),
                        false,
                    );
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let mut gb = self.zeros_like(*b);
                    if *trans_b {
                        // B stored [n, k]: dB = dYᵀ · A
                        gemm(
                            n,
                            m,
                            k,
                            g.data(),
                            true,
                            self.value(*a).data(),
                            false,
                            gb.data_mut(),
                            false,
                        );
                    } else {
                        gemm(
                            k,
                            m,
                            n,
                            self.value(*a).data(),
                            true,
                            g.data(),
                            false,
                            gb.data_mut(),
                            false,
                        );
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = self.value(*x).last_dim();
                let rows = rstd.len();
                let gd = g.data();
                let gam = self.value(*gamma).data();
                if self.rg(*gamma) || self.rg(*beta) {
                    let mut gg = vec![T::zero(); d];
                    let mut gbt = vec![T::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += gd[r * d + j] * xhat[r * d + j];
                            gbt[j] += gd[r * d + j];
                        }
                    }
                    self.accumulate(grads, *gamma, Tensor::new(&[d], gg)?);
                    self.accumulate(grads, *beta, Tensor::new(&[d], gbt)?);
                }
                if self.rg(*x) {
                    let dn = T::cast_from(d as f64);
                    let mut gx = self.zeros_like(*x);
                    let gxd = gx.data_mut();
                    for r in 0..rows {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gd[r * d + j] * gam[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[r * d + j];
                        }
                        mean_dh /= dn;
                        mean_dh_h /= dn;
                        for j in 0..d {
                            let dh = gd[r * d + j] * gam[j];
                            gxd[r * d + j] =
                                rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Attention(rec) => self.backprop_attention(rec, g, grads),
            Op::Transpose01(x) => {
                let s = self.shape(*x);
                let (a, b, c) = (s[0], s[1], s[2]);
                let mut gx = self.zeros_like(*x);
                let gxd = gx.data_mut();
                let gd = g.data();
                for i in 0..a {
                    for j in 0..b {
                        gxd[(i * b + j) * c..][..c].copy_from_slice(&gd[(j * a + i) * c..][..c]);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshape(self.shape(*x))?;
                self.accumulate(grads, *x, gx);
            }
            Op::Gather { table, ids } => {
                if self.rg(*table) {
                    let d = self.shape(*table)[1];
                    let mut gt = self.zeros_like(*table);
                    let gtd = gt.data_mut();
                    for (r, &i) in ids.iter().enumerate() {
                        for j in 0..d {
                            gtd[i * d + j] += g.data()[r * d + j];
                        }
                    }
                    self.accumulate(grads, *table, gt);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.rg(p) {
                        let gp = Tensor::new(self.shape(p), g.data()[off..off + n].to_vec())?;
                        self.accumulate(grads, p, gp);
                    }
                    off += n;
                }
            }
            Op::Mse { pred, target } => {
                let c = g.data()[0] * T::cast_from(2.0) / T::cast_from(target.len() as f64);
                let mut gp = self.value(*pred).clone();
                for (o, &t) in gp.data_mut().iter_mut().zip(target.data()) {
                    *o = (*o - t) * c;
                }
                self.accumulate(grads, *pred, gp);
            }
        }
        Ok(())
    }

    fn backprop_attention(
        &self,
        rec: &AttnRecord<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let AttnDims {
            groups,
            kv_groups,
            nq,
            nk,
            d,
            dv,
            heads,
        } = rec.dims;
        let dh = d / heads;
        let dvh = dv / heads;
        let (qd, kd, vd) = (
            self.value(rec.q).data(),
            self.value(rec.k).data(),
            self.value(rec.v).data(),
        );
        let gd = g.data();
        let mut gq = vec![T::zero(); groups * nq * d];
        let mut gk = vec![T::zero(); kv_groups * nk * d];
        let mut gv = vec![T::zero(); kv_groups * nk * dv];
        let mut dp = vec![T::zero(); nk];
        for gi in 0..groups {
            let kg = if kv_groups == 1 { 0 } else { gi };
            for h in 0..heads {
                for i in 0..nq {
                    let prow = &rec.probs[((gi * heads + h) * nq + i) * nk..][..nk];
                    let grow = &gd[(gi * nq + i) * dv + h * dvh..][..dvh];
                    let mut dot = T::zero();
                    for j in 0..nk {
                        let p = prow[j];
                        if p == T::zero() {
                            dp[j] = T::zero();
                            continue;
                        }
                        let vrow = &vd[(kg * nk + j) * dv + h * dvh..][..dvh];
                        let gvrow = &mut gv[(kg * nk + j) * dv + h * dvh..][..dvh];
                        let mut s = T::zero();
                        for t in 0..dvh {
                            s += grow[t] * vrow[t];
                            gvrow[t] += p * grow[t];
                        }
                        dp[j] = s;
                        dot += p * s;
                    }
                    let qrow = &qd[(gi * nq + i) * d + h * dh..][..dh];
                    for j in 0..nk {
                        let p = prow[j];
                        if p == T::zero() {
                            continue;
                        }
                        let ds = p * (dp[j] - dot) * rec.scale;
                        let krow = &kd[(kg * nk + j) * d + h * dh..][..dh];
                        let gqrow = &mut gq[(gi * nq + i) * d + h * dh..][..dh];
                        for t in 0..dh {
                            gqrow[t] += ds * krow[t];
                        }
                        let gkrow = &mut gk[(kg * nk + j) * d + h * dh..][..dh];
                        for t in 0..dh {
                            gkrow[t] += ds * qrow[t];
                        }
                    }
                }
            }
        }
        let build = |v: Var, data: Vec<T>| Tensor::new(self.shape(v), data).expect("shape");
        if self.rg(rec.q) {
            self.accumulate(grads, rec.q, build(rec.q, gq));
        }
        if self.rg(rec.k) {
            self.accumulate(grads, rec.k, build(rec.k, gk));
        }
        if self.rg(rec.v) {
            self.accumulate(grads, rec.v, build(rec.v, gv));
        }
    }
}
