use std::collections::BTreeMap;

use rand::Rng;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn, log_sum_exp, softmax_in_place};
use super::{Element, Parameter, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A contiguous run of rows `start..start + len` forming one attention context.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

enum Op<T> {
    Leaf,
    Param(usize),
    MatMul {
        a: Var,
        b: Var,
        n: usize,
        k: usize,
        p: usize,
        /// (a matrix offset, b matrix offset) per output matrix.
        plan: Vec<(usize, usize)>,
    },
    Add(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Softmax {
        x: Var,
        outer: usize,
        axis_len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<usize>,
        ignore_id: usize,
        count: usize,
    },
    GatherRows {
        x: Var,
        index: Vec<Option<usize>>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<Segment>,
        heads: usize,
        /// Softmax output per segment and head, `len × len` blocks, before dropout.
        probs: Vec<T>,
        mask: Option<Vec<T>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Append-only tape of tensor operations. Node order is a topological order,
/// so the backward pass walks the tape in reverse.
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        if cfg!(debug_assertions) && !value.is_finite() {
            let inputs = self.inputs_of(&op);
            let inputs_finite = inputs.iter().all(|v| self.value(*v).is_finite());
            debug_assert!(
                inputs.is_empty() || !inputs_finite,
                "non-finite output from finite inputs"
            );
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn inputs_of(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddBias { x, bias } => vec![*x, *bias],
            Op::Scale(x, _) | Op::Sum(x) | Op::Gelu(x) => vec![*x],
            Op::Softmax { x, .. } | Op::Dropout { x, .. } | Op::GatherRows { x, .. } => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }

    /// Records a constant or differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a parameter; its gradient is reported under `id`.
    pub fn param(&mut self, id: usize, p: &Parameter<T>) -> Var {
        self.push(p.value.clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (n, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, p) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let rank = ba.len().max(bb.len());
        let pad = |s: &[usize]| -> Vec<usize> {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(ba), pad(bb));
        let mut out_batch = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            if x != y && x != 1 && y != 1 {
                return Err(mismatch());
            }
            out_batch.push(x.max(y));
        }
        let total: usize = out_batch.iter().product();
        let mut plan = Vec::with_capacity(total);
        for flat in 0..total {
            let (mut rem, mut ia, mut ib) = (flat, 0, 0);
            let (mut stride_a, mut stride_b) = (1, 1);
            for dim in (0..rank).rev() {
                let idx = rem % out_batch[dim];
                rem /= out_batch[dim];
                if pa[dim] != 1 {
                    ia += idx * stride_a;
                }
                if pb[dim] != 1 {
                    ib += idx * stride_b;
                }
                stride_a *= pa[dim];
                stride_b *= pb[dim];
            }
            plan.push((ia * n * k, ib * k * p));
        }
        let mut out = vec![T::zero(); total * n * p];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for (i, &(oa, ob)) in plan.iter().enumerate() {
                gemm_nn(
                    &da[oa..oa + n * k],
                    &db[ob..ob + k * p],
                    &mut out[i * n * p..(i + 1) * n * p],
                    n,
                    k,
                    p,
                );
            }
        }
        let mut shape = out_batch;
        shape.extend([n, p]);
        let value = Tensor::from_vec(&shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b, n, k, p, plan }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `[D]` vector to every row of `x[.., D]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rank() != 1 || tb.len() != tx.last_dim() {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = tx.clone();
        let d = tb.len();
        for row in out.data_mut().chunks_mut(d) {
            for (o, &b) in row.iter_mut().zip(tb.data()) {
                *o = *o + b;
            }
        }
        Ok(self.push(out, Op::AddBias { x, bias }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_vec(ta.shape(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        let shape = tx.shape();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                axis,
                rank: shape.len(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = tx.clone();
        let data = out.data_mut();
        let mut buf = vec![T::zero(); axis_len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = data[base + j * inner];
                }
                softmax_in_place(&mut buf);
                for (j, &b) in buf.iter().enumerate() {
                    data[base + j * inner] = b;
                }
            }
        }
        Ok(self.push(
            out,
            Op::Softmax {
                x,
                outer,
                axis_len,
                inner,
            },
        ))
    }

    /// Normalizes each row over the last dimension (population variance),
    /// then applies `gamma * x̂ + beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = tx.last_dim();
        if tg.len() != d || tb.len() != d {
            return Err(TensorError::ShapeMismatch {
                op: "layernorm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let rows = tx.rows();
        let n = T::from_usize(d).unwrap();
        let eps = T::from_f64_lossy(eps);
        let mut xhat = vec![T::zero(); tx.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); tx.len()];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            rstd[r] = inv;
            for c in 0..d {
                let h = (row[c] - mean) * inv;
                xhat[r * d + c] = h;
                out[r * d + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let value = Tensor::from_vec(tx.shape(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Exact GELU, `x · Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu_scalar);
        self.push(out, Op::Gelu(x))
    }

    /// Inverted dropout. Identity (and no node) when `p == 0` or not training.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Var {
        if !training || p <= 0.0 {
            return x;
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let tx = self.value(x);
        let mask: Vec<T> = (0..tx.len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = tx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_vec(tx.shape(), data).expect("same shape");
        self.push(out, Op::Dropout { x, mask })
    }

    /// Mean negative log-likelihood of `targets` under softmax(`logits[n, V]`),
    /// over positions whose target differs from `ignore_id`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_id: usize) -> Result<Var> {
        let tl = self.value(logits);
        if tl.rank() != 2 || tl.shape()[0] != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let v = tl.shape()[1];
        let mut probs = vec![T::zero(); tl.len()];
        let mut total = T::zero();
        let mut count = 0usize;
        for (i, &t) in targets.iter().enumerate() {
            if t == ignore_id {
                continue;
            }
            if t >= v {
                return Err(TensorError::TargetOutOfRange { target: t, classes: v });
            }
            let row = tl.row(i);
            let lse = log_sum_exp(row);
            total = total + (lse - row[t]);
            for (p, &z) in probs[i * v..(i + 1) * v].iter_mut().zip(row) {
                *p = (z - lse).exp();
            }
            count += 1;
        }
        if count == 0 {
            return Err(TensorError::NoLossPositions);
        }
        let loss = total / T::from_usize(count).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                ignore_id,
                count,
            },
        ))
    }

    /// Builds `[index.len(), D]` from rows of `x[R, D]`; `None` rows are filled
    /// with `fill` and carry no gradient.
    pub fn gather_rows(&mut self, x: Var, index: &[Option<usize>], fill: T) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(TensorError::Invalid(format!(
                "gather_rows expects a matrix, got {:?}",
                tx.shape()
            )));
        }
        let (rows, d) = (tx.shape()[0], tx.shape()[1]);
        let mut out = Vec::with_capacity(index.len() * d);
        for idx in index {
            match *idx {
                Some(r) if r >= rows => return Err(TensorError::IndexOutOfRange { index: r, rows }),
                Some(r) => out.extend_from_slice(tx.row(r)),
                None => out.extend(std::iter::repeat_n(fill, d)),
            }
        }
        let value = Tensor::from_vec(&[index.len(), d], out)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
        ))
    }

    /// Multi-head scaled dot-product self-attention over packed rows.
    ///
    /// `q`, `k`, `v` are `[T, d]`; each segment attends only within itself,
    /// bidirectionally. Rows outside every segment produce zeros. Dropout is
    /// applied to the attention probabilities.
    #[allow(clippy::too_many_arguments)]
    pub fn attention<R: Rng + ?Sized>(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[Segment],
        heads: usize,
        dropout_p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.shape() != tk.shape() || tq.shape() != tv.shape() || tq.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                lhs: tq.shape().to_vec(),
                rhs: tk.shape().to_vec(),
            });
        }
        let (rows, d) = (tq.shape()[0], tq.shape()[1]);
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Invalid(format!("{d} not divisible into {heads} heads")));
        }
        let mut covered = 0;
        for s in segments {
            if s.start < covered || s.start + s.len > rows || s.len == 0 {
                return Err(TensorError::Invalid(format!("bad segment {s:?} for {rows} rows")));
            }
            covered = s.start + s.len;
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let block_total: usize = segments.iter().map(|s| heads * s.len * s.len).sum();
        let mut probs = vec![T::zero(); block_total];
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        let mut off = 0;
        for s in segments {
            let l = s.len;
            for h in 0..heads {
                let block = &mut probs[off..off + l * l];
                for i in 0..l {
                    let qi = &qd[(s.start + i) * d + h * dh..][..dh];
                    let row = &mut block[i * l..(i + 1) * l];
                    for (j, sc) in row.iter_mut().enumerate() {
                        let kj = &kd[(s.start + j) * d + h * dh..][..dh];
                        *sc = super::kernels::dot(qi, kj) * scale;
                    }
                    softmax_in_place(row);
                }
                off += l * l;
            }
        }
        let mask = if training && dropout_p > 0.0 {
            let keep = T::from_f64_lossy(1.0 / (1.0 - dropout_p));
            Some(
                (0..block_total)
                    .map(|_| if rng.gen::<f64>() < dropout_p { T::zero() } else { keep })
                    .collect::<Vec<T>>(),
            )
        } else {
            None
        };
        let mut out = vec![T::zero(); rows * d];
        let mut off = 0;
        for s in segments {
            let l = s.len;
            for h in 0..heads {
                for i in 0..l {
                    let o_row = &mut out[(s.start + i) * d + h * dh..][..dh];
                    for j in 0..l {
                        let idx = off + i * l + j;
                        let mut pij = probs[idx];
                        if let Some(m) = &mask {
                            pij = pij * m[idx];
                        }
                        if pij == T::zero() {
                            continue;
                        }
                        let vj = &vd[(s.start + j) * d + h * dh..][..dh];
                        for (o, &x) in o_row.iter_mut().zip(vj) {
                            *o = *o + pij * x;
                        }
                    }
                }
                off += l * l;
            }
        }
        let value = Tensor::from_vec(&[rows, d], out)?;
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                segments: segments.to_vec(),
                heads,
                probs,
                mask,
            },
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lt.shape()));
        let mut leaves = BTreeMap::new();
        let mut params: BTreeMap<usize, Tensor<T>> = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    leaves.insert(idx, g);
                }
                Op::Param(id) => {
                    match params.get_mut(id) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            params.insert(*id, g.clone());
                        }
                    }
                    leaves.insert(idx, g);
                }
                Op::MatMul { a, b, n, k, p, plan } => {
                    let (n, k, p) = (*n, *k, *p);
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let mut ga = vec![T::zero(); ta.len()];
                    let mut gb = vec![T::zero(); tb.len()];
                    for (i, &(oa, ob)) in plan.iter().enumerate() {
                        let gy = &g.data()[i * n * p..(i + 1) * n * p];
                        gemm_nt(gy, &tb.data()[ob..ob + k * p], &mut ga[oa..oa + n * k], n, p, k);
                        gemm_tn(&ta.data()[oa..oa + n * k], gy, &mut gb[ob..ob + k * p], n, k, p);
                    }
                    accumulate(&mut grads, *a, ta.shape(), ga);
                    accumulate(&mut grads, *b, tb.shape(), gb);
                }
                Op::Add(a, b) => {
                    let shape = g.shape().to_vec();
                    accumulate(&mut grads, *a, &shape, g.data().to_vec());
                    accumulate(&mut grads, *b, &shape, g.into_data());
                }
                Op::AddBias { x, bias } => {
                    let d = g.last_dim();
                    let mut gb = vec![T::zero(); d];
                    for row in g.data().chunks(d) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                    let shape = g.shape().to_vec();
                    accumulate(&mut grads, *bias, &[d], gb);
                    accumulate(&mut grads, *x, &shape, g.into_data());
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = g.data().iter().zip(tb.data()).map(|(&u, &v)| u * v).collect();
                    let gb = g.data().iter().zip(ta.data()).map(|(&u, &v)| u * v).collect();
                    accumulate(&mut grads, *a, g.shape(), ga);
                    accumulate(&mut grads, *b, g.shape(), gb);
                }
                Op::Scale(x, c) => {
                    let data = g.data().iter().map(|&v| v * *c).collect();
                    accumulate(&mut grads, *x, g.shape(), data);
                }
                Op::Sum(x) => {
                    let tx = self.value(*x);
                    accumulate(&mut grads, *x, tx.shape(), vec![g.item(); tx.len()]);
                }
                Op::Softmax {
                    x,
                    outer,
                    axis_len,
                    inner,
                } => {
                    let y = node.value.data();
                    let gy = g.data();
                    let mut gx = vec![T::zero(); y.len()];
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let base = o * axis_len * inner + i;
                            let dot = (0..*axis_len)
                                .map(|j| gy[base + j * inner] * y[base + j * inner])
                                .fold(T::zero(), |a, b| a + b);
                            for j in 0..*axis_len {
                                let at = base + j * inner;
                                gx[at] = y[at] * (gy[at] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, g.shape(), gx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let tg = self.value(*gamma);
                    let d = tg.len();
                    let n = T::from_usize(d).unwrap();
                    let gy = g.data();
                    let mut gx = vec![T::zero(); gy.len()];
                    let mut ggamma = vec![T::zero(); d];
                    let mut gbeta = vec![T::zero(); d];
                    let mut dxhat = vec![T::zero(); d];
                    for (r, &inv) in rstd.iter().enumerate() {
                        let (mut sum_dx, mut sum_dx_xhat) = (T::zero(), T::zero());
                        for c in 0..d {
                            let at = r * d + c;
                            ggamma[c] = ggamma[c] + gy[at] * xhat[at];
                            gbeta[c] = gbeta[c] + gy[at];
                            dxhat[c] = gy[at] * tg.data()[c];
                            sum_dx = sum_dx + dxhat[c];
                            sum_dx_xhat = sum_dx_xhat + dxhat[c] * xhat[at];
                        }
                        for c in 0..d {
                            let at = r * d + c;
                            gx[at] = inv / n * (n * dxhat[c] - sum_dx - xhat[at] * sum_dx_xhat);
                        }
                    }
                    accumulate(&mut grads, *x, g.shape(), gx);
                    accumulate(&mut grads, *gamma, &[d], ggamma);
                    accumulate(&mut grads, *beta, &[d], gbeta);
                }
                Op::Gelu(x) => {
                    let tx = self.value(*x);
                    let data = tx
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &u)| u * gelu_grad_scalar(v))
                        .collect();
                    accumulate(&mut grads, *x, g.shape(), data);
                }
                Op::Dropout { x, mask } => {
                    let data = g.data().iter().zip(mask).map(|(&u, &m)| u * m).collect();
                    accumulate(&mut grads, *x, g.shape(), data);
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    targets,
                    ignore_id,
                    count,
                } => {
                    let tl = self.value(*logits);
                    let v = tl.shape()[1];
                    let coeff = g.item() / T::from_usize(*count).unwrap();
                    let mut gl = vec![T::zero(); tl.len()];
                    for (i, &t) in targets.iter().enumerate() {
                        if t == *ignore_id {
                            continue;
                        }
                        let row = &mut gl[i * v..(i + 1) * v];
                        for (gv, &p) in row.iter_mut().zip(&probs[i * v..(i + 1) * v]) {
                            *gv = p * coeff;
                        }
                        row[t] = row[t] - coeff;
                    }
                    accumulate(&mut grads, *logits, tl.shape(), gl);
                }
                Op::GatherRows { x, index } => {
                    let tx = self.value(*x);
                    let d = tx.last_dim();
                    let mut gx = vec![T::zero(); tx.len()];
                    for (i, idx) in index.iter().enumerate() {
                        if let Some(r) = idx {
                            for (acc, &v) in gx[r * d..(r + 1) * d].iter_mut().zip(g.row(i)) {
                                *acc = *acc + v;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, tx.shape(), gx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    segments,
                    heads,
                    probs,
                    mask,
                } => {
                    let (gq, gk, gv) =
                        self.attention_backward((*q, *k, *v), segments, *heads, probs, mask.as_deref(), &g);
                    let shape = g.shape().to_vec();
                    accumulate(&mut grads, *q, &shape, gq);
                    accumulate(&mut grads, *k, &shape, gk);
                    accumulate(&mut grads, *v, &shape, gv);
                }
            }
        }
        Ok(Gradients { leaves, params })
    }

    fn attention_backward(
        &self,
        (q, k, v): (Var, Var, Var),
        segments: &[Segment],
        heads: usize,
        probs: &[T],
        mask: Option<&[T]>,
        g: &Tensor<T>,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let d = self.value(q).last_dim();
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let gd = g.data();
        let mut gq = vec![T::zero(); qd.len()];
        let mut gk = vec![T::zero(); kd.len()];
        let mut gv = vec![T::zero(); vd.len()];
        let mut dp = Vec::new();
        let mut off = 0;
        for s in segments {
            let l = s.len;
            dp.resize(l * l, T::zero());
            let at = |row: usize, h: usize| (s.start + row) * d + h * dh;
            for h in 0..heads {
                // dP' = dO · Vᵀ and dV = P'ᵀ · dO
                for i in 0..l {
                    let go = &gd[at(i, h)..][..dh];
                    for j in 0..l {
                        let idx = off + i * l + j;
                        let m = mask.map_or(T::one(), |m| m[idx]);
                        let pd = probs[idx] * m;
                        let vj = &vd[at(j, h)..][..dh];
                        dp[i * l + j] = super::kernels::dot(go, vj) * m;
                        if pd != T::zero() {
                            for (acc, &x) in gv[at(j, h)..][..dh].iter_mut().zip(go) {
                                *acc = *acc + pd * x;
                            }
                        }
                    }
                }
                // softmax backward, then the score matmuls
                for i in 0..l {
                    let prow = &probs[off + i * l..off + (i + 1) * l];
                    let drow = &mut dp[i * l..(i + 1) * l];
                    let dot = super::kernels::dot(drow, prow);
                    for (dv, &p) in drow.iter_mut().zip(prow) {
                        *dv = p * (*dv - dot) * scale;
                    }
                    for j in 0..l {
                        let ds = drow[j];
                        if ds == T::zero() {
                            continue;
                        }
                        let (qi, kj) = (at(i, h), at(j, h));
                        for c in 0..dh {
                            gq[qi + c] = gq[qi + c] + ds * kd[kj + c];
                            gk[kj + c] = gk[kj + c] + ds * qd[qi + c];
                        }
                    }
                }
                off += l * l;
            }
        }
        (gq, gk, gv)
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Tensor<T>>], v: Var, shape: &[usize], data: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(data) {
                *a = *a + b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::from_vec(shape, data).expect("gradient matches input shape"));
        }
    }
}

pub(crate) fn gelu_scalar<T: Element>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let inv_sqrt2 = T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);
    x * half * (T::one() + (x * inv_sqrt2).erf())
}

fn gelu_grad_scalar<T: Element>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let inv_sqrt2 = T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = T::from_f64_lossy(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    let cdf = half * (T::one() + (x * inv_sqrt2).erf());
    let pdf = (-(x * x) * half).exp() * inv_sqrt_2pi;
    cdf + x * pdf
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Element> {
    leaves: BTreeMap<usize, Tensor<T>>,
    params: BTreeMap<usize, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a leaf or parameter node; `None` if unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    /// Gradient summed over every use of parameter `id`.
    pub fn param(&self, id: usize) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Adds parameter gradients into `params[id].grad`.
    pub fn accumulate_into(&self, params: &mut [&mut Parameter<T>]) {
        for (&id, g) in &self.params {
            params[id].grad.add_assign(g);
        }
    }
}
