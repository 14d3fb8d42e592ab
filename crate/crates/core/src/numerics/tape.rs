use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with supplied running statistics.
    Inference,
}

/// Per-channel statistics observed by a training-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        x: Var,
        w: Var,
        rows: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow {
        x: Var,
        v: Var,
        row: usize,
        set: usize,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        width: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        batch: usize,
        sq: usize,
        sk: usize,
        scale: f64,
        probs: Vec<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        rows: usize,
        xhat: Vec<T>,
        inv_std: Vec<f64>,
        mode: NormMode,
        stats: Option<BatchStats>,
    },
    Concat {
        a: Var,
        b: Var,
        rows: usize,
        da: usize,
        db: usize,
    },
    MulRows {
        x: Var,
        s: Var,
        rows: usize,
        d: usize,
    },
    IndexRows {
        x: Var,
        idx: Vec<usize>,
        row_len: usize,
    },
    BatchMatMulNT {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        s: usize,
        d: usize,
    },
    PickLogSoftmax {
        x: Var,
        width: usize,
        pick: Vec<usize>,
        probs: Vec<f64>,
    },
    WeightedSum {
        x: Var,
        weights: Vec<T>,
    },
    Sum(Var),
    Mean {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records executed operations so that gradients can be propagated back in
/// exact reverse order.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of leaf parameters produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `var`, or zeros when the output does not depend on it.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<T> {
        self.get(var).map_or_else(|| vec![T::zero(); len], <[T]>::to_vec)
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn parameter(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Statistics of a training-mode batch normalization node.
    pub fn batch_stats(&self, var: Var) -> Option<&BatchStats> {
        match &self.nodes[var.0].op {
            Op::BatchNorm { stats, .. } => stats.as_ref(),
            _ => None,
        }
    }

    fn leading(shape: &[usize]) -> usize {
        shape[..shape.len().saturating_sub(1)].iter().product()
    }

    /// Affine map along the feature axis: `x [.., k] · w [k, n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(shape_err(format!("matmul {xs:?} by {ws:?}")));
        }
        let (k, n) = (ws[0], ws[1]);
        let rows = Self::leading(&xs);
        let mut out = vec![T::zero(); rows * n];
        T::gemm(
            rows,
            k,
            n,
            self.value(x).data(),
            k as isize,
            1,
            self.value(w).data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::MatMul { x, w, rows, k, n }, &[x, w]))
    }

    /// Linear map with an optional bias broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match bias {
            None => Ok(y),
            Some(b) => {
                let rows = Self::leading(self.shape(y));
                let n = *self.shape(y).last().unwrap();
                if self.shape(b) != [n] {
                    return Err(shape_err(format!("bias {:?} for width {n}", self.shape(b))));
                }
                let idx: Vec<usize> = vec![0; rows];
                let shape = self.shape(y).to_vec();
                let b2 = self.index_rows(b, &idx, n, &shape)?;
                self.add(y, b2)
            }
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("{what} {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x * *y)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let c = T::of(factor);
        let data = self.value(x).data().iter().map(|v| *v * c).collect();
        let value = Tensor::new(self.shape(x), data).expect("same shape");
        self.push(value, Op::Scale(x, c), &[x])
    }

    /// Adds `v [d]` to row `row` of every `[set, d]` block of `x`.
    pub fn add_row(&mut self, x: Var, v: Var, row: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(shape_err(format!("add_row on {xs:?}")));
        }
        let d = xs[xs.len() - 1];
        let set = xs[xs.len() - 2];
        if self.shape(v) != [d] || row >= set {
            return Err(shape_err(format!("add_row {:?} into {xs:?} at {row}", self.shape(v))));
        }
        let mut data = self.value(x).data().to_vec();
        let vv = self.value(v).data();
        for block in data.chunks_mut(set * d) {
            for (o, a) in block[row * d..(row + 1) * d].iter_mut().zip(vv) {
                *o += *a;
            }
        }
        let value = Tensor::new(&xs, data)?;
        Ok(self.push(value, Op::AddRow { x, v, row, set }, &[x, v]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let data = self.value(x).data().iter().map(|v| f(*v)).collect();
        let value = Tensor::new(self.shape(x), data).expect("same shape");
        self.push(value, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| {
                // Split by sign so that exp never overflows.
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            Op::Sigmoid(x),
        )
    }

    /// Softmax over the last axis; `-inf` entries get probability zero.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let width = self.value(x).last_dim();
        let mut out = Vec::with_capacity(self.value(x).len());
        for (r, row) in self.value(x).data().chunks(width).enumerate() {
            let p = super::masked_softmax_row(row, None)
                .ok_or_else(|| Error::Numeric(format!("softmax row {r} has no finite entry")))?;
            out.extend(p.into_iter().map(T::of));
        }
        let value = Tensor::new(self.shape(x), out)?;
        Ok(self.push(value, Op::Softmax { x, width }, &[x]))
    }

    /// Scaled dot-product attention on pre-projected operands.
    ///
    /// `q [B, Sq, D]`, `k [B, Sk, D]`, `v [B, Sk, D]`; the feature axis is split
    /// into `heads` contiguous blocks. `key_mask [B * Sk]` hides keys (`false`).
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        scale: f64,
        key_mask: Option<&[bool]>,
    ) -> Result<Var> {
        let (qs, ks, vs) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if qs.len() != 3 || ks.len() != 3 || vs != ks || qs[0] != ks[0] || qs[2] != ks[2] {
            return Err(shape_err(format!("attention q {qs:?} k {ks:?} v {vs:?}")));
        }
        let (batch, sq, d) = (qs[0], qs[1], qs[2]);
        let sk = ks[1];
        if heads == 0 || d % heads != 0 {
            return Err(shape_err(format!("feature size {d} not divisible by {heads} heads")));
        }
        if let Some(m) = key_mask {
            if m.len() != batch * sk {
                return Err(shape_err(format!("key mask of length {} for {batch}x{sk}", m.len())));
            }
        }
        let dk = d / heads;
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); batch * heads * sq * sk];
        let mut out = vec![T::zero(); batch * sq * d];
        let mut scores = vec![0.0f64; sk];
        let mut acc = vec![0.0f64; dk];
        for b in 0..batch {
            let open = |j: usize| key_mask.is_none_or(|m| m[b * sk + j]);
            if !(0..sk).any(open) {
                return Err(Error::Numeric(format!("attention batch row {b} has every key masked")));
            }
            for h in 0..heads {
                let off = h * dk;
                for i in 0..sq {
                    let qrow = &qd[(b * sq + i) * d + off..(b * sq + i) * d + off + dk];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate() {
                        if !open(j) {
                            *s = f64::NEG_INFINITY;
                            continue;
                        }
                        let krow = &kd[(b * sk + j) * d + off..(b * sk + j) * d + off + dk];
                        let dot: f64 = qrow.iter().zip(krow).map(|(a, c)| a.f64() * c.f64()).sum();
                        *s = dot * scale;
                        max = max.max(*s);
                    }
                    let mut total = 0.0;
                    for s in scores.iter_mut() {
                        *s = if *s == f64::NEG_INFINITY { 0.0 } else { (*s - max).exp() };
                        total += *s;
                    }
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    let pbase = ((b * heads + h) * sq + i) * sk;
                    for (j, s) in scores.iter().enumerate() {
                        let p = s / total;
                        probs[pbase + j] = T::of(p);
                        if p == 0.0 {
                            continue;
                        }
                        let vrow = &vd[(b * sk + j) * d + off..(b * sk + j) * d + off + dk];
                        for (a, x) in acc.iter_mut().zip(vrow) {
                            *a += p * x.f64();
                        }
                    }
                    let orow = &mut out[(b * sq + i) * d + off..(b * sq + i) * d + off + dk];
                    for (o, a) in orow.iter_mut().zip(&acc) {
                        *o = T::of(*a);
                    }
                }
            }
        }
        let value = Tensor::new(&qs, out)?;
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                batch,
                sq,
                sk,
                scale,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Batch normalization of every feature channel over all leading axes.
    ///
    /// `running` holds `(mean, variance)` and is required in inference mode.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode,
        running: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().ok_or_else(|| shape_err("batch norm on a scalar".into()))?;
        let rows = Self::leading(&xs);
        if rows == 0 || d == 0 {
            return Err(shape_err(format!("batch norm over empty axis {xs:?}")));
        }
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err(format!("batch norm affine for width {d}")));
        }
        let xd = self.value(x).data();
        let (mean, var, stats) = match mode {
            NormMode::Train => {
                let mut mean = vec![0.0f64; d];
                for row in xd.chunks(d) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v.f64();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0f64; d];
                for row in xd.chunks(d) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        let c = v.f64() - m;
                        *s += c * c;
                    }
                }
                var.iter_mut().for_each(|s| *s /= rows as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count: rows,
                };
                (mean, var, Some(stats))
            }
            NormMode::Inference => {
                let (m, v) = running
                    .ok_or_else(|| Error::Contract("inference batch norm without running statistics".into()))?;
                if m.len() != d || v.len() != d {
                    return Err(shape_err(format!("running statistics for width {d}")));
                }
                (m.to_vec(), v.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(xd.len());
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks(d) {
            for c in 0..d {
                let h = (row[c].f64() - mean[c]) * inv_std[c];
                xhat.push(T::of(h));
                out.push(T::of(g[c].f64() * h + bt[c].f64()));
            }
        }
        let value = Tensor::new(&xs, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                rows,
                xhat,
                inv_std,
                mode,
                stats,
            },
            &[x, gamma, beta],
        ))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err(format!("concat {sa:?} with {sb:?}")));
        }
        let (da, db) = (*sa.last().unwrap(), *sb.last().unwrap());
        let rows = Self::leading(&sa);
        let mut out = Vec::with_capacity(rows * (da + db));
        for (ra, rb) in self.value(a).data().chunks(da).zip(self.value(b).data().chunks(db)) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = da + db;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Concat { a, b, rows, da, db }, &[a, b]))
    }

    /// Multiplies each row of `x [.., d]` by the matching entry of `s [.., 1]`.
    pub fn mul_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ss = self.shape(s).to_vec();
        let d = *xs.last().unwrap();
        if ss.len() != xs.len() || ss[..ss.len() - 1] != xs[..xs.len() - 1] || *ss.last().unwrap() != 1 {
            return Err(shape_err(format!("mul_rows {xs:?} by {ss:?}")));
        }
        let rows = Self::leading(&xs);
        let sd = self.value(s).data();
        let mut out = self.value(x).data().to_vec();
        for (row, f) in out.chunks_mut(d).zip(sd) {
            row.iter_mut().for_each(|v| *v *= *f);
        }
        let value = Tensor::new(&xs, out)?;
        Ok(self.push(value, Op::MulRows { x, s, rows, d }, &[x, s]))
    }

    /// Gathers contiguous blocks of `row_len` values by index (repeats allowed).
    pub fn index_rows(&mut self, x: Var, idx: &[usize], row_len: usize, out_shape: &[usize]) -> Result<Var> {
        let len = self.value(x).len();
        if row_len == 0 || !len.is_multiple_of(row_len) {
            return Err(shape_err(format!("row length {row_len} does not tile {len} values")));
        }
        let available = len / row_len;
        if let Some(bad) = idx.iter().find(|i| **i >= available) {
            return Err(shape_err(format!("row index {bad} out of {available}")));
        }
        if out_shape.iter().product::<usize>() != idx.len() * row_len {
            return Err(shape_err(format!("gather output shape {out_shape:?}")));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * row_len);
        for &i in idx {
            out.extend_from_slice(&xd[i * row_len..(i + 1) * row_len]);
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            value,
            Op::IndexRows {
                x,
                idx: idx.to_vec(),
                row_len,
            },
            &[x],
        ))
    }

    /// Selects (and possibly repeats) entries of the leading axis.
    pub fn select_batch(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let row_len: usize = shape[1..].iter().product();
        let mut out_shape = shape;
        out_shape[0] = idx.len();
        self.index_rows(x, idx, row_len, &out_shape)
    }

    /// For `x [B, S, d]` and per-batch row indices `idx [B * m]`, returns `[B, m, d]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize], m: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || idx.len() != shape[0] * m {
            return Err(shape_err(format!("gather {} rows per batch from {shape:?}", m)));
        }
        let (set, d) = (shape[1], shape[2]);
        if let Some(bad) = idx.iter().find(|i| **i >= set) {
            return Err(shape_err(format!("row index {bad} out of {set}")));
        }
        let global: Vec<usize> = idx.iter().enumerate().map(|(r, i)| (r / m) * set + i).collect();
        self.index_rows(x, &global, d, &[shape[0], m, d])
    }

    /// Batched `a [B, M, D] · b [B, S, D]ᵀ -> [B, M, S]`.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(shape_err(format!("bmm_nt {sa:?} by {sb:?}")));
        }
        let (batch, m, d, s) = (sa[0], sa[1], sa[2], sb[1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(batch * m * s);
        for bi in 0..batch {
            for i in 0..m {
                let arow = &ad[(bi * m + i) * d..(bi * m + i + 1) * d];
                for j in 0..s {
                    let brow = &bd[(bi * s + j) * d..(bi * s + j + 1) * d];
                    let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x.f64() * y.f64()).sum();
                    out.push(T::of(dot));
                }
            }
        }
        let value = Tensor::new(&[batch, m, s], out)?;
        Ok(self.push(value, Op::BatchMatMulNT { a, b, batch, m, s, d }, &[a, b]))
    }

    /// Log-probability of `pick[r]` under a masked softmax of each leading row.
    ///
    /// `x` is viewed as `[rows, width]` with `rows = shape[0]`.
    pub fn pick_log_softmax(&mut self, x: Var, mask: &[bool], pick: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rows = shape[0];
        let width: usize = shape[1..].iter().product();
        if mask.len() != rows * width || pick.len() != rows {
            return Err(shape_err(format!("pick over {rows}x{width} with mask {} and {} picks", mask.len(), pick.len())));
        }
        let xd = self.value(x).data();
        let mut probs = Vec::with_capacity(rows * width);
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xd[r * width..(r + 1) * width];
            let m = &mask[r * width..(r + 1) * width];
            if pick[r] >= width || !m[pick[r]] {
                return Err(Error::Contract(format!("row {r} picks masked entry {}", pick[r])));
            }
            let max = (0..width).filter(|j| m[*j]).map(|j| row[j].f64()).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = (0..width).filter(|j| m[*j]).map(|j| (row[j].f64() - max).exp()).sum();
            let log_z = max + total.ln();
            for j in 0..width {
                probs.push(if m[j] { (row[j].f64() - log_z).exp() } else { 0.0 });
            }
            out.push(T::of(row[pick[r]].f64() - log_z));
        }
        let value = Tensor::new(&[rows], out)?;
        Ok(self.push(
            value,
            Op::PickLogSoftmax {
                x,
                width,
                pick: pick.to_vec(),
                probs,
            },
            &[x],
        ))
    }

    /// `Σ_i w_i x_i` as a one-element tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(shape_err(format!("{} weights for {} values", weights.len(), self.value(x).len())));
        }
        let total: f64 = self.value(x).data().iter().zip(weights).map(|(v, w)| v.f64() * w).sum();
        let value = Tensor::scalar(T::of(total));
        let weights = weights.iter().map(|w| T::of(*w)).collect();
        Ok(self.push(value, Op::WeightedSum { x, weights }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().map(|v| v.f64()).sum();
        self.push(Tensor::scalar(T::of(total)), Op::Sum(x), &[x])
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(shape_err(format!("mean over axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let s: f64 = (0..len).map(|l| xd[(o * len + l) * inner + i].f64()).sum();
                out.push(T::of(s / len as f64));
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::Mean { x, outer, len, inner }, &[x]))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).len() != 1 {
            return Err(shape_err(format!("backward from non-scalar {:?}", self.shape(output))));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        let mut leaves: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        leaves.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(vec![T::one()]);

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                leaves[id] = Some(g);
            }
        }
        Ok(Gradients { grads: leaves })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
        }
        let len_of = |v: Var| self.nodes[v.0].value.len();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { x, w, rows, k, n } => {
                let (rows, k, n) = (*rows, *k, *n);
                if self.wants(*x) {
                    let wd = self.value(*w).data();
                    let dx = slot(grads, *x, rows * k);
                    // dx += g · wᵀ
                    T::gemm(rows, n, k, g, n as isize, 1, wd, 1, n as isize, T::one(), dx, k as isize, 1);
                }
                if self.wants(*w) {
                    let xd = self.value(*x).data();
                    let dw = slot(grads, *w, k * n);
                    // dw += xᵀ · g
                    T::gemm(k, rows, n, xd, 1, k as isize, g, n as isize, 1, T::one(), dw, n as isize, 1);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        let d = slot(grads, v, g.len());
                        d.iter_mut().zip(g).for_each(|(o, x)| *o += *x);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bd = self.value(*b).data();
                    let d = slot(grads, *a, g.len());
                    for ((o, x), y) in d.iter_mut().zip(g).zip(bd) {
                        *o += *x * *y;
                    }
                }
                if self.wants(*b) {
                    let ad = self.value(*a).data();
                    let d = slot(grads, *b, g.len());
                    for ((o, x), y) in d.iter_mut().zip(g).zip(ad) {
                        *o += *x * *y;
                    }
                }
            }
            Op::Scale(x, c) => {
                if self.wants(*x) {
                    let d = slot(grads, *x, g.len());
                    d.iter_mut().zip(g).for_each(|(o, v)| *o += *v * *c);
                }
            }
            Op::AddRow { x, v, row, set } => {
                let dlen = len_of(*v);
                if self.wants(*x) {
                    let d = slot(grads, *x, g.len());
                    d.iter_mut().zip(g).for_each(|(o, a)| *o += *a);
                }
                if self.wants(*v) {
                    let d = slot(grads, *v, dlen);
                    for block in g.chunks(set * dlen) {
                        for (o, a) in d.iter_mut().zip(&block[row * dlen..(row + 1) * dlen]) {
                            *o += *a;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let d = slot(grads, *x, g.len());
                    for ((o, a), yv) in d.iter_mut().zip(g).zip(y) {
                        if *yv > T::zero() {
                            *o += *a;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let d = slot(grads, *x, g.len());
                    for ((o, a), yv) in d.iter_mut().zip(g).zip(y) {
                        *o += *a * (T::one() - *yv * *yv);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let d = slot(grads, *x, g.len());
                    for ((o, a), yv) in d.iter_mut().zip(g).zip(y) {
                        *o += *a * *yv * (T::one() - *yv);
                    }
                }
            }
            Op::Softmax { x, width } => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let d = slot(grads, *x, g.len());
                    for ((drow, grow), yrow) in d.chunks_mut(*width).zip(g.chunks(*width)).zip(y.chunks(*width)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a.f64() * b.f64()).sum();
                        for ((o, a), p) in drow.iter_mut().zip(grow).zip(yrow) {
                            *o += T::of(p.f64() * (a.f64() - dot));
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                batch,
                sq,
                sk,
                scale,
                probs,
            } => self.attention_backward(g, grads, (*q, *k, *v), (*heads, *batch, *sq, *sk, *scale), probs),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                rows,
                xhat,
                inv_std,
                mode,
                ..
            } => {
                let d = inv_std.len();
                let rows = *rows;
                let mut sum_g = vec![0.0f64; d];
                let mut sum_gx = vec![0.0f64; d];
                for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                    for c in 0..d {
                        sum_g[c] += grow[c].f64();
                        sum_gx[c] += grow[c].f64() * hrow[c].f64();
                    }
                }
                if self.wants(*gamma) {
                    let dg = slot(grads, *gamma, d);
                    for (o, s) in dg.iter_mut().zip(&sum_gx) {
                        *o += T::of(*s);
                    }
                }
                if self.wants(*beta) {
                    let db = slot(grads, *beta, d);
                    for (o, s) in db.iter_mut().zip(&sum_g) {
                        *o += T::of(*s);
                    }
                }
                if self.wants(*x) {
                    let gm = self.value(*gamma).data().to_vec();
                    let dx = slot(grads, *x, g.len());
                    let n = rows as f64;
                    for ((drow, grow), hrow) in dx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)) {
                        for c in 0..d {
                            let k = gm[c].f64() * inv_std[c];
                            let v = match mode {
                                NormMode::Train => {
                                    k * (grow[c].f64() - sum_g[c] / n - hrow[c].f64() * sum_gx[c] / n)
                                }
                                NormMode::Inference => k * grow[c].f64(),
                            };
                            drow[c] += T::of(v);
                        }
                    }
                }
            }
            Op::Concat { a, b, rows, da, db } => {
                let w = da + db;
                if self.wants(*a) {
                    let d = slot(grads, *a, rows * da);
                    for (drow, grow) in d.chunks_mut(*da).zip(g.chunks(w)) {
                        drow.iter_mut().zip(&grow[..*da]).for_each(|(o, x)| *o += *x);
                    }
                }
                if self.wants(*b) {
                    let d = slot(grads, *b, rows * db);
                    for (drow, grow) in d.chunks_mut(*db).zip(g.chunks(w)) {
                        drow.iter_mut().zip(&grow[*da..]).for_each(|(o, x)| *o += *x);
                    }
                }
            }
            Op::MulRows { x, s, rows, d } => {
                if self.wants(*x) {
                    let sd = self.value(*s).data();
                    let dx = slot(grads, *x, rows * d);
                    for ((drow, grow), f) in dx.chunks_mut(*d).zip(g.chunks(*d)).zip(sd) {
                        drow.iter_mut().zip(grow).for_each(|(o, a)| *o += *a * *f);
                    }
                }
                if self.wants(*s) {
                    let xd = self.value(*x).data();
                    let ds = slot(grads, *s, *rows);
                    for ((o, grow), xrow) in ds.iter_mut().zip(g.chunks(*d)).zip(xd.chunks(*d)) {
                        let dot: f64 = grow.iter().zip(xrow).map(|(a, b)| a.f64() * b.f64()).sum();
                        *o += T::of(dot);
                    }
                }
            }
            Op::IndexRows { x, idx, row_len } => {
                if self.wants(*x) {
                    let dx = slot(grads, *x, len_of(*x));
                    for (r, &i) in idx.iter().enumerate() {
                        let src = &g[r * row_len..(r + 1) * row_len];
                        dx[i * row_len..(i + 1) * row_len]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(o, a)| *o += *a);
                    }
                }
            }
            Op::BatchMatMulNT { a, b, batch, m, s, d } => {
                let (batch, m, s, d) = (*batch, *m, *s, *d);
                if self.wants(*a) {
                    let bd = self.value(*b).data();
                    let da = slot(grads, *a, batch * m * d);
                    for bi in 0..batch {
                        for i in 0..m {
                            let orow = &mut da[(bi * m + i) * d..(bi * m + i + 1) * d];
                            for j in 0..s {
                                let gv = g[(bi * m + i) * s + j];
                                let brow = &bd[(bi * s + j) * d..(bi * s + j + 1) * d];
                                orow.iter_mut().zip(brow).for_each(|(o, y)| *o += gv * *y);
                            }
                        }
                    }
                }
                if self.wants(*b) {
                    let ad = self.value(*a).data();
                    let db = slot(grads, *b, batch * s * d);
                    for bi in 0..batch {
                        for i in 0..m {
                            let arow = &ad[(bi * m + i) * d..(bi * m + i + 1) * d];
                            for j in 0..s {
                                let gv = g[(bi * m + i) * s + j];
                                let orow = &mut db[(bi * s + j) * d..(bi * s + j + 1) * d];
                                orow.iter_mut().zip(arow).for_each(|(o, y)| *o += gv * *y);
                            }
                        }
                    }
                }
            }
            Op::PickLogSoftmax { x, width, pick, probs } => {
                if self.wants(*x) {
                    let dx = slot(grads, *x, len_of(*x));
                    for (r, &p) in pick.iter().enumerate() {
                        let gr = g[r].f64();
                        for j in 0..*width {
                            let ind = if j == p { 1.0 } else { 0.0 };
                            let pr = probs[r * width + j];
                            if pr == 0.0 && ind == 0.0 {
                                continue;
                            }
                            dx[r * width + j] += T::of(gr * (ind - pr));
                        }
                    }
                }
            }
            Op::WeightedSum { x, weights } => {
                if self.wants(*x) {
                    let d = slot(grads, *x, weights.len());
                    d.iter_mut().zip(weights).for_each(|(o, w)| *o += g[0] * *w);
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let n = len_of(*x);
                    let d = slot(grads, *x, n);
                    d.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Mean { x, outer, len, inner } => {
                if self.wants(*x) {
                    let dx = slot(grads, *x, outer * len * inner);
                    let f = T::of(1.0 / *len as f64);
                    for o in 0..*outer {
                        for l in 0..*len {
                            for i in 0..*inner {
                                dx[(o * len + l) * inner + i] += g[o * inner + i] * f;
                            }
                        }
                    }
                }
            }
        }
    }

    fn attention_backward(
        &self,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        (q, k, v): (Var, Var, Var),
        (heads, batch, sq, sk, scale): (usize, usize, usize, usize, f64),
        probs: &[T],
    ) {
        let d = self.shape(q)[2];
        let dk = d / heads;
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![0.0f64; batch * sq * d];
        let mut dkk = vec![0.0f64; batch * sk * d];
        let mut dv = vec![0.0f64; batch * sk * d];
        let mut dp = vec![0.0f64; sk];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dk;
                for i in 0..sq {
                    let grow = &g[(b * sq + i) * d + off..(b * sq + i) * d + off + dk];
                    let pbase = ((b * heads + h) * sq + i) * sk;
                    let mut weighted = 0.0;
                    for j in 0..sk {
                        let p = probs[pbase + j].f64();
                        if p == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let vrow = &vd[(b * sk + j) * d + off..(b * sk + j) * d + off + dk];
                        let dot: f64 = grow.iter().zip(vrow).map(|(a, c)| a.f64() * c.f64()).sum();
                        dp[j] = dot;
                        weighted += p * dot;
                        let dvrow = &mut dv[(b * sk + j) * d + off..(b * sk + j) * d + off + dk];
                        dvrow.iter_mut().zip(grow).for_each(|(o, a)| *o += p * a.f64());
                    }
                    let qrow = &qd[(b * sq + i) * d + off..(b * sq + i) * d + off + dk];
                    for j in 0..sk {
                        let p = probs[pbase + j].f64();
                        if p == 0.0 {
                            continue;
                        }
                        let ds = p * (dp[j] - weighted) * scale;
                        let krow = &kd[(b * sk + j) * d + off..(b * sk + j) * d + off + dk];
                        let dqrow = &mut dq[(b * sq + i) * d + off..(b * sq + i) * d + off + dk];
                        dqrow.iter_mut().zip(krow).for_each(|(o, c)| *o += ds * c.f64());
                        let dkrow = &mut dkk[(b * sk + j) * d + off..(b * sk + j) * d + off + dk];
                        dkrow.iter_mut().zip(qrow).for_each(|(o, c)| *o += ds * c.f64());
                    }
                }
            }
        }
        for (var, acc) in [(q, dq), (k, dkk), (v, dv)] {
            if self.wants(var) {
                let len = acc.len();
                let dst = grads[var.0].get_or_insert_with(|| vec![T::zero(); len]);
                dst.iter_mut().zip(acc).for_each(|(o, a)| *o += T::of(a));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn linear_small_cases() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
        let id = t.constant(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
        let sw = t.constant(Tensor::from_f64(&[2, 2], &[0.0, 1.0, 1.0, 0.0]).unwrap());
        let y = t.matmul(x, id).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0]);
        let y = t.matmul(x, sw).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 1.0]);
        let b = t.constant(Tensor::from_f64(&[2], &[0.5, -0.5]).unwrap());
        let y = t.linear(x, sw, Some(b)).unwrap();
        assert_eq!(t.value(y).data(), &[2.5, 0.5]);
        let bad = t.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(t.matmul(x, bad), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&[3, 4], &mut rng);
        let w = random(&[4, 2], &mut rng);
        let mut t = Tape::new();
        let (av, wv) = (t.constant(a.clone()), t.constant(w.clone()));
        let y = t.matmul(av, wv).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a.data()[i * 4 + k] * w.data()[k * 2 + j];
                }
                assert!((t.value(y).data()[i * 2 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_norm_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = Tape::<f64>::new();
        let ones = t.constant(Tensor::from_fn(&[8], |_| 1.0));
        let zeros = t.constant(Tensor::zeros(&[8]));
        let constant = t.constant(Tensor::from_fn(&[4, 6, 8], |_| 3.25));
        let y = t.batch_norm(constant, ones, zeros, NormMode::Train, None, 1e-5).unwrap();
        assert!(t.value(y).data().iter().all(|v| *v == 0.0));

        let xdata: Vec<f64> = random(&[4, 6, 8], &mut rng).data().iter().map(|v| v * 20.0 + 1.0).collect();
        let x = t.constant(Tensor::new(&[4, 6, 8], xdata).unwrap());
        let y = t.batch_norm(x, ones, zeros, NormMode::Train, None, 1e-5).unwrap();
        let yd = t.value(y).data();
        for c in 0..8 {
            let col: Vec<f64> = yd.iter().skip(c).step_by(8).copied().collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-6, "variance {var}");
        }
        let beta = t.constant(Tensor::from_fn(&[8], |c| c as f64));
        let y = t.batch_norm(x, zeros, beta, NormMode::Train, None, 1e-5).unwrap();
        for (k, v) in t.value(y).data().iter().enumerate() {
            assert_eq!(*v, (k % 8) as f64);
        }
        assert!(t.batch_norm(x, ones, zeros, NormMode::Inference, None, 1e-5).is_err());
        let empty = t.constant(Tensor::zeros(&[0, 8]));
        assert!(t.batch_norm(empty, ones, zeros, NormMode::Train, None, 1e-5).is_err());
    }

    #[test]
    fn softmax_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tape::<f64>::new();
        let x = random(&[5, 7], &mut rng);
        let xv = t.constant(x.clone());
        let y = t.softmax(xv).unwrap();
        let shifted = t.constant(Tensor::new(&[5, 7], x.data().iter().map(|v| v + 4.5).collect()).unwrap());
        let y2 = t.softmax(shifted).unwrap();
        for row in t.value(y).data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(t.value(y).max_abs_diff(t.value(y2)) < 1e-12);
        let dead = t.constant(Tensor::from_f64(&[1, 2], &[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap());
        assert!(t.softmax(dead).is_err());
    }

    #[test]
    fn activations_match_reference_math() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[64], &mut rng);
        let mut t = Tape::<f64>::new();
        let xv = t.constant(x.clone());
        let th = t.tanh(xv);
        let sg = t.sigmoid(xv);
        let rl = t.relu(xv);
        for (k, v) in x.data().iter().enumerate() {
            // tanh via its exponential definition, sigmoid via the logistic formula.
            let e2 = (2.0 * v).exp();
            assert!((t.value(th).data()[k] - (e2 - 1.0) / (e2 + 1.0)).abs() < 1e-12);
            assert!((t.value(sg).data()[k] - 1.0 / (1.0 + (-v).exp())).abs() < 1e-12);
            assert_eq!(t.value(rl).data()[k], v.max(0.0));
        }
    }

    #[test]
    fn add_and_concat_backward_partition() {
        let mut t = Tape::<f64>::new();
        let a = t.parameter(Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.parameter(Tensor::from_f64(&[2, 1], &[5.0, 6.0]).unwrap());
        let c = t.concat(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let s = t.weighted_sum(c, &w).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &[1.0, 2.0, 4.0, 5.0]);
        assert_eq!(g.get(b).unwrap(), &[3.0, 6.0]);

        let mut t = Tape::<f64>::new();
        let a = t.parameter(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
        let b = t.parameter(Tensor::from_f64(&[3], &[4.0, 5.0, 6.0]).unwrap());
        let c = t.add(a, b).unwrap();
        let s = t.weighted_sum(c, &[0.5, -1.0, 2.0]).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &[0.5, -1.0, 2.0]);
        assert_eq!(g.get(b).unwrap(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn mean_over_axis() {
        let mut t = Tape::<f64>::new();
        let x = t.parameter(Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let m0 = t.mean(x, 0).unwrap();
        assert_eq!(t.value(m0).data(), &[2.5, 3.5, 4.5]);
        let m1 = t.mean(x, 1).unwrap();
        assert_eq!(t.value(m1).data(), &[2.0, 5.0]);
        let s = t.sum(m1);
        let g = t.backward(s).unwrap();
        assert!(g.get(x).unwrap().iter().all(|v| (*v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn attention_rejects_fully_masked_rows() {
        let mut t = Tape::<f64>::new();
        let q = t.constant(Tensor::zeros(&[1, 2, 8]));
        let k = t.constant(Tensor::zeros(&[1, 3, 8]));
        assert!(t.attention(q, k, k, 2, 0.5, Some(&[false, false, false])).is_err());
        assert!(t.attention(q, k, k, 3, 0.5, None).is_err());
        assert!(t.attention(q, k, k, 2, 0.5, Some(&[true])).is_err());
    }

    #[test]
    fn fan_out_accumulates_regardless_of_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0 = random(&[4, 3], &mut rng);
        let run = |order: bool| {
            let mut t = Tape::<f64>::new();
            let x = t.parameter(x0.clone());
            let a = t.tanh(x);
            let b = t.sigmoid(x);
            let c = if order { t.add(a, b).unwrap() } else { t.add(b, a).unwrap() };
            let s = t.sum(c);
            t.backward(s).unwrap().get(x).unwrap().to_vec()
        };
        let (g1, g2) = (run(true), run(false));
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
