//! Explicit reverse-mode tape.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] consumes the graph, so a tape is used for exactly one
//! backward pass. Leaves are created from [`Tensor`]s; their
//! `requires_grad` flag decides whether gradients flow to them.
//!
//! The graph is generic over the element type so the same network code can
//! be evaluated in `f64` for gradient verification (see [`crate::gradcheck`]).
//! Every op checks that its output is finite and returns
//! [`Error::NonFinite`] otherwise.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, dim_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{check_shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Marker inside a gather index list producing a zero (no gradient).
pub const GATHER_ZERO: u32 = u32::MAX;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRowVec(Var, Var),
    MulRowVec(Var, Var),
    AddColVec(Var, Var),
    MulColVec(Var, Var),
    Normalize {
        x: Var,
        inv_std: Vec<T>,
    },
    Gelu(Var),
    Softmax(Var),
    Gather {
        src: Var,
        idx: Vec<u32>,
    },
    Concat(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    ConvT2x2 {
        x: Var,
        w: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<u32>,
        probs: Vec<T>,
        count: usize,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Clone)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf copied from `t`; gradients flow to it iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.leaf_with(t, t.requires_grad)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf_with(t, false)
    }

    pub fn leaf_with(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().iter().map(|&v| T::from_f32(v)).collect(),
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf built directly from element values in the graph's precision.
    pub fn input(&mut self, shape: &[usize], value: Vec<T>, requires_grad: bool) -> Result<Var> {
        let n = check_shape(shape)?;
        if n != value.len() {
            return Err(dim_err!("input of shape {shape:?} given {} values", value.len()));
        }
        self.nodes.push(Node {
            shape: shape.to_vec(),
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.iter().map(|x| x.to_f32()).collect())
            .expect("node shape is validated on creation")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, value: Vec<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [m, n] => Ok((*m, *n)),
            s => Err(dim_err!("{what} expects a rank-2 tensor, got {s:?}")),
        }
    }

    fn last_dim(&self, v: Var) -> usize {
        *self.shape(v).last().expect("shapes are never empty")
    }

    // ---------------------------------------------------------------- linear algebra

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(dim_err!("matmul inner dims {k} vs {k2}"));
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![T::ZERO; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let s = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bb) in row.iter_mut().zip(brow) {
                    *o += s * bb;
                }
            }
        }
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    /// `x . w + b` for `x: [m,k]`, `w: [k,n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row_vec(y, b)
    }

    // ---------------------------------------------------------------- elementwise

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(name, shape, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let value = self.nodes[a.0].value.iter().map(|&x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push("scale", shape, value, Op::Scale(a, s), &[a])
    }

    fn row_vec(&mut self, name: &'static str, x: Var, v: Var, mul: bool) -> Result<Var> {
        let n = self.last_dim(x);
        if self.shape(v) != [n] {
            return Err(dim_err!("{name}: vector {:?} vs last dim {n}", self.shape(v)));
        }
        let vv = &self.nodes[v.0].value;
        let value: Vec<T> = self.nodes[x.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, &a)| if mul { a * vv[i % n] } else { a + vv[i % n] })
            .collect();
        let shape = self.shape(x).to_vec();
        let op = if mul { Op::MulRowVec(x, v) } else { Op::AddRowVec(x, v) };
        self.push(name, shape, value, op, &[x, v])
    }

    /// Broadcast `v: [n]` over the last dimension of `x`.
    pub fn add_row_vec(&mut self, x: Var, v: Var) -> Result<Var> {
        self.row_vec("add_row_vec", x, v, false)
    }

    pub fn mul_row_vec(&mut self, x: Var, v: Var) -> Result<Var> {
        self.row_vec("mul_row_vec", x, v, true)
    }

    fn col_vec(&mut self, name: &'static str, x: Var, v: Var, mul: bool) -> Result<Var> {
        let m = self.shape(x)[0];
        if self.shape(v) != [m] {
            return Err(dim_err!("{name}: vector {:?} vs leading dim {m}", self.shape(v)));
        }
        let inner = self.nodes[x.0].value.len() / m;
        let vv = &self.nodes[v.0].value;
        let value: Vec<T> = self.nodes[x.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, &a)| if mul { a * vv[i / inner] } else { a + vv[i / inner] })
            .collect();
        let shape = self.shape(x).to_vec();
        let op = if mul { Op::MulColVec(x, v) } else { Op::AddColVec(x, v) };
        self.push(name, shape, value, op, &[x, v])
    }

    /// Broadcast `v: [m]` over everything after the leading dimension of `x`
    /// (per-channel bias for `[C, H, W]` maps).
    pub fn add_col_vec(&mut self, x: Var, v: Var) -> Result<Var> {
        self.col_vec("add_col_vec", x, v, false)
    }

    pub fn mul_col_vec(&mut self, x: Var, v: Var) -> Result<Var> {
        self.col_vec("mul_col_vec", x, v, true)
    }

    // ---------------------------------------------------------------- normalization & activations

    /// Zero-mean, unit-variance over the last dimension (no affine).
    pub fn normalize(&mut self, x: Var, eps: f32) -> Result<Var> {
        let n = self.last_dim(x);
        let eps = T::from_f32(eps);
        let inv_n = T::ONE / T::from_f64(n as f64);
        let xv = &self.nodes[x.0].value;
        let rows = xv.len() / n;
        let mut out = vec![T::ZERO; xv.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let rs = T::ONE / (var + eps).sqrt();
            for (o, &v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
            inv_std.push(rs);
        }
        let shape = self.shape(x).to_vec();
        self.push("normalize", shape, out, Op::Normalize { x, inv_std }, &[x])
    }

    /// Layer normalization over the last dimension followed by `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let h = self.last_dim(x);
        if self.shape(gamma) != [h] || self.shape(beta) != [h] {
            return Err(dim_err!(
                "layer_norm: affine {:?}/{:?} vs last dim {h}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        let y = self.normalize(x, eps)?;
        let y = self.mul_row_vec(y, gamma)?;
        self.add_row_vec(y, beta)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let c = T::from_f64(GELU_C);
        let k = T::from_f64(GELU_K);
        let half = T::from_f64(0.5);
        let value = self.nodes[x.0]
            .value
            .iter()
            .map(|&v| half * v * (T::ONE + (c * (v + k * v * v * v)).tanh()))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("gelu", shape, value, Op::Gelu(x), &[x])
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.last_dim(x);
        let xv = &self.nodes[x.0].value;
        let mut out = vec![T::ZERO; xv.len()];
        for (orow, row) in out.chunks_mut(n).zip(xv.chunks(n)) {
            let mx = row.iter().copied().fold(row[0], T::max);
            let mut s = T::ZERO;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - mx).exp();
                s += *o;
            }
            let inv = T::ONE / s;
            orow.iter_mut().for_each(|o| *o *= inv);
        }
        let shape = self.shape(x).to_vec();
        self.push("softmax", shape, out, Op::Softmax(x), &[x])
    }

    // ---------------------------------------------------------------- reductions & losses

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.nodes[x.0].value.iter().copied().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let s = v.iter().copied().sum::<T>() / T::from_f64(v.len() as f64);
        self.push("mean", vec![1], vec![s], Op::Mean(x), &[x])
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Mean cross-entropy of `logits: [N, C]` against `labels` (length `N`).
    /// Rows whose label is `ignore` do not contribute. With no contributing
    /// row the loss is zero.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u32], ignore: Option<u32>) -> Result<Var> {
        let (rows, c) = self.dims2(logits, "cross_entropy")?;
        if labels.len() != rows {
            return Err(dim_err!("cross_entropy: {} labels for {rows} rows", labels.len()));
        }
        let lv = &self.nodes[logits.0].value;
        let mut probs = vec![T::ZERO; rows * c];
        let mut kept = Vec::with_capacity(rows);
        let mut total = T::ZERO;
        let mut count = 0usize;
        for r in 0..rows {
            let lab = labels[r];
            if Some(lab) == ignore {
                kept.push(GATHER_ZERO);
                continue;
            }
            if lab as usize >= c {
                return Err(contract_err!("label {lab} out of range for {c} classes"));
            }
            let row = &lv[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(row[0], T::max);
            let mut s = T::ZERO;
            for (p, &v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = (v - mx).exp();
                s += *p;
            }
            probs[r * c..(r + 1) * c].iter_mut().for_each(|p| *p = *p / s);
            total += s.ln() + mx - row[lab as usize];
            kept.push(lab);
            count += 1;
        }
        let loss = if count == 0 {
            T::ZERO
        } else {
            total / T::from_f64(count as f64)
        };
        self.push(
            "cross_entropy",
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: kept,
                probs,
                count,
            },
            &[logits],
        )
    }

    // ---------------------------------------------------------------- data movement

    /// `out[i] = src[idx[i]]` (or zero for [`GATHER_ZERO`]); backward scatters-adds.
    pub fn gather(&mut self, src: Var, idx: Vec<u32>, shape: &[usize]) -> Result<Var> {
        let n = check_shape(shape)?;
        if n != idx.len() {
            return Err(dim_err!("gather: {} indices for shape {shape:?}", idx.len()));
        }
        let sv = &self.nodes[src.0].value;
        let mut value = Vec::with_capacity(n);
        for &i in &idx {
            if i == GATHER_ZERO {
                value.push(T::ZERO);
            } else {
                value.push(
                    *sv.get(i as usize)
                        .ok_or_else(|| dim_err!("gather index {i} out of range"))?,
                );
            }
        }
        self.push("gather", shape.to_vec(), value, Op::Gather { src, idx }, &[src])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n = check_shape(shape)?;
        if n != self.nodes[x.0].value.len() {
            return Err(dim_err!("cannot reshape {:?} into {shape:?}", self.shape(x)));
        }
        let value = self.nodes[x.0].value.clone();
        self.push("reshape", shape.to_vec(), value, Op::Reshape(x), &[x])
    }

    /// Flat concatenation; `shape` must hold the summed element count.
    pub fn concat(&mut self, parts: &[Var], shape: &[usize]) -> Result<Var> {
        let n = check_shape(shape)?;
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.len()).sum();
        if n != total {
            return Err(dim_err!("concat of {total} elements into {shape:?}"));
        }
        let mut value = Vec::with_capacity(n);
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push("concat", shape.to_vec(), value, Op::Concat(parts.to_vec()), parts)
    }

    /// Stack `[a, h]` and `[b, h]` into `[a + b, h]`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims2(a, "concat_rows")?;
        let (rb, cb) = self.dims2(b, "concat_rows")?;
        if ca != cb {
            return Err(dim_err!("concat_rows: widths {ca} vs {cb}"));
        }
        self.concat(&[a, b], &[ra + rb, ca])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "transpose")?;
        let idx = (0..n).flat_map(|j| (0..m).map(move |i| (i * n + j) as u32)).collect();
        self.gather(x, idx, &[n, m])
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(x, "select_rows")?;
        if let Some(&r) = rows.iter().find(|&&r| r >= m) {
            return Err(dim_err!("select_rows: row {r} out of {m}"));
        }
        let idx = rows
            .iter()
            .flat_map(|&r| (0..n).map(move |j| (r * n + j) as u32))
            .collect();
        self.gather(x, idx, &[rows.len(), n])
    }

    /// Columns `start..start+len` of `x: [m, n]`, optionally transposed to `[len, m]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize, transposed: bool) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if start + len > n || len == 0 {
            return Err(dim_err!("slice_cols {start}..{} of width {n}", start + len));
        }
        let idx: Vec<u32> = if transposed {
            (0..len)
                .flat_map(|j| (0..m).map(move |i| (i * n + start + j) as u32))
                .collect()
        } else {
            (0..m)
                .flat_map(|i| (0..len).map(move |j| (i * n + start + j) as u32))
                .collect()
        };
        let shape = if transposed { [len, m] } else { [m, len] };
        self.gather(x, idx, &shape)
    }

    /// Repeat a `[n]` (or `[1, n]`) vector into `[rows, n]`.
    pub fn repeat_rows(&mut self, v: Var, rows: usize) -> Result<Var> {
        let n = self.last_dim(v);
        if self.nodes[v.0].value.len() != n {
            return Err(dim_err!("repeat_rows expects a vector, got {:?}", self.shape(v)));
        }
        let idx = (0..rows).flat_map(|_| 0..n as u32).collect();
        self.gather(v, idx, &[rows, n])
    }

    fn dims3(&self, v: Var, what: &str) -> Result<(usize, usize, usize)> {
        match self.shape(v) {
            [c, h, w] => Ok((*c, *h, *w)),
            s => Err(dim_err!("{what} expects [C, H, W], got {s:?}")),
        }
    }

    /// 2x2 max pooling with stride 2 on `[C, H, W]`. Odd sides are zero-padded
    /// on the right/bottom first, so the output is `[C, ceil(H/2), ceil(W/2)]`.
    pub fn max_pool2x2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.dims3(x, "max_pool2x2")?;
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let xv = &self.nodes[x.0].value;
        let mut idx = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best: Option<(T, u32)> = None;
                    let mut padded = false;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (y, xx) = (2 * oy + dy, 2 * ox + dx);
                            if y >= h || xx >= w {
                                padded = true;
                                continue;
                            }
                            let i = ch * h * w + y * w + xx;
                            if best.is_none_or(|(b, _)| xv[i] > b) {
                                best = Some((xv[i], i as u32));
                            }
                        }
                    }
                    let (b, i) = best.expect("every window holds a real pixel");
                    // a zero pad wins only when strictly larger
                    idx.push(if padded && b < T::ZERO { GATHER_ZERO } else { i });
                }
            }
        }
        self.gather(x, idx, &[c, oh, ow])
    }

    /// Nearest-neighbour upsampling of `[C, H, W]` by `factor`, cropped (or
    /// kept) to `[C, out_h, out_w]`; requires `out_h <= H*factor`.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize, out_h: usize, out_w: usize) -> Result<Var> {
        let (c, h, w) = self.dims3(x, "upsample_nearest")?;
        if factor == 0 || out_h > h * factor || out_w > w * factor {
            return Err(dim_err!("upsample {h}x{w} by {factor} cannot reach {out_h}x{out_w}"));
        }
        let mut idx = Vec::with_capacity(c * out_h * out_w);
        for ch in 0..c {
            for y in 0..out_h {
                for xx in 0..out_w {
                    idx.push((ch * h * w + (y / factor) * w + xx / factor) as u32);
                }
            }
        }
        self.gather(x, idx, &[c, out_h, out_w])
    }

    /// Transposed convolution, kernel 2 and stride 2, no bias:
    /// `x: [C_in, H, W]`, `w: [C_in, C_out, 2, 2]` -> `[C_out, 2H, 2W]`.
    pub fn conv_transpose2x2(&mut self, x: Var, w: Var) -> Result<Var> {
        let (cin, h, wd) = self.dims3(x, "conv_transpose2x2")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[0] != cin || ws[2] != 2 || ws[3] != 2 {
            return Err(dim_err!("conv_transpose2x2: kernel {ws:?} for {cin} input channels"));
        }
        let cout = ws[1];
        let (oh, ow) = (2 * h, 2 * wd);
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let mut out = vec![T::ZERO; cout * oh * ow];
        for c in 0..cin {
            for o in 0..cout {
                let k = &wv[(c * cout + o) * 4..(c * cout + o) * 4 + 4];
                for i in 0..h {
                    for j in 0..wd {
                        let v = xv[c * h * wd + i * wd + j];
                        let base = o * oh * ow + (2 * i) * ow + 2 * j;
                        out[base] += v * k[0];
                        out[base + 1] += v * k[1];
                        out[base + ow] += v * k[2];
                        out[base + ow + 1] += v * k[3];
                    }
                }
            }
        }
        self.push(
            "conv_transpose2x2",
            vec![cout, oh, ow],
            out,
            Op::ConvT2x2 { x, w },
            &[x, w],
        )
    }

    // ---------------------------------------------------------------- backward

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            ));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![T::ONE]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            backprop(&nodes, &mut grads, node, &g);
        }
        // only leaves keep their gradients
        for (g, n) in grads.iter_mut().zip(&nodes) {
            if !matches!(n.op, Op::Leaf) || !n.needs_grad {
                *g = None;
            }
        }
        let shapes = nodes.into_iter().map(|n| n.shape).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn slot<'a, T: Scalar>(nodes: &[Node<T>], grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::ZERO; len]))
}

fn backprop<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], node: &Node<T>, g: &[T]) {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let n = nodes[b.0].shape[1];
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            if let Some(da) = slot(nodes, grads, *a) {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        let mut s = T::ZERO;
                        for (&x, &y) in grow.iter().zip(brow) {
                            s += x * y;
                        }
                        da[i * k + p] += s;
                    }
                }
            }
            if let Some(db) = slot(nodes, grads, *b) {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let s = av[i * k + p];
                        for (d, &x) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += s * x;
                        }
                    }
                }
            }
        }
        Op::Add(a, b) => {
            if let Some(da) = slot(nodes, grads, *a) {
                da.iter_mut().zip(g).for_each(|(d, &x)| *d += x);
            }
            if let Some(db) = slot(nodes, grads, *b) {
                db.iter_mut().zip(g).for_each(|(d, &x)| *d += x);
            }
        }
        Op::Sub(a, b) => {
            if let Some(da) = slot(nodes, grads, *a) {
                da.iter_mut().zip(g).for_each(|(d, &x)| *d += x);
            }
            if let Some(db) = slot(nodes, grads, *b) {
                db.iter_mut().zip(g).for_each(|(d, &x)| *d -= x);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if let Some(da) = slot(nodes, grads, *a) {
                for ((d, &x), &y) in da.iter_mut().zip(g).zip(bv) {
                    *d += x * y;
                }
            }
            if let Some(db) = slot(nodes, grads, *b) {
                for ((d, &x), &y) in db.iter_mut().zip(g).zip(av) {
                    *d += x * y;
                }
            }
        }
        Op::Scale(a, s) => {
            if let Some(da) = slot(nodes, grads, *a) {
                da.iter_mut().zip(g).for_each(|(d, &x)| *d += x * *s);
            }
        }
        Op::AddRowVec(x, v) | Op::MulRowVec(x, v) => {
            let mul = matches!(node.op, Op::MulRowVec(..));
            let n = nodes[v.0].value.len();
            let (xv, vv) = (&nodes[x.0].value, &nodes[v.0].value);
            if let Some(dx) = slot(nodes, grads, *x) {
                for (i, (d, &gi)) in dx.iter_mut().zip(g).enumerate() {
                    *d += if mul { gi * vv[i % n] } else { gi };
                }
            }
            if let Some(dv) = slot(nodes, grads, *v) {
                for (i, &gi) in g.iter().enumerate() {
                    dv[i % n] += if mul { gi * xv[i] } else { gi };
                }
            }
        }
        Op::AddColVec(x, v) | Op::MulColVec(x, v) => {
            let mul = matches!(node.op, Op::MulColVec(..));
            let inner = g.len() / nodes[v.0].value.len();
            let (xv, vv) = (&nodes[x.0].value, &nodes[v.0].value);
            if let Some(dx) = slot(nodes, grads, *x) {
                for (i, (d, &gi)) in dx.iter_mut().zip(g).enumerate() {
                    *d += if mul { gi * vv[i / inner] } else { gi };
                }
            }
            if let Some(dv) = slot(nodes, grads, *v) {
                for (i, &gi) in g.iter().enumerate() {
                    dv[i / inner] += if mul { gi * xv[i] } else { gi };
                }
            }
        }
        Op::Normalize { x, inv_std } => {
            let n = *node.shape.last().expect("non-empty shape");
            let inv_n = T::ONE / T::from_f64(n as f64);
            if let Some(dx) = slot(nodes, grads, *x) {
                for (r, &rs) in inv_std.iter().enumerate() {
                    let y = &node.value[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let mg = gr.iter().copied().sum::<T>() * inv_n;
                    let mgy = gr.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() * inv_n;
                    for ((d, &gi), &yi) in dx[r * n..(r + 1) * n].iter_mut().zip(gr).zip(y) {
                        *d += rs * (gi - mg - yi * mgy);
                    }
                }
            }
        }
        Op::Gelu(x) => {
            let c = T::from_f64(GELU_C);
            let k = T::from_f64(GELU_K);
            let half = T::from_f64(0.5);
            let three_k = T::from_f64(3.0 * GELU_K);
            let xv = &nodes[x.0].value;
            if let Some(dx) = slot(nodes, grads, *x) {
                for ((d, &gi), &v) in dx.iter_mut().zip(g).zip(xv) {
                    let t = (c * (v + k * v * v * v)).tanh();
                    let dt = (T::ONE - t * t) * c * (T::ONE + three_k * v * v);
                    *d += gi * (half * (T::ONE + t) + half * v * dt);
                }
            }
        }
        Op::Softmax(x) => {
            let n = *node.shape.last().expect("non-empty shape");
            if let Some(dx) = slot(nodes, grads, *x) {
                for ((drow, grow), yrow) in dx.chunks_mut(n).zip(g.chunks(n)).zip(node.value.chunks(n)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for ((d, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += yi * (gi - dot);
                    }
                }
            }
        }
        Op::Gather { src, idx } => {
            if let Some(ds) = slot(nodes, grads, *src) {
                for (&i, &gi) in idx.iter().zip(g) {
                    if i != GATHER_ZERO {
                        ds[i as usize] += gi;
                    }
                }
            }
        }
        Op::Concat(parts) => {
            let mut off = 0;
            for p in parts {
                let len = nodes[p.0].value.len();
                if let Some(dp) = slot(nodes, grads, *p) {
                    dp.iter_mut().zip(&g[off..off + len]).for_each(|(d, &x)| *d += x);
                }
                off += len;
            }
        }
        Op::Reshape(x) => {
            if let Some(dx) = slot(nodes, grads, *x) {
                dx.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
            }
        }
        Op::Sum(x) => {
            if let Some(dx) = slot(nodes, grads, *x) {
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(x) => {
            if let Some(dx) = slot(nodes, grads, *x) {
                let s = g[0] / T::from_f64(dx.len() as f64);
                dx.iter_mut().for_each(|d| *d += s);
            }
        }
        Op::ConvT2x2 { x, w } => {
            let (cin, h, wd) = (nodes[x.0].shape[0], nodes[x.0].shape[1], nodes[x.0].shape[2]);
            let cout = nodes[w.0].shape[1];
            let ow = 2 * wd;
            let plane = 4 * h * wd;
            let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
            if let Some(dx) = slot(nodes, grads, *x) {
                for c in 0..cin {
                    for o in 0..cout {
                        let k = &wv[(c * cout + o) * 4..(c * cout + o) * 4 + 4];
                        for i in 0..h {
                            for j in 0..wd {
                                let base = o * plane + 2 * i * ow + 2 * j;
                                dx[c * h * wd + i * wd + j] +=
                                    g[base] * k[0] + g[base + 1] * k[1] + g[base + ow] * k[2] + g[base + ow + 1] * k[3];
                            }
                        }
                    }
                }
            }
            if let Some(dw) = slot(nodes, grads, *w) {
                for c in 0..cin {
                    for o in 0..cout {
                        let mut acc = [T::ZERO; 4];
                        for i in 0..h {
                            for j in 0..wd {
                                let v = xv[c * h * wd + i * wd + j];
                                let base = o * plane + 2 * i * ow + 2 * j;
                                acc[0] += v * g[base];
                                acc[1] += v * g[base + 1];
                                acc[2] += v * g[base + ow];
                                acc[3] += v * g[base + ow + 1];
                            }
                        }
                        for (d, a) in dw[(c * cout + o) * 4..(c * cout + o) * 4 + 4].iter_mut().zip(acc) {
                            *d += a;
                        }
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
            count,
        } => {
            if *count == 0 {
                return;
            }
            let c = nodes[logits.0].shape[1];
            let s = g[0] / T::from_f64(*count as f64);
            if let Some(dl) = slot(nodes, grads, *logits) {
                for (r, &lab) in labels.iter().enumerate() {
                    if lab == GATHER_ZERO {
                        continue;
                    }
                    for j in 0..c {
                        let onehot = if j == lab as usize { T::ONE } else { T::ZERO };
                        dl[r * c + j] += s * (probs[r * c + j] - onehot);
                    }
                }
            }
        }
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar = f32> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf that requires grad; `None` for unreachable or
    /// non-differentiable leaves and for interior nodes.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, with zeros when it was not reached.
    pub fn get_or_zeros(&self, v: Var) -> Vec<T> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![T::ZERO; self.shapes[v.0].iter().product()],
        }
    }

    pub fn tensor(&self, v: Var) -> Option<Tensor> {
        self.get(v).map(|g| {
            Tensor::new(&self.shapes[v.0], g.iter().map(|x| x.to_f32()).collect())
                .expect("gradient shape matches its node")
        })
    }
}
