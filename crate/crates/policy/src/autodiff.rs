//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter as
//! [`Tape::param`] leaves; [`Tape::backward`] returns their gradients.

use std::rc::Rc;

use crate::tensor::{gemm_acc, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Precomputed data for the diagonal complex scan.
#[derive(Clone, Debug)]
pub struct ScanSpec {
    /// Independent sequences interleaved row-wise (`row = t * lanes + lane`).
    pub lanes: usize,
    /// Row-aligned: the carried state is dropped before row `r` when set.
    pub resets: Rc<[bool]>,
    /// Initial state per lane, `lanes x 2P` as `[re | im]`.
    pub h0: Rc<Tensor>,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sin(Var),
    Cos(Var),
    GatherRows(Var, Rc<[usize]>),
    SegmentSum(Var, Rc<[usize]>),
    SegmentSoftmax(Var, Rc<[usize]>),
    GroupSumCols(Var, usize),
    RepeatCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    LayerNorm(Var, Vec<f64>),
    LogSoftmaxRows(Var),
    PickCols(Var, Rc<[usize]>),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    Sum(Var),
    Mean(Var),
    Scan(Var, Var, ScanSpec),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    n_params: usize,
}

fn seg_count(seg: &[usize]) -> usize {
    seg.iter().copied().max().map_or(0, |m| m + 1)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param(_) => true,
            _ => inputs.iter().any(|&v| self.needs(v)),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// Leaf whose gradient is reported under index `id`.
    pub fn param(&mut self, id: usize, value: Tensor) -> Var {
        self.n_params = self.n_params.max(id + 1);
        self.push(value, Op::Param(id), &[])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = Tensor::matmul(self.value(a), false, self.value(b), false);
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push(v, Op::Div(a, b), &[a, b])
    }

    /// `a + row` with the `1 x C` row broadcast over all rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!((r.rows, r.cols), (1, self.value(a).cols), "add_row shape");
        let mut v = self.value(a).clone();
        for i in 0..v.rows {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r.data) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!((r.rows, r.cols), (1, self.value(a).cols), "mul_row shape");
        let mut v = self.value(a).clone();
        for i in 0..v.rows {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r.data) {
                *x *= b;
            }
        }
        self.push(v, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a), &[a])
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sin);
        self.push(v, Op::Sin(a), &[a])
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::cos);
        self.push(v, Op::Cos(a), &[a])
    }

    /// `out[r] = a[idx[r]]`.
    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Var {
        let src = self.value(a);
        let mut v = Tensor::zeros(idx.len(), src.cols);
        for (r, &i) in idx.iter().enumerate() {
            v.row_mut(r).copy_from_slice(src.row(i));
        }
        self.push(v, Op::GatherRows(a, idx), &[a])
    }

    /// `out[s] = Σ_{r: seg[r] = s} a[r]`, with `n_seg` output rows.
    pub fn segment_sum(&mut self, a: Var, seg: Rc<[usize]>, n_seg: usize) -> Var {
        let src = self.value(a);
        assert_eq!(seg.len(), src.rows, "segment ids per row");
        assert!(seg_count(&seg) <= n_seg, "segment id out of range");
        let mut v = Tensor::zeros(n_seg, src.cols);
        for (r, &s) in seg.iter().enumerate() {
            for (o, x) in v.row_mut(s).iter_mut().zip(src.row(r)) {
                *o += x;
            }
        }
        self.push(v, Op::SegmentSum(a, seg), &[a])
    }

    /// Column-wise softmax over the rows sharing a segment id.
    pub fn segment_softmax(&mut self, a: Var, seg: Rc<[usize]>) -> Var {
        let src = self.value(a);
        assert_eq!(seg.len(), src.rows, "segment ids per row");
        let n_seg = seg_count(&seg);
        let c = src.cols;
        let mut max = Tensor::filled(n_seg, c, f64::NEG_INFINITY);
        for (r, &s) in seg.iter().enumerate() {
            for (m, &x) in max.row_mut(s).iter_mut().zip(src.row(r)) {
                *m = m.max(x);
            }
        }
        let mut v = Tensor::zeros(src.rows, c);
        let mut sum = Tensor::zeros(n_seg, c);
        for (r, &s) in seg.iter().enumerate() {
            for j in 0..c {
                let e = (src.get(r, j) - max.get(s, j)).exp();
                v.set(r, j, e);
                sum.data[s * c + j] += e;
            }
        }
        for (r, &s) in seg.iter().enumerate() {
            for j in 0..c {
                v.data[r * c + j] /= sum.get(s, j);
            }
        }
        self.push(v, Op::SegmentSoftmax(a, seg), &[a])
    }

    /// Sum consecutive groups of `group` columns: `R x (H·g) -> R x H`.
    pub fn group_sum_cols(&mut self, a: Var, group: usize) -> Var {
        let src = self.value(a);
        assert_eq!(
            src.cols % group,
            0,
            "group size must divide the column count"
        );
        let h = src.cols / group;
        let mut v = Tensor::zeros(src.rows, h);
        for r in 0..src.rows {
            let row = src.row(r);
            for (k, o) in v.row_mut(r).iter_mut().enumerate() {
                *o = row[k * group..(k + 1) * group].iter().sum();
            }
        }
        self.push(v, Op::GroupSumCols(a, group), &[a])
    }

    /// Repeat each column `times` times: `R x H -> R x (H·times)`.
    pub fn repeat_cols(&mut self, a: Var, times: usize) -> Var {
        let src = self.value(a);
        let mut v = Tensor::zeros(src.rows, src.cols * times);
        for r in 0..src.rows {
            let row = src.row(r).to_vec();
            for (j, o) in v.row_mut(r).iter_mut().enumerate() {
                *o = row[j / times];
            }
        }
        self.push(v, Op::RepeatCols(a, times), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p);
                assert_eq!(src.rows, rows, "concat_cols row mismatch");
                v.data[r * cols + off..r * cols + off + src.cols].copy_from_slice(src.row(r));
                off += src.cols;
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        assert!(start + len <= src.cols, "slice_cols out of range");
        let mut v = Tensor::zeros(src.rows, len);
        for r in 0..src.rows {
            v.row_mut(r)
                .copy_from_slice(&src.row(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols(a, start), &[a])
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let src = self.value(a);
        let c = src.cols as f64;
        let mut v = Tensor::zeros(src.rows, src.cols);
        let mut inv_std = Vec::with_capacity(src.rows);
        for r in 0..src.rows {
            let row = src.row(r);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c;
            let is = 1.0 / (var + eps).sqrt();
            for (o, x) in v.row_mut(r).iter_mut().zip(row) {
                *o = (x - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(v, Op::LayerNorm(a, inv_std), &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push(v, Op::LogSoftmaxRows(a), &[a])
    }

    /// `out[r] = a[r, idx[r]]` as an `R x 1` column.
    pub fn pick_cols(&mut self, a: Var, idx: Rc<[usize]>) -> Var {
        let src = self.value(a);
        assert_eq!(idx.len(), src.rows, "one column index per row");
        let v = Tensor::from_vec(
            src.rows,
            1,
            idx.iter()
                .enumerate()
                .map(|(r, &c)| src.get(r, c))
                .collect(),
        );
        self.push(v, Op::PickCols(a, idx), &[a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi), &[a])
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), f64::min);
        self.push(v, Op::Minimum(a, b), &[a, b])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(v, Op::Mean(a), &[a])
    }

    /// Diagonal complex recurrence `x_r = m_r · λ ⊙ x_prev + u_r`.
    ///
    /// `lambda` is `1 x 2P` and `u` is `R x 2P`, both laid out `[re | im]`.
    /// Rows are time-major over `spec.lanes` independent sequences, `m_r` is 0
    /// where `spec.resets[r]` is set, and `x_prev` for the first time step is
    /// `spec.h0`.
    pub fn scan(&mut self, lambda: Var, u: Var, spec: ScanSpec) -> Var {
        let lam = self.value(lambda);
        let inp = self.value(u);
        let p2 = lam.cols;
        let p = p2 / 2;
        let lanes = spec.lanes;
        assert_eq!(lam.rows, 1, "scan lambda must be a row");
        assert_eq!(inp.cols, p2, "scan input width");
        assert_eq!(inp.rows % lanes, 0, "scan rows must be a multiple of lanes");
        assert_eq!(spec.resets.len(), inp.rows, "one reset flag per row");
        assert_eq!(spec.h0.shape(), (lanes, p2), "scan initial state shape");
        let (lr, li) = lam.data.split_at(p);
        let mut out = Tensor::zeros(inp.rows, p2);
        for r in 0..inp.rows {
            let lane = r % lanes;
            let u_row = inp.row(r);
            if spec.resets[r] {
                out.row_mut(r).copy_from_slice(u_row);
                continue;
            }
            let prev: Vec<f64> = if r < lanes {
                spec.h0.row(lane).to_vec()
            } else {
                out.row(r - lanes).to_vec()
            };
            let row = out.row_mut(r);
            for j in 0..p {
                let (xr, xi) = (prev[j], prev[p + j]);
                row[j] = lr[j] * xr - li[j] * xi + u_row[j];
                row[p + j] = lr[j] * xi + li[j] * xr + u_row[p + j];
            }
        }
        self.push(out, Op::Scan(lambda, u, spec), &[lambda, u])
    }

    /// Gradients of scalar `loss` with respect to every parameter id seen by
    /// this tape (zeros for parameters the loss does not touch).
    pub fn backward(&self, loss: Var) -> Vec<Tensor> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out: Vec<Option<Tensor>> = vec![None; self.n_params];

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => match &mut out[*id] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let mut da = Tensor::zeros(self.value(*a).rows, self.value(*a).cols);
                        gemm_acc(&g, false, self.value(*b), true, &mut da);
                        acc(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let mut db = Tensor::zeros(self.value(*b).rows, self.value(*b).cols);
                        gemm_acc(self.value(*a), true, &g, false, &mut db);
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        acc(&mut grads, *b, g.clone());
                    }
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        acc(&mut grads, *b, g.map(|x| -x));
                    }
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.zip_map(vb, |g, y| g * y));
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, g.zip_map(va, |g, x| g * x));
                    }
                }
                Op::Div(a, b) => {
                    let vb = self.value(*b);
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.zip_map(vb, |g, d| g / d));
                    }
                    if self.needs(*b) {
                        let q = g.zip_map(y, |g, y| g * y);
                        acc(&mut grads, *b, q.zip_map(vb, |gq, d| -gq / d));
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        acc(&mut grads, *row, column_sums(&g));
                    }
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let (va, vr) = (self.value(*a), self.value(*row));
                    if self.needs(*row) {
                        let mut dr = Tensor::zeros(1, vr.cols);
                        for r in 0..g.rows {
                            for ((d, gv), x) in dr.data.iter_mut().zip(g.row(r)).zip(va.row(r)) {
                                *d += gv * x;
                            }
                        }
                        acc(&mut grads, *row, dr);
                    }
                    if self.needs(*a) {
                        let mut da = g;
                        for r in 0..da.rows {
                            for (d, s) in da.row_mut(r).iter_mut().zip(&vr.data) {
                                *d *= s;
                            }
                        }
                        acc(&mut grads, *a, da);
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Tanh(a) => acc(&mut grads, *a, g.zip_map(y, |g, t| g * (1.0 - t * t))),
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_map(y, |g, s| g * s * (1.0 - s))),
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(y, |g, e| g * e)),
                Op::Log(a) => acc(&mut grads, *a, g.zip_map(self.value(*a), |g, x| g / x)),
                Op::Sin(a) => acc(
                    &mut grads,
                    *a,
                    g.zip_map(self.value(*a), |g, x| g * x.cos()),
                ),
                Op::Cos(a) => acc(
                    &mut grads,
                    *a,
                    g.zip_map(self.value(*a), |g, x| -g * x.sin()),
                ),
                Op::GatherRows(a, idx) => {
                    let src = self.value(*a);
                    let mut da = Tensor::zeros(src.rows, src.cols);
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, gv) in da.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += gv;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::SegmentSum(a, seg) => {
                    let mut da = Tensor::zeros(seg.len(), g.cols);
                    for (r, &s) in seg.iter().enumerate() {
                        da.row_mut(r).copy_from_slice(g.row(s));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::SegmentSoftmax(a, seg) => {
                    let c = y.cols;
                    let mut dots = Tensor::zeros(seg_count(seg), c);
                    for (r, &s) in seg.iter().enumerate() {
                        for j in 0..c {
                            dots.data[s * c + j] += y.get(r, j) * g.get(r, j);
                        }
                    }
                    let mut da = Tensor::zeros(y.rows, c);
                    for (r, &s) in seg.iter().enumerate() {
                        for j in 0..c {
                            da.set(r, j, y.get(r, j) * (g.get(r, j) - dots.get(s, j)));
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::GroupSumCols(a, group) => {
                    let mut da = Tensor::zeros(g.rows, g.cols * group);
                    for r in 0..g.rows {
                        let gr = g.row(r).to_vec();
                        for (j, d) in da.row_mut(r).iter_mut().enumerate() {
                            *d = gr[j / group];
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::RepeatCols(a, times) => {
                    let mut da = Tensor::zeros(g.rows, g.cols / times);
                    for r in 0..g.rows {
                        let gr = g.row(r).to_vec();
                        for (k, d) in da.row_mut(r).iter_mut().enumerate() {
                            *d = gr[k * times..(k + 1) * times].iter().sum();
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        if self.needs(p) {
                            let mut dp = Tensor::zeros(g.rows, w);
                            for r in 0..g.rows {
                                dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                            }
                            acc(&mut grads, p, dp);
                        }
                        off += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut da = Tensor::zeros(src.rows, src.cols);
                    for r in 0..g.rows {
                        da.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LayerNorm(a, inv_std) => {
                    let c = y.cols as f64;
                    let mut da = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let mg = gr.iter().sum::<f64>() / c;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c;
                        for ((d, gv), yv) in da.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *d = inv_std[r] * (gv - mg - yv * mgy);
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LogSoftmaxRows(a) => {
                    let mut da = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let gs: f64 = g.row(r).iter().sum();
                        for ((d, gv), lp) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *d = gv - lp.exp() * gs;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::PickCols(a, idx) => {
                    let src = self.value(*a);
                    let mut da = Tensor::zeros(src.rows, src.cols);
                    for (r, &c) in idx.iter().enumerate() {
                        da.set(r, c, g.data[r]);
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Clamp(a, lo, hi) => {
                    let da = g.zip_map(
                        self.value(*a),
                        |g, x| if x < *lo || x > *hi { 0.0 } else { g },
                    );
                    acc(&mut grads, *a, da);
                }
                Op::Minimum(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let take_a: Vec<bool> =
                        va.data.iter().zip(&vb.data).map(|(x, y)| x <= y).collect();
                    if self.needs(*a) {
                        let mut da = g.clone();
                        for (d, &t) in da.data.iter_mut().zip(&take_a) {
                            if !t {
                                *d = 0.0;
                            }
                        }
                        acc(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let mut db = g;
                        for (d, &t) in db.data.iter_mut().zip(&take_a) {
                            if t {
                                *d = 0.0;
                            }
                        }
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Sum(a) => {
                    let s = self.value(*a);
                    acc(&mut grads, *a, Tensor::filled(s.rows, s.cols, g.item()));
                }
                Op::Mean(a) => {
                    let s = self.value(*a);
                    acc(
                        &mut grads,
                        *a,
                        Tensor::filled(s.rows, s.cols, g.item() / s.len() as f64),
                    );
                }
                Op::Scan(lambda, u, spec) => {
                    let (dl, du) = scan_backward(self.value(*lambda), y, &g, spec);
                    if self.needs(*lambda) {
                        acc(&mut grads, *lambda, dl);
                    }
                    acc(&mut grads, *u, du);
                }
            }
        }

        out.into_iter()
            .enumerate()
            .map(|(id, g)| g.unwrap_or_else(|| self.param_shape_zero(id)))
            .collect()
    }

    fn param_shape_zero(&self, id: usize) -> Tensor {
        self.nodes
            .iter()
            .find_map(|n| match n.op {
                Op::Param(p) if p == id => Some(Tensor::zeros(n.value.rows, n.value.cols)),
                _ => None,
            })
            .unwrap_or_else(|| Tensor::zeros(0, 0))
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols);
    for r in 0..g.rows {
        for (o, x) in out.data.iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn scan_backward(lam: &Tensor, out: &Tensor, g: &Tensor, spec: &ScanSpec) -> (Tensor, Tensor) {
    let p2 = lam.cols;
    let p = p2 / 2;
    let lanes = spec.lanes;
    let (lr, li) = lam.data.split_at(p);
    let mut dl = Tensor::zeros(1, p2);
    let mut du = Tensor::zeros(out.rows, p2);
    let mut carry = Tensor::zeros(lanes, p2);
    for r in (0..out.rows).rev() {
        let lane = r % lanes;
        let total: Vec<f64> = g
            .row(r)
            .iter()
            .zip(carry.row(lane))
            .map(|(a, b)| a + b)
            .collect();
        du.row_mut(r).copy_from_slice(&total);
        let c = carry.row_mut(lane);
        if spec.resets[r] {
            c.iter_mut().for_each(|x| *x = 0.0);
            continue;
        }
        let prev = if r < lanes {
            spec.h0.row(lane)
        } else {
            out.row(r - lanes)
        };
        for j in 0..p {
            let (gr, gi) = (total[j], total[p + j]);
            let (xr, xi) = (prev[j], prev[p + j]);
            dl.data[j] += gr * xr + gi * xi;
            dl.data[p + j] += -gr * xi + gi * xr;
            c[j] = lr[j] * gr + li[j] * gi;
            c[p + j] = -li[j] * gr + lr[j] * gi;
        }
    }
    (dl, du)
}
