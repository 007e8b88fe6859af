//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of that scalar with respect to every node that depends on a
//! parameter leaf. Input leaves (images, targets) never receive gradients.

use super::tensor::{gemm, matmul, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Square(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    SubCol(Var, Var),
    LogSumExpRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Patchify(Var, PatchGeom),
    Upsample2x(Var, PatchGeom),
    RowMatVec(Var, Var),
}

/// Geometry of an NHWC image batch stored as `[n, h * w * c]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; zeros when the node did not influence the loss.
    pub fn tensor(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match self.get(v) {
            Some(g) => Tensor::new(shape.clone(), g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn map(v: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())
        .expect("elementwise shape")
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        assert_eq!(k, tb.rows(), "matmul inner dims {:?} x {:?}", ta.shape(), tb.shape());
        let n = tb.cols();
        let out = Tensor::matrix(m, n, matmul(ta.data(), tb.data(), m, k, n));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `x + b` with `b` a `[1, cols]` row added to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (tx, tb) = (self.value(x), self.value(b));
        let c = tx.cols();
        assert_eq!(tb.len(), c, "bias width");
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, bb) in row.iter_mut().zip(tb.data()) {
                *o += bb;
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out).unwrap();
        let ng = self.ng(x) || self.ng(b);
        self.push(out, Op::AddBias(x, b), ng)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "elementwise {:?} vs {:?}", ta.shape(), tb.shape());
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).unwrap();
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = map(self.value(a), |x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn offset(&mut self, a: Var, s: f64) -> Var {
        let out = map(self.value(a), |x| x + s);
        let ng = self.ng(a);
        self.push(out, Op::Offset(a), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = map(self.value(a), f);
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// `max(0, x)`; the hinge `[.]+` of the barrier losses.
    pub fn hinge(&mut self, a: Var) -> Var {
        self.relu(a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// `[r, c] -> [r, 1]`, summing each row.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let data: Vec<f64> = t.data().chunks(c).map(|r| r.iter().sum()).collect();
        let out = Tensor::matrix(t.rows(), 1, data);
        let ng = self.ng(a);
        self.push(out, Op::RowSum(a), ng)
    }

    /// `x - col`, with `col` of shape `[r, 1]` subtracted from every column.
    pub fn sub_col(&mut self, x: Var, col: Var) -> Var {
        let (tx, tc) = (self.value(x), self.value(col));
        let c = tx.cols();
        assert_eq!(tc.len(), tx.rows(), "sub_col rows");
        let mut out = tx.data().to_vec();
        for (row, s) in out.chunks_mut(c).zip(tc.data()) {
            for o in row {
                *o -= s;
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out).unwrap();
        let ng = self.ng(x) || self.ng(col);
        self.push(out, Op::SubCol(x, col), ng)
    }

    /// Numerically stable `log(sum(exp(row)))` per row, `[r, c] -> [r, 1]`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let data: Vec<f64> = t.data().chunks(c).map(logsumexp).collect();
        let out = Tensor::matrix(t.rows(), 1, data);
        let ng = self.ng(a);
        self.push(out, Op::LogSumExpRows(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), rows, "concat_cols rows");
                out.extend_from_slice(t.row_slice(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let t = self.value(a);
        let c = t.cols();
        assert!(start + width <= c, "slice_cols out of range");
        let mut out = Vec::with_capacity(t.rows() * width);
        for row in t.data().chunks(c) {
            out.extend_from_slice(&row[start..start + width]);
        }
        let out = Tensor::matrix(t.rows(), width, out);
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), c, "concat_rows cols");
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::matrix(rows, c, out), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Var {
        let t = self.value(a);
        let c = t.cols();
        assert!(start + count <= t.rows(), "slice_rows out of range");
        let out = Tensor::matrix(count, c, t.data()[start * c..(start + count) * c].to_vec());
        let ng = self.ng(a);
        self.push(out, Op::SliceRows(a, start), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::matrix(idx.len(), c, out);
        let ng = self.ng(a);
        self.push(out, Op::GatherRows(a, idx.to_vec()), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshaped(shape).expect("reshape");
        let ng = self.ng(a);
        self.push(out, Op::Reshape(a), ng)
    }

    /// Non-overlapping `k x k` patches of an NHWC batch: `[n, h*w*c]` becomes
    /// `[n * (h/k) * (w/k), k*k*c]`. Followed by a matmul this is a stride-k
    /// convolution with kernel k.
    pub fn patchify(&mut self, a: Var, g: PatchGeom) -> Var {
        let t = self.value(a);
        assert_eq!(t.len(), g.n * g.h * g.w * g.c, "patchify input size");
        assert!(g.h % g.k == 0 && g.w % g.k == 0, "patchify stride");
        let (ph, pw) = (g.h / g.k, g.w / g.k);
        let pc = g.k * g.k * g.c;
        let mut out = vec![0.0; g.n * ph * pw * pc];
        let src = t.data();
        for img in 0..g.n {
            for py in 0..ph {
                for px in 0..pw {
                    let o = ((img * ph + py) * pw + px) * pc;
                    for dy in 0..g.k {
                        let y = py * g.k + dy;
                        let s = ((img * g.h + y) * g.w + px * g.k) * g.c;
                        let d = o + dy * g.k * g.c;
                        out[d..d + g.k * g.c].copy_from_slice(&src[s..s + g.k * g.c]);
                    }
                }
            }
        }
        let out = Tensor::matrix(g.n * ph * pw, pc, out);
        let ng = self.ng(a);
        self.push(out, Op::Patchify(a, g), ng)
    }

    /// Nearest-neighbour 2x upsampling of an NHWC batch `[n, h*w*c]`.
    pub fn upsample2x(&mut self, a: Var, g: PatchGeom) -> Var {
        let t = self.value(a);
        assert_eq!(t.len(), g.n * g.h * g.w * g.c, "upsample input size");
        let (oh, ow) = (2 * g.h, 2 * g.w);
        let mut out = vec![0.0; g.n * oh * ow * g.c];
        let src = t.data();
        for img in 0..g.n {
            for y in 0..oh {
                for x in 0..ow {
                    let s = ((img * g.h + y / 2) * g.w + x / 2) * g.c;
                    let d = ((img * oh + y) * ow + x) * g.c;
                    out[d..d + g.c].copy_from_slice(&src[s..s + g.c]);
                }
            }
        }
        let out = Tensor::matrix(g.n, oh * ow * g.c, out);
        let ng = self.ng(a);
        self.push(out, Op::Upsample2x(a, g), ng)
    }

    /// Per-row matrix-vector product: `mat` is `[r, p*q]` holding one row-major
    /// `p x q` matrix per row, `vec` is `[r, q]`; the result is `[r, p]`.
    pub fn row_matvec(&mut self, mat: Var, vec: Var) -> Var {
        let (tm, tv) = (self.value(mat), self.value(vec));
        let r = tm.rows();
        let q = tv.cols();
        assert_eq!(tv.rows(), r, "row_matvec rows");
        assert_eq!(tm.cols() % q, 0, "row_matvec widths");
        let p = tm.cols() / q;
        let mut out = vec![0.0; r * p];
        for i in 0..r {
            let m = tm.row_slice(i);
            let v = tv.row_slice(i);
            for a in 0..p {
                out[i * p + a] = m[a * q..(a + 1) * q].iter().zip(v).map(|(x, y)| x * y).sum();
            }
        }
        let ng = self.ng(mat) || self.ng(vec);
        self.push(Tensor::matrix(r, p, out), Op::RowMatVec(mat, vec), ng)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.ng(v) {
            return;
        }
        let slot = &mut grads[v.0];
        let buf = slot.get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(buf);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, nn) = (ta.rows(), ta.cols(), tb.cols());
                self.acc(grads, *a, |da| gemm(m, nn, k, 1.0, g, false, tb.data(), true, 1.0, da));
                self.acc(grads, *b, |db| gemm(k, m, nn, 1.0, ta.data(), true, g, false, 1.0, db));
            }
            Op::AddBias(x, b) => {
                self.acc(grads, *x, |dx| add_into(dx, g));
                let c = out.cols();
                self.acc(grads, *b, |db| {
                    for row in g.chunks(c) {
                        add_into(db, row);
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| add_into(d, g));
                self.acc(grads, *b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| add_into(d, g));
                self.acc(grads, *b, |d| {
                    for (x, y) in d.iter_mut().zip(g) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * tb[i];
                    }
                });
                self.acc(grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * ta[i];
                    }
                });
            }
            Op::Scale(a, s) => self.acc(grads, *a, |d| {
                for (x, y) in d.iter_mut().zip(g) {
                    *x += s * y;
                }
            }),
            Op::Offset(a) => self.acc(grads, *a, |d| add_into(d, g)),
            Op::Tanh(a) => self.acc(grads, *a, |d| {
                for ((x, y), o) in d.iter_mut().zip(g).zip(out.data()) {
                    *x += y * (1.0 - o * o);
                }
            }),
            Op::Relu(a) => {
                let src = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    for i in 0..d.len() {
                        if src[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                })
            }
            Op::Sigmoid(a) => self.acc(grads, *a, |d| {
                for ((x, y), o) in d.iter_mut().zip(g).zip(out.data()) {
                    *x += y * o * (1.0 - o);
                }
            }),
            Op::Square(a) => {
                let src = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += 2.0 * src[i] * g[i];
                    }
                })
            }
            Op::Exp(a) => self.acc(grads, *a, |d| {
                for ((x, y), o) in d.iter_mut().zip(g).zip(out.data()) {
                    *x += y * o;
                }
            }),
            Op::Log(a) => {
                let src = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] / src[i];
                    }
                })
            }
            Op::Sum(a) => self.acc(grads, *a, |d| {
                for x in d.iter_mut() {
                    *x += g[0];
                }
            }),
            Op::Mean(a) => self.acc(grads, *a, |d| {
                let s = g[0] / d.len().max(1) as f64;
                for x in d.iter_mut() {
                    *x += s;
                }
            }),
            Op::RowSum(a) => {
                let c = self.value(*a).cols();
                self.acc(grads, *a, |d| {
                    for (row, gv) in d.chunks_mut(c).zip(g) {
                        for x in row {
                            *x += gv;
                        }
                    }
                })
            }
            Op::SubCol(x, col) => {
                let c = out.cols();
                self.acc(grads, *x, |d| add_into(d, g));
                self.acc(grads, *col, |d| {
                    for (dv, row) in d.iter_mut().zip(g.chunks(c)) {
                        *dv -= row.iter().sum::<f64>();
                    }
                });
            }
            Op::LogSumExpRows(a) => {
                let t = self.value(*a);
                let c = t.cols();
                self.acc(grads, *a, |d| {
                    for (r, (drow, xrow)) in d.chunks_mut(c).zip(t.data().chunks(c)).enumerate() {
                        let lse = out.data()[r];
                        for (dx, x) in drow.iter_mut().zip(xrow) {
                            *dx += g[r] * (x - lse).exp();
                        }
                    }
                })
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.acc(grads, p, |d| {
                        for (drow, grow) in d.chunks_mut(w).zip(g.chunks(total)) {
                            add_into(drow, &grow[off..off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let c = self.value(*a).cols();
                let w = out.cols();
                self.acc(grads, *a, |d| {
                    for (drow, grow) in d.chunks_mut(c).zip(g.chunks(w)) {
                        add_into(&mut drow[*start..*start + w], grow);
                    }
                })
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.acc(grads, p, |d| add_into(d, &g[off..off + len]));
                    off += len;
                }
            }
            Op::SliceRows(a, start) => {
                let c = out.cols();
                self.acc(grads, *a, |d| add_into(&mut d[start * c..start * c + g.len()], g))
            }
            Op::GatherRows(a, idx) => {
                let c = out.cols();
                self.acc(grads, *a, |d| {
                    for (k, &i) in idx.iter().enumerate() {
                        add_into(&mut d[i * c..(i + 1) * c], &g[k * c..(k + 1) * c]);
                    }
                })
            }
            Op::Reshape(a) => self.acc(grads, *a, |d| add_into(d, g)),
            Op::Patchify(a, geo) => self.acc(grads, *a, |d| {
                let (ph, pw) = (geo.h / geo.k, geo.w / geo.k);
                let pc = geo.k * geo.k * geo.c;
                let run = geo.k * geo.c;
                for img in 0..geo.n {
                    for py in 0..ph {
                        for px in 0..pw {
                            let o = ((img * ph + py) * pw + px) * pc;
                            for dy in 0..geo.k {
                                let y = py * geo.k + dy;
                                let s = ((img * geo.h + y) * geo.w + px * geo.k) * geo.c;
                                let gs = o + dy * run;
                                add_into(&mut d[s..s + run], &g[gs..gs + run]);
                            }
                        }
                    }
                }
            }),
            Op::Upsample2x(a, geo) => self.acc(grads, *a, |d| {
                let (oh, ow) = (2 * geo.h, 2 * geo.w);
                for img in 0..geo.n {
                    for y in 0..oh {
                        for x in 0..ow {
                            let s = ((img * geo.h + y / 2) * geo.w + x / 2) * geo.c;
                            let gs = ((img * oh + y) * ow + x) * geo.c;
                            add_into(&mut d[s..s + geo.c], &g[gs..gs + geo.c]);
                        }
                    }
                }
            }),
            Op::RowMatVec(mat, vec) => {
                let (tm, tv) = (self.value(*mat), self.value(*vec));
                let q = tv.cols();
                let p = out.cols();
                let r = out.rows();
                self.acc(grads, *mat, |d| {
                    for i in 0..r {
                        let v = tv.row_slice(i);
                        for a in 0..p {
                            let ga = g[i * p + a];
                            let base = i * p * q + a * q;
                            for b in 0..q {
                                d[base + b] += ga * v[b];
                            }
                        }
                    }
                });
                self.acc(grads, *vec, |d| {
                    for i in 0..r {
                        let m = tm.row_slice(i);
                        for a in 0..p {
                            let ga = g[i * p + a];
                            for b in 0..q {
                                d[i * q + b] += ga * m[a * q + b];
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let v = tape.param(Tensor::row(&[1.0, -2.0, 3.5]));
        let s = tape.sum(v);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(v).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn squared_norm_gradient_is_twice_v() {
        let mut tape = Tape::new();
        let data = [0.3, -1.2, 2.0, 0.0];
        let v = tape.param(Tensor::row(&data));
        let sq = tape.square(v);
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        let want: Vec<f64> = data.iter().map(|x| 2.0 * x).collect();
        assert_eq!(g.get(v).unwrap(), want.as_slice());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let v = tape.param(Tensor::row(&[1.0, 2.0]));
        let t = tape.tanh(v);
        assert!(matches!(tape.backward(t), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn inputs_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::row(&[1.0, 2.0]));
        let w = tape.param(Tensor::row(&[0.5, 0.5]));
        let p = tape.mul(x, w);
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get(w).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn hinge_is_zero_below_margin() {
        let mut tape = Tape::new();
        let v = tape.param(Tensor::row(&[-0.5, 0.0, 0.25]));
        let h = tape.hinge(v);
        assert_eq!(tape.value(h).data(), &[0.0, 0.0, 0.25]);
        let s = tape.sum(h);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(v).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn patchify_then_upsample_layout() {
        // one 2x2 RGB image, k = 2 -> a single patch holding the whole image
        let img: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let geo = PatchGeom { n: 1, h: 2, w: 2, c: 3, k: 2 };
        let mut tape = Tape::new();
        let x = tape.input(Tensor::matrix(1, 12, img.clone()));
        let p = tape.patchify(x, geo);
        assert_eq!(tape.value(p).data(), img.as_slice());
        let small = tape.input(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]));
        let up = tape.upsample2x(small, PatchGeom { n: 1, h: 1, w: 1, c: 3, k: 2 });
        assert_eq!(tape.value(up).data(), &[1.0, 2.0, 3.0].repeat(4)[..]);
    }

    #[test]
    fn logsumexp_is_stable() {
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
