//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its value; [`Tape::backward`]
//! walks the nodes in reverse and returns the gradient of a scalar output
//! with respect to every parameter leaf.

use std::rc::Rc;

use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Lower clip of sigmoid probabilities in the BCE value.
pub const BCE_EPS: f64 = 1e-7;
const LN_EPS: f64 = 1e-5;

enum Op {
    Const,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    LayerNorm(Var),
    Silu(Var),
    Sigmoid(Var),
    ConcatRows(Vec<Var>),
    Gather(Var, Rc<[usize]>),
    Sum(Var),
    DivScalar(Var, Var, f64),
    Dice(Var, Rc<[f64]>),
    Bce(Var, Rc<[f64]>),
    Mse(Var, Rc<[f64]>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    sigmoid(x)
}

/// `1 - 2 sum(p g) / (sum(p) + sum(g))`, zero when both sums vanish.
pub(crate) fn dice_value(p: &[f64], g: &[f64]) -> f64 {
    let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let s: f64 = p.iter().sum::<f64>() + g.iter().sum::<f64>();
    if s == 0.0 {
        0.0
    } else {
        1.0 - 2.0 * inter / s
    }
}

/// Mean binary cross-entropy with probabilities clipped to `[eps, 1 - eps]`.
pub(crate) fn bce_value(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len().max(1) as f64;
    let total: f64 = p
        .iter()
        .zip(g)
        .map(|(&p, &g)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            g * p.ln() + (1.0 - g) * (1.0 - p).ln()
        })
        .sum();
    -total / n
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const)
    }

    /// Leaf whose gradient is reported under `id` by [`Tape::backward`].
    pub fn param(&mut self, id: usize, t: Tensor) -> Var {
        self.push(t, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "add shapes");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let v = Tensor::from_vec(x.rows, x.cols, data);
        self.push(v, Op::Add(a, b))
    }

    /// Adds the `1 x cols` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (x, r) = (self.value(a), self.value(b));
        assert_eq!((r.rows, r.cols), (1, x.cols), "add_row shapes");
        let mut v = x.clone();
        for row in v.data.chunks_mut(x.cols) {
            for (p, q) in row.iter_mut().zip(&r.data) {
                *p += q;
            }
        }
        self.push(v, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "mul shapes");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let v = Tensor::from_vec(x.rows, x.cols, data);
        self.push(v, Op::Mul(a, b))
    }

    /// Multiplies every row of `a` elementwise by the `1 x cols` row `b`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (x, r) = (self.value(a), self.value(b));
        assert_eq!((r.rows, r.cols), (1, x.cols), "mul_row shapes");
        let mut v = x.clone();
        for row in v.data.chunks_mut(x.cols) {
            for (p, q) in row.iter_mut().zip(&r.data) {
                *p *= q;
            }
        }
        self.push(v, Op::MulRow(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let v = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|p| p * s).collect());
        self.push(v, Op::Scale(a, s))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for row in v.data.chunks_mut(x.cols) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for p in row.iter_mut() {
                *p = (*p - m).exp();
                s += *p;
            }
            for p in row.iter_mut() {
                *p /= s;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        let n = x.cols as f64;
        for row in v.data.chunks_mut(x.cols) {
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for p in row.iter_mut() {
                *p = (*p - mean) * inv;
            }
        }
        self.push(v, Op::LayerNorm(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|&p| p * sigmoid(p)).collect());
        self.push(v, Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|&p| sigmoid(p)).collect());
        self.push(v, Op::Sigmoid(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows widths");
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Output element `i` is input element `index[i]`, reshaped to `rows x cols`.
    pub fn gather(&mut self, a: Var, index: Rc<[usize]>, rows: usize, cols: usize) -> Var {
        assert_eq!(index.len(), rows * cols, "gather index length");
        let x = self.value(a);
        let data = index.iter().map(|&i| x.data[i]).collect();
        self.push(Tensor::from_vec(rows, cols, data), Op::Gather(a, index))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let cols = self.value(a).cols;
        let index: Rc<[usize]> = (start * cols..(start + len) * cols).collect();
        self.gather(a, index, len, cols)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = (self.value(a).rows, self.value(a).cols);
        let index: Rc<[usize]> = (0..r * c).map(|k| (k % r) * c + k / r).collect();
        self.gather(a, index, c, r)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// `a / (s + eps)` for a `1 x 1` node `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var, eps: f64) -> Var {
        let d = self.value(s).item() + eps;
        let x = self.value(a);
        let v = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|p| p / d).collect());
        self.push(v, Op::DivScalar(a, s, eps))
    }

    /// Dice loss of `sigmoid(logits)` against `target`.
    pub fn dice_with_logits(&mut self, logits: Var, target: Rc<[f64]>) -> Var {
        let p: Vec<f64> = self.value(logits).data.iter().map(|&z| sigmoid(z)).collect();
        assert_eq!(p.len(), target.len(), "dice target length");
        let v = dice_value(&p, &target);
        self.push(Tensor::scalar(v), Op::Dice(logits, target))
    }

    /// Mean BCE of `sigmoid(logits)` against `target`.
    ///
    /// The value clips probabilities to `[BCE_EPS, 1 - BCE_EPS]`; the gradient
    /// is the unclipped `(sigmoid(z) - g) / N`.
    pub fn bce_with_logits(&mut self, logits: Var, target: Rc<[f64]>) -> Var {
        let p: Vec<f64> = self.value(logits).data.iter().map(|&z| sigmoid(z)).collect();
        assert_eq!(p.len(), target.len(), "bce target length");
        let v = bce_value(&p, &target);
        self.push(Tensor::scalar(v), Op::Bce(logits, target))
    }

    /// Mean squared error against `target`.
    pub fn mse(&mut self, a: Var, target: Rc<[f64]>) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), target.len(), "mse target length");
        let n = x.len().max(1) as f64;
        let v = x.data.iter().zip(target.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n;
        self.push(Tensor::scalar(v), Op::Mse(a, target))
    }

    /// Gradients of the scalar `output` with respect to every parameter leaf,
    /// indexed by parameter id; parameters not on the tape get `None`.
    pub fn backward(&self, output: Var, num_params: usize) -> Vec<Option<Tensor>> {
        assert_eq!(self.value(output).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(Tensor::scalar(1.0));
        let mut params: Vec<Option<Tensor>> = vec![None; num_params];

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Const => {}
                Op::Param(id) => match &mut params[*id] {
                    Some(t) => t.add_assign(&g),
                    slot => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.matmul_t(bv));
                    acc(&mut grads, *b, av.t_matmul(&g));
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.matmul(bv));
                    acc(&mut grads, *b, g.t_matmul(av));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let mut rb = Tensor::zeros(1, g.cols);
                    for row in g.data.chunks(g.cols) {
                        for (p, q) in rb.data.iter_mut().zip(row) {
                            *p += q;
                        }
                    }
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *b, rb);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = g.data.iter().zip(&bv.data).map(|(p, q)| p * q).collect();
                    let gb = g.data.iter().zip(&av.data).map(|(p, q)| p * q).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, ga));
                    acc(&mut grads, *b, Tensor::from_vec(g.rows, g.cols, gb));
                }
                Op::MulRow(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = g.clone();
                    let mut gb = Tensor::zeros(1, g.cols);
                    for (r, row) in ga.data.chunks_mut(g.cols).enumerate() {
                        for c in 0..g.cols {
                            gb.data[c] += row[c] * av.data[r * g.cols + c];
                            row[c] *= bv.data[c];
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => {
                    let data = g.data.iter().map(|p| p * s).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, data));
                }
                Op::SoftmaxRows(a) => {
                    let mut ga = g.clone();
                    for (r, row) in ga.data.chunks_mut(g.cols).enumerate() {
                        let yr = y.row(r);
                        let dot: f64 = row.iter().zip(yr).map(|(p, q)| p * q).sum();
                        for (p, q) in row.iter_mut().zip(yr) {
                            *p = q * (*p - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm(a) => {
                    let x = self.value(*a);
                    let n = x.cols as f64;
                    let mut ga = g.clone();
                    for (r, row) in ga.data.chunks_mut(g.cols).enumerate() {
                        let xr = x.row(r);
                        let mean = xr.iter().sum::<f64>() / n;
                        let var = xr.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        let yr = y.row(r);
                        let mg = row.iter().sum::<f64>() / n;
                        let mgy = row.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / n;
                        for (p, q) in row.iter_mut().zip(yr) {
                            *p = inv * (*p - mg - q * mgy);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Silu(a) => {
                    let x = self.value(*a);
                    let data = g
                        .data
                        .iter()
                        .zip(&x.data)
                        .map(|(p, &z)| {
                            let s = sigmoid(z);
                            p * s * (1.0 + z * (1.0 - s))
                        })
                        .collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, data));
                }
                Op::Sigmoid(a) => {
                    let data = g.data.iter().zip(&y.data).map(|(p, s)| p * s * (1.0 - s)).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, data));
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let t = self.value(*p);
                        let chunk = g.data[offset..offset + t.len()].to_vec();
                        offset += t.len();
                        acc(&mut grads, *p, Tensor::from_vec(t.rows, t.cols, chunk));
                    }
                }
                Op::Gather(a, index) => {
                    let x = self.value(*a);
                    let mut ga = Tensor::zeros(x.rows, x.cols);
                    for (k, &src) in index.iter().enumerate() {
                        ga.data[src] += g.data[k];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, Tensor::from_vec(x.rows, x.cols, vec![g.item(); x.len()]));
                }
                Op::DivScalar(a, s, eps) => {
                    let x = self.value(*a);
                    let d = self.value(*s).item() + eps;
                    let ga = g.data.iter().map(|p| p / d).collect();
                    let gs: f64 = -g.data.iter().zip(&x.data).map(|(p, q)| p * q).sum::<f64>() / (d * d);
                    acc(&mut grads, *a, Tensor::from_vec(g.rows, g.cols, ga));
                    acc(&mut grads, *s, Tensor::scalar(gs));
                }
                Op::Dice(a, target) => {
                    let x = self.value(*a);
                    let p: Vec<f64> = x.data.iter().map(|&z| sigmoid(z)).collect();
                    let inter: f64 = p.iter().zip(target.iter()).map(|(a, b)| a * b).sum();
                    let s: f64 = p.iter().sum::<f64>() + target.iter().sum::<f64>();
                    let gv = g.item();
                    let data = if s == 0.0 {
                        vec![0.0; p.len()]
                    } else {
                        p.iter()
                            .zip(target.iter())
                            .map(|(&pi, &gi)| gv * (-2.0 * (gi * s - inter) / (s * s)) * pi * (1.0 - pi))
                            .collect()
                    };
                    acc(&mut grads, *a, Tensor::from_vec(x.rows, x.cols, data));
                }
                Op::Bce(a, target) => {
                    let x = self.value(*a);
                    let n = x.len().max(1) as f64;
                    let gv = g.item();
                    let data = x
                        .data
                        .iter()
                        .zip(target.iter())
                        .map(|(&z, &t)| gv * (sigmoid(z) - t) / n)
                        .collect();
                    acc(&mut grads, *a, Tensor::from_vec(x.rows, x.cols, data));
                }
                Op::Mse(a, target) => {
                    let x = self.value(*a);
                    let n = x.len().max(1) as f64;
                    let gv = g.item();
                    let data = x
                        .data
                        .iter()
                        .zip(target.iter())
                        .map(|(p, q)| gv * 2.0 * (p - q) / n)
                        .collect();
                    acc(&mut grads, *a, Tensor::from_vec(x.rows, x.cols, data));
                }
            }
        }
        params
    }
}
