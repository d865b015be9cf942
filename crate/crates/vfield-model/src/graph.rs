//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! The model forward pass is written once against the [`Cx`] trait and
//! executed either eagerly ([`Eager`], inference) or on a recording tape
//! ([`Tape`], training). Handles returned by `Eager` are reference counted
//! so intermediates are freed as soon as the caller drops them; tape
//! handles index an arena that survives until backward.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::params::ParamSet;

const LN_EPS: f64 = 1e-5;

/// Execution context for the model forward pass.
pub trait Cx {
    type H: Clone;

    fn constant(&mut self, a: Array2<f64>) -> Self::H;
    fn shared(&mut self, a: Arc<Array2<f64>>) -> Self::H;
    /// Fetch parameter `idx` of the bound parameter set.
    fn param(&mut self, idx: usize) -> Self::H;

    /// a (r x k) * b (k x c)
    fn matmul(&mut self, a: &Self::H, b: &Self::H) -> Self::H;
    /// a (r x k) * b^T (c x k)
    fn matmul_tb(&mut self, a: &Self::H, b: &Self::H) -> Self::H;
    /// a^T (m x r) * b (m x c)
    fn matmul_ta(&mut self, a: &Self::H, b: &Self::H) -> Self::H;
    fn add(&mut self, a: &Self::H, b: &Self::H) -> Self::H;
    fn sub(&mut self, a: &Self::H, b: &Self::H) -> Self::H;
    /// Broadcast-add a 1 x c row (typically a bias parameter).
    fn add_row(&mut self, a: &Self::H, bias: &Self::H) -> Self::H;
    /// Elementwise a * scale + shift with constant per-column vectors.
    fn affine_cols(&mut self, a: &Self::H, scale: &[f64], shift: &[f64]) -> Self::H;
    fn mul(&mut self, a: &Self::H, b: &Self::H) -> Self::H;
    fn scale(&mut self, a: &Self::H, c: f64) -> Self::H;
    /// Multiply row i by mask[i] (constant).
    fn mask_rows(&mut self, a: &Self::H, mask: &[f64]) -> Self::H;
    /// a (r x c) / d (r x 1), rowwise broadcast.
    fn div_col(&mut self, a: &Self::H, d: &Self::H) -> Self::H;
    /// ELU(x) + 1: positive feature map for linear attention.
    fn elu1(&mut self, a: &Self::H) -> Self::H;
    fn gelu(&mut self, a: &Self::H) -> Self::H;
    fn layer_norm(&mut self, x: &Self::H, gain: &Self::H, bias: &Self::H) -> Self::H;
    /// Row-wise softmax; `bias` is an optional constant row added to the
    /// logits first (used for masking with large negative entries).
    fn softmax_rows(&mut self, a: &Self::H, bias: Option<&[f64]>) -> Self::H;
    fn concat_cols(&mut self, parts: &[Self::H]) -> Self::H;
    fn slice_cols(&mut self, a: &Self::H, start: usize, len: usize) -> Self::H;
    fn concat_rows(&mut self, parts: &[Self::H]) -> Self::H;
    fn sum_rows(&mut self, a: &Self::H) -> Self::H;
    fn mean_all(&mut self, a: &Self::H) -> Self::H;
    fn exp(&mut self, a: &Self::H) -> Self::H;
    fn neg(&mut self, a: &Self::H) -> Self::H;
    fn abs(&mut self, a: &Self::H) -> Self::H;
    /// Inverted dropout; identity in inference contexts.
    fn dropout(&mut self, a: &Self::H, rate: f64) -> Self::H;

    fn value<'a>(&'a self, h: &'a Self::H) -> &'a Array2<f64>;
}

// ---------------------------------------------------------------------------
// shared math
// ---------------------------------------------------------------------------

fn gelu_forward(x: f64) -> f64 {
    let u = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3));
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + 0.044715 * x.powi(3));
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
}

fn elu1_forward(x: f64) -> f64 {
    if x > 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

fn layer_norm_forward(x: &Array2<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> Array2<f64> {
    let c = x.ncols() as f64;
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let mean = row.sum() / c;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gain[(0, j)] + bias[(0, j)];
        }
    }
    out
}

fn softmax_rows_forward(a: &Array2<f64>, bias: Option<&[f64]>) -> Array2<f64> {
    let mut out = a.clone();
    if let Some(b) = bias {
        for mut row in out.rows_mut() {
            for (v, &bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
    }
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// eager execution
// ---------------------------------------------------------------------------

/// Immediate evaluation; no gradients, dropout disabled.
pub struct Eager {
    params: Arc<ParamSet>,
}

impl Eager {
    pub fn new(params: Arc<ParamSet>) -> Self {
        Self { params }
    }
}

impl Cx for Eager {
    type H = Arc<Array2<f64>>;

    fn constant(&mut self, a: Array2<f64>) -> Self::H {
        Arc::new(a)
    }

    fn shared(&mut self, a: Arc<Array2<f64>>) -> Self::H {
        a
    }

    fn param(&mut self, idx: usize) -> Self::H {
        self.params.arrays[idx].clone()
    }

    fn matmul(&mut self, a: &Self::H, b: &Self::H) -> Self::H {
        Arc::new(a.dot(b.as_ref()))
    }

    fn matmul_tb(&mut self, a: &Self::H, b: &Self::H) -> Self::H {
        Arc::new(a.dot(&b.t()))
    }

    fn matmul_ta(&mut self, a: &Self::H, b: &Self::H) -> Self::H {
        Arc::new(a.t().dot(b.as_ref()))
    }

    fn add(&mut self, a: &Self::H, b: &Self::H) -> Self::H {
        Arc::new(a.as_ref() + b.as_ref())
    }

    fn sub(&mut self, a: &Self::H, b: &Self::H) -> Self::H {
        Arc::new(a.as_ref() - b.as_ref())
    }

    fn add_row(&mut self, a: &Self::H, bias: &Self::H) -> Self::H {
        Arc::new(a.as_ref() + &bias.row(0))
    }

    fn affine_cols(&mut self, a: &Self::H, scale: &[f64], shift: &[f64]) -> Self::H {
        let mut out = a.as_ref().clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * scale[j] + shift[j];
            }
        }
        Arc::new(out)
    }

    fn mul(&mut self, a: &Self::H, b: &Self::H) -> Self::H {
        Arc::new(a.as_ref() * b.as_ref())
    }

    fn scale(&mut self, a: &Self::H, c: f64) -> Self::H {
        Arc::new(a.as_ref() * c)
    }

    fn mask_rows(&mut self, a: &Self::H, mask: &[f64]) -> Self::H {
        let mut out = a.as_ref().clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| v * mask[i]);
        }
        Arc::new(out)
    }

    fn div_col(&mut self, a: &Self::H, d: &Self::H) -> Self::H {
        let mut out = a.as_ref().clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let den = d[(i, 0)];
            row.mapv_inplace(|v| v / den);
        }
        Arc::new(out)
    }

    fn elu1(&mut self, a: &Self::H) -> Self::H {
        Arc::new(a.mapv(elu1_forward))
    }

    fn gelu(&mut self, a: &Self::H) -> Self::H {
        Arc::new(a.mapv(gelu_forward))
    }

    fn layer_norm(&mut self, x: &Self::H, gain: &Self::H, bias: &Self::H) -> Self::H {
        Arc::new(layer_norm_forward(x, gain, bias))
    }

    fn softmax_rows(&mut self, a: &Self::H, bias: Option<&[f64]>) -> Self::H {
        Arc::new(softmax_rows_forward(a, bias))
    }

    fn concat_cols(&mut self, parts: &[Self::H]) -> Self::H {
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Arc::new(ndarray::concatenate(Axis(1), &views).expect("column concat"))
    }

    fn slice_cols(&mut self, a: &Self::H, start: usize, len: usize) -> Self::H {
        Arc::new(a.slice(ndarray::s![.., start..start + len]).to_owned())
    }

    fn concat_rows(&mut self, parts: &[Self::H]) -> Self::H {
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Arc::new(ndarray::concatenate(Axis(0), &views).expect("row concat"))
    }

    fn sum_rows(&mut self, a: &Self::H) -> Self::H {
        Arc::new(a.sum_axis(Axis(0)).insert_axis(Axis(0)))
    }

    fn mean_all(&mut self, a: &Self::H) -> Self::H {
        let n = (a.nrows() * a.ncols()) as f64;
        Arc::new(Array2::from_elem((1, 1), a.sum() / n))
    }

    fn exp(&mut self, a: &Self::H) -> Self::H {
        Arc::new(a.mapv(f64::exp))
    }

    fn neg(&mut self, a: &Self::H) -> Self::H {
        Arc::new(a.mapv(|v| -v))
    }

    fn abs(&mut self, a: &Self::H) -> Self::H {
        Arc::new(a.mapv(f64::abs))
    }

    fn dropout(&mut self, a: &Self::H, _rate: f64) -> Self::H {
        a.clone()
    }

    fn value<'a>(&'a self, h: &'a Self::H) -> &'a Array2<f64> {
        h.as_ref()
    }
}

// ---------------------------------------------------------------------------
// recording tape
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Value {
    Own(Array2<f64>),
    Shared(Arc<Array2<f64>>),
}

impl Value {
    fn get(&self) -> &Array2<f64> {
        match self {
            Value::Own(a) => a,
            Value::Shared(a) => a.as_ref(),
        }
    }
}

enum Op {
    Leaf,
    Param(usize),
    MatMul(NodeId, NodeId),
    MatMulTB(NodeId, NodeId),
    MatMulTA(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    AffineCols(NodeId, Vec<f64>),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MaskRows(NodeId, Vec<f64>),
    DivCol(NodeId, NodeId),
    Elu1(NodeId),
    Gelu(NodeId),
    LayerNorm(NodeId, NodeId, NodeId),
    SoftmaxRows(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    ConcatRows(Vec<NodeId>),
    SumRows(NodeId),
    MeanAll(NodeId),
    Exp(NodeId),
    Neg(NodeId),
    Abs(NodeId),
    MulConst(NodeId, Array2<f64>),
}

struct Node {
    value: Value,
    op: Op,
}

/// Mode of a recording tape: inference (no dropout) or training with an
/// owned dropout stream.
pub enum TapeMode {
    Inference,
    Train { dropout_rng: ChaCha8Rng },
}

/// Arena-based tape; build the graph forward, then call [`Tape::backward`].
pub struct Tape {
    params: Arc<ParamSet>,
    nodes: Vec<Node>,
    mode: TapeMode,
}

impl Tape {
    pub fn new(params: Arc<ParamSet>, mode: TapeMode) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
            mode,
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node {
            value: Value::Own(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn val(&self, id: NodeId) -> &Array2<f64> {
        self.nodes[id.0].value.get()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Reverse sweep from a scalar output node. Returns per-parameter
    /// gradient accumulation (None where a parameter was never touched).
    pub fn backward(&self, output: NodeId) -> Vec<Option<Array2<f64>>> {
        let out = self.val(output);
        assert_eq!(out.dim(), (1, 1), "backward expects a scalar output");

        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::ones((1, 1)));
        let mut param_grads: Vec<Option<Array2<f64>>> =
            (0..self.params.arrays.len()).map(|_| None).collect();

        for i in (0..self.nodes.len()).rev() {
            let gy = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let send = |grads: &mut Vec<Option<Array2<f64>>>, id: NodeId, g: Array2<f64>| {
                match &mut grads[id.0] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g),
                }
            };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(p) => match &mut param_grads[*p] {
                    Some(acc) => *acc += &gy,
                    slot @ None => *slot = Some(gy),
                },
                Op::MatMul(a, b) => {
                    let ga = gy.dot(&self.val(*b).t());
                    let gb = self.val(*a).t().dot(&gy);
                    send(&mut grads, *a, ga);
                    send(&mut grads, *b, gb);
                }
                Op::MatMulTB(a, b) => {
                    let ga = gy.dot(self.val(*b));
                    let gb = gy.t().dot(self.val(*a));
                    send(&mut grads, *a, ga);
                    send(&mut grads, *b, gb);
                }
                Op::MatMulTA(a, b) => {
                    let ga = self.val(*b).dot(&gy.t());
                    let gb = self.val(*a).dot(&gy);
                    send(&mut grads, *a, ga);
                    send(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    send(&mut grads, *a, gy.clone());
                    send(&mut grads, *b, gy);
                }
                Op::Sub(a, b) => {
                    send(&mut grads, *b, gy.mapv(|v| -v));
                    send(&mut grads, *a, gy);
                }
                Op::AddRow(a, bias) => {
                    let gb = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    send(&mut grads, *bias, gb);
                    send(&mut grads, *a, gy);
                }
                Op::AffineCols(a, scale) => {
                    let mut ga = gy;
                    for mut row in ga.rows_mut() {
                        for (j, v) in row.iter_mut().enumerate() {
                            *v *= scale[j];
                        }
                    }
                    send(&mut grads, *a, ga);
                }
                Op::Mul(a, b) => {
                    let ga = &gy * self.val(*b);
                    let gb = &gy * self.val(*a);
                    send(&mut grads, *a, ga);
                    send(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => send(&mut grads, *a, gy.mapv(|v| v * c)),
                Op::MaskRows(a, mask) => {
                    let mut ga = gy;
                    for (r, mut row) in ga.rows_mut().into_iter().enumerate() {
                        row.mapv_inplace(|v| v * mask[r]);
                    }
                    send(&mut grads, *a, ga);
                }
                Op::DivCol(a, d) => {
                    let dval = self.val(*d);
                    let y = self.val(NodeId(i));
                    let mut gd = Array2::zeros(dval.raw_dim());
                    let mut ga = gy;
                    for (r, mut row) in ga.rows_mut().into_iter().enumerate() {
                        let den = dval[(r, 0)];
                        let mut acc = 0.0;
                        for (j, v) in row.iter_mut().enumerate() {
                            acc += *v * y[(r, j)];
                            *v /= den;
                        }
                        gd[(r, 0)] = -acc / den;
                    }
                    send(&mut grads, *a, ga);
                    send(&mut grads, *d, gd);
                }
                Op::Elu1(a) => {
                    // d/dx (elu(x)+1) is 1 for x > 0 and e^x (the stored
                    // output value) otherwise.
                    let x = self.val(*a);
                    let y = self.val(NodeId(i));
                    let mut ga = Array2::zeros(x.raw_dim());
                    ndarray::Zip::from(&mut ga).and(&gy).and(x).and(y).for_each(
                        |out, &g, &xv, &yv| {
                            *out = if xv > 0.0 { g } else { g * yv };
                        },
                    );
                    send(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let x = self.val(*a);
                    let mut ga = gy;
                    ga.zip_mut_with(x, |g, &xv| *g *= gelu_derivative(xv));
                    send(&mut grads, *a, ga);
                }
                Op::LayerNorm(x, gain, bias) => {
                    let xv = self.val(*x);
                    let gv = self.val(*gain);
                    let c = xv.ncols() as f64;
                    let mut gx = Array2::zeros(xv.raw_dim());
                    let mut ggain = Array2::zeros((1, xv.ncols()));
                    let mut gbias = Array2::zeros((1, xv.ncols()));
                    for r in 0..xv.nrows() {
                        let row = xv.row(r);
                        let mean = row.sum() / c;
                        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        // xhat and dxhat
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        let mut xhat = vec![0.0; xv.ncols()];
                        let mut dxhat = vec![0.0; xv.ncols()];
                        for j in 0..xv.ncols() {
                            xhat[j] = (row[j] - mean) * inv;
                            dxhat[j] = gy[(r, j)] * gv[(0, j)];
                            m1 += dxhat[j];
                            m2 += dxhat[j] * xhat[j];
                            ggain[(0, j)] += gy[(r, j)] * xhat[j];
                            gbias[(0, j)] += gy[(r, j)];
                        }
                        m1 /= c;
                        m2 /= c;
                        for j in 0..xv.ncols() {
                            gx[(r, j)] = inv * (dxhat[j] - m1 - xhat[j] * m2);
                        }
                    }
                    send(&mut grads, *x, gx);
                    send(&mut grads, *gain, ggain);
                    send(&mut grads, *bias, gbias);
                }
                Op::SoftmaxRows(a) => {
                    let p = self.val(NodeId(i));
                    let mut ga = Array2::zeros(p.raw_dim());
                    for r in 0..p.nrows() {
                        let dot: f64 = (0..p.ncols()).map(|j| gy[(r, j)] * p[(r, j)]).sum();
                        for j in 0..p.ncols() {
                            ga[(r, j)] = p[(r, j)] * (gy[(r, j)] - dot);
                        }
                    }
                    send(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for pid in parts {
                        let w = self.val(*pid).ncols();
                        let g = gy.slice(ndarray::s![.., start..start + w]).to_owned();
                        send(&mut grads, *pid, g);
                        start += w;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let av = self.val(*a);
                    let mut ga = Array2::zeros(av.raw_dim());
                    ga.slice_mut(ndarray::s![.., *start..start + len]).assign(&gy);
                    send(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for pid in parts {
                        let h = self.val(*pid).nrows();
                        let g = gy.slice(ndarray::s![start..start + h, ..]).to_owned();
                        send(&mut grads, *pid, g);
                        start += h;
                    }
                }
                Op::SumRows(a) => {
                    let rows = self.val(*a).nrows();
                    let mut ga = Array2::zeros((rows, gy.ncols()));
                    for mut row in ga.rows_mut() {
                        row.assign(&gy.row(0));
                    }
                    send(&mut grads, *a, ga);
                }
                Op::MeanAll(a) => {
                    let av = self.val(*a);
                    let n = (av.nrows() * av.ncols()) as f64;
                    let g = Array2::from_elem(av.raw_dim(), gy[(0, 0)] / n);
                    send(&mut grads, *a, g);
                }
                Op::Exp(a) => {
                    let y = self.val(NodeId(i));
                    send(&mut grads, *a, &gy * y);
                }
                Op::Neg(a) => send(&mut grads, *a, gy.mapv(|v| -v)),
                Op::Abs(a) => {
                    let x = self.val(*a);
                    let mut ga = gy;
                    ga.zip_mut_with(x, |g, &xv| {
                        *g *= if xv > 0.0 {
                            1.0
                        } else if xv < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    send(&mut grads, *a, ga);
                }
                Op::MulConst(a, m) => {
                    send(&mut grads, *a, &gy * m);
                }
            }
        }
        param_grads
    }
}

impl Cx for Tape {
    type H = NodeId;

    fn constant(&mut self, a: Array2<f64>) -> NodeId {
        self.push(a, Op::Leaf)
    }

    fn shared(&mut self, a: Arc<Array2<f64>>) -> NodeId {
        self.nodes.push(Node {
            value: Value::Shared(a),
            op: Op::Leaf,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn param(&mut self, idx: usize) -> NodeId {
        self.nodes.push(Node {
            value: Value::Shared(self.params.arrays[idx].clone()),
            op: Op::Param(idx),
        });
        NodeId(self.nodes.len() - 1)
    }

    fn matmul(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let v = self.val(*a).dot(self.val(*b));
        self.push(v, Op::MatMul(*a, *b))
    }

    fn matmul_tb(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let v = self.val(*a).dot(&self.val(*b).t());
        self.push(v, Op::MatMulTB(*a, *b))
    }

    fn matmul_ta(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let v = self.val(*a).t().dot(self.val(*b));
        self.push(v, Op::MatMulTA(*a, *b))
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let v = self.val(*a) + self.val(*b);
        self.push(v, Op::Add(*a, *b))
    }

    fn sub(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let v = self.val(*a) - self.val(*b);
        self.push(v, Op::Sub(*a, *b))
    }

    fn add_row(&mut self, a: &NodeId, bias: &NodeId) -> NodeId {
        let v = self.val(*a) + &self.val(*bias).row(0);
        self.push(v, Op::AddRow(*a, *bias))
    }

    fn affine_cols(&mut self, a: &NodeId, scale: &[f64], shift: &[f64]) -> NodeId {
        let mut v = self.val(*a).clone();
        for mut row in v.rows_mut() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = *x * scale[j] + shift[j];
            }
        }
        self.push(v, Op::AffineCols(*a, scale.to_vec()))
    }

    fn mul(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let v = self.val(*a) * self.val(*b);
        self.push(v, Op::Mul(*a, *b))
    }

    fn scale(&mut self, a: &NodeId, c: f64) -> NodeId {
        let v = self.val(*a).mapv(|x| x * c);
        self.push(v, Op::Scale(*a, c))
    }

    fn mask_rows(&mut self, a: &NodeId, mask: &[f64]) -> NodeId {
        let mut v = self.val(*a).clone();
        for (r, mut row) in v.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|x| x * mask[r]);
        }
        self.push(v, Op::MaskRows(*a, mask.to_vec()))
    }

    fn div_col(&mut self, a: &NodeId, d: &NodeId) -> NodeId {
        let dv = self.val(*d);
        let mut v = self.val(*a).clone();
        for (r, mut row) in v.rows_mut().into_iter().enumerate() {
            let den = dv[(r, 0)];
            row.mapv_inplace(|x| x / den);
        }
        self.push(v, Op::DivCol(*a, *d))
    }

    fn elu1(&mut self, a: &NodeId) -> NodeId {
        let v = self.val(*a).mapv(elu1_forward);
        self.push(v, Op::Elu1(*a))
    }

    fn gelu(&mut self, a: &NodeId) -> NodeId {
        let v = self.val(*a).mapv(gelu_forward);
        self.push(v, Op::Gelu(*a))
    }

    fn layer_norm(&mut self, x: &NodeId, gain: &NodeId, bias: &NodeId) -> NodeId {
        let v = layer_norm_forward(self.val(*x), self.val(*gain), self.val(*bias));
        self.push(v, Op::LayerNorm(*x, *gain, *bias))
    }

    fn softmax_rows(&mut self, a: &NodeId, bias: Option<&[f64]>) -> NodeId {
        let v = softmax_rows_forward(self.val(*a), bias);
        self.push(v, Op::SoftmaxRows(*a))
    }

    fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.val(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("column concat");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    fn slice_cols(&mut self, a: &NodeId, start: usize, len: usize) -> NodeId {
        let v = self.val(*a).slice(ndarray::s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(*a, start, len))
    }

    fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.val(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("row concat");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    fn sum_rows(&mut self, a: &NodeId) -> NodeId {
        let v = self.val(*a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(v, Op::SumRows(*a))
    }

    fn mean_all(&mut self, a: &NodeId) -> NodeId {
        let av = self.val(*a);
        let n = (av.nrows() * av.ncols()) as f64;
        let v = Array2::from_elem((1, 1), av.sum() / n);
        self.push(v, Op::MeanAll(*a))
    }

    fn exp(&mut self, a: &NodeId) -> NodeId {
        let v = self.val(*a).mapv(f64::exp);
        self.push(v, Op::Exp(*a))
    }

    fn neg(&mut self, a: &NodeId) -> NodeId {
        let v = self.val(*a).mapv(|x| -x);
        self.push(v, Op::Neg(*a))
    }

    fn abs(&mut self, a: &NodeId) -> NodeId {
        let v = self.val(*a).mapv(f64::abs);
        self.push(v, Op::Abs(*a))
    }

    fn dropout(&mut self, a: &NodeId, rate: f64) -> NodeId {
        let mask = match &mut self.mode {
            TapeMode::Train { dropout_rng } if rate > 0.0 => {
                let keep = 1.0 - rate;
                let dim = self.nodes[a.0].value.get().raw_dim();
                let mut m = Array2::zeros(dim);
                for v in m.iter_mut() {
                    *v = if dropout_rng.gen_bool(rate) { 0.0 } else { 1.0 / keep };
                }
                m
            }
            _ => return *a,
        };
        let v = self.val(*a) * &mask;
        self.push(v, Op::MulConst(*a, mask))
    }

    fn value<'a>(&'a self, h: &'a NodeId) -> &'a Array2<f64> {
        self.val(*h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ParamSet, ParamSpec};
    use rand::SeedableRng;

    /// Finite-difference check of d(scalar out)/d(param 0) for an
    /// arbitrary graph builder, on every coordinate of param 0.
    fn check_gradient<F>(shapes: &[(usize, usize)], build: F)
    where
        F: Fn(&mut Tape, &[NodeId]) -> NodeId,
    {
        let spec = ParamSpec {
            entries: shapes
                .iter()
                .enumerate()
                .map(|(i, &(r, c))| (format!("p{i}"), (r, c)))
                .collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let base = ParamSet::init_uniform(&spec, 0.8, &mut rng);

        let run = |params: Arc<ParamSet>| -> (f64, Vec<Option<Array2<f64>>>) {
            let mut tape = Tape::new(params, TapeMode::Inference);
            let hs: Vec<NodeId> = (0..shapes.len()).map(|i| tape.param(i)).collect();
            let out = build(&mut tape, &hs);
            let loss = tape.value(&out)[(0, 0)];
            let grads = tape.backward(out);
            (loss, grads)
        };

        let (_, grads) = run(Arc::new(base.clone()));
        let eps = 1e-6;
        for p in 0..shapes.len() {
            let (r, c) = shapes[p];
            let analytic = grads[p].clone().unwrap_or_else(|| Array2::zeros((r, c)));
            for i in 0..r {
                for j in 0..c {
                    let perturbed = |delta: f64| {
                        let mut set = base.clone();
                        let mut arr = set.arrays[p].as_ref().clone();
                        arr[(i, j)] += delta;
                        set.arrays[p] = Arc::new(arr);
                        set
                    };
                    let (lp, _) = run(Arc::new(perturbed(eps)));
                    let (lm, _) = run(Arc::new(perturbed(-eps)));
                    let fd = (lp - lm) / (2.0 * eps);
                    let a = analytic[(i, j)];
                    let denom = fd.abs().max(a.abs()).max(1e-4);
                    assert!(
                        (fd - a).abs() / denom < 1e-5,
                        "param {p} ({i},{j}): fd {fd} vs analytic {a}"
                    );
                }
            }
        }
    }

    #[test]
    fn matmul_chain_gradients() {
        check_gradient(&[(3, 4), (4, 2), (1, 2)], |t, p| {
            let y = t.matmul(&p[0], &p[1]);
            let y = t.add_row(&y, &p[2]);
            let y = t.gelu(&y);
            t.mean_all(&y)
        });
    }

    #[test]
    fn transpose_matmul_gradients() {
        check_gradient(&[(3, 4), (3, 2), (5, 4)], |t, p| {
            let a = t.matmul_ta(&p[0], &p[1]); // 4x2
            let b = t.matmul_tb(&p[2], &p[0]); // 5x3
            let sa = t.mean_all(&a);
            let sb = t.mean_all(&b);
            t.add(&sa, &sb)
        });
    }

    #[test]
    fn elementwise_gradients() {
        check_gradient(&[(2, 3), (2, 3)], |t, p| {
            let m = t.mul(&p[0], &p[1]);
            let s = t.sub(&m, &p[1]);
            let e = t.elu1(&s);
            let x = t.exp(&p[0]);
            let q = t.div_col_safe(&e, &x);
            t.mean_all(&q)
        });
    }

    impl Tape {
        /// Helper for tests: divide by the first column of x (positive).
        fn div_col_safe(&mut self, a: &NodeId, x: &NodeId) -> NodeId {
            let col = self.slice_cols(x, 0, 1);
            self.div_col(a, &col)
        }
    }

    #[test]
    fn softmax_and_layernorm_gradients() {
        check_gradient(&[(3, 5), (1, 5), (1, 5)], |t, p| {
            let ln = t.layer_norm(&p[0], &p[1], &p[2]);
            let sm = t.softmax_rows(&ln, Some(&[0.0, 0.0, -1e30, 0.0, 0.0]));
            let ab = t.abs(&sm);
            t.mean_all(&ab)
        });
    }

    #[test]
    fn structural_op_gradients() {
        check_gradient(&[(2, 3), (2, 2), (4, 5)], |t, p| {
            let cat = t.concat_cols(&[p[0], p[1]]); // 2x5
            let rows = t.concat_rows(&[cat, p[2].clone()]); // 6x5
            let sl = t.slice_cols(&rows, 1, 3);
            let ms = t.mask_rows(&sl, &[1.0, 0.0, 1.0, 1.0, 0.5, 1.0]);
            let sm = t.sum_rows(&ms);
            let ng = t.neg(&sm);
            let sc = t.scale(&ng, 0.7);
            let af = t.affine_cols(&sc, &[1.0, -2.0, 0.5], &[0.1, 0.0, -0.3]);
            t.mean_all(&af)
        });
    }

    #[test]
    fn eager_and_tape_agree() {
        let spec = ParamSpec {
            entries: vec![("w".into(), (4, 4)), ("g".into(), (1, 4)), ("b".into(), (1, 4))],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = Arc::new(ParamSet::init_uniform(&spec, 0.5, &mut rng));
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.3);

        fn run<C: Cx>(cx: &mut C, x: Array2<f64>) -> Array2<f64> {
            let xin = cx.constant(x);
            let w = cx.param(0);
            let g = cx.param(1);
            let b = cx.param(2);
            let y = cx.matmul(&xin, &w);
            let y = cx.layer_norm(&y, &g, &b);
            let y = cx.gelu(&y);
            let y = cx.softmax_rows(&y, None);
            cx.value(&y).clone()
        }

        let mut eager = Eager::new(params.clone());
        let mut tape = Tape::new(params, TapeMode::Inference);
        let a = run(&mut eager, x.clone());
        let b = run(&mut tape, x);
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_is_identity_in_inference_and_rescales_in_training() {
        let spec = ParamSpec {
            entries: vec![("w".into(), (8, 8))],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = Arc::new(ParamSet::init_uniform(&spec, 0.5, &mut rng));

        let mut inf = Tape::new(params.clone(), TapeMode::Inference);
        let w = inf.param(0);
        let d = inf.dropout(&w, 0.5);
        assert_eq!(inf.value(&d), inf.value(&w));

        let mut train = Tape::new(
            params.clone(),
            TapeMode::Train {
                dropout_rng: ChaCha8Rng::seed_from_u64(11),
            },
        );
        let w = train.param(0);
        let d = train.dropout(&w, 0.5);
        let kept: Vec<f64> = train
            .value(&d)
            .iter()
            .zip(params.arrays[0].iter())
            .filter(|(&dv, _)| dv != 0.0)
            .map(|(&dv, &wv)| dv / wv)
            .collect();
        assert!(!kept.is_empty());
        for k in kept {
            assert!((k - 2.0).abs() < 1e-12);
        }
    }
}
