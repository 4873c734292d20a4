//! A small reverse-mode autodiff tape over dense row-major matrices.
//!
//! A [`Graph`] borrows a [`ParamSet`] and records every operation applied to
//! it. Parameters are never copied into the tape. `backward` walks the tape
//! once in reverse and returns one gradient per parameter.

use std::rc::Rc;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::params::ParamSet;
use crate::diffusion::{huber, huber_derivative};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044715;

enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `a + b` with `b` a single row broadcast over `a`'s rows.
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Mat),
    Gelu(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Mat,
        inv_std: Vec<f64>,
    },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    MaskedSoftmax(Var),
    /// `out[i, j] = table[0, index[i, j]]`
    Gather(Var, Rc<Array2<usize>>),
    /// `masked_softmax(scale * logits + table[0, index])`
    BiasedSoftmax {
        logits: Var,
        table: Var,
        scale: f64,
        index: Rc<Array2<usize>>,
    },
    Huber {
        pred: Var,
        target: Mat,
        delta: f64,
    },
    Mse {
        pred: Var,
        target: Mat,
    },
}

struct Node {
    op: Op,
    value: Option<Mat>,
    /// Whether any parameter feeds this node.
    needs_grad: bool,
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Param(_) => vec![],
            Op::MatMul(a, b) | Op::MatMulT(a, b) | Op::Add(a, b) | Op::AddRow(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::MulConst(a, _)
            | Op::Gelu(a)
            | Op::Tanh(a)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _)
            | Op::MeanRows(a)
            | Op::MaskedSoftmax(a)
            | Op::Gather(a, _) => vec![*a],
            Op::BiasedSoftmax { logits, table, .. } => vec![*logits, *table],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
            Op::Huber { pred, .. } | Op::Mse { pred, .. } => vec![*pred],
        }
    }
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let th = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        match (&self.nodes[v.0].op, &self.nodes[v.0].value) {
            (Op::Param(i), _) => self.params.value(*i).view(),
            (_, Some(m)) => m.view(),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, op: Op, value: Option<Mat>) -> Var {
        let needs_grad = matches!(op, Op::Param(_)) || op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(Op::Input, Some(m))
    }

    pub fn param(&mut self, index: usize) -> Var {
        self.push(Op::Param(index), None)
    }

    pub fn param_named(&mut self, name: &str) -> Var {
        let idx = self
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"));
        self.param(idx)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b));
        self.push(Op::MatMul(a, b), Some(v))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulT(a, b), Some(v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.value(a) + &self.value(b);
        self.push(Op::Add(a, b), Some(v))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a single row");
        let v = &self.value(a) + &self.value(row);
        self.push(Op::AddRow(a, row), Some(v))
    }

    /// `x · w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul(x, w);
        match b {
            Some(b) => self.add_row(y, b),
            None => y,
        }
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = &self.value(a) * c;
        self.push(Op::Scale(a, c), Some(v))
    }

    /// Elementwise product with a constant (used for dropout masks).
    pub fn mul_const(&mut self, a: Var, m: Mat) -> Var {
        let v = &self.value(a) * &m;
        self.push(Op::MulConst(a, m), Some(v))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(Op::Gelu(a), Some(v))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), Some(v))
    }

    /// Row-wise layer normalization with a learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut normalized = Mat::zeros(xv.raw_dim());
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for (row, mut out) in xv.rows().into_iter().zip(normalized.rows_mut()) {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            out.zip_mut_with(&row, |o, &v| *o = (v - mean) * is);
            inv_std.push(is);
        }
        let v = &normalized * &self.value(gamma) + self.value(beta);
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            Some(v),
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(Op::SliceCols(a, start), Some(v))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        self.push(Op::ConcatCols(parts.to_vec()), Some(v))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(Op::SliceRows(a, start), Some(v))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows column mismatch");
        self.push(Op::ConcatRows(parts.to_vec()), Some(v))
    }

    /// Column means as a single row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        self.push(Op::MeanRows(a), Some(v))
    }

    /// Row softmax over entries where `mask` is true; masked entries are 0.
    pub fn masked_softmax(&mut self, a: Var, mask: &Array2<bool>) -> Var {
        let av = self.value(a);
        assert_eq!(av.dim(), mask.dim(), "softmax mask shape");
        let mut out = Mat::zeros(av.raw_dim());
        for ((row, m), mut o) in av.rows().into_iter().zip(mask.rows()).zip(out.rows_mut()) {
            let max = row
                .iter()
                .zip(m.iter())
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for ((o, &v), &ok) in o.iter_mut().zip(row.iter()).zip(m.iter()) {
                if ok {
                    *o = (v - max).exp();
                    sum += *o;
                }
            }
            o.mapv_inplace(|v| v / sum);
        }
        self.push(Op::MaskedSoftmax(a), Some(out))
    }

    pub fn gather(&mut self, table: Var, index: Rc<Array2<usize>>) -> Var {
        let tv = self.value(table);
        assert_eq!(tv.nrows(), 1, "gather table must be a single row");
        let v = index.mapv(|i| tv[[0, i]]);
        self.push(Op::Gather(table, index), Some(v))
    }

    /// Attention weights from raw scores: row softmax of
    /// `scale * logits + table[0, index]` over entries where `mask` is true.
    pub fn biased_softmax(
        &mut self,
        logits: Var,
        scale: f64,
        table: Var,
        index: Rc<Array2<usize>>,
        mask: &Array2<bool>,
    ) -> Var {
        let lv = self.value(logits);
        let tv = self.value(table);
        assert_eq!(tv.nrows(), 1, "bias table must be a single row");
        assert_eq!(lv.dim(), mask.dim(), "softmax mask shape");
        assert_eq!(lv.dim(), index.dim(), "bias index shape");
        let (rows, cols) = lv.dim();
        let trow = tv.row(0);
        let bias = trow.as_slice().expect("param rows are contiguous");
        let mut out = Mat::zeros((rows, cols));
        for i in 0..rows {
            let l = lv.row(i);
            let m = mask.row(i);
            let idx = index.row(i);
            let mut o = out.row_mut(i);
            let o = o.as_slice_mut().expect("fresh matrix rows are contiguous");
            let mut max = f64::NEG_INFINITY;
            for j in 0..cols {
                if m[j] {
                    let z = scale * l[j] + bias[idx[j]];
                    o[j] = z;
                    max = max.max(z);
                }
            }
            let mut sum = 0.0;
            for j in 0..cols {
                if m[j] {
                    let e = (o[j] - max).exp();
                    o[j] = e;
                    sum += e;
                }
            }
            let inv = 1.0 / sum;
            o.iter_mut().for_each(|v| *v *= inv);
        }
        self.push(
            Op::BiasedSoftmax {
                logits,
                table,
                scale,
                index,
            },
            Some(out),
        )
    }

    /// Mean Huber penalty between `pred` and a constant target, as a 1x1.
    pub fn huber(&mut self, pred: Var, target: Mat, delta: f64) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.dim(), target.dim(), "huber target shape");
        let total = Zip::from(&pv)
            .and(&target)
            .fold(0.0, |acc, &p, &t| acc + huber(p - t, delta));
        let v = Mat::from_elem((1, 1), total / target.len() as f64);
        self.push(Op::Huber { pred, target, delta }, Some(v))
    }

    pub fn mse(&mut self, pred: Var, target: Mat) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.dim(), target.dim(), "mse target shape");
        let total = Zip::from(&pv)
            .and(&target)
            .fold(0.0, |acc, &p, &t| acc + (p - t) * (p - t));
        let v = Mat::from_elem((1, 1), total / target.len() as f64);
        self.push(Op::Mse { pred, target }, Some(v))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "not a scalar node");
        m[[0, 0]]
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    /// Parameters that do not influence the loss get `None`.
    pub fn backward(&self, loss: Var) -> Vec<Option<Mat>> {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::ones((1, 1)));
        let mut param_grads: Vec<Option<Mat>> = (0..self.params.len()).map(|_| None).collect();

        fn acc(slot: &mut Option<Mat>, g: Mat) {
            match slot {
                Some(s) => *s += &g,
                None => *slot = Some(g),
            }
        }
        let needs: Vec<bool> = self.nodes.iter().map(|n| n.needs_grad).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !needs[i] {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => acc(&mut param_grads[*p], g),
                Op::MatMul(a, b) => {
                    if needs[a.0] {
                        acc(&mut grads[a.0], g.dot(&self.value(*b).t()));
                    }
                    if needs[b.0] {
                        acc(&mut grads[b.0], self.value(*a).t().dot(&g));
                    }
                }
                Op::MatMulT(a, b) => {
                    if needs[a.0] {
                        acc(&mut grads[a.0], g.dot(&self.value(*b)));
                    }
                    if needs[b.0] {
                        acc(&mut grads[b.0], g.t().dot(&self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads[b.0], g.clone());
                    acc(&mut grads[a.0], g);
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads[b.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads[a.0], g);
                }
                Op::Scale(a, c) => acc(&mut grads[a.0], g * *c),
                Op::MulConst(a, m) => acc(&mut grads[a.0], g * m),
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    acc(
                        &mut grads[a.0],
                        Zip::from(&g).and(&x).map_collect(|&g, &x| g * gelu_derivative(x)),
                    );
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(
                        &mut grads[a.0],
                        Zip::from(&g).and(y).map_collect(|&g, &y| g * (1.0 - y * y)),
                    );
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    acc(&mut grads[beta.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(
                        &mut grads[gamma.0],
                        (&g * normalized).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    let dxhat = &g * &self.value(*gamma);
                    let d = dxhat.ncols() as f64;
                    let mut dx = Mat::zeros(dxhat.raw_dim());
                    for r in 0..dxhat.nrows() {
                        let (dh, xh) = (dxhat.row(r), normalized.row(r));
                        let sum = dh.sum();
                        let dot = dh.dot(&xh);
                        let is = inv_std[r];
                        for c in 0..dh.len() {
                            dx[[r, c]] = is / d * (d * dh[c] - sum - xh[c] * dot);
                        }
                    }
                    acc(&mut grads[x.0], dx);
                }
                Op::SliceCols(a, start) => {
                    let mut full = Mat::zeros(self.value(*a).raw_dim());
                    full.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads[a.0], full);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads[p.0], g.slice(s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut full = Mat::zeros(self.value(*a).raw_dim());
                    full.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads[a.0], full);
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(&mut grads[p.0], g.slice(s![at..at + h, ..]).to_owned());
                        at += h;
                    }
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).nrows();
                    let row = &g / n as f64;
                    let full = row.broadcast((n, g.ncols())).unwrap().to_owned();
                    acc(&mut grads[a.0], full);
                }
                Op::MaskedSoftmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut dx = &g * y;
                    for (mut d, yr) in dx.rows_mut().into_iter().zip(y.rows()) {
                        let s = d.sum();
                        d.zip_mut_with(&yr, |d, &y| *d -= y * s);
                    }
                    acc(&mut grads[a.0], dx);
                }
                Op::Gather(table, index) => {
                    let mut gt = Mat::zeros(self.value(*table).raw_dim());
                    Zip::from(&g).and(&**index).for_each(|&g, &i| gt[[0, i]] += g);
                    acc(&mut grads[table.0], gt);
                }
                Op::BiasedSoftmax {
                    logits,
                    table,
                    scale,
                    index,
                } => {
                    let y = node.value.as_ref().unwrap();
                    let mut dz = &g * y;
                    for (mut d, yr) in dz.rows_mut().into_iter().zip(y.rows()) {
                        let s = d.sum();
                        d.zip_mut_with(&yr, |d, &y| *d -= y * s);
                    }
                    if needs[table.0] {
                        let mut gt = Mat::zeros(self.value(*table).raw_dim());
                        Zip::from(&dz).and(&**index).for_each(|&g, &i| gt[[0, i]] += g);
                        acc(&mut grads[table.0], gt);
                    }
                    if needs[logits.0] {
                        dz *= *scale;
                        acc(&mut grads[logits.0], dz);
                    }
                }
                Op::Huber { pred, target, delta } => {
                    let scale = g[[0, 0]] / target.len() as f64;
                    let pv = self.value(*pred);
                    let d = Zip::from(&pv)
                        .and(target)
                        .map_collect(|&p, &t| scale * huber_derivative(p - t, *delta));
                    acc(&mut grads[pred.0], d);
                }
                Op::Mse { pred, target } => {
                    let scale = 2.0 * g[[0, 0]] / target.len() as f64;
                    let pv = self.value(*pred);
                    let d = Zip::from(&pv).and(target).map_collect(|&p, &t| scale * (p - t));
                    acc(&mut grads[pred.0], d);
                }
            }
        }
        param_grads
    }
}
