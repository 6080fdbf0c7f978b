//! Reverse-mode differentiation over vector-valued nodes.
//!
//! A [`Tape`] records the forward computation for one query and replays it
//! backwards, accumulating parameter gradients into a [`Gradients`] buffer.
//! Parameters are borrowed, never copied, so a tape is cheap to build and many
//! tapes may read the same [`ParameterSet`] concurrently.

use super::tensor::{Gradients, ParamId, ParameterSet};

pub type NodeId = usize;

#[derive(Debug)]
enum Op {
    Input,
    Row {
        param: ParamId,
        row: usize,
    },
    /// Sum of `W_k x_k` plus an optional bias.
    Linear {
        terms: Vec<(ParamId, NodeId)>,
        bias: Option<ParamId>,
    },
    /// Fused LSTM cell over pre-activation gates `[i, f, g, o]`; output `[h; c]`.
    LstmCell {
        gates: NodeId,
        c_prev: NodeId,
    },
    /// Valid 1D convolution followed by max over positions; `argmax[f]` is the
    /// winning position of filter `f`.
    ConvMax {
        w: ParamId,
        b: ParamId,
        rows: Vec<NodeId>,
        width: usize,
        argmax: Vec<usize>,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Concat(Vec<NodeId>),
    Slice {
        x: NodeId,
        start: usize,
    },
    Dot(NodeId, NodeId),
    Softmax(NodeId),
    WeightedSum {
        weights: NodeId,
        items: Vec<NodeId>,
    },
    Sum(Vec<NodeId>),
    Mask {
        x: NodeId,
        mask: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

pub struct Tape<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id].value[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite value from {op:?}");
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn zeros(&mut self, n: usize) -> NodeId {
        self.input(vec![0.0; n])
    }

    pub fn row(&mut self, param: ParamId, row: usize) -> NodeId {
        let value = self.params.get(param).row(row).to_vec();
        self.push(value, Op::Row { param, row })
    }

    pub fn linear(&mut self, terms: &[(ParamId, NodeId)], bias: Option<ParamId>) -> NodeId {
        let out = match (bias, terms.first()) {
            (Some(b), _) => self.params.get(b).len(),
            (None, Some((w, _))) => self.params.get(*w).rows(),
            (None, None) => panic!("linear node without terms or bias"),
        };
        let mut value = match bias {
            Some(b) => self.params.get(b).data.clone(),
            None => vec![0.0; out],
        };
        for &(w, x) in terms {
            let w = self.params.get(w);
            let x = &self.nodes[x].value;
            assert_eq!(w.rows(), out, "linear output width");
            assert_eq!(w.cols(), x.len(), "linear input width");
            let cols = x.len();
            for (o, v) in value.iter_mut().enumerate() {
                let row = &w.data[o * cols..(o + 1) * cols];
                *v += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        self.push(
            value,
            Op::Linear {
                terms: terms.to_vec(),
                bias,
            },
        )
    }

    pub fn lstm_cell(&mut self, gates: NodeId, c_prev: NodeId) -> NodeId {
        let z = &self.nodes[gates].value;
        let c0 = &self.nodes[c_prev].value;
        let h = c0.len();
        assert_eq!(z.len(), 4 * h);
        let mut value = vec![0.0; 2 * h];
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let g = z[2 * h + k].tanh();
            let o = sigmoid(z[3 * h + k]);
            let c = f * c0[k] + i * g;
            value[k] = o * c.tanh();
            value[h + k] = c;
        }
        self.push(value, Op::LstmCell { gates, c_prev })
    }

    /// Rows shorter than `width` positions are zero-padded.
    pub fn conv_max(&mut self, w: ParamId, b: ParamId, rows: &[NodeId], width: usize) -> NodeId {
        let wt = self.params.get(w);
        let bias = &self.params.get(b).data;
        let filters = bias.len();
        let d = wt.cols() / width;
        assert_eq!(wt.cols(), width * d);
        let positions = rows.len().saturating_sub(width) + 1;
        let mut value = vec![f64::NEG_INFINITY; filters];
        let mut argmax = vec![0; filters];
        for p in 0..positions {
            for (f, (best, arg)) in value.iter_mut().zip(argmax.iter_mut()).enumerate() {
                let wrow = &wt.data[f * width * d..(f + 1) * width * d];
                let mut s = bias[f];
                for k in 0..width {
                    if let Some(&r) = rows.get(p + k) {
                        let x = &self.nodes[r].value;
                        debug_assert_eq!(x.len(), d);
                        s += wrow[k * d..(k + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                if s > *best {
                    *best = s;
                    *arg = p;
                }
            }
        }
        self.push(
            value,
            Op::ConvMax {
                w,
                b,
                rows: rows.to_vec(),
                width,
                argmax,
            },
        )
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let value = self.nodes[x].value.iter().map(|&v| f(v)).collect();
        self.push(value, op)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x - y)
            .collect();
        self.push(value, Op::Sub(a, b))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut value = Vec::new();
        for &p in parts {
            value.extend_from_slice(&self.nodes[p].value);
        }
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.nodes[x].value[start..start + len].to_vec();
        self.push(value, Op::Slice { x, start })
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.len(), vb.len(), "dot width");
        let s = va.iter().zip(vb).map(|(x, y)| x * y).sum();
        self.push(vec![s], Op::Dot(a, b))
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x].value;
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut value: Vec<f64> = v.iter().map(|&s| (s - m).exp()).collect();
        let z: f64 = value.iter().sum();
        value.iter_mut().for_each(|p| *p /= z);
        debug_assert!(value.iter().all(|&p| p >= 0.0));
        debug_assert!((value.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        self.push(value, Op::Softmax(x))
    }

    pub fn weighted_sum(&mut self, weights: NodeId, items: &[NodeId]) -> NodeId {
        let w = &self.nodes[weights].value;
        assert_eq!(w.len(), items.len());
        let mut value = vec![0.0; self.nodes[items[0]].value.len()];
        for (&a, &it) in w.iter().zip(items) {
            axpy(&mut value, a, &self.nodes[it].value);
        }
        self.push(
            value,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        )
    }

    pub fn sum(&mut self, items: &[NodeId]) -> NodeId {
        let mut value = vec![0.0; self.nodes[items[0]].value.len()];
        for &it in items {
            axpy(&mut value, 1.0, &self.nodes[it].value);
        }
        self.push(value, Op::Sum(items.to_vec()))
    }

    /// Elementwise product with a constant (used for dropout).
    pub fn mask(&mut self, x: NodeId, mask: Vec<f64>) -> NodeId {
        let value = self.nodes[x].value.iter().zip(&mask).map(|(a, m)| a * m).collect();
        self.push(value, Op::Mask { x, mask })
    }

    /// Back-propagates `d root = 1` and adds parameter gradients into `grads`.
    pub fn backward(&self, root: NodeId, grads: &mut Gradients) {
        let mut g: Vec<Vec<f64>> = Vec::with_capacity(root + 1);
        g.resize_with(root + 1, Vec::new);
        g[root] = vec![1.0; self.nodes[root].value.len()];

        fn acc(g: &mut [Vec<f64>], id: NodeId, len: usize) -> &mut Vec<f64> {
            let slot = &mut g[id];
            if slot.is_empty() {
                slot.resize(len, 0.0);
            }
            slot
        }

        for id in (0..=root).rev() {
            let gy = std::mem::take(&mut g[id]);
            if gy.is_empty() {
                continue;
            }
            let node = &self.nodes[id];
            let len_of = |n: NodeId| self.nodes[n].value.len();
            match &node.op {
                Op::Input => {}
                Op::Row { param, row } => {
                    let cols = gy.len();
                    axpy(&mut grads.slot(*param)[row * cols..(row + 1) * cols], 1.0, &gy);
                }
                Op::Linear { terms, bias } => {
                    if let Some(b) = bias {
                        axpy(grads.slot(*b), 1.0, &gy);
                    }
                    for &(w, x) in terms {
                        let wt = self.params.get(w);
                        let xv = &self.nodes[x].value;
                        let cols = xv.len();
                        let gw = grads.slot(w);
                        for (o, &go) in gy.iter().enumerate() {
                            if go != 0.0 {
                                axpy(&mut gw[o * cols..(o + 1) * cols], go, xv);
                            }
                        }
                        let gx = acc(&mut g, x, cols);
                        for (o, &go) in gy.iter().enumerate() {
                            if go != 0.0 {
                                axpy(gx, go, &wt.data[o * cols..(o + 1) * cols]);
                            }
                        }
                    }
                }
                Op::LstmCell { gates, c_prev } => {
                    let z = &self.nodes[*gates].value;
                    let c0 = &self.nodes[*c_prev].value;
                    let h = c0.len();
                    let c = &node.value[h..];
                    let mut gz = vec![0.0; 4 * h];
                    let mut gc0 = vec![0.0; h];
                    for k in 0..h {
                        let i = sigmoid(z[k]);
                        let f = sigmoid(z[h + k]);
                        let gg = z[2 * h + k].tanh();
                        let o = sigmoid(z[3 * h + k]);
                        let tc = c[k].tanh();
                        let dh = gy[k];
                        let dc = gy[h + k] + dh * o * (1.0 - tc * tc);
                        gz[k] = dc * gg * i * (1.0 - i);
                        gz[h + k] = dc * c0[k] * f * (1.0 - f);
                        gz[2 * h + k] = dc * i * (1.0 - gg * gg);
                        gz[3 * h + k] = dh * tc * o * (1.0 - o);
                        gc0[k] = dc * f;
                    }
                    axpy(acc(&mut g, *gates, 4 * h), 1.0, &gz);
                    axpy(acc(&mut g, *c_prev, h), 1.0, &gc0);
                }
                Op::ConvMax {
                    w,
                    b,
                    rows,
                    width,
                    argmax,
                } => {
                    let wt = self.params.get(*w);
                    let d = wt.cols() / width;
                    axpy(grads.slot(*b), 1.0, &gy);
                    for (f, (&gf, &p)) in gy.iter().zip(argmax).enumerate() {
                        if gf == 0.0 {
                            continue;
                        }
                        let base = f * width * d;
                        for k in 0..*width {
                            let Some(&r) = rows.get(p + k) else { continue };
                            let span = base + k * d..base + (k + 1) * d;
                            axpy(&mut grads.slot(*w)[span.clone()], gf, &self.nodes[r].value);
                            axpy(acc(&mut g, r, d), gf, &wt.data[span]);
                        }
                    }
                }
                Op::Add(a, b) => {
                    axpy(acc(&mut g, *a, gy.len()), 1.0, &gy);
                    axpy(acc(&mut g, *b, gy.len()), 1.0, &gy);
                }
                Op::Sub(a, b) => {
                    axpy(acc(&mut g, *a, gy.len()), 1.0, &gy);
                    axpy(acc(&mut g, *b, gy.len()), -1.0, &gy);
                }
                Op::Tanh(x) => {
                    let gx = acc(&mut g, *x, gy.len());
                    for ((o, y), d) in gx.iter_mut().zip(&node.value).zip(&gy) {
                        *o += d * (1.0 - y * y);
                    }
                }
                Op::Relu(x) => {
                    let gx = acc(&mut g, *x, gy.len());
                    for ((o, y), d) in gx.iter_mut().zip(&node.value).zip(&gy) {
                        if *y > 0.0 {
                            *o += d;
                        }
                    }
                }
                Op::Softplus(x) => {
                    let xv = &self.nodes[*x].value;
                    let gx = acc(&mut g, *x, gy.len());
                    for ((o, v), d) in gx.iter_mut().zip(xv).zip(&gy) {
                        *o += d * sigmoid(*v);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = len_of(p);
                        axpy(acc(&mut g, p, n), 1.0, &gy[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = len_of(*x);
                    axpy(&mut acc(&mut g, *x, n)[*start..start + gy.len()], 1.0, &gy);
                }
                Op::Dot(a, b) => {
                    let (va, vb) = (self.nodes[*a].value.clone(), self.nodes[*b].value.clone());
                    axpy(acc(&mut g, *a, va.len()), gy[0], &vb);
                    axpy(acc(&mut g, *b, vb.len()), gy[0], &va);
                }
                Op::Softmax(x) => {
                    let p = &node.value;
                    let inner: f64 = p.iter().zip(&gy).map(|(a, b)| a * b).sum();
                    let gx = acc(&mut g, *x, p.len());
                    for ((o, pi), gi) in gx.iter_mut().zip(p).zip(&gy) {
                        *o += pi * (gi - inner);
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let w = &self.nodes[*weights].value;
                    let gw: Vec<f64> = items
                        .iter()
                        .map(|&it| self.nodes[it].value.iter().zip(&gy).map(|(a, b)| a * b).sum())
                        .collect();
                    axpy(acc(&mut g, *weights, w.len()), 1.0, &gw);
                    for (&a, &it) in w.iter().zip(items) {
                        axpy(acc(&mut g, it, gy.len()), a, &gy);
                    }
                }
                Op::Sum(items) => {
                    for &it in items {
                        axpy(acc(&mut g, it, gy.len()), 1.0, &gy);
                    }
                }
                Op::Mask { x, mask } => {
                    let gx = acc(&mut g, *x, gy.len());
                    for ((o, m), d) in gx.iter_mut().zip(mask).zip(&gy) {
                        *o += d * m;
                    }
                }
            }
        }
    }
}
