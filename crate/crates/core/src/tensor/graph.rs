//! Define-by-run reverse-mode autodiff over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as it computes values; `backward`
//! walks the tape in reverse and accumulates gradients. Parameters enter a
//! graph as leaves copied out of a [`ParamSet`]; `export_grads` adds their
//! accumulated gradients back into the set, so gradients from several
//! per-item graphs sum naturally across a batch.

use super::conv;
use super::optim::{ParamId, ParamSet};
use super::{Elem, Tensor};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("loss '{0}' is not finite")]
    NonFiniteLoss(String),
}

#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    Conv2d { x: usize, w: usize, b: Option<usize>, stride: (usize, usize) },
    ConvT2d { x: usize, w: usize, b: Option<usize>, stride: (usize, usize) },
    Swish { x: usize },
    LeakyRelu { x: usize, slope: f64 },
    Add { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    ConcatLast { parts: Vec<usize>, widths: Vec<usize> },
    TileMid { x: usize, copies: usize },
    BroadcastTime { x: usize, t: usize },
    Reshape { x: usize },
    MeanLast { x: usize },
    Rmse { a: usize, b: usize },
    Mse { a: usize, b: usize },
    MseConst { x: usize, target: f64 },
}

pub struct Graph<T: Elem = f32> {
    values: Vec<Tensor<T>>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
    param_ids: Vec<Option<ParamId>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Elem> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Elem> Graph<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            ops: Vec::new(),
            needs_grad: Vec::new(),
            param_ids: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        self.param_ids.push(None);
        self.grads.push(None);
        NodeId(self.values.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that accumulates a gradient (inputs under test, generated mels).
    pub fn var(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf copied from a parameter; `export_grads` routes its gradient back.
    pub fn param(&mut self, set: &ParamSet<T>, id: ParamId) -> NodeId {
        let node = self.push(set.value(id).clone(), Op::Leaf, true);
        self.param_ids[node.0] = Some(id);
        node
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    fn any_needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.needs_grad[i])
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: (usize, usize),
    ) -> NodeId {
        let y = conv::conv2d_forward(
            &self.values[x.0],
            &self.values[w.0],
            b.map(|b| &self.values[b.0]),
            stride,
        );
        let mut parents = vec![x.0, w.0];
        if let Some(b) = b {
            parents.push(b.0);
        }
        let needs = self.any_needs(&parents);
        self.push(
            y,
            Op::Conv2d { x: x.0, w: w.0, b: b.map(|b| b.0), stride },
            needs,
        )
    }

    pub fn conv2d_transposed(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: (usize, usize),
    ) -> NodeId {
        let y = conv::convt2d_forward(
            &self.values[x.0],
            &self.values[w.0],
            b.map(|b| &self.values[b.0]),
            stride,
        );
        let mut parents = vec![x.0, w.0];
        if let Some(b) = b {
            parents.push(b.0);
        }
        let needs = self.any_needs(&parents);
        self.push(
            y,
            Op::ConvT2d { x: x.0, w: w.0, b: b.map(|b| b.0), stride },
            needs,
        )
    }

    /// 1D convolution over `[T, C]`, kernel `[k, Cin, Cout]`, same padding.
    /// Runs through the 2D kernels with a unit frequency axis.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize) -> NodeId {
        let xs = self.values[x.0].shape().to_vec();
        let ws = self.values[w.0].shape().to_vec();
        assert_eq!(xs.len(), 2, "conv1d input must be [T, C], got {:?}", xs);
        assert_eq!(ws.len(), 3, "conv1d kernel must be [k, Cin, Cout], got {:?}", ws);
        let x3 = self.reshape(x, &[xs[0], 1, xs[1]]);
        let w4 = self.reshape(w, &[ws[0], 1, ws[1], ws[2]]);
        let y = self.conv2d(x3, w4, b, (stride, 1));
        let ys = self.values[y.0].shape().to_vec();
        self.reshape(y, &[ys[0], ys[2]])
    }

    pub fn swish(&mut self, x: NodeId) -> NodeId {
        let y = self.values[x.0].map(|v| v * sigmoid(v));
        let needs = self.needs_grad[x.0];
        self.push(y, Op::Swish { x: x.0 }, needs)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let s = T::from_f64(slope);
        let y = self.values[x.0].map(|v| if v >= T::ZERO { v } else { s * v });
        let needs = self.needs_grad[x.0];
        self.push(y, Op::LeakyRelu { x: x.0, slope }, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.values[a.0].shape(),
            self.values[b.0].shape(),
            "add shape mismatch"
        );
        let y = Tensor::new(
            self.values[a.0].shape(),
            self.values[a.0]
                .data()
                .iter()
                .zip(self.values[b.0].data())
                .map(|(&p, &q)| p + q)
                .collect(),
        );
        let needs = self.any_needs(&[a.0, b.0]);
        self.push(y, Op::Add { a: a.0, b: b.0 }, needs)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let cc = T::from_f64(c);
        let y = self.values[x.0].map(|v| v * cc);
        let needs = self.needs_grad[x.0];
        self.push(y, Op::Scale { x: x.0, c }, needs)
    }

    /// Concatenate along the last axis; leading dims must agree.
    pub fn concat_last(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let lead = {
            let s = self.values[parts[0].0].shape();
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.values[p.0].shape();
            assert_eq!(&s[..s.len() - 1], &lead[..], "concat_last leading dims differ");
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                let src = self.values[p.0].data();
                data.extend_from_slice(&src[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let needs = self.any_needs(&ids);
        self.push(Tensor::new(&shape, data), Op::ConcatLast { parts: ids, widths }, needs)
    }

    /// `[T, C] -> [T, copies, C]`, repeating each row.
    pub fn tile_mid(&mut self, x: NodeId, copies: usize) -> NodeId {
        let s = self.values[x.0].shape().to_vec();
        assert_eq!(s.len(), 2, "tile_mid input must be [T, C]");
        let (t, c) = (s[0], s[1]);
        let mut data = Vec::with_capacity(t * copies * c);
        for row in self.values[x.0].data().chunks(c) {
            for _ in 0..copies {
                data.extend_from_slice(row);
            }
        }
        let needs = self.needs_grad[x.0];
        self.push(Tensor::new(&[t, copies, c], data), Op::TileMid { x: x.0, copies }, needs)
    }

    /// `[C] -> [T, C]`, repeating the vector at every frame.
    pub fn broadcast_time(&mut self, x: NodeId, t: usize) -> NodeId {
        let s = self.values[x.0].shape().to_vec();
        assert_eq!(s.len(), 1, "broadcast_time input must be rank 1");
        let c = s[0];
        let mut data = Vec::with_capacity(t * c);
        for _ in 0..t {
            data.extend_from_slice(self.values[x.0].data());
        }
        let needs = self.needs_grad[x.0];
        self.push(Tensor::new(&[t, c], data), Op::BroadcastTime { x: x.0, t }, needs)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let y = self.values[x.0].clone().reshaped(shape);
        let needs = self.needs_grad[x.0];
        self.push(y, Op::Reshape { x: x.0 }, needs)
    }

    /// Mean over the last axis: `[.., C] -> [..]`.
    pub fn mean_last(&mut self, x: NodeId) -> NodeId {
        let s = self.values[x.0].shape().to_vec();
        assert!(!s.is_empty());
        let c = s[s.len() - 1];
        let inv = T::from_f64(1.0 / c as f64);
        let data: Vec<T> = self.values[x.0]
            .data()
            .chunks(c)
            .map(|row| {
                let mut acc = T::ZERO;
                for &v in row {
                    acc += v;
                }
                acc * inv
            })
            .collect();
        let needs = self.needs_grad[x.0];
        self.push(Tensor::new(&s[..s.len() - 1], data), Op::MeanLast { x: x.0 }, needs)
    }

    /// Root-mean-square error, a rank-0 node.
    pub fn rmse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.values[a.0].shape(),
            self.values[b.0].shape(),
            "rmse shape mismatch"
        );
        let n = self.values[a.0].len();
        let mut acc = T::ZERO;
        for (&p, &q) in self.values[a.0].data().iter().zip(self.values[b.0].data()) {
            let d = p - q;
            acc += d * d;
        }
        let v = (acc * T::from_f64(1.0 / n as f64)).sqrt();
        let needs = self.any_needs(&[a.0, b.0]);
        self.push(Tensor::scalar(v), Op::Rmse { a: a.0, b: b.0 }, needs)
    }

    /// Mean squared error, a rank-0 node.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.values[a.0].shape(),
            self.values[b.0].shape(),
            "mse shape mismatch"
        );
        let n = self.values[a.0].len();
        let mut acc = T::ZERO;
        for (&p, &q) in self.values[a.0].data().iter().zip(self.values[b.0].data()) {
            let d = p - q;
            acc += d * d;
        }
        let v = acc * T::from_f64(1.0 / n as f64);
        let needs = self.any_needs(&[a.0, b.0]);
        self.push(Tensor::scalar(v), Op::Mse { a: a.0, b: b.0 }, needs)
    }

    /// Mean squared error against a constant scalar target (LSGAN targets).
    pub fn mse_const(&mut self, x: NodeId, target: f64) -> NodeId {
        let tt = T::from_f64(target);
        let n = self.values[x.0].len();
        let mut acc = T::ZERO;
        for &p in self.values[x.0].data() {
            let d = p - tt;
            acc += d * d;
        }
        let v = acc * T::from_f64(1.0 / n as f64);
        let needs = self.needs_grad[x.0];
        self.push(Tensor::scalar(v), Op::MseConst { x: x.0, target }, needs)
    }

    pub fn backward(&mut self, loss: NodeId) -> Result<(), GraphError> {
        self.backward_seeded(loss, T::ONE)
    }

    /// Backward pass seeded with `seed` instead of 1 (batch-mean weighting).
    pub fn backward_seeded(&mut self, loss: NodeId, seed: T) -> Result<(), GraphError> {
        assert_eq!(self.values[loss.0].len(), 1, "backward target must be scalar");
        if !self.values[loss.0].item().is_finite() {
            return Err(GraphError::NonFiniteLoss(format!("{:?}", self.ops[loss.0])));
        }
        let shape = self.values[loss.0].shape().to_vec();
        self.accumulate(loss.0, Tensor::new(&shape, vec![seed]));
        for id in (0..=loss.0).rev() {
            if self.grads[id].is_none() || !self.needs_grad[id] {
                continue;
            }
            // Interior gradients are fully consumed here; only leaves keep
            // theirs for export/inspection.
            let g = if matches!(self.ops[id], Op::Leaf) {
                continue;
            } else {
                self.grads[id].take().expect("gradient present")
            };
            self.backprop_node(id, g);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: usize, delta: Tensor<T>) {
        if !self.needs_grad[id] {
            return;
        }
        match &mut self.grads[id] {
            Some(g) => {
                debug_assert_eq!(g.shape(), delta.shape());
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += *b;
                }
            }
            None => self.grads[id] = Some(delta),
        }
    }

    fn backprop_node(&mut self, id: usize, g: Tensor<T>) {
        match self.ops[id].clone() {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride } => {
                let (t_in, f_in) = (self.values[x].shape()[0], self.values[x].shape()[1]);
                let (kt, kf) = (self.values[w].shape()[0], self.values[w].shape()[1]);
                if self.needs_grad[x] {
                    let gx = conv::conv2d_input_grad(&g, &self.values[w], stride, (t_in, f_in));
                    self.accumulate(x, gx);
                }
                if self.needs_grad[w] {
                    let mut dw = Tensor::zeros(self.values[w].shape());
                    conv::conv2d_param_grads(&self.values[x], &g, stride, (kt, kf), dw.data_mut(), None);
                    self.accumulate(w, dw);
                }
                if let Some(b) = b {
                    if self.needs_grad[b] {
                        let cout = self.values[b].len();
                        let mut db = Tensor::zeros(&[cout]);
                        for row in g.data().chunks(cout) {
                            for (d, gv) in db.data_mut().iter_mut().zip(row) {
                                *d += *gv;
                            }
                        }
                        self.accumulate(b, db);
                    }
                }
            }
            Op::ConvT2d { x, w, b, stride } => {
                let (kt, kf) = (self.values[w].shape()[0], self.values[w].shape()[1]);
                if self.needs_grad[x] {
                    let gx = conv::convt2d_input_grad(&g, &self.values[w], stride);
                    self.accumulate(x, gx);
                }
                if self.needs_grad[w] {
                    let mut dw = Tensor::zeros(self.values[w].shape());
                    conv::convt2d_param_grads(&self.values[x], &g, stride, (kt, kf), dw.data_mut(), None);
                    self.accumulate(w, dw);
                }
                if let Some(b) = b {
                    if self.needs_grad[b] {
                        let cout = self.values[b].len();
                        let mut db = Tensor::zeros(&[cout]);
                        for row in g.data().chunks(cout) {
                            for (d, gv) in db.data_mut().iter_mut().zip(row) {
                                *d += *gv;
                            }
                        }
                        self.accumulate(b, db);
                    }
                }
            }
            Op::Swish { x } => {
                let gx = Tensor::new(
                    self.values[x].shape(),
                    self.values[x]
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| {
                            let s = sigmoid(v);
                            gv * (s + v * s * (T::ONE - s))
                        })
                        .collect(),
                );
                self.accumulate(x, gx);
            }
            Op::LeakyRelu { x, slope } => {
                let s = T::from_f64(slope);
                let gx = Tensor::new(
                    self.values[x].shape(),
                    self.values[x]
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| if v >= T::ZERO { gv } else { gv * s })
                        .collect(),
                );
                self.accumulate(x, gx);
            }
            Op::Add { a, b } => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g);
            }
            Op::Scale { x, c } => {
                let cc = T::from_f64(c);
                self.accumulate(x, g.map(|v| v * cc));
            }
            Op::ConcatLast { parts, widths } => {
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    if self.needs_grad[p] {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            let start = r * total + offset;
                            data.extend_from_slice(&g.data()[start..start + w]);
                        }
                        let gp = Tensor::new(self.values[p].shape(), data);
                        self.accumulate(p, gp);
                    }
                    offset += w;
                }
            }
            Op::TileMid { x, copies } => {
                let s = self.values[x].shape();
                let (t, c) = (s[0], s[1]);
                let mut gx = Tensor::zeros(&[t, c]);
                for ti in 0..t {
                    for k in 0..copies {
                        let src = (ti * copies + k) * c;
                        for ci in 0..c {
                            gx.data_mut()[ti * c + ci] += g.data()[src + ci];
                        }
                    }
                }
                self.accumulate(x, gx);
            }
            Op::BroadcastTime { x, t } => {
                let c = self.values[x].len();
                let mut gx = Tensor::zeros(&[c]);
                for ti in 0..t {
                    for ci in 0..c {
                        gx.data_mut()[ci] += g.data()[ti * c + ci];
                    }
                }
                self.accumulate(x, gx);
            }
            Op::Reshape { x } => {
                let gx = g.reshaped(self.values[x].shape());
                self.accumulate(x, gx);
            }
            Op::MeanLast { x } => {
                let s = self.values[x].shape();
                let c = s[s.len() - 1];
                let inv = T::from_f64(1.0 / c as f64);
                let mut data = Vec::with_capacity(self.values[x].len());
                for &gv in g.data() {
                    for _ in 0..c {
                        data.push(gv * inv);
                    }
                }
                self.accumulate(x, Tensor::new(s, data));
            }
            Op::Rmse { a, b } => {
                let gv = g.item();
                let val = self.values[id].item();
                let n = self.values[a].len();
                // d rmse / d a = (a - b) / (n * rmse); zero subgradient at rmse == 0
                if val.to_f64() > 0.0 {
                    let c = gv * T::from_f64(1.0 / n as f64) / val;
                    let diff: Vec<T> = self.values[a]
                        .data()
                        .iter()
                        .zip(self.values[b].data())
                        .map(|(&p, &q)| (p - q) * c)
                        .collect();
                    let shape = self.values[a].shape().to_vec();
                    if self.needs_grad[a] {
                        self.accumulate(a, Tensor::new(&shape, diff.clone()));
                    }
                    if self.needs_grad[b] {
                        self.accumulate(b, Tensor::new(&shape, diff.iter().map(|&d| -d).collect()));
                    }
                }
            }
            Op::Mse { a, b } => {
                let gv = g.item();
                let n = self.values[a].len();
                let c = gv * T::from_f64(2.0 / n as f64);
                let diff: Vec<T> = self.values[a]
                    .data()
                    .iter()
                    .zip(self.values[b].data())
                    .map(|(&p, &q)| (p - q) * c)
                    .collect();
                let shape = self.values[a].shape().to_vec();
                if self.needs_grad[a] {
                    self.accumulate(a, Tensor::new(&shape, diff.clone()));
                }
                if self.needs_grad[b] {
                    self.accumulate(b, Tensor::new(&shape, diff.iter().map(|&d| -d).collect()));
                }
            }
            Op::MseConst { x, target } => {
                let gv = g.item();
                let n = self.values[x].len();
                let tt = T::from_f64(target);
                let c = gv * T::from_f64(2.0 / n as f64);
                let gx = Tensor::new(
                    self.values[x].shape(),
                    self.values[x].data().iter().map(|&p| (p - tt) * c).collect(),
                );
                self.accumulate(x, gx);
            }
        }
    }

    /// Adds the gradients of parameter leaves into the set's grad buffers.
    pub fn export_grads(&self, set: &mut ParamSet<T>) {
        for (idx, pid) in self.param_ids.iter().enumerate() {
            if let (Some(pid), Some(g)) = (pid, &self.grads[idx]) {
                set.add_grad(*pid, g);
            }
        }
    }

    /// Like [`Graph::export_grads`] but only for the listed parameters;
    /// everything else in the graph stays frozen.
    pub fn export_grads_filtered(
        &self,
        set: &mut ParamSet<T>,
        allowed: &std::collections::HashSet<crate::tensor::ParamId>,
    ) {
        for (idx, pid) in self.param_ids.iter().enumerate() {
            if let (Some(pid), Some(g)) = (pid, &self.grads[idx]) {
                if allowed.contains(pid) {
                    set.add_grad(*pid, g);
                }
            }
        }
    }
}

fn sigmoid<T: Elem>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}
