//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation as a node in creation order, which is
//! also a topological order: inputs always precede the nodes that use them.
//! [`Graph::backward`] walks the nodes once in reverse and accumulates
//! gradients into every input that needs one.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::search::NeighborGraph;

use super::kernels::{self, leaky_relu, leaky_relu_grad};
use super::params::{ParamGrads, ParamId, ParameterStore};
use super::Matrix;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    RowSoftmax(Var),
    Scale { x: Var, scale: Var },
    WeightedGather {
        x: Var,
        indices: Arc<Vec<usize>>,
        weights: Option<Arc<Vec<f64>>>,
        width: usize,
    },
    ConcatCols(Var, Var),
    EdgeScores {
        lifted: Var,
        attention: Var,
        graph: Arc<NeighborGraph>,
        slope: f64,
    },
    NeighborSum {
        alpha: Var,
        lifted: Var,
        graph: Arc<NeighborGraph>,
    },
    CrossEntropy {
        logits: Var,
        targets: Arc<Vec<usize>>,
        point_weights: Vec<f64>,
        probs: Matrix,
    },
    Dot { x: Var, coeffs: Matrix },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` needed one.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: Vec<(ParamId, Var)>,
    activation_signature: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl Graph {
    pub fn new() -> Self {
        Self {
            activation_signature: FNV_OFFSET,
            ..Self::default()
        }
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn into_value(mut self, v: Var) -> Matrix {
        std::mem::replace(&mut self.nodes[v.0].value, Matrix::zeros(0, 0))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of the sign pattern seen by every piecewise-linear activation.
    ///
    /// Two evaluations with the same signature took the same linear piece
    /// everywhere, which is what finite-difference checks need to know.
    pub fn activation_signature(&self) -> u64 {
        self.activation_signature
    }

    fn record_signs(&mut self, values: &[f64]) {
        let mut h = self.activation_signature;
        for &v in values {
            h = (h ^ u64::from(v > 0.0)).wrapping_mul(FNV_PRIME);
        }
        self.activation_signature = h;
    }

    /// A constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// An input whose gradient is tracked (used for input gradient checks).
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a parameter. Repeated binds of the same id share one node.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_nodes.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.param_nodes.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// `A · Bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul_nt(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMulNT(a, b), ng))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = kernels::add_bias(self.value(x), self.value(bias))?;
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::AddBias(x, bias), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut value = self.value(a).clone();
        for (v, w) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *v -= w;
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = kernels::relu(self.value(x));
        let signs = self.value(x).data().to_vec();
        self.record_signs(&signs);
        let ng = self.needs(x);
        self.push(value, Op::Relu(x), ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v = leaky_relu(*v, slope);
        }
        let signs = self.value(x).data().to_vec();
        self.record_signs(&signs);
        let ng = self.needs(x);
        self.push(value, Op::LeakyRelu(x, slope), ng)
    }

    pub fn row_softmax(&mut self, x: Var) -> Var {
        let value = kernels::row_softmax(self.value(x));
        let ng = self.needs(x);
        self.push(value, Op::RowSoftmax(x), ng)
    }

    /// Multiplies every entry of `x` by the `1 × 1` value `scale`.
    pub fn scale(&mut self, x: Var, scale: Var) -> Result<Var> {
        if self.value(scale).shape() != (1, 1) {
            return Err(Error::shape("scale", "scale must be 1x1"));
        }
        let s = self.value(scale).get(0, 0);
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v *= s;
        }
        let ng = self.needs(x) || self.needs(scale);
        Ok(self.push(value, Op::Scale { x, scale }, ng))
    }

    /// `out[i] = x[indices[i]]`.
    pub fn gather_rows(&mut self, x: Var, indices: Arc<Vec<usize>>) -> Result<Var> {
        self.weighted_gather(x, indices, None, 1)
    }

    /// `out[i] = Σ_t weights[i·width + t] · x[indices[i·width + t]]`, with
    /// unit weights when `weights` is `None`.
    pub fn weighted_gather(
        &mut self,
        x: Var,
        indices: Arc<Vec<usize>>,
        weights: Option<Arc<Vec<f64>>>,
        width: usize,
    ) -> Result<Var> {
        let src = self.value(x);
        if width == 0 || indices.len() % width != 0 {
            return Err(Error::shape("weighted_gather", "index count not a multiple of width"));
        }
        if let Some(w) = &weights {
            if w.len() != indices.len() {
                return Err(Error::shape("weighted_gather", "weights and indices differ in length"));
            }
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.rows()) {
            return Err(Error::shape(
                "weighted_gather",
                format!("index {bad} out of range for {} rows", src.rows()),
            ));
        }
        let rows = indices.len() / width;
        let cols = src.cols();
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let out = value.row_mut(i);
            for t in 0..width {
                let slot = i * width + t;
                let w = weights.as_ref().map_or(1.0, |w| w[slot]);
                for (o, s) in out.iter_mut().zip(src.row(indices[slot])) {
                    *o += w * s;
                }
            }
        }
        let ng = self.needs(x);
        Ok(self.push(
            value,
            Op::WeightedGather {
                x,
                indices,
                weights,
                width,
            },
            ng,
        ))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(Error::shape(
                "concat_cols",
                format!("{} rows vs {} rows", va.rows(), vb.rows()),
            ));
        }
        let mut value = Matrix::zeros(va.rows(), va.cols() + vb.cols());
        for i in 0..va.rows() {
            let row = value.row_mut(i);
            row[..va.cols()].copy_from_slice(va.row(i));
            row[va.cols()..].copy_from_slice(vb.row(i));
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatCols(a, b), ng))
    }

    fn check_graph_rows(&self, op: &'static str, lifted: Var, graph: &NeighborGraph) -> Result<()> {
        if graph.source_size() != self.value(lifted).rows() {
            return Err(Error::shape(
                op,
                format!(
                    "graph over {} points, features have {} rows",
                    graph.source_size(),
                    self.value(lifted).rows()
                ),
            ));
        }
        Ok(())
    }

    /// Raw edge coefficients `e[i][k] = a · leaky(L[j_k] − L[center_i])`
    /// where `L` is the lifted feature matrix and `a` a `c × 1` column.
    pub fn edge_scores(
        &mut self,
        lifted: Var,
        attention: Var,
        graph: Arc<NeighborGraph>,
        slope: f64,
    ) -> Result<Var> {
        self.check_graph_rows("edge_scores", lifted, &graph)?;
        let l = self.value(lifted);
        let a = self.value(attention);
        if a.shape() != (l.cols(), 1) {
            return Err(Error::shape(
                "edge_scores",
                format!("attention vector {:?} for {} lifted channels", a.shape(), l.cols()),
            ));
        }
        let (n, k, c) = (graph.num_rows(), graph.width(), l.cols());
        let mut value = Matrix::zeros(n, k);
        let mut signs = Vec::with_capacity(n * k * c);
        for i in 0..n {
            let center = l.row(graph.center(i));
            for (slot, &j) in graph.neighbors(i).iter().enumerate() {
                let mut e = 0.0;
                for ((lj, li), av) in l.row(j).iter().zip(center).zip(a.data()) {
                    let z = lj - li;
                    signs.push(z);
                    e += av * leaky_relu(z, slope);
                }
                value.set(i, slot, e);
            }
        }
        self.record_signs(&signs);
        let ng = self.needs(lifted) || self.needs(attention);
        Ok(self.push(
            value,
            Op::EdgeScores {
                lifted,
                attention,
                graph,
                slope,
            },
            ng,
        ))
    }

    /// `out[i] = Σ_k alpha[i][k] · L[j_k]`.
    pub fn neighbor_sum(&mut self, alpha: Var, lifted: Var, graph: Arc<NeighborGraph>) -> Result<Var> {
        self.check_graph_rows("neighbor_sum", lifted, &graph)?;
        let (al, l) = (self.value(alpha), self.value(lifted));
        if al.shape() != (graph.num_rows(), graph.width()) {
            return Err(Error::shape(
                "neighbor_sum",
                format!("coefficients {:?} for graph {}x{}", al.shape(), graph.num_rows(), graph.width()),
            ));
        }
        let mut value = Matrix::zeros(graph.num_rows(), l.cols());
        for i in 0..graph.num_rows() {
            let out = value.row_mut(i);
            for (&w, &j) in al.row(i).iter().zip(graph.neighbors(i)) {
                for (o, s) in out.iter_mut().zip(l.row(j)) {
                    *o += w * s;
                }
            }
        }
        let ng = self.needs(alpha) || self.needs(lifted);
        Ok(self.push(value, Op::NeighborSum { alpha, lifted, graph }, ng))
    }

    /// Mean (optionally class-weighted) cross-entropy as a `1 × 1` node.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: Arc<Vec<usize>>,
        class_weights: Option<&[f64]>,
    ) -> Result<Var> {
        let l = self.value(logits);
        let point_weights = kernels::cross_entropy_point_weights(l, &targets, class_weights)?;
        let (loss, probs) = kernels::cross_entropy_forward(l, &targets, &point_weights);
        let ng = self.needs(logits);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets,
                point_weights,
                probs,
            },
            ng,
        ))
    }

    /// `Σ x ⊙ coeffs` as a `1 × 1` node.
    pub fn dot(&mut self, x: Var, coeffs: Matrix) -> Result<Var> {
        if self.value(x).shape() != coeffs.shape() {
            return Err(Error::shape("dot", "coefficient shape differs from input"));
        }
        let s: f64 = self.value(x).data().iter().zip(coeffs.data()).map(|(a, b)| a * b).sum();
        let ng = self.needs(x);
        Ok(self.push(Matrix::scalar(s), Op::Dot { x, coeffs }, ng))
    }

    /// Back-propagates from the `1 × 1` node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    /// Collects parameter gradients from a backward pass.
    pub fn param_grads(&self, grads: &Gradients, store: &ParameterStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        for &(id, v) in &self.param_nodes {
            if let Some(g) = grads.get(v) {
                out.accumulate(id, g);
            }
        }
        out
    }

    fn propagate(&self, op: &Op, out_value: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let da = kernels::matmul_nt(g, self.value(*b)).expect("shapes checked in forward");
                    accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = kernels::matmul_tn(self.value(*a), g).expect("shapes checked in forward");
                    accumulate(grads, *b, db);
                }
            }
            Op::MatMulNT(a, b) => {
                if self.needs(*a) {
                    let da = kernels::matmul(g, self.value(*b)).expect("shapes checked in forward");
                    accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = kernels::matmul_tn(g, self.value(*a)).expect("shapes checked in forward");
                    accumulate(grads, *b, db);
                }
            }
            Op::AddBias(x, bias) => {
                if self.needs(*bias) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, v) in db.data_mut().iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *bias, db);
                }
                if self.needs(*x) {
                    accumulate(grads, *x, g.clone());
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    let mut neg = g.clone();
                    for v in neg.data_mut() {
                        *v = -*v;
                    }
                    accumulate(grads, *b, neg);
                }
            }
            Op::Relu(x) => {
                let mut dx = g.clone();
                for (d, &xv) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    if xv <= 0.0 {
                        *d = 0.0;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::LeakyRelu(x, slope) => {
                let mut dx = g.clone();
                for (d, &xv) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    *d *= leaky_relu_grad(xv, *slope);
                }
                accumulate(grads, *x, dx);
            }
            Op::RowSoftmax(x) => {
                let mut dx = Matrix::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let y = out_value.row(i);
                    let gy = g.row(i);
                    let inner: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for ((d, &yv), &gv) in dx.row_mut(i).iter_mut().zip(y).zip(gy) {
                        *d = yv * (gv - inner);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Scale { x, scale } => {
                let s = self.value(*scale).get(0, 0);
                if self.needs(*scale) {
                    let ds: f64 = g.data().iter().zip(self.value(*x).data()).map(|(a, b)| a * b).sum();
                    accumulate(grads, *scale, Matrix::scalar(ds));
                }
                if self.needs(*x) {
                    let mut dx = g.clone();
                    for v in dx.data_mut() {
                        *v *= s;
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::WeightedGather {
                x,
                indices,
                weights,
                width,
            } => {
                let src = self.value(*x);
                let mut dx = Matrix::zeros(src.rows(), src.cols());
                for i in 0..g.rows() {
                    for t in 0..*width {
                        let slot = i * width + t;
                        let w = weights.as_ref().map_or(1.0, |w| w[slot]);
                        for (d, v) in dx.row_mut(indices[slot]).iter_mut().zip(g.row(i)) {
                            *d += w * v;
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                if self.needs(*a) {
                    let mut da = Matrix::zeros(g.rows(), ca);
                    for i in 0..g.rows() {
                        da.row_mut(i).copy_from_slice(&g.row(i)[..ca]);
                    }
                    accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Matrix::zeros(g.rows(), cb);
                    for i in 0..g.rows() {
                        db.row_mut(i).copy_from_slice(&g.row(i)[ca..]);
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::EdgeScores {
                lifted,
                attention,
                graph,
                slope,
            } => {
                let l = self.value(*lifted);
                let a = self.value(*attention);
                let c = l.cols();
                let mut dl = Matrix::zeros(l.rows(), c);
                let mut da = Matrix::zeros(c, 1);
                let mut dz = vec![0.0; c];
                for i in 0..graph.num_rows() {
                    let ci = graph.center(i);
                    for (slot, &j) in graph.neighbors(i).iter().enumerate() {
                        let ge = g.get(i, slot);
                        if ge == 0.0 {
                            continue;
                        }
                        for ch in 0..c {
                            let z = l.get(j, ch) - l.get(ci, ch);
                            da.data_mut()[ch] += ge * leaky_relu(z, *slope);
                            dz[ch] = ge * a.data()[ch] * leaky_relu_grad(z, *slope);
                        }
                        for (d, v) in dl.row_mut(j).iter_mut().zip(&dz) {
                            *d += v;
                        }
                        for (d, v) in dl.row_mut(ci).iter_mut().zip(&dz) {
                            *d -= v;
                        }
                    }
                }
                if self.needs(*lifted) {
                    accumulate(grads, *lifted, dl);
                }
                if self.needs(*attention) {
                    accumulate(grads, *attention, da);
                }
            }
            Op::NeighborSum { alpha, lifted, graph } => {
                let al = self.value(*alpha);
                let l = self.value(*lifted);
                if self.needs(*alpha) {
                    let mut dal = Matrix::zeros(al.rows(), al.cols());
                    for i in 0..graph.num_rows() {
                        let gi = g.row(i);
                        for (slot, &j) in graph.neighbors(i).iter().enumerate() {
                            let v: f64 = gi.iter().zip(l.row(j)).map(|(a, b)| a * b).sum();
                            dal.set(i, slot, v);
                        }
                    }
                    accumulate(grads, *alpha, dal);
                }
                if self.needs(*lifted) {
                    let mut dl = Matrix::zeros(l.rows(), l.cols());
                    for i in 0..graph.num_rows() {
                        for (&w, &j) in al.row(i).iter().zip(graph.neighbors(i)) {
                            for (d, v) in dl.row_mut(j).iter_mut().zip(g.row(i)) {
                                *d += w * v;
                            }
                        }
                    }
                    accumulate(grads, *lifted, dl);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                point_weights,
                probs,
            } => {
                let total: f64 = point_weights.iter().sum();
                let scale = if total > 0.0 { g.get(0, 0) / total } else { 0.0 };
                let mut dl = probs.clone();
                for (i, (&t, &w)) in targets.iter().zip(point_weights).enumerate() {
                    let row = dl.row_mut(i);
                    row[t] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= w * scale;
                    }
                }
                accumulate(grads, *logits, dl);
            }
            Op::Dot { x, coeffs } => {
                let s = g.get(0, 0);
                let mut dx = coeffs.clone();
                for v in dx.data_mut() {
                    *v *= s;
                }
                accumulate(grads, *x, dx);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, delta: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}
