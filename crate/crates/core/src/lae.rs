//! Local attention-edge convolution.
//!
//! Each center lifts its neighbors' features with a shared weight `W`,
//! scores every edge from the lifted offset `W·h_j − W·h_i`, normalizes the
//! scores over the neighborhood and sums the lifted neighbor features with
//! those weights. A single relu layer transforms the result.

use std::sync::Arc;

use crate::data::Rng;
use crate::error::{Error, Result};
use crate::numerics::kernels::{self, LEAKY_SLOPE};
use crate::numerics::{Activation, Graph, Linear, Matrix, ParamId, ParameterStore, Var};
use crate::search::NeighborGraph;

/// Parameter handles of one LAE-Conv layer.
#[derive(Clone, Debug)]
pub struct LAEConvParams {
    /// Lifting weight `W`, `c_in × c_lift`.
    pub lift: ParamId,
    /// Attention vector `a`, `c_lift × 1`.
    pub attention: ParamId,
    /// Output transform `c_lift → c_out`, relu.
    pub transform: Linear,
    /// Aggregate lifted offsets `W·(h_j − h_i)` instead of lifted neighbor
    /// features `W·h_j`.
    pub offset_aggregation: bool,
}

impl LAEConvParams {
    /// Registers a randomly initialised layer under `name.*` with
    /// `c_lift = c_out`.
    pub fn new(store: &mut ParameterStore, name: &str, c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Self> {
        let lift = store.add_scaled_uniform(format!("{name}.lift"), c_in, c_out, rng)?;
        let attention = store.add_scaled_uniform(format!("{name}.attention"), c_out, 1, rng)?;
        let transform = Linear::new(store, &format!("{name}.transform"), c_out, c_out, Activation::Relu, rng)?;
        Ok(Self {
            lift,
            attention,
            transform,
            offset_aggregation: false,
        })
    }

    /// Registers a layer with explicit values.
    pub fn from_matrices(
        store: &mut ParameterStore,
        name: &str,
        lift: Matrix,
        attention: Matrix,
        transform_weight: Matrix,
        transform_bias: Matrix,
    ) -> Result<Self> {
        let params = Self {
            lift: store.add(format!("{name}.lift"), lift)?,
            attention: store.add(format!("{name}.attention"), attention)?,
            transform: Linear {
                weight: store.add(format!("{name}.transform.weight"), transform_weight)?,
                bias: store.add(format!("{name}.transform.bias"), transform_bias)?,
                activation: Activation::Relu,
            },
            offset_aggregation: false,
        };
        params.validate(store)?;
        Ok(params)
    }

    pub fn in_dim(&self, store: &ParameterStore) -> usize {
        store.value(self.lift).rows()
    }

    pub fn lift_dim(&self, store: &ParameterStore) -> usize {
        store.value(self.lift).cols()
    }

    pub fn out_dim(&self, store: &ParameterStore) -> usize {
        self.transform.out_dim(store)
    }

    pub fn validate(&self, store: &ParameterStore) -> Result<()> {
        let c_lift = self.lift_dim(store);
        if store.value(self.attention).shape() != (c_lift, 1) {
            return Err(Error::shape("lae_conv", "attention vector must be c_lift x 1"));
        }
        if self.transform.in_dim(store) != c_lift {
            return Err(Error::shape("lae_conv", "transform input width must equal c_lift"));
        }
        if store.value(self.transform.bias).shape() != (1, self.out_dim(store)) {
            return Err(Error::shape("lae_conv", "transform bias must be 1 x c_out"));
        }
        let ids = [self.lift, self.attention, self.transform.weight, self.transform.bias];
        if !ids.iter().all(|&id| store.value(id).is_finite()) {
            return Err(Error::NonFinite("lae_conv parameters"));
        }
        Ok(())
    }

    fn check_input(&self, g: &Graph, store: &ParameterStore, x: Var, graph: &NeighborGraph) -> Result<()> {
        let h = g.value(x);
        if h.cols() != self.in_dim(store) {
            return Err(Error::shape(
                "lae_conv",
                format!("input width {} but layer expects {}", h.cols(), self.in_dim(store)),
            ));
        }
        if graph.source_size() != h.rows() {
            return Err(Error::shape(
                "lae_conv",
                format!("graph over {} points, features have {} rows", graph.source_size(), h.rows()),
            ));
        }
        Ok(())
    }

    /// Records the layer on `g`; returns one output row per graph row.
    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var, graph: &Arc<NeighborGraph>) -> Result<Var> {
        self.check_input(g, store, x, graph)?;
        let w = g.param(store, self.lift);
        let a = g.param(store, self.attention);
        let lifted = g.matmul(x, w)?;
        let e = g.edge_scores(lifted, a, graph.clone(), LEAKY_SLOPE)?;
        let alpha = g.row_softmax(e);
        self.finish(g, store, lifted, alpha, graph)
    }

    /// Like [`forward`](Self::forward) but with the normalized coefficients
    /// replaced by `alpha` (`rows × K`, treated as a constant).
    pub fn forward_with_coefficients(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        x: Var,
        graph: &Arc<NeighborGraph>,
        alpha: &Matrix,
    ) -> Result<Var> {
        self.check_input(g, store, x, graph)?;
        let w = g.param(store, self.lift);
        let lifted = g.matmul(x, w)?;
        let alpha = g.constant(alpha.clone());
        self.finish(g, store, lifted, alpha, graph)
    }

    fn finish(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        lifted: Var,
        alpha: Var,
        graph: &Arc<NeighborGraph>,
    ) -> Result<Var> {
        let mut agg = g.neighbor_sum(alpha, lifted, graph.clone())?;
        if self.offset_aggregation {
            // Σ α (L_j − L_i) = Σ α L_j − L_i because the α rows sum to one.
            let centers = g.gather_rows(lifted, Arc::new(graph.centers().to_vec()))?;
            agg = g.sub(agg, centers)?;
        }
        self.transform.forward(g, store, agg)
    }
}

/// Raw and normalized edge coefficients of one layer evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeAttention {
    pub raw: Matrix,
    pub normalized: Matrix,
}

/// `e[i][k] = a · leaky(W·h_{j_k} − W·h_{center_i})` with slope 0.2.
pub fn edge_coefficients(features: &Matrix, graph: &NeighborGraph, w: &Matrix, a: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new();
    let h = g.constant(features.clone());
    let w = g.constant(w.clone());
    let a = g.constant(a.clone());
    let lifted = g.matmul(h, w)?;
    let e = g.edge_scores(lifted, a, Arc::new(graph.clone()), LEAKY_SLOPE)?;
    Ok(g.into_value(e))
}

/// Softmax over the `K` slots of every row.
pub fn normalize_coefficients(e: &Matrix) -> Matrix {
    kernels::row_softmax(e)
}

pub fn edge_attention(features: &Matrix, graph: &NeighborGraph, w: &Matrix, a: &Matrix) -> Result<EdgeAttention> {
    let raw = edge_coefficients(features, graph, w, a)?;
    let normalized = normalize_coefficients(&raw);
    Ok(EdgeAttention { raw, normalized })
}

/// `out[i] = Σ_k alpha[i][k] · W·h_{j_k}`.
pub fn aggregate(alpha: &Matrix, features: &Matrix, graph: &NeighborGraph, w: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new();
    let h = g.constant(features.clone());
    let w = g.constant(w.clone());
    let alpha = g.constant(alpha.clone());
    let lifted = g.matmul(h, w)?;
    let out = g.neighbor_sum(alpha, lifted, Arc::new(graph.clone()))?;
    Ok(g.into_value(out))
}

/// Evaluates the layer without keeping a tape.
pub fn lae_conv_forward(
    features: &Matrix,
    graph: &NeighborGraph,
    params: &LAEConvParams,
    store: &ParameterStore,
) -> Result<Matrix> {
    let mut g = Graph::new();
    let x = g.constant(features.clone());
    let out = params.forward(&mut g, store, x, &Arc::new(graph.clone()))?;
    Ok(g.into_value(out))
}
