use std::collections::BTreeMap;
use std::sync::Arc;

use crate::attention::PSAParams;
use crate::data::{seeded_rng, LabelPrediction, PointCloud, Rng};
use crate::error::{Error, Result};
use crate::lae::LAEConvParams;
use crate::numerics::{Activation, Graph, Linear, Matrix, ParameterStore, Var};
use crate::search::{farthest_point_sampling, multi_directional_search, SearchConfig, SpatialIndex};

use super::geometry::{interpolation_weights, BlockGeometry, Interpolation};
use super::NetworkConfig;

/// Parameter handles of the full encoder-decoder.
#[derive(Clone, Debug)]
pub struct SegNet {
    config: NetworkConfig,
    encoder: Vec<LAEConvParams>,
    fusion: Vec<Linear>,
    decoder: Vec<LAEConvParams>,
    psa: BTreeMap<usize, PSAParams>,
    head: Linear,
}

/// Nodes recorded by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub logits: Var,
    /// Output of layers 1..7 (after attention where configured).
    pub layers: Vec<Var>,
}

impl SegNet {
    /// Registers every parameter in `store`, drawing initial values from
    /// `rng`. Registration order and names are fixed by the config.
    pub fn new(config: NetworkConfig, store: &mut ParameterStore, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut encoder = Vec::with_capacity(4);
        let mut c_in = config.input_channels;
        for layer in 1..=4 {
            let c_out = config.layer_width(layer);
            let mut p = LAEConvParams::new(store, &format!("layer{layer}"), c_in, c_out, rng)?;
            p.offset_aggregation = config.offset_aggregation;
            encoder.push(p);
            c_in = c_out;
        }
        let mut fusion = Vec::with_capacity(3);
        let mut decoder = Vec::with_capacity(3);
        for layer in 5..=7 {
            let skip = config.layer_width(8 - layer);
            let c_out = config.layer_width(layer);
            fusion.push(Linear::new(store, &format!("fuse{layer}"), c_in + skip, c_out, Activation::Relu, rng)?);
            let mut p = LAEConvParams::new(store, &format!("layer{layer}"), c_out, c_out, rng)?;
            p.offset_aggregation = config.offset_aggregation;
            decoder.push(p);
            c_in = c_out;
        }
        let mut psa = BTreeMap::new();
        for &layer in &config.psa_layers {
            psa.insert(layer, PSAParams::new(store, &format!("psa{layer}"), config.layer_width(layer), rng)?);
        }
        let head = Linear::new(store, "head", c_in, config.num_classes, Activation::None, rng)?;
        Ok(Self {
            config,
            encoder,
            fusion,
            decoder,
            psa,
            head,
        })
    }

    /// A freshly initialised network and its parameters.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<(Self, ParameterStore)> {
        let mut store = ParameterStore::new();
        let net = Self::new(config, &mut store, &mut seeded_rng(seed))?;
        Ok((net, store))
    }

    /// Binds a network to parameters loaded from a checkpoint. Names and
    /// shapes must match the config exactly.
    pub fn from_checkpoint(config: NetworkConfig, loaded: &ParameterStore) -> Result<(Self, ParameterStore)> {
        let (net, mut store) = Self::init(config, 0)?;
        if loaded.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, config expects {}",
                loaded.len(),
                store.len()
            )));
        }
        store.load_values_from(loaded)?;
        Ok((net, store))
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Records the network on `g` for input features `x` (`N₁ × c_in`).
    pub fn record(&self, g: &mut Graph, store: &ParameterStore, x: Var, geom: &BlockGeometry) -> Result<ForwardPass> {
        let cfg = &self.config;
        if g.value(x).shape() != (cfg.num_points[0], cfg.input_channels) {
            return Err(Error::shape(
                "network_forward",
                format!(
                    "input {:?}, config expects ({}, {})",
                    g.value(x).shape(),
                    cfg.num_points[0],
                    cfg.input_channels
                ),
            ));
        }
        let mut layers: Vec<Var> = Vec::with_capacity(7);
        let mut h = x;
        for layer in 1..=4 {
            h = self.encoder[layer - 1].forward(g, store, h, &geom.graphs[layer - 1])?;
            h = self.attend(g, store, layer, h)?;
            layers.push(h);
        }
        for layer in 5..=7 {
            let k = layer - 5;
            let skip = layers[7 - layer];
            h = propagate(g, store, &self.fusion[k], h, &geom.interpolations[k], skip)?;
            h = self.decoder[k].forward(g, store, h, &geom.graphs[layer - 1])?;
            h = self.attend(g, store, layer, h)?;
            layers.push(h);
        }
        let logits = self.head.forward(g, store, h)?;
        Ok(ForwardPass { logits, layers })
    }

    fn attend(&self, g: &mut Graph, store: &ParameterStore, layer: usize, h: Var) -> Result<Var> {
        match self.psa.get(&layer) {
            Some(p) => p.forward(g, store, h, self.config.psa_max_points),
            None => Ok(h),
        }
    }

    /// Logits for one block.
    pub fn logits(&self, store: &ParameterStore, features: &Matrix, geom: &BlockGeometry) -> Result<Matrix> {
        let mut g = Graph::new();
        let x = g.constant(features.clone());
        let pass = self.record(&mut g, store, x, geom)?;
        Ok(g.into_value(pass.logits))
    }
}

/// Inverse-distance upsampling of `coarse` followed by concatenation with
/// `skip` and the fusion layer.
fn propagate(
    g: &mut Graph,
    store: &ParameterStore,
    fusion: &Linear,
    coarse: Var,
    interp: &Interpolation,
    skip: Var,
) -> Result<Var> {
    let up = g.weighted_gather(coarse, interp.indices.clone(), Some(interp.weights.clone()), interp.width)?;
    let cat = g.concat_cols(up, skip)?;
    fusion.forward(g, store, cat)
}

/// Classifies every point of a block of exactly `N₁` points.
pub fn network_forward(cloud: &PointCloud, net: &SegNet, store: &ParameterStore) -> Result<LabelPrediction> {
    let cfg = net.config();
    if cloud.num_points() != cfg.num_points[0] {
        return Err(Error::LengthMismatch {
            expected: cfg.num_points[0],
            actual: cloud.num_points(),
        });
    }
    let geom = BlockGeometry::build(cloud.positions(), cfg)?;
    let logits = net.logits(store, &cloud.features(cfg.input_channels)?, &geom)?;
    Ok(LabelPrediction::from_logits(logits))
}

/// Samples `target` centers by farthest point sampling (all points, in
/// order, when `target` equals the input size), gathers their
/// multi-directional neighborhoods from the full input and applies `layer`.
pub fn set_abstraction(
    positions: &[[f64; 3]],
    features: &Matrix,
    target: usize,
    search: &SearchConfig,
    layer: &LAEConvParams,
    store: &ParameterStore,
) -> Result<(Vec<usize>, Matrix)> {
    if target > positions.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {target} centers from {} points",
            positions.len()
        )));
    }
    let centers = if target == positions.len() {
        (0..target).collect()
    } else {
        farthest_point_sampling(positions, target, 0)?
    };
    let index = SpatialIndex::build(positions, search.radius())?;
    let graph = Arc::new(multi_directional_search(&index, positions, &centers, search)?);
    let mut g = Graph::new();
    let x = g.constant(features.clone());
    let y = layer.forward(&mut g, store, x, &graph)?;
    Ok((centers, g.into_value(y)))
}

/// Upsamples coarse features onto `fine` points, concatenates `skip` and
/// applies the fusion layer.
pub fn feature_propagation(
    coarse_positions: &[[f64; 3]],
    coarse_features: &Matrix,
    fine_positions: &[[f64; 3]],
    skip: &Matrix,
    fusion: &Linear,
    store: &ParameterStore,
) -> Result<Matrix> {
    if coarse_features.rows() != coarse_positions.len() {
        return Err(Error::shape("feature_propagation", "coarse features and positions differ in count"));
    }
    if skip.rows() != fine_positions.len() {
        return Err(Error::shape(
            "feature_propagation",
            format!("{} skip rows for {} fine points", skip.rows(), fine_positions.len()),
        ));
    }
    if coarse_features.cols() + skip.cols() != fusion.in_dim(store) {
        return Err(Error::shape(
            "feature_propagation",
            format!(
                "{} + {} channels, fusion layer expects {}",
                coarse_features.cols(),
                skip.cols(),
                fusion.in_dim(store)
            ),
        ));
    }
    let interp = interpolation_weights(coarse_positions, fine_positions)?;
    let mut g = Graph::new();
    let c = g.constant(coarse_features.clone());
    let s = g.constant(skip.clone());
    let y = propagate(&mut g, store, fusion, c, &interp, s)?;
    Ok(g.into_value(y))
}
