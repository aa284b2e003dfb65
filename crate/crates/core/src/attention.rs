//! Point-wise spatial attention.
//!
//! Every point attends to every other point of the block through an
//! `N × N` map `S = softmax_j(A·Bᵀ)`; the attended features `S·D` are scaled
//! by a learnable `gamma` and added back onto the input.

use crate::data::Rng;
use crate::error::{Error, Result};
use crate::numerics::{Activation, Graph, Linear, Matrix, ParamId, ParameterStore, Var};

/// Width of the query/key transforms for `c` input channels.
pub fn key_width(c: usize) -> usize {
    (c / 8).max(2)
}

#[derive(Clone, Debug)]
pub struct PSAParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    /// `1 × 1` residual scale, initialised to zero.
    pub gamma: ParamId,
}

/// Row-normalized `N × N` dependency map.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap(pub Matrix);

impl PSAParams {
    pub fn new(store: &mut ParameterStore, name: &str, c: usize, rng: &mut Rng) -> Result<Self> {
        let f = key_width(c);
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), c, f, Activation::None, rng)?,
            key: Linear::new(store, &format!("{name}.key"), c, f, Activation::None, rng)?,
            value: Linear::new(store, &format!("{name}.value"), c, c, Activation::None, rng)?,
            gamma: store.add(format!("{name}.gamma"), Matrix::scalar(0.0))?,
        })
    }

    pub fn channels(&self, store: &ParameterStore) -> usize {
        self.value.in_dim(store)
    }

    pub fn validate(&self, store: &ParameterStore) -> Result<()> {
        let c = self.channels(store);
        if self.value.out_dim(store) != c {
            return Err(Error::shape("psa", "value transform must map c to c"));
        }
        if self.query.in_dim(store) != c || self.key.in_dim(store) != c {
            return Err(Error::shape("psa", "query and key transforms must read c channels"));
        }
        if self.query.out_dim(store) != self.key.out_dim(store) {
            return Err(Error::shape("psa", "query and key widths differ"));
        }
        if store.value(self.gamma).shape() != (1, 1) {
            return Err(Error::shape("psa", "gamma must be 1x1"));
        }
        Ok(())
    }

    /// Records `S` on the tape.
    pub fn attention(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        let a = self.query.forward(g, store, x)?;
        let b = self.key.forward(g, store, x)?;
        let logits = g.matmul_nt(a, b)?;
        Ok(g.row_softmax(logits))
    }

    /// Records the block on the tape. Inputs with more than `max_points`
    /// rows are rejected before the `N × N` map is allocated.
    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var, max_points: usize) -> Result<Var> {
        let n = g.value(x).rows();
        if n > max_points {
            return Err(Error::TooManyPoints { points: n, cap: max_points });
        }
        if g.value(x).cols() != self.channels(store) {
            return Err(Error::shape(
                "psa",
                format!("input width {} but block expects {}", g.value(x).cols(), self.channels(store)),
            ));
        }
        let s = self.attention(g, store, x)?;
        let d = self.value.forward(g, store, x)?;
        let context = g.matmul(s, d)?;
        let gamma = g.param(store, self.gamma);
        let scaled = g.scale(context, gamma)?;
        g.add(scaled, x)
    }
}

pub fn attention_map(features: &Matrix, params: &PSAParams, store: &ParameterStore) -> Result<AttentionMap> {
    if features.rows() == 0 {
        return Err(Error::EmptyCloud);
    }
    let mut g = Graph::new();
    let x = g.constant(features.clone());
    let s = params.attention(&mut g, store, x)?;
    Ok(AttentionMap(g.into_value(s)))
}

pub fn psa_forward(features: &Matrix, params: &PSAParams, store: &ParameterStore, max_points: usize) -> Result<Matrix> {
    let mut g = Graph::new();
    let x = g.constant(features.clone());
    let y = params.forward(&mut g, store, x, max_points)?;
    Ok(g.into_value(y))
}

/// `S · D` for a block, without the residual. Used to inspect what context
/// each point receives.
pub fn attention_context(features: &Matrix, params: &PSAParams, store: &ParameterStore) -> Result<Matrix> {
    let mut g = Graph::new();
    let x = g.constant(features.clone());
    let s = params.attention(&mut g, store, x)?;
    let d = params.value.forward(&mut g, store, x)?;
    let c = g.matmul(s, d)?;
    Ok(g.into_value(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::seeded_rng;
    use crate::numerics::gradcheck;
    use rand::Rng as _;

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn block(c: usize, seed: u64, gamma: f64) -> (ParameterStore, PSAParams) {
        let mut rng = seeded_rng(seed);
        let mut store = ParameterStore::new();
        let p = PSAParams::new(&mut store, "psa", c, &mut rng).unwrap();
        store.value_mut(p.gamma).set(0, 0, gamma);
        (store, p)
    }

    #[test]
    fn singleton_map() {
        let (store, p) = block(4, 1, 0.5);
        let s = attention_map(&Matrix::filled(1, 4, 0.3), &p, &store).unwrap();
        assert_eq!(s.0.data(), &[1.0]);
    }

    #[test]
    fn zero_weights_give_uniform_map() {
        let (mut store, p) = block(4, 2, 0.5);
        for id in [p.query.weight, p.key.weight] {
            let (r, c) = store.value(id).shape();
            *store.value_mut(id) = Matrix::zeros(r, c);
        }
        let mut rng = seeded_rng(3);
        let s = attention_map(&random_matrix(5, 4, &mut rng), &p, &store).unwrap();
        assert!(s.0.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn map_matches_scalar_loops() {
        let (store, p) = block(16, 4, 0.5);
        assert_eq!(p.query.out_dim(&store), 2);
        let mut rng = seeded_rng(5);
        let x = random_matrix(3, 16, &mut rng);
        let s = attention_map(&x, &p, &store).unwrap();
        let proj = |lin: &Linear, i: usize, f: usize| {
            let w = store.value(lin.weight);
            store.value(lin.bias).get(0, f) + (0..16).map(|c| x.get(i, c) * w.get(c, f)).sum::<f64>()
        };
        for i in 0..3 {
            let logits: Vec<f64> = (0..3)
                .map(|j| (0..2).map(|f| proj(&p.query, i, f) * proj(&p.key, j, f)).sum())
                .collect();
            let total: f64 = logits.iter().map(|l| l.exp()).sum();
            for j in 0..3 {
                assert!((s.0.get(i, j) - logits[j].exp() / total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_gamma_is_identity() {
        let (store, p) = block(8, 6, 0.0);
        let mut rng = seeded_rng(7);
        let x = random_matrix(10, 8, &mut rng);
        assert_eq!(psa_forward(&x, &p, &store, 64).unwrap(), x);
    }

    #[test]
    fn identical_rows_stay_identical() {
        let (store, p) = block(8, 8, 0.9);
        let row: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
        let x = Matrix::from_rows(&[row.clone(), row]);
        let y = psa_forward(&x, &p, &store, 64).unwrap();
        assert_eq!(y.row(0), y.row(1));
    }

    #[test]
    fn point_cap_is_enforced() {
        let (store, p) = block(4, 9, 0.0);
        let err = psa_forward(&Matrix::zeros(9, 4), &p, &store, 8).unwrap_err();
        assert!(matches!(err, Error::TooManyPoints { points: 9, cap: 8 }));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (store, p) = block(6, 10, 0.7);
        let mut rng = seeded_rng(11);
        let x0 = random_matrix(16, 6, &mut rng);
        let coeffs = random_matrix(16, 6, &mut rng);
        let run = |store: &ParameterStore, x: &Matrix| {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let y = p.forward(&mut g, store, xv, 64).unwrap();
            let loss = g.dot(y, coeffs.clone()).unwrap();
            (g, xv, loss)
        };
        let (g, xv, loss) = run(&store, &x0);
        let grads = g.backward(loss);
        let pg = g.param_grads(&grads, &store);
        let report = gradcheck::check_store(&mut store.clone(), &pg, |s| {
            let (g, _, l) = run(s, &x0);
            (g.value(l).get(0, 0), g.activation_signature())
        });
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.skipped_kinks, 0);
        let dx = grads.get(xv).unwrap().clone();
        let report = gradcheck::check(&mut vec![x0.clone()], |_| Some(dx.clone()), |v| {
            let (g, _, l) = run(&store, &v[0]);
            (g.value(l).get(0, 0), g.activation_signature())
        });
        assert!(report.passed(), "{report:?}");
    }
}
