//! Central finite-difference gradient checking.
//!
//! The checker only ever evaluates the forward function, so it stays
//! independent of the backward code it verifies. Each evaluation also
//! reports the activation sign signature of the tape; an entry whose `±h`
//! evaluations land on a different linear piece than the base point sits on
//! a kink and is counted as skipped instead of compared.

use super::{Graph, Matrix, ParamGrads, ParameterStore, Var};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Maximum accepted relative error.
pub const REL_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so that gradients near zero are
/// compared on an absolute scale of `REL_TOLERANCE · REL_FLOOR`.
pub const REL_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Something whose scalar entries can be nudged one at a time.
pub trait Perturb {
    fn num_tensors(&self) -> usize;
    fn tensor_len(&self, t: usize) -> usize;
    fn get(&self, t: usize, k: usize) -> f64;
    fn set(&mut self, t: usize, k: usize, v: f64);
}

impl Perturb for Vec<Matrix> {
    fn num_tensors(&self) -> usize {
        self.len()
    }
    fn tensor_len(&self, t: usize) -> usize {
        self[t].data().len()
    }
    fn get(&self, t: usize, k: usize) -> f64 {
        self[t].data()[k]
    }
    fn set(&mut self, t: usize, k: usize, v: f64) {
        self[t].data_mut()[k] = v;
    }
}

impl Perturb for ParameterStore {
    fn num_tensors(&self) -> usize {
        self.len()
    }
    fn tensor_len(&self, t: usize) -> usize {
        self.value(super::ParamId(t)).data().len()
    }
    fn get(&self, t: usize, k: usize) -> f64 {
        self.value(super::ParamId(t)).data()[k]
    }
    fn set(&mut self, t: usize, k: usize, v: f64) {
        self.value_mut(super::ParamId(t)).data_mut()[k] = v;
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    /// `(tensor, entry, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= REL_TOLERANCE
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// Compares `analytic(t)` (the gradient for tensor `t`) against central
/// differences of `eval`, which returns `(loss, activation_signature)`.
pub fn check<P, F>(target: &mut P, analytic: impl Fn(usize) -> Option<Matrix>, mut eval: F) -> GradCheckReport
where
    P: Perturb,
    F: FnMut(&P) -> (f64, u64),
{
    let (_, base_sig) = eval(target);
    let mut report = GradCheckReport::default();
    for t in 0..target.num_tensors() {
        let grad = analytic(t);
        for k in 0..target.tensor_len(t) {
            let a = grad.as_ref().map_or(0.0, |g| g.data()[k]);
            let x = target.get(t, k);
            target.set(t, k, x + FD_STEP);
            let (plus, sig_plus) = eval(target);
            target.set(t, k, x - FD_STEP);
            let (minus, sig_minus) = eval(target);
            target.set(t, k, x);
            if sig_plus != base_sig || sig_minus != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(a, numeric);
            let err = if err.is_nan() { f64::INFINITY } else { err };
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((t, k, a, numeric));
            }
        }
    }
    report
}

/// [`check`] specialised to every parameter of a store.
pub fn check_store<F>(store: &mut ParameterStore, analytic: &ParamGrads, eval: F) -> GradCheckReport
where
    F: FnMut(&ParameterStore) -> (f64, u64),
{
    let ids: Vec<_> = store.ids().collect();
    check(store, |t| analytic.get(ids[t]).cloned(), eval)
}

/// Checks a scalar tape built by `build` against every parameter of `store`
/// and every entry of `inputs`. `build` receives the inputs as tape inputs
/// and must return a `1 × 1` node. A build error during a perturbed
/// evaluation counts as a failing entry.
pub fn check_tape<F>(store: &ParameterStore, inputs: &[Matrix], build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParameterStore, &[Var]) -> Result<Var>,
{
    let run = |store: &ParameterStore, inputs: &[Matrix]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone())).collect();
        let loss = build(&mut g, store, &vars)?;
        Ok((g, vars, loss))
    };
    let eval = |store: &ParameterStore, inputs: &[Matrix]| match run(store, inputs) {
        Ok((g, _, l)) => (g.value(l).get(0, 0), g.activation_signature()),
        Err(_) => (f64::NAN, 0),
    };
    let (g, vars, loss) = run(store, inputs)?;
    let grads = g.backward(loss);
    let pg = g.param_grads(&grads, store);

    let mut report = check_store(&mut store.clone(), &pg, |s| eval(s, inputs));
    let input_grads: Vec<Option<Matrix>> = vars.iter().map(|&v| grads.get(v).cloned()).collect();
    let mut perturbed = inputs.to_vec();
    let r = check(&mut perturbed, |t| input_grads[t].clone(), |m| eval(store, m));
    report.merge(&r);
    Ok(report)
}
