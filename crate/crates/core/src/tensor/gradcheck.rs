//! Central finite-difference checks of tape gradients.

use super::param::ParamStore;
use twofloat::TwoFloat;

use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|a - n| / max(|a|, |n|, 1e-8)` over compared coordinates.
    pub max_rel_error: f64,
    /// Which coordinate produced the worst error.
    pub worst: Option<String>,
    pub checked: usize,
    /// Coordinates straddling a ReLU kink or an argmax switch.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }

    pub fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
            skipped: 0,
        }
    }
}

/// Checks `d f / d inputs` for a scalar-valued tape function.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor<f64>], epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    finite_diff_check_with_params(&mut store, inputs, epsilon, f)
}

fn evaluate<N, F>(store: &ParamStore<N>, inputs: &[Tensor<N>], f: &F) -> Result<(N, Option<u64>)>
where
    N: Real,
    F: Fn(&mut Tape<'_, N>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new(store).track_branches();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out).item()?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("function value {value:?} is not finite")));
    }
    Ok((value, tape.branch_signature()))
}

/// Checks gradients with respect to both `inputs` and every parameter in
/// `store`. Parameters are perturbed in place and restored afterwards.
pub fn finite_diff_check_with_params<F>(
    store: &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    epsilon: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    compare_gradients(store, inputs, epsilon, &f, &f)
}

/// A scalar tape function that can run at any precision.
pub trait ScalarFn {
    fn eval<T: Real>(&self, tape: &mut Tape<'_, T>, inputs: &[Var]) -> Result<Var>;
}

/// Analytic gradients at 64 bits against central differences evaluated in
/// double-double arithmetic at the same points. Roundoff in the difference
/// quotient drops to about `1e-32 / epsilon`, so tiny gradients compare
/// cleanly under the `1e-8` denominator floor.
pub fn finite_diff_check_reference<F: ScalarFn>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    epsilon: f64,
    f: &F,
) -> Result<GradCheckReport> {
    compare_gradients::<TwoFloat, _, _>(
        store,
        inputs,
        epsilon,
        &|t: &mut Tape<'_, f64>, x: &[Var]| f.eval(t, x),
        &|t: &mut Tape<'_, TwoFloat>, x: &[Var]| f.eval(t, x),
    )
}

fn compare_gradients<N, A, F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    epsilon: f64,
    analytic_fn: &A,
    numeric_fn: &F,
) -> Result<GradCheckReport>
where
    N: Real,
    A: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
    F: Fn(&mut Tape<'_, N>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Contract(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }

    let (input_grads, param_grads, base_sig) = {
        let mut tape = Tape::new(store).track_branches();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = analytic_fn(&mut tape, &vars)?;
        let value = tape.value(out).item()?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("function value {value} is not finite")));
        }
        let grads = tape.backward(out)?;
        let ig: Vec<Tensor<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, x)| {
                grads
                    .wrt(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()))
            })
            .collect();
        let pg: Vec<Tensor<f64>> = (0..store.len())
            .map(|i| {
                let id = super::ParamId(i);
                grads.param(id).cloned().unwrap_or_else(|| {
                    let v = store.value(id);
                    Tensor::zeros(v.rows(), v.cols())
                })
            })
            .collect();
        (ig, pg, tape.branch_signature())
    };

    let eps = N::from_f64(epsilon);
    let two_eps = N::from_f64(2.0 * epsilon);
    let mut report = GradCheckReport::empty();
    let mut compare = |label: String, analytic: f64, plus: (N, Option<u64>), minus: (N, Option<u64>)| {
        if plus.1 != minus.1 || plus.1 != base_sig {
            report.skipped += 1;
            return Ok(());
        }
        let numeric = ((plus.0 - minus.0) / two_eps).as_f64();
        if !numeric.is_finite() || !analytic.is_finite() {
            return Err(Error::Numeric(format!(
                "{label}: analytic {analytic}, numeric {numeric}"
            )));
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some(format!("{label}: analytic {analytic:.6e}, numeric {numeric:.6e}"));
        }
        Ok(())
    };

    let mut store: ParamStore<N> = store.cast();
    let mut perturbed: Vec<Tensor<N>> = inputs.iter().map(Tensor::cast).collect();
    for (i, grad) in input_grads.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = perturbed[i].data()[j];
            perturbed[i].data_mut()[j] = orig + eps;
            let plus = evaluate(&store, &perturbed, numeric_fn)?;
            perturbed[i].data_mut()[j] = orig - eps;
            let minus = evaluate(&store, &perturbed, numeric_fn)?;
            perturbed[i].data_mut()[j] = orig;
            compare(format!("input {i}[{j}]"), grad.data()[j], plus, minus)?;
        }
    }

    for (p, grad) in param_grads.iter().enumerate() {
        let id = super::ParamId(p);
        for j in 0..grad.len() {
            let orig = store.value(id).data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + eps;
            let plus = evaluate(&store, &perturbed, numeric_fn);
            store.get_mut(id).value.data_mut()[j] = orig - eps;
            let minus = evaluate(&store, &perturbed, numeric_fn);
            store.get_mut(id).value.data_mut()[j] = orig;
            let name = store.get(id).name.clone();
            compare(format!("{name}[{j}]"), grad.data()[j], plus?, minus?)?;
        }
    }
    Ok(report)
}
