//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::tape::{ParamStore, Tape, Var};
use crate::tensor::Tensor;

/// Default relative step; the actual step for coordinate `i` is
/// `DEFAULT_STEP · max(1, |x_i|)`.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Analytic and numeric gradients plus their worst disagreement.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub analytic: Tensor,
    pub numeric: Tensor,
}

/// `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn scalar_output(tape: &Tape, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::Usage(format!(
            "gradient check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}

fn central_differences(
    x: &Tensor,
    step: f64,
    mut eval: impl FnMut(&Tensor) -> Result<f64>,
) -> Result<Tensor> {
    let mut numeric = x.zeros_like();
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        let h = step * orig.abs().max(1.0);
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(numeric)
}

fn compare(analytic: Tensor, numeric: Tensor) -> GradCheck {
    let max_rel_error = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max);
    GradCheck {
        max_rel_error,
        analytic,
        numeric,
    }
}

/// Checks the gradient of a scalar function of one input tensor. `f`
/// records its computation on the given tape starting from the input var.
pub fn finite_diff_gradcheck<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let input = tape.input(x.clone());
    let out = f(&mut tape, input)?;
    scalar_output(&tape, out)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get(input).cloned().unwrap_or_else(|| x.zeros_like());

    let numeric = central_differences(x, step, |probe| {
        let mut tape = Tape::new();
        let input = tape.input(probe.clone());
        let out = f(&mut tape, input)?;
        scalar_output(&tape, out)
    })?;
    Ok(compare(analytic, numeric))
}

/// Per-parameter result of [`gradcheck_params`].
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub check: GradCheck,
}

/// Checks the gradient of a scalar function with respect to every
/// parameter in `store`. Values are restored before returning.
pub fn gradcheck_params<F>(store: &mut ParamStore, f: F, step: f64) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    scalar_output(&tape, out)?;
    let grads = tape.backward(out)?;
    store.zero_grad();
    store.accumulate(&grads);

    let ids: Vec<_> = store.ids().collect();
    let mut results = Vec::with_capacity(ids.len());
    for id in ids {
        let original = store.value(id).clone();
        let analytic = store.grad(id).clone();
        let numeric = central_differences(&original, step, |probe| {
            store.get_mut(id).set_value(probe.clone())?;
            let mut tape = Tape::new();
            let out = f(&mut tape, store)?;
            scalar_output(&tape, out)
        });
        store.get_mut(id).set_value(original)?;
        results.push(ParamCheck {
            name: store.get(id).name().to_string(),
            check: compare(analytic, numeric?),
        });
    }
    store.zero_grad();
    Ok(results)
}

/// Largest error over a set of parameter checks.
pub fn worst(checks: &[ParamCheck]) -> f64 {
    checks
        .iter()
        .map(|c| c.check.max_rel_error)
        .fold(0.0, f64::max)
}
