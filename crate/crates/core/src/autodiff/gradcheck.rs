use super::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Entries whose gradient magnitude is below this are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-2;

/// Compares reverse-mode gradients against central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every entry of every parameter and returns the
/// worst relative error `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
///
/// `loss_fn` builds a scalar loss on a fresh tape from one node per entry of
/// `params` and must be deterministic.
pub fn check_gradients<F>(loss_fn: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("loss during gradient check".into()));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    if !tape.value(loss).item().is_finite() {
        return Err(Error::NonFinite("loss during gradient check".into()));
    }
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for k in 0..param.numel() {
            let orig = param.data()[k];
            work[pi].data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi].data()[k];
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// [`check_gradients`] for losses built from a [`ParamStore`]: every entry of
/// every stored parameter is perturbed in place.
pub fn check_param_gradients<F>(store: &ParamStore, loss_fn: F, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, s)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("loss during gradient check".into()));
        }
        Ok(v)
    };
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    eval(store)?;
    tape.backward(loss)?;
    let grads = tape.param_grads();

    let mut work = store.clone();
    let mut worst = 0.0f64;
    for (id, param) in store.iter() {
        for k in 0..param.value.numel() {
            let orig = param.value.data()[k];
            work.value_mut(id).data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads.get(id).map(|g| g.data()[k]).unwrap_or(0.0);
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
