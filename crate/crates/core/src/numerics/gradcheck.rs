//! Central finite-difference checks for tape gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Largest `|analytic - numeric| / max(1, |numeric|)` over every parameter
/// value, where `numeric` is the central difference with step `eps`.
///
/// `f` must be deterministic for a given `ParamStore`.
pub fn grad_check<F>(f: F, params: &ParamStore, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    check_finite(tape.scalar(loss))?;
    let analytic = tape.backward(loss)?.named(&tape);

    let eval = |p: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, p)?;
        check_finite(t.scalar(l))
    };

    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let n = params.get(&name)?.numel();
        let zeros = vec![0.0; n];
        let grad = analytic.get(&name).unwrap_or(&zeros);
        for (k, &a) in grad.iter().enumerate() {
            let orig = params.get(&name)?.values()[k];
            work.get_mut(&name)?.values_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(&name)?.values_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(&name)?.values_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// [`grad_check`] over anonymous input tensors, with `eps = 1e-5`.
pub fn grad_check_fn<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new(0);
    for (i, t) in inputs.iter().enumerate() {
        store.insert(&format!("in{i:03}"), t.clone())?;
    }
    grad_check(
        |tape, p| {
            let vars = (0..inputs.len())
                .map(|i| tape.param(p, &format!("in{i:03}")))
                .collect::<Result<Vec<_>>>()?;
            f(tape, &vars)
        },
        &store,
        1e-5,
    )
}

fn check_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation(format!("objective evaluated to {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut p = ParamStore::new(0);
        p.insert("w", Tensor::vector(vec![1.0])).unwrap();
        let r = grad_check(
            |t, p| {
                let w = t.param(p, "w")?;
                Ok(t.affine(w, f64::INFINITY, 0.0))
            },
            &p,
            1e-5,
        );
        assert!(matches!(r, Err(Error::Evaluation(_))));
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // Select in straight-through mode is deliberately not the derivative
        // of its forward pass, so the check must flag it.
        let mut p = ParamStore::new(0);
        p.insert("w", Tensor::matrix(1, 2, vec![0.3, 0.1]).unwrap()).unwrap();
        let err = grad_check(
            |t, p| {
                let w = t.param(p, "w")?;
                let s = t.select(w, super::super::tape::Selection::StraightThrough);
                let sq = t.row_sq_norm(s);
                Ok(t.sum_all(sq))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err > 0.5);
    }
}
