use super::{Tape, Tensor, TensorError, Var};

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(1e-8, |analytic|)` over all entries.
    pub max_rel_error: f64,
    /// `(tensor index, entry index)` where the maximum occurred.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares tape gradients of `f` with central finite differences.
///
/// `f` receives a fresh tape and one leaf per entry of `params`, and must
/// return a scalar variable.
pub fn grad_check<F, E>(f: F, params: &[Tensor], eps: f64) -> std::result::Result<GradCheck, E>
where
    F: Fn(&mut Tape, &[Var]) -> std::result::Result<Var, E>,
    E: From<TensorError>,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let eval = |ps: &[Tensor]| -> std::result::Result<(Tape, Vec<Var>, Var), E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let scalar = |ps: &[Tensor]| -> std::result::Result<f64, E> {
        let (tape, _, out) = eval(ps)?;
        let value = tape.value(out)?;
        let v = value.item().ok_or_else(|| TensorError::Rank {
            op: "grad_check",
            expected: 0,
            found: value.shape().to_vec(),
        })?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(TensorError::NonFinite { value: v }.into())
        }
    };

    scalar(params)?;
    let (tape, vars, out) = eval(params)?;
    let grads = tape.backward(out)?;

    let mut work = params.to_vec();
    let mut result = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, &params[ti]);
        for ei in 0..params[ti].len() {
            let orig = params[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + eps;
            let plus = scalar(&work)?;
            work[ti].data_mut()[ei] = orig - eps;
            let minus = scalar(&work)?;
            work[ti].data_mut()[ei] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[ei];
            let rel = (a - numeric).abs() / a.abs().max(1e-8);
            if rel > result.max_rel_error {
                result.max_rel_error = rel;
                result.worst = (ti, ei);
            }
            result.checked += 1;
        }
    }
    Ok(result)
}
