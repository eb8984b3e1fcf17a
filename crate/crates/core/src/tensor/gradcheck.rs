use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Outcome of comparing analytic against central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    /// Largest `|analytic − numeric|` over all coordinates.
    pub max_abs_error: f64,
    pub coordinates: usize,
}

/// Checks every coordinate of every parameter in `params`.
///
/// `f` must be deterministic, so build it on an evaluation tape (dropout
/// off). Perturbed evaluations are independent and are spread over `exec`.
pub fn grad_check<F>(params: &ParamStore, eps: f64, exec: &Exec, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape) -> Result<Var> + Sync + Send,
{
    let tape = Tape::new(params);
    let loss = f(&tape)?;
    let base = tape.scalar(loss);
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("f(θ) = {base}")));
    }
    let grads = tape.gradients(loss)?;
    drop(tape);

    let coords: Vec<(ParamId, usize)> = params
        .ids()
        .flat_map(|id| (0..params.get(id).len()).map(move |i| (id, i)))
        .collect();

    let eval = |store: &ParamStore| -> Result<f64> {
        let t = Tape::new(store);
        let l = f(&t)?;
        let v = t.scalar(l);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("perturbed f = {v}")))
        }
    };

    let numeric: Vec<Result<f64>> = exec.map(&coords, |&(id, i)| {
        let mut p = params.clone();
        let orig = p.get(id).values[i];
        p.get_mut(id).values[i] = orig + eps;
        let up = eval(&p)?;
        p.get_mut(id).values[i] = orig - eps;
        let down = eval(&p)?;
        Ok((up - down) / (2.0 * eps))
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        max_abs_error: 0.0,
        coordinates: coords.len(),
    };
    for (&(id, i), num) in coords.iter().zip(numeric) {
        let num = num?;
        let ana = grads.get(id).map_or(0.0, |g| g[i]);
        let err = relative_error(ana, num);
        report.max_abs_error = report.max_abs_error.max((ana - num).abs());
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((params.name(id).to_string(), i));
            report.analytic = ana;
            report.numeric = num;
        }
    }
    Ok(report)
}
