//! Central finite-difference checks of tape gradients.

use super::{ParamStore, Rng, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Perturbation for central differences.
    pub eps: f64,
    /// Upper bound on the number of scalar coordinates probed.
    pub max_checks: usize,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is zero are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-4, max_checks: 1000, floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub param: String,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<Mismatch>,
}

/// Relative error with a floored denominator.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compare analytic gradients of `loss` with central differences over a
/// random subsample of the scalars held by `stores`.
///
/// Frozen stores are perturbed too; their analytic gradient is zero, so any
/// real dependence of the loss on them shows up as a mismatch.
pub fn check<F>(stores: &mut [&mut ParamStore], opts: GradCheckOptions, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[&ParamStore]) -> Result<Var>,
{
    let eval = |stores: &[&mut ParamStore]| -> Result<f64> {
        let refs: Vec<&ParamStore> = stores.iter().map(|s| &**s).collect();
        let mut tape = Tape::no_grad();
        let l = loss(&mut tape, &refs)?;
        Ok(tape.value(l).item())
    };

    for s in stores.iter_mut() {
        s.zero_grad();
    }
    {
        let refs: Vec<&ParamStore> = stores.iter().map(|s| &**s).collect();
        let mut tape = Tape::new();
        let l = loss(&mut tape, &refs)?;
        let grads = tape.backward(l)?;
        drop(refs);
        for s in stores.iter_mut() {
            s.accumulate(&tape, &grads);
        }
    }

    let mut coords = Vec::new();
    for (si, s) in stores.iter().enumerate() {
        for id in s.ids() {
            for e in 0..s.value(id).len() {
                coords.push((si, id, e));
            }
        }
    }
    let mut rng = Rng::new(opts.seed);
    rng.shuffle(&mut coords);
    coords.truncate(opts.max_checks);

    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: None };
    for (si, id, e) in coords {
        let analytic = stores[si].grad(id)[e];
        let orig = stores[si].value(id).data()[e];
        stores[si].value_mut(id).data_mut()[e] = orig + opts.eps;
        let plus = eval(stores)?;
        stores[si].value_mut(id).data_mut()[e] = orig - opts.eps;
        let minus = eval(stores)?;
        stores[si].value_mut(id).data_mut()[e] = orig;
        let numeric = (plus - minus) / (2.0 * opts.eps);
        let err = rel_err(analytic, numeric, opts.floor);
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some(Mismatch {
                param: stores[si].name(id).to_string(),
                element: e,
                analytic,
                numeric,
                rel_err: err,
            });
        }
    }
    for s in stores.iter_mut() {
        s.zero_grad();
    }
    Ok(report)
}
