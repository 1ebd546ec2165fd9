//! Uncertainty-based weighting that balances several task losses through
//! learned per-task log-variances.

use crate::scalar::Scalar;
use crate::{Error, Result};

fn check<S: Scalar>(raw: &[S], log_sigma: &[S], divisor: S) -> Result<()> {
    if raw.len() != log_sigma.len() {
        return Err(Error::Dimension {
            what: "task losses vs log-variances".into(),
            expected: raw.len(),
            got: log_sigma.len(),
        });
    }
    if raw.is_empty() {
        return Err(Error::InvalidInput("no task losses".into()));
    }
    if !(divisor > S::zero()) {
        return Err(Error::Domain(format!("divisor must be > 0, got {divisor}")));
    }
    for (i, (&r, &s)) in raw.iter().zip(log_sigma).enumerate() {
        if !r.is_finite() || !s.is_finite() {
            return Err(Error::Domain(format!(
                "task {i}: non-finite loss {r} or log-variance {s}"
            )));
        }
    }
    Ok(())
}

/// Combined loss `sum_i exp(-s_i)/divisor * raw_i + (1/divisor) sum_i s_i`.
///
/// A task with growing loss drives its `s_i` up, which damps the task weight
/// `exp(-s_i)` while the linear penalty keeps `s_i` from running away.
pub fn weighted_total<S: Scalar>(raw: &[S], log_sigma: &[S], divisor: S) -> Result<S> {
    check(raw, log_sigma, divisor)?;
    let mut total = S::zero();
    for (&r, &s) in raw.iter().zip(log_sigma) {
        total += (-s).exp() / divisor * r + s / divisor;
    }
    Ok(total)
}

/// [`weighted_total`] plus the partials with respect to each raw loss
/// (`exp(-s_i)/divisor`) and each log-variance (`1/divisor - exp(-s_i)/divisor * raw_i`).
pub fn weighted_total_grads<S: Scalar>(
    raw: &[S],
    log_sigma: &[S],
    divisor: S,
) -> Result<(S, Vec<S>, Vec<S>)> {
    check(raw, log_sigma, divisor)?;
    let mut total = S::zero();
    let mut d_raw = Vec::with_capacity(raw.len());
    let mut d_sigma = Vec::with_capacity(raw.len());
    for (&r, &s) in raw.iter().zip(log_sigma) {
        let w = (-s).exp() / divisor;
        total += w * r + s / divisor;
        d_raw.push(w);
        d_sigma.push(S::one() / divisor - w * r);
    }
    Ok((total, d_raw, d_sigma))
}
