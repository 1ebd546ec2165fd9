//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use super::store::ParamStore;
use crate::scalar::Scalar;
use crate::Result;

/// Worst probe found by a check, for diagnostics.
#[derive(Debug, Clone)]
pub struct ProbePoint {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_error: f64,
    pub worst: Option<ProbePoint>,
}

/// Compares analytic gradients against central differences at `probes`
/// randomly chosen parameter elements.
///
/// `f(store, with_grad)` evaluates the scalar objective; when `with_grad` is
/// true it must also accumulate analytic gradients into the store (the
/// checker zeroes them first). Each probe perturbs one element by +/- h and
/// restores it exactly afterwards.
///
/// Relative error is |a - n| / max(|a| + |n|, 1e-6); the floor keeps probes
/// where both sides vanish from dividing by zero.
pub fn finite_difference_check<S, F>(
    store: &mut ParamStore<S>,
    rng: &mut impl Rng,
    probes: usize,
    h: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: FnMut(&mut ParamStore<S>, bool) -> Result<S>,
{
    store.zero_grads();
    f(store, true)?;
    let analytic: Vec<(String, Vec<f64>)> = store
        .ids()
        .map(|id| {
            (
                store.name(id).to_string(),
                store.grad(id).data.iter().map(|g| g.to_f64_lossy()).collect(),
            )
        })
        .collect();
    let total: usize = store.param_count();
    assert!(total > 0, "gradient check over an empty store");

    let ids: Vec<_> = store.ids().collect();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    for _ in 0..probes {
        let flat = rng.gen_range(0..total);
        // Map the flat element index onto (tensor, offset).
        let mut off = flat;
        let mut slot = 0;
        while off >= store.value(ids[slot]).len() {
            off -= store.value(ids[slot]).len();
            slot += 1;
        }
        let id = ids[slot];
        let orig = store.value(id).data[off];
        let hs = S::c(h);

        store.value_mut(id).data[off] = orig + hs;
        let plus = f(store, false)?.to_f64_lossy();
        store.value_mut(id).data[off] = orig - hs;
        let minus = f(store, false)?.to_f64_lossy();
        store.value_mut(id).data[off] = orig;

        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[slot].1[off];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        if rel > max_rel {
            max_rel = rel;
            worst = Some(ProbePoint {
                name: analytic[slot].0.clone(),
                index: off,
                analytic: a,
                numeric,
                rel_error: rel,
            });
        }
    }
    Ok(GradCheckReport {
        probes,
        max_rel_error: max_rel,
        worst,
    })
}
