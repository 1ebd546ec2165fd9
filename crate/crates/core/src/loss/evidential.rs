//! Normal-Inverse-Gamma predictions: likelihood, evidence regularizer and the
//! near-zero label boost.

use crate::nn::{digamma, log_gamma};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Normal-Inverse-Gamma parameters of one scalar prediction.
///
/// `gamma` is the predicted value; `nu` counts virtual observations backing
/// it; `alpha` and `beta` shape the variance evidence. The predictive
/// distribution is a Student-t with `2 alpha` degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Evidential<S> {
    /// Predicted target value.
    pub gamma: S,
    /// Virtual observation count, > 0.
    pub nu: S,
    /// Inverse-gamma shape, > 1.
    pub alpha: S,
    /// Inverse-gamma scale, > 0.
    pub beta: S,
}

impl<S: Scalar> Evidential<S> {
    /// Checks finiteness and the parameter domain (`nu > 0`, `alpha > 1`,
    /// `beta > 0`).
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma.is_finite()
            && self.nu.is_finite()
            && self.alpha.is_finite()
            && self.beta.is_finite()
            && self.nu > S::zero()
            && self.alpha > S::one()
            && self.beta > S::zero();
        if !ok {
            return Err(Error::Domain(format!(
                "evidential parameters out of domain: gamma={} nu={} alpha={} beta={}",
                self.gamma, self.nu, self.alpha, self.beta
            )));
        }
        Ok(())
    }

    /// Combined predictive variance `beta / (nu (alpha - 1))` [target unit squared].
    pub fn variance(&self) -> Result<S> {
        self.validate()?;
        Ok(self.beta / (self.nu * (self.alpha - S::one())))
    }

    /// Inverse variance [1 / target unit squared], the fusion weight of this
    /// prediction.
    pub fn precision(&self) -> Result<S> {
        Ok(S::one() / self.variance()?)
    }
}

/// Partial derivatives with respect to the four evidential parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvidentialGrad<S> {
    pub gamma: S,
    pub nu: S,
    pub alpha: S,
    pub beta: S,
}

impl<S: Scalar> EvidentialGrad<S> {
    pub fn zero() -> Self {
        EvidentialGrad {
            gamma: S::zero(),
            nu: S::zero(),
            alpha: S::zero(),
            beta: S::zero(),
        }
    }

    /// Adds `w * other` into self.
    pub fn add_scaled(&mut self, other: &Self, w: S) {
        self.gamma += w * other.gamma;
        self.nu += w * other.nu;
        self.alpha += w * other.alpha;
        self.beta += w * other.beta;
    }
}

fn check_target<S: Scalar>(y: S) -> Result<()> {
    if !y.is_finite() {
        return Err(Error::Domain(format!("target must be finite, got {y}")));
    }
    Ok(())
}

/// Sign with `sgn(0) = 0`, the subgradient used for absolute-value terms.
fn sgn<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        S::one()
    } else if x < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// Negative log-likelihood of target `y` under the Student-t predictive
/// distribution implied by `p`:
///
/// `0.5 ln(pi/nu) - alpha ln(2 beta (1+nu))
///  + (alpha + 0.5) ln((y-gamma)^2 nu + 2 beta (1+nu))
///  + ln G(alpha) - ln G(alpha + 0.5)`
pub fn nll<S: Scalar>(p: &Evidential<S>, y: S) -> Result<S> {
    p.validate()?;
    check_target(y)?;
    let half = S::c(0.5);
    let r = y - p.gamma;
    let omega = S::c(2.0) * p.beta * (S::one() + p.nu);
    let d = r * r * p.nu + omega;
    Ok(half * (S::c(std::f64::consts::PI) / p.nu).ln() - p.alpha * omega.ln()
        + (p.alpha + half) * d.ln()
        + log_gamma(p.alpha)?
        - log_gamma(p.alpha + half)?)
}

/// [`nll`] together with its analytic gradient in the four parameters.
pub fn nll_grad<S: Scalar>(p: &Evidential<S>, y: S) -> Result<(S, EvidentialGrad<S>)> {
    p.validate()?;
    check_target(y)?;
    let half = S::c(0.5);
    let one = S::one();
    let two = S::c(2.0);
    let r = y - p.gamma;
    let omega = two * p.beta * (one + p.nu);
    let d = r * r * p.nu + omega;
    let ahalf = p.alpha + half;
    let value = half * (S::c(std::f64::consts::PI) / p.nu).ln() - p.alpha * omega.ln()
        + ahalf * d.ln()
        + log_gamma(p.alpha)?
        - log_gamma(ahalf)?;
    let grad = EvidentialGrad {
        gamma: -ahalf * two * r * p.nu / d,
        nu: -half / p.nu - p.alpha / (one + p.nu) + ahalf * (r * r + two * p.beta) / d,
        alpha: -omega.ln() + d.ln() + digamma(p.alpha)? - digamma(ahalf)?,
        beta: -p.alpha / p.beta + ahalf * two * (one + p.nu) / d,
    };
    Ok((value, grad))
}

/// Evidence penalty `|y - gamma| * (2 alpha + nu)`: errors far from the
/// prediction shrink the claimed evidence. The `alt` variant swaps the
/// coefficients to `2 nu + alpha`.
pub fn evidence_regularizer<S: Scalar>(p: &Evidential<S>, y: S, alt: bool) -> S {
    let m = (y - p.gamma).abs();
    let factor = if alt {
        S::c(2.0) * p.nu + p.alpha
    } else {
        S::c(2.0) * p.alpha + p.nu
    };
    m * factor
}

/// [`evidence_regularizer`] together with its gradient; the absolute value
/// uses subgradient 0 at the kink.
pub fn evidence_regularizer_grad<S: Scalar>(
    p: &Evidential<S>,
    y: S,
    alt: bool,
) -> (S, EvidentialGrad<S>) {
    let r = y - p.gamma;
    let m = r.abs();
    let two = S::c(2.0);
    let factor = if alt {
        two * p.nu + p.alpha
    } else {
        two * p.alpha + p.nu
    };
    let (dnu, dalpha) = if alt { (two * m, m) } else { (m, two * m) };
    let grad = EvidentialGrad {
        gamma: -sgn(r) * factor,
        nu: dnu,
        alpha: dalpha,
        beta: S::zero(),
    };
    (m * factor, grad)
}

/// Sample weight `1 + exp(-y^2 / (2 sigma^2))`, emphasizing labels near zero
/// where both steering and pedal commands spend most of their time.
pub fn near_zero_boost<S: Scalar>(y: S, sigma: S) -> S {
    debug_assert!(sigma > S::zero(), "boost width must be positive");
    S::one() + (-y * y / (S::c(2.0) * sigma * sigma)).exp()
}
