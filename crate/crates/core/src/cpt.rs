//! Prospect-theory valuation (power value function, Prelec II weighting)
//! and the logit choice rule.

use serde::{Deserialize, Serialize};

use crate::choice_data::Lottery;
use crate::error::{domain, Result};

/// Largest exponent argument passed to `exp` in the logit rule.
pub const LOGIT_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CptParams {
    pub alpha: f64,
    pub lambda: f64,
    pub delta: f64,
    pub gamma: f64,
    pub phi: f64,
}

impl CptParams {
    pub const NAMES: [&'static str; 5] = ["alpha", "lambda", "delta", "gamma", "phi"];

    pub fn new(alpha: f64, lambda: f64, delta: f64, gamma: f64, phi: f64) -> Result<Self> {
        let p = Self {
            alpha,
            lambda,
            delta,
            gamma,
            phi,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::NAMES.iter().zip(self.to_array()) {
            if !v.is_finite() {
                return Err(domain(format!("{name} must be finite")));
            }
        }
        if self.alpha <= 0.0 || self.lambda <= 0.0 || self.delta <= 0.0 || self.gamma <= 0.0 {
            return Err(domain("alpha, lambda, delta and gamma must be positive"));
        }
        if self.phi < 0.0 {
            return Err(domain("phi must be non-negative"));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.alpha, self.lambda, self.delta, self.gamma, self.phi]
    }

    pub fn from_array(x: [f64; 5]) -> Self {
        Self {
            alpha: x[0],
            lambda: x[1],
            delta: x[2],
            gamma: x[3],
            phi: x[4],
        }
    }
}

/// Power value function with loss aversion.
pub fn value(x: f64, p: &CptParams) -> f64 {
    if x >= 0.0 {
        x.powf(p.alpha)
    } else {
        -p.lambda * (-x).powf(p.alpha)
    }
}

/// Prelec II probability weighting; `weight(0) = 0`.
pub fn weight(prob: f64, p: &CptParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(domain(format!("probability {prob} outside [0, 1]")));
    }
    Ok(weight_unchecked(prob, p))
}

#[inline]
pub(crate) fn weight_unchecked(prob: f64, p: &CptParams) -> f64 {
    if prob <= 0.0 {
        return 0.0;
    }
    (-p.delta * (-prob.ln()).powf(p.gamma)).exp()
}

/// Prospect-theory utility of a two-outcome lottery.
///
/// Same-sign lotteries (zero counts as a gain) are valued rank-dependently
/// with the more extreme outcome first; mixed lotteries weight each outcome
/// separately.
pub fn cpt_utility(lot: &Lottery, p: &CptParams) -> f64 {
    let (v1, p1, v2, p2) = (lot.outcome1, lot.prob1, lot.outcome2, lot.prob2);
    let gain1 = v1 >= 0.0;
    let gain2 = v2 >= 0.0;
    if gain1 == gain2 {
        // both gains: descending; both losses: ascending
        let swap = if gain1 { v1 < v2 } else { v1 > v2 };
        let (hi, p_hi, lo) = if swap { (v2, p2, v1) } else { (v1, p1, v2) };
        let w = weight_unchecked(p_hi, p);
        w * value(hi, p) + (1.0 - w) * value(lo, p)
    } else {
        weight_unchecked(p1, p) * value(v1, p) + weight_unchecked(p2, p) * value(v2, p)
    }
}

/// Logit probability of choosing A.
pub fn logit_choice_prob(u_a: f64, u_b: f64, phi: f64) -> f64 {
    let z = (phi * (u_b - u_a)).clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    if z.is_nan() {
        return 0.5;
    }
    1.0 / (1.0 + z.exp())
}

/// `(f_A, f_B)` for a pair, each computed directly so that neither is
/// obtained by subtraction.
pub fn pair_probs(a: &Lottery, b: &Lottery, p: &CptParams) -> (f64, f64) {
    let ua = cpt_utility(a, p);
    let ub = cpt_utility(b, p);
    (logit_choice_prob(ua, ub, p.phi), logit_choice_prob(ub, ua, p.phi))
}

/// `ln(1 + e^z)` without overflow or loss of precision in the tails.
pub fn softplus(z: f64) -> f64 {
    if z > 35.0 {
        z + (-z).exp()
    } else if z < -35.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// `(ln f_A, ln f_B)`, accurate even when one probability rounds to 1.
pub fn pair_log_probs(a: &Lottery, b: &Lottery, p: &CptParams) -> (f64, f64) {
    let z = p.phi * (cpt_utility(b, p) - cpt_utility(a, p));
    if z.is_nan() {
        return (-std::f64::consts::LN_2, -std::f64::consts::LN_2);
    }
    (-softplus(z), -softplus(-z))
}
