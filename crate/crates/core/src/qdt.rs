//! Quantum-decision-theory prospect probabilities: the logit-CPT utility
//! factor plus an attraction factor driven by a CARA utility gap.

use serde::{Deserialize, Serialize};

use crate::choice_data::{Lottery, LotteryPair};
use crate::cpt::{self, CptParams};
use crate::error::{domain, Error, Result};

pub const DEFAULT_WEALTH0: f64 = 100.0;

/// Slack allowed when clipping a prospect probability back into [0, 1].
pub const CLIP_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QdtParams {
    pub cpt: CptParams,
    pub a: f64,
    pub eta: f64,
    #[serde(default = "default_wealth0")]
    pub wealth0: f64,
}

fn default_wealth0() -> f64 {
    DEFAULT_WEALTH0
}

impl QdtParams {
    pub const NAMES: [&'static str; 7] = ["alpha", "lambda", "delta", "gamma", "phi", "a", "eta"];

    pub fn new(cpt: CptParams, a: f64, eta: f64) -> Result<Self> {
        let p = Self {
            cpt,
            a,
            eta,
            wealth0: DEFAULT_WEALTH0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.cpt.validate()?;
        if !(self.a.is_finite() && self.a >= 0.0) {
            return Err(domain("attraction sensitivity a must be finite and non-negative"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(domain("eta must be finite and positive"));
        }
        if !self.wealth0.is_finite() {
            return Err(domain("wealth0 must be finite"));
        }
        Ok(())
    }

    /// True when `wealth0 + v < 0` for some outcome of the pair.
    pub fn wealth_warning(&self, pair: &LotteryPair) -> bool {
        pair.a
            .outcomes()
            .into_iter()
            .chain(pair.b.outcomes())
            .any(|v| self.wealth0 + v < 0.0)
    }

    pub fn to_array(&self) -> [f64; 7] {
        let c = self.cpt.to_array();
        [c[0], c[1], c[2], c[3], c[4], self.a, self.eta]
    }

    pub fn from_array(x: [f64; 7], wealth0: f64) -> Self {
        Self {
            cpt: CptParams::from_array([x[0], x[1], x[2], x[3], x[4]]),
            a: x[5],
            eta: x[6],
            wealth0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProspectProbabilities {
    pub f_a: f64,
    pub q_a: f64,
    pub p_a: f64,
    /// Probability of B, computed as `f_B + q_B` rather than `1 - p_A`.
    pub p_b: f64,
}

pub fn cara_utility(v: f64, eta: f64, wealth0: f64) -> f64 {
    -(-eta * (wealth0 + v)).exp_m1()
}

pub fn lottery_cara(lot: &Lottery, eta: f64, wealth0: f64) -> f64 {
    lot.prob1 * cara_utility(lot.outcome1, eta, wealth0) + lot.prob2 * cara_utility(lot.outcome2, eta, wealth0)
}

/// Attraction factor `min(f, 1-f) * tanh(a * (u_a - u_b))`.
pub fn attraction(f_a: f64, u_a: f64, u_b: f64, a: f64) -> f64 {
    f_a.min(1.0 - f_a) * (a * (u_a - u_b)).tanh()
}

fn clip(p: f64, what: &str) -> Result<f64> {
    if (-CLIP_SLACK..=1.0 + CLIP_SLACK).contains(&p) {
        Ok(p.clamp(0.0, 1.0))
    } else {
        Err(Error::Consistency(format!("{what} = {p} outside [0, 1]")))
    }
}

/// Prospect probabilities from precomputed utility factor and CARA gap
/// term `t = tanh(a * (U_A - U_B))`.
pub fn combine(f_a: f64, f_b: f64, t: f64) -> Result<ProspectProbabilities> {
    let bound = f_a.min(f_b);
    let q_a = bound * t;
    let p_a = clip(f_a + q_a, "p_A")?;
    let p_b = clip(f_b - q_a, "p_B")?;
    Ok(ProspectProbabilities { f_a, q_a, p_a, p_b })
}

pub fn prospect_prob(pair: &LotteryPair, p: &QdtParams) -> Result<ProspectProbabilities> {
    let (f_a, f_b) = cpt::pair_probs(&pair.a, &pair.b, &p.cpt);
    let gap = lottery_cara(&pair.a, p.eta, p.wealth0) - lottery_cara(&pair.b, p.eta, p.wealth0);
    combine(f_a, f_b, (p.a * gap).tanh())
}

/// Mean absolute attraction factor.
pub fn quarter_law_statistic(qs: &[f64]) -> Result<f64> {
    if qs.is_empty() {
        return Err(domain("quarter-law statistic needs at least one attraction factor"));
    }
    Ok(qs.iter().map(|q| q.abs()).sum::<f64>() / qs.len() as f64)
}
