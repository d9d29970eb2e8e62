//! Limits of predictability: the Poisson binomial distribution of the
//! fraction of correctly predicted choices, its binomial approximation, the
//! population mixture and a Kolmogorov–Smirnov comparison.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::choice_data::{ChoiceDataset, Session};
use crate::error::{domain, Error, Result};
use crate::estimate::{self, IndividualFit, Predictor};
use crate::par::{self, ExecMode};
use crate::stats::{self, EmpiricalCdf, Moments};

/// Largest imaginary part tolerated in the inverse transform.
pub const IMAG_TOLERANCE: f64 = 1e-9;
/// Negative roundoff in a pmf entry tolerated before clipping.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessProfile {
    pub subject: String,
    /// Probability that the modal prediction is right, per pair; >= 0.5.
    pub success_probs: Vec<f64>,
}

/// Success probabilities `max(p_A, 1 - p_A)` from fitted choice
/// probabilities.
pub fn success_profile(subject: impl Into<String>, probs_a: &[f64]) -> Result<SuccessProfile> {
    let mut success_probs = Vec::with_capacity(probs_a.len());
    for &p in probs_a {
        if !(0.0..=1.0).contains(&p) {
            return Err(domain(format!("choice probability {p} outside [0, 1]")));
        }
        success_probs.push(p.max(1.0 - p));
    }
    Ok(SuccessProfile {
        subject: subject.into(),
        success_probs,
    })
}

/// Distribution over the fractions `k / n`, `k = 0..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedFractionDist {
    pub pmf: Vec<f64>,
}

impl PredictedFractionDist {
    pub fn n(&self) -> usize {
        self.pmf.len() - 1
    }

    pub fn support(&self) -> Vec<f64> {
        let n = self.n() as f64;
        (0..self.pmf.len()).map(|k| k as f64 / n.max(1.0)).collect()
    }

    pub fn mean(&self) -> f64 {
        self.support().iter().zip(&self.pmf).map(|(x, p)| x * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.support().iter().zip(&self.pmf).map(|(x, p)| p * (x - m).powi(2)).sum()
    }

    pub fn moments(&self) -> Moments {
        stats::distribution_moments(&self.support(), &self.pmf)
    }

    /// `P(fraction <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.n() as f64;
        let mut c = 0.0;
        for (k, p) in self.pmf.iter().enumerate() {
            if k as f64 / n.max(1.0) <= x + 1e-12 {
                c += p;
            } else {
                break;
            }
        }
        c.min(1.0)
    }

    /// Smallest support point whose CDF reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.n() as f64;
        let mut c = 0.0;
        for (k, p) in self.pmf.iter().enumerate() {
            c += p;
            if c >= q - 1e-12 {
                return k as f64 / n.max(1.0);
            }
        }
        1.0
    }

    /// Equal-tailed interval `[quantile((1-level)/2), quantile((1+level)/2)]`;
    /// its probability is at least `level`.
    pub fn central_interval(&self, level: f64) -> (f64, f64) {
        let tail = 0.5 * (1.0 - level);
        (self.quantile(tail), self.quantile(1.0 - tail))
    }
}

fn check_profile(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(domain("success profile is empty"));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(domain("success probabilities must lie in [0, 1]"));
    }
    Ok(())
}

fn clean_pmf(mut pmf: Vec<f64>) -> Result<PredictedFractionDist> {
    for v in pmf.iter_mut() {
        if *v < 0.0 {
            if *v < -NEGATIVE_TOLERANCE {
                return Err(Error::Consistency(format!("negative probability mass {v}")));
            }
            *v = 0.0;
        }
    }
    let total: f64 = pmf.iter().sum();
    for v in pmf.iter_mut() {
        *v /= total;
    }
    Ok(PredictedFractionDist { pmf })
}

/// Poisson binomial pmf by the discrete Fourier transform
/// `P(k) = 1/(N+1) sum_l C^{-lk} prod_m (1 + (C^l - 1) p_m)`,
/// `C = exp(2 pi i / (N+1))`.
pub fn poisson_binomial_dft(probs: &[f64]) -> Result<PredictedFractionDist> {
    check_profile(probs)?;
    let n = probs.len();
    let m = n + 1;
    let omega = 2.0 * std::f64::consts::PI / m as f64;
    let char_fn: Vec<Complex64> = (0..m)
        .map(|l| {
            let c = Complex64::from_polar(1.0, omega * l as f64);
            probs.iter().fold(Complex64::new(1.0, 0.0), |acc, &p| acc * (1.0 + (c - 1.0) * p))
        })
        .collect();
    let mut pmf = Vec::with_capacity(m);
    for k in 0..m {
        let mut s = Complex64::new(0.0, 0.0);
        for (l, z) in char_fn.iter().enumerate() {
            // reduce l*k modulo m to keep the angle small
            let r = (l * k) % m;
            s += Complex64::from_polar(1.0, -omega * r as f64) * z;
        }
        s /= m as f64;
        if s.im.abs() > IMAG_TOLERANCE {
            return Err(Error::Consistency(format!(
                "imaginary residue {} at k = {k} in the Poisson binomial transform",
                s.im
            )));
        }
        pmf.push(s.re);
    }
    clean_pmf(pmf)
}

/// Poisson binomial pmf by sequential convolution.
pub fn poisson_binomial_dp(probs: &[f64]) -> Result<PredictedFractionDist> {
    check_profile(probs)?;
    let mut pmf = vec![0.0; probs.len() + 1];
    pmf[0] = 1.0;
    for (i, &p) in probs.iter().enumerate() {
        for k in (1..=i + 1).rev() {
            pmf[k] = pmf[k] * (1.0 - p) + pmf[k - 1] * p;
        }
        pmf[0] *= 1.0 - p;
    }
    clean_pmf(pmf)
}

/// `P(fraction > threshold)`.
pub fn tail_probability(dist: &PredictedFractionDist, threshold: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(domain(format!("threshold {threshold} outside [0, 1]")));
    }
    let n = dist.n() as f64;
    Ok(dist
        .pmf
        .iter()
        .enumerate()
        .filter(|(k, _)| *k as f64 / n.max(1.0) > threshold + 1e-12)
        .map(|(_, p)| p)
        .sum::<f64>()
        .min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinomialApprox {
    /// Grid value `k / N` used as the common success probability.
    pub p_bar: f64,
    pub dist: PredictedFractionDist,
}

/// Binomial stand-in with `p_bar = floor(sum p_j) / N`, kept on the grid
/// `{ceil(N/2)/N, ..., 1}`.
pub fn binomial_approx(probs: &[f64]) -> Result<BinomialApprox> {
    check_profile(probs)?;
    let n = probs.len();
    let sum: f64 = probs.iter().sum();
    // the tolerance stops exact integers from flooring one step down
    let k = ((sum + 1e-9).floor() as usize).clamp(n.div_ceil(2), n);
    let p_bar = k as f64 / n as f64;
    Ok(BinomialApprox {
        p_bar,
        dist: poisson_binomial_dp(&vec![p_bar; n])?,
    })
}

/// Equal-weight mixture of per-subject distributions on a common support.
pub fn population_mixture(dists: &[PredictedFractionDist]) -> Result<PredictedFractionDist> {
    let first = dists.first().ok_or_else(|| domain("mixture needs at least one distribution"))?;
    let len = first.pmf.len();
    if dists.iter().any(|d| d.pmf.len() != len) {
        return Err(domain("mixture components must share the same number of pairs"));
    }
    let mut pmf = vec![0.0; len];
    for d in dists {
        for (acc, p) in pmf.iter_mut().zip(&d.pmf) {
            *acc += p / dists.len() as f64;
        }
    }
    Ok(PredictedFractionDist { pmf })
}

pub fn total_variation(a: &PredictedFractionDist, b: &PredictedFractionDist) -> f64 {
    0.5 * a.pmf.iter().zip(&b.pmf).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample KS test of observed fractions against a theoretical
/// distribution; asymptotic Kolmogorov p-value with `n` = sample size.
pub fn ks_test(theoretical: &PredictedFractionDist, observed: &[f64]) -> Result<KsResult> {
    if observed.len() < 5 {
        return Err(Error::NoObservations(format!(
            "KS test needs at least 5 observed fractions, got {}",
            observed.len()
        )));
    }
    let ecdf = EmpiricalCdf::new(observed)?;
    let mut points: Vec<f64> = theoretical.support();
    points.extend_from_slice(ecdf.values());
    points.sort_by(f64::total_cmp);
    points.dedup();
    // both CDFs are right-continuous steps that only jump at these points
    let statistic = points
        .iter()
        .map(|&x| (theoretical.cdf(x) - ecdf.eval(x)).abs())
        .fold(0.0, f64::max);
    let n = observed.len();
    Ok(KsResult {
        statistic,
        p_value: stats::kolmogorov_survival((n as f64).sqrt() * statistic),
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPredictability {
    pub subject: String,
    pub mean_success: f64,
    pub tail: f64,
    pub p_bar: f64,
    pub observed_fraction: Option<f64>,
    pub interval_low: f64,
    pub interval_high: f64,
    pub pmf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictabilityAnalysis {
    pub threshold: f64,
    pub interval_level: f64,
    pub subjects: Vec<SubjectPredictability>,
    pub exact_mixture: PredictedFractionDist,
    pub approx_mixture: PredictedFractionDist,
    pub exact_moments: Moments,
    pub approx_moments: Moments,
    pub observed_moments: Option<Moments>,
    pub ks: Option<KsResult>,
    pub ks_exact: Option<KsResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictabilityConfig {
    pub threshold: f64,
    pub interval_level: f64,
}

impl Default for PredictabilityConfig {
    fn default() -> Self {
        Self {
            threshold: 0.85,
            interval_level: 0.9,
        }
    }
}

/// Per-subject predictability from individual fits; realized fractions
/// come from `observed_session` when the dataset has it.
pub fn analyze_predictability(
    dataset: &ChoiceDataset,
    fits: &[IndividualFit],
    observed_session: Session,
    cfg: &PredictabilityConfig,
    mode: ExecMode,
) -> Result<PredictabilityAnalysis> {
    if fits.is_empty() {
        return Err(Error::NoObservations("no individual fits".into()));
    }
    let observed = if dataset.has_session(observed_session) {
        let pred = estimate::predict_session(dataset, Predictor::Individual(fits), observed_session)?;
        Some(
            pred.subjects
                .into_iter()
                .map(|s| (s.subject, s.predicted_fraction))
                .collect::<std::collections::BTreeMap<_, _>>(),
        )
    } else {
        None
    };
    let pairs = dataset.pairs();
    let rows = par::map_slice(mode, fits, |fit| -> Result<(SubjectPredictability, PredictedFractionDist, PredictedFractionDist)> {
        let probs_a: Vec<f64> = pairs
            .iter()
            .map(|p| fit.params.choice_probs(p).map(|x| x.0))
            .collect::<Result<_>>()?;
        let profile = success_profile(fit.subject.clone(), &probs_a)?;
        let dist = poisson_binomial_dft(&profile.success_probs)?;
        let approx = binomial_approx(&profile.success_probs)?;
        let (lo, hi) = dist.central_interval(cfg.interval_level);
        Ok((
            SubjectPredictability {
                subject: fit.subject.clone(),
                mean_success: dist.mean(),
                tail: tail_probability(&dist, cfg.threshold)?,
                p_bar: approx.p_bar,
                observed_fraction: observed.as_ref().and_then(|o| o.get(&fit.subject).copied()),
                interval_low: lo,
                interval_high: hi,
                pmf: dist.pmf.clone(),
            },
            dist,
            approx.dist,
        ))
    });
    let rows: Vec<_> = rows.into_iter().collect::<Result<_>>()?;
    let exact: Vec<PredictedFractionDist> = rows.iter().map(|r| r.1.clone()).collect();
    let approx: Vec<PredictedFractionDist> = rows.iter().map(|r| r.2.clone()).collect();
    let subjects: Vec<SubjectPredictability> = rows.into_iter().map(|r| r.0).collect();
    let exact_mixture = population_mixture(&exact)?;
    let approx_mixture = population_mixture(&approx)?;
    let fractions: Vec<f64> = subjects.iter().filter_map(|s| s.observed_fraction).collect();
    let (ks, ks_exact, observed_moments) = if fractions.len() >= 5 {
        (
            Some(ks_test(&approx_mixture, &fractions)?),
            Some(ks_test(&exact_mixture, &fractions)?),
            Some(stats::sample_moments(&fractions)),
        )
    } else {
        (None, None, None)
    };
    Ok(PredictabilityAnalysis {
        threshold: cfg.threshold,
        interval_level: cfg.interval_level,
        exact_moments: exact_mixture.moments(),
        approx_moments: approx_mixture.moments(),
        subjects,
        exact_mixture,
        approx_mixture,
        observed_moments,
        ks,
        ks_exact,
    })
}
