//! Statistical primitives shared by the estimation, shift and
//! predictability pipelines.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Upper tail of the chi-square distribution, `Q(df/2, x/2)`.
pub fn chi_square_survival(x: f64, df: u32) -> Result<f64> {
    if df == 0 {
        return Err(domain("chi-square degrees of freedom must be >= 1"));
    }
    if !(x >= 0.0) {
        return Err(domain(format!("chi-square argument must be >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(statrs::function::gamma::gamma_ur(f64::from(df) / 2.0, x / 2.0).clamp(0.0, 1.0))
}

/// Log density of a lognormal distribution.
pub fn lognormal_log_pdf(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(domain(format!("lognormal density needs x > 0, got {x}")));
    }
    if !(sigma > 0.0) {
        return Err(domain(format!("lognormal scale must be > 0, got {sigma}")));
    }
    let z = (x.ln() - mu) / sigma;
    Ok(-(x * sigma * (2.0 * std::f64::consts::PI).sqrt()).ln() - 0.5 * z * z)
}

/// Location/scale of a lognormal distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormal {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormal {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !(sigma > 0.0) || !sigma.is_finite() {
            return Err(domain(format!("invalid lognormal (mu={mu}, sigma={sigma})")));
        }
        Ok(Self { mu, sigma })
    }

    pub fn median(&self) -> f64 {
        self.mu.exp()
    }

    pub fn log_pdf(&self, x: f64) -> Result<f64> {
        lognormal_log_pdf(x, self.mu, self.sigma)
    }

    /// Maximum-likelihood fit; `sigma` is the (biased) ML scale, floored at
    /// `sigma_floor`.
    pub fn fit_ml(values: &[f64], sigma_floor: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(domain("lognormal fit needs at least one value"));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
            return Err(domain(format!("lognormal fit needs positive values, got {v}")));
        }
        let n = values.len() as f64;
        let mu = values.iter().map(|v| v.ln()).sum::<f64>() / n;
        let var = values.iter().map(|v| (v.ln() - mu).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mu,
            sigma: var.sqrt().max(sigma_floor),
        })
    }
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(domain("pearson needs two equal-length samples of size >= 2"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(domain("pearson correlation undefined for zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Residual sum of squares between two equal-length series.
pub fn rss(predicted: &[f64], observed: &[f64]) -> f64 {
    predicted
        .iter()
        .zip(observed)
        .map(|(p, o)| (p - o).powi(2))
        .sum()
}

/// Sample mean, standard deviation (population form) and skewness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std_dev: f64,
    pub skewness: f64,
}

pub fn sample_moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    Moments {
        mean,
        std_dev: m2.sqrt(),
        skewness: if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 },
    }
}

/// Moments of a discrete distribution given support and masses.
pub fn distribution_moments(support: &[f64], pmf: &[f64]) -> Moments {
    let mean: f64 = support.iter().zip(pmf).map(|(x, p)| x * p).sum();
    let m2: f64 = support.iter().zip(pmf).map(|(x, p)| p * (x - mean).powi(2)).sum();
    let m3: f64 = support.iter().zip(pmf).map(|(x, p)| p * (x - mean).powi(3)).sum();
    Moments {
        mean,
        std_dev: m2.sqrt(),
        skewness: if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 },
    }
}

/// Linearly interpolated sample quantile (Hyndman-Fan type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Right-continuous step CDF of a sample.
#[derive(Debug, Clone)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(sample: &[f64]) -> Result<Self> {
        if sample.is_empty() {
            return Err(domain("empirical CDF of an empty sample"));
        }
        if sample.iter().any(|x| x.is_nan()) {
            return Err(domain("empirical CDF sample contains NaN"));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// Fraction of the sample `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        let count = self.sorted.partition_point(|v| *v <= x);
        count as f64 / self.sorted.len() as f64
    }
}

/// Survival function of the asymptotic Kolmogorov distribution,
/// `P(K > lambda) = 2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lambda^2)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        // Series is slow here and the tail mass is 1 to double precision.
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = f64::from(k);
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-18 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn chi_square_reference_values() {
        assert_eq!(chi_square_survival(0.0, 2).unwrap(), 1.0);
        assert_eq!(chi_square_survival(0.0, 6).unwrap(), 1.0);
        assert_abs_diff_eq!(chi_square_survival(6.0, 2).unwrap(), (-3.0f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(chi_square_survival(5.99, 2).unwrap(), (-2.995f64).exp(), epsilon = 1e-14);
        // arbitrary-precision reference values
        assert_abs_diff_eq!(chi_square_survival(10.0, 6).unwrap(), 0.124_652_019_483_081_14, epsilon = 1e-13);
        assert_abs_diff_eq!(chi_square_survival(3.84, 1).unwrap(), 0.050_043_521_248_705_1, epsilon = 1e-13);
    }

    #[test]
    fn chi_square_domain_errors() {
        assert!(chi_square_survival(-1.0, 2).is_err());
        assert!(chi_square_survival(1.0, 0).is_err());
        assert!(chi_square_survival(f64::NAN, 2).is_err());
    }

    #[test]
    fn chi_square_monotone_on_grid() {
        for df in [1u32, 2, 6] {
            let mut prev = 1.0;
            for i in 1..200 {
                let s = chi_square_survival(f64::from(i) * 0.1, df).unwrap();
                assert!(s <= prev);
                prev = s;
            }
        }
        for i in 1..100 {
            let x = 0.5 + f64::from(i) * 0.2;
            assert!(chi_square_survival(x, 6).unwrap() >= chi_square_survival(x, 2).unwrap());
        }
    }

    #[test]
    fn lognormal_pdf_values() {
        let mu: f64 = 0.4;
        let s = 0.3;
        let at_mode_of_log = lognormal_log_pdf(mu.exp(), mu, s).unwrap();
        assert_abs_diff_eq!(
            at_mode_of_log,
            -(mu.exp() * s * (2.0 * std::f64::consts::PI).sqrt()).ln(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(lognormal_log_pdf(0.7, -0.3, 0.25).unwrap(), 0.798_334_377_690_282_6, epsilon = 1e-13);
        assert!(lognormal_log_pdf(0.0, 0.0, 1.0).is_err());
        assert!(lognormal_log_pdf(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn lognormal_flattens_with_scale() {
        // away from the median the penalty weakens as sigma grows
        let mut prev = f64::NEG_INFINITY;
        for s in [0.05, 0.1, 0.2, 0.4, 0.8] {
            let v = lognormal_log_pdf(3.0, 0.0, s).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn lognormal_ml_closed_form() {
        let e = std::f64::consts::E;
        let fit = LogNormal::fit_ml(&[e, e.powi(3)], 1e-3).unwrap();
        assert_abs_diff_eq!(fit.mu, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.sigma, 1.0, epsilon = 1e-12);
        let flat = LogNormal::fit_ml(&[1.7; 10], 1e-3).unwrap();
        assert_abs_diff_eq!(flat.mu, 1.7f64.ln(), epsilon = 1e-12);
        assert_eq!(flat.sigma, 1e-3);
        assert!(LogNormal::fit_ml(&[1.0, -1.0], 1e-3).is_err());
    }

    #[test]
    fn lognormal_ml_recovers_parameters() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, LogNormal as Ln};
        let dist = Ln::new(0.5, 0.3).unwrap();
        let mut hits = 0;
        for seed in 0..50 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..142).map(|_| dist.sample(&mut rng)).collect();
            let fit = LogNormal::fit_ml(&xs, 1e-3).unwrap();
            if (fit.mu - 0.5).abs() <= 0.1 && (fit.sigma - 0.3).abs() <= 0.08 {
                hits += 1;
            }
        }
        // se(mu) = 0.025, se(sigma) = 0.018: both bounds are ~4 se
        assert_eq!(hits, 50);
    }

    #[test]
    fn pearson_extremes() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        assert_abs_diff_eq!(pearson(&xs, &xs).unwrap(), 1.0, epsilon = 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(pearson(&xs, &neg).unwrap(), -1.0, epsilon = 1e-15);
        assert!(pearson(&xs, &[1.0; 4]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn ecdf_steps() {
        let cdf = EmpiricalCdf::new(&[0.3, 0.1, 0.2, 0.2]).unwrap();
        assert_eq!(cdf.eval(0.0), 0.0);
        assert_eq!(cdf.eval(0.1), 0.25);
        assert_eq!(cdf.eval(0.2), 0.75);
        assert_eq!(cdf.eval(1.0), 1.0);
    }

    #[test]
    fn kolmogorov_reference_values() {
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        assert_abs_diff_eq!(kolmogorov_survival(1.0), 0.269_999_671_677_354_5, epsilon = 1e-14);
        assert_abs_diff_eq!(kolmogorov_survival(0.5), 0.963_945_243_664_875_1, epsilon = 1e-14);
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.5), 2.0);
        assert_abs_diff_eq!(quantile_sorted(&xs, 0.05), 0.2, epsilon = 1e-15);
        assert_eq!(quantile_sorted(&xs, 1.0), 4.0);
    }
}
