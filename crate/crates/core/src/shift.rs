//! Choice-shift models: the homogeneous law `2p(1-p)`, the two-group
//! (majoritarian / contrarian) ansatz and its RSS calibration, Gaussian
//! mixture clustering of subjects, and Monte Carlo bands.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::choice_data::{ChoiceDataset, Session};
use crate::error::{domain, Error, Result};
use crate::estimate::{wilks_test, SubjectFilter, SubjectSelection, WilksResult};
use crate::optimize::{self, Bound, GlobalConfig, Objective, TabuConfig};
use crate::par::{self, ExecMode};
use crate::rng::{self, tag};
use crate::stats;

/// Tolerance on the link `beta = alpha F / (1 - F)`.
pub const LINK_TOLERANCE: f64 = 1e-9;

pub fn shift_prob_homogeneous(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!("probability {p} outside [0, 1]")));
    }
    Ok(2.0 * p * (1.0 - p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeteroShiftParams {
    pub shift_alpha: f64,
    pub shift_beta: f64,
    pub f: f64,
}

impl HeteroShiftParams {
    /// Parameters from the majoritarian tilt and fraction; beta follows.
    pub fn from_alpha(shift_alpha: f64, f: f64) -> Result<Self> {
        if !(f > 0.0 && f < 1.0) {
            return Err(domain(format!("majoritarian fraction {f} outside (0, 1)")));
        }
        let p = Self {
            shift_alpha,
            shift_beta: shift_alpha * f / (1.0 - f),
            f,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters from the contrarian tilt and fraction; alpha follows.
    pub fn from_beta(shift_beta: f64, f: f64) -> Result<Self> {
        if !(f > 0.0 && f < 1.0) {
            return Err(domain(format!("majoritarian fraction {f} outside (0, 1)")));
        }
        let p = Self {
            shift_alpha: shift_beta * (1.0 - f) / f,
            shift_beta,
            f,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f > 0.0 && self.f < 1.0) {
            return Err(domain(format!("majoritarian fraction {} outside (0, 1)", self.f)));
        }
        if !(0.0..=1.0).contains(&self.shift_alpha) {
            return Err(domain(format!("shift alpha {} outside [0, 1]", self.shift_alpha)));
        }
        if !(0.0..=2.0).contains(&self.shift_beta) {
            return Err(domain(format!("shift beta {} outside [0, 2]", self.shift_beta)));
        }
        let link = self.shift_alpha * self.f / (1.0 - self.f);
        if (link - self.shift_beta).abs() > LINK_TOLERANCE * (1.0 + link.abs()) {
            return Err(domain(format!(
                "shift beta {} violates beta = alpha F / (1 - F) = {link}",
                self.shift_beta
            )));
        }
        Ok(())
    }
}

/// Majoritarian and contrarian choice probabilities `(p1, p2)`.
pub fn group_probs(p: f64, params: &HeteroShiftParams) -> Result<(f64, f64)> {
    if !(0.5..=1.0).contains(&p) {
        return Err(domain(format!("majority probability {p} outside [0.5, 1]")));
    }
    params.validate()?;
    let v = p * (1.0 - p);
    Ok((p + params.shift_alpha * v, p - params.shift_beta * v))
}

pub fn shift_prob_hetero(p: f64, params: &HeteroShiftParams) -> Result<f64> {
    let (p1, p2) = group_probs(p, params)?;
    Ok(2.0 * params.f * p1 * (1.0 - p1) + 2.0 * (1.0 - params.f) * p2 * (1.0 - p2))
}

/// Offsets `(p1 - p, p - p2)` at `p = 1/2`; in the equal-group case with
/// unit tilts both equal 1/4.
pub fn quarter_offsets(params: &HeteroShiftParams) -> Result<(f64, f64)> {
    let (p1, p2) = group_probs(0.5, params)?;
    Ok((p1 - 0.5, 0.5 - p2))
}

/// Per-pair observation used in calibration: majority probability and
/// observed shift frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftPoint {
    pub p: f64,
    pub shift: f64,
}

/// RSS over a (beta, F) grid; `None` where the implied alpha leaves [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssSurface {
    pub betas: Vec<f64>,
    pub fs: Vec<f64>,
    /// Row-major: `values[i * fs.len() + k]` is RSS at `(betas[i], fs[k])`.
    pub values: Vec<Option<f64>>,
}

impl RssSurface {
    pub fn minimum(&self) -> Option<(f64, f64, f64)> {
        let nf = self.fs.len();
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(i, v)| (self.betas[i / nf], self.fs[i % nf], v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum FractionMode {
    /// F taken from subject clustering.
    Clustered,
    Fixed(f64),
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub beta_steps: usize,
    pub f_steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            beta_steps: 101,
            f_steps: 99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroCalibration {
    pub params: HeteroShiftParams,
    pub rss: f64,
    pub converged: bool,
    pub surface: RssSurface,
}

pub fn rss_hetero(points: &[ShiftPoint], params: &HeteroShiftParams) -> Result<f64> {
    let mut s = 0.0;
    for pt in points {
        s += (shift_prob_hetero(pt.p, params)? - pt.shift).powi(2);
    }
    Ok(s)
}

fn rss_at(points: &[ShiftPoint], beta: f64, f: f64) -> f64 {
    match HeteroShiftParams::from_beta(beta, f) {
        Ok(p) => rss_hetero(points, &p).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    }
}

pub fn rss_surface(points: &[ShiftPoint], grid: &GridConfig) -> RssSurface {
    let nb = grid.beta_steps.max(2);
    let nf = grid.f_steps.max(2);
    let betas: Vec<f64> = (0..nb).map(|i| 2.0 * i as f64 / (nb - 1) as f64).collect();
    let fs: Vec<f64> = (0..nf).map(|k| (k + 1) as f64 / (nf + 1) as f64).collect();
    let mut values = Vec::with_capacity(nb * nf);
    for &b in &betas {
        for &f in &fs {
            let v = rss_at(points, b, f);
            values.push(v.is_finite().then_some(v));
        }
    }
    RssSurface { betas, fs, values }
}

/// Least-squares calibration of the two-group model. With a fixed `F` the
/// search is over beta alone; otherwise over (beta, F).
pub fn calibrate_hetero(
    points: &[ShiftPoint],
    f: Option<f64>,
    optimizer: &GlobalConfig,
    grid: &GridConfig,
    mode: ExecMode,
) -> Result<HeteroCalibration> {
    if points.len() < 2 {
        return Err(Error::NoObservations("calibration needs at least two pairs".into()));
    }
    for pt in points {
        if !(0.5..=1.0).contains(&pt.p) {
            return Err(domain(format!("majority probability {} outside [0.5, 1]", pt.p)));
        }
    }
    let (params, rss, converged) = match f {
        Some(f) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(domain(format!("majoritarian fraction {f} outside (0, 1)")));
            }
            let beta_max = 2.0f64.min(f / (1.0 - f));
            let obj = Objective::new(vec![Bound::closed(0.0, beta_max)], |x: &[f64]| rss_at(points, x[0], f));
            let r = optimize::global_minimize(&obj, optimizer, &[vec![0.0]], mode)?;
            (HeteroShiftParams::from_beta(r.best_point[0], f)?, r.best_value, r.converged)
        }
        None => {
            let obj = Objective::new(vec![Bound::closed(0.0, 2.0), Bound::closed(0.01, 0.99)], |x: &[f64]| {
                rss_at(points, x[0], x[1])
            });
            let r = optimize::global_minimize(&obj, optimizer, &[vec![0.0, 0.5]], mode)?;
            (
                HeteroShiftParams::from_beta(r.best_point[0], r.best_point[1])?,
                r.best_value,
                r.converged,
            )
        }
    };
    Ok(HeteroCalibration {
        params,
        rss,
        converged,
        surface: rss_surface(points, grid),
    })
}

// ---------------------------------------------------------------------------
// Two-component bivariate Gaussian mixture

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    pub restarts: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub eigen_floor: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            tolerance: 1e-8,
            max_iterations: 500,
            eigen_floor: 1e-6,
            seed: 0,
        }
    }
}

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cov2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Cov2 {
    fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        let m = 0.5 * (self.xx + self.yy);
        let d = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (m - d, m + d)
    }

    /// Raise eigenvalues below `floor` to `floor`; returns whether it did.
    fn floor_eigenvalues(&mut self, floor: f64) -> bool {
        let (l1, l2) = self.eigenvalues();
        if l1 >= floor && l1.is_finite() {
            return false;
        }
        // eigenvector of the larger eigenvalue
        let (vx, vy) = if self.xy.abs() > 1e-300 {
            (l2 - self.yy, self.xy)
        } else if self.xx >= self.yy {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let n = (vx * vx + vy * vy).sqrt();
        let (ux, uy) = (vx / n, vy / n);
        let l2 = l2.max(floor);
        let l1 = floor;
        // V diag(l2, l1) V^T with the orthogonal vector (-uy, ux)
        *self = Cov2 {
            xx: l2 * ux * ux + l1 * uy * uy,
            xy: (l2 - l1) * ux * uy,
            yy: l2 * uy * uy + l1 * ux * ux,
        };
        true
    }

    fn log_pdf(&self, mean: [f64; 2], x: [f64; 2]) -> f64 {
        let det = self.det();
        let dx = x[0] - mean[0];
        let dy = x[1] - mean[1];
        let q = (self.yy * dx * dx - 2.0 * self.xy * dx * dy + self.xx * dy * dy) / det;
        -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    /// Component 0 has the higher mean (majoritarian).
    pub weights: [f64; 2],
    pub means: [[f64; 2]; 2],
    pub covariances: [Cov2; 2],
    pub log_likelihood: f64,
    /// Posterior probability of component 1 (contrarian) per point.
    pub posteriors: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// A covariance eigenvalue hit the floor.
    pub degenerate: bool,
    /// Log-likelihood before each M step of the winning restart.
    pub trace: Vec<f64>,
}

fn weighted_moments(points: &[[f64; 2]], w: &[f64]) -> (f64, [f64; 2], Cov2) {
    let n: f64 = w.iter().sum();
    let mut m = [0.0; 2];
    for (p, wi) in points.iter().zip(w) {
        m[0] += wi * p[0];
        m[1] += wi * p[1];
    }
    if n > 0.0 {
        m[0] /= n;
        m[1] /= n;
    }
    let mut c = Cov2 { xx: 0.0, xy: 0.0, yy: 0.0 };
    for (p, wi) in points.iter().zip(w) {
        let dx = p[0] - m[0];
        let dy = p[1] - m[1];
        c.xx += wi * dx * dx;
        c.xy += wi * dx * dy;
        c.yy += wi * dy * dy;
    }
    if n > 0.0 {
        c.xx /= n;
        c.xy /= n;
        c.yy /= n;
    }
    (n, m, c)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

struct EmRun {
    weights: [f64; 2],
    means: [[f64; 2]; 2],
    covs: [Cov2; 2],
    ll: f64,
    resp: Vec<f64>,
    iterations: usize,
    converged: bool,
    degenerate: bool,
    trace: Vec<f64>,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// k-means++ seeding followed by a few Lloyd steps.
fn kmeans_init(points: &[[f64; 2]], rng: &mut impl Rng) -> Vec<f64> {
    let n = points.len();
    let c0 = points[rng.random_range(0..n)];
    let d: Vec<f64> = points.iter().map(|p| dist2(*p, c0)).collect();
    let total: f64 = d.iter().sum();
    let c1 = if total > 0.0 {
        let mut u = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, di) in d.iter().enumerate() {
            if u < *di {
                pick = i;
                break;
            }
            u -= di;
        }
        points[pick]
    } else {
        points[rng.random_range(0..n)]
    };
    let mut centers = [c0, c1];
    let mut assign = vec![0.0; n];
    for _ in 0..10 {
        for (a, p) in assign.iter_mut().zip(points) {
            *a = if dist2(*p, centers[1]) < dist2(*p, centers[0]) { 1.0 } else { 0.0 };
        }
        for (k, c) in centers.iter_mut().enumerate() {
            let w: Vec<f64> = assign.iter().map(|a| if k == 1 { *a } else { 1.0 - a }).collect();
            let (nk, m, _) = weighted_moments(points, &w);
            if nk > 0.0 {
                *c = m;
            }
        }
    }
    assign
}

fn em(points: &[[f64; 2]], init: Vec<f64>, cfg: &GmmConfig) -> EmRun {
    let n = points.len();
    let mut resp = init;
    let mut weights = [0.5; 2];
    let mut means = [[0.0; 2]; 2];
    let mut covs = [Cov2 { xx: 1.0, xy: 0.0, yy: 1.0 }; 2];
    let mut degenerate = false;
    let mut trace = Vec::new();
    let mut ll = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut logp = vec![[0.0; 2]; n];
    loop {
        // M step from responsibilities of component 1
        for k in 0..2 {
            let w: Vec<f64> = resp.iter().map(|r| if k == 1 { *r } else { 1.0 - r }).collect();
            let (nk, m, mut c) = weighted_moments(points, &w);
            weights[k] = (nk / n as f64).clamp(1e-12, 1.0 - 1e-12);
            if nk > 0.0 {
                means[k] = m;
            }
            if c.floor_eigenvalues(cfg.eigen_floor) {
                degenerate = true;
            }
            covs[k] = c;
        }
        // E step
        let mut new_ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            for k in 0..2 {
                logp[i][k] = weights[k].ln() + covs[k].log_pdf(means[k], *p);
            }
            let lse = log_sum_exp(logp[i][0], logp[i][1]);
            new_ll += lse;
            resp[i] = (logp[i][1] - lse).exp();
        }
        trace.push(new_ll);
        iterations += 1;
        let improvement = new_ll - ll;
        ll = new_ll;
        if improvement.abs() < cfg.tolerance {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iterations {
            break;
        }
    }
    EmRun {
        weights,
        means,
        covs,
        ll,
        resp,
        iterations,
        converged,
        degenerate,
        trace,
    }
}

/// Two-component full-covariance Gaussian mixture fitted by EM, best of
/// `cfg.restarts` seeded initializations.
pub fn fit_gmm2(points: &[[f64; 2]], cfg: &GmmConfig, mode: ExecMode) -> Result<GmmFit> {
    if points.len() < 10 {
        return Err(Error::NoObservations(format!(
            "mixture fit needs at least 10 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(domain("mixture points must be finite"));
    }
    if cfg.restarts == 0 || cfg.max_iterations == 0 || cfg.eigen_floor <= 0.0 {
        return Err(Error::InvalidConfig("invalid mixture configuration".into()));
    }
    let runs = par::map_range(mode, cfg.restarts, |r| {
        let mut rng = rng::substream(cfg.seed, &[tag::GMM, r as u64]);
        em(points, kmeans_init(points, &mut rng), cfg)
    });
    let best = runs
        .into_iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.ll.total_cmp(&b.ll).then(j.cmp(i)))
        .map(|(_, r)| r)
        .expect("at least one restart");
    let score = |m: [f64; 2]| m[0] + m[1];
    let swap = score(best.means[1]) > score(best.means[0]);
    let (weights, means, covs, posteriors) = if swap {
        (
            [best.weights[1], best.weights[0]],
            [best.means[1], best.means[0]],
            [best.covs[1], best.covs[0]],
            best.resp.iter().map(|r| 1.0 - r).collect(),
        )
    } else {
        (best.weights, best.means, best.covs, best.resp)
    };
    Ok(GmmFit {
        weights,
        means,
        covariances: covs,
        log_likelihood: best.ll,
        posteriors,
        iterations: best.iterations,
        converged: best.converged,
        degenerate: best.degenerate,
        trace: best.trace,
    })
}

/// Maximized log-likelihood of a single bivariate Gaussian.
pub fn single_gaussian_log_likelihood(points: &[[f64; 2]], eigen_floor: f64) -> f64 {
    let w = vec![1.0; points.len()];
    let (_, m, mut c) = weighted_moments(points, &w);
    c.floor_eigenvalues(eigen_floor);
    points.iter().map(|p| c.log_pdf(m, *p)).sum()
}

/// Degrees of freedom of the mixture-vs-single-Gaussian comparison:
/// 11 mixture parameters against 5.
pub const HOMOGENEITY_DF: u32 = 6;

pub fn homogeneity_wilks(points: &[[f64; 2]], fit: &GmmFit, eigen_floor: f64) -> Result<WilksResult> {
    let single = single_gaussian_log_likelihood(points, eigen_floor);
    wilks_test(single, fit.log_likelihood, HOMOGENEITY_DF)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLabel {
    Majoritarian,
    Contrarian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub labels: Vec<GroupLabel>,
    /// Points with posterior exactly 1/2, assigned to the majoritarians.
    pub ties: usize,
    pub majoritarian_fraction: f64,
}

pub fn classify_subjects(fit: &GmmFit) -> Classification {
    let labels: Vec<GroupLabel> = fit
        .posteriors
        .iter()
        .map(|&q| if q > 0.5 { GroupLabel::Contrarian } else { GroupLabel::Majoritarian })
        .collect();
    let ties = fit.posteriors.iter().filter(|&&q| q == 0.5).count();
    let maj = labels.iter().filter(|l| **l == GroupLabel::Majoritarian).count();
    Classification {
        majoritarian_fraction: maj as f64 / labels.len().max(1) as f64,
        labels,
        ties,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub p: f64,
    pub predicted: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandConfig {
    pub n_sims: usize,
    pub quantiles: (f64, f64),
    pub seed: u64,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            n_sims: 3000,
            quantiles: (0.05, 0.95),
            seed: 0,
        }
    }
}

/// Simulated shift-fraction quantiles per pair: `n_subjects` split into
/// `round(F n)` majoritarians and the rest, two independent sessions each.
pub fn monte_carlo_band(
    ps: &[f64],
    params: &HeteroShiftParams,
    n_subjects: usize,
    cfg: &BandConfig,
    mode: ExecMode,
) -> Result<Vec<BandRow>> {
    if n_subjects == 0 || cfg.n_sims == 0 {
        return Err(Error::InvalidConfig("band needs subjects and simulations".into()));
    }
    let (qlo, qhi) = cfg.quantiles;
    if !(0.0..=1.0).contains(&qlo) || !(0.0..=1.0).contains(&qhi) || qlo > qhi {
        return Err(Error::InvalidConfig(format!("bad band quantiles {:?}", cfg.quantiles)));
    }
    let n_maj = (params.f * n_subjects as f64).round() as usize;
    let probs: Vec<(f64, f64, f64)> = ps
        .iter()
        .map(|&p| {
            let (p1, p2) = group_probs(p, params)?;
            Ok((p1, p2, shift_prob_hetero(p, params)?))
        })
        .collect::<Result<_>>()?;
    let rows = par::map_range(mode, ps.len(), |j| {
        let (p1, p2, predicted) = probs[j];
        let mut rng = rng::substream(cfg.seed, &[tag::BAND, j as u64]);
        let mut fracs: Vec<f64> = (0..cfg.n_sims)
            .map(|_| {
                let mut shifted = 0usize;
                for s in 0..n_subjects {
                    let pg = if s < n_maj { p1 } else { p2 };
                    let c1 = rng.random::<f64>() < pg;
                    let c2 = rng.random::<f64>() < pg;
                    if c1 != c2 {
                        shifted += 1;
                    }
                }
                shifted as f64 / n_subjects as f64
            })
            .collect();
        fracs.sort_by(f64::total_cmp);
        BandRow {
            p: ps[j],
            predicted,
            low: stats::quantile_sorted(&fracs, qlo),
            high: stats::quantile_sorted(&fracs, qhi),
        }
    });
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Dataset-level pipeline

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    pub gmm: GmmConfig,
    pub optimizer: GlobalConfig,
    pub fraction: FractionMode,
    /// Average both sessions when computing each pair's majority
    /// probability (session 1 only by default).
    pub pooled_sessions: bool,
    pub band: BandConfig,
    pub grid: GridConfig,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            gmm: GmmConfig::default(),
            optimizer: GlobalConfig {
                tabu: TabuConfig {
                    restarts: 10,
                    ..TabuConfig::default()
                },
                ..GlobalConfig::default()
            },
            fraction: FractionMode::Clustered,
            pooled_sessions: false,
            band: BandConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

impl ShiftConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.gmm.seed = seed;
        self.optimizer.tabu.seed = seed;
        self.band.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftCurveRow {
    pub pair: String,
    pub p: f64,
    pub observed: f64,
    pub homogeneous: f64,
    pub heterogeneous: f64,
    pub low: Option<f64>,
    pub high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPoint {
    pub subject: String,
    pub time1: f64,
    pub time2: f64,
    pub posterior_contrarian: f64,
    pub label: GroupLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftAnalysis {
    pub gmm: GmmFit,
    pub homogeneity: WilksResult,
    pub classification: Classification,
    pub subjects: Vec<SubjectPoint>,
    pub calibration: HeteroCalibration,
    pub homogeneous_rss: f64,
    pub curve: Vec<ShiftCurveRow>,
    pub quarter_offsets: (f64, f64),
}

impl ShiftAnalysis {
    /// Subject selection for group-filtered fits.
    pub fn selection(&self, dataset: &ChoiceDataset, filter: SubjectFilter) -> SubjectSelection {
        let want = match filter {
            SubjectFilter::All => return SubjectSelection::all(),
            SubjectFilter::Majoritarian => GroupLabel::Majoritarian,
            SubjectFilter::Contrarian => GroupLabel::Contrarian,
        };
        let mask = dataset
            .subjects()
            .iter()
            .map(|s| {
                self.subjects
                    .iter()
                    .any(|p| &p.subject == s && p.label == want)
            })
            .collect();
        SubjectSelection::masked(filter, mask)
    }
}

/// Per-pair majority probability and observed shift frequency.
pub fn shift_points(dataset: &ChoiceDataset, pooled: bool) -> Result<Vec<(String, ShiftPoint)>> {
    let mut out = Vec::new();
    for (j, pair) in dataset.pairs().iter().enumerate() {
        let Ok(shift) = dataset.shift_frequency_at(j) else {
            continue;
        };
        let p = if pooled {
            let (a1, b1) = dataset.counts(j, Session::Time1, None);
            let (a2, b2) = dataset.counts(j, Session::Time2, None);
            let (a, b) = (a1 + a2, b1 + b2);
            a.max(b) as f64 / (a + b) as f64
        } else {
            dataset.majority_frequency_at(j, Session::Time1)?
        };
        out.push((pair.id.clone(), ShiftPoint { p, shift }));
    }
    Ok(out)
}

/// Clustering, homogeneity test, calibration and band for a two-session
/// dataset.
pub fn analyze_shift(dataset: &ChoiceDataset, cfg: &ShiftConfig, with_band: bool, mode: ExecMode) -> Result<ShiftAnalysis> {
    if !dataset.has_session(Session::Time1) || !dataset.has_session(Session::Time2) {
        return Err(Error::NoObservations("shift analysis needs both sessions".into()));
    }
    let majority = dataset.subject_majority_stats();
    let usable: Vec<(String, [f64; 2])> = majority
        .into_iter()
        .filter_map(|m| Some((m.subject, [m.time1?, m.time2?])))
        .collect();
    let points: Vec<[f64; 2]> = usable.iter().map(|u| u.1).collect();
    let gmm = fit_gmm2(&points, &cfg.gmm, mode)?;
    let homogeneity = homogeneity_wilks(&points, &gmm, cfg.gmm.eigen_floor)?;
    let classification = classify_subjects(&gmm);
    let subjects = usable
        .iter()
        .enumerate()
        .map(|(i, (s, pt))| SubjectPoint {
            subject: s.clone(),
            time1: pt[0],
            time2: pt[1],
            posterior_contrarian: gmm.posteriors[i],
            label: classification.labels[i],
        })
        .collect();

    let named = shift_points(dataset, cfg.pooled_sessions)?;
    let pts: Vec<ShiftPoint> = named.iter().map(|n| n.1).collect();
    let f = match cfg.fraction {
        FractionMode::Clustered => Some(classification.majoritarian_fraction.clamp(0.01, 0.99)),
        FractionMode::Fixed(f) => Some(f),
        FractionMode::Free => None,
    };
    let calibration = calibrate_hetero(&pts, f, &cfg.optimizer, &cfg.grid, mode)?;
    let homogeneous_rss = pts
        .iter()
        .map(|pt| (2.0 * pt.p * (1.0 - pt.p) - pt.shift).powi(2))
        .sum();
    let band = if with_band {
        let ps: Vec<f64> = pts.iter().map(|p| p.p).collect();
        Some(monte_carlo_band(&ps, &calibration.params, usable.len(), &cfg.band, mode)?)
    } else {
        None
    };
    let curve = named
        .iter()
        .enumerate()
        .map(|(j, (id, pt))| {
            Ok(ShiftCurveRow {
                pair: id.clone(),
                p: pt.p,
                observed: pt.shift,
                homogeneous: shift_prob_homogeneous(pt.p)?,
                heterogeneous: shift_prob_hetero(pt.p, &calibration.params)?,
                low: band.as_ref().map(|b| b[j].low),
                high: band.as_ref().map(|b| b[j].high),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ShiftAnalysis {
        quarter_offsets: quarter_offsets(&calibration.params)?,
        gmm,
        homogeneity,
        classification,
        subjects,
        calibration,
        homogeneous_rss,
        curve,
    })
}
