//! Maximum-likelihood calibration of logit-CPT and QDT: aggregate fits,
//! two-stage hierarchical individual fits, session-2 prediction and model
//! comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::choice_data::{Choice, ChoiceDataset, LotteryKind, LotteryPair, Session};
use crate::cpt::{self, CptParams};
use crate::error::{Error, Result};
use crate::optimize::{self, GlobalConfig, Objective, ParamSpace, SimplexConfig, TabuConfig};
use crate::par::{self, ExecMode};
use crate::rng;
use crate::qdt::{self, QdtParams, DEFAULT_WEALTH0};
use crate::stats::{self, LogNormal};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Slack for a nested model fitting worse than the restricted one.
pub const WILKS_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    LogitCpt,
    Qdt,
}

impl ModelId {
    pub fn n_params(self) -> usize {
        match self {
            ModelId::LogitCpt => 5,
            ModelId::Qdt => 7,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::LogitCpt => "logit_cpt",
            ModelId::Qdt => "qdt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelParams {
    LogitCpt(CptParams),
    Qdt(QdtParams),
}

impl ModelParams {
    pub fn model(&self) -> ModelId {
        match self {
            ModelParams::LogitCpt(_) => ModelId::LogitCpt,
            ModelParams::Qdt(_) => ModelId::Qdt,
        }
    }

    pub fn cpt(&self) -> &CptParams {
        match self {
            ModelParams::LogitCpt(c) => c,
            ModelParams::Qdt(q) => &q.cpt,
        }
    }

    /// `(p_A, p_B)` for a pair.
    pub fn choice_probs(&self, pair: &LotteryPair) -> Result<(f64, f64)> {
        match self {
            ModelParams::LogitCpt(c) => Ok(cpt::pair_probs(&pair.a, &pair.b, c)),
            ModelParams::Qdt(q) => {
                let pr = qdt::prospect_prob(pair, q)?;
                Ok((pr.p_a, pr.p_b))
            }
        }
    }

    /// `(ln p_A, ln p_B)`; logit-CPT (and QDT with zero attraction) use the
    /// tail-accurate logit form.
    pub fn choice_log_probs(&self, pair: &LotteryPair) -> Result<(f64, f64)> {
        match self {
            ModelParams::LogitCpt(c) => Ok(cpt::pair_log_probs(&pair.a, &pair.b, c)),
            ModelParams::Qdt(q) => {
                let pr = qdt::prospect_prob(pair, q)?;
                if pr.q_a == 0.0 {
                    Ok(cpt::pair_log_probs(&pair.a, &pair.b, &q.cpt))
                } else {
                    Ok((ln_prob(pr.p_a), ln_prob(pr.p_b)))
                }
            }
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            ModelParams::LogitCpt(c) => c.to_array().to_vec(),
            ModelParams::Qdt(q) => q.to_array().to_vec(),
        }
    }

    pub fn from_slice(model: ModelId, x: &[f64], wealth0: f64) -> Self {
        match model {
            ModelId::LogitCpt => ModelParams::LogitCpt(CptParams::from_array([x[0], x[1], x[2], x[3], x[4]])),
            ModelId::Qdt => ModelParams::Qdt(QdtParams::from_array(
                [x[0], x[1], x[2], x[3], x[4], x[5], x[6]],
                wealth0,
            )),
        }
    }

    /// Named parameter values, in canonical order.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        QdtParams::NAMES.iter().copied().zip(self.to_vec()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectFilter {
    All,
    Majoritarian,
    Contrarian,
}

/// Which subjects enter a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSelection {
    pub filter: SubjectFilter,
    /// Inclusion mask over the dataset's subjects; `None` keeps everyone.
    pub mask: Option<Vec<bool>>,
}

impl SubjectSelection {
    pub fn all() -> Self {
        Self {
            filter: SubjectFilter::All,
            mask: None,
        }
    }

    pub fn masked(filter: SubjectFilter, mask: Vec<bool>) -> Self {
        Self {
            filter,
            mask: Some(mask),
        }
    }

    pub fn includes(&self, s: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[s])
    }
}

/// Natural-scale search box for each parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamBounds {
    pub alpha: (f64, f64),
    pub lambda: (f64, f64),
    pub delta: (f64, f64),
    pub gamma: (f64, f64),
    pub phi: (f64, f64),
    pub a: (f64, f64),
    pub eta: (f64, f64),
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            alpha: (0.05, 2.0),
            lambda: (0.05, 10.0),
            delta: (0.05, 5.0),
            gamma: (0.05, 3.0),
            phi: (1e-4, 100.0),
            a: (0.0, 50.0),
            eta: (1e-3, 1.0),
        }
    }
}

impl ParamBounds {
    fn all(&self) -> [(f64, f64); 7] {
        [self.alpha, self.lambda, self.delta, self.gamma, self.phi, self.a, self.eta]
    }

    /// Positive parameters are searched on a log scale; `a` stays linear so
    /// that the nested point `a = 0` is reachable.
    pub fn space(&self, model: ModelId) -> Result<ParamSpace> {
        let n = model.n_params();
        let b = self.all();
        let lower = b[..n].iter().map(|x| x.0).collect();
        let upper = b[..n].iter().map(|x| x.1).collect();
        let log = (0..n).map(|i| i != 5).collect();
        ParamSpace::new(lower, upper, log)
    }

    fn cpt_space(&self) -> Result<ParamSpace> {
        self.space(ModelId::LogitCpt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub aggregate: GlobalConfig,
    pub individual: GlobalConfig,
    pub bounds: ParamBounds,
    pub wealth0: f64,
    pub sigma_floor: f64,
    /// Relative distance (on the optimizer scale) below which a parameter
    /// is reported as sitting on its bound.
    pub boundary_tolerance: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            aggregate: GlobalConfig::default(),
            individual: GlobalConfig {
                tabu: TabuConfig {
                    restarts: 8,
                    iterations: 10,
                    ..TabuConfig::default()
                },
                simplex: SimplexConfig::default(),
                local_starts: 2,
            },
            bounds: ParamBounds::default(),
            wealth0: DEFAULT_WEALTH0,
            sigma_floor: 1e-3,
            boundary_tolerance: 1e-3,
        }
    }
}

impl EstimationConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.aggregate.tabu.seed = seed;
        self.individual.tabu.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateFit {
    pub model: ModelId,
    pub params: ModelParams,
    pub log_likelihood: f64,
    pub session: Session,
    pub subject_filter: SubjectFilter,
    pub n_subjects: usize,
    pub n_observations: u64,
    pub converged: bool,
    pub evaluations: usize,
    /// Parameters that ended on a bound of the search box.
    pub at_bound: Vec<String>,
}

#[inline]
fn ln_prob(p: f64) -> f64 {
    p.max(f64::MIN_POSITIVE).ln()
}

/// Choice counts per pair for one session and subject selection.
#[derive(Debug, Clone)]
pub struct PairCounts {
    pub n_a: Vec<f64>,
    pub n_b: Vec<f64>,
}

impl PairCounts {
    pub fn new(dataset: &ChoiceDataset, session: Session, selection: &SubjectSelection) -> Self {
        let n = dataset.n_pairs();
        let mut n_a = vec![0.0; n];
        let mut n_b = vec![0.0; n];
        for s in 0..dataset.n_subjects() {
            if !selection.includes(s) {
                continue;
            }
            for p in 0..n {
                match dataset.choice(s, p, session) {
                    Some(Choice::A) => n_a[p] += 1.0,
                    Some(Choice::B) => n_b[p] += 1.0,
                    None => {}
                }
            }
        }
        Self { n_a, n_b }
    }

    pub fn total(&self) -> f64 {
        self.n_a.iter().chain(&self.n_b).sum()
    }
}

/// Aggregate log-likelihood from per-pair counts.
pub fn aggregate_log_likelihood(pairs: &[LotteryPair], counts: &PairCounts, params: &ModelParams) -> Result<f64> {
    let mut ll = 0.0;
    for (j, pair) in pairs.iter().enumerate() {
        let (na, nb) = (counts.n_a[j], counts.n_b[j]);
        if na + nb == 0.0 {
            continue;
        }
        let (la, lb) = params.choice_log_probs(pair)?;
        if na > 0.0 {
            ll += na * la;
        }
        if nb > 0.0 {
            ll += nb * lb;
        }
    }
    Ok(ll)
}

/// Log-likelihood by a direct pass over every recorded choice.
pub fn observation_log_likelihood(
    dataset: &ChoiceDataset,
    params: &ModelParams,
    session: Session,
    selection: &SubjectSelection,
) -> Result<f64> {
    let log_probs: Vec<(f64, f64)> = dataset
        .pairs()
        .iter()
        .map(|p| params.choice_log_probs(p))
        .collect::<Result<_>>()?;
    let mut ll = 0.0;
    for s in 0..dataset.n_subjects() {
        if !selection.includes(s) {
            continue;
        }
        for (j, (la, lb)) in log_probs.iter().enumerate() {
            match dataset.choice(s, j, session) {
                Some(Choice::A) => ll += la,
                Some(Choice::B) => ll += lb,
                None => {}
            }
        }
    }
    Ok(ll)
}

fn names_at_bound(space: &ParamSpace, x: &[f64], tol: f64) -> Vec<String> {
    space
        .at_boundary(x, tol)
        .into_iter()
        .map(|i| QdtParams::NAMES[i].to_string())
        .collect()
}

/// Aggregate maximum-likelihood fit.
///
/// For `Qdt`, `nested_from` should hold the logit-CPT fit on the same data;
/// its optimum (with `a = 0`) seeds the search so the QDT likelihood never
/// falls below the logit-CPT one. It is computed here when absent.
pub fn fit_aggregate(
    dataset: &ChoiceDataset,
    model: ModelId,
    session: Session,
    selection: &SubjectSelection,
    nested_from: Option<&AggregateFit>,
    cfg: &EstimationConfig,
    mode: ExecMode,
) -> Result<AggregateFit> {
    let counts = PairCounts::new(dataset, session, selection);
    let n_obs = counts.total();
    if n_obs == 0.0 {
        return Err(Error::NoObservations(format!(
            "session {} with subject filter {:?}",
            session.number(),
            selection.filter
        )));
    }
    let n_subjects = (0..dataset.n_subjects())
        .filter(|&s| {
            selection.includes(s) && (0..dataset.n_pairs()).any(|p| dataset.choice(s, p, session).is_some())
        })
        .count();
    let space = cfg.bounds.space(model)?;
    let pairs = dataset.pairs();
    let wealth0 = cfg.wealth0;

    let mut extra: Vec<Vec<f64>> = Vec::new();
    let restricted;
    if model == ModelId::Qdt {
        let base = match nested_from {
            Some(f) if f.model == ModelId::LogitCpt => f.clone(),
            _ => {
                restricted = fit_aggregate(dataset, ModelId::LogitCpt, session, selection, None, cfg, mode)?;
                restricted
            }
        };
        let c = base.params.to_vec();
        // a = 0 reproduces the logit-CPT optimum exactly; the other seeds
        // cover the (a, eta) plane around it
        for eta in [0.01f64, 0.05, 0.2] {
            let mut x = c.clone();
            x.extend([0.0, eta.clamp(cfg.bounds.eta.0, cfg.bounds.eta.1)]);
            extra.push(space.to_internal(&x));
        }
        for a in [0.5f64, 2.0, 8.0] {
            for eta in [0.005f64, 0.03, 0.3] {
                let mut x = c.clone();
                x.extend([
                    a.clamp(cfg.bounds.a.0, cfg.bounds.a.1),
                    eta.clamp(cfg.bounds.eta.0, cfg.bounds.eta.1),
                ]);
                extra.push(space.to_internal(&x));
            }
        }
    } else if let Some(f) = nested_from {
        extra.push(space.to_internal(&space.clamp(&f.params.to_vec()[..5])));
    }

    let obj = Objective::new(space.bounds(), |y: &[f64]| {
        let x = space.to_natural(y);
        let params = ModelParams::from_slice(model, &x, wealth0);
        match aggregate_log_likelihood(pairs, &counts, &params) {
            Ok(ll) => -ll,
            Err(_) => f64::INFINITY,
        }
    });
    let res = optimize::global_minimize(&obj, &cfg.aggregate, &extra, mode)?;
    let x = space.to_natural(&res.best_point);
    let params = ModelParams::from_slice(model, &x, wealth0);
    Ok(AggregateFit {
        model,
        params,
        log_likelihood: -res.best_value,
        session,
        subject_filter: selection.filter,
        n_subjects,
        n_observations: n_obs as u64,
        converged: res.converged,
        evaluations: res.evaluations,
        at_bound: names_at_bound(&space, &x, cfg.boundary_tolerance),
    })
}

/// Lognormal population distributions for the penalized parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub alpha: LogNormal,
    pub lambda: LogNormal,
    pub delta: LogNormal,
    pub gamma: LogNormal,
}

impl PriorSpec {
    /// Sum of log densities of the penalized parameters.
    pub fn log_density(&self, c: &CptParams) -> f64 {
        let terms = [
            self.alpha.log_pdf(c.alpha),
            self.lambda.log_pdf(c.lambda),
            self.delta.log_pdf(c.delta),
            self.gamma.log_pdf(c.gamma),
        ];
        terms.into_iter().map(|t| t.unwrap_or(f64::NEG_INFINITY)).sum()
    }

    pub fn medians(&self) -> [f64; 4] {
        [
            self.alpha.median(),
            self.lambda.median(),
            self.delta.median(),
            self.gamma.median(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorFit {
    pub priors: PriorSpec,
    /// Subjects dropped because an estimate was not strictly positive.
    pub excluded: usize,
}

/// Lognormal ML estimates of the α, λ, δ, γ distributions across subjects.
pub fn fit_priors(fits: &[IndividualFit], sigma_floor: f64) -> Result<PriorFit> {
    let usable: Vec<&CptParams> = fits
        .iter()
        .map(|f| f.params.cpt())
        .filter(|c| c.alpha > 0.0 && c.lambda > 0.0 && c.delta > 0.0 && c.gamma > 0.0)
        .collect();
    if usable.len() < 2 {
        return Err(Error::NoObservations(
            "fitting priors needs at least two subjects with positive estimates".into(),
        ));
    }
    let col = |f: fn(&CptParams) -> f64| -> Result<LogNormal> {
        LogNormal::fit_ml(&usable.iter().map(|c| f(c)).collect::<Vec<_>>(), sigma_floor)
    };
    Ok(PriorFit {
        priors: PriorSpec {
            alpha: col(|c| c.alpha)?,
            lambda: col(|c| c.lambda)?,
            delta: col(|c| c.delta)?,
            gamma: col(|c| c.gamma)?,
        },
        excluded: fits.len() - usable.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualFit {
    pub subject: String,
    pub params: ModelParams,
    pub log_likelihood: f64,
    pub penalized_objective: f64,
    pub explained_fraction: f64,
    pub n_observations: usize,
    pub converged: bool,
    pub at_bound: Vec<String>,
}

/// Modal-choice accuracy: share of answered pairs where the more probable
/// option was chosen, with exact ties counted as half. `scores` holds
/// `(p_A, p_B)` or any monotone transform of them (such as log
/// probabilities).
pub fn explained_fraction(scores: &[(f64, f64)], choices: &[Option<Choice>]) -> Option<f64> {
    let mut credit = 0.0;
    let mut n = 0usize;
    for ((sa, sb), c) in scores.iter().zip(choices) {
        let Some(c) = c else { continue };
        n += 1;
        credit += if sa == sb {
            0.5
        } else if (sa > sb) == (*c == Choice::A) {
            1.0
        } else {
            0.0
        };
    }
    (n > 0).then(|| credit / n as f64)
}

fn log_probs_for(pairs: &[LotteryPair], params: &ModelParams) -> Result<Vec<(f64, f64)>> {
    pairs.iter().map(|p| params.choice_log_probs(p)).collect()
}

/// Fixed tanh attraction term per pair, taken from the aggregate QDT fit.
fn anchor_tanh(pairs: &[LotteryPair], anchor: &AggregateFit) -> Option<Vec<f64>> {
    match anchor.params {
        ModelParams::Qdt(q) => Some(
            pairs
                .iter()
                .map(|p| {
                    let gap = qdt::lottery_cara(&p.a, q.eta, q.wealth0) - qdt::lottery_cara(&p.b, q.eta, q.wealth0);
                    (q.a * gap).tanh()
                })
                .collect(),
        ),
        ModelParams::LogitCpt(_) => None,
    }
}

/// Per-pair `(ln p_A, ln p_B)` for one subject.
fn individual_log_probs(pairs: &[LotteryPair], c: &CptParams, tanh: Option<&[f64]>) -> Vec<(f64, f64)> {
    pairs
        .iter()
        .enumerate()
        .map(|(j, p)| match tanh {
            Some(t) if t[j] != 0.0 => {
                let (fa, fb) = cpt::pair_probs(&p.a, &p.b, c);
                match qdt::combine(fa, fb, t[j]) {
                    Ok(pr) if pr.q_a != 0.0 => (ln_prob(pr.p_a), ln_prob(pr.p_b)),
                    Ok(_) => cpt::pair_log_probs(&p.a, &p.b, c),
                    Err(_) => (f64::NAN, f64::NAN),
                }
            }
            _ => cpt::pair_log_probs(&p.a, &p.b, c),
        })
        .collect()
}

fn subject_ll(log_probs: &[(f64, f64)], choices: &[Option<Choice>]) -> f64 {
    let mut ll = 0.0;
    for ((la, lb), c) in log_probs.iter().zip(choices) {
        match c {
            Some(Choice::A) => ll += la,
            Some(Choice::B) => ll += lb,
            None => {}
        }
    }
    if ll.is_nan() {
        f64::NEG_INFINITY
    } else {
        ll
    }
}

/// Per-subject fits over (α, λ, δ, γ, φ). With `priors`, the objective adds
/// the lognormal log densities of α, λ, δ, γ; φ is never penalized. QDT
/// subjects share the aggregate `a` and `eta` of `anchor`.
pub fn fit_individuals(
    dataset: &ChoiceDataset,
    session: Session,
    priors: Option<&PriorSpec>,
    anchor: &AggregateFit,
    cfg: &EstimationConfig,
    mode: ExecMode,
) -> Result<Vec<IndividualFit>> {
    let pairs = dataset.pairs();
    let tanh = anchor_tanh(pairs, anchor);
    let space = cfg.bounds.cpt_space()?;
    let warm = space.to_internal(&space.clamp(&anchor.params.to_vec()[..5]));
    let subjects: Vec<usize> = (0..dataset.n_subjects())
        .filter(|&s| (0..dataset.n_pairs()).any(|p| dataset.choice(s, p, session).is_some()))
        .collect();
    if subjects.is_empty() {
        return Err(Error::NoObservations(format!("session {}", session.number())));
    }
    let results = par::map_slice(mode, &subjects, |&s| -> Result<IndividualFit> {
        let choices: Vec<Option<Choice>> = (0..pairs.len()).map(|p| dataset.choice(s, p, session)).collect();
        let objective = |x: &[f64]| -> (f64, f64) {
            let c = CptParams::from_array([x[0], x[1], x[2], x[3], x[4]]);
            let ll = subject_ll(&individual_log_probs(pairs, &c, tanh.as_deref()), &choices);
            let penalty = priors.map_or(0.0, |pr| pr.log_density(&c));
            (ll, ll + penalty)
        };
        let obj = Objective::new(space.bounds(), |y: &[f64]| -objective(&space.to_natural(y)).1);
        let mut gcfg = cfg.individual;
        gcfg.tabu.seed = rng::derive_seed(cfg.individual.tabu.seed, &[rng::tag::SUBJECT_FIT, s as u64]);
        let res = optimize::global_minimize(&obj, &gcfg, std::slice::from_ref(&warm), ExecMode::Sequential)?;
        let x = space.to_natural(&res.best_point);
        let c = CptParams::from_array([x[0], x[1], x[2], x[3], x[4]]);
        let (ll, pen) = objective(&x);
        let params = match anchor.params {
            ModelParams::Qdt(q) => ModelParams::Qdt(QdtParams { cpt: c, ..q }),
            ModelParams::LogitCpt(_) => ModelParams::LogitCpt(c),
        };
        let scores = individual_log_probs(pairs, &c, tanh.as_deref());
        Ok(IndividualFit {
            subject: dataset.subjects()[s].clone(),
            params,
            log_likelihood: ll,
            penalized_objective: pen,
            explained_fraction: explained_fraction(&scores, &choices).unwrap_or(0.0),
            n_observations: choices.iter().flatten().count(),
            converged: res.converged,
            at_bound: names_at_bound(&space, &x, cfg.boundary_tolerance),
        })
    });
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalFit {
    pub model: ModelId,
    pub session: Session,
    pub priors: PriorFit,
    pub unpenalized: Vec<IndividualFit>,
    pub penalized: Vec<IndividualFit>,
}

impl HierarchicalFit {
    pub fn mean_log_likelihood(&self) -> f64 {
        mean(self.penalized.iter().map(|f| f.log_likelihood))
    }

    pub fn mean_explained_fraction(&self) -> f64 {
        mean(self.penalized.iter().map(|f| f.explained_fraction))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Unpenalized individual fits, lognormal priors fitted to them, then the
/// prior-weighted refit.
pub fn fit_hierarchical(
    dataset: &ChoiceDataset,
    session: Session,
    anchor: &AggregateFit,
    cfg: &EstimationConfig,
    mode: ExecMode,
) -> Result<HierarchicalFit> {
    let unpenalized = fit_individuals(dataset, session, None, anchor, cfg, mode)?;
    let priors = fit_priors(&unpenalized, cfg.sigma_floor)?;
    let penalized = fit_individuals(dataset, session, Some(&priors.priors), anchor, cfg, mode)?;
    Ok(HierarchicalFit {
        model: anchor.model,
        session,
        priors,
        unpenalized,
        penalized,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilksResult {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
}

/// Likelihood-ratio test of a restricted model against a nesting one.
pub fn wilks_test(ll_restricted: f64, ll_full: f64, df: u32) -> Result<WilksResult> {
    let diff = ll_full - ll_restricted;
    if diff < -WILKS_SLACK {
        return Err(Error::Optimizer(format!(
            "nesting model fits worse than the restricted one by {}",
            -diff
        )));
    }
    let statistic = 2.0 * diff.max(0.0);
    Ok(WilksResult {
        statistic,
        df,
        p_value: stats::chi_square_survival(statistic, df)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPrediction {
    pub subject: String,
    pub log_likelihood: f64,
    pub predicted_fraction: f64,
    pub n_observations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    pub pair: String,
    pub kind: LotteryKind,
    pub predicted_b: f64,
    pub observed_b: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPrediction {
    pub session: Session,
    pub subjects: Vec<SubjectPrediction>,
    pub pairs: Vec<PairPrediction>,
    pub mean_log_likelihood: f64,
    pub mean_predicted_fraction: f64,
}

/// Parameters used for prediction: one set for everybody, or one per subject.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Aggregate(&'a ModelParams),
    Individual(&'a [IndividualFit]),
}

/// Score fitted parameters against the choices of `session` (session 2 for
/// out-of-sample prediction).
pub fn predict_session(dataset: &ChoiceDataset, predictor: Predictor<'_>, session: Session) -> Result<SessionPrediction> {
    if !dataset.has_session(session) {
        return Err(Error::NoObservations(format!("session {} is missing", session.number())));
    }
    let pairs = dataset.pairs();
    let shared = match predictor {
        Predictor::Aggregate(p) => Some(log_probs_for(pairs, p)?),
        Predictor::Individual(_) => None,
    };
    let by_subject: BTreeMap<&str, &IndividualFit> = match predictor {
        Predictor::Individual(fits) => fits.iter().map(|f| (f.subject.as_str(), f)).collect(),
        Predictor::Aggregate(_) => BTreeMap::new(),
    };
    let mut subjects = Vec::new();
    let mut pred_b = vec![0.0; pairs.len()];
    let mut pred_n = vec![0usize; pairs.len()];
    for (s, id) in dataset.subjects().iter().enumerate() {
        let probs = match &shared {
            Some(p) => p.clone(),
            None => match by_subject.get(id.as_str()) {
                Some(f) => log_probs_for(pairs, &f.params)?,
                None => continue,
            },
        };
        let choices: Vec<Option<Choice>> = (0..pairs.len()).map(|p| dataset.choice(s, p, session)).collect();
        let Some(frac) = explained_fraction(&probs, &choices) else {
            continue;
        };
        for (j, c) in choices.iter().enumerate() {
            if c.is_some() {
                pred_b[j] += probs[j].1.exp();
                pred_n[j] += 1;
            }
        }
        subjects.push(SubjectPrediction {
            subject: id.clone(),
            log_likelihood: subject_ll(&probs, &choices),
            predicted_fraction: frac,
            n_observations: choices.iter().flatten().count(),
        });
    }
    let mut pair_rows = Vec::new();
    for (j, pair) in pairs.iter().enumerate() {
        if pred_n[j] == 0 {
            continue;
        }
        let predicted_b = pred_b[j] / pred_n[j] as f64;
        let observed_b = dataset.choice_frequency_at(j, session)?;
        pair_rows.push(PairPrediction {
            pair: pair.id.clone(),
            kind: pair.kind,
            predicted_b,
            observed_b,
            residual: observed_b - predicted_b,
        });
    }
    Ok(SessionPrediction {
        session,
        mean_log_likelihood: mean(subjects.iter().map(|s| s.log_likelihood)),
        mean_predicted_fraction: mean(subjects.iter().map(|s| s.predicted_fraction)),
        subjects,
        pairs: pair_rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyFit {
    pub rss_by_kind: BTreeMap<LotteryKind, f64>,
    pub rss_all: f64,
    pub correlation: Option<f64>,
}

/// RSS (overall and by lottery kind) and Pearson correlation between
/// predicted and observed choice frequencies.
pub fn frequency_fit(dataset: &ChoiceDataset, params: &ModelParams, session: Session) -> Result<FrequencyFit> {
    let mut pred = Vec::new();
    let mut obs = Vec::new();
    let mut by_kind: BTreeMap<LotteryKind, f64> = BTreeMap::new();
    for (j, pair) in dataset.pairs().iter().enumerate() {
        let Ok(observed) = dataset.choice_frequency_at(j, session) else {
            continue;
        };
        let predicted = params.choice_probs(pair)?.1;
        *by_kind.entry(pair.kind).or_default() += (predicted - observed).powi(2);
        pred.push(predicted);
        obs.push(observed);
    }
    if pred.is_empty() {
        return Err(Error::NoObservations(format!("session {}", session.number())));
    }
    Ok(FrequencyFit {
        rss_by_kind: by_kind,
        rss_all: stats::rss(&pred, &obs),
        correlation: stats::pearson(&pred, &obs).ok(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: ModelId,
    pub log_likelihood: f64,
    pub frequency_fit: FrequencyFit,
    pub mean_individual_log_likelihood: Option<f64>,
    pub mean_explained_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub session: Session,
    pub logit_cpt: ModelMetrics,
    pub qdt: ModelMetrics,
    pub wilks: WilksResult,
}

/// Compare aggregate logit-CPT and QDT fits on one session. Individual
/// fits, when supplied, add the mean per-subject metrics.
pub fn compare_models(
    dataset: &ChoiceDataset,
    fit_cpt: &AggregateFit,
    fit_qdt: &AggregateFit,
    session: Session,
    individual: Option<(&HierarchicalFit, &HierarchicalFit)>,
) -> Result<ModelComparison> {
    let metrics = |fit: &AggregateFit, hml: Option<&HierarchicalFit>| -> Result<ModelMetrics> {
        Ok(ModelMetrics {
            model: fit.model,
            log_likelihood: fit.log_likelihood,
            frequency_fit: frequency_fit(dataset, &fit.params, session)?,
            mean_individual_log_likelihood: hml.map(|h| h.mean_log_likelihood()),
            mean_explained_fraction: hml.map(|h| h.mean_explained_fraction()),
        })
    };
    let df = (fit_qdt.model.n_params() - fit_cpt.model.n_params()) as u32;
    Ok(ModelComparison {
        session,
        logit_cpt: metrics(fit_cpt, individual.map(|i| i.0))?,
        qdt: metrics(fit_qdt, individual.map(|i| i.1))?,
        wilks: wilks_test(fit_cpt.log_likelihood, fit_qdt.log_likelihood, df.max(1))?,
    })
}

/// Versioned JSON report of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub aggregate: Vec<AggregateFit>,
    pub hierarchical: Vec<HierarchicalFit>,
    pub comparison: Option<ModelComparison>,
    pub predictions: Vec<(ModelId, SessionPrediction)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice_data::{ChoiceObservation, Lottery};

    fn lot(v1: f64, p1: f64, v2: f64) -> Lottery {
        Lottery::with_complement(v1, p1, v2).unwrap()
    }

    #[test]
    fn wilks_examples() {
        let w = wilks_test(-100.0, -100.0, 2).unwrap();
        assert_eq!((w.statistic, w.p_value), (0.0, 1.0));
        let w = wilks_test(-103.0, -100.0, 2).unwrap();
        assert!((w.statistic - 6.0).abs() < 1e-12);
        assert!((w.p_value - (-3.0f64).exp()).abs() < 1e-12);
        let w = wilks_test(0.0, 2.995, 2).unwrap();
        assert!((w.p_value - (-2.995f64).exp()).abs() < 1e-12);
        assert!((w.p_value - 0.0500).abs() < 1e-4);
        assert!(wilks_test(-1.0, -2.0, 2).is_err());
    }

    #[test]
    fn explained_fraction_rules() {
        let ch = [Some(Choice::A), Some(Choice::B), None, Some(Choice::A)];
        let scores = [(0.9, 0.1), (0.2, 0.8), (0.7, 0.3), (0.5, 0.5)];
        assert_eq!(explained_fraction(&scores, &ch), Some(2.5 / 3.0));
        assert_eq!(explained_fraction(&[(0.5, 0.5)], &[None]), None);
    }

    fn dominant_dataset(n_subjects: usize) -> ChoiceDataset {
        // A pays strictly more than B in every state
        let pairs: Vec<LotteryPair> = (0..12)
            .map(|j| {
                let v = 5.0 * j as f64 - 25.0;
                LotteryPair::new(format!("p{j}"), lot(v + 10.0, 0.5, v + 5.0), lot(v, 0.5, v - 5.0))
            })
            .collect();
        let mut obs = Vec::new();
        for s in 0..n_subjects {
            for p in &pairs {
                obs.push(ChoiceObservation {
                    subject: format!("s{s}"),
                    pair: p.id.clone(),
                    session: Session::Time1,
                    choice: Choice::A,
                });
            }
        }
        ChoiceDataset::new(pairs, &obs).unwrap()
    }

    fn light() -> EstimationConfig {
        let mut cfg = EstimationConfig::default();
        cfg.aggregate.tabu.restarts = 6;
        cfg.aggregate.local_starts = 3;
        cfg
    }

    #[test]
    fn separation_drives_phi_to_bound() {
        let ds = dominant_dataset(5);
        let fit = fit_aggregate(
            &ds,
            ModelId::LogitCpt,
            Session::Time1,
            &SubjectSelection::all(),
            None,
            &light(),
            ExecMode::Sequential,
        )
        .unwrap();
        assert!(fit.at_bound.iter().any(|n| n == "phi"), "{fit:?}");
        assert!(fit.log_likelihood > -1e-3);
    }

    #[test]
    fn empty_selection_is_an_error() {
        let ds = dominant_dataset(2);
        let sel = SubjectSelection::masked(SubjectFilter::Contrarian, vec![false, false]);
        let r = fit_aggregate(&ds, ModelId::LogitCpt, Session::Time1, &sel, None, &light(), ExecMode::Sequential);
        assert!(matches!(r, Err(Error::NoObservations(_))));
    }
}
