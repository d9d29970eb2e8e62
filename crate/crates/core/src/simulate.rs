//! Synthetic populations and choice data with known ground truth.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::choice_data::{Choice, ChoiceDataset, ChoiceObservation, Lottery, LotteryKind, LotteryPair, Session};
use crate::cpt::CptParams;
use crate::error::{domain, Error, Result};
use crate::estimate::{ModelId, ModelParams, PriorSpec};
use crate::par::{self, ExecMode};
use crate::qdt::{QdtParams, DEFAULT_WEALTH0};
use crate::rng::{self, tag};
use crate::shift::{group_probs, GroupLabel, HeteroShiftParams};
use crate::stats::LogNormal;

/// Fixed seed of the reference pair set.
const REFERENCE_SEED: u64 = 0x0091_0091;

fn lot(v1: f64, p1: f64, v2: f64) -> Lottery {
    Lottery::with_complement(v1, p1, v2).expect("valid reference lottery")
}

fn random_lottery<R: Rng + ?Sized>(rng: &mut R, lo1: i32, hi1: i32, lo2: i32, hi2: i32) -> Lottery {
    let v1 = rng.random_range(lo1..=hi1) as f64;
    let mut v2 = rng.random_range(lo2..=hi2) as f64;
    while v2 == v1 {
        v2 = rng.random_range(lo2..=hi2) as f64;
    }
    let p = rng.random_range(1..=99) as f64 / 100.0;
    lot(v1, p, v2)
}

/// Draw `A`, then redraw `B` until the expected values are close.
fn close_pair<R: Rng>(rng: &mut R, draw: impl Fn(&mut R) -> Lottery) -> (Lottery, Lottery) {
    loop {
        let a = draw(rng);
        for _ in 0..200 {
            let b = draw(rng);
            let (ea, eb) = (a.expected_value(), b.expected_value());
            if a != b && (ea - eb).abs() <= 0.15 * ea.abs().max(eb.abs()).max(10.0) {
                return (a, b);
            }
        }
    }
}

/// Deterministic 91-pair design: 35 pure-gain, 25 pure-loss, 25 mixed and
/// 6 mixed-zero pairs with outcomes in [-100, 100] and close expected
/// values. The first four pairs are fixed textbook examples.
pub fn reference_pairs() -> Vec<LotteryPair> {
    let mut pairs = vec![
        LotteryPair::new("P01", lot(56.0, 0.05, 72.0), lot(68.0, 0.95, 95.0)),
        LotteryPair::new("P02", lot(88.0, 0.29, 78.0), lot(53.0, 0.29, 91.0)),
        LotteryPair::new("P03", lot(-8.0, 0.66, -95.0), lot(-42.0, 0.93, -30.0)),
        LotteryPair::new("P04", lot(96.0, 0.61, -67.0), lot(71.0, 0.5, -26.0)),
    ];
    let mut rng = rng::substream(REFERENCE_SEED, &[0]);
    let plan = [
        (LotteryKind::PureGain, 33),
        (LotteryKind::PureLoss, 24),
        (LotteryKind::Mixed, 24),
        (LotteryKind::MixedZero, 6),
    ];
    for (kind, count) in plan {
        for _ in 0..count {
            let (a, b) = match kind {
                LotteryKind::PureGain => close_pair(&mut rng, |r| random_lottery(r, 1, 100, 1, 100)),
                LotteryKind::PureLoss => close_pair(&mut rng, |r| random_lottery(r, -100, -1, -100, -1)),
                LotteryKind::Mixed => close_pair(&mut rng, |r| random_lottery(r, 1, 100, -100, -1)),
                LotteryKind::MixedZero => {
                    let a = random_lottery(&mut rng, 1, 100, -100, -1);
                    loop {
                        let mut x = rng.random_range(1..=100) as f64;
                        if rng.random::<bool>() {
                            x = -x;
                        }
                        let b = lot(x, rng.random_range(1..=99) as f64 / 100.0, 0.0);
                        let (ea, eb) = (a.expected_value(), b.expected_value());
                        if (ea - eb).abs() <= 0.15 * ea.abs().max(eb.abs()).max(10.0) {
                            break (a, b);
                        }
                    }
                }
            };
            let id = format!("P{:02}", pairs.len() + 1);
            let pair = LotteryPair::new(id, a, b);
            debug_assert_eq!(pair.kind, kind);
            pairs.push(pair);
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QdtAnchor {
    pub a: f64,
    pub eta: f64,
    pub wealth0: f64,
}

/// Two-group generation: majoritarians (the first `round(F n)` subjects)
/// and contrarians get the tilted probabilities of the shift ansatz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub fraction: f64,
    pub shift_alpha: f64,
    /// Majority probability per pair; derived from the prior-median model
    /// when absent.
    pub baselines: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n_subjects: usize,
    pub model: ModelId,
    pub priors: PriorSpec,
    pub phi: LogNormal,
    pub qdt_anchor: Option<QdtAnchor>,
    pub groups: Option<GroupSpec>,
    pub seed: u64,
}

impl PopulationSpec {
    /// Population centred on the aggregate logit-CPT estimates (0.73, 1.11,
    /// 0.88, 0.65, 0.30) with moderate dispersion.
    pub fn reference(n_subjects: usize, seed: u64) -> Self {
        let ln = |median: f64, sigma: f64| LogNormal {
            mu: median.ln(),
            sigma,
        };
        Self {
            n_subjects,
            model: ModelId::LogitCpt,
            priors: PriorSpec {
                alpha: ln(0.73, 0.1),
                lambda: ln(1.11, 0.2),
                delta: ln(0.88, 0.1),
                gamma: ln(0.65, 0.1),
            },
            phi: ln(0.30, 0.2),
            qdt_anchor: None,
            groups: None,
            seed,
        }
    }

    /// QDT variant with attraction parameters `a = 1.47`, `eta = 0.05`.
    pub fn reference_qdt(n_subjects: usize, seed: u64) -> Self {
        let mut s = Self::reference(n_subjects, seed);
        s.model = ModelId::Qdt;
        s.qdt_anchor = Some(QdtAnchor {
            a: 1.47,
            eta: 0.05,
            wealth0: DEFAULT_WEALTH0,
        });
        s
    }

    pub fn validate(&self, n_pairs: usize) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::InvalidConfig("population needs at least one subject".into()));
        }
        for d in [self.priors.alpha, self.priors.lambda, self.priors.delta, self.priors.gamma, self.phi] {
            if !d.mu.is_finite() || !(d.sigma > 0.0) || !d.sigma.is_finite() {
                return Err(Error::InvalidConfig(format!("invalid lognormal {d:?}")));
            }
        }
        if self.model == ModelId::Qdt {
            let a = self
                .qdt_anchor
                .ok_or_else(|| Error::InvalidConfig("QDT population needs a and eta".into()))?;
            QdtParams {
                cpt: self.median_cpt(),
                a: a.a,
                eta: a.eta,
                wealth0: a.wealth0,
            }
            .validate()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        if let Some(g) = &self.groups {
            HeteroShiftParams::from_alpha(g.shift_alpha, g.fraction).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            if let Some(b) = &g.baselines {
                if b.len() != n_pairs || b.iter().any(|p| !(0.5..=1.0).contains(p)) {
                    return Err(Error::InvalidConfig(
                        "group baselines need one majority probability in [0.5, 1] per pair".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn median_cpt(&self) -> CptParams {
        CptParams {
            alpha: self.priors.alpha.median(),
            lambda: self.priors.lambda.median(),
            delta: self.priors.delta.median(),
            gamma: self.priors.gamma.median(),
            phi: self.phi.median(),
        }
    }

    fn params_for(&self, cpt: CptParams) -> ModelParams {
        match (self.model, self.qdt_anchor) {
            (ModelId::Qdt, Some(a)) => ModelParams::Qdt(QdtParams {
                cpt,
                a: a.a,
                eta: a.eta,
                wealth0: a.wealth0,
            }),
            _ => ModelParams::LogitCpt(cpt),
        }
    }

    /// Model evaluated at the prior medians.
    pub fn median_params(&self) -> ModelParams {
        self.params_for(self.median_cpt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub subject: String,
    pub params: ModelParams,
    pub group: Option<GroupLabel>,
    /// True probability of choosing A on each pair.
    pub p_a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTruth {
    pub params: HeteroShiftParams,
    /// Majority probability per pair before tilting.
    pub baselines: Vec<f64>,
    /// Majority option per pair.
    pub majority: Vec<Choice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: PopulationSpec,
    pub pairs: Vec<LotteryPair>,
    pub subjects: Vec<SubjectTruth>,
    pub groups: Option<GroupTruth>,
}

impl Truth {
    /// Mean over subjects of the expected modal-choice accuracy.
    pub fn modal_accuracy(&self) -> f64 {
        let per: Vec<f64> = self
            .subjects
            .iter()
            .map(|s| s.p_a.iter().map(|p| p.max(1.0 - p)).sum::<f64>() / s.p_a.len() as f64)
            .collect();
        per.iter().sum::<f64>() / per.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn draw_lognormal(d: &LogNormal, rng: &mut impl Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (d.mu + d.sigma * z).exp()
}

fn subject_id(i: usize, n: usize) -> String {
    let width = n.to_string().len().max(3);
    format!("S{:0width$}", i + 1)
}

/// Per-subject parameters and choice probabilities.
pub fn sample_population(spec: &PopulationSpec, pairs: &[LotteryPair], mode: ExecMode) -> Result<Truth> {
    if pairs.is_empty() {
        return Err(domain("population needs at least one pair"));
    }
    spec.validate(pairs.len())?;
    let groups = match &spec.groups {
        None => None,
        Some(g) => {
            let params = HeteroShiftParams::from_alpha(g.shift_alpha, g.fraction)?;
            let (baselines, majority) = match &g.baselines {
                Some(b) => (b.clone(), vec![Choice::A; pairs.len()]),
                None => {
                    let m = spec.median_params();
                    let mut base = Vec::new();
                    let mut maj = Vec::new();
                    for p in pairs {
                        let (pa, pb) = m.choice_probs(p)?;
                        base.push(pa.max(pb));
                        maj.push(if pa > pb { Choice::A } else { Choice::B });
                    }
                    (base, maj)
                }
            };
            Some(GroupTruth {
                params,
                baselines,
                majority,
            })
        }
    };
    let n = spec.n_subjects;
    let n_maj = groups.as_ref().map(|g| (g.params.f * n as f64).round() as usize);
    let subjects = par::map_range(mode, n, |i| -> Result<SubjectTruth> {
        let mut rng = rng::substream(spec.seed, &[tag::POPULATION, i as u64]);
        let cpt = CptParams {
            alpha: draw_lognormal(&spec.priors.alpha, &mut rng),
            lambda: draw_lognormal(&spec.priors.lambda, &mut rng),
            delta: draw_lognormal(&spec.priors.delta, &mut rng),
            gamma: draw_lognormal(&spec.priors.gamma, &mut rng),
            phi: draw_lognormal(&spec.phi, &mut rng),
        };
        let params = spec.params_for(cpt);
        let (group, p_a) = match (&groups, n_maj) {
            (Some(g), Some(n_maj)) => {
                let label = if i < n_maj { GroupLabel::Majoritarian } else { GroupLabel::Contrarian };
                let p_a = g
                    .baselines
                    .iter()
                    .zip(&g.majority)
                    .map(|(&p, &m)| {
                        let (p1, p2) = group_probs(p, &g.params)?;
                        let pm = if label == GroupLabel::Majoritarian { p1 } else { p2 };
                        Ok(if m == Choice::A { pm } else { 1.0 - pm })
                    })
                    .collect::<Result<_>>()?;
                (Some(label), p_a)
            }
            _ => (
                None,
                pairs
                    .iter()
                    .map(|p| params.choice_probs(p).map(|x| x.0))
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(SubjectTruth {
            subject: subject_id(i, n),
            params,
            group,
            p_a,
        })
    });
    Ok(Truth {
        spec: spec.clone(),
        pairs: pairs.to_vec(),
        subjects: subjects.into_iter().collect::<Result<_>>()?,
        groups,
    })
}

/// Independent Bernoulli choices for every subject, pair and session; the
/// draw for `(subject, pair, session)` uses its own substream.
pub fn simulate_choices(truth: &Truth, sessions: usize, seed: u64, mode: ExecMode) -> Result<ChoiceDataset> {
    if !(1..=2).contains(&sessions) {
        return Err(Error::InvalidConfig(format!("sessions must be 1 or 2, got {sessions}")));
    }
    let per_subject = par::map_range(mode, truth.subjects.len(), |i| {
        let s = &truth.subjects[i];
        let mut out = Vec::with_capacity(s.p_a.len() * sessions);
        for (j, pair) in truth.pairs.iter().enumerate() {
            for (k, session) in Session::BOTH.into_iter().take(sessions).enumerate() {
                let mut r = rng::substream(seed, &[tag::CHOICES, i as u64, j as u64, k as u64]);
                let u: f64 = r.random();
                out.push(ChoiceObservation {
                    subject: s.subject.clone(),
                    pair: pair.id.clone(),
                    session,
                    choice: if u < s.p_a[j] { Choice::A } else { Choice::B },
                });
            }
        }
        out
    });
    let obs: Vec<ChoiceObservation> = per_subject.into_iter().flatten().collect();
    ChoiceDataset::new(truth.pairs.clone(), &obs)
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: ChoiceDataset,
    pub truth: Truth,
}

/// Population draw plus two sessions of choices; the choice seed is
/// derived from the population seed.
pub fn synthesize(spec: &PopulationSpec, pairs: &[LotteryPair], mode: ExecMode) -> Result<SyntheticDataset> {
    let truth = sample_population(spec, pairs, mode)?;
    let dataset = simulate_choices(&truth, 2, rng::derive_seed(spec.seed, &[tag::CHOICES]), mode)?;
    Ok(SyntheticDataset { dataset, truth })
}
