use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use choicecal::choice_data::{
    load_dataset, write_observations, write_pairs, ChoiceDataset, LoadOptions, LotteryKind, Session,
};
use choicecal::estimate::{
    compare_models, fit_aggregate, fit_hierarchical, predict_session, AggregateFit, HierarchicalFit, IndividualFit,
    ModelComparison, ModelId, Predictor, SessionPrediction, SubjectFilter, SubjectSelection,
};
use choicecal::par::ExecMode;
use choicecal::predictability::{analyze_predictability, PredictabilityAnalysis};
use choicecal::report::{run_analysis, AnalysisConfig, FullReport};
use choicecal::rng::{derive_seed, tag};
use choicecal::shift::{
    analyze_shift, classify_subjects, fit_gmm2, homogeneity_wilks, Classification, GmmFit,
    ShiftAnalysis,
};
use choicecal::simulate::{reference_pairs, sample_population, simulate_choices, GroupSpec, PopulationSpec};

use crate::config::{config_hash, FilterChoice, Level, RunConfig};
use crate::output::{num, opt, Sink};

const MODE: ExecMode = if cfg!(feature = "parallel") {
    ExecMode::Parallel
} else {
    ExecMode::Sequential
};

#[derive(Debug, Default)]
pub struct Outcome {
    pub warnings: Vec<String>,
    pub written: Vec<PathBuf>,
}

/// Problem with the user's inputs (files, flags, configuration).
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input(e: impl fmt::Display) -> anyhow::Error {
    anyhow::Error::new(InputError(format!("{e:#}")))
}

/// 2 for input problems, 3 for failures inside an analysis.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<InputError>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<choicecal::Error>() {
            use choicecal::Error::*;
            return match err {
                Optimizer(_) | Consistency(_) => 3,
                _ => 2,
            };
        }
    }
    3
}

pub fn init_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if threads == Some(0) {
        return Err(input("--threads must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        // a global pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn data_paths(cfg: &RunConfig) -> anyhow::Result<(PathBuf, PathBuf)> {
    let pairs = cfg
        .data
        .pairs
        .clone()
        .ok_or_else(|| input("no pair file given (--pairs or data.pairs)"))?;
    let obs = cfg
        .data
        .observations
        .clone()
        .ok_or_else(|| input("no observation file given (--observations or data.observations)"))?;
    for p in [&pairs, &obs] {
        if !p.is_file() {
            return Err(input(format!("input file not found: {}", p.display())));
        }
    }
    Ok((pairs, obs))
}

fn load(cfg: &RunConfig) -> anyhow::Result<(ChoiceDataset, [PathBuf; 2])> {
    let (pairs, obs) = data_paths(cfg)?;
    let bound = match cfg.data.outcome_bound {
        Some(b) if b < 0.0 => None,
        Some(b) => Some(b),
        None => LoadOptions::default().outcome_bound,
    };
    let ds = load_dataset(&pairs, &obs, LoadOptions { outcome_bound: bound })?;
    Ok((ds, [pairs, obs]))
}

fn sink(cfg: &RunConfig, command: &str, inputs: &[&Path]) -> anyhow::Result<Sink> {
    let hash = config_hash(command, cfg, inputs)?;
    Sink::new(cfg.out_dir(), command, hash, cfg.seed)
}

fn session(n: u8) -> anyhow::Result<Session> {
    Session::from_number(n).map_err(input)
}

pub fn dispatch(command: &str, cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let mut warnings = Vec::new();
    let written = match command {
        "simulate" => simulate(cfg)?,
        "ingest" => ingest(cfg)?,
        "fit" => fit(cfg, &mut warnings)?,
        "predict" => predict(cfg, &mut warnings)?,
        "shift" => shift(cfg, &mut warnings)?,
        "cluster" => cluster(cfg, &mut warnings)?,
        "predictability" => predictability(cfg, &mut warnings)?,
        "report" => report(cfg, &mut warnings)?,
        other => unreachable!("unknown command {other}"),
    };
    Ok(Outcome { warnings, written })
}

// ---------------------------------------------------------------------------

fn simulate(cfg: &RunConfig) -> anyhow::Result<Vec<PathBuf>> {
    let s = &cfg.simulate;
    let mut spec = match s.model {
        ModelId::LogitCpt => PopulationSpec::reference(s.subjects, cfg.seed),
        ModelId::Qdt => PopulationSpec::reference_qdt(s.subjects, cfg.seed),
    };
    if let (Some(fraction), Some(shift_alpha)) = (s.fraction, s.shift_alpha) {
        spec.groups = Some(GroupSpec {
            fraction,
            shift_alpha,
            baselines: None,
        });
    }
    let pairs = reference_pairs();
    let truth = sample_population(&spec, &pairs, MODE)?;
    let ds = simulate_choices(&truth, s.sessions, derive_seed(cfg.seed, &[tag::CHOICES]), MODE)?;
    let mut out = sink(cfg, "simulate", &[])?;
    let mut w = out.raw("pairs.csv")?;
    write_pairs(ds.pairs(), &mut w)?;
    let mut w = out.raw("observations.csv")?;
    write_observations(&ds, &mut w)?;
    out.json("truth.json", &truth)?;
    Ok(out.written)
}

#[derive(Serialize)]
struct IngestSummary {
    n_pairs: usize,
    n_subjects: usize,
    sessions: Vec<u8>,
    completeness: choicecal::choice_data::Completeness,
    pairs_by_kind: BTreeMap<LotteryKind, usize>,
    majority_ties_time1: Vec<String>,
    majority_ties_time2: Vec<String>,
}

fn ingest(cfg: &RunConfig) -> anyhow::Result<Vec<PathBuf>> {
    let (ds, inputs) = load(cfg)?;
    let mut out = sink(cfg, "ingest", &[&inputs[0], &inputs[1]])?;
    let mut by_kind = BTreeMap::new();
    for p in ds.pairs() {
        *by_kind.entry(p.kind).or_insert(0) += 1;
    }
    let ties = |s: Session| -> Vec<String> {
        if !ds.has_session(s) {
            return vec![];
        }
        (0..ds.n_pairs())
            .filter(|&j| ds.majority_is_tie(j, s))
            .map(|j| ds.pairs()[j].id.clone())
            .collect()
    };
    let summary = IngestSummary {
        n_pairs: ds.n_pairs(),
        n_subjects: ds.n_subjects(),
        sessions: Session::BOTH.into_iter().filter(|s| ds.has_session(*s)).map(Session::number).collect(),
        completeness: ds.completeness(),
        pairs_by_kind: by_kind,
        majority_ties_time1: ties(Session::Time1),
        majority_ties_time2: ties(Session::Time2),
    };
    out.json("ingest.json", &summary)?;
    let freq = |j: usize, s: Session| ds.choice_frequency_at(j, s).ok();
    let rows: Vec<Vec<String>> = ds
        .pairs()
        .iter()
        .enumerate()
        .map(|(j, p)| {
            vec![
                p.id.clone(),
                p.kind.as_str().to_string(),
                opt(freq(j, Session::Time1)),
                opt(freq(j, Session::Time2)),
                ds.majority_choice_at(j, Session::Time1)
                    .map(|c| format!("{c:?}"))
                    .unwrap_or_default(),
                opt(ds.majority_frequency_at(j, Session::Time1).ok()),
                opt(ds.shift_frequency_at(j).ok()),
            ]
        })
        .collect();
    out.csv(
        "frequencies.csv",
        &["pair_id", "kind", "freq_b_time1", "freq_b_time2", "majority_time1", "majority_freq_time1", "shift_freq"],
        &rows,
    )?;
    Ok(out.written)
}

// ---------------------------------------------------------------------------

/// Dataset restricted to the requested shift group.
fn restrict(ds: &ChoiceDataset, cfg: &RunConfig, filter: FilterChoice) -> anyhow::Result<ChoiceDataset> {
    if filter == FilterChoice::All {
        return Ok(ds.clone());
    }
    let a = analyze_shift(ds, &cfg.shift, false, MODE)?;
    let sel = a.selection(ds, SubjectFilter::from(filter));
    let keep: BTreeSet<String> = ds
        .subjects()
        .iter()
        .enumerate()
        .filter(|&(s, _)| sel.includes(s))
        .map(|(_, id)| id.clone())
        .collect();
    if keep.is_empty() {
        return Err(anyhow::anyhow!("the {filter:?} group is empty"));
    }
    Ok(ds.filter_subjects(&keep)?)
}

#[derive(Serialize)]
struct FitOutput {
    session: Session,
    filter: FilterChoice,
    aggregate: Vec<AggregateFit>,
    hierarchical: Vec<HierarchicalFit>,
    comparison: Option<ModelComparison>,
}

fn fit_models(ds: &ChoiceDataset, cfg: &RunConfig, sess: Session, warnings: &mut Vec<String>) -> anyhow::Result<FitOutput> {
    let models = cfg.fit.model.models();
    let all = SubjectSelection::all();
    let est = &cfg.estimation;
    let cpt = fit_aggregate(ds, ModelId::LogitCpt, sess, &all, None, est, MODE)?;
    let mut aggregate = Vec::new();
    if models.contains(&ModelId::LogitCpt) {
        aggregate.push(cpt.clone());
    }
    if models.contains(&ModelId::Qdt) {
        aggregate.push(fit_aggregate(ds, ModelId::Qdt, sess, &all, Some(&cpt), est, MODE)?);
    }
    for f in &aggregate {
        if !f.converged {
            warnings.push(format!("aggregate {} fit did not converge", f.model.as_str()));
        }
    }
    let mut hierarchical = Vec::new();
    if cfg.fit.level == Level::Individual {
        for anchor in &aggregate {
            let h = fit_hierarchical(ds, sess, anchor, est, MODE)?;
            let bad = h.penalized.iter().filter(|f| !f.converged).count();
            if bad > 0 {
                warnings.push(format!("{bad} individual {} fits did not converge", h.model.as_str()));
            }
            hierarchical.push(h);
        }
    }
    let comparison = match aggregate.as_slice() {
        [c, q] => Some(compare_models(
            ds,
            c,
            q,
            sess,
            match hierarchical.as_slice() {
                [hc, hq] => Some((hc, hq)),
                _ => None,
            },
        )?),
        _ => None,
    };
    Ok(FitOutput {
        session: sess,
        filter: cfg.fit.filter,
        aggregate,
        hierarchical,
        comparison,
    })
}

fn pair_rows(ds: &ChoiceDataset, preds: &[(ModelId, SessionPrediction)]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["pair_id".to_string(), "kind".into(), "observed_b".into()];
    for (m, _) in preds {
        header.push(format!("predicted_b_{}", m.as_str()));
        header.push(format!("abs_residual_{}", m.as_str()));
    }
    let rows = ds
        .pairs()
        .iter()
        .filter_map(|p| {
            let first = preds.first()?.1.pairs.iter().find(|r| r.pair == p.id)?;
            let mut row = vec![p.id.clone(), p.kind.as_str().into(), num(first.observed_b)];
            for (_, pr) in preds {
                let r = pr.pairs.iter().find(|r| r.pair == p.id)?;
                row.push(num(r.predicted_b));
                row.push(num(r.residual.abs()));
            }
            Some(row)
        })
        .collect();
    (header, rows)
}

fn subject_rows(preds: &[(ModelId, SessionPrediction)]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["subject_id".to_string()];
    for (m, _) in preds {
        header.push(format!("log_likelihood_{}", m.as_str()));
        header.push(format!("fraction_{}", m.as_str()));
    }
    let Some((_, first)) = preds.first() else {
        return (header, vec![]);
    };
    let rows = first
        .subjects
        .iter()
        .map(|s| {
            let mut row = vec![s.subject.clone()];
            for (_, pr) in preds {
                match pr.subjects.iter().find(|x| x.subject == s.subject) {
                    Some(x) => {
                        row.push(num(x.log_likelihood));
                        row.push(num(x.predicted_fraction));
                    }
                    None => row.extend([String::new(), String::new()]),
                }
            }
            row
        })
        .collect();
    (header, rows)
}

fn individual_param_rows(hier: &[HierarchicalFit]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["subject_id".to_string()];
    for h in hier {
        let m = h.model.as_str();
        for n in ["log_likelihood", "penalized_objective", "explained_fraction", "alpha", "lambda", "delta", "gamma", "phi", "converged"] {
            header.push(format!("{n}_{m}"));
        }
    }
    let Some(first) = hier.first() else {
        return (header, vec![]);
    };
    let rows = first
        .penalized
        .iter()
        .map(|f| {
            let mut row = vec![f.subject.clone()];
            for h in hier {
                match h.penalized.iter().find(|x| x.subject == f.subject) {
                    Some(x) => {
                        let c = x.params.cpt();
                        row.extend([
                            num(x.log_likelihood),
                            num(x.penalized_objective),
                            num(x.explained_fraction),
                            num(c.alpha),
                            num(c.lambda),
                            num(c.delta),
                            num(c.gamma),
                            num(c.phi),
                            x.converged.to_string(),
                        ]);
                    }
                    None => row.extend(std::iter::repeat_n(String::new(), 9)),
                }
            }
            row
        })
        .collect();
    (header, rows)
}

fn write_table(out: &mut Sink, name: &str, table: (Vec<String>, Vec<Vec<String>>)) -> anyhow::Result<()> {
    let header: Vec<&str> = table.0.iter().map(String::as_str).collect();
    out.csv(name, &header, &table.1)
}

fn fit(cfg: &RunConfig, warnings: &mut Vec<String>) -> anyhow::Result<Vec<PathBuf>> {
    let (ds, inputs) = load(cfg)?;
    let sess = session(cfg.fit.session)?;
    if !ds.has_session(sess) {
        return Err(input(format!("dataset has no session {} observations", sess.number())));
    }
    let ds = restrict(&ds, cfg, cfg.fit.filter)?;
    let result = fit_models(&ds, cfg, sess, warnings)?;
    let mut out = sink(cfg, "fit", &[&inputs[0], &inputs[1]])?;
    out.json("fit.json", &result)?;
    let preds: Vec<(ModelId, SessionPrediction)> = result
        .aggregate
        .iter()
        .map(|f| Ok((f.model, predict_session(&ds, Predictor::Aggregate(&f.params), sess)?)))
        .collect::<anyhow::Result<_>>()?;
    write_table(&mut out, "fit_pairs.csv", pair_rows(&ds, &preds))?;
    if !result.hierarchical.is_empty() {
        write_table(&mut out, "fit_subjects.csv", individual_param_rows(&result.hierarchical))?;
    }
    Ok(out.written)
}

#[derive(Serialize)]
struct PredictOutput {
    fits: FitOutput,
    level: Level,
    predictions: Vec<(ModelId, SessionPrediction)>,
}

fn predict(cfg: &RunConfig, warnings: &mut Vec<String>) -> anyhow::Result<Vec<PathBuf>> {
    let (ds, inputs) = load(cfg)?;
    if !ds.has_session(Session::Time1) || !ds.has_session(Session::Time2) {
        return Err(input("prediction needs observations from both sessions"));
    }
    let ds = restrict(&ds, cfg, cfg.fit.filter)?;
    let fits = fit_models(&ds, cfg, Session::Time1, warnings)?;
    let predictions: Vec<(ModelId, SessionPrediction)> = if cfg.fit.level == Level::Individual {
        fits.hierarchical
            .iter()
            .map(|h| Ok((h.model, predict_session(&ds, Predictor::Individual(&h.penalized), Session::Time2)?)))
            .collect::<anyhow::Result<_>>()?
    } else {
        fits.aggregate
            .iter()
            .map(|f| Ok((f.model, predict_session(&ds, Predictor::Aggregate(&f.params), Session::Time2)?)))
            .collect::<anyhow::Result<_>>()?
    };
    let mut out = sink(cfg, "predict", &[&inputs[0], &inputs[1]])?;
    write_table(&mut out, "predict_pairs.csv", pair_rows(&ds, &predictions))?;
    write_table(&mut out, "predict_subjects.csv", subject_rows(&predictions))?;
    out.json(
        "predict.json",
        &PredictOutput {
            fits,
            level: cfg.fit.level,
            predictions,
        },
    )?;
    Ok(out.written)
}

// ---------------------------------------------------------------------------

fn write_shift_files(out: &mut Sink, a: &ShiftAnalysis) -> anyhow::Result<()> {
    let curve: Vec<Vec<String>> = a
        .curve
        .iter()
        .map(|r| {
            vec![
                r.pair.clone(),
                num(r.p),
                num(r.observed),
                num(r.homogeneous),
                num(r.heterogeneous),
                opt(r.low),
                opt(r.high),
            ]
        })
        .collect();
    out.csv(
        "shift_curve.csv",
        &["pair_id", "p", "observed", "homogeneous", "heterogeneous", "band_low", "band_high"],
        &curve,
    )?;
    let s = &a.calibration.surface;
    let mut grid = Vec::with_capacity(s.values.len());
    for (i, b) in s.betas.iter().enumerate() {
        for (k, f) in s.fs.iter().enumerate() {
            grid.push(vec![num(*b), num(*f), opt(s.values[i * s.fs.len() + k])]);
        }
    }
    out.csv("rss_grid.csv", &["shift_beta", "fraction", "rss"], &grid)?;
    write_clusters(out, &a.gmm, &a.classification, &a.subjects.iter().map(|p| (p.subject.clone(), [p.time1, p.time2])).collect::<Vec<_>>())
}

fn write_clusters(out: &mut Sink, gmm: &GmmFit, cls: &Classification, points: &[(String, [f64; 2])]) -> anyhow::Result<()> {
    let rows: Vec<Vec<String>> = points
        .iter()
        .enumerate()
        .map(|(i, (s, pt))| {
            vec![
                s.clone(),
                num(pt[0]),
                num(pt[1]),
                num(gmm.posteriors[i]),
                format!("{:?}", cls.labels[i]).to_lowercase(),
            ]
        })
        .collect();
    out.csv(
        "clusters.csv",
        &["subject_id", "majority_time1", "majority_time2", "posterior_contrarian", "label"],
        &rows,
    )
}

fn shift(cfg: &RunConfig, warnings: &mut Vec<String>) -> anyhow::Result<Vec<PathBuf>> {
    let (ds, inputs) = load(cfg)?;
    if !ds.has_session(Session::Time2) {
        return Err(input("choice-shift analysis needs observations from both sessions"));
    }
    let a = analyze_shift(&ds, &cfg.shift, cfg.band, MODE)?;
    shift_warnings(&a, warnings);
    let mut out = sink(cfg, "shift", &[&inputs[0], &inputs[1]])?;
    out.json("shift.json", &a)?;
    write_shift_files(&mut out, &a)?;
    Ok(out.written)
}

fn shift_warnings(a: &ShiftAnalysis, warnings: &mut Vec<String>) {
    if !a.gmm.converged {
        warnings.push("mixture EM did not converge".into());
    }
    if !a.calibration.converged {
        warnings.push("heterogeneous shift calibration did not converge".into());
    }
}

#[derive(Serialize)]
struct ClusterOutput {
    gmm: GmmFit,
    homogeneity: choicecal::estimate::WilksResult,
    classification: Classification,
}

fn cluster(cfg: &RunConfig, warnings: &mut Vec<String>) -> anyhow::Result<Vec<PathBuf>> {
    let (ds, inputs) = load(cfg)?;
    if !ds.has_session(Session::Time2) {
        return Err(input("clustering needs observations from both sessions"));
    }
    let points: Vec<(String, [f64; 2])> = ds
        .subject_majority_stats()
        .into_iter()
        .filter_map(|m| Some((m.subject, [m.time1?, m.time2?])))
        .collect();
    let xy: Vec<[f64; 2]> = points.iter().map(|p| p.1).collect();
    let gmm = fit_gmm2(&xy, &cfg.shift.gmm, MODE)?;
    if !gmm.converged {
        warnings.push("mixture EM did not converge".into());
    }
    let homogeneity = homogeneity_wilks(&xy, &gmm, cfg.shift.gmm.eigen_floor)?;
    let classification = classify_subjects(&gmm);
    let mut out = sink(cfg, "cluster", &[&inputs[0], &inputs[1]])?;
    write_clusters(&mut out, &gmm, &classification, &points)?;
    out.json(
        "cluster.json",
        &ClusterOutput {
            gmm,
            homogeneity,
            classification,
        },
    )?;
    Ok(out.written)
}

// ---------------------------------------------------------------------------

fn write_predictability_files(out: &mut Sink, p: &PredictabilityAnalysis) -> anyhow::Result<()> {
    let tail_col = format!("tail_above_{}", p.threshold);
    let rows: Vec<Vec<String>> = p
        .subjects
        .iter()
        .map(|s| {
            vec![
                s.subject.clone(),
                num(s.mean_success),
                num(s.p_bar),
                num(s.tail),
                num(s.interval_low),
                num(s.interval_high),
                opt(s.observed_fraction),
            ]
        })
        .collect();
    out.csv(
        "predictability_subjects.csv",
        &["subject_id", "mean_success", "p_bar", &tail_col, "interval_low", "interval_high", "observed_fraction"],
        &rows,
    )?;
    let support = p.exact_mixture.support();
    let mix: Vec<Vec<String>> = support
        .iter()
        .enumerate()
        .map(|(k, x)| vec![num(*x), num(p.exact_mixture.pmf[k]), num(p.approx_mixture.pmf[k])])
        .collect();
    out.csv("mixture.csv", &["fraction", "exact", "binomial_approx"], &mix)
}

#[derive(Serialize)]
struct PredictabilityOutput<'a> {
    model: ModelId,
    fits: &'a [IndividualFit],
    analysis: &'a PredictabilityAnalysis,
}

fn predictability(cfg: &RunConfig, warnings: &mut Vec<String>) -> anyhow::Result<Vec<PathBuf>> {
    let (ds, inputs) = load(cfg)?;
    let mut fit_cfg = cfg.clone();
    fit_cfg.fit.level = Level::Individual;
    let fits = fit_models(&ds, &fit_cfg, Session::Time1, warnings)?;
    let h = fits
        .hierarchical
        .last()
        .ok_or_else(|| anyhow::anyhow!("no individual fits"))?;
    let p = analyze_predictability(&ds, &h.penalized, Session::Time2, &cfg.predictability, MODE)?;
    let mut out = sink(cfg, "predictability", &[&inputs[0], &inputs[1]])?;
    write_predictability_files(&mut out, &p)?;
    out.json(
        "predictability.json",
        &PredictabilityOutput {
            model: h.model,
            fits: &h.penalized,
            analysis: &p,
        },
    )?;
    Ok(out.written)
}

fn report(cfg: &RunConfig, warnings: &mut Vec<String>) -> anyhow::Result<Vec<PathBuf>> {
    let (ds, inputs) = load(cfg)?;
    let acfg = AnalysisConfig {
        estimation: cfg.estimation,
        shift: cfg.shift,
        predictability: cfg.predictability,
        individual: cfg.fit.level == Level::Individual,
        band: cfg.band,
        groups: true,
    };
    let r: FullReport = run_analysis(&ds, &acfg, MODE).context("full analysis failed")?;
    for row in &r.aggregate {
        if !row.fit.converged {
            warnings.push(format!(
                "aggregate {} fit ({:?}) did not converge",
                row.fit.model.as_str(),
                row.fit.subject_filter
            ));
        }
    }
    if let Some(a) = &r.shift {
        shift_warnings(a, warnings);
    }
    let mut out = sink(cfg, "report", &[&inputs[0], &inputs[1]])?;
    out.json("report.json", &r)?;
    let all_rows: Vec<&AggregateFit> = r
        .aggregate
        .iter()
        .filter(|row| row.fit.subject_filter == SubjectFilter::All)
        .map(|row| &row.fit)
        .collect();
    let preds: Vec<(ModelId, SessionPrediction)> = all_rows
        .iter()
        .map(|f| Ok((f.model, predict_session(&ds, Predictor::Aggregate(&f.params), Session::Time1)?)))
        .collect::<anyhow::Result<_>>()?;
    write_table(&mut out, "fit_pairs.csv", pair_rows(&ds, &preds))?;
    if !r.hierarchical.is_empty() {
        write_table(&mut out, "fit_subjects.csv", individual_param_rows(&r.hierarchical))?;
    }
    let table: Vec<Vec<String>> = r
        .aggregate
        .iter()
        .map(|row| {
            let x = row.fit.params.named();
            let get = |n: &str| x.iter().find(|(k, _)| *k == n).map(|(_, v)| num(*v)).unwrap_or_default();
            vec![
                row.fit.model.as_str().into(),
                format!("{:?}", row.fit.subject_filter).to_lowercase(),
                get("alpha"),
                get("lambda"),
                get("delta"),
                get("gamma"),
                get("phi"),
                get("a"),
                get("eta"),
                num(row.fit.log_likelihood),
                num(row.fit_quality.rss_all),
                opt(row.prediction_quality.as_ref().map(|q| q.rss_all)),
            ]
        })
        .collect();
    out.csv(
        "aggregate_params.csv",
        &["model", "group", "alpha", "lambda", "delta", "gamma", "phi", "a", "eta", "log_likelihood", "rss_fit", "rss_prediction"],
        &table,
    )?;
    if let Some(a) = &r.shift {
        write_shift_files(&mut out, a)?;
    }
    if let Some(p) = &r.predictability {
        write_predictability_files(&mut out, p)?;
    }
    Ok(out.written)
}
