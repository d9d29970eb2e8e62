//! End-to-end analysis of a two-session dataset: aggregate fits overall and
//! per group, fit/prediction quality, individual-level comparison, choice
//! shift calibration and predictability.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::choice_data::{ChoiceDataset, Completeness, Session};
use crate::error::Result;
use crate::estimate::{
    compare_models, fit_aggregate, fit_hierarchical, frequency_fit, predict_session, AggregateFit, EstimationConfig,
    FrequencyFit, HierarchicalFit, ModelComparison, ModelId, Predictor, SubjectFilter, SubjectSelection,
    REPORT_SCHEMA_VERSION,
};
use crate::par::ExecMode;
use crate::predictability::{analyze_predictability, PredictabilityAnalysis, PredictabilityConfig};
use crate::shift::{analyze_shift, ShiftAnalysis, ShiftConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub estimation: EstimationConfig,
    pub shift: ShiftConfig,
    pub predictability: PredictabilityConfig,
    /// Run the hierarchical individual-level fits.
    pub individual: bool,
    /// Monte Carlo band around the heterogeneous shift curve.
    pub band: bool,
    /// Refit both models on each shift group.
    pub groups: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            estimation: EstimationConfig::default(),
            shift: ShiftConfig::default(),
            predictability: PredictabilityConfig::default(),
            individual: true,
            band: true,
            groups: true,
        }
    }
}

impl AnalysisConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.estimation = self.estimation.with_seed(seed);
        self.shift = self.shift.with_seed(seed);
        self
    }
}

/// Aggregate parameters for one model and subject group, with frequency
/// fit at time 1 and out-of-sample prediction at time 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub fit: AggregateFit,
    pub fit_quality: FrequencyFit,
    pub prediction_quality: Option<FrequencyFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualRow {
    pub model: ModelId,
    pub fit_log_likelihood: f64,
    pub fit_explained_fraction: f64,
    pub prediction_log_likelihood: Option<f64>,
    pub prediction_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub schema_version: u32,
    pub n_subjects: usize,
    pub n_pairs: usize,
    pub completeness: Completeness,
    pub shift: Option<ShiftAnalysis>,
    pub aggregate: Vec<AggregateRow>,
    pub comparison: ModelComparison,
    pub hierarchical: Vec<HierarchicalFit>,
    pub individual: Vec<IndividualRow>,
    pub predictability: Option<PredictabilityAnalysis>,
}

impl FullReport {
    pub fn aggregate_row(&self, model: ModelId, filter: SubjectFilter) -> Option<&AggregateRow> {
        self.aggregate
            .iter()
            .find(|r| r.fit.model == model && r.fit.subject_filter == filter)
    }
}

fn aggregate_pair(
    dataset: &ChoiceDataset,
    selection: &SubjectSelection,
    cfg: &EstimationConfig,
    two_sessions: bool,
    mode: ExecMode,
) -> Result<[AggregateRow; 2]> {
    let cpt = fit_aggregate(dataset, ModelId::LogitCpt, Session::Time1, selection, None, cfg, mode)?;
    let qdt = fit_aggregate(dataset, ModelId::Qdt, Session::Time1, selection, Some(&cpt), cfg, mode)?;
    let keep: BTreeSet<String> = dataset
        .subjects()
        .iter()
        .enumerate()
        .filter(|&(s, _)| selection.includes(s))
        .map(|(_, id)| id.clone())
        .collect();
    let sub = dataset.filter_subjects(&keep)?;
    let row = |fit: AggregateFit| -> Result<AggregateRow> {
        Ok(AggregateRow {
            fit_quality: frequency_fit(&sub, &fit.params, Session::Time1)?,
            prediction_quality: if two_sessions {
                Some(frequency_fit(&sub, &fit.params, Session::Time2)?)
            } else {
                None
            },
            fit,
        })
    };
    Ok([row(cpt)?, row(qdt)?])
}

pub fn run_analysis(dataset: &ChoiceDataset, cfg: &AnalysisConfig, mode: ExecMode) -> Result<FullReport> {
    let two_sessions = dataset.has_session(Session::Time2);
    let shift = if two_sessions {
        Some(analyze_shift(dataset, &cfg.shift, cfg.band, mode)?)
    } else {
        None
    };
    let est = &cfg.estimation;
    let mut aggregate: Vec<AggregateRow> = aggregate_pair(dataset, &SubjectSelection::all(), est, two_sessions, mode)?.into();
    if let (Some(sh), true) = (&shift, cfg.groups) {
        for filter in [SubjectFilter::Majoritarian, SubjectFilter::Contrarian] {
            let sel = sh.selection(dataset, filter);
            if (0..dataset.n_subjects()).any(|s| sel.includes(s)) {
                aggregate.extend(aggregate_pair(dataset, &sel, est, two_sessions, mode)?);
            }
        }
    }
    let (cpt, qdt) = (aggregate[0].fit.clone(), aggregate[1].fit.clone());

    let mut hierarchical = Vec::new();
    let mut individual = Vec::new();
    if cfg.individual {
        for anchor in [&cpt, &qdt] {
            let h = fit_hierarchical(dataset, Session::Time1, anchor, est, mode)?;
            let pred = if two_sessions {
                Some(predict_session(dataset, Predictor::Individual(&h.penalized), Session::Time2)?)
            } else {
                None
            };
            individual.push(IndividualRow {
                model: h.model,
                fit_log_likelihood: h.mean_log_likelihood(),
                fit_explained_fraction: h.mean_explained_fraction(),
                prediction_log_likelihood: pred.as_ref().map(|p| p.mean_log_likelihood),
                prediction_fraction: pred.as_ref().map(|p| p.mean_predicted_fraction),
            });
            hierarchical.push(h);
        }
    }
    let comparison = compare_models(
        dataset,
        &cpt,
        &qdt,
        Session::Time1,
        match hierarchical.as_slice() {
            [a, b] => Some((a, b)),
            _ => None,
        },
    )?;
    let predictability = match (hierarchical.get(1), two_sessions) {
        (Some(h), true) => Some(analyze_predictability(
            dataset,
            &h.penalized,
            Session::Time2,
            &cfg.predictability,
            mode,
        )?),
        _ => None,
    };
    Ok(FullReport {
        schema_version: REPORT_SCHEMA_VERSION,
        n_subjects: dataset.n_subjects(),
        n_pairs: dataset.n_pairs(),
        completeness: dataset.completeness(),
        shift,
        aggregate,
        comparison,
        hierarchical,
        individual,
        predictability,
    })
}
