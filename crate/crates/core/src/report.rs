//! Report builders shared by the CLI and the HTTP service.
//!
//! Both front ends deserialize the same [`AnalysisRequest`], call the same
//! builder and serialize the resulting [`Artifact`] with the 17-digit
//! formatter, so a CLI artifact and an HTTP response for the same data and
//! request are byte-identical.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::balance::{ColumnKind, InfeasibilityReport, SolveStatus};
use crate::classify::{classify, group_counts, Group, ObservationTag};
use crate::contrast::{ideal_contrast, Component, WeightedContrast};
use crate::diagnostics::{
    balance_columns, diagnose, ess, kish_ess, refit_influence, twfe_influence, weight_dispersion, DiagnosticsReport,
    Dispersion, GroupEss, InfluenceMode, SmdColumn,
};
use crate::error::{Error, Result};
use crate::estimand::{AssumptionSet, EstimandSpec, ExternalSample, TargetPopulation};
use crate::inference::{bootstrap_estimator, canonical_estimand, event_study, BootstrapConfig, BootstrapResult, EventStudyCurve};
use crate::io::format::to_json_value_string;
use crate::panel::{ObsId, Panel};
use crate::pipeline::{robust_weighting, Estimator};
use crate::twfe::{fit_twfe, twfe_general_estimate, DroppedTerm, FitMethod, Term, TwfeFit, TwfeSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetConfig {
    #[default]
    Study,
    Treated,
    Twfe,
    /// Per-unit weights keyed by unit id; absent units get weight 0.
    Custom { weights: BTreeMap<String, f64> },
    External { names: Vec<String>, rows: Vec<Vec<f64>> },
}

impl TargetConfig {
    pub fn resolve(&self, panel: &Panel) -> Result<TargetPopulation> {
        Ok(match self {
            TargetConfig::Study => TargetPopulation::Study,
            TargetConfig::Treated => TargetPopulation::Treated,
            TargetConfig::Twfe => TargetPopulation::TwfeImplied,
            TargetConfig::Custom { weights } => {
                for k in weights.keys() {
                    if !panel.units().iter().any(|u| u == k) {
                        return Err(Error::validation(format!("custom target names unknown unit {k:?}")));
                    }
                }
                TargetPopulation::Custom(panel.units().iter().map(|u| weights.get(u).copied().unwrap_or(0.0)).collect())
            }
            TargetConfig::External { names, rows } => {
                if rows.iter().any(|r| r.len() != names.len()) {
                    return Err(Error::validation("external target rows must match its column names"));
                }
                TargetPopulation::External(ExternalSample { names: names.clone(), rows: rows.clone() })
            }
        })
    }
}

/// Estimand on calendar labels; an empty reference means never treated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimandConfig {
    pub t1: i64,
    pub ty: i64,
    #[serde(default)]
    pub reference: BTreeMap<String, f64>,
    #[serde(default)]
    pub target: TargetConfig,
}

impl EstimandConfig {
    pub fn resolve(&self, panel: &Panel) -> Result<EstimandSpec> {
        let reference: Vec<(String, f64)> = self.reference.iter().map(|(k, v)| (k.clone(), *v)).collect();
        EstimandSpec::from_labels(panel, self.t1, self.ty, &reference, self.target.resolve(panel)?)
    }
}

/// Everything a run needs besides the data. Unused fields are ignored by
/// operations that do not need them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisRequest {
    pub estimand: Option<EstimandConfig>,
    pub assumptions: AssumptionSet,
    pub estimator: Estimator,
    /// Regression used by the `twfe` report.
    pub twfe: TwfeSpec,
    /// Coefficient to decompose, e.g. `tau[5]`; defaults to the estimand's lag.
    pub term: Option<String>,
    /// Inclusive lag range for event-study curves.
    pub lags: Option<(i64, i64)>,
    pub influence: Option<InfluenceMode>,
    pub bootstrap: Option<BootstrapConfig>,
}

impl AnalysisRequest {
    fn estimand(&self, panel: &Panel) -> Result<EstimandSpec> {
        self.estimand
            .as_ref()
            .ok_or_else(|| Error::validation("this operation needs an estimand (t1, ty)"))?
            .resolve(panel)
    }
}

/// Versioned wrapper around every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub schema: String,
    pub version: u32,
    pub config_hash: String,
    pub result: T,
}

impl<T> Artifact<T> {
    pub fn new(kind: &str, config_hash: String, result: T) -> Self {
        Artifact { schema: format!("eventlab/{kind}"), version: SCHEMA_VERSION, config_hash, result }
    }
}

/// SHA-256 over the raw data bytes followed by the compact request JSON.
pub fn config_hash(data: &[u8], request: &AnalysisRequest) -> Result<String> {
    let mut h = Sha256::new();
    h.update(data);
    h.update(to_json_value_string(request)?.as_bytes());
    Ok(hex::encode(h.finalize()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortCount {
    pub cohort: String,
    pub units: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelSummary {
    pub units: Vec<String>,
    pub times: Vec<i64>,
    pub cohorts: Vec<CohortCount>,
    pub unit_cohorts: Vec<String>,
    pub covariates: Vec<String>,
    pub n_obs: usize,
    pub n_observed: usize,
    pub warnings: Vec<String>,
    pub content_hash: String,
}

pub fn panel_summary(panel: &Panel) -> PanelSummary {
    let cohorts = panel
        .cohort_set()
        .into_iter()
        .map(|c| CohortCount {
            cohort: panel.cohort_label(c),
            units: panel.cohorts().iter().filter(|d| **d == c).count(),
        })
        .collect();
    PanelSummary {
        units: panel.units().to_vec(),
        times: panel.time_labels().to_vec(),
        cohorts,
        unit_cohorts: panel.cohorts().iter().map(|c| panel.cohort_label(*c)).collect(),
        covariates: panel.covariate_names().to_vec(),
        n_obs: panel.n_obs(),
        n_observed: panel.n_observed(),
        warnings: panel.warnings().to_vec(),
        content_hash: panel.content_hash(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCount {
    pub group: Group,
    pub treatment: usize,
    pub control: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagRow {
    pub unit: String,
    pub time: i64,
    pub group: Group,
    pub role: crate::classify::Role,
    pub reference: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub estimand: String,
    pub assumptions: String,
    pub counts: Vec<GroupCount>,
    pub n_used: usize,
    pub n_excluded: usize,
    /// Used observations only, in unit-major order.
    pub observations: Vec<TagRow>,
}

fn counts_of(tags: &[ObservationTag]) -> Vec<GroupCount> {
    group_counts(tags)
        .into_iter()
        .map(|(group, (treatment, control))| GroupCount { group, treatment, control })
        .collect()
}

pub fn tag_rows(panel: &Panel, tags: &[ObservationTag]) -> Vec<TagRow> {
    tags.iter()
        .filter(|t| t.is_used())
        .map(|t| TagRow {
            unit: panel.unit_id(t.unit).to_string(),
            time: panel.time_label(t.time),
            group: t.group,
            role: t.role,
            reference: t.reference.map(|c| panel.cohort_label(c)),
        })
        .collect()
}

pub fn classify_report(panel: &Panel, req: &AnalysisRequest) -> Result<(ClassifyReport, Vec<ObservationTag>)> {
    let estimand = req.estimand(panel)?;
    req.assumptions.validate(panel, &estimand)?;
    let tags = classify(panel, &estimand, &req.assumptions);
    let observed: Vec<&ObservationTag> = tags.iter().filter(|t| panel.is_observed(panel.obs(t.unit, t.time))).collect();
    let n_used = observed.iter().filter(|t| t.is_used()).count();
    let report = ClassifyReport {
        estimand: estimand.describe(panel),
        assumptions: req.assumptions.describe(),
        counts: counts_of(&tags),
        n_used,
        n_excluded: observed.len() - n_used,
        observations: tag_rows(panel, &tags),
    };
    Ok((report, tags))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceRow {
    pub name: String,
    pub kind: ColumnKind,
    pub target: f64,
    pub achieved: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimand: String,
    pub assumptions: String,
    pub adjustment: Vec<String>,
    pub estimator: String,
    pub estimate: f64,
    pub status: Option<SolveStatus>,
    pub kkt_residual: Option<f64>,
    pub iterations: Option<usize>,
    pub n_treatment: usize,
    pub n_control: usize,
    pub ess_treatment: f64,
    pub ess_control: f64,
    pub counts: Vec<GroupCount>,
    pub imbalance: Vec<ImbalanceRow>,
}

/// Weighted contrast behind an estimate, with the tags that label it.
pub struct ContrastRun {
    pub contrast: WeightedContrast,
    pub tags: Vec<ObservationTag>,
    pub estimand: EstimandSpec,
    pub twfe: Option<(TwfeFit, Term)>,
}

fn ess_of(c: &WeightedContrast, which: Component) -> f64 {
    kish_ess(c.ids(which).into_iter().map(|o| c.weights[o]))
}

pub fn estimate_report(panel: &Panel, req: &AnalysisRequest) -> Result<(EstimateReport, Option<ContrastRun>)> {
    let estimand = req.estimand(panel)?;
    let a = &req.assumptions;
    let mut report = EstimateReport {
        estimand: estimand.describe(panel),
        assumptions: a.describe(),
        adjustment: a.adjustment.labels(),
        estimator: req.estimator.name().to_string(),
        estimate: f64::NAN,
        status: None,
        kkt_residual: None,
        iterations: None,
        n_treatment: 0,
        n_control: 0,
        ess_treatment: 0.0,
        ess_control: 0.0,
        counts: Vec::new(),
        imbalance: Vec::new(),
    };
    let fill = |r: &mut EstimateReport, c: &WeightedContrast, tags: &[ObservationTag]| {
        r.estimate = c.estimate;
        r.n_treatment = c.treatment_ids().len();
        r.n_control = c.control_ids().len();
        r.ess_treatment = ess_of(c, Component::Treatment);
        r.ess_control = ess_of(c, Component::Control);
        r.counts = counts_of(tags);
    };
    match &req.estimator {
        Estimator::Ideal => {
            a.validate(panel, &estimand)?;
            let contrast = ideal_contrast(panel, &estimand)?;
            let tags = classify(panel, &estimand, &AssumptionSet::base());
            fill(&mut report, &contrast, &tags);
            report.adjustment.clear();
            Ok((report, Some(ContrastRun { contrast, tags, estimand, twfe: None })))
        }
        Estimator::Robust { options } => {
            let fit = robust_weighting(panel, &estimand, a, options)?;
            fill(&mut report, &fit.contrast, &fit.tags);
            let p = &fit.design.problem;
            report.status = Some(fit.solution.status);
            report.kkt_residual = Some(fit.solution.kkt_residual);
            report.iterations = Some(fit.solution.iterations);
            report.imbalance = (0..p.k())
                .map(|j| ImbalanceRow {
                    name: p.names[j].clone(),
                    kind: p.kinds[j],
                    target: p.targets[j],
                    achieved: p.targets[j] + fit.solution.achieved_imbalance[j],
                    tolerance: p.tolerance[j],
                })
                .collect();
            Ok((report, Some(ContrastRun { contrast: fit.contrast, tags: fit.tags, estimand, twfe: None })))
        }
        Estimator::Twfe { spec } => {
            let fit = fit_twfe(panel, spec)?;
            report.estimate = twfe_general_estimate(&fit, &estimand)?;
            report.assumptions = "all observations".into();
            report.adjustment = spec.covariates.clone();
            // The implied-weights contrast exists when the estimand maps to one coefficient.
            let run = if estimand.reference.is_pure_control() {
                let term = Term::Event(estimand.lag());
                let contrast = fit.implied_weights(panel, term)?;
                let tags = classify(panel, &estimand, &AssumptionSet::full(estimand.lag()));
                fill(&mut report, &contrast, &tags);
                Some(ContrastRun { contrast, tags, estimand, twfe: Some((fit, term)) })
            } else {
                None
            };
            Ok((report, run))
        }
    }
}

/// Contrast for diagnostics: the estimator's weights, or the implied
/// weights of `req.term` for TWFE. TWFE observations are labelled with the
/// groups of the most permissive assumption set for the term's lag.
pub fn contrast_for(panel: &Panel, req: &AnalysisRequest) -> Result<ContrastRun> {
    match &req.estimator {
        Estimator::Twfe { spec } => {
            let term = match (&req.term, &req.estimand) {
                (Some(t), _) => Term::parse(panel, t)?,
                (None, Some(_)) => Term::Event(req.estimand(panel)?.lag()),
                (None, None) => return Err(Error::validation("decomposition needs a term or an estimand")),
            };
            let estimand = match (&req.estimand, term) {
                (Some(_), _) => req.estimand(panel)?,
                (None, Term::Event(l)) => canonical_estimand(panel, l, &TargetPopulation::Study)?,
                (None, _) => return Err(Error::validation("labelling this term's weights needs an estimand")),
            };
            let fit = fit_twfe(panel, spec)?;
            let contrast = fit.implied_weights(panel, term)?;
            let tags = classify(panel, &estimand, &AssumptionSet::full(estimand.lag()));
            Ok(ContrastRun { contrast, tags, estimand, twfe: Some((fit, term)) })
        }
        _ => {
            let (_, run) = estimate_report(panel, req)?;
            run.ok_or_else(|| Error::validation("estimator has no weighted-contrast form"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub term: String,
    pub estimate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwfeReport {
    pub spec: TwfeSpec,
    pub method: FitMethod,
    pub n_rows: usize,
    pub coefficients: Vec<CoefficientRow>,
    pub dropped: Vec<DroppedTerm>,
    pub condition_estimate: f64,
    pub normal_equation_residual: f64,
}

/// Treatment coefficients of the regression in `req.twfe`; fixed effects are omitted.
pub fn twfe_report(panel: &Panel, req: &AnalysisRequest) -> Result<TwfeReport> {
    let fit = fit_twfe(panel, &req.twfe)?;
    let coefficients = fit
        .terms()
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_fixed_effect())
        .map(|(j, _)| CoefficientRow { term: fit.names()[j].clone(), estimate: fit.coefficients()[j] })
        .collect();
    Ok(TwfeReport {
        spec: req.twfe.clone(),
        method: fit.method(),
        n_rows: fit.rows().len(),
        coefficients,
        dropped: fit.dropped().to_vec(),
        condition_estimate: fit.condition_estimate(),
        normal_equation_residual: fit.normal_equation_residual(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposeReport {
    pub term: String,
    pub labelled_as: String,
    pub coefficient: f64,
    pub contrast_value: f64,
    pub treatment_sum: f64,
    pub control_sum: f64,
    pub counts: Vec<GroupCount>,
    pub ess: Vec<GroupEss>,
    pub dispersion: Vec<Dispersion>,
}

/// Implied-weights decomposition of a TWFE coefficient (`req.twfe` regression).
pub fn decompose_report(panel: &Panel, req: &AnalysisRequest) -> Result<(DecomposeReport, ContrastRun)> {
    let twfe_req = AnalysisRequest { estimator: Estimator::Twfe { spec: req.twfe.clone() }, ..req.clone() };
    let run = contrast_for(panel, &twfe_req)?;
    let (fit, term) = run.twfe.as_ref().expect("twfe contrast");
    let c = &run.contrast;
    let used: Vec<ObservationTag> = run
        .tags
        .iter()
        .enumerate()
        .map(|(o, t)| if c.component[o] == Component::Unused { ObservationTag { group: Group::Excluded, ..*t } } else { *t })
        .collect();
    let report = DecomposeReport {
        term: term.name(panel),
        labelled_as: format!("{} under {}", run.estimand.describe(panel), AssumptionSet::full(run.estimand.lag()).describe()),
        coefficient: fit.coefficient(*term).unwrap_or(f64::NAN),
        contrast_value: c.estimate,
        treatment_sum: c.component_sum(Component::Treatment),
        control_sum: c.component_sum(Component::Control),
        counts: counts_of(&used),
        ess: ess(c, &run.tags),
        dispersion: weight_dispersion(c, &run.tags),
    };
    Ok((report, run))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsArtifact {
    pub estimator: String,
    pub estimand: String,
    #[serde(flatten)]
    pub report: DiagnosticsReport,
}

/// Columns checked for balance: TWFE design columns for TWFE contrasts,
/// otherwise every covariate plus the indicators in the adjustment set.
fn smd_columns(panel: &Panel, run: &ContrastRun, req: &AnalysisRequest) -> Result<Vec<SmdColumn>> {
    match &run.twfe {
        Some((fit, _)) => Ok(fit
            .design_columns(panel)
            .into_iter()
            .map(|(name, values)| SmdColumn { name, values })
            .collect()),
        None => balance_columns(
            panel,
            panel.covariate_names(),
            req.assumptions.adjustment.unit_indicators,
            req.assumptions.adjustment.time_indicators,
        ),
    }
}

pub fn diagnostics_from_run(panel: &Panel, req: &AnalysisRequest, run: &ContrastRun) -> Result<DiagnosticsArtifact> {
    let columns = smd_columns(panel, run, req)?;
    let mut report = diagnose(panel, &run.contrast, &run.tags, &columns);
    if let Some(mode) = req.influence {
        let entries = match &run.twfe {
            Some((fit, term)) => twfe_influence(panel, fit, *term, mode)?,
            None => {
                let ids: Vec<ObsId> = (0..run.contrast.n_obs()).filter(|&o| run.contrast.component[o] != Component::Unused).collect();
                let estimand = run.estimand.clone();
                refit_influence(panel, &ids, |p| req.estimator.estimate(p, &estimand, &req.assumptions))?
            }
        };
        report = report.with_influence(entries);
    }
    Ok(DiagnosticsArtifact {
        estimator: req.estimator.name().to_string(),
        estimand: run.estimand.describe(panel),
        report,
    })
}

pub fn diagnostics_report(panel: &Panel, req: &AnalysisRequest) -> Result<DiagnosticsArtifact> {
    let run = contrast_for(panel, req)?;
    diagnostics_from_run(panel, req, &run)
}

/// Diagnostics for weights re-loaded from an exported table. Balance is
/// checked on every covariate plus unit and time indicators.
pub fn imported_diagnostics(
    panel: &Panel,
    contrast: &WeightedContrast,
    tags: &[ObservationTag],
    req: &AnalysisRequest,
) -> Result<DiagnosticsArtifact> {
    let columns = balance_columns(panel, panel.covariate_names(), true, true)?;
    let estimand = match &req.estimand {
        Some(_) => req.estimand(panel)?.describe(panel),
        None => "imported weights".to_string(),
    };
    Ok(DiagnosticsArtifact {
        estimator: "imported".into(),
        estimand,
        report: diagnose(panel, contrast, tags, &columns),
    })
}

/// Observed relative-time range of the panel.
pub fn observed_lags(panel: &Panel) -> Option<(i64, i64)> {
    let lags = panel.observed_ids().filter_map(|o| panel.cohort(panel.unit_of(o)).relative_time(panel.time_of(o)));
    lags.fold(None, |acc, l| match acc {
        None => Some((l, l)),
        Some((a, b)) => Some((a.min(l), b.max(l))),
    })
}

pub fn event_study_report(panel: &Panel, req: &AnalysisRequest) -> Result<EventStudyCurve> {
    let (a, b) = match req.lags {
        Some(r) => r,
        None => observed_lags(panel).ok_or_else(|| Error::validation("panel has no treated units"))?,
    };
    if a > b {
        return Err(Error::validation("empty lag range"));
    }
    let target = match &req.estimand {
        Some(e) => e.target.resolve(panel)?,
        None => TargetPopulation::Study,
    };
    event_study(panel, &req.estimator, &req.assumptions, &target, a..=b, req.bootstrap.as_ref())
}

pub fn bootstrap_report(panel: &Panel, req: &AnalysisRequest) -> Result<BootstrapResult> {
    let estimand = req.estimand(panel)?;
    let cfg = req.bootstrap.clone().unwrap_or_default();
    bootstrap_estimator(panel, &estimand, &req.assumptions, &req.estimator, &cfg)
}

/// Payload for infeasible balance problems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: String,
    pub infeasibility: Option<InfeasibilityReport>,
}

impl ErrorBody {
    pub fn from_error(e: &Error) -> Self {
        let kind = match e {
            Error::Validation(_) => "validation",
            Error::Schema { .. } => "schema",
            Error::NonStaggered { .. } => "non-staggered",
            Error::EmptyGroup(_) => "empty-group",
            Error::Unidentified { .. } => "unidentified",
            Error::MissingCoefficient(_) => "missing-coefficient",
            Error::Infeasible(_) => "infeasible",
            Error::NotConverged(_) => "not-converged",
            Error::BootstrapFailed { .. } => "bootstrap-failed",
            _ => "internal",
        };
        ErrorBody {
            error: e.to_string(),
            kind: kind.to_string(),
            infeasibility: match e {
                Error::Infeasible(r) => Some((**r).clone()),
                _ => None,
            },
        }
    }
}

/// Operations exposed by the front ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Operation {
    Panel,
    Classify,
    Estimate,
    Twfe,
    Decompose,
    Diagnostics,
    EventStudy,
    Bootstrap,
}

impl Operation {
    pub fn name(self) -> &'static str {
        match self {
            Operation::Panel => "panel",
            Operation::Classify => "classify",
            Operation::Estimate => "estimate",
            Operation::Twfe => "twfe",
            Operation::Decompose => "decompose",
            Operation::Diagnostics => "diagnostics",
            Operation::EventStudy => "event-study",
            Operation::Bootstrap => "bootstrap",
        }
    }
}

/// Run one operation and render its artifact as pretty JSON with 17-digit
/// numbers. `data` is the raw uploaded bytes, used for the config hash.
pub fn render(op: Operation, data: &[u8], panel: &Panel, req: &AnalysisRequest) -> Result<String> {
    use crate::io::format::to_json_string;
    let hash = config_hash(data, req)?;
    let kind = op.name();
    match op {
        Operation::Panel => to_json_string(&Artifact::new(kind, hash, panel_summary(panel))),
        Operation::Classify => to_json_string(&Artifact::new(kind, hash, classify_report(panel, req)?.0)),
        Operation::Estimate => to_json_string(&Artifact::new(kind, hash, estimate_report(panel, req)?.0)),
        Operation::Twfe => to_json_string(&Artifact::new(kind, hash, twfe_report(panel, req)?)),
        Operation::Decompose => to_json_string(&Artifact::new(kind, hash, decompose_report(panel, req)?.0)),
        Operation::Diagnostics => to_json_string(&Artifact::new(kind, hash, diagnostics_report(panel, req)?)),
        Operation::EventStudy => to_json_string(&Artifact::new(kind, hash, event_study_report(panel, req)?)),
        Operation::Bootstrap => to_json_string(&Artifact::new(kind, hash, bootstrap_report(panel, req)?)),
    }
}
