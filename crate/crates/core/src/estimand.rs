//! Estimand and assumption specifications.
//!
//! An estimand contrasts initiation at `t1` with a reference regime (a
//! distribution over later initiation times, possibly never), measured at
//! `ty`, over a target population. Indices are time positions in the panel;
//! the `from_labels` constructors accept calendar labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Cohort, Panel};

const REFERENCE_SUM_TOL: f64 = 1e-12;

/// Reference initiation regime: probabilities over later cohorts and never.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    /// Strictly positive entries, sorted by cohort.
    entries: Vec<(Cohort, f64)>,
}

impl Reference {
    /// Pure control: every reference unit never initiates.
    pub fn never() -> Self {
        Reference { entries: vec![(Cohort::Never, 1.0)] }
    }

    pub fn new(entries: Vec<(Cohort, f64)>) -> Result<Self> {
        let mut out: Vec<(Cohort, f64)> = Vec::new();
        for (c, p) in entries {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::validation(format!("reference probability {p} must be non-negative")));
            }
            if out.iter().any(|(d, _)| *d == c) {
                return Err(Error::validation("reference regime lists a cohort twice"));
            }
            if p > 0.0 {
                out.push((c, p));
            }
        }
        let total: f64 = out.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > REFERENCE_SUM_TOL {
            return Err(Error::validation(format!("reference probabilities sum to {total}, not 1")));
        }
        out.sort_by_key(|(c, _)| *c);
        Ok(Reference { entries: out })
    }

    pub fn p(&self, c: Cohort) -> f64 {
        self.entries.iter().find(|(d, _)| *d == c).map_or(0.0, |(_, p)| *p)
    }

    pub fn support(&self) -> &[(Cohort, f64)] {
        &self.entries
    }

    pub fn is_pure_control(&self) -> bool {
        self.entries.len() == 1 && self.entries[0].0 == Cohort::Never
    }
}

/// Covariate table describing an external target sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalSample {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ExternalSample {
    pub fn mean(&self, name: &str) -> Option<f64> {
        let j = self.names.iter().position(|n| n == name)?;
        if self.rows.is_empty() {
            return None;
        }
        Some(self.rows.iter().map(|r| r[j]).sum::<f64>() / self.rows.len() as f64)
    }

    /// Mean of a product of columns (a monomial) over the sample.
    pub fn monomial_mean(&self, names: &[&str]) -> Option<f64> {
        let idx: Option<Vec<usize>> = names.iter().map(|n| self.names.iter().position(|m| m == n)).collect();
        let idx = idx?;
        if self.rows.is_empty() {
            return None;
        }
        Some(self.rows.iter().map(|r| idx.iter().map(|&j| r[j]).product::<f64>()).sum::<f64>() / self.rows.len() as f64)
    }
}

/// Population over which the average effect is defined.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetPopulation {
    /// All units in the study sample.
    Study,
    /// Eventually treated units.
    Treated,
    /// Profile implied by the dynamic TWFE coefficient for the same lag.
    TwfeImplied,
    /// External sample given by a covariate table.
    External(ExternalSample),
    /// Non-negative per-unit weights over the study sample.
    Custom(Vec<f64>),
}

impl TargetPopulation {
    pub fn name(&self) -> &'static str {
        match self {
            TargetPopulation::Study => "study",
            TargetPopulation::Treated => "treated",
            TargetPopulation::TwfeImplied => "twfe",
            TargetPopulation::External(_) => "external",
            TargetPopulation::Custom(_) => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimandSpec {
    pub t1: usize,
    pub ty: usize,
    pub reference: Reference,
    pub target: TargetPopulation,
}

impl EstimandSpec {
    /// Validated estimand on time indices.
    ///
    /// A negative lag (`ty < t1`) is accepted and describes a pre-period
    /// contrast, the usual placebo check in event studies.
    pub fn new(panel: &Panel, t1: usize, ty: usize, reference: Reference, target: TargetPopulation) -> Result<Self> {
        let n_t = panel.n_times();
        if t1 >= n_t || ty >= n_t {
            return Err(Error::validation("t1 and ty must lie within the panel's time range"));
        }
        for (c, _) in reference.support() {
            if let Cohort::At(t) = c {
                if *t <= t1 {
                    return Err(Error::validation(format!(
                        "reference cohort {} does not initiate after t1 = {}",
                        panel.time_label(*t),
                        panel.time_label(t1)
                    )));
                }
            }
        }
        if let TargetPopulation::Custom(w) = &target {
            if w.len() != panel.n_units() {
                return Err(Error::validation("custom target weights must have one entry per unit"));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::validation("custom target weights must be non-negative with a positive sum"));
            }
        }
        Ok(EstimandSpec { t1, ty, reference, target })
    }

    /// Estimand from calendar labels; reference keys are labels or `"never"`.
    pub fn from_labels(
        panel: &Panel,
        t1: i64,
        ty: i64,
        reference: &[(String, f64)],
        target: TargetPopulation,
    ) -> Result<Self> {
        let t1i = panel
            .time_index(t1)
            .ok_or_else(|| Error::validation(format!("t1 = {t1} is outside the panel's time range")))?;
        let tyi = panel
            .time_index(ty)
            .ok_or_else(|| Error::validation(format!("ty = {ty} is outside the panel's time range")))?;
        let entries = reference
            .iter()
            .map(|(k, p)| panel.parse_cohort(k).map(|c| (c, *p)))
            .collect::<Result<Vec<_>>>()?;
        let reference = if entries.is_empty() { Reference::never() } else { Reference::new(entries)? };
        EstimandSpec::new(panel, t1i, tyi, reference, target)
    }

    /// Lag `l = ty - t1`.
    pub fn lag(&self) -> i64 {
        self.ty as i64 - self.t1 as i64
    }

    /// Human-readable form, e.g. `ATE_2003(2002, never)`.
    pub fn describe(&self, panel: &Panel) -> String {
        let reference = if self.reference.is_pure_control() {
            "never".to_string()
        } else {
            let parts: Vec<String> = self
                .reference
                .support()
                .iter()
                .map(|(c, p)| format!("{}:{}", panel.cohort_label(*c), p))
                .collect();
            format!("{{{}}}", parts.join(", "))
        };
        format!(
            "ATE_{}({}, {}) over {}",
            panel.time_label(self.ty),
            panel.time_label(self.t1),
            reference,
            self.target.name()
        )
    }
}

/// Invariance-to-time-shifts mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Invariance {
    #[default]
    Off,
    /// Shift invariance holding cohort by cohort.
    PerCohort,
    /// Level invariance: a single pooled constraint and never-treated
    /// controls at every time.
    Strong,
}

impl Invariance {
    pub fn is_on(self) -> bool {
        self != Invariance::Off
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustmentSet {
    pub covariates: Vec<String>,
    #[serde(default)]
    pub unit_indicators: bool,
    #[serde(default)]
    pub time_indicators: bool,
}

impl AdjustmentSet {
    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty() && !self.unit_indicators && !self.time_indicators
    }

    /// Parse a comma list such as `unit,time,x1`; `none` gives the empty set.
    pub fn parse(spec: &str) -> Self {
        let mut out = AdjustmentSet::default();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "none" => {}
                "unit" | "units" | "unit-indicators" => out.unit_indicators = true,
                "time" | "times" | "time-indicators" => out.time_indicators = true,
                other => out.covariates.push(other.to_string()),
            }
        }
        out
    }

    pub fn labels(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.unit_indicators {
            v.push("unit".to_string());
        }
        if self.time_indicators {
            v.push("time".to_string());
        }
        v.extend(self.covariates.iter().cloned());
        v
    }
}

/// Identification assumptions gating which observations may be used.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionSet {
    #[serde(default)]
    pub invariance: Invariance,
    /// Anticipation horizon: no effects more than `kappa` periods before initiation.
    #[serde(default)]
    pub kappa: Option<u32>,
    /// Onset delay: no effects in the first `phi` periods after initiation.
    #[serde(default)]
    pub phi: Option<u32>,
    /// Dissipation: no effects from `xi` periods after initiation on.
    #[serde(default)]
    pub xi: Option<u32>,
    #[serde(default)]
    pub adjustment: AdjustmentSet,
}

impl AssumptionSet {
    /// The six base assumptions only.
    pub fn base() -> Self {
        AssumptionSet::default()
    }

    /// Every assumption at its most permissive setting for lag `l`:
    /// strong invariance, `kappa = 0`, `phi = l - 1`, `xi = l + 1`.
    pub fn full(lag: i64) -> Self {
        AssumptionSet {
            invariance: Invariance::Strong,
            kappa: Some(0),
            phi: (lag >= 1).then(|| (lag - 1) as u32),
            xi: Some((lag + 1).max(0) as u32),
            adjustment: AdjustmentSet::default(),
        }
    }

    pub fn with_adjustment(mut self, adjustment: AdjustmentSet) -> Self {
        self.adjustment = adjustment;
        self
    }

    pub fn validate(&self, panel: &Panel, estimand: &EstimandSpec) -> Result<()> {
        let l = estimand.lag();
        if let Some(phi) = self.phi {
            if phi as i64 > l - 1 {
                return Err(Error::validation(format!("phi = {phi} exceeds ty - t1 - 1 = {}", l - 1)));
            }
        }
        if let Some(xi) = self.xi {
            if (xi as i64) < l + 1 {
                return Err(Error::validation(format!("xi = {xi} is below ty - t1 + 1 = {}", l + 1)));
            }
        }
        for name in &self.adjustment.covariates {
            if panel.covariate_index(name).is_none() {
                return Err(Error::validation(format!("unknown adjustment covariate {name:?}")));
            }
        }
        Ok(())
    }

    /// Short description, e.g. `invariance=strong kappa=0 phi=4 xi=6`.
    pub fn describe(&self) -> String {
        let inv = match self.invariance {
            Invariance::Off => "off",
            Invariance::PerCohort => "per-cohort",
            Invariance::Strong => "strong",
        };
        let mut s = format!("invariance={inv}");
        for (name, v) in [("kappa", self.kappa), ("phi", self.phi), ("xi", self.xi)] {
            if let Some(v) = v {
                s.push_str(&format!(" {name}={v}"));
            }
        }
        s
    }
}
