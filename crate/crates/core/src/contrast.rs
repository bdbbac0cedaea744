//! Weighted contrasts and the closed-form estimators built from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimand::EstimandSpec;
use crate::panel::{Cohort, ObsId, Panel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Treatment,
    Control,
    Unused,
}

impl Component {
    pub fn name(self) -> &'static str {
        match self {
            Component::Treatment => "treatment",
            Component::Control => "control",
            Component::Unused => "unused",
        }
    }
}

/// Where a contrast came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub solver: String,
    pub estimand: String,
    pub assumptions: String,
    pub adjustment: Vec<String>,
}

/// Per-observation weights split into a treatment and a control component.
///
/// Weights are stored with the sign they carry inside their own component,
/// so each component sums to one; the estimate is the treatment weighted
/// mean minus the control weighted mean.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedContrast {
    pub weights: Vec<f64>,
    pub component: Vec<Component>,
    pub estimate: f64,
    pub provenance: Provenance,
}

impl WeightedContrast {
    /// Builds a contrast from component assignments and weights over all
    /// panel observations, computing the estimate from the panel outcomes.
    pub fn new(panel: &Panel, weights: Vec<f64>, component: Vec<Component>, provenance: Provenance) -> Self {
        let estimate = contrast_value(panel.outcomes(), &weights, &component);
        WeightedContrast { weights, component, estimate, provenance }
    }

    pub fn n_obs(&self) -> usize {
        self.weights.len()
    }

    pub fn ids(&self, which: Component) -> Vec<ObsId> {
        (0..self.weights.len()).filter(|&i| self.component[i] == which).collect()
    }

    pub fn treatment_ids(&self) -> Vec<ObsId> {
        self.ids(Component::Treatment)
    }

    pub fn control_ids(&self) -> Vec<ObsId> {
        self.ids(Component::Control)
    }

    pub fn component_sum(&self, which: Component) -> f64 {
        (0..self.weights.len()).filter(|&i| self.component[i] == which).map(|i| self.weights[i]).sum()
    }

    /// Signed weight in the overall linear functional: `+w` on treatment,
    /// `-w` on control, zero elsewhere.
    pub fn signed(&self, obs: ObsId) -> f64 {
        match self.component[obs] {
            Component::Treatment => self.weights[obs],
            Component::Control => -self.weights[obs],
            Component::Unused => 0.0,
        }
    }

    /// Value of the contrast for another outcome vector.
    pub fn apply(&self, outcomes: &[f64]) -> f64 {
        contrast_value(outcomes, &self.weights, &self.component)
    }

    /// Weighted mean of a per-observation column within one component.
    pub fn weighted_mean(&self, values: &[f64], which: Component) -> f64 {
        (0..self.weights.len())
            .filter(|&i| self.component[i] == which)
            .map(|i| self.weights[i] * values[i])
            .sum()
    }
}

fn contrast_value(y: &[f64], w: &[f64], comp: &[Component]) -> f64 {
    let mut s = 0.0;
    for i in 0..w.len() {
        match comp[i] {
            Component::Treatment => s += w[i] * y[i],
            Component::Control => s -= w[i] * y[i],
            Component::Unused => {}
        }
    }
    s
}

fn units_in_cohort_at(panel: &Panel, c: Cohort, t: usize) -> Vec<ObsId> {
    (0..panel.n_units())
        .filter(|&u| panel.cohort(u) == c)
        .map(|u| panel.obs(u, t))
        .filter(|&o| panel.is_observed(o))
        .collect()
}

/// Difference in means at `ty` between the `t1` cohort and the reference
/// regime, each reference cohort weighted by its probability.
pub fn ideal_contrast(panel: &Panel, estimand: &EstimandSpec) -> Result<WeightedContrast> {
    let n = panel.n_obs();
    let mut w = vec![0.0; n];
    let mut comp = vec![Component::Unused; n];
    let treated = units_in_cohort_at(panel, Cohort::At(estimand.t1), estimand.ty);
    if treated.is_empty() {
        return Err(Error::EmptyGroup(format!(
            "no units initiate at {} with an outcome at {}",
            panel.time_label(estimand.t1),
            panel.time_label(estimand.ty)
        )));
    }
    for &o in &treated {
        w[o] = 1.0 / treated.len() as f64;
        comp[o] = Component::Treatment;
    }
    for &(c, p) in estimand.reference.support() {
        let ctrl = units_in_cohort_at(panel, c, estimand.ty);
        if ctrl.is_empty() {
            return Err(Error::EmptyGroup(format!("reference cohort {} has no observations", panel.cohort_label(c))));
        }
        for &o in &ctrl {
            w[o] = p / ctrl.len() as f64;
            comp[o] = Component::Control;
        }
    }
    Ok(WeightedContrast::new(
        panel,
        w,
        comp,
        Provenance { solver: "ideal".into(), estimand: estimand.describe(panel), ..Default::default() },
    ))
}

/// Per-unit initiation probabilities `Pr(G_i = c | X_i)` for a set of cohorts.
#[derive(Clone, Debug, PartialEq)]
pub struct Propensities {
    pub cohorts: Vec<Cohort>,
    /// Unit-major: `probs[unit][k]` is the probability of `cohorts[k]`.
    pub probs: Vec<Vec<f64>>,
}

impl Propensities {
    pub fn get(&self, unit: usize, c: Cohort) -> Option<f64> {
        let k = self.cohorts.iter().position(|d| *d == c)?;
        Some(self.probs[unit][k])
    }

    /// The same probability vector for every unit.
    pub fn constant(n_units: usize, cohorts: Vec<Cohort>, probs: Vec<f64>) -> Self {
        Propensities { cohorts, probs: vec![probs; n_units] }
    }
}

/// Hajek (normalized inverse-probability) contrast at `ty`.
pub fn hajek_contrast(panel: &Panel, estimand: &EstimandSpec, props: &Propensities) -> Result<WeightedContrast> {
    if props.probs.len() != panel.n_units() {
        return Err(Error::validation("propensities must have one row per unit"));
    }
    let n = panel.n_obs();
    let mut w = vec![0.0; n];
    let mut comp = vec![Component::Unused; n];
    let mut fill = |c: Cohort, mass: f64, which: Component| -> Result<()> {
        let ids = units_in_cohort_at(panel, c, estimand.ty);
        if ids.is_empty() {
            return Err(Error::EmptyGroup(format!("cohort {} has no observations", panel.cohort_label(c))));
        }
        let mut raw = Vec::with_capacity(ids.len());
        for &o in &ids {
            let u = panel.unit_of(o);
            let p = props
                .get(u, c)
                .ok_or_else(|| Error::validation(format!("no propensity for cohort {}", panel.cohort_label(c))))?;
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::validation(format!(
                    "propensity {p} for unit {} must be strictly positive",
                    panel.unit_id(u)
                )));
            }
            raw.push(1.0 / p);
        }
        let total: f64 = raw.iter().sum();
        for (&o, r) in ids.iter().zip(raw) {
            w[o] = mass * r / total;
            comp[o] = which;
        }
        Ok(())
    };
    fill(Cohort::At(estimand.t1), 1.0, Component::Treatment)?;
    for &(c, p) in estimand.reference.support() {
        fill(c, p, Component::Control)?;
    }
    Ok(WeightedContrast::new(
        panel,
        w,
        comp,
        Provenance { solver: "hajek".into(), estimand: estimand.describe(panel), ..Default::default() },
    ))
}
