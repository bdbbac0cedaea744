//! Balance problems for weighted contrasts.
//!
//! Treatment and control weights are solved jointly as one QP over the
//! stacked sample. Each component is split into blocks with fixed masses:
//!
//! * treatment: one block of mass 1, or one block per initiation cohort `r`
//!   with mass `λ_r` under per-cohort invariance;
//! * control: one block per reference cohort `ρ` with mass `p_ρ`, split by
//!   calendar time `s` into masses `p_ρ λ_{s-l}` under per-cohort invariance.
//!
//! Covariate monomials are balanced within every block toward the target
//! population's means. Unit and time indicators are balanced toward the
//! target's indicator profile when it defines one, and between the two
//! components otherwise.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{BalanceProblem, BalanceSolution, ColumnKind};
use crate::classify::{Group, ObservationTag, Role};
use crate::contrast::{Component, Provenance, WeightedContrast};
use crate::error::{Error, Result};
use crate::estimand::{AssumptionSet, EstimandSpec, Invariance, TargetPopulation};
use crate::linalg::mean_sd;
use crate::panel::{Cohort, ObsId, Panel};
use crate::twfe::{fit_twfe, Term, TwfeSpec};

/// Tolerance rule for continuous basis columns; indicators are always exact.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum DeltaRule {
    /// `δ = factor × (column SD over the sample)`.
    SdMultiple(f64),
    /// The same absolute `δ` for every continuous column.
    Absolute(f64),
}

impl Default for DeltaRule {
    fn default() -> Self {
        DeltaRule::SdMultiple(0.001)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceOptions {
    #[serde(default)]
    pub nonneg: bool,
    #[serde(default)]
    pub delta: DeltaRule,
    /// Polynomial degree of the covariate basis (1 to 3).
    #[serde(default = "one")]
    pub degree: u8,
    /// Cohort weights `λ_r` for per-cohort invariance, keyed by time index.
    #[serde(default)]
    pub lambda: Option<Vec<(usize, f64)>>,
    /// Balance covariates once over the pooled control component instead of
    /// within each reference cohort.
    #[serde(default)]
    pub pooled_reference: bool,
    /// Zero-sum restriction on control weights at every relative time other
    /// than the target lag and `-1`, i.e. homogeneous lag effects.
    #[serde(default)]
    pub homogeneous_effects: bool,
    #[serde(default)]
    pub max_iter: usize,
}

fn one() -> u8 {
    1
}

impl Default for BalanceOptions {
    fn default() -> Self {
        BalanceOptions {
            nonneg: false,
            delta: DeltaRule::default(),
            degree: 1,
            lambda: None,
            pooled_reference: false,
            homogeneous_effects: false,
            max_iter: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Block {
    pub name: String,
    pub component: Component,
    pub mass: f64,
    /// Positions in the design's sample.
    pub rows: Vec<usize>,
}

/// A balance problem together with its mapping back to the panel.
#[derive(Clone, Debug)]
pub struct BalanceDesign {
    pub problem: BalanceProblem,
    pub component: Vec<Component>,
    pub blocks: Vec<Block>,
    pub n_obs: usize,
    pub provenance: Provenance,
}

impl BalanceDesign {
    pub fn sample(&self) -> &[ObsId] {
        &self.problem.sample
    }
}

/// Target means and indicator profiles.
struct Profile {
    means: Vec<f64>,
    units: Option<Vec<f64>>,
    times: Option<Vec<f64>>,
}

/// Monomials of the adjustment covariates up to `degree`, as index lists.
fn monomials(k: usize, degree: u8) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = (0..k).map(|j| vec![j]).collect();
    for _ in 0..degree.max(1) {
        out.extend(frontier.iter().cloned());
        let mut next = Vec::new();
        for m in &frontier {
            for j in *m.last().unwrap()..k {
                let mut e = m.clone();
                e.push(j);
                next.push(e);
            }
        }
        frontier = next;
    }
    out
}

fn monomial_value(panel: &Panel, obs: ObsId, cov: &[usize], m: &[usize]) -> f64 {
    m.iter().map(|&j| panel.covariate(obs, cov[j])).product()
}

fn profile(
    panel: &Panel,
    estimand: &EstimandSpec,
    names: &[String],
    cov: &[usize],
    monos: &[Vec<usize>],
) -> Result<Profile> {
    let n_u = panel.n_units();
    // Unit-level value of a monomial: at ty when observed, baseline otherwise.
    let unit_value = |u: usize, m: &[usize]| -> f64 {
        let o = panel.obs(u, estimand.ty);
        if panel.is_observed(o) {
            monomial_value(panel, o, cov, m)
        } else {
            m.iter().map(|&j| panel.baseline_covariate(u, cov[j])).product()
        }
    };
    let weighted = |w: &[f64]| -> Vec<f64> {
        let total: f64 = w.iter().sum();
        monos.iter().map(|m| (0..n_u).map(|u| w[u] * unit_value(u, m)).sum::<f64>() / total).collect()
    };
    Ok(match &estimand.target {
        TargetPopulation::Study => Profile { means: weighted(&vec![1.0; n_u]), units: None, times: None },
        TargetPopulation::Treated => {
            let w: Vec<f64> = (0..n_u).map(|u| (!panel.cohort(u).is_never()) as u8 as f64).collect();
            if w.iter().sum::<f64>() == 0.0 {
                return Err(Error::EmptyGroup("target population of treated units is empty".into()));
            }
            let total: f64 = w.iter().sum();
            Profile { means: weighted(&w), units: Some(w.iter().map(|v| v / total).collect()), times: None }
        }
        TargetPopulation::Custom(w) => {
            let total: f64 = w.iter().sum();
            Profile { means: weighted(w), units: Some(w.iter().map(|v| v / total).collect()), times: None }
        }
        TargetPopulation::External(sample) => {
            let means = monos
                .iter()
                .map(|m| {
                    let cols: Vec<&str> = m.iter().map(|&j| names[j].as_str()).collect();
                    sample.monomial_mean(&cols).ok_or_else(|| {
                        Error::validation(format!("external target sample lacks columns {}", cols.join(", ")))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Profile { means, units: None, times: None }
        }
        TargetPopulation::TwfeImplied => {
            let fit = fit_twfe(panel, &TwfeSpec::dynamic())?;
            let term = Term::Event(estimand.lag());
            let h = fit.estimator_row(term)?;
            let mut units = vec![0.0; n_u];
            let mut times = vec![0.0; panel.n_times()];
            let mut means = vec![0.0; monos.len()];
            for (r, &o) in fit.rows().iter().enumerate() {
                if !fit.indicator(r, term) {
                    continue;
                }
                units[panel.unit_of(o)] += h[r];
                times[panel.time_of(o)] += h[r];
                for (k, m) in monos.iter().enumerate() {
                    means[k] += h[r] * monomial_value(panel, o, cov, m);
                }
            }
            Profile { means, units: Some(units), times: Some(times) }
        }
    })
}

/// Default `λ_r`: share of units in each cohort with a treatment row.
fn cohort_weights(panel: &Panel, cohorts: &BTreeSet<usize>, opt: &Option<Vec<(usize, f64)>>) -> Result<BTreeMap<usize, f64>> {
    let raw: BTreeMap<usize, f64> = match opt {
        Some(given) => {
            for (r, v) in given {
                if !cohorts.contains(r) {
                    return Err(Error::EmptyGroup(format!(
                        "cohort {} has no valid treatment observations",
                        panel.time_label(*r)
                    )));
                }
                if !(*v >= 0.0) {
                    return Err(Error::validation("cohort weights must be non-negative"));
                }
            }
            given.iter().copied().collect()
        }
        None => cohorts
            .iter()
            .map(|&r| (r, panel.cohorts().iter().filter(|c| **c == Cohort::At(r)).count() as f64))
            .collect(),
    };
    let total: f64 = raw.values().sum();
    if total <= 0.0 {
        return Err(Error::validation("cohort weights must have a positive sum"));
    }
    Ok(raw.into_iter().map(|(r, v)| (r, v / total)).collect())
}

/// Build the joint balance problem for any estimand and information set.
pub fn build_problem(
    panel: &Panel,
    estimand: &EstimandSpec,
    tags: &[ObservationTag],
    assumptions: &AssumptionSet,
    options: &BalanceOptions,
) -> Result<BalanceDesign> {
    assumptions.validate(panel, estimand)?;
    if !(1..=3).contains(&options.degree) {
        return Err(Error::validation("basis degree must be 1, 2 or 3"));
    }
    let lag = estimand.lag();
    let treat: Vec<ObsId> =
        tags.iter().filter(|t| t.role == Role::Treatment).map(|t| panel.obs(t.unit, t.time)).collect();
    if treat.is_empty() {
        return Err(Error::EmptyGroup("no valid treatment observations".into()));
    }

    // Blocks as (name, component, mass, observations).
    let mut blocks: Vec<(String, Component, f64, Vec<ObsId>)> = Vec::new();
    let per_cohort = assumptions.invariance == Invariance::PerCohort;
    let lambda = if per_cohort {
        let cohorts: BTreeSet<usize> = treat.iter().filter_map(|&o| panel.cohort(panel.unit_of(o)).index()).collect();
        Some(cohort_weights(panel, &cohorts, &options.lambda)?)
    } else {
        None
    };
    match &lambda {
        Some(lam) => {
            for (&r, &l) in lam {
                if l == 0.0 {
                    continue;
                }
                let rows: Vec<ObsId> =
                    treat.iter().copied().filter(|&o| panel.cohort(panel.unit_of(o)) == Cohort::At(r)).collect();
                blocks.push((format!("treatment[{}]", panel.time_label(r)), Component::Treatment, l, rows));
            }
        }
        None => blocks.push(("treatment".into(), Component::Treatment, 1.0, treat.clone())),
    }
    for &(rho, p) in estimand.reference.support() {
        let rows: Vec<ObsId> = tags
            .iter()
            .filter(|t| t.role == Role::Control && t.reference == Some(rho))
            .map(|t| panel.obs(t.unit, t.time))
            .collect();
        let label = panel.cohort_label(rho);
        if rows.is_empty() {
            return Err(Error::EmptyGroup(format!("no valid control observations for reference cohort {label}")));
        }
        match &lambda {
            Some(lam) => {
                for (&r, &l) in lam {
                    if l == 0.0 {
                        continue;
                    }
                    let s = r as i64 + lag;
                    let sub: Vec<ObsId> = rows.iter().copied().filter(|&o| panel.time_of(o) as i64 == s).collect();
                    if sub.is_empty() {
                        return Err(Error::EmptyGroup(format!(
                            "no valid controls for reference cohort {label} at time {}",
                            panel.time_label(s as usize)
                        )));
                    }
                    blocks.push((
                        format!("control[{label}@{}]", panel.time_label(s as usize)),
                        Component::Control,
                        p * l,
                        sub,
                    ));
                }
            }
            None => blocks.push((format!("control[{label}]"), Component::Control, p, rows)),
        }
    }

    let mut sample: Vec<ObsId> = Vec::new();
    let mut component = Vec::new();
    let mut block_rows: Vec<Vec<usize>> = Vec::new();
    for (_, comp, _, obs) in &blocks {
        let mut rows = Vec::new();
        for &o in obs {
            rows.push(sample.len());
            sample.push(o);
            component.push(*comp);
        }
        block_rows.push(rows);
    }
    let n = sample.len();

    let adj = &assumptions.adjustment;
    let cov: Vec<usize> = adj
        .covariates
        .iter()
        .map(|c| panel.covariate_index(c).ok_or_else(|| Error::validation(format!("unknown covariate {c:?}"))))
        .collect::<Result<_>>()?;
    let monos = if cov.is_empty() { Vec::new() } else { monomials(cov.len(), options.degree) };
    let prof = profile(panel, estimand, &adj.covariates, &cov, &monos)?;

    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    let mut kinds = Vec::new();
    let mut targets = Vec::new();
    let mut tols = Vec::new();
    let mut push = |col: Vec<f64>, name: String, kind: ColumnKind, target: f64, tol: f64| {
        cols.push(col);
        names.push(name);
        kinds.push(kind);
        targets.push(target);
        tols.push(tol);
    };

    for (b, (name, _, mass, _)) in blocks.iter().enumerate() {
        let mut col = vec![0.0; n];
        for &r in &block_rows[b] {
            col[r] = 1.0;
        }
        push(col, format!("mass:{name}"), ColumnKind::Mass, *mass, 0.0);
    }

    for (k, m) in monos.iter().enumerate() {
        let values: Vec<f64> = sample.iter().map(|&o| monomial_value(panel, o, &cov, m)).collect();
        let delta = match options.delta {
            DeltaRule::SdMultiple(f) => f * mean_sd(&values).1,
            DeltaRule::Absolute(d) => d,
        };
        let mname: String = m.iter().map(|&j| adj.covariates[j].as_str()).collect::<Vec<_>>().join("*");
        // Balance groups: every block, or pooled control when requested.
        let mut groups: Vec<(String, f64, Vec<usize>)> = Vec::new();
        for (b, (bname, comp, mass, _)) in blocks.iter().enumerate() {
            if options.pooled_reference && *comp == Component::Control {
                continue;
            }
            groups.push((bname.clone(), *mass, block_rows[b].clone()));
        }
        if options.pooled_reference {
            let rows: Vec<usize> = (0..n).filter(|&r| component[r] == Component::Control).collect();
            groups.push(("control".into(), 1.0, rows));
        }
        for (gname, mass, rows) in groups {
            let mut col = vec![0.0; n];
            for r in rows {
                col[r] = values[r];
            }
            push(col, format!("{mname}:{gname}"), ColumnKind::Continuous, mass * prof.means[k], mass * delta);
        }
    }

    let indicator = |label: &str,
                     n_levels: usize,
                     level_of: &dyn Fn(ObsId) -> usize,
                     level_name: &dyn Fn(usize) -> String,
                     profile: &Option<Vec<f64>>,
                     push: &mut dyn FnMut(Vec<f64>, String, ColumnKind, f64, f64)| {
        for lv in 0..n_levels {
            match profile {
                Some(pi) => {
                    for comp in [Component::Treatment, Component::Control] {
                        let col: Vec<f64> = (0..n)
                            .map(|r| (component[r] == comp && level_of(sample[r]) == lv) as u8 as f64)
                            .collect();
                        if col.iter().all(|v| *v == 0.0) && pi[lv] == 0.0 {
                            continue;
                        }
                        push(col, format!("{label}[{}]:{}", level_name(lv), comp.name()), ColumnKind::Indicator, pi[lv], 0.0);
                    }
                }
                None => {
                    let col: Vec<f64> = (0..n)
                        .map(|r| {
                            if level_of(sample[r]) != lv {
                                0.0
                            } else if component[r] == Component::Treatment {
                                1.0
                            } else {
                                -1.0
                            }
                        })
                        .collect();
                    if col.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    push(col, format!("{label}[{}]", level_name(lv)), ColumnKind::Indicator, 0.0, 0.0);
                }
            }
        }
    };
    if adj.unit_indicators {
        indicator(
            "unit",
            panel.n_units(),
            &|o| panel.unit_of(o),
            &|u| panel.unit_id(u).to_string(),
            &prof.units,
            &mut push,
        );
    }
    if adj.time_indicators {
        indicator(
            "time",
            panel.n_times(),
            &|o| panel.time_of(o),
            &|t| panel.time_label(t).to_string(),
            &prof.times,
            &mut push,
        );
    }
    if options.homogeneous_effects {
        let lags: BTreeSet<i64> = (0..n)
            .filter(|&r| component[r] == Component::Control)
            .filter_map(|r| panel.cohort(panel.unit_of(sample[r])).relative_time(panel.time_of(sample[r])))
            .filter(|&r| r != lag && r != -1)
            .collect();
        for l in lags {
            let col: Vec<f64> = (0..n)
                .map(|r| {
                    let rel = panel.cohort(panel.unit_of(sample[r])).relative_time(panel.time_of(sample[r]));
                    (component[r] == Component::Control && rel == Some(l)) as u8 as f64
                })
                .collect();
            push(col, format!("lag[{l}]"), ColumnKind::Structural, 0.0, 0.0);
        }
    }

    let basis = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let problem = BalanceProblem {
        sample,
        names,
        kinds,
        basis,
        targets,
        tolerance: tols,
        nonneg: options.nonneg,
        normalize: false,
        max_iter: options.max_iter,
    };
    problem.validate()?;
    let provenance = Provenance {
        solver: if options.nonneg { "balance-qp-nonneg".into() } else { "balance-qp".into() },
        estimand: estimand.describe(panel),
        assumptions: assumptions.describe(),
        adjustment: adj.labels(),
    };
    Ok(BalanceDesign {
        problem,
        component,
        blocks: blocks
            .into_iter()
            .zip(block_rows)
            .map(|((name, component, mass, _), rows)| Block { name, component, mass, rows })
            .collect(),
        n_obs: panel.n_obs(),
        provenance,
    })
}

/// Balance problem restricted to the ideal experiment at `ty`.
pub fn build_ideal_problem(
    panel: &Panel,
    estimand: &EstimandSpec,
    tags: &[ObservationTag],
    assumptions: &AssumptionSet,
    options: &BalanceOptions,
) -> Result<BalanceDesign> {
    if tags.iter().any(|t| t.is_used() && t.group != Group::IdealExperiment) {
        return Err(Error::validation("ideal balance problems take ideal-experiment observations only"));
    }
    build_problem(panel, estimand, tags, assumptions, options)
}

/// Balance problem over observations admitted by time-shift invariance.
pub fn build_expanded_problem(
    panel: &Panel,
    estimand: &EstimandSpec,
    tags: &[ObservationTag],
    assumptions: &AssumptionSet,
    options: &BalanceOptions,
) -> Result<BalanceDesign> {
    if !assumptions.invariance.is_on() {
        return Err(Error::validation("expanded balance problems need time-shift invariance"));
    }
    build_problem(panel, estimand, tags, assumptions, options)
}

/// Balance problem for a reference regime mixing several cohorts.
pub fn build_general_reference_problem(
    panel: &Panel,
    estimand: &EstimandSpec,
    tags: &[ObservationTag],
    assumptions: &AssumptionSet,
    options: &BalanceOptions,
) -> Result<BalanceDesign> {
    if estimand.reference.is_pure_control() {
        return Err(Error::validation("reference regime is pure control; use the ideal or expanded problem"));
    }
    build_problem(panel, estimand, tags, assumptions, options)
}

/// Package an optimal solution as a weighted contrast.
pub fn estimate_from_solution(panel: &Panel, design: &BalanceDesign, solution: &BalanceSolution) -> Result<WeightedContrast> {
    if !solution.is_optimal() {
        return Err(solution.clone().into_result().unwrap_err());
    }
    let mut w = vec![0.0; design.n_obs];
    let mut comp = vec![Component::Unused; design.n_obs];
    for (r, &o) in design.problem.sample.iter().enumerate() {
        w[o] = solution.weights[r];
        comp[o] = design.component[r];
    }
    Ok(WeightedContrast::new(panel, w, comp, design.provenance.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(2, 1).len(), 2);
        assert_eq!(monomials(2, 2).len(), 5);
        assert_eq!(monomials(3, 3).len(), 19);
    }
}
