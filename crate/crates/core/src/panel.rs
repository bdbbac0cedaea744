//! Long-format panel data with validated staggered adoption.
//!
//! Units keep their input order; calendar times are mapped to `0..T` by
//! sorted order and must be consecutive integers. Observations are addressed
//! by a dense [`ObsId`] laid out unit-major (`unit * T + time`).

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense observation index, `unit * n_times + time`.
pub type ObsId = usize;

/// Treatment initiation time of a unit, as a time index or never.
///
/// `Never` sorts after every finite cohort, which is the usual `T + 1`
/// convention without exposing a magic number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cohort {
    At(usize),
    Never,
}

impl Cohort {
    pub fn is_never(self) -> bool {
        matches!(self, Cohort::Never)
    }

    pub fn index(self) -> Option<usize> {
        match self {
            Cohort::At(t) => Some(t),
            Cohort::Never => None,
        }
    }

    /// Relative time `t - G`, or `None` for never-treated units.
    pub fn relative_time(self, t: usize) -> Option<i64> {
        self.index().map(|g| t as i64 - g as i64)
    }

    /// Treatment indicator `1(t >= G)`.
    pub fn treated_at(self, t: usize) -> bool {
        matches!(self, Cohort::At(g) if t >= g)
    }
}

/// How the treatment timing is supplied in a row.
#[derive(Clone, Debug, PartialEq)]
pub enum InitField {
    /// Initiation label (calendar time) or `None` for never treated.
    Cohort(Option<i64>),
    /// 0/1 treatment indicator for this observation.
    Treat(u8),
}

/// One input row before validation.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    /// 1-based data row number, used in error messages.
    pub row: usize,
    pub unit: String,
    pub time: i64,
    pub outcome: Option<f64>,
    pub init: InitField,
    pub covariates: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelOptions {
    /// Admit unbalanced panels; missing cells are excluded everywhere.
    pub allow_missing: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Covariates {
    names: Vec<String>,
    /// Row-major `n_obs x k`; unobserved cells hold the unit's first value.
    values: Vec<f64>,
    time_varying: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    units: Vec<String>,
    time_labels: Vec<i64>,
    cohorts: Vec<Cohort>,
    outcome: Vec<f64>,
    observed: Vec<bool>,
    covariates: Covariates,
    warnings: Vec<String>,
}

impl Panel {
    /// Validate rows into a panel.
    ///
    /// Units whose initiation label precedes the observation window are
    /// dropped with a warning, since their initiation time is unknown.
    /// Initiation labels after the window are treated as never within it.
    pub fn from_records(records: &[Record], covariate_names: &[String], options: PanelOptions) -> Result<Panel> {
        if records.is_empty() {
            return Err(Error::validation("panel has no rows"));
        }
        let k = covariate_names.len();
        let mut unit_order: Vec<String> = Vec::new();
        let mut unit_pos: HashMap<&str, usize> = HashMap::new();
        let mut times = BTreeSet::new();
        for r in records {
            if r.covariates.len() != k {
                return Err(Error::Schema {
                    row: r.row,
                    message: format!("expected {k} covariate values, found {}", r.covariates.len()),
                });
            }
            if let Some(y) = r.outcome {
                if !y.is_finite() {
                    return Err(Error::Schema { row: r.row, message: "non-numeric outcome".into() });
                }
            }
            if r.covariates.iter().any(|x| !x.is_finite()) {
                return Err(Error::Schema { row: r.row, message: "non-finite covariate value".into() });
            }
            if !unit_pos.contains_key(r.unit.as_str()) {
                unit_pos.insert(r.unit.as_str(), unit_order.len());
                unit_order.push(r.unit.clone());
            }
            times.insert(r.time);
        }
        let time_labels: Vec<i64> = times.into_iter().collect();
        for w in time_labels.windows(2) {
            if w[1] != w[0] + 1 {
                return Err(Error::validation(format!(
                    "time labels must be consecutive integers; gap between {} and {}",
                    w[0], w[1]
                )));
            }
        }
        let n_t = time_labels.len();
        let t0 = time_labels[0];
        let n_u = unit_order.len();

        let mut cell: Vec<Option<usize>> = vec![None; n_u * n_t];
        for (idx, r) in records.iter().enumerate() {
            let u = unit_pos[r.unit.as_str()];
            let t = (r.time - t0) as usize;
            if cell[u * n_t + t].is_some() {
                return Err(Error::validation(format!(
                    "duplicate observation for unit {} at time {}",
                    r.unit, r.time
                )));
            }
            cell[u * n_t + t] = Some(idx);
        }

        let mut warnings = Vec::new();
        let mut keep = vec![true; n_u];
        let mut cohorts = vec![Cohort::Never; n_u];
        for u in 0..n_u {
            let rows: Vec<&Record> = (0..n_t).filter_map(|t| cell[u * n_t + t].map(|i| &records[i])).collect();
            match resolve_cohort(&unit_order[u], &rows, t0, n_t)? {
                Resolved::Cohort(c) => cohorts[u] = c,
                Resolved::BeforeWindow(label) => {
                    keep[u] = false;
                    let msg = format!(
                        "unit {} initiated treatment at {label}, before the observation window; excluded",
                        unit_order[u]
                    );
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
                Resolved::AfterWindow(label) => {
                    let msg = format!(
                        "unit {} initiates treatment at {label}, after the observation window; treated as never",
                        unit_order[u]
                    );
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
            }
        }

        let kept: Vec<usize> = (0..n_u).filter(|&u| keep[u]).collect();
        if kept.is_empty() {
            return Err(Error::validation("no units remain after excluding units with unknown initiation"));
        }
        let n_keep = kept.len();
        let mut outcome = vec![f64::NAN; n_keep * n_t];
        let mut observed = vec![false; n_keep * n_t];
        let mut cov_values = vec![0.0; n_keep * n_t * k];
        for (new_u, &u) in kept.iter().enumerate() {
            let mut first_cov: Option<&[f64]> = None;
            for t in 0..n_t {
                let obs = new_u * n_t + t;
                match cell[u * n_t + t].map(|i| &records[i]) {
                    Some(r) if r.outcome.is_some() => {
                        outcome[obs] = r.outcome.unwrap_or(f64::NAN);
                        observed[obs] = true;
                        cov_values[obs * k..(obs + 1) * k].copy_from_slice(&r.covariates);
                        first_cov.get_or_insert(&r.covariates[..]);
                    }
                    _ => {
                        if !options.allow_missing {
                            return Err(Error::validation(format!(
                                "missing cell: unit {} at time {} (pass allow-missing to admit unbalanced panels)",
                                unit_order[u],
                                t0 + t as i64
                            )));
                        }
                    }
                }
            }
            let Some(first) = first_cov else {
                return Err(Error::validation(format!("unit {} has no observed outcomes", unit_order[u])));
            };
            // Unobserved cells carry the unit's first observed covariates.
            for t in 0..n_t {
                let obs = new_u * n_t + t;
                if !observed[obs] {
                    cov_values[obs * k..(obs + 1) * k].copy_from_slice(first);
                }
            }
        }
        let mut time_varying = vec![false; k];
        for (j, tv) in time_varying.iter_mut().enumerate() {
            *tv = (0..n_keep).any(|u| {
                let base = cov_values[(u * n_t) * k + j];
                (0..n_t).any(|t| cov_values[(u * n_t + t) * k + j] != base)
            });
        }
        Ok(Panel {
            units: kept.iter().map(|&u| unit_order[u].clone()).collect(),
            time_labels,
            cohorts: kept.iter().map(|&u| cohorts[u]).collect(),
            outcome,
            observed,
            covariates: Covariates { names: covariate_names.to_vec(), values: cov_values, time_varying },
            warnings,
        })
    }

    /// Balanced panel from dense arrays; handy for simulations and tests.
    ///
    /// `outcome` and `covariates` are unit-major over `time_labels`;
    /// covariates are per observation with `covariate_names.len()` values each.
    pub fn from_dense(
        units: Vec<String>,
        time_labels: Vec<i64>,
        cohorts: Vec<Cohort>,
        outcome: Vec<f64>,
        covariate_names: Vec<String>,
        covariates: Vec<f64>,
    ) -> Result<Panel> {
        let n_u = units.len();
        let n_t = time_labels.len();
        let k = covariate_names.len();
        if n_u == 0 || n_t == 0 {
            return Err(Error::validation("panel must have at least one unit and one time"));
        }
        if cohorts.len() != n_u || outcome.len() != n_u * n_t || covariates.len() != n_u * n_t * k {
            return Err(Error::validation("dense panel arrays have inconsistent lengths"));
        }
        if time_labels.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::validation("time labels must be consecutive integers"));
        }
        if cohorts.iter().any(|c| matches!(c, Cohort::At(g) if *g >= n_t)) {
            return Err(Error::validation("cohort index outside the time range"));
        }
        if outcome.iter().chain(covariates.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite value in dense panel"));
        }
        let mut seen = std::collections::HashSet::new();
        if !units.iter().all(|u| seen.insert(u.as_str())) {
            return Err(Error::validation("duplicate unit identifier"));
        }
        let time_varying = (0..k)
            .map(|j| {
                (0..n_u).any(|u| {
                    let base = covariates[(u * n_t) * k + j];
                    (0..n_t).any(|t| covariates[(u * n_t + t) * k + j] != base)
                })
            })
            .collect();
        Ok(Panel {
            units,
            time_labels,
            cohorts,
            observed: vec![true; n_u * n_t],
            outcome,
            covariates: Covariates { names: covariate_names, values: covariates, time_varying },
            warnings: Vec::new(),
        })
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_times(&self) -> usize {
        self.time_labels.len()
    }

    /// Number of grid cells, observed or not.
    pub fn n_obs(&self) -> usize {
        self.units.len() * self.time_labels.len()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn is_balanced(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn unit_id(&self, unit: usize) -> &str {
        &self.units[unit]
    }

    pub fn time_labels(&self) -> &[i64] {
        &self.time_labels
    }

    pub fn time_label(&self, t: usize) -> i64 {
        self.time_labels[t]
    }

    pub fn time_index(&self, label: i64) -> Option<usize> {
        let t0 = self.time_labels[0];
        (label >= t0 && label < t0 + self.n_times() as i64).then(|| (label - t0) as usize)
    }

    pub fn cohorts(&self) -> &[Cohort] {
        &self.cohorts
    }

    pub fn cohort(&self, unit: usize) -> Cohort {
        self.cohorts[unit]
    }

    /// External label for a cohort: its calendar time or `"never"`.
    pub fn cohort_label(&self, c: Cohort) -> String {
        match c {
            Cohort::At(t) => self.time_labels[t].to_string(),
            Cohort::Never => "never".to_string(),
        }
    }

    pub fn parse_cohort(&self, label: &str) -> Result<Cohort> {
        let s = label.trim();
        if s.eq_ignore_ascii_case("never") || s.eq_ignore_ascii_case("inf") {
            return Ok(Cohort::Never);
        }
        let v: i64 = s.parse().map_err(|_| Error::validation(format!("invalid cohort label {s:?}")))?;
        self.time_index(v)
            .map(Cohort::At)
            .ok_or_else(|| Error::validation(format!("cohort {v} outside the observed time range")))
    }

    pub fn obs(&self, unit: usize, t: usize) -> ObsId {
        unit * self.n_times() + t
    }

    pub fn unit_of(&self, obs: ObsId) -> usize {
        obs / self.n_times()
    }

    pub fn time_of(&self, obs: ObsId) -> usize {
        obs % self.n_times()
    }

    pub fn is_observed(&self, obs: ObsId) -> bool {
        self.observed[obs]
    }

    /// Observed cells in `ObsId` order.
    pub fn observed_ids(&self) -> impl Iterator<Item = ObsId> + '_ {
        (0..self.n_obs()).filter(move |&o| self.observed[o])
    }

    /// Outcome at a cell; `NaN` when unobserved.
    pub fn outcome(&self, obs: ObsId) -> f64 {
        self.outcome[obs]
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcome
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariates.names
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.names.iter().position(|n| n == name)
    }

    pub fn is_time_varying(&self, k: usize) -> bool {
        self.covariates.time_varying[k]
    }

    pub fn covariate(&self, obs: ObsId, k: usize) -> f64 {
        self.covariates.values[obs * self.covariates.names.len() + k]
    }

    /// Baseline value of covariate `k`: the unit's first observed value.
    pub fn baseline_covariate(&self, unit: usize, k: usize) -> f64 {
        let t = (0..self.n_times()).find(|&t| self.observed[self.obs(unit, t)]).unwrap_or(0);
        self.covariate(self.obs(unit, t), k)
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Distinct cohorts present, finite ones first.
    pub fn cohort_set(&self) -> BTreeSet<Cohort> {
        self.cohorts.iter().copied().collect()
    }

    /// Panel with the listed units (repeats allowed) in the given order.
    ///
    /// Repeated units receive suffixed identifiers so every resampled unit is
    /// its own cluster.
    pub fn resample_units(&self, picks: &[usize]) -> Panel {
        let n_t = self.n_times();
        let k = self.covariates.names.len();
        let mut counts: HashMap<usize, usize> = HashMap::new();
        let mut units = Vec::with_capacity(picks.len());
        let mut outcome = Vec::with_capacity(picks.len() * n_t);
        let mut observed = Vec::with_capacity(picks.len() * n_t);
        let mut values = Vec::with_capacity(picks.len() * n_t * k);
        for &u in picks {
            let c = counts.entry(u).or_insert(0);
            units.push(if *c == 0 { self.units[u].clone() } else { format!("{}#{}", self.units[u], c) });
            *c += 1;
            let range = u * n_t..(u + 1) * n_t;
            outcome.extend_from_slice(&self.outcome[range.clone()]);
            observed.extend_from_slice(&self.observed[range]);
            values.extend_from_slice(&self.covariates.values[u * n_t * k..(u + 1) * n_t * k]);
        }
        Panel {
            units,
            time_labels: self.time_labels.clone(),
            cohorts: picks.iter().map(|&u| self.cohorts[u]).collect(),
            outcome,
            observed,
            covariates: Covariates {
                names: self.covariates.names.clone(),
                values,
                time_varying: self.covariates.time_varying.clone(),
            },
            warnings: Vec::new(),
        }
    }

    /// Copy of the panel with one cell marked unobserved.
    pub fn without_observation(&self, obs: ObsId) -> Panel {
        let mut p = self.clone();
        p.observed[obs] = false;
        p.outcome[obs] = f64::NAN;
        p
    }

    /// Copy of the panel with outcomes replaced (same layout, unobserved cells ignored).
    pub fn with_outcomes(&self, outcome: Vec<f64>) -> Result<Panel> {
        if outcome.len() != self.n_obs() {
            return Err(Error::validation("outcome vector length does not match the panel"));
        }
        let mut p = self.clone();
        for (o, y) in outcome.into_iter().enumerate() {
            p.outcome[o] = if p.observed[o] { y } else { f64::NAN };
        }
        Ok(p)
    }

    /// SHA-256 of the panel contents, stable across runs.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for u in &self.units {
            h.update(u.as_bytes());
            h.update([0]);
        }
        for t in &self.time_labels {
            h.update(t.to_le_bytes());
        }
        for c in &self.cohorts {
            h.update(match c {
                Cohort::At(t) => (*t as u64).to_le_bytes(),
                Cohort::Never => u64::MAX.to_le_bytes(),
            });
        }
        for (y, o) in self.outcome.iter().zip(&self.observed) {
            h.update(if *o { y.to_bits() } else { 0 }.to_le_bytes());
        }
        for n in &self.covariates.names {
            h.update(n.as_bytes());
            h.update([0]);
        }
        for v in &self.covariates.values {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl fmt::Display for Panel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let never = self.cohorts.iter().filter(|c| c.is_never()).count();
        write!(
            f,
            "{} units x {} times ({}..{}), {} never treated, {} cohorts",
            self.n_units(),
            self.n_times(),
            self.time_labels[0],
            self.time_labels[self.n_times() - 1],
            never,
            self.cohort_set().iter().filter(|c| !c.is_never()).count()
        )
    }
}

enum Resolved {
    Cohort(Cohort),
    BeforeWindow(i64),
    AfterWindow(i64),
}

fn resolve_cohort(unit: &str, rows: &[&Record], t0: i64, n_t: usize) -> Result<Resolved> {
    let mut label: Option<Option<i64>> = None;
    let mut first_treated: Option<i64> = None;
    let mut last_z = 0u8;
    let mut uses_treat = None;
    for r in rows {
        match &r.init {
            InitField::Cohort(g) => {
                if uses_treat == Some(true) {
                    return Err(Error::Schema { row: r.row, message: "mixed initiation and treatment columns".into() });
                }
                uses_treat = Some(false);
                match label {
                    None => label = Some(*g),
                    Some(prev) if prev != *g => {
                        return Err(Error::Schema {
                            row: r.row,
                            message: format!("inconsistent initiation time for unit {unit}"),
                        })
                    }
                    _ => {}
                }
            }
            InitField::Treat(z) => {
                if uses_treat == Some(false) {
                    return Err(Error::Schema { row: r.row, message: "mixed initiation and treatment columns".into() });
                }
                uses_treat = Some(true);
                if *z > 1 {
                    return Err(Error::Schema { row: r.row, message: "treatment indicator must be 0 or 1".into() });
                }
                if last_z == 1 && *z == 0 {
                    return Err(Error::NonStaggered { unit: unit.to_string(), time: r.time });
                }
                if *z == 1 && first_treated.is_none() {
                    first_treated = Some(r.time);
                }
                last_z = *z;
            }
        }
    }
    let g = if uses_treat == Some(true) { first_treated } else { label.flatten() };
    Ok(match g {
        None => Resolved::Cohort(Cohort::Never),
        Some(v) if v < t0 => Resolved::BeforeWindow(v),
        Some(v) if v >= t0 + n_t as i64 => Resolved::AfterWindow(v),
        Some(v) => Resolved::Cohort(Cohort::At((v - t0) as usize)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn treat_rows(paths: &[(&str, &[u8])]) -> Vec<Record> {
        let mut rows = Vec::new();
        for (u, path) in paths {
            for (t, z) in path.iter().enumerate() {
                rows.push(Record {
                    row: rows.len() + 1,
                    unit: u.to_string(),
                    time: t as i64 + 1,
                    outcome: Some(t as f64),
                    init: InitField::Treat(*z),
                    covariates: vec![],
                });
            }
        }
        rows
    }

    #[test]
    fn treatment_paths_give_first_treated_time() {
        let rows = treat_rows(&[("a", &[0, 0, 1, 1]), ("b", &[0, 0, 0, 0]), ("c", &[1, 1, 1, 1])]);
        let p = Panel::from_records(&rows, &[], PanelOptions::default()).unwrap();
        assert_eq!(p.cohorts(), &[Cohort::At(2), Cohort::Never, Cohort::At(0)]);
    }

    #[test]
    fn single_cell_untreated_panel() {
        let rows = treat_rows(&[("a", &[0])]);
        let p = Panel::from_records(&rows, &[], PanelOptions::default()).unwrap();
        assert_eq!(p.n_times(), 1);
        assert_eq!(p.cohort(0), Cohort::Never);
    }

    #[test]
    fn reversal_is_rejected_at_the_offending_time() {
        let rows = treat_rows(&[("u", &[0, 1, 0])]);
        let err = Panel::from_records(&rows, &[], PanelOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "non-staggered path at unit u, time 3");
    }

    #[test]
    fn gaps_duplicates_and_missing_cells() {
        let mut rows = treat_rows(&[("a", &[0, 0, 0])]);
        rows[2].time = 5;
        assert!(Panel::from_records(&rows, &[], PanelOptions::default()).is_err());

        let mut rows = treat_rows(&[("a", &[0, 0]), ("b", &[0, 0])]);
        rows[1].time = 1;
        let err = Panel::from_records(&rows, &[], PanelOptions::default()).unwrap_err();
        assert!(err.to_string().contains("duplicate"));

        let mut rows = treat_rows(&[("a", &[0, 0]), ("b", &[0, 0])]);
        rows.pop();
        assert!(Panel::from_records(&rows, &[], PanelOptions::default()).is_err());
        let p = Panel::from_records(&rows, &[], PanelOptions { allow_missing: true }).unwrap();
        assert!(!p.is_balanced());
        assert_eq!(p.n_observed(), 3);
    }

    #[test]
    fn pre_window_adopters_are_dropped_with_warning() {
        let rows: Vec<Record> = [("a", Some(0)), ("b", Some(2)), ("c", None)]
            .iter()
            .flat_map(|(u, g)| {
                (1..=3).map(move |t| Record {
                    row: 0,
                    unit: u.to_string(),
                    time: t,
                    outcome: Some(1.0),
                    init: InitField::Cohort(*g),
                    covariates: vec![],
                })
            })
            .collect();
        let p = Panel::from_records(&rows, &[], PanelOptions::default()).unwrap();
        assert_eq!(p.units(), &["b".to_string(), "c".to_string()]);
        assert_eq!(p.warnings().len(), 1);
        assert_eq!(p.cohort(0), Cohort::At(1));
    }

    #[test]
    fn resampling_renames_repeats() {
        let rows = treat_rows(&[("a", &[0, 1]), ("b", &[0, 0])]);
        let p = Panel::from_records(&rows, &[], PanelOptions::default()).unwrap();
        let r = p.resample_units(&[0, 0, 1]);
        assert_eq!(r.units(), &["a", "a#1", "b"]);
        assert_eq!(r.cohort(1), Cohort::At(1));
        assert_eq!(r.outcome(r.obs(1, 1)), 1.0);
    }
}
