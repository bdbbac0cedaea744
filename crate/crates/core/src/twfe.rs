//! Two-way fixed-effects regressions and their implied weights.
//!
//! Designs use a full set of unit dummies, time dummies for every period
//! but the first, optional covariates and the treatment terms, in that
//! column order. There is no intercept. Collinear columns are dropped in
//! column order and reported with a witness.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::contrast::{Component, Provenance, WeightedContrast};
use crate::error::{Error, Result};
use crate::estimand::EstimandSpec;
use crate::linalg::ColumnQr;
use crate::panel::{Cohort, ObsId, Panel};

/// Largest `rows * columns` for which `FitMethod::Auto` uses the dense design.
pub const DENSE_LIMIT: usize = 5_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwfeKind {
    #[default]
    Dynamic,
    Static,
    /// Cohort by relative-time interactions, never-treated as the omitted cohort.
    InteractionWeighted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    #[default]
    Auto,
    Dense,
    /// Two-way demeaning followed by a fit of the remaining columns.
    Within,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TwfeSpec {
    #[serde(default)]
    pub kind: TwfeKind,
    /// Relative-time window `[a, b]`; `None` gives one term per observed lag.
    #[serde(default)]
    pub horizon: Option<(i64, i64)>,
    /// Pool lags outside the window into the endpoint terms.
    #[serde(default)]
    pub bin_endpoints: bool,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub method: FitMethod,
}

impl TwfeSpec {
    pub fn dynamic() -> Self {
        TwfeSpec::default()
    }

    pub fn with_kind(kind: TwfeKind) -> Self {
        TwfeSpec { kind, ..Default::default() }
    }
}

/// A design column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    Unit(usize),
    Time(usize),
    Covariate(usize),
    /// Relative-time indicator `1(t - G = l)`.
    Event(i64),
    /// Static treatment indicator `1(t >= G)`.
    Treated,
    /// Interaction `1(G = t0) 1(t - G = l)`, with `t0` a time index.
    CohortEvent(usize, i64),
}

impl Term {
    pub fn is_fixed_effect(self) -> bool {
        matches!(self, Term::Unit(_) | Term::Time(_))
    }

    pub fn is_treatment(self) -> bool {
        matches!(self, Term::Event(_) | Term::Treated | Term::CohortEvent(..))
    }

    pub fn name(self, panel: &Panel) -> String {
        match self {
            Term::Unit(u) => format!("unit[{}]", panel.unit_id(u)),
            Term::Time(t) => format!("time[{}]", panel.time_label(t)),
            Term::Covariate(k) => panel.covariate_names()[k].clone(),
            Term::Event(l) => format!("tau[{l}]"),
            Term::Treated => "treated".to_string(),
            Term::CohortEvent(g, l) => format!("tau[{},{l}]", panel.time_label(g)),
        }
    }

    /// Parse `tau=5`, `tau[5]`, `treated` or `tau[1975,5]`.
    pub fn parse(panel: &Panel, s: &str) -> Result<Term> {
        let s = s.trim();
        if s == "treated" {
            return Ok(Term::Treated);
        }
        let inner = s
            .strip_prefix("tau=")
            .or_else(|| s.strip_prefix("tau[").and_then(|r| r.strip_suffix(']')))
            .ok_or_else(|| Error::validation(format!("unrecognized coefficient {s:?}")))?;
        let bad = || Error::validation(format!("unrecognized coefficient {s:?}"));
        match inner.split_once(',') {
            None => Ok(Term::Event(inner.trim().parse().map_err(|_| bad())?)),
            Some((g, l)) => {
                let g: i64 = g.trim().parse().map_err(|_| bad())?;
                let g = panel.time_index(g).ok_or_else(bad)?;
                Ok(Term::CohortEvent(g, l.trim().parse().map_err(|_| bad())?))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedTerm {
    pub name: String,
    /// Retained columns whose combination reproduces the dropped one.
    pub witness: Vec<(String, f64)>,
}

/// Solved TWFE regression.
#[derive(Clone, Debug)]
pub struct TwfeFit {
    spec: TwfeSpec,
    method: FitMethod,
    terms: Vec<Term>,
    names: Vec<String>,
    rows: Vec<ObsId>,
    n_obs: usize,
    /// Values of every treatment term per row: which term (if any) is 1.
    row_treatment: Vec<Option<usize>>,
    factored: Vec<usize>,
    qr: ColumnQr,
    coefficients: Vec<Option<f64>>,
    dropped: Vec<DroppedTerm>,
    design: DMatrix<f64>,
    y: DVector<f64>,
}

/// Relative time after optional binning into `[a, b]`; `None` when the
/// observation carries no treatment term.
fn binned_lag(spec: &TwfeSpec, r: i64) -> Option<i64> {
    match spec.horizon {
        None => Some(r),
        Some((a, b)) => {
            if (a..=b).contains(&r) {
                Some(r)
            } else if spec.bin_endpoints {
                Some(r.clamp(a, b))
            } else {
                None
            }
        }
    }
}

fn treatment_term(spec: &TwfeSpec, g: Cohort, t: usize) -> Option<Term> {
    let gi = g.index()?;
    let r = t as i64 - gi as i64;
    match spec.kind {
        TwfeKind::Static => (r >= 0).then_some(Term::Treated),
        TwfeKind::Dynamic => binned_lag(spec, r).filter(|l| *l != -1).map(Term::Event),
        TwfeKind::InteractionWeighted => binned_lag(spec, r).filter(|l| *l != -1).map(|l| Term::CohortEvent(gi, l)),
    }
}

/// Two-way demeaning of the columns of `m` by alternating projections.
fn demean_two_way(m: &mut DMatrix<f64>, unit_of: &[usize], time_of: &[usize], n_u: usize, n_t: usize) {
    let rows = m.nrows();
    let mut u_count = vec![0usize; n_u];
    let mut t_count = vec![0usize; n_t];
    for r in 0..rows {
        u_count[unit_of[r]] += 1;
        t_count[time_of[r]] += 1;
    }
    for mut col in m.column_iter_mut() {
        let scale = col.amax().max(1.0);
        for _ in 0..10_000 {
            let mut change: f64 = 0.0;
            for (groups, counts, n) in [(unit_of, &u_count, n_u), (time_of, &t_count, n_t)] {
                let mut sums = vec![0.0; n];
                for r in 0..rows {
                    sums[groups[r]] += col[r];
                }
                for r in 0..rows {
                    let mean = sums[groups[r]] / counts[groups[r]] as f64;
                    col[r] -= mean;
                    change = change.max(mean.abs());
                }
            }
            if change <= 1e-12 * scale {
                break;
            }
        }
    }
}

/// Fit a TWFE regression over all observed cells.
pub fn fit_twfe(panel: &Panel, spec: &TwfeSpec) -> Result<TwfeFit> {
    let rows: Vec<ObsId> = panel.observed_ids().collect();
    let n_t = panel.n_times();
    let mut terms: Vec<Term> = Vec::new();
    let units_present: BTreeSet<usize> = rows.iter().map(|&o| panel.unit_of(o)).collect();
    let times_present: BTreeSet<usize> = rows.iter().map(|&o| panel.time_of(o)).collect();
    terms.extend(units_present.iter().map(|&u| Term::Unit(u)));
    terms.extend(times_present.iter().skip(1).map(|&t| Term::Time(t)));
    for name in &spec.covariates {
        let k = panel
            .covariate_index(name)
            .ok_or_else(|| Error::validation(format!("unknown covariate {name:?}")))?;
        terms.push(Term::Covariate(k));
    }
    let treatment_terms: BTreeSet<Term> = rows
        .iter()
        .filter_map(|&o| treatment_term(spec, panel.cohort(panel.unit_of(o)), panel.time_of(o)))
        .collect();
    if treatment_terms.is_empty() {
        return Err(Error::validation("no treatment indicator varies in this panel"));
    }
    terms.extend(treatment_terms.iter().copied());
    let names: Vec<String> = terms.iter().map(|t| t.name(panel)).collect();

    let n_rows = rows.len();
    let index_of = |term: Term| terms.iter().position(|t| *t == term);
    let mut row_treatment = Vec::with_capacity(n_rows);
    let mut full = DMatrix::zeros(n_rows, terms.len());
    for (r, &o) in rows.iter().enumerate() {
        let (u, t) = (panel.unit_of(o), panel.time_of(o));
        full[(r, index_of(Term::Unit(u)).unwrap())] = 1.0;
        if let Some(j) = index_of(Term::Time(t)) {
            full[(r, j)] = 1.0;
        }
        for (j, term) in terms.iter().enumerate() {
            if let Term::Covariate(k) = term {
                full[(r, j)] = panel.covariate(o, *k);
            }
        }
        let tt = treatment_term(spec, panel.cohort(u), t).and_then(index_of);
        if let Some(j) = tt {
            full[(r, j)] = 1.0;
        }
        row_treatment.push(tt);
    }
    let y = DVector::from_iterator(n_rows, rows.iter().map(|&o| panel.outcome(o)));

    let method = match spec.method {
        FitMethod::Auto if n_rows * terms.len() <= DENSE_LIMIT => FitMethod::Dense,
        FitMethod::Auto => FitMethod::Within,
        m => m,
    };
    let fe_count = terms.iter().filter(|t| t.is_fixed_effect()).count();
    let (factored, design, y_fit): (Vec<usize>, DMatrix<f64>, DVector<f64>) = match method {
        FitMethod::Within => {
            let cols: Vec<usize> = (fe_count..terms.len()).collect();
            let mut block = full.columns(fe_count, terms.len() - fe_count).into_owned();
            let unit_of: Vec<usize> = rows.iter().map(|&o| panel.unit_of(o)).collect();
            let time_of: Vec<usize> = rows.iter().map(|&o| panel.time_of(o)).collect();
            let mut yy = DMatrix::from_column_slice(n_rows, 1, y.as_slice());
            demean_two_way(&mut block, &unit_of, &time_of, panel.n_units(), n_t);
            demean_two_way(&mut yy, &unit_of, &time_of, panel.n_units(), n_t);
            (cols, block, yy.column(0).into_owned())
        }
        _ => ((0..terms.len()).collect(), full, y.clone()),
    };
    let qr = ColumnQr::factor(&design);
    let beta = qr.solve(&y_fit);
    let mut coefficients = vec![None; terms.len()];
    for (pos, &col) in qr.kept().iter().enumerate() {
        coefficients[factored[col]] = Some(beta[pos]);
    }
    let dropped = qr
        .dropped()
        .iter()
        .map(|d| DroppedTerm {
            name: names[factored[d.column]].clone(),
            witness: d.witness.iter().map(|(c, v)| (names[factored[*c]].clone(), *v)).collect(),
        })
        .collect();
    Ok(TwfeFit {
        spec: spec.clone(),
        method,
        terms,
        names,
        rows,
        n_obs: panel.n_obs(),
        row_treatment,
        factored,
        qr,
        coefficients,
        dropped,
        design,
        y: y_fit,
    })
}

impl TwfeFit {
    pub fn spec(&self) -> &TwfeSpec {
        &self.spec
    }

    /// Method actually used (`Auto` resolved).
    pub fn method(&self) -> FitMethod {
        self.method
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Observations entering the regression, in row order.
    pub fn rows(&self) -> &[ObsId] {
        &self.rows
    }

    pub fn term_index(&self, term: Term) -> Option<usize> {
        self.terms.iter().position(|t| *t == term)
    }

    /// Coefficient of a retained term. Fixed effects are absorbed (and
    /// reported as `None`) when the within method is used.
    pub fn coefficient(&self, term: Term) -> Option<f64> {
        self.term_index(term).and_then(|j| self.coefficients[j])
    }

    pub fn coefficients(&self) -> &[Option<f64>] {
        &self.coefficients
    }

    pub fn dropped(&self) -> &[DroppedTerm] {
        &self.dropped
    }

    pub fn condition_estimate(&self) -> f64 {
        self.qr.condition_estimate()
    }

    /// Treatment terms in column order.
    pub fn treatment_terms(&self) -> Vec<Term> {
        self.terms.iter().copied().filter(|t| t.is_treatment()).collect()
    }

    /// Relative-time coefficients of a dynamic fit, in lag order.
    pub fn event_coefficients(&self) -> Vec<(i64, Option<f64>)> {
        self.terms
            .iter()
            .zip(&self.coefficients)
            .filter_map(|(t, c)| match t {
                Term::Event(l) => Some((*l, *c)),
                _ => None,
            })
            .collect()
    }

    fn retained_position(&self, term: Term) -> Result<usize> {
        let j = self
            .term_index(term)
            .ok_or_else(|| Error::MissingCoefficient(format!("{term:?}")))?;
        let col = self.factored.iter().position(|&c| c == j);
        col.and_then(|c| self.qr.position(c)).ok_or_else(|| {
            let witness = self
                .dropped
                .iter()
                .find(|d| d.name == self.names[j])
                .map(|d| {
                    d.witness.iter().map(|(n, v)| format!("{v:+.6} {n}")).collect::<Vec<_>>().join(" ")
                })
                .unwrap_or_else(|| "absorbed by fixed effects".to_string());
            Error::Unidentified { term: self.names[j].clone(), witness }
        })
    }

    /// Estimator row over regression rows: `coefficient = h . y`.
    pub fn estimator_row(&self, term: Term) -> Result<DVector<f64>> {
        let k = self.retained_position(term)?;
        Ok(self.qr.estimator_row(k))
    }

    /// Hat-matrix diagonal over regression rows; dense fits only.
    pub fn leverage(&self) -> Option<Vec<f64>> {
        (self.method == FitMethod::Dense).then(|| self.qr.leverage())
    }

    /// Residuals of the factored problem.
    pub fn residuals(&self) -> DVector<f64> {
        let beta = self.qr.solve(&self.y);
        let kept = self.design.select_columns(self.qr.kept());
        &self.y - kept * beta
    }

    /// Largest `|x_j . e|` over retained columns (normal-equation check).
    pub fn normal_equation_residual(&self) -> f64 {
        let e = self.residuals();
        self.qr
            .kept()
            .iter()
            .map(|&c| self.design.column(c).dot(&e).abs())
            .fold(0.0, f64::max)
    }

    /// Raw values of every retained regressor, indexed by observation id
    /// (zero on unobserved cells).
    pub fn design_columns(&self, panel: &Panel) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (j, term) in self.terms.iter().enumerate() {
            if self.coefficients[j].is_none() {
                continue;
            }
            let mut col = vec![0.0; self.n_obs];
            for (r, &o) in self.rows.iter().enumerate() {
                col[o] = match *term {
                    Term::Unit(u) => (panel.unit_of(o) == u) as u8 as f64,
                    Term::Time(t) => (panel.time_of(o) == t) as u8 as f64,
                    Term::Covariate(k) => panel.covariate(o, k),
                    _ => (self.row_treatment[r] == Some(j)) as u8 as f64,
                };
            }
            out.push((self.names[j].clone(), col));
        }
        out
    }

    /// Row of the design corresponding to an observation.
    pub fn row_of(&self, obs: ObsId) -> Option<usize> {
        self.rows.binary_search(&obs).ok()
    }

    /// Whether the target term's indicator is 1 on a regression row.
    pub fn indicator(&self, row: usize, term: Term) -> bool {
        self.row_treatment[row].map(|j| self.terms[j]) == Some(term)
    }

    /// Implied-weights decomposition of one treatment coefficient.
    ///
    /// Treatment component: rows where the target indicator is 1, weight `h`.
    /// Control component: every other row, weight `-h`.
    pub fn implied_weights(&self, panel: &Panel, term: Term) -> Result<WeightedContrast> {
        if !term.is_treatment() {
            return Err(Error::validation("implied weights are defined for treatment coefficients"));
        }
        let h = self.estimator_row(term)?;
        let mut w = vec![0.0; self.n_obs];
        let mut comp = vec![Component::Unused; self.n_obs];
        for (r, &o) in self.rows.iter().enumerate() {
            if self.indicator(r, term) {
                w[o] = h[r];
                comp[o] = Component::Treatment;
            } else {
                w[o] = -h[r];
                comp[o] = Component::Control;
            }
        }
        let kind = match self.spec.kind {
            TwfeKind::Dynamic => "twfe-dynamic",
            TwfeKind::Static => "twfe-static",
            TwfeKind::InteractionWeighted => "twfe-interaction-weighted",
        };
        Ok(WeightedContrast::new(
            panel,
            w,
            comp,
            Provenance {
                solver: kind.to_string(),
                estimand: term.name(panel),
                assumptions: String::new(),
                adjustment: self.names.iter().filter(|n| !n.starts_with("tau")).cloned().collect(),
            },
        ))
    }
}

/// Coefficient corrected for a general reference regime:
/// `tau_{ty - t1} - sum_t p_t tau_{ty - t}`, with `tau` for never-treated and
/// for the omitted lag `-1` equal to zero.
pub fn twfe_general_estimate(fit: &TwfeFit, estimand: &EstimandSpec) -> Result<f64> {
    let lookup = |l: i64| -> Result<f64> {
        if l == -1 {
            return Ok(0.0);
        }
        fit.coefficient(Term::Event(l))
            .ok_or_else(|| Error::MissingCoefficient(format!("tau[{l}]")))
    };
    let mut est = lookup(estimand.lag())?;
    for &(c, p) in estimand.reference.support() {
        if let Cohort::At(t) = c {
            est -= p * lookup(estimand.ty as i64 - t as i64)?;
        }
    }
    Ok(est)
}
