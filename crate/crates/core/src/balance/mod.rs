//! Minimum-dispersion balancing weights.
//!
//! A [`BalanceProblem`] asks for weights `w` over a sample minimizing `Σ w²`
//! subject to `|Bₖᵀw − targetₖ| ≤ δₖ` for every basis column, with optional
//! normalization and nonnegativity. [`solve_balance`] returns a certified
//! solution or an infeasibility diagnosis.

mod builders;
mod qp;

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::ObsId;

pub use builders::{
    build_expanded_problem, build_general_reference_problem, build_ideal_problem, build_problem,
    estimate_from_solution, BalanceDesign, BalanceOptions, Block, DeltaRule,
};

/// Certification threshold for the KKT residual and constraint slack.
pub const CERT_TOL: f64 = 1e-8;

/// What a basis column represents; drives default tolerances and which
/// columns may be relaxed when diagnosing infeasibility.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnKind {
    /// Block or component mass (normalization); never relaxed.
    Mass,
    Continuous,
    Indicator,
    /// Structural zero-sum restrictions, such as homogeneous lag effects.
    Structural,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BalanceProblem {
    /// Observations receiving weights, one per basis row.
    pub sample: Vec<ObsId>,
    pub names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub basis: DMatrix<f64>,
    pub targets: Vec<f64>,
    pub tolerance: Vec<f64>,
    pub nonneg: bool,
    /// Adds `Σ w = 1` as an exact constraint.
    pub normalize: bool,
    pub max_iter: usize,
}

impl BalanceProblem {
    /// A problem with every column of the given kind and default settings.
    pub fn new(sample: Vec<ObsId>, basis: DMatrix<f64>, targets: Vec<f64>, tolerance: Vec<f64>) -> Result<Self> {
        let k = basis.ncols();
        let p = BalanceProblem {
            sample,
            names: (0..k).map(|j| format!("b{j}")).collect(),
            kinds: vec![ColumnKind::Continuous; k],
            basis,
            targets,
            tolerance,
            nonneg: false,
            normalize: false,
            max_iter: 0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_nonneg(mut self, on: bool) -> Self {
        self.nonneg = on;
        self
    }

    pub fn with_normalize(mut self, on: bool) -> Self {
        self.normalize = on;
        self
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.basis.ncols();
        if self.sample.len() != self.basis.nrows() {
            return Err(Error::validation("balance basis rows must match the sample"));
        }
        if self.sample.is_empty() {
            return Err(Error::EmptyGroup("balance problem has an empty sample".into()));
        }
        if k == 0 && !self.normalize {
            return Err(Error::validation("balance problem needs at least one constraint"));
        }
        if self.targets.len() != k || self.tolerance.len() != k || self.names.len() != k || self.kinds.len() != k {
            return Err(Error::validation("balance targets, tolerances and names must match the basis"));
        }
        if self.tolerance.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::validation("balance tolerances must be finite and non-negative"));
        }
        if self.basis.iter().chain(self.targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("balance basis and targets must be finite"));
        }
        Ok(())
    }

    /// Basis, targets and tolerances with the normalization column appended.
    fn augmented(&self) -> (DMatrix<f64>, Vec<f64>, Vec<f64>, Vec<String>, Vec<ColumnKind>) {
        let mut a = self.basis.clone();
        let mut t = self.targets.clone();
        let mut d = self.tolerance.clone();
        let mut names = self.names.clone();
        let mut kinds = self.kinds.clone();
        if self.normalize {
            let n = a.nrows();
            let k = a.ncols();
            a = a.insert_column(k, 1.0);
            debug_assert_eq!(a.nrows(), n);
            t.push(1.0);
            d.push(0.0);
            names.push("normalize".into());
            kinds.push(ColumnKind::Mass);
        }
        (a, t, d, names, kinds)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

/// Diagnosis of an infeasible balance problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityReport {
    /// Constraint the solver could not add, e.g. `x1 (upper)`.
    pub constraint: String,
    pub violation: f64,
    /// Smallest uniform addition to every relaxable tolerance that makes
    /// the problem feasible, found by bisection.
    pub min_inflation: Option<f64>,
    /// Per-constraint excess over its tolerance at the relaxed solution.
    pub needed_inflation: Vec<(String, f64)>,
}

impl fmt::Display for InfeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "constraint {} cannot be met (violation {:.3e})", self.constraint, self.violation)?;
        if let Some(s) = self.min_inflation {
            write!(f, "; relaxing tolerances by {s:.3e} restores feasibility")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BalanceSolution {
    pub weights: Vec<f64>,
    /// `|Bₖᵀw − targetₖ|` per basis column (normalization excluded).
    pub achieved_imbalance: Vec<f64>,
    pub kkt_residual: f64,
    pub status: SolveStatus,
    /// Signed multiplier per basis column (normalization excluded).
    pub duals: Vec<f64>,
    pub iterations: usize,
    pub infeasibility: Option<InfeasibilityReport>,
}

impl BalanceSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Converts a non-optimal solution into the matching error.
    pub fn into_result(self) -> Result<BalanceSolution> {
        match self.status {
            SolveStatus::Optimal => Ok(self),
            SolveStatus::Infeasible => Err(Error::Infeasible(Box::new(self.infeasibility.unwrap_or(
                InfeasibilityReport {
                    constraint: "unknown".into(),
                    violation: f64::NAN,
                    min_inflation: None,
                    needed_inflation: vec![],
                },
            )))),
            SolveStatus::MaxIterations => Err(Error::NotConverged(format!(
                "balance solver stopped after {} iterations with KKT residual {:.3e}",
                self.iterations, self.kkt_residual
            ))),
        }
    }
}

fn raw_solve(a: &DMatrix<f64>, t: &[f64], d: &[f64], nonneg: bool, max_iter: usize) -> qp::QpOutcome {
    let max_iter = if max_iter == 0 { 50 * (a.nrows() + a.ncols()) + 1000 } else { max_iter };
    qp::Qp::new(a, t, d, nonneg, max_iter).solve()
}

/// Solve a balance problem.
pub fn solve_balance(problem: &BalanceProblem) -> BalanceSolution {
    let (a, t, d, names, kinds) = problem.augmented();
    let out = raw_solve(&a, &t, &d, problem.nonneg, problem.max_iter);
    let k = problem.k();
    let imbalance: Vec<f64> = (0..a.ncols())
        .map(|j| (a.column(j).iter().zip(&out.weights).map(|(x, w)| x * w).sum::<f64>() - t[j]).abs())
        .collect();
    let within = imbalance.iter().zip(&d).all(|(i, d)| *i <= d + CERT_TOL);
    let (status, infeasibility) = match &out.result {
        qp::QpResult::Solved if within && out.kkt_residual <= CERT_TOL => (SolveStatus::Optimal, None),
        qp::QpResult::Solved | qp::QpResult::MaxIterations => (SolveStatus::MaxIterations, None),
        qp::QpResult::Infeasible { column, upper, violation } => {
            let constraint = match column {
                Some(c) => {
                    let side = if d[*c] == 0.0 {
                        ""
                    } else if *upper {
                        " (upper)"
                    } else {
                        " (lower)"
                    };
                    format!("{}{side}", names[*c])
                }
                None => "nonnegativity".to_string(),
            };
            let (min_inflation, needed_inflation) = diagnose(&a, &t, &d, &names, &kinds, problem);
            // Name the balance constraint that needs the most relaxation.
            let constraint = needed_inflation
                .iter()
                .max_by(|x, y| x.1.total_cmp(&y.1))
                .map_or(constraint, |(n, _)| n.clone());
            (
                SolveStatus::Infeasible,
                Some(InfeasibilityReport { constraint, violation: *violation, min_inflation, needed_inflation }),
            )
        }
    };
    BalanceSolution {
        weights: out.weights,
        achieved_imbalance: imbalance[..k].to_vec(),
        kkt_residual: out.kkt_residual,
        status,
        duals: out.duals[..k].to_vec(),
        iterations: out.iterations,
        infeasibility,
    }
}

/// Bisection on a uniform tolerance inflation over the relaxable columns.
fn diagnose(
    a: &DMatrix<f64>,
    t: &[f64],
    d: &[f64],
    names: &[String],
    kinds: &[ColumnKind],
    problem: &BalanceProblem,
) -> (Option<f64>, Vec<(String, f64)>) {
    let relaxable: Vec<bool> = kinds.iter().map(|k| *k != ColumnKind::Mass).collect();
    let feasible = |s: f64| -> Option<Vec<f64>> {
        let dd: Vec<f64> = d.iter().zip(&relaxable).map(|(d, r)| if *r { d + s } else { *d }).collect();
        let out = raw_solve(a, t, &dd, problem.nonneg, problem.max_iter);
        (out.result != qp::QpResult::MaxIterations && !matches!(out.result, qp::QpResult::Infeasible { .. }))
            .then_some(out.weights)
    };
    let scale = t.iter().fold(1e-6_f64, |m, v| m.max(v.abs()));
    let mut hi = 1e-6 * scale;
    let mut found = None;
    for _ in 0..80 {
        if let Some(w) = feasible(hi) {
            found = Some(w);
            break;
        }
        hi *= 2.0;
    }
    let Some(mut best) = found else { return (None, Vec::new()) };
    let mut lo = 0.0;
    for _ in 0..60 {
        if hi - lo <= 1e-10 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match feasible(mid) {
            Some(w) => {
                hi = mid;
                best = w;
            }
            None => lo = mid,
        }
    }
    let needed = (0..a.ncols())
        .filter(|&j| relaxable[j])
        .filter_map(|j| {
            let v = (a.column(j).iter().zip(&best).map(|(x, w)| x * w).sum::<f64>() - t[j]).abs();
            let excess = v - d[j];
            (excess > 1e-12).then(|| (names[j].clone(), excess))
        })
        .collect();
    (Some(hi), needed)
}
