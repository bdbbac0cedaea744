//! Independent oracles and generators shared by the integration tests and
//! the acceptance runner.
#![allow(dead_code)]

use eventlab_core::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Random small panel with arbitrary cohorts (never-treated units optional)
/// and, occasionally, unobserved cells.
pub fn small_panel<R: Rng>(rng: &mut R) -> Panel {
    let n = rng.gen_range(1..7);
    let t_n = rng.gen_range(1..7);
    let cohorts: Vec<Cohort> = (0..n)
        .map(|_| if rng.gen_bool(0.3) { Cohort::Never } else { Cohort::At(rng.gen_range(0..t_n)) })
        .collect();
    let y: Vec<f64> = (0..n * t_n).map(|_| rng.gen()).collect();
    let mut p = Panel::from_dense(
        (0..n).map(|i| format!("s{i}")).collect(),
        (0..t_n as i64).map(|t| 1990 + t).collect(),
        cohorts,
        y,
        vec![],
        vec![],
    )
    .unwrap();
    if rng.gen_bool(0.2) {
        p = p.without_observation(rng.gen_range(0..n * t_n));
    }
    p
}

/// Random assumption set that is valid for lag `l`.
pub fn random_assumptions<R: Rng>(rng: &mut R, l: i64) -> AssumptionSet {
    let invariance = [Invariance::Off, Invariance::PerCohort, Invariance::Strong][rng.gen_range(0..3)];
    let kappa = rng.gen_bool(0.5).then(|| rng.gen_range(0..3));
    let phi = (l >= 1 && rng.gen_bool(0.5)).then(|| rng.gen_range(0..l) as u32);
    let xi = rng.gen_bool(0.5).then(|| (l + 1).max(0) as u32 + rng.gen_range(0..3));
    AssumptionSet { invariance, kappa, phi, xi, adjustment: AdjustmentSet::default() }
}

/// Validity table for a never-treated reference, one predicate per row,
/// evaluated from the relative time `r = t - G` alone.
pub fn table_predicate(
    g: Cohort,
    t: usize,
    t1: usize,
    ty: usize,
    a: &AssumptionSet,
) -> (Group, Role) {
    let l = ty as i64 - t1 as i64;
    let at_ty = t == ty;
    if !at_ty && a.invariance == Invariance::Off {
        return (Group::Excluded, Role::None);
    }
    let base = if at_ty { Group::IdealExperiment } else { Group::TimeInvariance };
    let r = match g {
        Cohort::Never => return (base, Role::Control),
        Cohort::At(g) => t as i64 - g as i64,
    };
    if r == l {
        return (base, Role::Treatment);
    }
    if a.kappa.is_some_and(|k| r < -(k as i64)) {
        return (Group::LimitedAnticipation, Role::Control);
    }
    if a.phi.is_some_and(|phi| 0 <= r && r <= phi as i64) {
        return (Group::DelayedOnset, Role::Control);
    }
    if a.xi.is_some_and(|xi| r >= xi as i64) {
        return (Group::EffectDissipation, Role::Control);
    }
    (Group::Excluded, Role::None)
}

/// Dense regression design built from scratch: unit dummies, time dummies
/// except the first, covariates, then one indicator per observed lag other
/// than -1. Returns column names, the matrix and the observation ids.
pub fn dense_dynamic_design(p: &Panel) -> (Vec<String>, DMatrix<f64>, Vec<ObsId>) {
    let rows: Vec<ObsId> = p.observed_ids().collect();
    let mut lags: Vec<i64> = rows
        .iter()
        .filter_map(|&o| p.cohort(p.unit_of(o)).relative_time(p.time_of(o)))
        .filter(|&l| l != -1)
        .collect();
    lags.sort();
    lags.dedup();
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for u in 0..p.n_units() {
        names.push(format!("unit[{}]", p.unit_id(u)));
        cols.push(rows.iter().map(|&o| (p.unit_of(o) == u) as u8 as f64).collect());
    }
    for t in 1..p.n_times() {
        names.push(format!("time[{}]", p.time_label(t)));
        cols.push(rows.iter().map(|&o| (p.time_of(o) == t) as u8 as f64).collect());
    }
    for (k, name) in p.covariate_names().iter().enumerate() {
        names.push(name.clone());
        cols.push(rows.iter().map(|&o| p.covariate(o, k)).collect());
    }
    for l in &lags {
        names.push(format!("tau[{l}]"));
        cols.push(
            rows.iter()
                .map(|&o| (p.cohort(p.unit_of(o)).relative_time(p.time_of(o)) == Some(*l)) as u8 as f64)
                .collect(),
        );
    }
    let x = DMatrix::from_fn(rows.len(), cols.len(), |i, j| cols[j][i]);
    (names, x, rows)
}

/// Least squares on the given columns through the normal equations.
pub fn normal_equations(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    xtx.cholesky().map(|c| c.solve(&xty))
}

/// Minimum-norm weights with `A'w = b` exactly, from the closed-form KKT
/// system `w = A (A'A)^+ b`.
pub fn kkt_closed_form(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let ata = a.transpose() * a;
    let pinv = ata.pseudo_inverse(1e-12).unwrap();
    a * (pinv * b)
}

/// Standardized mean difference computed directly from its definition.
pub fn smd_by_hand(x_t: &[f64], w_t: &[f64], x_c: &[f64], w_c: &[f64]) -> f64 {
    let wmean = |x: &[f64], w: &[f64]| {
        x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>()
    };
    let var = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
    };
    (wmean(x_t, w_t) - wmean(x_c, w_c)) / ((var(x_t) + var(x_c)) / 2.0).sqrt()
}

pub fn divorce_panel() -> Option<Panel> {
    let path = std::env::var(io::DIVORCE_ENV).ok()?;
    Some(io::load_divorce(path).expect("divorce dataset loads"))
}

/// Random problem whose targets are the mean under a random point of the
/// simplex, so `u` is always feasible.
pub fn random_balance_problem<R: Rng>(rng: &mut R) -> (BalanceProblem, Vec<f64>) {
    let n = rng.gen_range(5..30);
    let k = rng.gen_range(1..5);
    let a = DMatrix::from_fn(n, k, |_, _| rng.gen_range(-2.0..2.0));
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let u: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let targets: Vec<f64> = (0..k).map(|j| (0..n).map(|i| a[(i, j)] * u[i]).sum()).collect();
    let p = BalanceProblem::new((0..n).collect(), a, targets, vec![0.0; k]).unwrap().with_normalize(true);
    (p, u)
}

pub mod golden;
