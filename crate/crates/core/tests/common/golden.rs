//! Published reference values for the no-fault divorce panel, estimand
//! ATE_1980(1975, never). Shared by the gated tests and the acceptance runner.

use eventlab_core::diagnostics::{ess, twfe_influence, weight_dispersion};
use eventlab_core::inference::bootstrap_estimator;
use eventlab_core::*;

pub struct Check {
    pub name: String,
    pub got: f64,
    pub want: f64,
    pub tol: f64,
}

impl Check {
    fn new(name: impl Into<String>, got: f64, want: f64, tol: f64) -> Self {
        Check { name: name.into(), got, want, tol }
    }

    pub fn pass(&self) -> bool {
        (self.got - self.want).abs() <= self.tol
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: got {:.4}, want {:.4} +/- {}", self.name, self.got, self.want, self.tol)
    }
}

fn estimand(p: &Panel, target: TargetPopulation) -> EstimandSpec {
    EstimandSpec::from_labels(p, 1975, 1980, &[], target).expect("1975 and 1980 are in the panel")
}

fn find_obs(p: &Panel, unit: &[&str], year: i64) -> Option<ObsId> {
    let u = (0..p.n_units()).find(|&u| unit.contains(&p.unit_id(u)))?;
    Some(p.obs(u, p.time_index(year)?))
}

/// Weight dispersion, group ESS and leave-one-out changes of the dynamic
/// TWFE coefficient at lag 5.
pub fn decomposition_checks(p: &Panel) -> Vec<Check> {
    let fit = fit_twfe(p, &TwfeSpec::dynamic()).expect("dynamic TWFE fits");
    let c = fit.implied_weights(p, Term::Event(5)).expect("lag 5 is retained");
    let tags = classify(p, &estimand(p, TargetPopulation::Study), &AssumptionSet::full(5));
    let mut out = Vec::new();

    let disp = weight_dispersion(&c, &tags);
    let sum_of = |g: &str| disp.iter().find(|r| r.group == g).map_or(f64::NAN, |r| r.sum);
    for (g, want) in [
        ("IdealExperiment", 0.076),
        ("TimeInvariance", 1.641),
        ("LimitedAnticipation", 1.519),
        ("DelayedOnset", 0.522),
        ("EffectDissipation", 0.530),
        ("all", 4.287),
    ] {
        out.push(Check::new(format!("sum|w| {g}"), sum_of(g), want, 0.002));
    }
    let mean_of = |g: &str| disp.iter().find(|r| r.group == g).map_or(f64::NAN, |r| r.mean);
    out.push(Check::new("mean|w| IdealExperiment", mean_of("IdealExperiment"), 0.011, 0.001));
    out.push(Check::new("mean|w| TimeInvariance", mean_of("TimeInvariance"), 0.008, 0.001));

    let rows = ess(&c, &tags);
    for (g, n, e, share) in [
        (Group::IdealExperiment, 7, 3.346, 0.007),
        (Group::TimeInvariance, 194, 88.382, 0.179),
        (Group::LimitedAnticipation, 345, 75.937, 0.153),
        (Group::DelayedOnset, 180, 106.336, 0.215),
        (Group::EffectDissipation, 627, 221.123, 0.447),
    ] {
        let r = rows.iter().find(|r| r.group == g);
        let name = g.name();
        out.push(Check::new(format!("n {name}"), r.map_or(f64::NAN, |r| r.n as f64), n as f64, 0.0));
        out.push(Check::new(format!("ESS {name}"), r.map_or(f64::NAN, |r| r.ess), e, 0.002));
        out.push(Check::new(format!("p_info {name}"), r.map_or(f64::NAN, |r| r.info_share), share, 0.001));
    }
    out.push(Check::new("n total", rows.iter().map(|r| r.n).sum::<usize>() as f64, 1353.0, 0.0));

    let infl = twfe_influence(p, &fit, Term::Event(5), InfluenceMode::Fast).expect("influence");
    let change = |unit: &[&str], year| {
        find_obs(p, unit, year)
            .and_then(|o| infl.iter().find(|i| i.obs == o))
            .and_then(|i| i.change)
            .unwrap_or(f64::NAN)
    };
    out.push(Check::new("influence CA 1972", change(&["CA", "6", "06"], 1972), -0.381, 0.002));
    out.push(Check::new("influence RI 1977", change(&["RI", "44"], 1977), 0.227, 0.002));
    out
}

/// Information-set rows: time invariance plus no anticipation, then adding
/// delayed onset, then effect dissipation.
fn information_sets() -> [(&'static str, AssumptionSet); 3] {
    let base = AssumptionSet { invariance: Invariance::Strong, kappa: Some(0), ..Default::default() };
    let onset = AssumptionSet { phi: Some(4), ..base.clone() };
    let dissipation = AssumptionSet { xi: Some(6), ..onset.clone() };
    [("no-anticipation", base), ("+onset", onset), ("+dissipation", dissipation)]
}

/// Adjustment columns: unit and year indicators with unrestricted weights
/// (the regression-equivalent setup), unit indicators with non-negative
/// weights, and baseline covariates with non-negative weights.
fn adjustment_columns(p: &Panel) -> [(&'static str, AdjustmentSet, BalanceOptions); 3] {
    let covs = p.covariate_names().join(",");
    [
        ("{year,state} R", AdjustmentSet::parse("unit,time"), BalanceOptions { homogeneous_effects: true, ..Default::default() }),
        ("{state} R>=0", AdjustmentSet::parse("unit"), BalanceOptions { nonneg: true, ..Default::default() }),
        ("{X} R>=0", AdjustmentSet::parse(&covs), BalanceOptions { nonneg: true, ..Default::default() }),
    ]
}

/// Robust weighting estimates (and optionally bootstrap SEs, 500 replicates)
/// for every information set and adjustment column.
pub fn weighting_checks(p: &Panel, treated_target: bool, with_se: bool) -> Vec<Check> {
    let (target, label, estimates, ses): (_, _, [[f64; 3]; 3], [[f64; 3]; 3]) = if treated_target {
        (
            TargetPopulation::Treated,
            "treated",
            [[-2.502, -1.763, 3.428], [-2.146, -2.598, 1.862], [-1.342, 5.781, 6.923]],
            [[4.138, 1.837, 2.708], [2.981, 1.657, 2.415], [3.216, 1.428, 1.799]],
        )
    } else {
        (
            TargetPopulation::TwfeImplied,
            "twfe-implied",
            [[-2.205, -1.595, 3.318], [-2.012, -2.385, 1.777], [-1.327, 5.913, 6.862]],
            [[4.010, 1.820, 2.665], [3.006, 1.614, 2.380], [3.221, 1.425, 1.774]],
        )
    };
    let e = estimand(p, target);
    let mut out = Vec::new();
    for (i, (row, info)) in information_sets().into_iter().enumerate() {
        for (j, (col, adj, opts)) in adjustment_columns(p).into_iter().enumerate() {
            let a = AssumptionSet { adjustment: adj, ..info.clone() };
            let name = format!("{label} {row} {col}");
            let got = robust_weighting(p, &e, &a, &opts).map_or(f64::NAN, |f| f.contrast.estimate);
            out.push(Check::new(format!("estimate {name}"), got, estimates[i][j], 0.01));
            if with_se {
                let est = Estimator::Robust { options: opts };
                let se = bootstrap_estimator(p, &e, &a, &est, &BootstrapConfig::new(500, 2024)).map_or(f64::NAN, |b| b.se);
                out.push(Check::new(format!("bootstrap SE {name}"), se, ses[i][j], 0.2 * ses[i][j]));
            }
        }
    }
    out
}
