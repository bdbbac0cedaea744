//! Acceptance runner: one PASS/FAIL/SKIP line per primary criterion.
//! Exits non-zero when any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use eventlab_core::diagnostics::{ess, kish_ess, smd_table, twfe_influence, SmdColumn};
use eventlab_core::inference::{bootstrap_estimator, canonical_estimand, cluster_bootstrap};
use eventlab_core::sim::{confounded_draw, random_panel, toy_panel, RandomPanelSpec, CONFOUNDED_ATE};
use eventlab_core::*;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

/// Random panel with 4-20 units, 4-12 periods and 1-3 covariates.
fn desk_panel(seed: u64) -> Panel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = RandomPanelSpec {
        units: rng.gen_range(4..=20),
        times: rng.gen_range(4..=12),
        covariates: rng.gen_range(1..=3),
        never_share: 0.25,
    };
    random_panel(&mut rng, spec)
}

fn dynamic_with_covariates(p: &Panel) -> TwfeFit {
    fit_twfe(p, &TwfeSpec { covariates: p.covariate_names().to_vec(), ..TwfeSpec::dynamic() }).expect("fit")
}

fn reconstruction() -> Outcome {
    let start = Instant::now();
    let (mut terms, mut worst, mut oracle_fits, mut oracle_worst) = (0usize, 0.0f64, 0usize, 0.0f64);
    let mut failures = Vec::new();
    for seed in 0..200 {
        let p = desk_panel(seed);
        let fit = dynamic_with_covariates(&p);
        for term in fit.treatment_terms() {
            let Some(coef) = fit.coefficient(term) else { continue };
            let c = fit.implied_weights(&p, term).expect("implied weights");
            let err = (c.estimate - coef)
                .abs()
                .max((c.component_sum(Component::Treatment) - 1.0).abs())
                .max((c.component_sum(Component::Control) - 1.0).abs());
            worst = worst.max(err);
            terms += 1;
            if err > 1e-10 {
                failures.push(format!("seed {seed} {term:?}: {err:.2e}"));
            }
        }
        // Independent dense solve when the design has full rank.
        if fit.dropped().is_empty() {
            let (_, x, rows) = common::dense_dynamic_design(&p);
            let y = DVector::from_iterator(rows.len(), rows.iter().map(|&o| p.outcome(o)));
            if let Some(beta) = common::normal_equations(&x, &y) {
                oracle_fits += 1;
                for (j, b) in beta.iter().enumerate() {
                    let rel = (fit.coefficients()[j].unwrap() - b).abs() / b.abs().max(1.0);
                    oracle_worst = oracle_worst.max(rel);
                    if rel > 1e-8 {
                        failures.push(format!("seed {seed} column {j}: oracle relative error {rel:.2e}"));
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        failures.push(format!("runtime {secs:.1}s"));
    }
    check(
        failures.is_empty(),
        format!(
            "{terms} coefficients, max error {worst:.1e} (tol 1e-10); normal-equation oracle on {oracle_fits} fits, \
             max relative error {oracle_worst:.1e}; {secs:.1}s{}",
            first(&failures)
        ),
    )
}

fn first(failures: &[String]) -> String {
    failures.first().map_or(String::new(), |f| format!("; first failure: {f} ({} total)", failures.len()))
}

fn exact_balance() -> Outcome {
    let (mut checked, mut worst) = (0usize, 0.0f64);
    let mut failures = Vec::new();
    for seed in 0..200 {
        let p = desk_panel(seed);
        let fit = dynamic_with_covariates(&p);
        let cols = fit.design_columns(&p);
        for term in fit.treatment_terms() {
            if fit.coefficient(term).is_none() {
                continue;
            }
            let c = fit.implied_weights(&p, term).expect("implied weights");
            let own = term.name(&p);
            let smd_cols: Vec<SmdColumn> = cols
                .iter()
                .filter(|(n, _)| *n != own)
                .map(|(name, values)| SmdColumn { name: name.clone(), values: values.clone() })
                .collect();
            for row in smd_table(&c, &smd_cols) {
                let Some(after) = row.after else { continue };
                checked += 1;
                worst = worst.max(after.abs());
                if after.abs() > 1e-8 {
                    failures.push(format!("seed {seed} {own} on {}: {after:.2e}", row.name));
                }
            }
        }
    }
    check(failures.is_empty(), format!("{checked} column SMDs, max |SMD| {worst:.1e} (tol 1e-8){}", first(&failures)))
}

fn twfe_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut checked, mut worst) = (0usize, 0.0f64);
    let mut failures = Vec::new();
    let options = BalanceOptions { homogeneous_effects: true, ..Default::default() };
    for panel_no in 0..50 {
        let spec = RandomPanelSpec {
            units: rng.gen_range(5..=15),
            times: rng.gen_range(4..=9),
            covariates: 0,
            never_share: 0.3,
        };
        let p = random_panel(&mut rng, spec);
        let fit = fit_twfe(&p, &TwfeSpec::dynamic()).expect("fit");
        for (l, coef) in fit.event_coefficients() {
            let Some(coef) = coef else { continue };
            let Ok(e) = canonical_estimand(&p, l, &TargetPopulation::TwfeImplied) else { continue };
            let a = AssumptionSet::full(l).with_adjustment(AdjustmentSet::parse("unit,time"));
            match robust_weighting(&p, &e, &a, &options) {
                Ok(r) => {
                    let err = (r.contrast.estimate - coef).abs();
                    worst = worst.max(err);
                    checked += 1;
                    if err > 1e-6 {
                        failures.push(format!("panel {panel_no} lag {l}: {err:.2e}"));
                    }
                }
                Err(err) => failures.push(format!("panel {panel_no} lag {l}: {err}")),
            }
        }
    }
    check(
        failures.is_empty() && checked > 0,
        format!("{checked} lags on 50 panels, max |weighting - TWFE| {worst:.1e} (tol 1e-6){}", first(&failures)),
    )
}

fn qp_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut failures = Vec::new();
    let (mut eq_worst, mut kkt_worst, mut slack_worst) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for case in 0..200 {
        let (p, _) = common::random_balance_problem(&mut rng);
        let sol = solve_balance(&p);
        if !sol.is_optimal() {
            failures.push(format!("equality case {case}: {:?}", sol.status));
            continue;
        }
        let a = p.basis.clone().insert_column(p.k(), 1.0);
        let mut b = p.targets.clone();
        b.push(1.0);
        let want = common::kkt_closed_form(&a, &DVector::from_vec(b));
        let err = sol.weights.iter().zip(want.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        eq_worst = eq_worst.max(err);
        if err > 1e-9 {
            failures.push(format!("equality case {case}: {err:.2e}"));
        }
    }
    for case in 0..200 {
        let (mut p, _) = common::random_balance_problem(&mut rng);
        p.tolerance = (0..p.k()).map(|_| if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..0.2) }).collect();
        let p = p.with_nonneg(true);
        let sol = solve_balance(&p);
        if !sol.is_optimal() {
            failures.push(format!("nonneg case {case}: {:?}", sol.status));
            continue;
        }
        kkt_worst = kkt_worst.max(sol.kkt_residual);
        for j in 0..p.k() {
            let achieved: f64 = (0..p.n()).map(|i| p.basis[(i, j)] * sol.weights[i]).sum();
            let slack = (achieved - p.targets[j]).abs() - p.tolerance[j];
            slack_worst = slack_worst.max(slack);
            if slack > 1e-8 {
                failures.push(format!("nonneg case {case} constraint {j}: exceeds delta by {slack:.2e}"));
            }
        }
        if sol.kkt_residual > 1e-8 {
            failures.push(format!("nonneg case {case}: KKT residual {:.2e}", sol.kkt_residual));
        }
        if sol.weights.iter().any(|w| *w < -1e-12) {
            failures.push(format!("nonneg case {case}: negative weight"));
        }
    }
    check(
        failures.is_empty(),
        format!(
            "200 equality problems max deviation {eq_worst:.1e} (tol 1e-9); 200 non-negative problems max KKT \
             {kkt_worst:.1e} (tol 1e-8), max excess over delta {:.1e} (tol 1e-8){}",
            slack_worst.max(0.0),
            first(&failures)
        ),
    )
}

fn classification() -> Outcome {
    let mut failures = Vec::new();
    let mut tags_checked = 0usize;
    for seed in 0..1000 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = common::small_panel(&mut rng);
        let ty = rng.gen_range(0..p.n_times());
        let t1 = rng.gen_range(0..=ty);
        let e = EstimandSpec::new(&p, t1, ty, Reference::never(), TargetPopulation::Study).expect("estimand");
        let a = common::random_assumptions(&mut rng, e.lag());
        for tag in classify(&p, &e, &a) {
            let obs = p.obs(tag.unit, tag.time);
            let want = if p.is_observed(obs) {
                common::table_predicate(p.cohort(tag.unit), tag.time, e.t1, e.ty, &a)
            } else {
                (Group::Excluded, Role::None)
            };
            tags_checked += 1;
            if (tag.group, tag.role) != want {
                failures.push(format!("seed {seed} unit {} time {}", tag.unit, tag.time));
            }
        }
    }
    let toy = toy_panel();
    let e = EstimandSpec::from_labels(&toy, 2002, 2003, &[], TargetPopulation::Study).expect("toy estimand");
    let tags = classify(&toy, &e, &AssumptionSet::base());
    let used: Vec<_> = tags.iter().filter(|t| t.is_used()).collect();
    let toy_ok = used.len() == 6
        && used.iter().all(|t| toy.time_label(t.time) == 2003 && t.group == Group::IdealExperiment)
        && group_counts(&tags)[&Group::IdealExperiment] == (5, 1);
    if !toy_ok {
        failures.push("toy panel tagging".into());
    }
    check(
        failures.is_empty(),
        format!("{tags_checked} tags on 1000 panels match the predicate table; toy panel uses the 2003 column only{}", first(&failures)),
    )
}

fn diagnostics_formulas() -> Outcome {
    let mut failures = Vec::new();
    for n in 1..=1000usize {
        let e = kish_ess(vec![1.0 / n as f64; n]);
        if (e - n as f64).abs() > 1e-9 * n as f64 {
            failures.push(format!("ESS of {n} equal weights = {e}"));
        }
    }
    let mut share_worst = 0.0f64;
    for seed in 0..200 {
        let p = desk_panel(1000 + seed);
        let fit = dynamic_with_covariates(&p);
        for term in fit.treatment_terms() {
            let Term::Event(l) = term else { continue };
            if fit.coefficient(term).is_none() || l < 0 {
                continue;
            }
            let Ok(e) = canonical_estimand(&p, l, &TargetPopulation::Study) else { continue };
            let c = fit.implied_weights(&p, term).expect("implied weights");
            let tags = classify(&p, &e, &AssumptionSet::full(l));
            let total: f64 = ess(&c, &tags).iter().map(|r| r.info_share).sum();
            share_worst = share_worst.max((total - 1.0).abs());
        }
    }
    if share_worst > 1e-12 {
        failures.push(format!("p_info sum off by {share_worst:.2e}"));
    }
    let (mut influence_checked, mut influence_worst) = (0usize, 0.0f64);
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let p = random_panel(&mut rng, RandomPanelSpec { units: 6, times: 5, covariates: 1, never_share: 0.3 });
        let fit = dynamic_with_covariates(&p);
        for term in fit.treatment_terms() {
            if fit.coefficient(term).is_none() {
                continue;
            }
            let fast = twfe_influence(&p, &fit, term, InfluenceMode::Fast).expect("fast influence");
            let refit = twfe_influence(&p, &fit, term, InfluenceMode::Refit).expect("refit influence");
            for (a, b) in fast.iter().zip(&refit) {
                match (a.change, b.change) {
                    (Some(x), Some(y)) => {
                        influence_checked += 1;
                        influence_worst = influence_worst.max((x - y).abs());
                        if (x - y).abs() > 1e-8 {
                            failures.push(format!("seed {seed} {term:?} obs {}: {x} vs {y}", a.obs));
                        }
                    }
                    (None, None) => {}
                    other => failures.push(format!("seed {seed} obs {}: {other:?}", a.obs)),
                }
            }
        }
    }
    check(
        failures.is_empty(),
        format!(
            "ESS of n equal weights = n for n <= 1000; p_info sums within {share_worst:.1e} (tol 1e-12); \
             {influence_checked} leave-one-out changes, max |fast - refit| {influence_worst:.1e} (tol 1e-8){}",
            first(&failures)
        ),
    )
}

struct McTally {
    estimates: Vec<f64>,
    covered: usize,
    failed: usize,
}

impl McTally {
    fn new() -> Self {
        McTally { estimates: Vec::new(), covered: 0, failed: 0 }
    }

    fn record(&mut self, boot: Result<BootstrapResult>) {
        match boot {
            Ok(b) => {
                self.estimates.push(b.estimate);
                if b.ci_lower <= CONFOUNDED_ATE && CONFOUNDED_ATE <= b.ci_upper {
                    self.covered += 1;
                }
            }
            Err(_) => self.failed += 1,
        }
    }

    /// (bias, MC standard error, coverage).
    fn summary(&self) -> (f64, f64, f64) {
        let n = self.estimates.len() as f64;
        let mean = self.estimates.iter().sum::<f64>() / n;
        let var = self.estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean - CONFOUNDED_ATE, (var / n).sqrt(), self.covered as f64 / n)
    }

    fn verdict(&self, name: &str, failures: &mut Vec<String>) -> String {
        let (bias, mcse, coverage) = self.summary();
        if self.failed > 0 {
            failures.push(format!("{name}: {} replicates failed", self.failed));
        }
        if bias.abs() > 3.0 * mcse {
            failures.push(format!("{name}: |bias| {:.4} > 3 MC-SE {:.4}", bias.abs(), 3.0 * mcse));
        }
        if !(0.90..=0.98).contains(&coverage) {
            failures.push(format!("{name}: coverage {:.1}%", 100.0 * coverage));
        }
        format!("{name} bias {bias:+.4} (3 MC-SE {:.4}), coverage {:.1}%", 3.0 * mcse, 100.0 * coverage)
    }
}

const MC_REPS: u64 = 2000;
const MC_UNITS: usize = 500;
const MC_BOOT: usize = 200;

fn monte_carlo() -> Outcome {
    let start = Instant::now();
    let (mut hajek, mut robust) = (McTally::new(), McTally::new());
    let robust_assumptions = AssumptionSet::base().with_adjustment(AdjustmentSet::parse("x"));
    let robust_estimator = Estimator::Robust { options: BalanceOptions::default() };
    for rep in 0..MC_REPS {
        let mut rng = ChaCha8Rng::seed_from_u64(rep);
        let draw = confounded_draw(&mut rng, MC_UNITS);
        let p = &draw.panel;
        let e = EstimandSpec::new(p, 1, 2, Reference::never(), TargetPopulation::Study).expect("estimand");
        let config = BootstrapConfig::new(MC_BOOT, rep);
        hajek.record(cluster_bootstrap(p, &config, |q, picks| {
            let props = Propensities {
                cohorts: draw.propensities.cohorts.clone(),
                probs: picks.iter().map(|&u| draw.propensities.probs[u].clone()).collect(),
            };
            Ok(hajek_contrast(q, &e, &props)?.estimate)
        }));
        robust.record(bootstrap_estimator(p, &e, &robust_assumptions, &robust_estimator, &config));
    }
    let secs = start.elapsed().as_secs_f64();
    let mut failures = Vec::new();
    let h = hajek.verdict("Hajek", &mut failures);
    let r = robust.verdict("robust", &mut failures);
    if secs >= 600.0 {
        failures.push(format!("runtime {secs:.0}s"));
    }
    check(
        failures.is_empty(),
        format!(
            "{MC_REPS} reps, n = {MC_UNITS}, {MC_BOOT} bootstrap draws each: {h}; {r}; {secs:.0}s{}",
            first(&failures)
        ),
    )
}

fn dataset_goldens() -> Outcome {
    let Some(p) = common::divorce_panel() else {
        return Outcome::Skip(format!("{} not set", io::DIVORCE_ENV));
    };
    let mut checks = common::golden::decomposition_checks(&p);
    checks.extend(common::golden::weighting_checks(&p, false, true));
    let bad: Vec<String> = checks.iter().filter(|c| !c.pass()).map(|c| c.to_string()).collect();
    check(
        bad.is_empty(),
        format!("{} golden values, {} off{}", checks.len(), bad.len(), first(&bad)),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("implied-weights reconstruction", reconstruction),
        ("exact balance after implied weighting", exact_balance),
        ("robust weighting reproduces dynamic TWFE", twfe_equivalence),
        ("balance QP correctness", qp_correctness),
        ("classification oracle", classification),
        ("diagnostics formulas", diagnostics_formulas),
        ("Monte Carlo bias and coverage", monte_carlo),
        ("dataset golden values", dataset_goldens),
    ];
    let mut any_failed = false;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        match outcome {
            Outcome::Pass(d) => println!("PASS {name}: {d}"),
            Outcome::Skip(d) => println!("SKIP {name}: {d}"),
            Outcome::Fail(d) => {
                any_failed = true;
                println!("FAIL {name}: {d}");
            }
        }
    }
    if any_failed {
        std::process::exit(1);
    }
}
