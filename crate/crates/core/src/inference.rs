//! Unit-cluster bootstrap and the event-study sweep.
//!
//! Replicate `b` draws its units from `ChaCha8Rng::seed_from_u64(seed)` on
//! stream `b`, so a replicate's resample does not depend on scheduling and
//! parallel runs are bit-identical to serial ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimand::{AssumptionSet, EstimandSpec, Invariance, Reference, TargetPopulation};
use crate::linalg::{mean_sd, quantile_sorted};
use crate::panel::Panel;
use crate::pipeline::{resampled_estimand, Estimator};
use crate::twfe::{fit_twfe, Term};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Abort when more than this share of replicates fails.
    #[serde(default = "default_failure_rate")]
    pub max_failure_rate: f64,
}

fn default_replications() -> usize {
    500
}

fn default_failure_rate() -> f64 {
    0.2
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { replications: 500, seed: 0, max_failure_rate: 0.2 }
    }
}

impl BootstrapConfig {
    pub fn new(replications: usize, seed: u64) -> Self {
        BootstrapConfig { replications, seed, ..Default::default() }
    }

    fn validate(&self, panel: &Panel) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::validation("bootstrap needs at least 2 replications"));
        }
        if panel.n_units() < 2 {
            return Err(Error::validation("bootstrap needs at least 2 clusters"));
        }
        Ok(())
    }
}

/// Units drawn with replacement for replicate `b`.
pub fn resample_picks(n_units: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    (0..n_units).map(|_| rng.gen_range(0..n_units)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Successful replicate estimates in replicate order.
    pub replicates: Vec<f64>,
    pub failed: usize,
    pub first_failure: Option<String>,
    pub replications: usize,
    pub seed: u64,
}

fn summarize(estimate: f64, reps: Vec<std::result::Result<f64, String>>, config: &BootstrapConfig) -> Result<BootstrapResult> {
    let total = reps.len();
    let mut ok = Vec::with_capacity(total);
    let mut failed = 0;
    let mut first_failure = None;
    for r in reps {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                failed += 1;
                first_failure.get_or_insert(e);
            }
        }
    }
    if failed as f64 > config.max_failure_rate * total as f64 || ok.len() < 2 {
        return Err(Error::BootstrapFailed {
            failed,
            total,
            first: first_failure.unwrap_or_else(|| "too few successful replicates".into()),
        });
    }
    let se = mean_sd(&ok).1;
    let mut sorted = ok.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        estimate,
        se,
        ci_lower: quantile_sorted(&sorted, 0.025),
        ci_upper: quantile_sorted(&sorted, 0.975),
        replicates: ok,
        failed,
        first_failure,
        replications: total,
        seed: config.seed,
    })
}

/// Cluster bootstrap of a scalar statistic.
///
/// `statistic` receives the resampled panel and the drawn unit indices.
pub fn cluster_bootstrap<F>(panel: &Panel, config: &BootstrapConfig, statistic: F) -> Result<BootstrapResult>
where
    F: Fn(&Panel, &[usize]) -> Result<f64> + Sync,
{
    config.validate(panel)?;
    let identity: Vec<usize> = (0..panel.n_units()).collect();
    let estimate = statistic(panel, &identity)?;
    let reps: Vec<std::result::Result<f64, String>> = (0..config.replications)
        .into_par_iter()
        .map(|b| {
            let picks = resample_picks(panel.n_units(), config.seed, b);
            statistic(&panel.resample_units(&picks), &picks).map_err(|e| e.to_string())
        })
        .collect();
    summarize(estimate, reps, config)
}

/// Bootstrap an estimator for one estimand.
pub fn bootstrap_estimator(
    panel: &Panel,
    estimand: &EstimandSpec,
    assumptions: &AssumptionSet,
    estimator: &Estimator,
    config: &BootstrapConfig,
) -> Result<BootstrapResult> {
    cluster_bootstrap(panel, config, |p, picks| {
        let e = resampled_estimand(estimand, picks)?;
        estimator.estimate(p, &e, assumptions)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub l: i64,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub estimator: String,
    pub information_set: String,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventStudyCurve {
    pub estimator: String,
    pub points: Vec<CurvePoint>,
    pub bootstrap: Option<BootstrapConfig>,
}

impl EventStudyCurve {
    pub fn point(&self, l: i64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.l == l)
    }
}

/// Whether any observed cell sits at relative time `l`.
fn has_treated_at(panel: &Panel, l: i64) -> bool {
    panel
        .observed_ids()
        .any(|o| panel.cohort(panel.unit_of(o)).relative_time(panel.time_of(o)) == Some(l))
}

/// Canonical estimand for lag `l` in the weighting families: the latest
/// period as `ty` for `l >= 0`, the latest period as `t1` for placebo lags.
pub fn canonical_estimand(panel: &Panel, l: i64, target: &TargetPopulation) -> Result<EstimandSpec> {
    let last = panel.n_times() as i64 - 1;
    let (t1, ty) = if l >= 0 { (last - l, last) } else { (last, last + l) };
    if t1 < 0 || ty < 0 {
        return Err(Error::validation(format!("lag {l} does not fit in the panel")));
    }
    EstimandSpec::new(panel, t1 as usize, ty as usize, Reference::never(), target.clone())
}

/// Assumptions for lag `l`: the template with `phi` and `xi` moved into
/// their valid ranges (`phi <= l - 1`, `xi >= l + 1`).
pub fn assumptions_for_lag(template: &AssumptionSet, l: i64) -> AssumptionSet {
    let mut a = template.clone();
    a.phi = template.phi.and_then(|p| (l >= 1).then(|| (p as i64).min(l - 1) as u32));
    a.xi = template.xi.map(|x| (x as i64).max(l + 1).max(0) as u32);
    a
}

/// Per-lag point estimates; an `Err` marks a failure at that lag.
fn curve_estimates(
    panel: &Panel,
    lags: &[i64],
    estimator: &Estimator,
    template: &AssumptionSet,
    target: &TargetPopulation,
) -> Vec<std::result::Result<f64, String>> {
    match estimator {
        Estimator::Twfe { spec } => match fit_twfe(panel, spec) {
            Ok(fit) => lags
                .iter()
                .map(|&l| {
                    if l == -1 {
                        return Ok(0.0);
                    }
                    fit.coefficient(Term::Event(l)).ok_or_else(|| format!("tau[{l}] is not identified"))
                })
                .collect(),
            Err(e) => lags.iter().map(|_| Err(e.to_string())).collect(),
        },
        _ => lags
            .iter()
            .map(|&l| {
                let e = canonical_estimand(panel, l, target).map_err(|e| e.to_string())?;
                estimator.estimate(panel, &e, &assumptions_for_lag(template, l)).map_err(|e| e.to_string())
            })
            .collect(),
    }
}

/// Event-study curve over `lags` for one estimator family.
///
/// TWFE curves report the omitted lag `-1` as 0. Weighting families need
/// time-shift invariance so every lag borrows all cohorts. A lag with no
/// treated observation is returned as a gap with a note.
pub fn event_study(
    panel: &Panel,
    estimator: &Estimator,
    template: &AssumptionSet,
    target: &TargetPopulation,
    lags: std::ops::RangeInclusive<i64>,
    bootstrap: Option<&BootstrapConfig>,
) -> Result<EventStudyCurve> {
    let is_twfe = matches!(estimator, Estimator::Twfe { .. });
    if !is_twfe && template.invariance == Invariance::Off {
        return Err(Error::validation("event-study sweeps for weighting estimators need time-shift invariance"));
    }
    if matches!(target, TargetPopulation::Custom(_)) && bootstrap.is_some() {
        return Err(Error::validation("custom targets are not supported for bootstrapped curves"));
    }
    let lags: Vec<i64> = lags.collect();
    let live: Vec<i64> = lags.iter().copied().filter(|&l| (is_twfe && l == -1) || has_treated_at(panel, l)).collect();
    let point_est = curve_estimates(panel, &live, estimator, template, target);

    let boot: Option<Vec<Vec<std::result::Result<f64, String>>>> = match bootstrap {
        Some(cfg) => {
            cfg.validate(panel)?;
            let reps: Vec<Vec<std::result::Result<f64, String>>> = (0..cfg.replications)
                .into_par_iter()
                .map(|b| {
                    let picks = resample_picks(panel.n_units(), cfg.seed, b);
                    curve_estimates(&panel.resample_units(&picks), &live, estimator, template, target)
                })
                .collect();
            Some(reps)
        }
        None => None,
    };

    let info = |l: i64| {
        if is_twfe {
            "all observations".to_string()
        } else {
            assumptions_for_lag(template, l).describe()
        }
    };
    let mut points = Vec::with_capacity(lags.len());
    for &l in &lags {
        let mut p = CurvePoint {
            l,
            estimate: None,
            se: None,
            lo: None,
            hi: None,
            estimator: estimator.name().to_string(),
            information_set: info(l),
            note: None,
        };
        let Some(k) = live.iter().position(|&x| x == l) else {
            p.note = Some("gap: no treated observations at this lag".into());
            points.push(p);
            continue;
        };
        match &point_est[k] {
            Ok(v) => p.estimate = Some(*v),
            Err(e) => p.note = Some(format!("gap: {e}")),
        }
        if let (Some(est), Some(reps), Some(cfg)) = (p.estimate, &boot, bootstrap) {
            if is_twfe && l == -1 {
                p.se = Some(0.0);
                p.lo = Some(0.0);
                p.hi = Some(0.0);
            } else {
                let col: Vec<std::result::Result<f64, String>> = reps.iter().map(|r| r[k].clone()).collect();
                match summarize(est, col, cfg) {
                    Ok(s) => {
                        p.se = Some(s.se);
                        p.lo = Some(s.ci_lower);
                        p.hi = Some(s.ci_upper);
                    }
                    Err(e) => p.note = Some(e.to_string()),
                }
            }
        }
        points.push(p);
    }
    Ok(EventStudyCurve { estimator: estimator.name().to_string(), points, bootstrap: bootstrap.cloned() })
}
