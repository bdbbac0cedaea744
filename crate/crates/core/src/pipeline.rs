//! End-to-end estimators: classify, build, solve and package.

use serde::{Deserialize, Serialize};

use crate::balance::{build_problem, estimate_from_solution, solve_balance, BalanceDesign, BalanceOptions, BalanceSolution};
use crate::classify::{classify, ObservationTag};
use crate::contrast::{ideal_contrast, WeightedContrast};
use crate::error::{Error, Result};
use crate::estimand::{AssumptionSet, EstimandSpec, TargetPopulation};
use crate::panel::Panel;
use crate::twfe::{fit_twfe, twfe_general_estimate, TwfeSpec};

/// Output of the robust weighting estimator.
#[derive(Clone, Debug)]
pub struct RobustFit {
    pub tags: Vec<ObservationTag>,
    pub design: BalanceDesign,
    pub solution: BalanceSolution,
    pub contrast: WeightedContrast,
}

/// Balancing-weights estimator over the observations licensed by `assumptions`.
pub fn robust_weighting(
    panel: &Panel,
    estimand: &EstimandSpec,
    assumptions: &AssumptionSet,
    options: &BalanceOptions,
) -> Result<RobustFit> {
    let tags = classify(panel, estimand, assumptions);
    let design = build_problem(panel, estimand, &tags, assumptions, options)?;
    let solution = solve_balance(&design.problem);
    let contrast = estimate_from_solution(panel, &design, &solution)?;
    log::debug!(
        "robust weighting: {} rows, {} columns, {} iterations, kkt {:.2e}",
        design.problem.n(),
        design.problem.k(),
        solution.iterations,
        solution.kkt_residual
    );
    Ok(RobustFit { tags, design, solution, contrast })
}

/// Estimator family with its options, as carried in run configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Estimator {
    /// Difference in means at `ty` between the initiation cohort and the reference.
    Ideal,
    /// Balancing weights over the licensed information set.
    Robust {
        #[serde(default)]
        options: BalanceOptions,
    },
    /// Dynamic (or other) TWFE coefficient, corrected for general references.
    Twfe {
        #[serde(default)]
        spec: TwfeSpec,
    },
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator::Robust { options: BalanceOptions::default() }
    }
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Ideal => "ideal",
            Estimator::Robust { .. } => "robust",
            Estimator::Twfe { .. } => "twfe",
        }
    }

    /// Point estimate only.
    pub fn estimate(&self, panel: &Panel, estimand: &EstimandSpec, assumptions: &AssumptionSet) -> Result<f64> {
        match self {
            Estimator::Ideal => Ok(ideal_contrast(panel, estimand)?.estimate),
            Estimator::Robust { options } => Ok(robust_weighting(panel, estimand, assumptions, options)?.contrast.estimate),
            Estimator::Twfe { spec } => twfe_general_estimate(&fit_twfe(panel, spec)?, estimand),
        }
    }
}

/// The estimand as seen from a unit-resampled panel: custom target weights
/// follow their units, everything else is unchanged.
pub fn resampled_estimand(estimand: &EstimandSpec, picks: &[usize]) -> Result<EstimandSpec> {
    let mut e = estimand.clone();
    if let TargetPopulation::Custom(w) = &estimand.target {
        let mapped: Vec<f64> = picks.iter().map(|&u| w[u]).collect();
        if mapped.iter().sum::<f64>() <= 0.0 {
            return Err(Error::EmptyGroup("resample drew no units with positive target weight".into()));
        }
        e.target = TargetPopulation::Custom(mapped);
    }
    Ok(e)
}
