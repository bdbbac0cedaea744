//! Staggered-adoption event-study engine: observation classification,
//! balancing-weight estimators, TWFE implied-weight decompositions,
//! diagnostics and inference.

pub mod balance;
pub mod classify;
pub mod contrast;
pub mod diagnostics;
pub mod error;
pub mod estimand;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod panel;
pub mod pipeline;
pub mod report;
pub mod sim;
pub mod twfe;

pub use balance::{
    build_problem, estimate_from_solution, solve_balance, BalanceDesign, BalanceOptions, BalanceProblem,
    BalanceSolution, DeltaRule, SolveStatus,
};
pub use classify::{classify, group_counts, Group, ObservationTag, Role};
pub use contrast::{hajek_contrast, ideal_contrast, Component, Propensities, Provenance, WeightedContrast};
pub use diagnostics::{DiagnosticsReport, InfluenceMode};
pub use error::{Error, Result};
pub use estimand::{AdjustmentSet, AssumptionSet, EstimandSpec, Invariance, Reference, TargetPopulation};
pub use inference::{cluster_bootstrap, event_study, BootstrapConfig, BootstrapResult, EventStudyCurve};
pub use panel::{Cohort, ObsId, Panel, PanelOptions, Record};
pub use pipeline::{robust_weighting, Estimator, RobustFit};
pub use report::{render, AnalysisRequest, Artifact, EstimandConfig, Operation, TargetConfig};
pub use twfe::{fit_twfe, FitMethod, Term, TwfeFit, TwfeKind, TwfeSpec};
