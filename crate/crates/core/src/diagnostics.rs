//! Weight diagnostics: effective sample sizes, information shares,
//! dispersion, covariate balance, sign reversal and leave-one-out influence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{Group, ObservationTag};
use crate::contrast::{Component, WeightedContrast};
use crate::error::{Error, Result};
use crate::linalg::{mean_sd, quantile_sorted};
use crate::panel::{ObsId, Panel};
use crate::twfe::{fit_twfe, FitMethod, Term, TwfeFit};

/// Means below this magnitude make the coefficient of variation meaningless.
pub const CV_MEAN_FLOOR: f64 = 1e-15;
/// `1 - H_jj` below this falls back to an explicit refit.
pub const LEVERAGE_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEss {
    pub group: Group,
    pub n: usize,
    pub ess: f64,
    pub info_share: f64,
}

/// Members of a contrast grouped by classification group.
fn members_by_group(contrast: &WeightedContrast, tags: &[ObservationTag]) -> Vec<(Group, Vec<ObsId>)> {
    let mut out: Vec<(Group, Vec<ObsId>)> = Vec::new();
    for g in Group::USED.iter().copied().chain([Group::Excluded]) {
        let ids: Vec<ObsId> = (0..contrast.n_obs())
            .filter(|&o| contrast.component[o] != Component::Unused && tags[o].group == g)
            .collect();
        // Excluded observations only appear when an estimator leans on them.
        if g == Group::Excluded && ids.is_empty() {
            continue;
        }
        out.push((g, ids));
    }
    out
}

/// Kish effective sample size `(sum |w|)^2 / sum w^2`; zero for an empty or all-zero set.
pub fn kish_ess(weights: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s1, mut s2) = (0.0, 0.0);
    for w in weights {
        s1 += w.abs();
        s2 += w * w;
    }
    if s2 == 0.0 {
        0.0
    } else {
        s1 * s1 / s2
    }
}

/// Group-wise ESS and information shares (ESS over the sum of group ESS).
pub fn ess(contrast: &WeightedContrast, tags: &[ObservationTag]) -> Vec<GroupEss> {
    let mut rows: Vec<GroupEss> = members_by_group(contrast, tags)
        .into_iter()
        .map(|(group, ids)| GroupEss {
            group,
            n: ids.len(),
            ess: kish_ess(ids.iter().map(|&o| contrast.weights[o])),
            info_share: 0.0,
        })
        .collect();
    let total: f64 = rows.iter().map(|r| r.ess).sum();
    if total > 0.0 {
        for r in &mut rows {
            r.info_share = r.ess / total;
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    /// Group name, or `"all"` for every member of the contrast.
    pub group: String,
    pub n: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub mean: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
    pub sum: f64,
    /// Mean and SD of the stored (signed) weights.
    pub weight_mean: f64,
    pub weight_sd: f64,
    pub cv: Option<f64>,
    pub note: Option<String>,
}

fn dispersion_of(group: String, w: &[f64]) -> Dispersion {
    let mut abs: Vec<f64> = w.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len();
    if n == 0 {
        return Dispersion {
            group,
            n,
            min: f64::NAN,
            q25: f64::NAN,
            median: f64::NAN,
            mean: f64::NAN,
            q75: f64::NAN,
            q95: f64::NAN,
            max: f64::NAN,
            sum: 0.0,
            weight_mean: f64::NAN,
            weight_sd: f64::NAN,
            cv: None,
            note: Some("empty group".into()),
        };
    }
    let sum: f64 = abs.iter().sum();
    let (m, sd) = mean_sd(w);
    let (cv, note) = if m.abs() < CV_MEAN_FLOOR {
        (None, Some("≈0 mean; CV overflow".to_string()))
    } else {
        (Some((sd / m).abs()), None)
    };
    Dispersion {
        group,
        n,
        min: abs[0],
        q25: quantile_sorted(&abs, 0.25),
        median: quantile_sorted(&abs, 0.5),
        mean: sum / n as f64,
        q75: quantile_sorted(&abs, 0.75),
        q95: quantile_sorted(&abs, 0.95),
        max: abs[n - 1],
        sum,
        weight_mean: m,
        weight_sd: sd,
        cv,
        note,
    }
}

/// Summaries of `|w|` per group plus an `"all"` row. Quantiles are type 7
/// (linear interpolation between order statistics).
pub fn weight_dispersion(contrast: &WeightedContrast, tags: &[ObservationTag]) -> Vec<Dispersion> {
    let mut out: Vec<Dispersion> = members_by_group(contrast, tags)
        .into_iter()
        .map(|(g, ids)| {
            let w: Vec<f64> = ids.iter().map(|&o| contrast.weights[o]).collect();
            dispersion_of(g.name().to_string(), &w)
        })
        .collect();
    let all: Vec<f64> = (0..contrast.n_obs())
        .filter(|&o| contrast.component[o] != Component::Unused)
        .map(|o| contrast.weights[o])
        .collect();
    out.push(dispersion_of("all".into(), &all));
    out
}

/// A per-observation column to check for balance.
#[derive(Clone, Debug, PartialEq)]
pub struct SmdColumn {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmdRow {
    pub name: String,
    pub before: Option<f64>,
    pub after: Option<f64>,
    pub flag: Option<String>,
}

/// Covariate and indicator columns over all panel cells.
pub fn balance_columns(panel: &Panel, covariates: &[String], units: bool, times: bool) -> Result<Vec<SmdColumn>> {
    let n = panel.n_obs();
    let mut out = Vec::new();
    for name in covariates {
        let k = panel.covariate_index(name).ok_or_else(|| Error::validation(format!("unknown covariate {name:?}")))?;
        out.push(SmdColumn { name: name.clone(), values: (0..n).map(|o| panel.covariate(o, k)).collect() });
    }
    if units {
        for u in 0..panel.n_units() {
            out.push(SmdColumn {
                name: format!("unit[{}]", panel.unit_id(u)),
                values: (0..n).map(|o| (panel.unit_of(o) == u) as u8 as f64).collect(),
            });
        }
    }
    if times {
        for t in 0..panel.n_times() {
            out.push(SmdColumn {
                name: format!("time[{}]", panel.time_label(t)),
                values: (0..n).map(|o| (panel.time_of(o) == t) as u8 as f64).collect(),
            });
        }
    }
    Ok(out)
}

/// Standardized mean differences between the treatment and control
/// components, unweighted (before) and with the contrast weights (after).
/// The denominator is `sqrt((s_T^2 + s_C^2) / 2)` with unweighted `n-1`
/// variances in both rows.
pub fn smd_table(contrast: &WeightedContrast, columns: &[SmdColumn]) -> Vec<SmdRow> {
    let t_ids = contrast.treatment_ids();
    let c_ids = contrast.control_ids();
    columns
        .iter()
        .map(|col| {
            let xt: Vec<f64> = t_ids.iter().map(|&o| col.values[o]).collect();
            let xc: Vec<f64> = c_ids.iter().map(|&o| col.values[o]).collect();
            let (mt, st) = mean_sd(&xt);
            let (mc, sc) = mean_sd(&xc);
            let pooled = ((st * st + sc * sc) / 2.0).sqrt();
            if xt.len() < 2 || xc.len() < 2 || !(pooled > 0.0) {
                return SmdRow {
                    name: col.name.clone(),
                    before: None,
                    after: None,
                    flag: Some("undefined: zero pooled variance".into()),
                };
            }
            let wmean = |ids: &[ObsId]| -> Option<f64> {
                let sw: f64 = ids.iter().map(|&o| contrast.weights[o]).sum();
                (sw != 0.0).then(|| ids.iter().map(|&o| contrast.weights[o] * col.values[o]).sum::<f64>() / sw)
            };
            let after = match (wmean(&t_ids), wmean(&c_ids)) {
                (Some(a), Some(b)) => Some((a - b) / pooled),
                _ => None,
            };
            SmdRow {
                name: col.name.clone(),
                before: Some((mt - mc) / pooled),
                after,
                flag: after.is_none().then(|| "undefined: component weights sum to zero".into()),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignReversal {
    pub obs: ObsId,
    pub unit: String,
    pub time: i64,
    pub component: Component,
    pub weight: f64,
}

/// Observations whose stored weight is negative inside their own component.
pub fn sign_reversal_scan(panel: &Panel, contrast: &WeightedContrast) -> Vec<SignReversal> {
    (0..contrast.n_obs())
        .filter(|&o| contrast.component[o] != Component::Unused && contrast.weights[o] < 0.0)
        .map(|o| SignReversal {
            obs: o,
            unit: panel.unit_id(panel.unit_of(o)).to_string(),
            time: panel.time_label(panel.time_of(o)),
            component: contrast.component[o],
            weight: contrast.weights[o],
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfluenceMode {
    /// Rank-one leave-one-out update of the least-squares functional.
    Fast,
    /// Recompute the estimator without the observation.
    Refit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Influence {
    pub obs: ObsId,
    pub unit: String,
    pub time: i64,
    /// Estimate without the observation minus the full estimate; `None`
    /// when removing it breaks identification.
    pub change: Option<f64>,
    pub note: Option<String>,
}

impl Influence {
    fn new(panel: &Panel, obs: ObsId, outcome: std::result::Result<f64, String>) -> Self {
        let (change, note) = match outcome {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(format!("breaks identification: {e}"))),
        };
        Influence {
            obs,
            unit: panel.unit_id(panel.unit_of(obs)).to_string(),
            time: panel.time_label(panel.time_of(obs)),
            change,
            note,
        }
    }
}

/// Observation ids ordered by decreasing `|change|`; identification breaks first.
pub fn rank_influence(entries: &[Influence]) -> Vec<ObsId> {
    let mut order: Vec<&Influence> = entries.iter().collect();
    order.sort_by(|a, b| {
        let ka = a.change.map_or(f64::INFINITY, f64::abs);
        let kb = b.change.map_or(f64::INFINITY, f64::abs);
        kb.total_cmp(&ka).then(a.obs.cmp(&b.obs))
    });
    order.into_iter().map(|e| e.obs).collect()
}

/// Leave-one-out influence for any estimator given as a closure over panels.
pub fn refit_influence<F>(panel: &Panel, ids: &[ObsId], estimator: F) -> Result<Vec<Influence>>
where
    F: Fn(&Panel) -> Result<f64> + Sync,
{
    let base = estimator(panel)?;
    Ok(ids
        .par_iter()
        .map(|&o| {
            let out = estimator(&panel.without_observation(o)).map(|v| v - base).map_err(|e| e.to_string());
            Influence::new(panel, o, out)
        })
        .collect())
}

/// Leave-one-out influence on one TWFE coefficient over every regression row.
///
/// The fast mode uses `PE_j = -h_j e_j / (1 - H_jj)`; rows with leverage
/// numerically one, and fits without a dense factorization, are refit.
pub fn twfe_influence(panel: &Panel, fit: &TwfeFit, term: Term, mode: InfluenceMode) -> Result<Vec<Influence>> {
    let base = fit.coefficient(term).ok_or_else(|| fit.estimator_row(term).unwrap_err())?;
    let spec = fit.spec().clone();
    let refit = |o: ObsId| -> std::result::Result<f64, String> {
        let p = panel.without_observation(o);
        let f = fit_twfe(&p, &spec).map_err(|e| e.to_string())?;
        f.coefficient(term).map(|v| v - base).ok_or_else(|| format!("{} is no longer identified", term.name(panel)))
    };
    let rows = fit.rows().to_vec();
    let fast = match (mode, fit.leverage()) {
        (InfluenceMode::Fast, Some(lev)) if fit.method() == FitMethod::Dense => {
            let h = fit.estimator_row(term)?;
            Some((h, lev, fit.residuals()))
        }
        _ => None,
    };
    Ok(rows
        .par_iter()
        .enumerate()
        .map(|(r, &o)| {
            let out = match &fast {
                Some((h, lev, e)) if 1.0 - lev[r] >= LEVERAGE_FLOOR => Ok(-h[r] * e[r] / (1.0 - lev[r])),
                _ => refit(o),
            };
            Influence::new(panel, o, out)
        })
        .collect())
}

/// Everything the diagnose step reports for one contrast.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub estimate: f64,
    pub ess: Vec<GroupEss>,
    pub dispersion: Vec<Dispersion>,
    pub balance: Vec<SmdRow>,
    pub sign_reversal: Vec<SignReversal>,
    pub influence: Option<Vec<Influence>>,
    pub influence_ranking: Option<Vec<ObsId>>,
}

/// Assemble the weight-only diagnostics; influence is attached separately.
pub fn diagnose(
    panel: &Panel,
    contrast: &WeightedContrast,
    tags: &[ObservationTag],
    columns: &[SmdColumn],
) -> DiagnosticsReport {
    DiagnosticsReport {
        estimate: contrast.estimate,
        ess: ess(contrast, tags),
        dispersion: weight_dispersion(contrast, tags),
        balance: smd_table(contrast, columns),
        sign_reversal: sign_reversal_scan(panel, contrast),
        influence: None,
        influence_ranking: None,
    }
}

impl DiagnosticsReport {
    pub fn with_influence(mut self, entries: Vec<Influence>) -> Self {
        self.influence_ranking = Some(rank_influence(&entries));
        self.influence = Some(entries);
        self
    }
}
