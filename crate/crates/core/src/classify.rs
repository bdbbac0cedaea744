//! Observation classification: which assumptions license each observation
//! as a treatment or control for a given estimand.
//!
//! Every observation `(i, t)` is mapped to the time `ty` by a shift of
//! `ty - t`; its cohort then becomes `c = ty + G_i - t`. Shifted observations
//! need invariance. A shifted cohort equal to `t1` is a treatment; one in the
//! reference regime's support is a direct control; otherwise the cohort must
//! behave like never-treated at `ty` under the anticipation, delayed-onset or
//! dissipation assumptions. The group label records the weakest chain of
//! assumptions that admits the observation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::estimand::{AssumptionSet, EstimandSpec};
use crate::panel::{Cohort, ObsId, Panel};

/// Observation groups, ordered from weakest to strongest assumptions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    IdealExperiment,
    TimeInvariance,
    LimitedAnticipation,
    DelayedOnset,
    EffectDissipation,
    Excluded,
}

impl Group {
    pub const USED: [Group; 5] = [
        Group::IdealExperiment,
        Group::TimeInvariance,
        Group::LimitedAnticipation,
        Group::DelayedOnset,
        Group::EffectDissipation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::IdealExperiment => "IdealExperiment",
            Group::TimeInvariance => "TimeInvariance",
            Group::LimitedAnticipation => "LimitedAnticipation",
            Group::DelayedOnset => "DelayedOnset",
            Group::EffectDissipation => "EffectDissipation",
            Group::Excluded => "Excluded",
        }
    }

    pub fn parse(s: &str) -> Option<Group> {
        Group::USED.into_iter().chain([Group::Excluded]).find(|g| g.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Treatment,
    Control,
    None,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Treatment => "treatment",
            Role::Control => "control",
            Role::None => "none",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationTag {
    pub unit: usize,
    pub time: usize,
    pub group: Group,
    pub role: Role,
    /// Reference cohort a control observation stands in for.
    pub reference: Option<Cohort>,
}

impl ObservationTag {
    fn excluded(unit: usize, time: usize) -> Self {
        ObservationTag { unit, time, group: Group::Excluded, role: Role::None, reference: None }
    }

    pub fn is_used(&self) -> bool {
        self.group != Group::Excluded
    }
}

/// Shifted cohort: finite (possibly outside the window) or never.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shifted {
    At(i64),
    Never,
}

/// Region of the null class containing a finite cohort at `ty`, if any.
/// Regions are disjoint because `phi < l < xi`.
fn null_region(c: i64, ty: i64, a: &AssumptionSet) -> Option<Group> {
    if let Some(k) = a.kappa {
        if c - ty > k as i64 {
            return Some(Group::LimitedAnticipation);
        }
    }
    let d = ty - c;
    if let Some(phi) = a.phi {
        if (0..=phi as i64).contains(&d) {
            return Some(Group::DelayedOnset);
        }
    }
    if let Some(xi) = a.xi {
        if d >= xi as i64 {
            return Some(Group::EffectDissipation);
        }
    }
    None
}

/// Tags for every observation, in [`ObsId`] order.
pub fn classify(panel: &Panel, estimand: &EstimandSpec, assumptions: &AssumptionSet) -> Vec<ObservationTag> {
    let t1 = estimand.t1 as i64;
    let ty = estimand.ty as i64;
    let reference = &estimand.reference;
    let p_never = reference.p(Cohort::Never);

    // Supported finite cohorts that behave like never-treated at ty, weakest
    // region first; used when the reference regime puts no mass on never.
    let mut null_support: Vec<(Group, Cohort)> = reference
        .support()
        .iter()
        .filter_map(|(c, _)| match c {
            Cohort::At(g) => null_region(*g as i64, ty, assumptions).map(|r| (r, *c)),
            Cohort::Never => None,
        })
        .collect();
    null_support.sort();
    let null_reference: Option<(Group, Cohort)> = if p_never > 0.0 {
        Some((Group::IdealExperiment, Cohort::Never))
    } else {
        null_support.first().copied()
    };

    let mut tags = Vec::with_capacity(panel.n_obs());
    for unit in 0..panel.n_units() {
        let g = panel.cohort(unit);
        for t in 0..panel.n_times() {
            let obs = panel.obs(unit, t);
            if !panel.is_observed(obs) {
                tags.push(ObservationTag::excluded(unit, t));
                continue;
            }
            let shifted = t as i64 != ty;
            if shifted && !assumptions.invariance.is_on() {
                tags.push(ObservationTag::excluded(unit, t));
                continue;
            }
            let base = if shifted { Group::TimeInvariance } else { Group::IdealExperiment };
            let c = match g {
                Cohort::At(gi) => Shifted::At(ty + gi as i64 - t as i64),
                Cohort::Never => Shifted::Never,
            };
            // Cohorts shifted outside the window cannot be in the reference support.
            let direct = match c {
                Shifted::At(ci) if ci >= 0 && (ci as usize) < panel.n_times() => Some(Cohort::At(ci as usize)),
                Shifted::At(_) => None,
                Shifted::Never => Some(Cohort::Never),
            };
            let tag = if c == Shifted::At(t1) {
                ObservationTag { unit, time: t, group: base, role: Role::Treatment, reference: None }
            } else if let Some(d) = direct.filter(|d| reference.p(*d) > 0.0) {
                ObservationTag { unit, time: t, group: base, role: Role::Control, reference: Some(d) }
            } else {
                let own = match c {
                    Shifted::Never => Some(Group::IdealExperiment),
                    Shifted::At(ci) => null_region(ci, ty, assumptions),
                };
                match (own, null_reference) {
                    (Some(own), Some((ref_region, rc))) => ObservationTag {
                        unit,
                        time: t,
                        group: base.max(own).max(ref_region),
                        role: Role::Control,
                        reference: Some(rc),
                    },
                    _ => ObservationTag::excluded(unit, t),
                }
            };
            tags.push(tag);
        }
    }
    tags
}

/// Treatment and control counts per used group.
pub fn group_counts(tags: &[ObservationTag]) -> BTreeMap<Group, (usize, usize)> {
    let mut out: BTreeMap<Group, (usize, usize)> = Group::USED.iter().map(|g| (*g, (0, 0))).collect();
    for tag in tags {
        match tag.role {
            Role::Treatment => out.entry(tag.group).or_default().0 += 1,
            Role::Control => out.entry(tag.group).or_default().1 += 1,
            Role::None => {}
        }
    }
    out
}

/// Observation ids with the given role, in id order.
pub fn ids_with_role(panel: &Panel, tags: &[ObservationTag], role: Role) -> Vec<ObsId> {
    tags.iter().filter(|t| t.role == role).map(|t| panel.obs(t.unit, t.time)).collect()
}
