//! CSV panels and exports.
//!
//! Input panels have a header and columns `unit,time,outcome` plus either
//! an initiation column `g` (calendar label, or `never`/empty) or a 0/1
//! treatment column `treat`. Every other column is read as a covariate
//! unless the schema lists the covariates explicitly.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::format::fmt_num;
use crate::classify::{Group, ObservationTag, Role};
use crate::contrast::{Component, Provenance, WeightedContrast};
use crate::error::{Error, Result};
use crate::inference::EventStudyCurve;
use crate::panel::{InitField, Panel, PanelOptions, Record};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    pub cohort: String,
    pub treat: String,
    /// Covariate columns; `None` takes every remaining column.
    pub covariates: Option<Vec<String>>,
    pub allow_missing: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            unit: "unit".into(),
            time: "time".into(),
            outcome: "outcome".into(),
            cohort: "g".into(),
            treat: "treat".into(),
            covariates: None,
            allow_missing: false,
        }
    }
}

fn is_never(cell: &str) -> bool {
    matches!(cell.to_ascii_lowercase().as_str(), "" | "never" | "inf" | "infinity" | "∞")
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | ".")
}

/// Read a panel from CSV text.
pub fn read_panel<R: Read>(reader: R, schema: &CsvSchema) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| {
        col(name).ok_or_else(|| Error::Schema { row: 0, message: format!("missing required column {name:?}") })
    };
    let (iu, it, iy) = (need(&schema.unit)?, need(&schema.time)?, need(&schema.outcome)?);
    let (ig, iz) = (col(&schema.cohort), col(&schema.treat));
    if ig.is_some() == iz.is_some() {
        return Err(Error::Schema {
            row: 0,
            message: format!("expected exactly one of the columns {:?} or {:?}", schema.cohort, schema.treat),
        });
    }
    let cov_names: Vec<String> = match &schema.covariates {
        Some(list) => list.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![Some(iu), Some(it), Some(iy), ig, iz].contains(&Some(*i)))
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let cov_idx: Vec<usize> = cov_names.iter().map(|c| need(c)).collect::<Result<_>>()?;

    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Schema { row, message: e.to_string() })?;
        if rec.len() != headers.len() {
            return Err(Error::Schema {
                row,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let bad = |what: &str, v: &str| Error::Schema { row, message: format!("invalid {what} {v:?}") };
        let time: i64 = rec[it].parse().map_err(|_| bad("time", &rec[it]))?;
        let outcome = if is_missing(&rec[iy]) {
            None
        } else {
            Some(rec[iy].parse::<f64>().map_err(|_| bad("outcome", &rec[iy]))?)
        };
        let init = match (ig, iz) {
            (Some(g), _) => InitField::Cohort(if is_never(&rec[g]) {
                None
            } else {
                Some(rec[g].parse::<i64>().map_err(|_| bad("initiation time", &rec[g]))?)
            }),
            (_, Some(z)) => InitField::Treat(rec[z].parse::<u8>().map_err(|_| bad("treatment indicator", &rec[z]))?),
            _ => unreachable!(),
        };
        let covariates = cov_idx
            .iter()
            .map(|&j| rec[j].parse::<f64>().map_err(|_| bad("covariate value", &rec[j])))
            .collect::<Result<Vec<_>>>()?;
        records.push(Record { row, unit: rec[iu].to_string(), time, outcome, init, covariates });
    }
    Panel::from_records(&records, &cov_names, PanelOptions { allow_missing: schema.allow_missing })
}

pub fn read_panel_path(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Panel> {
    read_panel(std::fs::File::open(path)?, schema)
}

/// Panel export in the input layout: `unit,time,outcome,g` plus covariates;
/// unobserved cells are skipped.
pub fn write_panel<W: Write>(out: W, panel: &Panel) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["unit".to_string(), "time".into(), "outcome".into(), "g".into()];
    header.extend(panel.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for o in panel.observed_ids() {
        let u = panel.unit_of(o);
        let mut row = vec![
            panel.unit_id(u).to_string(),
            panel.time_label(panel.time_of(o)).to_string(),
            fmt_num(panel.outcome(o)),
            panel.cohort_label(panel.cohort(u)),
        ];
        row.extend((0..panel.covariate_names().len()).map(|k| fmt_num(panel.covariate(o, k))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Weight export: `unit,time,component,weight,group`, members of the contrast only.
pub fn write_weights<W: Write>(out: W, panel: &Panel, contrast: &WeightedContrast, tags: &[ObservationTag]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit", "time", "component", "weight", "group"])?;
    for o in 0..contrast.n_obs() {
        if contrast.component[o] == Component::Unused {
            continue;
        }
        w.write_record([
            panel.unit_id(panel.unit_of(o)),
            &panel.time_label(panel.time_of(o)).to_string(),
            contrast.component[o].name(),
            &fmt_num(contrast.weights[o]),
            tags[o].group.name(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Re-load an exported weight table against its panel; group labels become tags.
pub fn read_weights<R: Read>(reader: R, panel: &Panel) -> Result<(WeightedContrast, Vec<ObservationTag>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let n = panel.n_obs();
    let mut weights = vec![0.0; n];
    let mut comp = vec![Component::Unused; n];
    let mut tags: Vec<ObservationTag> = (0..n)
        .map(|o| ObservationTag {
            unit: panel.unit_of(o),
            time: panel.time_of(o),
            group: Group::Excluded,
            role: Role::None,
            reference: None,
        })
        .collect();
    let units: HashMap<&str, usize> = (0..panel.n_units()).map(|u| (panel.unit_id(u), u)).collect();
    for (i, rec) in rdr.deserialize::<(String, i64, String, f64, String)>().enumerate() {
        let row = i + 1;
        let (unit, time, component, weight, group) = rec.map_err(|e| Error::Schema { row, message: e.to_string() })?;
        let u = *units.get(unit.as_str()).ok_or_else(|| Error::Schema { row, message: format!("unknown unit {unit:?}") })?;
        let t = panel.time_index(time).ok_or_else(|| Error::Schema { row, message: format!("unknown time {time}") })?;
        let o = panel.obs(u, t);
        let (c, role) = match component.as_str() {
            "treatment" => (Component::Treatment, Role::Treatment),
            "control" => (Component::Control, Role::Control),
            other => return Err(Error::Schema { row, message: format!("unknown component {other:?}") }),
        };
        weights[o] = weight;
        comp[o] = c;
        tags[o].role = role;
        tags[o].group =
            Group::parse(&group).ok_or_else(|| Error::Schema { row, message: format!("unknown group {group:?}") })?;
    }
    let provenance = Provenance { solver: "imported".into(), ..Default::default() };
    Ok((WeightedContrast::new(panel, weights, comp, provenance), tags))
}

/// Classification export: `unit,time,group,role,reference`, used observations only.
pub fn write_classification<W: Write>(out: W, panel: &Panel, tags: &[ObservationTag]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit", "time", "group", "role", "reference"])?;
    for t in tags.iter().filter(|t| t.is_used()) {
        w.write_record([
            panel.unit_id(t.unit),
            &panel.time_label(t.time).to_string(),
            t.group.name(),
            t.role.name(),
            &t.reference.map(|c| panel.cohort_label(c)).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Curve export: `l,estimate,se,lo,hi`; gaps are empty cells.
pub fn write_curve<W: Write>(out: W, curve: &EventStudyCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["l", "estimate", "se", "lo", "hi"])?;
    let cell = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    for p in &curve.points {
        w.write_record([p.l.to_string(), cell(p.estimate), cell(p.se), cell(p.lo), cell(p.hi)])?;
    }
    w.flush()?;
    Ok(())
}
