//! Loader for the state-level no-fault divorce and female suicide panel.
//!
//! Expected CSV columns: a state identifier (`st`, `state` or `stfips`),
//! `year`, the female suicide rate `asmrs`, and the reform year `_nfd`
//! (or `nfd`). Reform codes `NRS`, `NA` or empty mean never reformed within
//! the window; `PRE` or a year before the first sample year marks a reform
//! of unknown timing, and such states are dropped. `pcinc`, `asmrh` and
//! `cases` are read as covariates when present.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::panel::{InitField, Panel, PanelOptions, Record};

/// Environment variable pointing at the dataset; tests skip when unset.
pub const DIVORCE_ENV: &str = "EVENTLAB_DIVORCE_CSV";
/// Raw observation count: 49 states over 33 years.
pub const DIVORCE_RAW_ROWS: usize = 1617;
const RETAINED_STATES: usize = 41;
const YEARS: usize = 33;
const FIRST_YEAR: i64 = 1964;

pub fn load_divorce(path: impl AsRef<Path>) -> Result<Panel> {
    load_divorce_reader(std::fs::File::open(path)?)
}

enum Reform {
    Never,
    Before,
    Year(i64),
}

fn parse_reform(cell: &str) -> Option<Reform> {
    match cell.trim() {
        "" | "NA" | "NRS" | "." => Some(Reform::Never),
        "PRE" => Some(Reform::Before),
        v => {
            let y = v.parse::<f64>().ok()?;
            (y.fract() == 0.0).then_some(if (y as i64) < FIRST_YEAR { Reform::Before } else { Reform::Year(y as i64) })
        }
    }
}

pub fn load_divorce_reader<R: Read>(reader: R) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |names: &[&str]| names.iter().find_map(|n| headers.iter().position(|h| h == n));
    let missing = |what: &str| Error::Schema { row: 0, message: format!("missing column {what}") };
    let iu = col(&["st", "state", "stfips"]).ok_or_else(|| missing("st/state/stfips"))?;
    let it = col(&["year"]).ok_or_else(|| missing("year"))?;
    let iy = col(&["asmrs"]).ok_or_else(|| missing("asmrs"))?;
    let ig = col(&["_nfd", "nfd"]).ok_or_else(|| missing("_nfd"))?;
    let covs: Vec<(String, usize)> = ["pcinc", "asmrh", "cases"]
        .iter()
        .filter_map(|n| col(&[n]).map(|i| (n.to_string(), i)))
        .collect();

    let mut records = Vec::new();
    let mut dropped = std::collections::BTreeSet::new();
    let mut raw = 0;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        raw = row;
        let rec = rec.map_err(|e| Error::Schema { row, message: e.to_string() })?;
        if rec.len() != headers.len() {
            return Err(Error::Schema { row, message: format!("expected {} fields, found {}", headers.len(), rec.len()) });
        }
        let year: i64 =
            rec[it].parse::<f64>().map_err(|_| Error::Schema { row, message: format!("invalid year {:?}", &rec[it]) })? as i64;
        let asmrs: f64 = rec[iy].parse().map_err(|_| Error::Schema { row, message: format!("invalid asmrs {:?}", &rec[iy]) })?;
        let reform = parse_reform(&rec[ig])
            .ok_or_else(|| Error::Schema { row, message: format!("invalid reform year {:?}", &rec[ig]) })?;
        let covariates = covs
            .iter()
            .map(|(n, j)| rec[*j].parse::<f64>().map_err(|_| Error::Schema { row, message: format!("invalid {n} {:?}", &rec[*j]) }))
            .collect::<Result<Vec<_>>>()?;
        let unit = rec[iu].to_string();
        let init = match reform {
            Reform::Before => {
                dropped.insert(unit);
                continue;
            }
            Reform::Never => InitField::Cohort(None),
            Reform::Year(y) => InitField::Cohort(Some(y)),
        };
        records.push(Record { row, unit, time: year, outcome: Some(asmrs), init, covariates });
    }
    if raw != DIVORCE_RAW_ROWS {
        return Err(Error::Schema {
            row: raw + 1,
            message: format!("expected {DIVORCE_RAW_ROWS} observations, found {raw}; file truncated or wrong dataset"),
        });
    }
    for u in &dropped {
        log::warn!("state {u} reformed before {FIRST_YEAR}; excluded");
    }
    let names: Vec<String> = covs.into_iter().map(|(n, _)| n).collect();
    let panel = Panel::from_records(&records, &names, PanelOptions::default())?;
    if panel.n_units() != RETAINED_STATES || panel.n_times() != YEARS || panel.time_label(0) != FIRST_YEAR {
        return Err(Error::validation(format!(
            "expected {RETAINED_STATES} states over {YEARS} years from {FIRST_YEAR}, found {} over {}",
            panel.n_units(),
            panel.n_times()
        )));
    }
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reform_codes() {
        assert!(matches!(parse_reform("NRS"), Some(Reform::Never)));
        assert!(matches!(parse_reform("PRE"), Some(Reform::Before)));
        assert!(matches!(parse_reform("1955"), Some(Reform::Before)));
        assert!(matches!(parse_reform("1971"), Some(Reform::Year(1971))));
        assert!(parse_reform("soon").is_none());
    }

    #[test]
    fn truncated_file_names_the_row() {
        let text = "st,year,asmrs,_nfd\nAL,1964,5.0,1971\nAL,1965\n";
        match load_divorce_reader(text.as_bytes()) {
            Err(Error::Schema { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_file_fails_the_row_count() {
        let text = "st,year,asmrs,_nfd\nAL,1964,5.0,1971\n";
        assert!(matches!(load_divorce_reader(text.as_bytes()), Err(Error::Schema { .. })));
    }
}
