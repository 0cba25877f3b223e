//! Cohort CSV files.
//!
//! Two header rows: column names, then kinds. A kind is `cont` or `cat` for
//! features, or one of the reserved `survival_months` and `event` for the
//! outcome columns, which must appear exactly once each. Empty feature cells
//! are missing. Events are `0` (censored) or `1` (death).

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use masksurv_core::dataset::{Cell, CohortTable, Column, ColumnKind};

use crate::error::{in_module, Error, Result};

pub const KIND_CONTINUOUS: &str = "cont";
pub const KIND_CATEGORICAL: &str = "cat";
pub const KIND_SURVIVAL: &str = "survival_months";
pub const KIND_EVENT: &str = "event";

enum Role {
    Feature(ColumnKind),
    Survival,
    Event,
}

fn schema(line: u64, column: &str, msg: impl std::fmt::Display) -> Error {
    Error::Schema(format!("line {line}, column `{column}`: {msg}"))
}

pub fn load_csv(path: &Path) -> Result<CohortTable> {
    let file = File::open(path).map_err(Error::io(path))?;
    read_csv(file).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_csv<R: Read>(reader: R) -> Result<CohortTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = rdr.records();
    let csv_err = |e: csv::Error| Error::Schema(e.to_string());
    let names = match records.next() {
        Some(r) => r.map_err(csv_err)?,
        None => return Err(Error::Schema("empty file".into())),
    };
    let kinds = match records.next() {
        Some(r) => r.map_err(csv_err)?,
        None => return Err(Error::Schema("missing the kinds header row".into())),
    };

    let mut seen = BTreeSet::new();
    let mut roles = Vec::with_capacity(names.len());
    let mut columns = Vec::new();
    let (mut survival_col, mut event_col) = (None, None);
    for (c, (name, kind)) in names.iter().zip(kinds.iter()).enumerate() {
        let name = name.trim();
        if name.is_empty() {
            return Err(schema(1, &format!("#{}", c + 1), "empty column name"));
        }
        if !seen.insert(name.to_string()) {
            return Err(schema(1, name, "duplicate column name"));
        }
        let role = match kind.trim() {
            KIND_CONTINUOUS => Role::Feature(ColumnKind::Continuous),
            KIND_CATEGORICAL => Role::Feature(ColumnKind::Categorical),
            KIND_SURVIVAL => Role::Survival,
            KIND_EVENT => Role::Event,
            other => return Err(schema(2, name, format!("unknown column kind `{other}`"))),
        };
        match role {
            Role::Feature(kind) => columns.push(Column {
                name: name.to_string(),
                kind,
            }),
            Role::Survival if survival_col.replace(c).is_some() => {
                return Err(schema(2, name, "second survival_months column"))
            }
            Role::Event if event_col.replace(c).is_some() => {
                return Err(schema(2, name, "second event column"))
            }
            _ => {}
        }
        roles.push(role);
    }
    if survival_col.is_none() || event_col.is_none() {
        return Err(Error::Schema("header must declare one survival_months and one event column".into()));
    }
    if columns.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }

    let mut rows = Vec::new();
    let mut survival = Vec::new();
    let mut events = Vec::new();
    for record in records {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let mut cells = Vec::with_capacity(columns.len());
        let (mut s, mut e) = (None, None);
        for ((raw, role), name) in record.iter().zip(&roles).zip(names.iter()) {
            let raw = raw.trim();
            match role {
                Role::Feature(_) if raw.is_empty() => cells.push(Cell::Missing),
                Role::Feature(ColumnKind::Continuous) => {
                    let v: f64 = raw
                        .parse()
                        .map_err(|_| schema(line, name, format!("`{raw}` is not a number")))?;
                    if !v.is_finite() {
                        return Err(schema(line, name, format!("`{raw}` is not finite")));
                    }
                    cells.push(Cell::Value(v));
                }
                Role::Feature(ColumnKind::Categorical) => cells.push(Cell::Level(raw.to_string())),
                Role::Survival => {
                    let v: f64 = raw
                        .parse()
                        .map_err(|_| schema(line, name, format!("survival `{raw}` is not a number")))?;
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(schema(line, name, format!("negative or non-finite survival {raw}")));
                    }
                    s = Some(v);
                }
                Role::Event => {
                    e = Some(match raw {
                        "0" => false,
                        "1" => true,
                        _ => return Err(schema(line, name, format!("event `{raw}` must be 0 or 1"))),
                    });
                }
            }
        }
        rows.push(cells);
        survival.push(s.expect("declared column"));
        events.push(e.expect("declared column"));
    }
    if rows.is_empty() {
        return Err(Error::Schema("no patient rows".into()));
    }
    CohortTable::new(columns, rows, survival, events).map_err(in_module("dataset"))
}

pub fn write_csv<W: Write>(table: &CohortTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Report(e.to_string());
    let mut names: Vec<&str> = table.columns().iter().map(|c| c.name.as_str()).collect();
    names.extend(["survival_months", "event"]);
    w.write_record(&names).map_err(err)?;
    let mut kinds: Vec<&str> = table
        .columns()
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Continuous => KIND_CONTINUOUS,
            ColumnKind::Categorical => KIND_CATEGORICAL,
        })
        .collect();
    kinds.extend([KIND_SURVIVAL, KIND_EVENT]);
    w.write_record(&kinds).map_err(err)?;
    for (i, row) in table.rows().iter().enumerate() {
        let mut out: Vec<String> = row
            .iter()
            .map(|c| match c {
                Cell::Missing => String::new(),
                Cell::Value(v) => v.to_string(),
                Cell::Level(l) => l.clone(),
            })
            .collect();
        out.push(table.survival_months()[i].to_string());
        out.push(if table.events()[i] { "1" } else { "0" }.into());
        w.write_record(&out).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Report(e.to_string()))
}

pub fn to_csv_bytes(table: &CohortTable) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(table, &mut buf)?;
    Ok(buf)
}

pub fn save_csv(table: &CohortTable, path: &Path) -> Result<()> {
    let bytes = to_csv_bytes(table)?;
    std::fs::write(path, bytes).map_err(Error::io(path))
}
