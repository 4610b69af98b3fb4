//! Cohort and effect-surface CSV files, JSON reports.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use survhte_core::data::{Cohort, RawRow, ValidationError};
use survhte_core::math::Matrix;
use survhte_core::survival::EffectSurface;

use crate::error::CliError;

pub const COHORT_FIXED: [&str; 4] = ["id", "time", "event", "treatment"];
pub const SURFACE_HEADER: [&str; 5] = ["id", "t", "s1", "s0", "psi_hat"];

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::validation(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn cell_error(line: u64, column: &str, value: &str, expected: &str) -> CliError {
    CliError::validation(format!("line {line}, column {column}: cannot parse {value:?} as {expected}"))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).flexible(true).from_reader(input)
}

fn line_of(rec: &csv::StringRecord, fallback: u64) -> u64 {
    rec.position().map_or(fallback, |p| p.line())
}

/// Parses a cohort CSV with header `id,time,event,treatment,<covariates...>`.
pub fn read_cohort_from<R: Read>(input: R, horizon: u32) -> Result<Cohort, CliError> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(|e| CliError::validation(format!("cannot read header: {e}")))?.clone();
    for (k, want) in COHORT_FIXED.iter().enumerate() {
        match header.get(k) {
            Some(h) if h == *want => {}
            Some(h) => return Err(CliError::validation(format!("header column {} must be {want:?}, found {h:?}", k + 1))),
            None => return Err(CliError::validation(format!("missing column {want:?}"))),
        }
    }
    let names: Vec<String> = header.iter().skip(4).map(str::to_string).collect();
    if names.is_empty() {
        return Err(CliError::validation("missing covariate columns after \"treatment\""));
    }
    if let Some(dup) = names.iter().enumerate().find_map(|(i, n)| names[..i].contains(n).then_some(n)) {
        return Err(CliError::validation(format!("duplicate column {dup:?}")));
    }
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::validation(format!("malformed CSV: {e}")))?;
        let line = line_of(&rec, k as u64 + 2);
        if rec.len() != header.len() {
            return Err(CliError::validation(format!("line {line}: expected {} fields, found {}", header.len(), rec.len())));
        }
        let int = |j: usize| -> Result<i64, CliError> {
            rec[j].parse::<i64>().map_err(|_| cell_error(line, COHORT_FIXED[j], &rec[j], "an integer"))
        };
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(CliError::validation(format!("line {line}: empty id")));
        }
        let (time, event, treatment) = (int(1)?, int(2)?, int(3)?);
        let x = (4..rec.len())
            .map(|j| {
                let v: f64 = rec[j].parse().map_err(|_| cell_error(line, &header[j], &rec[j], "a real number"))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(cell_error(line, &header[j], &rec[j], "a finite real number"))
                }
            })
            .collect::<Result<Vec<f64>, CliError>>()?;
        rows.push(RawRow { id, time, event, treatment, x });
        lines.push(line);
    }
    Cohort::validate(rows, names, horizon).map_err(|e| describe_violations(&e, &lines))
}

fn describe_violations(e: &ValidationError, lines: &[u64]) -> CliError {
    let shown: Vec<String> = e
        .violations
        .iter()
        .take(5)
        .map(|v| match lines.get(v.row) {
            Some(l) if !lines.is_empty() => format!("line {l}: violates \"{}\"", v.rule),
            _ => format!("cohort violates \"{}\"", v.rule),
        })
        .collect();
    let more = e.violations.len().saturating_sub(shown.len());
    let tail = if more > 0 { format!(" (and {more} more)") } else { String::new() };
    CliError::validation(format!("{}{tail}", shown.join("; ")))
}

pub fn read_cohort(path: &Path, horizon: u32) -> Result<Cohort, CliError> {
    read_cohort_from(open(path)?, horizon).map_err(|e| e.in_file(path))
}

pub fn write_cohort_to<W: Write>(out: W, cohort: &Cohort) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = COHORT_FIXED.to_vec();
    header.extend(cohort.feature_names().iter().map(String::as_str));
    w.write_record(&header)?;
    for s in cohort.subjects() {
        let mut rec = vec![s.id.clone(), s.time.to_string(), u8::from(s.event).to_string(), u8::from(s.treated).to_string()];
        rec.extend(s.x.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cohort(path: &Path, cohort: &Cohort) -> Result<(), CliError> {
    write_cohort_to(create(path)?, cohort).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Writes `id,t,s1,s0,psi_hat`, one row per subject and period.
pub fn write_surface_to<W: Write>(out: W, ids: &[&str], surface: &EffectSurface) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SURFACE_HEADER)?;
    for (i, id) in ids.iter().enumerate() {
        for t in 0..surface.horizon() as usize {
            w.write_record([
                id.to_string(),
                (t + 1).to_string(),
                surface.s1.get(i, t).to_string(),
                surface.s0.get(i, t).to_string(),
                surface.psi.get(i, t).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_surface(path: &Path, cohort: &Cohort, surface: &EffectSurface) -> Result<(), CliError> {
    let ids: Vec<&str> = cohort.subjects().iter().map(|s| s.id.as_str()).collect();
    write_surface_to(create(path)?, &ids, surface).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Reads an effect surface and aligns its rows with the cohort.
pub fn read_surface_from<R: Read>(input: R, cohort: &Cohort) -> Result<EffectSurface, CliError> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(|e| CliError::validation(format!("cannot read header: {e}")))?.clone();
    for (k, want) in SURFACE_HEADER.iter().enumerate() {
        if header.get(k) != Some(want) {
            return Err(CliError::validation(format!("header column {} must be {want:?}", k + 1)));
        }
    }
    let index: HashMap<&str, usize> = cohort.subjects().iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let th = cohort.horizon() as usize;
    let n = cohort.len();
    let mut s1 = Matrix::filled(n, th, f64::NAN);
    let mut s0 = Matrix::filled(n, th, f64::NAN);
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::validation(format!("malformed CSV: {e}")))?;
        let line = line_of(&rec, k as u64 + 2);
        if rec.len() != SURFACE_HEADER.len() {
            return Err(CliError::validation(format!("line {line}: expected 5 fields, found {}", rec.len())));
        }
        let i = *index.get(&rec[0]).ok_or_else(|| CliError::validation(format!("line {line}: unknown id {:?}", &rec[0])))?;
        let t: usize = rec[1].parse().map_err(|_| cell_error(line, "t", &rec[1], "an integer"))?;
        if t == 0 || t > th {
            return Err(CliError::validation(format!("line {line}: period {t} outside 1..={th}")));
        }
        let prob = |j: usize| -> Result<f64, CliError> {
            let v: f64 = rec[j].parse().map_err(|_| cell_error(line, SURFACE_HEADER[j], &rec[j], "a real number"))?;
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(cell_error(line, SURFACE_HEADER[j], &rec[j], "a probability"))
            }
        };
        if !s1.get(i, t - 1).is_nan() {
            return Err(CliError::validation(format!("line {line}: duplicate row for id {:?}, t {t}", &rec[0])));
        }
        s1.set(i, t - 1, prob(2)?);
        s0.set(i, t - 1, prob(3)?);
    }
    for i in 0..n {
        if let Some(t) = (0..th).find(|&t| s1.get(i, t).is_nan()) {
            return Err(CliError::validation(format!("missing row for id {:?}, t {}", cohort.subject(i).id, t + 1)));
        }
    }
    EffectSurface::from_curves(s1, s0).map_err(|e| CliError::validation(e.to_string()))
}

pub fn read_surface(path: &Path, cohort: &Cohort) -> Result<EffectSurface, CliError> {
    read_surface_from(open(path)?, cohort).map_err(|e| e.in_file(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

/// Writes a CSV from a header and stringly rows.
pub fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let wrap = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(&r).map_err(wrap)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
