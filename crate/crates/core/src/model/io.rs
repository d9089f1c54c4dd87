//! Panel CSV format.
//!
//! One row per (individual, time): `id,time,<covariate columns>,<outcomes>`.
//! The age covariate is read from a `birth_year` column; indicator covariates
//! use their own names. Outcome values are `0`, `1` or `NA`. Missing-by-death
//! cells are written as `NA` and re-derived on read.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Cell, CovariateKind, IndividualRecord, Model, Panel, BIRTH_YEAR_COLUMN};
use crate::error::{Error, Result};

pub const NA: &str = "NA";

pub(crate) fn covariate_columns(model: &Model) -> Vec<String> {
    model
        .spec()
        .covariates
        .iter()
        .map(|c| match c.kind {
            CovariateKind::AgeFromBirthYear => BIRTH_YEAR_COLUMN.to_string(),
            CovariateKind::Indicator => c.name.clone(),
        })
        .collect()
}

fn cell_text(c: Cell) -> &'static str {
    match c {
        Cell::Zero => "0",
        Cell::One => "1",
        Cell::Missing | Cell::Dead => NA,
    }
}

pub fn write_panel<W: Write>(model: &Model, panel: &Panel, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "time".to_string()];
    header.extend(covariate_columns(model));
    header.extend(model.spec().outcomes.iter().map(|o| o.name.clone()));
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for rec in panel.individuals() {
        for t in 0..rec.time_steps() {
            row.clear();
            row.push(rec.id.clone());
            row.push((t + 1).to_string());
            row.extend(rec.covariates.iter().map(|v| v.to_string()));
            row.extend(rec.row(t).iter().map(|&c| cell_text(c).to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<panel csv>", e))?;
    Ok(())
}

pub fn write_panel_csv(model: &Model, panel: &Panel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_panel(model, panel, std::io::BufWriter::new(file))
}

pub fn read_panel<R: Read>(model: &Model, input: R) -> Result<Panel> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("panel CSV is missing column '{name}'")))
    };
    let id_col = col("id")?;
    let time_col = col("time")?;
    let cov_cols = covariate_columns(model).iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let out_cols = model.spec().outcomes.iter().map(|o| col(&o.name)).collect::<Result<Vec<_>>>()?;

    let (t_len, j_len) = (model.time_steps(), model.outcome_count());
    let mut order: Vec<String> = Vec::new();
    let mut builders: HashMap<String, (Vec<f64>, Vec<Option<Cell>>)> = HashMap::new();

    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let id = field(id_col).to_string();
        let time: usize = field(time_col)
            .parse()
            .map_err(|_| Error::Data(format!("line {line}: bad time '{}'", field(time_col))))?;
        if time < 1 || time > t_len {
            return Err(Error::Data(format!("line {line}: time {time} outside 1..={t_len}")));
        }
        let covs = cov_cols
            .iter()
            .map(|&c| {
                let s = field(c);
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data(format!("line {line}: covariate value '{s}' is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let entry = builders.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (covs.clone(), vec![None; t_len * j_len])
        });
        if entry.0 != covs {
            return Err(Error::Data(format!("line {line}: covariates of '{id}' change over time")));
        }
        let t = time - 1;
        for (j, &c) in out_cols.iter().enumerate() {
            let cell = match field(c) {
                "0" => Cell::Zero,
                "1" => Cell::One,
                NA => Cell::Missing,
                other => return Err(Error::Data(format!("line {line}: outcome value '{other}' is not 0, 1 or NA"))),
            };
            let slot = &mut entry.1[t * j_len + j];
            if slot.is_some() {
                return Err(Error::Data(format!("line {line}: duplicate row for '{id}' at time {time}")));
            }
            *slot = Some(cell);
        }
    }

    let mut records = Vec::with_capacity(order.len());
    for id in order {
        let (covs, cells) = builders.remove(&id).expect("id recorded");
        let cells = cells
            .into_iter()
            .enumerate()
            .map(|(k, c)| c.ok_or_else(|| Error::Data(format!("individual '{id}' has no row for time {}", k / j_len + 1))))
            .collect::<Result<Vec<_>>>()?;
        records.push(IndividualRecord::new(id, covs, cells, j_len));
    }
    Panel::new(model, records)
}

pub fn read_panel_csv(model: &Model, path: impl AsRef<Path>) -> Result<Panel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel(model, std::io::BufReader::new(file))
}
