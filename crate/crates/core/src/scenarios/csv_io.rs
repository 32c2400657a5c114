use std::collections::HashMap;
use std::path::Path;

use super::{ErrorUnits, ScenarioSet};
use crate::error::{Error, Result};
use crate::grid::GridCase;

/// Per-unit (or raw) forecast errors read from a CSV file, one column per
/// wind unit.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestedErrors {
    pub units: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Rows discarded because some unit reported zero actual output.
    pub dropped: usize,
}

fn parse_cell(s: &str, line: usize, column: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("row {line}, column {column}: not a number: {s:?}")))
}

/// Reads forecast errors from CSV.
///
/// Without `normalize`, every column is a unit and cells are errors as-is.
/// With `normalize`, columns must come in `<unit>_actual` / `<unit>_forecast`
/// pairs and the error is `(actual − forecast) / actual`; other columns (time
/// stamps and the like) are ignored and rows where any actual is zero are
/// dropped.
pub fn ingest_csv(path: impl AsRef<Path>, normalize: bool) -> Result<IngestedErrors> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, normalize)
}

pub(crate) fn ingest_reader(reader: impl std::io::Read, normalize: bool) -> Result<IngestedErrors> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();

    // (unit, value column, forecast column)
    let mut plan: Vec<(String, usize, Option<usize>)> = Vec::new();
    if normalize {
        let position: HashMap<&str, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.as_str(), i))
            .collect();
        for (i, h) in headers.iter().enumerate() {
            if let Some(unit) = h.strip_suffix("_actual") {
                let fc = format!("{unit}_forecast");
                let Some(&j) = position.get(fc.as_str()) else {
                    return Err(Error::Parse(format!("column {h} has no matching {fc}")));
                };
                plan.push((unit.to_owned(), i, Some(j)));
            }
        }
        if plan.is_empty() {
            return Err(Error::Parse(
                "no <unit>_actual/<unit>_forecast column pairs".into(),
            ));
        }
    } else {
        plan = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.clone(), i, None))
            .collect();
        if plan.is_empty() {
            return Err(Error::Parse("empty header".into()));
        }
    }

    let mut rows = Vec::new();
    let mut dropped = 0;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let mut row = Vec::with_capacity(plan.len());
        let mut skip = false;
        for (_, i, fc) in &plan {
            let cell = |c: usize| {
                rec.get(c)
                    .ok_or_else(|| Error::Parse(format!("row {line} is short")))
                    .and_then(|s| parse_cell(s, line, &headers[c]))
            };
            let v = cell(*i)?;
            match fc {
                None => row.push(v),
                Some(j) => {
                    let forecast = cell(*j)?;
                    if v == 0.0 {
                        skip = true;
                    } else {
                        row.push((v - forecast) / v);
                    }
                }
            }
        }
        if skip {
            dropped += 1;
        } else {
            rows.push(row);
        }
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!(
            "no usable rows ({dropped} dropped for zero actual output)"
        )));
    }
    Ok(IngestedErrors {
        units: plan.into_iter().map(|(u, _, _)| u).collect(),
        rows,
        dropped,
    })
}

impl IngestedErrors {
    /// Places unit errors on buses. Several units may share a bus, in which
    /// case their MW errors add. With [`ErrorUnits::PerUnit`] each error is
    /// multiplied by the wind forecast of its bus.
    pub fn to_scenarios(
        &self,
        case: &GridCase,
        unit_bus: &HashMap<String, u32>,
        units: ErrorUnits,
        label: &str,
    ) -> Result<ScenarioSet> {
        let mut targets = Vec::with_capacity(self.units.len());
        for u in &self.units {
            let bus = unit_bus
                .get(u)
                .ok_or_else(|| Error::Validation(format!("unit {u} has no bus assignment")))?;
            let pos = case.bus_position(*bus).ok_or_else(|| {
                Error::Validation(format!("unit {u} mapped to unknown bus {bus}"))
            })?;
            if case.buses[pos].wind_forecast <= 0.0 {
                return Err(Error::Validation(format!(
                    "unit {u} mapped to bus {bus}, which has no wind forecast"
                )));
            }
            let scale = match units {
                ErrorUnits::PerUnit => case.buses[pos].wind_forecast,
                ErrorUnits::Mw => 1.0,
            };
            targets.push((pos, scale));
        }
        let bus_ids: Vec<u32> = case.buses.iter().map(|b| b.id).collect();
        let mut set = ScenarioSet::zeros(label, bus_ids, self.rows.len());
        for (n, r) in self.rows.iter().enumerate() {
            let out = set.row_mut(n);
            for (v, &(pos, scale)) in r.iter().zip(&targets) {
                out[pos] += v * scale;
            }
        }
        Ok(set)
    }
}

impl ScenarioSet {
    /// Writes the set as CSV with one column per bus id.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(self.bus_ids().iter().map(|b| b.to_string()))?;
        for r in self.rows() {
            w.write_record(r.iter().map(|v| format!("{v:?}")))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a set written by [`ScenarioSet::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>, label: &str) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let bus_ids = rdr
            .headers()?
            .iter()
            .map(|h| {
                h.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Parse(format!("bad bus id header {h:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            rows.push(
                rec.iter()
                    .enumerate()
                    .map(|(i, s)| {
                        parse_cell(s, k + 2, &bus_ids[i.min(bus_ids.len() - 1)].to_string())
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        ScenarioSet::from_rows(label, 0, bus_ids, &rows)
    }
}
