//! CSV ingestion (instruments, spread panel, positions) and atomic
//! output writing.
//!
//! Spread files are long-format `date,id,spread`; tranche rows leave the
//! spread empty and instead carry `upfront,running[,base_corr_k1,base_corr_k2]`,
//! which are converted to financially equivalent running spreads on load.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::credit::{self, CdsPosition, Side, TrancheQuote};
use crate::error::{Error, Result};
use crate::factor_model::{FactorExposure, ReturnPanel};
use crate::pipeline::config::FactorSpec;

/// One instrument row: identifier plus its named attribute columns.
#[derive(Debug, Clone)]
pub struct Instrument {
    pub id: String,
    fields: BTreeMap<String, f64>,
}

impl Instrument {
    pub fn field(&self, name: &str) -> Option<f64> {
        self.fields.get(name).copied()
    }

    /// Factor exposure in the order of the supplied factor list.
    pub fn exposure(&self, factors: &[FactorSpec]) -> Result<FactorExposure> {
        let values = factors
            .iter()
            .map(|f| {
                self.field(&f.name).ok_or_else(|| {
                    Error::Invalid(format!(
                        "instrument {} has no column '{}'",
                        self.id, f.name
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        FactorExposure::new(values)
    }
}

fn parse_err(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        context: path.display().to_string(),
        row,
        message: message.into(),
    }
}

/// Loads the instruments table. Columns named `is*` are validated as
/// binary 0/1 flags; duplicate identifiers are rejected; columns beyond
/// the requested factors are carried along untouched.
pub fn load_instruments(path: &Path, factors: &[FactorSpec]) -> Result<Vec<Instrument>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Invalid(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if !headers.iter().any(|h| h == "id") {
        return Err(parse_err(path, 1, "missing required column 'id'"));
    }
    for f in factors {
        if !headers.iter().any(|h| h == &f.name) {
            return Err(parse_err(
                path,
                1,
                format!("missing required factor column '{}'", f.name),
            ));
        }
    }

    // Columns the pipeline consumes; anything else is carried past
    // untouched (the wire format allows extra columns).
    let mut needed: BTreeSet<&str> = factors.iter().map(|f| f.name.as_str()).collect();
    needed.insert("maturity_years");

    let mut instruments = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| parse_err(path, row, e.to_string()))?;
        let mut id = String::new();
        let mut fields = BTreeMap::new();
        for (header, value) in headers.iter().zip(record.iter()) {
            if header == "id" {
                id = value.to_string();
                continue;
            }
            if !needed.contains(header.as_str()) {
                continue;
            }
            if value.is_empty() {
                continue;
            }
            let parsed: f64 = value.parse().map_err(|_| {
                parse_err(path, row, format!("column '{header}': invalid number '{value}'"))
            })?;
            if header.starts_with("is") && parsed != 0.0 && parsed != 1.0 {
                return Err(parse_err(
                    path,
                    row,
                    format!("column '{header}' must be 0 or 1, got '{value}'"),
                ));
            }
            fields.insert(header.clone(), parsed);
        }
        if id.is_empty() {
            return Err(parse_err(path, row, "empty instrument id"));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_err(path, row, format!("duplicate instrument id '{id}'")));
        }
        instruments.push(Instrument { id, fields });
    }
    if instruments.is_empty() {
        return Err(Error::Invalid(format!(
            "{} contains no instruments",
            path.display()
        )));
    }
    Ok(instruments)
}

/// Context needed to convert tranche quote rows into equivalent spreads.
#[derive(Debug, Clone)]
pub struct SpreadContext {
    /// Maturity (years) per instrument id, for tranche conversions.
    pub maturities: BTreeMap<String, f64>,
    pub recovery: f64,
    pub rate: f64,
    /// Interpret plain spread values as basis points and divide by 1e4.
    pub spreads_in_bps: bool,
}

/// Wide spread panel: rows are dates, columns instruments, NaN = missing.
#[derive(Debug, Clone)]
pub struct SpreadPanel {
    pub dates: Vec<NaiveDate>,
    pub ids: Vec<String>,
    pub levels: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl SpreadPanel {
    /// Last available spread level per instrument.
    pub fn last_levels(&self) -> Vec<Option<(NaiveDate, f64)>> {
        (0..self.ids.len())
            .map(|j| {
                (0..self.dates.len()).rev().find_map(|t| {
                    let v = self.levels[(t, j)];
                    v.is_finite().then_some((self.dates[t], v))
                })
            })
            .collect()
    }

    /// Per-instrument returns on consecutive available dates. Gaps are
    /// bridged (return computed across the gap) and flagged.
    pub fn returns(&self, log_returns: bool) -> Result<(ReturnPanel, Vec<String>)> {
        let rows = self.dates.len();
        if rows < 2 {
            return Err(Error::InsufficientHistory {
                required: 2,
                available: rows,
            });
        }
        let n = self.ids.len();
        let mut returns = DMatrix::from_element(rows - 1, n, f64::NAN);
        let mut warnings = Vec::new();
        for j in 0..n {
            let mut last_seen: Option<usize> = None;
            for t in 0..rows {
                let level = self.levels[(t, j)];
                if !level.is_finite() {
                    continue;
                }
                if let Some(prev) = last_seen {
                    let previous = self.levels[(prev, j)];
                    let r = if log_returns {
                        (level / previous).ln()
                    } else {
                        level / previous - 1.0
                    };
                    returns[(t - 1, j)] = r;
                    if t - prev > 1 {
                        warnings.push(format!(
                            "{}: return on {} bridges a gap since {}",
                            self.ids[j], self.dates[t], self.dates[prev]
                        ));
                    }
                }
                last_seen = Some(t);
            }
        }
        let panel = ReturnPanel::new(self.dates[1..].to_vec(), returns)?;
        Ok((panel, warnings))
    }
}

/// Loads the long-format spread file, converting tranche rows (empty
/// spread, upfront/running present) via the equivalent-spread fixed
/// point. Nonpositive spreads are excluded with a warning.
pub fn load_spread_panel(path: &Path, ctx: &SpreadContext) -> Result<SpreadPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Invalid(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let date_col = col("date").ok_or_else(|| parse_err(path, 1, "missing column 'date'"))?;
    let id_col = col("id").ok_or_else(|| parse_err(path, 1, "missing column 'id'"))?;
    let spread_col = col("spread");
    let upfront_col = col("upfront");
    let running_col = col("running");
    let bc1_col = col("base_corr_k1");
    let bc2_col = col("base_corr_k2");
    if spread_col.is_none() && (upfront_col.is_none() || running_col.is_none()) {
        return Err(parse_err(
            path,
            1,
            "need a 'spread' column or 'upfront'+'running' columns",
        ));
    }

    let mut observations: BTreeMap<(NaiveDate, String), f64> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| parse_err(path, row, e.to_string()))?;
        let field = |idx: Option<usize>| -> Option<&str> {
            idx.and_then(|c| record.get(c)).filter(|v| !v.is_empty())
        };
        let date_str = field(Some(date_col))
            .ok_or_else(|| parse_err(path, row, "empty date"))?;
        let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d").map_err(|_| {
            parse_err(path, row, format!("invalid ISO-8601 date '{date_str}'"))
        })?;
        let id = field(Some(id_col))
            .ok_or_else(|| parse_err(path, row, "empty id"))?
            .to_string();

        let spread = match field(spread_col) {
            Some(raw) => {
                let mut s: f64 = raw.parse().map_err(|_| {
                    parse_err(path, row, format!("invalid spread '{raw}'"))
                })?;
                if ctx.spreads_in_bps {
                    s /= 1e4;
                }
                s
            }
            None => {
                // Tranche row: upfront + running converted to the
                // financially equivalent running spread.
                let upfront: f64 = field(upfront_col)
                    .ok_or_else(|| parse_err(path, row, "row has neither spread nor upfront"))?
                    .parse()
                    .map_err(|_| parse_err(path, row, "invalid upfront"))?;
                let running: f64 = field(running_col)
                    .ok_or_else(|| parse_err(path, row, "tranche row missing running spread"))?
                    .parse()
                    .map_err(|_| parse_err(path, row, "invalid running spread"))?;
                let running = if ctx.spreads_in_bps { running / 1e4 } else { running };
                let parse_corr = |idx: Option<usize>| -> Result<f64> {
                    match field(idx) {
                        Some(raw) => raw
                            .parse()
                            .map_err(|_| parse_err(path, row, "invalid base correlation")),
                        None => Ok(0.0),
                    }
                };
                let bc1 = parse_corr(bc1_col)?;
                let bc2 = parse_corr(bc2_col)?;
                let maturity = *ctx.maturities.get(&id).ok_or_else(|| {
                    parse_err(path, row, format!("no maturity known for tranche '{id}'"))
                })?;
                // Attachment points are not part of the wire format; the
                // conversion only reads upfront, running and the flat
                // hazard conventions.
                let quote = TrancheQuote::new(
                    0.0, 1.0, upfront, running, bc1, bc2, 0.0, ctx.recovery, maturity, ctx.rate,
                )
                .map_err(|e| parse_err(path, row, e.to_string()))?;
                credit::tranche_equivalent_spread(&quote)
                    .map_err(|e| parse_err(path, row, e.to_string()))?
                    .spread
            }
        };
        if !(spread > 0.0) {
            warnings.push(format!(
                "{}:{row}: nonpositive spread {spread} for {id} on {date}, row excluded",
                path.display()
            ));
            continue;
        }
        if observations.insert((date, id.clone()), spread).is_some() {
            return Err(parse_err(
                path,
                row,
                format!("duplicate observation for {id} on {date}"),
            ));
        }
    }

    let dates: Vec<NaiveDate> = observations
        .keys()
        .map(|(d, _)| *d)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let ids: Vec<String> = observations
        .keys()
        .map(|(_, id)| id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if dates.is_empty() {
        return Err(Error::Invalid(format!(
            "{} contains no usable observations",
            path.display()
        )));
    }
    let date_index: BTreeMap<NaiveDate, usize> =
        dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let id_index: BTreeMap<&String, usize> =
        ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let mut levels = DMatrix::from_element(dates.len(), ids.len(), f64::NAN);
    for ((date, id), spread) in &observations {
        levels[(date_index[date], id_index[id])] = *spread;
    }
    Ok(SpreadPanel {
        dates,
        ids,
        levels,
        warnings,
    })
}

/// Loads positions: `id,net_notional,side` with side seller|buyer.
pub fn load_positions(path: &Path) -> Result<Vec<CdsPosition>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Invalid(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(path, 1, format!("missing column '{name}'")))
    };
    let id_col = col("id")?;
    let notional_col = col("net_notional")?;
    let side_col = col("side")?;

    let mut positions = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| parse_err(path, row, e.to_string()))?;
        let id = record
            .get(id_col)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| parse_err(path, row, "empty id"))?;
        if !seen.insert(id.to_string()) {
            return Err(parse_err(path, row, format!("duplicate position id '{id}'")));
        }
        let notional: f64 = record
            .get(notional_col)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err(path, row, "invalid net_notional"))?;
        if !(notional > 0.0) {
            return Err(parse_err(
                path,
                row,
                format!("net_notional must be positive, got {notional}"),
            ));
        }
        let side = match record.get(side_col).unwrap_or("").to_ascii_lowercase().as_str() {
            "seller" => Side::Seller,
            "buyer" => Side::Buyer,
            other => {
                return Err(parse_err(
                    path,
                    row,
                    format!("side must be seller or buyer, got '{other}'"),
                ))
            }
        };
        positions.push(CdsPosition::from_side(id, notional, side)?);
    }
    if positions.is_empty() {
        return Err(Error::Invalid(format!(
            "{} contains no positions",
            path.display()
        )));
    }
    Ok(positions)
}

/// Writes a file atomically: contents land in a sibling temp file which is
/// renamed over the target, so a crashed run never leaves partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::config::RunConfig;

    fn write(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, content).unwrap();
        path
    }

    fn ctx() -> SpreadContext {
        SpreadContext {
            maturities: [("TRX".to_string(), 5.0)].into_iter().collect(),
            recovery: 0.4,
            rate: 0.02,
            spreads_in_bps: false,
        }
    }

    #[test]
    fn instruments_parse_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "instruments.csv",
            "id,isCDX,isIG,maturity_years,series,isIndex,note\n\
             CDX_IG_9_5Y,1,1,5,9,1,extra ignored\n\
             ITX_EU_9_10Y,0,1,10,9,1,\n",
        );
        let factors = RunConfig::default().factors;
        let instruments = load_instruments(&path, &factors).unwrap();
        assert_eq!(instruments.len(), 2);
        let exposure = instruments[0].exposure(&factors).unwrap();
        assert_eq!(exposure.values(), &[1.0, 1.0, 5.0, 9.0, 1.0]);
    }

    #[test]
    fn duplicate_instrument_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "instruments.csv",
            "id,isCDX,isIG,maturity_years,series,isIndex\nA,1,1,5,9,1\nA,0,1,5,9,1\n",
        );
        let err = load_instruments(&path, &RunConfig::default().factors).unwrap_err();
        assert!(err.to_string().contains("duplicate instrument id 'A'"), "{err}");
    }

    #[test]
    fn nonbinary_flag_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "instruments.csv",
            "id,isCDX,isIG,maturity_years,series,isIndex\nA,1,2,5,9,1\n",
        );
        let err = load_instruments(&path, &RunConfig::default().factors).unwrap_err();
        assert!(err.to_string().contains("isIG"), "{err}");
    }

    #[test]
    fn missing_factor_column_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "instruments.csv", "id,isCDX\nA,1\n");
        assert!(load_instruments(&path, &RunConfig::default().factors).is_err());
    }

    #[test]
    fn spread_panel_returns_and_gap_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "spreads.csv",
            "date,id,spread\n\
             2012-01-02,A,0.0100\n\
             2012-01-03,A,0.0102\n\
             2012-01-02,B,0.0200\n\
             2012-01-04,A,0.0104\n\
             2012-01-04,B,0.0210\n",
        );
        let panel = load_spread_panel(&path, &ctx()).unwrap();
        assert_eq!(panel.dates.len(), 3);
        assert_eq!(panel.ids, vec!["A".to_string(), "B".to_string()]);
        let (returns, warnings) = panel.returns(false).unwrap();
        // A: 0.0100 -> 0.0102 is a 2% return on 2012-01-03.
        assert!((returns.returns()[(0, 0)] - 0.02).abs() < 1e-12);
        // B misses 2012-01-03; its return bridges the gap and is flagged.
        assert!((returns.returns()[(1, 1)] - 0.05).abs() < 1e-12);
        assert!(returns.returns()[(0, 1)].is_nan());
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains('B'));
    }

    #[test]
    fn nonpositive_spread_excluded_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "spreads.csv",
            "date,id,spread\n2012-01-02,A,0.01\n2012-01-03,A,-0.002\n2012-01-04,A,0.011\n",
        );
        let panel = load_spread_panel(&path, &ctx()).unwrap();
        assert_eq!(panel.warnings.len(), 1);
        assert_eq!(panel.dates.len(), 2);
    }

    #[test]
    fn unparseable_rows_name_the_row_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "spreads.csv",
            "date,id,spread\n2012-01-02,A,0.01\nnot-a-date,A,0.01\n",
        );
        match load_spread_panel(&path, &ctx()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn tranche_rows_convert_to_equivalent_spreads() {
        let dir = tempfile::tempdir().unwrap();
        // Zero upfront: the equivalent spread is the running spread.
        let path = write(
            &dir,
            "spreads.csv",
            "date,id,spread,upfront,running,base_corr_k1,base_corr_k2\n\
             2012-01-02,TRX,,0.0,0.013,0.3,0.35\n\
             2012-01-03,TRX,,0.05,0.013,0.3,0.35\n",
        );
        let panel = load_spread_panel(&path, &ctx()).unwrap();
        assert!((panel.levels[(0, 0)] - 0.013).abs() < 1e-12);
        // Positive upfront raises the equivalent spread.
        assert!(panel.levels[(1, 0)] > 0.013 + 0.05 / 5.0 * 0.5);
    }

    #[test]
    fn duplicate_observation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "spreads.csv",
            "date,id,spread\n2012-01-02,A,0.01\n2012-01-02,A,0.02\n",
        );
        assert!(load_spread_panel(&path, &ctx()).is_err());
    }

    #[test]
    fn positions_parse_sides() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "positions.csv",
            "id,net_notional,side\nA,1000000,seller\nB,250000,Buyer\n",
        );
        let positions = load_positions(&path).unwrap();
        assert_eq!(positions[0].notional, 1e6);
        assert_eq!(positions[1].notional, -2.5e5);
        let bad = write(&dir, "bad.csv", "id,net_notional,side\nA,0,seller\n");
        assert!(load_positions(&bad).is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("report.json");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        assert!(!path.with_extension("json.tmp").exists());
    }
}
