//! Dated return tables and their CSV form.
//!
//! Input schema: header `date,<name>...`, ISO-8601 dates, decimal returns
//! (0.01 = 1%). Dates must be strictly increasing and column names unique.

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("file is empty")]
    Empty,
    #[error("line {line}: unparseable date {value:?}")]
    BadDate { line: usize, value: String },
    #[error("line {line}: duplicate or non-increasing date {value}")]
    BadDateOrder { line: usize, value: NaiveDate },
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("line {line}, column {column:?}: non-numeric cell {value:?}")]
    BadNumber {
        line: usize,
        column: String,
        value: String,
    },
    #[error("line {line}: expected {expected} cells, found {found}")]
    RowLength {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("table has no data rows")]
    NoRows,
}

/// What to do with rows containing blank or unparseable numeric cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Any bad cell is an error.
    #[default]
    Strict,
    /// Rows with bad cells are dropped, with a warning per row.
    DropRow,
}

/// A dated table of named return series.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnTable {
    dates: Vec<NaiveDate>,
    names: Vec<String>,
    /// Column-major values, aligned with `names`.
    columns: Vec<Vec<f64>>,
}

/// A parsed table plus non-fatal warnings.
#[derive(Debug)]
pub struct LoadedTable {
    pub table: ReturnTable,
    pub warnings: Vec<String>,
}

impl ReturnTable {
    pub fn new(
        dates: Vec<NaiveDate>,
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self, TableError> {
        if dates.is_empty() {
            return Err(TableError::NoRows);
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(TableError::BadDateOrder {
                    line: 0,
                    value: w[1],
                });
            }
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(TableError::DuplicateColumn(name.clone()));
            }
        }
        Ok(ReturnTable {
            dates,
            names,
            columns,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&[f64], TableError> {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| TableError::UnknownColumn(name.to_string()))?;
        Ok(&self.columns[idx])
    }

    pub fn column_mut(&mut self, name: &str) -> Result<&mut Vec<f64>, TableError> {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| TableError::UnknownColumn(name.to_string()))?;
        Ok(&mut self.columns[idx])
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Add `sigma_multiple` whole-series standard deviations to one cell.
    /// Used to inject synthetic jump events at the data level.
    pub fn inject_jump(
        &mut self,
        column: &str,
        row: usize,
        sigma_multiple: f64,
    ) -> Result<f64, TableError> {
        let col = self.column(column)?;
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let bump = sigma_multiple * var.sqrt();
        let col = self.column_mut(column)?;
        col[row] += bump;
        Ok(bump)
    }
}

/// Parse a return CSV.
pub fn load_returns(path: &Path, policy: MissingPolicy) -> Result<LoadedTable, TableError> {
    let raw = fs::read_to_string(path).map_err(|source| TableError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if raw.trim().is_empty() {
        return Err(TableError::Empty);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(raw.as_bytes());
    let headers = reader.headers()?.clone();
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    for (i, name) in names.iter().enumerate() {
        if names[..i].contains(name) {
            return Err(TableError::DuplicateColumn(name.clone()));
        }
    }
    let mut dates = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut warnings = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = row_idx + 2; // 1-based, after the header
        if record.len() != names.len() + 1 {
            return Err(TableError::RowLength {
                line,
                expected: names.len() + 1,
                found: record.len(),
            });
        }
        let date_str = record.get(0).unwrap_or("");
        let date =
            NaiveDate::parse_from_str(date_str, "%Y-%m-%d").map_err(|_| TableError::BadDate {
                line,
                value: date_str.to_string(),
            })?;
        if let Some(&last) = dates.last() {
            if date <= last {
                return Err(TableError::BadDateOrder { line, value: date });
            }
        }
        let mut row = Vec::with_capacity(names.len());
        let mut bad_cell: Option<(String, String)> = None;
        for (j, cell) in record.iter().skip(1).enumerate() {
            match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    bad_cell = Some((names[j].clone(), cell.to_string()));
                    break;
                }
            }
        }
        match bad_cell {
            None => {
                dates.push(date);
                for (j, v) in row.into_iter().enumerate() {
                    columns[j].push(v);
                }
            }
            Some((column, value)) => match policy {
                MissingPolicy::Strict => {
                    return Err(TableError::BadNumber {
                        line,
                        column,
                        value,
                    })
                }
                MissingPolicy::DropRow => {
                    warnings.push(format!(
                        "line {line}: dropped row {date} (bad cell {value:?} in {column})"
                    ));
                }
            },
        }
    }
    if dates.is_empty() {
        return Err(TableError::NoRows);
    }
    Ok(LoadedTable {
        table: ReturnTable {
            dates,
            names,
            columns,
        },
        warnings,
    })
}

/// Serialize a table to CSV bytes (deterministic shortest-round-trip float
/// formatting).
pub fn table_to_csv(table: &ReturnTable) -> String {
    let mut out = String::from("date");
    for name in &table.names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (t, date) in table.dates.iter().enumerate() {
        out.push_str(&date.format("%Y-%m-%d").to_string());
        for col in &table.columns {
            out.push(',');
            out.push_str(&format!("{}", col[t]));
        }
        out.push('\n');
    }
    out
}

/// Write bytes atomically: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), TableError> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp).map_err(|source| TableError::Io {
            path: tmp.display().to_string(),
            source,
        })?;
        f.write_all(bytes).map_err(|source| TableError::Io {
            path: tmp.display().to_string(),
            source,
        })?;
    }
    fs::rename(&tmp, path).map_err(|source| TableError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Wrap a synthetic market into a dated table (weekday-agnostic calendar
/// days starting 2015-01-01).
pub fn synthetic_to_table(
    market: &copula_pde_core::sim::SyntheticMarket,
) -> Result<ReturnTable, TableError> {
    let start = NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date");
    let rows = market.columns.first().map_or(0, Vec::len);
    let dates: Vec<NaiveDate> = (0..rows)
        .map(|i| start + chrono::Days::new(i as u64))
        .collect();
    let names: Vec<String> = market
        .constituent_names
        .iter()
        .chain(market.driver_names.iter())
        .cloned()
        .collect();
    ReturnTable::new(dates, names, market.columns.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_well_formed_file() {
        let f = write_temp(
            "date,A,B\n2020-01-01,0.01,0.02\n2020-01-02,-0.01,0.0\n2020-01-03,0.005,0.001\n",
        );
        let loaded = load_returns(f.path(), MissingPolicy::Strict).unwrap();
        assert_eq!(loaded.table.len(), 3);
        assert_eq!(loaded.table.names(), &["A".to_string(), "B".to_string()]);
        assert!(loaded.warnings.is_empty());
        assert_eq!(loaded.table.column("A").unwrap()[1], -0.01);
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_temp("");
        assert!(matches!(
            load_returns(f.path(), MissingPolicy::Strict),
            Err(TableError::Empty)
        ));
    }

    #[test]
    fn duplicate_dates_rejected() {
        let f = write_temp("date,A\n2020-01-01,0.01\n2020-01-01,0.02\n");
        assert!(matches!(
            load_returns(f.path(), MissingPolicy::Strict),
            Err(TableError::BadDateOrder { line: 3, .. })
        ));
    }

    #[test]
    fn unparseable_date_names_line() {
        let f = write_temp("date,A\n2020-01-01,0.01\nnot-a-date,0.02\n");
        match load_returns(f.path(), MissingPolicy::Strict) {
            Err(TableError::BadDate { line, value }) => {
                assert_eq!(line, 3);
                assert_eq!(value, "not-a-date");
            }
            other => panic!("expected BadDate, got {other:?}"),
        }
    }

    #[test]
    fn blank_cell_policies() {
        let content = "date,A\n2020-01-01,0.01\n2020-01-02,\n2020-01-03,0.03\n";
        let f = write_temp(content);
        assert!(matches!(
            load_returns(f.path(), MissingPolicy::Strict),
            Err(TableError::BadNumber { line: 3, .. })
        ));
        let loaded = load_returns(f.path(), MissingPolicy::DropRow).unwrap();
        assert_eq!(loaded.table.len(), 2);
        assert_eq!(loaded.warnings.len(), 1);
        assert!(loaded.warnings[0].contains("line 3"));
    }

    #[test]
    fn duplicate_columns_rejected() {
        let f = write_temp("date,A,A\n2020-01-01,0.01,0.02\n");
        assert!(matches!(
            load_returns(f.path(), MissingPolicy::Strict),
            Err(TableError::DuplicateColumn(_))
        ));
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let market = copula_pde_core::sim::gen_synthetic_market(
            &copula_pde_core::sim::SyntheticMarketParams::basic(2, 2, 40, 11),
        )
        .unwrap();
        let table = synthetic_to_table(&market).unwrap();
        let csv = table_to_csv(&table);
        let f = write_temp(&csv);
        let loaded = load_returns(f.path(), MissingPolicy::Strict).unwrap();
        assert_eq!(loaded.table, table);
    }

    #[test]
    fn jump_injection_adds_sigma_multiples() {
        let f = write_temp(
            "date,A\n2020-01-01,0.01\n2020-01-02,-0.01\n2020-01-03,0.01\n2020-01-04,-0.01\n",
        );
        let mut table = load_returns(f.path(), MissingPolicy::Strict).unwrap().table;
        let before = table.column("A").unwrap()[2];
        let bump = table.inject_jump("A", 2, 10.0).unwrap();
        let after = table.column("A").unwrap()[2];
        assert!((after - before - bump).abs() <= 1e-15);
        assert!(bump > 0.0);
    }
}
