//! CSV input: a header row, comma separated, numeric cells.

use std::collections::BTreeSet;
use std::path::Path;

use csdr_core::Dataset;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Open { path: String, source: std::io::Error },

    #[error("line {line}: {message}")]
    Line { line: u64, message: String },

    #[error("CSV input has no header row")]
    NoHeader,

    #[error("CSV input has no data rows")]
    Empty,

    #[error("column '{0}' not found in header")]
    MissingColumn(String),

    #[error("line {line}, column '{column}': cannot parse '{value}' as a finite number")]
    NotNumeric { line: u64, column: String, value: String },

    #[error("column '{0}' is constant and cannot be scaled")]
    ConstantColumn(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Model(#[from] csdr_core::SdrError),
}

/// Raw cells with the source line of every row.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub lines: Vec<u64>,
}

impl CsvTable {
    pub fn column_index(&self, name: &str) -> Result<usize, DataError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }
}

pub fn read_csv_path(path: &Path) -> Result<CsvTable, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Open {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file)
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<CsvTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let line_error = |e: csv::Error| {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        let message = match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                format!("expected {expected_len} fields, found {len}")
            }
            _ => e.to_string(),
        };
        DataError::Line { line, message }
    };
    let headers: Vec<String> = rdr.headers().map_err(line_error)?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(DataError::NoHeader);
    }
    let mut seen = BTreeSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(DataError::Invalid(format!("duplicate column name '{h}'")));
        }
    }
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(line_error)?;
        lines.push(rec.position().map(|p| p.line()).unwrap_or(0));
        rows.push(rec.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(CsvTable { headers, rows, lines })
}

/// How the table becomes a regression dataset.
#[derive(Debug, Clone, Default)]
pub struct PrepareOptions {
    pub response: String,
    /// Categorical columns expanded into indicators for every level but the last.
    pub dummies: Vec<String>,
    /// Divide each covariate by its standard deviation (divisor `n`), so that
    /// directions are read on a common scale.
    pub scale_columns: bool,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub covariates: Vec<String>,
    pub response: String,
}

fn parse_cell(table: &CsvTable, row: usize, col: usize) -> Result<f64, DataError> {
    let raw = &table.rows[row][col];
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DataError::NotNumeric {
            line: table.lines[row],
            column: table.headers[col].clone(),
            value: raw.clone(),
        }),
    }
}

/// Distinct levels of a column: numeric order when every level parses as a
/// number, byte order otherwise.
pub fn levels(values: &[&str]) -> Vec<String> {
    let distinct: BTreeSet<&str> = values.iter().copied().collect();
    let mut out: Vec<String> = distinct.into_iter().map(str::to_string).collect();
    let numeric: Option<Vec<f64>> = out.iter().map(|v| v.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(out).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        out = pairs.into_iter().map(|(_, s)| s).collect();
    }
    out
}

pub fn prepare(table: &CsvTable, opts: &PrepareOptions) -> Result<PreparedData, DataError> {
    let y_col = table.column_index(&opts.response)?;
    let mut dummy_cols = Vec::new();
    for name in &opts.dummies {
        let c = table.column_index(name)?;
        if c == y_col {
            return Err(DataError::Invalid(format!("response column '{name}' cannot be dummy coded")));
        }
        dummy_cols.push(c);
    }

    let n = table.rows.len();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    for (c, header) in table.headers.iter().enumerate() {
        if c == y_col {
            continue;
        }
        if dummy_cols.contains(&c) {
            let cells: Vec<&str> = table.rows.iter().map(|r| r[c].as_str()).collect();
            let lv = levels(&cells);
            if lv.len() < 2 {
                return Err(DataError::ConstantColumn(header.clone()));
            }
            for level in &lv[..lv.len() - 1] {
                columns.push(cells.iter().map(|&v| if v == level { 1.0 } else { 0.0 }).collect());
                names.push(format!("{header}={level}"));
            }
            continue;
        }
        let col = (0..n).map(|r| parse_cell(table, r, c)).collect::<Result<Vec<_>, _>>()?;
        columns.push(col);
        names.push(header.clone());
    }
    if columns.is_empty() {
        return Err(DataError::Invalid("no covariate columns".into()));
    }
    let y = (0..n).map(|r| parse_cell(table, r, y_col)).collect::<Result<Vec<_>, _>>()?;

    if opts.scale_columns {
        for (col, name) in columns.iter_mut().zip(&names) {
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            if var <= 0.0 {
                return Err(DataError::ConstantColumn(name.clone()));
            }
            let sd = var.sqrt();
            col.iter_mut().for_each(|v| *v /= sd);
        }
    }

    let x = DMatrix::from_fn(n, columns.len(), |i, k| columns[k][i]);
    let dataset = Dataset::new(x, DVector::from_vec(y))?;
    Ok(PreparedData {
        dataset,
        covariates: names,
        response: opts.response.clone(),
    })
}

/// Write a dataset as CSV with columns `x1..xp,y`.
pub fn write_dataset<W: std::io::Write>(ds: &Dataset, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let p = ds.p();
    let mut header: Vec<String> = (1..=p).map(|k| format!("x{k}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = (0..p).map(|k| ds.x()[(i, k)].to_string()).collect();
        rec.push(ds.y()[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
