//! CSV ingestion and export.
//!
//! Cells are decimal numerals, empty, or `NA`. Empty and `NA` mean missing,
//! which is allowed in outcome columns only. Columns that no role refers to
//! are never parsed, so they may hold text.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use permlab_core::{Covariate, Dataset, ModelSpec, Outcome};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row}, column `{column}`: missing value outside an outcome column")]
    Missing { row: usize, column: String },
    #[error("row {row}, column `{column}`: treatment value `{value}` is not 0 or 1")]
    Treatment { row: usize, column: String, value: String },
    #[error("column `{0}` is not in the header")]
    UnknownColumn(String),
    #[error("file has no header row")]
    Empty,
    #[error("invalid filter `{0}`: expected `column op value` with op one of == != < <= > >=")]
    Filter(String),
    #[error(transparent)]
    Core(#[from] permlab_core::Error),
}

/// Raw cells with their 1-based data-row numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize, LoadError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LoadError::UnknownColumn(name.to_string()))
    }
}

pub fn read_table<R: Read>(reader: R) -> Result<Table, LoadError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| malformed(0, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(LoadError::Empty);
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| malformed(i + 1, e))?;
        rows.push((i + 1, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { headers, rows })
}

fn malformed(row: usize, e: csv::Error) -> LoadError {
    let row = e.position().map_or(row, |p| p.record() as usize);
    LoadError::Malformed {
        row,
        message: e.to_string(),
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64, LoadError> {
    cell.parse::<f64>().map_err(|_| LoadError::Parse {
        row,
        column: column.to_string(),
        value: cell.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

/// Row filter `column op literal`. Numeric literals compare numerically,
/// anything else compares as text (`==` and `!=` only).
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub column: String,
    pub op: CompareOp,
    pub literal: String,
}

impl FromStr for Filter {
    type Err = LoadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        // Two-character operators first so `<=` is not read as `<`.
        const OPS: [(&str, CompareOp); 6] = [
            ("==", CompareOp::Eq),
            ("!=", CompareOp::Ne),
            ("<=", CompareOp::Le),
            (">=", CompareOp::Ge),
            ("<", CompareOp::Lt),
            (">", CompareOp::Gt),
        ];
        for (tok, op) in OPS {
            if let Some(at) = s.find(tok) {
                let column = s[..at].trim();
                let literal = s[at + tok.len()..].trim();
                if column.is_empty() || literal.is_empty() {
                    break;
                }
                let literal = literal.trim_matches('"').to_string();
                let numeric = literal.parse::<f64>().is_ok();
                if !numeric && !matches!(op, CompareOp::Eq | CompareOp::Ne) {
                    break;
                }
                return Ok(Filter {
                    column: column.to_string(),
                    op,
                    literal,
                });
            }
        }
        Err(LoadError::Filter(s.to_string()))
    }
}

impl Filter {
    fn keep(&self, cell: &str) -> bool {
        use std::cmp::Ordering::*;
        let ord = match (cell.parse::<f64>(), self.literal.parse::<f64>()) {
            (Ok(a), Ok(b)) => a.partial_cmp(&b),
            _ => Some(cell.cmp(self.literal.as_str())),
        };
        match (self.op, ord) {
            (_, None) => false,
            (CompareOp::Eq, Some(o)) => o == Equal,
            (CompareOp::Ne, Some(o)) => o != Equal,
            (CompareOp::Lt, Some(o)) => o == Less,
            (CompareOp::Le, Some(o)) => o != Greater,
            (CompareOp::Gt, Some(o)) => o == Greater,
            (CompareOp::Ge, Some(o)) => o != Less,
        }
    }

    /// Keeps the rows satisfying the filter; row numbers are preserved.
    pub fn apply(&self, table: &mut Table) -> Result<(), LoadError> {
        let j = table.column(&self.column)?;
        table.rows.retain(|(_, cells)| self.keep(&cells[j]));
        Ok(())
    }
}

/// Builds the analysis dataset for `spec` from a parsed table.
pub fn dataset_from_table(table: &Table, spec: &ModelSpec) -> Result<Dataset, LoadError> {
    let mut outcomes = Vec::with_capacity(spec.outcome_names.len());
    for name in &spec.outcome_names {
        let j = table.column(name)?;
        let values = table
            .rows
            .iter()
            .map(|(row, cells)| {
                let c = &cells[j];
                if is_missing(c) {
                    Ok(None)
                } else {
                    parse_number(c, *row, name).map(Some)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        outcomes.push(Outcome::new(name.clone(), values));
    }

    let tj = table.column(&spec.treatment_name)?;
    let treatment = table
        .rows
        .iter()
        .map(|(row, cells)| {
            let c = &cells[tj];
            let bad = || LoadError::Treatment {
                row: *row,
                column: spec.treatment_name.clone(),
                value: c.clone(),
            };
            if is_missing(c) {
                return Err(LoadError::Missing {
                    row: *row,
                    column: spec.treatment_name.clone(),
                });
            }
            match parse_number(c, *row, &spec.treatment_name)? {
                v if v == 0.0 => Ok(0u8),
                v if v == 1.0 => Ok(1u8),
                _ => Err(bad()),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut names: Vec<&String> = Vec::new();
    for n in spec
        .lc_names
        .iter()
        .chain(spec.ipw_names.iter().flatten())
        .chain(&spec.block_names)
    {
        if !names.contains(&n) && !spec.outcome_names.contains(n) && *n != spec.treatment_name {
            names.push(n);
        }
    }
    let mut covariates = Vec::with_capacity(names.len());
    for name in names {
        let j = table.column(name)?;
        let values = table
            .rows
            .iter()
            .map(|(row, cells)| {
                let c = &cells[j];
                if is_missing(c) {
                    Err(LoadError::Missing {
                        row: *row,
                        column: name.clone(),
                    })
                } else {
                    parse_number(c, *row, name)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        covariates.push(Covariate::new(name.clone(), values));
    }

    let ds = Dataset::new(outcomes, spec.treatment_name.clone(), treatment, covariates)?;
    Ok(ds.with_blocks(&spec.block_names)?)
}

/// Reads `path` and builds the dataset for `spec`, keeping only rows that
/// pass `filter`.
pub fn load_csv(path: &Path, spec: &ModelSpec, filter: Option<&Filter>) -> Result<Dataset, LoadError> {
    let file = std::fs::File::open(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut table = read_table(std::io::BufReader::new(file))?;
    if let Some(f) = filter {
        f.apply(&mut table)?;
    }
    dataset_from_table(&table, spec)
}

/// Writes outcomes, treatment, then covariates. Missing outcomes are empty
/// cells; numbers use the shortest representation that reads back exactly.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.outcomes().iter().map(|o| o.name.as_str()).collect();
    header.push(ds.treatment_name());
    header.extend(ds.covariates().iter().map(|c| c.name.as_str()));
    w.write_record(&header)?;
    for i in 0..ds.n_rows() {
        let mut rec: Vec<String> = ds
            .outcomes()
            .iter()
            .map(|o| o.values[i].map_or_else(String::new, |v| v.to_string()))
            .collect();
        rec.push(ds.treatment()[i].to_string());
        rec.extend(ds.covariates().iter().map(|c| c.values[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, spec: &ModelSpec) -> Result<Dataset, LoadError> {
        dataset_from_table(&read_table(text.as_bytes())?, spec)
    }

    #[test]
    fn empty_cells_are_missing_outcomes() {
        let ds = load("y,D\n1.5,0\n,1\n2.0,1\n", &ModelSpec::new(&["y"], "D")).unwrap();
        assert_eq!(ds.outcomes()[0].response(), vec![1, 0, 1]);
        let ds = load("y,D\nNA,0\n3,1\n", &ModelSpec::new(&["y"], "D")).unwrap();
        assert_eq!(ds.outcomes()[0].response(), vec![0, 1]);
    }

    #[test]
    fn treatment_outside_binary_names_row() {
        let err = load("y,D\n1,0\n2,1\n3,2\n", &ModelSpec::new(&["y"], "D")).unwrap_err();
        assert!(matches!(err, LoadError::Treatment { row: 3, .. }), "{err}");
        assert!(err.to_string().contains("row 3"));
    }

    #[test]
    fn bad_covariate_names_row_and_column() {
        let spec = ModelSpec::new(&["y"], "D").with_lcvars(&["x"]);
        let err = load("y,D,x\n1,0,0.5\n2,1,abc\n", &spec).unwrap_err();
        assert_eq!(err.to_string(), "row 2, column `x`: cannot parse `abc` as a number");
        let err = load("y,D,x\n1,0,\n2,1,1\n", &spec).unwrap_err();
        assert!(matches!(err, LoadError::Missing { row: 1, .. }));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let err = read_table("y,D\n1,0\n2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LoadError::Malformed { row: 2, .. }), "{err:?}");
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(read_table("".as_bytes()), Err(LoadError::Empty)));
    }

    #[test]
    fn unused_text_columns_are_ignored() {
        let ds = load("name,y,D\nann,1,0\nbo,2,1\n", &ModelSpec::new(&["y"], "D")).unwrap();
        assert_eq!(ds.n_rows(), 2);
    }

    #[test]
    fn filters() {
        let mut t = read_table("y,D,g\n1,0,a\n2,1,b\n3,1,a\n4,0,b\n".as_bytes()).unwrap();
        "y >= 2".parse::<Filter>().unwrap().apply(&mut t).unwrap();
        assert_eq!(t.rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![2, 3, 4]);
        "g == a".parse::<Filter>().unwrap().apply(&mut t).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!("g < a".parse::<Filter>().is_err());
        assert!("y ~ 2".parse::<Filter>().is_err());
        assert!("== 2".parse::<Filter>().is_err());
        let f: Filter = "y!=3".parse().unwrap();
        assert_eq!(f.op, CompareOp::Ne);
    }

    #[test]
    fn blocks_come_from_columns() {
        let spec = ModelSpec::new(&["y"], "D").with_blocks(&["g"]);
        let ds = load("y,D,g\n1,0,5\n2,1,5\n3,1,7\n4,0,7\n", &spec).unwrap();
        assert_eq!(ds.blocks(), Some(&[0, 0, 1, 1][..]));
    }
}
