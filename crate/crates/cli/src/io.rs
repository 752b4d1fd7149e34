//! CSV ingestion and output formatting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use shrinkhs_core::model::RegressionTask;
use shrinkhs_core::netsim::Adjacency;

use crate::CliError;

/// A numeric table with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

impl Table {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

fn reader(path: &Path, flexible: bool) -> Result<csv::Reader<File>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(flexible)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => CliError::Data(format!(
            "{}: line {} has {len} fields, expected {expected_len}",
            path.display(),
            pos.as_ref().map_or(0, |p| p.line())
        )),
        csv::ErrorKind::Io(_) => CliError::Io(format!("{}: {e}", path.display())),
        _ => CliError::Data(format!("{}: {e}", path.display())),
    }
}

/// Rectangular numeric CSV with a header row. Cells are reported 1-based,
/// with the header as line 1.
pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let mut rdr = reader(path, false)?;
    let names: Vec<String> = rdr.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(CliError::Data(format!("{}: missing header row", path.display())));
    }
    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Data(format!(
                    "{}: line {}, column {} ('{}'): '{cell}' is not a number",
                    path.display(),
                    r + 2,
                    c + 1,
                    names[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!(
                    "{}: line {}, column {} ('{}'): value must be finite",
                    path.display(),
                    r + 2,
                    c + 1,
                    names[c]
                )));
            }
            rows.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    Ok(Table {
        values: DMatrix::from_row_slice(n, names.len(), &rows),
        names,
    })
}

/// Ragged rows of positive integer labels after a header line.
pub fn read_groups(path: &Path) -> Result<Vec<Vec<usize>>, CliError> {
    let mut rdr = reader(path, true)?;
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = rec
            .iter()
            .filter(|cell| !cell.is_empty())
            .enumerate()
            .map(|(c, cell)| match cell.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(CliError::Data(format!(
                    "{}: line {}, column {}: group label must be a positive integer, got '{cell}'",
                    path.display(),
                    r + 2,
                    c + 1
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(row);
    }
    Ok(out)
}

/// Square 0/1 adjacency with `p` nodes. The symmetric closure is used.
pub fn read_adjacency(path: &Path, p: usize) -> Result<Adjacency, CliError> {
    let t = read_table(path)?;
    if t.nrows() != p || t.ncols() != p {
        return Err(CliError::Data(format!(
            "{}: prior must be {p}x{p} to match the data, got {}x{}",
            path.display(),
            t.nrows(),
            t.ncols()
        )));
    }
    for i in 0..p {
        for j in 0..p {
            let v = t.values[(i, j)];
            if v != 0.0 && v != 1.0 {
                return Err(CliError::Data(format!(
                    "{}: line {}, column {}: adjacency entries must be 0 or 1, got {v}",
                    path.display(),
                    i + 2,
                    j + 1
                )));
            }
        }
    }
    Adjacency::from_matrix(&t.values).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Centres each column and scales it to unit (population) variance.
/// Constant columns are only centred.
pub fn standardize(m: &mut DMatrix<f64>) {
    let n = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n).sqrt();
        if sd > 0.0 {
            col /= sd;
        }
    }
}

/// Tasks for the general mode: column `i` of the response regressed on the
/// shared design, or on design `i` when one is given per task.
pub fn build_tasks(response: &Table, designs: &[Table], groups: Option<&[Vec<usize>]>) -> Result<Vec<RegressionTask>, CliError> {
    let q = response.ncols();
    let n = response.nrows();
    if designs.len() != 1 && designs.len() != q {
        return Err(CliError::Data(format!(
            "got {} design files for {q} responses; give one shared design or one per response",
            designs.len()
        )));
    }
    if let Some(g) = groups {
        if g.len() != q {
            return Err(CliError::Data(format!("group file has {} rows for {q} responses", g.len())));
        }
    }
    (0..q)
        .map(|i| {
            let design = &designs[if designs.len() == 1 { 0 } else { i }];
            if design.nrows() != n {
                return Err(CliError::Data(format!(
                    "design for response '{}' has {} rows, response has {n}",
                    response.names[i],
                    design.nrows()
                )));
            }
            let s = design.ncols();
            let labels = match groups {
                Some(g) if g[i].len() != s => {
                    return Err(CliError::Data(format!(
                        "group row {} has {} labels, its design has {s} columns",
                        i + 1,
                        g[i].len()
                    )))
                }
                Some(g) => g[i].clone(),
                None => vec![1; s],
            };
            let y = DVector::from_iterator(n, response.values.column(i).iter().copied());
            Ok(RegressionTask::new(i + 1, y, design.values.clone(), labels))
        })
        .collect()
}

/// 17 significant digits, `inf`/`nan` spelled out.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// CSV writer over a buffered file.
pub fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

pub fn write_row<W: Write, I, S>(w: &mut csv::Writer<W>, path: &Path, row: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn finish<W: Write>(mut w: csv::Writer<W>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn table_errors_name_the_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "x.csv", "a,b\n1,2\n3,oops\n");
        let err = read_table(&p).unwrap_err().to_string();
        assert!(err.contains("line 3, column 2 ('b')"), "{err}");
        let p = write(dir.path(), "r.csv", "a,b\n1,2\n3\n");
        let err = read_table(&p).unwrap_err().to_string();
        assert!(err.contains("line 3 has 1 fields"), "{err}");
        let p = write(dir.path(), "e.csv", "a,b\n");
        assert!(read_table(&p).is_err());
    }

    #[test]
    fn adjacency_domain() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "a,b,c\n0,1,0\n1,0,2\n0,1,0\n");
        let err = read_adjacency(&p, 3).unwrap_err().to_string();
        assert!(err.contains("0 or 1"), "{err}");
        let p = write(dir.path(), "b.csv", "a,b,c\n0,1,0\n1,0,1\n0,1,0\n");
        assert_eq!(read_adjacency(&p, 3).unwrap().num_edges(), 2);
        assert!(read_adjacency(&p, 4).is_err());
    }

    #[test]
    fn ragged_groups() {
        let dir = tempfile::tempdir().unwrap();
        let g = write(dir.path(), "g.csv", "labels\n1,2\n1,1,2,2,1\n2\n");
        let groups = read_groups(&g).unwrap();
        assert_eq!(groups.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 5, 1]);

        let y = Table {
            names: vec!["y1".into(), "y2".into(), "y3".into()],
            values: DMatrix::from_fn(4, 3, |i, j| (i + j) as f64),
        };
        let designs: Vec<Table> = [2, 5, 1]
            .iter()
            .map(|&s| Table {
                names: (0..s).map(|k| format!("x{k}")).collect(),
                values: DMatrix::from_fn(4, s, |i, j| (i * j) as f64),
            })
            .collect();
        let tasks = build_tasks(&y, &designs, Some(&groups)).unwrap();
        assert_eq!(tasks.iter().map(|t| t.s()).collect::<Vec<_>>(), vec![2, 5, 1]);
        assert!(build_tasks(&y, &designs[..2], Some(&groups)).is_err());
        let bad = write(dir.path(), "h.csv", "labels\n1,0\n");
        assert!(read_groups(&bad).is_err());
    }

    #[test]
    fn float_format() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
        let mut m = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        standardize(&mut m);
        assert!((m.column(0).norm_squared() - 3.0).abs() < 1e-12);
        assert_eq!(m.column(1).sum(), 0.0);
    }
}
