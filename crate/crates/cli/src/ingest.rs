//! CSV ingestion: a header row with one `y` column, every other column a
//! numeric covariate. Errors name the offending row and column.

use anyhow::{anyhow, bail, Context, Result};
use std::path::Path;

#[derive(Debug)]
pub struct RawData {
    pub y: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub names: Vec<String>,
}

pub fn ingest_csv(path: &Path) -> Result<RawData> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| anyhow!("{}: empty file", path.display()))?;
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    let y_idx = cols
        .iter()
        .position(|c| c == "y")
        .ok_or_else(|| anyhow!("{}: no column named `y` in header", path.display()))?;
    let names: Vec<String> = cols
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != y_idx)
        .map(|(_, c)| c.clone())
        .collect();

    let mut y = Vec::new();
    let mut x = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            bail!(
                "{}: row {} has {} cells, expected {}",
                path.display(),
                lineno + 1,
                cells.len(),
                cols.len()
            );
        }
        let mut row = Vec::with_capacity(cols.len() - 1);
        let mut yv = f64::NAN;
        for (ci, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                anyhow!(
                    "{}: row {} column `{}`: cannot parse {:?} as a number",
                    path.display(),
                    lineno + 1,
                    cols[ci],
                    cell.trim()
                )
            })?;
            if !v.is_finite() {
                bail!(
                    "{}: row {} column `{}`: non-finite value {:?}",
                    path.display(),
                    lineno + 1,
                    cols[ci],
                    cell.trim()
                );
            }
            if ci == y_idx {
                yv = v;
            } else {
                row.push(v);
            }
        }
        y.push(yv);
        x.push(row);
    }
    if y.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    if y.len() <= names.len() {
        bail!(
            "{}: {} observations cannot identify {} covariates",
            path.display(),
            y.len(),
            names.len()
        );
    }
    Ok(RawData { y, x, names })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_row_file() {
        let f = write_tmp("y,x\n1.0,2.0\n3.0,4.0\n");
        let d = ingest_csv(f.path()).unwrap();
        assert_eq!(d.y, vec![1.0, 3.0]);
        assert_eq!(d.x, vec![vec![2.0], vec![4.0]]);
        assert_eq!(d.names, vec!["x"]);
    }

    #[test]
    fn missing_y_column() {
        let f = write_tmp("a,b\n1,2\n");
        let err = ingest_csv(f.path()).unwrap_err().to_string();
        assert!(err.contains("no column named `y`"), "{err}");
    }

    #[test]
    fn nan_cell_named_in_error() {
        let f = write_tmp("y,x\n1.0,2.0\nNaN,4.0\n5.0,6.0\n");
        let err = ingest_csv(f.path()).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
        assert!(err.contains("`y`"), "{err}");
    }

    #[test]
    fn non_numeric_cell_named_in_error() {
        let f = write_tmp("y,x\n1.0,hello\n");
        let err = ingest_csv(f.path()).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("`x`"), "{err}");
    }

    #[test]
    fn too_few_rows_for_covariates() {
        let f = write_tmp("y,a,b\n1,2,3\n4,5,6\n");
        let err = ingest_csv(f.path()).unwrap_err().to_string();
        assert!(err.contains("cannot identify"), "{err}");
    }

    #[test]
    fn lidar_shaped_file() {
        let mut content = String::from("y,range\n");
        for i in 0..221 {
            content.push_str(&format!("{},{}\n", -0.5 + 0.001 * i as f64, 390 + i));
        }
        let f = write_tmp(&content);
        let d = ingest_csv(f.path()).unwrap();
        assert_eq!(d.y.len(), 221);
        assert_eq!(d.names.len(), 1);
    }
}
