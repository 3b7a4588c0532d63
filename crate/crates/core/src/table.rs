//! Data files: one row per unit, named numeric columns.
//!
//! A first column named `id`, `unit` or `unit_id` is taken as the unit
//! identifier and ignored. The response is the column named by the caller;
//! every other column is a covariate, and an intercept is added.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::DesignData;
use crate::output::write_atomic;

const ID_NAMES: [&str; 3] = ["id", "unit", "unit_id"];

pub fn parse_data_csv(text: &str, response: &str, origin: &Path) -> Result<DesignData> {
    let csv_err = |message: String| Error::Csv {
        path: origin.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let skip_first = headers.first().is_some_and(|h| ID_NAMES.iter().any(|n| h.eq_ignore_ascii_case(n)));
    let ycol = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| csv_err(format!("missing response column `{response}`")))?;
    let xcols: Vec<usize> = (0..headers.len()).filter(|&c| c != ycol && !(skip_first && c == 0)).collect();
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(e.to_string()))?;
        let get = |c: usize| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| csv_err(format!("line {}, column {}: bad number `{s}`", r + 2, c + 1)))
        };
        y.push(get(ycol)?);
        for &c in &xcols {
            x.push(get(c)?);
        }
    }
    let n = y.len();
    let covariates = DMatrix::from_row_slice(n, xcols.len(), &x);
    let names = xcols.iter().map(|&c| headers[c].clone()).collect();
    DesignData::with_intercept(DVector::from_vec(y), covariates, names)
}

pub fn load_data_csv(path: &Path, response: &str) -> Result<DesignData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_data_csv(&text, response, path)
}

/// Write `id, y, covariates...` (intercept column dropped).
pub fn write_data_csv(path: &Path, data: &DesignData) -> Result<()> {
    let mut out = String::from("id,y");
    for name in &data.names[1..] {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..data.n() {
        out.push_str(&format!("{},{}", i, data.y[i]));
        for c in 1..data.k() {
            out.push_str(&format!(",{}", data.x[(i, c)]));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_coords_csv(path: &Path, coords: &[[f64; 2]]) -> Result<()> {
    let mut out = String::from("x,y\n");
    for c in coords {
        out.push_str(&format!("{},{}\n", c[0], c[1]));
    }
    write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_column_skipped_and_response_picked() {
        let d = parse_data_csv("id,x1,y,x2\n0,1,2,3\n1,4,5,6\n2,0,1,9\n3,2,2,2\n", "y", Path::new("t.csv")).unwrap();
        assert_eq!(d.names, vec!["(Intercept)", "x1", "x2"]);
        assert_eq!(d.y.as_slice(), &[2.0, 5.0, 1.0, 2.0]);
        assert_eq!(d.x[(1, 2)], 6.0);
    }

    #[test]
    fn bad_cell_reports_line_and_column() {
        let e = parse_data_csv("y,x1\n1,2\n3,abc\n", "y", Path::new("t.csv")).unwrap_err();
        assert!(e.to_string().contains("line 3, column 2"), "{e}");
        let e = parse_data_csv("y,x1\n1,2\n", "z", Path::new("t.csv")).unwrap_err();
        assert!(e.to_string().contains("`z`"));
    }

    #[test]
    fn write_then_read() {
        let dir = std::env::temp_dir().join(format!("lrs-table-{}", std::process::id()));
        let d = parse_data_csv("y,a,b\n1,2,3\n4,5,6.5\n0.1,-2,1e-3\n7,0,8\n", "y", Path::new("t")).unwrap();
        let p = dir.join("d.csv");
        write_data_csv(&p, &d).unwrap();
        let back = load_data_csv(&p, "y").unwrap();
        assert_eq!(back, d);
        std::fs::remove_dir_all(&dir).ok();
    }
}
