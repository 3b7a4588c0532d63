use std::collections::BTreeMap;
use std::path::Path;

use super::SpatialWeights;
use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// Parse whitespace-separated `i j w` lines. `#` starts a comment. The
/// matrix is symmetrised by taking the larger of w_ij and w_ji. When `n` is
/// not given it is one more than the largest index seen.
pub fn parse_edge_list(text: &str, n: Option<usize>, one_based: bool) -> Result<SpatialWeights> {
    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut max_index = 0usize;
    let mut any = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected `i j weight`, found {} fields", fields.len()),
            });
        }
        let index = |s: &str| -> Result<usize> {
            let v: usize = s.parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad index `{s}`"),
            })?;
            if one_based {
                v.checked_sub(1).ok_or(Error::Parse {
                    line,
                    message: "index 0 in one-based input".into(),
                })
            } else {
                Ok(v)
            }
        };
        let i = index(fields[0])?;
        let j = index(fields[1])?;
        let w: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad weight `{}`", fields[2]),
        })?;
        if !w.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("weight `{}` is not finite", fields[2]),
            });
        }
        if w < 0.0 {
            return Err(Error::NegativeWeight { i, j, weight: w });
        }
        if i == j {
            if w != 0.0 {
                return Err(Error::SelfLoop { line, unit: i });
            }
            continue;
        }
        if let Some(n) = n {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange {
                    index: i.max(j),
                    n,
                });
            }
        }
        any = true;
        max_index = max_index.max(i).max(j);
        let key = (i.min(j), i.max(j));
        let slot = entries.entry(key).or_insert(0.0);
        *slot = slot.max(w);
    }
    let n = n.unwrap_or(if any { max_index + 1 } else { 0 });
    let mut trip = Vec::with_capacity(2 * entries.len());
    for (&(i, j), &w) in &entries {
        trip.push((i, j, w));
        trip.push((j, i, w));
    }
    SpatialWeights::from_matrix(CsrMatrix::from_triplets(n, &trip))
}

pub fn load_edge_list(path: &Path, n: Option<usize>, one_based: bool) -> Result<SpatialWeights> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text, n, one_based)
}

/// Read planar coordinates from a CSV file with `x` and `y` header columns.
pub fn load_coords(path: &Path) -> Result<Vec<[f64; 2]>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| csv_err(format!("missing column `{name}`")))
    };
    let (cx, cy) = (col("x")?, col("y")?);
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(e.to_string()))?;
        let get = |c: usize| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse().map_err(|_| {
                csv_err(format!("line {}, column {}: bad number `{s}`", r + 2, c + 1))
            })
        };
        out.push([get(cx)?, get(cy)?]);
    }
    Ok(out)
}
