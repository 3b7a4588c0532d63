//! On-disk cache of eigenpairs keyed by a hash of the matrix and rank.
//!
//! Layout: 8-byte magic, n and l as little-endian u64, l eigenvalues, then
//! the vectors column by column, all as little-endian f64.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use super::{top_l_eigenpairs, EigenBasis, EigenOptions};
use crate::error::{Error, Result};
use crate::weights::SpatialWeights;

const MAGIC: &[u8; 8] = b"LRSEIG01";

pub fn save_basis(path: &Path, basis: &EigenBasis) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * basis.l() * (basis.n() + 1));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(basis.n() as u64).to_le_bytes());
    buf.extend_from_slice(&(basis.l() as u64).to_le_bytes());
    for v in basis.lambdas.iter().chain(basis.vectors.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_basis(path: &Path) -> Result<EigenBasis> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let bad = || Error::Csv {
        path: path.to_path_buf(),
        message: "not an eigenbasis cache file".into(),
    };
    if buf.len() < 24 || &buf[..8] != MAGIC {
        return Err(bad());
    }
    let word = |i: usize| u64::from_le_bytes(buf[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize;
    let (n, l) = (word(0), word(1));
    if buf.len() != 24 + 8 * l * (n + 1) {
        return Err(bad());
    }
    let mut vals = buf[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let lambdas = DVector::from_iterator(l, vals.by_ref().take(l));
    let vectors = DMatrix::from_iterator(n, l, vals);
    Ok(EigenBasis { vectors, lambdas })
}

fn cache_path(dir: &Path, w: &SpatialWeights, l: usize, opts: &EigenOptions) -> PathBuf {
    let mut h = Sha256::new();
    h.update(w.content_hash().as_bytes());
    h.update((l as u64).to_le_bytes());
    h.update(format!("{:?}{:?}", opts.method, opts.ranking).as_bytes());
    dir.join(format!("eig-{}.bin", crate::instrument::hex(&h.finalize())))
}

/// `top_l_eigenpairs` with a cache directory. A damaged cache entry is
/// recomputed and overwritten.
pub fn top_l_eigenpairs_cached(
    w: &SpatialWeights,
    l: usize,
    opts: &EigenOptions,
    dir: &Path,
) -> Result<EigenBasis> {
    let path = cache_path(dir, w, l, opts);
    if let Ok(b) = load_basis(&path) {
        if b.n() == w.n && b.l() == l {
            return Ok(b);
        }
    }
    let b = top_l_eigenpairs(w, l, opts)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_basis(&path, &b)?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_hit() {
        let dir = tempfile::tempdir().unwrap();
        let w = SpatialWeights::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)])
            .unwrap()
            .scale_by_max_eigenvalue()
            .unwrap();
        let opts = EigenOptions::default();
        let a = top_l_eigenpairs_cached(&w, 3, &opts, dir.path()).unwrap();
        let b = top_l_eigenpairs_cached(&w, 3, &opts, dir.path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, top_l_eigenpairs(&w, 3, &opts).unwrap());
        let p = dir.path().join("junk.bin");
        std::fs::write(&p, b"nope").unwrap();
        assert!(load_basis(&p).is_err());
    }
}
