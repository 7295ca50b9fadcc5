//! Shared helpers: the seeded generator contract and plain-CSV parsing.

use std::path::Path;

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Every random choice in this crate (splits, Gaussian codes, dimension
/// sampling, SGD draws) goes through a ChaCha20 stream keyed from a `u64`
/// seed via `SeedableRng::seed_from_u64` (SplitMix64 key expansion). Two
/// builds given the same seed replay the same stream.
pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
    use rand::SeedableRng;
    ChaCha20Rng::seed_from_u64(seed)
}

/// Parse one comma-separated line of reals. `row` is the 1-based data row
/// used in error messages.
pub(crate) fn parse_csv_numbers(path: &Path, row: usize, line: &str) -> Result<Vec<f64>> {
    line.split(',')
        .enumerate()
        .map(|(col, tok)| {
            let tok = tok.trim();
            tok.parse::<f64>().map_err(|_| Error::BadNumber {
                path: path.to_path_buf(),
                row,
                col: col + 1,
                token: tok.to_string(),
            })
        })
        .collect()
}

/// True when every comma-separated field parses as a number; used to detect
/// optional name headers.
pub(crate) fn is_numeric_line(line: &str) -> bool {
    !line.trim().is_empty() && line.split(',').all(|tok| tok.trim().parse::<f64>().is_ok())
}

pub(crate) fn finite_or_err(path: &Path, row: usize, col: usize, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { path: path.to_path_buf(), row, col })
    }
}
