//! The bilinear compatibility model: score(x, y) = theta(x)' W phi(y).
//!
//! Scores accumulate in 64-bit arithmetic even though features are stored
//! 32-bit; with feature dimensions in the tens of thousands, 32-bit
//! accumulation loses digits. Prediction ties break toward the lowest
//! class id everywhere.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::embedding::ClassEmbedding;
use crate::error::{Error, Result};

pub(crate) const MODEL_MAGIC: u64 = u64::from_le_bytes(*b"LEMBMODL");

/// The D x E parameter matrix of the bilinear form.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatModel {
    w: Array2<f64>,
}

impl CompatModel {
    pub fn new(w: Array2<f64>) -> Result<Self> {
        for ((row, col), &v) in w.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: "<memory>".into(),
                    row: row + 1,
                    col: col + 1,
                });
            }
        }
        Ok(CompatModel { w })
    }

    pub fn zeros(dim_in: usize, dim_out: usize) -> Self {
        CompatModel { w: Array2::zeros((dim_in, dim_out)) }
    }

    /// Feature dimension D.
    pub fn dim_in(&self) -> usize {
        self.w.nrows()
    }

    /// Embedding dimension E.
    pub fn dim_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.w
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.w
    }

    fn check_dims(&self, x: ArrayView1<'_, f32>, phi: Option<&ClassEmbedding>) -> Result<()> {
        if x.len() != self.dim_in() {
            return Err(Error::DimMismatch {
                context: "feature vector",
                expected: self.dim_in(),
                found: x.len(),
            });
        }
        if let Some(phi) = phi {
            if phi.dim() != self.dim_out() {
                return Err(Error::DimMismatch {
                    context: "class embedding",
                    expected: self.dim_out(),
                    found: phi.dim(),
                });
            }
        }
        Ok(())
    }
}

/// Class scores for one sample, aligned with the embedding's columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Self {
        ScoreVector { scores }
    }

    pub fn num_classes(&self) -> usize {
        self.scores.len()
    }

    /// Argmax with ties broken toward the lowest class id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate().skip(1) {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }
}

/// theta(x)' W: the per-dimension projection of a sample into embedding
/// space. With an attribute embedding, entry e is the attribute-e score.
pub fn attribute_scores(model: &CompatModel, x: ArrayView1<'_, f32>) -> Result<Vec<f64>> {
    model.check_dims(x, None)?;
    let w = model.weights();
    let mut proj = vec![0.0f64; model.dim_out()];
    for (d, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let xv = xv as f64;
        let row = w.row(d);
        for (e, p) in proj.iter_mut().enumerate() {
            *p += xv * row[e];
        }
    }
    Ok(proj)
}

/// Score every class: projects the sample once, then dots with each
/// embedding column.
pub fn score_all(
    model: &CompatModel,
    x: ArrayView1<'_, f32>,
    phi: &ClassEmbedding,
) -> Result<ScoreVector> {
    model.check_dims(x, Some(phi))?;
    let proj = attribute_scores(model, x)?;
    let scores = (0..phi.num_classes())
        .map(|y| {
            phi.class_column(y)
                .iter()
                .zip(&proj)
                .map(|(&p, &q)| p * q)
                .sum()
        })
        .collect();
    Ok(ScoreVector::new(scores))
}

/// Highest-compatibility class, lowest id on ties.
pub fn predict(
    model: &CompatModel,
    x: ArrayView1<'_, f32>,
    phi: &ClassEmbedding,
) -> Result<usize> {
    Ok(score_all(model, x, phi)?.argmax())
}

/// -||theta(x)'W - phi(y)||^2, the regression-style compatibility; used
/// for parity checks against the bilinear score.
pub fn regression_score(
    model: &CompatModel,
    x: ArrayView1<'_, f32>,
    phi: &ClassEmbedding,
    y: usize,
) -> Result<f64> {
    model.check_dims(x, Some(phi))?;
    let proj = attribute_scores(model, x)?;
    let col = phi.class_column(y);
    let sq = proj
        .iter()
        .zip(col.iter())
        .map(|(&p, &q)| (p - q) * (p - q))
        .sum::<f64>();
    Ok(-sq)
}

/// Model file: `magic u64 | d u64 | e u64 | d*e f64 row-major`, all
/// little-endian. Round trips are bit-exact.
pub fn write_model(model: &CompatModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in [MODEL_MAGIC, model.dim_in() as u64, model.dim_out() as u64] {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    for &v in model.weights().iter() {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<CompatModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut u64_buf = [0u8; 8];
    let mut next_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut u64_buf).map_err(|e| Error::io(path, e))?;
        Ok(u64::from_le_bytes(u64_buf))
    };
    if next_u64(&mut r)? != MODEL_MAGIC {
        return Err(Error::BadMagic { path: path.into(), expected: "model" });
    }
    let d = next_u64(&mut r)? as usize;
    let e = next_u64(&mut r)? as usize;
    let mut w = Array2::zeros((d, e));
    let mut buf = [0u8; 8];
    for row in 0..d {
        for col in 0..e {
            r.read_exact(&mut buf).map_err(|err| Error::io(path, err))?;
            w[(row, col)] = f64::from_le_bytes(buf);
        }
    }
    // NaN in a stored model is a corrupted file, not a usable model.
    CompatModel::new(w)
}
