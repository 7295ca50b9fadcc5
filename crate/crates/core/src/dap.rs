//! Direct attribute prediction: one probabilistic linear classifier per
//! attribute, combined into class posteriors through the class-attribute
//! table.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::compat::ScoreVector;
use crate::dataset::{AttributeTable, FeatureSet};
use crate::error::{Error, Result};

/// Probabilities are clamped into `[EPS, 1-EPS]` before taking logs, so a
/// confidently wrong attribute cannot produce an infinite class score.
pub const PROB_EPS: f64 = 1e-12;

const GRAD_TOL: f64 = 1e-6;
const MAX_NEWTON_ITERS: usize = 100;

pub(crate) const BANK_MAGIC: u64 = u64::from_le_bytes(*b"LEMBBANK");

/// One regularized logistic model per attribute: `p_e(x) = sigmoid(w_e'x + b_e)`.
#[derive(Debug, Clone)]
pub struct AttributeClassifierBank {
    /// D x E, one weight column per attribute.
    weights: Array2<f64>,
    bias: Vec<f64>,
    /// Attributes whose training targets were single-class; their
    /// probability is a constant prior baked into the bias.
    degenerate: Vec<bool>,
}

impl AttributeClassifierBank {
    pub fn dim_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_attributes(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn degenerate(&self) -> &[bool] {
        &self.degenerate
    }

    /// Per-attribute probabilities for one sample, clamped away from 0 and 1.
    pub fn probabilities(&self, x: ArrayView1<'_, f32>) -> Result<Vec<f64>> {
        if x.len() != self.dim_in() {
            return Err(Error::DimMismatch {
                context: "feature vector",
                expected: self.dim_in(),
                found: x.len(),
            });
        }
        let mut probs = Vec::with_capacity(self.num_attributes());
        for e in 0..self.num_attributes() {
            let mut z = self.bias[e];
            for (d, &xv) in x.iter().enumerate() {
                z += xv as f64 * self.weights[(d, e)];
            }
            probs.push(sigmoid(z).clamp(PROB_EPS, 1.0 - PROB_EPS));
        }
        Ok(probs)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fit one bank of attribute classifiers on a {0,1} table.
///
/// Sample n gets target `rho[label(n)][e]` for attribute e. The convex
/// per-attribute problems solve independently (in parallel) by damped
/// Newton iteration to gradient norm 1e-6. An attribute with single-class
/// targets is flagged degenerate and pinned to the class-level prior.
pub fn train_dap(
    data: &FeatureSet,
    tab: &AttributeTable,
    lambda: f64,
) -> Result<AttributeClassifierBank> {
    if !tab.is_zero_one() {
        return Err(Error::NonBinaryAttributes);
    }
    if tab.num_classes() != data.num_classes() {
        return Err(Error::DimMismatch {
            context: "attribute table classes",
            expected: data.num_classes(),
            found: tab.num_classes(),
        });
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda must be > 0, got {lambda}")));
    }

    let d = data.feature_dim();
    let e_count = tab.num_attributes();
    let x = DMatrix::from_fn(data.num_samples(), d, |i, j| data.features()[(i, j)] as f64);
    let train_classes: std::collections::BTreeSet<usize> =
        (0..data.num_samples()).map(|n| data.label(n)).collect();

    let columns: Vec<Result<(DVector<f64>, f64, bool)>> = (0..e_count)
        .into_par_iter()
        .map(|e| {
            let targets: Vec<f64> =
                (0..data.num_samples()).map(|n| tab.value(data.label(n), e)).collect();
            let any_pos = targets.iter().any(|&t| t == 1.0);
            let any_neg = targets.iter().any(|&t| t == 0.0);
            if !any_pos || !any_neg {
                // Class-level prior over the classes present in training.
                let prior = train_classes.iter().map(|&c| tab.value(c, e)).sum::<f64>()
                    / train_classes.len() as f64;
                let p = prior.clamp(PROB_EPS, 1.0 - PROB_EPS);
                let bias = (p / (1.0 - p)).ln();
                return Ok((DVector::zeros(d), bias, true));
            }
            let (w, b) = fit_logistic(&x, &targets, lambda, e)?;
            Ok((w, b, false))
        })
        .collect();

    let mut weights = Array2::zeros((d, e_count));
    let mut bias = vec![0.0; e_count];
    let mut degenerate = vec![false; e_count];
    for (e, col) in columns.into_iter().enumerate() {
        let (w, b, deg) = col?;
        for i in 0..d {
            weights[(i, e)] = w[i];
        }
        bias[e] = b;
        degenerate[e] = deg;
    }
    Ok(AttributeClassifierBank { weights, bias, degenerate })
}

/// Damped Newton on the mean logistic loss plus `lambda/2 ||w||^2` (bias
/// unregularized).
fn fit_logistic(
    x: &DMatrix<f64>,
    targets: &[f64],
    lambda: f64,
    attribute: usize,
) -> Result<(DVector<f64>, f64)> {
    let n = x.nrows();
    let d = x.ncols();
    let n_f = n as f64;
    // Parameter vector [w; b].
    let mut theta = DVector::zeros(d + 1);

    let eval = |theta: &DVector<f64>| -> (f64, DVector<f64>, Vec<f64>) {
        let w = theta.rows(0, d);
        let b = theta[d];
        let mut loss = 0.0;
        let mut grad = DVector::zeros(d + 1);
        let mut probs = vec![0.0; n];
        for i in 0..n {
            let z = x.row(i).transpose().dot(&w.clone_owned()) + b;
            let p = sigmoid(z);
            probs[i] = p;
            // Numerically stable -[t log p + (1-t) log(1-p)].
            loss += if z >= 0.0 {
                (1.0 + (-z).exp()).ln() + z * (1.0 - targets[i])
            } else {
                (1.0 + z.exp()).ln() - z * targets[i]
            };
            let residual = (p - targets[i]) / n_f;
            for j in 0..d {
                grad[j] += residual * x[(i, j)];
            }
            grad[d] += residual;
        }
        loss /= n_f;
        for j in 0..d {
            loss += 0.5 * lambda * theta[j] * theta[j];
            grad[j] += lambda * theta[j];
        }
        (loss, grad, probs)
    };

    let (mut loss, mut grad, mut probs) = eval(&theta);
    for _ in 0..MAX_NEWTON_ITERS {
        if grad.norm() <= GRAD_TOL {
            return Ok((theta.rows(0, d).clone_owned(), theta[d]));
        }
        // H = X'SX/n + lambda I (bias row/col unregularized).
        let mut h = DMatrix::zeros(d + 1, d + 1);
        for i in 0..x.nrows() {
            let s = (probs[i] * (1.0 - probs[i])).max(1e-10) / n_f;
            for a in 0..d {
                let xa = x[(i, a)];
                for b in a..d {
                    h[(a, b)] += s * xa * x[(i, b)];
                }
                h[(a, d)] += s * xa;
            }
            h[(d, d)] += s;
        }
        for a in 0..d {
            for b in a..d {
                h[(b, a)] = h[(a, b)];
            }
            h[(a, a)] += lambda;
            h[(d, a)] = h[(a, d)];
        }

        let step = match h.clone().cholesky() {
            Some(chol) => chol.solve(&grad),
            None => {
                // Levenberg fallback for a numerically semidefinite Hessian.
                for a in 0..=d {
                    h[(a, a)] += 1e-8;
                }
                h.cholesky()
                    .ok_or(Error::NoConvergence { attribute, grad_norm: grad.norm() })?
                    .solve(&grad)
            }
        };

        // Backtrack until the objective actually decreases.
        let mut t = 1.0;
        loop {
            let candidate = &theta - t * &step;
            let (new_loss, new_grad, new_probs) = eval(&candidate);
            if new_loss <= loss || t < 1e-8 {
                theta = candidate;
                loss = new_loss;
                grad = new_grad;
                probs = new_probs;
                break;
            }
            t *= 0.5;
        }
    }

    if grad.norm() <= GRAD_TOL {
        Ok((theta.rows(0, d).clone_owned(), theta[d]))
    } else {
        Err(Error::NoConvergence { attribute, grad_norm: grad.norm() })
    }
}

/// Log-posterior class scores:
/// `log p(y|x) = sum_e [ rho(y,e) log p_e + (1 - rho(y,e)) log(1 - p_e) ]`
/// with the attribute probabilities clamped into `[EPS, 1-EPS]`.
pub fn dap_posteriors(
    bank: &AttributeClassifierBank,
    x: ArrayView1<'_, f32>,
    tab: &AttributeTable,
) -> Result<ScoreVector> {
    if !tab.is_zero_one() {
        return Err(Error::NonBinaryAttributes);
    }
    if tab.num_attributes() != bank.num_attributes() {
        return Err(Error::DimMismatch {
            context: "attribute count",
            expected: bank.num_attributes(),
            found: tab.num_attributes(),
        });
    }
    let probs = bank.probabilities(x)?;
    let log_p: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    let log_q: Vec<f64> = probs.iter().map(|p| (1.0 - p).ln()).collect();
    let scores = (0..tab.num_classes())
        .map(|y| {
            (0..tab.num_attributes())
                .map(|e| {
                    let rho = tab.value(y, e);
                    rho * log_p[e] + (1.0 - rho) * log_q[e]
                })
                .sum()
        })
        .collect();
    Ok(ScoreVector::new(scores))
}

/// Highest-posterior class, lowest id on ties.
pub fn predict_dap(
    bank: &AttributeClassifierBank,
    x: ArrayView1<'_, f32>,
    tab: &AttributeTable,
) -> Result<usize> {
    Ok(dap_posteriors(bank, x, tab)?.argmax())
}

/// Bank file: the model layout plus a bias block.
/// `magic u64 | d u64 | e u64 | d*e f64 weights | e f64 bias`.
/// Degenerate attributes reload as ordinary zero-weight classifiers whose
/// bias encodes the pinned probability.
pub fn write_bank(bank: &AttributeClassifierBank, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in [BANK_MAGIC, bank.dim_in() as u64, bank.num_attributes() as u64] {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    for &v in bank.weights().iter() {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    for &v in bank.bias() {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_bank(path: &Path) -> Result<AttributeClassifierBank> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut buf = [0u8; 8];
    let mut next = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        Ok(u64::from_le_bytes(buf))
    };
    if next(&mut r)? != BANK_MAGIC {
        return Err(Error::BadMagic { path: path.into(), expected: "attribute bank" });
    }
    let d = next(&mut r)? as usize;
    let e = next(&mut r)? as usize;
    let read_f64 = |r: &mut BufReader<File>| -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|err| Error::io(path, err))?;
        Ok(f64::from_le_bytes(b))
    };
    let mut weights = Array2::zeros((d, e));
    for i in 0..d {
        for j in 0..e {
            weights[(i, j)] = read_f64(&mut r)?;
        }
    }
    let mut bias = Vec::with_capacity(e);
    for _ in 0..e {
        bias.push(read_f64(&mut r)?);
    }
    Ok(AttributeClassifierBank { weights, bias, degenerate: vec![false; e] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::Rng;

    /// Classes with distinct binary signatures; features planted along
    /// per-attribute directions plus noise.
    fn planted(
        rng: &mut impl Rng,
        samples_per_class: usize,
    ) -> (FeatureSet, AttributeTable) {
        let signatures = [
            [1.0, 0.0, 1.0, 0.0],
            [0.0, 1.0, 1.0, 0.0],
            [1.0, 1.0, 0.0, 1.0],
        ];
        let tab = AttributeTable::new(
            Array2::from_shape_fn((3, 4), |(c, e)| signatures[c][e]),
            None,
        )
        .unwrap();
        let d = 8;
        // Attribute e owns feature axes 2e, 2e+1.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, sig) in signatures.iter().enumerate() {
            for _ in 0..samples_per_class {
                let mut x = vec![0.0f32; d];
                for (e, &on) in sig.iter().enumerate() {
                    let base = if on == 1.0 { 2.0 } else { -2.0 };
                    x[2 * e] = base + rng.random_range(-0.3..0.3);
                    x[2 * e + 1] = base + rng.random_range(-0.3..0.3);
                }
                rows.push(x);
                labels.push(c as u32);
            }
        }
        let features = Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j]);
        (FeatureSet::new(features, labels, 3, None).unwrap(), tab)
    }

    #[test]
    fn separable_attributes_classify_perfectly() {
        let mut rng = crate::util::seeded_rng(44);
        let (data, tab) = planted(&mut rng, 20);
        let bank = train_dap(&data, &tab, 1e-3).unwrap();
        assert!(bank.degenerate().iter().all(|&d| !d));
        let mut correct = 0;
        for n in 0..data.num_samples() {
            let probs = bank.probabilities(data.row(n)).unwrap();
            for (e, &p) in probs.iter().enumerate() {
                let truth = tab.value(data.label(n), e);
                assert_eq!((p > 0.5) as u8 as f64, truth, "attribute {e}");
            }
            if predict_dap(&bank, data.row(n), &tab).unwrap() == data.label(n) {
                correct += 1;
            }
        }
        assert_eq!(correct, data.num_samples());
    }

    #[test]
    fn constant_attribute_is_degenerate_with_clamped_prior() {
        let tab = AttributeTable::new(array![[1.0, 1.0], [0.0, 1.0]], None).unwrap();
        let features = Array2::from_shape_fn((8, 2), |(i, j)| ((i + j) % 3) as f32);
        let labels = (0..8).map(|i| (i % 2) as u32).collect();
        let data = FeatureSet::new(features, labels, 2, None).unwrap();
        let bank = train_dap(&data, &tab, 0.1).unwrap();
        assert!(!bank.degenerate()[0]);
        assert!(bank.degenerate()[1]);
        let p = bank.probabilities(data.row(0)).unwrap();
        assert!((p[1] - (1.0 - PROB_EPS)).abs() < 1e-9, "p = {}", p[1]);
    }

    #[test]
    fn solver_reaches_gradient_tolerance() {
        let mut rng = crate::util::seeded_rng(3);
        let (data, tab) = planted(&mut rng, 15);
        let lambda = 1e-2;
        let bank = train_dap(&data, &tab, lambda).unwrap();
        // Recompute the gradient at the solution for every attribute.
        let n = data.num_samples() as f64;
        for e in 0..tab.num_attributes() {
            let mut grad = vec![0.0f64; data.feature_dim() + 1];
            for i in 0..data.num_samples() {
                let mut z = bank.bias()[e];
                for d in 0..data.feature_dim() {
                    z += data.features()[(i, d)] as f64 * bank.weights()[(d, e)];
                }
                let p = sigmoid(z);
                let r = (p - tab.value(data.label(i), e)) / n;
                for d in 0..data.feature_dim() {
                    grad[d] += r * data.features()[(i, d)] as f64;
                }
                grad[data.feature_dim()] += r;
            }
            for d in 0..data.feature_dim() {
                grad[d] += lambda * bank.weights()[(d, e)];
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            assert!(norm <= 1e-6, "attribute {e}: gradient norm {norm}");
        }
    }

    #[test]
    fn posterior_hand_case_and_uniform_case() {
        // One attribute, rho = [1; 0], p = 0.9: posteriors proportional to
        // 0.9 and 0.1.
        let tab = AttributeTable::new(array![[1.0], [0.0]], None).unwrap();
        let p = 0.9f64;
        let bank = AttributeClassifierBank {
            weights: Array2::zeros((2, 1)),
            bias: vec![(p / (1.0 - p)).ln()],
            degenerate: vec![false],
        };
        let x = array![0.0f32, 0.0];
        let s = dap_posteriors(&bank, x.view(), &tab).unwrap();
        assert!((s.scores[0] - p.ln()).abs() < 1e-9);
        assert!((s.scores[1] - (1.0 - p).ln()).abs() < 1e-9);
        assert_eq!(s.argmax(), 0);

        // p = 0.5 everywhere: all classes tie, argmax falls to class 0.
        let bank = AttributeClassifierBank {
            weights: Array2::zeros((2, 1)),
            bias: vec![0.0],
            degenerate: vec![false],
        };
        let s = dap_posteriors(&bank, x.view(), &tab).unwrap();
        assert!((s.scores[0] - s.scores[1]).abs() < 1e-12);
        assert_eq!(s.argmax(), 0);
    }

    #[test]
    fn log_space_matches_linear_space_at_safe_magnitudes() {
        let mut rng = crate::util::seeded_rng(91);
        for _ in 0..50 {
            let tab = AttributeTable::new(
                Array2::from_shape_fn((3, 4), |_| f64::from(rng.random_range(0..2))),
                None,
            )
            .unwrap();
            let bank = AttributeClassifierBank {
                weights: Array2::from_shape_fn((2, 4), |_| rng.random_range(-0.8..0.8)),
                bias: vec![
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ],
                degenerate: vec![false; 4],
            };
            let x = array![
                rng.random_range(-1.0f32..1.0),
                rng.random_range(-1.0f32..1.0)
            ];
            let log_scores = dap_posteriors(&bank, x.view(), &tab).unwrap();

            // Linear-space oracle: normalized product of per-attribute
            // factors.
            let probs = bank.probabilities(x.view()).unwrap();
            let mut linear: Vec<f64> = (0..3)
                .map(|y| {
                    (0..4)
                        .map(|e| {
                            if tab.value(y, e) == 1.0 {
                                probs[e]
                            } else {
                                1.0 - probs[e]
                            }
                        })
                        .product()
                })
                .collect();
            let total: f64 = linear.iter().sum();
            for v in &mut linear {
                *v /= total;
            }
            let log_norm: Vec<f64> = {
                let mx = log_scores.scores.iter().cloned().fold(f64::MIN, f64::max);
                let exps: Vec<f64> =
                    log_scores.scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = exps.iter().sum();
                exps.iter().map(|e| e / z).collect()
            };
            for (a, b) in log_norm.iter().zip(linear.iter()) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            // Argmax agreement between the two routes, both breaking ties
            // toward the lowest class id (identical signatures tie exactly).
            let mut lin_argmax = 0;
            for (i, &v) in linear.iter().enumerate().skip(1) {
                if v > linear[lin_argmax] {
                    lin_argmax = i;
                }
            }
            assert_eq!(log_scores.argmax(), lin_argmax);
        }
    }

    #[test]
    fn argmax_invariant_under_adding_constants() {
        let mut rng = crate::util::seeded_rng(55);
        let scores: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let base = ScoreVector::new(scores.clone());
        let shifted =
            ScoreVector::new(scores.iter().map(|s| s + 123.456).collect());
        assert_eq!(base.argmax(), shifted.argmax());
    }

    #[test]
    fn rejects_non_binary_table() {
        let tab = AttributeTable::new(array![[0.9], [0.1]], None).unwrap();
        let features = Array2::ones((2, 2));
        let data = FeatureSet::new(features, vec![0, 1], 2, None).unwrap();
        assert!(matches!(
            train_dap(&data, &tab, 0.1),
            Err(Error::NonBinaryAttributes)
        ));
        let pm = AttributeTable::new(array![[1.0], [-1.0]], None).unwrap();
        assert!(matches!(
            train_dap(&data, &pm, 0.1),
            Err(Error::NonBinaryAttributes)
        ));
    }

    #[test]
    fn bank_round_trip_preserves_posteriors() {
        let mut rng = crate::util::seeded_rng(17);
        let (data, tab) = planted(&mut rng, 10);
        let bank = train_dap(&data, &tab, 1e-2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.bin");
        write_bank(&bank, &path).unwrap();
        let back = load_bank(&path).unwrap();
        for n in 0..data.num_samples() {
            let a = dap_posteriors(&bank, data.row(n), &tab).unwrap();
            let b = dap_posteriors(&back, data.row(n), &tab).unwrap();
            assert_eq!(a.scores, b.scores);
        }
    }
}
