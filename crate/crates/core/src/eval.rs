//! Metrics and report aggregation: top-1 accuracy, per-attribute ROC AUC
//! with midrank tie handling, and late score fusion.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::compat::{CompatModel, ScoreVector};
use crate::dap::AttributeClassifierBank;
use crate::dataset::{AttributeTable, FeatureSet};
use crate::embedding::ClassEmbedding;
use crate::error::{Error, Result};

/// Anything that turns a sample into class scores. Attribute scores are
/// optional and feed the AUC metric.
pub trait Scorer {
    fn num_classes(&self) -> usize;
    fn class_scores(&self, x: ArrayView1<'_, f32>) -> Result<ScoreVector>;
    fn attribute_scores(&self, _x: ArrayView1<'_, f32>) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}

/// Bilinear compatibility scorer; attribute scores are the embedding-space
/// projection, one per column of W.
pub struct BilinearScorer<'a> {
    pub model: &'a CompatModel,
    pub phi: &'a ClassEmbedding,
}

impl Scorer for BilinearScorer<'_> {
    fn num_classes(&self) -> usize {
        self.phi.num_classes()
    }

    fn class_scores(&self, x: ArrayView1<'_, f32>) -> Result<ScoreVector> {
        crate::compat::score_all(self.model, x, self.phi)
    }

    fn attribute_scores(&self, x: ArrayView1<'_, f32>) -> Result<Option<Vec<f64>>> {
        crate::compat::attribute_scores(self.model, x).map(Some)
    }
}

/// Attribute-posterior scorer; attribute scores are the per-attribute
/// probabilities.
pub struct DapScorer<'a> {
    pub bank: &'a AttributeClassifierBank,
    pub tab: &'a AttributeTable,
}

impl Scorer for DapScorer<'_> {
    fn num_classes(&self) -> usize {
        self.tab.num_classes()
    }

    fn class_scores(&self, x: ArrayView1<'_, f32>) -> Result<ScoreVector> {
        crate::dap::dap_posteriors(self.bank, x, self.tab)
    }

    fn attribute_scores(&self, x: ArrayView1<'_, f32>) -> Result<Option<Vec<f64>>> {
        self.bank.probabilities(x).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerClassAccuracy {
    pub class: usize,
    pub n: usize,
    pub correct: usize,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub n_eval: usize,
    pub correct: usize,
    /// Exactly correct / n_eval.
    pub top1: f64,
    pub per_class: Vec<PerClassAccuracy>,
    pub mean_attribute_auc: Option<f64>,
    /// One entry per attribute; `None` marks attributes excluded for
    /// having a single class in the eval truth.
    pub per_attribute_auc: Option<Vec<Option<f64>>>,
    pub excluded_attributes: Vec<usize>,
}

/// Exact fraction of matching predictions.
pub fn top1_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::DimMismatch {
            context: "prediction count",
            expected: labels.len(),
            found: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// ROC AUC of one score column against binary truth, by the rank-statistic
/// formula with midranks for ties. `None` when the truth is single-class.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based midrank shared by the tied block [i, j].
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if truth[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

#[derive(Debug, Clone)]
pub struct AttributeAuc {
    pub per_attribute: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
    /// Mean over the non-excluded attributes.
    pub mean: Option<f64>,
}

/// Per-attribute AUC of N x E scores against N x E binary truth.
/// Attributes whose truth is single-class are excluded from the mean and
/// reported.
pub fn attribute_auc(
    scores: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, f64>,
) -> Result<AttributeAuc> {
    if scores.dim() != truth.dim() {
        return Err(Error::DimMismatch {
            context: "attribute score matrix",
            expected: truth.len(),
            found: scores.len(),
        });
    }
    if truth.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::NonBinaryAttributes);
    }
    let e_count = scores.ncols();
    let mut per_attribute = Vec::with_capacity(e_count);
    let mut excluded = Vec::new();
    for e in 0..e_count {
        let col: Vec<f64> = scores.column(e).to_vec();
        let t: Vec<bool> = truth.column(e).iter().map(|&v| v == 1.0).collect();
        match roc_auc(&col, &t) {
            Some(auc) => per_attribute.push(Some(auc)),
            None => {
                per_attribute.push(None);
                excluded.push(e);
            }
        }
    }
    let included: Vec<f64> = per_attribute.iter().flatten().copied().collect();
    let mean = if included.is_empty() {
        None
    } else {
        Some(included.iter().sum::<f64>() / included.len() as f64)
    };
    Ok(AttributeAuc { per_attribute, excluded, mean })
}

/// Standardize a batch of score vectors to zero mean, unit variance over
/// all entries. Raw bilinear and posterior scales are incommensurable, so
/// fusion inputs go through this first. A constant batch collapses to
/// zeros.
pub fn standardize_scores(batch: &mut [ScoreVector]) {
    let count: usize = batch.iter().map(|s| s.scores.len()).sum();
    if count == 0 {
        return;
    }
    let mean = batch.iter().flat_map(|s| &s.scores).sum::<f64>() / count as f64;
    let var = batch
        .iter()
        .flat_map(|s| &s.scores)
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / count as f64;
    let std = var.sqrt();
    for s in batch {
        for v in &mut s.scores {
            *v = if std > 0.0 { (*v - mean) / std } else { 0.0 };
        }
    }
}

/// Element-wise weighted average `weight * a + (1 - weight) * b` of two
/// already-standardized score vectors.
pub fn late_fuse(a: &ScoreVector, b: &ScoreVector, weight: f64) -> Result<ScoreVector> {
    if a.scores.len() != b.scores.len() {
        return Err(Error::DimMismatch {
            context: "fusion class count",
            expected: a.scores.len(),
            found: b.scores.len(),
        });
    }
    let scores = a
        .scores
        .iter()
        .zip(&b.scores)
        .map(|(&x, &y)| weight * x + (1.0 - weight) * y)
        .collect();
    Ok(ScoreVector::new(scores))
}

/// Score every sample, aggregate top-1 and per-class accuracy, and when a
/// binary truth table is supplied (and the scorer yields attribute
/// scores), compute per-attribute AUC against the sample's class row.
pub fn evaluate(
    scorer: &dyn Scorer,
    data: &FeatureSet,
    attribute_truth: Option<&AttributeTable>,
) -> Result<EvalReport> {
    if data.num_samples() == 0 {
        return Err(Error::EmptyEvalSet);
    }
    if let Some(tab) = attribute_truth {
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
    }

    let c = scorer.num_classes();
    if c != data.num_classes() {
        return Err(Error::DimMismatch {
            context: "scorer class count",
            expected: data.num_classes(),
            found: c,
        });
    }

    let mut per_class: Vec<PerClassAccuracy> = (0..c)
        .map(|class| PerClassAccuracy { class, n: 0, correct: 0 })
        .collect();
    let mut correct = 0usize;
    let mut score_rows: Option<Vec<Vec<f64>>> = None;

    for n in 0..data.num_samples() {
        let x = data.row(n);
        let label = data.label(n);
        let predicted = scorer.class_scores(x)?.argmax();
        per_class[label].n += 1;
        if predicted == label {
            per_class[label].correct += 1;
            correct += 1;
        }
        if attribute_truth.is_some() {
            if let Some(attr) = scorer.attribute_scores(x)? {
                score_rows.get_or_insert_with(Vec::new).push(attr);
            }
        }
    }

    let (mean_attribute_auc, per_attribute_auc, excluded_attributes) =
        match (attribute_truth, score_rows) {
            (Some(tab), Some(rows)) if rows.len() == data.num_samples() => {
                let e_count = tab.num_attributes();
                let scores =
                    Array2::from_shape_fn((rows.len(), e_count), |(i, j)| rows[i][j]);
                let truth = Array2::from_shape_fn((rows.len(), e_count), |(i, j)| {
                    tab.value(data.label(i), j)
                });
                let auc = attribute_auc(scores.view(), truth.view())?;
                (auc.mean, Some(auc.per_attribute), auc.excluded)
            }
            _ => (None, None, Vec::new()),
        };

    Ok(EvalReport {
        n_eval: data.num_samples(),
        correct,
        top1: correct as f64 / data.num_samples() as f64,
        per_class,
        mean_attribute_auc,
        per_attribute_auc,
        excluded_attributes,
    })
}

impl EvalReport {
    /// Flat key-value lines plus CSV blocks; field order is fixed so equal
    /// reports serialize to equal bytes.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("n_eval {}\n", self.n_eval));
        out.push_str(&format!("correct {}\n", self.correct));
        out.push_str(&format!("top1 {}\n", self.top1));
        if let Some(auc) = self.mean_attribute_auc {
            out.push_str(&format!("mean_attribute_auc {auc}\n"));
        }
        if !self.excluded_attributes.is_empty() {
            let list: Vec<String> =
                self.excluded_attributes.iter().map(|e| e.to_string()).collect();
            out.push_str(&format!("excluded_attributes {}\n", list.join(",")));
        }
        out.push_str("[per_class_accuracy]\n");
        out.push_str("class,n,correct,accuracy\n");
        for pc in &self.per_class {
            let acc = if pc.n > 0 {
                (pc.correct as f64 / pc.n as f64).to_string()
            } else {
                "-".to_string()
            };
            out.push_str(&format!("{},{},{},{}\n", pc.class, pc.n, pc.correct, acc));
        }
        if let Some(aucs) = &self.per_attribute_auc {
            out.push_str("[per_attribute_auc]\n");
            out.push_str("attribute,auc\n");
            for (e, auc) in aucs.iter().enumerate() {
                match auc {
                    Some(v) => out.push_str(&format!("{e},{v}\n")),
                    None => out.push_str(&format!("{e},-\n")),
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_text().as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn top1_arithmetic() {
        assert_eq!(top1_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(top1_accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(top1_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(top1_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn auc_perfect_and_reversed() {
        let truth = [true, true, false, false];
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &truth).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &truth).unwrap(), 0.0);
        // Single-class truth is undefined.
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_none());
    }

    /// O(P*N) pairwise oracle: wins count 1, ties count 1/2.
    fn pairwise_auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
        let pos: Vec<f64> = scores
            .iter()
            .zip(truth)
            .filter(|(_, &t)| t)
            .map(|(&s, _)| s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(truth)
            .filter(|(_, &t)| !t)
            .map(|(&s, _)| s)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut total = 0.0;
        for &p in &pos {
            for &q in &neg {
                total += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
        Some(total / (pos.len() * neg.len()) as f64)
    }

    #[test]
    fn auc_matches_pairwise_oracle_with_ties() {
        use rand::Rng;
        let mut rng = crate::util::seeded_rng(6);
        for _ in 0..100 {
            let n = rng.random_range(2..20);
            // Coarse grid forces plenty of ties.
            let scores: Vec<f64> =
                (0..n).map(|_| f64::from(rng.random_range(0..5)) / 4.0).collect();
            let truth: Vec<bool> = (0..n).map(|_| rng.random_range(0..2) == 1).collect();
            match (roc_auc(&scores, &truth), pairwise_auc(&scores, &truth)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12, "{a} vs {b}"),
                (None, None) => {}
                (a, b) => panic!("disagree on definedness: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let scores = [0.1, 0.5, 0.5, -2.0, 3.0, 0.7];
        let truth = [false, true, false, false, true, true];
        let base = roc_auc(&scores, &truth).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp()).collect();
        assert_eq!(roc_auc(&transformed, &truth).unwrap(), base);
    }

    #[test]
    fn attribute_auc_excludes_single_class_columns() {
        let scores = array![[0.9, 0.1], [0.8, 0.3], [0.1, 0.9]];
        let truth = array![[1.0, 1.0], [1.0, 1.0], [0.0, 1.0]];
        let auc = attribute_auc(scores.view(), truth.view()).unwrap();
        assert_eq!(auc.per_attribute[0], Some(1.0));
        assert_eq!(auc.per_attribute[1], None);
        assert_eq!(auc.excluded, vec![1]);
        assert_eq!(auc.mean, Some(1.0));
    }

    #[test]
    fn late_fuse_weight_one_returns_first_exactly() {
        let a = ScoreVector::new(vec![0.5, -1.0, 2.0]);
        let b = ScoreVector::new(vec![9.0, 9.0, 9.0]);
        let fused = late_fuse(&a, &b, 1.0).unwrap();
        assert_eq!(fused.scores, a.scores);

        let same = late_fuse(&a, &a, 0.5).unwrap();
        assert_eq!(same.argmax(), a.argmax());
    }

    #[test]
    fn standardization_makes_scales_commensurable() {
        // System b is system a scaled by 1000; after standardization the
        // fused argmax matches the common ordering.
        let mut a = vec![
            ScoreVector::new(vec![1.0, 2.0, 0.0]),
            ScoreVector::new(vec![0.0, 1.0, 3.0]),
        ];
        let mut b = vec![
            ScoreVector::new(vec![1000.0, 2000.0, 0.0]),
            ScoreVector::new(vec![0.0, 1000.0, 3000.0]),
        ];
        standardize_scores(&mut a);
        standardize_scores(&mut b);
        for (x, y) in a.iter().zip(&b) {
            let fused = late_fuse(x, y, 0.5).unwrap();
            assert_eq!(fused.argmax(), x.argmax());
            for (p, q) in x.scores.iter().zip(&y.scores) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evaluate_single_sample_and_tie_artifact() {
        use crate::embedding::ovr_embedding;
        let phi = ovr_embedding(2).unwrap();

        // Perfect single-sample eval.
        let model = CompatModel::new(Array2::eye(2)).unwrap();
        let data =
            FeatureSet::new(array![[5.0f32, 0.0]], vec![0], 2, None).unwrap();
        let scorer = BilinearScorer { model: &model, phi: &phi };
        let report = evaluate(&scorer, &data, None).unwrap();
        assert_eq!(report.top1, 1.0);
        assert_eq!(report.n_eval, 1);

        // Zero model on a balanced 2-class set: every prediction ties and
        // falls to class 0, so top-1 equals class 0's share.
        let zero = CompatModel::zeros(2, 2);
        let data = FeatureSet::new(
            array![[1.0f32, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]],
            vec![0, 0, 1, 1],
            2,
            None,
        )
        .unwrap();
        let scorer = BilinearScorer { model: &zero, phi: &phi };
        let report = evaluate(&scorer, &data, None).unwrap();
        assert_eq!(report.top1, 0.5);
        assert!(evaluate(&scorer, &data.subset(&[]), None).is_err());
    }

    #[test]
    fn report_text_is_deterministic() {
        let report = EvalReport {
            n_eval: 4,
            correct: 3,
            top1: 0.75,
            per_class: vec![
                PerClassAccuracy { class: 0, n: 2, correct: 2 },
                PerClassAccuracy { class: 1, n: 2, correct: 1 },
            ],
            mean_attribute_auc: Some(0.875),
            per_attribute_auc: Some(vec![Some(1.0), None, Some(0.75)]),
            excluded_attributes: vec![1],
        };
        let a = report.to_text();
        let b = report.to_text();
        assert_eq!(a, b);
        assert!(a.contains("top1 0.75"));
        assert!(a.contains("1,-"));
    }
}
