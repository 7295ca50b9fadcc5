//! Learning procedures: rank-weighted SGD over sampled negatives,
//! multiclass structured hinge, and closed-form ridge regression.
//!
//! The ranking machinery follows the sampled-rank recipe: per violating
//! negative found after `k` draws, updates are weighted by
//! `beta[floor((C-1)/k)]` where `beta` holds prefix sums of a decreasing
//! coefficient sequence (harmonic by default), so mistakes near the top of
//! the ranking cost more.

mod ridge;
mod sgd;

use ndarray::ArrayView1;

use crate::compat::CompatModel;
use crate::dataset::FeatureSet;
use crate::embedding::ClassEmbedding;
use crate::error::{Error, Result};

pub use ridge::train_ridge;
pub use sgd::{train_ranking, train_ssvm};

/// Decreasing rank penalties `alpha` and their prefix sums `beta`.
#[derive(Debug, Clone)]
pub struct LossWeights {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl LossWeights {
    /// `alpha` must be non-negative and non-increasing; `beta` becomes its
    /// running prefix sum.
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidConfig("empty weight sequence".into()));
        }
        let mut prev = f64::INFINITY;
        for &a in &alpha {
            if !(a >= 0.0) {
                return Err(Error::InvalidConfig(format!("negative rank weight {a}")));
            }
            if a > prev {
                return Err(Error::InvalidConfig("rank weights must be non-increasing".into()));
            }
            prev = a;
        }
        let mut beta = Vec::with_capacity(alpha.len());
        let mut sum = 0.0;
        for &a in &alpha {
            sum += a;
            beta.push(sum);
        }
        Ok(LossWeights { alpha, beta })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// `beta_k` for a 1-based rank.
    pub fn beta_for_rank(&self, rank: usize) -> f64 {
        self.beta[rank - 1]
    }
}

/// The standard choice `alpha_k = 1/k`, making `beta_k` the k-th partial
/// harmonic sum.
pub fn harmonic_weights(num_classes: usize) -> Result<LossWeights> {
    if num_classes == 0 {
        return Err(Error::InvalidConfig("need at least one class".into()));
    }
    LossWeights::new((1..=num_classes).map(|k| 1.0 / k as f64).collect())
}

/// Margin violation of negative class `y` against `y_true`:
/// `delta(y_true, y) + score(x, y) - score(x, y_true)` with the 0/1 loss.
/// Positive means violating; the caller clamps at zero.
pub fn hinge_term(
    model: &CompatModel,
    phi: &ClassEmbedding,
    x: ArrayView1<'_, f32>,
    y_true: usize,
    y: usize,
) -> Result<f64> {
    let proj = crate::compat::attribute_scores(model, x)?;
    check_embedding(model, phi)?;
    Ok(hinge_from_proj(&proj, phi, y_true, y))
}

fn check_embedding(model: &CompatModel, phi: &ClassEmbedding) -> Result<()> {
    if phi.dim() != model.dim_out() {
        return Err(Error::DimMismatch {
            context: "class embedding",
            expected: model.dim_out(),
            found: phi.dim(),
        });
    }
    Ok(())
}

fn dot(proj: &[f64], col: ArrayView1<'_, f64>) -> f64 {
    proj.iter().zip(col.iter()).map(|(a, b)| a * b).sum()
}

fn hinge_from_proj(proj: &[f64], phi: &ClassEmbedding, y_true: usize, y: usize) -> f64 {
    if y == y_true {
        return 0.0;
    }
    1.0 + dot(proj, phi.class_column(y)) - dot(proj, phi.class_column(y_true))
}

/// Number of classes with a positive hinge term: an upper bound on the
/// true rank of `y_true`.
pub fn rank_upper_bound(
    model: &CompatModel,
    phi: &ClassEmbedding,
    x: ArrayView1<'_, f32>,
    y_true: usize,
) -> Result<usize> {
    let proj = crate::compat::attribute_scores(model, x)?;
    check_embedding(model, phi)?;
    Ok(rank_bound_from_proj(&proj, phi, y_true))
}

fn rank_bound_from_proj(proj: &[f64], phi: &ClassEmbedding, y_true: usize) -> usize {
    (0..phi.num_classes())
        .filter(|&y| hinge_from_proj(proj, phi, y_true, y) > 0.0)
        .count()
}

/// The rank-weighted hinge objective:
/// `(1/N) sum_n (beta_r / r) sum_y max(0, hinge)` with `r` the violator
/// count for sample n; a sample with no violators contributes zero.
pub fn warp_objective(
    model: &CompatModel,
    phi: &ClassEmbedding,
    data: &FeatureSet,
) -> Result<f64> {
    check_embedding(model, phi)?;
    if data.num_classes() != phi.num_classes() {
        return Err(Error::DimMismatch {
            context: "class count",
            expected: phi.num_classes(),
            found: data.num_classes(),
        });
    }
    let weights = harmonic_weights(phi.num_classes())?;
    let mut total = 0.0;
    for n in 0..data.num_samples() {
        let proj = crate::compat::attribute_scores(model, data.row(n))?;
        total += sample_warp_loss(&proj, phi, data.label(n), &weights);
    }
    Ok(total / data.num_samples() as f64)
}

pub(crate) fn sample_warp_loss(
    proj: &[f64],
    phi: &ClassEmbedding,
    y_true: usize,
    weights: &LossWeights,
) -> f64 {
    let mut violators = 0usize;
    let mut hinge_sum = 0.0;
    for y in 0..phi.num_classes() {
        let l = hinge_from_proj(proj, phi, y_true, y);
        if l > 0.0 {
            violators += 1;
            hinge_sum += l;
        }
    }
    if violators == 0 {
        0.0
    } else {
        weights.beta_for_rank(violators) / violators as f64 * hinge_sum
    }
}

/// Constant step size, epoch budget and early-stopping policy for the
/// stochastic trainers.
#[derive(Debug, Clone)]
pub struct RankingConfig {
    /// Constant SGD step size.
    pub eta: f64,
    /// Epoch budget; one epoch is N sampled steps.
    pub epochs: usize,
    /// Pull strength toward the prior embedding when learning phi.
    pub mu: f64,
    pub learn_w: bool,
    pub learn_phi: bool,
    pub seed: u64,
    /// Class-stratified share of samples held out for early stopping;
    /// zero disables validation and the full epoch budget runs.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig {
            eta: 0.1,
            epochs: 100,
            mu: 0.0,
            learn_w: true,
            learn_phi: false,
            seed: 0,
            validation_fraction: 0.2,
            patience: 5,
        }
    }
}

impl RankingConfig {
    pub fn validate(&self, has_prior: bool) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !self.learn_w && !self.learn_phi {
            return Err(Error::InvalidConfig("must learn at least one of W and phi".into()));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidConfig(format!("mu must be >= 0, got {}", self.mu)));
        }
        if self.mu > 0.0 && !has_prior {
            return Err(Error::InvalidConfig("mu > 0 requires a prior embedding".into()));
        }
        if self.mu == 0.0 && has_prior {
            return Err(Error::InvalidConfig("a prior embedding requires mu > 0".into()));
        }
        // The phi update must stay a convex combination plus gradient term.
        if self.eta * self.mu > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "eta * mu = {} must be <= 1",
                self.eta * self.mu
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig(format!(
                "validation_fraction must be in [0,1), got {}",
                self.validation_fraction
            )));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// What happened during a stochastic training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Validation top-1 after each epoch; empty when validation is off.
    pub val_accuracy: Vec<f64>,
    /// 1-based epoch whose parameters were kept: the first epoch achieving
    /// the best validation accuracy, or the last epoch without validation.
    pub stopping_epoch: usize,
    /// Training objective of the returned parameters (trainer-specific
    /// surrogate, estimated on at most 2048 samples).
    pub final_objective: f64,
    pub wall_clock: std::time::Duration,
}

/// Per-step learning switches for [`ranking_step`].
#[derive(Debug, Clone, Copy)]
pub struct StepParams {
    pub eta: f64,
    pub mu: f64,
    pub learn_w: bool,
    pub learn_phi: bool,
}

/// Apply one pinned update for the draw `(x, y, y_bar, k)`, the inner step
/// of the stochastic ranking trainer.
///
/// Update contract (all quantities taken before the step):
///
/// * `W[d][e] += (eta * beta[floor((C-1)/k)] * x[d]) * (phi(y)[e] - phi(y_bar)[e])`
///   evaluated in exactly that order, when `learn_w`;
/// * `phi(y)     = (1 - eta*mu) phi(y)     + eta*mu prior(y)     + eta*beta g`
///   `phi(y_bar) = (1 - eta*mu) phi(y_bar) + eta*mu prior(y_bar) - eta*beta g`
///   with `g = W' theta(x)`, when `learn_phi`; with `mu = 0` the blend
///   disappears and this is the pure learned-embedding update.
pub fn ranking_step(
    model: &mut CompatModel,
    phi: &mut ClassEmbedding,
    phi_prior: Option<&ClassEmbedding>,
    weights: &LossWeights,
    x: ArrayView1<'_, f32>,
    y: usize,
    y_bar: usize,
    k: usize,
    params: StepParams,
) -> Result<()> {
    let c = phi.num_classes();
    if y >= c || y_bar >= c || y == y_bar {
        return Err(Error::InvalidConfig(format!(
            "bad class pair y={y}, y_bar={y_bar} for C={c}"
        )));
    }
    if k == 0 || k >= c {
        return Err(Error::InvalidConfig(format!("draw count k={k} out of 1..={}", c - 1)));
    }
    if x.len() != model.dim_in() {
        return Err(Error::DimMismatch {
            context: "feature vector",
            expected: model.dim_in(),
            found: x.len(),
        });
    }
    check_embedding(model, phi)?;
    if let Some(prior) = phi_prior {
        if prior.dim() != phi.dim() || prior.num_classes() != c {
            return Err(Error::DimMismatch {
                context: "prior embedding",
                expected: phi.dim(),
                found: prior.dim(),
            });
        }
    }

    let beta = weights.beta_for_rank((c - 1) / k);
    let scale = params.eta * beta;
    let dim = phi.dim();

    // Gradient pieces from pre-step values.
    let diff: Vec<f64> = (0..dim)
        .map(|e| phi.phi()[(e, y)] - phi.phi()[(e, y_bar)])
        .collect();
    let g = if params.learn_phi {
        Some(crate::compat::attribute_scores(model, x)?)
    } else {
        None
    };

    if params.learn_w {
        let w = model.weights_mut();
        for (d, &xv) in x.iter().enumerate() {
            let xd = scale * xv as f64;
            if xd == 0.0 {
                continue;
            }
            let mut row = w.row_mut(d);
            for (e, &de) in diff.iter().enumerate() {
                row[e] += xd * de;
            }
        }
    }

    if let Some(g) = g {
        let mu_step = params.eta * params.mu;
        let pm = phi.phi_mut();
        for (e, &ge) in g.iter().enumerate() {
            if mu_step > 0.0 {
                let prior = phi_prior.expect("validated above");
                pm[(e, y)] = (1.0 - mu_step) * pm[(e, y)]
                    + mu_step * prior.phi()[(e, y)]
                    + scale * ge;
                pm[(e, y_bar)] = (1.0 - mu_step) * pm[(e, y_bar)]
                    + mu_step * prior.phi()[(e, y_bar)]
                    - scale * ge;
            } else {
                pm[(e, y)] += scale * ge;
                pm[(e, y_bar)] -= scale * ge;
            }
        }
    }
    Ok(())
}
