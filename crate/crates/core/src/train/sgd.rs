//! Stochastic trainers: sampled-negative ranking SGD and the max-violator
//! structured hinge, both with validation-based early stopping.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::{harmonic_weights, ranking_step, RankingConfig, StepParams, TrainReport};
use crate::compat::CompatModel;
use crate::dataset::FeatureSet;
use crate::embedding::ClassEmbedding;
use crate::error::{Error, Result};
use crate::util::seeded_rng;

/// Train the bilinear model by sampled-negative ranking SGD.
///
/// Per step: draw a sample, then draw negatives until one violates the
/// margin; the first violator triggers the rank-weighted update of
/// [`ranking_step`]. With both `learn_w` and `learn_phi` set, epochs
/// alternate between updating W and updating phi (stochastic alternating
/// optimization), starting with W. Zero-shot training is `learn_w` only;
/// the learned-embedding baseline is `learn_phi` with `mu = 0` and a
/// random initial embedding.
///
/// `init_model` warm-starts W (few-shot runs continue from a zero-shot
/// model); otherwise W starts at small seeded uniform noise.
pub fn train_ranking(
    data: &FeatureSet,
    phi_init: &ClassEmbedding,
    phi_prior: Option<&ClassEmbedding>,
    cfg: &RankingConfig,
    init_model: Option<&CompatModel>,
) -> Result<(CompatModel, ClassEmbedding, TrainReport)> {
    cfg.validate(phi_prior.is_some())?;
    check_shapes(data, phi_init, phi_prior)?;
    let start = Instant::now();

    let c = phi_init.num_classes();
    let dim_in = data.feature_dim();
    let dim_out = phi_init.dim();
    let weights = harmonic_weights(c)?;

    let mut rng = seeded_rng(cfg.seed);
    let mut model = match init_model {
        Some(m) => {
            if m.dim_in() != dim_in || m.dim_out() != dim_out {
                return Err(Error::DimMismatch {
                    context: "initial model",
                    expected: dim_in * dim_out,
                    found: m.dim_in() * m.dim_out(),
                });
            }
            m.clone()
        }
        None => random_init(dim_in, dim_out, &mut rng),
    };
    let mut phi = phi_init.clone();

    let (pool, val) = validation_carve(data, cfg.validation_fraction, &mut rng);
    let validate = !val.is_empty();

    let mut best_model = model.clone();
    let mut best_phi = phi.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut since_improve = 0usize;
    let mut val_accuracy = Vec::new();
    let mut epochs_run = 0usize;

    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        let both = cfg.learn_w && cfg.learn_phi;
        let params = StepParams {
            eta: cfg.eta,
            mu: cfg.mu,
            learn_w: cfg.learn_w && (!both || epoch % 2 == 1),
            learn_phi: cfg.learn_phi && (!both || epoch % 2 == 0),
        };

        for _ in 0..pool.len() {
            let n = pool[rng.random_range(0..pool.len())];
            let y = data.label(n);
            let x = data.row(n);
            let proj = crate::compat::attribute_scores(&model, x)?;
            let score_y = dot_col(&proj, &phi, y);

            for k in 1..c {
                let y_bar = draw_negative(&mut rng, c, y);
                let l = 1.0 + dot_col(&proj, &phi, y_bar) - score_y;
                if l > 0.0 {
                    ranking_step(
                        &mut model, &mut phi, phi_prior, &weights, x, y, y_bar, k, params,
                    )?;
                    break;
                }
            }
        }

        if validate {
            let acc = top1_on(&model, &phi, data, &val)?;
            val_accuracy.push(acc);
            if acc > best_acc {
                best_acc = acc;
                best_epoch = epoch;
                best_model = model.clone();
                best_phi = phi.clone();
                since_improve = 0;
            } else {
                since_improve += 1;
                if since_improve >= cfg.patience {
                    break;
                }
            }
        }
    }

    let (final_model, mut final_phi, stopping_epoch) = if validate {
        (best_model, best_phi, best_epoch)
    } else {
        (model, phi, epochs_run)
    };
    if cfg.learn_phi {
        final_phi.mark_learned();
    } else {
        final_phi = phi_init.clone();
    }

    let objective_set = data.subset(&objective_subset(&pool));
    let final_objective = super::warp_objective(&final_model, &final_phi, &objective_set)?;

    Ok((
        final_model,
        final_phi,
        TrainReport {
            epochs_run,
            val_accuracy,
            stopping_epoch,
            final_objective,
            wall_clock: start.elapsed(),
        },
    ))
}

/// SGD on the multiclass max-hinge: per step the single worst violator
/// over all classes drives an unweighted update of W. The embedding stays
/// fixed.
pub fn train_ssvm(
    data: &FeatureSet,
    phi: &ClassEmbedding,
    cfg: &RankingConfig,
) -> Result<(CompatModel, TrainReport)> {
    cfg.validate(false)?;
    check_shapes(data, phi, None)?;
    let start = Instant::now();

    let dim_in = data.feature_dim();
    let dim_out = phi.dim();
    let mut rng = seeded_rng(cfg.seed);
    let mut model = random_init(dim_in, dim_out, &mut rng);

    let (pool, val) = validation_carve(data, cfg.validation_fraction, &mut rng);
    let validate = !val.is_empty();

    let mut best_model = model.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut since_improve = 0usize;
    let mut val_accuracy = Vec::new();
    let mut epochs_run = 0usize;

    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        for _ in 0..pool.len() {
            let n = pool[rng.random_range(0..pool.len())];
            let y = data.label(n);
            let x = data.row(n);
            if let Some((y_star, _)) = max_violator(&model, phi, x, y)? {
                let w = model.weights_mut();
                for (d, &xv) in x.iter().enumerate() {
                    let xd = cfg.eta * xv as f64;
                    if xd == 0.0 {
                        continue;
                    }
                    let mut row = w.row_mut(d);
                    for e in 0..dim_out {
                        row[e] += xd * (phi.phi()[(e, y)] - phi.phi()[(e, y_star)]);
                    }
                }
            }
        }

        if validate {
            let acc = top1_on(&model, phi, data, &val)?;
            val_accuracy.push(acc);
            if acc > best_acc {
                best_acc = acc;
                best_epoch = epoch;
                best_model = model.clone();
                since_improve = 0;
            } else {
                since_improve += 1;
                if since_improve >= cfg.patience {
                    break;
                }
            }
        }
    }

    let (final_model, stopping_epoch) =
        if validate { (best_model, best_epoch) } else { (model, epochs_run) };

    let objective_set = data.subset(&objective_subset(&pool));
    let final_objective = ssvm_objective(&final_model, phi, &objective_set)?;

    Ok((
        final_model,
        TrainReport {
            epochs_run,
            val_accuracy,
            stopping_epoch,
            final_objective,
            wall_clock: start.elapsed(),
        },
    ))
}

/// Worst margin violator for one sample: `argmax_y hinge(x, y_true, y)`
/// with lowest-id tie-breaking, or `None` when nothing violates.
pub fn max_violator(
    model: &CompatModel,
    phi: &ClassEmbedding,
    x: ndarray::ArrayView1<'_, f32>,
    y_true: usize,
) -> Result<Option<(usize, f64)>> {
    let proj = crate::compat::attribute_scores(model, x)?;
    let score_true = dot_col(&proj, phi, y_true);
    let mut best: Option<(usize, f64)> = None;
    for y in 0..phi.num_classes() {
        if y == y_true {
            continue;
        }
        let l = 1.0 + dot_col(&proj, phi, y) - score_true;
        if l > 0.0 && best.map_or(true, |(_, b)| l > b) {
            best = Some((y, l));
        }
    }
    Ok(best)
}

/// `(1/N) sum_n max_y hinge(x_n, y_n, y)`, the structured objective.
pub fn ssvm_objective(
    model: &CompatModel,
    phi: &ClassEmbedding,
    data: &FeatureSet,
) -> Result<f64> {
    let mut total = 0.0;
    for n in 0..data.num_samples() {
        if let Some((_, l)) = max_violator(model, phi, data.row(n), data.label(n))? {
            total += l;
        }
    }
    Ok(total / data.num_samples() as f64)
}

fn check_shapes(
    data: &FeatureSet,
    phi: &ClassEmbedding,
    prior: Option<&ClassEmbedding>,
) -> Result<()> {
    if phi.num_classes() != data.num_classes() {
        return Err(Error::DimMismatch {
            context: "class count",
            expected: data.num_classes(),
            found: phi.num_classes(),
        });
    }
    if phi.num_classes() < 2 {
        return Err(Error::InvalidConfig("need at least two classes to rank".into()));
    }
    if let Some(p) = prior {
        if p.dim() != phi.dim() || p.num_classes() != phi.num_classes() {
            return Err(Error::DimMismatch {
                context: "prior embedding",
                expected: phi.dim(),
                found: p.dim(),
            });
        }
    }
    Ok(())
}

fn random_init(dim_in: usize, dim_out: usize, rng: &mut ChaCha20Rng) -> CompatModel {
    let scale = 1.0 / ((dim_in * dim_out) as f64).sqrt();
    let w = Array2::from_shape_fn((dim_in, dim_out), |_| {
        (rng.random::<f64>() - 0.5) * scale
    });
    CompatModel::new(w).expect("finite init")
}

/// Uniform draw over the classes other than `y`: one generator call.
fn draw_negative(rng: &mut ChaCha20Rng, num_classes: usize, y: usize) -> usize {
    let z = rng.random_range(0..num_classes - 1);
    if z >= y {
        z + 1
    } else {
        z
    }
}

fn dot_col(proj: &[f64], phi: &ClassEmbedding, y: usize) -> f64 {
    proj.iter().zip(phi.class_column(y).iter()).map(|(a, b)| a * b).sum()
}

/// Class-stratified carve of validation samples; the floor per class means
/// tiny classes contribute nothing.
fn validation_carve(
    data: &FeatureSet,
    fraction: f64,
    rng: &mut ChaCha20Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> =
        std::collections::BTreeMap::new();
    for n in 0..data.num_samples() {
        by_class.entry(data.label(n)).or_default().push(n);
    }
    let mut pool = Vec::new();
    let mut val = Vec::new();
    for (_, mut members) in by_class {
        if fraction > 0.0 {
            members.shuffle(rng);
            let take = (fraction * members.len() as f64).floor() as usize;
            val.extend(members.drain(..take));
        }
        pool.extend(members);
    }
    pool.sort_unstable();
    val.sort_unstable();
    (pool, val)
}

fn top1_on(
    model: &CompatModel,
    phi: &ClassEmbedding,
    data: &FeatureSet,
    indices: &[usize],
) -> Result<f64> {
    let mut correct = 0usize;
    for &n in indices {
        if crate::compat::predict(model, data.row(n), phi)? == data.label(n) {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// At most 2048 deterministic pool indices for the objective estimate.
fn objective_subset(pool: &[usize]) -> Vec<usize> {
    const CAP: usize = 2048;
    if pool.len() <= CAP {
        pool.to_vec()
    } else {
        let stride = pool.len().div_ceil(CAP);
        pool.iter().copied().step_by(stride).collect()
    }
}
