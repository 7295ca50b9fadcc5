//! The `run` pipeline: compose dataset, embeddings, training and
//! evaluation into the three protocols (zero-shot, few-shot with capped
//! eval-class samples, full-data with training fractions), sweep
//! hyperparameter grids, repeat over seeds, and aggregate.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use labelembed::compat::CompatModel;
use labelembed::dap::{train_dap, AttributeClassifierBank};
use labelembed::dataset::{load_attributes, load_features, load_taxonomy, make_split};
use labelembed::embedding::{
    attribute_embedding, fuse_early, gaussian_embedding, hadamard_embedding,
    hierarchy_embedding, load_external_embedding, ovr_embedding, select_classes,
    ClassEmbedding, EmbeddingRecipe,
};
use labelembed::eval::{
    evaluate, late_fuse, standardize_scores, BilinearScorer, DapScorer, EvalReport, Scorer,
};
use labelembed::train::{train_ranking, train_ridge, train_ssvm, RankingConfig};
use labelembed::{AttributeTable, FeatureSet, ScoreVector, SplitSpec, ThresholdPolicy};

use crate::config::{
    EmbeddingKind, ExperimentConfig, Fusion, LearnTarget, Mode, Objective,
};
use crate::formats::read_class_names;

/// One sweep coordinate: the zero-shot point, a few-shot cap, or a
/// training fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
enum SweepPoint {
    ZeroShot,
    K(usize),
    Fraction(f64),
}

impl SweepPoint {
    fn label(self) -> String {
        match self {
            SweepPoint::ZeroShot => "zero-shot".to_string(),
            SweepPoint::K(k) => format!("k={k}"),
            SweepPoint::Fraction(f) => format!("fraction={f}"),
        }
    }
}

struct RunRow {
    repeat: usize,
    point: String,
    seed: u64,
    params: String,
    top1: f64,
    n_eval: usize,
    report_file: String,
}

struct GridRow {
    repeat: usize,
    point: String,
    system: usize,
    params: String,
    val_metric: f64,
    selected: bool,
}

/// Tracks files created by this run so a failure leaves nothing behind.
struct OutputGuard {
    created: Vec<PathBuf>,
    created_dir: Option<PathBuf>,
    keep: bool,
}

impl OutputGuard {
    fn new() -> Self {
        OutputGuard { created: Vec::new(), created_dir: None, keep: false }
    }

    fn write(&mut self, path: &Path, contents: &str) -> Result<()> {
        std::fs::write(path, contents)
            .with_context(|| format!("writing {}", path.display()))?;
        self.created.push(path.to_path_buf());
        Ok(())
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.keep {
            return;
        }
        for path in &self.created {
            let _ = std::fs::remove_file(path);
        }
        if let Some(dir) = &self.created_dir {
            let _ = std::fs::remove_dir(dir);
        }
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    let mut guard = OutputGuard::new();
    if !cfg.output.exists() {
        std::fs::create_dir_all(&cfg.output)
            .with_context(|| format!("creating output dir {}", cfg.output.display()))?;
        guard.created_dir = Some(cfg.output.clone());
    }

    let outcome = execute(cfg, &mut guard);
    if outcome.is_ok() {
        guard.keep = true;
    }
    outcome
}

fn execute(cfg: &ExperimentConfig, guard: &mut OutputGuard) -> Result<()> {
    let fs = load_features(&cfg.features, cfg.format).context("stage: dataset")?;
    let class_names = match &cfg.class_names {
        Some(path) => Some(read_class_names(path).context("stage: dataset")?),
        None => None,
    };
    let attributes = match &cfg.attributes {
        Some(path) => Some(load_attributes(path).context("stage: dataset")?),
        None => None,
    };
    let taxonomy = match &cfg.taxonomy {
        Some(path) => Some(load_taxonomy(path).context("stage: dataset")?),
        None => None,
    };

    let points: Vec<SweepPoint> = match cfg.mode {
        Mode::ZeroShot => vec![SweepPoint::ZeroShot],
        Mode::FewShot => cfg.fewshot_k.iter().map(|&k| SweepPoint::K(k)).collect(),
        Mode::Full => {
            cfg.train_fractions.iter().map(|&f| SweepPoint::Fraction(f)).collect()
        }
    };

    let train_space = train_space(cfg);
    let eval_space = eval_space(cfg);
    for &c in train_space.iter().chain(&eval_space) {
        if c >= fs.num_classes() {
            bail!("stage: dataset: config references class {c}, dataset has {}", fs.num_classes());
        }
    }
    if cfg.objective == Objective::Ranking
        && cfg.mode == Mode::ZeroShot
        && matches!(cfg.learn, LearnTarget::Phi | LearnTarget::WPhi)
    {
        bail!("stage: train: learning the embedding is not applicable to zero-shot (unseen classes have no samples)");
    }

    let mut run_rows: Vec<RunRow> = Vec::new();
    let mut grid_rows: Vec<GridRow> = Vec::new();

    for repeat in 0..cfg.repeats {
        let seed = cfg.seed.wrapping_add(repeat as u64);
        for &point in &points {
            let spec = split_spec(cfg, point, seed);
            let split = make_split(&fs, &spec).context("stage: split")?;
            if split.eval.is_empty() {
                bail!("stage: split: eval side is empty");
            }
            let train_raw = fs.subset(&split.train);
            let eval_raw = fs.subset(&split.eval);
            let train_fs =
                train_raw.restrict_classes(&train_space).context("stage: split")?;
            let eval_fs = eval_raw.restrict_classes(&eval_space).context("stage: split")?;

            let ctx = PointContext {
                cfg,
                attributes: attributes.as_ref(),
                taxonomy: taxonomy.as_ref(),
                class_names: class_names.as_deref(),
                all_classes: fs.num_classes(),
                train_space: &train_space,
                eval_space: &eval_space,
                seed,
                repeat,
                point,
            };

            let report = run_point(&ctx, &train_fs, &eval_fs, &mut grid_rows)?;

            let point_label = point.label();
            let file = format!("run_{}_r{repeat}.txt", point_label.replace('=', ""));
            guard.write(&cfg.output.join(&file), &report.report.to_text())?;
            run_rows.push(RunRow {
                repeat,
                point: point_label,
                seed,
                params: report.params,
                top1: report.report.top1,
                n_eval: report.report.n_eval,
                report_file: file,
            });
        }
    }

    // Aggregate by sweep point, in sweep order.
    let mut aggregate = String::new();
    let _ = writeln!(aggregate, "config_hash {}", cfg.hash());
    let _ = writeln!(aggregate, "mode {}", cfg.mode.name());
    let _ = writeln!(aggregate, "objective {}", cfg.objective.name());
    let _ = writeln!(aggregate, "repeats {}", cfg.repeats);
    aggregate.push_str("[sweep]\n");
    aggregate.push_str("point,mean_top1,std_top1,runs\n");
    for &point in &points {
        let label = point.label();
        let values: Vec<f64> = run_rows
            .iter()
            .filter(|r| r.point == label)
            .map(|r| r.top1)
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let std = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (values.len() - 1) as f64;
            var.sqrt()
        } else {
            0.0
        };
        let _ = writeln!(aggregate, "{label},{mean},{std},{}", values.len());
    }
    aggregate.push_str("[runs]\n");
    aggregate.push_str("repeat,point,seed,top1,n_eval,params,report\n");
    for r in &run_rows {
        let _ = writeln!(
            aggregate,
            "{},{},{},{},{},{},{}",
            r.repeat, r.point, r.seed, r.top1, r.n_eval, r.params, r.report_file
        );
    }
    guard.write(&cfg.output.join("aggregate.txt"), &aggregate)?;

    let mut grid = String::new();
    grid.push_str("repeat,point,system,params,val_metric,selected\n");
    for g in &grid_rows {
        let _ = writeln!(
            grid,
            "{},{},{},{},{},{}",
            g.repeat, g.point, g.system, g.params, g.val_metric, g.selected
        );
    }
    guard.write(&cfg.output.join("grid.csv"), &grid)?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "artifact labelembed {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "config_hash {}", cfg.hash());
    let _ = writeln!(manifest, "seed_base {}", cfg.seed);
    let _ = writeln!(manifest, "repeats {}", cfg.repeats);
    manifest.push_str("[config]\n");
    manifest.push_str(&cfg.canonical());
    manifest.push_str("[runs]\n");
    manifest.push_str("repeat,point,seed,report\n");
    for r in &run_rows {
        let _ = writeln!(manifest, "{},{},{},{}", r.repeat, r.point, r.seed, r.report_file);
    }
    guard.write(&cfg.output.join("manifest.txt"), &manifest)?;

    println!("wrote {} run reports to {}", run_rows.len(), cfg.output.display());
    Ok(())
}

/// Classes whose samples appear at training time, ascending.
fn train_space(cfg: &ExperimentConfig) -> Vec<usize> {
    let mut set: BTreeSet<usize> = cfg.train_classes.iter().copied().collect();
    if cfg.mode == Mode::FewShot {
        set.extend(cfg.eval_classes.iter().copied());
    }
    if cfg.mode == Mode::Full {
        set.extend(cfg.eval_classes.iter().copied());
    }
    set.into_iter().collect()
}

/// Classes the final evaluation ranks among (k-way protocols).
fn eval_space(cfg: &ExperimentConfig) -> Vec<usize> {
    let set: BTreeSet<usize> = cfg.eval_classes.iter().copied().collect();
    set.into_iter().collect()
}

fn split_spec(cfg: &ExperimentConfig, point: SweepPoint, seed: u64) -> SplitSpec {
    SplitSpec {
        train_classes: cfg.train_classes.clone(),
        eval_classes: cfg.eval_classes.clone(),
        per_class_train_cap: match point {
            SweepPoint::K(k) => Some(k),
            _ => None,
        },
        train_fraction: match point {
            SweepPoint::Fraction(f) if f < 1.0 => Some(f),
            _ => None,
        },
        seed,
    }
}

struct PointContext<'a> {
    cfg: &'a ExperimentConfig,
    attributes: Option<&'a AttributeTable>,
    taxonomy: Option<&'a labelembed::TaxonomyTree>,
    class_names: Option<&'a [String]>,
    all_classes: usize,
    train_space: &'a [usize],
    eval_space: &'a [usize],
    seed: u64,
    repeat: usize,
    point: SweepPoint,
}

struct PointOutcome {
    report: EvalReport,
    params: String,
}

/// A trained system plus the embedding spaces needed to score eval data.
enum Trained {
    Bilinear { model: CompatModel, phi_eval: ClassEmbedding },
    Dap { bank: AttributeClassifierBank, tab_eval: AttributeTable },
}

fn run_point(
    ctx: &PointContext<'_>,
    train_fs: &FeatureSet,
    eval_fs: &FeatureSet,
    grid_rows: &mut Vec<GridRow>,
) -> Result<PointOutcome> {
    let cfg = ctx.cfg;

    // Binary truth table for attribute AUC, when attributes exist.
    let truth_tab = match ctx.attributes {
        Some(tab) => Some(binary_table(tab, cfg.threshold)?),
        None => None,
    };
    let truth_eval = match &truth_tab {
        Some(tab) => Some(select_rows(tab, ctx.eval_space)?),
        None => None,
    };

    match cfg.objective {
        Objective::Dap => {
            let tab = truth_tab.as_ref().expect("config validated");
            let tab_train = select_rows(tab, ctx.train_space)?;
            let tab_eval = truth_eval.clone().expect("attributes present");
            let (bank, params) =
                train_dap_grid(ctx, train_fs, &tab_train, grid_rows).context("stage: train")?;
            let scorer = DapScorer { bank: &bank, tab: &tab_eval };
            let report =
                evaluate(&scorer, eval_fs, Some(&tab_eval)).context("stage: evaluate")?;
            Ok(PointOutcome { report, params })
        }
        Objective::Ridge | Objective::Ssvm | Objective::Ranking => {
            let systems: Vec<EmbeddingKind> = match cfg.fusion {
                Fusion::None | Fusion::Early => vec![cfg.kind],
                Fusion::Late => vec![cfg.kind, cfg.second_kind.expect("validated")],
            };
            let mut trained = Vec::new();
            let mut params_all = Vec::new();
            for (sys_idx, &kind) in systems.iter().enumerate() {
                let (sys, params) =
                    train_system(ctx, kind, sys_idx, train_fs, grid_rows)
                        .context("stage: train")?;
                trained.push(sys);
                params_all.push(params);
            }
            let report = match cfg.fusion {
                Fusion::Late => {
                    fused_eval(&trained, eval_fs).context("stage: evaluate")?
                }
                _ => {
                    let Trained::Bilinear { model, phi_eval } = &trained[0] else {
                        unreachable!()
                    };
                    let scorer = BilinearScorer { model, phi: phi_eval };
                    // Attribute AUC only makes sense when W's columns line
                    // up with the attribute table.
                    let truth = truth_eval
                        .as_ref()
                        .filter(|t| t.num_attributes() == phi_eval.dim());
                    evaluate(&scorer, eval_fs, truth).context("stage: evaluate")?
                }
            };
            Ok(PointOutcome { report, params: params_all.join(";") })
        }
    }
}

/// Build one embedding over all dataset classes.
fn build_embedding(
    ctx: &PointContext<'_>,
    kind: EmbeddingKind,
    gaussian_dim: Option<usize>,
) -> Result<ClassEmbedding> {
    let cfg = ctx.cfg;
    let recipe = EmbeddingRecipe {
        encoding: cfg.encoding,
        threshold: cfg.threshold,
        center: cfg.center,
        center_classes: cfg.center.then(|| ctx.train_space.to_vec()),
        l2: cfg.l2,
        svd_rank: cfg.svd_rank,
        sample_dims: cfg.sample_dims.map(|count| (count, ctx.seed.wrapping_add(2_000))),
    };
    let base = match kind {
        EmbeddingKind::Attribute => {
            attribute_embedding(ctx.attributes.expect("validated"), &recipe)?
        }
        EmbeddingKind::Hierarchy => {
            let classes: Vec<usize> = (0..ctx.all_classes).collect();
            let raw = hierarchy_embedding(ctx.taxonomy.expect("validated"), &classes)?;
            // Hierarchy embeddings are already l2-normalized indicators;
            // reduction options still apply.
            let mut e = raw;
            if let Some(rank) = cfg.svd_rank {
                e = labelembed::embedding::svd_reduce(&e, rank)?;
            }
            if let Some(count) = cfg.sample_dims {
                e = labelembed::embedding::sample_dims(
                    &e,
                    count,
                    ctx.seed.wrapping_add(2_000),
                )?;
            }
            e
        }
        EmbeddingKind::External => {
            let raw = load_external_embedding(
                cfg.external.as_ref().expect("validated"),
                ctx.class_names,
            )?;
            recipe.apply(raw)?
        }
        EmbeddingKind::Ovr => ovr_embedding(ctx.all_classes)?,
        EmbeddingKind::Gaussian => {
            let dim = gaussian_dim.expect("gaussian grid supplies dim");
            gaussian_embedding(ctx.all_classes, dim, ctx.seed.wrapping_add(1_000))?
        }
        EmbeddingKind::Hadamard => hadamard_embedding(ctx.all_classes)?,
    };
    if cfg.fusion == Fusion::Early && kind == cfg.kind {
        let second = build_embedding_second(ctx)?;
        return Ok(fuse_early(&base, &second)?);
    }
    Ok(base)
}

fn build_embedding_second(ctx: &PointContext<'_>) -> Result<ClassEmbedding> {
    let kind = ctx.cfg.second_kind.expect("validated");
    // The second system never recurses into early fusion.
    let sub = PointContext { cfg: ctx.cfg, ..*ctx };
    match kind {
        EmbeddingKind::Attribute | EmbeddingKind::Hierarchy | EmbeddingKind::External
        | EmbeddingKind::Ovr | EmbeddingKind::Hadamard => {
            build_embedding_inner(&sub, kind, None)
        }
        EmbeddingKind::Gaussian => {
            build_embedding_inner(&sub, kind, ctx.cfg.gaussian_dims.first().copied())
        }
    }
}

/// Same as [`build_embedding`] without the early-fusion hook.
fn build_embedding_inner(
    ctx: &PointContext<'_>,
    kind: EmbeddingKind,
    gaussian_dim: Option<usize>,
) -> Result<ClassEmbedding> {
    let mut sub_cfg = ctx.cfg.clone();
    sub_cfg.fusion = Fusion::None;
    let sub = PointContext { cfg: &sub_cfg, ..*ctx };
    build_embedding(&sub, kind, gaussian_dim)
}

fn train_system(
    ctx: &PointContext<'_>,
    kind: EmbeddingKind,
    sys_idx: usize,
    train_fs: &FeatureSet,
    grid_rows: &mut Vec<GridRow>,
) -> Result<(Trained, String)> {
    let cfg = ctx.cfg;
    let point = ctx.point.label();

    struct Candidate {
        model: CompatModel,
        phi_full: ClassEmbedding,
        learned: Option<ClassEmbedding>,
        params: String,
        val: f64,
    }
    let mut best: Option<Candidate> = None;
    let mut rows: Vec<(String, f64)> = Vec::new();

    match cfg.objective {
        Objective::Ranking => {
            let dims: Vec<Option<usize>> = if kind == EmbeddingKind::Gaussian {
                cfg.gaussian_dims.iter().map(|&d| Some(d)).collect()
            } else {
                vec![None]
            };
            let grid_size = dims.len() * cfg.etas.len() * cfg.mus.len();
            if grid_size > 1 && cfg.validation_fraction == 0.0 {
                bail!("hyperparameter grids need train.validation_fraction > 0");
            }
            for &dim in &dims {
                let phi_full = build_embedding(ctx, kind, dim)?;
                let phi_train = select_classes(&phi_full, ctx.train_space)?;
                for &eta in &cfg.etas {
                    for &mu in &cfg.mus {
                        let (learn_w, learn_phi) = match cfg.learn {
                            LearnTarget::W => (true, false),
                            LearnTarget::Phi => (false, true),
                            LearnTarget::WPhi => (true, true),
                        };
                        // A prior only exists for side-information
                        // embeddings and only binds when learning phi.
                        let use_prior = mu > 0.0 && learn_phi;
                        let run_cfg = RankingConfig {
                            eta,
                            epochs: cfg.epochs,
                            mu: if use_prior { mu } else { 0.0 },
                            learn_w,
                            learn_phi,
                            seed: ctx.seed,
                            validation_fraction: cfg.validation_fraction,
                            patience: cfg.patience,
                        };
                        let prior = use_prior.then_some(&phi_train);
                        let (model, learned, report) =
                            train_ranking(train_fs, &phi_train, prior, &run_cfg, None)?;
                        let val = report
                            .val_accuracy
                            .iter()
                            .cloned()
                            .fold(f64::NEG_INFINITY, f64::max);
                        let val = if val.is_finite() { val } else { 0.0 };
                        let mut params = format!("eta={eta},mu={mu}");
                        if let Some(d) = dim {
                            params.push_str(&format!(",dim={d}"));
                        }
                        rows.push((params.clone(), val));
                        if best.as_ref().map_or(true, |b| val > b.val) {
                            best = Some(Candidate {
                                model,
                                phi_full: phi_full.clone(),
                                learned: learn_phi.then_some(learned),
                                params,
                                val,
                            });
                        }
                    }
                }
            }
        }
        Objective::Ssvm => {
            if cfg.etas.len() > 1 && cfg.validation_fraction == 0.0 {
                bail!("hyperparameter grids need train.validation_fraction > 0");
            }
            let phi_full = build_embedding(ctx, kind, cfg.gaussian_dims.first().copied())?;
            let phi_train = select_classes(&phi_full, ctx.train_space)?;
            for &eta in &cfg.etas {
                let run_cfg = RankingConfig {
                    eta,
                    epochs: cfg.epochs,
                    seed: ctx.seed,
                    validation_fraction: cfg.validation_fraction,
                    patience: cfg.patience,
                    ..Default::default()
                };
                let (model, report) = train_ssvm(train_fs, &phi_train, &run_cfg)?;
                let val = report
                    .val_accuracy
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
                let val = if val.is_finite() { val } else { 0.0 };
                let params = format!("eta={eta}");
                rows.push((params.clone(), val));
                if best.as_ref().map_or(true, |b| val > b.val) {
                    best = Some(Candidate {
                        model,
                        phi_full: phi_full.clone(),
                        learned: None,
                        params,
                        val,
                    });
                }
            }
        }
        Objective::Ridge => {
            let phi_full = build_embedding(ctx, kind, cfg.gaussian_dims.first().copied())?;
            let phi_train = select_classes(&phi_full, ctx.train_space)?;
            let (fit_fs, val_fs) = holdout(train_fs, ctx.seed);
            for &lambda in &cfg.ridge_lambdas {
                let val = if cfg.ridge_lambdas.len() > 1 {
                    let model = train_ridge(&fit_fs, &phi_train, lambda)?;
                    holdout_top1(&model, &phi_train, &val_fs)?
                } else {
                    0.0
                };
                let params = format!("lambda={lambda}");
                rows.push((params.clone(), val));
                if best.as_ref().map_or(true, |b| val > b.val) {
                    // Refit on the full training side with the winner.
                    let model = train_ridge(train_fs, &phi_train, lambda)?;
                    best = Some(Candidate {
                        model,
                        phi_full: phi_full.clone(),
                        learned: None,
                        params,
                        val,
                    });
                }
            }
        }
        Objective::Dap => unreachable!("handled by run_point"),
    }

    let best = best.expect("non-empty grid");
    for (params, val) in rows {
        grid_rows.push(GridRow {
            repeat: ctx.repeat,
            point: point.clone(),
            system: sys_idx,
            params: params.clone(),
            val_metric: val,
            selected: params == best.params,
        });
    }

    // Eval-space embedding: learned columns when phi was learned (the
    // train space contains the eval classes then), side-information
    // columns otherwise.
    let phi_eval = match &best.learned {
        Some(learned) => {
            let positions: Vec<usize> = ctx
                .eval_space
                .iter()
                .map(|c| {
                    ctx.train_space
                        .binary_search(c)
                        .map_err(|_| anyhow::anyhow!("eval class {c} not in train space"))
                })
                .collect::<Result<_>>()?;
            select_classes(learned, &positions)?
        }
        None => select_classes(&best.phi_full, ctx.eval_space)?,
    };
    Ok((
        Trained::Bilinear { model: best.model, phi_eval },
        format!("{};val={}", best.params, best.val),
    ))
}

fn train_dap_grid(
    ctx: &PointContext<'_>,
    train_fs: &FeatureSet,
    tab_train: &AttributeTable,
    grid_rows: &mut Vec<GridRow>,
) -> Result<(AttributeClassifierBank, String)> {
    let cfg = ctx.cfg;
    let (fit_fs, val_fs) = holdout(train_fs, ctx.seed);
    let mut best: Option<(AttributeClassifierBank, String, f64)> = None;
    let mut rows = Vec::new();
    for &lambda in &cfg.dap_lambdas {
        let val = if cfg.dap_lambdas.len() > 1 {
            let bank = train_dap(&fit_fs, tab_train, lambda)?;
            let scorer = DapScorer { bank: &bank, tab: tab_train };
            let mut correct = 0usize;
            for n in 0..val_fs.num_samples() {
                if scorer.class_scores(val_fs.row(n))?.argmax() == val_fs.label(n) {
                    correct += 1;
                }
            }
            correct as f64 / val_fs.num_samples().max(1) as f64
        } else {
            0.0
        };
        let params = format!("lambda={lambda}");
        rows.push((params.clone(), val));
        if best.as_ref().map_or(true, |(_, _, b)| val > *b) {
            let bank = train_dap(train_fs, tab_train, lambda)?;
            best = Some((bank, params, val));
        }
    }
    let (bank, params, val) = best.expect("non-empty grid");
    for (p, v) in rows {
        grid_rows.push(GridRow {
            repeat: ctx.repeat,
            point: ctx.point.label(),
            system: 0,
            params: p.clone(),
            val_metric: v,
            selected: p == params,
        });
    }
    Ok((bank, format!("{params};val={val}")))
}

/// Deterministic stratified 80/20 holdout used for closed-form trainers
/// whose fitting has no internal validation loop.
fn holdout(data: &FeatureSet, seed: u64) -> (FeatureSet, FeatureSet) {
    use rand::seq::SliceRandom;
    let mut rng = labelembed::seeded_rng(seed.wrapping_add(500));
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for n in 0..data.num_samples() {
        by_class.entry(data.label(n)).or_default().push(n);
    }
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        let take = (members.len() as f64 * 0.2).floor() as usize;
        val.extend(members.drain(..take));
        fit.extend(members);
    }
    fit.sort_unstable();
    val.sort_unstable();
    if val.is_empty() {
        // Too little data to hold anything out; validate on the fit side.
        return (data.subset(&fit), data.subset(&fit));
    }
    (data.subset(&fit), data.subset(&val))
}

fn holdout_top1(
    model: &CompatModel,
    phi: &ClassEmbedding,
    val_fs: &FeatureSet,
) -> Result<f64> {
    let mut correct = 0usize;
    for n in 0..val_fs.num_samples() {
        if labelembed::compat::predict(model, val_fs.row(n), phi)? == val_fs.label(n) {
            correct += 1;
        }
    }
    Ok(correct as f64 / val_fs.num_samples() as f64)
}

fn fused_eval(systems: &[Trained], eval_fs: &FeatureSet) -> Result<EvalReport> {
    let mut batches: Vec<Vec<ScoreVector>> = Vec::new();
    for sys in systems {
        let Trained::Bilinear { model, phi_eval } = sys else {
            bail!("late fusion applies to bilinear systems");
        };
        let scorer = BilinearScorer { model, phi: phi_eval };
        let mut batch = Vec::with_capacity(eval_fs.num_samples());
        for n in 0..eval_fs.num_samples() {
            batch.push(scorer.class_scores(eval_fs.row(n))?);
        }
        standardize_scores(&mut batch);
        batches.push(batch);
    }

    let c = batches[0][0].num_classes();
    let mut per_class: Vec<labelembed::eval::PerClassAccuracy> = (0..c)
        .map(|class| labelembed::eval::PerClassAccuracy { class, n: 0, correct: 0 })
        .collect();
    let mut correct = 0usize;
    for n in 0..eval_fs.num_samples() {
        let fused = late_fuse(&batches[0][n], &batches[1][n], 0.5)?;
        let label = eval_fs.label(n);
        per_class[label].n += 1;
        if fused.argmax() == label {
            per_class[label].correct += 1;
            correct += 1;
        }
    }
    Ok(EvalReport {
        n_eval: eval_fs.num_samples(),
        correct,
        top1: correct as f64 / eval_fs.num_samples() as f64,
        per_class,
        mean_attribute_auc: None,
        per_attribute_auc: None,
        excluded_attributes: Vec::new(),
    })
}

/// Binarize to {0,1} unless the table already is.
pub fn binary_table(tab: &AttributeTable, threshold: ThresholdPolicy) -> Result<AttributeTable> {
    if tab.is_zero_one() {
        Ok(tab.clone())
    } else {
        Ok(labelembed::embedding::binarize(tab, threshold))
    }
}

/// Rows of the listed classes, in the listed order.
pub fn select_rows(tab: &AttributeTable, classes: &[usize]) -> Result<AttributeTable> {
    let assoc = tab.assoc();
    for &c in classes {
        if c >= tab.num_classes() {
            bail!("class {c} out of range for attribute table");
        }
    }
    let sub = ndarray::Array2::from_shape_fn(
        (classes.len(), tab.num_attributes()),
        |(i, j)| assoc[(classes[i], j)],
    );
    Ok(AttributeTable::new(sub, tab.attribute_names().map(|n| n.to_vec()))?)
}
