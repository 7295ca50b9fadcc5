//! Flat key-value experiment configuration with dotted section keys.
//!
//! A config file holds `key = value` lines (comments start with `#`);
//! every key can be overridden on the command line as `--key value` or
//! `--key=value`. The canonical serialization (sorted keys) is hashed into
//! the run manifest so a report always names the exact configuration that
//! produced it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use labelembed::dataset::FeatureFormat;
use labelembed::embedding::{Encoding, ThresholdPolicy};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    ZeroShot,
    FewShot,
    Full,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::ZeroShot => "zero-shot",
            Mode::FewShot => "few-shot",
            Mode::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Ranking,
    Ssvm,
    Ridge,
    Dap,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Ranking => "ranking",
            Objective::Ssvm => "ssvm",
            Objective::Ridge => "ridge",
            Objective::Dap => "dap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    Attribute,
    Hierarchy,
    External,
    Ovr,
    Gaussian,
    Hadamard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnTarget {
    W,
    Phi,
    WPhi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    None,
    Early,
    Late,
}

/// Everything the experiment runner needs, already typed and validated.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub raw: BTreeMap<String, String>,

    pub features: PathBuf,
    pub format: FeatureFormat,
    pub attributes: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub external: Option<PathBuf>,
    pub class_names: Option<PathBuf>,

    pub kind: EmbeddingKind,
    pub second_kind: Option<EmbeddingKind>,
    pub fusion: Fusion,
    pub encoding: Encoding,
    pub threshold: ThresholdPolicy,
    pub center: bool,
    pub l2: bool,
    pub svd_rank: Option<usize>,
    pub sample_dims: Option<usize>,
    pub gaussian_dims: Vec<usize>,

    pub objective: Objective,
    pub mode: Mode,
    pub train_classes: Vec<usize>,
    pub eval_classes: Vec<usize>,
    pub fewshot_k: Vec<usize>,
    pub train_fractions: Vec<f64>,

    pub learn: LearnTarget,
    pub etas: Vec<f64>,
    pub mus: Vec<f64>,
    pub epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub ridge_lambdas: Vec<f64>,
    pub dap_lambdas: Vec<f64>,

    pub repeats: usize,
    pub seed: u64,
    pub output: PathBuf,
}

/// Parse `a-b` ranges and comma lists of class ids: `0-6,9` etc.
pub fn parse_class_set(s: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().context("bad class range start")?;
                let b: usize = b.trim().parse().context("bad class range end")?;
                if b < a {
                    bail!("descending class range {part:?}");
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().with_context(|| format!("bad class id {part:?}"))?),
        }
    }
    if out.is_empty() {
        bail!("empty class set {s:?}");
    }
    Ok(out)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| anyhow!("bad {what} entry {t:?}: {e}")))
        .collect()
}

pub fn parse_threshold(s: &str) -> Result<ThresholdPolicy> {
    if s == "global-mean" {
        Ok(ThresholdPolicy::GlobalMean)
    } else {
        Ok(ThresholdPolicy::Fixed(s.parse().context("threshold must be global-mean or a number")?))
    }
}

pub fn parse_encoding(s: &str) -> Result<Encoding> {
    match s {
        "continuous" => Ok(Encoding::Continuous),
        "zero-one" => Ok(Encoding::ZeroOne),
        "plus-minus" => Ok(Encoding::PlusMinus),
        other => bail!("unknown encoding {other:?}"),
    }
}

pub fn parse_format(s: &str) -> Result<FeatureFormat> {
    match s {
        "dense-binary" => Ok(FeatureFormat::DenseBinary),
        "csv" => Ok(FeatureFormat::Csv),
        other => bail!("unknown feature format {other:?}"),
    }
}

fn parse_kind(s: &str) -> Result<EmbeddingKind> {
    match s {
        "attribute" => Ok(EmbeddingKind::Attribute),
        "hierarchy" => Ok(EmbeddingKind::Hierarchy),
        "external" => Ok(EmbeddingKind::External),
        "ovr" => Ok(EmbeddingKind::Ovr),
        "gaussian" => Ok(EmbeddingKind::Gaussian),
        "hadamard" => Ok(EmbeddingKind::Hadamard),
        other => bail!("unknown embedding kind {other:?}"),
    }
}

impl ExperimentConfig {
    /// Read a config file, apply `--key value` overrides, type-check.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut raw = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = match line.split_once('=') {
                Some((k, v)) => (k.trim(), v.trim()),
                None => match line.split_once(char::is_whitespace) {
                    Some((k, v)) => (k.trim(), v.trim()),
                    None => bail!("config line {}: expected `key = value`", lineno + 1),
                },
            };
            raw.insert(key.to_string(), value.to_string());
        }
        for (key, value) in overrides {
            raw.insert(key.clone(), value.clone());
        }
        Self::from_map(raw)
    }

    fn from_map(raw: BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| raw.get(k).map(String::as_str);
        let require =
            |k: &str| get(k).ok_or_else(|| anyhow!("missing required config key {k:?}"));

        let mode = match require("mode")? {
            "zero-shot" => Mode::ZeroShot,
            "few-shot" => Mode::FewShot,
            "full" => Mode::Full,
            other => bail!("unknown mode {other:?}"),
        };
        let objective = match require("objective")? {
            "ranking" => Objective::Ranking,
            "ssvm" => Objective::Ssvm,
            "ridge" => Objective::Ridge,
            "dap" => Objective::Dap,
            other => bail!("unknown objective {other:?}"),
        };
        let kind = parse_kind(require("embedding.kind")?)?;
        let second_kind = get("embedding.kind2").map(parse_kind).transpose()?;
        let fusion = match get("fusion").unwrap_or("none") {
            "none" => Fusion::None,
            "early" => Fusion::Early,
            "late" => Fusion::Late,
            other => bail!("unknown fusion {other:?}"),
        };
        if fusion != Fusion::None && second_kind.is_none() {
            bail!("fusion requires embedding.kind2");
        }
        if second_kind.is_some() && fusion == Fusion::None {
            bail!("embedding.kind2 requires fusion = early or late");
        }

        let learn = match get("train.learn").unwrap_or("w") {
            "w" => LearnTarget::W,
            "phi" => LearnTarget::Phi,
            "wphi" => LearnTarget::WPhi,
            other => bail!("unknown train.learn {other:?}"),
        };

        let cfg = ExperimentConfig {
            features: require("data.features")?.into(),
            format: parse_format(get("data.format").unwrap_or("dense-binary"))?,
            attributes: get("data.attributes").map(PathBuf::from),
            taxonomy: get("data.taxonomy").map(PathBuf::from),
            external: get("data.external").map(PathBuf::from),
            class_names: get("data.class_names").map(PathBuf::from),

            kind,
            second_kind,
            fusion,
            encoding: parse_encoding(get("embedding.encoding").unwrap_or("continuous"))?,
            threshold: parse_threshold(get("embedding.threshold").unwrap_or("global-mean"))?,
            center: get("embedding.center").unwrap_or("false").parse()?,
            l2: get("embedding.l2").unwrap_or("true").parse()?,
            svd_rank: get("embedding.svd_rank").map(str::parse).transpose()?,
            sample_dims: get("embedding.sample_dims").map(str::parse).transpose()?,
            gaussian_dims: match get("embedding.gaussian_dim") {
                Some(s) => parse_list(s, "embedding.gaussian_dim")?,
                None => vec![],
            },

            objective,
            mode,
            train_classes: parse_class_set(require("split.train_classes")?)?,
            eval_classes: parse_class_set(require("split.eval_classes")?)?,
            fewshot_k: match get("fewshot.k") {
                Some(s) => parse_list(s, "fewshot.k")?,
                None => vec![],
            },
            train_fractions: match get("full.train_fraction") {
                Some(s) => parse_list(s, "full.train_fraction")?,
                None => vec![],
            },

            learn,
            etas: match get("train.eta") {
                Some(s) => parse_list(s, "train.eta")?,
                None => vec![0.1],
            },
            mus: match get("train.mu") {
                Some(s) => parse_list(s, "train.mu")?,
                None => vec![0.0],
            },
            epochs: get("train.epochs").unwrap_or("50").parse()?,
            patience: get("train.patience").unwrap_or("5").parse()?,
            validation_fraction: get("train.validation_fraction").unwrap_or("0.2").parse()?,
            ridge_lambdas: match get("ridge.lambda") {
                Some(s) => parse_list(s, "ridge.lambda")?,
                None => vec![1.0],
            },
            dap_lambdas: match get("dap.lambda") {
                Some(s) => parse_list(s, "dap.lambda")?,
                None => vec![0.01],
            },

            repeats: get("repeats").unwrap_or("1").parse()?,
            seed: get("seed").unwrap_or("0").parse()?,
            output: require("output")?.into(),
            raw,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            bail!("repeats must be >= 1");
        }
        match self.mode {
            Mode::ZeroShot => {
                let train: std::collections::BTreeSet<_> =
                    self.train_classes.iter().collect();
                if self.eval_classes.iter().any(|c| train.contains(c)) {
                    bail!("zero-shot requires disjoint train and eval classes");
                }
            }
            Mode::FewShot => {
                if self.fewshot_k.is_empty() {
                    bail!("few-shot mode requires fewshot.k");
                }
                if self.fewshot_k.iter().any(|&k| k == 0) {
                    bail!("fewshot.k entries must be >= 1");
                }
            }
            Mode::Full => {
                if self.train_fractions.is_empty() {
                    bail!("full mode requires full.train_fraction (use 1.0 for all data)");
                }
            }
        }
        let needs = |cond: bool, what: &str| {
            if cond {
                bail!("embedding.kind requires {what}")
            } else {
                Ok(())
            }
        };
        for kind in std::iter::once(self.kind).chain(self.second_kind) {
            match kind {
                EmbeddingKind::Attribute => {
                    needs(self.attributes.is_none(), "data.attributes")?
                }
                EmbeddingKind::Hierarchy => needs(self.taxonomy.is_none(), "data.taxonomy")?,
                EmbeddingKind::External => needs(self.external.is_none(), "data.external")?,
                EmbeddingKind::Gaussian => {
                    needs(self.gaussian_dims.is_empty(), "embedding.gaussian_dim")?
                }
                EmbeddingKind::Ovr | EmbeddingKind::Hadamard => {}
            }
        }
        if self.objective == Objective::Dap && self.attributes.is_none() {
            bail!("dap objective requires data.attributes");
        }
        if matches!(self.learn, LearnTarget::Phi | LearnTarget::WPhi)
            && self.objective != Objective::Ranking
        {
            bail!("train.learn = phi/wphi only applies to the ranking objective");
        }
        if self.mus.iter().any(|&m| m > 0.0)
            && matches!(self.kind, EmbeddingKind::Ovr | EmbeddingKind::Gaussian | EmbeddingKind::Hadamard)
        {
            bail!("mu > 0 needs a side-information embedding to use as prior");
        }
        Ok(())
    }

    /// Canonical serialization: sorted `key = value` lines.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.raw {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Split a raw argument tail into `(key, value)` override pairs; accepts
/// `--key value` and `--key=value`.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(key) = arg.strip_prefix("--") else {
            bail!("expected --key value override, got {arg:?}");
        };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            i += 1;
        } else {
            let value = args
                .get(i + 1)
                .ok_or_else(|| anyhow!("override --{key} is missing a value"))?;
            out.push((key.to_string(), value.clone()));
            i += 2;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_set_ranges() {
        assert_eq!(parse_class_set("0-3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_class_set("7,9,11-12").unwrap(), vec![7, 9, 11, 12]);
        assert!(parse_class_set("5-2").is_err());
        assert!(parse_class_set("").is_err());
    }

    #[test]
    fn override_parsing() {
        let args: Vec<String> = ["--train.eta", "0.5", "--mode=full"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let pairs = parse_overrides(&args).unwrap();
        assert_eq!(pairs[0], ("train.eta".to_string(), "0.5".to_string()));
        assert_eq!(pairs[1], ("mode".to_string(), "full".to_string()));
        assert!(parse_overrides(&["--flag".to_string()]).is_err());
    }

    #[test]
    fn config_round_trip_and_hash_stability() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(
            &path,
            "data.features = f.csv\ndata.format = csv\ndata.attributes = a.csv\n\
             embedding.kind = attribute\nobjective = ranking\nmode = zero-shot\n\
             split.train_classes = 0-6\nsplit.eval_classes = 7-9\n\
             output = out\n",
        )
        .unwrap();
        let cfg = ExperimentConfig::load(&path, &[]).unwrap();
        assert_eq!(cfg.mode, Mode::ZeroShot);
        assert_eq!(cfg.etas, vec![0.1]);
        let h1 = cfg.hash();
        let cfg2 = ExperimentConfig::load(&path, &[]).unwrap();
        assert_eq!(h1, cfg2.hash());

        let with_override = ExperimentConfig::load(
            &path,
            &[("train.eta".to_string(), "0.5".to_string())],
        )
        .unwrap();
        assert_eq!(with_override.etas, vec![0.5]);
        assert_ne!(with_override.hash(), h1);
    }

    #[test]
    fn zero_shot_rejects_overlapping_classes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(
            &path,
            "data.features = f.csv\ndata.attributes = a.csv\nembedding.kind = attribute\n\
             objective = ranking\nmode = zero-shot\nsplit.train_classes = 0-6\n\
             split.eval_classes = 6-9\noutput = out\n",
        )
        .unwrap();
        assert!(ExperimentConfig::load(&path, &[]).is_err());
    }
}
