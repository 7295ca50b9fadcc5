//! Pipeline-stage file formats owned by the runner: split manifests,
//! label files and class-name lists.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use labelembed::dataset::Split;
use labelembed::SplitSpec;

/// Text manifest pinning a realized split: the spec that produced it plus
/// both index lists, one per line.
pub fn render_split_manifest(spec: &SplitSpec, split: &Split) -> String {
    let list = |v: &[usize]| {
        v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
    };
    let mut out = String::new();
    let _ = writeln!(out, "seed {}", spec.seed);
    let _ = writeln!(out, "train_classes {}", list(&spec.train_classes));
    let _ = writeln!(out, "eval_classes {}", list(&spec.eval_classes));
    let _ = writeln!(
        out,
        "cap {}",
        spec.per_class_train_cap.map_or("-".to_string(), |k| k.to_string())
    );
    let _ = writeln!(
        out,
        "fraction {}",
        spec.train_fraction.map_or("-".to_string(), |f| f.to_string())
    );
    out.push_str("[train]\n");
    for idx in &split.train {
        let _ = writeln!(out, "{idx}");
    }
    out.push_str("[eval]\n");
    for idx in &split.eval {
        let _ = writeln!(out, "{idx}");
    }
    out
}

pub fn write_split_manifest(spec: &SplitSpec, split: &Split, path: &Path) -> Result<()> {
    std::fs::write(path, render_split_manifest(spec, split))
        .with_context(|| format!("writing split manifest {}", path.display()))
}

pub fn read_split_manifest(path: &Path) -> Result<Split> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading split manifest {}", path.display()))?;
    let mut train = Vec::new();
    let mut eval = Vec::new();
    let mut section = "";
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "[train]" => section = "train",
            "[eval]" => section = "eval",
            _ if section.is_empty() => {} // header keys are informational
            _ => {
                let idx: usize = line
                    .parse()
                    .with_context(|| format!("bad index line {line:?} in split manifest"))?;
                match section {
                    "train" => train.push(idx),
                    "eval" => eval.push(idx),
                    _ => unreachable!(),
                }
            }
        }
    }
    if train.is_empty() && eval.is_empty() {
        bail!("split manifest {} has no indices", path.display());
    }
    Ok(Split { train, eval })
}

/// One predicted class id per line.
pub fn write_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut out = String::new();
    for l in labels {
        let _ = writeln!(out, "{l}");
    }
    std::fs::write(path, out).with_context(|| format!("writing labels {}", path.display()))
}

/// One class name per line.
pub fn read_class_names(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading class names {}", path.display()))?;
    let names: Vec<String> =
        text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if names.is_empty() {
        bail!("class name file {} is empty", path.display());
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_manifest_round_trip() {
        let spec = SplitSpec {
            train_classes: vec![0, 1],
            eval_classes: vec![2],
            per_class_train_cap: Some(2),
            train_fraction: None,
            seed: 9,
        };
        let split = Split { train: vec![0, 3, 4], eval: vec![1, 2] };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        write_split_manifest(&spec, &split, &path).unwrap();
        let back = read_split_manifest(&path).unwrap();
        assert_eq!(back, split);
        // Same spec rendered twice gives identical bytes.
        assert_eq!(
            render_split_manifest(&spec, &split),
            render_split_manifest(&spec, &split)
        );
    }
}
