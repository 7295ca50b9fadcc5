//! Feature matrices, side-information tables, taxonomies and split
//! construction.
//!
//! Everything loaded here is validated once and immutable afterwards; the
//! training and evaluation code can share references across threads freely.

mod io;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::util::seeded_rng;

pub use io::{
    load_attributes, load_features, load_taxonomy, write_features, FeatureFormat,
};

/// N samples of D-dimensional features with one class label per row.
///
/// Features are stored in 32-bit precision (matching the on-disk format);
/// all score arithmetic accumulates in 64 bits.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    features: Array2<f32>,
    labels: Vec<u32>,
    num_classes: usize,
    class_names: Option<Vec<String>>,
}

impl FeatureSet {
    pub fn new(
        features: Array2<f32>,
        labels: Vec<u32>,
        num_classes: usize,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidConfig(format!(
                "feature matrix must be non-empty, got {n}x{d}"
            )));
        }
        if labels.len() != n {
            return Err(Error::DimMismatch {
                context: "labels",
                expected: n,
                found: labels.len(),
            });
        }
        for (row, &label) in labels.iter().enumerate() {
            if label as usize >= num_classes {
                return Err(Error::LabelOutOfRange {
                    path: "<memory>".into(),
                    row: row + 1,
                    label,
                    num_classes,
                });
            }
        }
        for ((row, col), &v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: "<memory>".into(),
                    row: row + 1,
                    col: col + 1,
                });
            }
        }
        if let Some(names) = &class_names {
            if names.len() != num_classes {
                return Err(Error::DimMismatch {
                    context: "class names",
                    expected: num_classes,
                    found: names.len(),
                });
            }
        }
        Ok(FeatureSet { features, labels, num_classes, class_names })
    }

    pub fn num_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> ArrayView2<'_, f32> {
        self.features.view()
    }

    pub fn row(&self, n: usize) -> ArrayView1<'_, f32> {
        self.features.row(n)
    }

    pub fn label(&self, n: usize) -> usize {
        self.labels[n] as usize
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    /// Gather the given rows into a new owned set. Row order follows
    /// `indices`.
    pub fn subset(&self, indices: &[usize]) -> FeatureSet {
        let d = self.feature_dim();
        let mut features = Array2::zeros((indices.len(), d));
        let mut labels = Vec::with_capacity(indices.len());
        for (out, &idx) in indices.iter().enumerate() {
            features.row_mut(out).assign(&self.features.row(idx));
            labels.push(self.labels[idx]);
        }
        FeatureSet {
            features,
            labels,
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        }
    }

    /// Restrict to samples of `classes` and remap labels to positions in
    /// `classes` (k-way protocols evaluate among the listed classes only).
    pub fn restrict_classes(&self, classes: &[usize]) -> Result<FeatureSet> {
        if classes.is_empty() {
            return Err(Error::EmptyClassSet);
        }
        let position: BTreeMap<usize, u32> = classes
            .iter()
            .enumerate()
            .map(|(pos, &c)| (c, pos as u32))
            .collect();
        let keep: Vec<usize> = (0..self.num_samples())
            .filter(|&n| position.contains_key(&self.label(n)))
            .collect();
        if keep.is_empty() {
            return Err(Error::EmptyEvalSet);
        }
        let mut sub = self.subset(&keep);
        for l in &mut sub.labels {
            *l = position[&(*l as usize)];
        }
        sub.num_classes = classes.len();
        sub.class_names = self.class_names.as_ref().map(|names| {
            classes.iter().map(|&c| names[c].clone()).collect()
        });
        Ok(sub)
    }
}

/// Class-by-attribute association strengths, continuous or binary.
#[derive(Debug, Clone)]
pub struct AttributeTable {
    assoc: Array2<f64>,
    attribute_names: Option<Vec<String>>,
    is_binary: bool,
}

impl AttributeTable {
    pub fn new(assoc: Array2<f64>, attribute_names: Option<Vec<String>>) -> Result<Self> {
        for ((row, col), &v) in assoc.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: "<memory>".into(),
                    row: row + 1,
                    col: col + 1,
                });
            }
        }
        if let Some(names) = &attribute_names {
            if names.len() != assoc.ncols() {
                return Err(Error::DimMismatch {
                    context: "attribute names",
                    expected: assoc.ncols(),
                    found: names.len(),
                });
            }
        }
        let is_binary = Self::detect_binary(&assoc);
        Ok(AttributeTable { assoc, attribute_names, is_binary })
    }

    /// Binary means one consistent convention over the whole table:
    /// all entries in {0,1} or all in {-1,+1}.
    fn detect_binary(assoc: &Array2<f64>) -> bool {
        let zero_one = assoc.iter().all(|&v| v == 0.0 || v == 1.0);
        let plus_minus = assoc.iter().all(|&v| v == -1.0 || v == 1.0);
        zero_one || plus_minus
    }

    pub fn num_classes(&self) -> usize {
        self.assoc.nrows()
    }

    pub fn num_attributes(&self) -> usize {
        self.assoc.ncols()
    }

    pub fn assoc(&self) -> ArrayView2<'_, f64> {
        self.assoc.view()
    }

    pub fn is_binary(&self) -> bool {
        self.is_binary
    }

    /// True when binary under the {0,1} convention specifically.
    pub fn is_zero_one(&self) -> bool {
        self.is_binary && self.assoc.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn attribute_names(&self) -> Option<&[String]> {
        self.attribute_names.as_deref()
    }

    pub fn value(&self, class: usize, attribute: usize) -> f64 {
        self.assoc[(class, attribute)]
    }
}

/// Rooted tree over class-and-ancestor nodes.
///
/// Node ids are dense `0..num_nodes`. Classes map to nodes through an
/// explicit table when the source file provides one, and by identity
/// (class id = node id) otherwise.
#[derive(Debug, Clone)]
pub struct TaxonomyTree {
    names: Vec<String>,
    parent: Vec<Option<usize>>,
    root: usize,
    class_to_node: BTreeMap<usize, usize>,
}

impl TaxonomyTree {
    /// `parent[i]` is `None` exactly for the root. Validates single-root,
    /// acyclicity and dangling parents.
    pub fn new(
        names: Vec<String>,
        parent: Vec<Option<usize>>,
        class_to_node: BTreeMap<usize, usize>,
    ) -> Result<Self> {
        let m = parent.len();
        if names.len() != m {
            return Err(Error::DimMismatch {
                context: "taxonomy names",
                expected: m,
                found: names.len(),
            });
        }
        let mut root = None;
        for (node, p) in parent.iter().enumerate() {
            match p {
                None => match root {
                    None => root = Some(node),
                    Some(first) => {
                        return Err(Error::MultipleRoots { first, second: node })
                    }
                },
                Some(p) if *p >= m => {
                    return Err(Error::DanglingParent { node, parent: *p })
                }
                Some(_) => {}
            }
        }
        let root = root.ok_or(Error::NoRoot)?;
        // A walk longer than the node count must have revisited a node.
        for start in 0..m {
            let mut node = start;
            let mut steps = 0;
            while let Some(p) = parent[node] {
                node = p;
                steps += 1;
                if steps > m {
                    return Err(Error::TaxonomyCycle { node: start });
                }
            }
        }
        for (&class, &node) in &class_to_node {
            if node >= m {
                return Err(Error::UnmappedClass { class });
            }
        }
        Ok(TaxonomyTree { names, parent, root, class_to_node })
    }

    pub fn num_nodes(&self) -> usize {
        self.parent.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn node_name(&self, node: usize) -> &str {
        &self.names[node]
    }

    pub fn children(&self, node: usize) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&n| self.parent[n] == Some(node))
            .collect()
    }

    pub fn node_for_class(&self, class: usize) -> Result<usize> {
        match self.class_to_node.get(&class) {
            Some(&node) => Ok(node),
            None if class < self.num_nodes() => Ok(class),
            None => Err(Error::UnmappedClass { class }),
        }
    }

    /// The node's ancestor chain including the node itself, root last.
    pub fn ancestors_and_self(&self, node: usize) -> Vec<usize> {
        let mut chain = vec![node];
        let mut cur = node;
        while let Some(p) = self.parent[cur] {
            chain.push(p);
            cur = p;
        }
        chain
    }
}

/// How to carve a feature set into train and eval sides.
///
/// Disjoint class sets with no cap is the zero-shot protocol; a cap of `k`
/// moves `k` samples of each eval class into the train side (few-shot);
/// classes listed on both sides are partitioned half/half per class before
/// the cap and fraction apply (full-data protocol).
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub train_classes: Vec<usize>,
    pub eval_classes: Vec<usize>,
    pub per_class_train_cap: Option<usize>,
    pub train_fraction: Option<f64>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        for &c in self.train_classes.iter().chain(&self.eval_classes) {
            if c >= num_classes {
                return Err(Error::InvalidConfig(format!(
                    "split references class {c}, dataset has {num_classes}"
                )));
            }
        }
        if self.train_classes.is_empty() {
            return Err(Error::InvalidConfig("no train classes".into()));
        }
        if let Some(cap) = self.per_class_train_cap {
            if cap == 0 {
                return Err(Error::InvalidConfig("per_class_train_cap must be >= 1".into()));
            }
        }
        if let Some(f) = self.train_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "train_fraction must be in (0,1], got {f}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_zero_shot(&self) -> bool {
        let train: BTreeSet<_> = self.train_classes.iter().collect();
        self.per_class_train_cap.is_none()
            && self.eval_classes.iter().all(|c| !train.contains(c))
    }
}

/// Row indices of a realized split, both sides sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Deterministically sample a train/eval split.
///
/// Classes are visited in ascending id order and each class's pool is
/// shuffled with the spec-seeded generator, so a seed pins the result
/// exactly.
pub fn make_split(fs: &FeatureSet, spec: &SplitSpec) -> Result<Split> {
    spec.validate(fs.num_classes())?;
    let train_set: BTreeSet<usize> = spec.train_classes.iter().copied().collect();
    let eval_set: BTreeSet<usize> = spec.eval_classes.iter().copied().collect();

    let mut pools: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for n in 0..fs.num_samples() {
        pools.entry(fs.label(n)).or_default().push(n);
    }

    let mut rng = seeded_rng(spec.seed);
    let mut train = Vec::new();
    let mut eval = Vec::new();

    for (&class, pool) in &pools {
        let in_train = train_set.contains(&class);
        let in_eval = eval_set.contains(&class);
        if !in_train && !in_eval {
            continue;
        }
        let mut shuffled = pool.clone();
        shuffled.shuffle(&mut rng);

        let (mut train_pool, eval_pool): (Vec<usize>, Vec<usize>) = if in_train && in_eval {
            let half = shuffled.len().div_ceil(2);
            let rest = shuffled.split_off(half);
            (shuffled, rest)
        } else if in_train {
            (shuffled, Vec::new())
        } else {
            match spec.per_class_train_cap {
                Some(cap) => {
                    let take = cap.min(shuffled.len());
                    let rest = shuffled.split_off(take);
                    (shuffled, rest)
                }
                None => (Vec::new(), shuffled),
            }
        };

        if in_train && in_eval {
            if let Some(cap) = spec.per_class_train_cap {
                train_pool.truncate(cap);
            }
        }
        if let Some(f) = spec.train_fraction {
            if !train_pool.is_empty() {
                let keep = ((f * train_pool.len() as f64).round() as usize)
                    .clamp(1, train_pool.len());
                train_pool.truncate(keep);
            }
        }

        train.extend(train_pool);
        eval.extend(eval_pool);
    }

    if train.is_empty() {
        return Err(Error::EmptySplit);
    }
    train.sort_unstable();
    eval.sort_unstable();
    Ok(Split { train, eval })
}
