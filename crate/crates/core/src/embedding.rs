//! Class-embedding construction: attribute tables, taxonomy indicators,
//! external vectors, one-vs-rest, Gaussian and Hadamard codes, plus the
//! encode / center / normalize / reduce / fuse pipeline.
//!
//! A [`ClassEmbedding`] is the E x C matrix whose column `y` embeds class
//! `y`. The processing order is fixed: encoding, then mean-centering, then
//! l2 normalization, then optional dimensionality reduction. Centering an
//! already normalized embedding is rejected.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::{AttributeTable, TaxonomyTree};
use crate::error::{Error, Result};
use crate::util::{finite_or_err, parse_csv_numbers, seeded_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Continuous,
    ZeroOne,
    PlusMinus,
}

impl Encoding {
    pub fn name(self) -> &'static str {
        match self {
            Encoding::Continuous => "continuous",
            Encoding::ZeroOne => "zero-one",
            Encoding::PlusMinus => "plus-minus",
        }
    }

    /// Describe the actual matrix content. Checked against {0,1} first, so
    /// an all-ones matrix counts as zero-one.
    fn detect(phi: &Array2<f64>) -> Encoding {
        if phi.iter().all(|&v| v == 0.0 || v == 1.0) {
            Encoding::ZeroOne
        } else if phi.iter().all(|&v| v == -1.0 || v == 1.0) {
            Encoding::PlusMinus
        } else {
            Encoding::Continuous
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    Attribute,
    Hierarchy,
    External,
    Ovr,
    Gaussian,
    Hadamard,
    Fused,
    Learned,
}

/// E x C class-embedding matrix with provenance and normalization flags.
#[derive(Debug, Clone)]
pub struct ClassEmbedding {
    phi: Array2<f64>,
    source: EmbeddingSource,
    encoding: Encoding,
    centered: bool,
    l2_normalized: bool,
}

impl ClassEmbedding {
    pub fn new(phi: Array2<f64>, source: EmbeddingSource) -> Result<Self> {
        for ((row, col), &v) in phi.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: "<memory>".into(),
                    row: row + 1,
                    col: col + 1,
                });
            }
        }
        let encoding = Encoding::detect(&phi);
        Ok(ClassEmbedding { phi, source, encoding, centered: false, l2_normalized: false })
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.phi.ncols()
    }

    pub fn phi(&self) -> ArrayView2<'_, f64> {
        self.phi.view()
    }

    pub fn class_column(&self, y: usize) -> ArrayView1<'_, f64> {
        self.phi.column(y)
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn is_l2_normalized(&self) -> bool {
        self.l2_normalized
    }

    /// Training owns the matrix mutably; everything else reads.
    pub(crate) fn phi_mut(&mut self) -> &mut Array2<f64> {
        &mut self.phi
    }

    pub(crate) fn mark_learned(&mut self) {
        self.source = EmbeddingSource::Learned;
        self.encoding = Encoding::detect(&self.phi);
        self.l2_normalized = false;
    }
}

/// Threshold rule for turning association strengths into {0,1}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    /// Compare against the mean of all table entries.
    GlobalMean,
    Fixed(f64),
}

/// Declarative pipeline from a raw table to a ready embedding.
#[derive(Debug, Clone)]
pub struct EmbeddingRecipe {
    pub encoding: Encoding,
    pub threshold: ThresholdPolicy,
    /// Mean-center each dimension before normalization.
    pub center: bool,
    /// Classes the centering statistics are computed over; `None` means all
    /// columns. Zero-shot setups must pass the training classes only.
    pub center_classes: Option<Vec<usize>>,
    pub l2: bool,
    pub svd_rank: Option<usize>,
    pub sample_dims: Option<(usize, u64)>,
}

impl Default for EmbeddingRecipe {
    /// Continuous, l2-normalized, no centering: the strongest zero-shot
    /// configuration.
    fn default() -> Self {
        EmbeddingRecipe {
            encoding: Encoding::Continuous,
            threshold: ThresholdPolicy::GlobalMean,
            center: false,
            center_classes: None,
            l2: true,
            svd_rank: None,
            sample_dims: None,
        }
    }
}

impl EmbeddingRecipe {
    /// Run the fixed pipeline: encoding, centering, l2, then reduction.
    pub fn apply(&self, mut e: ClassEmbedding) -> Result<ClassEmbedding> {
        match self.encoding {
            Encoding::Continuous => {}
            Encoding::ZeroOne => e = binarize_embedding(&e, self.threshold),
            Encoding::PlusMinus => {
                e = to_plus_minus(&binarize_embedding(&e, self.threshold))?;
            }
        }
        if self.center {
            let all: Vec<usize> = (0..e.num_classes()).collect();
            let over = self.center_classes.as_deref().unwrap_or(&all);
            e = center(&e, over)?;
        }
        if self.l2 {
            e = l2_normalize(&e)?;
        }
        if let Some(rank) = self.svd_rank {
            e = svd_reduce(&e, rank)?;
        }
        if let Some((count, seed)) = self.sample_dims {
            e = sample_dims(&e, count, seed)?;
        }
        Ok(e)
    }
}

/// Embed each class as its row of attribute associations, then run the
/// recipe pipeline.
pub fn attribute_embedding(tab: &AttributeTable, recipe: &EmbeddingRecipe) -> Result<ClassEmbedding> {
    let phi = tab.assoc().t().to_owned();
    let raw = ClassEmbedding::new(phi, EmbeddingSource::Attribute)?;
    recipe.apply(raw)
}

/// Threshold a continuous table into {0,1} with strict `>`. An all-equal
/// table maps to all zeros under the global-mean policy.
pub fn binarize(tab: &AttributeTable, policy: ThresholdPolicy) -> AttributeTable {
    let threshold = threshold_value(tab.assoc(), policy);
    let assoc = tab.assoc().mapv(|v| if v > threshold { 1.0 } else { 0.0 });
    AttributeTable::new(assoc, tab.attribute_names().map(|n| n.to_vec()))
        .expect("binarized table is finite")
}

fn threshold_value(m: ArrayView2<'_, f64>, policy: ThresholdPolicy) -> f64 {
    match policy {
        ThresholdPolicy::GlobalMean => m.sum() / m.len() as f64,
        ThresholdPolicy::Fixed(t) => t,
    }
}

fn binarize_embedding(e: &ClassEmbedding, policy: ThresholdPolicy) -> ClassEmbedding {
    let threshold = threshold_value(e.phi.view(), policy);
    let phi = e.phi.mapv(|v| if v > threshold { 1.0 } else { 0.0 });
    ClassEmbedding {
        phi,
        source: e.source,
        encoding: Encoding::ZeroOne,
        centered: false,
        l2_normalized: false,
    }
}

/// Map a {0,1} embedding to {-1,+1}, so absent attributes contribute to
/// similarity as much as present ones.
pub fn to_plus_minus(e: &ClassEmbedding) -> Result<ClassEmbedding> {
    if e.encoding != Encoding::ZeroOne {
        return Err(Error::WrongEncoding {
            expected: Encoding::ZeroOne.name(),
            found: e.encoding.name(),
        });
    }
    let phi = e.phi.mapv(|v| if v == 1.0 { 1.0 } else { -1.0 });
    Ok(ClassEmbedding {
        phi,
        source: e.source,
        encoding: Encoding::PlusMinus,
        centered: false,
        l2_normalized: false,
    })
}

/// Subtract, from every column, the per-dimension mean computed over the
/// `over` columns. `over` must be the training classes in zero-shot setups.
pub fn center(e: &ClassEmbedding, over: &[usize]) -> Result<ClassEmbedding> {
    if over.is_empty() {
        return Err(Error::EmptyClassSet);
    }
    if e.l2_normalized {
        return Err(Error::CenterAfterNormalize);
    }
    for &c in over {
        if c >= e.num_classes() {
            return Err(Error::InvalidConfig(format!(
                "centering class {c} out of range (C={})",
                e.num_classes()
            )));
        }
    }
    let mut mean = ndarray::Array1::<f64>::zeros(e.dim());
    for &c in over {
        mean += &e.phi.column(c);
    }
    mean /= over.len() as f64;
    let mut phi = e.phi.clone();
    for mut col in phi.axis_iter_mut(Axis(1)) {
        col -= &mean;
    }
    let encoding = Encoding::detect(&phi);
    Ok(ClassEmbedding { phi, source: e.source, encoding, centered: true, l2_normalized: false })
}

/// Scale every column to unit Euclidean norm, making each class closest to
/// itself under the dot-product similarity.
pub fn l2_normalize(e: &ClassEmbedding) -> Result<ClassEmbedding> {
    let mut phi = e.phi.clone();
    for (y, mut col) in phi.axis_iter_mut(Axis(1)).enumerate() {
        let norm = col.dot(&col).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroColumn { class: y });
        }
        col /= norm;
    }
    let encoding = Encoding::detect(&phi);
    Ok(ClassEmbedding {
        phi,
        source: e.source,
        encoding,
        centered: e.centered,
        l2_normalized: true,
    })
}

/// Binary ancestor indicators: entry (z, y) is 1 iff node z is an ancestor
/// of class y's node or the node itself. E equals the node count.
pub fn hierarchy_indicators(tree: &TaxonomyTree, classes: &[usize]) -> Result<ClassEmbedding> {
    if classes.is_empty() {
        return Err(Error::EmptyClassSet);
    }
    let m = tree.num_nodes();
    let mut phi = Array2::<f64>::zeros((m, classes.len()));
    for (col, &class) in classes.iter().enumerate() {
        let node = tree.node_for_class(class)?;
        for z in tree.ancestors_and_self(node) {
            phi[(z, col)] = 1.0;
        }
    }
    Ok(ClassEmbedding {
        phi,
        source: EmbeddingSource::Hierarchy,
        encoding: Encoding::ZeroOne,
        centered: false,
        l2_normalized: false,
    })
}

/// Ancestor indicators followed by l2 normalization.
pub fn hierarchy_embedding(tree: &TaxonomyTree, classes: &[usize]) -> Result<ClassEmbedding> {
    l2_normalize(&hierarchy_indicators(tree, classes)?)
}

/// The C x C identity: plain one-vs-rest training.
pub fn ovr_embedding(num_classes: usize) -> Result<ClassEmbedding> {
    if num_classes == 0 {
        return Err(Error::EmptyClassSet);
    }
    Ok(ClassEmbedding {
        phi: Array2::eye(num_classes),
        source: EmbeddingSource::Ovr,
        encoding: Encoding::ZeroOne,
        centered: false,
        l2_normalized: true,
    })
}

/// E x C standard-normal code matrix, entries drawn row-major from the
/// seeded generator.
pub fn gaussian_embedding(num_classes: usize, dim: usize, seed: u64) -> Result<ClassEmbedding> {
    if num_classes == 0 || dim == 0 {
        return Err(Error::EmptyClassSet);
    }
    let mut rng = seeded_rng(seed);
    let phi = Array2::from_shape_fn((dim, num_classes), |_| rng.sample(StandardNormal));
    Ok(ClassEmbedding {
        phi,
        source: EmbeddingSource::Gaussian,
        encoding: Encoding::Continuous,
        centered: false,
        l2_normalized: false,
    })
}

/// First C columns of the Sylvester-doubled Hadamard matrix H_{2^k} with
/// 2^k >= C; all columns are mutually orthogonal.
pub fn hadamard_embedding(num_classes: usize) -> Result<ClassEmbedding> {
    if num_classes == 0 {
        return Err(Error::EmptyClassSet);
    }
    let order = num_classes.next_power_of_two();
    let mut h = Array2::<f64>::from_elem((1, 1), 1.0);
    while h.nrows() < order {
        let s = h.nrows();
        let mut next = Array2::<f64>::zeros((2 * s, 2 * s));
        next.slice_mut(ndarray::s![..s, ..s]).assign(&h);
        next.slice_mut(ndarray::s![..s, s..]).assign(&h);
        next.slice_mut(ndarray::s![s.., ..s]).assign(&h);
        next.slice_mut(ndarray::s![s.., s..]).assign(&(-&h));
        h = next;
    }
    let phi = h.slice(ndarray::s![.., ..num_classes]).to_owned();
    Ok(ClassEmbedding {
        phi,
        source: EmbeddingSource::Hadamard,
        encoding: Encoding::PlusMinus,
        centered: false,
        l2_normalized: false,
    })
}

/// Load an embedding saved as CSV: a header line of class names, then E
/// rows of C comma-separated reals.
///
/// When `expected_names` is given the columns are aligned to that order and
/// any missing class is an error.
pub fn load_external_embedding(
    path: &Path,
    expected_names: Option<&[String]>,
) -> Result<ClassEmbedding> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))?;
    lines.retain(|l| !l.trim().is_empty());
    if lines.len() < 2 {
        return Err(Error::MalformedHeader {
            path: path.into(),
            reason: "expected a class-name header and at least one data row".into(),
        });
    }
    let names: Vec<String> =
        lines.remove(0).split(',').map(|s| s.trim().to_string()).collect();
    let c = names.len();

    let mut rows = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let values = parse_csv_numbers(path, i + 1, line)?;
        if values.len() != c {
            return Err(Error::RaggedRow {
                path: path.into(),
                row: i + 1,
                expected: c,
                found: values.len(),
            });
        }
        for (col, &v) in values.iter().enumerate() {
            finite_or_err(path, i + 1, col + 1, v)?;
        }
        rows.push(values);
    }
    let e = rows.len();
    let mut phi = Array2::from_shape_fn((e, c), |(i, j)| rows[i][j]);

    if let Some(expected) = expected_names {
        let index: BTreeMap<&str, usize> =
            names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut order = Vec::with_capacity(expected.len());
        for name in expected {
            match index.get(name.as_str()) {
                Some(&i) => order.push(i),
                None => return Err(Error::ClassNameMismatch { class: name.clone() }),
            }
        }
        if expected.len() != c {
            return Err(Error::MalformedHeader {
                path: path.into(),
                reason: format!("file has {c} classes, dataset expects {}", expected.len()),
            });
        }
        let mut aligned = Array2::zeros((e, expected.len()));
        for (out, &src) in order.iter().enumerate() {
            aligned.column_mut(out).assign(&phi.column(src));
        }
        phi = aligned;
    }

    ClassEmbedding::new(phi, EmbeddingSource::External)
}

/// Write an embedding in the external CSV format. Falls back to `c0..` for
/// missing class names. Values round-trip exactly through `f64` parsing.
pub fn write_embedding(
    e: &ClassEmbedding,
    path: &Path,
    class_names: Option<&[String]>,
) -> Result<()> {
    let file = File::create(path).map_err(|err| Error::io(path, err))?;
    let mut w = BufWriter::new(file);
    let header: Vec<String> = match class_names {
        Some(names) if names.len() == e.num_classes() => names.to_vec(),
        _ => (0..e.num_classes()).map(|i| format!("c{i}")).collect(),
    };
    writeln!(w, "{}", header.join(",")).map_err(|err| Error::io(path, err))?;
    for row in e.phi.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|err| Error::io(path, err))
}

/// Keep the top-`rank` right-singular directions scaled by their singular
/// values, so pairwise column dot-products survive as well as the rank
/// allows; at full rank the Gram matrix is preserved exactly.
pub fn svd_reduce(e: &ClassEmbedding, rank: usize) -> Result<ClassEmbedding> {
    let max = e.dim().min(e.num_classes());
    if rank == 0 || rank > max {
        return Err(Error::RankOutOfRange { rank, max });
    }
    let (rows, cols) = e.phi.dim();
    let m = nalgebra::DMatrix::from_fn(rows, cols, |i, j| e.phi[(i, j)]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma = svd.singular_values;

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap());

    let mut phi = Array2::<f64>::zeros((rank, cols));
    for (out, &i) in order.iter().take(rank).enumerate() {
        for j in 0..cols {
            phi[(out, j)] = sigma[i] * v_t[(i, j)];
        }
    }
    Ok(ClassEmbedding {
        phi,
        source: e.source,
        encoding: Encoding::Continuous,
        centered: e.centered,
        l2_normalized: false,
    })
}

/// Keep `count` distinct dimensions drawn uniformly without replacement;
/// with `count == E` this is a row permutation.
pub fn sample_dims(e: &ClassEmbedding, count: usize, seed: u64) -> Result<ClassEmbedding> {
    if count == 0 || count > e.dim() {
        return Err(Error::SampleCountOutOfRange { requested: count, available: e.dim() });
    }
    let mut rows: Vec<usize> = (0..e.dim()).collect();
    rows.shuffle(&mut seeded_rng(seed));
    rows.truncate(count);

    let mut phi = Array2::zeros((count, e.num_classes()));
    for (out, &r) in rows.iter().enumerate() {
        phi.row_mut(out).assign(&e.phi.row(r));
    }
    let encoding = Encoding::detect(&phi);
    Ok(ClassEmbedding {
        phi,
        source: e.source,
        encoding,
        centered: e.centered,
        l2_normalized: e.l2_normalized && count == e.dim(),
    })
}

/// Keep the columns of the listed classes, in the listed order. Zero-shot
/// protocols train on one class subset and score another.
pub fn select_classes(e: &ClassEmbedding, classes: &[usize]) -> Result<ClassEmbedding> {
    if classes.is_empty() {
        return Err(Error::EmptyClassSet);
    }
    let mut phi = Array2::zeros((e.dim(), classes.len()));
    for (out, &class) in classes.iter().enumerate() {
        if class >= e.num_classes() {
            return Err(Error::InvalidConfig(format!(
                "class {class} out of range (C={})",
                e.num_classes()
            )));
        }
        phi.column_mut(out).assign(&e.phi.column(class));
    }
    Ok(ClassEmbedding {
        phi,
        source: e.source,
        encoding: e.encoding,
        centered: e.centered,
        l2_normalized: e.l2_normalized,
    })
}

/// Row-wise concatenation; each block keeps its own normalization.
pub fn fuse_early(a: &ClassEmbedding, b: &ClassEmbedding) -> Result<ClassEmbedding> {
    if a.num_classes() != b.num_classes() {
        return Err(Error::DimMismatch {
            context: "fuse_early class count",
            expected: a.num_classes(),
            found: b.num_classes(),
        });
    }
    let mut phi = Array2::zeros((a.dim() + b.dim(), a.num_classes()));
    phi.slice_mut(ndarray::s![..a.dim(), ..]).assign(&a.phi);
    phi.slice_mut(ndarray::s![a.dim().., ..]).assign(&b.phi);
    let encoding = Encoding::detect(&phi);
    Ok(ClassEmbedding {
        phi,
        source: EmbeddingSource::Fused,
        encoding,
        centered: a.centered && b.centered,
        l2_normalized: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_taxonomy;
    use ndarray::array;
    use std::io::Write as _;

    fn table(values: Array2<f64>) -> AttributeTable {
        AttributeTable::new(values, None).unwrap()
    }

    #[test]
    fn binarize_global_mean() {
        let tab = table(array![[0.9, 0.1], [0.2, 0.8]]);
        // mean = (0.9 + 0.1 + 0.2 + 0.8) / 4 = 0.5
        let bin = binarize(&tab, ThresholdPolicy::GlobalMean);
        assert_eq!(bin.assoc(), array![[1.0, 0.0], [0.0, 1.0]]);
        assert!(bin.is_binary());
    }

    #[test]
    fn binarize_all_equal_maps_to_zero() {
        let tab = table(array![[0.3, 0.3], [0.3, 0.3]]);
        let bin = binarize(&tab, ThresholdPolicy::GlobalMean);
        assert!(bin.assoc().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn binarize_fixed_zero_keeps_zero_one_table() {
        let tab = table(array![[1.0, 0.0], [0.0, 1.0]]);
        let bin = binarize(&tab, ThresholdPolicy::Fixed(0.0));
        assert_eq!(bin.assoc(), tab.assoc());
    }

    #[test]
    fn plus_minus_mapping() {
        let e = ClassEmbedding::new(array![[1.0, 0.0], [0.0, 1.0]], EmbeddingSource::Attribute)
            .unwrap();
        let pm = to_plus_minus(&e).unwrap();
        assert_eq!(pm.phi(), array![[1.0, -1.0], [-1.0, 1.0]]);

        let ones =
            ClassEmbedding::new(array![[1.0], [1.0]], EmbeddingSource::Attribute).unwrap();
        assert_eq!(to_plus_minus(&ones).unwrap().phi(), array![[1.0], [1.0]]);

        let cont =
            ClassEmbedding::new(array![[0.5], [0.1]], EmbeddingSource::Attribute).unwrap();
        assert!(matches!(to_plus_minus(&cont), Err(Error::WrongEncoding { .. })));
    }

    #[test]
    fn center_over_all_columns() {
        let e = ClassEmbedding::new(array![[1.0, 0.0], [0.0, 1.0]], EmbeddingSource::Attribute)
            .unwrap();
        let c = center(&e, &[0, 1]).unwrap();
        assert_eq!(c.phi(), array![[0.5, -0.5], [-0.5, 0.5]]);
        assert!(c.is_centered());

        // Idempotent within 1e-12.
        let twice = center(&c, &[0, 1]).unwrap();
        for (a, b) in twice.phi().iter().zip(c.phi().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn center_single_class_zeroes_its_column() {
        let e = ClassEmbedding::new(array![[2.0, 5.0], [3.0, 7.0]], EmbeddingSource::Attribute)
            .unwrap();
        let c = center(&e, &[0]).unwrap();
        assert_eq!(c.phi().column(0), array![0.0, 0.0]);
        assert_eq!(c.phi().column(1), array![3.0, 4.0]);
    }

    #[test]
    fn center_rejects_empty_set_and_normalized_input() {
        let e = ClassEmbedding::new(array![[1.0, 0.0], [0.0, 1.0]], EmbeddingSource::Attribute)
            .unwrap();
        assert!(matches!(center(&e, &[]), Err(Error::EmptyClassSet)));
        let n = l2_normalize(&e).unwrap();
        assert!(matches!(center(&n, &[0, 1]), Err(Error::CenterAfterNormalize)));
    }

    #[test]
    fn l2_normalize_columns() {
        let e = ClassEmbedding::new(array![[3.0], [4.0]], EmbeddingSource::Attribute).unwrap();
        let n = l2_normalize(&e).unwrap();
        assert_eq!(n.phi(), array![[0.6], [0.8]]);

        let eye = ovr_embedding(3).unwrap();
        let n = l2_normalize(&eye).unwrap();
        assert_eq!(n.phi(), Array2::eye(3));

        let zero =
            ClassEmbedding::new(array![[0.0, 1.0], [0.0, 1.0]], EmbeddingSource::Attribute)
                .unwrap();
        assert!(matches!(l2_normalize(&zero), Err(Error::ZeroColumn { class: 0 })));
    }

    #[test]
    fn attribute_embedding_scale_removed_by_l2() {
        let recipe = EmbeddingRecipe::default();
        let tab = table(array![[2.0, 0.0], [0.0, 2.0]]);
        let e = attribute_embedding(&tab, &recipe).unwrap();
        assert_eq!(e.phi(), Array2::eye(2));

        let tab = table(array![[1.0, 0.0], [0.0, 1.0]]);
        let recipe = EmbeddingRecipe { encoding: Encoding::ZeroOne, ..Default::default() };
        let e = attribute_embedding(&tab, &recipe).unwrap();
        assert_eq!(e.phi(), Array2::eye(2));
    }

    #[test]
    fn recipe_pipeline_is_idempotent() {
        let tab = table(array![[0.9, 0.1, 0.3], [0.2, 0.8, 0.5], [0.4, 0.4, 0.9]]);
        let recipe = EmbeddingRecipe {
            center: true,
            center_classes: Some(vec![0, 1]),
            ..Default::default()
        };
        let once = attribute_embedding(&tab, &recipe).unwrap();
        // Re-running encoding+l2 on the processed matrix changes nothing;
        // centering is forbidden on the normalized result by construction.
        let again = l2_normalize(&once).unwrap();
        for (a, b) in again.phi().iter().zip(once.phi().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_embedding_is_self_closest() {
        let tab = table(array![[0.9, 0.1, 0.3], [0.2, 0.8, 0.5], [0.45, 0.4, 0.9]]);
        let e = attribute_embedding(&tab, &EmbeddingRecipe::default()).unwrap();
        for y in 0..e.num_classes() {
            let own = e.class_column(y).dot(&e.class_column(y));
            for z in 0..e.num_classes() {
                if z != y {
                    assert!(e.class_column(y).dot(&e.class_column(z)) < own);
                }
            }
        }
    }

    #[test]
    fn hierarchy_column_matches_ancestor_closure() {
        // Root 0 with children 1, 2; 1 has 3, 4; 2 has 5, 6. The class at
        // node 5 must light up exactly {0, 2, 5}.
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"0 -1\n1 0\n2 0\n3 1\n4 1\n5 2\n6 2\n").unwrap();
        let tree = load_taxonomy(f.path()).unwrap();
        let classes: Vec<usize> = (0..7).collect();
        let raw = hierarchy_indicators(&tree, &classes).unwrap();
        assert_eq!(
            raw.phi().column(5).to_vec(),
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]
        );

        // Brute-force path walk oracle over every (node, class) pair.
        for y in 0..7 {
            let mut expected = vec![0.0; 7];
            let mut cur = Some(y);
            while let Some(n) = cur {
                expected[n] = 1.0;
                cur = tree.parent(n);
            }
            assert_eq!(raw.phi().column(y).to_vec(), expected);
        }

        let norm = hierarchy_embedding(&tree, &classes).unwrap();
        let third = 1.0 / 3.0f64.sqrt();
        for &(row, val) in
            &[(0usize, third), (2, third), (5, third), (1, 0.0), (3, 0.0)]
        {
            assert!((norm.phi()[(row, 5)] - val).abs() < 1e-12);
        }
    }

    #[test]
    fn hierarchy_root_only() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"0 -1\n").unwrap();
        let tree = load_taxonomy(f.path()).unwrap();
        let e = hierarchy_embedding(&tree, &[0]).unwrap();
        assert_eq!(e.phi(), array![[1.0]]);
    }

    #[test]
    fn gaussian_embedding_is_seed_deterministic() {
        let a = gaussian_embedding(5, 7, 123).unwrap();
        let b = gaussian_embedding(5, 7, 123).unwrap();
        assert_eq!(a.phi(), b.phi());
        let c = gaussian_embedding(5, 7, 124).unwrap();
        assert_ne!(a.phi(), c.phi());
    }

    #[test]
    fn gaussian_embedding_shape_and_moments() {
        let e = gaussian_embedding(50, 2500, 7).unwrap();
        assert_eq!((e.dim(), e.num_classes()), (2500, 50));
        let n = (2500 * 50) as f64;
        let mean = e.phi().sum() / n;
        let var = e.phi().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        // 3-sigma bands for the sample mean and variance of n iid N(0,1).
        assert!(mean.abs() < 3.0 / n.sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt(), "var {var}");
    }

    #[test]
    fn hadamard_small_cases() {
        let h2 = hadamard_embedding(2).unwrap();
        assert_eq!(h2.phi(), array![[1.0, 1.0], [1.0, -1.0]]);

        // H_4 by hand; C=3 keeps its first three columns.
        let h3 = hadamard_embedding(3).unwrap();
        assert_eq!((h3.dim(), h3.num_classes()), (4, 3));
        let h4 = array![
            [1.0, 1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
        ];
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(h3.phi()[(i, j)], h4[(i, j)]);
            }
        }
    }

    #[test]
    fn hadamard_columns_orthogonal() {
        let e = hadamard_embedding(6).unwrap();
        for a in 0..6 {
            for b in (a + 1)..6 {
                assert_eq!(e.class_column(a).dot(&e.class_column(b)), 0.0);
            }
        }
    }

    #[test]
    fn external_embedding_round_trip_and_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wv.csv");
        std::fs::write(&path, "cat,dog\n0.25,1.5\n-3.125,0.75\n1.0,2.0\n0.5,-0.5\n")
            .unwrap();
        let e = load_external_embedding(&path, None).unwrap();
        assert_eq!((e.dim(), e.num_classes()), (4, 2));

        // Alignment reorders columns to the expected order.
        let expected = vec!["dog".to_string(), "cat".to_string()];
        let aligned = load_external_embedding(&path, Some(&expected)).unwrap();
        assert_eq!(aligned.phi().column(0), e.phi().column(1));

        let missing = vec!["dog".to_string(), "wolf".to_string()];
        let err = load_external_embedding(&path, Some(&missing)).unwrap_err();
        assert!(err.to_string().contains("wolf"), "{err}");

        let n = l2_normalize(&e).unwrap();
        for y in 0..2 {
            let norm = n.class_column(y).dot(&n.class_column(y)).sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn write_then_load_embedding_is_exact() {
        let e = gaussian_embedding(4, 6, 99).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        write_embedding(&e, &path, None).unwrap();
        let back = load_external_embedding(&path, None).unwrap();
        assert_eq!(back.phi(), e.phi());
    }

    fn gram(e: &ClassEmbedding) -> Array2<f64> {
        e.phi().t().dot(&e.phi())
    }

    #[test]
    fn svd_full_rank_preserves_gram() {
        let e = gaussian_embedding(5, 8, 11).unwrap();
        let before = gram(&e);
        let reduced = svd_reduce(&e, 5).unwrap();
        assert_eq!((reduced.dim(), reduced.num_classes()), (5, 5));
        let after = gram(&reduced);
        for (a, b) in after.iter().zip(before.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn svd_rank_one_input_exact_at_rank_one() {
        let col = array![[1.0], [2.0], [2.0]];
        let phi = col.dot(&array![[1.0, 0.5, -2.0]]);
        let e = ClassEmbedding::new(phi, EmbeddingSource::Attribute).unwrap();
        let before = gram(&e);
        let reduced = svd_reduce(&e, 1).unwrap();
        let after = gram(&reduced);
        for (a, b) in after.iter().zip(before.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn svd_awa_shaped_reduction() {
        // 85 attributes x 50 classes reduced to 25 dimensions.
        let e = gaussian_embedding(50, 85, 3).unwrap();
        let reduced = svd_reduce(&e, 25).unwrap();
        assert_eq!((reduced.dim(), reduced.num_classes()), (25, 50));
        assert!(matches!(
            svd_reduce(&e, 51),
            Err(Error::RankOutOfRange { rank: 51, max: 50 })
        ));
    }

    #[test]
    fn sample_dims_behaviour() {
        let e = gaussian_embedding(4, 10, 5).unwrap();
        // Full count is a row permutation: same multiset of rows.
        let perm = sample_dims(&e, 10, 17).unwrap();
        let mut orig: Vec<Vec<u64>> = e
            .phi()
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut permuted: Vec<Vec<u64>> = perm
            .phi()
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        orig.sort();
        permuted.sort();
        assert_eq!(orig, permuted);

        // Different seeds generally pick different row sets.
        let picks: std::collections::BTreeSet<Vec<u64>> = (0..10)
            .map(|seed| {
                sample_dims(&e, 5, seed)
                    .unwrap()
                    .phi()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect()
            })
            .collect();
        assert!(picks.len() > 1);

        assert!(matches!(
            sample_dims(&e, 11, 0),
            Err(Error::SampleCountOutOfRange { .. })
        ));
    }

    #[test]
    fn fuse_early_concatenates_rows() {
        let a = ovr_embedding(2).unwrap();
        let b = ovr_embedding(2).unwrap();
        let f = fuse_early(&a, &b).unwrap();
        assert_eq!((f.dim(), f.num_classes()), (4, 2));
        for y in 0..2 {
            let norm = f.class_column(y).dot(&f.class_column(y)).sqrt();
            assert!((norm - 2.0f64.sqrt()).abs() < 1e-12);
        }

        let a = gaussian_embedding(50, 85, 0).unwrap();
        let b = gaussian_embedding(50, 150, 1).unwrap();
        let f = fuse_early(&a, &b).unwrap();
        assert_eq!((f.dim(), f.num_classes()), (235, 50));

        let c = gaussian_embedding(49, 85, 2).unwrap();
        assert!(fuse_early(&a, &c).is_err());
    }
}
