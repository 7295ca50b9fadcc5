//! On-disk formats for features, attribute tables and taxonomies.
//!
//! Dense binary feature file, little-endian throughout:
//!
//! ```text
//! magic    u64   "LEMBFEAT"
//! version  u64   1
//! n, d, c  u64   sample count, feature dim, class count
//! features f32   n*d values, row-major
//! labels   u32   n values
//! ```
//!
//! CSV is accepted only for small matrices: comma-separated, no quoting.
//! Feature CSV starts with a `n,d,c` header line followed by n rows of d
//! values plus the integer label. Attribute CSV is c rows of e values with
//! an optional leading line of attribute names.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{AttributeTable, FeatureSet, TaxonomyTree};
use crate::error::{Error, Result};
use crate::util::{finite_or_err, is_numeric_line, parse_csv_numbers};

pub(crate) const FEATURES_MAGIC: u64 = u64::from_le_bytes(*b"LEMBFEAT");
pub(crate) const FEATURES_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    DenseBinary,
    Csv,
}

pub fn load_features(path: &Path, format: FeatureFormat) -> Result<FeatureSet> {
    match format {
        FeatureFormat::DenseBinary => load_features_binary(path),
        FeatureFormat::Csv => load_features_csv(path),
    }
}

pub fn write_features(fs: &FeatureSet, path: &Path, format: FeatureFormat) -> Result<()> {
    match format {
        FeatureFormat::DenseBinary => write_features_binary(fs, path),
        FeatureFormat::Csv => write_features_csv(fs, path),
    }
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(buf))
}

fn load_features_binary(path: &Path) -> Result<FeatureSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    if read_u64(&mut r, path)? != FEATURES_MAGIC {
        return Err(Error::BadMagic { path: path.into(), expected: "feature" });
    }
    let version = read_u64(&mut r, path)?;
    if version != FEATURES_VERSION {
        return Err(Error::UnsupportedVersion { path: path.into(), found: version });
    }
    let n = read_u64(&mut r, path)? as usize;
    let d = read_u64(&mut r, path)? as usize;
    let c = read_u64(&mut r, path)? as usize;
    if n == 0 || d == 0 || c == 0 {
        return Err(Error::MalformedHeader {
            path: path.into(),
            reason: format!("n={n}, d={d}, c={c} must all be >= 1"),
        });
    }

    let mut features = Array2::<f32>::zeros((n, d));
    let mut row_buf = vec![0u8; d * 4];
    for row in 0..n {
        r.read_exact(&mut row_buf).map_err(|e| Error::io(path, e))?;
        for (col, chunk) in row_buf.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: path.into(),
                    row: row + 1,
                    col: col + 1,
                });
            }
            features[(row, col)] = v;
        }
    }

    let mut labels = Vec::with_capacity(n);
    let mut label_buf = [0u8; 4];
    for row in 0..n {
        r.read_exact(&mut label_buf).map_err(|e| Error::io(path, e))?;
        let label = u32::from_le_bytes(label_buf);
        if label as usize >= c {
            return Err(Error::LabelOutOfRange {
                path: path.into(),
                row: row + 1,
                label,
                num_classes: c,
            });
        }
        labels.push(label);
    }

    FeatureSet::new(features, labels, c, None)
}

fn write_features_binary(fs: &FeatureSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |v: u64| w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e));
    put(FEATURES_MAGIC)?;
    put(FEATURES_VERSION)?;
    put(fs.num_samples() as u64)?;
    put(fs.feature_dim() as u64)?;
    put(fs.num_classes() as u64)?;
    for &v in fs.features().iter() {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    for &l in fs.labels() {
        w.write_all(&l.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_features_csv(path: &Path) -> Result<FeatureSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader { path: path.into(), reason: "empty file".into() })?
        .map_err(|e| Error::io(path, e))?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::MalformedHeader {
            path: path.into(),
            reason: format!("expected `n,d,c` integers, got {header:?}"),
        })?;
    let [n, d, c] = dims[..] else {
        return Err(Error::MalformedHeader {
            path: path.into(),
            reason: format!("expected 3 header fields, got {}", dims.len()),
        });
    };
    if n == 0 || d == 0 || c == 0 {
        return Err(Error::MalformedHeader {
            path: path.into(),
            reason: format!("n={n}, d={d}, c={c} must all be >= 1"),
        });
    }

    let mut features = Array2::<f32>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for row in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| Error::MalformedHeader {
                path: path.into(),
                reason: format!("header declares {n} rows, file has {row}"),
            })?
            .map_err(|e| Error::io(path, e))?;
        let values = parse_csv_numbers(path, row + 1, &line)?;
        if values.len() != d + 1 {
            return Err(Error::RaggedRow {
                path: path.into(),
                row: row + 1,
                expected: d + 1,
                found: values.len(),
            });
        }
        for (col, &v) in values[..d].iter().enumerate() {
            features[(row, col)] = finite_or_err(path, row + 1, col + 1, v)? as f32;
        }
        let label = values[d];
        if label.fract() != 0.0 || label < 0.0 {
            return Err(Error::BadNumber {
                path: path.into(),
                row: row + 1,
                col: d + 1,
                token: format!("{label} (label must be a non-negative integer)"),
            });
        }
        let label = label as u32;
        if label as usize >= c {
            return Err(Error::LabelOutOfRange {
                path: path.into(),
                row: row + 1,
                label,
                num_classes: c,
            });
        }
        labels.push(label);
    }

    FeatureSet::new(features, labels, c, None)
}

fn write_features_csv(fs: &FeatureSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{},{},{}", fs.num_samples(), fs.feature_dim(), fs.num_classes())
        .map_err(|e| Error::io(path, e))?;
    for n in 0..fs.num_samples() {
        let mut line = String::new();
        for v in fs.row(n).iter() {
            line.push_str(&format!("{v},"));
        }
        line.push_str(&fs.label(n).to_string());
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Load a C x E attribute CSV. A leading line that does not parse as
/// numbers is taken as attribute names.
pub fn load_attributes(path: &Path) -> Result<AttributeTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))?;
    lines.retain(|l| !l.trim().is_empty());
    if lines.is_empty() {
        return Err(Error::MalformedHeader { path: path.into(), reason: "empty file".into() });
    }

    let attribute_names = if !is_numeric_line(&lines[0]) {
        let names = lines.remove(0);
        Some(names.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>())
    } else {
        None
    };
    if lines.is_empty() {
        return Err(Error::MalformedHeader {
            path: path.into(),
            reason: "no data rows".into(),
        });
    }

    let mut rows = Vec::with_capacity(lines.len());
    let mut width = None;
    for (i, line) in lines.iter().enumerate() {
        let values = parse_csv_numbers(path, i + 1, line)?;
        for (col, &v) in values.iter().enumerate() {
            finite_or_err(path, i + 1, col + 1, v)?;
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::RaggedRow {
                    path: path.into(),
                    row: i + 1,
                    expected: w,
                    found: values.len(),
                });
            }
            Some(_) => {}
        }
        rows.push(values);
    }

    let c = rows.len();
    let e = width.unwrap();
    let assoc = Array2::from_shape_fn((c, e), |(i, j)| rows[i][j]);
    AttributeTable::new(assoc, attribute_names)
}

/// Load a taxonomy from parent-list text: one `node_id parent_id [name]`
/// per line with `-1` marking the root's parent. Optional `class c n`
/// lines map class ids to nodes (default is class id = node id).
pub fn load_taxonomy(path: &Path) -> Result<TaxonomyTree> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut node_lines: Vec<(usize, i64, Option<String>)> = Vec::new();
    let mut class_map = std::collections::BTreeMap::new();

    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let first = toks.next().unwrap();
        if first == "class" {
            let (Some(c), Some(n)) = (toks.next(), toks.next()) else {
                return Err(Error::MalformedHeader {
                    path: path.into(),
                    reason: format!("line {}: expected `class <id> <node>`", lineno + 1),
                });
            };
            let parse = |t: &str| {
                t.parse::<usize>().map_err(|_| Error::MalformedHeader {
                    path: path.into(),
                    reason: format!("line {}: bad id {t:?}", lineno + 1),
                })
            };
            class_map.insert(parse(c)?, parse(n)?);
            continue;
        }
        let node = first.parse::<usize>().map_err(|_| Error::MalformedHeader {
            path: path.into(),
            reason: format!("line {}: bad node id {first:?}", lineno + 1),
        })?;
        let parent_tok = toks.next().ok_or_else(|| Error::MalformedHeader {
            path: path.into(),
            reason: format!("line {}: missing parent id", lineno + 1),
        })?;
        let parent = parent_tok.parse::<i64>().map_err(|_| Error::MalformedHeader {
            path: path.into(),
            reason: format!("line {}: bad parent id {parent_tok:?}", lineno + 1),
        })?;
        let name = toks.next().map(str::to_string);
        node_lines.push((node, parent, name));
    }

    if node_lines.is_empty() {
        return Err(Error::MalformedHeader {
            path: path.into(),
            reason: "no node lines".into(),
        });
    }
    let m = node_lines.len();
    let mut parent: Vec<Option<Option<usize>>> = vec![None; m];
    let mut names = vec![String::new(); m];
    for (node, p, name) in node_lines {
        if node >= m {
            return Err(Error::MalformedHeader {
                path: path.into(),
                reason: format!("node ids must be dense 0..{m}, found {node}"),
            });
        }
        if parent[node].is_some() {
            return Err(Error::MalformedHeader {
                path: path.into(),
                reason: format!("node {node} defined twice"),
            });
        }
        if p < -1 {
            return Err(Error::MalformedHeader {
                path: path.into(),
                reason: format!("node {node}: bad parent {p}"),
            });
        }
        parent[node] = Some(if p == -1 { None } else { Some(p as usize) });
        names[node] = name.unwrap_or_else(|| format!("node{node}"));
    }
    let parent: Vec<Option<usize>> = parent
        .into_iter()
        .enumerate()
        .map(|(node, p)| {
            p.ok_or_else(|| Error::MalformedHeader {
                path: path.into(),
                reason: format!("node {node} never defined"),
            })
        })
        .collect::<Result<_>>()?;

    TaxonomyTree::new(names, parent, class_map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write as _;

    fn tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_features_minimal() {
        let f = tmp("2,3,2\n1.0,2.0,3.0,0\n4.0,5.0,6.0,1\n");
        let fs = load_features(f.path(), FeatureFormat::Csv).unwrap();
        assert_eq!(fs.num_samples(), 2);
        assert_eq!(fs.feature_dim(), 3);
        assert_eq!(fs.num_classes(), 2);
        assert_eq!(fs.labels(), &[0, 1]);
    }

    #[test]
    fn csv_features_label_out_of_range() {
        let f = tmp("1,2,5\n1.0,2.0,7\n");
        let err = load_features(f.path(), FeatureFormat::Csv).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("label 7 out of range"), "{msg}");
    }

    #[test]
    fn csv_features_nan_token_names_row_and_column() {
        let f = tmp("1,3,1\n1.0,NaN,2.0,0\n");
        let err = load_features(f.path(), FeatureFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, col: 2, .. }), "{err}");
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let fs = FeatureSet::new(
            array![[1.5f32, -0.25, 3.0e-7], [0.0, 1.0e10, -2.5]],
            vec![1, 0],
            2,
            None,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.feat");
        write_features(&fs, &path, FeatureFormat::DenseBinary).unwrap();
        let back = load_features(&path, FeatureFormat::DenseBinary).unwrap();
        assert_eq!(back.num_classes(), 2);
        assert_eq!(back.labels(), fs.labels());
        for (a, b) in back.features().iter().zip(fs.features().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn binary_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.feat");
        std::fs::write(&path, b"definitely not a feature file").unwrap();
        let err = load_features(&path, FeatureFormat::DenseBinary).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
    }

    #[test]
    fn attributes_continuous_and_binary() {
        let f = tmp("0.9,0.1\n0.2,0.8\n");
        let tab = load_attributes(f.path()).unwrap();
        assert_eq!((tab.num_classes(), tab.num_attributes()), (2, 2));
        assert!(!tab.is_binary());

        let f = tmp("1,0\n0,1\n");
        assert!(load_attributes(f.path()).unwrap().is_binary());
    }

    #[test]
    fn attributes_with_name_header() {
        let f = tmp("furry,striped\n0.9,0.1\n0.2,0.8\n");
        let tab = load_attributes(f.path()).unwrap();
        assert_eq!(tab.attribute_names().unwrap(), &["furry", "striped"]);
    }

    #[test]
    fn attributes_ragged_row_reports_index() {
        let f = tmp("1,2,3\n4,5\n");
        let err = load_attributes(f.path()).unwrap_err();
        assert!(matches!(err, Error::RaggedRow { row: 2, .. }), "{err}");
    }

    #[test]
    fn taxonomy_seven_node_tree() {
        // Root with two children, each with two children of its own.
        let f = tmp("0 -1 root\n1 0\n2 0\n3 1\n4 1\n5 2\n6 2\n");
        let tree = load_taxonomy(f.path()).unwrap();
        assert_eq!(tree.num_nodes(), 7);
        assert_eq!(tree.children(tree.root()).len(), 2);
        assert_eq!(tree.ancestors_and_self(5), vec![5, 2, 0]);
    }

    #[test]
    fn taxonomy_single_node() {
        let f = tmp("0 -1\n");
        let tree = load_taxonomy(f.path()).unwrap();
        assert_eq!(tree.num_nodes(), 1);
    }

    #[test]
    fn taxonomy_two_roots_rejected() {
        let f = tmp("0 -1\n1 -1\n");
        let err = load_taxonomy(f.path()).unwrap_err();
        assert!(matches!(err, Error::MultipleRoots { .. }));
    }

    #[test]
    fn taxonomy_class_mapping_lines() {
        let f = tmp("0 -1\n1 0\n2 0\nclass 0 1\nclass 1 2\n");
        let tree = load_taxonomy(f.path()).unwrap();
        assert_eq!(tree.node_for_class(0).unwrap(), 1);
        assert_eq!(tree.node_for_class(1).unwrap(), 2);
        // Identity fallback still applies to unmapped ids within range.
        assert_eq!(tree.node_for_class(2).unwrap(), 2);
        assert!(tree.node_for_class(7).is_err());
    }
}
