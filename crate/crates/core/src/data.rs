//! On-disk dataset bundles and synthetic graph generators.
//!
//! A bundle is a directory holding `manifest.json` plus plain-text data
//! files (UTF-8, LF line endings, no header rows):
//!
//! | file              | content                                             |
//! |-------------------|-----------------------------------------------------|
//! | `edges.tsv`       | `u<TAB>v` per line, zero-based, read as undirected   |
//! | `features.csv`    | one row per node, comma-separated reals             |
//! | `labels.txt`      | one class index per line                            |
//! | `split_*.txt`     | one node index per line (`train`, `val`, `test`)     |
//!
//! The manifest records counts and a hex SHA-256 checksum for every file.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{GraphBundle, Splits};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleFiles {
    pub edges: FileEntry,
    pub features: FileEntry,
    pub labels: FileEntry,
    pub split_train: FileEntry,
    pub split_val: FileEntry,
    pub split_test: FileEntry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub name: String,
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    /// Whether the upstream edge list was directed.
    pub source_directed: bool,
    /// Edge lines in the upstream source, as counted by the exporter.
    pub num_edges_directed: usize,
    /// Distinct unordered non-loop pairs after symmetrization.
    pub num_edges_undirected: usize,
    pub files: BundleFiles,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_checked(dir: &Path, entry: &FileEntry) -> Result<(PathBuf, String)> {
    let path = dir.join(&entry.name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let actual = sha256_hex(&bytes);
    if !actual.eq_ignore_ascii_case(&entry.sha256) {
        return Err(Error::Checksum {
            file: entry.name.clone(),
            expected: entry.sha256.clone(),
            actual,
        });
    }
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.clone(),
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    Ok((path, text))
}

fn parse_token<T: FromStr>(path: &Path, line: usize, token: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    token.trim().parse().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("{token:?}: {e}"),
    })
}

fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_index_list(path: &Path, text: &str) -> Result<Vec<usize>> {
    numbered_lines(text).map(|(n, l)| parse_token(path, n, l)).collect()
}

fn parse_edges(path: &Path, text: &str, num_nodes: usize) -> Result<Vec<(usize, usize)>> {
    numbered_lines(text)
        .map(|(n, l)| {
            let cols: Vec<&str> = l.split(['\t', ' ']).filter(|t| !t.is_empty()).collect();
            if cols.len() != 2 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n,
                    message: format!("expected 2 columns, found {}", cols.len()),
                });
            }
            let u: usize = parse_token(path, n, cols[0])?;
            let v: usize = parse_token(path, n, cols[1])?;
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n,
                    message: format!("node index out of range for {num_nodes} nodes"),
                });
            }
            Ok((u, v))
        })
        .collect()
}

fn parse_features(path: &Path, text: &str, num_nodes: usize, num_features: usize) -> Result<Array2<f64>> {
    let mut features = Array2::zeros((num_features, num_nodes));
    let mut rows = 0;
    for (n, l) in numbered_lines(text) {
        if rows == num_nodes {
            return Err(Error::ManifestMismatch(format!(
                "features.csv has more than {num_nodes} rows"
            )));
        }
        let mut cols = 0;
        for (c, token) in l.split(',').enumerate() {
            if c >= num_features {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n,
                    message: format!("more than {num_features} columns"),
                });
            }
            features[[c, rows]] = parse_token(path, n, token)?;
            cols += 1;
        }
        if cols != num_features {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n,
                message: format!("expected {num_features} columns, found {cols}"),
            });
        }
        rows += 1;
    }
    if rows != num_nodes {
        return Err(Error::ManifestMismatch(format!(
            "features.csv has {rows} rows, manifest says {num_nodes}"
        )));
    }
    Ok(features)
}

pub fn read_manifest(dir: &Path) -> Result<BundleManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
}

/// Loads and validates a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<GraphBundle> {
    load_bundle_with_manifest(dir).map(|(g, _)| g)
}

pub fn load_bundle_with_manifest(dir: impl AsRef<Path>) -> Result<(GraphBundle, BundleManifest)> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    if m.num_nodes == 0 {
        return Err(Error::ManifestMismatch("num_nodes is 0".into()));
    }
    let n = m.num_nodes;

    let (path, text) = read_checked(dir, &m.files.edges)?;
    let edges = parse_edges(&path, &text, n)?;

    let (path, text) = read_checked(dir, &m.files.features)?;
    let features = parse_features(&path, &text, n, m.num_features)?;

    let (path, text) = read_checked(dir, &m.files.labels)?;
    let labels = parse_index_list(&path, &text)?;
    if labels.len() != n {
        return Err(Error::ManifestMismatch(format!(
            "labels.txt has {} entries, manifest says {n}",
            labels.len()
        )));
    }

    let mut split_lists = Vec::with_capacity(3);
    for entry in [&m.files.split_train, &m.files.split_val, &m.files.split_test] {
        let (path, text) = read_checked(dir, entry)?;
        split_lists.push(parse_index_list(&path, &text)?);
    }
    let test = split_lists.pop().unwrap_or_default();
    let val = split_lists.pop().unwrap_or_default();
    let train = split_lists.pop().unwrap_or_default();

    let graph = GraphBundle::new(n, &edges, features, labels, m.num_classes, Splits { train, val, test })?;
    let undirected = graph.adjacency().num_undirected_edges();
    if undirected != m.num_edges_undirected {
        return Err(Error::ManifestMismatch(format!(
            "edges.tsv yields {undirected} undirected edges, manifest says {}",
            m.num_edges_undirected
        )));
    }
    Ok((graph, m))
}

fn index_lines(values: &[usize]) -> String {
    values.iter().map(|v| format!("{v}\n")).collect()
}

/// Writes `graph` as a canonical bundle into `dir` (created if missing) and
/// returns the manifest. Edges are written once per unordered pair.
pub fn save_bundle(graph: &GraphBundle, name: &str, dir: impl AsRef<Path>) -> Result<BundleManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let edges = graph.adjacency().undirected_edges();
    let edges_text: String = edges.iter().map(|(u, v)| format!("{u}\t{v}\n")).collect();

    let mut features_text = String::new();
    for col in graph.features().columns() {
        let row: Vec<String> = col.iter().map(|v| format!("{v}")).collect();
        features_text.push_str(&row.join(","));
        features_text.push('\n');
    }

    let splits = graph.splits();
    let contents = [
        ("edges.tsv", edges_text),
        ("features.csv", features_text),
        ("labels.txt", index_lines(graph.labels())),
        ("split_train.txt", index_lines(&splits.train)),
        ("split_val.txt", index_lines(&splits.val)),
        ("split_test.txt", index_lines(&splits.test)),
    ];
    let mut entries = Vec::with_capacity(contents.len());
    for (file, text) in &contents {
        let path = dir.join(file);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        entries.push(FileEntry {
            name: (*file).to_string(),
            sha256: sha256_hex(text.as_bytes()),
        });
    }
    let mut it = entries.into_iter();
    let mut next = || it.next().expect("six bundle files");
    let manifest = BundleManifest {
        name: name.to_string(),
        num_nodes: graph.num_nodes(),
        num_features: graph.num_features(),
        num_classes: graph.num_classes(),
        source_directed: false,
        num_edges_directed: graph.adjacency().num_directed_edges(),
        num_edges_undirected: edges.len(),
        files: BundleFiles {
            edges: next(),
            features: next(),
            labels: next(),
            split_train: next(),
            split_val: next(),
            split_test: next(),
        },
    };
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticKind {
    Ring { n: usize },
    Path { n: usize },
    /// Node 0 is the hub.
    Star { n: usize },
    ErdosRenyi { n: usize, p: f64 },
    /// Blocks of the given sizes; labels are block ids.
    StochasticBlock { sizes: Vec<usize>, p_in: f64, p_out: f64 },
}

impl SyntheticKind {
    pub fn num_nodes(&self) -> usize {
        match self {
            Self::Ring { n } | Self::Path { n } | Self::Star { n } | Self::ErdosRenyi { n, .. } => *n,
            Self::StochasticBlock { sizes, .. } => sizes.iter().sum(),
        }
    }
}

/// Feature and split settings for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub num_features: usize,
    /// Ignored for stochastic-block graphs, which use one class per block.
    pub num_classes: usize,
    /// Scale of the class prototype added to the unit Gaussian noise.
    pub signal: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            num_features: 8,
            num_classes: 2,
            signal: 1.0,
            train_fraction: 0.5,
            val_fraction: 0.25,
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {p} outside [0, 1]")))
    }
}

/// Deterministic synthetic graph with Gaussian features, planted labels and
/// shuffled splits.
pub fn generate_synthetic(kind: &SyntheticKind, params: &SyntheticParams, seed: u64) -> Result<GraphBundle> {
    let n = kind.num_nodes();
    if n == 0 {
        return Err(Error::Config("synthetic graph needs at least one node".into()));
    }
    if params.num_features == 0 {
        return Err(Error::Config("num_features must be >= 1".into()));
    }
    check_probability("train_fraction", params.train_fraction)?;
    check_probability("val_fraction", params.val_fraction)?;
    if params.train_fraction + params.val_fraction > 1.0 {
        return Err(Error::Config("train_fraction + val_fraction exceeds 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut edges = Vec::new();
    let labels: Vec<usize>;
    let num_classes;
    match kind {
        SyntheticKind::Ring { .. } => {
            if n > 1 {
                edges.extend((0..n).map(|i| (i, (i + 1) % n)));
            }
        }
        SyntheticKind::Path { .. } => edges.extend((1..n).map(|i| (i - 1, i))),
        SyntheticKind::Star { .. } => edges.extend((1..n).map(|i| (0, i))),
        SyntheticKind::ErdosRenyi { p, .. } => {
            check_probability("p", *p)?;
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random_bool(*p) {
                        edges.push((u, v));
                    }
                }
            }
        }
        SyntheticKind::StochasticBlock { sizes, p_in, p_out } => {
            check_probability("p_in", *p_in)?;
            check_probability("p_out", *p_out)?;
            let block: Vec<usize> = sizes
                .iter()
                .enumerate()
                .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
                .collect();
            for u in 0..n {
                for v in u + 1..n {
                    let p = if block[u] == block[v] { *p_in } else { *p_out };
                    if rng.random_bool(p) {
                        edges.push((u, v));
                    }
                }
            }
            labels = block;
            num_classes = sizes.len();
            return finish(n, edges, labels, num_classes, params, &mut rng);
        }
    }
    if params.num_classes == 0 {
        return Err(Error::Config("num_classes must be >= 1".into()));
    }
    num_classes = params.num_classes;
    labels = (0..n).map(|i| i % num_classes).collect();
    finish(n, edges, labels, num_classes, params, &mut rng)
}

fn finish(
    n: usize,
    edges: Vec<(usize, usize)>,
    labels: Vec<usize>,
    num_classes: usize,
    params: &SyntheticParams,
    rng: &mut ChaCha8Rng,
) -> Result<GraphBundle> {
    let c = params.num_features;
    let prototypes = Array2::from_shape_simple_fn((c, num_classes), || rng.sample::<f64, _>(StandardNormal));
    let mut features = Array2::from_shape_simple_fn((c, n), || rng.sample::<f64, _>(StandardNormal));
    for (i, &y) in labels.iter().enumerate() {
        let mut col = features.column_mut(i);
        col.scaled_add(params.signal, &prototypes.column(y));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = ((n as f64) * params.train_fraction).floor() as usize;
    let n_val = ((n as f64) * params.val_fraction).floor() as usize;
    let splits = Splits {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    };
    GraphBundle::new(n, &edges, features, labels, num_classes, splits)
}
