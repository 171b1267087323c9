//! Graph data model, citation-format IO, and synthetic graph generation.
//!
//! A [`Graph`] is an undirected simple graph (sorted adjacency lists, no
//! self-loops, no parallel edges) with a dense real feature matrix and one
//! class label per node. Node ids are dense `0..num_nodes` indices; loading
//! remaps whatever ids the source files use.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, tag};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Vec<Vec<NodeId>>,
    features: Vec<f64>,
    feature_dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Graph {
    /// Builds a graph from already-normalized adjacency lists. Validates the
    /// structural invariants: lists sorted and duplicate-free, no self-loops,
    /// symmetric edges, labels within range, feature matrix the right size.
    pub fn new(
        adjacency: Vec<Vec<NodeId>>,
        features: Vec<f64>,
        feature_dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = adjacency.len();
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} labels for {} nodes",
                labels.len(),
                n
            )));
        }
        if feature_dim == 0 {
            return Err(Error::Parameter("feature_dim must be at least 1".into()));
        }
        if features.len() != n * feature_dim {
            return Err(Error::Shape(format!(
                "feature matrix length {} does not match {}x{}",
                features.len(),
                n,
                feature_dim
            )));
        }
        if num_classes == 0 {
            return Err(Error::Parameter("num_classes must be at least 1".into()));
        }
        for (v, list) in adjacency.iter().enumerate() {
            for (i, &u) in list.iter().enumerate() {
                if u >= n {
                    return Err(Error::Index(format!("neighbor {u} out of range")));
                }
                if u == v {
                    return Err(Error::Parameter(format!("self-loop at node {v}")));
                }
                if i > 0 && list[i - 1] >= u {
                    return Err(Error::Parameter(format!(
                        "adjacency list of node {v} not sorted/deduplicated"
                    )));
                }
                if adjacency[u].binary_search(&v).is_err() {
                    return Err(Error::Parameter(format!(
                        "edge ({v},{u}) present without its reverse"
                    )));
                }
            }
        }
        for (v, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(Error::Index(format!(
                    "label {l} of node {v} exceeds num_classes {num_classes}"
                )));
            }
        }
        Ok(Graph {
            adjacency,
            features,
            feature_dim,
            labels,
            num_classes,
        })
    }

    /// Builds a graph from an edge list, normalizing as needed: self-loops
    /// and duplicate edges are dropped silently, both directions inserted.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(NodeId, NodeId)],
        features: Vec<f64>,
        feature_dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut adjacency = vec![Vec::new(); num_nodes];
        for &(a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::Index(format!("edge ({a},{b}) out of range")));
            }
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if seen.insert(key) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Graph::new(adjacency, features, feature_dim, labels, num_classes)
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(|l| l.len()).sum::<usize>() / 2
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Sorted neighbor list of `v`.
    pub fn neighborhood(&self, v: NodeId) -> Result<&[NodeId]> {
        self.adjacency
            .get(v)
            .map(|l| l.as_slice())
            .ok_or_else(|| {
                Error::Index(format!(
                    "node {v} out of range (graph has {} nodes)",
                    self.adjacency.len()
                ))
            })
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v].len()
    }

    /// Feature row of `v`. Panics if `v` is out of range, like slice indexing.
    pub fn features(&self, v: NodeId) -> &[f64] {
        &self.features[v * self.feature_dim..(v + 1) * self.feature_dim]
    }

    pub fn feature_matrix(&self) -> &[f64] {
        &self.features
    }

    pub fn label(&self, v: NodeId) -> usize {
        self.labels[v]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Same topology and labels with a replacement feature matrix. Used by
    /// the perturbation module to build corrupted views.
    pub fn with_features(&self, features: Vec<f64>) -> Result<Graph> {
        if features.len() != self.features.len() {
            return Err(Error::Shape(format!(
                "replacement feature matrix length {} != {}",
                features.len(),
                self.features.len()
            )));
        }
        Ok(Graph {
            adjacency: self.adjacency.clone(),
            features,
            feature_dim: self.feature_dim,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        })
    }
}

/// Disjoint train/validation/test node sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<NodeId>,
    pub val: Vec<NodeId>,
    pub test: Vec<NodeId>,
}

/// Draws disjoint train/val/test sets of the requested fixed sizes by a
/// seeded uniform permutation. Deterministic per seed.
pub fn make_split(
    graph: &Graph,
    train_n: usize,
    val_n: usize,
    test_n: usize,
    seed: u64,
) -> Result<Split> {
    let n = graph.num_nodes();
    let want = train_n + val_n + test_n;
    if want > n {
        return Err(Error::Parameter(format!(
            "split sizes {train_n}+{val_n}+{test_n} exceed {n} nodes"
        )));
    }
    let mut order: Vec<NodeId> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let take = |k: usize, from: &mut usize| {
        let mut ids: Vec<NodeId> = order[*from..*from + k].to_vec();
        *from += k;
        ids.sort_unstable();
        ids
    };
    let mut at = 0;
    Ok(Split {
        train: take(train_n, &mut at),
        val: take(val_n, &mut at),
        test: take(test_n, &mut at),
    })
}

/// Parameters for the stochastic block model generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Mean offset added to one coordinate (block index mod feature_dim) of
    /// every node in a block, on top of unit Gaussian noise.
    pub feature_shift: f64,
}

/// Generates an SBM graph: labels are block indices, intra-block pairs are
/// joined with probability `p_in`, inter-block pairs with `p_out`.
/// Byte-identical output for identical parameters and seed.
pub fn generate_sbm(params: &SbmParams, seed: u64) -> Result<Graph> {
    if params.block_sizes.is_empty() || params.block_sizes.iter().sum::<usize>() == 0 {
        return Err(Error::Parameter("block sizes must be non-empty".into()));
    }
    for &p in &[params.p_in, params.p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "edge probability {p} outside [0, 1]"
            )));
        }
    }
    if params.feature_dim == 0 {
        return Err(Error::Parameter("feature_dim must be at least 1".into()));
    }
    let n: usize = params.block_sizes.iter().sum();
    let d = params.feature_dim;
    let mut labels = Vec::with_capacity(n);
    for (b, &size) in params.block_sizes.iter().enumerate() {
        labels.extend(std::iter::repeat(b).take(size));
    }

    let mut feat_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag::SBM_FEATURES]));
    let mut features = vec![0.0; n * d];
    for (v, x) in features.iter_mut().enumerate() {
        let _ = v;
        *x = feat_rng.sample(StandardNormal);
    }
    for v in 0..n {
        features[v * d + labels[v] % d] += params.feature_shift;
    }

    let mut edge_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag::SBM_EDGES]));
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] {
                params.p_in
            } else {
                params.p_out
            };
            if edge_rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    Graph::from_edges(
        n,
        &edges,
        features,
        d,
        labels,
        params.block_sizes.len(),
    )
}

/// Summary of one citation-format load: what was kept, what was dropped and
/// why, and the class-name mapping (index is the class id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    /// Citation lines parsed, before any dropping.
    pub cite_lines: usize,
    /// Undirected edges kept after dropping and deduplication.
    pub edges_kept: usize,
    pub dropped_unknown_endpoint: usize,
    pub dropped_self_loops: usize,
    pub dropped_duplicates: usize,
}

impl LoadReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nodes: {}", self.num_nodes)?;
        writeln!(f, "feature_dim: {}", self.feature_dim)?;
        writeln!(
            f,
            "classes: {} ({})",
            self.num_classes,
            self.class_names.join(", ")
        )?;
        writeln!(f, "cite lines: {}", self.cite_lines)?;
        writeln!(f, "edges kept: {}", self.edges_kept)?;
        write!(
            f,
            "dropped: {} unknown-endpoint, {} self-loop, {} duplicate",
            self.dropped_unknown_endpoint, self.dropped_self_loops, self.dropped_duplicates
        )
    }
}

/// Loads a citation dataset from the standard two-file layout:
/// content lines `<node_id> <f_1> .. <f_D> <class_name>` and cite lines
/// `<cited_id> <citing_id>`, whitespace-separated.
///
/// Node ids are remapped to dense `0..N` in content-file order; class names
/// are mapped to ids in first-appearance order. Feature tokens must be 0 or
/// 1. Edges with unknown endpoints, self-citations, and duplicates are
/// dropped and counted in the report.
pub fn load_citation_dataset(
    content_path: &Path,
    cites_path: &Path,
) -> Result<(Graph, LoadReport)> {
    let content = fs::read_to_string(content_path)?;
    let cites = fs::read_to_string(cites_path)?;
    parse_citation_dataset(&content, &cites)
}

/// String-input variant of [`load_citation_dataset`].
pub fn parse_citation_dataset(content: &str, cites: &str) -> Result<(Graph, LoadReport)> {
    let mut id_map: HashMap<&str, NodeId> = HashMap::new();
    let mut class_map: HashMap<String, usize> = HashMap::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut feature_dim: Option<usize> = None;

    for (idx, line) in content.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 3 {
            return Err(Error::format(
                "content",
                lineno,
                format!(
                    "expected <id> <features..> <class>, found {} fields",
                    tokens.len()
                ),
            ));
        }
        let d = tokens.len() - 2;
        match feature_dim {
            None => feature_dim = Some(d),
            Some(expect) if expect != d => {
                return Err(Error::format(
                    "content",
                    lineno,
                    format!("row has {d} feature columns, expected {expect}"),
                ));
            }
            _ => {}
        }
        let raw_id = tokens[0];
        let node = labels.len();
        if id_map.insert(raw_id, node).is_some() {
            return Err(Error::format(
                "content",
                lineno,
                format!("duplicate node id {raw_id}"),
            ));
        }
        for tok in &tokens[1..tokens.len() - 1] {
            let v: f64 = tok.parse().map_err(|_| {
                Error::format("content", lineno, format!("unparseable feature {tok:?}"))
            })?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::format(
                    "content",
                    lineno,
                    format!("non-binary feature value {tok}"),
                ));
            }
            features.push(v);
        }
        let class = tokens[tokens.len() - 1].to_string();
        let class_id = *class_map.entry(class.clone()).or_insert_with(|| {
            class_names.push(class);
            class_names.len() - 1
        });
        labels.push(class_id);
    }

    let n = labels.len();
    if n == 0 {
        return Err(Error::format("content", 0, "no content rows"));
    }
    let feature_dim = feature_dim.unwrap();

    let mut cite_lines = 0usize;
    let mut dropped_unknown = 0usize;
    let mut dropped_self = 0usize;
    let mut dropped_dup = 0usize;
    let mut seen: HashSet<(NodeId, NodeId)> = HashSet::new();
    let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
    for (idx, line) in cites.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(Error::format(
                "cites",
                lineno,
                format!("expected <cited> <citing>, found {} fields", tokens.len()),
            ));
        }
        cite_lines += 1;
        let (a, b) = match (id_map.get(tokens[0]), id_map.get(tokens[1])) {
            (Some(&a), Some(&b)) => (a, b),
            _ => {
                dropped_unknown += 1;
                continue;
            }
        };
        if a == b {
            dropped_self += 1;
            continue;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            edges.push(key);
        } else {
            dropped_dup += 1;
        }
    }

    let num_classes = class_names.len();
    let graph = Graph::from_edges(n, &edges, features, feature_dim, labels, num_classes)?;
    let report = LoadReport {
        num_nodes: n,
        feature_dim,
        num_classes,
        class_names,
        cite_lines,
        edges_kept: graph.num_edges(),
        dropped_unknown_endpoint: dropped_unknown,
        dropped_self_loops: dropped_self,
        dropped_duplicates: dropped_dup,
    };
    Ok((graph, report))
}

/// Serializes a graph back to the citation format, node ids written as their
/// dense indices. `class_names` must have one entry per class; pass the
/// loader's report names to round-trip a loaded dataset. Feature values are
/// written with `{}` formatting, so binary matrices round-trip exactly.
pub fn write_citation_dataset(graph: &Graph, class_names: &[String]) -> Result<(String, String)> {
    if class_names.len() != graph.num_classes() {
        return Err(Error::Shape(format!(
            "{} class names for {} classes",
            class_names.len(),
            graph.num_classes()
        )));
    }
    let mut content = String::new();
    for v in 0..graph.num_nodes() {
        content.push_str(&v.to_string());
        for x in graph.features(v) {
            content.push('\t');
            content.push_str(&x.to_string());
        }
        content.push('\t');
        content.push_str(&class_names[graph.label(v)]);
        content.push('\n');
    }
    let mut cites = String::new();
    for v in 0..graph.num_nodes() {
        for &u in graph.neighborhood(v)? {
            if v < u {
                cites.push_str(&format!("{v}\t{u}\n"));
            }
        }
    }
    Ok((content, cites))
}
