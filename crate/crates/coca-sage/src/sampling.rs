//! Neighbor sampling: uniform, causal, and cooperative-causal weights.
//!
//! The causal sampler scores a neighbor by the inverse of its conditional
//! feature density given the rest of the neighborhood. The cooperative-causal
//! sampler refines this with a Shapley-style expectation over neighbor
//! coalitions: for a target with `T` neighbors and sample size `M`, each
//! candidate `i` is scored
//!
//! ```text
//! E(i) = sum over S in N\{i}, |S| = M-1 of
//!        q_factor(T, M) * (1/p(x_i | S, x_i, x_t) - 1/p(x_i | S, x_t))
//! ```
//!
//! where `p` is the projected kernel density from [`crate::density`] and
//! `x_t` the target's own features. Both conditioning sets carry the target;
//! the with-term additionally carries the candidate itself. A redundant
//! candidate changes the density little (term near zero), while an outlier
//! makes the without-density collapse and drives `E(i)` strongly negative,
//! so ranking by `E` keeps locally consistent neighbors and drops anomalous
//! ones. Scores are expected values, not probabilities; negative values are
//! meaningful and `top_m` selection uses the raw order.
//!
//! Exact coalition enumeration is used whenever `C(T-1, M-1)` fits the
//! configured budget, otherwise that many distinct coalitions are drawn
//! uniformly without replacement and the sum is rescaled by
//! `C(T-1, M-1) / mc_budget`. All stochastic pieces derive their seeds from
//! `(seed, role, target, candidate)`, so results are reproducible and
//! independent of evaluation order and thread scheduling.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, RwLock};

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{density_projected, KdeConfig, RandomProjection, DEFAULT_PROJECTION_DIM};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::seed::{derive_seed, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Uniform,
    Causal,
    Coca,
}

impl SamplerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::Causal => "causal",
            SamplerKind::Coca => "coca",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplerKind::Uniform),
            "causal" => Ok(SamplerKind::Causal),
            "coca" => Ok(SamplerKind::Coca),
            other => Err(Error::Parameter(format!(
                "unknown sampler '{other}' (expected uniform, causal, or coca)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Highest weights first, seeded random tie-breaking.
    TopM,
    /// Weight-proportional draw without replacement, after shifting into
    /// nonnegative range if any weight is negative.
    Proportional,
}

impl std::str::FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top_m" => Ok(SelectionPolicy::TopM),
            "proportional" => Ok(SelectionPolicy::Proportional),
            other => Err(Error::Parameter(format!(
                "unknown selection policy '{other}' (expected top_m or proportional)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub policy: SelectionPolicy,
    /// Coalition budget per candidate before Monte-Carlo kicks in.
    pub mc_budget: usize,
    pub projection_dim: usize,
    pub kde: KdeConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerKind::Coca,
            policy: SelectionPolicy::TopM,
            mc_budget: 500,
            projection_dim: DEFAULT_PROJECTION_DIM,
            kde: KdeConfig::default(),
        }
    }
}

impl SamplerConfig {
    fn validate(&self) -> Result<()> {
        if self.mc_budget == 0 {
            return Err(Error::Parameter("mc_budget must be at least 1".into()));
        }
        if self.projection_dim == 0 {
            return Err(Error::Parameter("projection_dim must be at least 1".into()));
        }
        self.kde.validate()
    }
}

/// Per-candidate weights for one target. `candidates` is exactly the sorted
/// neighborhood of `target`; `weights` is parallel to it and always finite.
/// `must_take` marks the degenerate case where the neighborhood is no larger
/// than the sample size, so selection takes everyone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerWeights {
    pub target: NodeId,
    pub candidates: Vec<NodeId>,
    pub weights: Vec<f64>,
    pub must_take: bool,
}

/// Shapley-style coalition coefficient `(M-1)! (T-M)! / (M * T!)`, computed
/// in log space so large neighborhoods cannot overflow. For every candidate
/// the coefficients of its `C(T-1, M-1)` coalitions sum to `1/(M*T)`.
pub fn q_factor(t: usize, m: usize) -> Result<f64> {
    if m == 0 || m > t {
        return Err(Error::Parameter(format!(
            "sample size {m} outside 1..={t}"
        )));
    }
    let ln_q = ln_factorial(m - 1) + ln_factorial(t - m) - (m as f64).ln() - ln_factorial(t);
    Ok(ln_q.exp())
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Exact `C(n, k)` if it is at most `cap`, else `None`. The running product
/// is monotone, so the cap check can exit early without overflow.
fn binomial_at_most(n: usize, k: usize, cap: u64) -> Option<u64> {
    if k > n {
        return Some(0).filter(|&c| c <= cap);
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 1..=k {
        c = c * (n - k + i) as u128 / i as u128;
        if c > cap as u128 {
            return None;
        }
    }
    Some(c as u64)
}

/// Lexicographic rank -> k-combination of `0..n` (combinadic unranking).
/// Every intermediate binomial is bounded by the total count, which the
/// caller has already verified fits in u64.
fn unrank_combination(mut rank: u64, n: usize, k: usize, out: &mut Vec<usize>) {
    out.clear();
    let mut remaining = k;
    let mut e = 0usize;
    while remaining > 0 {
        let c = binomial_at_most(n - e - 1, remaining - 1, u64::MAX).expect("bounded by total");
        if rank < c {
            out.push(e);
            remaining -= 1;
        } else {
            rank -= c;
        }
        e += 1;
    }
}

/// Access to projected feature rows, either a precomputed all-node table
/// (engine path) or an ad-hoc map covering one neighborhood (free functions).
trait ProjectedRows {
    fn row(&self, v: NodeId) -> &[f64];
}

struct LocalRows(HashMap<NodeId, Vec<f64>>);

impl ProjectedRows for LocalRows {
    fn row(&self, v: NodeId) -> &[f64] {
        &self.0[&v]
    }
}

/// Projected features for every node, row-major.
struct ProjectedTable {
    dim: usize,
    data: Vec<f64>,
}

impl ProjectedTable {
    fn new(graph: &Graph, projection_dim: usize, seed: u64) -> Result<Self> {
        let proj = RandomProjection::new(graph.feature_dim(), projection_dim, seed);
        let dim = proj.out_dim();
        let rows: Vec<Vec<f64>> = (0..graph.num_nodes())
            .into_par_iter()
            .map(|v| proj.project(graph.features(v)))
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            data.extend_from_slice(&r);
        }
        Ok(ProjectedTable { dim, data })
    }
}

impl ProjectedRows for ProjectedTable {
    fn row(&self, v: NodeId) -> &[f64] {
        &self.data[v * self.dim..(v + 1) * self.dim]
    }
}

fn local_rows(graph: &Graph, nodes: &[NodeId], projection_dim: usize, seed: u64) -> Result<LocalRows> {
    let proj = RandomProjection::new(
        graph.feature_dim(),
        projection_dim,
        derive_seed(seed, &[tag::PROJECTION]),
    );
    let mut map = HashMap::with_capacity(nodes.len());
    for &v in nodes {
        map.entry(v).or_insert(proj.project(graph.features(v))?);
    }
    Ok(LocalRows(map))
}

/// Weight 1 for every neighbor. Composing with proportional selection gives
/// plain uniform sampling without replacement.
pub fn uniform_weights(graph: &Graph, target: NodeId) -> Result<SamplerWeights> {
    let candidates = graph.neighborhood(target)?.to_vec();
    let weights = vec![1.0; candidates.len()];
    Ok(SamplerWeights {
        target,
        candidates,
        weights,
        must_take: false,
    })
}

/// Inverse-conditional-density weights: neighbor `i` gets
/// `1 / (T * p(x_i | x of N(target) minus i))`. A degree-1 target has an
/// empty conditioning set and defaults to weight 1.
pub fn causal_weights(
    graph: &Graph,
    target: NodeId,
    kde: &KdeConfig,
    projection_dim: usize,
    seed: u64,
) -> Result<SamplerWeights> {
    let neighbors = graph.neighborhood(target)?.to_vec();
    let rows = local_rows(graph, &neighbors, projection_dim, seed)?;
    causal_weights_impl(target, &neighbors, &rows, kde)
}

fn causal_weights_impl(
    target: NodeId,
    neighbors: &[NodeId],
    rows: &impl ProjectedRows,
    kde: &KdeConfig,
) -> Result<SamplerWeights> {
    let t = neighbors.len();
    let mut weights = Vec::with_capacity(t);
    for (i, &cand) in neighbors.iter().enumerate() {
        if t == 1 {
            weights.push(1.0);
            continue;
        }
        let centers: Vec<&[f64]> = neighbors
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &u)| rows.row(u))
            .collect();
        let p = density_projected(rows.row(cand), &centers, kde)?;
        weights.push(((t as f64) * p).recip());
    }
    Ok(SamplerWeights {
        target,
        candidates: neighbors.to_vec(),
        weights,
        must_take: false,
    })
}

/// Marginal contribution of `candidate` joining `coalition` for sample size
/// `m`: `1/(m * p_with) - 1/(m * p_without)`, where both conditioning sets
/// carry the target's own features and the with-set additionally carries the
/// candidate. An empty coalition conditions on the target alone.
pub fn marginal_contribution(
    graph: &Graph,
    target: NodeId,
    candidate: NodeId,
    coalition: &[NodeId],
    m: usize,
    kde: &KdeConfig,
    projection_dim: usize,
    seed: u64,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::Parameter("sample size must be at least 1".into()));
    }
    let neighbors = graph.neighborhood(target)?;
    if !neighbors.contains(&candidate) {
        return Err(Error::Parameter(format!(
            "candidate {candidate} is not a neighbor of {target}"
        )));
    }
    let mut coalition = coalition.to_vec();
    coalition.sort_unstable();
    if coalition.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Parameter("coalition contains duplicates".into()));
    }
    for &s in &coalition {
        if s == candidate {
            return Err(Error::Parameter(format!(
                "candidate {candidate} appears in its own coalition"
            )));
        }
        if !neighbors.contains(&s) {
            return Err(Error::Parameter(format!(
                "coalition member {s} is not a neighbor of {target}"
            )));
        }
    }
    let mut nodes = coalition.clone();
    nodes.push(candidate);
    nodes.push(target);
    let rows = local_rows(graph, &nodes, projection_dim, seed)?;

    let query = rows.row(candidate);
    let mut without: Vec<&[f64]> = coalition.iter().map(|&s| rows.row(s)).collect();
    without.push(rows.row(target));
    let mut with = Vec::with_capacity(without.len() + 1);
    with.extend_from_slice(&without[..coalition.len()]);
    with.push(rows.row(candidate));
    with.push(rows.row(target));

    let p_with = density_projected(query, &with, kde)?;
    let p_without = density_projected(query, &without, kde)?;
    let m = m as f64;
    Ok((m * p_with).recip() - (m * p_without).recip())
}

/// Cooperative-causal weights for every neighbor of `target` at sample size
/// `m`. If the neighborhood is no larger than `m` there is no coalition
/// choice to make: every neighbor is flagged must-take with uniform weight.
pub fn coca_weights(
    graph: &Graph,
    target: NodeId,
    m: usize,
    kde: &KdeConfig,
    projection_dim: usize,
    mc_budget: usize,
    seed: u64,
) -> Result<SamplerWeights> {
    if m == 0 {
        return Err(Error::Parameter("sample size must be at least 1".into()));
    }
    if mc_budget == 0 {
        return Err(Error::Parameter("mc_budget must be at least 1".into()));
    }
    let neighbors = graph.neighborhood(target)?.to_vec();
    let mut nodes = neighbors.clone();
    nodes.push(target);
    let rows = local_rows(graph, &nodes, projection_dim, seed)?;
    coca_weights_impl(target, &neighbors, &rows, m, kde, mc_budget, seed)
}

fn coca_weights_impl(
    target: NodeId,
    neighbors: &[NodeId],
    rows: &impl ProjectedRows,
    m: usize,
    kde: &KdeConfig,
    mc_budget: usize,
    seed: u64,
) -> Result<SamplerWeights> {
    let t = neighbors.len();
    if t <= m {
        return Ok(SamplerWeights {
            target,
            candidates: neighbors.to_vec(),
            weights: vec![1.0; t],
            must_take: t > 0,
        });
    }
    let q = q_factor(t, m)?;
    let k = m - 1;
    let n1 = t - 1;

    let mut weights = Vec::with_capacity(t);
    for (i, &cand) in neighbors.iter().enumerate() {
        let others: Vec<NodeId> = neighbors
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &u)| u)
            .collect();
        let query = rows.row(cand);

        // Center layout per coalition: [S ascending.., candidate, target]
        // for the with-term, [S ascending.., target] for the without-term.
        let mut with: Vec<&[f64]> = Vec::with_capacity(k + 2);
        let mut without: Vec<&[f64]> = Vec::with_capacity(k + 1);
        let mut term = |coalition: &[usize]| -> Result<f64> {
            with.clear();
            without.clear();
            for &ix in coalition {
                with.push(rows.row(others[ix]));
                without.push(rows.row(others[ix]));
            }
            with.push(rows.row(cand));
            with.push(rows.row(target));
            without.push(rows.row(target));
            let p_with = density_projected(query, &with, kde)?;
            let p_without = density_projected(query, &without, kde)?;
            Ok(p_with.recip() - p_without.recip())
        };

        let expectation = match binomial_at_most(n1, k, mc_budget as u64) {
            Some(_) => {
                // Exact enumeration, lexicographic order.
                let mut sum = 0.0;
                if k == 0 {
                    sum += term(&[])?;
                } else {
                    for coalition in (0..n1).combinations(k) {
                        sum += term(&coalition)?;
                    }
                }
                q * sum
            }
            None => {
                let mc_seed = derive_seed(seed, &[tag::MC_COALITIONS, target as u64, cand as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(mc_seed);
                let mut sum = 0.0;
                match binomial_at_most(n1, k, 1 << 60) {
                    Some(total) => {
                        // Draw distinct coalition ranks without replacement and
                        // walk them in lexicographic order.
                        let mut ranks: Vec<u64> = rand::seq::index::sample(
                            &mut rng,
                            total as usize,
                            mc_budget,
                        )
                        .into_iter()
                        .map(|r| r as u64)
                        .collect();
                        ranks.sort_unstable();
                        let mut coalition = Vec::with_capacity(k);
                        for r in ranks {
                            unrank_combination(r, n1, k, &mut coalition);
                            sum += term(&coalition)?;
                        }
                        q * sum * (total as f64 / mc_budget as f64)
                    }
                    None => {
                        // Astronomically many coalitions: rejection sampling
                        // cannot realistically collide, but cap attempts so a
                        // pathological input cannot spin forever.
                        let mut seen: HashSet<Vec<usize>> = HashSet::new();
                        let mut drawn = Vec::new();
                        let mut attempts = 0usize;
                        while drawn.len() < mc_budget && attempts < 100 * mc_budget {
                            attempts += 1;
                            let mut c: Vec<usize> =
                                rand::seq::index::sample(&mut rng, n1, k).into_vec();
                            c.sort_unstable();
                            if seen.insert(c.clone()) {
                                drawn.push(c);
                            }
                        }
                        drawn.sort_unstable();
                        for coalition in &drawn {
                            sum += term(coalition)?;
                        }
                        let scale = (ln_binomial(n1, k) - (drawn.len() as f64).ln()).exp();
                        q * sum * scale
                    }
                }
            }
        };
        weights.push(expectation);
    }
    Ok(SamplerWeights {
        target,
        candidates: neighbors.to_vec(),
        weights,
        must_take: false,
    })
}

/// Selects `min(m, candidates)` distinct neighbors, returned in ascending id
/// order. `top_m` ranks by weight with a seeded shuffle as tie-break, so
/// equal-weight candidates are chosen uniformly; `proportional` draws without
/// replacement with probability proportional to (shifted) weight.
pub fn select_neighbors(
    weights: &SamplerWeights,
    m: usize,
    policy: SelectionPolicy,
    seed: u64,
) -> Result<Vec<NodeId>> {
    if m == 0 {
        return Err(Error::Parameter("sample size must be at least 1".into()));
    }
    if weights.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Parameter("non-finite sampler weight".into()));
    }
    if weights.candidates.len() != weights.weights.len() {
        return Err(Error::Shape(format!(
            "{} candidates with {} weights",
            weights.candidates.len(),
            weights.weights.len()
        )));
    }
    let n = weights.candidates.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if weights.must_take || n <= m {
        return Ok(weights.candidates.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = match policy {
        SelectionPolicy::TopM => {
            let mut idx: Vec<usize> = (0..n).collect();
            // Shuffle first, then stable-sort by weight: ties keep the
            // shuffled order, a uniformly random permutation.
            idx.shuffle(&mut rng);
            idx.sort_by(|&a, &b| weights.weights[b].total_cmp(&weights.weights[a]));
            idx.truncate(m);
            idx
        }
        SelectionPolicy::Proportional => {
            let min = weights.weights.iter().cloned().fold(f64::INFINITY, f64::min);
            let shift = if min < 0.0 { -min + 1e-12 } else { 0.0 };
            let mut remaining: Vec<usize> = (0..n).collect();
            let mut picked = Vec::with_capacity(m);
            for _ in 0..m {
                let total: f64 = remaining
                    .iter()
                    .map(|&i| weights.weights[i] + shift)
                    .sum();
                let j = if total > 0.0 {
                    let x = rng.random::<f64>() * total;
                    let mut cum = 0.0;
                    let mut hit = remaining.len() - 1;
                    for (pos, &i) in remaining.iter().enumerate() {
                        cum += weights.weights[i] + shift;
                        if x < cum {
                            hit = pos;
                            break;
                        }
                    }
                    hit
                } else {
                    // All remaining weights are exactly zero: uniform.
                    rng.random_range(0..remaining.len())
                };
                picked.push(remaining.remove(j));
            }
            picked
        }
    };
    let mut ids: Vec<NodeId> = chosen.into_iter().map(|i| weights.candidates[i]).collect();
    ids.sort_unstable();
    Ok(ids)
}

/// One node of a sample tree; children are the neighbors sampled for it at
/// the next hop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleNode {
    pub id: NodeId,
    pub children: Vec<SampleNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleTree {
    pub root: SampleNode,
}

impl SampleTree {
    /// Distinct node ids reached at each hop (hop 1 first), sorted.
    pub fn hop_sets(&self) -> Vec<Vec<NodeId>> {
        let mut levels: Vec<Vec<NodeId>> = Vec::new();
        let mut frontier: Vec<&SampleNode> = vec![&self.root];
        loop {
            let next: Vec<&SampleNode> =
                frontier.iter().flat_map(|n| n.children.iter()).collect();
            if next.is_empty() {
                break;
            }
            let mut ids: Vec<NodeId> = next.iter().map(|n| n.id).collect();
            ids.sort_unstable();
            ids.dedup();
            levels.push(ids);
            frontier = next;
        }
        levels
    }
}

/// Caches sampler weights per (target, sample size) over a fixed graph and
/// weight seed, and builds sample trees from them. Weights are pure functions
/// of (graph, config, weight seed, target, m), so concurrent computation is
/// race-free: a duplicated computation inserts an identical value.
pub struct SamplerEngine<'g> {
    graph: &'g Graph,
    cfg: SamplerConfig,
    weight_seed: u64,
    projected: Option<ProjectedTable>,
    cache: RwLock<HashMap<(NodeId, usize), Arc<SamplerWeights>>>,
}

impl<'g> SamplerEngine<'g> {
    pub fn new(graph: &'g Graph, cfg: SamplerConfig, weight_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let projected = match cfg.kind {
            SamplerKind::Uniform => None,
            SamplerKind::Causal | SamplerKind::Coca => Some(ProjectedTable::new(
                graph,
                cfg.projection_dim,
                derive_seed(weight_seed, &[tag::PROJECTION]),
            )?),
        };
        Ok(SamplerEngine {
            graph,
            cfg,
            weight_seed,
            projected,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    /// Weights for `target` at sample size `m`, computed on first use.
    pub fn weights(&self, target: NodeId, m: usize) -> Result<Arc<SamplerWeights>> {
        let key = (target, m);
        if let Some(w) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(Arc::clone(w));
        }
        let computed = Arc::new(self.compute_weights(target, m)?);
        let mut guard = self.cache.write().expect("cache lock");
        let entry = guard.entry(key).or_insert(computed);
        Ok(Arc::clone(entry))
    }

    fn compute_weights(&self, target: NodeId, m: usize) -> Result<SamplerWeights> {
        let neighbors = self.graph.neighborhood(target)?.to_vec();
        match self.cfg.kind {
            SamplerKind::Uniform => uniform_weights(self.graph, target),
            SamplerKind::Causal => {
                let rows = self.projected.as_ref().expect("projected table");
                causal_weights_impl(target, &neighbors, rows, &self.cfg.kde)
            }
            SamplerKind::Coca => {
                let rows = self.projected.as_ref().expect("projected table");
                coca_weights_impl(
                    target,
                    &neighbors,
                    rows,
                    m,
                    &self.cfg.kde,
                    self.cfg.mc_budget,
                    self.weight_seed,
                )
            }
        }
    }

    /// Builds the sample tree rooted at `root` with one sampled neighbor set
    /// per hop. The per-node selection seed depends only on
    /// (selection_seed, node, hop), so a node reached through different
    /// parents in the same pass expands identically.
    pub fn sample_tree(
        &self,
        root: NodeId,
        per_hop: &[usize],
        selection_seed: u64,
    ) -> Result<SampleTree> {
        if per_hop.is_empty() {
            return Err(Error::Parameter("per_hop sample sizes are empty".into()));
        }
        if per_hop.iter().any(|&m| m == 0) {
            return Err(Error::Parameter("per-hop sample sizes must be >= 1".into()));
        }
        if root >= self.graph.num_nodes() {
            return Err(Error::Index(format!("root {root} out of range")));
        }
        let root = self.expand(root, 0, per_hop, selection_seed)?;
        Ok(SampleTree { root })
    }

    fn expand(
        &self,
        id: NodeId,
        hop: usize,
        per_hop: &[usize],
        selection_seed: u64,
    ) -> Result<SampleNode> {
        if hop == per_hop.len() {
            return Ok(SampleNode {
                id,
                children: Vec::new(),
            });
        }
        let m = per_hop[hop];
        let weights = self.weights(id, m)?;
        let sel_seed = derive_seed(selection_seed, &[tag::SELECTION, id as u64, hop as u64]);
        let chosen = select_neighbors(&weights, m, self.cfg.policy, sel_seed)?;
        let children = chosen
            .into_iter()
            .map(|c| self.expand(c, hop + 1, per_hop, selection_seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleNode { id, children })
    }

    /// Trees for a batch of roots, computed in parallel, returned in root
    /// order.
    pub fn sample_trees(
        &self,
        roots: &[NodeId],
        per_hop: &[usize],
        selection_seed: u64,
    ) -> Result<Vec<SampleTree>> {
        roots
            .par_iter()
            .map(|&r| self.sample_tree(r, per_hop, selection_seed))
            .collect()
    }
}

/// One-shot tree construction: weights and selection both derive from `seed`.
pub fn build_sample_tree(
    graph: &Graph,
    root: NodeId,
    cfg: &SamplerConfig,
    per_hop: &[usize],
    seed: u64,
) -> Result<SampleTree> {
    let engine = SamplerEngine::new(graph, cfg.clone(), seed)?;
    engine.sample_tree(root, per_hop, seed)
}

/// One-shot batch variant of [`build_sample_tree`] sharing one weight cache.
pub fn build_sample_trees(
    graph: &Graph,
    roots: &[NodeId],
    cfg: &SamplerConfig,
    per_hop: &[usize],
    seed: u64,
) -> Result<Vec<SampleTree>> {
    let engine = SamplerEngine::new(graph, cfg.clone(), seed)?;
    engine.sample_trees(roots, per_hop, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // ---- independent oracles -------------------------------------------

    /// Direct-summation KDE with Scott bandwidth, written from the formulas
    /// and sharing no helpers with the implementation. Assumes no projection
    /// (fixtures use projection_dim >= feature_dim).
    fn oracle_density(query: &[f64], centers: &[Vec<f64>], floor: f64) -> f64 {
        let n = centers.len() as f64;
        let d = query.len();
        let mut std_sum = 0.0;
        for j in 0..d {
            let mean = centers.iter().map(|c| c[j]).sum::<f64>() / n;
            let var = centers.iter().map(|c| (c[j] - mean).powi(2)).sum::<f64>() / n;
            std_sum += var.sqrt();
        }
        let h = ((std_sum / d as f64) * n.powf(-1.0 / (d as f64 + 4.0))).max(floor);
        let mut sum = 0.0;
        for c in centers {
            let dist2: f64 = query.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            sum += (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0)
                * h.powf(-(d as f64))
                * (-dist2 / (2.0 * h * h)).exp();
        }
        (sum / n).clamp(floor, 1.0 / floor)
    }

    /// Brute-force cooperative weights: bitmask enumeration of all coalitions,
    /// factorial coefficient computed directly (fixture sizes keep the
    /// factorials exact in f64).
    fn oracle_coca(graph: &Graph, target: NodeId, m: usize, floor: f64) -> Vec<f64> {
        let neighbors = graph.neighborhood(target).unwrap();
        let t = neighbors.len();
        assert!(m < t, "oracle only covers the enumeration path");
        let fact = |x: usize| -> f64 { (1..=x).map(|i| i as f64).product() };
        let q = fact(m - 1) * fact(t - m) / (m as f64 * fact(t));
        let mut out = Vec::new();
        for (i, &cand) in neighbors.iter().enumerate() {
            let others: Vec<NodeId> = neighbors
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &u)| u)
                .collect();
            let mut sum = 0.0;
            for mask in 0u64..(1 << others.len()) {
                if mask.count_ones() as usize != m - 1 {
                    continue;
                }
                let coalition: Vec<NodeId> = others
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| mask & (1 << j) != 0)
                    .map(|(_, &u)| u)
                    .collect();
                let mut with: Vec<Vec<f64>> = coalition
                    .iter()
                    .map(|&u| graph.features(u).to_vec())
                    .collect();
                let mut without = with.clone();
                with.push(graph.features(cand).to_vec());
                with.push(graph.features(target).to_vec());
                without.push(graph.features(target).to_vec());
                let p_with = oracle_density(graph.features(cand), &with, floor);
                let p_without = oracle_density(graph.features(cand), &without, floor);
                sum += 1.0 / p_with - 1.0 / p_without;
            }
            out.push(q * sum);
        }
        out
    }

    /// Star graph: node 0 is the hub with `t` spokes carrying seeded random
    /// features. projection_dim in tests is always >= dim, keeping geometry
    /// exact for the oracles.
    fn star_graph(t: usize, dim: usize, seed: u64) -> Graph {
        let n = t + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let edges: Vec<(NodeId, NodeId)> = (1..n).map(|v| (0, v)).collect();
        Graph::from_edges(n, &edges, features, dim, vec![0; n], 1).unwrap()
    }

    fn test_cfg(kind: SamplerKind) -> SamplerConfig {
        SamplerConfig {
            kind,
            policy: SelectionPolicy::TopM,
            mc_budget: 500,
            projection_dim: 64,
            kde: KdeConfig::default(),
        }
    }

    // ---- q_factor -------------------------------------------------------

    #[test]
    fn q_factor_known_values() {
        assert_relative_eq!(q_factor(2, 1).unwrap(), 0.5, max_relative = 1e-12);
        assert_relative_eq!(q_factor(3, 2).unwrap(), 1.0 / 12.0, max_relative = 1e-12);
        assert_relative_eq!(q_factor(5, 3).unwrap(), 1.0 / 90.0, max_relative = 1e-12);
    }

    #[test]
    fn q_factor_rejects_bad_sizes() {
        assert!(q_factor(4, 0).is_err());
        assert!(q_factor(4, 5).is_err());
    }

    #[test]
    fn q_factor_coefficient_mass_identity() {
        // Summing the coefficient over all C(t-1, m-1) coalitions of one
        // candidate must give 1/(m*t). Binomials here are small enough to be
        // exact in u64.
        for t in 1..=30usize {
            for m in 1..=t {
                let q = q_factor(t, m).unwrap();
                let c = binomial_at_most(t - 1, m - 1, u64::MAX).unwrap() as f64;
                let lhs = q * c;
                let rhs = 1.0 / (m as f64 * t as f64);
                assert!(
                    (lhs - rhs).abs() <= 1e-12 * rhs,
                    "t={t} m={m}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn q_factor_survives_large_neighborhoods() {
        // 200! overflows f64; the log-space path must not.
        let q = q_factor(200, 10).unwrap();
        assert!(q.is_finite() && q > 0.0);
    }

    // ---- binomial helpers ------------------------------------------------

    #[test]
    fn binomial_at_most_exact_and_capped() {
        assert_eq!(binomial_at_most(9, 3, u64::MAX), Some(84));
        assert_eq!(binomial_at_most(9, 3, 84), Some(84));
        assert_eq!(binomial_at_most(9, 3, 83), None);
        assert_eq!(binomial_at_most(5, 0, u64::MAX), Some(1));
        assert_eq!(binomial_at_most(3, 5, u64::MAX), Some(0));
    }

    #[test]
    fn unranking_is_lexicographic_and_complete() {
        let mut seen = Vec::new();
        let mut buf = Vec::new();
        for r in 0..10u64 {
            unrank_combination(r, 5, 3, &mut buf);
            seen.push(buf.clone());
        }
        let expected: Vec<Vec<usize>> = (0..5).combinations(3).collect();
        assert_eq!(seen, expected);
    }

    // ---- causal weights ---------------------------------------------------

    #[test]
    fn causal_degree_one_defaults_to_unit_weight() {
        let g = star_graph(1, 3, 0);
        let w = causal_weights(&g, 0, &KdeConfig::default(), 8, 1).unwrap();
        assert_eq!(w.candidates, vec![1]);
        assert_eq!(w.weights, vec![1.0]);
    }

    #[test]
    fn causal_identical_neighbors_get_identical_weights() {
        // Two neighbors with byte-identical features: conditioning sets agree
        // exactly, so the weights do too.
        let features = vec![
            0.0, 0.0, // target
            1.0, 2.0, // neighbor 1
            1.0, 2.0, // neighbor 2
        ];
        let g = Graph::from_edges(3, &[(0, 1), (0, 2)], features, 2, vec![0; 3], 1).unwrap();
        let w = causal_weights(&g, 0, &KdeConfig::default(), 4, 9).unwrap();
        assert_eq!(w.weights[0], w.weights[1]);
    }

    #[test]
    fn causal_matches_direct_kde_on_a_star() {
        let g = star_graph(4, 3, 21);
        let w = causal_weights(&g, 0, &KdeConfig::default(), 8, 3).unwrap();
        let neighbors = g.neighborhood(0).unwrap();
        for (i, &cand) in neighbors.iter().enumerate() {
            let centers: Vec<Vec<f64>> = neighbors
                .iter()
                .filter(|&&u| u != cand)
                .map(|&u| g.features(u).to_vec())
                .collect();
            let p = oracle_density(g.features(cand), &centers, 1e-12);
            assert_relative_eq!(w.weights[i], 1.0 / (4.0 * p), max_relative = 1e-10);
        }
    }

    #[test]
    fn causal_weights_outlier_scores_highest() {
        // Three clustered neighbors and one far outlier: the outlier has the
        // lowest conditional density, hence the largest causal weight.
        let features = vec![
            0.0, 0.0, // target
            1.0, 1.0, 1.1, 0.9, 0.9, 1.1, // cluster
            8.0, -7.0, // outlier
        ];
        let g = Graph::from_edges(
            5,
            &[(0, 1), (0, 2), (0, 3), (0, 4)],
            features,
            2,
            vec![0; 5],
            1,
        )
        .unwrap();
        let w = causal_weights(&g, 0, &KdeConfig::default(), 4, 5).unwrap();
        let max_i = (0..4).max_by(|&a, &b| w.weights[a].total_cmp(&w.weights[b])).unwrap();
        assert_eq!(w.candidates[max_i], 4);
    }

    // ---- marginal contribution --------------------------------------------

    #[test]
    fn marginal_rejects_candidate_inside_coalition() {
        let g = star_graph(4, 3, 2);
        let err =
            marginal_contribution(&g, 0, 1, &[1, 2], 2, &KdeConfig::default(), 8, 0).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)), "got {err}");
    }

    #[test]
    fn marginal_rejects_non_neighbors_and_duplicates() {
        let g = star_graph(4, 3, 2);
        assert!(marginal_contribution(&g, 0, 9, &[], 2, &KdeConfig::default(), 8, 0).is_err());
        assert!(marginal_contribution(&g, 0, 1, &[0], 2, &KdeConfig::default(), 8, 0).is_err());
        assert!(
            marginal_contribution(&g, 0, 1, &[2, 2], 2, &KdeConfig::default(), 8, 0).is_err()
        );
        assert!(marginal_contribution(&g, 0, 1, &[2], 0, &KdeConfig::default(), 8, 0).is_err());
    }

    #[test]
    fn marginal_is_zero_when_candidate_duplicates_target_on_empty_coalition() {
        // Candidate features identical to the target's: both conditioning
        // sets are point masses at the query, so the contribution vanishes.
        let features = vec![
            1.5, -0.5, // target
            1.5, -0.5, // candidate, same point
            0.0, 3.0,
        ];
        let g = Graph::from_edges(3, &[(0, 1), (0, 2)], features, 2, vec![0; 3], 1).unwrap();
        let d = marginal_contribution(&g, 0, 1, &[], 3, &KdeConfig::default(), 4, 7).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn marginal_is_invariant_to_coalition_order() {
        let g = star_graph(5, 3, 8);
        let a = marginal_contribution(&g, 0, 1, &[2, 3, 4], 4, &KdeConfig::default(), 8, 1)
            .unwrap();
        let b = marginal_contribution(&g, 0, 1, &[4, 2, 3], 4, &KdeConfig::default(), 8, 1)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn marginal_matches_hand_computation() {
        let g = star_graph(3, 2, 33);
        let kde = KdeConfig::default();
        let d = marginal_contribution(&g, 0, 1, &[2], 2, &kde, 8, 0).unwrap();
        let with = vec![
            g.features(2).to_vec(),
            g.features(1).to_vec(),
            g.features(0).to_vec(),
        ];
        let without = vec![g.features(2).to_vec(), g.features(0).to_vec()];
        let p_with = oracle_density(g.features(1), &with, 1e-12);
        let p_without = oracle_density(g.features(1), &without, 1e-12);
        let expected = 1.0 / (2.0 * p_with) - 1.0 / (2.0 * p_without);
        assert_relative_eq!(d, expected, max_relative = 1e-10);
    }

    // ---- coca weights -------------------------------------------------------

    #[test]
    fn coca_small_neighborhood_is_must_take_uniform() {
        let g = star_graph(3, 3, 4);
        let w = coca_weights(&g, 0, 3, &KdeConfig::default(), 8, 500, 0).unwrap();
        assert!(w.must_take);
        assert_eq!(w.weights, vec![1.0; 3]);
        let w = coca_weights(&g, 0, 5, &KdeConfig::default(), 8, 500, 0).unwrap();
        assert!(w.must_take);
    }

    #[test]
    fn coca_isolated_target_has_no_candidates() {
        let g = Graph::from_edges(2, &[], vec![0.0; 4], 2, vec![0; 2], 1).unwrap();
        let w = coca_weights(&g, 0, 3, &KdeConfig::default(), 8, 500, 0).unwrap();
        assert!(w.candidates.is_empty());
        assert!(!w.must_take);
    }

    #[test]
    fn coca_matches_brute_force_oracle_t6_m3() {
        // A raised density floor keeps inverse densities moderate, so the
        // absolute tolerance is meaningful instead of being swamped by
        // last-bit noise amplified through 1/p near the default clamp.
        let g = star_graph(6, 4, 17);
        let kde = KdeConfig {
            epsilon_floor: 1e-3,
            ..KdeConfig::default()
        };
        let w = coca_weights(&g, 0, 3, &kde, 64, 500, 0).unwrap();
        let oracle = oracle_coca(&g, 0, 3, 1e-3);
        for (got, want) in w.weights.iter().zip(&oracle) {
            assert!(
                (got - want).abs() <= 1e-10,
                "coca {got} vs oracle {want}"
            );
        }
    }

    #[test]
    fn coca_all_identical_features_score_identically() {
        let dim = 3;
        let t = 5;
        let mut features = vec![0.5; (t + 1) * dim];
        for x in features.iter_mut().take(dim) {
            *x = 2.0; // target differs, spokes all identical
        }
        let edges: Vec<(NodeId, NodeId)> = (1..=t).map(|v| (0, v)).collect();
        let g = Graph::from_edges(t + 1, &edges, features, dim, vec![0; t + 1], 1).unwrap();
        let w = coca_weights(&g, 0, 2, &KdeConfig::default(), 8, 500, 0).unwrap();
        for &x in &w.weights {
            assert_eq!(x, w.weights[0], "symmetry broken: {:?}", w.weights);
        }
    }

    #[test]
    fn coca_expectations_are_nonpositive() {
        // Adding the candidate's own kernel can only raise the density at its
        // location, so each term (and the sum) is at most zero.
        let g = star_graph(7, 4, 51);
        let w = coca_weights(&g, 0, 3, &KdeConfig::default(), 8, 500, 0).unwrap();
        for &x in &w.weights {
            assert!(x <= 0.0, "positive expectation {x}");
        }
    }

    #[test]
    fn coca_downranks_the_corrupted_neighbor() {
        // Five neighbors near the target's cluster, one with wrecked
        // features: the outlier must get the most negative expectation.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dim = 4;
        let mut features = Vec::new();
        for _ in 0..6 {
            for _ in 0..dim {
                features.push(1.0 + 0.2 * (rng.random::<f64>() - 0.5));
            }
        }
        for _ in 0..dim {
            features.push(-9.0); // node 6, far outlier
        }
        let edges: Vec<(NodeId, NodeId)> = (1..=6).map(|v| (0, v)).collect();
        let g = Graph::from_edges(7, &edges, features, dim, vec![0; 7], 1).unwrap();
        let w = coca_weights(&g, 0, 3, &KdeConfig::default(), 8, 500, 0).unwrap();
        let min_i = (0..6).min_by(|&a, &b| w.weights[a].total_cmp(&w.weights[b])).unwrap();
        assert_eq!(w.candidates[min_i], 6);
        // And top-3 selection leaves it out.
        let sel = select_neighbors(&w, 3, SelectionPolicy::TopM, 0).unwrap();
        assert!(!sel.contains(&6), "outlier selected: {sel:?}");
    }

    #[test]
    fn coca_mc_budget_equal_to_count_takes_the_exact_path() {
        let g = star_graph(10, 4, 13);
        // C(9, 3) = 84 coalitions per candidate.
        let exact = coca_weights(&g, 0, 4, &KdeConfig::default(), 8, 84, 1).unwrap();
        let roomy = coca_weights(&g, 0, 4, &KdeConfig::default(), 8, 5000, 1).unwrap();
        assert_eq!(exact.weights, roomy.weights);
    }

    #[test]
    fn coca_mc_estimates_converge_to_exact_weights() {
        let g = star_graph(10, 4, 13);
        let kde = KdeConfig::default();
        let exact = coca_weights(&g, 0, 4, &kde, 8, 5000, 1).unwrap();
        let budget = 20; // forces MC: 20 < 84
        let runs = 200;
        let t = exact.weights.len();
        let mut sums = vec![0.0; t];
        let mut sq_sums = vec![0.0; t];
        for seed in 0..runs {
            let w = coca_weights(&g, 0, 4, &kde, 8, budget, seed).unwrap();
            for i in 0..t {
                sums[i] += w.weights[i];
                sq_sums[i] += w.weights[i] * w.weights[i];
            }
        }
        for i in 0..t {
            let mean = sums[i] / runs as f64;
            let var = (sq_sums[i] / runs as f64 - mean * mean).max(0.0);
            let se = (var / runs as f64).sqrt();
            let dev = (mean - exact.weights[i]).abs();
            assert!(
                dev <= 3.0 * se + 1e-12,
                "candidate {i}: dev {dev} exceeds 3 SE {se}"
            );
        }
    }

    #[test]
    fn coca_is_deterministic_per_seed_on_the_mc_path() {
        let g = star_graph(14, 4, 2);
        let kde = KdeConfig::default();
        let a = coca_weights(&g, 0, 4, &kde, 8, 50, 7).unwrap();
        let b = coca_weights(&g, 0, 4, &kde, 8, 50, 7).unwrap();
        let c = coca_weights(&g, 0, 4, &kde, 8, 50, 8).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn weights_are_equivariant_under_node_relabeling() {
        // Reverse all node ids on a star fixture; exact-path weights must
        // follow the relabeling (up to summation-order noise).
        let g = star_graph(6, 3, 40);
        let n = g.num_nodes();
        let perm = |v: NodeId| n - 1 - v;
        let mut features = vec![0.0; n * 3];
        for v in 0..n {
            features[perm(v) * 3..perm(v) * 3 + 3].copy_from_slice(g.features(v));
        }
        let edges: Vec<(NodeId, NodeId)> = (1..n).map(|v| (perm(0), perm(v))).collect();
        let g2 = Graph::from_edges(n, &edges, features, 3, vec![0; n], 1).unwrap();

        let w1 = coca_weights(&g, 0, 3, &KdeConfig::default(), 8, 500, 5).unwrap();
        let w2 = coca_weights(&g2, perm(0), 3, &KdeConfig::default(), 8, 500, 5).unwrap();
        for (i, &cand) in w1.candidates.iter().enumerate() {
            let j = w2
                .candidates
                .iter()
                .position(|&c| c == perm(cand))
                .unwrap();
            assert_relative_eq!(w1.weights[i], w2.weights[j], max_relative = 1e-12);
        }
    }

    // ---- selection -----------------------------------------------------------

    fn weights_fixture(ws: &[f64]) -> SamplerWeights {
        SamplerWeights {
            target: 0,
            candidates: (1..=ws.len()).collect(),
            weights: ws.to_vec(),
            must_take: false,
        }
    }

    #[test]
    fn top_m_picks_the_heaviest() {
        let w = weights_fixture(&[5.0, 1.0, 1.0]);
        assert_eq!(select_neighbors(&w, 1, SelectionPolicy::TopM, 3).unwrap(), vec![1]);
    }

    #[test]
    fn selection_takes_all_when_m_covers_the_neighborhood() {
        let w = weights_fixture(&[0.3, 0.7]);
        assert_eq!(
            select_neighbors(&w, 5, SelectionPolicy::TopM, 0).unwrap(),
            vec![1, 2]
        );
    }

    #[test]
    fn selection_rejects_zero_m_and_non_finite_weights() {
        let w = weights_fixture(&[1.0, 2.0]);
        assert!(select_neighbors(&w, 0, SelectionPolicy::TopM, 0).is_err());
        let bad = weights_fixture(&[f64::NAN, 1.0]);
        assert!(select_neighbors(&bad, 1, SelectionPolicy::TopM, 0).is_err());
    }

    #[test]
    fn tied_top_m_is_a_seeded_uniform_subset() {
        let w = weights_fixture(&[1.0; 4]);
        // Deterministic per seed.
        assert_eq!(
            select_neighbors(&w, 2, SelectionPolicy::TopM, 11).unwrap(),
            select_neighbors(&w, 2, SelectionPolicy::TopM, 11).unwrap()
        );
        // Each of the C(4,2)=6 subsets should appear with frequency near 1/6;
        // 3 sigma over 6000 seeds is about 0.014.
        let mut counts: HashMap<Vec<NodeId>, usize> = HashMap::new();
        let runs = 6000;
        for seed in 0..runs {
            let sel = select_neighbors(&w, 2, SelectionPolicy::TopM, seed).unwrap();
            *counts.entry(sel).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 6);
        for (subset, count) in counts {
            let freq = count as f64 / runs as f64;
            assert!(
                (freq - 1.0 / 6.0).abs() < 0.015,
                "subset {subset:?} frequency {freq}"
            );
        }
    }

    #[test]
    fn top_m_is_invariant_under_monotone_weight_scaling() {
        // Doubling is exact in floating point, so ties are preserved and the
        // selected set must be identical seed by seed.
        let w = weights_fixture(&[0.2, -1.5, 0.2, 3.0, -0.7]);
        let scaled = SamplerWeights {
            weights: w.weights.iter().map(|x| x * 2.0).collect(),
            ..w.clone()
        };
        for seed in 0..50 {
            assert_eq!(
                select_neighbors(&w, 2, SelectionPolicy::TopM, seed).unwrap(),
                select_neighbors(&scaled, 2, SelectionPolicy::TopM, seed).unwrap()
            );
        }
    }

    #[test]
    fn proportional_frequencies_follow_the_weights() {
        // Weights [3, 1], M=1: candidate 1 should win about 75% of draws.
        // 3 sigma over 1e5 draws is about 0.004.
        let w = weights_fixture(&[3.0, 1.0]);
        let runs = 100_000;
        let mut first = 0usize;
        for seed in 0..runs {
            if select_neighbors(&w, 1, SelectionPolicy::Proportional, seed).unwrap() == vec![1] {
                first += 1;
            }
        }
        let freq = first as f64 / runs as f64;
        assert!((freq - 0.75).abs() < 0.01, "frequency {freq}");
    }

    #[test]
    fn proportional_shifts_negative_weights_into_range() {
        let w = weights_fixture(&[-5.0, -1.0, -3.0]);
        let sel = select_neighbors(&w, 2, SelectionPolicy::Proportional, 4).unwrap();
        assert_eq!(sel.len(), 2);
        // The least negative candidate dominates after the shift.
        let runs = 2000;
        let mut hits = 0;
        for seed in 0..runs {
            if select_neighbors(&w, 1, SelectionPolicy::Proportional, seed).unwrap() == vec![2] {
                hits += 1;
            }
        }
        assert!(hits as f64 / runs as f64 > 0.5, "hits {hits}");
    }

    #[test]
    fn uniform_weights_with_proportional_reproduce_uniform_frequencies() {
        let g = star_graph(4, 2, 1);
        let w = uniform_weights(&g, 0).unwrap();
        assert_eq!(w.weights, vec![1.0; 4]);
        let runs = 20_000;
        let mut count1 = 0usize;
        for seed in 0..runs {
            let sel = select_neighbors(&w, 2, SelectionPolicy::Proportional, seed).unwrap();
            if sel.contains(&1) {
                count1 += 1;
            }
        }
        // Each id appears with probability 1/2; 3 sigma ~ 0.011.
        let freq = count1 as f64 / runs as f64;
        assert!((freq - 0.5).abs() < 0.012, "frequency {freq}");
    }

    #[test]
    fn uniform_weights_of_isolated_node_are_empty() {
        let g = Graph::from_edges(1, &[], vec![0.0; 2], 2, vec![0], 1).unwrap();
        let w = uniform_weights(&g, 0).unwrap();
        assert!(w.candidates.is_empty());
        assert_eq!(
            select_neighbors(&w, 3, SelectionPolicy::TopM, 0).unwrap(),
            Vec::<NodeId>::new()
        );
    }

    // ---- sample trees -----------------------------------------------------------

    #[test]
    fn line_graph_tree_follows_the_only_path() {
        // 0 - 1 - 2 with per-hop sizes [1, 1]: hop 1 must be {1}, hop 2
        // either {0} or {2}.
        let g = Graph::from_edges(
            3,
            &[(0, 1), (1, 2)],
            vec![0.0, 0.1, 1.0, 1.1, 2.0, 2.1],
            2,
            vec![0; 3],
            1,
        )
        .unwrap();
        let cfg = test_cfg(SamplerKind::Uniform);
        let tree = build_sample_tree(&g, 0, &cfg, &[1, 1], 5).unwrap();
        let hops = tree.hop_sets();
        assert_eq!(hops[0], vec![1]);
        assert_eq!(hops[1].len(), 1);
        assert!(hops[1] == vec![0] || hops[1] == vec![2]);
    }

    #[test]
    fn star_tree_sizes_are_bounded_by_per_hop_budgets() {
        let g = star_graph(8, 3, 3);
        let cfg = test_cfg(SamplerKind::Coca);
        let tree = build_sample_tree(&g, 0, &cfg, &[3, 2], 9).unwrap();
        assert_eq!(tree.root.children.len(), 3);
        for child in &tree.root.children {
            // Spokes only connect back to the hub.
            assert_eq!(child.children.len(), 1);
            assert_eq!(child.children[0].id, 0);
        }
        let hops = tree.hop_sets();
        assert!(hops[0].len() <= 3);
        assert!(hops[1].len() <= 6);
    }

    #[test]
    fn trees_are_deterministic_per_seed() {
        let g = generate_sbm(
            &SbmParams {
                block_sizes: vec![20, 20],
                p_in: 0.4,
                p_out: 0.1,
                feature_dim: 4,
                feature_shift: 1.5,
            },
            3,
        )
        .unwrap();
        let cfg = test_cfg(SamplerKind::Coca);
        let roots: Vec<NodeId> = (0..10).collect();
        let a = build_sample_trees(&g, &roots, &cfg, &[3, 3], 42).unwrap();
        let b = build_sample_trees(&g, &roots, &cfg, &[3, 3], 42).unwrap();
        assert_eq!(a, b);
        // Coca weights on continuous features are almost surely distinct, so
        // top-m selection does not depend on the seed; uniform weights are
        // all ties and expose it.
        let cfg = test_cfg(SamplerKind::Uniform);
        let c = build_sample_trees(&g, &roots, &cfg, &[3, 3], 42).unwrap();
        let d = build_sample_trees(&g, &roots, &cfg, &[3, 3], 43).unwrap();
        assert_ne!(c, d);
    }

    #[test]
    fn tree_children_are_distinct_per_node() {
        let g = generate_sbm(
            &SbmParams {
                block_sizes: vec![30],
                p_in: 0.5,
                p_out: 0.0,
                feature_dim: 3,
                feature_shift: 0.0,
            },
            8,
        )
        .unwrap();
        let cfg = test_cfg(SamplerKind::Uniform);
        let tree = build_sample_tree(&g, 0, &cfg, &[5, 5], 1).unwrap();
        fn check(node: &SampleNode) {
            let mut ids: Vec<NodeId> = node.children.iter().map(|c| c.id).collect();
            let before = ids.len();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), before, "duplicate children under {}", node.id);
            for c in &node.children {
                check(c);
            }
        }
        check(&tree.root);
    }

    #[test]
    fn tree_rejects_bad_arguments() {
        let g = star_graph(3, 2, 0);
        let cfg = test_cfg(SamplerKind::Uniform);
        assert!(build_sample_tree(&g, 99, &cfg, &[2], 0).is_err());
        assert!(build_sample_tree(&g, 0, &cfg, &[], 0).is_err());
        assert!(build_sample_tree(&g, 0, &cfg, &[0], 0).is_err());
    }

    #[test]
    fn engine_weights_match_free_functions() {
        let g = star_graph(12, 4, 77);
        let cfg = test_cfg(SamplerKind::Coca);
        let engine = SamplerEngine::new(&g, cfg.clone(), 123).unwrap();
        let from_engine = engine.weights(0, 4).unwrap();
        let direct =
            coca_weights(&g, 0, 4, &cfg.kde, cfg.projection_dim, cfg.mc_budget, 123).unwrap();
        assert_eq!(from_engine.weights, direct.weights);

        let cfg = test_cfg(SamplerKind::Causal);
        let engine = SamplerEngine::new(&g, cfg.clone(), 123).unwrap();
        let from_engine = engine.weights(0, 4).unwrap();
        let direct = causal_weights(&g, 0, &cfg.kde, cfg.projection_dim, 123).unwrap();
        assert_eq!(from_engine.weights, direct.weights);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn weights_cover_the_neighborhood_and_stay_finite(
            t in 1usize..9,
            m in 1usize..5,
            seed in 0u64..1000,
        ) {
            let g = star_graph(t, 3, seed);
            for kind in [SamplerKind::Uniform, SamplerKind::Causal, SamplerKind::Coca] {
                let cfg = test_cfg(kind);
                let engine = SamplerEngine::new(&g, cfg, seed).unwrap();
                let w = engine.weights(0, m).unwrap();
                prop_assert_eq!(&w.candidates, g.neighborhood(0).unwrap());
                prop_assert!(w.weights.iter().all(|x| x.is_finite()));
                let sel = select_neighbors(&w, m, SelectionPolicy::TopM, seed).unwrap();
                prop_assert_eq!(sel.len(), m.min(t));
                let mut sorted = sel.clone();
                sorted.sort_unstable();
                sorted.dedup();
                prop_assert_eq!(sorted.len(), sel.len());
            }
        }
    }
}
