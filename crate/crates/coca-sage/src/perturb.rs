//! Feature perturbations for robustness sweeps.
//!
//! A seeded Bernoulli mask with density `intensity` decides which entries of
//! the feature matrix are hit; the kind decides how. Placement restricts the
//! effect to the training rows, the evaluation rows (validation plus test),
//! or everything. One perturbed matrix is produced per spec and shared by
//! the training and evaluation views, so the two sides never see different
//! copies of the same node.
//!
//! The mask and the Gaussian noise stream always cover the full matrix in
//! row-major order regardless of placement, so for a fixed seed the same
//! entry receives the same perturbation under every placement. Restricting
//! the placement only gates whether it is applied, which keeps train-only
//! and eval-only runs byte-exact complements of a both-sides run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::seed::{derive_seed, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    /// Flip masked entries of a binary matrix: 0 <-> 1.
    BernoulliXor,
    /// Add Gaussian noise to masked entries, scaled per column by that
    /// column's population standard deviation.
    GaussianGated,
    /// Negate masked entries.
    SignFlip,
}

impl PerturbKind {
    pub fn name(&self) -> &'static str {
        match self {
            PerturbKind::BernoulliXor => "bernoulli_xor",
            PerturbKind::GaussianGated => "gaussian_gated",
            PerturbKind::SignFlip => "sign_flip",
        }
    }
}

impl std::str::FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli_xor" | "xor" => Ok(PerturbKind::BernoulliXor),
            "gaussian_gated" | "gauss" => Ok(PerturbKind::GaussianGated),
            "sign_flip" => Ok(PerturbKind::SignFlip),
            other => Err(Error::Parameter(format!(
                "unknown perturbation kind '{other}' (expected bernoulli_xor/xor, \
                 gaussian_gated/gauss, or sign_flip)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Both,
    TrainOnly,
    TestOnly,
}

impl Placement {
    pub fn name(&self) -> &'static str {
        match self {
            Placement::Both => "both",
            Placement::TrainOnly => "train_only",
            Placement::TestOnly => "test_only",
        }
    }
}

impl std::str::FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Placement::Both),
            "train_only" | "train" => Ok(Placement::TrainOnly),
            "test_only" | "test" => Ok(Placement::TestOnly),
            other => Err(Error::Parameter(format!(
                "unknown placement '{other}' (expected both, train_only/train, or test_only/test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbKind,
    /// Expected fraction of affected entries, in [0, 1].
    pub intensity: f64,
    pub placement: Placement,
    pub seed: u64,
}

/// Row-major binary gate over a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c] != 0
    }

    pub fn ones(&self) -> usize {
        self.data.iter().filter(|&&b| b != 0).count()
    }
}

/// Independent Bernoulli(intensity) gate per entry.
pub fn bernoulli_mask(rows: usize, cols: usize, intensity: f64, seed: u64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&intensity) {
        return Err(Error::Parameter(format!(
            "perturbation intensity {intensity} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<u8> = (0..rows * cols)
        .map(|_| rng.random_bool(intensity) as u8)
        .collect();
    Ok(Mask { rows, cols, data })
}

/// Fraction of gated entries.
pub fn perturbation_ratio(mask: &Mask) -> Result<f64> {
    if mask.data.is_empty() {
        return Err(Error::Parameter("cannot take the ratio of an empty mask".into()));
    }
    Ok(mask.ones() as f64 / mask.data.len() as f64)
}

fn check_dims(features: &[f64], mask: &Mask, row_filter: &[bool]) -> Result<()> {
    if features.len() != mask.rows * mask.cols {
        return Err(Error::Shape(format!(
            "{} features for a {}x{} mask",
            features.len(),
            mask.rows,
            mask.cols
        )));
    }
    if row_filter.len() != mask.rows {
        return Err(Error::Shape(format!(
            "row filter of length {} for {} rows",
            row_filter.len(),
            mask.rows
        )));
    }
    Ok(())
}

/// XOR-style bit flip of gated entries in filtered rows. The matrix must be
/// strictly binary; flipping twice with the same mask restores it exactly.
pub fn apply_bernoulli_xor(
    features: &[f64],
    mask: &Mask,
    row_filter: &[bool],
) -> Result<Vec<f64>> {
    check_dims(features, mask, row_filter)?;
    if let Some(&bad) = features.iter().find(|&&x| x != 0.0 && x != 1.0) {
        return Err(Error::Domain(format!(
            "bernoulli_xor requires binary features, found {bad}"
        )));
    }
    let mut out = features.to_vec();
    for r in 0..mask.rows {
        if !row_filter[r] {
            continue;
        }
        for c in 0..mask.cols {
            if mask.get(r, c) {
                let i = r * mask.cols + c;
                out[i] = 1.0 - out[i];
            }
        }
    }
    Ok(out)
}

/// Adds `z * sigma_c` to gated entries in filtered rows, where `sigma_c` is
/// the population standard deviation of column `c` over the full matrix.
/// Constant columns are left bit-identical. Noise is drawn for every gated
/// entry whether or not its row passes the filter, so entry noise is stable
/// across placements.
pub fn apply_gaussian_gated(
    features: &[f64],
    mask: &Mask,
    row_filter: &[bool],
    seed: u64,
) -> Result<Vec<f64>> {
    check_dims(features, mask, row_filter)?;
    let (rows, cols) = (mask.rows, mask.cols);
    let mut sigmas = vec![0.0; cols];
    if rows > 0 {
        for (c, sigma) in sigmas.iter_mut().enumerate() {
            let mean = (0..rows).map(|r| features[r * cols + c]).sum::<f64>() / rows as f64;
            let var = (0..rows)
                .map(|r| (features[r * cols + c] - mean).powi(2))
                .sum::<f64>()
                / rows as f64;
            *sigma = var.sqrt();
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = features.to_vec();
    for r in 0..rows {
        for c in 0..cols {
            if mask.get(r, c) {
                let z: f64 = StandardNormal.sample(&mut rng);
                if row_filter[r] && sigmas[c] > 0.0 {
                    out[r * cols + c] += z * sigmas[c];
                }
            }
        }
    }
    Ok(out)
}

/// Negates gated entries in filtered rows; its own inverse.
pub fn apply_sign_flip(features: &[f64], mask: &Mask, row_filter: &[bool]) -> Result<Vec<f64>> {
    check_dims(features, mask, row_filter)?;
    let mut out = features.to_vec();
    for r in 0..mask.rows {
        if !row_filter[r] {
            continue;
        }
        for c in 0..mask.cols {
            if mask.get(r, c) {
                let i = r * mask.cols + c;
                out[i] = -out[i];
            }
        }
    }
    Ok(out)
}

fn placement_filter(n: usize, split: &Split, placement: Placement) -> Vec<bool> {
    match placement {
        Placement::Both => vec![true; n],
        Placement::TrainOnly => {
            let mut f = vec![false; n];
            for &v in &split.train {
                f[v] = true;
            }
            f
        }
        Placement::TestOnly => {
            let mut f = vec![false; n];
            for &v in split.val.iter().chain(&split.test) {
                f[v] = true;
            }
            f
        }
    }
}

/// Applies `spec` to the graph's features and returns the training and
/// evaluation views. Both views share the single perturbed matrix; the
/// placement only controls which rows were touched.
pub fn apply_placement(
    graph: &Graph,
    split: &Split,
    spec: &PerturbationSpec,
) -> Result<(Graph, Graph)> {
    let n = graph.num_nodes();
    let d = graph.feature_dim();
    let filter = placement_filter(n, split, spec.placement);
    let mask = bernoulli_mask(n, d, spec.intensity, derive_seed(spec.seed, &[tag::MASK]))?;
    let features = graph.feature_matrix();
    let perturbed = match spec.kind {
        PerturbKind::BernoulliXor => apply_bernoulli_xor(features, &mask, &filter)?,
        PerturbKind::GaussianGated => {
            apply_gaussian_gated(features, &mask, &filter, derive_seed(spec.seed, &[tag::GATE]))?
        }
        PerturbKind::SignFlip => apply_sign_flip(features, &mask, &filter)?,
    };
    let perturbed_graph = graph.with_features(perturbed)?;
    Ok((perturbed_graph.clone(), perturbed_graph))
}
