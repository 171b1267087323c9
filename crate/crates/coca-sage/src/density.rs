//! Conditional feature-density estimation.
//!
//! The causal samplers score a candidate neighbor by the kernel density of
//! its feature vector under the features of a conditioning set. Densities are
//! computed after a seeded Gaussian random projection to a low dimension
//! (high-dimensional bag-of-words features make raw KDE meaningless), with an
//! isotropic Gaussian kernel and Scott's rule bandwidth by default.
//!
//! Outputs are clamped to `[epsilon_floor, 1/epsilon_floor]` so that inverse
//! densities stay finite even for far outliers or degenerate point masses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-12;
pub const DEFAULT_PROJECTION_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Scott's rule from the conditioning set: `std_avg * n^(-1/(d+4))`.
    Scott,
    /// A caller-supplied positive bandwidth.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeConfig {
    pub bandwidth: BandwidthRule,
    pub epsilon_floor: f64,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig {
            bandwidth: BandwidthRule::Scott,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
        }
    }
}

impl KdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_floor > 0.0) {
            return Err(Error::Parameter(format!(
                "epsilon_floor must be positive, got {}",
                self.epsilon_floor
            )));
        }
        if let BandwidthRule::Fixed(h) = self.bandwidth {
            if !(h > 0.0) {
                return Err(Error::Parameter(format!(
                    "fixed bandwidth must be positive, got {h}"
                )));
            }
        }
        Ok(())
    }
}

/// Scott's rule bandwidth for `n` points in `d` dimensions with average
/// per-dimension standard deviation `std_avg`, floored at `floor` so that
/// degenerate (constant) data still yields a usable bandwidth.
pub fn scott_bandwidth(n: usize, d: usize, std_avg: f64, floor: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Parameter("bandwidth needs at least one point".into()));
    }
    if d == 0 {
        return Err(Error::Parameter("dimension must be at least 1".into()));
    }
    if !(std_avg >= 0.0) {
        return Err(Error::Parameter(format!(
            "std_avg must be nonnegative, got {std_avg}"
        )));
    }
    let h = std_avg * (n as f64).powf(-1.0 / (d as f64 + 4.0));
    Ok(h.max(floor))
}

/// Seeded Gaussian random projection. When the requested output dimension is
/// at least the input dimension the projection is the identity: projecting up
/// would only blur distances, and small synthetic feature spaces keep their
/// exact geometry this way.
#[derive(Debug, Clone)]
pub struct RandomProjection {
    in_dim: usize,
    mat: Option<Matrix>,
}

impl RandomProjection {
    pub fn new(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        if out_dim >= in_dim || in_dim == 0 {
            return RandomProjection { in_dim, mat: None };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = (out_dim as f64).sqrt().recip();
        let mut data = vec![0.0; out_dim * in_dim];
        for x in data.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *x = g * scale;
        }
        RandomProjection {
            in_dim,
            mat: Some(Matrix::from_vec(out_dim, in_dim, data).expect("sized above")),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    /// Dimension of projected vectors.
    pub fn out_dim(&self) -> usize {
        self.mat.as_ref().map_or(self.in_dim, |m| m.rows())
    }

    pub fn is_identity(&self) -> bool {
        self.mat.is_none()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::Shape(format!(
                "projection input has dimension {}, expected {}",
                x.len(),
                self.in_dim
            )));
        }
        match &self.mat {
            None => Ok(x.to_vec()),
            Some(m) => {
                let mut out = vec![0.0; m.rows()];
                m.matvec(x, &mut out);
                Ok(out)
            }
        }
    }
}

/// Mean of isotropic Gaussian kernels of bandwidth `h` centered at `centers`,
/// evaluated at `query`, clamped to `[floor, 1/floor]`. All vectors must
/// already live in the same (projected) space.
pub fn kernel_density(query: &[f64], centers: &[&[f64]], h: f64, floor: f64) -> f64 {
    debug_assert!(!centers.is_empty());
    let d = query.len() as f64;
    // (2 pi)^(-d/2) h^(-d), computed in log space to survive tiny bandwidths.
    let ln_norm = -0.5 * d * (2.0 * std::f64::consts::PI).ln() - d * h.ln();
    let inv_two_h2 = 0.5 / (h * h);
    let mut sum = 0.0;
    for c in centers {
        debug_assert_eq!(c.len(), query.len());
        let mut dist2 = 0.0;
        for (a, b) in query.iter().zip(c.iter()) {
            let diff = a - b;
            dist2 += diff * diff;
        }
        sum += (ln_norm - dist2 * inv_two_h2).exp();
    }
    let density = sum / centers.len() as f64;
    density.clamp(floor, floor.recip())
}

/// Bandwidth for a conditioning set under the configured rule. For Scott's
/// rule `std_avg` is the mean over dimensions of the per-dimension
/// (population) standard deviation of the set.
pub fn set_bandwidth(centers: &[&[f64]], cfg: &KdeConfig) -> Result<f64> {
    if centers.is_empty() {
        return Err(Error::Parameter("conditioning set is empty".into()));
    }
    match cfg.bandwidth {
        BandwidthRule::Fixed(h) => Ok(h),
        BandwidthRule::Scott => {
            let n = centers.len();
            let d = centers[0].len();
            let mut std_sum = 0.0;
            for j in 0..d {
                let mean: f64 = centers.iter().map(|c| c[j]).sum::<f64>() / n as f64;
                let var: f64 =
                    centers.iter().map(|c| (c[j] - mean).powi(2)).sum::<f64>() / n as f64;
                std_sum += var.sqrt();
            }
            scott_bandwidth(n, d, std_sum / d as f64, cfg.epsilon_floor)
        }
    }
}

/// KDE of `query` under `centers`, both already projected.
pub fn density_projected(query: &[f64], centers: &[&[f64]], cfg: &KdeConfig) -> Result<f64> {
    cfg.validate()?;
    if centers.is_empty() {
        return Err(Error::Parameter("conditioning set is empty".into()));
    }
    for c in centers {
        if c.len() != query.len() {
            return Err(Error::Shape(format!(
                "conditioning vector has dimension {}, query has {}",
                c.len(),
                query.len()
            )));
        }
    }
    let h = set_bandwidth(centers, cfg)?;
    Ok(kernel_density(query, centers, h, cfg.epsilon_floor))
}

/// Conditional density of `query` given a conditioning set of raw feature
/// vectors: project everything with a seeded random projection to
/// `projection_dim`, then evaluate the kernel density estimate.
pub fn conditional_density(
    query: &[f64],
    conditioning: &[&[f64]],
    cfg: &KdeConfig,
    projection_dim: usize,
    seed: u64,
) -> Result<f64> {
    cfg.validate()?;
    if conditioning.is_empty() {
        return Err(Error::Parameter("conditioning set is empty".into()));
    }
    if projection_dim == 0 {
        return Err(Error::Parameter("projection_dim must be at least 1".into()));
    }
    let proj = RandomProjection::new(query.len(), projection_dim, seed);
    let q = proj.project(query)?;
    let projected: Vec<Vec<f64>> = conditioning
        .iter()
        .map(|c| proj.project(c))
        .collect::<Result<_>>()?;
    let refs: Vec<&[f64]> = projected.iter().map(|v| v.as_slice()).collect();
    density_projected(&q, &refs, cfg)
}
