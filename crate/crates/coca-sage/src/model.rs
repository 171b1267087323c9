//! Two-layer mean-aggregator network over sample trees, with handwritten
//! backprop, Adam, and a patience-based training loop.
//!
//! Layer 1 embeds a node as `relu(W1 * mean(x_u, x_children(u)))`, applied at
//! the root and at each hop-1 child using its own sampled children. Layer 2
//! produces logits `W2 * mean(h1_root, h1_children)` and class probabilities
//! via a max-subtracted softmax. The batch objective is the summed negative
//! log-likelihood plus an L2 penalty `wd/2 * (|W1|^2 + |W2|^2)` added once
//! per batch.
//!
//! Gradients are accumulated over fixed-size example chunks in parallel and
//! folded in chunk order, so results do not depend on thread scheduling.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Split};
use crate::linalg::Matrix;
use crate::sampling::{SampleNode, SampleTree, SamplerConfig, SamplerEngine};
use crate::seed::{derive_seed, tag};

/// Probabilities are clamped here before taking the log, so the loss stays
/// finite even when the network is confidently wrong.
const PROB_FLOOR: f64 = 1e-15;

/// Examples per parallel gradient chunk. Fixed so the fold order, and hence
/// every bit of the result, is independent of the rayon thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Neighbors to sample at hop 1 and hop 2.
    pub per_hop: Vec<usize>,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 128,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            batch_size: 50,
            per_hop: vec![10, 10],
            max_epochs: 200,
            patience: 20,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Parameter("hidden_dim must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Parameter("learning_rate must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Parameter("weight_decay must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        if self.per_hop.len() != 2 || self.per_hop.iter().any(|&m| m == 0) {
            return Err(Error::Parameter(
                "per_hop must list two positive sample sizes".into(),
            ));
        }
        if self.patience == 0 {
            return Err(Error::Parameter("patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// Network weights. `w1` is hidden x input, `w2` is classes x hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl ModelParams {
    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.rows()
    }
}

/// Glorot-uniform initialization, one seeded stream per layer.
pub fn init_params(input_dim: usize, hidden_dim: usize, num_classes: usize, seed: u64) -> ModelParams {
    let glorot = |rows: usize, cols: usize, s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rng.random::<f64>() * 2.0 * a - a)
            .collect();
        Matrix::from_vec(rows, cols, data).expect("sized to match")
    };
    ModelParams {
        w1: glorot(hidden_dim, input_dim, derive_seed(seed, &[tag::INIT, 0])),
        w2: glorot(num_classes, hidden_dim, derive_seed(seed, &[tag::INIT, 1])),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl Gradients {
    fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            w1: Matrix::zeros(params.w1.rows(), params.w1.cols()),
            w2: Matrix::zeros(params.w2.rows(), params.w2.cols()),
        }
    }

    fn add(&mut self, other: &Gradients) {
        self.w1.add_scaled(&other.w1, 1.0);
        self.w2.add_scaled(&other.w2, 1.0);
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Negative log-likelihood of `label` under `probs`, floored for stability.
pub fn nll(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

/// Predicted class: argmax with ties resolved to the lowest class id.
pub fn predict(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Forward pass bookkeeping for one tree, in position order: index 0 is the
/// root, then the root's children.
struct Trace {
    mean1: Vec<Vec<f64>>,
    z1: Vec<Vec<f64>>,
    mean2: Vec<f64>,
    probs: Vec<f64>,
}

fn layer1_mean(graph: &Graph, node: &SampleNode) -> Vec<f64> {
    let d = graph.feature_dim();
    let mut mean = graph.features(node.id).to_vec();
    for child in &node.children {
        let f = graph.features(child.id);
        for j in 0..d {
            mean[j] += f[j];
        }
    }
    let count = (1 + node.children.len()) as f64;
    for x in &mut mean {
        *x /= count;
    }
    mean
}

fn forward_tree(graph: &Graph, params: &ModelParams, tree: &SampleTree) -> Result<Trace> {
    if params.w1.cols() != graph.feature_dim() {
        return Err(Error::Shape(format!(
            "model expects {} input features, graph has {}",
            params.w1.cols(),
            graph.feature_dim()
        )));
    }
    for child in &tree.root.children {
        for grandchild in &child.children {
            if !grandchild.children.is_empty() {
                return Err(Error::Shape("sample tree deeper than two hops".into()));
            }
        }
    }
    let positions: Vec<&SampleNode> =
        std::iter::once(&tree.root).chain(tree.root.children.iter()).collect();
    let hidden = params.w1.rows();
    let mut mean1 = Vec::with_capacity(positions.len());
    let mut z1 = Vec::with_capacity(positions.len());
    let mut h1 = Vec::with_capacity(positions.len());
    for node in &positions {
        let mean = layer1_mean(graph, node);
        let mut z = vec![0.0; hidden];
        params.w1.matvec(&mean, &mut z);
        let h: Vec<f64> = z.iter().map(|&x| x.max(0.0)).collect();
        mean1.push(mean);
        z1.push(z);
        h1.push(h);
    }
    let mut mean2 = vec![0.0; hidden];
    for h in &h1 {
        for j in 0..hidden {
            mean2[j] += h[j];
        }
    }
    let count = h1.len() as f64;
    for x in &mut mean2 {
        *x /= count;
    }
    let mut logits = vec![0.0; params.w2.rows()];
    params.w2.matvec(&mean2, &mut logits);
    let probs = softmax(&logits);
    Ok(Trace {
        mean1,
        z1,
        mean2,
        probs,
    })
}

/// Class probabilities for one sample tree.
pub fn forward(graph: &Graph, params: &ModelParams, tree: &SampleTree) -> Result<Vec<f64>> {
    Ok(forward_tree(graph, params, tree)?.probs)
}

/// Summed batch loss (including the L2 term) and its exact gradient.
pub fn batch_gradients(
    graph: &Graph,
    params: &ModelParams,
    trees: &[SampleTree],
    labels: &[usize],
    weight_decay: f64,
) -> Result<(f64, Gradients)> {
    if trees.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} trees with {} labels",
            trees.len(),
            labels.len()
        )));
    }
    let classes = params.w2.rows();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Index(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let chunks: Vec<Result<(f64, Gradients)>> = trees
        .par_chunks(GRAD_CHUNK)
        .zip(labels.par_chunks(GRAD_CHUNK))
        .map(|(ts, ys)| {
            let mut loss = 0.0;
            let mut grads = Gradients::zeros_like(params);
            for (tree, &y) in ts.iter().zip(ys) {
                let trace = forward_tree(graph, params, tree)?;
                loss += nll(&trace.probs, y);
                let mut dlogits = trace.probs.clone();
                dlogits[y] -= 1.0;
                grads.w2.add_outer(&dlogits, &trace.mean2, 1.0);
                let mut dmean2 = vec![0.0; params.w2.cols()];
                params.w2.matvec_t(&dlogits, &mut dmean2);
                let share = 1.0 / trace.mean1.len() as f64;
                for (mean, z) in trace.mean1.iter().zip(&trace.z1) {
                    let dz: Vec<f64> = z
                        .iter()
                        .zip(&dmean2)
                        .map(|(&zi, &di)| if zi > 0.0 { di * share } else { 0.0 })
                        .collect();
                    grads.w1.add_outer(&dz, mean, 1.0);
                }
            }
            Ok((loss, grads))
        })
        .collect();
    let mut total_loss = 0.0;
    let mut total = Gradients::zeros_like(params);
    for chunk in chunks {
        let (l, g) = chunk?;
        total_loss += l;
        total.add(&g);
    }
    if weight_decay > 0.0 {
        total_loss += 0.5 * weight_decay * (params.w1.frob_sq() + params.w2.frob_sq());
        total.w1.add_scaled(&params.w1, weight_decay);
        total.w2.add_scaled(&params.w2, weight_decay);
    }
    Ok((total_loss, total))
}

/// Adam moment estimates for both weight matrices.
#[derive(Debug, Clone)]
pub struct AdamState {
    m1: Matrix,
    v1: Matrix,
    m2: Matrix,
    v2: Matrix,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m1: Matrix::zeros(params.w1.rows(), params.w1.cols()),
            v1: Matrix::zeros(params.w1.rows(), params.w1.cols()),
            m2: Matrix::zeros(params.w2.rows(), params.w2.cols()),
            v2: Matrix::zeros(params.w2.rows(), params.w2.cols()),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    let update = |w: &mut Matrix, g: &Matrix, m: &mut Matrix, v: &mut Matrix| {
        let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
        let wd = w.data_mut();
        let gd = g.data();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..wd.len() {
            md[i] = b1 * md[i] + (1.0 - b1) * gd[i];
            vd[i] = b2 * vd[i] + (1.0 - b2) * gd[i] * gd[i];
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            wd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };
    update(&mut params.w1, &grads.w1, &mut state.m1, &mut state.v1);
    update(&mut params.w2, &grads.w2, &mut state.m2, &mut state.v2);
}

/// Accuracy of `params` on `ids`, with trees drawn from `seed`. Evaluation
/// uses one fixed seed so repeated calls see identical trees.
pub fn evaluate(
    params: &ModelParams,
    engine: &SamplerEngine,
    ids: &[NodeId],
    per_hop: &[usize],
    seed: u64,
) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::Parameter("cannot evaluate on an empty id set".into()));
    }
    let graph = engine.graph();
    let trees = engine.sample_trees(ids, per_hop, seed)?;
    let mut correct = 0usize;
    for (tree, &id) in trees.iter().zip(ids) {
        let probs = forward(graph, params, tree)?;
        if predict(&probs) == graph.label(id) {
            correct += 1;
        }
    }
    Ok(correct as f64 / ids.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub val_acc: f64,
    pub secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub params: ModelParams,
    pub history: Vec<EpochMetrics>,
    pub best_val: f64,
}

/// Trains with per-epoch shuffling and tree resampling, early-stopping when
/// validation accuracy fails to improve for `patience` epochs, and returns
/// the best-validation snapshot.
pub fn train(
    engine: &SamplerEngine,
    split: &Split,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Parameter("training split is empty".into()));
    }
    if split.val.is_empty() {
        return Err(Error::Parameter("validation split is empty".into()));
    }
    let graph = engine.graph();
    let mut params = init_params(
        graph.feature_dim(),
        cfg.hidden_dim,
        graph.num_classes(),
        derive_seed(seed, &[tag::INIT]),
    );
    let mut adam = AdamState::new(&params);
    let eval_seed = derive_seed(seed, &[tag::EVAL]);

    let mut best_params = params.clone();
    let mut best_val = -1.0;
    let mut history = Vec::new();
    let mut stale_epochs = 0usize;

    for epoch in 0..cfg.max_epochs {
        let start = Instant::now();
        let mut order = split.train.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag::SHUFFLE, epoch as u64]));
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        let sample_seed = derive_seed(seed, &[tag::EPOCH_SAMPLE, epoch as u64]);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let trees = engine.sample_trees(batch, &cfg.per_hop, sample_seed)?;
            let labels: Vec<usize> = batch.iter().map(|&v| graph.label(v)).collect();
            let (loss, grads) =
                batch_gradients(graph, &params, &trees, &labels, cfg.weight_decay)?;
            adam_step(&mut params, &grads, &mut adam, cfg.learning_rate);
            epoch_loss += loss;
        }

        let val_acc = evaluate(&params, engine, &split.val, &cfg.per_hop, eval_seed)?;
        history.push(EpochMetrics {
            epoch,
            loss: epoch_loss,
            val_acc,
            secs: start.elapsed().as_secs_f64(),
        });
        if val_acc > best_val {
            best_val = val_acc;
            best_params = params.clone();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best_params,
        history,
        best_val: best_val.max(0.0),
    })
}

/// Serializable bundle of trained weights plus the configuration that
/// produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelParams,
    pub model_config: ModelConfig,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let json = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&json)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                input: path.display().to_string(),
                line: 1,
                msg: format!(
                    "checkpoint version {} unsupported (expected {})",
                    ck.version, CHECKPOINT_VERSION
                ),
            });
        }
        Ok(ck)
    }
}
