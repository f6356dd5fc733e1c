//! Desk-scale training loops: a linear adapter trained contrastively on
//! synthetic pairs, and a lightweight pointwise scorer head trained with the
//! joint re-ranking objective using mined negatives.
//!
//! Training is single-threaded, mini-batch gradient descent with a fixed
//! step. The data order is shuffled once per stage, so a zero step size
//! reproduces the same loss every epoch and identical configs give bitwise
//! identical weights.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{search, DenseIndex, IndexError};
use crate::model::{cosine_similarity, l2_normalize, EmbeddingVector, ModelError};
use crate::objectives::{
    bce_grad, bce_loss, infonce_grad, joint_loss, mine_hard_negative, preference_grad,
    preference_loss, sample_random_negative, InfoNceBatch, JointLossWeights, MinerConfig,
    ObjectiveError,
};
use crate::provider::synthetic::{synthetic_pair, SyntheticWorld};
use crate::provider::ProviderError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss diverged (non-finite) at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("training needs at least 2 paired examples")]
    NotEnoughData,
    #[error("batch size must be ≥ 2 for the contrastive objective")]
    BadBatchSize,
    #[error("ground-truth id {0} is not in the candidate corpus")]
    MissingCandidate(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Linear map raw_dim → emb_dim with bias; shared between the query and
/// candidate encoding paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearAdapter {
    /// raw_dim rows × emb_dim columns.
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearAdapter {
    /// Seeded uniform(−0.05, 0.05) initialization.
    pub fn init(seed: u64, raw_dim: usize, emb_dim: usize) -> Self {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = (0..raw_dim)
            .map(|_| (0..emb_dim).map(|_| rng.gen_range(-0.05..0.05)).collect())
            .collect();
        let bias = vec![0.0; emb_dim];
        Self { weight, bias }
    }

    pub fn raw_dim(&self) -> usize {
        self.weight.len()
    }

    pub fn emb_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (xi, row) in x.iter().zip(&self.weight) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        out
    }

    pub fn apply(&self, v: &EmbeddingVector) -> Result<EmbeddingVector, TrainError> {
        Ok(EmbeddingVector::new(self.forward(v.values()))?)
    }
}

/// Pointwise match scorer over the feature map [q⊙c ; |q−c|] of normalized
/// embeddings; emits σ(w·φ + b) ∈ (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyScorer {
    pub w: Vec<f64>,
    pub b: f64,
}

impl ToyScorer {
    pub fn zeros(emb_dim: usize) -> Self {
        Self {
            w: vec![0.0; 2 * emb_dim],
            b: 0.0,
        }
    }

    fn features(q: &[f64], c: &[f64]) -> Vec<f64> {
        q.iter()
            .zip(c)
            .map(|(a, b)| a * b)
            .chain(q.iter().zip(c).map(|(a, b)| (a - b).abs()))
            .collect()
    }

    fn sigmoid(x: f64) -> f64 {
        if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        }
    }

    /// Match confidence in (0, 1). Inputs are normalized internally.
    pub fn score(&self, query: &EmbeddingVector, candidate: &EmbeddingVector) -> Result<f64, TrainError> {
        let q = l2_normalize(query)?;
        let c = l2_normalize(candidate)?;
        let phi = Self::features(q.values(), c.values());
        let z: f64 = self.w.iter().zip(&phi).map(|(w, f)| w * f).sum::<f64>() + self.b;
        Ok(Self::sigmoid(z))
    }
}

/// Training hyperparameters shared by both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Adapter output width.
    pub emb_dim: usize,
    /// Contrastive softmax temperature.
    pub temperature: f64,
    /// Fraction of concepts held out from training for retrieval evaluation.
    pub holdout_fraction: f64,
    /// Optional distribution-shifted continuation trained after the first
    /// stage, starting from its weights.
    pub stage2_world: Option<SyntheticWorld>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            step_size: 0.2,
            seed: 0,
            emb_dim: 16,
            // gentler than the loss-kernel default; calibrated for stable
            // convergence of the toy adapter
            temperature: 0.2,
            holdout_fraction: 0.25,
            stage2_world: None,
        }
    }
}

/// One line of training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_at_1: Option<f64>,
}

struct AdapterGrad {
    d_weight: Vec<Vec<f64>>,
    d_bias: Vec<f64>,
}

impl AdapterGrad {
    fn zeros(raw_dim: usize, emb_dim: usize) -> Self {
        Self {
            d_weight: vec![vec![0.0; emb_dim]; raw_dim],
            d_bias: vec![0.0; emb_dim],
        }
    }

    fn accumulate(&mut self, x: &[f64], d_out: &[f64]) {
        for (xi, row) in x.iter().zip(self.d_weight.iter_mut()) {
            for (g, d) in row.iter_mut().zip(d_out) {
                *g += xi * d;
            }
        }
        for (g, d) in self.d_bias.iter_mut().zip(d_out) {
            *g += d;
        }
    }

    #[cfg(test)]
    fn squared_norm(&self) -> f64 {
        self.d_weight
            .iter()
            .flatten()
            .chain(self.d_bias.iter())
            .map(|g| g * g)
            .sum()
    }
}

fn step_adapter(adapter: &mut LinearAdapter, grad: &AdapterGrad, step: f64) {
    for (row, grow) in adapter.weight.iter_mut().zip(&grad.d_weight) {
        for (w, g) in row.iter_mut().zip(grow) {
            *w -= step * g;
        }
    }
    for (b, g) in adapter.bias.iter_mut().zip(&grad.d_bias) {
        *b -= step * g;
    }
}

/// Contrastive loss and adapter gradient on one batch of raw pairs.
fn embedder_batch_grad(
    adapter: &LinearAdapter,
    queries_raw: &[&EmbeddingVector],
    candidates_raw: &[&EmbeddingVector],
    temperature: f64,
) -> Result<(f64, AdapterGrad), TrainError> {
    let q_emb: Vec<EmbeddingVector> = queries_raw
        .iter()
        .map(|v| adapter.apply(v))
        .collect::<Result<_, _>>()?;
    let c_emb: Vec<EmbeddingVector> = candidates_raw
        .iter()
        .map(|v| adapter.apply(v))
        .collect::<Result<_, _>>()?;
    let batch = InfoNceBatch::new(q_emb, c_emb, temperature)?;
    let g = infonce_grad(&batch)?;
    let mut grad = AdapterGrad::zeros(adapter.raw_dim(), adapter.emb_dim());
    for (x, d_out) in queries_raw.iter().zip(&g.wrt_queries) {
        grad.accumulate(x.values(), d_out);
    }
    for (x, d_out) in candidates_raw.iter().zip(&g.wrt_candidates) {
        grad.accumulate(x.values(), d_out);
    }
    Ok((g.loss, grad))
}

/// Splits concept indices into (train, holdout) deterministically: the tail
/// fraction is held out.
fn split_concepts(num_concepts: usize, holdout_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let holdout = ((num_concepts as f64 * holdout_fraction).round() as usize).min(num_concepts);
    let boundary = num_concepts - holdout;
    ((0..boundary).collect(), (boundary..num_concepts).collect())
}

fn world_pairs(
    world: &SyntheticWorld,
    indices: &[usize],
) -> Result<Vec<(EmbeddingVector, EmbeddingVector)>, TrainError> {
    indices
        .iter()
        .map(|&i| Ok(synthetic_pair(world, i)?))
        .collect()
}

/// Retrieval R@1 of adapter-embedded queries against adapter-embedded
/// candidates over the given concept set.
pub fn adapter_recall_at_1(
    adapter: &LinearAdapter,
    world: &SyntheticWorld,
    concepts: &[usize],
) -> Result<f64, TrainError> {
    if concepts.is_empty() {
        return Ok(0.0);
    }
    let pairs = world_pairs(world, concepts)?;
    let queries: Vec<EmbeddingVector> = pairs
        .iter()
        .map(|(q, _)| adapter.apply(q))
        .collect::<Result<_, _>>()?;
    let candidates: Vec<EmbeddingVector> = pairs
        .iter()
        .map(|(_, c)| adapter.apply(c))
        .collect::<Result<_, _>>()?;
    let mut hits = 0usize;
    for (i, q) in queries.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (j, c) in candidates.iter().enumerate() {
            let s = cosine_similarity(q, c)?;
            if s > best.0 {
                best = (s, j);
            }
        }
        if best.1 == i {
            hits += 1;
        }
    }
    Ok(hits as f64 / concepts.len() as f64)
}

fn run_embedder_stage(
    adapter: &mut LinearAdapter,
    world: &SyntheticWorld,
    cfg: &TrainConfig,
    stage: usize,
    epoch_offset: usize,
    history: &mut Vec<EpochStat>,
) -> Result<(), TrainError> {
    let (train_concepts, holdout_concepts) = split_concepts(world.num_concepts, cfg.holdout_fraction);
    if train_concepts.len() < 2 {
        return Err(TrainError::NotEnoughData);
    }
    let pairs = world_pairs(world, &train_concepts)?;

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(
        cfg.seed
            .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(stage as u64)),
    );
    order.shuffle(&mut shuffle_rng);

    for epoch in 1..=cfg.epochs {
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue; // a singleton batch carries no contrastive signal
            }
            let qs: Vec<&EmbeddingVector> = chunk.iter().map(|&i| &pairs[i].0).collect();
            let cs: Vec<&EmbeddingVector> = chunk.iter().map(|&i| &pairs[i].1).collect();
            let (loss, grad) = embedder_batch_grad(adapter, &qs, &cs, cfg.temperature)?;
            if !loss.is_finite() {
                return Err(TrainError::DivergedLoss {
                    epoch: epoch_offset + epoch,
                });
            }
            step_adapter(adapter, &grad, cfg.step_size);
            losses.push(loss);
        }
        let mean_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        let r_at_1 = if holdout_concepts.is_empty() {
            None
        } else {
            Some(adapter_recall_at_1(adapter, world, &holdout_concepts)?)
        };
        history.push(EpochStat {
            epoch: epoch_offset + epoch,
            loss: mean_loss,
            r_at_1,
        });
    }
    Ok(())
}

/// Trains the linear adapter with the contrastive objective on the world's
/// paired views; optionally continues on a second, shifted world starting
/// from the stage-1 weights.
pub fn train_embedder(
    world: &SyntheticWorld,
    cfg: &TrainConfig,
) -> Result<(LinearAdapter, Vec<EpochStat>), TrainError> {
    if cfg.batch_size < 2 {
        return Err(TrainError::BadBatchSize);
    }
    let mut adapter = LinearAdapter::init(cfg.seed, world.raw_dim, cfg.emb_dim);
    let mut history = Vec::new();
    run_embedder_stage(&mut adapter, world, cfg, 1, 0, &mut history)?;
    if let Some(stage2) = &cfg.stage2_world {
        let offset = history.len();
        run_embedder_stage(&mut adapter, stage2, cfg, 2, offset, &mut history)?;
    }
    Ok((adapter, history))
}

/// Provider wrapper that pushes every embedding through a trained adapter,
/// so retrieval pipelines run in the adapter's output space.
pub struct AdaptedProvider<'a> {
    pub inner: &'a dyn crate::provider::EmbeddingProvider,
    pub adapter: &'a LinearAdapter,
}

impl crate::provider::EmbeddingProvider for AdaptedProvider<'_> {
    fn embed(
        &self,
        request: &crate::provider::EmbedRequest,
    ) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.inner
            .embed(request)?
            .iter()
            .map(|v| {
                self.adapter.apply(v).map_err(|e| {
                    ProviderError::MalformedResponse(format!("adapter rejected embedding: {e}"))
                })
            })
            .collect()
    }
}

/// One training example for the scorer head.
#[derive(Debug, Clone)]
pub struct RerankTrainExample {
    pub query: EmbeddingVector,
    pub gt_id: String,
}

struct ScorerGrad {
    d_w: Vec<f64>,
    d_b: f64,
}

impl ScorerGrad {
    fn zeros(len: usize) -> Self {
        Self {
            d_w: vec![0.0; len],
            d_b: 0.0,
        }
    }
}

/// d loss / d (w, b) contribution for one scored pair, given dL/ds.
fn accumulate_score_grad(
    scorer: &ToyScorer,
    grad: &mut ScorerGrad,
    q: &EmbeddingVector,
    c: &EmbeddingVector,
    s: f64,
    dl_ds: f64,
) -> Result<(), TrainError> {
    let qn = l2_normalize(q)?;
    let cn = l2_normalize(c)?;
    let phi = ToyScorer::features(qn.values(), cn.values());
    let dz = dl_ds * s * (1.0 - s);
    for (g, f) in grad.d_w.iter_mut().zip(&phi) {
        *g += dz * f;
    }
    grad.d_b += dz;
    let _ = scorer;
    Ok(())
}

/// Trains the pointwise scorer head with the joint objective. For every
/// example: one random negative for BCE, one mined negative for BCE, and one
/// mined negative for the preference term, all drawn per step.
pub fn train_reranker(
    examples: &[RerankTrainExample],
    candidates: &[(String, EmbeddingVector)],
    index: &DenseIndex,
    miner: &MinerConfig,
    weights: &JointLossWeights,
    cfg: &TrainConfig,
) -> Result<(ToyScorer, Vec<EpochStat>), TrainError> {
    miner.validate()?;
    weights.validate()?;
    if examples.is_empty() || candidates.len() < 2 {
        return Err(TrainError::NotEnoughData);
    }
    let lookup: std::collections::HashMap<&str, &EmbeddingVector> = candidates
        .iter()
        .map(|(id, v)| (id.as_str(), v))
        .collect();
    let candidate_ids: Vec<String> = candidates.iter().map(|(id, _)| id.clone()).collect();

    let emb_dim = candidates[0].1.dim();
    let mut scorer = ToyScorer::zeros(emb_dim);
    let mut history = Vec::new();

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x72657261_u64);
    order.shuffle(&mut shuffle_rng);
    let mut draw_rng = ChaCha8Rng::seed_from_u64(miner.seed);

    for epoch in 1..=cfg.epochs {
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut grad = ScorerGrad::zeros(scorer.w.len());
            let mut batch_loss = 0.0;
            for &i in chunk {
                let ex = &examples[i];
                let gt = lookup
                    .get(ex.gt_id.as_str())
                    .ok_or_else(|| TrainError::MissingCandidate(ex.gt_id.clone()))?;
                let ranked = search(index, &ex.query, miner.k_top)?;

                let mut rands = Vec::new();
                for _ in 0..miner.n_rand.max(1) {
                    rands.push(sample_random_negative(&candidate_ids, &ex.gt_id, &mut draw_rng)?);
                }
                let mut hards_bce = Vec::new();
                for _ in 0..miner.n_hard_bce.max(1) {
                    hards_bce.push(mine_hard_negative(&ranked, &ex.gt_id, miner, &mut draw_rng)?);
                }
                let mut hards_pb = Vec::new();
                for _ in 0..miner.n_hard_pb.max(1) {
                    hards_pb.push(mine_hard_negative(&ranked, &ex.gt_id, miner, &mut draw_rng)?);
                }

                let s_gt = scorer.score(&ex.query, gt)?;
                // BCE terms pair the positive with each of their negatives
                let mut l_rand = bce_loss(s_gt, true);
                let mut dl_dsgt =
                    weights.bce_rand * 0.5 * bce_grad(s_gt, true)
                        + weights.bce_hard * 0.5 * bce_grad(s_gt, true);
                for id in &rands {
                    let c = lookup[id.as_str()];
                    let s = scorer.score(&ex.query, c)?;
                    l_rand += bce_loss(s, false) / rands.len() as f64;
                    let dl_ds = weights.bce_rand * 0.5 * bce_grad(s, false) / rands.len() as f64;
                    accumulate_score_grad(&scorer, &mut grad, &ex.query, c, s, dl_ds)?;
                }
                l_rand *= 0.5;
                let mut l_hard = bce_loss(s_gt, true);
                for id in &hards_bce {
                    let c = lookup[id.as_str()];
                    let s = scorer.score(&ex.query, c)?;
                    l_hard += bce_loss(s, false) / hards_bce.len() as f64;
                    let dl_ds = weights.bce_hard * 0.5 * bce_grad(s, false) / hards_bce.len() as f64;
                    accumulate_score_grad(&scorer, &mut grad, &ex.query, c, s, dl_ds)?;
                }
                l_hard *= 0.5;
                let mut l_pb = 0.0;
                for id in &hards_pb {
                    let c = lookup[id.as_str()];
                    let s = scorer.score(&ex.query, c)?;
                    l_pb += preference_loss(s_gt, s) / hards_pb.len() as f64;
                    let (d_gt, d_neg) = preference_grad(s_gt, s);
                    dl_dsgt += weights.preference * d_gt / hards_pb.len() as f64;
                    let dl_ds = weights.preference * d_neg / hards_pb.len() as f64;
                    accumulate_score_grad(&scorer, &mut grad, &ex.query, c, s, dl_ds)?;
                }
                accumulate_score_grad(&scorer, &mut grad, &ex.query, gt, s_gt, dl_dsgt)?;

                batch_loss += joint_loss(weights, l_rand, l_hard, l_pb);
            }
            let inv = 1.0 / chunk.len() as f64;
            for (w, g) in scorer.w.iter_mut().zip(&grad.d_w) {
                *w -= cfg.step_size * g * inv;
            }
            scorer.b -= cfg.step_size * grad.d_b * inv;
            let loss = batch_loss * inv;
            if !loss.is_finite() {
                return Err(TrainError::DivergedLoss { epoch });
            }
            losses.push(loss);
        }
        history.push(EpochStat {
            epoch,
            loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
            r_at_1: None,
        });
    }
    Ok((scorer, history))
}
