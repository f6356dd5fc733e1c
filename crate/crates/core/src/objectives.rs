//! Loss kernels with analytical gradients, and negative-sampling strategies.
//!
//! Three losses drive training: a softmax contrastive objective over in-batch
//! negatives, binary cross-entropy on pointwise match scores, and a pairwise
//! preference loss on (ground truth, negative) score pairs. Gradients are
//! closed-form and are checked against central finite differences in the
//! acceptance suite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::model::{EmbeddingVector, ModelError, RankedList};

/// Clamp for BCE probabilities, keeping log() finite.
pub const BCE_EPSILON: f64 = 1e-7;
/// Default softmax temperature for toy training.
pub const DEFAULT_TEMPERATURE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("temperature must be > 0")]
    NonPositiveTemperature,
    #[error("zero vector in batch at position {0}")]
    ZeroVector(usize),
    #[error("queries and candidates must be equal-length, non-empty lists")]
    BadBatchShape,
    #[error("no valid negative exists in the configured rank range")]
    NoValidNegative,
    #[error("corpus must contain at least 2 ids to sample a negative")]
    CorpusTooSmall,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A contrastive batch: queries paired by position with candidates.
#[derive(Debug, Clone)]
pub struct InfoNceBatch {
    pub queries: Vec<EmbeddingVector>,
    pub candidates: Vec<EmbeddingVector>,
    pub temperature: f64,
}

impl InfoNceBatch {
    pub fn new(
        queries: Vec<EmbeddingVector>,
        candidates: Vec<EmbeddingVector>,
        temperature: f64,
    ) -> Result<Self, ObjectiveError> {
        if temperature <= 0.0 {
            return Err(ObjectiveError::NonPositiveTemperature);
        }
        if queries.is_empty() || queries.len() != candidates.len() {
            return Err(ObjectiveError::BadBatchShape);
        }
        Ok(Self {
            queries,
            candidates,
            temperature,
        })
    }

    fn len(&self) -> usize {
        self.queries.len()
    }
}

fn norm(v: &EmbeddingVector) -> f64 {
    v.values().iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[allow(clippy::needless_range_loop)] // the i, j loops mirror the grid math
fn cosine_grid(batch: &InfoNceBatch) -> Result<(Matrix, Vec<f64>, Vec<f64>), ObjectiveError> {
    let n = batch.len();
    let q_norms: Vec<f64> = batch.queries.iter().map(norm).collect();
    let c_norms: Vec<f64> = batch.candidates.iter().map(norm).collect();
    for norms in [&q_norms, &c_norms] {
        if let Some(i) = norms.iter().position(|&x| x == 0.0) {
            return Err(ObjectiveError::ZeroVector(i));
        }
    }
    let mut sims = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = batch.queries[i]
                .values()
                .iter()
                .zip(batch.candidates[j].values())
                .map(|(a, b)| a * b)
                .sum();
            sims.set(i, j, dot / (q_norms[i] * c_norms[j]));
        }
    }
    Ok((sims, q_norms, c_norms))
}

/// Row softmax probabilities of sims/τ, with max subtraction.
fn softmax_rows(sims: &Matrix, temperature: f64) -> Matrix {
    let n = sims.rows();
    let mut probs = Matrix::zeros(n, sims.cols());
    for i in 0..n {
        let row = sims.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / temperature));
        let exps: Vec<f64> = row.iter().map(|&s| (s / temperature - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (j, e) in exps.iter().enumerate() {
            probs.set(i, j, e / total);
        }
    }
    probs
}

/// Mean in-batch softmax contrastive loss over cosine similarities.
pub fn infonce_loss(batch: &InfoNceBatch) -> Result<f64, ObjectiveError> {
    let (sims, _, _) = cosine_grid(batch)?;
    let n = batch.len();
    let tau = batch.temperature;
    let mut total = 0.0;
    for i in 0..n {
        let row = sims.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / tau));
        let lse = max
            + row
                .iter()
                .map(|&s| (s / tau - max).exp())
                .sum::<f64>()
                .ln();
        total += lse - sims.get(i, i) / tau;
    }
    Ok(total / n as f64)
}

/// Gradient of the contrastive loss with respect to the similarity grid.
/// Invariant to rescaling any input vector by a positive factor.
pub fn infonce_similarity_grad(batch: &InfoNceBatch) -> Result<Matrix, ObjectiveError> {
    let (sims, _, _) = cosine_grid(batch)?;
    let probs = softmax_rows(&sims, batch.temperature);
    let n = batch.len();
    let scale = 1.0 / (n as f64 * batch.temperature);
    let mut grad = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            grad.set(i, j, (probs.get(i, j) - delta) * scale);
        }
    }
    Ok(grad)
}

/// Loss plus gradients with respect to every query and candidate vector.
#[derive(Debug, Clone)]
pub struct InfoNceGrad {
    pub loss: f64,
    pub wrt_queries: Vec<Vec<f64>>,
    pub wrt_candidates: Vec<Vec<f64>>,
}

/// Analytical gradient of [`infonce_loss`] w.r.t. the raw input vectors.
pub fn infonce_grad(batch: &InfoNceBatch) -> Result<InfoNceGrad, ObjectiveError> {
    let (sims, q_norms, c_norms) = cosine_grid(batch)?;
    let probs = softmax_rows(&sims, batch.temperature);
    let n = batch.len();
    let dim = batch.queries[0].dim();
    let scale = 1.0 / (n as f64 * batch.temperature);

    let mut wrt_queries = vec![vec![0.0; dim]; n];
    let mut wrt_candidates = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            let g = (probs.get(i, j) - delta) * scale;
            if g == 0.0 {
                continue;
            }
            let s = sims.get(i, j);
            // d cos(q_i, c_j) / d q_i = (ĉ_j − s·q̂_i) / ‖q_i‖, symmetric in c_j
            for d in 0..dim {
                let q_hat = batch.queries[i].values()[d] / q_norms[i];
                let c_hat = batch.candidates[j].values()[d] / c_norms[j];
                wrt_queries[i][d] += g * (c_hat - s * q_hat) / q_norms[i];
                wrt_candidates[j][d] += g * (q_hat - s * c_hat) / c_norms[j];
            }
        }
    }

    Ok(InfoNceGrad {
        loss: infonce_loss(batch)?,
        wrt_queries,
        wrt_candidates,
    })
}

/// Binary cross-entropy on a probability score, clamped at [`BCE_EPSILON`].
pub fn bce_loss(score: f64, label: bool) -> f64 {
    let s = score.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    if label {
        -s.ln()
    } else {
        -(1.0 - s).ln()
    }
}

/// d bce / d score, zero outside the clamp region.
pub fn bce_grad(score: f64, label: bool) -> f64 {
    if score <= BCE_EPSILON || score >= 1.0 - BCE_EPSILON {
        return 0.0;
    }
    let y = if label { 1.0 } else { 0.0 };
    (score - y) / (score * (1.0 - score))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pairwise preference loss −log σ(score_gt − score_neg); minimized when the
/// ground truth outranks the negative.
pub fn preference_loss(score_gt: f64, score_neg: f64) -> f64 {
    let p = sigmoid(score_gt - score_neg);
    -p.max(f64::MIN_POSITIVE).ln()
}

/// Gradients of [`preference_loss`] w.r.t. (score_gt, score_neg).
pub fn preference_grad(score_gt: f64, score_neg: f64) -> (f64, f64) {
    let p = sigmoid(score_gt - score_neg);
    (p - 1.0, 1.0 - p)
}

/// Weights λ₁, λ₂, λ₃ of the joint re-ranking objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLossWeights {
    pub bce_rand: f64,
    pub bce_hard: f64,
    pub preference: f64,
}

impl Default for JointLossWeights {
    fn default() -> Self {
        Self {
            bce_rand: 0.5,
            bce_hard: 0.2,
            preference: 0.3,
        }
    }
}

impl JointLossWeights {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let ws = [self.bce_rand, self.bce_hard, self.preference];
        if ws.iter().any(|w| *w < 0.0 || !w.is_finite()) || ws.iter().all(|w| *w == 0.0) {
            return Err(ObjectiveError::BadBatchShape);
        }
        Ok(())
    }
}

/// Weighted sum of the three component losses.
pub fn joint_loss(weights: &JointLossWeights, bce_rand: f64, bce_hard: f64, preference: f64) -> f64 {
    weights.bce_rand * bce_rand + weights.bce_hard * bce_hard + weights.preference * preference
}

/// Negative-mining configuration. Ranks are 1-indexed and inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinerConfig {
    pub k_top: usize,
    pub low_rank: usize,
    pub high_rank: usize,
    pub n_rand: usize,
    pub n_hard_bce: usize,
    pub n_hard_pb: usize,
    pub seed: u64,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self {
            k_top: 50,
            low_rank: 5,
            high_rank: 50,
            n_rand: 1,
            n_hard_bce: 1,
            n_hard_pb: 1,
            seed: 0,
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.low_rank < 1 || self.low_rank > self.high_rank || self.high_rank > self.k_top {
            return Err(ObjectiveError::BadBatchShape);
        }
        Ok(())
    }
}

/// Draws a hard negative uniformly from rank positions [low_rank, high_rank]
/// of a ranked list, resampling while the draw hits the ground truth.
pub fn mine_hard_negative(
    ranked: &RankedList,
    gt_id: &str,
    cfg: &MinerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<String, ObjectiveError> {
    cfg.validate()?;
    if ranked.is_empty() {
        return Err(ObjectiveError::NoValidNegative);
    }
    let high = cfg.high_rank.min(ranked.len());
    let low = cfg.low_rank.min(high);
    let has_valid = ranked.entries[low - 1..high].iter().any(|e| e.id != gt_id);
    if !has_valid {
        return Err(ObjectiveError::NoValidNegative);
    }
    loop {
        let rank = rng.gen_range(low..=high);
        let candidate = &ranked.entries[rank - 1].id;
        if candidate != gt_id {
            return Ok(candidate.clone());
        }
    }
}

/// Uniform draw over corpus ids excluding the ground truth.
pub fn sample_random_negative(
    corpus_ids: &[String],
    gt_id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<String, ObjectiveError> {
    let gt_pos = corpus_ids.iter().position(|id| id == gt_id);
    let pool = corpus_ids.len() - usize::from(gt_pos.is_some());
    if pool < 1 || corpus_ids.len() < 2 {
        return Err(ObjectiveError::CorpusTooSmall);
    }
    let mut draw = rng.gen_range(0..pool);
    if let Some(p) = gt_pos {
        if draw >= p {
            draw += 1;
        }
    }
    Ok(corpus_ids[draw].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn ev(values: Vec<f64>) -> EmbeddingVector {
        EmbeddingVector::new(values).unwrap()
    }

    fn random_batch(seed: u64, n: usize, dim: usize, tau: f64) -> InfoNceBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |_: usize| -> EmbeddingVector {
            ev((0..dim).map(|_| rng.gen_range(-1.0f64..1.0)).collect())
        };
        InfoNceBatch::new(
            (0..n).map(&mut draw).collect(),
            (0..n).map(&mut draw).collect(),
            tau,
        )
        .unwrap()
    }

    /// Central finite differences of infonce_loss w.r.t. every coordinate.
    fn finite_diff_grads(batch: &InfoNceBatch, h: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = batch.queries.len();
        let dim = batch.queries[0].dim();
        let mut dq = vec![vec![0.0; dim]; n];
        let mut dc = vec![vec![0.0; dim]; n];
        let eval = |queries: &[EmbeddingVector], candidates: &[EmbeddingVector]| -> f64 {
            let b = InfoNceBatch::new(queries.to_vec(), candidates.to_vec(), batch.temperature)
                .unwrap();
            infonce_loss(&b).unwrap()
        };
        for i in 0..n {
            for d in 0..dim {
                for (store, vectors) in [(&mut dq, &batch.queries), (&mut dc, &batch.candidates)] {
                    let mut plus = vectors.to_vec();
                    let mut minus = vectors.to_vec();
                    let mut vp = plus[i].values().to_vec();
                    let mut vm = minus[i].values().to_vec();
                    vp[d] += h;
                    vm[d] -= h;
                    plus[i] = ev(vp);
                    minus[i] = ev(vm);
                    let (lp, lm) = if std::ptr::eq(vectors, &batch.queries) {
                        (eval(&plus, &batch.candidates), eval(&minus, &batch.candidates))
                    } else {
                        (eval(&batch.queries, &plus), eval(&batch.queries, &minus))
                    };
                    store[i][d] = (lp - lm) / (2.0 * h);
                }
            }
        }
        (dq, dc)
    }

    fn max_rel_err(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for (ra, rb) in a.iter().zip(b) {
            for (x, y) in ra.iter().zip(rb) {
                let denom = x.abs().max(y.abs()).max(1e-8);
                worst = worst.max((x - y).abs() / denom);
            }
        }
        worst
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let b = InfoNceBatch::new(vec![ev(vec![1.0, 2.0])], vec![ev(vec![0.5, 1.0])], 0.1).unwrap();
        assert_eq!(infonce_loss(&b).unwrap(), 0.0);
        let g = infonce_grad(&b).unwrap();
        assert!(g.wrt_queries[0].iter().all(|&x| x == 0.0));
        assert!(g.wrt_candidates[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn orthogonal_two_pair_batch() {
        // per-row loss −log(e / (e + 1)) = ln(1 + 1/e)
        let b = InfoNceBatch::new(
            vec![ev(vec![1.0, 0.0]), ev(vec![0.0, 1.0])],
            vec![ev(vec![1.0, 0.0]), ev(vec![0.0, 1.0])],
            1.0,
        )
        .unwrap();
        let want = (1.0 + (-1.0f64).exp()).ln();
        assert!((infonce_loss(&b).unwrap() - want).abs() < 1e-9);
        assert!((want - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn all_identical_batch_gives_ln_n() {
        for n in [2usize, 4, 7] {
            let v = ev(vec![0.3, -0.7, 0.2]);
            let b = InfoNceBatch::new(vec![v.clone(); n], vec![v.clone(); n], 0.37).unwrap();
            let got = infonce_loss(&b).unwrap();
            assert!(
                (got - (n as f64).ln()).abs() < 1e-9,
                "n={n}: {got} vs {}",
                (n as f64).ln()
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let b = random_batch(11, 4, 8, 0.2);
        let g = infonce_grad(&b).unwrap();
        let (dq, dc) = finite_diff_grads(&b, 1e-5);
        assert!(max_rel_err(&g.wrt_queries, &dq) <= 1e-5);
        assert!(max_rel_err(&g.wrt_candidates, &dc) <= 1e-5);
    }

    #[test]
    fn scaling_preserves_loss_and_similarity_grad() {
        let b = random_batch(4, 3, 5, 0.5);
        let scaled = InfoNceBatch::new(
            b.queries
                .iter()
                .map(|v| ev(v.values().iter().map(|x| x * 2.0).collect()))
                .collect(),
            b.candidates
                .iter()
                .map(|v| ev(v.values().iter().map(|x| x * 2.0).collect()))
                .collect(),
            0.5,
        )
        .unwrap();
        assert!((infonce_loss(&b).unwrap() - infonce_loss(&scaled).unwrap()).abs() < 1e-12);
        let ga = infonce_similarity_grad(&b).unwrap();
        let gb = infonce_similarity_grad(&scaled).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((ga.get(i, j) - gb.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(0.5, true) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(0.5, false) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(1.0 - BCE_EPSILON, true) <= 1.2e-7);
        let want = -BCE_EPSILON.ln();
        assert!((bce_loss(1.0 - BCE_EPSILON, false) - want).abs() < 1e-6);
        assert!((want - 16.118).abs() < 1e-3);
    }

    #[test]
    fn bce_grad_matches_finite_differences() {
        for &(s, y) in &[(0.3, true), (0.3, false), (0.9, true), (0.01, false)] {
            let h = 1e-6;
            let fd = (bce_loss(s + h, y) - bce_loss(s - h, y)) / (2.0 * h);
            let g = bce_grad(s, y);
            assert!((fd - g).abs() / g.abs().max(1.0) < 1e-5, "s={s} y={y}");
        }
    }

    #[test]
    fn preference_values() {
        assert!((preference_loss(0.4, 0.4) - std::f64::consts::LN_2).abs() < 1e-12);
        let want_right = (1.0 + (-1.0f64).exp()).ln(); // −log σ(1)
        assert!((preference_loss(1.0, 0.0) - want_right).abs() < 1e-12);
        let want_wrong = (1.0 + 1.0f64.exp()).ln(); // −log σ(−1)
        assert!((preference_loss(0.0, 1.0) - want_wrong).abs() < 1e-12);
        assert!(want_wrong > std::f64::consts::LN_2);
    }

    #[test]
    fn preference_grad_matches_finite_differences() {
        let h = 1e-6;
        for &(a, b) in &[(0.2, 0.8), (0.9, 0.1), (0.5, 0.5)] {
            let (ga, gb) = preference_grad(a, b);
            let fa = (preference_loss(a + h, b) - preference_loss(a - h, b)) / (2.0 * h);
            let fb = (preference_loss(a, b + h) - preference_loss(a, b - h)) / (2.0 * h);
            assert!((ga - fa).abs() < 1e-6);
            assert!((gb - fb).abs() < 1e-6);
        }
    }

    #[test]
    fn joint_loss_masking_and_defaults() {
        let mask = JointLossWeights {
            bce_rand: 1.0,
            bce_hard: 0.0,
            preference: 0.0,
        };
        assert_eq!(joint_loss(&mask, 0.7, 9.0, 9.0), 0.7);
        let d = JointLossWeights::default();
        let ln2 = std::f64::consts::LN_2;
        assert!((joint_loss(&d, ln2, ln2, ln2) - ln2).abs() < 1e-12);
        assert_eq!(joint_loss(&d, 0.0, 0.0, 0.0), 0.0);
    }

    fn ranked_of(n: usize) -> RankedList {
        RankedList::from_scores(
            "q",
            (0..n)
                .map(|i| (format!("cand-{i:03}"), 1.0 - i as f64 * 0.01))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn mined_rank_stays_in_range() {
        let ranked = ranked_of(50);
        let cfg = MinerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = ranked.entries[0].id.clone();
        for _ in 0..500 {
            let id = mine_hard_negative(&ranked, &gt, &cfg, &mut rng).unwrap();
            let rank = ranked.rank_of(&id).unwrap();
            assert!((5..=50).contains(&rank));
            assert_ne!(id, gt);
        }
    }

    #[test]
    fn singleton_range_is_deterministic() {
        let ranked = ranked_of(10);
        let cfg = MinerConfig {
            k_top: 10,
            low_rank: 5,
            high_rank: 5,
            ..MinerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = ranked.entries[6].id.clone(); // rank 7, outside range
        for _ in 0..10 {
            let id = mine_hard_negative(&ranked, &gt, &cfg, &mut rng).unwrap();
            assert_eq!(ranked.rank_of(&id), Some(5));
        }
    }

    #[test]
    fn degenerate_range_with_gt_errors() {
        let ranked = ranked_of(5);
        let cfg = MinerConfig {
            k_top: 5,
            low_rank: 3,
            high_rank: 3,
            ..MinerConfig::default()
        };
        let gt = ranked.entries[2].id.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            mine_hard_negative(&ranked, &gt, &cfg, &mut rng),
            Err(ObjectiveError::NoValidNegative)
        ));
    }

    #[test]
    fn short_list_shrinks_range() {
        let ranked = ranked_of(3);
        let cfg = MinerConfig::default(); // [5, 50] vs 3 entries
        let gt = "not-present".to_string();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let id = mine_hard_negative(&ranked, &gt, &cfg, &mut rng).unwrap();
            assert_eq!(ranked.rank_of(&id), Some(3));
        }
    }

    #[test]
    fn mined_ranks_are_uniform_chi_squared() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let ranked = ranked_of(60);
        let cfg = MinerConfig::default();
        let gt = ranked.entries[0].id.clone(); // rank 1, outside [5, 50]
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut counts = vec![0usize; 46];
        for _ in 0..10_000 {
            let id = mine_hard_negative(&ranked, &gt, &cfg, &mut rng).unwrap();
            counts[ranked.rank_of(&id).unwrap() - 5] += 1;
        }
        let expected = 10_000.0 / 46.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let p = 1.0 - ChiSquared::new(45.0).unwrap().cdf(stat);
        assert!(p > 0.01, "chi² = {stat}, p = {p}");
    }

    #[test]
    fn random_negative_two_ids() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(sample_random_negative(&ids, "a", &mut rng).unwrap(), "b");
        }
    }

    #[test]
    fn random_negative_uniform_chi_squared() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let ids: Vec<String> = (0..100).map(|i| format!("id-{i:03}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..10_000 {
            let id = sample_random_negative(&ids, "id-000", &mut rng).unwrap();
            assert_ne!(id, "id-000");
            *counts.entry(id).or_insert(0usize) += 1;
        }
        let expected = 10_000.0 / 99.0;
        let stat: f64 = ids[1..]
            .iter()
            .map(|id| {
                let c = *counts.get(id).unwrap_or(&0) as f64;
                (c - expected) * (c - expected) / expected
            })
            .sum();
        let p = 1.0 - ChiSquared::new(98.0).unwrap().cdf(stat);
        assert!(p > 0.01, "chi² = {stat}, p = {p}");
    }

    #[test]
    fn random_negative_corpus_too_small() {
        let ids = vec!["a".to_string()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_random_negative(&ids, "a", &mut rng),
            Err(ObjectiveError::CorpusTooSmall)
        ));
    }

    proptest! {
        #[test]
        fn infonce_nonnegative_and_scale_invariant(seed in 0u64..200) {
            let b = random_batch(seed, 3, 4, 0.3);
            let loss = infonce_loss(&b).unwrap();
            prop_assert!(loss >= 0.0);
            let s = 1.0 + (seed % 7) as f64;
            let scaled = InfoNceBatch::new(
                b.queries.iter().map(|v| ev(v.values().iter().map(|x| x * s).collect())).collect(),
                b.candidates.clone(),
                0.3,
            ).unwrap();
            prop_assert!((infonce_loss(&scaled).unwrap() - loss).abs() < 1e-9);
        }

        #[test]
        fn preference_convexity_bound(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let sum = preference_loss(a, b) + preference_loss(b, a);
            prop_assert!(sum >= 2.0 * std::f64::consts::LN_2 - 1e-12);
            if (a - b).abs() > 1e-6 {
                prop_assert!(sum > 2.0 * std::f64::consts::LN_2);
            }
        }

        #[test]
        fn joint_loss_linear_in_components(
            w1 in 0.0f64..2.0, w2 in 0.0f64..2.0, w3 in 0.0f64..2.0,
            l1 in 0.0f64..5.0, l2 in 0.0f64..5.0, l3 in 0.0f64..5.0,
            scale in 0.1f64..4.0,
        ) {
            let w = JointLossWeights { bce_rand: w1, bce_hard: w2, preference: w3 };
            let base = joint_loss(&w, l1, l2, l3);
            let scaled_first = joint_loss(&w, scale * l1, l2, l3);
            prop_assert!((scaled_first - base - w1 * (scale - 1.0) * l1).abs() < 1e-9);
        }

        #[test]
        fn miner_respects_range_and_gt(
            n in 6usize..60,
            gt_rank in 1usize..60,
            seed in 0u64..100,
        ) {
            let gt_rank = gt_rank.min(n);
            let ranked = ranked_of(n);
            let gt = ranked.entries[gt_rank - 1].id.clone();
            let cfg = MinerConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match mine_hard_negative(&ranked, &gt, &cfg, &mut rng) {
                Ok(id) => {
                    let rank = ranked.rank_of(&id).unwrap();
                    let high = cfg.high_rank.min(n);
                    let low = cfg.low_rank.min(high);
                    prop_assert!(rank >= low && rank <= high);
                    prop_assert!(id != gt);
                }
                Err(ObjectiveError::NoValidNegative) => {
                    let high = cfg.high_rank.min(n);
                    let low = cfg.low_rank.min(high);
                    prop_assert!(low == high && gt_rank == low);
                }
                Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
            }
        }
    }
}
