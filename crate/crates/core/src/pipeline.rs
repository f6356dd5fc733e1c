//! Two-stage corpus retrieval: embed → top-K search → dual-softmax
//! re-ordering → pointwise re-ranking.
//!
//! Dual-softmax operates on the whole query batch at once (the column
//! softmax is degenerate for a single query, so ad-hoc single queries skip
//! it). Re-ranking is a pure permutation: the candidate set never changes,
//! only its order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{search_with_id, similarity_matrix, DenseIndex, IndexError};
use crate::matrix::Matrix;
use crate::model::{EmbeddingVector, ModelError, QuerySpec, RankedList};
use crate::provider::remote::{post_json, HttpConfig};
use crate::provider::{EmbedRequest, EmbeddingProvider, ProviderError};
use crate::trainer::{ToyScorer, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("scorer emitted {score} for {id}, outside [0, 1]")]
    ScoreOutOfRange { id: String, score: f64 },
    #[error("candidate {0} has no embedding available to the scorer")]
    UnknownCandidate(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<TrainError> for PipelineError {
    fn from(e: TrainError) -> Self {
        PipelineError::ScorerUnavailable(e.to_string())
    }
}

/// Which scorer backs the re-ranking stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    #[default]
    None,
    Toy,
    Remote,
}

/// Retrieval flow configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k_candidates: usize,
    pub use_dual_softmax: bool,
    /// Softmax sharpness: logits are ds_temperature × similarity.
    pub ds_temperature: f64,
    pub scorer: ScorerKind,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_candidates: 50,
            use_dual_softmax: true,
            ds_temperature: 100.0,
            scorer: ScorerKind::None,
        }
    }
}

/// Elementwise product of the row softmax and column softmax of τ·S.
pub fn dual_softmax(similarities: &Matrix, ds_temperature: f64) -> Matrix {
    let (m, n) = (similarities.rows(), similarities.cols());
    let softmax = |logits: &mut [f64]| {
        let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut total = 0.0;
        for v in logits.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in logits.iter_mut() {
            *v /= total;
        }
    };

    let mut rows = Matrix::zeros(m, n);
    for i in 0..m {
        let mut logits: Vec<f64> = similarities.row(i).iter().map(|s| s * ds_temperature).collect();
        softmax(&mut logits);
        for (j, v) in logits.into_iter().enumerate() {
            rows.set(i, j, v);
        }
    }
    let mut out = Matrix::zeros(m, n);
    for j in 0..n {
        let mut logits: Vec<f64> = (0..m)
            .map(|i| similarities.get(i, j) * ds_temperature)
            .collect();
        softmax(&mut logits);
        for (i, v) in logits.into_iter().enumerate() {
            out.set(i, j, rows.get(i, j) * v);
        }
    }
    out
}

/// Scores candidate ids for one query; every score must land in [0, 1].
/// Scoring may fan out concurrently, so implementations are thread-safe.
pub trait CandidateScorer: Send + Sync {
    fn score_candidates(
        &self,
        query: &QuerySpec,
        candidate_ids: &[String],
    ) -> Result<Vec<f64>, PipelineError>;
}

/// Reorders a candidate list by scorer confidence. The id multiset is
/// preserved; the original similarity scores are discarded.
pub fn rerank(
    candidates: &RankedList,
    query: &QuerySpec,
    scorer: &dyn CandidateScorer,
) -> Result<RankedList, PipelineError> {
    let ids: Vec<String> = candidates.ids().map(str::to_string).collect();
    let scores = scorer.score_candidates(query, &ids)?;
    if scores.len() != ids.len() {
        return Err(PipelineError::ScorerUnavailable(format!(
            "scorer returned {} scores for {} candidates",
            scores.len(),
            ids.len()
        )));
    }
    for (id, &s) in ids.iter().zip(&scores) {
        if !s.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&s) {
            return Err(PipelineError::ScoreOutOfRange {
                id: id.clone(),
                score: s,
            });
        }
    }
    Ok(RankedList::from_scores(
        candidates.query_id.clone(),
        ids.into_iter().zip(scores).collect(),
    )
    .expect("rerank preserves distinct ids"))
}

/// Single-query retrieval: embed, then exact top-K search. Dual-softmax
/// needs a query batch, so it does not apply here; a configured scorer is
/// applied by the caller via [`rerank`] or [`retrieve_batch`].
pub fn retrieve(
    index: &DenseIndex,
    query_id: &str,
    query: &QuerySpec,
    provider: &dyn EmbeddingProvider,
    cfg: &PipelineConfig,
) -> Result<RankedList, PipelineError> {
    let embedding = embed_query(provider, query)?;
    Ok(search_with_id(index, query_id, &embedding, cfg.k_candidates)?)
}

fn embed_query(
    provider: &dyn EmbeddingProvider,
    query: &QuerySpec,
) -> Result<EmbeddingVector, PipelineError> {
    Ok(crate::provider::embed_one(provider, query)?)
}

/// Batch retrieval with optional dual-softmax re-ordering over the batch ×
/// candidate-union grid, then optional re-ranking.
pub fn retrieve_batch(
    index: &DenseIndex,
    queries: &[(String, QuerySpec)],
    provider: &dyn EmbeddingProvider,
    cfg: &PipelineConfig,
    scorer: Option<&dyn CandidateScorer>,
) -> Result<Vec<RankedList>, PipelineError> {
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let embeddings: Vec<EmbeddingVector> = {
        // group by prompt kind implicitly: specs carry their own kind and the
        // provider picks the prompt per request, so embed one by one unless
        // all kinds match
        let specs: Vec<QuerySpec> = queries.iter().map(|(_, s)| s.clone()).collect();
        let uniform_kind = specs.windows(2).all(|w| w[0].kind == w[1].kind);
        if uniform_kind {
            let request = EmbedRequest::new(
                specs.clone(),
                crate::provider::prompts::default_for(specs[0].kind),
            );
            provider.embed(&request)?
        } else {
            specs
                .iter()
                .map(|s| embed_query(provider, s))
                .collect::<Result<_, _>>()?
        }
    };

    let mut lists = Vec::with_capacity(queries.len());
    for ((query_id, _), embedding) in queries.iter().zip(&embeddings) {
        lists.push(search_with_id(index, query_id, embedding, cfg.k_candidates)?);
    }

    if cfg.use_dual_softmax && queries.len() >= 2 {
        lists = reorder_by_dual_softmax(index, &embeddings, &lists, cfg.ds_temperature)?;
    }

    if let Some(scorer) = scorer {
        let mut reranked = Vec::with_capacity(lists.len());
        for (list, (_, spec)) in lists.iter().zip(queries) {
            reranked.push(rerank(list, spec, scorer)?);
        }
        lists = reranked;
    }
    Ok(lists)
}

/// Rescores each query's candidates by its dual-softmax row over the union
/// of all candidates in the batch.
fn reorder_by_dual_softmax(
    index: &DenseIndex,
    embeddings: &[EmbeddingVector],
    lists: &[RankedList],
    ds_temperature: f64,
) -> Result<Vec<RankedList>, PipelineError> {
    let mut union: Vec<&str> = lists.iter().flat_map(|l| l.ids()).collect();
    union.sort_unstable();
    union.dedup();
    let positions: Vec<usize> = union
        .iter()
        .map(|id| index.position_of(id).expect("candidate ids come from the index"))
        .collect();
    let column_of: HashMap<&str, usize> =
        union.iter().enumerate().map(|(j, id)| (*id, j)).collect();

    // similarity grid restricted to the union, in sorted-id column order
    let mut grid = Matrix::zeros(embeddings.len(), union.len());
    let full = similarity_matrix(embeddings, index)?;
    for i in 0..embeddings.len() {
        for (j, &pos) in positions.iter().enumerate() {
            grid.set(i, j, full.get(i, pos));
        }
    }
    let weights = dual_softmax(&grid, ds_temperature);

    lists
        .iter()
        .enumerate()
        .map(|(i, list)| {
            let rescored: Vec<(String, f64)> = list
                .ids()
                .map(|id| (id.to_string(), weights.get(i, column_of[id])))
                .collect();
            Ok(RankedList::from_scores(list.query_id.clone(), rescored)
                .expect("reordering preserves distinct ids"))
        })
        .collect()
}

/// Scorer backed by a [`ToyScorer`] head over provider embeddings.
pub struct ToyCandidateScorer<'a> {
    pub scorer: &'a ToyScorer,
    pub provider: &'a dyn EmbeddingProvider,
    pub candidate_embeddings: &'a HashMap<String, EmbeddingVector>,
    /// Optional adapter applied to both query and candidate embeddings.
    pub adapter: Option<&'a crate::trainer::LinearAdapter>,
}

impl CandidateScorer for ToyCandidateScorer<'_> {
    fn score_candidates(
        &self,
        query: &QuerySpec,
        candidate_ids: &[String],
    ) -> Result<Vec<f64>, PipelineError> {
        let mut q = embed_query(self.provider, query)?;
        if let Some(adapter) = self.adapter {
            q = adapter.apply(&q)?;
        }
        candidate_ids
            .iter()
            .map(|id| {
                let raw = self
                    .candidate_embeddings
                    .get(id)
                    .ok_or_else(|| PipelineError::UnknownCandidate(id.clone()))?;
                let c = match self.adapter {
                    Some(adapter) => adapter.apply(raw)?,
                    None => raw.clone(),
                };
                Ok(self.scorer.score(&q, &c)?)
            })
            .collect()
    }
}

#[derive(Serialize)]
struct ScorePair<'a> {
    query_text: &'a str,
    item_id: &'a str,
}

#[derive(Serialize)]
struct ScoreBody<'a> {
    pairs: Vec<ScorePair<'a>>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// Scorer backed by a remote HTTP service:
/// `POST {endpoint}/v1/score {"pairs":[{"query_text","item_id"}]}` →
/// `{"scores":[float]}`.
pub struct RemoteScorer {
    endpoint: String,
    http: HttpConfig,
}

impl RemoteScorer {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self::with_config(endpoint, HttpConfig::default())
    }

    pub fn with_config(endpoint: impl Into<String>, http: HttpConfig) -> Self {
        let mut endpoint = endpoint.into();
        while endpoint.ends_with('/') {
            endpoint.pop();
        }
        Self { endpoint, http }
    }
}

impl CandidateScorer for RemoteScorer {
    fn score_candidates(
        &self,
        query: &QuerySpec,
        candidate_ids: &[String],
    ) -> Result<Vec<f64>, PipelineError> {
        let query_text = query.text.as_deref().ok_or_else(|| {
            PipelineError::ScorerUnavailable("remote scorer requires a text query".into())
        })?;
        let body = ScoreBody {
            pairs: candidate_ids
                .iter()
                .map(|id| ScorePair {
                    query_text,
                    item_id: id,
                })
                .collect(),
        };
        let url = format!("{}/v1/score", self.endpoint);
        let resp: ScoreResponse =
            post_json(&self.http, &url, &body).map_err(|e| match ProviderError::from(e) {
                ProviderError::Unavailable(m) => PipelineError::ScorerUnavailable(m),
                other => PipelineError::Provider(other),
            })?;
        if resp.scores.len() != candidate_ids.len() {
            return Err(PipelineError::ScorerUnavailable(format!(
                "service returned {} scores for {} pairs",
                resp.scores.len(),
                candidate_ids.len()
            )));
        }
        Ok(resp.scores)
    }
}
