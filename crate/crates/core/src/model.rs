//! Shared domain types and the numeric primitives built on them.
//!
//! Everything here is an immutable value type. Vector math is carried out in
//! f64 regardless of how vectors are stored on disk (f32, see the store
//! format); widening f32 to f64 is exact, so the on-disk representation never
//! changes a computed similarity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for the `normalized` flag invariant: |‖v‖ − 1| ≤ 1e-6.
pub const NORM_FLAG_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vector contains a non-finite value")]
    NonFiniteValue,
    #[error("vector must have at least one component")]
    EmptyVector,
    #[error("vector flagged normalized but ‖v‖ = {norm}")]
    NotNormalized { norm: f64 },
    #[error("duplicate item id: {0}")]
    DuplicateId(String),
    #[error("ranked list score is not finite")]
    NonFiniteScore,
    #[error("invalid moment window: end must exceed start and start must be ≥ 0")]
    InvalidWindow,
    #[error("query spec is missing required field: {0}")]
    IncompleteSpec(&'static str),
}

/// A fixed-dimension real vector, the universal currency of the engine.
///
/// Values live in f64 in memory; the `normalized` flag records that the
/// vector is unit-norm (within [`NORM_FLAG_TOLERANCE`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    normalized: bool,
}

impl EmbeddingVector {
    /// Builds a raw (unnormalized-flag) vector, validating finiteness.
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        Self::with_flag(values, false)
    }

    /// Builds a vector with an explicit `normalized` flag, validating the
    /// norm invariant when the flag is set.
    pub fn with_flag(values: Vec<f64>, normalized: bool) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::EmptyVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteValue);
        }
        if normalized {
            let norm = l2_norm(&values);
            if (norm - 1.0).abs() > NORM_FLAG_TOLERANCE {
                return Err(ModelError::NotNormalized { norm });
            }
        }
        Ok(Self { values, normalized })
    }

    /// Widens f32 storage values into an in-memory vector (exact).
    pub fn from_f32(values: &[f32], normalized: bool) -> Result<Self, ModelError> {
        Self::with_flag(values.iter().map(|&v| f64::from(v)).collect(), normalized)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Narrows to f32 for storage. Lossy for values that did not originate
    /// from f32.
    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }

    /// Rounds every component through f32, so a later store round-trip is
    /// exact. Drops the `normalized` flag if rounding broke the invariant.
    pub fn quantized(&self) -> Self {
        let values: Vec<f64> = self.values.iter().map(|&v| f64::from(v as f32)).collect();
        let normalized = self.normalized && (l2_norm(&values) - 1.0).abs() <= NORM_FLAG_TOLERANCE;
        Self { values, normalized }
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cosine similarity of two same-dimension vectors.
///
/// When both carry the `normalized` flag this is exactly the dot product.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, ModelError> {
    if a.dim() != b.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(b.values.iter())
        .map(|(x, y)| x * y)
        .sum();
    if a.normalized && b.normalized {
        return Ok(dot);
    }
    let na = l2_norm(&a.values);
    let nb = l2_norm(&b.values);
    if na == 0.0 || nb == 0.0 {
        return Err(ModelError::ZeroVector);
    }
    Ok(dot / (na * nb))
}

/// Scales a vector to unit L2 norm and sets its `normalized` flag.
pub fn l2_normalize(a: &EmbeddingVector) -> Result<EmbeddingVector, ModelError> {
    let norm = l2_norm(&a.values);
    if norm == 0.0 {
        return Err(ModelError::ZeroVector);
    }
    Ok(EmbeddingVector {
        values: a.values.iter().map(|v| v / norm).collect(),
        normalized: true,
    })
}

/// What an item in a corpus represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Video,
    Text,
    Frame,
}

/// An identified entity in a corpus, bound to its embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub id: String,
    pub kind: ItemKind,
    pub embedding: EmbeddingVector,
}

impl CorpusItem {
    pub fn new(id: impl Into<String>, kind: ItemKind, embedding: EmbeddingVector) -> Self {
        Self {
            id: id.into(),
            kind,
            embedding,
        }
    }
}

/// The modality of a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Text,
    Video,
    Composed,
}

/// A query to embed: plain text, a video given as ordered frame references,
/// or a composed (source video + modification text) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub kind: QueryKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_refs: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modification: Option<String>,
}

impl QuerySpec {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            kind: QueryKind::Text,
            text: Some(text.into()),
            frame_refs: None,
            modification: None,
        }
    }

    pub fn video(frame_refs: Vec<String>) -> Self {
        Self {
            kind: QueryKind::Video,
            text: None,
            frame_refs: Some(frame_refs),
            modification: None,
        }
    }

    pub fn composed(frame_refs: Vec<String>, modification: impl Into<String>) -> Self {
        Self {
            kind: QueryKind::Composed,
            text: None,
            frame_refs: Some(frame_refs),
            modification: Some(modification.into()),
        }
    }

    /// Checks the per-kind field requirements.
    pub fn validate(&self) -> Result<(), ModelError> {
        match self.kind {
            QueryKind::Text => {
                if self.text.as_deref().unwrap_or("").is_empty() {
                    return Err(ModelError::IncompleteSpec("text"));
                }
            }
            QueryKind::Video => {
                if self.frame_refs.as_deref().unwrap_or(&[]).is_empty() {
                    return Err(ModelError::IncompleteSpec("frame_refs"));
                }
            }
            QueryKind::Composed => {
                if self.frame_refs.as_deref().unwrap_or(&[]).is_empty() {
                    return Err(ModelError::IncompleteSpec("frame_refs"));
                }
                if self.modification.as_deref().unwrap_or("").is_empty() {
                    return Err(ModelError::IncompleteSpec("modification"));
                }
            }
        }
        Ok(())
    }
}

/// One scored result entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub score: f64,
}

/// Ordered results for one query: sorted by score descending, ties broken by
/// ascending item id so runs are byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Builds a list from unordered (id, score) pairs, enforcing the sorting
    /// and distinct-id invariants.
    pub fn from_scores(
        query_id: impl Into<String>,
        scores: Vec<(String, f64)>,
    ) -> Result<Self, ModelError> {
        if scores.iter().any(|(_, s)| !s.is_finite()) {
            return Err(ModelError::NonFiniteScore);
        }
        let mut entries: Vec<RankedEntry> = scores
            .into_iter()
            .map(|(id, score)| RankedEntry { id, score })
            .collect();
        entries.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.id.cmp(&b.id))
        });
        for w in entries.windows(2) {
            if w[0].id == w[1].id {
                return Err(ModelError::DuplicateId(w[0].id.clone()));
            }
        }
        // catches duplicates not adjacent after the score sort
        let mut ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        for w in ids.windows(2) {
            if w[0] == w[1] {
                return Err(ModelError::DuplicateId(w[0].to_string()));
            }
        }
        Ok(Self {
            query_id: query_id.into(),
            entries,
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-indexed rank of an id, if present.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id).map(|p| p + 1)
    }
}

/// A predicted temporal segment in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentWindow {
    pub start_s: f64,
    pub end_s: f64,
    pub score: f64,
}

impl MomentWindow {
    pub fn new(start_s: f64, end_s: f64, score: f64) -> Result<Self, ModelError> {
        if !(start_s.is_finite() && end_s.is_finite() && score.is_finite())
            || start_s < 0.0
            || end_s <= start_s
        {
            return Err(ModelError::InvalidWindow);
        }
        Ok(Self {
            start_s,
            end_s,
            score,
        })
    }

    pub fn length_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Intersection-over-union of two closed intervals; 0 when disjoint.
pub fn interval_iou(a: &MomentWindow, b: &MomentWindow) -> f64 {
    let inter = (a.end_s.min(b.end_s) - a.start_s.max(b.start_s)).max(0.0);
    let union = a.length_s() + b.length_s() - inter;
    inter / union
}
