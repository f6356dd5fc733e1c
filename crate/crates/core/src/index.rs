//! Exact dense top-K cosine search over a corpus of embeddings.
//!
//! Rows are unit-normalized at build time and stored as f32; similarity is
//! computed in f64 against a normalized query, so a score is just a dot
//! product. Search is exact: partial selection of the top K under the total
//! order (score descending, id ascending), then a sort of the survivors.

use thiserror::Error;

use crate::matrix::Matrix;
use crate::model::{
    l2_normalize, CorpusItem, EmbeddingVector, ModelError, RankedList,
};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("dimension mismatch: index dim {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector: {0}")]
    ZeroVector(String),
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    #[error("k must be ≥ 1")]
    BadK,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Immutable exact-search index: ids plus a row-major block of
/// unit-normalized f32 rows.
#[derive(Debug, Clone)]
pub struct DenseIndex {
    dim: usize,
    ids: Vec<String>,
    rows: Vec<f32>,
}

impl DenseIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// The stored row widened back to an embedding vector.
    pub fn row_vector(&self, i: usize) -> EmbeddingVector {
        EmbeddingVector::from_f32(self.row(i), false).expect("stored rows are finite")
    }

    pub fn position_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

/// Builds an index, normalizing every row regardless of input flags.
pub fn build_index(items: &[CorpusItem]) -> Result<DenseIndex, IndexError> {
    if items.is_empty() {
        return Err(IndexError::EmptyCorpus);
    }
    let dim = items[0].embedding.dim();
    let mut seen = std::collections::HashSet::new();
    let mut ids = Vec::with_capacity(items.len());
    let mut rows = Vec::with_capacity(items.len() * dim);
    for item in items {
        if item.embedding.dim() != dim {
            return Err(IndexError::DimensionMismatch {
                expected: dim,
                got: item.embedding.dim(),
            });
        }
        if !seen.insert(item.id.as_str()) {
            return Err(IndexError::DuplicateId(item.id.clone()));
        }
        let unit = l2_normalize(&item.embedding)
            .map_err(|_| IndexError::ZeroVector(item.id.clone()))?;
        ids.push(item.id.clone());
        rows.extend(unit.values().iter().map(|&v| v as f32));
    }
    Ok(DenseIndex { dim, ids, rows })
}

/// Dot product of a normalized f64 query against a stored f32 row, summed
/// left to right so results are independent of parallelism.
pub fn row_score(query_unit: &[f64], row: &[f32]) -> f64 {
    let mut acc = 0.0;
    for (q, r) in query_unit.iter().zip(row) {
        acc += q * f64::from(*r);
    }
    acc
}

fn normalized_query(index: &DenseIndex, query: &EmbeddingVector) -> Result<Vec<f64>, IndexError> {
    if query.dim() != index.dim {
        return Err(IndexError::DimensionMismatch {
            expected: index.dim,
            got: query.dim(),
        });
    }
    let unit = l2_normalize(query).map_err(|_| IndexError::ZeroVector("<query>".into()))?;
    Ok(unit.values().to_vec())
}

/// Exact top-K cosine search.
pub fn search(index: &DenseIndex, query: &EmbeddingVector, k: usize) -> Result<RankedList, IndexError> {
    search_with_id(index, "", query, k)
}

/// Exact top-K cosine search, tagging the result with a query id.
pub fn search_with_id(
    index: &DenseIndex,
    query_id: &str,
    query: &EmbeddingVector,
    k: usize,
) -> Result<RankedList, IndexError> {
    if k == 0 {
        return Err(IndexError::BadK);
    }
    let q = normalized_query(index, query)?;
    let mut scored: Vec<(usize, f64)> = (0..index.len())
        .map(|i| (i, row_score(&q, index.row(i))))
        .collect();
    let keep = k.min(scored.len());
    let better = |a: &(usize, f64), b: &(usize, f64)| {
        b.1.total_cmp(&a.1)
            .then_with(|| index.ids[a.0].cmp(&index.ids[b.0]))
    };
    if keep < scored.len() {
        scored.select_nth_unstable_by(keep - 1, better);
        scored.truncate(keep);
    }
    scored.sort_by(better);
    let entries = scored
        .into_iter()
        .map(|(i, s)| (index.ids[i].clone(), s))
        .collect();
    Ok(RankedList::from_scores(query_id, entries).expect("index ids are unique"))
}

/// Full m×n cosine similarity grid between queries and the indexed corpus.
pub fn similarity_matrix(
    queries: &[EmbeddingVector],
    index: &DenseIndex,
) -> Result<Matrix, IndexError> {
    let mut out = Matrix::zeros(queries.len(), index.len());
    for (qi, query) in queries.iter().enumerate() {
        let q = normalized_query(index, query)?;
        for j in 0..index.len() {
            out.set(qi, j, row_score(&q, index.row(j)));
        }
    }
    Ok(out)
}
