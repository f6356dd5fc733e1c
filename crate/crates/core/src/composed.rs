//! Composed (source video + modification text) queries: spec assembly with
//! the video-first ordering contract, and plain cosine argmax retrieval.
//!
//! Composed retrieval deliberately bypasses the re-ranking stage; the
//! embedding search alone carries the task.

use thiserror::Error;

use crate::index::{search_with_id, DenseIndex, IndexError};
use crate::model::{ModelError, QuerySpec, RankedList};
use crate::provider::{embed_one, EmbeddingProvider, ProviderError};

#[derive(Debug, Error)]
pub enum ComposedError {
    #[error("composed queries need at least one frame and a non-empty modification")]
    EmptyInput,
    #[error("spec is not a composed query")]
    NotComposed,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Assembles a composed query spec. The provider serialization of the result
/// places the video frames before the modification before the fixed
/// instruction; see [`crate::provider::composed_payload`].
pub fn build_composed_spec(
    frame_refs: Vec<String>,
    modification: impl Into<String>,
) -> Result<QuerySpec, ComposedError> {
    let modification = modification.into();
    if frame_refs.is_empty() || modification.is_empty() {
        return Err(ComposedError::EmptyInput);
    }
    Ok(QuerySpec::composed(frame_refs, modification))
}

/// Embeds a composed query and retrieves the top-k targets by cosine.
pub fn composed_retrieve(
    index: &DenseIndex,
    query_id: &str,
    spec: &QuerySpec,
    provider: &dyn EmbeddingProvider,
    k: usize,
) -> Result<RankedList, ComposedError> {
    if spec.kind != crate::model::QueryKind::Composed {
        return Err(ComposedError::NotComposed);
    }
    let embedding = embed_one(provider, spec)?;
    Ok(search_with_id(index, query_id, &embedding, k)?)
}
