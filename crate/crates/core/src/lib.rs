//! Two-stage video retrieval and zero-shot moment localization engine.
//!
//! The engine covers everything downstream of the embedding model: exact
//! dense search, dual-softmax re-ordering, pointwise re-ranking, composed
//! queries, temporal localization, the training objectives with negative
//! mining, and the evaluation metrics. Embedding and scoring backends sit
//! behind provider traits; a deterministic synthetic provider makes the
//! whole pipeline runnable and verifiable at desk scale.

pub mod composed;
pub mod eval;
pub mod fixtures;
pub mod index;
pub mod matrix;
pub mod model;
pub mod moment;
pub mod objectives;
pub mod pipeline;
pub mod provider;
pub mod trainer;

pub use index::{build_index, search, search_with_id, similarity_matrix, DenseIndex, IndexError};
pub use model::{
    cosine_similarity, interval_iou, l2_normalize, CorpusItem, EmbeddingVector, ItemKind,
    ModelError, MomentWindow, QueryKind, QuerySpec, RankedEntry, RankedList,
};
pub use provider::{
    composed_payload, embed_one, item_payload, EmbedRequest, EmbeddingProvider, FileStoreProvider,
    ProviderError,
};
