//! Embedding providers: binary file store, deterministic synthetic embedder,
//! and remote HTTP service, plus the prompt registry they share.

pub mod prompts;
pub mod remote;
pub mod store;
pub mod synthetic;

use std::collections::HashMap;

use thiserror::Error;

use crate::model::{CorpusItem, EmbeddingVector, ModelError, QueryKind, QuerySpec};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("unknown prompt id: {0}")]
    UnknownPrompt(String),
    #[error("item not resolvable by this provider: {0}")]
    UnknownItem(String),
    #[error("embed request must contain at least one item")]
    EmptyRequest,
    #[error("concept index {index} out of range (num_concepts = {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A batch of query specs to embed under one prompt.
#[derive(Debug, Clone)]
pub struct EmbedRequest {
    pub items: Vec<QuerySpec>,
    pub prompt_id: String,
}

impl EmbedRequest {
    pub fn new(items: Vec<QuerySpec>, prompt_id: impl Into<String>) -> Self {
        Self {
            items,
            prompt_id: prompt_id.into(),
        }
    }

    /// One item embedded under its kind's default prompt.
    pub fn single(item: QuerySpec) -> Self {
        let prompt_id = prompts::default_for(item.kind).to_string();
        Self {
            items: vec![item],
            prompt_id,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.items.is_empty() {
            return Err(ProviderError::EmptyRequest);
        }
        prompts::lookup(&self.prompt_id)?;
        for item in &self.items {
            item.validate()?;
        }
        Ok(())
    }
}

/// Anything that can turn query specs into embedding vectors. Providers are
/// read-only after construction and callable from any thread.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, request: &EmbedRequest) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

/// Embeds a single spec under its default prompt.
pub fn embed_one(
    provider: &dyn EmbeddingProvider,
    spec: &QuerySpec,
) -> Result<EmbeddingVector, ProviderError> {
    let out = provider.embed(&EmbedRequest::single(spec.clone()))?;
    out.into_iter()
        .next()
        .ok_or_else(|| ProviderError::MalformedResponse("provider returned no vectors".into()))
}

const FIELD_SEP: char = '\u{1f}';
const LIST_SEP: char = '\u{1e}';

/// Canonical composed-query payload: source video frames first, then the
/// modification text, then the fixed instruction. The ordering is semantic;
/// flipping it produces different bytes and a different embedding.
pub fn composed_payload(frame_refs: &[String], modification: &str) -> String {
    let frames = frame_refs.join(&LIST_SEP.to_string());
    let instruction = prompts::lookup(prompts::PROMPT_COMPOSED)
        .expect("registry contains composed prompt")
        .render("");
    format!("{frames}{FIELD_SEP}{modification}{FIELD_SEP}{}", instruction.trim_start())
}

/// Canonical provider-side serialization of a query spec. Two specs with
/// different content (including frame order) serialize to different bytes.
pub fn item_payload(spec: &QuerySpec) -> String {
    match spec.kind {
        QueryKind::Text => format!("text{FIELD_SEP}{}", spec.text.as_deref().unwrap_or("")),
        QueryKind::Video => format!(
            "video{FIELD_SEP}{}",
            spec.frame_refs
                .as_deref()
                .unwrap_or(&[])
                .join(&LIST_SEP.to_string())
        ),
        QueryKind::Composed => format!(
            "composed{FIELD_SEP}{}",
            composed_payload(
                spec.frame_refs.as_deref().unwrap_or(&[]),
                spec.modification.as_deref().unwrap_or(""),
            )
        ),
    }
}

/// Provider backed by a VRTEMB01 store: resolves items to precomputed
/// vectors. Text specs resolve by their text as the stored id; other kinds
/// resolve by their canonical payload.
pub struct FileStoreProvider {
    vectors: HashMap<String, EmbeddingVector>,
}

impl FileStoreProvider {
    pub fn new(items: Vec<CorpusItem>) -> Self {
        Self {
            vectors: items
                .into_iter()
                .map(|item| (item.id, item.embedding))
                .collect(),
        }
    }

    pub fn open(path: impl AsRef<std::path::Path>) -> Result<Self, store::StoreError> {
        Ok(Self::new(store::read_store(path)?))
    }

    fn key_for(spec: &QuerySpec) -> String {
        match spec.kind {
            QueryKind::Text => spec.text.clone().unwrap_or_default(),
            _ => item_payload(spec),
        }
    }
}

impl EmbeddingProvider for FileStoreProvider {
    fn embed(&self, request: &EmbedRequest) -> Result<Vec<EmbeddingVector>, ProviderError> {
        request.validate()?;
        request
            .items
            .iter()
            .map(|spec| {
                let key = Self::key_for(spec);
                self.vectors
                    .get(&key)
                    .cloned()
                    .ok_or(ProviderError::UnknownItem(key))
            })
            .collect()
    }
}
