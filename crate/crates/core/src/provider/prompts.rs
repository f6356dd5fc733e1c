//! Fixed registry of prompt templates used by embedding and scoring backends.
//!
//! The strings are contractual: remote services receive them verbatim, so
//! they must never be edited. `{content}` marks where the item payload goes.

use super::ProviderError;

/// System instruction for embedding-side prompts.
pub const SYSTEM_ASSISTANT: &str = "You are a helpful assistant.";
/// System instruction for the matching judge used by the re-ranking scorer.
pub const SYSTEM_JUDGE: &str = "You are a strict video text matching judge.";

pub const PROMPT_VIDEO_SUMMARY: &str = "video_summary";
pub const PROMPT_TEXT_SUMMARY: &str = "text_summary";
pub const PROMPT_IMAGE_SUMMARY: &str = "image_summary";
pub const PROMPT_MATCH_JUDGE: &str = "match_judge";
pub const PROMPT_COMPOSED: &str = "composed_instruction";

/// An immutable prompt template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: &'static str,
    pub system: &'static str,
    pub body: &'static str,
}

impl PromptTemplate {
    /// Substitutes the item payload into the template body.
    pub fn render(&self, content: &str) -> String {
        self.body.replace("{content}", content)
    }
}

const REGISTRY: &[PromptTemplate] = &[
    PromptTemplate {
        id: PROMPT_VIDEO_SUMMARY,
        system: SYSTEM_ASSISTANT,
        body: "{content} Summarize this video in one word:",
    },
    PromptTemplate {
        id: PROMPT_TEXT_SUMMARY,
        system: SYSTEM_ASSISTANT,
        body: "{content} Summarize this text in one word:",
    },
    PromptTemplate {
        id: PROMPT_IMAGE_SUMMARY,
        system: SYSTEM_ASSISTANT,
        body: "{content} Summarize this image in one word:",
    },
    PromptTemplate {
        id: PROMPT_MATCH_JUDGE,
        system: SYSTEM_JUDGE,
        body: "{content} Does the text match the video?",
    },
    PromptTemplate {
        id: PROMPT_COMPOSED,
        system: SYSTEM_ASSISTANT,
        body: "{content} Encode the representation by considering the semantic change the source video would undergo under this modification:",
    },
];

/// Looks up a template by id.
pub fn lookup(prompt_id: &str) -> Result<&'static PromptTemplate, ProviderError> {
    REGISTRY
        .iter()
        .find(|t| t.id == prompt_id)
        .ok_or_else(|| ProviderError::UnknownPrompt(prompt_id.to_string()))
}

/// All registered templates.
pub fn all() -> &'static [PromptTemplate] {
    REGISTRY
}

/// The default prompt for a query kind.
pub fn default_for(kind: crate::model::QueryKind) -> &'static str {
    match kind {
        crate::model::QueryKind::Text => PROMPT_TEXT_SUMMARY,
        crate::model::QueryKind::Video => PROMPT_VIDEO_SUMMARY,
        crate::model::QueryKind::Composed => PROMPT_COMPOSED,
    }
}
