//! JSONL formats the CLI reads and writes: item manifests, rankings,
//! localization windows, and ground truth.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use vrt_core::eval::{MomentGroundTruth, RetrievalGroundTruth};
use vrt_core::model::{MomentWindow, QueryKind, QuerySpec, RankedEntry, RankedList};

/// One manifest line: an identified item to embed or query with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub kind: QueryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_refs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modification: Option<String>,
}

impl ManifestItem {
    pub fn spec(&self) -> QuerySpec {
        QuerySpec {
            kind: self.kind,
            text: self.text.clone(),
            frame_refs: self.frame_refs.clone(),
            modification: self.modification.clone(),
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestItem>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: ManifestItem = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        item.spec()
            .validate()
            .with_context(|| format!("{}:{} ({})", path.display(), lineno + 1, item.id))?;
        items.push(item);
    }
    if items.is_empty() {
        bail!("manifest {} contains no items", path.display());
    }
    Ok(items)
}

/// One ranking line: `{"query_id": ..., "ranking": [{"id", "score"}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingLine {
    pub query_id: String,
    pub ranking: Vec<RankedEntry>,
}

impl From<&RankedList> for RankingLine {
    fn from(list: &RankedList) -> Self {
        Self {
            query_id: list.query_id.clone(),
            ranking: list.entries.clone(),
        }
    }
}

impl RankingLine {
    pub fn into_list(self) -> Result<RankedList> {
        RankedList::from_scores(
            self.query_id,
            self.ranking.into_iter().map(|e| (e.id, e.score)).collect(),
        )
        .context("ranking line violates ranked-list invariants")
    }
}

pub fn read_rankings(path: &Path) -> Result<Vec<RankedList>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading rankings {}", path.display()))?;
    let mut lists = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RankingLine = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        lists.push(parsed.into_list()?);
    }
    Ok(lists)
}

/// One localization line: `{"query_id": ..., "windows": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowsLine {
    pub query_id: String,
    pub windows: Vec<MomentWindow>,
}

pub fn read_windows(path: &Path) -> Result<Vec<WindowsLine>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading windows {}", path.display()))?;
    let mut lines = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        lines.push(
            serde_json::from_str(line)
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?,
        );
    }
    Ok(lines)
}

#[derive(Debug, Deserialize)]
struct RetrievalGtLine {
    query_id: String,
    item_ids: Vec<String>,
}

pub fn read_retrieval_gt(path: &Path) -> Result<RetrievalGroundTruth> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading ground truth {}", path.display()))?;
    let mut gt = RetrievalGroundTruth::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RetrievalGtLine = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        gt.insert(parsed.query_id, parsed.item_ids)
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
    }
    Ok(gt)
}

#[derive(Debug, Deserialize)]
struct MomentGtLine {
    query_id: String,
    start_s: f64,
    end_s: f64,
}

pub fn read_moment_gt(path: &Path) -> Result<MomentGroundTruth> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading ground truth {}", path.display()))?;
    let mut gt = MomentGroundTruth::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: MomentGtLine = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        let window = MomentWindow::new(parsed.start_s, parsed.end_s, 0.0)
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        gt.insert(parsed.query_id, window);
    }
    Ok(gt)
}
