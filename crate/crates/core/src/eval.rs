//! Retrieval and moment metrics plus deterministic report emission.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{interval_iou, MomentWindow, RankedList};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("missing ground truth for query {0}")]
    MissingGroundTruth(String),
    #[error("ground-truth sets must be non-empty")]
    EmptyGroundTruth,
    #[error("metric value is not finite")]
    NonFiniteMetric,
}

/// query id → set of correct item ids (singleton for text→video; possibly
/// many for multi-caption video→text).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalGroundTruth {
    map: BTreeMap<String, Vec<String>>,
}

impl RetrievalGroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        query_id: impl Into<String>,
        item_ids: Vec<String>,
    ) -> Result<(), EvalError> {
        if item_ids.is_empty() {
            return Err(EvalError::EmptyGroundTruth);
        }
        self.map.insert(query_id.into(), item_ids);
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&[String]> {
        self.map.get(query_id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// query id → ground-truth segment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MomentGroundTruth {
    map: BTreeMap<String, MomentWindow>,
}

impl MomentGroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, window: MomentWindow) {
        self.map.insert(query_id.into(), window);
    }

    pub fn get(&self, query_id: &str) -> Option<&MomentWindow> {
        self.map.get(query_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &MomentWindow)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Fraction of queries whose top-k entries intersect their ground-truth set.
pub fn recall_at_k(
    rankings: &[RankedList],
    gt: &RetrievalGroundTruth,
    k: usize,
) -> Result<f64, EvalError> {
    if rankings.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for ranking in rankings {
        let correct = gt
            .get(&ranking.query_id)
            .ok_or_else(|| EvalError::MissingGroundTruth(ranking.query_id.clone()))?;
        if ranking
            .entries
            .iter()
            .take(k)
            .any(|e| correct.contains(&e.id))
        {
            hits += 1;
        }
    }
    Ok(hits as f64 / rankings.len() as f64)
}

/// Fraction of ground-truth queries where any of the top-k predicted windows
/// reaches the IoU threshold. Queries without predictions are misses.
pub fn moment_recall(
    predictions: &BTreeMap<String, Vec<MomentWindow>>,
    gt: &MomentGroundTruth,
    iou_threshold: f64,
    k: usize,
) -> Result<f64, EvalError> {
    for query_id in predictions.keys() {
        if gt.get(query_id).is_none() {
            return Err(EvalError::MissingGroundTruth(query_id.clone()));
        }
    }
    if gt.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (query_id, window) in gt.iter() {
        let hit = predictions
            .get(query_id)
            .map(|preds| {
                preds
                    .iter()
                    .take(k)
                    .any(|p| interval_iou(p, window) >= iou_threshold)
            })
            .unwrap_or(false);
        if hit {
            hits += 1;
        }
    }
    Ok(hits as f64 / gt.len() as f64)
}

/// Mean IoU of the top-1 prediction against ground truth; queries without
/// predictions contribute zero.
pub fn mean_iou(
    predictions: &BTreeMap<String, Vec<MomentWindow>>,
    gt: &MomentGroundTruth,
) -> Result<f64, EvalError> {
    for query_id in predictions.keys() {
        if gt.get(query_id).is_none() {
            return Err(EvalError::MissingGroundTruth(query_id.clone()));
        }
    }
    if gt.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (query_id, window) in gt.iter() {
        total += predictions
            .get(query_id)
            .and_then(|preds| preds.first())
            .map(|p| interval_iou(p, window))
            .unwrap_or(0.0);
    }
    Ok(total / gt.len() as f64)
}

/// One metric row of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub task: String,
    pub metric: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(task: &str, metric: &str, k: Option<usize>, threshold: Option<f64>, value: f64) -> Self {
        Self {
            task: task.to_string(),
            metric: metric.to_string(),
            k,
            threshold,
            value,
        }
    }
}

/// Report output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Serializes metric rows deterministically (input order preserved).
pub fn emit_report(metrics: &[MetricRecord], format: ReportFormat) -> Result<Vec<u8>, EvalError> {
    if metrics.iter().any(|m| !m.value.is_finite()) {
        return Err(EvalError::NonFiniteMetric);
    }
    match format {
        ReportFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(metrics).expect("metric rows serialize");
            bytes.push(b'\n');
            Ok(bytes)
        }
        ReportFormat::Csv => {
            let mut out = String::from("task,metric,k,threshold,value\n");
            for m in metrics {
                let k = m.k.map(|k| k.to_string()).unwrap_or_default();
                let threshold = m.threshold.map(|t| t.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    m.task, m.metric, k, threshold, m.value
                ));
            }
            Ok(out.into_bytes())
        }
    }
}
