//! Deterministic synthetic benchmark generators with known ground truth:
//! paired-retrieval corpora, planted-moment frame sets, and composed-query
//! triplets. Fixtures write the same store/JSONL formats as the production
//! paths, so tests exercise real I/O.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::eval::{MomentGroundTruth, RetrievalGroundTruth};
use crate::model::{l2_normalize, CorpusItem, EmbeddingVector, ItemKind, MomentWindow, QuerySpec};
use crate::provider::store::{write_store, StoreError};
use crate::provider::synthetic::{synthetic_pair, SyntheticProvider, SyntheticWorld};
use crate::provider::ProviderError;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("fixture needs at least {0}")]
    TooSmall(&'static str),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A paired query/candidate corpus with singleton ground truth.
#[derive(Debug, Clone)]
pub struct RetrievalFixture {
    pub world: SyntheticWorld,
    pub queries: Vec<CorpusItem>,
    pub candidates: Vec<CorpusItem>,
    pub gt: RetrievalGroundTruth,
}

/// Generates `n_concepts` paired views; by construction the matching
/// candidate is the nearest one in the noiseless limit.
pub fn gen_retrieval_fixture(
    seed: u64,
    n_concepts: usize,
    noise: f64,
) -> Result<RetrievalFixture, FixtureError> {
    if n_concepts < 2 {
        return Err(FixtureError::TooSmall("2 concepts"));
    }
    let world = SyntheticWorld::new(seed, 16, 32, noise, n_concepts);
    let mut queries = Vec::with_capacity(n_concepts);
    let mut candidates = Vec::with_capacity(n_concepts);
    let mut gt = RetrievalGroundTruth::new();
    for i in 0..n_concepts {
        let (q, c) = synthetic_pair(&world, i)?;
        let qid = format!("concept:{i}/view:q");
        let cid = format!("concept:{i}/view:c");
        queries.push(CorpusItem::new(qid.clone(), ItemKind::Text, q));
        candidates.push(CorpusItem::new(cid.clone(), ItemKind::Video, c));
        gt.insert(qid, vec![cid]).expect("singleton gt");
    }
    Ok(RetrievalFixture {
        world,
        queries,
        candidates,
        gt,
    })
}

impl RetrievalFixture {
    /// Writes queries.bin, candidates.bin and gt.jsonl under `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<(), FixtureError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_store(dir.join("queries.bin"), &self.queries)?;
        write_store(dir.join("candidates.bin"), &self.candidates)?;
        let mut out = String::new();
        for item in &self.queries {
            let ids = self.gt.get(&item.id).expect("every query has gt");
            out.push_str(&serde_json::json!({"query_id": item.id, "item_ids": ids}).to_string());
            out.push('\n');
        }
        std::fs::write(dir.join("gt.jsonl"), out)?;
        Ok(())
    }
}

/// Shape of a planted-moment suite.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentFixtureSpec {
    pub n_queries: usize,
    pub t_frames: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub segments_per_query: usize,
    /// Minimum gap in frames between planted segments.
    pub min_gap: usize,
    /// Signal-to-noise ratio; `None` plants noiseless frames.
    pub snr: Option<f64>,
    pub dim: usize,
    pub frame_hop_s: f64,
}

impl Default for MomentFixtureSpec {
    fn default() -> Self {
        Self {
            n_queries: 200,
            t_frames: 100,
            min_len: 10,
            max_len: 30,
            segments_per_query: 1,
            min_gap: 10,
            snr: Some(3.0),
            dim: 16,
            frame_hop_s: 1.0,
        }
    }
}

/// One localization case: a query embedding, its frame embeddings, and the
/// frame spans that were planted (inclusive start, exclusive end).
#[derive(Debug, Clone)]
pub struct MomentFixtureCase {
    pub query_id: String,
    pub query: EmbeddingVector,
    pub frames: Vec<EmbeddingVector>,
    pub segments: Vec<(usize, usize)>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit_gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn validate_segments(segments: &[(usize, usize)], t_frames: usize) -> Result<(), FixtureError> {
    for &(a, b) in segments {
        if a >= b || b > t_frames {
            return Err(FixtureError::InvalidSegment(format!(
                "[{a}, {b}) does not fit in [0, {t_frames})"
            )));
        }
    }
    for (i, &(a1, b1)) in segments.iter().enumerate() {
        for &(a2, b2) in &segments[i + 1..] {
            if a1 < b2 && a2 < b1 {
                return Err(FixtureError::InvalidSegment(format!(
                    "[{a1}, {b1}) overlaps [{a2}, {b2})"
                )));
            }
        }
    }
    Ok(())
}

/// Plants frame embeddings for explicit segments: inside a segment the frame
/// leans toward the query direction with strength `snr`; outside it is pure
/// noise (orthogonal noise when `snr` is `None`).
pub fn plant_frames(
    rng: &mut ChaCha8Rng,
    query_direction: &[f64],
    t_frames: usize,
    segments: &[(usize, usize)],
    snr: Option<f64>,
) -> Result<Vec<EmbeddingVector>, FixtureError> {
    validate_segments(segments, t_frames)?;
    let dim = query_direction.len();
    let mut frames = Vec::with_capacity(t_frames);
    for t in 0..t_frames {
        let inside = segments.iter().any(|&(a, b)| (a..b).contains(&t));
        let values = match snr {
            None => {
                if inside {
                    query_direction.to_vec()
                } else {
                    // random direction with the query component removed
                    let g = unit_gaussian_vec(rng, dim);
                    let proj: f64 = g.iter().zip(query_direction).map(|(a, b)| a * b).sum();
                    let v: Vec<f64> = g
                        .iter()
                        .zip(query_direction)
                        .map(|(g, u)| g - proj * u)
                        .collect();
                    l2_normalize(&EmbeddingVector::new(v).expect("finite"))
                        .expect("orthogonal complement is non-degenerate almost surely")
                        .values()
                        .to_vec()
                }
            }
            Some(s) => {
                let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
                if inside {
                    for (vi, u) in v.iter_mut().zip(query_direction) {
                        *vi += s * u;
                    }
                }
                v
            }
        };
        frames.push(
            l2_normalize(&EmbeddingVector::new(values).expect("finite"))
                .expect("non-zero")
                .quantized(),
        );
    }
    Ok(frames)
}

/// Generates the planted-moment suite. Ground truth maps each query to its
/// first planted segment in seconds.
pub fn gen_moment_fixture(
    seed: u64,
    spec: &MomentFixtureSpec,
) -> Result<(Vec<MomentFixtureCase>, MomentGroundTruth), FixtureError> {
    if spec.min_len < 1 || spec.min_len > spec.max_len {
        return Err(FixtureError::InvalidSegment("min_len > max_len".into()));
    }
    let needed = spec.segments_per_query * spec.max_len
        + spec.segments_per_query.saturating_sub(1) * spec.min_gap;
    if needed > spec.t_frames {
        return Err(FixtureError::InvalidSegment(format!(
            "{} segments of up to {} frames with gap {} cannot fit in {}",
            spec.segments_per_query, spec.max_len, spec.min_gap, spec.t_frames
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(spec.n_queries);
    let mut gt = MomentGroundTruth::new();
    for qi in 0..spec.n_queries {
        let query_id = format!("moment-q{qi:04}");
        let direction = unit_gaussian_vec(&mut rng, spec.dim);

        // place segments left to right with random lengths and gaps
        let mut segments = Vec::with_capacity(spec.segments_per_query);
        let mut cursor = 0usize;
        for remaining in (0..spec.segments_per_query).rev() {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let tail_need = remaining * (spec.max_len + spec.min_gap);
            let latest_start = spec.t_frames - len - tail_need;
            let start = rng.gen_range(cursor..=latest_start);
            segments.push((start, start + len));
            cursor = start + len + spec.min_gap;
        }
        let frames = plant_frames(&mut rng, &direction, spec.t_frames, &segments, spec.snr)?;
        let (a, b) = segments[0];
        gt.insert(
            query_id.clone(),
            MomentWindow::new(
                a as f64 * spec.frame_hop_s,
                b as f64 * spec.frame_hop_s,
                1.0,
            )
            .expect("valid planted window"),
        );
        cases.push(MomentFixtureCase {
            query_id,
            query: EmbeddingVector::new(direction).expect("unit direction").quantized(),
            frames,
            segments,
        });
    }
    Ok((cases, gt))
}

/// Writes queries.bin, frames.bin (ids `<query>/frame:<t>`) and gt.jsonl.
pub fn write_moment_fixture(
    dir: impl AsRef<Path>,
    cases: &[MomentFixtureCase],
    gt: &MomentGroundTruth,
) -> Result<(), FixtureError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let query_items: Vec<CorpusItem> = cases
        .iter()
        .map(|c| CorpusItem::new(c.query_id.clone(), ItemKind::Text, c.query.clone()))
        .collect();
    write_store(dir.join("queries.bin"), &query_items)?;
    let frame_items: Vec<CorpusItem> = cases
        .iter()
        .flat_map(|c| {
            c.frames.iter().enumerate().map(|(t, f)| {
                CorpusItem::new(
                    format!("{}/frame:{t:04}", c.query_id),
                    ItemKind::Frame,
                    f.clone(),
                )
            })
        })
        .collect();
    write_store(dir.join("frames.bin"), &frame_items)?;
    let mut out = String::new();
    for (query_id, w) in gt.iter() {
        out.push_str(
            &serde_json::json!({"query_id": query_id, "start_s": w.start_s, "end_s": w.end_s})
                .to_string(),
        );
        out.push('\n');
    }
    std::fs::write(dir.join("gt.jsonl"), out)?;
    Ok(())
}

/// A composed-retrieval corpus: sources, rule-composed targets, and the
/// composed query specs that retrieve them.
#[derive(Debug, Clone)]
pub struct ComposedFixture {
    pub world: SyntheticWorld,
    pub queries: Vec<(String, QuerySpec)>,
    pub corpus: Vec<CorpusItem>,
    pub gt: RetrievalGroundTruth,
}

/// Builds `n_triplets` (source video, modification, target) triplets where
/// target = normalize(source + direction(modification)) under the synthetic
/// provider's composition rule. The corpus holds both sources and targets,
/// so dropping the modification retrieves the source instead of the target.
pub fn gen_composed_fixture(seed: u64, n_triplets: usize) -> Result<ComposedFixture, FixtureError> {
    if n_triplets < 2 {
        return Err(FixtureError::TooSmall("2 triplets"));
    }
    let world = SyntheticWorld::new(seed, 32, 32, 0.0, 1);
    let provider = SyntheticProvider::new(world.clone());
    let mut queries = Vec::with_capacity(n_triplets);
    let mut corpus = Vec::with_capacity(2 * n_triplets);
    let mut gt = RetrievalGroundTruth::new();
    for i in 0..n_triplets {
        let frames: Vec<String> = (0..4).map(|f| format!("video:{i}/frame:{f}")).collect();
        let modification = format!("modification:{i}");
        let source_id = format!("source:{i}");
        let target_id = format!("target:{i}");
        let source = provider.video_embedding(&frames);
        let target = provider.composed_embedding(&frames, &modification);
        corpus.push(CorpusItem::new(source_id, ItemKind::Video, source));
        corpus.push(CorpusItem::new(target_id.clone(), ItemKind::Video, target));
        let query_id = format!("composed-q{i:04}");
        queries.push((query_id.clone(), QuerySpec::composed(frames, modification)));
        gt.insert(query_id, vec![target_id]).expect("singleton gt");
    }
    Ok(ComposedFixture {
        world,
        queries,
        corpus,
        gt,
    })
}

impl ComposedFixture {
    /// Writes corpus.bin and gt.jsonl under `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<(), FixtureError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        // targets carry the normalized flag, sources do not; store them raw
        let uniform: Vec<CorpusItem> = self
            .corpus
            .iter()
            .map(|item| {
                CorpusItem::new(
                    item.id.clone(),
                    item.kind,
                    EmbeddingVector::new(item.embedding.values().to_vec())
                        .expect("finite")
                        .quantized(),
                )
            })
            .collect();
        write_store(dir.join("corpus.bin"), &uniform)?;
        let mut out = String::new();
        for (query_id, _) in &self.queries {
            let ids = self.gt.get(query_id).expect("every query has gt");
            out.push_str(&serde_json::json!({"query_id": query_id, "item_ids": ids}).to_string());
            out.push('\n');
        }
        std::fs::write(dir.join("gt.jsonl"), out)?;
        Ok(())
    }
}
