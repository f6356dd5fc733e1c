//! Deterministic synthetic embedder: a desk-scale stand-in for a real
//! multimodal embedding service.
//!
//! Everything is a pure function of the world seed and the item payload, so
//! identical inputs give byte-identical vectors across runs and platforms.
//!
//! Two generation paths:
//! - paired concepts: a text identity of the form `concept:<i>/view:<q|c>`
//!   maps to one of two noisy linear views of a shared latent vector, giving
//!   corpora where each query has a planted nearest candidate;
//! - everything else: a seeded hash of the canonical payload drives a unit
//!   Gaussian direction.
//!
//! Composed specs follow a fixed composition rule: the embedding of the
//!   source video plus a direction derived from the modification text,
//!   re-normalized. Fixtures use the same rule, so composed retrieval has an
//!   exact planted target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{item_payload, prompts, EmbedRequest, EmbeddingProvider, ProviderError};
use crate::model::{l2_normalize, EmbeddingVector, QueryKind, QuerySpec};

/// Parameters of the synthetic embedding world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub seed: u64,
    pub latent_dim: usize,
    pub raw_dim: usize,
    pub noise_sigma: f64,
    pub num_concepts: usize,
}

impl SyntheticWorld {
    pub fn new(
        seed: u64,
        latent_dim: usize,
        raw_dim: usize,
        noise_sigma: f64,
        num_concepts: usize,
    ) -> Self {
        assert!(latent_dim > 0 && raw_dim >= latent_dim, "raw_dim must be ≥ latent_dim > 0");
        assert!(noise_sigma >= 0.0 && num_concepts > 0);
        Self {
            seed,
            latent_dim,
            raw_dim,
            noise_sigma,
            num_concepts,
        }
    }
}

/// Which of the two paired views an identity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSide {
    Query,
    Candidate,
}

fn derive_seed(world_seed: u64, domain: &str, parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(world_seed.to_le_bytes());
    hasher.update(domain.as_bytes());
    for part in parts {
        hasher.update([0u8]);
        hasher.update(part);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| gaussian(rng)).collect()
}

fn unit_vec(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v = gaussian_vec(&mut rng, dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Relative weight of the view-specific part of each view map.
const VIEW_SPREAD: f64 = 0.5;

/// One of the two fixed random linear view maps (identity when the raw and
/// latent dimensions coincide). The maps share a common component, so the
/// two views of one latent stay closer to each other than to other latents,
/// while the view-specific parts keep the alignment non-trivial.
fn view_map(world: &SyntheticWorld, side: PairSide) -> Option<Vec<Vec<f64>>> {
    if world.raw_dim == world.latent_dim {
        return None; // identity map
    }
    let tag: &[u8] = match side {
        PairSide::Query => b"q",
        PairSide::Candidate => b"c",
    };
    let mut common = ChaCha8Rng::seed_from_u64(derive_seed(world.seed, "view-map-common", &[]));
    let mut own = ChaCha8Rng::seed_from_u64(derive_seed(world.seed, "view-map", &[tag]));
    Some(
        (0..world.raw_dim)
            .map(|_| {
                gaussian_vec(&mut common, world.latent_dim)
                    .into_iter()
                    .zip(gaussian_vec(&mut own, world.latent_dim))
                    .map(|(c, o)| c + VIEW_SPREAD * o)
                    .collect()
            })
            .collect(),
    )
}

fn apply_map(map: &Option<Vec<Vec<f64>>>, z: &[f64], raw_dim: usize) -> Vec<f64> {
    match map {
        None => z.to_vec(),
        Some(rows) => (0..raw_dim)
            .map(|r| rows[r].iter().zip(z).map(|(a, b)| a * b).sum())
            .collect(),
    }
}

/// The latent concept vector z_i (unit norm, seeded).
pub fn concept_latent(world: &SyntheticWorld, concept_index: usize) -> Result<Vec<f64>, ProviderError> {
    if concept_index >= world.num_concepts {
        return Err(ProviderError::IndexOutOfRange {
            index: concept_index,
            len: world.num_concepts,
        });
    }
    Ok(unit_vec(
        derive_seed(world.seed, "latent", &[&concept_index.to_le_bytes()]),
        world.latent_dim,
    ))
}

/// One view of a concept: view map applied to the latent plus seeded
/// Gaussian noise of std `noise_sigma`. Values are rounded through f32 so
/// store round-trips are exact.
pub fn concept_view(
    world: &SyntheticWorld,
    concept_index: usize,
    side: PairSide,
) -> Result<EmbeddingVector, ProviderError> {
    let z = concept_latent(world, concept_index)?;
    let map = view_map(world, side);
    let mut raw = apply_map(&map, &z, world.raw_dim);
    if world.noise_sigma > 0.0 {
        let tag: &[u8] = match side {
            PairSide::Query => b"nq",
            PairSide::Candidate => b"nc",
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            world.seed,
            "view-noise",
            &[&concept_index.to_le_bytes(), tag],
        ));
        for v in raw.iter_mut() {
            *v += world.noise_sigma * gaussian(&mut rng);
        }
    }
    Ok(EmbeddingVector::new(raw)?.quantized())
}

/// The paired (query view, candidate view) of one concept.
pub fn synthetic_pair(
    world: &SyntheticWorld,
    concept_index: usize,
) -> Result<(EmbeddingVector, EmbeddingVector), ProviderError> {
    Ok((
        concept_view(world, concept_index, PairSide::Query)?,
        concept_view(world, concept_index, PairSide::Candidate)?,
    ))
}

/// Parses a paired-concept identity of the form `concept:<i>/view:<q|c>`.
pub fn parse_concept_identity(text: &str) -> Option<(usize, PairSide)> {
    let rest = text.strip_prefix("concept:")?;
    let (idx, view) = rest.split_once('/')?;
    let index: usize = idx.parse().ok()?;
    match view {
        "view:q" => Some((index, PairSide::Query)),
        "view:c" => Some((index, PairSide::Candidate)),
        _ => None,
    }
}

/// Deterministic synthetic embedding provider over a [`SyntheticWorld`].
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    world: SyntheticWorld,
    /// When set, composed specs drop their modification and embed as the
    /// bare source video (the "without edit text" configuration).
    ignore_modification: bool,
}

impl SyntheticProvider {
    pub fn new(world: SyntheticWorld) -> Self {
        Self {
            world,
            ignore_modification: false,
        }
    }

    pub fn ignoring_modification(world: SyntheticWorld) -> Self {
        Self {
            world,
            ignore_modification: true,
        }
    }

    pub fn world(&self) -> &SyntheticWorld {
        &self.world
    }

    fn hash_embedding(&self, prompt_id: &str, payload: &str) -> EmbeddingVector {
        let seed = derive_seed(
            self.world.seed,
            "hash-embed",
            &[prompt_id.as_bytes(), payload.as_bytes()],
        );
        let values = unit_vec(seed, self.world.raw_dim);
        EmbeddingVector::new(values)
            .expect("unit vector is valid")
            .quantized()
    }

    /// Embedding of a bare video given its ordered frame refs.
    pub fn video_embedding(&self, frame_refs: &[String]) -> EmbeddingVector {
        let spec = QuerySpec::video(frame_refs.to_vec());
        self.hash_embedding(prompts::PROMPT_VIDEO_SUMMARY, &item_payload(&spec))
    }

    /// Unit direction associated with a modification text.
    pub fn modification_direction(&self, modification: &str) -> EmbeddingVector {
        let seed = derive_seed(self.world.seed, "mod-direction", &[modification.as_bytes()]);
        EmbeddingVector::new(unit_vec(seed, self.world.raw_dim))
            .expect("unit vector is valid")
            .quantized()
    }

    /// The fixed composition rule: normalize(video + direction(modification)).
    pub fn composed_embedding(&self, frame_refs: &[String], modification: &str) -> EmbeddingVector {
        let video = self.video_embedding(frame_refs);
        if self.ignore_modification {
            return video;
        }
        let dir = self.modification_direction(modification);
        let summed: Vec<f64> = video
            .values()
            .iter()
            .zip(dir.values())
            .map(|(a, b)| a + b)
            .collect();
        let v = EmbeddingVector::new(summed).expect("sum of unit vectors is valid");
        l2_normalize(&v).expect("non-degenerate sum").quantized()
    }

    fn embed_spec(&self, prompt_id: &str, spec: &QuerySpec) -> EmbeddingVector {
        match spec.kind {
            QueryKind::Text => {
                if let Some((idx, side)) = spec
                    .text
                    .as_deref()
                    .and_then(parse_concept_identity)
                    .filter(|(idx, _)| *idx < self.world.num_concepts)
                {
                    return concept_view(&self.world, idx, side)
                        .expect("index checked against num_concepts");
                }
                self.hash_embedding(prompt_id, &item_payload(spec))
            }
            QueryKind::Video => self.video_embedding(spec.frame_refs.as_deref().unwrap_or(&[])),
            QueryKind::Composed => self.composed_embedding(
                spec.frame_refs.as_deref().unwrap_or(&[]),
                spec.modification.as_deref().unwrap_or(""),
            ),
        }
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn embed(&self, request: &EmbedRequest) -> Result<Vec<EmbeddingVector>, ProviderError> {
        request.validate()?;
        Ok(request
            .items
            .iter()
            .map(|spec| self.embed_spec(&request.prompt_id, spec))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cosine_similarity;

    fn world() -> SyntheticWorld {
        SyntheticWorld::new(1, 16, 32, 0.1, 64)
    }

    #[test]
    fn identical_text_items_embed_identically() {
        let p = SyntheticProvider::new(world());
        let req = EmbedRequest::new(
            vec![QuerySpec::text("a dog runs"), QuerySpec::text("a dog runs")],
            prompts::PROMPT_TEXT_SUMMARY,
        );
        let out = p.embed(&req).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn concept_identity_is_pure_across_calls() {
        let w = SyntheticWorld::new(7, 8, 16, 0.05, 10);
        let p = SyntheticProvider::new(w);
        let spec = QuerySpec::text("concept:3/view:q");
        let a = p.embed(&EmbedRequest::single(spec.clone())).unwrap();
        let b = p.embed(&EmbedRequest::single(spec)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pair_views_match_provider_identities() {
        let w = world();
        let p = SyntheticProvider::new(w.clone());
        let (q, c) = synthetic_pair(&w, 5).unwrap();
        let via_q = p
            .embed(&EmbedRequest::single(QuerySpec::text("concept:5/view:q")))
            .unwrap();
        let via_c = p
            .embed(&EmbedRequest::single(QuerySpec::text("concept:5/view:c")))
            .unwrap();
        assert_eq!(via_q[0], q);
        assert_eq!(via_c[0], c);
    }

    #[test]
    fn noiseless_identity_maps_give_equal_views() {
        let w = SyntheticWorld::new(3, 8, 8, 0.0, 4);
        let (q, c) = synthetic_pair(&w, 2).unwrap();
        assert_eq!(q, c);
    }

    #[test]
    fn paired_views_beat_unpaired_on_average() {
        let w = world();
        let (q0, c0) = synthetic_pair(&w, 0).unwrap();
        let paired = cosine_similarity(&q0, &c0).unwrap();
        let mut others = Vec::new();
        for j in 1..w.num_concepts {
            let (_, cj) = synthetic_pair(&w, j).unwrap();
            others.push(cosine_similarity(&q0, &cj).unwrap());
        }
        let mean_other = others.iter().sum::<f64>() / others.len() as f64;
        assert!(
            paired > mean_other,
            "paired {paired} vs mean unpaired {mean_other}"
        );
    }

    #[test]
    fn same_call_twice_is_identical() {
        let w = world();
        assert_eq!(synthetic_pair(&w, 9).unwrap(), synthetic_pair(&w, 9).unwrap());
    }

    #[test]
    fn out_of_range_concept_rejected() {
        let w = SyntheticWorld::new(1, 4, 4, 0.0, 3);
        assert!(matches!(
            synthetic_pair(&w, 3),
            Err(ProviderError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn composed_rule_is_video_plus_direction() {
        let p = SyntheticProvider::new(world());
        let frames = vec!["f1".into(), "f2".into()];
        let spec = QuerySpec::composed(frames.clone(), "make it snowy");
        let got = p.embed(&EmbedRequest::single(spec)).unwrap();
        let expect = p.composed_embedding(&frames, "make it snowy");
        assert_eq!(got[0], expect);
        assert!(got[0].is_normalized());
    }

    #[test]
    fn ablated_provider_embeds_bare_video() {
        let w = world();
        let full = SyntheticProvider::new(w.clone());
        let ablated = SyntheticProvider::ignoring_modification(w);
        let frames = vec!["f1".into()];
        let spec = QuerySpec::composed(frames.clone(), "make it snowy");
        let got = ablated.embed(&EmbedRequest::single(spec)).unwrap();
        assert_eq!(got[0], full.video_embedding(&frames));
    }

    #[test]
    fn frame_order_changes_video_embedding() {
        let p = SyntheticProvider::new(world());
        let a = p.video_embedding(&["f1".into(), "f2".into()]);
        let b = p.video_embedding(&["f2".into(), "f1".into()]);
        assert_ne!(a, b);
    }
}
