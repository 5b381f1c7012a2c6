//! Canonical encodings and distance functions used by the pair classifier:
//! ordered-categorical levels, text embeddings, string and geographic
//! distances.
//!
//! The default text embedding is a deterministic hashed bag of tokens. It is
//! not a trained semantic model; it only has to provide a monotone similarity
//! signal between descriptions, and it must be reproducible bit for bit.
//! Externally computed vectors can be passed through instead via
//! [`EmbeddingProvider::External`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{GeoPoint, OrderedLevelScheme};

/// Mean Earth radius in meters (IUGG).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Encodes an ordered-categorical label into its integer level 1..=K.
/// A missing label stays missing.
pub fn encode_ordered(
    scheme: &OrderedLevelScheme,
    label: Option<&str>,
) -> Result<Option<u8>, NormalizeError> {
    match label {
        None => Ok(None),
        Some(l) => scheme
            .level_of(l)
            .map(Some)
            .ok_or_else(|| NormalizeError::UnknownLabel {
                trait_name: scheme.trait_name.clone(),
                label: l.to_string(),
            }),
    }
}

/// A fixed-dimension real vector representing one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub provider: String,
    pub components: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| *c == 0.0)
    }
}

/// Configuration of the description-embedding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case")]
pub enum EmbeddingProvider {
    /// Deterministic hashed token counts with sublinear weighting.
    Hashed { dimension: usize, seed: u64 },
    /// Vectors computed offline, loaded as id -> vector rows.
    External { dimension: usize },
}

impl Default for EmbeddingProvider {
    fn default() -> Self {
        EmbeddingProvider::Hashed { dimension: 256, seed: 0x68_6f_6d_65 }
    }
}

impl EmbeddingProvider {
    pub fn name(&self) -> &'static str {
        match self {
            EmbeddingProvider::Hashed { .. } => "hashed",
            EmbeddingProvider::External { .. } => "external",
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            EmbeddingProvider::Hashed { dimension, .. }
            | EmbeddingProvider::External { dimension } => *dimension,
        }
    }
}

/// FNV-1a, folded with a seed. Stable across platforms and runs.
fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Lowercase word tokens: maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Bucket index of a token under the hashed provider.
pub fn token_bucket(token: &str, dimension: usize, seed: u64) -> usize {
    (fnv1a64(seed, token.as_bytes()) % dimension as u64) as usize
}

/// Embeds a description. Empty text yields the zero vector. With the hashed
/// provider each distinct token contributes weight `1 + ln(count)` to its
/// bucket.
pub fn embed_description(text: &str, provider: &EmbeddingProvider) -> EmbeddingVector {
    match provider {
        EmbeddingProvider::Hashed { dimension, seed } => {
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            for token in tokenize(text) {
                *counts.entry(token).or_insert(0) += 1;
            }
            let mut components = vec![0.0; *dimension];
            for (token, count) in counts {
                let bucket = token_bucket(&token, *dimension, *seed);
                components[bucket] += 1.0 + (count as f64).ln();
            }
            EmbeddingVector { provider: "hashed".to_string(), components }
        }
        EmbeddingProvider::External { dimension } => {
            // External vectors are joined by id elsewhere; a text reaching
            // this path has no precomputed vector, so it embeds to zero.
            EmbeddingVector { provider: "external".to_string(), components: vec![0.0; *dimension] }
        }
    }
}

/// Cosine distance `1 - cos(a, b)`, in [0, 2]. If either vector is zero the
/// distance is defined as 1 (no signal either way).
pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, NormalizeError> {
    if a.dimension() != b.dimension() {
        return Err(NormalizeError::DimensionMismatch { left: a.dimension(), right: b.dimension() });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.components.iter().zip(&b.components) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0))
}

/// Levenshtein edit distance normalized by the longer length, in [0, 1].
/// Two empty strings have distance 0.
pub fn levenshtein_norm(s: &str, t: &str) -> f64 {
    let max_len = s.chars().count().max(t.chars().count());
    if max_len == 0 {
        return 0.0;
    }
    levenshtein(s, t) as f64 / max_len as f64
}

/// Plain Levenshtein distance over Unicode scalar values, single-row DP.
pub fn levenshtein(s: &str, t: &str) -> usize {
    let s: Vec<char> = s.chars().collect();
    let t: Vec<char> = t.chars().collect();
    let (short, long) = if s.len() <= t.len() { (&s, &t) } else { (&t, &s) };
    if short.is_empty() {
        return long.len();
    }
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (j, cl) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = j + 1;
        for (i, cs) in short.iter().enumerate() {
            let cost = if cs == cl { diag } else { diag + 1 };
            diag = row[i + 1];
            row[i + 1] = cost.min(row[i] + 1).min(diag + 1);
        }
    }
    row[short.len()]
}

/// Great-circle (haversine) distance in meters.
pub fn geo_distance_m(p: GeoPoint, q: GeoPoint) -> f64 {
    let lat1 = p.lat.to_radians();
    let lat2 = q.lat.to_radians();
    let dlat = (q.lat - p.lat).to_radians();
    let dlon = (q.lon - p.lon).to_radians();
    let a = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NormalizeError {
    #[error("unknown {trait_name} label {label:?}")]
    UnknownLabel { trait_name: String, label: String },
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LevelSchemes;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn encode_ordered_examples() {
        let schemes = LevelSchemes::default();
        assert_eq!(encode_ordered(&schemes.maintenance, Some("new")).unwrap(), Some(4));
        assert_eq!(
            encode_ordered(&schemes.maintenance, Some("to be fully renovated")).unwrap(),
            Some(1)
        );
        assert_eq!(encode_ordered(&schemes.maintenance, None).unwrap(), None);
        assert!(encode_ordered(&schemes.maintenance, Some("shiny")).is_err());
    }

    #[test]
    fn encode_ordered_is_monotone_in_label_order() {
        let schemes = LevelSchemes::default();
        for t in crate::model::OrderedTrait::ALL {
            let scheme = schemes.scheme(t);
            let mut last = 0;
            for label in &scheme.labels {
                let level = scheme.level_of(label).unwrap();
                assert!(level > last, "levels must strictly increase with label order");
                last = level;
            }
        }
    }

    #[test]
    fn empty_text_embeds_to_zero() {
        let v = embed_description("", &EmbeddingProvider::default());
        assert!(v.is_zero());
        assert_eq!(v.dimension(), 256);
    }

    #[test]
    fn identical_texts_embed_identically() {
        let p = EmbeddingProvider::default();
        let a = embed_description("luminoso trilocale con terrazzo", &p);
        let b = embed_description("luminoso trilocale con terrazzo", &p);
        assert_eq!(a, b);
    }

    #[test]
    fn disjoint_token_texts_are_orthogonal() {
        // Oracle: compute the buckets straight from the hash definition and
        // pick tokens that do not collide, so the dot product is exactly 0.
        let p = EmbeddingProvider::default();
        let (dim, seed) = match p {
            EmbeddingProvider::Hashed { dimension, seed } => (dimension, seed),
            _ => unreachable!(),
        };
        let left = ["casa", "giardino", "box"];
        let right = ["attico", "терраса", "vista"];
        let lb: Vec<usize> = left.iter().map(|t| token_bucket(t, dim, seed)).collect();
        let rb: Vec<usize> = right.iter().map(|t| token_bucket(t, dim, seed)).collect();
        assert!(lb.iter().all(|b| !rb.contains(b)), "chosen toy tokens must not collide");

        let a = embed_description(&left.join(" "), &p);
        let b = embed_description(&right.join(" "), &p);
        assert_abs_diff_eq!(cosine_distance(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sublinear_weighting_uses_one_plus_log_count() {
        let p = EmbeddingProvider::Hashed { dimension: 8, seed: 3 };
        let v = embed_description("sole sole sole", &p);
        let bucket = token_bucket("sole", 8, 3);
        assert_abs_diff_eq!(v.components[bucket], 1.0 + 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn cosine_distance_identity_orthogonal_opposite() {
        let v = |c: Vec<f64>| EmbeddingVector { provider: "t".into(), components: c };
        let a = v(vec![1.0, 2.0, 0.0]);
        assert_abs_diff_eq!(cosine_distance(&a, &a).unwrap(), 0.0, epsilon = 1e-12);
        let e1 = v(vec![1.0, 0.0, 0.0]);
        let e2 = v(vec![0.0, 1.0, 0.0]);
        assert_abs_diff_eq!(cosine_distance(&e1, &e2).unwrap(), 1.0, epsilon = 1e-12);
        let neg = v(vec![-1.0, -2.0, 0.0]);
        assert_abs_diff_eq!(cosine_distance(&a, &neg).unwrap(), 2.0, epsilon = 1e-12);
        let zero = v(vec![0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(cosine_distance(&a, &zero).unwrap(), 1.0, epsilon = 1e-12);
        let short = v(vec![1.0]);
        assert!(cosine_distance(&a, &short).is_err());
    }

    /// Independent oracle: textbook full-matrix dynamic program.
    fn levenshtein_oracle(s: &str, t: &str) -> usize {
        let s: Vec<char> = s.chars().collect();
        let t: Vec<char> = t.chars().collect();
        let mut d = vec![vec![0usize; t.len() + 1]; s.len() + 1];
        for i in 0..=s.len() {
            d[i][0] = i;
        }
        for j in 0..=t.len() {
            d[0][j] = j;
        }
        for i in 1..=s.len() {
            for j in 1..=t.len() {
                let sub = d[i - 1][j - 1] + usize::from(s[i - 1] != t[j - 1]);
                d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        d[s.len()][t.len()]
    }

    #[test]
    fn levenshtein_norm_examples() {
        assert_eq!(levenshtein_norm("abc", "abc"), 0.0);
        assert_eq!(levenshtein_oracle("abc", "abd"), 1);
        assert_abs_diff_eq!(levenshtein_norm("abc", "abd"), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(levenshtein_norm("", "ab"), 1.0);
        assert_eq!(levenshtein_norm("", ""), 0.0);
    }

    #[test]
    fn geo_distance_examples() {
        let p = GeoPoint::new(45.0, 9.0).unwrap();
        assert_eq!(geo_distance_m(p, p), 0.0);
        // 0.001 degrees latitude at the equator: pi/180 * R * 0.001.
        let a = GeoPoint::new(0.0, 0.0).unwrap();
        let b = GeoPoint::new(0.001, 0.0).unwrap();
        let expected = std::f64::consts::PI / 180.0 * EARTH_RADIUS_M * 0.001;
        assert!((expected - 111.2).abs() < 0.5);
        assert_abs_diff_eq!(geo_distance_m(a, b), expected, epsilon = 1e-6);
    }

    proptest! {
        #[test]
        fn levenshtein_matches_oracle(s in "[a-d]{0,8}", t in "[a-d]{0,8}") {
            prop_assert_eq!(levenshtein(&s, &t), levenshtein_oracle(&s, &t));
        }

        #[test]
        fn levenshtein_norm_triangle_on_equal_lengths(
            s in "[a-c]{6}", t in "[a-c]{6}", u in "[a-c]{6}"
        ) {
            // With equal lengths the shared normalizer preserves the
            // triangle inequality exactly.
            let st = levenshtein_norm(&s, &t);
            let tu = levenshtein_norm(&t, &u);
            let su = levenshtein_norm(&s, &u);
            prop_assert!(su <= st + tu + 1e-12);
        }

        #[test]
        fn geo_distance_symmetric_and_nonnegative(
            lat1 in -89.0f64..89.0, lon1 in -179.0f64..179.0,
            lat2 in -89.0f64..89.0, lon2 in -179.0f64..179.0,
        ) {
            let p = GeoPoint::new(lat1, lon1).unwrap();
            let q = GeoPoint::new(lat2, lon2).unwrap();
            let d1 = geo_distance_m(p, q);
            let d2 = geo_distance_m(q, p);
            prop_assert!(d1 >= 0.0);
            prop_assert!((d1 - d2).abs() <= 1e-9 * d1.max(1.0));
        }

        #[test]
        fn hashed_embedding_reproducible(text in ".{0,64}") {
            let p = EmbeddingProvider::default();
            let a = embed_description(&text, &p);
            let b = embed_description(&text, &p);
            prop_assert_eq!(a, b);
        }
    }
}
