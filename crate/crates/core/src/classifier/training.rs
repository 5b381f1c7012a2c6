//! Building labeled training sets from ads with a known ad-to-unit mapping,
//! and fitting the two-model pair from them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::features::{extract_features, PairSide};
use super::tree::{train_tree, LabeledPair, TrainError, TreeParams};
use super::TrainedModelPair;
use crate::blocking::{candidate_pairs, BlockEntity};
use crate::config::RunConfig;
use crate::model::{Ad, AdId, UnitId};
use crate::normalize::{embed_description, EmbeddingVector};

/// Labeled candidate pairs, split by the same-agency flag.
#[derive(Debug, Clone, Default)]
pub struct TrainingSets {
    pub same_agency: Vec<LabeledPair>,
    pub cross_agency: Vec<LabeledPair>,
}

impl TrainingSets {
    pub fn duplicate_shares(&self) -> (f64, f64) {
        let share = |v: &[LabeledPair]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().filter(|p| p.duplicate).count() as f64 / v.len() as f64
            }
        };
        (share(&self.same_agency), share(&self.cross_agency))
    }
}

/// Runs blocking over the ads and labels every candidate pair from the
/// ground-truth mapping (duplicate iff both ads map to the same unit).
pub fn build_training_pairs(
    ads: &[Ad],
    truth: &BTreeMap<AdId, UnitId>,
    config: &RunConfig,
) -> TrainingSets {
    let by_id: BTreeMap<&AdId, &Ad> = ads.iter().map(|a| (&a.id, a)).collect();
    let embeddings: BTreeMap<&AdId, EmbeddingVector> = ads
        .par_iter()
        .filter_map(|ad| {
            ad.description
                .as_deref()
                .map(|text| (&ad.id, embed_description(text, &config.embedding)))
        })
        .collect();

    let entities: Vec<BlockEntity<AdId>> = ads.iter().map(BlockEntity::from_ad).collect();
    let pairs = candidate_pairs(&entities, &config.blocking);

    let labeled: Vec<(bool, LabeledPair)> = pairs
        .par_iter()
        .map(|p| {
            let (a, b) = (by_id[&p.a], by_id[&p.b]);
            let features = extract_features(
                &PairSide::from_ad(a, embeddings.get(&a.id)),
                &PairSide::from_ad(b, embeddings.get(&b.id)),
                p.same_agency,
            );
            let duplicate = match (truth.get(&p.a), truth.get(&p.b)) {
                (Some(ua), Some(ub)) => ua == ub,
                _ => false,
            };
            (p.same_agency, LabeledPair { features, duplicate })
        })
        .collect();

    let mut sets = TrainingSets::default();
    for (same_agency, pair) in labeled {
        if same_agency {
            sets.same_agency.push(pair);
        } else {
            sets.cross_agency.push(pair);
        }
    }
    sets
}

/// Seeded subsample down to `cap` pairs (0 = keep everything).
pub fn subsample(pairs: &[LabeledPair], cap: usize, seed: u64) -> Vec<LabeledPair> {
    if cap == 0 || pairs.len() <= cap {
        return pairs.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(cap);
    idx.sort_unstable();
    idx.into_iter().map(|i| pairs[i].clone()).collect()
}

/// Trains both models from the labeled sets, honoring the training cap.
pub fn train_model_pair(
    sets: &TrainingSets,
    config: &RunConfig,
) -> Result<TrainedModelPair, TrainError> {
    let params = TreeParams::from(&config.classifier);
    let cap = config.classifier.train_sample_cap;
    let seed = config.classifier.seed;
    let same = subsample(&sets.same_agency, cap, seed);
    let cross = subsample(&sets.cross_agency, cap, seed.wrapping_add(1));
    let model_same = train_tree(&same, &params)?;
    let model_cross = train_tree(&cross, &params)?;
    Ok(TrainedModelPair::new(model_same, model_cross, config.classifier.threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, GeneratorConfig};

    #[test]
    fn training_pairs_cover_both_routes_and_both_labels() {
        let config = GeneratorConfig {
            cities: 1,
            zones_per_city: 2,
            units_per_zone: 250,
            weeks: 12,
            entry_window_weeks: 6,
            ..GeneratorConfig::default()
        };
        let out = generate(&config, 21).unwrap();
        let ads = out.final_ads();
        let run = RunConfig::default();
        let sets = build_training_pairs(&ads, &out.truth.ad_to_unit, &run);
        assert!(!sets.same_agency.is_empty());
        assert!(!sets.cross_agency.is_empty());
        let (same_share, cross_share) = sets.duplicate_shares();
        assert!(same_share > 0.0 && same_share < 1.0, "same-agency share {same_share}");
        assert!(cross_share > 0.0 && cross_share < 1.0, "cross-agency share {cross_share}");

        let model = train_model_pair(&sets, &run).unwrap();
        // In-sample sanity: the model separates most labeled pairs.
        let mut correct = 0usize;
        let mut total = 0usize;
        for pair in sets.same_agency.iter().chain(&sets.cross_agency) {
            total += 1;
            if (model.predict_proba(&pair.features) > 0.5) == pair.duplicate {
                correct += 1;
            }
        }
        assert!(correct as f64 / total as f64 > 0.95, "{correct}/{total}");
    }

    #[test]
    fn subsample_is_seeded_and_capped() {
        let pairs: Vec<LabeledPair> = (0..100)
            .map(|i| {
                let mut f = crate::classifier::PairFeatures::empty(false);
                f.set(crate::classifier::FeatureId::GeoDistanceM, Some(i as f64));
                LabeledPair { features: f, duplicate: i % 2 == 0 }
            })
            .collect();
        let a = subsample(&pairs, 30, 7);
        let b = subsample(&pairs, 30, 7);
        assert_eq!(a.len(), 30);
        assert_eq!(a, b);
        let c = subsample(&pairs, 0, 7);
        assert_eq!(c.len(), 100);
    }
}
