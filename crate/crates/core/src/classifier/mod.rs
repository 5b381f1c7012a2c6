//! Pair classification: comparison features, trainable decision trees, and
//! the Monte Carlo evaluation harness.
//!
//! Two separate models are trained, one for pairs posted by the same agency
//! and one for cross-agency pairs. Same-agency duplicates are near-identical
//! while cross-agency duplicates only partially agree, so a single model
//! would over-call duplicates within an agency.

pub mod eval;
pub mod features;
pub mod training;
pub mod tree;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use eval::{confusion_counts, evaluate_monte_carlo, Confusion, EvalError, EvalReport};
pub use training::{build_training_pairs, train_model_pair, TrainingSets};
pub use features::{extract_features, FeatureId, PairFeatures, PairSide, ALL_FEATURES};
pub use tree::{train_tree, DecisionTree, LabeledPair, TrainError, TreeParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// The two duplicate classifiers plus the decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModelPair {
    pub format_version: u32,
    pub model_same_agency: DecisionTree,
    pub model_cross_agency: DecisionTree,
    /// Pairs with probability strictly above this are duplicates.
    pub threshold: f64,
}

impl TrainedModelPair {
    pub fn new(same_agency: DecisionTree, cross_agency: DecisionTree, threshold: f64) -> Self {
        TrainedModelPair {
            format_version: MODEL_FORMAT_VERSION,
            model_same_agency: same_agency,
            model_cross_agency: cross_agency,
            threshold,
        }
    }

    /// Duplicate probability; routes to the same-agency model iff the
    /// feature vector carries the same-agency flag.
    pub fn predict_proba(&self, f: &PairFeatures) -> f64 {
        if f.same_agency {
            self.model_same_agency.predict_proba(f)
        } else {
            self.model_cross_agency.predict_proba(f)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelIoError> {
        let model: TrainedModelPair = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelIoError::Version(model.format_version));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelIoError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| ModelIoError::Io { path: path.display().to_string(), source: e })
    }

    pub fn load(path: &Path) -> Result<Self, ModelIoError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelIoError::Io { path: path.display().to_string(), source: e })?;
        Self::from_json(&text)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelIoError {
    #[error("cannot access model file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("model file does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported model format version {0}")]
    Version(u32),
}

/// A pair that classified as duplicate, with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair<I> {
    pub a: I,
    pub b: I,
    pub probability: f64,
}

/// Scores every candidate and keeps the pairs with probability strictly
/// above the model threshold. Parallel over pairs; output order follows
/// input order, so results are independent of worker count.
pub fn classify<I: Clone + Send + Sync>(
    model: &TrainedModelPair,
    pairs: &[(I, I, PairFeatures)],
) -> Vec<ScoredPair<I>> {
    pairs
        .par_iter()
        .filter_map(|(a, b, f)| {
            let probability = model.predict_proba(f);
            (probability > model.threshold).then(|| ScoredPair {
                a: a.clone(),
                b: b.clone(),
                probability,
            })
        })
        .collect()
}
