//! Classification performance without true negatives.
//!
//! Non-duplicates vastly outnumber duplicates, so plain accuracy is
//! uninformative; everything here is precision / recall / F-measure. The
//! Monte Carlo harness repeats random stratified train/test splits and
//! averages the three rates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{train_tree, LabeledPair, TrainError, TreeParams};

/// Confusion counts over the positive (duplicate) class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

impl Confusion {
    /// TP / (TP + FP); defined as 1 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        let denom = self.true_positives + self.false_positives;
        if denom == 0 {
            1.0
        } else {
            self.true_positives as f64 / denom as f64
        }
    }

    /// TP / (TP + FN); defined as 1 when there are no actual positives.
    pub fn recall(&self) -> f64 {
        let denom = self.true_positives + self.false_negatives;
        if denom == 0 {
            1.0
        } else {
            self.true_positives as f64 / denom as f64
        }
    }

    /// Harmonic mean of precision and recall.
    pub fn f_measure(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn no_predicted_positives(&self) -> bool {
        self.true_positives + self.false_positives == 0
    }
}

/// Metrics of a single Monte Carlo repetition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Averaged Monte Carlo evaluation of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub repetitions: usize,
    pub train_fraction: f64,
    pub per_repetition: Vec<RepetitionResult>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("cannot stratify: class with {0} samples (need at least 2 per class)")]
    DegenerateSplit(usize),
    #[error("train fraction {0} leaves an empty side")]
    BadFraction(f64),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Scores predicted duplicate flags against labels.
pub fn confusion_counts(predicted: &[bool], actual: &[bool]) -> Confusion {
    let mut c = Confusion::default();
    for (p, a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => c.true_positives += 1,
            (true, false) => c.false_positives += 1,
            (false, true) => c.false_negatives += 1,
            (false, false) => {}
        }
    }
    c
}

/// Repeats `repetitions` random stratified splits (`train_fraction` of each
/// class used for training), trains a tree per split, and averages
/// precision/recall/F on the held-out side. Deterministic given the seed.
pub fn evaluate_monte_carlo(
    samples: &[LabeledPair],
    params: &TreeParams,
    repetitions: usize,
    train_fraction: f64,
    threshold: f64,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(EvalError::BadFraction(train_fraction));
    }
    let mut pos_idx: Vec<usize> = Vec::new();
    let mut neg_idx: Vec<usize> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if s.duplicate {
            pos_idx.push(i);
        } else {
            neg_idx.push(i);
        }
    }
    for class in [&pos_idx, &neg_idx] {
        if class.len() < 2 {
            return Err(EvalError::DegenerateSplit(class.len()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_repetition = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in [&mut pos_idx, &mut neg_idx] {
            class.shuffle(&mut rng);
            // At least one sample on each side of the split per class.
            let n_train = ((class.len() as f64 * train_fraction).floor() as usize)
                .clamp(1, class.len() - 1);
            train.extend(class[..n_train].iter().copied());
            test.extend(class[n_train..].iter().copied());
        }
        train.sort_unstable();
        test.sort_unstable();

        let train_set: Vec<LabeledPair> = train.iter().map(|&i| samples[i].clone()).collect();
        let tree = train_tree(&train_set, params)?;

        let predicted: Vec<bool> =
            test.iter().map(|&i| tree.predict_proba(&samples[i].features) > threshold).collect();
        let actual: Vec<bool> = test.iter().map(|&i| samples[i].duplicate).collect();
        let confusion = confusion_counts(&predicted, &actual);
        per_repetition.push(RepetitionResult {
            confusion,
            precision: confusion.precision(),
            recall: confusion.recall(),
            f_measure: confusion.f_measure(),
        });
    }

    let n = per_repetition.len() as f64;
    Ok(EvalReport {
        precision: per_repetition.iter().map(|r| r.precision).sum::<f64>() / n,
        recall: per_repetition.iter().map(|r| r.recall).sum::<f64>() / n,
        f_measure: per_repetition.iter().map(|r| r.f_measure).sum::<f64>() / n,
        repetitions,
        train_fraction,
        per_repetition,
    })
}
