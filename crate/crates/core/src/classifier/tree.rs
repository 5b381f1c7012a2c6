//! Gain-ratio decision trees with native missing-value handling.
//!
//! Splits are chosen by gain ratio over the rows where the split feature is
//! known; rows with a missing value are routed to both children with weight
//! proportional to the known mass on each side, at training and at
//! prediction time. Leaf probabilities are Laplace-smoothed, so a predicted
//! probability is always strictly inside (0, 1).
//!
//! Pruning is pessimistic error-based (upper binomial confidence bound,
//! default confidence 0.25). Boosting, when enabled, reweights instances
//! between rounds and averages stage probabilities by stage weight;
//! it is off by default.

use serde::{Deserialize, Serialize};

use super::features::{FeatureId, PairFeatures, ALL_FEATURES};
use crate::config::ClassifierConfig;

/// A training example: comparison vector plus a certain label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub features: PairFeatures,
    pub duplicate: bool,
}

/// Tree-growing hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub min_leaf: f64,
    pub max_depth: usize,
    pub prune: bool,
    pub pruning_confidence: f64,
    pub boost_rounds: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            min_leaf: 5.0,
            max_depth: 12,
            prune: true,
            pruning_confidence: 0.25,
            boost_rounds: 0,
        }
    }
}

impl From<&ClassifierConfig> for TreeParams {
    fn from(c: &ClassifierConfig) -> Self {
        TreeParams {
            min_leaf: c.min_leaf as f64,
            max_depth: c.max_depth,
            prune: c.prune,
            pruning_confidence: c.pruning_confidence,
            boost_rounds: c.boost_rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        dup_weight: f64,
        not_dup_weight: f64,
    },
    Split {
        feature: FeatureId,
        /// Known values `<= threshold` go left.
        threshold: f64,
        /// Fraction of known training mass that went left; missing values
        /// are routed fractionally with this weight.
        left_fraction: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    /// Laplace-smoothed duplicate probability.
    pub fn predict(&self, f: &PairFeatures) -> f64 {
        match self {
            Node::Leaf { dup_weight, not_dup_weight } => {
                (dup_weight + 1.0) / (dup_weight + not_dup_weight + 2.0)
            }
            Node::Split { feature, threshold, left_fraction, left, right } => {
                match f.get(*feature) {
                    Some(v) => {
                        if v <= *threshold {
                            left.predict(f)
                        } else {
                            right.predict(f)
                        }
                    }
                    None => {
                        left_fraction * left.predict(f) + (1.0 - left_fraction) * right.predict(f)
                    }
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// One boosting stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostStage {
    pub weight: f64,
    pub root: Node,
}

/// A trained classifier: a single tree, or a boosted ensemble of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub stages: Vec<BoostStage>,
}

impl DecisionTree {
    pub fn predict_proba(&self, f: &PairFeatures) -> f64 {
        let total: f64 = self.stages.iter().map(|s| s.weight).sum();
        self.stages.iter().map(|s| s.weight * s.root.predict(f)).sum::<f64>() / total
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("training sample is empty")]
    EmptySample,
    #[error("training sample contains a single class (need both duplicates and non-duplicates)")]
    SingleClass,
}

/// Trains a tree (or boosted ensemble) on labeled pairs.
pub fn train_tree(samples: &[LabeledPair], params: &TreeParams) -> Result<DecisionTree, TrainError> {
    if samples.len() < 2 {
        return Err(TrainError::EmptySample);
    }
    let n_pos = samples.iter().filter(|s| s.duplicate).count();
    if n_pos == 0 || n_pos == samples.len() {
        return Err(TrainError::SingleClass);
    }

    let columns = Columns::build(samples);
    let mut weights = vec![1.0f64; samples.len()];
    let mut stages = Vec::new();
    let rounds = params.boost_rounds.max(1);
    for _ in 0..rounds {
        let rows: Vec<(u32, f64)> =
            (0..samples.len()).map(|i| (i as u32, weights[i])).collect();
        let (root, _est) = grow(&columns, rows, 0, params);

        if params.boost_rounds == 0 {
            stages.push(BoostStage { weight: 1.0, root });
            break;
        }

        let total_w: f64 = weights.iter().sum();
        let mut err = 0.0;
        let mut miss = vec![false; samples.len()];
        for (i, s) in samples.iter().enumerate() {
            let wrong = (root.predict(&s.features) > 0.5) != s.duplicate;
            miss[i] = wrong;
            if wrong {
                err += weights[i];
            }
        }
        err /= total_w;

        if err < 1e-10 {
            stages.push(BoostStage { weight: 10.0, root });
            break;
        }
        if err >= 0.5 {
            if stages.is_empty() {
                stages.push(BoostStage { weight: 1.0, root });
            }
            break;
        }
        let alpha = ((1.0 - err) / err).ln();
        stages.push(BoostStage { weight: alpha, root });
        for i in 0..weights.len() {
            if miss[i] {
                weights[i] *= (1.0 - err) / err;
            }
        }
        let sum: f64 = weights.iter().sum();
        let scale = samples.len() as f64 / sum;
        for w in &mut weights {
            *w *= scale;
        }
    }

    Ok(DecisionTree { stages })
}

/// Columnar view of the training features.
struct Columns {
    values: Vec<Vec<Option<f64>>>,
    labels: Vec<bool>,
}

impl Columns {
    fn build(samples: &[LabeledPair]) -> Columns {
        let values = ALL_FEATURES
            .iter()
            .map(|f| samples.iter().map(|s| s.features.get(*f)).collect())
            .collect();
        Columns { values, labels: samples.iter().map(|s| s.duplicate).collect() }
    }
}

fn entropy2(p: f64, n: f64) -> f64 {
    let total = p + n;
    if total <= 0.0 {
        return 0.0;
    }
    let mut h = 0.0;
    for x in [p, n] {
        if x > 0.0 {
            let f = x / total;
            h -= f * f.log2();
        }
    }
    h
}

struct BestSplit {
    feature_idx: usize,
    threshold: f64,
    ratio: f64,
}

/// Drop fractional rows lighter than this; they no longer influence splits.
const MIN_ROW_WEIGHT: f64 = 1e-6;
const MIN_GAIN: f64 = 1e-12;

fn grow(columns: &Columns, rows: Vec<(u32, f64)>, depth: usize, params: &TreeParams) -> (Node, f64) {
    let mut pos_w = 0.0;
    let mut neg_w = 0.0;
    for (row, w) in &rows {
        if columns.labels[*row as usize] {
            pos_w += w;
        } else {
            neg_w += w;
        }
    }
    let total_w = pos_w + neg_w;

    let as_leaf = |pos_w: f64, neg_w: f64| {
        let est = add_errs(pos_w + neg_w, pos_w.min(neg_w), params.pruning_confidence);
        (Node::Leaf { dup_weight: pos_w, not_dup_weight: neg_w }, est)
    };

    if depth >= params.max_depth
        || total_w < 2.0 * params.min_leaf
        || pos_w < MIN_ROW_WEIGHT
        || neg_w < MIN_ROW_WEIGHT
    {
        return as_leaf(pos_w, neg_w);
    }

    let mut best: Option<BestSplit> = None;
    let mut scratch: Vec<(f64, f64, bool)> = Vec::with_capacity(rows.len());
    for (feature_idx, column) in columns.values.iter().enumerate() {
        scratch.clear();
        for (row, w) in &rows {
            if let Some(v) = column[*row as usize] {
                scratch.push((v, *w, columns.labels[*row as usize]));
            }
        }
        let known_w: f64 = scratch.iter().map(|(_, w, _)| w).sum();
        if known_w < 2.0 * params.min_leaf {
            continue;
        }
        scratch.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut known_pos = 0.0;
        let mut known_neg = 0.0;
        for (_, w, label) in &scratch {
            if *label {
                known_pos += w;
            } else {
                known_neg += w;
            }
        }
        let known_info = entropy2(known_pos, known_neg);
        let missing_w = total_w - known_w;

        let mut left_pos = 0.0;
        let mut left_neg = 0.0;
        for i in 0..scratch.len() - 1 {
            let (v, w, label) = scratch[i];
            if label {
                left_pos += w;
            } else {
                left_neg += w;
            }
            let next_v = scratch[i + 1].0;
            if next_v <= v {
                continue; // same value, not a boundary
            }
            let left_w = left_pos + left_neg;
            let right_w = known_w - left_w;
            if left_w < params.min_leaf || right_w < params.min_leaf {
                continue;
            }
            let info_split = (left_w / known_w) * entropy2(left_pos, left_neg)
                + (right_w / known_w) * entropy2(known_pos - left_pos, known_neg - left_neg);
            let gain = (known_w / total_w) * (known_info - info_split);
            if gain <= MIN_GAIN {
                continue;
            }
            // Split info over the branches, with the missing group as an
            // extra branch when present.
            let mut split_info = 0.0;
            for part in [left_w, right_w, missing_w] {
                if part > 0.0 {
                    let f = part / total_w;
                    split_info -= f * f.log2();
                }
            }
            if split_info <= 1e-9 {
                continue;
            }
            let ratio = gain / split_info;
            let threshold = v + (next_v - v) / 2.0;
            if best.as_ref().is_none_or(|b| ratio > b.ratio + 1e-12) {
                best = Some(BestSplit { feature_idx, threshold, ratio });
            }
        }
    }

    let Some(best) = best else {
        return as_leaf(pos_w, neg_w);
    };

    let column = &columns.values[best.feature_idx];
    let mut left_rows: Vec<(u32, f64)> = Vec::new();
    let mut right_rows: Vec<(u32, f64)> = Vec::new();
    let mut missing_rows: Vec<(u32, f64)> = Vec::new();
    let mut left_known_w = 0.0;
    let mut known_w = 0.0;
    for (row, w) in &rows {
        match column[*row as usize] {
            Some(v) => {
                known_w += w;
                if v <= best.threshold {
                    left_known_w += w;
                    left_rows.push((*row, *w));
                } else {
                    right_rows.push((*row, *w));
                }
            }
            None => missing_rows.push((*row, *w)),
        }
    }
    let left_fraction = left_known_w / known_w;
    for (row, w) in missing_rows {
        let lw = w * left_fraction;
        let rw = w * (1.0 - left_fraction);
        if lw > MIN_ROW_WEIGHT {
            left_rows.push((row, lw));
        }
        if rw > MIN_ROW_WEIGHT {
            right_rows.push((row, rw));
        }
    }

    let (left, left_est) = grow(columns, left_rows, depth + 1, params);
    let (right, right_est) = grow(columns, right_rows, depth + 1, params);
    let subtree_est = left_est + right_est;

    if params.prune {
        let leaf_est = add_errs(total_w, pos_w.min(neg_w), params.pruning_confidence);
        if leaf_est <= subtree_est + 0.1 {
            return as_leaf(pos_w, neg_w);
        }
    }

    (
        Node::Split {
            feature: ALL_FEATURES[best.feature_idx],
            threshold: best.threshold,
            left_fraction,
            left: Box::new(left),
            right: Box::new(right),
        },
        subtree_est,
    )
}

/// Pessimistic error estimate: upper confidence bound on the error count of
/// a node that misclassifies `e` out of `n` (weighted) training instances.
fn add_errs(n: f64, e: f64, cf: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    if e < 1e-9 {
        return n * (1.0 - cf.powf(1.0 / n));
    }
    if e >= n {
        return n;
    }
    let z = normal_quantile(1.0 - cf);
    let f = e / n;
    let u = (f + z * z / (2.0 * n) + z * (f * (1.0 - f) / n + z * z / (4.0 * n * n)).sqrt())
        / (1.0 + z * z / n);
    (u * n).clamp(e, n)
}

/// Inverse standard normal CDF (Acklam's rational approximation,
/// relative error below 1.15e-9 on (0, 1)).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::features::{FeatureId, PairFeatures};
    use approx::assert_abs_diff_eq;

    fn sample(dist: f64, price_rel: f64, duplicate: bool) -> LabeledPair {
        let mut f = PairFeatures::empty(false);
        f.set(FeatureId::GeoDistanceM, Some(dist));
        f.set(FeatureId::PriceRelDiff, Some(price_rel));
        LabeledPair { features: f, duplicate }
    }

    /// Exhaustive split-search oracle for a tiny support: evaluates gain
    /// ratio at every feature boundary the same way a hand calculation
    /// would, entirely independently of the grower.
    fn oracle_best_split(samples: &[LabeledPair]) -> (FeatureId, f64) {
        let mut best = (FeatureId::PriceRelDiff, f64::NAN, f64::NEG_INFINITY);
        for feat in ALL_FEATURES {
            let mut vals: Vec<(f64, bool)> = samples
                .iter()
                .filter_map(|s| s.features.get(feat).map(|v| (v, s.duplicate)))
                .collect();
            if vals.is_empty() {
                continue;
            }
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total_pos = vals.iter().filter(|(_, d)| *d).count() as f64;
            let total = vals.len() as f64;
            let h_root = entropy2(total_pos, total - total_pos);
            let mut distinct: Vec<f64> = vals.iter().map(|(v, _)| *v).collect();
            distinct.dedup();
            for w in distinct.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (mut lp, mut ln_) = (0.0, 0.0);
                for (v, d) in &vals {
                    if *v <= t {
                        if *d {
                            lp += 1.0;
                        } else {
                            ln_ += 1.0;
                        }
                    }
                }
                let lw = lp + ln_;
                let rw = total - lw;
                let rp = total_pos - lp;
                let rn = rw - rp;
                let gain = h_root - lw / total * entropy2(lp, ln_) - rw / total * entropy2(rp, rn);
                let split_info = entropy2(lw, rw);
                if split_info > 0.0 {
                    let ratio = gain / split_info;
                    if ratio > best.2 {
                        best = (feat, t, ratio);
                    }
                }
            }
        }
        (best.0, best.1)
    }

    #[test]
    fn noiseless_two_point_support_learns_a_distance_stump() {
        let mut samples = Vec::new();
        for _ in 0..50 {
            samples.push(sample(10.0, 0.0, true));
            samples.push(sample(1000.0, 0.0, false));
        }
        let tree = train_tree(&samples, &TreeParams::default()).unwrap();
        assert_eq!(tree.stages.len(), 1);
        let root = &tree.stages[0].root;
        match root {
            Node::Split { feature, threshold, .. } => {
                let (of, ot) = oracle_best_split(&samples);
                assert_eq!(*feature, of);
                assert_abs_diff_eq!(*threshold, ot, epsilon = 1e-9);
                assert_eq!(*feature, FeatureId::GeoDistanceM);
                assert_abs_diff_eq!(*threshold, 505.0, epsilon = 1e-9);
            }
            other => panic!("expected a stump, got {other:?}"),
        }
        // Laplace-smoothed leaves: (50+1)/(50+2) and (0+1)/(50+2).
        let dup = sample(10.0, 0.0, true);
        let not = sample(1000.0, 0.0, false);
        assert!(tree.predict_proba(&dup.features) > 0.98);
        assert!(tree.predict_proba(&not.features) < 0.02);
    }

    #[test]
    fn constant_features_yield_single_leaf_prior() {
        let mut samples = Vec::new();
        for i in 0..60 {
            samples.push(sample(100.0, 0.1, i % 3 == 0));
        }
        let tree = train_tree(&samples, &TreeParams::default()).unwrap();
        let root = &tree.stages[0].root;
        assert!(matches!(root, Node::Leaf { .. }));
        // 20 duplicates of 60: prior (20+1)/(60+2).
        assert_abs_diff_eq!(
            tree.predict_proba(&sample(1.0, 0.0, true).features),
            21.0 / 62.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn separable_training_set_reproduced_in_sample() {
        let mut samples = Vec::new();
        for i in 0..40 {
            let dist = if i % 2 == 0 { 5.0 + i as f64 } else { 600.0 + i as f64 };
            samples.push(sample(dist, 0.0, i % 2 == 0));
        }
        let tree = train_tree(&samples, &TreeParams::default()).unwrap();
        for s in &samples {
            assert_eq!(tree.predict_proba(&s.features) > 0.5, s.duplicate);
        }
    }

    #[test]
    fn leaf_probability_is_laplace_smoothed() {
        let leaf = Node::Leaf { dup_weight: 9.0, not_dup_weight: 1.0 };
        let f = PairFeatures::empty(false);
        assert_abs_diff_eq!(leaf.predict(&f), 5.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_values_routed_fractionally() {
        // Split on distance with 3/4 of the known mass on the left.
        let node = Node::Split {
            feature: FeatureId::GeoDistanceM,
            threshold: 100.0,
            left_fraction: 0.75,
            left: Box::new(Node::Leaf { dup_weight: 8.0, not_dup_weight: 0.0 }),
            right: Box::new(Node::Leaf { dup_weight: 0.0, not_dup_weight: 8.0 }),
        };
        let mut missing = PairFeatures::empty(false);
        missing.set(FeatureId::GeoDistanceM, None);
        let p_left = 9.0 / 10.0;
        let p_right = 1.0 / 10.0;
        assert_abs_diff_eq!(
            node.predict(&missing),
            0.75 * p_left + 0.25 * p_right,
            epsilon = 1e-12
        );
    }

    #[test]
    fn training_with_missing_values_still_separates() {
        // 10% of rows lose the split feature; they are routed to both
        // children at half weight ((45,5) and (5,45) leaves exactly).
        let mut samples = Vec::new();
        for i in 0..100 {
            let mut s = sample(if i % 2 == 0 { 10.0 } else { 900.0 }, 0.0, i % 2 == 0);
            if i % 5 == 0 {
                s.features.set(FeatureId::GeoDistanceM, None);
            }
            samples.push(s);
        }
        let tree = train_tree(&samples, &TreeParams::default()).unwrap();
        assert_abs_diff_eq!(
            tree.predict_proba(&sample(10.0, 0.0, true).features),
            46.0 / 52.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            tree.predict_proba(&sample(900.0, 0.0, false).features),
            6.0 / 52.0,
            epsilon = 1e-12
        );
        // A missing value at prediction time lands exactly between.
        let mut unknown = PairFeatures::empty(false);
        unknown.set(FeatureId::GeoDistanceM, None);
        assert_abs_diff_eq!(tree.predict_proba(&unknown), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_samples_rejected() {
        assert_eq!(train_tree(&[], &TreeParams::default()), Err(TrainError::EmptySample));
        let one_class: Vec<LabeledPair> = (0..10).map(|_| sample(1.0, 0.0, true)).collect();
        assert_eq!(train_tree(&one_class, &TreeParams::default()), Err(TrainError::SingleClass));
    }

    #[test]
    fn training_is_deterministic() {
        let mut samples = Vec::new();
        for i in 0..200 {
            samples.push(sample(
                (i * 37 % 211) as f64,
                (i % 7) as f64 / 10.0,
                (i * 37 % 211) < 100,
            ));
        }
        let a = train_tree(&samples, &TreeParams::default()).unwrap();
        let b = train_tree(&samples, &TreeParams::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn boosting_produces_weighted_stages() {
        let mut samples = Vec::new();
        for i in 0..240 {
            // Noisy labels so a single tree cannot be perfect.
            let dup = i % 2 == 0;
            let dist = if dup { 10.0 + (i % 40) as f64 * 20.0 } else { 200.0 + (i % 40) as f64 * 20.0 };
            samples.push(sample(dist, 0.0, dup));
        }
        let params = TreeParams { boost_rounds: 5, max_depth: 2, ..TreeParams::default() };
        let tree = train_tree(&samples, &params).unwrap();
        assert!(!tree.stages.is_empty());
        for s in &tree.stages {
            assert!(s.weight > 0.0);
        }
        let p = tree.predict_proba(&sample(15.0, 0.0, true).features);
        assert!(p > 0.5);
    }

    #[test]
    fn normal_quantile_reference_values() {
        assert_abs_diff_eq!(normal_quantile(0.75), 0.6744897501960817, epsilon = 1e-8);
        assert_abs_diff_eq!(normal_quantile(0.975), 1.959963984540054, epsilon = 1e-8);
        assert_abs_diff_eq!(normal_quantile(0.5), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_quantile(0.25), -0.6744897501960817, epsilon = 1e-8);
    }

    #[test]
    fn pruning_collapses_noise_splits() {
        // Labels independent of features: everything should prune to the
        // class prior.
        let mut samples = Vec::new();
        for i in 0..400 {
            samples.push(sample(((i * 7919) % 997) as f64, 0.0, (i * 31 % 17) < 8));
        }
        let pruned = train_tree(&samples, &TreeParams::default()).unwrap();
        let unpruned =
            train_tree(&samples, &TreeParams { prune: false, ..TreeParams::default() }).unwrap();
        assert!(pruned.stages[0].root.leaf_count() <= unpruned.stages[0].root.leaf_count());
    }
}
