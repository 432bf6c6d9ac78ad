//! Autonomy gate: distance and confidence thresholds, and the per-decision
//! choice between acting autonomously and asking for a demonstration.
//!
//! The agent acts on its own only when the classification confidence is
//! strictly above the threshold of the winning decision boundary *and* the
//! state is strictly closer than `tau_dist` to some prior demonstration.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::policy::{BoundaryId, Classification, GmmPolicy, ModelConfig};
use crate::seed::{derive_seed, rng_from};
use crate::state::{Action, StateVector, TrainingPoint};

mod boundary_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::policy::BoundaryId;

    pub fn serialize<S: Serializer>(m: &BTreeMap<BoundaryId, f64>, s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(BoundaryId, f64)> = m.iter().map(|(&k, &v)| (k, v)).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<BoundaryId, f64>, D::Error> {
        Ok(Vec::<(BoundaryId, f64)>::deserialize(d)?.into_iter().collect())
    }
}

/// How confidence thresholds are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// One hand-picked value for every boundary.
    SingleFixed,
    /// One value per boundary, learned from held-out misclassifications.
    MultipleAdjustable,
    /// Every classification passes (corrections-only learning).
    AllPass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    #[serde(with = "crate::serde_f64")]
    pub tau_dist: f64,
    pub mode: ThresholdMode,
    pub tau_conf_fixed: f64,
    /// Written as `[[boundary, tau], ...]`: integer map keys do not survive
    /// serde's buffered (flattened or tagged) paths.
    #[serde(with = "boundary_pairs")]
    pub tau_conf_by_boundary: BTreeMap<BoundaryId, f64>,
    /// Set before any classifier exists: every query requests a demonstration.
    pub sentinel_infinite: bool,
}

impl ThresholdSet {
    /// `tau_conf = inf`, `tau_dist = 0`.
    pub fn initial(mode: ThresholdMode) -> Self {
        ThresholdSet {
            tau_dist: 0.0,
            mode,
            tau_conf_fixed: 0.0,
            tau_conf_by_boundary: BTreeMap::new(),
            sentinel_infinite: true,
        }
    }

    pub fn single_fixed(tau_dist: f64, tau_conf: f64) -> Self {
        ThresholdSet {
            tau_dist,
            mode: ThresholdMode::SingleFixed,
            tau_conf_fixed: tau_conf,
            tau_conf_by_boundary: BTreeMap::new(),
            sentinel_infinite: false,
        }
    }

    pub fn multiple(tau_dist: f64, by_boundary: BTreeMap<BoundaryId, f64>) -> Self {
        ThresholdSet {
            tau_dist,
            mode: ThresholdMode::MultipleAdjustable,
            tau_conf_fixed: 0.0,
            tau_conf_by_boundary: by_boundary,
            sentinel_infinite: false,
        }
    }

    pub fn all_pass() -> Self {
        ThresholdSet {
            tau_dist: f64::INFINITY,
            mode: ThresholdMode::AllPass,
            tau_conf_fixed: 0.0,
            tau_conf_by_boundary: BTreeMap::new(),
            sentinel_infinite: false,
        }
    }

    /// Confidence threshold that applies to a boundary, `None` when the query
    /// must be forced to a demonstration.
    pub fn confidence_threshold(&self, boundary: BoundaryId) -> Option<f64> {
        if self.sentinel_infinite {
            return None;
        }
        match self.mode {
            ThresholdMode::SingleFixed => Some(self.tau_conf_fixed),
            ThresholdMode::MultipleAdjustable => self.tau_conf_by_boundary.get(&boundary).copied(),
            ThresholdMode::AllPass => Some(f64::NEG_INFINITY),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision", content = "action")]
pub enum GateDecision {
    Autonomous(Action),
    RequestDemonstration,
}

/// How misclassified confidences are folded into one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
    MeanPlusSigma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub distance_multiplier: f64,
    /// Fraction of each class kept for training the threshold model.
    pub split_ratio: f64,
    pub aggregation: Aggregation,
    /// Threshold used in single-fixed mode.
    pub fixed_threshold: f64,
    pub split_seed: u64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            distance_multiplier: 3.0,
            split_ratio: 0.7,
            aggregation: Aggregation::Mean,
            fixed_threshold: 0.8,
            split_seed: 0,
        }
    }
}

/// Distance to the closest demonstration; `+inf` for an empty dataset.
pub fn nearest_neighbor_distance(dataset: &[TrainingPoint], s: &StateVector) -> f64 {
    let q = s.features();
    let mut best = f64::INFINITY;
    for p in dataset {
        let f = p.state.features();
        let d2: f64 = q.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 < best {
            best = d2;
        }
    }
    best.sqrt()
}

/// Mean over points of the distance to the nearest *other* point.
pub fn mean_nearest_neighbor_distance(dataset: &[TrainingPoint]) -> Option<f64> {
    if dataset.len() < 2 {
        return None;
    }
    let feats: Vec<_> = dataset.iter().map(|p| p.state.features()).collect();
    let mut total = 0.0;
    for (i, a) in feats.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, b) in feats.iter().enumerate() {
            if i == j {
                continue;
            }
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            best = best.min(d2);
        }
        total += best.sqrt();
    }
    Some(total / dataset.len() as f64)
}

/// `multiplier × mean nearest-neighbor distance`; 0 with fewer than two points.
pub fn compute_distance_threshold(dataset: &[TrainingPoint], multiplier: f64) -> f64 {
    mean_nearest_neighbor_distance(dataset).map_or(0.0, |m| multiplier * m)
}

pub fn aggregate(confidences: &[f64], how: Aggregation) -> f64 {
    if confidences.is_empty() {
        return 0.0;
    }
    let n = confidences.len() as f64;
    let mean = confidences.iter().sum::<f64>() / n;
    match how {
        Aggregation::Mean => mean,
        Aggregation::Max => confidences.iter().copied().fold(0.0, f64::max),
        Aggregation::MeanPlusSigma => {
            let var = confidences.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
            (mean + var.sqrt()).min(1.0)
        }
    }
}

/// Per-boundary thresholds from labelled test classifications: for each
/// boundary, aggregate the confidences of the points it misclassified. Every
/// boundary in `boundaries` without a misclassification maps to 0.
pub fn misclassification_thresholds(
    classified: &[(Action, Classification)],
    boundaries: impl IntoIterator<Item = BoundaryId>,
    how: Aggregation,
) -> BTreeMap<BoundaryId, f64> {
    let mut wrong: BTreeMap<BoundaryId, Vec<f64>> = BTreeMap::new();
    for (truth, c) in classified {
        if c.action != *truth {
            wrong.entry(c.boundary_id).or_default().push(c.confidence);
        }
    }
    let mut out: BTreeMap<BoundaryId, f64> = boundaries.into_iter().map(|b| (b, 0.0)).collect();
    for (b, confs) in wrong {
        out.insert(b, aggregate(&confs, how));
    }
    out
}

/// Stratified split: each class is shuffled and `ratio` of it kept for
/// training. Classes with at least two points always contribute to both sides.
pub fn stratified_split(
    dataset: &[TrainingPoint],
    ratio: f64,
    seed: u64,
) -> (Vec<TrainingPoint>, Vec<TrainingPoint>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for action in Action::ALL {
        let mut members: Vec<&TrainingPoint> =
            dataset.iter().filter(|p| p.action == action).collect();
        if members.is_empty() {
            continue;
        }
        let mut rng = rng_from(seed, &[action.index() as u64]);
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = if n == 1 {
            1
        } else {
            ((ratio * n as f64).round() as usize).clamp(1, n - 1)
        };
        train.extend(members[..n_train].iter().copied().copied());
        test.extend(members[n_train..].iter().copied().copied());
    }
    (train, test)
}

fn sq_dist(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Moves thresholds learned on a split model onto the deployed model. Each
/// split boundary hands its value to the deployed boundary of the same class
/// with the nearest mean (keeping the larger value on collisions); deployed
/// boundaries nobody maps to inherit their class's maximum.
pub fn transfer_thresholds(
    split_model: &GmmPolicy,
    split_thresholds: &BTreeMap<BoundaryId, f64>,
    deployed: &GmmPolicy,
) -> BTreeMap<BoundaryId, f64> {
    let mut assigned: BTreeMap<BoundaryId, f64> = BTreeMap::new();
    for class in split_model.classes() {
        let Some(target) = deployed.classes().iter().find(|c| c.action == class.action) else {
            continue;
        };
        for b in &class.boundaries {
            let tau = split_thresholds.get(&b.id).copied().unwrap_or(0.0);
            let mean = b.component.gaussian.mean();
            let nearest = target
                .boundaries
                .iter()
                .min_by(|x, y| {
                    sq_dist(&x.component.gaussian.mean(), &mean)
                        .total_cmp(&sq_dist(&y.component.gaussian.mean(), &mean))
                })
                .expect("deployed classes have components");
            let e = assigned.entry(nearest.id).or_insert(0.0);
            *e = e.max(tau);
        }
    }
    let global_max = split_thresholds.values().copied().fold(0.0, f64::max);
    let mut out = BTreeMap::new();
    for class in deployed.classes() {
        let class_vals: Vec<f64> = class
            .boundaries
            .iter()
            .filter_map(|b| assigned.get(&b.id).copied())
            .collect();
        let fallback = if class_vals.is_empty() {
            global_max
        } else {
            class_vals.iter().copied().fold(0.0, f64::max)
        };
        for b in &class.boundaries {
            out.insert(b.id, assigned.get(&b.id).copied().unwrap_or(fallback));
        }
    }
    out
}

/// Intermediate results of one threshold estimation, kept for inspection.
#[derive(Debug, Clone)]
pub struct ThresholdEstimate {
    pub split_model: Option<GmmPolicy>,
    pub split_thresholds: BTreeMap<BoundaryId, f64>,
    pub test_classifications: Vec<(Action, Classification)>,
    /// Thresholds keyed by the deployed model's boundaries.
    pub thresholds: BTreeMap<BoundaryId, f64>,
}

/// Learns one confidence threshold per boundary of `deployed`: fit on a
/// stratified split, classify the held-out part, aggregate the confidences of
/// misclassified points per boundary, and transfer to the deployed model.
pub fn estimate_confidence_thresholds(
    dataset: &[TrainingPoint],
    model_config: &ModelConfig,
    gate: &GateConfig,
    retrain_index: u64,
    deployed: &GmmPolicy,
) -> Result<ThresholdEstimate> {
    let zeros = || deployed.boundary_ids().map(|b| (b, 0.0)).collect();
    let classes = Action::ALL
        .iter()
        .filter(|a| dataset.iter().any(|p| p.action == **a))
        .count();
    if classes < 2 {
        return Ok(ThresholdEstimate {
            split_model: None,
            split_thresholds: BTreeMap::new(),
            test_classifications: Vec::new(),
            thresholds: zeros(),
        });
    }
    let (train, test) = stratified_split(
        dataset,
        gate.split_ratio,
        derive_seed(gate.split_seed, &[retrain_index]),
    );
    let split_cfg = model_config.with_seed(derive_seed(model_config.seed, &[0x5911_7000]));
    let split_model = GmmPolicy::fit(&train, &split_cfg)?;
    let test_classifications: Vec<(Action, Classification)> = test
        .iter()
        .map(|p| (p.action, split_model.classify(&p.state)))
        .collect();
    let split_thresholds = misclassification_thresholds(
        &test_classifications,
        split_model.boundary_ids(),
        gate.aggregation,
    );
    let thresholds = transfer_thresholds(&split_model, &split_thresholds, deployed);
    Ok(ThresholdEstimate {
        split_model: Some(split_model),
        split_thresholds,
        test_classifications,
        thresholds,
    })
}

pub fn compute_confidence_thresholds(
    dataset: &[TrainingPoint],
    model_config: &ModelConfig,
    gate: &GateConfig,
    retrain_index: u64,
    deployed: &GmmPolicy,
) -> Result<BTreeMap<BoundaryId, f64>> {
    Ok(estimate_confidence_thresholds(dataset, model_config, gate, retrain_index, deployed)?.thresholds)
}

/// Autonomous iff `c > tau_conf(db)` and `d < tau_dist`, both strict.
pub fn decide(classification: &Classification, d: f64, thresholds: &ThresholdSet) -> GateDecision {
    if thresholds.sentinel_infinite {
        return GateDecision::RequestDemonstration;
    }
    let Some(tau) = thresholds.confidence_threshold(classification.boundary_id) else {
        log::warn!(
            "no confidence threshold for boundary {}; requesting a demonstration",
            classification.boundary_id
        );
        return GateDecision::RequestDemonstration;
    };
    if classification.confidence > tau && d < thresholds.tau_dist {
        GateDecision::Autonomous(classification.action)
    } else {
        GateDecision::RequestDemonstration
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::DemoSource;

    fn tp(s: StateVector, a: Action) -> TrainingPoint {
        TrainingPoint {
            state: s,
            action: a,
            sequence_id: 0,
            source: DemoSource::CeRequest,
        }
    }

    fn cls(c: f64, b: BoundaryId) -> Classification {
        Classification {
            action: Action::Left,
            confidence: c,
            boundary_id: b,
        }
    }

    #[test]
    fn empty_dataset_distance_is_infinite() {
        assert_eq!(
            nearest_neighbor_distance(&[], &StateVector::new(2, 0.0, 0.0, 0.0)),
            f64::INFINITY
        );
    }

    #[test]
    fn distance_threshold_on_hand_datasets() {
        let a = StateVector::new(2, 0.0, 0.0, 0.0);
        // single point: stays at the initial 0
        assert_eq!(compute_distance_threshold(&[tp(a, Action::Forward)], 3.0), 0.0);
        // 10 raw units = 0.2 normalized; three collinear points 0.2 apart
        let pts: Vec<_> = [0.0, 10.0, 20.0]
            .iter()
            .map(|&d| tp(StateVector::new(2, d, 0.0, 0.0), Action::Forward))
            .collect();
        let t = compute_distance_threshold(&pts, 3.0);
        assert!((t - 0.6).abs() < 1e-12, "{t}");
    }

    #[test]
    fn mean_of_misclassified_confidences() {
        let classified = vec![
            (Action::Forward, cls(0.6, 3)),
            (Action::Right, cls(0.8, 3)),
            (Action::Left, cls(0.99, 3)),
            (Action::Left, cls(0.9, 1)),
        ];
        let t = misclassification_thresholds(&classified, [1, 3, 4], Aggregation::Mean);
        assert!((t[&3] - 0.7).abs() < 1e-12);
        assert_eq!(t[&1], 0.0);
        assert_eq!(t[&4], 0.0);
        let tmax = misclassification_thresholds(&classified, [3], Aggregation::Max);
        assert_eq!(tmax[&3], 0.8);
        let tsig = misclassification_thresholds(&classified, [3], Aggregation::MeanPlusSigma);
        assert!((tsig[&3] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn decide_follows_strict_inequalities() {
        let fresh = ThresholdSet::initial(ThresholdMode::MultipleAdjustable);
        assert_eq!(decide(&cls(1.0, 0), 0.0, &fresh), GateDecision::RequestDemonstration);

        let t = ThresholdSet::multiple(6.0, BTreeMap::from([(0, 0.5)]));
        assert_eq!(decide(&cls(0.9, 0), 1.0, &t), GateDecision::Autonomous(Action::Left));
        assert_eq!(decide(&cls(0.9, 0), 6.0, &t), GateDecision::RequestDemonstration);
        assert_eq!(decide(&cls(0.5, 0), 1.0, &t), GateDecision::RequestDemonstration);
        // unknown boundary forces a demonstration
        assert_eq!(decide(&cls(0.9, 7), 1.0, &t), GateDecision::RequestDemonstration);

        let all = ThresholdSet::all_pass();
        assert_eq!(decide(&cls(0.34, 9), 1e9, &all), GateDecision::Autonomous(Action::Left));
    }

    #[test]
    fn stratified_split_keeps_both_sides_per_class() {
        let mut data = Vec::new();
        for i in 0..10 {
            data.push(tp(StateVector::new(1, i as f64, 0.0, 0.0), Action::Left));
        }
        for i in 0..3 {
            data.push(tp(StateVector::new(3, i as f64, 0.0, 0.0), Action::Right));
        }
        data.push(tp(StateVector::new(2, 0.0, 0.0, 0.0), Action::Forward));
        let (train, test) = stratified_split(&data, 0.7, 5);
        let count = |v: &[TrainingPoint], a| v.iter().filter(|p| p.action == a).count();
        assert_eq!(count(&train, Action::Left), 7);
        assert_eq!(count(&test, Action::Left), 3);
        assert_eq!(count(&train, Action::Right), 2);
        assert_eq!(count(&test, Action::Right), 1);
        assert_eq!(count(&train, Action::Forward), 1);
        assert_eq!(count(&test, Action::Forward), 0);
        assert_eq!(stratified_split(&data, 0.7, 5).0, train);
    }

    #[test]
    fn threshold_set_serializes_infinities() {
        let t = ThresholdSet::all_pass();
        let j = serde_json::to_string(&t).unwrap();
        let back: ThresholdSet = serde_json::from_str(&j).unwrap();
        assert_eq!(back, t);
    }
}
