//! Sensed state, actions and demonstration records.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Number of lanes on the road, shoulders included.
pub const LANE_COUNT: u8 = 5;
/// Sensor range; every distance feature is clipped to `[-RANGE, RANGE]`.
pub const SENSOR_RANGE: f64 = 25.0;
/// Dimension of the feature space the classifier works in.
pub const FEATURE_DIM: usize = 4;

/// The three discrete driving actions.
///
/// The derived ordering (`Forward < Left < Right`) is the tie-breaking order
/// used everywhere a choice between actions must be deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Forward,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Forward, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Forward => 0,
            Action::Left => 1,
            Action::Right => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::Left => "left",
            Action::Right => "right",
        }
    }

    /// Lateral direction of the action: -1 for left, +1 for right.
    pub fn lane_delta(self) -> i8 {
        match self {
            Action::Forward => 0,
            Action::Left => -1,
            Action::Right => 1,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "forward" => Ok(Action::Forward),
            "left" => Ok(Action::Left),
            "right" => Ok(Action::Right),
            other => Err(Error::InvalidAction(other.to_string())),
        }
    }
}

/// What the agent senses each timestep: its lane and the signed distance to
/// the nearest car in the lanes to its left, its own lane and to its right.
/// Negative distances mean the car is behind the agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub lane: u8,
    pub d_left: f64,
    pub d_center: f64,
    pub d_right: f64,
}

impl StateVector {
    /// Builds a state, clamping the lane to the road and the distances to the
    /// sensor range.
    pub fn new(lane: u8, d_left: f64, d_center: f64, d_right: f64) -> Self {
        StateVector {
            lane: lane.min(LANE_COUNT - 1),
            d_left: clip_distance(d_left),
            d_center: clip_distance(d_center),
            d_right: clip_distance(d_right),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lane < LANE_COUNT
            && [self.d_left, self.d_center, self.d_right]
                .iter()
                .all(|d| d.is_finite() && d.abs() <= SENSOR_RANGE)
    }

    /// Raw feature vector `[lane, d_left, d_center, d_right]`.
    pub fn raw(&self) -> [f64; FEATURE_DIM] {
        [self.lane as f64, self.d_left, self.d_center, self.d_right]
    }

    /// Features mapped into the unit hypercube with the fixed domain scaler.
    pub fn features(&self) -> [f64; FEATURE_DIM] {
        FeatureScaler::DOMAIN.apply(&self.raw())
    }
}

pub fn clip_distance(d: f64) -> f64 {
    if d.is_nan() {
        SENSOR_RANGE
    } else {
        d.clamp(-SENSOR_RANGE, SENSOR_RANGE)
    }
}

/// Per-feature affine map `x -> (x - offset) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub offset: [f64; FEATURE_DIM],
    pub scale: [f64; FEATURE_DIM],
}

impl FeatureScaler {
    /// Lane over 4, distances `(d + 25) / 50`.
    pub const DOMAIN: FeatureScaler = FeatureScaler {
        offset: [0.0, -SENSOR_RANGE, -SENSOR_RANGE, -SENSOR_RANGE],
        scale: [
            1.0 / (LANE_COUNT as f64 - 1.0),
            1.0 / (2.0 * SENSOR_RANGE),
            1.0 / (2.0 * SENSOR_RANGE),
            1.0 / (2.0 * SENSOR_RANGE),
        ],
    };

    pub fn apply(&self, raw: &[f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            out[i] = (raw[i] - self.offset[i]) * self.scale[i];
        }
        out
    }
}

/// Where a demonstration came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoSource {
    InitSession,
    CeRequest,
    Corrective,
}

/// One labelled demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingPoint {
    pub state: StateVector,
    pub action: Action,
    pub sequence_id: u64,
    pub source: DemoSource,
}

/// Euclidean distance between two states in normalized feature space.
pub fn feature_distance(a: &StateVector, b: &StateVector) -> f64 {
    let fa = a.features();
    let fb = b.features();
    fa.iter()
        .zip(fb.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_order_is_forward_left_right() {
        assert!(Action::Forward < Action::Left);
        assert!(Action::Left < Action::Right);
        for a in Action::ALL {
            assert_eq!(Action::from_index(a.index()), Some(a));
            assert_eq!(a.as_str().parse::<Action>().unwrap(), a);
        }
        assert!("up".parse::<Action>().is_err());
    }

    #[test]
    fn constructor_clips_to_sensor_range() {
        let s = StateVector::new(9, 30.0, -40.0, 3.0);
        assert_eq!(s.lane, 4);
        assert_eq!(s.d_left, 25.0);
        assert_eq!(s.d_center, -25.0);
        assert!(s.is_valid());
    }

    #[test]
    fn domain_scaler_maps_ranges_to_unit_interval() {
        let lo = StateVector::new(0, -25.0, -25.0, -25.0).features();
        let hi = StateVector::new(4, 25.0, 25.0, 25.0).features();
        assert_eq!(lo, [0.0; 4]);
        assert_eq!(hi, [1.0; 4]);
    }

    #[test]
    fn feature_distance_on_single_axis() {
        // 15 raw units on a distance axis is 0.3 in normalized space.
        let a = StateVector::new(2, 0.0, 0.0, 0.0);
        let b = StateVector::new(2, 15.0, 0.0, 0.0);
        assert!((feature_distance(&a, &b) - 0.3).abs() < 1e-12);
    }
}
