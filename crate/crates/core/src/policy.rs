//! Action classifier: one Gaussian mixture per action class.
//!
//! `classify` returns the triple the autonomy gate needs: the selected action,
//! a confidence in `[0, 1]` (the class posterior, with priors taken from class
//! frequencies) and the decision boundary credited with the decision (the
//! winning class's component with the highest responsibility).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{fit_bic, log_sum_exp, Component, EmConfig, Gaussian, Point};
use crate::seed::derive_seed;
use crate::state::{Action, FeatureScaler, StateVector, TrainingPoint, FEATURE_DIM};

pub type BoundaryId = u32;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub em: EmConfig,
    /// Seed for this fit; the engine derives one per retrain.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            em: EmConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub action: Action,
    pub confidence: f64,
    pub boundary_id: BoundaryId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    pub id: BoundaryId,
    pub component: Component,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMixture {
    pub action: Action,
    pub prior: f64,
    pub boundaries: Vec<Boundary>,
}

impl ClassMixture {
    fn log_density(&self, x: &Point) -> f64 {
        log_sum_exp(&self.weighted(x))
    }

    fn weighted(&self, x: &Point) -> Vec<f64> {
        self.boundaries
            .iter()
            .map(|b| b.component.weight.ln() + b.component.gaussian.log_pdf(x))
            .collect()
    }
}

/// A fitted policy. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PolicySnapshot", try_from = "PolicySnapshot")]
pub struct GmmPolicy {
    classes: Vec<ClassMixture>,
    scaler: FeatureScaler,
}

impl GmmPolicy {
    /// Fits the policy on demonstrations, in the fixed domain feature scaling.
    pub fn fit(dataset: &[TrainingPoint], config: &ModelConfig) -> Result<GmmPolicy> {
        let raw: Vec<([f64; FEATURE_DIM], Action)> =
            dataset.iter().map(|p| (p.state.raw(), p.action)).collect();
        Self::fit_raw(&raw, FeatureScaler::DOMAIN, config)
    }

    /// Fits on raw feature vectors with an explicit scaler.
    pub fn fit_raw(
        samples: &[([f64; FEATURE_DIM], Action)],
        scaler: FeatureScaler,
        config: &ModelConfig,
    ) -> Result<GmmPolicy> {
        if samples.is_empty() {
            return Err(Error::ModelUnavailable("empty dataset".into()));
        }
        let total = samples.len() as f64;
        let mut classes = Vec::new();
        let mut next_id: BoundaryId = 0;
        for action in Action::ALL {
            let data: Vec<Point> = samples
                .iter()
                .filter(|(_, a)| *a == action)
                .map(|(x, _)| scaler.apply(x))
                .collect();
            if data.is_empty() {
                continue;
            }
            let fit = fit_bic(&data, &config.em, derive_seed(config.seed, &[action.index() as u64]));
            let boundaries = fit
                .mixture
                .components
                .into_iter()
                .map(|component| {
                    let b = Boundary {
                        id: next_id,
                        component,
                    };
                    next_id += 1;
                    b
                })
                .collect();
            classes.push(ClassMixture {
                action,
                prior: data.len() as f64 / total,
                boundaries,
            });
        }
        Ok(GmmPolicy { classes, scaler })
    }

    pub fn classes(&self) -> &[ClassMixture] {
        &self.classes
    }

    pub fn scaler(&self) -> &FeatureScaler {
        &self.scaler
    }

    pub fn component_count(&self) -> usize {
        self.classes.iter().map(|c| c.boundaries.len()).sum()
    }

    pub fn boundary_ids(&self) -> impl Iterator<Item = BoundaryId> + '_ {
        self.classes
            .iter()
            .flat_map(|c| c.boundaries.iter().map(|b| b.id))
    }

    /// Owning action and parameters of a boundary.
    pub fn boundary(&self, id: BoundaryId) -> Option<(Action, &Boundary)> {
        self.classes.iter().find_map(|c| {
            c.boundaries
                .iter()
                .find(|b| b.id == id)
                .map(|b| (c.action, b))
        })
    }

    /// Class posteriors indexed by [`Action::index`]; absent classes get 0.
    pub fn class_posteriors_raw(&self, raw: &[f64; FEATURE_DIM]) -> [f64; 3] {
        let x = self.scaler.apply(raw);
        let joint: Vec<f64> = self
            .classes
            .iter()
            .map(|c| c.prior.ln() + c.log_density(&x))
            .collect();
        let norm = log_sum_exp(&joint);
        let mut out = [0.0; 3];
        for (c, lj) in self.classes.iter().zip(&joint) {
            out[c.action.index()] = if norm == f64::NEG_INFINITY {
                // every density underflowed; fall back to the priors
                c.prior
            } else {
                (lj - norm).exp()
            };
        }
        out
    }

    pub fn class_posteriors(&self, s: &StateVector) -> [f64; 3] {
        self.class_posteriors_raw(&s.raw())
    }

    pub fn classify_raw(&self, raw: &[f64; FEATURE_DIM]) -> Classification {
        let post = self.class_posteriors_raw(raw);
        // Action::ALL order makes the first maximum the tie-break winner.
        let mut win = &self.classes[0];
        for c in &self.classes[1..] {
            if post[c.action.index()] > post[win.action.index()] {
                win = c;
            }
        }
        let x = self.scaler.apply(raw);
        let weighted = win.weighted(&x);
        let mut best = 0;
        for (j, w) in weighted.iter().enumerate() {
            if *w > weighted[best] {
                best = j;
            }
        }
        Classification {
            action: win.action,
            confidence: post[win.action.index()].clamp(0.0, 1.0),
            boundary_id: win.boundaries[best].id,
        }
    }

    pub fn classify(&self, s: &StateVector) -> Classification {
        self.classify_raw(&s.raw())
    }

    /// Confidence that `s` belongs to the boundary's class: the posterior of
    /// the class owning `boundary_id`.
    pub fn boundary_confidence(&self, s: &StateVector, boundary_id: BoundaryId) -> Result<f64> {
        let (action, _) = self
            .boundary(boundary_id)
            .ok_or(Error::InvalidBoundary(boundary_id))?;
        Ok(self.class_posteriors(s)[action.index()].clamp(0.0, 1.0))
    }

    /// Mean of a boundary's component, in normalized feature space.
    pub fn boundary_mean(&self, id: BoundaryId) -> Option<Point> {
        self.boundary(id).map(|(_, b)| b.component.gaussian.mean())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Versioned on-disk form of a [`GmmPolicy`]. Covariances are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub version: u32,
    pub scaler: FeatureScaler,
    pub classes: Vec<ClassSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSnapshot {
    pub action: Action,
    pub prior: f64,
    pub components: Vec<ComponentSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSnapshot {
    pub boundary_id: BoundaryId,
    pub weight: f64,
    pub mean: [f64; FEATURE_DIM],
    pub covariance: Vec<f64>,
}

impl From<GmmPolicy> for PolicySnapshot {
    fn from(p: GmmPolicy) -> Self {
        PolicySnapshot {
            version: SNAPSHOT_VERSION,
            scaler: p.scaler,
            classes: p
                .classes
                .iter()
                .map(|c| ClassSnapshot {
                    action: c.action,
                    prior: c.prior,
                    components: c
                        .boundaries
                        .iter()
                        .map(|b| ComponentSnapshot {
                            boundary_id: b.id,
                            weight: b.component.weight,
                            mean: b.component.gaussian.mean(),
                            covariance: b
                                .component
                                .gaussian
                                .covariance()
                                .iter()
                                .flatten()
                                .copied()
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<PolicySnapshot> for GmmPolicy {
    type Error = Error;

    fn try_from(s: PolicySnapshot) -> Result<Self> {
        if s.version != SNAPSHOT_VERSION {
            return Err(Error::SchemaVersion {
                what: "policy snapshot",
                found: s.version,
                expected: SNAPSHOT_VERSION,
            });
        }
        if s.classes.is_empty() {
            return Err(Error::ModelUnavailable("snapshot has no classes".into()));
        }
        let mut classes = Vec::with_capacity(s.classes.len());
        for c in s.classes {
            let mut boundaries = Vec::with_capacity(c.components.len());
            for comp in c.components {
                if comp.covariance.len() != FEATURE_DIM * FEATURE_DIM {
                    return Err(Error::Integrity(format!(
                        "boundary {} covariance has {} entries",
                        comp.boundary_id,
                        comp.covariance.len()
                    )));
                }
                let mut cov = [[0.0; FEATURE_DIM]; FEATURE_DIM];
                for (i, v) in comp.covariance.iter().enumerate() {
                    cov[i / FEATURE_DIM][i % FEATURE_DIM] = *v;
                }
                let gaussian = Gaussian::new(comp.mean, cov).ok_or_else(|| {
                    Error::Integrity(format!(
                        "boundary {} covariance is not positive definite",
                        comp.boundary_id
                    ))
                })?;
                boundaries.push(Boundary {
                    id: comp.boundary_id,
                    component: Component {
                        weight: comp.weight,
                        gaussian,
                    },
                });
            }
            classes.push(ClassMixture {
                action: c.action,
                prior: c.prior,
                boundaries,
            });
        }
        Ok(GmmPolicy {
            classes,
            scaler: s.scaler,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::DemoSource;

    fn point(s: StateVector, action: Action, id: u64) -> TrainingPoint {
        TrainingPoint {
            state: s,
            action,
            sequence_id: id,
            source: DemoSource::InitSession,
        }
    }

    #[test]
    fn empty_dataset_is_model_unavailable() {
        let err = GmmPolicy::fit(&[], &ModelConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ModelUnavailable(_)));
    }

    #[test]
    fn identical_points_single_class() {
        let s = StateVector::new(2, 10.0, -5.0, 25.0);
        let data: Vec<_> = (0..10).map(|i| point(s, Action::Forward, i)).collect();
        let model = GmmPolicy::fit(&data, &ModelConfig::default()).unwrap();
        assert_eq!(model.component_count(), 1);
        let mean = model.boundary_mean(0).unwrap();
        for (m, f) in mean.iter().zip(s.features()) {
            assert!((m - f).abs() < 1e-12);
        }
        let c = model.classify(&s);
        assert_eq!(c.action, Action::Forward);
        assert_eq!(c.confidence, 1.0);
        assert_eq!(model.boundary_confidence(&s, 0).unwrap(), 1.0);
        assert!(matches!(
            model.boundary_confidence(&s, 7),
            Err(Error::InvalidBoundary(7))
        ));
    }

    #[test]
    fn absent_classes_are_never_returned() {
        let data = vec![
            point(StateVector::new(1, 0.0, 0.0, 0.0), Action::Left, 0),
            point(StateVector::new(3, 20.0, 20.0, 20.0), Action::Right, 1),
        ];
        let model = GmmPolicy::fit(&data, &ModelConfig::default()).unwrap();
        for lane in 0..5 {
            let c = model.classify(&StateVector::new(lane, 5.0, 5.0, 5.0));
            assert_ne!(c.action, Action::Forward);
        }
        assert_eq!(model.class_posteriors(&data[0].state)[0], 0.0);
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        let data: Vec<_> = (0..40)
            .map(|i| {
                let f = i as f64;
                point(
                    StateVector::new((i % 5) as u8, f * 0.37 - 7.0, 13.0 - f * 0.51, (f * 1.3) % 25.0),
                    Action::from_index(i as usize % 3).unwrap(),
                    i,
                )
            })
            .collect();
        let model = GmmPolicy::fit(&data, &ModelConfig::default()).unwrap();
        let json = model.to_json().unwrap();
        let back = GmmPolicy::from_json(&json).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_json().unwrap(), json);
    }

    #[test]
    fn snapshot_rejects_other_versions() {
        let data = vec![point(StateVector::new(2, 0.0, 0.0, 0.0), Action::Forward, 0)];
        let model = GmmPolicy::fit(&data, &ModelConfig::default()).unwrap();
        let json = model.to_json().unwrap().replace("\"version\":1", "\"version\":9");
        assert!(GmmPolicy::from_json(&json).is_err());
    }
}
