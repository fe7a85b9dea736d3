//! Seeded synthetic accuracy surfaces.
//!
//! accuracy(s) = clamp(intercept + w . onehot(s) + sum of active interaction
//! weights + noise, 0, 1), where the noise is `noise_scale * (2u - 1)` and
//! `u` comes from the counter-based generator keyed by `(seed, subdomain id)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Evaluator, Measurement, DEFAULT_NUM_SAMPLES};
use crate::domain::{AttributeSchema, Subdomain};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub features: (usize, usize),
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSurface {
    pub intercept: f64,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub interactions: Vec<Interaction>,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Parameters for drawing a random surface over a schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceParams {
    pub seed: u64,
    pub intercept: f64,
    /// Main-effect weights are drawn uniformly from `[-weight_scale, 0]`.
    pub weight_scale: f64,
    pub interactions: usize,
    /// Interaction weights are drawn uniformly from `[-interaction_scale, 0]`.
    pub interaction_scale: f64,
    pub noise_scale: f64,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        Self {
            seed: 0,
            intercept: 1.0,
            weight_scale: 0.1,
            interactions: 0,
            interaction_scale: 0.2,
            noise_scale: 0.0,
        }
    }
}

impl SyntheticSurface {
    pub fn constant(schema: &AttributeSchema, value: f64) -> Self {
        Self {
            intercept: value,
            weights: vec![0.0; schema.onehot_len()],
            interactions: Vec::new(),
            noise_scale: 0.0,
            seed: 0,
        }
    }

    pub fn generate(schema: &AttributeSchema, params: &SurfaceParams) -> Self {
        let mut rng = rng::stream(params.seed, 0x5EED_5A7F);
        let weights = (0..schema.onehot_len())
            .map(|_| -params.weight_scale * rng.gen::<f64>())
            .collect();
        let n_attr = schema.num_attributes();
        let mut interactions = Vec::with_capacity(params.interactions);
        while n_attr >= 2 && interactions.len() < params.interactions {
            let a = rng.gen_range(0..n_attr);
            let b = rng.gen_range(0..n_attr);
            if a == b {
                continue;
            }
            let (a, b) = (a.min(b), a.max(b));
            let fa = schema.onehot_offset(a) + rng.gen_range(0..schema.attributes()[a].values.len());
            let fb = schema.onehot_offset(b) + rng.gen_range(0..schema.attributes()[b].values.len());
            interactions.push(Interaction {
                features: (fa, fb),
                weight: -params.interaction_scale * rng.gen::<f64>(),
            });
        }
        Self {
            intercept: params.intercept,
            weights,
            interactions,
            noise_scale: params.noise_scale,
            seed: params.seed,
        }
    }

    fn check(&self, schema: &AttributeSchema) -> Result<(), EvalError> {
        let dim = schema.onehot_len();
        if self.weights.len() != dim {
            return Err(EvalError::Config(format!(
                "surface has {} weights, schema one-hot length is {dim}",
                self.weights.len()
            )));
        }
        if let Some(i) = self
            .interactions
            .iter()
            .find(|i| i.features.0 >= dim || i.features.1 >= dim)
        {
            return Err(EvalError::Config(format!(
                "interaction on features {:?} exceeds one-hot length {dim}",
                i.features
            )));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(EvalError::Config("noise_scale must be nonnegative".into()));
        }
        Ok(())
    }

    /// Value before noise and clamping.
    pub fn mean_response(&self, schema: &AttributeSchema, s: &Subdomain) -> f64 {
        let active = schema.active_features(s);
        let mut v = self.intercept;
        for &f in &active {
            v += self.weights[f];
        }
        for i in &self.interactions {
            if active.contains(&i.features.0) && active.contains(&i.features.1) {
                v += i.weight;
            }
        }
        v
    }

    pub fn noise(&self, s: &Subdomain) -> f64 {
        if self.noise_scale == 0.0 {
            return 0.0;
        }
        self.noise_scale * (2.0 * rng::keyed_unit(self.seed, s.id, 0) - 1.0)
    }

    pub fn accuracy(&self, schema: &AttributeSchema, s: &Subdomain) -> f64 {
        (self.mean_response(schema, s) + self.noise(s)).clamp(0.0, 1.0)
    }
}

pub struct SyntheticEvaluator {
    schema: AttributeSchema,
    surface: SyntheticSurface,
    num_samples: u32,
}

impl SyntheticEvaluator {
    pub fn new(schema: AttributeSchema, surface: SyntheticSurface) -> Result<Self, EvalError> {
        surface.check(&schema)?;
        Ok(Self {
            schema,
            surface,
            num_samples: DEFAULT_NUM_SAMPLES,
        })
    }

    pub fn with_num_samples(mut self, n: u32) -> Self {
        self.num_samples = n;
        self
    }

    pub fn surface(&self) -> &SyntheticSurface {
        &self.surface
    }
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&self, s: &Subdomain) -> Result<Measurement, EvalError> {
        Ok(Measurement {
            accuracy: self.surface.accuracy(&self.schema, s),
            num_samples: self.num_samples,
        })
    }
}
