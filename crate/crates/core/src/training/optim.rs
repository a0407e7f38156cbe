use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::ParamStore;
use crate::numerics::{Array, GradientMap};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Optimizer with its per-parameter moment state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    steps: i32,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        Self { kind, learning_rate, steps: 0, moments: BTreeMap::new() }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// Applies one update. Every gradient is checked before anything is
    /// written, so a rejected step leaves the parameters untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradientMap) -> Result<(), TrainError> {
        for (name, g) in grads {
            let p = params.get(name).ok_or_else(|| TrainError::UnknownParameter(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(TrainError::GradientShape { name: name.clone() });
            }
            if let Some(i) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(TrainError::NonFiniteGradient { name: name.clone(), index: i });
            }
        }
        self.steps += 1;
        let eta = self.learning_rate;
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above").data_mut();
            match self.kind {
                OptimizerKind::Sgd => sgd(p, g, eta),
                OptimizerKind::Adam => {
                    let (m, v) = self
                        .moments
                        .entry(name.clone())
                        .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
                    let c1 = 1.0 - ADAM_BETA1.powi(self.steps);
                    let c2 = 1.0 - ADAM_BETA2.powi(self.steps);
                    for (((p, &g), m), v) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *p -= eta * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
                    }
                }
            }
        }
        Ok(())
    }
}

/// `θ ← θ − η·g`.
fn sgd(p: &mut [f64], g: &Array, eta: f64) {
    for (p, g) in p.iter_mut().zip(g.data()) {
        *p -= eta * g;
    }
}

/// One stateless plain gradient step.
pub fn sgd_step(params: &mut ParamStore, grads: &GradientMap, learning_rate: f64) -> Result<(), TrainError> {
    Optimizer::new(OptimizerKind::Sgd, learning_rate).step(params, grads)
}
