use std::collections::BTreeMap;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParameters, ParamGrads};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First and second moments for one tensor.
#[derive(Debug, Clone)]
struct Moments {
    m: Array2<f64>,
    v: Array2<f64>,
}

impl Moments {
    fn zeros(shape: (usize, usize)) -> Self {
        Self {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
        }
    }
}

/// Plain SGD or Adam over the unfrozen components of a model.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    steps: i32,
    state: BTreeMap<String, Vec<[Moments; 2]>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {lr} must be finite and >= 0")));
        }
        Ok(Self {
            kind,
            lr,
            steps: 0,
            state: BTreeMap::new(),
        })
    }

    /// Applies one update. Gradients for frozen or unknown components are ignored.
    pub fn step(&mut self, params: &mut ModelParameters, grads: &ParamGrads) {
        self.steps = self.steps.saturating_add(1);
        let t = self.steps;
        for (name, layer_grads) in &grads.0 {
            let Some(component) = params.components.get_mut(name) else {
                continue;
            };
            if component.frozen {
                continue;
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (layer, (gw, gb)) in component.layers.iter_mut().zip(layer_grads) {
                        layer.weight.scaled_add(-self.lr, gw);
                        layer.bias.scaled_add(-self.lr, gb);
                    }
                }
                OptimizerKind::Adam => {
                    let state = self.state.entry(name.clone()).or_insert_with(|| {
                        component
                            .layers
                            .iter()
                            .map(|l| [Moments::zeros(l.weight.dim()), Moments::zeros(l.bias.dim())])
                            .collect()
                    });
                    let c1 = 1.0 - BETA1.powi(t);
                    let c2 = 1.0 - BETA2.powi(t);
                    for ((layer, (gw, gb)), moments) in
                        component.layers.iter_mut().zip(layer_grads).zip(state.iter_mut())
                    {
                        let [mw, mb] = moments;
                        for (p, g, s) in [(&mut layer.weight, gw, mw), (&mut layer.bias, gb, mb)] {
                            let lr = self.lr;
                            Zip::from(p)
                                .and(g)
                                .and(&mut s.m)
                                .and(&mut s.v)
                                .for_each(|p, &g, m, v| {
                                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                                });
                        }
                    }
                }
            }
        }
    }
}
