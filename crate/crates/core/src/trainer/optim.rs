use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// First/second moment estimates with bias correction.
    Adam { beta1: f64, beta2: f64, eps: f64 },
    /// Heavy-ball momentum: `v = mu v + g; p -= lr v`.
    SgdMomentum { momentum: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Adam { .. } => "adam",
            Self::SgdMomentum { .. } => "sgd_momentum",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Adam { beta1, beta2, eps } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
            Self::SgdMomentum { momentum } => (0.0..1.0).contains(&momentum),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer hyperparameters {self:?}")))
        }
    }
}

/// Per-parameter optimizer state, parallel to the model's parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &[(String, Tensor)]) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.len()]).collect::<Vec<_>>();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros(),
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        Self {
            kind,
            first: zeros(),
            second,
            steps: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every parameter from its gradient.
    pub fn step(&mut self, params: &mut [(String, Tensor)], grads: &[Vec<f64>], lr: f64, weight_decay: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        for (k, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let p = p.data_mut();
            match self.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for i in 0..p.len() {
                        let gi = g[i] + weight_decay * p[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
                OptimizerKind::SgdMomentum { momentum } => {
                    let vel = &mut self.first[k];
                    for i in 0..p.len() {
                        let gi = g[i] + weight_decay * p[i];
                        vel[i] = momentum * vel[i] + gi;
                        p[i] -= lr * vel[i];
                    }
                }
            }
        }
    }

    /// Named slots for checkpointing.
    pub fn export(&self, params: &[(String, Tensor)]) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        let slot = |prefix: &str, bufs: &[Vec<f64>], out: &mut Vec<(String, Tensor)>| {
            for ((name, t), b) in params.iter().zip(bufs) {
                out.push((
                    format!("{prefix}.{name}"),
                    Tensor::new(t.shape().to_vec(), b.clone()).expect("state matches parameter shape"),
                ));
            }
        };
        match self.kind {
            OptimizerKind::Adam { .. } => {
                slot("adam.m", &self.first, &mut out);
                slot("adam.v", &self.second, &mut out);
            }
            OptimizerKind::SgdMomentum { .. } => slot("sgd.velocity", &self.first, &mut out),
        }
        out.push(("steps".into(), Tensor::scalar(self.steps as f64)));
        out
    }
}
