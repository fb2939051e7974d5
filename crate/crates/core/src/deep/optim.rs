use ndarray::{Array1, Array2, Zip};
use serde::Serialize;

use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Adam => "adam",
            Self::Sgd => "sgd",
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Moments {
    w: Array2<f64>,
    b: Array1<f64>,
}

/// First-order optimizer over all network parameters.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    t: u64,
    m: Vec<Moments>,
    v: Vec<Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, net: &Mlp) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidParams(format!("learning rate {lr}")));
        }
        let zeros = || {
            net.layers()
                .iter()
                .map(|l| Moments {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect::<Vec<_>>()
        };
        let (m, v) = match kind {
            OptimizerKind::Adam => (zeros(), zeros()),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Ok(Self { kind, lr, t: 0, m, v })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, net: &mut Mlp, g: &Gradients) {
        self.t += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (l, gl) in net.layers_mut().iter_mut().zip(&g.layers) {
                    l.w.scaled_add(-lr, &gl.w);
                    l.b.scaled_add(-lr, &gl.b);
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                };
                for (i, (l, gl)) in net.layers_mut().iter_mut().zip(&g.layers).enumerate() {
                    Zip::from(&mut l.w)
                        .and(&gl.w)
                        .and(&mut self.m[i].w)
                        .and(&mut self.v[i].w)
                        .for_each(update);
                    Zip::from(&mut l.b)
                        .and(&gl.b)
                        .and(&mut self.m[i].b)
                        .and(&mut self.v[i].b)
                        .for_each(update);
                }
            }
        }
    }
}
