use mutabnet_autodiff::Tensor;

use super::params::{ParamId, ParamInit, ParamStore};
use crate::error::Result;

pub const LN_EPS: f64 = 1e-5;

/// `x W + b` for row-vector sequences `x: [len, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(init: &mut ParamInit<'_>, input: usize, output: usize, bias: bool) -> Self {
        let weight = init.normal("weight", &[input, output], (1.0 / input as f64).sqrt());
        let bias = bias.then(|| init.constant("bias", &[output], 0.0));
        Linear { weight, bias }
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(p.get(self.weight))?;
        Ok(match self.bias {
            Some(b) => y.add_row_broadcast(p.get(b))?,
            None => y,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut ParamInit<'_>, dim: usize) -> Self {
        LayerNorm {
            gain: init.constant("gain", &[dim], 1.0),
            bias: init.constant("bias", &[dim], 0.0),
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        Ok(x.layer_norm(p.get(self.gain), p.get(self.bias), LN_EPS)?)
    }
}

/// Two-layer ReLU MLP applied position-wise.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(init: &mut ParamInit<'_>, dim: usize, hidden: usize) -> Self {
        FeedForward {
            up: Linear::new(&mut init.sub("up"), dim, hidden, true),
            down: Linear::new(&mut init.sub("down"), hidden, dim, true),
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let h = self.up.forward(p, x)?.relu();
        self.down.forward(p, &h)
    }
}
