//! Adam with an optional lookahead wrapper, and the piecewise learning-rate
//! schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Phases of `(epochs, learning rate)`, applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub phases: Vec<(usize, f64)>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            phases: vec![(25, 1e-3), (3, 1e-4), (2, 1e-5)],
        }
    }
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Config("schedule needs at least one phase".into()));
        }
        let mut prev = f64::INFINITY;
        for &(epochs, lr) in &self.phases {
            if epochs == 0 || !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("bad schedule phase ({epochs}, {lr})")));
            }
            if lr > prev {
                return Err(Error::Config("learning rates must not increase".into()));
            }
            prev = lr;
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.0).sum()
    }

    /// The same phases stretched or shrunk to `epochs` in total. Phases
    /// that round to zero length are dropped.
    pub fn scaled_to(&self, epochs: usize) -> ScheduleSpec {
        let total = self.total_epochs().max(1) as f64;
        let mut phases = Vec::new();
        let mut cum = 0usize;
        let mut start = 0usize;
        for &(e, lr) in &self.phases {
            cum += e;
            let end = ((epochs as f64) * cum as f64 / total).round() as usize;
            if end > start {
                phases.push((end - start, lr));
                start = end;
            }
        }
        if phases.is_empty() && epochs > 0 {
            phases.push((epochs, self.phases[0].1));
        }
        ScheduleSpec { phases }
    }
}

/// Learning rate for a 0-based epoch; past the end the last rate holds.
pub fn lr_schedule(epoch: usize, spec: &ScheduleSpec) -> f64 {
    let mut end = 0;
    for &(e, lr) in &spec.phases {
        end += e;
        if epoch < end {
            return lr;
        }
    }
    spec.phases.last().map_or(0.0, |p| p.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lookahead {
    pub k: usize,
    pub alpha: f64,
}

impl Default for Lookahead {
    fn default() -> Self {
        Lookahead { k: 6, alpha: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lookahead: Option<Lookahead>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lookahead: Some(Lookahead::default()),
        }
    }
}

/// Optimizer state for every tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    slow: Option<Vec<Vec<f64>>>,
    steps: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Adam {
            cfg,
            m: zeros.clone(),
            v: zeros,
            slow: cfg.lookahead.map(|_| store.tensors().iter().map(|t| t.to_vec()).collect()),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One bias-corrected Adam update from the gradients accumulated on the
    /// store's tensors. Parameters without a gradient see a zero gradient.
    /// A non-finite gradient aborts before anything is changed.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        let grads: Vec<Option<Vec<f64>>> = store.tensors().iter().map(|t| t.grad()).collect();
        for (id, g) in store.ids().zip(&grads) {
            if g.as_ref().is_some_and(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::NonFiniteGrad {
                    param: store.name(id).to_string(),
                });
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[i] else {
                if self.m[i].iter().all(|&x| x == 0.0) {
                    continue;
                }
                // Keep decaying moments so the update matches a zero gradient.
                let zero = vec![0.0; self.m[i].len()];
                let data = self.update(i, store.get(id).data(), &zero, lr, c1, c2);
                store.set(id, data);
                continue;
            };
            let data = self.update(i, store.get(id).data(), g, lr, c1, c2);
            store.set(id, data);
        }
        if let (Some(la), Some(slow)) = (self.cfg.lookahead, self.slow.as_mut()) {
            if la.k > 0 && self.steps % la.k as u64 == 0 {
                let ids: Vec<_> = store.ids().collect();
                for (i, id) in ids.into_iter().enumerate() {
                    let fast = store.get(id).data();
                    for (s, f) in slow[i].iter_mut().zip(fast) {
                        *s += la.alpha * (f - *s);
                    }
                    store.set(id, slow[i].clone());
                }
            }
        }
        Ok(())
    }

    fn update(&mut self, i: usize, param: &[f64], g: &[f64], lr: f64, c1: f64, c2: f64) -> Vec<f64> {
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);
        let (m, v) = (&mut self.m[i], &mut self.v[i]);
        param
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p - lr * mh / (vh.sqrt() + eps)
            })
            .collect()
    }
}
