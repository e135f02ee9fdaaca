use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Update rule and its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    RmsProp {
        decay: f64,
        epsilon: f64,
    },
    /// Plain SGD whose step size is multiplied by `factor` every `every`
    /// episodes.
    StepDecaySgd {
        factor: f64,
        every: u64,
    },
}

impl OptimizerKind {
    pub const ADAM: OptimizerKind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };

    pub const RMSPROP: OptimizerKind = OptimizerKind::RmsProp {
        decay: 0.9,
        epsilon: 1e-8,
    };

    pub const STEP_DECAY: OptimizerKind = OptimizerKind::StepDecaySgd {
        factor: 0.5,
        every: 25,
    };

    pub(crate) fn tag(&self) -> u8 {
        match self {
            OptimizerKind::Adam { .. } => 0,
            OptimizerKind::RmsProp { .. } => 1,
            OptimizerKind::StepDecaySgd { .. } => 2,
        }
    }
}

/// Optimizer state over a fixed list of parameter slots.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub base_lr: f64,
    /// Number of update steps taken.
    pub t: u64,
    /// Episodes completed, driving the step-decay schedule.
    pub episodes: u64,
    pub(crate) first: Vec<Vec<f64>>,
    pub(crate) second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, base_lr: f64, slot_sizes: &[usize]) -> Result<Self> {
        if !(base_lr >= 0.0 && base_lr.is_finite()) {
            return Err(Error::invalid(format!("step size {base_lr} must be finite and >= 0")));
        }
        let moments = |needed: bool| -> Vec<Vec<f64>> {
            if needed {
                slot_sizes.iter().map(|&n| vec![0.0; n]).collect()
            } else {
                Vec::new()
            }
        };
        let (first, second) = match kind {
            OptimizerKind::Adam { .. } => (moments(true), moments(true)),
            OptimizerKind::RmsProp { .. } => (Vec::new(), moments(true)),
            OptimizerKind::StepDecaySgd { .. } => (Vec::new(), Vec::new()),
        };
        Ok(Optimizer {
            kind,
            base_lr,
            t: 0,
            episodes: 0,
            first,
            second,
        })
    }

    /// Step size currently in effect.
    pub fn learning_rate(&self) -> f64 {
        match self.kind {
            OptimizerKind::StepDecaySgd { factor, every } if every > 0 => {
                self.base_lr * factor.powi((self.episodes / every) as i32)
            }
            _ => self.base_lr,
        }
    }

    pub fn is_plain_sgd(&self) -> bool {
        matches!(self.kind, OptimizerKind::StepDecaySgd { .. })
    }

    pub fn end_episode(&mut self) {
        self.episodes += 1;
    }

    /// One descent step on every slot: `params -= update(grads)`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("Optimizer::step slots", params.len(), grads.len()));
        }
        self.t += 1;
        for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update_slot(slot, p, g)?;
        }
        Ok(())
    }

    /// One descent step on a single slot, leaving other slots untouched.
    pub fn step_slot(&mut self, slot: usize, param: &mut [f64], grad: &[f64]) -> Result<()> {
        self.t += 1;
        self.update_slot(slot, param, grad)
    }

    fn update_slot(&mut self, slot: usize, param: &mut [f64], grad: &[f64]) -> Result<()> {
        if param.len() != grad.len() {
            return Err(Error::shape("Optimizer slot", param.len(), grad.len()));
        }
        let lr = self.learning_rate();
        match self.kind {
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                self.slot(true, slot, param.len())?;
                self.slot(false, slot, param.len())?;
                let t = self.t.max(1) as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let (first, second) = (&mut self.first[slot], &mut self.second[slot]);
                for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(first.iter_mut()).zip(second.iter_mut()) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                }
            }
            OptimizerKind::RmsProp { decay, epsilon } => {
                self.slot(false, slot, param.len())?;
                for ((p, &g), v) in param.iter_mut().zip(grad).zip(self.second[slot].iter_mut()) {
                    *v = decay * *v + (1.0 - decay) * g * g;
                    *p -= lr * g / (v.sqrt() + epsilon);
                }
            }
            OptimizerKind::StepDecaySgd { .. } => {
                for (p, &g) in param.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
        }
        Ok(())
    }

    fn slot(&self, first: bool, slot: usize, len: usize) -> Result<()> {
        let store = if first { &self.first } else { &self.second };
        match store.get(slot) {
            Some(s) if s.len() == len => Ok(()),
            Some(s) => Err(Error::shape("Optimizer moment slot", s.len(), len)),
            None => Err(Error::invalid(format!("optimizer has no slot {slot}"))),
        }
    }
}
