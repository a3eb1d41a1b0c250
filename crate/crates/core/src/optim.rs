//! Shared-statistics RMSProp over a central parameter store.
//!
//! Workers pull consistent per-tensor snapshots, compute gradients locally,
//! and push them back. Each named tensor carries its own lock, so concurrent
//! workers interleave at tensor granularity: an individual tensor is always
//! internally consistent, while the set of tensors may mix updates (the
//! usual lock-free asynchronous-training contract).

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ArchPreset, NetworkParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig { learning_rate: 0.0007, decay: 0.99, epsilon: 0.1, clip_norm: 40.0 }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.learning_rate <= 0.0 {
            problems.push(format!("optimizer.learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.decay) {
            problems.push(format!("optimizer.decay must be in [0,1), got {}", self.decay));
        }
        if self.epsilon < 0.0 {
            problems.push(format!("optimizer.epsilon must be nonnegative, got {}", self.epsilon));
        }
        if self.clip_norm <= 0.0 {
            problems.push(format!("optimizer.clip_norm must be positive, got {}", self.clip_norm));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(problems.join("; ")))
        }
    }
}

struct Slot {
    shape: Vec<usize>,
    value: Vec<f64>,
    /// Running mean of squared gradients, shared by all workers.
    ms: Vec<f64>,
}

pub struct SharedParamStore {
    preset: ArchPreset,
    cfg: RmsPropConfig,
    slots: Vec<(String, Mutex<Slot>)>,
    env_steps: AtomicU64,
    skipped_updates: AtomicU64,
}

impl SharedParamStore {
    pub fn new(params: NetworkParams, cfg: RmsPropConfig) -> Self {
        let preset = params.preset.clone();
        let slots = params
            .iter()
            .map(|(name, t)| {
                let slot = Slot {
                    shape: t.shape().to_vec(),
                    value: t.data().to_vec(),
                    ms: vec![0.0; t.len()],
                };
                (name.to_string(), Mutex::new(slot))
            })
            .collect();
        SharedParamStore {
            preset,
            cfg,
            slots,
            env_steps: AtomicU64::new(0),
            skipped_updates: AtomicU64::new(0),
        }
    }

    pub fn preset(&self) -> &ArchPreset {
        &self.preset
    }

    pub fn config(&self) -> &RmsPropConfig {
        &self.cfg
    }

    /// Copies current parameter values. Each tensor is read under its lock,
    /// so every tensor in the result is a consistent unit.
    pub fn snapshot(&self) -> NetworkParams {
        let entries = self
            .slots
            .iter()
            .map(|(name, slot)| {
                let s = slot.lock().expect("param lock poisoned");
                let t = Tensor::from_vec(&s.shape, s.value.clone()).expect("stored shape is valid");
                (name.clone(), t)
            })
            .collect();
        NetworkParams::from_entries(self.preset.clone(), entries)
    }

    /// Applies one RMSProp update from the gradients accumulated in
    /// `grads` (tensors whose `grad` is unset contribute nothing).
    /// Returns false without touching any parameter when the gradient
    /// contains NaN or Inf; such updates are counted, not fatal.
    pub fn apply_gradients(&self, grads: &NetworkParams) -> Result<bool> {
        let mut sq_norm = 0.0;
        for (_, t) in grads.iter() {
            if let Some(g) = t.grad() {
                sq_norm += g.iter().map(|&v| v * v).sum::<f64>();
            }
        }
        if !sq_norm.is_finite() {
            self.skipped_updates.fetch_add(1, Ordering::Relaxed);
            return Ok(false);
        }
        let norm = sq_norm.sqrt();
        let scale = if norm > self.cfg.clip_norm { self.cfg.clip_norm / norm } else { 1.0 };

        for (name, t) in grads.iter() {
            let Some(g) = t.grad() else { continue };
            let Some((_, slot)) = self.slots.iter().find(|(n, _)| n == name) else {
                return Err(Error::ResumeMismatch(format!("unknown parameter tensor {name}")));
            };
            let mut s = slot.lock().expect("param lock poisoned");
            if s.value.len() != g.len() {
                return Err(Error::shape("apply_gradients", s.value.len(), g.len()));
            }
            let (lr, d, eps) = (self.cfg.learning_rate, self.cfg.decay, self.cfg.epsilon);
            for i in 0..g.len() {
                let gi = scale * g[i];
                s.ms[i] = d * s.ms[i] + (1.0 - d) * gi * gi;
                s.value[i] -= lr * gi / (s.ms[i] + eps).sqrt();
            }
        }
        Ok(true)
    }

    pub fn add_env_steps(&self, n: u64) -> u64 {
        self.env_steps.fetch_add(n, Ordering::Relaxed) + n
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps.load(Ordering::Relaxed)
    }

    pub fn set_env_steps(&self, n: u64) {
        self.env_steps.store(n, Ordering::Relaxed);
    }

    pub fn skipped_updates(&self) -> u64 {
        self.skipped_updates.load(Ordering::Relaxed)
    }

    /// Parameter values and RMSProp accumulators, for checkpointing.
    pub fn export_state(&self) -> Vec<(String, Tensor, Tensor)> {
        self.slots
            .iter()
            .map(|(name, slot)| {
                let s = slot.lock().expect("param lock poisoned");
                let v = Tensor::from_vec(&s.shape, s.value.clone()).expect("stored shape");
                let m = Tensor::from_vec(&s.shape, s.ms.clone()).expect("stored shape");
                (name.clone(), v, m)
            })
            .collect()
    }

    /// Restores values and accumulators saved by `export_state`. Every
    /// stored tensor must exist here with the same shape.
    pub fn import_state(&self, state: &[(String, Tensor, Tensor)]) -> Result<()> {
        if state.len() != self.slots.len() {
            return Err(Error::ResumeMismatch(format!(
                "checkpoint has {} tensors, network has {}",
                state.len(),
                self.slots.len()
            )));
        }
        for (name, value, ms) in state {
            let Some((_, slot)) = self.slots.iter().find(|(n, _)| n == name) else {
                return Err(Error::ResumeMismatch(format!("checkpoint tensor {name} not in network")));
            };
            let mut s = slot.lock().expect("param lock poisoned");
            if s.shape != value.shape() || s.shape != ms.shape() {
                return Err(Error::ResumeMismatch(format!(
                    "tensor {name}: checkpoint shape {:?}, network shape {:?}",
                    value.shape(),
                    s.shape
                )));
            }
            s.value.copy_from_slice(value.data());
            s.ms.copy_from_slice(ms.data());
        }
        Ok(())
    }
}
