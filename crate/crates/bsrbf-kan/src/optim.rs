//! AdamW optimizer with decoupled weight decay, plus the per-epoch
//! exponential learning-rate schedule used by the training harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Network;
use crate::num::{real, Real};

/// Hyperparameters for [`AdamW`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWOptions {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWOptions {
    fn default() -> Self {
        AdamWOptions {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamWOptions {
    pub fn validate(&self) -> Result<()> {
        let bounded = |name: &'static str, v: f64, lo: f64, hi: f64| -> Result<()> {
            if v.is_finite() && v >= lo && v < hi {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    what: name,
                    details: format!("must be finite in [{lo}, {hi}), got {v}"),
                })
            }
        };
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidParameter {
                what: "AdamW lr",
                details: format!("must be finite and positive, got {}", self.lr),
            });
        }
        bounded("AdamW beta1", self.beta1, 0.0, 1.0)?;
        bounded("AdamW beta2", self.beta2, 0.0, 1.0)?;
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::InvalidParameter {
                what: "AdamW eps",
                details: format!("must be finite and positive, got {}", self.eps),
            });
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter {
                what: "AdamW weight_decay",
                details: format!("must be finite and non-negative, got {}", self.weight_decay),
            });
        }
        Ok(())
    }
}

/// One tensor's first/second-moment accumulators.
#[derive(Debug, Clone)]
struct Slot<F> {
    m: Vec<F>,
    v: Vec<F>,
}

/// AdamW: weight decay is decoupled from the gradient — each step first
/// shrinks the parameter by `1 - lr * weight_decay`, then applies the
/// bias-corrected Adam update. Moment slots are allocated on the first step
/// in the network's parameter-traversal order, which is also the order the
/// serializer walks, so optimizer state and saved weights always line up.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    opts: AdamWOptions,
    /// Steps taken so far.
    t: u64,
    /// Running `beta1^t` / `beta2^t`; updated multiplicatively so the exact
    /// sequence of float operations is independent of how `powi` is
    /// implemented.
    beta1_pow: F,
    beta2_pow: F,
    slots: Vec<Slot<F>>,
}

impl<F: Real> AdamW<F> {
    pub fn new(opts: AdamWOptions) -> Result<Self> {
        opts.validate()?;
        Ok(AdamW {
            opts,
            t: 0,
            beta1_pow: F::one(),
            beta2_pow: F::one(),
            slots: Vec::new(),
        })
    }

    pub fn options(&self) -> &AdamWOptions {
        &self.opts
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Change the learning rate (used by the per-epoch schedule).
    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::InvalidParameter {
                what: "AdamW lr",
                details: format!("must be finite and positive, got {lr}"),
            });
        }
        self.opts.lr = lr;
        Ok(())
    }

    /// Apply one update from the gradients currently accumulated in `net`.
    ///
    /// Fails without touching step state if any gradient is non-finite, so a
    /// diverging run stops at the first bad batch instead of poisoning the
    /// parameters.
    pub fn step(&mut self, net: &mut Network<F>) -> Result<()> {
        // Validate every gradient before mutating anything.
        let mut bad: Option<String> = None;
        net.visit_params_ref(&mut |idx, p| {
            if bad.is_none() && !p.value.all_finite() {
                bad = Some(format!("parameter layers.{idx}.{}", p.name));
            }
        });
        net.visit_params(&mut |idx, p| {
            if bad.is_none() && !p.grad.all_finite() {
                bad = Some(format!("gradient of layers.{idx}.{}", p.name));
            }
        });
        if let Some(context) = bad {
            return Err(Error::NonFinite { context });
        }

        self.t += 1;
        let beta1 = real::<F>(self.opts.beta1);
        let beta2 = real::<F>(self.opts.beta2);
        self.beta1_pow *= beta1;
        self.beta2_pow *= beta2;
        let lr = real::<F>(self.opts.lr);
        let wd = real::<F>(self.opts.weight_decay);
        let eps = real::<F>(self.opts.eps);
        let bc1 = F::one() - self.beta1_pow;
        let bc2 = F::one() - self.beta2_pow;

        let first_step = self.slots.is_empty();
        let slots = &mut self.slots;
        let mut slot_idx = 0usize;
        let mut failure: Option<Error> = None;
        net.visit_params(&mut |idx, p| {
            if failure.is_some() {
                return;
            }
            let n = p.value.data().len();
            if first_step {
                slots.push(Slot {
                    m: vec![F::zero(); n],
                    v: vec![F::zero(); n],
                });
            }
            let Some(slot) = slots.get_mut(slot_idx) else {
                failure = Some(Error::MissingState(format!(
                    "optimizer has no moment slot for layers.{idx}.{}; \
                     was it created for a different network?",
                    p.name
                )));
                return;
            };
            if slot.m.len() != n {
                failure = Some(Error::MissingState(format!(
                    "moment slot for layers.{idx}.{} holds {} values but the parameter has {n}",
                    p.name,
                    slot.m.len()
                )));
                return;
            }
            slot_idx += 1;
            adamw_update(
                p.value.data_mut(),
                p.grad.data(),
                &mut slot.m,
                &mut slot.v,
                lr,
                wd,
                beta1,
                beta2,
                eps,
                bc1,
                bc2,
            );
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if slot_idx != slots.len() {
            return Err(Error::MissingState(format!(
                "optimizer holds {} moment slots but the network exposed {slot_idx} parameters",
                slots.len()
            )));
        }
        Ok(())
    }
}

/// The elementwise AdamW update for one tensor.
///
/// `bc1` / `bc2` are the bias corrections `1 - beta^t` for the current step.
/// Plain arithmetic (no fused ops) keeps the result identical to a
/// straightforward scalar transcription of the recurrence.
#[allow(clippy::too_many_arguments)]
fn adamw_update<F: Real>(
    value: &mut [F],
    grad: &[F],
    m: &mut [F],
    v: &mut [F],
    lr: F,
    wd: F,
    beta1: F,
    beta2: F,
    eps: F,
    bc1: F,
    bc2: F,
) {
    let one = F::one();
    let decay = one - lr * wd;
    for i in 0..value.len() {
        let g = grad[i];
        value[i] *= decay;
        m[i] = beta1 * m[i] + (one - beta1) * g;
        v[i] = beta2 * v[i] + (one - beta2) * (g * g);
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        value[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Per-epoch exponential learning-rate schedule: `lr = base * gamma^epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub gamma: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, gamma: f64) -> Result<Self> {
        if !(base_lr.is_finite() && base_lr > 0.0) {
            return Err(Error::InvalidParameter {
                what: "LrSchedule base_lr",
                details: format!("must be finite and positive, got {base_lr}"),
            });
        }
        if !(gamma.is_finite() && gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidParameter {
                what: "LrSchedule gamma",
                details: format!("must be in (0, 1], got {gamma}"),
            });
        }
        Ok(LrSchedule { base_lr, gamma })
    }

    /// Learning rate for a zero-based epoch index.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.gamma.powi(epoch as i32)
    }
}
