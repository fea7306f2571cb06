//! Optimal-transport conditional path, conditional flow/vector field,
//! the CFM regression losses (all-frame and masked), and classifier-free
//! guidance combination.

use crate::array::Array;
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SIGMA_MIN: f64 = 1e-5;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct OtPathConfig {
    pub sigma_min: f64,
}

impl Default for OtPathConfig {
    fn default() -> Self {
        OtPathConfig {
            sigma_min: DEFAULT_SIGMA_MIN,
        }
    }
}

impl OtPathConfig {
    pub fn new(sigma_min: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&sigma_min) {
            return Err(Error::invalid(format!(
                "sigma_min must lie in [0, 1), got {sigma_min}"
            )));
        }
        Ok(OtPathConfig { sigma_min })
    }

    fn check_t(t: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("flow step t={t} outside [0, 1]")));
        }
        Ok(())
    }

    /// Mean t*x1 and linearly shrinking standard deviation of the
    /// conditional Gaussian path at step t.
    pub fn ot_mean_std(&self, t: f64, x1: &Array) -> Result<(Array, f64)> {
        Self::check_t(t)?;
        Ok((x1.scale(t), 1.0 - (1.0 - self.sigma_min) * t))
    }

    /// w = (1 - (1 - sigma_min) t) x0 + t x1
    pub fn conditional_flow(&self, t: f64, x0: &Array, x1: &Array) -> Result<Array> {
        Self::check_t(t)?;
        let mut w = x0.scale(1.0 - (1.0 - self.sigma_min) * t);
        w.axpy(t, x1)?;
        Ok(w)
    }

    /// u = (x1 - (1 - sigma_min) x) / (1 - (1 - sigma_min) t)
    pub fn conditional_vector_field(&self, t: f64, x: &Array, x1: &Array) -> Result<Array> {
        Self::check_t(t)?;
        let denom = 1.0 - (1.0 - self.sigma_min) * t;
        if denom.abs() <= 1e-12 {
            return Err(Error::Singularity {
                op: "conditional_vector_field",
                value: denom,
            });
        }
        let mut u = x1.sub(&x.scale(1.0 - self.sigma_min))?;
        u = u.scale(1.0 / denom);
        Ok(u)
    }

    /// x1 - (1 - sigma_min) x0: the constant-in-t regression target at
    /// w = conditional_flow(t, x0, x1).
    pub fn cfm_regression_target(&self, x0: &Array, x1: &Array) -> Result<Array> {
        x1.sub(&x0.scale(1.0 - self.sigma_min))
    }
}

/// (1 + alpha) v_cond - alpha v_uncond. Alpha zero returns v_cond
/// unchanged, bit for bit.
pub fn cfg_combine(v_cond: &Array, v_uncond: &Array, alpha: f64) -> Result<Array> {
    if v_cond.shape() != v_uncond.shape() {
        return Err(Error::ShapeMismatch {
            op: "cfg_combine",
            left: v_cond.shape().to_vec(),
            right: v_uncond.shape().to_vec(),
        });
    }
    if alpha == 0.0 {
        return Ok(v_cond.clone());
    }
    let mut out = v_cond.scale(1.0 + alpha);
    out.axpy(-alpha, v_uncond)?;
    Ok(out)
}

/// One training item of the audio CFM objective.
#[derive(Debug, Clone)]
pub struct CfmItem {
    /// Target frames, [N, F].
    pub x1: Array,
    /// Prior draw, same shape as x1.
    pub x0: Array,
    /// Flow step for this item.
    pub t: f64,
    /// Audio context, zero at masked frames.
    pub x_ctx: Array,
    /// Frame-level phone ids, length N.
    pub z: Vec<usize>,
    /// Frame mask, length N, entries 0 or 1.
    pub m: Vec<u8>,
}

impl CfmItem {
    pub fn validate(&self) -> Result<()> {
        let n = self.x1.rows();
        let f = self.x1.cols();
        for (name, a) in [("x0", &self.x0), ("x_ctx", &self.x_ctx)] {
            if a.rows() != n || a.cols() != f {
                return Err(Error::invalid(format!(
                    "cfm item: {name} shape {:?} disagrees with x1 {:?}",
                    a.shape(),
                    self.x1.shape()
                )));
            }
        }
        if self.z.len() != n || self.m.len() != n {
            return Err(Error::invalid(format!(
                "cfm item: z len {} / m len {} disagree with {n} frames",
                self.z.len(),
                self.m.len()
            )));
        }
        if self.m.iter().any(|&v| v > 1) {
            return Err(Error::invalid("cfm item: mask entries must be 0 or 1"));
        }
        for (i, &mi) in self.m.iter().enumerate() {
            if mi == 1 && self.x_ctx.row(i).iter().any(|&v| v != 0.0) {
                return Err(Error::invalid(format!(
                    "cfm item: x_ctx must be zero at masked frame {i}"
                )));
            }
        }
        Ok(())
    }
}

/// A batch of CFM items with shared invariants.
#[derive(Debug, Clone, Default)]
pub struct CfmBatch {
    pub items: Vec<CfmItem>,
}

impl CfmBatch {
    pub fn new(items: Vec<CfmItem>) -> Result<Self> {
        for item in &items {
            item.validate()?;
        }
        Ok(CfmBatch { items })
    }
}

/// A vector-field model as the loss sees it: anything that can lay a
/// forward pass onto the tape for one item.
pub trait CfmModel {
    fn forward_on_tape(
        &self,
        tape: &mut Tape,
        w: &Array,
        x_ctx: &Array,
        z: &[usize],
        t: f64,
    ) -> Result<NodeId>;
}

/// Squared-error CFM loss over a batch. With `masked` the error is zeroed
/// outside m and normalized by the count of masked entries in the batch;
/// otherwise it is the mean over every entry.
///
/// Returns the scalar loss node; call sites that only need the value can
/// read it off the tape.
pub fn loss_audio_cfm<M: CfmModel>(
    model: &M,
    tape: &mut Tape,
    path: &OtPathConfig,
    batch: &CfmBatch,
    masked: bool,
) -> Result<NodeId> {
    cfm_loss_with(tape, path, batch, masked, |tape, w, item| {
        model.forward_on_tape(tape, w, &item.x_ctx, &item.z, item.t)
    })
}

/// The CFM reduction with a caller-supplied forward. Training threads a
/// shared parameter binding through the closure so per-item gradients
/// accumulate on one set of leaves.
pub fn cfm_loss_with(
    tape: &mut Tape,
    path: &OtPathConfig,
    batch: &CfmBatch,
    masked: bool,
    mut forward: impl FnMut(&mut Tape, &Array, &CfmItem) -> Result<NodeId>,
) -> Result<NodeId> {
    if batch.items.is_empty() {
        return Err(Error::invalid("cfm loss: empty batch"));
    }
    let mut denom = 0.0;
    if masked {
        for item in &batch.items {
            let f = item.x1.cols() as f64;
            denom += item.m.iter().filter(|&&v| v == 1).count() as f64 * f;
        }
        if denom == 0.0 {
            return Err(Error::EmptyMask(
                "masked cfm loss with no masked frames in batch".into(),
            ));
        }
    } else {
        for item in &batch.items {
            denom += item.x1.numel() as f64;
        }
    }

    let mut total: Option<NodeId> = None;
    for item in &batch.items {
        let w = path.conditional_flow(item.t, &item.x0, &item.x1)?;
        let target = path.cfm_regression_target(&item.x0, &item.x1)?;
        let pred = forward(tape, &w, item)?;
        let target_leaf = tape.leaf(target);
        let diff = tape.sub(pred, target_leaf)?;
        let sq = tape.mul(diff, diff)?;
        let reduced = if masked {
            let mut mask = Array::zeros(item.x1.shape());
            for (i, &mi) in item.m.iter().enumerate() {
                if mi == 1 {
                    mask.row_mut(i).iter_mut().for_each(|v| *v = 1.0);
                }
            }
            let mask_leaf = tape.leaf(mask);
            let gated = tape.mul(sq, mask_leaf)?;
            tape.sum(gated)
        } else {
            tape.sum(sq)
        };
        total = Some(match total {
            None => reduced,
            Some(acc) => tape.add(acc, reduced)?,
        });
    }
    Ok(tape.scale(total.expect("non-empty batch"), 1.0 / denom))
}

/// With probability p_uncond, zero the audio context and replace every
/// phone with the null-condition id; otherwise leave the item unchanged.
pub fn drop_conditioning(
    mut item: CfmItem,
    p_uncond: f64,
    null_id: usize,
    rng: &mut Rng,
) -> Result<CfmItem> {
    if !(0.0..=1.0).contains(&p_uncond) {
        return Err(Error::invalid(format!(
            "p_uncond must lie in [0, 1], got {p_uncond}"
        )));
    }
    if rng.bernoulli(p_uncond) {
        item.x_ctx = Array::zeros(item.x_ctx.shape());
        item.z.iter_mut().for_each(|z| *z = null_id);
    }
    Ok(item)
}
