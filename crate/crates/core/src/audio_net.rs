//! Transformer parameterization of the conditional vector field
//! v_t(w, x_ctx, z). The current sample, the audio context, and the
//! embedded frame-level phones are concatenated per frame, projected to
//! the model width, and joined by one flow-step token appended along the
//! time axis; only the frame positions of the output are kept.

use crate::array::Array;
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::flow::CfmModel;
use crate::nn::{
    position_encoding, sinusoidal_embed, Bound, Linear, ParamRef, ParamSet, TransformerStack,
    TIME_TOKEN_POSITION,
};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AudioNetConfig {
    /// Feature width F of each frame.
    pub feature_dim: usize,
    /// Phone vocabulary size K (silence and null ids included).
    pub vocab: usize,
    /// Phone embedding width H.
    pub phone_embed_dim: usize,
    /// Transformer width D.
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub use_skip_connections: bool,
    /// Reserved: linear attention biases in the ALiBi style. Frame
    /// positions are sinusoidal for now and this switch must stay off.
    #[serde(default)]
    pub use_alibi_bias: bool,
}

impl Default for AudioNetConfig {
    fn default() -> Self {
        AudioNetConfig {
            feature_dim: 8,
            vocab: 50,
            phone_embed_dim: 16,
            model_dim: 64,
            layers: 4,
            heads: 4,
            ffn_width: 128,
            use_skip_connections: true,
            use_alibi_bias: false,
        }
    }
}

impl AudioNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "model dim {} not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if self.use_skip_connections && self.layers % 2 != 0 {
            return Err(Error::invalid(
                "skip connections pair symmetric layers and need an even layer count",
            ));
        }
        if self.model_dim % 2 != 0 {
            return Err(Error::invalid("model dim must be even for sinusoids"));
        }
        if self.use_alibi_bias {
            return Err(Error::invalid(
                "alibi attention biases are reserved but not implemented",
            ));
        }
        Ok(())
    }
}

/// The trainable vector-field network.
#[derive(Debug, Clone)]
pub struct VectorFieldModel {
    pub config: AudioNetConfig,
    pub params: ParamSet,
    phone_embed: ParamRef,
    input_proj: Linear,
    stack: TransformerStack,
    output_proj: Linear,
}

impl VectorFieldModel {
    pub fn new(config: AudioNetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let table_init = {
            let scale = 0.5;
            let data = (0..config.vocab * config.phone_embed_dim)
                .map(|_| rng.gaussian() * scale)
                .collect();
            Array::new(vec![config.vocab, config.phone_embed_dim], data)?
        };
        let phone_embed = params.add("phone_embed", table_init);
        let input_proj = Linear::new(
            &mut params,
            "input_proj",
            2 * config.feature_dim + config.phone_embed_dim,
            config.model_dim,
            rng,
        );
        let stack = TransformerStack::new(
            &mut params,
            "stack",
            config.model_dim,
            config.layers,
            config.heads,
            config.ffn_width,
            config.use_skip_connections,
            rng,
        )?;
        let output_proj = Linear::new(
            &mut params,
            "output_proj",
            config.model_dim,
            config.feature_dim,
            rng,
        );
        Ok(VectorFieldModel {
            config,
            params,
            phone_embed,
            input_proj,
            stack,
            output_proj,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.params.bind(tape)
    }

    /// The same network with a replaced parameter set (shapes must
    /// match the original registry).
    pub fn with_params(&self, params: ParamSet) -> Self {
        VectorFieldModel {
            params,
            ..self.clone()
        }
    }

    /// Forward pass for one utterance on an explicit tape/binding.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        w: &Array,
        x_ctx: &Array,
        z: &[usize],
        t: f64,
    ) -> Result<NodeId> {
        self.forward_with_skip_ablation(tape, bound, w, x_ctx, z, t, None)
    }

    pub fn forward_with_skip_ablation(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        w: &Array,
        x_ctx: &Array,
        z: &[usize],
        t: f64,
        ablate_skip: Option<usize>,
    ) -> Result<NodeId> {
        let n = w.rows();
        let f = self.config.feature_dim;
        if w.cols() != f || x_ctx.rows() != n || x_ctx.cols() != f {
            return Err(Error::ShapeMismatch {
                op: "audio forward",
                left: w.shape().to_vec(),
                right: x_ctx.shape().to_vec(),
            });
        }
        if z.len() != n {
            return Err(Error::invalid(format!(
                "audio forward: {} phone ids for {} frames",
                z.len(),
                n
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("flow step t={t} outside [0, 1]")));
        }
        for &id in z {
            if id >= self.config.vocab {
                return Err(Error::UnknownPhone {
                    id,
                    vocab: self.config.vocab,
                });
            }
        }
        let d = self.config.model_dim;

        let w_leaf = tape.leaf(w.clone());
        let ctx_leaf = tape.leaf(x_ctx.clone());
        let z_emb = tape.gather(bound.id(self.phone_embed), z)?;
        let joined = tape.concat_cols(&[w_leaf, ctx_leaf, z_emb])?;
        let mut x = self.input_proj.forward(tape, bound, joined)?;

        // Fixed sinusoidal frame positions.
        let mut pos = Array::zeros(&[n, d]);
        for i in 0..n {
            pos.row_mut(i).copy_from_slice(position_encoding(i, d).data());
        }
        let pos_leaf = tape.leaf(pos);
        x = tape.add(x, pos_leaf)?;

        // Flow-step token, appended along the time axis with a dedicated
        // out-of-range position.
        let mut time_row = sinusoidal_embed(t, d)?;
        time_row
            .axpy(1.0, &position_encoding(TIME_TOKEN_POSITION, d))
            .expect("same dim");
        let time_leaf = tape.leaf(Array::new(vec![1, d], time_row.into_data())?);
        let with_time = tape.concat_rows(&[x, time_leaf])?;

        let out = self
            .stack
            .forward_with_skip_ablation(tape, bound, with_time, ablate_skip)?;
        let frames_only = tape.slice_rows(out, 0, n)?;
        self.output_proj.forward(tape, bound, frames_only)
    }

    /// Convenience inference call on a private tape.
    pub fn eval_field(&self, w: &Array, x_ctx: &Array, z: &[usize], t: f64) -> Result<Array> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, w, x_ctx, z, t)?;
        Ok(tape.value(out).clone())
    }

    /// CFM loss over a batch against one shared parameter binding, so the
    /// reverse pass accumulates item gradients per parameter.
    pub fn cfm_loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        path: &crate::flow::OtPathConfig,
        batch: &crate::flow::CfmBatch,
        masked: bool,
    ) -> Result<NodeId> {
        crate::flow::cfm_loss_with(tape, path, batch, masked, |tape, w, item| {
            self.forward(tape, bound, w, &item.x_ctx, &item.z, item.t)
        })
    }

    /// Parameter counts per top-level block plus the total.
    pub fn parameter_summary(&self) -> Vec<(String, usize)> {
        parameter_summary(&self.params)
    }
}

/// Group parameter counts by the name segment before the first dot.
pub fn parameter_summary(params: &ParamSet) -> Vec<(String, usize)> {
    let mut blocks: Vec<(String, usize)> = Vec::new();
    for (name, array) in params.iter() {
        let block = name.split('.').next().unwrap_or(name).to_string();
        match blocks.iter_mut().find(|(b, _)| *b == block) {
            Some((_, count)) => *count += array.numel(),
            None => blocks.push((block, array.numel())),
        }
    }
    blocks.push(("total".into(), params.total_params()));
    blocks
}

impl CfmModel for VectorFieldModel {
    fn forward_on_tape(
        &self,
        tape: &mut Tape,
        w: &Array,
        x_ctx: &Array,
        z: &[usize],
        t: f64,
    ) -> Result<NodeId> {
        // Evaluation path: parameters are rebound per call. Training goes
        // through cfm_loss, which shares one binding across the batch.
        let bound = self.bind(tape);
        self.forward(tape, &bound, w, x_ctx, z, t)
    }
}
