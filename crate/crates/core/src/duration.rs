//! Duration models: masked L1 regression and the flow-matching variant
//! over 1-wide duration features, plus the log-domain data transforms.

use crate::array::Array;
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::flow::{cfg_combine, cfm_loss_with, CfmBatch, CfmItem, OtPathConfig};
use crate::nn::{
    position_encoding, sinusoidal_embed, Bound, Linear, ParamRef, ParamSet, TransformerStack,
    TIME_TOKEN_POSITION,
};
use crate::ode::{solve, SolveTrace, SolverConfig};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationMode {
    Regression,
    Flow,
}

/// log(1 + x) with optional uniform dequantization of the integer input.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DurationTransform {
    pub dequantize: bool,
}

impl DurationTransform {
    pub fn deterministic() -> Self {
        DurationTransform { dequantize: false }
    }

    pub fn training() -> Self {
        DurationTransform { dequantize: true }
    }

    pub fn forward_one(&self, l: i64, rng: &mut Rng) -> Result<f64> {
        if l < 0 {
            return Err(Error::invalid(format!("negative duration {l}")));
        }
        let mut v = l as f64;
        if self.dequantize {
            v += rng.uniform() - 0.5;
        }
        Ok(v.ln_1p())
    }

    pub fn forward(&self, l: &[i64], rng: &mut Rng) -> Result<Vec<f64>> {
        l.iter().map(|&d| self.forward_one(d, rng)).collect()
    }

    /// round(exp(v) - 1), clipped at zero.
    pub fn inverse_one(v: f64) -> u32 {
        let raw = v.exp_m1().round();
        if raw < 0.0 {
            0
        } else {
            raw as u32
        }
    }

    /// exp(v) - 1 clipped at zero, without quantization.
    pub fn inverse_continuous(v: f64) -> f64 {
        v.exp_m1().max(0.0)
    }
}

/// One duration-model training item.
#[derive(Debug, Clone)]
pub struct DurationItem {
    /// True per-phone frame counts.
    pub l: Vec<u32>,
    /// Context durations: equal to `l` on unmasked phones, zero on masked.
    pub l_ctx: Vec<u32>,
    /// Phone ids, same length.
    pub y: Vec<usize>,
    pub m_phone: Vec<u8>,
}

impl DurationItem {
    pub fn from_mask(l: &[u32], y: &[usize], m_phone: &[u8]) -> Result<Self> {
        if l.len() != y.len() || l.len() != m_phone.len() {
            return Err(Error::invalid("duration item length mismatch"));
        }
        let l_ctx = l
            .iter()
            .zip(m_phone)
            .map(|(&d, &m)| if m == 1 { 0 } else { d })
            .collect();
        Ok(DurationItem {
            l: l.to_vec(),
            l_ctx,
            y: y.to_vec(),
            m_phone: m_phone.to_vec(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.l.len();
        if self.l_ctx.len() != m || self.y.len() != m || self.m_phone.len() != m {
            return Err(Error::invalid("duration item length mismatch"));
        }
        for i in 0..m {
            let expect = if self.m_phone[i] == 1 { 0 } else { self.l[i] };
            if self.l_ctx[i] != expect {
                return Err(Error::invalid(format!(
                    "duration item: l_ctx[{i}] = {} but mask says {expect}",
                    self.l_ctx[i]
                )));
            }
        }
        Ok(())
    }

    /// Transformed context column, exactly zero at masked phones.
    fn context_column(&self, transform: &DurationTransform, rng: &mut Rng) -> Result<Array> {
        let mut data = Vec::with_capacity(self.l_ctx.len());
        for (&d, &m) in self.l_ctx.iter().zip(&self.m_phone) {
            if m == 1 {
                data.push(0.0);
            } else {
                data.push(transform.forward_one(d as i64, rng)?);
            }
        }
        Array::new(vec![self.l_ctx.len(), 1], data)
    }
}

#[derive(Debug, Clone)]
pub struct DurationBatch {
    pub items: Vec<DurationItem>,
}

impl DurationBatch {
    pub fn new(items: Vec<DurationItem>) -> Result<Self> {
        for item in &items {
            item.validate()?;
        }
        Ok(DurationBatch { items })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DurationNetConfig {
    pub vocab: usize,
    pub phone_embed_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub use_skip_connections: bool,
    pub mode: DurationMode,
    /// When false the context stream is structurally zeroed, giving the
    /// unconditional regression baseline.
    pub use_context: bool,
}

impl Default for DurationNetConfig {
    fn default() -> Self {
        DurationNetConfig {
            vocab: 50,
            phone_embed_dim: 16,
            model_dim: 32,
            layers: 2,
            heads: 2,
            ffn_width: 64,
            use_skip_connections: true,
            mode: DurationMode::Regression,
            use_context: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DurationModel {
    pub config: DurationNetConfig,
    pub params: ParamSet,
    phone_embed: ParamRef,
    input_proj: Linear,
    stack: TransformerStack,
    output_proj: Linear,
}

impl DurationModel {
    pub fn new(config: DurationNetConfig, rng: &mut Rng) -> Result<Self> {
        if config.model_dim % config.heads != 0 || config.model_dim % 2 != 0 {
            return Err(Error::invalid("duration model dim incompatible with heads"));
        }
        let mut params = ParamSet::new();
        let table = {
            let data = (0..config.vocab * config.phone_embed_dim)
                .map(|_| rng.gaussian() * 0.5)
                .collect();
            Array::new(vec![config.vocab, config.phone_embed_dim], data)?
        };
        let phone_embed = params.add("phone_embed", table);
        // Regression reads [l_ctx, y_emb]; flow additionally reads the
        // current sample w.
        let input_width = match config.mode {
            DurationMode::Regression => 1 + config.phone_embed_dim,
            DurationMode::Flow => 2 + config.phone_embed_dim,
        };
        let input_proj = Linear::new(&mut params, "input_proj", input_width, config.model_dim, rng);
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
        let output_proj = Linear::new(&mut params, "output_proj", config.model_dim, 1, rng);
        Ok(DurationModel {
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

    /// The same network with a replaced parameter set.
    pub fn with_params(&self, params: ParamSet) -> Self {
        DurationModel {
            params,
            ..self.clone()
        }
    }

    fn check_phones(&self, y: &[usize]) -> Result<()> {
        for &id in y {
            if id >= self.config.vocab {
                return Err(Error::UnknownPhone {
                    id,
                    vocab: self.config.vocab,
                });
            }
        }
        Ok(())
    }

    fn trunk(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        columns: &[NodeId],
        y: &[usize],
        time: Option<f64>,
    ) -> Result<NodeId> {
        let m = y.len();
        let d = self.config.model_dim;
        let y_emb = tape.gather(bound.id(self.phone_embed), y)?;
        let mut parts = columns.to_vec();
        parts.push(y_emb);
        let joined = tape.concat_cols(&parts)?;
        let mut x = self.input_proj.forward(tape, bound, joined)?;
        let mut pos = Array::zeros(&[m, d]);
        for i in 0..m {
            pos.row_mut(i).copy_from_slice(position_encoding(i, d).data());
        }
        let pos_leaf = tape.leaf(pos);
        x = tape.add(x, pos_leaf)?;
        let (x, rows) = match time {
            Some(t) => {
                let mut row = sinusoidal_embed(t, d)?;
                row.axpy(1.0, &position_encoding(TIME_TOKEN_POSITION, d))
                    .expect("same dim");
                let leaf = tape.leaf(Array::new(vec![1, d], row.into_data())?);
                (tape.concat_rows(&[x, leaf])?, m)
            }
            None => (x, m),
        };
        let out = self.stack.forward(tape, bound, x)?;
        let frames = if tape.value(out).rows() > rows {
            tape.slice_rows(out, 0, rows)?
        } else {
            out
        };
        self.output_proj.forward(tape, bound, frames)
    }

    /// Regression forward: transformed duration predictions, [M, 1].
    pub fn forward_regression(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        l_ctx_col: &Array,
        y: &[usize],
    ) -> Result<NodeId> {
        if self.config.mode != DurationMode::Regression {
            return Err(Error::invalid(
                "regression forward on a flow-mode duration model",
            ));
        }
        self.check_phones(y)?;
        let ctx = self.context_leaf(tape, l_ctx_col);
        self.trunk(tape, bound, &[ctx], y, None)
    }

    /// Flow forward: vector-field value at (t, w), [M, 1].
    pub fn forward_flow(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        w: &Array,
        l_ctx_col: &Array,
        y: &[usize],
        t: f64,
    ) -> Result<NodeId> {
        if self.config.mode != DurationMode::Flow {
            return Err(Error::invalid(
                "flow forward on a regression-mode duration model",
            ));
        }
        self.check_phones(y)?;
        let w_leaf = tape.leaf(w.clone());
        let ctx = self.context_leaf(tape, l_ctx_col);
        self.trunk(tape, bound, &[w_leaf, ctx], y, Some(t))
    }

    fn context_leaf(&self, tape: &mut Tape, l_ctx_col: &Array) -> NodeId {
        if self.config.use_context {
            tape.leaf(l_ctx_col.clone())
        } else {
            tape.leaf(Array::zeros(l_ctx_col.shape()))
        }
    }

    /// Masked L1 regression loss, normalized by the count of masked
    /// phones in the batch.
    pub fn regression_loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &DurationBatch,
        transform: &DurationTransform,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        let masked_total: usize = batch
            .items
            .iter()
            .map(|it| it.m_phone.iter().filter(|&&m| m == 1).count())
            .sum();
        if masked_total == 0 {
            return Err(Error::EmptyMask("duration regression needs masked phones".into()));
        }
        let mut total: Option<NodeId> = None;
        for item in &batch.items {
            let ctx = item.context_column(transform, rng)?;
            let pred = self.forward_regression(tape, bound, &ctx, &item.y)?;
            let target: Vec<f64> = item
                .l
                .iter()
                .map(|&d| transform.forward_one(d as i64, rng))
                .collect::<Result<_>>()?;
            let target_leaf = tape.leaf(Array::new(vec![item.l.len(), 1], target)?);
            let diff = tape.sub(pred, target_leaf)?;
            // |diff| = diff * sign(diff) with sign treated as constant.
            let signs: Vec<f64> = tape
                .value(diff)
                .data()
                .iter()
                .zip(&item.m_phone)
                .map(|(&v, &m)| if m == 1 { v.signum() } else { 0.0 })
                .collect();
            let sign_leaf = tape.leaf(Array::new(vec![item.l.len(), 1], signs)?);
            let gated = tape.mul(diff, sign_leaf)?;
            let reduced = tape.sum(gated);
            total = Some(match total {
                None => reduced,
                Some(acc) => tape.add(acc, reduced)?,
            });
        }
        Ok(tape.scale(total.expect("non-empty"), 1.0 / masked_total as f64))
    }

    /// Masked CFM loss over transformed duration features.
    pub fn cfm_loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        path: &OtPathConfig,
        batch: &DurationBatch,
        transform: &DurationTransform,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        let items = batch
            .items
            .iter()
            .map(|item| self.duration_cfm_item(item, transform, rng))
            .collect::<Result<Vec<_>>>()?;
        let cfm = CfmBatch::new(items)?;
        cfm_loss_with(tape, path, &cfm, true, |tape, w, it| {
            self.forward_flow(tape, bound, w, &it.x_ctx, &it.z, it.t)
        })
    }

    /// Swap (x, x_ctx, z) for (l, l_ctx, y) on 1-wide features.
    pub fn duration_cfm_item(
        &self,
        item: &DurationItem,
        transform: &DurationTransform,
        rng: &mut Rng,
    ) -> Result<CfmItem> {
        item.validate()?;
        let m = item.l.len();
        let x1: Vec<f64> = item
            .l
            .iter()
            .map(|&d| transform.forward_one(d as i64, rng))
            .collect::<Result<_>>()?;
        let x_ctx = item.context_column(transform, rng)?;
        let x0 = rng.gaussian_vec(m);
        let t = rng.uniform();
        Ok(CfmItem {
            x1: Array::new(vec![m, 1], x1)?,
            x0: Array::new(vec![m, 1], x0)?,
            t,
            x_ctx,
            z: item.y.clone(),
            m: item.m_phone.clone(),
        })
    }

    pub fn parameter_summary(&self) -> Vec<(String, usize)> {
        crate::audio_net::parameter_summary(&self.params)
    }
}

/// Integer duration prediction. Unmasked entries are copied from `l_ctx`
/// unchanged; masked entries come from the model. Regression is
/// deterministic; flow mode samples one ODE path from the prior.
#[allow(clippy::too_many_arguments)]
pub fn predict_durations(
    model: &DurationModel,
    y: &[usize],
    l_ctx: &[u32],
    m_phone: &[u8],
    mode: DurationMode,
    solver: &SolverConfig,
    rng: &mut Rng,
) -> Result<Vec<u32>> {
    let values = predict_transformed(model, y, l_ctx, m_phone, mode, solver, rng)?;
    Ok(y.iter()
        .enumerate()
        .map(|(i, _)| {
            if m_phone[i] == 1 {
                DurationTransform::inverse_one(values[i])
            } else {
                l_ctx[i]
            }
        })
        .collect())
}

/// Continuous point estimate used by the duration metrics: the plain
/// regression output, or the mean over `n_samples` flow draws of the
/// quantized durations.
#[allow(clippy::too_many_arguments)]
pub fn predict_durations_mean(
    model: &DurationModel,
    y: &[usize],
    l_ctx: &[u32],
    m_phone: &[u8],
    mode: DurationMode,
    solver: &SolverConfig,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    match mode {
        DurationMode::Regression => {
            let values = predict_transformed(model, y, l_ctx, m_phone, mode, solver, rng)?;
            Ok(y.iter()
                .enumerate()
                .map(|(i, _)| {
                    if m_phone[i] == 1 {
                        DurationTransform::inverse_continuous(values[i])
                    } else {
                        l_ctx[i] as f64
                    }
                })
                .collect())
        }
        DurationMode::Flow => {
            let mut acc = vec![0.0; y.len()];
            for _ in 0..n_samples.max(1) {
                let draw = predict_durations(model, y, l_ctx, m_phone, mode, solver, rng)?;
                for (a, &d) in acc.iter_mut().zip(&draw) {
                    *a += d as f64;
                }
            }
            let n = n_samples.max(1) as f64;
            acc.iter_mut().for_each(|v| *v /= n);
            Ok(acc)
        }
    }
}

fn predict_transformed(
    model: &DurationModel,
    y: &[usize],
    l_ctx: &[u32],
    m_phone: &[u8],
    mode: DurationMode,
    solver: &SolverConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if mode != model.config.mode {
        return Err(Error::invalid(format!(
            "duration model trained for {:?}, requested {mode:?}",
            model.config.mode
        )));
    }
    let m = y.len();
    if l_ctx.len() != m || m_phone.len() != m {
        return Err(Error::invalid("duration prediction length mismatch"));
    }
    let transform = DurationTransform::deterministic();
    let item = DurationItem {
        l: l_ctx.to_vec(),
        l_ctx: l_ctx
            .iter()
            .zip(m_phone)
            .map(|(&d, &mk)| if mk == 1 { 0 } else { d })
            .collect(),
        y: y.to_vec(),
        m_phone: m_phone.to_vec(),
    };
    let ctx = item.context_column(&transform, rng)?;

    match mode {
        DurationMode::Regression => {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let pred = model.forward_regression(&mut tape, &bound, &ctx, y)?;
            Ok(tape.value(pred).data().to_vec())
        }
        DurationMode::Flow => {
            let x0 = Array::new(vec![m, 1], rng.gaussian_vec(m))?;
            let trace = solve_duration_field(model, &ctx, y, &x0, solver)?;
            Ok(trace.endpoint.data().to_vec())
        }
    }
}

/// Integrate the duration vector field with optional guidance.
pub fn solve_duration_field(
    model: &DurationModel,
    l_ctx_col: &Array,
    y: &[usize],
    x0: &Array,
    solver: &SolverConfig,
) -> Result<SolveTrace> {
    let alpha = solver.cfg_alpha;
    let null_y = vec![crate::seq::PhoneTable::NULL_ID; y.len()];
    let zero_ctx = Array::zeros(l_ctx_col.shape());
    let mut trace = solve(
        |t, w| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let cond = model.forward_flow(&mut tape, &bound, w, l_ctx_col, y, t)?;
            let v_cond = tape.value(cond).clone();
            if alpha == 0.0 {
                return Ok(v_cond);
            }
            let uncond = model.forward_flow(&mut tape, &bound, w, &zero_ctx, &null_y, t)?;
            cfg_combine(&v_cond, tape.value(uncond), alpha)
        },
        x0,
        solver,
    )?;
    if alpha != 0.0 {
        trace.nfe *= 2;
    }
    Ok(trace)
}
