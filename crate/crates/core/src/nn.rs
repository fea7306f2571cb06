//! Trainable building blocks: parameter registry, linear/attention/FFN
//! layers, pre-norm transformer stack with symmetric skip connections,
//! sinusoidal embeddings, and the Adam optimizer with norm clipping.

use crate::array::Array;
use crate::autodiff::{Gradients, NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Position index given to the appended flow-step token, outside any
/// reachable frame position.
pub const TIME_TOKEN_POSITION: usize = 4095;

/// Handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef(usize);

/// Flat, named parameter registry. Models allocate their tensors here so
/// that binding, optimization, checkpointing, and counting all see one
/// consistent ordering.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<(String, Array)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamRef {
        self.entries.push((name.into(), value));
        ParamRef(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, r: ParamRef) -> &Array {
        &self.entries[r.0].1
    }

    pub fn get_mut(&mut self, r: ParamRef) -> &mut Array {
        &mut self.entries[r.0].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.entries.iter().map(|(n, a)| (n.as_str(), a))
    }

    pub fn name_at(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn at(&self, i: usize) -> &Array {
        &self.entries[i].1
    }

    pub fn at_mut(&mut self, i: usize) -> &mut Array {
        &mut self.entries[i].1
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array)> {
        self.entries.iter_mut().map(|(n, a)| (n.as_str(), a))
    }

    pub fn total_params(&self) -> usize {
        self.entries.iter().map(|(_, a)| a.numel()).sum()
    }

    /// Register every parameter as a tape leaf for one forward/backward pass.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let ids = self
            .entries
            .iter()
            .map(|(_, a)| tape.leaf(a.clone()))
            .collect();
        Bound { ids }
    }
}

/// Per-pass tape ids of a bound [`ParamSet`].
pub struct Bound {
    ids: Vec<NodeId>,
}

impl Bound {
    pub fn id(&self, r: ParamRef) -> NodeId {
        self.ids[r.0]
    }

    /// Collect gradients in registry order; zero arrays for untouched params.
    pub fn gradients(&self, set: &ParamSet, grads: &mut Gradients) -> Vec<Array> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                grads
                    .take(id)
                    .unwrap_or_else(|| Array::zeros(set.entries[i].1.shape()))
            })
            .collect()
    }
}

/// Sinusoidal embedding of the flow step t in [0, 1].
///
/// t is scaled to a position of up to 1000 so that a 1/1000 grid of flow
/// steps maps to distinct vectors; even dims carry sin, odd dims cos.
pub fn sinusoidal_embed(t: f64, dim: usize) -> Result<Array> {
    if dim % 2 != 0 {
        return Err(Error::invalid(format!(
            "sinusoidal embedding dim must be even, got {dim}"
        )));
    }
    Ok(sinusoid(t * 1000.0, dim))
}

/// Sinusoidal encoding of an integer sequence position.
pub fn position_encoding(pos: usize, dim: usize) -> Array {
    sinusoid(pos as f64, dim)
}

fn sinusoid(pos: f64, dim: usize) -> Array {
    let half = dim / 2;
    let mut data = vec![0.0; dim];
    for i in 0..half {
        let freq = (10_000f64).powf(-2.0 * i as f64 / dim as f64);
        data[2 * i] = (pos * freq).sin();
        data[2 * i + 1] = (pos * freq).cos();
    }
    Array::from_vec(data)
}

fn init_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Array {
    let scale = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gaussian() * scale).collect();
    Array::new(vec![rows, cols], data).expect("sized init")
}

/// y = x W + b with W stored [in, out].
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamRef,
    pub b: ParamRef,
}

impl Linear {
    pub fn new(set: &mut ParamSet, name: &str, input: usize, output: usize, rng: &mut Rng) -> Self {
        let w = set.add(format!("{name}.w"), init_matrix(rng, input, output));
        let b = set.add(format!("{name}.b"), Array::zeros(&[output]));
        Linear { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: NodeId) -> Result<NodeId> {
        let h = tape.matmul(x, bound.id(self.w))?;
        tape.add_bias(h, bound.id(self.b))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamRef,
    pub beta: ParamRef,
}

impl LayerNorm {
    pub fn new(set: &mut ParamSet, name: &str, dim: usize) -> Self {
        let gamma = set.add(format!("{name}.gamma"), Array::full(&[dim], 1.0));
        let beta = set.add(format!("{name}.beta"), Array::zeros(&[dim]));
        LayerNorm { gamma, beta }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: NodeId) -> Result<NodeId> {
        tape.layer_norm(x, bound.id(self.gamma), bound.id(self.beta))
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    heads: usize,
    head_dim: usize,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
}

impl Attention {
    pub fn new(set: &mut ParamSet, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Self {
        let head_dim = dim / heads;
        Attention {
            heads,
            head_dim,
            wq: Linear::new(set, &format!("{name}.wq"), dim, dim, rng),
            wk: Linear::new(set, &format!("{name}.wk"), dim, dim, rng),
            wv: Linear::new(set, &format!("{name}.wv"), dim, dim, rng),
            wo: Linear::new(set, &format!("{name}.wo"), dim, dim, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: NodeId) -> Result<NodeId> {
        let q = self.wq.forward(tape, bound, x)?;
        let k = self.wk.forward(tape, bound, x)?;
        let v = self.wv.forward(tape, bound, x)?;
        let inv_sqrt = 1.0 / (self.head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * self.head_dim, (h + 1) * self.head_dim);
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scaled = tape.scale(scores, inv_sqrt);
            let probs = tape.softmax(scaled);
            outs.push(tape.matmul(probs, vh)?);
        }
        let merged = tape.concat_cols(&outs)?;
        self.wo.forward(tape, bound, merged)
    }
}

#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
}

impl TransformerBlock {
    pub fn new(
        set: &mut ParamSet,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_width: usize,
        rng: &mut Rng,
    ) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(set, &format!("{name}.ln1"), dim),
            attn: Attention::new(set, &format!("{name}.attn"), dim, heads, rng),
            ln2: LayerNorm::new(set, &format!("{name}.ln2"), dim),
            ffn_in: Linear::new(set, &format!("{name}.ffn_in"), dim, ffn_width, rng),
            ffn_out: Linear::new(set, &format!("{name}.ffn_out"), ffn_width, dim, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: NodeId) -> Result<NodeId> {
        let normed = self.ln1.forward(tape, bound, x)?;
        let attended = self.attn.forward(tape, bound, normed)?;
        let x = tape.add(x, attended)?;
        let normed = self.ln2.forward(tape, bound, x)?;
        let hidden = self.ffn_in.forward(tape, bound, normed)?;
        let activated = tape.tanh(hidden);
        let out = self.ffn_out.forward(tape, bound, activated)?;
        tape.add(x, out)
    }
}

/// Pre-norm transformer stack. With skips enabled (layer count must be
/// even), the output of first-half layer i is concatenated channel-wise
/// into the input of its symmetric partner and combined by a linear layer.
#[derive(Debug, Clone)]
pub struct TransformerStack {
    blocks: Vec<TransformerBlock>,
    combiners: Vec<Linear>,
    use_skips: bool,
}

impl TransformerStack {
    pub fn new(
        set: &mut ParamSet,
        name: &str,
        dim: usize,
        layers: usize,
        heads: usize,
        ffn_width: usize,
        use_skips: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dim % heads != 0 {
            return Err(Error::invalid(format!(
                "model dim {dim} not divisible by {heads} heads"
            )));
        }
        if use_skips && layers % 2 != 0 {
            return Err(Error::invalid(format!(
                "skip connections require an even layer count, got {layers}"
            )));
        }
        let blocks = (0..layers)
            .map(|i| {
                TransformerBlock::new(set, &format!("{name}.layer{i}"), dim, heads, ffn_width, rng)
            })
            .collect();
        let combiners = if use_skips {
            (0..layers / 2)
                .map(|i| Linear::new(set, &format!("{name}.skip{i}"), 2 * dim, dim, rng))
                .collect()
        } else {
            Vec::new()
        };
        Ok(TransformerStack {
            blocks,
            combiners,
            use_skips,
        })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: NodeId) -> Result<NodeId> {
        self.forward_with_skip_ablation(tape, bound, x, None)
    }

    /// Diagnostic forward where the saved skip state of first-half layer
    /// `ablate` is replaced with zeros before reaching its partner.
    pub fn forward_with_skip_ablation(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        mut x: NodeId,
        ablate: Option<usize>,
    ) -> Result<NodeId> {
        let layers = self.blocks.len();
        let half = layers / 2;
        let mut saved: Vec<NodeId> = Vec::with_capacity(half);
        for (i, block) in self.blocks.iter().enumerate() {
            if self.use_skips && i >= half {
                let partner = saved[layers - 1 - i];
                let joined = tape.concat_cols(&[x, partner])?;
                x = self.combiners[i - half].forward(tape, bound, joined)?;
            }
            x = block.forward(tape, bound, x)?;
            if self.use_skips && i < half {
                if ablate == Some(i) {
                    let zero = Array::zeros(tape.value(x).shape());
                    saved.push(tape.leaf(zero));
                } else {
                    saved.push(x);
                }
            }
        }
        Ok(x)
    }
}

/// Linear warmup to `peak` followed by linear decay to zero at `total`.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let rest = (self.total_steps.max(self.warmup_steps + 1) - self.warmup_steps) as f64;
        let done = (step - self.warmup_steps) as f64;
        (self.peak * (1.0 - done / rest)).max(0.0)
    }
}

pub struct Adam {
    schedule: LrSchedule,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Array>,
    v: Vec<Array>,
    step: usize,
}

impl Adam {
    pub fn new(set: &ParamSet, schedule: LrSchedule) -> Self {
        let m = set.iter().map(|(_, a)| Array::zeros(a.shape())).collect();
        let v = set.iter().map(|(_, a)| Array::zeros(a.shape())).collect();
        Adam {
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m,
            v,
            step: 0,
        }
    }

    /// One update. `grads` must be in registry order. Returns the global
    /// gradient norm after clipping.
    pub fn step(&mut self, set: &mut ParamSet, mut grads: Vec<Array>, clip_norm: Option<f64>) -> f64 {
        let mut sq = 0.0;
        for g in &grads {
            sq += g.data().iter().map(|v| v * v).sum::<f64>();
        }
        let mut norm = sq.sqrt();
        if let Some(clip) = clip_norm {
            if norm > clip && norm > 0.0 {
                let s = clip / norm;
                for g in &mut grads {
                    for v in g.data_mut() {
                        *v *= s;
                    }
                }
                norm = clip;
            }
        }
        let lr = self.schedule.at(self.step);
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (i, (_, p)) in set.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let pd = p.data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                pd[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        norm
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoidal_t0_alternates_sin0_cos1() {
        let e = sinusoidal_embed(0.0, 8).unwrap();
        for i in 0..4 {
            assert_eq!(e.data()[2 * i], 0.0);
            assert_eq!(e.data()[2 * i + 1], 1.0);
        }
    }

    #[test]
    fn sinusoidal_endpoints_differ() {
        let a = sinusoidal_embed(0.0, 16).unwrap();
        let b = sinusoidal_embed(1.0, 16).unwrap();
        assert!(a.sub(&b).unwrap().l2_norm() > 0.0);
    }

    #[test]
    fn sinusoidal_matches_hand_table() {
        // Independent recomputation for t = 0.5, dim = 8.
        let e = sinusoidal_embed(0.5, 8).unwrap();
        let pos = 500.0;
        for i in 0..4 {
            let freq = (10_000f64).powf(-(2.0 * i as f64) / 8.0);
            assert!((e.data()[2 * i] - (pos * freq).sin()).abs() < 1e-15);
            assert!((e.data()[2 * i + 1] - (pos * freq).cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn sinusoidal_odd_dim_rejected() {
        assert!(sinusoidal_embed(0.3, 7).is_err());
    }

    #[test]
    fn sinusoidal_grid_distinct() {
        let mut seen: Vec<Vec<u64>> = Vec::new();
        for k in 0..=1000 {
            let e = sinusoidal_embed(k as f64 / 1000.0, 8).unwrap();
            let bits: Vec<u64> = e.data().iter().map(|v| v.to_bits()).collect();
            assert!(!seen.contains(&bits), "duplicate embedding at {k}/1000");
            seen.push(bits);
        }
    }

    #[test]
    fn schedule_warmup_and_decay() {
        let s = LrSchedule {
            peak: 1e-3,
            warmup_steps: 10,
            total_steps: 110,
        };
        assert!(s.at(0) > 0.0 && s.at(0) < s.at(5));
        assert!((s.at(9) - 1e-3).abs() < 1e-12);
        assert!(s.at(60) < 1e-3);
        assert!(s.at(109) > 0.0);
    }

    #[test]
    fn adam_reduces_quadratic() {
        let mut rng = Rng::new(2);
        let mut set = ParamSet::new();
        let p = set.add("p", Array::new(vec![4], rng.gaussian_vec(4)).unwrap());
        let sched = LrSchedule {
            peak: 0.1,
            warmup_steps: 0,
            total_steps: 200,
        };
        let mut adam = Adam::new(&set, sched);
        let loss_of = |set: &ParamSet| -> f64 { set.get(p).data().iter().map(|v| v * v).sum() };
        let initial = loss_of(&set);
        for _ in 0..100 {
            let mut tape = Tape::new();
            let bound = set.bind(&mut tape);
            let sq = tape.mul(bound.id(p), bound.id(p)).unwrap();
            let loss = tape.sum(sq);
            let mut grads = tape.backward(loss).unwrap();
            let flat = bound.gradients(&set, &mut grads);
            adam.step(&mut set, flat, None);
        }
        assert!(loss_of(&set) < initial * 0.01);
    }

    #[test]
    fn clipping_bounds_returned_norm() {
        let mut set = ParamSet::new();
        set.add("p", Array::from_vec(vec![1.0, 1.0]));
        let sched = LrSchedule {
            peak: 1e-3,
            warmup_steps: 0,
            total_steps: 10,
        };
        let mut adam = Adam::new(&set, sched);
        let big = vec![Array::from_vec(vec![100.0, -50.0])];
        let norm = adam.step(&mut set, big, Some(0.2));
        assert!(norm <= 0.2 + 1e-9);
    }
}
