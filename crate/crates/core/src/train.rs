//! The training driver: batch assembly under the mask and conditioning-
//! dropout policies, family upsampling, gradient clipping, and loss
//! curves. Deterministic given the seed.

use crate::array::Array;
use crate::audio_net::VectorFieldModel;
use crate::autodiff::Tape;
use crate::config::TrainConfig;
use crate::dataset::{Dataset, DatasetRecord};
use crate::duration::{DurationItem, DurationModel, DurationTransform};
use crate::error::{Error, Result};
use crate::flow::{drop_conditioning, CfmBatch, CfmItem, OtPathConfig};
use crate::nn::{Adam, LrSchedule};
use crate::rng::Rng;
use crate::seq::{build_context, sample_training_mask_with, MaskKind, PhoneAlignment, PhoneTable};
use crate::synth::language_upsample_weights;

#[derive(Debug, Clone, Copy)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub curve: Vec<LossPoint>,
    pub final_loss: f64,
}

/// Family-aware record sampler. With an upsampling exponent, a family is
/// drawn by the reweighted hour shares and then a record uniformly within
/// it; otherwise records are drawn uniformly.
struct RecordSampler {
    by_family: Vec<Vec<usize>>,
    weights: Option<Vec<f64>>,
}

impl RecordSampler {
    fn new(dataset: &Dataset, beta: Option<f64>) -> Result<Self> {
        let families = dataset.families();
        let mut by_family: Vec<Vec<usize>> = vec![Vec::new(); families.len()];
        for (i, r) in dataset.records.iter().enumerate() {
            let slot = families.iter().position(|&f| f == r.family).expect("family listed");
            by_family[slot].push(i);
        }
        let weights = match beta {
            Some(beta) if by_family.len() > 1 => {
                let hours: Vec<f64> = by_family
                    .iter()
                    .map(|idxs| {
                        idxs.iter()
                            .map(|&i| dataset.records[i].frames.rows() as f64)
                            .sum::<f64>()
                            .max(1.0)
                    })
                    .collect();
                Some(language_upsample_weights(&hours, beta)?)
            }
            _ => None,
        };
        Ok(RecordSampler { by_family, weights })
    }

    fn draw<'d>(&self, dataset: &'d Dataset, rng: &mut Rng) -> &'d DatasetRecord {
        match &self.weights {
            Some(weights) => {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut family = 0;
                for (i, &w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        family = i;
                        break;
                    }
                    family = i;
                }
                let idxs = &self.by_family[family];
                &dataset.records[idxs[rng.below(idxs.len())]]
            }
            None => &dataset.records[rng.below(dataset.records.len())],
        }
    }
}

/// Random contiguous phone-aligned chunk with at most `cap` frames.
pub fn chunk_to_cap(
    frames: &Array,
    alignment: &PhoneAlignment,
    cap: usize,
    rng: &mut Rng,
) -> Result<(Array, PhoneAlignment)> {
    if alignment.total_frames() <= cap {
        return Ok((frames.clone(), alignment.clone()));
    }
    let m = alignment.len();
    // Choose a phone window [s, e) whose frames fit the cap, starting
    // from a uniform phone position that can hold at least one phone.
    let mut starts: Vec<usize> = Vec::new();
    for s in 0..m {
        if alignment.l[s] as usize <= cap {
            starts.push(s);
        }
    }
    if starts.is_empty() {
        return Err(Error::invalid("chunk cap smaller than every phone"));
    }
    let s = starts[rng.below(starts.len())];
    let mut e = s;
    let mut frames_taken = 0usize;
    while e < m && frames_taken + alignment.l[e] as usize <= cap {
        frames_taken += alignment.l[e] as usize;
        e += 1;
    }
    let offset: usize = alignment.l[..s].iter().map(|&d| d as usize).sum();
    let mut data = Vec::with_capacity(frames_taken * frames.cols());
    for i in offset..offset + frames_taken {
        data.extend_from_slice(frames.row(i));
    }
    let chunk_frames = Array::new(vec![frames_taken, frames.cols()], data)?;
    let words = alignment
        .words
        .iter()
        .filter(|r| r.start >= s && r.end <= e)
        .map(|r| r.start - s..r.end - s)
        .collect();
    let chunk_alignment = PhoneAlignment {
        y: alignment.y[s..e].to_vec(),
        l: alignment.l[s..e].to_vec(),
        words,
    };
    Ok((chunk_frames, chunk_alignment))
}

/// Periodic snapshot hook: (interval, callback on the parameter set).
pub type CheckpointHook<'a> = (usize, &'a mut dyn FnMut(usize, &crate::nn::ParamSet) -> Result<()>);

/// Train the audio model. Returns the loss curve; aborts with a
/// non-finite error (callers keep their last interval checkpoint) if the
/// loss diverges.
pub fn train_audio(
    model: &mut VectorFieldModel,
    dataset: &Dataset,
    path: &OtPathConfig,
    cfg: &TrainConfig,
    seed: u64,
    mut on_step: impl FnMut(&LossPoint),
) -> Result<TrainOutput> {
    train_audio_with_hooks(model, dataset, path, cfg, seed, &mut on_step, None)
}

pub fn train_audio_with_hooks(
    model: &mut VectorFieldModel,
    dataset: &Dataset,
    path: &OtPathConfig,
    cfg: &TrainConfig,
    seed: u64,
    on_step: &mut dyn FnMut(&LossPoint),
    mut checkpoint: Option<CheckpointHook<'_>>,
) -> Result<TrainOutput> {
    if dataset.records.is_empty() {
        return Err(Error::invalid("training needs a non-empty dataset"));
    }
    let table = &dataset.header.phone_table;
    let sampler = RecordSampler::new(dataset, cfg.upsample_beta)?;
    let schedule = LrSchedule {
        peak: cfg.peak_lr,
        warmup_steps: cfg.warmup_steps,
        total_steps: cfg.steps,
    };
    let mut adam = Adam::new(&model.params, schedule);
    let mut rng = Rng::stream(seed, 0xA0D10);
    let mut curve = Vec::new();
    let mut last_loss = f64::NAN;

    for step in 0..cfg.steps {
        let mut items = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let record = sampler.draw(dataset, &mut rng);
            let (frames, alignment) =
                chunk_to_cap(&record.frames, &record.alignment, cfg.chunk_cap, &mut rng)?;
            let mask = sample_training_mask_with(
                &alignment,
                MaskKind::Audio,
                &cfg.audio_mask,
                &mut rng,
            )?;
            let z = table.encode_seq(&alignment.frame_transcript()?)?;
            let x_ctx = build_context(&frames, &mask.m)?;
            let n = frames.rows();
            let f = frames.cols();
            let item = CfmItem {
                x0: Array::new(vec![n, f], rng.gaussian_vec(n * f))?,
                t: rng.uniform(),
                x1: frames,
                x_ctx,
                z,
                m: mask.m,
            };
            items.push(drop_conditioning(item, cfg.p_uncond, PhoneTable::NULL_ID, &mut rng)?);
        }
        // A fully unmasked batch cannot happen (masks cover >= 70% or
        // everything), so the masked loss is always defined.
        let batch = CfmBatch::new(items)?;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let loss_node = model.cfm_loss(&mut tape, &bound, path, &batch, cfg.masked_loss)?;
        let loss = tape.value(loss_node).data()[0];
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                op: "audio training loss",
                step,
            });
        }
        let mut grads = tape.backward(loss_node)?;
        let flat = bound.gradients(&model.params, &mut grads);
        let lr = schedule.at(step);
        let grad_norm = adam.step(&mut model.params, flat, Some(cfg.grad_clip));
        last_loss = loss;
        let point = LossPoint {
            step,
            loss,
            grad_norm,
            lr,
        };
        if step % cfg.log_interval.max(1) == 0 || step + 1 == cfg.steps {
            curve.push(point);
        }
        on_step(&point);
        if let Some((interval, hook)) = checkpoint.as_mut() {
            if (step + 1) % (*interval).max(1) == 0 && step + 1 < cfg.steps {
                hook(step + 1, &model.params)?;
            }
        }
    }
    Ok(TrainOutput {
        curve,
        final_loss: last_loss,
    })
}

/// Train a duration model in its configured mode.
pub fn train_duration(
    model: &mut DurationModel,
    dataset: &Dataset,
    path: &OtPathConfig,
    cfg: &TrainConfig,
    seed: u64,
    mut on_step: impl FnMut(&LossPoint),
) -> Result<TrainOutput> {
    train_duration_with_hooks(model, dataset, path, cfg, seed, &mut on_step, None)
}

pub fn train_duration_with_hooks(
    model: &mut DurationModel,
    dataset: &Dataset,
    path: &OtPathConfig,
    cfg: &TrainConfig,
    seed: u64,
    on_step: &mut dyn FnMut(&LossPoint),
    mut checkpoint: Option<CheckpointHook<'_>>,
) -> Result<TrainOutput> {
    if dataset.records.is_empty() {
        return Err(Error::invalid("training needs a non-empty dataset"));
    }
    let table = &dataset.header.phone_table;
    let sampler = RecordSampler::new(dataset, cfg.upsample_beta)?;
    let schedule = LrSchedule {
        peak: cfg.peak_lr,
        warmup_steps: cfg.warmup_steps,
        total_steps: cfg.steps,
    };
    let mut adam = Adam::new(&model.params, schedule);
    let mut rng = Rng::stream(seed, 0xD0D10);
    let transform = DurationTransform::training();
    let mut curve = Vec::new();
    let mut last_loss = f64::NAN;

    for step in 0..cfg.steps {
        let mut items = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let record = sampler.draw(dataset, &mut rng);
            let alignment = &record.alignment;
            let mask = sample_training_mask_with(
                alignment,
                MaskKind::Duration,
                &cfg.duration_mask,
                &mut rng,
            )?;
            let y = table.encode_seq(&alignment.y)?;
            let mut item = DurationItem::from_mask(&alignment.l, &y, &mask.m_phone)?;
            // Conditioning dropout: null phones, no duration context, and
            // the loss mask widens to the whole sequence so the item stays
            // self-consistent.
            if rng.bernoulli(cfg.p_uncond) {
                item.y.iter_mut().for_each(|id| *id = PhoneTable::NULL_ID);
                item.m_phone.iter_mut().for_each(|m| *m = 1);
                item.l_ctx.iter_mut().for_each(|d| *d = 0);
            }
            items.push(item);
        }
        let batch = crate::duration::DurationBatch::new(items)?;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let loss_node = match model.config.mode {
            crate::duration::DurationMode::Regression => {
                model.regression_loss(&mut tape, &bound, &batch, &transform, &mut rng)?
            }
            crate::duration::DurationMode::Flow => {
                model.cfm_loss(&mut tape, &bound, path, &batch, &transform, &mut rng)?
            }
        };
        let loss = tape.value(loss_node).data()[0];
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                op: "duration training loss",
                step,
            });
        }
        let mut grads = tape.backward(loss_node)?;
        let flat = bound.gradients(&model.params, &mut grads);
        let lr = schedule.at(step);
        let grad_norm = adam.step(&mut model.params, flat, Some(cfg.grad_clip));
        last_loss = loss;
        let point = LossPoint {
            step,
            loss,
            grad_norm,
            lr,
        };
        if step % cfg.log_interval.max(1) == 0 || step + 1 == cfg.steps {
            curve.push(point);
        }
        on_step(&point);
        if let Some((interval, hook)) = checkpoint.as_mut() {
            if (step + 1) % (*interval).max(1) == 0 && step + 1 < cfg.steps {
                hook(step + 1, &model.params)?;
            }
        }
    }
    Ok(TrainOutput {
        curve,
        final_loss: last_loss,
    })
}
