//! Artifact-producing operations shared by the service and the CLI:
//! dataset generation, model training with loss curves and checkpoints,
//! the six tasks against stored checkpoints, the evaluation suite, the
//! NFE/guidance sweep, and the masked-loss ablation.

use crate::array::Array;
use crate::audio_net::VectorFieldModel;
use crate::checkpoint::{
    audio_model_from, duration_model_from, load_checkpoint, save_checkpoint, CheckpointHeader,
    ModelKind,
};
use crate::config::RunConfig;
use crate::dataset::{generate_from_config, load_dataset, save_dataset, Dataset, DatasetRecord};
use crate::duration::{
    predict_durations, predict_durations_mean, DurationMode, DurationModel, DurationNetConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{
    fdd, fsd_analog, ms_corr, ms_mae, phone_error_rate, style_similarity, FSD_MIN_SET,
};
use crate::ode::SolverConfig;
use crate::rng::Rng;
use crate::sampling::{midpoint_step_for_nfe, nfe_sweep, SweepRow};
use crate::seq::{Phone, PhoneTable};
use crate::synth::ToyProcessSpec;
use crate::tasks::{
    content_edit, denoise, diverse_sample, style_shuffle, style_transfer, zero_shot_tts, EditSpec,
    TaskKind, TaskModels, TaskOutput,
};
use crate::train::{train_audio, LossPoint};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenDataReport {
    pub path: PathBuf,
    pub n_records: usize,
    pub total_frames: usize,
    pub norm_mean: f64,
    pub norm_std: f64,
}

pub fn op_gen_data(
    config: &RunConfig,
    n: usize,
    oracle: bool,
    out_path: &Path,
) -> Result<GenDataReport> {
    let dataset = generate_from_config(config, n, oracle)?;
    save_dataset(&dataset, out_path)?;
    Ok(GenDataReport {
        path: out_path.to_path_buf(),
        n_records: dataset.records.len(),
        total_frames: dataset.records.iter().map(|r| r.frames.rows()).sum(),
        norm_mean: dataset.header.norm_mean,
        norm_std: dataset.header.norm_std,
    })
}

// ------------------------------------------------------------------- train

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainTarget {
    Audio,
    DurationRegression,
    DurationFlow,
    /// Regression that ignores the duration context (the unconditional
    /// baseline).
    DurationRegressionNoContext,
}

impl TrainTarget {
    pub fn stem(self) -> &'static str {
        match self {
            TrainTarget::Audio => "audio",
            TrainTarget::DurationRegression => "duration_regression",
            TrainTarget::DurationFlow => "duration_flow",
            TrainTarget::DurationRegressionNoContext => "duration_regression_nocontext",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub target: TrainTarget,
    pub checkpoint: PathBuf,
    pub curve_csv: PathBuf,
    pub curve_svg: PathBuf,
    pub steps: usize,
    pub final_loss: f64,
    pub max_post_clip_grad_norm: f64,
}

fn checkpoint_header(
    config: &RunConfig,
    dataset: &Dataset,
    model: ModelKind,
    trained_steps: usize,
) -> CheckpointHeader {
    CheckpointHeader {
        model,
        phone_table: dataset.header.phone_table.clone(),
        norm_mean: dataset.header.norm_mean,
        norm_std: dataset.header.norm_std,
        sigma_min: config.path.sigma_min,
        frame_rate_hz: dataset.header.frame_rate_hz,
        trained_steps,
        config: config.echo_json(),
    }
}

pub fn op_train(
    config: &RunConfig,
    dataset_path: &Path,
    target: TrainTarget,
    out_dir: &Path,
    mut on_step: impl FnMut(&LossPoint),
) -> Result<TrainReport> {
    let dataset = load_dataset(dataset_path)?;
    std::fs::create_dir_all(out_dir)?;
    let stem = target.stem();
    let ckpt_path = out_dir.join(format!("{stem}.ffck"));
    let mut max_norm: f64 = 0.0;

    let interval = config.train.checkpoint_interval.max(1);
    let (curve, final_loss) = match target {
        TrainTarget::Audio => {
            let mut model = new_audio_model(config)?;
            let header = checkpoint_header(
                config,
                &dataset,
                ModelKind::Audio {
                    config: model.config,
                },
                0,
            );
            let mut save_mid = |step: usize, params: &crate::nn::ParamSet| -> Result<()> {
                let mut h = header.clone();
                h.trained_steps = step;
                save_checkpoint(
                    &out_dir.join(format!("{stem}_step{step:06}.ffck")),
                    &h,
                    params,
                )
            };
            let out = crate::train::train_audio_with_hooks(
                &mut model,
                &dataset,
                &config.path,
                &config.train,
                config.seed,
                &mut |p| {
                    max_norm = max_norm.max(p.grad_norm);
                    on_step(p);
                },
                Some((interval, &mut save_mid)),
            )?;
            let mut header = header;
            header.trained_steps = config.train.steps;
            save_checkpoint(&ckpt_path, &header, &model.params)?;
            (out.curve, out.final_loss)
        }
        _ => {
            let mode = match target {
                TrainTarget::DurationFlow => DurationMode::Flow,
                _ => DurationMode::Regression,
            };
            let use_context = target != TrainTarget::DurationRegressionNoContext;
            let mut dcfg: DurationNetConfig = config.duration;
            dcfg.mode = mode;
            dcfg.use_context = use_context;
            let mut model = DurationModel::new(dcfg, &mut Rng::stream(config.seed, 0x0D))?;
            let mid_header = checkpoint_header(
                config,
                &dataset,
                ModelKind::Duration { config: dcfg },
                0,
            );
            let mut save_mid = |step: usize, params: &crate::nn::ParamSet| -> Result<()> {
                let mut h = mid_header.clone();
                h.trained_steps = step;
                save_checkpoint(
                    &out_dir.join(format!("{stem}_step{step:06}.ffck")),
                    &h,
                    params,
                )
            };
            let out = crate::train::train_duration_with_hooks(
                &mut model,
                &dataset,
                &config.path,
                &config.train,
                config.seed,
                &mut |p| {
                    max_norm = max_norm.max(p.grad_norm);
                    on_step(p);
                },
                Some((interval, &mut save_mid)),
            )?;
            let mut header = checkpoint_header(
                config,
                &dataset,
                ModelKind::Duration { config: dcfg },
                config.train.steps,
            );
            header.trained_steps = config.train.steps;
            save_checkpoint(&ckpt_path, &header, &model.params)?;
            (out.curve, out.final_loss)
        }
    };

    let curve_csv = out_dir.join(format!("loss_{stem}.csv"));
    let rows: Vec<Vec<String>> = curve
        .iter()
        .map(|p| {
            vec![
                p.step.to_string(),
                format!("{:.8}", p.loss),
                format!("{:.8}", p.grad_norm),
                format!("{:.8e}", p.lr),
            ]
        })
        .collect();
    crate::report::write_csv(
        &curve_csv,
        &config.echo_json(),
        "step,loss,grad_norm,lr",
        &rows,
    )?;
    let curve_svg = out_dir.join(format!("loss_{stem}.svg"));
    let points: Vec<(f64, f64)> = curve.iter().map(|p| (p.step as f64, p.loss)).collect();
    crate::report::write_line_chart_svg(
        &curve_svg,
        &config.echo_json(),
        &format!("{stem} training loss"),
        &[("loss".to_string(), points)],
    )?;

    Ok(TrainReport {
        target,
        checkpoint: ckpt_path,
        curve_csv,
        curve_svg,
        steps: config.train.steps,
        final_loss,
        max_post_clip_grad_norm: max_norm,
    })
}

pub fn new_audio_model(config: &RunConfig) -> Result<VectorFieldModel> {
    VectorFieldModel::new(config.audio, &mut Rng::stream(config.seed, 0x0A))
}

// ----------------------------------------------------------- model loading

/// Checkpointed models plus the shared context tasks need.
pub struct LoadedModels {
    pub audio: VectorFieldModel,
    pub duration: Option<DurationModel>,
    pub table: PhoneTable,
    pub norm: (f64, f64),
    pub trim_frames: u32,
    pub sigma_min: f64,
    pub frame_rate_hz: f64,
}

pub fn load_models(
    audio_checkpoint: &Path,
    duration_checkpoint: Option<&Path>,
) -> Result<LoadedModels> {
    let audio_ck = load_checkpoint(audio_checkpoint)?;
    let audio = audio_model_from(&audio_ck, audio_checkpoint)?;
    let duration = duration_checkpoint
        .map(|p| {
            let ck = load_checkpoint(p)?;
            duration_model_from(&ck, p)
        })
        .transpose()?;
    let trim = (0.1 * audio_ck.header.frame_rate_hz).round() as u32;
    Ok(LoadedModels {
        audio,
        duration,
        table: audio_ck.header.phone_table.clone(),
        norm: (audio_ck.header.norm_mean, audio_ck.header.norm_std),
        trim_frames: trim,
        sigma_min: audio_ck.header.sigma_min,
        frame_rate_hz: audio_ck.header.frame_rate_hz,
    })
}

impl LoadedModels {
    pub fn task_models(&self) -> TaskModels<'_> {
        TaskModels {
            audio: &self.audio,
            duration: self.duration.as_ref(),
            table: &self.table,
            trim_frames: self.trim_frames,
        }
    }
}

// -------------------------------------------------------------------- task

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskParams {
    pub kind: TaskKind,
    pub audio_checkpoint: PathBuf,
    pub duration_checkpoint: Option<PathBuf>,
    /// Dataset supplying reference/input records.
    pub dataset: Option<PathBuf>,
    pub reference_index: Option<usize>,
    /// Target text: whitespace-separated words of single-letter phones.
    pub text: Option<String>,
    /// Word index range to replace (edit).
    pub edit_span: Option<(usize, usize)>,
    /// Frame range to regenerate (denoise).
    pub noise_span: Option<(usize, usize)>,
    pub solver: SolverConfig,
    pub duration_solver: SolverConfig,
    pub duration_mode: DurationMode,
    pub seed: u64,
    pub out_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskReport {
    pub kind: TaskKind,
    pub frames_shape: Vec<usize>,
    pub nfe: usize,
    pub wall_ms: f64,
    pub out_path: Option<PathBuf>,
    /// Predicted durations of the generated portion, when a duration
    /// model ran.
    pub predicted_durations: Option<Vec<u32>>,
}

pub fn parse_text(table: &PhoneTable, text: &str) -> Result<Vec<Vec<u8>>> {
    let mut words = Vec::new();
    for word in text.split_whitespace() {
        let mut phones = Vec::new();
        for ch in word.chars() {
            let name = ch.to_string();
            let base = table.base_by_name(&name).ok_or_else(|| {
                Error::invalid(format!(
                    "unknown phone {name:?}; base phones are {:?}",
                    table.base_names()
                ))
            })?;
            phones.push(base);
        }
        if phones.is_empty() {
            return Err(Error::invalid("empty word in target text"));
        }
        words.push(phones);
    }
    if words.is_empty() {
        return Err(Error::invalid("target text is empty"));
    }
    Ok(words)
}

fn need_record<'d>(
    dataset: &'d Option<Dataset>,
    index: Option<usize>,
) -> Result<&'d DatasetRecord> {
    let ds = dataset
        .as_ref()
        .ok_or_else(|| Error::invalid("this task needs --dataset"))?;
    let idx = index.ok_or_else(|| Error::invalid("this task needs --utt <index>"))?;
    ds.records
        .get(idx)
        .ok_or_else(|| Error::invalid(format!("utterance {idx} out of range ({} records)", ds.records.len())))
}

pub fn op_task(params: &TaskParams) -> Result<(TaskReport, TaskOutput)> {
    let models = load_models(
        &params.audio_checkpoint,
        params.duration_checkpoint.as_deref(),
    )?;
    let task_models = models.task_models();
    let dataset = params.dataset.as_deref().map(load_dataset).transpose()?;

    let output = match params.kind {
        TaskKind::ZsTts => {
            let record = need_record(&dataset, params.reference_index)?;
            let text = params
                .text
                .as_deref()
                .ok_or_else(|| Error::invalid("zero-shot TTS needs --text"))?;
            let words = parse_text(&models.table, text)?;
            zero_shot_tts(
                &task_models,
                &record.frames,
                &record.alignment,
                &words,
                params.duration_mode,
                &params.solver,
                &params.duration_solver,
                true,
                params.seed,
            )?
        }
        TaskKind::StyleTransfer => {
            let record = need_record(&dataset, params.reference_index)?;
            // Target transcript comes from another record: the one after
            // the reference by convention, unless text is provided.
            let ds = dataset.as_ref().expect("checked");
            let target_idx = (params.reference_index.unwrap() + 1) % ds.records.len();
            let target_z = ds.records[target_idx].alignment.frame_transcript()?;
            style_transfer(
                &task_models,
                &record.frames,
                &record.alignment,
                &target_z,
                &params.solver,
                params.seed,
            )?
        }
        TaskKind::Denoise => {
            let record = need_record(&dataset, params.reference_index)?;
            let (lo, hi) = params
                .noise_span
                .ok_or_else(|| Error::invalid("denoise needs --span lo:hi"))?;
            let z = record.alignment.frame_transcript()?;
            denoise(
                &task_models,
                &record.frames,
                &z,
                lo..hi,
                &params.solver,
                params.seed,
            )?
        }
        TaskKind::Edit => {
            let record = need_record(&dataset, params.reference_index)?;
            let (lo, hi) = params
                .edit_span
                .ok_or_else(|| Error::invalid("edit needs --span lo:hi (word indices)"))?;
            let text = params
                .text
                .as_deref()
                .ok_or_else(|| Error::invalid("edit needs --text for the replacement"))?;
            let new_words = parse_text(&models.table, text)?;
            content_edit(
                &task_models,
                &record.frames,
                &record.alignment,
                &EditSpec {
                    word_span: lo..hi,
                    new_words,
                },
                params.duration_mode,
                &params.solver,
                &params.duration_solver,
                params.seed,
            )?
        }
        TaskKind::Sample => {
            let text = params
                .text
                .as_deref()
                .ok_or_else(|| Error::invalid("sample needs --text"))?;
            let words = parse_text(&models.table, text)?;
            diverse_sample(
                &task_models,
                &words,
                params.duration_mode,
                &params.solver,
                &params.duration_solver,
                params.seed,
            )?
        }
        TaskKind::StyleShuffle => {
            let record = need_record(&dataset, params.reference_index)?;
            let z = record.alignment.frame_transcript()?;
            style_shuffle(&task_models, &z, &params.solver, params.seed)?
        }
    };

    let out_path = match &params.out_path {
        Some(path) => {
            save_task_output(&output, &models, params, path)?;
            Some(path.clone())
        }
        None => None,
    };
    let report = TaskReport {
        kind: params.kind,
        frames_shape: output.frames.shape().to_vec(),
        nfe: output.nfe,
        wall_ms: output.wall.as_secs_f64() * 1000.0,
        out_path,
        predicted_durations: output.alignment.as_ref().map(|a| a.l.clone()),
    };
    Ok((report, output))
}

/// Task outputs are stored in the dataset format: one record, no oracle.
fn save_task_output(
    output: &TaskOutput,
    models: &LoadedModels,
    params: &TaskParams,
    path: &Path,
) -> Result<()> {
    let alignment = match &output.alignment {
        Some(a) => crate::tasks::sanitize_predicted_alignment(a),
        None => {
            // Tasks that keep an existing transcript have no predicted
            // alignment; store a single full-length silence covering the
            // frames so the file stays self-validating.
            crate::seq::PhoneAlignment {
                y: vec![Phone::Sil],
                l: vec![output.frames.rows() as u32],
                words: vec![],
            }
        }
    };
    let dataset = Dataset {
        header: crate::dataset::DatasetHeader {
            config: serde_json::json!({
                "task": params.kind,
                "seed": params.seed,
                "solver": params.solver,
                "nfe": output.nfe,
            }),
            phone_table: models.table.clone(),
            norm_mean: models.norm.0,
            norm_std: models.norm.1,
            frame_rate_hz: models.frame_rate_hz,
            n_records: 1,
            oracle: false,
        },
        records: vec![DatasetRecord {
            id: "generated-000000".into(),
            frames: output.frames.clone(),
            alignment,
            family: 0,
            oracle: None,
        }],
    };
    save_dataset(&dataset, path)
}

// -------------------------------------------------------------------- eval

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub split: String,
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalParams {
    pub dataset: PathBuf,
    pub audio_checkpoint: Option<PathBuf>,
    pub duration_checkpoints: Vec<PathBuf>,
    pub trials: usize,
    pub seed: u64,
    pub out_csv: Option<PathBuf>,
}

pub fn op_eval(params: &EvalParams, process: &ToyProcessSpec) -> Result<Vec<MetricRow>> {
    let dataset = load_dataset(&params.dataset)?;
    let mut rows = Vec::new();

    for ckpt_path in &params.duration_checkpoints {
        let ck = load_checkpoint(ckpt_path)?;
        let model = duration_model_from(&ck, ckpt_path)?;
        let label = ckpt_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "duration".into());
        rows.extend(eval_duration_model(
            &model,
            &dataset,
            &label,
            params.trials,
            params.seed,
        )?);
    }

    if let Some(audio_path) = &params.audio_checkpoint {
        let duration_ckpt = params.duration_checkpoints.first().map(|p| p.as_path());
        let models = load_models(audio_path, duration_ckpt)?;
        rows.extend(eval_audio_model(
            &models,
            &dataset,
            process,
            params.trials,
            params.seed,
        )?);
    }

    if let Some(csv) = &params.out_csv {
        let table_rows: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.metric.clone(),
                    r.split.clone(),
                    format!("{:.6}", r.value),
                    r.n.to_string(),
                ]
            })
            .collect();
        crate::report::write_csv(
            csv,
            &dataset.header.config,
            "metric,split,value,n",
            &table_rows,
        )?;
    }
    Ok(rows)
}

/// Second-half infilling plus full-mask sampling metrics for one
/// duration model.
pub fn eval_duration_model(
    model: &DurationModel,
    dataset: &Dataset,
    label: &str,
    trials: usize,
    seed: u64,
) -> Result<Vec<MetricRow>> {
    let table = &dataset.header.phone_table;
    let solver = SolverConfig::default();
    let mode = model.config.mode;
    let mut rng = Rng::stream(seed, 0xE7A1);
    let n_utts = dataset.records.len().min(trials.max(8));

    let mut preds = Vec::new();
    let mut targets = Vec::new();
    let mut masks = Vec::new();
    let mut sil_preds = Vec::new();
    let mut sil_targets = Vec::new();
    let mut sil_masks = Vec::new();
    let mut sampled_phn = Vec::new();
    let mut true_phn = Vec::new();
    let mut sampled_sil = Vec::new();
    let mut true_sil = Vec::new();

    for record in dataset.records.iter().take(n_utts) {
        let alignment = &record.alignment;
        let y = table.encode_seq(&alignment.y)?;
        let m = alignment.len();
        // Second-half infilling mask at phone granularity.
        let half = m / 2;
        let mut mask = vec![0u8; m];
        mask[half..].iter_mut().for_each(|v| *v = 1);
        let l_ctx: Vec<u32> = alignment
            .l
            .iter()
            .zip(&mask)
            .map(|(&d, &mk)| if mk == 1 { 0 } else { d })
            .collect();
        let estimate = predict_durations_mean(model, &y, &l_ctx, &mask, mode, &solver, 20, &mut rng)?;

        // Split phone/silence views.
        let is_sil: Vec<bool> = alignment.y.iter().map(|p| p.is_sil()).collect();
        let phn_mask: Vec<u8> = mask
            .iter()
            .zip(&is_sil)
            .map(|(&mk, &s)| if s { 0 } else { mk })
            .collect();
        let sil_mask: Vec<u8> = mask
            .iter()
            .zip(&is_sil)
            .map(|(&mk, &s)| if s { mk } else { 0 })
            .collect();
        preds.push(estimate.clone());
        targets.push(alignment.l.clone());
        masks.push(phn_mask);
        sil_preds.push(estimate);
        sil_targets.push(alignment.l.clone());
        sil_masks.push(sil_mask);

        // Full-mask sampling for the distribution metrics.
        let full_mask = vec![1u8; m];
        let zero_ctx = vec![0u32; m];
        let draw = predict_durations(model, &y, &zero_ctx, &full_mask, mode, &solver, &mut rng)?;
        for i in 0..m {
            if is_sil[i] {
                sampled_sil.push(draw[i] as f64);
                true_sil.push(alignment.l[i] as f64);
            } else {
                sampled_phn.push(draw[i] as f64);
                true_phn.push(alignment.l[i] as f64);
            }
        }
    }

    let mut rows = vec![
        MetricRow {
            metric: "phn_ms_mae".into(),
            split: label.into(),
            value: ms_mae(&preds, &targets, &masks)?,
            n: n_utts,
        },
        MetricRow {
            metric: "sil_ms_mae".into(),
            split: label.into(),
            value: ms_mae(&sil_preds, &sil_targets, &sil_masks)?,
            n: n_utts,
        },
        MetricRow {
            metric: "phn_fdd".into(),
            split: label.into(),
            value: fdd(&sampled_phn, &true_phn)?,
            n: sampled_phn.len(),
        },
        MetricRow {
            metric: "sil_fdd".into(),
            split: label.into(),
            value: fdd(&sampled_sil, &true_sil)?,
            n: sampled_sil.len(),
        },
    ];
    if let Some(corr) = ms_corr(&preds, &targets, &masks)? {
        rows.push(MetricRow {
            metric: "phn_ms_corr".into(),
            split: label.into(),
            value: corr,
            n: n_utts,
        });
    }
    Ok(rows)
}

/// Zero-shot TTS style trials, oracle phone error, and the diverse-sample
/// distribution distance.
pub fn eval_audio_model(
    models: &LoadedModels,
    dataset: &Dataset,
    process: &ToyProcessSpec,
    trials: usize,
    seed: u64,
) -> Result<Vec<MetricRow>> {
    let task_models = models.task_models();
    let solver = SolverConfig {
        cfg_alpha: 0.7,
        ..SolverConfig::default()
    };
    let dur_solver = SolverConfig::default();
    let trials = trials.max(4).min(dataset.records.len());
    let mut sims = Vec::new();
    let mut wins = 0usize;
    let mut pers = Vec::new();
    let texts = ["bad cab", "dig a fig", "ace bed", "face cage"];

    for i in 0..trials {
        let record = &dataset.records[i];
        let text = texts[i % texts.len()];
        let words = parse_text(&models.table, text)?;
        let out = zero_shot_tts(
            &task_models,
            &record.frames,
            &record.alignment,
            &words,
            models
                .duration
                .as_ref()
                .map(|d| d.config.mode)
                .unwrap_or(DurationMode::Regression),
            &solver,
            &dur_solver,
            true,
            seed.wrapping_add(i as u64),
        )?;
        let sim_ref = style_similarity(&out.frames, &record.frames)?;
        sims.push(sim_ref);
        // Competing reference from a different style cluster when oracle
        // info exists, else just a different record.
        let other = pick_other_reference(dataset, i);
        if let Some(other) = other {
            let sim_other = style_similarity(&out.frames, &other.frames)?;
            if sim_ref > sim_other {
                wins += 1;
            }
        }
        let z = out
            .alignment
            .as_ref()
            .expect("tts predicts durations")
            .frame_transcript()?;
        pers.push(phone_error_rate(&out.frames, &z, process, models.norm)?);
    }

    let mut rows = vec![
        MetricRow {
            metric: "tts_style_sim".into(),
            split: "eval".into(),
            value: sims.iter().sum::<f64>() / sims.len() as f64,
            n: trials,
        },
        MetricRow {
            metric: "tts_style_win_rate".into(),
            split: "eval".into(),
            value: wins as f64 / trials as f64,
            n: trials,
        },
        MetricRow {
            metric: "tts_phone_error".into(),
            split: "eval".into(),
            value: pers.iter().sum::<f64>() / pers.len() as f64,
            n: trials,
        },
    ];

    // Distribution distance of unconditional samples against the dataset.
    if models.duration.is_some() && dataset.records.len() >= FSD_MIN_SET {
        let n_samples = FSD_MIN_SET.max(trials);
        let mut generated = Vec::with_capacity(n_samples);
        let sample_solver = SolverConfig::default();
        for k in 0..n_samples {
            let text = texts[k % texts.len()];
            let words = parse_text(&models.table, text)?;
            let out = diverse_sample(
                &task_models,
                &words,
                models.duration.as_ref().unwrap().config.mode,
                &sample_solver,
                &dur_solver,
                seed.wrapping_add(0x5A00 + k as u64),
            )?;
            generated.push(out.frames);
        }
        let gen_refs: Vec<&Array> = generated.iter().collect();
        let data_refs: Vec<&Array> = dataset.records.iter().map(|r| &r.frames).collect();
        rows.push(MetricRow {
            metric: "sample_fsd".into(),
            split: "eval".into(),
            value: fsd_analog(&gen_refs, &data_refs)?,
            n: n_samples,
        });
    }
    Ok(rows)
}

fn pick_other_reference<'d>(dataset: &'d Dataset, i: usize) -> Option<&'d DatasetRecord> {
    let record = &dataset.records[i];
    match record.oracle.as_ref() {
        Some(oracle) => dataset
            .records
            .iter()
            .cycle()
            .skip(i + 1)
            .take(dataset.records.len())
            .find(|r| {
                r.oracle
                    .as_ref()
                    .map(|o| o.cluster != oracle.cluster)
                    .unwrap_or(false)
            }),
        None => dataset.records.iter().cycle().skip(i + 1).take(1).next(),
    }
}

// ------------------------------------------------------------------- sweep

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepParams {
    pub dataset: PathBuf,
    pub audio_checkpoint: PathBuf,
    pub duration_checkpoint: Option<PathBuf>,
    pub nfe_list: Vec<usize>,
    pub alpha_list: Vec<f64>,
    /// Which metric each cell reports: sim | per.
    pub metric: String,
    pub samples_per_cell: usize,
    pub seed: u64,
    pub out_csv: Option<PathBuf>,
}

pub fn op_sweep(params: &SweepParams, process: &ToyProcessSpec) -> Result<Vec<SweepRow>> {
    let models = load_models(
        &params.audio_checkpoint,
        params.duration_checkpoint.as_deref(),
    )?;
    let dataset = load_dataset(&params.dataset)?;
    if dataset.records.is_empty() {
        return Err(Error::invalid("sweep needs a non-empty dataset"));
    }
    let task_models = models.task_models();
    let metric = params.metric.clone();
    let samples = params.samples_per_cell.max(1);

    let rows = nfe_sweep(&params.nfe_list, &params.alpha_list, |nfe, alpha| {
        let step = midpoint_step_for_nfe(nfe)?;
        let solver = SolverConfig {
            step_size: step,
            cfg_alpha: alpha,
            ..SolverConfig::default()
        };
        let mut values = Vec::with_capacity(samples);
        for k in 0..samples {
            let record = &dataset.records[k % dataset.records.len()];
            let target = &dataset.records[(k + 1) % dataset.records.len()];
            let take = target.frames.rows().min(60);
            let z_target = target.alignment.frame_transcript()?[..take].to_vec();
            let out = style_transfer(
                &task_models,
                &record.frames,
                &record.alignment,
                &z_target,
                &solver,
                params.seed.wrapping_add((nfe * 1000) as u64).wrapping_add(k as u64),
            )?;
            let value = match metric.as_str() {
                "sim" => style_similarity(&out.frames, &record.frames)?,
                "per" => phone_error_rate(&out.frames, &z_target, process, models.norm)?,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown sweep metric {other:?}; use sim or per"
                    )))
                }
            };
            values.push(value);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Ok((vec![(metric.clone(), mean)], samples))
    })?;

    if let Some(csv) = &params.out_csv {
        let table_rows: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.nfe.to_string(),
                    format!("{}", r.alpha),
                    r.metric.clone(),
                    format!("{:.6}", r.value),
                    format!("{:.3}", r.wall_time_ms),
                ]
            })
            .collect();
        crate::report::write_csv(
            csv,
            &dataset.header.config,
            "nfe,alpha,metric,value,wall_time_ms",
            &table_rows,
        )?;
    }
    Ok(rows)
}

// ------------------------------------------------------------------ ablate

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateParams {
    pub dataset: PathBuf,
    pub eval_dataset: PathBuf,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub trials: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateSeedResult {
    pub seed: u64,
    pub masked_style_sim: f64,
    pub all_style_sim: f64,
    pub masked_wins: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateReport {
    pub per_seed: Vec<AblateSeedResult>,
    pub masked_wins: usize,
    pub report_csv: PathBuf,
}

/// Train masked-loss and all-frame-loss audio models with matched seeds
/// and budgets, then compare zero-shot TTS style similarity.
pub fn op_ablate(config: &RunConfig, params: &AblateParams) -> Result<AblateReport> {
    std::fs::create_dir_all(&params.out_dir)?;
    let eval_ds = load_dataset(&params.eval_dataset)?;
    let train_ds = load_dataset(&params.dataset)?;
    let mut per_seed = Vec::new();

    for &seed in &params.seeds {
        let mut sims = [0.0f64; 2];
        for (slot, masked) in [(0usize, true), (1usize, false)] {
            let mut cfg = config.clone();
            cfg.seed = seed;
            cfg.train.masked_loss = masked;
            let mut model = new_audio_model(&cfg)?;
            train_audio(
                &mut model,
                &train_ds,
                &cfg.path,
                &cfg.train,
                seed,
                |_| {},
            )?;
            let stem = if masked { "masked" } else { "all" };
            let header = checkpoint_header(
                &cfg,
                &train_ds,
                ModelKind::Audio {
                    config: model.config,
                },
                cfg.train.steps,
            );
            save_checkpoint(
                &params.out_dir.join(format!("{stem}_seed{seed}.ffck")),
                &header,
                &model.params,
            )?;
            sims[slot] = mean_transfer_similarity(&model, &eval_ds, params.trials, seed)?;
        }
        per_seed.push(AblateSeedResult {
            seed,
            masked_style_sim: sims[0],
            all_style_sim: sims[1],
            masked_wins: sims[0] >= sims[1],
        });
    }

    let masked_wins = per_seed.iter().filter(|r| r.masked_wins).count();
    let report_csv = params.out_dir.join("ablate_mask_loss.csv");
    let rows: Vec<Vec<String>> = per_seed
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                format!("{:.6}", r.masked_style_sim),
                format!("{:.6}", r.all_style_sim),
                (r.masked_wins as u8).to_string(),
            ]
        })
        .collect();
    crate::report::write_csv(
        &report_csv,
        &config.echo_json(),
        "seed,masked_style_sim,all_frame_style_sim,masked_wins",
        &rows,
    )?;
    Ok(AblateReport {
        per_seed,
        masked_wins,
        report_csv,
    })
}

/// Mean style similarity of style-transfer outputs to their prompts.
pub fn mean_transfer_similarity(
    model: &VectorFieldModel,
    eval_ds: &Dataset,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let table = eval_ds.header.phone_table.clone();
    let task_models = TaskModels {
        audio: model,
        duration: None,
        table: &table,
        trim_frames: 10,
    };
    let solver = SolverConfig {
        cfg_alpha: 0.7,
        ..SolverConfig::default()
    };
    let trials = trials.max(4).min(eval_ds.records.len().saturating_sub(1));
    let mut total = 0.0;
    for i in 0..trials {
        let prompt = &eval_ds.records[i];
        let target = &eval_ds.records[i + 1];
        let take = target.frames.rows().min(60);
        let z_target = target.alignment.frame_transcript()?[..take].to_vec();
        let out = style_transfer(
            &task_models,
            &prompt.frames,
            &prompt.alignment,
            &z_target,
            &solver,
            seed.wrapping_add(i as u64),
        )?;
        total += style_similarity(&out.frames, &prompt.frames)?;
    }
    Ok(total / trials as f64)
}
