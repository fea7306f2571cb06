//! Command-line front end. Every subcommand talks to a flowfill server;
//! when none is given an ephemeral in-process server is started, so the
//! CLI works standalone while remaining an ordinary API client.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use flowfill_api as api;
use flowfill_client::Client;
use flowfill_core::duration::DurationMode;
use flowfill_core::ode::SolverConfig;
use flowfill_core::tasks::TaskKind;
use std::path::PathBuf;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "flowfill", version, about = "Text-guided sequence infilling on a synthetic speech-like process")]
struct Cli {
    /// Server base URL; started in-process when absent.
    #[arg(long, global = true, env = "FLOWFILL_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8787")]
        addr: String,
    },
    /// Generate a toy dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep ground-truth latents in the records.
        #[arg(long, default_value_t = true)]
        oracle: bool,
    },
    /// Train a model on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// audio | duration-regression | duration-flow | duration-regression-nocontext
        #[arg(long, default_value = "audio")]
        target: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Masked CFM loss (audio); pass false for the all-frame loss.
        #[arg(long)]
        masked_loss: Option<bool>,
        /// Style-family upsampling exponent.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Unconditional diverse sampling from text.
    Sample(TaskArgs),
    /// Zero-shot TTS from a reference utterance.
    Tts(TaskArgs),
    /// Alignment-preserved style transfer onto a reference's style.
    Transfer(TaskArgs),
    /// Regenerate a corrupted span.
    Denoise(TaskArgs),
    /// Replace words and regenerate them.
    Edit(TaskArgs),
    /// Keep the transcript, sample a fresh style.
    Shuffle(TaskArgs),
    /// Metric suite over a dataset and checkpoints.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        audio: Option<PathBuf>,
        #[arg(long)]
        duration: Vec<PathBuf>,
        #[arg(long, default_value_t = 32)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// NFE / guidance-strength sweep.
    Sweep {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        duration: Option<PathBuf>,
        /// Comma-separated NFE values (field evaluations per sample).
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
        nfe: Vec<usize>,
        /// Comma-separated guidance strengths.
        #[arg(long, value_delimiter = ',', default_value = "0,0.3,0.7,1.0")]
        alpha: Vec<f64>,
        /// Cell metric: sim | per.
        #[arg(long, default_value = "sim")]
        metric: String,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train masked-loss vs all-frame-loss models and compare.
    AblateMaskLoss {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        eval_dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 800)]
        steps: usize,
        #[arg(long, default_value_t = 24)]
        trials: usize,
        #[arg(long, default_value_t = 48)]
        model_dim: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 1.5e-3)]
        lr: f64,
    },
}

/// Shared flags of the six task subcommands.
#[derive(Args)]
struct TaskArgs {
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    duration: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Reference utterance index in the dataset.
    #[arg(long)]
    utt: Option<usize>,
    /// Target text: words of single-letter phones, e.g. "bad cab".
    #[arg(long)]
    text: Option<String>,
    /// Word span (edit) or frame span (denoise) as lo:hi.
    #[arg(long)]
    span: Option<String>,
    /// Guidance strength; defaults to 0.7 for context-conditioned tasks
    /// and 0 for unconditional sampling and shuffling.
    #[arg(long)]
    alpha: Option<f64>,
    /// Field evaluations for the midpoint solver (2/step).
    #[arg(long, default_value_t = 32)]
    nfe: usize,
    /// Duration model mode: regression | flow.
    #[arg(long, default_value = "regression")]
    duration_mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the generated record here (dataset format, one record).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_span(spec: &str) -> Result<(usize, usize)> {
    let (lo, hi) = spec
        .split_once(':')
        .with_context(|| format!("span {spec:?} must be lo:hi"))?;
    Ok((lo.trim().parse()?, hi.trim().parse()?))
}

/// Relative artifact paths resolve under FLOWFILL_OUT_ROOT when set.
fn resolve_out(path: PathBuf) -> PathBuf {
    if path.is_absolute() {
        return path;
    }
    match std::env::var_os("FLOWFILL_OUT_ROOT") {
        Some(root) => PathBuf::from(root).join(path),
        None => path,
    }
}

fn parse_target(target: &str) -> Result<api::TrainTarget> {
    Ok(match target {
        "audio" => api::TrainTarget::Audio,
        "duration-regression" => api::TrainTarget::DurationRegression,
        "duration-flow" => api::TrainTarget::DurationFlow,
        "duration-regression-nocontext" => api::TrainTarget::DurationRegressionNoContext,
        other => bail!("unknown train target {other:?}"),
    })
}

fn parse_duration_mode(mode: &str) -> Result<DurationMode> {
    Ok(match mode {
        "regression" => DurationMode::Regression,
        "flow" => DurationMode::Flow,
        other => bail!("unknown duration mode {other:?}"),
    })
}

fn solver_for(nfe: usize, alpha: f64) -> Result<SolverConfig> {
    let step = flowfill_core::sampling::midpoint_step_for_nfe(nfe)?;
    Ok(SolverConfig {
        step_size: step,
        cfg_alpha: alpha,
        ..SolverConfig::default()
    })
}

fn default_alpha(kind: TaskKind) -> f64 {
    match kind {
        TaskKind::Sample | TaskKind::StyleShuffle => 0.0,
        _ => 0.7,
    }
}

fn task_params(kind: TaskKind, args: &TaskArgs) -> Result<api::TaskParams> {
    let span = args.span.as_deref().map(parse_span).transpose()?;
    let alpha = args.alpha.unwrap_or_else(|| default_alpha(kind));
    Ok(api::TaskParams {
        kind,
        audio_checkpoint: args.audio.clone(),
        duration_checkpoint: args.duration.clone(),
        dataset: args.dataset.clone(),
        reference_index: args.utt,
        text: args.text.clone(),
        edit_span: if kind == TaskKind::Edit { span } else { None },
        noise_span: if kind == TaskKind::Denoise { span } else { None },
        solver: solver_for(args.nfe, alpha)?,
        duration_solver: SolverConfig::default(),
        duration_mode: parse_duration_mode(&args.duration_mode)?,
        seed: args.seed,
        out_path: args.out.clone().map(resolve_out),
    })
}

async fn connect(server: Option<String>) -> Result<Client> {
    match server {
        Some(url) => Ok(Client::new(url)),
        None => {
            let (addr, _handle) = flowfill_server::serve("127.0.0.1:0").await?;
            Ok(Client::new(format!("http://{addr}")))
        }
    }
}

async fn run_task(client: &Client, kind: TaskKind, args: &TaskArgs) -> Result<()> {
    let params = task_params(kind, args)?;
    let response = client.task(&params).await?;
    println!(
        "{:?}: generated {:?} frames with {} field evaluations in {:.1} ms",
        kind, response.frames_shape, response.report.nfe, response.report.wall_ms
    );
    if let Some(durations) = &response.report.predicted_durations {
        println!("predicted durations: {durations:?}");
    }
    if let Some(path) = &response.report.out_path {
        println!("wrote {}", path.display());
    }
    Ok(())
}

async fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve { addr } => {
            let (bound, handle) = flowfill_server::serve(&addr).await?;
            println!("flowfill server listening on http://{bound}");
            handle.await?;
            Ok(())
        }
        Command::GenData { out, n, seed, oracle } => {
            let client = connect(cli.server).await?;
            let out = resolve_out(out);
            let report = client
                .gen_data(&api::GenDataRequest {
                    out_path: out.display().to_string(),
                    n,
                    seed,
                    oracle,
                    config: None,
                })
                .await?;
            println!(
                "wrote {} ({} records, {} frames, norm mean {:.4} std {:.4})",
                report.path.display(),
                report.n_records,
                report.total_frames,
                report.norm_mean,
                report.norm_std
            );
            Ok(())
        }
        Command::Train {
            dataset,
            out_dir,
            target,
            steps,
            batch,
            lr,
            warmup,
            seed,
            masked_loss,
            beta,
        } => {
            let client = connect(cli.server).await?;
            let out_dir = resolve_out(out_dir);
            let job = client
                .train(&api::TrainRequest {
                    dataset: dataset.display().to_string(),
                    out_dir: out_dir.display().to_string(),
                    target: parse_target(&target)?,
                    seed,
                    steps,
                    batch_size: batch,
                    peak_lr: lr,
                    warmup_steps: warmup,
                    masked_loss,
                    upsample_beta: beta,
                })
                .await?;
            println!("training job {}", job.job_id);
            let mut last_step = usize::MAX;
            let result = client
                .wait_for_job(job.job_id, Duration::from_millis(500), |status| {
                    if let Some(p) = &status.progress {
                        if p.step != last_step {
                            println!("step {}/{} loss {:.5}", p.step, p.total, p.loss);
                            last_step = p.step;
                        }
                    }
                })
                .await?;
            let response: api::TrainResponse = serde_json::from_value(result)?;
            println!(
                "done: checkpoint {}, final loss {:.5}, max post-clip grad norm {:.4}",
                response.report.checkpoint.display(),
                response.report.final_loss,
                response.report.max_post_clip_grad_norm
            );
            println!(
                "loss curve: {} and {}",
                response.report.curve_csv.display(),
                response.report.curve_svg.display()
            );
            Ok(())
        }
        Command::Sample(ref args) => run_task(&connect(cli.server).await?, TaskKind::Sample, args).await,
        Command::Tts(ref args) => run_task(&connect(cli.server).await?, TaskKind::ZsTts, args).await,
        Command::Transfer(ref args) => {
            run_task(&connect(cli.server).await?, TaskKind::StyleTransfer, args).await
        }
        Command::Denoise(ref args) => {
            run_task(&connect(cli.server).await?, TaskKind::Denoise, args).await
        }
        Command::Edit(ref args) => run_task(&connect(cli.server).await?, TaskKind::Edit, args).await,
        Command::Shuffle(ref args) => {
            run_task(&connect(cli.server).await?, TaskKind::StyleShuffle, args).await
        }
        Command::Eval {
            dataset,
            audio,
            duration,
            trials,
            seed,
            out,
        } => {
            let client = connect(cli.server).await?;
            let response = client
                .eval(&api::EvalRequest {
                    params: api::EvalParams {
                        dataset,
                        audio_checkpoint: audio,
                        duration_checkpoints: duration,
                        trials,
                        seed,
                        out_csv: out.clone().map(resolve_out),
                    },
                })
                .await?;
            println!("metric,split,value,n");
            for row in &response.rows {
                println!("{},{},{:.6},{}", row.metric, row.split, row.value, row.n);
            }
            if let Some(out) = out {
                println!("wrote {}", out.display());
            }
            Ok(())
        }
        Command::Sweep {
            dataset,
            audio,
            duration,
            nfe,
            alpha,
            metric,
            samples,
            seed,
            out,
        } => {
            let client = connect(cli.server).await?;
            let job = client
                .sweep(&api::SweepRequest {
                    params: api::SweepParams {
                        dataset,
                        audio_checkpoint: audio,
                        duration_checkpoint: duration,
                        nfe_list: nfe,
                        alpha_list: alpha,
                        metric,
                        samples_per_cell: samples,
                        seed,
                        out_csv: out.clone().map(resolve_out),
                    },
                })
                .await?;
            println!("sweep job {}", job.job_id);
            let result = client
                .wait_for_job(job.job_id, Duration::from_millis(500), |_| {})
                .await?;
            let response: api::SweepResponse = serde_json::from_value(result)?;
            println!("nfe,alpha,metric,value,wall_time_ms");
            for row in &response.rows {
                println!(
                    "{},{},{},{:.6},{:.3}",
                    row.nfe, row.alpha, row.metric, row.value, row.wall_time_ms
                );
            }
            if let Some(out) = out {
                println!("wrote {}", out.display());
            }
            Ok(())
        }
        Command::AblateMaskLoss {
            dataset,
            eval_dataset,
            out_dir,
            seeds,
            steps,
            trials,
            model_dim,
            layers,
            lr,
        } => {
            let client = connect(cli.server).await?;
            let job = client
                .ablate(&api::AblateRequest {
                    params: api::AblateParams {
                        dataset,
                        eval_dataset,
                        out_dir: resolve_out(out_dir),
                        seeds,
                        trials,
                    },
                    steps: Some(steps),
                    model_dim: Some(model_dim),
                    layers: Some(layers),
                    heads: None,
                    ffn_width: Some(model_dim * 2),
                    peak_lr: Some(lr),
                })
                .await?;
            println!("ablation job {}", job.job_id);
            let result = client
                .wait_for_job(job.job_id, Duration::from_secs(2), |_| {})
                .await?;
            let report: api::AblateReport = serde_json::from_value(result)?;
            println!("seed,masked_style_sim,all_frame_style_sim,masked_wins");
            for row in &report.per_seed {
                println!(
                    "{},{:.6},{:.6},{}",
                    row.seed, row.masked_style_sim, row.all_style_sim, row.masked_wins as u8
                );
            }
            println!(
                "masked loss won {}/{} seeds; report: {}",
                report.masked_wins,
                report.per_seed.len(),
                report.report_csv.display()
            );
            Ok(())
        }
    }
}

#[tokio::main]
async fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli).await {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
