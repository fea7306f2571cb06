//! Run configuration: every knob a run depends on, echoed verbatim into
//! each artifact it produces so the artifact is reproducible from its own
//! header.

use crate::audio_net::AudioNetConfig;
use crate::duration::DurationNetConfig;
use crate::flow::OtPathConfig;
use crate::ode::SolverConfig;
use crate::seq::MaskPolicy;
use crate::synth::ToyProcessSpec;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: &str = "flowfill-config-v1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Peak learning rate of the linear warmup/decay schedule.
    pub peak_lr: f64,
    pub warmup_steps: usize,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Conditioning dropout probability.
    pub p_uncond: f64,
    /// Masked CFM loss (audio) on or off.
    pub masked_loss: bool,
    pub audio_mask: MaskPolicy,
    pub duration_mask: MaskPolicy,
    pub log_interval: usize,
    pub checkpoint_interval: usize,
    /// Style-family upsampling exponent; unset means plain uniform.
    pub upsample_beta: Option<f64>,
    /// Frame cap before a random contiguous chunk is taken.
    pub chunk_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 8,
            peak_lr: 1e-4,
            warmup_steps: 100,
            grad_clip: 0.2,
            p_uncond: 0.2,
            masked_loss: true,
            audio_mask: MaskPolicy::audio_default(),
            duration_mask: MaskPolicy::duration_default(),
            log_interval: 50,
            checkpoint_interval: 500,
            upsample_beta: None,
            chunk_cap: 1600,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub version: String,
    pub seed: u64,
    pub process: ToyProcessSpec,
    pub audio: AudioNetConfig,
    pub duration: DurationNetConfig,
    pub path: OtPathConfig,
    pub solver: SolverConfig,
    pub train: TrainConfig,
    /// Global feature normalization (mean, std), known after data
    /// generation and echoed through all downstream artifacts.
    pub normalization: Option<(f64, f64)>,
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        let process = ToyProcessSpec::generate(seed);
        let table_size = 2 + 4 * process.n_base_phones;
        let mut audio = AudioNetConfig::default();
        audio.feature_dim = process.feature_dim;
        audio.vocab = table_size;
        let mut duration = DurationNetConfig::default();
        duration.vocab = table_size;
        RunConfig {
            version: CONFIG_VERSION.to_string(),
            seed,
            process,
            audio,
            duration,
            path: OtPathConfig::default(),
            solver: SolverConfig::default(),
            train: TrainConfig::default(),
            normalization: None,
        }
    }

    pub fn echo_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = RunConfig::with_seed(11);
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn defaults_follow_the_training_recipe() {
        let cfg = RunConfig::with_seed(1);
        assert_eq!(cfg.train.peak_lr, 1e-4);
        assert_eq!(cfg.train.grad_clip, 0.2);
        assert_eq!(cfg.train.p_uncond, 0.2);
        assert_eq!(cfg.train.audio_mask.p_drop, 0.3);
        assert_eq!(cfg.train.duration_mask.p_drop, 0.2);
        assert_eq!(cfg.solver.step_size, 0.0625);
        assert_eq!(cfg.path.sigma_min, 1e-5);
        assert_eq!(cfg.train.chunk_cap, 1600);
        assert!(cfg.audio.vocab >= cfg.process.n_base_phones * 4 + 2);
    }
}
