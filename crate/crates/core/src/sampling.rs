//! Guided integration of the learned audio vector field and the
//! NFE/guidance sweep runner.

use crate::array::Array;
use crate::audio_net::VectorFieldModel;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::flow::cfg_combine;
use crate::ode::{solve, SolveTrace, SolverConfig};
use crate::seq::PhoneTable;

/// Integrate the model field from the prior draw `x0` under conditioning
/// (x_ctx, z). With `cfg_alpha` nonzero every point is evaluated twice
/// (conditional and null-conditioned) and combined; the reported NFE
/// counts model evaluations. Alpha zero takes the conditional field
/// directly and is bitwise identical to an unguided solve.
pub fn solve_guided(
    model: &VectorFieldModel,
    x0: &Array,
    x_ctx: &Array,
    z: &[usize],
    config: &SolverConfig,
) -> Result<SolveTrace> {
    let alpha = config.cfg_alpha;
    let null_z = vec![PhoneTable::NULL_ID; z.len()];
    let zero_ctx = Array::zeros(x_ctx.shape());
    let mut trace = solve(
        |t, w| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let cond = model.forward(&mut tape, &bound, w, x_ctx, z, t)?;
            let v_cond = tape.value(cond).clone();
            if alpha == 0.0 {
                return Ok(v_cond);
            }
            let uncond = model.forward(&mut tape, &bound, w, &zero_ctx, &null_z, t)?;
            cfg_combine(&v_cond, tape.value(uncond), alpha)
        },
        x0,
        config,
    )?;
    if alpha != 0.0 {
        trace.nfe *= 2;
    }
    Ok(trace)
}

/// One row of a sweep report.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Requested solver field evaluations (2/h for midpoint).
    pub nfe: usize,
    pub alpha: f64,
    pub metric: String,
    pub value: f64,
    /// Mean wall time per generated sample, milliseconds.
    pub wall_time_ms: f64,
}

/// Run `cell` for every (nfe, alpha) pair. The closure returns the metric
/// values plus the number of samples it generated; the runner measures
/// wall time around the cell and reports per-sample milliseconds.
pub fn nfe_sweep(
    nfe_list: &[usize],
    alpha_list: &[f64],
    mut cell: impl FnMut(usize, f64) -> Result<(Vec<(String, f64)>, usize)>,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &nfe in nfe_list {
        for &alpha in alpha_list {
            let start = std::time::Instant::now();
            let (metrics, samples) = cell(nfe, alpha)?;
            let elapsed_ms = start.elapsed().as_secs_f64() * 1000.0;
            let per_sample = elapsed_ms / samples.max(1) as f64;
            for (metric, value) in metrics {
                rows.push(SweepRow {
                    nfe,
                    alpha,
                    metric,
                    value,
                    wall_time_ms: per_sample,
                });
            }
        }
    }
    Ok(rows)
}

/// Midpoint step size that spends `nfe` field evaluations.
pub fn midpoint_step_for_nfe(nfe: usize) -> Result<f64> {
    if nfe == 0 || nfe % 2 != 0 {
        return Err(Error::invalid(format!(
            "midpoint needs an even positive NFE, got {nfe}"
        )));
    }
    Ok(2.0 / nfe as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_net::AudioNetConfig;
    use crate::ode::SolveMethod;
    use crate::rng::Rng;

    fn model() -> VectorFieldModel {
        let mut rng = Rng::new(21);
        VectorFieldModel::new(
            AudioNetConfig {
                feature_dim: 2,
                vocab: 8,
                phone_embed_dim: 4,
                model_dim: 8,
                layers: 2,
                heads: 2,
                ffn_width: 16,
                use_skip_connections: false,
                use_alibi_bias: false,
            },
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn alpha_zero_matches_unguided_bitwise() {
        let model = model();
        let mut rng = Rng::new(22);
        let x0 = Array::new(vec![3, 2], rng.gaussian_vec(6)).unwrap();
        let x_ctx = Array::zeros(&[3, 2]);
        let z = vec![2, 3, 4];
        let config = SolverConfig::default();
        let guided = solve_guided(&model, &x0, &x_ctx, &z, &config).unwrap();
        let raw = solve(
            |t, w| model.eval_field(w, &x_ctx, &z, t),
            &x0,
            &config,
        )
        .unwrap();
        for (a, b) in guided.endpoint.data().iter().zip(raw.endpoint.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(guided.nfe, raw.nfe);
    }

    #[test]
    fn nfe_64_with_guidance_32_without() {
        let model = model();
        let x0 = Array::zeros(&[2, 2]);
        let x_ctx = Array::zeros(&[2, 2]);
        let z = vec![2, 3];
        let base = SolverConfig {
            method: SolveMethod::Midpoint,
            step_size: 0.0625,
            ..SolverConfig::default()
        };
        let unguided = solve_guided(&model, &x0, &x_ctx, &z, &base).unwrap();
        assert_eq!(unguided.nfe, 32);
        let guided_cfg = SolverConfig {
            cfg_alpha: 0.7,
            ..base
        };
        let guided = solve_guided(&model, &x0, &x_ctx, &z, &guided_cfg).unwrap();
        assert_eq!(guided.nfe, 64);
    }

    #[test]
    fn sweep_shapes() {
        let rows = nfe_sweep(&[], &[0.0], |_, _| Ok((vec![("m".into(), 1.0)], 1))).unwrap();
        assert!(rows.is_empty());
        let rows = nfe_sweep(&[4], &[0.5], |_, _| Ok((vec![("m".into(), 2.0)], 1))).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].nfe, 4);
        let rows = nfe_sweep(&[2, 4, 8, 16, 32], &[0.0, 0.3, 0.7, 1.0], |_, _| {
            Ok((vec![("m".into(), 0.0)], 1))
        })
        .unwrap();
        assert_eq!(rows.len(), 20);
    }

    #[test]
    fn step_for_nfe() {
        assert_eq!(midpoint_step_for_nfe(32).unwrap(), 0.0625);
        assert_eq!(midpoint_step_for_nfe(2).unwrap(), 1.0);
        assert!(midpoint_step_for_nfe(3).is_err());
    }
}
