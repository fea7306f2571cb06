//! Distribution and similarity metrics: Gaussian Fréchet distance (full
//! covariance and the 1-D duration variant), the pooled-feature Fréchet
//! score over utterance sets, masked duration error and rate correlation,
//! cosine style similarity, and the oracle phone error rate.

use crate::array::Array;
use crate::error::{Error, Result};
use crate::synth::ToyProcessSpec;

/// Moments of a sample set. Covariance is the population form (divide by
/// n), which makes the 1-D case match the duration-distance formula
/// (mu - mu')^2 + s + s' - 2 sqrt(s s') exactly.
#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    /// Row-major d x d covariance.
    pub cov: Vec<f64>,
    pub dim: usize,
    pub count: usize,
}

impl GaussianFit {
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("gaussian fit needs at least two samples"));
        }
        let dim = samples[0].len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::invalid("gaussian fit: ragged samples"));
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; dim];
        for s in samples {
            for (m, &v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = vec![0.0; dim * dim];
        for s in samples {
            for i in 0..dim {
                let di = s[i] - mean[i];
                for j in i..dim {
                    cov[i * dim + j] += di * (s[j] - mean[j]);
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let v = cov[i * dim + j] / n;
                cov[i * dim + j] = v;
                cov[j * dim + i] = v;
            }
        }
        Ok(GaussianFit {
            mean,
            cov,
            dim,
            count: samples.len(),
        })
    }

    pub fn fit_scalar(values: &[f64]) -> Result<Self> {
        let samples: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        GaussianFit::fit(&samples)
    }
}

/// Jacobi eigendecomposition of a symmetric matrix. Returns eigenvalues
/// and the column eigenvectors (row-major, column k = eigenvector k).
fn symmetric_eigen(matrix: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in i + 1..d {
                off += a[i * d + j] * a[i * d + j];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..d).map(|i| a[i * d + i]).collect();
    (eig, v)
}

/// Symmetric positive-semidefinite square root via eigendecomposition.
/// Eigenvalues below `-tol` raise the non-PSD error; small negatives are
/// clamped to zero.
fn psd_sqrt(matrix: &[f64], d: usize, tol: f64) -> Result<Vec<f64>> {
    let (eig, vec) = symmetric_eigen(matrix, d);
    let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -tol {
        return Err(Error::NotPsd { min_eig });
    }
    let roots: Vec<f64> = eig.iter().map(|&e| e.max(0.0).sqrt()).collect();
    // V diag(sqrt) V^T
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += vec[i * d + k] * roots[k] * vec[j * d + k];
            }
            out[i * d + j] = s;
        }
    }
    Ok(out)
}

fn matmul_square(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    crate::array::matmul_nn(a, b, &mut out, d, d, d);
    out
}

/// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
///
/// A small ridge is added before the matrix square roots for numerical
/// safety; strongly non-PSD inputs raise an error.
pub fn frechet_gaussian(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::invalid(format!(
            "frechet: dim {} vs {}",
            a.dim, b.dim
        )));
    }
    let d = a.dim;
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    // Small enough that the 1-D closed form still agrees to 1e-9, large
    // enough to keep rank-deficient fits on the PSD side.
    let ridge = 1e-10;
    let mut sa = a.cov.clone();
    let mut sb = b.cov.clone();
    // Symmetrize defensively and add the ridge.
    for i in 0..d {
        for j in 0..d {
            let va = 0.5 * (a.cov[i * d + j] + a.cov[j * d + i]);
            let vb = 0.5 * (b.cov[i * d + j] + b.cov[j * d + i]);
            sa[i * d + j] = va + if i == j { ridge } else { 0.0 };
            sb[i * d + j] = vb + if i == j { ridge } else { 0.0 };
        }
    }
    let sqrt_a = psd_sqrt(&sa, d, 1e-8)?;
    let inner = matmul_square(&matmul_square(&sqrt_a, &sb, d), &sqrt_a, d);
    // Symmetrize the product before the final root.
    let mut inner_sym = inner.clone();
    for i in 0..d {
        for j in 0..d {
            inner_sym[i * d + j] = 0.5 * (inner[i * d + j] + inner[j * d + i]);
        }
    }
    let cross = psd_sqrt(&inner_sym, d, 1e-6)?;
    let mut trace_term = 0.0;
    for i in 0..d {
        trace_term += sa[i * d + i] + sb[i * d + i] - 2.0 * cross[i * d + i];
    }
    Ok((mean_term + trace_term).max(0.0))
}

/// Mean-and-std pooling over frames: the 2F-wide utterance feature used
/// by the set-level Fréchet score.
pub fn pooled_feature(frames: &Array) -> Vec<f64> {
    let n = frames.rows().max(1) as f64;
    let f = frames.cols();
    let mut mean = vec![0.0; f];
    for i in 0..frames.rows() {
        for (m, &v) in mean.iter_mut().zip(frames.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; f];
    for i in 0..frames.rows() {
        for (j, &v) in frames.row(i).iter().enumerate() {
            var[j] += (v - mean[j]) * (v - mean[j]);
        }
    }
    let mut out = mean;
    out.extend(var.iter().map(|&v| (v / n).sqrt()));
    out
}

pub const FSD_MIN_SET: usize = 32;

/// Fréchet distance between Gaussian fits of pooled utterance features.
pub fn fsd_analog(generated: &[&Array], reference: &[&Array]) -> Result<f64> {
    if generated.len() < FSD_MIN_SET || reference.len() < FSD_MIN_SET {
        return Err(Error::invalid(format!(
            "fsd needs sets of >= {FSD_MIN_SET} utterances, got {} and {}",
            generated.len(),
            reference.len()
        )));
    }
    let gen_feats: Vec<Vec<f64>> = generated.iter().map(|x| pooled_feature(x)).collect();
    let ref_feats: Vec<Vec<f64>> = reference.iter().map(|x| pooled_feature(x)).collect();
    let fit_g = GaussianFit::fit(&gen_feats)?;
    let fit_r = GaussianFit::fit(&ref_feats)?;
    frechet_gaussian(&fit_g, &fit_r)
}

/// 1-D Fréchet distance between duration multisets:
/// (mu - mu')^2 + s + s' - 2 sqrt(s s') with population variances.
pub fn fdd(sampled: &[f64], reference: &[f64]) -> Result<f64> {
    if sampled.len() < 2 || reference.len() < 2 {
        return Err(Error::invalid("fdd needs at least two values per side"));
    }
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var)
    };
    let (mu_a, s_a) = stats(sampled);
    let (mu_b, s_b) = stats(reference);
    Ok((mu_a - mu_b).powi(2) + s_a + s_b - 2.0 * (s_a * s_b).sqrt())
}

/// Masked absolute duration error, normalized by the average masked-phone
/// count: sum over utterances of ||m (l - l_hat)||_1 divided by the total
/// masked-phone count.
pub fn ms_mae(predictions: &[Vec<f64>], targets: &[Vec<u32>], masks: &[Vec<u8>]) -> Result<f64> {
    if predictions.len() != targets.len() || targets.len() != masks.len() {
        return Err(Error::invalid("ms_mae: utterance count mismatch"));
    }
    let mut abs_err = 0.0;
    let mut masked = 0usize;
    for ((pred, target), mask) in predictions.iter().zip(targets).zip(masks) {
        if pred.len() != target.len() || target.len() != mask.len() {
            return Err(Error::invalid("ms_mae: per-utterance length mismatch"));
        }
        for i in 0..pred.len() {
            if mask[i] == 1 {
                abs_err += (pred[i] - target[i] as f64).abs();
                masked += 1;
            }
        }
    }
    if masked == 0 {
        return Err(Error::EmptyMask("ms_mae over zero masked phones".into()));
    }
    Ok(abs_err / masked as f64)
}

/// Pearson correlation between per-utterance mean masked prediction and
/// per-utterance mean unmasked context duration. Utterances lacking
/// either side are skipped; zero variance makes the metric undefined
/// (`None`).
pub fn ms_corr(
    predictions: &[Vec<f64>],
    contexts: &[Vec<u32>],
    masks: &[Vec<u8>],
) -> Result<Option<f64>> {
    if predictions.len() != contexts.len() || contexts.len() != masks.len() {
        return Err(Error::invalid("ms_corr: utterance count mismatch"));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for ((pred, ctx), mask) in predictions.iter().zip(contexts).zip(masks) {
        let mut masked_sum = 0.0;
        let mut masked_n = 0usize;
        let mut ctx_sum = 0.0;
        let mut ctx_n = 0usize;
        for i in 0..mask.len() {
            if mask[i] == 1 {
                masked_sum += pred[i];
                masked_n += 1;
            } else {
                ctx_sum += ctx[i] as f64;
                ctx_n += 1;
            }
        }
        if masked_n > 0 && ctx_n > 0 {
            xs.push(masked_sum / masked_n as f64);
            ys.push(ctx_sum / ctx_n as f64);
        }
    }
    if xs.len() < 3 {
        return Err(Error::invalid(format!(
            "ms_corr needs >= 3 usable utterances, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        cov += (xs[i] - mx) * (ys[i] - my);
        vx += (xs[i] - mx) * (xs[i] - mx);
        vy += (ys[i] - my) * (ys[i] - my);
    }
    if vx <= 0.0 || vy <= 0.0 {
        return Ok(None);
    }
    Ok(Some(cov / (vx.sqrt() * vy.sqrt())))
}

/// Unit-normalized mean feature vector: the style summary of an
/// utterance (the toy style latent shifts feature means).
pub fn style_embedding(frames: &Array) -> Result<Vec<f64>> {
    if frames.rows() == 0 {
        return Err(Error::invalid("style embedding of an empty sequence"));
    }
    let f = frames.cols();
    let mut mean = vec![0.0; f];
    for i in 0..frames.rows() {
        for (m, &v) in mean.iter_mut().zip(frames.row(i)) {
            *m += v;
        }
    }
    let n = frames.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let norm: f64 = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        mean.iter_mut().for_each(|m| *m /= norm);
    }
    Ok(mean)
}

/// Cosine similarity of style embeddings, in [-1, 1].
pub fn style_similarity(a: &Array, b: &Array) -> Result<f64> {
    let ea = style_embedding(a)?;
    let eb = style_embedding(b)?;
    if ea.len() != eb.len() {
        return Err(Error::invalid("style similarity: width mismatch"));
    }
    Ok(ea.iter().zip(&eb).map(|(x, y)| x * y).sum())
}

/// Frame error rate of the oracle phone decoder against the reference
/// frame-level transcript. Frames and the transcript must be aligned;
/// `norm` is the (mean, std) of the feature normalization in effect.
pub fn phone_error_rate(
    frames: &Array,
    z: &[crate::seq::Phone],
    spec: &ToyProcessSpec,
    norm: (f64, f64),
) -> Result<f64> {
    if frames.rows() != z.len() {
        return Err(Error::invalid(format!(
            "phone_error_rate: {} frames vs {} labels",
            frames.rows(),
            z.len()
        )));
    }
    if z.is_empty() {
        return Err(Error::invalid("phone_error_rate: empty transcript"));
    }
    let decoded = spec.decode_base_phones(frames, norm)?;
    let mut errors = 0usize;
    for (i, &phone) in z.iter().enumerate() {
        let truth = spec.class_of(phone)?;
        if decoded[i] != truth {
            errors += 1;
        }
    }
    Ok(errors as f64 / z.len() as f64)
}
