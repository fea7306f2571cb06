//! The synthetic speech-like process: per-phone emission means shifted by
//! a per-utterance style latent drawn from clustered families, shifted-
//! geometric durations scaled by a per-utterance rate, silences at word
//! boundaries, and Gaussian frame noise. Ground truth for every latent is
//! retained, so classifier and similarity oracles are exact.

use crate::array::Array;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::seq::{Phone, PhoneAlignment, PhoneTable};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StyleCluster {
    pub center: Vec<f64>,
    pub family: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ToyProcessSpec {
    pub feature_dim: usize,
    pub n_base_phones: usize,
    /// Shared emission standard deviation around each phone mean.
    pub emission_scale: f64,
    /// Per-base-phone emission mean vectors.
    pub phone_means: Vec<Vec<f64>>,
    /// Emission mean of silence frames.
    pub sil_mean: Vec<f64>,
    pub style_clusters: Vec<StyleCluster>,
    /// Within-cluster standard deviation of the style latent.
    pub style_jitter: f64,
    /// Mean frame count per base phone before rate scaling.
    pub duration_means: Vec<f64>,
    /// Mean frame count of a real pause.
    pub sil_duration_mean: f64,
    /// Per-utterance speaking-rate multiplier range (uniform).
    pub rate_range: (f64, f64),
    /// Probability that a word boundary carries a real pause.
    pub p_pause: f64,
    /// Probability that an utterance end carries a real silence.
    pub p_end_sil: f64,
    /// Per-entry Gaussian noise added to every frame.
    pub noise_level: f64,
    pub words_range: (usize, usize),
    pub word_len_range: (usize, usize),
    pub min_frames: usize,
    pub max_frames: usize,
    /// Frames per second; 0.1 s of trim allowance is derived from this.
    pub frame_rate_hz: f64,
}

impl ToyProcessSpec {
    /// Deterministic spec construction: means and cluster centers are
    /// drawn from `seed` and redrawn until the separation invariant
    /// holds. Cluster centers are centered to mean zero.
    pub fn generate(seed: u64) -> Self {
        Self::generate_sized(seed, 8, 12, 4, 2)
    }

    pub fn generate_sized(
        seed: u64,
        feature_dim: usize,
        n_base_phones: usize,
        clusters_per_family: usize,
        families: usize,
    ) -> Self {
        let mut rng = Rng::stream(seed, 0xB00);
        let emission_scale = 0.25;
        let min_sep = 4.0 * emission_scale;
        let (phone_means, sil_mean) = loop {
            let means: Vec<Vec<f64>> = (0..n_base_phones)
                .map(|_| rng.gaussian_vec(feature_dim).iter().map(|v| v * 1.1).collect())
                .collect();
            let sil: Vec<f64> = (0..feature_dim).map(|_| -2.5 + 0.2 * rng.gaussian()).collect();
            let mut all = means.clone();
            all.push(sil.clone());
            if pairwise_min_distance(&all) >= min_sep {
                break (means, sil);
            }
        };
        let mut centers: Vec<Vec<f64>> = (0..clusters_per_family * families)
            .map(|_| rng.gaussian_vec(feature_dim))
            .collect();
        // Center the cluster centers so styles average to zero.
        for j in 0..feature_dim {
            let mean: f64 = centers.iter().map(|c| c[j]).sum::<f64>() / centers.len() as f64;
            for c in centers.iter_mut() {
                c[j] -= mean;
            }
        }
        let style_clusters = centers
            .into_iter()
            .enumerate()
            .map(|(i, center)| StyleCluster {
                center,
                family: (i / clusters_per_family) as u8,
            })
            .collect();
        let duration_means = (0..n_base_phones).map(|k| 2.0 + (k % 5) as f64).collect();
        ToyProcessSpec {
            feature_dim,
            n_base_phones,
            emission_scale,
            phone_means,
            sil_mean,
            style_clusters,
            style_jitter: 0.25,
            duration_means,
            sil_duration_mean: 3.0,
            rate_range: (0.6, 1.8),
            p_pause: 0.4,
            p_end_sil: 0.8,
            noise_level: 0.05,
            words_range: (4, 9),
            word_len_range: (1, 4),
            min_frames: 40,
            max_frames: 200,
            frame_rate_hz: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phone_means.len() != self.n_base_phones
            || self.duration_means.len() != self.n_base_phones
        {
            return Err(Error::invalid("toy spec: per-phone tables sized wrong"));
        }
        let mut all = self.phone_means.clone();
        all.push(self.sil_mean.clone());
        for m in &all {
            if m.len() != self.feature_dim {
                return Err(Error::invalid("toy spec: mean width != feature dim"));
            }
        }
        let min_dist = pairwise_min_distance(&all);
        if min_dist < 4.0 * self.emission_scale {
            return Err(Error::invalid(format!(
                "toy spec: phone means separated by {min_dist:.3} < 4 x emission scale"
            )));
        }
        if self.rate_range.0 <= 0.0 || self.rate_range.1 < self.rate_range.0 {
            return Err(Error::invalid("toy spec: bad rate range"));
        }
        if self.style_clusters.is_empty() {
            return Err(Error::invalid("toy spec: no style clusters"));
        }
        Ok(())
    }

    pub fn phone_table(&self) -> Result<PhoneTable> {
        PhoneTable::with_letters(self.n_base_phones)
    }

    pub fn n_families(&self) -> usize {
        self.style_clusters
            .iter()
            .map(|c| c.family as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Frames allowed by the 0.1 s end-silence trim rule.
    pub fn trim_frames(&self) -> u32 {
        (0.1 * self.frame_rate_hz).round() as u32
    }

    /// Emission mean for one frame-level phone in raw feature space.
    pub fn emission_mean(&self, phone: Phone) -> Result<&[f64]> {
        match phone {
            Phone::Sil => Ok(&self.sil_mean),
            Phone::Base(b) | Phone::Pos(b, _) => self
                .phone_means
                .get(b as usize)
                .map(|v| v.as_slice())
                .ok_or(Error::UnknownPhone {
                    id: b as usize,
                    vocab: self.n_base_phones,
                }),
            Phone::Null => Err(Error::invalid("null phone has no emission mean")),
        }
    }

    /// Draw the word/phone structure and durations of one utterance.
    pub fn sample_alignment(&self, rng: &mut Rng) -> Result<(PhoneAlignment, f64)> {
        for _ in 0..200 {
            let rate = rng.uniform_in(self.rate_range.0, self.rate_range.1);
            let n_words =
                self.words_range.0 + rng.below(self.words_range.1 - self.words_range.0 + 1);
            let mut y: Vec<Phone> = Vec::new();
            let mut l: Vec<u32> = Vec::new();
            let mut word_lens = Vec::new();

            if rng.bernoulli(self.p_end_sil) {
                y.push(Phone::Sil);
                l.push(self.draw_duration(self.sil_duration_mean, rate, rng));
            }
            for w in 0..n_words {
                let wlen = self.word_len_range.0
                    + rng.below(self.word_len_range.1 - self.word_len_range.0 + 1);
                word_lens.push(wlen);
                for _ in 0..wlen {
                    let base = rng.below(self.n_base_phones) as u8;
                    y.push(Phone::Base(base));
                    l.push(self.draw_duration(self.duration_means[base as usize], rate, rng));
                }
                let boundary_pause = w + 1 < n_words && rng.bernoulli(self.p_pause);
                if boundary_pause {
                    y.push(Phone::Sil);
                    l.push(self.draw_duration(self.sil_duration_mean, rate, rng));
                }
            }
            if rng.bernoulli(self.p_end_sil) {
                y.push(Phone::Sil);
                l.push(self.draw_duration(self.sil_duration_mean, rate, rng));
            }

            let total: u32 = l.iter().sum();
            if (total as usize) < self.min_frames || (total as usize) > self.max_frames {
                continue;
            }
            let alignment = PhoneAlignment::from_plain(&y, &l, &word_lens)?;
            return Ok((alignment, rate));
        }
        Err(Error::invalid(
            "toy spec: could not fit an utterance into the frame budget",
        ))
    }

    /// Shifted geometric with support >= 1 and mean rate * mean_frames.
    fn draw_duration(&self, mean_frames: f64, rate: f64, rng: &mut Rng) -> u32 {
        let target_mean = (rate * mean_frames).max(1.0);
        let p = (1.0 / target_mean).clamp(1e-6, 1.0);
        1 + rng.geometric(p) as u32
    }

    /// Emit raw-space frames for an alignment under a given style latent.
    pub fn emit_frames(
        &self,
        alignment: &PhoneAlignment,
        style: &[f64],
        rng: &mut Rng,
    ) -> Result<Array> {
        let z = alignment.frame_transcript()?;
        let n = z.len();
        let f = self.feature_dim;
        let mut data = Vec::with_capacity(n * f);
        for &phone in &z {
            let mean = self.emission_mean(phone)?;
            for j in 0..f {
                data.push(
                    mean[j]
                        + style[j]
                        + self.emission_scale * rng.gaussian()
                        + self.noise_level * rng.gaussian(),
                );
            }
        }
        Array::new(vec![n, f], data)
    }

    /// One full utterance with its ground truth.
    pub fn sample_utterance(&self, rng: &mut Rng) -> Result<ToyUtterance> {
        let (alignment, rate) = self.sample_alignment(rng)?;
        let cluster = rng.below(self.style_clusters.len());
        let center = &self.style_clusters[cluster].center;
        let style: Vec<f64> = center
            .iter()
            .map(|&c| c + self.style_jitter * rng.gaussian())
            .collect();
        let frames = self.emit_frames(&alignment, &style, rng)?;
        Ok(ToyUtterance {
            frames,
            alignment,
            style,
            rate,
            cluster: cluster as u8,
            family: self.style_clusters[cluster].family,
        })
    }

    /// Maximum-likelihood per-frame classification under the ground-truth
    /// emission model, treating the utterance style as a latent estimated
    /// by multi-start coordinate ascent. Class ids are base phones with
    /// silence as the final class. `norm` maps the stored feature space
    /// back to raw means: (mean, std) of the global normalization.
    pub fn decode_base_phones(&self, frames: &Array, norm: (f64, f64)) -> Result<Vec<usize>> {
        let (gmean, gstd) = norm;
        if gstd <= 0.0 {
            return Err(Error::invalid("decode: nonpositive normalization std"));
        }
        let f = self.feature_dim;
        if frames.cols() != f {
            return Err(Error::invalid(format!(
                "decode: feature width {} vs spec {f}",
                frames.cols()
            )));
        }
        let n = frames.rows();
        if n == 0 {
            return Err(Error::invalid("decode: empty frame sequence"));
        }
        // Class means mapped into the normalized space.
        let n_classes = self.n_base_phones + 1;
        let mut class_means = vec![vec![0.0; f]; n_classes];
        for (k, cm) in class_means.iter_mut().enumerate() {
            let raw = if k < self.n_base_phones {
                &self.phone_means[k]
            } else {
                &self.sil_mean
            };
            for j in 0..f {
                cm[j] = (raw[j] - gmean) / gstd;
            }
        }
        let grand_mean: Vec<f64> = (0..f)
            .map(|j| class_means.iter().map(|c| c[j]).sum::<f64>() / n_classes as f64)
            .collect();
        let row_mean: Vec<f64> = (0..f)
            .map(|j| (0..n).map(|i| frames.at(i, j)).sum::<f64>() / n as f64)
            .collect();

        // Candidate style initializations.
        let mut starts: Vec<Vec<f64>> = Vec::with_capacity(n_classes + 1);
        starts.push((0..f).map(|j| row_mean[j] - grand_mean[j]).collect());
        for cm in &class_means {
            starts.push((0..f).map(|j| row_mean[j] - cm[j]).collect());
        }

        let assign = |style: &[f64]| -> (Vec<usize>, f64) {
            let mut labels = vec![0usize; n];
            let mut score = 0.0;
            for i in 0..n {
                let row = frames.row(i);
                let mut best = f64::INFINITY;
                let mut best_k = 0;
                for (k, cm) in class_means.iter().enumerate() {
                    let mut d = 0.0;
                    for j in 0..f {
                        let diff = row[j] - cm[j] - style[j];
                        d += diff * diff;
                    }
                    if d < best {
                        best = d;
                        best_k = k;
                    }
                }
                labels[i] = best_k;
                score += best;
            }
            (labels, score)
        };

        let mut best_labels = Vec::new();
        let mut best_score = f64::INFINITY;
        for start in starts {
            let mut style = start;
            let mut labels = Vec::new();
            for _ in 0..4 {
                let (new_labels, _) = assign(&style);
                // Re-estimate style as the mean residual.
                let mut resid = vec![0.0; f];
                for (i, &k) in new_labels.iter().enumerate() {
                    let row = frames.row(i);
                    for j in 0..f {
                        resid[j] += row[j] - class_means[k][j];
                    }
                }
                resid.iter_mut().for_each(|v| *v /= n as f64);
                style = resid;
                labels = new_labels;
            }
            let (final_labels, score) = assign(&style);
            let _ = labels;
            if score < best_score {
                best_score = score;
                best_labels = final_labels;
            }
        }
        Ok(best_labels)
    }

    /// Class id the decoder should produce for a frame-level phone.
    pub fn class_of(&self, phone: Phone) -> Result<usize> {
        match phone {
            Phone::Sil => Ok(self.n_base_phones),
            Phone::Base(b) | Phone::Pos(b, _) => Ok(b as usize),
            Phone::Null => Err(Error::invalid("null phone has no class")),
        }
    }
}

fn pairwise_min_distance(points: &[Vec<f64>]) -> f64 {
    let mut min = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min = min.min(d);
        }
    }
    min
}

/// One generated utterance with its ground truth, in raw feature space.
#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub frames: Array,
    pub alignment: PhoneAlignment,
    pub style: Vec<f64>,
    pub rate: f64,
    pub cluster: u8,
    pub family: u8,
}

/// (x - mean) / std elementwise.
pub fn normalize_features(x: &Array, mean: f64, std: f64) -> Result<Array> {
    if std <= 0.0 {
        return Err(Error::invalid(format!("normalization std {std} <= 0")));
    }
    Ok(x.map(|v| (v - mean) / std))
}

/// Inverse of [`normalize_features`].
pub fn denormalize_features(x: &Array, mean: f64, std: f64) -> Result<Array> {
    if std <= 0.0 {
        return Err(Error::invalid(format!("normalization std {std} <= 0")));
    }
    Ok(x.map(|v| v * std + mean))
}

/// Global scalar mean/std over up to `cap` frames of the given sequences.
pub fn estimate_normalization(frames: &[&Array], cap: usize) -> Result<(f64, f64)> {
    let mut count = 0usize;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut frames_used = 0usize;
    'outer: for x in frames {
        for i in 0..x.rows() {
            if frames_used >= cap {
                break 'outer;
            }
            for &v in x.row(i) {
                sum += v;
                sumsq += v * v;
                count += 1;
            }
            frames_used += 1;
        }
    }
    if count < 2 {
        return Err(Error::invalid("normalization needs at least two values"));
    }
    let mean = sum / count as f64;
    let var = (sumsq / count as f64 - mean * mean).max(1e-12);
    Ok((mean, var.sqrt()))
}

/// p_s proportional to (n_s / N)^beta, normalized to sum one.
pub fn language_upsample_weights(hours: &[f64], beta: f64) -> Result<Vec<f64>> {
    if hours.is_empty() {
        return Err(Error::invalid("upsampling needs at least one entry"));
    }
    if !(0.0 < beta && beta <= 1.0) {
        return Err(Error::invalid(format!("beta {beta} outside (0, 1]")));
    }
    if hours.iter().any(|&h| h <= 0.0) {
        return Err(Error::invalid("hours must be positive"));
    }
    let total: f64 = hours.iter().sum();
    let raw: Vec<f64> = hours.iter().map(|&h| (h / total).powf(beta)).collect();
    let z: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / z).collect())
}
