//! The six in-context applications, each a context-construction recipe
//! over the trained audio and duration models: zero-shot TTS, alignment-
//! preserved style transfer, transient-noise removal, content editing,
//! diverse sampling, and style shuffling.
//!
//! All frame data here lives in the dataset's normalized feature space.

use crate::array::Array;
use crate::audio_net::VectorFieldModel;
use crate::duration::{predict_durations, DurationMode, DurationModel};
use crate::error::{Error, Result};
use crate::ode::SolverConfig;
use crate::rng::Rng;
use crate::sampling::solve_guided;
use crate::seq::{
    cat, rep, trim_end_silences, word_position_postfix, Phone, PhoneAlignment, PhoneTable,
    WordPosition,
};
use serde::{Deserialize, Serialize};
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ZsTts,
    StyleTransfer,
    Denoise,
    Edit,
    Sample,
    StyleShuffle,
}

/// Models and shared context every task needs.
pub struct TaskModels<'a> {
    pub audio: &'a VectorFieldModel,
    pub duration: Option<&'a DurationModel>,
    pub table: &'a PhoneTable,
    /// Maximum frames kept in leading/trailing predicted silences.
    pub trim_frames: u32,
}

impl<'a> TaskModels<'a> {
    fn duration_model(&self) -> Result<&'a DurationModel> {
        self.duration
            .ok_or_else(|| Error::invalid("this task needs a duration model"))
    }
}

/// What a task returns: generated frames (normalized space), the
/// alignment of the generated portion when durations were predicted, and
/// the solve cost.
#[derive(Debug, Clone)]
pub struct TaskOutput {
    pub frames: Array,
    pub alignment: Option<PhoneAlignment>,
    pub nfe: usize,
    pub wall: std::time::Duration,
}

/// Reduce a predicted alignment to one that exactly describes its frames:
/// non-silence phones that received zero frames cover nothing and are
/// dropped (ghost silences stay), and words emptied by the drop vanish.
/// The frame transcript is unchanged.
pub fn sanitize_predicted_alignment(alignment: &PhoneAlignment) -> PhoneAlignment {
    let mut keep = Vec::with_capacity(alignment.len());
    for i in 0..alignment.len() {
        keep.push(alignment.l[i] > 0 || alignment.y[i].is_sil());
    }
    let mut new_index = vec![usize::MAX; alignment.len()];
    let mut y = Vec::new();
    let mut l = Vec::new();
    for i in 0..alignment.len() {
        if keep[i] {
            new_index[i] = y.len();
            y.push(alignment.y[i]);
            l.push(alignment.l[i]);
        }
    }
    let mut words = Vec::new();
    for range in &alignment.words {
        let kept: Vec<usize> = range.clone().filter(|&i| keep[i]).collect();
        if kept.is_empty() {
            continue;
        }
        let start = new_index[*kept.first().unwrap()];
        let end = new_index[*kept.last().unwrap()] + 1;
        words.push(start..end);
    }
    // Re-apply postfixes: dropping phones can change word positions.
    let y = word_position_postfix(&y, &words).unwrap_or(y);
    PhoneAlignment { y, l, words }
}

/// Phone sequence for a target text: silences at both ends and at every
/// word boundary (all eligible pause sites), word-position postfixes
/// applied. Durations are unknown, so only structure is returned.
pub fn target_phone_sequence(words: &[Vec<u8>]) -> Result<(Vec<Phone>, Vec<Range<usize>>)> {
    if words.is_empty() || words.iter().any(|w| w.is_empty()) {
        return Err(Error::invalid("target text needs non-empty words"));
    }
    let mut y = vec![Phone::Sil];
    let mut ranges = Vec::with_capacity(words.len());
    for word in words {
        let start = y.len();
        let wlen = word.len();
        for (k, &base) in word.iter().enumerate() {
            let pos = if wlen == 1 {
                WordPosition::Singleton
            } else if k == 0 {
                WordPosition::Begin
            } else if k == wlen - 1 {
                WordPosition::End
            } else {
                WordPosition::Interior
            };
            y.push(Phone::Pos(base, pos));
        }
        ranges.push(start..y.len());
        y.push(Phone::Sil);
    }
    Ok((y, ranges))
}

fn encode_all(table: &PhoneTable, phones: &[Phone]) -> Result<Vec<usize>> {
    table.encode_seq(phones)
}

fn stack_context(prefix: &Array, suffix_rows: usize) -> Result<Array> {
    let f = prefix.cols();
    let n = prefix.rows() + suffix_rows;
    let mut out = Array::zeros(&[n, f]);
    for r in 0..prefix.rows() {
        out.row_mut(r).copy_from_slice(prefix.row(r));
    }
    Ok(out)
}

fn gaussian_prior(rows: usize, cols: usize, rng: &mut Rng) -> Result<Array> {
    Array::new(vec![rows, cols], rng.gaussian_vec(rows * cols))
}

fn slice_rows_owned(a: &Array, start: usize, end: usize) -> Array {
    let f = a.cols();
    let mut out = Array::zeros(&[end - start, f]);
    for r in start..end {
        out.row_mut(r - start).copy_from_slice(a.row(r));
    }
    out
}

/// Zero-shot TTS: the reference and the target are treated as one
/// utterance with the target masked. Durations for the target phones are
/// predicted with the reference durations as context (or from the target
/// phones alone when `condition_on_reference_durations` is off), then the
/// audio is infilled and only the generated suffix is returned.
#[allow(clippy::too_many_arguments)]
pub fn zero_shot_tts(
    models: &TaskModels,
    reference_frames: &Array,
    reference_alignment: &PhoneAlignment,
    target_words: &[Vec<u8>],
    dur_mode: DurationMode,
    solver: &SolverConfig,
    dur_solver: &SolverConfig,
    condition_on_reference_durations: bool,
    seed: u64,
) -> Result<TaskOutput> {
    let start = std::time::Instant::now();
    let table = models.table;
    let dur_model = models.duration_model()?;
    for word in target_words {
        for &b in word {
            if b as usize >= table.n_base() {
                return Err(Error::UnknownPhone {
                    id: b as usize,
                    vocab: table.n_base(),
                });
            }
        }
    }
    let (y_target, _words) = target_phone_sequence(target_words)?;
    let y_target_ids = encode_all(table, &y_target)?;
    let y_ref_ids = encode_all(table, &reference_alignment.y)?;

    let mut dur_rng = Rng::stream(seed, 0xD);
    let mut l_target: Vec<u32> = if condition_on_reference_durations {
        let y_cat = cat(&y_ref_ids, &y_target_ids);
        let l_ctx: Vec<u32> = reference_alignment
            .l
            .iter()
            .cloned()
            .chain(std::iter::repeat(0).take(y_target_ids.len()))
            .collect();
        let m_phone: Vec<u8> = std::iter::repeat(0)
            .take(y_ref_ids.len())
            .chain(std::iter::repeat(1).take(y_target_ids.len()))
            .collect();
        let all = predict_durations(dur_model, &y_cat, &l_ctx, &m_phone, dur_mode, dur_solver, &mut dur_rng)?;
        all[y_ref_ids.len()..].to_vec()
    } else {
        let l_ctx = vec![0u32; y_target_ids.len()];
        let m_phone = vec![1u8; y_target_ids.len()];
        predict_durations(dur_model, &y_target_ids, &l_ctx, &m_phone, dur_mode, dur_solver, &mut dur_rng)?
    };
    trim_end_silences(&y_target, &mut l_target, models.trim_frames);

    let z_target = rep(&y_target_ids, &l_target)?;
    let z_ref = encode_all(table, &reference_alignment.frame_transcript()?)?;
    if z_ref.len() != reference_frames.rows() {
        return Err(Error::Alignment(format!(
            "reference alignment covers {} frames but audio has {}",
            z_ref.len(),
            reference_frames.rows()
        )));
    }
    let n_ref = z_ref.len();
    let n_target = z_target.len();
    if n_target == 0 {
        return Err(Error::invalid("predicted target duration is zero frames"));
    }
    let z_all = cat(&z_ref, &z_target);
    let x_ctx = stack_context(reference_frames, n_target)?;
    let mut prior_rng = Rng::stream(seed, 0xA);
    let x0 = gaussian_prior(n_ref + n_target, reference_frames.cols(), &mut prior_rng)?;
    let trace = solve_guided(models.audio, &x0, &x_ctx, &z_all, solver)?;
    let suffix = slice_rows_owned(&trace.endpoint, n_ref, n_ref + n_target);
    Ok(TaskOutput {
        frames: suffix,
        alignment: Some(PhoneAlignment {
            y: y_target,
            l: l_target,
            words: _words,
        }),
        nfe: trace.nfe,
        wall: start.elapsed(),
    })
}

/// Alignment-preserved style transfer: regenerate a known frame-level
/// transcript in the reference's style. Output length equals the target
/// transcript length exactly.
pub fn style_transfer(
    models: &TaskModels,
    reference_frames: &Array,
    reference_alignment: &PhoneAlignment,
    target_z: &[Phone],
    solver: &SolverConfig,
    seed: u64,
) -> Result<TaskOutput> {
    let start = std::time::Instant::now();
    let table = models.table;
    let z_ref = encode_all(table, &reference_alignment.frame_transcript()?)?;
    let z_target = encode_all(table, target_z)?;
    if z_ref.len() != reference_frames.rows() {
        return Err(Error::Alignment("reference alignment/audio mismatch".into()));
    }
    let n_ref = z_ref.len();
    let n_target = z_target.len();
    if n_target == 0 {
        return Err(Error::invalid("style transfer needs a non-empty target"));
    }
    let z_all = cat(&z_ref, &z_target);
    let x_ctx = stack_context(reference_frames, n_target)?;
    let mut prior_rng = Rng::stream(seed, 0xA);
    let x0 = gaussian_prior(n_ref + n_target, reference_frames.cols(), &mut prior_rng)?;
    let trace = solve_guided(models.audio, &x0, &x_ctx, &z_all, solver)?;
    Ok(TaskOutput {
        frames: slice_rows_owned(&trace.endpoint, n_ref, n_ref + n_target),
        alignment: None,
        nfe: trace.nfe,
        wall: start.elapsed(),
    })
}

/// Transient-noise removal: regenerate the frames inside `span` given the
/// original frame-level transcript, then splice. Frames outside the span
/// are returned bit-for-bit.
pub fn denoise(
    models: &TaskModels,
    noisy_frames: &Array,
    z: &[Phone],
    span: Range<usize>,
    solver: &SolverConfig,
    seed: u64,
) -> Result<TaskOutput> {
    let start = std::time::Instant::now();
    let n = noisy_frames.rows();
    if span.start >= span.end || span.end > n {
        return Err(Error::invalid(format!(
            "denoise span {span:?} invalid for {n} frames"
        )));
    }
    if z.len() != n {
        return Err(Error::Alignment(format!(
            "transcript covers {} frames but audio has {n}",
            z.len()
        )));
    }
    let z_ids = encode_all(models.table, z)?;
    let mut mask = vec![0u8; n];
    mask[span.clone()].iter_mut().for_each(|m| *m = 1);
    let x_ctx = crate::seq::build_context(noisy_frames, &mask)?;
    let mut prior_rng = Rng::stream(seed, 0xA);
    let x0 = gaussian_prior(n, noisy_frames.cols(), &mut prior_rng)?;
    let trace = solve_guided(models.audio, &x0, &x_ctx, &z_ids, solver)?;
    // Splice: generated rows inside the span, input rows outside.
    let mut out = noisy_frames.clone();
    for r in span.clone() {
        out.row_mut(r).copy_from_slice(trace.endpoint.row(r));
    }
    Ok(TaskOutput {
        frames: out,
        alignment: None,
        nfe: trace.nfe,
        wall: start.elapsed(),
    })
}

/// Which words of an alignment to replace with what.
#[derive(Debug, Clone)]
pub struct EditSpec {
    /// Word index range [start, end) to replace.
    pub word_span: Range<usize>,
    /// Replacement words as base-phone sequences.
    pub new_words: Vec<Vec<u8>>,
}

/// Content editing: kept phones copy their durations and frames; new
/// phones get zero-length context, predicted durations, and generated
/// frames. Silences adjacent to the edit are re-predicted.
#[allow(clippy::too_many_arguments)]
pub fn content_edit(
    models: &TaskModels,
    frames: &Array,
    alignment: &PhoneAlignment,
    edit: &EditSpec,
    dur_mode: DurationMode,
    solver: &SolverConfig,
    dur_solver: &SolverConfig,
    seed: u64,
) -> Result<TaskOutput> {
    let start = std::time::Instant::now();
    let table = models.table;
    let dur_model = models.duration_model()?;
    let n_words = alignment.words.len();
    if edit.word_span.start >= edit.word_span.end
        || edit.word_span.end > n_words
        || edit.new_words.is_empty()
    {
        return Err(Error::invalid(format!(
            "edit span {:?} invalid for {n_words} words",
            edit.word_span
        )));
    }

    // Original frame offsets per phone.
    let mut offsets = Vec::with_capacity(alignment.len());
    let mut acc = 0usize;
    for &d in &alignment.l {
        offsets.push(acc);
        acc += d as usize;
    }

    // Phone index span of the replaced words, silences at the inner
    // boundaries included.
    let first_word = &alignment.words[edit.word_span.start];
    let last_word = &alignment.words[edit.word_span.end - 1];
    let mut cut_lo = first_word.start;
    while cut_lo > 0 && alignment.y[cut_lo - 1].is_sil() {
        cut_lo -= 1;
    }
    let mut cut_hi = last_word.end;
    while cut_hi < alignment.len() && alignment.y[cut_hi].is_sil() {
        cut_hi += 1;
    }
    // Keep an outer silence when the edit is not at the utterance edge:
    // the silences strictly between kept material and the edit are
    // re-predicted, but the utterance-end silences outside the span stay.
    // (cut_lo/cut_hi already include them; the new sequence re-inserts
    // boundary silences as ghosts.)

    #[derive(Clone)]
    struct Piece {
        phone: Phone,
        // Source phone index for kept phones.
        source: Option<usize>,
        masked: bool,
    }
    let mut pieces: Vec<Piece> = Vec::new();
    for i in 0..cut_lo {
        pieces.push(Piece {
            phone: alignment.y[i],
            source: Some(i),
            masked: false,
        });
    }
    // Ghost silence before the new words (re-predicted).
    pieces.push(Piece {
        phone: Phone::Sil,
        source: None,
        masked: true,
    });
    let mut new_word_ranges = Vec::new();
    for word in &edit.new_words {
        if word.is_empty() {
            return Err(Error::invalid("edit replacement word is empty"));
        }
        let start_idx = pieces.len();
        let wlen = word.len();
        for (k, &b) in word.iter().enumerate() {
            let pos = if wlen == 1 {
                WordPosition::Singleton
            } else if k == 0 {
                WordPosition::Begin
            } else if k == wlen - 1 {
                WordPosition::End
            } else {
                WordPosition::Interior
            };
            pieces.push(Piece {
                phone: Phone::Pos(b, pos),
                source: None,
                masked: true,
            });
        }
        new_word_ranges.push(start_idx..pieces.len());
        pieces.push(Piece {
            phone: Phone::Sil,
            source: None,
            masked: true,
        });
    }
    for i in cut_hi..alignment.len() {
        pieces.push(Piece {
            phone: alignment.y[i],
            source: Some(i),
            masked: false,
        });
    }

    let y_new: Vec<Phone> = pieces.iter().map(|p| p.phone).collect();
    let y_ids = encode_all(table, &y_new)?;
    let l_ctx: Vec<u32> = pieces
        .iter()
        .map(|p| p.source.map_or(0, |i| alignment.l[i]))
        .collect();
    let m_phone: Vec<u8> = pieces.iter().map(|p| u8::from(p.masked)).collect();

    let mut dur_rng = Rng::stream(seed, 0xD);
    let l_new = predict_durations(dur_model, &y_ids, &l_ctx, &m_phone, dur_mode, dur_solver, &mut dur_rng)?;

    // Frame-level context and mask.
    let z_new = rep(&y_ids, &l_new)?;
    let n_new = z_new.len();
    let f = frames.cols();
    let mut x_ctx = Array::zeros(&[n_new, f]);
    let mut frame_mask = vec![1u8; n_new];
    let mut cursor = 0usize;
    for (piece, &dur) in pieces.iter().zip(&l_new) {
        let dur = dur as usize;
        if let Some(src) = piece.source {
            let src_off = offsets[src];
            for k in 0..dur {
                x_ctx
                    .row_mut(cursor + k)
                    .copy_from_slice(frames.row(src_off + k));
                frame_mask[cursor + k] = 0;
            }
        }
        cursor += dur;
    }

    let mut prior_rng = Rng::stream(seed, 0xA);
    let x0 = gaussian_prior(n_new, f, &mut prior_rng)?;
    let trace = solve_guided(models.audio, &x0, &x_ctx, &z_new, solver)?;

    // Splice: kept frames bitwise from the source, new frames generated.
    let mut out = Array::zeros(&[n_new, f]);
    let mut cursor = 0usize;
    for (piece, &dur) in pieces.iter().zip(&l_new) {
        let dur = dur as usize;
        match piece.source {
            Some(src) => {
                let src_off = offsets[src];
                for k in 0..dur {
                    out.row_mut(cursor + k).copy_from_slice(frames.row(src_off + k));
                }
            }
            None => {
                for k in 0..dur {
                    out.row_mut(cursor + k)
                        .copy_from_slice(trace.endpoint.row(cursor + k));
                }
            }
        }
        cursor += dur;
    }

    let words = {
        // Word ranges over the new sequence: kept words shifted, new ones
        // recorded above.
        let mut ranges: Vec<Range<usize>> = Vec::new();
        for (w, r) in alignment.words.iter().enumerate() {
            if w < edit.word_span.start {
                ranges.push(r.clone());
            } else if w >= edit.word_span.end {
                let shift_src = cut_hi as i64;
                let shift_dst = (pieces.len() - (alignment.len() - cut_hi)) as i64;
                let delta = shift_dst - shift_src;
                ranges.push(((r.start as i64 + delta) as usize)..((r.end as i64 + delta) as usize));
            }
        }
        let insert_at = edit.word_span.start;
        for (k, r) in new_word_ranges.iter().enumerate() {
            ranges.insert(insert_at + k, r.clone());
        }
        ranges
    };

    Ok(TaskOutput {
        frames: out,
        alignment: Some(PhoneAlignment {
            y: y_new,
            l: l_new,
            words,
        }),
        nfe: trace.nfe,
        wall: start.elapsed(),
    })
}

/// Diverse sampling: durations predicted without context, audio generated
/// with empty context under a full mask.
pub fn diverse_sample(
    models: &TaskModels,
    target_words: &[Vec<u8>],
    dur_mode: DurationMode,
    solver: &SolverConfig,
    dur_solver: &SolverConfig,
    seed: u64,
) -> Result<TaskOutput> {
    let start = std::time::Instant::now();
    let table = models.table;
    let dur_model = models.duration_model()?;
    let (y, words) = target_phone_sequence(target_words)?;
    let y_ids = encode_all(table, &y)?;
    let l_ctx = vec![0u32; y_ids.len()];
    let m_phone = vec![1u8; y_ids.len()];
    let mut dur_rng = Rng::stream(seed, 0xD);
    let mut l_hat = predict_durations(dur_model, &y_ids, &l_ctx, &m_phone, dur_mode, dur_solver, &mut dur_rng)?;
    trim_end_silences(&y, &mut l_hat, models.trim_frames);
    let z = rep(&y_ids, &l_hat)?;
    let n = z.len();
    if n == 0 {
        return Err(Error::invalid("sampled utterance has zero frames"));
    }
    let f = models.audio.config.feature_dim;
    let x_ctx = Array::zeros(&[n, f]);
    let mut prior_rng = Rng::stream(seed, 0xA);
    let x0 = gaussian_prior(n, f, &mut prior_rng)?;
    let trace = solve_guided(models.audio, &x0, &x_ctx, &z, solver)?;
    Ok(TaskOutput {
        frames: trace.endpoint,
        alignment: Some(PhoneAlignment { y, l: l_hat, words }),
        nfe: trace.nfe,
        wall: start.elapsed(),
    })
}

/// Style shuffling: keep a known frame-level transcript, drop the audio
/// context entirely, and sample a fresh style.
pub fn style_shuffle(
    models: &TaskModels,
    target_z: &[Phone],
    solver: &SolverConfig,
    seed: u64,
) -> Result<TaskOutput> {
    let start = std::time::Instant::now();
    let z_ids = encode_all(models.table, target_z)?;
    let n = z_ids.len();
    if n == 0 {
        return Err(Error::invalid("style shuffle needs a non-empty transcript"));
    }
    let f = models.audio.config.feature_dim;
    let x_ctx = Array::zeros(&[n, f]);
    let mut prior_rng = Rng::stream(seed, 0xA);
    let x0 = gaussian_prior(n, f, &mut prior_rng)?;
    let trace = solve_guided(models.audio, &x0, &x_ctx, &z_ids, solver)?;
    Ok(TaskOutput {
        frames: trace.endpoint,
        alignment: None,
        nfe: trace.nfe,
        wall: start.elapsed(),
    })
}
