//! Phone/duration/frame bookkeeping: repetition and concatenation of
//! phone sequences, ghost silences, word-position-dependent phones,
//! phone-aligned mask construction, the training mask policy, and audio
//! context assembly.

use crate::array::Array;
use crate::error::{Error, Result};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Position of a phone within its word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WordPosition {
    Begin,
    Interior,
    End,
    Singleton,
}

impl WordPosition {
    pub fn postfix(self) -> &'static str {
        match self {
            WordPosition::Begin => "_B",
            WordPosition::Interior => "_I",
            WordPosition::End => "_E",
            WordPosition::Singleton => "_S",
        }
    }

    fn index(self) -> usize {
        match self {
            WordPosition::Begin => 0,
            WordPosition::Interior => 1,
            WordPosition::End => 2,
            WordPosition::Singleton => 3,
        }
    }

    fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(WordPosition::Begin),
            1 => Some(WordPosition::Interior),
            2 => Some(WordPosition::End),
            3 => Some(WordPosition::Singleton),
            _ => None,
        }
    }
}

/// A phone symbol. `Base` phones exist only before word-position
/// postfixing; aligned transcripts carry `Pos` phones plus silences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phone {
    /// Silence, between words or at utterance ends.
    Sil,
    /// The null-condition symbol used when conditioning is dropped.
    Null,
    /// A raw phone before postfixing.
    Base(u8),
    /// A phone carrying its word position.
    Pos(u8, WordPosition),
}

impl Phone {
    pub fn is_sil(self) -> bool {
        self == Phone::Sil
    }

    pub fn base(self) -> Option<u8> {
        match self {
            Phone::Base(b) | Phone::Pos(b, _) => Some(b),
            _ => None,
        }
    }
}

/// Maps phones to the small-integer ids used by models and dataset files,
/// with a name per base phone for the sidecar table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PhoneTable {
    base_names: Vec<String>,
}

impl PhoneTable {
    pub fn new(base_names: Vec<String>) -> Result<Self> {
        if base_names.is_empty() {
            return Err(Error::invalid("phone table needs at least one base phone"));
        }
        if base_names.len() > 60 {
            return Err(Error::invalid("phone table limited to 60 base phones"));
        }
        Ok(PhoneTable { base_names })
    }

    /// Single-letter base names a, b, c, ...
    pub fn with_letters(n: usize) -> Result<Self> {
        let names = (0..n)
            .map(|i| char::from(b'a' + i as u8).to_string())
            .collect();
        PhoneTable::new(names)
    }

    pub fn n_base(&self) -> usize {
        self.base_names.len()
    }

    /// Ids: 0 = SIL, 1 = null condition, then 4 positioned ids per base.
    pub fn vocab_size(&self) -> usize {
        2 + 4 * self.base_names.len()
    }

    pub const SIL_ID: usize = 0;
    pub const NULL_ID: usize = 1;

    pub fn encode(&self, phone: Phone) -> Result<usize> {
        match phone {
            Phone::Sil => Ok(Self::SIL_ID),
            Phone::Null => Ok(Self::NULL_ID),
            Phone::Pos(b, p) => {
                if b as usize >= self.base_names.len() {
                    return Err(Error::UnknownPhone {
                        id: b as usize,
                        vocab: self.base_names.len(),
                    });
                }
                Ok(2 + 4 * b as usize + p.index())
            }
            Phone::Base(b) => Err(Error::invalid(format!(
                "phone {b} lacks a word-position postfix and has no model id"
            ))),
        }
    }

    pub fn decode(&self, id: usize) -> Result<Phone> {
        match id {
            Self::SIL_ID => Ok(Phone::Sil),
            Self::NULL_ID => Ok(Phone::Null),
            _ => {
                let rest = id - 2;
                let base = rest / 4;
                if base >= self.base_names.len() {
                    return Err(Error::UnknownPhone {
                        id,
                        vocab: self.vocab_size(),
                    });
                }
                Ok(Phone::Pos(
                    base as u8,
                    WordPosition::from_index(rest % 4).expect("mod 4"),
                ))
            }
        }
    }

    pub fn encode_seq(&self, phones: &[Phone]) -> Result<Vec<usize>> {
        phones.iter().map(|&p| self.encode(p)).collect()
    }

    pub fn name(&self, phone: Phone) -> String {
        match phone {
            Phone::Sil => "SIL".into(),
            Phone::Null => "<null>".into(),
            Phone::Base(b) => self.base_names[b as usize].clone(),
            Phone::Pos(b, p) => format!("{}{}", self.base_names[b as usize], p.postfix()),
        }
    }

    pub fn base_names(&self) -> &[String] {
        &self.base_names
    }

    /// Look up a base phone by name.
    pub fn base_by_name(&self, name: &str) -> Option<u8> {
        self.base_names
            .iter()
            .position(|n| n == name)
            .map(|i| i as u8)
    }
}

/// Repeat each element of `y` by the matching count in `l`.
pub fn rep<T: Clone>(y: &[T], l: &[u32]) -> Result<Vec<T>> {
    if y.len() != l.len() {
        return Err(Error::invalid(format!(
            "rep: {} phones vs {} durations",
            y.len(),
            l.len()
        )));
    }
    let total: usize = l.iter().map(|&d| d as usize).sum();
    let mut out = Vec::with_capacity(total);
    for (item, &count) in y.iter().zip(l) {
        for _ in 0..count {
            out.push(item.clone());
        }
    }
    Ok(out)
}

/// Concatenate two sequences.
pub fn cat<T: Clone>(a: &[T], b: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// Phone sequence, per-phone frame counts, and word grouping.
///
/// `words` holds index ranges into `y`; silences live outside every range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneAlignment {
    pub y: Vec<Phone>,
    pub l: Vec<u32>,
    pub words: Vec<Range<usize>>,
}

impl PhoneAlignment {
    pub fn total_frames(&self) -> usize {
        self.l.iter().map(|&d| d as usize).sum()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Frame-level transcript z = rep(y, l).
    pub fn frame_transcript(&self) -> Result<Vec<Phone>> {
        rep(&self.y, &self.l)
    }

    /// Build from a plain aligned transcript: insert ghost silences at
    /// word boundaries, then apply word-position postfixes, then validate.
    /// `word_lens` gives the phone count of each word in order.
    pub fn from_plain(y: &[Phone], l: &[u32], word_lens: &[usize]) -> Result<Self> {
        let (y, l, words) = insert_ghost_silence(y, l, word_lens)?;
        let y = word_position_postfix(&y, &words)?;
        let alignment = PhoneAlignment { y, l, words };
        alignment.validate()?;
        Ok(alignment)
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.len() != self.l.len() {
            return Err(Error::Alignment(format!(
                "{} phones vs {} durations",
                self.y.len(),
                self.l.len()
            )));
        }
        let mut covered = vec![false; self.y.len()];
        let mut prev_end = 0usize;
        for (w, range) in self.words.iter().enumerate() {
            if range.start >= range.end || range.end > self.y.len() {
                return Err(Error::Alignment(format!("word {w} has bad range {range:?}")));
            }
            if range.start < prev_end {
                return Err(Error::Alignment(format!("word {w} overlaps its predecessor")));
            }
            prev_end = range.end;
            let wlen = range.end - range.start;
            for (offset, i) in range.clone().enumerate() {
                covered[i] = true;
                let expected = if wlen == 1 {
                    WordPosition::Singleton
                } else if offset == 0 {
                    WordPosition::Begin
                } else if offset == wlen - 1 {
                    WordPosition::End
                } else {
                    WordPosition::Interior
                };
                match self.y[i] {
                    Phone::Pos(_, p) if p == expected => {}
                    other => {
                        return Err(Error::Alignment(format!(
                            "phone {i} in word {w} should carry {expected:?}, found {other:?}"
                        )));
                    }
                }
            }
        }
        for (i, &phone) in self.y.iter().enumerate() {
            if covered[i] {
                continue;
            }
            if !phone.is_sil() {
                return Err(Error::Alignment(format!(
                    "non-silence phone {i} ({phone:?}) outside every word"
                )));
            }
        }
        for (i, (&phone, &dur)) in self.y.iter().zip(&self.l).enumerate() {
            if dur == 0 && !phone.is_sil() {
                return Err(Error::Alignment(format!(
                    "zero duration at non-silence phone {i}"
                )));
            }
        }
        Ok(())
    }
}

/// Insert a zero-length SIL at every inter-word boundary lacking one and
/// ensure both utterance ends carry a SIL (inserted with zero frames when
/// absent). Word ranges over the result are returned alongside.
///
/// Input durations must be positive and silences may only occur between
/// words or at the ends.
pub fn insert_ghost_silence(
    y: &[Phone],
    l: &[u32],
    word_lens: &[usize],
) -> Result<(Vec<Phone>, Vec<u32>, Vec<Range<usize>>)> {
    if y.len() != l.len() {
        return Err(Error::Alignment(format!(
            "{} phones vs {} durations",
            y.len(),
            l.len()
        )));
    }
    if let Some(i) = l.iter().position(|&d| d == 0) {
        return Err(Error::Alignment(format!(
            "input to ghost-silence insertion already has zero duration at {i}"
        )));
    }
    let total_words: usize = word_lens.len();
    let mut out_y: Vec<Phone> = Vec::with_capacity(y.len() + total_words + 2);
    let mut out_l: Vec<u32> = Vec::with_capacity(out_y.capacity());
    let mut words: Vec<Range<usize>> = Vec::with_capacity(total_words);

    let mut idx = 0usize;
    let push_sil_if_missing = |out_y: &mut Vec<Phone>, out_l: &mut Vec<u32>| {
        if out_y.last().map(|p| p.is_sil()) != Some(true) {
            out_y.push(Phone::Sil);
            out_l.push(0);
        }
    };

    // Leading silences.
    while idx < y.len() && y[idx].is_sil() {
        out_y.push(y[idx]);
        out_l.push(l[idx]);
        idx += 1;
    }
    push_sil_if_missing(&mut out_y, &mut out_l);

    for (w, &wlen) in word_lens.iter().enumerate() {
        if wlen == 0 {
            return Err(Error::Alignment(format!("word {w} is empty")));
        }
        let start = out_y.len();
        for k in 0..wlen {
            if idx >= y.len() {
                return Err(Error::Alignment(format!(
                    "word {w} runs past the end of the transcript"
                )));
            }
            if y[idx].is_sil() {
                return Err(Error::Alignment(format!(
                    "silence inside word {w} at phone {k}"
                )));
            }
            out_y.push(y[idx]);
            out_l.push(l[idx]);
            idx += 1;
        }
        words.push(start..out_y.len());
        // Boundary after the word: copy real silences, else ghost.
        while idx < y.len() && y[idx].is_sil() {
            out_y.push(y[idx]);
            out_l.push(l[idx]);
            idx += 1;
        }
        push_sil_if_missing(&mut out_y, &mut out_l);
    }
    if idx != y.len() {
        return Err(Error::Alignment(format!(
            "{} trailing phones not covered by any word",
            y.len() - idx
        )));
    }
    Ok((out_y, out_l, words))
}

/// Apply word-position postfixes: _B first, _I interior, _E last,
/// _S singleton; silences pass through unchanged.
pub fn word_position_postfix(y: &[Phone], words: &[Range<usize>]) -> Result<Vec<Phone>> {
    let mut out = y.to_vec();
    for (w, range) in words.iter().enumerate() {
        if range.start >= range.end || range.end > y.len() {
            return Err(Error::Alignment(format!("word {w} has bad range {range:?}")));
        }
        let wlen = range.end - range.start;
        for (offset, i) in range.clone().enumerate() {
            let pos = if wlen == 1 {
                WordPosition::Singleton
            } else if offset == 0 {
                WordPosition::Begin
            } else if offset == wlen - 1 {
                WordPosition::End
            } else {
                WordPosition::Interior
            };
            out[i] = match y[i] {
                Phone::Base(b) => Phone::Pos(b, pos),
                Phone::Pos(b, _) => Phone::Pos(b, pos),
                other => {
                    return Err(Error::Alignment(format!(
                        "cannot postfix {other:?} inside word {w}"
                    )));
                }
            };
        }
    }
    Ok(out)
}

/// Frame mask and phone mask tied by m = rep(m_phone, l); no phone is
/// partially masked.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub m: Vec<u8>,
    pub m_phone: Vec<u8>,
}

impl MaskPair {
    pub fn from_phone_mask(m_phone: Vec<u8>, l: &[u32]) -> Result<Self> {
        let m = rep(&m_phone, l)?;
        Ok(MaskPair { m, m_phone })
    }

    pub fn full(l: &[u32]) -> Self {
        let m_phone = vec![1u8; l.len()];
        let m = rep(&m_phone, l).expect("lengths match");
        MaskPair { m, m_phone }
    }

    pub fn masked_frames(&self) -> usize {
        self.m.iter().filter(|&&v| v == 1).count()
    }

    pub fn masked_phones(&self) -> usize {
        self.m_phone.iter().filter(|&&v| v == 1).count()
    }

    pub fn validate(&self, l: &[u32]) -> Result<()> {
        let expect = rep(&self.m_phone, l)?;
        if expect != self.m {
            return Err(Error::Alignment(
                "frame mask disagrees with rep(phone mask, durations)".into(),
            ));
        }
        Ok(())
    }
}

/// Which masking policy to sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Audio,
    Duration,
}

/// Mask-sampling parameters: whole-sequence probability and the segment
/// coverage range in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskPolicy {
    pub p_drop: f64,
    pub r_lo: f64,
    pub r_hi: f64,
}

impl MaskPolicy {
    pub fn audio_default() -> Self {
        MaskPolicy {
            p_drop: 0.3,
            r_lo: 70.0,
            r_hi: 100.0,
        }
    }

    pub fn duration_default() -> Self {
        MaskPolicy {
            p_drop: 0.2,
            r_lo: 10.0,
            r_hi: 100.0,
        }
    }
}

/// Training mask sampler at the default policies: with probability p_drop
/// the whole sequence is masked; otherwise one contiguous phone-aligned
/// segment covering r% of the sequence is masked, r uniform in [70,100]
/// for audio (frame coverage) and [10,100] for duration (phone coverage).
pub fn sample_training_mask(
    alignment: &PhoneAlignment,
    kind: MaskKind,
    rng: &mut Rng,
) -> Result<MaskPair> {
    let policy = match kind {
        MaskKind::Audio => MaskPolicy::audio_default(),
        MaskKind::Duration => MaskPolicy::duration_default(),
    };
    sample_training_mask_with(alignment, kind, &policy, rng)
}

/// Mask sampler with explicit policy. Segment starts are uniform over the
/// positions from which the target coverage is reachable.
pub fn sample_training_mask_with(
    alignment: &PhoneAlignment,
    kind: MaskKind,
    policy: &MaskPolicy,
    rng: &mut Rng,
) -> Result<MaskPair> {
    let m_len = alignment.len();
    if m_len == 0 {
        return Err(Error::Alignment("cannot mask an empty alignment".into()));
    }
    if rng.bernoulli(policy.p_drop) {
        return Ok(MaskPair::full(&alignment.l));
    }
    let r = rng.uniform_in(policy.r_lo, policy.r_hi);

    // Per-phone weights: frames for audio coverage, count for duration.
    let weights: Vec<usize> = match kind {
        MaskKind::Audio => alignment.l.iter().map(|&d| d as usize).collect(),
        MaskKind::Duration => vec![1; m_len],
    };
    let total: usize = weights.iter().sum();
    let target = (((r / 100.0) * total as f64).ceil() as usize).clamp(1, total);

    // Suffix sums locate the valid starts.
    let mut suffix = vec![0usize; m_len + 1];
    for i in (0..m_len).rev() {
        suffix[i] = suffix[i + 1] + weights[i];
    }
    let valid_starts: Vec<usize> = (0..m_len).filter(|&s| suffix[s] >= target).collect();
    let start = valid_starts[rng.below(valid_starts.len())];
    let mut end = start;
    let mut covered = 0usize;
    while covered < target {
        covered += weights[end];
        end += 1;
    }
    let mut m_phone = vec![0u8; m_len];
    m_phone[start..end].iter_mut().for_each(|v| *v = 1);
    MaskPair::from_phone_mask(m_phone, &alignment.l)
}

/// x_ctx = (1 - m) * x: exact copy on unmasked frames, zero rows on
/// masked frames.
pub fn build_context(x: &Array, m: &[u8]) -> Result<Array> {
    if x.rows() != m.len() {
        return Err(Error::invalid(format!(
            "context mask length {} vs {} frames",
            m.len(),
            x.rows()
        )));
    }
    let mut out = x.clone();
    for (i, &mi) in m.iter().enumerate() {
        if mi == 1 {
            out.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(out)
}

/// Clamp leading and trailing SIL durations to `max_frames`.
pub fn trim_end_silences(y: &[Phone], l: &mut [u32], max_frames: u32) {
    for i in 0..y.len() {
        if !y[i].is_sil() {
            break;
        }
        l[i] = l[i].min(max_frames);
    }
    for i in (0..y.len()).rev() {
        if !y[i].is_sil() {
            break;
        }
        l[i] = l[i].min(max_frames);
    }
}
