//! Dataset generation and persistence.
//!
//! Files are line-delimited: a magic/version line, one JSON header with
//! the config echo and the phone name table, then one JSON record per
//! line with frame payloads as little-endian f64 hex. Loading re-checks
//! every alignment invariant.

use crate::array::Array;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::seq::{PhoneAlignment, PhoneTable};
use crate::synth::{estimate_normalization, normalize_features, ToyProcessSpec};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

pub const DATASET_MAGIC: &str = "#flowfill-dataset v1";

/// Ground-truth latents, present only in oracle splits.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OracleInfo {
    pub style: Vec<f64>,
    pub rate: f64,
    pub cluster: u8,
}

#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub id: String,
    /// Normalized frames, [N, F].
    pub frames: Array,
    pub alignment: PhoneAlignment,
    pub family: u8,
    pub oracle: Option<OracleInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub config: serde_json::Value,
    pub phone_table: PhoneTable,
    pub norm_mean: f64,
    pub norm_std: f64,
    pub frame_rate_hz: f64,
    pub n_records: usize,
    pub oracle: bool,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn norm(&self) -> (f64, f64) {
        (self.header.norm_mean, self.header.norm_std)
    }

    pub fn families(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.records.iter().map(|r| r.family).collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Generate `n` utterances from the toy process, estimate the global
/// normalization on up to 30k frames, and return normalized records with
/// oracle fields attached. Record i draws from stream i of `seed`, so
/// records are independent of generation order.
pub fn generate_dataset(
    spec: &ToyProcessSpec,
    n: usize,
    seed: u64,
    oracle: bool,
    config_echo: serde_json::Value,
) -> Result<Dataset> {
    spec.validate()?;
    let table = spec.phone_table()?;
    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = Rng::stream(seed, i as u64);
        raw.push(spec.sample_utterance(&mut rng)?);
    }
    let frame_refs: Vec<&Array> = raw.iter().map(|u| &u.frames).collect();
    let (mean, std) = estimate_normalization(&frame_refs, 30_000)?;
    let records = raw
        .into_iter()
        .enumerate()
        .map(|(i, utt)| {
            Ok(DatasetRecord {
                id: format!("utt-{i:06}"),
                frames: normalize_features(&utt.frames, mean, std)?,
                alignment: utt.alignment,
                family: utt.family,
                oracle: oracle.then(|| OracleInfo {
                    style: utt.style,
                    rate: utt.rate,
                    cluster: utt.cluster,
                }),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            config: config_echo,
            phone_table: table,
            norm_mean: mean,
            norm_std: std,
            frame_rate_hz: spec.frame_rate_hz,
            n_records: records.len(),
            oracle,
        },
        records,
    })
}

/// Convenience: generate from a full run config echo.
pub fn generate_from_config(config: &RunConfig, n: usize, oracle: bool) -> Result<Dataset> {
    let mut echo = config.clone();
    let ds = generate_dataset(&config.process, n, config.seed, oracle, serde_json::Value::Null)?;
    echo.normalization = Some((ds.header.norm_mean, ds.header.norm_std));
    let mut ds = ds;
    ds.header.config = echo.echo_json();
    Ok(ds)
}

#[derive(Serialize, Deserialize)]
struct RecordWire {
    id: String,
    shape: Vec<usize>,
    frames_hex: String,
    y: Vec<usize>,
    l: Vec<i64>,
    words: Vec<(usize, usize)>,
    family: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleInfo>,
}

pub fn encode_f64_hex(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 16);
    for v in values {
        for byte in v.to_le_bytes() {
            out.push_str(&format!("{byte:02x}"));
        }
    }
    out
}

pub fn decode_f64_hex(hex: &str) -> Result<Vec<f64>> {
    if hex.len() % 16 != 0 {
        return Err(Error::invalid("hex payload not a multiple of 16 chars"));
    }
    let bytes = hex.as_bytes();
    let mut out = Vec::with_capacity(hex.len() / 16);
    let nibble = |c: u8| -> Result<u8> {
        match c {
            b'0'..=b'9' => Ok(c - b'0'),
            b'a'..=b'f' => Ok(c - b'a' + 10),
            b'A'..=b'F' => Ok(c - b'A' + 10),
            _ => Err(Error::invalid("bad hex digit")),
        }
    };
    for chunk in bytes.chunks(16) {
        let mut raw = [0u8; 8];
        for (i, pair) in chunk.chunks(2).enumerate() {
            raw[i] = (nibble(pair[0])? << 4) | nibble(pair[1])?;
        }
        out.push(f64::from_le_bytes(raw));
    }
    Ok(out)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{DATASET_MAGIC}")?;
    writeln!(out, "{}", serde_json::to_string(&dataset.header)?)?;
    for record in &dataset.records {
        let wire = RecordWire {
            id: record.id.clone(),
            shape: record.frames.shape().to_vec(),
            frames_hex: encode_f64_hex(record.frames.data()),
            y: dataset.header.phone_table.encode_seq(&record.alignment.y)?,
            l: record.alignment.l.iter().map(|&d| d as i64).collect(),
            words: record
                .alignment
                .words
                .iter()
                .map(|r| (r.start, r.end))
                .collect(),
            family: record.family,
            oracle: record.oracle.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&wire)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let fmt = |msg: &str| Error::Format {
        path: path.display().to_string(),
        msg: msg.to_string(),
    };
    let magic = lines.next().ok_or_else(|| fmt("empty file"))??;
    if magic.trim() != DATASET_MAGIC {
        return Err(fmt(&format!("bad magic line {magic:?}")));
    }
    let header_line = lines.next().ok_or_else(|| fmt("missing header"))??;
    let header: DatasetHeader = serde_json::from_str(&header_line)?;
    let mut records = Vec::with_capacity(header.n_records);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: RecordWire = serde_json::from_str(&line)?;
        let data = decode_f64_hex(&wire.frames_hex)?;
        let frames = Array::new(wire.shape, data)?;
        let mut durations = Vec::with_capacity(wire.l.len());
        for &d in &wire.l {
            if d < 0 {
                return Err(fmt(&format!("record {}: negative duration {d}", wire.id)));
            }
            durations.push(d as u32);
        }
        let y = wire
            .y
            .iter()
            .map(|&id| header.phone_table.decode(id))
            .collect::<Result<Vec<_>>>()?;
        let words: Vec<Range<usize>> = wire.words.iter().map(|&(s, e)| s..e).collect();
        let alignment = PhoneAlignment {
            y,
            l: durations,
            words,
        };
        alignment.validate()?;
        if alignment.total_frames() != frames.rows() {
            return Err(fmt(&format!(
                "record {}: duration sum {} != {} frames",
                wire.id,
                alignment.total_frames(),
                frames.rows()
            )));
        }
        records.push(DatasetRecord {
            id: wire.id,
            frames,
            alignment,
            family: wire.family,
            oracle: wire.oracle,
        });
    }
    if records.len() != header.n_records {
        return Err(fmt(&format!(
            "header says {} records, found {}",
            header.n_records,
            records.len()
        )));
    }
    Ok(Dataset { header, records })
}
