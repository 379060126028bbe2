//! Embedding dataset model, file formats and the synthetic open-set generator.
//!
//! Datasets are flat lists of labeled feature vectors. Two interchange
//! formats are supported:
//!
//! * OSEF binary: magic `OSEF`, little-endian `u32` version (=1), `u32`
//!   dimension, `u64` record count, then per record an `i32` label followed
//!   by `dim` IEEE-754 binary32 values. Labels: `>= 0` known identity id,
//!   `-1` negative, `-2` unknown, `-3` background.
//! * CSV: header `label,f0,...,f{d-1}`, one record per line, same integer
//!   label encoding.

use crate::error::{Error, Result};
use crate::rng::Rng;
use std::path::Path;

/// Role of a sample in the open-set protocol.
///
/// `Known` samples carry a gallery identity id. `Negative` samples are
/// non-enrolled identities seen during training; `Unknown` samples are
/// non-enrolled identities seen only at probe time. `Background` marks
/// detector misfires, pooled with unknowns during evaluation but reported
/// separately in histograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassLabel {
    Known(u32),
    Negative,
    Unknown,
    Background,
}

/// Label collapsed to its reporting group (known ids merge into one group).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelGroup {
    Known,
    Negative,
    Unknown,
    Background,
}

impl LabelGroup {
    pub const ALL: [LabelGroup; 4] = [
        LabelGroup::Known,
        LabelGroup::Negative,
        LabelGroup::Unknown,
        LabelGroup::Background,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LabelGroup::Known => "known",
            LabelGroup::Negative => "negative",
            LabelGroup::Unknown => "unknown",
            LabelGroup::Background => "background",
        }
    }
}

impl ClassLabel {
    pub fn encode(self) -> i32 {
        match self {
            ClassLabel::Known(id) => id as i32,
            ClassLabel::Negative => -1,
            ClassLabel::Unknown => -2,
            ClassLabel::Background => -3,
        }
    }

    pub fn decode(raw: i32) -> Result<Self> {
        match raw {
            id if id >= 0 => Ok(ClassLabel::Known(id as u32)),
            -1 => Ok(ClassLabel::Negative),
            -2 => Ok(ClassLabel::Unknown),
            -3 => Ok(ClassLabel::Background),
            other => Err(Error::Data(format!("invalid label code {other}"))),
        }
    }

    pub fn group(self) -> LabelGroup {
        match self {
            ClassLabel::Known(_) => LabelGroup::Known,
            ClassLabel::Negative => LabelGroup::Negative,
            ClassLabel::Unknown => LabelGroup::Unknown,
            ClassLabel::Background => LabelGroup::Background,
        }
    }

    pub fn is_known(self) -> bool {
        matches!(self, ClassLabel::Known(_))
    }

    /// Unknown or background: samples that must be rejected at probe time.
    pub fn is_unknown_like(self) -> bool {
        matches!(self, ClassLabel::Unknown | ClassLabel::Background)
    }
}

/// One labeled embedding vector. Coordinates are stored as `f32`, matching
/// the file formats bit for bit; arithmetic promotes to `f64` downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub label: ClassLabel,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(label: ClassLabel, vector: Vec<f32>) -> Self {
        EmbeddingRecord { label, vector }
    }

    pub fn vector_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&v| v as f64).collect()
    }
}

/// An ordered embedding dataset with a consistent dimension and dense known
/// identity ids `0..num_known`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub num_known: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl Dataset {
    /// Builds a dataset and validates all invariants: positive dimension,
    /// uniform record length, finite entries, dense known ids.
    pub fn new(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let num_known = validate_records(dim, &records)?;
        Ok(Dataset {
            dim,
            num_known,
            records,
        })
    }

    /// Re-checks the invariants; `num_known` must match the records.
    pub fn validate(&self) -> Result<()> {
        let num_known = validate_records(self.dim, &self.records)?;
        if num_known != self.num_known {
            return Err(Error::Data(format!(
                "num_known is {} but records imply {}",
                self.num_known, num_known
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count_group(&self, group: LabelGroup) -> usize {
        self.records.iter().filter(|r| r.label.group() == group).count()
    }
}

fn validate_records(dim: usize, records: &[EmbeddingRecord]) -> Result<usize> {
    if dim == 0 {
        return Err(Error::Data("dataset dimension must be positive".into()));
    }
    let mut max_id: Option<u32> = None;
    for (idx, rec) in records.iter().enumerate() {
        if rec.vector.len() != dim {
            return Err(Error::Data(format!(
                "record {idx} has dimension {} but dataset dimension is {dim}",
                rec.vector.len()
            )));
        }
        if rec.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "record {idx} contains a non-finite value"
            )));
        }
        if let ClassLabel::Known(id) = rec.label {
            max_id = Some(max_id.map_or(id, |m| m.max(id)));
        }
    }
    let num_known = max_id.map_or(0, |m| m as usize + 1);
    if num_known > 0 {
        let mut seen = vec![false; num_known];
        for rec in records {
            if let ClassLabel::Known(id) = rec.label {
                seen[id as usize] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!(
                "known ids are not dense: id {missing} has no records but id {} exists",
                num_known - 1
            )));
        }
    }
    Ok(num_known)
}

/// On-disk representations understood by [`read_embeddings`] and
/// [`write_embeddings`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Binary,
    Csv,
}

const OSEF_MAGIC: [u8; 4] = *b"OSEF";
const OSEF_VERSION: u32 = 1;
const OSEF_HEADER_LEN: usize = 20;

/// Serializes a dataset into OSEF bytes. The dataset must be valid.
pub fn encode_osef(dataset: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(OSEF_HEADER_LEN + dataset.len() * (4 + 4 * dataset.dim));
    out.extend_from_slice(&OSEF_MAGIC);
    out.extend_from_slice(&OSEF_VERSION.to_le_bytes());
    out.extend_from_slice(&(dataset.dim as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for rec in &dataset.records {
        out.extend_from_slice(&rec.label.encode().to_le_bytes());
        for &v in &rec.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes OSEF bytes, reporting the byte offset of any structural fault.
pub fn decode_osef(bytes: &[u8], path: &str) -> Result<Dataset> {
    if bytes.len() < OSEF_HEADER_LEN {
        return Err(Error::format(
            path,
            format!("truncated header: {} bytes, need {OSEF_HEADER_LEN}", bytes.len()),
        ));
    }
    if bytes[0..4] != OSEF_MAGIC {
        return Err(Error::format(path, "bad magic at byte offset 0, expected \"OSEF\""));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != OSEF_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version} at byte offset 4"),
        ));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(Error::format(path, "dimension 0 at byte offset 8"));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let record_len = 4 + 4 * dim;
    let expected = count
        .checked_mul(record_len)
        .and_then(|v| v.checked_add(OSEF_HEADER_LEN))
        .ok_or_else(|| Error::format(path, "record count in header overflows the file size"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "file is {} bytes but header implies {expected} (mismatch at byte offset {})",
                bytes.len(),
                bytes.len().min(expected)
            ),
        ));
    }
    let mut records = Vec::with_capacity(count);
    for idx in 0..count {
        let base = OSEF_HEADER_LEN + idx * record_len;
        let raw = i32::from_le_bytes(bytes[base..base + 4].try_into().unwrap());
        let label = ClassLabel::decode(raw).map_err(|_| {
            Error::format(path, format!("invalid label code {raw} at byte offset {base}"))
        })?;
        let mut vector = Vec::with_capacity(dim);
        for k in 0..dim {
            let off = base + 4 + 4 * k;
            vector.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "record {idx} in {path} contains a non-finite value"
            )));
        }
        records.push(EmbeddingRecord::new(label, vector));
    }
    Dataset::new(dim, records)
}

fn csv_header(dim: usize) -> String {
    let mut header = String::from("label");
    for k in 0..dim {
        header.push_str(",f");
        header.push_str(&k.to_string());
    }
    header
}

/// Serializes a dataset as CSV text. Floats use shortest round-trip decimal
/// formatting, so re-reading recovers the exact binary32 values.
pub fn encode_csv(dataset: &Dataset) -> String {
    let mut out = csv_header(dataset.dim);
    out.push('\n');
    for rec in &dataset.records {
        out.push_str(&rec.label.encode().to_string());
        for &v in &rec.vector {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Parses CSV text, reporting the 1-based line of any structural fault.
pub fn decode_csv(text: &str, path: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty file, expected header at line 1"))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() < 2 || fields[0] != "label" {
        return Err(Error::format(path, "line 1: header must be \"label,f0,...\""));
    }
    let dim = fields.len() - 1;
    for (k, name) in fields[1..].iter().enumerate() {
        if *name != format!("f{k}") {
            return Err(Error::format(
                path,
                format!("line 1: column {} named {name:?}, expected \"f{k}\"", k + 2),
            ));
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != dim + 1 {
            return Err(Error::format(
                path,
                format!("line {lineno}: {} fields, expected {}", cells.len(), dim + 1),
            ));
        }
        let raw: i32 = cells[0]
            .trim()
            .parse()
            .map_err(|_| Error::format(path, format!("line {lineno}: bad label {:?}", cells[0])))?;
        let label = ClassLabel::decode(raw)
            .map_err(|_| Error::format(path, format!("line {lineno}: invalid label code {raw}")))?;
        let mut vector = Vec::with_capacity(dim);
        for cell in &cells[1..] {
            let v: f32 = cell.trim().parse().map_err(|_| {
                Error::format(path, format!("line {lineno}: bad float {cell:?}"))
            })?;
            vector.push(v);
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "record {} in {path} (line {lineno}) contains a non-finite value",
                records.len()
            )));
        }
        records.push(EmbeddingRecord::new(label, vector));
    }
    Dataset::new(dim, records)
}

/// Reads a dataset file in the given format. Record order is preserved.
pub fn read_embeddings(path: impl AsRef<Path>, format: FileFormat) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(&name, e))?;
    match format {
        FileFormat::Binary => decode_osef(&bytes, &name),
        FileFormat::Csv => {
            let text = String::from_utf8(bytes)
                .map_err(|e| Error::format(&name, format!("not valid UTF-8: {e}")))?;
            decode_csv(&text, &name)
        }
    }
}

/// Writes a dataset file. The dataset is validated first; nothing is written
/// if it is invalid.
pub fn write_embeddings(dataset: &Dataset, path: impl AsRef<Path>, format: FileFormat) -> Result<()> {
    dataset.validate()?;
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = match format {
        FileFormat::Binary => encode_osef(dataset),
        FileFormat::Csv => encode_csv(dataset).into_bytes(),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(&name, e))
}

/// Parameters of the synthetic open-set benchmark generator.
///
/// Known classes are isotropic Gaussian blobs (standard deviation `spread`)
/// whose means sit on a hypersphere shell of radius `4 * spread`. Negative
/// classes sit on a disjoint shell of radius `8 * spread` and unknown classes
/// on a third shell of radius `6 * spread`, so negatives are related to but
/// not identical with the unknowns encountered at probe time.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_known: usize,
    pub per_class: usize,
    pub dim: usize,
    pub negative_classes: usize,
    pub unknown_classes: usize,
    pub spread: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, num_known: usize, per_class: usize, dim: usize) -> Self {
        SynthConfig {
            seed,
            num_known,
            per_class,
            dim,
            negative_classes: 4,
            unknown_classes: 4,
            spread: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_known < 2 {
            return Err(Error::Config("num_known must be at least 2".into()));
        }
        if self.per_class < 4 {
            return Err(Error::Config("per_class must be at least 4".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config("dim must be at least 2".into()));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::Config("spread must be positive and finite".into()));
        }
        Ok(())
    }
}

// Stream tags: class means per partition, then per-class sample streams.
const STREAM_KNOWN_MEANS: u64 = 1;
const STREAM_NEGATIVE_MEANS: u64 = 2;
const STREAM_UNKNOWN_MEANS: u64 = 3;
const STREAM_SAMPLES: u64 = 0x1000;
const STREAM_PROBE_SAMPLES: u64 = 0x2000;

fn unit_direction(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws `count` unit directions spread out over the sphere: each direction
/// is the best of up to `attempts` candidates, keeping the one with the
/// smallest maximum cosine against the directions already placed. A candidate
/// at or below `target_cos` is accepted immediately. Always terminates, even
/// when the geometry cannot honor `target_cos` (low dimensions, many classes).
fn spread_directions(
    rng: &mut Rng,
    count: usize,
    dim: usize,
    target_cos: f64,
    attempts: usize,
) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..attempts {
            let cand = unit_direction(rng, dim);
            let max_cos = dirs
                .iter()
                .map(|d| dot(d, &cand))
                .fold(f64::NEG_INFINITY, f64::max);
            let better = best.as_ref().is_none_or(|(c, _)| max_cos < *c);
            if better {
                best = Some((max_cos, cand));
            }
            if max_cos <= target_cos {
                break;
            }
        }
        dirs.push(best.expect("attempts >= 1").1);
    }
    dirs
}

fn scale_to_shell(dirs: Vec<Vec<f64>>, radius: f64) -> Vec<Vec<f64>> {
    dirs.into_iter()
        .map(|d| d.into_iter().map(|x| x * radius).collect())
        .collect()
}

/// Unit direction a moderate angle away from `anchor`: the anchor plus a
/// random unit jitter scaled by `weight`, renormalized.
fn perturbed_direction(rng: &mut Rng, anchor: &[f64], weight: f64, dim: usize) -> Vec<f64> {
    let jitter = unit_direction(rng, dim);
    let mixed: Vec<f64> = anchor
        .iter()
        .zip(&jitter)
        .map(|(a, j)| a + weight * j)
        .collect();
    let norm = mixed.iter().map(|x| x * x).sum::<f64>().sqrt();
    mixed.into_iter().map(|x| x / norm).collect()
}

/// Draws one blob sample and quantizes it to `f32` so in-memory data matches
/// the file formats exactly.
fn blob_sample(rng: &mut Rng, mean: &[f64], spread: f64) -> Vec<f32> {
    mean.iter().map(|&m| (m + spread * rng.gaussian()) as f32).collect()
}

/// Generates `(train, val, probe)` datasets. Pure function of the config.
///
/// Splits: known samples go 80/20 to train/val round-robin within each class
/// (every 5th sample, starting with the first, is validation). Negative
/// classes are split between train and val by whole class (every 5th class is
/// validation), keeping the two negative pools identity-disjoint. The probe
/// set holds fresh known samples (`ceil(per_class / 2)` per identity) plus
/// `per_class` samples from each unknown class.
pub fn synth_openset(config: &SynthConfig) -> Result<(Dataset, Dataset, Dataset)> {
    config.validate()?;
    let d = config.dim;
    let s = config.spread;
    // Known class centers repel each other so the gallery is separable.
    // Negative centers spread over their own shell. Unknown centers sit on a
    // third shell, each rotated a moderate angle off a known direction: close
    // enough to confuse a negative-free classifier, far enough that rejection
    // learned from the negative shell can transfer.
    let mut rng_known = Rng::with_stream(config.seed, STREAM_KNOWN_MEANS);
    let known_dirs = spread_directions(&mut rng_known, config.num_known, d, 0.25, 200);
    let mut rng_neg = Rng::with_stream(config.seed, STREAM_NEGATIVE_MEANS);
    let negative_dirs: Vec<Vec<f64>> = (0..config.negative_classes)
        .map(|j| perturbed_direction(&mut rng_neg, &known_dirs[j % known_dirs.len()], 0.8, d))
        .collect();
    let mut rng_unk = Rng::with_stream(config.seed, STREAM_UNKNOWN_MEANS);
    let unknown_dirs: Vec<Vec<f64>> = (0..config.unknown_classes)
        .map(|q| perturbed_direction(&mut rng_unk, &known_dirs[q % known_dirs.len()], 0.8, d))
        .collect();

    let known_means = scale_to_shell(known_dirs, 4.0 * s);
    let negative_means = scale_to_shell(negative_dirs, 8.0 * s);
    let unknown_means = scale_to_shell(unknown_dirs, 6.0 * s);

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut probe = Vec::new();

    for (g, mean) in known_means.iter().enumerate() {
        let mut rng = Rng::with_stream(config.seed, STREAM_SAMPLES + g as u64);
        for i in 0..config.per_class {
            let rec = EmbeddingRecord::new(ClassLabel::Known(g as u32), blob_sample(&mut rng, mean, s));
            if i % 5 == 0 {
                val.push(rec);
            } else {
                train.push(rec);
            }
        }
    }
    for (j, mean) in negative_means.iter().enumerate() {
        let class_index = config.num_known + j;
        let mut rng = Rng::with_stream(config.seed, STREAM_SAMPLES + class_index as u64);
        let to_val = j % 5 == 4;
        for _ in 0..config.per_class {
            let rec = EmbeddingRecord::new(ClassLabel::Negative, blob_sample(&mut rng, mean, s));
            if to_val {
                val.push(rec);
            } else {
                train.push(rec);
            }
        }
    }
    for (g, mean) in known_means.iter().enumerate() {
        let mut rng = Rng::with_stream(config.seed, STREAM_PROBE_SAMPLES + g as u64);
        for _ in 0..config.per_class.div_ceil(2) {
            probe.push(EmbeddingRecord::new(
                ClassLabel::Known(g as u32),
                blob_sample(&mut rng, mean, s),
            ));
        }
    }
    for (q, mean) in unknown_means.iter().enumerate() {
        let class_index = config.num_known + config.negative_classes + q;
        let mut rng = Rng::with_stream(config.seed, STREAM_SAMPLES + class_index as u64);
        for _ in 0..config.per_class {
            probe.push(EmbeddingRecord::new(
                ClassLabel::Unknown,
                blob_sample(&mut rng, mean, s),
            ));
        }
    }

    Ok((
        Dataset::new(d, train)?,
        Dataset::new(d, val)?,
        Dataset::new(d, probe)?,
    ))
}
