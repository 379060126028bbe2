//! Identity templates, probe features, cosine scoring and open-set decisions.
//!
//! Enrollment averages the L2-normalized compact features of each identity's
//! samples into one template. Templates are deliberately not re-normalized
//! after averaging; cosine scoring absorbs the scale. A model trained with
//! the garbage variant additionally carries one template built from negative
//! samples, which competes in the argmax and forces rejection when it wins.

use crate::data::{ClassLabel, Dataset, EmbeddingRecord, FileFormat};
use crate::error::{Error, Result};
use crate::net::{forward, AdapterParams};
use crate::util;
use std::path::Path;

/// Norm below which a feature vector is considered degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// One enrolled identity: its template and the number of samples averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub id: u32,
    pub template: Vec<f64>,
    pub sample_count: usize,
}

/// The enrolled gallery. Entry ids are dense `0..entries.len()`.
/// `garbage_template` is present only for garbage-trained models; galleries
/// loaded from disk report a `sample_count` of 1 per entry (the file format
/// does not retain enrollment counts).
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    pub entries: Vec<GalleryEntry>,
    pub garbage_template: Option<Vec<f64>>,
}

impl Gallery {
    pub fn num_known(&self) -> usize {
        self.entries.len()
    }

    pub fn has_garbage(&self) -> bool {
        self.garbage_template.is_some()
    }

    pub fn feature_dim(&self) -> usize {
        self.entries.first().map_or(0, |e| e.template.len())
    }

    /// Persists the gallery as an OSEF dataset: one known record per template
    /// plus a negative-labeled record for the garbage template. Template
    /// coordinates are quantized to binary32 by the format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut records: Vec<EmbeddingRecord> = self
            .entries
            .iter()
            .map(|e| {
                EmbeddingRecord::new(
                    ClassLabel::Known(e.id),
                    e.template.iter().map(|&v| v as f32).collect(),
                )
            })
            .collect();
        if let Some(garbage) = &self.garbage_template {
            records.push(EmbeddingRecord::new(
                ClassLabel::Negative,
                garbage.iter().map(|&v| v as f32).collect(),
            ));
        }
        let dataset = Dataset::new(self.feature_dim().max(1), records)?;
        crate::data::write_embeddings(&dataset, path, FileFormat::Binary)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Gallery> {
        let dataset = crate::data::read_embeddings(path, FileFormat::Binary)?;
        let mut entries: Vec<Option<GalleryEntry>> = vec![None; dataset.num_known];
        let mut garbage_template = None;
        for rec in &dataset.records {
            let template: Vec<f64> = rec.vector_f64();
            match rec.label {
                ClassLabel::Known(id) => {
                    if entries[id as usize].is_some() {
                        return Err(Error::Data(format!("duplicate template for id {id}")));
                    }
                    entries[id as usize] = Some(GalleryEntry {
                        id,
                        template,
                        sample_count: 1,
                    });
                }
                ClassLabel::Negative => {
                    if garbage_template.is_some() {
                        return Err(Error::Data("multiple garbage templates".into()));
                    }
                    garbage_template = Some(template);
                }
                other => {
                    return Err(Error::Data(format!(
                        "gallery file contains a {other:?} record"
                    )))
                }
            }
        }
        let entries: Vec<GalleryEntry> = entries.into_iter().map(|e| e.unwrap()).collect();
        if entries.is_empty() {
            return Err(Error::Data("gallery file holds no templates".into()));
        }
        Ok(Gallery {
            entries,
            garbage_template,
        })
    }
}

/// A probe's compact feature together with its ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFeature {
    pub true_label: ClassLabel,
    pub feature: Vec<f64>,
}

/// Feature source: the adapter's compact layer, or the raw input embeddings
/// (the baseline that skips the adapter entirely).
#[derive(Debug, Clone, Copy)]
pub enum Extractor<'a> {
    Adapter(&'a AdapterParams),
    Baseline,
}

impl Extractor<'_> {
    pub fn extract(&self, record: &EmbeddingRecord) -> ProbeFeature {
        let feature = match self {
            Extractor::Adapter(params) => forward(params, &record.vector_f64()).h2,
            Extractor::Baseline => record.vector_f64(),
        };
        ProbeFeature {
            true_label: record.label,
            feature,
        }
    }

    pub fn extract_all(&self, dataset: &Dataset) -> Vec<ProbeFeature> {
        match self {
            // Forward passes are independent; row order is preserved.
            Extractor::Adapter(_) => {
                util::map_indexed(dataset.len(), |i| self.extract(&dataset.records[i]))
            }
            Extractor::Baseline => dataset.records.iter().map(|r| self.extract(r)).collect(),
        }
    }
}

/// Compact feature of one record under the adapter network: the second
/// hidden layer of the forward pass.
pub fn extract_compact(params: &AdapterParams, record: &EmbeddingRecord) -> ProbeFeature {
    Extractor::Adapter(params).extract(record)
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean of normalized features in fixed input order with Kahan-compensated
/// summation per coordinate.
fn normalized_mean(features: &[&[f64]]) -> Vec<f64> {
    let dim = features[0].len();
    let mut sum = vec![0.0f64; dim];
    let mut comp = vec![0.0f64; dim];
    for f in features {
        let norm = l2_norm(f);
        for (k, &v) in f.iter().enumerate() {
            let y = v / norm - comp[k];
            let t = sum[k] + y;
            comp[k] = (t - sum[k]) - y;
            sum[k] = t;
        }
    }
    let n = features.len() as f64;
    sum.into_iter().map(|v| v / n).collect()
}

/// Builds identity templates from an enrollment dataset.
///
/// Each template is the mean of that identity's normalized compact features.
/// With `include_garbage`, negative records are required and averaged into an
/// extra rejection template the same way. Any degenerate (near-zero) feature
/// aborts enrollment, naming the offending record.
pub fn enroll(extractor: &Extractor, records: &Dataset, include_garbage: bool) -> Result<Gallery> {
    if records.num_known == 0 {
        return Err(Error::Data("enrollment set holds no known records".into()));
    }
    for (idx, rec) in records.records.iter().enumerate() {
        match rec.label {
            ClassLabel::Known(_) => {}
            ClassLabel::Negative if include_garbage => {}
            other => {
                return Err(Error::Data(format!(
                    "enrollment record {idx} has label {other:?}; expected known{} records only",
                    if include_garbage { " or negative" } else { "" }
                )))
            }
        }
    }

    let features = extractor.extract_all(records);
    for (idx, f) in features.iter().enumerate() {
        if l2_norm(&f.feature) < DEGENERATE_NORM {
            return Err(Error::Numeric(format!(
                "enrollment record {idx} produced a degenerate (near-zero) feature"
            )));
        }
    }

    let mut per_id: Vec<Vec<&[f64]>> = vec![Vec::new(); records.num_known];
    let mut negatives: Vec<&[f64]> = Vec::new();
    for f in &features {
        match f.true_label {
            ClassLabel::Known(id) => per_id[id as usize].push(&f.feature),
            ClassLabel::Negative => negatives.push(&f.feature),
            _ => unreachable!(),
        }
    }

    let entries = per_id
        .into_iter()
        .enumerate()
        .map(|(id, feats)| GalleryEntry {
            id: id as u32,
            template: normalized_mean(&feats),
            sample_count: feats.len(),
        })
        .collect();

    let garbage_template = if include_garbage {
        if negatives.is_empty() {
            return Err(Error::Data(
                "garbage template requested but the enrollment set holds no negative records".into(),
            ));
        }
        Some(normalized_mean(&negatives))
    } else {
        None
    };

    Ok(Gallery {
        entries,
        garbage_template,
    })
}

/// Angular cosine similarity `a . b / (||a|| ||b||)`, in `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    assert_eq!(a.len(), b.len(), "cosine of vectors with different lengths");
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        return Err(Error::Numeric(
            "cosine similarity of a degenerate (near-zero) vector".into(),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// One probe's similarity scores: per-known-id scores plus the optional
/// garbage score. A degenerate probe feature is flagged instead of scored and
/// behaves as below every threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub true_label: ClassLabel,
    pub scores: Vec<f64>,
    pub garbage: Option<f64>,
    pub degenerate: bool,
}

impl ScoreRow {
    /// Index and value of the best known-column score, lowest id on ties.
    pub fn best_known(&self) -> Option<(usize, f64)> {
        if self.degenerate {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        for (idx, &s) in self.scores.iter().enumerate() {
            match best {
                Some((_, b)) if s <= b => {}
                _ => best = Some((idx, s)),
            }
        }
        best
    }

    /// Whether the garbage template strictly outscores every known template.
    pub fn garbage_dominates(&self) -> bool {
        match (self.garbage, self.best_known()) {
            (Some(g), Some((_, best))) => g > best,
            _ => false,
        }
    }
}

/// Full probe-by-gallery score matrix in probe order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub num_known: usize,
    pub rows: Vec<ScoreRow>,
}

/// Row-level diagnostics: degenerate probes and known rows whose top score is
/// tied across several columns (resolved by the lowest-id rule).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScoreDiagnostics {
    pub degenerate_rows: usize,
    pub tied_known_rows: usize,
}

impl ScoreMatrix {
    pub fn diagnostics(&self) -> ScoreDiagnostics {
        let mut d = ScoreDiagnostics::default();
        for row in &self.rows {
            if row.degenerate {
                d.degenerate_rows += 1;
                continue;
            }
            if row.true_label.is_known() {
                if let Some((_, best)) = row.best_known() {
                    if row.scores.iter().filter(|&&s| s == best).count() > 1 {
                        d.tied_known_rows += 1;
                    }
                }
            }
        }
        d
    }

    pub fn has_garbage(&self) -> bool {
        self.rows.iter().any(|r| r.garbage.is_some())
    }

    /// CSV of the matrix: header `true_label,s0,...,s{G-1}[,garbage]`.
    /// Degenerate rows serialize their scores as NaN.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true_label");
        for k in 0..self.num_known {
            out.push_str(",s");
            out.push_str(&k.to_string());
        }
        let with_garbage = self.has_garbage();
        if with_garbage {
            out.push_str(",garbage");
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.true_label.encode().to_string());
            for k in 0..self.num_known {
                out.push(',');
                if row.degenerate {
                    out.push_str("NaN");
                } else {
                    out.push_str(&row.scores[k].to_string());
                }
            }
            if with_garbage {
                out.push(',');
                match (row.degenerate, row.garbage) {
                    (true, _) | (false, None) => out.push_str("NaN"),
                    (false, Some(g)) => out.push_str(&g.to_string()),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV produced by [`ScoreMatrix::to_csv`]. NaN scores mark a
    /// degenerate row.
    pub fn from_csv(text: &str, path: &str) -> Result<ScoreMatrix> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(path, "empty file, expected header at line 1"))?;
        let fields: Vec<&str> = header.split(',').collect();
        if fields.first() != Some(&"true_label") || fields.len() < 2 {
            return Err(Error::format(
                path,
                "line 1: header must be \"true_label,s0,...[,garbage]\"",
            ));
        }
        let with_garbage = fields.last() == Some(&"garbage");
        let num_known = fields.len() - 1 - usize::from(with_garbage);
        if num_known == 0 {
            return Err(Error::format(path, "line 1: no score columns"));
        }
        for (k, name) in fields[1..1 + num_known].iter().enumerate() {
            if *name != format!("s{k}") {
                return Err(Error::format(
                    path,
                    format!("line 1: column {} named {name:?}, expected \"s{k}\"", k + 2),
                ));
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != fields.len() {
                return Err(Error::format(
                    path,
                    format!("line {lineno}: {} fields, expected {}", cells.len(), fields.len()),
                ));
            }
            let raw: i32 = cells[0].trim().parse().map_err(|_| {
                Error::format(path, format!("line {lineno}: bad label {:?}", cells[0]))
            })?;
            let true_label = ClassLabel::decode(raw)
                .map_err(|_| Error::format(path, format!("line {lineno}: invalid label code {raw}")))?;
            let mut values = Vec::with_capacity(cells.len() - 1);
            for cell in &cells[1..] {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    Error::format(path, format!("line {lineno}: bad score {cell:?}"))
                })?;
                values.push(v);
            }
            let degenerate = values.iter().any(|v| v.is_nan());
            let (scores, garbage) = if with_garbage {
                let g = values[num_known];
                (
                    values[..num_known].to_vec(),
                    if g.is_nan() { None } else { Some(g) },
                )
            } else {
                (values, None)
            };
            rows.push(ScoreRow {
                true_label,
                scores: if degenerate { vec![f64::NAN; num_known] } else { scores },
                garbage: if degenerate { None } else { garbage },
                degenerate,
            });
        }
        Ok(ScoreMatrix { num_known, rows })
    }
}

/// Scores every probe against every gallery template. Rows follow probe
/// order; degenerate probe features are flagged rather than scored.
pub fn score_probes(gallery: &Gallery, probes: &[ProbeFeature]) -> Result<ScoreMatrix> {
    for entry in &gallery.entries {
        if l2_norm(&entry.template) < DEGENERATE_NORM {
            return Err(Error::Numeric(format!(
                "gallery template for id {} is degenerate",
                entry.id
            )));
        }
    }
    if let Some(garbage) = &gallery.garbage_template {
        if l2_norm(garbage) < DEGENERATE_NORM {
            return Err(Error::Numeric("garbage template is degenerate".into()));
        }
    }
    let num_known = gallery.num_known();
    let rows = util::map_indexed(probes.len(), |i| {
        let probe = &probes[i];
        if l2_norm(&probe.feature) < DEGENERATE_NORM {
            return ScoreRow {
                true_label: probe.true_label,
                scores: vec![f64::NAN; num_known],
                garbage: None,
                degenerate: true,
            };
        }
        let scores = gallery
            .entries
            .iter()
            .map(|e| cosine(&e.template, &probe.feature).expect("norms checked above"))
            .collect();
        let garbage = gallery
            .garbage_template
            .as_ref()
            .map(|t| cosine(t, &probe.feature).expect("norms checked above"));
        ScoreRow {
            true_label: probe.true_label,
            scores,
            garbage,
            degenerate: false,
        }
    });
    Ok(ScoreMatrix { num_known, rows })
}

/// Open-set decision for one probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Accept(u32),
    Reject,
}

/// Thresholded decision: accept the best-scoring identity (lowest id on ties)
/// if its score reaches `theta` and the garbage template, when present, does
/// not strictly outscore it.
pub fn classify(row: &ScoreRow, theta: f64) -> Decision {
    assert!(!row.scores.is_empty(), "classify on an empty score row");
    let Some((idx, best)) = row.best_known() else {
        return Decision::Reject;
    };
    if best < theta || row.garbage_dominates() {
        Decision::Reject
    } else {
        Decision::Accept(idx as u32)
    }
}
