//! Demo session state and its JSON payloads, kept free of wasm types so the
//! logic also runs (and is tested) natively.
//!
//! The browser page drives three operations: generate a two-dimensional
//! synthetic open-set benchmark, train the adapter with a two-dimensional
//! compact feature layer so the learned feature space can be scattered
//! directly, and evaluate the trained model into an O-ROC curve, an operating
//! point table, and a feature-magnitude histogram.

use oswatch::data::{synth_openset, ClassLabel, Dataset, LabelGroup, SynthConfig};
use oswatch::gallery::{enroll, score_probes, Extractor, ProbeFeature};
use oswatch::losses::{LossSpec, LossVariant};
use oswatch::metrics::{magnitude_histogram, oroc_curve, tpir_at_fpir};
use oswatch::net::AdapterParams;
use oswatch::trainer::{train, TrainConfig};
use oswatch::{Error, Result};
use serde::Serialize;

const INPUT_DIM: usize = 2;
const COMPACT_DIM: usize = 2;
const FPIR_TARGETS: [f64; 4] = [1.0, 1e-1, 1e-2, 1e-3];

#[derive(Serialize)]
struct Point {
    x: f64,
    y: f64,
    /// "known" | "negative" | "unknown"
    group: &'static str,
    /// Known class id; -1 for the rest.
    id: i32,
}

#[derive(Serialize)]
struct GeneratePayload {
    points: Vec<Point>,
    num_known: usize,
    train_records: usize,
    val_records: usize,
    probe_records: usize,
}

#[derive(Serialize)]
struct EpochPoint {
    epoch: usize,
    train_loss: f64,
    val_loss: f64,
    val_acc: f64,
}

#[derive(Serialize)]
struct TrainPayload {
    history: Vec<EpochPoint>,
    features: Vec<Point>,
    final_val_acc: f64,
    loss: String,
}

#[derive(Serialize)]
struct CurvePointPayload {
    theta: f64,
    fpir: f64,
    tpir: f64,
}

#[derive(Serialize)]
struct TableRow {
    fpir_target: f64,
    tpir: Option<f64>,
}

#[derive(Serialize)]
struct HistogramGroupPayload {
    group: &'static str,
    counts: Vec<usize>,
    median: f64,
}

#[derive(Serialize)]
struct EvaluatePayload {
    curve: Vec<CurvePointPayload>,
    table: Vec<TableRow>,
    edges: Vec<f64>,
    histogram: Vec<HistogramGroupPayload>,
    num_unknown: usize,
}

pub struct DemoSession {
    seed: u64,
    train_set: Option<Dataset>,
    val_set: Option<Dataset>,
    probe_set: Option<Dataset>,
    model: Option<(AdapterParams, LossSpec)>,
}

fn group_name(label: ClassLabel) -> &'static str {
    label.group().name()
}

fn record_point(label: ClassLabel, x: f64, y: f64) -> Point {
    Point {
        x,
        y,
        group: group_name(label),
        id: match label {
            ClassLabel::Known(id) => id as i32,
            _ => -1,
        },
    }
}

fn to_json<T: Serialize>(payload: &T) -> Result<String> {
    serde_json::to_string(payload).map_err(|e| Error::Data(format!("payload serialization: {e}")))
}

impl Default for DemoSession {
    fn default() -> Self {
        Self::new()
    }
}

impl DemoSession {
    pub fn new() -> Self {
        DemoSession {
            seed: 42,
            train_set: None,
            val_set: None,
            probe_set: None,
            model: None,
        }
    }

    /// Generates the 2-D benchmark and returns the raw input scatter.
    pub fn generate(&mut self, seed: u64, known: usize, per_class: usize, spread: f64) -> Result<String> {
        let config = SynthConfig {
            spread,
            ..SynthConfig::new(seed, known, per_class, INPUT_DIM)
        };
        let (train_set, val_set, probe_set) = synth_openset(&config)?;
        let mut points = Vec::new();
        for rec in train_set.records.iter().chain(&probe_set.records) {
            points.push(record_point(rec.label, rec.vector[0] as f64, rec.vector[1] as f64));
        }
        let payload = GeneratePayload {
            num_known: train_set.num_known,
            train_records: train_set.len(),
            val_records: val_set.len(),
            probe_records: probe_set.len(),
            points,
        };
        self.seed = seed;
        self.train_set = Some(train_set);
        self.val_set = Some(val_set);
        self.probe_set = Some(probe_set);
        self.model = None;
        to_json(&payload)
    }

    fn datasets(&self) -> Result<(&Dataset, &Dataset, &Dataset)> {
        match (&self.train_set, &self.val_set, &self.probe_set) {
            (Some(t), Some(v), Some(p)) => Ok((t, v, p)),
            _ => Err(Error::Config("generate a dataset first".into())),
        }
    }

    /// Trains the adapter with a 2-D compact layer and returns the loss
    /// history plus the learned feature-space scatter.
    #[allow(clippy::too_many_arguments)]
    pub fn train_adapter(
        &mut self,
        loss_name: &str,
        epochs: usize,
        learning_rate: f64,
        hidden1: usize,
        margin: f64,
        xi: f64,
        lambda: f64,
    ) -> Result<String> {
        let (train_set, val_set, probe_set) = self.datasets()?;
        let mut spec = LossSpec::new(LossVariant::parse(loss_name)?);
        spec.margin = margin;
        spec.xi = xi;
        spec.lambda = lambda;
        let config = TrainConfig {
            epochs,
            learning_rate,
            hidden1,
            hidden2: COMPACT_DIM,
            seed: self.seed,
            val_every: 1,
            ..TrainConfig::new(spec)
        };
        let (params, history) = train(train_set, val_set, &config)?;

        let extractor = Extractor::Adapter(&params);
        let mut features = Vec::new();
        for rec in &train_set.records {
            let f = extractor.extract(rec);
            features.push(record_point(rec.label, f.feature[0], f.feature[1]));
        }
        for rec in probe_set.records.iter().filter(|r| r.label == ClassLabel::Unknown) {
            let f = extractor.extract(rec);
            features.push(record_point(rec.label, f.feature[0], f.feature[1]));
        }
        let payload = TrainPayload {
            history: history
                .epochs
                .iter()
                .map(|e| EpochPoint {
                    epoch: e.epoch,
                    train_loss: e.train_loss,
                    val_loss: e.val_loss,
                    val_acc: e.val_known_accuracy,
                })
                .collect(),
            features,
            final_val_acc: history.final_accuracy().unwrap_or(0.0),
            loss: spec.variant.to_string(),
        };
        self.model = Some((params, spec));
        to_json(&payload)
    }

    /// Enrolls, scores the probes, and returns the O-ROC curve, the
    /// TPIR@FPIR table and the magnitude histogram.
    pub fn evaluate(&self, bins: usize) -> Result<String> {
        let (train_set, _, probe_set) = self.datasets()?;
        let (params, spec) = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Config("train a model first".into()))?;
        let extractor = Extractor::Adapter(params);
        let with_garbage = spec.variant == LossVariant::Garbage;
        let enroll_set = if with_garbage {
            train_set.clone()
        } else {
            Dataset::new(
                train_set.dim,
                train_set
                    .records
                    .iter()
                    .filter(|r| r.label.is_known())
                    .cloned()
                    .collect(),
            )?
        };
        let gallery = enroll(&extractor, &enroll_set, with_garbage)?;
        let probes = extractor.extract_all(probe_set);
        let scores = score_probes(&gallery, &probes)?;
        let curve = oroc_curve(&scores)?;
        let table = tpir_at_fpir(&curve, &FPIR_TARGETS);

        let mut mag_features: Vec<ProbeFeature> = probes;
        for rec in train_set.records.iter().filter(|r| r.label == ClassLabel::Negative) {
            mag_features.push(extractor.extract(rec));
        }
        let hist = magnitude_histogram(&mag_features, bins)?;

        let payload = EvaluatePayload {
            curve: curve
                .points
                .iter()
                .map(|p| CurvePointPayload {
                    theta: p.theta,
                    fpir: p.fpir,
                    tpir: p.tpir,
                })
                .collect(),
            table: table
                .iter()
                .map(|&(fpir_target, tpir)| TableRow { fpir_target, tpir })
                .collect(),
            edges: hist.edges.clone(),
            histogram: LabelGroup::ALL
                .iter()
                .filter_map(|&g| {
                    hist.group(g).map(|gh| HistogramGroupPayload {
                        group: g.name(),
                        counts: gh.counts.clone(),
                        median: gh.median,
                    })
                })
                .collect(),
            num_unknown: curve.num_unknown_rows,
        };
        to_json(&payload)
    }
}
