//! Mini-batch training of the adapter network with validation tracking.
//!
//! Training is fully deterministic: parameters are initialized from the
//! config seed, every epoch's shuffle is seeded by `(seed, epoch)`, and
//! per-sample gradients are reduced in sample order.

use crate::data::{ClassLabel, Dataset, LabelGroup};
use crate::error::{Error, Result};
use crate::losses::{softmax, LossSpec};
use crate::net::{backward, forward, sgd_step, AdapterParams, OptimizerState, ParamGrads};
use crate::rng::Rng;

/// Hyperparameters for one training run. The layer sizes fall back to the
/// stock topology (512 and 256 hidden units); the loss hyperparameters live
/// in [`LossSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub loss: LossSpec,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Validation cadence in epochs; metrics are carried forward in between.
    pub val_every: usize,
}

impl TrainConfig {
    pub fn new(loss: LossSpec) -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            loss,
            hidden1: 512,
            hidden2: 256,
            val_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.hidden1 < 1 || self.hidden2 < 1 {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if self.val_every < 1 {
            return Err(Error::Config("val_every must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !((0.0..1.0).contains(&self.momentum)) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        self.loss.validate()
    }
}

/// Metrics of one completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_known_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_known_accuracy)
    }

    /// CSV export: `epoch,train_loss,val_loss,val_acc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_known_accuracy
            ));
        }
        out
    }
}

fn reject_probe_labels(dataset: &Dataset, split: &str) -> Result<()> {
    for (idx, rec) in dataset.records.iter().enumerate() {
        if rec.label.is_unknown_like() {
            return Err(Error::Data(format!(
                "{split} record {idx} carries probe-only label {:?}; \
                 training splits hold known and negative samples",
                rec.label
            )));
        }
    }
    Ok(())
}

const SHUFFLE_STREAM: u64 = 0x5348_5546 << 32;

/// Filters the dataset by the loss variant (plain cross-entropy drops all
/// negatives), shuffles deterministically by `(config.seed, epoch)`, and
/// partitions into batches. The last batch may be short.
pub fn prepare_batches(dataset: &Dataset, config: &TrainConfig, epoch: usize) -> Result<Vec<Vec<usize>>> {
    reject_probe_labels(dataset, "training")?;
    let mut indices: Vec<usize> = dataset
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| match r.label {
            ClassLabel::Known(_) => true,
            ClassLabel::Negative => config.loss.variant.uses_negatives(),
            _ => unreachable!(),
        })
        .map(|(i, _)| i)
        .collect();
    if indices.is_empty() {
        return Err(Error::Config(format!(
            "no trainable records: the {} variant trains on {} samples and the dataset has none",
            config.loss.variant,
            if config.loss.variant.uses_negatives() {
                "known and negative"
            } else {
                "known"
            }
        )));
    }
    let mut rng = Rng::with_stream(config.seed, SHUFFLE_STREAM | epoch as u64);
    rng.shuffle(&mut indices);
    Ok(indices.chunks(config.batch_size).map(|c| c.to_vec()).collect())
}

/// Trains the adapter network. The output width is the number of known
/// classes in the training set, plus one for the garbage variant. Returns the
/// final parameters and the per-epoch history.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
) -> Result<(AdapterParams, TrainHistory)> {
    config.validate()?;
    reject_probe_labels(train_set, "training")?;
    reject_probe_labels(val_set, "validation")?;
    if train_set.num_known < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 known identities, found {}",
            train_set.num_known
        )));
    }
    if val_set.dim != train_set.dim {
        return Err(Error::Data(format!(
            "validation dimension {} does not match training dimension {}",
            val_set.dim, train_set.dim
        )));
    }
    if val_set.num_known > train_set.num_known {
        return Err(Error::Data(format!(
            "validation set holds known id {} but training enrolls only {} identities",
            val_set.num_known - 1,
            train_set.num_known
        )));
    }

    let c = config.loss.output_size(train_set.num_known);
    let mut params = AdapterParams::init(
        config.seed,
        train_set.dim,
        config.hidden1,
        config.hidden2,
        c,
    );
    let mut state = OptimizerState::new(&params, config.learning_rate, config.momentum);
    let inputs: Vec<Vec<f64>> = train_set.records.iter().map(|r| r.vector_f64()).collect();

    let mut history = TrainHistory::default();
    let mut carried_val: Option<(f64, f64)> = None;
    for epoch in 1..=config.epochs {
        let batches = prepare_batches(train_set, config, epoch)?;
        let mut loss_sum = 0.0;
        let mut sample_count = 0usize;
        for (batch_idx, batch) in batches.iter().enumerate() {
            let mut grads = ParamGrads::zeros_like(&params);
            for &i in batch {
                let trace = forward(&params, &inputs[i]);
                let out = config
                    .loss
                    .evaluate(&trace.logits, &trace.h2, train_set.records[i].label);
                if !out.value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "training diverged: non-finite loss at epoch {epoch}, batch {batch_idx} \
                         (learning_rate {}, momentum {}, batch_size {})",
                        config.learning_rate, config.momentum, config.batch_size
                    )));
                }
                loss_sum += out.value;
                let sample_grads = backward(&params, &trace, &out.grad_logits, &out.grad_h2);
                grads.add_in_place(&sample_grads);
            }
            grads.scale_in_place(1.0 / batch.len() as f64);
            let (next_params, next_state) = sgd_step(&params, &grads, &state);
            params = next_params;
            state = next_state;
            sample_count += batch.len();
        }
        let train_loss = loss_sum / sample_count as f64;
        if carried_val.is_none() || epoch % config.val_every == 0 || epoch == config.epochs {
            carried_val = Some(validate(&params, val_set, &config.loss)?);
        }
        let (val_loss, val_known_accuracy) = carried_val.unwrap();
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_known_accuracy,
        });
    }
    Ok((params, history))
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean loss over the variant-filtered validation records, plus the fraction
/// of known records whose argmax over the known logits hits the true id.
pub fn validate(params: &AdapterParams, val_set: &Dataset, loss: &LossSpec) -> Result<(f64, f64)> {
    reject_probe_labels(val_set, "validation")?;
    if val_set.dim != params.input_dim {
        return Err(Error::Data(format!(
            "validation dimension {} does not match the model input dimension {}",
            val_set.dim, params.input_dim
        )));
    }
    let known_logits = params.num_outputs - usize::from(loss.variant == crate::losses::LossVariant::Garbage);
    if val_set.num_known > known_logits {
        return Err(Error::Data(format!(
            "validation set holds known id {} but the model scores {known_logits} identities",
            val_set.num_known - 1
        )));
    }
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut known_total = 0usize;
    let mut known_correct = 0usize;
    for rec in &val_set.records {
        if matches!(rec.label, ClassLabel::Negative) && !loss.variant.uses_negatives() {
            continue;
        }
        let trace = forward(params, &rec.vector_f64());
        let out = loss.evaluate(&trace.logits, &trace.h2, rec.label);
        loss_sum += out.value;
        loss_count += 1;
        if let ClassLabel::Known(id) = rec.label {
            known_total += 1;
            if argmax(&trace.logits[..known_logits]) == id as usize {
                known_correct += 1;
            }
        }
    }
    if loss_count == 0 {
        return Err(Error::Data(
            "validation loss is undefined: no records left after variant filtering".into(),
        ));
    }
    if known_total == 0 {
        return Err(Error::Data(
            "validation accuracy is undefined: no known records in the validation set".into(),
        ));
    }
    if !loss_sum.is_finite() {
        return Err(Error::Numeric("non-finite validation loss".into()));
    }
    Ok((
        loss_sum / loss_count as f64,
        known_correct as f64 / known_total as f64,
    ))
}

/// Mean Shannon entropy of the softmax outputs for records of one label
/// group; `None` when the group is empty. Diagnostic for the entropy-raising
/// objectives, whose negative branch drives this toward `ln(C)`.
pub fn mean_softmax_entropy(params: &AdapterParams, dataset: &Dataset, group: LabelGroup) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for rec in &dataset.records {
        if rec.label.group() != group {
            continue;
        }
        let trace = forward(params, &rec.vector_f64());
        let probs = softmax(&trace.logits);
        let entropy: f64 = probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        sum += entropy;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}
