use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::early_stop::{EarlyStopping, StopDecision};
use super::optim::{Adam, AdamConfig};
use super::strategy::{Phase, StrategyEncoder, TokenizedExample};
use crate::data::{Target, TaskKind};
use crate::encoder::{
    extract_representation, head_loss_and_grads, mlm_loss, mlm_loss_and_grads, mlm_mask, Head, HeadKind, Labels, Mode,
    Model,
};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, prauc, rmse, MetricKind};
use crate::rng::{derive_seed, seeded, Rng};
use crate::templating::{select_inference_template, EncodedInput};
use crate::tokenizer::TokenSeq;

const EVAL_BATCH: usize = 64;

// stream ids for derive_seed
const STREAM_ORDER: u64 = 1;
const STREAM_TEMPLATE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const STREAM_MASK: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub max_steps: usize,
    pub validate_every: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainingSchedule {
    pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

    pub fn few_shot(seed: u64) -> Self {
        TrainingSchedule {
            max_steps: 2000,
            validate_every: 2,
            patience: 3,
            batch_size: 8,
            learning_rate: Self::DEFAULT_LEARNING_RATE,
            seed,
        }
    }

    pub fn data_rich(seed: u64) -> Self {
        TrainingSchedule {
            max_steps: 20_000,
            validate_every: 100,
            patience: 3,
            batch_size: 32,
            learning_rate: Self::DEFAULT_LEARNING_RATE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.validate_every == 0 {
            return fail("validate_every must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        Ok(())
    }
}

/// Validation results of one fine-tuning run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunHistory {
    pub validations: Vec<(usize, f64)>,
    pub best_step: usize,
    pub best_metric: f64,
    pub stopped_early: bool,
    pub train_losses: Vec<f64>,
}

impl RunHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,metric\n");
        for (step, metric) in &self.validations {
            out.push_str(&format!("{step},{metric}\n"));
        }
        out
    }
}

pub struct Finetuned {
    pub model: Model,
    pub head: Head,
    pub history: RunHistory,
}

pub fn head_kind_for(task: TaskKind) -> HeadKind {
    match task.num_classes() {
        Some(num_classes) => HeadKind::Classification { num_classes },
        None => HeadKind::Regression,
    }
}

pub fn check_metric(metric: MetricKind, head: HeadKind) -> Result<()> {
    let ok = match (metric, head) {
        (MetricKind::Prauc, HeadKind::Classification { num_classes }) => num_classes == 2,
        (MetricKind::Accuracy, HeadKind::Classification { .. }) => true,
        (MetricKind::Rmse, HeadKind::Regression) => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        let task = match head {
            HeadKind::Classification { num_classes } => format!("{num_classes}-class classification"),
            HeadKind::Regression => "regression".into(),
        };
        Err(Error::MetricTaskMismatch { metric: metric.to_string(), task })
    }
}

fn labels_of<'a>(examples: impl Iterator<Item = &'a TokenizedExample>, head: HeadKind) -> Result<Labels> {
    let targets: Vec<Target> = examples.map(|e| e.target).collect();
    match head {
        HeadKind::Classification { .. } => targets
            .iter()
            .map(|t| {
                t.label().ok_or_else(|| Error::InvalidArgument("regression target for a classification head".into()))
            })
            .collect::<Result<_>>()
            .map(Labels::Classes),
        HeadKind::Regression => targets
            .iter()
            .map(|t| t.value().ok_or_else(|| Error::InvalidArgument("class label for a regression head".into())))
            .collect::<Result<_>>()
            .map(Labels::Values),
    }
}

/// Eval-mode head outputs: one row of class probabilities per example, or
/// one value per example for regression.
pub fn predict(
    model: &Model,
    head: &Head,
    encoder: &StrategyEncoder,
    data: &[TokenizedExample],
    phase: Phase,
) -> Result<Vec<f64>> {
    let mut unused = seeded(0);
    let mut out = Vec::with_capacity(data.len() * head.out_dim());
    for chunk in data.chunks(EVAL_BATCH) {
        let batch: Vec<EncodedInput> =
            chunk.iter().map(|e| encoder.encode(&e.docs, phase, &mut unused)).collect::<Result<_>>()?;
        let hidden = model.forward_eval(&batch)?;
        let reps = extract_representation(&hidden, &batch, encoder.kind().pooling())?;
        let mut raw = head.forward(&reps);
        if let HeadKind::Classification { num_classes } = head.kind() {
            for row in raw.chunks_exact_mut(num_classes) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
        out.extend(raw);
    }
    Ok(out)
}

/// Metric of a prediction matrix from [`predict`] against `data`'s targets.
pub fn score_predictions(
    predictions: &[f64],
    head: HeadKind,
    data: &[TokenizedExample],
    metric: MetricKind,
) -> Result<f64> {
    check_metric(metric, head)?;
    match labels_of(data.iter(), head)? {
        Labels::Classes(gold) => {
            let k = head.out_dim();
            if metric == MetricKind::Prauc {
                let scores: Vec<f64> = predictions.chunks_exact(k).map(|r| r[1]).collect();
                let labels: Vec<bool> = gold.iter().map(|&g| g == 1).collect();
                prauc(&scores, &labels)
            } else {
                let predicted: Vec<usize> = predictions
                    .chunks_exact(k)
                    .map(|r| (0..k).fold(0, |best, c| if r[c] > r[best] { c } else { best }))
                    .collect();
                accuracy(&predicted, &gold)
            }
        }
        Labels::Values(gold) => rmse(predictions, &gold),
    }
}

pub fn evaluate_phase(
    model: &Model,
    head: &Head,
    encoder: &StrategyEncoder,
    data: &[TokenizedExample],
    metric: MetricKind,
    phase: Phase,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    check_metric(metric, head.kind())?;
    let preds = predict(model, head, encoder, data, phase)?;
    score_predictions(&preds, head.kind(), data, metric)
}

/// Test-time metric; DYNAMAR uses its selected inference template.
pub fn evaluate(
    model: &Model,
    head: &Head,
    encoder: &StrategyEncoder,
    data: &[TokenizedExample],
    metric: MetricKind,
) -> Result<f64> {
    evaluate_phase(model, head, encoder, data, metric, Phase::Infer)
}

/// Picks DYNAMAR's inference template by validation metric and stores it
/// in `encoder`. Other strategies are left untouched.
pub fn choose_inference_template(
    model: &Model,
    head: &Head,
    encoder: &mut StrategyEncoder,
    val: &[TokenizedExample],
    metric: MetricKind,
) -> Result<usize> {
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    check_metric(metric, head.kind())?;
    let pool_size = encoder.pool_size();
    let chosen = {
        let enc: &StrategyEncoder = encoder;
        select_inference_template(pool_size, metric, |i| {
            let mut single = enc.clone();
            single.set_inference_template(i)?;
            evaluate(model, head, &single, val, metric)
        })?
    };
    if pool_size > 0 {
        encoder.set_inference_template(chosen)?;
    }
    Ok(chosen)
}

/// Epoch-wise shuffled batches of indices.
struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl BatchStream {
    fn new(n: usize, rng: Rng) -> Self {
        BatchStream { order: (0..n).collect(), cursor: n, rng }
    }

    fn next(&mut self, batch_size: usize) -> Vec<usize> {
        let size = batch_size.min(self.order.len());
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}

/// The fine-tuning loop with a caller-supplied validation metric; the
/// returned model and head are the snapshot from the best validation.
pub fn finetune_with_validator<V>(
    mut model: Model,
    mut head: Head,
    encoder: &StrategyEncoder,
    train: &[TokenizedExample],
    schedule: &TrainingSchedule,
    metric: MetricKind,
    mut validate: V,
) -> Result<Finetuned>
where
    V: FnMut(usize, &Model, &Head) -> Result<f64>,
{
    schedule.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyData);
    }
    check_metric(metric, head.kind())?;
    let pooling = encoder.kind().pooling();
    let mut batches = BatchStream::new(train.len(), seeded(derive_seed(schedule.seed, &[STREAM_ORDER])));
    let mut template_rng = seeded(derive_seed(schedule.seed, &[STREAM_TEMPLATE]));
    let mut dropout_rng = seeded(derive_seed(schedule.seed, &[STREAM_DROPOUT]));
    let adam = AdamConfig::new(schedule.learning_rate);
    let mut model_opt = Adam::new(&model, adam);
    let mut head_opt = Adam::new(&head, adam);
    let mut stopper = EarlyStopping::new(schedule.patience, metric.direction());
    let mut best: Option<(Model, Head)> = None;
    let mut validations = Vec::new();
    let mut train_losses = Vec::with_capacity(schedule.max_steps);
    let mut stopped_early = false;

    let mut check = |step: usize, model: &Model, head: &Head, validations: &mut Vec<(usize, f64)>| -> Result<bool> {
        let value = validate(step, model, head)?;
        validations.push((step, value));
        match stopper.update(step, value) {
            StopDecision::Continue { improved } => {
                if improved {
                    best = Some((model.clone(), head.clone()));
                }
                Ok(false)
            }
            StopDecision::Stop => Ok(true),
        }
    };

    for step in 1..=schedule.max_steps {
        let idx = batches.next(schedule.batch_size);
        let batch: Vec<EncodedInput> = idx
            .iter()
            .map(|&i| encoder.encode(&train[i].docs, Phase::Train, &mut template_rng))
            .collect::<Result<_>>()?;
        let labels = labels_of(idx.iter().map(|&i| &train[i]), head.kind())?;
        let (loss, grads, head_grads) =
            head_loss_and_grads(&model, &head, &batch, pooling, &labels, Mode::Train(&mut dropout_rng))?;
        if !loss.is_finite() {
            return Err(Error::InvalidArgument(format!("training loss became {loss} at step {step}")));
        }
        train_losses.push(loss);
        model_opt.step(&mut model, &grads);
        head_opt.step(&mut head, &head_grads);

        let last = step == schedule.max_steps;
        if (step % schedule.validate_every == 0 || last) && check(step, &model, &head, &mut validations)? {
            stopped_early = !last;
            break;
        }
    }
    if schedule.max_steps == 0 {
        check(0, &model, &head, &mut validations)?;
    }

    let (best_step, best_metric) = stopper.best().unwrap_or((0, f64::NAN));
    let (model, head) = best.unwrap_or((model, head));
    Ok(Finetuned {
        model,
        head,
        history: RunHistory { validations, best_step, best_metric, stopped_early, train_losses },
    })
}

/// Fine-tunes encoder and head end to end with early stopping on `val`.
/// DYNAMAR validates with the first pool template during training.
pub fn finetune(
    model: Model,
    head: Head,
    encoder: &StrategyEncoder,
    train: &[TokenizedExample],
    val: &[TokenizedExample],
    schedule: &TrainingSchedule,
    metric: MetricKind,
) -> Result<Finetuned> {
    if val.is_empty() {
        return Err(Error::EmptyData);
    }
    finetune_with_validator(model, head, encoder, train, schedule, metric, |_, m, h| {
        evaluate_phase(m, h, encoder, val, metric, Phase::Validate)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { steps: 200, batch_size: 16, learning_rate: 1e-3, mask_rate: 0.15, seed: 0 }
    }
}

pub struct Pretrained {
    pub model: Model,
    pub losses: Vec<f64>,
}

fn document_input(doc: &[u32], max_len: usize) -> EncodedInput {
    EncodedInput::from_body(&doc[..doc.len().min(max_len - 2)], max_len)
}

/// Masked-language-model training on a tokenized corpus. Documents longer
/// than the model's window keep their head.
pub fn pretrain_mlm(mut model: Model, corpus: &[TokenSeq], config: &PretrainConfig) -> Result<Pretrained> {
    let docs: Vec<&TokenSeq> = corpus.iter().filter(|d| !d.is_empty()).collect();
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let max_len = model.config().max_len;
    let vocab_size = model.config().vocab_size;
    let mut batches = BatchStream::new(docs.len(), seeded(derive_seed(config.seed, &[STREAM_ORDER])));
    let mut mask_rng = seeded(derive_seed(config.seed, &[STREAM_MASK]));
    let mut dropout_rng = seeded(derive_seed(config.seed, &[STREAM_DROPOUT]));
    let mut opt = Adam::new(&model, AdamConfig::new(config.learning_rate));
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let batch: Vec<EncodedInput> =
            batches.next(config.batch_size).into_iter().map(|i| document_input(docs[i], max_len)).collect();
        let (corrupted, targets) = loop {
            let (c, t) = mlm_mask(&batch, &mut mask_rng, config.mask_rate, vocab_size)?;
            if !t.is_empty() {
                break (c, t);
            }
        };
        let (loss, grads) = mlm_loss_and_grads(&model, &corrupted, &targets, Mode::Train(&mut dropout_rng))?;
        losses.push(loss);
        opt.step(&mut model, &grads);
    }
    Ok(Pretrained { model, losses })
}

/// MLM loss on a fixed corruption of (up to `limit` of) `corpus`, for
/// comparing models on equal footing.
pub fn mlm_eval_loss(model: &Model, corpus: &[TokenSeq], mask_rate: f64, seed: u64, limit: usize) -> Result<f64> {
    let max_len = model.config().max_len;
    let batch: Vec<EncodedInput> =
        corpus.iter().filter(|d| !d.is_empty()).take(limit).map(|d| document_input(d, max_len)).collect();
    if batch.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = seeded(derive_seed(seed, &[STREAM_MASK]));
    let (corrupted, targets) = mlm_mask(&batch, &mut rng, mask_rate, model.config().vocab_size)?;
    mlm_loss(model, &corrupted, &targets)
}
