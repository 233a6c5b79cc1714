use std::path::Path;

use rayon::prelude::*;

use crate::data::{few_shot_sample, fraction_sample, load_jsonl, Dataset};
use crate::encoder::{init_model, Checkpoint, Head, Model};
use crate::error::{Error, Result};
use crate::finetune::{
    check_metric, choose_inference_template, evaluate, finetune, head_kind_for, pretrain_mlm, tokenize_dataset,
    RunHistory, Strategy, StrategyEncoder, StrategyKind, TokenizedExample,
};
use crate::rng::{derive_seed, name_hash, seeded};
use crate::templating::{select_pool, EmbeddingCosine, PromptPool, PromptTemplate, ScorerKind, TokenJaccard};
use crate::tokenizer::{train_bpe, TokenSeq, Vocab, SEP};

use super::config::{ExperimentConfig, Sampling, TaskConfig, TemplateFile};
use super::report::{AblationCurve, AblationRun, Report, RunRecord, TaskInfo};

const STREAM_INIT: u64 = 11;
const STREAM_PRETRAIN: u64 = 12;
const STREAM_SAMPLE: u64 = 13;
const STREAM_HEAD: u64 = 14;
const STREAM_FINETUNE: u64 = 15;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "DYNAMAR_THREADS";

/// Worker threads: the available parallelism, capped by `DYNAMAR_THREADS`.
pub fn worker_count() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap > 0 => cap.min(available),
        _ => available,
    }
}

fn with_workers<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// A task with its data split and templates loaded.
#[derive(Clone, Debug)]
pub struct PreparedTask {
    pub info: TaskInfo,
    pub config: TaskConfig,
    pub train_pool: Dataset,
    pub val_pool: Dataset,
    pub test: Vec<TokenizedExample>,
    pub candidates: Vec<PromptTemplate>,
}

/// Everything shared by all seeds: the tokenizer, the pre-training corpus
/// and the tasks.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocab,
    pub corpus: Vec<TokenSeq>,
    pub tasks: Vec<PreparedTask>,
}

fn load_splits(t: &TaskConfig) -> Result<(Dataset, Dataset, Dataset)> {
    if let Some(spec) = &t.generator {
        return spec.generate()?.split(t.split.0, t.split.1);
    }
    let (kind, arity) = (t.task_kind.expect("validated"), t.arity.expect("validated"));
    if let Some(path) = &t.data {
        return load_jsonl(path, kind, arity)?.split(t.split.0, t.split.1);
    }
    let load = |p: &Option<std::path::PathBuf>| load_jsonl(p.as_ref().expect("validated"), kind, arity);
    Ok((load(&t.train)?, load(&t.val)?, load(&t.test)?))
}

fn load_candidates(t: &TaskConfig, arity: crate::data::Arity) -> Result<Vec<PromptTemplate>> {
    let file = match (&t.templates, &t.candidates) {
        (Some(path), _) => TemplateFile::load(path)?,
        (None, Some(c)) => TemplateFile { task: t.name.clone(), arity, candidates: c.clone() },
        (None, None) => return Ok(Vec::new()),
    };
    if file.arity != arity {
        return Err(Error::ArityMismatch { expected: arity.count(), actual: file.arity.count() });
    }
    file.parse()
}

fn check_sampling(t: &TaskConfig, s: &Sampling, data: &Dataset) -> Result<()> {
    match s {
        Sampling::KPerClass(0) => Err(Error::Config(format!("task {:?}: k_per_class must be positive", t.name))),
        Sampling::KPerClass(_) if data.task_kind.num_classes().is_none() => {
            Err(Error::Config(format!("task {:?}: k_per_class needs a classification task", t.name)))
        }
        Sampling::Fraction(f) if !(*f > 0.0 && *f <= 1.0) => {
            Err(Error::Config(format!("task {:?}: fraction {f} outside (0, 1]", t.name)))
        }
        _ => Ok(()),
    }
}

/// Loads every task, trains the tokenizer on the training documents, the
/// extra corpus and the template literals, and tokenizes the test sets.
/// The pre-training corpus holds the unlabeled training-pool examples
/// (pairs joined by SEP) plus the extra corpus.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let mut tasks = Vec::new();
    let mut tests = Vec::new();
    for t in &config.tasks {
        let wrap = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Dataset { task: t.name.clone(), source: Box::new(other) },
        };
        let (train_pool, val_pool, mut test) = load_splits(t).map_err(wrap)?;
        if train_pool.is_empty() || val_pool.is_empty() || test.is_empty() {
            return Err(wrap(Error::EmptyData));
        }
        if let Some(cap) = t.max_test {
            test.examples.truncate(cap.max(1));
        }
        check_metric(t.metric, head_kind_for(train_pool.task_kind))
            .map_err(|e| Error::Config(format!("task {:?}: {e}", t.name)))?;
        check_sampling(t, &t.train_sampling, &train_pool)?;
        check_sampling(t, &t.val_sampling, &val_pool)?;
        let candidates = load_candidates(t, train_pool.arity).map_err(wrap)?;
        let needs = config
            .strategies
            .iter()
            .filter_map(|s| match s {
                StrategyKind::Dynamar => Some(config.pool_size),
                StrategyKind::Fiter => Some(1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        if candidates.len() < needs {
            return Err(Error::Config(format!(
                "task {:?} has {} template candidates, pool needs {needs}",
                t.name,
                candidates.len()
            )));
        }
        tests.push(test);
        tasks.push(PreparedTask {
            info: TaskInfo { name: t.name.clone(), metric: t.metric },
            config: t.clone(),
            train_pool,
            val_pool,
            test: Vec::new(),
            candidates,
        });
    }

    let mut extra: Vec<String> = Vec::new();
    if let Some(path) = &config.corpus {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        extra.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string));
    }
    let mut tokenizer_corpus: Vec<&str> = tasks.iter().flat_map(|t| t.train_pool.texts()).collect();
    tokenizer_corpus.extend(extra.iter().map(String::as_str));
    let literals: Vec<String> = tasks
        .iter()
        .flat_map(|t| t.candidates.iter().map(|c| c.literal_words().collect::<Vec<_>>().join(" ")))
        .collect();
    tokenizer_corpus.extend(literals.iter().map(String::as_str));
    let vocab = train_bpe(&tokenizer_corpus, config.vocab_size)?;

    // Training-pool examples in their promptless layout, labels unused.
    let mut corpus: Vec<TokenSeq> = Vec::new();
    for t in &tasks {
        for ex in &t.train_pool.examples {
            let mut seq = TokenSeq::new();
            for (i, doc) in ex.docs.iter().enumerate() {
                if i > 0 {
                    seq.push(SEP);
                }
                seq.extend(vocab.encode(doc));
            }
            corpus.push(seq);
        }
    }
    corpus.extend(extra.iter().map(|d| vocab.encode(d)));
    for (t, test) in tasks.iter_mut().zip(tests) {
        t.test = tokenize_dataset(&test, &vocab);
    }
    Ok(Prepared { vocab, corpus, tasks })
}

/// Per-seed state shared by all arms: the pre-trained encoder and each
/// task's sampled training and validation sets.
pub struct SeedContext {
    pub seed: u64,
    pub model: Model,
    pub pretrain_losses: Vec<f64>,
    pub tasks: Vec<SeedTask>,
}

pub struct SeedTask {
    pub train: Vec<TokenizedExample>,
    pub val: Vec<TokenizedExample>,
}

fn sample(data: &Dataset, sampling: &Sampling, seed: u64) -> Result<Dataset> {
    let mut rng = seeded(seed);
    match sampling {
        Sampling::KPerClass(k) => few_shot_sample(data, *k, &mut rng),
        Sampling::Fraction(f) => fraction_sample(data, *f, &mut rng),
        Sampling::All => Ok(data.clone()),
    }
}

pub fn seed_context(config: &ExperimentConfig, prepared: &Prepared, seed: u64) -> Result<SeedContext> {
    let model_config = config.model.with_vocab(prepared.vocab.len());
    let model = init_model(&model_config, derive_seed(seed, &[STREAM_INIT]))?;
    let pretrained =
        pretrain_mlm(model, &prepared.corpus, &config.pretrain_config(derive_seed(seed, &[STREAM_PRETRAIN])))?;
    let mut tasks = Vec::new();
    for t in &prepared.tasks {
        let h = name_hash(&t.info.name);
        let train = sample(&t.train_pool, &t.config.train_sampling, derive_seed(seed, &[h, STREAM_SAMPLE, 0]))?;
        let val = sample(&t.val_pool, &t.config.val_sampling, derive_seed(seed, &[h, STREAM_SAMPLE, 1]))?;
        tasks.push(SeedTask {
            train: tokenize_dataset(&train, &prepared.vocab),
            val: tokenize_dataset(&val, &prepared.vocab),
        });
    }
    Ok(SeedContext { seed, model: pretrained.model, pretrain_losses: pretrained.losses, tasks })
}

/// Diverse pool of `k` templates for task `task`. The embedding scorer uses
/// the seed's pre-trained encoder with the task's first training example
/// as probe.
pub fn task_pool(
    config: &ExperimentConfig,
    prepared: &Prepared,
    ctx: &SeedContext,
    task: usize,
    k: usize,
) -> Result<PromptPool> {
    let t = &prepared.tasks[task];
    let selection = match config.scorer {
        ScorerKind::Jaccard => select_pool(&t.candidates, k, &TokenJaccard, config.min_dissimilarity)?,
        ScorerKind::Embedding => {
            let probe: Vec<&str> = t.train_pool.examples[0].docs.iter().map(String::as_str).collect();
            let scorer = EmbeddingCosine::new(&ctx.model, &prepared.vocab, &probe);
            select_pool(&t.candidates, k, &scorer, config.min_dissimilarity)?
        }
    };
    Ok(selection.pool)
}

/// Result of one (seed, task, strategy) fine-tuning run.
#[derive(Clone, Debug)]
pub struct ArmOutcome {
    pub task: String,
    pub strategy: StrategyKind,
    pub pool_size: usize,
    pub seed: u64,
    pub metric: f64,
    pub history: RunHistory,
    pub inference_template: Option<usize>,
    /// DMR1 bytes of the best snapshot, when requested.
    pub checkpoint: Option<Vec<u8>>,
}

fn build_strategy(kind: StrategyKind, pool: Option<PromptPool>) -> Result<Strategy> {
    let pool = || pool.clone().ok_or_else(|| Error::Config(format!("{kind} needs templates")));
    Ok(match kind {
        StrategyKind::PftCls => Strategy::PftCls,
        StrategyKind::PftAvg => Strategy::PftAvg,
        StrategyKind::NpPrefix => Strategy::NpPrefix,
        StrategyKind::NpSuffix => Strategy::NpSuffix,
        StrategyKind::Fiter => Strategy::Fiter(pool()?.templates()[0].clone()),
        StrategyKind::Dynamar => Strategy::dynamar(pool()?),
    })
}

/// Fine-tunes one arm from the seed's pre-trained encoder and scores it on
/// the task's test set. Head initialization and batch order depend only on
/// seed and task, so arms differ only in their input encoding.
pub fn run_arm(
    config: &ExperimentConfig,
    prepared: &Prepared,
    ctx: &SeedContext,
    task: usize,
    kind: StrategyKind,
    pool: Option<PromptPool>,
) -> Result<ArmOutcome> {
    let t = &prepared.tasks[task];
    let data = &ctx.tasks[task];
    let h = name_hash(&t.info.name);
    let pool_size = pool.as_ref().map_or(0, PromptPool::len);
    let strategy = build_strategy(kind, pool)?;
    let max_len = ctx.model.config().max_len;
    let mut encoder = StrategyEncoder::new(&strategy, &prepared.vocab, max_len);
    let head_kind = head_kind_for(t.train_pool.task_kind);
    let head = Head::new(head_kind, ctx.model.config().dim, derive_seed(ctx.seed, &[h, STREAM_HEAD]))?;
    let schedule = config.schedule(derive_seed(ctx.seed, &[h, STREAM_FINETUNE]));
    let tuned = finetune(ctx.model.clone(), head, &encoder, &data.train, &data.val, &schedule, t.info.metric)?;
    let inference_template = if kind == StrategyKind::Dynamar {
        Some(choose_inference_template(&tuned.model, &tuned.head, &mut encoder, &data.val, t.info.metric)?)
    } else {
        None
    };
    let metric = evaluate(&tuned.model, &tuned.head, &encoder, &t.test, t.info.metric)?;
    let checkpoint = if config.save_checkpoints {
        Some(Checkpoint { model: tuned.model, head: Some(tuned.head) }.to_bytes()?)
    } else {
        None
    };
    Ok(ArmOutcome {
        task: t.info.name.clone(),
        strategy: kind,
        pool_size,
        seed: ctx.seed,
        metric,
        history: tuned.history,
        inference_template,
        checkpoint,
    })
}

/// One arm to run: task index, strategy and pool size (0 for promptless).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ArmSpec {
    task: usize,
    kind: StrategyKind,
    pool_size: usize,
}

fn run_arms(
    config: &ExperimentConfig,
    prepared: &Prepared,
    arms: &[ArmSpec],
) -> Result<(Vec<SeedContext>, Vec<ArmOutcome>)> {
    with_workers(|| {
        let contexts: Vec<SeedContext> =
            config.seeds.par_iter().map(|&s| seed_context(config, prepared, s)).collect::<Result<_>>()?;
        let jobs: Vec<(usize, ArmSpec)> = (0..contexts.len()).flat_map(|c| arms.iter().map(move |a| (c, *a))).collect();
        let outcomes = jobs
            .par_iter()
            .map(|&(c, arm)| {
                let ctx = &contexts[c];
                let pool = match arm.pool_size {
                    0 => None,
                    k => Some(task_pool(config, prepared, ctx, arm.task, k)?),
                };
                run_arm(config, prepared, ctx, arm.task, arm.kind, pool)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((contexts, outcomes))
    })?
}

/// Outcome of a full strategy comparison.
pub struct Comparison {
    pub report: Report,
    pub arms: Vec<ArmOutcome>,
}

/// Runs every configured strategy on every task for every seed and
/// aggregates test metrics. PFT_CLS must be among the strategies.
pub fn run_comparison(config: &ExperimentConfig) -> Result<Comparison> {
    config.validate()?;
    if !config.strategies.contains(&StrategyKind::PftCls) {
        return Err(Error::MissingBaseline);
    }
    let prepared = prepare(config)?;
    let mut arms = Vec::new();
    for task in 0..prepared.tasks.len() {
        for &kind in &config.strategies {
            let pool_size = match kind {
                StrategyKind::Dynamar => config.pool_size,
                StrategyKind::Fiter => 1,
                _ => 0,
            };
            arms.push(ArmSpec { task, kind, pool_size });
        }
    }
    let (_, outcomes) = run_arms(config, &prepared, &arms)?;
    let runs = outcomes
        .iter()
        .map(|o| RunRecord { task: o.task.clone(), strategy: o.strategy, seed: o.seed, metric: o.metric })
        .collect();
    let tasks = prepared.tasks.iter().map(|t| t.info.clone()).collect();
    let report = Report::aggregate(tasks, &config.strategies, runs)?;
    Ok(Comparison { report, arms: outcomes })
}

/// DYNAMAR at each pool size against PFT_CLS, over all tasks and seeds.
pub fn run_pool_ablation(config: &ExperimentConfig, sizes: &[usize]) -> Result<AblationCurve> {
    config.validate()?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::Config("pool sizes must be a non-empty list of positive integers".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(d) = sizes.iter().find(|s| !seen.insert(**s)) {
        return Err(Error::Config(format!("pool size {d} is listed twice")));
    }
    let mut ablation = config.clone();
    ablation.strategies = vec![StrategyKind::PftCls, StrategyKind::Dynamar];
    ablation.pool_size = *sizes.iter().max().expect("non-empty");
    let prepared = prepare(&ablation)?;
    let mut arms = Vec::new();
    for task in 0..prepared.tasks.len() {
        arms.push(ArmSpec { task, kind: StrategyKind::PftCls, pool_size: 0 });
        for &k in sizes {
            arms.push(ArmSpec { task, kind: StrategyKind::Dynamar, pool_size: k });
        }
    }
    let (_, outcomes) = run_arms(&ablation, &prepared, &arms)?;
    let runs = outcomes
        .into_iter()
        .map(|o| AblationRun {
            task: o.task,
            pool_size: (o.strategy == StrategyKind::Dynamar).then_some(o.pool_size),
            seed: o.seed,
            metric: o.metric,
        })
        .collect();
    let tasks: Vec<TaskInfo> = prepared.tasks.iter().map(|t| t.info.clone()).collect();
    AblationCurve::aggregate(&tasks, sizes, runs)
}

/// Writes the report files plus one `histories/<task>_<strategy>_<seed>.csv`
/// per arm and, when present, `checkpoints/<task>_<strategy>_<seed>.dmr`.
pub fn emit_comparison(comparison: &Comparison, dir: &Path) -> Result<()> {
    comparison.report.write(dir)?;
    let histories = dir.join("histories");
    std::fs::create_dir_all(&histories).map_err(|e| Error::io(&histories, e))?;
    for arm in &comparison.arms {
        let stem = format!("{}_{}_{}", arm.task, arm.strategy, arm.seed);
        let path = histories.join(format!("{stem}.csv"));
        std::fs::write(&path, arm.history.to_csv()).map_err(|e| Error::io(&path, e))?;
        if let Some(bytes) = &arm.checkpoint {
            let ckpt_dir = dir.join("checkpoints");
            std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
            let path = ckpt_dir.join(format!("{stem}.dmr"));
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
