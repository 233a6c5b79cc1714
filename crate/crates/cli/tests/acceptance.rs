//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Run with `cargo test -p dynamar-cli --test acceptance`. Criteria listed in
//! [`KNOWN_GAPS`] still run and still print FAIL when they miss; only other
//! failures make the process exit non-zero.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng as _;

use dynamar::data::{gen_synthetic, GeneratorSpec, SyntheticTask};
use dynamar::encoder::{
    grad_check, head_loss, head_loss_and_grads, init_model, mlm_loss, mlm_loss_and_grads, Checkpoint, Head, HeadKind,
    Labels, MlmTarget, Mode, ModelConfig, Pooling,
};
use dynamar::finetune::{
    finetune_with_validator, mlm_eval_loss, pretrain_mlm, EarlyStopping, PretrainConfig, StopDecision, Strategy,
    StrategyEncoder, StrategyKind,
};
use dynamar::harness::{
    prepare, run_arm, run_comparison, seed_context, task_pool, ExperimentConfig, Report, RunRecord, TaskInfo,
};
use dynamar::metrics::{
    accuracy, average_improvement, improvement_pct, mean, prauc, rmse, std_err, Direction, MetricKind,
};
use dynamar::rng::seeded;
use dynamar::templating::{render, truncation_lengths, EncodedInput, PromptTemplate, Segment};
use dynamar::tokenizer::{train_bpe, TokenSeq, Vocab, CLS, MASK, NUM_SPECIALS};

/// Criteria expected to miss at desk scale; see the README.
const KNOWN_GAPS: &[u32] = &[6];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&workspace().join("configs").join(name)).expect("config")
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// 1 --------------------------------------------------------------------------

fn gradcheck() -> Outcome {
    let start = Instant::now();
    let vocab = 24;
    let config = ModelConfig::tiny(vocab);
    let batch = vec![
        EncodedInput::from_body(&[5, 9, 3, 12, 7, 7, 20, 6, 8, 11, 14, 5, 9, 10], 16),
        EncodedInput::from_body(&[17, 3, 22], 16),
        EncodedInput::from_body(&[6, 6, 13, 19, 21, 3, 5, 23], 16),
    ];
    let mut worst: f64 = 0.0;
    let mut checked = 0;

    let mut model = init_model(&config, 11).unwrap();
    let targets = [
        MlmTarget { seq: 0, pos: 3, id: 9 },
        MlmTarget { seq: 1, pos: 2, id: 15 },
        MlmTarget { seq: 2, pos: 8, id: 6 },
    ];
    let (_, grads) = mlm_loss_and_grads(&model, &batch, &targets, Mode::Eval).unwrap();
    let report = grad_check(&mut model, &grads, |m| mlm_loss(m, &batch, &targets), 1e-5, 64, 1).unwrap();
    worst = worst.max(report.max_rel_error());
    checked += report.tensors.iter().map(|t| t.checked).sum::<usize>();

    for (pooling, kind, labels) in [
        (Pooling::Cls, HeadKind::Classification { num_classes: 3 }, Labels::Classes(vec![2, 0, 1])),
        (Pooling::Mean, HeadKind::Regression, Labels::Values(vec![0.5, -1.0, 2.0])),
        (Pooling::Mask, HeadKind::Classification { num_classes: 2 }, Labels::Classes(vec![1, 0, 1])),
    ] {
        let mut model = init_model(&config, 11).unwrap();
        let mut head = Head::new(kind, config.dim, 4).unwrap();
        for (i, w) in head.weight_mut().data.iter_mut().enumerate() {
            *w = (i as f64 * 0.7).sin();
        }
        let (_, grads, head_grads) = head_loss_and_grads(&model, &head, &batch, pooling, &labels, Mode::Eval).unwrap();
        let report =
            grad_check(&mut model, &grads, |m| head_loss(m, &head, &batch, pooling, &labels), 1e-5, 64, 2).unwrap();
        worst = worst.max(report.max_rel_error());
        checked += report.tensors.iter().map(|t| t.checked).sum::<usize>();
        let report =
            grad_check(&mut head, &head_grads, |h| head_loss(&model, h, &batch, pooling, &labels), 1e-5, 64, 3)
                .unwrap();
        worst = worst.max(report.max_rel_error());
        checked += report.tensors.iter().map(|t| t.checked).sum::<usize>();
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst <= 1e-3 && elapsed < Duration::from_secs(60),
        format!("max relative error {worst:.2e} over {checked} entries (limit 1e-3), {}", secs(elapsed)),
    )
}

// 2 --------------------------------------------------------------------------

/// Average precision straight from the definition: an item's rank counts
/// every item scored higher plus equal-scored items listed no later.
fn brute_prauc(scores: &[f64], labels: &[bool]) -> f64 {
    let ahead = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| labels[i]).collect();
    let total: f64 = positives
        .iter()
        .map(|&i| {
            let rank = (0..scores.len()).filter(|&j| ahead(i, j)).count();
            let hits = positives.iter().filter(|&&j| ahead(i, j)).count();
            hits as f64 / rank as f64
        })
        .sum();
    total / positives.len() as f64
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out
}

fn metrics_oracle() -> Outcome {
    let mut rng = seeded(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=40);
        // coarse scores so ties are common
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let forced = rng.random_range(0..n);
        labels[forced] = true;
        worst = worst.max((prauc(&scores, &labels).unwrap() - brute_prauc(&scores, &labels)).abs());

        let k = rng.random_range(2..6);
        let predicted: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let hits = predicted.iter().zip(&gold).filter(|(p, g)| p == g).count();
        worst = worst.max((accuracy(&predicted, &gold).unwrap() - hits as f64 / n as f64).abs());

        let yhat: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mse = yhat.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
        worst = worst.max((rmse(&yhat, &y).unwrap() - mse.sqrt()).abs());
    }

    // every ordering of every labelling for n <= 6
    let mut extremes_ok = true;
    let mut cases = 0;
    for n in 1..=6usize {
        let orders = permutations(n);
        for mask in 1u32..(1 << n) {
            let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let p = labels.iter().filter(|&&l| l).count();
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for order in &orders {
                let scores: Vec<f64> = order.iter().map(|&r| r as f64).collect();
                let ap = prauc(&scores, &labels).unwrap();
                worst = worst.max((ap - brute_prauc(&scores, &labels)).abs());
                lo = lo.min(ap);
                hi = hi.max(ap);
            }
            let min = (1..=p).map(|j| j as f64 / (n - p + j) as f64).sum::<f64>() / p as f64;
            extremes_ok &= (hi - 1.0).abs() <= 1e-9 && (lo - min).abs() <= 1e-9;
            cases += 1;
        }
    }
    Outcome::new(
        worst <= 1e-9 && extremes_ok,
        format!("max deviation {worst:.1e} on 1000 random instances; PR-AUC extremes exact on {cases} labellings"),
    )
}

// 3 --------------------------------------------------------------------------

fn table_arithmetic() -> Outcome {
    let dpmr = average_improvement(&[0.8, 15.8, -0.5, 23.8]);
    let fiter = average_improvement(&[-0.7, 13.9, -1.1, 7.3]);
    let pp = improvement_pct(0.097, 0.074, Direction::LowerBetter).unwrap();
    // the pinned tolerance, widened by rounding noise of the f64 sums
    let within = |x: f64, target: f64, tol: f64| (x - target).abs() <= tol + 1e-9;

    let tasks = ["ve", "mm", "mg", "pp"];
    let metrics = [MetricKind::Prauc, MetricKind::Prauc, MetricKind::Accuracy, MetricKind::Rmse];
    let base = [0.5, 0.5, 0.5, 0.097];
    let cand = [0.504, 0.579, 0.4975, 0.074];
    let info = tasks.iter().zip(metrics).map(|(t, metric)| TaskInfo { name: t.to_string(), metric }).collect();
    let mut runs = Vec::new();
    for (i, t) in tasks.iter().enumerate() {
        for (strategy, metric) in [(StrategyKind::PftCls, base[i]), (StrategyKind::Dynamar, cand[i])] {
            runs.push(RunRecord { task: t.to_string(), strategy, seed: 0, metric });
        }
    }
    let report = Report::aggregate(info, &[StrategyKind::PftCls, StrategyKind::Dynamar], runs).unwrap();
    let table = report.markdown();
    let dpmr_row = table.lines().find(|l| l.starts_with("| DPMR")).unwrap_or_default().to_string();
    let baseline_row = table.lines().find(|l| l.starts_with("| PFt-CLS")).unwrap_or_default().to_string();
    let rendered = dpmr_row.ends_with("| +10.0% |") && baseline_row == "| PFt-CLS | 0 | 0 | 0 | 0 | 0 |";

    Outcome::new(
        within(dpmr, 10.0, 0.05) && within(fiter, 4.9, 0.05) && within(pp, 23.7, 0.15) && rendered,
        format!("DPMR avg {dpmr:+.3}, FiTeR avg {fiter:+.3}, 0.097->0.074 gives {pp:+.3}%, table row `{dpmr_row}`"),
    )
}

// 4 --------------------------------------------------------------------------

fn single_pool_equals_fiter() -> Outcome {
    let config = load_config("smoke.json");
    let prepared = prepare(&config).unwrap();
    let ctx = seed_context(&config, &prepared, config.seeds[0]).unwrap();
    let mut checked = 0;
    let mut identical = true;
    for task in 0..prepared.tasks.len() {
        let full = task_pool(&config, &prepared, &ctx, task, config.pool_size).unwrap();
        let single = task_pool(&config, &prepared, &ctx, task, 1).unwrap();
        let fiter = run_arm(&config, &prepared, &ctx, task, StrategyKind::Fiter, Some(full)).unwrap();
        let dynamar = run_arm(&config, &prepared, &ctx, task, StrategyKind::Dynamar, Some(single)).unwrap();
        identical &= fiter.history == dynamar.history
            && fiter.history.to_csv() == dynamar.history.to_csv()
            && fiter.metric.to_bits() == dynamar.metric.to_bits();
        checked += 1;
    }
    Outcome::new(identical, format!("histories, CSVs and test metrics bit-identical on {checked} tasks"))
}

// 5 --------------------------------------------------------------------------

fn early_stopping() -> Outcome {
    fn replay(sequence: &[f64], direction: Direction) -> (Option<usize>, Option<(usize, f64)>) {
        let mut stopper = EarlyStopping::new(3, direction);
        for (i, &m) in sequence.iter().enumerate() {
            if stopper.update(i + 1, m) == StopDecision::Stop {
                return (Some(i + 1), stopper.best());
            }
        }
        (None, stopper.best())
    }
    let nan = f64::NAN;
    let cases: [(&[f64], Direction, Option<usize>, Option<(usize, f64)>); 6] = [
        (&[0.5, 0.6, 0.6, 0.6, 0.6, 0.9], Direction::HigherBetter, Some(5), Some((2, 0.6))),
        (&[0.5, 0.4, 0.45, 0.49, 0.9], Direction::HigherBetter, Some(4), Some((1, 0.5))),
        (&[0.5, 0.4, 0.6, 0.5, 0.7, 0.6, 0.6], Direction::HigherBetter, None, Some((5, 0.7))),
        (&[1.0, 0.9, 0.9, 0.95, 0.8, 0.8, 0.8, 0.8], Direction::LowerBetter, Some(8), Some((5, 0.8))),
        (&[nan, 0.3, nan, nan, nan], Direction::LowerBetter, Some(5), Some((2, 0.3))),
        (&[0.2, 0.2, 0.2], Direction::HigherBetter, None, Some((1, 0.2))),
    ];
    let mut sequences_ok = 0;
    for (seq, dir, stop, best) in &cases {
        if replay(seq, *dir) == (*stop, *best) {
            sequences_ok += 1;
        }
    }

    // inside the training loop: the returned weights are the best snapshot
    let ds = gen_synthetic(&GeneratorSpec::new(SyntheticTask::ToyPair, 20, 3, 0.0)).unwrap();
    let texts: Vec<&str> = ds.texts().collect();
    let vocab = train_bpe(&texts, 80).unwrap();
    let data = dynamar::finetune::tokenize_dataset(&ds, &vocab);
    let model = init_model(
        &ModelConfig { layers: 1, dim: 16, heads: 2, max_len: 32, vocab_size: vocab.len(), dropout: 0.0 },
        5,
    )
    .unwrap();
    let head = Head::new(HeadKind::Classification { num_classes: 2 }, 16, 1).unwrap();
    let encoder = StrategyEncoder::new(&Strategy::PftCls, &vocab, 32);
    let schedule = dynamar::finetune::TrainingSchedule {
        max_steps: 100,
        learning_rate: 1e-3,
        batch_size: 4,
        ..dynamar::finetune::TrainingSchedule::few_shot(7)
    };
    let rigged = [0.5, 0.6, 0.55, 0.6, 0.6, 0.9];
    let mut snapshots = Vec::new();
    let out = finetune_with_validator(model, head, &encoder, &data, &schedule, MetricKind::Prauc, |step, m, h| {
        snapshots.push((step, Checkpoint::new(m.clone(), Some(h.clone()))));
        Ok(rigged[snapshots.len() - 1])
    })
    .unwrap();
    let h = &out.history;
    let snapshot_ok = h.validations == [(2, 0.5), (4, 0.6), (6, 0.55), (8, 0.6), (10, 0.6)]
        && (h.best_step, h.best_metric) == (4, 0.6)
        && h.stopped_early
        && Checkpoint::new(out.model, Some(out.head)).to_bytes().unwrap() == snapshots[1].1.to_bytes().unwrap();

    Outcome::new(
        sequences_ok == cases.len() && snapshot_ok,
        format!(
            "{sequences_ok}/{} rigged sequences stop where expected; best checkpoint restored: {snapshot_ok}",
            cases.len()
        ),
    )
}

// 6 --------------------------------------------------------------------------

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let config = load_config("few_shot.json");
    let comparison = run_comparison(&config).unwrap();
    let elapsed = start.elapsed();
    let prepared = prepare(&config).unwrap();
    let report = &comparison.report;

    let mut misses = Vec::new();
    let mut lines = Vec::new();
    for task in &prepared.tasks {
        let name = &task.info.name;
        let (floor, beats): (f64, fn(f64, f64) -> bool) = match task.info.metric {
            MetricKind::Prauc => (0.6, |m, f| m > f),
            MetricKind::Accuracy => {
                let k = task.train_pool.task_kind.num_classes().unwrap();
                (2.0 / k as f64, |m, f| m > f)
            }
            MetricKind::Rmse => {
                let y: Vec<f64> = task.test.iter().filter_map(|e| e.target.value()).collect();
                let mu = mean(&y);
                let constant = (y.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
                (constant, |m, f| m < f)
            }
        };
        let mut cells = Vec::new();
        for s in &report.strategies {
            let row = report.row(name, *s).unwrap();
            if !beats(row.mean, floor) {
                misses.push(format!("{name}/{s} {:.3}", row.mean));
            }
            cells.push(format!("{s}={:.3}", row.mean));
        }
        lines.push(format!("{name} [{} vs {floor:.3}]", cells.join(" ")));
    }

    // ordering on the pairwise task, soft within one standard error
    let pair = &prepared.tasks[0].info.name;
    let row = |s| report.row(pair, s).unwrap();
    let (d, f) = (row(StrategyKind::Dynamar), row(StrategyKind::Fiter));
    let gap1 = d.mean - f.mean;
    let se1 = (d.std_err.powi(2) + f.std_err.powi(2)).sqrt();
    let base = row(StrategyKind::PftCls).mean;
    let imp_se = |r: &dynamar::harness::SummaryRow| 100.0 * r.std_err / base.abs();
    let best_np = [StrategyKind::NpPrefix, StrategyKind::NpSuffix]
        .into_iter()
        .map(row)
        .max_by(|a, b| a.improvement_pct.total_cmp(&b.improvement_pct))
        .unwrap();
    let gap2 = f.improvement_pct - best_np.improvement_pct;
    let se2 = (imp_se(f).powi(2) + imp_se(best_np).powi(2)).sqrt();
    let ordering = |gap: f64, se: f64| {
        if gap >= 0.0 {
            "holds"
        } else if -gap <= se {
            "violated within 1 SE"
        } else {
            "violated"
        }
    };
    let order1 = ordering(gap1, se1);
    let order2 = ordering(gap2, se2);

    let pass =
        misses.is_empty() && order1 != "violated" && order2 != "violated" && elapsed < Duration::from_secs(20 * 60);
    let mut detail = format!(
        "{}; DPMR-FiTeR on {pair} {gap1:+.3} (se {se1:.3}) {order1}; FiTeR-NP improvement {gap2:+.1} (se {se2:.1}) \
         {order2}; {}",
        lines.join("; "),
        secs(elapsed)
    );
    if !misses.is_empty() {
        detail.push_str(&format!("; below chance: {}", misses.join(", ")));
    }
    Outcome::new(pass, detail)
}

// 7 --------------------------------------------------------------------------

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines.map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect()).collect()
}

fn pool_ablation() -> Outcome {
    let out = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_dynamar"))
        .args(["ablate", "--config"])
        .arg(workspace().join("configs/ablation.json"))
        .args(["--pool-sizes", "1,3,5", "--out"])
        .arg(out.path())
        .output()
        .unwrap();
    if !status.status.success() {
        return Outcome::new(false, format!("ablate failed: {}", String::from_utf8_lossy(&status.stderr)));
    }
    let plot = read_csv(&out.path().join("plotdata.csv"));
    let sizes: Vec<&str> = plot.iter().map(|r| r["pool_size"].as_str()).collect();
    let value =
        |k: &str| plot.iter().find(|r| r["pool_size"] == k).map(|r| r["avg_improvement"].parse::<f64>().unwrap());

    // per-seed improvements for the standard errors
    let runs = read_csv(&out.path().join("ablation_runs.csv"));
    let metric = |size: &str, seed: &str| {
        runs.iter().find(|r| r["pool_size"] == size && r["seed"] == seed).map(|r| r["metric"].parse::<f64>().unwrap())
    };
    let seeds: Vec<String> = runs.iter().filter(|r| r["pool_size"] == "baseline").map(|r| r["seed"].clone()).collect();
    let per_seed = |size: &str| -> Vec<f64> {
        seeds
            .iter()
            .map(|s| {
                improvement_pct(metric("baseline", s).unwrap(), metric(size, s).unwrap(), Direction::HigherBetter)
                    .unwrap()
            })
            .collect()
    };
    let (i1, i5) = (value("1").unwrap_or(f64::NAN), value("5").unwrap_or(f64::NAN));
    let se = (std_err(&per_seed("1")).powi(2) + std_err(&per_seed("5")).powi(2)).sqrt();
    Outcome::new(
        sizes == ["1", "3", "5"] && seeds.len() == 5 && i5 >= i1 - se,
        format!(
            "plotdata sizes {sizes:?}; improvement at 5 {i5:+.2}% vs at 1 {i1:+.2}% (se {se:.2}) over {} seeds",
            seeds.len()
        ),
    )
}

// 8 --------------------------------------------------------------------------

fn mlm_sanity() -> Outcome {
    let start = Instant::now();
    let mut texts = Vec::new();
    for task in [SyntheticTask::ToyPair, SyntheticTask::ToyGenre, SyntheticTask::ToyPrice] {
        let ds = gen_synthetic(&GeneratorSpec::new(task, 400, 7, 0.05)).unwrap();
        texts.extend(ds.texts().map(str::to_string));
    }
    let vocab = train_bpe(&texts, 64).unwrap();
    let corpus: Vec<TokenSeq> = texts.iter().map(|t| vocab.encode(t)).collect();
    let model = init_model(
        &ModelConfig { layers: 2, dim: 64, heads: 4, max_len: 48, vocab_size: vocab.len(), dropout: 0.0 },
        12,
    )
    .unwrap();
    let config = PretrainConfig { steps: 200, batch_size: 64, learning_rate: 3e-3, mask_rate: 0.15, seed: 3 };
    let a = pretrain_mlm(model.clone(), &corpus, &config).unwrap();
    let b = pretrain_mlm(model.clone(), &corpus, &config).unwrap();
    let bits = |l: &[f64]| l.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let curves_equal = bits(&a.losses) == bits(&b.losses);
    let ckpt = |m| Checkpoint::new(m, None).to_bytes().unwrap();
    let checkpoints_equal = ckpt(a.model.clone()) == ckpt(b.model);

    let before = mlm_eval_loss(&model, &corpus, 0.15, 99, corpus.len()).unwrap();
    let after = mlm_eval_loss(&a.model, &corpus, 0.15, 99, corpus.len()).unwrap();
    let ratio = after / before;
    let head = mean(&a.losses[..10]);
    let tail = mean(&a.losses[a.losses.len() - 10..]);
    Outcome::new(
        ratio <= 0.5 && curves_equal && checkpoints_equal,
        format!(
            "held-out corruption loss {before:.3} -> {after:.3} (ratio {ratio:.2}); training loss {head:.3} -> \
             {tail:.3}; loss curves identical: {curves_equal}; checkpoints identical: {checkpoints_equal}; {}",
            secs(start.elapsed())
        ),
    )
}

// 9 --------------------------------------------------------------------------

/// Largest-remainder shares computed with exact integer quotas.
fn oracle_lengths(lengths: &[usize], budget: usize) -> Vec<usize> {
    let total: u128 = lengths.iter().map(|&l| l as u128).sum();
    if total <= budget as u128 {
        return lengths.to_vec();
    }
    let quotas: Vec<(u128, u128)> =
        lengths.iter().map(|&l| (budget as u128 * l as u128 / total, budget as u128 * l as u128 % total)).collect();
    let mut shares: Vec<usize> = quotas.iter().map(|q| q.0 as usize).collect();
    let mut left = budget - shares.iter().sum::<usize>();
    while left > 0 {
        // largest remainder first, earliest index on ties
        let mut pick = None;
        for (i, q) in quotas.iter().enumerate() {
            if shares[i] as u128 == q.0 && pick.is_none_or(|p: usize| q.1 > quotas[p].1) {
                pick = Some(i);
            }
        }
        shares[pick.unwrap()] += 1;
        left -= 1;
    }
    shares
}

const WORDS: [&str; 12] =
    ["price", "is", "the", "genre", "same", "product", "music", "and", "are", "they", "what", "of"];

fn random_template(rng: &mut dynamar::rng::Rng) -> PromptTemplate {
    let arity = rng.random_range(1..=2);
    let mut pieces: Vec<String> =
        (0..rng.random_range(0..6)).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string()).collect();
    let mut markers = vec!["[MASK]".to_string()];
    if arity == 1 {
        markers.push("{x}".into());
    } else {
        markers.push("{x1}".into());
        markers.push("{x2}".into());
    }
    for m in markers {
        let at = rng.random_range(0..=pieces.len());
        pieces.insert(at, m);
    }
    let glue: String = if rng.random_bool(0.5) { " ".into() } else { ". ".into() };
    PromptTemplate::parse(&pieces.join(&glue)).unwrap()
}

fn render_invariants() -> Outcome {
    let vocab: Vocab = train_bpe(&WORDS, 60).unwrap();
    let mut rng = seeded(9);
    let mut violations = Vec::new();
    let mut renders = 0;
    while renders < 10_000 {
        let template = random_template(&mut rng);
        let slots = template.arity().count();
        let docs: Vec<TokenSeq> = (0..slots)
            .map(|_| {
                let n = rng.random_range(0..40);
                (0..n).map(|_| rng.random_range(NUM_SPECIALS..vocab.len()) as u32).collect()
            })
            .collect();
        let literal: Vec<TokenSeq> = template
            .segments()
            .iter()
            .filter_map(|s| match s {
                Segment::Literal(t) => Some(vocab.encode(t)),
                _ => None,
            })
            .collect();
        let overhead = literal.iter().map(Vec::len).sum::<usize>() + 3;
        let max_len = rng.random_range(overhead..overhead + 50);
        renders += 1;
        let enc = match render(&template, &docs, max_len, &vocab) {
            Ok(e) => e,
            Err(e) => {
                violations.push(format!("{:?}: {e}", template.source()));
                continue;
            }
        };
        let lengths: Vec<usize> = docs.iter().map(Vec::len).collect();
        let shares = oracle_lengths(&lengths, max_len - overhead);
        let mut expected = vec![CLS];
        let mut lit = literal.iter();
        for s in template.segments() {
            match s {
                Segment::Literal(_) => expected.extend(lit.next().unwrap()),
                Segment::Slot(i) => expected.extend(&docs[*i][..shares[*i]]),
                Segment::Mask => expected.push(MASK),
            }
        }
        let problem = if let Err(e) = enc.check(max_len) {
            Some(e)
        } else if enc.ids[0] != CLS || enc.ids.len() != max_len {
            Some("layout".into())
        } else if enc.valid_ids().iter().filter(|&&t| t == MASK).count() != 1 {
            Some("mask count".into())
        } else if enc.valid_ids()[..enc.attention_length - 1] != expected[..] {
            Some("literal text or document shares differ".into())
        } else {
            None
        };
        if let Some(p) = problem {
            violations.push(format!("{:?} max_len {max_len}: {p}", template.source()));
        }
    }

    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=5);
        let lengths: Vec<usize> = (0..n).map(|_| rng.random_range(0..200)).collect();
        let budget = rng.random_range(0..=lengths.iter().sum::<usize>() + 5);
        if truncation_lengths(&lengths, budget) != oracle_lengths(&lengths, budget) {
            mismatches += 1;
        }
    }
    let mut detail =
        format!("{renders} renders, {} violations; truncation mismatches {mismatches}/1000", violations.len());
    if let Some(v) = violations.first() {
        detail.push_str(&format!("; first: {v}"));
    }
    Outcome::new(violations.is_empty() && mismatches == 0, detail)
}

// 10 -------------------------------------------------------------------------

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "2")] {
        let dir = root.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_dynamar"))
            .args(["run", "--config"])
            .arg(workspace().join("configs/smoke.json"))
            .arg("--out")
            .arg(&dir)
            .env("DYNAMAR_THREADS", threads)
            .output()
            .unwrap();
        if !status.status.success() {
            return Outcome::new(false, format!("run failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        outputs.push(files_under(&dir));
    }
    let csvs = outputs[0].keys().filter(|k| k.ends_with(".csv")).count();
    Outcome::new(
        csvs >= 2 && outputs[0] == outputs[1],
        format!("{} files ({csvs} CSV) byte-identical across two runs with 1 and 2 workers", outputs[0].len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "gradient check", gradcheck),
        (2, "metrics against brute force", metrics_oracle),
        (3, "table arithmetic", table_arithmetic),
        (4, "single-template pool matches FiTeR", single_pool_equals_fiter),
        (5, "early stopping", early_stopping),
        (6, "end-to-end few-shot comparison", end_to_end),
        (7, "pool-size ablation", pool_ablation),
        (8, "MLM pre-training sanity", mlm_sanity),
        (9, "template rendering invariants", render_invariants),
        (10, "determinism of `dynamar run`", determinism),
    ];
    let filter: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut passed = 0;
    let mut ran = 0;
    let mut unexpected = Vec::new();
    for (id, name, check) in criteria {
        if filter.as_ref().is_some_and(|f| !f.contains(&id)) {
            continue;
        }
        ran += 1;
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let verdict = if outcome.pass {
            passed += 1;
            "PASS"
        } else {
            if !KNOWN_GAPS.contains(&id) {
                unexpected.push(id);
            }
            "FAIL"
        };
        let note = if !outcome.pass && KNOWN_GAPS.contains(&id) { " [known gap]" } else { "" };
        println!("{verdict} {id:>2} {name}{note}: {}", outcome.detail);
    }
    println!("acceptance: {passed}/{ran} criteria passed");
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
