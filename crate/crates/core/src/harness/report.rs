use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::finetune::StrategyKind;
use crate::metrics::{improvement_pct, mean, std_err, MetricKind};

/// One fine-tuning run's test metric.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub task: String,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskInfo {
    pub name: String,
    pub metric: MetricKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub task: String,
    pub strategy: StrategyKind,
    pub mean: f64,
    pub std_err: f64,
    /// Relative to PFT_CLS on the same task.
    pub improvement_pct: f64,
}

/// Aggregated comparison: rows follow the canonical strategy order, columns
/// the configured task order.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub tasks: Vec<TaskInfo>,
    pub strategies: Vec<StrategyKind>,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

impl Report {
    /// Builds the summary from raw runs. PFT_CLS must be among the
    /// strategies and every (task, strategy) cell needs at least one run.
    pub fn aggregate(tasks: Vec<TaskInfo>, strategies: &[StrategyKind], mut runs: Vec<RunRecord>) -> Result<Self> {
        if strategies.is_empty() {
            return Err(Error::Config("report needs at least one strategy".into()));
        }
        if !strategies.contains(&StrategyKind::PftCls) {
            return Err(Error::MissingBaseline);
        }
        let mut strategies = strategies.to_vec();
        strategies.sort();
        strategies.dedup();
        let task_pos = |name: &str| tasks.iter().position(|t| t.name == name);
        if let Some(r) = runs.iter().find(|r| task_pos(&r.task).is_none() || !strategies.contains(&r.strategy)) {
            return Err(Error::InvalidArgument(format!("run for unknown cell {}/{}", r.task, r.strategy)));
        }
        runs.sort_by_key(|r| (task_pos(&r.task), r.strategy, r.seed));

        let mut summary = Vec::new();
        for task in &tasks {
            let cell = |s: StrategyKind| -> Result<Vec<f64>> {
                let v: Vec<f64> =
                    runs.iter().filter(|r| r.task == task.name && r.strategy == s).map(|r| r.metric).collect();
                if v.is_empty() {
                    return Err(Error::InvalidArgument(format!("no runs for {}/{}", task.name, s)));
                }
                Ok(v)
            };
            let baseline = mean(&cell(StrategyKind::PftCls)?);
            for &s in &strategies {
                let values = cell(s)?;
                let m = mean(&values);
                summary.push(SummaryRow {
                    task: task.name.clone(),
                    strategy: s,
                    mean: m,
                    std_err: std_err(&values),
                    improvement_pct: improvement_pct(baseline, m, task.metric.direction())?,
                });
            }
        }
        Ok(Report { tasks, strategies, runs, summary })
    }

    pub fn row(&self, task: &str, strategy: StrategyKind) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.task == task && r.strategy == strategy)
    }

    /// Mean of the per-task improvements.
    pub fn average_improvement(&self, strategy: StrategyKind) -> f64 {
        let v: Vec<f64> = self.summary.iter().filter(|r| r.strategy == strategy).map(|r| r.improvement_pct).collect();
        mean(&v)
    }

    pub fn runs_csv(&self) -> String {
        let mut out = String::from("task,strategy,seed,metric\n");
        for r in &self.runs {
            writeln!(out, "{},{},{},{}", r.task, r.strategy, r.seed, r.metric).unwrap();
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("task,strategy,mean,improvement_pct\n");
        for r in &self.summary {
            writeln!(out, "{},{},{},{}", r.task, r.strategy, r.mean, r.improvement_pct).unwrap();
        }
        out
    }

    pub fn markdown(&self) -> String {
        let mut out = String::from("| Ft Method |");
        for t in &self.tasks {
            write!(out, " {} |", t.name).unwrap();
        }
        out.push_str(" Avg |\n|---|");
        for _ in &self.tasks {
            out.push_str("---|");
        }
        out.push_str("---|\n");
        for &s in &self.strategies {
            write!(out, "| {} |", s.label()).unwrap();
            for t in &self.tasks {
                let v = self.row(&t.name, s).map_or(f64::NAN, |r| r.improvement_pct);
                write!(out, " {} |", format_improvement(v)).unwrap();
            }
            writeln!(out, " {} |", format_improvement(self.average_improvement(s))).unwrap();
        }
        out
    }

    /// Writes `runs.csv`, `summary.csv` and `table.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in
            [("runs.csv", self.runs_csv()), ("summary.csv", self.summary_csv()), ("table.md", self.markdown())]
        {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// `+10.0%` style with one decimal; exact zero prints as `0`.
pub fn format_improvement(pct: f64) -> String {
    if pct == 0.0 {
        "0".into()
    } else {
        format!("{pct:+.1}%")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationPoint {
    pub pool_size: usize,
    /// Mean over tasks of DYNAMAR's improvement over PFT_CLS.
    pub avg_improvement: f64,
    /// Standard error of the per-seed average improvement.
    pub std_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCurve {
    pub points: Vec<AblationPoint>,
    pub runs: Vec<AblationRun>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub task: String,
    /// `None` for the PFT_CLS baseline.
    pub pool_size: Option<usize>,
    pub seed: u64,
    pub metric: f64,
}

impl AblationCurve {
    /// Aggregates per-seed runs into one point per pool size, in the order
    /// the sizes were requested.
    pub fn aggregate(tasks: &[TaskInfo], sizes: &[usize], runs: Vec<AblationRun>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Config("at least one pool size is required".into()));
        }
        let seeds: std::collections::BTreeSet<u64> = runs.iter().map(|r| r.seed).collect();
        let metric_of = |task: &str, size: Option<usize>, seed: Option<u64>| -> Result<Vec<f64>> {
            let v: Vec<f64> = runs
                .iter()
                .filter(|r| r.task == task && r.pool_size == size && seed.is_none_or(|s| s == r.seed))
                .map(|r| r.metric)
                .collect();
            if v.is_empty() {
                return Err(Error::InvalidArgument(format!("no ablation runs for {task} at {size:?}")));
            }
            Ok(v)
        };
        let mut points = Vec::with_capacity(sizes.len());
        for &size in sizes {
            let mut per_task = Vec::new();
            for t in tasks {
                let base = mean(&metric_of(&t.name, None, None)?);
                let pooled = mean(&metric_of(&t.name, Some(size), None)?);
                per_task.push(improvement_pct(base, pooled, t.metric.direction())?);
            }
            let mut per_seed = Vec::new();
            for &seed in &seeds {
                let mut v = Vec::new();
                for t in tasks {
                    let base = mean(&metric_of(&t.name, None, Some(seed))?);
                    let pooled = mean(&metric_of(&t.name, Some(size), Some(seed))?);
                    v.push(improvement_pct(base, pooled, t.metric.direction())?);
                }
                per_seed.push(mean(&v));
            }
            points.push(AblationPoint {
                pool_size: size,
                avg_improvement: mean(&per_task),
                std_err: std_err(&per_seed),
            });
        }
        Ok(AblationCurve { points, runs })
    }

    /// True when the average improvement never decreases with pool size.
    pub fn monotone(&self) -> bool {
        let mut pts: Vec<&AblationPoint> = self.points.iter().collect();
        pts.sort_by_key(|p| p.pool_size);
        pts.windows(2).all(|w| w[1].avg_improvement >= w[0].avg_improvement)
    }

    pub fn point(&self, pool_size: usize) -> Option<&AblationPoint> {
        self.points.iter().find(|p| p.pool_size == pool_size)
    }

    pub fn plotdata_csv(&self) -> String {
        let mut out = String::from("pool_size,avg_improvement\n");
        for p in &self.points {
            writeln!(out, "{},{}", p.pool_size, p.avg_improvement).unwrap();
        }
        out
    }

    pub fn runs_csv(&self) -> String {
        let mut out = String::from("task,pool_size,seed,metric\n");
        for r in &self.runs {
            let size = r.pool_size.map_or("baseline".to_string(), |s| s.to_string());
            writeln!(out, "{},{},{},{}", r.task, size, r.seed, r.metric).unwrap();
        }
        out
    }

    /// Writes `plotdata.csv` and `ablation_runs.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("plotdata.csv", self.plotdata_csv()), ("ablation_runs.csv", self.runs_csv())] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
