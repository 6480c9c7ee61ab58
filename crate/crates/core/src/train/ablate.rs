//! Fixed ablation grids.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::run::run_experiment;
use super::ExperimentConfig;
use crate::data::UtteranceSample;
use crate::error::{Error, Result};
use crate::fusion::{FusionMode, ModalityMask};
use crate::metrics::Metrics;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Modality,
    Lvc,
    Lambda,
    Layers,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modality" => Ok(Suite::Modality),
            "lvc" => Ok(Suite::Lvc),
            "lambda" => Ok(Suite::Lambda),
            "layers" => Ok(Suite::Layers),
            _ => Err(Error::Config(format!(
                "unknown ablation suite {s:?}; expected modality, lvc, lambda or layers"
            ))),
        }
    }
}

pub const LAMBDA_GRID: [f64; 5] = [0.0, 0.01, 0.1, 1.0, 10.0];
pub const LAYER_GRID: [(usize, usize); 5] = [(12, 0), (11, 1), (10, 2), (9, 3), (8, 4)];

impl Suite {
    fn key_columns(self) -> &'static [&'static str] {
        match self {
            Suite::Modality => &["Modality"],
            Suite::Lvc => &["Models"],
            Suite::Lambda => &["lambda"],
            Suite::Layers => &["method", "Shallow transformer", "Deep transformer"],
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    /// Values for the suite's key columns.
    pub keys: Vec<String>,
    pub config: ExperimentConfig,
}

/// The suite's rows applied to `base`, in table order.
pub fn suite_rows(suite: Suite, base: &ExperimentConfig) -> Vec<AblationRow> {
    let row = |keys: Vec<String>, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut config = base.clone();
        f(&mut config);
        AblationRow { keys, config }
    };
    match suite {
        Suite::Modality => ModalityMask::ablation_rows()
            .into_iter()
            .map(|m| row(vec![m.to_string()], &|c| c.modalities = m))
            .collect(),
        Suite::Lvc => [(false, "w/o LVC block"), (true, "w/ LVC block")]
            .into_iter()
            .map(|(on, label)| row(vec![label.into()], &|c| c.model.use_lvc = on))
            .collect(),
        Suite::Lambda => LAMBDA_GRID
            .into_iter()
            .map(|l| row(vec![l.to_string()], &|c| c.loss.balance = l))
            .collect(),
        Suite::Layers => LAYER_GRID
            .into_iter()
            .map(|(s, d)| {
                let method = if d == 0 { "concat" } else { "Attention" };
                row(vec![method.into(), s.to_string(), d.to_string()], &|c| {
                    c.model.n_shallow = s;
                    c.model.n_deep = d;
                    c.model.fusion = if d == 0 {
                        FusionMode::Concat
                    } else {
                        FusionMode::CrossAttention
                    };
                })
            })
            .collect(),
    }
}

#[derive(Clone, Debug)]
pub struct RowResult {
    pub keys: Vec<String>,
    pub per_seed: Vec<Metrics>,
}

impl RowResult {
    pub fn mean(&self) -> Metrics {
        let n = self.per_seed.len() as f64;
        Metrics {
            accuracy: self.per_seed.iter().map(|m| m.accuracy).sum::<f64>() / n,
            weighted_f1: self.per_seed.iter().map(|m| m.weighted_f1).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationTable {
    pub suite: Suite,
    pub seeds: Vec<u64>,
    pub rows: Vec<RowResult>,
}

impl AblationTable {
    /// Tab-separated table: key columns, mean ACC and WF1 in percent, then
    /// ACC and WF1 for every seed.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let mut header: Vec<String> = self.suite.key_columns().iter().map(|c| c.to_string()).collect();
        header.push("ACC(%)".into());
        header.push("WF1(%)".into());
        for seed in &self.seeds {
            header.push(format!("ACC(%) seed {seed}"));
            header.push(format!("WF1(%) seed {seed}"));
        }
        let _ = writeln!(s, "{}", header.join("\t"));
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        for row in &self.rows {
            let mean = row.mean();
            let mut cells = row.keys.clone();
            cells.push(pct(mean.accuracy));
            cells.push(pct(mean.weighted_f1));
            for m in &row.per_seed {
                cells.push(pct(m.accuracy));
                cells.push(pct(m.weighted_f1));
            }
            let _ = writeln!(s, "{}", cells.join("\t"));
        }
        s
    }
}

/// Runs every configuration on `threads` worker threads. Each run is
/// independent and seeded, so results do not depend on scheduling.
pub fn run_grid(configs: &[ExperimentConfig], samples: &[UtteranceSample], threads: usize) -> Vec<Result<Metrics>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Metrics>>>> = Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(configs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(config) = configs.get(i) else { break };
                let r = run_experiment(config, samples).map(|run| run.report.test);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every index ran"))
        .collect()
}

pub fn ablate(
    suite: Suite,
    base: &ExperimentConfig,
    samples: &[UtteranceSample],
    seeds: &[u64],
    threads: usize,
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let rows = suite_rows(suite, base);
    let mut configs = Vec::with_capacity(rows.len() * seeds.len());
    for row in &rows {
        row.config.validate()?;
        for &seed in seeds {
            configs.push(ExperimentConfig {
                seed,
                ..row.config.clone()
            });
        }
    }
    let mut results = run_grid(&configs, samples, threads).into_iter();
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let per_seed = (0..seeds.len())
            .map(|_| results.next().expect("one result per run"))
            .collect::<Result<Vec<_>>>()?;
        out.push(RowResult {
            keys: row.keys,
            per_seed,
        });
    }
    Ok(AblationTable {
        suite,
        seeds: seeds.to_vec(),
        rows: out,
    })
}
