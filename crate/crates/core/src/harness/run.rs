use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use crate::env::{
    behavior_policy, biased_grid_model, build_grid, BehaviorKind, BiasKind, BiasSpec,
};
use crate::error::{Error, Result};
use crate::mdp::optimal_deterministic;
use crate::model::collect_from_occupancy;
use crate::sar::SarConfig;
use crate::train::{
    sambo_train, train_pg_model_bias, train_pg_policy_shift, updates_to_fraction, CurveRecord,
    RewardMode, TrainConfig, TrainingCurve,
};
use crate::verify::{run_all, VerificationReport};

/// Column order of every emitted curve file.
pub const CSV_COLUMNS: [&str; 5] = [
    "iteration",
    "true_env_return",
    "model_estimated_return",
    "kl_to_behavior",
    "mean_sar",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub mode: String,
    pub seed: u64,
    pub curve: TrainingCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Stat {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub seeds: usize,
    pub final_true_return: Stat,
    pub final_model_return: Stat,
    pub mean_kl: Stat,
    pub updates_to_95: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimal_return: Option<f64>,
    pub modes: BTreeMap<String, ModeSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub verification: Vec<VerificationReport>,
    pub files: Vec<PathBuf>,
    pub passed: bool,
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

type Job = Box<dyn Fn() -> Result<TrainingCurve> + Send + Sync>;

fn jobs(cfg: &ExperimentConfig) -> Result<Vec<(String, u64, Job)>> {
    let env = build_grid(&cfg.grid)?;
    let mut out: Vec<(String, u64, Job)> = Vec::new();
    let seeded = |seed: u64| TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    match cfg.experiment.kind {
        ExperimentKind::ToyModelBias => {
            for (tag, kind) in [("om", BiasKind::Overestimating), ("um", BiasKind::Underestimating)] {
                let bias = BiasSpec {
                    kind,
                    epsilon: cfg.bias.epsilon,
                };
                let model = biased_grid_model(&cfg.grid, &env, &bias)?;
                for (mtag, mode) in [("vanilla", RewardMode::Vanilla), ("sar", RewardMode::Sar)] {
                    for &seed in &cfg.experiment.seeds {
                        let (env, model, sar, train) =
                            (env.clone(), model.clone(), cfg.sar.clone(), seeded(seed));
                        out.push((
                            format!("{tag}-{mtag}"),
                            seed,
                            Box::new(move || {
                                Ok(train_pg_model_bias(&env, &model, mode, &sar, &train)?.1)
                            }),
                        ));
                    }
                }
            }
        }
        ExperimentKind::ToyPolicyShift => {
            for &behavior in &cfg.toy.behaviors {
                let pi_b = behavior_policy(cfg.grid.n_cells, behavior, cfg.toy.opposite_sharpness);
                let btag = match behavior {
                    BehaviorKind::Uniform => "uniform",
                    BehaviorKind::Opposite => "opposite",
                };
                for (mtag, mode) in [("vanilla", RewardMode::Vanilla), ("sar", RewardMode::Sar)] {
                    for &seed in &cfg.experiment.seeds {
                        let (env, pi_b, sar, train, src) = (
                            env.clone(),
                            pi_b.clone(),
                            cfg.sar.clone(),
                            seeded(seed),
                            cfg.toy.state_source,
                        );
                        out.push((
                            format!("{btag}-{mtag}"),
                            seed,
                            Box::new(move || {
                                Ok(train_pg_policy_shift(&env, &pi_b, mode, &sar, src, &train)?.1)
                            }),
                        ));
                    }
                }
            }
        }
        ExperimentKind::Sambo | ExperimentKind::Ablation => {
            let pi_b = behavior_policy(
                cfg.grid.n_cells,
                cfg.sambo.behavior,
                cfg.sambo.behavior_sharpness,
            );
            let variants: Vec<(&str, SarConfig)> = if cfg.experiment.kind == ExperimentKind::Sambo {
                vec![("sambo", cfg.sar.clone())]
            } else {
                vec![
                    ("sambo", cfg.sar.clone()),
                    ("wo-mb", SarConfig { alpha: 0.0, ..cfg.sar.clone() }),
                    ("wo-ps", SarConfig { beta: 0.0, ..cfg.sar.clone() }),
                    ("logr", SarConfig { alpha: 0.0, beta: 0.0, ..cfg.sar.clone() }),
                ]
            };
            for (tag, sar) in variants {
                for &seed in &cfg.experiment.seeds {
                    let (env, pi_b, sar, train, n) = (
                        env.clone(),
                        pi_b.clone(),
                        sar.clone(),
                        seeded(seed),
                        cfg.sambo.dataset_size,
                    );
                    out.push((
                        tag.to_string(),
                        seed,
                        Box::new(move || {
                            let data = collect_from_occupancy(&env, &pi_b, n, seed)?;
                            Ok(sambo_train(&data, &env, &sar, &train)?.curve)
                        }),
                    ));
                }
            }
        }
        ExperimentKind::Verify => {}
    }
    Ok(out)
}

/// Run every (mode, seed) cell without touching the filesystem.
pub fn run_cells(cfg: &ExperimentConfig) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let jobs = jobs(cfg)?;
    pool(cfg.experiment.threads)?.install(|| {
        jobs.par_iter()
            .map(|(mode, seed, job)| {
                Ok(CellResult {
                    mode: mode.clone(),
                    seed: *seed,
                    curve: job()?,
                })
            })
            .collect()
    })
}

pub fn curve_to_csv(curve: &TrainingCurve) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &curve.records {
        w.serialize(r)?;
    }
    if curve.records.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_curve_csv(path: &Path) -> Result<TrainingCurve> {
    let mut r = csv::Reader::from_path(path)?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if headers != CSV_COLUMNS {
        return Err(Error::Schema(format!(
            "{} has columns {:?}",
            path.display(),
            headers
        )));
    }
    let records = r
        .deserialize::<CurveRecord>()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(TrainingCurve { records })
}

pub fn summarize(cells: &[CellResult]) -> BTreeMap<String, ModeSummary> {
    let mut grouped: BTreeMap<String, Vec<&TrainingCurve>> = BTreeMap::new();
    for c in cells {
        grouped.entry(c.mode.clone()).or_default().push(&c.curve);
    }
    grouped
        .into_iter()
        .map(|(mode, curves)| {
            let pick = |f: &dyn Fn(&TrainingCurve) -> f64| {
                Stat::of(&curves.iter().map(|c| f(c)).collect::<Vec<_>>())
            };
            let summary = ModeSummary {
                seeds: curves.len(),
                final_true_return: pick(&|c| c.final_return()),
                final_model_return: pick(&|c| {
                    c.records.last().map_or(f64::NAN, |r| r.model_estimated_return)
                }),
                mean_kl: pick(&|c| c.mean_kl()),
                updates_to_95: pick(&|c| updates_to_fraction(&c.returns(), 0.95) as f64),
            };
            (mode, summary)
        })
        .collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Execute the configured experiment, writing one CSV per cell plus
/// `summary.json` under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let kind = cfg.experiment.kind;
    let mut summary = RunSummary {
        kind,
        seeds: cfg.experiment.seeds.clone(),
        optimal_return: None,
        modes: BTreeMap::new(),
        verification: Vec::new(),
        files: Vec::new(),
        passed: true,
    };
    if kind == ExperimentKind::Verify {
        let reports = pool(cfg.experiment.threads)?.install(|| run_all(&cfg.verify))?;
        summary.passed = reports.iter().all(|r| r.passed);
        summary.verification = reports;
    } else {
        summary.optimal_return = Some(optimal_deterministic(&build_grid(&cfg.grid)?)?.1);
        let cells = run_cells(cfg)?;
        for c in &cells {
            let path = out_dir.join(format!("{}_{}_seed{}.csv", kind.name(), c.mode, c.seed));
            write(&path, &curve_to_csv(&c.curve)?)?;
            summary.files.push(path);
        }
        summary.modes = summarize(&cells);
    }
    let path = out_dir.join("summary.json");
    write(&path, &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
