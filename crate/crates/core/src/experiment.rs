//! Seeded sweeps over policies, generation intervals and latency thresholds.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{self, PolicySpec, SimConfig, Validator};
use crate::error::{ConfigError, FieldError, SimError};
use crate::metrics::{latency_percentile, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPolicy {
    pub name: String,
    #[serde(flatten)]
    pub spec: PolicySpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub lambda_d: Vec<u64>,
    pub delta: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub base: SimConfig,
    #[serde(default)]
    pub sweep: SweepAxes,
    pub seeds: Vec<u64>,
    /// Defaults to the base config's policy when empty.
    #[serde(default)]
    pub policies: Vec<NamedPolicy>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub workers: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// One simulation in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub policy: String,
    pub lambda_d: u64,
    pub delta: u64,
    pub seed: u64,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub policy: String,
    pub lambda_d: u64,
    pub delta: u64,
    pub seed: u64,
    pub r_drop: f64,
    pub r_delay: f64,
    pub r_server: f64,
    pub r_rsu: f64,
    pub p995_latency: Option<f64>,
    pub generated: u64,
    pub in_flight: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub policy: String,
    pub lambda_d: u64,
    pub delta: u64,
    pub n_seeds: usize,
    pub r_drop_mean: f64,
    pub r_drop_std: f64,
    pub r_delay_mean: f64,
    pub r_delay_std: f64,
    pub r_server_mean: f64,
    pub r_server_std: f64,
    pub r_rsu_mean: f64,
    pub r_rsu_std: f64,
    pub p995_latency_mean: Option<f64>,
    pub p995_latency_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = config::read(path)?;
        let mut spec: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.base.resolve_paths(base);
        if spec.output_dir.is_relative() {
            spec.output_dir = base.join(&spec.output_dir);
        }
        let errors = spec.validate();
        if errors.is_empty() {
            Ok(spec)
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    pub fn validate(&self) -> Vec<FieldError> {
        let mut v = Validator::default();
        v.nested("base", self.base.validate());
        v.check(!self.seeds.is_empty(), "seeds", "seed list must not be empty");
        for (i, l) in self.sweep.lambda_d.iter().enumerate() {
            v.check(*l >= 1, &format!("sweep.lambda_d[{i}]"), "lambda_d ≥ 1");
        }
        for (i, d) in self.sweep.delta.iter().enumerate() {
            v.check(*d >= 1, &format!("sweep.delta[{i}]"), "delta ≥ 1");
        }
        let mut names = std::collections::HashSet::new();
        for (i, p) in self.policies.iter().enumerate() {
            let path = format!("policies[{i}]");
            v.check(
                names.insert(p.name.as_str()),
                &path,
                format!("duplicate policy name {}", p.name),
            );
            if let PolicySpec::Fp(fp) = &p.spec {
                config::validate_fp(fp, &format!("{path} ({})", p.name), &mut v);
            }
        }
        v.errors
    }

    fn policies(&self) -> Vec<NamedPolicy> {
        if self.policies.is_empty() {
            vec![NamedPolicy {
                name: self.base.policy.label().to_string(),
                spec: self.base.policy.clone(),
            }]
        } else {
            self.policies.clone()
        }
    }

    /// Every run of the sweep in output order: policy, then lambda_d, then
    /// delta, then seed.
    pub fn jobs(&self) -> Vec<Job> {
        let or_base = |axis: &[u64], base: u64| if axis.is_empty() { vec![base] } else { axis.to_vec() };
        let lambdas = or_base(&self.sweep.lambda_d, self.base.lambda_d);
        let deltas = or_base(&self.sweep.delta, self.base.delta);
        let mut jobs = Vec::new();
        for p in self.policies() {
            for &lambda_d in &lambdas {
                for &delta in &deltas {
                    for &seed in &self.seeds {
                        let mut config = self.base.clone();
                        config.policy = p.spec.clone();
                        config.lambda_d = lambda_d;
                        config.delta = delta;
                        config.seed = seed;
                        jobs.push(Job {
                            policy: p.name.clone(),
                            lambda_d,
                            delta,
                            seed,
                            config,
                        });
                    }
                }
            }
        }
        jobs
    }
}

pub fn run_job(job: &Job) -> Result<ResultRow, SimError> {
    let out = crate::engine::run(&job.config)?;
    let report = MetricsReport::new(&out.metrics, &out.records);
    Ok(ResultRow {
        policy: job.policy.clone(),
        lambda_d: job.lambda_d,
        delta: job.delta,
        seed: job.seed,
        r_drop: report.r_drop,
        r_delay: report.r_delay,
        r_server: report.r_server,
        r_rsu: report.r_rsu,
        p995_latency: latency_percentile(&out.records, 0.995).ok(),
        generated: report.generated,
        in_flight: report.in_flight,
    })
}

/// Runs every job on a worker pool. Rows come back in job order whatever
/// order the workers finish in; the first failing job (in job order) aborts
/// the experiment.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResults, SimError> {
    let jobs = spec.jobs();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| SimError::Input(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Result<ResultRow, SimError>> = pool.install(|| jobs.par_iter().map(run_job).collect());
    let mut rows = Vec::with_capacity(jobs.len());
    for (job, outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) => {
                return Err(SimError::Experiment {
                    policy: job.policy.clone(),
                    lambda_d: job.lambda_d,
                    delta: job.delta,
                    seed: job.seed,
                    config: serde_json::to_string(&job.config).unwrap_or_default(),
                    source: Box::new(e),
                })
            }
        }
    }
    let aggregates = aggregate(&rows);
    Ok(ExperimentResults { rows, aggregates })
}

/// Mean and sample standard deviation over seeds for each
/// (policy, lambda_d, delta), in first-appearance order.
pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut groups: Vec<(&str, u64, u64, Vec<&ResultRow>)> = Vec::new();
    for r in rows {
        match groups
            .iter_mut()
            .find(|g| g.0 == r.policy && g.1 == r.lambda_d && g.2 == r.delta)
        {
            Some(g) => g.3.push(r),
            None => groups.push((&r.policy, r.lambda_d, r.delta, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(policy, lambda_d, delta, members)| {
            let stat = |f: fn(&ResultRow) -> f64| mean_std(&members.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (r_drop_mean, r_drop_std) = stat(|r| r.r_drop);
            let (r_delay_mean, r_delay_std) = stat(|r| r.r_delay);
            let (r_server_mean, r_server_std) = stat(|r| r.r_server);
            let (r_rsu_mean, r_rsu_std) = stat(|r| r.r_rsu);
            let p995: Vec<f64> = members.iter().filter_map(|r| r.p995_latency).collect();
            let (p_mean, p_std) = if p995.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&p995);
                (Some(m), Some(s))
            };
            AggregateRow {
                policy: policy.to_string(),
                lambda_d,
                delta,
                n_seeds: members.len(),
                r_drop_mean,
                r_drop_std,
                r_delay_mean,
                r_delay_std,
                r_server_mean,
                r_server_std,
                r_rsu_mean,
                r_rsu_std,
                p995_latency_mean: p_mean,
                p995_latency_std: p_std,
            }
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), SimError> {
    let csv_err = |source| SimError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))?;
    Ok(())
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<(), SimError> {
    write_csv(path, rows)
}

pub fn write_aggregates(path: &Path, rows: &[AggregateRow]) -> Result<(), SimError> {
    write_csv(path, rows)
}

/// Writes `results.csv` and `aggregate.csv` into `dir`.
pub fn write_experiment(dir: &Path, results: &ExperimentResults) -> Result<(), SimError> {
    std::fs::create_dir_all(dir).map_err(|source| SimError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_results(&dir.join("results.csv"), &results.rows)?;
    write_aggregates(&dir.join("aggregate.csv"), &results.aggregates)
}

/// Checks a run config or an experiment spec (recognised by its `base` key)
/// and returns every violation found.
pub fn validate_config(path: &Path) -> Result<Vec<FieldError>, ConfigError> {
    let text = config::read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let parse_err = |source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    };
    if value.get("base").is_some() {
        let mut spec: ExperimentSpec = serde_json::from_value(value).map_err(parse_err)?;
        spec.base.resolve_paths(dir);
        Ok(spec.validate())
    } else {
        let mut cfg: SimConfig = serde_json::from_value(value).map_err(parse_err)?;
        cfg.resolve_paths(dir);
        Ok(cfg.validate())
    }
}
