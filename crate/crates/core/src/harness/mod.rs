//! Seeded experiment runner: builds instances, picks test tasks, runs an
//! algorithm per seed against the exact regret accounting of
//! [`Environment`], and aggregates the traces.

mod config;
mod output;

pub use config::{AlgorithmConfig, ExperimentConfig, Grid, InstanceConfig, SeedSpec, SweepConfig, TestTask};
pub use output::{render_report, render_svg, write_atomic, write_trace_csv, Report, ReportSeries};

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{bandit_identify_then_commit, bandit_sample_count, BanditEnv, BanditTask};
use crate::error::{BanditError, GeneratorError, IdentifyError, TaskSetError};
use crate::identification::{
    double_identify_then_commit, explore_identify_then_commit, identify_then_commit, sample_count,
    tree_depth, tree_identify_then_commit, AlgorithmRun, Environment, Stage,
};
use crate::instances::{
    default_clustered_horizon, default_lower_bound_horizon, default_revealing_horizon, default_tree_horizon,
    make_bandit_lower_bound_instance, make_clustered_instance, make_lower_bound_instance,
    make_random_separated_instance, make_revealing_instance, make_tree_instance, GeneratorOutput, Metadata,
};
use crate::mdp::optimal_policy;
use crate::rng::{stream_rng, Stream};
use crate::task_set::{
    check_cluster_structure, check_reachability, check_revealing_policy_set, separation_report, TaskSet,
    SEPARATION_TOL,
};
use crate::trace::{Phase, RegretTrace};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("assumption check failed: {0}")]
    Assumption(String),
    #[error("I/O: {0}")]
    Io(String),
    #[error("traces have different lengths")]
    Ragged,
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Identify(#[from] IdentifyError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    TaskSet(#[from] TaskSetError),
}

/// A built instance ready to run.
#[derive(Debug, Clone)]
pub enum Instance {
    Mdp {
        task_set: TaskSet,
        metadata: Option<Metadata>,
        lambda: f64,
    },
    Bandit {
        tasks: Vec<BanditTask>,
        lambda: f64,
    },
}

impl Instance {
    pub fn len(&self) -> usize {
        match self {
            Instance::Mdp { task_set, .. } => task_set.len(),
            Instance::Bandit { tasks, .. } => tasks.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn from_output(out: GeneratorOutput) -> Instance {
    Instance::Mdp {
        lambda: out.metadata.lambda,
        task_set: out.task_set,
        metadata: Some(out.metadata),
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

/// Builds the configured instance. `seed` drives random families.
pub fn build_instance(cfg: &InstanceConfig, h: usize, seed: u64) -> Result<Instance, HarnessError> {
    Ok(match cfg {
        &InstanceConfig::LowerBound { m, lambda, horizon } => from_output(make_lower_bound_instance(
            m,
            h,
            lambda,
            horizon.unwrap_or(default_lower_bound_horizon(m)),
        )?),
        &InstanceConfig::Clustered {
            k,
            n,
            lambda,
            s_extra,
            horizon,
        } => from_output(make_clustered_instance(
            k,
            n,
            lambda,
            s_extra,
            horizon.unwrap_or(default_clustered_horizon(k, n, s_extra)),
            seed,
        )?),
        &InstanceConfig::Tree {
            m,
            beta,
            lambda,
            horizon,
        } => from_output(make_tree_instance(
            m,
            beta,
            lambda,
            horizon.unwrap_or(default_tree_horizon(m)),
            seed,
        )?),
        &InstanceConfig::Revealing { m, i, lambda, horizon } => from_output(make_revealing_instance(
            m,
            i,
            lambda,
            horizon.unwrap_or(default_revealing_horizon(m)),
            seed,
        )?),
        &InstanceConfig::Random {
            m,
            s,
            a,
            horizon,
            lambda,
        } => from_output(make_random_separated_instance(m, s, a, horizon, lambda, seed)?),
        InstanceConfig::File { path, metadata, lambda } => {
            let task_set = TaskSet::from_json(&read(path)?)?;
            let metadata = match metadata {
                Some(p) => Some(
                    Metadata::from_json(&read(p)?).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?,
                ),
                None => None,
            };
            let lambda = match (lambda, &metadata) {
                (Some(l), _) => *l,
                (None, Some(meta)) => meta.lambda,
                (None, None) => separation_report(&task_set)?.lambda,
            };
            Instance::Mdp {
                task_set,
                metadata,
                lambda,
            }
        }
        &InstanceConfig::Bandit { m, lambda } => Instance::Bandit {
            tasks: make_bandit_lower_bound_instance(m, h, lambda)?,
            lambda,
        },
    })
}

/// Checks the assumptions the configured algorithm relies on.
pub fn check_assumptions(inst: &Instance, algo: &AlgorithmConfig) -> Result<(), HarnessError> {
    let Instance::Mdp {
        task_set: ts,
        metadata,
        lambda,
    } = inst
    else {
        return Ok(());
    };
    let fail = |m: String| Err(HarnessError::Assumption(m));
    if matches!(algo, AlgorithmConfig::Oracle) || ts.len() < 2 {
        return Ok(());
    }
    let sep = separation_report(ts)?;
    if sep.lambda < lambda - SEPARATION_TOL {
        return fail(format!("set is only {:.6}-separated, below lambda = {lambda}", sep.lambda));
    }
    match algo {
        AlgorithmConfig::Itc { .. } | AlgorithmConfig::Tree { .. } => {
            for (i, t) in ts.tasks().iter().enumerate() {
                let rep = check_reachability(t);
                if !rep.ok {
                    return fail(format!(
                        "task {i}: state {} has expected hitting time {:.3} > T/2",
                        rep.worst_state, rep.worst_value
                    ));
                }
            }
        }
        AlgorithmConfig::Ditc { .. } => {
            let cs = metadata
                .as_ref()
                .and_then(|m| m.cluster_structure(ts.len()))
                .ok_or_else(|| HarnessError::Assumption("no cluster partition in the metadata".into()))?;
            let rep = check_cluster_structure(ts, &cs, *lambda)?;
            if !rep.ok {
                return fail(format!(
                    "cluster structure: separation {}, N >= K {}, reachability {}",
                    rep.separation_ok, rep.n_at_least_k, rep.reachability_ok
                ));
            }
        }
        AlgorithmConfig::Eitc { .. } => {
            let pols = revealing_policies(metadata)?;
            if !check_revealing_policy_set(ts, pols)?.ok {
                return fail("revealing policies miss some task".into());
            }
        }
        AlgorithmConfig::Oracle | AlgorithmConfig::BanditItc { .. } => {}
    }
    Ok(())
}

fn revealing_policies(metadata: &Option<Metadata>) -> Result<&[crate::mdp::Policy], HarnessError> {
    metadata
        .as_ref()
        .and_then(|m| m.revealing_policies.as_deref())
        .ok_or_else(|| HarnessError::Assumption("no revealing policies in the metadata".into()))
}

/// One seed on one test task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub test_task: usize,
    pub identified_task: usize,
    pub success: bool,
    pub truncated: bool,
    /// Episodes (or pulls) not spent committing.
    pub identify_episodes: usize,
    pub rounds: usize,
    /// Distinct policies (arms) deployed before committing.
    pub identify_policies: usize,
    /// Episodes of the explore stage (explore variant only).
    pub explore_episodes: usize,
    pub regret: f64,
    pub trace: RegretTrace,
}

fn from_algorithm(seed: u64, test: usize, run: AlgorithmRun) -> RunRecord {
    RunRecord {
        seed,
        test_task: test,
        identified_task: run.identified_task,
        success: run.identified_task == test,
        truncated: run.truncated,
        identify_episodes: run.episodes_identify,
        rounds: run.rounds,
        identify_policies: {
            let mut ids: Vec<_> = run
                .deployments
                .iter()
                .filter(|d| d.phase != Phase::Commit)
                .map(|d| d.policy)
                .collect();
            ids.sort_unstable();
            ids.dedup();
            ids.len()
        },
        explore_episodes: run.stage(Stage::Explore),
        regret: run.trace.total(),
        trace: run.trace,
    }
}

/// Runs one seed against test task `test` of a built instance.
pub fn run_single(
    inst: &Instance,
    algo: &AlgorithmConfig,
    h: usize,
    seed: u64,
    test: usize,
) -> Result<RunRecord, HarnessError> {
    let env_rng = stream_rng(seed, Stream::Environment);
    let mut rng = stream_rng(seed, Stream::Algorithm);
    match inst {
        Instance::Mdp {
            task_set: ts,
            metadata,
            lambda,
        } => {
            let truth = ts.task(test);
            let env = Environment::new(truth, env_rng, h);
            let sh = ts.shape();
            let m = ts.len() as f64;
            let count = |n: Option<usize>, c: f64, m: f64| n.unwrap_or_else(|| sample_count(c, sh.num_states, m, h, *lambda));
            let run = match algo {
                AlgorithmConfig::Oracle => {
                    let mut env = env;
                    let id = env.register(optimal_policy(truth).0).map_err(IdentifyError::from)?;
                    env.commit(id);
                    let trace = env.trace();
                    return Ok(RunRecord {
                        seed,
                        test_task: test,
                        identified_task: test,
                        success: true,
                        truncated: false,
                        identify_episodes: 0,
                        rounds: 0,
                        identify_policies: 0,
                        explore_episodes: 0,
                        regret: trace.total(),
                        trace,
                    });
                }
                &AlgorithmConfig::Itc { n, c } => identify_then_commit(env, ts, count(n, c, m), &mut rng)?,
                &AlgorithmConfig::Ditc { n_cluster, n_inner, c } => {
                    let cs = metadata
                        .as_ref()
                        .and_then(|md| md.cluster_structure(ts.len()))
                        .ok_or_else(|| HarnessError::Config("ditc needs a cluster partition".into()))?;
                    let nc = count(n_cluster, c, cs.k() as f64);
                    let ni = count(n_inner, c, cs.n() as f64);
                    double_identify_then_commit(env, ts, &cs, nc, ni, &mut rng)?
                }
                &AlgorithmConfig::Tree { n, c, beta } => {
                    let beta = beta
                        .or(metadata.as_ref().and_then(|md| md.beta))
                        .ok_or_else(|| HarnessError::Config("tree needs beta".into()))?;
                    let depth = tree_depth(ts.len(), beta).max(1.0);
                    tree_identify_then_commit(env, ts, *lambda, beta, count(n, c, depth), &mut rng)?
                }
                &AlgorithmConfig::Eitc { n, c } => {
                    let pols = revealing_policies(metadata)?;
                    explore_identify_then_commit(env, ts, pols, count(n, c, m), &mut rng)?
                }
                AlgorithmConfig::BanditItc { .. } => {
                    return Err(HarnessError::Config("bandit-itc needs the bandit family".into()))
                }
            };
            Ok(from_algorithm(seed, test, run))
        }
        Instance::Bandit { tasks, lambda } => {
            let env = BanditEnv::new(tasks[test].clone(), env_rng, h);
            let n = match algo {
                AlgorithmConfig::BanditItc { n } => n.unwrap_or_else(|| bandit_sample_count(tasks.len(), h, *lambda)),
                AlgorithmConfig::Oracle => {
                    let mut env = env;
                    env.commit(tasks[test].best_arm());
                    let trace = env.into_trace();
                    return Ok(RunRecord {
                        seed,
                        test_task: test,
                        identified_task: test,
                        success: true,
                        truncated: false,
                        identify_episodes: 0,
                        rounds: 0,
                        identify_policies: 0,
                        explore_episodes: 0,
                        regret: trace.total(),
                        trace,
                    });
                }
                _ => return Err(HarnessError::Config("the bandit family runs bandit-itc or oracle".into())),
            };
            let run = bandit_identify_then_commit(env, tasks, n, &mut rng)?;
            Ok(RunRecord {
                seed,
                test_task: test,
                identified_task: run.identified_task,
                success: run.identified_task == test,
                truncated: run.truncated,
                identify_episodes: run.pulls_identify,
                rounds: run.tests,
                identify_policies: run.arms_pulled,
                explore_episodes: 0,
                regret: run.trace.total(),
                trace: run.trace,
            })
        }
    }
}

fn run_seed(cfg: &ExperimentConfig, shared: Option<&Instance>, seed: u64) -> Result<RunRecord, HarnessError> {
    let built;
    let inst = match shared {
        Some(i) => i,
        None => {
            built = build_instance(&cfg.instance, cfg.episodes, seed)?;
            if !cfg.force {
                check_assumptions(&built, &cfg.algorithm)?;
            }
            &built
        }
    };
    match cfg.test_task {
        TestTask::Fixed(i) => {
            if i >= inst.len() {
                return Err(HarnessError::Config(format!("test task {i} >= M = {}", inst.len())));
            }
            run_single(inst, &cfg.algorithm, cfg.episodes, seed, i)
        }
        TestTask::Random => {
            let i = stream_rng(seed, Stream::Selection).random_range(0..inst.len());
            run_single(inst, &cfg.algorithm, cfg.episodes, seed, i)
        }
        TestTask::WorstCase => {
            let mut worst: Option<RunRecord> = None;
            for i in 0..inst.len() {
                let rec = run_single(inst, &cfg.algorithm, cfg.episodes, seed, i)?;
                if worst.as_ref().is_none_or(|w| rec.regret > w.regret) {
                    worst = Some(rec);
                }
            }
            Ok(worst.expect("non-empty instance"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub test_task: usize,
    pub identified_task: usize,
    pub success: bool,
    pub truncated: bool,
    pub identify_episodes: usize,
    pub rounds: usize,
    pub identify_policies: usize,
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub horizon_h: usize,
    pub mean_regret: f64,
    pub std_regret: f64,
    /// 10%, 50% and 90% quantiles of the final cumulative regret.
    pub regret_quantiles: [f64; 3],
    pub success_rate: f64,
    pub truncation_rate: f64,
    pub mean_identify_episodes: f64,
    pub mean_identify_policies: f64,
    pub per_seed: Vec<SeedRow>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Summary over runs that share the budget `H`.
pub fn aggregate(records: &[RunRecord]) -> Result<Summary, HarnessError> {
    let Some(first) = records.first() else {
        return Err(HarnessError::Config("no runs to aggregate".into()));
    };
    let h = first.trace.len();
    if records.iter().any(|r| r.trace.len() != h) {
        return Err(HarnessError::Ragged);
    }
    let regrets: Vec<f64> = records.iter().map(|r| r.regret).collect();
    let (mean_regret, std_regret) = mean_std(&regrets);
    let mut sorted = regrets.clone();
    sorted.sort_by(f64::total_cmp);
    let n = records.len() as f64;
    Ok(Summary {
        runs: records.len(),
        horizon_h: h,
        mean_regret,
        std_regret,
        regret_quantiles: [quantile(&sorted, 0.1), quantile(&sorted, 0.5), quantile(&sorted, 0.9)],
        success_rate: records.iter().filter(|r| r.success).count() as f64 / n,
        truncation_rate: records.iter().filter(|r| r.truncated).count() as f64 / n,
        mean_identify_episodes: records.iter().map(|r| r.identify_episodes as f64).sum::<f64>() / n,
        mean_identify_policies: records.iter().map(|r| r.identify_policies as f64).sum::<f64>() / n,
        per_seed: records
            .iter()
            .map(|r| SeedRow {
                seed: r.seed,
                test_task: r.test_task,
                identified_task: r.identified_task,
                success: r.success,
                truncated: r.truncated,
                identify_episodes: r.identify_episodes,
                rounds: r.rounds,
                identify_policies: r.identify_policies,
                regret: r.regret,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean: f64,
    pub std: f64,
}

/// Pointwise mean and standard deviation of cumulative regret at `episodes`.
pub fn regret_curve(traces: &[&RegretTrace], episodes: &[usize]) -> Result<Vec<CurvePoint>, HarnessError> {
    let Some(first) = traces.first() else {
        return Err(HarnessError::Config("no traces".into()));
    };
    if traces.iter().any(|t| t.len() != first.len()) {
        return Err(HarnessError::Ragged);
    }
    Ok(episodes
        .iter()
        .map(|&e| {
            let vals: Vec<f64> = traces.iter().map(|t| t.cumulative_at(e)).collect();
            let (mean, std) = mean_std(&vals);
            CurvePoint { episode: e, mean, std }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub summary: Summary,
    pub records: Vec<RunRecord>,
}

impl ExperimentResult {
    pub fn any_truncated(&self) -> bool {
        self.records.iter().any(|r| r.truncated)
    }

    /// Trace CSV for every record, in seed order.
    pub fn trace_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &self.config.name, &self.records, self.config.csv_stride, true)?;
        Ok(buf)
    }
}

/// Runs every seed of `cfg` in parallel; results come back in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let shared = match cfg.instance_seed {
        Some(s) => {
            let inst = build_instance(&cfg.instance, cfg.episodes, s)?;
            if !cfg.force {
                check_assumptions(&inst, &cfg.algorithm)?;
            }
            Some(inst)
        }
        None => None,
    };
    let records = cfg
        .seeds
        .seeds()
        .par_iter()
        .map(|&seed| run_seed(cfg, shared.as_ref(), seed))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = aggregate(&records)?;
    if let Some(path) = &cfg.output {
        let result = ExperimentResult {
            config: cfg.clone(),
            summary,
            records,
        };
        write_atomic(path, &result.trace_csv()?)?;
        let summary_path = path.with_extension("summary.json");
        let json = serde_json::to_string_pretty(&result.summary).expect("summary serializes");
        write_atomic(&summary_path, json.as_bytes())?;
        return Ok(result);
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        summary,
        records,
    })
}
