use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ttregret::bandit::tasks_to_json;
use ttregret::bpi::t_star;
use ttregret::harness::{
    build_instance, render_report, render_svg, run_experiment, write_atomic, ExperimentConfig, HarnessError,
    Instance, InstanceConfig, Report, SweepConfig,
};
use ttregret::instances::Metadata;
use ttregret::mdp::solve_optimal;
use ttregret::task_set::{
    check_cluster_structure, check_reachability, check_revealing_policy_set, find_tree_split, separation_report,
    TaskSet, SEPARATION_TOL,
};

const EXIT_VALIDATION: u8 = 2;
const EXIT_TRUNCATED: u8 = 3;

#[derive(Parser)]
#[command(name = "ttregret", version, about = "Test-time task identification and regret experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance and write it with a metadata sidecar.
    Gen(GenArgs),
    /// Check a task set against the structural assumptions.
    Validate(ValidateArgs),
    /// Run one experiment config.
    Run(RunArgs),
    /// Run a grid of experiments.
    Sweep(SweepArgs),
    /// Best-policy-identification lower bound for one test task.
    Bound(BoundArgs),
    /// Summarize trace CSVs into a table and an SVG plot.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    LowerBound,
    Clustered,
    Tree,
    Revealing,
    Random,
    Bandit,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Number of tasks.
    #[arg(long)]
    m: Option<usize>,
    /// Number of clusters.
    #[arg(long)]
    k: Option<usize>,
    /// Cluster size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lambda: f64,
    /// Episode budget (hard instances depend on it).
    #[arg(long, default_value_t = 4096)]
    h: usize,
    /// Task horizon T; family default when omitted.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Number of revealing policies.
    #[arg(long, default_value_t = 1)]
    i: usize,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    a: Option<usize>,
    #[arg(long, default_value_t = 0)]
    s_extra: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Task-set JSON; the metadata goes to `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    task_set: PathBuf,
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Required separation; defaults to the metadata value, else only reported.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Trace CSV; overrides the config's output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 3 when any run was truncated by the budget.
    #[arg(long)]
    strict: bool,
    /// Skip assumption checks.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    task_set: PathBuf,
    #[arg(long)]
    test_index: usize,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Trace CSV files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

fn need(v: Option<usize>, flag: &str) -> Result<usize> {
    v.with_context(|| format!("--{flag} is required for this family"))
}

fn meta_path(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}

fn cmd_gen(a: GenArgs) -> Result<u8> {
    let cfg = match a.family {
        FamilyArg::LowerBound => InstanceConfig::LowerBound {
            m: need(a.m, "m")?,
            lambda: a.lambda,
            horizon: a.horizon,
        },
        FamilyArg::Clustered => InstanceConfig::Clustered {
            k: need(a.k, "k")?,
            n: need(a.n, "n")?,
            lambda: a.lambda,
            s_extra: a.s_extra,
            horizon: a.horizon,
        },
        FamilyArg::Tree => InstanceConfig::Tree {
            m: need(a.m, "m")?,
            beta: a.beta,
            lambda: a.lambda,
            horizon: a.horizon,
        },
        FamilyArg::Revealing => InstanceConfig::Revealing {
            m: need(a.m, "m")?,
            i: a.i,
            lambda: a.lambda,
            horizon: a.horizon,
        },
        FamilyArg::Random => InstanceConfig::Random {
            m: need(a.m, "m")?,
            s: need(a.s, "s")?,
            a: need(a.a, "a")?,
            horizon: need(a.horizon, "horizon")?,
            lambda: a.lambda,
        },
        FamilyArg::Bandit => InstanceConfig::Bandit {
            m: need(a.m, "m")?,
            lambda: a.lambda,
        },
    };
    match build_instance(&cfg, a.h, a.seed)? {
        Instance::Mdp {
            task_set, metadata, ..
        } => {
            write_atomic(&a.out, task_set.to_json().as_bytes())?;
            if let Some(meta) = metadata {
                write_atomic(&meta_path(&a.out), meta.to_json().as_bytes())?;
            }
            println!("wrote {} tasks to {}", task_set.len(), a.out.display());
        }
        Instance::Bandit { tasks, .. } => {
            write_atomic(&a.out, tasks_to_json(&tasks).as_bytes())?;
            println!("wrote {} bandit tasks to {}", tasks.len(), a.out.display());
        }
    }
    Ok(0)
}

fn load_task_set(path: &Path) -> Result<TaskSet> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(TaskSet::from_json(&text)?)
}

fn check_line(ok: bool, what: &str, detail: String) -> bool {
    println!("{} {what}: {detail}", if ok { "ok  " } else { "FAIL" });
    ok
}

/// Every subset reached by recursive splitting admits a valid split.
fn tree_ok(ts: &TaskSet, subset: &[usize], lambda: f64, beta: f64) -> bool {
    if subset.len() < 2 {
        return true;
    }
    match find_tree_split(ts, subset, lambda, beta) {
        Ok(s) => tree_ok(ts, &s.d_plus, lambda, beta) && tree_ok(ts, &s.d_minus, lambda, beta),
        Err(_) => false,
    }
}

fn cmd_validate(a: ValidateArgs) -> Result<u8> {
    let ts = load_task_set(&a.task_set)?;
    let meta_file = a.meta.clone().or_else(|| {
        let p = meta_path(&a.task_set);
        p.exists().then_some(p)
    });
    let meta = match &meta_file {
        Some(p) => Some(Metadata::from_json(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?),
        None => None,
    };
    let lambda = a.lambda.or(meta.as_ref().map(|m| m.lambda));
    let mut ok = true;
    println!("tasks: {}, shape: {:?}", ts.len(), ts.shape());
    if ts.len() >= 2 {
        let rep = separation_report(&ts)?;
        let sep_ok = lambda.is_none_or(|l| rep.lambda >= l - SEPARATION_TOL);
        ok &= check_line(
            sep_ok,
            "separation",
            format!("lambda = {} (revealing set of {} pairs)", rep.lambda, rep.revealing_set.len()),
        );
    }
    for (i, t) in ts.tasks().iter().enumerate() {
        let rep = check_reachability(t);
        if !rep.ok {
            ok &= check_line(
                false,
                "reachability",
                format!("task {i}, state {} needs {:.3} > T/2", rep.worst_state, rep.worst_value),
            );
        }
    }
    if let (Some(meta), Some(lambda)) = (&meta, lambda) {
        if let Some(cs) = meta.cluster_structure(ts.len()) {
            let rep = check_cluster_structure(&ts, &cs, lambda)?;
            ok &= check_line(
                rep.ok,
                "clusters",
                format!(
                    "separation {}, N >= K {}, reachability {}",
                    rep.separation_ok, rep.n_at_least_k, rep.reachability_ok
                ),
            );
        }
        if let Some(beta) = meta.beta {
            let all: Vec<usize> = (0..ts.len()).collect();
            ok &= check_line(tree_ok(&ts, &all, lambda, beta), "tree splits", format!("beta = {beta}"));
        }
        if let Some(pols) = &meta.revealing_policies {
            let rep = check_revealing_policy_set(&ts, pols)?;
            let worst = rep.per_task.iter().map(|c| c.min_reach).fold(f64::INFINITY, f64::min);
            ok &= check_line(rep.ok, "revealing policies", format!("worst reach {worst:.4}"));
        }
    }
    Ok(if ok { 0 } else { EXIT_VALIDATION })
}

fn harness_exit(e: HarnessError) -> Result<u8> {
    match e {
        HarnessError::Assumption(m) => {
            eprintln!("assumption check failed: {m} (use --force to override)");
            Ok(EXIT_VALIDATION)
        }
        other => Err(other.into()),
    }
}

fn cmd_run(a: RunArgs) -> Result<u8> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if a.out.is_some() {
        cfg.output = a.out;
    }
    cfg.force |= a.force;
    let res = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return harness_exit(e),
    };
    if cfg.output.is_none() {
        eprintln!("no output path configured; trace CSV not written");
    }
    println!("{}", serde_json::to_string_pretty(&res.summary)?);
    Ok(if a.strict && res.any_truncated() { EXIT_TRUNCATED } else { 0 })
}

fn cmd_sweep(a: SweepArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let sweep = SweepConfig::from_toml(&text)?;
    let mut truncated = false;
    let mut report = Report::default();
    for mut cfg in sweep.expand()? {
        cfg.force |= a.force;
        cfg.output = Some(a.out_dir.join(format!("{}.csv", cfg.name)));
        let res = match run_experiment(&cfg) {
            Ok(r) => r,
            Err(e) => return harness_exit(e),
        };
        truncated |= res.any_truncated();
        report.add_csv(res.trace_csv()?.as_slice())?;
    }
    print!("{}", render_report(&report));
    Ok(if a.strict && truncated { EXIT_TRUNCATED } else { 0 })
}

fn cmd_bound(a: BoundArgs) -> Result<u8> {
    let ts = load_task_set(&a.task_set)?;
    if a.test_index >= ts.len() {
        bail!("test index {} out of range for {} tasks", a.test_index, ts.len());
    }
    let tied: Vec<usize> = (0..ts.len()).filter(|&j| solve_optimal(ts.task(j)).reachable_ties).collect();
    if !tied.is_empty() {
        eprintln!("warning: tasks {tied:?} have tied optimal actions; the bound assumes unique optimal policies");
    }
    let b = t_star(&ts, a.test_index)?;
    println!("t_star = {}", b.t_star);
    println!("tau_lower(delta = {}) = {}", a.delta, b.tau_lower(a.delta));
    if b.capped {
        println!("note: some KL terms are infinite and were capped; the true t_star is at least the value shown");
    }
    Ok(0)
}

fn cmd_report(a: ReportArgs) -> Result<u8> {
    let mut report = Report::default();
    for p in &a.inputs {
        let f = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        report.add_csv(f)?;
    }
    print!("{}", render_report(&report));
    if let Some(svg) = &a.svg {
        write_atomic(svg, render_svg(&report).as_bytes())?;
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bound(a) => cmd_bound(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
