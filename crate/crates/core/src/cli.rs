//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage or configuration problems, 3 when a
//! run fails at runtime (files written before the failure are kept).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::{
    aggregate, run_experiment, ExperimentConfig, PolicyKind, Problem, RunSeeds, RunTrace,
    WeightDist,
};
use crate::io::{
    densify, load_aggregate, load_dense_matrix, load_ratings_triples, save_aggregate, save_trace,
    AggregateRecord, KeyValues, MaskedMatrix, Orientation, TriplesOptions,
};
use crate::policies::BinSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "seqmc",
    version,
    about = "Bayesian sequential matrix completion experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Regret experiments on synthetic low-rank matrices.
    Synth(RunArgs),
    /// Regret experiments against a fully observed matrix read from disk.
    RunDataset(RunArgs),
    /// Merge aggregate files into one `policy,rank,step,mean_regret,stderr` CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Key = value config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Comma-separated policies (or `all`), overriding `policies`.
    #[arg(long)]
    pub policy: Option<String>,
    /// Comma-separated ranks, overriding `ranks` (synth) or `k_model` (dataset).
    #[arg(long)]
    pub rank: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// `users-as-columns` (default) or `users-as-rows`.
    #[arg(long)]
    pub orient: Option<String>,
    /// Warm start draws entries with replacement.
    #[arg(long)]
    pub with_replacement: bool,
    /// Worker threads for independent runs.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Aggregate CSV files or directories containing them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Merged output file.
    #[arg(long, default_value = "regret_curves.csv")]
    pub out: PathBuf,
}

const RUN_KEYS: &[&str] = &[
    "seed",
    "runs",
    "policies",
    "jobs",
    "k_model",
    "sigma2",
    "beta",
    "noise_sigma",
    "horizon",
    "warm_start_fraction",
    "with_replacement",
    "n_obs_per_refit",
    "svi.n_mc_samples",
    "svi.max_iters",
    "svi.convergence_window",
    "svi.convergence_rel_tol",
    "svi.rho",
    "svi.eps",
    "svi.init_log_scale",
    "svi.map_iters",
    "svi.map_rho",
    "svi.map_eps",
    "ids.n_theta",
    "ids.n_bins",
    "ids.n_std",
    "ids.candidates",
    "greedy.rel_tol",
    "greedy.max_iters",
];

const SYNTH_KEYS: &[&str] = &["D", "N", "ranks", "w_dist"];
const DATASET_KEYS: &[&str] = &["matrix", "triples", "delimiter", "shape", "orient"];

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::RunDataset(a) => cmd_run_dataset(a),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::RaggedRow { .. }
        | Error::EmptyFile(_)
        | Error::DuplicatePair { .. }
        | Error::Schema(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::Config(m),
        Error::Io(io) => Error::Config(io.to_string()),
        Error::Csv(c) => Error::Config(c.to_string()),
        other => other,
    }
}

fn parse_policies(text: &str) -> Result<Vec<PolicyKind>> {
    if text.trim() == "all" {
        return Ok(PolicyKind::ALL.to_vec());
    }
    let list: Vec<PolicyKind> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(Error::Config("policy list is empty".into()));
    }
    Ok(list)
}

fn parse_ranks(text: &str) -> Result<Vec<usize>> {
    let ranks: Vec<usize> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .ok()
                .filter(|r| *r > 0)
                .ok_or_else(|| Error::Config(format!("invalid rank `{s}`")))
        })
        .collect::<Result<_>>()?;
    if ranks.is_empty() {
        return Err(Error::Config("rank list is empty".into()));
    }
    Ok(ranks)
}

/// Settings shared by both run subcommands after merging file and flags.
struct RunPlan {
    kv: KeyValues,
    seed: u64,
    runs: usize,
    jobs: usize,
    policies: Vec<PolicyKind>,
    base: ExperimentConfig,
}

fn apply_overrides(kv: &mut KeyValues, args: &RunArgs, rank_key: &str) {
    if let Some(s) = args.seed {
        kv.set("seed", s.to_string());
    }
    if let Some(p) = &args.policy {
        kv.set("policies", p.clone());
    }
    if let Some(r) = &args.rank {
        kv.set(rank_key, r.clone());
    }
    if let Some(r) = args.runs {
        kv.set("runs", r.to_string());
    }
    if let Some(o) = &args.orient {
        kv.set("orient", o.clone());
    }
    if args.with_replacement {
        kv.set("with_replacement", "true");
    }
    if let Some(j) = args.jobs {
        kv.set("jobs", j.to_string());
    }
}

fn run_plan(kv: KeyValues) -> Result<RunPlan> {
    let runs: usize = kv.required("runs")?;
    if runs == 0 {
        return Err(Error::Config("runs must be >= 1".into()));
    }
    let policies = parse_policies(
        kv.get("policies")
            .ok_or_else(|| Error::Config("missing required key `policies`".into()))?,
    )?;
    let jobs = kv.parsed::<usize>("jobs")?.unwrap_or(1).max(1);
    let seed = kv.parsed("seed")?.unwrap_or(0);

    let mut base = ExperimentConfig::default();
    if let Some(s2) = kv.parsed::<f64>("sigma2")? {
        if !(s2 > 0.0) {
            return Err(Error::Config(format!("sigma2 must be > 0, got {s2}")));
        }
        base.sigma = s2.sqrt();
    }
    macro_rules! opt {
        ($key:expr, $field:expr) => {
            if let Some(v) = kv.parsed($key)? {
                $field = v;
            }
        };
    }
    opt!("beta", base.beta);
    opt!("noise_sigma", base.noise_sigma);
    opt!("warm_start_fraction", base.warm_start_fraction);
    opt!("with_replacement", base.with_replacement);
    base.horizon_override = kv.parsed("horizon")?;
    base.n_obs_per_refit = kv.parsed("n_obs_per_refit")?;
    opt!("svi.n_mc_samples", base.svi.n_mc_samples);
    opt!("svi.max_iters", base.svi.max_iters);
    opt!("svi.convergence_window", base.svi.convergence_window);
    opt!("svi.convergence_rel_tol", base.svi.convergence_rel_tol);
    opt!("svi.rho", base.svi.rho);
    opt!("svi.eps", base.svi.eps);
    opt!("svi.init_log_scale", base.svi.init_log_scale);
    opt!("svi.map_iters", base.svi.map.iters);
    opt!("svi.map_rho", base.svi.map.rho);
    opt!("svi.map_eps", base.svi.map.eps);
    opt!("ids.n_theta", base.ids.n_theta);
    let (mut n_bins, mut n_std) = (32usize, 6.0f64);
    opt!("ids.n_bins", n_bins);
    opt!("ids.n_std", n_std);
    if n_bins < 2 || !(n_std > 0.0) {
        return Err(Error::Config(
            "ids.n_bins must be >= 2 and ids.n_std > 0".into(),
        ));
    }
    base.ids.bins = BinSpec::Adaptive { n_bins, n_std };
    if let Some(c) = kv.get("ids.candidates") {
        base.ids.candidates = if c == "all" {
            None
        } else {
            Some(kv.required("ids.candidates")?)
        };
    }
    opt!("greedy.rel_tol", base.greedy.rel_tol);
    opt!("greedy.max_iters", base.greedy.max_iters);
    Ok(RunPlan {
        kv,
        seed,
        runs,
        jobs,
        policies,
        base,
    })
}

fn load_config(args: &RunArgs, extra: &[&str], rank_key: &str) -> Result<KeyValues> {
    let mut kv = KeyValues::load(&args.config).map_err(config_err)?;
    let mut allowed: Vec<&str> = RUN_KEYS.to_vec();
    allowed.extend_from_slice(extra);
    kv.reject_unknown(&allowed)?;
    apply_overrides(&mut kv, args, rank_key);
    Ok(kv)
}

/// One `(rank, policy, run)` cell of the experiment grid.
#[derive(Debug, Clone, Copy)]
struct Job {
    rank: usize,
    policy: PolicyKind,
    run: usize,
}

fn prepare_out(out: &Path, kv: &KeyValues) -> Result<()> {
    fs::create_dir_all(out.join("traces"))?;
    fs::create_dir_all(out.join("aggregates"))?;
    kv.write(&out.join("effective_config.txt"))
}

fn trace_path(out: &Path, job: &Job) -> PathBuf {
    out.join("traces").join(format!(
        "{}_rank{}_run{}.csv",
        job.policy, job.rank, job.run
    ))
}

/// Runs every job on a pool of `jobs` threads, writes traces and aggregates.
fn execute<F>(plan: &RunPlan, out: &Path, ranks: &[usize], problem_for: F) -> Result<i32>
where
    F: Fn(&Job, &RunSeeds) -> Result<(Problem, ExperimentConfig)> + Sync,
{
    let mut grid = Vec::new();
    for &rank in ranks {
        for &policy in &plan.policies {
            for run in 1..=plan.runs {
                grid.push(Job { rank, policy, run });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let results: Vec<(Job, Result<RunTrace>)> = pool.install(|| {
        grid.par_iter()
            .map(|job| {
                let seeds = RunSeeds::derive(plan.seed, job.rank, job.policy, job.run);
                let outcome = problem_for(job, &seeds).and_then(|(problem, config)| {
                    log::info!("start {} rank {} run {}", job.policy, job.rank, job.run);
                    let trace = run_experiment(&config, &problem, seeds)?;
                    save_trace(&trace, &trace_path(out, job))?;
                    Ok(trace)
                });
                (*job, outcome)
            })
            .collect()
    });

    let mut code = EXIT_OK;
    let mut groups: BTreeMap<(PolicyKind, usize), Vec<RunTrace>> = BTreeMap::new();
    for (job, outcome) in results {
        match outcome {
            Ok(trace) => {
                if let Some(f) = &trace.failure {
                    eprintln!("{} rank {} run {}: {f}", job.policy, job.rank, job.run);
                    code = EXIT_RUNTIME;
                }
                groups
                    .entry((job.policy, job.rank))
                    .or_default()
                    .push(trace);
            }
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => {
                eprintln!(
                    "{} rank {} run {} failed: {e}",
                    job.policy, job.rank, job.run
                );
                code = EXIT_RUNTIME;
            }
        }
    }
    for ((policy, rank), traces) in &groups {
        let records: Vec<AggregateRecord> = aggregate(traces)
            .into_iter()
            .map(|row| AggregateRecord {
                policy: *policy,
                rank: *rank,
                row,
            })
            .collect();
        let path = out
            .join("aggregates")
            .join(format!("{policy}_rank{rank}.csv"));
        save_aggregate(&path, &records)?;
    }
    Ok(code)
}

pub fn cmd_synth(args: &RunArgs) -> Result<i32> {
    let kv = load_config(args, SYNTH_KEYS, "ranks")?;
    let d: usize = kv.required("D")?;
    let n: usize = kv.required("N")?;
    let ranks = parse_ranks(
        kv.get("ranks")
            .ok_or_else(|| Error::Config("missing required key `ranks`".into()))?,
    )?;
    let dist: WeightDist = kv.required("w_dist")?;
    let plan = run_plan(kv)?;
    let k_model = plan
        .kv
        .parsed::<usize>("k_model")?
        .unwrap_or(*ranks.iter().max().expect("nonempty"));
    for &rank in &ranks {
        if rank > d.min(n) {
            return Err(Error::Config(format!(
                "rank {rank} exceeds min(D, N) = {}",
                d.min(n)
            )));
        }
        for &policy in &plan.policies {
            let mut cfg = plan.base.clone();
            cfg.k_model = k_model;
            cfg.k_true = Some(rank);
            cfg.policy = policy;
            cfg.validate(d, n)?;
        }
    }
    let mut echoed = plan.kv.clone();
    echoed.set("k_model", k_model.to_string());
    echoed.set("seed", plan.seed.to_string());
    prepare_out(&args.out, &echoed)?;
    execute(&plan, &args.out, &ranks, |job, seeds| {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds.problem);
        let problem = Problem::synthetic(d, n, job.rank, dist, plan.base.sigma, &mut rng)?;
        let mut cfg = plan.base.clone();
        cfg.k_model = k_model;
        cfg.k_true = Some(job.rank);
        cfg.policy = job.policy;
        Ok((problem, cfg))
    })
}

fn load_ground_truth(kv: &KeyValues) -> Result<MaskedMatrix> {
    let orient: Orientation = kv.parsed("orient")?.unwrap_or_default();
    match (kv.get("matrix"), kv.get("triples")) {
        (Some(path), None) => {
            let m = load_dense_matrix(Path::new(path)).map_err(config_err)?;
            let m = match orient {
                Orientation::UsersAsColumns => m,
                Orientation::UsersAsRows => m.transpose(),
            };
            MaskedMatrix::complete(m).map_err(config_err)
        }
        (None, Some(path)) => {
            let delimiter = match kv.get("delimiter") {
                None | Some("comma") | Some(",") => b',',
                Some("tab") | Some("\\t") => b'\t',
                Some("semicolon") | Some(";") => b';',
                Some("space") => b' ',
                Some(other) => {
                    return Err(Error::Config(format!("unsupported delimiter `{other}`")))
                }
            };
            let shape = kv
                .list::<usize>("shape")?
                .filter(|s| s.len() == 2)
                .ok_or_else(|| Error::Config("`triples` needs `shape = D, N`".into()))?;
            let opts = TriplesOptions {
                delimiter,
                allow_duplicates: false,
            };
            let triples = load_ratings_triples(Path::new(path), &opts).map_err(config_err)?;
            densify(&triples, (shape[0], shape[1]), orient).map_err(config_err)
        }
        _ => Err(Error::Config(
            "exactly one of `matrix` or `triples` is required".into(),
        )),
    }
}

pub fn cmd_run_dataset(args: &RunArgs) -> Result<i32> {
    let kv = load_config(args, DATASET_KEYS, "k_model")?;
    let truth = load_ground_truth(&kv)?;
    let matrix = truth.into_complete().map_err(config_err)?;
    let (d, n) = matrix.shape();
    let k_values = parse_ranks(
        kv.get("k_model")
            .ok_or_else(|| Error::Config("missing required key `k_model`".into()))?,
    )?;
    let plan = run_plan(kv)?;
    for &k in &k_values {
        for &policy in &plan.policies {
            let mut cfg = plan.base.clone();
            cfg.k_model = k;
            cfg.policy = policy;
            cfg.validate(d, n)?;
        }
    }
    let mut echoed = plan.kv.clone();
    echoed.set("seed", plan.seed.to_string());
    prepare_out(&args.out, &echoed)?;
    let problem = Problem::from_matrix(matrix, plan.base.sigma)?;
    execute(&plan, &args.out, &k_values, |job, _| {
        let mut cfg = plan.base.clone();
        cfg.k_model = job.rank;
        cfg.policy = job.policy;
        Ok((problem.clone(), cfg))
    })
}

fn collect_aggregates(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let nested = input.join("aggregates");
            let input = if nested.is_dir() { &nested } else { input };
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| Error::Config(format!("{}: {e}", input.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            files.extend(found);
        } else if input.is_file() {
            files.push(input.clone());
        } else {
            return Err(Error::Config(format!("{} does not exist", input.display())));
        }
    }
    if files.is_empty() {
        return Err(Error::Config("no aggregate files found".into()));
    }
    Ok(files)
}

pub fn cmd_export(args: &ExportArgs) -> Result<i32> {
    let files = collect_aggregates(&args.inputs)?;
    let mut records = Vec::new();
    for f in &files {
        records.extend(load_aggregate(f)?);
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_aggregate(&args.out, &records)?;
    log::info!("merged {} files into {}", files.len(), args.out.display());
    Ok(EXIT_OK)
}
