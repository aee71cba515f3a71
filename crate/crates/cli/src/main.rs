//! `commforge` command-line harness.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand};
use commforge::collectives::{oracle, select_algorithm, Algo, AlgoParams, Layout};
use commforge::executor::{ExecOptions, Runtime};
use commforge::lowering::{lower, lower_plan, PassConfig};
use commforge::plan::{parse_plan, serialize_plan, validate_plan, BufferKind, Collective, ExecutionPlan, Severity};
use commforge::sim::{SimWorld, Topology, WorldSpec};
use commforge::timing::{geometric_sizes, run_benchmark, to_csv};
use commforge::{DType, Element};

use config::{load_config, Config};

#[derive(Parser, Debug)]
#[command(name = "commforge", version, about = "Run, check and benchmark collective communication plans")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Execute a plan file or a builtin algorithm.
    Run(RunArgs),
    /// Check a plan document; exits 1 on any error diagnostic.
    Validate(PlanArg),
    /// Time every applicable algorithm over a size sweep.
    Bench(BenchArgs),
    /// Emit a builtin algorithm's plan, or lower a recorded document.
    Build(BuildArgs),
    /// Validate and check canonical form; exits 1 on any diagnostic.
    Lint(PlanArg),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of ranks (default: nodes × GPUs per node from the config).
    #[arg(long)]
    ranks: Option<usize>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct PlanArg {
    #[arg(long)]
    plan: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, conflicts_with = "algo")]
    plan: Option<PathBuf>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    collective: Option<String>,
    /// Per-rank input length in elements.
    #[arg(long, default_value_t = 1024)]
    elems: usize,
    /// Element type for builtin algorithms; plan files carry their own.
    #[arg(long, default_value = "i32")]
    dtype: String,
    #[arg(long)]
    check_oracle: bool,
    /// Number of seeded schedules to run.
    #[arg(long, default_value_t = 1)]
    schedules: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated collectives.
    #[arg(long, default_value = "allreduce")]
    collective: String,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 1 << 10)]
    min_bytes: u64,
    #[arg(long, default_value_t = 1 << 30)]
    max_bytes: u64,
    #[arg(long, default_value_t = 2)]
    factor: u64,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, conflicts_with = "algo")]
    plan: Option<PathBuf>,
    #[arg(long)]
    algo: Option<String>,
    /// Run the lowering passes on a recorded (`"lowered": false`) document.
    #[arg(long)]
    lower: bool,
    /// Emit the recorded program without lowering it.
    #[arg(long, conflicts_with = "lower")]
    raw: bool,
    #[arg(long, default_value_t = 1024)]
    elems: usize,
    #[arg(long, default_value = "i32")]
    dtype: String,
    /// none, sync-only or sync+fuse.
    #[arg(long, default_value = "sync+fuse")]
    passes: String,
    #[arg(long, default_value_t = 1)]
    instances: usize,
    /// Write the document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A command-line mistake (exit code 2).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(Usage(msg.into()).into())
}

/// Failures print as `error[CODE]: message` and exit 1; usage errors exit 2.
fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<Usage>() {
                eprintln!("usage error: {u}");
                return ExitCode::from(2);
            }
            match e.downcast_ref::<commforge::Error>() {
                Some(ce) => eprintln!("error[{}]: {e:#}", ce.code()),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Cmd) -> anyhow::Result<ExitCode> {
    match cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Validate(a) => cmd_validate(&a.plan, false),
        Cmd::Lint(a) => cmd_validate(&a.plan, true),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Build(a) => cmd_build(a),
    }
}

fn read_plan(path: &Path) -> anyhow::Result<(Vec<u8>, ExecutionPlan)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let plan = parse_plan(&bytes)?;
    Ok((bytes, plan))
}

fn settings(c: &Common) -> anyhow::Result<(Config, WorldSpec)> {
    let mut cfg = load_config(c.config.as_deref())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let nodes = c.nodes.unwrap_or(cfg.topology.nodes);
    let ranks = c.ranks.unwrap_or(nodes * cfg.topology.gpus_per_node);
    if nodes == 0 || ranks == 0 || !ranks.is_multiple_of(nodes) {
        return usage(format!("{ranks} ranks do not split evenly over {nodes} nodes"));
    }
    let spec = WorldSpec {
        num_nodes: nodes,
        gpus_per_node: ranks / nodes,
        intra_kind: cfg.topology.intra_kind,
        seed: cfg.seed,
        ghost: false,
    };
    Ok((cfg, spec))
}

fn parse_dtype(s: &str) -> anyhow::Result<DType> {
    match s.parse() {
        Ok(d) => Ok(d),
        Err(_) => usage(format!("unknown dtype `{s}` (expected i32 or f32)")),
    }
}

fn parse_algo(s: &str) -> anyhow::Result<Algo> {
    match s.parse() {
        Ok(a) => Ok(a),
        Err(_) => {
            let names: Vec<&str> = Algo::ALL.iter().map(|a| a.name()).collect();
            usage(format!("unknown algorithm `{s}` (one of {})", names.join(", ")))
        }
    }
}

fn parse_collective(s: &str) -> anyhow::Result<Collective> {
    match s.parse() {
        Ok(c) => Ok(c),
        Err(_) => usage(format!("unknown collective `{s}`")),
    }
}

fn parse_passes(s: &str) -> anyhow::Result<PassConfig> {
    match s.parse() {
        Ok(p) => Ok(p),
        Err(_) => usage(format!("unknown pass set `{s}` (none, sync-only, sync+fuse)")),
    }
}

/// A plan to run and how to map logical inputs onto it.
struct Job {
    name: String,
    plan: ExecutionPlan,
    layout: Option<Layout>,
}

fn cmd_run(a: RunArgs) -> anyhow::Result<ExitCode> {
    let (cfg, mut spec) = settings(&a.common)?;
    let dtype = parse_dtype(&a.dtype)?;
    if a.schedules == 0 {
        return usage("--schedules must be at least 1");
    }
    let job = if let Some(path) = &a.plan {
        let (_, mut plan) = read_plan(path)?;
        if !plan.is_lowered() {
            plan = lower_plan(&plan, PassConfig::SyncFuse)?;
        }
        if a.common.ranks.is_none() && a.common.nodes.is_none() {
            spec.num_nodes = 1;
            spec.gpus_per_node = plan.num_ranks;
        }
        Job {
            name: plan.name.clone(),
            plan,
            layout: None,
        }
    } else {
        let algo = match (&a.algo, &a.collective) {
            (Some(name), coll) => {
                let algo = parse_algo(name)?;
                if let Some(c) = coll {
                    if parse_collective(c)? != algo.collective() {
                        return usage(format!("{algo} implements {}, not {c}", algo.collective()));
                    }
                }
                algo
            }
            (None, Some(c)) => {
                let coll = parse_collective(c)?;
                let n = spec.num_ranks();
                let topo = Topology::new(spec.num_nodes, spec.gpus_per_node, spec.intra_kind);
                let bytes = Layout::bytes(coll, n, a.elems, dtype);
                select_algorithm(coll, bytes, &topo, &cfg.selector()?)?.algo
            }
            (None, None) => return usage("run needs --plan, --algo or --collective"),
        };
        let layout = Layout::new(algo, spec.num_ranks(), spec.gpus_per_node, a.elems);
        let params = AlgoParams {
            num_ranks: spec.num_ranks(),
            elems: layout.padded,
            dtype,
            gpus_per_node: spec.gpus_per_node,
        };
        let plan = lower(&algo.build(&params)?, &params.lowering(algo), PassConfig::SyncFuse)?;
        Job {
            name: algo.name().to_string(),
            plan,
            layout: Some(layout),
        }
    };
    let ok = match job.plan.dtype {
        DType::I32 => run_typed::<i32>(&job, &spec, &a, cfg.seed)?,
        DType::F32 => run_typed::<f32>(&job, &spec, &a, cfg.seed)?,
    };
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn close<T: Element>(a: &[Vec<T>], b: &[Vec<T>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.len() == y.len()
                && x.iter().zip(y).all(|(p, q)| match T::DTYPE {
                    DType::I32 => p == q,
                    DType::F32 => {
                        let (p, q) = (p.to_f64().unwrap_or(f64::NAN), q.to_f64().unwrap_or(f64::NAN));
                        (p - q).abs() <= 1e-5 * p.abs().max(q.abs()).max(1.0)
                    }
                })
        })
}

fn run_typed<T: Element>(job: &Job, spec: &WorldSpec, a: &RunArgs, seed: u64) -> anyhow::Result<bool> {
    let n = job.plan.num_ranks;
    let inputs: Vec<Vec<T>> = match job.layout {
        Some(_) => oracle::sample_inputs(n, a.elems, seed),
        None => {
            let len = |r| job.plan.buffer_of(BufferKind::Input, r).map_or(0, |b| b.elems);
            let raw: Vec<Vec<T>> = oracle::sample_inputs(n, (0..n).map(len).max().unwrap_or(0), seed);
            raw.into_iter().enumerate().map(|(r, mut x)| {
                x.truncate(len(r));
                x
            }).collect()
        }
    };
    let fed: Vec<Vec<T>> = match &job.layout {
        Some(l) => inputs.iter().map(|x| l.pad_input(x)).collect(),
        None => inputs.clone(),
    };
    let mut first: Option<Vec<Vec<T>>> = None;
    let mut ok = true;
    let mut races = 0;
    for k in 0..a.schedules {
        let world = SimWorld::new(spec.clone().with_seed(seed.wrapping_add(k)))?;
        let mut rt = Runtime::init(job.plan.clone(), world)?;
        let res = rt.execute(&fed, ExecOptions::seeded())?;
        races += res.races.len();
        for r in res.races.iter().take(3) {
            println!("race: {r}");
        }
        let outputs: Vec<Vec<T>> = match &job.layout {
            Some(l) => res.outputs.iter().enumerate().map(|(r, y)| l.unpad_output(r, y)).collect(),
            None => res.outputs,
        };
        match &first {
            None => first = Some(outputs),
            Some(f) if *f != outputs => {
                println!("schedule {k}: outputs differ from schedule 0");
                ok = false;
            }
            Some(_) => {}
        }
    }
    println!(
        "{}: {} ranks, {} ops, {} schedule(s), {races} race report(s)",
        job.name,
        n,
        job.plan.op_count(),
        a.schedules
    );
    ok &= races == 0;
    if a.check_oracle {
        let got = first.expect("at least one schedule ran");
        match oracle::expected(job.plan.collective, &inputs) {
            None => bail!(commforge::Error::Invalid("custom plans have no oracle".into())),
            Some(want) if close(&want, &got) => println!("oracle: match"),
            Some(_) => {
                println!("oracle: MISMATCH");
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn cmd_validate(path: &Path, lint: bool) -> anyhow::Result<ExitCode> {
    let (bytes, plan) = read_plan(path)?;
    let diags = validate_plan(&plan);
    for d in &diags {
        println!("{d}");
    }
    let errors = diags.iter().filter(|d| d.severity == Severity::Error).count();
    let mut failed = errors > 0;
    if lint {
        failed |= !diags.is_empty();
        let canonical = serialize_plan(&plan);
        if canonical.trim_ascii_end() != bytes.trim_ascii_end() {
            println!("lint: document is not in canonical form");
            failed = true;
        }
    }
    println!("{}: {} diagnostic(s), {errors} error(s)", path.display(), diags.len());
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<ExitCode> {
    let (cfg, spec) = settings(&a.common)?;
    let colls = a
        .collective
        .split(',')
        .map(|c| parse_collective(c.trim()))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if a.factor < 2 || a.min_bytes == 0 || a.min_bytes > a.max_bytes {
        return usage("need 0 < --min-bytes <= --max-bytes and --factor >= 2");
    }
    let sizes = geometric_sizes(a.min_bytes, a.max_bytes, a.factor);
    let rows = run_benchmark(&colls, &sizes, &spec, &cfg.params(), &cfg.selector()?)?;
    let csv = to_csv(&rows);
    match &a.csv {
        Some(p) => std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_build(a: BuildArgs) -> anyhow::Result<ExitCode> {
    let passes = parse_passes(&a.passes)?;
    let plan = match (&a.plan, &a.algo) {
        (Some(path), _) => {
            let (_, plan) = read_plan(path)?;
            if a.lower {
                lower_plan(&plan, passes)?
            } else {
                plan
            }
        }
        (None, Some(name)) => {
            let (_, spec) = settings(&a.common)?;
            let algo = parse_algo(name)?;
            let dtype = parse_dtype(&a.dtype)?;
            let layout = Layout::new(algo, spec.num_ranks(), spec.gpus_per_node, a.elems);
            let params = AlgoParams {
                num_ranks: spec.num_ranks(),
                elems: layout.padded,
                dtype,
                gpus_per_node: spec.gpus_per_node,
            };
            let g = algo.build(&params)?;
            if a.raw {
                g.plan
            } else {
                let mut lp = params.lowering(algo);
                lp.instances = a.instances;
                lower(&g, &lp, passes)?
            }
        }
        (None, None) => return usage("build needs --plan or --algo"),
    };
    let mut doc = serialize_plan(&plan);
    doc.push(b'\n');
    match &a.out {
        Some(p) => std::fs::write(p, &doc).with_context(|| format!("writing {}", p.display()))?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&doc)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
