use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use trace_race::bounds::{low_p_threshold, low_q_threshold, runaway_certificate};
use trace_race::engine::{run_trial_traced, with_threads, DEFAULT_Z_C, DEFAULT_Z_T};
use trace_race::harness::{self, Axis, GridSpec, SweepMode, SweepOptions};
use trace_race::policy::LearnedPolicy;
use trace_race::qlearn::{self, QConfig, TruncationLimits, VTable};
use trace_race::report::{self, sig6, Manifest};
use trace_race::stats::{three_coin_confidence, two_coin_confidence, ConfidenceReport, NoClaim};
use trace_race::{Error, Instance, PolicyKind, Result, Thresholds, TrialConfig};

const THREADS_ENV: &str = "TRACE_RACE_THREADS";

#[derive(Parser)]
#[command(name = "trace-race", version, about = "Contact-tracing race on random trees")]
struct Cli {
    /// Worker threads (default: $TRACE_RACE_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial and print every tracing step.
    Trial(TrialArgs),
    /// Sweep a parameter grid and write CSV results.
    Sweep(SweepArgs),
    /// Evaluate the closed-form thresholds.
    Bounds(BoundsArgs),
    /// Confidence that the observed best coin is the true best.
    Confidence(ConfidenceArgs),
    /// Train or evaluate a learned policy.
    Qlearn {
        #[command(subcommand)]
        command: QlearnCommand,
    },
}

#[derive(Args)]
struct InstanceArgs {
    /// Infection probability of every node.
    #[arg(long, requires = "q", conflicts_with_all = ["pmin", "qmin"])]
    p: Option<f64>,
    /// Contact probability of every node.
    #[arg(long, requires = "p")]
    q: Option<f64>,
    /// Infection probabilities uniform on [pmin, 1).
    #[arg(long, requires = "qmin", conflicts_with = "q")]
    pmin: Option<f64>,
    /// Contact probabilities uniform on [qmin, 1).
    #[arg(long, requires = "pmin")]
    qmin: Option<f64>,
    /// Uninhibited rounds before tracing starts.
    #[arg(long, default_value_t = 3)]
    k: u32,
}

impl InstanceArgs {
    fn instance(&self) -> Result<Instance> {
        match (self.p, self.q, self.pmin, self.qmin) {
            (Some(p), Some(q), None, None) => Instance::point(p, q, self.k),
            (None, None, Some(pmin), Some(qmin)) => Instance::uniform(pmin, qmin, self.k),
            _ => Err(Error::invalid("instance", "give either --p and --q or --pmin and --qmin")),
        }
    }
}

#[derive(Args)]
struct ThresholdArgs {
    /// Active infections above which containment has failed.
    #[arg(long, default_value_t = DEFAULT_Z_C)]
    zc: usize,
    /// Tree size above which a trial is abandoned.
    #[arg(long, default_value_t = DEFAULT_Z_T)]
    zt: usize,
}

impl ThresholdArgs {
    fn thresholds(&self) -> Result<Thresholds> {
        Thresholds::new(self.zc, self.zt)
    }
}

#[derive(Args)]
struct TrialArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long, default_value = "descending-time")]
    policy: String,
    /// Value table for a learned policy; `--policy` is then its fallback.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    TwoPolicy,
    ThreePolicy,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// First p (or p_min); default 0.01 for two-policy, 0 for three-policy.
    #[arg(long)]
    p_start: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    p_stop: f64,
    #[arg(long, default_value_t = 0.01)]
    p_step: f64,
    #[arg(long)]
    q_start: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    q_stop: f64,
    #[arg(long, default_value_t = 0.01)]
    q_step: f64,
    /// Round-1 trials per policy per cell; default 100000 for two-policy,
    /// 10000 for three-policy.
    #[arg(long)]
    n: Option<u64>,
    #[arg(long, default_value_t = harness::DEFAULT_D_THRESHOLD)]
    d_threshold: f64,
    #[arg(long, default_value_t = harness::DEFAULT_CONFIDENCE_THRESHOLD)]
    confidence_threshold: f64,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long, default_value_t = 3)]
    k: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "sweep-out")]
    out: PathBuf,
    /// Continue an interrupted sweep from its checkpoint.
    #[arg(long)]
    resume: bool,
    /// Largest number of round-1 trials the sweep may request.
    #[arg(long, default_value_t = harness::DEFAULT_BUDGET_CAP)]
    budget_cap: u128,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 3)]
    k: u32,
    /// With --q, check the runaway condition for (p, q).
    #[arg(long, requires = "q")]
    p: Option<f64>,
    #[arg(long, requires = "p")]
    q: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoinsArg {
    Two,
    Three,
}

#[derive(Args)]
struct ConfidenceArgs {
    #[arg(long, value_enum)]
    mode: CoinsArg,
    /// Flips per coin.
    #[arg(long)]
    n: u64,
    #[arg(long)]
    pa: f64,
    #[arg(long)]
    pb: f64,
    /// Third coin's observed fraction (three-coin mode only).
    #[arg(long)]
    pc: Option<f64>,
    /// Lower bound on every coin's bias.
    #[arg(long)]
    p0: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum TerminalArg {
    AscendingTime,
    DescendingTime,
}

impl TerminalArg {
    fn policy(self) -> PolicyKind {
        match self {
            TerminalArg::AscendingTime => PolicyKind::AscendingTime,
            TerminalArg::DescendingTime => PolicyKind::DescendingTime,
        }
    }
}

#[derive(Args)]
struct LimitArgs {
    #[arg(long, default_value_t = 4)]
    max_t: u32,
    #[arg(long, default_value_t = 3)]
    max_frontier: usize,
    #[arg(long, default_value_t = 3)]
    max_tau: u32,
}

impl LimitArgs {
    fn limits(&self) -> TruncationLimits {
        TruncationLimits {
            max_t: self.max_t,
            max_frontier: self.max_frontier,
            max_tau: self.max_tau,
        }
    }
}

#[derive(Subcommand)]
enum QlearnCommand {
    /// Train a value table and write it to --out.
    Train {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = 3)]
        k: u32,
        #[arg(long, value_enum)]
        terminal: TerminalArg,
        #[arg(long, default_value_t = 1_000_000)]
        episodes: u64,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0.6)]
        gamma: f64,
        #[arg(long, default_value_t = 100)]
        rollouts: u32,
        #[command(flatten)]
        limits: LimitArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "vtable.txt")]
        out: PathBuf,
    },
    /// Evaluate a learned (--table) or built-in (--policy) policy.
    Eval {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = 3)]
        k: u32,
        #[arg(long, conflicts_with = "policy", requires = "terminal")]
        table: Option<PathBuf>,
        #[arg(long, value_enum)]
        terminal: Option<TerminalArg>,
        #[arg(long)]
        policy: Option<String>,
        #[command(flatten)]
        limits: LimitArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match cli.threads.map(Ok).or_else(threads_from_env) {
        None => 0,
        Some(Ok(n)) => n,
        Some(Err(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = with_threads(threads, move || run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn threads_from_env() -> Option<Result<usize>> {
    let raw = std::env::var(THREADS_ENV).ok()?;
    Some(
        raw.trim()
            .parse()
            .map_err(|_| Error::invalid("TRACE_RACE_THREADS", format!("`{raw}` is not a thread count"))),
    )
}

fn run(command: Command) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match command {
        Command::Trial(args) => cmd_trial(args, &mut out),
        Command::Sweep(args) => cmd_sweep(args, &mut out),
        Command::Bounds(args) => cmd_bounds(args, &mut out),
        Command::Confidence(args) => cmd_confidence(args, &mut out),
        Command::Qlearn { command } => cmd_qlearn(command, &mut out),
    }
}

fn read_table(path: &Path) -> Result<VTable> {
    VTable::read_from(BufReader::new(File::open(path)?))
}

fn cmd_trial(args: TrialArgs, out: &mut impl Write) -> Result<()> {
    let instance = args.instance.instance()?;
    let base: PolicyKind = args.policy.parse()?;
    let policy = match &args.table {
        Some(path) => PolicyKind::Learned(LearnedPolicy::new(
            Arc::new(read_table(path)?),
            base,
            TruncationLimits::default(),
        )?),
        None => base,
    };
    let config = TrialConfig::new(instance, policy, args.seed).with_thresholds(args.thresholds.thresholds()?);
    let (outcome, steps) = run_trial_traced(&config)?;
    writeln!(
        out,
        "instance: p ~ {}, q ~ {}, k = {}; policy {}; seed {}",
        instance.d_p, instance.d_q, instance.k, config.policy, args.seed
    )?;
    for s in &steps {
        writeln!(
            out,
            "step {}: query node {} (tau {}) -> {}, revealed {}; frontier taus {:?}; active infected {}",
            s.step,
            s.queried.node,
            s.queried.tau,
            if s.infected { "infected" } else { "not infected" },
            s.revealed,
            s.frontier_taus,
            s.active_infected,
        )?;
    }
    writeln!(
        out,
        "outcome: {} after {} rounds; queries {}; total infected {}; peak active infected {}",
        outcome.state, outcome.rounds, outcome.queries, outcome.total_infected, outcome.peak_active_infected
    )?;
    Ok(())
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn cmd_sweep(args: SweepArgs, out: &mut impl Write) -> Result<()> {
    let mode = match args.mode {
        ModeArg::TwoPolicy => SweepMode::TwoPolicy,
        ModeArg::ThreePolicy => SweepMode::ThreePolicy,
    };
    let (default_start, default_n) = match mode {
        SweepMode::TwoPolicy => (0.01, 100_000),
        SweepMode::ThreePolicy => (0.0, 10_000),
    };
    let mut spec = GridSpec::new(
        Axis::new(args.p_start.unwrap_or(default_start), args.p_stop, args.p_step)?,
        Axis::new(args.q_start.unwrap_or(default_start), args.q_stop, args.q_step)?,
        args.n.unwrap_or(default_n),
        args.seed,
    );
    spec.d_threshold = args.d_threshold;
    spec.confidence_threshold = args.confidence_threshold;
    spec.thresholds = args.thresholds.thresholds()?;
    spec.k = args.k;
    spec.validate()?;

    let started = unix_now();
    let options = SweepOptions {
        budget_cap: args.budget_cap,
        checkpoint_dir: Some(args.out.join("checkpoint")),
        resume: args.resume,
        max_new_cells: None,
    };
    let results = harness::sweep(mode, &spec, &options)?;

    fs::create_dir_all(&args.out)?;
    let results_path = args.out.join("results.csv");
    let dominance_path = args.out.join("dominance.csv");
    let manifest_path = args.out.join("manifest.txt");
    let mut w = BufWriter::new(File::create(&results_path)?);
    report::write_results(&mut w, &results)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(&dominance_path)?);
    report::write_dominance(&mut w, &results)?;
    w.flush()?;

    let mut manifest = Manifest::new("sweep");
    manifest
        .record_sweep(mode, &spec)
        .set("results", results_path.display())
        .set("dominance", dominance_path.display())
        .set("cells", results.len());
    fs::write(&manifest_path, manifest.to_text())?;
    // Wall-clock details stay out of the manifest so reruns compare equal.
    fs::write(
        args.out.join("run-info.txt"),
        format!(
            "start_unix = {started}\nend_unix = {}\nthreads = {}\nresumed = {}\n",
            unix_now(),
            rayon::current_num_threads(),
            args.resume
        ),
    )?;

    let mut counts = std::collections::BTreeMap::<&str, usize>::new();
    for r in &results {
        *counts.entry(r.classification.code()).or_default() += 1;
    }
    writeln!(out, "{} cells written to {}", results.len(), args.out.display())?;
    for (code, n) in counts {
        writeln!(out, "  {code}: {n}")?;
    }
    Ok(())
}

fn cmd_bounds(args: BoundsArgs, out: &mut impl Write) -> Result<()> {
    writeln!(out, "low_q_threshold = {}", low_q_threshold(args.delta, args.k)?)?;
    writeln!(out, "low_p_threshold = {}", low_p_threshold(args.delta, args.k)?)?;
    if let (Some(p), Some(q)) = (args.p, args.q) {
        let cert = runaway_certificate(p, q, args.delta)?;
        writeln!(out, "h = {}", cert.h)?;
        writeln!(out, "f(delta) = {:.10}", cert.f_delta)?;
        writeln!(out, "pq = {:.10}", p * q)?;
        writeln!(out, "B = {}", cert.b())?;
        match cert.c() {
            Some(c) => writeln!(out, "C = {c}")?,
            None => writeln!(out, "C = undefined (pq = 0)")?,
        }
        writeln!(out, "certified = {}", cert.certified)?;
    }
    Ok(())
}

fn describe_confidence(report: &ConfidenceReport, names: &[&str], out: &mut impl Write) -> Result<()> {
    match report.no_claim {
        Some(NoClaim::ZeroGap) => writeln!(out, "no confidence (d = 0)")?,
        Some(NoClaim::EpsilonTooLarge) => writeln!(
            out,
            "no confidence (epsilon / p0 >= 1; epsilon = {}, p0 = {})",
            sig6(report.epsilon),
            sig6(report.p0)
        )?,
        None => {
            let winner = report.winner.map_or("none", |w| names[w]);
            writeln!(out, "winner = {winner}")?;
            writeln!(out, "d = {}", sig6(report.gap))?;
            writeln!(out, "epsilon = {}", sig6(report.epsilon))?;
            writeln!(out, "confidence = {}", sig6(report.confidence))?;
        }
    }
    Ok(())
}

fn cmd_confidence(args: ConfidenceArgs, out: &mut impl Write) -> Result<()> {
    match (args.mode, args.pc) {
        (CoinsArg::Two, None) => {
            let report = two_coin_confidence(args.n, args.pa, args.pb, args.p0)?;
            describe_confidence(&report, &["a", "b"], out)
        }
        (CoinsArg::Three, Some(pc)) => {
            let report = three_coin_confidence(args.n, [args.pa, args.pb, pc], args.p0)?;
            describe_confidence(&report, &["a", "b", "c"], out)
        }
        (CoinsArg::Two, Some(_)) => Err(Error::invalid("pc", "only used with --mode three")),
        (CoinsArg::Three, None) => Err(Error::invalid("pc", "required with --mode three")),
    }
}

fn cmd_qlearn(command: QlearnCommand, out: &mut impl Write) -> Result<()> {
    match command {
        QlearnCommand::Train {
            p,
            q,
            k,
            terminal,
            episodes,
            eps,
            alpha,
            gamma,
            rollouts,
            limits,
            thresholds,
            seed,
            out: path,
        } => {
            let instance = Instance::point(p, q, k)?;
            let config = QConfig {
                eps,
                alpha,
                gamma,
                episodes,
                limits: limits.limits(),
                rollouts,
                terminal: terminal.policy(),
                thresholds: thresholds.thresholds()?,
            };
            let table = qlearn::train(&instance, &config, seed)?;
            let mut w = BufWriter::new(File::create(&path)?);
            table.write_to(&mut w)?;
            w.flush()?;
            let mut manifest = Manifest::new("qlearn train");
            manifest
                .set("p", p)
                .set("q", q)
                .set("k", k)
                .set("terminal", &config.terminal)
                .set("episodes", episodes)
                .set("eps", eps)
                .set("alpha", alpha)
                .set("gamma", gamma)
                .set("rollouts", rollouts)
                .set("max_t", config.limits.max_t)
                .set("max_frontier", config.limits.max_frontier)
                .set("max_tau", config.limits.max_tau)
                .set("z_c", config.thresholds.z_c)
                .set("z_t", config.thresholds.z_t)
                .set("seed", seed)
                .set("table", path.display());
            let mut manifest_path = path.clone().into_os_string();
            manifest_path.push(".manifest");
            fs::write(manifest_path, manifest.to_text())?;
            writeln!(
                out,
                "trained {} states ({} entries) -> {}",
                table.state_count(),
                table.len(),
                path.display()
            )?;
            Ok(())
        }
        QlearnCommand::Eval {
            p,
            q,
            k,
            table,
            terminal,
            policy,
            limits,
            thresholds,
            n,
            seed,
        } => {
            let instance = Instance::point(p, q, k)?;
            let policy = match (table, terminal, policy) {
                (Some(path), Some(terminal), None) => PolicyKind::Learned(LearnedPolicy::new(
                    Arc::new(read_table(&path)?),
                    terminal.policy(),
                    limits.limits(),
                )?),
                (None, None, Some(name)) => name.parse()?,
                _ => {
                    return Err(Error::invalid(
                        "policy",
                        "give either --table with --terminal, or --policy",
                    ))
                }
            };
            let e = qlearn::evaluate(&policy, &instance, thresholds.thresholds()?, n, seed)?;
            writeln!(out, "policy = {policy}")?;
            writeln!(out, "trials = {}", e.summary.n)?;
            writeln!(out, "contained = {}", e.summary.contained)?;
            writeln!(out, "containment = {}", sig6(e.containment))?;
            writeln!(out, "mean_reward = {}", sig6(e.summary.reward_sum as f64 / n as f64))?;
            Ok(())
        }
    }
}
