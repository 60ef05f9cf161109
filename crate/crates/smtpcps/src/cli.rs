//! Command-line interface: precompute, run, sweep, verify.
//!
//! Four subcommands over one configuration format. `precompute` builds the
//! controllable family and writes the cache; `run` plays a single episode
//! (optionally with a step trace); `sweep` runs the full grid and emits the
//! results table, the per-level summary, and a chart; `verify` re-checks
//! every certificate of a configuration plus family cache. Exit codes:
//! 0 success, 1 runtime or check failure, 2 configuration problem.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::adversary::{attack_reachability, EavesdropperView};
use crate::config::{parse_config, RunConfig};
use crate::controller::{load_family, set_index, write_family, ControllableFamily};
use crate::dynamics::{reach, TrueSystem, UncertainModel};
use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::harness::{
    default_x0_list, episode_seed, results_csv, run_episode, run_sweep, summarize, summary_csv,
    trace_csv, EpisodeConfig, EpisodeSetup, SweepConfig, SweepRow, SweepSummary,
};
use crate::protocol::{infer_key, Receiver, Sender};

#[derive(Parser)]
#[command(name = "smtpcps", about = "Closed-loop covert-channel simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the controllable-set family and write its cache file.
    Precompute(PrecomputeArgs),
    /// Run one episode and write its results row (and optional trace).
    Run(RunArgs),
    /// Run the full grid; write results.csv, summary.csv, rate_vs_alpha.svg.
    Sweep(SweepArgs),
    /// Re-check every certificate of a configuration and family cache.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Configuration file; omitted keys (or the whole flag) fall back to
    /// the reference defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FamilyArg {
    /// Family cache produced by `precompute`; omitted, the family is
    /// rebuilt from the configuration.
    #[arg(long, value_name = "PATH")]
    family: Option<PathBuf>,
}

#[derive(Args)]
struct PrecomputeArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Cache file to write.
    #[arg(long, value_name = "PATH", default_value = "family.ctrlfam")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    family: FamilyArg,
    /// Output directory for episode.csv and trace.csv.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Override the configured base seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Also write a per-step trace.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    family: FamilyArg,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Override the configured base seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Cap on concurrent episodes (default: one per core).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    family: FamilyArg,
}

/// Entry point for the `smtpcps` binary; returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Parse arguments and dispatch; factored out so tests can drive the CLI
/// in-process.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests land here too; only real usage
            // errors are failures
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.cmd {
        Cmd::Precompute(a) => cmd_precompute(&a),
        Cmd::Run(a) => cmd_run(&a),
        Cmd::Sweep(a) => cmd_sweep(&a),
        Cmd::Verify(a) => cmd_verify(&a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// 2 for configuration problems, 1 for everything else.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } => 2,
        _ => 1,
    }
}

fn load_config(arg: &ConfigArg) -> Result<RunConfig> {
    match &arg.config {
        None => Ok(RunConfig::default()),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            parse_config(&text)
        }
    }
}

/// Load the cache if a path was given, otherwise rebuild from the config.
fn obtain_family(cfg: &RunConfig, arg: &FamilyArg) -> Result<ControllableFamily> {
    match &arg.family {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read family cache {}: {e}", path.display()))
            })?;
            load_family(&text, &cfg.controller_model()?)
        }
        None => cfg.build_family(),
    }
}

fn cmd_precompute(args: &PrecomputeArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let t0 = Instant::now();
    let fam = cfg.build_family()?;
    let built = t0.elapsed();
    let cache = write_family(&fam);
    fs::write(&args.out, &cache)?;

    let counts: Vec<usize> = (0..=fam.n_sets()).map(|i| fam.set(i).vertices().len()).collect();
    let total: usize = counts.iter().sum();
    let max = counts.iter().copied().max().unwrap_or(0);
    println!(
        "family: N = {} ({} sets), {total} vertices (largest set {max})",
        fam.n_sets(),
        fam.n_sets() + 1
    );
    println!("build time: {:.3} s", built.as_secs_f64());
    println!("cache: {} ({} bytes)", args.out.display(), cache.len());
    for (i, x0) in default_x0_list(&fam)?.iter().enumerate() {
        println!(
            "x0[{i}] = ({:.6e}, {:.6e})  shell {}",
            x0[0],
            x0[1],
            set_index(x0, &fam, cfg.tol.geom_eps)?
        );
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let fam = obtain_family(&cfg, &args.family)?;
    let mc = cfg.controller_model()?;
    let me = cfg.eavesdropper_model(cfg.dist.alpha)?;
    let noise = cfg.true_disturbance()?;
    let base_seed = args.seed.unwrap_or(cfg.sim.base_seed);

    // single runs start at the outermost default shell
    let x0 = default_x0_list(&fam)?
        .into_iter()
        .next()
        .expect("default list holds at least one state");
    let seed = episode_seed(base_seed, 0, 0, 0);
    let episode = EpisodeConfig {
        x0,
        steps: cfg.sim.steps,
        message: cfg.message_spec()?.resolve(&seed),
        seed,
        want_trace: args.trace,
    };
    let setup = EpisodeSetup {
        fam: &fam,
        mc: &mc,
        me: &me,
        true_disturbance: &noise,
        eps: cfg.tol.geom_eps,
    };
    let result = run_episode(&setup, &episode)?;

    fs::create_dir_all(&args.out)?;
    let row = SweepRow {
        alpha: cfg.dist.alpha,
        x0_id: 0,
        rep: 0,
        seed_id: u64::from_le_bytes(seed[..8].try_into().expect("seed is 32 bytes")),
        result,
    };
    fs::write(args.out.join("episode.csv"), results_csv(std::slice::from_ref(&row)))?;
    if let Some(trace) = &row.result.trace {
        fs::write(args.out.join("trace.csv"), trace_csv(trace))?;
    }
    let r = &row.result;
    println!(
        "episode: {} steps, {} key events, {} decoded bits, {} bit errors, {} desyncs, {:.6} bits/s",
        r.steps, r.key_events, r.decoded_bits, r.bit_errors, r.desyncs, r.rate_bps
    );
    if let Some(msg) = &r.error {
        return Err(Error::ProtocolDesync(format!("episode aborted: {msg}")));
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let fam = obtain_family(&cfg, &args.family)?;
    let mc = cfg.controller_model()?;
    let noise = cfg.true_disturbance()?;
    let sweep = SweepConfig {
        alphas: cfg.sweep.alphas.clone(),
        x0_list: default_x0_list(&fam)?,
        reps: cfg.sim.reps,
        steps: cfg.sim.steps,
        base_seed: args.seed.unwrap_or(cfg.sim.base_seed),
        message: cfg.message_spec()?,
    };

    let t0 = Instant::now();
    let run = || run_sweep(&fam, &mc, &noise, cfg.tol.geom_eps, &sweep);
    let rows = match args.jobs {
        None => run()?,
        Some(n) => {
            if n == 0 {
                return Err(Error::Config("--jobs must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build a {n}-thread pool: {e}")))?
                .install(run)?
        }
    };
    let elapsed = t0.elapsed();

    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("results.csv"), results_csv(&rows))?;
    let summary = summarize(&rows)?;
    fs::write(args.out.join("summary.csv"), summary_csv(&summary))?;
    fs::write(args.out.join("rate_vs_alpha.svg"), rate_chart_svg(&summary))?;

    println!("sweep: {} episodes in {:.3} s", rows.len(), elapsed.as_secs_f64());
    for s in &summary.per_alpha {
        println!(
            "alpha {:>5}: mean rate {:.6} bits/s (std {:.6}, n = {})",
            s.alpha, s.mean_rate_bps, s.std_rate_bps, s.n
        );
    }
    println!(
        "rank correlation (alpha vs mean rate): {:.4}{}",
        summary.spearman,
        if summary.degenerate { " (degenerate: constant rates)" } else { "" }
    );
    let aborted = rows.iter().filter(|r| r.result.error.is_some()).count();
    if aborted > 0 {
        return Err(Error::ProtocolDesync(format!("{aborted} episodes aborted")));
    }
    Ok(())
}

/// One verify check: a name plus the first failure, if any.
struct Check {
    name: &'static str,
    failure: Option<String>,
}

fn check(name: &'static str, outcome: Result<()>) -> Check {
    Check {
        name,
        failure: outcome.err().map(|e| e.to_string()),
    }
}

fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let mut checks = vec![Check {
        name: "configuration parses and validates",
        failure: None,
    }];

    // every later suite needs the family; a broken cache fails fast
    let fam = match obtain_family(&cfg, &args.family) {
        Ok(fam) => {
            checks.push(Check {
                name: "family cache integrity and certificates",
                failure: None,
            });
            Some(fam)
        }
        Err(e) => {
            checks.push(Check {
                name: "family cache integrity and certificates",
                failure: Some(e.to_string()),
            });
            None
        }
    };

    if let Some(fam) = &fam {
        let mc = cfg.controller_model()?;
        checks.push(check(
            "coarse reach sets contain fine reach sets",
            verify_reach_inclusion(&cfg, &mc, fam),
        ));
        checks.push(check(
            "closed loop descends one shell per step and stays trapped",
            verify_descent(&cfg, &mc, fam),
        ));
        checks.push(check(
            "episodes agree on keys with zero errors and replica reads all",
            verify_episodes(&cfg, &mc, fam),
        ));
        checks.push(check(
            "eavesdropper inference is blind to genuine events",
            verify_blindness(&cfg, &mc, fam),
        ));
        checks.push(check(
            "sweep output is reproducible",
            verify_determinism(&cfg, &mc, fam),
        ));
    }

    let mut failures = 0;
    for c in &checks {
        match &c.failure {
            None => println!("PASS {}", c.name),
            Some(msg) => {
                failures += 1;
                println!("FAIL {}: {msg}", c.name);
            }
        }
    }
    if failures > 0 {
        return Err(Error::InternalInconsistency(format!(
            "{failures} of {} checks failed",
            checks.len()
        )));
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}

fn sample_in(region: &Polytope, eps: f64, rng: &mut ChaCha12Rng) -> DVector<f64> {
    let verts = region.vertices();
    let dim = region.dim();
    let (mut lo, mut hi) = (vec![f64::MAX; dim], vec![f64::MIN; dim]);
    for v in verts {
        for d in 0..dim {
            lo[d] = lo[d].min(v[d]);
            hi[d] = hi[d].max(v[d]);
        }
    }
    loop {
        let x = DVector::from_iterator(dim, (0..dim).map(|d| rng.gen_range(lo[d]..=hi[d])));
        if region.contains(&x, eps) {
            return x;
        }
    }
}

fn verify_reach_inclusion(cfg: &RunConfig, mc: &UncertainModel, fam: &ControllableFamily) -> Result<()> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.sim.base_seed ^ 0x7265616368);
    for &alpha in &cfg.sweep.alphas {
        let me = cfg.eavesdropper_model(alpha)?;
        for _ in 0..25 {
            let x = sample_in(fam.region(), cfg.tol.geom_eps, &mut rng);
            let u = rng.gen_range(-fam.u_max()..=fam.u_max());
            if !reach(mc, &x, u).is_subset(&reach(&me, &x, u), cfg.tol.geom_eps) {
                return Err(Error::InternalInconsistency(format!(
                    "fine reach set escapes the coarse one at alpha {alpha}"
                )));
            }
        }
    }
    Ok(())
}

fn verify_descent(cfg: &RunConfig, mc: &UncertainModel, fam: &ControllableFamily) -> Result<()> {
    let me = cfg.eavesdropper_model(cfg.dist.alpha)?;
    let noise = cfg.true_disturbance()?;
    let eps = cfg.tol.geom_eps;
    for (xi, x0) in default_x0_list(fam)?.into_iter().enumerate() {
        let seed = episode_seed(cfg.sim.base_seed, 0, xi, 0);
        let episode = EpisodeConfig {
            x0,
            steps: cfg.sim.steps,
            message: cfg.message_spec()?.resolve(&seed),
            seed,
            want_trace: true,
        };
        let setup = EpisodeSetup { fam, mc, me: &me, true_disturbance: &noise, eps };
        let r = run_episode(&setup, &episode)?;
        if let Some(msg) = &r.error {
            return Err(Error::ProtocolDesync(format!("episode aborted: {msg}")));
        }
        let trace = r.trace.as_ref().expect("trace was requested");
        let mut prev = None;
        for row in trace {
            let idx = set_index(&row.x, fam, eps)?;
            if let Some(p) = prev {
                let bound = std::cmp::max(p, 1) - 1;
                if idx > bound {
                    return Err(Error::InternalInconsistency(format!(
                        "shell index rose from {p} to {idx} at step {}",
                        row.k
                    )));
                }
            }
            prev = Some(idx);
        }
    }
    Ok(())
}

fn mini_sweep(
    cfg: &RunConfig,
    mc: &UncertainModel,
    fam: &ControllableFamily,
    alphas: Vec<f64>,
    reps: usize,
) -> Result<Vec<SweepRow>> {
    let sweep = SweepConfig {
        alphas,
        x0_list: default_x0_list(fam)?,
        reps,
        steps: cfg.sim.steps,
        base_seed: cfg.sim.base_seed,
        message: cfg.message_spec()?,
    };
    run_sweep(fam, mc, &cfg.true_disturbance()?, cfg.tol.geom_eps, &sweep)
}

fn verify_episodes(cfg: &RunConfig, mc: &UncertainModel, fam: &ControllableFamily) -> Result<()> {
    let rows = mini_sweep(cfg, mc, fam, vec![2.0, cfg.dist.alpha.max(3.0)], 5)?;
    let inconsistent = |msg: String| Err(Error::InternalInconsistency(msg));
    let (mut events, mut decoded) = (0usize, 0usize);
    let mut replica = crate::adversary::EvalCounts::default();
    for row in &rows {
        let r = &row.result;
        if r.bit_errors > 0 || r.desyncs > 0 {
            return inconsistent(format!(
                "episode alpha={} x0={} rep={} had {} bit errors, {} desyncs",
                row.alpha, row.x0_id, row.rep, r.bit_errors, r.desyncs
            ));
        }
        if r.key_events < r.decoded_bits {
            return inconsistent("more decodes than key events".into());
        }
        events += r.key_events;
        decoded += r.decoded_bits;
        if row.alpha == 2.0 {
            // scale 0.5 of a doubled disturbance set is the defenders' own:
            // that attacker is a replica and must read every transmitted bit
            replica.absorb(r.eval_reach[1]);
        }
    }
    if events == 0 || decoded == 0 {
        return inconsistent("no key agreement in the verification episodes".into());
    }
    if replica.accuracy() != Some(1.0) {
        return inconsistent(format!(
            "replica attacker read {}/{} transmitted bits",
            replica.correct, replica.total
        ));
    }
    Ok(())
}

/// Replay one episode manually so the recorded wire and the genuine event
/// steps are both in hand, then require exclusive-membership inference over
/// the coarse sets to reject every genuine event, and the coarse replay to
/// flag nothing at all.
fn verify_blindness(cfg: &RunConfig, mc: &UncertainModel, fam: &ControllableFamily) -> Result<()> {
    let me = cfg.eavesdropper_model(cfg.dist.alpha)?;
    let eps = cfg.tol.geom_eps;
    let x0_list = default_x0_list(fam)?;
    let x0 = x0_list.last().expect("default list holds at least one state");
    let mut genuine = 0usize;
    for rep in 0..5u64 {
        let base = cfg.sim.base_seed.wrapping_mul(0x9e3779b9).wrapping_add(rep);
        let mut sys = TrueSystem::new(
            mc.model().clone(),
            cfg.true_disturbance()?,
            ChaCha12Rng::seed_from_u64(base),
        )?;
        let mut sender = Sender::new(Vec::new(), ChaCha12Rng::seed_from_u64(base ^ 0xaaaa))?;
        let mut receiver = Receiver::new(ChaCha12Rng::seed_from_u64(base ^ 0x5555));
        let mut view = EavesdropperView::new();
        let mut x = x0.clone();
        let mut transitions = Vec::new();
        for _ in 0..cfg.sim.steps {
            let msg = sender.step(&x, fam, mc, &me, eps)?;
            view.record(&x, &msg);
            let act = receiver.act(&x, &msg);
            let (x_next, _) = sys.step_true(&x, act.u);
            let outcome = receiver.observe(&x_next, mc, &me, eps)?;
            if outcome.keyed {
                transitions.push((x.clone(), x_next.clone(), msg.u0, msg.u1));
            }
            x = x_next;
        }
        view.record_final(&x);
        genuine += transitions.len();
        for (xp, xn, u0, u1) in &transitions {
            if infer_key(xn, xp, *u0, *u1, &me, eps).is_ok() {
                return Err(Error::InternalInconsistency(
                    "a genuine event was exclusive under the coarse sets".into(),
                ));
            }
        }
        let replay = attack_reachability(&view, mc.model(), me.disturbance(), 1.0, eps)?;
        if !replay.believed_events.is_empty() {
            return Err(Error::InternalInconsistency(format!(
                "coarse replay flagged {} events",
                replay.believed_events.len()
            )));
        }
    }
    if genuine == 0 {
        return Err(Error::InternalInconsistency(
            "no genuine events to test blindness against".into(),
        ));
    }
    Ok(())
}

fn verify_determinism(cfg: &RunConfig, mc: &UncertainModel, fam: &ControllableFamily) -> Result<()> {
    let a = mini_sweep(cfg, mc, fam, vec![2.0, 4.0], 2)?;
    let b = mini_sweep(cfg, mc, fam, vec![2.0, 4.0], 2)?;
    if results_csv(&a) != results_csv(&b) {
        return Err(Error::InternalInconsistency(
            "two identical sweeps produced different bytes".into(),
        ));
    }
    Ok(())
}

/// Hand-emitted line chart of mean rate against alpha with one-standard-
/// deviation error bars. Self-contained SVG, deterministic bytes.
pub fn rate_chart_svg(summary: &SweepSummary) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 20.0, 50.0);
    let stats = &summary.per_alpha;
    let (x_min, x_max) = stats
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), s| (lo.min(s.alpha), hi.max(s.alpha)));
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let y_max = stats
        .iter()
        .map(|s| s.mean_rate_bps + s.std_rate_bps)
        .fold(0.0f64, f64::max)
        .max(1e-3)
        * 1.1;
    let sx = |a: f64| ml + (a - x_min) / x_span * (w - ml - mr);
    let sy = |r: f64| h - mb - (r / y_max) * (h - mt - mb);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    s.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    // axes
    s.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr
    ));
    s.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb
    ));
    for i in 0..=5 {
        let r = y_max * i as f64 / 5.0;
        let y = sy(r);
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{ml}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
            ml - 5.0
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{r:.2}</text>\n",
            ml - 9.0,
            y + 4.0
        ));
    }
    for st in stats {
        let x = sx(st.alpha);
        s.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{0}\" x2=\"{x:.2}\" y2=\"{1}\" stroke=\"black\"/>\n",
            h - mb,
            h - mb + 5.0
        ));
        s.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            h - mb + 20.0,
            st.alpha
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">alpha</text>\n",
        ml + (w - ml - mr) / 2.0,
        h - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0:.2})\">rate (bits/s)</text>\n",
        mt + (h - mt - mb) / 2.0
    ));
    // error bars under the line
    for st in stats {
        let x = sx(st.alpha);
        let (y_lo, y_hi) = (
            sy((st.mean_rate_bps - st.std_rate_bps).max(0.0)),
            sy(st.mean_rate_bps + st.std_rate_bps),
        );
        s.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{y_lo:.2}\" x2=\"{x:.2}\" y2=\"{y_hi:.2}\" stroke=\"gray\"/>\n"
        ));
        for y in [y_lo, y_hi] {
            s.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"gray\"/>\n",
                x - 4.0,
                x + 4.0
            ));
        }
    }
    let points: Vec<String> = stats
        .iter()
        .map(|st| format!("{:.2},{:.2}", sx(st.alpha), sy(st.mean_rate_bps)))
        .collect();
    s.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n",
        points.join(" ")
    ));
    for st in stats {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"steelblue\"/>\n",
            sx(st.alpha),
            sy(st.mean_rate_bps)
        ));
    }
    s.push_str("</svg>\n");
    s
}
