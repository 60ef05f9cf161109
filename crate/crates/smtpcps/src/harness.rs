//! Episode orchestration, the reference sweep, metrics, and determinism.
//!
//! An episode wires the four moving parts together in a fixed order per
//! step: the sender emits, the receiver picks and actuates, the true plant
//! moves, the receiver judges the completed transition. Every randomness
//! consumer draws from its own stream derived from the episode seed, so a
//! given configuration reproduces bit-identically, including across the
//! parallel sweep. After the loop the eavesdropper strategies replay the
//! recorded wire and are scored against the bits actually transmitted.

use std::collections::HashMap;

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::adversary::{
    attack_random, attack_reachability, evaluate, EavesdropperView, EvalCounts, ReachAttack,
};
use crate::controller::{set_index, ControllableFamily};
use crate::dynamics::{in_diff, TrueSystem, UncertainModel};
use crate::error::{Error, Result};
use crate::geometry::{fmt_f64, Polytope};
use crate::protocol::{Receiver, Sender};

/// Surrogate-scale guesses the reach-set attacker is scored at.
pub const REACH_SCALES: [f64; 3] = [0.25, 0.5, 0.75];

/// Shared immutable context for one episode.
pub struct EpisodeSetup<'a> {
    pub fam: &'a ControllableFamily,
    /// Defenders' fine model; its plant matrices drive the true system.
    pub mc: &'a UncertainModel,
    /// Public coarse model the eavesdropper is bounded by.
    pub me: &'a UncertainModel,
    /// What the plant actually experiences; must fit inside the fine set.
    pub true_disturbance: &'a Polytope,
    pub eps: f64,
}

/// One episode's inputs.
#[derive(Clone, Debug)]
pub struct EpisodeConfig {
    pub x0: DVector<f64>,
    pub steps: usize,
    pub message: Vec<u8>,
    pub seed: [u8; 32],
    pub want_trace: bool,
}

/// One step of the debugging trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub x: DVector<f64>,
    pub u0: f64,
    pub u1: f64,
    pub b_r: u8,
    pub b_c: u8,
    pub in_diff: bool,
    pub sender_s: u8,
    pub receiver_s: u8,
    pub key_event: bool,
    pub decoded_bit: Option<u8>,
}

/// Everything measured in one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    /// Steps actually simulated (equals the configured count unless aborted).
    pub steps: usize,
    pub key_events: usize,
    /// Message bits decoded; pad decodes past the end of the message are
    /// receiver-side noise and do not count.
    pub decoded_bits: usize,
    pub bit_errors: usize,
    /// Lockstep violations plus decodes that did not follow their key event
    /// by exactly one step. Structurally zero; counted, never assumed.
    pub desyncs: usize,
    pub rate_bps: f64,
    pub acc_random: Option<f64>,
    /// Reach-attack accuracy per surrogate scale in [`REACH_SCALES`] order.
    pub acc_reach: [Option<f64>; 3],
    pub eval_random: EvalCounts,
    pub eval_reach: [EvalCounts; 3],
    /// Step of the final pad emission if the whole message went out.
    pub completed_at: Option<u64>,
    /// In-loop abort, recorded rather than propagated.
    pub error: Option<String>,
    pub trace: Option<Vec<TraceRow>>,
}

/// An independent RNG stream for one named consumer of the episode seed.
fn substream(seed: &[u8; 32], label: &str) -> ChaCha12Rng {
    let mut h = Sha256::new();
    h.update(seed);
    h.update([label.len() as u8]);
    h.update(label.as_bytes());
    ChaCha12Rng::from_seed(h.finalize().into())
}

/// Episode seed for one sweep cell, derived so that every (base seed, α,
/// x0, rep) combination owns a distinct independent stream.
pub fn episode_seed(base_seed: u64, alpha_idx: usize, x0_idx: usize, rep: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    h.update((alpha_idx as u64).to_le_bytes());
    h.update((x0_idx as u64).to_le_bytes());
    h.update((rep as u64).to_le_bytes());
    h.finalize().into()
}

fn random_bit(rng: &mut ChaCha12Rng) -> u8 {
    (rng.next_u32() & 1) as u8
}

/// Align a reach attack to the transmitted bits: one slot per true message
/// bit, the attacker's decode where it guessed that emission step, a fresh
/// coin elsewhere.
fn align_reach(attack: &ReachAttack, pad_steps: &[usize], rng: &mut ChaCha12Rng) -> Vec<u8> {
    let by_step: HashMap<usize, u8> = attack.guesses.iter().map(|g| (g.step, g.bit)).collect();
    pad_steps
        .iter()
        .map(|s| by_step.get(s).copied().unwrap_or_else(|| random_bit(rng)))
        .collect()
}

/// Run one closed-loop episode and score the eavesdropper strategies.
///
/// Step order: sender emits at the measured state, receiver picks a
/// candidate by coin and actuates, the true plant moves, the receiver
/// judges the completed transition. Configuration errors fail fast;
/// in-loop aborts are recorded in the result and scoring proceeds on
/// whatever was simulated.
pub fn run_episode(setup: &EpisodeSetup, cfg: &EpisodeConfig) -> Result<EpisodeResult> {
    if cfg.steps == 0 {
        return Err(Error::Config("episode needs at least one step".into()));
    }
    if !setup
        .true_disturbance
        .is_subset(setup.mc.disturbance(), setup.eps)
        || !setup
            .mc
            .disturbance()
            .is_subset(setup.me.disturbance(), setup.eps)
    {
        return Err(Error::Config(
            "disturbance sets must nest: true within fine within coarse".into(),
        ));
    }
    set_index(&cfg.x0, setup.fam, setup.eps)?;

    let mut sys = TrueSystem::new(
        setup.mc.model().clone(),
        setup.true_disturbance.clone(),
        substream(&cfg.seed, "plant"),
    )?;
    let mut sender = Sender::new(cfg.message.clone(), substream(&cfg.seed, "sender"))?;
    let mut receiver = Receiver::new(substream(&cfg.seed, "receiver"));
    let mut view = EavesdropperView::new();

    let mut x = cfg.x0.clone();
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut pad_steps: Vec<usize> = Vec::new();
    let mut key_events = 0usize;
    let mut desyncs = 0usize;
    let mut last_event: Option<usize> = None;
    let mut error: Option<String> = None;
    let mut steps_run = 0usize;

    for k in 0..cfg.steps {
        let sent_before = sender.bits_sent();
        let msg = match sender.step(&x, setup.fam, setup.mc, setup.me, setup.eps) {
            Ok(m) => m,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        if sender.bits_sent() > sent_before {
            pad_steps.push(k);
        }
        // lockstep instrument: the sender's emission phase must equal the
        // receiver's phase entering this step's observation
        if sender.phase() != receiver.phase() {
            desyncs += 1;
        }
        let receiver_s = receiver.phase().as_number();
        view.record(&x, &msg);

        let act = receiver.act(&x, &msg);
        let (x_next, _) = sys.step_true(&x, act.u);
        let outcome = match receiver.observe(&x_next, setup.mc, setup.me, setup.eps) {
            Ok(o) => o,
            Err(e) => {
                error = Some(e.to_string());
                steps_run = k + 1;
                x = x_next;
                break;
            }
        };
        if outcome.keyed {
            key_events += 1;
            last_event = Some(k);
        }
        if outcome.decoded_bit.is_some() && (k == 0 || last_event != Some(k - 1)) {
            // a decode must trail its key event by exactly one step
            desyncs += 1;
        }
        if cfg.want_trace {
            trace.push(TraceRow {
                k,
                x: x.clone(),
                u0: msg.u0,
                u1: msg.u1,
                b_r: act.b_r,
                b_c: msg.b_c,
                in_diff: in_diff(&x_next, &x, msg.u0, msg.u1, setup.mc, setup.me, setup.eps),
                sender_s: sender.phase().as_number(),
                receiver_s,
                key_event: outcome.keyed,
                decoded_bit: outcome.decoded_bit,
            });
        }
        x = x_next;
        steps_run = k + 1;
    }
    view.record_final(&x);

    let decoded_all = receiver.decoded();
    let overlap = decoded_all.len().min(cfg.message.len());
    let decoded_bits = overlap;
    let bit_errors = decoded_all[..overlap]
        .iter()
        .zip(&cfg.message[..overlap])
        .filter(|(d, m)| d != m)
        .count();
    let rate_bps = if steps_run == 0 {
        0.0
    } else {
        decoded_bits as f64 / (steps_run as f64 * setup.mc.model().ts())
    };

    // eavesdropper scoring against the bits actually transmitted, all
    // randomness from one attacker stream drawn in a fixed order
    let truth = &cfg.message[..pad_steps.len().min(cfg.message.len())];
    let mut arng = substream(&cfg.seed, "attacker");
    let random_guesses = attack_random(&mut arng, truth.len());
    let eval_random = evaluate(&random_guesses, truth)?;
    let mut eval_reach = [EvalCounts::default(); 3];
    for (slot, scale) in eval_reach.iter_mut().zip(REACH_SCALES) {
        let attack = attack_reachability(
            &view,
            setup.mc.model(),
            setup.me.disturbance(),
            scale,
            setup.eps,
        )?;
        let aligned = align_reach(&attack, &pad_steps, &mut arng);
        *slot = evaluate(&aligned, truth)?;
    }

    Ok(EpisodeResult {
        steps: steps_run,
        key_events,
        decoded_bits,
        bit_errors,
        desyncs,
        rate_bps,
        acc_random: eval_random.accuracy(),
        acc_reach: [
            eval_reach[0].accuracy(),
            eval_reach[1].accuracy(),
            eval_reach[2].accuracy(),
        ],
        eval_random,
        eval_reach,
        completed_at: sender.completed_at(),
        error,
        trace: cfg.want_trace.then_some(trace),
    })
}

/// The message each episode carries: one fixed bit string, or fresh bits
/// per episode from the episode's own stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MessageSpec {
    Fixed(Vec<u8>),
    Random(usize),
}

impl MessageSpec {
    pub fn resolve(&self, seed: &[u8; 32]) -> Vec<u8> {
        match self {
            MessageSpec::Fixed(bits) => bits.clone(),
            MessageSpec::Random(len) => {
                let mut rng = substream(seed, "message");
                (0..*len).map(|_| random_bit(&mut rng)).collect()
            }
        }
    }
}

/// The reference experiment: a grid of eavesdropper scales, initial
/// conditions, and repetitions over one precomputed family.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    /// Coarse-to-fine disturbance ratios, each at least 1 (1 itself is the
    /// silent diagnostic: an empty difference region, so zero rate).
    pub alphas: Vec<f64>,
    pub x0_list: Vec<DVector<f64>>,
    pub reps: usize,
    pub steps: usize,
    pub base_seed: u64,
    pub message: MessageSpec,
}

/// One results row: the episode plus its grid coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub x0_id: usize,
    pub rep: usize,
    /// First eight bytes of the episode seed; identifies the stream.
    pub seed_id: u64,
    pub result: EpisodeResult,
}

fn validate_sweep(cfg: &SweepConfig) -> Result<()> {
    if cfg.alphas.is_empty() {
        return Err(Error::Config("sweep needs at least one alpha".into()));
    }
    for (i, &a) in cfg.alphas.iter().enumerate() {
        if !(a.is_finite() && a >= 1.0) {
            return Err(Error::Config(format!(
                "sweep alphas must be finite and at least 1, got {a}"
            )));
        }
        if cfg.alphas[..i].contains(&a) {
            return Err(Error::Config(format!("duplicate sweep alpha {a}")));
        }
    }
    if cfg.x0_list.is_empty() {
        return Err(Error::Config("sweep needs at least one initial state".into()));
    }
    if cfg.reps == 0 {
        return Err(Error::Config("sweep needs at least one repetition".into()));
    }
    if cfg.steps == 0 {
        return Err(Error::Config("sweep episodes need at least one step".into()));
    }
    Ok(())
}

/// Run the full grid. Episodes execute in parallel; rows come back in
/// deterministic (α, x0, rep) order regardless of scheduling, and a given
/// base seed reproduces every row bit-identically.
pub fn run_sweep(
    fam: &ControllableFamily,
    mc: &UncertainModel,
    true_disturbance: &Polytope,
    eps: f64,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    validate_sweep(cfg)?;
    let mes: Vec<UncertainModel> = cfg
        .alphas
        .iter()
        .map(|&a| UncertainModel::new(mc.model().clone(), mc.disturbance().scale(a)))
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(cfg.alphas.len() * cfg.x0_list.len() * cfg.reps);
    for ai in 0..cfg.alphas.len() {
        for xi in 0..cfg.x0_list.len() {
            for rep in 0..cfg.reps {
                cells.push((ai, xi, rep));
            }
        }
    }

    cells
        .par_iter()
        .map(|&(ai, xi, rep)| {
            let seed = episode_seed(cfg.base_seed, ai, xi, rep);
            let episode = EpisodeConfig {
                x0: cfg.x0_list[xi].clone(),
                steps: cfg.steps,
                message: cfg.message.resolve(&seed),
                seed,
                want_trace: false,
            };
            let setup = EpisodeSetup {
                fam,
                mc,
                me: &mes[ai],
                true_disturbance,
                eps,
            };
            let result = run_episode(&setup, &episode)?;
            Ok(SweepRow {
                alpha: cfg.alphas[ai],
                x0_id: xi,
                rep,
                seed_id: u64::from_le_bytes(seed[..8].try_into().expect("seed is 32 bytes")),
                result,
            })
        })
        .collect()
}

/// Per-α aggregate of the sweep rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaStats {
    pub alpha: f64,
    pub mean_rate_bps: f64,
    pub std_rate_bps: f64,
    pub n: usize,
}

/// Sweep aggregate: per-α statistics plus the rank-correlation trend test.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub per_alpha: Vec<AlphaStats>,
    /// Rank correlation between α and mean rate, ties averaged; zero and
    /// flagged when either side is constant.
    pub spearman: f64,
    pub degenerate: bool,
}

/// Ranks with ties averaged, 1-based.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. A constant side
/// has no ranking to correlate: reported as 0 with the degenerate flag.
pub fn spearman(xs: &[f64], ys: &[f64]) -> (f64, bool) {
    assert_eq!(xs.len(), ys.len(), "rank correlation needs paired samples");
    if xs.len() < 2 {
        return (0.0, true);
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return (0.0, true);
    }
    (cov / (vx * vy).sqrt(), false)
}

/// Aggregate rows (already in sweep order) into per-α statistics and the
/// trend test over at least two α levels.
pub fn summarize(rows: &[SweepRow]) -> Result<SweepSummary> {
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    for row in rows {
        match groups.last_mut() {
            Some((alpha, rates)) if *alpha == row.alpha => rates.push(row.result.rate_bps),
            _ => groups.push((row.alpha, vec![row.result.rate_bps])),
        }
    }
    if groups.len() < 2 {
        return Err(Error::Config(
            "summary needs at least two alpha levels".into(),
        ));
    }
    let per_alpha: Vec<AlphaStats> = groups
        .iter()
        .map(|(alpha, rates)| {
            let n = rates.len();
            let mean = rates.iter().sum::<f64>() / n as f64;
            let std = if n < 2 {
                0.0
            } else {
                (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            AlphaStats {
                alpha: *alpha,
                mean_rate_bps: mean,
                std_rate_bps: std,
                n,
            }
        })
        .collect();
    let alphas: Vec<f64> = per_alpha.iter().map(|s| s.alpha).collect();
    let means: Vec<f64> = per_alpha.iter().map(|s| s.mean_rate_bps).collect();
    let (rho, degenerate) = spearman(&alphas, &means);
    Ok(SweepSummary {
        per_alpha,
        spearman: rho,
        degenerate,
    })
}

/// Deterministic outer-shell probe state for one family layer: the farthest
/// vertex (ties broken lexicographically) pulled one percent inward, which
/// lands strictly inside that layer but outside the previous one.
pub fn shell_state(fam: &ControllableFamily, index: usize) -> Result<DVector<f64>> {
    if index == 0 || index > fam.n_sets() {
        return Err(Error::Config(format!(
            "shell index must lie in 1..={}, got {index}",
            fam.n_sets()
        )));
    }
    let set = fam.set(index);
    let far = set
        .vertices()
        .iter()
        .max_by(|a, b| {
            let (na, nb) = (a.norm(), b.norm());
            na.total_cmp(&nb).then_with(|| {
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        })
        .ok_or_else(|| Error::InternalInconsistency("family set has no vertices".into()))?;
    Ok(far * 0.99)
}

/// The three default initial conditions: outer-shell states of the layers
/// at four fifths, two fifths, and one fifth of the family depth (indices
/// 200, 100, 50 at the reference depth of 250).
pub fn default_x0_list(fam: &ControllableFamily) -> Result<Vec<DVector<f64>>> {
    let n = fam.n_sets();
    let mut indices: Vec<usize> = [4 * n / 5, 2 * n / 5, n / 5]
        .iter()
        .map(|&i| i.max(1))
        .collect();
    indices.dedup();
    indices.iter().map(|&i| shell_state(fam, i)).collect()
}

/// Exact results header the sweep CSV is written under.
pub const RESULTS_HEADER: &str = "alpha,x0_id,rep,seed,steps,key_events,decoded_bits,bit_errors,\
desyncs,rate_bps,acc_random,acc_reach_025,acc_reach_050,acc_reach_075";

/// Exact summary header.
pub const SUMMARY_HEADER: &str = "alpha,mean_rate_bps,std_rate_bps,n";

/// Exact trace header (two-dimensional state).
pub const TRACE_HEADER: &str = "k,x1,x2,u0,u1,b_r,b_c,in_diff,sender_s,receiver_s,key_event,decoded_bit";

fn fmt_acc(acc: Option<f64>) -> String {
    acc.map(|a| format!("{a:.6}")).unwrap_or_default()
}

/// Render sweep rows as the canonical results CSV (deterministic bytes).
pub fn results_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for row in rows {
        let r = &row.result;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{:.6},{},{},{},{}\n",
            row.alpha,
            row.x0_id,
            row.rep,
            row.seed_id,
            r.steps,
            r.key_events,
            r.decoded_bits,
            r.bit_errors,
            r.desyncs,
            r.rate_bps,
            fmt_acc(r.acc_random),
            fmt_acc(r.acc_reach[0]),
            fmt_acc(r.acc_reach[1]),
            fmt_acc(r.acc_reach[2]),
        ));
    }
    out
}

/// Render the per-α summary CSV (deterministic bytes).
pub fn summary_csv(summary: &SweepSummary) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in &summary.per_alpha {
        out.push_str(&format!(
            "{},{:.6},{:.6},{}\n",
            s.alpha, s.mean_rate_bps, s.std_rate_bps, s.n
        ));
    }
    out
}

/// Render a trace as CSV, full float precision.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        assert_eq!(r.x.len(), 2, "trace rows are two-dimensional");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.k,
            fmt_f64(r.x[0]),
            fmt_f64(r.x[1]),
            fmt_f64(r.u0),
            fmt_f64(r.u1),
            r.b_r,
            r.b_c,
            u8::from(r.in_diff),
            r.sender_s,
            r.receiver_s,
            u8::from(r.key_event),
            r.decoded_bit.map(|b| b.to_string()).unwrap_or_default(),
        ));
    }
    out
}
