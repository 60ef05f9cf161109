//! Eavesdropper models.
//!
//! An eavesdropper sees everything on the wire (both candidate inputs and
//! the carrier bit, every step) plus the public state measurements, but
//! never the receiver's coin, the endpoint phases, or the keys. To read a
//! message bit it must replay the endpoint automaton: detect key events and
//! recover the coin by exclusive reach-set membership. Its handicap is the
//! disturbance set: genuine events land where both of its coarse reach sets
//! overlap, so its own resolution flags nothing there, and a guessed finer
//! set either misses events or miskeys them unless it happens to match the
//! defenders' set.

use nalgebra::DVector;
use rand::RngCore;
use rand_chacha::ChaCha12Rng;

use crate::dynamics::{key_event, LinearModel, UncertainModel};
use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::protocol::WireMessage;

/// Everything an eavesdropper has collected by the end of an episode:
/// one state measurement and one wire emission per step, plus the terminal
/// measurement that closes the last transition.
#[derive(Clone, Debug, Default)]
pub struct EavesdropperView {
    states: Vec<DVector<f64>>,
    msgs: Vec<WireMessage>,
}

impl EavesdropperView {
    pub fn new() -> Self {
        Self::default()
    }

    /// One step's public information: the measured state and the emission
    /// computed at it.
    pub fn record(&mut self, x: &DVector<f64>, msg: &WireMessage) {
        assert_eq!(
            self.states.len(),
            self.msgs.len(),
            "record after record_final"
        );
        self.states.push(x.clone());
        self.msgs.push(*msg);
    }

    /// The terminal measurement; no emission accompanies it.
    pub fn record_final(&mut self, x: &DVector<f64>) {
        assert_eq!(
            self.states.len(),
            self.msgs.len(),
            "record_final called twice"
        );
        self.states.push(x.clone());
    }

    /// Completed transitions available for replay.
    pub fn transitions(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn emissions(&self) -> usize {
        self.msgs.len()
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn messages(&self) -> &[WireMessage] {
        &self.msgs
    }
}

/// A decoded-message-bit guess tied to the emission step it decodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BitGuess {
    pub step: usize,
    pub bit: u8,
}

/// The replayed automaton's output: which transition-closing steps it
/// believed were key events, and the pad decodes that followed.
#[derive(Clone, Debug, Default)]
pub struct ReachAttack {
    pub believed_events: Vec<usize>,
    pub guesses: Vec<BitGuess>,
}

/// Replay the endpoint automaton with an assumed fine disturbance set in
/// place of the defenders' one. The event rule is public, so the replay is
/// faithful in every part of it: the overlap gate on the coarse reach sets,
/// exclusive fine membership for the key, the decode on the step after a
/// believed event, and the decode step ignoring events. Only the fine set
/// itself is the attacker's guess.
pub fn attack_reachability_with(
    view: &EavesdropperView,
    assumed_fine: &UncertainModel,
    public_coarse: &UncertainModel,
    eps: f64,
) -> ReachAttack {
    let mut out = ReachAttack::default();
    let mut pad_step = false;
    for i in 0..view.transitions() {
        if pad_step {
            // the transition out of a pad emission carries no event
            pad_step = false;
            continue;
        }
        let x_prev = &view.states[i];
        let x_next = &view.states[i + 1];
        let msg = &view.msgs[i];
        if let Some(bit) = key_event(
            x_next,
            x_prev,
            msg.u0,
            msg.u1,
            assumed_fine,
            public_coarse,
            eps,
        ) {
            out.believed_events.push(i + 1);
            // the emission at the state closing the event carries the pad;
            // an event on the final transition keys a pad that never airs
            if let Some(next_msg) = view.msgs.get(i + 1) {
                out.guesses.push(BitGuess {
                    step: i + 1,
                    bit: (bit as u8) ^ next_msg.b_c,
                });
            }
            pad_step = true;
        }
    }
    out
}

/// The reach-set attack with a scaled copy of the public coarse disturbance
/// set standing in for the defenders' fine one. The scale lives in (0, 1]:
/// the attacker knows the fine set is no larger than the public one.
pub fn attack_reachability(
    view: &EavesdropperView,
    model: &LinearModel,
    de: &Polytope,
    scale_guess: f64,
    eps: f64,
) -> Result<ReachAttack> {
    if !(scale_guess.is_finite() && scale_guess > 0.0 && scale_guess <= 1.0) {
        return Err(Error::Config(format!(
            "disturbance scale guess must lie in (0, 1], got {scale_guess}"
        )));
    }
    let assumed = UncertainModel::new(model.clone(), de.scale(scale_guess))?;
    let coarse = UncertainModel::new(model.clone(), de.clone())?;
    Ok(attack_reachability_with(view, &assumed, &coarse, eps))
}

/// Baseline that ignores the wire entirely: one coin flip per message bit
/// actually transmitted.
pub fn attack_random(rng: &mut ChaCha12Rng, bits: usize) -> Vec<u8> {
    (0..bits).map(|_| (rng.next_u32() & 1) as u8).collect()
}

/// Guess quality over a truth-aligned guess sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub total: usize,
    pub correct: usize,
}

impl EvalCounts {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    pub fn absorb(&mut self, other: EvalCounts) {
        self.total += other.total;
        self.correct += other.correct;
    }
}

/// Score a guess sequence against the transmitted message bits, position by
/// position. The caller is responsible for alignment, so unequal lengths
/// are a contract violation, not a score.
pub fn evaluate(guesses: &[u8], truth: &[u8]) -> Result<EvalCounts> {
    if guesses.len() != truth.len() {
        return Err(Error::InternalInconsistency(format!(
            "guess/truth length mismatch: {} vs {}",
            guesses.len(),
            truth.len()
        )));
    }
    Ok(EvalCounts {
        total: truth.len(),
        correct: guesses.iter().zip(truth).filter(|(g, t)| g == t).count(),
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::controller::set_index;
    use crate::dynamics::TrueSystem;
    use crate::protocol::{infer_key, Receiver, Sender};
    use crate::test_fixtures::{ref_family, ref_linear, ref_mc, ref_me};

    const EPS: f64 = 1e-9;

    fn v2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_column_slice(&[x, y])
    }

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    /// Run one noisy closed-loop episode and return what each side ends up
    /// with: the eavesdropper's view, the true pad emissions, and the steps
    /// that closed genuine key events.
    fn episode(
        seed: u64,
        steps: usize,
        alpha: f64,
    ) -> (EavesdropperView, Vec<(usize, u8)>, Vec<usize>) {
        let (fam, mc, me) = (ref_family(), ref_mc(), ref_me(alpha));
        let message: Vec<u8> = (0..64).map(|i| ((i * 5 + 1) % 2) as u8).collect();
        let noise = Polytope::cube(2, 0.1).unwrap();
        let mut sys = TrueSystem::new(ref_linear(), noise, rng(seed)).unwrap();
        let mut sender = Sender::new(message.clone(), rng(seed ^ 0xa5a5)).unwrap();
        let mut receiver = Receiver::new(rng(seed ^ 0x5a5a));
        let mut view = EavesdropperView::new();
        let mut truth = Vec::new();
        let mut genuine_events = Vec::new();
        let mut x = v2(0.0, 30.0);
        assert!(set_index(&x, fam, EPS).unwrap() > 0);
        for k in 0..steps {
            let sent_before = sender.bits_sent();
            let msg = sender.step(&x, fam, &mc, &me, EPS).unwrap();
            if sender.bits_sent() > sent_before {
                truth.push((k, message[sent_before]));
            }
            view.record(&x, &msg);
            let act = receiver.act(&x, &msg);
            let (x_next, _) = sys.step_true(&x, act.u);
            let outcome = receiver.observe(&x_next, &mc, &me, EPS).unwrap();
            if outcome.keyed {
                genuine_events.push(k + 1);
            }
            x = x_next;
        }
        view.record_final(&x);
        (view, truth, genuine_events)
    }

    #[test]
    fn empty_view_yields_no_guesses() {
        let view = EavesdropperView::new();
        let (mc, me) = (ref_mc(), ref_me(4.0));
        let attack = attack_reachability_with(&view, &mc, &me, EPS);
        assert!(attack.guesses.is_empty());
        assert!(attack.believed_events.is_empty());
        assert!(attack_random(&mut rng(0), 0).is_empty());
        assert_eq!(evaluate(&[], &[]).unwrap(), EvalCounts::default());
        assert_eq!(evaluate(&[], &[]).unwrap().accuracy(), None);
    }

    #[test]
    fn random_attack_scores_a_coin_flip() {
        let n = 2000;
        let mut truth_rng = rng(11);
        let truth: Vec<u8> = (0..n).map(|_| (truth_rng.next_u32() & 1) as u8).collect();
        let guesses = attack_random(&mut rng(12), n);
        let counts = evaluate(&guesses, &truth).unwrap();
        assert_eq!(counts.total, n);
        let acc = counts.accuracy().unwrap();
        // 3 sigma around a fair coin over 2000 draws
        assert!((0.466..=0.534).contains(&acc), "accuracy {acc}");
    }

    #[test]
    fn random_attack_is_seed_reproducible() {
        let a = attack_random(&mut rng(7), 500);
        let b = attack_random(&mut rng(7), 500);
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
    }

    #[test]
    fn true_resolution_attacker_reads_everything() {
        // knowing the defenders' exact fine set makes the attacker a replica:
        // its decodes land at exactly the true pad steps with the right bits
        let (mc, me) = (ref_mc(), ref_me(4.0));
        let mut pads = 0;
        for seed in 0..20 {
            let (view, truth, _) = episode(400 + seed, 60, 4.0);
            let attack = attack_reachability_with(&view, &mc, &me, EPS);
            let replicated: Vec<(usize, u8)> = attack
                .guesses
                .iter()
                .map(|g| (g.step, g.bit))
                .collect();
            assert_eq!(replicated, truth, "replica attacker diverged");
            pads += truth.len();
        }
        assert!(pads >= 50, "only {pads} pad emissions across episodes");
    }

    #[test]
    fn coarse_resolution_is_blind_to_genuine_events() {
        // genuine events land inside both coarse reach sets by construction:
        // coarse membership is never exclusive there, and a replay that uses
        // the coarse set as its fine guess can never key at all
        let (model, mc, me) = (ref_linear(), ref_mc(), ref_me(4.0));
        let de = me.disturbance().clone();
        let mut genuine_total = 0;
        for seed in 0..20 {
            let (view, _, genuine) = episode(700 + seed, 60, 4.0);
            let attack = attack_reachability(&view, &model, &de, 1.0, EPS).unwrap();
            assert!(
                attack.believed_events.is_empty(),
                "coarse-as-fine replay believed an event"
            );
            for &step in &genuine {
                let x_prev = &view.states()[step - 1];
                let x_next = &view.states()[step];
                let msg = &view.messages()[step - 1];
                assert!(
                    infer_key(x_next, x_prev, msg.u0, msg.u1, &me, EPS).is_err(),
                    "coarse membership was exclusive at the genuine event at step {step}"
                );
                // while the fine resolution keys it, as the endpoints did
                assert!(infer_key(x_next, x_prev, msg.u0, msg.u1, &mc, EPS).is_ok());
            }
            genuine_total += genuine.len();
        }
        assert!(genuine_total >= 50, "only {genuine_total} genuine events");
    }

    #[test]
    fn nonpositive_scale_guess_is_rejected() {
        let (view, _, _) = episode(31, 10, 4.0);
        let (model, me) = (ref_linear(), ref_me(4.0));
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                attack_reachability(&view, &model, me.disturbance(), bad, EPS),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn evaluation_scores_positionally_and_rejects_misalignment() {
        let truth = [1u8, 0, 1, 1];
        assert_eq!(evaluate(&truth, &truth).unwrap().accuracy(), Some(1.0));
        let complement: Vec<u8> = truth.iter().map(|b| b ^ 1).collect();
        assert_eq!(evaluate(&complement, &truth).unwrap().accuracy(), Some(0.0));
        let half = [1u8, 0, 0, 0];
        let counts = evaluate(&half, &truth).unwrap();
        assert_eq!(counts, EvalCounts { total: 4, correct: 2 });
        assert_eq!(counts.accuracy(), Some(0.5));
        assert!(matches!(
            evaluate(&half[..3], &truth),
            Err(Error::InternalInconsistency(_))
        ));
        let mut pooled = counts;
        pooled.absorb(EvalCounts { total: 4, correct: 4 });
        assert_eq!(pooled.accuracy(), Some(0.75));
    }
}
