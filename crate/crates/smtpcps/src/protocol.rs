//! The two covert-channel endpoints.
//!
//! The sender lives inside the controller: each step it publishes both
//! candidate inputs `u0`, `u1` plus one carrier bit `b_c` on the open wire.
//! The receiver actuates the plant with the candidate picked by a private
//! coin `b_r`. When the next state lands where only one controller-model
//! reach set can explain it (a key event), both endpoints learn `b_r` -- the
//! receiver because it flipped the coin, the sender by exclusive reach-set
//! membership -- while an eavesdropper bounded by the coarser disturbance
//! model cannot tell the two candidates apart. The shared bit keys exactly
//! one message bit on the following step: the sender emits `m XOR key`, the
//! receiver decodes `key XOR b_c`. Every carrier bit on the wire is either
//! fresh randomness or a one-time-pad emission, so the wire is
//! indistinguishable from coin flips without the key.

use nalgebra::DVector;
use rand::RngCore;
use rand_chacha::ChaCha12Rng;

use crate::controller::{control_pair, ControllableFamily};
use crate::dynamics::{key_event, reach, UncertainModel};
use crate::error::{Error, Result};

/// One emission on the open wire: both candidate inputs and the carrier bit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WireMessage {
    pub u0: f64,
    pub u1: f64,
    pub b_c: u8,
}

/// Endpoint automaton phase. `KeyAgreed` lasts exactly one step: the pad
/// emission immediately following a key event.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Phase {
    AwaitingEvent,
    KeyAgreed,
}

impl Phase {
    /// Numeric form for traces: 1 awaiting, 2 keyed.
    pub fn as_number(self) -> u8 {
        match self {
            Phase::AwaitingEvent => 1,
            Phase::KeyAgreed => 2,
        }
    }
}

/// Recover the receiver's coin from exclusive controller-model reach-set
/// membership: the transition is explainable by exactly one candidate input.
/// Errors when neither or both sets claim the state; gated behind a key
/// event on real plant transitions this cannot happen, so a desync here
/// means the caller's models or inputs are inconsistent.
pub fn infer_key(
    x_next: &DVector<f64>,
    x_prev: &DVector<f64>,
    u0_prev: f64,
    u1_prev: f64,
    mc: &UncertainModel,
    eps: f64,
) -> Result<u8> {
    let in0 = reach(mc, x_prev, u0_prev).contains(x_next, eps);
    let in1 = reach(mc, x_prev, u1_prev).contains(x_next, eps);
    match (in0, in1) {
        (true, false) => Ok(0),
        (false, true) => Ok(1),
        (both0, _) => Err(Error::ProtocolDesync(format!(
            "reach-set membership is not exclusive ({} sets claim the state)",
            if both0 { 2 } else { 0 }
        ))),
    }
}

/// Controller-side endpoint. Owns the message bits, its phase automaton, and
/// a private randomness stream for the carrier bits it must keep flat.
pub struct Sender {
    message: Vec<u8>,
    pos: usize,
    phase: Phase,
    key: u8,
    prev: Option<(DVector<f64>, f64, f64)>,
    steps_taken: u64,
    completed_at: Option<u64>,
    rng: ChaCha12Rng,
}

impl Sender {
    /// Message bits must all be 0 or 1.
    pub fn new(message: Vec<u8>, rng: ChaCha12Rng) -> Result<Self> {
        if message.iter().any(|&b| b > 1) {
            return Err(Error::Config("message bits must be 0 or 1".into()));
        }
        Ok(Sender {
            message,
            pos: 0,
            phase: Phase::AwaitingEvent,
            key: 0,
            prev: None,
            steps_taken: 0,
            completed_at: None,
            rng,
        })
    }

    fn random_bit(&mut self) -> u8 {
        (self.rng.next_u32() & 1) as u8
    }

    /// One protocol step at the measured state `x`:
    /// first the phase update from the transition that just completed (a key
    /// event while awaiting one agrees on the receiver's coin; a pad emission
    /// always falls back to awaiting), then the carrier bit for the new
    /// phase, then both candidate inputs for the current state.
    pub fn step(
        &mut self,
        x: &DVector<f64>,
        fam: &ControllableFamily,
        mc: &UncertainModel,
        me: &UncertainModel,
        eps: f64,
    ) -> Result<WireMessage> {
        self.phase = match (self.phase, &self.prev) {
            (Phase::AwaitingEvent, Some((xp, u0p, u1p))) => {
                match key_event(x, xp, *u0p, *u1p, mc, me, eps) {
                    Some(bit) => {
                        self.key = bit as u8;
                        Phase::KeyAgreed
                    }
                    None => Phase::AwaitingEvent,
                }
            }
            _ => Phase::AwaitingEvent,
        };

        let b_c = match self.phase {
            Phase::KeyAgreed if self.pos < self.message.len() => {
                let b = self.message[self.pos] ^ self.key;
                self.pos += 1;
                if self.pos == self.message.len() {
                    self.completed_at = Some(self.steps_taken);
                }
                b
            }
            // awaiting an event, or the message ran out: keep the wire flat
            _ => self.random_bit(),
        };

        let (u0, u1) = control_pair(x, fam, eps)?;
        self.prev = Some((x.clone(), u0, u1));
        self.steps_taken += 1;
        Ok(WireMessage { u0, u1, b_c })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// The agreed coin while a pad emission is in flight.
    pub fn agreed_key(&self) -> Option<u8> {
        (self.phase == Phase::KeyAgreed).then_some(self.key)
    }

    /// Message bits already emitted.
    pub fn bits_sent(&self) -> usize {
        self.pos
    }

    /// Step index of the final pad emission, once the whole message is out.
    pub fn completed_at(&self) -> Option<u64> {
        self.completed_at
    }
}

/// The applied input and the private coin behind it.
#[derive(Clone, Copy, Debug)]
pub struct Actuation {
    pub u: f64,
    pub b_r: u8,
}

/// What one observation did to the receiver automaton.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObserveOutcome {
    /// A key event fired and the coin became the shared key.
    pub keyed: bool,
    /// A pad emission decoded into this message bit.
    pub decoded_bit: Option<u8>,
}

struct PendingActuation {
    x: DVector<f64>,
    u0: f64,
    u1: f64,
    b_r: u8,
    b_c: u8,
}

/// Actuator-side endpoint. Flips the private coin, drives the plant, and
/// mirrors the sender's automaton from observations alone.
pub struct Receiver {
    phase: Phase,
    key: u8,
    decoded: Vec<u8>,
    pending: Option<PendingActuation>,
    rng: ChaCha12Rng,
}

impl Receiver {
    pub fn new(rng: ChaCha12Rng) -> Self {
        Receiver {
            phase: Phase::AwaitingEvent,
            key: 0,
            decoded: Vec::new(),
            pending: None,
            rng,
        }
    }

    /// Pick a candidate input by private coin and remember everything needed
    /// to judge the transition once the next state is measured.
    pub fn act(&mut self, x: &DVector<f64>, msg: &WireMessage) -> Actuation {
        let b_r = (self.rng.next_u32() & 1) as u8;
        let u = if b_r == 0 { msg.u0 } else { msg.u1 };
        self.pending = Some(PendingActuation {
            x: x.clone(),
            u0: msg.u0,
            u1: msg.u1,
            b_r,
            b_c: msg.b_c,
        });
        Actuation { u, b_r }
    }

    /// Judge the completed transition: while awaiting, a key event promotes
    /// the stored coin to the shared key; in the keyed phase this carrier
    /// bit is a pad emission and decodes unconditionally, after which the
    /// automaton resets. Exactly mirrors the sender's update order.
    pub fn observe(
        &mut self,
        x_next: &DVector<f64>,
        mc: &UncertainModel,
        me: &UncertainModel,
        eps: f64,
    ) -> Result<ObserveOutcome> {
        let pending = self.pending.take().ok_or_else(|| {
            Error::InternalInconsistency("observe called without a pending actuation".into())
        })?;
        let mut outcome = ObserveOutcome {
            keyed: false,
            decoded_bit: None,
        };
        match self.phase {
            Phase::AwaitingEvent => {
                if key_event(x_next, &pending.x, pending.u0, pending.u1, mc, me, eps).is_some() {
                    self.key = pending.b_r;
                    self.phase = Phase::KeyAgreed;
                    outcome.keyed = true;
                }
            }
            Phase::KeyAgreed => {
                let bit = self.key ^ pending.b_c;
                self.decoded.push(bit);
                outcome.decoded_bit = Some(bit);
                self.phase = Phase::AwaitingEvent;
            }
        }
        Ok(outcome)
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// The agreed coin while a pad emission is in flight.
    pub fn agreed_key(&self) -> Option<u8> {
        (self.phase == Phase::KeyAgreed).then_some(self.key)
    }

    /// Message bits decoded so far, in order.
    pub fn decoded(&self) -> &[u8] {
        &self.decoded
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    use super::*;
    use crate::controller::set_index;
    use crate::dynamics::{nominal_next, TrueSystem};
    use crate::geometry::Polytope;
    use crate::test_fixtures::{ref_family, ref_linear, ref_mc, ref_me};

    const EPS: f64 = 1e-9;

    fn v2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_column_slice(&[x, y])
    }

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    /// A state whose two candidate inputs differ by a gap small enough for
    /// the coarse reach sets to overlap but large enough for the fine ones
    /// to separate, i.e. a state from which key events are possible.
    fn event_capable_state() -> (DVector<f64>, f64, f64) {
        let fam = ref_family();
        let mut probe = rng(0xeca9);
        for _ in 0..50_000 {
            let unit = |r: &mut ChaCha12Rng| (r.next_u32() as f64 / u32::MAX as f64) * 2.0 - 1.0;
            let x = v2(5.0 * unit(&mut probe), 30.0 * unit(&mut probe));
            if set_index(&x, fam, EPS).is_err() {
                continue;
            }
            let (u0, u1) = control_pair(&x, fam, EPS).unwrap();
            let gap = (u0 - u1).abs();
            if (0.05..0.7).contains(&gap) {
                return (x, u0, u1);
            }
        }
        panic!("no event-capable state found in the probe cloud");
    }

    #[test]
    fn terminal_states_advertise_identical_candidates() {
        let (fam, mc, me) = (ref_family(), ref_mc(), ref_me(4.0));
        let mut sender = Sender::new(vec![1, 0, 1], rng(1)).unwrap();
        let x = v2(0.1, 0.0);
        let msg = sender.step(&x, fam, &mc, &me, EPS).unwrap();
        assert_relative_eq!(msg.u0, -1.327, max_relative = 1e-12);
        assert_eq!(msg.u0.to_bits(), msg.u1.to_bits());
        assert_eq!(sender.phase(), Phase::AwaitingEvent);
        assert!(msg.b_c <= 1);
    }

    #[test]
    fn wire_is_fair_coin_without_events() {
        let (fam, mc, me) = (ref_family(), ref_mc(), ref_me(4.0));
        let mut sender = Sender::new(vec![0; 8], rng(2)).unwrap();
        let x = v2(0.0, 0.0);
        // stationary at the origin both reach sets coincide: never an event
        let n = 10_000;
        let ones: u32 = (0..n)
            .map(|_| u32::from(sender.step(&x, fam, &mc, &me, EPS).unwrap().b_c))
            .sum();
        assert_eq!(sender.phase(), Phase::AwaitingEvent);
        assert_eq!(sender.bits_sent(), 0);
        let mean = f64::from(ones) / f64::from(n);
        // 3 sigma for a fair coin over 10k draws
        assert!((0.485..=0.515).contains(&mean), "wire mean {mean}");
    }

    #[test]
    fn receiver_coin_is_fair() {
        let mut receiver = Receiver::new(rng(3));
        let msg = WireMessage {
            u0: -1.0,
            u1: 1.0,
            b_c: 0,
        };
        let x = v2(0.0, 0.0);
        let n = 10_000;
        let mut ones = 0u32;
        for _ in 0..n {
            let act = receiver.act(&x, &msg);
            ones += u32::from(act.b_r);
            assert_eq!(act.u, if act.b_r == 0 { -1.0 } else { 1.0 });
        }
        let mean = f64::from(ones) / f64::from(n);
        assert!((0.485..=0.515).contains(&mean), "coin mean {mean}");
    }

    #[test]
    fn fabricated_event_keys_sender_then_pads_and_resets() {
        let (fam, mc, me) = (ref_family(), ref_mc(), ref_me(4.0));
        let (x, u0, u1) = event_capable_state();
        let message = vec![1, 0, 1];
        let mut sender = Sender::new(message.clone(), rng(4)).unwrap();

        let first = sender.step(&x, fam, &mc, &me, EPS).unwrap();
        assert_eq!(first.u0.to_bits(), u0.to_bits());
        assert_eq!(first.u1.to_bits(), u1.to_bits());
        assert_eq!(sender.phase(), Phase::AwaitingEvent);

        // next state explainable only by u0: a key event with coin 0
        let center0 = nominal_next(&mc, &x, u0);
        let center1 = nominal_next(&mc, &x, u1);
        let away = if center1[1] > center0[1] { -0.115 } else { 0.115 };
        let x_event = v2(center0[0], center0[1] + away);
        assert_eq!(
            key_event(&x_event, &x, u0, u1, &mc, &me, EPS),
            Some(0),
            "fabricated state is not an exclusive event"
        );

        let second = sender.step(&x_event, fam, &mc, &me, EPS).unwrap();
        assert_eq!(sender.phase(), Phase::KeyAgreed);
        assert_eq!(sender.agreed_key(), Some(0));
        // key 0 pads the first message bit in the clear
        assert_eq!(second.b_c, message[0]);
        assert_eq!(sender.bits_sent(), 1);

        // the pad emission resets the automaton no matter what comes next
        let quiet = nominal_next(&mc, &x_event, second.u0);
        sender.step(&quiet, fam, &mc, &me, EPS).unwrap();
        assert_eq!(sender.phase(), Phase::AwaitingEvent);
        assert_eq!(sender.bits_sent(), 1);
    }

    #[test]
    fn receiver_keys_on_event_and_decodes_next_pad() {
        let (mc, me) = (ref_mc(), ref_me(4.0));
        let (x, u0, u1) = event_capable_state();
        let mut receiver = Receiver::new(rng(5));

        let msg = WireMessage { u0, u1, b_c: 0 };
        let act = receiver.act(&x, &msg);
        let center_applied = nominal_next(&mc, &x, act.u);
        let center_other = nominal_next(&mc, &x, if act.b_r == 0 { u1 } else { u0 });
        let away = if center_other[1] > center_applied[1] {
            -0.115
        } else {
            0.115
        };
        let x_event = v2(center_applied[0], center_applied[1] + away);

        let outcome = receiver.observe(&x_event, &mc, &me, EPS).unwrap();
        assert!(outcome.keyed);
        assert_eq!(outcome.decoded_bit, None);
        assert_eq!(receiver.agreed_key(), Some(act.b_r));

        // pad step: carrier bit is message XOR key, decode must invert it
        let message_bit = 1u8;
        let pad = WireMessage {
            u0,
            u1,
            b_c: message_bit ^ act.b_r,
        };
        receiver.act(&x_event, &pad);
        let x_any = nominal_next(&mc, &x_event, pad.u0);
        let outcome = receiver.observe(&x_any, &mc, &me, EPS).unwrap();
        assert_eq!(outcome.decoded_bit, Some(message_bit));
        assert!(!outcome.keyed);
        assert_eq!(receiver.phase(), Phase::AwaitingEvent);
        assert_eq!(receiver.decoded(), &[message_bit]);
    }

    #[test]
    fn observe_without_act_is_a_contract_violation() {
        let (mc, me) = (ref_mc(), ref_me(4.0));
        let mut receiver = Receiver::new(rng(6));
        assert!(matches!(
            receiver.observe(&v2(0.0, 0.0), &mc, &me, EPS),
            Err(Error::InternalInconsistency(_))
        ));
    }

    #[test]
    fn key_inference_is_exclusive_or_errors() {
        let mc = ref_mc();
        let (x, u0, u1) = event_capable_state();
        let center0 = nominal_next(&mc, &x, u0);
        let center1 = nominal_next(&mc, &x, u1);
        let away = if center1[1] > center0[1] { -0.115 } else { 0.115 };
        let exclusive = v2(center0[0], center0[1] + away);
        assert_eq!(infer_key(&exclusive, &x, u0, u1, &mc, EPS).unwrap(), 0);
        // midpoint of close-enough centers is claimed by both sets
        let mid = v2(
            0.5 * (center0[0] + center1[0]),
            0.5 * (center0[1] + center1[1]),
        );
        assert!(matches!(
            infer_key(&mid, &x, u0, u1, &mc, EPS),
            Err(Error::ProtocolDesync(_))
        ));
        let far = v2(center0[0] + 100.0, center0[1]);
        assert!(matches!(
            infer_key(&far, &x, u0, u1, &mc, EPS),
            Err(Error::ProtocolDesync(_))
        ));
    }

    #[test]
    fn invalid_message_bits_are_rejected() {
        assert!(matches!(
            Sender::new(vec![0, 1, 2], rng(7)),
            Err(Error::Config(_))
        ));
    }

    /// Drive the full closed loop and return (key events, decoded bits,
    /// sender bits emitted, message), asserting phase lockstep and key
    /// agreement at every step.
    fn run_loop(
        steps: usize,
        noise_half: f64,
        seed: u64,
        message: Vec<u8>,
    ) -> (usize, Vec<u8>, usize, Vec<u8>) {
        let (fam, mc, me) = (ref_family(), ref_mc(), ref_me(4.0));
        let noise = if noise_half > 0.0 {
            Polytope::cube(2, noise_half).unwrap()
        } else {
            Polytope::singleton(&v2(0.0, 0.0)).unwrap()
        };
        let mut sys = TrueSystem::new(ref_linear(), noise, rng(seed)).unwrap();
        let mut sender = Sender::new(message.clone(), rng(seed ^ 0xa5a5)).unwrap();
        let mut receiver = Receiver::new(rng(seed ^ 0x5a5a));
        // start in a shell where candidate gaps are in the event window
        let mut x = v2(0.0, 30.0);
        assert!(set_index(&x, fam, EPS).unwrap() > 0);
        let mut events = 0;
        for _ in 0..steps {
            let msg = sender.step(&x, fam, &mc, &me, EPS).unwrap();
            // lockstep: sender emission phase == receiver phase entering observe
            assert_eq!(sender.phase(), receiver.phase(), "phase lockstep broke");
            let act = receiver.act(&x, &msg);
            let (x_next, _) = sys.step_true(&x, act.u);
            let outcome = receiver.observe(&x_next, &mc, &me, EPS).unwrap();
            if outcome.keyed {
                events += 1;
            }
            x = x_next;
        }
        // agreement on every key the sender ever held is implied by zero
        // decode errors; phases were asserted in lockstep throughout
        (events, receiver.decoded().to_vec(), sender.bits_sent(), message)
    }

    #[test]
    fn noiseless_loop_decodes_without_errors() {
        let message: Vec<u8> = (0..64).map(|i| ((i * 7 + 3) % 2) as u8).collect();
        let (events, decoded, sent, message) = run_loop(400, 0.0, 8, message);
        assert!(events > 0, "transient produced no key events");
        assert!(!decoded.is_empty());
        let n = decoded.len().min(sent).min(message.len());
        assert_eq!(&decoded[..n], &message[..n]);
    }

    #[test]
    fn noisy_loop_agrees_on_thousands_of_keys() {
        let mut total_events = 0;
        let mut total_bits = 0;
        for rep in 0..600 {
            let message: Vec<u8> = (0..64).map(|i| ((i + rep) % 2) as u8).collect();
            let (events, decoded, sent, message) = run_loop(60, 0.1, 100 + rep as u64, message);
            // every decoded bit must match the message prefix: key agreement
            // and pad alignment have no other way to hold
            let n = decoded.len().min(sent).min(message.len());
            assert_eq!(&decoded[..n], &message[..n]);
            total_events += events;
            total_bits += decoded.len();
        }
        assert!(
            total_events >= 2000,
            "only {total_events} key events in 600 noisy episodes"
        );
        assert!(total_bits >= 1000, "only {total_bits} bits decoded");
    }
}
