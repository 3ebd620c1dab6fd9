//! Slot-synchronous radio simulator.
//!
//! Every slot, each node either listens or transmits one payload at some
//! power. The engine evaluates the interference law at every listener,
//! delivers whatever decodes, lets the running protocol accept or discard
//! each delivery, and appends the slot to a [`Trace`].

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Instance, NodeId};
use crate::sinr::{meets_threshold, sum_descending, PathLoss, SINR_REL_TOL};
pub use crate::sinr::{Payload, Transmission};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("node {node} transmits at power {power}, outside [0, {p_max}]")]
    PowerOutOfRange { node: NodeId, power: f64, p_max: f64 },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("protocol did not finish within {budget} slots")]
    Timeout { budget: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Listen,
    Transmit { power: f64, payload: Payload },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub payload: Payload,
    /// Received power of the decoded signal.
    pub signal: f64,
    pub sinr: f64,
    /// Whether the receiving protocol kept the message.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub transmissions: Vec<Transmission>,
    pub deliveries: Vec<Delivery>,
    /// Total received power, noise included, at every listener.
    pub total_power_at: Vec<(NodeId, f64)>,
}

/// What a stretch of slots was doing. Broadcast marks carry the parameters
/// the auditor needs to check the acceptance radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StageEvent {
    Stage,
    Broadcast { range: f64, power: f64, gamma: f64, density: usize, slots: usize },
    Schedule { class: u32, k: usize, slots: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMark {
    pub slot: usize,
    pub label: String,
    pub event: StageEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub instance_hash: String,
    pub seed: u64,
    pub n: usize,
    pub marks: Vec<PhaseMark>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub header: TraceHeader,
    pub slots: Vec<SlotRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Newline-delimited JSON: the header, then one slot per line.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> crate::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for s in &self.slots {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> crate::Result<Self> {
        let mut lines = r.lines();
        let header: TraceHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(crate::Error::Precondition("empty trace file".into())),
        };
        let mut slots = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            slots.push(serde_json::from_str(&line)?);
        }
        Ok(Self { header, slots })
    }

    /// SHA-256 of the NDJSON encoding, streamed without materializing it.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        struct HashWriter(Sha256);
        impl Write for HashWriter {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.update(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let mut h = HashWriter(Sha256::new());
        self.write_ndjson(&mut h).expect("hashing never fails");
        hex::encode(h.0.finalize())
    }
}

/// Per-node state shared by the tree-building protocols.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub id: NodeId,
    pub rank: Option<f64>,
    pub parent: Option<NodeId>,
    pub active: bool,
    pub dominator: Option<NodeId>,
    pub higher_ranked: Vec<NodeId>,
    pub first_msg_seen: bool,
}

impl NodeState {
    pub fn new(id: NodeId) -> Self {
        Self { id, ..Self::default() }
    }

    /// Parents are write-once.
    pub fn set_parent(&mut self, p: NodeId) {
        assert!(self.parent.is_none(), "parent of {} already set", self.id);
        assert_ne!(p, self.id, "node {} cannot parent itself", self.id);
        self.parent = Some(p);
    }
}

/// A per-node state machine driven one slot at a time.
pub trait Protocol {
    /// Decide this slot's action for `node`.
    fn act(&mut self, node: NodeId, rng: &mut ChaCha8Rng) -> Action;
    /// Offered every decoded message; returns whether it is kept.
    fn accept(&mut self, delivery: &Delivery) -> bool;
    /// Called after all deliveries of a slot.
    fn end_slot(&mut self) {}
    fn is_done(&self) -> bool;
}

pub struct Engine<'a> {
    inst: &'a Instance,
    loss: PathLoss,
    rngs: Vec<ChaCha8Rng>,
    trace: Trace,
}

impl<'a> Engine<'a> {
    pub fn new(inst: &'a Instance, seed: u64, instance_hash: impl Into<String>) -> Self {
        let rngs = (0..inst.n())
            .map(|v| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(v as u64);
                r
            })
            .collect();
        Self {
            inst,
            loss: PathLoss::new(inst),
            rngs,
            trace: Trace {
                header: TraceHeader { instance_hash: instance_hash.into(), seed, n: inst.n(), marks: vec![] },
                slots: vec![],
            },
        }
    }

    pub fn instance(&self) -> &'a Instance {
        self.inst
    }

    pub fn rng(&mut self, node: NodeId) -> &mut ChaCha8Rng {
        &mut self.rngs[node]
    }

    pub fn slots_used(&self) -> usize {
        self.trace.slots.len()
    }

    pub fn mark(&mut self, label: impl Into<String>, event: StageEvent) {
        let slot = self.slots_used();
        self.trace.header.marks.push(PhaseMark { slot, label: label.into(), event });
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    /// Runs one slot; `accept` decides the fate of each delivery.
    fn step(&mut self, actions: &[Action], mut accept: impl FnMut(&Delivery) -> bool) -> Result<&SlotRecord, SimError> {
        let n = self.inst.n();
        if actions.len() != n {
            return Err(SimError::ActionCount { expected: n, got: actions.len() });
        }
        let p_max = self.inst.params().p_max;
        let mut transmissions = Vec::new();
        for (v, a) in actions.iter().enumerate() {
            if let Action::Transmit { power, payload } = *a {
                if !(0.0..=p_max * (1.0 + SINR_REL_TOL)).contains(&power) {
                    return Err(SimError::PowerOutOfRange { node: v, power, p_max });
                }
                transmissions.push(Transmission { sender: v, power, payload });
            }
        }
        let noise = self.inst.params().noise;
        let beta = self.inst.params().beta;
        let mut deliveries = Vec::new();
        let mut total_power_at = Vec::with_capacity(n - transmissions.len());
        let mut received = Vec::with_capacity(transmissions.len());
        let mut sorted = Vec::with_capacity(transmissions.len());
        for (v, a) in actions.iter().enumerate() {
            if !matches!(a, Action::Listen) {
                continue;
            }
            received.clear();
            received.extend(transmissions.iter().map(|t| self.loss.received(t.power, t.sender, v)));
            sorted.clear();
            sorted.extend_from_slice(&received);
            total_power_at.push((v, sum_descending(&mut sorted) + noise));
            // With beta > 1 only the strongest signal can possibly decode.
            // It heads the sorted list, so the rest is its interference,
            // summed in the same order as a fresh sort would.
            let best =
                received.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).map(|(k, &s)| (k, s));
            if let Some((k, signal)) = best {
                let interference = sorted[1..].iter().fold(0.0, |acc, x| acc + x);
                let sinr = signal / (interference + noise);
                if meets_threshold(sinr, beta) {
                    let t = transmissions[k];
                    let mut d =
                        Delivery { sender: t.sender, receiver: v, payload: t.payload, signal, sinr, accepted: false };
                    d.accepted = accept(&d);
                    deliveries.push(d);
                }
            }
        }
        let slot = self.trace.slots.len();
        self.trace.slots.push(SlotRecord { slot, transmissions, deliveries, total_power_at });
        Ok(self.trace.slots.last().expect("just pushed"))
    }

    /// Runs one slot outside any protocol; nothing is accepted.
    pub fn run_slot(&mut self, actions: &[Action]) -> Result<&SlotRecord, SimError> {
        self.step(actions, |_| false)
    }

    /// Drives `proto` until it reports completion. Returns the slots used.
    pub fn run_protocol<P: Protocol>(&mut self, proto: &mut P, budget: usize) -> Result<usize, SimError> {
        let start = self.slots_used();
        let n = self.inst.n();
        let mut actions = Vec::with_capacity(n);
        loop {
            if proto.is_done() {
                return Ok(self.slots_used() - start);
            }
            if self.slots_used() - start >= budget {
                return Err(SimError::Timeout { budget });
            }
            actions.clear();
            for v in 0..n {
                actions.push(proto.act(v, &mut self.rngs[v]));
            }
            self.step(&actions, |d| proto.accept(d))?;
            proto.end_slot();
        }
    }
}

/// A protocol that timed out, with everything simulated so far.
#[derive(Debug)]
pub struct Timeout {
    pub budget: usize,
    pub trace: Trace,
}

/// Runs a protocol on a fresh engine and hands back its trace.
pub fn run_protocol<P: Protocol>(inst: &Instance, seed: u64, proto: &mut P, budget: usize) -> Result<Trace, Timeout> {
    let mut engine = Engine::new(inst, seed, "");
    match engine.run_protocol(proto, budget) {
        Ok(_) => Ok(engine.into_trace()),
        Err(_) => Err(Timeout { budget, trace: engine.into_trace() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, SinrParams};
    use crate::sinr::{range_of_power, sinr_at};
    use rand::Rng;

    fn line(xs: &[f64]) -> Instance {
        let pts: Vec<Point> = xs.iter().map(|&x| Point::new(x, 0.0)).collect();
        let params = SinrParams { p_max: 1e4, ..SinrParams::default() };
        Instance::new(&pts, params, 0).unwrap()
    }

    fn beacon(power: f64) -> Action {
        Action::Transmit { power, payload: Payload::Beacon { tag: 0 } }
    }

    struct Silent {
        left: usize,
    }

    impl Protocol for Silent {
        fn act(&mut self, _: NodeId, _: &mut ChaCha8Rng) -> Action {
            Action::Listen
        }
        fn accept(&mut self, _: &Delivery) -> bool {
            true
        }
        fn end_slot(&mut self) {
            self.left -= 1;
        }
        fn is_done(&self) -> bool {
            self.left == 0
        }
    }

    /// Each node transmits with probability 1/4 for a fixed number of slots.
    struct Chatter {
        left: usize,
    }

    impl Protocol for Chatter {
        fn act(&mut self, v: NodeId, rng: &mut ChaCha8Rng) -> Action {
            if rng.gen_bool(0.25) {
                Action::Transmit { power: 16.0, payload: Payload::Beacon { tag: v as u64 } }
            } else {
                Action::Listen
            }
        }
        fn accept(&mut self, _: &Delivery) -> bool {
            true
        }
        fn end_slot(&mut self) {
            self.left -= 1;
        }
        fn is_done(&self) -> bool {
            self.left == 0
        }
    }

    #[test]
    fn lone_transmitter_reaches_everyone_in_range() {
        let inst = line(&[0.0, 1.0, 2.0, 3.0]);
        let mut e = Engine::new(&inst, 1, "h");
        // Power 16 covers range 2.
        let rec = e.run_slot(&[beacon(16.0), Action::Listen, Action::Listen, Action::Listen]).unwrap();
        let got: Vec<NodeId> = rec.deliveries.iter().map(|d| d.receiver).collect();
        assert_eq!(got, vec![1, 2]);
        assert_eq!(range_of_power(16.0, inst.params()), 2.0);
        assert_eq!(rec.total_power_at.len(), 3);
        assert!((rec.total_power_at[0].1 - 17.0).abs() < 1e-12);
    }

    #[test]
    fn far_apart_transmitters_both_deliver() {
        let inst = line(&[0.0, 1.0, 100.0, 101.0]);
        let mut e = Engine::new(&inst, 1, "h");
        let actions = [beacon(16.0), Action::Listen, beacon(16.0), Action::Listen];
        let rec = e.run_slot(&actions).unwrap().clone();
        assert_eq!(rec.deliveries.len(), 2);
        let all: Vec<Transmission> = rec.transmissions.clone();
        for d in &rec.deliveries {
            let s = sinr_at(d.receiver, d.sender, &all, &inst);
            assert!(s >= 2.0);
            assert_eq!(s, d.sinr);
        }
    }

    #[test]
    fn all_listening_delivers_nothing() {
        let inst = line(&[0.0, 1.0, 2.0]);
        let mut e = Engine::new(&inst, 1, "h");
        let rec = e.run_slot(&[Action::Listen; 3]).unwrap();
        assert!(rec.deliveries.is_empty());
        assert!(rec.total_power_at.iter().all(|&(_, p)| p == 1.0));
    }

    #[test]
    fn rejects_power_above_max() {
        let inst = line(&[0.0, 1.0]);
        let mut e = Engine::new(&inst, 1, "h");
        let err = e.run_slot(&[beacon(2e4), Action::Listen]).unwrap_err();
        assert!(matches!(err, SimError::PowerOutOfRange { node: 0, .. }));
        assert_eq!(e.slots_used(), 0);
    }

    #[test]
    fn silent_protocol_runs_one_slot() {
        let inst = line(&[0.0, 1.0, 2.0]);
        let trace = run_protocol(&inst, 0, &mut Silent { left: 1 }, 10).unwrap();
        assert_eq!(trace.len(), 1);
        assert!(trace.slots[0].deliveries.is_empty());
    }

    #[test]
    fn timeout_keeps_partial_trace() {
        let inst = line(&[0.0, 1.0, 2.0]);
        let err = run_protocol(&inst, 0, &mut Silent { left: 5 }, 3).unwrap_err();
        assert_eq!(err.budget, 3);
        assert_eq!(err.trace.len(), 3);
    }

    #[test]
    fn same_seed_same_bytes() {
        let inst = line(&[0.0, 1.0, 2.5, 4.0, 7.0, 7.5]);
        let run = |seed| run_protocol(&inst, seed, &mut Chatter { left: 50 }, 50).unwrap();
        let a = run(9);
        let b = run(9);
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        a.write_ndjson(&mut ba).unwrap();
        b.write_ndjson(&mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), run(10).digest());
    }

    #[test]
    fn ndjson_round_trip() {
        let inst = line(&[0.0, 1.0, 2.5, 4.0]);
        let mut e = Engine::new(&inst, 4, "abc");
        e.mark("chatter", StageEvent::Stage);
        e.run_protocol(&mut Chatter { left: 20 }, 20).unwrap();
        let t = e.into_trace();
        let mut buf = Vec::new();
        t.write_ndjson(&mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 21);
        let back = Trace::read_ndjson(&buf[..]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    #[should_panic(expected = "already set")]
    fn parent_is_write_once() {
        let mut s = NodeState::new(3);
        s.set_parent(1);
        s.set_parent(2);
    }
}
