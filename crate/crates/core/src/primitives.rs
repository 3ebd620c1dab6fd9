//! Randomized local broadcast and a dominating-set builder on top of it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Instance, NodeId, GEOM_TOL};
use crate::sim::{Action, Delivery, Engine, Payload, Protocol, StageEvent};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BroadcastConfig {
    /// Messages from farther than `gamma * range` are ignored; also the
    /// radius over which sender density is counted.
    pub gamma: f64,
    pub gamma_prime: f64,
    /// Slots per broadcast are `rounds_factor * density * log2 n`.
    pub rounds_factor: f64,
}

impl Default for BroadcastConfig {
    fn default() -> Self {
        Self { gamma: 2.0, gamma_prime: 2.0, rounds_factor: 8.0 }
    }
}

impl BroadcastConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma.is_finite()
            && self.gamma_prime >= 1.0
            && self.gamma >= self.gamma_prime
            && self.gamma > 1.0
            && self.rounds_factor > 0.0
            && self.rounds_factor.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "need gamma >= gamma_prime >= 1, gamma > 1 and rounds_factor > 0, got {self:?}"
            )))
        }
    }

    pub fn slots_for(&self, density: usize, inst: &Instance) -> usize {
        (self.rounds_factor * density as f64 * inst.log2_n()).ceil() as usize
    }
}

/// Largest number of set members inside a ball of the given radius centered
/// at a member, the center included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DensityBound {
    pub value: usize,
}

/// Density of `set` at `radius`. The empty set counts as density 1.
pub fn density(inst: &Instance, set: &[NodeId], radius: f64) -> DensityBound {
    let value = set
        .iter()
        .map(|&u| set.iter().filter(|&&v| inst.dist(u, v) <= radius + GEOM_TOL).count())
        .max()
        .unwrap_or(1)
        .max(1);
    DensityBound { value }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Heard {
    pub sender: NodeId,
    pub payload: Payload,
    pub signal: f64,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastReport {
    /// Per node, the first accepted message of each sender, in arrival order.
    pub heard: Vec<Vec<Heard>>,
    /// `(sender, receiver)` pairs within range that never got through.
    pub missed: Vec<(NodeId, NodeId)>,
    pub density: usize,
    pub slots: usize,
    pub range: f64,
    pub power: f64,
}

impl BroadcastReport {
    pub fn whp_failure(&self) -> bool {
        !self.missed.is_empty()
    }

    /// Short description of the missed pairs for failure reports.
    pub fn describe_missed(&self) -> String {
        let shown: Vec<String> = self.missed.iter().take(4).map(|(s, r)| format!("{s}->{r}")).collect();
        format!("{} pairs missed ({})", self.missed.len(), shown.join(", "))
    }
}

struct LocalBroadcast {
    payload: Vec<Option<Payload>>,
    receiver: Vec<bool>,
    prob: f64,
    power: f64,
    accept_floor: f64,
    slots_left: usize,
    slot: usize,
    heard: Vec<Vec<Heard>>,
}

impl Protocol for LocalBroadcast {
    fn act(&mut self, v: NodeId, rng: &mut ChaCha8Rng) -> Action {
        match self.payload[v] {
            Some(payload) if rng.gen_bool(self.prob) => Action::Transmit { power: self.power, payload },
            _ => Action::Listen,
        }
    }

    fn accept(&mut self, d: &Delivery) -> bool {
        if !self.receiver[d.receiver] || d.signal < self.accept_floor {
            return false;
        }
        let list = &mut self.heard[d.receiver];
        if !list.iter().any(|h| h.sender == d.sender) {
            list.push(Heard { sender: d.sender, payload: d.payload, signal: d.signal, slot: self.slot });
        }
        true
    }

    fn end_slot(&mut self) {
        self.slots_left -= 1;
        self.slot += 1;
    }

    fn is_done(&self) -> bool {
        self.slots_left == 0
    }
}

/// Every sender repeatedly transmits its payload at `power`, each slot with
/// probability `1/N` where `N` is the senders' density at `gamma * range`.
/// A receiver keeps a decoded message only if its signal shows the sender
/// is within `gamma * range`.
pub fn local_broadcast(
    engine: &mut Engine<'_>,
    label: &str,
    senders: &[(NodeId, Payload)],
    receivers: &[NodeId],
    range: f64,
    power: f64,
    cfg: &BroadcastConfig,
) -> Result<BroadcastReport> {
    let inst = engine.instance();
    let n = inst.n();
    let ids: Vec<NodeId> = senders.iter().map(|s| s.0).collect();
    // An isolated sender still only transmits half the time when others
    // exist: senders just past the density radius are not counted and could
    // otherwise drown it out in every slot.
    let floor = if ids.len() > 1 { 2 } else { 1 };
    let dens = density(inst, &ids, cfg.gamma * range).value.max(floor);
    let slots = cfg.slots_for(dens, inst);
    let mut payload = vec![None; n];
    for &(v, p) in senders {
        payload[v] = Some(p);
    }
    let mut receiver = vec![false; n];
    for &v in receivers {
        receiver[v] = true;
    }
    let mut proto = LocalBroadcast {
        payload,
        receiver,
        prob: 1.0 / dens as f64,
        power,
        accept_floor: power / (cfg.gamma * range).powf(inst.params().alpha),
        slots_left: slots,
        slot: 0,
        heard: vec![Vec::new(); n],
    };
    engine.mark(label, StageEvent::Broadcast { range, power, gamma: cfg.gamma, density: dens, slots });
    engine.run_protocol(&mut proto, slots)?;

    let mut missed = Vec::new();
    for &(s, _) in senders {
        for &r in receivers {
            if r != s && inst.dist(s, r) <= range + GEOM_TOL && !proto.heard[r].iter().any(|h| h.sender == s) {
                missed.push((s, r));
            }
        }
    }
    Ok(BroadcastReport { heard: proto.heard, missed, density: dens, slots, range, power })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomResult {
    pub members: Vec<NodeId>,
    pub rounds: usize,
    /// Slots actually simulated.
    pub slots: usize,
    pub failures: Vec<String>,
}

/// Builds a maximal independent set of `G_{range}(set)`, which dominates
/// `set` at `range` and has members pairwise farther than `range` apart.
///
/// Each round every undecided node draws a random priority and broadcasts
/// it; nodes beating every undecided neighbour join and announce it, and
/// their undecided neighbours drop out.
pub fn const_dominating_set(
    engine: &mut Engine<'_>,
    set: &[NodeId],
    range: f64,
    power: f64,
    cfg: &BroadcastConfig,
    max_rounds: usize,
) -> Result<DomResult> {
    let inst = engine.instance();
    let alpha = inst.params().alpha;
    let start = engine.slots_used();
    // A signal at least this strong means the sender is within `range`.
    let near_floor = power / (range + GEOM_TOL / 2.0).powf(alpha);
    let mut undecided: Vec<NodeId> = set.to_vec();
    undecided.sort_unstable();
    let mut members = Vec::new();
    let mut failures = Vec::new();
    let mut rounds = 0;
    while !undecided.is_empty() {
        if rounds == max_rounds {
            failures.push(format!("{} nodes still undecided after {max_rounds} rounds", undecided.len()));
            break;
        }
        rounds += 1;
        let mut prio = vec![0.0; inst.n()];
        let mut contenders = Vec::with_capacity(undecided.len());
        for &v in &undecided {
            prio[v] = engine.rng(v).gen::<f64>();
            contenders.push((v, Payload::Priority { value: prio[v] }));
        }
        let rep = local_broadcast(engine, "domset-priority", &contenders, &undecided, range, power, cfg)?;
        if rep.whp_failure() {
            failures.push(format!("round {rounds} priorities: {}", rep.describe_missed()));
        }
        let joiners: Vec<NodeId> = undecided
            .iter()
            .copied()
            .filter(|&v| {
                rep.heard[v].iter().filter(|h| h.signal >= near_floor).all(|h| match h.payload {
                    Payload::Priority { value } => (prio[v], v) > (value, h.sender),
                    _ => true,
                })
            })
            .collect();
        let rest: Vec<NodeId> = undecided.iter().copied().filter(|v| !joiners.contains(v)).collect();
        let announce: Vec<(NodeId, Payload)> = joiners.iter().map(|&v| (v, Payload::Joined)).collect();
        let rep = local_broadcast(engine, "domset-joined", &announce, &rest, range, power, cfg)?;
        if rep.whp_failure() {
            failures.push(format!("round {rounds} join announcements: {}", rep.describe_missed()));
        }
        undecided = rest.into_iter().filter(|&v| !rep.heard[v].iter().any(|h| h.signal >= near_floor)).collect();
        members.extend(joiners);
    }
    members.sort_unstable();
    Ok(DomResult { members, rounds, slots: engine.slots_used() - start, failures })
}

/// Violations of the dominating-set contract: domination at `range`,
/// members pairwise farther than `range`, and at most 16 members within
/// `2 * range` of any member.
pub fn check_dominating_set(inst: &Instance, set: &[NodeId], dom: &[NodeId], range: f64) -> Vec<String> {
    let mut out = Vec::new();
    for &v in set {
        if !dom.iter().any(|&u| inst.dist(u, v) <= range + GEOM_TOL) {
            out.push(format!("node {v} has no dominator within {range}"));
        }
    }
    for (i, &u) in dom.iter().enumerate() {
        for &v in &dom[i + 1..] {
            if inst.dist(u, v) <= range {
                out.push(format!("members {u} and {v} are {} apart", inst.dist(u, v)));
            }
        }
    }
    let packed = density(inst, dom, 2.0 * range).value;
    if !dom.is_empty() && packed > 16 {
        out.push(format!("{packed} members within {} of one member", 2.0 * range));
    }
    out
}
