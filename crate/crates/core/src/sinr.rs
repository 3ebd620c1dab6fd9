//! The physical interference law.
//!
//! A receiver `v` decodes sender `u` iff
//! `(P(u)/d(u,v)^α) / (Σ_{u'≠u} P(u')/d(u',v)^α + N) ≥ β`,
//! where the sum runs over every other concurrent transmitter.
//! Received-power sums are accumulated largest-first so that every caller,
//! including the trace auditor, reproduces the same bits.

use serde::{Deserialize, Serialize};

use crate::geometry::{Instance, NodeId, SinrParams};
use crate::{Error, Result};

/// Relative slack on the `≥ β` test, absorbing `powf` rounding at the exact
/// range boundary.
pub const SINR_REL_TOL: f64 = 1e-9;

/// Message kinds carried by a transmission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// A rank announcement.
    Rank { rank: f64 },
    /// A contention priority used while electing dominators.
    Priority { value: f64 },
    /// "I joined the dominating set."
    Joined,
    /// A transmission request on a scheduled link.
    Link { link: usize },
    /// Free-form beacon for tests and diagnostics.
    Beacon { tag: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transmission {
    pub sender: NodeId,
    pub power: f64,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub power: f64,
}

/// Range covered by power `p` with zero interference.
pub fn range_of_power(p: f64, params: &SinrParams) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    (p / (params.noise * params.beta)).powf(1.0 / params.alpha)
}

/// Smallest power that reaches range `r` with zero interference.
pub fn power_of_range(r: f64, params: &SinrParams) -> Result<f64> {
    let p = params.noise * params.beta * r.powf(params.alpha);
    if p > params.p_max * (1.0 + SINR_REL_TOL) {
        return Err(Error::RangeUnreachable { range: r, power: p, p_max: params.p_max });
    }
    Ok(p)
}

/// Power a transmitter of power `power` delivers at distance `d`.
#[inline]
pub fn received_power(power: f64, d: f64, alpha: f64) -> f64 {
    power / d.powf(alpha)
}

/// Sums non-negative contributions largest-first.
pub fn sum_descending(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| b.total_cmp(a));
    values.iter().fold(0.0, |acc, v| acc + v)
}

#[inline]
pub fn meets_threshold(sinr: f64, beta: f64) -> bool {
    sinr >= beta * (1.0 - SINR_REL_TOL)
}

/// SINR of `intended_sender`'s signal at `receiver`, with every other member of
/// `concurrent` counted as interference.
pub fn sinr_at(receiver: NodeId, intended_sender: NodeId, concurrent: &[Transmission], inst: &Instance) -> f64 {
    let alpha = inst.params().alpha;
    let mut signal = 0.0;
    let mut others = Vec::with_capacity(concurrent.len());
    for t in concurrent {
        let rp = received_power(t.power, inst.dist(t.sender, receiver), alpha);
        if t.sender == intended_sender {
            signal = rp;
        } else {
            others.push(rp);
        }
    }
    signal / (sum_descending(&mut others) + inst.params().noise)
}

/// Everything `receiver` hears, noise included.
pub fn total_received_power(receiver: NodeId, concurrent: &[Transmission], inst: &Instance) -> f64 {
    let alpha = inst.params().alpha;
    let mut all: Vec<f64> =
        concurrent.iter().map(|t| received_power(t.power, inst.dist(t.sender, receiver), alpha)).collect();
    sum_descending(&mut all) + inst.params().noise
}

/// True iff every link meets the threshold with all of the set's senders
/// transmitting simultaneously.
pub fn feasible(links: &[Link], inst: &Instance) -> bool {
    let concurrent: Vec<Transmission> = links
        .iter()
        .map(|l| Transmission { sender: l.sender, power: l.power, payload: Payload::Beacon { tag: 0 } })
        .collect();
    let senders: std::collections::BTreeSet<NodeId> = links.iter().map(|l| l.sender).collect();
    links.iter().all(|l| {
        l.sender != l.receiver
            && !senders.contains(&l.receiver)
            && meets_threshold(sinr_at(l.receiver, l.sender, &concurrent, inst), inst.params().beta)
    })
}

/// Path-loss table `d(u,v)^α`, computed with the same expression as
/// [`received_power`] so lookups are bit-identical to direct evaluation.
#[derive(Debug, Clone)]
pub struct PathLoss {
    n: usize,
    loss: Vec<f64>,
}

impl PathLoss {
    pub fn new(inst: &Instance) -> Self {
        let n = inst.n();
        let alpha = inst.params().alpha;
        let mut loss = vec![0.0; n * n];
        for u in 0..n {
            for v in 0..n {
                loss[u * n + v] = inst.dist(u, v).powf(alpha);
            }
        }
        Self { n, loss }
    }

    #[inline]
    pub fn received(&self, power: f64, from: NodeId, to: NodeId) -> f64 {
        power / self.loss[from * self.n + to]
    }
}
