//! Rank-based tree construction: the bottom-up phased forest, the
//! rank-wave spanning tree over a sparse set, and the pipeline that glues
//! them into a spanning tree of the whole instance.
//!
//! Ranks are compared as `(rank, id)` pairs so that ties cannot occur.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{derive_metrics, disk_graph_on, graph_diameter, DerivedMetrics, Instance, NodeId};
use crate::primitives::{const_dominating_set, local_broadcast, BroadcastConfig, DomResult};
use crate::sim::{Engine, Payload, StageEvent, Trace};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub broadcast: BroadcastConfig,
    /// Protocol powers are `power_margin * noise * beta * range^alpha`,
    /// capped at `p_max`.
    pub power_margin: f64,
    /// Safety factor on whp bounds: slot budgets and dominating-set rounds.
    pub budget_factor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { broadcast: BroadcastConfig::default(), power_margin: 2.0, budget_factor: 8.0 }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.broadcast.validate()?;
        if !(self.power_margin >= 1.0 && self.power_margin.is_finite()) {
            return Err(Error::InvalidParams(format!("power_margin must be >= 1, got {}", self.power_margin)));
        }
        if !(self.budget_factor > 0.0 && self.budget_factor.is_finite()) {
            return Err(Error::InvalidParams(format!("budget_factor must be > 0, got {}", self.budget_factor)));
        }
        Ok(())
    }

    /// Power used to cover `range`, capped at `p_max`.
    pub fn power_for(&self, range: f64, inst: &Instance) -> f64 {
        let p = inst.params();
        (self.power_margin * p.noise * p.beta * range.powf(p.alpha)).min(p.p_max)
    }
}

/// `(rank, id)` order.
pub fn rank_cmp(ranks: &[f64], u: NodeId, v: NodeId) -> Ordering {
    ranks[u].total_cmp(&ranks[v]).then(u.cmp(&v))
}

/// Number of doubling phases for the given maximum range.
pub fn phase_count(r_max: f64) -> u32 {
    if r_max < 2.0 {
        0
    } else {
        (r_max.log2() + 1e-9).floor() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestEdge {
    pub child: NodeId,
    pub parent: NodeId,
    pub phase: u32,
}

/// Active set at the start of one doubling phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSnapshot {
    pub index: u32,
    pub distance: f64,
    pub power: f64,
    pub active: Vec<NodeId>,
    pub slots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestResult {
    pub edges: Vec<ForestEdge>,
    pub roots: Vec<NodeId>,
    pub phases: Vec<PhaseSnapshot>,
    pub slots: usize,
    pub failures: Vec<String>,
}

/// Bottom-up forest: in phase `i` every active node broadcasts its rank at
/// range `2^i`; a node that hears a higher rank attaches to the highest one
/// it heard and retires, the rest stay active. Survivors are the roots.
pub fn nnt_sinr_bp(
    engine: &mut Engine<'_>,
    members: &[NodeId],
    ranks: &[f64],
    r_max: f64,
    cfg: &RunConfig,
) -> Result<ForestResult> {
    let inst = engine.instance();
    let start = engine.slots_used();
    let mut active: Vec<NodeId> = members.to_vec();
    active.sort_unstable();
    let mut edges = Vec::new();
    let mut phases = Vec::new();
    let mut failures = Vec::new();
    for i in 1..=phase_count(r_max) {
        if active.len() <= 1 {
            engine.mark(format!("bp-early-exit-{i}"), StageEvent::Stage);
            break;
        }
        let distance = 2f64.powi(i as i32);
        let power = cfg.power_for(distance, inst);
        let senders: Vec<(NodeId, Payload)> = active.iter().map(|&v| (v, Payload::Rank { rank: ranks[v] })).collect();
        let rep =
            local_broadcast(engine, &format!("bp-phase-{i}"), &senders, &active, distance, power, &cfg.broadcast)?;
        if rep.whp_failure() {
            failures.push(format!("phase {i}: {}", rep.describe_missed()));
        }
        phases.push(PhaseSnapshot { index: i, distance, power, active: active.clone(), slots: rep.slots });
        let mut next = Vec::new();
        for &v in &active {
            let best =
                rep.heard[v].iter().map(|h| h.sender).fold(v, |b, u| if rank_cmp(ranks, u, b).is_gt() { u } else { b });
            if best == v {
                next.push(v);
            } else {
                edges.push(ForestEdge { child: v, parent: best, phase: i });
            }
        }
        active = next;
    }
    Ok(ForestResult { edges, roots: active, phases, slots: engine.slots_used() - start, failures })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveResult {
    /// `(child, parent)` pairs.
    pub edges: Vec<(NodeId, NodeId)>,
    pub phases: usize,
    pub slots: usize,
    /// Senders with higher rank heard by each node.
    pub higher_ranked: Vec<Vec<NodeId>>,
    pub failures: Vec<String>,
}

/// Rank wave from `sink` over `members`: the sink broadcasts rank 1; for
/// `phases` further phases, every node hearing a rank for the first time
/// draws a rank below it and rebroadcasts once. Each node's parent is the
/// first sender it accepted.
///
/// Ranks of all members are written into `ranks`.
pub fn nnt_sinr_cd(
    engine: &mut Engine<'_>,
    members: &[NodeId],
    sink: NodeId,
    range: f64,
    phases: usize,
    ranks: &mut [f64],
    cfg: &RunConfig,
) -> Result<WaveResult> {
    let inst = engine.instance();
    if !members.contains(&sink) {
        return Err(Error::Precondition(format!("sink {sink} is not a member")));
    }
    let adj = disk_graph_on(inst, members, range);
    if graph_diameter(&adj).is_infinite() {
        return Err(Error::Precondition(format!("disk graph over the wave set is disconnected at {range}")));
    }
    let start = engine.slots_used();
    let n = inst.n();
    let power = cfg.power_for(range, inst);
    ranks[sink] = 1.0;
    let mut first: Vec<Option<NodeId>> = vec![None; n];
    let mut ranked = vec![false; n];
    ranked[sink] = true;
    let mut higher: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    let mut front = vec![sink];
    let mut failures = Vec::new();
    if members.len() > 1 {
        for phase in 0..=phases {
            let senders: Vec<(NodeId, Payload)> =
                front.iter().map(|&v| (v, Payload::Rank { rank: ranks[v] })).collect();
            let rep =
                local_broadcast(engine, &format!("cd-phase-{phase}"), &senders, members, range, power, &cfg.broadcast)?;
            if rep.whp_failure() {
                failures.push(format!("phase {phase}: {}", rep.describe_missed()));
            }
            let mut next = Vec::new();
            for &v in members {
                for h in &rep.heard[v] {
                    let Payload::Rank { rank } = h.payload else { continue };
                    if !ranked[v] {
                        ranked[v] = true;
                        first[v] = Some(h.sender);
                        ranks[v] = draw_below(engine, v, rank);
                        next.push(v);
                    }
                    if (rank, h.sender) > (ranks[v], v) {
                        higher[v].push(h.sender);
                    }
                }
            }
            next.sort_unstable();
            front = next;
        }
    }
    let mut edges = Vec::new();
    for &v in members {
        if v == sink {
            continue;
        }
        match first[v] {
            Some(p) => edges.push((v, p)),
            None => failures.push(format!("node {v} never heard a higher rank")),
        }
    }
    Ok(WaveResult {
        edges,
        phases: if members.len() > 1 { phases + 1 } else { 0 },
        slots: engine.slots_used() - start,
        higher_ranked: higher,
        failures,
    })
}

fn draw_below(engine: &mut Engine<'_>, v: NodeId, bound: f64) -> f64 {
    if bound > 0.0 {
        engine.rng(v).gen_range(0.0..bound)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeOrigin {
    #[serde(rename = "T1")]
    Wave,
    #[serde(rename = "F1")]
    Forest,
    #[serde(rename = "root-link")]
    RootLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(NodeId, NodeId, EdgeOrigin)", into = "(NodeId, NodeId, EdgeOrigin)")]
pub struct TreeEdge {
    pub child: NodeId,
    pub parent: NodeId,
    pub origin: EdgeOrigin,
}

impl From<(NodeId, NodeId, EdgeOrigin)> for TreeEdge {
    fn from((child, parent, origin): (NodeId, NodeId, EdgeOrigin)) -> Self {
        Self { child, parent, origin }
    }
}

impl From<TreeEdge> for (NodeId, NodeId, EdgeOrigin) {
    fn from(e: TreeEdge) -> Self {
        (e.child, e.parent, e.origin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeResult {
    pub edges: Vec<TreeEdge>,
    pub sink: NodeId,
    pub cost: f64,
    pub slots_used: usize,
}

impl TreeResult {
    pub fn pairs(&self) -> Vec<(NodeId, NodeId)> {
        self.edges.iter().map(|e| (e.child, e.parent)).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("tree serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSlots {
    /// Dominating-set slots actually simulated.
    pub domset: usize,
    /// Dominating-set cost charged against the round budget.
    pub domset_charged: usize,
    pub cd: usize,
    pub bcast: usize,
    pub bp: usize,
}

impl StageSlots {
    pub fn simulated(&self) -> usize {
        self.domset + self.cd + self.bcast + self.bp
    }

    pub fn charged(&self) -> usize {
        self.domset_charged + self.cd + self.bcast + self.bp
    }
}

/// Everything a pipeline run produced, for auditing.
#[derive(Debug, Clone)]
pub struct MstRun {
    pub tree: TreeResult,
    pub metrics: DerivedMetrics,
    pub config: RunConfig,
    pub trace: Trace,
    pub dom: DomResult,
    pub dom_range: f64,
    /// Hop diameter of the disk graph at `2 * dom_range` over the dominators.
    pub dom_diameter: usize,
    pub wave: WaveResult,
    pub forest: ForestResult,
    /// Dominator each non-dominator linked to, if it heard one.
    pub dominator: Vec<Option<NodeId>>,
    pub ranks: Vec<f64>,
    pub slots: StageSlots,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Setup(#[from] Error),
    #[error("stage {stage} failed: {reason}")]
    Stage { stage: String, reason: String, trace: Box<Trace> },
}

impl PipelineError {
    pub fn partial_trace(&self) -> Option<&Trace> {
        match self {
            PipelineError::Stage { trace, .. } => Some(trace),
            PipelineError::Setup(_) => None,
        }
    }
}

fn stage_check(engine: &Engine<'_>, stage: &str, failures: &[String]) -> std::result::Result<(), PipelineError> {
    if failures.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::Stage {
            stage: stage.into(),
            reason: failures.join("; "),
            trace: Box::new(engine.trace().clone()),
        })
    }
}

fn stage_err(engine: &Engine<'_>, stage: &str, e: Error) -> PipelineError {
    PipelineError::Stage { stage: stage.into(), reason: e.to_string(), trace: Box::new(engine.trace().clone()) }
}

/// The full pipeline: dominators, a rank wave over them, rank hand-off to
/// everyone else, the phased forest over the rest, and root links to
/// dominators.
pub fn mst_sinr(
    inst: &Instance,
    seed: u64,
    instance_hash: &str,
    cfg: &RunConfig,
) -> std::result::Result<MstRun, PipelineError> {
    cfg.validate()?;
    let metrics = derive_metrics(inst)?;
    let n = inst.n();
    let r_max = metrics.r_max;
    let dom_range = r_max / inst.params().conn_c;
    let log_n = inst.log2_n();
    let mut engine = Engine::new(inst, seed, instance_hash);

    engine.mark("domset", StageEvent::Stage);
    let everyone: Vec<NodeId> = inst.node_ids().collect();
    let max_rounds = (cfg.budget_factor * log_n.ceil()).ceil() as usize;
    let dom = const_dominating_set(
        &mut engine,
        &everyone,
        dom_range,
        cfg.power_for(dom_range, inst),
        &cfg.broadcast,
        max_rounds,
    )
    .map_err(|e| stage_err(&engine, "domset", e))?;
    stage_check(&engine, "domset", &dom.failures)?;

    let wave_range = 2.0 * dom_range;
    let dom_diameter = graph_diameter(&disk_graph_on(inst, &dom.members, wave_range)).finite().ok_or_else(|| {
        stage_err(&engine, "cd", Error::Precondition("dominators are disconnected at twice their range".into()))
    })?;
    let sink = dom.members[0];
    let mut ranks = vec![0.0; n];
    engine.mark("cd", StageEvent::Stage);
    let wave = nnt_sinr_cd(&mut engine, &dom.members, sink, wave_range, 2 * dom_diameter, &mut ranks, cfg)
        .map_err(|e| stage_err(&engine, "cd", e))?;
    stage_check(&engine, "cd", &wave.failures)?;

    let mut is_dom = vec![false; n];
    for &v in &dom.members {
        is_dom[v] = true;
    }
    let others: Vec<NodeId> = everyone.iter().copied().filter(|&v| !is_dom[v]).collect();
    engine.mark("bcast", StageEvent::Stage);
    let bcast_start = engine.slots_used();
    let senders: Vec<(NodeId, Payload)> = dom.members.iter().map(|&v| (v, Payload::Rank { rank: ranks[v] })).collect();
    let rep = local_broadcast(
        &mut engine,
        "bcast",
        &senders,
        &others,
        dom_range,
        cfg.power_for(dom_range, inst),
        &cfg.broadcast,
    )
    .map_err(|e| stage_err(&engine, "bcast", e))?;
    let mut failures = Vec::new();
    if rep.whp_failure() {
        failures.push(rep.describe_missed());
    }
    let mut dominator = vec![None; n];
    for &v in &others {
        let best =
            rep.heard[v].iter().map(|h| h.sender).reduce(|b, u| if rank_cmp(&ranks, u, b).is_gt() { u } else { b });
        match best {
            Some(q) => {
                dominator[v] = Some(q);
                ranks[v] = draw_below(&mut engine, v, ranks[q]);
            }
            None => failures.push(format!("node {v} heard no dominator")),
        }
    }
    let bcast_slots = engine.slots_used() - bcast_start;
    stage_check(&engine, "bcast", &failures)?;

    engine.mark("bp", StageEvent::Stage);
    let forest = nnt_sinr_bp(&mut engine, &others, &ranks, r_max, cfg).map_err(|e| stage_err(&engine, "bp", e))?;
    stage_check(&engine, "bp", &forest.failures)?;

    let mut edges: Vec<TreeEdge> =
        wave.edges.iter().map(|&(c, p)| TreeEdge { child: c, parent: p, origin: EdgeOrigin::Wave }).collect();
    edges.extend(forest.edges.iter().map(|e| TreeEdge {
        child: e.child,
        parent: e.parent,
        origin: EdgeOrigin::Forest,
    }));
    for &v in &forest.roots {
        let q = dominator[v].expect("every non-dominator heard a dominator");
        edges.push(TreeEdge { child: v, parent: q, origin: EdgeOrigin::RootLink });
    }
    edges.sort_unstable_by_key(|e| e.child);
    let cost = edges.iter().map(|e| inst.dist(e.child, e.parent)).sum();
    let slots = StageSlots {
        domset: dom.slots,
        domset_charged: (cfg.broadcast.rounds_factor * log_n).ceil() as usize,
        cd: wave.slots,
        bcast: bcast_slots,
        bp: forest.slots,
    };
    let tree = TreeResult { edges, sink, cost, slots_used: slots.charged() };
    Ok(MstRun {
        tree,
        metrics,
        config: *cfg,
        trace: engine.into_trace(),
        dom,
        dom_range,
        dom_diameter,
        wave,
        forest,
        dominator,
        ranks,
        slots,
    })
}
