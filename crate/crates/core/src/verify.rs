//! Ground truth and auditing: exact Euclidean MSTs, tree checks, and a
//! replay of recorded traces through the interference law.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{derive_metrics, Instance, NodeId, Point, GEOM_TOL};
use crate::nnt::{rank_cmp, MstRun, TreeResult};
use crate::primitives::{check_dominating_set, density};
use crate::schedule::ScheduleResult;
use crate::sim::{StageEvent, Trace};
use crate::sinr::{feasible, meets_threshold};
use crate::{Error, Result};

/// Tolerance between the two MST oracles.
pub const MST_AGREEMENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MstResult {
    pub edges: Vec<(NodeId, NodeId)>,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }
}

/// Edge-sorting MST of the complete Euclidean graph.
pub fn kruskal(points: &[Point]) -> MstResult {
    let n = points.len();
    let mut all = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for u in 0..n {
        for v in u + 1..n {
            all.push((points[u].dist(&points[v]), u, v));
        }
    }
    all.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut uf = UnionFind::new(n);
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut cost = 0.0;
    for (d, u, v) in all {
        if uf.union(u, v) {
            edges.push((u, v));
            cost += d;
            if edges.len() + 1 == n {
                break;
            }
        }
    }
    MstResult { edges, cost }
}

/// Frontier-growing MST of the complete Euclidean graph, O(n^2).
pub fn prim(points: &[Point]) -> MstResult {
    let n = points.len();
    if n == 0 {
        return MstResult { edges: vec![], cost: 0.0 };
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut link = vec![0usize; n];
    best[0] = 0.0;
    let mut edges = Vec::with_capacity(n - 1);
    let mut cost = 0.0;
    for _ in 0..n {
        let u = (0..n).filter(|&v| !in_tree[v]).min_by(|&a, &b| best[a].total_cmp(&best[b])).expect("a vertex remains");
        in_tree[u] = true;
        if u != 0 {
            edges.push((link[u], u));
            cost += best[u];
        }
        for v in 0..n {
            if !in_tree[v] {
                let d = points[u].dist(&points[v]);
                if d < best[v] {
                    best[v] = d;
                    link[v] = u;
                }
            }
        }
    }
    MstResult { edges, cost }
}

/// Exact MST, computed twice by independent methods that must agree.
pub fn exact_mst(points: &[Point]) -> Result<MstResult> {
    if points.len() < 2 {
        return Err(Error::DegeneratePoints("need at least two points".into()));
    }
    let k = kruskal(points);
    let p = prim(points);
    if (k.cost - p.cost).abs() > MST_AGREEMENT_TOL {
        return Err(Error::OracleDisagreement { kruskal: k.cost, prim: p.cost });
    }
    Ok(k)
}

/// Problems with `edges` as a spanning tree on `n` nodes.
pub fn tree_problems(n: usize, edges: &[(NodeId, NodeId)]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    if edges.len() + 1 != n {
        out.push(("edge-count".into(), format!("{} edges for {n} nodes", edges.len())));
    }
    let mut uf = UnionFind::new(n);
    for &(u, v) in edges {
        if u >= n || v >= n || u == v {
            out.push(("endpoint".into(), format!("bad edge ({u}, {v})")));
            continue;
        }
        if !uf.union(u, v) {
            out.push(("acyclicity".into(), format!("edge ({u}, {v}) closes a cycle")));
        }
    }
    let root = uf.find(0);
    if (1..n).any(|v| uf.find(v) != root) {
        out.push(("connectivity".into(), "tree does not reach every node".into()));
    }
    out
}

pub fn tree_cost(points: &[Point], edges: &[(NodeId, NodeId)]) -> f64 {
    edges.iter().map(|&(u, v)| points[u].dist(&points[v])).sum()
}

/// `cost(tree) / cost(MST)`.
pub fn approximation_ratio(edges: &[(NodeId, NodeId)], points: &[Point]) -> Result<f64> {
    if let Some((kind, ctx)) = tree_problems(points.len(), edges).into_iter().next() {
        return Err(Error::NotSpanning(format!("{kind}: {ctx}")));
    }
    Ok(tree_cost(points, edges) / exact_mst(points)?.cost)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub sinr_violations: usize,
    pub half_duplex_violations: usize,
    /// Accepted messages from beyond the acceptance radius.
    pub acceptance_violations: usize,
    pub invariant_failures: Vec<(String, String)>,
    pub cost_ratio: f64,
    pub slots_used: usize,
    /// Name to `(measured, budget)`.
    pub bounds: BTreeMap<String, (f64, f64)>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.sinr_violations == 0
            && self.half_duplex_violations == 0
            && self.acceptance_violations == 0
            && self.invariant_failures.is_empty()
            && self.bounds.values().all(|&(m, b)| m <= b)
    }

    /// Folds another report's findings into this one.
    pub fn absorb(&mut self, other: AuditReport) {
        self.sinr_violations += other.sinr_violations;
        self.half_duplex_violations += other.half_duplex_violations;
        self.acceptance_violations += other.acceptance_violations;
        self.invariant_failures.extend(other.invariant_failures);
        self.bounds.extend(other.bounds);
        if other.cost_ratio > 0.0 {
            self.cost_ratio = other.cost_ratio;
        }
    }

    fn fail(&mut self, name: &str, ctx: impl Into<String>) {
        self.invariant_failures.push((name.into(), ctx.into()));
    }

    fn bound(&mut self, name: &str, measured: f64, budget: f64) {
        self.bounds.insert(name.into(), (measured, budget));
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Replays every slot through the interference law and checks half-duplex,
/// power limits and the acceptance radius of broadcast stages.
pub fn audit_trace(trace: &Trace, inst: &Instance) -> AuditReport {
    let mut rep = AuditReport { slots_used: trace.len(), ..AuditReport::default() };
    let n = inst.n();
    let beta = inst.params().beta;
    let p_max = inst.params().p_max;
    let alpha = inst.params().alpha;
    if trace.header.n != n {
        rep.fail("trace-instance", format!("trace has {} nodes, instance {n}", trace.header.n));
        return rep;
    }

    // Acceptance radius in force at each slot.
    let mut radius: Vec<Option<f64>> = vec![None; trace.len()];
    for m in &trace.header.marks {
        if let StageEvent::Broadcast { range, gamma, slots, .. } = m.event {
            for r in radius.iter_mut().skip(m.slot).take(slots) {
                *r = Some(gamma * range);
            }
        }
    }

    // d^alpha for every ordered pair, evaluated exactly as `received_power` does.
    let loss: Vec<f64> = (0..n * n).map(|k| inst.dist(k / n, k % n).powf(alpha)).collect();
    let noise = inst.params().noise;
    let mut transmitting = vec![false; n];
    let mut delivery_at: Vec<Option<usize>> = vec![None; n];
    let mut totals: Vec<Option<f64>> = vec![None; n];
    let mut heard = Vec::new();
    let mut sorted = Vec::new();
    for (idx, s) in trace.slots.iter().enumerate() {
        if s.slot != idx {
            rep.fail("slot-order", format!("record {idx} carries index {}", s.slot));
        }
        transmitting.iter_mut().for_each(|t| *t = false);
        delivery_at.iter_mut().for_each(|d| *d = None);
        totals.iter_mut().for_each(|t| *t = None);
        for t in &s.transmissions {
            if t.sender >= n || transmitting[t.sender] {
                rep.half_duplex_violations += 1;
                continue;
            }
            transmitting[t.sender] = true;
            if !(0.0..=p_max * (1.0 + 1e-9)).contains(&t.power) {
                rep.fail("power-limit", format!("slot {idx}: node {} at {}", t.sender, t.power));
            }
        }
        for (k, d) in s.deliveries.iter().enumerate() {
            if d.receiver >= n || transmitting[d.receiver] {
                rep.half_duplex_violations += 1;
                continue;
            }
            if delivery_at[d.receiver].replace(k).is_some() {
                rep.sinr_violations += 1;
                continue;
            }
            if d.accepted {
                if let Some(r) = radius[idx] {
                    if inst.dist(d.sender, d.receiver) > r + GEOM_TOL {
                        rep.acceptance_violations += 1;
                    }
                }
            }
        }
        for v in 0..n {
            if transmitting[v] {
                continue;
            }
            heard.clear();
            heard.extend(s.transmissions.iter().map(|t| t.power / loss[t.sender.min(n - 1) * n + v]));
            sorted.clear();
            sorted.extend_from_slice(&heard);
            sorted.sort_unstable_by(|a: &f64, b| b.total_cmp(a));
            totals[v] = Some(sorted.iter().fold(0.0, |acc, x| acc + x) + noise);
            // Interference for a signal is everything else, still largest-first.
            let sinr_of = |x: f64| {
                let k = sorted.iter().position(|&y| y == x).expect("signal is among the heard");
                x / (sorted[..k].iter().chain(&sorted[k + 1..]).fold(0.0, |acc, y| acc + y) + noise)
            };
            match delivery_at[v] {
                Some(k) => {
                    let d = &s.deliveries[k];
                    match s.transmissions.iter().position(|t| t.sender == d.sender) {
                        Some(j) => {
                            let sinr = sinr_of(heard[j]);
                            if !meets_threshold(sinr, beta) || sinr != d.sinr || s.transmissions[j].payload != d.payload
                            {
                                rep.sinr_violations += 1;
                            }
                        }
                        None => rep.sinr_violations += 1,
                    }
                }
                // With beta > 1 only the strongest signal could decode.
                None => {
                    if let Some(&top) = sorted.first() {
                        if meets_threshold(sinr_of(top), beta) {
                            rep.sinr_violations += 1;
                        }
                    }
                }
            }
        }
        let listeners = (0..n).filter(|&v| !transmitting[v]).count();
        if s.total_power_at.len() != listeners {
            rep.sinr_violations += 1;
        }
        for &(v, p) in &s.total_power_at {
            if v >= n || totals[v] != Some(p) {
                rep.sinr_violations += 1;
            }
        }
    }
    rep
}

/// Budget constant on the approximation ratio, in units of `mu`.
pub const RATIO_BUDGET_PER_MU: f64 = 16.0;
/// Most members a ball may hold in the packing checks.
pub const PACKING_LIMIT: usize = 16;

/// Full audit of a pipeline run: the trace replay plus every structural
/// invariant and bound.
pub fn audit_run(inst: &Instance, run: &MstRun) -> AuditReport {
    let mut rep = audit_trace(&run.trace, inst);
    let n = inst.n();
    let m = &run.metrics;
    let cfg = &run.config;
    let pts = inst.points();
    let everyone: Vec<NodeId> = inst.node_ids().collect();

    // Dominators.
    for v in check_dominating_set(inst, &everyone, &run.dom.members, run.dom_range) {
        rep.fail("dominating-set", v);
    }
    if run.dom_diameter > 2 * m.diameter_d {
        rep.fail("dominator-diameter", format!("diameter {} exceeds twice {}", run.dom_diameter, m.diameter_d));
    }

    // Forest phases.
    let mut edges_by_phase: BTreeMap<u32, Vec<(NodeId, NodeId)>> = BTreeMap::new();
    for e in &run.forest.edges {
        edges_by_phase.entry(e.phase).or_default().push((e.child, e.parent));
    }
    for ph in &run.forest.phases {
        let half = ph.distance / 2.0;
        for (k, &u) in ph.active.iter().enumerate() {
            for &v in &ph.active[k + 1..] {
                if inst.dist(u, v) < half - GEOM_TOL {
                    rep.fail("phase-separation", format!("phase {}: {u} and {v} too close", ph.index));
                }
            }
        }
        let packed = density(inst, &ph.active, ph.distance).value;
        if packed > PACKING_LIMIT {
            rep.fail("phase-packing", format!("phase {}: {packed} active nodes in one ball", ph.index));
        }
        if ph.active.len() > 1 {
            let formed = edges_by_phase.get(&ph.index).map(Vec::as_slice).unwrap_or(&[]);
            let cost = tree_cost(pts, formed);
            let sub: Vec<Point> = ph.active.iter().map(|&v| pts[v]).collect();
            let mst = kruskal(&sub).cost;
            rep.bound(&format!("phase-{}-cost", ph.index), cost, 4.0 * mst);
        }
    }
    let roots = &run.forest.roots;
    for (k, &u) in roots.iter().enumerate() {
        for &v in &roots[k + 1..] {
            if inst.dist(u, v) < m.r_max / 2.0 - GEOM_TOL {
                rep.fail("root-separation", format!("roots {u} and {v} are {} apart", inst.dist(u, v)));
            }
        }
    }

    // Final tree.
    let pairs = run.tree.pairs();
    for (kind, ctx) in tree_problems(n, &pairs) {
        rep.fail(&kind, ctx);
    }
    for e in &run.tree.edges {
        if rank_cmp(&run.ranks, e.parent, e.child).is_le() {
            rep.fail("rank-monotonicity", format!("edge {} -> {}", e.child, e.parent));
        }
        let len = inst.dist(e.child, e.parent);
        if len > cfg.broadcast.gamma * m.r_max + GEOM_TOL {
            rep.fail("edge-length", format!("edge {} -> {} has length {len}", e.child, e.parent));
        }
    }
    match exact_mst(pts) {
        Ok(mst) => {
            let longest = mst.edges.iter().map(|&(u, v)| inst.dist(u, v)).fold(0.0, f64::max);
            if longest > m.r_max / inst.params().conn_c + GEOM_TOL {
                rep.fail("mst-max-edge", format!("longest MST edge {longest}"));
            }
            rep.cost_ratio = tree_cost(pts, &pairs) / mst.cost;
            rep.bound("approximation-ratio", rep.cost_ratio, RATIO_BUDGET_PER_MU * m.mu);
        }
        Err(e) => rep.fail("mst-oracle", e.to_string()),
    }

    let budget = cfg.budget_factor * cfg.broadcast.rounds_factor * (m.diameter_d as f64 + m.mu) * inst.log2_n();
    rep.bound("slot-budget", run.slots.charged() as f64, budget);
    rep
}

/// Checks a stored tree on its own: spanning, and cost within the ratio
/// budget.
pub fn audit_tree(inst: &Instance, tree: &TreeResult) -> AuditReport {
    let mut rep = AuditReport { slots_used: tree.slots_used, ..AuditReport::default() };
    let pairs = tree.pairs();
    for (kind, ctx) in tree_problems(inst.n(), &pairs) {
        rep.fail(&kind, ctx);
    }
    if !rep.invariant_failures.is_empty() {
        return rep;
    }
    match (exact_mst(inst.points()), derive_metrics(inst)) {
        (Ok(mst), Ok(m)) => {
            rep.cost_ratio = tree_cost(inst.points(), &pairs) / mst.cost;
            rep.bound("approximation-ratio", rep.cost_ratio, RATIO_BUDGET_PER_MU * m.mu);
        }
        (Err(e), _) | (_, Err(e)) => rep.fail("mst-oracle", e.to_string()),
    }
    rep
}

/// Checks a schedule: every link delivered, and each slot's successful set
/// feasible on its own.
pub fn audit_schedule(inst: &Instance, res: &ScheduleResult, trace: &Trace, budget: f64) -> AuditReport {
    let mut rep = audit_trace(trace, inst);
    for (t, s) in res.slots.iter().enumerate() {
        if !feasible(s, inst) {
            rep.fail("slot-feasibility", format!("slot {t}"));
        }
    }
    let missing = res.first_success.iter().filter(|f| f.is_none()).count();
    if missing > 0 {
        rep.fail("schedule-incomplete", format!("{missing} links never delivered"));
    }
    rep.bound("schedule-completion", res.completion as f64, budget);
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SinrParams;
    use crate::sim::{Delivery, Engine, Payload, SlotRecord, Transmission};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn mst_examples() {
        let path = pts(&[(0., 0.), (1., 0.), (2., 0.), (3., 0.)]);
        assert!((exact_mst(&path).unwrap().cost - 3.0).abs() < 1e-12);
        let square = pts(&[(0., 0.), (1., 0.), (0., 1.), (1., 1.)]);
        let m = exact_mst(&square).unwrap();
        assert!((m.cost - 3.0).abs() < 1e-12);
        assert_eq!(m.edges.len(), 3);
    }

    #[test]
    fn oracles_agree_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p: Vec<Point> = (0..256).map(|_| Point::new(rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0))).collect();
        let (k, q) = (kruskal(&p), prim(&p));
        assert!((k.cost - q.cost).abs() <= MST_AGREEMENT_TOL);
        assert!(tree_problems(256, &q.edges).is_empty());
    }

    #[test]
    fn ratio_examples() {
        let path = pts(&[(0., 0.), (1., 0.), (2., 0.), (3., 0.)]);
        assert!((approximation_ratio(&[(0, 1), (1, 2), (2, 3)], &path).unwrap() - 1.0).abs() < 1e-12);
        // Replace the last unit edge with a length-2 detour.
        let r = approximation_ratio(&[(0, 1), (1, 2), (1, 3)], &path).unwrap();
        assert!((r - 4.0 / 3.0).abs() < 1e-12);
        assert!(matches!(approximation_ratio(&[(0, 1), (1, 2)], &path), Err(Error::NotSpanning(_))));
    }

    #[test]
    fn tree_problems_detects_cycle() {
        let probs = tree_problems(4, &[(0, 1), (1, 2), (2, 0)]);
        assert!(probs.iter().any(|(k, _)| k == "acyclicity"));
        assert!(probs.iter().any(|(k, _)| k == "connectivity"));
    }

    fn inst3() -> Instance {
        Instance::new(&pts(&[(-1., 0.), (0., 0.), (1., 0.)]), SinrParams { p_max: 100.0, ..SinrParams::default() }, 0)
            .unwrap()
    }

    #[test]
    fn clean_trace_passes() {
        let inst = inst3();
        let mut e = Engine::new(&inst, 0, "");
        use crate::sim::Action;
        let b = Action::Transmit { power: 16.0, payload: Payload::Beacon { tag: 0 } };
        e.run_slot(&[b, Action::Listen, Action::Listen]).unwrap();
        e.run_slot(&[b, Action::Listen, b]).unwrap();
        let rep = audit_trace(e.trace(), &inst);
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn planted_infeasible_delivery_is_caught() {
        let inst = inst3();
        let tx = |s| Transmission { sender: s, power: 16.0, payload: Payload::Beacon { tag: 0 } };
        let mut e = Engine::new(&inst, 0, "");
        use crate::sim::Action;
        let b = Action::Transmit { power: 16.0, payload: Payload::Beacon { tag: 0 } };
        e.run_slot(&[b, Action::Listen, b]).unwrap();
        let mut trace = e.into_trace();
        let s: &mut SlotRecord = &mut trace.slots[0];
        assert!(s.deliveries.is_empty());
        s.deliveries.push(Delivery {
            sender: 0,
            receiver: 1,
            payload: tx(0).payload,
            signal: 16.0,
            sinr: 16.0 / 17.0,
            accepted: false,
        });
        let rep = audit_trace(&trace, &inst);
        assert_eq!(rep.sinr_violations, 1);
    }
}
