//! Brute-force reference computations shared by the integration tests.
//! Deliberately naive and independent of the library's own checkers.

#![allow(dead_code)]

use std::collections::VecDeque;

use sinr_mst::{Instance, Point, Trace};

pub fn dist(a: Point, b: Point) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// MST cost by O(n^2) Prim over the complete graph.
pub fn mst_cost(points: &[Point]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let mut best = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    best[0] = 0.0;
    let mut total = 0.0;
    for _ in 0..n {
        let u = (0..n).filter(|&v| !done[v]).min_by(|&a, &b| best[a].total_cmp(&best[b])).unwrap();
        done[u] = true;
        total += best[u];
        for v in 0..n {
            if !done[v] {
                best[v] = best[v].min(dist(points[u], points[v]));
            }
        }
    }
    total
}

/// `Ok` iff `edges` form a spanning tree on `0..n`.
pub fn spanning_tree(n: usize, edges: &[(usize, usize)]) -> Result<(), String> {
    if edges.len() + 1 != n {
        return Err(format!("{} edges for {n} nodes", edges.len()));
    }
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u >= n || v >= n || u == v {
            return Err(format!("bad edge ({u}, {v})"));
        }
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    // n - 1 edges and connected means acyclic.
    match seen.iter().position(|s| !s) {
        Some(v) => Err(format!("node {v} unreachable")),
        None => Ok(()),
    }
}

/// Hop diameter of the disk graph at `r` over `points`; `None` when
/// disconnected.
pub fn hop_diameter(points: &[Point], r: f64) -> Option<usize> {
    let n = points.len();
    let mut worst = 0;
    for s in 0..n {
        let mut hops = vec![usize::MAX; n];
        hops[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for v in 0..n {
                if hops[v] == usize::MAX && dist(points[u], points[v]) <= r + 1e-9 {
                    hops[v] = hops[u] + 1;
                    q.push_back(v);
                }
            }
        }
        worst = worst.max(*hops.iter().max()?);
        if worst == usize::MAX {
            return None;
        }
    }
    Some(worst)
}

pub fn mu(points: &[Point]) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, 0f64);
    for (i, &p) in points.iter().enumerate() {
        for &q in &points[i + 1..] {
            let d = dist(p, q);
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    (hi / lo).log2()
}

pub fn subset(inst: &Instance, ids: &[usize]) -> Vec<Point> {
    ids.iter().map(|&v| inst.points()[v]).collect()
}

/// Replays a trace with plain summation and a loose tolerance. Counts
/// recorded deliveries that do not clear the threshold and silent
/// listeners that clearly should have decoded someone.
pub fn replay_violations(trace: &Trace, inst: &Instance) -> usize {
    let p = inst.params();
    let pts = inst.points();
    let mut bad = 0;
    for s in &trace.slots {
        let mut sending = vec![false; inst.n()];
        for t in &s.transmissions {
            sending[t.sender] = true;
        }
        for v in 0..inst.n() {
            if sending[v] {
                continue;
            }
            let heard: Vec<f64> =
                s.transmissions.iter().map(|t| t.power / dist(pts[t.sender], pts[v]).powf(p.alpha)).collect();
            let total: f64 = heard.iter().sum();
            let sinr = |k: usize| heard[k] / (total - heard[k] + p.noise);
            match s.deliveries.iter().find(|d| d.receiver == v) {
                Some(d) => {
                    let k = s.transmissions.iter().position(|t| t.sender == d.sender);
                    if k.is_none_or(|k| sinr(k) < p.beta * (1.0 - 1e-6)) {
                        bad += 1;
                    }
                }
                None => {
                    if (0..heard.len()).any(|k| sinr(k) > p.beta * (1.0 + 1e-6)) {
                        bad += 1;
                    }
                }
            }
        }
    }
    bad
}

/// Every link of `links` clears the threshold with all of them active.
pub fn links_feasible(inst: &Instance, links: &[(usize, usize, f64)]) -> bool {
    let p = inst.params();
    let pts = inst.points();
    links.iter().all(|&(s, r, _)| {
        if links.iter().any(|l| l.0 == r) {
            return false;
        }
        let signal = links.iter().find(|l| l.0 == s).unwrap().2 / dist(pts[s], pts[r]).powf(p.alpha);
        let noise: f64 = links.iter().filter(|l| l.0 != s).map(|l| l.2 / dist(pts[l.0], pts[r]).powf(p.alpha)).sum();
        signal / (noise + p.noise) >= p.beta * (1.0 - 1e-6)
    })
}
