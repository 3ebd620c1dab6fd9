//! Node placements, physical-model parameters, disk graphs and the derived
//! quantities (distance diversity, maximum range, hop diameter) that every
//! protocol stage consumes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Absolute tolerance for every geometric comparison.
pub const GEOM_TOL: f64 = 1e-9;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Physical interference model parameters.
///
/// `p_max` is expressed in normalized distance units, i.e. it is applied after
/// the placement has been scaled so that the closest pair sits at distance 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinrParams {
    /// Path-loss exponent.
    pub alpha: f64,
    /// SINR decoding threshold.
    pub beta: f64,
    /// Background noise.
    pub noise: f64,
    /// Maximum transmission power.
    pub p_max: f64,
    /// Connectivity constant: the disk graph at `r_max / conn_c` must be connected.
    pub conn_c: f64,
}

impl Default for SinrParams {
    fn default() -> Self {
        Self { alpha: 3.0, beta: 2.0, noise: 1.0, p_max: 54.0, conn_c: 2.0 }
    }
}

impl SinrParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.beta, self.noise, self.p_max, self.conn_c].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        if self.alpha <= 2.0 {
            return Err(Error::InvalidParams(format!("alpha must exceed 2, got {}", self.alpha)));
        }
        if self.beta <= 1.0 {
            return Err(Error::InvalidParams(format!("beta must exceed 1, got {}", self.beta)));
        }
        if self.noise <= 0.0 {
            return Err(Error::InvalidParams(format!("noise must be positive, got {}", self.noise)));
        }
        if self.p_max <= 0.0 {
            return Err(Error::InvalidParams(format!("p_max must be positive, got {}", self.p_max)));
        }
        if self.conn_c < 1.0 {
            return Err(Error::InvalidParams(format!("conn_c must be at least 1, got {}", self.conn_c)));
        }
        Ok(())
    }

    /// Range reached at full power.
    pub fn r_max(&self) -> f64 {
        crate::sinr::range_of_power(self.p_max, self)
    }
}

/// Scales a placement so that its closest pair is exactly one unit apart.
pub fn normalize(raw: &[Point]) -> Result<Vec<Point>> {
    if raw.len() < 2 {
        return Err(Error::DegeneratePoints("need at least two points".into()));
    }
    if raw.iter().any(|p| !p.is_finite()) {
        return Err(Error::DegeneratePoints("non-finite coordinate".into()));
    }
    let d_min = min_pairwise_distance(raw);
    if d_min <= 0.0 {
        return Err(Error::DegeneratePoints("duplicate points".into()));
    }
    if d_min == 1.0 {
        return Ok(raw.to_vec());
    }
    let scale = 1.0 / d_min;
    Ok(raw.iter().map(|p| Point::new(p.x * scale, p.y * scale)).collect())
}

pub(crate) fn min_pairwise_distance(points: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.min(p.dist(q));
        }
    }
    best
}

/// A normalized placement together with its physical parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    points: Vec<Point>,
    params: SinrParams,
    seed: u64,
}

impl Instance {
    /// Normalizes `raw` and validates `params`.
    pub fn new(raw: &[Point], params: SinrParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let points = normalize(raw)?;
        Ok(Self { points, params, seed })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, v: NodeId) -> Point {
        self.points[v]
    }

    pub fn params(&self) -> &SinrParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn dist(&self, u: NodeId, v: NodeId) -> f64 {
        self.points[u].dist(&self.points[v])
    }

    pub fn node_ids(&self) -> std::ops::Range<NodeId> {
        0..self.points.len()
    }

    /// `log2 n`, floored at 1 so that two-node instances still get slots.
    pub fn log2_n(&self) -> f64 {
        (self.n() as f64).log2().max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedMetrics {
    pub d_min: f64,
    pub d_max: f64,
    /// Distance diversity, `log2(d_max / d_min)`.
    pub mu: f64,
    pub r_max: f64,
    /// Hop diameter of the disk graph at range `r_max`.
    pub diameter_d: usize,
}

/// Computes the derived metrics and checks the model assumptions
/// (`r_max <= d_max`, connectivity at `r_max / conn_c`).
pub fn derive_metrics(inst: &Instance) -> Result<DerivedMetrics> {
    let pts = inst.points();
    let d_min = min_pairwise_distance(pts);
    let d_max = max_pairwise_distance(pts);
    let r_max = inst.params().r_max();
    if r_max > d_max + GEOM_TOL {
        return Err(Error::RangeExceedsDiameter { r_max, d_max });
    }
    let conn_range = r_max / inst.params().conn_c;
    if graph_diameter(&disk_graph(pts, conn_range)).is_infinite() {
        return Err(Error::Disconnected { range: conn_range });
    }
    let diameter_d = match graph_diameter(&disk_graph(pts, r_max)) {
        Diameter::Finite(d) => d,
        // Connected at a smaller range implies connected at r_max.
        Diameter::Infinite => unreachable!("disk graph lost connectivity at a larger range"),
    };
    Ok(DerivedMetrics { d_min, d_max, mu: (d_max / d_min).log2(), r_max, diameter_d })
}

pub(crate) fn max_pairwise_distance(points: &[Point]) -> f64 {
    let mut best = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.max(p.dist(q));
        }
    }
    best
}

/// Undirected adjacency lists, neighbours sorted by id.
pub type Adjacency = Vec<Vec<NodeId>>;

/// Disk graph `G_r`: an edge joins every pair at distance at most `r`.
pub fn disk_graph(points: &[Point], r: f64) -> Adjacency {
    let mut adj = vec![Vec::new(); points.len()];
    for u in 0..points.len() {
        for v in u + 1..points.len() {
            if points[u].dist(&points[v]) <= r + GEOM_TOL {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

/// Disk graph over a subset; vertex `k` of the result is `subset[k]`.
pub fn disk_graph_on(inst: &Instance, subset: &[NodeId], r: f64) -> Adjacency {
    let pts: Vec<Point> = subset.iter().map(|&v| inst.point(v)).collect();
    disk_graph(&pts, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Diameter {
    Finite(usize),
    Infinite,
}

impl Diameter {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Diameter::Infinite)
    }

    pub fn finite(&self) -> Option<usize> {
        match self {
            Diameter::Finite(d) => Some(*d),
            Diameter::Infinite => None,
        }
    }
}

/// Unweighted hop diameter via breadth-first search from every vertex.
/// Graphs with fewer than two vertices have diameter 0.
pub fn graph_diameter(adj: &Adjacency) -> Diameter {
    let n = adj.len();
    let mut best = 0;
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for src in 0..n {
        dist.iter_mut().for_each(|d| *d = usize::MAX);
        dist[src] = 0;
        queue.clear();
        queue.push_back(src);
        let mut seen = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    best = best.max(dist[v]);
                    seen += 1;
                    queue.push_back(v);
                }
            }
        }
        if seen < n {
            return Diameter::Infinite;
        }
    }
    Diameter::Finite(best)
}

/// Instance file layout. Coordinates are stored before normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub nodes: Vec<[f64; 2]>,
    pub alpha: f64,
    pub beta: f64,
    pub noise: f64,
    pub p_max: f64,
    #[serde(default = "default_conn_c")]
    pub conn_c: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds_factor: Option<f64>,
}

fn default_conn_c() -> f64 {
    2.0
}

impl InstanceFile {
    pub fn from_raw(raw: &[Point], params: &SinrParams, seed: u64) -> Self {
        Self {
            nodes: raw.iter().map(|p| [p.x, p.y]).collect(),
            alpha: params.alpha,
            beta: params.beta,
            noise: params.noise,
            p_max: params.p_max,
            conn_c: params.conn_c,
            seed,
            gamma: None,
            gamma_prime: None,
            rounds_factor: None,
        }
    }

    pub fn params(&self) -> SinrParams {
        SinrParams { alpha: self.alpha, beta: self.beta, noise: self.noise, p_max: self.p_max, conn_c: self.conn_c }
    }

    pub fn raw_points(&self) -> Vec<Point> {
        self.nodes.iter().map(|&[x, y]| Point::new(x, y)).collect()
    }

    pub fn to_instance(&self) -> Result<Instance> {
        Instance::new(&self.raw_points(), self.params(), self.seed)
    }

    /// Broadcast settings merged from the optional config section.
    pub fn broadcast_config(&self) -> crate::primitives::BroadcastConfig {
        let mut cfg = crate::primitives::BroadcastConfig::default();
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(g) = self.gamma_prime {
            cfg.gamma_prime = g;
        }
        if let Some(r) = self.rounds_factor {
            cfg.rounds_factor = r;
        }
        cfg
    }

    /// SHA-256 over the canonical JSON encoding, hex encoded.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("instance file serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("instance file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
