//! Instance generators and batch experiments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{derive_metrics, normalize, InstanceFile, Point, SinrParams};
use crate::nnt::{mst_sinr, MstRun, RunConfig};
use crate::schedule::{random_orientation, schedule_tree, ScheduleResult};
use crate::verify::{audit_run, audit_schedule, exact_mst, AuditReport};
use crate::{Error, Result};

/// Stream of each seed's generator RNG, kept clear of the per-node streams.
const GENERATOR_STREAM: u64 = u64::MAX;
const ORIENTATION_STREAM: u64 = u64::MAX - 1;
const MAX_REDRAWS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    UniformSquare,
    Grid,
    Clusters,
}

fn default_true() -> bool {
    true
}

/// Headroom over the connectivity threshold. Below about 1.5 the
/// dominators' graph at twice their range is occasionally disconnected.
fn default_slack() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub generator: Generator,
    pub n: usize,
    /// Side of the placement square; `2 * sqrt(n)` when absent.
    #[serde(default)]
    pub side: Option<f64>,
    /// Blob count for the cluster generator; 4 when absent.
    #[serde(default)]
    pub clusters: Option<usize>,
    #[serde(default)]
    pub params: SinrParams,
    /// Pick `p_max` per instance from its geometry instead of `params.p_max`.
    #[serde(default = "default_true")]
    pub auto_power: bool,
    /// With auto power, `r_max = conn_c * slack * longest MST edge`,
    /// capped at `d_max`.
    #[serde(default = "default_slack")]
    pub power_slack: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub outputs: Option<PathBuf>,
    #[serde(default)]
    pub run: RunConfig,
    /// Also write per-seed NDJSON traces (they can be large).
    #[serde(default = "default_true")]
    pub write_traces: bool,
}

impl ExperimentSpec {
    pub fn uniform(n: usize, seeds: Vec<u64>) -> Self {
        Self {
            generator: Generator::UniformSquare,
            n,
            side: None,
            clusters: None,
            params: SinrParams::default(),
            auto_power: true,
            power_slack: default_slack(),
            seeds,
            outputs: None,
            run: RunConfig::default(),
            write_traces: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParams(format!("n must be at least 2, got {}", self.n)));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParams("seed list is empty".into()));
        }
        if self.power_slack.is_nan() || self.power_slack < 1.0 {
            return Err(Error::InvalidParams(format!("power_slack must be >= 1, got {}", self.power_slack)));
        }
        self.params.validate()?;
        self.run.validate()
    }

    fn side(&self) -> f64 {
        self.side.unwrap_or(2.0 * (self.n as f64).sqrt())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn has_duplicates(points: &[Point]) -> bool {
    points.iter().enumerate().any(|(i, p)| points[i + 1..].iter().any(|q| p.dist(q) == 0.0))
}

fn draw(spec: &ExperimentSpec, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let side = spec.side();
    match spec.generator {
        Generator::UniformSquare => {
            (0..spec.n).map(|_| Point::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side))).collect()
        }
        Generator::Grid => {
            let k = (spec.n as f64).sqrt().ceil() as usize;
            (0..k * k).map(|i| Point::new((i % k) as f64, (i / k) as f64)).collect()
        }
        Generator::Clusters => {
            let k = spec.clusters.unwrap_or(4).max(1);
            let centers: Vec<Point> =
                (0..k).map(|_| Point::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side))).collect();
            let spread = Normal::new(0.0, side / 8.0).expect("positive spread");
            (0..spec.n)
                .map(|i| {
                    let c = centers[i % k];
                    Point::new(c.x + spread.sample(rng), c.y + spread.sample(rng))
                })
                .collect()
        }
    }
}

/// Longest edge of the Euclidean MST: the smallest range keeping the
/// disk graph connected.
pub fn bottleneck(points: &[Point]) -> f64 {
    exact_mst(points)
        .map(|m| m.edges.iter().map(|&(u, v)| points[u].dist(&points[v])).fold(0.0, f64::max))
        .unwrap_or(0.0)
}

/// Maximum power for a normalized placement: just enough that the disk
/// graph at `r_max / conn_c` is connected, with some slack.
pub fn auto_p_max(normalized: &[Point], params: &SinrParams, slack: f64) -> Result<f64> {
    let b = bottleneck(normalized);
    let d_max = crate::geometry::max_pairwise_distance(normalized);
    if params.conn_c * b > d_max {
        return Err(Error::Precondition(format!(
            "no r_max <= d_max {d_max} connects the disk graph at r_max/{} (longest MST edge {b})",
            params.conn_c
        )));
    }
    let r_max = (params.conn_c * b * slack).min(d_max);
    Ok(params.noise * params.beta * r_max.powf(params.alpha))
}

/// One instance for `seed`. Degenerate or disconnected draws are redrawn a
/// bounded number of times.
pub fn generate(spec: &ExperimentSpec, seed: u64) -> Result<InstanceFile> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(GENERATOR_STREAM);
    let mut last = None;
    for _ in 0..MAX_REDRAWS {
        let raw = draw(spec, &mut rng);
        if has_duplicates(&raw) {
            last = Some(Error::DegeneratePoints("duplicate draw".into()));
            continue;
        }
        let mut params = spec.params;
        if spec.auto_power {
            match auto_p_max(&normalize(&raw)?, &params, spec.power_slack) {
                Ok(p) => params.p_max = p,
                Err(e) => {
                    last = Some(e);
                    if spec.generator == Generator::Grid {
                        break;
                    }
                    continue;
                }
            }
        }
        let file = InstanceFile::from_raw(&raw, &params, seed);
        match derive_metrics(&file.to_instance()?) {
            Ok(_) => return Ok(file),
            Err(e) => last = Some(e),
        }
        if spec.generator == Generator::Grid {
            break;
        }
    }
    Err(last.unwrap_or_else(|| Error::Precondition("generator produced nothing".into())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub mu: f64,
    pub cost: f64,
    pub mst_cost: f64,
    pub ratio: f64,
    pub slots_total: usize,
    pub slots_domset: usize,
    pub slots_cd: usize,
    pub slots_bcast: usize,
    pub slots_bp: usize,
    pub sched_slots: usize,
}

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub instance: InstanceFile,
    pub run: MstRun,
    pub audit: AuditReport,
    pub schedule: ScheduleResult,
    pub schedule_audit: AuditReport,
    pub row: MetricsRow,
}

impl SeedOutcome {
    pub fn passed(&self) -> bool {
        self.audit.passed() && self.schedule_audit.passed()
    }
}

/// Random source for the `draw`-th link orientation of `seed`'s tree, kept
/// apart from every node's stream.
pub fn orientation_rng(seed: u64, draw: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ORIENTATION_STREAM - draw);
    rng
}

/// Schedule length budget: `budget_factor * rounds_factor * mu * log2 n`.
pub fn schedule_budget(cfg: &RunConfig, mu: f64, log2_n: f64) -> f64 {
    cfg.budget_factor * cfg.broadcast.rounds_factor * mu * log2_n
}

/// Runs the pipeline on one instance, audits it, and schedules the tree
/// under a random orientation.
pub fn run_instance(file: &InstanceFile, cfg: &RunConfig) -> Result<SeedOutcome> {
    let inst = file.to_instance()?;
    let seed = file.seed;
    let run = mst_sinr(&inst, seed, &file.content_hash(), cfg).map_err(|e| Error::Precondition(e.to_string()))?;
    let audit = audit_run(&inst, &run);
    let mut rng = orientation_rng(seed, 0);
    let links = random_orientation(&run.tree.pairs(), &mut rng);
    let (schedule, strace) = schedule_tree(&inst, seed, &links, cfg)?;
    let budget = schedule_budget(cfg, run.metrics.mu, inst.log2_n());
    let schedule_audit = audit_schedule(&inst, &schedule, &strace, budget);
    let mst_cost = exact_mst(inst.points())?.cost;
    let row = MetricsRow {
        seed,
        n: inst.n(),
        d: run.metrics.diameter_d,
        mu: run.metrics.mu,
        cost: run.tree.cost,
        mst_cost,
        ratio: run.tree.cost / mst_cost,
        slots_total: run.slots.charged(),
        slots_domset: run.slots.domset_charged,
        slots_cd: run.slots.cd,
        slots_bcast: run.slots.bcast,
        slots_bp: run.slots.bp,
        sched_slots: schedule.completion,
    };
    Ok(SeedOutcome { instance: file.clone(), run, audit, schedule, schedule_audit, row })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub runs: usize,
    pub mean: f64,
    pub max: f64,
}

impl Fit {
    fn from(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        Self {
            runs: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub ratio: Fit,
    /// `slots_total / ((D + mu) * log2 n)` per `n`.
    pub slots_constant: BTreeMap<usize, Fit>,
    /// `sched_slots / (mu * log2 n)` per `n`.
    pub schedule_constant: BTreeMap<usize, Fit>,
}

pub fn summarize(rows: &[MetricsRow]) -> Summary {
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let mut slots: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut sched: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        let log_n = (r.n as f64).log2().max(1.0);
        slots.entry(r.n).or_default().push(r.slots_total as f64 / ((r.d as f64 + r.mu) * log_n));
        sched.entry(r.n).or_default().push(r.sched_slots as f64 / (r.mu * log_n));
    }
    Summary {
        ratio: Fit::from(&ratios),
        slots_constant: slots.into_iter().map(|(n, v)| (n, Fit::from(&v))).collect(),
        schedule_constant: sched.into_iter().map(|(n, v)| (n, Fit::from(&v))).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<SeedFailure>,
    /// Seeds whose audit found problems.
    pub audit_failures: Vec<u64>,
    pub summary: Summary,
}

impl ExperimentReport {
    pub fn success(&self) -> bool {
        self.failures.is_empty() && self.audit_failures.is_empty()
    }
}

pub fn rows_to_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Writes via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_seed(dir: &Path, out: &SeedOutcome, traces: bool) -> Result<()> {
    let seed = out.row.seed;
    write_atomic(&dir.join(format!("instance-{seed}.json")), out.instance.to_json().as_bytes())?;
    write_atomic(&dir.join(format!("tree-{seed}.json")), out.run.tree.to_json().as_bytes())?;
    write_atomic(&dir.join(format!("audit-{seed}.json")), out.audit.to_json().as_bytes())?;
    write_atomic(&dir.join(format!("schedule-{seed}.json")), out.schedule.to_json().as_bytes())?;
    if traces {
        let mut buf = Vec::new();
        out.run.trace.write_ndjson(&mut buf)?;
        write_atomic(&dir.join(format!("trace-{seed}.ndjson")), &buf)?;
    }
    Ok(())
}

/// Generates, runs and audits every seed; failures stay per seed.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    if let Some(dir) = &spec.outputs {
        fs::create_dir_all(dir)?;
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut audit_failures = Vec::new();
    for &seed in &spec.seeds {
        let outcome = generate(spec, seed).and_then(|f| run_instance(&f, &spec.run));
        match outcome {
            Ok(out) => {
                if !out.passed() {
                    audit_failures.push(seed);
                }
                if let Some(dir) = &spec.outputs {
                    write_seed(dir, &out, spec.write_traces)?;
                }
                rows.push(out.row);
            }
            Err(e) => failures.push(SeedFailure { seed, reason: e.to_string() }),
        }
    }
    let summary = summarize(&rows);
    let report = ExperimentReport { rows, failures, audit_failures, summary };
    if let Some(dir) = &spec.outputs {
        write_atomic(&dir.join("metrics.csv"), rows_to_csv(&report.rows)?.as_bytes())?;
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        write_atomic(&dir.join("metrics.json"), json.as_bytes())?;
        let plot = serde_json::json!({
            "ratio_vs_n": report.rows.iter().map(|r| (r.n, r.ratio)).collect::<Vec<_>>(),
            "slots_vs_n": report.rows.iter().map(|r| (r.n, r.slots_total)).collect::<Vec<_>>(),
            "sched_vs_n": report.rows.iter().map(|r| (r.n, r.sched_slots)).collect::<Vec<_>>(),
        });
        let mut s = serde_json::to_string(&plot)?;
        s.push('\n');
        write_atomic(&dir.join("plot.json"), s.as_bytes())?;
    }
    Ok(report)
}
