//! Distributed minimum-spanning-tree construction under the SINR
//! (physical interference) model, simulated slot by slot and audited.
//!
//! The crate is layered bottom-up:
//!
//! * [`geometry`]: instances, normalization, disk graphs, derived metrics.
//! * [`sinr`]: the interference law and power/range conversion.
//! * [`sim`]: the slot-synchronous engine and its replayable trace.
//! * [`primitives`]: randomized local broadcast and a dominating-set builder.
//! * [`nnt`]: rank-based forest and tree construction and the full pipeline.
//! * [`schedule`]: length-class scheduling of the final tree's links.
//! * [`verify`]: exact MST oracles and the trace/invariant auditor.
//! * [`experiment`]: instance generators and batch runs.

pub mod experiment;
pub mod geometry;
pub mod nnt;
pub mod primitives;
pub mod schedule;
pub mod sim;
pub mod sinr;
pub mod verify;

pub use geometry::{derive_metrics, normalize, DerivedMetrics, Instance, InstanceFile, NodeId, Point, SinrParams};
pub use nnt::{mst_sinr, MstRun, RunConfig, TreeResult};
pub use sim::{Engine, SimError, Trace};
pub use verify::{audit_run, audit_trace, exact_mst, AuditReport};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate point set: {0}")]
    DegeneratePoints(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("r_max {r_max} exceeds d_max {d_max}")]
    RangeExceedsDiameter { r_max: f64, d_max: f64 },
    #[error("disk graph at range {range} is disconnected")]
    Disconnected { range: f64 },
    #[error("range {range} needs power {power}, above p_max {p_max}")]
    RangeUnreachable { range: f64, power: f64, p_max: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("not a spanning tree: {0}")]
    NotSpanning(String),
    #[error("MST oracles disagree: kruskal {kruskal}, prim {prim}")]
    OracleDisagreement { kruskal: f64, prim: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
