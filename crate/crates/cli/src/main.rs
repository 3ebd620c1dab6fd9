//! `sinr-mst`: generate instances, run the pipeline, audit traces and
//! schedule trees.
//!
//! Exit status is 0 when everything ran and every audit passed, 1 when an
//! audit or a high-probability stage failed, and 2 on usage or I/O errors.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sinr_mst::experiment::{
    generate, orientation_rng, rows_to_csv, run_experiment, run_instance, schedule_budget, write_atomic, ExperimentSpec,
};
use sinr_mst::schedule::{random_orientation, schedule_tree};
use sinr_mst::verify::{audit_schedule, audit_tree};
use sinr_mst::{audit_trace, derive_metrics, InstanceFile, RunConfig, Trace, TreeResult};

#[derive(Parser)]
#[command(name = "sinr-mst", version, about = "Distributed MST construction under the SINR model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment spec or instance file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Restrict to one seed, or reseed a single instance.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Safety factor on slot budgets and dominating-set rounds.
    #[arg(long)]
    budget_factor: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write one instance file per seed of an experiment spec.
    Gen(Common),
    /// Run the pipeline on an experiment spec or on a single instance.
    Run(Common),
    /// Replay a trace through the interference law.
    Audit {
        #[command(flatten)]
        common: Common,
        /// NDJSON trace to replay.
        #[arg(long)]
        trace: PathBuf,
        /// Tree to check as well.
        #[arg(long)]
        tree: Option<PathBuf>,
    },
    /// Schedule a tree's links under a random orientation.
    Sched {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tree: PathBuf,
    },
}

type CliResult = Result<bool, String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(c) => gen(&c),
        Command::Run(c) => run(&c),
        Command::Audit { common, trace, tree } => audit(&common, &trace, tree.as_deref()),
        Command::Sched { common, tree } => sched(&common, &tree),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_spec(c: &Common) -> Result<ExperimentSpec, String> {
    let mut spec = ExperimentSpec::from_json(&read(&c.config)?).map_err(|e| format!("{}: {e}", c.config.display()))?;
    if let Some(seed) = c.seed {
        spec.seeds = vec![seed];
    }
    if let Some(f) = c.budget_factor {
        spec.run.budget_factor = f;
    }
    if let Some(out) = &c.out {
        spec.outputs = Some(out.clone());
    }
    Ok(spec)
}

fn load_instance(path: &Path) -> Result<InstanceFile, String> {
    InstanceFile::from_json(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

/// Run settings for a single instance: defaults, the file's broadcast
/// section, then flags.
fn instance_config(file: &InstanceFile, c: &Common) -> Result<RunConfig, String> {
    let mut cfg = RunConfig { broadcast: file.broadcast_config(), ..RunConfig::default() };
    if let Some(f) = c.budget_factor {
        cfg.budget_factor = f;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn is_instance(text: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(text).is_ok_and(|v| v.get("nodes").is_some())
}

fn out_dir(c: &Common) -> Result<Option<&Path>, String> {
    if let Some(dir) = &c.out {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    Ok(c.out.as_deref())
}

fn write(path: &Path, contents: &[u8]) -> Result<(), String> {
    write_atomic(path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn gen(c: &Common) -> CliResult {
    let spec = load_spec(c)?;
    spec.validate().map_err(|e| e.to_string())?;
    let dir = out_dir(c)?.ok_or("gen needs --out")?;
    let mut ok = true;
    for &seed in &spec.seeds {
        match generate(&spec, seed) {
            Ok(f) => {
                let path = dir.join(format!("instance-{seed}.json"));
                write(&path, f.to_json().as_bytes())?;
                println!("{}", path.display());
            }
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn run(c: &Common) -> CliResult {
    let text = read(&c.config)?;
    if !is_instance(&text) {
        let spec = load_spec(c)?;
        let report = run_experiment(&spec).map_err(|e| e.to_string())?;
        print!("{}", rows_to_csv(&report.rows).map_err(|e| e.to_string())?);
        for f in &report.failures {
            eprintln!("seed {}: {}", f.seed, f.reason);
        }
        for s in &report.audit_failures {
            eprintln!("seed {s}: audit failed");
        }
        return Ok(report.success());
    }
    let mut file = InstanceFile::from_json(&text).map_err(|e| format!("{}: {e}", c.config.display()))?;
    if let Some(seed) = c.seed {
        file.seed = seed;
    }
    let cfg = instance_config(&file, c)?;
    let out = match run_instance(&file, &cfg) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("seed {}: {e}", file.seed);
            return Ok(false);
        }
    };
    if let Some(dir) = out_dir(c)? {
        write(&dir.join("tree.json"), out.run.tree.to_json().as_bytes())?;
        write(&dir.join("audit.json"), out.audit.to_json().as_bytes())?;
        write(&dir.join("schedule.json"), out.schedule.to_json().as_bytes())?;
        let mut buf = Vec::new();
        out.run.trace.write_ndjson(&mut buf).map_err(|e| e.to_string())?;
        write(&dir.join("trace.ndjson"), &buf)?;
    }
    print!("{}", rows_to_csv(std::slice::from_ref(&out.row)).map_err(|e| e.to_string())?);
    if !out.passed() {
        eprint!("{}", out.audit.to_json());
        eprint!("{}", out.schedule_audit.to_json());
    }
    Ok(out.passed())
}

fn audit(c: &Common, trace_path: &Path, tree_path: Option<&Path>) -> CliResult {
    let file = load_instance(&c.config)?;
    let inst = file.to_instance().map_err(|e| e.to_string())?;
    let reader = BufReader::new(fs::File::open(trace_path).map_err(|e| format!("{}: {e}", trace_path.display()))?);
    let trace = Trace::read_ndjson(reader).map_err(|e| format!("{}: {e}", trace_path.display()))?;
    let mut rep = audit_trace(&trace, &inst);
    if let Some(p) = tree_path {
        let tree = TreeResult::from_json(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?;
        rep.absorb(audit_tree(&inst, &tree));
    }
    let json = rep.to_json();
    print!("{json}");
    if let Some(dir) = out_dir(c)? {
        write(&dir.join("audit.json"), json.as_bytes())?;
    }
    Ok(rep.passed())
}

fn sched(c: &Common, tree_path: &Path) -> CliResult {
    let mut file = load_instance(&c.config)?;
    if let Some(seed) = c.seed {
        file.seed = seed;
    }
    let inst = file.to_instance().map_err(|e| e.to_string())?;
    let cfg = instance_config(&file, c)?;
    let tree = TreeResult::from_json(&read(tree_path)?).map_err(|e| format!("{}: {e}", tree_path.display()))?;
    let links = random_orientation(&tree.pairs(), &mut orientation_rng(file.seed, 0));
    let (res, trace) = schedule_tree(&inst, file.seed, &links, &cfg).map_err(|e| e.to_string())?;
    let mu = derive_metrics(&inst).map_err(|e| e.to_string())?.mu;
    let rep = audit_schedule(&inst, &res, &trace, schedule_budget(&cfg, mu, inst.log2_n()));
    if let Some(dir) = out_dir(c)? {
        write(&dir.join("schedule.json"), res.to_json().as_bytes())?;
        write(&dir.join("schedule-audit.json"), rep.to_json().as_bytes())?;
    }
    println!("links {} completion {} allocated {}", res.links.len(), res.completion, res.allocated);
    if !rep.passed() {
        eprint!("{}", rep.to_json());
    }
    Ok(rep.passed())
}
