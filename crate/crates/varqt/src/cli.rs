//! Experiment runner: reads a JSON experiment spec, applies overrides,
//! dispatches to the library and writes `trace.csv` plus `summary.json`.
//!
//! Exit codes: 0 success, 1 I/O failure while writing results, 2 parse
//! error, 3 validation error, 4 numerical failure. Nothing is written unless
//! the run succeeds.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::apps::{
    gradient_benchmark, loglog_slope, run_gibbs_prep, run_maxcut, run_qmetts, trotter_benchmark, Basis, IteBackend, MaxcutConfig, MaxcutEngine,
    QmettsConfig, QmettsEstimate,
};
use crate::circuit::{initial_parameters, AnsatzSpec, InitialState};
use crate::deriv::EvolutionMode;
use crate::error::Error;
use crate::evolve::{bures_metrics, evolve, exact_reference, realtime_error_bound, EvolutionConfig};
use crate::optimize::{fmt17, run_gd, run_qng, run_qnspsa, run_spsa, Loss, Objective, OptimizerConfig, Target};
use crate::oracle::{gibbs_state, thermal_average, GibbsSpec, Propagator, GIBBS_LIMIT};
use crate::pauli::{build_model, split_diagonal, Graph, Model, PauliSum, Topology};
use crate::rng;
use crate::state::Statevector;

/// Largest register for which exact references are computed.
const REFERENCE_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Evolve,
    Optimize,
    Qmetts,
    Gibbs,
    TrotterBench,
    GradBench,
    Maxcut,
}

/// Hamiltonian description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Tfim {
        n: usize,
        j: f64,
        h: f64,
        #[serde(default)]
        topology: Option<Topology>,
    },
    TiltedIsing {
        n: usize,
        j: f64,
        hx: f64,
        hz: f64,
        #[serde(default)]
        topology: Option<Topology>,
    },
    Heisenberg {
        n: usize,
        j: f64,
        h: f64,
        #[serde(default)]
        topology: Option<Topology>,
    },
    /// Graph given inline or as an `i j w` edge-list file.
    Maxcut {
        #[serde(default)]
        edges: Option<Vec<(usize, usize, f64)>>,
        #[serde(default)]
        graph_file: Option<PathBuf>,
    },
    /// Explicit `(coefficient, label)` terms, labels highest qubit first.
    Pauli { terms: Vec<(f64, String)> },
}

impl ModelSpec {
    pub fn graph(&self) -> Result<Graph, Error> {
        match self {
            ModelSpec::Maxcut { edges: Some(e), graph_file: None } => {
                let n = e.iter().map(|&(a, b, _)| a.max(b) + 1).max().unwrap_or(0);
                Graph::new(n, e.clone())
            }
            ModelSpec::Maxcut { edges: None, graph_file: Some(p) } => Graph::parse_edge_list(&std::fs::read_to_string(p)?),
            ModelSpec::Maxcut { .. } => Err(Error::Invalid("maxcut model needs exactly one of edges and graph_file".into())),
            _ => Err(Error::Invalid("model is not a graph".into())),
        }
    }

    pub fn hamiltonian(&self) -> Result<PauliSum, Error> {
        let topo = |t: &Option<Topology>| t.clone().unwrap_or(Topology::Line);
        match self {
            ModelSpec::Tfim { n, j, h, topology } => build_model(&Model::Tfim { n: *n, j: *j, h: *h }, &topo(topology)),
            ModelSpec::TiltedIsing { n, j, hx, hz, topology } => {
                build_model(&Model::TiltedIsing { n: *n, j: *j, hx: *hx, hz: *hz }, &topo(topology))
            }
            ModelSpec::Heisenberg { n, j, h, topology } => build_model(&Model::Heisenberg { n: *n, j: *j, h: *h }, &topo(topology)),
            ModelSpec::Maxcut { .. } => build_model(&Model::MaxCut(self.graph()?), &Topology::Line),
            ModelSpec::Pauli { terms } => pauli_terms(terms),
        }
    }
}

fn pauli_terms(terms: &[(f64, String)]) -> Result<PauliSum, Error> {
    let refs: Vec<(f64, &str)> = terms.iter().map(|(c, l)| (*c, l.as_str())).collect();
    PauliSum::from_labels(&refs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gd,
    Spsa,
    Qng,
    Qnspsa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    pub method: Method,
    #[serde(default)]
    pub config: OptimizerConfig,
    /// Calibrate the SPSA learning rate from the initial gradient.
    #[serde(default)]
    pub calibrate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QmettsSection {
    pub betas: Vec<f64>,
    pub samples: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "default_bases")]
    pub bases: Vec<Basis>,
    #[serde(default = "exact_backend")]
    pub backend: IteBackend,
    #[serde(default = "one")]
    pub reps: usize,
    /// Defaults to the energy per site.
    #[serde(default)]
    pub observable: Option<Vec<(f64, String)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsSection {
    pub beta: f64,
    #[serde(default = "exact_backend")]
    pub backend: IteBackend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrotterSection {
    #[serde(default = "two")]
    pub order: u8,
    pub total_time: f64,
    pub dts: Vec<f64>,
    /// Defaults to `X` on qubit 0.
    #[serde(default)]
    pub observable: Option<Vec<(f64, String)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradBenchSection {
    pub n: usize,
    pub reps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxcutSection {
    #[serde(default = "one")]
    pub reps: usize,
    pub engine: MaxcutEngine,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
}

fn default_bases() -> Vec<Basis> {
    vec![Basis::X, Basis::Y]
}

fn exact_backend() -> IteBackend {
    IteBackend::Exact
}

fn one() -> usize {
    1
}

fn two() -> u8 {
    2
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub ansatz: Option<AnsatzSpec>,
    #[serde(default)]
    pub initial_state: Option<InitialState>,
    /// Shots per circuit where the command samples; absent means exact.
    #[serde(default)]
    pub shots: Option<u64>,
    #[serde(default)]
    pub evolution: Option<EvolutionConfig>,
    #[serde(default)]
    pub optimizer: Option<OptimizeSection>,
    #[serde(default)]
    pub qmetts: Option<QmettsSection>,
    #[serde(default)]
    pub gibbs: Option<GibbsSection>,
    #[serde(default)]
    pub trotter: Option<TrotterSection>,
    #[serde(default)]
    pub grad_bench: Option<GradBenchSection>,
    #[serde(default)]
    pub maxcut: Option<MaxcutSection>,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// Failure of a run, mapped onto the exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Parse(String),
    Validation(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Validation(m) => write!(f, "invalid experiment: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_) => CliError::Parse(e.to_string()),
            Error::Numerical(_) | Error::NormDrift(_) => CliError::Numerical(e.to_string()),
            Error::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

/// Sets `path` (dot separated, numeric segments index arrays) to `raw`,
/// read as JSON when possible and as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| CliError::Parse(format!("override '{assignment}' is not K=V")))?;
    if path.is_empty() {
        return Err(CliError::Parse(format!("override '{assignment}' has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    for seg in path.split('.') {
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
        cur = match cur {
            Value::Object(m) => m.entry(seg.to_string()).or_insert(Value::Null),
            Value::Array(a) => {
                let i: usize = seg.parse().map_err(|_| CliError::Parse(format!("'{seg}' does not index an array in '{path}'")))?;
                let len = a.len();
                a.get_mut(i).ok_or_else(|| CliError::Parse(format!("index {i} out of range ({len}) in '{path}'")))?
            }
            _ => return Err(CliError::Parse(format!("'{path}' descends into a scalar"))),
        };
    }
    *cur = value;
    Ok(())
}

/// Parses spec text and applies overrides and an optional seed.
pub fn load_spec(text: &str, overrides: &[String], seed: Option<u64>) -> Result<(ExperimentSpec, Value), CliError> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    if !doc.is_object() {
        return Err(CliError::Parse("spec must be a JSON object".into()));
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    if let Some(s) = seed {
        doc["seed"] = json!(s);
    }
    let spec: ExperimentSpec = serde_json::from_value(doc).map_err(|e| CliError::Validation(e.to_string()))?;
    let echo = serde_json::to_value(&spec).map_err(|e| CliError::Validation(e.to_string()))?;
    Ok((spec, echo))
}

/// Output of a successful run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub csv: String,
    pub summary: Value,
}

fn need<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    section.as_ref().ok_or_else(|| CliError::Validation(format!("command needs a '{name}' section")))
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

/// Runs an experiment without touching the filesystem.
pub fn run_experiment(spec: &ExperimentSpec, echo: &Value) -> Result<RunOutput, CliError> {
    let (csv, metrics) = match spec.command {
        Command::Evolve => run_evolve(spec)?,
        Command::Optimize => run_optimize(spec)?,
        Command::Qmetts => run_qmetts_cmd(spec)?,
        Command::Gibbs => run_gibbs_cmd(spec)?,
        Command::TrotterBench => run_trotter_cmd(spec)?,
        Command::GradBench => run_grad_cmd(spec)?,
        Command::Maxcut => run_maxcut_cmd(spec)?,
    };
    let summary = json!({
        "command": spec.command,
        "version": crate::VERSION,
        "seed": spec.seed,
        "config": echo,
        "metrics": metrics,
    });
    Ok(RunOutput { csv, summary })
}

fn circuit_and_start(spec: &ExperimentSpec) -> Result<(crate::circuit::ParameterizedCircuit, Vec<f64>), CliError> {
    let ansatz = need(&spec.ansatz, "ansatz")?;
    let circuit = ansatz.build()?;
    let theta0 = initial_parameters(ansatz, spec.initial_state.as_ref().unwrap_or(&InitialState::Zero))?;
    Ok((circuit, theta0))
}

fn run_evolve(spec: &ExperimentSpec) -> Result<(String, Value), CliError> {
    let h = need(&spec.model, "model")?.hamiltonian()?;
    let (circuit, theta0) = circuit_and_start(spec)?;
    let mut cfg = need(&spec.evolution, "evolution")?.clone();
    cfg.seed = spec.seed;
    if spec.shots.is_some() {
        cfg.shots = spec.shots;
    }
    let mut trace = evolve(&circuit, &h, &theta0, &cfg)?;
    let mut metrics = Map::new();
    let last = trace.steps.last().expect("trace holds the initial point").clone();
    metrics.insert("steps".into(), json!(trace.steps.len() - 1));
    metrics.insert("final_energy".into(), num(last.energy));
    if h.n_qubits() <= REFERENCE_LIMIT {
        let psi0 = circuit.simulate(&theta0)?;
        let reference = exact_reference(&h, &psi0, &trace.times(), cfg.mode)?;
        let m = bures_metrics(&trace, &circuit, &reference)?;
        trace.attach_metrics(&m)?;
        metrics.insert("integrated_bures".into(), num(m.integrated_bures));
        metrics.insert("final_fidelity".into(), num(*m.fidelity.last().expect("non-empty")));
        metrics.insert("final_bures".into(), num(*m.bures.last().expect("non-empty")));
        metrics.insert("exact_final_energy".into(), num(reference.last().expect("non-empty").expectation(&h)?));
    }
    if cfg.mode == EvolutionMode::Real {
        if let Ok(b) = realtime_error_bound(&trace) {
            metrics.insert("final_error_bound".into(), num(*b.last().expect("non-empty")));
        }
    }
    let inner: Vec<usize> = trace.steps.iter().filter_map(|s| s.inner_iterations).collect();
    if !inner.is_empty() {
        metrics.insert("mean_inner_iterations".into(), num(inner.iter().sum::<usize>() as f64 / inner.len() as f64));
    }
    metrics.insert("circuits".into(), json!(last.circuits));
    metrics.insert("shots".into(), json!(last.shots));
    Ok((trace.to_csv(), Value::Object(metrics)))
}

fn run_optimize(spec: &ExperimentSpec) -> Result<(String, Value), CliError> {
    let h = need(&spec.model, "model")?.hamiltonian()?;
    let (circuit, theta0) = circuit_and_start(spec)?;
    let section = need(&spec.optimizer, "optimizer")?;
    let mut cfg = section.config.clone();
    cfg.seed = spec.seed;
    let n = h.n_qubits();
    let obj = Objective::new(circuit, Target::Observable(h.clone()), spec.shots, rng::child_seed(spec.seed, 1))?;
    let trace = match section.method {
        Method::Gd => run_gd(&obj, &theta0, &cfg)?,
        Method::Spsa => run_spsa(&obj, &theta0, &cfg, section.calibrate)?,
        Method::Qng => run_qng(&obj, &theta0, &cfg)?,
        Method::Qnspsa => run_qnspsa(&obj, &theta0, &cfg)?,
    };
    let (circuits, shots) = obj.counts();
    let mut metrics = json!({
        "final_loss": num(trace.final_loss()),
        "circuits": circuits,
        "shots": shots,
        "rejected": trace.rejected,
        "calibrated_a": trace.calibrated_a.map(num),
    });
    if n <= REFERENCE_LIMIT {
        metrics["ground_energy"] = num(Propagator::new(&h)?.ground_energy());
    }
    Ok((trace.to_csv(), metrics))
}

fn run_qmetts_cmd(spec: &ExperimentSpec) -> Result<(String, Value), CliError> {
    let model = need(&spec.model, "model")?;
    let h = model.hamiltonian()?;
    let section = need(&spec.qmetts, "qmetts")?;
    let observable = section.observable.as_deref().map(pauli_terms).transpose()?;
    let topology = match model {
        ModelSpec::Tfim { topology, .. } | ModelSpec::TiltedIsing { topology, .. } | ModelSpec::Heisenberg { topology, .. } => {
            topology.clone().unwrap_or(Topology::Line)
        }
        _ => Topology::Line,
    };
    let mut csv = String::from(QmettsEstimate::csv_header());
    let mut rows = Vec::new();
    for (i, &beta) in section.betas.iter().enumerate() {
        let mut cfg = QmettsConfig::new(h.clone(), beta, section.samples, section.backend.clone());
        cfg.observable = observable.clone();
        cfg.bases = section.bases.clone();
        cfg.burn_in = section.burn_in;
        cfg.reps = section.reps;
        cfg.topology = topology.clone();
        cfg.seed = rng::child_seed(spec.seed, i as u64);
        let est = run_qmetts(&cfg)?;
        csv.push_str(&est.csv_row());
        let mut row = json!({ "beta": beta, "mean": num(est.mean), "stderr": num(est.stderr) });
        if h.n_qubits() <= GIBBS_LIMIT {
            let obs = observable.clone().unwrap_or_else(|| h.scaled(1.0 / h.n_qubits() as f64));
            row["exact"] = num(thermal_average(&GibbsSpec { hamiltonian: h.clone(), beta }, &obs)?);
        }
        rows.push(row);
    }
    Ok((csv, json!({ "estimates": rows })))
}

fn run_gibbs_cmd(spec: &ExperimentSpec) -> Result<(String, Value), CliError> {
    let h = need(&spec.model, "model")?.hamiltonian()?;
    let section = need(&spec.gibbs, "gibbs")?;
    let rho = run_gibbs_prep(&h, section.beta, &section.backend, spec.seed)?;
    let exact = gibbs_state(&GibbsSpec { hamiltonian: h.clone(), beta: section.beta })?;
    let mut csv = String::from("index,probability,exact\n");
    for (i, (p, q)) in rho.probabilities().iter().zip(exact.probabilities()).enumerate() {
        let _ = writeln!(csv, "{i},{},{}", fmt17(*p), fmt17(q));
    }
    let metrics = json!({
        "trace_distance": num(rho.trace_distance(&exact)?),
        "energy": num(rho.expectation(&h)?),
        "exact_energy": num(exact.expectation(&h)?),
    });
    Ok((csv, metrics))
}

fn run_trotter_cmd(spec: &ExperimentSpec) -> Result<(String, Value), CliError> {
    let h = need(&spec.model, "model")?.hamiltonian()?;
    let section = need(&spec.trotter, "trotter")?;
    let n = h.n_qubits();
    let observable = match &section.observable {
        Some(t) => pauli_terms(t)?,
        None => PauliSum::from_terms(n, vec![(1.0, crate::pauli::PauliString::from_sparse(n, &[(0, crate::pauli::Pauli::X)])?)])?,
    };
    let psi0 = match &spec.initial_state {
        Some(s) => s.state(n)?,
        None => Statevector::zero(n),
    };
    let (diag, rest) = split_diagonal(&h);
    let groups: Vec<PauliSum> = [diag, rest].into_iter().filter(|g| !g.is_empty()).collect();
    let pts = trotter_benchmark(&groups, section.order, &psi0, &observable, section.total_time, &section.dts)?;
    let mut csv = String::from("dt,steps,observable,observable_error,state_error\n");
    for p in &pts {
        let _ = writeln!(csv, "{},{},{},{},{}", fmt17(p.dt), p.steps, fmt17(p.observable), fmt17(p.observable_error), fmt17(p.state_error));
    }
    let dts: Vec<f64> = pts.iter().map(|p| p.dt).collect();
    let errs: Vec<f64> = pts.iter().map(|p| p.state_error).collect();
    let slope = if pts.len() >= 2 && errs.iter().all(|e| *e > 0.0) { num(loglog_slope(&dts, &errs)) } else { Value::Null };
    Ok((csv, json!({ "state_error_exponent": slope })))
}

fn run_grad_cmd(spec: &ExperimentSpec) -> Result<(String, Value), CliError> {
    let section = need(&spec.grad_bench, "grad_bench")?;
    let pts = gradient_benchmark(section.n, &section.reps, spec.seed)?;
    let mut csv = String::from("d,reverse_ops,psr_ops\n");
    for p in &pts {
        let _ = writeln!(csv, "{},{},{}", p.d, p.reverse_ops, p.psr_ops);
    }
    let d: Vec<f64> = pts.iter().map(|p| p.d as f64).collect();
    let fit = |ys: Vec<f64>| if pts.len() >= 2 { num(loglog_slope(&d, &ys)) } else { Value::Null };
    let metrics = json!({
        "reverse_exponent": fit(pts.iter().map(|p| p.reverse_ops as f64).collect()),
        "psr_exponent": fit(pts.iter().map(|p| p.psr_ops as f64).collect()),
    });
    Ok((csv, metrics))
}

fn run_maxcut_cmd(spec: &ExperimentSpec) -> Result<(String, Value), CliError> {
    let graph = need(&spec.model, "model")?.graph()?;
    let section = need(&spec.maxcut, "maxcut")?;
    let cfg = MaxcutConfig {
        graph,
        reps: section.reps,
        engine: section.engine.clone(),
        shots: spec.shots,
        theta0: section.theta0.clone(),
        seed: spec.seed,
    };
    let res = run_maxcut(&cfg)?;
    let last = res.records.last().expect("at least the initial point");
    let metrics = json!({
        "optimal_cut": num(res.optimal_cut),
        "optimal_set": res.optimal_set,
        "final_p_optimal": num(last.p_optimal),
        "final_energy": num(last.energy),
        "circuits": last.circuits,
        "shots": last.shots,
    });
    Ok((res.to_csv(), metrics))
}

/// Writes `trace.csv` and `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join("trace.csv"), &out.csv).map_err(io)?;
    let mut summary = serde_json::to_string_pretty(&out.summary).map_err(|e| CliError::Io(e.to_string()))?;
    summary.push('\n');
    std::fs::write(dir.join("summary.json"), summary).map_err(io)
}

#[derive(Debug, Parser)]
#[command(name = "varqt", version, about = "Run variational time-evolution and optimization experiments from a JSON spec")]
struct Args {
    /// Experiment spec (JSON).
    #[arg(long, value_name = "PATH")]
    spec: PathBuf,
    /// Override a spec field, e.g. `--set evolution.dt=0.02`. Repeatable.
    #[arg(long = "set", value_name = "K=V")]
    set: Vec<String>,
    /// Top-level seed; overrides the spec.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides the spec (default `out`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for parallel sampling.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

fn execute(args: Args) -> Result<PathBuf, CliError> {
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let text = std::fs::read_to_string(&args.spec).map_err(|e| CliError::Parse(format!("{}: {e}", args.spec.display())))?;
    let (spec, echo) = load_spec(&text, &args.set, args.seed)?;
    let out = run_experiment(&spec, &echo)?;
    let dir = args.out.or_else(|| spec.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    write_outputs(&dir, &out)?;
    Ok(dir)
}

/// Entry point taking the full argument list; returns the exit code.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(args) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("varqt: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run_cli(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    const EVOLVE: &str = r#"{
        "command": "evolve",
        "seed": 3,
        "model": {"kind": "tfim", "n": 2, "j": 0.5, "h": -1.0},
        "ansatz": {"kind": "efficient_su2", "n": 2, "reps": 1},
        "evolution": {"mode": "imaginary", "total_time": 0.2, "dt": 0.05, "engine": {"kind": "varqte"}}
    }"#;

    #[test]
    fn overrides_set_nested_values() {
        let mut v = json!({"a": {"b": 1}, "list": [1, 2]});
        apply_override(&mut v, "a.b=2.5").unwrap();
        apply_override(&mut v, "a.c.d=true").unwrap();
        apply_override(&mut v, "list.1=7").unwrap();
        apply_override(&mut v, "name=tfim").unwrap();
        assert_eq!(v, json!({"a": {"b": 2.5, "c": {"d": true}}, "list": [1, 7], "name": "tfim"}));
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "list.9=1").is_err());
        assert!(apply_override(&mut v, "a.b.c=1").is_err());
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(load_spec("{not json", &[], None).unwrap_err().exit_code(), 2);
        assert_eq!(load_spec(r#"{"command": "fly"}"#, &[], None).unwrap_err().exit_code(), 3);
        assert_eq!(CliError::from(Error::Numerical("x".into())).exit_code(), 4);
        let (spec, echo) = load_spec(EVOLVE, &["evolution.dt=-1".into()], None).unwrap();
        assert_eq!(run_experiment(&spec, &echo).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn evolve_is_deterministic_and_echo_round_trips() {
        let (spec, echo) = load_spec(EVOLVE, &[], Some(9)).unwrap();
        assert_eq!(spec.seed, 9);
        let a = run_experiment(&spec, &echo).unwrap();
        let b = run_experiment(&spec, &echo).unwrap();
        assert_eq!(a, b);
        let (again, echo2) = load_spec(&echo.to_string(), &[], None).unwrap();
        assert_eq!(again, spec);
        assert_eq!(run_experiment(&again, &echo2).unwrap().csv, a.csv);
        assert!(a.summary["metrics"]["integrated_bures"].as_f64().unwrap() < 0.05);
        assert_eq!(a.summary["version"], crate::VERSION);
    }

    #[test]
    fn missing_section_is_a_validation_error() {
        let (spec, echo) = load_spec(r#"{"command": "gibbs", "model": {"kind": "pauli", "terms": [[1.0, "ZZ"]]}}"#, &[], None).unwrap();
        assert_eq!(run_experiment(&spec, &echo).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert_eq!(load_spec(r#"{"command": "evolve", "sed": 1}"#, &[], None).unwrap_err().exit_code(), 3);
    }
}
