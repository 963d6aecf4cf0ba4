//! End-to-end applications built on the evolution and optimization engines:
//! thermal averages by minimally entangled typical thermal states, Gibbs-state
//! preparation, Boltzmann-machine training and Max-Cut.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{gibbs_pair, initial_parameters, qaoa, x_mixer, AnsatzSpec, InitialState, ParameterizedCircuit, Single};
use crate::deriv::{grad_parameter_shift_counted, grad_reverse, EvolutionMode};
use crate::error::{Error, Result};
use crate::evolve::{evolve, Engine, EvolutionConfig};
use crate::optimize::{fmt17, mean_stderr, run_qnspsa, run_spsa, Loss, Objective, OptimizationTrace, OptimizerConfig, Target};
use crate::oracle::{trotter_circuit, Propagator};
use crate::pauli::{build_model, Graph, Model, Pauli, PauliString, PauliSum, Topology};
use crate::rng::{self, streams};
use crate::solve::SolverConfig;
use crate::state::{partial_trace, DensityOperator, Gate, Statevector};

/// Variational imaginary-time settings shared by the applications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalIte {
    pub engine: Engine,
    pub dt: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub shots: Option<u64>,
}

/// How imaginary-time evolution is carried out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IteBackend {
    /// Dense propagation.
    Exact,
    Variational(VariationalIte),
}

impl IteBackend {
    /// Forward-Euler VarQITE with exact `g` and `b`.
    pub fn varqite(dt: f64) -> Self {
        IteBackend::Variational(VariationalIte { engine: Engine::Varqte, dt, solver: SolverConfig::default(), shots: None })
    }

    /// Evolves the ansatz state from `theta0` to imaginary time `tau` and
    /// returns the final parameters.
    fn evolve_params(&self, circuit: &ParameterizedCircuit, h: &PauliSum, theta0: &[f64], tau: f64, seed: u64) -> Result<Vec<f64>> {
        let IteBackend::Variational(v) = self else {
            return Err(Error::invalid("exact backend has no parameters"));
        };
        if tau <= 0.0 {
            return Ok(theta0.to_vec());
        }
        let mut cfg = EvolutionConfig::new(EvolutionMode::Imaginary, tau, v.dt.min(tau), v.engine.clone());
        cfg.solver = v.solver;
        cfg.shots = v.shots;
        cfg.seed = seed;
        Ok(evolve(circuit, h, theta0, &cfg)?.final_theta().to_vec())
    }
}

/// Measurement bases of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    X,
    Y,
    Z,
}

impl Basis {
    fn outcome(self, bit: bool) -> Single {
        match (self, bit) {
            (Basis::X, false) => Single::Plus,
            (Basis::X, true) => Single::Minus,
            (Basis::Y, false) => Single::PlusI,
            (Basis::Y, true) => Single::MinusI,
            (Basis::Z, false) => Single::Zero,
            (Basis::Z, true) => Single::One,
        }
    }

    /// Rotation taking this basis onto the computational one.
    fn to_computational(self, q: usize) -> Option<Gate> {
        match self {
            Basis::X => Some(Gate::ry(q, -std::f64::consts::FRAC_PI_2)),
            Basis::Y => Some(Gate::rx(q, std::f64::consts::FRAC_PI_2)),
            Basis::Z => None,
        }
    }
}

/// Sequential single-qubit projective measurement in `basis`: each qubit is
/// sampled from its conditional distribution and the state renormalized.
pub fn collapse<R: Rng + ?Sized>(state: &Statevector, basis: Basis, rng: &mut R) -> Result<Vec<Single>> {
    let n = state.n_qubits();
    let mut s = state.clone();
    for q in 0..n {
        if let Some(g) = basis.to_computational(q) {
            s.apply(&g)?;
        }
    }
    let mut amps = s.into_amplitudes();
    let mut out = Vec::with_capacity(n);
    for q in 0..n {
        let bit = 1usize << q;
        let p1: f64 = amps.iter().enumerate().filter(|(x, _)| x & bit != 0).map(|(_, a)| a.norm_sqr()).sum();
        let one = rng.random::<f64>() < p1;
        let keep = if one { p1 } else { 1.0 - p1 };
        if keep <= 0.0 {
            return Err(Error::numerical("measurement outcome has zero probability"));
        }
        let scale = 1.0 / keep.sqrt();
        for (x, a) in amps.iter_mut().enumerate() {
            *a = if (x & bit != 0) == one { *a * scale } else { crate::Complex64::new(0.0, 0.0) };
        }
        out.push(basis.outcome(one));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct QmettsConfig {
    pub hamiltonian: PauliSum,
    pub beta: f64,
    /// Defaults to the energy per site.
    pub observable: Option<PauliSum>,
    pub samples: usize,
    pub bases: Vec<Basis>,
    pub burn_in: usize,
    pub backend: IteBackend,
    /// Layers of the efficient-SU2 ansatz used by variational backends.
    pub reps: usize,
    /// Entangler layout of that ansatz; should follow the interactions.
    pub topology: Topology,
    pub seed: u64,
}

impl QmettsConfig {
    pub fn new(hamiltonian: PauliSum, beta: f64, samples: usize, backend: IteBackend) -> Self {
        QmettsConfig {
            hamiltonian,
            beta,
            observable: None,
            samples,
            bases: vec![Basis::X, Basis::Y],
            burn_in: 0,
            backend,
            reps: 1,
            topology: Topology::Line,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("QMETTS needs at least one sample"));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(format!("inverse temperature must be positive, got {}", self.beta)));
        }
        if self.bases.is_empty() {
            return Err(Error::invalid("QMETTS needs at least one measurement basis"));
        }
        if let Some(a) = &self.observable {
            if a.n_qubits() != self.hamiltonian.n_qubits() {
                return Err(Error::DimensionMismatch { expected: self.hamiltonian.n_qubits(), got: a.n_qubits() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmettsEstimate {
    pub beta: f64,
    pub mean: f64,
    pub stderr: f64,
    pub samples: Vec<f64>,
}

impl QmettsEstimate {
    pub fn csv_header() -> &'static str {
        "beta,mean,stderr,M\n"
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}\n", fmt17(self.beta), fmt17(self.mean), fmt17(self.stderr), self.samples.len())
    }
}

/// Thermal average by a Markov chain of product states: evolve to `beta/2`,
/// record the observable, measure in the next scheduled basis.
pub fn run_qmetts(config: &QmettsConfig) -> Result<QmettsEstimate> {
    config.validate()?;
    let h = &config.hamiltonian;
    let n = h.n_qubits();
    let observable = match &config.observable {
        Some(a) => a.clone(),
        None => h.scaled(1.0 / n as f64),
    };
    let exact = match config.backend {
        IteBackend::Exact => Some(Propagator::new(h)?),
        IteBackend::Variational(_) => None,
    };
    let mut chain = rng::stream(config.seed, streams::QMETTS);
    let first = config.bases[0];
    let mut product: Vec<Single> = (0..n).map(|_| first.outcome(chain.random())).collect();
    let mut basis = first;
    let mut samples = Vec::with_capacity(config.samples);
    for m in 0..config.burn_in + config.samples {
        let evolved = match &exact {
            Some(p) => p.imag(&InitialState::Product(product.clone()).state(n)?, config.beta / 2.0)?,
            None => {
                let spec = AnsatzSpec::EfficientSu2 {
                    n,
                    reps: config.reps,
                    topology: Some(config.topology.clone()),
                    first_axis: Some(if basis == Basis::Y { 'X' } else { 'Y' }),
                };
                let circuit = spec.build()?;
                let theta0 = initial_parameters(&spec, &InitialState::Product(product.clone()))?;
                let theta = config.backend.evolve_params(&circuit, h, &theta0, config.beta / 2.0, rng::child_seed(config.seed, m as u64))?;
                circuit.simulate(&theta)?
            }
        };
        if m >= config.burn_in {
            samples.push(evolved.expectation(&observable)?);
        }
        basis = config.bases[(m + 1) % config.bases.len()];
        product = collapse(&evolved, basis, &mut chain)?;
    }
    let (mean, stderr) = mean_stderr(&samples);
    Ok(QmettsEstimate { beta: config.beta, mean, stderr, samples })
}

/// `H` on the first `n` qubits of a `2n`-qubit register.
fn embed_system(h: &PauliSum) -> Result<PauliSum> {
    let n = h.n_qubits();
    let terms = h
        .terms()
        .iter()
        .map(|(c, p)| {
            let mut ops = p.ops().to_vec();
            ops.extend(std::iter::repeat_n(Pauli::I, n));
            (*c, PauliString::new(ops))
        })
        .collect();
    PauliSum::from_terms(2 * n, terms)
}

/// Bell pairs between qubit `q` and `q + n`.
fn bell_pairs(n: usize) -> Result<Statevector> {
    let mut s = Statevector::zero(2 * n);
    for q in 0..n {
        s.apply(&Gate::H(q))?;
        s.apply(&Gate::CX { control: q, target: q + n })?;
    }
    Ok(s)
}

/// Gibbs state of `h` at inverse temperature `beta`: Bell pairs between the
/// system and an equal-sized ancilla register are evolved in imaginary time
/// to `beta / 2` under `h` on the system, and the ancillas traced out.
///
/// Variational backends use the two-qubit Gibbs ansatz, so they need a
/// two-qubit `h`.
pub fn run_gibbs_prep(h: &PauliSum, beta: f64, backend: &IteBackend, seed: u64) -> Result<DensityOperator> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!("inverse temperature must be non-negative, got {beta}")));
    }
    let n = h.n_qubits();
    let doubled = embed_system(h)?;
    let keep: Vec<usize> = (0..n).collect();
    let state = match backend {
        IteBackend::Exact => {
            let psi = bell_pairs(n)?;
            if beta == 0.0 {
                psi
            } else {
                Propagator::new(&doubled)?.imag(&psi, beta / 2.0)?
            }
        }
        IteBackend::Variational(_) => {
            if n != 2 {
                return Err(Error::Unsupported("variational Gibbs preparation supports two system qubits".into()));
            }
            let circuit = gibbs_pair()?;
            let theta0 = initial_parameters(&AnsatzSpec::GibbsPair, &InitialState::MaximallyMixedA)?;
            let theta = backend.evolve_params(&circuit, &doubled, &theta0, beta / 2.0, seed)?;
            circuit.simulate(&theta)?
        }
    };
    partial_trace(&state, &keep)
}

/// Boltzmann-machine Hamiltonian `-sum W_jk Z_j Z_k - sum h_j Z_j` on a fully
/// connected graph. `params` holds the weights in pair order `(0,1), (0,2),
/// ..., (1,2), ...` followed by the biases.
pub fn boltzmann_hamiltonian(n: usize, params: &[f64]) -> Result<PauliSum> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    if params.len() != pairs.len() + n {
        return Err(Error::DimensionMismatch { expected: pairs.len() + n, got: params.len() });
    }
    let mut h = PauliSum::new(n);
    for (&(a, b), w) in pairs.iter().zip(params) {
        h.push(-w, PauliString::from_sparse(n, &[(a, Pauli::Z), (b, Pauli::Z)])?)?;
    }
    for (q, bias) in params[pairs.len()..].iter().enumerate() {
        h.push(-bias, PauliString::from_sparse(n, &[(q, Pauli::Z)])?)?;
    }
    Ok(h)
}

/// Smallest model probability used inside the logarithm.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct VarqbmConfig {
    /// Target distribution over `2^n` basis states.
    pub target: Vec<f64>,
    pub beta: f64,
    pub optimizer: OptimizerConfig,
    pub backend: IteBackend,
    /// Initial weights and biases are drawn uniformly from `[-r, r]`.
    pub init_range: f64,
    pub seed: u64,
}

impl VarqbmConfig {
    pub fn new(target: Vec<f64>, beta: f64, backend: IteBackend) -> Self {
        VarqbmConfig { target, beta, optimizer: OptimizerConfig::fixed(0.1, 0.1, 100), backend, init_range: 2.0, seed: 0 }
    }

    fn n_qubits(&self) -> Result<usize> {
        let len = self.target.len();
        if len < 4 || !len.is_power_of_two() {
            return Err(Error::invalid(format!("target length {len} is not 2^n with n >= 2")));
        }
        Ok(len.trailing_zeros() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.n_qubits()?;
        if self.target.iter().any(|p| !(*p >= 0.0)) || (self.target.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("target must be a probability distribution"));
        }
        if !(self.beta > 0.0) || !(self.init_range >= 0.0) {
            return Err(Error::invalid("inverse temperature must be positive and init range non-negative"));
        }
        self.optimizer.validate()
    }
}

/// Cross entropy of the model's Gibbs distribution against the target.
struct CrossEntropy<'a> {
    config: &'a VarqbmConfig,
    n: usize,
    clipped: AtomicUsize,
}

impl CrossEntropy<'_> {
    fn distribution(&self, params: &[f64], key: u64) -> Result<Vec<f64>> {
        let h = boltzmann_hamiltonian(self.n, params)?;
        let rho = run_gibbs_prep(&h, self.config.beta, &self.config.backend, rng::child_seed(self.config.seed, key))?;
        Ok(rho.probabilities())
    }

    fn entropy(&self, p: &[f64]) -> f64 {
        self.config
            .target
            .iter()
            .zip(p)
            .filter(|(t, _)| **t > 0.0)
            .map(|(t, q)| {
                if *q < PROBABILITY_FLOOR {
                    self.clipped.fetch_add(1, Ordering::Relaxed);
                }
                -t * q.max(PROBABILITY_FLOOR).ln()
            })
            .sum()
    }
}

impl Loss for CrossEntropy<'_> {
    fn n_params(&self) -> usize {
        self.n * (self.n - 1) / 2 + self.n
    }

    fn value(&self, theta: &[f64], key: u64) -> Result<f64> {
        Ok(self.entropy(&self.distribution(theta, key)?))
    }

    fn gradient(&self, _theta: &[f64], _key: u64) -> Result<Vec<f64>> {
        Err(Error::Unsupported("Boltzmann training uses SPSA".into()))
    }
}

#[derive(Debug, Clone)]
pub struct VarqbmResult {
    /// Weights then biases, see [`boltzmann_hamiltonian`].
    pub params: Vec<f64>,
    pub loss: f64,
    pub distribution: Vec<f64>,
    pub trace: OptimizationTrace,
    /// Number of model probabilities raised to the floor.
    pub clipped: usize,
}

/// Trains Boltzmann weights and biases with SPSA on the cross entropy; every
/// loss evaluation prepares a Gibbs state. Returns the best iterate.
pub fn train_varqbm(config: &VarqbmConfig) -> Result<VarqbmResult> {
    config.validate()?;
    let n = config.n_qubits()?;
    let loss = CrossEntropy { config, n, clipped: AtomicUsize::new(0) };
    let mut init = rng::stream(config.seed, streams::INIT);
    let r = config.init_range;
    let theta0: Vec<f64> = (0..loss.n_params()).map(|_| if r > 0.0 { init.random_range(-r..=r) } else { 0.0 }).collect();
    let trace = run_spsa(&loss, &theta0, &config.optimizer, false)?;
    let best = trace
        .records
        .iter()
        .min_by(|a, b| a.loss.total_cmp(&b.loss))
        .expect("trace holds the initial point");
    let params = best.theta.clone();
    let distribution = loss.distribution(&params, 0)?;
    Ok(VarqbmResult { loss: best.loss, params, distribution, clipped: loss.clipped.load(Ordering::Relaxed), trace })
}

/// Total-variation distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaxcutEngine {
    Qnspsa(OptimizerConfig),
    Saqite {
        #[serde(default)]
        config: crate::evolve::SaqiteConfig,
        dt: f64,
        steps: usize,
        #[serde(default)]
        solver: SolverConfig,
    },
}

#[derive(Debug, Clone)]
pub struct MaxcutConfig {
    pub graph: Graph,
    /// QAOA layers.
    pub reps: usize,
    pub engine: MaxcutEngine,
    pub shots: Option<u64>,
    /// Starting angles `(gamma_1, beta_1, ...)`; defaults to 0.1 each.
    pub theta0: Option<Vec<f64>>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxcutRecord {
    pub k: usize,
    pub energy: f64,
    pub p_optimal: f64,
    pub circuits: u64,
    pub shots: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxcutResult {
    pub optimal_cut: f64,
    pub optimal_set: Vec<usize>,
    pub records: Vec<MaxcutRecord>,
}

impl MaxcutResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,energy,p_optimal,circuits,shots\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{},{}\n", r.k, fmt17(r.energy), fmt17(r.p_optimal), r.circuits, r.shots));
        }
        out
    }

    /// Shots spent when `p_optimal` first reaches `target`.
    pub fn shots_to_reach(&self, target: f64) -> Option<u64> {
        self.records.iter().find(|r| r.p_optimal >= target).map(|r| r.shots)
    }

    pub fn final_p_optimal(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.p_optimal)
    }
}

/// Probability of sampling one of `optimal` from `state`.
pub fn p_optimal(state: &Statevector, optimal: &[usize]) -> f64 {
    let amps = state.amplitudes();
    optimal.iter().map(|&x| amps[x].norm_sqr()).sum()
}

/// Optimizes the QAOA energy of the Max-Cut Hamiltonian and tracks the exact
/// probability of sampling an optimal cut.
pub fn run_maxcut(config: &MaxcutConfig) -> Result<MaxcutResult> {
    let n = config.graph.n_nodes();
    if n > 16 {
        return Err(Error::invalid("Max-Cut needs n <= 16 for the brute-force optimum"));
    }
    let h = build_model(&Model::MaxCut(config.graph.clone()), &Topology::Line)?;
    let circuit = qaoa(&h, &x_mixer(n), config.reps)?;
    let theta0 = config.theta0.clone().unwrap_or_else(|| vec![0.1; circuit.n_params()]);
    circuit.check_params(&theta0)?;
    let (optimal_cut, optimal_set) = config.graph.optimal_cuts();
    let point = |k: usize, theta: &[f64], circuits: u64, shots: u64| -> Result<MaxcutRecord> {
        let s = circuit.simulate(theta)?;
        Ok(MaxcutRecord { k, energy: s.expectation(&h)?, p_optimal: p_optimal(&s, &optimal_set), circuits, shots })
    };
    let records = match &config.engine {
        MaxcutEngine::Qnspsa(opt) => {
            let obj = Objective::new(circuit.clone(), Target::Observable(h.clone()), config.shots, rng::child_seed(config.seed, 1))?;
            let mut opt = opt.clone();
            opt.seed = config.seed;
            let trace = run_qnspsa(&obj, &theta0, &opt)?;
            trace.records.iter().map(|r| point(r.k, &r.theta, r.circuits, r.shots)).collect::<Result<Vec<_>>>()?
        }
        MaxcutEngine::Saqite { config: sa, dt, steps, solver } => {
            let mut cfg = EvolutionConfig::new(EvolutionMode::Imaginary, dt * *steps as f64, *dt, Engine::Saqite(sa.clone()));
            cfg.solver = *solver;
            cfg.shots = config.shots;
            cfg.seed = config.seed;
            let trace = evolve(&circuit, &h, &theta0, &cfg)?;
            let mut out = Vec::with_capacity(trace.steps.len());
            let (mut c, mut s) = (0, 0);
            for (k, step) in trace.steps.iter().enumerate() {
                out.push(point(k, &step.theta, c, s)?);
                (c, s) = (step.circuits, step.shots);
            }
            out
        }
    };
    Ok(MaxcutResult { optimal_cut, optimal_set, records })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrotterPoint {
    /// Requested step size.
    pub dt: f64,
    pub steps: usize,
    pub observable: f64,
    pub observable_error: f64,
    /// Bures distance to the exact state.
    pub state_error: f64,
}

/// Product-formula errors at time `total_time` for each requested step
/// size. The step count is `ceil(total_time / dt)`, so the effective step
/// never exceeds `dt`.
pub fn trotter_benchmark(
    groups: &[PauliSum],
    order: u8,
    psi0: &Statevector,
    observable: &PauliSum,
    total_time: f64,
    dts: &[f64],
) -> Result<Vec<TrotterPoint>> {
    let first = groups.first().ok_or_else(|| Error::invalid("no Hamiltonian groups"))?;
    let mut h = first.clone();
    for g in &groups[1..] {
        h = h.plus(g)?;
    }
    let exact = Propagator::new(&h)?.real(psi0, total_time)?;
    let reference = exact.expectation(observable)?;
    dts.iter()
        .map(|&dt| {
            if !(dt > 0.0) {
                return Err(Error::invalid(format!("step size must be positive, got {dt}")));
            }
            let steps = ((total_time / dt) - 1e-9).ceil().max(1.0) as usize;
            let state = trotter_circuit(groups, order, steps, total_time)?.simulate_from(psi0.clone(), &[])?;
            let value = state.expectation(observable)?;
            Ok(TrotterPoint {
                dt,
                steps,
                observable: value,
                observable_error: (value - reference).abs(),
                state_error: crate::evolve::bures_distance(&state, &exact)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradBenchPoint {
    pub reps: usize,
    pub d: usize,
    pub reverse_ops: u64,
    pub psr_ops: u64,
}

/// Operation counts of reverse-mode and parameter-shift gradients of the
/// transverse-field Ising energy on efficient-SU2 circuits of growing depth.
pub fn gradient_benchmark(n: usize, reps: &[usize], seed: u64) -> Result<Vec<GradBenchPoint>> {
    let h = build_model(&Model::Tfim { n, j: 0.5, h: -1.0 }, &Topology::Line)?;
    let mut r = rng::stream(seed, streams::INIT);
    reps.iter()
        .map(|&reps| {
            let c = crate::circuit::efficient_su2(n, reps, &Topology::Line, Pauli::Y)?;
            let theta: Vec<f64> = (0..c.n_params()).map(|_| r.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect();
            let reverse_ops = grad_reverse(&c, &h, &theta)?.gate_ops;
            let (_, psr_ops) = grad_parameter_shift_counted(&c, &h, &theta)?;
            Ok(GradBenchPoint { reps, d: c.n_params(), reverse_ops, psr_ops })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{gibbs_state, thermal_average, GibbsSpec};
    use approx::assert_abs_diff_eq;

    fn heisenberg(n: usize) -> PauliSum {
        build_model(&Model::Heisenberg { n, j: 0.25, h: -1.0 }, &Topology::Line).unwrap()
    }

    #[test]
    fn collapse_of_basis_eigenstate_is_deterministic() {
        let states = vec![Single::Plus, Single::Minus, Single::Plus];
        let psi = InitialState::Product(states.clone()).state(3).unwrap();
        let mut r = rng::stream(1, "test");
        for _ in 0..20 {
            assert_eq!(collapse(&psi, Basis::X, &mut r).unwrap(), states);
        }
        let y = vec![Single::MinusI, Single::PlusI];
        let psi = InitialState::Product(y.clone()).state(2).unwrap();
        assert_eq!(collapse(&psi, Basis::Y, &mut r).unwrap(), y);
    }

    #[test]
    fn collapse_follows_born_rule() {
        let mut bell = Statevector::zero(2);
        bell.apply(&Gate::H(0)).unwrap();
        bell.apply(&Gate::CX { control: 0, target: 1 }).unwrap();
        let mut r = rng::stream(2, "test");
        let mut same = 0;
        let mut plus = 0;
        for _ in 0..2000 {
            let o = collapse(&bell, Basis::Z, &mut r).unwrap();
            same += usize::from(o[0] == o[1]);
            plus += usize::from(o[0] == Single::Zero);
        }
        assert_eq!(same, 2000);
        assert!((plus as f64 / 2000.0 - 0.5).abs() < 0.05);
    }

    #[test]
    fn qmetts_small_beta_is_infinite_temperature_average() {
        let h = heisenberg(3);
        let mut cfg = QmettsConfig::new(h.clone(), 1e-9, 300, IteBackend::Exact);
        cfg.seed = 4;
        let est = run_qmetts(&cfg).unwrap();
        let dim = 8.0;
        let trace_avg = h.matrix().unwrap().trace().re / dim / 3.0;
        assert!((est.mean - trace_avg).abs() <= 3.0 * est.stderr + 1e-9, "{} vs {trace_avg} +- {}", est.mean, est.stderr);
    }

    #[test]
    fn qmetts_chain_is_uniform_at_zero_temperature_limit() {
        // At beta -> 0 the chain samples product states uniformly.
        let h = heisenberg(2);
        let p = Propagator::new(&h).unwrap();
        let mut r = rng::stream(5, "test");
        let mut counts = [0usize; 4];
        let mut product = vec![Single::Plus, Single::Plus];
        let total = 4000;
        for m in 0..total {
            let evolved = p.imag(&InitialState::Product(product.clone()).state(2).unwrap(), 1e-12).unwrap();
            let basis = if m % 2 == 0 { Basis::Y } else { Basis::X };
            product = collapse(&evolved, basis, &mut r).unwrap();
            if basis == Basis::X {
                let idx = usize::from(product[0] == Single::Minus) + 2 * usize::from(product[1] == Single::Minus);
                counts[idx] += 1;
            }
        }
        let expected = total as f64 / 8.0;
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
        // 3 degrees of freedom, p = 0.01 critical value.
        assert!(chi2 < 11.34, "chi2 {chi2} counts {counts:?}");
    }

    #[test]
    fn qmetts_matches_thermal_average() {
        let h = heisenberg(3);
        let mut cfg = QmettsConfig::new(h.clone(), 1.0, 200, IteBackend::Exact);
        cfg.seed = 11;
        let est = run_qmetts(&cfg).unwrap();
        let oracle = thermal_average(&GibbsSpec { hamiltonian: h.clone(), beta: 1.0 }, &h.scaled(1.0 / 3.0)).unwrap();
        assert!((est.mean - oracle).abs() <= 3.0 * est.stderr, "{} vs {oracle} +- {}", est.mean, est.stderr);
        assert!(QmettsEstimate::csv_header().starts_with("beta,mean,stderr,M"));
        assert!(est.csv_row().ends_with(",200\n"));
    }

    #[test]
    fn qmetts_variational_backend_runs() {
        let h = heisenberg(2);
        let mut cfg = QmettsConfig::new(h.clone(), 0.2, 5, IteBackend::varqite(0.05));
        cfg.seed = 2;
        let est = run_qmetts(&cfg).unwrap();
        let exact = run_qmetts(&QmettsConfig { backend: IteBackend::Exact, ..cfg.clone() }).unwrap();
        for (a, b) in est.samples.iter().zip(&exact.samples) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
    }

    #[test]
    fn qmetts_rejects_bad_config() {
        let h = heisenberg(2);
        assert!(run_qmetts(&QmettsConfig::new(h.clone(), 0.0, 5, IteBackend::Exact)).is_err());
        assert!(run_qmetts(&QmettsConfig::new(h, 1.0, 0, IteBackend::Exact)).is_err());
    }

    fn zz() -> PauliSum {
        PauliSum::from_labels(&[(1.0, "ZZ")]).unwrap()
    }

    #[test]
    fn gibbs_prep_at_zero_beta_is_maximally_mixed() {
        for backend in [IteBackend::Exact, IteBackend::varqite(0.05)] {
            let rho = run_gibbs_prep(&zz(), 0.0, &backend, 0).unwrap();
            assert!(rho.trace_distance(&DensityOperator::maximally_mixed(2)).unwrap() < 1e-10);
        }
    }

    #[test]
    fn gibbs_prep_exact_and_variational() {
        let target = gibbs_state(&GibbsSpec { hamiltonian: zz(), beta: 1.0 }).unwrap();
        let exact = run_gibbs_prep(&zz(), 1.0, &IteBackend::Exact, 0).unwrap();
        assert!(exact.trace_distance(&target).unwrap() < 1e-10);
        let var = run_gibbs_prep(&zz(), 1.0, &IteBackend::varqite(0.05), 0).unwrap();
        var.validate(1e-9).unwrap();
        assert!(var.trace_distance(&target).unwrap() < 0.05);
    }

    #[test]
    fn gibbs_prep_handles_three_system_qubits_exactly() {
        let h = heisenberg(3);
        let rho = run_gibbs_prep(&h, 0.7, &IteBackend::Exact, 0).unwrap();
        let target = gibbs_state(&GibbsSpec { hamiltonian: h.clone(), beta: 0.7 }).unwrap();
        assert!(rho.trace_distance(&target).unwrap() < 1e-10);
        assert!(run_gibbs_prep(&h, 0.7, &IteBackend::varqite(0.05), 0).is_err());
    }

    #[test]
    fn boltzmann_energies() {
        let h = boltzmann_hamiltonian(2, &[1.5, 0.5, -0.25]).unwrap();
        // Basis index 0 is z = (+1, +1).
        let d = h.diagonal().unwrap();
        assert_abs_diff_eq!(d[0], -1.5 - 0.5 + 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 1.5 + 0.5 + 0.25, epsilon = 1e-15);
        assert!(boltzmann_hamiltonian(2, &[1.0]).is_err());
    }

    #[test]
    fn varqbm_at_own_distribution_stays_at_entropy_floor() {
        let params = [0.3, -0.2, 0.4];
        let rho = run_gibbs_prep(&boltzmann_hamiltonian(2, &params).unwrap(), 1.0, &IteBackend::Exact, 0).unwrap();
        let p = rho.probabilities();
        let entropy: f64 = -p.iter().map(|x| x * x.ln()).sum::<f64>();
        let mut cfg = VarqbmConfig::new(p, 1.0, IteBackend::Exact);
        cfg.init_range = 0.0;
        cfg.optimizer.iterations = 20;
        let res = train_varqbm(&cfg).unwrap();
        assert!(res.loss >= entropy - 1e-12);
    }

    #[test]
    fn varqbm_learns_bell_distribution() {
        let target = vec![0.5, 0.0, 0.0, 0.5];
        let mut cfg = VarqbmConfig::new(target.clone(), 1.0, IteBackend::Exact);
        cfg.seed = 3;
        let res = train_varqbm(&cfg).unwrap();
        assert!(total_variation(&res.distribution, &target) < 0.1, "{:?}", res.distribution);
        assert!(res.trace.records.len() == 101);
    }

    #[test]
    fn varqbm_validates_target() {
        assert!(train_varqbm(&VarqbmConfig::new(vec![0.5, 0.5, 0.5], 1.0, IteBackend::Exact)).is_err());
        assert!(train_varqbm(&VarqbmConfig::new(vec![0.5, 0.6, 0.0, -0.1], 1.0, IteBackend::Exact)).is_err());
    }

    #[test]
    fn maxcut_four_ring_beats_uniform_sampling() {
        let g = Graph::ring(4).unwrap();
        let cfg = MaxcutConfig {
            graph: g,
            reps: 1,
            engine: MaxcutEngine::Qnspsa(OptimizerConfig::fixed(0.1, 0.1, 60)),
            shots: None,
            theta0: None,
            seed: 7,
        };
        let res = run_maxcut(&cfg).unwrap();
        assert_eq!(res.optimal_set.len(), 2);
        assert_abs_diff_eq!(res.records[0].p_optimal, 0.125, epsilon = 0.05);
        assert!(res.final_p_optimal() > 0.25, "{}", res.final_p_optimal());
        let sa = MaxcutConfig {
            engine: MaxcutEngine::Saqite { config: Default::default(), dt: 0.1, steps: 30, solver: SolverConfig::default() },
            ..cfg
        };
        let res = run_maxcut(&sa).unwrap();
        assert!(res.final_p_optimal() > 0.25, "{}", res.final_p_optimal());
        assert!(res.to_csv().starts_with("k,energy,p_optimal,circuits,shots\n"));
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [0.1, 0.2, 0.4];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
        assert_abs_diff_eq!(loglog_slope(&xs, &ys), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn second_order_trotter_error_scales_quadratically() {
        let h = build_model(&Model::TiltedIsing { n: 3, j: 1.0, hx: 0.9, hz: 0.8 }, &Topology::Ring).unwrap();
        let (diag, rest) = crate::pauli::split_diagonal(&h);
        let x0 = PauliSum::from_labels(&[(1.0, "IIX")]).unwrap();
        let pts = trotter_benchmark(&[diag, rest], 2, &Statevector::zero(3), &x0, 1.0, &[0.2, 0.1, 0.05]).unwrap();
        assert_eq!(pts.iter().map(|p| p.steps).collect::<Vec<_>>(), vec![5, 10, 20]);
        let slope = loglog_slope(&pts.iter().map(|p| p.dt).collect::<Vec<_>>(), &pts.iter().map(|p| p.state_error).collect::<Vec<_>>());
        assert!((slope - 2.0).abs() < 0.2, "slope {slope}");
    }

    #[test]
    fn gradient_benchmark_orders_methods() {
        let pts = gradient_benchmark(3, &[1, 3], 0).unwrap();
        assert_eq!(pts[0].d, 12);
        assert!(pts.iter().all(|p| p.reverse_ops < p.psr_ops));
    }
}
