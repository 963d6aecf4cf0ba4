//! Ground-state optimizers: gradient descent, SPSA, quantum natural gradient
//! and QN-SPSA, plus the objectives they consume.
//!
//! Every optimizer works on a [`Loss`]. [`Objective`] is the circuit-backed
//! implementation; it evaluates exactly or with shot noise and counts the
//! circuits and shots it would have needed on hardware. Traces record the
//! noise-free loss of each iterate, which is not counted.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::ParameterizedCircuit;
use crate::deriv::{bernoulli, grad_reverse, grad_spsa_sample, psd_project, qgt_reverse, qgt_spsa_sample, EstimatorState, Momentum};
use crate::error::{Error, Result};
use crate::pauli::PauliSum;
use crate::rng::{self, streams};
use crate::solve::{solve_regularized, SolverConfig, SolverMethod};
use crate::state::{multinomial, sampled_expectation, ShotConfig, Statevector};

/// A loss over real parameters with optional geometric information.
pub trait Loss: Sync {
    fn n_params(&self) -> usize;

    /// Estimate used by the optimizer. `key` selects the noise stream, so
    /// equal keys give equal estimates.
    fn value(&self, theta: &[f64], key: u64) -> Result<f64>;

    /// Noise-free value, used for traces.
    fn exact_value(&self, theta: &[f64]) -> Result<f64> {
        self.value(theta, 0)
    }

    fn gradient(&self, theta: &[f64], key: u64) -> Result<Vec<f64>>;

    /// `F(reference, theta)` for the quantum natural gradient methods.
    fn fidelity(&self, _reference: &[f64], _theta: &[f64], _key: u64) -> Result<f64> {
        Err(Error::Unsupported("loss has no state fidelity".into()))
    }

    /// Exact Fubini-Study metric.
    fn metric(&self, _theta: &[f64]) -> Result<DMatrix<f64>> {
        Err(Error::Unsupported("loss has no metric".into()))
    }

    /// Standard error of one `value` estimate.
    fn standard_error(&self, _theta: &[f64]) -> f64 {
        0.0
    }

    /// Circuits and shots spent so far.
    fn counts(&self) -> (u64, u64) {
        (0, 0)
    }
}

/// Closure-backed loss with an explicit gradient.
pub struct FnLoss<F, G> {
    pub n_params: usize,
    pub f: F,
    pub grad: G,
}

impl<F, G> Loss for FnLoss<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn n_params(&self) -> usize {
        self.n_params
    }

    fn value(&self, theta: &[f64], _key: u64) -> Result<f64> {
        Ok((self.f)(theta))
    }

    fn gradient(&self, theta: &[f64], _key: u64) -> Result<Vec<f64>> {
        Ok((self.grad)(theta))
    }
}

pub type BitstringFn = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

/// What a circuit's output state is scored against.
#[derive(Clone)]
pub enum Target {
    Observable(PauliSum),
    /// Mean of a function of the measured basis index.
    Bitstring(BitstringFn),
}

/// Circuit-backed loss with circuit and shot counters.
///
/// Exact gradients are charged as parameter-shift evaluations (two per
/// rotation slot) and exact metrics as Hadamard-test evaluations,
/// `d(d+1)/2 + 2d` circuits.
pub struct Objective {
    circuit: ParameterizedCircuit,
    target: Target,
    shots: Option<u64>,
    seed: u64,
    circuits: AtomicU64,
    shots_used: AtomicU64,
}

impl Objective {
    pub fn new(circuit: ParameterizedCircuit, target: Target, shots: Option<u64>, seed: u64) -> Result<Self> {
        if let Target::Observable(h) = &target {
            if h.n_qubits() != circuit.n_qubits() {
                return Err(Error::DimensionMismatch { expected: circuit.n_qubits(), got: h.n_qubits() });
            }
        }
        if shots == Some(0) {
            return Err(Error::invalid("shot count must be at least 1"));
        }
        Ok(Objective { circuit, target, shots, seed, circuits: AtomicU64::new(0), shots_used: AtomicU64::new(0) })
    }

    pub fn exact(circuit: ParameterizedCircuit, observable: PauliSum) -> Result<Self> {
        Self::new(circuit, Target::Observable(observable), None, 0)
    }

    pub fn circuit(&self) -> &ParameterizedCircuit {
        &self.circuit
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn shots(&self) -> Option<u64> {
        self.shots
    }

    pub fn reset_counts(&self) {
        self.circuits.store(0, Ordering::Relaxed);
        self.shots_used.store(0, Ordering::Relaxed);
    }

    fn charge(&self, circuits: u64) {
        self.circuits.fetch_add(circuits, Ordering::Relaxed);
        if let Some(s) = self.shots {
            self.shots_used.fetch_add(circuits * s, Ordering::Relaxed);
        }
    }

    fn rng(&self, key: u64) -> ChaCha20Rng {
        rng::substream(self.seed, streams::SHOTS, key)
    }

    fn exact_state_value(&self, state: &Statevector) -> Result<f64> {
        match &self.target {
            Target::Observable(h) => state.expectation(h),
            Target::Bitstring(f) => Ok(state.probabilities().iter().enumerate().map(|(x, p)| p * f(x)).sum()),
        }
    }

    fn state_value(&self, state: &Statevector, key: u64) -> Result<f64> {
        match (self.shots, &self.target) {
            (None, Target::Observable(h)) => {
                self.charge(h.qubitwise_groups().len() as u64);
                state.expectation(h)
            }
            (None, Target::Bitstring(_)) => {
                self.charge(1);
                self.exact_state_value(state)
            }
            (Some(s), Target::Observable(h)) => {
                let (v, c) = sampled_expectation(state, h, s, &mut self.rng(key))?;
                self.charge(c);
                Ok(v)
            }
            (Some(s), Target::Bitstring(f)) => {
                self.charge(1);
                Ok(sampled_bitstring_mean(|x| f(x), &state.probabilities(), s, &mut self.rng(key)))
            }
        }
    }

    /// Compute-uncompute fidelity between a prepared reference and the
    /// circuit at `theta`.
    pub fn fidelity_with(&self, reference: &Statevector, theta: &[f64], key: u64) -> Result<f64> {
        self.fidelity_states(reference, &self.circuit.simulate(theta)?, key)
    }

    /// Fidelity of two prepared states, charged as one circuit.
    pub fn fidelity_states(&self, a: &Statevector, b: &Statevector, key: u64) -> Result<f64> {
        self.charge(1);
        let cfg = self.shots.map(|s| ShotConfig { shots: s, seed: rng::child_seed(self.seed, key) });
        crate::state::fidelity(a, b, cfg.as_ref())
    }

    /// Same as [`Loss::value`] on an already prepared state.
    pub fn value_of_state(&self, state: &Statevector, key: u64) -> Result<f64> {
        self.state_value(state, key)
    }

    fn circuits_per_value(&self) -> u64 {
        match &self.target {
            Target::Observable(h) => h.qubitwise_groups().len() as u64,
            Target::Bitstring(_) => 1,
        }
    }
}

impl Loss for Objective {
    fn n_params(&self) -> usize {
        self.circuit.n_params()
    }

    fn value(&self, theta: &[f64], key: u64) -> Result<f64> {
        let state = self.circuit.simulate(theta)?;
        self.state_value(&state, key)
    }

    fn exact_value(&self, theta: &[f64]) -> Result<f64> {
        self.exact_state_value(&self.circuit.simulate(theta)?)
    }

    fn gradient(&self, theta: &[f64], key: u64) -> Result<Vec<f64>> {
        let exp = self.circuit.expand_unique();
        let n_slots = exp.slots.len() as u64;
        if let (None, Target::Observable(h)) = (self.shots, &self.target) {
            self.charge(2 * n_slots * self.circuits_per_value());
            return Ok(grad_reverse(&self.circuit, h, theta)?.energy_gradient());
        }
        self.circuit.check_params(theta)?;
        let slots = exp.slot_values(theta);
        let mut shifted = slots.clone();
        let mut slot_grad = Vec::with_capacity(slots.len());
        for k in 0..slots.len() {
            let mut pair = [0.0; 2];
            for (i, s) in [PI / 2.0, -PI / 2.0].into_iter().enumerate() {
                shifted[k] = slots[k] + s;
                let state = exp.circuit.simulate(&shifted)?;
                pair[i] = self.state_value(&state, rng::child_seed(key, (2 * k + i) as u64))?;
            }
            shifted[k] = slots[k];
            slot_grad.push((pair[0] - pair[1]) / 2.0);
        }
        Ok(exp.contract_vector(&slot_grad))
    }

    fn fidelity(&self, reference: &[f64], theta: &[f64], key: u64) -> Result<f64> {
        self.fidelity_with(&self.circuit.simulate(reference)?, theta, key)
    }

    fn metric(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.circuit.n_params() as u64;
        self.charge(d * (d + 1) / 2 + 2 * d);
        Ok(qgt_reverse(&self.circuit, theta)?.real)
    }

    fn standard_error(&self, theta: &[f64]) -> f64 {
        let Some(s) = self.shots else { return 0.0 };
        let Ok(state) = self.circuit.simulate(theta) else { return 0.0 };
        let var = match &self.target {
            Target::Observable(h) => state.expectation_variance(h).map(|(_, v)| v).unwrap_or(0.0),
            Target::Bitstring(f) => {
                let p = state.probabilities();
                let m: f64 = p.iter().enumerate().map(|(x, p)| p * f(x)).sum();
                p.iter().enumerate().map(|(x, p)| p * (f(x) - m).powi(2)).sum()
            }
        };
        (var / s as f64).sqrt()
    }

    fn counts(&self) -> (u64, u64) {
        (self.circuits.load(Ordering::Relaxed), self.shots_used.load(Ordering::Relaxed))
    }
}

fn sampled_bitstring_mean<F: FnMut(usize) -> f64, R: Rng + ?Sized>(mut f: F, probs: &[f64], shots: u64, rng: &mut R) -> f64 {
    let hist = multinomial(probs, shots, rng);
    hist.iter().map(|(x, n)| *n as f64 * f(*x)).sum::<f64>() / shots as f64
}

/// Sampled mean of `f` over the circuit's output distribution. `f` is
/// called once per distinct measured bitstring.
pub fn blackbox_loss<F, R>(f: F, circuit: &ParameterizedCircuit, theta: &[f64], shots: u64, rng: &mut R) -> Result<f64>
where
    F: FnMut(usize) -> f64,
    R: Rng + ?Sized,
{
    if shots == 0 {
        return Err(Error::invalid("shot count must be at least 1"));
    }
    Ok(sampled_bitstring_mean(f, &circuit.simulate(theta)?.probabilities(), shots, rng))
}

/// Hyperparameters shared by the optimizers.
///
/// Learning rate `eta_k = a (b + k)^-alpha`, perturbation
/// `eps_k = c k^-gamma`, with `k` counting from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub c: f64,
    pub gamma: f64,
    pub iterations: usize,
    /// QGT samples drawn in the first QN-SPSA iteration.
    pub qgt_samples_initial: usize,
    /// QGT samples drawn in every later iteration.
    pub qgt_samples: usize,
    /// Normalized diagonal shift applied to the QN-SPSA metric.
    pub regularization: f64,
    /// Solver for the exact natural gradient.
    pub solver: SolverConfig,
    /// Target first-step magnitude per parameter for SPSA calibration.
    pub calibration_step: f64,
    pub calibration_samples: usize,
    /// Start QN-SPSA from the exact metric instead of the identity.
    pub exact_init: bool,
    /// Reject steps whose re-evaluated loss rises by more than two
    /// standard errors.
    pub blocking: bool,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            a: 0.01,
            b: 0.0,
            alpha: 0.0,
            c: 0.01,
            gamma: 0.0,
            iterations: 100,
            qgt_samples_initial: 100,
            qgt_samples: 2,
            regularization: 1e-3,
            solver: SolverConfig::diag_shift(),
            calibration_step: PI / 5.0,
            calibration_samples: 25,
            exact_init: false,
            blocking: false,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    /// Constant learning rate and perturbation.
    pub fn fixed(eta: f64, eps: f64, iterations: usize) -> Self {
        OptimizerConfig { a: eta, c: eps, iterations, ..Default::default() }
    }

    /// Power-law decays with the standard SPSA exponents.
    pub fn decaying(a: f64, c: f64, iterations: usize) -> Self {
        OptimizerConfig { a, c, alpha: 0.602, gamma: 0.101, iterations, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || !(self.c > 0.0) || !self.a.is_finite() || !self.c.is_finite() {
            return Err(Error::invalid("learning-rate and perturbation scales must be positive"));
        }
        if !(self.alpha >= 0.0) || !(self.gamma >= 0.0) || !(self.b >= 0.0) {
            return Err(Error::invalid("decay rates and offset must be non-negative"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iteration budget must be at least 1"));
        }
        if self.qgt_samples == 0 || self.qgt_samples_initial == 0 || self.calibration_samples == 0 {
            return Err(Error::invalid("sample counts must be at least 1"));
        }
        if !(self.regularization > 0.0) {
            return Err(Error::invalid("regularization must be positive"));
        }
        self.solver.validate()
    }

    pub fn learning_rate(&self, k: usize) -> f64 {
        self.a * (self.b + k as f64).powf(-self.alpha)
    }

    pub fn perturbation(&self, k: usize) -> f64 {
        self.c * (k as f64).powf(-self.gamma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptRecord {
    pub k: usize,
    pub loss: f64,
    pub circuits: u64,
    pub shots: u64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizationTrace {
    /// Iterate `0` is the starting point.
    pub records: Vec<OptRecord>,
    /// Learning-rate scale chosen by SPSA calibration.
    pub calibrated_a: Option<f64>,
    /// Steps rejected by the blocking rule.
    pub rejected: usize,
}

impl OptimizationTrace {
    pub fn final_theta(&self) -> &[f64] {
        &self.records.last().expect("trace holds the starting point").theta
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().expect("trace holds the starting point").loss
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Circuits spent when the loss first drops to `target` or below.
    pub fn circuits_to_reach(&self, target: f64) -> Option<u64> {
        self.records.iter().find(|r| r.loss <= target).map(|r| r.circuits)
    }

    pub fn to_csv(&self) -> String {
        let d = self.records.first().map_or(0, |r| r.theta.len());
        let mut out = String::from("k,loss,circuits,shots");
        for j in 0..d {
            out.push_str(&format!(",theta_{j}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}", r.k, fmt17(r.loss), r.circuits, r.shots));
            for t in &r.theta {
                out.push(',');
                out.push_str(&fmt17(*t));
            }
            out.push('\n');
        }
        out
    }
}

/// Seventeen significant digits, enough to round-trip a binary64.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Noise key for evaluation `index` of kind `kind` in iteration `k`.
fn key(k: usize, kind: u64, index: usize) -> u64 {
    rng::child_seed(rng::child_seed(k as u64, kind), index as u64)
}

const KIND_GRAD: u64 = 1;
const KIND_QGT: u64 = 2;
const KIND_BLOCK: u64 = 3;
const KIND_CALIBRATE: u64 = 4;

struct Runner<'a, L: Loss + ?Sized> {
    loss: &'a L,
    config: &'a OptimizerConfig,
    trace: OptimizationTrace,
    theta: Vec<f64>,
}

impl<'a, L: Loss + ?Sized> Runner<'a, L> {
    fn new(loss: &'a L, theta0: &[f64], config: &'a OptimizerConfig) -> Result<Self> {
        config.validate()?;
        if theta0.len() != loss.n_params() {
            return Err(Error::DimensionMismatch { expected: loss.n_params(), got: theta0.len() });
        }
        let mut r = Runner { loss, config, trace: OptimizationTrace::default(), theta: theta0.to_vec() };
        r.record(0)?;
        Ok(r)
    }

    fn record(&mut self, k: usize) -> Result<()> {
        let loss = self.loss.exact_value(&self.theta)?;
        if !loss.is_finite() {
            return Err(Error::numerical(format!("loss became {loss} at iteration {k}")));
        }
        let (circuits, shots) = self.loss.counts();
        self.trace.records.push(OptRecord { k, loss, circuits, shots, theta: self.theta.clone() });
        Ok(())
    }

    fn spsa_gradient(&self, k: usize, eps: f64) -> Result<Vec<f64>> {
        let delta = bernoulli(self.theta.len(), &mut rng::substream(self.config.seed, streams::SPSA_GRAD, k as u64));
        let mut i = 0;
        grad_spsa_sample(
            |x| {
                i += 1;
                self.loss.value(x, key(k, KIND_GRAD, i))
            },
            &self.theta,
            eps,
            &delta,
        )
    }

    /// Takes the step `theta - eta * direction`, subject to the blocking
    /// rule, and records the iterate.
    fn step(&mut self, k: usize, eta: f64, direction: &[f64]) -> Result<()> {
        if direction.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite update at iteration {k}")));
        }
        let candidate: Vec<f64> = self.theta.iter().zip(direction).map(|(t, g)| t - eta * g).collect();
        if candidate.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("parameters became non-finite at iteration {k}")));
        }
        let accept = if self.config.blocking {
            let old = self.loss.value(&self.theta, key(k, KIND_BLOCK, 0))?;
            let new = self.loss.value(&candidate, key(k, KIND_BLOCK, 1))?;
            new <= old + 2.0 * self.loss.standard_error(&self.theta)
        } else {
            true
        };
        if accept {
            self.theta = candidate;
        } else {
            self.trace.rejected += 1;
        }
        self.record(k)
    }
}

/// `theta <- theta - eta_k grad L`.
pub fn run_gd<L: Loss + ?Sized>(loss: &L, theta0: &[f64], config: &OptimizerConfig) -> Result<OptimizationTrace> {
    let mut r = Runner::new(loss, theta0, config)?;
    for k in 1..=config.iterations {
        let g = loss.gradient(&r.theta, key(k, KIND_GRAD, 0))?;
        r.step(k, config.learning_rate(k), &g)?;
    }
    Ok(r.trace)
}

/// First-order SPSA with one gradient sample per iteration. With
/// `calibrate`, the learning-rate scale is set so that the first step moves
/// each parameter by about `calibration_step`.
pub fn run_spsa<L: Loss + ?Sized>(loss: &L, theta0: &[f64], config: &OptimizerConfig, calibrate: bool) -> Result<OptimizationTrace> {
    let mut cfg = config.clone();
    let mut calibrated = None;
    if calibrate {
        cfg.validate()?;
        let d = theta0.len();
        let eps = cfg.perturbation(1);
        let mut mean = vec![0.0; d];
        for j in 0..cfg.calibration_samples {
            let delta = bernoulli(d, &mut rng::substream(cfg.seed, streams::SPSA_GRAD, key(0, KIND_CALIBRATE, j)));
            let mut i = 0;
            let g = grad_spsa_sample(
                |x| {
                    i += 1;
                    loss.value(x, key(j, KIND_CALIBRATE, i))
                },
                theta0,
                eps,
                &delta,
            )?;
            mean.iter_mut().zip(&g).for_each(|(m, v)| *m += v / cfg.calibration_samples as f64);
        }
        let l1: f64 = mean.iter().map(|v| v.abs()).sum();
        if l1 > 0.0 && l1.is_finite() {
            cfg.a = cfg.calibration_step * d as f64 / l1 * (cfg.b + 1.0).powf(cfg.alpha);
            calibrated = Some(cfg.a);
        }
    }
    let mut r = Runner::new(loss, theta0, &cfg)?;
    r.trace.calibrated_a = calibrated;
    for k in 1..=cfg.iterations {
        let g = r.spsa_gradient(k, cfg.perturbation(k))?;
        r.step(k, cfg.learning_rate(k), &g)?;
    }
    Ok(r.trace)
}

/// `theta <- theta - eta_k g^-1 grad L` with the exact metric.
pub fn run_qng<L: Loss + ?Sized>(loss: &L, theta0: &[f64], config: &OptimizerConfig) -> Result<OptimizationTrace> {
    let mut r = Runner::new(loss, theta0, config)?;
    for k in 1..=config.iterations {
        let g = loss.gradient(&r.theta, key(k, KIND_GRAD, 0))?;
        let metric = loss.metric(&r.theta)?;
        let x = solve_regularized(&metric, &g, &config.solver)?;
        r.step(k, config.learning_rate(k), &x)?;
    }
    Ok(r.trace)
}

/// QN-SPSA: one gradient sample and several four-fidelity metric samples per
/// iteration, averaged over all iterations, made positive semi-definite and
/// regularized by a normalized diagonal shift.
pub fn run_qnspsa<L: Loss + ?Sized>(loss: &L, theta0: &[f64], config: &OptimizerConfig) -> Result<OptimizationTrace> {
    let mut r = Runner::new(loss, theta0, config)?;
    let d = theta0.len();
    let mut est = if config.exact_init {
        EstimatorState::with_initial(loss.metric(theta0)?, vec![0.0; d], Momentum::GlobalAverage, Momentum::GlobalAverage)?
    } else {
        EstimatorState::new(d, Momentum::GlobalAverage, Momentum::GlobalAverage)?
    };
    let solver = SolverConfig::new(SolverMethod::NormalizedDiagShift, config.regularization)?;
    for k in 1..=config.iterations {
        let eps = config.perturbation(k);
        let g = r.spsa_gradient(k, eps)?;
        let m = if k == 1 { config.qgt_samples_initial } else { config.qgt_samples };
        let theta = &r.theta;
        let samples = (0..m)
            .into_par_iter()
            .map(|j| {
                let mut dir = rng::substream(config.seed, streams::SPSA_QGT, key(k, KIND_QGT, j));
                let (d1, d2) = (bernoulli(d, &mut dir), bernoulli(d, &mut dir));
                let mut i = 0;
                qgt_spsa_sample(
                    |x| {
                        i += 1;
                        loss.fidelity(theta, x, key(k, KIND_QGT, 4 * j + i))
                    },
                    theta,
                    eps,
                    &d1,
                    &d2,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        est.update(&samples, &[])?;
        let metric = est.projected_g();
        debug_assert!(crate::deriv::symmetrize(&metric) == metric);
        let x = solve_regularized(&metric, &g, &solver)?;
        r.step(k, config.learning_rate(k), &x)?;
    }
    Ok(r.trace)
}

/// Smallest eigenvalue of a symmetric matrix; used to check estimators.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    nalgebra::SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Projects onto the PSD cone and returns the result with its smallest
/// eigenvalue.
pub fn project_checked(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let p = psd_project(m);
    let l = min_eigenvalue(&p);
    (p, l)
}

/// Mean and standard error of a sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{pauli_two_design, qaoa, x_mixer};
    use crate::pauli::Graph;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bowl(curv: [f64; 2]) -> FnLoss<impl Fn(&[f64]) -> f64 + Sync, impl Fn(&[f64]) -> Vec<f64> + Sync> {
        FnLoss {
            n_params: 2,
            f: move |x: &[f64]| 0.5 * (curv[0] * x[0] * x[0] + curv[1] * x[1] * x[1]),
            grad: move |x: &[f64]| vec![curv[0] * x[0], curv[1] * x[1]],
        }
    }

    fn qaoa_problem(h: &PauliSum) -> Objective {
        Objective::exact(qaoa(h, &x_mixer(3), 1).unwrap(), h.clone()).unwrap()
    }

    #[test]
    fn gd_decreases_quadratic() {
        let t = run_gd(&bowl([1.0, 3.0]), &[1.0, -2.0], &OptimizerConfig::fixed(0.3, 0.01, 50)).unwrap();
        assert!(t.losses().windows(2).all(|w| w[1] <= w[0]));
        assert!(t.final_loss() < 1e-8);
    }

    #[test]
    fn spsa_constant_loss_does_not_move() {
        let f = FnLoss { n_params: 3, f: |_: &[f64]| 4.0, grad: |_: &[f64]| vec![0.0; 3] };
        let t = run_spsa(&f, &[0.1, 0.2, 0.3], &OptimizerConfig::fixed(0.1, 0.1, 20), false).unwrap();
        assert_eq!(t.final_theta(), &[0.1, 0.2, 0.3]);
        let t = run_spsa(&f, &[0.1, 0.2, 0.3], &OptimizerConfig::fixed(0.1, 0.1, 5), true).unwrap();
        assert_eq!(t.calibrated_a, None);
    }

    #[test]
    fn spsa_counts_two_evaluations_per_iteration() {
        let h = PauliSum::from_labels(&[(1.0, "ZZI"), (1.0, "ZIZ")]).unwrap();
        let obj = qaoa_problem(&h);
        let t = run_spsa(&obj, &[0.2, 0.3], &OptimizerConfig::fixed(0.05, 0.05, 7), false).unwrap();
        for (i, r) in t.records.iter().enumerate() {
            assert_eq!(r.circuits, 2 * i as u64);
        }
    }

    #[test]
    fn spsa_calibration_sets_first_step() {
        let h = PauliSum::from_labels(&[(1.0, "ZZI"), (1.0, "ZIZ")]).unwrap();
        let obj = qaoa_problem(&h);
        let cfg = OptimizerConfig { c: 0.2, ..OptimizerConfig::decaying(1.0, 0.2, 1) };
        let t = run_spsa(&obj, &[0.2, 0.3], &cfg, true).unwrap();
        let a = t.calibrated_a.unwrap();
        assert!(a > 0.0);
        assert_eq!(t.records[0].circuits, 50);
    }

    #[test]
    fn qng_on_isotropic_model_matches_scaled_gd() {
        // One R_Y per qubit has metric I/4.
        let mut c = ParameterizedCircuit::new(2, 2);
        c.push_param(0, crate::pauli::Pauli::Y, 0).unwrap();
        c.push_param(1, crate::pauli::Pauli::Y, 1).unwrap();
        let h = PauliSum::from_labels(&[(1.0, "ZI"), (0.5, "IZ")]).unwrap();
        let obj = Objective::exact(c, h).unwrap();
        let cfg = OptimizerConfig { solver: SolverConfig::new(SolverMethod::DiagShift, 1e-12).unwrap(), ..OptimizerConfig::fixed(0.05, 0.01, 10) };
        let q = run_qng(&obj, &[0.4, 1.0], &cfg).unwrap();
        let g = run_gd(&obj, &[0.4, 1.0], &OptimizerConfig::fixed(0.2, 0.01, 10)).unwrap();
        for (a, b) in q.final_theta().iter().zip(g.final_theta()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn qng_beats_gd_on_skewed_landscape() {
        let h_b = PauliSum::from_labels(&[(1.0, "IZZ"), (1.0, "ZIZ"), (-2.0, "ZZI")]).unwrap();
        let obj = qaoa_problem(&h_b);
        let theta0 = [0.1, 0.9];
        let gd = run_gd(&obj, &theta0, &OptimizerConfig::fixed(0.6, 0.01, 200)).unwrap();
        let qng = run_qng(&obj, &theta0, &OptimizerConfig::fixed(0.1, 0.01, 200)).unwrap();
        assert!(qng.final_loss() < gd.final_loss());
    }

    #[test]
    fn qnspsa_counts_and_large_regularization() {
        let c = pauli_two_design(3, 1, 5).unwrap();
        let h = PauliSum::from_labels(&[(1.0, "ZZI")]).unwrap();
        let obj = Objective::exact(c.clone(), h.clone()).unwrap();
        let theta0 = vec![0.3; c.n_params()];
        let cfg = OptimizerConfig { qgt_samples_initial: 3, qgt_samples: 2, ..OptimizerConfig::fixed(0.05, 0.05, 4) };
        let t = run_qnspsa(&obj, &theta0, &cfg).unwrap();
        assert_eq!(t.records[1].circuits, 2 + 4 * 3);
        assert_eq!(t.records[4].circuits, 14 + 3 * (2 + 4 * 2));
        // Huge shift: QN-SPSA reduces to SPSA with the same directions.
        let big = OptimizerConfig { regularization: 1e12, ..cfg.clone() };
        let a = run_qnspsa(&Objective::exact(c.clone(), h.clone()).unwrap(), &theta0, &big).unwrap();
        let b = run_spsa(&Objective::exact(c, h).unwrap(), &theta0, &big, false).unwrap();
        for (x, y) in a.final_theta().iter().zip(b.final_theta()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn runs_are_deterministic_under_threads() {
        let c = pauli_two_design(3, 1, 5).unwrap();
        let h = PauliSum::from_labels(&[(1.0, "ZZI")]).unwrap();
        let run = || {
            let obj = Objective::new(c.clone(), Target::Observable(h.clone()), Some(256), 9).unwrap();
            let cfg = OptimizerConfig { qgt_samples_initial: 16, seed: 3, ..OptimizerConfig::fixed(0.05, 0.05, 5) };
            run_qnspsa(&obj, &vec![0.3; c.n_params()], &cfg).unwrap().to_csv()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn blackbox_loss_cases() {
        let mut c = ParameterizedCircuit::new(4, 0);
        for q in 0..4 {
            c.push_gate(crate::state::Gate::H(q)).unwrap();
        }
        let mut r = rng::stream(1, "test");
        assert_eq!(blackbox_loss(|_| 2.5, &c, &[], 1000, &mut r).unwrap(), 2.5);
        let mut calls = 0;
        let v = blackbox_loss(
            |x| {
                calls += 1;
                x.count_ones() as f64
            },
            &c,
            &[],
            200_000,
            &mut r,
        )
        .unwrap();
        assert!(calls <= 16);
        assert!((v - 2.0).abs() < 0.01);
    }

    #[test]
    fn qnspsa_finds_ring_maxcut() {
        let g = Graph::ring(8).unwrap();
        let cost = g.clone();
        let f: BitstringFn = Arc::new(move |x| -cost.cut_value(x));
        let h = crate::pauli::build_model(&crate::pauli::Model::MaxCut(g.clone()), &crate::pauli::Topology::Line).unwrap();
        let circuit = qaoa(&h, &x_mixer(8), 2).unwrap();
        let obj = Objective::new(circuit.clone(), Target::Bitstring(f), Some(1024), 2).unwrap();
        let cfg = OptimizerConfig { qgt_samples_initial: 20, seed: 4, ..OptimizerConfig::fixed(0.05, 0.05, 60) };
        let t = run_qnspsa(&obj, &[0.3, 0.4, 0.3, 0.4], &cfg).unwrap();
        let probs = circuit.simulate(t.final_theta()).unwrap().probabilities();
        let best = (0..probs.len()).max_by(|a, b| probs[*a].total_cmp(&probs[*b])).unwrap();
        let (opt, _) = g.optimal_cuts();
        assert_eq!(g.cut_value(best), opt);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn counters_are_monotone(seed in 0u64..100) {
            let c = pauli_two_design(2, 1, seed).unwrap();
            let h = PauliSum::from_labels(&[(1.0, "ZZ")]).unwrap();
            let obj = Objective::new(c.clone(), Target::Observable(h), Some(64), seed).unwrap();
            let cfg = OptimizerConfig { qgt_samples_initial: 2, seed, ..OptimizerConfig::fixed(0.1, 0.1, 6) };
            let t = run_qnspsa(&obj, &vec![0.2; c.n_params()], &cfg).unwrap();
            for w in t.records.windows(2) {
                prop_assert!(w[1].circuits >= w[0].circuits && w[1].shots >= w[0].shots);
            }
        }
    }
}
