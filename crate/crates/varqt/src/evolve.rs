//! Variational real and imaginary time evolution with forward-Euler steps.
//!
//! Three engines share the trace format:
//! - `Varqte` solves the McLachlan system `g theta_dot = b` each step.
//! - `Saqite` replaces `g` and `b` with momentum-averaged SPSA samples
//!   (imaginary time only).
//! - `Dualqte` finds the step by minimizing an infidelity-based loss with
//!   gradient descent instead of forming `g`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::ParameterizedCircuit;
use crate::deriv::{
    bernoulli, evolution_gradient_spsa, evolution_terms, hessian_from_fidelity, qgt_reverse, qgt_spsa_sample, EstimatorState, EvolutionMode,
    Momentum,
};
use crate::error::{Error, Result};
use crate::optimize::{fmt17, Loss, Objective, Target};
use crate::oracle::Propagator;
use crate::pauli::PauliSum;
use crate::rng::{self, streams};
use crate::solve::{solve_regularized, SolverConfig};
use crate::state::Statevector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaqiteConfig {
    /// QGT and gradient samples per step.
    pub samples: usize,
    pub tau_g: f64,
    pub tau_b: f64,
    /// Start the estimators from exact values instead of `g = 1, b = 0`.
    pub exact_init: bool,
    pub epsilon: f64,
}

impl Default for SaqiteConfig {
    fn default() -> Self {
        SaqiteConfig { samples: 10, tau_g: 0.99, tau_b: 0.0, exact_init: true, epsilon: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualConfig {
    /// Time perturbation of the inner loss.
    pub delta_tau: f64,
    pub learning_rate: f64,
    /// Inner iterations in the first step.
    pub initial_iterations: usize,
    /// Inner iterations in later steps.
    pub iterations: usize,
    /// Start each inner loop from the previous solution.
    pub warmstart: bool,
    /// Stop the inner loop once the loss changes by less than this.
    pub tolerance: Option<f64>,
}

impl Default for DualConfig {
    fn default() -> Self {
        DualConfig { delta_tau: 0.01, learning_rate: 0.1, initial_iterations: 100, iterations: 10, warmstart: true, tolerance: None }
    }
}

impl DualConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_tau > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::invalid("dual time perturbation and learning rate must be positive"));
        }
        if self.iterations == 0 || self.initial_iterations < self.iterations {
            return Err(Error::invalid("dual iteration budgets need initial >= steady >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Engine {
    Varqte,
    Saqite(SaqiteConfig),
    Dualqte(DualConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub mode: EvolutionMode,
    pub total_time: f64,
    pub dt: f64,
    pub engine: Engine,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Shots per circuit; `None` evaluates exactly.
    #[serde(default)]
    pub shots: Option<u64>,
    #[serde(default)]
    pub seed: u64,
}

impl EvolutionConfig {
    pub fn new(mode: EvolutionMode, total_time: f64, dt: f64, engine: Engine) -> Self {
        EvolutionConfig { mode, total_time, dt, engine, solver: SolverConfig::default(), shots: None, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.dt <= self.total_time * (1.0 + 1e-12)) || !self.total_time.is_finite() {
            return Err(Error::invalid("timestep must satisfy 0 < dt <= T"));
        }
        if self.shots == Some(0) {
            return Err(Error::invalid("shot count must be at least 1"));
        }
        self.solver.validate()?;
        match &self.engine {
            Engine::Varqte => Ok(()),
            Engine::Saqite(s) => {
                if self.mode == EvolutionMode::Real {
                    return Err(Error::Unsupported("sampled evolution runs in imaginary time only".into()));
                }
                if s.samples == 0 || !(s.epsilon > 0.0) {
                    return Err(Error::invalid("saqite needs samples >= 1 and a positive perturbation"));
                }
                for t in [s.tau_g, s.tau_b] {
                    if !(0.0..=1.0).contains(&t) {
                        return Err(Error::invalid(format!("momentum {t} outside [0, 1]")));
                    }
                }
                Ok(())
            }
            Engine::Dualqte(d) => d.validate(),
        }
    }

    pub fn steps(&self) -> usize {
        (self.total_time / self.dt).round().max(1.0) as usize
    }
}

/// State of the evolution at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionStep {
    pub t: f64,
    pub theta: Vec<f64>,
    pub energy: f64,
    pub variance: Option<f64>,
    /// Parameter velocity used to leave this time.
    pub theta_dot: Option<Vec<f64>>,
    /// McLachlan residual rate of that velocity.
    pub residual: Option<f64>,
    /// Inner-loop iterations of the dual engine.
    pub inner_iterations: Option<usize>,
    /// Bures distance to a reference, once attached.
    pub bures: Option<f64>,
    /// Circuits and shots spent up to leaving this time.
    #[serde(default)]
    pub circuits: u64,
    #[serde(default)]
    pub shots: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionTrace {
    pub mode: EvolutionMode,
    pub dt: f64,
    pub steps: Vec<EvolutionStep>,
}

impl EvolutionTrace {
    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.t).collect()
    }

    pub fn final_theta(&self) -> &[f64] {
        &self.steps.last().expect("trace holds the initial point").theta
    }

    pub fn energies(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.energy).collect()
    }

    /// Writes Bures distances into the steps.
    pub fn attach_metrics(&mut self, metrics: &Metrics) -> Result<()> {
        if metrics.bures.len() != self.steps.len() {
            return Err(Error::DimensionMismatch { expected: self.steps.len(), got: metrics.bures.len() });
        }
        for (s, d) in self.steps.iter_mut().zip(&metrics.bures) {
            s.bures = Some(*d);
        }
        Ok(())
    }

    /// CSV with columns `t, theta_*, energy, variance, D_B, bound`. Missing
    /// values are left empty; the bound column is filled whenever residuals
    /// are present.
    pub fn to_csv(&self) -> String {
        let d = self.steps.first().map_or(0, |s| s.theta.len());
        let mut out = String::from("t");
        for j in 0..d {
            out.push_str(&format!(",theta_{j}"));
        }
        out.push_str(",energy,variance,D_B,bound\n");
        let bound = realtime_error_bound(self).ok();
        let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
        for (k, s) in self.steps.iter().enumerate() {
            out.push_str(&fmt17(s.t));
            for t in &s.theta {
                out.push(',');
                out.push_str(&fmt17(*t));
            }
            let b = bound.as_ref().map(|b| b[k]);
            out.push_str(&format!(",{},{},{},{}\n", fmt17(s.energy), opt(s.variance), opt(s.bures), opt(b)));
        }
        out
    }
}

/// Bures distances of a trace against reference states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub fidelity: Vec<f64>,
    pub bures: Vec<f64>,
    /// Time average of the Bures distance.
    pub integrated_bures: f64,
}

/// `sqrt(2 (1 - |<a|b>|))`.
pub fn bures_distance(a: &Statevector, b: &Statevector) -> Result<f64> {
    let overlap = a.inner(b)?.norm().min(1.0);
    Ok((2.0 * (1.0 - overlap)).max(0.0).sqrt())
}

/// Trapezoidal time average of a series sampled at `times`.
pub fn time_average(times: &[f64], values: &[f64]) -> f64 {
    let span = times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0);
    if times.len() < 2 || span <= 0.0 {
        return values.first().copied().unwrap_or(0.0);
    }
    let area: f64 = times.windows(2).zip(values.windows(2)).map(|(t, v)| (t[1] - t[0]) * (v[0] + v[1]) / 2.0).sum();
    area / span
}

pub fn bures_metrics(trace: &EvolutionTrace, circuit: &ParameterizedCircuit, reference: &[Statevector]) -> Result<Metrics> {
    if reference.len() != trace.steps.len() {
        return Err(Error::invalid(format!("reference has {} states for {} trace times", reference.len(), trace.steps.len())));
    }
    let mut fidelity = Vec::with_capacity(reference.len());
    let mut bures = Vec::with_capacity(reference.len());
    for (s, r) in trace.steps.iter().zip(reference) {
        let phi = circuit.simulate(&s.theta)?;
        fidelity.push(phi.inner(r)?.norm_sqr().min(1.0));
        bures.push(bures_distance(&phi, r)?);
    }
    let integrated_bures = time_average(&trace.times(), &bures);
    Ok(Metrics { fidelity, bures, integrated_bures })
}

/// Exact evolved states at the trace times, starting from `psi0`.
pub fn exact_reference(h: &PauliSum, psi0: &Statevector, times: &[f64], mode: EvolutionMode) -> Result<Vec<Statevector>> {
    let p = Propagator::new(h)?;
    times
        .iter()
        .map(|&t| match mode {
            EvolutionMode::Real => p.real(psi0, t),
            EvolutionMode::Imaginary => p.imag(psi0, t),
        })
        .collect()
}

/// Accumulated bound `sum dt sqrt(residual)` at every trace time. It bounds
/// the Bures distance of the variational state to the exact one.
pub fn realtime_error_bound(trace: &EvolutionTrace) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(trace.steps.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in trace.steps.windows(2) {
        let r = w[0].residual.ok_or_else(|| Error::invalid("trace step lacks a residual rate"))?;
        acc += (w[1].t - w[0].t) * r.max(0.0).sqrt();
        out.push(acc);
    }
    Ok(out)
}

/// Residual rate `Var(H) + v^T g v - 2 v^T b` of a velocity `v`.
pub fn mclachlan_residual(g: &DMatrix<f64>, b: &[f64], v: &[f64], variance: f64) -> f64 {
    let v_vec = DVector::from_column_slice(v);
    let quad = v_vec.dot(&(g * &v_vec));
    let lin: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
    variance + quad - 2.0 * lin
}

struct Context<'a> {
    circuit: &'a ParameterizedCircuit,
    h: &'a PauliSum,
    config: &'a EvolutionConfig,
    objective: Option<Objective>,
}

impl<'a> Context<'a> {
    fn new(circuit: &'a ParameterizedCircuit, h: &'a PauliSum, theta0: &[f64], config: &'a EvolutionConfig) -> Result<Self> {
        config.validate()?;
        circuit.check_params(theta0)?;
        if h.n_qubits() != circuit.n_qubits() {
            return Err(Error::DimensionMismatch { expected: circuit.n_qubits(), got: h.n_qubits() });
        }
        let objective = match config.shots {
            Some(s) => {
                if config.mode == EvolutionMode::Real {
                    return Err(Error::Unsupported("sampled evolution runs in imaginary time only".into()));
                }
                Some(Objective::new(circuit.clone(), Target::Observable(h.clone()), Some(s), rng::child_seed(config.seed, 1))?)
            }
            None => None,
        };
        Ok(Context { circuit, h, config, objective })
    }

    /// Step record at `theta` with exact diagnostics.
    fn record(&self, t: f64, theta: &[f64]) -> Result<EvolutionStep> {
        let state = self.circuit.simulate(theta)?;
        let (energy, variance) = state.expectation_variance(self.h)?;
        Ok(EvolutionStep {
            t,
            theta: theta.to_vec(),
            energy,
            variance: Some(variance),
            theta_dot: None,
            residual: None,
            inner_iterations: None,
            bures: None,
            circuits: 0,
            shots: 0,
        })
    }

    /// Runs the Euler loop; `velocity` fills in the step's velocity and
    /// diagnostics.
    fn run<F>(&self, theta0: &[f64], counter: Option<&Objective>, mut velocity: F) -> Result<EvolutionTrace>
    where
        F: FnMut(usize, &mut EvolutionStep) -> Result<()>,
    {
        let counter = counter.or(self.objective.as_ref());
        let n = self.config.steps();
        let dt = self.config.dt;
        let mut theta = theta0.to_vec();
        let mut steps = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let mut rec = self.record(k as f64 * dt, &theta)?;
            if k < n {
                velocity(k, &mut rec)?;
                if let Some(obj) = counter {
                    (rec.circuits, rec.shots) = obj.counts();
                }
                let v = rec.theta_dot.as_ref().expect("velocity set");
                theta.iter_mut().zip(v).for_each(|(t, v)| *t += dt * v);
                if theta.iter().any(|t| !t.is_finite()) {
                    return Err(Error::numerical(format!("parameters became non-finite at step {k}")));
                }
            }
            steps.push(rec);
        }
        Ok(EvolutionTrace { mode: self.config.mode, dt, steps })
    }

    /// `g` and `b` at `theta`, exact or sampled by parameter shifts.
    fn system(&self, theta: &[f64], key: u64) -> Result<(DMatrix<f64>, Vec<f64>)> {
        match &self.objective {
            None => {
                let g = qgt_reverse(self.circuit, theta)?.real;
                let terms = evolution_terms(self.circuit, self.h, theta, self.config.mode)?;
                Ok((g, terms.b))
            }
            Some(obj) => {
                if !self.circuit.has_unique_parameters() {
                    return Err(Error::Unsupported("sampled metrics need one rotation per parameter".into()));
                }
                let b: Vec<f64> = obj.gradient(theta, key)?.iter().map(|g| -0.5 * g).collect();
                let reference = self.circuit.simulate(theta)?;
                let mut i = 0;
                let (g, _) = hessian_from_fidelity(
                    |x| {
                        i += 1;
                        obj.fidelity_with(&reference, x, rng::child_seed(key, i))
                    },
                    theta,
                    std::f64::consts::FRAC_PI_2,
                )?;
                Ok((g, b))
            }
        }
    }
}

/// Evolution by the McLachlan principle: each step solves
/// `g theta_dot = b` and moves `theta` by `dt theta_dot`.
pub fn varqte_evolve(circuit: &ParameterizedCircuit, h: &PauliSum, theta0: &[f64], config: &EvolutionConfig) -> Result<EvolutionTrace> {
    let ctx = Context::new(circuit, h, theta0, config)?;
    ctx.run(theta0, None, |k, rec| {
        let (g, b) = ctx.system(&rec.theta, k as u64)?;
        let v = solve_regularized(&g, &b, &config.solver)?;
        rec.residual = Some(mclachlan_residual(&g, &b, &v, rec.variance.unwrap_or(0.0)));
        rec.theta_dot = Some(v);
        Ok(())
    })
}

/// Stochastic imaginary-time evolution: `samples` SPSA draws of `g` and `b`
/// per step feed momentum estimators, solved on the PSD projection.
pub fn saqite_evolve(circuit: &ParameterizedCircuit, h: &PauliSum, theta0: &[f64], config: &EvolutionConfig) -> Result<EvolutionTrace> {
    let Engine::Saqite(sa) = &config.engine else {
        return Err(Error::invalid("saqite_evolve needs a saqite engine config"));
    };
    let ctx = Context::new(circuit, h, theta0, config)?;
    let exact = Objective::exact(circuit.clone(), h.clone())?;
    let obj = ctx.objective.as_ref().unwrap_or(&exact);
    let d = theta0.len();
    let (tg, tb) = (Momentum::Fixed(sa.tau_g), Momentum::Fixed(sa.tau_b));
    let mut est = if sa.exact_init {
        let g = obj.metric(theta0)?;
        let b = evolution_terms(circuit, h, theta0, EvolutionMode::Imaginary)?.b;
        EstimatorState::with_initial(g, b, tg, tb)?
    } else {
        EstimatorState::new(d, tg, tb)?
    };
    ctx.run(theta0, Some(obj), |k, rec| {
        let theta = rec.theta.clone();
        let reference = circuit.simulate(&theta)?;
        let samples = (0..sa.samples)
            .into_par_iter()
            .map(|j| {
                let index = rng::child_seed(k as u64, j as u64);
                let mut qr = rng::substream(config.seed, streams::SPSA_QGT, index);
                let (d1, d2) = (bernoulli(d, &mut qr), bernoulli(d, &mut qr));
                let d3 = bernoulli(d, &mut rng::substream(config.seed, streams::SPSA_GRAD, index));
                let mut i = 0;
                let g = qgt_spsa_sample(
                    |x| {
                        i += 1;
                        obj.fidelity_with(&reference, x, rng::child_seed(index, i))
                    },
                    &theta,
                    sa.epsilon,
                    &d1,
                    &d2,
                )?;
                let b = evolution_gradient_spsa(
                    |x| {
                        i += 1;
                        obj.value(x, rng::child_seed(index, i))
                    },
                    &theta,
                    sa.epsilon,
                    &d3,
                    EvolutionMode::Imaginary,
                )?;
                Ok((g, b))
            })
            .collect::<Result<Vec<_>>>()?;
        let (gs, bs): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
        est.update(&gs, &bs)?;
        let g = est.projected_g();
        let v = solve_regularized(&g, &est.b, &config.solver)?;
        rec.residual = Some(mclachlan_residual(&g, &est.b, &v, rec.variance.unwrap_or(0.0)));
        rec.theta_dot = Some(v);
        Ok(())
    })
}

/// Outcome of one inner minimization of the dual loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DualStep {
    pub delta: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
}

/// Minimizes `(1 - F(theta, theta + delta)) / 2 - delta_tau delta . b` by
/// gradient descent with parameter-shift fidelity gradients, starting from
/// `start`, for at most `budget` iterations. `fidelity` evaluates
/// `|<a|b>|^2`, exactly or sampled.
pub fn dual_step(
    circuit: &ParameterizedCircuit,
    theta: &[f64],
    b: &[f64],
    config: &DualConfig,
    start: &[f64],
    budget: usize,
    fidelity: &dyn Fn(&Statevector, &Statevector, u64) -> Result<f64>,
    key: u64,
) -> Result<DualStep> {
    config.validate()?;
    circuit.check_params(theta)?;
    let reference = circuit.simulate(theta)?;
    let exp = circuit.expand_unique();
    let mut delta = start.to_vec();
    let mut calls = 0u64;
    let mut next_key = || {
        calls += 1;
        rng::child_seed(key, calls)
    };
    let loss_at = |delta: &[f64], f: f64| (1.0 - f) / 2.0 - config.delta_tau * delta.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let point = |delta: &[f64]| -> Vec<f64> { theta.iter().zip(delta).map(|(t, d)| t + d).collect() };
    let mut loss = loss_at(&delta, fidelity(&reference, &circuit.simulate(&point(&delta))?, next_key())?);
    let mut increases = 0;
    let mut iterations = 0;
    while iterations < budget {
        iterations += 1;
        let slots = exp.slot_values(&point(&delta));
        let mut shifted = slots.clone();
        let mut slot_grad = Vec::with_capacity(slots.len());
        for s in 0..slots.len() {
            let mut pair = [0.0; 2];
            for (i, shift) in [std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2].into_iter().enumerate() {
                shifted[s] = slots[s] + shift;
                pair[i] = fidelity(&reference, &exp.circuit.simulate(&shifted)?, next_key())?;
            }
            shifted[s] = slots[s];
            slot_grad.push((pair[0] - pair[1]) / 2.0);
        }
        let grad_f = exp.contract_vector(&slot_grad);
        for j in 0..delta.len() {
            delta[j] -= config.learning_rate * (-0.5 * grad_f[j] - config.delta_tau * b[j]);
        }
        let new_loss = loss_at(&delta, fidelity(&reference, &circuit.simulate(&point(&delta))?, next_key())?);
        if !new_loss.is_finite() {
            return Err(Error::numerical("dual loss became non-finite"));
        }
        increases = if new_loss > loss { increases + 1 } else { 0 };
        if increases >= 10 {
            return Err(Error::numerical("dual inner loop diverged: loss rose for 10 consecutive iterations"));
        }
        let change = (new_loss - loss).abs();
        loss = new_loss;
        if config.tolerance.is_some_and(|tol| change < tol) {
            break;
        }
    }
    Ok(DualStep { delta, loss, iterations })
}

/// Evolution through the dual formulation: the velocity is `delta /
/// delta_tau` for the minimizer `delta` of the inner loss.
pub fn dualqte_evolve(circuit: &ParameterizedCircuit, h: &PauliSum, theta0: &[f64], config: &EvolutionConfig) -> Result<EvolutionTrace> {
    let Engine::Dualqte(dual) = &config.engine else {
        return Err(Error::invalid("dualqte_evolve needs a dual engine config"));
    };
    let ctx = Context::new(circuit, h, theta0, config)?;
    let fidelity = |a: &Statevector, b: &Statevector, key: u64| -> Result<f64> {
        match &ctx.objective {
            Some(obj) => obj.fidelity_states(a, b, key),
            None => Ok(a.inner(b)?.norm_sqr().min(1.0)),
        }
    };
    let mut previous: Option<Vec<f64>> = None;
    ctx.run(theta0, None, |k, rec| {
        let b = match &ctx.objective {
            None => evolution_terms(circuit, h, &rec.theta, config.mode)?.b,
            Some(obj) => obj.gradient(&rec.theta, k as u64)?.iter().map(|g| -0.5 * g).collect(),
        };
        let start = match (&previous, dual.warmstart) {
            (Some(p), true) => p.clone(),
            _ => vec![0.0; rec.theta.len()],
        };
        let budget = if k == 0 { dual.initial_iterations } else { dual.iterations };
        let step = dual_step(circuit, &rec.theta, &b, dual, &start, budget, &fidelity, rng::child_seed(config.seed, k as u64))?;
        let v: Vec<f64> = step.delta.iter().map(|x| x / dual.delta_tau).collect();
        rec.residual = Some(rec.variance.unwrap_or(0.0) + 2.0 * step.loss / (dual.delta_tau * dual.delta_tau));
        rec.inner_iterations = Some(step.iterations);
        rec.theta_dot = Some(v);
        previous = Some(step.delta);
        Ok(())
    })
}

/// Dispatches on the configured engine.
pub fn evolve(circuit: &ParameterizedCircuit, h: &PauliSum, theta0: &[f64], config: &EvolutionConfig) -> Result<EvolutionTrace> {
    match config.engine {
        Engine::Varqte => varqte_evolve(circuit, h, theta0, config),
        Engine::Saqite(_) => saqite_evolve(circuit, h, theta0, config),
        Engine::Dualqte(_) => dualqte_evolve(circuit, h, theta0, config),
    }
}
