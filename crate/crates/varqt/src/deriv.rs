//! Gradients, quantum geometric tensors, evolution gradients and the
//! momentum estimator used by the stochastic methods.
//!
//! Exact derivatives work on the unique-slot expansion of a circuit and are
//! contracted back to the caller's parameters with the expansion Jacobian.
//! Gate-application counters treat each run of unparameterized gates between
//! two parameterized rotations as a single operation.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{Op, ParameterizedCircuit, UniqueExpansion};
use crate::error::{Error, Result};
use crate::pauli::{PauliMask, PauliSum};
use crate::rng;
use crate::state::{Gate, Statevector};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Circuit split into fixed blocks `V_0 .. V_d` around rotations `U_1 .. U_d`.
struct Layers {
    blocks: Vec<Vec<Gate>>,
    rots: Vec<(PauliMask, f64)>,
    n_qubits: usize,
}

impl Layers {
    fn new(exp: &UniqueExpansion, slot_theta: &[f64]) -> Self {
        let mut blocks = vec![Vec::new()];
        let mut rots = Vec::new();
        for op in exp.circuit.ops() {
            match op {
                Op::Rotation { qubits, axis, angle: crate::circuit::Angle::Param { index, .. } } => {
                    rots.push((crate::state::rotation_mask(qubits, axis), slot_theta[*index]));
                    blocks.push(Vec::new());
                }
                other => blocks.last_mut().expect("non-empty").push(other.bind(slot_theta)),
            }
        }
        Layers { blocks, rots, n_qubits: exp.circuit.n_qubits() }
    }

    fn d(&self) -> usize {
        self.rots.len()
    }

    fn block(&self, k: usize, amps: &mut [Complex64]) {
        for g in &self.blocks[k] {
            g.apply_raw(amps);
        }
    }

    fn block_adj(&self, k: usize, amps: &mut [Complex64]) {
        for g in self.blocks[k].iter().rev() {
            g.adjoint().apply_raw(amps);
        }
    }

    fn rot(&self, k: usize, amps: &mut [Complex64]) {
        let (m, a) = self.rots[k];
        m.rotate(amps, a);
    }

    fn rot_adj(&self, k: usize, amps: &mut [Complex64]) {
        let (m, a) = self.rots[k];
        m.rotate(amps, -a);
    }

    /// Full state and the number of block operations used.
    fn prepare(&self) -> (Vec<Complex64>, u64) {
        let mut amps = vec![ZERO; 1usize << self.n_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        self.block(0, &mut amps);
        for k in 0..self.d() {
            self.rot(k, &mut amps);
            self.block(k + 1, &mut amps);
        }
        (amps, 2 * self.d() as u64 + 1)
    }
}

fn expanded(circuit: &ParameterizedCircuit, theta: &[f64]) -> Result<(UniqueExpansion, Vec<f64>)> {
    circuit.check_params(theta)?;
    let exp = circuit.expand_unique();
    let slots = exp.slot_values(theta);
    Ok((exp, slots))
}

fn check_observable(circuit: &ParameterizedCircuit, obs: &PauliSum) -> Result<()> {
    if obs.n_qubits() != circuit.n_qubits() {
        return Err(Error::DimensionMismatch { expected: circuit.n_qubits(), got: obs.n_qubits() });
    }
    Ok(())
}

fn real_expectation(obs: &PauliSum, amps: &[Complex64]) -> f64 {
    obs.masks().iter().map(|(c, m)| c * m.inner(amps, amps).re).sum()
}

/// `<phi(theta)|O|phi(theta)>`.
pub fn energy(circuit: &ParameterizedCircuit, obs: &PauliSum, theta: &[f64]) -> Result<f64> {
    check_observable(circuit, obs)?;
    circuit.simulate(theta)?.expectation(obs)
}

/// Exact parameter-shift gradient of `<O>` and the block-operation count of
/// the `2d` shifted simulations.
pub fn grad_parameter_shift_counted(circuit: &ParameterizedCircuit, obs: &PauliSum, theta: &[f64]) -> Result<(Vec<f64>, u64)> {
    check_observable(circuit, obs)?;
    let (exp, slots) = expanded(circuit, theta)?;
    let mut ops = 0;
    let mut slot_grad = Vec::with_capacity(slots.len());
    let mut shifted = slots.clone();
    for k in 0..slots.len() {
        let mut pair = [0.0; 2];
        for (i, s) in [FRAC_PI_2, -FRAC_PI_2].into_iter().enumerate() {
            shifted[k] = slots[k] + s;
            let (amps, n) = Layers::new(&exp, &shifted).prepare();
            ops += n;
            pair[i] = real_expectation(obs, &amps);
        }
        shifted[k] = slots[k];
        slot_grad.push((pair[0] - pair[1]) / 2.0);
    }
    Ok((exp.contract_vector(&slot_grad), ops))
}

pub fn grad_parameter_shift(circuit: &ParameterizedCircuit, obs: &PauliSum, theta: &[f64]) -> Result<Vec<f64>> {
    Ok(grad_parameter_shift_counted(circuit, obs, theta)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdScheme {
    Central,
    Forward,
}

/// Difference-quotient gradient of an arbitrary loss.
pub fn grad_finite_diff<F>(mut loss: F, theta: &[f64], eps: f64, scheme: FdScheme) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut x = theta.to_vec();
    let base = match scheme {
        FdScheme::Forward => Some(loss(theta)?),
        FdScheme::Central => None,
    };
    let mut g = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        x[j] = theta[j] + eps;
        let up = loss(&x)?;
        let v = match base {
            Some(b) => (up - b) / eps,
            None => {
                x[j] = theta[j] - eps;
                (up - loss(&x)?) / (2.0 * eps)
            }
        };
        x[j] = theta[j];
        g.push(v);
    }
    Ok(g)
}

/// Perturbation size and seed for stochastic samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub epsilon: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(epsilon: f64, seed: u64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid("perturbation must be positive and finite"));
        }
        Ok(PerturbationSpec { epsilon, seed })
    }

    /// Direction `index` of the named stream.
    pub fn direction(&self, stream: &str, index: u64, d: usize) -> Vec<f64> {
        bernoulli(d, &mut rng::substream(self.seed, stream, index))
    }
}

/// Uniform `{+1, -1}^d`.
pub fn bernoulli<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// `(L(theta + eps D) - L(theta - eps D)) / (2 eps) * D^-1`.
pub fn grad_spsa_sample<F>(mut loss: F, theta: &[f64], eps: f64, delta: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if delta.len() != theta.len() {
        return Err(Error::DimensionMismatch { expected: theta.len(), got: delta.len() });
    }
    let plus: Vec<f64> = theta.iter().zip(delta).map(|(t, d)| t + eps * d).collect();
    let minus: Vec<f64> = theta.iter().zip(delta).map(|(t, d)| t - eps * d).collect();
    let diff = (loss(&plus)? - loss(&minus)?) / (2.0 * eps);
    Ok(delta.iter().map(|d| diff / d).collect())
}

/// Rank-two QGT sample from four fidelities `fid(theta')` = `F(theta, theta')`.
pub fn qgt_spsa_sample<F>(mut fid: F, theta: &[f64], eps: f64, delta: &[f64], delta2: &[f64]) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let d = theta.len();
    if delta.len() != d || delta2.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: delta.len().min(delta2.len()) });
    }
    let mut point = |s1: f64, s2: f64| -> Result<f64> {
        let p: Vec<f64> = (0..d).map(|j| theta[j] + eps * (s1 * delta[j] + s2 * delta2[j])).collect();
        fid(&p)
    };
    let df = point(1.0, 1.0)? - point(1.0, -1.0)? - point(-1.0, 1.0)? + point(-1.0, -1.0)?;
    let scale = -df / (8.0 * eps * eps);
    Ok(DMatrix::from_fn(d, d, |j, k| scale * 0.5 * (1.0 / (delta[j] * delta2[k]) + 1.0 / (delta2[j] * delta[k]))))
}

/// Complex inner products `<d_j phi|O|phi>` from reverse-mode
/// differentiation, with the number of operations used.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseGradient {
    pub inner: Vec<Complex64>,
    pub gate_ops: u64,
}

impl ReverseGradient {
    /// Gradient of `<O>`: twice the real part.
    pub fn energy_gradient(&self) -> Vec<f64> {
        self.inner.iter().map(|z| 2.0 * z.re).collect()
    }
}

/// Backward sweep computing `<d_k phi|t>` for every target vector `t`.
/// `lambda` must hold the prepared state.
fn adjoint_sweep(lay: &Layers, mut lambda: Vec<Complex64>, mut targets: Vec<Vec<Complex64>>, ops: &mut u64) -> Vec<Vec<Complex64>> {
    let d = lay.d();
    let mut out = vec![vec![ZERO; d]; targets.len()];
    for k in (0..d).rev() {
        lay.block_adj(k + 1, &mut lambda);
        for t in targets.iter_mut() {
            lay.block_adj(k + 1, t);
        }
        let (mask, _) = lay.rots[k];
        for (o, t) in out.iter_mut().zip(&targets) {
            o[k] = 0.5 * I * mask.inner(&lambda, t);
        }
        lay.rot_adj(k, &mut lambda);
        for t in targets.iter_mut() {
            lay.rot_adj(k, t);
        }
        *ops += 3 + 2 * targets.len() as u64;
    }
    out
}

/// Reverse-mode `<d_j phi|O|phi>` with two working statevectors.
pub fn grad_reverse(circuit: &ParameterizedCircuit, obs: &PauliSum, theta: &[f64]) -> Result<ReverseGradient> {
    check_observable(circuit, obs)?;
    let (exp, slots) = expanded(circuit, theta)?;
    let lay = Layers::new(&exp, &slots);
    let (phi, mut ops) = lay.prepare();
    let zeta = obs.apply(&phi);
    ops += obs.len() as u64;
    let inner = adjoint_sweep(&lay, phi, vec![zeta], &mut ops).pop().expect("one target");
    Ok(ReverseGradient { inner: exp.contract_vector(&inner), gate_ops: ops })
}

/// Quantum geometric tensor `G = S - p p^dagger` split into parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Qgt {
    /// Real part, the Fubini-Study metric.
    pub real: DMatrix<f64>,
    pub imag: DMatrix<f64>,
    /// Phase-fix vector `p_j = <d_j phi|phi>`.
    pub phase: Vec<Complex64>,
    pub gate_ops: u64,
}

impl Qgt {
    pub fn full(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.real.nrows(), self.real.ncols(), |j, k| Complex64::new(self.real[(j, k)], self.imag[(j, k)]))
    }
}

/// QGT in `O(d^2)` operations with three working statevectors.
pub fn qgt_reverse(circuit: &ParameterizedCircuit, theta: &[f64]) -> Result<Qgt> {
    let (exp, slots) = expanded(circuit, theta)?;
    let lay = Layers::new(&exp, &slots);
    let d = lay.d();
    let dim = 1usize << lay.n_qubits;
    let mut psi = vec![ZERO; dim];
    psi[0] = Complex64::new(1.0, 0.0);
    lay.block(0, &mut psi);
    let mut ops = 1u64;
    let mut s = DMatrix::<Complex64>::zeros(d, d);
    let mut p = vec![ZERO; d];
    let mut mu = vec![ZERO; dim];
    for j in 0..d {
        lay.rot(j, &mut psi);
        let mut lambda = psi.clone();
        mu.iter_mut().for_each(|z| *z = ZERO);
        lay.rots[j].0.add_applied(1.0, &psi, &mut mu);
        mu.iter_mut().for_each(|z| *z *= -0.5 * I);
        ops += 2;
        p[j] = dot(&mu, &lambda);
        s[(j, j)] = Complex64::new(dot(&mu, &mu).re, 0.0);
        for k in j + 1..d {
            lay.block(k, &mut lambda);
            lay.block(k, &mut mu);
            lay.rot(k, &mut lambda);
            lay.rot(k, &mut mu);
            let v = -0.5 * I * lay.rots[k].0.inner(&mu, &lambda);
            s[(j, k)] = v;
            s[(k, j)] = v.conj();
            ops += 5;
        }
        lay.block(j + 1, &mut psi);
        ops += 1;
    }
    let g = DMatrix::from_fn(d, d, |j, k| s[(j, k)] - p[j] * p[k].conj());
    let real = exp.contract_matrix(&g.map(|z| z.re));
    let imag = exp.contract_matrix(&g.map(|z| z.im));
    Ok(Qgt { real: symmetrize(&real), imag, phase: exp.contract_vector(&p), gate_ops: ops })
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Exact `F(theta_ref, theta')` for a fixed reference parameter vector.
pub struct FidelityRef<'a> {
    circuit: &'a ParameterizedCircuit,
    reference: Statevector,
}

impl<'a> FidelityRef<'a> {
    pub fn new(circuit: &'a ParameterizedCircuit, theta: &[f64]) -> Result<Self> {
        Ok(FidelityRef { circuit, reference: circuit.simulate(theta)? })
    }

    pub fn reference(&self) -> &Statevector {
        &self.reference
    }

    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.reference.inner(&self.circuit.simulate(theta)?)?.norm_sqr().min(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMethod {
    /// Nested parameter shifts of `pi/2`.
    Psr,
    /// Nested central differences with the given step.
    Fd(f64),
}

/// Metric `g = -1/2 Hess F` from fidelities; returns the matrix and the
/// number of fidelity evaluations.
pub fn qgt_hessian_form(circuit: &ParameterizedCircuit, theta: &[f64], method: HessianMethod) -> Result<(DMatrix<f64>, u64)> {
    match method {
        HessianMethod::Psr => {
            let (exp, slots) = expanded(circuit, theta)?;
            let base = exp.circuit.simulate(&slots)?;
            let fid = |x: &[f64]| -> Result<f64> { Ok(base.inner(&exp.circuit.simulate(x)?)?.norm_sqr()) };
            let (g, calls) = hessian_from_fidelity(fid, &slots, FRAC_PI_2)?;
            Ok((exp.contract_matrix(&g), calls))
        }
        HessianMethod::Fd(eps) => {
            if !(eps > 0.0) {
                return Err(Error::invalid("finite-difference step must be positive"));
            }
            circuit.check_params(theta)?;
            let f = FidelityRef::new(circuit, theta)?;
            let (g, calls) = hessian_from_fidelity(|x| f.eval(x), theta, eps)?;
            Ok((g / (eps * eps), calls))
        }
    }
}

/// `-1/8` of the nested four-point stencil; diagonal entries use
/// `F(theta, theta) = 1` and need two calls each.
pub(crate) fn hessian_from_fidelity<F>(mut fid: F, theta: &[f64], h: f64) -> Result<(DMatrix<f64>, u64)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let d = theta.len();
    let mut g = DMatrix::zeros(d, d);
    let mut x = theta.to_vec();
    let mut calls = 0;
    for j in 0..d {
        let mut acc = 2.0;
        for s in [2.0 * h, -2.0 * h] {
            x[j] = theta[j] + s;
            acc -= fid(&x)?;
            calls += 1;
        }
        x[j] = theta[j];
        g[(j, j)] = acc / 8.0;
        for k in j + 1..d {
            let mut acc = 0.0;
            for (sj, sk, sign) in [(h, h, 1.0), (h, -h, -1.0), (-h, h, -1.0), (-h, -h, 1.0)] {
                x[j] = theta[j] + sj;
                x[k] = theta[k] + sk;
                acc += sign * fid(&x)?;
                calls += 1;
            }
            x[j] = theta[j];
            x[k] = theta[k];
            g[(j, k)] = -acc / 8.0;
            g[(k, j)] = -acc / 8.0;
        }
    }
    Ok((g, calls))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolutionMode {
    Real,
    Imaginary,
}

/// Exact McLachlan right-hand side. Imaginary: `-Re <d phi|H|phi>`, which is
/// `-grad E / 2`. Real: `Im(<d phi|H|phi> - <d phi|phi> E)`.
pub fn evolution_gradient(circuit: &ParameterizedCircuit, h: &PauliSum, theta: &[f64], mode: EvolutionMode) -> Result<Vec<f64>> {
    Ok(evolution_terms(circuit, h, theta, mode)?.b)
}

/// Quantities gathered in one reverse sweep at a parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionTerms {
    pub b: Vec<f64>,
    pub energy: f64,
    pub variance: f64,
    pub gate_ops: u64,
}

pub fn evolution_terms(circuit: &ParameterizedCircuit, h: &PauliSum, theta: &[f64], mode: EvolutionMode) -> Result<EvolutionTerms> {
    check_observable(circuit, h)?;
    let (exp, slots) = expanded(circuit, theta)?;
    let lay = Layers::new(&exp, &slots);
    let (phi, mut ops) = lay.prepare();
    let h_phi = h.apply(&phi);
    ops += h.len() as u64;
    let energy = dot(&phi, &h_phi).re;
    let variance = (h_phi.iter().map(|z| z.norm_sqr()).sum::<f64>() - energy * energy).max(0.0);
    let b = match mode {
        EvolutionMode::Imaginary => {
            let inner = adjoint_sweep(&lay, phi, vec![h_phi], &mut ops).pop().expect("one target");
            exp.contract_vector(&inner).iter().map(|z| -z.re).collect()
        }
        EvolutionMode::Real => {
            let out = adjoint_sweep(&lay, phi.clone(), vec![h_phi, phi], &mut ops);
            let (dh, dp) = (exp.contract_vector(&out[0]), exp.contract_vector(&out[1]));
            dh.iter().zip(&dp).map(|(a, b)| (a - b * energy).im).collect()
        }
    };
    Ok(EvolutionTerms { b, energy, variance, gate_ops: ops })
}

/// One-direction sample of the imaginary-time right-hand side, `-1/2` of
/// the SPSA energy-gradient sample.
pub fn evolution_gradient_spsa<F>(energy: F, theta: &[f64], eps: f64, delta: &[f64], mode: EvolutionMode) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if mode == EvolutionMode::Real {
        return Err(Error::Unsupported("sampled evolution gradients exist only for imaginary time".into()));
    }
    Ok(grad_spsa_sample(energy, theta, eps, delta)?.into_iter().map(|g| -0.5 * g).collect())
}

/// Momentum rule of an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Momentum {
    Fixed(f64),
    /// `k / (k + 1)` at step `k`, giving the running mean including the
    /// initial value.
    GlobalAverage,
}

impl Momentum {
    fn validate(&self) -> Result<()> {
        match self {
            Momentum::Fixed(t) if !(0.0..=1.0).contains(t) => Err(Error::invalid(format!("momentum {t} outside [0, 1]"))),
            _ => Ok(()),
        }
    }

    fn at(&self, k: usize) -> f64 {
        match self {
            Momentum::Fixed(t) => *t,
            Momentum::GlobalAverage => k as f64 / (k as f64 + 1.0),
        }
    }
}

/// Running QGT and evolution-gradient estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub g: DMatrix<f64>,
    pub b: Vec<f64>,
    pub tau_g: Momentum,
    pub tau_b: Momentum,
    pub step: usize,
}

impl EstimatorState {
    /// Starts from `g = 1` and `b = 0`.
    pub fn new(d: usize, tau_g: Momentum, tau_b: Momentum) -> Result<Self> {
        Self::with_initial(DMatrix::identity(d, d), vec![0.0; d], tau_g, tau_b)
    }

    pub fn with_initial(g: DMatrix<f64>, b: Vec<f64>, tau_g: Momentum, tau_b: Momentum) -> Result<Self> {
        tau_g.validate()?;
        tau_b.validate()?;
        if g.nrows() != g.ncols() || g.nrows() != b.len() {
            return Err(Error::DimensionMismatch { expected: g.nrows(), got: b.len() });
        }
        Ok(EstimatorState { g, b, tau_g, tau_b, step: 0 })
    }

    /// Folds in the means of this step's samples. Either list may be empty,
    /// which leaves that estimate unchanged.
    pub fn update(&mut self, g_samples: &[DMatrix<f64>], b_samples: &[Vec<f64>]) -> Result<()> {
        if g_samples.is_empty() && b_samples.is_empty() {
            return Err(Error::invalid("estimator update needs at least one sample"));
        }
        self.step += 1;
        let d = self.b.len();
        if !g_samples.is_empty() {
            let mut mean = DMatrix::zeros(d, d);
            for s in g_samples {
                if s.shape() != (d, d) {
                    return Err(Error::DimensionMismatch { expected: d, got: s.nrows() });
                }
                mean += s;
            }
            mean /= g_samples.len() as f64;
            let t = self.tau_g.at(self.step);
            self.g = &self.g * t + mean * (1.0 - t);
        }
        if !b_samples.is_empty() {
            let mut mean = vec![0.0; d];
            for s in b_samples {
                if s.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: s.len() });
                }
                mean.iter_mut().zip(s).for_each(|(m, v)| *m += v);
            }
            let t = self.tau_b.at(self.step);
            let n = b_samples.len() as f64;
            self.b.iter_mut().zip(&mean).for_each(|(b, m)| *b = t * *b + (1.0 - t) * m / n);
        }
        Ok(())
    }

    pub fn projected_g(&self) -> DMatrix<f64> {
        psd_project(&self.g)
    }
}

/// Replaces eigenvalues by their absolute values.
pub fn psd_project(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let l = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::abs));
    symmetrize(&(&eig.eigenvectors * l * eig.eigenvectors.transpose()))
}
