//! Dense statevectors, gate kernels, measurement sampling, reduced density
//! operators and the tensored readout-error model.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::pauli::{Pauli, PauliMask, PauliString, PauliSum};
use crate::rng;

/// Tolerated deviation of the norm from one before an error is raised.
pub const NORM_TOL: f64 = 1e-8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Gates understood by the simulator. Qubit indices are zero based.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    H(usize),
    S(usize),
    Sdg(usize),
    X(usize),
    Y(usize),
    Z(usize),
    SX(usize),
    SXdg(usize),
    CX { control: usize, target: usize },
    CZ(usize, usize),
    Swap(usize, usize),
    /// `exp(-i angle P / 2)` with `P` the tensor product of `axis` on `qubits`.
    Rot { qubits: Vec<usize>, axis: Vec<Pauli>, angle: f64 },
}

impl Gate {
    pub fn rx(q: usize, angle: f64) -> Gate {
        Gate::Rot { qubits: vec![q], axis: vec![Pauli::X], angle }
    }

    pub fn ry(q: usize, angle: f64) -> Gate {
        Gate::Rot { qubits: vec![q], axis: vec![Pauli::Y], angle }
    }

    pub fn rz(q: usize, angle: f64) -> Gate {
        Gate::Rot { qubits: vec![q], axis: vec![Pauli::Z], angle }
    }

    /// Two-qubit Pauli rotation such as `R_ZZ`.
    pub fn rpp(a: usize, pa: Pauli, b: usize, pb: Pauli, angle: f64) -> Gate {
        Gate::Rot { qubits: vec![a, b], axis: vec![pa, pb], angle }
    }

    pub fn qubits(&self) -> Vec<usize> {
        match self {
            Gate::H(q) | Gate::S(q) | Gate::Sdg(q) | Gate::X(q) | Gate::Y(q) | Gate::Z(q) | Gate::SX(q) | Gate::SXdg(q) => {
                vec![*q]
            }
            Gate::CX { control, target } => vec![*control, *target],
            Gate::CZ(a, b) | Gate::Swap(a, b) => vec![*a, *b],
            Gate::Rot { qubits, .. } => qubits.clone(),
        }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        let qs = self.qubits();
        if let Gate::Rot { qubits, axis, angle } = self {
            if qubits.len() != axis.len() || qubits.is_empty() {
                return Err(Error::invalid("rotation axis length must match its qubits"));
            }
            if axis.contains(&Pauli::I) {
                return Err(Error::invalid("rotation axis may not contain identities"));
            }
            if !angle.is_finite() {
                return Err(Error::invalid("rotation angle must be finite"));
            }
        }
        for (i, &q) in qs.iter().enumerate() {
            if q >= n_qubits {
                return Err(Error::QubitOutOfRange { index: q, n_qubits });
            }
            if qs[..i].contains(&q) {
                return Err(Error::DuplicateQubit(q));
            }
        }
        Ok(())
    }

    pub fn adjoint(&self) -> Gate {
        match self {
            Gate::S(q) => Gate::Sdg(*q),
            Gate::Sdg(q) => Gate::S(*q),
            Gate::SX(q) => Gate::SXdg(*q),
            Gate::SXdg(q) => Gate::SX(*q),
            Gate::Rot { qubits, axis, angle } => Gate::Rot { qubits: qubits.clone(), axis: axis.clone(), angle: -angle },
            g => g.clone(),
        }
    }

    fn single_matrix(&self) -> Option<(usize, [[Complex64; 2]; 2])> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let i = Complex64::new(0.0, 1.0);
        let (p, m) = (Complex64::new(0.5, 0.5), Complex64::new(0.5, -0.5));
        Some(match self {
            Gate::H(q) => (*q, [[ONE * h, ONE * h], [ONE * h, -ONE * h]]),
            Gate::S(q) => (*q, [[ONE, ZERO], [ZERO, i]]),
            Gate::Sdg(q) => (*q, [[ONE, ZERO], [ZERO, -i]]),
            Gate::X(q) => (*q, [[ZERO, ONE], [ONE, ZERO]]),
            Gate::Y(q) => (*q, [[ZERO, -i], [i, ZERO]]),
            Gate::Z(q) => (*q, [[ONE, ZERO], [ZERO, -ONE]]),
            Gate::SX(q) => (*q, [[p, m], [m, p]]),
            Gate::SXdg(q) => (*q, [[m, p], [p, m]]),
            _ => return None,
        })
    }

    /// Applies the gate without validation or norm checks.
    pub(crate) fn apply_raw(&self, amps: &mut [Complex64]) {
        if let Some((q, m)) = self.single_matrix() {
            apply_single(amps, q, &m);
            return;
        }
        match self {
            Gate::CX { control, target } => {
                let (c, t) = (1usize << control, 1usize << target);
                for x in 0..amps.len() {
                    if x & c != 0 && x & t == 0 {
                        amps.swap(x, x | t);
                    }
                }
            }
            Gate::CZ(a, b) => {
                let m = (1usize << a) | (1usize << b);
                for (x, v) in amps.iter_mut().enumerate() {
                    if x & m == m {
                        *v = -*v;
                    }
                }
            }
            Gate::Swap(a, b) => {
                let (ma, mb) = (1usize << a, 1usize << b);
                for x in 0..amps.len() {
                    if x & ma != 0 && x & mb == 0 {
                        amps.swap(x, (x & !ma) | mb);
                    }
                }
            }
            Gate::Rot { qubits, axis, angle } => {
                rotation_mask(qubits, axis).rotate(amps, *angle);
            }
            _ => unreachable!("single-qubit gates handled above"),
        }
    }

    /// Dense unitary on `n_qubits`, built column by column.
    pub fn matrix(&self, n_qubits: usize) -> Result<DMatrix<Complex64>> {
        self.validate(n_qubits)?;
        let dim = 1usize << n_qubits;
        let mut m = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let mut col = vec![ZERO; dim];
            col[k] = ONE;
            self.apply_raw(&mut col);
            for (r, v) in col.into_iter().enumerate() {
                m[(r, k)] = v;
            }
        }
        Ok(m)
    }
}

pub(crate) fn rotation_mask(qubits: &[usize], axis: &[Pauli]) -> PauliMask {
    PauliMask::from_ops(qubits.iter().copied().zip(axis.iter().copied()))
}

fn apply_single(amps: &mut [Complex64], q: usize, m: &[[Complex64; 2]; 2]) {
    let bit = 1usize << q;
    for x in 0..amps.len() {
        if x & bit == 0 {
            let (a, b) = (amps[x], amps[x | bit]);
            amps[x] = m[0][0] * a + m[0][1] * b;
            amps[x | bit] = m[1][0] * a + m[1][1] * b;
        }
    }
}

/// Measurement settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ShotConfig {
    pub shots: u64,
    pub seed: u64,
}

impl ShotConfig {
    pub fn new(shots: u64, seed: u64) -> Result<Self> {
        if shots == 0 {
            return Err(Error::invalid("shots must be at least 1"));
        }
        Ok(ShotConfig { shots, seed })
    }
}

/// Counts per measured bitstring.
pub type Histogram = BTreeMap<usize, u64>;

/// Pure state of `n` qubits as `2^n` amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl Statevector {
    /// `|0...0>`.
    pub fn zero(n_qubits: usize) -> Self {
        Self::basis(n_qubits, 0)
    }

    pub fn basis(n_qubits: usize, k: usize) -> Self {
        let mut amps = vec![ZERO; 1usize << n_qubits];
        amps[k] = ONE;
        Statevector { n_qubits, amps }
    }

    /// Wraps amplitudes, rejecting wrong lengths and non-unit norms.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let len = amps.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::invalid(format!("amplitude count {len} is not a power of two")));
        }
        let s = Statevector { n_qubits: len.trailing_zeros() as usize, amps };
        s.check_norm()?;
        Ok(s)
    }

    /// Normalizes the amplitudes first.
    pub fn from_unnormalized(mut amps: Vec<Complex64>) -> Result<Self> {
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::numerical("cannot normalize a zero or non-finite vector"));
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        Self::from_amplitudes(amps)
    }

    /// Product state with qubit `q` in `single[q]`.
    pub fn product(single: &[[Complex64; 2]]) -> Result<Self> {
        let mut amps = vec![ONE];
        for s in single {
            let mut next = vec![ZERO; amps.len() * 2];
            for (x, a) in amps.iter().enumerate() {
                next[x] = a * s[0];
                next[x + amps.len()] = a * s[1];
            }
            amps = next;
        }
        Self::from_unnormalized(amps)
    }

    /// Haar-like random state from normal deviates.
    pub fn random(n_qubits: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "random.state");
        let amps = (0..1usize << n_qubits)
            .map(|_| Complex64::new(StandardNormal.sample(&mut r), StandardNormal.sample(&mut r)))
            .collect();
        Self::from_unnormalized(amps).expect("normal deviates are almost surely non-zero")
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn check_norm(&self) -> Result<()> {
        let n = self.norm();
        if (n - 1.0).abs() > NORM_TOL || !n.is_finite() {
            return Err(Error::NormDrift(n));
        }
        Ok(())
    }

    /// Validates and applies a gate in place.
    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        gate.apply_raw(&mut self.amps);
        self.check_norm()
    }

    pub(crate) fn apply_unchecked(&mut self, gate: &Gate) {
        gate.apply_raw(&mut self.amps);
    }

    pub fn inner(&self, other: &Statevector) -> Result<Complex64> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::DimensionMismatch { expected: self.n_qubits, got: other.n_qubits });
        }
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    fn check_observable(&self, obs: &PauliSum) -> Result<()> {
        if obs.n_qubits() > self.n_qubits {
            return Err(Error::QubitOutOfRange { index: obs.n_qubits() - 1, n_qubits: self.n_qubits });
        }
        if obs.n_qubits() != self.n_qubits {
            return Err(Error::DimensionMismatch { expected: self.n_qubits, got: obs.n_qubits() });
        }
        Ok(())
    }

    /// Exact `<psi|O|psi>`.
    pub fn expectation(&self, obs: &PauliSum) -> Result<f64> {
        self.check_observable(obs)?;
        Ok(obs.masks().iter().map(|(c, m)| c * m.inner(&self.amps, &self.amps).re).sum())
    }

    /// Exact mean and variance `<O^2> - <O>^2`.
    pub fn expectation_variance(&self, obs: &PauliSum) -> Result<(f64, f64)> {
        self.check_observable(obs)?;
        let o_psi = obs.apply(&self.amps);
        let mean: f64 = self.amps.iter().zip(&o_psi).map(|(a, b)| (a.conj() * b).re).sum();
        let sq: f64 = o_psi.iter().map(|a| a.norm_sqr()).sum();
        Ok((mean, (sq - mean * mean).max(0.0)))
    }

    /// Draws `shots` outcomes after applying `basis_change`.
    pub fn sample_counts_with<R: Rng + ?Sized>(&self, basis_change: &[Gate], shots: u64, rng: &mut R) -> Result<Histogram> {
        if shots == 0 {
            return Err(Error::invalid("shots must be at least 1"));
        }
        let probs = if basis_change.is_empty() {
            self.probabilities()
        } else {
            let mut s = self.clone();
            for g in basis_change {
                s.apply(g)?;
            }
            s.probabilities()
        };
        Ok(multinomial(&probs, shots, rng))
    }
}

/// Functional form of [`Statevector::apply`].
pub fn apply_gate(state: &Statevector, gate: &Gate) -> Result<Statevector> {
    let mut s = state.clone();
    s.apply(gate)?;
    Ok(s)
}

/// Exact expectation, plus the variance when requested.
pub fn expectation(state: &Statevector, obs: &PauliSum, with_variance: bool) -> Result<(f64, Option<f64>)> {
    if with_variance {
        let (m, v) = state.expectation_variance(obs)?;
        Ok((m, Some(v)))
    } else {
        Ok((state.expectation(obs)?, None))
    }
}

/// Histogram of `config.shots` outcomes using the `shots` stream of the seed.
pub fn sample_counts(state: &Statevector, basis_changes: &[Vec<Gate>], config: &ShotConfig) -> Result<Histogram> {
    let flat: Vec<Gate> = basis_changes.iter().flatten().cloned().collect();
    let mut r = rng::stream(config.seed, rng::streams::SHOTS);
    state.sample_counts_with(&flat, config.shots, &mut r)
}

/// Multinomial draw as a chain of conditional binomials.
pub fn multinomial<R: Rng + ?Sized>(probs: &[f64], shots: u64, rng: &mut R) -> Histogram {
    let mut hist = Histogram::new();
    let mut remaining = shots;
    let mut mass: f64 = probs.iter().sum();
    for (k, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if p <= 0.0 {
            continue;
        }
        let q = if mass <= 0.0 { 1.0 } else { (p / mass).clamp(0.0, 1.0) };
        let draw = if q >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, q).expect("probability in [0, 1]").sample(rng)
        };
        if draw > 0 {
            hist.insert(k, draw);
        }
        remaining -= draw;
        mass -= p;
    }
    hist
}

/// Binomial estimate of a probability from `shots` trials.
pub fn sample_probability<R: Rng + ?Sized>(p: f64, shots: u64, rng: &mut R) -> f64 {
    let p = p.clamp(0.0, 1.0);
    Binomial::new(shots, p).expect("probability in [0, 1]").sample(rng) as f64 / shots as f64
}

/// Shot-noise estimate of `<O>`: terms sharing a qubit-wise basis are read
/// from one histogram. Returns the estimate and the number of circuits.
pub fn sampled_expectation<R: Rng + ?Sized>(state: &Statevector, obs: &PauliSum, shots: u64, rng: &mut R) -> Result<(f64, u64)> {
    let groups = obs.qubitwise_groups();
    let mut total = 0.0;
    for group in &groups {
        let mut basis = vec![Pauli::I; obs.n_qubits()];
        for &t in group {
            for (q, p) in obs.terms()[t].1.ops().iter().enumerate() {
                if *p != Pauli::I {
                    basis[q] = *p;
                }
            }
        }
        let (gates, _) = crate::pauli::diagonalizing_basis(&PauliString::new(basis));
        let flat: Vec<Gate> = gates.into_iter().flatten().collect();
        let hist = state.sample_counts_with(&flat, shots, rng)?;
        for &t in group {
            let (c, p) = &obs.terms()[t];
            let z = p.mask().x | p.mask().z;
            let acc: f64 = hist
                .iter()
                .map(|(k, n)| if (k & z).count_ones() % 2 == 1 { -(*n as f64) } else { *n as f64 })
                .sum();
            total += c * acc / shots as f64;
        }
    }
    Ok((total, groups.len() as u64))
}

/// `|<s1|s2>|^2`; with a shot config the value is binomially sampled.
pub fn fidelity(s1: &Statevector, s2: &Statevector, config: Option<&ShotConfig>) -> Result<f64> {
    let f = s1.inner(s2)?.norm_sqr().min(1.0);
    match config {
        None => Ok(f),
        Some(c) => {
            let mut r = rng::stream(c.seed, rng::streams::SHOTS);
            Ok(sample_probability(f, c.shots, &mut r))
        }
    }
}

/// Mixed state as a dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    n_qubits: usize,
    matrix: DMatrix<Complex64>,
}

impl DensityOperator {
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self> {
        let dim = matrix.nrows();
        if dim == 0 || dim != matrix.ncols() || !dim.is_power_of_two() {
            return Err(Error::invalid("density matrix must be square with power-of-two size"));
        }
        Ok(DensityOperator { n_qubits: dim.trailing_zeros() as usize, matrix })
    }

    pub fn pure(state: &Statevector) -> Self {
        let v = nalgebra::DVector::from_column_slice(state.amplitudes());
        DensityOperator { n_qubits: state.n_qubits(), matrix: &v * v.adjoint() }
    }

    pub fn maximally_mixed(n_qubits: usize) -> Self {
        let dim = 1usize << n_qubits;
        DensityOperator { n_qubits, matrix: DMatrix::identity(dim, dim) / Complex64::new(dim as f64, 0.0) }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.matrix.clone().symmetric_eigenvalues().iter().copied().collect()
    }

    /// Checks hermiticity, unit trace and positivity within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if (&self.matrix - self.matrix.adjoint()).camax() > tol {
            return Err(Error::numerical("density operator is not Hermitian"));
        }
        if (self.trace() - 1.0).abs() > tol {
            return Err(Error::numerical(format!("density operator trace {}", self.trace())));
        }
        if self.eigenvalues().iter().any(|&l| l < -tol) {
            return Err(Error::numerical("density operator has a negative eigenvalue"));
        }
        Ok(())
    }

    /// `Tr(rho A)`.
    pub fn expectation(&self, obs: &PauliSum) -> Result<f64> {
        Ok((&self.matrix * obs.matrix()?).trace().re)
    }

    /// `||rho - sigma||_1 / 2`.
    pub fn trace_distance(&self, other: &DensityOperator) -> Result<f64> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::DimensionMismatch { expected: self.n_qubits, got: other.n_qubits });
        }
        let diff = &self.matrix - &other.matrix;
        let diff = (&diff + diff.adjoint()) * Complex64::new(0.5, 0.0);
        Ok(diff.symmetric_eigenvalues().iter().map(|l| l.abs()).sum::<f64>() / 2.0)
    }

    /// Diagonal in the computational basis.
    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.matrix.nrows()).map(|i| self.matrix[(i, i)].re).collect()
    }
}

/// Reduced state on the `keep` qubits; bit `i` of the result indexes `keep[i]`.
pub fn partial_trace(state: &Statevector, keep: &[usize]) -> Result<DensityOperator> {
    let n = state.n_qubits();
    if keep.is_empty() {
        return Err(Error::invalid("partial trace needs at least one kept qubit"));
    }
    for (i, &q) in keep.iter().enumerate() {
        if q >= n {
            return Err(Error::QubitOutOfRange { index: q, n_qubits: n });
        }
        if keep[..i].contains(&q) {
            return Err(Error::DuplicateQubit(q));
        }
    }
    let traced: Vec<usize> = (0..n).filter(|q| !keep.contains(q)).collect();
    let scatter = |bits: usize, qs: &[usize]| -> usize {
        qs.iter().enumerate().filter(|(i, _)| bits >> i & 1 == 1).map(|(_, q)| 1usize << q).sum()
    };
    let dk = 1usize << keep.len();
    let amps = state.amplitudes();
    let mut m = DMatrix::<Complex64>::zeros(dk, dk);
    for t in 0..1usize << traced.len() {
        let base = scatter(t, &traced);
        let col: Vec<Complex64> = (0..dk).map(|a| amps[base | scatter(a, keep)]).collect();
        for a in 0..dk {
            for b in 0..dk {
                m[(a, b)] += col[a] * col[b].conj();
            }
        }
    }
    DensityOperator::new(m)
}

/// Per-qubit confusion matrices; `a[q][i][j]` is the probability of reading
/// `i` when qubit `q` is in state `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutModel {
    mats: Vec<[[f64; 2]; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutDirection {
    Corrupt,
    Mitigate,
}

impl ReadoutModel {
    pub fn new(mats: Vec<[[f64; 2]; 2]>) -> Result<Self> {
        for (q, a) in mats.iter().enumerate() {
            for col in 0..2 {
                if (a[0][col] + a[1][col] - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid(format!("confusion matrix {q}: column {col} does not sum to 1")));
                }
            }
            if a.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("confusion matrix {q}: entry outside [0, 1]")));
            }
        }
        Ok(ReadoutModel { mats })
    }

    pub fn identity(n_qubits: usize) -> Self {
        ReadoutModel { mats: vec![[[1.0, 0.0], [0.0, 1.0]]; n_qubits] }
    }

    pub fn n_qubits(&self) -> usize {
        self.mats.len()
    }

    fn inverse(&self, q: usize) -> Result<[[f64; 2]; 2]> {
        let a = self.mats[q];
        if !(a[0][0] > a[0][1] && a[1][1] > a[1][0]) {
            return Err(Error::numerical(format!("confusion matrix {q} is not diagonally dominant")));
        }
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        Ok([[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]])
    }

    /// Applies `A` (corrupt) or `A^-1` (mitigate) qubit by qubit to a
    /// probability vector.
    pub fn apply(&self, probs: &[f64], direction: ReadoutDirection) -> Result<Vec<f64>> {
        let n = self.n_qubits();
        if probs.len() != 1usize << n {
            return Err(Error::DimensionMismatch { expected: 1usize << n, got: probs.len() });
        }
        let mut out = probs.to_vec();
        for q in 0..n {
            let m = match direction {
                ReadoutDirection::Corrupt => self.mats[q],
                ReadoutDirection::Mitigate => self.inverse(q)?,
            };
            let bit = 1usize << q;
            for x in 0..out.len() {
                if x & bit == 0 {
                    let (a, b) = (out[x], out[x | bit]);
                    out[x] = m[0][0] * a + m[0][1] * b;
                    out[x | bit] = m[1][0] * a + m[1][1] * b;
                }
            }
        }
        Ok(out)
    }

    /// Mitigated `<D>` for a Z-type string straight from a histogram, in
    /// `O(entries * n)` without forming the full quasi-distribution.
    pub fn mitigated_expectation(&self, hist: &Histogram, diag: &PauliString) -> Result<f64> {
        if !diag.is_diagonal() || diag.n_qubits() != self.n_qubits() {
            return Err(Error::invalid("mitigated expectation needs an I/Z string over all qubits"));
        }
        let mut rows = Vec::with_capacity(self.n_qubits());
        for q in 0..self.n_qubits() {
            let o = if diag.get(q) == Pauli::Z { [1.0, -1.0] } else { [1.0, 1.0] };
            let inv = self.inverse(q)?;
            rows.push([o[0] * inv[0][0] + o[1] * inv[1][0], o[0] * inv[0][1] + o[1] * inv[1][1]]);
        }
        let total: u64 = hist.values().sum();
        if total == 0 {
            return Err(Error::invalid("empty histogram"));
        }
        let acc: f64 = hist
            .iter()
            .map(|(k, c)| *c as f64 * rows.iter().enumerate().map(|(q, r)| r[k >> q & 1]).product::<f64>())
            .sum();
        Ok(acc / total as f64)
    }
}

/// Normalized probability vector of a histogram over `n_qubits` bits.
pub fn histogram_probabilities(hist: &Histogram, n_qubits: usize) -> Result<Vec<f64>> {
    let total: u64 = hist.values().sum();
    if total == 0 {
        return Err(Error::invalid("empty histogram"));
    }
    let mut p = vec![0.0; 1usize << n_qubits];
    for (k, c) in hist {
        if *k >= p.len() {
            return Err(Error::DimensionMismatch { expected: p.len(), got: *k + 1 });
        }
        p[*k] = *c as f64 / total as f64;
    }
    Ok(p)
}

/// Corrupts or mitigates a measured histogram.
pub fn readout_apply_and_mitigate(hist: &Histogram, model: &ReadoutModel, direction: ReadoutDirection) -> Result<Vec<f64>> {
    let p = histogram_probabilities(hist, model.n_qubits())?;
    model.apply(&p, direction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn close_up_to_phase(a: &Statevector, b: &Statevector) -> bool {
        (1.0 - a.inner(b).unwrap().norm()).abs() < 1e-12
    }

    #[test]
    fn hadamard_on_zero() {
        let s = apply_gate(&Statevector::zero(1), &Gate::H(0)).unwrap();
        assert_abs_diff_eq!(s.amplitudes()[0].re, FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(s.amplitudes()[1].re, FRAC_1_SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn rx_pi_is_x_up_to_phase() {
        let s = apply_gate(&Statevector::zero(1), &Gate::rx(0, PI)).unwrap();
        assert_abs_diff_eq!(s.amplitudes()[0].norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.amplitudes()[1].re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.amplitudes()[1].im, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn cx_truth_table() {
        // |10> has qubit 1 set; control on qubit 1 flips qubit 0.
        let s = apply_gate(&Statevector::basis(2, 0b10), &Gate::CX { control: 1, target: 0 }).unwrap();
        assert_eq!(s, Statevector::basis(2, 0b11));
    }

    #[test]
    fn gate_errors() {
        let s = Statevector::zero(2);
        assert!(matches!(apply_gate(&s, &Gate::H(2)), Err(Error::QubitOutOfRange { .. })));
        assert!(matches!(apply_gate(&s, &Gate::CZ(1, 1)), Err(Error::DuplicateQubit(1))));
    }

    #[test]
    fn rotation_matrices_match_closed_forms() {
        let t = 0.7;
        let (s, c) = (t / 2.0f64).sin_cos();
        let i = Complex64::new(0.0, 1.0);
        let rx = Gate::rx(0, t).matrix(1).unwrap();
        assert!((rx[(0, 1)] - (-i * s)).norm() < 1e-15 && (rx[(0, 0)] - c).norm() < 1e-15);
        let ry = Gate::ry(0, t).matrix(1).unwrap();
        assert!((ry[(0, 1)] + s).norm() < 1e-15 && (ry[(1, 0)] - s).norm() < 1e-15);
        let rz = Gate::rz(0, t).matrix(1).unwrap();
        assert!((rz[(0, 0)] - (-i * t / 2.0).exp()).norm() < 1e-15);
        let sx = Gate::SX(0).matrix(1).unwrap();
        let x = Gate::X(0).matrix(1).unwrap();
        assert!((&sx * &sx - x).camax() < 1e-15);
    }

    #[test]
    fn zero_z_expectation() {
        let z = PauliSum::from_labels(&[(1.0, "Z")]).unwrap();
        assert_eq!(Statevector::zero(1).expectation(&z).unwrap(), 1.0);
    }

    #[test]
    fn plus_one_zz_is_zero() {
        // qubit 1 in |+>, qubit 0 in |1>.
        let h = FRAC_1_SQRT_2;
        let s = Statevector::product(&[[ZERO, ONE], [ONE * h, ONE * h]]).unwrap();
        let zz = PauliSum::from_labels(&[(1.0, "ZZ")]).unwrap();
        assert_abs_diff_eq!(s.expectation(&zz).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn variance_of_x_on_zero() {
        let x = PauliSum::from_labels(&[(1.0, "X")]).unwrap();
        let (m, v) = expectation(&Statevector::zero(1), &x, true).unwrap();
        assert_eq!((m, v.unwrap()), (0.0, 1.0));
    }

    #[test]
    fn deterministic_sampling() {
        let cfg = ShotConfig::new(100, 3).unwrap();
        let h = sample_counts(&Statevector::zero(1), &[], &cfg).unwrap();
        assert_eq!(h, Histogram::from([(0, 100)]));
        let plus = apply_gate(&Statevector::zero(1), &Gate::H(0)).unwrap();
        assert_eq!(sample_counts(&plus, &[], &cfg).unwrap(), sample_counts(&plus, &[], &cfg).unwrap());
        assert!(ShotConfig::new(0, 1).is_err());
    }

    #[test]
    fn plus_frequencies_approach_half() {
        let plus = apply_gate(&Statevector::zero(1), &Gate::H(0)).unwrap();
        let h = sample_counts(&plus, &[], &ShotConfig::new(1_000_000, 11).unwrap()).unwrap();
        assert!((h[&0] as f64 / 1e6 - 0.5).abs() < 5e-3);
    }

    #[test]
    fn sampled_zz_within_three_sigma() {
        let h = FRAC_1_SQRT_2;
        let s = Statevector::product(&[[ZERO, ONE], [ONE * h, ONE * h]]).unwrap();
        let zz = PauliSum::from_labels(&[(1.0, "ZZ")]).unwrap();
        let mut r = rng::stream(5, "shots");
        let (est, circuits) = sampled_expectation(&s, &zz, 10_000, &mut r).unwrap();
        assert_eq!(circuits, 1);
        assert!(est.abs() <= 3.0 / 100.0);
    }

    #[test]
    fn sampling_consistency_over_seeds() {
        let s = Statevector::random(3, 42);
        let p = s.probabilities();
        let n = 4000u64;
        for seed in 0..100 {
            let h = sample_counts(&s, &[], &ShotConfig::new(n, seed).unwrap()).unwrap();
            assert_eq!(h.values().sum::<u64>(), n);
            for (k, pk) in p.iter().enumerate() {
                let f = *h.get(&k).unwrap_or(&0) as f64 / n as f64;
                assert!((f - pk).abs() <= 5.0 / (n as f64).sqrt());
            }
        }
    }

    #[test]
    fn fidelity_cases() {
        let z = Statevector::zero(1);
        let one = Statevector::basis(1, 1);
        assert_abs_diff_eq!(fidelity(&z, &z, None).unwrap(), 1.0);
        assert_abs_diff_eq!(fidelity(&z, &one, None).unwrap(), 0.0);
        for t in [0.1, 1.0, 2.5] {
            let r = apply_gate(&z, &Gate::rx(0, t)).unwrap();
            assert_abs_diff_eq!(fidelity(&z, &r, None).unwrap(), (t / 2.0f64).cos().powi(2), epsilon = 1e-14);
        }
        assert!(fidelity(&z, &Statevector::zero(2), None).is_err());
        let sampled = fidelity(&z, &z, Some(&ShotConfig::new(100, 1).unwrap())).unwrap();
        assert_eq!(sampled, 1.0);
    }

    #[test]
    fn partial_trace_cases() {
        let mut bell = Statevector::zero(2);
        bell.apply(&Gate::H(0)).unwrap();
        bell.apply(&Gate::CX { control: 0, target: 1 }).unwrap();
        let r = partial_trace(&bell, &[0]).unwrap();
        assert!(r.trace_distance(&DensityOperator::maximally_mixed(1)).unwrap() < 1e-15);

        let h = FRAC_1_SQRT_2;
        let prod = Statevector::product(&[[ONE, ZERO], [ONE * h, ONE * h]]).unwrap();
        let r = partial_trace(&prod, &[1]).unwrap();
        let plus = Statevector::product(&[[ONE * h, ONE * h]]).unwrap();
        assert!(r.trace_distance(&DensityOperator::pure(&plus)).unwrap() < 1e-15);
        assert_abs_diff_eq!(r.purity(), 1.0, epsilon = 1e-12);
        assert!(partial_trace(&prod, &[]).is_err());
    }

    #[test]
    fn bell_pairs_reduce_to_maximally_mixed() {
        // Pairs (0,2) and (1,3), as prepared by the Gibbs ansatz at its
        // initial point.
        let mut s = Statevector::zero(4);
        for g in [Gate::H(0), Gate::H(1), Gate::CX { control: 0, target: 2 }, Gate::CX { control: 1, target: 3 }] {
            s.apply(&g).unwrap();
        }
        let r = partial_trace(&s, &[0, 1]).unwrap();
        assert!(r.trace_distance(&DensityOperator::maximally_mixed(2)).unwrap() < 1e-14);
    }

    #[test]
    fn readout_mitigation_example() {
        let m = ReadoutModel::new(vec![[[0.99, 0.02], [0.01, 0.98]]]).unwrap();
        let q = readout_apply_and_mitigate(&Histogram::from([(0, 10)]), &m, ReadoutDirection::Mitigate).unwrap();
        assert_abs_diff_eq!(q[0], 0.98 / 0.97, epsilon = 1e-12);
        assert_abs_diff_eq!(q[1], -0.01 / 0.97, epsilon = 1e-12);
        assert!((q[0] - 1.01).abs() < 1e-3 && (q[1] + 0.01).abs() < 1e-3);
        assert_abs_diff_eq!(q.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn readout_identity_and_round_trip() {
        let hist = Histogram::from([(0, 3), (2, 5), (3, 2)]);
        let id = ReadoutModel::identity(2);
        let p = histogram_probabilities(&hist, 2).unwrap();
        assert_eq!(readout_apply_and_mitigate(&hist, &id, ReadoutDirection::Mitigate).unwrap(), p);
        let m = ReadoutModel::new(vec![[[0.95, 0.1], [0.05, 0.9]], [[0.9, 0.03], [0.1, 0.97]]]).unwrap();
        let exact = Statevector::random(2, 9).probabilities();
        let back = m.apply(&m.apply(&exact, ReadoutDirection::Corrupt).unwrap(), ReadoutDirection::Mitigate).unwrap();
        for (a, b) in exact.iter().zip(&back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let bad = ReadoutModel::new(vec![[[0.4, 0.5], [0.6, 0.5]]]).unwrap();
        assert!(bad.apply(&[1.0, 0.0], ReadoutDirection::Mitigate).is_err());
        assert!(ReadoutModel::new(vec![[[0.4, 0.5], [0.5, 0.5]]]).is_err());
    }

    #[test]
    fn termwise_mitigation_matches_dense() {
        let m = ReadoutModel::new(vec![[[0.95, 0.1], [0.05, 0.9]], [[0.9, 0.03], [0.1, 0.97]], [[0.97, 0.02], [0.03, 0.98]]]).unwrap();
        let hist = Histogram::from([(0, 40), (3, 25), (5, 20), (6, 15)]);
        let q = readout_apply_and_mitigate(&hist, &m, ReadoutDirection::Mitigate).unwrap();
        for label in ["ZIZ", "IZI", "ZZZ", "III"] {
            let d: PauliString = label.parse().unwrap();
            let dense: f64 = q.iter().enumerate().map(|(k, v)| v * crate::pauli::diagonal_eigenvalue(&d, k).unwrap()).sum();
            assert_abs_diff_eq!(m.mitigated_expectation(&hist, &d).unwrap(), dense, epsilon = 1e-12);
        }
    }

    fn arb_gate(n: usize) -> impl Strategy<Value = Gate> {
        let q = 0..n;
        prop_oneof![
            q.clone().prop_map(Gate::H),
            q.clone().prop_map(Gate::S),
            q.clone().prop_map(Gate::Sdg),
            q.clone().prop_map(Gate::SX),
            q.clone().prop_map(Gate::Y),
            (q.clone(), -6.0f64..6.0).prop_map(|(q, t)| Gate::rx(q, t)),
            (q.clone(), -6.0f64..6.0).prop_map(|(q, t)| Gate::ry(q, t)),
            (q.clone(), -6.0f64..6.0).prop_map(|(q, t)| Gate::rz(q, t)),
            (q.clone(), 1..n, -6.0f64..6.0, 1usize..4, 1usize..4).prop_map(move |(a, o, t, pa, pb)| {
                let ps = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
                Gate::rpp(a, ps[pa], (a + o) % n, ps[pb], t)
            }),
            (q.clone(), 1..n).prop_map(move |(a, o)| Gate::CX { control: a, target: (a + o) % n }),
            (q.clone(), 1..n).prop_map(move |(a, o)| Gate::CZ(a, (a + o) % n)),
            (q, 1..n).prop_map(move |(a, o)| Gate::Swap(a, (a + o) % n)),
        ]
    }

    proptest! {
        #[test]
        fn gate_then_adjoint_is_identity(g in arb_gate(3), seed in 0u64..500) {
            let s = Statevector::random(3, seed);
            let mut t = s.clone();
            t.apply(&g).unwrap();
            prop_assert!((t.norm() - 1.0).abs() < 1e-10);
            t.apply(&g.adjoint()).unwrap();
            for (a, b) in s.amplitudes().iter().zip(t.amplitudes()) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }

        #[test]
        fn expectation_is_linear(seed in 0u64..500, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let s = Statevector::random(3, seed);
            let o1 = PauliSum::from_labels(&[(0.3, "XYZ"), (1.0, "IZZ")]).unwrap();
            let o2 = PauliSum::from_labels(&[(-0.7, "YII"), (0.2, "XXX")]).unwrap();
            let combo = o1.scaled(a).plus(&o2.scaled(b)).unwrap();
            let lhs = s.expectation(&combo).unwrap();
            let rhs = a * s.expectation(&o1).unwrap() + b * s.expectation(&o2).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn product_state_reductions_are_pure(angles in prop::collection::vec(0.0f64..PI, 3), keep in 0usize..3) {
            let single: Vec<[Complex64; 2]> = angles.iter().map(|t| [ONE * (t / 2.0).cos(), Complex64::from_polar((t / 2.0).sin(), *t)]).collect();
            let s = Statevector::product(&single).unwrap();
            let r = partial_trace(&s, &[keep]).unwrap();
            prop_assert!((r.purity() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn norm_drift_detected() {
        let amps = vec![ONE, ONE];
        assert!(matches!(Statevector::from_amplitudes(amps), Err(Error::NormDrift(_))));
        assert!(close_up_to_phase(&Statevector::zero(1), &Statevector::zero(1)));
    }
}
