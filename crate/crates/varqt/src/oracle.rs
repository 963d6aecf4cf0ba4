//! Exact references: dense real and imaginary time evolution, Gibbs states
//! and Suzuki-Trotter circuits.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuit::ParameterizedCircuit;
use crate::error::{Error, Result};
use crate::pauli::{diagonalizing_basis, PauliString, PauliSum, DENSE_LIMIT};
use crate::state::{DensityOperator, Gate, Statevector};

/// Largest register for which Gibbs states are formed.
pub const GIBBS_LIMIT: usize = 10;

/// Dense eigendecomposition of a Hamiltonian, reusable across times.
#[derive(Debug, Clone)]
pub struct Propagator {
    n_qubits: usize,
    values: DVector<f64>,
    vectors: DMatrix<Complex64>,
}

impl Propagator {
    pub fn new(h: &PauliSum) -> Result<Self> {
        let eig = SymmetricEigen::new(h.matrix()?);
        Ok(Propagator { n_qubits: h.n_qubits(), values: eig.eigenvalues, vectors: eig.eigenvectors })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn ground_energy(&self) -> f64 {
        self.values.min()
    }

    pub fn ground_state(&self) -> Result<Statevector> {
        Statevector::from_unnormalized(self.vectors.column(self.values.argmin().0).iter().copied().collect())
    }

    fn check(&self, psi: &Statevector) -> Result<()> {
        if psi.n_qubits() != self.n_qubits {
            return Err(Error::DimensionMismatch { expected: self.n_qubits, got: psi.n_qubits() });
        }
        Ok(())
    }

    /// Coefficients of `psi` in the eigenbasis, weighted by `f(lambda)`,
    /// transformed back.
    fn apply_fn(&self, psi: &Statevector, f: impl Fn(f64) -> Complex64) -> DVector<Complex64> {
        let v = DVector::from_column_slice(psi.amplitudes());
        let mut c = self.vectors.adjoint() * v;
        for (ci, l) in c.iter_mut().zip(self.values.iter()) {
            *ci *= f(*l);
        }
        &self.vectors * c
    }

    /// `exp(-i H t) psi`.
    pub fn real(&self, psi: &Statevector, t: f64) -> Result<Statevector> {
        self.check(psi)?;
        Statevector::from_unnormalized(self.apply_fn(psi, |l| Complex64::from_polar(1.0, -l * t)).iter().copied().collect())
    }

    /// Normalized `exp(-tau H) psi`; eigenvalues are shifted by the ground
    /// energy to avoid overflow.
    pub fn imag(&self, psi: &Statevector, tau: f64) -> Result<Statevector> {
        self.check(psi)?;
        let e0 = self.ground_energy();
        let out = self.apply_fn(psi, |l| Complex64::new((-(l - e0) * tau).exp(), 0.0));
        Statevector::from_unnormalized(out.iter().copied().collect())
    }

    /// `exp(-beta H) / Z`.
    pub fn gibbs(&self, beta: f64) -> Result<DensityOperator> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::invalid("inverse temperature must be finite and non-negative"));
        }
        if self.n_qubits > GIBBS_LIMIT {
            return Err(Error::SizeGuard { n_qubits: self.n_qubits, limit: GIBBS_LIMIT });
        }
        let e0 = self.ground_energy();
        let w: Vec<f64> = self.values.iter().map(|l| (-(l - e0) * beta).exp()).collect();
        let z: f64 = w.iter().sum();
        let d = DMatrix::from_diagonal(&DVector::from_iterator(w.len(), w.iter().map(|x| Complex64::new(x / z, 0.0))));
        DensityOperator::new(&self.vectors * d * self.vectors.adjoint())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealMethod {
    Eig,
    /// Repeated Cayley steps `(1 + i dt H/2)^-1 (1 - i dt H/2)`.
    Cayley { dt: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImagMethod {
    Eig,
    /// Normalized `(1 - dt H)` steps, halving `dt` until two successive
    /// results agree.
    Taylor { dt: f64 },
}

fn size_guard(h: &PauliSum) -> Result<()> {
    if h.n_qubits() > DENSE_LIMIT {
        return Err(Error::SizeGuard { n_qubits: h.n_qubits(), limit: DENSE_LIMIT });
    }
    Ok(())
}

fn step_count(total: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !total.is_finite() || total < 0.0 {
        return Err(Error::invalid("time and step must be finite with a positive step"));
    }
    Ok((total / dt - 1e-9).ceil().max(0.0) as usize)
}

pub fn exact_real_evolve(h: &PauliSum, psi0: &Statevector, t: f64, method: RealMethod) -> Result<Statevector> {
    size_guard(h)?;
    match method {
        RealMethod::Eig => Propagator::new(h)?.real(psi0, t),
        RealMethod::Cayley { dt } => {
            let steps = step_count(t.abs(), dt)?;
            if steps == 0 {
                return Ok(psi0.clone());
            }
            let h_dt = h.matrix()? * Complex64::new(0.0, t / steps as f64 / 2.0);
            let dim = h_dt.nrows();
            let lhs = (DMatrix::identity(dim, dim) + &h_dt).lu();
            let rhs = DMatrix::identity(dim, dim) - h_dt;
            let mut v = DVector::from_column_slice(psi0.amplitudes());
            for _ in 0..steps {
                v = lhs.solve(&(&rhs * v)).ok_or_else(|| Error::numerical("singular Cayley system"))?;
            }
            Statevector::from_amplitudes(v.iter().copied().collect())
        }
    }
}

pub fn exact_imag_evolve(h: &PauliSum, psi0: &Statevector, tau: f64, method: ImagMethod) -> Result<Statevector> {
    size_guard(h)?;
    match method {
        ImagMethod::Eig => Propagator::new(h)?.imag(psi0, tau),
        ImagMethod::Taylor { dt } => {
            let run = |dt: f64| -> Result<Statevector> {
                let steps = step_count(tau, dt)?;
                let dt = if steps == 0 { 0.0 } else { tau / steps as f64 };
                let mut amps = psi0.amplitudes().to_vec();
                for _ in 0..steps {
                    let h_psi = h.apply(&amps);
                    amps.iter_mut().zip(&h_psi).for_each(|(a, b)| *a -= b * dt);
                    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
                    amps.iter_mut().for_each(|a| *a /= norm);
                }
                Statevector::from_unnormalized(amps)
            };
            let mut dt = dt;
            let mut prev = run(dt)?;
            for _ in 0..20 {
                dt /= 2.0;
                let next = run(dt)?;
                let f = prev.inner(&next)?.norm_sqr();
                prev = next;
                if 1.0 - f < 1e-10 {
                    return Ok(prev);
                }
            }
            Err(Error::numerical("Taylor imaginary-time evolution did not converge"))
        }
    }
}

/// Inverse temperature paired with a Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsSpec {
    pub hamiltonian: PauliSum,
    pub beta: f64,
}

pub fn gibbs_state(spec: &GibbsSpec) -> Result<DensityOperator> {
    if spec.hamiltonian.n_qubits() > GIBBS_LIMIT {
        return Err(Error::SizeGuard { n_qubits: spec.hamiltonian.n_qubits(), limit: GIBBS_LIMIT });
    }
    Propagator::new(&spec.hamiltonian)?.gibbs(spec.beta)
}

/// `Tr(rho_G A)`.
pub fn thermal_average(spec: &GibbsSpec, observable: &PauliSum) -> Result<f64> {
    gibbs_state(spec)?.expectation(observable)
}

/// Appends `exp(-i angle P)` for a Pauli string: basis change onto Z, CX
/// chain onto the highest qubit of the support, one `R_Z`, then the undo.
pub fn push_pauli_exponential(c: &mut ParameterizedCircuit, string: &PauliString, angle: f64) -> Result<()> {
    let support = string.support();
    let Some(&last) = support.last() else {
        return Ok(());
    };
    let (basis, _) = diagonalizing_basis(string);
    let flat: Vec<Gate> = basis.into_iter().flatten().collect();
    for g in &flat {
        c.push_gate(g.clone())?;
    }
    for w in support.windows(2) {
        c.push_gate(Gate::CX { control: w[0], target: w[1] })?;
    }
    c.push_gate(Gate::rz(last, 2.0 * angle))?;
    for w in support.windows(2).rev() {
        c.push_gate(Gate::CX { control: w[0], target: w[1] })?;
    }
    for g in flat.iter().rev() {
        c.push_gate(g.adjoint())?;
    }
    Ok(())
}

/// Product-formula circuit for `exp(-i t H)` with `H` the sum of the
/// groups. Order 1 applies the groups in sequence each step; order 2 uses
/// the symmetric sandwich with half steps of the first group on the outside.
pub fn trotter_circuit(groups: &[PauliSum], order: u8, steps: usize, t: f64) -> Result<ParameterizedCircuit> {
    let n = groups.first().ok_or_else(|| Error::invalid("trotter circuit needs at least one group"))?.n_qubits();
    if steps == 0 || !t.is_finite() {
        return Err(Error::invalid("trotter circuit needs at least one step and a finite time"));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.n_qubits() != n {
            return Err(Error::DimensionMismatch { expected: n, got: g.n_qubits() });
        }
        if !g.is_commuting() {
            return Err(Error::invalid(format!("trotter group {i} contains non-commuting terms")));
        }
    }
    let dt = t / steps as f64;
    let m = groups.len();
    let mut schedule: Vec<(usize, f64)> = Vec::new();
    let mut push = |g: usize, f: f64| match schedule.last_mut() {
        Some((last, w)) if *last == g => *w += f,
        _ => schedule.push((g, f)),
    };
    for _ in 0..steps {
        match order {
            1 => (0..m).for_each(|g| push(g, 1.0)),
            2 => {
                (0..m - 1).for_each(|g| push(g, 0.5));
                push(m - 1, 1.0);
                (0..m - 1).rev().for_each(|g| push(g, 0.5));
            }
            _ => return Err(Error::Unsupported(format!("trotter order {order}"))),
        }
    }
    let mut c = ParameterizedCircuit::new(n, 0);
    for (g, w) in schedule {
        for (coeff, string) in groups[g].terms() {
            push_pauli_exponential(&mut c, string, coeff * w * dt)?;
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{InitialState, Single};
    use crate::pauli::{build_model, split_diagonal, Model, Topology};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn plus() -> Statevector {
        InitialState::Uniform(Single::Plus).state(1).unwrap()
    }

    fn z1() -> PauliSum {
        PauliSum::from_labels(&[(1.0, "Z")]).unwrap()
    }

    fn x1() -> PauliSum {
        PauliSum::from_labels(&[(1.0, "X")]).unwrap()
    }

    #[test]
    fn precession_about_z() {
        for t in [0.0, 0.3, FRAC_PI_4, 1.4] {
            let s = exact_real_evolve(&z1(), &plus(), t, RealMethod::Eig).unwrap();
            assert_abs_diff_eq!(s.expectation(&x1()).unwrap(), (2.0 * t).cos(), epsilon = 1e-12);
        }
        let s = exact_real_evolve(&z1(), &plus(), 0.0, RealMethod::Eig).unwrap();
        assert_eq!(crate::state::fidelity(&s, &plus(), None).unwrap(), 1.0);
    }

    #[test]
    fn cayley_matches_eig() {
        let h = build_model(&Model::Heisenberg { n: 3, j: 0.25, h: -1.0 }, &Topology::Line).unwrap();
        let psi = Statevector::random(3, 4);
        let a = exact_real_evolve(&h, &psi, 1.0, RealMethod::Eig).unwrap();
        let b = exact_real_evolve(&h, &psi, 1.0, RealMethod::Cayley { dt: 1e-3 }).unwrap();
        assert!(crate::state::fidelity(&a, &b, None).unwrap() >= 1.0 - 1e-8);
        assert!((b.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn imaginary_time_cases() {
        for tau in [0.0, 0.2, 1.0] {
            let s = exact_imag_evolve(&z1(), &plus(), tau, ImagMethod::Eig).unwrap();
            let a = s.amplitudes();
            assert_abs_diff_eq!(a[0].re / a[1].re, (-2.0 * tau).exp(), epsilon = 1e-12);
        }
        let h = build_model(&Model::Tfim { n: 4, j: 0.5, h: -1.0 }, &Topology::Line).unwrap();
        let p = Propagator::new(&h).unwrap();
        let psi = InitialState::Uniform(Single::Plus).state(4).unwrap();
        let s = exact_imag_evolve(&h, &psi, 30.0, ImagMethod::Eig).unwrap();
        assert!(crate::state::fidelity(&s, &p.ground_state().unwrap(), None).unwrap() >= 1.0 - 1e-6);
        let t = exact_imag_evolve(&h, &psi, 1.0, ImagMethod::Taylor { dt: 0.01 }).unwrap();
        let e = exact_imag_evolve(&h, &psi, 1.0, ImagMethod::Eig).unwrap();
        assert!(crate::state::fidelity(&t, &e, None).unwrap() >= 1.0 - 1e-7);
    }

    #[test]
    fn imaginary_energy_is_non_increasing() {
        let h = build_model(&Model::Heisenberg { n: 4, j: 0.25, h: -1.0 }, &Topology::Ring).unwrap();
        let p = Propagator::new(&h).unwrap();
        let psi = Statevector::random(4, 1);
        let mut last = f64::INFINITY;
        for k in 0..40 {
            let e = p.imag(&psi, 0.1 * k as f64).unwrap().expectation(&h).unwrap();
            assert!(e <= last + 1e-12);
            last = e;
        }
    }

    #[test]
    fn gibbs_limits() {
        let h = PauliSum::from_labels(&[(1.0, "ZZ"), (0.3, "IZ")]).unwrap();
        let hot = gibbs_state(&GibbsSpec { hamiltonian: h.clone(), beta: 0.0 }).unwrap();
        assert!(hot.trace_distance(&DensityOperator::maximally_mixed(2)).unwrap() < 1e-14);
        let cold = gibbs_state(&GibbsSpec { hamiltonian: h.clone(), beta: 200.0 }).unwrap();
        let g = Propagator::new(&h).unwrap().ground_state().unwrap();
        assert!(cold.trace_distance(&DensityOperator::pure(&g)).unwrap() < 1e-10);
        cold.validate(1e-10).unwrap();
        assert!(gibbs_state(&GibbsSpec { hamiltonian: h, beta: -1.0 }).is_err());
    }

    #[test]
    fn purified_gibbs_state() {
        // exp(-beta/2 H_A) on Bell pairs between A = {0, 1} and B = {2, 3},
        // reduced to A, equals the Gibbs state of H_A.
        let h_a = PauliSum::from_labels(&[(1.0, "ZZ"), (0.4, "XI")]).unwrap();
        let h_full = PauliSum::from_terms(
            4,
            h_a.terms().iter().map(|(c, p)| (*c, PauliString::new([p.ops(), &[crate::pauli::Pauli::I; 2]].concat()))).collect(),
        )
        .unwrap();
        let bell = InitialState::MaximallyMixedA.state(4).unwrap();
        let evolved = exact_imag_evolve(&h_full, &bell, 0.5, ImagMethod::Eig).unwrap();
        let rho = crate::state::partial_trace(&evolved, &[0, 1]).unwrap();
        let want = gibbs_state(&GibbsSpec { hamiltonian: h_a, beta: 1.0 }).unwrap();
        assert!(rho.trace_distance(&want).unwrap() <= 1e-10);
    }

    #[test]
    fn commuting_hamiltonian_is_exact_in_one_step() {
        let h = build_model(&Model::Tfim { n: 4, j: 1.0, h: 0.0 }, &Topology::Ring).unwrap();
        let c = trotter_circuit(&[h.clone()], 1, 1, 0.7).unwrap();
        let psi = Statevector::random(4, 2);
        let a = c.simulate_from(psi.clone(), &[]).unwrap();
        let b = exact_real_evolve(&h, &psi, 0.7, RealMethod::Eig).unwrap();
        assert!(crate::state::fidelity(&a, &b, None).unwrap() >= 1.0 - 1e-10);
    }

    #[test]
    fn pauli_exponentials_match_dense() {
        for label in ["XYZ", "YIX", "IZI", "ZZY"] {
            let s: PauliString = label.parse().unwrap();
            let mut c = ParameterizedCircuit::new(3, 0);
            push_pauli_exponential(&mut c, &s, 0.37).unwrap();
            let psi = Statevector::random(3, 6);
            let h = PauliSum::from_terms(3, vec![(1.0, s)]).unwrap();
            let want = exact_real_evolve(&h, &psi, 0.37, RealMethod::Eig).unwrap();
            let got = c.simulate_from(psi, &[]).unwrap();
            assert!(crate::state::fidelity(&got, &want, None).unwrap() >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn second_order_beats_first_order() {
        let h = build_model(&Model::TiltedIsing { n: 4, j: 1.0, hx: 0.9, hz: 0.8 }, &Topology::Ring).unwrap();
        let (hz, hx) = split_diagonal(&h);
        let psi = Statevector::random(4, 3);
        let exact = exact_real_evolve(&h, &psi, 1.0, RealMethod::Eig).unwrap();
        let err = |order, steps| {
            let c = trotter_circuit(&[hx.clone(), hz.clone()], order, steps, 1.0).unwrap();
            1.0 - crate::state::fidelity(&c.simulate_from(psi.clone(), &[]).unwrap(), &exact, None).unwrap()
        };
        assert!(err(2, 10) < err(1, 10));
        // infidelity scales as the squared state error: order 4 in dt for order 2.
        let ratio = err(2, 10) / err(2, 20);
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
        let noncommuting = PauliSum::from_labels(&[(1.0, "XI"), (1.0, "ZI")]).unwrap();
        assert!(trotter_circuit(&[noncommuting], 1, 1, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn oracles_agree(seed in 0u64..1000, t in 0.0f64..1.5) {
            let h = build_model(&Model::Heisenberg { n: 3, j: 0.25, h: -1.0 }, &Topology::Line).unwrap();
            let psi = Statevector::random(3, seed);
            let a = exact_imag_evolve(&h, &psi, t, ImagMethod::Eig).unwrap();
            let b = exact_imag_evolve(&h, &psi, t, ImagMethod::Taylor { dt: 0.01 }).unwrap();
            prop_assert!(crate::state::fidelity(&a, &b, None).unwrap() >= 1.0 - 1e-8);
        }
    }
}
