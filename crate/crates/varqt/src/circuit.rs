//! Parameterized circuits, the ansatz library and simulation entry points.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::{Pauli, PauliSum, Topology};
use crate::rng;
use crate::state::{Gate, Statevector};

/// Rotation angle: `coeff * theta[index]` or a literal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Angle {
    Param { index: usize, coeff: f64 },
    Fixed(f64),
}

impl Angle {
    pub fn param(index: usize) -> Angle {
        Angle::Param { index, coeff: 1.0 }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        match *self {
            Angle::Param { index, coeff } => coeff * theta[index],
            Angle::Fixed(a) => a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Unparameterized gate, including fixed-angle rotations.
    Fixed(Gate),
    Rotation { qubits: Vec<usize>, axis: Vec<Pauli>, angle: Angle },
}

impl Op {
    pub fn bind(&self, theta: &[f64]) -> Gate {
        match self {
            Op::Fixed(g) => g.clone(),
            Op::Rotation { qubits, axis, angle } => Gate::Rot { qubits: qubits.clone(), axis: axis.clone(), angle: angle.value(theta) },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterizedCircuit {
    n_qubits: usize,
    n_params: usize,
    ops: Vec<Op>,
}

impl ParameterizedCircuit {
    pub fn new(n_qubits: usize, n_params: usize) -> Self {
        ParameterizedCircuit { n_qubits, n_params, ops: Vec::new() }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn push_gate(&mut self, gate: Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        match gate {
            Gate::Rot { qubits, axis, angle } => self.ops.push(Op::Rotation { qubits, axis, angle: Angle::Fixed(angle) }),
            g => self.ops.push(Op::Fixed(g)),
        }
        Ok(())
    }

    pub fn push_rotation(&mut self, qubits: Vec<usize>, axis: Vec<Pauli>, angle: Angle) -> Result<()> {
        let probe = Gate::Rot { qubits: qubits.clone(), axis: axis.clone(), angle: 0.0 };
        probe.validate(self.n_qubits)?;
        match angle {
            Angle::Param { index, coeff } => {
                if index >= self.n_params {
                    return Err(Error::invalid(format!("parameter index {index} out of range for {} parameters", self.n_params)));
                }
                if !coeff.is_finite() {
                    return Err(Error::invalid("parameter coefficient must be finite"));
                }
            }
            Angle::Fixed(a) if !a.is_finite() => return Err(Error::invalid("rotation angle must be finite")),
            Angle::Fixed(_) => {}
        }
        self.ops.push(Op::Rotation { qubits, axis, angle });
        Ok(())
    }

    /// Single-qubit rotation about `axis` driven by `theta[index]`.
    pub fn push_param(&mut self, q: usize, axis: Pauli, index: usize) -> Result<()> {
        self.push_rotation(vec![q], vec![axis], Angle::param(index))
    }

    /// Appends another circuit on the same register; its parameters are
    /// shifted by `offset`.
    pub fn extend_from(&mut self, other: &ParameterizedCircuit, offset: usize) -> Result<()> {
        if other.n_qubits != self.n_qubits {
            return Err(Error::DimensionMismatch { expected: self.n_qubits, got: other.n_qubits });
        }
        for op in &other.ops {
            match op {
                Op::Fixed(g) => self.push_gate(g.clone())?,
                Op::Rotation { qubits, axis, angle } => {
                    let angle = match *angle {
                        Angle::Param { index, coeff } => Angle::Param { index: index + offset, coeff },
                        a => a,
                    };
                    self.push_rotation(qubits.clone(), axis.clone(), angle)?
                }
            }
        }
        Ok(())
    }

    /// True iff every parameter appears exactly once with coefficient 1.
    pub fn has_unique_parameters(&self) -> bool {
        let mut seen = vec![false; self.n_params];
        for op in &self.ops {
            if let Op::Rotation { angle: Angle::Param { index, coeff }, .. } = op {
                if *coeff != 1.0 || seen[*index] {
                    return false;
                }
                seen[*index] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn check_params(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params {
            return Err(Error::DimensionMismatch { expected: self.n_params, got: theta.len() });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(())
    }

    pub fn bind(&self, theta: &[f64]) -> Result<Vec<Gate>> {
        self.check_params(theta)?;
        Ok(self.ops.iter().map(|op| op.bind(theta)).collect())
    }

    /// Prepares the circuit state from `|0...0>`.
    pub fn simulate(&self, theta: &[f64]) -> Result<Statevector> {
        self.simulate_from(Statevector::zero(self.n_qubits), theta)
    }

    pub fn simulate_from(&self, mut state: Statevector, theta: &[f64]) -> Result<Statevector> {
        if state.n_qubits() != self.n_qubits {
            return Err(Error::DimensionMismatch { expected: self.n_qubits, got: state.n_qubits() });
        }
        self.check_params(theta)?;
        for op in &self.ops {
            state.apply_unchecked(&op.bind(theta));
        }
        state.check_norm()?;
        Ok(state)
    }

    /// Applies the inverse circuit to `state`.
    pub fn apply_inverse(&self, mut state: Statevector, theta: &[f64]) -> Result<Statevector> {
        self.check_params(theta)?;
        for op in self.ops.iter().rev() {
            state.apply_unchecked(&op.bind(theta).adjoint());
        }
        state.check_norm()?;
        Ok(state)
    }

    /// Rewrites every parameter occurrence as its own unit-coefficient slot.
    pub fn expand_unique(&self) -> UniqueExpansion {
        let mut circuit = ParameterizedCircuit::new(self.n_qubits, 0);
        let mut slots = Vec::new();
        for op in &self.ops {
            match op {
                Op::Rotation { qubits, axis, angle: Angle::Param { index, coeff } } => {
                    circuit.ops.push(Op::Rotation { qubits: qubits.clone(), axis: axis.clone(), angle: Angle::param(slots.len()) });
                    slots.push((*index, *coeff));
                }
                other => circuit.ops.push(other.clone()),
            }
        }
        circuit.n_params = slots.len();
        UniqueExpansion { circuit, slots, n_params: self.n_params }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("QUBITS {}\nPARAMS {}\n", self.n_qubits, self.n_params);
        for op in &self.ops {
            let line = match op {
                Op::Fixed(Gate::Rot { qubits, axis, angle }) => rotation_text(qubits, axis, &format!("{angle:?}")),
                Op::Fixed(g) => {
                    let (name, qs) = gate_name(g);
                    let qs: Vec<String> = qs.iter().map(|q| q.to_string()).collect();
                    format!("{name} {}", qs.join(" "))
                }
                Op::Rotation { qubits, axis, angle } => {
                    let a = match angle {
                        Angle::Param { index, coeff } => format!("{coeff:?}*p{index}"),
                        Angle::Fixed(v) => format!("{v:?}"),
                    };
                    rotation_text(qubits, axis, &a)
                }
            };
            let _ = writeln!(s, "{line}");
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<ParameterizedCircuit> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = |line: Option<&str>, key: &str| -> Result<usize> {
            let line = line.ok_or_else(|| Error::Parse(format!("missing {key} header")))?;
            let rest = line.strip_prefix(key).ok_or_else(|| Error::Parse(format!("expected {key} header, got '{line}'")))?;
            rest.trim().parse().map_err(|_| Error::Parse(format!("bad {key} value '{rest}'")))
        };
        let n_qubits = header(lines.next(), "QUBITS")?;
        let n_params = header(lines.next(), "PARAMS")?;
        let mut c = ParameterizedCircuit::new(n_qubits, n_params);
        for line in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            let name = toks[0];
            let q = |i: usize| -> Result<usize> {
                toks.get(i).ok_or_else(|| Error::Parse(format!("missing qubit in '{line}'")))?.parse().map_err(|_| Error::Parse(format!("bad qubit in '{line}'")))
            };
            let gate = match name {
                "H" => Some(Gate::H(q(1)?)),
                "S" => Some(Gate::S(q(1)?)),
                "SDG" => Some(Gate::Sdg(q(1)?)),
                "X" => Some(Gate::X(q(1)?)),
                "Y" => Some(Gate::Y(q(1)?)),
                "Z" => Some(Gate::Z(q(1)?)),
                "SX" => Some(Gate::SX(q(1)?)),
                "SXDG" => Some(Gate::SXdg(q(1)?)),
                "CX" => Some(Gate::CX { control: q(1)?, target: q(2)? }),
                "CZ" => Some(Gate::CZ(q(1)?, q(2)?)),
                "SWAP" => Some(Gate::Swap(q(1)?, q(2)?)),
                _ => None,
            };
            if let Some(g) = gate {
                if toks.len() != g.qubits().len() + 1 {
                    return Err(Error::Parse(format!("wrong operand count in '{line}'")));
                }
                c.push_gate(g).map_err(|e| Error::Parse(format!("{e} in '{line}'")))?;
                continue;
            }
            let axis_str = name.strip_prefix('R').filter(|a| !a.is_empty()).ok_or_else(|| Error::Parse(format!("unknown gate '{name}'")))?;
            let axis = axis_str.chars().map(Pauli::from_char).collect::<Result<Vec<_>>>().map_err(|_| Error::Parse(format!("unknown gate '{name}'")))?;
            if toks.len() != axis.len() + 2 {
                return Err(Error::Parse(format!("wrong operand count in '{line}'")));
            }
            let qubits = (1..=axis.len()).map(q).collect::<Result<Vec<_>>>()?;
            let angle = parse_angle(toks[axis.len() + 1])?;
            c.push_rotation(qubits, axis, angle).map_err(|e| Error::Parse(format!("{e} in '{line}'")))?;
        }
        Ok(c)
    }
}

fn rotation_text(qubits: &[usize], axis: &[Pauli], angle: &str) -> String {
    let a: String = axis.iter().map(|p| p.as_char()).collect();
    let qs: Vec<String> = qubits.iter().map(|q| q.to_string()).collect();
    format!("R{a} {} {angle}", qs.join(" "))
}

fn gate_name(g: &Gate) -> (&'static str, Vec<usize>) {
    let name = match g {
        Gate::H(_) => "H",
        Gate::S(_) => "S",
        Gate::Sdg(_) => "SDG",
        Gate::X(_) => "X",
        Gate::Y(_) => "Y",
        Gate::Z(_) => "Z",
        Gate::SX(_) => "SX",
        Gate::SXdg(_) => "SXDG",
        Gate::CX { .. } => "CX",
        Gate::CZ(..) => "CZ",
        Gate::Swap(..) => "SWAP",
        Gate::Rot { .. } => "R",
    };
    (name, g.qubits())
}

fn parse_angle(tok: &str) -> Result<Angle> {
    let bad = || Error::Parse(format!("bad angle '{tok}'"));
    if let Some((c, p)) = tok.split_once('*') {
        let coeff: f64 = c.parse().map_err(|_| bad())?;
        let index = p.strip_prefix('p').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        Ok(Angle::Param { index, coeff })
    } else if let Some(p) = tok.strip_prefix('p') {
        Ok(Angle::param(p.parse().map_err(|_| bad())?))
    } else {
        Ok(Angle::Fixed(tok.parse().map_err(|_| bad())?))
    }
}

/// A circuit whose parameter occurrences were split into unique slots.
/// Slot `s` takes the value `coeff_s * theta[index_s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniqueExpansion {
    pub circuit: ParameterizedCircuit,
    pub slots: Vec<(usize, f64)>,
    pub n_params: usize,
}

impl UniqueExpansion {
    pub fn slot_values(&self, theta: &[f64]) -> Vec<f64> {
        self.slots.iter().map(|(i, c)| c * theta[*i]).collect()
    }

    /// Chain rule: `J^T v` for a slot-space vector.
    pub fn contract_vector<T>(&self, slot_vec: &[T]) -> Vec<T>
    where
        T: Copy + Default + std::ops::AddAssign + std::ops::Mul<f64, Output = T>,
    {
        let mut out = vec![T::default(); self.n_params];
        for ((i, c), v) in self.slots.iter().zip(slot_vec) {
            out[*i] += *v * *c;
        }
        out
    }

    /// `J^T M J` for a slot-space matrix.
    pub fn contract_matrix(&self, m: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
        let mut j = nalgebra::DMatrix::zeros(self.slots.len(), self.n_params);
        for (s, (i, c)) in self.slots.iter().enumerate() {
            j[(s, *i)] = *c;
        }
        j.transpose() * m * j
    }
}

/// Ansatz families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnsatzSpec {
    EfficientSu2 {
        n: usize,
        reps: usize,
        #[serde(default)]
        topology: Option<Topology>,
        /// First rotation axis in each layer, `Y` (default) or `X`.
        #[serde(default)]
        first_axis: Option<char>,
    },
    PauliTwoDesign {
        n: usize,
        reps: usize,
        #[serde(default)]
        seed: u64,
    },
    Brickwall {
        n: usize,
        reps: usize,
    },
    Qaoa {
        cost: Vec<(f64, String)>,
        #[serde(default)]
        mixer: Option<Vec<(f64, String)>>,
        reps: usize,
    },
    GibbsPair,
    ControlledPair,
    SharedRotation,
}

impl AnsatzSpec {
    pub fn build(&self) -> Result<ParameterizedCircuit> {
        match self {
            AnsatzSpec::EfficientSu2 { n, reps, topology, first_axis } => {
                let axis = match first_axis.unwrap_or('Y') {
                    'Y' | 'y' => Pauli::Y,
                    'X' | 'x' => Pauli::X,
                    c => return Err(Error::invalid(format!("efficient_su2 first axis must be X or Y, got {c}"))),
                };
                efficient_su2(*n, *reps, topology.as_ref().unwrap_or(&Topology::Line), axis)
            }
            AnsatzSpec::PauliTwoDesign { n, reps, seed } => pauli_two_design(*n, *reps, *seed),
            AnsatzSpec::Brickwall { n, reps } => brickwall(*n, *reps),
            AnsatzSpec::Qaoa { cost, mixer, reps } => {
                let to_sum = |terms: &[(f64, String)]| {
                    let refs: Vec<(f64, &str)> = terms.iter().map(|(c, l)| (*c, l.as_str())).collect();
                    PauliSum::from_labels(&refs)
                };
                let cost = to_sum(cost)?;
                let mixer = match mixer {
                    Some(m) => to_sum(m)?,
                    None => x_mixer(cost.n_qubits()),
                };
                qaoa(&cost, &mixer, *reps)
            }
            AnsatzSpec::GibbsPair => gibbs_pair(),
            AnsatzSpec::ControlledPair => controlled_pair(),
            AnsatzSpec::SharedRotation => shared_rotation(),
        }
    }
}

fn check_size(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid("ansatz needs at least 2 qubits"));
    }
    Ok(())
}

/// Rotation layers (`first_axis` then `R_Z`) alternating with CX over the
/// topology's pairs, plus a final rotation layer: `2n(r+1)` parameters.
pub fn efficient_su2(n: usize, reps: usize, topology: &Topology, first_axis: Pauli) -> Result<ParameterizedCircuit> {
    check_size(n)?;
    let pairs = topology.pairs(n);
    let mut c = ParameterizedCircuit::new(n, 2 * n * (reps + 1));
    let mut k = 0;
    for layer in 0..=reps {
        for axis in [first_axis, Pauli::Z] {
            for q in 0..n {
                c.push_param(q, axis, k)?;
                k += 1;
            }
        }
        if layer < reps {
            for &(a, b) in &pairs {
                c.push_gate(Gate::CX { control: a, target: b })?;
            }
        }
    }
    Ok(c)
}

/// `R_Y(pi/4)` layer, then `reps` blocks of random-axis rotations and two
/// staggered CZ layers, then a final random-axis layer: `n(r+1)` parameters.
pub fn pauli_two_design(n: usize, reps: usize, seed: u64) -> Result<ParameterizedCircuit> {
    let mut r = rng::stream(seed, rng::streams::TWODESIGN_AXES);
    let axes: Vec<Pauli> = (0..n * (reps + 1)).map(|_| [Pauli::X, Pauli::Y, Pauli::Z][r.random_range(0..3)]).collect();
    pauli_two_design_with_axes(n, reps, &axes)
}

pub fn pauli_two_design_with_axes(n: usize, reps: usize, axes: &[Pauli]) -> Result<ParameterizedCircuit> {
    check_size(n)?;
    let d = n * (reps + 1);
    if axes.len() != d || axes.contains(&Pauli::I) {
        return Err(Error::invalid(format!("two-design needs {d} non-identity axes")));
    }
    let mut c = ParameterizedCircuit::new(n, d);
    for q in 0..n {
        c.push_gate(Gate::ry(q, FRAC_PI_4))?;
    }
    let mut k = 0;
    for layer in 0..=reps {
        for q in 0..n {
            c.push_param(q, axes[k], k)?;
            k += 1;
        }
        if layer < reps {
            for start in [0, 1] {
                for a in (start..n.saturating_sub(1)).step_by(2) {
                    c.push_gate(Gate::CZ(a, a + 1))?;
                }
            }
        }
    }
    Ok(c)
}

/// `R_X` layers alternating with `R_ZZ` on neighbouring pairs (even pairs,
/// then odd), final `R_Y` layer: `r(2n-1) + n` parameters.
pub fn brickwall(n: usize, reps: usize) -> Result<ParameterizedCircuit> {
    check_size(n)?;
    let mut c = ParameterizedCircuit::new(n, reps * (2 * n - 1) + n);
    let mut k = 0;
    for _ in 0..reps {
        for q in 0..n {
            c.push_param(q, Pauli::X, k)?;
            k += 1;
        }
        for start in [0, 1] {
            for a in (start..n - 1).step_by(2) {
                c.push_rotation(vec![a, a + 1], vec![Pauli::Z, Pauli::Z], Angle::param(k))?;
                k += 1;
            }
        }
    }
    for q in 0..n {
        c.push_param(q, Pauli::Y, k)?;
        k += 1;
    }
    Ok(c)
}

/// `sum_j X_j`.
pub fn x_mixer(n: usize) -> PauliSum {
    let mut m = PauliSum::new(n);
    for q in 0..n {
        m.push(1.0, crate::pauli::PauliString::from_sparse(n, &[(q, Pauli::X)]).expect("in range")).expect("finite");
    }
    m
}

/// Hadamards, then `reps` blocks `exp(-i beta_p M) exp(-i gamma_p C)` with
/// parameters ordered `(gamma_1, beta_1, gamma_2, ...)`.
pub fn qaoa(cost: &PauliSum, mixer: &PauliSum, reps: usize) -> Result<ParameterizedCircuit> {
    let n = cost.n_qubits();
    if mixer.n_qubits() != n {
        return Err(Error::DimensionMismatch { expected: n, got: mixer.n_qubits() });
    }
    if reps == 0 {
        return Err(Error::invalid("qaoa needs at least one repetition"));
    }
    for (name, sum) in [("cost", cost), ("mixer", mixer)] {
        if !sum.is_commuting() {
            return Err(Error::Unsupported(format!("qaoa {name} terms must commute for exact exponentiation")));
        }
    }
    let mut c = ParameterizedCircuit::new(n, 2 * reps);
    for q in 0..n {
        c.push_gate(Gate::H(q))?;
    }
    for p in 0..reps {
        for (offset, sum) in [(0, cost), (1, mixer)] {
            for (coeff, string) in sum.terms() {
                let support = string.support();
                if support.is_empty() {
                    continue;
                }
                let axis = support.iter().map(|&q| string.get(q)).collect();
                c.push_rotation(support, axis, Angle::Param { index: 2 * p + offset, coeff: 2.0 * coeff })?;
            }
        }
    }
    Ok(c)
}

/// Four-qubit, two-layer `R_Y`/`R_Z` + CX circuit with 16 parameters used for
/// Gibbs-state preparation. System A is qubits 0 and 1.
pub fn gibbs_pair() -> Result<ParameterizedCircuit> {
    let mut c = ParameterizedCircuit::new(4, 16);
    let mut k = 0;
    let entanglers: [&[(usize, usize)]; 2] = [&[(1, 0), (2, 1), (3, 2)], &[(0, 2), (1, 3)]];
    for pairs in entanglers {
        for axis in [Pauli::Y, Pauli::Z] {
            for q in 0..4 {
                c.push_param(q, axis, k)?;
                k += 1;
            }
        }
        for &(a, b) in pairs {
            c.push_gate(Gate::CX { control: a, target: b })?;
        }
    }
    Ok(c)
}

/// `R_X(theta_0)` on qubit 0, then a controlled `R_Y(theta_1)` from qubit 0
/// onto qubit 1, decomposed into two half-angle rotations and two CX.
pub fn controlled_pair() -> Result<ParameterizedCircuit> {
    let mut c = ParameterizedCircuit::new(2, 2);
    c.push_param(0, Pauli::X, 0)?;
    c.push_rotation(vec![1], vec![Pauli::Y], Angle::Param { index: 1, coeff: 0.5 })?;
    c.push_gate(Gate::CX { control: 0, target: 1 })?;
    c.push_rotation(vec![1], vec![Pauli::Y], Angle::Param { index: 1, coeff: -0.5 })?;
    c.push_gate(Gate::CX { control: 0, target: 1 })?;
    Ok(c)
}

/// Single qubit `R_Z(theta) R_Y(theta)|0>` with one shared parameter.
pub fn shared_rotation() -> Result<ParameterizedCircuit> {
    let mut c = ParameterizedCircuit::new(1, 1);
    c.push_param(0, Pauli::Y, 0)?;
    c.push_param(0, Pauli::Z, 0)?;
    Ok(c)
}

/// Single-qubit product-state targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Single {
    Zero,
    One,
    Plus,
    Minus,
    PlusI,
    MinusI,
}

impl Single {
    pub fn amplitudes(self) -> [num_complex::Complex64; 2] {
        use num_complex::Complex64 as C;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Single::Zero => [C::new(1.0, 0.0), C::new(0.0, 0.0)],
            Single::One => [C::new(0.0, 0.0), C::new(1.0, 0.0)],
            Single::Plus => [C::new(h, 0.0), C::new(h, 0.0)],
            Single::Minus => [C::new(h, 0.0), C::new(-h, 0.0)],
            Single::PlusI => [C::new(h, 0.0), C::new(0.0, h)],
            Single::MinusI => [C::new(h, 0.0), C::new(0.0, -h)],
        }
    }

    /// Angles `(a, z)` with `R_Z(z) R_axis(a)|0>` equal to this state up to
    /// a global phase.
    fn angles(self, axis: Pauli) -> (f64, f64) {
        match (axis, self) {
            (_, Single::Zero) => (0.0, 0.0),
            (_, Single::One) => (PI, 0.0),
            (Pauli::X, Single::Plus) => (FRAC_PI_2, FRAC_PI_2),
            (Pauli::X, Single::Minus) => (FRAC_PI_2, -FRAC_PI_2),
            (Pauli::X, Single::PlusI) => (FRAC_PI_2, PI),
            (Pauli::X, Single::MinusI) => (FRAC_PI_2, 0.0),
            (_, Single::Plus) => (FRAC_PI_2, 0.0),
            (_, Single::Minus) => (-FRAC_PI_2, 0.0),
            (_, Single::PlusI) => (FRAC_PI_2, FRAC_PI_2),
            (_, Single::MinusI) => (FRAC_PI_2, -FRAC_PI_2),
        }
    }
}

/// Named initial states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Zero,
    /// The same single-qubit state on every qubit.
    Uniform(Single),
    /// Qubit `q` in `states[q]`.
    Product(Vec<Single>),
    /// Bell pairs between system A and system B of the Gibbs ansatz.
    MaximallyMixedA,
}

impl InitialState {
    /// The target as an explicit statevector, where that is defined.
    pub fn state(&self, n_qubits: usize) -> Result<Statevector> {
        match self {
            InitialState::Zero => Ok(Statevector::zero(n_qubits)),
            InitialState::Uniform(s) => Statevector::product(&vec![s.amplitudes(); n_qubits]),
            InitialState::Product(v) => {
                if v.len() != n_qubits {
                    return Err(Error::DimensionMismatch { expected: n_qubits, got: v.len() });
                }
                Statevector::product(&v.iter().map(|s| s.amplitudes()).collect::<Vec<_>>())
            }
            InitialState::MaximallyMixedA => {
                let mut s = Statevector::zero(4);
                for g in [Gate::H(0), Gate::H(1), Gate::CX { control: 0, target: 2 }, Gate::CX { control: 1, target: 3 }] {
                    s.apply(&g)?;
                }
                Ok(s)
            }
        }
    }
}

/// Parameters that make the ansatz prepare `target` exactly.
pub fn initial_parameters(spec: &AnsatzSpec, target: &InitialState) -> Result<Vec<f64>> {
    let circuit = spec.build()?;
    let d = circuit.n_params();
    let n = circuit.n_qubits();
    let mut theta = vec![0.0; d];
    let unknown = || Error::invalid(format!("initial state {target:?} is not available for this ansatz"));
    let per_qubit: Vec<Single> = match target {
        InitialState::Zero => return Ok(theta),
        InitialState::Uniform(s) => vec![*s; n],
        InitialState::Product(v) => {
            if v.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: v.len() });
            }
            v.clone()
        }
        InitialState::MaximallyMixedA => {
            return match spec {
                AnsatzSpec::GibbsPair => {
                    theta[8] = FRAC_PI_2;
                    theta[9] = FRAC_PI_2;
                    Ok(theta)
                }
                _ => Err(unknown()),
            }
        }
    };
    match spec {
        AnsatzSpec::EfficientSu2 { reps, first_axis, .. } => {
            let axis = if matches!(first_axis, Some('X' | 'x')) { Pauli::X } else { Pauli::Y };
            let base = 2 * n * reps;
            for (q, s) in per_qubit.iter().enumerate() {
                let (a, z) = s.angles(axis);
                theta[base + q] = a;
                theta[base + n + q] = z;
            }
        }
        AnsatzSpec::Brickwall { reps, .. } => {
            let base = reps * (2 * n - 1);
            for (q, s) in per_qubit.iter().enumerate() {
                theta[base + q] = match s {
                    Single::Zero => 0.0,
                    Single::One => PI,
                    Single::Plus => FRAC_PI_2,
                    Single::Minus => -FRAC_PI_2,
                    _ => return Err(unknown()),
                };
            }
        }
        _ => return Err(unknown()),
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::fidelity;
    use proptest::prelude::*;

    fn assert_same_state(a: &Statevector, b: &Statevector) {
        let f = fidelity(a, b, None).unwrap();
        assert!(1.0 - f <= 1e-12, "fidelity {f}");
    }

    #[test]
    fn empty_circuit_is_zero_state() {
        let c = ParameterizedCircuit::new(3, 0);
        assert_eq!(c.simulate(&[]).unwrap(), Statevector::zero(3));
    }

    #[test]
    fn ry_half_pi_gives_plus() {
        let mut c = ParameterizedCircuit::new(1, 1);
        c.push_param(0, Pauli::Y, 0).unwrap();
        let s = c.simulate(&[FRAC_PI_2]).unwrap();
        assert_same_state(&s, &InitialState::Uniform(Single::Plus).state(1).unwrap());
    }

    #[test]
    fn efficient_su2_at_zero() {
        let c = efficient_su2(2, 1, &Topology::Line, Pauli::Y).unwrap();
        assert_eq!(c.simulate(&vec![0.0; c.n_params()]).unwrap(), Statevector::zero(2));
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(efficient_su2(4, 2, &Topology::Line, Pauli::Y).unwrap().n_params(), 24);
        let cost = PauliSum::from_labels(&[(1.0, "IZZ"), (1.0, "ZZI")]).unwrap();
        let q = qaoa(&cost, &x_mixer(3), 2).unwrap();
        assert_eq!(q.n_params(), 4);
        assert!(!q.has_unique_parameters());
        assert_eq!(gibbs_pair().unwrap().n_params(), 16);
        assert_eq!(brickwall(4, 3).unwrap().n_params(), 3 * 7 + 4);
        assert_eq!(pauli_two_design(7, 3, 1).unwrap().n_params(), 28);
        assert!(efficient_su2(4, 2, &Topology::Ring, Pauli::Y).unwrap().has_unique_parameters());
        assert!(efficient_su2(1, 2, &Topology::Line, Pauli::Y).is_err());
    }

    #[test]
    fn qaoa_rejects_noncommuting_mixer() {
        let cost = PauliSum::from_labels(&[(1.0, "ZZ")]).unwrap();
        let mixer = PauliSum::from_labels(&[(1.0, "XI"), (1.0, "ZI")]).unwrap();
        assert!(matches!(qaoa(&cost, &mixer, 1), Err(Error::Unsupported(_))));
    }

    #[test]
    fn qaoa_matches_dense_exponentials() {
        let cost = PauliSum::from_labels(&[(1.0, "IZZ"), (0.5, "ZIZ")]).unwrap();
        let mixer = x_mixer(3);
        let c = qaoa(&cost, &mixer, 1).unwrap();
        let (g, b) = (0.3, -0.7);
        let s = c.simulate(&[g, b]).unwrap();
        let plus = InitialState::Uniform(Single::Plus).state(3).unwrap();
        let expm = |h: &PauliSum, t: f64| {
            let m = h.matrix().unwrap();
            let eig = nalgebra::SymmetricEigen::new(m.map(|z| z.re));
            // Both operators are real here: ZZ terms are diagonal and X is real symmetric.
            let u = &eig.eigenvectors;
            let d = nalgebra::DMatrix::from_diagonal(&eig.eigenvalues.map(|l| num_complex::Complex64::from_polar(1.0, -t * l)));
            u.map(|x| num_complex::Complex64::new(x, 0.0)) * d * u.transpose().map(|x| num_complex::Complex64::new(x, 0.0))
        };
        let v = nalgebra::DVector::from_column_slice(plus.amplitudes());
        let out = expm(&mixer, b) * expm(&cost, g) * v;
        let want = Statevector::from_amplitudes(out.iter().copied().collect()).unwrap();
        assert_same_state(&s, &want);
    }

    #[test]
    fn controlled_pair_matches_controlled_ry() {
        let c = controlled_pair().unwrap();
        for (t0, t1) in [(0.4, 1.1), (2.0, -0.3)] {
            let s = c.simulate(&[t0, t1]).unwrap();
            let (c0, s0) = ((t0 / 2.0f64).cos(), (t0 / 2.0f64).sin());
            let (c1, s1) = ((t1 / 2.0f64).cos(), (t1 / 2.0f64).sin());
            use num_complex::Complex64 as C;
            // qubit 0 in cos|0> - i sin|1>; qubit 1 rotated only when qubit 0 is set.
            let want = vec![C::new(c0, 0.0), C::new(0.0, -s0 * c1), C::new(0.0, 0.0), C::new(0.0, -s0 * s1)];
            assert_same_state(&s, &Statevector::from_amplitudes(want).unwrap());
        }
    }

    #[test]
    fn initial_parameter_targets() {
        for axis in [None, Some('X')] {
            for s in [Single::Plus, Single::Minus, Single::PlusI, Single::MinusI, Single::One] {
                let spec = AnsatzSpec::EfficientSu2 { n: 3, reps: 2, topology: Some(Topology::Ring), first_axis: axis };
                let target = InitialState::Uniform(s);
                let theta = initial_parameters(&spec, &target).unwrap();
                assert_same_state(&spec.build().unwrap().simulate(&theta).unwrap(), &target.state(3).unwrap());
            }
        }
        let spec = AnsatzSpec::EfficientSu2 { n: 4, reps: 1, topology: None, first_axis: None };
        let target = InitialState::Product(vec![Single::Plus, Single::MinusI, Single::Minus, Single::PlusI]);
        let theta = initial_parameters(&spec, &target).unwrap();
        assert_same_state(&spec.build().unwrap().simulate(&theta).unwrap(), &target.state(4).unwrap());

        let plus = InitialState::Uniform(Single::Plus);
        let spec = AnsatzSpec::EfficientSu2 { n: 4, reps: 2, topology: None, first_axis: None };
        let theta = initial_parameters(&spec, &plus).unwrap();
        let nonzero: Vec<usize> = (0..theta.len()).filter(|&i| theta[i] != 0.0).collect();
        assert_eq!(nonzero, vec![16, 17, 18, 19]);

        let spec = AnsatzSpec::Brickwall { n: 4, reps: 3 };
        let theta = initial_parameters(&spec, &plus).unwrap();
        assert_same_state(&spec.build().unwrap().simulate(&theta).unwrap(), &plus.state(4).unwrap());

        let theta = initial_parameters(&AnsatzSpec::GibbsPair, &InitialState::MaximallyMixedA).unwrap();
        assert_eq!((theta[8], theta[9]), (FRAC_PI_2, FRAC_PI_2));
        assert_eq!(theta.iter().filter(|t| **t != 0.0).count(), 2);
        assert_same_state(&gibbs_pair().unwrap().simulate(&theta).unwrap(), &InitialState::MaximallyMixedA.state(4).unwrap());

        assert_eq!(initial_parameters(&AnsatzSpec::GibbsPair, &InitialState::Zero).unwrap(), vec![0.0; 16]);
        assert!(initial_parameters(&AnsatzSpec::GibbsPair, &plus).is_err());
    }

    #[test]
    fn text_round_trip() {
        let cost = PauliSum::from_labels(&[(0.3, "IZZ"), (-1.25, "ZIZ")]).unwrap();
        for c in [
            qaoa(&cost, &x_mixer(3), 2).unwrap(),
            pauli_two_design(4, 2, 7).unwrap(),
            brickwall(3, 1).unwrap(),
            controlled_pair().unwrap(),
        ] {
            let text = c.to_text();
            assert_eq!(ParameterizedCircuit::parse_text(&text).unwrap(), c);
        }
        assert!(ParameterizedCircuit::parse_text("QUBITS 2\nPARAMS 1\nFOO 0").is_err());
        assert!(ParameterizedCircuit::parse_text("QUBITS 2\nPARAMS 1\nRY 0 1.0*p3").is_err());
        assert!(ParameterizedCircuit::parse_text("PARAMS 1").is_err());
    }

    #[test]
    fn two_design_axes_are_seeded() {
        assert_eq!(pauli_two_design(5, 2, 3).unwrap(), pauli_two_design(5, 2, 3).unwrap());
        assert_ne!(pauli_two_design(5, 2, 3).unwrap(), pauli_two_design(5, 2, 4).unwrap());
    }

    #[test]
    fn inverse_undoes_circuit() {
        let c = pauli_two_design(4, 2, 1).unwrap();
        let theta: Vec<f64> = (0..c.n_params()).map(|i| 0.1 * i as f64).collect();
        let s = c.simulate(&theta).unwrap();
        assert_same_state(&c.apply_inverse(s, &theta).unwrap(), &Statevector::zero(4));
    }

    proptest! {
        #[test]
        fn expansion_reproduces_simulation(g in -3.0f64..3.0, b in -3.0f64..3.0, g2 in -3.0f64..3.0, b2 in -3.0f64..3.0) {
            let cost = PauliSum::from_labels(&[(0.7, "IZZ"), (-0.4, "ZIZ")]).unwrap();
            let c = qaoa(&cost, &x_mixer(3), 2).unwrap();
            let theta = [g, b, g2, b2];
            let e = c.expand_unique();
            prop_assert!(e.circuit.has_unique_parameters());
            let s1 = c.simulate(&theta).unwrap();
            let s2 = e.circuit.simulate(&e.slot_values(&theta)).unwrap();
            for (x, y) in s1.amplitudes().iter().zip(s2.amplitudes()) {
                prop_assert!((x - y).norm() < 1e-14);
            }
        }

        #[test]
        fn simulate_is_pure(seed in 0u64..100, t in -3.0f64..3.0) {
            let c = pauli_two_design(3, 1, seed).unwrap();
            let theta = vec![t; c.n_params()];
            prop_assert_eq!(c.simulate(&theta).unwrap(), c.simulate(&theta).unwrap());
        }
    }
}
