//! Pauli strings, weighted Pauli sums and the model Hamiltonians.
//!
//! Labels are written with the highest qubit first, so `"XIZ"` is `Z` on
//! qubit 0 and `X` on qubit 2. Coefficients are real.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::state::Gate;

/// Largest system converted to a dense matrix.
pub const DENSE_LIMIT: usize = 14;

const I_UNIT: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_char(c: char) -> Result<Self> {
        match c {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            _ => Err(Error::Parse(format!("unknown Pauli '{c}'"))),
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Bit-mask form of a Pauli string: `P|x> = i^ny (-1)^{|x & z|} |x ^ x_mask>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PauliMask {
    pub x: usize,
    pub z: usize,
    pub ny: u32,
}

impl PauliMask {
    pub fn from_ops(ops: impl IntoIterator<Item = (usize, Pauli)>) -> Self {
        let mut m = PauliMask::default();
        for (q, p) in ops {
            let bit = 1usize << q;
            match p {
                Pauli::I => {}
                Pauli::X => m.x |= bit,
                Pauli::Z => m.z |= bit,
                Pauli::Y => {
                    m.x |= bit;
                    m.z |= bit;
                    m.ny += 1;
                }
            }
        }
        m
    }

    #[inline]
    fn base(&self) -> Complex64 {
        match self.ny % 4 {
            0 => Complex64::new(1.0, 0.0),
            1 => I_UNIT,
            2 => Complex64::new(-1.0, 0.0),
            _ => -I_UNIT,
        }
    }

    /// Phase picked up by basis state `x`.
    #[inline]
    pub fn phase(&self, x: usize) -> Complex64 {
        let b = self.base();
        if (x & self.z).count_ones() % 2 == 1 {
            -b
        } else {
            b
        }
    }

    pub fn is_diagonal(&self) -> bool {
        self.x == 0
    }

    /// `dst += coeff * P src`.
    pub fn add_applied(&self, coeff: f64, src: &[Complex64], dst: &mut [Complex64]) {
        let b = self.base() * coeff;
        for (x, a) in src.iter().enumerate() {
            let s = if (x & self.z).count_ones() % 2 == 1 { -b } else { b };
            dst[x ^ self.x] += s * a;
        }
    }

    /// `<bra| P |ket>`.
    pub fn inner(&self, bra: &[Complex64], ket: &[Complex64]) -> Complex64 {
        let b = self.base();
        let mut acc = Complex64::new(0.0, 0.0);
        for (x, a) in ket.iter().enumerate() {
            let t = bra[x ^ self.x].conj() * a;
            if (x & self.z).count_ones() % 2 == 1 {
                acc -= t;
            } else {
                acc += t;
            }
        }
        acc * b
    }

    /// In-place `exp(-i theta P / 2)`.
    pub fn rotate(&self, amps: &mut [Complex64], theta: f64) {
        let (s, c) = (theta / 2.0).sin_cos();
        let ms = Complex64::new(0.0, -s);
        if self.x == 0 {
            let b = self.base();
            for (x, a) in amps.iter_mut().enumerate() {
                let ph = if (x & self.z).count_ones() % 2 == 1 { -b } else { b };
                *a *= c + ms * ph;
            }
            return;
        }
        let high = 1usize << (usize::BITS - 1 - self.x.leading_zeros());
        for x in 0..amps.len() {
            if x & high != 0 {
                continue;
            }
            let y = x ^ self.x;
            let (a, b) = (amps[x], amps[y]);
            amps[x] = a * c + ms * self.phase(y) * b;
            amps[y] = b * c + ms * self.phase(x) * a;
        }
    }
}

/// Tensor product of single-qubit Paulis; entry `q` acts on qubit `q`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    ops: Vec<Pauli>,
}

impl PauliString {
    pub fn new(ops: Vec<Pauli>) -> Self {
        PauliString { ops }
    }

    pub fn identity(n: usize) -> Self {
        PauliString { ops: vec![Pauli::I; n] }
    }

    /// String with the given single-qubit factors and identity elsewhere.
    pub fn from_sparse(n: usize, factors: &[(usize, Pauli)]) -> Result<Self> {
        let mut ops = vec![Pauli::I; n];
        for &(q, p) in factors {
            if q >= n {
                return Err(Error::QubitOutOfRange { index: q, n_qubits: n });
            }
            ops[q] = p;
        }
        Ok(PauliString { ops })
    }

    pub fn n_qubits(&self) -> usize {
        self.ops.len()
    }

    pub fn ops(&self) -> &[Pauli] {
        &self.ops
    }

    pub fn get(&self, q: usize) -> Pauli {
        self.ops[q]
    }

    pub fn mask(&self) -> PauliMask {
        PauliMask::from_ops(self.ops.iter().copied().enumerate())
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.ops.len()).filter(|&q| self.ops[q] != Pauli::I).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        self.ops.iter().all(|p| matches!(p, Pauli::I | Pauli::Z))
    }

    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let clashes = self
            .ops
            .iter()
            .zip(&other.ops)
            .filter(|(a, b)| **a != Pauli::I && **b != Pauli::I && a != b)
            .count();
        clashes % 2 == 0
    }

    /// Label with the highest qubit first.
    pub fn label(&self) -> String {
        self.ops.iter().rev().map(|p| p.as_char()).collect()
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut ops = s.trim().chars().map(Pauli::from_char).collect::<Result<Vec<_>>>()?;
        if ops.is_empty() {
            return Err(Error::Parse("empty Pauli label".into()));
        }
        ops.reverse();
        Ok(PauliString { ops })
    }
}

/// Real-weighted sum of Pauli strings on a fixed number of qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliSum {
    n_qubits: usize,
    terms: Vec<(f64, PauliString)>,
}

impl PauliSum {
    pub fn new(n_qubits: usize) -> Self {
        PauliSum { n_qubits, terms: Vec::new() }
    }

    pub fn from_terms(n_qubits: usize, terms: Vec<(f64, PauliString)>) -> Result<Self> {
        let mut sum = PauliSum::new(n_qubits);
        for (c, p) in terms {
            sum.push(c, p)?;
        }
        Ok(sum)
    }

    /// Builds a sum from `(coefficient, label)` pairs.
    pub fn from_labels(terms: &[(f64, &str)]) -> Result<Self> {
        let first = terms.first().ok_or_else(|| Error::invalid("no terms"))?;
        let n = first.1.trim().len();
        let parsed = terms
            .iter()
            .map(|(c, l)| Ok((*c, l.parse::<PauliString>()?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_terms(n, parsed)
    }

    pub fn push(&mut self, coeff: f64, string: PauliString) -> Result<()> {
        if string.n_qubits() != self.n_qubits {
            return Err(Error::DimensionMismatch { expected: self.n_qubits, got: string.n_qubits() });
        }
        if !coeff.is_finite() {
            return Err(Error::invalid("Pauli coefficient must be finite"));
        }
        self.terms.push((coeff, string));
        Ok(())
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn terms(&self) -> &[(f64, PauliString)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn masks(&self) -> Vec<(f64, PauliMask)> {
        self.terms.iter().map(|(c, p)| (*c, p.mask())).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        self.terms.iter().all(|(_, p)| p.is_diagonal())
    }

    /// Merges repeated labels in first-seen order and drops zero weights.
    pub fn simplify(&self) -> PauliSum {
        let mut index: HashMap<&PauliString, usize> = HashMap::new();
        let mut merged: Vec<(f64, PauliString)> = Vec::new();
        for (c, p) in &self.terms {
            match index.get(p) {
                Some(&i) => merged[i].0 += c,
                None => {
                    index.insert(p, merged.len());
                    merged.push((*c, p.clone()));
                }
            }
        }
        merged.retain(|(c, _)| *c != 0.0);
        PauliSum { n_qubits: self.n_qubits, terms: merged }
    }

    pub fn scaled(&self, factor: f64) -> PauliSum {
        PauliSum {
            n_qubits: self.n_qubits,
            terms: self.terms.iter().map(|(c, p)| (c * factor, p.clone())).collect(),
        }
    }

    pub fn plus(&self, other: &PauliSum) -> Result<PauliSum> {
        if other.n_qubits != self.n_qubits {
            return Err(Error::DimensionMismatch { expected: self.n_qubits, got: other.n_qubits });
        }
        let mut out = self.clone();
        out.terms.extend(other.terms.iter().cloned());
        Ok(out)
    }

    /// True if every pair of terms commutes.
    pub fn is_commuting(&self) -> bool {
        self.terms
            .iter()
            .enumerate()
            .all(|(i, (_, a))| self.terms[i + 1..].iter().all(|(_, b)| a.commutes_with(b)))
    }

    /// `O |psi>` for the amplitude vector `psi`.
    pub fn apply(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); psi.len()];
        for (c, m) in self.masks() {
            m.add_applied(c, psi, &mut out);
        }
        out
    }

    /// Dense matrix in the computational basis.
    pub fn matrix(&self) -> Result<DMatrix<Complex64>> {
        if self.n_qubits > DENSE_LIMIT {
            return Err(Error::SizeGuard { n_qubits: self.n_qubits, limit: DENSE_LIMIT });
        }
        let dim = 1usize << self.n_qubits;
        let mut m = DMatrix::<Complex64>::zeros(dim, dim);
        for (c, mask) in self.masks() {
            for x in 0..dim {
                m[(x ^ mask.x, x)] += mask.phase(x) * c;
            }
        }
        Ok(m)
    }

    /// Diagonal of a Z-type sum, one entry per basis state.
    pub fn diagonal(&self) -> Result<Vec<f64>> {
        if !self.is_diagonal() {
            return Err(Error::invalid("sum contains off-diagonal terms"));
        }
        let dim = 1usize << self.n_qubits;
        let masks = self.masks();
        Ok((0..dim)
            .map(|x| {
                masks
                    .iter()
                    .map(|(c, m)| if (x & m.z).count_ones() % 2 == 1 { -c } else { *c })
                    .sum()
            })
            .collect())
    }

    /// Greedy partition into qubit-wise commuting groups, which can share
    /// one measurement basis.
    pub fn qubitwise_groups(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<(Vec<Pauli>, Vec<usize>)> = Vec::new();
        for (t, (_, p)) in self.terms.iter().enumerate() {
            let slot = groups.iter_mut().find(|(basis, _)| {
                basis
                    .iter()
                    .zip(p.ops())
                    .all(|(a, b)| *a == Pauli::I || *b == Pauli::I || a == b)
            });
            match slot {
                Some((basis, members)) => {
                    for (a, b) in basis.iter_mut().zip(p.ops()) {
                        if *a == Pauli::I {
                            *a = *b;
                        }
                    }
                    members.push(t);
                }
                None => groups.push((p.ops().to_vec(), vec![t])),
            }
        }
        groups.into_iter().map(|(_, m)| m).collect()
    }

    /// One term per line, `coeff label`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (c, p) in &self.terms {
            s.push_str(&format!("{c:?} {p}\n"));
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<PauliSum> {
        let mut terms = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(c), Some(l), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse(format!("line {}: expected 'coeff label'", lineno + 1)));
            };
            let c: f64 = c
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad coefficient '{c}'", lineno + 1)))?;
            terms.push((c, l.parse::<PauliString>()?));
        }
        let n = terms.first().map(|t| t.1.n_qubits()).ok_or_else(|| Error::Parse("no terms".into()))?;
        PauliSum::from_terms(n, terms)
    }
}

/// Basis change that maps a Pauli string onto a Z-type string.
///
/// Returns, per qubit, the gates to apply before a computational-basis
/// measurement, and the resulting diagonal string.
pub fn diagonalizing_basis(string: &PauliString) -> (Vec<Vec<Gate>>, PauliString) {
    let mut gates = Vec::with_capacity(string.n_qubits());
    let mut diag = Vec::with_capacity(string.n_qubits());
    for (q, p) in string.ops().iter().enumerate() {
        match p {
            Pauli::I => {
                gates.push(vec![]);
                diag.push(Pauli::I);
            }
            Pauli::Z => {
                gates.push(vec![]);
                diag.push(Pauli::Z);
            }
            Pauli::X => {
                gates.push(vec![Gate::H(q)]);
                diag.push(Pauli::Z);
            }
            Pauli::Y => {
                gates.push(vec![Gate::Sdg(q), Gate::H(q)]);
                diag.push(Pauli::Z);
            }
        }
    }
    (gates, PauliString::new(diag))
}

/// Eigenvalue of a Z-type string on basis state `k`.
pub fn diagonal_eigenvalue(diag: &PauliString, k: usize) -> Result<f64> {
    if !diag.is_diagonal() {
        return Err(Error::invalid("eigenvalue lookup needs an I/Z string"));
    }
    let m = diag.mask();
    Ok(if (k & m.z).count_ones() % 2 == 1 { -1.0 } else { 1.0 })
}

/// Weighted undirected graph without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl Graph {
    pub fn new(n_nodes: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(i, j, w) in &edges {
            if i == j {
                return Err(Error::invalid(format!("self-loop on node {i}")));
            }
            if i >= n_nodes || j >= n_nodes {
                return Err(Error::QubitOutOfRange { index: i.max(j), n_qubits: n_nodes });
            }
            if !w.is_finite() {
                return Err(Error::invalid("edge weight must be finite"));
            }
        }
        Ok(Graph { n_nodes, edges })
    }

    /// Unit-weight ring.
    pub fn ring(n: usize) -> Result<Self> {
        Graph::new(n, ring_pairs(n).into_iter().map(|(i, j)| (i, j, 1.0)).collect())
    }

    /// Circular graph with weight `w_near` between neighbours and `w_far`
    /// between nodes `offset` apart.
    pub fn circulant(n: usize, w_near: f64, offset: usize, w_far: f64) -> Result<Self> {
        let mut edges: Vec<(usize, usize, f64)> = (0..n).map(|j| (j, (j + 1) % n, w_near)).collect();
        edges.extend((0..n).map(|j| (j, (j + offset) % n, w_far)));
        Graph::new(n, edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Total weight of edges whose endpoints differ in `x`.
    pub fn cut_value(&self, x: usize) -> f64 {
        self.edges
            .iter()
            .filter(|(i, j, _)| ((x >> i) ^ (x >> j)) & 1 == 1)
            .map(|e| e.2)
            .sum()
    }

    /// All assignments attaining the maximum cut, by enumeration.
    pub fn optimal_cuts(&self) -> (f64, Vec<usize>) {
        let mut best = f64::NEG_INFINITY;
        let mut arg = Vec::new();
        for x in 0..(1usize << self.n_nodes) {
            let v = self.cut_value(x);
            if v > best + 1e-9 {
                best = v;
                arg.clear();
                arg.push(x);
            } else if (v - best).abs() <= 1e-9 {
                arg.push(x);
            }
        }
        (best, arg)
    }

    /// Parses an edge list with one `i j w` triple per line.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        let mut n = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected 'i j w'", lineno + 1)));
            }
            let bad = |s: &str| Error::Parse(format!("line {}: bad field '{s}'", lineno + 1));
            let i: usize = f[0].parse().map_err(|_| bad(f[0]))?;
            let j: usize = f[1].parse().map_err(|_| bad(f[1]))?;
            let w: f64 = f[2].parse().map_err(|_| bad(f[2]))?;
            n = n.max(i + 1).max(j + 1);
            edges.push((i, j, w));
        }
        Graph::new(n, edges)
    }
}

/// Nearest-neighbour pairs of a line or ring.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Line,
    Ring,
    Custom(Vec<(usize, usize)>),
}

impl Topology {
    pub fn pairs(&self, n: usize) -> Vec<(usize, usize)> {
        match self {
            Topology::Line => (0..n.saturating_sub(1)).map(|j| (j, j + 1)).collect(),
            Topology::Ring => ring_pairs(n),
            Topology::Custom(p) => p.clone(),
        }
    }
}

fn ring_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut p: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|j| (j, j + 1)).collect();
    if n > 2 {
        p.push((n - 1, 0));
    }
    p
}

/// Model Hamiltonians.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    /// `J sum Z_j Z_k + h sum X_j`.
    Tfim { n: usize, j: f64, h: f64 },
    /// `J sum Z_j Z_k + h_z sum Z_j + h_x sum X_j`.
    TiltedIsing { n: usize, j: f64, hx: f64, hz: f64 },
    /// `J sum (XX + YY + ZZ) + h sum Z_j`.
    Heisenberg { n: usize, j: f64, h: f64 },
    /// `sum w/2 Z_j Z_k`, the cut objective up to sign and a constant.
    MaxCut(Graph),
}

pub fn build_model(model: &Model, topology: &Topology) -> Result<PauliSum> {
    let n = match model {
        Model::Tfim { n, .. } | Model::TiltedIsing { n, .. } | Model::Heisenberg { n, .. } => *n,
        Model::MaxCut(g) => g.n_nodes(),
    };
    if n < 2 {
        return Err(Error::invalid("models need at least two qubits"));
    }
    let pairs = topology.pairs(n);
    for &(a, b) in &pairs {
        if a >= n || b >= n {
            return Err(Error::QubitOutOfRange { index: a.max(b), n_qubits: n });
        }
        if a == b {
            return Err(Error::invalid("topology contains a self-loop"));
        }
    }
    let two = |a: usize, pa: Pauli, b: usize, pb: Pauli| PauliString::from_sparse(n, &[(a, pa), (b, pb)]);
    let one = |a: usize, p: Pauli| PauliString::from_sparse(n, &[(a, p)]);
    let mut h = PauliSum::new(n);
    match model {
        Model::Tfim { j, h: field, .. } => {
            for &(a, b) in &pairs {
                h.push(*j, two(a, Pauli::Z, b, Pauli::Z)?)?;
            }
            for q in 0..n {
                h.push(*field, one(q, Pauli::X)?)?;
            }
        }
        Model::TiltedIsing { j, hx, hz, .. } => {
            for &(a, b) in &pairs {
                h.push(*j, two(a, Pauli::Z, b, Pauli::Z)?)?;
            }
            for q in 0..n {
                h.push(*hz, one(q, Pauli::Z)?)?;
            }
            for q in 0..n {
                h.push(*hx, one(q, Pauli::X)?)?;
            }
        }
        Model::Heisenberg { j, h: field, .. } => {
            for &(a, b) in &pairs {
                for p in [Pauli::X, Pauli::Y, Pauli::Z] {
                    h.push(*j, two(a, p, b, p)?)?;
                }
            }
            for q in 0..n {
                h.push(*field, one(q, Pauli::Z)?)?;
            }
        }
        Model::MaxCut(g) => {
            if g.edges().is_empty() {
                return Err(Error::invalid("empty graph"));
            }
            for &(a, b, w) in g.edges() {
                h.push(w / 2.0, two(a, Pauli::Z, b, Pauli::Z)?)?;
            }
        }
    }
    let h = h.simplify();
    if h.is_empty() {
        return Err(Error::invalid("model has no non-zero terms"));
    }
    Ok(h)
}

/// Splits a sum into its Z-type part and the remainder, e.g. for Trotter
/// groupings of Ising-type models.
pub fn split_diagonal(sum: &PauliSum) -> (PauliSum, PauliSum) {
    let mut diag = PauliSum::new(sum.n_qubits());
    let mut rest = PauliSum::new(sum.n_qubits());
    for (c, p) in sum.terms() {
        let target = if p.is_diagonal() { &mut diag } else { &mut rest };
        target.terms.push((*c, p.clone()));
    }
    (diag, rest)
}
