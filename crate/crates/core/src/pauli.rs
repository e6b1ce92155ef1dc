// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! Spin Hamiltonians built from tensor products of Pauli operators.
//!
//! Models are written with three term families acting on a system qubit and,
//! optionally, one environment qubit:
//!
//! * `S` (spin rotation): `σ_a ⊗ I`, single-qubit,
//! * `A` (hyperfine): `σ_a ⊗ σ_a`,
//! * `T` (transverse): `σ_a ⊗ σ_b` with `a < b`.
//!
//! A model string lists the axes per family, e.g. `SxyzAz` or
//! `SxyzAxyzTxyxzyz`. Separators (`_`, `,`, braces, whitespace) are ignored
//! so `S_{x,y,z}A_{z}` parses to the same model. Canonical names sort
//! families `S < A < T` and axes `x < y < z`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{QmlaError, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Dense matrices above this size are refused.
pub const MAX_QUBITS: usize = 12;

const HERMITIAN_TOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PauliAxis {
    I,
    X,
    Y,
    Z,
}

impl PauliAxis {
    pub fn matrix(self) -> CMatrix {
        let m = match self {
            PauliAxis::I => [ONE, ZERO, ZERO, ONE],
            PauliAxis::X => [ZERO, ONE, ONE, ZERO],
            PauliAxis::Y => [ZERO, -I, I, ZERO],
            PauliAxis::Z => [ONE, ZERO, ZERO, -ONE],
        };
        CMatrix::from_row_slice(2, 2, &m)
    }

    fn from_char(c: char) -> Option<Self> {
        match c {
            'x' => Some(PauliAxis::X),
            'y' => Some(PauliAxis::Y),
            'z' => Some(PauliAxis::Z),
            _ => None,
        }
    }

    fn as_char(self) -> char {
        match self {
            PauliAxis::I => 'i',
            PauliAxis::X => 'x',
            PauliAxis::Y => 'y',
            PauliAxis::Z => 'z',
        }
    }
}

/// One Hamiltonian term. The derived ordering is the canonical term order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PauliTerm {
    /// `σ_a` on the system qubit.
    Spin(PauliAxis),
    /// `σ_a ⊗ σ_a` between system and environment.
    Hyperfine(PauliAxis),
    /// `σ_a ⊗ σ_b`, `a < b`.
    Transverse(PauliAxis, PauliAxis),
}

impl PauliTerm {
    /// Tensor factors, system qubit first.
    pub fn axes(&self) -> Vec<PauliAxis> {
        match *self {
            PauliTerm::Spin(a) => vec![a],
            PauliTerm::Hyperfine(a) => vec![a, a],
            PauliTerm::Transverse(a, b) => vec![a, b],
        }
    }

    pub fn num_qubits(&self) -> usize {
        match self {
            PauliTerm::Spin(_) => 1,
            _ => 2,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            PauliTerm::Spin(a) => format!("S{}", a.as_char()),
            PauliTerm::Hyperfine(a) => format!("A{}", a.as_char()),
            PauliTerm::Transverse(a, b) => format!("T{}{}", a.as_char(), b.as_char()),
        }
    }

    fn family(&self) -> char {
        match self {
            PauliTerm::Spin(_) => 'S',
            PauliTerm::Hyperfine(_) => 'A',
            PauliTerm::Transverse(..) => 'T',
        }
    }

    fn axis_code(&self) -> String {
        self.label()[1..].to_string()
    }

    /// Parses a single term label such as `Sx`, `Az` or `Txz`.
    pub fn parse(label: &str) -> Result<Self> {
        let model = ModelExpression::parse(label)?;
        match model.terms() {
            [term] => Ok(*term),
            _ => Err(QmlaError::Parse {
                input: label.to_string(),
                token: label.to_string(),
            }),
        }
    }
}

impl fmt::Display for PauliTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for PauliTerm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for PauliTerm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PauliTerm::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// A named sum of Pauli terms, one parameter slot per term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelExpression {
    terms: Vec<PauliTerm>,
    num_qubits: usize,
}

impl ModelExpression {
    pub fn new(terms: impl IntoIterator<Item = PauliTerm>) -> Result<Self> {
        let mut terms: Vec<PauliTerm> = terms.into_iter().collect();
        terms.sort();
        for w in terms.windows(2) {
            if w[0] == w[1] {
                return Err(QmlaError::DuplicateTerm(w[0].label()));
            }
        }
        if terms.is_empty() {
            return Err(QmlaError::Parse {
                input: String::new(),
                token: String::new(),
            });
        }
        let num_qubits = terms.iter().map(PauliTerm::num_qubits).max().unwrap_or(1);
        Ok(ModelExpression { terms, num_qubits })
    }

    pub fn parse(input: &str) -> Result<Self> {
        let err = |token: String| QmlaError::Parse {
            input: input.to_string(),
            token,
        };
        let mut terms = Vec::new();
        let mut family: Option<char> = None;
        let mut block_len = 0usize;
        let mut chars = input.chars().filter(|c| !is_separator(*c)).peekable();

        while let Some(c) = chars.next() {
            match c {
                'S' | 'A' | 'T' => {
                    if let Some(f) = family {
                        if block_len == 0 {
                            return Err(err(f.to_string()));
                        }
                    }
                    family = Some(c);
                    block_len = 0;
                }
                'x' | 'y' | 'z' => {
                    let a = PauliAxis::from_char(c).expect("matched axis");
                    let term = match family {
                        Some('S') => PauliTerm::Spin(a),
                        Some('A') => PauliTerm::Hyperfine(a),
                        Some('T') => {
                            let second = chars.next().ok_or_else(|| err(c.to_string()))?;
                            let b = PauliAxis::from_char(second)
                                .filter(|b| *b > a)
                                .ok_or_else(|| err(format!("{c}{second}")))?;
                            PauliTerm::Transverse(a, b)
                        }
                        _ => return Err(err(c.to_string())),
                    };
                    if terms.contains(&term) {
                        return Err(QmlaError::DuplicateTerm(term.label()));
                    }
                    terms.push(term);
                    block_len += 1;
                }
                other => return Err(err(other.to_string())),
            }
        }
        match family {
            None => Err(err(String::new())),
            Some(f) if block_len == 0 => Err(err(f.to_string())),
            Some(_) => ModelExpression::new(terms),
        }
    }

    /// Canonical, order-independent model name.
    pub fn name(&self) -> String {
        let mut out = String::new();
        let mut last_family = None;
        for t in &self.terms {
            if last_family != Some(t.family()) {
                out.push(t.family());
                last_family = Some(t.family());
            }
            out.push_str(&t.axis_code());
        }
        out
    }

    pub fn terms(&self) -> &[PauliTerm] {
        &self.terms
    }

    pub fn num_params(&self) -> usize {
        self.terms.len()
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn contains(&self, term: &PauliTerm) -> bool {
        self.terms.binary_search(term).is_ok()
    }

    pub fn position(&self, term: &PauliTerm) -> Option<usize> {
        self.terms.binary_search(term).ok()
    }

    /// This model plus one extra term.
    pub fn with_term(&self, term: PauliTerm) -> Result<Self> {
        ModelExpression::new(self.terms.iter().copied().chain(std::iter::once(term)))
    }

    /// The sub-model keeping only the terms for which `keep` is true.
    /// Returns `None` when nothing would remain.
    pub fn retain(&self, keep: &[bool]) -> Option<Self> {
        let kept: Vec<PauliTerm> = self
            .terms
            .iter()
            .zip(keep)
            .filter(|(_, k)| **k)
            .map(|(t, _)| *t)
            .collect();
        ModelExpression::new(kept).ok()
    }
}

fn is_separator(c: char) -> bool {
    c.is_whitespace() || matches!(c, '_' | ',' | '{' | '}' | '^')
}

impl fmt::Display for ModelExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ModelExpression {
    type Err = QmlaError;
    fn from_str(s: &str) -> Result<Self> {
        ModelExpression::parse(s)
    }
}

impl Serialize for ModelExpression {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for ModelExpression {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ModelExpression::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Parameters in rad/us, aligned index-for-index with a model's terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(QmlaError::NonFiniteParameter { index, value: *value });
        }
        Ok(ParamVector(values))
    }

    pub fn for_model(model: &ModelExpression, values: Vec<f64>) -> Result<Self> {
        if values.len() != model.num_params() {
            return Err(QmlaError::Alignment {
                expected: model.num_params(),
                got: values.len(),
            });
        }
        ParamVector::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Dense Hermitian matrix whose dimension is a power of two.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let dim = m.nrows();
        if dim != m.ncols() || dim == 0 || !dim.is_power_of_two() {
            return Err(QmlaError::Dimension(format!(
                "expected a square matrix with power-of-two size, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let dev = hermitian_deviation(&m);
        if !(dev <= HERMITIAN_TOL) {
            return Err(QmlaError::NotHermitian(dev));
        }
        Ok(HermitianMatrix(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    /// `self ⊗ I` up to `num_qubits`.
    pub fn pad_to(&self, num_qubits: usize) -> Result<Self> {
        let own = self.num_qubits();
        check_qubits(num_qubits)?;
        if num_qubits < own {
            return Err(QmlaError::Dimension(format!(
                "cannot pad a {own}-qubit operator down to {num_qubits} qubits"
            )));
        }
        if num_qubits == own {
            return Ok(self.clone());
        }
        let id = CMatrix::identity(1 << (num_qubits - own), 1 << (num_qubits - own));
        Ok(HermitianMatrix(self.0.kronecker(&id)))
    }
}

pub(crate) fn hermitian_deviation(m: &CMatrix) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            if d.is_nan() {
                return f64::NAN;
            }
            dev = dev.max(d);
        }
    }
    dev
}

fn check_qubits(num_qubits: usize) -> Result<()> {
    if num_qubits == 0 || num_qubits > MAX_QUBITS {
        return Err(QmlaError::Dimension(format!(
            "num_qubits must be in 1..={MAX_QUBITS}, got {num_qubits}"
        )));
    }
    Ok(())
}

/// Kronecker product of the term's Pauli factors, identity-padded to
/// `num_qubits`.
pub fn term_matrix(term: &PauliTerm, num_qubits: usize) -> Result<HermitianMatrix> {
    check_qubits(num_qubits)?;
    let axes = term.axes();
    if axes.len() > num_qubits {
        return Err(QmlaError::Dimension(format!(
            "term {} needs {} qubits, only {num_qubits} available",
            term,
            axes.len()
        )));
    }
    let mut m = CMatrix::identity(1, 1);
    for q in 0..num_qubits {
        let a = axes.get(q).copied().unwrap_or(PauliAxis::I);
        m = m.kronecker(&a.matrix());
    }
    Ok(HermitianMatrix(m))
}

/// `H = Σ_k params[k] · term_k` on the model's own qubit count.
pub fn assemble_hamiltonian(expr: &ModelExpression, params: &[f64]) -> Result<HermitianMatrix> {
    assemble_padded(expr, params, expr.num_qubits())
}

/// As [`assemble_hamiltonian`] but identity-padded to `num_qubits`.
pub fn assemble_padded(expr: &ModelExpression, params: &[f64], num_qubits: usize) -> Result<HermitianMatrix> {
    if params.len() != expr.num_params() {
        return Err(QmlaError::Alignment {
            expected: expr.num_params(),
            got: params.len(),
        });
    }
    let compiled = CompiledModel::new(expr, num_qubits)?;
    Ok(HermitianMatrix(compiled.hamiltonian(params)))
}

/// `exp(-iHt)` through the Hermitian eigendecomposition.
pub fn evolve_unitary(h: &HermitianMatrix, t: f64) -> Result<CMatrix> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(QmlaError::Domain(format!(
            "evolution time must be finite and >= 0, got {t}"
        )));
    }
    let dev = hermitian_deviation(h.matrix());
    if !(dev <= HERMITIAN_TOL) {
        return Err(QmlaError::NotHermitian(dev));
    }
    Ok(Spectrum::of(h.matrix()).unitary(t))
}

/// Term matrices of a model cached at a fixed qubit count, so per-particle
/// Hamiltonians are a weighted sum with no Kronecker products.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    model: ModelExpression,
    num_qubits: usize,
    terms: Vec<CMatrix>,
}

impl CompiledModel {
    pub fn new(model: &ModelExpression, num_qubits: usize) -> Result<Self> {
        let terms = model
            .terms()
            .iter()
            .map(|t| term_matrix(t, num_qubits).map(HermitianMatrix::into_inner))
            .collect::<Result<Vec<_>>>()?;
        Ok(CompiledModel {
            model: model.clone(),
            num_qubits,
            terms,
        })
    }

    pub fn model(&self) -> &ModelExpression {
        &self.model
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.num_qubits
    }

    /// Unchecked weighted sum; callers guarantee `params.len()` matches.
    pub fn hamiltonian(&self, params: &[f64]) -> CMatrix {
        let dim = self.dim();
        let mut h = CMatrix::zeros(dim, dim);
        for (m, p) in self.terms.iter().zip(params) {
            if *p != 0.0 {
                h.zip_apply(m, |acc, x| *acc += x * *p);
            }
        }
        h
    }

    pub fn spectrum(&self, params: &[f64]) -> Spectrum {
        Spectrum::of(&self.hamiltonian(params))
    }
}

/// Eigen-decomposition `H = V diag(λ) V†`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    values: Vec<f64>,
    vectors: CMatrix,
}

impl Spectrum {
    pub fn of(h: &CMatrix) -> Self {
        if h.nrows() == 2 {
            return Spectrum::of_2x2(h);
        }
        let eig = h.clone().symmetric_eigen();
        Spectrum {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        }
    }

    // Closed form for a 2x2 Hermitian matrix a·I + b·n·σ.
    fn of_2x2(h: &CMatrix) -> Self {
        let h00 = h[(0, 0)].re;
        let h11 = h[(1, 1)].re;
        let off = h[(0, 1)];
        let mean = 0.5 * (h00 + h11);
        let half = 0.5 * (h00 - h11);
        let r = (half * half + off.norm_sqr()).sqrt();
        if r == 0.0 {
            return Spectrum {
                values: vec![mean, mean],
                vectors: CMatrix::identity(2, 2),
            };
        }
        // Eigenvector for +r: (off, r - half) or (r + half, conj(off)),
        // whichever is better conditioned.
        let (v_plus, v_minus) = if half >= 0.0 {
            let a = Complex64::new(r + half, 0.0);
            let b = off.conj();
            let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
            ([a / n, b / n], [-b.conj() / n, a.conj() / n])
        } else {
            let a = off;
            let b = Complex64::new(r - half, 0.0);
            let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
            ([a / n, b / n], [-b.conj() / n, a.conj() / n])
        };
        let vectors = CMatrix::from_column_slice(2, 2, &[v_minus[0], v_minus[1], v_plus[0], v_plus[1]]);
        Spectrum {
            values: vec![mean - r, mean + r],
            vectors,
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn eigenvectors(&self) -> &CMatrix {
        &self.vectors
    }

    pub fn unitary(&self, t: f64) -> CMatrix {
        let phases = self.phases(t);
        let mut scaled = self.vectors.clone();
        for (j, ph) in phases.iter().enumerate() {
            for v in scaled.column_mut(j).iter_mut() {
                *v *= ph;
            }
        }
        scaled * self.vectors.adjoint()
    }

    /// `exp(-iHt) |state⟩`.
    pub fn evolve(&self, state: &CVector, t: f64) -> CVector {
        let mut coeffs = self.vectors.ad_mul(state);
        for (c, ph) in coeffs.iter_mut().zip(self.phases(t)) {
            *c *= ph;
        }
        &self.vectors * coeffs
    }

    /// `⟨state| exp(-iHt) |state⟩`.
    pub fn return_amplitude(&self, state: &CVector, t: f64) -> Complex64 {
        let coeffs = self.vectors.ad_mul(state);
        coeffs.iter().zip(self.phases(t)).map(|(c, ph)| ph * c.norm_sqr()).sum()
    }

    fn phases(&self, t: f64) -> Vec<Complex64> {
        self.values.iter().map(|l| Complex64::from_polar(1.0, -l * t)).collect()
    }
}
