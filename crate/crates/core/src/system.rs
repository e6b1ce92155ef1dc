// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! The "true system" side of learning: outcome probabilities of probe
//! experiments (including partial traces over an environment qubit), shot
//! noise, probe randomisation and replay of recorded datasets.

use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{QmlaError, Result};
use crate::pauli::{CVector, CompiledModel, HermitianMatrix, ModelExpression, ParamVector, Spectrum};
use crate::rng::QmlaRng;

/// Likelihoods are clamped to `[CLAMP, 1 - CLAMP]` before use.
pub const LIKELIHOOD_CLAMP: f64 = 1e-10;

const NORM_TOL: f64 = 1e-12;
const PROBABILITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeState {
    amplitudes: CVector,
}

impl ProbeState {
    /// Accepts amplitudes whose L2 norm is 1 within 1e-12.
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let v = CVector::from_vec(amplitudes);
        check_state_dim(v.len())?;
        let norm = v.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(QmlaError::Domain(format!("probe norm is {norm}, expected 1")));
        }
        Ok(ProbeState { amplitudes: v })
    }

    pub fn normalized(amplitudes: Vec<Complex64>) -> Result<Self> {
        let v = CVector::from_vec(amplitudes);
        check_state_dim(v.len())?;
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(QmlaError::Domain("cannot normalise a zero or non-finite state".into()));
        }
        Ok(ProbeState {
            amplitudes: v.unscale(norm),
        })
    }

    pub fn basis(num_qubits: usize, index: usize) -> Result<Self> {
        let dim = 1usize << num_qubits;
        if index >= dim {
            return Err(QmlaError::Shape(format!(
                "basis index {index} out of range for dim {dim}"
            )));
        }
        let mut v = vec![Complex64::new(0.0, 0.0); dim];
        v[index] = Complex64::new(1.0, 0.0);
        ProbeState::new(v)
    }

    pub fn zero() -> Self {
        ProbeState::basis(1, 0).expect("valid basis state")
    }

    pub fn plus() -> Self {
        ProbeState::plus_phase(0.0)
    }

    /// `(|0⟩ + e^{iφ}|1⟩)/√2`.
    pub fn plus_phase(phi: f64) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        ProbeState {
            amplitudes: CVector::from_vec(vec![Complex64::new(h, 0.0), Complex64::from_polar(h, phi)]),
        }
    }

    /// Uniformly (Haar) distributed pure state.
    pub fn haar_random(num_qubits: usize, rng: &mut QmlaRng) -> Self {
        let dim = 1usize << num_qubits;
        loop {
            let v: Vec<Complex64> = (0..dim)
                .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            if let Ok(s) = ProbeState::normalized(v) {
                return s;
            }
        }
    }

    pub fn tensor(&self, other: &ProbeState) -> ProbeState {
        ProbeState {
            amplitudes: self.amplitudes.kronecker(&other.amplitudes),
        }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn num_qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn fidelity(&self, other: &ProbeState) -> f64 {
        self.amplitudes.dotc(&other.amplitudes).norm_sqr()
    }
}

fn check_state_dim(dim: usize) -> Result<()> {
    if dim < 2 || !dim.is_power_of_two() || dim > (1 << crate::pauli::MAX_QUBITS) {
        return Err(QmlaError::Dimension(format!(
            "state dimension {dim} is not a valid qubit register"
        )));
    }
    Ok(())
}

impl Serialize for ProbeState {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = self.amplitudes.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProbeState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        let amps = pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect();
        ProbeState::normalized(amps).map_err(serde::de::Error::custom)
    }
}

/// Which projective measurement is applied to the system register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementBasis {
    /// `{|probe⟩, |probe⊥⟩}`; outcome 0 means the system returned to its probe.
    #[default]
    ProbeAligned,
    /// Computational basis of the system register.
    Computational,
}

/// Control settings of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDesign {
    pub probe: ProbeState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<ProbeState>,
    pub time: f64,
    #[serde(default)]
    pub basis: MeasurementBasis,
    #[serde(default)]
    pub outcome: usize,
}

impl ExperimentDesign {
    pub fn new(probe: ProbeState, environment: Option<ProbeState>, time: f64) -> Result<Self> {
        if !(time >= 0.0) || !time.is_finite() {
            return Err(QmlaError::Domain(format!(
                "experiment time must be finite and >= 0, got {time}"
            )));
        }
        Ok(ExperimentDesign {
            probe,
            environment,
            time,
            basis: MeasurementBasis::ProbeAligned,
            outcome: 0,
        })
    }

    pub fn with_measurement(mut self, basis: MeasurementBasis, outcome: usize) -> Self {
        self.basis = basis;
        self.outcome = outcome;
        self
    }

    pub fn system_qubits(&self) -> usize {
        self.probe.num_qubits()
    }

    pub fn environment_qubits(&self) -> usize {
        self.environment.as_ref().map_or(0, ProbeState::num_qubits)
    }

    /// Qubit count a model must be simulated on for this design: the system
    /// register alone when the model fits there (it is identity on the
    /// environment, which then traces out exactly), else system plus
    /// environment.
    pub fn simulation_qubits(&self, model_qubits: usize) -> Result<usize> {
        let sys = self.system_qubits();
        let total = sys + self.environment_qubits();
        if model_qubits <= sys {
            Ok(sys)
        } else if model_qubits <= total {
            Ok(total)
        } else {
            Err(QmlaError::Shape(format!(
                "model acts on {model_qubits} qubits but the experiment only prepares {total}"
            )))
        }
    }
}

/// One measurement record: a single shot or a frequency over many shots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Datum {
    Bit(u8),
    Frequency {
        frequency: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shots: Option<u64>,
    },
}

impl Datum {
    pub fn value(&self) -> f64 {
        match *self {
            Datum::Bit(b) => f64::from(b),
            Datum::Frequency { frequency, .. } => frequency,
        }
    }

    /// `ln Pr(datum | p)` where `p` is the probability of outcome 1.
    ///
    /// A frequency `f` scores as one effective observation,
    /// `f ln p + (1 - f) ln(1 - p)`, so repeated-shot estimates carry the
    /// same weight as a single shot and cannot collapse the posterior.
    pub fn log_likelihood(&self, p: f64) -> f64 {
        let p = clamp_likelihood(p);
        match *self {
            Datum::Bit(1) => p.ln(),
            Datum::Bit(_) => (1.0 - p).ln(),
            Datum::Frequency { frequency: f, .. } => f * p.ln() + (1.0 - f) * (1.0 - p).ln(),
        }
    }

    pub fn likelihood(&self, p: f64) -> f64 {
        match *self {
            Datum::Bit(1) => clamp_likelihood(p),
            Datum::Bit(_) => 1.0 - clamp_likelihood(p),
            Datum::Frequency { .. } => self.log_likelihood(p).exp(),
        }
    }
}

pub fn clamp_likelihood(p: f64) -> f64 {
    p.clamp(LIKELIHOOD_CLAMP, 1.0 - LIKELIHOOD_CLAMP)
}

fn clamp_probability(p: f64) -> Result<f64> {
    if (-PROBABILITY_SLACK..=1.0 + PROBABILITY_SLACK).contains(&p) {
        Ok(p.clamp(0.0, 1.0))
    } else {
        Err(QmlaError::Probability(p))
    }
}

/// `|⟨ψ| exp(-iHt) |ψ⟩|²`.
pub fn expectation_value(h: &HermitianMatrix, probe: &ProbeState, t: f64) -> Result<f64> {
    if h.dim() != probe.dim() {
        return Err(QmlaError::Shape(format!(
            "hamiltonian dim {} does not match probe dim {}",
            h.dim(),
            probe.dim()
        )));
    }
    check_time(t)?;
    let spectrum = Spectrum::of(h.matrix());
    clamp_probability(spectrum.return_amplitude(probe.amplitudes(), t).norm_sqr())
}

/// `⟨d| Tr_env[ρ(t)] |d⟩` for a separable input `|sys⟩ ⊗ |env⟩` evolved
/// under `H_glo`, with `d` a computational-basis index of the system.
pub fn open_system_likelihood(
    h_glo: &HermitianMatrix,
    probe_sys: &ProbeState,
    probe_env: &ProbeState,
    t: f64,
    d: usize,
) -> Result<f64> {
    let dim = probe_sys.dim() * probe_env.dim();
    if h_glo.dim() != dim {
        return Err(QmlaError::Shape(format!(
            "hamiltonian dim {} does not match sys x env dim {dim}",
            h_glo.dim()
        )));
    }
    if d >= probe_sys.dim() {
        return Err(QmlaError::Shape(format!(
            "outcome index {d} out of range for a {}-dim system",
            probe_sys.dim()
        )));
    }
    check_time(t)?;
    let spectrum = Spectrum::of(h_glo.matrix());
    let design = ExperimentDesign::new(probe_sys.clone(), Some(probe_env.clone()), t)?
        .with_measurement(MeasurementBasis::Computational, d);
    outcome_probability(&spectrum, dim.trailing_zeros() as usize, &design)
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(QmlaError::Domain(format!(
            "evolution time must be finite and >= 0, got {t}"
        )));
    }
    Ok(())
}

/// Probability of `design.outcome` for a Hamiltonian already decomposed on
/// `qubits` qubits, where `qubits` is `design.simulation_qubits(..)`.
pub fn outcome_probability(spectrum: &Spectrum, qubits: usize, design: &ExperimentDesign) -> Result<f64> {
    let sys = design.system_qubits();
    let sys_dim = design.probe.dim();
    let outcome_range = match design.basis {
        MeasurementBasis::ProbeAligned => 2,
        MeasurementBasis::Computational => sys_dim,
    };
    if design.outcome >= outcome_range {
        return Err(QmlaError::Shape(format!(
            "outcome index {} out of range ({outcome_range} outcomes)",
            design.outcome
        )));
    }

    let p = if qubits == sys {
        let psi = design.probe.amplitudes();
        match design.basis {
            MeasurementBasis::ProbeAligned => spectrum.return_amplitude(psi, design.time).norm_sqr(),
            MeasurementBasis::Computational => spectrum.evolve(psi, design.time)[design.outcome].norm_sqr(),
        }
    } else {
        let env = design
            .environment
            .as_ref()
            .ok_or_else(|| QmlaError::Shape("model needs an environment register but the design has none".into()))?;
        if qubits != sys + env.num_qubits() {
            return Err(QmlaError::Shape(format!(
                "spectrum on {qubits} qubits does not match a {sys}+{} qubit design",
                env.num_qubits()
            )));
        }
        let env_dim = env.dim();
        let global = design.probe.tensor(env);
        let phi = spectrum.evolve(global.amplitudes(), design.time);
        let mut total = 0.0;
        match design.basis {
            MeasurementBasis::ProbeAligned => {
                let psi = design.probe.amplitudes();
                for e in 0..env_dim {
                    let amp: Complex64 = (0..sys_dim).map(|s| psi[s].conj() * phi[s * env_dim + e]).sum();
                    total += amp.norm_sqr();
                }
            }
            MeasurementBasis::Computational => {
                for e in 0..env_dim {
                    total += phi[design.outcome * env_dim + e].norm_sqr();
                }
            }
        }
        total
    };

    let p = clamp_probability(p)?;
    Ok(match (design.basis, design.outcome) {
        (MeasurementBasis::ProbeAligned, 1) => 1.0 - p,
        _ => p,
    })
}

/// Shot-noise model for the simulated system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Standard deviation of the probe offset weight ω.
    pub probe_offset_sigma: f64,
    /// Repetitions per experiment; 1 yields single-shot bits.
    pub shot_count: u64,
    /// Draw the frequency from Binomial(M, p); otherwise report p itself.
    pub binomial_readout: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            probe_offset_sigma: 0.03,
            shot_count: 1_000_000,
            binomial_readout: true,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        NoiseConfig {
            probe_offset_sigma: 0.0,
            shot_count: 1_000_000,
            binomial_readout: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.probe_offset_sigma) {
            return Err(QmlaError::Config(format!(
                "noise.probe_offset_sigma must be in [0, 1), got {}",
                self.probe_offset_sigma
            )));
        }
        if self.shot_count == 0 {
            return Err(QmlaError::Config("noise.shot_count must be positive".into()));
        }
        Ok(())
    }
}

/// Draws the outcome of one experiment whose outcome-1 probability is `p`.
pub fn sample_datum(p: f64, noise: &NoiseConfig, rng: &mut QmlaRng) -> Result<Datum> {
    let p = clamp_probability(p)?;
    if noise.shot_count == 1 {
        return Ok(Datum::Bit(u8::from(rng.gen_bool(p))));
    }
    let m = noise.shot_count;
    let frequency = if noise.binomial_readout {
        let k = Binomial::new(m, p).expect("p validated").sample(rng);
        k as f64 / m as f64
    } else {
        p
    };
    Ok(Datum::Frequency {
        frequency,
        shots: Some(m),
    })
}

/// `(|base⟩ + ω|χ⟩)/‖·‖` with `ω ~ N(0, σ)` and `|χ⟩` Haar random.
///
/// The written `1/√(1+ω²)` prefactor is only exact when `χ ⟂ base`; the
/// state is renormalised explicitly instead.
pub fn randomized_probe(base: &ProbeState, sigma: f64, rng: &mut QmlaRng) -> ProbeState {
    if sigma <= 0.0 {
        return base.clone();
    }
    let omega: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
    let chi = ProbeState::haar_random(base.num_qubits(), rng);
    let mixed = base.amplitudes() + chi.amplitudes().scale(omega);
    ProbeState::normalized(mixed.iter().copied().collect()).unwrap_or_else(|_| base.clone())
}

/// Recorded `(time, probability)` pairs, e.g. normalised photoluminescence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedDataset {
    points: Vec<(f64, f64)>,
    source: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    time_us: f64,
    probability: f64,
}

impl RecordedDataset {
    pub fn new(points: Vec<(f64, f64)>, source: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(QmlaError::Dataset("dataset has no points".into()));
        }
        for (i, (t, p)) in points.iter().enumerate() {
            if !t.is_finite() || !(0.0..=1.0).contains(p) {
                return Err(QmlaError::Dataset(format!("row {i}: invalid point ({t}, {p})")));
            }
        }
        if let Some(i) = points.windows(2).position(|w| w[1].0 <= w[0].0) {
            return Err(QmlaError::Dataset(format!(
                "times must be strictly increasing (row {} after {})",
                i + 1,
                i
            )));
        }
        Ok(RecordedDataset {
            points,
            source: source.into(),
        })
    }

    /// Reads `time_us,probability` CSV; `#` lines are comments.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| QmlaError::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(file);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["time_us", "probability"] {
            return Err(QmlaError::Dataset(format!(
                "{}: expected header `time_us,probability`, found `{}`",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut points = Vec::new();
        for row in reader.deserialize::<CsvRow>() {
            let row = row?;
            points.push((row.time_us, row.probability));
        }
        RecordedDataset::new(points, path.display().to_string())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for &(time_us, probability) in &self.points {
            w.serialize(CsvRow { time_us, probability })?;
        }
        w.flush().map_err(|e| QmlaError::io(path, e))?;
        Ok(())
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn time_window(&self) -> (f64, f64) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    /// Probability at the recorded time nearest to `t` (ties go to the
    /// earlier record), together with the recorded time that was used.
    pub fn replay_probability(&self, t: f64) -> Result<(f64, f64)> {
        let (min, max) = self.time_window();
        if !(t >= min && t <= max) {
            return Err(QmlaError::OutOfRange { t, min, max });
        }
        let idx = self.points.partition_point(|(pt, _)| *pt < t);
        let chosen = if idx == 0 {
            0
        } else if idx == self.points.len() {
            idx - 1
        } else {
            let before = t - self.points[idx - 1].0;
            let after = self.points[idx].0 - t;
            if after < before {
                idx
            } else {
                idx - 1
            }
        };
        let (time, p) = self.points[chosen];
        Ok((p, time))
    }
}

/// Anything that can run an experiment and report the outcome.
pub trait SystemOracle: Send + Sync {
    /// Runs `design` and returns the datum plus the evolution time that was
    /// actually used (replay substitutes the nearest recorded time).
    fn measure(&self, design: &ExperimentDesign, rng: &mut QmlaRng) -> Result<(Datum, f64)>;

    /// Noise-free outcome probability at `design`, when available.
    fn probability(&self, design: &ExperimentDesign) -> Result<f64>;

    /// Admissible evolution times, when the system imposes one.
    fn time_window(&self) -> Option<(f64, f64)> {
        None
    }

    /// Times at which a fitted model should be compared with the system,
    /// when the system only knows a fixed set of times.
    fn evaluation_times(&self) -> Option<Vec<f64>> {
        None
    }
}

/// A known Hamiltonian with shot noise.
#[derive(Debug, Clone)]
pub struct SimulatedSystem {
    compiled: CompiledModel,
    params: ParamVector,
    spectrum: Spectrum,
    noise: NoiseConfig,
}

impl SimulatedSystem {
    pub fn new(model: &ModelExpression, params: ParamVector, noise: NoiseConfig) -> Result<Self> {
        noise.validate()?;
        let params = ParamVector::for_model(model, params.into_inner())?;
        let compiled = CompiledModel::new(model, model.num_qubits())?;
        let spectrum = compiled.spectrum(&params);
        Ok(SimulatedSystem {
            compiled,
            params,
            spectrum,
            noise,
        })
    }

    pub fn model(&self) -> &ModelExpression {
        self.compiled.model()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn noise(&self) -> &NoiseConfig {
        &self.noise
    }
}

impl SystemOracle for SimulatedSystem {
    fn measure(&self, design: &ExperimentDesign, rng: &mut QmlaRng) -> Result<(Datum, f64)> {
        let p = self.probability(design)?;
        Ok((sample_datum(p, &self.noise, rng)?, design.time))
    }

    fn probability(&self, design: &ExperimentDesign) -> Result<f64> {
        let qubits = design.simulation_qubits(self.compiled.num_qubits())?;
        if qubits == self.compiled.num_qubits() {
            outcome_probability(&self.spectrum, qubits, design)
        } else {
            let padded = CompiledModel::new(self.compiled.model(), qubits)?;
            outcome_probability(&padded.spectrum(&self.params), qubits, design)
        }
    }
}

/// Recorded data served back by nearest recorded time.
#[derive(Debug, Clone)]
pub struct ReplaySystem {
    dataset: RecordedDataset,
}

impl ReplaySystem {
    pub fn new(dataset: RecordedDataset) -> Self {
        ReplaySystem { dataset }
    }

    pub fn dataset(&self) -> &RecordedDataset {
        &self.dataset
    }
}

impl SystemOracle for ReplaySystem {
    fn measure(&self, design: &ExperimentDesign, _rng: &mut QmlaRng) -> Result<(Datum, f64)> {
        let (p, time) = self.dataset.replay_probability(design.time)?;
        Ok((
            Datum::Frequency {
                frequency: p,
                shots: None,
            },
            time,
        ))
    }

    fn probability(&self, design: &ExperimentDesign) -> Result<f64> {
        self.dataset.replay_probability(design.time).map(|(p, _)| p)
    }

    fn time_window(&self) -> Option<(f64, f64)> {
        Some(self.dataset.time_window())
    }

    fn evaluation_times(&self) -> Option<Vec<f64>> {
        Some(self.dataset.points().iter().map(|(t, _)| *t).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::assemble_hamiltonian;
    use crate::rng::seeded;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn h(model: &str, params: &[f64]) -> HermitianMatrix {
        assemble_hamiltonian(&ModelExpression::parse(model).unwrap(), params).unwrap()
    }

    #[test]
    fn sigma_z_on_plus_is_cos_squared() {
        let hz = h("Sz", &[1.0]);
        let p = expectation_value(&hz, &ProbeState::plus(), FRAC_PI_2).unwrap();
        assert!(p.abs() < 1e-12);
        let hz = h("Sz", &[2.3]);
        let p = expectation_value(&hz, &ProbeState::plus(), 0.7).unwrap();
        assert!((p - (2.3f64 * 0.7).cos().powi(2)).abs() < 1e-12);
        assert_eq!(expectation_value(&hz, &ProbeState::plus(), 0.0).unwrap(), 1.0);
    }

    #[test]
    fn zz_on_plus_plus_is_cos_squared() {
        // exp(-iZZt)|++⟩ = cos t|++⟩ - i sin t|--⟩.
        let hzz = h("Az", &[1.0]);
        let pp = ProbeState::plus().tensor(&ProbeState::plus());
        for t in [0.1, 0.9, 2.5] {
            let p = expectation_value(&hzz, &pp, t).unwrap();
            assert!((p - f64::cos(t).powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let hzz = h("Az", &[1.0]);
        assert!(matches!(
            expectation_value(&hzz, &ProbeState::plus(), 1.0),
            Err(QmlaError::Shape(_))
        ));
        let hz = h("Sz", &[1.0]);
        assert!(matches!(
            open_system_likelihood(&hz, &ProbeState::zero(), &ProbeState::zero(), 1.0, 0),
            Err(QmlaError::Shape(_))
        ));
        assert!(matches!(
            open_system_likelihood(&hzz, &ProbeState::zero(), &ProbeState::zero(), 1.0, 2),
            Err(QmlaError::Shape(_))
        ));
    }

    #[test]
    fn xx_coupling_partial_trace() {
        let hxx = h("Ax", &[1.0]);
        for t in [0.0, 0.4, 1.3, 3.0] {
            let p = open_system_likelihood(&hxx, &ProbeState::zero(), &ProbeState::zero(), t, 0).unwrap();
            assert!((p - f64::cos(t).powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_probe_at_time_zero() {
        let hg = h("SxyzAxTyz", &[0.3, 1.0, 2.0, 0.5, 0.2]);
        let one = ProbeState::basis(1, 1).unwrap();
        let p = open_system_likelihood(&hg, &one, &ProbeState::plus(), 0.0, 1).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sample_datum_edges() {
        let mut rng = seeded(1);
        let noise = NoiseConfig::default();
        assert_eq!(sample_datum(1.0, &noise, &mut rng).unwrap().value(), 1.0);
        assert_eq!(sample_datum(0.0, &noise, &mut rng).unwrap().value(), 0.0);
        let single = NoiseConfig {
            shot_count: 1,
            ..noise.clone()
        };
        assert_eq!(sample_datum(1.0, &single, &mut rng).unwrap(), Datum::Bit(1));
        assert_eq!(sample_datum(0.0, &single, &mut rng).unwrap(), Datum::Bit(0));
        assert_eq!(sample_datum(1.0 + 5e-10, &single, &mut rng).unwrap(), Datum::Bit(1));
        assert!(matches!(
            sample_datum(1.1, &noise, &mut rng),
            Err(QmlaError::Probability(_))
        ));
    }

    #[test]
    fn binomial_frequency_concentrates() {
        // sd = sqrt(0.25/1e6) = 5e-4; ±0.002 is 4 sd.
        let mut rng = seeded(3);
        let noise = NoiseConfig::default();
        let inside = (0..400)
            .filter(|_| (sample_datum(0.5, &noise, &mut rng).unwrap().value() - 0.5).abs() <= 0.002)
            .count();
        assert!(inside >= 396, "{inside}/400 inside");
    }

    #[test]
    fn randomized_probe_properties() {
        let mut rng = seeded(5);
        let base = ProbeState::plus();
        assert_eq!(randomized_probe(&base, 0.0, &mut rng), base);
        let mut high_fidelity = 0;
        for _ in 0..1000 {
            let p = randomized_probe(&base, 0.03, &mut rng);
            assert!((p.amplitudes().norm() - 1.0).abs() < 1e-12);
            if base.fidelity(&p) >= 0.99 {
                high_fidelity += 1;
            }
        }
        assert!(high_fidelity >= 990, "{high_fidelity}");
        let a = randomized_probe(&base, 0.03, &mut seeded(9));
        let b = randomized_probe(&base, 0.03, &mut seeded(9));
        assert_eq!(a, b);
    }

    #[test]
    fn replay_nearest_neighbour() {
        let ds = RecordedDataset::new(vec![(1.0, 0.9), (2.0, 0.4), (3.0, 0.7)], "test").unwrap();
        assert_eq!(ds.replay_probability(2.0).unwrap(), (0.4, 2.0));
        assert_eq!(ds.replay_probability(2.4).unwrap(), (0.4, 2.0));
        assert_eq!(ds.replay_probability(2.5).unwrap(), (0.4, 2.0));
        assert_eq!(ds.replay_probability(2.6).unwrap(), (0.7, 3.0));
        assert_eq!(ds.replay_probability(1.5).unwrap(), (0.9, 1.0));
        match ds.replay_probability(3.5) {
            Err(QmlaError::OutOfRange { min, max, .. }) => assert_eq!((min, max), (1.0, 3.0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dataset_validation() {
        assert!(RecordedDataset::new(vec![(1.0, 0.5), (1.0, 0.4)], "x").is_err());
        assert!(RecordedDataset::new(vec![(1.0, 1.5)], "x").is_err());
        assert!(RecordedDataset::new(vec![], "x").is_err());
    }

    #[test]
    fn csv_round_trip_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "# hahn echo\ntime_us,probability\n0.0,1.0\n# mid\n1.5,0.25\n").unwrap();
        let ds = RecordedDataset::load_csv(&path).unwrap();
        assert_eq!(ds.points(), &[(0.0, 1.0), (1.5, 0.25)]);
        let out = dir.path().join("o.csv");
        ds.write_csv(&out).unwrap();
        assert_eq!(RecordedDataset::load_csv(&out).unwrap().points(), ds.points());

        std::fs::write(&path, "t,p\n0,1\n").unwrap();
        assert!(matches!(RecordedDataset::load_csv(&path), Err(QmlaError::Dataset(_))));
    }

    #[test]
    fn datum_likelihoods() {
        assert!((Datum::Bit(1).log_likelihood(0.0) - LIKELIHOOD_CLAMP.ln()).abs() < 1e-12);
        assert_eq!(Datum::Bit(0).likelihood(0.25), 0.75);
        let f = Datum::Frequency {
            frequency: 1.0,
            shots: Some(10),
        };
        assert!((f.likelihood(0.3) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn simulated_and_replay_oracles() {
        let model = ModelExpression::parse("Sz").unwrap();
        let sys = SimulatedSystem::new(&model, ParamVector::new(vec![1.0]).unwrap(), NoiseConfig::noiseless()).unwrap();
        let design = ExperimentDesign::new(ProbeState::plus(), Some(ProbeState::plus()), PI / 4.0).unwrap();
        let (datum, t) = sys.measure(&design, &mut seeded(0)).unwrap();
        assert!((datum.value() - 0.5).abs() < 1e-12);
        assert_eq!(t, PI / 4.0);

        let ds = RecordedDataset::new(vec![(0.0, 1.0), (1.0, 0.2)], "r").unwrap();
        let replay = ReplaySystem::new(ds);
        let design = ExperimentDesign::new(ProbeState::plus(), None, 0.8).unwrap();
        let (datum, t) = replay.measure(&design, &mut seeded(0)).unwrap();
        assert_eq!((datum.value(), t), (0.2, 1.0));
        assert_eq!(replay.time_window(), Some((0.0, 1.0)));
    }
}
