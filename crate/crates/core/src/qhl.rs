// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! Sequential Monte Carlo learning of a model's parameters.
//!
//! A weighted particle cloud approximates the posterior over the parameter
//! vector. Each epoch picks an evolution time from the spread of the cloud
//! (`t = 1/‖x₁ − x₂‖₁` for two particles drawn by weight), queries the
//! system, multiplies every weight by the particle's likelihood of the
//! observed datum and resamples with the Liu-West kernel whenever the
//! effective sample size drops below half the particle count.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{QmlaError, Result};
use crate::pauli::{CompiledModel, ModelExpression};
use crate::rng::QmlaRng;
use crate::system::{outcome_probability, randomized_probe, Datum, ExperimentDesign, ProbeState, SystemOracle};

const WEIGHT_SUM_TOL: f64 = 1e-10;
const DET_FLOOR: f64 = 1e-300;
const COVARIANCE_FLOOR: f64 = 1e-12;

/// Prior for one parameter, in rad/us.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamPrior {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

impl ParamPrior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ParamPrior::Uniform { lo, hi } if lo < hi && lo.is_finite() && hi.is_finite() => Ok(()),
            ParamPrior::Normal { mean, sd } if sd > 0.0 && mean.is_finite() && sd.is_finite() => Ok(()),
            other => Err(QmlaError::Config(format!("invalid prior {other:?}"))),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ParamPrior::Uniform { lo, hi } => 0.5 * (lo + hi),
            ParamPrior::Normal { mean, .. } => mean,
        }
    }

    fn sample(&self, rng: &mut QmlaRng) -> f64 {
        match *self {
            ParamPrior::Uniform { lo, hi } => rng.gen_range(lo..hi),
            ParamPrior::Normal { mean, sd } => Normal::new(mean, sd).expect("validated prior").sample(rng),
        }
    }
}

impl Default for ParamPrior {
    fn default() -> Self {
        ParamPrior::Uniform { lo: 0.0, hi: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub params: Vec<ParamPrior>,
}

impl PriorSpec {
    pub fn new(params: Vec<ParamPrior>) -> Result<Self> {
        let spec = PriorSpec { params };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        PriorSpec::new(vec![ParamPrior::Uniform { lo, hi }; dim])
    }

    /// The same prior for every parameter.
    pub fn repeated(prior: ParamPrior, dim: usize) -> Result<Self> {
        PriorSpec::new(vec![prior; dim])
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(QmlaError::Config("prior has no parameters".into()));
        }
        self.params.iter().try_for_each(ParamPrior::validate)
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.params.iter().map(ParamPrior::mean).collect()
    }
}

/// Weighted particles; locations are stored row-major (`len × dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    dim: usize,
    locations: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleCloud {
    pub fn new(particles: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dim = particles.first().map_or(0, Vec::len);
        if dim == 0 || particles.iter().any(|p| p.len() != dim) {
            return Err(QmlaError::Shape(
                "particles must be non-empty and share one length".into(),
            ));
        }
        if weights.len() != particles.len() {
            return Err(QmlaError::Shape(format!(
                "{} weights for {} particles",
                weights.len(),
                particles.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(QmlaError::Domain(format!(
                "weights must be non-negative and sum to 1 (sum = {sum})"
            )));
        }
        Ok(ParticleCloud {
            dim,
            locations: particles.into_iter().flatten().collect(),
            weights,
        })
    }

    pub fn with_uniform_weights(particles: Vec<Vec<f64>>) -> Result<Self> {
        let n = particles.len().max(1);
        ParticleCloud::new(particles, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.locations[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particles(&self) -> impl Iterator<Item = &[f64]> {
        self.locations.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.dim];
        for (x, w) in self.particles().zip(&self.weights) {
            for (m, xi) in mu.iter_mut().zip(x) {
                *m += w * xi;
            }
        }
        mu
    }

    /// Weighted covariance `Σ w (x − μ)(x − μ)ᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        let mut dx = vec![0.0; self.dim];
        for (x, w) in self.particles().zip(&self.weights) {
            if *w == 0.0 {
                continue;
            }
            for (d, (xi, mi)) in dx.iter_mut().zip(x.iter().zip(&mu)) {
                *d = xi - mi;
            }
            for r in 0..self.dim {
                for c in r..self.dim {
                    cov[(r, c)] += w * dx[r] * dx[c];
                }
            }
        }
        for r in 0..self.dim {
            for c in 0..r {
                cov[(r, c)] = cov[(c, r)];
            }
        }
        cov
    }

    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(self)
    }

    pub fn summary(&self) -> PosteriorSummary {
        let cov = self.covariance();
        PosteriorSummary {
            mean: self.mean(),
            covariance: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
            volume: volume_of(&cov),
        }
    }

    /// Standard deviation per parameter.
    pub fn marginal_sd(&self) -> Vec<f64> {
        let cov = self.covariance();
        (0..self.dim).map(|i| cov[(i, i)].max(0.0).sqrt()).collect()
    }

    /// Multiplies weights by `likelihoods` and renormalises.
    pub fn apply_likelihoods(&mut self, likelihoods: &[f64], epoch: usize) -> Result<()> {
        let mut total = 0.0;
        for (w, l) in self.weights.iter_mut().zip(likelihoods) {
            *w *= l;
            total += *w;
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(QmlaError::Collapse { epoch, record: None });
        }
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(())
    }
}

/// Posterior mean, covariance and volume (`√det Σ`, or the sd for one
/// parameter).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub volume: f64,
}

/// `n` iid draws from the prior with weights `1/n`.
pub fn initialize_cloud(prior: &PriorSpec, n: usize, rng: &mut QmlaRng) -> Result<ParticleCloud> {
    if n < 2 {
        return Err(QmlaError::Config(format!("need at least 2 particles, got {n}")));
    }
    prior.validate()?;
    let mut locations = Vec::with_capacity(n * prior.dim());
    for _ in 0..n {
        for p in &prior.params {
            locations.push(p.sample(rng));
        }
    }
    Ok(ParticleCloud {
        dim: prior.dim(),
        locations,
        weights: vec![1.0 / n as f64; n],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicTime {
    pub time: f64,
    /// The two particles coincided; `time` is the cap.
    pub degenerate: bool,
}

/// `1/‖x₁ − x₂‖₁` for two distinct particles drawn by weight, capped at
/// `cap`.
pub fn design_heuristic(cloud: &ParticleCloud, cap: f64, rng: &mut QmlaRng) -> Result<HeuristicTime> {
    if cloud.len() < 2 {
        return Err(QmlaError::Shape("design heuristic needs at least 2 particles".into()));
    }
    let index =
        WeightedIndex::new(cloud.weights()).map_err(|e| QmlaError::Domain(format!("cannot draw particles: {e}")))?;
    let i = index.sample(rng);
    let mut j = index.sample(rng);
    // Redraw a few times when the same particle comes up twice.
    for _ in 0..16 {
        if j != i {
            break;
        }
        j = index.sample(rng);
    }
    Ok(heuristic_time(cloud.particle(i), cloud.particle(j), cap))
}

/// The heuristic for a given particle pair.
pub fn heuristic_time(x1: &[f64], x2: &[f64], cap: f64) -> HeuristicTime {
    let d: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b).abs()).sum();
    if d > 0.0 {
        HeuristicTime {
            time: (1.0 / d).min(cap),
            degenerate: false,
        }
    } else {
        HeuristicTime {
            time: cap,
            degenerate: true,
        }
    }
}

/// Likelihood of `datum` at `design` for every particle of `cloud`, in
/// particle order.
pub fn particle_likelihoods(
    cloud: &ParticleCloud,
    datum: &Datum,
    design: &ExperimentDesign,
    model: &ModelExpression,
) -> Result<Vec<f64>> {
    if model.num_params() != cloud.dim() {
        return Err(QmlaError::Alignment {
            expected: model.num_params(),
            got: cloud.dim(),
        });
    }
    let qubits = design.simulation_qubits(model.num_qubits())?;
    let compiled = CompiledModel::new(model, qubits)?;
    cloud
        .particles()
        .map(|x| {
            let spectrum = compiled.spectrum(x);
            outcome_probability(&spectrum, qubits, design).map(|p| datum.likelihood(p))
        })
        .collect()
}

/// Weight update `w_p ← w_p · Pr(datum | x_p, design)`, renormalised.
pub fn bayes_update(
    cloud: &mut ParticleCloud,
    datum: &Datum,
    design: &ExperimentDesign,
    model: &ModelExpression,
    epoch: usize,
) -> Result<()> {
    let likelihoods = particle_likelihoods(cloud, datum, design, model)?;
    cloud.apply_likelihoods(&likelihoods, epoch)
}

pub fn effective_sample_size(cloud: &ParticleCloud) -> f64 {
    1.0 / cloud.weights().iter().map(|w| w * w).sum::<f64>()
}

/// True when `ESS < n/2`.
pub fn should_resample(cloud: &ParticleCloud, n: usize) -> bool {
    effective_sample_size(cloud) < n as f64 / 2.0
}

#[derive(Debug, Clone)]
pub struct ResampleOutcome {
    pub cloud: ParticleCloud,
    /// Covariance was not positive definite; a floored diagonal was used.
    pub degraded: bool,
}

/// Liu-West kernel: ancestor `x` drawn by weight, new location
/// `a·x + (1−a)·μ + ε` with `ε ~ N(0, (1−a²)Σ)`.
pub fn liu_west_resample(cloud: &ParticleCloud, a: f64, rng: &mut QmlaRng) -> Result<ResampleOutcome> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(QmlaError::Config(format!(
            "Liu-West parameter a must be in (0, 1], got {a}"
        )));
    }
    let n = cloud.len();
    let dim = cloud.dim();
    let mu = cloud.mean();
    let cov = cloud.covariance();
    let shrink = 1.0 - a * a;

    let mut degraded = false;
    let factor: Option<DMatrix<f64>> = if shrink > 0.0 {
        match Cholesky::new(cov.clone() * shrink) {
            Some(ch) => Some(ch.l()),
            None => {
                degraded = true;
                let diag = DVector::from_iterator(
                    dim,
                    (0..dim).map(|i| (cov[(i, i)].max(COVARIANCE_FLOOR) * shrink).sqrt()),
                );
                Some(DMatrix::from_diagonal(&diag))
            }
        }
    } else {
        None
    };

    let index = WeightedIndex::new(cloud.weights()).map_err(|e| QmlaError::Domain(format!("cannot resample: {e}")))?;
    let mut locations = Vec::with_capacity(n * dim);
    let mut z = DVector::zeros(dim);
    for _ in 0..n {
        let x = cloud.particle(index.sample(rng));
        match &factor {
            Some(l) => {
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                let eps = l * &z;
                for k in 0..dim {
                    locations.push(a * x[k] + (1.0 - a) * mu[k] + eps[k]);
                }
            }
            None => locations.extend_from_slice(x),
        }
    }
    Ok(ResampleOutcome {
        cloud: ParticleCloud {
            dim,
            locations,
            weights: vec![1.0 / n as f64; n],
        },
        degraded,
    })
}

/// `√det Σ` (det floored at 1e-300); the weighted sd when there is one
/// parameter.
pub fn volume(cloud: &ParticleCloud) -> f64 {
    volume_of(&cloud.covariance())
}

fn volume_of(cov: &DMatrix<f64>) -> f64 {
    let det = if cov.nrows() == 1 {
        cov[(0, 0)]
    } else {
        cov.determinant()
    };
    det.max(DET_FLOOR).sqrt()
}

/// How the system probe is prepared for each experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePolicy {
    pub kind: ProbeKind,
    /// Offset weight σ_ω applied to the base probe each epoch.
    pub offset_sigma: f64,
    /// Environment register state, when models may act on it.
    pub environment: Option<ProbeState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// `|+⟩` with a random offset.
    #[default]
    Plus,
    /// A fresh Haar-random single-qubit state every epoch.
    Haar,
}

impl ProbePolicy {
    pub fn plus() -> Self {
        ProbePolicy {
            kind: ProbeKind::Plus,
            offset_sigma: 0.0,
            environment: None,
        }
    }

    pub fn draw(&self, rng: &mut QmlaRng) -> ProbeState {
        match self.kind {
            ProbeKind::Plus => randomized_probe(&ProbeState::plus(), self.offset_sigma, rng),
            ProbeKind::Haar => ProbeState::haar_random(1, rng),
        }
    }

    /// The probe without any randomisation, used for evaluation grids.
    pub fn nominal(&self) -> ProbeState {
        ProbeState::plus()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QhlConfig {
    pub num_particles: usize,
    pub num_epochs: usize,
    /// Liu-West contraction `a`.
    pub resample_a: f64,
    /// Upper bound on heuristic evolution times, in us.
    pub time_cap: f64,
    /// Fraction of final epochs whose heuristic time is boosted.
    pub late_boost_fraction: f64,
    pub late_boost_factor: f64,
}

impl Default for QhlConfig {
    fn default() -> Self {
        QhlConfig {
            num_particles: 3000,
            num_epochs: 1000,
            resample_a: 0.98,
            time_cap: 100.0,
            late_boost_fraction: 0.1,
            late_boost_factor: 10.0,
        }
    }
}

impl QhlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_particles < 2 {
            return Err(QmlaError::Config(format!(
                "num_particles must be >= 2, got {}",
                self.num_particles
            )));
        }
        if !(self.resample_a > 0.0 && self.resample_a <= 1.0) {
            return Err(QmlaError::Config("resample_a must be in (0, 1]".into()));
        }
        if !(self.time_cap > 0.0) {
            return Err(QmlaError::Config("time_cap must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.late_boost_fraction) || !(self.late_boost_factor >= 1.0) {
            return Err(QmlaError::Config(
                "late-time boost must have fraction in [0,1] and factor >= 1".into(),
            ));
        }
        Ok(())
    }

    fn boosted(&self, epoch: usize) -> bool {
        let boosted = (self.num_epochs as f64 * self.late_boost_fraction).round() as usize;
        epoch >= self.num_epochs.saturating_sub(boosted)
    }
}

/// A `(design, datum)` pair with a stable identity, so datasets of
/// different models can be merged without double counting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub id: String,
    pub design: ExperimentDesign,
    pub datum: Datum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub t: f64,
    pub datum: Datum,
    pub volume: f64,
    pub resampled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub model: ModelExpression,
    pub final_params: Vec<f64>,
    pub final_sd: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub prior_volume: f64,
    pub summary: PosteriorSummary,
    #[serde(skip)]
    pub dataset: Vec<ExperimentRecord>,
}

impl TrainingRecord {
    fn from_cloud(
        model: &ModelExpression,
        cloud: &ParticleCloud,
        prior_volume: f64,
        epochs: Vec<EpochRecord>,
        dataset: Vec<ExperimentRecord>,
    ) -> Self {
        TrainingRecord {
            model: model.clone(),
            final_params: cloud.mean(),
            final_sd: cloud.marginal_sd(),
            epochs,
            prior_volume,
            summary: cloud.summary(),
            dataset,
        }
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.volume).collect()
    }
}

/// Trains `model` against `system` for `config.num_epochs` epochs.
pub fn run_qhl(
    system: &dyn SystemOracle,
    model: &ModelExpression,
    prior: &PriorSpec,
    config: &QhlConfig,
    probes: &ProbePolicy,
    rng: &mut QmlaRng,
) -> Result<TrainingRecord> {
    config.validate()?;
    if prior.dim() != model.num_params() {
        return Err(QmlaError::Alignment {
            expected: model.num_params(),
            got: prior.dim(),
        });
    }
    let mut cloud = initialize_cloud(prior, config.num_particles, rng)?;
    let prior_volume = volume(&cloud);
    let mut epochs = Vec::with_capacity(config.num_epochs);
    let mut dataset = Vec::with_capacity(config.num_epochs);
    let name = model.name();

    for epoch in 0..config.num_epochs {
        let mut t = design_heuristic(&cloud, config.time_cap, rng)?.time;
        if config.boosted(epoch) {
            t = (t * config.late_boost_factor).min(config.time_cap);
        }
        if let Some((lo, hi)) = system.time_window() {
            t = t.clamp(lo, hi);
        }
        let probe = probes.draw(rng);
        let mut design = ExperimentDesign::new(probe, probes.environment.clone(), t)?;
        let (datum, used) = system.measure(&design, rng)?;
        design.time = used;

        if let Err(err) = bayes_update(&mut cloud, &datum, &design, model, epoch) {
            return Err(match err {
                QmlaError::Collapse { epoch, .. } => QmlaError::Collapse {
                    epoch,
                    record: Some(Box::new(TrainingRecord::from_cloud(
                        model,
                        &cloud,
                        prior_volume,
                        epochs,
                        dataset,
                    ))),
                },
                other => other,
            });
        }

        let resampled = should_resample(&cloud, config.num_particles);
        if resampled {
            cloud = liu_west_resample(&cloud, config.resample_a, rng)?.cloud;
        }
        epochs.push(EpochRecord {
            t: used,
            datum,
            volume: volume(&cloud),
            resampled,
        });
        dataset.push(ExperimentRecord {
            id: format!("{name}#{epoch}"),
            design,
            datum,
        });
    }

    Ok(TrainingRecord::from_cloud(model, &cloud, prior_volume, epochs, dataset))
}
