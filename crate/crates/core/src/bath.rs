// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! Spin-bath size estimation from Hahn-echo data.
//!
//! Each bath spin contributes a pseudospin factor
//!
//! ```text
//! S_j = 1 − (|B0 × B1_j|² / (|B0|² |B1_j|²)) · sin²(ω0 τ/2) · sin²(ω_j1 τ/2)
//! ```
//!
//! and the echo signal is `(Π_j S_j + 1)/2`. Spins are drawn from a small
//! set of hyperparameters, which are learned by the same particle filter
//! used for Hamiltonian models (CLE). A Metropolis-Hastings walk over the
//! number of spins compares the fitted likelihoods, and a logistic fit of
//! the likelihood gain locates where adding spins stops helping. The
//! decoherence time comes from the decay of the revival maxima.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{QmlaError, Result};
use crate::qhl::{initialize_cloud, liu_west_resample, should_resample, ParamPrior, PriorSpec};
use crate::rng::{derive_seed, seeded, QmlaRng};
use crate::system::{Datum, RecordedDataset};

pub type Vec3 = [f64; 3];

/// Redraws allowed when truncating a spin frequency at zero.
const TRUNCATION_TRIES: usize = 8;
const POSITIVE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathHyperparameters {
    pub b0: Vec3,
    pub b1_mean: Vec3,
    pub sigma_b: f64,
    pub omega0: f64,
    pub delta_omega: f64,
    pub sigma_omega: f64,
}

/// Number of learnable hyperparameters, in the order of
/// [`BathHyperparameters::to_vec`].
pub const NUM_HYPERPARAMETERS: usize = 10;

impl BathHyperparameters {
    pub fn validate(&self) -> Result<()> {
        if norm_sqr(&self.b0) == 0.0 {
            return Err(QmlaError::Domain("B0 must be non-zero".into()));
        }
        if !(self.sigma_b > 0.0 && self.sigma_omega > 0.0 && self.omega0 > 0.0) {
            return Err(QmlaError::Domain(format!(
                "sigma_B, sigma_omega and omega0 must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// `[B0x, B0y, B0z, B1x, B1y, B1z, σ_B, ω0, δω, σ_ω]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(NUM_HYPERPARAMETERS);
        v.extend_from_slice(&self.b0);
        v.extend_from_slice(&self.b1_mean);
        v.extend_from_slice(&[self.sigma_b, self.omega0, self.delta_omega, self.sigma_omega]);
        v
    }

    /// Inverse of [`to_vec`](Self::to_vec). Scale parameters are folded to
    /// positive values, since particles may wander below zero.
    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() != NUM_HYPERPARAMETERS {
            return Err(QmlaError::Alignment {
                expected: NUM_HYPERPARAMETERS,
                got: x.len(),
            });
        }
        let positive = |v: f64| v.abs().max(POSITIVE_FLOOR);
        Ok(BathHyperparameters {
            b0: [x[0], x[1], x[2]],
            b1_mean: [x[3], x[4], x[5]],
            sigma_b: positive(x[6]),
            omega0: positive(x[7]),
            delta_omega: x[8],
            sigma_omega: positive(x[9]),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathRealization {
    pub b1: Vec<Vec3>,
    pub omega1: Vec<f64>,
}

impl BathRealization {
    pub fn new(b1: Vec<Vec3>, omega1: Vec<f64>) -> Result<Self> {
        if b1.len() != omega1.len() {
            return Err(QmlaError::Alignment {
                expected: b1.len(),
                got: omega1.len(),
            });
        }
        Ok(BathRealization { b1, omega1 })
    }

    pub fn num_spins(&self) -> usize {
        self.b1.len()
    }
}

/// Which pseudospin numerator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PseudospinForm {
    /// `|B0 × B1|² / (|B0|² |B1|²)`, bounded in [0, 1].
    #[default]
    SquaredCross,
    /// `|B0 × B1| / (|B0|² |B1|²)`; not dimensionless, kept for comparison.
    UnsquaredCross,
}

fn norm_sqr(v: &Vec3) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn cross_norm_sqr(a: &Vec3, b: &Vec3) -> f64 {
    let c = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    norm_sqr(&c)
}

/// Coupling factor multiplying the two sin² terms.
fn coupling(form: PseudospinForm, b0: &Vec3, b1: &Vec3) -> f64 {
    let denom = norm_sqr(b0) * norm_sqr(b1);
    if denom == 0.0 {
        return 0.0;
    }
    match form {
        PseudospinForm::SquaredCross => cross_norm_sqr(b0, b1) / denom,
        PseudospinForm::UnsquaredCross => cross_norm_sqr(b0, b1).sqrt() / denom,
    }
}

fn pseudospin_unchecked(form: PseudospinForm, b0: &Vec3, b1: &Vec3, omega0: f64, omega1: f64, tau: f64) -> f64 {
    let s0 = (0.5 * omega0 * tau).sin();
    let s1 = (0.5 * omega1 * tau).sin();
    1.0 - coupling(form, b0, b1) * s0 * s0 * s1 * s1
}

pub fn pseudospin(b0: &Vec3, b1: &Vec3, omega0: f64, omega1: f64, tau: f64) -> Result<f64> {
    pseudospin_with(PseudospinForm::SquaredCross, b0, b1, omega0, omega1, tau)
}

pub fn pseudospin_with(form: PseudospinForm, b0: &Vec3, b1: &Vec3, omega0: f64, omega1: f64, tau: f64) -> Result<f64> {
    if norm_sqr(b0) == 0.0 || norm_sqr(b1) == 0.0 {
        return Err(QmlaError::Domain("pseudospin needs non-zero fields".into()));
    }
    Ok(pseudospin_unchecked(form, b0, b1, omega0, omega1, tau))
}

/// `(Π_j S_j + 1)/2`; 1 for an empty bath.
pub fn hahn_signal(realization: &BathRealization, b0: &Vec3, omega0: f64, tau: f64) -> Result<f64> {
    hahn_signal_with(PseudospinForm::SquaredCross, realization, b0, omega0, tau)
}

pub fn hahn_signal_with(
    form: PseudospinForm,
    realization: &BathRealization,
    b0: &Vec3,
    omega0: f64,
    tau: f64,
) -> Result<f64> {
    let mut product = 1.0;
    for (b1, w) in realization.b1.iter().zip(&realization.omega1) {
        product *= pseudospin_with(form, b0, b1, omega0, *w, tau)?;
    }
    Ok(0.5 * (product + 1.0))
}

/// Standard normals for one realization of `n` spins. Frequencies get a few
/// spare draws so truncation at zero can be applied by redrawing.
#[derive(Debug, Clone)]
struct SpinNormals {
    field: Vec<Vec3>,
    frequency: Vec<[f64; TRUNCATION_TRIES]>,
}

impl SpinNormals {
    fn draw(n: usize, rng: &mut impl RngCore) -> Self {
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        let field = (0..n).map(|_| [normal(), normal(), normal()]).collect();
        let frequency = (0..n).map(|_| std::array::from_fn(|_| normal())).collect();
        SpinNormals { field, frequency }
    }

    fn spin(&self, hyper: &BathHyperparameters, j: usize) -> (Vec3, f64) {
        let z = &self.field[j];
        let b1 = std::array::from_fn(|k| hyper.b1_mean[k] + hyper.sigma_b * z[k]);
        let mean = hyper.omega0 + hyper.delta_omega;
        let omega = self.frequency[j]
            .iter()
            .map(|w| mean + hyper.sigma_omega * w)
            .find(|w| *w >= 0.0)
            // All redraws negative: fold the last one.
            .unwrap_or_else(|| (mean + hyper.sigma_omega * self.frequency[j][TRUNCATION_TRIES - 1]).abs());
        (b1, omega)
    }

    fn realize(&self, hyper: &BathHyperparameters) -> BathRealization {
        let (b1, omega1) = (0..self.field.len()).map(|j| self.spin(hyper, j)).unzip();
        BathRealization { b1, omega1 }
    }

    fn signal(&self, form: PseudospinForm, hyper: &BathHyperparameters, tau: f64) -> f64 {
        let mut product = 1.0;
        for j in 0..self.field.len() {
            let (b1, omega) = self.spin(hyper, j);
            product *= pseudospin_unchecked(form, &hyper.b0, &b1, hyper.omega0, omega, tau);
        }
        0.5 * (product + 1.0)
    }
}

/// `n_s` spins with `B1_j ~ N(B1, σ_B I)` and `ω_j1 ~ N(ω0 + δω, σ_ω)`
/// truncated at zero.
pub fn sample_bath_realization(hyper: &BathHyperparameters, n_s: usize, rng: &mut QmlaRng) -> Result<BathRealization> {
    if n_s == 0 {
        return Err(QmlaError::Config("a bath realization needs at least one spin".into()));
    }
    Ok(SpinNormals::draw(n_s, rng).realize(hyper))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleConfig {
    pub num_particles: usize,
    pub num_epochs: usize,
    pub resample_a: f64,
    pub prior: PriorSpec,
    /// Realizations averaged when scoring a fitted bath on the dataset.
    pub eval_realizations: usize,
    /// Seed of the scoring realizations, shared by every `n_s` so scores
    /// are comparable.
    pub eval_seed: u64,
    pub pseudospin: PseudospinForm,
}

impl Default for CleConfig {
    fn default() -> Self {
        CleConfig {
            num_particles: 1000,
            num_epochs: 100,
            resample_a: 0.98,
            prior: default_bath_prior(),
            eval_realizations: 32,
            eval_seed: 0,
            pseudospin: PseudospinForm::SquaredCross,
        }
    }
}

impl CleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prior.dim() != NUM_HYPERPARAMETERS {
            return Err(QmlaError::Config(format!(
                "bath prior needs {NUM_HYPERPARAMETERS} entries, got {}",
                self.prior.dim()
            )));
        }
        self.prior.validate()?;
        if self.num_particles < 2 || self.eval_realizations == 0 {
            return Err(QmlaError::Config(
                "CLE needs >= 2 particles and >= 1 evaluation realization".into(),
            ));
        }
        if !(self.resample_a > 0.0 && self.resample_a <= 1.0) {
            return Err(QmlaError::Config("resample_a must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Weakly informative prior around a bath with revivals every ~16 us.
pub fn default_bath_prior() -> PriorSpec {
    let n = |mean, sd| ParamPrior::Normal { mean, sd };
    PriorSpec {
        params: vec![
            n(0.0, 0.1),
            n(0.0, 0.1),
            n(1.0, 0.1),
            n(0.5, 0.3),
            n(0.0, 0.3),
            n(0.5, 0.3),
            n(0.1, 0.05),
            n(0.4, 0.1),
            n(0.0, 0.1),
            n(0.05, 0.02),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleResult {
    pub n_s: usize,
    pub hyperparameters: BathHyperparameters,
    pub posterior_sd: Vec<f64>,
    /// `ℓ(D | n_s)` at the posterior mean, natural log.
    pub log_likelihood: f64,
}

/// Mean predicted signal over `realizations` baths drawn from one seed.
pub fn expected_signal(
    hyper: &BathHyperparameters,
    n_s: usize,
    taus: &[f64],
    realizations: usize,
    form: PseudospinForm,
    seed: u64,
) -> Vec<f64> {
    let mut rng = seeded(seed);
    let mut mean = vec![0.0; taus.len()];
    for _ in 0..realizations {
        let normals = SpinNormals::draw(n_s, &mut rng);
        for (m, tau) in mean.iter_mut().zip(taus) {
            *m += normals.signal(form, hyper, *tau);
        }
    }
    mean.iter_mut().for_each(|m| *m /= realizations as f64);
    mean
}

/// `Σ_i ln Pr(f_i | τ_i)` for the expected signal of `hyper` at `n_s`.
pub fn bath_log_likelihood(
    dataset: &RecordedDataset,
    hyper: &BathHyperparameters,
    n_s: usize,
    realizations: usize,
    form: PseudospinForm,
    seed: u64,
) -> f64 {
    let taus: Vec<f64> = dataset.points().iter().map(|(t, _)| *t).collect();
    let predicted = expected_signal(hyper, n_s, &taus, realizations, form, seed);
    dataset
        .points()
        .iter()
        .zip(predicted)
        .map(|((_, f), p)| {
            Datum::Frequency {
                frequency: *f,
                shots: None,
            }
            .log_likelihood(p)
        })
        .sum()
}

/// Learns the hyperparameters for a bath of `n_s` spins and scores the
/// posterior mean on the whole dataset.
///
/// Each epoch scores one recorded point. All particles in an epoch share
/// the same underlying normal draws, so their likelihoods differ only
/// through the hyperparameters.
pub fn cle_train(dataset: &RecordedDataset, n_s: usize, config: &CleConfig, rng: &mut QmlaRng) -> Result<CleResult> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(QmlaError::InsufficientData("CLE needs a non-empty dataset".into()));
    }
    if n_s == 0 {
        return Err(QmlaError::Config("CLE needs at least one bath spin".into()));
    }
    let mut cloud = initialize_cloud(&config.prior, config.num_particles, rng)?;
    let points = dataset.points();
    let mut likelihoods = vec![0.0; cloud.len()];
    for epoch in 0..config.num_epochs {
        let (tau, frequency) = points[rng.gen_range(0..points.len())];
        let normals = SpinNormals::draw(n_s, rng);
        let datum = Datum::Frequency { frequency, shots: None };
        for (l, x) in likelihoods.iter_mut().zip(cloud.particles()) {
            let hyper = BathHyperparameters::from_slice(x)?;
            *l = datum.likelihood(normals.signal(config.pseudospin, &hyper, tau));
        }
        cloud.apply_likelihoods(&likelihoods, epoch)?;
        if should_resample(&cloud, config.num_particles) {
            cloud = liu_west_resample(&cloud, config.resample_a, rng)?.cloud;
        }
    }
    let hyperparameters = BathHyperparameters::from_slice(&cloud.mean())?;
    let log_likelihood = bath_log_likelihood(
        dataset,
        &hyperparameters,
        n_s,
        config.eval_realizations,
        config.pseudospin,
        config.eval_seed,
    );
    Ok(CleResult {
        n_s,
        hyperparameters,
        posterior_sd: cloud.marginal_sd(),
        log_likelihood,
    })
}

/// Source of `ℓ(D | n_s)` for the Metropolis-Hastings walk.
pub trait LogLikelihoodSource {
    fn log_likelihood(&mut self, n_s: usize, rng: &mut QmlaRng) -> Result<f64>;
}

/// Fixed `ℓ` per `n_s`, indexed from `n_s = 1`; `-∞` outside the table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableLikelihood(pub Vec<f64>);

impl LogLikelihoodSource for TableLikelihood {
    fn log_likelihood(&mut self, n_s: usize, _rng: &mut QmlaRng) -> Result<f64> {
        Ok(n_s
            .checked_sub(1)
            .and_then(|i| self.0.get(i))
            .copied()
            .unwrap_or(f64::NEG_INFINITY))
    }
}

/// Trains a fresh CLE for every proposal.
#[derive(Debug, Clone)]
pub struct CleLikelihood<'a> {
    pub dataset: &'a RecordedDataset,
    pub config: &'a CleConfig,
}

impl LogLikelihoodSource for CleLikelihood<'_> {
    fn log_likelihood(&mut self, n_s: usize, rng: &mut QmlaRng) -> Result<f64> {
        cle_train(self.dataset, n_s, self.config, rng).map(|r| r.log_likelihood)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MhaConfig {
    /// Proposals made.
    pub steps: usize,
    pub initial_ns: usize,
    /// Proposals above this are rejected, like those below 1.
    pub max_ns: Option<usize>,
    /// Keep every k-th step in the trace.
    pub record_every: usize,
}

impl Default for MhaConfig {
    fn default() -> Self {
        MhaConfig {
            steps: 2000,
            initial_ns: 1,
            max_ns: Some(40),
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhaStep {
    pub proposed: usize,
    /// `ℓ` at the proposal; absent when it fell outside the allowed range.
    pub proposed_log_likelihood: Option<f64>,
    pub accepted: bool,
    /// State after the step.
    pub n_s: usize,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhaTrace {
    pub initial_ns: usize,
    pub initial_log_likelihood: f64,
    pub steps: Vec<MhaStep>,
    pub current: usize,
    pub acceptance_rate: f64,
}

impl MhaTrace {
    /// Mean `ℓ` per `n_s` over every evaluation in the trace, ascending.
    pub fn mean_log_likelihood_by_n(&self) -> Vec<(usize, f64, usize)> {
        let mut acc: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
        let mut add = |n: usize, l: f64| {
            if l.is_finite() {
                let e = acc.entry(n).or_insert((0.0, 0));
                e.0 += l;
                e.1 += 1;
            }
        };
        add(self.initial_ns, self.initial_log_likelihood);
        for s in &self.steps {
            if let Some(l) = s.proposed_log_likelihood {
                add(s.proposed, l);
            }
        }
        acc.into_iter().map(|(n, (sum, c))| (n, sum / c as f64, c)).collect()
    }

    /// Visits per `n_s` among recorded steps.
    pub fn visit_counts(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut counts = std::collections::BTreeMap::new();
        for s in &self.steps {
            *counts.entry(s.n_s).or_default() += 1;
        }
        counts
    }
}

/// Metropolis-Hastings over the number of bath spins with a ±1 proposal.
/// Proposals outside `[1, max_ns]` are rejected, which keeps the proposal
/// symmetric. A move is accepted with probability `min(1, exp(ℓ' − ℓ))`.
pub fn mha_run(source: &mut dyn LogLikelihoodSource, config: &MhaConfig, rng: &mut QmlaRng) -> Result<MhaTrace> {
    if config.steps == 0 || config.initial_ns == 0 || config.record_every == 0 {
        return Err(QmlaError::Config(
            "MHA needs steps >= 1, initial_ns >= 1 and record_every >= 1".into(),
        ));
    }
    let max = config.max_ns.unwrap_or(usize::MAX);
    if config.initial_ns > max {
        return Err(QmlaError::Config("initial_ns exceeds max_ns".into()));
    }
    let mut n = config.initial_ns;
    let mut l = source.log_likelihood(n, rng)?;
    let initial_log_likelihood = l;
    let mut steps = Vec::with_capacity(config.steps / config.record_every);
    let mut accepted_count = 0usize;

    for i in 0..config.steps {
        let proposed = if rng.gen_bool(0.5) { n + 1 } else { n.wrapping_sub(1) };
        let (proposed_log_likelihood, accepted) = if proposed == 0 || proposed > max {
            (None, false)
        } else {
            let lp = source.log_likelihood(proposed, rng)?;
            let accept = if lp >= l {
                true
            } else if lp.is_finite() {
                rng.gen::<f64>() < (lp - l).exp()
            } else {
                false
            };
            (Some(lp), accept)
        };
        if accepted {
            n = proposed;
            l = proposed_log_likelihood.expect("evaluated");
            accepted_count += 1;
        }
        if (i + 1) % config.record_every == 0 {
            steps.push(MhaStep {
                proposed,
                proposed_log_likelihood,
                accepted,
                n_s: n,
                log_likelihood: l,
            });
        }
    }
    Ok(MhaTrace {
        initial_ns: config.initial_ns,
        initial_log_likelihood,
        steps,
        current: n,
        acceptance_rate: accepted_count as f64 / config.steps as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub l: f64,
    pub k: f64,
    pub n0: f64,
    /// `n0 + 2/k`, where the curve reaches about 88% of its plateau.
    pub plateau_onset: Option<f64>,
    /// Input was flat; `k` is reported as 0.
    pub degenerate: bool,
    pub rss: f64,
}

const K_MAX: f64 = 50.0;

fn logistic(l: f64, k: f64, n0: f64, n: f64) -> (f64, f64) {
    let s = 1.0 / (1.0 + (-k * (n - n0)).exp());
    (l * s, s)
}

/// Least-squares fit of `y ≈ L / (1 + exp(−k (n − n0)))` by
/// Levenberg-Marquardt.
pub fn fit_logistic(points: &[(f64, f64)]) -> Result<LogisticFit> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(QmlaError::InsufficientData("logistic fit needs >= 3 distinct n".into()));
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    if hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1.0) {
        return Ok(LogisticFit {
            l: mean_y,
            k: 0.0,
            n0: distinct.iter().sum::<f64>() / distinct.len() as f64,
            plateau_onset: None,
            degenerate: true,
            rss: 0.0,
        });
    }

    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rising = sorted.last().expect("non-empty").1 >= sorted[0].1;
    let l0 = if rising { hi } else { lo };
    let half = 0.5 * l0;
    let n0 = sorted
        .iter()
        .find(|p| if l0 >= 0.0 { p.1 >= half } else { p.1 <= half })
        .map_or(distinct[distinct.len() / 2], |p| p.0);
    let mut theta = [l0, if rising { 1.0 } else { -1.0 }, n0];

    let rss_of = |t: &[f64; 3]| -> f64 {
        points
            .iter()
            .map(|(n, y)| (y - logistic(t[0], t[1], t[2], *n).0).powi(2))
            .sum()
    };
    let mut rss = rss_of(&theta);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..1000 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (n, y) in points {
            let (f, s) = logistic(theta[0], theta[1], theta[2], *n);
            let ds = theta[0] * s * (1.0 - s);
            let j = Vector3::new(s, ds * (n - theta[2]), -ds * theta[1]);
            jtj += j * j.transpose();
            jtr += j * (y - f);
        }
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for i in 0..3 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(delta) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [
                theta[0] + delta[0],
                (theta[1] + delta[1]).clamp(-K_MAX, K_MAX),
                theta[2] + delta[2],
            ];
            let trial_rss = rss_of(&trial);
            if trial_rss.is_finite() && trial_rss < rss {
                let gain = rss - trial_rss;
                theta = trial;
                rss = trial_rss;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if gain <= 1e-14 * rss.max(1e-300) || rss < 1e-28 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: a stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    let residuals: Vec<f64> = points
        .iter()
        .map(|(n, y)| y - logistic(theta[0], theta[1], theta[2], *n).0)
        .collect();
    if !converged || !rss.is_finite() {
        return Err(QmlaError::FitFailed {
            residual: rss,
            residuals,
        });
    }
    let [l, k, n0] = theta;
    Ok(LogisticFit {
        l,
        k,
        n0,
        plateau_onset: (k != 0.0).then(|| n0 + 2.0 / k),
        degenerate: false,
        rss,
    })
}

/// Fits the log-likelihood gain `ℓ̄(n) − min ℓ̄` of an MHA trace, which
/// rises and levels off once extra spins stop improving the fit.
pub fn fit_trace(trace: &MhaTrace) -> Result<LogisticFit> {
    let means = trace.mean_log_likelihood_by_n();
    let floor = means.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let points: Vec<(f64, f64)> = means.iter().map(|(n, l, _)| (*n as f64, l - floor)).collect();
    fit_logistic(&points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2Estimate {
    pub t2: f64,
    pub uncertainty: f64,
    /// Revival maxima do not decay; `t2` is infinite.
    pub no_decay: bool,
    pub exponent: f64,
    /// `(τ, maximum)` per revival window.
    pub peaks: Vec<(f64, f64)>,
}

/// Maximum recorded value in each revival window `2πk/ω0 ± π/ω0`, `k ≥ 1`,
/// whose centre lies inside the recorded range.
pub fn revival_peaks(dataset: &RecordedDataset, omega0: f64) -> Result<Vec<(f64, f64)>> {
    if !(omega0 > 0.0) {
        return Err(QmlaError::Domain(format!("omega0 must be positive, got {omega0}")));
    }
    let (t_min, t_max) = dataset.time_window();
    let period = std::f64::consts::TAU / omega0;
    let mut peaks = Vec::new();
    let mut k = 1.0;
    while k * period <= t_max {
        let centre = k * period;
        if centre >= t_min {
            let best = dataset
                .points()
                .iter()
                .filter(|(t, _)| (t - centre).abs() < 0.5 * period)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.total_cmp(&a.0)));
            if let Some(p) = best {
                peaks.push(*p);
            }
        }
        k += 1.0;
    }
    Ok(peaks)
}

/// Fits `exp(−(τ/T2)^p)` to the revival maxima.
pub fn estimate_t2(dataset: &RecordedDataset, omega0: f64, exponent: f64) -> Result<T2Estimate> {
    if !(exponent > 0.0) {
        return Err(QmlaError::Config(format!(
            "envelope exponent must be positive, got {exponent}"
        )));
    }
    let peaks = revival_peaks(dataset, omega0)?;
    if peaks.len() < 3 {
        return Err(QmlaError::InsufficientData(format!(
            "T2 needs at least 3 revival windows, found {}",
            peaks.len()
        )));
    }
    if peaks.iter().all(|(_, y)| *y >= 1.0 - 1e-12) {
        return Ok(T2Estimate {
            t2: f64::INFINITY,
            uncertainty: f64::INFINITY,
            no_decay: true,
            exponent,
            peaks,
        });
    }
    let p = exponent;
    let model = |t2: f64, tau: f64| (-(tau / t2).powf(p)).exp();
    let rss_of = |t2: f64| -> f64 { peaks.iter().map(|(t, y)| (y - model(t2, *t)).powi(2)).sum() };

    // Start from the log-linearised estimate over peaks strictly inside (0, 1).
    let logs: Vec<f64> = peaks
        .iter()
        .filter(|(t, y)| *t > 0.0 && *y > 0.0 && *y < 1.0)
        .map(|(t, y)| t.ln() - (-y.ln()).ln() / p)
        .collect();
    let mut t2 = if logs.is_empty() {
        peaks.iter().map(|(t, _)| *t).fold(0.0, f64::max)
    } else {
        (logs.iter().sum::<f64>() / logs.len() as f64).exp()
    };
    let mut rss = rss_of(t2);
    for _ in 0..200 {
        let (mut jtj, mut jtr) = (0.0, 0.0);
        for (tau, y) in &peaks {
            let u = (tau / t2).powf(p);
            let f = (-u).exp();
            let j = f * p * u / t2;
            jtj += j * j;
            jtr += j * (y - f);
        }
        if jtj == 0.0 {
            break;
        }
        let mut step = jtr / jtj;
        let mut moved = false;
        for _ in 0..40 {
            let trial = t2 + step;
            if trial > 0.0 {
                let r = rss_of(trial);
                if r <= rss {
                    moved = (trial - t2).abs() > 1e-12 * t2;
                    t2 = trial;
                    rss = r;
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let jtj: f64 = peaks
        .iter()
        .map(|(tau, _)| {
            let u = (tau / t2).powf(p);
            ((-u).exp() * p * u / t2).powi(2)
        })
        .sum();
    let dof = (peaks.len() - 1) as f64;
    let uncertainty = if jtj > 0.0 {
        (rss / dof / jtj).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(T2Estimate {
        t2,
        uncertainty,
        no_decay: false,
        exponent,
        peaks,
    })
}

/// Hahn-echo data from one bath realization, optionally with a decay
/// envelope `exp(−(τ/T2)^p)` on the echo and Gaussian read-out noise.
pub fn synthetic_hahn_data(
    hyper: &BathHyperparameters,
    n_s: usize,
    taus: &[f64],
    envelope: Option<(f64, f64)>,
    noise_sd: f64,
    rng: &mut QmlaRng,
) -> Result<RecordedDataset> {
    hyper.validate()?;
    let bath = sample_bath_realization(hyper, n_s, rng)?;
    let mut points = Vec::with_capacity(taus.len());
    for &tau in taus {
        let mut p = hahn_signal(&bath, &hyper.b0, hyper.omega0, tau)?;
        if let Some((t2, exponent)) = envelope {
            p *= (-(tau / t2).powf(exponent)).exp();
        }
        if noise_sd > 0.0 {
            p += noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
        points.push((tau, p.clamp(0.0, 1.0)));
    }
    RecordedDataset::new(points, format!("synthetic bath, n_s = {n_s}"))
}

/// Seed for the `i`-th CLE run of an MHA walk.
pub fn step_seed(master: u64, step: usize) -> u64 {
    derive_seed(master, step as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    fn hyper() -> BathHyperparameters {
        BathHyperparameters {
            b0: [0.0, 0.0, 1.0],
            b1_mean: [0.6, 0.0, 0.8],
            sigma_b: 0.05,
            omega0: TAU / 16.0,
            delta_omega: 0.1,
            sigma_omega: 0.02,
        }
    }

    #[test]
    fn pseudospin_examples() {
        let b0 = [0.0, 0.0, 2.0];
        for tau in [0.3, 1.7, 9.0] {
            assert_eq!(pseudospin(&b0, &[0.0, 0.0, 5.0], 1.3, 0.7, tau).unwrap(), 1.0);
        }
        let omega0 = 0.4;
        assert!((pseudospin(&b0, &[1.0, 0.0, 0.3], omega0, 0.9, TAU / omega0).unwrap() - 1.0).abs() < 1e-12);
        // Perpendicular fields with ω0τ = ω1τ = π.
        let s = pseudospin(&b0, &[3.0, 0.0, 0.0], PI, PI, 1.0).unwrap();
        assert!(s.abs() < 1e-12);
        assert!(pseudospin(&[0.0; 3], &[1.0, 0.0, 0.0], 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn hahn_examples() {
        let b0 = [0.0, 0.0, 1.0];
        let parallel = BathRealization::new(vec![[0.0, 0.0, 1.0]; 3], vec![0.5; 3]).unwrap();
        assert_eq!(hahn_signal(&parallel, &b0, 0.4, 3.0).unwrap(), 1.0);
        let empty = BathRealization::new(vec![], vec![]).unwrap();
        assert_eq!(hahn_signal(&empty, &b0, 0.4, 3.0).unwrap(), 1.0);
        // A single perpendicular spin at ω0τ = ω1τ = π gives S = 0: Pr = 1/2.
        let single = BathRealization::new(vec![[1.0, 0.0, 0.0]], vec![PI]).unwrap();
        assert!((hahn_signal(&single, &b0, PI, 1.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_sampling() {
        let mut h = hyper();
        h.sigma_b = 1e-300;
        h.sigma_omega = 1e-300;
        let r = sample_bath_realization(&h, 4, &mut seeded(1)).unwrap();
        for (b, w) in r.b1.iter().zip(&r.omega1) {
            for (x, mean) in b.iter().zip(&h.b1_mean) {
                assert!((x - mean).abs() < 1e-12);
            }
            assert!((w - (h.omega0 + h.delta_omega)).abs() < 1e-12);
        }
        assert_eq!(sample_bath_realization(&h, 1, &mut seeded(1)).unwrap().num_spins(), 1);
        assert!(sample_bath_realization(&h, 0, &mut seeded(1)).is_err());
    }

    #[test]
    fn truncation_keeps_frequencies_non_negative() {
        let mut h = hyper();
        h.omega0 = 0.01;
        h.delta_omega = -0.01;
        h.sigma_omega = 1.0;
        let r = sample_bath_realization(&h, 500, &mut seeded(2)).unwrap();
        assert!(r.omega1.iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn logistic_recovers_exact_curve() {
        let pts: Vec<(f64, f64)> = (1..=30)
            .map(|n| (n as f64, logistic(5.0, 0.8, 10.0, n as f64).0))
            .collect();
        let fit = fit_logistic(&pts).unwrap();
        assert!((fit.l - 5.0).abs() < 0.05);
        assert!((fit.k - 0.8).abs() < 0.008);
        assert!((fit.n0 - 10.0).abs() < 0.1);
        assert!((fit.plateau_onset.unwrap() - 12.5).abs() < 0.1);
    }

    #[test]
    fn logistic_flat_and_step() {
        let flat: Vec<(f64, f64)> = (1..=10).map(|n| (n as f64, 3.0)).collect();
        let fit = fit_logistic(&flat).unwrap();
        assert!(fit.degenerate && fit.k == 0.0);
        let step: Vec<(f64, f64)> = (1..=30).map(|n| (n as f64, if n >= 13 { 1.0 } else { 0.0 })).collect();
        let fit = fit_logistic(&step).unwrap();
        assert!((fit.n0 - 13.0).abs() <= 1.0, "n0 = {}", fit.n0);
        assert!(fit_logistic(&[(1.0, 0.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn t2_from_synthetic_envelope() {
        let omega0 = TAU / 16.0;
        let taus: Vec<f64> = (0..=400).map(|i| i as f64 * 0.5).collect();
        let data = synthetic_hahn_data(&hyper(), 8, &taus, Some((80.0, 3.0)), 0.0, &mut seeded(4)).unwrap();
        let est = estimate_t2(&data, omega0, 3.0).unwrap();
        assert!((est.t2 - 80.0).abs() < 5.0, "T2 = {}", est.t2);
        assert!(!est.no_decay);

        let flat = synthetic_hahn_data(&hyper(), 8, &taus, None, 0.0, &mut seeded(4)).unwrap();
        assert!(estimate_t2(&flat, omega0, 3.0).unwrap().no_decay);

        let short = RecordedDataset::new(vec![(0.0, 1.0), (16.0, 0.9), (20.0, 0.5)], "short").unwrap();
        assert!(matches!(
            estimate_t2(&short, omega0, 3.0),
            Err(QmlaError::InsufficientData(_))
        ));
    }

    #[test]
    fn flat_likelihood_walk_is_unbiased() {
        let mut source = TableLikelihood(vec![0.0; 10_000]);
        let config = MhaConfig {
            steps: 1000,
            initial_ns: 500,
            max_ns: None,
            record_every: 1,
        };
        let trace = mha_run(&mut source, &config, &mut seeded(5)).unwrap();
        assert_eq!(trace.acceptance_rate, 1.0);
        let drift = (trace.current as f64 - 500.0) / 1000.0;
        assert!(drift.abs() < 0.1);
    }

    #[test]
    fn cle_without_epochs_returns_prior_mean() {
        let taus: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let data = synthetic_hahn_data(&hyper(), 3, &taus, None, 0.0, &mut seeded(6)).unwrap();
        let config = CleConfig {
            num_particles: 2000,
            num_epochs: 0,
            ..CleConfig::default()
        };
        let r = cle_train(&data, 3, &config, &mut seeded(7)).unwrap();
        let prior = BathHyperparameters::from_slice(&config.prior.mean()).unwrap();
        for (a, b) in r.hyperparameters.to_vec().iter().zip(prior.to_vec()) {
            assert!((a - b).abs() < 0.05);
        }
        let expected = bath_log_likelihood(&data, &r.hyperparameters, 3, 32, PseudospinForm::SquaredCross, 0);
        assert_eq!(r.log_likelihood, expected);
    }
}
