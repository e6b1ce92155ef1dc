// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! Bayes factors between trained models.
//!
//! Both models are scored on the union of their training datasets, keyed by
//! experiment id so shared experiments count once, and the log Bayes factor
//! is the difference of cumulative log-likelihoods.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{QmlaError, Result};
use crate::pauli::{CompiledModel, ModelExpression, ParamVector, Spectrum};
use crate::qhl::{ExperimentRecord, TrainingRecord};
use crate::system::outcome_probability;

/// A model with its learned parameters frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: ModelExpression,
    pub params: ParamVector,
    /// Posterior sd per parameter, when known.
    pub sd: Vec<f64>,
}

impl TrainedModel {
    pub fn new(model: ModelExpression, params: Vec<f64>) -> Result<Self> {
        let params = ParamVector::for_model(&model, params)?;
        let sd = vec![0.0; params.len()];
        Ok(TrainedModel { model, params, sd })
    }

    pub fn from_record(record: &TrainingRecord) -> Result<Self> {
        let mut trained = TrainedModel::new(record.model.clone(), record.final_params.clone())?;
        trained.sd = record.final_sd.clone();
        Ok(trained)
    }

    pub fn name(&self) -> String {
        self.model.name()
    }

    /// Spectrum on `qubits` qubits, with identity padding when needed.
    pub fn spectrum(&self, qubits: usize) -> Result<Spectrum> {
        Ok(CompiledModel::new(&self.model, qubits)?.spectrum(&self.params))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihoodRecord {
    pub model: String,
    pub dataset_size: usize,
    pub total_log_likelihood: f64,
    /// The dataset was empty, so the total is 0 by definition.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty: bool,
}

/// `Σ_d ln Pr(d | H', t_d)` with the clamped likelihood used in training.
pub fn cumulative_log_likelihood<'a>(
    model: &TrainedModel,
    dataset: impl IntoIterator<Item = &'a ExperimentRecord>,
) -> Result<LogLikelihoodRecord> {
    // One spectrum per simulation size; designs in one dataset rarely differ.
    let mut spectra: BTreeMap<usize, Spectrum> = BTreeMap::new();
    let mut total = 0.0;
    let mut count = 0;
    for record in dataset {
        let qubits = record.design.simulation_qubits(model.model.num_qubits())?;
        let spectrum = match spectra.entry(qubits) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => e.insert(model.spectrum(qubits)?),
        };
        let p = outcome_probability(spectrum, qubits, &record.design)?;
        total += record.datum.log_likelihood(p);
        count += 1;
    }
    if count == 0 {
        log::warn!("log-likelihood of {} on an empty dataset is taken as 0", model.name());
    }
    Ok(LogLikelihoodRecord {
        model: model.name(),
        dataset_size: count,
        total_log_likelihood: total,
        empty: count == 0,
    })
}

/// `D_i ∪ D_j` deduplicated by id and ordered by id.
pub fn union_datasets<'a>(d_i: &'a [ExperimentRecord], d_j: &'a [ExperimentRecord]) -> Vec<&'a ExperimentRecord> {
    let mut merged: BTreeMap<&str, &ExperimentRecord> = BTreeMap::new();
    for record in d_i.iter().chain(d_j) {
        merged.entry(record.id.as_str()).or_insert(record);
    }
    merged.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    I,
    J,
    Inconclusive,
}

impl Direction {
    /// Direction of `log_b` at evidence threshold `b`.
    pub fn of(log_b: f64, b: f64) -> Self {
        let cut = b.ln();
        if log_b > cut {
            Direction::I
        } else if log_b < -cut {
            Direction::J
        } else {
            Direction::Inconclusive
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesFactorResult {
    pub model_i: String,
    pub model_j: String,
    pub log_b: f64,
    pub dataset_size: usize,
    pub direction: Direction,
}

impl BayesFactorResult {
    /// Name of the decisive winner, if any.
    pub fn winner(&self) -> Option<&str> {
        match self.direction {
            Direction::I => Some(&self.model_i),
            Direction::J => Some(&self.model_j),
            Direction::Inconclusive => None,
        }
    }
}

/// `ln B_ij = ℓ_i − ℓ_j` on an already merged dataset.
pub fn bayes_factor_on(
    model_i: &TrainedModel,
    model_j: &TrainedModel,
    dataset: &[&ExperimentRecord],
    b: f64,
) -> Result<BayesFactorResult> {
    if !(b > 1.0) {
        return Err(QmlaError::Config(format!("evidence threshold must exceed 1, got {b}")));
    }
    let l_i = cumulative_log_likelihood(model_i, dataset.iter().copied())?;
    let l_j = cumulative_log_likelihood(model_j, dataset.iter().copied())?;
    let log_b = l_i.total_log_likelihood - l_j.total_log_likelihood;
    Ok(BayesFactorResult {
        model_i: model_i.name(),
        model_j: model_j.name(),
        log_b,
        dataset_size: dataset.len(),
        direction: Direction::of(log_b, b),
    })
}

/// Bayes factor of `model_i` over `model_j` on `D_i ∪ D_j`.
pub fn bayes_factor(
    model_i: &TrainedModel,
    model_j: &TrainedModel,
    d_i: &[ExperimentRecord],
    d_j: &[ExperimentRecord],
    b: f64,
) -> Result<BayesFactorResult> {
    bayes_factor_on(model_i, model_j, &union_datasets(d_i, d_j), b)
}

/// Particles needed for a reliable decision between two models:
/// `ceil(144 κ B² k² d L / γ²)`.
pub fn min_particle_bound(kappa: f64, b: f64, k: f64, d: u32, l: f64, gamma: f64) -> Result<u64> {
    if gamma == 0.0 {
        return Err(QmlaError::Domain("gamma must be non-zero".into()));
    }
    let args = [kappa, b, k, f64::from(d), l, gamma];
    if args.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(QmlaError::Domain(format!(
            "all arguments must be positive and finite, got {args:?}"
        )));
    }
    let bound = 144.0 * kappa * b * b * k * k * f64::from(d) * l / (gamma * gamma);
    Ok(bound.ceil() as u64)
}
