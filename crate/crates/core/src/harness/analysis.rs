// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! Aggregate statistics over a batch of instances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{QmlaError, Result};
use crate::pauli::ModelExpression;
use crate::search::InstanceResult;

/// `1 − SS_res/SS_tot`, with `SS_tot` about the mean of `observed`.
pub fn compute_r_squared(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() {
        return Err(QmlaError::Alignment {
            expected: observed.len(),
            got: predicted.len(),
        });
    }
    if observed.len() < 2 {
        return Err(QmlaError::InsufficientData("R² needs at least 2 points".into()));
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_tot: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(QmlaError::Domain("R² is undefined for data with zero variance".into()));
    }
    let ss_res: f64 = observed.iter().zip(predicted).map(|(y, f)| (y - f).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    /// Instances that completed.
    pub instances: usize,
    pub failures: Vec<FailureRecord>,
    pub win_counts: BTreeMap<String, usize>,
    pub win_rates: BTreeMap<String, f64>,
    /// Fraction of instances whose champion is the true model.
    pub success_rate: Option<f64>,
    /// Fraction of instances whose champion is in the credible set.
    pub credible_rate: Option<f64>,
    pub credible_models: Vec<ModelExpression>,
    pub median_r_squared: Option<f64>,
    pub classification_histogram: BTreeMap<String, usize>,
    /// Champion parameter count minus true parameter count, with counts.
    pub param_difference_histogram: BTreeMap<i64, usize>,
    /// Learned champion values per term, in instance order.
    pub parameter_values: BTreeMap<String, Vec<f64>>,
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

pub fn aggregate(
    results: &[InstanceResult],
    failures: Vec<FailureRecord>,
    credible: &[ModelExpression],
) -> BatchReport {
    let n = results.len();
    let mut win_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut classification_histogram = BTreeMap::new();
    let mut param_difference_histogram = BTreeMap::new();
    let mut parameter_values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut successes = 0;
    let mut with_truth = 0;
    let mut credible_wins = 0;

    for r in results {
        let champ = &r.champion.model;
        *win_counts.entry(champ.name()).or_default() += 1;
        if credible.contains(champ) {
            credible_wins += 1;
        }
        if let Some(truth) = &r.truth {
            with_truth += 1;
            if truth == champ {
                successes += 1;
            }
            let diff = champ.num_params() as i64 - truth.num_params() as i64;
            *param_difference_histogram.entry(diff).or_default() += 1;
        }
        if let Some(c) = r.classification {
            let key = serde_json::to_value(c)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            *classification_histogram.entry(key).or_default() += 1;
        }
        for (term, value) in champ.terms().iter().zip(&r.champion.params) {
            parameter_values.entry(term.label()).or_default().push(*value);
        }
    }

    let rate = |k: usize, of: usize| (of > 0).then(|| k as f64 / of as f64);
    BatchReport {
        instances: n,
        failures,
        win_rates: win_counts
            .iter()
            .map(|(k, v)| (k.clone(), *v as f64 / n as f64))
            .collect(),
        win_counts,
        success_rate: rate(successes, with_truth),
        credible_rate: if credible.is_empty() {
            None
        } else {
            rate(credible_wins, n)
        },
        credible_models: credible.to_vec(),
        median_r_squared: median(results.iter().filter_map(|r| r.r_squared).collect()),
        classification_histogram,
        param_difference_histogram,
        parameter_values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_squared_examples() {
        assert_eq!(compute_r_squared(&[0.1, 0.5, 0.9], &[0.1, 0.5, 0.9]).unwrap(), 1.0);
        assert_eq!(compute_r_squared(&[0.0, 1.0], &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(compute_r_squared(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), -3.0);
        assert!(matches!(
            compute_r_squared(&[0.3, 0.3], &[0.3, 0.3]),
            Err(QmlaError::Domain(_))
        ));
        assert!(compute_r_squared(&[0.3], &[0.3]).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }

    #[test]
    fn empty_batch_report() {
        let r = aggregate(&[], Vec::new(), &[]);
        assert_eq!(r.instances, 0);
        assert!(r.win_counts.is_empty());
        assert_eq!(r.success_rate, None);
    }
}
