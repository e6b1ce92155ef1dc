// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! Wall-clock estimate for one instance, counted in Hamiltonian
//! exponentiations.

use serde::{Deserialize, Serialize};

use crate::search::GrowthRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeInputs {
    pub num_particles: usize,
    pub num_epochs: usize,
    pub parallelism: usize,
    /// Models per layer, `N_m(µ)`.
    pub layer_sizes: Vec<usize>,
    /// Layer champions left after parental collapse; all of them when unset.
    pub champions: Option<usize>,
}

impl RuntimeInputs {
    pub fn for_rule(rule: &GrowthRule, num_particles: usize, num_epochs: usize, parallelism: usize) -> Self {
        RuntimeInputs {
            num_particles,
            num_epochs,
            parallelism,
            layer_sizes: rule.layer_sizes(),
            champions: None,
        }
    }
}

fn pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Estimated seconds for one instance given `t_h` seconds per
/// exponentiation. Counts training, per-layer Bayes factors, parental
/// comparisons and all-pairs comparisons among surviving champions.
pub fn estimate_runtime(inputs: &RuntimeInputs, t_h: f64) -> f64 {
    let p = inputs.parallelism.max(1);
    let per_model = (inputs.num_particles * inputs.num_epochs) as f64;
    let batches = |n: usize| n.div_ceil(p) as f64;
    let layers = inputs.layer_sizes.len();
    let champions = inputs.champions.unwrap_or(layers);

    let training: f64 = inputs.layer_sizes.iter().map(|&n| batches(n)).sum();
    let layer_bf: f64 = inputs.layer_sizes.iter().map(|&n| 2.0 * batches(pairs(n))).sum();
    let parental = 2.0 * batches(layers.saturating_sub(1));
    let final_round = 2.0 * batches(pairs(champions));
    t_h * per_model * (training + layer_bf + parental + final_round)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_budget_costs_nothing() {
        let rule = GrowthRule::default();
        assert_eq!(estimate_runtime(&RuntimeInputs::for_rule(&rule, 0, 1000, 6), 5e-4), 0.0);
        assert_eq!(estimate_runtime(&RuntimeInputs::for_rule(&rule, 3000, 0, 6), 5e-4), 0.0);
    }

    #[test]
    fn hand_count_at_full_scale() {
        // 9 training rounds, 2·(1+1+0)·3 layer BF rounds, 2·⌈8/6⌉ parental,
        // 2·⌈36/6⌉ final: 37 rounds of 3e6 exponentiations.
        let inputs = RuntimeInputs::for_rule(&GrowthRule::default(), 3000, 1000, 6);
        let t = estimate_runtime(&inputs, 5e-4);
        assert!((t - 37.0 * 3e6 * 5e-4).abs() < 1e-6);
    }
}
