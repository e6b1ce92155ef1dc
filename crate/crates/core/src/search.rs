// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! Greedy layered search over Hamiltonian models.
//!
//! Layer 0 holds one model per primitive of the first stage. Each later
//! layer adds one unconsumed term to the previous layer's champion, moving
//! to the next stage once the current one is used up. When every stage is
//! exhausted the layer champions are compared with their parents, the
//! survivors are consolidated into a global champion and weak terms of that
//! champion are dropped if the reduced model is strongly preferred.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayes::{
    bayes_factor, cumulative_log_likelihood, union_datasets, BayesFactorResult, Direction, TrainedModel,
};
use crate::error::{QmlaError, Result};
use crate::harness::analysis::compute_r_squared;
use crate::pauli::{ModelExpression, PauliAxis, PauliTerm};
use crate::qhl::{run_qhl, ExperimentRecord, ParamPrior, PriorSpec, ProbeKind, ProbePolicy, QhlConfig, TrainingRecord};
use crate::rng::{derive_seed_for, seeded};
use crate::system::{ExperimentDesign, ProbeState, SystemOracle};

/// Staged primitive terms plus evidence thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthRule {
    pub stages: Vec<Vec<PauliTerm>>,
    /// Evidence threshold `b` for layer consolidation and parental collapse.
    pub evidence_threshold: f64,
    /// Bayes factor a reduced champion must exceed to replace the champion.
    pub reduced_threshold: f64,
}

impl Default for GrowthRule {
    fn default() -> Self {
        use PauliAxis::{X, Y, Z};
        GrowthRule {
            stages: vec![
                vec![PauliTerm::Spin(X), PauliTerm::Spin(Y), PauliTerm::Spin(Z)],
                vec![
                    PauliTerm::Hyperfine(X),
                    PauliTerm::Hyperfine(Y),
                    PauliTerm::Hyperfine(Z),
                ],
                vec![
                    PauliTerm::Transverse(X, Y),
                    PauliTerm::Transverse(X, Z),
                    PauliTerm::Transverse(Y, Z),
                ],
            ],
            evidence_threshold: 10.0,
            reduced_threshold: 100.0,
        }
    }
}

impl GrowthRule {
    /// Only the single-qubit spin stage.
    pub fn spin_only() -> Self {
        let mut rule = GrowthRule::default();
        rule.stages.truncate(1);
        rule
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.stages.iter().any(Vec::is_empty) {
            return Err(QmlaError::Config("growth rule needs non-empty stages".into()));
        }
        let mut seen = BTreeSet::new();
        for term in self.stages.iter().flatten() {
            if !seen.insert(*term) {
                return Err(QmlaError::Config(format!(
                    "term {term} appears in more than one stage slot"
                )));
            }
        }
        if !(self.evidence_threshold > 1.0) || !(self.reduced_threshold > 1.0) {
            return Err(QmlaError::Config("evidence thresholds must exceed 1".into()));
        }
        Ok(())
    }

    pub fn max_qubits(&self) -> usize {
        self.stages
            .iter()
            .flatten()
            .map(PauliTerm::num_qubits)
            .max()
            .unwrap_or(1)
    }

    /// One single-term model per first-stage primitive.
    pub fn initial_layer(&self) -> Vec<ModelExpression> {
        self.stages[0]
            .iter()
            .map(|t| ModelExpression::new([*t]).expect("single term"))
            .collect()
    }

    /// Layer sizes `N_m(µ)` of a full greedy run.
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.stages.iter().flat_map(|s| (1..=s.len()).rev()).collect()
    }
}

/// Children of `champion`: one per unconsumed term of the first stage that
/// still has any. Empty once every stage is exhausted.
pub fn spawn(champion: &ModelExpression, rule: &GrowthRule) -> Vec<ModelExpression> {
    for stage in &rule.stages {
        let children: Vec<_> = stage
            .iter()
            .filter(|t| !champion.contains(t))
            .map(|t| champion.with_term(*t).expect("term is new"))
            .collect();
        if !children.is_empty() {
            return children;
        }
    }
    Vec::new()
}

/// A Bayes factor as recorded in the comparative graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    #[serde(flatten)]
    pub result: BayesFactorResult,
    /// Where the comparison was made, e.g. `layer 3` or `parental`.
    pub context: String,
    /// Removed from the comparative graph to break a directed cycle.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cycle_broken: bool,
}

impl ComparisonRecord {
    fn decisive_edge(&self) -> Option<(&str, &str)> {
        if self.cycle_broken {
            return None;
        }
        match self.result.direction {
            Direction::I => Some((&self.result.model_i, &self.result.model_j)),
            Direction::J => Some((&self.result.model_j, &self.result.model_i)),
            Direction::Inconclusive => None,
        }
    }
}

/// Removes, for each directed cycle among decisive edges (winner → loser),
/// the edge with the smallest `|log B|`. Returns the number removed.
pub fn break_cycles(comparisons: &mut [ComparisonRecord]) -> usize {
    let mut removed = 0;
    while let Some(cycle) = find_cycle(comparisons) {
        let weakest = *cycle
            .iter()
            .min_by(|a, b| {
                comparisons[**a]
                    .result
                    .log_b
                    .abs()
                    .total_cmp(&comparisons[**b].result.log_b.abs())
                    .then(a.cmp(b))
            })
            .expect("cycle is non-empty");
        comparisons[weakest].cycle_broken = true;
        removed += 1;
    }
    removed
}

/// Edge indices of one directed cycle, if any.
fn find_cycle(comparisons: &[ComparisonRecord]) -> Option<Vec<usize>> {
    let mut adjacency: BTreeMap<&str, Vec<(&str, usize)>> = BTreeMap::new();
    for (idx, c) in comparisons.iter().enumerate() {
        if let Some((from, to)) = c.decisive_edge() {
            adjacency.entry(from).or_default().push((to, idx));
            adjacency.entry(to).or_default();
        }
    }
    // 0 unvisited, 1 on stack, 2 done.
    let mut state: HashMap<&str, u8> = HashMap::new();
    let nodes: Vec<&str> = adjacency.keys().copied().collect();
    for start in nodes {
        if state.get(start).copied().unwrap_or(0) != 0 {
            continue;
        }
        // Iterative DFS keeping the edge used to reach each stack entry.
        let mut stack: Vec<(&str, usize, Option<usize>)> = vec![(start, 0, None)];
        state.insert(start, 1);
        while let Some(top) = stack.last_mut() {
            let (node, next, _) = *top;
            let edges = &adjacency[node];
            if next < edges.len() {
                top.1 += 1;
                let (to, edge) = edges[next];
                match state.get(to).copied().unwrap_or(0) {
                    0 => {
                        state.insert(to, 1);
                        stack.push((to, 0, Some(edge)));
                    }
                    1 => {
                        let pos = stack.iter().position(|(n, _, _)| *n == to).expect("on stack");
                        let mut cycle: Vec<usize> = stack[pos + 1..].iter().filter_map(|e| e.2).collect();
                        cycle.push(edge);
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                state.insert(node, 2);
                stack.pop();
            }
        }
    }
    None
}

/// Wins per model from decisive, unbroken comparisons.
pub fn score_comparisons(names: &[String], comparisons: &[ComparisonRecord]) -> Vec<u32> {
    let mut scores = vec![0; names.len()];
    for c in comparisons {
        if let Some((winner, _)) = c.decisive_edge() {
            if let Some(i) = names.iter().position(|n| n == winner) {
                scores[i] += 1;
            }
        }
    }
    scores
}

/// Index of the champion: highest score, then highest log-likelihood, then
/// fewest parameters, then name.
pub fn select_champion(names: &[String], scores: &[u32], log_likelihoods: &[f64], num_params: &[usize]) -> usize {
    (0..names.len())
        .min_by(|&a, &b| {
            scores[b]
                .cmp(&scores[a])
                .then(log_likelihoods[b].total_cmp(&log_likelihoods[a]))
                .then(num_params[a].cmp(&num_params[b]))
                .then(names[a].cmp(&names[b]))
        })
        .expect("at least one model")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Consolidation {
    pub champion: usize,
    pub scores: Vec<u32>,
    pub comparisons: Vec<ComparisonRecord>,
}

/// All-pairs Bayes factors within `models`; the champion has most decisive
/// wins.
pub fn consolidate(models: &[&TrainingRecord], b: f64, context: &str) -> Result<Consolidation> {
    if models.is_empty() {
        return Err(QmlaError::Config("cannot consolidate an empty set".into()));
    }
    let trained: Vec<TrainedModel> = models
        .iter()
        .map(|r| TrainedModel::from_record(r))
        .collect::<Result<_>>()?;
    let names: Vec<String> = trained.iter().map(TrainedModel::name).collect();
    let pairs: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|i| (i + 1..models.len()).map(move |j| (i, j)))
        .collect();
    let mut comparisons: Vec<ComparisonRecord> = pairs
        .par_iter()
        .map(|&(i, j)| {
            bayes_factor(&trained[i], &trained[j], &models[i].dataset, &models[j].dataset, b).map(|result| {
                ComparisonRecord {
                    result,
                    context: context.to_string(),
                    cycle_broken: false,
                }
            })
        })
        .collect::<Result<_>>()?;
    break_cycles(&mut comparisons);
    let scores = score_comparisons(&names, &comparisons);

    let best = *scores.iter().max().expect("non-empty");
    let tied = scores.iter().filter(|s| **s == best).count();
    let log_likelihoods = if tied > 1 {
        let mut all: Vec<ExperimentRecord> = Vec::new();
        for r in models {
            all.extend(r.dataset.iter().cloned());
        }
        let merged = union_datasets(&all, &[]);
        trained
            .iter()
            .map(|m| cumulative_log_likelihood(m, merged.iter().copied()).map(|l| l.total_log_likelihood))
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![0.0; models.len()]
    };
    let num_params: Vec<usize> = trained.iter().map(|m| m.model.num_params()).collect();
    let champion = select_champion(&names, &scores, &log_likelihoods, &num_params);
    Ok(Consolidation {
        champion,
        scores,
        comparisons,
    })
}

/// Survivors of parental collapse for a chain of layer champions, given the
/// direction of each child-vs-parent comparison (`directions[µ]` compares
/// champion `µ+1`, as model i, with champion `µ`).
pub fn collapse_chain(directions: &[Direction]) -> Vec<bool> {
    let mut alive = vec![true; directions.len() + 1];
    for (mu, d) in directions.iter().enumerate() {
        match d {
            Direction::I => alive[mu] = false,
            Direction::J => alive[mu + 1] = false,
            Direction::Inconclusive => {}
        }
    }
    alive
}

/// Compares each layer champion with its parent layer's champion and prunes
/// decisive losers. Returns survivor flags and the comparisons made.
pub fn parental_consolidation(chain: &[&TrainingRecord], b: f64) -> Result<(Vec<bool>, Vec<ComparisonRecord>)> {
    let comparisons: Vec<ComparisonRecord> = (1..chain.len())
        .into_par_iter()
        .map(|mu| {
            let child = TrainedModel::from_record(chain[mu])?;
            let parent = TrainedModel::from_record(chain[mu - 1])?;
            let result = bayes_factor(&child, &parent, &chain[mu].dataset, &chain[mu - 1].dataset, b)?;
            Ok(ComparisonRecord {
                result,
                context: "parental".into(),
                cycle_broken: false,
            })
        })
        .collect::<Result<_>>()?;
    let directions: Vec<Direction> = comparisons.iter().map(|c| c.result.direction).collect();
    Ok((collapse_chain(&directions), comparisons))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedCheck {
    /// Terms whose posterior mean lies within one sd of zero.
    pub dropped: Vec<PauliTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_b: Option<f64>,
    pub accepted: bool,
    /// Dropping the weak terms would leave no terms.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub would_empty: bool,
}

/// Drops terms with `|mean| < sd` and keeps the reduced model when it beats
/// the champion by a Bayes factor above `threshold` on `dataset`.
pub fn reduced_model_check(
    champion: &TrainedModel,
    dataset: &[ExperimentRecord],
    threshold: f64,
) -> Result<(TrainedModel, ReducedCheck)> {
    let keep: Vec<bool> = champion
        .params
        .iter()
        .zip(&champion.sd)
        .map(|(m, s)| m.abs() >= *s)
        .collect();
    let dropped: Vec<PauliTerm> = champion
        .model
        .terms()
        .iter()
        .zip(&keep)
        .filter(|(_, k)| !**k)
        .map(|(t, _)| *t)
        .collect();
    let mut check = ReducedCheck {
        dropped,
        candidate: None,
        log_b: None,
        accepted: false,
        would_empty: false,
    };
    if check.dropped.is_empty() {
        return Ok((champion.clone(), check));
    }
    let Some(model) = champion.model.retain(&keep) else {
        check.would_empty = true;
        return Ok((champion.clone(), check));
    };
    let pick = |v: &[f64]| -> Vec<f64> { v.iter().zip(&keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect() };
    let mut reduced = TrainedModel::new(model, pick(&champion.params))?;
    reduced.sd = pick(&champion.sd);
    let result = bayes_factor(&reduced, champion, dataset, &[], threshold)?;
    check.candidate = Some(reduced.name());
    check.log_b = Some(result.log_b);
    check.accepted = result.log_b > threshold.ln();
    Ok((if check.accepted { reduced } else { champion.clone() }, check))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Correct,
    UnderParameterised,
    OverParameterised,
    MisParameterised,
}

pub fn classify_result(champion: &ModelExpression, truth: &ModelExpression) -> Classification {
    use std::cmp::Ordering;
    match champion.num_params().cmp(&truth.num_params()) {
        Ordering::Less => Classification::UnderParameterised,
        Ordering::Greater => Classification::OverParameterised,
        Ordering::Equal if champion.terms() == truth.terms() => Classification::Correct,
        Ordering::Equal => Classification::MisParameterised,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Active,
    Pruned,
    LayerChampion,
    GlobalChampion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelNode {
    pub model: ModelExpression,
    pub layer: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub status: NodeStatus,
    pub final_params: Vec<f64>,
    pub final_sd: Vec<f64>,
    pub volumes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub index: usize,
    pub models: Vec<String>,
    pub scores: Vec<u32>,
    pub champion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub collapsed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChampionSummary {
    pub model: ModelExpression,
    pub params: Vec<f64>,
    pub sd: Vec<f64>,
    /// Set when the champion is a reduced form of a trained model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced_from: Option<String>,
}

/// Predicted and observed probability at one evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsPoint {
    pub t: f64,
    pub predicted: f64,
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub seed: u64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<ModelExpression>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_params: Option<Vec<f64>>,
    pub champion: ChampionSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<Classification>,
    pub environment_phase: Option<f64>,
    pub layers: Vec<LayerRecord>,
    pub models: Vec<ModelNode>,
    pub comparisons: Vec<ComparisonRecord>,
    pub reduced_check: ReducedCheck,
    pub r_squared: Option<f64>,
    pub champion_dynamics: Vec<DynamicsPoint>,
}

impl InstanceResult {
    /// Comparative DAG (decisive edges) and structural DAG as DOT text.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph qmla {\n  rankdir=TB;\n  node [shape=box];\n");
        for layer in &self.layers {
            let _ = writeln!(out, "  subgraph layer_{} {{\n    rank=same;", layer.index);
            for name in &layer.models {
                let status = self
                    .models
                    .iter()
                    .find(|m| m.model.name() == *name)
                    .map_or(NodeStatus::Active, |m| m.status);
                let style = match status {
                    NodeStatus::GlobalChampion => ", style=filled, fillcolor=gold",
                    NodeStatus::LayerChampion => ", style=filled, fillcolor=lightblue",
                    NodeStatus::Pruned => ", style=dashed",
                    NodeStatus::Active => "",
                };
                let _ = writeln!(out, "    \"{name}\" [label=\"{name}\\nlayer {}\"{style}];", layer.index);
            }
            out.push_str("  }\n");
        }
        for node in &self.models {
            if let Some(parent) = &node.parent {
                let _ = writeln!(out, "  \"{parent}\" -> \"{}\" [color=gray];", node.model.name());
            }
        }
        for c in &self.comparisons {
            if let Some((winner, loser)) = c.decisive_edge() {
                let _ = writeln!(
                    out,
                    "  \"{winner}\" -> \"{loser}\" [style=dashed, color=red, label=\"{:.1}\"];",
                    c.result.log_b.abs()
                );
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Everything a single search instance needs besides the system and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub growth: GrowthRule,
    pub qhl: QhlConfig,
    pub prior: ParamPrior,
    pub probe: ProbeKind,
    pub probe_offset_sigma: f64,
    /// End of the simulated evaluation window, in us; the longest time the
    /// champion trained on when unset.
    pub eval_time_max: Option<f64>,
    pub eval_points: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            growth: GrowthRule::default(),
            qhl: QhlConfig::default(),
            prior: ParamPrior::default(),
            probe: ProbeKind::Plus,
            probe_offset_sigma: 0.03,
            eval_time_max: None,
            eval_points: 200,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.growth.validate()?;
        self.qhl.validate()?;
        self.prior.validate()?;
        if !(0.0..1.0).contains(&self.probe_offset_sigma) {
            return Err(QmlaError::Config("probe_offset_sigma must be in [0, 1)".into()));
        }
        if self.eval_time_max.is_some_and(|t| !(t > 0.0)) || self.eval_points < 2 {
            return Err(QmlaError::Config(
                "evaluation grid needs a positive window and >= 2 points".into(),
            ));
        }
        Ok(())
    }
}

/// Hex SHA-256 of a value's JSON form.
pub fn config_hash(value: &impl Serialize) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

/// One full search against `system`.
pub fn run_instance(
    config: &SearchConfig,
    system: &dyn SystemOracle,
    truth: Option<&ModelExpression>,
    seed: u64,
) -> Result<InstanceResult> {
    config.validate()?;
    let rule = &config.growth;
    let b = rule.evidence_threshold;

    let qubits = rule.max_qubits().max(truth.map_or(1, ModelExpression::num_qubits));
    let environment_phase = (qubits > 1).then(|| {
        use rand::Rng;
        seeded(derive_seed_for(seed, "environment-phase")).gen_range(0.0..std::f64::consts::TAU)
    });
    let probes = ProbePolicy {
        kind: config.probe,
        offset_sigma: config.probe_offset_sigma,
        environment: environment_phase.map(ProbeState::plus_phase),
    };

    let mut records: Vec<TrainingRecord> = Vec::new();
    let mut nodes: Vec<ModelNode> = Vec::new();
    let mut layers: Vec<LayerRecord> = Vec::new();
    let mut comparisons: Vec<ComparisonRecord> = Vec::new();
    let mut trained_names: BTreeSet<String> = BTreeSet::new();
    // Record index of each layer's champion.
    let mut chain: Vec<usize> = Vec::new();

    let mut pending = rule.initial_layer();
    let mut parent: Option<String> = None;
    while !pending.is_empty() {
        let layer = layers.len();
        pending.retain(|m| trained_names.insert(m.name()));
        let trained: Vec<TrainingRecord> = pending
            .par_iter()
            .map(|model| {
                let prior = PriorSpec::repeated(config.prior, model.num_params())?;
                let mut rng = seeded(derive_seed_for(seed, &model.name()));
                run_qhl(system, model, &prior, &config.qhl, &probes, &mut rng)
            })
            .collect::<Result<_>>()?;

        let first = records.len();
        records.extend(trained);
        let members: Vec<&TrainingRecord> = records[first..].iter().collect();
        let outcome = consolidate(&members, b, &format!("layer {layer}"))?;
        let champion_idx = first + outcome.champion;
        let champion = records[champion_idx].model.clone();

        for r in &records[first..] {
            nodes.push(ModelNode {
                model: r.model.clone(),
                layer,
                parent: parent.clone(),
                status: NodeStatus::Active,
                final_params: r.final_params.clone(),
                final_sd: r.final_sd.clone(),
                volumes: r.volumes(),
            });
        }
        nodes[champion_idx].status = NodeStatus::LayerChampion;
        layers.push(LayerRecord {
            index: layer,
            models: records[first..].iter().map(|r| r.model.name()).collect(),
            scores: outcome.scores,
            champion: champion.name(),
            parent: parent.clone(),
            collapsed: false,
        });
        comparisons.extend(outcome.comparisons);
        chain.push(champion_idx);

        pending = spawn(&champion, rule);
        parent = Some(champion.name());
    }

    let chain_records: Vec<&TrainingRecord> = chain.iter().map(|&i| &records[i]).collect();
    let (alive, parental) = parental_consolidation(&chain_records, b)?;
    comparisons.extend(parental);
    for (layer, survives) in alive.iter().enumerate() {
        if !survives {
            layers[layer].collapsed = true;
            for node in nodes.iter_mut().filter(|n| n.layer == layer) {
                node.status = NodeStatus::Pruned;
            }
        }
    }

    let survivors: Vec<usize> = chain.iter().zip(&alive).filter(|(_, a)| **a).map(|(i, _)| *i).collect();
    let survivor_records: Vec<&TrainingRecord> = survivors.iter().map(|&i| &records[i]).collect();
    let final_round = consolidate(&survivor_records, b, "champions")?;
    comparisons.extend(final_round.comparisons);
    let global_idx = survivors[final_round.champion];
    nodes[global_idx].status = NodeStatus::GlobalChampion;
    break_cycles(&mut comparisons);

    let global = TrainedModel::from_record(&records[global_idx])?;
    let (champion, reduced_check) = reduced_model_check(&global, &records[global_idx].dataset, rule.reduced_threshold)?;

    let trained_until = records[global_idx]
        .dataset
        .iter()
        .map(|r| r.design.time)
        .fold(0.0, f64::max);
    let champion_dynamics = champion_dynamics(config, system, &champion, &probes, trained_until)?;
    let r_squared = if champion_dynamics.len() >= 2 {
        let observed: Vec<f64> = champion_dynamics.iter().map(|p| p.observed).collect();
        let predicted: Vec<f64> = champion_dynamics.iter().map(|p| p.predicted).collect();
        compute_r_squared(&observed, &predicted).ok()
    } else {
        None
    };

    Ok(InstanceResult {
        seed,
        config_hash: config_hash(config)?,
        truth: truth.cloned(),
        true_params: None,
        classification: truth.map(|t| classify_result(&champion.model, t)),
        champion: ChampionSummary {
            reduced_from: reduced_check.accepted.then(|| global.name()),
            model: champion.model.clone(),
            params: champion.params.to_vec(),
            sd: champion.sd.clone(),
        },
        environment_phase,
        layers,
        models: nodes,
        comparisons,
        reduced_check,
        r_squared,
        champion_dynamics,
    })
}

/// Champion predictions against the system on the evaluation set: the
/// recorded times for replayed data, else an even grid over the training
/// window.
fn champion_dynamics(
    config: &SearchConfig,
    system: &dyn SystemOracle,
    champion: &TrainedModel,
    probes: &ProbePolicy,
    trained_until: f64,
) -> Result<Vec<DynamicsPoint>> {
    let times: Vec<f64> = match system.evaluation_times() {
        Some(times) => times,
        None => {
            let n = config.eval_points;
            let end = config.eval_time_max.unwrap_or(trained_until);
            (0..n).map(|i| end * i as f64 / (n - 1) as f64).collect()
        }
    };
    let mut spectra = BTreeMap::new();
    times
        .into_iter()
        .map(|t| {
            let design = ExperimentDesign::new(probes.nominal(), probes.environment.clone(), t)?;
            let qubits = design.simulation_qubits(champion.model.num_qubits())?;
            let spectrum = match spectra.entry(qubits) {
                std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::btree_map::Entry::Vacant(e) => e.insert(champion.spectrum(qubits)?),
            };
            let predicted = crate::system::outcome_probability(spectrum, qubits, &design)?;
            let observed = system.probability(&design)?;
            Ok(DynamicsPoint { t, predicted, observed })
        })
        .collect()
}
