// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! Batch orchestration and persistence.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{
    cle_train, estimate_t2, fit_trace, mha_run, CleLikelihood, CleResult, LogisticFit, MhaTrace, T2Estimate,
};
use crate::error::{QmlaError, Result};
use crate::harness::analysis::{aggregate, BatchReport, FailureRecord};
use crate::harness::config::{Mode, RunConfig};
use crate::harness::plots::emit_plot_data;
use crate::pauli::ParamVector;
use crate::rng::{derive_seed, derive_seed_for, seeded};
use crate::search::{run_instance, InstanceResult};
use crate::system::{RecordedDataset, ReplaySystem, SimulatedSystem, SystemOracle};

pub const REPORT_FILE: &str = "batch_report.json";
pub const CONFIG_FILE: &str = "run_config.json";

/// Writes JSON to a temporary sibling and renames it into place.
pub fn write_json_atomic(path: &Path, value: &impl Serialize) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(&tmp, text).map_err(|e| QmlaError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| QmlaError::io(path, e))
}

pub fn instance_path(out_dir: &Path, index: usize) -> PathBuf {
    out_dir.join(format!("instance_{index:03}.json"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub report: BatchReport,
    pub results: Vec<InstanceResult>,
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| QmlaError::Config(format!("cannot start {workers} workers: {e}")))
}

fn run_one(config: &RunConfig, replay: Option<&ReplaySystem>, seed: u64) -> Result<InstanceResult> {
    let search = config.search_config();
    match config.mode {
        Mode::Simulate => {
            let truth = config.true_model.as_ref().expect("validated");
            let params = config.true_params_for(seed)?;
            let system = SimulatedSystem::new(truth, ParamVector::new(params.clone())?, config.noise.clone())?;
            let mut result = run_instance(&search, &system, Some(truth), seed)?;
            result.true_params = Some(params);
            Ok(result)
        }
        Mode::Replay => {
            let system: &dyn SystemOracle = replay.expect("dataset loaded");
            run_instance(&search, system, config.true_model.as_ref(), seed)
        }
        Mode::Bath => Err(QmlaError::Config(
            "mode: bath configs run through the bath command".into(),
        )),
    }
}

/// Runs one instance with `seed`, loading the replay dataset if needed.
pub fn run_single(config: &RunConfig, seed: u64) -> Result<InstanceResult> {
    config.validate()?;
    let replay = match (config.mode, &config.dataset) {
        (Mode::Replay, Some(path)) => Some(ReplaySystem::new(RecordedDataset::load_csv(path)?)),
        _ => None,
    };
    run_one(config, replay.as_ref(), seed)
}

/// Runs `config.instances` independent searches on `config.parallelism`
/// workers, persisting each result and the aggregate report in `out_dir`.
/// Failed instances are recorded and the batch carries on.
pub fn run_batch(config: &RunConfig, out_dir: &Path) -> Result<BatchOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| QmlaError::io(out_dir, e))?;
    write_json_atomic(&out_dir.join(CONFIG_FILE), config)?;

    let replay = match (config.mode, &config.dataset) {
        (Mode::Replay, Some(path)) => Some(ReplaySystem::new(RecordedDataset::load_csv(path)?)),
        _ => None,
    };
    let pool = thread_pool(config.parallelism)?;
    let outcomes: Vec<(usize, u64, Result<InstanceResult>)> = pool.install(|| {
        (0..config.instances)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(config.seed, i as u64);
                (i, seed, run_one(config, replay.as_ref(), seed))
            })
            .collect()
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (index, seed, outcome) in outcomes {
        match outcome {
            Ok(result) => {
                write_json_atomic(&instance_path(out_dir, index), &result)?;
                results.push(result);
            }
            Err(err) => {
                log::error!("instance {index} (seed {seed}) failed: {err}");
                failures.push(FailureRecord {
                    index,
                    seed,
                    error: err.to_string(),
                });
            }
        }
    }
    let report = aggregate(&results, failures, &config.credible_models);
    write_json_atomic(&out_dir.join(REPORT_FILE), &report)?;
    emit_plot_data(&results, &config.credible_models, out_dir)?;
    Ok(BatchOutcome { report, results })
}

/// Re-aggregates the instance files already in `out_dir`.
pub fn report_directory(out_dir: &Path) -> Result<BatchReport> {
    let config_path = out_dir.join(CONFIG_FILE);
    let credible = if config_path.exists() {
        let text = std::fs::read_to_string(&config_path).map_err(|e| QmlaError::io(&config_path, e))?;
        serde_json::from_str::<RunConfig>(&text)?.credible_models
    } else {
        crate::harness::config::default_credible_models()
    };
    let previous: Option<BatchReport> = std::fs::read_to_string(out_dir.join(REPORT_FILE))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());

    let mut paths: Vec<PathBuf> = std::fs::read_dir(out_dir)
        .map_err(|e| QmlaError::io(out_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("instance_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    let results = paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| QmlaError::io(p, e))?;
            Ok(serde_json::from_str::<InstanceResult>(&text)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let failures = previous.map(|r| r.failures).unwrap_or_default();
    let report = aggregate(&results, failures, &credible);
    write_json_atomic(&out_dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathReport {
    pub dataset: String,
    pub steps: usize,
    pub acceptance_rate: f64,
    pub final_ns: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logistic: Option<LogisticFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logistic_error: Option<String>,
    /// CLE fit at the plateau onset (or the final walk state).
    pub fit: CleResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2: Option<T2Estimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2_error: Option<String>,
}

/// Bath-size estimation on `data`: MHA walk, plateau fit, CLE at the
/// plateau and T2 from the revival envelope. Writes `bath_report.json`,
/// `mha_trace.csv`, `mha_plateau.csv` and `t2_peaks.csv`.
pub fn run_bath(config: &RunConfig, data: &Path, out_dir: &Path) -> Result<(BathReport, MhaTrace)> {
    let dataset = RecordedDataset::load_csv(data)?;
    let bath = &config.bath;
    bath.cle.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| QmlaError::io(out_dir, e))?;

    let mut rng = seeded(derive_seed_for(config.seed, "bath"));
    let mut source = CleLikelihood {
        dataset: &dataset,
        config: &bath.cle,
    };
    let trace = mha_run(&mut source, &bath.mha, &mut rng)?;
    let (logistic, logistic_error) = match fit_trace(&trace) {
        Ok(fit) => (Some(fit), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let onset = logistic
        .and_then(|f| f.plateau_onset)
        .filter(|n| n.is_finite())
        .map(|n| n.round().max(1.0) as usize)
        .unwrap_or(trace.current);
    let fit = cle_train(&dataset, onset, &bath.cle, &mut rng)?;
    let omega0 = bath.revival_omega0.unwrap_or(fit.hyperparameters.omega0);
    let (t2, t2_error) = match estimate_t2(&dataset, omega0, bath.t2_exponent) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let report = BathReport {
        dataset: dataset.source().to_string(),
        steps: trace.steps.len(),
        acceptance_rate: trace.acceptance_rate,
        final_ns: trace.current,
        logistic,
        logistic_error,
        fit,
        t2,
        t2_error,
    };
    write_json_atomic(&out_dir.join("bath_report.json"), &report)?;
    write_bath_csvs(&trace, report.t2.as_ref(), out_dir)?;
    Ok((report, trace))
}

fn write_bath_csvs(trace: &MhaTrace, t2: Option<&T2Estimate>, out_dir: &Path) -> Result<()> {
    let path = out_dir.join("mha_trace.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["step", "proposed", "accepted", "n_s", "log_likelihood"])?;
    for (i, s) in trace.steps.iter().enumerate() {
        w.serialize((i, s.proposed, s.accepted, s.n_s, s.log_likelihood))?;
    }
    w.flush().map_err(|e| QmlaError::io(&path, e))?;

    let path = out_dir.join("mha_plateau.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["n_s", "mean_abs_loglik", "evaluations"])?;
    for (n, l, c) in trace.mean_log_likelihood_by_n() {
        w.serialize((n, l.abs(), c))?;
    }
    w.flush().map_err(|e| QmlaError::io(&path, e))?;

    let path = out_dir.join("t2_peaks.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["tau_us", "peak"])?;
    for (t, y) in t2.map(|t| t.peaks.as_slice()).unwrap_or_default() {
        w.serialize((t, y))?;
    }
    w.flush().map_err(|e| QmlaError::io(&path, e))?;
    Ok(())
}
