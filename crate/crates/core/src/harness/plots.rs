// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! Plot-ready CSV and DOT files.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{QmlaError, Result};
use crate::pauli::ModelExpression;
use crate::search::InstanceResult;

const HISTOGRAM_BINS: usize = 20;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => QmlaError::io(path, source),
        other => QmlaError::Dataset(format!("{}: {other:?}", path.display())),
    })
}

/// Writes, under `out_dir`:
/// `volumes.csv` (credible models, or all when the set is empty),
/// `champion_dynamics.csv`, `win_rate_by_param_difference.csv`,
/// `parameter_histograms.csv` and one `cdag_NNN.dot` per instance.
pub fn emit_plot_data(results: &[InstanceResult], credible: &[ModelExpression], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| QmlaError::io(out_dir, e))?;

    let mut volumes = writer(&out_dir.join("volumes.csv"))?;
    volumes.write_record(["instance", "model", "epoch", "volume"])?;
    for (i, r) in results.iter().enumerate() {
        for node in &r.models {
            if credible.is_empty() || credible.contains(&node.model) {
                for (epoch, v) in node.volumes.iter().enumerate() {
                    volumes.serialize((i, node.model.name(), epoch, v))?;
                }
            }
        }
    }
    volumes.flush().map_err(|e| QmlaError::io(out_dir, e))?;

    let mut dynamics = writer(&out_dir.join("champion_dynamics.csv"))?;
    dynamics.write_record(["instance", "champion", "t", "predicted", "observed"])?;
    for (i, r) in results.iter().enumerate() {
        for p in &r.champion_dynamics {
            dynamics.serialize((i, r.champion.model.name(), p.t, p.predicted, p.observed))?;
        }
    }
    dynamics.flush().map_err(|e| QmlaError::io(out_dir, e))?;

    let mut wins: BTreeMap<i64, usize> = BTreeMap::new();
    for r in results {
        if let Some(truth) = &r.truth {
            *wins
                .entry(r.champion.model.num_params() as i64 - truth.num_params() as i64)
                .or_default() += 1;
        }
    }
    let mut win_rate = writer(&out_dir.join("win_rate_by_param_difference.csv"))?;
    win_rate.write_record(["param_difference", "count"])?;
    for (d, c) in &wins {
        win_rate.serialize((d, c))?;
    }
    win_rate.flush().map_err(|e| QmlaError::io(out_dir, e))?;

    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in results {
        for (term, v) in r.champion.model.terms().iter().zip(&r.champion.params) {
            values.entry(term.label()).or_default().push(*v);
        }
    }
    let mut hist = writer(&out_dir.join("parameter_histograms.csv"))?;
    hist.write_record(["term", "bin_lo", "bin_hi", "count"])?;
    for (term, v) in &values {
        for (lo, hi, count) in histogram(v, HISTOGRAM_BINS) {
            hist.serialize((term, lo, hi, count))?;
        }
    }
    hist.flush().map_err(|e| QmlaError::io(out_dir, e))?;

    for (i, r) in results.iter().enumerate() {
        let path = out_dir.join(format!("cdag_{i:03}.dot"));
        std::fs::write(&path, r.to_dot()).map_err(|e| QmlaError::io(&path, e))?;
    }
    Ok(())
}

/// Equal-width bins over the range of `values`.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return vec![(lo, hi, values.len())];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0; bins];
    for v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}
