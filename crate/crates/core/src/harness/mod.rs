// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! Configuration, batch orchestration, aggregate analysis, runtime
//! estimation and plot-data output.

pub mod analysis;
pub mod batch;
pub mod config;
pub mod plots;
pub mod runtime;

pub use analysis::{aggregate, compute_r_squared, BatchReport};
pub use batch::{report_directory, run_batch, run_bath, run_single, BatchOutcome, BathReport};
pub use config::{load_config, Mode, RunConfig};
pub use plots::emit_plot_data;
pub use runtime::{estimate_runtime, RuntimeInputs};
