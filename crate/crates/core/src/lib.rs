// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! Automated inference of spin Hamiltonians.
//!
//! The crate trains candidate Hamiltonian models against a (simulated or
//! recorded) quantum system with sequential Monte Carlo, ranks them with
//! Bayes factors and grows a layered graph of models greedily until a single
//! champion remains. A separate estimator infers the size of a nuclear spin
//! bath from Hahn-echo data.
//!
//! Units: parameters are angular frequencies in rad/us, times are in us.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bath;
pub mod bayes;
pub mod error;
pub mod harness;
pub mod pauli;
pub mod qhl;
pub mod rng;
pub mod search;
pub mod system;

pub use error::{QmlaError, Result};
pub use pauli::{HermitianMatrix, ModelExpression, ParamVector, PauliAxis, PauliTerm};
