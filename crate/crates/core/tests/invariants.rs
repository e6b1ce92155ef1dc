// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

//! Property tests for algebraic and statistical invariants.

use proptest::prelude::*;
use rand::seq::SliceRandom;

use qmla::bath::pseudospin;
use qmla::bayes::{bayes_factor, TrainedModel};
use qmla::harness::{estimate_runtime, RuntimeInputs};
use qmla::pauli::{assemble_hamiltonian, evolve_unitary, term_matrix, CMatrix};
use qmla::qhl::{liu_west_resample, ExperimentRecord, ParticleCloud};
use qmla::rng::seeded;
use qmla::search::GrowthRule;
use qmla::system::{Datum, ExperimentDesign, ProbeState};
use qmla::{ModelExpression, PauliTerm};

const TERMS: [&str; 9] = ["Sx", "Sy", "Sz", "Ax", "Ay", "Az", "Txy", "Txz", "Tyz"];

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn model_strategy() -> impl Strategy<Value = ModelExpression> {
    proptest::sample::subsequence(TERMS.to_vec(), 1..=TERMS.len())
        .prop_map(|labels| ModelExpression::new(labels.iter().map(|l| PauliTerm::parse(l).unwrap())).unwrap())
}

fn model_with_params() -> impl Strategy<Value = (ModelExpression, Vec<f64>)> {
    model_strategy().prop_flat_map(|m| {
        let n = m.num_params();
        (Just(m), proptest::collection::vec(0.0..10.0f64, n))
    })
}

fn dataset(prefix: &str, points: &[(f64, u8)]) -> Vec<ExperimentRecord> {
    points
        .iter()
        .enumerate()
        .map(|(i, &(t, bit))| ExperimentRecord {
            id: format!("{prefix}{i:04}"),
            design: ExperimentDesign::new(ProbeState::plus(), None, t).unwrap(),
            datum: Datum::Bit(bit),
        })
        .collect()
}

fn rotation(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let (a, b, c) = (angles[0], angles[1], angles[2]);
    let rz = |t: f64| [[t.cos(), -t.sin(), 0.0], [t.sin(), t.cos(), 0.0], [0.0, 0.0, 1.0]];
    let ry = |t: f64| [[t.cos(), 0.0, t.sin()], [0.0, 1.0, 0.0], [-t.sin(), 0.0, t.cos()]];
    let mul = |x: [[f64; 3]; 3], y: [[f64; 3]; 3]| {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| x[i][k] * y[k][j]).sum();
            }
        }
        out
    };
    mul(mul(rz(a), ry(b)), rz(c))
}

fn rotate(r: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| (0..3).map(|k| r[i][k] * v[k]).sum())
}

#[test]
fn pauli_terms_square_to_identity() {
    for label in TERMS {
        let p = term_matrix(&PauliTerm::parse(label).unwrap(), 2).unwrap().into_inner();
        assert_eq!(&p * &p, CMatrix::identity(4, 4), "{label}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evolution_is_unitary_and_a_group((model, params) in model_with_params(), t1 in 0.0..10.0f64, t2 in 0.0..10.0f64) {
        let h = assemble_hamiltonian(&model, &params).unwrap();
        let u1 = evolve_unitary(&h, t1).unwrap();
        let u2 = evolve_unitary(&h, t2).unwrap();
        let u12 = evolve_unitary(&h, t1 + t2).unwrap();
        let n = u1.nrows();
        prop_assert!(max_abs(&(u1.adjoint() * &u1 - CMatrix::identity(n, n))) < 1e-10);
        prop_assert!(max_abs(&(&u1 * &u2 - u12)) < 1e-9);
    }

    #[test]
    fn hamiltonian_is_linear_in_params((model, a) in model_with_params(), seed in any::<u64>(), s in -3.0..3.0f64) {
        use rand::Rng;
        let mut rng = seeded(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.gen_range(0.0..10.0)).collect();
        let combined: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
        let ha = assemble_hamiltonian(&model, &a).unwrap().into_inner();
        let hb = assemble_hamiltonian(&model, &b).unwrap().into_inner();
        let hc = assemble_hamiltonian(&model, &combined).unwrap().into_inner();
        let expected = ha + hb * num_complex::Complex64::new(s, 0.0);
        prop_assert!(max_abs(&(hc - expected)) < 1e-12);
    }

    #[test]
    fn names_round_trip(model in model_strategy()) {
        let parsed = ModelExpression::parse(&model.name()).unwrap();
        prop_assert_eq!(&parsed, &model);
        prop_assert_eq!(parsed.name(), model.name());
    }

    #[test]
    fn weights_stay_normalised(
        likelihoods in proptest::collection::vec(1e-10..1.0f64, 2..200),
        rounds in 1usize..5,
    ) {
        let n = likelihoods.len();
        let particles: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let mut cloud = ParticleCloud::with_uniform_weights(particles).unwrap();
        for epoch in 0..rounds {
            cloud.apply_likelihoods(&likelihoods, epoch).unwrap();
            let sum: f64 = cloud.weights().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-10);
            let ess = cloud.effective_sample_size();
            prop_assert!(ess >= 1.0 - 1e-9 && ess <= n as f64 + 1e-9);
        }
    }

    #[test]
    fn bayes_factor_is_antisymmetric_and_order_free(
        a in 0.1..10.0f64,
        b in 0.1..10.0f64,
        di in proptest::collection::vec((0.0..5.0f64, 0u8..2), 1..40),
        dj in proptest::collection::vec((0.0..5.0f64, 0u8..2), 1..40),
        seed in any::<u64>(),
    ) {
        let mi = TrainedModel::new(ModelExpression::parse("Sz").unwrap(), vec![a]).unwrap();
        let mj = TrainedModel::new(ModelExpression::parse("Sy").unwrap(), vec![b]).unwrap();
        let (di, dj) = (dataset("i", &di), dataset("j", &dj));
        let ij = bayes_factor(&mi, &mj, &di, &dj, 10.0).unwrap();
        let ji = bayes_factor(&mj, &mi, &dj, &di, 10.0).unwrap();
        prop_assert_eq!(ij.log_b, -ji.log_b);
        prop_assert_eq!(ij.dataset_size, di.len() + dj.len());

        let mut shuffled = di.clone();
        shuffled.shuffle(&mut seeded(seed));
        let again = bayes_factor(&mi, &mj, &shuffled, &dj, 10.0).unwrap();
        prop_assert_eq!(again.log_b, ij.log_b);
    }

    #[test]
    fn pseudospin_is_rotation_invariant(
        b0 in proptest::array::uniform3(-2.0..2.0f64),
        b1 in proptest::array::uniform3(-2.0..2.0f64),
        angles in proptest::array::uniform3(0.0..std::f64::consts::TAU),
        omega0 in 0.1..2.0f64,
        omega1 in 0.1..2.0f64,
        tau in 0.0..100.0f64,
    ) {
        prop_assume!(b0.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        prop_assume!(b1.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        let r = rotation(angles);
        let s = pseudospin(&b0, &b1, omega0, omega1, tau).unwrap();
        let rotated = pseudospin(&rotate(&r, &b0), &rotate(&r, &b1), omega0, omega1, tau).unwrap();
        prop_assert!((s - rotated).abs() < 1e-10);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn liu_west_keeps_the_mean(
        centre in proptest::array::uniform2(-5.0..5.0f64),
        spread in 0.1..3.0f64,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let n = 4000;
        let mut rng = seeded(seed);
        let particles: Vec<Vec<f64>> = (0..n)
            .map(|_| centre.iter().map(|c| c + spread * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let cloud = ParticleCloud::with_uniform_weights(particles).unwrap();
        let out = liu_west_resample(&cloud, 0.98, &mut rng).unwrap().cloud;
        let (m0, m1) = (cloud.mean(), out.mean());
        let tol = 5.0 * spread / (n as f64).sqrt();
        for k in 0..2 {
            prop_assert!((m1[k] - m0[k]).abs() < tol);
        }
        let sum: f64 = out.weights().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn runtime_is_monotone(
        particles in 1usize..5000,
        epochs in 1usize..2000,
        workers in 1usize..16,
        extra in 1usize..1000,
    ) {
        let rule = GrowthRule::default();
        let base = estimate_runtime(&RuntimeInputs::for_rule(&rule, particles, epochs, workers), 5e-4);
        let more_particles = estimate_runtime(&RuntimeInputs::for_rule(&rule, particles + extra, epochs, workers), 5e-4);
        let more_epochs = estimate_runtime(&RuntimeInputs::for_rule(&rule, particles, epochs + extra, workers), 5e-4);
        let more_workers = estimate_runtime(&RuntimeInputs::for_rule(&rule, particles, epochs, workers + 1), 5e-4);
        prop_assert!(more_particles >= base);
        prop_assert!(more_epochs >= base);
        prop_assert!(more_workers <= base);
    }
}
