use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::Matrix4;
use proptest::prelude::*;
use qutrit_bsm::circuits::{Bell, Pauli};
use qutrit_bsm::hilbert::{c, ket_from, BasisLabel, Level, QuantumState, C64};
use qutrit_bsm::readout::{
    cascade_probabilities, classify, exact_probabilities, label_frequencies, linear_inversion,
    logical_block, min_shots, poisson_cdf, qst, qst_exact, read_once, run_bsm, simulate_bsm,
    single_shot, trace_distance4, BsmLabel, Pipeline, ReadoutError, ReadoutParams,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn l(ms: i32, mi: i32) -> BasisLabel {
    BasisLabel::new(Level::from_m(ms).unwrap(), Level::from_m(mi).unwrap())
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Independent cascade oracle: enumerate the read at which the bright
/// population leaks away and every above/below-threshold pattern of the
/// four reads, pushing each through the classifier.
fn brute_cascade(rp: &ReadoutParams, bright_from: usize) -> [f64; 5] {
    let fd = poisson_cdf(rp.n_c - 1, rp.lambda_dark);
    let fb = poisson_cdf(rp.n_c - 1, rp.lambda_bright);
    let p = rp.bsm_read().p_lost;
    let mut out = [0.0; 5];
    // bright reads are bright_from..lost
    for lost in bright_from + 1..=4 {
        let kept = (lost - bright_from - 1) as i32;
        let w = if lost == 4 { (1.0 - p).powi(kept) } else { (1.0 - p).powi(kept) * p };
        for mask in 0..16u32 {
            let mut pr = w;
            let mut counts = [0u32; 4];
            for k in 0..4 {
                let above = mask & (1 << k) != 0;
                let quiet = if (bright_from..lost).contains(&k) { fb } else { fd };
                pr *= if above { 1.0 - quiet } else { quiet };
                counts[k] = if above { rp.n_c } else { 0 };
            }
            out[classify(counts, rp.n_c, rp.phi_minus_by_elimination).index()] += pr;
        }
    }
    out
}

#[test]
fn single_shot_counts_follow_branch_means() {
    let rp = ReadoutParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bright = QuantumState::basis(l(0, 1));
    let dark = QuantumState::basis(l(1, 1));
    let n = 40_000;
    let b: Vec<f64> = (0..n).map(|_| single_shot(&bright, &rp, &mut rng).0 as f64).collect();
    let d: Vec<f64> = (0..n).map(|_| single_shot(&dark, &rp, &mut rng).0 as f64).collect();
    for (xs, lam) in [(&b, rp.lambda_bright), (&d, rp.lambda_dark)] {
        let (m, v) = mean_var(xs);
        let se = (lam / n as f64).sqrt();
        assert!((m - lam).abs() < 5.0 * se, "mean {m} vs {lam}");
        assert!((v - lam).abs() < 0.05 * lam + 10.0 * se, "var {v} vs {lam}");
    }
}

#[test]
fn superposed_electron_is_bright_half_the_time() {
    let rp = ReadoutParams::default();
    let s = rp.bsm_read();
    let psi = ket_from(&[(l(0, 1), c(FRAC_1_SQRT_2, 0.0)), (l(1, 1), c(FRAC_1_SQRT_2, 0.0))]);
    let st = QuantumState::pure(&psi).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let hits = (0..n).filter(|_| read_once(&st, &s, &mut rng).2).count() as f64;
    let sigma = (0.25 / n as f64).sqrt();
    assert!((hits / n as f64 - 0.5).abs() < 3.0 * sigma);
}

#[test]
fn post_read_state_collapses() {
    let rp = ReadoutParams {
        p_leak: 0.0,
        ..ReadoutParams::default()
    };
    let psi = ket_from(&[(l(0, 1), c(0.6, 0.0)), (l(1, -1), c(0.8, 0.0))]);
    let st = QuantumState::pure(&psi).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (_, post, bright) = read_once(&st, &rp.bsm_read(), &mut rng);
        let expect = if bright { l(0, 1) } else { l(1, -1) };
        assert!((post.population(expect) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn leak_keeps_half_of_the_bright_population() {
    let rp = ReadoutParams {
        p_leak: 0.2,
        ..ReadoutParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (_, post, _) = read_once(&QuantumState::basis(l(0, 0)), &rp.bsm_read(), &mut rng);
    assert!((post.population(l(-1, 0)) - 0.1).abs() < 1e-12);
    assert!((post.population(l(0, 0)) - 0.9).abs() < 1e-12);
    let full = ReadoutParams {
        recover_plus_only: false,
        ..rp
    };
    let (_, post, _) = read_once(&QuantumState::basis(l(0, 0)), &full.bsm_read(), &mut rng);
    assert!((post.population(l(0, 0)) - 1.0).abs() < 1e-12);
}

#[test]
fn classifier_first_match() {
    let ok = |b| BsmLabel::Bell(b);
    assert_eq!(classify([3, 5, 0, 0], 1, false), ok(Bell::PhiPlus));
    assert_eq!(classify([0, 1, 4, 0], 1, false), ok(Bell::PsiPlus));
    assert_eq!(classify([0, 0, 2, 9], 1, false), ok(Bell::PsiMinus));
    assert_eq!(classify([0, 0, 0, 1], 1, false), ok(Bell::PhiMinus));
    assert_eq!(classify([0, 0, 0, 0], 1, false), BsmLabel::Inconclusive);
    assert_eq!(classify([0, 0, 0, 0], 1, true), ok(Bell::PhiMinus));
    assert_eq!(classify([1, 1, 1, 1], 2, false), BsmLabel::Inconclusive);
    assert_eq!(classify([1, 2, 1, 1], 2, false), ok(Bell::PsiPlus));
}

#[test]
fn noiseless_readout_is_perfect() {
    let rp = ReadoutParams {
        lambda_bright: 50.0,
        lambda_dark: 0.0,
        p_leak: 0.0,
        ..ReadoutParams::default()
    };
    let pipe = Pipeline::ideal();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for b in Bell::ALL {
        let st = pipe.prepared(b).evolve(pipe.disentangle());
        for _ in 0..200 {
            let o = run_bsm(&st, &rp, &pipe, &mut rng);
            assert_eq!(o.label, BsmLabel::Bell(b));
            assert!(o.bright[b.index()]);
            assert!(o.bright[..b.index()].iter().all(|x| !x));
        }
    }
}

#[test]
fn cascade_matches_enumeration_and_reference_values() {
    let rp = ReadoutParams::default();
    let mut avg = 0.0;
    let reference = [0.8347, 0.6184, 0.4581, 0.3394];
    for b in Bell::ALL {
        let p = cascade_probabilities(&rp, b);
        let brute = brute_cascade(&rp, b.index());
        for k in 0..5 {
            assert!((p[k] - brute[k]).abs() < 1e-14);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((p[b.index()] - reference[b.index()]).abs() < 5e-5, "{b}: {}", p[b.index()]);
        avg += p[b.index()] / 4.0;
    }
    assert!((avg - 0.5627).abs() < 1e-4);
    for leak in [0.0, 0.3, 1.0] {
        let lp = ReadoutParams { p_leak: leak, n_c: 2, ..rp.clone() };
        for b in Bell::ALL {
            let p = cascade_probabilities(&lp, b);
            let brute = brute_cascade(&lp, b.index());
            assert!((0..5).all(|k| (p[k] - brute[k]).abs() < 1e-14));
        }
    }
    let elim = ReadoutParams {
        phi_minus_by_elimination: true,
        ..rp
    };
    for b in Bell::ALL {
        let p = cascade_probabilities(&elim, b);
        assert_eq!(p[4], 0.0);
        let brute = brute_cascade(&elim, b.index());
        assert!((0..5).all(|k| (p[k] - brute[k]).abs() < 1e-14));
    }
}

#[test]
fn monte_carlo_agrees_with_cascade() {
    let rp = ReadoutParams::default();
    let pipe = Pipeline::ideal();
    let trials = 20_000;
    for (b, outs) in simulate_bsm(&rp, &pipe, trials, 77) {
        let freq = label_frequencies(&outs);
        let oracle = cascade_probabilities(&rp, b);
        for k in 0..5 {
            let sigma = (oracle[k] * (1.0 - oracle[k]) / trials as f64).sqrt().max(1e-9);
            assert!(
                (freq[k] - oracle[k]).abs() < 5.0 * sigma,
                "{b} label {k}: {} vs {}",
                freq[k],
                oracle[k]
            );
        }
    }
}

#[test]
fn threshold_trades_false_positives_for_sensitivity() {
    let mut prev_fp = f64::INFINITY;
    let mut prev_first = f64::INFINITY;
    for n_c in 1..6 {
        let rp = ReadoutParams {
            n_c,
            ..ReadoutParams::default()
        };
        let fp = 1.0 - poisson_cdf(n_c - 1, rp.lambda_dark);
        let first = cascade_probabilities(&rp, Bell::PhiPlus)[0];
        assert!(fp < prev_fp && first < prev_first);
        prev_fp = fp;
        prev_first = first;
    }
}

#[test]
fn sub_repetitions_preserve_count_statistics() {
    let rp = ReadoutParams {
        sub_repetitions: true,
        ..ReadoutParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let st = QuantumState::basis(l(0, -1));
    let n = 40_000;
    let xs: Vec<f64> = (0..n).map(|_| single_shot(&st, &rp, &mut rng).0 as f64).collect();
    let (m, v) = mean_var(&xs);
    let se = (rp.lambda_bright / n as f64).sqrt();
    assert!((m - rp.lambda_bright).abs() < 5.0 * se);
    assert!((v - rp.lambda_bright).abs() < 0.05 * rp.lambda_bright);
}

fn arb_state() -> impl Strategy<Value = QuantumState> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 9 * 2).prop_filter_map("nonzero", |v| {
        let amp = |k: usize| C64::new(v[k].0, v[k].1);
        let a = nalgebra::DVector::from_fn(9, |i, _| amp(i));
        let b = nalgebra::DVector::from_fn(9, |i, _| amp(9 + i));
        let (na, nb) = (a.norm(), b.norm());
        if na < 1e-3 || nb < 1e-3 {
            return None;
        }
        let pa = QuantumState::pure(&(a / c(na, 0.0))).ok()?;
        let pb = QuantumState::pure(&(b / c(nb, 0.0))).ok()?;
        let mix = (pa.rho() * c(0.3, 0.0)) + (pb.rho() * c(0.7, 0.0));
        QuantumState::new(mix).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn reads_return_valid_states(st in arb_state(), seed in any::<u64>(), leak in 0.0..1.0f64, deph in 0.0..1.0f64, plus_only in any::<bool>()) {
        let rp = ReadoutParams { p_leak: leak, p_deph_n: deph, recover_plus_only: plus_only, ..ReadoutParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cur = st;
        for _ in 0..4 {
            let (_, next, _) = read_once(&cur, &rp.bsm_read(), &mut rng);
            prop_assert!(next.validate(1e-9).is_ok());
            cur = next;
        }
    }
}

fn logical_rho(st: &QuantumState) -> Matrix4<C64> {
    logical_block(st)
}

#[test]
fn exact_inversion_reconstructs_any_logical_state() {
    let pipe = Pipeline::ideal();
    for b in Bell::ALL {
        let st = pipe.prepared(b);
        let rho = logical_rho(&st);
        let back = linear_inversion(&exact_probabilities(&rho));
        assert!((back - rho).iter().all(|z| z.norm() < 1e-10));
        let res = qst_exact(&st, &b.ket());
        assert!((res.fidelity_to_target - 1.0).abs() < 1e-10);
    }
    let mixed = QuantumState::maximally_mixed_logical();
    let back = linear_inversion(&exact_probabilities(&logical_rho(&mixed)));
    assert!((back - logical_rho(&mixed)).iter().all(|z| z.norm() < 1e-10));
}

#[test]
fn noiseless_tomography_of_bell_states() {
    let rp = ReadoutParams {
        lambda_bright: 50.0,
        lambda_dark: 0.0,
        p_leak: 0.0,
        ..ReadoutParams::default()
    };
    let pipe = Pipeline::ideal();
    for b in [Bell::PhiPlus, Bell::PsiMinus] {
        let st = pipe.prepared(b);
        let res = qst(&st, &b.ket(), &rp, &pipe, 10_000, 8).unwrap();
        assert!(res.fidelity_to_target >= 0.99, "{b}: {}", res.fidelity_to_target);
        let eig = nalgebra::SymmetricEigen::new(res.rho_hat).eigenvalues;
        assert!(eig.iter().all(|&v| v > -1e-12));
    }
}

#[test]
fn tomography_of_the_mixed_state_is_flat() {
    let rp = ReadoutParams {
        p_leak: 0.0,
        ..ReadoutParams::default()
    };
    let pipe = Pipeline::ideal();
    let st = QuantumState::maximally_mixed_logical();
    let res = qst(&st, &Bell::PhiPlus.ket(), &rp, &pipe, 10_000, 4).unwrap();
    let flat = Matrix4::<C64>::identity() * c(0.25, 0.0);
    let d = trace_distance4(&res.rho_hat, &flat);
    assert!(d <= 0.05, "trace distance {d}");
}

#[test]
fn tomography_sees_the_nitrogen_hadamard() {
    let rp = ReadoutParams {
        lambda_bright: 50.0,
        lambda_dark: 0.0,
        p_leak: 0.0,
        ..ReadoutParams::default()
    };
    let pipe = Pipeline::ideal();
    let st = pipe.prepared(Bell::PhiPlus).evolve(pipe.disentangle());
    let target = l(1, 1).ket();
    let res = qst(&st, &target, &rp, &pipe, 10_000, 12).unwrap();
    assert!(res.fidelity_to_target >= 0.99, "{}", res.fidelity_to_target);
}

#[test]
fn too_few_shots_is_rejected() {
    let rp = ReadoutParams::default();
    let need = min_shots(&rp.qst_read());
    let st = QuantumState::maximally_mixed_logical();
    match qst(&st, &Bell::PhiPlus.ket(), &rp, &Pipeline::ideal(), need - 1, 1) {
        Err(ReadoutError::InsufficientShots { shots, required }) => {
            assert_eq!((shots, required), (need - 1, need));
        }
        other => panic!("expected InsufficientShots, got {other:?}"),
    }
    assert!(qst(&st, &Bell::PhiPlus.ket(), &rp, &Pipeline::ideal(), need, 1).is_ok());
}

#[test]
fn pauli_pre_rotations_cover_all_settings() {
    let pipe = Pipeline::ideal();
    let id = pipe.pre_rotation(Pauli::Z, Pauli::Z);
    assert!(id.max_abs_diff(&qutrit_bsm::hilbert::Operator::identity(9)) < 1e-15);
    for pe in Pauli::ALL {
        for pn in Pauli::ALL {
            assert!(pipe.pre_rotation(pe, pn).is_unitary());
        }
    }
}
