mod common;

use nalgebra::Matrix2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scanpath::gaze_io::{load_bundled_models, parse_gaze_csv, read_model, write_model};
use scanpath::hmm::{gaussian_logpdf, Gaussian2, GaussianHmm};
use scanpath::Point;

fn model_and_seq(seed: u64, max_k: usize, max_t: usize) -> (GaussianHmm, Vec<Point>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = common::random_model(rng.random_range(1..=max_k), &mut rng);
    let t = rng.random_range(1..=max_t);
    let seq = if rng.random_bool(0.5) { m.sample_with(t, &mut rng).observations } else { common::random_points(t, &mut rng) };
    (m, seq)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn posteriors_match_enumeration(seed in any::<u64>()) {
        let (m, seq) = model_and_seq(seed, 3, 4);
        let p = m.posteriors(&seq).unwrap();
        let bf = common::brute_force(&m, &seq);
        prop_assert!(rel(p.log_likelihood, bf.loglik) <= 1e-9);
        for (g, h) in p.gamma.iter().flatten().zip(bf.gamma.iter().flatten()) {
            prop_assert!((g - h).abs() <= 1e-9);
        }
        for (x, y) in p.xi.iter().flatten().flatten().zip(bf.xi.iter().flatten().flatten()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn likelihood_is_invariant_under_state_permutation(seed in any::<u64>(), rot in 0usize..3) {
        let (m, seq) = model_and_seq(seed, 3, 8);
        let k = m.n_states();
        let order: Vec<usize> = (0..k).map(|i| (i + rot) % k).collect();
        let p = m.permuted(&order);
        prop_assert!(rel(p.log_likelihood(&seq).unwrap(), m.log_likelihood(&seq).unwrap()) <= 1e-12);
        prop_assert!(rel(p.viterbi(&seq).unwrap().1, m.viterbi(&seq).unwrap().1) <= 1e-12);
    }

    #[test]
    fn likelihood_bounds_viterbi_score(seed in any::<u64>()) {
        let (m, seq) = model_and_seq(seed, 3, 30);
        let (_, score) = m.viterbi(&seq).unwrap();
        prop_assert!(m.log_likelihood(&seq).unwrap() >= score - 1e-9 * score.abs());
    }

    #[test]
    fn model_json_round_trip(seed in any::<u64>()) {
        let (m, _) = model_and_seq(seed, 3, 1);
        let mut first = Vec::new();
        write_model(&mut first, &m.to_record(Some("x"))).unwrap();
        let record = read_model(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_model(&mut second, &record).unwrap();
        prop_assert_eq!(&first, &second);

        let back = GaussianHmm::from_record(&record).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
        prop_assert!(m.prior().iter().zip(back.prior()).all(|(a, b)| close(*a, *b)));
        for i in 0..m.n_states() {
            prop_assert!(m.transition_row(i).iter().zip(back.transition_row(i)).all(|(a, b)| close(*a, *b)));
        }
        for (a, b) in m.emissions().iter().zip(back.emissions()) {
            prop_assert!(a.mean().iter().zip(b.mean().iter()).all(|(a, b)| close(*a, *b)));
            prop_assert!(a.cov().iter().zip(b.cov().iter()).all(|(a, b)| close(*a, *b)));
        }
    }

    #[test]
    fn gaze_parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
        let _ = parse_gaze_csv(bytes.as_slice());
    }

    #[test]
    fn gaze_parser_preserves_row_order(ts in proptest::collection::btree_set(0u32..100_000, 1..50)) {
        let mut csv = String::from("participant_id,trial_id,condition,t_ms,x_px,y_px\n");
        for (i, t) in ts.iter().enumerate() {
            csv.push_str(&format!("p1,t1,truth_familiar,{t},{i},{}\n", 2 * i));
        }
        let trials = parse_gaze_csv(csv.as_bytes()).unwrap();
        prop_assert_eq!(trials.len(), 1);
        for (i, (s, t)) in trials[0].samples.iter().zip(&ts).enumerate() {
            prop_assert_eq!(s.t_ms, *t as f64);
            prop_assert_eq!(s.x_px, i as f64);
        }
    }
}

#[test]
fn logpdf_closed_forms() {
    let two_pi = (2.0 * std::f64::consts::PI).ln();
    let origin = Point::zeros();
    assert_eq!(gaussian_logpdf(&origin, &origin, &Matrix2::identity()).unwrap(), -two_pi);
    let v = gaussian_logpdf(&Point::new(1.0, 0.0), &origin, &Matrix2::identity()).unwrap();
    assert!((v - (-2.3378770664093453)).abs() < 1e-12);
    let mean = Point::new(634.9725, 351.6586);
    let v = gaussian_logpdf(&mean, &mean, &(Matrix2::identity() * 196.0)).unwrap();
    assert!((v - (-7.115991725639862)).abs() < 1e-12);
    assert!(gaussian_logpdf(&origin, &origin, &Matrix2::zeros()).is_err());
}

#[test]
fn single_state_posteriors_are_all_ones() {
    let m = GaussianHmm::new(
        vec![1.0],
        vec![vec![1.0]],
        vec![Gaussian2::new(Point::new(3.0, 4.0), Matrix2::identity()).unwrap()],
    )
    .unwrap();
    let p = m.posteriors(&[Point::zeros(), Point::new(9.0, 9.0), Point::new(1.0, 2.0)]).unwrap();
    assert!(p.gamma.iter().flatten().all(|&g| g == 1.0));
    assert!(p.xi.iter().flatten().flatten().all(|&x| x == 1.0));
}

#[test]
fn single_admissible_path_makes_bound_tight() {
    let e = |x: f64| Gaussian2::new(Point::new(x, 0.0), Matrix2::identity() * 4.0).unwrap();
    let m = GaussianHmm::new(
        vec![0.0, 1.0, 0.0],
        vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        vec![e(0.0), e(5.0), e(10.0)],
    )
    .unwrap();
    let seq = [Point::new(1.0, 1.0), Point::new(4.0, -2.0), Point::new(7.0, 0.5)];
    let (path, score) = m.viterbi(&seq).unwrap();
    assert_eq!(path, vec![1, 1, 1]);
    assert!((m.log_likelihood(&seq).unwrap() - score).abs() < 1e-12);
}

#[test]
fn lie_familiar_path_moves_from_first_to_third_state() {
    let m = GaussianHmm::from_record(&load_bundled_models()["lie_familiar"]).unwrap();
    let mu = m.means();
    let seq = [mu[0], mu[2], mu[2], mu[2]];
    let (path, _) = m.viterbi(&seq).unwrap();
    assert_eq!(path, common::brute_force(&m, &seq).best_path);
    assert_eq!(path, vec![0, 2, 2, 2]);
}

#[test]
fn long_sequences_stay_finite() {
    let m = GaussianHmm::from_record(&load_bundled_models()["general"]).unwrap();
    let seq = m.sample(10_000, 3).observations;
    let p = m.posteriors(&seq).unwrap();
    assert!(p.log_likelihood.is_finite() && p.log_likelihood < -1e4);
    for g in &p.gamma {
        assert!((g.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    }
    assert!(m.viterbi(&seq).unwrap().1 <= p.log_likelihood);
}

#[test]
fn sampled_emission_spread_matches_covariance() {
    let e = Gaussian2::new(Point::new(300.0, 200.0), Matrix2::identity() * 196.0).unwrap();
    let m = GaussianHmm::new(vec![1.0], vec![vec![1.0]], vec![e]).unwrap();
    let ys = m.sample(10_000, 77).observations;
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<Point>() / n;
    for axis in 0..2 {
        let sd = (ys.iter().map(|y| (y[axis] - mean[axis]).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 14.0).abs() < 0.5, "axis {axis}: {sd}");
    }
}
