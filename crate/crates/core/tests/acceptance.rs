//! Acceptance criteria. Each test prints one `criterion NN PASS|FAIL` line
//! and then asserts the same condition.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scanpath::classify::{classify, roi_spread, Candidate, Rule};
use scanpath::fixation::{detect_fixations, IdtConfig};
use scanpath::gaze_io::{load_bundled_models, validate_model};
use scanpath::hmm::{fit_map, Gaussian2, GaussianHmm, TrainConfig};
use scanpath::synth::{jitter_model, Jitter};
use scanpath::vhem::{adjusted_rand_index, elbo_pair, hard_assignments, reduce, VhemConfig};
use scanpath::{GazeSample, Point};

fn verdict(n: u32, pass: bool, detail: &str) {
    println!("criterion {n:02} {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n:02} failed: {detail}");
}

fn bundled(key: &str) -> GaussianHmm {
    GaussianHmm::from_record(&load_bundled_models()[key]).unwrap()
}

/// The shared randomized case set: K ≤ 3, T ≤ 5.
fn cases() -> Vec<(GaussianHmm, Vec<Point>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    (0..200)
        .map(|i| {
            let k = 1 + i % 3;
            let t = rng.random_range(1..=5);
            let m = common::random_model(k, &mut rng);
            // half the sequences come from the model, half are arbitrary points
            let seq = if i % 2 == 0 { m.sample_with(t, &mut rng).observations } else { common::random_points(t, &mut rng) };
            (m, seq)
        })
        .collect()
}

#[test]
fn criterion_01_forward_matches_path_enumeration() {
    let cases = cases();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (m, seq) in &cases {
        let got = m.log_likelihood(seq).unwrap();
        let want = common::brute_force(m, seq).loglik;
        worst = worst.max(((got - want) / want).abs());
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        worst <= 1e-9 && elapsed < Duration::from_secs(5),
        &format!("200 cases, max relative error {worst:.2e}, {:.2} s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_02_viterbi_matches_path_enumeration() {
    let cases = cases();
    let start = Instant::now();
    let mut mismatched = 0;
    let mut worst: f64 = 0.0;
    for (m, seq) in &cases {
        let (path, score) = m.viterbi(seq).unwrap();
        let bf = common::brute_force(m, seq);
        mismatched += usize::from(path != bf.best_path);
        worst = worst.max((score - bf.best_score).abs());
    }
    let elapsed = start.elapsed();

    // exact ties: the backtrack keeps the lower index at every step
    let e = || Gaussian2::new(Point::zeros(), Matrix2::identity()).unwrap();
    let alternating =
        GaussianHmm::new(vec![0.5, 0.5], vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![e(), e()]).unwrap();
    let seq = [Point::new(1.0, 1.0), Point::new(2.0, 0.0)];
    let tie_alt = alternating.viterbi(&seq).unwrap().0 == common::brute_force(&alternating, &seq).best_path
        && alternating.viterbi(&seq).unwrap().0 == vec![1, 0];
    let flat = GaussianHmm::new(vec![1.0 / 3.0; 3], vec![vec![1.0 / 3.0; 3]; 3], vec![e(), e(), e()]).unwrap();
    let tie_flat = flat.viterbi(&[Point::zeros(); 4]).unwrap().0 == vec![0; 4];

    verdict(
        2,
        mismatched == 0 && worst <= 1e-9 && tie_alt && tie_flat && elapsed < Duration::from_secs(5),
        &format!(
            "200 cases, {mismatched} path mismatches, max score error {worst:.2e}, tie cases {}, {:.2} s",
            if tie_alt && tie_flat { "ok" } else { "wrong" },
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_03_posteriors_are_consistent() {
    let mut worst: f64 = 0.0;
    for (m, seq) in cases() {
        let p = m.posteriors(&seq).unwrap();
        let k = m.n_states();
        for g in &p.gamma {
            worst = worst.max((g.iter().sum::<f64>() - 1.0).abs());
        }
        for (t, x) in p.xi.iter().enumerate() {
            worst = worst.max((x.iter().flatten().sum::<f64>() - 1.0).abs());
            for j in 0..k {
                worst = worst.max((x[j].iter().sum::<f64>() - p.gamma[t][j]).abs());
                worst = worst.max(((0..k).map(|i| x[i][j]).sum::<f64>() - p.gamma[t + 1][j]).abs());
            }
        }
    }
    verdict(3, worst <= 1e-10, &format!("200 cases, max deviation {worst:.2e}"));
}

#[test]
fn criterion_04_map_em_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_drop: f64 = 0.0;
    let mut steps = 0;
    for problem in 0..50u64 {
        let gen = common::random_model(rng.random_range(1..=3), &mut rng);
        let seqs: Vec<Vec<Point>> = (0..rng.random_range(2..=8))
            .map(|_| {
                let len = rng.random_range(5..=20);
                gen.sample_with(len, &mut rng).observations
            })
            .collect();
        let config = TrainConfig { n_states: rng.random_range(1..=3), n_restarts: 2, seed: problem, ..Default::default() };
        let fit = fit_map(&seqs, &config).unwrap();
        for w in fit.trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
            steps += 1;
        }
    }
    verdict(
        4,
        worst_drop <= 1e-8,
        &format!("50 problems, {steps} iterations, largest decrease {worst_drop:.2e}"),
    );
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    common::all_paths(k, k).into_iter().filter(|p| (0..k).all(|s| p.contains(&s))).collect()
}

#[test]
fn criterion_05_parameter_recovery() {
    let start = Instant::now();
    let gen = bundled("truth_familiar");
    let seqs: Vec<Vec<Point>> = (0..40).map(|i| gen.sample(19, 5_000 + i).observations).collect();
    let fit = fit_map(&seqs, &TrainConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let got = &fit.model;

    // match states by mean distance over all permutations
    let perm = permutations(3)
        .into_iter()
        .min_by(|a, b| {
            let cost = |p: &Vec<usize>| -> f64 {
                (0..3).map(|i| (got.emissions()[p[i]].mean() - gen.emissions()[i].mean()).norm()).sum()
            };
            cost(a).total_cmp(&cost(b))
        })
        .unwrap();
    let mut mean_err: f64 = 0.0;
    let mut a_err: f64 = 0.0;
    let mut pi_err: f64 = 0.0;
    for i in 0..3 {
        let d = got.emissions()[perm[i]].mean() - gen.emissions()[i].mean();
        mean_err = mean_err.max(d.x.abs()).max(d.y.abs());
        pi_err = pi_err.max((got.prior()[perm[i]] - gen.prior()[i]).abs());
        for j in 0..3 {
            a_err = a_err.max((got.transition(perm[i], perm[j]) - gen.transition(i, j)).abs());
        }
    }
    verdict(
        5,
        mean_err <= 5.0 && a_err <= 0.05 && pi_err <= 0.1 && elapsed < Duration::from_secs(30),
        &format!(
            "mean error {mean_err:.2} px, transition error {a_err:.4}, prior error {pi_err:.4}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    );
}

/// Largest entrywise difference between two models after matching states.
fn model_distance(a: &GaussianHmm, b: &GaussianHmm) -> f64 {
    let k = a.n_states();
    permutations(k)
        .into_iter()
        .map(|p| {
            let mut d: f64 = 0.0;
            for i in 0..k {
                d = d.max((a.prior()[p[i]] - b.prior()[i]).abs());
                for j in 0..k {
                    d = d.max((a.transition(p[i], p[j]) - b.transition(i, j)).abs());
                }
                let (ea, eb) = (&a.emissions()[p[i]], &b.emissions()[i]);
                d = d.max((ea.mean() - eb.mean()).abs().max());
                d = d.max((ea.cov() - eb.cov()).abs().max());
            }
            d
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn criterion_06_self_reduction_is_a_fixed_point() {
    let single = GaussianHmm::new(
        vec![1.0],
        vec![vec![1.0]],
        vec![Gaussian2::new(Point::new(683.0, 384.0), Matrix2::new(250.0, 40.0, 40.0, 150.0)).unwrap()],
    )
    .unwrap();
    let iso = |x: f64, y: f64| Gaussian2::new(Point::new(x, y), Matrix2::identity() * 196.0).unwrap();
    let separated = GaussianHmm::new(
        vec![0.6, 0.3, 0.1],
        vec![vec![0.8, 0.15, 0.05], vec![0.1, 0.7, 0.2], vec![0.25, 0.25, 0.5]],
        vec![iso(300.0, 300.0), iso(900.0, 300.0), iso(600.0, 800.0)],
    )
    .unwrap();
    let config = VhemConfig::default();
    let mut worst: f64 = 0.0;
    for m in [&single, &separated] {
        let mix = reduce(std::slice::from_ref(m), None, &config).unwrap();
        worst = worst.max(model_distance(&mix.models[0], m));
    }
    // with overlapping states the soft state alignment blurs the fixed point
    let fixture = bundled("truth_familiar");
    let fixture_gap =
        model_distance(&reduce(std::slice::from_ref(&fixture), None, &config).unwrap().models[0], &fixture);
    println!("  (overlapping-state fixture deviates by {fixture_gap:.2e}; not part of the criterion)");
    verdict(6, worst <= 1e-6, &format!("max entrywise deviation {worst:.2e}"));
}

#[test]
fn criterion_07_elbo_is_a_lower_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 100_000;
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for _ in 0..20 {
        let base = common::random_model(rng.random_range(1..=2), &mut rng);
        let reduced = common::random_model(rng.random_range(1..=2), &mut rng);
        let tau = rng.random_range(1..=3);
        let bound = elbo_pair(&base, &reduced, tau).unwrap().bound;
        let lls: Vec<f64> =
            (0..n).map(|_| reduced.log_likelihood(&base.sample_with(tau, &mut rng).observations).unwrap()).collect();
        let mean = lls.iter().sum::<f64>() / n as f64;
        let var = lls.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        if bound > mean + 3.0 * se {
            violations += 1;
        }
        tightest = tightest.min((mean - bound) / se.max(f64::MIN_POSITIVE));
    }
    verdict(
        7,
        violations == 0,
        &format!("20 pairs, {violations} violations, smallest slack {tightest:.1} standard errors"),
    );
}

#[test]
fn criterion_08_vhem_recovers_condition_groups() {
    let start = Instant::now();
    let archetypes: Vec<GaussianHmm> =
        ["truth_familiar", "truth_unfamiliar", "lie_familiar", "lie_unfamiliar"].iter().map(|k| bundled(k)).collect();
    let mut aris = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let mut base = Vec::new();
        let mut truth = Vec::new();
        for (g, m) in archetypes.iter().enumerate() {
            for _ in 0..21 {
                base.push(jitter_model(m, &Jitter::default(), &mut rng).unwrap());
                truth.push(g);
            }
        }
        let mix = reduce(&base, None, &VhemConfig { n_reduced: 4, seed, ..Default::default() }).unwrap();
        aris.push(adjusted_rand_index(&hard_assignments(&mix), &truth));
    }
    let elapsed = start.elapsed();
    let good = aris.iter().filter(|&&a| a >= 0.9).count();
    verdict(
        8,
        good >= 4 && elapsed < Duration::from_secs(120),
        &format!("ARI per run {aris:.3?}, {good}/5 at least 0.9, {:.1} s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_09_classification_beats_chance() {
    let start = Instant::now();
    let labels = ["lie_familiar", "lie_unfamiliar", "truth_familiar", "truth_unfamiliar"];
    let candidates: BTreeMap<String, Candidate> =
        labels.iter().map(|l| (l.to_string(), Candidate::new(bundled(l)).unwrap())).collect();
    let mut sequences = Vec::new();
    for (c, l) in labels.iter().enumerate() {
        let m = bundled(l);
        for i in 0..1000u64 {
            sequences.push((l.to_string(), m.sample(19, 9_000_000 + 10_000 * c as u64 + i).observations));
        }
    }
    let mut accuracy = BTreeMap::new();
    for rule in Rule::ALL {
        let correct =
            sequences.iter().filter(|(truth, seq)| &classify(rule, seq, &candidates).unwrap().chosen == truth).count();
        accuracy.insert(rule.as_str(), correct as f64 / sequences.len() as f64);
    }
    let elapsed = start.elapsed();
    let pass = accuracy.values().all(|&a| a > 0.40) && accuracy["loglik"] > 0.60 && elapsed < Duration::from_secs(60);
    verdict(9, pass, &format!("4-way accuracy {accuracy:.4?}, {:.1} s", elapsed.as_secs_f64()));
}

#[test]
fn criterion_10_bundled_tables_are_verbatim() {
    // (key, prior, transition rows) as printed
    #[rustfmt::skip]
    let tables: [(&str, [f64; 3], [[f64; 3]; 3]); 5] = [
        ("general", [0.0000, 0.8475, 0.1525],
            [[0.9704, 0.0086, 0.0210], [0.0449, 0.9248, 0.0303], [0.0411, 0.0248, 0.9340]]),
        ("truth_familiar", [0.8626, 0.0479, 0.0895],
            [[0.8859, 0.0402, 0.0738], [0.0285, 0.9444, 0.0272], [0.0903, 0.0252, 0.8845]]),
        ("truth_unfamiliar", [0.0820, 0.3354, 0.5826],
            [[0.9680, 0.0215, 0.0105], [0.0518, 0.9225, 0.0257], [0.0420, 0.0898, 0.8682]]),
        ("lie_familiar", [0.6456, 0.0000, 0.3544],
            [[0.9102, 0.0500, 0.0398], [0.0119, 0.9663, 0.0218], [0.0305, 0.0501, 0.9194]]),
        ("lie_unfamiliar", [0.4848, 0.4027, 0.1125],
            [[0.5602, 0.3775, 0.0623], [0.3153, 0.5622, 0.1225], [0.2099, 0.2751, 0.5150]]),
    ];
    let models = load_bundled_models();
    let mut problems = Vec::new();
    if models.len() != 5 {
        problems.push(format!("{} models", models.len()));
    }
    for (key, prior, transition) in tables {
        let Some(rec) = models.get(key) else {
            problems.push(format!("{key} missing"));
            continue;
        };
        if !validate_model(rec).is_empty() || GaussianHmm::from_record(rec).is_err() {
            problems.push(format!("{key} invalid"));
        }
        if rec.prior != prior || rec.transition.iter().zip(&transition).any(|(r, t)| r.as_slice() != t) {
            problems.push(format!("{key} differs from the table"));
        }
    }
    verdict(10, problems.is_empty(), &format!("5 tables compared, problems: {problems:?}"));
}

#[test]
fn criterion_11_idt_matches_naive_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    let mut fixations = 0;
    for i in 0..100 {
        let n = if i % 10 == 0 { 10_000 } else { rng.random_range(1..=10_000) };
        let stream = common::random_stream(n, &mut rng);
        let config = if i % 2 == 0 {
            IdtConfig::default()
        } else {
            IdtConfig { dispersion_px: rng.random_range(1.0..12.0), min_duration_ms: rng.random_range(20.0..300.0) }
        };
        let fast: Vec<_> = detect_fixations(&stream, &config)
            .unwrap()
            .into_iter()
            .map(|f| (f.x_px, f.y_px, f.start_ms, f.duration_ms, f.n_samples))
            .collect();
        let slow = common::naive_idt(&stream, config.dispersion_px, config.min_duration_ms);
        fixations += slow.len();
        mismatches += usize::from(fast != slow);
    }

    let at = |t: usize, x: f64, y: f64| GazeSample { t_ms: 10.0 * t as f64, x_px: x, y_px: y };
    let constant: Vec<GazeSample> = (0..30).map(|t| at(t, 100.0, 100.0)).collect();
    let c = detect_fixations(&constant, &IdtConfig::default()).unwrap();
    let constant_ok = c.len() == 1 && c[0].centroid() == Point::new(100.0, 100.0) && c[0].duration_ms == 290.0;
    let two: Vec<GazeSample> =
        (0..40).map(|t| if t < 20 { at(t, 100.0, 100.0) } else { at(t, 400.0, 300.0) }).collect();
    let f = detect_fixations(&two, &IdtConfig::default()).unwrap();
    let two_ok =
        f.len() == 2 && f[0].centroid() == Point::new(100.0, 100.0) && f[1].centroid() == Point::new(400.0, 300.0);

    verdict(
        11,
        mismatches == 0 && constant_ok && two_ok,
        &format!(
            "100 streams, {fixations} fixations, {mismatches} mismatches, constant {constant_ok}, two clusters {two_ok}"
        ),
    );
}

#[test]
fn criterion_12_sampling_statistics() {
    let m = bundled("lie_unfamiliar");
    let k = m.n_states();
    let path = m.sample(100_000, 12).states;
    let mut counts = vec![vec![0usize; k]; k];
    for w in path.windows(2) {
        counts[w[0]][w[1]] += 1;
    }
    let mut a_err: f64 = 0.0;
    for i in 0..k {
        let row: usize = counts[i].iter().sum();
        for j in 0..k {
            a_err = a_err.max((counts[i][j] as f64 / row as f64 - m.transition(i, j)).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    let mut first = vec![0usize; k];
    for _ in 0..100_000 {
        first[m.sample_with(1, &mut rng).states[0]] += 1;
    }
    let pi_err = (0..k).map(|i| (first[i] as f64 / 1e5 - m.prior()[i]).abs()).fold(0.0, f64::max);
    verdict(
        12,
        a_err <= 0.01 && pi_err <= 0.01,
        &format!("transition error {a_err:.4}, prior error {pi_err:.4}"),
    );
}

#[test]
fn criterion_13_roi_spread() {
    let face = Point::new(683.0, 384.0);
    let familiar = [
        Point::new(634.9725, 351.6586),
        Point::new(676.1114, 493.2836),
        Point::new(706.2081, 332.5524),
    ];
    let unfamiliar = [
        Point::new(672.2400, 430.2586),
        Point::new(616.2596, 321.0105),
        Point::new(688.8656, 337.2602),
    ];
    // frozen from an independent evaluation of the per-axis mean squared deviation
    let want_familiar = (964.2364906067, 5211.9089762267);
    let want_unfamiliar = (1534.8212851733, 2764.0480294167);
    let a = roi_spread(&familiar, face).unwrap();
    let b = roi_spread(&unfamiliar, face).unwrap();
    let err = [a.0 - want_familiar.0, a.1 - want_familiar.1, b.0 - want_unfamiliar.0, b.1 - want_unfamiliar.1]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()));
    verdict(
        13,
        b.1 < a.1 && err <= 1e-6,
        &format!("familiar ({:.4}, {:.4}), unfamiliar ({:.4}, {:.4}), oracle error {err:.1e}", a.0, a.1, b.0, b.1),
    );
}

fn pipeline(dir: &Path) {
    let exe = env!("CARGO_BIN_EXE_scanpath");
    let steps: [&[&str]; 5] = [
        &["bundled", "-o", "bundled"],
        &[
            "simulate",
            "bundled/truth_familiar.json",
            "bundled/truth_unfamiliar.json",
            "bundled/lie_familiar.json",
            "bundled/lie_unfamiliar.json",
            "--participants",
            "3",
            "--trials",
            "6",
            "--seed",
            "14",
            "-o",
            "sim.csv",
        ],
        &["train", "sim.csv", "-o", "trained", "--seed", "14", "--restarts", "2"],
        &["reduce", "trained/models", "-o", "reduced", "--k-reduced", "4", "--seed", "14"],
        &["classify", "sim.csv", "--models", "reduced/cluster_0.json", "reduced/cluster_1.json", "reduced/cluster_2.json", "reduced/cluster_3.json", "-o", "classified"],
    ];
    for args in steps {
        let out = Command::new(exe).args(args).current_dir(dir).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

#[test]
fn criterion_14_pipeline_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let differing: Vec<&String> = sa.keys().filter(|k| sa.get(*k) != sb.get(*k)).collect();
    verdict(
        14,
        sa.len() == sb.len() && differing.is_empty() && sa.contains_key("classified/report.json"),
        &format!("{} artifacts compared, differing: {differing:?}", sa.len()),
    );
}
