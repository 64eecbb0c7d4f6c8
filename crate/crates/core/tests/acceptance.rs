//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass a substring (e.g. `c5`) to run a subset.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use seqkrig::batch::{descending_order, select_batch, select_batch_with_fallback};
use seqkrig::criteria::{argmax_over_candidates, CriterionSpec};
use seqkrig::design::{latin_hypercube, md_optimized_design, mixture_discrepancy, DesignMatrix};
use seqkrig::kernel::{cross_correlation_jacobian, cross_correlations, KernelFamily};
use seqkrig::kriging::{fit, KrigingModel};
use seqkrig::sequential::{
    derive_seed, run_campaign_with_test_set, CampaignConfig, CandidateGrid, Observer,
};
use seqkrig::testbed::{median, run_comparison, sign_test_p, ComparisonPlan, TestSet};
use seqkrig::{ClusterParams, Error, TestFunction};

use common::{literal_walk, min_pairwise_distance, naive_md_squared, WalkOutcome};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    type Check = fn() -> Verdict;
    let checks: [(&str, &str, Duration, Check); 9] = [
        (
            "c1",
            "mixture discrepancy oracle",
            Duration::from_secs(10),
            c1_md_oracle,
        ),
        (
            "c2",
            "interpolation and zero variance at data",
            Duration::from_secs(120),
            c2_interpolation,
        ),
        (
            "c3",
            "gradient-norm expectation vs posterior sampling",
            Duration::from_secs(120),
            c3_lemma_monte_carlo,
        ),
        (
            "c4",
            "derivatives vs central differences",
            Duration::from_secs(30),
            c4_derivatives,
        ),
        (
            "c5",
            "batch selection vs literal walk",
            Duration::from_secs(30),
            c5_walk_oracle,
        ),
        (
            "c6",
            "sequential gradient design beats regenerated MD design",
            Duration::from_secs(600),
            c6_trend,
        ),
        (
            "c7",
            "table directions",
            Duration::from_secs(1800),
            c7_table_directions,
        ),
        (
            "c8",
            "batch separation",
            Duration::from_secs(300),
            c8_separation,
        ),
        (
            "c9",
            "command-line determinism",
            Duration::from_secs(120),
            c9_cli_determinism,
        ),
    ];
    let mut failed = 0;
    for (id, name, limit, check) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| id.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let pass = v.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} | {name} | {} | {:.1}s of {}s{}",
            &id[1..],
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { " (over time)" },
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn c1_md_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=30);
        let m = rng.random_range(1..=5);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random::<f64>()).collect())
            .collect();
        let d = DesignMatrix::from_rows(&rows).unwrap();
        let got = mixture_discrepancy(&d).md_squared;
        worst = worst.max((got - naive_md_squared(&rows)).abs());
    }
    let centre = mixture_discrepancy(&DesignMatrix::from_rows(&[[0.5]]).unwrap()).md_squared;
    let corner = mixture_discrepancy(&DesignMatrix::from_rows(&[[0.0]]).unwrap()).md_squared;
    verdict(
        worst < 1e-12 && centre == 0.125 && corner == 0.25,
        format!("max |diff| {worst:.2e} over 100 designs; single points {centre} and {corner}"),
    )
}

fn scenario_functions() -> Vec<TestFunction> {
    vec![
        TestFunction::Branin,
        TestFunction::Rational,
        TestFunction::LogTrig,
        TestFunction::Hartmann3,
        TestFunction::Ackley5,
        TestFunction::Zakharov { m: 3 },
        TestFunction::Rosenbrock { m: 4 },
    ]
}

fn observe(f: TestFunction, d: &DesignMatrix) -> Vec<f64> {
    Observer::new(&f).observe(d).unwrap()
}

fn c2_interpolation() -> Verdict {
    let fns = scenario_functions();
    let mut worst_fit: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for k in 0..50u64 {
        let f = fns[k as usize % fns.len()];
        let m = f.dim();
        let n = 5 * m + (k as usize % 4) * m;
        let d = latin_hypercube(n, m, 100 + k).unwrap();
        let y = observe(f, &d);
        let model = fit(d.clone(), y.clone(), KernelFamily::GaussianSeparable, k).unwrap();
        for (x, yi) in d.rows().zip(&y) {
            worst_fit = worst_fit.max((model.predict(x).unwrap() - yi).abs());
            worst_var = worst_var.max(model.predict_variance(x).unwrap() / model.tau_squared());
        }
    }
    verdict(
        worst_fit < 1e-6 && worst_var < 1e-8,
        format!("max |y_hat - y| {worst_fit:.2e}, max s2/tau2 {worst_var:.2e} over 50 models"),
    )
}

/// Posterior covariance of the latent (nugget-free) process between two
/// points off the design.
fn posterior_cov(model: &KrigingModel, a: &[f64], b: &[f64]) -> f64 {
    let spec = model.kernel();
    let l = model.chol_factor();
    let ra = DVector::from_vec(cross_correlations(spec, a, model.design()).unwrap());
    let rb = DVector::from_vec(cross_correlations(spec, b, model.design()).unwrap());
    let za = l.solve_lower_triangular(&ra).unwrap();
    let zb = l.solve_lower_triangular(&rb).unwrap();
    model.tau_squared() * (spec.smooth_correlation(a, b).unwrap() - za.dot(&zb))
}

fn c3_lemma_monte_carlo() -> Verdict {
    let f = TestFunction::LogTrig;
    let d = md_optimized_design(12, 2, 3, 2000).unwrap();
    let y = observe(f, &d);
    let model = fit(d, y, KernelFamily::GaussianSeparable, 3).unwrap();
    let h = 1e-3;
    let samples = 2000;
    let m = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst_z: f64 = 0.0;
    let mut details = Vec::new();
    for p in 0..10 {
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..0.95)).collect();
        let expected = model.gradient_norm_expectation(&x).unwrap();
        // Stencil x + h e_i, x - h e_i for each axis.
        let stencil: Vec<Vec<f64>> = (0..m)
            .flat_map(|i| {
                [1.0, -1.0].map(|s| {
                    let mut p = x.clone();
                    p[i] += s * h;
                    p
                })
            })
            .collect();
        let ns = stencil.len();
        let mean = DVector::from_iterator(ns, stencil.iter().map(|s| model.predict(s).unwrap()));
        let cov = DMatrix::from_fn(ns, ns, |a, b| {
            posterior_cov(&model, &stencil[a], &stencil[b])
        });
        let diff = DMatrix::from_fn(m, ns, |i, k| {
            if k == 2 * i {
                1.0 / (2.0 * h)
            } else if k == 2 * i + 1 {
                -1.0 / (2.0 * h)
            } else {
                0.0
            }
        });
        let g_mean = &diff * mean;
        let g_cov = &diff * cov * diff.transpose();
        let eig = SymmetricEigen::new(g_cov);
        let root =
            &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
        let draws: Vec<f64> = (0..samples)
            .map(|_| {
                let z =
                    DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
                (&g_mean + &root * z).norm_squared()
            })
            .collect();
        let avg = draws.iter().sum::<f64>() / samples as f64;
        let var = draws.iter().map(|q| (q - avg).powi(2)).sum::<f64>() / (samples - 1) as f64;
        let se = (var / samples as f64).sqrt();
        let z = (avg - expected).abs() / se;
        worst_z = worst_z.max(z);
        if p < 2 {
            details.push(format!("{expected:.4} vs {avg:.4}"));
        }
    }
    verdict(
        worst_z < 3.0,
        format!(
            "worst deviation {worst_z:.2} SE at 10 probes (e.g. {})",
            details.join(", ")
        ),
    )
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn c4_derivatives() -> Verdict {
    let h = 1e-5;
    let f = TestFunction::Hartmann3;
    let d = md_optimized_design(20, 3, 4, 2000).unwrap();
    let y = observe(f, &d);
    let models = [
        fit(d.clone(), y.clone(), KernelFamily::GaussianSeparable, 4).unwrap(),
        fit(d.clone(), y, KernelFamily::Matern, 4).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst_grad: f64 = 0.0;
    let mut worst_jac: f64 = 0.0;
    for k in 0..100 {
        let model = &models[k % 2];
        let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        let g = model.predict_gradient(&x).unwrap();
        let jac = cross_correlation_jacobian(model.kernel(), &x, model.design()).unwrap();
        let mut fd_g = vec![0.0; 3];
        let mut fd_j = Vec::new();
        let mut an_j = Vec::new();
        for i in 0..3 {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] += h;
            dn[i] -= h;
            fd_g[i] = (model.predict(&up).unwrap() - model.predict(&dn).unwrap()) / (2.0 * h);
            let ru = cross_correlations(model.kernel(), &up, model.design()).unwrap();
            let rd = cross_correlations(model.kernel(), &dn, model.design()).unwrap();
            for (c, (a, b)) in ru.iter().zip(&rd).enumerate() {
                fd_j.push((a - b) / (2.0 * h));
                an_j.push(jac[(i, c)]);
            }
        }
        worst_grad = worst_grad.max(rel_err(&g, &fd_g));
        worst_jac = worst_jac.max(rel_err(&an_j, &fd_j));
    }
    verdict(
        worst_grad < 1e-4 && worst_jac < 1e-4,
        format!("max relative error: gradient {worst_grad:.2e}, jacobian {worst_jac:.2e} (Gaussian and Matern)"),
    )
}

fn c5_walk_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut exhausted = 0;
    let mut decayed = 0;
    for k in 0..200 {
        let n = rng.random_range(2..=50);
        let m = rng.random_range(1..=3);
        let b = rng.random_range(1..=n.min(5));
        let alpha = rng.random_range(1..=20);
        let beta = rng.random_range(0.2..6.0);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random::<f64>()).collect())
            .collect();
        let coarse = k % 2 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.random();
                if coarse {
                    (s * 4.0).round()
                } else {
                    s
                }
            })
            .collect();
        let d = DesignMatrix::from_rows(&rows).unwrap();
        let params = ClusterParams {
            b,
            alpha,
            beta,
            ..ClusterParams::default()
        };
        let ours = select_batch(&d, &scores, &params);
        let same = match (literal_walk(&rows, &scores, b, alpha, beta), ours) {
            (WalkOutcome::Done { clusters, alpha: a }, Ok(p)) => {
                if a != alpha {
                    decayed += 1;
                }
                let batch: Vec<usize> = clusters.iter().map(|c| c[0]).collect();
                p.clusters == clusters && p.batch == batch && p.alpha_used == a && !p.fallback
            }
            (
                WalkOutcome::Exhausted { clusters },
                Err(Error::InsufficientClusters { partial, .. }),
            ) => {
                exhausted += 1;
                partial.clusters == clusters
            }
            _ => false,
        };
        if !same {
            mismatches += 1;
        }
    }
    verdict(
        mismatches == 0,
        format!("{mismatches} mismatches in 200 instances ({decayed} needed alpha decay, {exhausted} exhausted)"),
    )
}

fn paired_wins(ours: &[f64], theirs: &[f64]) -> (usize, usize) {
    let wins = ours.iter().zip(theirs).filter(|(a, b)| a < b).count();
    let losses = ours.iter().zip(theirs).filter(|(a, b)| a > b).count();
    (wins, losses)
}

fn c6_trend() -> Verdict {
    let f = TestFunction::Branin;
    let mut seq = Vec::new();
    let mut md = Vec::new();
    for s in 0..10u64 {
        let seed = 600 + s;
        let tests = TestSet::latin_hypercube(f, 10_000, derive_seed(seed, 3)).unwrap();
        let config = CampaignConfig {
            objective: f,
            n0: 10,
            criterion: CriterionSpec::Gradient,
            rounds: 15,
            seed,
            ..CampaignConfig::default()
        };
        let result = run_campaign_with_test_set(&config, &f, Some(&tests)).unwrap();
        assert_eq!(result.final_design.n(), 25);
        seq.push(result.final_metrics.unwrap().rmse);

        let fresh = md_optimized_design(25, 2, derive_seed(seed, 7), config.design_budget).unwrap();
        let y = observe(f, &fresh);
        let model = fit(fresh, y, KernelFamily::GaussianSeparable, seed).unwrap();
        md.push(tests.score_model(&model).unwrap().rmse);
    }
    let (wins, losses) = paired_wins(&seq, &md);
    let p = sign_test_p(wins, losses);
    let (ms, mm) = (median(&seq).unwrap(), median(&md).unwrap());
    verdict(
        ms < mm && p < 0.1,
        format!("median RMSE {ms:.4} vs {mm:.4}, {wins} wins / {losses} losses, p = {p:.4}"),
    )
}

fn direction(
    function: TestFunction,
    ours: CriterionSpec,
    theirs: CriterionSpec,
    b: usize,
    use_mae: bool,
    seed: u64,
) -> (bool, String) {
    let plan = ComparisonPlan {
        functions: vec![function],
        criteria: vec![ours, theirs],
        b_values: vec![b],
        replications: 10,
        seed,
        added_points: 20,
        batch_rounds: 10,
        test_matrix_size: 10_000,
        candidate_grid: CandidateGrid::default(),
        alpha: 15,
        beta: 5.0,
        n0_per_dim: 5,
        design_budget: 2000,
        fit: Default::default(),
    };
    let table = run_comparison(&plan).unwrap();
    let metric = |c: CriterionSpec| -> Vec<f64> {
        let mut cells: Vec<_> = table.cells.iter().filter(|x| x.criterion == c).collect();
        cells.sort_by_key(|x| x.replication);
        cells
            .iter()
            .map(|x| {
                let r = x
                    .report
                    .unwrap_or_else(|| panic!("cell failed: {:?}", x.error));
                if use_mae {
                    r.mae
                } else {
                    r.rmse
                }
            })
            .collect()
    };
    let (a, z) = (metric(ours), metric(theirs));
    let (wins, losses) = paired_wins(&a, &z);
    let p = sign_test_p(wins, losses);
    let (ma, mz) = (median(&a).unwrap(), median(&z).unwrap());
    let name = if use_mae { "MAE" } else { "RMSE" };
    (
        ma < mz && p < 0.1,
        format!(
            "{function} b={b} {name} {ours} {ma:.4} vs {theirs} {mz:.4} ({wins}/{losses}, p = {p:.3})"
        ),
    )
}

fn c7_table_directions() -> Verdict {
    let parts = [
        direction(
            TestFunction::Branin,
            CriterionSpec::Gradient,
            CriterionSpec::Md,
            1,
            false,
            71,
        ),
        direction(
            TestFunction::Zakharov { m: 3 },
            CriterionSpec::VarianceBound,
            CriterionSpec::Md,
            1,
            true,
            72,
        ),
        direction(
            TestFunction::Branin,
            CriterionSpec::Gradient,
            CriterionSpec::Ei0,
            3,
            false,
            73,
        ),
    ];
    let labels = ["(a)", "(b)", "(c)"];
    let detail = parts
        .iter()
        .zip(labels)
        .map(|((ok, d), l)| format!("{l} {} {d}", if *ok { "ok" } else { "MISS" }))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(parts.iter().all(|(ok, _)| *ok), detail)
}

fn c8_separation() -> Verdict {
    let f = TestFunction::Branin;
    let mut better = 0;
    let mut gaps = Vec::new();
    for s in 0..10u64 {
        let seed = 800 + s;
        let initial = md_optimized_design(10, 2, derive_seed(seed, 1), 2000).unwrap();
        let y = observe(f, &initial);
        let model = fit(initial.clone(), y, KernelFamily::GaussianSeparable, seed).unwrap();
        let grid = CandidateGrid::default()
            .generate(2, derive_seed(seed, 2))
            .unwrap()
            .without(&initial)
            .unwrap();
        let scored =
            argmax_over_candidates(CriterionSpec::Gradient, Some(&model), &initial, &grid, true)
                .unwrap();
        let params = ClusterParams {
            b: 2,
            alpha: 10,
            beta: 5.0,
            ..ClusterParams::default()
        };
        let partition =
            select_batch_with_fallback(&grid, &scored.scores, &params, 1000f64.powf(-0.5)).unwrap();
        let naive: Vec<usize> = descending_order(&scored.scores)[..2].to_vec();
        let ours = min_pairwise_distance(&grid, &partition.batch);
        let theirs = min_pairwise_distance(&grid, &naive);
        if ours > theirs {
            better += 1;
        }
        gaps.push(format!("{ours:.3}/{theirs:.3}"));
    }
    verdict(
        better >= 8,
        format!(
            "clustered batch wider in {better}/10 seeds (clustered/naive: {})",
            gaps.join(" ")
        ),
    )
}

fn digests(dir: &Path) -> Vec<(String, String)> {
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            let path = f["path"].as_str().unwrap().to_string();
            let listed = f["sha256"].as_str().unwrap().to_string();
            let actual = hex::encode(Sha256::digest(std::fs::read(dir.join(&path)).unwrap()));
            assert_eq!(listed, actual, "manifest digest for {path}");
            (path, listed)
        })
        .collect()
}

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_seqkrig"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn c9_cli_determinism() -> Verdict {
    let work = tempfile::tempdir().unwrap();
    let run_cfg = work.path().join("run.json");
    let bench_cfg = work.path().join("bench.json");
    std::fs::write(
        &run_cfg,
        r#"{"objective": {"function": "f1"}, "n0": 10, "criterion": "gra", "rounds": 5,
            "candidate_grid": {"size": 400}, "seed": 9, "test_matrix_size": 2000}"#,
    )
    .unwrap();
    std::fs::write(
        &bench_cfg,
        r#"{"functions": [{"function": "f3"}, {"function": "f1"}], "criteria": ["s", "var"],
            "b_values": [1, 2], "replications": 2, "seed": 5, "added_points": 4,
            "batch_rounds": 2, "test_matrix_size": 1000, "candidate_grid": {"size": 300}}"#,
    )
    .unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    for (cmd, cfg) in [("run", &run_cfg), ("bench", &bench_cfg)] {
        let a = work.path().join(format!("{cmd}-a"));
        let b = work.path().join(format!("{cmd}-b"));
        let args = [cmd, "--config", cfg.to_str().unwrap()];
        if !(run_cli(&a, &args) && run_cli(&b, &args)) {
            ok = false;
            notes.push(format!("{cmd} exited with an error"));
            continue;
        }
        let (da, db) = (digests(&a), digests(&b));
        let same = da == db && !da.is_empty();
        ok &= same;
        notes.push(format!(
            "{cmd}: {} files {}",
            da.len(),
            if same { "identical" } else { "DIFFER" }
        ));
    }
    verdict(ok, notes.join(", "))
}
