//! End-to-end acceptance suite. Each test prints a single summary line
//! (visible with `--nocapture`) after its assertions pass and enforces a
//! wall-clock budget.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use thermoscan_core::bioheat::{
    build_grid, solve_steady, standard_layers, BloodParams, BoundaryConditions, SurfaceBc,
    SynthRanges, TissueLayer, TumorSpec,
};
use thermoscan_core::dataset::{load_csv, relabel_eit, train_test_split, EitMode, TabularDataset};
use thermoscan_core::doe::{run_doe, ExperimentPlan};
use thermoscan_core::evaluation::{
    confusion_at, metric_set, roc_auc, threshold_sweep, ConfusionMatrix, MetricKind,
};
use thermoscan_core::hpo::{
    cv_objective, gbt_x_space, optimize, Algo, Dimension, SearchSpace,
};
use thermoscan_core::learners::nn::{Activation, LayerSpec, Optimizer};
use thermoscan_core::learners::{nn_gradient_check, nn_train, LearnerFamily, NetworkSpec, Params};
use thermoscan_core::tabular::{
    apply_recipe, augment, expand, polynomial, scale, LeakageMode, TransformRecipe,
};
use thermoscan_core::thermal::{normalize, patient_split, NormalizeMode};

fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn blood() -> TabularDataset {
    load_csv(data_path("blood_biomarkers.csv"), "Classification").unwrap()
}

fn eit_binary() -> TabularDataset {
    let ds = load_csv(data_path("eit_breast_tissue.csv"), "Class").unwrap();
    relabel_eit(&ds, EitMode::Two).unwrap()
}

fn budget(name: &str, started: Instant, limit_s: f64) {
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        elapsed < limit_s,
        "{name}: took {elapsed:.1}s, budget {limit_s}s"
    );
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Train a default-parameter learner, sweep thresholds by F1, and return the
/// selected point's metric set (mirrors one DOE cell evaluation).
fn eval_cell(
    ds: &TabularDataset,
    recipe: &TransformRecipe,
    family: LearnerFamily,
    seed: u64,
) -> thermoscan_core::MetricSet {
    let (train, test) = train_test_split(ds, 0.3, seed, true).unwrap();
    let (train, test) = apply_recipe(&train, &test, recipe, seed).unwrap();
    let model = family.train(&train, &Params::new(), seed).unwrap();
    let scores = model.predict_scores(&test).unwrap();
    threshold_sweep(&scores, &test.labels, MetricKind::F1)
        .unwrap()
        .selected
        .metrics
}

// ---------------------------------------------------------------------------

#[test]
fn a01_metric_oracle_exactness() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..1000 {
        let n = rng.gen_range(2..=200);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        // Force both classes so every ratio denominator can be exercised.
        let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let threshold = rng.gen_range(0.0..1.0);

        // Brute-force counts.
        let (mut tp, mut fp, mut tn, mut fnn) = (0usize, 0usize, 0usize, 0usize);
        for (&s, &l) in scores.iter().zip(&labels) {
            if s >= threshold {
                if l == 1 {
                    tp += 1
                } else {
                    fp += 1
                }
            } else if l == 1 {
                fnn += 1
            } else {
                tn += 1
            }
        }
        let cm = confusion_at(&scores, &labels, threshold).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix { tp, fp, tn, fn_: fnn },
            "case {case}"
        );

        let m = metric_set(&cm);
        let check = |got: Option<f64>, num: usize, den: usize| {
            if den == 0 {
                assert_eq!(got, None);
            } else {
                assert!((got.unwrap() - num as f64 / den as f64).abs() < 1e-12);
            }
        };
        check(m.accuracy, tp + tn, n);
        check(m.sensitivity, tp, tp + fnn);
        check(m.specificity, tn, tn + fp);
        check(m.precision, tp, tp + fp);
        check(m.npv, tn, tn + fnn);
        check(m.f1, 2 * tp, 2 * tp + fp + fnn);

        // Independent all-pairs AUC oracle; must match exactly.
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (&sp, &lp) in scores.iter().zip(&labels) {
            for (&sn, &ln) in scores.iter().zip(&labels) {
                if lp == 1 && ln == 0 {
                    pairs += 1.0;
                    if sp > sn {
                        wins += 1.0;
                    } else if sp == sn {
                        wins += 0.5;
                    }
                }
            }
        }
        let oracle = wins / pairs;
        assert_eq!(roc_auc(&scores, &labels).unwrap(), oracle, "case {case}");
    }
    budget("a01", started, 5.0);
    println!("a01_metric_oracle_exactness: PASS");
}

#[test]
fn a02_f1_from_reported_precision_recall() {
    // precision 0.98, recall 1.00: tp=49, fp=1, fn=0.
    let cm = ConfusionMatrix { tp: 49, fp: 1, tn: 50, fn_: 0 };
    let m = metric_set(&cm);
    assert!((m.precision.unwrap() - 0.98).abs() < 1e-15);
    assert!((m.sensitivity.unwrap() - 1.0).abs() < 1e-15);
    let f1 = m.f1.unwrap();
    assert!((f1 - 98.0 / 99.0).abs() < 1e-12, "f1 = {f1}");
    assert_eq!(format!("{f1:.2}"), "0.99");
    println!("a02_f1_from_reported_precision_recall: PASS");
}

#[test]
fn a03_shape_laws() {
    let ds = blood();
    assert_eq!(ds.d(), 9);
    assert_eq!(polynomial(&ds, 2).unwrap().d(), 54);
    assert_eq!(expand(&ds).unwrap().d(), 16);
    assert_eq!(augment(&ds, 4, 7).unwrap().n(), 4 * ds.n());

    let (train, test) = train_test_split(&ds, 0.3, 3, true).unwrap();
    let (scaled, _, _) = scale(&train, &test).unwrap();
    for col in scaled.rows.columns() {
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9, "column mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-9, "column std {}", var.sqrt());
    }
    println!("a03_shape_laws: PASS");
}

#[test]
fn a04_blood_gbt_expanded_augmented_band() {
    let started = Instant::now();
    let ds = blood();
    let recipe = TransformRecipe {
        expand: true,
        augment: true,
        leakage_mode: LeakageMode::PaperFaithful,
        ..TransformRecipe::default()
    };
    let mut accs = Vec::new();
    let mut precs = Vec::new();
    for seed in 0..10u64 {
        let m = eval_cell(&ds, &recipe, LearnerFamily::GbtX, seed);
        accs.push(m.accuracy.unwrap());
        precs.push(m.precision.unwrap());
    }
    let acc = median(accs);
    let prec = median(precs);
    assert!(
        (acc - 0.93).abs() <= 0.05,
        "median accuracy {acc:.4} outside 0.93 +/- 0.05"
    );
    assert!(
        (prec - 0.96).abs() <= 0.05,
        "median precision {prec:.4} outside 0.96 +/- 0.05"
    );
    budget("a04", started, 120.0);
    println!("a04_blood_gbt_expanded_augmented_band: PASS (acc {acc:.3}, prec {prec:.3})");
}

#[test]
fn a05_eit_gbt_scaled_expanded_band() {
    let started = Instant::now();
    let ds = eit_binary();
    let recipe = TransformRecipe {
        scale: true,
        expand: true,
        ..TransformRecipe::default()
    };
    let mut accs = Vec::new();
    for seed in 0..10u64 {
        let m = eval_cell(&ds, &recipe, LearnerFamily::GbtX, seed);
        accs.push(m.accuracy.unwrap());
    }
    let acc = median(accs);
    assert!(
        (acc - 0.94).abs() <= 0.05,
        "median accuracy {acc:.4} outside 0.94 +/- 0.05"
    );
    budget("a05", started, 60.0);
    println!("a05_eit_gbt_scaled_expanded_band: PASS (acc {acc:.3})");
}

#[test]
fn a06_tpe_improves_over_defaults() {
    let started = Instant::now();
    for (name, ds) in [("blood", blood()), ("eit", eit_binary())] {
        let obj = cv_objective(LearnerFamily::GbtX, &ds, 5, MetricKind::Accuracy, 11);
        let default_acc = 1.0 - obj(&Params::new()).unwrap();
        let history = optimize(&obj, &gbt_x_space(), 200, Algo::Tpe, 11, None).unwrap();
        let best_acc = 1.0 - history.best().unwrap().ok_loss();
        assert!(
            best_acc - default_acc >= 0.02,
            "{name}: tuned {best_acc:.4} vs default {default_acc:.4}, gain {:.4} < 0.02",
            best_acc - default_acc
        );
    }
    budget("a06", started, 600.0);
    println!("a06_tpe_improves_over_defaults: PASS");
}

#[test]
fn a07_tpe_beats_random_on_test_functions() {
    let started = Instant::now();
    let quad_space = SearchSpace {
        dims: vec![("x".into(), Dimension::Uniform { a: -5.0, b: 5.0 })],
    };
    let quad = |p: &Params| -> thermoscan_core::Result<f64> {
        let x = p["x"].as_f64().unwrap();
        Ok((x - 1.7).powi(2))
    };
    let branin_space = SearchSpace {
        dims: vec![
            ("x1".into(), Dimension::Uniform { a: -5.0, b: 10.0 }),
            ("x2".into(), Dimension::Uniform { a: 0.0, b: 15.0 }),
        ],
    };
    let branin = |p: &Params| -> thermoscan_core::Result<f64> {
        let x1 = p["x1"].as_f64().unwrap();
        let x2 = p["x2"].as_f64().unwrap();
        let pi = std::f64::consts::PI;
        let (a, b, c) = (1.0, 5.1 / (4.0 * pi * pi), 5.0 / pi);
        let (r, s, t) = (6.0, 10.0, 1.0 / (8.0 * pi));
        Ok(a * (x2 - b * x1 * x1 + c * x1 - r).powi(2) + s * (1.0 - t) * x1.cos() + s)
    };

    let budget_iters = 60;
    for (name, space, f) in [
        ("quadratic", &quad_space, &quad as &dyn Fn(&Params) -> thermoscan_core::Result<f64>),
        ("branin", &branin_space, &branin),
    ] {
        let mut tpe_wins = 0;
        for seed in 0..20u64 {
            let tpe = optimize(f, space, budget_iters, Algo::Tpe, seed, None).unwrap();
            let rnd = optimize(f, space, budget_iters, Algo::Random, seed, None).unwrap();
            if tpe.best().unwrap().ok_loss() <= rnd.best().unwrap().ok_loss() {
                tpe_wins += 1;
            }
        }
        assert!(tpe_wins >= 14, "{name}: TPE won only {tpe_wins}/20 paired runs");
    }
    budget("a07", started, 60.0);
    println!("a07_tpe_beats_random_on_test_functions: PASS");
}

#[test]
fn a08_nn_gradient_checks() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let images: Vec<Array3<f64>> = (0..4)
        .map(|_| Array3::from_shape_fn((1, 8, 8), |_| rng.gen_range(0.0..1.0)))
        .collect();
    let labels = vec![0, 1, 1, 0];

    // Covers conv2d, maxpool, batch_norm, dropout (rate 0), dense, and the
    // ELU / ReLU / sigmoid activations (sigmoid in the output head).
    let specs: Vec<(&str, Vec<LayerSpec>)> = vec![
        (
            "conv_relu_pool_dense",
            vec![
                LayerSpec::Conv2d { filters: 3, kernel: 3, activation: Activation::Relu },
                LayerSpec::MaxPool2d,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 5, activation: Activation::Elu },
                LayerSpec::Dense { units: 1, activation: Activation::Sigmoid },
            ],
        ),
        (
            "conv_elu_batchnorm",
            vec![
                LayerSpec::Conv2d { filters: 2, kernel: 3, activation: Activation::Elu },
                LayerSpec::BatchNorm,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 1, activation: Activation::Sigmoid },
            ],
        ),
        (
            "dropout_off_dense_relu",
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 8, activation: Activation::Relu },
                LayerSpec::Dropout { rate: 0.0 },
                LayerSpec::Dense { units: 1, activation: Activation::Sigmoid },
            ],
        ),
    ];
    for (name, layers) in specs {
        let spec = NetworkSpec {
            input: (1, 8, 8),
            layers,
            optimizer: Optimizer::adam(1e-3),
        };
        let err = nn_gradient_check(&spec, &images, &labels, 1e-5, 8).unwrap();
        assert!(err < 1e-4, "{name}: max relative error {err:.3e}");
    }
    budget("a08", started, 30.0);
    println!("a08_nn_gradient_checks: PASS");
}

#[test]
fn a09_bioheat_verification() {
    let started = Instant::now();

    // Homogeneous slab, Dirichlet 37 at the core and Dirichlet 30 at the
    // surface, no sources: the steady profile is linear in depth.
    let slab = |q_met: f64| TissueLayer {
        name: "slab".into(),
        thickness: 0.02,
        specific_heat: 3600.0,
        conductivity: 0.5,
        density: 1050.0,
        perfusion: 0.0,
        metabolic_q: q_met,
    };
    let bc = BoundaryConditions {
        t_core: 37.0,
        surface: SurfaceBc::Dirichlet { t: 30.0 },
    };
    let grid = build_grid(&[slab(0.0)], None, BloodParams::default(), 1e-3, 0.01, bc).unwrap();
    let nx = grid.nx;
    let solved = solve_steady(grid, 1e-9, 5_000_000).unwrap();
    for i in 0..nx {
        let x = i as f64 / (nx - 1) as f64; // 0 at surface, 1 at core
        let exact = 30.0 + 7.0 * x;
        let got = solved.t[[i, solved.ny / 2]];
        assert!(
            (got - exact).abs() / exact.abs() < 1e-3,
            "linear slab node {i}: {got} vs {exact}"
        );
    }

    // Uniform metabolic source with equal Dirichlet walls: parabolic bump
    // T(x) = T_w + Q x (L - x) / (2k).
    let bc = BoundaryConditions {
        t_core: 37.0,
        surface: SurfaceBc::Dirichlet { t: 37.0 },
    };
    let q = 3000.0;
    let grid = build_grid(&[slab(q)], None, BloodParams::default(), 1e-3, 0.01, bc).unwrap();
    let (nx, l, k) = (grid.nx, 0.02, 0.5);
    let solved = solve_steady(grid, 1e-9, 5_000_000).unwrap();
    for i in 0..nx {
        let x = i as f64 * 1e-3;
        let exact = 37.0 + q * x * (l - x) / (2.0 * k);
        let got = solved.t[[i, solved.ny / 2]];
        assert!(
            (got - exact).abs() / exact.abs() < 1e-3,
            "parabolic slab node {i}: {got} vs {exact}"
        );
    }

    // Second-order convergence on a perfused slab against the analytic
    // sinh solution: halving the step shrinks the error about fourfold.
    let perfused = TissueLayer {
        name: "perfused".into(),
        thickness: 0.02,
        specific_heat: 3600.0,
        conductivity: 0.5,
        density: 1050.0,
        perfusion: 0.01,
        metabolic_q: 0.0,
    };
    let blood = BloodParams::default();
    let m2 = blood.density * blood.specific_heat * 0.01 / 0.5;
    let m = m2.sqrt();
    let exact_at = |x: f64| {
        // T(x) = 37 + (30 - 37) sinh(m (L - x)) / sinh(m L), surface at x=0.
        37.0 + (30.0 - 37.0) * (m * (0.02 - x)).sinh() / (m * 0.02).sinh()
    };
    let bc = BoundaryConditions {
        t_core: 37.0,
        surface: SurfaceBc::Dirichlet { t: 30.0 },
    };
    let mut errs = Vec::new();
    for res in [2e-3, 1e-3] {
        let grid = build_grid(&[perfused.clone()], None, blood, res, 0.01, bc).unwrap();
        let nx = grid.nx;
        let solved = solve_steady(grid, 1e-11, 20_000_000).unwrap();
        let err = (0..nx)
            .map(|i| (solved.t[[i, solved.ny / 2]] - exact_at(i as f64 * res)).abs())
            .fold(0.0f64, f64::max);
        errs.push(err);
    }
    let ratio = errs[0] / errs[1];
    assert!(
        (3.0..5.0).contains(&ratio),
        "convergence ratio {ratio:.2} not ~4 (errors {errs:?})"
    );

    // A shallow 10 mm tumor warms the skin above it; deeper placement
    // monotonically shrinks the surface differential.
    let layers = standard_layers();
    let bc = BoundaryConditions::default();
    let baseline = {
        let g = build_grid(&layers, None, BloodParams::default(), 1e-3, 0.04, bc).unwrap();
        solve_steady(g, 1e-8, 5_000_000).unwrap().surface_profile()
    };
    let mut diffs = Vec::new();
    for depth in [0.010, 0.016, 0.022, 0.028] {
        let tumor = TumorSpec::new(depth, 0.02);
        let g = build_grid(&layers, Some(&tumor), BloodParams::default(), 1e-3, 0.04, bc).unwrap();
        let profile = solve_steady(g, 1e-8, 5_000_000).unwrap().surface_profile();
        let diff = profile
            .iter()
            .zip(&baseline)
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max);
        diffs.push(diff);
    }
    assert!(diffs[0] > 0.0, "shallow tumor differential {:.4} not positive", diffs[0]);
    for w in diffs.windows(2) {
        assert!(
            w[1] < w[0],
            "surface differential not shrinking with depth: {diffs:?}"
        );
    }
    budget("a09", started, 120.0);
    println!(
        "a09_bioheat_verification: PASS (convergence ratio {ratio:.2}, shallow differential {:.3} C)",
        diffs[0]
    );
}

#[test]
fn a10_synthetic_thermal_cnn() {
    let started = Instant::now();
    let patients = thermoscan_core::bioheat::generate_synthetic_set(
        20,
        20,
        SynthRanges::default(),
        2e-3,
        (24, 24),
        99,
    )
    .unwrap();
    let records: Vec<_> = patients.into_iter().map(|p| p.record).collect();
    let (train, test) = patient_split(&records, 0.3, 99).unwrap();
    assert_eq!(train.len() + test.len(), 40);

    let prep = |records: &[thermoscan_core::thermal::PatientRecord]| {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for r in records {
            for t in &r.thermograms {
                let norm = normalize(t, NormalizeMode::PerImage).unwrap();
                let (h, w) = norm.matrix.dim();
                let img = Array3::from_shape_fn((1, h, w), |(_, i, j)| norm.matrix[[i, j]]);
                images.push(img);
                labels.push(r.label);
            }
        }
        (images, labels)
    };
    let (train_x, train_y) = prep(&train);
    let (test_x, test_y) = prep(&test);

    let spec = NetworkSpec {
        input: (1, 24, 24),
        layers: vec![
            LayerSpec::Conv2d { filters: 4, kernel: 3, activation: Activation::Relu },
            LayerSpec::MaxPool2d,
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 16, activation: Activation::Relu },
            LayerSpec::Dense { units: 1, activation: Activation::Sigmoid },
        ],
        optimizer: Optimizer::adam(1e-3),
    };
    let net = nn_train(&spec, &train_x, &train_y, 40, 8, 99).unwrap();
    let scores = net.predict_images(&test_x).unwrap();
    let correct = scores
        .iter()
        .zip(&test_y)
        .filter(|&(&s, &l)| (s >= 0.5) == (l == 1))
        .count();
    let acc = correct as f64 / test_y.len() as f64;
    assert!(acc >= 0.90, "test accuracy {acc:.3} < 0.90 ({correct}/{})", test_y.len());
    budget("a10", started, 600.0);
    println!("a10_synthetic_thermal_cnn: PASS (accuracy {acc:.3})");
}

#[test]
fn a11_doe_determinism() {
    let plan = ExperimentPlan::new("blood", 42);
    let ds = blood();
    let run = |_: u32| {
        let mut results = run_doe(&plan, &ds).unwrap();
        for r in &mut results {
            r.row.duration_ms = 0; // durations are excluded from the claim
        }
        thermoscan_core::doe::phase1_csv(&results)
    };
    let a = run(0);
    let b = run(1);
    assert_eq!(a.as_bytes(), b.as_bytes(), "repeated DOE runs differ");
    println!("a11_doe_determinism: PASS");
}
