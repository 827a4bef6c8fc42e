//! Command-line entry point for the experiment toolkit.
//!
//! Exit codes: 0 success, 1 runtime failure or any failed DOE cell,
//! 2 configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use thermoscan_core::bioheat::{generate_synthetic_set, write_synthetic_set, SynthRanges};
use thermoscan_core::config::{parse_config, DatasetKind, RunConfig};
use thermoscan_core::dataset::{save_csv, train_test_split};
use thermoscan_core::doe::{
    parse_phase1_csv, run_doe, run_hpo_phase, write_curves, write_phase1_csv,
    write_phase2_csv, CellResult, ExperimentPlan, LearnerSpec,
};
use thermoscan_core::eda::{pca_2d, pearson_matrix};
use thermoscan_core::error::Error;
use thermoscan_core::evaluation::{roc_auc, threshold_sweep};
use thermoscan_core::tabular::{apply_recipe, LeakageMode};
use thermoscan_core::thermal::load_directory;
use thermoscan_core::Model;

#[derive(Parser)]
#[command(
    name = "thermoscan",
    about = "Breast-cancer screening experiment toolkit",
    version
)]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for DOE cells (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Skip steps whose output files already exist.
    #[arg(long, global = true)]
    resume: bool,
    /// Emit both leakage modes side by side.
    #[arg(long = "both-modes", global = true)]
    both_modes: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the configured dataset, report summary statistics, and write a
    /// cleaned CSV copy.
    Ingest,
    /// Generate a synthetic thermogram set with the bioheat solver.
    Simulate {
        #[arg(long)]
        healthy: Option<usize>,
        #[arg(long)]
        tumor: Option<usize>,
    },
    /// Apply the configured transform recipe and write the engineered
    /// train/test CSVs.
    Engineer,
    /// Export Pearson correlations and a 2D PCA projection.
    Eda,
    /// Phase 1: the full recipe-grid x learner-roster experiment.
    Doe,
    /// Phase 2: hyper-parameter optimization of the GBT families.
    Optimize {
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Evaluate a saved (or freshly trained) model on the held-out split.
    Evaluate {
        /// Saved model JSON; the first roster family is trained when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Merge run CSVs into a short plain-text summary.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let mut config = match &cli.config {
        Some(path) => match parse_config(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("config error: {e}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = Some(jobs);
    }
    if cli.both_modes {
        config.both_modes = true;
    }
    if let Some(jobs) = config.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("warning: could not set worker count: {e}");
        }
    }

    match run(&cli, &config) {
        Ok(code) => code,
        Err(Error::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run_dir(config: &RunConfig) -> PathBuf {
    let kind = match config.dataset {
        DatasetKind::Blood => "blood",
        DatasetKind::Eit => "eit",
        DatasetKind::Thermal => "thermal",
        DatasetKind::Synthetic => "synthetic",
    };
    config.out_dir.join(format!("{kind}_seed{}", config.seed))
}

fn run(cli: &Cli, config: &RunConfig) -> Result<ExitCode, Error> {
    let dir = run_dir(config);
    match &cli.command {
        Command::Ingest => ingest(config, &dir),
        Command::Simulate { healthy, tumor } => simulate(config, &dir, *healthy, *tumor),
        Command::Engineer => engineer(config, &dir),
        Command::Eda => eda(config, &dir),
        Command::Doe => doe(cli, config, &dir),
        Command::Optimize { iters } => optimize(cli, config, &dir, *iters),
        Command::Evaluate { model } => evaluate(config, &dir, model.as_deref()),
        Command::Report => report(&dir),
    }
}

fn ingest(config: &RunConfig, dir: &Path) -> Result<ExitCode, Error> {
    match config.dataset {
        DatasetKind::Blood | DatasetKind::Eit => {
            let ds = config.load_tabular()?;
            config.echo(dir)?;
            println!(
                "loaded {} rows x {} features from {}",
                ds.n(),
                ds.d(),
                config.csv_path().display()
            );
            for (name, count) in ds.label_names.iter().zip(ds.class_counts()) {
                println!("  class {name}: {count}");
            }
            let out = dir.join("ingested.csv");
            save_csv(&ds, &out)?;
            println!("wrote {}", out.display());
        }
        DatasetKind::Thermal | DatasetKind::Synthetic => {
            let records = load_directory(&config.data_root()?)?;
            config.echo(dir)?;
            let sick = records.iter().filter(|r| r.label == 1).count();
            println!(
                "loaded {} patients ({} healthy, {} sick)",
                records.len(),
                records.len() - sick,
                sick
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn simulate(
    config: &RunConfig,
    dir: &Path,
    healthy: Option<usize>,
    tumor: Option<usize>,
) -> Result<ExitCode, Error> {
    let n_healthy = healthy.unwrap_or(config.simulate.healthy);
    let n_tumor = tumor.unwrap_or(config.simulate.tumor);
    if n_healthy == 0 || n_tumor == 0 {
        return Err(Error::Config("need at least one patient per class".into()));
    }
    let root = match &config.data_dir {
        Some(p) => p.clone(),
        None => dir.join("synthetic"),
    };
    let patients = generate_synthetic_set(
        n_healthy,
        n_tumor,
        SynthRanges::default(),
        config.simulate.resolution,
        (config.simulate.out_height, config.simulate.out_width),
        config.seed,
    )?;
    write_synthetic_set(&patients, &root)?;
    config.echo(dir)?;
    println!(
        "wrote {} synthetic patients under {}",
        patients.len(),
        root.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn engineer(config: &RunConfig, dir: &Path) -> Result<ExitCode, Error> {
    let ds = config.load_tabular()?;
    let (train, test) = train_test_split(&ds, config.test_fraction, config.seed, true)?;
    let (train, test) = apply_recipe(&train, &test, &config.recipe, config.seed)?;
    config.echo(dir)?;
    let train_path = dir.join("train_engineered.csv");
    let test_path = dir.join("test_engineered.csv");
    save_csv(&train, &train_path)?;
    save_csv(&test, &test_path)?;
    println!(
        "recipe {}: train {} x {}, test {} x {}",
        config.recipe.label(),
        train.n(),
        train.d(),
        test.n(),
        test.d()
    );
    Ok(ExitCode::SUCCESS)
}

fn eda(config: &RunConfig, dir: &Path) -> Result<ExitCode, Error> {
    let ds = config.load_tabular()?;
    config.echo(dir)?;
    let corr = pearson_matrix(&ds, true)?;
    let corr_path = dir.join("correlation.csv");
    std::fs::write(&corr_path, corr.to_csv()).map_err(|e| Error::io(&corr_path, e))?;
    let proj = pca_2d(&ds)?;
    let pca_path = dir.join("pca.csv");
    std::fs::write(&pca_path, proj.to_csv(&ds.labels)).map_err(|e| Error::io(&pca_path, e))?;
    println!(
        "explained variance: pc1 {:.4}, pc2 {:.4}",
        proj.explained[0], proj.explained[1]
    );
    println!("wrote {} and {}", corr_path.display(), pca_path.display());
    Ok(ExitCode::SUCCESS)
}

fn plan_from(config: &RunConfig, mode: LeakageMode) -> Result<ExperimentPlan, Error> {
    let mut plan = ExperimentPlan::new(
        match config.dataset {
            DatasetKind::Blood => "blood",
            DatasetKind::Eit => "eit",
            _ => "tabular",
        },
        config.seed,
    );
    if let Some(grid) = &config.grid {
        plan.grid = grid.clone();
    }
    for recipe in &mut plan.grid {
        recipe.leakage_mode = mode;
    }
    plan.roster = config
        .roster_families()?
        .into_iter()
        .map(|family| LearnerSpec {
            family,
            params: Default::default(),
        })
        .collect();
    plan.test_fraction = config.test_fraction;
    plan.metric = config.metric;
    Ok(plan)
}

fn doe(cli: &Cli, config: &RunConfig, dir: &Path) -> Result<ExitCode, Error> {
    let phase1 = dir.join("phase1.csv");
    if cli.resume && phase1.exists() {
        println!("resume: {} already exists, skipping", phase1.display());
        return Ok(ExitCode::SUCCESS);
    }
    let ds = config.load_tabular()?;
    config.echo(dir)?;

    let mut modes = vec![config.leakage_mode];
    if config.both_modes {
        modes = vec![LeakageMode::LeakFree, LeakageMode::PaperFaithful];
    }
    let mut all: Vec<CellResult> = Vec::new();
    for mode in modes {
        let plan = plan_from(config, mode)?;
        let mut results = run_doe(&plan, &ds)?;
        if config.both_modes && mode == LeakageMode::PaperFaithful {
            for r in &mut results {
                r.row.recipe = format!("{}:pf", r.row.recipe);
            }
        }
        all.extend(results);
    }
    write_phase1_csv(&all, &phase1)?;
    write_curves(&all, &dir.join("curves"))?;
    let failed = all.iter().filter(|r| r.row.status == "failed").count();
    println!(
        "wrote {} ({} rows, {} failed)",
        phase1.display(),
        all.len(),
        failed
    );
    if failed > 0 {
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn optimize(
    cli: &Cli,
    config: &RunConfig,
    dir: &Path,
    iters: Option<usize>,
) -> Result<ExitCode, Error> {
    let n_iters = iters.unwrap_or(config.hpo.iters);
    if n_iters == 0 {
        return Err(Error::Config("HPO budget must be >= 1".into()));
    }
    let phase2 = dir.join("phase2.csv");
    if cli.resume && phase2.exists() {
        println!("resume: {} already exists, skipping", phase2.display());
        return Ok(ExitCode::SUCCESS);
    }
    let ds = config.load_tabular()?;
    config.echo(dir)?;
    let rows = run_hpo_phase(
        &ds,
        &config.recipe,
        &config.hpo_families()?,
        n_iters,
        config.hpo.algo,
        config.test_fraction,
        config.metric,
        config.seed,
    )?;
    write_phase2_csv(&rows, &phase2)?;
    for r in &rows {
        println!(
            "{}: phase1 f1 {} -> phase2 f1 {} (cv loss {:.4})",
            r.phase1.model,
            r.phase1
                .metrics
                .f1
                .map_or("n/a".into(), |v| format!("{v:.4}")),
            r.phase2
                .metrics
                .f1
                .map_or("n/a".into(), |v| format!("{v:.4}")),
            r.best_cv_loss
        );
    }
    println!("wrote {}", phase2.display());
    Ok(ExitCode::SUCCESS)
}

fn evaluate(config: &RunConfig, dir: &Path, model: Option<&Path>) -> Result<ExitCode, Error> {
    let ds = config.load_tabular()?;
    let (train, test) = train_test_split(&ds, config.test_fraction, config.seed, true)?;
    let (train, test) = apply_recipe(&train, &test, &config.recipe, config.seed)?;
    let model = match model {
        Some(path) => Model::load_json(path)?,
        None => {
            let family = *config
                .roster_families()?
                .first()
                .ok_or_else(|| Error::Config("empty roster".into()))?;
            family.train(&train, &Default::default(), config.seed)?
        }
    };
    config.echo(dir)?;
    let scores = model.predict_scores(&test)?;
    let sweep = threshold_sweep(&scores, &test.labels, config.metric)?;
    let auc = roc_auc(&scores, &test.labels).ok();
    let m = &sweep.selected.metrics;
    let show = |v: Option<f64>| v.map_or("n/a".into(), |x| format!("{x:.4}"));
    println!("model: {}", model.family_name());
    println!("threshold: {:.2}", sweep.selected.threshold);
    println!("accuracy:  {}", show(m.accuracy));
    println!("precision: {}", show(m.precision));
    println!("recall:    {}", show(m.sensitivity));
    println!("f1:        {}", show(m.f1));
    println!("roc auc:   {}", show(auc));
    Ok(ExitCode::SUCCESS)
}

fn report(dir: &Path) -> Result<ExitCode, Error> {
    let phase1_path = dir.join("phase1.csv");
    if !phase1_path.exists() {
        return Err(Error::Config(format!(
            "nothing to report: {} not found (run `doe` first)",
            phase1_path.display()
        )));
    }
    let text =
        std::fs::read_to_string(&phase1_path).map_err(|e| Error::io(&phase1_path, e))?;
    let rows = parse_phase1_csv(&text)?;
    let mut out = String::from("# Run summary\n\n");
    out.push_str(&format!("Phase-1 rows: {}\n", rows.len()));
    let failed = rows.iter().filter(|r| r.status == "failed").count();
    out.push_str(&format!("Failed rows: {failed}\n\n"));
    let mut best: Option<&thermoscan_core::doe::ResultRow> = None;
    for r in &rows {
        if r.status != "ok" {
            continue;
        }
        if best.map_or(true, |b| {
            r.metrics.f1.unwrap_or(0.0) > b.metrics.f1.unwrap_or(0.0)
        }) {
            best = Some(r);
        }
    }
    if let Some(b) = best {
        out.push_str(&format!(
            "Best F1: {:.4} ({} on {})\n",
            b.metrics.f1.unwrap_or(0.0),
            b.model,
            b.recipe
        ));
    }
    let phase2_path = dir.join("phase2.csv");
    if phase2_path.exists() {
        let phase2 =
            std::fs::read_to_string(&phase2_path).map_err(|e| Error::io(&phase2_path, e))?;
        out.push_str("\n## Phase 2\n\n");
        out.push_str(&phase2);
    }
    let summary = dir.join("summary.md");
    std::fs::write(&summary, &out).map_err(|e| Error::io(&summary, e))?;
    print!("{out}");
    println!("wrote {}", summary.display());
    Ok(ExitCode::SUCCESS)
}
