mod fitdir;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dagdc::clustering::{cluster_fit, DEFAULT_DELTA};
use dagdc::datagen::{generate_scenario, ScenarioSpec};
use dagdc::dc_admm::{dc_admm_fit, FitStatus, Hyperparams};
use dagdc::harness::io::{read_dataset, read_json, write_dataset, write_json, Dataset};
use dagdc::harness::{
    delta_grid, grid_search, run_experiment, write_report, ExperimentConfig, GridSpec, METHOD_DC_ADMM,
};
use dagdc::metrics::{ari, homogeneity_completeness, macro_recovery, EdgeMetrics};
use dagdc::single_dag::{self, run_baseline, BaselineKind, SingleFitOptions};
use dagdc::Error;
use serde::Serialize;

use fitdir::{FitDir, FitRecord};

#[derive(Parser)]
#[command(name = "dagdc", version, about = "Joint DAG estimation and subject clustering")]
struct Cli {
    /// Seed override for data generation, fold assignment and repetitions.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a clustered dataset from a scenario JSON file.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit DAG-DC-ADMM to a dataset.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Hyperparameter JSON; flags below override its fields.
        #[arg(long)]
        hypers: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: HyperFlags,
        /// Consensus threshold for the written cluster matrices.
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
    },
    /// Fit one of the single-DAG baselines.
    Baseline {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Baseline options JSON.
        #[arg(long)]
        options: Option<PathBuf>,
        #[arg(long)]
        lambda1: Option<f64>,
    },
    /// Cross-validate a hyperparameter grid.
    Cv {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Base hyperparameters for everything the grid does not vary.
        #[arg(long)]
        hypers: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
    },
    /// Score a fit directory against the dataset's true structure.
    Evaluate {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        /// Also write the evaluation JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run repeated simulation experiments from an experiment JSON file.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        /// Use 50 repetitions.
        #[arg(long, conflicts_with = "reps")]
        full: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a fit directory over a range of thresholds.
    SweepDelta {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        from: f64,
        #[arg(long, default_value_t = 0.10)]
        to: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct HyperFlags {
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    rho2: Option<f64>,
    #[arg(long)]
    rho1_init: Option<f64>,
    #[arg(long)]
    upper_triangular: bool,
    #[arg(long)]
    max_dc_iter: Option<usize>,
    #[arg(long)]
    max_admm_iter: Option<usize>,
}

impl HyperFlags {
    fn apply(&self, h: &mut Hyperparams) {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut h.lambda1, self.lambda1);
        set(&mut h.lambda2, self.lambda2);
        set(&mut h.tau, self.tau);
        set(&mut h.rho2, self.rho2);
        set(&mut h.rho1_init, self.rho1_init);
        h.upper_triangular_mode |= self.upper_triangular;
        if let Some(v) = self.max_dc_iter {
            h.max_dc_iter = v;
        }
        if let Some(v) = self.max_admm_iter {
            h.max_admm_iter = v;
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Population,
    Individual,
    Oracle,
}

impl From<Kind> for BaselineKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Population => BaselineKind::Population,
            Kind::Individual => BaselineKind::Individual,
            Kind::Oracle => BaselineKind::Oracle,
        }
    }
}

enum Failure {
    Lib(Error),
    /// Results were written but some solve did not converge.
    NotConverged,
}

impl<E: Into<Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Lib(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NotConverged) => {
            eprintln!("warning: solver did not converge; results were written");
            ExitCode::from(4)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match &e {
                Error::InvalidInput(_) | Error::Json(_) | Error::Csv(_) => 2,
                Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                Error::Numerical(_) | Error::Io(_) => 3,
            })
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let seed = cli.seed;
    match cli.command {
        Command::Generate { config, out } => generate(&config, &out, seed),
        Command::Fit { data, hypers, out, flags, delta } => fit(&data, hypers.as_deref(), &out, &flags, delta),
        Command::Baseline { kind, data, out, options, lambda1 } => {
            baseline(kind.into(), &data, &out, options.as_deref(), lambda1)
        }
        Command::Cv { grid, data, out, hypers, delta } => cv(&grid, &data, &out, hypers.as_deref(), delta, seed),
        Command::Evaluate { fit, data, delta, out } => evaluate(&fit, &data, delta, out.as_deref()),
        Command::Bench { scenario, reps, full, out } => bench(&scenario, reps, full, &out, seed),
        Command::SweepDelta { fit, data, from, to, step, out } => {
            sweep_delta(&fit, &data, from, to, step, out.as_deref())
        }
    }
}

fn generate(config: &Path, out: &Path, seed: Option<u64>) -> CmdResult {
    let mut spec: ScenarioSpec = read_json(config)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let scenario = generate_scenario(&spec)?;
    write_dataset(out, &Dataset::from_scenario(scenario, &spec))?;
    log::info!("wrote {} subjects to {}", spec.n, out.display());
    Ok(())
}

fn load_hypers(path: Option<&Path>) -> Result<Hyperparams, Error> {
    path.map_or_else(|| Ok(Hyperparams::default()), read_json)
}

fn fit(data: &Path, hypers: Option<&Path>, out: &Path, flags: &HyperFlags, delta: f64) -> CmdResult {
    let dataset = read_dataset(data)?;
    let mut h = load_hypers(hypers)?;
    flags.apply(&mut h);
    h.validate()?;
    let result = dc_admm_fit(&dataset.subjects, &h)?;
    let clusters = cluster_fit(&result.state, h.tau, delta)?;
    log::info!(
        "{:?} after {} DC iterations, {} clusters",
        result.status,
        result.trace.outer.len().saturating_sub(1),
        clusters.n_clusters()
    );
    let converged = result.status == FitStatus::Converged;
    let dir = FitDir {
        record: FitRecord {
            method: METHOD_DC_ADMM.to_string(),
            n: dataset.manifest.n,
            d: dataset.manifest.d,
            converged,
            status: format!("{:?}", result.status),
            labels: Some(clusters.labels.clone()),
            delta: Some(delta),
            hypers: Some(h),
            baseline: None,
            theta_norms: Some(clusters.theta_norms.clone()),
            outer_trace: result.trace.outer.clone(),
        },
        w: result.state.w,
    };
    dir.write(out, &clusters.consensus, &result.trace.inner)?;
    if converged {
        Ok(())
    } else {
        Err(Failure::NotConverged)
    }
}

fn baseline(kind: BaselineKind, data: &Path, out: &Path, options: Option<&Path>, lambda1: Option<f64>) -> CmdResult {
    let dataset = read_dataset(data)?;
    let mut opts: SingleFitOptions = options.map_or_else(|| Ok(SingleFitOptions::default()), read_json)?;
    if let Some(l) = lambda1 {
        opts.lambda1 = l;
    }
    let result = run_baseline(kind, &dataset.subjects, dataset.true_labels(), &opts)?;
    let converged = result.statuses.iter().all(|s| *s == single_dag::FitStatus::Converged);
    let dir = FitDir {
        record: FitRecord {
            method: kind.name().to_string(),
            n: dataset.manifest.n,
            d: dataset.manifest.d,
            converged,
            status: format!("{:?}", result.statuses),
            labels: None,
            delta: None,
            hypers: None,
            baseline: Some(opts),
            theta_norms: None,
            outer_trace: Vec::new(),
        },
        w: result.per_subject,
    };
    dir.write(out, &[], &[])?;
    if converged {
        Ok(())
    } else {
        Err(Failure::NotConverged)
    }
}

#[derive(Serialize)]
struct CvRow {
    lambda1: f64,
    lambda2: f64,
    tau: f64,
    mean_loss: Option<f64>,
    mean_loss_truth: Option<f64>,
    converged_folds: usize,
    error: Option<String>,
}

fn cv(grid: &Path, data: &Path, out: &Path, hypers: Option<&Path>, delta: f64, seed: Option<u64>) -> CmdResult {
    let dataset = read_dataset(data)?;
    let mut spec: GridSpec = read_json(grid)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let base = load_hypers(hypers)?;
    let outcome = grid_search(&dataset.subjects, dataset.true_labels(), &spec, &base, delta)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("cv.json"), &outcome)?;
    let mut table = csv::Writer::from_path(out.join("cv_table.csv"))?;
    for c in &outcome.table {
        table
            .serialize(CvRow {
                lambda1: c.lambda1,
                lambda2: c.lambda2,
                tau: c.tau,
                mean_loss: c.mean_loss,
                mean_loss_truth: c.mean_loss_truth,
                converged_folds: c.converged_folds,
                error: c.error.clone(),
            })
            ?;
    }
    table.flush()?;
    println!(
        "best lambda1={} lambda2={} tau={} mean validation loss {:.6}",
        outcome.best.lambda1,
        outcome.best.lambda2,
        outcome.best.tau,
        outcome.best_cell.mean_loss.unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Serialize)]
struct Evaluation {
    method: String,
    delta: f64,
    n_clusters: Option<usize>,
    n_true_clusters: usize,
    ari: Option<f64>,
    homogeneity: Option<f64>,
    completeness: Option<f64>,
    skeleton: EdgeMetrics,
    dag: EdgeMetrics,
}

fn truth(dataset: &Dataset) -> Result<&[usize], Error> {
    dataset
        .true_labels()
        .ok_or_else(|| Error::InvalidInput("dataset has no true labels to evaluate against".into()))
}

fn evaluate_at(fit: &FitDir, dataset: &Dataset, delta: f64) -> Result<Evaluation, Error> {
    let true_labels = truth(dataset)?;
    if fit.record.n != true_labels.len() || fit.record.d != dataset.manifest.d {
        return Err(Error::InvalidInput("fit and dataset dimensions differ".into()));
    }
    let (skeleton, dag) = macro_recovery(&fit.scored(delta)?, &dataset.true_dags, true_labels, delta)?;
    let (ari_v, hom, comp) = match &fit.record.labels {
        Some(labels) => {
            let (h, c) = homogeneity_completeness(true_labels, labels)?;
            (Some(ari(true_labels, labels)?), Some(h), Some(c))
        }
        None => (None, None, None),
    };
    Ok(Evaluation {
        method: fit.record.method.clone(),
        delta,
        n_clusters: fit.record.labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1)),
        n_true_clusters: true_labels.iter().max().map_or(0, |m| m + 1),
        ari: ari_v,
        homogeneity: hom,
        completeness: comp,
        skeleton,
        dag,
    })
}

fn evaluate(fit: &Path, data: &Path, delta: f64, out: Option<&Path>) -> CmdResult {
    let fit = FitDir::read(fit)?;
    let dataset = read_dataset(data)?;
    let eval = evaluate_at(&fit, &dataset, delta)?;
    if let Some(path) = out {
        write_json(path, &eval)?;
    }
    println!("{}", serde_json::to_string_pretty(&eval)?);
    Ok(())
}

fn bench(scenario: &Path, reps: Option<usize>, full: bool, out: &Path, seed: Option<u64>) -> CmdResult {
    let mut config: ExperimentConfig = read_json(scenario)?;
    if let Some(r) = reps {
        config.reps = r;
    }
    if full {
        config.reps = 50;
    }
    if let Some(s) = seed {
        config.scenario.seed = s;
        config.grid.seed = s;
    }
    let report = run_experiment(&config)?;
    write_report(out, &report)?;
    let s = &report.summary;
    println!(
        "{} reps ok, {} failed; ARI {:.3} ± {:.3}, homogeneity {:.3}, completeness {:.3}",
        s.reps_ok, s.reps_failed, s.ari.mean, s.ari.ci, s.homogeneity.mean, s.completeness.mean
    );
    for m in &s.methods {
        println!(
            "{:<12} DAG TPR {:.3} FDR {:.3} | skeleton TPR {:.3} FDR {:.3}",
            m.method, m.dag.tpr.mean, m.dag.fdr.mean, m.skeleton.tpr.mean, m.skeleton.fdr.mean
        );
    }
    if s.reps_failed > 0 {
        return Err(Error::Numerical(format!("{} repetitions failed", s.reps_failed)).into());
    }
    if report.ok_metrics().any(|m| m.fit_status != FitStatus::Converged) {
        return Err(Failure::NotConverged);
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepCsvRow {
    method: String,
    delta: f64,
    skeleton_tpr: f64,
    skeleton_fdr: f64,
    skeleton_tnr: f64,
    dag_tpr: f64,
    dag_fdr: f64,
    dag_tnr: f64,
}

fn sweep_delta(fit: &Path, data: &Path, from: f64, to: f64, step: f64, out: Option<&Path>) -> CmdResult {
    let deltas = delta_grid(from, to, step)?;
    let fit = FitDir::read(fit)?;
    let dataset = read_dataset(data)?;
    let sink: Box<dyn std::io::Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for delta in deltas {
        let e = evaluate_at(&fit, &dataset, delta)?;
        w.serialize(SweepCsvRow {
            method: e.method,
            delta,
            skeleton_tpr: e.skeleton.tpr,
            skeleton_fdr: e.skeleton.fdr,
            skeleton_tnr: e.skeleton.tnr,
            dag_tpr: e.dag.tpr,
            dag_fdr: e.dag.fdr,
            dag_tnr: e.dag.tnr,
        })
        ?;
    }
    w.flush()?;
    Ok(())
}
