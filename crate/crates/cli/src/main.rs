use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use sasgen_core::pipeline::{
    run_experiment, ExperimentConfig, Observer, OuterRecord, PipelineError,
};
use sasgen_core::qd::GridArchive;
use sasgen_core::report::{
    archive_csv, heatmap_ppm, heatmap_sidecar, metrics_csv, parse_archive_csv, summary_table,
    RunOutcome,
};
use sasgen_core::surrogate::Surrogate;
use sasgen_core::Domain;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const WORKERS_ENV: &str = "SASGEN_WORKERS";
const MANIFEST: &str = "manifest.json";
const FINAL_ARCHIVE_JSON: &str = "archive_final.json";
const DATASET_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "sasgen",
    version,
    about = "Surrogate-assisted scenario generation for HRI"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts to a directory.
    Run {
        config: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write a model checkpoint and archive snapshot every N outer iterations (0 disables).
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
    },
    /// Render an archive CSV as a PPM heatmap with a text sidecar.
    Heatmap {
        csv: PathBuf,
        image: PathBuf,
        /// Defaults to the domain in a manifest next to the CSV.
        #[arg(long)]
        domain: Option<Domain>,
        /// Upper end of the color scale; defaults to the domain's objective cap.
        #[arg(long)]
        cap: Option<f64>,
    },
    /// Print mean ± standard error of final QD-score and cells per algorithm.
    Summarize {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Re-simulate the final-archive elite in a cell and write its per-tick trace.
    Replay {
        run: PathBuf,
        /// Cell coordinates `i,j`.
        #[arg(long)]
        cell: String,
        /// Defaults to `replay_<i>_<j>.jsonl` in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    /// Bad input: config, arguments, missing or malformed files.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn input<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Input(format!("{context}: {e}"))
}

fn runtime<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

#[derive(Serialize, Deserialize)]
struct RunManifest {
    version: String,
    config: ExperimentConfig,
    seed: u64,
    workers: usize,
    started_unix: u64,
    finished_unix: u64,
    evaluations: usize,
    failed_evaluations: usize,
    qd_score: f64,
    cells: usize,
    /// Paths relative to the run directory.
    artifacts: Vec<String>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn workers() -> Result<usize, CliError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Input(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Writes files under the run directory and records them for the manifest.
struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(runtime(parent.display()))?;
        }
        fs::write(&path, bytes).map_err(runtime(path.display()))?;
        if !self.written.iter().any(|w| w == rel) {
            self.written.push(rel.to_string());
        }
        Ok(())
    }

    fn heatmap(
        &mut self,
        stem: &str,
        archive: &GridArchive,
        domain: Domain,
        cap: f64,
    ) -> Result<(), CliError> {
        let csv = archive_csv(archive, domain.param_count());
        let (_, rows) = parse_archive_csv(&csv).map_err(runtime("archive export"))?;
        let ppm = heatmap_ppm(archive.spec(), &rows, cap).map_err(runtime("heatmap"))?;
        self.write(&format!("{stem}.ppm"), &ppm)?;
        let side = heatmap_sidecar(domain, archive.spec(), rows.len(), cap);
        self.write(&format!("{stem}.txt"), side.as_bytes())
    }
}

struct Checkpointer<'a> {
    artifacts: &'a mut Artifacts,
    every: usize,
}

impl Observer for Checkpointer<'_> {
    fn outer_iteration(
        &mut self,
        record: &OuterRecord,
        model: &Surrogate,
    ) -> Result<(), PipelineError> {
        if self.every == 0 || (record.iteration + 1) % self.every != 0 {
            return Ok(());
        }
        let err = |e: CliError| PipelineError::Observer(e.to_string());
        let text = model.to_checkpoint()?;
        let rel = format!("checkpoints/model_{:04}.json", record.iteration);
        self.artifacts.write(&rel, text.as_bytes()).map_err(err)
    }
}

fn cmd_run(config: &Path, out: &Path, seed: Option<u64>, every: usize) -> Result<(), CliError> {
    let text = fs::read_to_string(config).map_err(input(config.display()))?;
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(input(config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.validate().map_err(input("--seed"))?;
    }
    let workers = workers()?;
    fs::create_dir_all(out).map_err(runtime(out.display()))?;
    let started = unix_now();
    let mut artifacts = Artifacts {
        dir: out.to_path_buf(),
        written: Vec::new(),
    };
    artifacts.write("config.toml", cfg.to_toml().as_bytes())?;
    let mut observer = Checkpointer {
        artifacts: &mut artifacts,
        every,
    };
    let result = run_experiment(&cfg, workers, &mut observer).map_err(|e| match e {
        PipelineError::Config(_) => CliError::Input(e.to_string()),
        e => CliError::Runtime(e.to_string()),
    })?;

    let domain = cfg.domain;
    let n = domain.param_count();
    let cap = domain.objective_range(&cfg.sim).1;
    artifacts.write("metrics.csv", metrics_csv(&result.metrics).as_bytes())?;
    artifacts.write(
        "archive_final.csv",
        archive_csv(&result.final_archive, n).as_bytes(),
    )?;
    artifacts.write(
        "archive_training.csv",
        archive_csv(&result.training_archive, n).as_bytes(),
    )?;
    let full = serde_json::to_string(&result.final_archive).map_err(runtime("archive"))?;
    artifacts.write(FINAL_ARCHIVE_JSON, full.as_bytes())?;
    artifacts.heatmap("heatmap_final", &result.final_archive, domain, cap)?;

    let mut evals = String::new();
    for e in &result.evaluations {
        evals += &serde_json::to_string(e).map_err(runtime("evaluations"))?;
        evals.push('\n');
    }
    artifacts.write("evaluations.jsonl", evals.as_bytes())?;
    let mut dataset =
        serde_json::json!({"schema": "sasgen-dataset", "version": DATASET_VERSION}).to_string();
    dataset.push('\n');
    for s in &result.dataset {
        dataset += &serde_json::to_string(s).map_err(runtime("dataset"))?;
        dataset.push('\n');
    }
    artifacts.write("dataset.jsonl", dataset.as_bytes())?;
    if let Some(model) = &result.model {
        let text = model.to_checkpoint().map_err(runtime("model"))?;
        artifacts.write("model_final.json", text.as_bytes())?;
        let mut outer = String::new();
        for o in &result.outer {
            outer += &serde_json::to_string(o).map_err(runtime("outer records"))?;
            outer.push('\n');
        }
        artifacts.write("outer.jsonl", outer.as_bytes())?;
    }

    let failed = result
        .evaluations
        .iter()
        .filter(|e| e.outcome.is_err())
        .count();
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg,
        workers,
        started_unix: started,
        finished_unix: unix_now(),
        evaluations: result.evaluations.len(),
        failed_evaluations: failed,
        qd_score: result.qd_score(),
        cells: result.final_archive.len(),
        artifacts: Vec::new(),
    };
    manifest.artifacts = artifacts.written.clone();
    manifest.artifacts.push(MANIFEST.to_string());
    let text = serde_json::to_string_pretty(&manifest).map_err(runtime("manifest"))?;
    artifacts.write(MANIFEST, text.as_bytes())?;
    println!(
        "{} {} seed {}: {} evaluations, QD-score {:.3}, {} cells -> {}",
        manifest.config.algorithm,
        domain,
        manifest.seed,
        manifest.evaluations,
        manifest.qd_score,
        manifest.cells,
        out.display()
    );
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(input(path.display()))?;
    serde_json::from_str(&text).map_err(input(path.display()))
}

fn cmd_heatmap(
    csv: &Path,
    image: &Path,
    domain: Option<Domain>,
    cap: Option<f64>,
) -> Result<(), CliError> {
    let text = fs::read_to_string(csv).map_err(input(csv.display()))?;
    let (params, rows) = parse_archive_csv(&text).map_err(input(csv.display()))?;
    let manifest = csv.parent().and_then(|d| read_manifest(d).ok());
    let domain = domain
        .or_else(|| manifest.as_ref().map(|m| m.config.domain))
        .ok_or_else(|| {
            CliError::Input("no --domain given and no run manifest next to the CSV".into())
        })?;
    if params != domain.param_count() {
        return Err(CliError::Input(format!(
            "{}: {params} parameters, {domain} expects {}",
            csv.display(),
            domain.param_count()
        )));
    }
    let cap = match cap {
        Some(c) if c.is_finite() && c > 0.0 => c,
        Some(c) => return Err(CliError::Input(format!("--cap must be positive, got {c}"))),
        None => {
            let sim = manifest.map(|m| m.config.sim).unwrap_or_default();
            domain.objective_range(&sim).1
        }
    };
    let spec = domain.archive_spec();
    let ppm = heatmap_ppm(&spec, &rows, cap).map_err(input(csv.display()))?;
    fs::write(image, ppm).map_err(runtime(image.display()))?;
    let side = image.with_extension("txt");
    fs::write(&side, heatmap_sidecar(domain, &spec, rows.len(), cap))
        .map_err(runtime(side.display()))?;
    Ok(())
}

fn cmd_summarize(runs: &[PathBuf]) -> Result<(), CliError> {
    let outcomes = runs
        .iter()
        .map(|dir| {
            let m = read_manifest(dir)?;
            Ok(RunOutcome {
                domain: m.config.domain,
                algorithm: m.config.algorithm.to_string(),
                qd_score: m.qd_score,
                cells: m.cells,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let table = summary_table(&outcomes).map_err(|e| CliError::Input(e.to_string()))?;
    print!("{table}");
    Ok(())
}

fn parse_cell(s: &str) -> Result<[usize; 2], CliError> {
    let bad = || CliError::Input(format!("--cell expects `i,j`, got `{s}`"));
    let (i, j) = s.split_once(',').ok_or_else(bad)?;
    Ok([
        i.trim().parse().map_err(|_| bad())?,
        j.trim().parse().map_err(|_| bad())?,
    ])
}

fn cmd_replay(run: &Path, cell: &str, out: Option<PathBuf>) -> Result<(), CliError> {
    let [i, j] = parse_cell(cell)?;
    let manifest = read_manifest(run)?;
    let path = run.join(FINAL_ARCHIVE_JSON);
    let text = fs::read_to_string(&path).map_err(input(path.display()))?;
    let archive: GridArchive = serde_json::from_str(&text).map_err(input(path.display()))?;
    let axes = &archive.spec().axes;
    if i >= axes[0].bins || j >= axes[1].bins {
        return Err(CliError::Input(format!(
            "cell ({i}, {j}) outside the {}x{} archive",
            axes[0].bins, axes[1].bins
        )));
    }
    let elite = archive
        .get(archive.spec().flatten(&[i, j]))
        .ok_or_else(|| CliError::Input(format!("cell ({i}, {j}) is empty")))?;
    let seed = elite
        .meta
        .seed
        .ok_or_else(|| CliError::Input(format!("cell ({i}, {j}) has no stored seed")))?;
    let cfg = &manifest.config;
    let mut trace = Vec::new();
    let eval = cfg
        .domain
        .simulate(&elite.theta, &cfg.sim, seed, Some(&mut trace))
        .map_err(runtime("replay"))?;
    let out = out.unwrap_or_else(|| run.join(format!("replay_{i}_{j}.jsonl")));
    let file = fs::File::create(&out).map_err(runtime(out.display()))?;
    let mut w = std::io::BufWriter::new(file);
    for t in &trace {
        serde_json::to_writer(&mut w, t).map_err(runtime(out.display()))?;
        w.write_all(b"\n").map_err(runtime(out.display()))?;
    }
    w.flush().map_err(runtime(out.display()))?;
    println!(
        "cell ({i}, {j}) seed {seed}: replayed objective {:.9}, stored {:.9}, {} ticks -> {}",
        eval.objective,
        elite.objective,
        trace.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            checkpoint_every,
        } => cmd_run(&config, &out, seed, checkpoint_every),
        Command::Heatmap {
            csv,
            image,
            domain,
            cap,
        } => cmd_heatmap(&csv, &image, domain, cap),
        Command::Summarize { runs } => cmd_summarize(&runs),
        Command::Replay { run, cell, out } => cmd_replay(&run, &cell, out),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
