//! Experiment orchestration: the surrogate-assisted outer/inner loop and the
//! ground-truth baselines, sharing one evaluation budget and bookkeeping.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{derive_seed, Domain, DomainError, Evaluation};
use crate::qd::{
    CmaMaeArchive, CmaMaeEmitter, CmaMaegaEmitter, Elite, EliteMeta, GaussianEmitter, GridArchive,
    QdError,
};
use crate::repair::{regularize, DEFAULT_REG_WEIGHT};
use crate::sim::SimConfig;
use crate::surrogate::{
    metrics_from_predictions, ModelMetrics, Surrogate, SurrogateError, TrainConfig, TrainingSample,
};

// Seed streams derived from the master seed.
const STREAM_SEARCH: u64 = 10;
const STREAM_MODEL: u64 = 11;
const STREAM_EVAL: u64 = 12;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Qd(#[from] QdError),
    #[error("observer: {0}")]
    Observer(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Dsas,
    Sas,
    CmaMae,
    MapElites,
    Random,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Dsas,
        Algorithm::Sas,
        Algorithm::CmaMae,
        Algorithm::MapElites,
        Algorithm::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dsas => "dsas",
            Algorithm::Sas => "sas",
            Algorithm::CmaMae => "cma-mae",
            Algorithm::MapElites => "map-elites",
            Algorithm::Random => "random",
        }
    }

    pub fn uses_surrogate(self) -> bool {
        matches!(self, Algorithm::Dsas | Algorithm::Sas)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

/// Search hyperparameters. Unset emitter scales fall back to the domain presets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Inner-loop iterations per outer iteration.
    pub exploit_iterations: usize,
    /// Emitter batch size: gradient branches or CMA-ES population.
    pub batch: usize,
    /// Surrogate-archive elites labeled per outer iteration.
    pub select: usize,
    /// Objective discount per meter of repair displacement.
    pub reg_weight: f64,
    pub alpha: f64,
    pub min_f: f64,
    /// Initial step size of the ground-truth CMA-MAE baseline, in parameter
    /// units. Defaults to the domain preset.
    pub sigma0: Option<f64>,
    /// Initial step size of the surrogate inner loop, in unit-box coordinates.
    pub surrogate_sigma0: f64,
    pub mutation_sigma: Option<Vec<f64>>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            exploit_iterations: 100,
            batch: 36,
            select: 100,
            reg_weight: DEFAULT_REG_WEIGHT,
            alpha: 0.1,
            min_f: 0.0,
            sigma0: None,
            surrogate_sigma0: 0.5,
            mutation_sigma: None,
        }
    }
}

fn default_budget() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: Domain,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
    /// Ground-truth evaluations.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

impl ExperimentConfig {
    pub fn new(domain: Domain, algorithm: Algorithm) -> Self {
        Self {
            domain,
            algorithm,
            seed: 0,
            budget: default_budget(),
            search: SearchConfig::default(),
            train: TrainConfig::default(),
            sim: SimConfig::default(),
        }
    }

    /// Parses and validates a TOML config. Sections or dotted keys both work.
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let config: Self =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Fully resolved config, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let s = &self.search;
        if self.budget == 0 {
            return bad("budget must be positive".into());
        }
        // TOML integers are signed.
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed must be at most {}", i64::MAX));
        }
        if s.batch < 2 {
            return bad(format!("search.batch must be at least 2, got {}", s.batch));
        }
        if s.select == 0 {
            return bad("search.select must be positive".into());
        }
        if !(s.reg_weight.is_finite() && s.reg_weight >= 0.0) {
            return bad(format!(
                "search.reg_weight must be nonnegative, got {}",
                s.reg_weight
            ));
        }
        if !(0.0..=1.0).contains(&s.alpha) {
            return bad(format!("search.alpha must lie in [0, 1], got {}", s.alpha));
        }
        if !s.min_f.is_finite() {
            return bad("search.min_f must be finite".into());
        }
        for (name, v) in [
            ("sigma0", s.sigma0.unwrap_or(1.0)),
            ("surrogate_sigma0", s.surrogate_sigma0),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("search.{name} must be positive, got {v}"));
            }
        }
        if let Some(v) = &s.mutation_sigma {
            if v.len() != self.domain.param_count() {
                return bad(format!(
                    "search.mutation_sigma needs {} entries for {}, got {}",
                    self.domain.param_count(),
                    self.domain,
                    v.len()
                ));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return bad("search.mutation_sigma entries must be nonnegative".into());
            }
        }
        let t = &self.train;
        if t.batch == 0 || !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return bad("train.batch and train.learning_rate must be positive".into());
        }
        self.sim
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    fn sigma0(&self) -> f64 {
        self.search.sigma0.unwrap_or(self.domain.sigma0())
    }

    fn mutation_sigma(&self) -> Vec<f64> {
        self.search
            .mutation_sigma
            .clone()
            .unwrap_or_else(|| self.domain.mutation_sigma())
    }
}

/// One ground-truth evaluation, successful or not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub index: u64,
    pub seed: u64,
    /// Parameters as proposed by the search, before repair.
    pub proposed: Vec<f64>,
    pub outcome: Result<EvalSummary, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub theta: Vec<f64>,
    pub displacement: f64,
    pub objective: f64,
    pub training_objective: f64,
    pub measures: Vec<f64>,
}

/// Progress after a labeling step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub evals: usize,
    pub elapsed_s: f64,
    pub qd_score: f64,
    pub cells: usize,
    pub best_objective: f64,
}

/// Bookkeeping of one surrogate outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    pub surrogate_cells: usize,
    pub labeled: usize,
    pub evals: usize,
    /// Prediction quality on the freshly labeled batch, before training on it.
    pub batch_metrics: Option<ModelMetrics>,
    pub occupancy_loss: f64,
    pub downstream_loss: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: ExperimentConfig,
    /// Raw objectives; reported QD-score.
    pub final_archive: GridArchive,
    /// Regularized objectives; flat view for soft archives.
    pub training_archive: GridArchive,
    pub dataset: Vec<TrainingSample>,
    pub evaluations: Vec<EvalRecord>,
    pub metrics: Vec<MetricsRow>,
    pub outer: Vec<OuterRecord>,
    pub model: Option<Surrogate>,
}

impl RunResult {
    pub fn qd_score(&self) -> f64 {
        self.final_archive.qd_score()
    }
}

/// Hooks for streaming artifacts while a run progresses.
pub trait Observer {
    fn labeled(&mut self, _row: &MetricsRow) {}

    fn outer_iteration(
        &mut self,
        _record: &OuterRecord,
        _model: &Surrogate,
    ) -> Result<(), PipelineError> {
        Ok(())
    }
}

pub struct NoObserver;

impl Observer for NoObserver {}

enum TrainingArchive {
    Flat(GridArchive),
    Soft(CmaMaeArchive),
}

impl TrainingArchive {
    /// Offers `elite`; returns the archive improvement for soft archives.
    fn add(&mut self, elite: Elite) -> Result<f64, QdError> {
        match self {
            TrainingArchive::Flat(a) => {
                a.add(elite)?;
                Ok(0.0)
            }
            TrainingArchive::Soft(a) => Ok(a.add(elite)?.improvement),
        }
    }

    fn flat(&self) -> &GridArchive {
        match self {
            TrainingArchive::Flat(a) => a,
            TrainingArchive::Soft(a) => a.result(),
        }
    }
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    pool: rayon::ThreadPool,
    start: Instant,
    final_archive: GridArchive,
    training: TrainingArchive,
    dataset: Vec<TrainingSample>,
    evaluations: Vec<EvalRecord>,
    metrics: Vec<MetricsRow>,
    observer: &'a mut dyn Observer,
}

impl Run<'_> {
    fn remaining(&self) -> usize {
        self.cfg.budget - self.evaluations.len()
    }

    /// Repairs, simulates and records `thetas` (truncated to the remaining
    /// budget). Returns the training-archive improvement of each evaluated
    /// candidate; failed simulations score −∞.
    fn label(&mut self, thetas: &[Vec<f64>]) -> Result<Vec<f64>, PipelineError> {
        let n = thetas.len().min(self.remaining());
        let first = self.evaluations.len() as u64;
        let (domain, sim, master) = (self.cfg.domain, &self.cfg.sim, self.cfg.seed);
        let results: Vec<(u64, Result<Evaluation, DomainError>)> = self.pool.install(|| {
            thetas[..n]
                .par_iter()
                .enumerate()
                .map(|(i, theta)| {
                    let seed = derive_seed(master, STREAM_EVAL, first + i as u64);
                    (seed, domain.evaluate(theta, sim, seed))
                })
                .collect()
        });
        let mut improvements = Vec::with_capacity(n);
        for (i, (seed, res)) in results.into_iter().enumerate() {
            let index = first + i as u64;
            let outcome = match res {
                Ok(ev) => {
                    let f_train =
                        regularize(ev.objective, ev.displacement, self.cfg.search.reg_weight);
                    let meta = EliteMeta {
                        eval_index: Some(index),
                        seed: Some(seed),
                        displacement: ev.displacement,
                    };
                    let elite = |objective| Elite {
                        theta: ev.theta.clone(),
                        objective,
                        measures: ev.measures.clone(),
                        meta: meta.clone(),
                    };
                    self.final_archive.add(elite(ev.objective))?;
                    improvements.push(self.training.add(elite(f_train))?);
                    let summary = EvalSummary {
                        theta: ev.theta.clone(),
                        displacement: ev.displacement,
                        objective: ev.objective,
                        training_objective: f_train,
                        measures: ev.measures.clone(),
                    };
                    self.dataset.push(TrainingSample {
                        theta: ev.theta,
                        objective: ev.objective,
                        measures: ev.measures,
                        robot_grid: ev.robot_grid,
                        human_grid: ev.human_grid,
                    });
                    Ok(summary)
                }
                Err(e) => {
                    improvements.push(f64::NEG_INFINITY);
                    Err(e.to_string())
                }
            };
            self.evaluations.push(EvalRecord {
                index,
                seed,
                proposed: thetas[i].clone(),
                outcome,
            });
        }
        let row = MetricsRow {
            evals: self.evaluations.len(),
            elapsed_s: self.start.elapsed().as_secs_f64(),
            qd_score: self.final_archive.qd_score(),
            cells: self.final_archive.len(),
            best_objective: self.final_archive.best().map_or(0.0, |e| e.objective),
        };
        self.observer.labeled(&row);
        self.metrics.push(row);
        Ok(improvements)
    }
}

/// Runs `config` with a worker pool of `workers` threads for ground-truth
/// evaluation. Results do not depend on `workers`.
pub fn run_experiment(
    config: &ExperimentConfig,
    workers: usize,
    observer: &mut dyn Observer,
) -> Result<RunResult, PipelineError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    let spec = config.domain.archive_spec();
    let training = match config.algorithm {
        Algorithm::CmaMae => TrainingArchive::Soft(CmaMaeArchive::new(
            spec.clone(),
            config.search.alpha,
            config.search.min_f,
        )?),
        _ => TrainingArchive::Flat(GridArchive::new(spec.clone())),
    };
    let mut run = Run {
        cfg: config,
        pool,
        start: Instant::now(),
        final_archive: GridArchive::new(spec),
        training,
        dataset: Vec::new(),
        evaluations: Vec::new(),
        metrics: Vec::new(),
        observer,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_SEARCH, 0));
    let (model, outer) = match config.algorithm {
        Algorithm::Dsas | Algorithm::Sas => {
            let (m, o) = surrogate_loop(&mut run, &mut rng)?;
            (Some(m), o)
        }
        Algorithm::CmaMae => {
            cma_mae_loop(&mut run, &mut rng)?;
            (None, Vec::new())
        }
        Algorithm::MapElites => {
            map_elites_loop(&mut run, &mut rng)?;
            (None, Vec::new())
        }
        Algorithm::Random => {
            while run.remaining() > 0 {
                let batch: Vec<Vec<f64>> = (0..config.search.batch)
                    .map(|_| config.domain.sample(&mut rng))
                    .collect();
                run.label(&batch)?;
            }
            (None, Vec::new())
        }
    };
    let Run {
        final_archive,
        training,
        dataset,
        evaluations,
        metrics,
        ..
    } = run;
    Ok(RunResult {
        config: config.clone(),
        final_archive,
        training_archive: training.flat().clone(),
        dataset,
        evaluations,
        metrics,
        outer,
        model,
    })
}

fn map_elites_loop(run: &mut Run<'_>, rng: &mut ChaCha8Rng) -> Result<(), PipelineError> {
    let cfg = run.cfg;
    let emitter = GaussianEmitter {
        sigma: cfg.mutation_sigma(),
        bounds: cfg.domain.param_bounds(),
        batch: cfg.search.batch,
    };
    while run.remaining() > 0 {
        let batch = if run.training.flat().is_empty() {
            (0..cfg.search.batch)
                .map(|_| cfg.domain.sample(rng))
                .collect()
        } else {
            emitter.ask(run.training.flat(), rng)
        };
        run.label(&batch)?;
    }
    Ok(())
}

fn cma_mae_loop(run: &mut Run<'_>, rng: &mut ChaCha8Rng) -> Result<(), PipelineError> {
    let cfg = run.cfg;
    let theta0 = cfg.domain.sample(rng);
    let mut emitter = CmaMaeEmitter::new(theta0, cfg.sigma0(), cfg.search.batch)?;
    while run.remaining() > 0 {
        let batch = emitter.ask(rng);
        let improvements = run.label(&batch)?;
        if improvements.len() < batch.len() {
            break;
        }
        let TrainingArchive::Soft(archive) = &run.training else {
            unreachable!("cma-mae runs keep a soft training archive");
        };
        emitter.tell(&improvements, archive, rng)?;
    }
    Ok(())
}

/// Affine map between the parameter box and [-1, 1]ⁿ.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitBox {
    center: Vec<f64>,
    half: Vec<f64>,
}

impl UnitBox {
    pub fn new(bounds: &[(f64, f64)]) -> Self {
        Self {
            center: bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect(),
            half: bounds.iter().map(|(lo, hi)| 0.5 * (hi - lo)).collect(),
        }
    }

    pub fn to_unit(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.center)
            .zip(&self.half)
            .map(|((t, c), h)| if *h > 0.0 { (t - c) / h } else { 0.0 })
            .collect()
    }

    pub fn from_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.center)
            .zip(&self.half)
            .map(|((x, c), h)| c + x * h)
            .collect()
    }

    /// Converts a gradient with respect to θ into one with respect to x.
    pub fn chain(&self, grad: &mut [f64]) {
        for (g, h) in grad.iter_mut().zip(&self.half) {
            *g *= h;
        }
    }
}

/// Surrogate-predicted elite at unit-box point `x`, discounted by the repair
/// cost of its parameters. The elite stores `x`.
fn predicted_elite(
    cfg: &ExperimentConfig,
    space: &UnitBox,
    x: &[f64],
    objective: f64,
    measures: Vec<f64>,
) -> Result<Elite, PipelineError> {
    let (_, displacement) = cfg.domain.repair(&space.from_unit(x))?;
    let f = regularize(objective, displacement, cfg.search.reg_weight);
    // A non-finite prediction must not poison the archive; rank it last.
    let f = if f.is_finite() { f } else { f64::MIN };
    let measures = if measures.iter().all(|m| m.is_finite()) {
        measures
    } else {
        vec![0.0; measures.len()]
    };
    Ok(Elite {
        theta: x.to_vec(),
        objective: f,
        measures,
        meta: EliteMeta {
            displacement,
            ..EliteMeta::default()
        },
    })
}

/// Inner loop: fills a fresh surrogate archive by exploiting `model`. The
/// emitters search the unit box so that parameters with very different
/// physical ranges get comparable steps; archived solutions are unit-box
/// points.
fn exploit(
    cfg: &ExperimentConfig,
    model: &Surrogate,
    space: &UnitBox,
    x0: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<CmaMaeArchive, PipelineError> {
    let mut archive = CmaMaeArchive::new(
        cfg.domain.archive_spec(),
        cfg.search.alpha,
        cfg.search.min_f,
    )?;
    let sigma0 = cfg.search.surrogate_sigma0;
    let predict_all = |xs: &[Vec<f64>]| -> Result<Vec<Elite>, PipelineError> {
        let thetas: Vec<Vec<f64>> = xs.iter().map(|x| space.from_unit(x)).collect();
        let refs: Vec<&[f64]> = thetas.iter().map(Vec::as_slice).collect();
        model
            .predict_batch(&refs)?
            .into_iter()
            .zip(xs)
            .map(|(p, x)| predicted_elite(cfg, space, x, p.objective, p.measures))
            .collect()
    };
    match cfg.algorithm {
        Algorithm::Dsas => {
            let mut emitter = CmaMaegaEmitter::new(
                x0.to_vec(),
                cfg.domain.measure_count(),
                sigma0,
                cfg.search.batch,
            )?;
            for _ in 0..cfg.search.exploit_iterations {
                emitter.step(
                    &mut archive,
                    rng,
                    |x| {
                        let mut jac = model.predict_with_grads(&space.from_unit(x))?;
                        space.chain(&mut jac.grad_objective);
                        for g in &mut jac.grad_measures {
                            space.chain(g);
                        }
                        let elite =
                            predicted_elite(cfg, space, x, jac.objective, jac.measures.clone())?;
                        Ok::<_, PipelineError>((elite, jac))
                    },
                    predict_all,
                )?;
            }
        }
        _ => {
            let mut emitter = CmaMaeEmitter::new(x0.to_vec(), sigma0, cfg.search.batch)?;
            for _ in 0..cfg.search.exploit_iterations {
                emitter.step(&mut archive, rng, predict_all)?;
            }
        }
    }
    Ok(archive)
}

/// Uniform sample without replacement of up to `k` elites' parameters.
pub fn select_solutions(archive: &GridArchive, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let elites: Vec<&Elite> = archive.iter().map(|(_, e)| e).collect();
    let k = k.min(elites.len());
    sample(rng, elites.len(), k)
        .into_iter()
        .map(|i| elites[i].theta.clone())
        .collect()
}

fn surrogate_loop(
    run: &mut Run<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<(Surrogate, Vec<OuterRecord>), PipelineError> {
    let cfg = run.cfg;
    let mut model = Surrogate::new(cfg.domain, derive_seed(cfg.seed, STREAM_MODEL, 0))?;
    let space = UnitBox::new(&cfg.domain.param_bounds());
    let x0 = space.to_unit(&cfg.domain.sample(rng));
    let mut outer = Vec::new();
    let mut iteration = 0;
    while run.remaining() > 0 {
        let surrogate_archive = exploit(cfg, &model, &space, &x0, rng)?;
        let mut selected: Vec<Vec<f64>> =
            select_solutions(surrogate_archive.result(), cfg.search.select, rng)
                .iter()
                .map(|x| space.from_unit(x))
                .collect();
        if selected.is_empty() {
            selected = (0..cfg.search.select)
                .map(|_| cfg.domain.sample(rng))
                .collect();
        }
        let before = run.dataset.len();
        run.label(&selected)?;
        let fresh = &run.dataset[before..];
        let batch_metrics = if fresh.is_empty() {
            None
        } else {
            let refs: Vec<&[f64]> = fresh.iter().map(|s| s.theta.as_slice()).collect();
            let preds = model.predict_batch(&refs)?;
            Some(metrics_from_predictions(
                fresh,
                &preds,
                &cfg.domain.archive_spec(),
            )?)
        };
        let report = if run.dataset.is_empty() {
            None
        } else {
            Some(model.train(&run.dataset, &cfg.train)?)
        };
        let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
        let record = OuterRecord {
            iteration,
            surrogate_cells: surrogate_archive.result().len(),
            labeled: run.dataset.len() - before,
            evals: run.evaluations.len(),
            batch_metrics,
            occupancy_loss: report.as_ref().map_or(f64::NAN, |r| last(&r.occupancy)),
            downstream_loss: report.as_ref().map_or(f64::NAN, |r| last(&r.downstream)),
        };
        run.observer.outer_iteration(&record, &model)?;
        outer.push(record);
        iteration += 1;
    }
    Ok((model, outer))
}
