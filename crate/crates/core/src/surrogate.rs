//! Two-stage surrogate: θ → occupancy grids → (objective, measures).
//!
//! The occupancy predictor treats θ as a 1×1 image and upsamples it to
//! 32×32 grids. The downstream predictor combines a convolutional branch over
//! the predicted grids with a dense branch over θ and regresses the
//! objective and measures. Inputs are rescaled to [-1, 1] with the domain's
//! parameter bounds; targets are z-scored with dataset statistics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{loss_kl, loss_mse, AdamState, LayerSpec, Mode, Network, NnError, Tensor};
use crate::domain::{derive_seed, Domain};
use crate::qd::{ArchiveSpec, Jacobian, QdError};
use crate::sim::OCCUPANCY_SIDE;

pub const SURROGATE_VERSION: u32 = 1;
const GRID_WIDTHS: (usize, usize) = (8, 16);
const GRID_FEATURES: usize = GRID_WIDTHS.1 * 8 * 8;
const PARAM_FEATURES: usize = 64;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("expected {expected} scenario parameters, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {index}: {reason}")]
    BadSample { index: usize, reason: String },
    #[error("non-finite training loss at epoch {0}")]
    NonFiniteLoss(usize),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Archive(#[from] QdError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// One labeled scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub measures: Vec<f64>,
    pub robot_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_grid: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch: 64,
            learning_rate: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub objective: f64,
    pub measures: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    /// Mean absolute error of the objective, then of each measure.
    pub mae: Vec<f64>,
    /// Fraction of predictions whose measures fall in the true archive cell.
    pub cell_hit_rate: f64,
    /// Mean Manhattan distance between predicted and true cells.
    pub mean_manhattan: f64,
}

/// Per-epoch mean losses of one training round.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub occupancy: Vec<f64>,
    pub downstream: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    params: usize,
    channels: usize,
    measures: usize,
    /// θ ↦ (θ − offset) · scale maps the parameter box to [-1, 1].
    offset: Vec<f64>,
    scale: Vec<f64>,
    occupancy: Network,
    grid_branch: Network,
    param_branch: Network,
    head: Network,
    target_mean: Vec<f64>,
    target_std: Vec<f64>,
    occupancy_adam: AdamState,
    downstream_adam: AdamState,
    seed: u64,
    /// Number of training rounds so far; keys the shuffle streams.
    rounds: u64,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: Surrogate,
}

fn occupancy_specs(params: usize, channels: usize) -> Vec<LayerSpec> {
    let deconv = |i, o| LayerSpec::Deconv2d {
        in_channels: i,
        out_channels: o,
        kernel: 2,
        stride: 2,
        padding: 0,
    };
    vec![
        LayerSpec::Dense {
            inputs: params,
            outputs: 64 * 4 * 4,
        },
        LayerSpec::Reshape {
            shape: vec![64, 4, 4],
        },
        LayerSpec::BatchNorm { channels: 64 },
        LayerSpec::Relu,
        deconv(64, 16),
        LayerSpec::BatchNorm { channels: 16 },
        LayerSpec::Relu,
        deconv(16, 8),
        LayerSpec::BatchNorm { channels: 8 },
        LayerSpec::Relu,
        deconv(8, channels),
        LayerSpec::ChannelSoftmax,
    ]
}

fn grid_specs(channels: usize) -> Vec<LayerSpec> {
    let conv = |i, o| LayerSpec::Conv2d {
        in_channels: i,
        out_channels: o,
        kernel: 3,
        stride: 2,
        padding: 1,
    };
    vec![
        conv(channels, GRID_WIDTHS.0),
        LayerSpec::BatchNorm {
            channels: GRID_WIDTHS.0,
        },
        LayerSpec::LeakyRelu { slope: 0.01 },
        conv(GRID_WIDTHS.0, GRID_WIDTHS.1),
        LayerSpec::BatchNorm {
            channels: GRID_WIDTHS.1,
        },
        LayerSpec::LeakyRelu { slope: 0.01 },
        LayerSpec::Reshape {
            shape: vec![GRID_FEATURES],
        },
    ]
}

fn param_specs(params: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dense {
            inputs: params,
            outputs: PARAM_FEATURES,
        },
        LayerSpec::BatchNorm {
            channels: PARAM_FEATURES,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: PARAM_FEATURES,
            outputs: PARAM_FEATURES,
        },
        LayerSpec::BatchNorm {
            channels: PARAM_FEATURES,
        },
        LayerSpec::Relu,
    ]
}

fn lens(net: &Network) -> Vec<usize> {
    net.param_slices().iter().map(|p| p.len()).collect()
}

/// Concatenates per-sample rows of `a` and `b`.
fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    let n = a.batch();
    let (wa, wb) = (a.sample_len(), b.sample_len());
    let mut data = Vec::with_capacity(n * (wa + wb));
    for s in 0..n {
        data.extend_from_slice(a.sample(s));
        data.extend_from_slice(b.sample(s));
    }
    Tensor::new(vec![n, wa + wb], data)
}

/// Splits per-sample rows into the first `wa` columns and the rest.
fn split(t: &Tensor, wa: usize) -> Result<(Tensor, Tensor), NnError> {
    let n = t.batch();
    let w = t.sample_len();
    let mut a = Vec::with_capacity(n * wa);
    let mut b = Vec::with_capacity(n * (w - wa));
    for s in 0..n {
        a.extend_from_slice(&t.sample(s)[..wa]);
        b.extend_from_slice(&t.sample(s)[wa..]);
    }
    Ok((
        Tensor::new(vec![n, wa], a)?,
        Tensor::new(vec![n, w - wa], b)?,
    ))
}

/// Shuffled minibatches of `0..n`. A trailing batch of one sample is dropped
/// when other batches exist: batch statistics of a single sample are degenerate.
fn minibatches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out: Vec<Vec<usize>> = order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
    }
    out
}

impl Surrogate {
    /// Untrained model for `domain`, initialized from `seed`.
    pub fn new(domain: Domain, seed: u64) -> Result<Self, SurrogateError> {
        Self::with_shape(
            &domain.param_bounds(),
            domain.grid_channels(),
            domain.measure_count(),
            seed,
        )
    }

    /// Untrained model over parameters in `bounds` with `channels` occupancy
    /// grids and `measures` measure heads.
    pub fn with_shape(
        bounds: &[(f64, f64)],
        channels: usize,
        measures: usize,
        seed: u64,
    ) -> Result<Self, SurrogateError> {
        let params = bounds.len();
        let side = OCCUPANCY_SIDE;
        let occupancy = Network::new(
            vec![params],
            occupancy_specs(params, channels),
            derive_seed(seed, 1, 0),
        )?;
        let grid_branch = Network::new(
            vec![channels, side, side],
            grid_specs(channels),
            derive_seed(seed, 1, 1),
        )?;
        let param_branch =
            Network::new(vec![params], param_specs(params), derive_seed(seed, 1, 2))?;
        let head = Network::new(
            vec![GRID_FEATURES + PARAM_FEATURES],
            vec![LayerSpec::Dense {
                inputs: GRID_FEATURES + PARAM_FEATURES,
                outputs: measures + 1,
            }],
            derive_seed(seed, 1, 3),
        )?;
        let lr = TrainConfig::default().learning_rate;
        let occupancy_adam = AdamState::new(lr, &lens(&occupancy));
        let mut down = lens(&grid_branch);
        down.extend(lens(&param_branch));
        down.extend(lens(&head));
        Ok(Self {
            params,
            channels,
            measures,
            offset: bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect(),
            scale: bounds
                .iter()
                .map(|(lo, hi)| if hi > lo { 2.0 / (hi - lo) } else { 1.0 })
                .collect(),
            occupancy,
            grid_branch,
            param_branch,
            head,
            target_mean: vec![0.0; measures + 1],
            target_std: vec![1.0; measures + 1],
            occupancy_adam,
            downstream_adam: AdamState::new(lr, &down),
            seed,
            rounds: 0,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn measure_count(&self) -> usize {
        self.measures
    }

    pub fn occupancy_network(&self) -> &Network {
        &self.occupancy
    }

    pub fn head_mut(&mut self) -> &mut Network {
        &mut self.head
    }

    fn scaled_batch(&self, thetas: &[&[f64]]) -> Result<Tensor, SurrogateError> {
        let mut data = Vec::with_capacity(thetas.len() * self.params);
        for t in thetas {
            if t.len() != self.params {
                return Err(SurrogateError::WrongLength {
                    expected: self.params,
                    got: t.len(),
                });
            }
            data.extend(
                t.iter()
                    .zip(&self.offset)
                    .zip(&self.scale)
                    .map(|((v, o), s)| (v - o) * s),
            );
        }
        Ok(Tensor::new(vec![thetas.len(), self.params], data)?)
    }

    /// Predicted occupancy grids for `theta`, one per channel (robot first).
    pub fn predict_occupancy(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>, SurrogateError> {
        let x = self.scaled_batch(&[theta])?;
        let out = self.occupancy.infer(&x)?.into_output();
        Ok(out
            .data()
            .chunks(OCCUPANCY_SIDE * OCCUPANCY_SIDE)
            .map(<[f64]>::to_vec)
            .collect())
    }

    fn destandardize(&self, z: &[f64]) -> Prediction {
        let v: Vec<f64> = z
            .iter()
            .zip(&self.target_mean)
            .zip(&self.target_std)
            .map(|((z, m), s)| z * s + m)
            .collect();
        Prediction {
            objective: v[0],
            measures: v[1..].to_vec(),
        }
    }

    /// Standardized head outputs for a scaled input batch.
    fn infer_scaled(&self, x: &Tensor) -> Result<Tensor, SurrogateError> {
        let grids = self.occupancy.infer(x)?.into_output();
        let g = self.grid_branch.infer(&grids)?.into_output();
        let p = self.param_branch.infer(x)?.into_output();
        Ok(self.head.infer(&concat(&g, &p)?)?.into_output())
    }

    /// Sign of every ReLU-family input across all branches. Two inputs with
    /// equal patterns lie in the same linear piece of the surrogate.
    pub fn activation_pattern(&self, theta: &[f64]) -> Result<Vec<bool>, SurrogateError> {
        let x = self.scaled_batch(&[theta])?;
        let a_occ = self.occupancy.infer(&x)?;
        let a_grid = self.grid_branch.infer(a_occ.output())?;
        let a_param = self.param_branch.infer(&x)?;
        let a_head = self
            .head
            .infer(&concat(a_grid.output(), a_param.output())?)?;
        let mut pattern = self.occupancy.kink_pattern(&a_occ);
        pattern.extend(self.grid_branch.kink_pattern(&a_grid));
        pattern.extend(self.param_branch.kink_pattern(&a_param));
        pattern.extend(self.head.kink_pattern(&a_head));
        Ok(pattern)
    }

    pub fn predict(&self, theta: &[f64]) -> Result<Prediction, SurrogateError> {
        Ok(self.predict_batch(&[theta])?.remove(0))
    }

    /// Predictions for many scenarios in one pass.
    pub fn predict_batch(&self, thetas: &[&[f64]]) -> Result<Vec<Prediction>, SurrogateError> {
        if thetas.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.scaled_batch(thetas)?;
        let z = self.infer_scaled(&x)?;
        Ok((0..thetas.len())
            .map(|s| self.destandardize(z.sample(s)))
            .collect())
    }

    /// Prediction plus the gradient of every output with respect to θ,
    /// backpropagated through the downstream branches and the frozen
    /// occupancy predictor.
    pub fn predict_with_grads(&self, theta: &[f64]) -> Result<Jacobian, SurrogateError> {
        let k1 = self.measures + 1;
        // One copy of the input per output; inference-mode batch norm treats
        // samples independently, so each row backpropagates one output.
        let x = self.scaled_batch(&vec![theta; k1])?;
        let a_occ = self.occupancy.infer(&x)?;
        let a_grid = self.grid_branch.infer(a_occ.output())?;
        let a_param = self.param_branch.infer(&x)?;
        let h = concat(a_grid.output(), a_param.output())?;
        let a_head = self.head.infer(&h)?;
        let mut eye = Tensor::zeros(vec![k1, k1]);
        for i in 0..k1 {
            eye.data_mut()[i * k1 + i] = 1.0;
        }
        let gh = self.head.backward(&a_head, &eye)?.input;
        let (gg, gp) = split(&gh, GRID_FEATURES)?;
        let g_grids = self.grid_branch.backward(&a_grid, &gg)?.input;
        let g_occ = self.occupancy.backward(&a_occ, &g_grids)?.input;
        let g_param = self.param_branch.backward(&a_param, &gp)?.input;
        let pred = self.destandardize(a_head.output().sample(0));
        let mut grads: Vec<Vec<f64>> = (0..k1)
            .map(|r| {
                g_occ
                    .sample(r)
                    .iter()
                    .zip(g_param.sample(r))
                    .zip(&self.scale)
                    .map(|((a, b), s)| (a + b) * s * self.target_std[r])
                    .collect()
            })
            .collect();
        let grad_objective = grads.remove(0);
        Ok(Jacobian {
            objective: pred.objective,
            measures: pred.measures,
            grad_objective,
            grad_measures: grads,
        })
    }

    fn check_dataset(&self, data: &[TrainingSample]) -> Result<(), SurrogateError> {
        if data.is_empty() {
            return Err(SurrogateError::EmptyDataset);
        }
        let cells = OCCUPANCY_SIDE * OCCUPANCY_SIDE;
        for (index, s) in data.iter().enumerate() {
            let bad = |reason: String| SurrogateError::BadSample { index, reason };
            if s.theta.len() != self.params {
                return Err(bad(format!("θ has length {}", s.theta.len())));
            }
            if s.measures.len() != self.measures {
                return Err(bad(format!("{} measures", s.measures.len())));
            }
            let grids = 1 + s.human_grid.is_some() as usize;
            if grids != self.channels {
                return Err(bad(format!("{grids} grids for {} channels", self.channels)));
            }
            let grid_ok =
                |g: &Vec<f64>| g.len() == cells && g.iter().all(|v| *v >= 0.0 && v.is_finite());
            if !grid_ok(&s.robot_grid) || !s.human_grid.as_ref().is_none_or(grid_ok) {
                return Err(bad("occupancy grid malformed".into()));
            }
            if !s.objective.is_finite() || s.measures.iter().any(|m| !m.is_finite()) {
                return Err(bad("non-finite target".into()));
            }
        }
        Ok(())
    }

    fn grid_target(&self, data: &[TrainingSample], idx: &[usize]) -> Result<Tensor, NnError> {
        let side = OCCUPANCY_SIDE;
        let mut out = Vec::with_capacity(idx.len() * self.channels * side * side);
        for &i in idx {
            out.extend_from_slice(&data[i].robot_grid);
            if let Some(h) = &data[i].human_grid {
                out.extend_from_slice(h);
            }
        }
        Tensor::new(vec![idx.len(), self.channels, side, side], out)
    }

    fn shuffle_rng(&self, phase: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 2 + phase, self.rounds))
    }

    /// Trains the occupancy predictor with the KL loss. Returns the mean loss
    /// of every epoch.
    pub fn train_occupancy(
        &mut self,
        data: &[TrainingSample],
        cfg: &TrainConfig,
    ) -> Result<Vec<f64>, SurrogateError> {
        self.check_dataset(data)?;
        let thetas: Vec<&[f64]> = data.iter().map(|s| s.theta.as_slice()).collect();
        let x_all = self.scaled_batch(&thetas)?;
        let mut rng = self.shuffle_rng(0);
        self.occupancy_adam.lr = cfg.learning_rate;
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let mut total = 0.0;
            let mut seen = 0;
            for idx in minibatches(data.len(), cfg.batch, &mut rng) {
                let rows: Vec<&[f64]> = idx.iter().map(|&i| x_all.sample(i)).collect();
                let x = Tensor::stack(&[self.params], &rows)?;
                let target = self.grid_target(data, &idx)?;
                let acts = self.occupancy.forward(&x, Mode::Training)?;
                let (loss, grad) = loss_kl(acts.output(), &target)?;
                let grads = self.occupancy.backward(&acts, &grad)?;
                self.occupancy_adam.step(
                    &mut self.occupancy.param_slices_mut(),
                    &grads.param_slices(),
                )?;
                total += loss * idx.len() as f64;
                seen += idx.len();
            }
            let mean = total / seen as f64;
            if !mean.is_finite() {
                return Err(SurrogateError::NonFiniteLoss(epoch));
            }
            history.push(mean);
        }
        Ok(history)
    }

    /// Trains the downstream predictor with MSE on standardized targets,
    /// feeding it the (frozen) occupancy predictor's grids.
    pub fn train_downstream(
        &mut self,
        data: &[TrainingSample],
        cfg: &TrainConfig,
    ) -> Result<Vec<f64>, SurrogateError> {
        self.check_dataset(data)?;
        let k1 = self.measures + 1;
        let targets: Vec<Vec<f64>> = data
            .iter()
            .map(|s| {
                std::iter::once(s.objective)
                    .chain(s.measures.iter().copied())
                    .collect()
            })
            .collect();
        let n = data.len() as f64;
        for j in 0..k1 {
            let mean = targets.iter().map(|t| t[j]).sum::<f64>() / n;
            let var = targets.iter().map(|t| (t[j] - mean).powi(2)).sum::<f64>() / n;
            self.target_mean[j] = mean;
            self.target_std[j] = if var.sqrt() > 1e-8 { var.sqrt() } else { 1.0 };
        }
        let z: Vec<f64> = targets
            .iter()
            .flat_map(|t| {
                t.iter()
                    .zip(&self.target_mean)
                    .zip(&self.target_std)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect::<Vec<_>>()
            })
            .collect();
        let thetas: Vec<&[f64]> = data.iter().map(|s| s.theta.as_slice()).collect();
        let x_all = self.scaled_batch(&thetas)?;
        // Occupancy weights are frozen, so its predictions are computed once.
        let grids_all = self.occupancy.infer(&x_all)?.into_output();
        let grid_shape = grids_all.sample_shape().to_vec();
        let mut rng = self.shuffle_rng(1);
        self.downstream_adam.lr = cfg.learning_rate;
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let mut total = 0.0;
            let mut seen = 0;
            for idx in minibatches(data.len(), cfg.batch, &mut rng) {
                let xr: Vec<&[f64]> = idx.iter().map(|&i| x_all.sample(i)).collect();
                let gr: Vec<&[f64]> = idx.iter().map(|&i| grids_all.sample(i)).collect();
                let zr: Vec<f64> = idx
                    .iter()
                    .flat_map(|&i| z[i * k1..(i + 1) * k1].iter().copied())
                    .collect();
                let x = Tensor::stack(&[self.params], &xr)?;
                let g = Tensor::stack(&grid_shape, &gr)?;
                let a_grid = self.grid_branch.forward(&g, Mode::Training)?;
                let a_param = self.param_branch.forward(&x, Mode::Training)?;
                let h = concat(a_grid.output(), a_param.output())?;
                let a_head = self.head.forward(&h, Mode::Training)?;
                let (loss, grad) = loss_mse(a_head.output().data(), &zr)?;
                let grad = Tensor::new(a_head.output().shape().to_vec(), grad)?;
                let g_head = self.head.backward(&a_head, &grad)?;
                let (gg, gp) = split(&g_head.input, GRID_FEATURES)?;
                let g_grid = self.grid_branch.backward(&a_grid, &gg)?;
                let g_param = self.param_branch.backward(&a_param, &gp)?;
                let mut params = self.grid_branch.param_slices_mut();
                params.extend(self.param_branch.param_slices_mut());
                params.extend(self.head.param_slices_mut());
                let mut grads = g_grid.param_slices();
                grads.extend(g_param.param_slices());
                grads.extend(g_head.param_slices());
                self.downstream_adam.step(&mut params, &grads)?;
                total += loss * idx.len() as f64;
                seen += idx.len();
            }
            let mean = total / seen as f64;
            if !mean.is_finite() {
                return Err(SurrogateError::NonFiniteLoss(epoch));
            }
            history.push(mean);
        }
        Ok(history)
    }

    /// Occupancy predictor first, then the downstream predictor on top of it.
    pub fn train(
        &mut self,
        data: &[TrainingSample],
        cfg: &TrainConfig,
    ) -> Result<TrainReport, SurrogateError> {
        let occupancy = self.train_occupancy(data, cfg)?;
        let downstream = self.train_downstream(data, cfg)?;
        self.rounds += 1;
        Ok(TrainReport {
            occupancy,
            downstream,
        })
    }

    /// Test-set error of every head and how often predicted measures land in
    /// the true archive cell.
    pub fn evaluate_model(
        &self,
        test: &[TrainingSample],
        spec: &ArchiveSpec,
    ) -> Result<ModelMetrics, SurrogateError> {
        self.check_dataset(test)?;
        let thetas: Vec<&[f64]> = test.iter().map(|s| s.theta.as_slice()).collect();
        let mut preds = Vec::with_capacity(test.len());
        for chunk in thetas.chunks(256) {
            preds.extend(self.predict_batch(chunk)?);
        }
        metrics_from_predictions(test, &preds, spec)
    }

    pub fn to_checkpoint(&self) -> Result<String, SurrogateError> {
        serde_json::to_string(&Checkpoint {
            version: SURROGATE_VERSION,
            model: self.clone(),
        })
        .map_err(|e| SurrogateError::Checkpoint(e.to_string()))
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, SurrogateError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| SurrogateError::Checkpoint(e.to_string()))?;
        if ck.version != SURROGATE_VERSION {
            return Err(SurrogateError::Checkpoint(format!(
                "unsupported version {}",
                ck.version
            )));
        }
        Ok(ck.model)
    }
}

/// Error metrics of `preds` against the labels in `test`.
pub fn metrics_from_predictions(
    test: &[TrainingSample],
    preds: &[Prediction],
    spec: &ArchiveSpec,
) -> Result<ModelMetrics, SurrogateError> {
    if test.is_empty() {
        return Err(SurrogateError::EmptyDataset);
    }
    let k = spec.dims();
    let mut mae = vec![0.0; k + 1];
    let mut hits = 0usize;
    let mut manhattan = 0usize;
    for (s, p) in test.iter().zip(preds) {
        mae[0] += (p.objective - s.objective).abs();
        for j in 0..k {
            mae[j + 1] += (p.measures[j] - s.measures[j]).abs();
        }
        let truth = spec.cell_coords(&s.measures)?;
        let guess = spec.cell_coords(&p.measures)?;
        let d: usize = truth.iter().zip(&guess).map(|(a, b)| a.abs_diff(*b)).sum();
        hits += (d == 0) as usize;
        manhattan += d;
    }
    let n = test.len() as f64;
    Ok(ModelMetrics {
        mae: mae.into_iter().map(|v| v / n).collect(),
        cell_hit_rate: hits as f64 / n,
        mean_manhattan: manhattan as f64 / n,
    })
}
