use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerCache, LayerSpec, BN_MOMENTUM};
use super::{Mode, NnError, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Sequential stack of layers with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    seed: u64,
}

/// Every intermediate value of one forward call, input first.
#[derive(Clone, Debug)]
pub struct Activations {
    values: Vec<Tensor>,
    caches: Vec<LayerCache>,
}

impl Activations {
    pub fn output(&self) -> &Tensor {
        self.values.last().expect("activations include the input")
    }

    pub fn input(&self) -> &Tensor {
        &self.values[0]
    }

    /// Input, then the output of each layer in order.
    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn into_output(mut self) -> Tensor {
        self.values.pop().expect("activations include the input")
    }
}

/// Gradients from [`Network::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    /// Per layer, same order as the layer's parameters.
    pub params: Vec<Vec<Tensor>>,
    pub input: Tensor,
}

impl Gradients {
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.params.iter().flatten().map(|t| t.data()).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    network: Network,
}

impl Network {
    /// Builds and initializes a network. Weights use fan-in scaled uniform
    /// initialization drawn from a generator seeded with `seed`.
    pub fn new(input_shape: Vec<usize>, specs: Vec<LayerSpec>, seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.clone();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            let layer = Layer::build(i, spec, shape, &mut rng)?;
            shape = layer.output_shape.clone();
            layers.push(layer);
        }
        Ok(Self {
            input_shape,
            layers,
            seed,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map(|l| l.output_shape.as_slice())
            .unwrap_or(&self.input_shape)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.params)
            .map(Tensor::len)
            .sum()
    }

    /// Parameter buffers in a stable order (layer by layer).
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| &l.params)
            .map(|t| t.data())
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params.iter_mut())
            .map(|t| t.data_mut())
            .collect()
    }

    fn check_input(&self, input: &Tensor) -> Result<(), NnError> {
        if input.shape().len() != self.input_shape.len() + 1
            || input.sample_shape() != self.input_shape
        {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                expected: self.input_shape.clone(),
                got: input.sample_shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Forward pass over a batch. Training mode normalizes with batch
    /// statistics and folds them into the running averages.
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Activations, NnError> {
        match mode {
            Mode::Inference => self.infer(input),
            Mode::Training => {
                self.check_input(input)?;
                let mut values = Vec::with_capacity(self.layers.len() + 1);
                let mut caches = Vec::with_capacity(self.layers.len());
                values.push(input.clone());
                for layer in &mut self.layers {
                    let (out, cache, stats) = layer.forward(values.last().unwrap(), Mode::Training);
                    if let (Some(stats), Some(running)) = (stats, layer.running.as_mut()) {
                        for (r, b) in running.mean.iter_mut().zip(&stats.mean) {
                            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                        }
                        for (r, b) in running.var.iter_mut().zip(&stats.var) {
                            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                        }
                    }
                    values.push(out);
                    caches.push(cache);
                }
                Ok(Activations { values, caches })
            }
        }
    }

    /// Inference-mode forward pass; does not touch the network.
    pub fn infer(&self, input: &Tensor) -> Result<Activations, NnError> {
        self.check_input(input)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        values.push(input.clone());
        for layer in &self.layers {
            let (out, cache, _) = layer.forward(values.last().unwrap(), Mode::Inference);
            values.push(out);
            caches.push(cache);
        }
        Ok(Activations { values, caches })
    }

    /// Backpropagates `output_grad` through the network, returning gradients
    /// for every parameter and for the input.
    pub fn backward(&self, acts: &Activations, output_grad: &Tensor) -> Result<Gradients, NnError> {
        if acts.values.len() != self.layers.len() + 1 || acts.caches.len() != self.layers.len() {
            return Err(NnError::ActivationMismatch(format!(
                "expected {} activations, got {}",
                self.layers.len() + 1,
                acts.values.len()
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if acts.values[i + 1].sample_shape() != layer.output_shape.as_slice() {
                return Err(NnError::ActivationMismatch(format!(
                    "activation {} has shape {:?}, layer produces {:?}",
                    i + 1,
                    acts.values[i + 1].sample_shape(),
                    layer.output_shape
                )));
            }
        }
        if output_grad.shape() != acts.output().shape() {
            return Err(NnError::ActivationMismatch(format!(
                "output gradient shape {:?} differs from output {:?}",
                output_grad.shape(),
                acts.output().shape()
            )));
        }
        let mut params = vec![Vec::new(); self.layers.len()];
        let mut grad = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (pg, gx) =
                layer.backward(&acts.values[i], &acts.values[i + 1], &acts.caches[i], &grad);
            params[i] = pg;
            grad = gx;
        }
        Ok(Gradients {
            params,
            input: grad,
        })
    }

    /// Signs of every piecewise-linear layer input; used to detect kinks.
    pub(crate) fn kink_pattern(&self, acts: &Activations) -> Vec<bool> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.spec.is_piecewise_linear())
            .flat_map(|(i, _)| acts.values[i].data().iter().map(|v| *v > 0.0))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Result<String, NnError> {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            network: self.clone(),
        };
        serde_json::to_string(&ck).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, NnError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        // Re-validate shapes so a hand-edited file cannot smuggle in a broken stack.
        let mut shape = ck.network.input_shape.clone();
        for (i, layer) in ck.network.layers.iter().enumerate() {
            let out = layer.spec.output_shape(i, &shape)?;
            if out != layer.output_shape || layer.input_shape != shape {
                return Err(NnError::Checkpoint(format!("layer {i} shape inconsistent")));
            }
            shape = out;
        }
        Ok(ck.network)
    }
}
