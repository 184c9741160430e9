use serde::{Deserialize, Serialize};

use super::autodiff::{Graph, Var};
use super::lora::LoraAdapter;
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Number of sinusoidal time features (sin and cos of 16 octaves).
pub const TIME_EMBED_DIM: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `out x in`.
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Linear {
    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub latent_dim: usize,
    pub cond_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            latent_dim: 16,
            cond_dim: 16,
            hidden: vec![128, 128, 128],
        }
    }
}

impl MlpConfig {
    pub fn input_dim(&self) -> usize {
        self.latent_dim + self.cond_dim + TIME_EMBED_DIM
    }

    /// Widths of every layer boundary, input first.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(&self.hidden);
        dims.push(self.latent_dim);
        dims
    }
}

/// `[sin(2^k t), cos(2^k t)]` for `k = 0..16`.
pub fn time_embedding(t: f64) -> [f64; TIME_EMBED_DIM] {
    let mut out = [0.0; TIME_EMBED_DIM];
    let half = TIME_EMBED_DIM / 2;
    for k in 0..half {
        let arg = t * (1u64 << k) as f64;
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    out
}

/// Velocity network: input `x_t ‖ cond ‖ time-embed`, SiLU hidden layers,
/// linear output of width `latent_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub layers: Vec<Linear>,
    /// Set once a LoRA adapter has been folded into the weights.
    pub merged: bool,
}

/// Which leaves of a bound model receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    Nothing,
    Base,
    Adapter,
}

/// Graph handles for a model (and optional adapter) bound into a [`Graph`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub layers: Vec<(Var, Var)>,
    pub lora: Option<Vec<(Var, Var)>>,
    lora_scale: f64,
    activations: Vec<Activation>,
}

impl ModelVars {
    /// Trainable leaves in parameter-index order.
    pub fn trainable(&self, which: Trainable) -> Vec<Var> {
        match which {
            Trainable::Nothing => vec![],
            Trainable::Base => self.layers.iter().flat_map(|(w, b)| [*w, *b]).collect(),
            Trainable::Adapter => self
                .lora
                .iter()
                .flatten()
                .flat_map(|(a, b)| [*a, *b])
                .collect(),
        }
    }

    pub fn forward(&self, g: &mut Graph, input: Var) -> Result<Var> {
        let mut h = input;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let mut y = g.linear(h, *w, Some(*b))?;
            if let Some(lora) = &self.lora {
                let (a, bb) = lora[i];
                let down = g.linear(h, a, None)?;
                let up = g.linear(down, bb, None)?;
                let scaled = g.scale(up, self.lora_scale);
                y = g.add(y, scaled)?;
            }
            h = match self.activations[i] {
                Activation::Silu => g.silu(y),
                Activation::Identity => y,
            };
        }
        Ok(h)
    }
}

impl MlpModel {
    /// PyTorch-style uniform init, `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn init(config: MlpConfig, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let dims = config.layer_dims();
        let n_layers = dims.len() - 1;
        let layers = (0..n_layers)
            .map(|i| {
                let (input, out) = (dims[i], dims[i + 1]);
                let bound = 1.0 / (input as f64).sqrt();
                let w = (0..out * input).map(|_| rng.uniform_range(-bound, bound)).collect();
                let b = (0..out).map(|_| rng.uniform_range(-bound, bound)).collect();
                Linear {
                    weight: Tensor::matrix(out, input, w).expect("shape"),
                    bias: Tensor::vector(b),
                    activation: if i + 1 == n_layers {
                        Activation::Identity
                    } else {
                        Activation::Silu
                    },
                }
            })
            .collect();
        MlpModel {
            config,
            layers,
            merged: false,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.config.cond_dim
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.config.layer_dims();
        if self.layers.len() + 1 != dims.len() {
            return Err(Error::input("layer count does not match config"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_dim() != dims[i] || l.out_dim() != dims[i + 1] || l.bias.len() != dims[i + 1] {
                return Err(Error::input(format!("layer {i} has inconsistent dims")));
            }
        }
        Ok(())
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Input matrix `[n, in]` from latents `[n, D]`, conditions `[n, C]` and per-row times.
    pub fn build_input(&self, x_t: &Tensor, cond: &Tensor, t: &[f64]) -> Result<Tensor> {
        let (d, c) = (self.latent_dim(), self.cond_dim());
        let n = t.len();
        if x_t.len() != n * d || x_t.cols() != d {
            return Err(Error::input(format!(
                "x_t has shape {:?}, expected {n} rows of {d}",
                x_t.shape()
            )));
        }
        if cond.len() != n * c || cond.cols() != c {
            return Err(Error::input(format!(
                "cond has shape {:?}, expected {n} rows of {c}",
                cond.shape()
            )));
        }
        let width = self.config.input_dim();
        let mut values = Vec::with_capacity(n * width);
        for (i, &ti) in t.iter().enumerate() {
            if !(0.0..=1.0).contains(&ti) {
                return Err(Error::input(format!("t = {ti} outside [0, 1]")));
            }
            values.extend_from_slice(&x_t.values()[i * d..(i + 1) * d]);
            values.extend_from_slice(&cond.values()[i * c..(i + 1) * c]);
            values.extend_from_slice(&time_embedding(ti));
        }
        Tensor::matrix(n, width, values)
    }

    /// Bind weights (and optionally an adapter) as graph leaves.
    pub fn bind(&self, g: &mut Graph, adapter: Option<&LoraAdapter>, trainable: Trainable) -> Result<ModelVars> {
        let base_rg = trainable == Trainable::Base;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if base_rg {
                    (g.param(l.weight.clone()), g.param(l.bias.clone()))
                } else {
                    (g.constant(l.weight.clone()), g.constant(l.bias.clone()))
                }
            })
            .collect();
        let (lora, lora_scale) = match adapter {
            Some(ad) => {
                ad.check_compatible(self)?;
                let rg = trainable == Trainable::Adapter;
                let vars = ad
                    .layers
                    .iter()
                    .map(|l| {
                        if rg {
                            (g.param(l.a.clone()), g.param(l.b.clone()))
                        } else {
                            (g.constant(l.a.clone()), g.constant(l.b.clone()))
                        }
                    })
                    .collect();
                (Some(vars), ad.scale())
            }
            None => {
                if trainable == Trainable::Adapter {
                    return Err(Error::input("adapter training requested without an adapter"));
                }
                (None, 0.0)
            }
        };
        Ok(ModelVars {
            layers,
            lora,
            lora_scale,
            activations: self.layers.iter().map(|l| l.activation).collect(),
        })
    }

    /// Velocity prediction for a batch: `x_t [n, D]`, `cond [n, C]`, one `t` per row.
    pub fn forward_batch(&self, adapter: Option<&LoraAdapter>, x_t: &Tensor, cond: &Tensor, t: &[f64]) -> Result<Tensor> {
        let input = self.build_input(x_t, cond, t)?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g, adapter, Trainable::Nothing)?;
        let x = g.constant(input);
        let out = vars.forward(&mut g, x)?;
        Ok(g.value(out).clone())
    }

    /// Velocity prediction for a single latent.
    pub fn forward(&self, adapter: Option<&LoraAdapter>, x_t: &Tensor, cond: &Tensor, t: f64) -> Result<Tensor> {
        let xs = Tensor::matrix(1, x_t.len(), x_t.values().to_vec())?;
        let cs = Tensor::matrix(1, cond.len(), cond.values().to_vec())?;
        let out = self.forward_batch(adapter, &xs, &cs, &[t])?;
        Ok(Tensor::vector(out.into_values()))
    }
}
