//! Low-rank adapters: `W_eff = W + (alpha / r) * B * A`, with `B` starting at
//! zero so a fresh adapter leaves the model unchanged.

use serde::{Deserialize, Serialize};

use super::mlp::MlpModel;
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraLayer {
    /// `r x in`.
    pub a: Tensor,
    /// `out x r`.
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub rank: usize,
    pub alpha: f64,
    pub layers: Vec<LoraLayer>,
}

impl LoraAdapter {
    /// One adapter per linear layer; `A ~ U(-1/sqrt(in), 1/sqrt(in))`, `B = 0`.
    pub fn init(model: &MlpModel, rank: usize, alpha: f64, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let layers = model
            .layers
            .iter()
            .map(|l| {
                let (out, input) = (l.out_dim(), l.in_dim());
                let bound = 1.0 / (input as f64).sqrt();
                let a = (0..rank * input).map(|_| rng.uniform_range(-bound, bound)).collect();
                LoraLayer {
                    a: Tensor::matrix(rank, input, a).expect("shape"),
                    b: Tensor::zeros(&[out, rank]),
                }
            })
            .collect();
        LoraAdapter { rank, alpha, layers }
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn check_compatible(&self, model: &MlpModel) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::input("LoRA rank must be positive"));
        }
        if self.layers.len() != model.layers.len() {
            return Err(Error::input(format!(
                "adapter has {} layers, model has {}",
                self.layers.len(),
                model.layers.len()
            )));
        }
        for (i, (ad, l)) in self.layers.iter().zip(&model.layers).enumerate() {
            if ad.a.shape() != [self.rank, l.in_dim()] || ad.b.shape() != [l.out_dim(), self.rank] {
                return Err(Error::input(format!(
                    "adapter layer {i} shapes {:?}/{:?} do not match rank {} on a {}x{} layer",
                    ad.a.shape(),
                    ad.b.shape(),
                    self.rank,
                    l.out_dim(),
                    l.in_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.a, &l.b]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.a, &mut l.b]).collect()
    }
}

/// Fold an adapter into the base weights. The adapter is consumed and the
/// result is flagged as merged, so a second merge is rejected.
pub fn lora_merge(model: &MlpModel, adapter: LoraAdapter) -> Result<MlpModel> {
    if model.merged {
        return Err(Error::input("model already has a merged adapter"));
    }
    adapter.check_compatible(model)?;
    let scale = adapter.scale();
    let r = adapter.rank;
    let mut merged = model.clone();
    for (layer, ad) in merged.layers.iter_mut().zip(&adapter.layers) {
        let (out, input) = (layer.out_dim(), layer.in_dim());
        let a = ad.a.values();
        let b = ad.b.values();
        let w = layer.weight.values_mut();
        for o in 0..out {
            for k in 0..input {
                let mut acc = 0.0;
                for j in 0..r {
                    acc += b[o * r + j] * a[j * input + k];
                }
                w[o * input + k] += scale * acc;
            }
        }
    }
    merged.merged = true;
    Ok(merged)
}
