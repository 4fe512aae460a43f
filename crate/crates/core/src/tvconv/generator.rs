use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::affinity::AffinityMaps;
use super::field::WeightField;
use crate::error::{Error, Result};
use crate::grad::{NodeId, Tape};
use crate::tensor::ops::{self, DEFAULT_LN_EPS};
use crate::tensor::{Element, Tensor};

/// Shape hyper-parameters of the weight-generating block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    /// Number of conv -> layer norm -> ReLU units before the output conv.
    pub layers: usize,
    /// Width `c_B` of each hidden unit.
    pub channels: usize,
    /// Spatial kernel `k_B` of every generator conv.
    pub kernel: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            layers: 3,
            channels: 64,
            kernel: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenUnit {
    pub conv: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Parameters of the block mapping affinity maps to a weight field:
/// `[conv -> LN -> ReLU]^L` followed by a bias-free output conv with
/// `c*k*k` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub hidden: Vec<HiddenUnit>,
    pub output: Tensor,
    config: GeneratorConfig,
    affinity_channels: usize,
    channels: usize,
    kernel: usize,
}

/// Fan-in scaled normal, std = sqrt(2 / fan_in).
pub fn he_normal(dims: &[usize], fan_in: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Tensor::from_fn(dims, |_| normal.sample(rng))
}

impl GeneratorParams {
    /// Random init for a layer with `channels` feature channels and apply
    /// kernel `kernel`, reading `affinity_channels` affinity maps.
    pub fn init(
        affinity_channels: usize,
        channels: usize,
        kernel: usize,
        config: GeneratorConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        ops::odd_kernel(kernel)?;
        ops::odd_kernel(config.kernel)?;
        if affinity_channels == 0 || channels == 0 || (config.layers > 0 && config.channels == 0) {
            return Err(Error::InvalidArgument("generator channel counts must be >= 1".into()));
        }
        let kb = config.kernel;
        let mut prev = affinity_channels;
        let mut hidden = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            hidden.push(HiddenUnit {
                conv: he_normal(&[config.channels, prev, kb, kb], prev * kb * kb, rng)?,
                gamma: Tensor::filled(&[config.channels], 1.0)?,
                beta: Tensor::zeros(&[config.channels])?,
            });
            prev = config.channels;
        }
        let output = he_normal(&[channels * kernel * kernel, prev, kb, kb], prev * kb * kb, rng)?;
        Ok(GeneratorParams {
            hidden,
            output,
            config,
            affinity_channels,
            channels,
            kernel,
        })
    }

    /// Assembles parameters from explicit tensors, validating the chain.
    pub fn from_parts(hidden: Vec<HiddenUnit>, output: Tensor, channels: usize, kernel: usize) -> Result<Self> {
        ops::odd_kernel(kernel)?;
        let kb = output.dims().get(2).copied().unwrap_or(0);
        let affinity_channels = match hidden.first() {
            Some(h) => h.conv.dims()[1],
            None => output.dims()[1],
        };
        let mut prev = affinity_channels;
        for (i, unit) in hidden.iter().enumerate() {
            let d = unit.conv.dims();
            if d.len() != 4 || d[1] != prev || d[2] != kb || d[3] != kb {
                return Err(Error::shape(
                    format!("generator hidden unit {i}"),
                    "conv",
                    d,
                    "expected in-channels/kernel",
                    &[prev, kb],
                ));
            }
            if unit.gamma.dims() != [d[0]] || unit.beta.dims() != [d[0]] {
                return Err(Error::shape(format!("generator hidden unit {i} norm"), "conv", d, "gamma", unit.gamma.dims()));
            }
            prev = d[0];
        }
        let od = output.dims();
        if od.len() != 4 || od[1] != prev || od[3] != kb {
            return Err(Error::shape("generator output conv", "output", od, "expected in-channels", &[prev]));
        }
        if od[0] != channels * kernel * kernel {
            return Err(Error::InvalidArgument(format!(
                "generator emits {} channels but c*k*k = {}",
                od[0],
                channels * kernel * kernel
            )));
        }
        let config = GeneratorConfig {
            layers: hidden.len(),
            channels: hidden.first().map(|h| h.conv.dims()[0]).unwrap_or(0),
            kernel: kb,
        };
        Ok(GeneratorParams {
            hidden,
            output,
            config,
            affinity_channels,
            channels,
            kernel,
        })
    }

    pub fn config(&self) -> GeneratorConfig {
        self.config
    }

    pub fn affinity_channels(&self) -> usize {
        self.affinity_channels
    }

    /// Feature channels `c` of the layer the generated field serves.
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Apply-step kernel `k`.
    pub fn kernel(&self) -> usize {
        self.kernel
    }

    /// All tensors in a fixed order: per hidden unit (conv, gamma, beta),
    /// then the output conv.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = Vec::with_capacity(3 * self.hidden.len() + 1);
        for unit in &self.hidden {
            v.extend([&unit.conv, &unit.gamma, &unit.beta]);
        }
        v.push(&self.output);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::with_capacity(3 * self.hidden.len() + 1);
        for unit in &mut self.hidden {
            v.extend([&mut unit.conv, &mut unit.gamma, &mut unit.beta]);
        }
        v.push(&mut self.output);
        v
    }

    /// Names matching [`GeneratorParams::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for i in 0..self.hidden.len() {
            v.extend([format!("hidden{i}.conv"), format!("hidden{i}.gamma"), format!("hidden{i}.beta")]);
        }
        v.push("output".to_string());
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Records the generator on `tape`. `params` are the nodes for
    /// [`GeneratorParams::tensors`], in order.
    pub fn record<T: Element>(&self, tape: &mut Tape<T>, affinity: NodeId, params: &[NodeId]) -> Result<NodeId> {
        if params.len() != 3 * self.hidden.len() + 1 {
            return Err(Error::Tape(format!(
                "generator expects {} parameter nodes, got {}",
                3 * self.hidden.len() + 1,
                params.len()
            )));
        }
        let mut x = affinity;
        for unit in params[..params.len() - 1].chunks_exact(3) {
            let y = tape.conv2d(x, unit[0])?;
            let y = tape.layer_norm(y, unit[1], unit[2], DEFAULT_LN_EPS)?;
            x = tape.relu(y)?;
        }
        tape.conv2d(x, params[params.len() - 1])
    }
}

/// `W = B(A)`: runs the generator and wraps the result as a weight field.
pub fn generate_weights(affinity: &AffinityMaps, gen: &GeneratorParams) -> Result<WeightField> {
    if affinity.channels() != gen.affinity_channels {
        return Err(Error::InvalidArgument(format!(
            "generator reads {} affinity channels, maps have {}",
            gen.affinity_channels,
            affinity.channels()
        )));
    }
    let mut x = affinity.tensor().clone();
    for unit in &gen.hidden {
        let y = ops::conv2d(&x, &unit.conv)?;
        let y = ops::layer_norm(&y, &unit.gamma, &unit.beta, DEFAULT_LN_EPS)?;
        x = ops::relu(&y);
    }
    let out = ops::conv2d(&x, &gen.output)?;
    WeightField::new(out, gen.channels, gen.kernel)
}
