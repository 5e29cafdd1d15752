use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::params::{Gradients, ParameterLayout, ParameterSet};
use super::tape::{NodeId, Tape};

/// Strided convolutions, global average, affine head. The score is left
/// unbounded as the least-squares objective expects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub widths: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    pub negative_slope: f64,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            widths: vec![8, 16],
            kernel_size: 3,
            stride: 2,
            negative_slope: 0.2,
            seed: 1009,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("discriminator widths must be positive".into()));
        }
        if self.kernel_size % 2 == 0 || self.stride == 0 {
            return Err(Error::Config("discriminator kernel must be odd and stride positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> ParameterLayout {
        let k = self.kernel_size;
        let mut entries = Vec::new();
        let mut cin = 1;
        for (i, &cout) in self.widths.iter().enumerate() {
            entries.push((format!("disc.conv{i}.weight"), vec![cout, cin, k, k]));
            entries.push((format!("disc.conv{i}.bias"), vec![cout]));
            cin = cout;
        }
        entries.push(("disc.head.weight".to_string(), vec![1, cin]));
        entries.push(("disc.head.bias".to_string(), vec![1]));
        ParameterLayout { entries }
    }

    pub fn init(&self) -> Result<ParameterSet> {
        self.validate()?;
        Ok(ParameterSet::init(&self.layout(), self.seed))
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    weights: Vec<Vec<f64>>,
}

pub struct DiscTrace<'a> {
    tape: Tape<'a>,
    output: NodeId,
}

impl DiscTrace<'_> {
    pub fn score(&self) -> f64 {
        self.tape.value(self.output).data[0]
    }
}

impl Discriminator {
    pub fn new(config: &DiscriminatorConfig, params: &ParameterSet) -> Result<Self> {
        config.validate()?;
        if params.layout() != config.layout() {
            return Err(Error::Dimension(
                "discriminator parameters do not match configuration".into(),
            ));
        }
        Ok(Discriminator {
            config: config.clone(),
            weights: params.to_f64(),
        })
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    /// `image` is a single-channel (magnitude) map.
    pub fn trace(&self, image: &[f64], height: usize, width: usize) -> Result<DiscTrace<'_>> {
        if image.len() != height * width {
            return Err(Error::Dimension(format!(
                "discriminator input has {} pixels, expected {height}x{width}",
                image.len()
            )));
        }
        let mut tape = Tape::new(&self.weights, self.config.kernel_size, None);
        let mut x = tape.leaf(Tensor {
            channels: 1,
            height,
            width,
            data: image.to_vec(),
        });
        for layer in 0..self.config.widths.len() {
            x = tape.conv(x, layer, self.config.stride);
            x = tape.leaky_relu(x, self.config.negative_slope);
        }
        let pooled = tape.global_mean(x);
        let output = tape.dense(pooled, self.config.widths.len());
        Ok(DiscTrace { tape, output })
    }

    pub fn score(&self, image: &[f64], height: usize, width: usize) -> Result<f64> {
        Ok(self.trace(image, height, width)?.score())
    }

    /// Gradients of `upstream · score` for parameters and input pixels.
    pub fn backward(trace: DiscTrace<'_>, upstream: f64) -> (Gradients, Vec<f64>) {
        let mut g = Tensor::zeros(1, 1, 1);
        g.data[0] = upstream;
        let result = trace.tape.backward(trace.output, g);
        let input = result.leaves.into_iter().next().expect("input leaf").data;
        (result.params, input)
    }

    pub fn parameters(&self, template: &ParameterSet) -> Result<ParameterSet> {
        template.with_values(&self.weights)
    }
}
