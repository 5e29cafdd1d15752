use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named real-valued tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Parameter {
    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

/// Ordered collection of parameters. Order is part of the contract: two sets
/// built from the same architecture list the same names in the same order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    entries: Vec<Parameter>,
}

/// Shape skeleton of a parameter set, used for initialization and checks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterLayout {
    pub entries: Vec<(String, Vec<usize>)>,
}

impl ParameterLayout {
    pub fn total(&self) -> usize {
        self.entries
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

impl ParameterSet {
    /// Builds a set from explicit entries, validating uniqueness, shapes and
    /// finiteness.
    pub fn new(entries: Vec<Parameter>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for p in &entries {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::Config(format!("duplicate parameter name {}", p.name)));
            }
            if p.shape.iter().product::<usize>() != p.values.len() {
                return Err(Error::Dimension(format!(
                    "parameter {} has {} values for shape {:?}",
                    p.name,
                    p.values.len(),
                    p.shape
                )));
            }
            if p.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericDomain("parameter values"));
            }
        }
        Ok(ParameterSet { entries })
    }

    /// Fan-in scaled uniform weights `U(-1/√fan_in, 1/√fan_in)` and zero
    /// biases. Entries whose name ends in `.bias` are biases; the fan-in of
    /// a weight is the product of all but its leading dimension.
    pub fn init(layout: &ParameterLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = layout
            .entries
            .iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let values = if name.ends_with(".bias") {
                    vec![0.0f32; n]
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect()
                };
                Parameter {
                    name: name.clone(),
                    shape: shape.clone(),
                    values,
                }
            })
            .collect();
        ParameterSet { entries }
    }

    pub fn zeros(layout: &ParameterLayout) -> Self {
        ParameterSet {
            entries: layout
                .entries
                .iter()
                .map(|(name, shape)| Parameter {
                    name: name.clone(),
                    shape: shape.clone(),
                    values: vec![0.0; shape.iter().product()],
                })
                .collect(),
        }
    }

    pub fn entries(&self) -> &[Parameter] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Parameter] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(Parameter::numel).sum()
    }

    pub fn layout(&self) -> ParameterLayout {
        ParameterLayout {
            entries: self
                .entries
                .iter()
                .map(|p| (p.name.clone(), p.shape.clone()))
                .collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<Vec<f64>> {
        self.entries
            .iter()
            .map(|p| p.values.iter().map(|&v| v as f64).collect())
            .collect()
    }

    /// Replaces values from 64-bit arrays, rounding to storage precision.
    pub fn with_values(&self, values: &[Vec<f64>]) -> Result<Self> {
        if values.len() != self.entries.len() {
            return Err(Error::Dimension(format!(
                "{} value arrays for {} parameters",
                values.len(),
                self.entries.len()
            )));
        }
        let mut out = self.clone();
        for (p, v) in out.entries.iter_mut().zip(values) {
            if v.len() != p.values.len() {
                return Err(Error::Dimension(format!("parameter {} size changed", p.name)));
            }
            p.values = v.iter().map(|&x| x as f32).collect();
        }
        Ok(out)
    }

    /// Euclidean distance between two sets with identical layout.
    pub fn distance(&self, other: &ParameterSet) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .flat_map(|(a, b)| a.values.iter().zip(&b.values))
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// 64-bit gradient buffers aligned with a [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_for(params: &ParameterSet) -> Self {
        Gradients(params.entries.iter().map(|p| vec![0.0; p.numel()]).collect())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().flatten().for_each(|x| *x *= factor);
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }
}
