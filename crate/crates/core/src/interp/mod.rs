//! Parameter-space interpolation between structurally identical models.
//!
//! `θ = Σ_i c_i θ_i` with `Σ_i c_i = 1`, applied to every tensor (weights and
//! biases alike). The two-model case is `(1 - α)·θ_SN + α·θ_SN-GAN`.

mod checkpoint;

use std::fmt;

use crate::error::{Error, Result};
use crate::network::{Parameter, ParameterSet};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, LossTag, ModelCheckpoint, Provenance, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub(crate) use checkpoint::Reader;

/// First difference found between two checkpoints.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mismatch {
    DescriptorField { field: String, left: String, right: String },
    Descriptor { left: String, right: String },
    ParameterCount { left: usize, right: usize },
    ParameterName { index: usize, left: String, right: String },
    ParameterShape { name: String, left: Vec<usize>, right: Vec<usize> },
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mismatch::DescriptorField { field, left, right } => {
                write!(f, "architecture field `{field}` differs: {left} vs {right}")
            }
            Mismatch::Descriptor { left, right } => write!(f, "descriptors differ: {left:?} vs {right:?}"),
            Mismatch::ParameterCount { left, right } => write!(f, "tensor count differs: {left} vs {right}"),
            Mismatch::ParameterName { index, left, right } => {
                write!(f, "tensor #{index} is `{left}` vs `{right}`")
            }
            Mismatch::ParameterShape { name, left, right } => {
                write!(f, "tensor `{name}` has shape {left:?} vs {right:?}")
            }
        }
    }
}

fn descriptor_fields(text: &str) -> Vec<(&str, &str)> {
    text.split(' ')
        .map(|f| f.split_once('=').unwrap_or(("tag", f)))
        .collect()
}

/// `Ok` iff the descriptors and the ordered parameter name/shape lists are
/// identical.
pub fn validate_compatibility(a: &ModelCheckpoint, b: &ModelCheckpoint) -> Result<(), Mismatch> {
    if a.descriptor() != b.descriptor() {
        let (fa, fb) = (descriptor_fields(a.descriptor()), descriptor_fields(b.descriptor()));
        for ((ka, va), (kb, vb)) in fa.iter().zip(&fb) {
            if ka == kb && va != vb {
                return Err(Mismatch::DescriptorField {
                    field: ka.to_string(),
                    left: va.to_string(),
                    right: vb.to_string(),
                });
            }
        }
        return Err(Mismatch::Descriptor {
            left: a.descriptor().to_string(),
            right: b.descriptor().to_string(),
        });
    }
    let (pa, pb) = (a.params().entries(), b.params().entries());
    for (i, (x, y)) in pa.iter().zip(pb).enumerate() {
        if x.name != y.name {
            return Err(Mismatch::ParameterName {
                index: i,
                left: x.name.clone(),
                right: y.name.clone(),
            });
        }
        if x.shape != y.shape || x.values.len() != y.values.len() {
            return Err(Mismatch::ParameterShape {
                name: x.name.clone(),
                left: x.shape.clone(),
                right: y.shape.clone(),
            });
        }
    }
    if pa.len() != pb.len() {
        return Err(Mismatch::ParameterCount {
            left: pa.len(),
            right: pb.len(),
        });
    }
    Ok(())
}

/// Mixing coefficients, one per source model.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpSpec {
    pub coefficients: Vec<f64>,
    /// Permit coefficients outside `[0, 1]`.
    pub allow_extrapolation: bool,
}

impl InterpSpec {
    pub fn new(coefficients: Vec<f64>) -> Self {
        InterpSpec {
            coefficients,
            allow_extrapolation: false,
        }
    }

    /// `(1 - α, α)`.
    pub fn two_model(alpha: f64) -> Self {
        InterpSpec::new(vec![1.0 - alpha, alpha])
    }

    pub fn validate(&self, sources: usize) -> Result<()> {
        let c = &self.coefficients;
        if c.len() < 2 {
            return Err(Error::Coefficients("need at least two source models".into()));
        }
        if c.len() != sources {
            return Err(Error::Coefficients(format!(
                "{} coefficients for {sources} sources",
                c.len()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Coefficients("coefficients must be finite".into()));
        }
        let sum: f64 = c.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Coefficients(format!("coefficients sum to {sum}, not 1")));
        }
        if !self.allow_extrapolation {
            if let Some(v) = c.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Coefficients(format!(
                    "coefficient {v} outside [0, 1] (extrapolation not enabled)"
                )));
            }
        }
        Ok(())
    }
}

/// Validates an interpolation coefficient α against the same rules as
/// [`InterpSpec::two_model`].
pub fn check_alpha(alpha: f64, allow_extrapolation: bool) -> Result<()> {
    InterpSpec {
        allow_extrapolation,
        ..InterpSpec::two_model(alpha)
    }
    .validate(2)
}

/// A checkpoint with the label recorded in provenance.
#[derive(Clone, Copy, Debug)]
pub struct InterpSource<'a> {
    pub label: &'a str,
    pub checkpoint: &'a ModelCheckpoint,
}

/// Coefficient-weighted sum of every parameter, computed in 64-bit and
/// stored in 32-bit. Terms with a zero coefficient are skipped, so an
/// endpoint coefficient vector reproduces its source bit for bit.
pub fn interpolate(sources: &[InterpSource<'_>], spec: &InterpSpec) -> Result<ModelCheckpoint> {
    spec.validate(sources.len())?;
    let first = sources[0].checkpoint;
    for s in &sources[1..] {
        validate_compatibility(first, s.checkpoint).map_err(Error::Incompatible)?;
    }
    let sets: Vec<&ParameterSet> = sources.iter().map(|s| s.checkpoint.params()).collect();
    let params = mix(&sets, &spec.coefficients)?;
    let ckpt = ModelCheckpoint::from_raw_parts(
        first.descriptor().to_string(),
        LossTag::Interp,
        Some(Provenance {
            sources: sources.iter().map(|s| s.label.to_string()).collect(),
            coefficients: spec.coefficients.clone(),
        }),
        params,
    );
    ckpt.validate()?;
    Ok(ckpt)
}

/// `Σ c_i · sets[i]` tensor by tensor. Sets must share one layout.
fn mix(sets: &[&ParameterSet], coefficients: &[f64]) -> Result<ParameterSet> {
    let entries = sets[0]
        .entries()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut acc: Option<Vec<f64>> = None;
            for (set, &c) in sets.iter().zip(coefficients) {
                if c == 0.0 {
                    continue;
                }
                let values = &set.entries()[i].values;
                match &mut acc {
                    None => acc = Some(values.iter().map(|&v| c * v as f64).collect()),
                    Some(a) => a.iter_mut().zip(values).for_each(|(a, &v)| *a += c * v as f64),
                }
            }
            let values = acc
                .map(|a| a.into_iter().map(|v| v as f32).collect())
                .unwrap_or_else(|| vec![0.0; p.values.len()]);
            Parameter {
                name: p.name.clone(),
                shape: p.shape.clone(),
                values,
            }
        })
        .collect();
    ParameterSet::new(entries)
}

/// Two-model interpolation `(1 - α)·sn + α·gan`.
pub fn interpolate_pair(sn: InterpSource<'_>, gan: InterpSource<'_>, alpha: f64, allow_extrapolation: bool) -> Result<ModelCheckpoint> {
    interpolate(
        &[sn, gan],
        &InterpSpec {
            allow_extrapolation,
            ..InterpSpec::two_model(alpha)
        },
    )
}

/// Evaluates `hook` on the interpolated model at every α of `grid`, one
/// model at a time.
pub fn sweep<T>(
    grid: &[f64],
    sn: InterpSource<'_>,
    gan: InterpSource<'_>,
    mut hook: impl FnMut(f64, &ModelCheckpoint) -> Result<T>,
) -> Result<Vec<(f64, T)>> {
    if let Some(a) = grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Coefficients(format!("sweep value {a} outside [0, 1]")));
    }
    validate_compatibility(sn.checkpoint, gan.checkpoint).map_err(Error::Incompatible)?;
    grid.iter()
        .map(|&alpha| {
            let model = interpolate_pair(sn, gan, alpha, false)?;
            Ok((alpha, hook(alpha, &model)?))
        })
        .collect()
}

/// Evenly spaced grid `0, 1/(n-1), …, 1`.
pub fn uniform_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}
