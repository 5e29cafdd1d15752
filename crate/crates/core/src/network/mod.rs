//! The unrolled sensitivity network and its adversarial critic.
//!
//! Each cascade applies a small encoder–decoder to the current combined
//! image (real and imaginary parts as two channels) and adds the result back
//! as a residual correction, then enforces the measured k-space coil by coil.

mod dc;
mod discriminator;
mod params;
mod tape;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mri::{Acquisition, ComplexImage};
use crate::tensor::Tensor;

pub use dc::{consistency_residual, dc_backward, dc_layer};
pub use discriminator::{DiscTrace, Discriminator, DiscriminatorConfig};
pub use params::{Gradients, Parameter, ParameterLayout, ParameterSet};
pub use tape::{Backward, NodeId, Op, Tape, TapeNode};

const DESCRIPTOR_TAG: &str = "mrinterp-sn/v1";
const BLOCK_LAYERS: [&str; 5] = ["enc", "down", "mid", "dec", "out"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub cascades: usize,
    /// Encoder width and bottleneck width.
    pub widths: Vec<usize>,
    pub kernel_size: usize,
    pub downsample: usize,
    pub height: usize,
    pub width: usize,
    pub coils: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            cascades: 3,
            widths: vec![8, 16],
            kernel_size: 3,
            downsample: 2,
            height: 64,
            width: 64,
            coils: 4,
            seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cascades < 1 {
            return Err(Error::Config("cascade count must be at least 1".into()));
        }
        if self.widths.len() != 2 || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "block widths must be two positive channel counts, got {:?}",
                self.widths
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} is not odd", self.kernel_size)));
        }
        if self.downsample < 1 {
            return Err(Error::Config("downsample factor must be at least 1".into()));
        }
        if self.height == 0 || self.width == 0 || self.coils == 0 {
            return Err(Error::Config("grid and coil count must be positive".into()));
        }
        Ok(())
    }

    /// Canonical architecture text. The initialization seed is not part of
    /// the architecture and is left out.
    pub fn descriptor(&self) -> String {
        format!(
            "{DESCRIPTOR_TAG} cascades={} widths={} kernel={} downsample={} grid={}x{} coils={}",
            self.cascades,
            self.widths
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
            self.kernel_size,
            self.downsample,
            self.height,
            self.width,
            self.coils
        )
    }

    /// Inverse of [`ModelConfig::descriptor`]; the seed comes back as 0.
    pub fn from_descriptor(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("descriptor {text:?}: {msg}"));
        let mut fields = text.split(' ');
        if fields.next() != Some(DESCRIPTOR_TAG) {
            return Err(bad("unknown architecture tag"));
        }
        let mut cfg = ModelConfig {
            seed: 0,
            ..ModelConfig::default()
        };
        let mut seen = 0;
        for field in fields {
            let (key, value) = field.split_once('=').ok_or_else(|| bad("field without '='"))?;
            let num = |v: &str| v.parse::<usize>().map_err(|_| bad("non-numeric value"));
            match key {
                "cascades" => cfg.cascades = num(value)?,
                "widths" => cfg.widths = value.split(',').map(num).collect::<Result<_>>()?,
                "kernel" => cfg.kernel_size = num(value)?,
                "downsample" => cfg.downsample = num(value)?,
                "grid" => {
                    let (h, w) = value.split_once('x').ok_or_else(|| bad("grid is not HxW"))?;
                    cfg.height = num(h)?;
                    cfg.width = num(w)?;
                }
                "coils" => cfg.coils = num(value)?,
                _ => return Err(bad("unknown field")),
            }
            seen += 1;
        }
        if seen != 6 {
            return Err(bad("missing fields"));
        }
        cfg.validate()?;
        if cfg.descriptor() != text {
            return Err(bad("not in canonical form"));
        }
        Ok(cfg)
    }

    pub fn layout(&self) -> ParameterLayout {
        let k = self.kernel_size;
        let (w1, w2) = (self.widths[0], self.widths[1]);
        let channels = [(2, w1), (w1, w2), (w2, w2), (w2, w1), (w1, 2)];
        let mut entries = Vec::with_capacity(self.cascades * 10);
        for t in 0..self.cascades {
            for (layer, &(cin, cout)) in BLOCK_LAYERS.iter().zip(&channels) {
                entries.push((format!("cascade{t}.{layer}.weight"), vec![cout, cin, k, k]));
                entries.push((format!("cascade{t}.{layer}.bias"), vec![cout]));
            }
        }
        ParameterLayout { entries }
    }
}

/// Deterministic initialization for `config`.
pub fn init_model(config: &ModelConfig) -> Result<ParameterSet> {
    config.validate()?;
    Ok(ParameterSet::init(&config.layout(), config.seed))
}

/// A generator with 64-bit working copies of its parameters.
#[derive(Clone, Debug)]
pub struct Network {
    config: ModelConfig,
    weights: Vec<Vec<f64>>,
}

/// Recorded forward pass of a [`Network`].
pub struct Trace<'a> {
    tape: Tape<'a>,
    input: NodeId,
    output: NodeId,
}

impl<'a> Trace<'a> {
    pub fn output(&self) -> ComplexImage {
        self.tape.value(self.output).to_complex()
    }

    pub fn zero_filled(&self) -> ComplexImage {
        self.tape.value(self.input).to_complex()
    }

    pub fn tape(&self) -> &Tape<'a> {
        &self.tape
    }
}

impl Network {
    pub fn new(config: &ModelConfig, params: &ParameterSet) -> Result<Self> {
        config.validate()?;
        let expected = config.layout();
        let found = params.layout();
        if expected != found {
            let detail = expected
                .entries
                .iter()
                .zip(&found.entries)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected {} {:?}, found {} {:?}", a.0, a.1, b.0, b.1))
                .unwrap_or_else(|| {
                    format!(
                        "expected {} tensors, found {}",
                        expected.entries.len(),
                        found.entries.len()
                    )
                });
            return Err(Error::Dimension(format!("parameters do not match architecture: {detail}")));
        }
        Ok(Network {
            config: config.clone(),
            weights: params.to_f64(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Mutable working weights, used by finite-difference checks.
    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    fn check_acquisition(&self, acq: &Acquisition) -> Result<()> {
        let c = &self.config;
        if (acq.height(), acq.width(), acq.maps.coils()) != (c.height, c.width, c.coils) {
            return Err(Error::Dimension(format!(
                "acquisition is {}x{}x{}, model expects {}x{}x{}",
                acq.maps.coils(),
                acq.height(),
                acq.width(),
                c.coils,
                c.height,
                c.width
            )));
        }
        Ok(())
    }

    /// Appends one reconstruction block for cascade `t` to `tape`, returning
    /// the node holding `x + block(x)`.
    pub fn recon_block_forward(&self, tape: &mut Tape<'_>, x: NodeId, t: usize) -> NodeId {
        let base = t * BLOCK_LAYERS.len();
        let (h, w) = (self.config.height, self.config.width);
        let s = self.config.downsample;
        let e = tape.conv(x, base, 1);
        let e = tape.leaky_relu(e, 0.0);
        let d = tape.conv(e, base + 1, s);
        let d = tape.leaky_relu(d, 0.0);
        let m = tape.conv(d, base + 2, 1);
        let m = tape.leaky_relu(m, 0.0);
        let u = tape.upsample(m, s, h, w);
        let r = tape.conv(u, base + 3, 1);
        let r = tape.leaky_relu(r, 0.0);
        let correction = tape.conv(r, base + 4, 1);
        tape.add(x, correction)
    }

    /// Applies the block of cascade `t` to an image outside any model run.
    pub fn recon_block(&self, x: &ComplexImage, t: usize) -> Result<ComplexImage> {
        if x.shape() != (self.config.height, self.config.width) || t >= self.config.cascades {
            return Err(Error::Dimension(format!(
                "block input {}x{} (cascade {t}) does not match the model",
                x.height(),
                x.width()
            )));
        }
        let mut tape = Tape::new(&self.weights, self.config.kernel_size, None);
        let id = tape.leaf(Tensor::from_complex(x));
        let out = self.recon_block_forward(&mut tape, id, t);
        Ok(tape.value(out).to_complex())
    }

    /// Runs the unrolled reconstruction, keeping every activation for a
    /// backward pass.
    pub fn trace<'a>(&'a self, acq: &'a Acquisition) -> Result<Trace<'a>> {
        self.check_acquisition(acq)?;
        let mut tape = Tape::new(&self.weights, self.config.kernel_size, Some(acq));
        let input = tape.leaf(Tensor::from_complex(&acq.zero_filled()));
        let mut x = input;
        for t in 0..self.config.cascades {
            x = self.recon_block_forward(&mut tape, x, t);
            x = tape.data_consistency(x);
        }
        Ok(Trace {
            tape,
            input,
            output: x,
        })
    }

    pub fn forward(&self, acq: &Acquisition) -> Result<ComplexImage> {
        Ok(self.trace(acq)?.output())
    }

    /// Gradients of a scalar loss given `∂L/∂re + i ∂L/∂im` at the output.
    /// Returns parameter gradients and the gradient at the zero-filled input.
    pub fn backward(trace: Trace<'_>, output_gradient: &ComplexImage) -> (Gradients, ComplexImage) {
        let Trace { tape, output, .. } = trace;
        let result = tape.backward(output, Tensor::from_complex(output_gradient));
        let input_grad = result.leaves[0].to_complex();
        (result.params, input_grad)
    }

    pub fn parameters(&self, template: &ParameterSet) -> Result<ParameterSet> {
        template.with_values(&self.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mri::{forward_op, normalize_sensitivities, CoilArray, SamplingMask};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_config() -> ModelConfig {
        ModelConfig {
            cascades: 1,
            widths: vec![3, 4],
            kernel_size: 3,
            downsample: 2,
            height: 8,
            width: 8,
            coils: 2,
            seed: 5,
        }
    }

    pub(crate) fn toy_acquisition(cfg: &ModelConfig, seed: u64) -> (ComplexImage, Acquisition) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, c) = (cfg.height, cfg.width, cfg.coils);
        let raw = CoilArray::from_vec(
            c,
            h,
            w,
            (0..c * h * w)
                .map(|_| Complex64::new(rng.random_range(0.2..1.0), rng.random_range(-0.5..0.5)))
                .collect(),
        )
        .unwrap();
        let support: Vec<bool> = (0..h * w).map(|p| (p / w) % 7 != 0).collect();
        let maps = normalize_sensitivities(&raw, &support).unwrap();
        let truth = ComplexImage::from_fn(h, w, |r, col| {
            if support[r * w + col] {
                Complex64::new(rng.random_range(0.2..1.0), rng.random_range(-0.3..0.3))
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let mask = SamplingMask::from_columns(h, (0..w).map(|i| i % 3 == 0 || i == w / 2).collect());
        let y = forward_op(&truth, &maps, &mask).unwrap();
        (truth, Acquisition::new(y, maps, mask).unwrap())
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = ModelConfig::default();
        let a = init_model(&cfg).unwrap();
        let b = init_model(&cfg).unwrap();
        assert_eq!(a, b);
        for p in a.entries() {
            if p.name.ends_with(".bias") {
                assert!(p.values.iter().all(|&v| v == 0.0), "{}", p.name);
            } else {
                let bound = 1.0 / ((p.shape[1] * p.shape[2] * p.shape[3]) as f32).sqrt();
                assert!(p.values.iter().all(|v| v.abs() <= bound));
            }
        }
        let other = init_model(&ModelConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, other);
        assert_eq!(a.layout(), other.layout());
    }

    #[test]
    fn parameter_count_for_two_channel_single_cascade() {
        // per layer: 2·2·3·3 weights + 2 biases = 38, five layers
        let cfg = ModelConfig {
            cascades: 1,
            widths: vec![2, 2],
            ..ModelConfig::default()
        };
        assert_eq!(init_model(&cfg).unwrap().total_values(), 190);
        let three = ModelConfig {
            cascades: 3,
            ..cfg
        };
        assert_eq!(init_model(&three).unwrap().total_values(), 570);
    }

    #[test]
    fn descriptor_round_trip_and_rejections() {
        let cfg = ModelConfig::default();
        let text = cfg.descriptor();
        let parsed = ModelConfig::from_descriptor(&text).unwrap();
        assert_eq!(parsed, ModelConfig { seed: 0, ..cfg });
        assert!(ModelConfig::from_descriptor("other/v1 cascades=1").is_err());
        assert!(ModelConfig::from_descriptor(&text.replace("kernel=3", "kernel=4")).is_err());
        assert!(ModelConfig::from_descriptor(&text.replace(" coils=4", "")).is_err());
    }

    #[test]
    fn config_validation() {
        for bad in [
            ModelConfig { cascades: 0, ..ModelConfig::default() },
            ModelConfig { kernel_size: 4, ..ModelConfig::default() },
            ModelConfig { widths: vec![8], ..ModelConfig::default() },
            ModelConfig { widths: vec![8, 0], ..ModelConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn zero_parameters_make_the_block_an_identity() {
        let cfg = toy_config();
        let zeros = ParameterSet::zeros(&cfg.layout());
        let net = Network::new(&cfg, &zeros).unwrap();
        let (truth, acq) = toy_acquisition(&cfg, 1);
        assert_eq!(net.recon_block(&truth, 0).unwrap(), truth);
        // full model = DC applied to the zero-filled start
        let expected = dc_layer(&acq.zero_filled(), &acq).unwrap();
        assert_eq!(net.forward(&acq).unwrap(), expected);
    }

    #[test]
    fn block_preserves_shape_for_odd_grids() {
        let cfg = ModelConfig {
            height: 9,
            width: 7,
            downsample: 2,
            ..toy_config()
        };
        let net = Network::new(&cfg, &init_model(&cfg).unwrap()).unwrap();
        let x = ComplexImage::from_fn(9, 7, |r, c| Complex64::new(r as f64 * 0.1, c as f64 * 0.2));
        assert_eq!(net.recon_block(&x, 0).unwrap().shape(), (9, 7));
    }

    #[test]
    fn one_by_one_kernel_block_matches_hand_arithmetic() {
        // widths [1,1], 1×1 kernels, downsample 1: every layer is a per-pixel
        // affine map, so the block is a scalar function of (re, im).
        let cfg = ModelConfig {
            cascades: 1,
            widths: vec![1, 1],
            kernel_size: 1,
            downsample: 1,
            height: 2,
            width: 2,
            coils: 1,
            seed: 0,
        };
        let mut params = ParameterSet::zeros(&cfg.layout());
        let values: [(&str, &[f32]); 10] = [
            ("cascade0.enc.weight", &[0.5, -1.0]),
            ("cascade0.enc.bias", &[0.25]),
            ("cascade0.down.weight", &[2.0]),
            ("cascade0.down.bias", &[-0.5]),
            ("cascade0.mid.weight", &[1.5]),
            ("cascade0.mid.bias", &[0.0]),
            ("cascade0.dec.weight", &[-1.0]),
            ("cascade0.dec.bias", &[1.0]),
            ("cascade0.out.weight", &[2.0, -3.0]),
            ("cascade0.out.bias", &[0.1, 0.2]),
        ];
        for (name, v) in values {
            let p = params.entries_mut().iter_mut().find(|p| p.name == name).unwrap();
            p.values = v.to_vec();
        }
        let net = Network::new(&cfg, &params).unwrap();
        let x = ComplexImage::from_vec(
            2,
            2,
            vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(2.0, 0.5),
                Complex64::new(-1.0, -1.0),
            ],
        )
        .unwrap();
        let relu = |v: f64| v.max(0.0);
        let out = net.recon_block(&x, 0).unwrap();
        for (z, o) in x.data().iter().zip(out.data()) {
            let e = relu(0.5 * z.re - 1.0 * z.im + 0.25);
            let d = relu(2.0 * e - 0.5);
            let m = relu(1.5 * d);
            let r = relu(-m + 1.0);
            let expected = Complex64::new(z.re + 2.0 * r + 0.1f32 as f64, z.im - 3.0 * r + 0.2f32 as f64);
            assert!((o - expected).norm() < 1e-12, "{z} -> {o} vs {expected}");
        }
    }

    #[test]
    fn output_is_consistent_with_single_coil_data() {
        let cfg = ModelConfig {
            coils: 1,
            cascades: 2,
            ..toy_config()
        };
        let (_, acq) = toy_acquisition(&cfg, 2);
        let net = Network::new(&cfg, &init_model(&cfg).unwrap()).unwrap();
        let out = net.forward(&acq).unwrap();
        assert!(consistency_residual(&out, &acq).unwrap() < 1e-6);
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let cfg = toy_config();
        let (_, acq) = toy_acquisition(&cfg, 3);
        let net = Network::new(&cfg, &init_model(&cfg).unwrap()).unwrap();
        let trace = net.trace(&acq).unwrap();
        let (grads, input) = Network::backward(trace, &ComplexImage::zeros(8, 8));
        assert!(grads.is_zero());
        assert!(input.data().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn gradient_through_dc_with_empty_mask_is_identity_on_support() {
        let cfg = toy_config();
        let (_, acq) = toy_acquisition(&cfg, 4);
        let acq = Acquisition::new(
            crate::mri::CoilArray::zeros(cfg.coils, 8, 8),
            acq.maps.clone(),
            SamplingMask::empty(8, 8),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = ComplexImage::from_fn(8, 8, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let back = dc_backward(&g, &acq);
        for (p, &inside) in acq.maps.support().iter().enumerate() {
            let expected = if inside { g.data()[p] } else { Complex64::new(0.0, 0.0) };
            assert!((back.data()[p] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn mismatched_parameters_are_rejected() {
        let cfg = toy_config();
        let params = init_model(&ModelConfig { cascades: 2, ..cfg.clone() }).unwrap();
        assert!(matches!(Network::new(&cfg, &params), Err(Error::Dimension(_))));
        let net = Network::new(&cfg, &init_model(&cfg).unwrap()).unwrap();
        let (_, acq) = toy_acquisition(&ModelConfig { coils: 3, ..cfg }, 1);
        assert!(matches!(net.forward(&acq), Err(Error::Dimension(_))));
    }
}
