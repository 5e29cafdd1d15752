//! Foreground-restricted NMSE, PSNR and SSIM, and per-dataset reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SliceRecord};
use crate::error::{Error, Result};
use crate::losses::{ssim_map, ForegroundMask, LossConfig, Magnitude};
use crate::mri::ComplexImage;

fn check(rec: &Magnitude, reference: &Magnitude, m: &ForegroundMask) -> Result<()> {
    let shape = (reference.height, reference.width);
    if (rec.height, rec.width) != shape || (m.height(), m.width()) != shape {
        return Err(Error::Dimension(format!(
            "metric inputs disagree: {}x{}, {}x{}, mask {}x{}",
            rec.height,
            rec.width,
            reference.height,
            reference.width,
            m.height(),
            m.width()
        )));
    }
    Ok(())
}

/// `‖m(|rec| - |ref|)‖² / ‖m|ref|‖²`.
pub fn nmse(rec: &Magnitude, reference: &Magnitude, m: &ForegroundMask) -> Result<f64> {
    check(rec, reference, m)?;
    let (mut err, mut energy) = (0.0, 0.0);
    for ((a, b), &inside) in rec.data.iter().zip(&reference.data).zip(m.values()) {
        if inside {
            err += (a - b) * (a - b);
            energy += b * b;
        }
    }
    if energy == 0.0 {
        return Err(Error::UndefinedMetric("NMSE reference has no energy on the foreground"));
    }
    Ok(err / energy)
}

/// `10·log10(L² / MSE)` with `L` the foreground maximum of the reference.
/// A perfect reconstruction gives `+∞`.
pub fn psnr(rec: &Magnitude, reference: &Magnitude, m: &ForegroundMask) -> Result<f64> {
    check(rec, reference, m)?;
    let (mut sum, mut peak, mut n) = (0.0, 0.0f64, 0usize);
    for ((a, b), &inside) in rec.data.iter().zip(&reference.data).zip(m.values()) {
        if inside {
            sum += (a - b) * (a - b);
            peak = peak.max(*b);
            n += 1;
        }
    }
    if peak == 0.0 {
        return Err(Error::UndefinedMetric("PSNR reference is zero on the foreground"));
    }
    if sum == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / (sum / n as f64)).log10())
}

/// SSIM map averaged over the windows centred inside `m`.
pub fn ssim_metric(rec: &Magnitude, reference: &Magnitude, m: &ForegroundMask, config: &LossConfig) -> Result<f64> {
    check(rec, reference, m)?;
    let map = ssim_map(rec, reference, config)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, _) in m.values().iter().enumerate().filter(|(_, &v)| v) {
        if let Some(i) = map.window_at(p / m.width(), p % m.width()) {
            sum += map.values[i];
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("no SSIM window is centred on the foreground"));
    }
    Ok(sum / n as f64)
}

/// Pixels above 5% of the maximum, dilated once with a 3×3 neighbourhood.
pub fn estimate_foreground(image: &Magnitude) -> ForegroundMask {
    let (h, w) = (image.height, image.width);
    let threshold = 0.05 * image.max();
    let seed: Vec<bool> = image.data.iter().map(|&v| v > threshold).collect();
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = (r.saturating_sub(1)..(r + 2).min(h))
                .any(|rr| (c.saturating_sub(1)..(c + 2).min(w)).any(|cc| seed[rr * w + cc]));
        }
    }
    ForegroundMask::new(h, w, out).expect("same grid")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForegroundSource {
    /// The support stored with each slice.
    #[default]
    Stored,
    /// [`estimate_foreground`] on the ground-truth magnitude.
    Estimated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub foreground: ForegroundSource,
    pub ssim_window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        let l = LossConfig::default();
        MetricsConfig {
            foreground: ForegroundSource::Stored,
            ssim_window: l.ssim_window,
            k1: l.k1,
            k2: l.k2,
        }
    }
}

impl MetricsConfig {
    pub fn ssim_config(&self) -> LossConfig {
        LossConfig {
            ssim_window: self.ssim_window,
            k1: self.k1,
            k2: self.k2,
            ..LossConfig::default()
        }
    }
}

/// Serializes non-finite values as the strings `inf`, `-inf`, `nan`.
mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub nmse: f64,
    #[serde(with = "extended_float")]
    pub psnr: f64,
    pub ssim: f64,
}

impl SliceMetrics {
    pub fn compute(rec: &ComplexImage, reference: &ComplexImage, m: &ForegroundMask, config: &MetricsConfig) -> Result<Self> {
        let (r, f) = (Magnitude::of(rec), Magnitude::of(reference));
        Ok(SliceMetrics {
            nmse: nmse(&r, &f, m)?,
            psnr: psnr(&r, &f, m)?,
            ssim: ssim_metric(&r, &f, m, &config.ssim_config())?,
        })
    }
}

/// Mean and population standard deviation. An infinite mean (a perfect
/// slice in PSNR) reports a spread of zero if every value is equal and
/// infinity otherwise.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        let spread = if values.iter().all(|&v| v == values[0]) { 0.0 } else { f64::INFINITY };
        return (mean, spread);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub acceleration: f64,
    pub slices: Vec<SliceMetrics>,
    pub mean: SliceMetrics,
    pub std: SliceMetrics,
}

impl MetricReport {
    pub fn from_slices(model: impl Into<String>, acceleration: f64, slices: Vec<SliceMetrics>) -> Self {
        let stat = |f: fn(&SliceMetrics) -> f64| mean_std(&slices.iter().map(f).collect::<Vec<_>>());
        let (n, p, s) = (stat(|m| m.nmse), stat(|m| m.psnr), stat(|m| m.ssim));
        MetricReport {
            model: model.into(),
            acceleration,
            mean: SliceMetrics {
                nmse: n.0,
                psnr: p.0,
                ssim: s.0,
            },
            std: SliceMetrics {
                nmse: n.1,
                psnr: p.1,
                ssim: s.1,
            },
            slices,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("metric report: {e}")))
    }

    /// Tab-separated per-slice rows followed by `mean` and `std` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("slice\tnmse\tpsnr\tssim\n");
        let mut row = |label: String, m: &SliceMetrics| {
            out.push_str(&format!(
                "{label}\t{}\t{}\t{}\n",
                fmt_float(m.nmse),
                fmt_float(m.psnr),
                fmt_float(m.ssim)
            ));
        };
        for (i, m) in self.slices.iter().enumerate() {
            row(i.to_string(), m);
        }
        row("mean".into(), &self.mean);
        row("std".into(), &self.std);
        out
    }
}

/// Anything that turns a stored slice into a complex image.
pub trait Reconstructor: Sync {
    fn name(&self) -> String;
    fn reconstruct(&self, slice: &SliceRecord, af_index: usize) -> Result<ComplexImage>;
}

pub struct ZeroFilled;

impl Reconstructor for ZeroFilled {
    fn name(&self) -> String {
        "zero-filled".into()
    }

    fn reconstruct(&self, slice: &SliceRecord, af_index: usize) -> Result<ComplexImage> {
        Ok(slice.acquisition(af_index).zero_filled())
    }
}

pub struct GroundTruth;

impl Reconstructor for GroundTruth {
    fn name(&self) -> String {
        "ground-truth".into()
    }

    fn reconstruct(&self, slice: &SliceRecord, _af_index: usize) -> Result<ComplexImage> {
        Ok(slice.ground_truth.clone())
    }
}

pub fn foreground_for(slice: &SliceRecord, config: &MetricsConfig) -> ForegroundMask {
    match config.foreground {
        ForegroundSource::Stored => slice.foreground.clone(),
        ForegroundSource::Estimated => estimate_foreground(&Magnitude::of(&slice.ground_truth)),
    }
}

/// Metrics of `slice`'s reconstruction against its ground truth.
pub fn evaluate_slice(
    recon: &dyn Reconstructor,
    slice: &SliceRecord,
    af_index: usize,
    config: &MetricsConfig,
) -> Result<SliceMetrics> {
    let image = recon.reconstruct(slice, af_index)?;
    SliceMetrics::compute(&image, &slice.ground_truth, &foreground_for(slice, config), config)
}

/// Evaluates every validation slice at the given acceleration.
pub fn evaluate(recon: &dyn Reconstructor, dataset: &Dataset, acceleration: f64, config: &MetricsConfig) -> Result<MetricReport> {
    let af = dataset.af_index(acceleration)?;
    let slices = dataset
        .validation()
        .par_iter()
        .map(|s| evaluate_slice(recon, s, af, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_slices(recon.name(), acceleration, slices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> Magnitude {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Magnitude::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    fn half_mask(h: usize, w: usize) -> ForegroundMask {
        ForegroundMask::new(h, w, (0..h * w).map(|p| p % w < w / 2).collect()).unwrap()
    }

    #[test]
    fn identities() {
        let x = random(16, 16, 1);
        let m = half_mask(16, 16);
        let cfg = LossConfig::default();
        assert_eq!(nmse(&x, &x, &m).unwrap(), 0.0);
        assert_eq!(psnr(&x, &x, &m).unwrap(), f64::INFINITY);
        assert_eq!(ssim_metric(&x, &x, &m, &cfg).unwrap(), 1.0);
        let zero = Magnitude::new(16, 16, vec![0.0; 256]).unwrap();
        assert_eq!(nmse(&zero, &x, &m).unwrap(), 1.0);
        assert!(matches!(nmse(&x, &zero, &m), Err(Error::UndefinedMetric(_))));
        assert!(matches!(psnr(&x, &zero, &m), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn psnr_hand_value_and_scale_invariance() {
        let reference = Magnitude::new(2, 2, vec![1.0, 0.5, 0.5, 0.5]).unwrap();
        let rec = Magnitude::new(2, 2, vec![0.9, 0.6, 0.4, 0.6]).unwrap();
        let m = ForegroundMask::full(2, 2);
        assert!((psnr(&rec, &reference, &m).unwrap() - 20.0).abs() < 1e-9);
        let double = |x: &Magnitude| Magnitude::new(2, 2, x.data.iter().map(|v| 2.0 * v).collect()).unwrap();
        let p2 = psnr(&double(&rec), &double(&reference), &m).unwrap();
        assert!((p2 - 20.0).abs() < 1e-9);
    }

    #[test]
    fn full_mask_ssim_is_the_loss_ssim() {
        let (a, b) = (random(16, 16, 2), random(16, 16, 3));
        let cfg = LossConfig::default();
        let full = ssim_metric(&a, &b, &ForegroundMask::full(16, 16), &cfg).unwrap();
        assert!((full - crate::losses::ssim(&a, &b, &cfg).unwrap().value).abs() < 1e-12);
        let corner = ForegroundMask::new(16, 16, (0..256).map(|p| p == 0).collect()).unwrap();
        assert!(matches!(ssim_metric(&a, &b, &corner, &cfg), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn psnr_nmse_relation() {
        let (a, b) = (random(16, 16, 4), random(16, 16, 5));
        let m = half_mask(16, 16);
        let masked: Vec<f64> = m.apply(&b.data);
        let l = masked.iter().copied().fold(0.0, f64::max);
        let energy: f64 = masked.iter().map(|v| v * v).sum();
        let lhs = psnr(&a, &b, &m).unwrap();
        let rhs = 10.0 * (l * l * m.count() as f64 / energy).log10() - 10.0 * nmse(&a, &b, &m).unwrap().log10();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn foreground_estimate_dilates() {
        let mut data = vec![0.0; 64];
        data[27] = 1.0;
        data[0] = 0.01;
        let m = estimate_foreground(&Magnitude::new(8, 8, data).unwrap());
        assert_eq!(m.count(), 9);
        assert!(m.values()[18] && m.values()[36] && !m.values()[0]);
    }

    #[test]
    fn report_statistics_and_serialization() {
        let rows = vec![
            SliceMetrics { nmse: 0.1, psnr: 30.0, ssim: 0.9 },
            SliceMetrics { nmse: 0.3, psnr: 20.0, ssim: 0.7 },
        ];
        let r = MetricReport::from_slices("m", 4.0, rows);
        assert!((r.mean.nmse - 0.2).abs() < 1e-12 && (r.std.nmse - 0.1).abs() < 1e-12);
        assert!((r.std.psnr - 5.0).abs() < 1e-12);
        assert_eq!(MetricReport::from_json(&r.to_json()).unwrap(), r);
        assert_eq!(r.to_tsv().lines().count(), 5);

        let perfect = MetricReport::from_slices("gt", 4.0, vec![SliceMetrics { nmse: 0.0, psnr: f64::INFINITY, ssim: 1.0 }; 3]);
        let json = perfect.to_json();
        assert!(json.contains("\"inf\""));
        assert_eq!(MetricReport::from_json(&json).unwrap(), perfect);
        assert_eq!(perfect.std.psnr, 0.0);
        assert!(perfect.to_tsv().contains("\tinf\t"));
    }

    #[test]
    fn ground_truth_against_itself() {
        let ds = crate::dataset::generate_dataset(&crate::dataset::DataConfig {
            height: 16,
            width: 16,
            coils: 2,
            train_slices: 1,
            val_slices: 3,
            center_fraction: 0.1,
            ..Default::default()
        })
        .unwrap();
        let cfg = MetricsConfig::default();
        let r = evaluate(&GroundTruth, &ds, 4.0, &cfg).unwrap();
        assert_eq!(r.slices.len(), 3);
        assert!(r.slices.iter().all(|s| s.nmse == 0.0 && s.ssim == 1.0 && s.psnr == f64::INFINITY));
        let zf = evaluate(&ZeroFilled, &ds, 8.0, &cfg).unwrap();
        assert!(zf.mean.nmse > 0.0);
    }
}
