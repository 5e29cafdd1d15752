//! `MRDS` dataset container and the synthetic dataset builder.
//!
//! ```text
//! magic "MRDS" | version u32 | manifest_len u32 | manifest (UTF-8 JSON)
//! | records
//! ```
//!
//! Every record has the same size and is a sequence of little-endian `f32`
//! arrays; complex values are stored as interleaved `(re, im)` pairs:
//!
//! ```text
//! ground truth   H·W complex
//! foreground     H·W        (0 or 1)
//! sensitivities  C·H·W complex, coil-major
//! per acceleration, in manifest order:
//!   mask         W          (0 or 1 per column)
//!   k-space      C·H·W complex, coil-major
//! ```
//!
//! `offsets[i]` is the byte position of record `i` relative to the first
//! byte after the manifest.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::interp::Reader;
use crate::losses::ForegroundMask;
use crate::mri::{Acquisition, CoilArray, ComplexImage, MultiCoilKSpace, SamplingMask, SensitivityMaps};
use crate::sim::{generate_phantom, generate_sensitivities, generate_vd_mask, simulate_acquisition, MaskSpec};

pub const DATASET_MAGIC: [u8; 4] = *b"MRDS";
pub const DATASET_VERSION: u32 = 1;

/// Tolerance on the stored maps' normalization after 32-bit rounding.
const MAP_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub height: usize,
    pub width: usize,
    pub coils: usize,
    pub train_slices: usize,
    pub val_slices: usize,
    pub accelerations: Vec<f64>,
    pub center_fraction: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            height: 64,
            width: 64,
            coils: 4,
            train_slices: 200,
            val_slices: 40,
            accelerations: vec![4.0, 8.0],
            center_fraction: 0.08,
            noise_sigma: 0.0,
            seed: 42,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::Config("grid must be at least 16x16".into()));
        }
        if self.coils == 0 {
            return Err(Error::Config("at least one coil is required".into()));
        }
        if self.train_slices + self.val_slices == 0 {
            return Err(Error::Config("dataset must contain at least one slice".into()));
        }
        if self.accelerations.is_empty() {
            return Err(Error::Config("at least one acceleration factor is required".into()));
        }
        for &acceleration in &self.accelerations {
            MaskSpec {
                acceleration,
                center_fraction: self.center_fraction,
                seed: 0,
            }
            .validate()?;
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub slices: usize,
    /// The last `validation` slices form the validation split.
    pub validation: usize,
    pub height: usize,
    pub width: usize,
    pub coils: usize,
    pub accelerations: Vec<f64>,
    pub center_fraction: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub record_bytes: u64,
    pub offsets: Vec<u64>,
}

impl DatasetManifest {
    fn record_len(height: usize, width: usize, coils: usize, afs: usize) -> u64 {
        let hw = height * width;
        (4 * (3 * hw + 2 * coils * hw + afs * (width + 2 * coils * hw))) as u64
    }

    fn validate(&self) -> Result<(), FormatError> {
        let header = |m: String| Err(FormatError::Header(m));
        if self.offsets.len() != self.slices {
            return header(format!("{} offsets for {} slices", self.offsets.len(), self.slices));
        }
        if self.validation > self.slices {
            return header("validation split exceeds slice count".into());
        }
        if self.height == 0 || self.width == 0 || self.coils == 0 || self.accelerations.is_empty() {
            return header("empty grid, coil or acceleration list".into());
        }
        let expected = Self::record_len(self.height, self.width, self.coils, self.accelerations.len());
        if self.record_bytes != expected {
            return header(format!("record size {} where the grid implies {expected}", self.record_bytes));
        }
        if self.offsets.windows(2).any(|w| w[1] < w[0] + self.record_bytes) {
            return header("record offsets are not strictly increasing".into());
        }
        Ok(())
    }
}

/// One acquisition of a slice at a given acceleration.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledData {
    pub acceleration: f64,
    pub mask: SamplingMask,
    pub kspace: MultiCoilKSpace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceRecord {
    pub ground_truth: ComplexImage,
    pub foreground: ForegroundMask,
    pub maps: SensitivityMaps,
    pub sampled: Vec<SampledData>,
}

impl SliceRecord {
    pub fn acquisition(&self, af_index: usize) -> Acquisition {
        let s = &self.sampled[af_index];
        Acquisition::new(s.kspace.clone(), self.maps.clone(), s.mask.clone()).expect("record validated on construction")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    manifest: DatasetManifest,
    slices: Vec<SliceRecord>,
}

impl Dataset {
    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn slices(&self) -> &[SliceRecord] {
        &self.slices
    }

    pub fn training(&self) -> &[SliceRecord] {
        &self.slices[..self.slices.len() - self.manifest.validation]
    }

    pub fn validation(&self) -> &[SliceRecord] {
        &self.slices[self.slices.len() - self.manifest.validation..]
    }

    /// Index of `acceleration` in the manifest's list.
    pub fn af_index(&self, acceleration: f64) -> Result<usize> {
        self.manifest
            .accelerations
            .iter()
            .position(|&a| a == acceleration)
            .ok_or_else(|| {
                Error::Config(format!(
                    "acceleration {acceleration} not in dataset (have {:?})",
                    self.manifest.accelerations
                ))
            })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.manifest;
        let manifest = serde_json::to_string(m).expect("manifest serializes");
        let mut out = Vec::with_capacity(12 + manifest.len() + m.slices * m.record_bytes as usize);
        out.extend_from_slice(&DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for s in &self.slices {
            put_complex(&mut out, s.ground_truth.data());
            put_real(&mut out, s.foreground.values().iter().map(|&b| b as u8 as f32));
            put_complex(&mut out, s.maps.maps().data());
            for d in &s.sampled {
                put_real(&mut out, d.mask.columns().iter().map(|&b| b as u8 as f32));
                put_complex(&mut out, d.kspace.data());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != DATASET_MAGIC {
            return Err(FormatError::BadMagic {
                expected: DATASET_MAGIC,
                found: magic,
            }
            .into());
        }
        let version = r.u32("version")?;
        if version != DATASET_VERSION {
            return Err(FormatError::UnsupportedVersion {
                found: version,
                supported: DATASET_VERSION,
            }
            .into());
        }
        let text = r.string("manifest")?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| FormatError::Header(format!("manifest: {e}")))?;
        manifest.validate()?;
        let base = r.pos;
        let records = &bytes[base..];
        let end = manifest.offsets.last().map_or(0, |&o| o + manifest.record_bytes);
        if (records.len() as u64) < end {
            return Err(FormatError::Truncated("slice records").into());
        }
        if records.len() as u64 > end {
            return Err(FormatError::Header(format!("{} trailing bytes", records.len() as u64 - end)).into());
        }
        let slices = manifest
            .offsets
            .iter()
            .enumerate()
            .map(|(i, &offset)| {
                let start = offset as usize;
                let raw = &records[start..start + manifest.record_bytes as usize];
                decode_record(&manifest, raw).map_err(|e| FormatError::Header(format!("record {i}: {e}")).into())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { manifest, slices })
    }
}

fn put_real(out: &mut Vec<u8>, values: impl Iterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_complex(out: &mut Vec<u8>, values: &[Complex64]) {
    put_real(out, values.iter().flat_map(|z| [z.re as f32, z.im as f32]));
}

fn decode_record(m: &DatasetManifest, raw: &[u8]) -> Result<SliceRecord> {
    let mut floats = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")));
    let (h, w, c) = (m.height, m.width, m.coils);
    let hw = h * w;
    let mut real = |n: usize| -> Vec<f32> { floats.by_ref().take(n).collect() };
    let complex = |v: Vec<f32>| -> Vec<Complex64> {
        v.chunks_exact(2).map(|p| Complex64::new(p[0] as f64, p[1] as f64)).collect()
    };
    let binary = |v: &[f32], what: &str| -> Result<Vec<bool>> {
        v.iter()
            .map(|&x| match x {
                0.0 => Ok(false),
                1.0 => Ok(true),
                _ => Err(Error::Config(format!("{what} value {x} is not binary"))),
            })
            .collect()
    };
    let ground_truth = ComplexImage::from_vec(h, w, complex(real(2 * hw)))?;
    let support = binary(&real(hw), "foreground")?;
    let foreground = ForegroundMask::new(h, w, support.clone())?;
    let maps = SensitivityMaps::from_normalized(CoilArray::from_vec(c, h, w, complex(real(2 * c * hw)))?, support, MAP_TOLERANCE)?;
    let mut sampled = Vec::with_capacity(m.accelerations.len());
    for &acceleration in &m.accelerations {
        let mask = SamplingMask::from_columns(h, binary(&real(w), "mask")?);
        let kspace = CoilArray::from_vec(c, h, w, complex(real(2 * c * hw)))?;
        Acquisition::new(kspace.clone(), maps.clone(), mask.clone())?;
        sampled.push(SampledData {
            acceleration,
            mask,
            kspace,
        });
    }
    Ok(SliceRecord {
        ground_truth,
        foreground,
        maps,
        sampled,
    })
}

/// Generates every slice in memory. Values are rounded through the 32-bit
/// container so the result equals what a reader of the written file sees.
pub fn generate_dataset(config: &DataConfig) -> Result<Dataset> {
    config.validate()?;
    let (h, w, coils) = (config.height, config.width, config.coils);
    let n = config.train_slices + config.val_slices;
    let record_bytes = DatasetManifest::record_len(h, w, coils, config.accelerations.len());
    let manifest = DatasetManifest {
        slices: n,
        validation: config.val_slices,
        height: h,
        width: w,
        coils,
        accelerations: config.accelerations.clone(),
        center_fraction: config.center_fraction,
        noise_sigma: config.noise_sigma,
        seed: config.seed,
        record_bytes,
        offsets: (0..n as u64).map(|i| i * record_bytes).collect(),
    };
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let mut slices = Vec::with_capacity(n);
    for _ in 0..n {
        let phantom = generate_phantom(h, w, seeds.random())?;
        let maps = generate_sensitivities(coils, h, w, phantom.foreground.values())?;
        let mut sampled = Vec::with_capacity(config.accelerations.len());
        for &acceleration in &config.accelerations {
            let mask = generate_vd_mask(
                h,
                w,
                &MaskSpec {
                    acceleration,
                    center_fraction: config.center_fraction,
                    seed: seeds.random(),
                },
            )?;
            let kspace = simulate_acquisition(&phantom.image, &maps, &mask, config.noise_sigma, seeds.random())?;
            sampled.push(SampledData {
                acceleration,
                mask,
                kspace,
            });
        }
        slices.push(SliceRecord {
            ground_truth: phantom.image,
            foreground: phantom.foreground,
            maps,
            sampled,
        });
    }
    Dataset::from_bytes(&Dataset { manifest, slices }.to_bytes())
}

/// Generates the dataset and writes it to `path`.
pub fn build_dataset(config: &DataConfig, path: impl AsRef<Path>) -> Result<Dataset> {
    let dataset = generate_dataset(config)?;
    write_dataset(&dataset, path)?;
    Ok(dataset)
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_bytes(&bytes)
}
