use std::fs;
use std::path::{Path, PathBuf};

use mrinterp::config::RunConfig;
use mrinterp::dataset::{build_dataset, read_dataset, Dataset, DatasetManifest};
use mrinterp::interp::{interpolate, load_checkpoint, save_checkpoint, sweep as interp_sweep, InterpSource, InterpSpec, ModelCheckpoint};
use mrinterp::losses::Magnitude;
use mrinterp::metrics::{evaluate, GroundTruth, MetricReport, Reconstructor, ZeroFilled};
use mrinterp::trainer::{train_phase, EpochRecord, ModelReconstructor, Phase, TrainReport};
use mrinterp::{Error, Result};

use crate::image::encode_png;

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.data.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `run.mrin` → `run.report.json`.
pub fn report_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("report.json")
}

pub fn label(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<DatasetManifest> {
    Ok(build_dataset(&cfg.data, out)?.manifest().clone())
}

pub fn train(
    cfg: &RunConfig,
    dataset: &Path,
    phase: Phase,
    pretrained: Option<&Path>,
    out: &Path,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if phase != Phase::SnPretrain && pretrained.is_none() {
        return Err(Error::Config(format!("--phase {phase} requires --pretrained")));
    }
    let data = read_dataset(dataset)?;
    let pretrained = pretrained.map(load_checkpoint).transpose()?;
    let (ckpt, report) = train_phase(&data, &cfg.model_config(), pretrained.as_ref(), &cfg.train_config(phase), progress)?;
    save_checkpoint(&ckpt, out)?;
    write(&report_path(out), report.to_json())?;
    Ok(report)
}

pub enum Mixing {
    Alpha(f64),
    Coefficients(Vec<f64>),
}

pub fn interp(sources: &[PathBuf], mixing: Mixing, allow_extrapolation: bool, out: &Path) -> Result<ModelCheckpoint> {
    let coefficients = match mixing {
        Mixing::Alpha(alpha) => {
            if sources.len() != 2 {
                return Err(Error::Coefficients("--alpha needs exactly two checkpoints".into()));
            }
            InterpSpec::two_model(alpha).coefficients
        }
        Mixing::Coefficients(c) => c,
    };
    let models = sources.iter().map(load_checkpoint).collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = sources.iter().map(|p| label(p)).collect();
    let refs: Vec<InterpSource<'_>> = models
        .iter()
        .zip(&labels)
        .map(|(checkpoint, label)| InterpSource { label, checkpoint })
        .collect();
    let spec = InterpSpec {
        coefficients,
        allow_extrapolation,
    };
    let ckpt = interpolate(&refs, &spec)?;
    save_checkpoint(&ckpt, out)?;
    Ok(ckpt)
}

pub enum EvalTarget {
    Checkpoint(PathBuf),
    ZeroFilled,
    GroundTruth,
}

fn acceleration_of(cfg: &RunConfig, data: &Dataset, requested: Option<f64>) -> Result<f64> {
    let af = requested.unwrap_or(cfg.train.acceleration);
    data.af_index(af)?;
    Ok(af)
}

/// Writes the report as JSON to `out` and as a table next to it.
pub fn eval(cfg: &RunConfig, dataset: &Path, target: EvalTarget, acceleration: Option<f64>, out: &Path) -> Result<MetricReport> {
    let data = read_dataset(dataset)?;
    let af = acceleration_of(cfg, &data, acceleration)?;
    let recon: Box<dyn Reconstructor> = match target {
        EvalTarget::Checkpoint(p) => {
            let ckpt = load_checkpoint(&p)?;
            Box::new(ModelReconstructor::from_checkpoint(label(&p), &ckpt)?)
        }
        EvalTarget::ZeroFilled => Box::new(ZeroFilled),
        EvalTarget::GroundTruth => Box::new(GroundTruth),
    };
    let report = evaluate(recon.as_ref(), &data, af, &cfg.metrics)?;
    write(out, report.to_json())?;
    write(&out.with_extension("tsv"), report.to_tsv())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub report: MetricReport,
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha\tnmse_mean\tnmse_std\tpsnr_mean\tpsnr_std\tssim_mean\tssim_std\n");
    for r in rows {
        let (m, s) = (&r.report.mean, &r.report.std);
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.alpha, m.nmse, s.nmse, m.psnr, s.psnr, m.ssim, s.ssim
        ));
    }
    out
}

/// Evaluates the interpolation path on `grid`, writing `sweep.tsv` and one
/// PNG per α for every configured slice into `out_dir`.
pub fn sweep(
    cfg: &RunConfig,
    sn: &Path,
    gan: &Path,
    dataset: &Path,
    grid: &[f64],
    acceleration: Option<f64>,
    out_dir: &Path,
) -> Result<Vec<SweepRow>> {
    let data = read_dataset(dataset)?;
    let af = acceleration_of(cfg, &data, acceleration)?;
    let af_index = data.af_index(af)?;
    for &i in &cfg.interp.sweep_slices {
        if i >= data.validation().len() {
            return Err(Error::Config(format!("sweep slice {i} out of range")));
        }
    }
    let (a, b) = (load_checkpoint(sn)?, load_checkpoint(gan)?);
    let (la, lb) = (label(sn), label(gan));
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let rows = interp_sweep(
        grid,
        InterpSource { label: &la, checkpoint: &a },
        InterpSource { label: &lb, checkpoint: &b },
        |alpha, model| {
            let recon = ModelReconstructor::from_checkpoint(format!("alpha={alpha}"), model)?;
            for &i in &cfg.interp.sweep_slices {
                let slice = &data.validation()[i];
                let image = Magnitude::of(&recon.reconstruct(slice, af_index)?);
                let max = Magnitude::of(&slice.ground_truth).max();
                let path = out_dir.join(format!("slice{i}_alpha{alpha:.4}.png"));
                write(&path, encode_png(&image.data, image.height, image.width, max))?;
            }
            evaluate(&recon, &data, af, &cfg.metrics)
        },
    )?;
    let rows: Vec<SweepRow> = rows.into_iter().map(|(alpha, report)| SweepRow { alpha, report }).collect();
    write(&out_dir.join("sweep.tsv"), sweep_table(&rows))?;
    Ok(rows)
}
