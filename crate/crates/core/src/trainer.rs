//! RMSProp training: supervised pretraining and the two finetuning branches.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SliceRecord};
use crate::error::{Error, Result};
use crate::interp::{LossTag, ModelCheckpoint};
use crate::losses::{lsgan_d_loss, magnitude_backward, sn_gan_loss, sn_loss, LossConfig, Magnitude};
use crate::metrics::{evaluate, MetricReport, MetricsConfig, Reconstructor};
use crate::mri::{Acquisition, ComplexImage};
use crate::network::{init_model, Discriminator, DiscriminatorConfig, Gradients, ModelConfig, Network, ParameterSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    SnPretrain,
    SnFinetune,
    SnGanFinetune,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::SnPretrain => "sn-pretrain",
            Phase::SnFinetune => "sn-finetune",
            Phase::SnGanFinetune => "sn-gan-finetune",
        })
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sn-pretrain" => Ok(Phase::SnPretrain),
            "sn-finetune" => Ok(Phase::SnFinetune),
            "sn-gan-finetune" => Ok(Phase::SnGanFinetune),
            other => Err(Error::Config(format!("unknown phase `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Acceleration factor of the training and validation data.
    pub acceleration: f64,
    pub loss: LossConfig,
    pub discriminator: DiscriminatorConfig,
    pub discriminator_learning_rate: f64,
    pub metrics: MetricsConfig,
}

impl TrainConfig {
    pub fn new(phase: Phase) -> Self {
        let finetune = phase != Phase::SnPretrain;
        TrainConfig {
            phase,
            epochs: if finetune { 5 } else { 15 },
            batch_size: 1,
            learning_rate: if finetune { 5e-5 } else { 1e-4 },
            rho: 0.99,
            epsilon: 1e-8,
            seed: 11,
            acceleration: 4.0,
            loss: LossConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            discriminator_learning_rate: 5e-5,
            metrics: MetricsConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.discriminator_learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) || self.epsilon < 0.0 {
            return Err(Error::Config("RMSProp needs 0 < rho < 1 and epsilon >= 0".into()));
        }
        self.loss.validate()?;
        self.discriminator.validate()
    }
}

/// `state ← ρ·state + (1−ρ)·g²`, `θ ← θ − lr·g/(√state + ε)`.
pub fn rmsprop_step(params: &mut [Vec<f64>], grads: &[Vec<f64>], state: &mut [Vec<f64>], lr: f64, rho: f64, eps: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::Dimension("parameter, gradient and state lists differ in length".into()));
    }
    for ((p, g), s) in params.iter_mut().zip(grads).zip(state.iter_mut()) {
        if p.len() != g.len() || p.len() != s.len() {
            return Err(Error::Dimension("parameter, gradient and state tensors differ in size".into()));
        }
        for ((p, &g), s) in p.iter_mut().zip(g).zip(s.iter_mut()) {
            *s = rho * *s + (1.0 - rho) * g * g;
            *p -= lr * g / (s.sqrt() + eps);
        }
    }
    Ok(())
}

fn zero_state(weights: &[Vec<f64>]) -> Vec<Vec<f64>> {
    weights.iter().map(|w| vec![0.0; w.len()]).collect()
}

/// Weights are kept at 32-bit precision between steps, matching storage.
fn round_to_storage(weights: &mut [Vec<f64>]) {
    weights.iter_mut().flatten().for_each(|w| *w = *w as f32 as f64);
}

/// 99th percentile of the zero-filled magnitude; 1 if that is zero.
pub fn normalization_scale(acq: &Acquisition) -> f64 {
    let mut mags = acq.zero_filled().magnitude();
    mags.sort_by(f64::total_cmp);
    let v = mags[((mags.len() - 1) as f64 * 0.99).floor() as usize];
    if v > 0.0 && v.is_finite() {
        v
    } else {
        1.0
    }
}

struct Sample<'a> {
    acq: Acquisition,
    reference: Magnitude,
    slice: &'a SliceRecord,
}

impl<'a> Sample<'a> {
    fn new(slice: &'a SliceRecord, af: usize) -> Self {
        let acq = slice.acquisition(af);
        let s = normalization_scale(&acq);
        let mut reference = Magnitude::of(&slice.ground_truth);
        reference.data.iter_mut().for_each(|v| *v /= s);
        Sample {
            acq: acq.scaled(1.0 / s),
            reference,
            slice,
        }
    }
}

/// A generator applied with the trainer's per-slice normalization.
pub struct ModelReconstructor {
    name: String,
    network: Network,
}

impl ModelReconstructor {
    pub fn new(name: impl Into<String>, network: Network) -> Self {
        ModelReconstructor {
            name: name.into(),
            network,
        }
    }

    pub fn from_checkpoint(name: impl Into<String>, ckpt: &ModelCheckpoint) -> Result<Self> {
        Ok(Self::new(name, Network::new(&ckpt.config()?, ckpt.params())?))
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn reconstruct_acquisition(&self, acq: &Acquisition) -> Result<ComplexImage> {
        let s = normalization_scale(acq);
        let mut out = self.network.forward(&acq.scaled(1.0 / s))?;
        out.scale(s);
        Ok(out)
    }
}

impl Reconstructor for ModelReconstructor {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn reconstruct(&self, slice: &SliceRecord, af_index: usize) -> Result<ComplexImage> {
        self.reconstruct_acquisition(&slice.acquisition(af_index))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean generator objective over the epoch.
    pub loss: f64,
    /// Mean discriminator objective, adversarial phase only.
    pub discriminator_loss: Option<f64>,
    pub validation_nmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub phase: Phase,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub validation: MetricReport,
    /// Steps whose foreground mask was empty, so the critic saw zeros.
    pub degenerate_masks: usize,
    pub wall_clock_seconds: f64,
    pub model: ModelConfig,
    pub config: TrainConfig,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check_grid(config: &ModelConfig, dataset: &Dataset) -> Result<()> {
    let m = dataset.manifest();
    if (config.height, config.width, config.coils) != (m.height, m.width, m.coils) {
        return Err(Error::Dimension(format!(
            "model expects {}x{} with {} coils, dataset has {}x{} with {} coils",
            config.height, config.width, config.coils, m.height, m.width, m.coils
        )));
    }
    if dataset.training().is_empty() || dataset.validation().is_empty() {
        return Err(Error::Config("dataset needs training and validation slices".into()));
    }
    Ok(())
}

/// SN objective for one sample: loss value and parameter gradients.
fn sn_step(net: &Network, sample: &Sample<'_>, cfg: &LossConfig) -> Result<(f64, Gradients)> {
    let trace = net.trace(&sample.acq)?;
    let out = trace.output();
    let loss = sn_loss(&Magnitude::of(&out), &sample.reference, cfg)?;
    let (grads, _) = Network::backward(trace, &magnitude_backward(&out, &loss.grad));
    Ok((loss.value, grads))
}

/// Sums per-sample results in index order so the result does not depend on
/// how the parallel map was scheduled.
fn reduce(results: Vec<(f64, Gradients)>) -> (f64, Gradients) {
    let n = results.len() as f64;
    let mut iter = results.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    grads.scale(1.0 / n);
    (loss / n, grads)
}

struct Run<'a> {
    dataset: &'a Dataset,
    config: &'a TrainConfig,
    model: ModelConfig,
    af: usize,
    start: Instant,
}

impl Run<'_> {
    fn validation_nmse(&self, net: &Network) -> Result<f64> {
        let recon = ModelReconstructor::new("", net.clone());
        Ok(evaluate(&recon, self.dataset, self.config.acceleration, &self.config.metrics)?.mean.nmse)
    }

    fn finish(
        &self,
        net: Network,
        template: &ParameterSet,
        tag: LossTag,
        epochs: Vec<EpochRecord>,
        degenerate_masks: usize,
    ) -> Result<(ModelCheckpoint, TrainReport)> {
        let params = net.parameters(template)?;
        let ckpt = ModelCheckpoint::new(&self.model, tag, params)?;
        let recon = ModelReconstructor::new(tag.to_string(), net);
        let validation = evaluate(&recon, self.dataset, self.config.acceleration, &self.config.metrics)?;
        let report = TrainReport {
            phase: self.config.phase,
            seed: self.config.seed,
            epochs,
            validation,
            degenerate_masks,
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
            model: self.model.clone(),
            config: self.config.clone(),
        };
        Ok((ckpt, report))
    }

    fn batches(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.dataset.training().len()).collect();
        order.shuffle(rng);
        order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect()
    }

    fn samples(&self, batch: &[usize]) -> Vec<Sample<'_>> {
        batch
            .iter()
            .map(|&i| Sample::new(&self.dataset.training()[i], self.af))
            .collect()
    }
}

fn supervised(
    run: Run<'_>,
    params: ParameterSet,
    tag: LossTag,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelCheckpoint, TrainReport)> {
    let cfg = run.config;
    let mut net = Network::new(&run.model, &params)?;
    let mut state = zero_state(net.weights());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        let batches = run.batches(&mut rng);
        for (step, batch) in batches.iter().enumerate() {
            let samples = run.samples(batch);
            let results = samples
                .par_iter()
                .map(|s| sn_step(&net, s, &cfg.loss))
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = reduce(results);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            total += loss * batch.len() as f64;
            rmsprop_step(net.weights_mut(), &grads.0, &mut state, cfg.learning_rate, cfg.rho, cfg.epsilon)?;
            round_to_storage(net.weights_mut());
        }
        let record = EpochRecord {
            epoch,
            loss: total / run.dataset.training().len() as f64,
            discriminator_loss: None,
            validation_nmse: run.validation_nmse(&net)?,
        };
        progress(&record);
        epochs.push(record);
    }
    run.finish(net, &params, tag, epochs, 0)
}

fn start<'a>(dataset: &'a Dataset, model: ModelConfig, config: &'a TrainConfig) -> Result<Run<'a>> {
    config.validate()?;
    model.validate()?;
    check_grid(&model, dataset)?;
    Ok(Run {
        dataset,
        config,
        af: dataset.af_index(config.acceleration)?,
        model,
        start: Instant::now(),
    })
}

fn pretrained_model(pretrained: &ModelCheckpoint) -> Result<ModelConfig> {
    pretrained.validate()?;
    pretrained.config()
}

/// Pretraining from the configured initialization with the SN objective.
pub fn train_sn(
    dataset: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelCheckpoint, TrainReport)> {
    let run = start(dataset, model.clone(), config)?;
    supervised(run, init_model(model)?, LossTag::Sn, progress)
}

/// Continues SN training from `pretrained`.
pub fn finetune_sn(
    pretrained: &ModelCheckpoint,
    dataset: &Dataset,
    config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelCheckpoint, TrainReport)> {
    let run = start(dataset, pretrained_model(pretrained)?, config)?;
    supervised(run, pretrained.params().clone(), LossTag::Sn, progress)
}

/// Adversarial finetuning from `pretrained`: per batch, one critic update on
/// masked real and fake magnitudes, then one generator update on the same
/// forward pass against the updated critic.
pub fn finetune_sn_gan(
    pretrained: &ModelCheckpoint,
    dataset: &Dataset,
    config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelCheckpoint, TrainReport)> {
    let run = start(dataset, pretrained_model(pretrained)?, config)?;
    let cfg = run.config;
    let params = pretrained.params().clone();
    let mut net = Network::new(&run.model, &params)?;
    let mut disc = Discriminator::new(&cfg.discriminator, &cfg.discriminator.init()?)?;
    let mut g_state = zero_state(net.weights());
    let mut d_state = zero_state(disc.weights_mut());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut degenerate = 0usize;
    let (h, w) = (run.model.height, run.model.width);
    for epoch in 1..=cfg.epochs {
        let (mut g_total, mut d_total) = (0.0, 0.0);
        for (step, batch) in run.batches(&mut rng).iter().enumerate() {
            let samples = run.samples(batch);
            let traces = samples
                .par_iter()
                .map(|s| net.trace(&s.acq))
                .collect::<Result<Vec<_>>>()?;
            let outputs: Vec<ComplexImage> = traces.iter().map(|t| t.output()).collect();

            let critic = &disc;
            let d_results = samples
                .par_iter()
                .zip(&outputs)
                .map(|(s, out)| {
                    let m = &s.slice.foreground;
                    let real = critic.trace(&m.apply(&s.reference.data), h, w)?;
                    let fake = critic.trace(&m.apply(&Magnitude::of(out).data), h, w)?;
                    let (dr, df) = (real.score(), fake.score());
                    let (mut g, _) = Discriminator::backward(real, dr - 1.0);
                    g.add_assign(&Discriminator::backward(fake, df).0);
                    Ok((lsgan_d_loss(dr, df), g))
                })
                .collect::<Result<Vec<_>>>()?;
            let (d_loss, d_grads) = reduce(d_results);
            if !d_loss.is_finite() || !d_grads.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            rmsprop_step(
                disc.weights_mut(),
                &d_grads.0,
                &mut d_state,
                cfg.discriminator_learning_rate,
                cfg.rho,
                cfg.epsilon,
            )?;
            round_to_storage(disc.weights_mut());

            let critic = &disc;
            let g_results = traces
                .into_par_iter()
                .zip(samples.par_iter())
                .zip(outputs.par_iter())
                .map(|((trace, s), out)| {
                    let loss = sn_gan_loss(&Magnitude::of(out), &s.reference, &s.slice.foreground, critic, &cfg.loss)?;
                    let (grads, _) = Network::backward(trace, &magnitude_backward(out, &loss.grad));
                    Ok(((loss.value, grads), loss.degenerate_mask))
                })
                .collect::<Result<Vec<_>>>()?;
            degenerate += g_results.iter().filter(|r| r.1).count();
            let (g_loss, g_grads) = reduce(g_results.into_iter().map(|r| r.0).collect());
            if !g_loss.is_finite() || !g_grads.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            rmsprop_step(net.weights_mut(), &g_grads.0, &mut g_state, cfg.learning_rate, cfg.rho, cfg.epsilon)?;
            round_to_storage(net.weights_mut());
            g_total += g_loss * batch.len() as f64;
            d_total += d_loss * batch.len() as f64;
        }
        let n = run.dataset.training().len() as f64;
        let record = EpochRecord {
            epoch,
            loss: g_total / n,
            discriminator_loss: Some(d_total / n),
            validation_nmse: run.validation_nmse(&net)?,
        };
        progress(&record);
        epochs.push(record);
    }
    run.finish(net, &params, LossTag::SnGan, epochs, degenerate)
}

/// Dispatches on `config.phase`. Finetuning phases require `pretrained`.
pub fn train_phase(
    dataset: &Dataset,
    model: &ModelConfig,
    pretrained: Option<&ModelCheckpoint>,
    config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelCheckpoint, TrainReport)> {
    match (config.phase, pretrained) {
        (Phase::SnPretrain, _) => train_sn(dataset, model, config, progress),
        (Phase::SnFinetune, Some(p)) => finetune_sn(p, dataset, config, progress),
        (Phase::SnGanFinetune, Some(p)) => finetune_sn_gan(p, dataset, config, progress),
        (phase, None) => Err(Error::Config(format!("phase {phase} needs a pretrained checkpoint"))),
    }
}
