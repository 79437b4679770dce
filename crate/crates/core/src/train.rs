//! Plain adversarial training of a derived generator.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sampler};
use crate::derive::{fixed_discriminator, DerivedArch};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, FeatureConfig};
use crate::relax::MixStrategy;
use crate::search::{adam_step, normal_noise, stream, weight_loss_d, weight_loss_g, AdamConfig, AdamState, LossKind};
use crate::space::NetworkTemplate;
use crate::supernet::DerivedNet;
use crate::tensor::{Graph, Tensor};

pub const TRAIN_DATA_STREAM: u64 = 11;
pub const TRAIN_NOISE_STREAM: u64 = 12;
pub const TRAIN_INIT_STREAM: u64 = 13;
pub const EVAL_NOISE_STREAM: u64 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Opponent {
    /// The discriminator recorded in the architecture file.
    Derived,
    /// A fixed residual-style down-cell stack.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch_g: usize,
    pub batch_d: usize,
    pub lr: f64,
    pub betas: [f64; 2],
    pub loss: LossKind,
    pub opponent: Opponent,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 1000,
            batch_g: 40,
            batch_d: 20,
            lr: 2e-4,
            betas: [0.0, 0.9],
            loss: LossKind::Hinge,
            opponent: Opponent::Derived,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_g == 0 || self.batch_d == 0 {
            return Err(Error::Config("train.batch_g and train.batch_d must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be >= 0, got {}", self.lr)));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Config(format!("train.betas must lie in [0, 1), got {:?}", self.betas)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub samples: usize,
    pub features: FeatureConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples: 500,
            features: FeatureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub loss_d: f64,
    pub loss_g: f64,
}

/// Trained networks and their optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub g: DerivedNet<f32>,
    pub d: DerivedNet<f32>,
    adam_g: AdamState<f32>,
    adam_d: AdamState<f32>,
    sampler: Sampler,
    data_rng: rand_chacha::ChaCha8Rng,
    noise_rng: rand_chacha::ChaCha8Rng,
    pub iter: usize,
}

/// Networks for an architecture: the generator plus its opponent.
pub fn instantiate(
    arch: &DerivedArch,
    template: &NetworkTemplate,
    opponent: Opponent,
    seed: u64,
) -> Result<(DerivedNet<f32>, DerivedNet<f32>)> {
    arch.validate(template)?;
    let mut rng = stream(seed, TRAIN_INIT_STREAM);
    let g = DerivedNet::derived_generator(&template.generator, &arch.generator_ops(), &mut rng)?;
    let d_ops = match opponent {
        Opponent::Derived => arch.discriminator_ops().ok_or_else(|| {
            Error::Config("architecture has no discriminator; use train.opponent = \"fixed\"".into())
        })?,
        Opponent::Fixed => fixed_discriminator(template).into_iter().map(|(_, op)| op).collect(),
    };
    let d = DerivedNet::derived_discriminator(&template.discriminator, &d_ops, &mut rng)?;
    Ok((g, d))
}

impl Trainer {
    pub fn new(
        arch: &DerivedArch,
        template: &NetworkTemplate,
        config: TrainConfig,
        data: &Dataset,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        let (g, d) = instantiate(arch, template, config.opponent, seed)?;
        if data.resolution() != template.generator.output_resolution()
            || data.channels() != template.generator.img_channels
        {
            return Err(Error::Config(format!(
                "dataset images are {}x{}x{}, generator emits {}x{}x{}",
                data.channels(),
                data.resolution(),
                data.resolution(),
                template.generator.img_channels,
                template.generator.output_resolution(),
                template.generator.output_resolution()
            )));
        }
        Ok(Trainer {
            adam_g: AdamState::new(g.params().tensors()),
            adam_d: AdamState::new(d.params().tensors()),
            sampler: Sampler::new(data.len()),
            data_rng: stream(seed, TRAIN_DATA_STREAM),
            noise_rng: stream(seed, TRAIN_NOISE_STREAM),
            config,
            g,
            d,
            iter: 0,
        })
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.config.lr, self.config.betas, 0.0)
    }

    fn noise_dim(&self) -> usize {
        self.g.input_shape()[0]
    }

    /// One discriminator update then one generator update.
    pub fn step(&mut self, data: &Dataset) -> Result<TrainRecord> {
        let (bd, bg) = (self.config.batch_d, self.config.batch_g);
        let nd = self.noise_dim();
        let adam = self.adam();
        let real = self.sampler.next_batch(data, bd, &mut self.data_rng);
        let z = normal_noise(&mut self.noise_rng, bd, nd);
        let mut g = Graph::new();
        let gp = self.g.params().bind(&mut g, false);
        let zv = g.constant(z);
        let fake = self.g.forward(&mut g, &gp, zv, None, MixStrategy::Fused)?;
        let both = Tensor::cat_rows(&[&real, g.value(fake)])?;
        let both = g.constant(both);
        let dp = self.d.params().bind(&mut g, true);
        let out = self.d.forward(&mut g, &dp, both, None, MixStrategy::Fused)?;
        let r = g.slice_rows(out, 0, bd)?;
        let f = g.slice_rows(out, bd, bd)?;
        let loss = weight_loss_d(&mut g, r, f, self.config.loss)?;
        let loss_d = finite(g.value(loss).item() as f64, "discriminator", self.iter + 1)?;
        g.backward(loss)?;
        let grads = self.d.params().grads(&g, &dp)?;
        adam_step(self.d.params_mut().tensors_mut(), &grads, &mut self.adam_d, &adam)?;

        let z = normal_noise(&mut self.noise_rng, bg, nd);
        let mut g = Graph::new();
        let gp = self.g.params().bind(&mut g, true);
        let zv = g.constant(z);
        let fake = self.g.forward(&mut g, &gp, zv, None, MixStrategy::Fused)?;
        let dp = self.d.params().bind(&mut g, false);
        let out = self.d.forward(&mut g, &dp, fake, None, MixStrategy::Fused)?;
        let loss = weight_loss_g(&mut g, out, self.config.loss);
        let loss_g = finite(g.value(loss).item() as f64, "generator", self.iter + 1)?;
        g.backward(loss)?;
        let grads = self.g.params().grads(&g, &gp)?;
        adam_step(self.g.params_mut().tensors_mut(), &grads, &mut self.adam_g, &adam)?;
        self.iter += 1;
        Ok(TrainRecord { iter: self.iter, loss_d, loss_g })
    }

    /// Samples from the generator using a dedicated noise stream.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Tensor<f32>> {
        sample_generator(&self.g, n, seed)
    }
}

fn finite(v: f64, what: &str, iter: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("non-finite {what} loss at training iteration {iter}")))
    }
}

pub fn sample_generator(gen: &DerivedNet<f32>, n: usize, seed: u64) -> Result<Tensor<f32>> {
    let nd = gen.input_shape()[0];
    let mut rng = stream(seed, EVAL_NOISE_STREAM);
    let mut chunks = Vec::new();
    let mut left = n;
    while left > 0 {
        let b = left.min(100);
        let z = normal_noise(&mut rng, b, nd);
        let mut g = Graph::new();
        let p = gen.params().bind(&mut g, false);
        let zv = g.constant(z);
        let out = gen.forward(&mut g, &p, zv, None, MixStrategy::Fused)?;
        chunks.push(g.value(out).clone());
        left -= b;
    }
    let refs: Vec<&Tensor<f32>> = chunks.iter().collect();
    Tensor::cat_rows(&refs)
}

/// Proxy of generator samples against held-out real images.
pub fn evaluate_generator(gen: &DerivedNet<f32>, heldout: &Dataset, cfg: &EvalConfig, seed: u64) -> Result<EvalReport> {
    let n = cfg.samples.min(heldout.len());
    let idx: Vec<usize> = (0..n).collect();
    let real = heldout.gather(&idx);
    let fake = sample_generator(gen, n, seed)?;
    evaluate(&real, &fake, cfg.features)
}

/// Result of [`train_derived`]. On divergence `error` holds the failure and
/// the networks are those of the last finite iteration.
#[derive(Debug)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub log: Vec<TrainRecord>,
    pub report: Option<EvalReport>,
    pub error: Option<Error>,
}

/// Trains for `config.iters` iterations, then evaluates on `heldout`.
#[allow(clippy::too_many_arguments)]
pub fn train_derived(
    arch: &DerivedArch,
    template: &NetworkTemplate,
    data: &Dataset,
    heldout: &Dataset,
    config: TrainConfig,
    eval: &EvalConfig,
    seed: u64,
    mut observe: impl FnMut(&TrainRecord),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(arch, template, config, data, seed)?;
    let mut log = Vec::with_capacity(trainer.config.iters);
    for _ in 0..trainer.config.iters {
        let before = trainer.clone();
        match trainer.step(data) {
            Ok(rec) if trainer.g.params().all_finite() && trainer.d.params().all_finite() => {
                observe(&rec);
                log.push(rec);
            }
            Ok(rec) => {
                return Ok(TrainOutcome {
                    trainer: before,
                    log,
                    report: None,
                    error: Some(Error::Numeric(format!("non-finite weights after training iteration {}", rec.iter))),
                })
            }
            Err(e @ Error::Numeric(_)) => {
                return Ok(TrainOutcome {
                    trainer: before,
                    log,
                    report: None,
                    error: Some(e),
                })
            }
            Err(e) => return Err(e),
        }
    }
    let report = evaluate_generator(&trainer.g, heldout, eval, seed)?;
    Ok(TrainOutcome {
        trainer,
        log,
        report: Some(report),
        error: None,
    })
}
