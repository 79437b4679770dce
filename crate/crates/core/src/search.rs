//! The alternating architecture/weight search loop.
//!
//! One iteration runs `k` discriminator rounds (β step, then `W_D` step)
//! followed by one generator round (α step, then `W_G` step). Every round
//! draws `2m` noise vectors (and `2m` real images for the discriminator); the
//! architecture step uses the first half and the weight step the second.

use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sampler};
use crate::error::{Error, Result};
use crate::relax::{ArchParams, GumbelForm, MixStrategy, Relaxation};
use crate::space::{NetRole, NetworkTemplate};
use crate::supernet::SuperNet;
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// GAN objective family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Hinge,
    /// Logistic link, `log D(x) + log(1 - D(G(z)))`.
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub iters: usize,
    pub k_disc_steps: usize,
    pub batch_m: usize,
    pub lr_w: f64,
    pub adam_w: [f64; 2],
    pub lr_arch: f64,
    pub adam_arch: [f64; 2],
    pub weight_decay_arch: f64,
    pub tau: f64,
    /// Linear anneal target reached at the last iteration.
    pub tau_final: Option<f64>,
    pub gumbel_form: GumbelForm,
    pub arch_loss: LossKind,
    pub weight_loss: LossKind,
    /// Architecture snapshot period.
    pub snapshot_every: usize,
    /// Evaluate every candidate separately instead of fusing convolutions.
    pub per_candidate: bool,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            iters: 2500,
            k_disc_steps: 1,
            batch_m: 100,
            lr_w: 2e-4,
            adam_w: [0.0, 0.9],
            lr_arch: 3e-4,
            adam_arch: [0.5, 0.9],
            weight_decay_arch: 1e-4,
            tau: 1.0,
            tau_final: None,
            gumbel_form: GumbelForm::LogProb,
            arch_loss: LossKind::Log,
            weight_loss: LossKind::Hinge,
            snapshot_every: 100,
            per_candidate: false,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let rate = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("search.{name} must be finite and non-negative, got {v}")))
            }
        };
        rate("lr_w", self.lr_w)?;
        rate("lr_arch", self.lr_arch)?;
        rate("weight_decay_arch", self.weight_decay_arch)?;
        for (name, b) in [("adam_w", self.adam_w), ("adam_arch", self.adam_arch)] {
            if b.iter().any(|v| !(0.0..1.0).contains(v)) {
                return Err(Error::Config(format!("search.{name} betas must lie in [0, 1), got {b:?}")));
            }
        }
        if self.batch_m == 0 {
            return Err(Error::Config("search.batch_m must be at least 1".into()));
        }
        if self.k_disc_steps == 0 {
            return Err(Error::Config("search.k_disc_steps must be at least 1".into()));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config("search.snapshot_every must be at least 1".into()));
        }
        for (name, t) in [("tau", Some(self.tau)), ("tau_final", self.tau_final)] {
            if let Some(t) = t {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(Error::Config(format!("search.{name} must be positive, got {t}")));
                }
            }
        }
        Ok(())
    }

    pub fn tau_at(&self, iter: usize) -> f64 {
        match self.tau_final {
            Some(end) if self.iters > 0 => self.tau + (end - self.tau) * iter as f64 / self.iters as f64,
            _ => self.tau,
        }
    }

    pub fn strategy(&self) -> MixStrategy {
        if self.per_candidate {
            MixStrategy::PerCandidate
        } else {
            MixStrategy::Fused
        }
    }

    pub fn weight_adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr_w, self.adam_w, 0.0)
    }

    pub fn arch_adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr_arch, self.adam_arch, self.weight_decay_arch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Decoupled: `p <- p * (1 - lr * wd)` before the Adam update.
    pub weight_decay: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, betas: [f64; 2], weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            beta1: betas[0],
            beta2: betas[1],
            weight_decay,
            eps: 1e-8,
        }
    }
}

/// First and second moments of one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam step over a parameter group.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Contract(format!(
                "adam: parameter {i} is {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gv = gv.as_f64();
            let mj = cfg.beta1 * m[j].as_f64() + (1.0 - cfg.beta1) * gv;
            let vj = cfg.beta2 * v[j].as_f64() + (1.0 - cfg.beta2) * gv * gv;
            m[j] = T::of(mj);
            v[j] = T::of(vj);
            let update = cfg.lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps);
            *pv = T::of(pv.as_f64() * decay - update);
        }
    }
    Ok(())
}

/// `mean log sigma(real) + mean log(1 - sigma(fake))`, the discriminator's
/// architecture objective (maximised).
pub fn arch_loss_d<T: Scalar>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    let nr = g.neg(real);
    let a = g.softplus(nr);
    let a = g.mean(a);
    let b = g.softplus(fake);
    let b = g.mean(b);
    let s = g.add(a, b)?;
    Ok(g.neg(s))
}

/// `mean log(1 - sigma(fake))`, the generator's architecture objective
/// (minimised).
pub fn arch_loss_g<T: Scalar>(g: &mut Graph<T>, fake: Var) -> Var {
    let b = g.softplus(fake);
    let b = g.mean(b);
    g.neg(b)
}

/// Discriminator loss to minimise.
pub fn weight_loss_d<T: Scalar>(g: &mut Graph<T>, real: Var, fake: Var, kind: LossKind) -> Result<Var> {
    match kind {
        LossKind::Hinge => {
            let nr = g.neg(real);
            let a = g.add_scalar(nr, 1.0);
            let a = g.relu(a);
            let a = g.mean(a);
            let b = g.add_scalar(fake, 1.0);
            let b = g.relu(b);
            let b = g.mean(b);
            g.add(a, b)
        }
        LossKind::Log => {
            let j = arch_loss_d(g, real, fake)?;
            Ok(g.neg(j))
        }
    }
}

/// Generator loss to minimise.
pub fn weight_loss_g<T: Scalar>(g: &mut Graph<T>, fake: Var, kind: LossKind) -> Var {
    match kind {
        LossKind::Hinge => {
            let m = g.mean(fake);
            g.neg(m)
        }
        LossKind::Log => arch_loss_g(g, fake),
    }
}

/// One optimizer step of the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Beta,
    WeightsD,
    Alpha,
    WeightsG,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Beta => "beta",
            Phase::WeightsD => "W_D",
            Phase::Alpha => "alpha",
            Phase::WeightsG => "W_G",
        })
    }
}

/// Per-iteration losses (the minimised quantity of each phase, averaged over
/// the `k` discriminator rounds) and the mean edge entropy afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub loss_d_arch: f64,
    pub loss_d_w: f64,
    pub loss_g_arch: f64,
    pub loss_g_w: f64,
    pub mean_edge_entropy: f64,
}

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Streams {
    pub data: ChaCha8Rng,
    pub gumbel: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub init: ChaCha8Rng,
    pub random_arch: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams {
            data: stream(seed, 1),
            gumbel: stream(seed, 2),
            noise: stream(seed, 3),
            init: stream(seed, 4),
            random_arch: stream(seed, 5),
        }
    }
}

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn normal_noise(rng: &mut impl Rng, n: usize, dim: usize) -> Tensor<f32> {
    Tensor::from_fn([n, dim], |_| rng.sample::<f32, _>(StandardNormal))
}

/// Everything needed to continue a search bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    pub config: SearchConfig,
    pub template: NetworkTemplate,
    pub g: SuperNet<f32>,
    pub d: SuperNet<f32>,
    pub arch: ArchParams<f32>,
    pub adam_wg: AdamState<f32>,
    pub adam_wd: AdamState<f32>,
    pub adam_alpha: AdamState<f32>,
    pub adam_beta: AdamState<f32>,
    pub iter: usize,
    pub streams: Streams,
    pub sampler: Sampler,
}

struct Pass {
    out: Var,
    params: Vec<Var>,
    logits: Vec<Var>,
}

impl SearchState {
    pub fn new(config: SearchConfig, template: NetworkTemplate, data: &Dataset) -> Result<Self> {
        config.validate()?;
        let gt = &template.generator;
        if data.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        if data.resolution() != gt.output_resolution() || data.channels() != gt.img_channels {
            return Err(Error::Config(format!(
                "dataset images are {}x{}x{}, generator emits {}x{}x{}",
                data.channels(),
                data.resolution(),
                data.resolution(),
                gt.img_channels,
                gt.output_resolution(),
                gt.output_resolution()
            )));
        }
        let mut streams = Streams::new(config.seed);
        let g = SuperNet::super_generator(gt, &mut streams.init)?;
        let d = SuperNet::super_discriminator(&template.discriminator, &mut streams.init)?;
        let arch = ArchParams::zeros(&template, config.tau);
        Ok(SearchState {
            adam_wg: AdamState::new(g.params().tensors()),
            adam_wd: AdamState::new(d.params().tensors()),
            adam_alpha: AdamState::new(&arch.alpha.logits),
            adam_beta: AdamState::new(&arch.beta.logits),
            sampler: Sampler::new(data.len()),
            config,
            template,
            g,
            d,
            arch,
            iter: 0,
            streams,
        })
    }

    fn relaxation(&self) -> Relaxation {
        Relaxation::new(self.config.tau_at(self.iter), self.config.gumbel_form)
    }

    fn forward(
        &mut self,
        g: &mut Graph<f32>,
        net: NetRole,
        input: Var,
        weights_grad: bool,
        arch_grad: bool,
    ) -> Result<Pass> {
        let relax = self.relaxation();
        let logits = self.arch.group(net).bind(g, arch_grad);
        let mix = relax.edge_weights(g, &logits, &mut self.streams.gumbel)?;
        let strategy = self.config.strategy();
        let model = match net {
            NetRole::Generator => &self.g,
            NetRole::Discriminator => &self.d,
        };
        let params = model.params().bind(g, weights_grad);
        let out = model.forward(g, &params, input, Some(&mix), strategy)?;
        Ok(Pass { out, params, logits })
    }

    fn fake(&mut self, g: &mut Graph<f32>, z: Tensor<f32>, weights_grad: bool, arch_grad: bool) -> Result<Pass> {
        let z = g.constant(z);
        self.forward(g, NetRole::Generator, z, weights_grad, arch_grad)
    }

    fn disc_round(&mut self, phase: Phase, real: Tensor<f32>, z: Tensor<f32>) -> Result<f64> {
        let m = z.shape()[0];
        let mut g = Graph::new();
        let fake = self.fake(&mut g, z, false, false)?;
        let fake = g.value(fake.out).clone();
        let both = g.constant(Tensor::cat_rows(&[&real, &fake])?);
        let arch = phase == Phase::Beta;
        let pass = self.forward(&mut g, NetRole::Discriminator, both, !arch, arch)?;
        let r = g.slice_rows(pass.out, 0, m)?;
        let f = g.slice_rows(pass.out, m, m)?;
        let kind = if arch { self.config.arch_loss } else { self.config.weight_loss };
        let loss = weight_loss_d(&mut g, r, f, kind)?;
        self.finish(&mut g, loss, phase, pass)
    }

    fn gen_round(&mut self, phase: Phase, z: Tensor<f32>) -> Result<f64> {
        let mut g = Graph::new();
        let arch = phase == Phase::Alpha;
        let fake = self.fake(&mut g, z, !arch, arch)?;
        let d = self.forward(&mut g, NetRole::Discriminator, fake.out, false, false)?;
        let kind = if arch { self.config.arch_loss } else { self.config.weight_loss };
        let loss = weight_loss_g(&mut g, d.out, kind);
        self.finish(&mut g, loss, phase, fake)
    }

    fn finish(&mut self, g: &mut Graph<f32>, loss: Var, phase: Phase, pass: Pass) -> Result<f64> {
        let value = g.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite {phase} loss at iteration {}",
                self.iter + 1
            )));
        }
        g.backward(loss)?;
        let adam_w = self.config.weight_adam();
        let adam_a = self.config.arch_adam();
        match phase {
            Phase::Beta | Phase::Alpha => {
                let grads = pass
                    .logits
                    .iter()
                    .map(|&v| g.grad(v).cloned().expect("logits bound with grad"))
                    .collect::<Vec<_>>();
                let (group, state) = if phase == Phase::Beta {
                    (&mut self.arch.beta, &mut self.adam_beta)
                } else {
                    (&mut self.arch.alpha, &mut self.adam_alpha)
                };
                adam_step(&mut group.logits, &grads, state, &adam_a)?;
            }
            Phase::WeightsD | Phase::WeightsG => {
                let (net, state) = if phase == Phase::WeightsD {
                    (&mut self.d, &mut self.adam_wd)
                } else {
                    (&mut self.g, &mut self.adam_wg)
                };
                let grads = net.params().grads(g, &pass.params)?;
                adam_step(net.params_mut().tensors_mut(), &grads, state, &adam_w)?;
            }
        }
        Ok(value)
    }

    fn tag(&self, phase: Phase, e: Error) -> Error {
        match e {
            Error::Numeric(msg) if !msg.contains("loss at iteration") => {
                Error::Numeric(format!("{phase} step of iteration {}: {msg}", self.iter + 1))
            }
            other => other,
        }
    }

    /// Runs one iteration; returns its record and the phases in the order
    /// they were applied.
    pub fn step(&mut self, data: &Dataset) -> Result<(LogRecord, Vec<Phase>)> {
        let m = self.config.batch_m;
        let nd = self.template.generator.noise_dim;
        let k = self.config.k_disc_steps;
        let mut phases = Vec::with_capacity(2 * k + 2);
        let (mut ld_a, mut ld_w) = (0.0, 0.0);
        for _ in 0..k {
            let real = self.sampler.next_batch(data, 2 * m, &mut self.streams.data);
            let z = normal_noise(&mut self.streams.noise, 2 * m, nd);
            let (r1, r2) = (real.slice_rows(0, m)?, real.slice_rows(m, m)?);
            let (z1, z2) = (z.slice_rows(0, m)?, z.slice_rows(m, m)?);
            ld_a += self.disc_round(Phase::Beta, r1, z1).map_err(|e| self.tag(Phase::Beta, e))?;
            phases.push(Phase::Beta);
            ld_w += self.disc_round(Phase::WeightsD, r2, z2).map_err(|e| self.tag(Phase::WeightsD, e))?;
            phases.push(Phase::WeightsD);
        }
        let z = normal_noise(&mut self.streams.noise, 2 * m, nd);
        let (z1, z2) = (z.slice_rows(0, m)?, z.slice_rows(m, m)?);
        let lg_a = self.gen_round(Phase::Alpha, z1).map_err(|e| self.tag(Phase::Alpha, e))?;
        phases.push(Phase::Alpha);
        let lg_w = self.gen_round(Phase::WeightsG, z2).map_err(|e| self.tag(Phase::WeightsG, e))?;
        phases.push(Phase::WeightsG);
        self.iter += 1;
        self.arch.tau = self.config.tau_at(self.iter);
        let record = LogRecord {
            iter: self.iter,
            loss_d_arch: ld_a / k as f64,
            loss_d_w: ld_w / k as f64,
            loss_g_arch: lg_a,
            loss_g_w: lg_w,
            mean_edge_entropy: self.arch.mean_edge_entropy()?,
        };
        Ok((record, phases))
    }

    /// Fresh generator samples from the current supernet.
    pub fn sample(&mut self, n: usize) -> Result<Tensor<f32>> {
        let z = normal_noise(&mut self.streams.noise, n, self.template.generator.noise_dim);
        let mut g = Graph::new();
        let pass = self.fake(&mut g, z, false, false)?;
        Ok(g.value(pass.out).clone())
    }

    /// Named view of every tensor in the state, for checkpoints.
    pub fn tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out = Vec::new();
        for (name, t) in self.g.params().iter().chain(self.d.params().iter()) {
            out.push((name.to_string(), t));
        }
        for (tag, group) in [("alpha", &self.arch.alpha), ("beta", &self.arch.beta)] {
            for ((id, _), t) in group.edges.iter().zip(&group.logits) {
                out.push((format!("{tag}/{id}"), t));
            }
        }
        let groups: [(&str, &AdamState<f32>, Vec<String>); 4] = [
            ("wg", &self.adam_wg, self.g.params().names().to_vec()),
            ("wd", &self.adam_wd, self.d.params().names().to_vec()),
            ("alpha", &self.adam_alpha, self.arch.alpha.edges.iter().map(|(e, _)| e.to_string()).collect()),
            ("beta", &self.adam_beta, self.arch.beta.edges.iter().map(|(e, _)| e.to_string()).collect()),
        ];
        for (tag, st, names) in groups {
            for (i, name) in names.iter().enumerate() {
                out.push((format!("adam/{tag}/m/{name}"), &st.m[i]));
                out.push((format!("adam/{tag}/v/{name}"), &st.v[i]));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<f32>)> {
        let mut out = Vec::new();
        let gn = self.g.params().names().to_vec();
        let dn = self.d.params().names().to_vec();
        let an: Vec<String> = self.arch.alpha.edges.iter().map(|(e, _)| e.to_string()).collect();
        let bn: Vec<String> = self.arch.beta.edges.iter().map(|(e, _)| e.to_string()).collect();
        for (n, t) in gn.iter().zip(self.g.params_mut().tensors_mut()) {
            out.push((n.clone(), t));
        }
        for (n, t) in dn.iter().zip(self.d.params_mut().tensors_mut()) {
            out.push((n.clone(), t));
        }
        for (n, t) in an.iter().zip(&mut self.arch.alpha.logits) {
            out.push((format!("alpha/{n}"), t));
        }
        for (n, t) in bn.iter().zip(&mut self.arch.beta.logits) {
            out.push((format!("beta/{n}"), t));
        }
        for (tag, st, names) in [
            ("wg", &mut self.adam_wg, &gn),
            ("wd", &mut self.adam_wd, &dn),
            ("alpha", &mut self.adam_alpha, &an),
            ("beta", &mut self.adam_beta, &bn),
        ] {
            for ((name, m), v) in names.iter().zip(st.m.iter_mut()).zip(st.v.iter_mut()) {
                out.push((format!("adam/{tag}/m/{name}"), m));
                out.push((format!("adam/{tag}/v/{name}"), v));
            }
        }
        out
    }
}

/// Result of [`run_search`].
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub log: Vec<LogRecord>,
    /// `(iteration, architecture)` at iteration 0 and every
    /// `snapshot_every` iterations, plus the final one.
    pub snapshots: Vec<(usize, ArchParams<f32>)>,
}

/// Iterates until `state.iter == state.config.iters`, calling `observe` after
/// every iteration.
pub fn run_search(
    state: &mut SearchState,
    data: &Dataset,
    mut observe: impl FnMut(&SearchState, &LogRecord) -> Result<()>,
) -> Result<SearchOutcome> {
    if data.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let every = state.config.snapshot_every;
    let mut snapshots = Vec::new();
    if state.iter == 0 {
        snapshots.push((0, state.arch.clone()));
    }
    let mut log = Vec::new();
    while state.iter < state.config.iters {
        let (record, _) = state.step(data)?;
        observe(state, &record)?;
        if state.iter.is_multiple_of(every) || state.iter == state.config.iters {
            snapshots.push((state.iter, state.arch.clone()));
        }
        log.push(record);
    }
    Ok(SearchOutcome { log, snapshots })
}
