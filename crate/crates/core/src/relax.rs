//! Continuous relaxation of the per-edge operation choice.
//!
//! Each edge carries a logit vector; its softmax is the edge's operation
//! distribution, and a Gumbel-softmax sample of that distribution weights the
//! candidate outputs of a [`MixedOp`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops;
use crate::params::{ParamId, ParamStore};
use crate::space::{Activation, CandidateRole, EdgeId, EdgeSpec, NetRole, NetworkTemplate, OpKind};
use crate::tensor::{dense_taps, Graph, Scalar, Tensor, Var};

/// Where the Gumbel perturbation is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GumbelForm {
    /// `softmax((log p + g) / tau)`; argmax samples follow `p`.
    #[default]
    LogProb,
    /// `softmax((p + g) / tau)`, perturbing the probability itself.
    Printed,
}

/// Logit vectors for one network, one per searchable edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchGroup<T> {
    pub edges: Vec<(EdgeId, CandidateRole)>,
    pub logits: Vec<Tensor<T>>,
}

impl<T: Scalar> ArchGroup<T> {
    pub fn zeros(edges: impl IntoIterator<Item = (EdgeId, EdgeSpec)>) -> Self {
        let edges: Vec<_> = edges.into_iter().map(|(id, e)| (id, e.role)).collect();
        let logits = edges.iter().map(|(_, r)| Tensor::zeros([r.len()])).collect();
        ArchGroup { edges, logits }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn position(&self, id: &EdgeId) -> Option<usize> {
        self.edges.iter().position(|(e, _)| e == id)
    }

    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> Vec<Var> {
        self.logits.iter().map(|t| g.leaf(t.clone(), requires_grad)).collect()
    }

    pub fn probs(&self) -> Result<Vec<Vec<f64>>> {
        self.logits
            .iter()
            .map(|t| edge_probs(&t.data().iter().map(|v| v.as_f64()).collect::<Vec<_>>()))
            .collect()
    }
}

/// Architecture parameters of both networks plus the softmax temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchParams<T> {
    pub alpha: ArchGroup<T>,
    pub beta: ArchGroup<T>,
    pub tau: f64,
}

impl<T: Scalar> ArchParams<T> {
    /// All-zero logits: every edge starts uniform.
    pub fn zeros(template: &NetworkTemplate, tau: f64) -> Self {
        ArchParams {
            alpha: ArchGroup::zeros(template.generator.edges()),
            beta: ArchGroup::zeros(template.discriminator.edges()),
            tau,
        }
    }

    pub fn group(&self, net: NetRole) -> &ArchGroup<T> {
        match net {
            NetRole::Generator => &self.alpha,
            NetRole::Discriminator => &self.beta,
        }
    }

    pub fn group_mut(&mut self, net: NetRole) -> &mut ArchGroup<T> {
        match net {
            NetRole::Generator => &mut self.alpha,
            NetRole::Discriminator => &mut self.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        for group in [&self.alpha, &self.beta] {
            for ((id, role), t) in group.edges.iter().zip(&group.logits) {
                if t.numel() != role.len() {
                    return Err(Error::Format(format!(
                        "{id}: {} logits for {} candidates",
                        t.numel(),
                        role.len()
                    )));
                }
                if !t.all_finite() {
                    return Err(Error::Numeric(format!("{id}: non-finite architecture logits")));
                }
            }
        }
        Ok(())
    }

    /// Mean Shannon entropy (nats) of the edge distributions of both networks.
    pub fn mean_edge_entropy(&self) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for group in [&self.alpha, &self.beta] {
            for p in group.probs()? {
                total += entropy(&p);
                n += 1;
            }
        }
        Ok(if n == 0 { 0.0 } else { total / n as f64 })
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&q| q > 0.0).map(|&q| q * q.ln()).sum::<f64>()
}

/// Softmax of an edge's logits.
pub fn edge_probs(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in architecture logits".into()));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// One Gumbel(0, 1) draw per candidate.
pub fn sample_gumbel(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = loop {
                let u: f64 = rng.gen();
                if u > 0.0 {
                    break u;
                }
            };
            -(-u.ln()).ln()
        })
        .collect()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {tau}")))
    }
}

/// Gumbel-softmax weights for a probability vector and fixed noise.
pub fn gumbel_weights_with_noise(probs: &[f64], noise: &[f64], tau: f64, form: GumbelForm) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if probs.len() != noise.len() {
        return Err(Error::dim("gumbel_weights", format!("{} probs, {} noise", probs.len(), noise.len())));
    }
    let scores: Vec<f64> = probs
        .iter()
        .zip(noise)
        .map(|(&p, &g)| match form {
            GumbelForm::LogProb => (p.ln() + g) / tau,
            GumbelForm::Printed => (p + g) / tau,
        })
        .collect();
    edge_probs(&scores)
}

pub fn gumbel_weights(probs: &[f64], tau: f64, form: GumbelForm, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let noise = sample_gumbel(rng, probs.len());
    gumbel_weights_with_noise(probs, &noise, tau, form)
}

/// In-graph mixture weights for one edge: differentiable in the logits, the
/// noise enters as a constant.
pub fn mixture_weights<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    noise: &[f64],
    tau: f64,
    form: GumbelForm,
) -> Result<Var> {
    check_tau(tau)?;
    if g.shape(logits) != [noise.len()] {
        return Err(Error::dim(
            "mixture_weights",
            format!("logits {:?}, {} noise values", g.shape(logits), noise.len()),
        ));
    }
    let base = match form {
        GumbelForm::LogProb => g.log_softmax(logits),
        GumbelForm::Printed => g.softmax(logits),
    };
    let noise = g.constant(Tensor::new([noise.len()], noise.iter().map(|&v| T::of(v)).collect())?);
    let perturbed = g.add(base, noise)?;
    let scaled = g.scale(perturbed, 1.0 / tau);
    Ok(g.softmax(scaled))
}

/// How mixture weights are produced from logits on each forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relaxation {
    pub tau: f64,
    pub form: GumbelForm,
}

impl Relaxation {
    pub fn new(tau: f64, form: GumbelForm) -> Self {
        Relaxation { tau, form }
    }

    /// Draws fresh noise: exactly one Gumbel vector per edge per call.
    pub fn edge_weights<T: Scalar>(&self, g: &mut Graph<T>, logits: &[Var], rng: &mut impl Rng) -> Result<Vec<Var>> {
        let noise: Vec<Vec<f64>> = logits.iter().map(|&l| sample_gumbel(rng, g.shape(l)[0])).collect();
        self.edge_weights_with_noise(g, logits, &noise)
    }

    pub fn edge_weights_with_noise<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        logits: &[Var],
        noise: &[Vec<f64>],
    ) -> Result<Vec<Var>> {
        logits
            .iter()
            .zip(noise)
            .map(|(&l, n)| mixture_weights(g, l, n, self.tau, self.form))
            .collect()
    }
}

/// Constant mixture weights, e.g. one-hot vectors.
pub fn constant_weights<T: Scalar>(g: &mut Graph<T>, weights: &[Vec<f64>]) -> Result<Vec<Var>> {
    weights
        .iter()
        .map(|w| Ok(g.constant(Tensor::new([w.len()], w.iter().map(|&v| T::of(v)).collect())?)))
        .collect()
}

/// How a mixed edge evaluates its convolutional candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixStrategy {
    /// Convolutions sharing a stride are folded into one convolution over the
    /// union of their taps, with the kernel built as the weighted sum of the
    /// candidates' kernels. Equal to `PerCandidate` by linearity.
    #[default]
    Fused,
    /// Every candidate is evaluated and the outputs are summed.
    PerCandidate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub op: OpKind,
    pub param: Option<ParamId>,
}

#[derive(Debug, Clone, PartialEq)]
struct FusedConv {
    taps: Vec<(isize, isize)>,
    stride: usize,
    /// (candidate index, tap positions inside `taps`)
    members: Vec<(usize, Vec<usize>)>,
}

/// An edge holding every candidate of its set, each with its own weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedOp {
    pub edge: EdgeId,
    pub spec: EdgeSpec,
    pub channels: usize,
    pub candidates: Vec<Candidate>,
    pub activation: Activation,
    fused: Option<FusedConv>,
}

impl MixedOp {
    /// Registers the weights of every weighted candidate in `store`, named
    /// `<edge>/<op>`.
    pub fn new<T: Scalar>(
        edge: EdgeId,
        spec: EdgeSpec,
        channels: usize,
        activation: Activation,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Self {
        let candidates: Vec<Candidate> = spec
            .role
            .ops()
            .iter()
            .map(|&op| Candidate {
                op,
                param: ops::weight_shape(op, channels)
                    .map(|(shape, fan_in)| store.push_init(format!("{edge}/{op}"), &shape, fan_in, 1.0, rng)),
            })
            .collect();
        let fused = fuse_convs(&candidates);
        MixedOp {
            edge,
            spec,
            channels,
            candidates,
            activation,
            fused,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// `sum_f weights[f] * f(x)`; `None` contributes nothing.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        weights: Var,
        params: &[Var],
        strategy: MixStrategy,
    ) -> Result<Var> {
        let activated = ops::activate(g, x, self.activation);
        self.forward_activated(g, x, activated, weights, params, strategy)
    }

    /// As [`MixedOp::forward`] with the activated input supplied by the
    /// caller, so edges leaving one node can share it.
    pub fn forward_activated<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        activated: Var,
        weights: Var,
        params: &[Var],
        strategy: MixStrategy,
    ) -> Result<Var> {
        if g.shape(weights) != [self.len()] {
            return Err(Error::dim(
                "mixed_op",
                format!("{}: {:?} weights for {} candidates", self.edge, g.shape(weights), self.len()),
            ));
        }
        let fused = match strategy {
            MixStrategy::Fused => self.fused.as_ref(),
            MixStrategy::PerCandidate => None,
        };
        let mut outs = Vec::new();
        let mut idx = Vec::new();
        for (i, c) in self.candidates.iter().enumerate() {
            if fused.is_some_and(|f| f.members.iter().any(|(m, _)| *m == i)) {
                continue;
            }
            let w = c.param.map(|p| params[p.0]);
            if let Some(y) = ops::apply(g, c.op, x, activated, w, self.spec.scale)? {
                outs.push(y);
                idx.push(i);
            }
        }
        let mut terms = Vec::new();
        if let Some(f) = fused {
            let total = f.taps.len();
            let mut kernels = Vec::with_capacity(f.members.len());
            let mut kidx = Vec::with_capacity(f.members.len());
            for (i, positions) in &f.members {
                let w = params[self.candidates[*i].param.expect("conv has weights").0];
                let s = g.shape(w).to_vec();
                let flat = g.reshape(w, &[s[0], s[1], s[2] * s[3]])?;
                kernels.push(g.scatter_last(flat, positions, total)?);
                kidx.push(*i);
            }
            let kernel = g.weighted_sum(&kernels, weights, &kidx)?;
            terms.push(g.conv_taps(activated, kernel, &f.taps, f.stride)?);
        }
        if !outs.is_empty() {
            terms.push(g.weighted_sum(&outs, weights, &idx)?);
        }
        match terms.as_slice() {
            [] => Err(Error::Contract(format!("{}: edge has no non-None candidate", self.edge))),
            [one] => Ok(*one),
            _ => {
                if g.shape(terms[0]) != g.shape(terms[1]) {
                    return Err(Error::dim(
                        "mixed_op",
                        format!("{}: candidate outputs {:?} vs {:?}", self.edge, g.shape(terms[0]), g.shape(terms[1])),
                    ));
                }
                g.add_n(&terms)
            }
        }
    }
}

fn fuse_convs(candidates: &[Candidate]) -> Option<FusedConv> {
    let convs: Vec<(usize, crate::space::ConvShape)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.op.conv_shape().map(|s| (i, s)))
        .collect();
    let stride = convs.first()?.1.stride;
    if convs.len() < 2 || convs.iter().any(|(_, s)| s.stride != stride) {
        return None;
    }
    let mut taps: Vec<(isize, isize)> = Vec::new();
    let mut members = Vec::new();
    for (i, s) in convs {
        let positions = dense_taps(s.k, s.dilation, s.padding())
            .into_iter()
            .map(|t| match taps.iter().position(|&u| u == t) {
                Some(p) => p,
                None => {
                    taps.push(t);
                    taps.len() - 1
                }
            })
            .collect();
        members.push((i, positions));
    }
    Some(FusedConv { taps, stride, members })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{EdgeEnd, CandidateRole};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probs_of_simple_vectors() {
        let p = edge_probs(&[0.0; 7]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
        let p = edge_probs(&[2f64.ln(), 0.0, 0.0]).unwrap();
        for (a, b) in p.iter().zip([0.5, 0.25, 0.25]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(edge_probs(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn zero_noise_recovers_probs_and_small_tau_is_nearly_one_hot() {
        let probs = [0.6, 0.3, 0.1];
        let w = gumbel_weights_with_noise(&probs, &[0.0; 3], 1.0, GumbelForm::LogProb).unwrap();
        for (a, b) in w.iter().zip(probs) {
            assert!((a - b).abs() < 1e-12);
        }
        let w = gumbel_weights_with_noise(&probs, &[0.3, -0.2, 1.1], 0.01, GumbelForm::LogProb).unwrap();
        assert!(w.iter().copied().fold(0.0, f64::max) >= 0.999);
        assert!(matches!(
            gumbel_weights_with_noise(&probs, &[0.0; 3], 0.0, GumbelForm::LogProb),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fused_union_has_41_taps_for_normal_and_down_sets() {
        for role in [CandidateRole::GNormal, CandidateRole::DDown] {
            let cands: Vec<Candidate> =
                role.ops().iter().map(|&op| Candidate { op, param: None }).collect();
            let f = fuse_convs(&cands).unwrap();
            assert_eq!(f.taps.len(), 41);
        }
        let up: Vec<Candidate> =
            CandidateRole::GUp.ops().iter().map(|&op| Candidate { op, param: None }).collect();
        assert!(fuse_convs(&up).is_none());
    }

    #[test]
    fn one_gumbel_draw_per_edge_per_pass() {
        let mut g = Graph::<f64>::new();
        let logits: Vec<Var> = [7, 3, 6]
            .iter()
            .map(|&n| g.leaf(Tensor::zeros([n]), false))
            .collect();
        let relax = Relaxation::new(1.0, GumbelForm::LogProb);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = relax.edge_weights(&mut g, &logits, &mut rng).unwrap();
        let mut replay = ChaCha8Rng::seed_from_u64(4);
        for (v, n) in w.iter().zip([7, 3, 6]) {
            let noise = sample_gumbel(&mut replay, n);
            let want = gumbel_weights_with_noise(&vec![1.0 / n as f64; n], &noise, 1.0, GumbelForm::LogProb).unwrap();
            for (a, b) in g.value(*v).data().iter().zip(want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // both streams consumed exactly the same amount
        assert_eq!(rng.get_word_pos(), replay.get_word_pos());
    }

    #[test]
    fn mixed_op_rejects_wrong_weight_length() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let edge = EdgeId { net: NetRole::Generator, cell: 1, from: 1, to: EdgeEnd::Node(3) };
        let op = MixedOp::new(edge, EdgeSpec::new(1, 3, CandidateRole::GNormal, 1), 2, Activation::Relu, &mut store, &mut rng);
        let mut g = Graph::new();
        let params = store.bind(&mut g, false);
        let x = g.constant(Tensor::zeros([1, 2, 4, 4]));
        let w = g.constant(Tensor::zeros([3]));
        assert!(op.forward(&mut g, x, w, &params, MixStrategy::Fused).is_err());
    }
}
