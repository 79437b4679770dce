//! Criterion checks shared by the acceptance binary and the integration
//! tests. Each returns a verdict plus a one-line summary.

use std::collections::BTreeSet;

use advnas_core::derive::{derive, sample_random_arch};
use advnas_core::relax::{constant_weights, gumbel_weights, gumbel_weights_with_noise, mixture_weights, sample_gumbel};
use advnas_core::search::stream;
use advnas_core::space::{count_architectures, down_cell_edges, up_cell_edges, EdgeEnd};
use advnas_core::{
    Activation, ArchParams, CandidateRole, CellKind, CellTemplate, Dataset, EdgeId, EdgeSpec, Graph, GumbelForm, InterpMode,
    MixStrategy, MixedOp, NetRole, NetworkTemplate, OpKind, ParamStore, Phase, PoolKind, SearchConfig, SearchState, Tensor,
    Var,
};
use advnas_core::{DerivedNet, SuperNet};
use num_bigint::BigUint;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{away_from_zero, gradcheck, rng, uniform};

pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Check { pass, detail: detail.into() }
    }
}

pub const GRAD_TOL: f64 = 1e-4;

/// Distinct values of magnitude at least 5e-3 on a 1e-2 grid: no ReLU kink
/// or max-pool tie lies within a finite-difference step.
pub fn signed_distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let half = n as f64 / 2.0;
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5 - half) * 1e-2).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

fn shape4(r: &mut ChaCha8Rng, even: bool) -> Vec<usize> {
    let side = if even { 2 * r.gen_range(1..4) } else { r.gen_range(2..6) };
    vec![r.gen_range(1..3), r.gen_range(1..4), side, side]
}

fn u4(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let s = shape4(r, false);
    uniform(r, &s, lo, hi)
}

fn u4e(r: &mut ChaCha8Rng) -> Tensor<f64> {
    let s = shape4(r, true);
    uniform(r, &s, -1.0, 1.0)
}

fn afz4(r: &mut ChaCha8Rng) -> Tensor<f64> {
    let s = shape4(r, false);
    away_from_zero(r, &s)
}

fn sd4e(r: &mut ChaCha8Rng) -> Tensor<f64> {
    let s = shape4(r, true);
    signed_distinct(r, &s)
}

type Kernel = (&'static str, Box<dyn Fn(&mut ChaCha8Rng, u64) -> f64>);

fn kernels() -> Vec<Kernel> {
    fn k(name: &'static str, f: impl Fn(&mut ChaCha8Rng, u64) -> f64 + 'static) -> Kernel {
        (name, Box::new(f))
    }
    vec![
        k("add", |r, p| {
            let s = shape4(r, false);
            gradcheck(&[uniform(r, &s, -1.0, 1.0), uniform(r, &s, -1.0, 1.0)], p, |g, v| g.add(v[0], v[1]))
        }),
        k("sub", |r, p| {
            let s = shape4(r, false);
            gradcheck(&[uniform(r, &s, -1.0, 1.0), uniform(r, &s, -1.0, 1.0)], p, |g, v| g.sub(v[0], v[1]))
        }),
        k("mul", |r, p| {
            let s = shape4(r, false);
            gradcheck(&[uniform(r, &s, -1.0, 1.0), uniform(r, &s, -1.0, 1.0)], p, |g, v| g.mul(v[0], v[1]))
        }),
        k("scale", |r, p| {
            let c = r.gen_range(-3.0..3.0);
            gradcheck(&[u4(r, -1.0, 1.0)], p, move |g, v| Ok(g.scale(v[0], c)))
        }),
        k("add_scalar", |r, p| {
            let c = r.gen_range(-3.0..3.0);
            gradcheck(&[u4(r, -1.0, 1.0)], p, move |g, v| Ok(g.add_scalar(v[0], c)))
        }),
        k("neg", |r, p| gradcheck(&[u4(r, -1.0, 1.0)], p, |g, v| Ok(g.neg(v[0])))),
        k("relu", |r, p| gradcheck(&[afz4(r)], p, |g, v| Ok(g.relu(v[0])))),
        k("leaky_relu", |r, p| {
            gradcheck(&[afz4(r)], p, |g, v| Ok(g.leaky_relu(v[0], 0.2)))
        }),
        k("tanh", |r, p| gradcheck(&[u4(r, -2.0, 2.0)], p, |g, v| Ok(g.tanh(v[0])))),
        k("exp", |r, p| gradcheck(&[u4(r, -2.0, 2.0)], p, |g, v| Ok(g.exp(v[0])))),
        k("log", |r, p| gradcheck(&[u4(r, 0.3, 3.0)], p, |g, v| Ok(g.log(v[0])))),
        k("softplus", |r, p| {
            gradcheck(&[u4(r, -4.0, 4.0)], p, |g, v| Ok(g.softplus(v[0])))
        }),
        k("sum", |r, p| gradcheck(&[u4(r, -1.0, 1.0)], p, |g, v| Ok(g.sum(v[0])))),
        k("mean", |r, p| gradcheck(&[u4(r, -1.0, 1.0)], p, |g, v| Ok(g.mean(v[0])))),
        k("sum_spatial", |r, p| {
            gradcheck(&[u4(r, -1.0, 1.0)], p, |g, v| g.sum_spatial(v[0]))
        }),
        k("reshape", |r, p| {
            let s = shape4(r, false);
            let flat = [s[0], s[1] * s[2] * s[3]];
            gradcheck(&[uniform(r, &s, -1.0, 1.0)], p, move |g, v| g.reshape(v[0], &flat))
        }),
        k("add_n", |r, p| {
            let s = shape4(r, false);
            let ins: Vec<_> = (0..3).map(|_| uniform(r, &s, -1.0, 1.0)).collect();
            gradcheck(&ins, p, |g, v| g.add_n(v))
        }),
        k("weighted_sum", |r, p| {
            let s = shape4(r, false);
            let mut ins: Vec<_> = (0..3).map(|_| uniform(r, &s, -1.0, 1.0)).collect();
            ins.push(uniform(r, &[4], -1.0, 1.0));
            gradcheck(&ins, p, |g, v| g.weighted_sum(&v[..3], v[3], &[2, 0, 3]))
        }),
        k("softmax", |r, p| {
            let s = [r.gen_range(1..4), r.gen_range(2..8)];
            gradcheck(&[uniform(r, &s, -3.0, 3.0)], p, |g, v| Ok(g.softmax(v[0])))
        }),
        k("log_softmax", |r, p| {
            let s = [r.gen_range(1..4), r.gen_range(2..8)];
            gradcheck(&[uniform(r, &s, -3.0, 3.0)], p, |g, v| Ok(g.log_softmax(v[0])))
        }),
        k("linear", |r, p| {
            let (n, di, dout) = (r.gen_range(1..4), r.gen_range(1..6), r.gen_range(1..6));
            let ins = [uniform(r, &[n, di], -1.0, 1.0), uniform(r, &[dout, di], -1.0, 1.0), uniform(r, &[dout], -1.0, 1.0)];
            gradcheck(&ins, p, |g, v| g.linear(v[0], v[1], Some(v[2])))
        }),
        k("channel_bias", |r, p| {
            let s = shape4(r, false);
            let c = s[1];
            gradcheck(&[uniform(r, &s, -1.0, 1.0), uniform(r, &[c], -1.0, 1.0)], p, |g, v| g.channel_bias(v[0], v[1]))
        }),
        k("conv2d", |r, p| {
            let (kk, stride, dil) = ([1, 3, 5][r.gen_range(0..3)], r.gen_range(1..3), r.gen_range(1..3));
            let side = stride * r.gen_range(2..4);
            let (n, ci, co) = (r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..3));
            let ins = [uniform(r, &[n, ci, side, side], -1.0, 1.0), uniform(r, &[co, ci, kk, kk], -1.0, 1.0)];
            gradcheck(&ins, p, move |g, v| g.conv2d(v[0], v[1], stride, dil, dil * (kk - 1) / 2))
        }),
        k("conv_taps", |r, p| {
            let mut taps = BTreeSet::new();
            while taps.len() < 4 {
                taps.insert((r.gen_range(-2isize..3), r.gen_range(-2isize..3)));
            }
            let taps: Vec<_> = taps.into_iter().collect();
            let stride = r.gen_range(1..3);
            let side = stride * r.gen_range(2..4);
            let (ci, co) = (r.gen_range(1..3), r.gen_range(1..3));
            let ins = [uniform(r, &[1, ci, side, side], -1.0, 1.0), uniform(r, &[co, ci, taps.len()], -1.0, 1.0)];
            gradcheck(&ins, p, move |g, v| g.conv_taps(v[0], v[1], &taps, stride))
        }),
        k("transposed_conv2d", |r, p| {
            let stride = [2, 4][r.gen_range(0..2)];
            let (ci, co, side) = (r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..4));
            let ins = [uniform(r, &[1, ci, side, side], -1.0, 1.0), uniform(r, &[ci, co, 3, 3], -1.0, 1.0)];
            gradcheck(&ins, p, move |g, v| g.transposed_conv2d(v[0], v[1], stride))
        }),
        k("interpolate_nearest", |r, p| {
            let scale = [2, 4][r.gen_range(0..2)];
            gradcheck(&[u4(r, -1.0, 1.0)], p, move |g, v| {
                g.interpolate(v[0], scale, InterpMode::Nearest)
            })
        }),
        k("interpolate_bilinear", |r, p| {
            let scale = [2, 4][r.gen_range(0..2)];
            gradcheck(&[u4(r, -1.0, 1.0)], p, move |g, v| {
                g.interpolate(v[0], scale, InterpMode::Bilinear)
            })
        }),
        k("avg_pool", |r, p| {
            gradcheck(&[u4e(r)], p, |g, v| g.pool2d(v[0], PoolKind::Avg))
        }),
        k("max_pool", |r, p| {
            gradcheck(&[sd4e(r)], p, |g, v| g.pool2d(v[0], PoolKind::Max))
        }),
        k("scatter_last", |r, p| {
            let s = [r.gen_range(1..3), r.gen_range(1..3), 3];
            gradcheck(&[uniform(r, &s, -1.0, 1.0)], p, |g, v| g.scatter_last(v[0], &[4, 0, 2], 5))
        }),
        k("cat_rows", |r, p| {
            let s = shape4(r, false);
            let mut s2 = s.clone();
            s2[0] = r.gen_range(1..3);
            gradcheck(&[uniform(r, &s, -1.0, 1.0), uniform(r, &s2, -1.0, 1.0)], p, |g, v| g.cat_rows(&[v[0], v[1]]))
        }),
        k("slice_rows", |r, p| {
            let mut s = shape4(r, false);
            s[0] = 4;
            let (start, len) = (r.gen_range(0..2), r.gen_range(1..3));
            gradcheck(&[uniform(r, &s, -1.0, 1.0)], p, move |g, v| g.slice_rows(v[0], start, len))
        }),
    ]
}

/// Mixed edge of `role` at 2 channels: inputs are `[x, logits, weights...]`.
fn mixed_op_case(role: CandidateRole, strategy: MixStrategy, r: &mut ChaCha8Rng, probe: u64) -> f64 {
    let (from, to, scale) = match role {
        CandidateRole::GUp | CandidateRole::DDown => (0, 1, 2),
        _ => (1, 3, 1),
    };
    let net = if matches!(role, CandidateRole::GNormal | CandidateRole::GUp) { NetRole::Generator } else { NetRole::Discriminator };
    let edge = EdgeId { net, cell: 1, from, to: EdgeEnd::Node(to) };
    let mut store = ParamStore::<f64>::new();
    let op = MixedOp::new(edge, EdgeSpec::new(from, to, role, scale), 2, Activation::Relu, &mut store, r);
    let side = if role == CandidateRole::GUp { 2 } else { 4 };
    let mut inputs = vec![signed_distinct(r, &[1, 2, side, side]), uniform(r, &[role.len()], -1.0, 1.0)];
    inputs.extend(store.tensors().iter().cloned());
    let noise = sample_gumbel(r, role.len());
    let tau = r.gen_range(0.5..2.0);
    gradcheck(&inputs, probe, move |g, v| {
        let w = mixture_weights(g, v[1], &noise, tau, GumbelForm::LogProb)?;
        op.forward(g, v[0], w, &v[2..], strategy)
    })
}

/// Worst relative error per kernel over `cases` random cases each.
pub fn gradient_suite(cases: usize) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (i, (name, f)) in kernels().into_iter().enumerate() {
        let mut r = rng(1000 + i as u64);
        let worst = (0..cases).map(|c| f(&mut r, c as u64)).fold(0.0, f64::max);
        out.push((name.to_string(), worst));
    }
    for (j, role) in CandidateRole::ALL.into_iter().enumerate() {
        for strategy in [MixStrategy::Fused, MixStrategy::PerCandidate] {
            let mut r = rng(2000 + 10 * j as u64 + strategy as u64);
            let worst = (0..cases).map(|c| mixed_op_case(role, strategy, &mut r, c as u64)).fold(0.0, f64::max);
            out.push((format!("mixed_op/{}/{strategy:?}", role.name()), worst));
        }
    }
    out
}

pub fn criterion_gradients(cases: usize) -> Check {
    let results = gradient_suite(cases);
    let bad: Vec<String> = results
        .iter()
        .filter(|(_, e)| e.is_nan() || *e >= GRAD_TOL)
        .map(|(n, e)| format!("{n}={e:.2e}"))
        .collect();
    let worst = results.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let detail = format!("{} kernels x {cases} cases, worst rel err {worst:.2e}", results.len());
    if bad.is_empty() {
        Check::new(true, detail)
    } else {
        Check::new(false, format!("{detail}; failing: {}", bad.join(", ")))
    }
}

pub fn criterion_gumbel(draws: usize) -> Check {
    let mut r = rng(77);
    let mut worst_sum = 0.0f64;
    for tau in [0.01, 0.1, 1.0, 10.0] {
        for _ in 0..2000 {
            let n = r.gen_range(2..8);
            let logits: Vec<f64> = (0..n).map(|_| r.gen_range(-4.0..4.0)).collect();
            let probs = advnas_core::relax::edge_probs(&logits).unwrap();
            let w = gumbel_weights(&probs, tau, GumbelForm::LogProb, &mut r).unwrap();
            worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let probs = [0.6, 0.3, 0.1];
    let mut counts = [0usize; 3];
    let mut one_hot = 0usize;
    for _ in 0..draws {
        let w = gumbel_weights(&probs, 1.0, GumbelForm::LogProb, &mut r).unwrap();
        let noise = sample_gumbel(&mut r, 3);
        let cold = gumbel_weights_with_noise(&probs, &noise, 0.01, GumbelForm::LogProb).unwrap();
        if cold.iter().copied().fold(0.0, f64::max) >= 0.999 {
            one_hot += 1;
        }
        let arg = (0..3).fold(0, |b, i| if w[i] > w[b] { i } else { b });
        counts[arg] += 1;
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let worst_freq = freq.iter().zip(probs).map(|(f, p)| (f - p).abs()).fold(0.0, f64::max);
    // Fixed noise: zeros and one seeded draw.
    let fixed = [vec![0.0; 3], sample_gumbel(&mut rng(5), 3)];
    let cold_min = fixed
        .iter()
        .map(|g| gumbel_weights_with_noise(&probs, g, 0.01, GumbelForm::LogProb).unwrap().into_iter().fold(0.0, f64::max))
        .fold(1.0, f64::min);
    let pass = worst_sum < 1e-6 && worst_freq <= 0.01 && cold_min >= 0.999;
    Check::new(
        pass,
        format!(
            "max |sum-1| {worst_sum:.1e}; argmax freq {:.4}/{:.4}/{:.4} (max gap {worst_freq:.4}); tau=0.01 fixed-noise max weight {cold_min:.6}; random-noise draws with max weight >= 0.999: {:.2}%",
            freq[0],
            freq[1],
            freq[2],
            100.0 * one_hot as f64 / draws as f64
        ),
    )
}

fn brute_force(cell: &CellTemplate) -> BigUint {
    fn go(roles: &[CandidateRole]) -> BigUint {
        match roles.split_first() {
            None => BigUint::from(1u32),
            Some((r, rest)) => (0..r.len()).map(|_| go(rest)).sum(),
        }
    }
    let roles: Vec<CandidateRole> = cell.edges.iter().map(|e| e.role).chain(cell.skip_edges.iter().map(|s| s.edge.role)).collect();
    go(&roles)
}

pub fn criterion_cardinality() -> Check {
    let mut small = Vec::new();
    for (kind, edges) in [(CellKind::Up, up_cell_edges()), (CellKind::Down, down_cell_edges())] {
        for drop in 0..edges.len() {
            let mut e = edges.clone();
            e.remove(drop);
            small.push(CellTemplate { kind, index: 1, in_resolution: 4, out_resolution: 8, edges: e, skip_edges: vec![] });
        }
        small.push(CellTemplate {
            kind,
            index: 1,
            in_resolution: 4,
            out_resolution: 8,
            edges: edges[..3].to_vec(),
            skip_edges: vec![],
        });
    }
    let brute_ok = small.iter().all(|c| count_architectures([c]).exact == brute_force(c));
    let t = NetworkTemplate::new(256, 128, 4, 3).unwrap();
    let c = t.count();
    let pow = |b: u32, e: u32| BigUint::from(b).pow(e);
    let closed = pow(3, 9) * pow(7, 15) * pow(7, 20) * pow(6, 8);
    let pass = brute_ok && c.exact == closed;
    Check::new(
        pass,
        format!(
            "{} small templates match brute force: {brute_ok}; full template {} = 3^9*7^15*7^20*6^8: {}; log10 {:.2} (stated 10^38, {:.2} decades apart)",
            small.len(),
            c.exact,
            c.exact == closed,
            c.log10,
            c.log10 - 38.0
        ),
    )
}

pub fn criterion_topology() -> Check {
    let up: BTreeSet<(usize, usize)> = up_cell_edges().iter().map(|e| (4 - e.to, 4 - e.from)).collect();
    let down: BTreeSet<(usize, usize)> = down_cell_edges().iter().map(|e| (e.from, e.to)).collect();
    let reversed = up == down;
    let t = NetworkTemplate::new(2, 4, 4, 3).unwrap();
    let mut r = rng(3);
    let g = SuperNet::<f32>::super_generator(&t.generator, &mut r).unwrap();
    let d = SuperNet::<f32>::super_discriminator(&t.discriminator, &mut r).unwrap();
    let arch = advnas_core::ArchParams::<f32>::zeros(&t, 1.0);
    let mut graph = Graph::new();
    let z = graph.constant(Tensor::from_fn([2, 4], |i| (i as f32 * 0.37).sin()));
    let gp = g.params().bind(&mut graph, false);
    let logits = arch.alpha.bind(&mut graph, false);
    let mix = advnas_core::Relaxation::new(1.0, GumbelForm::LogProb).edge_weights(&mut graph, &logits, &mut r).unwrap();
    let img = g.forward(&mut graph, &gp, z, Some(&mix), MixStrategy::Fused).unwrap();
    let gshape = graph.shape(img).to_vec();
    let dp = d.params().bind(&mut graph, false);
    let logits = arch.beta.bind(&mut graph, false);
    let mix = advnas_core::Relaxation::new(1.0, GumbelForm::LogProb).edge_weights(&mut graph, &logits, &mut r).unwrap();
    let out = d.forward(&mut graph, &dp, img, Some(&mix), MixStrategy::Fused).unwrap();
    let dshape = graph.shape(out).to_vec();
    let ups = t.generator.output_resolution() / t.generator.base_resolution;
    let pass = reversed && ups == 8 && gshape == [2, 3, 32, 32] && dshape == [2, 1];
    Check::new(
        pass,
        format!("down edges = reversed up edges: {reversed}; generator x{ups} ({gshape:?}); discriminator 32x32 -> {dshape:?}"),
    )
}

fn one_hot_mix(g: &mut Graph<f32>, edges: &[(EdgeId, EdgeSpec)], ops: &[advnas_core::OpKind]) -> Vec<Var> {
    let w: Vec<Vec<f64>> = edges
        .iter()
        .zip(ops)
        .map(|((_, spec), op)| {
            let mut v = vec![0.0; spec.role.len()];
            v[spec.role.index_of(*op).unwrap()] = 1.0;
            v
        })
        .collect();
    constant_weights(g, &w).unwrap()
}

/// Largest |supernet(one-hot) - derived| over `n` random architectures,
/// generator and discriminator.
pub fn equivalence_gap(n: usize, channels: usize, strategy: MixStrategy) -> f64 {
    let t = NetworkTemplate::new(channels, 8, 4, 3).unwrap();
    let mut worst = 0.0f64;
    for s in 0..n as u64 {
        let mut r = stream(s, 4);
        let arch = sample_random_arch(&t, s, &mut stream(s, 5)).unwrap();
        let sg = SuperNet::<f32>::super_generator(&t.generator, &mut r).unwrap();
        let sd = SuperNet::<f32>::super_discriminator(&t.discriminator, &mut r).unwrap();
        let mut dg = DerivedNet::<f32>::derived_generator(&t.generator, &arch.generator_ops(), &mut r).unwrap();
        let mut dd =
            DerivedNet::<f32>::derived_discriminator(&t.discriminator, &arch.discriminator_ops().unwrap(), &mut r).unwrap();
        dg.copy_weights_from(&sg).unwrap();
        dd.copy_weights_from(&sd).unwrap();
        let z = Tensor::from_fn([3, 8], |_| r.gen_range(-1.0f32..1.0));
        let mut g = Graph::new();
        let zc = g.constant(z);
        let mix = one_hot_mix(&mut g, &t.generator.edges(), &arch.generator_ops());
        let p = sg.params().bind(&mut g, false);
        let a = sg.forward(&mut g, &p, zc, Some(&mix), strategy).unwrap();
        let p = dg.params().bind(&mut g, false);
        let b = dg.forward(&mut g, &p, zc, None, strategy).unwrap();
        worst = worst.max(g.value(a).max_abs_diff(g.value(b)));
        let x = g.constant(Tensor::from_fn([3, 3, 32, 32], |_| r.gen_range(-1.0f32..1.0)));
        let mix = one_hot_mix(&mut g, &t.discriminator.edges(), &arch.discriminator_ops().unwrap());
        let p = sd.params().bind(&mut g, false);
        let a = sd.forward(&mut g, &p, x, Some(&mix), strategy).unwrap();
        let p = dd.params().bind(&mut g, false);
        let b = dd.forward(&mut g, &p, x, None, strategy).unwrap();
        worst = worst.max(g.value(a).max_abs_diff(g.value(b)));
    }
    worst
}

pub fn criterion_equivalence(n: usize) -> Check {
    let gap = equivalence_gap(n, 8, MixStrategy::Fused);
    Check::new(gap < 1e-5, format!("{n} random architectures, max abs diff {gap:.2e}"))
}

/// Small search fixture: 4 channels, 16x16 single-channel images.
pub fn tiny_search(config: SearchConfig) -> (SearchState, Dataset) {
    let t = NetworkTemplate::new(4, 4, 2, 1).unwrap();
    let data = Dataset::two_mode(64, 16, 0).unwrap();
    (SearchState::new(config, t, &data).unwrap(), data)
}

pub fn criterion_update_order(iters: usize) -> Check {
    let mut order_ok = true;
    for k in [1usize, 2] {
        let (mut st, data) = tiny_search(SearchConfig { k_disc_steps: k, batch_m: 1, seed: 3, ..SearchConfig::default() });
        let mut want = Vec::new();
        for _ in 0..k {
            want.extend([Phase::Beta, Phase::WeightsD]);
        }
        want.extend([Phase::Alpha, Phase::WeightsG]);
        for _ in 0..3 {
            order_ok &= st.step(&data).unwrap().1 == want;
        }
    }
    let (mut st, data) = tiny_search(SearchConfig { lr_arch: 0.0, batch_m: 2, seed: 1, ..SearchConfig::default() });
    let before = st.arch.clone();
    let w_before = st.g.params().clone();
    for _ in 0..iters {
        st.step(&data).unwrap();
    }
    let frozen = st.arch.alpha == before.alpha && st.arch.beta == before.beta;
    let weights_moved = st.g.params() != &w_before;
    Check::new(
        order_ok && frozen && weights_moved,
        format!("order (beta, W_D)xk, alpha, W_G for k=1,2: {order_ok}; lr_arch=0 keeps alpha/beta bitwise over {iters} iterations: {frozen}"),
    )
}

pub const REFERENCE: &str = include_str!("../fixtures/reference_generator.arch");

/// Generator operations of the reference architecture, in file order.
pub fn reference_ops() -> Vec<OpKind> {
    use OpKind::*;
    vec![
        BilinearUp, BilinearUp, Identity, Conv3x3d1, None, Conv3x3d1, Identity, BilinearUp, NearestUp,
        BilinearUp, BilinearUp, None, Conv3x3d1, Identity, Conv3x3d1, Conv3x3d1, NearestUp,
        NearestUp, BilinearUp, None, Conv3x3d1, Conv3x3d1, None, Conv3x3d1,
    ]
}

pub fn criterion_golden() -> Check {
    let t = NetworkTemplate::new(256, 128, 4, 3).unwrap();
    let mut arch = ArchParams::<f32>::zeros(&t, 1.0);
    let g = arch.group_mut(NetRole::Generator);
    for ((_, role), (l, op)) in g.edges.iter().zip(g.logits.iter_mut().zip(reference_ops())) {
        l.data_mut()[role.index_of(op).unwrap()] = 3.0;
    }
    match derive(&arch, &t, 0, false) {
        Ok(d) => {
            let text = d.to_text(&t);
            let line = text.lines().zip(REFERENCE.lines()).position(|(a, b)| a != b);
            let same = text == REFERENCE;
            let detail = match (same, line) {
                (true, _) => format!("{} bytes identical to the golden file", text.len()),
                (false, Some(l)) => format!("first difference on line {}", l + 1),
                (false, None) => format!("length {} vs {}", text.len(), REFERENCE.len()),
            };
            Check::new(same, detail)
        }
        Err(e) => Check::new(false, format!("derivation failed: {e}")),
    }
}
