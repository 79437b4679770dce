//! Generator and discriminator networks built from cell templates.
//!
//! A [`Network`] either holds a [`MixedOp`] on every searchable edge (a
//! supernet) or one concrete operation per edge (a derived network). Both
//! share the same node-summation forward pass, so a supernet driven by
//! one-hot mixture weights computes what the matching derived network does.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::params::{ParamId, ParamStore};
use crate::relax::{MixStrategy, MixedOp};
use crate::space::{
    Activation, CellTemplate, DiscriminatorTemplate, EdgeEnd, EdgeId, EdgeSpec, GeneratorTemplate,
    NetRole, OpKind, NODES_PER_CELL, OUTPUT_NODE,
};
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub enum EdgeOp {
    /// `arch` indexes the network's architecture vectors.
    Mixed { op: MixedOp, arch: usize },
    Fixed { op: OpKind, param: Option<ParamId> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetEdge {
    pub id: EdgeId,
    pub spec: EdgeSpec,
    pub op: EdgeOp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellNet {
    pub template: CellTemplate,
    pub edges: Vec<NetEdge>,
    /// Skip edges leaving node 3 towards later cells' output nodes.
    pub skips: Vec<NetEdge>,
}

/// Dimensions of a network, taken from its template.
#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Generator(GeneratorTemplate),
    Discriminator(DiscriminatorTemplate),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub frame: Frame,
    pub cells: Vec<CellNet>,
    params: ParamStore<T>,
    stem: (ParamId, ParamId),
    head: (ParamId, ParamId),
    arch_edges: usize,
}

pub type SuperNet<T> = Network<T>;
pub type DerivedNet<T> = Network<T>;

enum Build<'a> {
    Mixed,
    Fixed(&'a [OpKind]),
}

impl<T: Scalar> Network<T> {
    pub fn super_generator(t: &GeneratorTemplate, rng: &mut impl Rng) -> Result<Self> {
        Self::build(Frame::Generator(t.clone()), Build::Mixed, rng)
    }

    pub fn super_discriminator(t: &DiscriminatorTemplate, rng: &mut impl Rng) -> Result<Self> {
        Self::build(Frame::Discriminator(t.clone()), Build::Mixed, rng)
    }

    /// `choices` holds one op per searchable edge, in template edge order.
    /// `None` edges are dropped, then nodes that cannot reach node 4 or
    /// cannot be reached from node 0 are pruned with their edges.
    pub fn derived_generator(t: &GeneratorTemplate, choices: &[OpKind], rng: &mut impl Rng) -> Result<Self> {
        Self::build(Frame::Generator(t.clone()), Build::Fixed(choices), rng)
    }

    pub fn derived_discriminator(
        t: &DiscriminatorTemplate,
        choices: &[OpKind],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::build(Frame::Discriminator(t.clone()), Build::Fixed(choices), rng)
    }

    fn build(frame: Frame, build: Build<'_>, rng: &mut impl Rng) -> Result<Self> {
        let (role, cells, channels, act) = match &frame {
            Frame::Generator(t) => (NetRole::Generator, &t.cells, t.base_channels, t.activation),
            Frame::Discriminator(t) => (NetRole::Discriminator, &t.cells, t.base_channels, t.activation),
        };
        let searchable = cells.iter().map(|c| c.edges.len() + c.skip_edges.len()).sum::<usize>();
        if let Build::Fixed(ops) = build {
            if ops.len() != searchable {
                return Err(Error::Format(format!(
                    "{} architecture has {} choices for {searchable} edges",
                    role.prefix(),
                    ops.len()
                )));
            }
        }
        let p = role.prefix();
        let mut params = ParamStore::new();
        let stem = match &frame {
            Frame::Generator(t) => {
                let width = channels * t.base_resolution * t.base_resolution;
                (
                    params.push_init(format!("{p}/stem/w"), &[width, t.noise_dim], t.noise_dim, 1.0, rng),
                    params.push(format!("{p}/stem/b"), Tensor::zeros([width])),
                )
            }
            Frame::Discriminator(t) => (
                params.push_init(
                    format!("{p}/stem/w"),
                    &[channels, t.img_channels, 3, 3],
                    t.img_channels * 9,
                    1.0,
                    rng,
                ),
                params.push(format!("{p}/stem/b"), Tensor::zeros([channels])),
            ),
        };
        let mut arch = 0usize;
        let mut nets = Vec::with_capacity(cells.len());
        for cell in cells {
            let mut make = |from: usize, to: EdgeEnd, spec: EdgeSpec, params: &mut ParamStore<T>| -> Result<NetEdge> {
                let id = EdgeId { net: role, cell: cell.index, from, to };
                let op = match build {
                    Build::Mixed => EdgeOp::Mixed {
                        op: MixedOp::new(id, spec, channels, act, params, rng),
                        arch,
                    },
                    Build::Fixed(ops) => {
                        let op = ops[arch];
                        if !spec.role.ops().contains(&op) {
                            return Err(Error::Format(format!(
                                "{id}: {op} is not a {} candidate",
                                spec.role.name()
                            )));
                        }
                        let param = ops::weight_shape(op, channels)
                            .map(|(shape, fan)| params.push_init(format!("{id}/{op}"), &shape, fan, 1.0, rng));
                        EdgeOp::Fixed { op, param }
                    }
                };
                arch += 1;
                Ok(NetEdge { id, spec, op })
            };
            let mut edges = Vec::with_capacity(cell.edges.len());
            for e in &cell.edges {
                edges.push(make(e.from, EdgeEnd::Node(e.to), *e, &mut params)?);
            }
            let mut skips = Vec::with_capacity(cell.skip_edges.len());
            for s in &cell.skip_edges {
                skips.push(make(s.edge.from, EdgeEnd::Cell(s.target_cell), s.edge, &mut params)?);
            }
            let mut net = CellNet { template: cell.clone(), edges, skips };
            if matches!(build, Build::Fixed(_)) {
                prune(&mut net).map_err(|dead| Error::Derivation { dead })?;
            }
            nets.push(net);
        }
        let head = match &frame {
            Frame::Generator(t) => (
                params.push_init(format!("{p}/head/w"), &[t.img_channels, channels, 1, 1], channels, 1.0, rng),
                params.push(format!("{p}/head/b"), Tensor::zeros([t.img_channels])),
            ),
            Frame::Discriminator(_) => (
                params.push_init(format!("{p}/head/w"), &[1, channels], channels, 1.0, rng),
                params.push(format!("{p}/head/b"), Tensor::zeros([1])),
            ),
        };
        // drop the weights of pruned edges
        let used: Vec<ParamId> = [stem.0, stem.1, head.0, head.1]
            .into_iter()
            .chain(nets.iter().flat_map(|c| c.edges.iter().chain(&c.skips)).flat_map(edge_params))
            .collect();
        let (params, remap) = params.retain(&used);
        let mut net = Network {
            frame,
            cells: nets,
            params,
            stem,
            head,
            arch_edges: searchable,
        };
        net.remap(&remap);
        Ok(net)
    }

    fn remap(&mut self, map: &[Option<ParamId>]) {
        let m = |id: &mut ParamId| *id = map[id.0].expect("retained parameter");
        m(&mut self.stem.0);
        m(&mut self.stem.1);
        m(&mut self.head.0);
        m(&mut self.head.1);
        for cell in &mut self.cells {
            for e in cell.edges.iter_mut().chain(&mut cell.skips) {
                match &mut e.op {
                    EdgeOp::Mixed { op, .. } => {
                        for c in &mut op.candidates {
                            if let Some(p) = &mut c.param {
                                m(p);
                            }
                        }
                    }
                    EdgeOp::Fixed { param: Some(p), .. } => m(p),
                    EdgeOp::Fixed { param: None, .. } => {}
                }
            }
        }
    }

    pub fn role(&self) -> NetRole {
        match self.frame {
            Frame::Generator(_) => NetRole::Generator,
            Frame::Discriminator(_) => NetRole::Discriminator,
        }
    }

    pub fn is_super(&self) -> bool {
        self.edges().any(|e| matches!(e.op, EdgeOp::Mixed { .. }))
    }

    /// Number of searchable edges in the template (architecture vectors).
    pub fn arch_edges(&self) -> usize {
        self.arch_edges
    }

    pub fn edges(&self) -> impl Iterator<Item = &NetEdge> {
        self.cells.iter().flat_map(|c| c.edges.iter().chain(&c.skips))
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn activation(&self) -> Activation {
        match &self.frame {
            Frame::Generator(t) => t.activation,
            Frame::Discriminator(t) => t.activation,
        }
    }

    /// Shape the network consumes, without the batch dimension.
    pub fn input_shape(&self) -> Vec<usize> {
        match &self.frame {
            Frame::Generator(t) => vec![t.noise_dim],
            Frame::Discriminator(t) => vec![t.img_channels, t.input_resolution, t.input_resolution],
        }
    }

    /// Forward pass. `params` are this network's parameters bound into `g`
    /// (see [`ParamStore::bind`]); `mix` holds one mixture-weight vector per
    /// searchable edge and is required by supernets.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        params: &[Var],
        input: Var,
        mix: Option<&[Var]>,
        strategy: MixStrategy,
    ) -> Result<Var> {
        let want = self.input_shape();
        let shape = g.shape(input).to_vec();
        if shape.len() != want.len() + 1 || shape[1..] != want[..] {
            return Err(Error::dim(
                "network",
                format!("{} input {shape:?}, want [N, {want:?}]", self.role().prefix()),
            ));
        }
        if params.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} parameters bound, network has {}",
                params.len(),
                self.params.len()
            )));
        }
        if let Some(mix) = mix {
            if mix.len() != self.arch_edges {
                return Err(Error::Contract(format!(
                    "{} mixture vectors for {} edges",
                    mix.len(),
                    self.arch_edges
                )));
            }
        } else if self.is_super() {
            return Err(Error::Contract("supernet forward needs mixture weights".into()));
        }
        let p = |id: ParamId| params[id.0];
        let n = shape[0];
        let act = self.activation();
        let prefix = self.role().prefix();
        let mut x = match &self.frame {
            Frame::Generator(t) => {
                let h = g.linear(input, p(self.stem.0), Some(p(self.stem.1)))?;
                g.reshape(h, &[n, t.base_channels, t.base_resolution, t.base_resolution])?
            }
            Frame::Discriminator(_) => {
                let h = g.conv2d(input, p(self.stem.0), 1, 1, 1)?;
                g.channel_bias(h, p(self.stem.1))?
            }
        };
        check_finite(g, x, || format!("{prefix}/stem"))?;
        let mut pending: Vec<(usize, Var)> = Vec::new();
        for cell in &self.cells {
            let incoming: Vec<Var> = pending
                .iter()
                .filter(|(k, _)| *k == cell.template.index)
                .map(|&(_, v)| v)
                .collect();
            let (out, skips) = self.cell_forward(g, cell, params, x, &incoming, mix, strategy)?;
            pending.extend(skips);
            x = out;
        }
        let out = match &self.frame {
            Frame::Generator(_) => {
                let a = ops::activate(g, x, act);
                let h = g.conv2d(a, p(self.head.0), 1, 1, 0)?;
                let h = g.channel_bias(h, p(self.head.1))?;
                g.tanh(h)
            }
            Frame::Discriminator(_) => {
                let a = ops::activate(g, x, act);
                let pooled = g.sum_spatial(a)?;
                g.linear(pooled, p(self.head.0), Some(p(self.head.1)))?
            }
        };
        check_finite(g, out, || format!("{prefix}/head"))?;
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn cell_forward(
        &self,
        g: &mut Graph<T>,
        cell: &CellNet,
        params: &[Var],
        x0: Var,
        incoming_skips: &[Var],
        mix: Option<&[Var]>,
        strategy: MixStrategy,
    ) -> Result<(Var, Vec<(usize, Var)>)> {
        let act = self.activation();
        let mut nodes: [Option<Var>; NODES_PER_CELL] = [None; NODES_PER_CELL];
        let mut acts: [Option<Var>; NODES_PER_CELL] = [None; NODES_PER_CELL];
        nodes[0] = Some(x0);
        let mut apply = |g: &mut Graph<T>, e: &NetEdge, nodes: &[Option<Var>]| -> Result<Option<Var>> {
            let Some(x) = nodes[e.spec.from] else {
                return Ok(None);
            };
            let a = *acts[e.spec.from].get_or_insert_with(|| ops::activate(g, x, act));
            match &e.op {
                EdgeOp::Mixed { op, arch } => {
                    let w = mix.expect("checked by forward")[*arch];
                    op.forward_activated(g, x, a, w, params, strategy).map(Some)
                }
                EdgeOp::Fixed { op, param } => ops::apply(g, *op, x, a, param.map(|p| params[p.0]), e.spec.scale),
            }
        };
        for j in 1..NODES_PER_CELL {
            let mut terms = Vec::new();
            for e in cell.edges.iter().filter(|e| e.spec.to == j) {
                if let Some(y) = apply(g, e, &nodes)? {
                    terms.push(y);
                }
            }
            if j == OUTPUT_NODE {
                terms.extend_from_slice(incoming_skips);
            }
            if terms.is_empty() {
                continue;
            }
            let v = if terms.len() == 1 { terms[0] } else { g.add_n(&terms)? };
            check_finite(g, v, || format!("{}/cell{}/node{j}", self.role().prefix(), cell.template.index))?;
            nodes[j] = Some(v);
        }
        let out = nodes[OUTPUT_NODE].ok_or_else(|| Error::Derivation {
            dead: vec![format!("{}/cell{}/node4", self.role().prefix(), cell.template.index)],
        })?;
        let mut skips = Vec::with_capacity(cell.skips.len());
        for e in &cell.skips {
            if let (Some(y), EdgeEnd::Cell(k)) = (apply(g, e, &nodes)?, e.id.to) {
                skips.push((k, y));
            }
        }
        Ok((out, skips))
    }

    /// Copies every same-named parameter of `other` into this network.
    pub fn copy_weights_from(&mut self, other: &Network<T>) -> Result<usize> {
        self.params.copy_matching(&other.params)
    }

    /// Concrete op of every searchable edge in template order, or `None`
    /// for a supernet. Pruned edges report [`OpKind::None`].
    pub fn choices(&self) -> Option<Vec<OpKind>> {
        let mut out = vec![OpKind::None; self.arch_edges];
        let mut arch = 0;
        let cells = match &self.frame {
            Frame::Generator(t) => &t.cells,
            Frame::Discriminator(t) => &t.cells,
        };
        for (tc, cell) in cells.iter().zip(&self.cells) {
            let ids: Vec<EdgeId> = tc
                .edges
                .iter()
                .map(|e| EdgeId { net: self.role(), cell: tc.index, from: e.from, to: EdgeEnd::Node(e.to) })
                .chain(tc.skip_edges.iter().map(|s| EdgeId {
                    net: self.role(),
                    cell: tc.index,
                    from: s.edge.from,
                    to: EdgeEnd::Cell(s.target_cell),
                }))
                .collect();
            for id in ids {
                match cell.edges.iter().chain(&cell.skips).find(|e| e.id == id).map(|e| &e.op) {
                    Some(EdgeOp::Mixed { .. }) => return None,
                    Some(EdgeOp::Fixed { op, .. }) => out[arch] = *op,
                    None => {}
                }
                arch += 1;
            }
        }
        Some(out)
    }
}

fn edge_params(e: &NetEdge) -> Vec<ParamId> {
    match &e.op {
        EdgeOp::Mixed { op, .. } => op.candidates.iter().filter_map(|c| c.param).collect(),
        EdgeOp::Fixed { param, .. } => param.iter().copied().collect(),
    }
}

fn check_finite<T: Scalar>(g: &Graph<T>, v: Var, site: impl FnOnce() -> String) -> Result<()> {
    if g.value(v).all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite activations at {}", site())))
    }
}

/// Removes `None` edges and nodes that do not lie on a path from node 0 to
/// the output (skip edges count as a use of node 3). Returns the dead node
/// labels when the output cannot be reached.
fn prune(cell: &mut CellNet) -> std::result::Result<(), Vec<String>> {
    let is_none = |e: &NetEdge| matches!(e.op, EdgeOp::Fixed { op: OpKind::None, .. });
    cell.edges.retain(|e| !is_none(e));
    cell.skips.retain(|e| !is_none(e));
    let mut reached = [false; NODES_PER_CELL];
    reached[0] = true;
    for j in 1..NODES_PER_CELL {
        reached[j] = cell.edges.iter().any(|e| e.spec.to == j && reached[e.spec.from]);
    }
    let prefix = cell.edges.first().or(cell.skips.first()).map(|e| e.id.net.prefix()).unwrap_or("?");
    if !reached[OUTPUT_NODE] {
        let dead = (1..NODES_PER_CELL)
            .filter(|&j| !reached[j])
            .map(|j| format!("{prefix}/cell{}/node{j}", cell.template.index))
            .collect();
        return Err(dead);
    }
    cell.skips.retain(|e| reached[e.spec.from]);
    let mut useful = [false; NODES_PER_CELL];
    useful[OUTPUT_NODE] = true;
    for i in (0..OUTPUT_NODE).rev() {
        useful[i] = cell.skips.iter().any(|e| e.spec.from == i)
            || cell.edges.iter().any(|e| e.spec.from == i && useful[e.spec.to]);
    }
    cell.skips.retain(|e| useful[e.spec.from]);
    cell.edges.retain(|e| reached[e.spec.from] && useful[e.spec.to]);
    Ok(())
}
