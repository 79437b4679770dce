//! Static description of the searchable topology: candidate operation sets,
//! cell DAGs, stacking into a generator and a discriminator, and exact
//! cardinality of the resulting architecture space.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Every operation that can sit on a cell edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    None,
    Identity,
    Conv1x1d1,
    Conv3x3d1,
    Conv3x3d2,
    Conv5x5d1,
    Conv5x5d2,
    TransposedConv3x3,
    NearestUp,
    BilinearUp,
    AvgPool,
    MaxPool,
    Conv3x3d1s2,
    Conv3x3d2s2,
    Conv5x5d1s2,
    Conv5x5d2s2,
}

/// Kernel size, dilation and stride of a convolutional op.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub k: usize,
    pub dilation: usize,
    pub stride: usize,
}

impl ConvShape {
    /// "Same" padding: stride-1 keeps the resolution, stride-2 halves it.
    pub fn padding(self) -> usize {
        self.dilation * (self.k - 1) / 2
    }
}

impl OpKind {
    pub const ALL: [OpKind; 16] = [
        OpKind::None,
        OpKind::Identity,
        OpKind::Conv1x1d1,
        OpKind::Conv3x3d1,
        OpKind::Conv3x3d2,
        OpKind::Conv5x5d1,
        OpKind::Conv5x5d2,
        OpKind::TransposedConv3x3,
        OpKind::NearestUp,
        OpKind::BilinearUp,
        OpKind::AvgPool,
        OpKind::MaxPool,
        OpKind::Conv3x3d1s2,
        OpKind::Conv3x3d2s2,
        OpKind::Conv5x5d1s2,
        OpKind::Conv5x5d2s2,
    ];

    /// Name used in architecture files.
    pub fn name(self) -> &'static str {
        match self {
            OpKind::None => "None",
            OpKind::Identity => "Identity",
            OpKind::Conv1x1d1 => "Conv1x1",
            OpKind::Conv3x3d1 => "Conv3x3",
            OpKind::Conv3x3d2 => "Conv3x3-d2",
            OpKind::Conv5x5d1 => "Conv5x5",
            OpKind::Conv5x5d2 => "Conv5x5-d2",
            OpKind::TransposedConv3x3 => "TransposedConv3x3",
            OpKind::NearestUp => "Nearest",
            OpKind::BilinearUp => "Bilinear",
            OpKind::AvgPool => "AvgPool",
            OpKind::MaxPool => "MaxPool",
            OpKind::Conv3x3d1s2 => "Conv3x3-s2",
            OpKind::Conv3x3d2s2 => "Conv3x3-d2-s2",
            OpKind::Conv5x5d1s2 => "Conv5x5-s2",
            OpKind::Conv5x5d2s2 => "Conv5x5-d2-s2",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|op| op.name() == name)
    }

    pub fn conv_shape(self) -> Option<ConvShape> {
        let (k, dilation, stride) = match self {
            OpKind::Conv1x1d1 => (1, 1, 1),
            OpKind::Conv3x3d1 => (3, 1, 1),
            OpKind::Conv3x3d2 => (3, 2, 1),
            OpKind::Conv5x5d1 => (5, 1, 1),
            OpKind::Conv5x5d2 => (5, 2, 1),
            OpKind::Conv3x3d1s2 => (3, 1, 2),
            OpKind::Conv3x3d2s2 => (3, 2, 2),
            OpKind::Conv5x5d1s2 => (5, 1, 2),
            OpKind::Conv5x5d2s2 => (5, 2, 2),
            _ => return None,
        };
        Some(ConvShape { k, dilation, stride })
    }

    pub fn has_weights(self) -> bool {
        self.conv_shape().is_some() || self == OpKind::TransposedConv3x3
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which candidate list an edge searches over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateRole {
    GNormal,
    GUp,
    DNormal,
    DDown,
}

const NORMAL_OPS: [OpKind; 7] = [
    OpKind::None,
    OpKind::Identity,
    OpKind::Conv1x1d1,
    OpKind::Conv3x3d1,
    OpKind::Conv3x3d2,
    OpKind::Conv5x5d1,
    OpKind::Conv5x5d2,
];
const UP_OPS: [OpKind; 3] = [OpKind::TransposedConv3x3, OpKind::NearestUp, OpKind::BilinearUp];
const DOWN_OPS: [OpKind; 6] = [
    OpKind::AvgPool,
    OpKind::MaxPool,
    OpKind::Conv3x3d1s2,
    OpKind::Conv3x3d2s2,
    OpKind::Conv5x5d1s2,
    OpKind::Conv5x5d2s2,
];

impl CandidateRole {
    pub const ALL: [CandidateRole; 4] = [
        CandidateRole::GNormal,
        CandidateRole::GUp,
        CandidateRole::DNormal,
        CandidateRole::DDown,
    ];

    /// Ordered candidates; the position is the index into the edge's
    /// architecture vector.
    pub fn ops(self) -> &'static [OpKind] {
        match self {
            CandidateRole::GNormal | CandidateRole::DNormal => &NORMAL_OPS,
            CandidateRole::GUp => &UP_OPS,
            CandidateRole::DDown => &DOWN_OPS,
        }
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> usize {
        self.ops().len()
    }

    pub fn index_of(self, op: OpKind) -> Option<usize> {
        self.ops().iter().position(|&o| o == op)
    }

    pub fn name(self) -> &'static str {
        match self {
            CandidateRole::GNormal => "g_normal",
            CandidateRole::GUp => "g_up",
            CandidateRole::DNormal => "d_normal",
            CandidateRole::DDown => "d_down",
        }
    }

    pub fn from_name(name: &str) -> Option<CandidateRole> {
        CandidateRole::ALL.into_iter().find(|r| r.name() == name)
    }

    /// Up and down candidates change resolution.
    pub fn is_resampling(self) -> bool {
        matches!(self, CandidateRole::GUp | CandidateRole::DDown)
    }
}

/// A role together with its ordered candidates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub role: CandidateRole,
    pub ops: Vec<OpKind>,
}

impl CandidateSet {
    pub fn of(role: CandidateRole) -> Self {
        CandidateSet {
            role,
            ops: role.ops().to_vec(),
        }
    }
}

/// Short digest of every candidate list in order. Architecture files carry it
/// so that a file written against a different ordering is rejected.
pub fn candidate_set_hash() -> String {
    let mut h = Sha256::new();
    for role in CandidateRole::ALL {
        h.update(role.name().as_bytes());
        h.update(b":");
        for op in role.ops() {
            h.update(op.name().as_bytes());
            h.update(b",");
        }
        h.update(b";");
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: usize,
    pub to: usize,
    pub role: CandidateRole,
    pub scale: usize,
}

impl EdgeSpec {
    pub const fn new(from: usize, to: usize, role: CandidateRole, scale: usize) -> Self {
        EdgeSpec {
            from,
            to,
            role,
            scale,
        }
    }
}

/// Edge from node 3 of one up cell to the output node of a later cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SkipEdge {
    pub target_cell: usize,
    pub edge: EdgeSpec,
}

/// Output node index of every cell.
pub const OUTPUT_NODE: usize = 4;
pub const NODES_PER_CELL: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellTemplate {
    pub kind: CellKind,
    /// 1-based position in the stack.
    pub index: usize,
    pub in_resolution: usize,
    pub out_resolution: usize,
    pub edges: Vec<EdgeSpec>,
    pub skip_edges: Vec<SkipEdge>,
}

pub fn up_cell_edges() -> Vec<EdgeSpec> {
    use CandidateRole::*;
    vec![
        EdgeSpec::new(0, 1, GUp, 2),
        EdgeSpec::new(0, 2, GUp, 2),
        EdgeSpec::new(1, 3, GNormal, 1),
        EdgeSpec::new(1, 4, GNormal, 1),
        EdgeSpec::new(2, 3, GNormal, 1),
        EdgeSpec::new(2, 4, GNormal, 1),
        EdgeSpec::new(3, 4, GNormal, 1),
    ]
}

pub fn down_cell_edges() -> Vec<EdgeSpec> {
    use CandidateRole::*;
    vec![
        EdgeSpec::new(0, 1, DNormal, 1),
        EdgeSpec::new(0, 2, DNormal, 1),
        EdgeSpec::new(0, 3, DNormal, 1),
        EdgeSpec::new(1, 2, DNormal, 1),
        EdgeSpec::new(1, 3, DNormal, 1),
        EdgeSpec::new(2, 4, DDown, 2),
        EdgeSpec::new(3, 4, DDown, 2),
    ]
}

/// Non-linearity applied to the input of every weighted op.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    LeakyRelu,
    Linear,
}

impl Activation {
    pub const LEAKY_SLOPE: f64 = 0.2;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorTemplate {
    pub cells: Vec<CellTemplate>,
    pub base_channels: usize,
    pub noise_dim: usize,
    pub base_resolution: usize,
    pub img_channels: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorTemplate {
    pub cells: Vec<CellTemplate>,
    pub base_channels: usize,
    pub input_resolution: usize,
    pub img_channels: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTemplate {
    pub generator: GeneratorTemplate,
    pub discriminator: DiscriminatorTemplate,
}

pub const GENERATOR_CELLS: usize = 3;
pub const DISCRIMINATOR_CELLS: usize = 4;

/// Three up cells; cell `n` maps `base * 2^(n-1)` to `base * 2^n`. Node 3 of
/// each cell feeds the output node of every later cell through a skip edge.
pub fn build_generator_template(
    base_channels: usize,
    noise_dim: usize,
    base_resolution: usize,
) -> Result<GeneratorTemplate> {
    if base_resolution < 2 {
        return Err(Error::Config(format!(
            "base_resolution must be at least 2, got {base_resolution}"
        )));
    }
    if base_channels == 0 || noise_dim == 0 {
        return Err(Error::Config("channels and noise_dim must be positive".into()));
    }
    let cells = (1..=GENERATOR_CELLS)
        .map(|n| CellTemplate {
            kind: CellKind::Up,
            index: n,
            in_resolution: base_resolution << (n - 1),
            out_resolution: base_resolution << n,
            edges: up_cell_edges(),
            skip_edges: (n + 1..=GENERATOR_CELLS)
                .map(|k| SkipEdge {
                    target_cell: k,
                    edge: EdgeSpec::new(3, OUTPUT_NODE, CandidateRole::GUp, 1 << (k - n)),
                })
                .collect(),
        })
        .collect();
    Ok(GeneratorTemplate {
        cells,
        base_channels,
        noise_dim,
        base_resolution,
        img_channels: 3,
        activation: Activation::default(),
    })
}

/// Four down cells, each halving the resolution.
pub fn build_discriminator_template(
    base_channels: usize,
    input_resolution: usize,
) -> Result<DiscriminatorTemplate> {
    let factor = 1 << DISCRIMINATOR_CELLS;
    if input_resolution == 0 || !input_resolution.is_multiple_of(factor) {
        return Err(Error::Config(format!(
            "discriminator input resolution must be divisible by {factor}, got {input_resolution}"
        )));
    }
    if base_channels == 0 {
        return Err(Error::Config("channels must be positive".into()));
    }
    let cells = (1..=DISCRIMINATOR_CELLS)
        .map(|n| CellTemplate {
            kind: CellKind::Down,
            index: n,
            in_resolution: input_resolution >> (n - 1),
            out_resolution: input_resolution >> n,
            edges: down_cell_edges(),
            skip_edges: Vec::new(),
        })
        .collect();
    Ok(DiscriminatorTemplate {
        cells,
        base_channels,
        input_resolution,
        img_channels: 3,
        activation: Activation::default(),
    })
}

impl GeneratorTemplate {
    pub fn output_resolution(&self) -> usize {
        self.base_resolution << self.cells.len()
    }

    pub fn with_img_channels(mut self, c: usize) -> Self {
        self.img_channels = c;
        self
    }

    /// Searchable edges in architecture-vector order.
    pub fn edges(&self) -> Vec<(EdgeId, EdgeSpec)> {
        searchable_edges(NetRole::Generator, &self.cells)
    }
}

impl DiscriminatorTemplate {
    pub fn with_img_channels(mut self, c: usize) -> Self {
        self.img_channels = c;
        self
    }

    pub fn edges(&self) -> Vec<(EdgeId, EdgeSpec)> {
        searchable_edges(NetRole::Discriminator, &self.cells)
    }
}

impl NetworkTemplate {
    /// Generator and a discriminator sized for its output.
    pub fn new(
        base_channels: usize,
        noise_dim: usize,
        base_resolution: usize,
        img_channels: usize,
    ) -> Result<Self> {
        let generator = build_generator_template(base_channels, noise_dim, base_resolution)?
            .with_img_channels(img_channels);
        let discriminator =
            build_discriminator_template(base_channels, generator.output_resolution())?
                .with_img_channels(img_channels);
        Ok(NetworkTemplate {
            generator,
            discriminator,
        })
    }

    pub fn with_activation(mut self, act: Activation) -> Self {
        self.generator.activation = act;
        self.discriminator.activation = act;
        self
    }

    pub fn cells(&self) -> impl Iterator<Item = &CellTemplate> {
        self.generator.cells.iter().chain(&self.discriminator.cells)
    }

    /// Cardinality of the joint generator/discriminator space.
    pub fn count(&self) -> Cardinality {
        count_architectures(self.cells())
    }
}

/// Whether an edge belongs to the generator or the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NetRole {
    Generator,
    Discriminator,
}

impl NetRole {
    pub fn prefix(self) -> &'static str {
        match self {
            NetRole::Generator => "G",
            NetRole::Discriminator => "D",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeEnd {
    Node(usize),
    /// Output node of a later cell (1-based).
    Cell(usize),
}

/// Stable identifier of a searchable edge, e.g. `G/cell1/0->1` or
/// `G/cell1/3->c2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId {
    pub net: NetRole,
    pub cell: usize,
    pub from: usize,
    pub to: EdgeEnd,
}

impl EdgeId {
    /// Edge label inside its cell, `0->1` or `3->c2`.
    pub fn label(&self) -> String {
        match self.to {
            EdgeEnd::Node(j) => format!("{}->{j}", self.from),
            EdgeEnd::Cell(k) => format!("{}->c{k}", self.from),
        }
    }

    pub fn is_skip(&self) -> bool {
        matches!(self.to, EdgeEnd::Cell(_))
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/cell{}/{}", self.net.prefix(), self.cell, self.label())
    }
}

impl FromStr for EdgeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("malformed edge id {s:?}"));
        let mut parts = s.split('/');
        let net = match parts.next() {
            Some("G") => NetRole::Generator,
            Some("D") => NetRole::Discriminator,
            _ => return Err(bad()),
        };
        let cell = parts
            .next()
            .and_then(|c| c.strip_prefix("cell"))
            .and_then(|c| c.parse().ok())
            .ok_or_else(bad)?;
        let (from, to) = parts.next().and_then(|e| e.split_once("->")).ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        let from = from.parse().map_err(|_| bad())?;
        let to = match to.strip_prefix('c') {
            Some(k) => EdgeEnd::Cell(k.parse().map_err(|_| bad())?),
            None => EdgeEnd::Node(to.parse().map_err(|_| bad())?),
        };
        Ok(EdgeId {
            net,
            cell,
            from,
            to,
        })
    }
}

impl Serialize for EdgeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EdgeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn searchable_edges(net: NetRole, cells: &[CellTemplate]) -> Vec<(EdgeId, EdgeSpec)> {
    let mut out = Vec::new();
    for cell in cells {
        for e in &cell.edges {
            out.push((
                EdgeId {
                    net,
                    cell: cell.index,
                    from: e.from,
                    to: EdgeEnd::Node(e.to),
                },
                *e,
            ));
        }
        for s in &cell.skip_edges {
            out.push((
                EdgeId {
                    net,
                    cell: cell.index,
                    from: s.edge.from,
                    to: EdgeEnd::Cell(s.target_cell),
                },
                s.edge,
            ));
        }
    }
    out
}

/// Exact count of discrete architectures plus its decimal logarithm.
#[derive(Debug, Clone, PartialEq)]
pub struct Cardinality {
    pub exact: BigUint,
    pub log10: f64,
}

/// Product of candidate-set sizes over every searchable edge (skip edges
/// included) of the given cells.
pub fn count_architectures<'a>(cells: impl IntoIterator<Item = &'a CellTemplate>) -> Cardinality {
    let mut exact = BigUint::from(1u32);
    let mut log10 = 0.0;
    for cell in cells {
        let sizes = cell
            .edges
            .iter()
            .map(|e| e.role.len())
            .chain(cell.skip_edges.iter().map(|s| s.edge.role.len()));
        for n in sizes {
            exact *= n;
            log10 += (n as f64).log10();
        }
    }
    Cardinality { exact, log10 }
}

/// A broken template invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NotAcyclic { cell: usize, from: usize, to: usize },
    NodeOutOfRange { cell: usize, node: usize },
    NoIncoming { cell: usize, node: usize },
    OutputUnreachable { cell: usize },
    RoleMismatch { cell: usize, from: usize, to: usize, role: CandidateRole },
    BadScale { cell: usize, from: usize, to: usize, scale: usize },
    BadSkipTarget { cell: usize, target: usize },
    Resolution { cell: usize, detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotAcyclic { cell, from, to } => {
                write!(f, "cell {cell}: edge {from}->{to} breaks node order")
            }
            Violation::NodeOutOfRange { cell, node } => write!(f, "cell {cell}: node {node} out of range"),
            Violation::NoIncoming { cell, node } => write!(f, "cell {cell}: node {node} has no incoming edge"),
            Violation::OutputUnreachable { cell } => {
                write!(f, "cell {cell}: output node unreachable from input")
            }
            Violation::RoleMismatch { cell, from, to, role } => {
                write!(f, "cell {cell}: edge {from}->{to} may not search {}", role.name())
            }
            Violation::BadScale { cell, from, to, scale } => {
                write!(f, "cell {cell}: edge {from}->{to} has invalid scale {scale}")
            }
            Violation::BadSkipTarget { cell, target } => {
                write!(f, "cell {cell}: skip edge targets cell {target}")
            }
            Violation::Resolution { cell, detail } => write!(f, "cell {cell}: {detail}"),
        }
    }
}

fn allowed_role(kind: CellKind, e: &EdgeSpec) -> bool {
    match kind {
        CellKind::Up => match e.role {
            CandidateRole::GUp => e.from == 0 && (e.to == 1 || e.to == 2),
            CandidateRole::GNormal => e.from != 0,
            _ => false,
        },
        CellKind::Down => match e.role {
            CandidateRole::DDown => e.to == OUTPUT_NODE && (e.from == 2 || e.from == 3),
            CandidateRole::DNormal => e.to != OUTPUT_NODE,
            _ => false,
        },
    }
}

/// Checks every cell invariant; an empty list means the cell is valid.
pub fn validate_cell(cell: &CellTemplate, num_cells: usize) -> Vec<Violation> {
    let c = cell.index;
    let mut out = Vec::new();
    let mut incoming = [false; NODES_PER_CELL];
    let mut adjacency = vec![Vec::new(); NODES_PER_CELL];
    for e in &cell.edges {
        if e.from >= NODES_PER_CELL || e.to >= NODES_PER_CELL {
            out.push(Violation::NodeOutOfRange {
                cell: c,
                node: e.from.max(e.to),
            });
            continue;
        }
        if e.from >= e.to {
            out.push(Violation::NotAcyclic {
                cell: c,
                from: e.from,
                to: e.to,
            });
            continue;
        }
        if !allowed_role(cell.kind, e) {
            out.push(Violation::RoleMismatch {
                cell: c,
                from: e.from,
                to: e.to,
                role: e.role,
            });
        }
        let scale_ok = if e.role.is_resampling() { e.scale == 2 } else { e.scale == 1 };
        if !scale_ok {
            out.push(Violation::BadScale {
                cell: c,
                from: e.from,
                to: e.to,
                scale: e.scale,
            });
        }
        incoming[e.to] = true;
        adjacency[e.from].push(e.to);
    }
    for (node, has) in incoming.iter().enumerate().skip(1) {
        if !has {
            out.push(Violation::NoIncoming { cell: c, node });
        }
    }
    let mut seen = BTreeSet::from([0usize]);
    let mut stack = vec![0usize];
    while let Some(n) = stack.pop() {
        for &m in &adjacency[n] {
            if seen.insert(m) {
                stack.push(m);
            }
        }
    }
    if !seen.contains(&OUTPUT_NODE) {
        out.push(Violation::OutputUnreachable { cell: c });
    }
    for s in &cell.skip_edges {
        if cell.kind != CellKind::Up || s.target_cell <= c || s.target_cell > num_cells {
            out.push(Violation::BadSkipTarget {
                cell: c,
                target: s.target_cell,
            });
            continue;
        }
        let e = s.edge;
        if e.role != CandidateRole::GUp || e.from != 3 {
            out.push(Violation::RoleMismatch {
                cell: c,
                from: e.from,
                to: e.to,
                role: e.role,
            });
        }
        if e.scale != 1 << (s.target_cell - c) {
            out.push(Violation::BadScale {
                cell: c,
                from: e.from,
                to: e.to,
                scale: e.scale,
            });
        }
    }
    out
}

/// Checks every cell of both networks plus the resolution chain.
pub fn validate_template(t: &NetworkTemplate) -> Vec<Violation> {
    let mut out = Vec::new();
    let g = &t.generator;
    for cell in &g.cells {
        if cell.kind != CellKind::Up {
            out.push(Violation::Resolution {
                cell: cell.index,
                detail: "generator cells must be up cells".into(),
            });
        }
        let want_in = g.base_resolution << (cell.index - 1);
        if cell.in_resolution != want_in || cell.out_resolution != 2 * want_in {
            out.push(Violation::Resolution {
                cell: cell.index,
                detail: format!(
                    "resolution {}->{} breaks the doubling chain",
                    cell.in_resolution, cell.out_resolution
                ),
            });
        }
        out.extend(validate_cell(cell, g.cells.len()));
    }
    let d = &t.discriminator;
    if d.input_resolution != g.output_resolution() {
        out.push(Violation::Resolution {
            cell: 0,
            detail: format!(
                "discriminator input {} does not match generator output {}",
                d.input_resolution,
                g.output_resolution()
            ),
        });
    }
    for cell in &d.cells {
        if cell.kind != CellKind::Down {
            out.push(Violation::Resolution {
                cell: cell.index,
                detail: "discriminator cells must be down cells".into(),
            });
        }
        if cell.out_resolution * 2 != cell.in_resolution
            || cell.in_resolution != d.input_resolution >> (cell.index - 1)
        {
            out.push(Violation::Resolution {
                cell: cell.index,
                detail: format!(
                    "resolution {}->{} breaks the halving chain",
                    cell.in_resolution, cell.out_resolution
                ),
            });
        }
        out.extend(validate_cell(cell, d.cells.len()));
    }
    out
}
