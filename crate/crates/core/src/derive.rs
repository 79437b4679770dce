//! Discrete architectures: argmax derivation, random sampling and the
//! architecture file format.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::relax::{edge_probs, ArchGroup, ArchParams};
use crate::space::{
    candidate_set_hash, CellKind, CellTemplate, EdgeEnd, EdgeId, EdgeSpec, NetRole, NetworkTemplate, OpKind,
    NODES_PER_CELL, OUTPUT_NODE,
};
use crate::tensor::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchSource {
    Search,
    Random,
}

impl ArchSource {
    pub fn name(self) -> &'static str {
        match self {
            ArchSource::Search => "search",
            ArchSource::Random => "random",
        }
    }
}

/// One concrete operation per searchable edge, plus provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivedArch {
    pub source: ArchSource,
    pub seed: u64,
    pub channels: usize,
    pub base_resolution: usize,
    pub tool: String,
    pub generator: Vec<(EdgeId, OpKind)>,
    pub discriminator: Option<Vec<(EdgeId, OpKind)>>,
}

pub fn tool_version() -> String {
    format!("advnas {}", env!("CARGO_PKG_VERSION"))
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> Result<usize> {
    let p = edge_probs(logits)?;
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Argmax op of every edge in a group, without validation.
pub fn argmax_choices<T: Scalar>(group: &ArchGroup<T>) -> Result<Vec<(EdgeId, OpKind)>> {
    group
        .edges
        .iter()
        .zip(&group.logits)
        .map(|((id, role), t)| {
            if !t.all_finite() {
                return Err(Error::Numeric(format!("{id}: non-finite architecture logits")));
            }
            let v: Vec<f64> = t.data().iter().map(|x| x.as_f64()).collect();
            Ok((*id, role.ops()[argmax(&v)?]))
        })
        .collect()
}

/// Nodes not reachable from node 0 once `None` edges are dropped, per cell,
/// and whether each cell's output is reachable.
fn liveness(cell: &CellTemplate, op_of: impl Fn(&EdgeSpec) -> OpKind) -> [bool; NODES_PER_CELL] {
    let mut reached = [false; NODES_PER_CELL];
    reached[0] = true;
    for j in 1..NODES_PER_CELL {
        reached[j] = cell
            .edges
            .iter()
            .any(|e| e.to == j && reached[e.from] && op_of(e) != OpKind::None);
    }
    reached
}

/// Checks that every cell's output is reachable from its input after `None`
/// edges are dropped. `choices` must follow `edges()` order of `cells`.
pub fn validate_choices(net: NetRole, cells: &[CellTemplate], choices: &[(EdgeId, OpKind)]) -> Result<()> {
    let mut dead = Vec::new();
    for cell in cells {
        let reached = liveness(cell, |e| {
            let id = EdgeId { net, cell: cell.index, from: e.from, to: EdgeEnd::Node(e.to) };
            choices.iter().find(|(c, _)| *c == id).map(|&(_, op)| op).unwrap_or(OpKind::None)
        });
        if !reached[OUTPUT_NODE] {
            dead.extend(
                (1..NODES_PER_CELL)
                    .filter(|&j| !reached[j])
                    .map(|j| format!("{}/cell{}/node{j}", net.prefix(), cell.index)),
            );
        }
    }
    if dead.is_empty() {
        Ok(())
    } else {
        Err(Error::Derivation { dead })
    }
}

fn check_edges(net: NetRole, expected: &[(EdgeId, EdgeSpec)], choices: &[(EdgeId, OpKind)]) -> Result<()> {
    if expected.len() != choices.len() {
        return Err(Error::Format(format!(
            "{} architecture lists {} edges, template has {}",
            net.prefix(),
            choices.len(),
            expected.len()
        )));
    }
    for ((id, spec), (cid, op)) in expected.iter().zip(choices) {
        if id != cid {
            return Err(Error::Format(format!("expected edge {id}, found {cid}")));
        }
        if !spec.role.ops().contains(op) {
            return Err(Error::Format(format!("{id}: {op} is not a {} candidate", spec.role.name())));
        }
    }
    Ok(())
}

/// Argmax derivation. The discriminator is derived when
/// `with_discriminator` is set.
pub fn derive<T: Scalar>(
    arch: &ArchParams<T>,
    template: &NetworkTemplate,
    seed: u64,
    with_discriminator: bool,
) -> Result<DerivedArch> {
    let generator = argmax_choices(&arch.alpha)?;
    check_edges(NetRole::Generator, &template.generator.edges(), &generator)?;
    validate_choices(NetRole::Generator, &template.generator.cells, &generator)?;
    let discriminator = if with_discriminator {
        let d = argmax_choices(&arch.beta)?;
        check_edges(NetRole::Discriminator, &template.discriminator.edges(), &d)?;
        validate_choices(NetRole::Discriminator, &template.discriminator.cells, &d)?;
        Some(d)
    } else {
        None
    };
    Ok(DerivedArch {
        source: ArchSource::Search,
        seed,
        channels: template.generator.base_channels,
        base_resolution: template.generator.base_resolution,
        tool: tool_version(),
        generator,
        discriminator,
    })
}

const MAX_RANDOM_TRIES: usize = 100;

fn sample_valid(
    net: NetRole,
    cells: &[CellTemplate],
    edges: &[(EdgeId, EdgeSpec)],
    rng: &mut impl Rng,
) -> Result<Vec<(EdgeId, OpKind)>> {
    for _ in 0..MAX_RANDOM_TRIES {
        let choice: Vec<(EdgeId, OpKind)> = edges
            .iter()
            .map(|(id, spec)| {
                let ops = spec.role.ops();
                (*id, ops[rng.gen_range(0..ops.len())])
            })
            .collect();
        if validate_choices(net, cells, &choice).is_ok() {
            return Ok(choice);
        }
    }
    Err(Error::Template(format!(
        "{MAX_RANDOM_TRIES} consecutive random {} architectures were invalid",
        net.prefix()
    )))
}

/// Uniform independent op per edge for both networks, resampled until valid.
pub fn sample_random_arch(template: &NetworkTemplate, seed: u64, rng: &mut impl Rng) -> Result<DerivedArch> {
    let gt = &template.generator;
    let dt = &template.discriminator;
    let generator = sample_valid(NetRole::Generator, &gt.cells, &gt.edges(), rng)?;
    let discriminator = sample_valid(NetRole::Discriminator, &dt.cells, &dt.edges(), rng)?;
    Ok(DerivedArch {
        source: ArchSource::Random,
        seed,
        channels: gt.base_channels,
        base_resolution: gt.base_resolution,
        tool: tool_version(),
        generator,
        discriminator: Some(discriminator),
    })
}

impl DerivedArch {
    pub fn generator_ops(&self) -> Vec<OpKind> {
        self.generator.iter().map(|&(_, op)| op).collect()
    }

    pub fn discriminator_ops(&self) -> Option<Vec<OpKind>> {
        self.discriminator.as_ref().map(|d| d.iter().map(|&(_, op)| op).collect())
    }

    pub fn without_discriminator(mut self) -> Self {
        self.discriminator = None;
        self
    }

    /// Checks the edge lists against a template and validates reachability.
    pub fn validate(&self, template: &NetworkTemplate) -> Result<()> {
        if template.generator.base_channels != self.channels
            || template.generator.base_resolution != self.base_resolution
        {
            return Err(Error::Config(format!(
                "architecture is for {} channels at base resolution {}, template has {} and {}",
                self.channels,
                self.base_resolution,
                template.generator.base_channels,
                template.generator.base_resolution
            )));
        }
        check_edges(NetRole::Generator, &template.generator.edges(), &self.generator)?;
        validate_choices(NetRole::Generator, &template.generator.cells, &self.generator)?;
        if let Some(d) = &self.discriminator {
            check_edges(NetRole::Discriminator, &template.discriminator.edges(), d)?;
            validate_choices(NetRole::Discriminator, &template.discriminator.cells, d)?;
        }
        Ok(())
    }

    /// Structured text with a header and one table per network.
    pub fn to_text(&self, template: &NetworkTemplate) -> String {
        let mut out = String::new();
        out.push_str("# derived architecture\n");
        let _ = writeln!(out, "version = {FORMAT_VERSION}");
        let _ = writeln!(out, "candidates = {}", candidate_set_hash());
        let _ = writeln!(out, "source = {}", self.source.name());
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "channels = {}", self.channels);
        let _ = writeln!(out, "base_resolution = {}", self.base_resolution);
        let _ = writeln!(out, "tool = {}", self.tool);
        let channels = self.channels;
        let mut table = |name: &str, choices: &[(EdgeId, OpKind)], cells: &[CellTemplate]| {
            let _ = writeln!(out, "\n[{name}]");
            let _ = writeln!(out, "{:<6}{:<8}{:<20}{:<6}resolution", "cell", "edge", "operation", "num");
            for &(id, op) in choices {
                let (num, res) = describe(op, &id, cells, channels);
                let _ = writeln!(out, "{:<6}{:<8}{:<20}{:<6}{res}", id.cell, id.label(), op.name(), num);
            }
        };
        table("generator", &self.generator, &template.generator.cells);
        if let Some(d) = &self.discriminator {
            table("discriminator", d, &template.discriminator.cells);
        }
        out
    }

    /// Parses [`DerivedArch::to_text`] output. Edges are checked against
    /// the templates only by [`DerivedArch::validate`].
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Format(format!("architecture line {line}: {msg}"));
        let mut header = std::collections::BTreeMap::new();
        let mut section: Option<NetRole> = None;
        let mut generator = Vec::new();
        let mut discriminator: Option<Vec<(EdgeId, OpKind)>> = None;
        let mut saw_columns = false;
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(match name {
                    "generator" => NetRole::Generator,
                    "discriminator" => {
                        discriminator = Some(Vec::new());
                        NetRole::Discriminator
                    }
                    _ => return Err(bad(n, &format!("unknown section [{name}]"))),
                });
                saw_columns = false;
                continue;
            }
            match section {
                None => {
                    let (k, v) = line.split_once('=').ok_or_else(|| bad(n, "expected key = value"))?;
                    header.insert(k.trim().to_string(), v.trim().to_string());
                }
                Some(net) => {
                    let cols: Vec<&str> = line.split_whitespace().collect();
                    if !saw_columns {
                        if cols.first() != Some(&"cell") {
                            return Err(bad(n, "missing column header"));
                        }
                        saw_columns = true;
                        continue;
                    }
                    if cols.len() != 5 {
                        return Err(bad(n, "expected 5 columns"));
                    }
                    let cell: usize = cols[0].parse().map_err(|_| bad(n, "bad cell index"))?;
                    let id = EdgeId::from_str(&format!("{}/cell{cell}/{}", net.prefix(), cols[1]))?;
                    let op = OpKind::from_name(cols[2])
                        .ok_or_else(|| Error::Format(format!("line {n}: unknown op kind {:?}", cols[2])))?;
                    match net {
                        NetRole::Generator => generator.push((id, op)),
                        NetRole::Discriminator => discriminator.as_mut().expect("section opened").push((id, op)),
                    }
                }
            }
        }
        let field = |k: &str| header.get(k).ok_or_else(|| Error::Format(format!("architecture header lacks {k:?}")));
        let num = |k: &str| -> Result<u64> {
            field(k)?.parse().map_err(|_| Error::Format(format!("architecture header {k:?} is not an integer")))
        };
        let version = num("version")?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::Format(format!("unsupported architecture version {version}")));
        }
        let hash = field("candidates")?;
        if *hash != candidate_set_hash() {
            return Err(Error::Format(format!(
                "candidate sets {hash} differ from this build's {}",
                candidate_set_hash()
            )));
        }
        let source = match field("source")?.as_str() {
            "search" => ArchSource::Search,
            "random" => ArchSource::Random,
            s => return Err(Error::Format(format!("unknown architecture source {s:?}"))),
        };
        if generator.is_empty() {
            return Err(Error::Format("architecture has no [generator] table".into()));
        }
        Ok(DerivedArch {
            source,
            seed: num("seed")?,
            channels: num("channels")? as usize,
            base_resolution: num("base_resolution")? as usize,
            tool: field("tool")?.clone(),
            generator,
            discriminator,
        })
    }
}

/// `num` and `resolution` columns: weighted ops report the channel width,
/// parameter-free ops 1, `None` dashes.
fn describe(op: OpKind, id: &EdgeId, cells: &[CellTemplate], channels: usize) -> (String, String) {
    if op == OpKind::None {
        return ("-".into(), "-".into());
    }
    let num = if op.has_weights() { channels.to_string() } else { "1".to_string() };
    let Some(cell) = cells.iter().find(|c| c.index == id.cell) else {
        return (num, "-".into());
    };
    let (rin, rout) = match id.to {
        EdgeEnd::Cell(k) => (
            cell.out_resolution,
            cells.iter().find(|c| c.index == k).map_or(cell.out_resolution, |c| c.out_resolution),
        ),
        EdgeEnd::Node(to) => {
            let resampling = cell.edges.iter().any(|e| e.from == id.from && e.to == to && e.role.is_resampling());
            match cell.kind {
                _ if resampling => (cell.in_resolution, cell.out_resolution),
                CellKind::Up => (cell.out_resolution, cell.out_resolution),
                CellKind::Down => (cell.in_resolution, cell.in_resolution),
            }
        }
    };
    (num, format!("{rin}->{rout}"))
}

/// Residual-style opponent: two stacked 3x3 convolutions with an identity
/// shortcut, then average pooling. Node 3 is left unused.
pub fn fixed_discriminator(template: &NetworkTemplate) -> Vec<(EdgeId, OpKind)> {
    template
        .discriminator
        .edges()
        .into_iter()
        .map(|(id, spec)| {
            let op = match (spec.from, spec.to) {
                (0, 1) | (1, 2) => OpKind::Conv3x3d1,
                (0, 2) => OpKind::Identity,
                (0, 3) | (1, 3) => OpKind::None,
                _ => OpKind::AvgPool,
            };
            (id, op)
        })
        .collect()
}
