//! Run configuration and on-disk formats: architecture checkpoints, tensor
//! archives and resumable search state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sampler};
use crate::error::{Error, Result};
use crate::relax::ArchParams;
use crate::search::{SearchConfig, SearchState, Streams};
use crate::space::{candidate_set_hash, Activation, CandidateRole, EdgeId, NetRole, NetworkTemplate};
use crate::tensor::Tensor;
use crate::derive::DerivedArch;
use crate::supernet::DerivedNet;
use crate::train::{instantiate, EvalConfig, Opponent, TrainConfig, Trainer};

/// Dimensions of the generator/discriminator pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpaceConfig {
    pub base_channels: usize,
    pub noise_dim: usize,
    pub base_resolution: usize,
    pub img_channels: usize,
    pub activation: Activation,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig {
            base_channels: 256,
            noise_dim: 128,
            base_resolution: 4,
            img_channels: 3,
            activation: Activation::Relu,
        }
    }
}

impl SpaceConfig {
    pub fn template(&self) -> Result<NetworkTemplate> {
        Ok(
            NetworkTemplate::new(self.base_channels, self.noise_dim, self.base_resolution, self.img_channels)?
                .with_activation(self.activation),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    /// Dataset directory or `synth:<name>[@resolution]`.
    pub dataset: String,
    /// Images drawn from a synthetic dataset.
    pub synth_size: usize,
    /// Images held out from training for evaluation.
    pub heldout: usize,
    pub out: Option<String>,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            dataset: "synth:two-mode".into(),
            synth_size: 2000,
            heldout: 500,
            out: None,
        }
    }
}

/// Top-level TOML configuration. Only `seed` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub space: SpaceConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub io: IoConfig,
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        RunConfig {
            seed,
            space: SpaceConfig::default(),
            search: SearchConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            io: IoConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.search.seed = cfg.seed;
        cfg.search.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.search.seed = seed;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Training and held-out splits of the configured dataset.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let all = Dataset::open(&self.io.dataset, self.io.synth_size + self.io.heldout, self.seed)?;
        if self.io.heldout == 0 {
            return Err(Error::Config("io.heldout must be at least 1".into()));
        }
        let (heldout, train) = all.split(self.io.heldout.min(all.len() / 2).max(1))?;
        Ok((train, heldout))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeLogits {
    edge: EdgeId,
    role: CandidateRole,
    logits: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchFile {
    format: String,
    version: u32,
    candidates: String,
    seed: u64,
    space: SpaceConfig,
    iter: usize,
    tau: f64,
    alpha: Vec<EdgeLogits>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<Vec<EdgeLogits>>,
}

const ARCH_FORMAT: &str = "advnas-arch-params";

/// Architecture logits at one iteration. `beta` may be omitted on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchCheckpoint {
    pub seed: u64,
    pub space: SpaceConfig,
    pub iter: usize,
    pub arch: ArchParams<f32>,
    pub has_beta: bool,
}

impl ArchCheckpoint {
    pub fn to_json(&self) -> String {
        let group = |net: NetRole| {
            let g = self.arch.group(net);
            g.edges
                .iter()
                .zip(&g.logits)
                .map(|(&(edge, role), t)| EdgeLogits {
                    edge,
                    role,
                    logits: t.data().to_vec(),
                })
                .collect::<Vec<_>>()
        };
        let file = ArchFile {
            format: ARCH_FORMAT.into(),
            version: 1,
            candidates: candidate_set_hash(),
            seed: self.seed,
            space: self.space,
            iter: self.iter,
            tau: self.arch.tau,
            alpha: group(NetRole::Generator),
            beta: self.has_beta.then(|| group(NetRole::Discriminator)),
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serializes") + "\n"
    }

    pub fn template(&self) -> Result<NetworkTemplate> {
        self.space.template()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ArchFile = serde_json::from_str(text).map_err(|e| Error::Format(format!("architecture checkpoint: {e}")))?;
        if file.format != ARCH_FORMAT || file.version != 1 {
            return Err(Error::Format(format!("unsupported checkpoint {} v{}", file.format, file.version)));
        }
        if file.candidates != candidate_set_hash() {
            return Err(Error::Format(format!(
                "checkpoint candidate sets {} differ from this build's {}",
                file.candidates,
                candidate_set_hash()
            )));
        }
        let template = file.space.template()?;
        let mut arch = ArchParams::zeros(&template, file.tau);
        fill(&mut arch, NetRole::Generator, &file.alpha)?;
        if let Some(beta) = &file.beta {
            fill(&mut arch, NetRole::Discriminator, beta)?;
        }
        arch.validate()?;
        Ok(ArchCheckpoint {
            seed: file.seed,
            space: file.space,
            iter: file.iter,
            arch,
            has_beta: file.beta.is_some(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ArchCheckpoint::from_json(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn fill(arch: &mut ArchParams<f32>, net: NetRole, edges: &[EdgeLogits]) -> Result<()> {
    let group = arch.group_mut(net);
    if group.edges.len() != edges.len() {
        return Err(Error::Format(format!(
            "{} checkpoint lists {} edges, template has {}",
            net.prefix(),
            edges.len(),
            group.edges.len()
        )));
    }
    for ((&(id, role), slot), e) in group.edges.iter().zip(&mut group.logits).zip(edges) {
        if e.edge != id || e.role != role {
            return Err(Error::Format(format!("expected edge {id} ({}), found {}", role.name(), e.edge)));
        }
        if e.logits.len() != role.len() {
            return Err(Error::Format(format!("{id}: {} logits for {} candidates", e.logits.len(), role.len())));
        }
        *slot = Tensor::new([role.len()], e.logits.clone())?;
    }
    Ok(())
}

const ARCHIVE_MAGIC: &[u8; 8] = b"ADVNAST\0";

/// Named f32 tensors plus a free-form metadata string, little-endian.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub meta: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("tensor archive is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("tensor archive string is not UTF-8".into()))
    }
}

impl TensorArchive {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        put_str(&mut out, &self.meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != ARCHIVE_MAGIC {
            return Err(Error::Format("not a tensor archive".into()));
        }
        let version = r.u32()?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported tensor archive version {version}")));
        }
        let meta = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let bytes = numel
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Format(format!("{name}: tensor too large")))?;
            let raw = r.take(bytes)?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after tensor archive".into()));
        }
        Ok(TensorArchive { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        TensorArchive::from_bytes(&bytes)
    }

    /// Copies every tensor in `targets` from the archive; names and shapes
    /// must match.
    pub fn restore<'a>(&self, targets: impl IntoIterator<Item = (String, &'a mut Tensor<f32>)>) -> Result<()> {
        for (name, slot) in targets {
            let t = self.get(&name).ok_or_else(|| Error::Format(format!("archive lacks tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Format(format!(
                    "{name}: archive shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(())
    }
}

const WEIGHTS_FORMAT: &str = "advnas-weights";

/// Header of a trained-weights archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsMeta {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub iter: usize,
    pub space: SpaceConfig,
    pub opponent: Opponent,
    /// The architecture file the networks were built from.
    pub arch: String,
}

/// Trained generator and opponent weights, tagged `g/<param>` and `d/<param>`.
pub fn save_weights(trainer: &Trainer, arch: &DerivedArch, space: &SpaceConfig, seed: u64, path: &Path) -> Result<()> {
    let template = space.template()?;
    let meta = WeightsMeta {
        format: WEIGHTS_FORMAT.into(),
        version: 1,
        seed,
        iter: trainer.iter,
        space: *space,
        opponent: trainer.config.opponent,
        arch: arch.to_text(&template),
    };
    let mut tensors = Vec::new();
    for (tag, net) in [("g", &trainer.g), ("d", &trainer.d)] {
        tensors.extend(net.params().iter().map(|(n, t)| (format!("{tag}/{n}"), t.clone())));
    }
    let archive = TensorArchive {
        meta: serde_json::to_string(&meta).expect("meta serializes"),
        tensors,
    };
    archive.save(path)
}

/// Rebuilds the trained generator stored by [`save_weights`].
pub fn load_generator(path: &Path) -> Result<(DerivedNet<f32>, DerivedArch, WeightsMeta)> {
    let archive = TensorArchive::load(path)?;
    let meta: WeightsMeta = serde_json::from_str(&archive.meta)
        .map_err(|e| Error::Format(format!("{}: weights header: {e}", path.display())))?;
    if meta.format != WEIGHTS_FORMAT || meta.version != 1 {
        return Err(Error::Format(format!(
            "{}: unsupported weights {} v{}",
            path.display(),
            meta.format,
            meta.version
        )));
    }
    let arch = DerivedArch::from_text(&meta.arch)?;
    let template = meta.space.template()?;
    let (mut g, _) = instantiate(&arch, &template, Opponent::Fixed, meta.seed)?;
    let names: Vec<String> = g.params().names().iter().map(|n| format!("g/{n}")).collect();
    archive.restore(names.into_iter().zip(g.params_mut().tensors_mut().iter_mut()))?;
    Ok((g, arch, meta))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    format: String,
    version: u32,
    candidates: String,
    seed: u64,
    space: SpaceConfig,
    search: SearchConfig,
    iter: usize,
    streams: Streams,
    sampler: Sampler,
    adam_steps: [u64; 4],
}

const STATE_FORMAT: &str = "advnas-search-state";
const STATE_JSON: &str = "state.json";
const STATE_TENSORS: &str = "tensors.bin";

/// Writes `state.json` and `tensors.bin` into `dir`.
pub fn save_search_state(state: &SearchState, space: &SpaceConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file = StateFile {
        format: STATE_FORMAT.into(),
        version: 1,
        candidates: candidate_set_hash(),
        seed: state.config.seed,
        space: *space,
        search: state.config.clone(),
        iter: state.iter,
        streams: state.streams.clone(),
        sampler: state.sampler.clone(),
        adam_steps: [
            state.adam_wg.step,
            state.adam_wd.step,
            state.adam_alpha.step,
            state.adam_beta.step,
        ],
    };
    let json = serde_json::to_string(&file).expect("state serializes");
    let path = dir.join(STATE_JSON);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let archive = TensorArchive {
        meta: String::new(),
        tensors: state.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect(),
    };
    archive.save(&dir.join(STATE_TENSORS))
}

/// Inverse of [`save_search_state`].
pub fn load_search_state(dir: &Path, data: &Dataset) -> Result<(SearchState, SpaceConfig)> {
    let path = dir.join(STATE_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: StateFile = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if file.format != STATE_FORMAT || file.version != 1 || file.candidates != candidate_set_hash() {
        return Err(Error::Format(format!("{}: incompatible search state", path.display())));
    }
    let mut config = file.search;
    config.seed = file.seed;
    let mut state = SearchState::new(config, file.space.template()?, data)?;
    let archive = TensorArchive::load(&dir.join(STATE_TENSORS))?;
    archive.restore(state.tensors_mut())?;
    state.iter = file.iter;
    state.streams = file.streams;
    state.sampler = file.sampler;
    [state.adam_wg.step, state.adam_wd.step, state.adam_alpha.step, state.adam_beta.step] = file.adam_steps;
    state.arch.tau = state.config.tau_at(state.iter);
    Ok((state, file.space))
}
