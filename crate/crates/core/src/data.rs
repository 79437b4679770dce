//! Image datasets and the infinite minibatch sampler.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images stored as one `[N, C, H, W]` tensor with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    shape: Vec<usize>,
    dtype: String,
    file: String,
}

const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "advnas-images";

impl Dataset {
    pub fn new(images: Tensor<f32>) -> Result<Self> {
        match images.shape() {
            [_, _, h, w] if h == w => {}
            s => return Err(Error::Format(format!("dataset must be [N, C, R, R], got {s:?}"))),
        }
        if !images.all_finite() {
            return Err(Error::Numeric("dataset contains non-finite values".into()));
        }
        Ok(Dataset { images })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn resolution(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    fn image_len(&self) -> usize {
        self.images.numel() / self.len()
    }

    pub fn gather(&self, idx: &[usize]) -> Tensor<f32> {
        let n = self.image_len();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(&self.images.data()[i * n..(i + 1) * n]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = idx.len();
        Tensor::new(shape, data).expect("gathered shape matches")
    }

    /// First `n` images and the rest.
    pub fn split(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::Config(format!("cannot split {} images at {n}", self.len())));
        }
        Ok((
            Dataset::new(self.images.slice_rows(0, n)?)?,
            Dataset::new(self.images.slice_rows(n, self.len() - n)?)?,
        ))
    }

    /// Seeded toy distribution: a Gaussian blob centred near one of two
    /// fixed positions (opposite quadrants), with jittered centre and width.
    pub fn two_mode(n: usize, resolution: usize, seed: u64) -> Result<Self> {
        if n == 0 || resolution < 2 {
            return Err(Error::Config("two-mode dataset needs n > 0 and resolution >= 2".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = resolution as f64;
        let mut data = Vec::with_capacity(n * resolution * resolution);
        for _ in 0..n {
            let (cx, cy) = if rng.gen_bool(0.5) { (0.3, 0.3) } else { (0.7, 0.7) };
            let cx = cx * (r - 1.0) + rng.gen_range(-0.5..0.5);
            let cy = cy * (r - 1.0) + rng.gen_range(-0.5..0.5);
            let sigma = r / 8.0 * rng.gen_range(0.85..1.15);
            for y in 0..resolution {
                for x in 0..resolution {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    data.push((2.0 * (-d2 / (2.0 * sigma * sigma)).exp() - 1.0) as f32);
                }
            }
        }
        Dataset::new(Tensor::new([n, 1, resolution, resolution], data)?)
    }

    /// Resolves `synth:<name>[@resolution]` or a dataset directory.
    pub fn open(spec: &str, synth_size: usize, seed: u64) -> Result<Self> {
        match spec.strip_prefix("synth:") {
            Some(rest) => {
                let (name, res) = match rest.split_once('@') {
                    Some((name, r)) => (
                        name,
                        r.parse()
                            .map_err(|_| Error::Config(format!("bad synthetic resolution in {spec:?}")))?,
                    ),
                    None => (rest, 16),
                };
                match name {
                    "two-mode" => Dataset::two_mode(synth_size, res, seed),
                    _ => Err(Error::Config(format!("unknown synthetic dataset {name:?}"))),
                }
            }
            None => Dataset::load_dir(Path::new(spec)),
        }
    }

    /// Reads `manifest.json` and the raw little-endian f32 tensor it names.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        if !dir.is_dir() {
            return Err(Error::Config(format!("dataset directory {} not found", dir.display())));
        }
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
        if m.format != FORMAT || m.version != 1 || m.dtype != "f32-le" {
            return Err(Error::Format(format!(
                "{}: unsupported dataset {} v{} ({})",
                mpath.display(),
                m.format,
                m.version,
                m.dtype
            )));
        }
        let fpath = dir.join(&m.file);
        let bytes = fs::read(&fpath).map_err(|e| Error::io(&fpath, e))?;
        let numel: usize = m.shape.iter().product();
        if bytes.len() != numel * 4 {
            return Err(Error::Format(format!(
                "{}: {} bytes for shape {:?}",
                fpath.display(),
                bytes.len(),
                m.shape
            )));
        }
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Dataset::new(Tensor::new(m.shape, data)?)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = Manifest {
            format: FORMAT.into(),
            version: 1,
            shape: self.images.shape().to_vec(),
            dtype: "f32-le".into(),
            file: "images.f32".into(),
        };
        let bytes: Vec<u8> = self.images.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let fpath = dir.join(&m.file);
        fs::write(&fpath, bytes).map_err(|e| Error::io(&fpath, e))?;
        let mpath = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))
    }
}

/// Endless shuffled pass over a dataset; reshuffles on every wrap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampler {
    order: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    pub fn new(len: usize) -> Self {
        Sampler {
            order: (0..len).collect(),
            cursor: len,
        }
    }

    pub fn next_indices(&mut self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    pub fn next_batch(&mut self, ds: &Dataset, n: usize, rng: &mut impl Rng) -> Tensor<f32> {
        let idx = self.next_indices(n, rng);
        ds.gather(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_wraps_and_covers_every_item_per_pass() {
        let mut s = Sampler::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut first = s.next_indices(5, &mut rng);
        first.sort();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.next_indices(12, &mut rng).len(), 12);
    }

    #[test]
    fn two_mode_is_seeded_and_bounded() {
        let a = Dataset::two_mode(20, 16, 3).unwrap();
        let b = Dataset::two_mode(20, 16, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.images().data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(a.resolution(), 16);
    }

    #[test]
    fn directory_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("ds");
        let a = Dataset::two_mode(4, 16, 0).unwrap();
        a.save_dir(&dir).unwrap();
        assert_eq!(Dataset::load_dir(&dir).unwrap(), a);
        assert!(matches!(Dataset::load_dir(&tmp.path().join("missing")), Err(Error::Config(_))));
    }
}
