//! Sample-quality proxy: Fréchet distance between Gaussian fits of real and
//! generated feature vectors.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest tolerated negative eigenvalue, relative to the spectrum's scale.
const NEG_EIGEN_TOL: f64 = 1e-6;

/// Mean and covariance of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn neumaier(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl Moments {
    /// Rows are samples. Compensated sums; covariance uses `n - 1`.
    pub fn of(features: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = features.shape();
        if n < 2 {
            return Err(Error::Contract(format!("moments need at least 2 samples, got {n}")));
        }
        let mean = DVector::from_fn(d, |j, _| neumaier(features.column(j).iter().copied()) / n as f64);
        let centred = DMatrix::from_fn(n, d, |i, j| features[(i, j)] - mean[j]);
        let mut cov = DMatrix::zeros(d, d);
        for a in 0..d {
            for b in a..d {
                let s = neumaier((0..n).map(|i| centred[(i, a)] * centred[(i, b)])) / (n - 1) as f64;
                cov[(a, b)] = s;
                cov[(b, a)] = s;
            }
        }
        Ok(Moments { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn symmetric_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite covariance".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym))
}

fn clamp_spectrum(values: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let scale = values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if let Some(bad) = values.iter().find(|&&v| v < -NEG_EIGEN_TOL * scale) {
        return Err(Error::Numeric(format!("{what} has negative eigenvalue {bad:e}")));
    }
    Ok(values.map(|v| v.max(0.0)))
}

fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigen(m)?;
    let vals = clamp_spectrum(&eig.eigenvalues, "covariance")?.map(f64::sqrt);
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&vals) * q.transpose())
}

/// `|mu_r - mu_f|^2 + tr(S_r + S_f - 2 (S_r S_f)^(1/2))`. The trace term
/// uses the symmetric form `S_r^(1/2) S_f S_r^(1/2)`.
pub fn frechet_distance(real: &Moments, fake: &Moments) -> Result<f64> {
    if real.dim() != fake.dim() {
        return Err(Error::Contract(format!(
            "feature dimensions differ: {} vs {}",
            real.dim(),
            fake.dim()
        )));
    }
    let diff = &real.mean - &fake.mean;
    let root = sqrtm_psd(&real.cov)?;
    let inner = &root * &fake.cov * &root;
    let eig = symmetric_eigen(&inner)?;
    let cross = neumaier(clamp_spectrum(&eig.eigenvalues, "covariance product")?.iter().map(|v| v.sqrt()));
    let d = diff.norm_squared() + real.cov.trace() + fake.cov.trace() - 2.0 * cross;
    if !d.is_finite() {
        return Err(Error::Numeric("non-finite Fréchet distance".into()));
    }
    Ok(d.max(0.0))
}

/// Flattens `[N, ...]` images into rows, optionally through a fixed random
/// projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// `0` keeps raw pixels.
    pub projection_dim: usize,
    pub projection_seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            projection_dim: 32,
            projection_seed: 0,
        }
    }
}

pub struct Features {
    projection: Option<DMatrix<f64>>,
    input_dim: usize,
}

impl Features {
    pub fn new(input_dim: usize, cfg: FeatureConfig) -> Self {
        let projection = (cfg.projection_dim > 0 && cfg.projection_dim < input_dim).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.projection_seed);
            let s = (input_dim as f64).sqrt().recip();
            DMatrix::from_fn(input_dim, cfg.projection_dim, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * s
            })
        });
        Features { projection, input_dim }
    }

    pub fn extract(&self, images: &Tensor<f32>) -> Result<DMatrix<f64>> {
        let n = images.shape()[0];
        if n == 0 || images.numel() / n != self.input_dim {
            return Err(Error::Contract(format!(
                "expected {} values per image, got shape {:?}",
                self.input_dim,
                images.shape()
            )));
        }
        let raw = DMatrix::from_row_iterator(n, self.input_dim, images.data().iter().map(|&v| v as f64));
        Ok(match &self.projection {
            Some(p) => raw * p,
            None => raw,
        })
    }
}

/// Proxy value plus simple moment gaps between real and generated pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frechet_proxy: f64,
    pub samples: usize,
    pub feature_dim: usize,
    /// Squared distance between feature means.
    pub mean_gap: f64,
    /// `tr(S_r) - tr(S_f)`.
    pub trace_gap: f64,
    pub pixel_mean_real: f64,
    pub pixel_mean_fake: f64,
    pub pixel_std_real: f64,
    pub pixel_std_fake: f64,
}

fn pixel_stats(t: &Tensor<f32>) -> (f64, f64) {
    let n = t.numel() as f64;
    let mean = neumaier(t.data().iter().map(|&v| v as f64)) / n;
    let var = neumaier(t.data().iter().map(|&v| (v as f64 - mean).powi(2))) / n;
    (mean, var.sqrt())
}

pub fn evaluate(real: &Tensor<f32>, fake: &Tensor<f32>, cfg: FeatureConfig) -> Result<EvalReport> {
    if real.shape()[1..] != fake.shape()[1..] {
        return Err(Error::Contract(format!(
            "real {:?} and generated {:?} images differ",
            real.shape(),
            fake.shape()
        )));
    }
    let dim = real.numel() / real.shape()[0].max(1);
    let features = Features::new(dim, cfg);
    let mr = Moments::of(&features.extract(real)?)?;
    let mf = Moments::of(&features.extract(fake)?)?;
    let (pmr, psr) = pixel_stats(real);
    let (pmf, psf) = pixel_stats(fake);
    Ok(EvalReport {
        frechet_proxy: frechet_distance(&mr, &mf)?,
        samples: fake.shape()[0],
        feature_dim: mr.dim(),
        mean_gap: (&mr.mean - &mf.mean).norm_squared(),
        trace_gap: mr.cov.trace() - mf.cov.trace(),
        pixel_mean_real: pmr,
        pixel_mean_fake: pmf,
        pixel_std_real: psr,
        pixel_std_fake: psf,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frechet_proxy = {:.6}", self.frechet_proxy)?;
        writeln!(f, "samples = {}", self.samples)?;
        writeln!(f, "feature_dim = {}", self.feature_dim)?;
        writeln!(f, "mean_gap = {:.6}", self.mean_gap)?;
        writeln!(f, "trace_gap = {:.6}", self.trace_gap)?;
        writeln!(f, "pixel_mean = {:.6} real, {:.6} generated", self.pixel_mean_real, self.pixel_mean_fake)?;
        write!(f, "pixel_std = {:.6} real, {:.6} generated", self.pixel_std_real, self.pixel_std_fake)
    }
}
