//! Fréchet gesture distance between Gaussian fits of real and generated
//! motion, in a learned autoencoder latent space and in raw feature space.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{debug, info};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::nn::{AdamW, Graph, ParamSet};

/// Eigenvalues above `-CLAMP_TOL * scale` are treated as rounding noise.
pub const CLAMP_TOL: f64 = 1e-8;
/// Eigenvalues below `-REJECT_TOL * scale` mean the input is not PSD.
pub const REJECT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
    pub n: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased covariance of the rows of `features`.
pub fn fit_gaussian(features: ArrayView2<'_, f64>) -> Result<GaussianStats> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 samples for a covariance, got {n}"
        )));
    }
    let mean = features.mean_axis(Axis(0)).expect("non-empty");
    let centered = &features - &mean;
    let mut cov = centered.t().dot(&centered) / (n - 1) as f64;
    // Symmetric by construction up to summation order; make it exact.
    let sym = (&cov + &cov.t()) * 0.5;
    cov.assign(&sym);
    Ok(GaussianStats { mean, cov, n })
}

fn to_dmatrix(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// Eigenvalues with rounding noise removed: small negatives and anything
/// below the numerical rank cut-off become zero.
fn clean_spectrum(eig: &SymmetricEigen<f64, nalgebra::Dyn>, what: &str) -> Result<Vec<f64>> {
    let n = eig.eigenvalues.len();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = top.max(1.0);
    let rank_cut = top * n as f64 * f64::EPSILON;
    let mut out = Vec::with_capacity(n);
    for &l in eig.eigenvalues.iter() {
        if l < -REJECT_TOL * scale {
            return Err(Error::Numeric(format!(
                "{what} has eigenvalue {l:.3e}; not positive semidefinite"
            )));
        }
        if l < -CLAMP_TOL * scale {
            debug!("{what}: clamping eigenvalue {l:.3e}");
        }
        out.push(if l <= rank_cut { 0.0 } else { l });
    }
    Ok(out)
}

/// Symmetric PSD square root through the eigendecomposition.
fn psd_sqrt(cov: &Array2<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(to_dmatrix(cov));
    let lambda = clean_spectrum(&eig, "covariance")?;
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, l) in lambda.iter().enumerate() {
        scaled.column_mut(j).scale_mut(l.sqrt());
    }
    Ok(&scaled * v.transpose())
}

/// One side of the distance with its covariance square root prepared, so
/// a real corpus can be compared against many generated ones.
#[derive(Debug, Clone)]
pub struct FrechetReference {
    stats: GaussianStats,
    root: DMatrix<f64>,
    trace: f64,
}

impl FrechetReference {
    pub fn new(stats: GaussianStats) -> Result<Self> {
        let root = psd_sqrt(&stats.cov)?;
        let trace = stats.cov.diag().sum();
        Ok(FrechetReference { stats, root, trace })
    }

    pub fn stats(&self) -> &GaussianStats {
        &self.stats
    }

    /// `|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)`, clamped at 0.
    ///
    /// The eigenvalues of `S1^1/2 S2 S1^1/2 = (S2^1/2 S1^1/2)^T (S2^1/2 S1^1/2)`
    /// are the squared singular values of `S2^1/2 S1^1/2`, so the trace of its
    /// square root is that product's singular value sum. Taking singular
    /// values directly avoids square roots of rounding noise in the null
    /// space of rank-deficient covariances.
    pub fn distance_to(&self, other: &GaussianStats) -> Result<f64> {
        let a = &self.stats;
        if a.dim() != other.dim() || other.cov.dim() != (other.dim(), other.dim()) {
            return Err(Error::Shape(format!(
                "Gaussian dimensions differ: {} vs {}",
                a.dim(),
                other.dim()
            )));
        }
        let mean_term: f64 = (&a.mean - &other.mean).mapv(|d| d * d).sum();
        let product = psd_sqrt(&other.cov)? * &self.root;
        let cross: f64 = product.singular_values().iter().sum();
        let d = mean_term + self.trace + other.cov.diag().sum() - 2.0 * cross;
        if !d.is_finite() {
            return Err(Error::Numeric("Fréchet distance is not finite".into()));
        }
        Ok(d.max(0.0))
    }
}

pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    FrechetReference::new(a.clone())?.distance_to(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoencoderConfig {
    pub window: usize,
    pub width: usize,
    pub hidden: usize,
    pub latent: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Frame stride between training windows.
    pub stride: usize,
    pub seed: u64,
}

impl AutoencoderConfig {
    pub fn new(width: usize) -> Self {
        AutoencoderConfig {
            window: 30,
            width,
            hidden: 128,
            latent: 32,
            epochs: 20,
            batch_size: 16,
            lr: 1e-3,
            stride: 5,
            seed: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.window * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window", self.window),
            ("width", self.width),
            ("hidden", self.hidden),
            ("latent", self.latent),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("stride", self.stride),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Invalid(format!("autoencoder {name} must be positive")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!(
                "autoencoder lr must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("window", self.window);
        kv.set("width", self.width);
        kv.set("hidden", self.hidden);
        kv.set("latent", self.latent);
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.lr);
        kv.set("stride", self.stride);
        kv.set("seed", self.seed);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let width = kv
            .get("width")?
            .ok_or_else(|| Error::Invalid("autoencoder config needs a width".into()))?;
        let mut c = AutoencoderConfig::new(width);
        kv.read_into("window", &mut c.window)?;
        kv.read_into("hidden", &mut c.hidden)?;
        kv.read_into("latent", &mut c.latent)?;
        kv.read_into("epochs", &mut c.epochs)?;
        kv.read_into("batch_size", &mut c.batch_size)?;
        kv.read_into("lr", &mut c.lr)?;
        kv.read_into("stride", &mut c.stride)?;
        kv.read_into("seed", &mut c.seed)?;
        let unknown = kv.unknown_keys(&[
            "window",
            "width",
            "hidden",
            "latent",
            "epochs",
            "batch_size",
            "lr",
            "stride",
            "seed",
        ]);
        if !unknown.is_empty() {
            return Err(Error::Invalid(format!(
                "unknown autoencoder keys: {}",
                unknown.join(", ")
            )));
        }
        c.validate()?;
        Ok(c)
    }
}

/// Flattened `window`-frame slices of every sequence, `stride` frames apart.
pub fn windows(sequences: &[Array2<f64>], window: usize, stride: usize) -> Result<Array2<f64>> {
    let count: usize = sequences
        .iter()
        .map(|m| {
            if m.nrows() >= window {
                (m.nrows() - window) / stride + 1
            } else {
                0
            }
        })
        .sum();
    let width = sequences.first().map_or(0, |m| m.ncols());
    if sequences.iter().any(|m| m.ncols() != width) {
        return Err(Error::Shape("sequences differ in feature width".into()));
    }
    let mut out = Array2::zeros((count, window * width));
    let mut row = 0;
    for m in sequences {
        let mut start = 0;
        while start + window <= m.nrows() {
            let flat = m.slice(s![start..start + window, ..]);
            out.row_mut(row).assign(
                &flat
                    .as_standard_layout()
                    .into_shape_with_order(window * width)
                    .expect("contiguous"),
            );
            row += 1;
            start += stride;
        }
    }
    Ok(out)
}

/// Window encoder: two tanh layers down to the latent, mirrored decoder.
#[derive(Debug, Clone)]
pub struct MotionAutoencoder {
    config: AutoencoderConfig,
    params: ParamSet,
    /// Mean reconstruction loss per training epoch.
    pub epoch_losses: Vec<f64>,
}

fn layer_shapes(c: &AutoencoderConfig) -> [(&'static str, usize, usize); 4] {
    [
        ("enc1", c.input_dim(), c.hidden),
        ("enc2", c.hidden, c.latent),
        ("dec1", c.latent, c.hidden),
        ("dec2", c.hidden, c.input_dim()),
    ]
}

impl MotionAutoencoder {
    pub fn new(config: AutoencoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::default();
        for (name, fan_in, fan_out) in layer_shapes(&config) {
            let scale = (1.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            });
            params.insert(&format!("{name}.weight"), w);
            params.insert(&format!("{name}.bias"), Array2::zeros((1, fan_out)));
        }
        Ok(MotionAutoencoder {
            config,
            params,
            epoch_losses: Vec::new(),
        })
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent
    }

    fn weight(&self, layer: &str) -> (&Array2<f64>, &Array2<f64>) {
        (
            self.params.get(&format!("{layer}.weight")).expect("layer weight"),
            self.params.get(&format!("{layer}.bias")).expect("layer bias"),
        )
    }

    fn affine(&self, x: &Array2<f64>, layer: &str) -> Array2<f64> {
        let (w, b) = self.weight(layer);
        x.dot(w) + b
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim() {
            return Err(Error::Shape(format!(
                "autoencoder expects flattened windows of {}, got {}",
                self.config.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Latent codes for a batch of flattened windows.
    pub fn encode(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let h = self.affine(x, "enc1").mapv(f64::tanh);
        Ok(self.affine(&h, "enc2").mapv(f64::tanh))
    }

    pub fn reconstruct(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let z = self.encode(x)?;
        let h = self.affine(&z, "dec1").mapv(f64::tanh);
        Ok(self.affine(&h, "dec2"))
    }

    pub fn reconstruction_mse(&self, x: &Array2<f64>) -> Result<f64> {
        let r = self.reconstruct(x)?;
        Ok((&r - x).mapv(|d| d * d).mean().unwrap_or(0.0))
    }

    /// Latents of every window of every sequence, encoded in chunks so the
    /// flattened windows never all live in memory at once.
    pub fn encode_sequences(&self, sequences: &[Array2<f64>], stride: usize) -> Result<Array2<f64>> {
        let mut parts = Vec::new();
        for m in sequences {
            if m.ncols() != self.config.width {
                return Err(Error::Shape(format!(
                    "sequence is {} wide, autoencoder expects {}",
                    m.ncols(),
                    self.config.width
                )));
            }
            let w = self.config.window;
            if m.nrows() < w {
                continue;
            }
            let starts: Vec<usize> = (0..=m.nrows() - w).step_by(stride).collect();
            for chunk in starts.chunks(64) {
                let first = chunk[0];
                let last = chunk[chunk.len() - 1];
                let span = m.slice(s![first..last + w, ..]).to_owned();
                let flat = windows(&[span], w, stride)?;
                parts.push(self.encode(&flat)?);
            }
        }
        if parts.is_empty() {
            return Err(Error::Invalid(format!(
                "no sequence reaches the {}-frame window length",
                self.config.window
            )));
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("equal widths"))
    }

    fn batch_loss_and_grads(&self, x: &Array2<f64>) -> (f64, Vec<Option<Array2<f64>>>) {
        let mut g = Graph::new(&self.params);
        let input = g.input(x.clone());
        let mut h = input;
        for (i, (name, _, _)) in layer_shapes(&self.config).iter().enumerate() {
            let w = g.param_named(&format!("{name}.weight"));
            let b = g.param_named(&format!("{name}.bias"));
            h = g.linear(h, w, Some(b));
            if i < 3 {
                h = g.tanh(h);
            }
        }
        let loss = g.mse(h, x.clone());
        (g.scalar(loss), g.backward(loss))
    }

    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        self.params.save(checkpoint)?;
        self.config.to_kv().save(&Self::config_path(checkpoint))
    }

    pub fn config_path(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("cfg")
    }

    pub fn load(checkpoint: &Path) -> Result<Self> {
        let config = AutoencoderConfig::from_kv(&KeyValues::load(&Self::config_path(checkpoint))?)?;
        let mut fresh = MotionAutoencoder::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        fresh.params.load_from(&ParamSet::load(checkpoint)?)?;
        Ok(fresh)
    }
}

/// Trains on all `window`-frame slices of `sequences` with a mean squared
/// reconstruction loss. Deterministic for a fixed `config.seed`.
pub fn train_autoencoder(sequences: &[Array2<f64>], config: AutoencoderConfig) -> Result<MotionAutoencoder> {
    config.validate()?;
    if let Some(m) = sequences.iter().find(|m| m.ncols() != config.width) {
        return Err(Error::Shape(format!(
            "sequence is {} wide, config says {}",
            m.ncols(),
            config.width
        )));
    }
    let data = windows(sequences, config.window, config.stride)?;
    if data.nrows() < 100 {
        return Err(Error::Invalid(format!(
            "autoencoder training needs at least 100 windows, got {}",
            data.nrows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MotionAutoencoder::new(config, &mut rng)?;
    let mut opt = AdamW::new(&model.params, config.lr, 0.0);
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let x = data.select(Axis(0), batch);
            let (loss, grads) = model.batch_loss_and_grads(&x);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "autoencoder loss is not finite in epoch {epoch}"
                )));
            }
            opt.step(&mut model.params, &grads);
            total += loss * batch.len() as f64;
            seen += batch.len();
        }
        let mean = total / seen as f64;
        debug!("autoencoder epoch {epoch}: loss {mean:.6}");
        model.epoch_losses.push(mean);
    }
    info!(
        "autoencoder trained on {} windows, final loss {:.6}",
        data.nrows(),
        model.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(model)
}

/// What the raw-space distance compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RawSpace {
    /// Individual feature frames.
    #[default]
    Frames,
    /// Flattened autoencoder-length windows.
    Windows,
}

impl FromStr for RawSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frames" => Ok(RawSpace::Frames),
            "windows" => Ok(RawSpace::Windows),
            other => Err(Error::Invalid(format!("unknown raw space {other:?} (frames|windows)"))),
        }
    }
}

impl fmt::Display for RawSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RawSpace::Frames => "frames",
            RawSpace::Windows => "windows",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FgdReport {
    pub feature_space: f64,
    pub raw_space: f64,
}

/// Reference statistics of a real corpus in both spaces.
#[derive(Debug, Clone)]
pub struct FgdReference {
    feature: FrechetReference,
    raw: FrechetReference,
    raw_space: RawSpace,
    stride: usize,
}

fn raw_samples(sequences: &[Array2<f64>], space: RawSpace, window: usize, stride: usize) -> Result<Array2<f64>> {
    match space {
        RawSpace::Frames => {
            let views: Vec<_> = sequences.iter().map(|m| m.view()).collect();
            ndarray::concatenate(Axis(0), &views).map_err(|_| Error::Shape("sequences differ in feature width".into()))
        }
        RawSpace::Windows => windows(sequences, window, stride),
    }
}

fn check_corpus(sequences: &[Array2<f64>], what: &str) -> Result<()> {
    if sequences.iter().all(|m| m.nrows() == 0) {
        return Err(Error::Invalid(format!("{what} corpus is empty")));
    }
    Ok(())
}

impl FgdReference {
    /// `stride` spaces the encoded windows; 1 uses every window.
    pub fn new(
        real: &[Array2<f64>],
        autoencoder: &MotionAutoencoder,
        raw_space: RawSpace,
        stride: usize,
    ) -> Result<Self> {
        check_corpus(real, "real")?;
        let stride = stride.max(1);
        let latents = autoencoder.encode_sequences(real, stride)?;
        let raw = raw_samples(real, raw_space, autoencoder.config.window, stride)?;
        Ok(FgdReference {
            feature: FrechetReference::new(fit_gaussian(latents.view())?)?,
            raw: FrechetReference::new(fit_gaussian(raw.view())?)?,
            raw_space,
            stride,
        })
    }

    pub fn compare(&self, generated: &[Array2<f64>], autoencoder: &MotionAutoencoder) -> Result<FgdReport> {
        check_corpus(generated, "generated")?;
        let latents = autoencoder.encode_sequences(generated, self.stride)?;
        let raw = raw_samples(generated, self.raw_space, autoencoder.config.window, self.stride)?;
        Ok(FgdReport {
            feature_space: self.feature.distance_to(&fit_gaussian(latents.view())?)?,
            raw_space: self.raw.distance_to(&fit_gaussian(raw.view())?)?,
        })
    }
}

pub fn fgd_report(
    real: &[Array2<f64>],
    generated: &[Array2<f64>],
    autoencoder: &MotionAutoencoder,
    raw_space: RawSpace,
) -> Result<FgdReport> {
    FgdReference::new(real, autoencoder, raw_space, 1)?.compare(generated, autoencoder)
}

#[cfg(test)]
mod tests;
