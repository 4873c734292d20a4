//! DDPM machinery with x0 parameterization: cosine schedule, forward
//! noising, posterior reverse steps and the Huber objective.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use ndarray::{Array1, Array2, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::io;

pub const COSINE_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;

/// `f(t) / f(0)` with `f(t) = cos²(((t / t_max) + s) / (1 + s) · π/2)`.
pub fn cosine_alpha_bar(t: f64, t_max: usize) -> f64 {
    let f = |t: f64| {
        let c = ((t / t_max as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2).cos();
        c * c
    };
    f(t) / f(0.0)
}

/// Per-step noise tables, indexed by noising step `t` in `1..=t_max`.
/// Index 0 holds the clean state (`alpha_bar = 1`, `beta = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub fn cosine_schedule(t_max: usize) -> NoiseSchedule {
    assert!(t_max >= 1, "schedule needs at least one step");
    let mut betas = vec![0.0];
    let mut alpha_bars = vec![1.0];
    for t in 1..=t_max {
        let ratio = cosine_alpha_bar(t as f64, t_max) / cosine_alpha_bar((t - 1) as f64, t_max);
        let beta = (1.0 - ratio).clamp(f64::MIN_POSITIVE, MAX_BETA);
        betas.push(beta);
        alpha_bars.push(alpha_bars[t - 1] * (1.0 - beta));
    }
    NoiseSchedule { betas, alpha_bars }
}

impl NoiseSchedule {
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b <= MAX_BETA)) {
            return Err(Error::Invalid("betas must lie in (0, 0.999]".into()));
        }
        let mut s = NoiseSchedule {
            betas: vec![0.0],
            alpha_bars: vec![1.0],
        };
        for &b in betas {
            let last = *s.alpha_bars.last().unwrap();
            s.betas.push(b);
            s.alpha_bars.push(last * (1.0 - b));
        }
        Ok(s)
    }

    pub fn steps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Invalid(format!("noising step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// Uniform draw from `1..=T`.
    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(1..=self.steps())
    }

    /// (coefficient on x0_hat, coefficient on x_t, posterior variance).
    pub fn posterior_coefficients(&self, t: usize) -> Result<(f64, f64, f64)> {
        self.check_step(t)?;
        let (ab, ab_prev, beta) = (self.alpha_bar(t), self.alpha_bar(t - 1), self.beta(t));
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = (1.0 - ab_prev) / (1.0 - ab) * beta;
        Ok((c0, ct, var))
    }

    /// Writes betas and alpha-bars (steps 1..=T) as a `GNS1` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_vector_pair(
            io::SCHEDULE_MAGIC,
            path,
            &Array1::from(self.betas[1..].to_vec()),
            &Array1::from(self.alpha_bars[1..].to_vec()),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (betas, _) = io::read_vector_pair(io::SCHEDULE_MAGIC, path)?;
        // Values are stored as f32; the 0.999 clip does not survive rounding.
        let betas: Vec<f64> = betas.iter().map(|&b| b.min(MAX_BETA)).collect();
        NoiseSchedule::from_betas(&betas)
    }
}

fn same_shape(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// `x_t = sqrt(ᾱ_t) x0 + sqrt(1 - ᾱ_t) eps`.
pub fn q_sample(x0: &Array2<f64>, t: usize, eps: &Array2<f64>, schedule: &NoiseSchedule) -> Result<Array2<f64>> {
    same_shape(x0, eps, "q_sample")?;
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(x0).and(eps).map_collect(|&x, &e| a * x + b * e))
}

/// One reverse step `x_t -> x_{t-1}` from the posterior `q(x_{t-1} | x_t, x0_hat)`.
/// No noise is added at `t = 1`.
pub fn posterior_step(
    x_t: &Array2<f64>,
    x0_hat: &Array2<f64>,
    t: usize,
    fresh_noise: &Array2<f64>,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    same_shape(x_t, x0_hat, "posterior_step")?;
    same_shape(x_t, fresh_noise, "posterior_step noise")?;
    let (c0, ct, var) = schedule.posterior_coefficients(t)?;
    let sigma = if t == 1 { 0.0 } else { var.sqrt() };
    Ok(Zip::from(x0_hat)
        .and(x_t)
        .and(fresh_noise)
        .map_collect(|&x0, &xt, &z| c0 * x0 + ct * xt + sigma * z))
}

/// Mean Huber penalty of `x0 - x0_hat`.
pub fn huber_loss(x0: &Array2<f64>, x0_hat: &Array2<f64>, delta: f64) -> Result<f64> {
    same_shape(x0, x0_hat, "huber_loss")?;
    let n = x0.len().max(1) as f64;
    let total: f64 = Zip::from(x0)
        .and(x0_hat)
        .fold(0.0, |acc, &a, &b| acc + huber(a - b, delta));
    Ok(total / n)
}

#[inline]
pub fn huber(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * (a - 0.5 * delta)
    }
}

#[inline]
pub fn huber_derivative(e: f64, delta: f64) -> f64 {
    e.clamp(-delta, delta)
}
