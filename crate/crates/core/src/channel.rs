//! Channel generators: i.i.d. Rayleigh fading and the clustered narrowband
//! mmWave model built from uniform linear array responses.
//!
//! Both families are normalized so that `E‖H‖_F² = N_t·N_r`. Angles are in
//! radians.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ComplexMatrix;

/// Path angles farther than this from their cluster mean are redrawn.
pub const LAPLACIAN_TRUNCATION: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UlaGeometry {
    pub element_count: usize,
    pub spacing_over_wavelength: f64,
}

impl UlaGeometry {
    pub fn new(element_count: usize, spacing_over_wavelength: f64) -> Result<Self> {
        let g = Self {
            element_count,
            spacing_over_wavelength,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn half_wavelength(element_count: usize) -> Self {
        Self {
            element_count,
            spacing_over_wavelength: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.element_count == 0 {
            return Err(Error::InvalidInput("ULA needs at least one element".into()));
        }
        if !(self.spacing_over_wavelength > 0.0) || !self.spacing_over_wavelength.is_finite() {
            return Err(Error::InvalidInput(format!(
                "ULA spacing must be positive, got {}",
                self.spacing_over_wavelength
            )));
        }
        Ok(())
    }
}

/// Array response `(1/√N)·[1, e^{jκ}, …, e^{j(N−1)κ}]` with
/// `κ = 2π·(d/λ)·sin(angle)`.
pub fn ula_response(g: &UlaGeometry, angle: f64) -> DVector<Complex64> {
    let n = g.element_count;
    let amp = 1.0 / (n as f64).sqrt();
    let kappa = 2.0 * PI * g.spacing_over_wavelength * angle.sin();
    DVector::from_fn(n, |k, _| Complex64::from_polar(amp, kappa * k as f64))
}

/// One `CN(0, 1)` sample.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

/// `nr × nt` matrix of i.i.d. `CN(0, 1)` entries.
pub fn gen_rayleigh<R: Rng + ?Sized>(nr: usize, nt: usize, rng: &mut R) -> ComplexMatrix {
    // Column-major fill keeps the draw order fixed for a given seed.
    let mut h = ComplexMatrix::zeros(nr, nt);
    for z in h.iter_mut() {
        *z = complex_normal(rng);
    }
    h
}

/// Closed angular interval `[min, max]` in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSector {
    pub min: f64,
    pub max: f64,
}

impl AngleSector {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmWaveParams {
    pub clusters: usize,
    pub paths_per_cluster: usize,
    pub tx_sector: AngleSector,
    pub rx_sector: AngleSector,
    /// Standard deviation of departure angles within a cluster.
    pub tx_spread: f64,
    /// Standard deviation of arrival angles within a cluster.
    pub rx_spread: f64,
    pub tx_geometry: UlaGeometry,
    pub rx_geometry: UlaGeometry,
}

impl MmWaveParams {
    /// 8 clusters of 10 paths, 7.5° spreads, a 60° transmit sector centred on
    /// broadside, an omnidirectional receiver and half-wavelength arrays.
    pub fn standard(nt: usize, nr: usize) -> Self {
        let spread = 7.5f64.to_radians();
        Self {
            clusters: 8,
            paths_per_cluster: 10,
            tx_sector: AngleSector::new(-PI / 6.0, PI / 6.0),
            rx_sector: AngleSector::new(-PI, PI),
            tx_spread: spread,
            rx_spread: spread,
            tx_geometry: UlaGeometry::half_wavelength(nt),
            rx_geometry: UlaGeometry::half_wavelength(nr),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.paths_per_cluster == 0 {
            return Err(Error::InvalidInput(
                "mmWave model needs at least one cluster and one path".into(),
            ));
        }
        for (name, s) in [("tx_sector", self.tx_sector), ("rx_sector", self.rx_sector)] {
            if !(s.min < s.max) || !s.min.is_finite() || !s.max.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "{name} must satisfy min < max, got [{}, {}]",
                    s.min, s.max
                )));
            }
        }
        for (name, s) in [("tx_spread", self.tx_spread), ("rx_spread", self.rx_spread)] {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {s}")));
            }
        }
        self.tx_geometry.validate()?;
        self.rx_geometry.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathRecord {
    pub cluster: usize,
    pub path: usize,
    pub gain: Complex64,
    /// Angle of arrival.
    pub aoa: f64,
    /// Angle of departure.
    pub aod: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub paths: Vec<PathRecord>,
}

/// Laplacian with the given mean and standard deviation (scale `σ/√2`),
/// redrawn until within [`LAPLACIAN_TRUNCATION`] of the mean.
pub fn truncated_laplacian<R: Rng + ?Sized>(rng: &mut R, mean: f64, std_dev: f64) -> f64 {
    let scale = std_dev / SQRT_2;
    loop {
        // Inverse CDF on u ∈ (−½, ½).
        let u: f64 = rng.random::<f64>() - 0.5;
        if u == -0.5 {
            continue;
        }
        let x = -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
        if x.abs() <= LAPLACIAN_TRUNCATION {
            return mean + x;
        }
    }
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, s: AngleSector) -> f64 {
    s.min + rng.random::<f64>() * s.width()
}

/// Draws cluster means uniformly over the sectors, then per-path angles
/// around each mean and `CN(0, 1)` path gains.
pub fn sample_paths<R: Rng + ?Sized>(p: &MmWaveParams, rng: &mut R) -> PathSet {
    let mut paths = Vec::with_capacity(p.clusters * p.paths_per_cluster);
    for cluster in 0..p.clusters {
        let aoa_mean = uniform_in(rng, p.rx_sector);
        let aod_mean = uniform_in(rng, p.tx_sector);
        for path in 0..p.paths_per_cluster {
            let aoa = truncated_laplacian(rng, aoa_mean, p.rx_spread);
            let aod = truncated_laplacian(rng, aod_mean, p.tx_spread);
            let gain = complex_normal(rng);
            paths.push(PathRecord {
                cluster,
                path,
                gain,
                aoa,
                aod,
            });
        }
    }
    PathSet { paths }
}

/// `√(N_t·N_r/(N_c·N_p)) · Σ α·a_r(θ)·a_t(φ)ᴴ` over the given paths.
pub fn channel_from_paths(p: &MmWaveParams, paths: &PathSet) -> ComplexMatrix {
    let nt = p.tx_geometry.element_count;
    let nr = p.rx_geometry.element_count;
    let scale = ((nt * nr) as f64 / (p.clusters * p.paths_per_cluster) as f64).sqrt();
    let mut h = ComplexMatrix::zeros(nr, nt);
    for rec in &paths.paths {
        let ar = ula_response(&p.rx_geometry, rec.aoa) * (rec.gain * scale);
        let at = ula_response(&p.tx_geometry, rec.aod);
        h.ger(Complex64::new(1.0, 0.0), &ar, &at.map(|z| z.conj()), Complex64::new(1.0, 0.0));
    }
    h
}

pub fn gen_mmwave<R: Rng + ?Sized>(p: &MmWaveParams, rng: &mut R) -> ComplexMatrix {
    channel_from_paths(p, &sample_paths(p, rng))
}
