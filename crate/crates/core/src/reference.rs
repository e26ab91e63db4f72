//! Unconstrained reference processors.
//!
//! These are the decomposition targets: the SVD precoder/combiner pair, the
//! equal-power rate upper bound, waterfilling, and the linear MMSE combiner.
//! Noise power is fixed to 1 throughout, so the transmit power equals the
//! SNR `γ`.

use nalgebra::Cholesky;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{svd, ComplexMatrix};

/// `σ_Ns ≤ RANK_TOL·σ₁` is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct UnconstrainedDesign {
    /// `V₁`, `N_t × N_s`.
    pub precoder: ComplexMatrix,
    /// `U₁`, `N_r × N_s`.
    pub combiner: ComplexMatrix,
    /// Leading `N_s` singular values of the channel, descending.
    pub top_singular_values: Vec<f64>,
}

/// Leading `ns` right/left singular vectors of `h`.
pub fn optimal_unconstrained(h: &ComplexMatrix, ns: usize) -> Result<UnconstrainedDesign> {
    if ns == 0 {
        return Err(Error::InvalidInput("stream count must be positive".into()));
    }
    let s = svd(h)?;
    if ns > s.rank() {
        return Err(Error::RankDeficient(format!(
            "{ns} streams requested from a {}x{} channel",
            h.nrows(),
            h.ncols()
        )));
    }
    let sv = &s.singular_values;
    if sv[ns - 1] <= RANK_TOL * sv[0] {
        return Err(Error::RankDeficient(format!(
            "channel rank below {ns}: σ_{ns} = {:.3e}, σ_1 = {:.3e}",
            sv[ns - 1],
            sv[0]
        )));
    }
    Ok(UnconstrainedDesign {
        precoder: s.v.columns(0, ns).into_owned(),
        combiner: s.u.columns(0, ns).into_owned(),
        top_singular_values: sv[..ns].to_vec(),
    })
}

/// `Σ_{i<ns} log₂(1 + (γ/N_s)·σᵢ²)`.
pub fn rate_upper_bound(sv: &[f64], gamma: f64, ns: usize) -> f64 {
    let snr = gamma / ns as f64;
    sv.iter().take(ns).map(|s| (snr * s * s).ln_1p()).sum::<f64>() / std::f64::consts::LN_2
}

/// Per-stream amplitude gains; `Σ gainsᵢ² = N_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub gains: Vec<f64>,
}

impl PowerAllocation {
    pub fn powers(&self) -> Vec<f64> {
        self.gains.iter().map(|g| g * g).collect()
    }

    /// `Σ log₂(1 + (γ/N_s)·pᵢ·σᵢ²)` for this allocation.
    pub fn rate(&self, sv: &[f64], gamma: f64) -> f64 {
        let ns = self.gains.len() as f64;
        self.gains
            .iter()
            .zip(sv)
            .map(|(g, s)| (gamma / ns * g * g * s * s).ln_1p())
            .sum::<f64>()
            / std::f64::consts::LN_2
    }
}

/// Waterfilling over the `ns` strongest eigenchannels with total power `N_s`.
///
/// `pᵢ = max(0, μ − N_s/(γσᵢ²))`. The water level is found exactly by trying
/// `k = ns, ns−1, …, 1` active streams and keeping the first `k` for which
/// the weakest active stream still gets non-negative power.
pub fn waterfill(sv: &[f64], gamma: f64, ns: usize) -> PowerAllocation {
    assert!(sv.len() >= ns, "need {ns} singular values, got {}", sv.len());
    assert!(gamma > 0.0, "waterfilling needs a positive SNR");
    let nsf = ns as f64;
    let inv: Vec<f64> = sv[..ns]
        .iter()
        .map(|&s| {
            if s > 0.0 {
                nsf / (gamma * s * s)
            } else {
                f64::INFINITY
            }
        })
        .collect();

    let mut powers = vec![0.0; ns];
    for k in (1..=ns).rev() {
        if !inv[k - 1].is_finite() {
            continue;
        }
        let mu = (nsf + inv[..k].iter().sum::<f64>()) / k as f64;
        if mu - inv[k - 1] >= 0.0 {
            for i in 0..k {
                powers[i] = mu - inv[i];
            }
            break;
        }
    }
    PowerAllocation {
        gains: powers.iter().map(|p| p.max(0.0).sqrt()).collect(),
    }
}

/// Linear MMSE combiner for the effective precoder `f` (`N_t × N_s`):
/// `(√P/N_s)·((P/N_s)·HFFᴴHᴴ + I)⁻¹·HF` with `σ² = 1`, `P = γ`.
///
/// Evaluated through the push-through identity
/// `(cHFFᴴHᴴ + I)⁻¹HF = HF(cFᴴHᴴHF + I)⁻¹` so only an `N_s × N_s` system is
/// factored.
pub fn mmse_combiner(
    h: &ComplexMatrix,
    f: &ComplexMatrix,
    gamma: f64,
    ns: usize,
) -> Result<ComplexMatrix> {
    if h.ncols() != f.nrows() {
        return Err(Error::Dimension(format!(
            "channel has {} columns, precoder has {} rows",
            h.ncols(),
            f.nrows()
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!("SNR must be positive, got {gamma}")));
    }
    let nsf = ns as f64;
    let c = gamma / nsf;
    let hf = h * f;
    let k = hf.ncols();
    let mut gram = hf.adjoint() * &hf * Complex64::new(c, 0.0);
    for i in 0..k {
        gram[(i, i)] += 1.0;
    }
    let gram = (&gram + gram.adjoint()).scale(0.5);
    let chol = Cholesky::new(gram).ok_or(Error::NotPositiveDefinite)?;
    let inv = chol.inverse();
    Ok(hf * inv * Complex64::new(gamma.sqrt() / nsf, 0.0))
}
