//! Rate metrics and the end-to-end hybrid link design.
//!
//! All rates are in bps/Hz with noise power 1 and transmit power `γ`.

use num_complex::Complex64;
use rand::Rng;

use crate::decomposer::{
    baseband_update, decompose_waterfilled, quantize_phases, DecompositionSettings,
    DecompositionTrace, HybridProcessor,
};
use crate::error::{Error, Result};
use crate::numerics::{frobenius_norm, logdet2_hpd, ComplexMatrix};
use crate::reference::{mmse_combiner, optimal_unconstrained, rate_upper_bound, waterfill};

/// A stream whose waterfilled power is below `ZERO_POWER_TOL·N_s` is dropped
/// from the RF decomposition and carried as a zero baseband column.
pub const ZERO_POWER_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LinkDesign {
    pub precoder: HybridProcessor,
    pub combiner: HybridProcessor,
    pub gamma: f64,
    pub ns: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateReport {
    pub achieved: f64,
    pub upper_bound: f64,
    /// `(ε_precoder, ε_combiner)`.
    pub decomposition_errors: (f64, f64),
}

/// `log₂|I + (P/N_s)·R_n⁻¹·H̃H̃ᴴ|` for explicit precoder `f` and combiner `w`,
/// with `R_n = WᴴW` and `H̃ = WᴴHF`.
///
/// Evaluated as `log₂|R_n + (P/N_s)·H̃H̃ᴴ| − log₂|R_n|`, both Hermitian
/// positive definite.
pub fn spectral_efficiency_matrices(
    h: &ComplexMatrix,
    f: &ComplexMatrix,
    w: &ComplexMatrix,
    gamma: f64,
    ns: usize,
) -> Result<f64> {
    if h.nrows() != w.nrows() || h.ncols() != f.nrows() || f.ncols() != w.ncols() {
        return Err(Error::Dimension(format!(
            "channel {}x{}, precoder {}x{}, combiner {}x{}",
            h.nrows(),
            h.ncols(),
            f.nrows(),
            f.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let rn = w.adjoint() * w;
    let log_rn = logdet2_hpd(&rn).map_err(|e| match e {
        Error::NotPositiveDefinite => Error::SingularNoiseCovariance,
        other => other,
    })?;
    // Guard against a numerically singular R_n that Cholesky still accepts.
    let scale = rn.diagonal().iter().map(|z| z.re).fold(0.0, f64::max);
    if !(log_rn.is_finite()) || scale == 0.0 {
        return Err(Error::SingularNoiseCovariance);
    }
    let ht = w.adjoint() * h * f;
    let signal = &rn + &ht * ht.adjoint() * Complex64::new(gamma / ns as f64, 0.0);
    Ok(logdet2_hpd(&signal)? - log_rn)
}

pub fn spectral_efficiency(h: &ComplexMatrix, d: &LinkDesign) -> Result<f64> {
    spectral_efficiency_matrices(
        h,
        &d.precoder.product(),
        &d.combiner.product(),
        d.gamma,
        d.ns,
    )
}

/// `log₂|I + (γ/N_s)·HFFᴴHᴴ|`, evaluated on the `N_s × N_s` side.
pub fn mutual_information(h: &ComplexMatrix, f: &ComplexMatrix, gamma: f64, ns: usize) -> Result<f64> {
    if h.ncols() != f.nrows() {
        return Err(Error::Dimension(format!(
            "channel has {} columns, precoder has {} rows",
            h.ncols(),
            f.nrows()
        )));
    }
    let hf = h * f;
    let k = hf.ncols();
    let m = ComplexMatrix::identity(k, k) + hf.adjoint() * &hf * Complex64::new(gamma / ns as f64, 0.0);
    logdet2_hpd(&m)
}

/// `R̃ − N_s + ‖V₁ᴴF‖_F²`. Diagnostic only; never used inside the design loop.
pub fn mutual_information_approx(
    sv1: &[f64],
    v1: &ComplexMatrix,
    f: &ComplexMatrix,
    gamma: f64,
    ns: usize,
) -> f64 {
    rate_upper_bound(sv1, gamma, ns) - ns as f64 + frobenius_norm(&(v1.adjoint() * f)).powi(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkOptions {
    pub ns: usize,
    pub mt: usize,
    pub mr: usize,
    pub gamma: f64,
    pub settings: DecompositionSettings,
    pub waterfill: bool,
    /// `None` keeps continuous phases.
    pub quant_bits: Option<u32>,
}

impl LinkOptions {
    pub fn validate(&self, nr: usize, nt: usize) -> Result<()> {
        if self.ns == 0 {
            return Err(Error::InvalidInput("stream count must be positive".into()));
        }
        if !(self.ns <= self.mt && self.mt <= nt) {
            return Err(Error::InvalidInput(format!(
                "need ns ≤ mt ≤ nt, got {} ≤ {} ≤ {}",
                self.ns, self.mt, nt
            )));
        }
        if !(self.ns <= self.mr && self.mr <= nr) {
            return Err(Error::InvalidInput(format!(
                "need ns ≤ mr ≤ nr, got {} ≤ {} ≤ {}",
                self.ns, self.mr, nr
            )));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidInput(format!("SNR must be positive, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Unconstrained precoder target for one channel and SNR.
#[derive(Debug, Clone)]
pub struct PrecoderTarget {
    /// `V₁` or `V₁Γ`, `N_t × N_s`.
    pub target: ComplexMatrix,
    /// Number of leading streams with non-zero power.
    pub active: usize,
    pub v1: ComplexMatrix,
    pub u1: ComplexMatrix,
    pub singular_values: Vec<f64>,
    /// Equal-power bound, or the waterfilled rate when waterfilling.
    pub upper_bound: f64,
}

pub fn precoder_target(h: &ComplexMatrix, ns: usize, gamma: f64, waterfilled: bool) -> Result<PrecoderTarget> {
    let d = optimal_unconstrained(h, ns)?;
    let sv = d.top_singular_values;
    let (target, active, upper_bound) = if waterfilled {
        let alloc = waterfill(&sv, gamma, ns);
        let mut t = d.precoder.clone();
        for (j, g) in alloc.gains.iter().enumerate() {
            t.column_mut(j).scale_mut(*g);
        }
        let active = alloc
            .powers()
            .iter()
            .take_while(|&&p| p >= ZERO_POWER_TOL * ns as f64)
            .count();
        (t, active, alloc.rate(&sv, gamma))
    } else {
        (d.precoder.clone(), ns, rate_upper_bound(&sv, gamma, ns))
    };
    Ok(PrecoderTarget {
        target,
        active,
        v1: d.precoder,
        u1: d.combiner,
        singular_values: sv,
        upper_bound,
    })
}

/// Decomposes the precoder target with modulus `1/√N_t`, normalized to
/// `‖F_R F_B‖² = N_s`.
pub fn design_precoder<R: Rng + ?Sized>(
    t: &PrecoderTarget,
    mt: usize,
    settings: &DecompositionSettings,
    rng: &mut R,
) -> Result<(HybridProcessor, DecompositionTrace)> {
    let (nt, ns) = t.target.shape();
    let s = settings.clone().with_normalization(true);
    let active = t.target.columns(0, t.active).into_owned();
    decompose_waterfilled(&active, ns - t.active, mt, 1.0 / (nt as f64).sqrt(), &s, rng)
}

/// Quantizes the RF phases and refits the non-zero baseband columns against
/// `target` by least squares; renormalizes to `normalize_to` streams if given.
pub fn quantize_and_refit(
    hp: &HybridProcessor,
    target: &ComplexMatrix,
    bits: u32,
    normalize_to: Option<usize>,
) -> Result<HybridProcessor> {
    let rf = quantize_phases(&hp.rf, bits)?;
    let active = active_columns(&hp.baseband);
    let mut baseband = ComplexMatrix::zeros(hp.baseband.nrows(), hp.baseband.ncols());
    if active > 0 {
        let fit = baseband_update(&rf, &target.columns(0, active).into_owned())?;
        baseband.columns_mut(0, active).copy_from(&fit);
    }
    let mut out = HybridProcessor { rf, baseband };
    if let Some(ns) = normalize_to {
        out.normalize_power(ns);
    }
    Ok(out)
}

/// Leading columns that are not identically zero.
fn active_columns(m: &ComplexMatrix) -> usize {
    (0..m.ncols())
        .take_while(|&j| m.column(j).iter().any(|z| z.norm_sqr() > 0.0))
        .count()
}

/// Combiner target: the MMSE combiner for the realized precoder. Streams
/// that carry no power (waterfilling) have a zero MMSE column; those columns
/// fall back to the matching left singular vector so the combiner keeps full
/// column rank.
pub fn combiner_target(
    h: &ComplexMatrix,
    f: &ComplexMatrix,
    gamma: f64,
    ns: usize,
    u1: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    let mut w = mmse_combiner(h, f, gamma, ns)?;
    let active = active_columns(f);
    for j in active..ns {
        w.set_column(j, &u1.column(j));
    }
    Ok(w)
}

/// Decomposes the combiner target with modulus `1/√N_r`, without power
/// normalization.
pub fn design_combiner<R: Rng + ?Sized>(
    w_target: &ComplexMatrix,
    mr: usize,
    settings: &DecompositionSettings,
    rng: &mut R,
) -> Result<(HybridProcessor, DecompositionTrace)> {
    let nr = w_target.nrows();
    let s = settings.clone().with_normalization(false);
    decompose_waterfilled(w_target, 0, mr, 1.0 / (nr as f64).sqrt(), &s, rng)
}

/// Full pipeline for one channel: SVD target (optionally waterfilled),
/// precoder decomposition, optional phase quantization with baseband refit,
/// MMSE combiner for the realized precoder, combiner decomposition, rates.
pub fn design_link<R: Rng + ?Sized>(
    h: &ComplexMatrix,
    opts: &LinkOptions,
    rng: &mut R,
) -> Result<(LinkDesign, RateReport)> {
    let (nr, nt) = h.shape();
    opts.validate(nr, nt)?;
    let t = precoder_target(h, opts.ns, opts.gamma, opts.waterfill)?;
    let (mut precoder, ptrace) = design_precoder(&t, opts.mt, &opts.settings, rng)?;
    let mut eps_p = ptrace.final_error;
    if let Some(bits) = opts.quant_bits {
        precoder = quantize_and_refit(&precoder, &t.target, bits, Some(opts.ns))?;
        eps_p = active_error(&t.target, &precoder, t.active)?;
    }

    let f = precoder.product();
    let w_target = combiner_target(h, &f, opts.gamma, opts.ns, &t.u1)?;
    let (mut combiner, ctrace) = design_combiner(&w_target, opts.mr, &opts.settings, rng)?;
    let mut eps_c = ctrace.final_error;
    if let Some(bits) = opts.quant_bits {
        combiner = quantize_and_refit(&combiner, &w_target, bits, None)?;
        eps_c = active_error(&w_target, &combiner, opts.ns)?;
    }

    let design = LinkDesign {
        precoder,
        combiner,
        gamma: opts.gamma,
        ns: opts.ns,
    };
    let achieved = spectral_efficiency(h, &design)?;
    Ok((
        design,
        RateReport {
            achieved,
            upper_bound: t.upper_bound,
            decomposition_errors: (eps_p, eps_c),
        },
    ))
}

/// Relative error over the first `active` columns, ignoring the power
/// normalization scale of the hybrid product.
pub fn active_error(target: &ComplexMatrix, hp: &HybridProcessor, active: usize) -> Result<f64> {
    let t = target.columns(0, active).into_owned();
    let p = hp.product().columns(0, active).into_owned();
    let tn = frobenius_norm(&t);
    if tn == 0.0 {
        return Err(Error::ZeroTarget);
    }
    // Undo the normalization gain before comparing.
    let pn = frobenius_norm(&p);
    let scale = if pn > 0.0 {
        let inner: Complex64 = p.iter().zip(t.iter()).map(|(a, b)| a.conj() * b).sum();
        inner.re / (pn * pn)
    } else {
        0.0
    };
    Ok(frobenius_norm(&(&t - p * Complex64::new(scale, 0.0))) / tn)
}
