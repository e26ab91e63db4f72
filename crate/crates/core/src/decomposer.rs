//! Constant-modulus matrix decomposition by alternating optimization.
//!
//! A target `T` (`N × N_s`) is approximated by `F_R·F_B` where every entry
//! of the RF factor `F_R` (`N × M`) has the same modulus and only its phases
//! are free. Each iteration
//!
//! 1. perturbs the RF phases, `φ ← φ + δ`, with `δ` found from the
//!    first-order model `e^{jδ} ≈ 1 + jδ` under the box `|δ| ≤ δ̄`; the
//!    problem separates into one small box least-squares problem per row;
//! 2. refits the baseband factor by exact least squares.
//!
//! Iteration stops once the relative error `ε_k = ‖T − F_R F_B‖_F / ‖T‖_F`
//! changes by at most the convergence tolerance. The RF factor is seeded
//! from the phases of the target's own left singular vectors.

use std::f64::consts::PI;

use nalgebra::{DMatrix, RowDVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{frobenius_norm, ls_solve, solve_box_ls, svd, BoxLsProblem, ComplexMatrix};

const TWO_PI: f64 = 2.0 * PI;

/// Halvings tried on a row's phase increment before the row is left as is.
const MAX_BACKTRACK: usize = 12;

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TWO_PI);
    if w >= TWO_PI {
        0.0
    } else {
        w
    }
}

/// Signed circular difference `a − b` in `(−π, π]`.
pub fn circular_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TWO_PI);
    if d > PI {
        d - TWO_PI
    } else {
        d
    }
}

/// Constant-modulus matrix stored as phases. Entries are only ever
/// materialized as `modulus·e^{jφ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMatrix {
    phases: DMatrix<f64>,
    modulus: f64,
}

impl PhaseMatrix {
    pub fn new(phases: DMatrix<f64>, modulus: f64) -> Result<Self> {
        if !(modulus > 0.0) || !modulus.is_finite() {
            return Err(Error::InvalidInput(format!(
                "modulus must be positive, got {modulus}"
            )));
        }
        if phases.is_empty() {
            return Err(Error::InvalidInput("empty phase matrix".into()));
        }
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            phases: phases.map(wrap_phase),
            modulus,
        })
    }

    pub fn rows(&self) -> usize {
        self.phases.nrows()
    }

    pub fn cols(&self) -> usize {
        self.phases.ncols()
    }

    pub fn modulus(&self) -> f64 {
        self.modulus
    }

    pub fn phases(&self) -> &DMatrix<f64> {
        &self.phases
    }

    pub fn phase(&self, row: usize, col: usize) -> f64 {
        self.phases[(row, col)]
    }

    pub fn to_matrix(&self) -> ComplexMatrix {
        self.phases.map(|p| Complex64::from_polar(self.modulus, p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// `δ̄_k = δ̄₁` for every iteration.
    Constant,
    /// Grow or shrink `δ̄` from the last two errors, see [`adapt_threshold`].
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecompositionSettings {
    pub convergence_tol: f64,
    pub initial_increment: f64,
    pub growth_factor: f64,
    pub shrink_factor: f64,
    /// `[lower, upper]` clamp applied in adaptive mode.
    pub increment_bounds: [f64; 2],
    pub proximity_multiplier: f64,
    pub max_iterations: usize,
    pub threshold_mode: ThresholdMode,
    pub normalize_output: bool,
}

impl Default for DecompositionSettings {
    fn default() -> Self {
        Self {
            convergence_tol: 1e-5,
            initial_increment: 0.1,
            growth_factor: 1.25,
            shrink_factor: 0.8,
            increment_bounds: [0.1, 0.5],
            proximity_multiplier: 100.0,
            max_iterations: 500,
            threshold_mode: ThresholdMode::Adaptive,
            normalize_output: true,
        }
    }
}

impl DecompositionSettings {
    pub fn with_mode(mut self, mode: ThresholdMode) -> Self {
        self.threshold_mode = mode;
        self
    }

    pub fn with_normalization(mut self, on: bool) -> Self {
        self.normalize_output = on;
        self
    }

    /// Returns the offending field name alongside the message.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.convergence_tol > 0.0) {
            return Err(("convergence_tol", "must be positive".into()));
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return Err(("shrink_factor", "must lie in (0, 1)".into()));
        }
        if !(self.growth_factor > 1.0) || !self.growth_factor.is_finite() {
            return Err(("growth_factor", "must be greater than 1".into()));
        }
        let [lo, hi] = self.increment_bounds;
        if !(lo > 0.0 && lo <= hi) || !hi.is_finite() {
            return Err(("increment_bounds", "need 0 < lower ≤ upper".into()));
        }
        if !(self.initial_increment >= lo && self.initial_increment <= hi) {
            return Err((
                "initial_increment",
                format!("must lie within increment_bounds [{lo}, {hi}]"),
            ));
        }
        if !(self.proximity_multiplier > 0.0) {
            return Err(("proximity_multiplier", "must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(("max_iterations", "must be at least 1".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(field, message)| Error::Config {
            field: format!("decomposition.{field}"),
            message,
        })
    }
}

/// Iteration history of one decomposition.
///
/// `error_history[k]` is `ε_k` for `k = 0..=iterations`, with `ε_0` measured
/// right after the initial baseband fit. `threshold_history[k − 1]` is the
/// phase-increment bound `δ̄_k` used in iteration `k`, so it is one entry
/// shorter than `error_history`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionTrace {
    pub iterations: usize,
    pub error_history: Vec<f64>,
    pub threshold_history: Vec<f64>,
    pub final_error: f64,
    /// False when the loop stopped on `max_iterations`.
    pub converged: bool,
}

/// `(F_R, F_B)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridProcessor {
    pub rf: PhaseMatrix,
    pub baseband: ComplexMatrix,
}

impl HybridProcessor {
    pub fn product(&self) -> ComplexMatrix {
        self.rf.to_matrix() * &self.baseband
    }

    pub fn streams(&self) -> usize {
        self.baseband.ncols()
    }

    /// Scales the baseband so that `‖F_R·F_B‖_F² = ns`.
    pub fn normalize_power(&mut self, ns: usize) {
        let norm = frobenius_norm(&self.product());
        if norm > 0.0 {
            self.baseband *= Complex64::new((ns as f64).sqrt() / norm, 0.0);
        }
    }
}

/// `‖target − F_R·F_B‖_F / ‖target‖_F`.
pub fn error_measure(target: &ComplexMatrix, hp: &HybridProcessor) -> Result<f64> {
    relative_error(target, &hp.rf.to_matrix(), &hp.baseband)
}

fn relative_error(target: &ComplexMatrix, fr: &ComplexMatrix, fb: &ComplexMatrix) -> Result<f64> {
    if fr.nrows() != target.nrows() || fb.ncols() != target.ncols() || fr.ncols() != fb.nrows() {
        return Err(Error::Dimension(format!(
            "target {}x{} vs factors {}x{} · {}x{}",
            target.nrows(),
            target.ncols(),
            fr.nrows(),
            fr.ncols(),
            fb.nrows(),
            fb.ncols()
        )));
    }
    let tn = frobenius_norm(target);
    if tn == 0.0 {
        return Err(Error::ZeroTarget);
    }
    Ok(frobenius_norm(&(target - fr * fb)) / tn)
}

/// Initial RF factor: the phases of `U_F·Σ_F` from the thin SVD of the target
/// in the first `N_s` columns, uniformly random phases in the remaining
/// `m − N_s`.
pub fn init_rf<R: Rng + ?Sized>(
    target: &ComplexMatrix,
    m: usize,
    modulus: f64,
    rng: &mut R,
) -> Result<PhaseMatrix> {
    let (n, ns) = target.shape();
    if m < ns {
        return Err(Error::InvalidInput(format!(
            "RF factor needs at least {ns} columns, got {m}"
        )));
    }
    if ns > n {
        return Err(Error::RankDeficient(format!(
            "{n}x{ns} target cannot have full column rank"
        )));
    }
    let s = svd(target)?;
    let sv = &s.singular_values;
    if sv[ns - 1] <= 1e-10 * sv[0] {
        return Err(Error::RankDeficient(format!(
            "target column rank below {ns}"
        )));
    }
    // Σ_F is a positive diagonal scaling, so U_F·Σ_F has the phases of U_F.
    let mut phases = DMatrix::<f64>::zeros(n, m);
    for j in 0..ns {
        for i in 0..n {
            phases[(i, j)] = s.u[(i, j)].arg();
        }
    }
    for j in ns..m {
        for i in 0..n {
            phases[(i, j)] = rng.random::<f64>() * TWO_PI;
        }
    }
    PhaseMatrix::new(phases, modulus)
}

/// Least-squares baseband `(F_RᴴF_R)⁻¹F_Rᴴ·target`.
pub fn baseband_update(rf: &PhaseMatrix, target: &ComplexMatrix) -> Result<ComplexMatrix> {
    ls_solve(&rf.to_matrix(), target)
}

/// One linearized phase update of the RF factor with `|δ| ≤ bound`.
///
/// Row `p` solves `min ‖q_p − Δ_p·G_p‖²` where `q_p` is row `p` of
/// `target − F_R·F_B` and `G_p = j·modulus·diag(e^{jφ_p})·F_B`. The new
/// phases are `φ + δ` and the returned matrix is rebuilt exactly from them.
/// A row whose true residual would grow has its increment halved until it
/// does not; if none of the halvings help, the row is left unchanged.
pub fn rf_update(
    rf: &PhaseMatrix,
    fb: &ComplexMatrix,
    target: &ComplexMatrix,
    bound: f64,
) -> Result<PhaseMatrix> {
    rf_update_with_increments(rf, fb, target, bound).map(|(rf, _)| rf)
}

/// [`rf_update`] that also returns the applied increments `δ`.
pub fn rf_update_with_increments(
    rf: &PhaseMatrix,
    fb: &ComplexMatrix,
    target: &ComplexMatrix,
    bound: f64,
) -> Result<(PhaseMatrix, DMatrix<f64>)> {
    let (n, m) = (rf.rows(), rf.cols());
    if fb.nrows() != m || target.nrows() != n || fb.ncols() != target.ncols() {
        return Err(Error::Dimension(format!(
            "rf {n}x{m}, baseband {}x{}, target {}x{}",
            fb.nrows(),
            fb.ncols(),
            target.nrows(),
            target.ncols()
        )));
    }
    let k = fb.ncols();
    let modulus = rf.modulus();
    let residual = target - rf.to_matrix() * fb;

    let mut phases = rf.phases().clone();
    let mut increments = DMatrix::<f64>::zeros(n, m);
    let mut g = ComplexMatrix::zeros(m, k);

    for p in 0..n {
        let q = RowDVector::from_fn(k, |_, c| residual[(p, c)]);
        let before: f64 = q.iter().map(|z| z.norm_sqr()).sum();
        if before == 0.0 {
            continue;
        }
        for i in 0..m {
            let e = Complex64::from_polar(modulus, rf.phase(p, i)) * Complex64::i();
            for c in 0..k {
                g[(i, c)] = e * fb[(i, c)];
            }
        }
        let problem = BoxLsProblem::new(q, g.clone(), bound)?;
        let delta = solve_box_ls(&problem);

        let mut scale = 1.0;
        for _ in 0..=MAX_BACKTRACK {
            let after = row_residual(rf, p, &delta, scale, fb, target);
            if after <= before {
                for i in 0..m {
                    let d = scale * delta[i];
                    increments[(p, i)] = d;
                    phases[(p, i)] = wrap_phase(rf.phase(p, i) + d);
                }
                break;
            }
            scale *= 0.5;
        }
    }
    Ok((PhaseMatrix::new(phases, modulus)?, increments))
}

/// `‖target_p − modulus·e^{j(φ_p + s·δ)}·F_B‖²` for one row.
fn row_residual(
    rf: &PhaseMatrix,
    p: usize,
    delta: &[f64],
    scale: f64,
    fb: &ComplexMatrix,
    target: &ComplexMatrix,
) -> f64 {
    let m = rf.cols();
    let entries: Vec<Complex64> = (0..m)
        .map(|i| Complex64::from_polar(rf.modulus(), rf.phase(p, i) + scale * delta[i]))
        .collect();
    (0..fb.ncols())
        .map(|c| {
            let mut z = target[(p, c)];
            for (i, e) in entries.iter().enumerate() {
                z -= e * fb[(i, c)];
            }
            z.norm_sqr()
        })
        .sum()
}

/// Next phase-increment bound from the previous two errors.
///
/// Grows by `growth_factor` when the error dropped by more than
/// `proximity_multiplier·convergence_tol`; shrinks by `shrink_factor`
/// otherwise (small change or error increase). The result is clamped to
/// `increment_bounds`.
pub fn adapt_threshold(
    eps_prev: f64,
    eps_prev2: f64,
    delta_prev: f64,
    s: &DecompositionSettings,
) -> f64 {
    let far = (eps_prev - eps_prev2).abs() > s.proximity_multiplier * s.convergence_tol;
    let next = if far && eps_prev < eps_prev2 {
        delta_prev * s.growth_factor
    } else {
        delta_prev * s.shrink_factor
    };
    next.clamp(s.increment_bounds[0], s.increment_bounds[1])
}

/// Snapshot handed to a [`decompose_observed`] callback after the initial
/// fit (`iteration == 0`) and after every iteration.
pub struct IterationState<'a> {
    pub iteration: usize,
    pub rf: &'a PhaseMatrix,
    pub baseband: &'a ComplexMatrix,
    pub error: f64,
    pub threshold: Option<f64>,
    pub increments: Option<&'a DMatrix<f64>>,
}

/// Full decomposition from an SVD-seeded initial RF factor.
pub fn decompose<R: Rng + ?Sized>(
    target: &ComplexMatrix,
    m: usize,
    modulus: f64,
    s: &DecompositionSettings,
    rng: &mut R,
) -> Result<(HybridProcessor, DecompositionTrace)> {
    check_rf_width(target, m)?;
    let rf0 = init_rf(target, m, modulus, rng)?;
    decompose_observed(target, rf0, s, |_| {})
}

/// Decomposition from a caller-supplied initial RF factor.
pub fn decompose_from(
    target: &ComplexMatrix,
    rf0: PhaseMatrix,
    s: &DecompositionSettings,
) -> Result<(HybridProcessor, DecompositionTrace)> {
    decompose_observed(target, rf0, s, |_| {})
}

fn check_rf_width(target: &ComplexMatrix, m: usize) -> Result<()> {
    if m < target.ncols() {
        return Err(Error::InvalidInput(format!(
            "{m} RF chains cannot carry {} streams",
            target.ncols()
        )));
    }
    if m > target.nrows() {
        return Err(Error::InvalidInput(format!(
            "{m} RF chains exceed {} antennas",
            target.nrows()
        )));
    }
    Ok(())
}

pub fn decompose_observed<F>(
    target: &ComplexMatrix,
    rf0: PhaseMatrix,
    s: &DecompositionSettings,
    mut observer: F,
) -> Result<(HybridProcessor, DecompositionTrace)>
where
    F: FnMut(&IterationState<'_>),
{
    s.validate()?;
    check_rf_width(target, rf0.cols())?;
    if rf0.rows() != target.nrows() {
        return Err(Error::Dimension(format!(
            "initial RF has {} rows, target has {}",
            rf0.rows(),
            target.nrows()
        )));
    }
    if frobenius_norm(target) == 0.0 {
        return Err(Error::ZeroTarget);
    }

    let mut rf = rf0;
    let mut fb = baseband_update(&rf, target)?;
    let mut errors = vec![relative_error(target, &rf.to_matrix(), &fb)?];
    let mut thresholds = Vec::new();
    observer(&IterationState {
        iteration: 0,
        rf: &rf,
        baseband: &fb,
        error: errors[0],
        threshold: None,
        increments: None,
    });

    let mut delta_bar = s.initial_increment;
    let mut converged = false;
    for k in 1..=s.max_iterations {
        if k >= 2 && s.threshold_mode == ThresholdMode::Adaptive {
            delta_bar = adapt_threshold(errors[k - 1], errors[k - 2], delta_bar, s);
        }
        let (next_rf, increments) = rf_update_with_increments(&rf, &fb, target, delta_bar)?;
        rf = next_rf;
        fb = baseband_update(&rf, target)?;
        let eps = relative_error(target, &rf.to_matrix(), &fb)?;
        thresholds.push(delta_bar);
        errors.push(eps);
        observer(&IterationState {
            iteration: k,
            rf: &rf,
            baseband: &fb,
            error: eps,
            threshold: Some(delta_bar),
            increments: Some(&increments),
        });
        if (eps - errors[k - 1]).abs() <= s.convergence_tol {
            converged = true;
            break;
        }
    }

    let mut hp = HybridProcessor { rf, baseband: fb };
    if s.normalize_output {
        hp.normalize_power(target.ncols());
    }
    let final_error = *errors.last().expect("ε_0 is always recorded");
    Ok((
        hp,
        DecompositionTrace {
            iterations: errors.len() - 1,
            error_history: errors,
            threshold_history: thresholds,
            final_error,
            converged,
        },
    ))
}

/// Decomposes only the non-zero columns `F′` and appends `zero_cols` zero
/// baseband columns, so `F_R·[F_B′, 0] = [F_R·F_B′, 0]`. Normalization, when
/// enabled, targets the full stream count.
pub fn decompose_waterfilled<R: Rng + ?Sized>(
    target_nonzero: &ComplexMatrix,
    zero_cols: usize,
    m: usize,
    modulus: f64,
    s: &DecompositionSettings,
    rng: &mut R,
) -> Result<(HybridProcessor, DecompositionTrace)> {
    let inner = s.clone().with_normalization(false);
    let (mut hp, trace) = decompose(target_nonzero, m, modulus, &inner, rng)?;
    if zero_cols > 0 {
        let k = hp.baseband.ncols();
        hp.baseband = hp.baseband.clone().resize_horizontally(k + zero_cols, Complex64::new(0.0, 0.0));
    }
    if s.normalize_output {
        hp.normalize_power(hp.baseband.ncols());
    }
    Ok((hp, trace))
}

/// Rounds every phase to the nearest point of the `2^bits`-point grid
/// `{2πn/2^bits}`, measuring distance around the circle.
pub fn quantize_phases(rf: &PhaseMatrix, bits: u32) -> Result<PhaseMatrix> {
    if bits == 0 || bits > 30 {
        return Err(Error::InvalidInput(format!(
            "quantization needs 1..=30 bits, got {bits}"
        )));
    }
    let levels = 1u64 << bits;
    let step = TWO_PI / levels as f64;
    let q = rf.phases().map(|p| {
        let n = ((p / step).round() as u64) % levels;
        n as f64 * step
    });
    PhaseMatrix::new(q, rf.modulus())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::gen_rayleigh;
    use crate::reference::optimal_unconstrained;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_phases(rng: &mut ChaCha8Rng, n: usize, m: usize, modulus: f64) -> PhaseMatrix {
        PhaseMatrix::new(DMatrix::from_fn(n, m, |_, _| rng.random::<f64>() * TWO_PI), modulus).unwrap()
    }

    fn rayleigh_target(seed: u64, nr: usize, nt: usize, ns: usize) -> ComplexMatrix {
        let h = gen_rayleigh(nr, nt, &mut ChaCha8Rng::seed_from_u64(seed));
        optimal_unconstrained(&h, ns).unwrap().precoder
    }

    #[test]
    fn phase_wrapping() {
        assert_eq!(wrap_phase(-1e-18), 0.0);
        assert_abs_diff_eq!(wrap_phase(-PI / 2.0), 1.5 * PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_phase(5.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(circular_diff(0.1, TWO_PI - 0.1), 0.2, epsilon = 1e-12);
        let pm = PhaseMatrix::new(DMatrix::from_element(2, 2, -0.5), 0.5).unwrap();
        assert!(pm.phases().iter().all(|&p| (0.0..TWO_PI).contains(&p)));
        assert!(PhaseMatrix::new(DMatrix::from_element(1, 1, 0.0), 0.0).is_err());
    }

    #[test]
    fn error_measure_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rf = random_phases(&mut rng, 6, 3, 1.0 / 6f64.sqrt());
        let fb = gen_rayleigh(3, 2, &mut rng);
        let target = rf.to_matrix() * &fb;
        let exact = HybridProcessor { rf: rf.clone(), baseband: fb };
        assert!(error_measure(&target, &exact).unwrap() < 1e-15);
        let zero = HybridProcessor {
            rf,
            baseband: ComplexMatrix::zeros(3, 2),
        };
        assert_abs_diff_eq!(error_measure(&target, &zero).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(
            error_measure(&ComplexMatrix::zeros(6, 2), &zero),
            Err(Error::ZeroTarget)
        ));
    }

    #[test]
    fn init_rf_positive_target_has_zero_phases() {
        // Rank-one positive target: its leading singular vector is positive.
        let target = ComplexMatrix::from_fn(5, 1, |i, _| Complex64::new(1.0 + i as f64, 0.0));
        let rf = init_rf(&target, 1, 0.3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(rf.cols(), 1);
        assert!(rf.phases().iter().all(|&p| p.abs() < 1e-12 || (TWO_PI - p) < 1e-12));
    }

    #[test]
    fn init_rf_shape_and_modulus() {
        let target = rayleigh_target(2, 8, 16, 3);
        let modulus = 0.25;
        for m in [3, 5] {
            let rf = init_rf(&target, m, modulus, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            assert_eq!((rf.rows(), rf.cols()), (16, m));
            for z in rf.to_matrix().iter() {
                assert_abs_diff_eq!(z.norm(), modulus, epsilon = 1e-15);
            }
        }
        assert!(init_rf(&target, 2, modulus, &mut ChaCha8Rng::seed_from_u64(4)).is_err());
        let rank1 = ComplexMatrix::from_element(4, 2, Complex64::new(1.0, 0.0));
        assert!(matches!(
            init_rf(&rank1, 2, modulus, &mut ChaCha8Rng::seed_from_u64(4)),
            Err(Error::RankDeficient(_))
        ));
    }

    fn dft_rf(n: usize) -> PhaseMatrix {
        PhaseMatrix::new(
            DMatrix::from_fn(n, n, |i, j| TWO_PI * (i * j) as f64 / n as f64),
            1.0 / (n as f64).sqrt(),
        )
        .unwrap()
    }

    #[test]
    fn baseband_update_cases() {
        // Unitary DFT: orthonormal columns, so F_B = F_Rᴴ·T.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rf = dft_rf(8);
        let target = gen_rayleigh(8, 3, &mut rng);
        let fb = baseband_update(&rf, &target).unwrap();
        assert!(frobenius_norm(&(&fb - rf.to_matrix().adjoint() * &target)) < 1e-12);
        // Square invertible RF reproduces the target.
        assert!(frobenius_norm(&(rf.to_matrix() * &fb - &target)) < 1e-8);

        // Target inside the range of a tall RF.
        let rf = random_phases(&mut rng, 10, 4, 0.3);
        let target = rf.to_matrix() * gen_rayleigh(4, 2, &mut rng);
        let fb = baseband_update(&rf, &target).unwrap();
        let hp = HybridProcessor { rf, baseband: fb };
        assert!(error_measure(&target, &hp).unwrap() < 1e-12);
    }

    #[test]
    fn baseband_residual_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let rf = random_phases(&mut rng, 24, 6, 1.0 / 24f64.sqrt());
            let target = gen_rayleigh(24, 4, &mut rng);
            let fb = baseband_update(&rf, &target).unwrap();
            let fr = rf.to_matrix();
            let ortho = fr.adjoint() * (&target - &fr * &fb);
            assert!(frobenius_norm(&ortho) < 1e-8);
        }
    }

    #[test]
    fn rf_update_exact_factorization_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rf = random_phases(&mut rng, 6, 3, 0.4);
        let fb = gen_rayleigh(3, 2, &mut rng);
        let target = rf.to_matrix() * &fb;
        let (next, inc) = rf_update_with_increments(&rf, &fb, &target, 0.1).unwrap();
        assert!(inc.iter().all(|&d| d.abs() < 1e-12));
        for (a, b) in next.phases().iter().zip(rf.phases().iter()) {
            assert!(circular_diff(*a, *b).abs() < 1e-12);
        }
    }

    /// Direct scan of the true (non-linearized) one-dimensional objective.
    fn scan_best_phase(target: Complex64, lo: f64, hi: f64) -> f64 {
        let steps = 200_000;
        (0..=steps)
            .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
            .min_by(|a, b| {
                let fa = (target - Complex64::from_polar(1.0, *a)).norm_sqr();
                let fb = (target - Complex64::from_polar(1.0, *b)).norm_sqr();
                fa.total_cmp(&fb)
            })
            .unwrap()
    }

    #[test]
    fn rf_update_single_entry() {
        let target = ComplexMatrix::from_element(1, 1, Complex64::from_polar(1.0, 0.05));
        let rf = PhaseMatrix::new(DMatrix::from_element(1, 1, 0.0), 1.0).unwrap();
        let fb = ComplexMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        let next = rf_update(&rf, &fb, &target, 0.1).unwrap();
        let oracle = scan_best_phase(target[(0, 0)], -0.1, 0.1);
        assert_abs_diff_eq!(oracle, 0.05, epsilon = 1e-5);
        assert!((next.phase(0, 0) - oracle).abs() < 2e-3);
    }

    #[test]
    fn rf_update_never_increases_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let n = rng.random_range(4..20);
            let ns = rng.random_range(1..4);
            let m = rng.random_range(ns..=n.min(ns + 4));
            let modulus = 1.0 / (n as f64).sqrt();
            let rf = random_phases(&mut rng, n, m, modulus);
            let target = gen_rayleigh(n, ns, &mut rng);
            let fb = baseband_update(&rf, &target).unwrap();
            let before = frobenius_norm(&(&target - rf.to_matrix() * &fb));
            let (next, inc) = rf_update_with_increments(&rf, &fb, &target, 0.1).unwrap();
            let after = frobenius_norm(&(&target - next.to_matrix() * &fb));
            assert!(after <= before + 1e-6, "{after} > {before}");
            assert!(inc.iter().all(|d| d.abs() <= 0.1 + 1e-12));
            for z in next.to_matrix().iter() {
                assert_abs_diff_eq!(z.norm(), modulus, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn adapt_threshold_branches() {
        let s = DecompositionSettings::default();
        assert_abs_diff_eq!(adapt_threshold(0.5, 0.6, 0.2, &s), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(adapt_threshold(0.50005, 0.5, 0.2, &s), 0.16, epsilon = 1e-15);
        assert_abs_diff_eq!(adapt_threshold(0.5, 0.6, 0.45, &s), 0.5, epsilon = 1e-15);
        // Small decrease (below 100·ε̄) shrinks, and the floor holds.
        assert_abs_diff_eq!(adapt_threshold(0.5, 0.5005, 0.2, &s), 0.16, epsilon = 1e-15);
        assert_abs_diff_eq!(adapt_threshold(0.5, 0.5, 0.11, &s), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn settings_validation() {
        assert!(DecompositionSettings::default().validate().is_ok());
        let bad = DecompositionSettings {
            shrink_factor: 1.2,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "decomposition.shrink_factor"));
        let bad = DecompositionSettings {
            initial_increment: 0.7,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn square_rf_decomposes_exactly() {
        let target = rayleigh_target(12, 8, 16, 4);
        let s = DecompositionSettings::default().with_normalization(false);
        let (hp, trace) = decompose_from(&target, dft_rf(16), &s).unwrap();
        assert!(trace.error_history[0] < 1e-8);
        assert!(trace.final_error <= 1e-8);
        assert!(frobenius_norm(&(hp.product() - &target)) < 1e-8);

        let (_, trace) = decompose(&target, 16, 0.25, &s, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(trace.final_error <= 1e-8);
    }

    #[test]
    fn decompose_invariants() {
        let target = rayleigh_target(21, 16, 64, 4);
        let modulus = 1.0 / 8.0;
        let s = DecompositionSettings::default();
        let (hp, trace) = decompose(&target, 6, modulus, &s, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.threshold_history.len() + 1, trace.error_history.len());
        assert_eq!(trace.final_error, *trace.error_history.last().unwrap());
        assert!(trace.final_error <= trace.error_history[0]);
        assert!(trace.error_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(trace.threshold_history.iter().all(|&d| (0.1..=0.5).contains(&d)));
        assert_abs_diff_eq!(frobenius_norm(&hp.product()).powi(2), 4.0, epsilon = 1e-10);
        for z in hp.rf.to_matrix().iter() {
            assert_abs_diff_eq!(z.norm(), modulus, epsilon = 1e-15);
        }

        // Same seed, same answer.
        let (hp2, trace2) = decompose(&target, 6, modulus, &s, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(hp, hp2);
        assert_eq!(trace, trace2);
    }

    #[test]
    fn observer_sees_every_iteration() {
        let target = rayleigh_target(4, 8, 32, 2);
        let rf0 = init_rf(&target, 3, 1.0 / 32f64.sqrt(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let s = DecompositionSettings::default().with_mode(ThresholdMode::Constant);
        let mut seen = Vec::new();
        let (_, trace) = decompose_observed(&target, rf0, &s, |st| {
            if let Some(inc) = st.increments {
                assert!(inc.iter().all(|d| d.abs() <= 0.1 + 1e-12));
            }
            seen.push((st.iteration, st.error));
        })
        .unwrap();
        assert_eq!(seen.len(), trace.error_history.len());
        for (i, (k, e)) in seen.iter().enumerate() {
            assert_eq!(*k, i);
            assert_eq!(*e, trace.error_history[i]);
        }
        assert!(trace.threshold_history.iter().all(|&d| d == 0.1));
    }

    #[test]
    fn max_iterations_is_flagged() {
        let target = rayleigh_target(5, 8, 32, 2);
        let s = DecompositionSettings {
            max_iterations: 2,
            convergence_tol: 1e-14,
            ..Default::default()
        };
        let (_, trace) = decompose(&target, 3, 1.0 / 32f64.sqrt(), &s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(trace.iterations, 2);
        assert!(!trace.converged);
    }

    #[test]
    fn waterfilled_decomposition_shapes() {
        let target = rayleigh_target(6, 8, 32, 4);
        let modulus = 1.0 / 32f64.sqrt();
        let s = DecompositionSettings::default();
        let (a, _) = decompose(&target, 5, modulus, &s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (b, _) = decompose_waterfilled(&target, 0, 5, modulus, &s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);

        let first = target.columns(0, 1).into_owned();
        let (hp, _) = decompose_waterfilled(&first, 3, 5, modulus, &s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(hp.baseband.ncols(), 4);
        let nonzero = (0..4).filter(|&j| hp.baseband.column(j).iter().any(|z| z.norm() > 0.0)).count();
        assert_eq!(nonzero, 1);
        let product = hp.product();
        assert!(product.columns(1, 3).iter().all(|z| *z == Complex64::new(0.0, 0.0)));
        assert_abs_diff_eq!(frobenius_norm(&product).powi(2), 4.0, epsilon = 1e-10);
    }

    #[test]
    fn quantization_examples() {
        let rf = PhaseMatrix::new(DMatrix::from_row_slice(1, 3, &[1.0, PI, 6.2]), 1.0).unwrap();
        let q = quantize_phases(&rf, 2).unwrap();
        assert_abs_diff_eq!(q.phase(0, 0), PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.phase(0, 1), PI, epsilon = 1e-15);
        assert_eq!(q.phase(0, 2), 0.0);
        assert!(quantize_phases(&rf, 0).is_err());
    }

    proptest! {
        #[test]
        fn quantization_error_bound(phases in proptest::collection::vec(-20.0f64..20.0, 1..40), bits in 1u32..8) {
            let n = phases.len();
            let rf = PhaseMatrix::new(DMatrix::from_vec(n, 1, phases), 0.1).unwrap();
            let q = quantize_phases(&rf, bits).unwrap();
            let limit = PI / (1u64 << bits) as f64 + 1e-12;
            for (a, b) in rf.phases().iter().zip(q.phases().iter()) {
                prop_assert!(circular_diff(*a, *b).abs() <= limit);
            }
            for z in q.to_matrix().iter() {
                prop_assert!((z.norm() - 0.1).abs() < 1e-15);
            }
        }

        #[test]
        fn taylor_remainder_bound(delta in -0.1f64..0.1) {
            let exact = Complex64::from_polar(1.0, delta);
            let linear = Complex64::new(1.0, delta);
            let gap = (exact - linear).norm();
            prop_assert!(gap <= delta * delta / 2.0 + 1e-16);
            prop_assert!(gap <= 0.005 + 1e-16);
        }
    }
}
