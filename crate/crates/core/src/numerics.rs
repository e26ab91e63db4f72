//! Dense complex linear algebra and the box-constrained least-squares solver.
//!
//! Matrices are `nalgebra` dense matrices of `Complex64`. The SVD and QR
//! factorizations come from `nalgebra`; this module adds the input
//! checks, the deterministic phase convention for singular vectors and the
//! rank guards the rest of the crate relies on.

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix. Every channel, precoder, combiner and factor in the
/// crate is one of these.
pub type ComplexMatrix = DMatrix<Complex64>;

/// Condition-number limit for `AᴴA` in [`ls_solve`].
pub const LS_CONDITION_LIMIT: f64 = 1e12;

/// Relative Hermitian tolerance accepted by [`logdet2_hpd`].
pub const HERMITIAN_TOL: f64 = 1e-8;

/// KKT tolerance on the projected gradient of the box least-squares objective.
pub const BOX_LS_KKT_TOL: f64 = 1e-9;

/// Iteration cap for the box least-squares solver.
pub const BOX_LS_MAX_ITER: usize = 10_000;

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITER: usize = 10_000;

pub fn is_finite(a: &ComplexMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

fn check_finite(a: &ComplexMatrix) -> Result<()> {
    if is_finite(a) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Thin singular value decomposition `a = U·diag(σ)·Vᴴ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `m × r` with orthonormal columns.
    pub u: ComplexMatrix,
    /// Length `r`, non-negative, descending.
    pub singular_values: Vec<f64>,
    /// `n × r` with orthonormal columns.
    pub v: ComplexMatrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `U·diag(σ)·Vᴴ`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let mut us = self.u.clone();
        for (j, &s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * self.v.adjoint()
    }
}

/// Thin SVD with `r = min(rows, cols)`.
///
/// Singular values are sorted descending. Each singular pair is rotated so
/// that the first non-negligible entry of the right singular vector is real
/// and positive; the left vector gets the same rotation, so the product is
/// unchanged and results are reproducible.
pub fn svd(a: &ComplexMatrix) -> Result<SvdResult> {
    if a.is_empty() {
        return Err(Error::InvalidInput("svd of an empty matrix".into()));
    }
    check_finite(a)?;

    let raw = a
        .clone()
        .try_svd(true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or(Error::SvdNoConvergence)?;
    let u_raw = raw.u.ok_or(Error::SvdNoConvergence)?;
    let v_raw = raw.v_t.ok_or(Error::SvdNoConvergence)?.adjoint();
    let sv_raw = raw.singular_values;

    let r = sv_raw.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| sv_raw[j].total_cmp(&sv_raw[i]));

    let mut u = ComplexMatrix::zeros(a.nrows(), r);
    let mut v = ComplexMatrix::zeros(a.ncols(), r);
    let mut singular_values = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        singular_values.push(sv_raw[src].max(0.0));
        let vc = v_raw.column(src);
        let phase = leading_phase(vc.iter().copied());
        let rot = Complex64::from_polar(1.0, -phase);
        v.set_column(dst, &(vc * rot));
        u.set_column(dst, &(u_raw.column(src) * rot));
    }

    Ok(SvdResult {
        u,
        singular_values,
        v,
    })
}

/// Phase of the first entry whose modulus is not negligible relative to the
/// largest one.
fn leading_phase(col: impl Iterator<Item = Complex64> + Clone) -> f64 {
    let peak = col.clone().map(|z| z.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    col.into_iter()
        .find(|z| z.norm() > 1e-8 * peak)
        .map(|z| z.arg())
        .unwrap_or(0.0)
}

pub fn frobenius_norm(a: &ComplexMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Least-squares solution of `a·X ≈ b`, i.e. `(AᴴA)⁻¹Aᴴb`, computed through a
/// QR factorization of `a`.
///
/// Fails with [`Error::RankDeficient`] when the estimated condition number of
/// `AᴴA` exceeds [`LS_CONDITION_LIMIT`].
pub fn ls_solve(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "ls_solve: a is {}x{}, b is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if a.nrows() < a.ncols() {
        return Err(Error::RankDeficient(format!(
            "{}x{} system has more unknowns than equations",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("ls_solve with empty matrix".into()));
    }

    let qr = a.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = r.diagonal().iter().map(|z| z.norm()).collect();
    let dmax = diag.iter().copied().fold(0.0, f64::max);
    let dmin = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if dmin == 0.0 || (dmax / dmin).powi(2) > LS_CONDITION_LIMIT {
        return Err(Error::RankDeficient(format!(
            "condition estimate of AᴴA {:.3e} exceeds {:.0e}",
            if dmin == 0.0 {
                f64::INFINITY
            } else {
                (dmax / dmin).powi(2)
            },
            LS_CONDITION_LIMIT
        )));
    }
    let rhs = qr.q().adjoint() * b;
    r.solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::RankDeficient("singular triangular factor".into()))
}

/// `log₂ det(a)` for a Hermitian positive-definite matrix.
///
/// The input is symmetrized before the Cholesky factorization; inputs farther
/// than [`HERMITIAN_TOL`] (relative, Frobenius) from Hermitian are rejected.
pub fn logdet2_hpd(a: &ComplexMatrix) -> Result<f64> {
    if !a.is_square() || a.is_empty() {
        return Err(Error::Dimension(format!(
            "logdet2_hpd needs a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    check_finite(a)?;
    let skew = frobenius_norm(&(a - a.adjoint()));
    if skew > HERMITIAN_TOL * frobenius_norm(a) {
        return Err(Error::NotPositiveDefinite);
    }
    // Cholesky with explicit pivot checks; a complex square root would
    // silently accept negative pivots.
    let n = a.nrows();
    let mut l = ComplexMatrix::zeros(n, n);
    let mut acc = 0.0;
    for j in 0..n {
        let mut pivot = a[(j, j)].re;
        for k in 0..j {
            pivot -= l[(j, k)].norm_sqr();
        }
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let d = pivot.sqrt();
        l[(j, j)] = Complex64::new(d, 0.0);
        for i in j + 1..n {
            let herm = 0.5 * (a[(i, j)] + a[(j, i)].conj());
            let mut v = herm;
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = v / d;
        }
        acc += d.log2();
    }
    Ok(2.0 * acc)
}

/// `min ‖target − Δ·map‖₂²` over real `Δ` with `|Δₙ| ≤ bound`.
///
/// `target` is a complex row of length `k`, `map` is `m × k` and the unknown
/// `Δ` has one entry per row of `map`.
#[derive(Debug, Clone)]
pub struct BoxLsProblem {
    target: RowDVector<Complex64>,
    map: ComplexMatrix,
    bound: f64,
}

impl BoxLsProblem {
    pub fn new(target: RowDVector<Complex64>, map: ComplexMatrix, bound: f64) -> Result<Self> {
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(Error::InvalidInput(format!(
                "box bound must be positive, got {bound}"
            )));
        }
        if target.len() != map.ncols() {
            return Err(Error::Dimension(format!(
                "target has length {}, map has {} columns",
                target.len(),
                map.ncols()
            )));
        }
        Ok(Self { target, map, bound })
    }

    pub fn unknowns(&self) -> usize {
        self.map.nrows()
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn target(&self) -> &RowDVector<Complex64> {
        &self.target
    }

    pub fn map(&self) -> &ComplexMatrix {
        &self.map
    }

    /// `‖target − Δ·map‖₂²`, evaluated directly in complex arithmetic.
    pub fn objective(&self, delta: &[f64]) -> f64 {
        assert_eq!(delta.len(), self.unknowns());
        let mut acc = 0.0;
        for c in 0..self.map.ncols() {
            let mut z = self.target[c];
            for (r, &d) in delta.iter().enumerate() {
                z -= self.map[(r, c)] * d;
            }
            acc += z.norm_sqr();
        }
        acc
    }

    /// Real quadratic form of the objective: `ΔᵀAΔ − 2bᵀΔ + c` with
    /// `A = Re(G·Gᴴ)`, `b = Re(G·qᴴ)` and `c = ‖q‖²`.
    pub fn quadratic_form(&self) -> (DMatrix<f64>, DVector<f64>, f64) {
        let m = self.unknowns();
        let g = &self.map;
        let mut hess = DMatrix::<f64>::zeros(m, m);
        let mut lin = DVector::<f64>::zeros(m);
        for i in 0..m {
            for j in i..m {
                let mut s = 0.0;
                for c in 0..g.ncols() {
                    let (a, b) = (g[(i, c)], g[(j, c)]);
                    s += a.re * b.re + a.im * b.im;
                }
                hess[(i, j)] = s;
                hess[(j, i)] = s;
            }
            let mut s = 0.0;
            for c in 0..g.ncols() {
                let (a, q) = (g[(i, c)], self.target[c]);
                s += a.re * q.re + a.im * q.im;
            }
            lin[i] = s;
        }
        let c = self.target.iter().map(|z| z.norm_sqr()).sum();
        (hess, lin, c)
    }
}

/// Solves a [`BoxLsProblem`].
///
/// Projected gradient with an exact step along the projected path, followed
/// on every pass by a conjugate-gradient minimization over the currently free
/// coordinates. Iterates until the projected gradient falls below
/// [`BOX_LS_KKT_TOL`] or [`BOX_LS_MAX_ITER`] passes. The iterate starts at
/// `Δ = 0` and the objective never increases, so the result is never worse
/// than leaving the target untouched.
pub fn solve_box_ls(p: &BoxLsProblem) -> Vec<f64> {
    let (hess, lin, _) = p.quadratic_form();
    solve_box_qp(&hess, &lin, p.bound, BOX_LS_KKT_TOL, BOX_LS_MAX_ITER)
}

/// `min ½xᵀAx − bᵀx` over `|xᵢ| ≤ bound` for positive semidefinite `A`.
///
/// `tol` applies to the projected gradient of `xᵀAx − 2bᵀx` (twice the
/// gradient used internally), matching the least-squares objective scale.
pub(crate) fn solve_box_qp(
    hess: &DMatrix<f64>,
    lin: &DVector<f64>,
    bound: f64,
    tol: f64,
    max_iter: usize,
) -> Vec<f64> {
    let n = lin.len();
    let mut x = DVector::<f64>::zeros(n);
    if n == 0 {
        return Vec::new();
    }
    let half_tol = 0.5 * tol;
    let clamp = |v: f64| v.clamp(-bound, bound);
    let quad = |x: &DVector<f64>| 0.5 * x.dot(&(hess * x)) - lin.dot(x);

    for _ in 0..max_iter {
        let g = hess * &x - lin;
        if projected_gradient_inf(&x, &g, bound) <= half_tol {
            break;
        }

        // Gradient projection with exact minimization along the segment.
        let gag = g.dot(&(hess * &g));
        let gg = g.dot(&g);
        let alpha = if gag > 0.0 {
            gg / gag
        } else {
            2.0 * bound / g.amax()
        };
        let trial = (&x - &g * alpha).map(clamp);
        let d = &trial - &x;
        let gd = g.dot(&d);
        if gd < 0.0 {
            let dad = d.dot(&(hess * &d));
            let t = if dad > 0.0 { (-gd / dad).min(1.0) } else { 1.0 };
            x += &d * t;
            x.apply(|v| *v = clamp(*v));
        }

        // Subspace refinement on the free coordinates.
        let free: Vec<usize> = (0..n).filter(|&i| x[i].abs() < bound).collect();
        if free.is_empty() {
            continue;
        }
        let g = hess * &x - lin;
        let step = free_subspace_cg(hess, &g, &free);
        let mut full = x.clone();
        let mut t_max = f64::INFINITY;
        for (k, &i) in free.iter().enumerate() {
            let s = step[k];
            full[i] += s;
            if s > 0.0 {
                t_max = t_max.min((bound - x[i]) / s);
            } else if s < 0.0 {
                t_max = t_max.min((-bound - x[i]) / s);
            }
        }
        let projected = full.map(clamp);
        let mut truncated = x.clone();
        let t = t_max.min(1.0);
        for (k, &i) in free.iter().enumerate() {
            truncated[i] = clamp(x[i] + t * step[k]);
        }
        let f_now = quad(&x);
        let f_proj = quad(&projected);
        let f_trunc = quad(&truncated);
        if f_proj <= f_trunc && f_proj <= f_now {
            x = projected;
        } else if f_trunc <= f_now {
            x = truncated;
        }
    }
    x.iter().copied().collect()
}

fn projected_gradient_inf(x: &DVector<f64>, g: &DVector<f64>, bound: f64) -> f64 {
    x.iter()
        .zip(g.iter())
        .map(|(&xi, &gi)| {
            if xi >= bound {
                gi.max(0.0)
            } else if xi <= -bound {
                (-gi).max(0.0)
            } else {
                gi.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Conjugate gradient for `A_FF·s = −g_F` starting from `s = 0`.
fn free_subspace_cg(hess: &DMatrix<f64>, g: &DVector<f64>, free: &[usize]) -> Vec<f64> {
    let k = free.len();
    let a = DMatrix::<f64>::from_fn(k, k, |r, c| hess[(free[r], free[c])]);
    let mut s = DVector::<f64>::zeros(k);
    let mut r = DVector::<f64>::from_fn(k, |i, _| -g[free[i]]);
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let stop = rr * 1e-28;
    for _ in 0..2 * k + 2 {
        if rr <= stop || rr == 0.0 {
            break;
        }
        let ap = &a * &p;
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        s += &p * alpha;
        r -= &ap * alpha;
        let rr_next = r.dot(&r);
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
    }
    s.iter().copied().collect()
}
