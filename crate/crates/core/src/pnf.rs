//! Robust linear gain `(K, S, ρ)` for `(J - b e_n K^T)^T S + S (J - b e_n K^T) ≤ -ρ`
//! over `b ≥ b_lower`, the time-varying feedback `u = -K^T D_{ηλ(t)} x` and
//! its convergence envelopes.

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, Result};
use crate::linalg::{jordan, lyapunov, max_eig, min_eig, poly_from_roots, unit};
use crate::timescale::TimeScale;

/// Tolerance on the eigenvalue checks.
pub const LMI_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGain {
    pub n: usize,
    pub k: Vec<f64>,
    pub s: DMatrix<f64>,
    pub rho: f64,
    pub b_lower: f64,
    /// Certified radius for the `a D_r` perturbation.
    pub c0: f64,
    /// Margin kept under `|a| ≤ c0`.
    pub rho0: f64,
}

/// `M_K = Σ k_i J^{i-1}`, upper-triangular Toeplitz with first row `K^T`.
///
/// `M_K^T e_1 = K`, `M_K e_n` is `K` in reverse order, and `M_K` commutes
/// with `J`, so `M_K (J - b e_n K^T) M_K^{-1} = J - b (M_K e_n) e_1^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompanionLift {
    pub m: DMatrix<f64>,
}

impl CompanionLift {
    pub fn new(k: &[f64]) -> Self {
        let n = k.len();
        CompanionLift { m: DMatrix::from_fn(n, n, |i, j| if j >= i { k[j - i] } else { 0.0 }) }
    }

    pub fn is_invertible(&self) -> bool {
        self.m.nrows() > 0 && self.m[(0, 0)] != 0.0
    }
}

fn closed_loop(n: usize, k: &DVector<f64>, b: f64) -> DMatrix<f64> {
    jordan(n) - unit(n, n - 1) * k.transpose() * b
}

fn lyap_form(a: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * s + s * a
}

/// `(J - b e_n K^T)^T S + S (J - b e_n K^T)`.
pub fn lmi_matrix(k: &[f64], s: &DMatrix<f64>, b: f64) -> DMatrix<f64> {
    let n = k.len();
    lyap_form(&closed_loop(n, &DVector::from_column_slice(k), b), s)
}

/// `(e_n K^T)^T S + S e_n K^T`, the slope of the LMI in `-b`.
pub fn slope_matrix(k: &[f64], s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.len();
    let enk = unit(n, n - 1) * DVector::from_column_slice(k).transpose();
    lyap_form(&enk, s)
}

/// `D_r S + S D_r` with `D_r = diag(n - i + 1)`.
pub fn drift_matrix(s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.nrows();
    let dr = DMatrix::from_fn(n, n, |i, j| if i == j { (n - i) as f64 } else { 0.0 });
    &dr * s + s * &dr
}

pub fn synthesize_linear_gain(n: usize, b_lower: f64) -> Result<LinearGain> {
    if n == 0 {
        return domain("n must be at least 1");
    }
    if !(b_lower > 0.0 && b_lower.is_finite()) {
        return domain(format!("b_lower must be positive, got {b_lower}"));
    }
    let (k, s, rho) = if n == 1 {
        (vec![1.0 / b_lower], DMatrix::from_element(1, 1, 0.5), 1.0)
    } else {
        lifted_synthesis(n, b_lower)?
    };
    let mut g = LinearGain { n, k, s, rho, b_lower, c0: 0.0, rho0: rho / 2.0 };
    if !verify_lmi(&g).pass {
        return Err(Error::Synthesis(format!("constructed gain fails its own check for n={n}")));
    }
    let (c0, rho0) = certify_perturbation(&g);
    g.c0 = c0;
    g.rho0 = rho0;
    Ok(g)
}

/// Construction in the frame `x ↦ A_Ω M_K x` where the closed loop reads
/// `[[-(b k1 + Ω_1), ẽ1^T], [-HΩ, H]]` with `H = J_{n-1} + Ω ẽ1^T` Hurwitz.
fn lifted_synthesis(n: usize, b_lower: f64) -> Result<(Vec<f64>, DMatrix<f64>, f64)> {
    let m = n - 1;
    let roots: Vec<f64> = (1..=m).map(|k| -(k as f64)).collect();
    let omega: Vec<f64> = poly_from_roots(&roots).iter().map(|c| -c).collect();
    let mut h = jordan(m);
    for i in 0..m {
        h[(i, 0)] += omega[i];
    }
    let s_low = lyapunov(&h, &DMatrix::identity(m, m))
        .ok_or_else(|| Error::Synthesis("singular Lyapunov system".into()))?;
    let mut s_tilde = DMatrix::zeros(n, n);
    s_tilde[(0, 0)] = 1.0;
    s_tilde.view_mut((1, 1), (m, m)).copy_from(&s_low);
    let mut a_omega = DMatrix::identity(n, n);
    for i in 0..m {
        a_omega[(i + 1, 0)] = omega[i];
    }
    let s1 = a_omega.transpose() * &s_tilde * &a_omega;

    let target = -0.5;
    let mut k1 = 1.0;
    for _ in 0..=40 {
        let mut kl = vec![k1];
        kl.extend(omega.iter().map(|w| -k1 * w));
        // Closed loop in the lifted frame: J - b K̃ e_1^T with K̃ = M_K e_n,
        // the last column of M_K, i.e. K read backwards.
        let kv = DVector::from_column_slice(&kl);
        let lifted = jordan(n) - &kv * unit(n, 0).transpose() * b_lower;
        if max_eig(&lyap_form(&lifted, &s1)) <= target {
            let k: Vec<f64> = kl.iter().rev().copied().collect();
            let mk = CompanionLift::new(&k).m;
            let s = mk.transpose() * &s1 * &mk;
            let scale = {
                let ev = crate::linalg::sym_eigenvalues(&lmi_matrix(&k, &s, b_lower));
                ev[0].abs().max(ev[n - 1].abs())
            };
            let s = crate::linalg::symmetrize(&(s / scale));
            let rho = -max_eig(&lmi_matrix(&k, &s, b_lower)) * (1.0 - 1e-6);
            return Ok((k, s, rho));
        }
        k1 *= 2.0;
    }
    Err(Error::Synthesis(format!("k1 doubling exceeded 2^40 for n={n}")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmiReport {
    /// Max eigenvalue of the LMI matrix at `b_lower` plus `ρ I`.
    pub endpoint: f64,
    /// Min eigenvalue of the slope matrix.
    pub slope: f64,
    pub pass: bool,
}

impl LmiReport {
    /// Positive when the check fails, by how much.
    pub fn margin(&self) -> f64 {
        self.endpoint.max(-self.slope)
    }
}

pub fn verify_lmi(g: &LinearGain) -> LmiReport {
    let endpoint = max_eig(&lmi_matrix(&g.k, &g.s, g.b_lower)) + g.rho;
    let slope = min_eig(&slope_matrix(&g.k, &g.s));
    LmiReport { endpoint, slope, pass: endpoint <= LMI_TOL && slope >= -LMI_TOL && min_eig(&g.s) > 0.0 }
}

/// Largest `C0` (relative tolerance 1e-3) keeping the LMI at margin `ρ/2`
/// under `a (D_r S + S D_r)` for `|a| ≤ C0`. Returns `(C0, ρ/2)`.
pub fn certify_perturbation(g: &LinearGain) -> (f64, f64) {
    let rho0 = g.rho / 2.0;
    let base = lmi_matrix(&g.k, &g.s, g.b_lower);
    let drift = drift_matrix(&g.s);
    let slope_ok = min_eig(&slope_matrix(&g.k, &g.s)) >= -LMI_TOL;
    let ok = |c: f64| {
        slope_ok
            && [c, -c].iter().all(|&a| max_eig(&(&base + &drift * a)) + rho0 <= LMI_TOL)
    };
    if !ok(0.0) {
        return (0.0, rho0);
    }
    let (mut lo, mut hi);
    if ok(1.0) {
        lo = 1.0;
        hi = 2.0;
        while ok(hi) {
            lo = hi;
            hi *= 2.0;
            if hi > 1e12 {
                return (lo, rho0);
            }
        }
    } else {
        hi = 1.0;
        lo = 0.5;
        while !ok(lo) {
            hi = lo;
            lo *= 0.5;
            if lo < 1e-15 {
                return (0.0, rho0);
            }
        }
    }
    while hi - lo > 1e-3 * lo {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, rho0)
}

/// Smallest `η` allowed by the certificate for this time scale.
pub fn eta_min(g: &LinearGain, ts: &TimeScale) -> f64 {
    (ts.a_sup() / g.c0).max(1.0)
}

/// `u = -K^T D_{ηλ(t)} x`.
pub fn pnf_feedback(g: &LinearGain, ts: &TimeScale, eta: f64, t: f64, x: &[f64]) -> Result<f64> {
    let l = eta * ts.lambda(t)?;
    Ok(pnf_control_at(&g.k, l, x))
}

pub(crate) fn pnf_control_at(k: &[f64], l: f64, x: &[f64]) -> f64 {
    let n = k.len();
    let mut u = 0.0;
    let mut p = 1.0;
    for i in (0..n).rev() {
        p *= l;
        u -= k[i] * p * x[i];
    }
    u
}

/// Constants of the `z = D_{ηλ} x` Lyapunov integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeConstants {
    /// `sqrt(σ_max(S) / σ_min(S))`.
    pub transient: f64,
    /// `‖S e_n‖ / (σ_min(S) μ)`.
    pub disturbance: f64,
    /// `ρ0 / (2 σ_max(S))`.
    pub mu: f64,
}

impl EnvelopeConstants {
    pub fn from_gain(g: &LinearGain) -> Self {
        let smax = max_eig(&g.s);
        let smin = min_eig(&g.s);
        let mu = g.rho0 / (2.0 * smax);
        let sen = g.s.column(g.n - 1).norm();
        EnvelopeConstants { transient: (smax / smin).sqrt(), disturbance: sen / (smin * mu), mu }
    }
}

fn envelope(g: &LinearGain, ts: &TimeScale, eta: f64, x0_norm: f64, d_eff: f64, t: f64) -> Result<Vec<f64>> {
    let c = EnvelopeConstants::from_gain(g);
    let n = g.n as i32;
    let l0 = eta * ts.lambda(0.0)?;
    let l = eta * ts.lambda(t)?;
    let s = ts.s(t)?;
    let z0 = l0.max(l0.powi(n)) * x0_norm;
    let zb = c.transient * (-c.mu * eta * s).exp() * z0 + c.disturbance * d_eff;
    Ok((0..g.n).map(|i| zb / l.powi(n - i as i32)).collect())
}

/// Bounds on `|x_i(t)|` under `u = -K^T D_{ηλ} x` with `|d| ≤ d_sup`; valid for `η ≥ eta_min`.
pub fn convergence_envelope(g: &LinearGain, ts: &TimeScale, eta: f64, x0_norm: f64, d_sup: f64, t: f64) -> Result<Vec<f64>> {
    envelope(g, ts, eta, x0_norm, d_sup, t)
}

/// Bounds on `|x_i(t)|` when the feedback sees `x + d_1`, `‖d_1‖ ≤ d1_sup`.
///
/// The noise acts as an extra matched input of size at most
/// `b_upper ‖K‖ max(ηλ, (ηλ)^n) d1_sup`, which is why coordinates `i ≥ 2`
/// blow up at the horizon.
#[allow(clippy::too_many_arguments)]
pub fn noise_envelope(g: &LinearGain, ts: &TimeScale, eta: f64, x0_norm: f64, d_sup: f64, d1_sup: f64, b_upper: f64, t: f64) -> Result<Vec<f64>> {
    let l = eta * ts.lambda(t)?;
    let knorm = g.k.iter().map(|k| k * k).sum::<f64>().sqrt();
    let extra = if d1_sup == 0.0 { 0.0 } else { b_upper * knorm * l.max(l.powi(g.n as i32)) * d1_sup };
    envelope(g, ts, eta, x0_norm, d_sup + extra, t)
}
