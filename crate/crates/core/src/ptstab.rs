//! Switching homogeneity degree, fixed-time and prescribed-time feedback,
//! the matched-disturbance robust law, and the parameter pipeline that
//! turns a certified [`HongGainSet`] into [`SwitchParams`].

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::homog::{kappa_bound, kappa_grid, sample_sphere, stream_rng};
use crate::hong::{alpha, control_with, lyap_eval, Exponents, HongGainSet};
use crate::par;
use crate::spec::ChainSpec;

/// Parameters of the switching controller.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchParams {
    pub n: usize,
    pub m: f64,
    pub kappa0: f64,
    /// `V_0(x) = xᵀ P x`.
    pub p: DMatrix<f64>,
    pub r_plus: f64,
    pub r_minus: f64,
    pub t_settle: f64,
    /// Decay constant of the gain set the parameters were built from.
    pub c: f64,
    /// `E = min_{V_- = 1} V_+`, deflated.
    pub e_level: f64,
    /// `b̄ / b̲` used in the band estimate.
    pub b_ratio: f64,
    pub constants: ExplicitConstants,
    /// Times κ₀ was halved because the band check failed.
    pub halvings: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplicitConstants {
    pub x_n: f64,
    pub c1_n: f64,
    pub c2_n: f64,
    pub kappa0_of_m: f64,
}

/// Sampling budget for the parameter pipeline and its checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchConfig {
    pub kappa_count: usize,
    pub samples: usize,
    pub seed: u64,
    pub b_ratio: f64,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        SwitchConfig { kappa_count: 11, samples: 2000, seed: 0, b_ratio: 1.0 }
    }
}

/// `P` with `V_0(x) = xᵀPx`: at κ = 0 every cascade error is linear,
/// `x_j - v_{j-1} = z_jᵀ x`, and `V_0 = Σ (z_jᵀx)² / 2`.
pub fn v0_matrix(g: &HongGainSet) -> DMatrix<f64> {
    let n = g.n;
    let mut p = DMatrix::zeros(n, n);
    // c holds the coefficients of v_{j-1}.
    let mut c = vec![0.0; n];
    for j in 0..n {
        let mut z = vec![0.0; n];
        z[j] = 1.0;
        for i in 0..n {
            z[i] -= c[i];
        }
        for a in 0..n {
            for b in 0..n {
                p[(a, b)] += 0.5 * z[a] * z[b];
            }
        }
        c = z.iter().map(|zi| -g.ell[j] * zi).collect();
    }
    p
}

pub fn quad_form(p: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += x[i] * p[(i, j)] * x[j];
        }
    }
    s
}

/// Piecewise affine in `V_0`, saturating at `±κ₀` outside the band.
pub fn kappa_of_x(sp: &SwitchParams, x: &[f64]) -> f64 {
    kappa_of_v0(sp, quad_form(&sp.p, x))
}

pub fn kappa_of_v0(sp: &SwitchParams, v0: f64) -> f64 {
    let (m, k0) = (sp.m, sp.kappa0);
    if v0 > 1.0 + m {
        k0
    } else if v0 < 1.0 - m {
        -k0
    } else {
        k0 * (1.0 + (v0 - (1.0 + m)) / m)
    }
}

/// `ω^H_κ(x)` with the state-dependent κ evaluated at `probe`.
pub fn switched_control(g: &HongGainSet, sp: &SwitchParams, probe: &[f64], x: &[f64]) -> f64 {
    let k = kappa_of_x(sp, probe);
    control_with(&g.ell, &Exponents::new(g.n, k), x)
}

/// `ω^H_{κ(x)}(x)`. Pass `g.adapted(b_lower)` to absorb a lower gain bound.
pub fn fixed_time_feedback(g: &HongGainSet, sp: &SwitchParams, x: &[f64]) -> f64 {
    switched_control(g, sp, x, x)
}

/// Regularized sign, `z / max(|z|, ε)`.
pub fn sgn_eps(z: f64, eps: f64) -> f64 {
    z / z.abs().max(eps)
}

/// `ω₀(y)`: `ω^H_{+κ₀}` outside `{V_{-κ₀} ≤ 1}`, `ω^H_{-κ₀}` inside.
pub fn switched_nominal(g: &HongGainSet, sp: &SwitchParams, y: &[f64]) -> f64 {
    let minus = Exponents::new(g.n, -sp.kappa0);
    if lyap_eval(&g.ell, &minus, y).value > 1.0 {
        control_with(&g.ell, &Exponents::new(g.n, sp.kappa0), y)
    } else {
        control_with(&g.ell, &minus, y)
    }
}

/// `(ω₀(y) + D sgn_ε(ω₀(y))) / b̲`.
pub fn matched_robust_feedback(g: &HongGainSet, sp: &SwitchParams, spec: &ChainSpec, reg_eps: f64, y: &[f64]) -> f64 {
    let w0 = switched_nominal(g, sp, y);
    (w0 + spec.d_bound * sgn_eps(w0, reg_eps)) / spec.b_lower
}

/// Right-hand side of the settling-time estimate. The crossing term is the
/// larger of `-2 ln(2m)` and `2 ln((1+m)/(1-m))`, the time `V̇₀ ≤ -C V₀/2`
/// actually needs to cross the band.
pub fn settling_formula(c: f64, m: f64, kappa0: f64, r_plus: f64, r_minus: f64) -> f64 {
    let ap = alpha(kappa0);
    let am = alpha(-kappa0);
    let cross = (-2.0 * (2.0 * m).ln()).max(2.0 * ((1.0 + m) / (1.0 - m)).ln());
    (r_plus.powf(-ap) / ap + cross + r_minus.powf(-am) / (-am)) / c
}

pub fn settling_bound(g: &HongGainSet, sp: &SwitchParams) -> f64 {
    settling_formula(g.c, sp.m, sp.kappa0, sp.r_plus, sp.r_minus)
}

/// `μ = max(1, T(m,κ₀) / T_target)`.
pub fn prescribed_mu(g: &HongGainSet, sp: &SwitchParams, t_target: f64) -> f64 {
    (settling_bound(g, sp) / t_target).max(1.0)
}

/// `D_μ x` with the chain weights `(n, .., 1)`.
pub fn chain_dilate(mu: f64, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    x.iter().enumerate().map(|(i, xi)| mu.powi((n - i) as i32) * xi).collect()
}

/// `ω^H_{κ(D_μ x)}(D_μ x)` with `μ` from [`prescribed_mu`].
///
/// The dilation uses the chain weights `(n, .., 1)`: with `y = D_μ x` and
/// `s = μ t` the closed loop in `(s, y)` is exactly the fixed-time one.
pub fn prescribed_time_feedback(g: &HongGainSet, sp: &SwitchParams, t_target: f64, x: &[f64]) -> Result<f64> {
    if !(t_target > 0.0) {
        return domain("target time must be positive");
    }
    let y = chain_dilate(prescribed_mu(g, sp, t_target), x);
    Ok(fixed_time_feedback(g, sp, &y))
}

/// `Z(x) = min(V₀, V₊^{1+α(κ₀)}, V₋^{1-α(κ₀)})`; with `alt` the last exponent
/// is `1+α(-κ₀)` instead.
pub fn z_value(g: &HongGainSet, sp: &SwitchParams, x: &[f64], alt: bool) -> f64 {
    let vs = level_values(g, sp, x);
    z_from(sp, vs, alt)
}

/// `(V₀, V_{+κ₀}, V_{-κ₀})` at `x`.
pub fn level_values(g: &HongGainSet, sp: &SwitchParams, x: &[f64]) -> (f64, f64, f64) {
    let vp = lyap_eval(&g.ell, &Exponents::new(g.n, sp.kappa0), x).value;
    let vm = lyap_eval(&g.ell, &Exponents::new(g.n, -sp.kappa0), x).value;
    (quad_form(&sp.p, x), vp, vm)
}

pub fn z_from(sp: &SwitchParams, (v0, vp, vm): (f64, f64, f64), alt: bool) -> f64 {
    let a = alpha(sp.kappa0);
    let em = if alt { 1.0 + alpha(-sp.kappa0) } else { 1.0 - a };
    v0.min(vp.powf(1.0 + a)).min(vm.powf(em))
}

/// `count` points per κ with `V_κ` drawn uniformly from `[lo, hi]`.
fn level_points(g: &HongGainSet, kappas: &[f64], lo: f64, hi: f64, count: usize, seed: u64) -> Result<Vec<(f64, Vec<f64>)>> {
    let pts = sample_sphere(g.n, g.n, kappas, count, seed)?;
    let mut rng = stream_rng(seed, 0x6c65_7665);
    let out = pts
        .into_iter()
        .map(|p| {
            let level = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            (p.kappa, scale_to_level(g, p.kappa, &p.x, level))
        })
        .collect();
    Ok(out)
}

/// Dilates `x` along the `r(κ)` family until `V_κ = level`.
pub fn scale_to_level(g: &HongGainSet, kappa: f64, x: &[f64], level: f64) -> Vec<f64> {
    let ex = Exponents::new(g.n, kappa);
    let v = lyap_eval(&g.ell, &ex, x).value;
    let lam = (level / v).powf(1.0 / (2.0 + kappa));
    x.iter().zip(ex.weights()).map(|(xi, ri)| lam.powf(*ri) * xi).collect()
}

/// Positive root of `t^{1+β} = (1+β) X^β t + c` by bisection.
fn power_root(beta: f64, x: f64, c: f64) -> f64 {
    let f = |t: f64| t.powf(1.0 + beta) - (1.0 + beta) * x.powf(beta) * t - c;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Coordinate and cascade bound on the band `1-m ≤ V_κ ≤ 1+m`, by the
/// level-by-level recursion, inflated by 1.1.
pub fn coordinate_bound(g: &HongGainSet, m: f64, kappas: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for &k in kappas {
        let ex = Exponents::new(g.n, k);
        let b0 = 1.0 + k;
        let x1 = ((1.0 + b0) * (1.0 + m)).powf(1.0 / (1.0 + b0));
        let mut xb = x1.max(g.ell[0] * x1.powf(1.0 + k));
        for j in 1..g.n {
            let b = (2.0 + k) / ex.weights()[j] - 1.0;
            let c = (2.0 + b) * xb.powf(1.0 + b) + (1.0 + b) * (1.0 + m);
            let t = power_root(b, xb, c);
            let p = (1.0 + (j + 1) as f64 * k) / (ex.weights()[j] * b);
            let vb = g.ell[j] * (t.powf(b) + xb.powf(b)).powf(p);
            xb = xb.max(t).max(vb);
        }
        worst = worst.max(xb);
    }
    1.1 * worst
}

/// `X_n`, `C¹_n`, `C²_n` and the closed-form `κ₀(m)`, with `b̄/b̲` in the
/// denominator of the latter.
pub fn explicit_constants(g: &HongGainSet, m: f64, cfg: &SwitchConfig) -> Result<ExplicitConstants> {
    if !(m > 0.0 && m < 1.0) {
        return domain(format!("m = {m} outside (0, 1)"));
    }
    if !(g.c > 0.0) {
        return Err(Error::Synthesis("gain set carries no positive decay constant".into()));
    }
    let n = g.n;
    let kappas: Vec<f64> = kappa_grid(n, cfg.kappa_count).into_iter().filter(|k| k.abs() > 1e-12).collect();
    let x_n = coordinate_bound(g, m, &kappas);
    let pts = level_points(g, &kappas, 1.0 - m, 1.0 + m, cfg.samples, cfg.seed ^ 0xc1c2)?;
    let zero = Exponents::new(n, 0.0);
    let ratios = par::map(&pts, |(k, x)| {
        let ex = Exponents::new(n, *k);
        let scale = k.abs().powf(1.0f64.min(1.0 + (n as f64 - 1.0) * k));
        let dw = (control_with(&g.ell, &ex, x) - control_with(&g.ell, &zero, x)).abs();
        let dv = (lyap_eval(&g.ell, &ex, x).value - lyap_eval(&g.ell, &zero, x).value).abs();
        (dw / scale, dv / scale)
    });
    let c1 = 2.0 * ratios.iter().map(|r| r.0).fold(0.0, f64::max);
    let c2 = 2.0 * ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    let pnn = v0_matrix(g)[(n - 1, n - 1)];
    let base = g.c * (1.0 - m) / (4.0 * (1.0 + m).sqrt() * pnn.sqrt() * cfg.b_ratio * c1);
    let k0 = base.powf(2.0 * n as f64 / (n as f64 + 1.0)).min(0.999 * kappa_bound(n));
    Ok(ExplicitConstants { x_n, c1_n: c1, c2_n: c2, kappa0_of_m: k0 })
}

/// Outcome of one sampled inequality check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    /// Worst sampled value of the checked quantity.
    pub value: f64,
    /// The check passes when `value ≤ bound`.
    pub bound: f64,
    pub samples: usize,
}

impl CheckReport {
    pub fn pass(&self) -> bool {
        self.value <= self.bound
    }

    pub fn margin(&self) -> f64 {
        self.bound - self.value
    }
}

fn partial(g: &HongGainSet, m: f64, kappa0: f64, p: &DMatrix<f64>, b_ratio: f64) -> SwitchParams {
    SwitchParams {
        n: g.n,
        m,
        kappa0,
        p: p.clone(),
        r_plus: f64::NAN,
        r_minus: f64::NAN,
        t_settle: f64::NAN,
        c: g.c,
        e_level: f64::NAN,
        b_ratio,
        constants: ExplicitConstants { x_n: f64::NAN, c1_n: f64::NAN, c2_n: f64::NAN, kappa0_of_m: f64::NAN },
        halvings: 0,
    }
}

/// Max over `V₀`-band samples of `2|xᵀPe_n| (b̄/b̲) |ω_{κ(x)} - ω_0|` against
/// `C(1-m)/2`.
pub fn check_band(g: &HongGainSet, sp: &SwitchParams, cfg: &SwitchConfig) -> Result<CheckReport> {
    let n = g.n;
    let pts = level_points(g, &[0.0], 1.0 - sp.m, 1.0 + sp.m, cfg.samples * cfg.kappa_count, cfg.seed ^ 0xba4d)?;
    let zero = Exponents::new(n, 0.0);
    let vals = par::map(&pts, |(_, x)| {
        let pe: f64 = (0..n).map(|i| x[i] * sp.p[(i, n - 1)]).sum();
        let d = (fixed_time_feedback(g, sp, x) - control_with(&g.ell, &zero, x)).abs();
        2.0 * pe.abs() * sp.b_ratio * d
    });
    Ok(CheckReport {
        name: "band decay",
        value: vals.iter().copied().fold(0.0, f64::max),
        bound: g.c * (1.0 - sp.m) / 2.0,
        samples: vals.len(),
    })
}

/// Worst `V̇_κ + (C/2) V_κ^{1+α(κ)}` over samples, `b ∈ {1, b̄/b̲}`.
fn decay_check(
    g: &HongGainSet,
    sp: &SwitchParams,
    kappa: f64,
    pts: &[(f64, Vec<f64>)],
    keep: impl Fn(f64) -> bool + Sync,
    name: &'static str,
) -> CheckReport {
    let ex = Exponents::new(g.n, kappa);
    let vals = par::map(pts, |(_, x)| {
        if !keep(quad_form(&sp.p, x)) {
            return None;
        }
        let e = lyap_eval(&g.ell, &ex, x);
        let tail = e.grad[g.n - 1] * e.u;
        let worst = (e.drift + tail).max(e.drift + sp.b_ratio * tail);
        Some(worst + 0.5 * g.c * e.value.powf(1.0 + ex.alpha()))
    });
    let used: Vec<f64> = vals.into_iter().flatten().collect();
    CheckReport { name, value: used.iter().copied().fold(f64::NEG_INFINITY, f64::max), bound: 0.0, samples: used.len() }
}

/// Decay of `V_{κ₀}` outside the band, up to `V_{κ₀} ≤ 10 r₊`.
pub fn check_outer(g: &HongGainSet, sp: &SwitchParams, cfg: &SwitchConfig) -> Result<CheckReport> {
    let pts = level_points(g, &[sp.kappa0], sp.r_plus, 10.0 * sp.r_plus, cfg.samples * cfg.kappa_count, cfg.seed ^ 0x0b7e)?;
    let top = 1.0 + sp.m;
    Ok(decay_check(g, sp, sp.kappa0, &pts, move |v0| v0 > top, "outer decay"))
}

/// Decay of `V_{-κ₀}` inside the band.
pub fn check_inner(g: &HongGainSet, sp: &SwitchParams, cfg: &SwitchConfig) -> Result<CheckReport> {
    let pts = level_points(g, &[-sp.kappa0], 1e-6 * sp.r_minus, sp.r_minus, cfg.samples * cfg.kappa_count, cfg.seed ^ 0x1a4e)?;
    let bot = 1.0 - sp.m;
    Ok(decay_check(g, sp, -sp.kappa0, &pts, move |v0| v0 < bot, "inner decay"))
}

/// `∂_n V_{±κ₀} · ω_{±κ₀} ≤ 0`.
pub fn check_geometric(g: &HongGainSet, sp: &SwitchParams, cfg: &SwitchConfig) -> Result<CheckReport> {
    let ks = [-sp.kappa0, sp.kappa0];
    let pts = sample_sphere(g.n, g.n, &ks, cfg.samples * cfg.kappa_count / 2, cfg.seed ^ 0x6e0)?;
    let vals = par::map(&pts, |p| {
        let e = lyap_eval(&g.ell, &Exponents::new(g.n, p.kappa), &p.x);
        e.grad[g.n - 1] * e.u
    });
    Ok(CheckReport {
        name: "geometric condition",
        value: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        bound: 0.0,
        samples: vals.len(),
    })
}

/// Both sublevel containments; `value` is the worst violation, positive
/// when a sample escapes.
pub fn check_containment(g: &HongGainSet, sp: &SwitchParams, cfg: &SwitchConfig) -> Result<CheckReport> {
    let half = cfg.samples * cfg.kappa_count / 2;
    let inner = level_points(g, &[sp.kappa0], 0.0, sp.r_plus, half, cfg.seed ^ 0xc0a1)?;
    let outer = level_points(g, &[0.0], 0.0, 1.0 - sp.m, half, cfg.seed ^ 0xc0a2)?;
    let mex = Exponents::new(g.n, -sp.kappa0);
    let a = par::map(&inner, |(_, x)| quad_form(&sp.p, x) - (1.0 + sp.m));
    let b = par::map(&outer, |(_, x)| lyap_eval(&g.ell, &mex, x).value - sp.r_minus);
    Ok(CheckReport {
        name: "sublevel containment",
        value: a.iter().chain(b.iter()).copied().fold(f64::NEG_INFINITY, f64::max),
        bound: 0.0,
        samples: a.len() + b.len(),
    })
}

/// Builds κ₀, `P`, `r(m, ±κ₀)`, `T(m, κ₀)` and `E` for the gain set `g`
/// (unadapted, `b̲ = 1` units). κ₀ is halved until the band check passes.
pub fn build_switch_params(g: &HongGainSet, m: f64, cfg: &SwitchConfig) -> Result<SwitchParams> {
    let constants = explicit_constants(g, m, cfg)?;
    let p = v0_matrix(g);
    let mut kappa0 = constants.kappa0_of_m;
    let mut halvings = 0;
    loop {
        let sp = partial(g, m, kappa0, &p, cfg.b_ratio);
        let rep = check_band(g, &sp, cfg)?;
        if rep.pass() {
            break;
        }
        halvings += 1;
        if halvings > 40 {
            return Err(Error::Synthesis(format!("band check still fails at kappa0 = {kappa0}")));
        }
        kappa0 *= 0.5;
    }
    let count = cfg.samples * cfg.kappa_count;
    let plus = Exponents::new(g.n, kappa0);
    let minus = Exponents::new(g.n, -kappa0);
    let surf = level_points(g, &[0.0], 1.0 + m, 1.0 + m, count, cfg.seed ^ 0x5f)?;
    let r_plus = 0.9 * par::map(&surf, |(_, x)| lyap_eval(&g.ell, &plus, x).value).into_iter().fold(f64::INFINITY, f64::min);
    let mut ball = Vec::new();
    for (i, f) in [0.25, 0.5, 0.75, 1.0].iter().enumerate() {
        let l = f * (1.0 - m);
        ball.extend(level_points(g, &[0.0], l, l, count / 4, cfg.seed ^ (0x60 + i as u64))?);
    }
    let r_minus = 1.1 * par::map(&ball, |(_, x)| lyap_eval(&g.ell, &minus, x).value).into_iter().fold(0.0, f64::max);
    let ones = level_points(g, &[-kappa0], 1.0, 1.0, count, cfg.seed ^ 0xe1)?;
    let e_level = 0.9 * par::map(&ones, |(_, x)| lyap_eval(&g.ell, &plus, x).value).into_iter().fold(f64::INFINITY, f64::min);
    let t_settle = settling_formula(g.c, m, kappa0, r_plus, r_minus);
    Ok(SwitchParams {
        n: g.n,
        m,
        kappa0,
        p,
        r_plus,
        r_minus,
        t_settle,
        c: g.c,
        e_level,
        b_ratio: cfg.b_ratio,
        constants,
        halvings,
    })
}

/// Every sampled check on a parameter set.
pub fn check_all(g: &HongGainSet, sp: &SwitchParams, cfg: &SwitchConfig) -> Result<Vec<CheckReport>> {
    Ok(vec![
        check_band(g, sp, cfg)?,
        check_outer(g, sp, cfg)?,
        check_inner(g, sp, cfg)?,
        check_geometric(g, sp, cfg)?,
        check_containment(g, sp, cfg)?,
    ])
}
