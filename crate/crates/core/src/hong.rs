//! Hong's homogeneous backstepping feedback `ω_κ`, its Lyapunov function
//! `V_κ` and the gain recursion that makes the decay inequality
//! `V̇_κ ≤ -C V_κ^{1+α(κ)}` hold uniformly in `κ ∈ [-1/(2n), 1/(2n)]`.

use crate::error::{domain, Error, Result};
use crate::homog::{kappa_bound, kappa_grid, project_to_sphere, sample_sphere, spow, SpherePoint};
use crate::par;
use rand_distr::{Distribution, StandardNormal};

/// Largest supported plant order (evaluation buffers live on the stack).
pub const MAX_N: usize = 16;

/// Samples whose cascade errors come this close to a signed-power kink are
/// skipped by the sampling sweeps.
pub const KINK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct BetaExponents {
    pub kappa: f64,
    /// `β_0 .. β_{n-1}`.
    pub beta: Vec<f64>,
}

fn check_kappa(n: usize, kappa: f64) -> Result<()> {
    if n == 0 || n > MAX_N {
        return domain(format!("order {n} outside 1..={MAX_N}"));
    }
    if !kappa.is_finite() || kappa.abs() > kappa_bound(n) * (1.0 + 1e-12) {
        return domain(format!("kappa {kappa} outside [-1/(2n), 1/(2n)] for n={n}"));
    }
    Ok(())
}

/// `β_0 = 1 + κ`, `(β_j + 1)(1 + jκ) = β_0 + 1`.
pub fn beta_exponents(n: usize, kappa: f64) -> Result<BetaExponents> {
    check_kappa(n, kappa)?;
    let e = Exponents::new(n, kappa);
    Ok(BetaExponents { kappa, beta: e.beta[..n].to_vec() })
}

/// Every exponent the cascade needs at one κ.
#[derive(Debug, Clone, Copy)]
pub struct Exponents {
    pub kappa: f64,
    n: usize,
    /// `r[i] = r_{i+1} = 1 + iκ`, `i = 0..=n`.
    r: [f64; MAX_N + 1],
    beta: [f64; MAX_N],
    /// `p[j] = r_{j+2} / (r_{j+1} β_j)`, the exponent producing `v_{j+1}`.
    p: [f64; MAX_N],
}

impl Exponents {
    pub fn new(n: usize, kappa: f64) -> Self {
        let mut r = [0.0; MAX_N + 1];
        let mut beta = [0.0; MAX_N];
        let mut p = [0.0; MAX_N];
        for (i, ri) in r.iter_mut().enumerate().take(n + 1) {
            *ri = 1.0 + i as f64 * kappa;
        }
        for j in 0..n {
            beta[j] = (2.0 + kappa) / r[j] - 1.0;
        }
        for j in 0..n {
            p[j] = r[j + 1] / (r[j] * beta[j]);
        }
        Exponents { kappa, n, r, beta, p }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `α(κ) = κ / (2 + κ)`.
    pub fn alpha(&self) -> f64 {
        alpha(self.kappa)
    }

    pub fn weights(&self) -> &[f64] {
        &self.r[..self.n]
    }
}

pub fn alpha(kappa: f64) -> f64 {
    kappa / (2.0 + kappa)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayCertificate {
    pub kappa_count: usize,
    pub samples_per_kappa: usize,
    pub synthesis_seed: u64,
    pub verify_seed: u64,
    pub safety: f64,
    /// Raw minimum of `-V̇/V^{1+α}` over the verification samples.
    pub sampled_min: f64,
    /// Max of `V̇ + C V^{1+α}` over the verification samples.
    pub max_residual: f64,
    pub rounds: usize,
    /// Gains as produced by the bound recursion, before tightening.
    pub recursion_ell: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HongGainSet {
    pub n: usize,
    pub ell: Vec<f64>,
    /// Decay constant in `V̇_κ ≤ -C V_κ^{1+α(κ)}`.
    pub c: f64,
    pub certificate: DecayCertificate,
}

impl HongGainSet {
    /// Gains with no certificate attached; `c` is zero.
    pub fn from_gains(ell: Vec<f64>) -> Result<Self> {
        let n = ell.len();
        if n == 0 || n > MAX_N {
            return domain(format!("order {n} outside 1..={MAX_N}"));
        }
        if ell.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return domain("gains must be positive");
        }
        let certificate = DecayCertificate {
            kappa_count: 0,
            samples_per_kappa: 0,
            synthesis_seed: 0,
            verify_seed: 0,
            safety: 0.0,
            sampled_min: 0.0,
            max_residual: 0.0,
            rounds: 0,
            recursion_ell: vec![],
        };
        Ok(HongGainSet { n, ell, c: 0.0, certificate })
    }

    pub fn kappa_range(&self) -> (f64, f64) {
        let b = kappa_bound(self.n);
        (-b, b)
    }

    /// Same set with `ℓ_n` divided by `b_lower`, so that `b ≥ b_lower` only
    /// strengthens the last backstepping level.
    pub fn adapted(&self, b_lower: f64) -> HongGainSet {
        let mut g = self.clone();
        g.ell[self.n - 1] /= b_lower;
        g
    }
}

#[derive(Debug, Clone, Copy)]
struct Cascade {
    /// `v[0] = 0`, `v[j] = v_j`.
    v: [f64; MAX_N + 1],
    /// `xi[j] = ξ_{j+1}`.
    xi: [f64; MAX_N],
}

/// `ξ_j = ⌈x_j⌋^{β_{j-1}} - ⌈v_{j-1}⌋^{β_{j-1}}`, `v_j = -ℓ_j ⌈ξ_j⌋^{p_j}` for
/// `j ≤ x.len()`; `v_j` only where `ℓ_j` is given.
#[inline]
fn cascade(ell: &[f64], ex: &Exponents, x: &[f64]) -> Cascade {
    let mut c = Cascade { v: [0.0; MAX_N + 1], xi: [0.0; MAX_N] };
    for j in 0..x.len() {
        let b = ex.beta[j];
        let xi = spow(x[j], b) - spow(c.v[j], b);
        c.xi[j] = xi;
        if j < ell.len() {
            c.v[j + 1] = -ell[j] * spow(xi, ex.p[j]);
        }
    }
    c
}

/// `ω_κ(x)` for precomputed exponents, no range checks.
#[inline]
pub fn control_with(ell: &[f64], ex: &Exponents, x: &[f64]) -> f64 {
    let mut v = 0.0;
    for j in 0..x.len() {
        let b = ex.beta[j];
        let xi = spow(x[j], b) - spow(v, b);
        v = -ell[j] * spow(xi, ex.p[j]);
    }
    v
}

/// Returns `(u, [v_1, .., v_n])`.
pub fn hong_control(g: &HongGainSet, kappa: f64, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_kappa(g.n, kappa)?;
    check_len(g.n, x)?;
    let c = cascade(&g.ell, &Exponents::new(g.n, kappa), x);
    Ok((c.v[g.n], c.v[1..=g.n].to_vec()))
}

fn check_len(n: usize, x: &[f64]) -> Result<()> {
    if x.len() != n {
        return domain(format!("state has length {}, expected {n}", x.len()));
    }
    Ok(())
}

/// Everything the sweeps need at one point.
#[derive(Debug, Clone, Copy)]
pub struct LyapEval {
    pub value: f64,
    pub grad: [f64; MAX_N],
    /// `v_m` where `m = x.len()`; NaN if `ℓ_m` was not supplied.
    pub u: f64,
    /// `Σ_{i<m} ∂_i V x_{i+1} + ∂_m V u`.
    pub vdot: f64,
    /// `Σ_{i<m} ∂_i V x_{i+1}`, the part of `V̇` not multiplied by `ℓ_m`.
    pub drift: f64,
    cascade: Cascade,
    /// `Σ_i (G_{m-1})_i x_{i+1}` with `G_k = ∇⌈v_k⌋^{β_k}`.
    g_dot_x: f64,
}

/// `V_κ` on `R^m`, `m = x.len()`, with gradient and derivative along the
/// `m`-th order chain closed by `v_m`. `ell` needs at least `m - 1` entries.
pub fn lyap_eval(ell: &[f64], ex: &Exponents, x: &[f64]) -> LyapEval {
    let m = x.len();
    let c = cascade(ell, ex, x);
    let mut value = 0.0;
    let mut grad = [0.0; MAX_N];
    // G_{j} for the current level, zero for j = 0.
    let mut gprev = [0.0; MAX_N];
    let mut g_dot_x = 0.0;
    for j in 0..m {
        let b = ex.beta[j];
        let vp = c.v[j];
        let e = x[j] - vp;
        value += (x[j].abs().powf(b + 1.0) - vp.abs().powf(b + 1.0)) / (b + 1.0) - spow(vp, b) * e;
        grad[j] += c.xi[j];
        if j > 0 {
            for i in 0..j {
                grad[i] -= e * gprev[i];
            }
        }
        if j + 1 == m {
            g_dot_x = (0..j).map(|i| gprev[i] * x[i + 1]).sum();
            break;
        }
        // G_{j+1} = ∇⌈v_{j+1}⌋^{β_{j+1}}.
        let bk = ex.beta[j + 1];
        let lk = ell[j].powf(bk);
        let mut gnext = [0.0; MAX_N];
        if j == 0 {
            gnext[0] = -lk;
        } else {
            let q = ex.p[j] * bk;
            let f = -lk * q * c.xi[j].abs().powf(q - 1.0);
            for i in 0..j {
                gnext[i] = -f * gprev[i];
            }
            gnext[j] = f * b * x[j].abs().powf(b - 1.0);
        }
        gprev = gnext;
    }
    let drift: f64 = (0..m - 1).map(|i| grad[i] * x[i + 1]).sum();
    let (u, vdot) = if ell.len() >= m {
        let u = c.v[m];
        (u, drift + grad[m - 1] * u)
    } else {
        (f64::NAN, f64::NAN)
    };
    LyapEval { value, grad, u, vdot, drift, cascade: c, g_dot_x }
}

/// `(V_κ(x), ∇V_κ(x))`.
pub fn hong_lyapunov(g: &HongGainSet, kappa: f64, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_kappa(g.n, kappa)?;
    check_len(g.n, x)?;
    let e = lyap_eval(&g.ell, &Exponents::new(g.n, kappa), x);
    Ok((e.value, e.grad[..g.n].to_vec()))
}

/// `V̇_κ` along `x' = J x + ω_κ(x) e_n`.
pub fn hong_vdot(g: &HongGainSet, kappa: f64, x: &[f64]) -> Result<f64> {
    check_kappa(g.n, kappa)?;
    check_len(g.n, x)?;
    Ok(lyap_eval(&g.ell, &Exponents::new(g.n, kappa), x).vdot)
}

/// True when every cascade error and every coordinate past the first stays
/// away from the non-smooth points of the signed powers.
pub fn away_from_kinks(ell: &[f64], ex: &Exponents, x: &[f64]) -> bool {
    let c = cascade(ell, ex, x);
    (0..x.len()).all(|j| (x[j] - c.v[j]).abs() >= KINK_TOL && (j == 0 || x[j].abs() >= KINK_TOL))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub kappa_count: usize,
    pub samples_per_kappa: usize,
    pub seed: u64,
}

impl GridConfig {
    /// Refinement by `scale`: `10·scale + 1` grid values of κ and `scale`
    /// times the samples per value.
    pub fn refined(&self, scale: usize) -> GridConfig {
        GridConfig {
            kappa_count: (self.kappa_count.max(2) - 1) * scale + 1,
            samples_per_kappa: self.samples_per_kappa * scale,
            seed: self.seed.wrapping_add(0x5eed_0000 + scale as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    /// `min -V̇/V^{1+α}` over the samples.
    pub c: f64,
    pub worst: SpherePoint,
    pub samples: usize,
}

/// A decay sample: its κ-grid index and the coordinate pinned to a tube
/// edge, if it is a probe.
#[derive(Debug, Clone, Copy)]
struct Tag {
    ki: usize,
    pinned: Option<usize>,
}

/// Sphere samples plus, for κ > 0, copies pulled onto the edge of the
/// `|x_k| < KINK_TOL` tube for `2 ≤ k < m`. There `∂ξ_k/∂x_k` is unbounded
/// and the decay ratio is at its worst.
fn decay_points(m: usize, n: usize, grid: &GridConfig) -> Result<(Vec<SpherePoint>, Vec<Exponents>, Vec<Tag>)> {
    let kappas = kappa_grid(n, grid.kappa_count);
    let base = sample_sphere(m, n, &kappas, grid.samples_per_kappa, grid.seed)?;
    let exps: Vec<Exponents> = kappas.iter().map(|&k| Exponents::new(n, k)).collect();
    let per = grid.samples_per_kappa;
    let mut pts = Vec::with_capacity(base.len() * m.max(1));
    let mut tags = Vec::with_capacity(base.len() * m.max(1));
    for (i, p) in base.into_iter().enumerate() {
        let ki = i / per;
        if p.kappa > 0.0 {
            for k in 1..m.saturating_sub(1) {
                let x = pin(&exps[ki].r[..m], &p.x, k);
                pts.push(SpherePoint { kappa: p.kappa, x });
                tags.push(Tag { ki, pinned: Some(k) });
            }
        }
        pts.push(p);
        tags.push(Tag { ki, pinned: None });
    }
    Ok((pts, exps, tags))
}

fn pin(r: &[f64], x: &[f64], k: usize) -> Vec<f64> {
    let mut z = x.to_vec();
    z[k] = PROBE_GAP.copysign(z[k]);
    project_to_sphere(r, &z)
}

/// Distance of the tube probes from the singular planes.
pub const PROBE_GAP: f64 = 1.5 * KINK_TOL;

/// Worst samples handed to the local search.
const POLISH_COUNT: usize = 8;
const POLISH_ITERS: usize = 300;

fn decay_ratio(ell: &[f64], ex: &Exponents, x: &[f64]) -> f64 {
    if !away_from_kinks(ell, ex, x) {
        return f64::INFINITY;
    }
    let e = lyap_eval(ell, ex, x);
    let r = -e.vdot / e.value.powf(1.0 + ex.alpha());
    if r.is_nan() {
        f64::NEG_INFINITY
    } else {
        r
    }
}

/// Random-walk descent of the decay ratio on the sphere, starting at `x`.
fn polish(ell: &[f64], ex: &Exponents, x: &[f64], pinned: Option<usize>, seed: u64) -> (f64, Vec<f64>) {
    let m = x.len();
    let r = &ex.r[..m];
    let mut rng = crate::homog::stream_rng(seed, 0x706f_6c69);
    let mut best = (decay_ratio(ell, ex, x), x.to_vec());
    let mut step = 0.05;
    for _ in 0..POLISH_ITERS {
        let mut z = best.1.clone();
        for (i, zi) in z.iter_mut().enumerate() {
            if Some(i) != pinned {
                let g: f64 = StandardNormal.sample(&mut rng);
                *zi += step * g;
            }
        }
        let z = match pinned {
            Some(k) => pin(r, &z, k),
            None => project_to_sphere(r, &z),
        };
        let v = decay_ratio(ell, ex, &z);
        if v < best.0 {
            best = (v, z);
            step = (step * 1.5).min(0.5);
        } else {
            step = (step * 0.9).max(1e-9);
        }
    }
    best
}

/// Decay ratio of the `m`-th level (`m = ell.len()`), κ-range fixed by `n`.
fn level_decay(ell: &[f64], n: usize, grid: &GridConfig) -> Result<DecayReport> {
    let (pts, exps, tags) = decay_points(ell.len(), n, grid)?;
    let ratios = par::map_range(pts.len(), |i| decay_ratio(ell, &exps[tags[i].ki], &pts[i].x));
    let mut order: Vec<usize> = (0..pts.len()).filter(|&i| ratios[i] < f64::INFINITY).collect();
    if order.is_empty() {
        return Err(Error::Synthesis("every sample fell on a kink".into()));
    }
    let used = order.len();
    order.sort_by(|&a, &b| ratios[a].total_cmp(&ratios[b]));
    order.truncate(POLISH_COUNT);
    let polished = par::map(&order, |&i| {
        let t = tags[i];
        let (c, x) = polish(ell, &exps[t.ki], &pts[i].x, t.pinned, grid.seed ^ i as u64);
        (c, SpherePoint { kappa: pts[i].kappa, x })
    });
    let (c, worst) = polished.into_iter().min_by(|a, b| a.0.total_cmp(&b.0)).expect("nonempty");
    Ok(DecayReport { c, worst, samples: used })
}

/// Minimum of `-V̇_κ / V_κ^{1+α(κ)}` over κ-grid × sphere samples.
pub fn verify_decay(g: &HongGainSet, grid: &GridConfig) -> Result<DecayReport> {
    level_decay(&g.ell, g.n, grid)
}

/// Max of `V̇_κ + c V_κ^{1+α(κ)}` over the samples.
pub fn decay_residual(g: &HongGainSet, c: f64, grid: &GridConfig) -> Result<f64> {
    let (pts, exps, tags) = decay_points(g.n, g.n, grid)?;
    let res = par::map_range(pts.len(), |i| {
        let ex = &exps[tags[i].ki];
        if !away_from_kinks(&g.ell, ex, &pts[i].x) {
            return f64::NEG_INFINITY;
        }
        let e = lyap_eval(&g.ell, ex, &pts[i].x);
        e.vdot + c * e.value.powf(1.0 + ex.alpha())
    });
    Ok(res.into_iter().fold(f64::NEG_INFINITY, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisConfig {
    pub kappa_count: usize,
    pub samples_per_kappa: usize,
    /// Inflation of `K_j, L_j` and deflation of `M_j`.
    pub safety: f64,
    pub seed: u64,
    pub max_rounds: usize,
    /// Stored `C` is this fraction of the sampled minimum.
    pub c_fraction: f64,
    /// Shrink each recursion gain to the smallest value whose level decay
    /// ratio is still half the previous level's.
    pub tighten: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig { kappa_count: 11, samples_per_kappa: 1000, safety: 4.0, seed: 0, max_rounds: 20, c_fraction: 0.9, tighten: true }
    }
}

impl SynthesisConfig {
    pub fn verify_grid(&self) -> GridConfig {
        GridConfig { kappa_count: self.kappa_count, samples_per_kappa: self.samples_per_kappa, seed: self.seed ^ 0x7665_7269_6679 }
    }
}

/// Sampled extrema `(K_j, L_j, M_j)` of the level-`j` bounds, `j = ell.len() + 1`.
fn level_constants(ell: &[f64], n: usize, kappas: &[f64], cfg: &SynthesisConfig, seed: u64) -> Result<(f64, f64, f64)> {
    let j = ell.len() + 1;
    let pts = sample_sphere(j, n, kappas, cfg.samples_per_kappa, seed)?;
    let exps: Vec<Exponents> = kappas.iter().map(|&k| Exponents::new(n, k)).collect();
    let per = cfg.samples_per_kappa;
    let vals = par::map_range(pts.len(), |i| {
        let ex = &exps[i / per];
        let x = &pts[i].x;
        if !away_from_kinks(ell, ex, x) {
            return None;
        }
        let ev = lyap_eval(ell, ex, x);
        let c = &ev.cascade;
        let e = (x[j - 1] - c.v[j - 1]).abs();
        let bt = ex.beta[j - 1].min(1.0);
        let ep = 2.0 * (1.0 + ex.kappa) / (ex.r[j - 1] * bt);
        let z = c.xi[j - 1].abs().powf(1.0 + ex.p[j - 1]);
        let k = c.xi[j - 2].abs() * e.powf(1.0 - bt);
        let l = e.powf(1.0 - bt) * ev.g_dot_x.abs();
        Some((k, l, z / e.powf(ep)))
    });
    let (mut k, mut l, mut mm) = (0.0f64, 0.0f64, f64::INFINITY);
    for (a, b, c) in vals.into_iter().flatten() {
        k = k.max(a);
        l = l.max(b);
        mm = mm.min(c);
    }
    if !(mm > 0.0 && mm.is_finite()) {
        return Err(Error::Synthesis(format!("no usable lower bound on Z at level {j}")));
    }
    Ok((cfg.safety * k, cfg.safety * l, mm / cfg.safety))
}

/// `ℓ_j` from the sampled constants, maximized over the κ grid.
fn level_gain(j: usize, n: usize, ell1: f64, k: f64, l: f64, m: f64, kappas: &[f64]) -> f64 {
    kappas
        .iter()
        .map(|&kappa| {
            let ex = Exponents::new(n, kappa);
            let bt = ex.beta[j - 1].min(1.0);
            let ep = 2.0 * (1.0 + kappa) / (ex.r[j - 1] * bt);
            let xi = (ell1 / ((k + l) * 2f64.powi(j as i32 - 1))).powf(1.0 / bt);
            (k + l) / (m * xi.powf(ep - bt))
        })
        .fold(0.0, f64::max)
}

/// Level-by-level construction of `ℓ_1 = 1, ℓ_2, .., ℓ_n`.
///
/// Each level's gain comes from sampled bounds; the level is then checked
/// directly on fresh samples and its gain doubled until the check passes.
pub fn synthesize_hong_gains(n: usize, cfg: &SynthesisConfig) -> Result<HongGainSet> {
    if n == 0 || n > MAX_N {
        return domain(format!("order {n} outside 1..={MAX_N}"));
    }
    if !(cfg.safety >= 1.0) || cfg.kappa_count < 2 || cfg.samples_per_kappa == 0 {
        return domain("synthesis needs safety >= 1, two grid values of kappa and some samples");
    }
    let kappas = kappa_grid(n, cfg.kappa_count);
    let vgrid = cfg.verify_grid();
    let mut ell = vec![1.0];
    let mut recursion_ell = vec![1.0];
    let mut rounds = 0;
    let mut prev_c = level_decay(&ell, n, &GridConfig { seed: vgrid.seed.wrapping_add(1), ..vgrid })?.c;
    for j in 2..=n {
        let seed = cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(j as u64);
        let lgrid = GridConfig { seed: vgrid.seed.wrapping_add(j as u64), ..vgrid };
        let (k, l, m) = level_constants(&ell, n, &kappas, cfg, seed)?;
        let mut lj = level_gain(j, n, ell[0], k, l, m, &kappas);
        if !(lj > 0.0 && lj.is_finite()) {
            return Err(Error::Synthesis(format!("level {j} gain is {lj}")));
        }
        let level_c = |gain: f64| -> Result<DecayReport> {
            let mut trial = ell.clone();
            trial.push(gain);
            level_decay(&trial, n, &lgrid)
        };
        let target = if cfg.tighten { 0.5 * prev_c } else { 0.0 };
        loop {
            let rep = level_c(lj)?;
            if rep.c > target {
                break;
            }
            rounds += 1;
            if rounds > cfg.max_rounds {
                return Err(Error::Synthesis(format!(
                    "level {j} still fails after {} doublings, worst sample kappa={} x={:?} ratio={}",
                    cfg.max_rounds, rep.worst.kappa, rep.worst.x, rep.c
                )));
            }
            lj *= 2.0;
        }
        recursion_ell.push(lj);
        if cfg.tighten {
            // V_j does not involve ℓ_j and V̇_j is affine decreasing in it, so
            // the sampled ratio is monotone and bisection is exact on the samples.
            let (mut lo, mut hi) = (lj, lj);
            for _ in 0..200 {
                lo *= 0.5;
                if level_c(lo)?.c <= target {
                    break;
                }
                hi = lo;
            }
            while hi / lo > 1.01 {
                let mid = (lo * hi).sqrt();
                if level_c(mid)?.c > target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            lj = hi;
        }
        prev_c = level_c(lj)?.c;
        ell.push(lj);
    }
    let rep = loop {
        let mut failing = None;
        for j in 1..=n {
            let rep = level_decay(&ell[..j], n, &vgrid)?;
            if !(rep.c > 0.0) {
                failing = Some((j, rep));
                break;
            }
        }
        let Some((j, rep)) = failing else {
            break level_decay(&ell, n, &vgrid)?;
        };
        rounds += 1;
        if rounds > cfg.max_rounds {
            return Err(Error::Synthesis(format!(
                "final decay check failed at kappa={} x={:?} ratio={}",
                rep.worst.kappa, rep.worst.x, rep.c
            )));
        }
        ell[j - 1] *= 2.0;
    };
    let mut g = HongGainSet::from_gains(ell)?;
    g.c = cfg.c_fraction * rep.c;
    g.certificate = DecayCertificate {
        kappa_count: vgrid.kappa_count,
        samples_per_kappa: vgrid.samples_per_kappa,
        synthesis_seed: cfg.seed,
        verify_seed: vgrid.seed,
        safety: cfg.safety,
        sampled_min: rep.c,
        max_residual: decay_residual(&g, g.c, &vgrid)?,
        rounds,
        recursion_ell,
    };
    Ok(g)
}
