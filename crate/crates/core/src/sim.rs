//! Trajectories of the perturbed chain under the toolkit's feedback laws.
//!
//! The integrator is the Dormand–Prince 5(4) pair with per-step error
//! control. Piecewise-constant noise is sampled at the midpoint of the
//! current step and steps are clipped at its breakpoints, so every step sees
//! a smooth right-hand side away from the switching surfaces.

use rand::RngCore;

use crate::error::{domain, Result};
use crate::homog::stream_rng;
use crate::hong::{control_with, Exponents, HongGainSet};
use crate::pnf::{pnf_control_at, LinearGain};
use crate::ptstab::{
    chain_dilate, kappa_of_x, level_values, matched_robust_feedback, prescribed_mu, quad_form, switched_control, z_from,
    SwitchParams,
};
use crate::spec::ChainSpec;
use crate::timescale::TimeScale;

/// Scalar disturbance catalog. Every variant is bounded by [`Signal::bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Signal {
    Zero,
    Constant(f64),
    Sine { amp: f64, freq: f64, phase: f64 },
    /// Uniform on `[-amp, amp]`, constant on each `[k p, (k+1) p)`.
    Noise { amp: f64, period: f64, seed: u64 },
}

impl Signal {
    pub fn bound(&self) -> f64 {
        match *self {
            Signal::Zero => 0.0,
            Signal::Constant(c) => c.abs(),
            Signal::Sine { amp, .. } | Signal::Noise { amp, .. } => amp.abs(),
        }
    }

    /// Value at `t`; noise is read at `seg`, a time inside the current
    /// constant piece.
    pub fn eval(&self, t: f64, seg: f64, channel: u64) -> f64 {
        match *self {
            Signal::Zero => 0.0,
            Signal::Constant(c) => c,
            Signal::Sine { amp, freq, phase } => amp * (std::f64::consts::TAU * freq * t + phase).sin(),
            Signal::Noise { amp, period, seed } => {
                let k = (seg / period).floor().max(0.0) as u64;
                let mut rng = stream_rng(seed, channel);
                rng.set_word_pos(2 * k as u128);
                let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                amp * (2.0 * u - 1.0)
            }
        }
    }

    pub fn period(&self) -> Option<f64> {
        match *self {
            Signal::Noise { period, .. } => Some(period),
            _ => None,
        }
    }

    pub fn scaled(&self, s: f64) -> Signal {
        match *self {
            Signal::Zero => Signal::Zero,
            Signal::Constant(c) => Signal::Constant(s * c),
            Signal::Sine { amp, freq, phase } => Signal::Sine { amp: s * amp, freq, phase },
            Signal::Noise { amp, period, seed } => Signal::Noise { amp: s * amp, period, seed },
        }
    }
}

/// Control gain `b(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainProfile {
    Constant(f64),
    /// `lo + (hi - lo)(1 + sin(2π f t))/2`.
    Sine { lo: f64, hi: f64, freq: f64 },
}

impl GainProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            GainProfile::Constant(b) => b,
            GainProfile::Sine { lo, hi, freq } => lo + 0.5 * (hi - lo) * (1.0 + (std::f64::consts::TAU * freq * t).sin()),
        }
    }

    pub fn range(&self) -> (f64, f64) {
        match *self {
            GainProfile::Constant(b) => (b, b),
            GainProfile::Sine { lo, hi, .. } => (lo, hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSpec {
    /// `d`, entering with the control.
    pub matched: Signal,
    /// `d₁`, added to the measured state; empty means zero.
    pub noise: Vec<Signal>,
    /// `d₂`, added to every state derivative; empty means zero.
    pub unmatched: Vec<Signal>,
    pub b: GainProfile,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        DisturbanceSpec { matched: Signal::Zero, noise: vec![], unmatched: vec![], b: GainProfile::Constant(1.0) }
    }
}

impl DisturbanceSpec {
    pub fn validate(&self, spec: &ChainSpec) -> Result<()> {
        for (name, v) in [("noise", &self.noise), ("unmatched", &self.unmatched)] {
            if !v.is_empty() && v.len() != spec.n {
                return domain(format!("{name} has {} channels, expected {}", v.len(), spec.n));
            }
        }
        let (lo, hi) = self.b.range();
        if lo < spec.b_lower || hi > spec.b_upper {
            return domain(format!("b profile [{lo}, {hi}] leaves [{}, {}]", spec.b_lower, spec.b_upper));
        }
        for s in self.noise.iter().chain(&self.unmatched).chain(std::iter::once(&self.matched)) {
            if let Signal::Noise { period, .. } = s {
                if !(*period > 0.0) {
                    return domain("noise period must be positive");
                }
            }
        }
        Ok(())
    }

    fn min_period(&self) -> Option<f64> {
        self.noise
            .iter()
            .chain(&self.unmatched)
            .chain(std::iter::once(&self.matched))
            .filter_map(Signal::period)
            .reduce(f64::min)
    }
}

/// Where the measurement noise enters the switching controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// `ω_{κ(x + d₁)}(x)`: noise only moves the switch.
    #[default]
    SwitchOnly,
    /// `ω_{κ(x + d₁)}(x + d₁)`.
    FullState,
}

pub type CustomLaw<'a> = &'a (dyn Fn(f64, &[f64]) -> f64 + Sync);

#[derive(Clone, Copy)]
pub enum Feedback<'a> {
    Zero,
    Pnf { gain: &'a LinearGain, ts: &'a TimeScale, eta: f64 },
    /// Hong's controller at a fixed κ.
    Hong { gains: &'a HongGainSet, kappa: f64 },
    FixedTime { gains: &'a HongGainSet, sp: &'a SwitchParams, noise: NoiseMode },
    Prescribed { gains: &'a HongGainSet, sp: &'a SwitchParams, t_target: f64, noise: NoiseMode },
    MatchedRobust { gains: &'a HongGainSet, sp: &'a SwitchParams, spec: ChainSpec, reg_eps: f64 },
    Custom(CustomLaw<'a>),
}

impl Feedback<'_> {
    fn switching(&self) -> Option<(&HongGainSet, &SwitchParams)> {
        match *self {
            Feedback::FixedTime { gains, sp, .. }
            | Feedback::Prescribed { gains, sp, .. }
            | Feedback::MatchedRobust { gains, sp, .. } => Some((gains, sp)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// PNF runs stop at this fraction of the horizon.
    pub t_stop_frac: f64,
    pub settle_radius: f64,
    pub settle_steps: usize,
    pub max_steps: usize,
    /// Coefficient `a` of the extra drift `a D_r x`, `D_r = diag(n, .., 1)`.
    pub drift: f64,
    /// Record every k-th accepted step (the last one is always kept).
    pub record_every: usize,
    /// Warped-time end for [`integrate_warped`].
    pub s_max: f64,
    /// Use `1 + α(-κ₀)` as the last exponent of `Z`.
    pub alt_z: bool,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            t_stop_frac: 1.0 - 1e-6,
            settle_radius: 1e-9,
            settle_steps: 100,
            max_steps: 5_000_000,
            drift: 0.0,
            record_every: 1,
            s_max: 30.0,
            alt_z: false,
        }
    }
}

/// Per-sample diagnostics; NaN where the feedback has no switching data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub v0: f64,
    pub vkp: f64,
    pub vkm: f64,
    pub kappa: f64,
    pub z: f64,
}

impl Diagnostics {
    pub const NONE: Diagnostics = Diagnostics { v0: f64::NAN, vkp: f64::NAN, vkm: f64::NAN, kappa: f64::NAN, z: f64::NAN };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: f64,
    pub diag: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Status {
    ReachedHorizon,
    SettledAt(f64),
    StepFailure(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub status: Status,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectories hold at least the initial sample")
    }

    pub fn settle_time(&self) -> Option<f64> {
        match self.status {
            Status::SettledAt(t) => Some(t),
            _ => None,
        }
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus the embedded fourth-order ones.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

enum Flow {
    Continue,
    Stop,
}

enum End {
    Horizon,
    Stopped,
    Failure(f64),
}

/// Adaptive DOPRI5 from `t0` to `t_end` with per-component absolute
/// tolerances `atol`. `rhs(t, seg, x, dx)` returns false
/// on a non-finite evaluation; `cap(t, x)` bounds the next step; `accept`
/// sees every accepted `(t, x)` and may stop the run.
fn dopri<F, K, G>(
    mut rhs: F,
    t0: f64,
    x0: &[f64],
    t_end: f64,
    atol: &[f64],
    opts: &IntegrateOptions,
    mut cap: K,
    mut accept: G,
) -> End
where
    F: FnMut(f64, f64, &[f64], &mut [f64]) -> bool,
    K: FnMut(f64, &[f64]) -> f64,
    G: FnMut(f64, &[f64]) -> Flow,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut t = t0;
    let mut k = vec![vec![0.0; n]; 7];
    let mut xs = vec![0.0; n];
    let mut xn = vec![0.0; n];
    let mut h = {
        // Hairer's starting guess.
        let mut f0 = vec![0.0; n];
        if !rhs(t, t, &x, &mut f0) {
            return End::Failure(t);
        }
        let sc = |i: usize| atol[i] + opts.rel_tol * x[i].abs();
        let d0 = (0..n).map(|i| (x[i] / sc(i)).powi(2)).sum::<f64>().sqrt();
        let d1 = (0..n).map(|i| (f0[i] / sc(i)).powi(2)).sum::<f64>().sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0.min(t_end - t0)
    };
    let mut steps = 0usize;
    while t < t_end {
        steps += 1;
        if steps > opts.max_steps {
            return End::Failure(t);
        }
        h = h.min(t_end - t).min(cap(t, &x));
        if !(h >= 1e-15) {
            return End::Failure(t);
        }
        let seg = t + 0.5 * h;
        let mut ok = true;
        for s in 0..7 {
            for i in 0..n {
                let mut acc = x[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += h * A[s][j] * kj[i];
                }
                xs[i] = acc;
            }
            if s == 6 {
                xn.copy_from_slice(&xs);
            }
            ok &= rhs(t + C[s] * h, seg, &xs, &mut k[s]);
            if !ok {
                break;
            }
        }
        let err = if ok {
            let mut e2 = 0.0;
            for i in 0..n {
                let ei: f64 = (0..7).map(|s| E[s] * k[s][i]).sum::<f64>() * h;
                let sc = atol[i] + opts.rel_tol * x[i].abs().max(xn[i].abs());
                e2 += (ei / sc).powi(2);
            }
            (e2 / n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        if !err.is_finite() {
            h *= 0.1;
            continue;
        }
        if err <= 1.0 {
            t = if t_end - (t + h) < 1e-14 * t_end.abs().max(1.0) { t_end } else { t + h };
            x.copy_from_slice(&xn);
            let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= grow;
            if let Flow::Stop = accept(t, &x) {
                return End::Stopped;
            }
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
        }
    }
    End::Horizon
}

/// State seen by the controller and the plant forcing at one time.
struct Forcing {
    d: f64,
    b: f64,
}

fn forcing(dist: &DisturbanceSpec, t: f64, seg: f64) -> Forcing {
    Forcing { d: dist.matched.eval(t, seg, 0), b: dist.b.eval(t) }
}

fn noisy(dist: &DisturbanceSpec, t: f64, seg: f64, x: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = x[i] + dist.noise.get(i).map_or(0.0, |s| s.eval(t, seg, 1 + i as u64));
    }
}

/// Control value of `fb` at `(t, x)` with measured state `xm`.
fn control(fb: &Feedback, t: f64, x: &[f64], xm: &[f64]) -> Result<f64> {
    Ok(match *fb {
        Feedback::Zero => 0.0,
        Feedback::Pnf { gain, ts, eta } => {
            let l = eta * ts.lambda(t.min(ts.t_max()))?;
            pnf_control_at(&gain.k, l, xm)
        }
        Feedback::Hong { gains, kappa } => control_with(&gains.ell, &Exponents::new(gains.n, kappa), xm),
        Feedback::FixedTime { gains, sp, noise } => match noise {
            NoiseMode::SwitchOnly => switched_control(gains, sp, xm, x),
            NoiseMode::FullState => switched_control(gains, sp, xm, xm),
        },
        Feedback::Prescribed { gains, sp, t_target, noise } => {
            let mu = prescribed_mu(gains, sp, t_target);
            let ym = chain_dilate(mu, xm);
            match noise {
                NoiseMode::SwitchOnly => switched_control(gains, sp, &ym, &chain_dilate(mu, x)),
                NoiseMode::FullState => switched_control(gains, sp, &ym, &ym),
            }
        }
        Feedback::MatchedRobust { gains, sp, ref spec, reg_eps } => matched_robust_feedback(gains, sp, spec, reg_eps, xm),
        Feedback::Custom(f) => f(t, xm),
    })
}

fn diagnostics(fb: &Feedback, x: &[f64], alt_z: bool) -> Diagnostics {
    match fb.switching() {
        Some((g, sp)) => {
            let vs = level_values(g, sp, x);
            Diagnostics { v0: vs.0, vkp: vs.1, vkm: vs.2, kappa: kappa_of_x(sp, x), z: z_from(sp, vs, alt_z) }
        }
        None => Diagnostics::NONE,
    }
}

/// Largest step allowed near the switching surfaces of `fb`.
fn surface_cap(fb: &Feedback, x: &[f64]) -> f64 {
    let Some((g, sp)) = fb.switching() else {
        return f64::INFINITY;
    };
    let dist = match fb {
        Feedback::MatchedRobust { .. } => {
            let vm = crate::hong::lyap_eval(&g.ell, &Exponents::new(g.n, -sp.kappa0), x).value;
            (vm - 1.0).abs()
        }
        Feedback::Prescribed { t_target, .. } => {
            let v0 = quad_form(&sp.p, &chain_dilate(prescribed_mu(g, sp, *t_target), x));
            (v0 - 1.0 - sp.m).abs().min((v0 - 1.0 + sp.m).abs()) / prescribed_mu(g, sp, *t_target)
        }
        _ => {
            let v0 = quad_form(&sp.p, x);
            (v0 - 1.0 - sp.m).abs().min((v0 - 1.0 + sp.m).abs())
        }
    };
    if dist < 0.05 {
        (10.0 * dist).max(1e-4)
    } else {
        f64::INFINITY
    }
}

fn breakpoint_cap(period: Option<f64>, t: f64) -> f64 {
    match period {
        Some(p) => {
            let next = ((t / p + 1e-9).floor() + 1.0) * p;
            (next - t).max(1e-12 * p)
        }
        None => f64::INFINITY,
    }
}

/// Integrates `ẋ = J x + (d + b u) e_n + d₂ + a D_r x` from `x0`.
///
/// PNF feedback runs to `t_stop_frac · T` of its time scale and never
/// declares settling; every other law runs to `spec.horizon` and stops once
/// `‖x‖ ≤ settle_radius` has held for `settle_steps` accepted steps.
pub fn integrate(spec: &ChainSpec, fb: &Feedback, dist: &DisturbanceSpec, x0: &[f64], opts: &IntegrateOptions) -> Result<Trajectory> {
    let n = spec.n;
    if x0.len() != n || x0.iter().any(|v| !v.is_finite()) {
        return domain(format!("initial state must be {n} finite values"));
    }
    dist.validate(spec)?;
    let (t_end, settles, horizon) = match fb {
        Feedback::Pnf { ts, .. } => (opts.t_stop_frac * ts.horizon(), false, Some(ts.horizon())),
        _ => (spec.horizon, true, None),
    };
    let period = dist.min_period();
    let mut xm = vec![0.0; n];
    let rhs = |t: f64, seg: f64, x: &[f64], dx: &mut [f64]| {
        noisy(dist, t, seg, x, &mut xm);
        let u = match control(fb, t, x, &xm) {
            Ok(u) if u.is_finite() => u,
            _ => return false,
        };
        let f = forcing(dist, t, seg);
        for i in 0..n - 1 {
            dx[i] = x[i + 1];
        }
        dx[n - 1] = f.d + f.b * u;
        for i in 0..n {
            dx[i] += dist.unmatched.get(i).map_or(0.0, |s| s.eval(t, seg, 100 + i as u64));
            dx[i] += opts.drift * (n - i) as f64 * x[i];
        }
        dx.iter().all(|v| v.is_finite())
    };
    // Inside the settle ball the steps grow fast; keep enough of them to
    // observe persistence before the horizon.
    let streak_cap = 1e-3 * spec.horizon;
    let cap = |t: f64, x: &[f64]| {
        let mut c = breakpoint_cap(period, t).min(surface_cap(fb, x));
        if settles && x.iter().map(|v| v * v).sum::<f64>().sqrt() <= opts.settle_radius {
            c = c.min(streak_cap);
        }
        if let Some(tt) = horizon {
            c = c.min(0.25 * (tt - t));
        }
        c
    };
    let record = |t: f64, x: &[f64]| -> Sample {
        let mut xm = vec![0.0; n];
        noisy(dist, t, t, x, &mut xm);
        let u = control(fb, t, x, &xm).unwrap_or(f64::NAN);
        Sample { t, x: x.to_vec(), u, diag: diagnostics(fb, x, opts.alt_z) }
    };
    let mut samples = vec![record(0.0, x0)];
    let mut streak: Option<(f64, usize)> = None;
    let mut settled = None;
    let mut count = 0usize;
    let end = dopri(rhs, 0.0, x0, t_end, &vec![opts.abs_tol; n], opts, cap, |t, x| {
        count += 1;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if settles && norm <= opts.settle_radius {
            let s = streak.get_or_insert((t, 0));
            s.1 += 1;
            if s.1 >= opts.settle_steps {
                settled = Some(s.0);
                samples.push(record(t, x));
                return Flow::Stop;
            }
        } else {
            streak = None;
        }
        if count % opts.record_every.max(1) == 0 || t >= t_end {
            samples.push(record(t, x));
        }
        Flow::Continue
    });
    let status = match end {
        End::Stopped => Status::SettledAt(settled.expect("stopped runs have settled")),
        End::Horizon => Status::ReachedHorizon,
        End::Failure(t) => Status::StepFailure(t),
    };
    Ok(Trajectory { samples, status })
}

/// PNF run in warped time. `y = D_{ηλ(t)} x` follows
/// `y' = a D_r y + η (J y + (d + b u) e_n) + D_{ηλ} d₂ / λ` with `u = -Kᵀ(y + D_{ηλ} d₁)`,
/// and the gap `T - t` rides along as `w = ln(T - t)`, `w' = -A/(T - t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedTrajectory {
    pub s: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub traj: Trajectory,
}

pub fn integrate_warped(
    spec: &ChainSpec,
    gain: &LinearGain,
    ts: &TimeScale,
    eta: f64,
    dist: &DisturbanceSpec,
    x0: &[f64],
    opts: &IntegrateOptions,
) -> Result<WarpedTrajectory> {
    let n = spec.n;
    if x0.len() != n || gain.n != n {
        return domain(format!("state and gain must have length {n}"));
    }
    dist.validate(spec)?;
    if !(eta > 0.0) {
        return domain("eta must be positive");
    }
    let tt = ts.horizon();
    let dil = |l: f64, v: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = l.powi((n - i) as i32) * v[i];
        }
    };
    let lam0 = eta * ts.lambda(0.0)?;
    let mut z0 = vec![0.0; n + 1];
    dil(lam0, x0, &mut z0[..n]);
    z0[n] = tt.ln();
    let mut buf = vec![0.0; n];
    let mut nz = vec![0.0; n];
    let rhs = |_s: f64, _seg: f64, z: &[f64], dz: &mut [f64]| {
        let gap = z[n].exp();
        let t = tt - gap;
        let lam = ts.lambda_gap(gap);
        let l = eta * lam;
        for i in 0..n {
            buf[i] = dist.noise.get(i).map_or(0.0, |s| s.eval(t, t, 1 + i as u64));
        }
        dil(l, &buf, &mut nz);
        let u = -(0..n).map(|i| gain.k[i] * (z[i] + nz[i])).sum::<f64>();
        let a = ts.a_gap(gap);
        let d = dist.matched.eval(t, t, 0);
        let b = dist.b.eval(t);
        for i in 0..n {
            let next = if i + 1 < n { z[i + 1] } else { d + b * u };
            let d2 = dist.unmatched.get(i).map_or(0.0, |s| s.eval(t, t, 100 + i as u64));
            dz[i] = a * (n - i) as f64 * z[i] + eta * next + l.powi((n - i) as i32) * d2 / lam;
        }
        dz[n] = -ts.big_a_gap(gap) / gap;
        dz.iter().all(|v| v.is_finite())
    };
    let back = |z: &[f64]| -> (f64, Vec<f64>, f64) {
        let gap = z[n].exp();
        let t = tt - gap;
        let l = eta * ts.lambda_gap(gap);
        let mut x = vec![0.0; n];
        dil(1.0 / l, &z[..n], &mut x);
        let mut nzl = vec![0.0; n];
        for (i, sig) in dist.noise.iter().enumerate() {
            nzl[i] = l.powi((n - i) as i32) * sig.eval(t, t, 1 + i as u64);
        }
        let u = -(0..n).map(|i| gain.k[i] * (z[i] + nzl[i])).sum::<f64>();
        (t, x, u)
    };
    let (t0, x0r, u0) = back(&z0);
    let mut out = WarpedTrajectory {
        s: vec![0.0],
        y: vec![z0[..n].to_vec()],
        traj: Trajectory { samples: vec![Sample { t: t0, x: x0r, u: u0, diag: Diagnostics::NONE }], status: Status::ReachedHorizon },
    };
    let mut count = 0usize;
    let s_end = opts.s_max;
    let mut atol = vec![opts.abs_tol; n + 1];
    atol[n] = opts.abs_tol.max(1e-12);
    let end = dopri(rhs, 0.0, &z0, s_end, &atol, opts, |_, _| f64::INFINITY, |s, z| {
        count += 1;
        if count % opts.record_every.max(1) == 0 || s >= s_end {
            let (t, x, u) = back(z);
            out.s.push(s);
            out.y.push(z[..n].to_vec());
            out.traj.samples.push(Sample { t, x, u, diag: Diagnostics::NONE });
        }
        Flow::Continue
    });
    out.traj.status = match end {
        End::Failure(s) => Status::StepFailure(s),
        _ => Status::ReachedHorizon,
    };
    Ok(out)
}

/// One initial state and disturbance realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub x0: Vec<f64>,
    pub dist: DisturbanceSpec,
}

/// Independent runs through [`crate::par::map`]; results keep input order.
pub fn integrate_many(spec: &ChainSpec, fb: &Feedback, runs: &[Run], opts: &IntegrateOptions) -> Vec<Result<Trajectory>> {
    crate::par::map(runs, |r| integrate(spec, fb, &r.dist, &r.x0, opts))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IssMetrics {
    pub limsup_z: f64,
    pub sup_norm: f64,
    pub settle_time: Option<f64>,
}

/// `limsup_Z` is 0 for settled runs, otherwise the max of `Z` over the last
/// `tail_frac` of the samples.
pub fn iss_metrics(traj: &Trajectory, tail_frac: f64) -> Result<IssMetrics> {
    if !(tail_frac > 0.0 && tail_frac <= 1.0) {
        return domain("tail fraction must lie in (0, 1]");
    }
    let len = traj.samples.len();
    let start = ((1.0 - tail_frac) * len as f64).floor() as usize;
    if start >= len {
        return domain("tail window is empty");
    }
    let sup_norm = traj.samples.iter().map(|s| s.x.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let settle_time = traj.settle_time();
    let limsup_z = if settle_time.is_some() {
        0.0
    } else {
        traj.samples[start..].iter().map(|s| s.diag.z).fold(f64::NEG_INFINITY, |a, b| if b.is_nan() { f64::NAN } else { a.max(b) })
    };
    Ok(IssMetrics { limsup_z, sup_norm, settle_time })
}

/// Least-squares nondecreasing fit (pool adjacent violators).
pub fn isotonic(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let w = (na + nb) as f64;
            *blocks.last_mut().unwrap() = ((a * na as f64 + b * nb as f64) / w, na + nb);
        }
    }
    blocks.into_iter().flat_map(|(v, c)| std::iter::repeat_n(v, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pnf::synthesize_linear_gain;
    use crate::timescale::Density;

    fn spec(n: usize, horizon: f64) -> ChainSpec {
        ChainSpec::new(n, horizon, 1.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn zero_dynamics() {
        let tr = integrate(&spec(1, 2.0), &Feedback::Zero, &DisturbanceSpec::default(), &[1.0], &IntegrateOptions::default()).unwrap();
        assert_eq!(tr.status, Status::ReachedHorizon);
        assert!(tr.samples.iter().all(|s| s.x[0] == 1.0));
        assert_eq!(tr.last().t, 2.0);
    }

    #[test]
    fn scalar_pnf_closed_form() {
        let g = synthesize_linear_gain(1, 1.0).unwrap();
        let ts = TimeScale::build(1.0, Density::Constant(1.0)).unwrap();
        let fb = Feedback::Pnf { gain: &g, ts: &ts, eta: 1.0 };
        let tr = integrate(&spec(1, 1.0), &fb, &DisturbanceSpec::default(), &[2.0], &IntegrateOptions::default()).unwrap();
        assert_eq!(tr.status, Status::ReachedHorizon);
        for s in &tr.samples {
            assert!((s.x[0] - 2.0 * (1.0 - s.t)).abs() < 1e-8, "{} {}", s.t, s.x[0]);
        }
    }

    #[test]
    fn noise_is_piecewise_constant_and_bounded() {
        let s = Signal::Noise { amp: 0.5, period: 0.1, seed: 3 };
        let a = s.eval(0.0, 0.01, 2);
        assert_eq!(a, s.eval(0.0, 0.09, 2));
        assert!(a.abs() <= 0.5);
        assert_ne!(a, s.eval(0.0, 0.11, 2));
        assert_ne!(a, s.eval(0.0, 0.01, 3));
    }

    #[test]
    fn determinism() {
        let dist = DisturbanceSpec {
            matched: Signal::Noise { amp: 0.3, period: 0.05, seed: 9 },
            ..Default::default()
        };
        let law = |_: f64, x: &[f64]| -x[0] - 2.0 * x[1];
        let fb = Feedback::Custom(&law);
        let a = integrate(&spec(2, 3.0), &fb, &dist, &[1.0, 0.0], &IntegrateOptions::default()).unwrap();
        let b = integrate(&spec(2, 3.0), &fb, &dist, &[1.0, 0.0], &IntegrateOptions::default()).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn settles_persistently() {
        let law = |_: f64, x: &[f64]| -4.0 * x[0];
        let tr = integrate(&spec(1, 50.0), &Feedback::Custom(&law), &DisturbanceSpec::default(), &[1.0], &IntegrateOptions::default()).unwrap();
        let Status::SettledAt(ts) = tr.status else { panic!("{:?}", tr.status) };
        // First accepted step inside the ball: never early, at most one step late.
        let exact = (1e9f64).ln() / 4.0;
        assert!(ts >= exact - 1e-9 && ts < exact + 0.3, "{ts}");
        let Sample { x, .. } = tr.last();
        assert!(x[0].abs() <= 1e-9);
    }

    #[test]
    fn isotonic_fit() {
        assert_eq!(isotonic(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic(&[3.0, 2.0, 1.0]), vec![2.0, 2.0, 2.0]);
        assert!(isotonic(&[]).is_empty());
    }

    #[test]
    fn linear_hong_matches_matrix_exponential() {
        use nalgebra::{DMatrix, DVector};
        let g = HongGainSet::from_gains(vec![1.0, 2.0]).unwrap();
        let fb = Feedback::Hong { gains: &g, kappa: 0.0 };
        let ex = Exponents::new(2, 0.0);
        // At κ = 0 the law is linear; read its row off the unit vectors.
        let k: Vec<f64> = (0..2).map(|i| control_with(&g.ell, &ex, &[(i == 0) as u8 as f64, (i == 1) as u8 as f64])).collect();
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, k[0], k[1]]);
        let x0 = [0.7, -1.3];
        let tr = integrate(&spec(2, 4.0), &fb, &DisturbanceSpec::default(), &x0, &IntegrateOptions::default()).unwrap();
        for smp in tr.samples.iter().step_by(7) {
            let want = (&a * smp.t).exp() * DVector::from_column_slice(&x0);
            for i in 0..2 {
                assert!((smp.x[i] - want[i]).abs() < 1e-8, "t={} {:?} {:?}", smp.t, smp.x, want);
            }
        }
    }

    #[test]
    fn warped_agrees_with_direct() {
        let g = synthesize_linear_gain(2, 1.0).unwrap();
        let ts = TimeScale::build(1.0, Density::Constant(1.0)).unwrap();
        let eta = 1.5 * crate::pnf::eta_min(&g, &ts);
        let x0 = [0.8, -0.4];
        let sp = spec(2, 1.0);
        let dist = DisturbanceSpec::default();
        for frac in [0.25, 0.5, 0.99] {
            let opts = IntegrateOptions { t_stop_frac: frac, abs_tol: 1e-30, ..Default::default() };
            let direct = integrate(&sp, &Feedback::Pnf { gain: &g, ts: &ts, eta }, &dist, &x0, &opts).unwrap();
            let s_end = ts.s(frac).unwrap();
            let wopts = IntegrateOptions { s_max: s_end, abs_tol: 1e-30, ..Default::default() };
            let w = integrate_warped(&sp, &g, &ts, eta, &dist, &x0, &wopts).unwrap();
            let (a, b) = (&direct.last().x, &w.traj.last().x);
            assert!((w.traj.last().t - frac).abs() < 1e-12);
            let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for i in 0..2 {
                assert!((a[i] - b[i]).abs() <= 1e-6 * scale, "{frac}: {a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn warped_initial_state() {
        let g = synthesize_linear_gain(2, 1.0).unwrap();
        let ts = TimeScale::build(1.0, Density::Constant(1.0)).unwrap();
        let w = integrate_warped(&spec(2, 1.0), &g, &ts, 2.0, &DisturbanceSpec::default(), &[1.0, -1.0], &IntegrateOptions::default()).unwrap();
        assert_eq!(w.y[0], vec![4.0, -2.0]);
        assert_eq!(w.traj.samples[0].x, vec![1.0, -1.0]);
    }
}
