//! Acceptance battery. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails or overruns its time budget.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ptstab_core::homog::{dilate, kappa_bound, WeightVector};
use ptstab_core::hong::{
    away_from_kinks, control_with, decay_residual, hong_lyapunov, synthesize_hong_gains, verify_decay, Exponents, GridConfig,
    HongGainSet, SynthesisConfig,
};
use ptstab_core::linalg::jordan;
use ptstab_core::pnf::{convergence_envelope, eta_min, noise_envelope, synthesize_linear_gain, verify_lmi};
use ptstab_core::ptstab::{build_switch_params, settling_bound, SwitchConfig, SwitchParams};
use ptstab_core::sim::{
    integrate, integrate_many, isotonic, iss_metrics, DisturbanceSpec, Feedback, GainProfile, IntegrateOptions, NoiseMode, Run,
    Signal, Status, Trajectory,
};
use ptstab_core::timescale::{Density, TimeScale};
use ptstab_core::ChainSpec;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Direction uniform on the sphere, norm `r`.
fn random_state(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let s = r / norm(&v);
    v.iter().map(|x| x * s).collect()
}

/// `count` norms log-spaced over `[lo, hi]`, endpoints included.
fn log_norms(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| lo * (hi / lo).powf(k as f64 / (count - 1) as f64)).collect()
}

fn hong(n: usize) -> &'static HongGainSet {
    static G: OnceLock<Vec<HongGainSet>> = OnceLock::new();
    &G.get_or_init(|| (2..=3).map(|n| synthesize_hong_gains(n, &SynthesisConfig::default()).unwrap()).collect())[n - 2]
}

fn switch(n: usize) -> &'static SwitchParams {
    static S: OnceLock<Vec<SwitchParams>> = OnceLock::new();
    &S.get_or_init(|| (2..=3).map(|n| build_switch_params(hong(n), 0.5, &SwitchConfig::default()).unwrap()).collect())[n - 2]
}

fn lmi_suite() -> Outcome {
    let mut worst_end = f64::NEG_INFINITY;
    let mut worst_slope = f64::INFINITY;
    for n in 1..=6 {
        for b in [0.25, 1.0, 4.0] {
            let g = synthesize_linear_gain(n, b).map_err(|e| format!("n={n} b={b}: {e}"))?;
            let r = verify_lmi(&g);
            ensure(r.pass && r.endpoint <= 1e-9 && r.slope >= -1e-9, || format!("n={n} b={b}: {r:?}"))?;
            worst_end = worst_end.max(r.endpoint);
            worst_slope = worst_slope.min(r.slope);
            if n == 1 {
                ensure(g.k == [1.0 / b] && g.s[(0, 0)] == 0.5 && g.rho == 1.0, || format!("n=1 b={b}: K={:?} S={} rho={}", g.k, g.s, g.rho))?;
            }
        }
    }
    Ok(format!("18 gain sets; worst max-eig + rho = {worst_end:.2e}, min slope eig = {worst_slope:.2e}; n=1 gives K=1/b, S=1/2, rho=1"))
}

fn homogeneity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc2);
    let (mut conj, mut hom) = (0.0f64, 0.0f64);
    for trial in 0..1000 {
        let lam = 10f64.powf(rng.random_range(-2.0..2.0));
        let n = rng.random_range(1..=6);
        let d = WeightVector::pnf(n).dilation(lam).map_err(|e| e.to_string())?.to_matrix();
        let di = WeightVector::pnf(n).dilation(1.0 / lam).map_err(|e| e.to_string())?.to_matrix();
        let lhs = &d * jordan(n) * &di;
        let rhs: DMatrix<f64> = jordan(n) * lam;
        conj = conj.max((lhs - &rhs).amax() / rhs.amax());

        let m = 2 + trial % 2;
        let kb = kappa_bound(m);
        let kappa = rng.random_range(-kb..=kb);
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w = WeightVector::hong(m, kappa).map_err(|e| e.to_string())?;
        let v = hong_lyapunov(hong(m), kappa, &x).map_err(|e| e.to_string())?.0;
        let vl = hong_lyapunov(hong(m), kappa, &dilate(&w, lam, &x).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?.0;
        let want = lam.powf(2.0 + kappa) * v;
        hom = hom.max((vl - want).abs() / want.abs());
    }
    ensure(conj <= 1e-10 && hom <= 1e-10, || format!("conjugation {conj:.2e}, homogeneity {hom:.2e}"))?;
    Ok(format!("1000 draws; max relative error: conjugation {conj:.2e}, V homogeneity {hom:.2e}"))
}

fn decay_certificate() -> Outcome {
    let mut msg = Vec::new();
    for n in [2, 3] {
        let g = hong(n);
        ensure(g.c > 0.0, || format!("n={n}: C = {}", g.c))?;
        let grid = GridConfig { kappa_count: 11, samples_per_kappa: 1000, seed: 0xacc3 + n as u64 };
        let base = verify_decay(g, &grid).map_err(|e| e.to_string())?;
        ensure(base.samples >= 10_000, || format!("n={n}: only {} samples", base.samples))?;
        let resid = decay_residual(g, g.c, &grid).map_err(|e| e.to_string())?;
        ensure(resid <= 0.0, || format!("n={n}: max Vdot + C V^(1+a) = {resid:e}"))?;
        let fine = verify_decay(g, &grid.refined(10)).map_err(|e| e.to_string())?;
        let drift = ((fine.c - base.c) / base.c).abs();
        ensure(drift <= 0.1, || format!("n={n}: sampled C moves {:.1}% under refinement", 100.0 * drift))?;
        msg.push(format!("n={n}: C={:.4}, residual {resid:.2e} over {} samples, refinement shift {:.2}%", g.c, base.samples, 100.0 * drift));
    }
    Ok(msg.join("; "))
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc4);
    let mut worst = 0.0f64;
    for n in [2, 3] {
        let g = hong(n);
        let k0 = switch(n).kappa0;
        for kappa in [-k0, 0.0, k0] {
            let ex = Exponents::new(n, kappa);
            let mut done = 0;
            while done < 100 {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
                if !away_from_kinks(&g.ell, &ex, &x) {
                    continue;
                }
                let grad = hong_lyapunov(g, kappa, &x).map_err(|e| e.to_string())?.1;
                let h = 1e-6;
                for i in 0..n {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (hong_lyapunov(g, kappa, &xp).unwrap().0 - hong_lyapunov(g, kappa, &xm).unwrap().0) / (2.0 * h);
                    worst = worst.max((fd - grad[i]).abs() / norm(&grad));
                }
                done += 1;
            }
        }
    }
    ensure(worst <= 1e-5, || format!("worst relative gradient error {worst:.2e}"))?;
    Ok(format!("600 points; worst |fd - grad| / |grad| = {worst:.2e}"))
}

fn oracles() -> Outcome {
    let g = synthesize_linear_gain(1, 1.0).map_err(|e| e.to_string())?;
    ensure(g.k == [1.0], || format!("K = {:?}", g.k))?;
    let ts = TimeScale::build(1.0, Density::Constant(1.0)).map_err(|e| e.to_string())?;
    let spec = ChainSpec::new(1, 1.0, 1.0, 1.0, 0.0).map_err(|e| e.to_string())?;
    let opts = IntegrateOptions::default();
    let tr = integrate(&spec, &Feedback::Pnf { gain: &g, ts: &ts, eta: 1.0 }, &DisturbanceSpec::default(), &[2.0], &opts)
        .map_err(|e| e.to_string())?;
    let e1 = tr.samples.iter().map(|s| (s.x[0] - 2.0 * (1.0 - s.t)).abs()).fold(0.0, f64::max);

    let h = hong(2);
    let ex = Exponents::new(2, 0.0);
    let a = nalgebra::Matrix2::new(0.0, 1.0, control_with(&h.ell, &ex, &[1.0, 0.0]), control_with(&h.ell, &ex, &[0.0, 1.0]));
    let x0 = nalgebra::Vector2::new(2.0, -1.0);
    let spec2 = ChainSpec::new(2, 10.0, 1.0, 1.0, 0.0).map_err(|e| e.to_string())?;
    let tr = integrate(&spec2, &Feedback::Hong { gains: h, kappa: 0.0 }, &DisturbanceSpec::default(), &[2.0, -1.0], &opts)
        .map_err(|e| e.to_string())?;
    let e2 = tr
        .samples
        .iter()
        .map(|s| {
            let want = (a * s.t).exp() * x0;
            (s.x[0] - want[0]).abs().max((s.x[1] - want[1]).abs())
        })
        .fold(0.0, f64::max);
    ensure(e1 <= 1e-8 && e2 <= 1e-8, || format!("scalar error {e1:.2e}, matrix-exponential error {e2:.2e}"))?;
    Ok(format!("scalar closed form error {e1:.2e}; linear n=2 vs expm error {e2:.2e}"))
}

fn pnf_envelope() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc6);
    let ts = TimeScale::build(1.0, Density::Constant(1.0)).map_err(|e| e.to_string())?;
    let opts = IntegrateOptions { t_stop_frac: 0.999, ..Default::default() };
    let (mut tightest, mut worst_final) = (0.0f64, 0.0f64);
    for n in [2, 3] {
        let g = synthesize_linear_gain(n, 1.0).map_err(|e| e.to_string())?;
        let eta = eta_min(&g, &ts);
        let spec = ChainSpec::new(n, 1.0, 1.0, 1.0, 1.0).map_err(|e| e.to_string())?;
        let runs: Vec<Run> = (0..50u64)
            .map(|k| {
                let r = 10f64.powf(rng.random_range(-1.0..1.0));
                let matched = match k % 6 {
                    0 => Signal::Noise { amp: 1.0, period: 1e-4, seed: k },
                    2 => Signal::Sine { amp: 1.0, freq: 3.0, phase: k as f64 },
                    4 => Signal::Constant(if k % 4 == 0 { 1.0 } else { -1.0 }),
                    _ => Signal::Zero,
                };
                Run { x0: random_state(&mut rng, n, r), dist: DisturbanceSpec { matched, ..Default::default() } }
            })
            .collect();
        let out = integrate_many(&spec, &Feedback::Pnf { gain: &g, ts: &ts, eta }, &runs, &opts);
        for (k, (run, tr)) in runs.iter().zip(out).enumerate() {
            let tr = tr.map_err(|e| format!("n={n} run {k}: {e}"))?;
            ensure(tr.status == Status::ReachedHorizon, || format!("n={n} run {k}: {:?}", tr.status))?;
            let x0n = norm(&run.x0);
            let d_sup = run.dist.matched.bound();
            for s in &tr.samples {
                let env = convergence_envelope(&g, &ts, eta, x0n, d_sup, s.t).map_err(|e| e.to_string())?;
                for i in 0..n {
                    tightest = tightest.max(s.x[i].abs() / env[i]);
                    ensure(s.x[i].abs() <= env[i], || format!("n={n} run {k} t={}: |x{}|={} > {}", s.t, i + 1, s.x[i].abs(), env[i]))?;
                }
            }
            if d_sup == 0.0 {
                let ratio = norm(&tr.last().x) / x0n;
                worst_final = worst_final.max(ratio);
                ensure(ratio <= 1e-3, || format!("n={n} run {k}: |x(0.999T)|/|x0| = {ratio:e}"))?;
            }
        }
    }
    Ok(format!("100 runs; max |x_i|/envelope = {tightest:.3}, disturbance-free max |x(0.999T)|/|x0| = {worst_final:.2e}"))
}

/// Searches `d₁ = c e_j` over `c = ±2^k 1e-3` for the smallest constant that
/// pushes `|x₂(0.99T)|` past ten times the noise-free peak.
fn noise_blow_up() -> Outcome {
    let g = synthesize_linear_gain(2, 1.0).map_err(|e| e.to_string())?;
    let ts = TimeScale::build(1.0, Density::Constant(1.0)).map_err(|e| e.to_string())?;
    let eta = eta_min(&g, &ts);
    let spec = ChainSpec::new(2, 1.0, 1.0, 1.0, 0.0).map_err(|e| e.to_string())?;
    let opts = IntegrateOptions { t_stop_frac: 0.99, ..Default::default() };
    let fb = Feedback::Pnf { gain: &g, ts: &ts, eta };
    let x0 = [1.0, 0.0];
    let clean = integrate(&spec, &fb, &DisturbanceSpec::default(), &x0, &opts).map_err(|e| e.to_string())?;
    let peak = clean.samples.iter().map(|s| s.x[1].abs()).fold(0.0, f64::max);
    for k in 0..25 {
        let c = 1e-3 * 2f64.powi(k);
        for (j, sign) in [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)] {
            let mut noise = vec![Signal::Zero; 2];
            noise[j] = Signal::Constant(sign * c);
            let dist = DisturbanceSpec { noise, ..Default::default() };
            let tr = integrate(&spec, &fb, &dist, &x0, &opts).map_err(|e| e.to_string())?;
            let end = tr.last();
            if (end.t - 0.99).abs() > 1e-12 || end.x[1].abs() <= 10.0 * peak {
                continue;
            }
            let mut slack = f64::INFINITY;
            for s in &tr.samples {
                let env = noise_envelope(&g, &ts, eta, norm(&x0), 0.0, c, 1.0, s.t).map_err(|e| e.to_string())?;
                for i in 0..2 {
                    slack = slack.min(env[i] / s.x[i].abs());
                }
            }
            ensure(slack >= 1.0, || format!("d1 = {} e{}: envelope violated (ratio {slack})", sign * c, j + 1))?;
            return Ok(format!(
                "d1 = {:+.3} e{}: |x2(0.99T)| = {:.3} vs noise-free peak {:.4} ({:.1}x); envelope slack >= {:.2}",
                sign * c,
                j + 1,
                end.x[1].abs(),
                peak,
                end.x[1].abs() / peak,
                slack
            ));
        }
    }
    Err(format!("no constant d1 up to {:.0} found; noise-free peak {peak}", 1e-3 * 2f64.powi(24)))
}

fn settle_times(out: Vec<ptstab_core::Result<Trajectory>>) -> Result<Vec<Option<f64>>, String> {
    out.into_iter().map(|t| t.map(|t| t.settle_time()).map_err(|e| e.to_string())).collect()
}

fn fixed_time() -> Outcome {
    let (g, sp) = (hong(2), switch(2));
    let bound = settling_bound(g, sp);
    let spec = ChainSpec::new(2, bound, 1.0, 1.0, 0.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc8);
    let runs: Vec<Run> =
        log_norms(1e-2, 1e3, 200).into_iter().map(|r| Run { x0: random_state(&mut rng, 2, r), dist: DisturbanceSpec::default() }).collect();
    let fb = Feedback::FixedTime { gains: g, sp, noise: NoiseMode::SwitchOnly };
    let times = settle_times(integrate_many(&spec, &fb, &runs, &IntegrateOptions::default()))?;
    let mut worst = 0.0f64;
    for (k, t) in times.iter().enumerate() {
        let t = t.ok_or_else(|| format!("run {k} (|x0| = {:.3e}) never settled", norm(&runs[k].x0)))?;
        ensure(t <= bound, || format!("run {k}: settled at {t} > {bound}"))?;
        worst = worst.max(t);
    }
    Ok(format!("200 runs settle by t = {worst:.2}; bound {bound:.1}"))
}

fn prescribed_time() -> Outcome {
    let (g, sp) = (hong(2), switch(2));
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc9);
    let x0s: Vec<Vec<f64>> = log_norms(1e-2, 1e3, 50).into_iter().map(|r| random_state(&mut rng, 2, r)).collect();
    let runs: Vec<Run> = x0s.iter().map(|x| Run { x0: x.clone(), dist: DisturbanceSpec::default() }).collect();
    let mut by_target = Vec::new();
    for target in [2.0, 1.0, 0.5] {
        let spec = ChainSpec::new(2, 2.0 * target, 1.0, 1.0, 0.0).map_err(|e| e.to_string())?;
        let fb = Feedback::Prescribed { gains: g, sp, t_target: target, noise: NoiseMode::SwitchOnly };
        let times = settle_times(integrate_many(&spec, &fb, &runs, &IntegrateOptions::default()))?;
        let times: Vec<f64> = times
            .into_iter()
            .enumerate()
            .map(|(k, t)| t.ok_or_else(|| format!("T_target={target}: run {k} never settled")))
            .collect::<Result<_, _>>()?;
        let worst = times.iter().copied().fold(0.0, f64::max);
        ensure(worst <= target, || format!("T_target={target}: settle time {worst}"))?;
        by_target.push((target, worst, times));
    }
    for w in by_target.windows(2) {
        for k in 0..x0s.len() {
            let (a, b) = (w[0].2[k], w[1].2[k]);
            ensure(b <= a, || format!("run {k}: halving T_target {} -> {} raised settle time {a} -> {b}", w[0].0, w[1].0))?;
        }
    }
    let worst: Vec<String> = by_target.iter().map(|(t, w, _)| format!("T={t}: {w:.4}")).collect();
    Ok(format!("150 runs settled; worst settle times {}; monotone in T_target for every x0", worst.join(", ")))
}

fn matched_robust() -> Outcome {
    const EPS: f64 = 1e-3;
    let g = hong(2);
    let sp = build_switch_params(g, 0.5, &SwitchConfig { b_ratio: 3.0, ..SwitchConfig::default() }).map_err(|e| e.to_string())?;
    let spec = ChainSpec::new(2, 10.0, 1.0, 3.0, 1.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xacca);
    let runs: Vec<Run> = log_norms(0.1, 100.0, 50)
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            let matched = if k % 2 == 0 {
                Signal::Noise { amp: 1.0, period: 0.01, seed: k as u64 }
            } else {
                Signal::Sine { amp: 1.0, freq: 0.7, phase: k as f64 }
            };
            let b = GainProfile::Sine { lo: 1.0, hi: 3.0, freq: 0.3 };
            Run { x0: random_state(&mut rng, 2, r), dist: DisturbanceSpec { matched, b, ..Default::default() } }
        })
        .collect();
    let fb = Feedback::MatchedRobust { gains: g, sp: &sp, spec, reg_eps: EPS };
    let opts = IntegrateOptions { drift: 0.01, ..Default::default() };
    let (mut last_entry, mut worst_after) = (0.0f64, 0.0f64);
    for (k, tr) in integrate_many(&spec, &fb, &runs, &opts).into_iter().enumerate() {
        let tr = tr.map_err(|e| format!("run {k}: {e}"))?;
        ensure(!matches!(tr.status, Status::StepFailure(_)), || format!("run {k}: {:?}", tr.status))?;
        let entry = tr.samples.iter().position(|s| s.diag.vkm <= 1.0).ok_or_else(|| format!("run {k} never reaches S2"))?;
        last_entry = last_entry.max(tr.samples[entry].t);
        let after = tr.samples[entry..].iter().map(|s| s.diag.vkm).fold(0.0, f64::max);
        worst_after = worst_after.max(after);
        ensure(after <= 1.0 + 10.0 * EPS, || format!("run {k}: V- reaches {after} after entering S2"))?;
    }
    Ok(format!("50 runs enter S2 by t = {last_entry:.3}; max V- afterwards {worst_after:.6} (limit {})", 1.0 + 10.0 * EPS))
}

fn iss_battery() -> Outcome {
    let (g, sp) = (hong(2), switch(2));
    let fb = Feedback::FixedTime { gains: g, sp, noise: NoiseMode::SwitchOnly };
    let spec = ChainSpec::new(2, 40.0, 1.0, 1.0, 0.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xaccb);
    let amps = [0.0, 0.01, 0.1, 0.5, 1.0];
    let x0s: Vec<Vec<f64>> = log_norms(0.1, 10.0, 8).into_iter().map(|r| random_state(&mut rng, 2, r)).collect();
    let mut maxima = Vec::new();
    for (a, &amp) in amps.iter().enumerate() {
        let runs: Vec<Run> = x0s
            .iter()
            .enumerate()
            .map(|(k, x0)| {
                let nz = |c| Signal::Noise { amp, period: 0.05, seed: 1000 * a as u64 + 10 * k as u64 + c };
                Run { x0: x0.clone(), dist: DisturbanceSpec { noise: vec![nz(1), nz(2)], unmatched: vec![nz(3), nz(4)], ..Default::default() } }
            })
            .collect();
        let mut worst = 0.0f64;
        for (k, tr) in integrate_many(&spec, &fb, &runs, &IntegrateOptions::default()).into_iter().enumerate() {
            let tr = tr.map_err(|e| format!("amp {amp} run {k}: {e}"))?;
            let m = iss_metrics(&tr, 0.25).map_err(|e| e.to_string())?;
            ensure(m.limsup_z.is_finite(), || format!("amp {amp} run {k}: limsup_Z = {}", m.limsup_z))?;
            if amp == 0.0 {
                ensure(m.limsup_z == 0.0, || format!("run {k}: limsup_Z = {} without disturbance", m.limsup_z))?;
            }
            worst = worst.max(m.limsup_z);
        }
        maxima.push(worst);
    }
    let fit = isotonic(&maxima);
    ensure(fit.windows(2).all(|w| w[0] <= w[1]), || format!("fit {fit:?}"))?;
    let raw_monotone = maxima.windows(2).all(|w| w[0] <= w[1]);

    // Matched-only: the state enters a residual ball at a time that does not
    // grow with |x0|.
    let mspec = ChainSpec::new(2, 100.0, 1.0, 1.0, 0.0).map_err(|e| e.to_string())?;
    let signals = [Signal::Noise { amp: 0.5, period: 0.05, seed: 77 }, Signal::Constant(0.5), Signal::Sine { amp: 0.5, freq: 0.2, phase: 0.0 }];
    let runs: Vec<Run> = log_norms(1e-2, 1e3, 12)
        .into_iter()
        .enumerate()
        .map(|(k, r)| Run {
            x0: random_state(&mut rng, 2, r),
            dist: DisturbanceSpec { unmatched: vec![Signal::Zero, signals[k % 3]], ..Default::default() },
        })
        .collect();
    let trs: Vec<Trajectory> = integrate_many(&mspec, &fb, &runs, &IntegrateOptions::default())
        .into_iter()
        .collect::<ptstab_core::Result<_>>()
        .map_err(|e| e.to_string())?;
    let half = mspec.horizon / 2.0;
    let radius = 2.0 * trs.iter().flat_map(|t| t.samples.iter().filter(|s| s.t >= half).map(|s| norm(&s.x))).fold(0.0, f64::max);
    let limit = settling_bound(g, sp).min(half);
    let mut worst_entry = 0.0f64;
    for (k, tr) in trs.iter().enumerate() {
        ensure(tr.last().t >= mspec.horizon * (1.0 - 1e-12) || tr.settle_time().is_some(), || format!("matched run {k}: {:?}", tr.status))?;
        let entry = tr.samples.iter().rev().find(|s| norm(&s.x) > radius).map_or(0.0, |s| s.t);
        worst_entry = worst_entry.max(entry);
        ensure(entry <= limit, || format!("matched run {k} (|x0| = {:.2e}) enters the ball at {entry} > {limit}", norm(&runs[k].x0)))?;
    }
    let shown: Vec<String> = amps.iter().zip(&maxima).map(|(a, m)| format!("{a}:{m:.2e}")).collect();
    Ok(format!(
        "max limsup_Z by amplitude {} (raw {}monotone); matched-only: ball radius {radius:.3} entered by t = {worst_entry:.2} for |x0| up to 1e3",
        shown.join(" "),
        if raw_monotone { "" } else { "not " }
    ))
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut snapshots = Vec::new();
    for name in ["first", "second"] {
        let dir = root.path().join(name);
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let d = dir.to_str().unwrap();
        let cfg = format!(
            "plant.n = 2\nplant.horizon = 20\ncontroller.kind = fixed_time\ncontroller.gains = h2.txt\n\
             disturbance.d1 = noise:0.05\ndisturbance.d2 = noise:0.05\ndisturbance.noise_period = 0.05\n\
             runs.count = 4\nruns.seed = 5\nruns.x0_max = 100\noutput.dir = out\n"
        );
        fs::write(dir.join("exp.cfg"), cfg).map_err(|e| e.to_string())?;
        let cmds: [&[&str]; 4] = [
            &["synthesize", "--kind", "pnf", "--n", "3", "--b-lower", "0.5", "--out", &format!("{d}/p3.txt")],
            &["synthesize", "--kind", "hong", "--n", "2", "--b-lower", "1", "--seed", "3", "--out", &format!("{d}/h2.txt")],
            &["simulate", "--config", &format!("{d}/exp.cfg")],
            &["sweep", "--config", &format!("{d}/exp.cfg"), "--param", "d2_amp", "--values", "0,0.1,1"],
        ];
        for args in cmds {
            let mut all = vec!["ptstab"];
            all.extend_from_slice(args);
            let (mut out, mut err) = (Vec::new(), Vec::new());
            let code = ptstab_cli::run_with(all, &mut out, &mut err);
            ensure(code == 0, || format!("{args:?} exited {code}: {}", String::from_utf8_lossy(&err)))?;
        }
        snapshots.push(snapshot(&dir)?);
    }
    ensure(snapshots[0] == snapshots[1], || "outputs differ between invocations".into())?;
    let bytes: usize = snapshots[0].iter().map(|(_, b)| b.len()).sum();
    Ok(format!("{} files ({bytes} bytes) byte-identical across two invocations", snapshots[0].len()))
}

/// Relative path and bytes of every file under `dir`, sorted.
fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).map_err(|e| e.to_string())?));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn main() {
    let criteria: [(&str, u64, fn() -> Outcome); 12] = [
        ("LMI certificate suite", 10, lmi_suite),
        ("homogeneity identities", 5, homogeneity),
        ("Hong decay certificate", 120, decay_certificate),
        ("gradient checks", 10, gradients),
        ("oracle equivalence", 5, oracles),
        ("PNF envelope domination", 120, pnf_envelope),
        ("noise blow-up fixture", 60, noise_blow_up),
        ("fixed-time settling", 300, fixed_time),
        ("prescribed-time rescaling", 180, prescribed_time),
        ("matched-robust feedback", 120, matched_robust),
        ("ISS battery", 300, iss_battery),
        ("determinism", 60, determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = f();
        let took = start.elapsed();
        let res = match res {
            Ok(msg) if took > Duration::from_secs(*limit) => Err(format!("{msg}; over the time budget")),
            r => r,
        };
        let (tag, msg) = match &res {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        if res.is_err() {
            failed += 1;
        }
        println!("{tag} {:>2} {name} ({:.2} s, limit {limit} s): {msg}", i + 1, took.as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
