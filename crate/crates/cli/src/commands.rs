use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ptstab_core::hong::{decay_residual, synthesize_hong_gains, verify_decay, GridConfig, HongGainSet, SynthesisConfig};
use ptstab_core::pnf::{eta_min, synthesize_linear_gain, verify_lmi, LinearGain};
use ptstab_core::ptstab::{build_switch_params, check_all, SwitchConfig, SwitchParams};
use ptstab_core::sim::{
    integrate, integrate_warped, isotonic, iss_metrics, DisturbanceSpec, Feedback, Signal, Status, Trajectory,
};
use ptstab_core::timescale::TimeScale;
use ptstab_core::{par, ChainSpec, Error};

use crate::config::{Channels, ControllerKind, ExperimentConfig};
use crate::gainfile::GainFile;
use crate::CliError;

fn core_err(e: Error) -> CliError {
    match e {
        Error::Domain(m) => CliError::Input(m),
        Error::Synthesis(m) => CliError::Failure(m),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Input(format!("csv: {e}"))
}

pub fn num(v: f64) -> String {
    format!("{v:e}")
}

pub struct SynthesizeArgs {
    pub kind: String,
    pub n: usize,
    pub b_lower: f64,
    pub b_upper: Option<f64>,
    pub seed: u64,
    pub m: f64,
    pub out: PathBuf,
}

pub fn synthesize(a: &SynthesizeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(a.b_lower > 0.0 && a.b_lower.is_finite()) {
        return Err(CliError::Usage(format!("--b-lower must be positive and finite, got {}", a.b_lower)));
    }
    let file = match a.kind.as_str() {
        "pnf" => GainFile::Pnf(synthesize_linear_gain(a.n, a.b_lower).map_err(core_err)?),
        "hong" => {
            let b_upper = a.b_upper.unwrap_or(a.b_lower);
            if !(b_upper >= a.b_lower && b_upper.is_finite()) {
                return Err(CliError::Usage(format!("--b-upper must be finite and at least --b-lower, got {b_upper}")));
            }
            if !(a.m > 0.0 && a.m < 1.0) {
                return Err(CliError::Usage(format!("--m must lie in (0, 1), got {}", a.m)));
            }
            let cfg = SynthesisConfig { seed: a.seed, ..SynthesisConfig::default() };
            let gains = synthesize_hong_gains(a.n, &cfg).map_err(core_err)?;
            let switch_cfg = SwitchConfig { seed: a.seed, b_ratio: b_upper / a.b_lower, ..SwitchConfig::default() };
            let switch = build_switch_params(&gains, a.m, &switch_cfg).map_err(core_err)?;
            GainFile::Hong { gains, switch, b_lower: a.b_lower, switch_cfg }
        }
        k => return Err(CliError::Usage(format!("--kind must be pnf or hong, got {k:?}"))),
    };
    fs::write(&a.out, file.to_text()).map_err(io_err(&a.out))?;
    let _ = writeln!(out, "wrote {} gain file for n={} to {}", a.kind, a.n, a.out.display());
    Ok(())
}

pub fn load_gains(path: &Path) -> Result<GainFile, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    GainFile::parse(&text)
}

/// One row of the verification table; passes when `value ≤ bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
}

impl Check {
    fn new(name: &str, value: f64, bound: f64) -> Self {
        Check { name: name.replace(' ', "_"), value: value + 0.0, bound }
    }

    pub fn pass(&self) -> bool {
        self.value <= self.bound
    }
}

pub fn verification_checks(file: &GainFile, grid_scale: usize) -> Result<Vec<Check>, CliError> {
    let scale = grid_scale.max(1);
    let mut checks = Vec::new();
    match file {
        GainFile::Pnf(g) => {
            let r = verify_lmi(g);
            checks.push(Check::new("lmi_endpoint", r.endpoint, 1e-9));
            checks.push(Check::new("lmi_slope_psd", -r.slope, 1e-9));
            let s_min = g.s.clone().symmetric_eigenvalues().min();
            checks.push(Check::new("s_positive_definite", -s_min, 0.0));
        }
        GainFile::Hong { gains, switch, switch_cfg, .. } => {
            let cert = &gains.certificate;
            let grid = GridConfig { kappa_count: cert.kappa_count, samples_per_kappa: cert.samples_per_kappa, seed: cert.verify_seed };
            let base = verify_decay(gains, &grid).map_err(core_err)?;
            checks.push(Check::new("decay_constant", gains.c, base.c));
            let fine = if scale > 1 { grid.refined(scale) } else { grid };
            let resid = decay_residual(gains, gains.c, &fine).map_err(core_err)?;
            checks.push(Check::new("decay_residual", resid, 0.0));
            if scale > 1 {
                let refined = verify_decay(gains, &fine).map_err(core_err)?;
                checks.push(Check::new("decay_refinement", ((refined.c - base.c) / base.c).abs(), 0.1));
            }
            checks.push(Check::new("switch_uses_c", (switch.c - gains.c).abs(), 0.0));
            let cfg = SwitchConfig { samples: switch_cfg.samples * scale, ..*switch_cfg };
            for r in check_all(gains, switch, &cfg).map_err(core_err)? {
                checks.push(Check::new(r.name, r.value, r.bound));
            }
        }
    }
    Ok(checks)
}

pub fn verify(path: &Path, grid_scale: usize, out: &mut dyn Write) -> Result<bool, CliError> {
    let file = load_gains(path)?;
    let checks = verification_checks(&file, grid_scale)?;
    let _ = writeln!(out, "{:<22} {:>14} {:>14} {:>14}  result", "check", "value", "bound", "margin");
    for c in &checks {
        let _ = writeln!(
            out,
            "{:<22} {:>14.6e} {:>14.6e} {:>14.6e}  {}",
            c.name,
            c.value,
            c.bound,
            c.bound - c.value,
            if c.pass() { "pass" } else { "FAIL" }
        );
    }
    Ok(checks.iter().all(Check::pass))
}

/// Owned controller data a [`Feedback`] borrows from.
pub enum Controller {
    Pnf { gain: LinearGain, ts: TimeScale, eta: f64 },
    Hong { gains: HongGainSet, kappa: f64 },
    Switching { gains: HongGainSet, sp: SwitchParams },
}

pub fn build_controller(cfg: &ExperimentConfig) -> Result<Controller, CliError> {
    let c = &cfg.controller;
    let spec = &cfg.spec;
    let file = c.gains.as_deref().map(load_gains).transpose()?;
    if let Some(f) = &file {
        if f.n() != spec.n {
            return Err(CliError::Config(vec![format!("controller.gains: file has n={}, plant.n is {}", f.n(), spec.n)]));
        }
    }
    match (c.kind, file) {
        (ControllerKind::Pnf, None) => {
            let gain = synthesize_linear_gain(spec.n, spec.b_lower).map_err(core_err)?;
            pnf_controller(cfg, gain)
        }
        (ControllerKind::Pnf, Some(GainFile::Pnf(gain))) => {
            if gain.b_lower > spec.b_lower {
                return Err(CliError::Config(vec![format!(
                    "controller.gains: certified for b >= {}, plant.b_lower is {}",
                    gain.b_lower, spec.b_lower
                )]));
            }
            pnf_controller(cfg, gain)
        }
        (ControllerKind::Hong, Some(GainFile::Hong { gains, .. })) => {
            let (lo, hi) = gains.kappa_range();
            if !(c.kappa > lo && c.kappa < hi) {
                return Err(CliError::Config(vec![format!("controller.kappa: must lie in ({lo}, {hi})")]));
            }
            Ok(Controller::Hong { gains: gains.adapted(spec.b_lower), kappa: c.kappa })
        }
        (k, Some(GainFile::Hong { gains, switch, .. })) if k.needs_switch() => {
            let ratio = spec.b_upper / spec.b_lower;
            if k == ControllerKind::Robust && ratio > switch.b_ratio * (1.0 + 1e-12) {
                return Err(CliError::Config(vec![format!(
                    "controller.gains: switch parameters cover b_upper/b_lower <= {}, plant has {ratio}",
                    switch.b_ratio
                )]));
            }
            let gains = if k == ControllerKind::Robust { gains } else { gains.adapted(spec.b_lower) };
            Ok(Controller::Switching { gains, sp: switch })
        }
        _ => Err(CliError::Config(vec!["controller.gains: file kind does not match controller.kind".into()])),
    }
}

fn pnf_controller(cfg: &ExperimentConfig, gain: LinearGain) -> Result<Controller, CliError> {
    let ts = TimeScale::build(cfg.spec.horizon, cfg.controller.density).map_err(core_err)?;
    let floor = eta_min(&gain, &ts);
    let eta = cfg.controller.eta.unwrap_or(floor);
    if eta < floor {
        return Err(CliError::Config(vec![format!("controller.eta: {eta} is below the certified minimum {floor}")]));
    }
    Ok(Controller::Pnf { gain, ts, eta })
}

impl Controller {
    pub fn feedback<'a>(&'a self, cfg: &ExperimentConfig) -> Feedback<'a> {
        let c = &cfg.controller;
        match self {
            Controller::Pnf { gain, ts, eta } => Feedback::Pnf { gain, ts, eta: *eta },
            Controller::Hong { gains, kappa } => Feedback::Hong { gains, kappa: *kappa },
            Controller::Switching { gains, sp } => match c.kind {
                ControllerKind::Prescribed => Feedback::Prescribed { gains, sp, t_target: c.t_target, noise: c.noise_mode },
                ControllerKind::Robust => Feedback::MatchedRobust { gains, sp, spec: cfg.spec, reg_eps: c.reg_eps },
                _ => Feedback::FixedTime { gains, sp, noise: c.noise_mode },
            },
        }
    }
}

pub fn run_seed(base: u64, k: usize) -> u64 {
    base.wrapping_add(k as u64)
}

/// Direction uniform on the sphere, norm log-uniform on `[x0_min, x0_max]`.
pub fn initial_state(cfg: &ExperimentConfig, seed: u64) -> Vec<f64> {
    if let Some(x) = &cfg.runs.x0 {
        return x.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7830_0000_0000);
    let n = cfg.spec.n;
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (lo, hi) = (cfg.runs.x0_min.ln(), cfg.runs.x0_max.ln());
    let r = (lo + (hi - lo) * rng.random::<f64>()).exp();
    for x in &mut v {
        *x *= r / norm;
    }
    v
}

pub fn disturbance(cfg: &ExperimentConfig, seed: u64) -> DisturbanceSpec {
    let d = &cfg.disturbance;
    let n = cfg.spec.n;
    let p = d.noise_period;
    let noise = if d.d1.is_zero() { vec![] } else { vec![d.d1.instantiate(p, seed); n] };
    let unmatched = if d.d2.is_zero() {
        vec![]
    } else {
        let s = d.d2.instantiate(p, seed);
        match d.d2_channels {
            Channels::All => vec![s; n],
            Channels::Last => (0..n).map(|i| if i + 1 == n { s } else { Signal::Zero }).collect(),
        }
    };
    DisturbanceSpec { matched: d.matched.instantiate(p, seed), noise, unmatched, b: d.b }
}

pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub traj: Trajectory,
}

pub fn run_batch(cfg: &ExperimentConfig) -> Result<Vec<RunResult>, CliError> {
    let bound = cfg.disturbance.matched.instantiate(1.0, 0).bound();
    if bound > cfg.spec.d_bound {
        return Err(CliError::Config(vec![format!(
            "disturbance.matched: amplitude {bound} exceeds plant.d_bound {}",
            cfg.spec.d_bound
        )]));
    }
    let ctrl = build_controller(cfg)?;
    let fb = ctrl.feedback(cfg);
    let spec: ChainSpec = cfg.spec;
    let idx: Vec<usize> = (0..cfg.runs.count).collect();
    let results = par::map(&idx, |&k| {
        let seed = run_seed(cfg.runs.seed, k);
        let x0 = initial_state(cfg, seed);
        let dist = disturbance(cfg, seed);
        let traj = match (&ctrl, cfg.sim.warped) {
            (Controller::Pnf { gain, ts, eta }, true) => {
                integrate_warped(&spec, gain, ts, *eta, &dist, &x0, &cfg.sim.opts).map(|w| w.traj)
            }
            _ => integrate(&spec, &fb, &dist, &x0, &cfg.sim.opts),
        };
        traj.map(|traj| RunResult { run: k, seed, traj })
    });
    results.into_iter().map(|r| r.map_err(core_err)).collect()
}

fn writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    let f = File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(f))
}

pub fn status_name(s: &Status) -> &'static str {
    match s {
        Status::ReachedHorizon => "reached_horizon",
        Status::SettledAt(_) => "settled",
        Status::StepFailure(_) => "step_failure",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_trajectory(path: &Path, traj: &Trajectory, n: usize) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let mut head = vec!["t".to_string()];
    head.extend((1..=n).map(|i| format!("x{i}")));
    head.extend(["u", "V0", "Vkp", "Vkm", "kappa", "Z"].map(String::from));
    w.write_record(&head).map_err(csv_err)?;
    for s in &traj.samples {
        let d = &s.diag;
        let mut row = vec![num(s.t)];
        row.extend(s.x.iter().map(|v| num(*v)));
        row.extend([s.u, d.v0, d.vkp, d.vkm, d.kappa, d.z].map(num));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub struct SimulateArgs {
    pub config: PathBuf,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
}

fn load_config(path: &Path, runs: Option<usize>, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(r) = runs {
        if r == 0 {
            return Err(CliError::Usage("--runs must be at least 1".into()));
        }
        cfg.runs.count = r;
    }
    if let Some(s) = seed {
        cfg.runs.seed = s;
    }
    Ok(cfg)
}

pub fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(&a.config, a.runs, a.seed)?;
    let results = run_batch(&cfg)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let summary_path = dir.join("summary.csv");
    let mut summary = writer(&summary_path)?;
    summary.write_record(["run", "seed", "status", "settle_time", "sup_norm", "limsup_Z"]).map_err(csv_err)?;
    for r in &results {
        write_trajectory(&dir.join(format!("run_{}.csv", r.run)), &r.traj, cfg.spec.n)?;
        let m = iss_metrics(&r.traj, cfg.sim.tail_frac).map_err(core_err)?;
        summary
            .write_record([
                r.run.to_string(),
                r.seed.to_string(),
                status_name(&r.traj.status).into(),
                opt(m.settle_time),
                num(m.sup_norm),
                num(m.limsup_z),
            ])
            .map_err(csv_err)?;
    }
    summary.flush().map_err(io_err(&summary_path))?;
    let _ = writeln!(out, "wrote {} runs to {}", results.len(), dir.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    D1Amp,
    D2Amp,
    Eta,
    TTarget,
}

impl SweepParam {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "d1_amp" => SweepParam::D1Amp,
            "d2_amp" => SweepParam::D2Amp,
            "eta" => SweepParam::Eta,
            "T_target" => SweepParam::TTarget,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::D1Amp => "d1_amp",
            SweepParam::D2Amp => "d2_amp",
            SweepParam::Eta => "eta",
            SweepParam::TTarget => "T_target",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, v: f64) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Usage(format!("--param {}: {msg}", self.name())));
        match self {
            SweepParam::D1Amp | SweepParam::D2Amp if v < 0.0 => return bad("amplitudes must be non-negative"),
            SweepParam::D1Amp => cfg.disturbance.d1 = cfg.disturbance.d1.with_amp(v),
            SweepParam::D2Amp => cfg.disturbance.d2 = cfg.disturbance.d2.with_amp(v),
            SweepParam::Eta if cfg.controller.kind != ControllerKind::Pnf => return bad("needs controller.kind = pnf"),
            SweepParam::Eta => cfg.controller.eta = Some(v),
            SweepParam::TTarget if cfg.controller.kind != ControllerKind::Prescribed => {
                return bad("needs controller.kind = prescribed")
            }
            SweepParam::TTarget => cfg.controller.t_target = v,
        }
        if !(v.is_finite()) || (matches!(self, SweepParam::Eta | SweepParam::TTarget) && v <= 0.0) {
            return bad("values must be positive and finite");
        }
        Ok(())
    }
}

/// Radius defining the settle proxy time.
pub const PROXY_RADIUS: f64 = 1e-6;

pub fn proxy_time(traj: &Trajectory) -> Option<f64> {
    traj.samples.iter().find(|s| s.x.iter().map(|v| v * v).sum::<f64>().sqrt() <= PROXY_RADIUS).map(|s| s.t)
}

pub struct SweepArgs {
    pub config: PathBuf,
    pub param: String,
    pub values: String,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub run: usize,
    pub seed: u64,
    pub status: &'static str,
    pub settle_time: Option<f64>,
    pub sup_norm: f64,
    pub limsup_z: f64,
    pub proxy_time: Option<f64>,
}

pub fn parse_values(s: &str) -> Result<Vec<f64>, CliError> {
    let vals: Result<Vec<f64>, _> = s.split(',').filter(|p| !p.trim().is_empty()).map(|p| p.trim().parse::<f64>()).collect();
    match vals {
        Ok(v) if !v.is_empty() => Ok(v),
        Ok(_) => Err(CliError::Usage("--values is empty".into())),
        Err(_) => Err(CliError::Usage(format!("--values: cannot parse {s:?}"))),
    }
}

pub fn sweep_rows(cfg: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>, CliError> {
    let mut rows = Vec::new();
    for &v in values {
        let mut c = cfg.clone();
        param.apply(&mut c, v)?;
        for r in run_batch(&c)? {
            let m = iss_metrics(&r.traj, c.sim.tail_frac).map_err(core_err)?;
            rows.push(SweepRow {
                value: v,
                run: r.run,
                seed: r.seed,
                status: status_name(&r.traj.status),
                settle_time: m.settle_time,
                sup_norm: m.sup_norm,
                limsup_z: m.limsup_z,
                proxy_time: proxy_time(&r.traj),
            });
        }
    }
    Ok(rows)
}

/// Per-value maxima in input order.
fn per_value_max(values: &[f64], rows: &[SweepRow], f: impl Fn(&SweepRow) -> f64) -> Vec<f64> {
    values
        .iter()
        .map(|v| rows.iter().filter(|r| r.value == *v).map(&f).fold(f64::NEG_INFINITY, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) }))
        .collect()
}

pub fn sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let param = SweepParam::parse(&a.param)
        .ok_or_else(|| CliError::Usage(format!("--param must be one of d1_amp, d2_amp, eta, T_target; got {:?}", a.param)))?;
    let values = parse_values(&a.values)?;
    let cfg = load_config(&a.config, a.runs, a.seed)?;
    let rows = sweep_rows(&cfg, param, &values)?;
    let path = match &a.out {
        Some(p) => p.clone(),
        None => {
            fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
            cfg.output_dir.join(format!("sweep_{}.csv", param.name()))
        }
    };
    let mut w = writer(&path)?;
    w.write_record([param.name(), "run", "seed", "status", "settle_time", "sup_norm", "limsup_Z", "proxy_time"]).map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            num(r.value),
            r.run.to_string(),
            r.seed.to_string(),
            r.status.into(),
            opt(r.settle_time),
            num(r.sup_norm),
            num(r.limsup_z),
            opt(r.proxy_time),
        ])
        .map_err(csv_err)?;
    }
    let mut f = w.into_inner().map_err(|e| CliError::Input(format!("{}: {}", path.display(), e.error())))?;
    for line in footer(&values, &rows) {
        writeln!(f, "{line}").map_err(io_err(&path))?;
    }
    let _ = writeln!(out, "wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

/// `#` lines with the monotone envelope fits of the per-value maxima.
pub fn footer(values: &[f64], rows: &[SweepRow]) -> Vec<String> {
    let join = |fit: &[f64]| values.iter().zip(fit).map(|(v, f)| format!("{}={}", num(*v), num(*f))).collect::<Vec<_>>().join(";");
    let z = per_value_max(values, rows, |r| r.limsup_z);
    let mut lines = vec![format!("# limsup_Z nondecreasing envelope: {}", join(&isotonic(&z)))];
    let proxy = per_value_max(values, rows, |r| r.proxy_time.unwrap_or(f64::INFINITY));
    if proxy.iter().all(|p| p.is_finite()) {
        let neg: Vec<f64> = proxy.iter().map(|p| -p).collect();
        let fit: Vec<f64> = isotonic(&neg).iter().map(|p| -p).collect();
        lines.push(format!("# proxy_time nonincreasing envelope: {}", join(&fit)));
    }
    lines
}
