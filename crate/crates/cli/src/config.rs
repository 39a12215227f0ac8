//! Experiment configuration: flat `section.key = value` lines, `#` comments.
//!
//! Signals are written as `zero`, `const:C`, `sine:AMP:FREQ[:PHASE]` or
//! `noise:AMP`; the `b` profile as `const:B` or `sine:LO:HI:FREQ`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ptstab_core::sim::{GainProfile, IntegrateOptions, NoiseMode, Signal};
use ptstab_core::timescale::Density;
use ptstab_core::ChainSpec;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Pnf,
    Hong,
    FixedTime,
    Prescribed,
    Robust,
}

impl ControllerKind {
    pub fn needs_switch(self) -> bool {
        matches!(self, ControllerKind::FixedTime | ControllerKind::Prescribed | ControllerKind::Robust)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    pub density: Density,
    /// `None` means the smallest certified value.
    pub eta: Option<f64>,
    pub kappa: f64,
    pub reg_eps: f64,
    pub t_target: f64,
    pub gains: Option<PathBuf>,
    pub noise_mode: NoiseMode,
}

/// Signal template before per-run seeding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalSpec {
    Zero,
    Constant(f64),
    Sine { amp: f64, freq: f64, phase: f64 },
    Noise { amp: f64 },
}

impl SignalSpec {
    pub fn instantiate(&self, period: f64, seed: u64) -> Signal {
        match *self {
            SignalSpec::Zero => Signal::Zero,
            SignalSpec::Constant(c) => Signal::Constant(c),
            SignalSpec::Sine { amp, freq, phase } => Signal::Sine { amp, freq, phase },
            SignalSpec::Noise { amp } => Signal::Noise { amp, period, seed },
        }
    }

    /// Same shape with amplitude `a`; a zero template becomes noise.
    pub fn with_amp(&self, a: f64) -> SignalSpec {
        match *self {
            SignalSpec::Zero | SignalSpec::Noise { .. } => SignalSpec::Noise { amp: a },
            SignalSpec::Constant(c) => SignalSpec::Constant(if c < 0.0 { -a } else { a }),
            SignalSpec::Sine { freq, phase, .. } => SignalSpec::Sine { amp: a, freq, phase },
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, SignalSpec::Zero)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channels {
    All,
    /// Only the last coordinate, `d₂ ∥ e_n`.
    Last,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceConfig {
    pub matched: SignalSpec,
    pub d1: SignalSpec,
    pub d2: SignalSpec,
    pub d2_channels: Channels,
    pub b: GainProfile,
    pub noise_period: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunsConfig {
    pub count: usize,
    pub seed: u64,
    pub x0_min: f64,
    pub x0_max: f64,
    /// Fixed initial state for every run.
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub opts: IntegrateOptions,
    pub tail_frac: f64,
    /// PNF only: integrate in warped time.
    pub warped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub spec: ChainSpec,
    pub controller: ControllerConfig,
    pub disturbance: DisturbanceConfig,
    pub runs: RunsConfig,
    pub output_dir: PathBuf,
    pub sim: SimConfig,
}

/// Collects every bad key before giving up.
struct Fields {
    map: BTreeMap<String, String>,
    errors: Vec<String>,
}

impl Fields {
    fn get<T>(&mut self, key: &str, default: T, parse: impl Fn(&str) -> Option<T>) -> T {
        match self.map.remove(key) {
            None => default,
            Some(v) => match parse(&v) {
                Some(x) => x,
                None => {
                    self.errors.push(format!("{key}: cannot parse {v:?}"));
                    default
                }
            },
        }
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str, default: T) -> T {
        self.get(key, default, |s| s.parse().ok())
    }

    fn check(&mut self, key: &str, ok: bool, msg: &str) {
        if !ok {
            self.errors.push(format!("{key}: {msg}"));
        }
    }
}

fn parse_f(s: &str) -> Option<f64> {
    let v: f64 = s.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

pub fn parse_signal(s: &str) -> Option<SignalSpec> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let nums: Option<Vec<f64>> = parts[1..].iter().map(|p| parse_f(p)).collect();
    let nums = nums?;
    Some(match (parts[0], nums.as_slice()) {
        ("zero", []) => SignalSpec::Zero,
        ("const", [c]) => SignalSpec::Constant(*c),
        ("sine", [a, f]) => SignalSpec::Sine { amp: *a, freq: *f, phase: 0.0 },
        ("sine", [a, f, p]) => SignalSpec::Sine { amp: *a, freq: *f, phase: *p },
        ("noise", [a]) if *a >= 0.0 => SignalSpec::Noise { amp: *a },
        _ => return None,
    })
}

fn parse_profile(s: &str) -> Option<GainProfile> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let nums: Option<Vec<f64>> = parts[1..].iter().map(|p| parse_f(p)).collect();
    Some(match (parts[0], nums?.as_slice()) {
        ("const", [b]) if *b > 0.0 => GainProfile::Constant(*b),
        ("sine", [lo, hi, f]) if 0.0 < *lo && lo <= hi => GainProfile::Sine { lo: *lo, hi: *hi, freq: *f },
        _ => return None,
    })
}

fn parse_density(s: &str) -> Option<Density> {
    let (tag, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b.trim())));
    Some(match (tag.trim(), arg) {
        ("constant", None) => Density::Constant(1.0),
        ("constant", Some(c)) => Density::Constant(parse_f(c).filter(|c| *c > 0.0)?),
        ("powerlaw", Some(m)) => Density::PowerLaw(m.parse().ok().filter(|m| *m >= 1)?),
        ("expflat", None) => Density::ExpFlat,
        _ => return None,
    })
}

fn parse_kind(s: &str) -> Option<ControllerKind> {
    Some(match s {
        "pnf" => ControllerKind::Pnf,
        "hong" => ControllerKind::Hong,
        "fixed_time" => ControllerKind::FixedTime,
        "prescribed" => ControllerKind::Prescribed,
        "robust" => ControllerKind::Robust,
        _ => return None,
    })
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn parse_vec(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(parse_f).collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Relative paths in the text resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        let mut errors = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                        errors.push(format!("{}: duplicate key", k.trim()));
                    }
                }
                None => errors.push(format!("line {}: expected section.key = value", no + 1)),
            }
        }
        let mut f = Fields { map, errors };

        let n = f.num("plant.n", 2usize);
        let horizon = f.get("plant.horizon", 1.0, parse_f);
        let b_lower = f.get("plant.b_lower", 1.0, parse_f);
        let b_upper = f.get("plant.b_upper", b_lower, |s| if s == "inf" { Some(f64::INFINITY) } else { parse_f(s) });
        let d_bound = f.get("plant.d_bound", 0.0, parse_f);
        let spec = ChainSpec { n, horizon, b_lower, b_upper, d_bound };
        if let Err(e) = spec.validate() {
            f.errors.push(format!("plant: {e}"));
        }

        let kind = f.get("controller.kind", ControllerKind::Pnf, parse_kind);
        let density = f.get("controller.density", Density::Constant(1.0), parse_density);
        let eta = f.get("controller.eta", None, |s| parse_f(s).filter(|v| *v > 0.0).map(Some));
        let kappa = f.get("controller.kappa", 0.0, parse_f);
        let reg_eps = f.get("controller.reg_eps", 1e-3, |s| parse_f(s).filter(|v| *v > 0.0));
        let t_target = f.get("controller.t_target", 1.0, |s| parse_f(s).filter(|v| *v > 0.0));
        let gains = f.get("controller.gains", None, |s| Some(Some(base.join(s))));
        let noise_mode = f.get("controller.noise_mode", NoiseMode::SwitchOnly, |s| match s {
            "switch_only" => Some(NoiseMode::SwitchOnly),
            "full_state" => Some(NoiseMode::FullState),
            _ => None,
        });
        let alt_z = f.get("controller.alt_z", false, parse_bool);
        if kind != ControllerKind::Pnf && gains.is_none() {
            f.errors.push("controller.gains: required for this controller kind".into());
        }
        let controller = ControllerConfig { kind, density, eta, kappa, reg_eps, t_target, gains, noise_mode };

        let matched = f.get("disturbance.matched", SignalSpec::Zero, parse_signal);
        let d1 = f.get("disturbance.d1", SignalSpec::Zero, parse_signal);
        let d2 = f.get("disturbance.d2", SignalSpec::Zero, parse_signal);
        let d2_channels = f.get("disturbance.d2_channels", Channels::All, |s| match s {
            "all" => Some(Channels::All),
            "last" => Some(Channels::Last),
            _ => None,
        });
        let b = f.get("disturbance.b", GainProfile::Constant(b_lower), parse_profile);
        let noise_period = f.get("disturbance.noise_period", horizon * 1e-4, |s| parse_f(s).filter(|v| *v > 0.0));
        let (lo, hi) = b.range();
        f.check("disturbance.b", lo >= b_lower && hi <= b_upper, "profile leaves [plant.b_lower, plant.b_upper]");
        let disturbance = DisturbanceConfig { matched, d1, d2, d2_channels, b, noise_period };

        let count = f.num("runs.count", 1usize);
        let seed = f.num("runs.seed", 0u64);
        let x0_min = f.get("runs.x0_min", 0.1, parse_f);
        let x0_max = f.get("runs.x0_max", 10.0, parse_f);
        let x0 = f.get("runs.x0", None, |s| parse_vec(s).map(Some));
        f.check("runs.count", count >= 1, "must be at least 1");
        f.check("runs.x0_min", 0.0 < x0_min && x0_min <= x0_max, "need 0 < x0_min <= x0_max");
        if let Some(x) = &x0 {
            let ok = x.len() == n;
            f.check("runs.x0", ok, "length must equal plant.n");
        }
        let runs = RunsConfig { count, seed, x0_min, x0_max, x0 };

        let output_dir = f.get("output.dir", base.join("out"), |s| Some(base.join(s)));

        let d = IntegrateOptions::default();
        let opts = IntegrateOptions {
            rel_tol: f.get("sim.rel_tol", d.rel_tol, |s| parse_f(s).filter(|v| *v > 0.0)),
            abs_tol: f.get("sim.abs_tol", d.abs_tol, |s| parse_f(s).filter(|v| *v > 0.0)),
            t_stop_frac: f.get("sim.t_stop_frac", d.t_stop_frac, |s| parse_f(s).filter(|v| *v > 0.0 && *v < 1.0)),
            settle_radius: f.get("sim.settle_radius", d.settle_radius, |s| parse_f(s).filter(|v| *v > 0.0)),
            drift: f.get("sim.drift", d.drift, parse_f),
            record_every: f.get("sim.record_every", d.record_every, |s| s.parse().ok().filter(|v| *v >= 1)),
            s_max: f.get("sim.s_max", d.s_max, |s| parse_f(s).filter(|v| *v > 0.0)),
            alt_z,
            ..d
        };
        let tail_frac = f.get("sim.tail_frac", 0.25, |s| parse_f(s).filter(|v| *v > 0.0 && *v <= 1.0));
        let warped = f.get("sim.warped", false, parse_bool);
        f.check("sim.warped", !warped || kind == ControllerKind::Pnf, "only the pnf controller runs in warped time");
        let sim = SimConfig { opts, tail_frac, warped };

        let Fields { map, mut errors } = f;
        errors.extend(map.keys().map(|k| format!("{k}: unknown key")));
        if !errors.is_empty() {
            return Err(CliError::Config(errors));
        }
        Ok(ExperimentConfig { spec, controller, disturbance, runs, output_dir, sim })
    }
}
