//! Flat `key=value` gain files.
//!
//! Vectors are `;`-separated, matrices list their rows separated by `,`
//! (`S=0.5;0,0;0.25`). Every float is written with 17 significant digits so
//! a read reproduces the written value bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use ptstab_core::hong::{DecayCertificate, HongGainSet};
use ptstab_core::pnf::LinearGain;
use ptstab_core::ptstab::{ExplicitConstants, SwitchConfig, SwitchParams};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum GainFile {
    Pnf(LinearGain),
    Hong { gains: HongGainSet, switch: SwitchParams, b_lower: f64, switch_cfg: SwitchConfig },
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";")
}

fn fmt_mat(m: &DMatrix<f64>) -> String {
    (0..m.nrows())
        .map(|i| fmt_vec(&m.row(i).iter().copied().collect::<Vec<_>>()))
        .collect::<Vec<_>>()
        .join(",")
}

impl GainFile {
    pub fn n(&self) -> usize {
        match self {
            GainFile::Pnf(g) => g.n,
            GainFile::Hong { gains, .. } => gains.n,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        match self {
            GainFile::Pnf(g) => {
                kv("kind", "pnf".into());
                kv("n", g.n.to_string());
                kv("b_lower", fmt_f64(g.b_lower));
                kv("K", fmt_vec(&g.k));
                kv("S", fmt_mat(&g.s));
                kv("rho", fmt_f64(g.rho));
                kv("certificate.c0", fmt_f64(g.c0));
                kv("certificate.rho0", fmt_f64(g.rho0));
            }
            GainFile::Hong { gains: g, switch: sp, b_lower, switch_cfg } => {
                let c = &g.certificate;
                kv("kind", "hong".into());
                kv("n", g.n.to_string());
                kv("b_lower", fmt_f64(*b_lower));
                kv("ell", fmt_vec(&g.ell));
                kv("C", fmt_f64(g.c));
                kv("certificate.kappa_count", c.kappa_count.to_string());
                kv("certificate.samples_per_kappa", c.samples_per_kappa.to_string());
                kv("certificate.synthesis_seed", c.synthesis_seed.to_string());
                kv("certificate.verify_seed", c.verify_seed.to_string());
                kv("certificate.safety", fmt_f64(c.safety));
                kv("certificate.sampled_min", fmt_f64(c.sampled_min));
                kv("certificate.max_residual", fmt_f64(c.max_residual));
                kv("certificate.rounds", c.rounds.to_string());
                kv("certificate.recursion_ell", fmt_vec(&c.recursion_ell));
                kv("switch.m", fmt_f64(sp.m));
                kv("switch.kappa0", fmt_f64(sp.kappa0));
                kv("switch.P", fmt_mat(&sp.p));
                kv("switch.r_plus", fmt_f64(sp.r_plus));
                kv("switch.r_minus", fmt_f64(sp.r_minus));
                kv("switch.T_settle", fmt_f64(sp.t_settle));
                kv("switch.E", fmt_f64(sp.e_level));
                kv("switch.b_ratio", fmt_f64(sp.b_ratio));
                kv("switch.halvings", sp.halvings.to_string());
                kv("switch.X_n", fmt_f64(sp.constants.x_n));
                kv("switch.C1_n", fmt_f64(sp.constants.c1_n));
                kv("switch.C2_n", fmt_f64(sp.constants.c2_n));
                kv("switch.kappa0_of_m", fmt_f64(sp.constants.kappa0_of_m));
                kv("certificate.switch_kappa_count", switch_cfg.kappa_count.to_string());
                kv("certificate.switch_samples", switch_cfg.samples.to_string());
                kv("certificate.switch_seed", switch_cfg.seed.to_string());
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<GainFile, CliError> {
        let mut map = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("gain file line {}: expected key=value", no + 1)))?;
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(CliError::Input(format!("gain file: duplicate key {}", k.trim())));
            }
        }
        let mut r = Reader { map };
        let kind = r.take("kind")?;
        let n: usize = r.num("n")?;
        let out = match kind.as_str() {
            "pnf" => {
                let g = LinearGain {
                    n,
                    b_lower: r.num("b_lower")?,
                    k: r.vec("K", n)?,
                    s: r.mat("S", n)?,
                    rho: r.num("rho")?,
                    c0: r.num("certificate.c0")?,
                    rho0: r.num("certificate.rho0")?,
                };
                GainFile::Pnf(g)
            }
            "hong" => {
                let b_lower = r.num("b_lower")?;
                let ell = r.vec("ell", n)?;
                let c = r.num("C")?;
                let certificate = DecayCertificate {
                    kappa_count: r.num("certificate.kappa_count")?,
                    samples_per_kappa: r.num("certificate.samples_per_kappa")?,
                    synthesis_seed: r.num("certificate.synthesis_seed")?,
                    verify_seed: r.num("certificate.verify_seed")?,
                    safety: r.num("certificate.safety")?,
                    sampled_min: r.num("certificate.sampled_min")?,
                    max_residual: r.num("certificate.max_residual")?,
                    rounds: r.num("certificate.rounds")?,
                    recursion_ell: r.vec_any("certificate.recursion_ell")?,
                };
                let switch = SwitchParams {
                    n,
                    m: r.num("switch.m")?,
                    kappa0: r.num("switch.kappa0")?,
                    p: r.mat("switch.P", n)?,
                    r_plus: r.num("switch.r_plus")?,
                    r_minus: r.num("switch.r_minus")?,
                    t_settle: r.num("switch.T_settle")?,
                    c,
                    e_level: r.num("switch.E")?,
                    b_ratio: r.num("switch.b_ratio")?,
                    constants: ExplicitConstants {
                        x_n: r.num("switch.X_n")?,
                        c1_n: r.num("switch.C1_n")?,
                        c2_n: r.num("switch.C2_n")?,
                        kappa0_of_m: r.num("switch.kappa0_of_m")?,
                    },
                    halvings: r.num("switch.halvings")?,
                };
                let switch_cfg = SwitchConfig {
                    kappa_count: r.num("certificate.switch_kappa_count")?,
                    samples: r.num("certificate.switch_samples")?,
                    seed: r.num("certificate.switch_seed")?,
                    b_ratio: switch.b_ratio,
                };
                let mut gains = HongGainSet::from_gains(ell).map_err(|e| CliError::Input(format!("gain file: {e}")))?;
                gains.c = c;
                gains.certificate = certificate;
                GainFile::Hong { gains, switch, b_lower, switch_cfg }
            }
            other => return Err(CliError::Input(format!("gain file: unknown kind {other:?}"))),
        };
        if let Some(k) = r.map.keys().next() {
            return Err(CliError::Input(format!("gain file: unknown key {k}")));
        }
        Ok(out)
    }
}

struct Reader {
    map: BTreeMap<String, String>,
}

impl Reader {
    fn take(&mut self, k: &str) -> Result<String, CliError> {
        self.map.remove(k).ok_or_else(|| CliError::Input(format!("gain file: missing key {k}")))
    }

    fn num<T: std::str::FromStr>(&mut self, k: &str) -> Result<T, CliError> {
        let v = self.take(k)?;
        v.parse().map_err(|_| CliError::Input(format!("gain file: bad value for {k}: {v:?}")))
    }

    fn vec_any(&mut self, k: &str) -> Result<Vec<f64>, CliError> {
        let v = self.take(k)?;
        if v.is_empty() {
            return Ok(vec![]);
        }
        v.split(';')
            .map(|x| x.trim().parse::<f64>().map_err(|_| CliError::Input(format!("gain file: bad number in {k}: {x:?}"))))
            .collect()
    }

    fn vec(&mut self, k: &str, n: usize) -> Result<Vec<f64>, CliError> {
        let v = self.vec_any(k)?;
        if v.len() != n {
            return Err(CliError::Input(format!("gain file: {k} has {} entries, expected {n}", v.len())));
        }
        Ok(v)
    }

    fn mat(&mut self, k: &str, n: usize) -> Result<DMatrix<f64>, CliError> {
        let v = self.take(k)?;
        let rows: Vec<&str> = v.split(',').collect();
        if rows.len() != n {
            return Err(CliError::Input(format!("gain file: {k} has {} rows, expected {n}", rows.len())));
        }
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            let vals: Vec<&str> = row.split(';').collect();
            if vals.len() != n {
                return Err(CliError::Input(format!("gain file: {k} row {} has {} entries", i + 1, vals.len())));
            }
            for (j, x) in vals.iter().enumerate() {
                m[(i, j)] = x.trim().parse().map_err(|_| CliError::Input(format!("gain file: bad number in {k}: {x:?}")))?;
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ptstab_core::pnf::synthesize_linear_gain;

    #[test]
    fn pnf_round_trip_is_exact() {
        let g = synthesize_linear_gain(3, 0.25).unwrap();
        let f = GainFile::Pnf(g);
        assert_eq!(GainFile::parse(&f.to_text()).unwrap(), f);
    }

    #[test]
    fn scalar_file_contents() {
        let text = GainFile::Pnf(synthesize_linear_gain(1, 1.0).unwrap()).to_text();
        assert!(text.contains("K=1.0000000000000000e0\n"));
        assert!(text.contains("S=5.0000000000000000e-1\n"));
        assert!(text.contains("rho=1.0000000000000000e0\n"));
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        let text = GainFile::Pnf(synthesize_linear_gain(1, 1.0).unwrap()).to_text();
        assert!(GainFile::parse(&format!("{text}extra=1\n")).is_err());
        assert!(GainFile::parse(&text.replace("rho=", "rh=")).is_err());
        assert!(GainFile::parse("kind=pnf\nn=2\nK=1;2;3\n").is_err());
    }
}
