//! Time warping: density `a`, `A(t) = ∫_t^T a`, blow-up gain `λ = 1/A` and
//! warped time `s(t) = ∫_0^t λ`.

use crate::error::{domain, Result};
use crate::homog::{Convention, WeightVector};
use crate::quad;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Density {
    /// `a(t) = c`.
    Constant(f64),
    /// `a(t) = (T - t)^{m-1}`.
    PowerLaw(u32),
    /// `a(t) = exp(-1/(T - t)) / (T - t)^2`, giving `λ(t) = exp(1/(T - t))`.
    ExpFlat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeScale {
    horizon: f64,
    density: Density,
}

/// Evaluations are refused past `T (1 - HORIZON_GUARD)`.
pub const HORIZON_GUARD: f64 = 1e-9;

impl TimeScale {
    pub fn build(horizon: f64, density: Density) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return domain(format!("horizon must be positive, got {horizon}"));
        }
        match density {
            Density::Constant(c) if !(c > 0.0 && c.is_finite()) => {
                return domain(format!("constant density must be positive, got {c}"))
            }
            Density::PowerLaw(0) => return domain("power-law exponent must be at least 1"),
            _ => {}
        }
        Ok(TimeScale { horizon, density })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn density(&self) -> Density {
        self.density
    }

    pub fn t_max(&self) -> f64 {
        self.horizon * (1.0 - HORIZON_GUARD)
    }

    fn guard(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.t_max()) {
            return domain(format!("time {t} outside [0, T(1-1e-9)] with T={}", self.horizon));
        }
        Ok(())
    }

    pub fn a(&self, t: f64) -> Result<f64> {
        self.guard(t)?;
        Ok(self.a_raw(t))
    }

    pub fn big_a(&self, t: f64) -> Result<f64> {
        self.guard(t)?;
        Ok(self.big_a_raw(t))
    }

    pub fn lambda(&self, t: f64) -> Result<f64> {
        self.guard(t)?;
        Ok(self.lambda_raw(t))
    }

    /// `λ' = a λ²`.
    pub fn lambda_dot(&self, t: f64) -> Result<f64> {
        self.guard(t)?;
        let l = self.lambda_raw(t);
        Ok(self.a_raw(t) * l * l)
    }

    pub(crate) fn a_raw(&self, t: f64) -> f64 {
        self.a_gap(self.horizon - t)
    }

    pub(crate) fn big_a_raw(&self, t: f64) -> f64 {
        self.big_a_gap(self.horizon - t)
    }

    pub(crate) fn lambda_raw(&self, t: f64) -> f64 {
        self.lambda_gap(self.horizon - t)
    }

    // The `_gap` forms take `u = T - t`, keeping full precision near `T`.
    pub(crate) fn a_gap(&self, u: f64) -> f64 {
        match self.density {
            Density::Constant(c) => c,
            Density::PowerLaw(m) => u.powi(m as i32 - 1),
            Density::ExpFlat => (-1.0 / u).exp() / (u * u),
        }
    }

    pub(crate) fn big_a_gap(&self, u: f64) -> f64 {
        match self.density {
            Density::Constant(c) => c * u,
            Density::PowerLaw(m) => u.powi(m as i32) / m as f64,
            Density::ExpFlat => (-1.0 / u).exp(),
        }
    }

    pub(crate) fn lambda_gap(&self, u: f64) -> f64 {
        match self.density {
            Density::Constant(c) => 1.0 / (c * u),
            Density::PowerLaw(m) => m as f64 / u.powi(m as i32),
            Density::ExpFlat => (1.0 / u).exp(),
        }
    }

    /// `sup_{[0,T]} a`.
    pub fn a_sup(&self) -> f64 {
        let tt = self.horizon;
        match self.density {
            Density::Constant(c) => c,
            Density::PowerLaw(m) => tt.powi(m as i32 - 1),
            // e^{-1/u}/u^2 peaks at u = 1/2.
            Density::ExpFlat => {
                let u = tt.min(0.5);
                (-1.0 / u).exp() / (u * u)
            }
        }
    }

    pub fn s(&self, t: f64) -> Result<f64> {
        self.guard(t)?;
        let tt = self.horizon;
        let u = tt - t;
        Ok(match self.density {
            Density::Constant(c) => (tt / u).ln() / c,
            Density::PowerLaw(1) => (tt / u).ln(),
            Density::PowerLaw(m) => {
                let m = m as f64;
                m / (m - 1.0) * (u.powf(1.0 - m) - tt.powf(1.0 - m))
            }
            Density::ExpFlat => expflat_s(tt, t),
        })
    }

    pub fn t_of_s(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0 && s.is_finite()) {
            return domain(format!("warped time must be finite and non-negative, got {s}"));
        }
        let tt = self.horizon;
        let t = match self.density {
            Density::Constant(c) => -tt * (-c * s).exp_m1(),
            Density::PowerLaw(1) => -tt * (-s).exp_m1(),
            Density::PowerLaw(m) => {
                let m = m as f64;
                let w = s * (m - 1.0) / m + tt.powf(1.0 - m);
                tt - w.powf(-1.0 / (m - 1.0))
            }
            Density::ExpFlat => {
                let s_max = self.s(self.t_max())?;
                if s > s_max {
                    return domain(format!("warped time {s} beyond the guarded horizon"));
                }
                let (mut lo, mut hi) = (0.0, self.t_max());
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if expflat_s(tt, mid) < s {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        };
        if t > self.t_max() {
            return domain(format!("warped time {s} beyond the guarded horizon"));
        }
        Ok(t)
    }
}

/// `s(t) = ∫_{1/T}^{1/(T-t)} e^u / u^2 du` after substituting `u = 1/(T - ξ)`.
fn expflat_s(tt: f64, t: f64) -> f64 {
    let (lo, hi) = (1.0 / tt, 1.0 / (tt - t));
    if hi > 709.0 {
        return f64::INFINITY;
    }
    // Integrate e^{u - hi}/u^2 and rescale so the tolerance stays relative.
    let v = quad::integrate(|u| (u - hi).exp() / (u * u), lo, hi, 0.0, 1e-12);
    v * hi.exp()
}

fn require_pnf(w: &WeightVector) -> Result<()> {
    if w.convention() != Convention::Pnf {
        return domain("time warping needs PNF weights");
    }
    Ok(())
}

/// `y = D_{η λ(t)} x`.
pub fn x_to_y(ts: &TimeScale, w: &WeightVector, eta: f64, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    require_pnf(w)?;
    let l = eta * ts.lambda(t)?;
    crate::homog::dilate(w, l, x)
}

pub fn y_to_x(ts: &TimeScale, w: &WeightVector, eta: f64, t: f64, y: &[f64]) -> Result<Vec<f64>> {
    require_pnf(w)?;
    let l = eta * ts.lambda(t)?;
    crate::homog::dilate(w, 1.0 / l, y)
}
