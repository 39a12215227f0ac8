use crate::error::{domain, Result};

/// Plant data for `x' = J_n x + (d + b u) e_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSpec {
    pub n: usize,
    /// Prescribed horizon.
    pub horizon: f64,
    pub b_lower: f64,
    /// May be `f64::INFINITY`.
    pub b_upper: f64,
    /// Matched disturbance bound `D`.
    pub d_bound: f64,
}

impl ChainSpec {
    pub fn new(n: usize, horizon: f64, b_lower: f64, b_upper: f64, d_bound: f64) -> Result<Self> {
        let s = ChainSpec { n, horizon, b_lower, b_upper, d_bound };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return domain("n must be at least 1");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return domain(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.b_lower > 0.0 && self.b_lower.is_finite()) {
            return domain(format!("b_lower must be positive, got {}", self.b_lower));
        }
        if !(self.b_upper >= self.b_lower) {
            return domain(format!("b_upper {} below b_lower {}", self.b_upper, self.b_lower));
        }
        if !(self.d_bound >= 0.0 && self.d_bound.is_finite()) {
            return domain(format!("d_bound must be non-negative, got {}", self.d_bound));
        }
        Ok(())
    }
}
