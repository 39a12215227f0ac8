//! Weight vectors, dilations, signed powers and sampling of the
//! κ-parameterized homogeneous unit spheres.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Convention {
    /// `r_i = n - i + 1`.
    Pnf,
    /// `r_j = 1 + (j - 1) κ`.
    Hong(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    r: Vec<f64>,
    convention: Convention,
}

/// Half-width of the admissible κ interval, `1/(2n)`.
pub fn kappa_bound(n: usize) -> f64 {
    0.5 / n as f64
}

fn check_kappa(n: usize, kappa: f64) -> Result<()> {
    // Grids built from the bound land exactly on it, allow rounding.
    let b = kappa_bound(n) * (1.0 + 1e-12);
    if !kappa.is_finite() || kappa.abs() > b {
        return domain(format!("kappa {kappa} outside [-1/(2n), 1/(2n)] for n={n}"));
    }
    Ok(())
}

/// Hong weights `1 + (i-1)κ` for `i = 1..=len`.
pub(crate) fn hong_weights(len: usize, kappa: f64) -> Vec<f64> {
    (0..len).map(|i| 1.0 + i as f64 * kappa).collect()
}

impl WeightVector {
    pub fn pnf(n: usize) -> Self {
        WeightVector { r: (0..n).map(|i| (n - i) as f64).collect(), convention: Convention::Pnf }
    }

    pub fn hong(n: usize, kappa: f64) -> Result<Self> {
        if n == 0 {
            return domain("n must be at least 1");
        }
        check_kappa(n, kappa)?;
        Ok(WeightVector { r: hong_weights(n, kappa), convention: Convention::Hong(kappa) })
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn dilation(&self, lambda: f64) -> Result<DilationMatrix> {
        if !(lambda > 0.0) {
            return domain(format!("dilation parameter must be positive, got {lambda}"));
        }
        Ok(DilationMatrix { weights: self.clone(), lambda })
    }
}

/// `diag(λ^{r_i})`.
#[derive(Debug, Clone, PartialEq)]
pub struct DilationMatrix {
    pub weights: WeightVector,
    pub lambda: f64,
}

impl DilationMatrix {
    pub fn diag(&self) -> Vec<f64> {
        self.weights.r.iter().map(|&r| self.lambda.powf(r)).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights.r.iter().zip(x).map(|(&r, &xi)| self.lambda.powf(r) * xi).collect()
    }

    pub fn inverse(&self) -> DilationMatrix {
        DilationMatrix { weights: self.weights.clone(), lambda: 1.0 / self.lambda }
    }

    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.diag()))
    }
}

pub fn dilate(w: &WeightVector, lambda: f64, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != w.n() {
        return domain(format!("state has length {}, weights have {}", x.len(), w.n()));
    }
    Ok(w.dilation(lambda)?.apply(x))
}

/// `sign(x) |x|^alpha`.
pub fn signed_power(x: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return domain(format!("signed power exponent must be positive, got {alpha}"));
    }
    Ok(spow(x, alpha))
}

#[inline]
pub(crate) fn spow(x: f64, alpha: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(alpha)
    }
}

/// `Σ |x_i|^{2/r_i}`, the quantity pinned to 1 on the homogeneous sphere.
pub fn sphere_residual_sum(r: &[f64], x: &[f64]) -> f64 {
    r.iter().zip(x).map(|(&ri, &xi)| xi.abs().powf(2.0 / ri)).sum()
}

/// `count` evenly spaced κ values covering `[-1/(2n), 1/(2n)]`, endpoints included.
pub fn kappa_grid(n: usize, count: usize) -> Vec<f64> {
    let b = kappa_bound(n);
    match count {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..count).map(|i| -b + 2.0 * b * i as f64 / (count - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    pub kappa: f64,
    pub x: Vec<f64>,
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Scale a nonzero direction onto the κ-sphere of the given weights.
///
/// `Σ|λ^{r_i} z_i|^{2/r_i} = λ² Σ|z_i|^{2/r_i}`, so the dilation parameter is
/// explicit.
pub fn project_to_sphere(r: &[f64], z: &[f64]) -> Vec<f64> {
    let lam = sphere_residual_sum(r, z).powf(-0.5);
    r.iter().zip(z).map(|(&ri, &zi)| lam.powf(ri) * zi).collect()
}

/// `count` points of `R^j` per grid κ on `Σ|x_i|^{2/r_i(κ)} = 1`.
///
/// `n` is the plant order fixing the admissible κ range.
pub fn sample_sphere(j: usize, n: usize, kappas: &[f64], count: usize, seed: u64) -> Result<Vec<SpherePoint>> {
    if j == 0 || j > n {
        return domain(format!("sphere dimension {j} outside 1..={n}"));
    }
    if count == 0 {
        return domain("sample count must be positive");
    }
    let mut out = Vec::with_capacity(kappas.len() * count);
    for (k, &kappa) in kappas.iter().enumerate() {
        check_kappa(n, kappa)?;
        let r = hong_weights(j, kappa);
        let mut rng = stream_rng(seed, k as u64);
        let mut z = vec![0.0; j];
        for _ in 0..count {
            loop {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut rng);
                }
                if z.iter().any(|v| *v != 0.0) {
                    break;
                }
            }
            out.push(SpherePoint { kappa, x: project_to_sphere(&r, &z) });
        }
    }
    Ok(out)
}
