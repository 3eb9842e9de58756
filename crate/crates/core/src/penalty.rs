//! The string-energy penalty `Q`: `theta^T Q theta = V^{-1} int kappa x^k (f^{(n)}(x))^2 dx`.
//!
//! Assembly is exact: each unit interval of the rescaled coordinate contributes
//! `M^T D_n F D_n^T M` where `F` holds analytic moments of `d^{i+j} (d + c)^k`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bspline::{deriv_matrix, BasisSpec, SplineBasis};
use crate::error::{Error, Result};

/// Relative eigenvalue threshold used for every numerical rank in the crate.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Derivative order `n` in the string energy.
    pub derivative_order: usize,
    /// Exponent `k` of the density `kappa x^k`.
    #[serde(default)]
    pub density_exponent: u32,
    /// Scale `kappa`; it cancels against the volume but is kept for completeness.
    #[serde(default = "one")]
    pub density_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl PenaltyConfig {
    pub fn new(derivative_order: usize) -> Self {
        PenaltyConfig {
            derivative_order,
            density_exponent: 0,
            density_scale: 1.0,
        }
    }

    pub fn with_density(derivative_order: usize, exponent: u32, scale: f64) -> Self {
        PenaltyConfig {
            derivative_order,
            density_exponent: exponent,
            density_scale: scale,
        }
    }

    /// `V = int_{x0}^{x1} kappa x^k dx`.
    pub fn volume(&self, x0: f64, x1: f64) -> f64 {
        let k = self.density_exponent as i32;
        self.density_scale * (x1.powi(k + 1) - x0.powi(k + 1)) / (k + 1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct PenaltyMatrix {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
    pub config: PenaltyConfig,
    pub volume: f64,
    pub basis: BasisSpec,
}

fn binomial_f64(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, t| acc * (n - t) as f64 / (t + 1) as f64)
}

/// `F_ij = int_lo^hi d^{i+j} (d + offset)^k dd` for `i, j < size`.
pub fn interval_moment_matrix(lo: f64, hi: f64, k: u32, offset: f64, size: usize) -> DMatrix<f64> {
    let weights: Vec<f64> = (0..=k)
        .map(|m| binomial_f64(k, m) * offset.powi((k - m) as i32))
        .collect();
    // moments[s] = int_lo^hi d^s dd
    let max_s = 2 * size + k as usize;
    let moments: Vec<f64> = (0..max_s)
        .map(|s| (hi.powi(s as i32 + 1) - lo.powi(s as i32 + 1)) / (s + 1) as f64)
        .collect();
    DMatrix::from_fn(size, size, |i, j| {
        weights
            .iter()
            .enumerate()
            .map(|(m, w)| w * moments[i + j + m])
            .sum()
    })
}

/// Numerical rank of a symmetric matrix at `RANK_TOLERANCE * lambda_max`.
pub fn symmetric_rank(matrix: &DMatrix<f64>) -> usize {
    let eig = SymmetricEigen::new(matrix.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return 0;
    }
    eig.eigenvalues
        .iter()
        .filter(|v| **v > RANK_TOLERANCE * max)
        .count()
}

pub fn assemble_penalty(basis: &SplineBasis, config: PenaltyConfig) -> Result<PenaltyMatrix> {
    let r = basis.order();
    let n = config.derivative_order;
    let k = config.density_exponent;
    if n >= r {
        return Err(Error::DerivativeOrder { n, order: r });
    }
    if basis.is_periodic() && k > 0 {
        return Err(Error::Config(
            "a periodic basis needs a periodic density; only k = 0 is supported".into(),
        ));
    }
    if !(config.density_scale.is_finite() && config.density_scale > 0.0) {
        return Err(Error::Config("density scale must be positive".into()));
    }
    let x0 = basis.origin();
    let volume = config.volume(x0, x0 + basis.length());
    if !(volume.is_finite() && volume > 0.0) {
        return Err(Error::Config(format!(
            "density integrates to {volume} over the basis domain"
        )));
    }

    let h = basis.knot_spacing();
    let m = basis.coeffs();
    let dn = deriv_matrix(r, n)?;
    // t = D_n^T M maps local coefficients to derivative-polynomial coefficients
    let t = dn.transpose() * m;
    let prefactor = config.density_scale * h.powi(1 + k as i32 - 2 * n as i32) / volume;
    // x / h = u - shift + x0 / h
    let base_offset = x0 / h - basis.shift();

    let p = basis.num_params();
    let mut q = DMatrix::zeros(p, p);
    let (u0, u1) = (basis.u_min(), basis.u_max());
    let end = u1.ceil() as i64;
    let mut j = u0.floor() as i64;
    while j < end {
        let lo = (u0 - j as f64).max(0.0);
        let hi = (u1 - j as f64).min(1.0);
        if hi > lo {
            let f = interval_moment_matrix(lo, hi, k, j as f64 + base_offset, r - n);
            let block = t.transpose() * f * &t;
            let first = j - r as i64 + 1;
            for a in 0..r {
                let Some(ga) = basis.global_index(first + a as i64) else {
                    continue;
                };
                for b in 0..r {
                    if let Some(gb) = basis.global_index(first + b as i64) {
                        q[(ga, gb)] += prefactor * block[(a, b)];
                    }
                }
            }
        }
        j += 1;
    }
    // remove round-off asymmetry
    let q = (&q + q.transpose()) * 0.5;
    let rank = symmetric_rank(&q);
    Ok(PenaltyMatrix {
        matrix: q,
        rank,
        config,
        volume,
        basis: basis.spec(),
    })
}

impl PenaltyMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `theta^T Q theta`, the `eps^2_Q` of the conditional posteriors.
    pub fn string_energy(&self, theta: &[f64]) -> Result<f64> {
        string_energy(&self.matrix, theta)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let p = self.dim();
        let header: Vec<String> = (0..p).map(|j| format!("q{j}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..p {
            let row: Vec<String> = (0..p).map(|j| format!("{}", self.matrix[(i, j)])).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn string_energy(q: &DMatrix<f64>, theta: &[f64]) -> Result<f64> {
    if theta.len() != q.nrows() {
        return Err(Error::DimensionMismatch {
            expected: q.nrows(),
            got: theta.len(),
        });
    }
    let v = DVector::from_column_slice(theta);
    Ok(v.dot(&(q * &v)).max(0.0))
}
