//! Smoothing-ratio diagnostics: the marginal posterior of `alpha = lambda / z`, GCV, AIC,
//! convolution kernels, the expected squared error and chain autocorrelation times.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::bspline::SplineBasis;
use crate::error::{Error, Result};
use crate::sampler::Problem;

/// Default noise precision for AIC, `23.74^{-2}`.
pub const AIC_DEFAULT_ZHAT: f64 = 1.0 / (23.74 * 23.74);

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

pub fn default_alpha_grid() -> Vec<f64> {
    log_grid(1e-6, 1e6, 121)
}

/// The single-`z` system `D^T D + alpha Q` shared by all selectors.
#[derive(Debug, Clone)]
pub struct AlphaSystem {
    pub gram: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub yy: f64,
    pub penalty: DMatrix<f64>,
    /// Number of observations `M`.
    pub observations: usize,
    /// Total number of coefficients `p`.
    pub params: usize,
    /// Total penalty null dimension `n`.
    pub null_dim: usize,
    design: Option<(DMatrix<f64>, DVector<f64>)>,
}

/// One point of an alpha scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub alpha: f64,
    pub eps2_f: f64,
    pub eps2_q: f64,
    pub log_marginal: f64,
    pub gcv: f64,
    pub aic: f64,
    pub trace_h: f64,
}

pub struct AlphaFit {
    pub theta: DVector<f64>,
    pub eps2_f: f64,
    pub eps2_q: f64,
    chol: Cholesky<f64, Dyn>,
}

impl AlphaFit {
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }
}

impl AlphaSystem {
    pub fn from_problem(problem: &Problem) -> Self {
        let p = problem.num_params();
        let mut penalty = DMatrix::zeros(p, p);
        let mut null_dim = 0;
        for block in &problem.penalties {
            let n = block.dim();
            penalty
                .view_mut((block.offset, block.offset), (n, n))
                .copy_from(&block.matrix);
            null_dim += block.null_dim;
        }
        let design = problem.design;
        AlphaSystem {
            gram: problem.total_gram(),
            rhs: design.matrix.tr_mul(&design.targets),
            yy: design.targets.norm_squared(),
            penalty,
            observations: design.matrix.nrows(),
            params: p,
            null_dim,
            design: Some((design.matrix.clone(), design.targets.clone())),
        }
    }

    pub fn new(d: &DMatrix<f64>, y: &DVector<f64>, q: &DMatrix<f64>, null_dim: usize) -> Self {
        AlphaSystem {
            gram: d.tr_mul(d),
            rhs: d.tr_mul(y),
            yy: y.norm_squared(),
            penalty: q.clone(),
            observations: d.nrows(),
            params: d.ncols(),
            null_dim,
            design: Some((d.clone(), y.clone())),
        }
    }

    /// Same system with the observations multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut s = self.clone();
        s.rhs *= c;
        s.yy *= c * c;
        if let Some((_, y)) = s.design.as_mut() {
            *y *= c;
        }
        s
    }

    pub fn fit(&self, alpha: f64) -> Result<AlphaFit> {
        let a = &self.gram + &self.penalty * alpha;
        let chol = Cholesky::new(a).ok_or_else(|| Error::Singular {
            iteration: None,
            group: 0,
            index: 0,
            min_eigenvalue: f64::NAN,
        })?;
        let theta = chol.solve(&self.rhs);
        let quad = self.yy - 2.0 * self.rhs.dot(&theta) + theta.dot(&(&self.gram * &theta));
        let eps2_f = match &self.design {
            Some((d, y)) if quad < 1e-6 * self.yy => (d * &theta - y).norm_squared(),
            _ => quad.max(0.0),
        };
        let eps2_q = theta.dot(&(&self.penalty * &theta)).max(0.0);
        Ok(AlphaFit {
            theta,
            eps2_f,
            eps2_q,
            chol,
        })
    }

    /// `Tr H = Tr((D^T D + alpha Q)^{-1} D^T D)`.
    pub fn trace_h(&self, fit: &AlphaFit) -> f64 {
        fit.solve(&self.gram).trace()
    }

    pub fn log_marginal(&self, alpha: f64, fit: &AlphaFit, e0: f64, v0: f64) -> f64 {
        let m = self.observations as f64;
        let n = self.null_dim as f64;
        let p = self.params as f64;
        let s = fit.eps2_f + v0 + alpha * (fit.eps2_q + e0);
        ((p - n) / 2.0 - 1.0) * alpha.ln() - (m - n) / 2.0 * s.ln() - 0.5 * fit.log_det()
    }

    pub fn point(&self, alpha: f64, e0: f64, v0: f64, zhat: f64) -> Result<AlphaPoint> {
        let fit = self.fit(alpha)?;
        let trace_h = self.trace_h(&fit);
        let m = self.observations as f64;
        let gcv = gcv_value(m, fit.eps2_f, trace_h).unwrap_or(f64::NAN);
        Ok(AlphaPoint {
            alpha,
            eps2_f: fit.eps2_f,
            eps2_q: fit.eps2_q,
            log_marginal: self.log_marginal(alpha, &fit, e0, v0),
            gcv,
            aic: aic_value(zhat, fit.eps2_f, trace_h),
            trace_h,
        })
    }

    pub fn profile(&self, grid: &[f64], e0: f64, v0: f64, zhat: f64) -> Result<Vec<AlphaPoint>> {
        grid.iter().map(|a| self.point(*a, e0, v0, zhat)).collect()
    }

    pub fn marginal_alpha_logpdf(&self, alpha: f64, e0: f64, v0: f64) -> Result<f64> {
        if !(alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
        }
        let fit = self.fit(alpha)?;
        Ok(self.log_marginal(alpha, &fit, e0, v0))
    }

    /// Shape and rate of `z | alpha`.
    pub fn marginal_z_given_alpha(&self, alpha: f64, e0: f64, v0: f64) -> Result<(f64, f64)> {
        if self.observations <= self.null_dim {
            return Err(Error::Degenerate(format!(
                "{} observations cannot support {} null modes",
                self.observations, self.null_dim
            )));
        }
        let fit = self.fit(alpha)?;
        let shape = (self.observations - self.null_dim) as f64 / 2.0;
        let rate = (fit.eps2_f + v0 + alpha * (fit.eps2_q + e0)) / 2.0;
        Ok((shape, rate))
    }

    pub fn gcv(&self, alpha: f64) -> Result<f64> {
        let fit = self.fit(alpha)?;
        gcv_value(self.observations as f64, fit.eps2_f, self.trace_h(&fit))
    }

    pub fn aic(&self, alpha: f64, zhat: f64) -> Result<f64> {
        let fit = self.fit(alpha)?;
        Ok(aic_value(zhat, fit.eps2_f, self.trace_h(&fit)))
    }
}

/// `GCV = M eps_f^2 / (M - Tr H)^2`.
pub fn gcv_value(m: f64, eps2_f: f64, trace_h: f64) -> Result<f64> {
    if trace_h >= m {
        return Err(Error::Degenerate(format!(
            "Tr H = {trace_h} reaches the sample count {m}"
        )));
    }
    Ok(m * eps2_f / (m - trace_h).powi(2))
}

/// `AIC = zhat eps_f^2 + 2 Tr H`.
pub fn aic_value(zhat: f64, eps2_f: f64, trace_h: f64) -> f64 {
    zhat * eps2_f + 2.0 * trace_h
}

pub fn argmax(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
}

pub fn argmin(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
}

/// Asymptotic kernel transform `(1 + alpha omega^{2n} / (V M phi))^{-1}`.
pub fn kernel_ft(omega: f64, alpha: f64, n: usize, volume: f64, m: f64, phi: f64) -> f64 {
    1.0 / (1.0 + alpha * omega.powi(2 * n as i32) / (volume * m * phi))
}

/// `G(x, y) = B(x)^T (D^T D / M + alpha Q / M)^{-1} B(y)` for a single-basis model.
pub struct EmpiricalKernel<'a> {
    basis: &'a SplineBasis,
    chol: Cholesky<f64, Dyn>,
    m: f64,
}

impl<'a> EmpiricalKernel<'a> {
    pub fn new(system: &AlphaSystem, basis: &'a SplineBasis, alpha: f64) -> Result<Self> {
        if basis.num_params() != system.params {
            return Err(Error::DimensionMismatch {
                expected: system.params,
                got: basis.num_params(),
            });
        }
        let m = system.observations as f64;
        let a = (&system.gram + &system.penalty * alpha) / m;
        let chol = Cholesky::new(a).ok_or_else(|| Error::Singular {
            iteration: None,
            group: 0,
            index: 0,
            min_eigenvalue: f64::NAN,
        })?;
        Ok(EmpiricalKernel { basis, chol, m })
    }

    pub fn value(&self, x: f64, y: f64) -> Result<f64> {
        let bx = DVector::from_vec(self.basis.basis_row(x, 0)?.values);
        let by = DVector::from_vec(self.basis.basis_row(y, 0)?.values);
        Ok(bx.dot(&self.chol.solve(&by)))
    }

    /// `M^{-1} sum_l G(t, t_l) Y_l`.
    pub fn smooth(&self, t: f64, points: &[f64], values: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (tl, yl) in points.iter().zip(values) {
            acc += self.value(t, *tl)? * yl;
        }
        Ok(acc / self.m)
    }
}

/// `MSE = M^{-1} { M^{-2} ||D K (lambda/z) Q theta0||^2 + z^{-1} Tr[(M^{-1} D K D^T)^2] }`
/// with `K = (z D^T D + lambda Q)^{-1} z M`.
pub fn expected_mse(
    theta0: &DVector<f64>,
    d: &DMatrix<f64>,
    q: &DMatrix<f64>,
    lambda: f64,
    z: f64,
) -> Result<MseTerms> {
    let m = d.nrows() as f64;
    let a = d.tr_mul(d) * z + q * lambda;
    let chol = Cholesky::new(a).ok_or_else(|| Error::Singular {
        iteration: None,
        group: 0,
        index: 0,
        min_eigenvalue: f64::NAN,
    })?;
    let k = chol.inverse() * (z * m);
    let dk = d * &k;
    let bias_vec = &dk * (q * theta0) * (lambda / z);
    let bias = bias_vec.norm_squared() / (m * m);
    let h = dk * d.transpose() / m;
    let variance = (&h * &h).trace() / z;
    Ok(MseTerms {
        bias: bias / m,
        variance: variance / m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseTerms {
    pub bias: f64,
    pub variance: f64,
}

impl MseTerms {
    pub fn total(&self) -> f64 {
        self.bias + self.variance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrFit {
    /// Decay time in sweeps; infinite when the trace does not decorrelate.
    pub tau: f64,
    pub lags_fitted: usize,
    pub decays: bool,
}

/// Normalized autocorrelation at lags `0..=max_lag`.
pub fn autocorrelation(trace: &[f64], max_lag: usize) -> Vec<f64> {
    let n = trace.len();
    let mean = trace.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = trace
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    if !(c0 > 0.0) {
        return vec![f64::NAN; max_lag + 1];
    }
    (0..=max_lag.min(n - 1)).map(|k| buf[k].re / c0).collect()
}

/// Fits `exp(-lag / tau)` to the leading positive autocorrelations of `trace`; `stride` is the
/// number of sweeps between stored values.
pub fn autocorr_time(trace: &[f64], stride: usize) -> Result<AutocorrFit> {
    if trace.len() < 100 {
        return Err(Error::Degenerate(format!(
            "autocorrelation needs at least 100 values, got {}",
            trace.len()
        )));
    }
    let max_lag = trace.len() / 4;
    let acf = autocorrelation(trace, max_lag);
    let infinite = AutocorrFit {
        tau: f64::INFINITY,
        lags_fitted: 0,
        decays: false,
    };
    if acf[0].is_nan() {
        return Ok(infinite);
    }
    let positive = acf[1..].iter().take_while(|v| **v > 0.0).count();
    if positive == 0 {
        return Ok(AutocorrFit {
            tau: 0.0,
            lags_fitted: 0,
            decays: true,
        });
    }
    if positive == max_lag {
        return Ok(AutocorrFit {
            lags_fitted: positive,
            ..infinite
        });
    }
    let lags = &acf[1..=positive];
    let sse = |ln_tau: f64| -> f64 {
        let tau = ln_tau.exp();
        lags.iter()
            .enumerate()
            .map(|(i, r)| (r - (-((i + 1) as f64) / tau).exp()).powi(2))
            .sum()
    };
    // golden-section search over ln tau
    let (mut a, mut b) = ((1e-3f64).ln(), (max_lag as f64).ln());
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (sse(c), sse(d));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = sse(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = sse(d);
        }
        if (b - a).abs() < 1e-12 {
            break;
        }
    }
    let tau = (0.5 * (a + b)).exp();
    if tau >= 0.999 * max_lag as f64 {
        return Ok(AutocorrFit {
            lags_fitted: positive,
            ..infinite
        });
    }
    Ok(AutocorrFit {
        tau: tau * stride as f64,
        lags_fitted: positive,
        decays: true,
    })
}

/// Discrete Fourier transform `sum_j w_j f_j exp(-i omega x_j)` (real part) of sampled values.
pub fn fourier_real(xs: &[f64], values: &[f64], weight: f64, omega: f64) -> f64 {
    xs.iter()
        .zip(values)
        .map(|(x, v)| weight * v * (omega * x).cos())
        .sum()
}

/// Angular frequencies `2 pi k / L` resolved by a period-`L` grid.
pub fn harmonic(k: usize, length: f64) -> f64 {
    2.0 * PI * k as f64 / length
}
