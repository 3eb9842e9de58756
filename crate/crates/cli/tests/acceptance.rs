//! Acceptance criteria, one line each. Run with `cargo test -p stringfit-cli --test acceptance`.

use std::f64::consts::LN_2;
use std::num::NonZeroUsize;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use gauss_quad::GaussLegendre;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Gamma};
use stringfit::benchmark::{compare_estimators, run_study, Family, LjStudy, StudyId, StudySpec};
use stringfit::bspline::{Edge, SplineBasis};
use stringfit::datagen::{gen_scalar, ScalarBenchmark, TestFunction};
use stringfit::diagnostics::{
    argmax, argmin, default_alpha_grid, expected_mse, kernel_ft, AlphaPoint, AlphaSystem, EmpiricalKernel,
    AIC_DEFAULT_ZHAT,
};
use stringfit::model::{detect_constraints, AdditiveModel, ModelConfig};
use stringfit::penalty::{assemble_penalty, PenaltyConfig};
use stringfit::rng::{self, Purpose};
use stringfit::sampler::{draw_lambda, draw_z, zero_point_log_lambda_density, PriorConfig, Problem};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn design(basis: &SplineBasis, xs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), basis.num_params(), |l, i| {
        basis.basis_row(xs[l], 0).unwrap().values[i]
    })
}

fn scalar_data(function: TestFunction, samples: usize, sigma: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let s = gen_scalar(&ScalarBenchmark {
        function,
        samples,
        sigma,
        scale: 1.0,
        seed,
    })
    .unwrap();
    (
        s.inputs.iter().map(|x| x[0]).collect(),
        s.outputs.iter().map(|y| y[0]).collect(),
    )
}

/// `V^{-1} int kappa x^k A_n(x)^T A_n(x) dx` by 64-point Gauss-Legendre on every knot interval.
fn quadrature_penalty(basis: &SplineBasis, config: PenaltyConfig) -> DMatrix<f64> {
    let quad = GaussLegendre::new(NonZeroUsize::new(64).unwrap());
    let p = basis.num_params();
    let (x0, x1) = (basis.origin(), basis.origin() + basis.length());
    let mut breaks = vec![x0];
    let mut u = basis.u_min().floor() + 1.0;
    while u < basis.u_max() {
        breaks.push(basis.x_of_u(u));
        u += 1.0;
    }
    breaks.push(x1);
    let k = config.density_exponent as i32;
    let volume = config.density_scale * (x1.powi(k + 1) - x0.powi(k + 1)) / (k + 1) as f64;
    let mut q = DMatrix::zeros(p, p);
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a < 1e-14 * basis.knot_spacing() {
            continue;
        }
        for i in 0..p {
            for j in i..p {
                let v = quad.integrate(a, b, |x| {
                    let row = basis.basis_row(x.clamp(a, b), config.derivative_order).unwrap();
                    config.density_scale * x.powi(k) * row.values[i] * row.values[j]
                }) / volume;
                q[(i, j)] += v;
                if i != j {
                    q[(j, i)] += v;
                }
            }
        }
    }
    q
}

fn penalty_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for r in [2usize, 3, 4, 6] {
        for n in (1..=3).filter(|n| *n < r) {
            for k in [0u32, 2] {
                let basis = SplineBasis::aperiodic(r, 14, 0.5, 2.0, Edge::Free, Edge::Free).unwrap();
                let config = PenaltyConfig::with_density(n, k, 1.3);
                let q = assemble_penalty(&basis, config).unwrap().matrix;
                let oracle = quadrature_penalty(&basis, config);
                worst = worst.max((q - &oracle).amax() / oracle.amax());
                cases += 1;
            }
        }
    }
    outcome(
        worst < 1e-10,
        format!("{cases} (r,n,k) cases, max relative error {worst:.2e}"),
    )
}

fn null_space() -> Outcome {
    let p = 15;
    let mut worst_ratio: f64 = 0.0;
    let mut ranks_ok = true;
    for r in [2usize, 3, 4, 6] {
        for n in (1..=3).filter(|n| *n < r) {
            let basis = SplineBasis::aperiodic(r, p, -1.0, 2.0, Edge::Free, Edge::Free).unwrap();
            let q = assemble_penalty(&basis, PenaltyConfig::new(n)).unwrap();
            let eig = SymmetricEigen::new(q.matrix.clone()).eigenvalues;
            let lmax = eig.amax();
            let rank = eig.iter().filter(|e| e.abs() > 1e-10 * lmax).count();
            ranks_ok &= rank == p - n && q.rank == p - n;
            // coefficients of x^d by least squares on a dense grid (the basis reproduces them)
            let xs: Vec<f64> = (0..400).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / 400.0).collect();
            let d = design(&basis, &xs);
            for deg in 0..n {
                let y = DVector::from_iterator(xs.len(), xs.iter().map(|x| x.powi(deg as i32)));
                let theta = d.clone().svd(true, true).solve(&y, 1e-14).unwrap();
                let e = theta.dot(&(&q.matrix * &theta));
                worst_ratio = worst_ratio.max(e.abs() / (theta.norm_squared() * lmax));
            }
        }
    }
    outcome(
        worst_ratio < 1e-14 && ranks_ok,
        format!("max thetaQtheta/(|theta|^2 |Q|) {worst_ratio:.1e}, ranks p-n: {ranks_ok}"),
    )
}

fn prior_sigmoid() -> Outcome {
    let mut worst: f64 = 0.0;
    for e0 in [1e-10, 1.0, 1e10] {
        let ell = (2.0 * LN_2).ln() - f64::ln(e0);
        let (g, slope) = zero_point_log_lambda_density(ell, e0);
        // finite-difference slope as an independent check of the analytic derivative
        let h = 1e-5;
        let fd = (zero_point_log_lambda_density(ell + h, e0).0
            - zero_point_log_lambda_density(ell - h, e0).0)
            / (2.0 * h);
        worst = worst.max((g - 0.5).abs()).max((slope + LN_2 / 2.0).abs());
        if (fd - slope).abs() > 1e-8 {
            return outcome(false, format!("E0={e0}: slope {slope} vs finite difference {fd}"));
        }
    }
    outcome(
        worst < 1e-12,
        format!("max deviation {worst:.1e} over E0 in 1e-10, 1, 1e10"),
    )
}

/// Asymptotic Kolmogorov-Smirnov p-value.
fn ks_pvalue(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    let l = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * l * l).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

/// Mean and variance within 4 standard errors and a KS test against `Gamma(shape, rate)`.
fn check_gamma(draws: &mut [f64], shape: f64, rate: f64) -> (bool, String) {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let (mu, sigma2) = (shape / rate, shape / (rate * rate));
    // fourth central moment of a gamma: sigma^4 (3 + 6 / shape)
    let var_se = (sigma2 * sigma2 * (2.0 + 6.0 / shape) / n).sqrt();
    let mean_z = (mean - mu) / (sigma2 / n).sqrt();
    let var_z = (var - sigma2) / var_se;
    draws.sort_by(f64::total_cmp);
    let law = Gamma::new(shape, rate).unwrap();
    let p = ks_pvalue(draws, |x| law.cdf(x));
    (
        mean_z.abs() < 4.0 && var_z.abs() < 4.0 && p > 0.01,
        format!("mean {mean_z:+.2} SE, var {var_z:+.2} SE, KS p {p:.2}"),
    )
}

fn conditional_draws() -> Outcome {
    let samples = gen_scalar(&ScalarBenchmark {
        function: TestFunction::F3,
        samples: 50,
        sigma: 0.5,
        scale: 1.0,
        seed: 0,
    })
    .unwrap();
    let model = AdditiveModel::from_config(&ModelConfig::scalar(
        TestFunction::F3.default_basis(),
        PenaltyConfig::new(2),
    ))
    .unwrap();
    let d = model.build_design(&samples).unwrap();
    let problem = Problem::new(&d, &model.penalties(), detect_constraints(&d)).unwrap();
    let prior = PriorConfig {
        e0: 0.3,
        v0: 0.2,
        ..Default::default()
    };
    let theta = problem.conditional_theta(&[2.0], &[4.0]).unwrap().mean;
    let theta = theta.as_slice();

    // the oracle laws from first principles
    let resid = (&d.targets - &d.matrix * DVector::from_column_slice(theta)).norm_squared();
    let q = &model.groups[0].penalty.matrix;
    let t = DVector::from_column_slice(theta);
    let energy = t.dot(&(q * &t));
    let (m, p) = (50.0, 20.0);
    // n in the (p - n) / 2 exponent is the penalized derivative order
    let null_dim = 2.0;

    let draws = 100_000;
    let mut rng = rng::stream(0, Purpose::Test, 100);
    let mut zs: Vec<f64> = (0..draws)
        .map(|_| draw_z(&problem, theta, prior.v0, &mut rng)[0])
        .collect();
    let mut state = problem.initial_state(&prior);
    let mut lambdas: Vec<f64> = (0..draws)
        .map(|_| {
            draw_lambda(&problem, theta, &prior, &mut state, &mut rng);
            state.lambda[0]
        })
        .collect();
    let (zok, zmsg) = check_gamma(&mut zs, m / 2.0, (resid + prior.v0) / 2.0);
    let (lok, lmsg) = check_gamma(&mut lambdas, (p - null_dim) / 2.0, (energy + prior.e0) / 2.0);
    outcome(zok && lok, format!("z: {zmsg}; lambda: {lmsg}"))
}

fn scale_sweep() -> Outcome {
    let spec = StudySpec::new(StudyId::FigSScale);
    let result = match run_study(&spec) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("study failed: {e}")),
    };
    let sigma = spec.sigmas[0];
    let ratios = |label: &str| -> Vec<f64> {
        let base = result.cell(label, 1.0, sigma).unwrap().rmse_median;
        spec.scales
            .iter()
            .map(|c| result.cell(label, *c, sigma).unwrap().rmse_median / base)
            .collect()
    };
    let within = |r: &[f64]| r.iter().all(|v| (0.5..=2.0).contains(v));
    let (x, z2, z6) = (ratios("X"), ratios("Z2"), ratios("Z6"));
    let fmt = |r: &[f64]| r.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join("/");
    outcome(
        within(&x) && !within(&z2) && !within(&z6),
        format!(
            "median ratio to scale 1: X {} (band {}), Z2 {} (violates {}), Z6 {} (violates {})",
            fmt(&x),
            within(&x),
            fmt(&z2),
            !within(&z2),
            fmt(&z6),
            !within(&z6)
        ),
    )
}

fn degenerate_polynomial() -> Outcome {
    let mut spec = StudySpec::new(StudyId::Fig1Linear);
    spec.sigmas = vec![0.1, 1.0];
    spec.families = vec![Family::x(), Family::x_without_floor()];
    let sweeps = spec.schedule.total_sweeps();
    let result = match run_study(&spec) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("study failed: {e}")),
    };
    let x: Vec<_> = result.rows.iter().filter(|r| r.family == "X").collect();
    let x_ok = x
        .iter()
        .filter(|r| r.status == "ok" && r.lambda_mean.is_finite())
        .count();
    let floorless: Vec<_> = result.rows.iter().filter(|r| r.family == "X-E0=0").collect();
    let detected = floorless.iter().filter(|r| r.status != "ok").count();
    outcome(
        x_ok == x.len() && x.len() == 40 && detected == floorless.len(),
        format!(
            "X: {x_ok}/{} chains complete {sweeps} sweeps with finite lambda; E0=0: {detected}/{} failures detected",
            x.len(),
            floorless.len()
        ),
    )
}

fn mse_formula() -> Outcome {
    let (xs, _) = scalar_data(TestFunction::F3, 50, 0.0, 0);
    let basis = TestFunction::F3.default_basis().build().unwrap();
    let q = assemble_penalty(&basis, PenaltyConfig::new(2)).unwrap().matrix;
    let d = design(&basis, &xs);
    let theta0 = DVector::from_iterator(20, (0..20).map(|i| (0.9 * i as f64).sin() + 0.1 * i as f64));
    let (lambda, z) = (0.8, 4.0);
    let terms = expected_mse(&theta0, &d, &q, lambda, z).unwrap();
    let chol = (d.tr_mul(&d) * z + &q * lambda).cholesky().unwrap();
    let y0 = &d * &theta0;
    let mut rng = rng::stream(0, Purpose::Test, 101);
    let trials = 2000;
    let errs: Vec<f64> = (0..trials)
        .map(|_| {
            let eps = DVector::from_iterator(50, (0..50).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let y = &y0 + eps / z.sqrt();
            let theta = chol.solve(&(d.tr_mul(&y) * z));
            (&y0 - &d * theta).norm_squared() / 50.0
        })
        .collect();
    let mean = errs.iter().sum::<f64>() / trials as f64;
    let se =
        (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials - 1) as f64 / trials as f64).sqrt();
    let dev = (mean - terms.total()) / se;

    // a linear function lies in the null space of an aperiodic second-derivative penalty
    let aperiodic = TestFunction::F1.default_basis().build().unwrap();
    let qa = assemble_penalty(&aperiodic, PenaltyConfig::new(2))
        .unwrap()
        .matrix;
    let da = design(&aperiodic, &xs);
    let linear = DVector::from_vec(aperiodic.linear_coefficients(0.0, 1.0 / 1.758));
    let bias = expected_mse(&linear, &da, &qa, 5.0, 2.0).unwrap().bias;
    outcome(
        dev.abs() < 3.0 && bias < 1e-25,
        format!("Monte Carlo vs closed form {dev:+.2} SE; null-space bias {bias:.1e}"),
    )
}

fn selector_cells(xs: &[f64], ys: &[f64]) -> (usize, usize, usize, usize, usize) {
    let samples = stringfit::model::SampleSet::scalar(xs, ys);
    let model = AdditiveModel::from_config(&ModelConfig::scalar(
        TestFunction::F3.default_basis(),
        PenaltyConfig::new(2),
    ))
    .unwrap();
    let d = model.build_design(&samples).unwrap();
    let problem = Problem::new(&d, &model.penalties(), detect_constraints(&d)).unwrap();
    let system = AlphaSystem::from_problem(&problem);
    let grid = default_alpha_grid();
    let prior = PriorConfig::default();
    let base = system
        .profile(&grid, prior.e0, prior.v0, AIC_DEFAULT_ZHAT)
        .unwrap();
    let scaled = system
        .scaled(1e3)
        .profile(&grid, prior.e0, prior.v0, AIC_DEFAULT_ZHAT)
        .unwrap();
    let col = |p: &[AlphaPoint], f: fn(&AlphaPoint) -> f64| p.iter().map(f).collect::<Vec<_>>();
    (
        argmin(&col(&base, |p| p.gcv)).unwrap(),
        argmin(&col(&scaled, |p| p.gcv)).unwrap(),
        argmin(&col(&base, |p| p.aic)).unwrap(),
        argmin(&col(&scaled, |p| p.aic)).unwrap(),
        argmax(&col(&base, |p| p.log_marginal)).unwrap(),
    )
}

fn selector_relations() -> Outcome {
    let grid = default_alpha_grid();
    let (xs, ys) = scalar_data(TestFunction::F3, 20, 0.5, 0);
    let (g, gs, a, as_, marg) = selector_cells(&xs, &ys);
    let pass = g == gs && a != as_ && marg <= g;
    // how typical the benchmark realization is
    let mut held = 0;
    let seeds = 10;
    for seed in 0..seeds {
        let (xs, ys) = scalar_data(TestFunction::F3, 20, 0.5, seed);
        let (g, gs, a, as_, marg) = selector_cells(&xs, &ys);
        held += (g == gs && a != as_ && marg <= g) as usize;
    }
    outcome(
        pass,
        format!(
            "GCV alpha {:.2e} -> {:.2e}, AIC {:.2e} -> {:.2e} under Y*1e3, marginal argmax {:.2e}; all three hold on {held}/{seeds} seeds",
            grid[g], grid[gs], grid[a], grid[as_], grid[marg]
        ),
    )
}

fn resolution_independence() -> Outcome {
    let (xs, ys) = scalar_data(TestFunction::F3, 50, 0.5, 0);
    let dense: Vec<f64> = (0..2000).map(|i| -3.0 + 6.0 * i as f64 / 2000.0).collect();
    let alpha = 0.1;
    let levels = [40usize, 80, 160, 320];
    let mut curves = Vec::new();
    let mut rmse = Vec::new();
    for p in levels {
        let basis = SplineBasis::periodic(4, p, -3.0, 6.0).unwrap();
        let q = assemble_penalty(&basis, PenaltyConfig::new(2)).unwrap().matrix;
        let system = AlphaSystem::new(&design(&basis, &xs), &DVector::from_vec(ys.clone()), &q, 2);
        let theta = system.fit(alpha).unwrap().theta;
        let v: Vec<f64> = dense
            .iter()
            .map(|x| basis.evaluate(theta.as_slice(), *x, 0).unwrap())
            .collect();
        let e = dense
            .iter()
            .zip(&v)
            .map(|(x, f)| (f - TestFunction::F3.eval(*x)).powi(2))
            .sum::<f64>();
        rmse.push((e / dense.len() as f64).sqrt());
        curves.push(v);
    }
    let diffs: Vec<f64> = curves
        .windows(2)
        .map(|w| {
            (w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / dense.len() as f64).sqrt()
        })
        .collect();
    // least-squares slope of log(change) against log(h)
    let lx: Vec<f64> = levels[..3].iter().map(|p| (6.0 / *p as f64).ln()).collect();
    let ly: Vec<f64> = diffs.iter().map(|d| d.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / 3.0, ly.iter().sum::<f64>() / 3.0);
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let change = (rmse[3] - rmse[2]).abs() / rmse[2];
    outcome(
        (slope - 4.0).abs() <= 0.7 && change < 0.05,
        format!(
            "refinement slope {slope:.2} (order 4), RMSE {:.5} -> {:.5} at the finest levels ({:.1e} change)",
            rmse[2], rmse[3], change
        ),
    )
}

fn kernel_checks() -> Outcome {
    // 1 / (1 + alpha omega^{2n} / (V M phi)) at points where the ratio is 0, 1 and 3
    let (alpha, n, v, m, phi) = (40.0, 2, 10.0, 400.0, 0.1);
    let at = |ratio: f64| kernel_ft((ratio * v * m * phi / alpha).powf(0.25), alpha, n, v, m, phi);
    let ft_err = (at(0.0) - 1.0)
        .abs()
        .max((at(1.0) - 0.5).abs())
        .max((at(3.0) - 0.25).abs());

    let (xs, ys) = scalar_data(TestFunction::F3, 40, 0.3, 1);
    let basis = TestFunction::F3.default_basis().build().unwrap();
    let q = assemble_penalty(&basis, PenaltyConfig::new(2)).unwrap().matrix;
    let system = AlphaSystem::new(&design(&basis, &xs), &DVector::from_vec(ys.clone()), &q, 2);
    let kernel = EmpiricalKernel::new(&system, &basis, 0.5).unwrap();
    let theta = system.fit(0.5).unwrap().theta;
    let mut recon: f64 = 0.0;
    for t in [-2.9, -1.0, 0.0, 0.77, 2.5] {
        let direct = basis.evaluate(theta.as_slice(), t, 0).unwrap();
        recon = recon.max((direct - kernel.smooth(t, &xs, &ys).unwrap()).abs());
    }

    // uniform design commensurate with the knots: G(t, s) = G(s, t) = G(t + h, s + h)
    let p = 20;
    let length = 6.0;
    let uniform: Vec<f64> = (0..4 * p)
        .map(|l| -3.0 + length * l as f64 / (4 * p) as f64)
        .collect();
    let sys_u = AlphaSystem::new(&design(&basis, &uniform), &DVector::zeros(4 * p), &q, 2);
    let ku = EmpiricalKernel::new(&sys_u, &basis, 0.5).unwrap();
    let h = basis.knot_spacing();
    let wrap = |x: f64| -3.0 + (x + 3.0).rem_euclid(length);
    let mut sym: f64 = 0.0;
    for t in [-2.7, -0.4, 1.3] {
        for s in [-1.9, 0.2, 2.8] {
            let g = ku.value(t, s).unwrap();
            sym = sym.max((g - ku.value(s, t).unwrap()).abs());
            for j in 1..4 {
                let shift = j as f64 * h;
                sym = sym.max((g - ku.value(wrap(t + shift), wrap(s + shift)).unwrap()).abs());
            }
        }
    }
    outcome(
        ft_err < 1e-12 && recon < 1e-10 && sym < 1e-10,
        format!("transform error {ft_err:.1e}, reconstruction {recon:.1e}, symmetry {sym:.1e}"),
    )
}

fn force_matching() -> Outcome {
    let lj = LjStudy::default();
    let rows = match compare_estimators(&lj, 0) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("study failed: {e}")),
    };
    let err = |m: usize, est: &str| {
        rows.iter()
            .find(|r| r.m == m && r.estimator == est && r.pair == "AB")
            .map_or(f64::NAN, |r| r.error)
    };
    let ms = &lj.sample_sizes;
    let posterior: Vec<f64> = ms.iter().map(|m| err(*m, "posterior-mean")).collect();
    let mle: Vec<f64> = ms.iter().map(|m| err(*m, "mle")).collect();
    let gls = err(ms[0], "gls");
    let beats_mle = posterior[0] <= mle[0] && posterior[1] <= mle[1];
    let inversions = posterior.windows(2).filter(|w| !(w[1] < w[0])).count();
    let gls_ok = gls <= mle[0];
    let fmt = |v: &[f64]| v.iter().map(|e| format!("{e:.3}")).collect::<Vec<_>>().join("/");
    outcome(
        beats_mle && inversions <= 1 && gls_ok,
        format!(
            "AB error at M {ms:?}: posterior {} MLE {} GLS(M={}) {gls:.3}; posterior<=MLE at two smallest M: {beats_mle}, decreasing ({inversions} inversions): {}, GLS<=MLE: {gls_ok}",
            fmt(&posterior),
            fmt(&mle),
            ms[0],
            inversions <= 1
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_stringfit"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    match status.status.code() {
        Some(0) | Some(6) => Ok(()),
        code => Err(format!(
            "{args:?} exited {code:?}: {}",
            String::from_utf8_lossy(&status.stderr)
        )),
    }
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let path = |name: &str| root.join(name).to_string_lossy().into_owned();
    std::fs::write(
        root.join("scalar.json"),
        r#"{"kind":"scalar","function":"f3","samples":50,"sigma":0.5,"seed":7}"#,
    )
    .unwrap();
    std::fs::write(
        root.join("lj.json"),
        r#"{"kind":"lennard-jones","particles":32,"type_a":16,"cell_length":3.745,"cross_coupling":0.5,"temperature":0.7917,"time_step":0.001461,"friction":0.01,"equilibration":2000,"stride":100,"configs":4,"force_noise":60.91,"switch_width":0.4,"seed":3}"#,
    )
    .unwrap();
    let short = ["--burn-in", "100", "--steps", "500", "--thin", "5"];
    let runs: Vec<(&str, Vec<String>)> = vec![
        (
            "simulate-scalar",
            vec!["simulate".into(), "--config".into(), path("scalar.json")],
        ),
        (
            "simulate-lj",
            vec!["simulate".into(), "--config".into(), path("lj.json")],
        ),
        (
            "fit",
            [
                "fit",
                "--data",
                &path("simulate-scalar-0/samples.csv"),
                "--seed",
                "5",
            ]
            .iter()
            .map(|s| s.to_string())
            .chain(short.iter().map(|s| s.to_string()))
            .collect(),
        ),
        (
            "fit-gls",
            [
                "fit",
                "--data",
                &path("simulate-scalar-0/samples.csv"),
                "--estimator",
                "gls",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        ),
        (
            "diagnose",
            vec![
                "diagnose".into(),
                "--data".into(),
                path("simulate-scalar-0/samples.csv"),
            ],
        ),
        (
            "bench",
            ["bench", "--study", "fig3-sinusoid", "--replicates", "2"]
                .iter()
                .map(|s| s.to_string())
                .chain(short.iter().map(|s| s.to_string()))
                .collect(),
        ),
    ];
    let mut compared = 0;
    for (name, args) in &runs {
        for rep in 0..2 {
            let out = path(&format!("{name}-{rep}"));
            let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
            full.extend(["--out", &out]);
            if let Err(e) = run_cli(&full) {
                return outcome(false, e);
            }
        }
        let a = csv_files(&root.join(format!("{name}-0")));
        let b = csv_files(&root.join(format!("{name}-1")));
        if a.is_empty() || a != b {
            return outcome(false, format!("{name}: outputs differ between identical runs"));
        }
        compared += a.len();
    }
    outcome(
        true,
        format!(
            "{} commands run twice, {compared} CSV files byte-identical",
            runs.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("penalty matrix matches quadrature", penalty_exactness),
        ("penalty null space and rank", null_space),
        ("zero-point prior sigmoid on ln lambda", prior_sigmoid),
        ("conditional gamma laws for z and lambda", conditional_draws),
        ("scale sweep", scale_sweep),
        ("degenerate polynomial stability", degenerate_polynomial),
        ("closed-form expected MSE", mse_formula),
        ("GCV / AIC / marginal selector relations", selector_relations),
        ("force-matching estimator comparison", force_matching),
        ("resolution independence", resolution_independence),
        ("smoothing kernel identities", kernel_checks),
        ("CLI determinism", determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut passed = 0;
    let mut run = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        run += 1;
        passed += result.pass as usize;
        println!(
            "criterion {:>2} {}: {} [{:.1} s] {}",
            i + 1,
            name,
            if result.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            result.detail
        );
    }
    println!("acceptance: {passed}/{run} criteria pass");
    if passed != run {
        std::process::exit(1);
    }
}
