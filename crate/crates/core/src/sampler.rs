//! Gibbs sampling and conditional-mode iteration over `(theta, lambda, z)`.
//!
//! The posterior precision of `theta` is `sum_K lambda_K Q_K + sum_I z_I D_I^T D_I`, built
//! from per-variance-group sufficient statistics so a sweep never touches the full design
//! (except to recompute a residual when the quadratic form loses too many digits).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConstraintSet, DesignMatrix};
use crate::penalty::{PenaltyMatrix, RANK_TOLERANCE};
use crate::rng::{self, Purpose, Rng};

/// Prior on each penalty parameter `lambda_K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum LambdaPrior {
    /// `p(lambda) ~ lambda^{-1} exp(-lambda E0 / 2)`.
    #[serde(rename = "X")]
    ZeroPoint,
    /// `lambda | delta ~ Gamma(1, rate delta)`, `delta ~ Gamma(a, rate b)`.
    #[serde(rename = "Y")]
    Hierarchical { a: f64, b: f64 },
    /// `lambda ~ Gamma(1, scale b)`.
    #[serde(rename = "Z")]
    Fixed { b: f64 },
}

impl LambdaPrior {
    pub fn label(&self) -> String {
        match self {
            LambdaPrior::ZeroPoint => "X".into(),
            LambdaPrior::Hierarchical { .. } => "Y".into(),
            LambdaPrior::Fixed { b } => format!("Z{}", -b.log10().round() as i64),
        }
    }
}

/// Unnormalized zero-point prior density on `ln lambda`, `exp(-e^l E0 / 2)`, and its slope.
pub fn zero_point_log_lambda_density(ln_lambda: f64, e0: f64) -> (f64, f64) {
    let half = 0.5 * e0 * ln_lambda.exp();
    let g = (-half).exp();
    (g, -half * g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub e0: f64,
    pub v0: f64,
    pub lambda: LambdaPrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            e0: 1e-10,
            v0: 1e-10,
            lambda: LambdaPrior::ZeroPoint,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.e0.is_finite() && self.e0 >= 0.0 && self.v0.is_finite() && self.v0 >= 0.0) {
            return Err(Error::Config("E0 and V0 must be finite and nonnegative".into()));
        }
        let ok = match self.lambda {
            LambdaPrior::ZeroPoint => true,
            LambdaPrior::Hierarchical { a, b } => a > 0.0 && b > 0.0,
            LambdaPrior::Fixed { b } => b > 0.0 && b.is_finite(),
        };
        if !ok {
            return Err(Error::Config("lambda prior parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Sweep schedule: `burn_in` discarded sweeps, then `steps` sweeps of which every `thin`-th
/// is stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub burn_in: usize,
    pub steps: usize,
    pub thin: usize,
    pub seed: u64,
    #[serde(default)]
    pub chain: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            burn_in: 2500,
            steps: 25000,
            thin: 5,
            seed: 0,
            chain: 0,
        }
    }
}

impl Schedule {
    pub fn total_sweeps(&self) -> usize {
        self.burn_in + self.steps
    }
    pub fn stored(&self) -> usize {
        self.steps / self.thin
    }
    fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.steps == 0 || self.steps % self.thin != 0 {
            return Err(Error::Config(format!(
                "steps ({}) must be a positive multiple of thin ({})",
                self.steps, self.thin
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PenaltyBlock {
    pub offset: usize,
    pub matrix: DMatrix<f64>,
    /// The `n` of the `(p_K - n) / 2` exponent: the penalized derivative order.
    pub null_dim: usize,
}

impl PenaltyBlock {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    pub fn energy(&self, theta: &[f64]) -> f64 {
        let t = DVector::from_column_slice(&theta[self.offset..self.offset + self.dim()]);
        t.dot(&(&self.matrix * &t)).max(0.0)
    }
    /// `(p_K - n) / 2`, the exponent the Gaussian prior contributes to `lambda_K`.
    pub fn half_dof(&self) -> f64 {
        (self.dim() - self.null_dim) as f64 / 2.0
    }
}

/// Everything a sweep needs: design sufficient statistics, penalties and constraints.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub design: &'a DesignMatrix,
    pub penalties: Vec<PenaltyBlock>,
    pub constraints: ConstraintSet,
    grams: Vec<DMatrix<f64>>,
    rhs: Vec<DVector<f64>>,
    yy: Vec<f64>,
    rows: Vec<Vec<usize>>,
    constraint_matrix: DMatrix<f64>,
}

/// Relative size below which a quadratic-form residual is recomputed directly.
const CANCELLATION: f64 = 1e-6;

impl<'a> Problem<'a> {
    pub fn new(
        design: &'a DesignMatrix,
        penalties: &[&PenaltyMatrix],
        constraints: ConstraintSet,
    ) -> Result<Self> {
        if penalties.len() != design.num_groups() {
            return Err(Error::DimensionMismatch {
                expected: design.num_groups(),
                got: penalties.len(),
            });
        }
        let blocks: Vec<PenaltyBlock> = penalties
            .iter()
            .enumerate()
            .map(|(k, q)| PenaltyBlock {
                offset: design.group_offsets[k],
                matrix: q.matrix.clone(),
                null_dim: q.config.derivative_order,
            })
            .collect();
        for (k, b) in blocks.iter().enumerate() {
            if b.dim() != design.group_range(k).len() {
                return Err(Error::DimensionMismatch {
                    expected: design.group_range(k).len(),
                    got: b.dim(),
                });
            }
        }
        Self::from_blocks(design, blocks, constraints)
    }

    pub fn from_blocks(
        design: &'a DesignMatrix,
        penalties: Vec<PenaltyBlock>,
        constraints: ConstraintSet,
    ) -> Result<Self> {
        let ng = design.num_variance_groups;
        let mut rows = vec![Vec::new(); ng];
        for (row, g) in design.row_groups.iter().enumerate() {
            rows[*g].push(row);
        }
        let p = design.num_params();
        let mut grams = Vec::with_capacity(ng);
        let mut rhs = Vec::with_capacity(ng);
        let mut yy = Vec::with_capacity(ng);
        for idx in &rows {
            let (di, yi) = if ng == 1 {
                (design.matrix.clone(), design.targets.clone())
            } else {
                (
                    design.matrix.select_rows(idx.iter()),
                    design.targets.select_rows(idx.iter()),
                )
            };
            let mut g = DMatrix::zeros(p, p);
            g.gemm_tr(1.0, &di, &di, 0.0);
            grams.push(g);
            rhs.push(di.tr_mul(&yi));
            yy.push(yi.norm_squared());
        }
        let constraint_matrix = constraints.matrix();
        Ok(Problem {
            design,
            penalties,
            constraints,
            grams,
            rhs,
            yy,
            rows,
            constraint_matrix,
        })
    }

    pub fn num_params(&self) -> usize {
        self.design.num_params()
    }
    pub fn num_variance_groups(&self) -> usize {
        self.rows.len()
    }
    pub fn rows_in_group(&self, i: usize) -> usize {
        self.rows[i].len()
    }
    pub fn gram(&self, i: usize) -> &DMatrix<f64> {
        &self.grams[i]
    }
    pub fn total_gram(&self) -> DMatrix<f64> {
        let mut g = self.grams[0].clone();
        for other in &self.grams[1..] {
            g += other;
        }
        g
    }

    /// `sum_I z_I D_I^T D_I + sum_K lambda_K Q_K` and `sum_I z_I D_I^T Y_I`.
    pub fn precision(&self, lambda: &[f64], z: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.num_params();
        let mut prec = DMatrix::zeros(p, p);
        let mut b = DVector::zeros(p);
        for (i, zi) in z.iter().enumerate() {
            prec.zip_apply(&self.grams[i], |a, g| *a += zi * g);
            b.axpy(*zi, &self.rhs[i], 1.0);
        }
        for (k, block) in self.penalties.iter().enumerate() {
            let n = block.dim();
            let mut view = prec.view_mut((block.offset, block.offset), (n, n));
            let lk = lambda[k];
            view.zip_apply(&block.matrix, |a, q| *a += lk * q);
        }
        (prec, b)
    }

    fn singular_error(&self, prec: &DMatrix<f64>, iteration: Option<usize>) -> Error {
        let eig = SymmetricEigen::new(prec.clone());
        let (imin, vmin) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, v)| (i, *v))
            .unwrap_or((0, 0.0));
        let v = eig.eigenvectors.column(imin);
        let worst = v.iamax();
        let group = (0..self.design.num_groups())
            .find(|k| self.design.group_range(*k).contains(&worst))
            .unwrap_or(0);
        Error::Singular {
            iteration,
            group,
            index: worst - self.design.group_offsets[group],
            min_eigenvalue: vmin,
        }
    }

    /// Distribution of `theta | lambda, z`, restricted to the constraint surface.
    pub fn conditional_theta(&self, lambda: &[f64], z: &[f64]) -> Result<ThetaConditional> {
        let (mut prec, b) = self.precision(lambda, z);
        let constrained = !self.constraints.is_empty();
        if constrained {
            // the quadratic form is unchanged on A theta = 0, so conditioning stays exact
            let scale = prec.trace() / prec.nrows() as f64;
            let a = &self.constraint_matrix;
            prec += a.tr_mul(a) * scale;
        }
        let chol = match Cholesky::new(prec.clone()) {
            Some(c) if pivots_ok(&c) => c,
            _ => return Err(self.singular_error(&prec, None)),
        };
        let raw_mean = chol.solve(&b);
        let correction = if constrained {
            let w = chol.solve(&self.constraint_matrix.transpose());
            let s = &self.constraint_matrix * &w;
            let s_inv = s.try_inverse().ok_or_else(|| self.singular_error(&prec, None))?;
            Some((w, s_inv))
        } else {
            None
        };
        let mut cond = ThetaConditional {
            mean: raw_mean,
            chol,
            correction,
            constraints: self.constraints.clone(),
            a: self.constraint_matrix.clone(),
        };
        let mut mean = cond.mean.clone();
        cond.project(&mut mean);
        cond.mean = mean;
        Ok(cond)
    }

    /// Residual sums of squares `||D_I theta - Y_I||^2` per variance group.
    pub fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        let t = DVector::from_column_slice(theta);
        let mut direct: Option<DVector<f64>> = None;
        (0..self.rows.len())
            .map(|i| {
                let quad = self.yy[i] - 2.0 * self.rhs[i].dot(&t) + t.dot(&(&self.grams[i] * &t));
                if quad > CANCELLATION * self.yy[i] {
                    return quad;
                }
                let pred = direct.get_or_insert_with(|| &self.design.matrix * &t);
                self.rows[i]
                    .iter()
                    .map(|row| (pred[*row] - self.design.targets[*row]).powi(2))
                    .sum()
            })
            .collect()
    }

    pub fn energies(&self, theta: &[f64]) -> Vec<f64> {
        self.penalties.iter().map(|b| b.energy(theta)).collect()
    }

    /// Scale-equivariant starting point: `z_I = n_I / (|Y_I|^2 + V0)`, `lambda_K = mean(z)`.
    pub fn initial_state(&self, prior: &PriorConfig) -> GibbsState {
        let z: Vec<f64> = (0..self.rows.len())
            .map(|i| self.rows[i].len() as f64 / (self.yy[i] + prior.v0).max(f64::MIN_POSITIVE))
            .collect();
        let zbar = z.iter().sum::<f64>() / z.len() as f64;
        let lambda = vec![zbar; self.penalties.len()];
        let delta = match prior.lambda {
            LambdaPrior::Hierarchical { a, b } => vec![a / b; self.penalties.len()],
            _ => Vec::new(),
        };
        GibbsState {
            theta: vec![0.0; self.num_params()],
            lambda,
            z,
            delta,
        }
    }
}

/// Squared-pivot ratio below which a factorization is treated as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-14;

fn pivots_ok(chol: &Cholesky<f64, Dyn>) -> bool {
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
        (lo.min(d * d), hi.max(d * d))
    });
    lo.is_finite() && lo > PIVOT_TOLERANCE * hi
}

pub struct ThetaConditional {
    pub mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    correction: Option<(DMatrix<f64>, DMatrix<f64>)>,
    constraints: ConstraintSet,
    a: DMatrix<f64>,
}

impl ThetaConditional {
    fn project(&self, theta: &mut DVector<f64>) {
        if let Some((w, s_inv)) = &self.correction {
            let at = &self.a * &*theta;
            *theta -= w * (s_inv * at);
            self.constraints.apply(theta.as_mut_slice());
        }
    }

    /// `ln |Sigma^{-1}|` of the (regularized) precision.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn draw(&self, rng: &mut Rng) -> DVector<f64> {
        let p = self.mean.len();
        let xi = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let l = self.chol.l_dirty();
        // L^T e = xi gives e ~ N(0, (L L^T)^{-1}); only the lower triangle of l_dirty is valid
        let noise = l
            .lower_triangle()
            .tr_solve_lower_triangular(&xi)
            .expect("Cholesky factor has a positive diagonal");
        // the stored mean is already projected; the projection is linear and idempotent
        let mut theta = &self.mean + noise;
        self.project(&mut theta);
        theta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsState {
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub z: Vec<f64>,
    /// Hyper-parameters `delta_K` of the hierarchical family (empty otherwise).
    pub delta: Vec<f64>,
}

pub fn gamma_draw(rng: &mut Rng, shape: f64, rate: f64) -> f64 {
    let g = Gamma::new(shape, 1.0).expect("positive gamma shape");
    g.sample(rng) / rate
}

/// Shape and rate of `z_I | theta`.
pub fn z_conditional(rows: usize, residual: f64, v0: f64) -> (f64, f64) {
    (rows as f64 / 2.0, (v0 + residual) / 2.0)
}

/// Shape and rate of `lambda_K | theta (, delta)` for the given family.
pub fn lambda_conditional(half_dof: f64, energy: f64, prior: &PriorConfig, delta: Option<f64>) -> (f64, f64) {
    match prior.lambda {
        LambdaPrior::ZeroPoint => (half_dof, (energy + prior.e0) / 2.0),
        LambdaPrior::Hierarchical { .. } => (half_dof + 1.0, delta.unwrap_or(0.0) + energy / 2.0),
        LambdaPrior::Fixed { b } => (half_dof + 1.0, 1.0 / b + energy / 2.0),
    }
}

pub fn draw_z(problem: &Problem, theta: &[f64], v0: f64, rng: &mut Rng) -> Vec<f64> {
    problem
        .residuals(theta)
        .iter()
        .enumerate()
        .map(|(i, res)| {
            let (shape, rate) = z_conditional(problem.rows_in_group(i), *res, v0);
            gamma_draw(rng, shape, rate)
        })
        .collect()
}

/// Draws every `lambda_K` (and `delta_K` for the hierarchical family) in place.
pub fn draw_lambda(
    problem: &Problem,
    theta: &[f64],
    prior: &PriorConfig,
    state: &mut GibbsState,
    rng: &mut Rng,
) {
    for (k, block) in problem.penalties.iter().enumerate() {
        let energy = block.energy(theta);
        let delta = state.delta.get(k).copied();
        let (shape, rate) = lambda_conditional(block.half_dof(), energy, prior, delta);
        state.lambda[k] = gamma_draw(rng, shape, rate);
        if let LambdaPrior::Hierarchical { a, b } = prior.lambda {
            state.delta[k] = gamma_draw(rng, a + 1.0, b + state.lambda[k]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub iteration: usize,
    pub lambda: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Chain {
    pub draws: Vec<Draw>,
    /// `E[theta | lambda, z]` for each stored draw.
    #[serde(skip)]
    pub conditional_means: Vec<Vec<f64>>,
    pub theta_mean: Vec<f64>,
    /// Covariance of the raw `theta` draws at the stored sweeps.
    #[serde(skip)]
    pub theta_cov: Option<DMatrix<f64>>,
    pub schedule: Schedule,
    pub prior: PriorConfig,
    pub constraints: ConstraintSet,
    pub final_state: GibbsState,
}

impl Chain {
    pub fn lambda_trace(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.lambda[k]).collect()
    }
    pub fn z_trace(&self, i: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.z[i]).collect()
    }
    pub fn lambda_mean(&self) -> Vec<f64> {
        let n = self.draws.len() as f64;
        (0..self.final_state.lambda.len())
            .map(|k| self.draws.iter().map(|d| d.lambda[k]).sum::<f64>() / n)
            .collect()
    }
    /// Posterior mean of the noise variance `1 / z_I`.
    pub fn sigma2_mean(&self) -> Vec<f64> {
        let n = self.draws.len() as f64;
        (0..self.final_state.z.len())
            .map(|i| self.draws.iter().map(|d| 1.0 / d.z[i]).sum::<f64>() / n)
            .collect()
    }
}

/// Largest magnitude a precision or penalty parameter may reach before the chain is declared
/// divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e250;

fn check_state(state: &GibbsState, iteration: usize) -> Result<()> {
    for (name, vals) in [("lambda", &state.lambda), ("z", &state.z)] {
        if let Some((k, v)) = vals
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0 && **v < DIVERGENCE_LIMIT))
        {
            return Err(Error::Diverged {
                iteration,
                detail: format!("{name}[{k}] = {v:e}"),
            });
        }
    }
    Ok(())
}

fn with_iteration(err: Error, sweep: usize) -> Error {
    match err {
        Error::Singular {
            group,
            index,
            min_eigenvalue,
            ..
        } => Error::Singular {
            iteration: Some(sweep),
            group,
            index,
            min_eigenvalue,
        },
        other => other,
    }
}

pub fn run_gibbs(problem: &Problem, prior: &PriorConfig, schedule: &Schedule) -> Result<Chain> {
    prior.validate()?;
    schedule.validate()?;
    let mut rng = rng::stream(schedule.seed, Purpose::Chain, schedule.chain);
    let mut state = problem.initial_state(prior);
    let p = problem.num_params();
    let mut draws = Vec::with_capacity(schedule.stored());
    let mut means = Vec::with_capacity(schedule.stored());
    let mut sum = DVector::zeros(p);
    let mut sum_sq = DMatrix::zeros(p, p);

    for sweep in 1..=schedule.total_sweeps() {
        let cond = problem
            .conditional_theta(&state.lambda, &state.z)
            .map_err(|e| with_iteration(e, sweep))?;
        let theta = cond.draw(&mut rng);
        if sweep > schedule.burn_in && (sweep - schedule.burn_in) % schedule.thin == 0 {
            draws.push(Draw {
                iteration: sweep,
                lambda: state.lambda.clone(),
                z: state.z.clone(),
            });
            means.push(cond.mean.as_slice().to_vec());
            sum += &theta;
            sum_sq.ger(1.0, &theta, &theta, 1.0);
        }
        let theta = theta.as_slice().to_vec();
        state.z = draw_z(problem, &theta, prior.v0, &mut rng);
        draw_lambda(problem, &theta, prior, &mut state, &mut rng);
        state.theta = theta;
        check_state(&state, sweep)?;
    }

    let n = means.len() as f64;
    let theta_mean: Vec<f64> = (0..p)
        .map(|j| means.iter().map(|m| m[j]).sum::<f64>() / n)
        .collect();
    let mean_draw = &sum / n;
    let cov = if n > 1.0 {
        Some((sum_sq - &mean_draw * mean_draw.transpose() * n) / (n - 1.0))
    } else {
        None
    };
    Ok(Chain {
        draws,
        conditional_means: means,
        theta_mean,
        theta_cov: cov,
        schedule: *schedule,
        prior: *prior,
        constraints: problem.constraints.clone(),
        final_state: state,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub z: Vec<f64>,
    pub iterations: usize,
    pub last_change: f64,
}

fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

fn vector_change(old: &[f64], new: &[f64]) -> f64 {
    let diff: f64 = old
        .iter()
        .zip(new)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = new.iter().map(|v| v * v).sum::<f64>().sqrt();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Iterates every parameter to its conditional mode: `theta` to the conditional mean,
/// `z_I = (n_I - 2) / (V0 + eps_f^2)`, `lambda_K = (p_K - n - 2) / (eps_Q^2 + E0)` for the
/// zero-point family (the corresponding modes for the others).
pub fn mle_fit(problem: &Problem, prior: &PriorConfig, tol: f64, max_iter: usize) -> Result<MleFit> {
    prior.validate()?;
    for (i, rows) in problem.rows.iter().enumerate() {
        if rows.len() <= 2 {
            return Err(Error::Config(format!(
                "variance group {i} needs more than 2 rows"
            )));
        }
    }
    let mut state = problem.initial_state(prior);
    let mut theta = vec![0.0; problem.num_params()];
    let mut change = f64::INFINITY;
    for iter in 1..=max_iter {
        let cond = problem
            .conditional_theta(&state.lambda, &state.z)
            .map_err(|e| with_iteration(e, iter))?;
        let new_theta = cond.mean.as_slice().to_vec();
        let z: Vec<f64> = problem
            .residuals(&new_theta)
            .iter()
            .enumerate()
            .map(|(i, res)| {
                let (shape, rate) = z_conditional(problem.rows_in_group(i), *res, prior.v0);
                (shape - 1.0) / rate
            })
            .collect();
        let mut lambda = state.lambda.clone();
        let mut delta = state.delta.clone();
        for (k, block) in problem.penalties.iter().enumerate() {
            let (shape, rate) = lambda_conditional(
                block.half_dof(),
                block.energy(&new_theta),
                prior,
                delta.get(k).copied(),
            );
            if shape <= 1.0 {
                return Err(Error::Config(format!(
                    "group {k} has no conditional mode for lambda (needs p > n + 2)"
                )));
            }
            lambda[k] = (shape - 1.0) / rate;
            if let LambdaPrior::Hierarchical { a, b } = prior.lambda {
                delta[k] = a / (b + lambda[k]);
            }
        }
        let candidate = GibbsState {
            theta: new_theta.clone(),
            lambda: lambda.clone(),
            z: z.clone(),
            delta: delta.clone(),
        };
        check_state(&candidate, iter)?;
        change = relative_change(&state.lambda, &lambda)
            .max(relative_change(&state.z, &z))
            .max(vector_change(&theta, &new_theta));
        theta = new_theta;
        state = candidate;
        if change < tol {
            return Ok(MleFit {
                theta,
                lambda: state.lambda,
                z: state.z,
                iterations: iter,
                last_change: change,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        last_change: change,
        last: Box::new(MleFit {
            theta,
            lambda: state.lambda,
            z: state.z,
            iterations: max_iter,
            last_change: change,
        }),
    })
}

/// Minimum-norm least squares with the penalty switched off, iterating the noise precisions.
pub fn gls_fit(problem: &Problem, prior: &PriorConfig, tol: f64, max_iter: usize) -> Result<MleFit> {
    let mut z = problem.initial_state(prior).z;
    let mut theta = vec![0.0; problem.num_params()];
    let mut change = f64::INFINITY;
    let zero = vec![0.0; problem.penalties.len()];
    for iter in 1..=max_iter {
        let (prec, b) = problem.precision(&zero, &z);
        let eig = SymmetricEigen::new(prec);
        let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let proj = eig.eigenvectors.tr_mul(&b);
        let scaled =
            DVector::from_iterator(
                proj.len(),
                proj.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| {
                    if *l > RANK_TOLERANCE * max {
                        c / l
                    } else {
                        0.0
                    }
                }),
            );
        let mut new_theta = (&eig.eigenvectors * scaled).as_slice().to_vec();
        problem.constraints.apply(&mut new_theta);
        let new_z: Vec<f64> = problem
            .residuals(&new_theta)
            .iter()
            .enumerate()
            .map(|(i, res)| {
                let (shape, rate) = z_conditional(problem.rows_in_group(i), *res, prior.v0);
                (shape - 1.0).max(f64::MIN_POSITIVE) / rate
            })
            .collect();
        change = relative_change(&z, &new_z).max(vector_change(&theta, &new_theta));
        theta = new_theta;
        z = new_z;
        if change < tol || problem.num_variance_groups() == 1 && iter >= 2 {
            return Ok(MleFit {
                theta,
                lambda: zero,
                z,
                iterations: iter,
                last_change: change,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        last_change: change,
        last: Box::new(MleFit {
            theta,
            lambda: zero,
            z,
            iterations: max_iter,
            last_change: change,
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    PosteriorMean,
    Mle,
    Gls,
}

pub const MLE_TOLERANCE: f64 = 1e-8;
pub const MLE_MAX_ITER: usize = 500;
