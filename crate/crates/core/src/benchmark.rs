//! Method-comparison studies: prior families on the scalar test functions, the overall-scale
//! sweep, and posterior mean vs conditional-mode estimation on force matching.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bspline::BasisSpec;
use crate::datagen::{
    gen_force_samples, gen_scalar, langevin_simulate, lj_basis_spec, lj_model_config, lj_potential_splines,
    pair_distances, LjConfig, ScalarBenchmark, TestFunction, PAIR_TYPES, SPLINE_RANGE,
};
use crate::diagnostics::autocorr_time;
use crate::error::{Error, Result};
use crate::model::{detect_constraints, AdditiveModel, ModelConfig, SampleSet};
use crate::penalty::PenaltyConfig;
use crate::sampler::{
    gls_fit, mle_fit, run_gibbs, Chain, Estimator, LambdaPrior, MleFit, PriorConfig, Problem, Schedule,
    MLE_MAX_ITER, MLE_TOLERANCE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StudyId {
    #[serde(rename = "fig1-linear")]
    Fig1Linear,
    #[serde(rename = "fig3-sinusoid")]
    Fig3Sinusoid,
    #[serde(rename = "figS-scale")]
    FigSScale,
    #[serde(rename = "fig-sample-lj")]
    FigSampleLj,
}

impl StudyId {
    pub fn name(self) -> &'static str {
        match self {
            StudyId::Fig1Linear => "fig1-linear",
            StudyId::Fig3Sinusoid => "fig3-sinusoid",
            StudyId::FigSScale => "figS-scale",
            StudyId::FigSampleLj => "fig-sample-lj",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            Self::Fig1Linear,
            Self::Fig3Sinusoid,
            Self::FigSScale,
            Self::FigSampleLj,
        ]
        .into_iter()
        .find(|id| id.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown study {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub label: String,
    pub prior: PriorConfig,
}

impl Family {
    pub fn x() -> Self {
        Family {
            label: "X".into(),
            prior: PriorConfig::default(),
        }
    }
    pub fn y() -> Self {
        Family {
            label: "Y".into(),
            prior: PriorConfig {
                lambda: LambdaPrior::Hierarchical { a: 1e-4, b: 1e-4 },
                ..PriorConfig::default()
            },
        }
    }
    pub fn z(b: f64) -> Self {
        let prior = PriorConfig {
            lambda: LambdaPrior::Fixed { b },
            ..PriorConfig::default()
        };
        Family {
            label: prior.lambda.label(),
            prior,
        }
    }
    /// Family X with the zero-point energy removed.
    pub fn x_without_floor() -> Self {
        Family {
            label: "X-E0=0".into(),
            prior: PriorConfig {
                e0: 0.0,
                ..PriorConfig::default()
            },
        }
    }
    pub fn standard() -> Vec<Family> {
        vec![Family::x(), Family::y(), Family::z(1e-2), Family::z(1e-6)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LjStudy {
    pub system: LjConfig,
    pub sample_sizes: Vec<usize>,
    pub schedule: Schedule,
    pub prior: PriorConfig,
}

impl Default for LjStudy {
    fn default() -> Self {
        LjStudy {
            system: LjConfig::default(),
            sample_sizes: vec![25, 50, 100, 200],
            schedule: Schedule {
                burn_in: 500,
                steps: 5000,
                thin: 5,
                seed: 0,
                chain: 0,
            },
            prior: PriorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub study: StudyId,
    pub function: TestFunction,
    pub samples: usize,
    pub replicates: usize,
    pub sigmas: Vec<f64>,
    pub scales: Vec<f64>,
    pub families: Vec<Family>,
    pub seed_base: u64,
    pub schedule: Schedule,
    #[serde(default)]
    pub lj: Option<LjStudy>,
}

impl StudySpec {
    pub fn new(study: StudyId) -> Self {
        let scalar = |function, samples, sigmas: Vec<f64>, scales: Vec<f64>| StudySpec {
            study,
            function,
            samples,
            replicates: 20,
            sigmas,
            scales,
            families: Family::standard(),
            seed_base: 0,
            schedule: Schedule::default(),
            lj: None,
        };
        match study {
            StudyId::Fig1Linear => scalar(TestFunction::F1, 20, vec![0.1, 0.5, 1.0], vec![1.0]),
            StudyId::Fig3Sinusoid => scalar(TestFunction::F3, 20, vec![0.1, 0.5, 1.0], vec![1.0]),
            StudyId::FigSScale => scalar(TestFunction::F3, 50, vec![0.5], vec![1.0, 1e2, 1e4, 1e6]),
            StudyId::FigSampleLj => StudySpec {
                lj: Some(LjStudy::default()),
                families: vec![Family::x()],
                ..scalar(TestFunction::F3, 0, vec![], vec![])
            },
        }
    }

    /// The full `1e-9 ... 1e9` sweep.
    pub fn full_scale_sweep() -> Vec<f64> {
        (-9..=9).map(|e| 10f64.powi(e)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.study == StudyId::FigSampleLj {
            let lj = self
                .lj
                .as_ref()
                .ok_or_else(|| Error::Config("force study needs an lj block".into()))?;
            if lj.sample_sizes.is_empty() || lj.sample_sizes.iter().any(|m| *m == 0) {
                return Err(Error::Config("sample sizes must be positive".into()));
            }
            return lj.system.validate();
        }
        if self.replicates == 0
            || self.families.is_empty()
            || self.sigmas.is_empty()
            || self.scales.is_empty()
        {
            return Err(Error::Config("study grid is empty".into()));
        }
        if self.scales.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::Config("scales must be positive".into()));
        }
        Ok(())
    }
}

/// One chain of a scalar study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub study: String,
    pub family: String,
    pub scale: f64,
    pub sigma: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub replicate: usize,
    /// RMSE at the sample points divided by the scale.
    pub rmse_norm: f64,
    /// Posterior mean of `1/z` divided by the squared scale.
    pub sigma2_hat: f64,
    pub lambda_mean: f64,
    pub tau_lambda: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub family: String,
    pub scale: f64,
    pub sigma: f64,
    pub completed: usize,
    pub failed: usize,
    pub rmse_q1: f64,
    pub rmse_median: f64,
    pub rmse_q3: f64,
    pub lambda_median: f64,
    pub tau_mean: f64,
    pub tau_sd: f64,
}

/// Error of one estimator on one pair function at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    #[serde(rename = "M")]
    pub m: usize,
    pub estimator: String,
    pub pair: String,
    /// Mean squared deviation from the true `E'` over the observed pair distances.
    pub error: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub summary: Vec<CellSummary>,
    pub estimators: Vec<EstimatorRow>,
}

impl StudyResult {
    pub fn cell(&self, family: &str, scale: f64, sigma: f64) -> Option<&CellSummary> {
        self.summary
            .iter()
            .find(|c| c.family == family && c.scale == scale && c.sigma == sigma)
    }

    pub fn estimator_error(&self, m: usize, estimator: &str, pair: &str) -> Option<f64> {
        self.estimators
            .iter()
            .find(|r| r.m == m && r.estimator == estimator && r.pair == pair)
            .map(|r| r.error)
    }
}

/// Linear-interpolation quantile of finite values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn status_label(err: &Error) -> String {
    match err {
        Error::Diverged { .. } => "diverged",
        Error::Singular { .. } => "singular",
        Error::NotConverged { .. } => "not-converged",
        Error::Degenerate(_) => "degenerate",
        _ => "error",
    }
    .into()
}

/// A fitted model and whichever estimator produced `theta`.
#[derive(Debug, Clone)]
pub struct Fit {
    pub theta: Vec<f64>,
    pub chain: Option<Chain>,
    pub mode: Option<MleFit>,
    pub constraint_count: usize,
}

/// Builds the design for `samples` and runs the requested estimator.
pub fn fit_model(
    model: &AdditiveModel,
    samples: &SampleSet,
    prior: &PriorConfig,
    schedule: &Schedule,
    estimator: Estimator,
) -> Result<Fit> {
    let design = model.build_design(samples)?;
    let constraints = detect_constraints(&design);
    let constraint_count = constraints.count();
    let problem = Problem::new(&design, &model.penalties(), constraints)?;
    match estimator {
        Estimator::PosteriorMean => {
            let chain = run_gibbs(&problem, prior, schedule)?;
            Ok(Fit {
                theta: chain.theta_mean.clone(),
                chain: Some(chain),
                mode: None,
                constraint_count,
            })
        }
        Estimator::Mle | Estimator::Gls => {
            let fit = if estimator == Estimator::Mle {
                mle_fit(&problem, prior, MLE_TOLERANCE, MLE_MAX_ITER)?
            } else {
                gls_fit(&problem, prior, MLE_TOLERANCE, MLE_MAX_ITER)?
            };
            Ok(Fit {
                theta: fit.theta.clone(),
                chain: None,
                mode: Some(fit),
                constraint_count,
            })
        }
    }
}

pub fn scalar_model(basis: BasisSpec) -> Result<AdditiveModel> {
    AdditiveModel::from_config(&ModelConfig::scalar(basis, PenaltyConfig::new(2)))
}

struct Cell {
    family: usize,
    scale: f64,
    sigma: f64,
    replicate: usize,
}

fn run_cell(spec: &StudySpec, model: &AdditiveModel, cell: &Cell) -> StudyRow {
    let family = &spec.families[cell.family];
    let mut row = StudyRow {
        study: spec.study.name().into(),
        family: family.label.clone(),
        scale: cell.scale,
        sigma: cell.sigma,
        m: spec.samples,
        replicate: cell.replicate,
        rmse_norm: f64::NAN,
        sigma2_hat: f64::NAN,
        lambda_mean: f64::NAN,
        tau_lambda: f64::NAN,
        status: "ok".into(),
    };
    let bench = ScalarBenchmark {
        function: spec.function,
        samples: spec.samples,
        sigma: cell.sigma,
        scale: cell.scale,
        seed: spec.seed_base + cell.replicate as u64,
    };
    let schedule = Schedule {
        seed: spec.seed_base,
        chain: cell.replicate as u64,
        ..spec.schedule
    };
    let outcome = gen_scalar(&bench).and_then(|samples| {
        fit_model(
            model,
            &samples,
            &family.prior,
            &schedule,
            Estimator::PosteriorMean,
        )
        .map(|f| (samples, f))
    });
    match outcome {
        Ok((samples, fit)) => {
            let basis = &model.groups[0].basis;
            let c = cell.scale;
            let mut sq = 0.0;
            for x in &samples.inputs {
                let v = basis.evaluate(&fit.theta, x[0], 0).unwrap_or(f64::NAN);
                sq += (v / c - spec.function.eval(x[0])).powi(2);
            }
            row.rmse_norm = (sq / samples.len() as f64).sqrt();
            let chain = fit.chain.expect("posterior mean keeps its chain");
            row.sigma2_hat = chain.sigma2_mean()[0] / (c * c);
            row.lambda_mean = chain.lambda_mean()[0];
            row.tau_lambda =
                autocorr_time(&chain.lambda_trace(0), spec.schedule.thin).map_or(f64::NAN, |a| a.tau);
        }
        Err(e) => row.status = status_label(&e),
    }
    row
}

fn summarize(spec: &StudySpec, rows: &[StudyRow]) -> Vec<CellSummary> {
    let mut out = Vec::new();
    for family in &spec.families {
        for scale in &spec.scales {
            for sigma in &spec.sigmas {
                let cell: Vec<&StudyRow> = rows
                    .iter()
                    .filter(|r| r.family == family.label && r.scale == *scale && r.sigma == *sigma)
                    .collect();
                let ok: Vec<&&StudyRow> = cell.iter().filter(|r| r.status == "ok").collect();
                let rmse: Vec<f64> = ok.iter().map(|r| r.rmse_norm).collect();
                let lambda: Vec<f64> = ok.iter().map(|r| r.lambda_mean).collect();
                let tau: Vec<f64> = ok
                    .iter()
                    .map(|r| r.tau_lambda)
                    .filter(|t| t.is_finite())
                    .collect();
                let tau_mean = tau.iter().sum::<f64>() / tau.len() as f64;
                let tau_sd = if tau.len() > 1 {
                    (tau.iter().map(|t| (t - tau_mean).powi(2)).sum::<f64>() / (tau.len() - 1) as f64).sqrt()
                } else {
                    f64::NAN
                };
                out.push(CellSummary {
                    family: family.label.clone(),
                    scale: *scale,
                    sigma: *sigma,
                    completed: ok.len(),
                    failed: cell.len() - ok.len(),
                    rmse_q1: quantile(&rmse, 0.25),
                    rmse_median: quantile(&rmse, 0.5),
                    rmse_q3: quantile(&rmse, 0.75),
                    lambda_median: quantile(&lambda, 0.5),
                    tau_mean,
                    tau_sd,
                });
            }
        }
    }
    out
}

/// Runs every (family, scale, sigma, replicate) cell; failures are recorded in `status`.
pub fn run_study(spec: &StudySpec) -> Result<StudyResult> {
    spec.validate()?;
    if let (StudyId::FigSampleLj, Some(lj)) = (spec.study, &spec.lj) {
        return Ok(StudyResult {
            estimators: compare_estimators(lj, spec.seed_base)?,
            ..Default::default()
        });
    }
    let model = scalar_model(spec.function.default_basis())?;
    let mut cells = Vec::new();
    for family in 0..spec.families.len() {
        for scale in &spec.scales {
            for sigma in &spec.sigmas {
                for replicate in 0..spec.replicates {
                    cells.push(Cell {
                        family,
                        scale: *scale,
                        sigma: *sigma,
                        replicate,
                    });
                }
            }
        }
    }
    let rows: Vec<StudyRow> = cells.par_iter().map(|c| run_cell(spec, &model, c)).collect();
    let summary = summarize(spec, &rows);
    Ok(StudyResult {
        rows,
        summary,
        estimators: Vec::new(),
    })
}

/// Simulated force-matching data for the largest requested sample size.
pub struct ForceData {
    pub samples: SampleSet,
    pub theta_true: Vec<f64>,
    pub model: AdditiveModel,
    pub cell_length: f64,
}

pub fn force_data(lj: &LjStudy, seed: u64) -> Result<ForceData> {
    let configs = lj.sample_sizes.iter().copied().max().unwrap_or(0);
    let system = LjConfig {
        configs,
        seed,
        ..lj.system
    };
    let trajectory = langevin_simulate(&system)?;
    let basis = lj_basis_spec().build()?;
    let theta_true = lj_potential_splines(&system, &basis)?.stacked();
    let forces = gen_force_samples(&trajectory, &theta_true, system.force_noise, seed)?;
    let model = AdditiveModel::from_config(&lj_model_config(system.cell_length))?;
    Ok(ForceData {
        samples: forces.samples,
        theta_true,
        model,
        cell_length: system.cell_length,
    })
}

/// Mean squared deviation of each pair function from the truth over the observed distances.
pub fn pair_errors(data: &ForceData, samples: &SampleSet, theta: &[f64]) -> Result<Vec<f64>> {
    PAIR_TYPES
        .iter()
        .enumerate()
        .map(|(k, (_, types))| {
            let dists: Vec<f64> = pair_distances(samples, data.cell_length, *types)
                .into_iter()
                .filter(|t| *t < SPLINE_RANGE.1)
                .collect();
            let mut sq = 0.0;
            for t in &dists {
                let fit = data.model.evaluate_group(k, theta, *t)?;
                let truth = data.model.evaluate_group(k, &data.theta_true, *t)?;
                sq += (fit - truth).powi(2);
            }
            Ok(sq / dists.len().max(1) as f64)
        })
        .collect()
}

/// Posterior mean, conditional modes and unpenalized least squares at each sample size.
pub fn compare_estimators(lj: &LjStudy, seed: u64) -> Result<Vec<EstimatorRow>> {
    let data = force_data(lj, seed)?;
    let schedule = Schedule { seed, ..lj.schedule };
    let jobs: Vec<(usize, Estimator)> = lj
        .sample_sizes
        .iter()
        .flat_map(|m| [Estimator::PosteriorMean, Estimator::Mle, Estimator::Gls].map(|e| (*m, e)))
        .collect();
    let rows: Vec<Vec<EstimatorRow>> = jobs
        .par_iter()
        .map(|(m, estimator)| {
            let subset = data.samples.subset(*m);
            let label = match estimator {
                Estimator::PosteriorMean => "posterior-mean",
                Estimator::Mle => "mle",
                Estimator::Gls => "gls",
            };
            let fit = fit_model(&data.model, &subset, &lj.prior, &schedule, *estimator);
            let (theta, status) = match fit {
                Ok(f) => (Some(f.theta), "ok".to_string()),
                Err(Error::NotConverged { last, .. }) => (Some(last.theta), "not-converged".into()),
                Err(e) => (None, status_label(&e)),
            };
            let errors = match &theta {
                Some(t) => pair_errors(&data, &subset, t).unwrap_or_else(|_| vec![f64::NAN; 3]),
                None => vec![f64::NAN; 3],
            };
            PAIR_TYPES
                .iter()
                .zip(errors)
                .map(|((pair, _), error)| EstimatorRow {
                    m: *m,
                    estimator: label.into(),
                    pair: (*pair).into(),
                    error,
                    status: status.clone(),
                })
                .collect()
        })
        .collect();
    Ok(rows.concat())
}
