use std::path::Path;

use serde::{Deserialize, Serialize};
use stringfit::benchmark::{run_study, LjStudy, StudyId, StudySpec};
use stringfit::bspline::{BasisSpec, Edge};
use stringfit::datagen::{
    gen_force_samples, gen_scalar, langevin_simulate, lj_basis_spec, lj_model_config, lj_potential_splines,
    LjConfig, ScalarBenchmark,
};
use stringfit::diagnostics::{argmax, argmin, autocorr_time, log_grid, AlphaSystem, AIC_DEFAULT_ZHAT};
use stringfit::io;
use stringfit::model::{detect_constraints, AdditiveModel, ModelConfig, SampleSet};
use stringfit::penalty::PenaltyConfig;
use stringfit::sampler::{
    gls_fit, mle_fit, run_gibbs, Estimator, LambdaPrior, PriorConfig, Problem, Schedule, MLE_MAX_ITER,
    MLE_TOLERANCE,
};

use crate::manifest::RunManifest;
use crate::{BenchArgs, DiagnoseArgs, Failure, FitArgs, PriorArgs, ScheduleArgs, SimulateArgs};

type CmdResult = Result<(), Failure>;

/// The JSON accepted by `fit` and `diagnose`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_estimator")]
    pub estimator: Estimator,
}

fn default_estimator() -> Estimator {
    Estimator::PosteriorMean
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SimulateConfig {
    Scalar(ScalarBenchmark),
    LennardJones(LjConfig),
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// Cubic, 20 coefficients over the data range, second-derivative penalty.
fn default_scalar_config(samples: &SampleSet) -> Result<FitConfig, Failure> {
    if !samples.types.is_empty() {
        return Err(Failure::Config("particle data needs a --config model".into()));
    }
    let (lo, hi) = samples
        .inputs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
            (a.min(x[0]), b.max(x[0]))
        });
    if !(hi > lo) {
        return Err(Failure::Input("data need at least two distinct inputs".into()));
    }
    let basis = BasisSpec::Aperiodic {
        order: 4,
        num_params: 20,
        origin: lo,
        length: hi - lo,
        left: Edge::Free,
        right: Edge::Free,
    };
    Ok(FitConfig {
        model: ModelConfig::scalar(basis, PenaltyConfig::new(2)),
        prior: PriorConfig::default(),
        schedule: Schedule::default(),
        estimator: Estimator::PosteriorMean,
    })
}

fn parse_list(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Config(format!("bad number {v:?}")))
        })
        .collect()
}

fn apply_prior(prior: &mut PriorConfig, args: &PriorArgs) -> CmdResult {
    if let Some(e0) = args.e0 {
        prior.e0 = e0;
    }
    if let Some(v0) = args.v0 {
        prior.v0 = v0;
    }
    let params = args.prior_param.as_deref().map(parse_list).transpose()?;
    if let Some(family) = &args.prior {
        prior.lambda = match (family.as_str(), params.as_deref()) {
            ("X", None) => LambdaPrior::ZeroPoint,
            ("Y", None) => LambdaPrior::Hierarchical { a: 1e-4, b: 1e-4 },
            ("Y", Some([a, b])) => LambdaPrior::Hierarchical { a: *a, b: *b },
            ("Z", None) => LambdaPrior::Fixed { b: 1e-2 },
            ("Z", Some([b])) => LambdaPrior::Fixed { b: *b },
            _ => {
                return Err(Failure::Config(format!(
                    "cannot use prior {family} with {:?}",
                    args.prior_param
                )))
            }
        };
    } else if params.is_some() {
        return Err(Failure::Config("--prior-param needs --prior".into()));
    }
    prior.validate()?;
    Ok(())
}

fn apply_schedule(schedule: &mut Schedule, args: &ScheduleArgs, seed: Option<u64>) {
    if let Some(v) = args.burn_in {
        schedule.burn_in = v;
    }
    if let Some(v) = args.steps {
        schedule.steps = v;
    }
    if let Some(v) = args.thin {
        schedule.thin = v;
    }
    if let Some(s) = seed {
        schedule.seed = s;
    }
}

fn group_header(model: &AdditiveModel, prefix: &str) -> Vec<String> {
    model
        .groups
        .iter()
        .map(|g| format!("{prefix}_{}", g.name))
        .collect()
}

fn write_theta(path: &Path, model: &AdditiveModel, theta: &[f64]) -> CmdResult {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::Io(e.to_string()))?;
    let io_err = |e: csv::Error| Failure::Io(e.to_string());
    w.write_record(["group", "index", "theta"]).map_err(io_err)?;
    for g in &model.groups {
        for i in 0..g.basis.num_params() {
            w.write_record([g.name.clone(), i.to_string(), theta[g.offset + i].to_string()])
                .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| Failure::Io(e.to_string()))?;
    Ok(())
}

/// Each group's function on 201 points across its domain.
fn write_curves(path: &Path, model: &AdditiveModel, theta: &[f64]) -> CmdResult {
    let mut rows = Vec::new();
    for (k, g) in model.groups.iter().enumerate() {
        for i in 0..=200 {
            let t = g.basis.origin() + g.basis.length() * i as f64 / 200.0;
            let v = model.evaluate_group(k, theta, t)?;
            rows.push(vec![k as f64, t, v]);
        }
    }
    io::write_table(path, &["group".into(), "t".into(), "value".into()], &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct ConstraintReport {
    constrained_groups: Vec<String>,
    rank: usize,
    degenerate_directions: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct FitSummary {
    estimator: Estimator,
    samples: usize,
    rows: usize,
    params: usize,
    eps2_f: Vec<f64>,
    eps2_q: Vec<f64>,
    lambda: Vec<f64>,
    sigma2_hat: Vec<f64>,
    tau_lambda: Vec<Option<f64>>,
    iterations: Option<usize>,
    constraints: ConstraintReport,
}

pub fn fit(args: FitArgs) -> CmdResult {
    let samples = io::read_samples(&args.data)?;
    let mut config = match &args.common.config {
        Some(p) => load_json::<FitConfig>(p)?,
        None => default_scalar_config(&samples)?,
    };
    if let Some(e) = args.estimator {
        config.estimator = e.into();
    }
    apply_prior(&mut config.prior, &args.prior)?;
    apply_schedule(&mut config.schedule, &args.schedule, args.common.seed);
    let out = &args.common.out;
    RunManifest::new(
        "fit",
        args.common.config.as_deref(),
        &config,
        config.schedule.seed,
        out,
    )
    .with_input(&args.data)
    .write()?;

    let model = AdditiveModel::from_config(&config.model)?;
    let design = model.build_design(&samples)?;
    let constraints = detect_constraints(&design);
    let report = ConstraintReport {
        constrained_groups: constraints
            .constrained
            .iter()
            .map(|k| model.groups[*k].name.clone())
            .collect(),
        rank: constraints.rank,
        degenerate_directions: constraints.degenerate_directions(),
    };
    let problem = Problem::new(&design, &model.penalties(), constraints)?;

    let mut trace_rows = Vec::new();
    let (theta, lambda, sigma2, taus, iterations) = match config.estimator {
        Estimator::PosteriorMean => {
            let chain = run_gibbs(&problem, &config.prior, &config.schedule)?;
            for d in &chain.draws {
                let mut row = vec![d.iteration as f64];
                row.extend(&d.lambda);
                row.extend(&d.z);
                trace_rows.push(row);
            }
            let taus = (0..model.groups.len())
                .map(|k| {
                    autocorr_time(&chain.lambda_trace(k), config.schedule.thin)
                        .ok()
                        .map(|a| a.tau)
                })
                .collect();
            io::write_json(
                &out.join("chain.json"),
                &serde_json::json!({
                    "config": config,
                    "seed": config.schedule.seed,
                    "constraints": &report,
                    "stored_draws": chain.draws.len(),
                }),
            )?;
            (
                chain.theta_mean.clone(),
                chain.lambda_mean(),
                chain.sigma2_mean(),
                taus,
                None,
            )
        }
        Estimator::Mle | Estimator::Gls => {
            let f = if config.estimator == Estimator::Mle {
                mle_fit(&problem, &config.prior, MLE_TOLERANCE, MLE_MAX_ITER)?
            } else {
                gls_fit(&problem, &config.prior, MLE_TOLERANCE, MLE_MAX_ITER)?
            };
            let mut row = vec![f.iterations as f64];
            row.extend(&f.lambda);
            row.extend(&f.z);
            trace_rows.push(row);
            let sigma2 = f.z.iter().map(|z| 1.0 / z).collect();
            (
                f.theta.clone(),
                f.lambda.clone(),
                sigma2,
                vec![None; model.groups.len()],
                Some(f.iterations),
            )
        }
    };

    let mut header = vec!["iter".to_string()];
    header.extend(group_header(&model, "lambda"));
    header.extend((0..problem.num_variance_groups()).map(|i| format!("z_{i}")));
    io::write_table(&out.join("trace.csv"), &header, &trace_rows)?;
    write_theta(&out.join("theta.csv"), &model, &theta)?;
    write_curves(&out.join("curves.csv"), &model, &theta)?;
    let summary = FitSummary {
        estimator: config.estimator,
        samples: design.num_samples(),
        rows: design.matrix.nrows(),
        params: design.num_params(),
        eps2_f: problem.residuals(&theta),
        eps2_q: problem.energies(&theta),
        lambda,
        sigma2_hat: sigma2,
        tau_lambda: taus,
        iterations,
        constraints: report,
    };
    io::write_json(&out.join("summary.json"), &summary)?;

    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Failure::SelfCheck(
            "estimate contains non-finite coefficients".into(),
        ));
    }
    let scale = theta.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let means = problem.constraints.matrix() * nalgebra::DVector::from_column_slice(&theta);
    if means.iter().any(|m| m.abs() > 1e-10 * scale) {
        return Err(Failure::SelfCheck("constrained group means are not zero".into()));
    }
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Failure::Config(format!("alpha grid must be lo:hi:n, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi >= lo && n >= 1) {
        return Err(bad());
    }
    Ok(log_grid(lo, hi, n))
}

pub fn diagnose(args: DiagnoseArgs) -> CmdResult {
    let samples = io::read_samples(&args.data)?;
    let mut config = match &args.common.config {
        Some(p) => load_json::<FitConfig>(p)?,
        None => default_scalar_config(&samples)?,
    };
    apply_prior(&mut config.prior, &args.prior)?;
    let grid = parse_grid(args.alpha_grid.as_deref().unwrap_or("1e-6:1e6:121"))?;
    let zhat = args.zhat.unwrap_or(AIC_DEFAULT_ZHAT);
    let out = &args.common.out;
    let mut manifest = RunManifest::new(
        "diagnose",
        args.common.config.as_deref(),
        &serde_json::json!({ "fit": config, "alpha_grid": grid, "zhat": zhat }),
        args.common.seed.unwrap_or(0),
        out,
    );
    manifest = manifest.with_input(&args.data);
    manifest.write()?;

    let model = AdditiveModel::from_config(&config.model)?;
    let design = model.build_design(&samples)?;
    let problem = Problem::new(&design, &model.penalties(), detect_constraints(&design))?;
    let system = AlphaSystem::from_problem(&problem);
    let profile = system.profile(&grid, config.prior.e0, config.prior.v0, zhat)?;
    io::write_records(&out.join("alpha_profile.csv"), &profile)?;

    let column =
        |f: fn(&stringfit::diagnostics::AlphaPoint) -> f64| profile.iter().map(f).collect::<Vec<_>>();
    let best_marginal = argmax(&column(|p| p.log_marginal)).map(|i| grid[i]);
    let best_gcv = argmin(&column(|p| p.gcv)).map(|i| grid[i]);
    let best_aic = argmin(&column(|p| p.aic)).map(|i| grid[i]);
    let sigma2_at_marginal = best_marginal
        .map(|a| system.marginal_z_given_alpha(a, config.prior.e0, config.prior.v0))
        .transpose()?
        .map(|(shape, rate)| rate / shape);
    io::write_json(
        &out.join("diagnose_summary.json"),
        &serde_json::json!({
            "alpha_marginal": best_marginal,
            "alpha_gcv": best_gcv,
            "alpha_aic": best_aic,
            "sigma2_at_marginal": sigma2_at_marginal,
            "observations": system.observations,
            "null_dim": system.null_dim,
        }),
    )?;

    for w in profile.windows(2) {
        let tol = 1e-8;
        if w[1].eps2_f < w[0].eps2_f * (1.0 - tol) - 1e-300
            || w[1].eps2_q > w[0].eps2_q * (1.0 + tol) + 1e-300
        {
            return Err(Failure::SelfCheck(format!(
                "smoothing trade-off not monotone between alpha {} and {}",
                w[0].alpha, w[1].alpha
            )));
        }
    }
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> CmdResult {
    let mut config = match &args.common.config {
        Some(p) => load_json::<SimulateConfig>(p)?,
        None => SimulateConfig::LennardJones(LjConfig::default()),
    };
    if let Some(seed) = args.common.seed {
        match &mut config {
            SimulateConfig::Scalar(b) => b.seed = seed,
            SimulateConfig::LennardJones(c) => c.seed = seed,
        }
    }
    let out = &args.common.out;
    let seed = match &config {
        SimulateConfig::Scalar(b) => b.seed,
        SimulateConfig::LennardJones(c) => c.seed,
    };
    RunManifest::new("simulate", args.common.config.as_deref(), &config, seed, out).write()?;

    match config {
        SimulateConfig::Scalar(bench) => {
            let samples = gen_scalar(&bench)?;
            io::write_samples(&out.join("samples.csv"), &samples)?;
            let fit = FitConfig {
                model: ModelConfig::scalar(bench.function.default_basis(), PenaltyConfig::new(2)),
                prior: PriorConfig::default(),
                schedule: Schedule::default(),
                estimator: Estimator::PosteriorMean,
            };
            io::write_json(&out.join("fit_config.json"), &fit)?;
        }
        SimulateConfig::LennardJones(lj) => {
            let trajectory = langevin_simulate(&lj)?;
            let basis = lj_basis_spec().build()?;
            let splines = lj_potential_splines(&lj, &basis)?;
            let theta = splines.stacked();
            let forces = gen_force_samples(&trajectory, &theta, lj.force_noise, lj.seed)?;
            io::write_samples(&out.join("forces.csv"), &forces.samples)?;
            let model = AdditiveModel::from_config(&lj_model_config(lj.cell_length))?;
            write_theta(&out.join("theta_true.csv"), &model, &theta)?;
            let fit = FitConfig {
                model: lj_model_config(lj.cell_length),
                prior: PriorConfig::default(),
                schedule: LjStudy::default().schedule,
                estimator: Estimator::PosteriorMean,
            };
            io::write_json(&out.join("fit_config.json"), &fit)?;
            io::write_json(
                &out.join("trajectory.json"),
                &serde_json::json!({
                    "frames": trajectory.frames.len(),
                    "cell_length": trajectory.cell_length,
                    "velocity_variance": trajectory.velocity_variance,
                    "target_variance": lj.temperature,
                    "projection_max_error": splines.max_error,
                }),
            )?;
            let rel = (trajectory.velocity_variance / lj.temperature - 1.0).abs();
            if rel > 0.05 {
                return Err(Failure::SelfCheck(format!(
                    "velocity variance {} is {:.1}% away from the target",
                    trajectory.velocity_variance,
                    100.0 * rel
                )));
            }
        }
    }
    Ok(())
}

pub fn bench(args: BenchArgs) -> CmdResult {
    let mut spec = match (&args.common.config, &args.study) {
        (Some(p), _) => load_json::<StudySpec>(p)?,
        (None, Some(name)) => StudySpec::new(StudyId::parse(name)?),
        (None, None) => return Err(Failure::Config("bench needs --study or --config".into())),
    };
    if let Some(r) = args.replicates {
        spec.replicates = r;
    }
    if let Some(seed) = args.common.seed {
        spec.seed_base = seed;
    }
    apply_schedule(&mut spec.schedule, &args.schedule, None);
    if let Some(lj) = spec.lj.as_mut() {
        apply_schedule(&mut lj.schedule, &args.schedule, None);
    }
    let out = &args.common.out;
    RunManifest::new("bench", args.common.config.as_deref(), &spec, spec.seed_base, out).write()?;

    let result = run_study(&spec)?;
    if !result.rows.is_empty() {
        io::write_records(&out.join("study.csv"), &result.rows)?;
        io::write_records(&out.join("summary.csv"), &result.summary)?;
    }
    if !result.estimators.is_empty() {
        io::write_records(&out.join("estimators.csv"), &result.estimators)?;
    }
    Ok(())
}
