//! Synthetic data: the scalar test functions with controlled noise, and a binary
//! Lennard-Jones Langevin simulation whose configurations feed force-matching samples.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bspline::{BasisSpec, Edge, SplineBasis};
use crate::error::{Error, Result};
use crate::model::{
    pair_separation, Argument, ComponentConfig, Direction, GroupConfig, ModelConfig, OutOfRange, SampleSet,
    VarianceGroups,
};
use crate::penalty::PenaltyConfig;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFunction {
    F1,
    F3,
}

impl TestFunction {
    pub fn eval(self, r: f64) -> f64 {
        match self {
            TestFunction::F1 => r / 1.758,
            TestFunction::F3 => (PI * r / 3.0).sin() / 0.72,
        }
    }

    /// The cubic, 20-coefficient basis used for this function on [-3, 3]; periodic for f3.
    pub fn default_basis(self) -> BasisSpec {
        match self {
            TestFunction::F1 => BasisSpec::Aperiodic {
                order: 4,
                num_params: 20,
                origin: -3.0,
                length: 6.0,
                left: Edge::Free,
                right: Edge::Free,
            },
            TestFunction::F3 => BasisSpec::Periodic {
                order: 4,
                num_params: 20,
                origin: -3.0,
                length: 6.0,
            },
        }
    }
}

pub const SCALAR_DOMAIN: (f64, f64) = (-3.0, 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarBenchmark {
    pub function: TestFunction,
    pub samples: usize,
    pub sigma: f64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

/// `m` equidistant points on the closed domain.
pub fn sample_points(m: usize) -> Vec<f64> {
    let (lo, hi) = SCALAR_DOMAIN;
    (0..m)
        .map(|l| lo + (hi - lo) * l as f64 / (m - 1) as f64)
        .collect()
}

/// `m` standard normals shared by every benchmark with this seed.
pub fn noise_vector(seed: u64, m: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, Purpose::ScalarNoise, 0);
    (0..m).map(|_| rng.sample(StandardNormal)).collect()
}

/// `y = c (f(r) + sigma eps)` at equidistant `r`.
pub fn gen_scalar(bench: &ScalarBenchmark) -> Result<SampleSet> {
    if bench.samples < 2 {
        return Err(Error::Config(
            "a scalar benchmark needs at least 2 samples".into(),
        ));
    }
    let xs = sample_points(bench.samples);
    let eps = noise_vector(bench.seed, bench.samples);
    let ys: Vec<f64> = xs
        .iter()
        .zip(&eps)
        .map(|(x, e)| bench.scale * (bench.function.eval(*x) + bench.sigma * e))
        .collect();
    let mut s = SampleSet::scalar(&xs, &ys);
    s.seed = Some(bench.seed);
    s.noise_scale = bench.sigma * bench.scale;
    Ok(s)
}

/// Lower end of the interval on which pair potentials are represented by splines.
pub const SPLINE_RANGE: (f64, f64) = (4.0 / 7.0, 17.0 / 7.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LjConfig {
    pub particles: usize,
    /// Particles `0..type_a` are type A, the rest type B.
    pub type_a: usize,
    pub cell_length: f64,
    pub cross_coupling: f64,
    /// Target velocity variance `1 / beta`.
    pub temperature: f64,
    pub time_step: f64,
    /// `gamma * dt`.
    pub friction: f64,
    pub equilibration: usize,
    pub stride: usize,
    pub configs: usize,
    pub force_noise: f64,
    /// Width of the smooth switch that takes the potential to zero at the cutoff.
    pub switch_width: f64,
    pub seed: u64,
}

impl Default for LjConfig {
    /// Desk scale: 32 particles at the density of the 256-particle cell.
    fn default() -> Self {
        let full = LjConfig::full_scale();
        LjConfig {
            particles: 32,
            type_a: 16,
            cell_length: full.cell_length * (32.0f64 / 256.0).cbrt(),
            configs: 200,
            ..full
        }
    }
}

impl LjConfig {
    pub fn full_scale() -> Self {
        LjConfig {
            particles: 256,
            type_a: 128,
            cell_length: 7.49,
            cross_coupling: 0.5,
            temperature: 0.7917,
            time_step: 1.461e-3,
            friction: 1e-2,
            equilibration: 100_000,
            stride: 500,
            configs: 500,
            force_noise: 60.91,
            switch_width: 0.4,
            seed: 0,
        }
    }

    pub fn types(&self) -> Vec<usize> {
        (0..self.particles)
            .map(|i| usize::from(i >= self.type_a))
            .collect()
    }

    pub fn coupling(&self, a: usize, b: usize) -> f64 {
        if a == b {
            1.0
        } else {
            self.cross_coupling
        }
    }

    /// The potential vanishes beyond `min(17/7, L/2)` so minimum-image forces stay continuous.
    pub fn cutoff(&self) -> f64 {
        SPLINE_RANGE.1.min(0.5 * self.cell_length)
    }

    pub fn potential(&self, a: usize, b: usize) -> PairPotential {
        let cutoff = self.cutoff();
        PairPotential {
            coupling: self.coupling(a, b),
            switch_start: cutoff - self.switch_width,
            cutoff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.cell_length,
            self.temperature,
            self.time_step,
            self.switch_width,
        ];
        if self.particles < 2 || self.type_a > self.particles || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("invalid Lennard-Jones configuration".into()));
        }
        if self.stride == 0 || self.configs == 0 || !(self.friction >= 0.0) || self.force_noise < 0.0 {
            return Err(Error::Config("invalid Lennard-Jones schedule".into()));
        }
        if self.switch_width >= self.cutoff() - SPLINE_RANGE.0 {
            return Err(Error::Config("switch width leaves no unswitched core".into()));
        }
        Ok(())
    }
}

/// `4c (t^-12 - t^-6) S(t)` with a quintic switch `S` from 1 to 0 on `[switch_start, cutoff]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPotential {
    pub coupling: f64,
    pub switch_start: f64,
    pub cutoff: f64,
}

impl PairPotential {
    /// `(E(t), E'(t))`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        if t >= self.cutoff || self.coupling == 0.0 {
            return (0.0, 0.0);
        }
        let inv6 = t.powi(-6);
        let e = 4.0 * self.coupling * (inv6 * inv6 - inv6);
        let de = 4.0 * self.coupling * (-12.0 * inv6 * inv6 + 6.0 * inv6) / t;
        if t <= self.switch_start {
            return (e, de);
        }
        let w = self.cutoff - self.switch_start;
        let x = (t - self.switch_start) / w;
        let s = 1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x);
        let ds = -30.0 * x * x * (1.0 - x) * (1.0 - x) / w;
        (e * s, de * s + e * ds)
    }
}

/// Simple cubic lattice sites spread evenly over the cell; site order runs along x first, so
/// the two types fill opposite halves.
pub fn initial_lattice(particles: usize, cell: f64) -> Vec<f64> {
    let side = (particles as f64).cbrt().ceil() as usize;
    let sites = side * side * side;
    let spacing = cell / side as f64;
    let mut pos = Vec::with_capacity(3 * particles);
    for k in 0..particles {
        let s = k * sites / particles;
        let (ix, rest) = (s / (side * side), s % (side * side));
        let (iy, iz) = (rest / side, rest % side);
        for i in [ix, iy, iz] {
            pos.push((i as f64 + 0.5) * spacing);
        }
    }
    pos
}

pub struct LangevinSystem {
    pub config: LjConfig,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub forces: Vec<f64>,
    pub potential_energy: f64,
    pub types: Vec<usize>,
    potentials: [[PairPotential; 2]; 2],
    rng: rng::Rng,
    pub step: usize,
}

impl LangevinSystem {
    pub fn new(config: LjConfig) -> Result<Self> {
        config.validate()?;
        let types = config.types();
        let mut rng = rng::stream(config.seed, Purpose::Langevin, 0);
        let positions = initial_lattice(config.particles, config.cell_length);
        let sd = config.temperature.sqrt();
        let velocities = (0..3 * config.particles)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let potentials = [
            [config.potential(0, 0), config.potential(0, 1)],
            [config.potential(1, 0), config.potential(1, 1)],
        ];
        let mut sys = LangevinSystem {
            config,
            positions,
            velocities,
            forces: vec![0.0; 3 * config.particles],
            potential_energy: 0.0,
            types,
            potentials,
            rng,
            step: 0,
        };
        sys.compute_forces()?;
        Ok(sys)
    }

    fn compute_forces(&mut self) -> Result<()> {
        let n = self.config.particles;
        self.forces.iter_mut().for_each(|f| *f = 0.0);
        let mut energy = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let (e, t) = pair_separation(&self.positions, i, j, self.config.cell_length);
                let pot = self.potentials[self.types[i]][self.types[j]];
                if t >= pot.cutoff {
                    continue;
                }
                let (u, du) = pot.eval(t);
                energy += u;
                for c in 0..3 {
                    let f = -du * e[c] / t;
                    self.forces[3 * i + c] += f;
                    self.forces[3 * j + c] -= f;
                }
            }
        }
        self.potential_energy = energy;
        if let Some(f) = self.forces.iter().find(|f| !(f.abs() <= 1e12)) {
            return Err(Error::BlowUp {
                step: self.step,
                force: *f,
            });
        }
        Ok(())
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.velocities.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn total_energy(&self) -> f64 {
        self.kinetic_energy() + self.potential_energy
    }

    /// One BAOAB step with an exact Ornstein-Uhlenbeck velocity update (unit masses).
    pub fn advance(&mut self, thermostat: bool) -> Result<()> {
        let dt = self.config.time_step;
        let cell = self.config.cell_length;
        for (v, f) in self.velocities.iter_mut().zip(&self.forces) {
            *v += 0.5 * dt * f;
        }
        for (x, v) in self.positions.iter_mut().zip(&self.velocities) {
            *x += 0.5 * dt * v;
        }
        if thermostat {
            let c1 = (-self.config.friction).exp();
            let c2 = ((1.0 - c1 * c1) * self.config.temperature).sqrt();
            for v in self.velocities.iter_mut() {
                *v = c1 * *v + c2 * self.rng.sample::<f64, _>(StandardNormal);
            }
        }
        for (x, v) in self.positions.iter_mut().zip(&self.velocities) {
            *x += 0.5 * dt * v;
            *x -= cell * (*x / cell).floor();
        }
        self.step += 1;
        self.compute_forces()?;
        for (v, f) in self.velocities.iter_mut().zip(&self.forces) {
            *v += 0.5 * dt * f;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub frames: Vec<Vec<f64>>,
    pub types: Vec<usize>,
    pub cell_length: f64,
    /// Velocity component variance over the production run.
    pub velocity_variance: f64,
}

pub fn langevin_simulate(config: &LjConfig) -> Result<Trajectory> {
    let mut sys = LangevinSystem::new(*config)?;
    for _ in 0..config.equilibration {
        sys.advance(true)?;
    }
    let mut frames = Vec::with_capacity(config.configs);
    let (mut sum, mut sum_sq, mut count) = (0.0, 0.0, 0usize);
    for _ in 0..config.configs {
        for _ in 0..config.stride {
            sys.advance(true)?;
        }
        for v in &sys.velocities {
            sum += v;
            sum_sq += v * v;
        }
        count += sys.velocities.len();
        frames.push(sys.positions.clone());
    }
    let mean = sum / count as f64;
    Ok(Trajectory {
        frames,
        types: sys.types,
        cell_length: config.cell_length,
        velocity_variance: sum_sq / count as f64 - mean * mean,
    })
}

/// Pair types in group order: A:A, A:B, B:B.
pub const PAIR_TYPES: [(&str, [usize; 2]); 3] = [("AA", [0, 0]), ("AB", [0, 1]), ("BB", [1, 1])];

/// Order 6, 170 coefficients at `h = 0.1/7` on `(0, 17/7)`, clamped (all derivatives vanish)
/// at the right end.
pub fn lj_basis_spec() -> BasisSpec {
    BasisSpec::Aperiodic {
        order: 6,
        num_params: 170,
        origin: 0.0,
        length: SPLINE_RANGE.1,
        left: Edge::Free,
        right: Edge::Clamped,
    }
}

/// Three pair-force groups sharing one noise precision, with an `r^2` penalty density.
pub fn lj_model_config(cell_length: f64) -> ModelConfig {
    ModelConfig {
        groups: PAIR_TYPES
            .iter()
            .map(|(name, _)| GroupConfig {
                name: (*name).into(),
                basis: lj_basis_spec(),
                penalty: PenaltyConfig::with_density(2, 2, 1.0),
            })
            .collect(),
        components: PAIR_TYPES
            .iter()
            .map(|(name, types)| ComponentConfig {
                group: (*name).into(),
                argument: Argument::PairDistance {
                    box_length: cell_length,
                    types: *types,
                },
                direction: Direction::PairForce,
            })
            .collect(),
        variance_groups: VarianceGroups::Single,
        out_of_range: OutOfRange::Error,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSplines {
    /// Coefficients of `E'(t)` per pair type, in `PAIR_TYPES` order.
    pub theta: Vec<Vec<f64>>,
    /// Largest spline-vs-analytic deviation of `E'` on the projection grid, per pair type.
    pub max_error: Vec<f64>,
    pub max_value: Vec<f64>,
}

impl PairSplines {
    pub fn stacked(&self) -> Vec<f64> {
        self.theta.concat()
    }
}

/// Least-squares projection of each `E'` onto the basis over the spline range. Coefficients
/// whose support misses the range are set to zero.
pub fn lj_potential_splines(config: &LjConfig, basis: &SplineBasis) -> Result<PairSplines> {
    let (lo, hi) = SPLINE_RANGE;
    if basis.origin() > lo || basis.origin() + basis.length() < hi {
        return Err(Error::Config("basis does not cover the spline range".into()));
    }
    let per_interval = 24;
    let intervals = ((hi - lo) / basis.knot_spacing()).ceil() as usize;
    let n = per_interval * intervals;
    let grid: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
        .collect();
    let p = basis.num_params();
    let mut rows = DMatrix::zeros(n, p);
    for (a, t) in grid.iter().enumerate() {
        basis.for_each_entry(*t, 0, |g, v| rows[(a, g)] += v)?;
    }
    let active: Vec<usize> = (0..p)
        .filter(|j| rows.column(*j).iter().any(|v| *v != 0.0))
        .collect();
    let design = rows.select_columns(&active);
    let svd = design.clone().svd(true, true);
    let (smax, smin) = svd
        .singular_values
        .iter()
        .fold((0.0f64, f64::INFINITY), |(a, b), s| (a.max(*s), b.min(*s)));
    let condition = smax / smin;
    if !(condition < 1e12) {
        return Err(Error::IllConditioned { condition });
    }
    let (mut theta, mut max_error, mut max_value) = (Vec::new(), Vec::new(), Vec::new());
    for (_, [a, b]) in PAIR_TYPES {
        let pot = config.potential(a, b);
        let target = DVector::from_iterator(n, grid.iter().map(|t| pot.eval(*t).1));
        let coef = svd.solve(&target, 0.0).map_err(|e| Error::Config(e.into()))?;
        let fitted = &design * &coef;
        max_error.push((fitted - &target).amax());
        max_value.push(target.amax());
        let mut full = vec![0.0; p];
        for (k, j) in active.iter().enumerate() {
            full[*j] = coef[k];
        }
        theta.push(full);
    }
    Ok(PairSplines {
        theta,
        max_error,
        max_value,
    })
}

/// All minimum-image distances between particles of the given types, over every frame.
pub fn pair_distances(samples: &SampleSet, cell_length: f64, types: [usize; 2]) -> Vec<f64> {
    let n = samples.types.len();
    let mut out = Vec::new();
    for pos in &samples.inputs {
        for i in 0..n {
            for j in (i + 1)..n {
                let (ti, tj) = (samples.types[i], samples.types[j]);
                if (ti, tj) == (types[0], types[1]) || (tj, ti) == (types[0], types[1]) {
                    out.push(pair_separation(pos, i, j, cell_length).1);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceSampleSet {
    pub samples: SampleSet,
    pub theta_true: Vec<f64>,
    pub noise_scale: f64,
    pub cell_length: f64,
}

/// Mean forces from `theta_true` through the force-matching design, plus i.i.d. noise.
pub fn gen_force_samples(
    trajectory: &Trajectory,
    theta_true: &[f64],
    sigma_f: f64,
    seed: u64,
) -> Result<ForceSampleSet> {
    let model = crate::model::AdditiveModel::from_config(&lj_model_config(trajectory.cell_length))?;
    if theta_true.len() != model.num_params() {
        return Err(Error::DimensionMismatch {
            expected: model.num_params(),
            got: theta_true.len(),
        });
    }
    let mut samples = SampleSet {
        inputs: trajectory.frames.clone(),
        outputs: vec![vec![0.0; 3 * trajectory.types.len()]; trajectory.frames.len()],
        types: trajectory.types.clone(),
        seed: Some(seed),
        noise_scale: sigma_f,
    };
    let closest = PAIR_TYPES
        .iter()
        .flat_map(|(_, t)| pair_distances(&samples, trajectory.cell_length, *t))
        .fold(f64::INFINITY, f64::min);
    if closest < SPLINE_RANGE.0 {
        return Err(Error::Domain {
            x: closest,
            lo: SPLINE_RANGE.0,
            hi: SPLINE_RANGE.1,
        });
    }
    let design = model.build_design(&samples)?;
    let mean = design.predict(theta_true);
    let mut rng = rng::stream(seed, Purpose::ForceNoise, 0);
    let n_out = design.output_dim;
    for (l, out) in samples.outputs.iter_mut().enumerate() {
        for (d, y) in out.iter_mut().enumerate() {
            *y = mean[l * n_out + d] + sigma_f * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(ForceSampleSet {
        samples,
        theta_true: theta_true.to_vec(),
        noise_scale: sigma_f,
        cell_length: trajectory.cell_length,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AdditiveModel;

    fn short_config() -> LjConfig {
        LjConfig {
            equilibration: 2000,
            stride: 50,
            configs: 10,
            seed: 3,
            ..LjConfig::default()
        }
    }

    #[test]
    fn scalar_generation() {
        let b = ScalarBenchmark {
            function: TestFunction::F1,
            samples: 20,
            sigma: 0.0,
            scale: 1.0,
            seed: 1,
        };
        let s = gen_scalar(&b).unwrap();
        for (x, y) in s.inputs.iter().zip(&s.outputs) {
            assert_eq!(y[0], x[0] / 1.758);
        }
        assert_eq!(s.inputs[0][0], -3.0);
        assert_eq!(s.inputs[19][0], 3.0);

        let f3 = ScalarBenchmark {
            function: TestFunction::F3,
            sigma: 0.5,
            ..b
        };
        let base = gen_scalar(&f3).unwrap();
        let big = gen_scalar(&ScalarBenchmark { scale: 1e3, ..f3 }).unwrap();
        for (u, v) in base.outputs.iter().zip(&big.outputs) {
            assert_eq!(v[0], 1e3 * u[0]);
        }
    }

    #[test]
    fn scalar_noise_moments() {
        let b = ScalarBenchmark {
            function: TestFunction::F3,
            samples: 10_000,
            sigma: 0.3,
            scale: 7.0,
            seed: 9,
        };
        let s = gen_scalar(&b).unwrap();
        let dev: Vec<f64> = s
            .inputs
            .iter()
            .zip(&s.outputs)
            .map(|(x, y)| (y[0] - 7.0 * TestFunction::F3.eval(x[0])) / 7.0)
            .collect();
        let mean = dev.iter().sum::<f64>() / dev.len() as f64;
        let sd = (dev.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (dev.len() - 1) as f64).sqrt();
        assert!((sd / 0.3 - 1.0).abs() < 0.03);
    }

    #[test]
    fn potential_is_smooth_at_switch_and_cutoff() {
        let pot = LjConfig::full_scale().potential(0, 0);
        for t in [pot.switch_start, pot.cutoff] {
            let (e1, d1) = pot.eval(t - 1e-9);
            let (e2, d2) = pot.eval(t + 1e-9);
            assert!((e1 - e2).abs() < 1e-8 && (d1 - d2).abs() < 1e-7);
        }
        // derivative matches a central difference
        let t = 1.1;
        let h = 1e-6;
        let fd = (pot.eval(t + h).0 - pot.eval(t - h).0) / (2.0 * h);
        assert!((fd - pot.eval(t).1).abs() < 1e-6);
        let cross = LjConfig::full_scale().potential(0, 1);
        assert_eq!(cross.eval(1.0).0, 0.5 * pot.eval(1.0).0);
    }

    #[test]
    fn spline_projection_accuracy() {
        let basis = lj_basis_spec().build().unwrap();
        for config in [LjConfig::full_scale(), LjConfig::default()] {
            let splines = lj_potential_splines(&config, &basis).unwrap();
            for (err, max) in splines.max_error.iter().zip(&splines.max_value) {
                assert!(*err < 1e-6 * max, "{err} vs {max}");
            }
            assert_eq!(splines.theta[0], splines.theta[2]);
            // dense comparison off the projection grid
            let pot = config.potential(0, 1);
            let max = splines.max_value[1];
            for i in 0..5000 {
                let t = SPLINE_RANGE.0 + (SPLINE_RANGE.1 - SPLINE_RANGE.0) * i as f64 / 4999.0;
                let s = basis.evaluate(&splines.theta[1], t, 0).unwrap();
                assert!((s - pot.eval(t).1).abs() < 1e-6 * max);
            }
        }
        let zero = LjConfig {
            cross_coupling: 0.0,
            ..LjConfig::default()
        };
        let splines = lj_potential_splines(&zero, &basis).unwrap();
        assert!(splines.theta[1].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn minimum_image_bound() {
        let config = short_config();
        let traj = langevin_simulate(&config).unwrap();
        let bound = 3f64.sqrt() / 2.0 * config.cell_length;
        let samples = SampleSet {
            inputs: traj.frames.clone(),
            outputs: vec![vec![0.0; 96]; traj.frames.len()],
            types: traj.types.clone(),
            ..Default::default()
        };
        for (_, t) in PAIR_TYPES {
            for d in pair_distances(&samples, config.cell_length, t) {
                assert!(d <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn thermostat_targets_velocity_variance() {
        let config = LjConfig {
            equilibration: 5000,
            stride: 100,
            configs: 400,
            seed: 4,
            ..LjConfig::default()
        };
        let traj = langevin_simulate(&config).unwrap();
        assert!((traj.velocity_variance / config.temperature - 1.0).abs() < 0.05);
    }

    #[test]
    fn energy_conserved_without_thermostat() {
        let mut sys = LangevinSystem::new(short_config()).unwrap();
        for _ in 0..2000 {
            sys.advance(true).unwrap();
        }
        let e0 = sys.total_energy();
        let scale = sys.kinetic_energy().abs().max(sys.potential_energy.abs());
        for _ in 0..10_000 {
            sys.advance(false).unwrap();
        }
        assert!((sys.total_energy() - e0).abs() < 1e-4 * scale);
    }

    #[test]
    fn force_samples() {
        let config = short_config();
        let traj = langevin_simulate(&config).unwrap();
        let basis = lj_basis_spec().build().unwrap();
        let splines = lj_potential_splines(&config, &basis).unwrap();
        let theta = splines.stacked();
        let clean = gen_force_samples(&traj, &theta, 0.0, 1).unwrap();
        let model = AdditiveModel::from_config(&lj_model_config(config.cell_length)).unwrap();
        let design = model.build_design(&clean.samples).unwrap();
        let mean = design.predict(&theta);
        let flat: Vec<f64> = clean.samples.outputs.concat();
        assert_eq!(flat, mean.as_slice());
        // total force vanishes (pairwise antisymmetry)
        for out in &clean.samples.outputs {
            for c in 0..3 {
                let total: f64 = (0..32).map(|i| out[3 * i + c]).sum();
                assert!(total.abs() < 1e-10);
            }
        }
        // spline mean forces agree with the analytic forces used by the integrator
        let mut sys = LangevinSystem::new(config).unwrap();
        sys.positions = traj.frames[0].clone();
        sys.compute_forces().unwrap();
        // each component sums 31 pair terms, each within the projection error
        let bound = 31.0 * splines.max_error.iter().fold(0.0f64, |a, e| a.max(*e));
        for (a, b) in sys.forces.iter().zip(&clean.samples.outputs[0]) {
            assert!((a - b).abs() < bound, "{a} {b} {bound}");
        }
        let noisy = gen_force_samples(&traj, &theta, 60.91, 2).unwrap();
        let res: Vec<f64> = noisy
            .samples
            .outputs
            .concat()
            .iter()
            .zip(&flat)
            .map(|(a, b)| a - b)
            .collect();
        let var = res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64;
        assert!((var.sqrt() / 60.91 - 1.0).abs() < 0.05);
        assert_eq!(gen_force_samples(&traj, &theta, 60.91, 2).unwrap(), noisy);
    }
}
