//! Additive and vector-valued models `f(r) = sum_k g_k(r) (B_k(t_k(r)) . theta_K)`.
//!
//! Components sharing a parameter group `K` add their design contributions. A pair-distance
//! component expands into one occurrence per particle pair of the requested types.

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bspline::{BasisSpec, SplineBasis};
use crate::error::{Error, Result};
use crate::penalty::{assemble_penalty, PenaltyConfig, PenaltyMatrix, RANK_TOLERANCE};

/// `M` observations. Scalar data has `inputs[l] = [r]`, `outputs[l] = [y]`; particle data
/// has flattened positions `(x0, y0, z0, x1, ...)`, per-particle `types` and force outputs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleSet {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    #[serde(default)]
    pub types: Vec<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub noise_scale: f64,
}

impl SampleSet {
    pub fn scalar(xs: &[f64], ys: &[f64]) -> Self {
        SampleSet {
            inputs: xs.iter().map(|x| vec![*x]).collect(),
            outputs: ys.iter().map(|y| vec![*y]).collect(),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, count: usize) -> SampleSet {
        SampleSet {
            inputs: self.inputs[..count].to_vec(),
            outputs: self.outputs[..count].to_vec(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Argument {
    Identity {
        #[serde(default)]
        coordinate: usize,
    },
    /// Minimum-image distance between particles of types `types[0]` and `types[1]`.
    PairDistance { box_length: f64, types: [usize; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Direction {
    /// Unit vector along output `output`.
    Scalar {
        #[serde(default)]
        output: usize,
    },
    /// `-dt/dr`: the pair term contributes `-e` to particle `i` and `+e` to `j`,
    /// `e = (r_i - r_j) / |r_i - r_j|`, so the spline represents `E'(t)`.
    PairForce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub name: String,
    pub basis: BasisSpec,
    pub penalty: PenaltyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentConfig {
    pub group: String,
    pub argument: Argument,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceGroups {
    /// One noise precision for every output.
    #[default]
    Single,
    /// One precision per particle type (force outputs of that type's particles).
    ByType,
    /// One precision per output coordinate.
    ByOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutOfRange {
    #[default]
    Error,
    DropSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub groups: Vec<GroupConfig>,
    pub components: Vec<ComponentConfig>,
    #[serde(default)]
    pub variance_groups: VarianceGroups,
    #[serde(default)]
    pub out_of_range: OutOfRange,
}

impl ModelConfig {
    /// One function of one scalar input.
    pub fn scalar(basis: BasisSpec, penalty: PenaltyConfig) -> Self {
        ModelConfig {
            groups: vec![GroupConfig {
                name: "f".into(),
                basis,
                penalty,
            }],
            components: vec![ComponentConfig {
                group: "f".into(),
                argument: Argument::Identity { coordinate: 0 },
                direction: Direction::Scalar { output: 0 },
            }],
            variance_groups: VarianceGroups::Single,
            out_of_range: OutOfRange::Error,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub name: String,
    pub basis: SplineBasis,
    pub penalty: PenaltyMatrix,
    pub offset: usize,
}

#[derive(Debug, Clone)]
pub struct Component {
    pub group: usize,
    pub argument: Argument,
    pub direction: Direction,
}

#[derive(Debug, Clone)]
pub struct AdditiveModel {
    pub groups: Vec<ParamGroup>,
    pub components: Vec<Component>,
    pub variance_groups: VarianceGroups,
    pub out_of_range: OutOfRange,
    pub config: ModelConfig,
}

/// Stacked design `D` (rows `l * N + d`), targets `Y` and row metadata.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub output_dim: usize,
    /// Indices of the samples that made it into the design.
    pub kept: Vec<usize>,
    /// Variance group of each row.
    pub row_groups: Vec<usize>,
    pub num_variance_groups: usize,
    /// Coefficient offsets per parameter group, with the total as the last entry.
    pub group_offsets: Vec<usize>,
    /// Samples touching each parameter group.
    pub contributing: Vec<usize>,
}

impl DesignMatrix {
    pub fn num_samples(&self) -> usize {
        self.kept.len()
    }
    pub fn num_params(&self) -> usize {
        self.matrix.ncols()
    }
    pub fn num_groups(&self) -> usize {
        self.group_offsets.len() - 1
    }
    pub fn group_range(&self, k: usize) -> std::ops::Range<usize> {
        self.group_offsets[k]..self.group_offsets[k + 1]
    }
    pub fn predict(&self, theta: &[f64]) -> DVector<f64> {
        &self.matrix * DVector::from_column_slice(theta)
    }
}

/// Centering constraints for parameter groups whose constant mode is not identified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub constrained: Vec<usize>,
    pub rank: usize,
    pub num_groups: usize,
    pub sample_count: usize,
    pub group_offsets: Vec<usize>,
    /// Null-space vectors of `R` (one weight per group).
    pub degenerate: Vec<Vec<f64>>,
}

impl ConstraintSet {
    pub fn none(group_offsets: Vec<usize>) -> Self {
        let num_groups = group_offsets.len() - 1;
        ConstraintSet {
            constrained: Vec::new(),
            rank: num_groups,
            num_groups,
            sample_count: 0,
            group_offsets,
            degenerate: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.constrained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constrained.is_empty()
    }

    /// Coefficient-space direction `sum_K w_K 1_K` for each degenerate vector.
    pub fn degenerate_directions(&self) -> Vec<Vec<f64>> {
        let p = *self.group_offsets.last().unwrap();
        self.degenerate
            .iter()
            .map(|w| {
                let mut c = vec![0.0; p];
                for (k, wk) in w.iter().enumerate() {
                    for v in &mut c[self.group_offsets[k]..self.group_offsets[k + 1]] {
                        *v = *wk;
                    }
                }
                c
            })
            .collect()
    }

    /// Rows `1_K^T / p_K` for every constrained group.
    pub fn matrix(&self) -> DMatrix<f64> {
        let p = *self.group_offsets.last().unwrap();
        let mut a = DMatrix::zeros(self.count(), p);
        for (row, k) in self.constrained.iter().enumerate() {
            let range = self.group_offsets[*k]..self.group_offsets[k + 1];
            let w = 1.0 / range.len() as f64;
            for j in range {
                a[(row, j)] = w;
            }
        }
        a
    }

    /// Subtracts each constrained group's mean; a projection.
    pub fn apply(&self, theta: &mut [f64]) {
        for k in &self.constrained {
            let slice = &mut theta[self.group_offsets[*k]..self.group_offsets[k + 1]];
            let mean = slice.iter().sum::<f64>() / slice.len() as f64;
            for v in slice.iter_mut() {
                *v -= mean;
            }
        }
    }
}

pub fn apply_constraints(theta: &[f64], constraints: &ConstraintSet) -> Vec<f64> {
    let mut out = theta.to_vec();
    constraints.apply(&mut out);
    out
}

fn minimum_image(d: f64, box_length: f64) -> f64 {
    d - box_length * (d / box_length).round()
}

/// Minimum-image separation vector `r_i - r_j` and its length.
pub fn pair_separation(pos: &[f64], i: usize, j: usize, box_length: f64) -> ([f64; 3], f64) {
    let mut e = [0.0; 3];
    for (c, ec) in e.iter_mut().enumerate() {
        *ec = minimum_image(pos[3 * i + c] - pos[3 * j + c], box_length);
    }
    let t = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
    (e, t)
}

fn types_match(ti: usize, tj: usize, want: [usize; 2]) -> bool {
    (ti == want[0] && tj == want[1]) || (ti == want[1] && tj == want[0])
}

enum Entry {
    Skip,
    Out,
}

impl AdditiveModel {
    pub fn from_config(config: &ModelConfig) -> Result<Self> {
        if config.groups.is_empty() || config.components.is_empty() {
            return Err(Error::Config(
                "model needs at least one group and component".into(),
            ));
        }
        let mut offset = 0;
        let mut groups = Vec::with_capacity(config.groups.len());
        for g in &config.groups {
            if groups.iter().any(|other: &ParamGroup| other.name == g.name) {
                return Err(Error::Config(format!("duplicate group name {:?}", g.name)));
            }
            let basis = g.basis.build()?;
            let penalty = assemble_penalty(&basis, g.penalty)?;
            let p = basis.num_params();
            groups.push(ParamGroup {
                name: g.name.clone(),
                basis,
                penalty,
                offset,
            });
            offset += p;
        }
        let components = config
            .components
            .iter()
            .map(|c| {
                let group = groups
                    .iter()
                    .position(|g| g.name == c.group)
                    .ok_or_else(|| Error::Config(format!("unknown group {:?}", c.group)))?;
                match (&c.argument, &c.direction) {
                    (Argument::PairDistance { box_length, .. }, Direction::PairForce) => {
                        if !(box_length.is_finite() && *box_length > 0.0) {
                            return Err(Error::Config("box length must be positive".into()));
                        }
                    }
                    (Argument::Identity { .. }, Direction::Scalar { .. }) => {}
                    _ => {
                        return Err(Error::Config(
                            "pair-distance arguments pair with pair-force directions".into(),
                        ))
                    }
                }
                Ok(Component {
                    group,
                    argument: c.argument.clone(),
                    direction: c.direction.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AdditiveModel {
            groups,
            components,
            variance_groups: config.variance_groups,
            out_of_range: config.out_of_range,
            config: config.clone(),
        })
    }

    pub fn num_params(&self) -> usize {
        self.groups.iter().map(|g| g.basis.num_params()).sum()
    }

    pub fn group_offsets(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.groups.iter().map(|g| g.offset).collect();
        v.push(self.num_params());
        v
    }

    fn is_particle_model(&self) -> bool {
        self.components
            .iter()
            .any(|c| matches!(c.argument, Argument::PairDistance { .. }))
    }

    /// Accumulates row block `l` into `block` (N x p, row-major); returns touched groups.
    fn fill_block(
        &self,
        samples: &SampleSet,
        l: usize,
        block: &mut [f64],
        p: usize,
        offenders: &mut Vec<(usize, usize)>,
    ) -> Vec<bool> {
        let mut touched = vec![false; self.groups.len()];
        let input = &samples.inputs[l];
        for (k, comp) in self.components.iter().enumerate() {
            let group = &self.groups[comp.group];
            let basis = &group.basis;
            match (&comp.argument, &comp.direction) {
                (Argument::Identity { coordinate }, Direction::Scalar { output }) => {
                    let Some(t) = input.get(*coordinate).copied() else {
                        offenders.push((l, k));
                        continue;
                    };
                    let res = basis.for_each_entry(t, 0, |g, v| {
                        block[output * p + group.offset + g] += v;
                    });
                    if res.is_err() {
                        offenders.push((l, k));
                    } else {
                        touched[comp.group] = true;
                    }
                }
                (Argument::PairDistance { box_length, types }, Direction::PairForce) => {
                    let n_particles = samples.types.len();
                    for i in 0..n_particles {
                        for j in (i + 1)..n_particles {
                            if !types_match(samples.types[i], samples.types[j], *types) {
                                continue;
                            }
                            let (e, t) = pair_separation(input, i, j, *box_length);
                            let status = if t >= basis.origin() + basis.length() {
                                if basis.vanishes_at_right_end() {
                                    Err(Entry::Skip)
                                } else {
                                    Err(Entry::Out)
                                }
                            } else if t < basis.origin() {
                                Err(Entry::Out)
                            } else {
                                Ok(())
                            };
                            match status {
                                Err(Entry::Skip) => continue,
                                Err(Entry::Out) => {
                                    offenders.push((l, k));
                                    continue;
                                }
                                Ok(()) => {}
                            }
                            touched[comp.group] = true;
                            let inv = 1.0 / t;
                            let _ = basis.for_each_entry(t, 0, |g, v| {
                                let col = group.offset + g;
                                for c in 0..3 {
                                    let dir = e[c] * inv * v;
                                    block[(3 * i + c) * p + col] -= dir;
                                    block[(3 * j + c) * p + col] += dir;
                                }
                            });
                        }
                    }
                }
                _ => unreachable!("validated in from_config"),
            }
        }
        touched
    }

    fn row_group(&self, samples: &SampleSet, d: usize) -> usize {
        match self.variance_groups {
            VarianceGroups::Single => 0,
            VarianceGroups::ByOutput => d,
            VarianceGroups::ByType => {
                if self.is_particle_model() {
                    samples.types[d / 3]
                } else {
                    0
                }
            }
        }
    }

    pub fn build_design(&self, samples: &SampleSet) -> Result<DesignMatrix> {
        let n_out = samples.output_dim();
        if samples.is_empty() || n_out == 0 {
            return Err(Error::Config("empty sample set".into()));
        }
        if samples.outputs.iter().any(|y| y.len() != n_out) || samples.inputs.len() != samples.len() {
            return Err(Error::DimensionMismatch {
                expected: n_out,
                got: samples
                    .outputs
                    .iter()
                    .map(Vec::len)
                    .find(|len| *len != n_out)
                    .unwrap_or(samples.inputs.len()),
            });
        }
        if self.is_particle_model() && samples.types.len() * 3 != n_out {
            return Err(Error::DimensionMismatch {
                expected: samples.types.len() * 3,
                got: n_out,
            });
        }
        for comp in &self.components {
            if let Direction::Scalar { output } = comp.direction {
                if output >= n_out {
                    return Err(Error::Config(format!(
                        "component output {output} beyond data dimension {n_out}"
                    )));
                }
            }
        }
        let p = self.num_params();
        let blocks: Vec<(Vec<f64>, Vec<bool>, Vec<(usize, usize)>)> = (0..samples.len())
            .into_par_iter()
            .map(|l| {
                let mut block = vec![0.0; n_out * p];
                let mut offenders = Vec::new();
                let touched = self.fill_block(samples, l, &mut block, p, &mut offenders);
                (block, touched, offenders)
            })
            .collect();

        let offenders: Vec<(usize, usize)> = blocks.iter().flat_map(|b| b.2.iter().copied()).collect();
        let kept: Vec<usize> = match self.out_of_range {
            OutOfRange::Error if !offenders.is_empty() => return Err(Error::OutOfDomain { offenders }),
            _ => (0..samples.len()).filter(|l| blocks[*l].2.is_empty()).collect(),
        };
        if kept.is_empty() {
            return Err(Error::OutOfDomain { offenders });
        }

        let rows = kept.len() * n_out;
        let mut matrix = DMatrix::zeros(rows, p);
        let mut targets = DVector::zeros(rows);
        let mut contributing = vec![0; self.groups.len()];
        for (slot, l) in kept.iter().enumerate() {
            let (block, touched, _) = &blocks[*l];
            for d in 0..n_out {
                let row = slot * n_out + d;
                for c in 0..p {
                    matrix[(row, c)] = block[d * p + c];
                }
                targets[row] = samples.outputs[*l][d];
            }
            for (k, t) in touched.iter().enumerate() {
                if *t {
                    contributing[k] += 1;
                }
            }
        }
        let row_groups: Vec<usize> = (0..rows)
            .map(|row| self.row_group(samples, row % n_out))
            .collect();
        let num_variance_groups = row_groups.iter().copied().max().unwrap_or(0) + 1;
        Ok(DesignMatrix {
            matrix,
            targets,
            output_dim: n_out,
            kept,
            row_groups,
            num_variance_groups,
            group_offsets: self.group_offsets(),
            contributing,
        })
    }

    pub fn penalties(&self) -> Vec<&PenaltyMatrix> {
        self.groups.iter().map(|g| &g.penalty).collect()
    }

    /// Group-wise `E'` or `f` values of `theta` at `t`.
    pub fn evaluate_group(&self, k: usize, theta: &[f64], t: f64) -> Result<f64> {
        let g = &self.groups[k];
        let range = g.offset..g.offset + g.basis.num_params();
        g.basis.evaluate(&theta[range], t, 0)
    }
}

/// `R_{row, K} = (D 1_K)_row`: how a constant shift of group `K` moves each prediction.
pub fn constraint_matrix(design: &DesignMatrix) -> DMatrix<f64> {
    let nf = design.num_groups();
    let mut r = DMatrix::zeros(design.matrix.nrows(), nf);
    for k in 0..nf {
        let cols = design.matrix.columns_range(design.group_range(k));
        for (row, sum) in cols.column_sum().iter().enumerate() {
            r[(row, k)] = *sum;
        }
    }
    r
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let max = sv.iter().fold(0.0f64, |a, b| a.max(*b));
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_TOLERANCE * max).count()
}

pub fn detect_constraints(design: &DesignMatrix) -> ConstraintSet {
    let r = constraint_matrix(design);
    let nf = design.num_groups();
    let rank = numerical_rank(&r);
    // most-sampled groups are kept free first
    let mut order: Vec<usize> = (0..nf).collect();
    order.sort_by_key(|k| (std::cmp::Reverse(design.contributing[*k]), *k));
    let mut free: Vec<usize> = Vec::new();
    let mut constrained = Vec::new();
    for k in order {
        let mut trial = free.clone();
        trial.push(k);
        let sub = DMatrix::from_fn(r.nrows(), trial.len(), |i, j| r[(i, trial[j])]);
        if numerical_rank(&sub) > free.len() {
            free.push(k);
        } else {
            constrained.push(k);
        }
    }
    constrained.sort_unstable();

    let degenerate = if rank < nf {
        let gram = r.transpose() * &r;
        let eig = nalgebra::SymmetricEigen::new(gram);
        let mut idx: Vec<usize> = (0..nf).collect();
        idx.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
        idx.iter()
            .take(nf - rank)
            .map(|i| eig.eigenvectors.column(*i).iter().copied().collect())
            .collect()
    } else {
        Vec::new()
    };

    ConstraintSet {
        constrained,
        rank,
        num_groups: nf,
        sample_count: design.num_samples(),
        group_offsets: design.group_offsets.clone(),
        degenerate,
    }
}
