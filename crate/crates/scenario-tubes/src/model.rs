//! Probabilistic function model and data-consistent scenario generation.
//!
//! A scenario is one random function drawn to be exchangeable with the
//! unknown function given the data: sample prior coefficients, sample a fresh
//! noise realization for every observation, then project the coefficients
//! onto the interpolation constraint with the minimum-norm update
//!
//! `c = c_p + Phi' (Phi Phi' + ridge I)^-1 (y - noise - Phi c_p)`.
//!
//! All randomness flows through per-scenario substreams, so batches are
//! reproducible bit-for-bit and extending a batch never disturbs scenarios
//! already drawn.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, StudentT, Uniform};
use rayon::prelude::*;

use crate::basis::{vandermonde_at_indices, BasisFamily, DesignMatrix};
use crate::convolve::LatticeConv;
use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::rng::{Stream, StreamTag};

/// Rows processed per parallel work unit. Fixed so that results do not
/// depend on thread count.
const SCENARIO_CHUNK: usize = 64;

/// Grid size above which a stationary kernel basis switches from the dense
/// matrix product to the lattice convolution evaluator.
const LATTICE_THRESHOLD: usize = 1024;

/// Prior distribution of the coefficient vector (i.i.d. across entries).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoeffDistribution {
    Gaussian { mean: f64, variance: f64 },
    StudentT { dof: f64, scale: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl CoeffDistribution {
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        let d = CoeffDistribution::Gaussian { mean, variance };
        d.validate()?;
        Ok(d)
    }

    pub fn student_t(dof: f64, scale: f64) -> Result<Self> {
        let d = CoeffDistribution::StudentT { dof, scale };
        d.validate()?;
        Ok(d)
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let d = CoeffDistribution::Uniform { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            CoeffDistribution::Gaussian { mean, variance } => {
                mean.is_finite() && variance.is_finite() && *variance > 0.0
            }
            CoeffDistribution::StudentT { dof, scale } => {
                dof.is_finite() && scale.is_finite() && *dof > 0.0 && *scale > 0.0
            }
            CoeffDistribution::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDistribution(format!("{self:?}")))
        }
    }

    /// Fill `out` with i.i.d. draws.
    pub fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            CoeffDistribution::Gaussian { mean, variance } => {
                let sd = variance.sqrt();
                for slot in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *slot = mean + sd * z;
                }
            }
            CoeffDistribution::StudentT { dof, scale } => {
                let t = StudentT::new(*dof).expect("validated dof");
                for slot in out.iter_mut() {
                    let z: f64 = rng.sample(t);
                    *slot = scale * z;
                }
            }
            CoeffDistribution::Uniform { lo, hi } => {
                let u = Uniform::new(*lo, *hi).expect("validated bounds");
                for slot in out.iter_mut() {
                    *slot = rng.sample(u);
                }
            }
        }
    }
}

/// Observation-noise distribution. `Zero` is the noiseless limit mode used
/// by interpolation collapse checks.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseDistribution {
    Uniform { delta: f64 },
    Gaussian { variance: f64 },
    Zero,
}

impl NoiseDistribution {
    pub fn uniform(delta: f64) -> Result<Self> {
        let d = NoiseDistribution::Uniform { delta };
        d.validate()?;
        Ok(d)
    }

    pub fn gaussian(variance: f64) -> Result<Self> {
        let d = NoiseDistribution::Gaussian { variance };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            NoiseDistribution::Uniform { delta } => delta.is_finite() && *delta > 0.0,
            NoiseDistribution::Gaussian { variance } => variance.is_finite() && *variance > 0.0,
            NoiseDistribution::Zero => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDistribution(format!("{self:?}")))
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            NoiseDistribution::Uniform { delta } => {
                rng.sample(Uniform::new(-delta, *delta).expect("validated delta"))
            }
            NoiseDistribution::Gaussian { variance } => {
                let z: f64 = rng.sample(StandardNormal);
                variance.sqrt() * z
            }
            NoiseDistribution::Zero => 0.0,
        }
    }
}

/// The probabilistic model: grid, one basis family per output, a coefficient
/// prior, and an observation-noise law. Output 0 is the reward; the rest are
/// constraints.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FunctionModel {
    pub grid: DomainGrid,
    pub bases: Vec<BasisFamily>,
    pub prior: CoeffDistribution,
    pub noise: NoiseDistribution,
}

impl FunctionModel {
    pub fn new(
        grid: DomainGrid,
        bases: Vec<BasisFamily>,
        prior: CoeffDistribution,
        noise: NoiseDistribution,
    ) -> Result<Self> {
        if bases.is_empty() {
            return Err(Error::InvalidBasis("need at least one output basis".into()));
        }
        for basis in &bases {
            basis.validate(&grid)?;
        }
        prior.validate()?;
        noise.validate()?;
        Ok(FunctionModel {
            grid,
            bases,
            prior,
            noise,
        })
    }

    pub fn outputs(&self) -> usize {
        self.bases.len()
    }
}

/// Evaluated parameters and the complete observation table, one value per
/// `(output, step)` pair. Parameters are stored as grid indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    outputs: usize,
    param_indices: Vec<usize>,
    /// `obs[i][t']` is the observation of output `i` at step `t'`.
    obs: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn empty(outputs: usize) -> Self {
        Dataset {
            outputs,
            param_indices: Vec::new(),
            obs: vec![Vec::new(); outputs],
        }
    }

    /// Build from parameter coordinates and per-step observation rows.
    pub fn from_observations(
        grid: &DomainGrid,
        points: &[Vec<f64>],
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        if points.len() != rows.len() {
            return Err(Error::InvalidDataset(format!(
                "{} parameters but {} observation rows",
                points.len(),
                rows.len()
            )));
        }
        let outputs = rows.first().map_or(1, Vec::len);
        let mut data = Dataset::empty(outputs);
        for (point, row) in points.iter().zip(rows) {
            data.push(grid.locate(point)?, row)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, grid_index: usize, ys: &[f64]) -> Result<()> {
        if ys.len() != self.outputs {
            return Err(Error::InvalidDataset(format!(
                "expected {} observations per step, got {}",
                self.outputs,
                ys.len()
            )));
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidDataset("non-finite observation".into()));
        }
        self.param_indices.push(grid_index);
        for (column, &y) in self.obs.iter_mut().zip(ys) {
            column.push(y);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.param_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.param_indices.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn param_indices(&self) -> &[usize] {
        &self.param_indices
    }

    pub fn observations(&self, output: usize) -> &[f64] {
        &self.obs[output]
    }
}

/// Draw `count` i.i.d. coefficient vectors of length `dim`; vector `j` comes
/// from substream `j` of the given stream.
pub fn sample_prior_coeffs(
    dist: &CoeffDistribution,
    dim: usize,
    count: usize,
    stream: Stream,
) -> Result<Vec<Vec<f64>>> {
    if count < 1 {
        return Err(Error::InvalidDistribution(
            "prior sample count must be >= 1".into(),
        ));
    }
    dist.validate()?;
    Ok((0..count)
        .map(|j| {
            let mut rng = stream.child(j as u64).rng();
            let mut row = vec![0.0; dim];
            dist.sample_into(&mut rng, &mut row);
            row
        })
        .collect())
}

/// Minimum-norm projector onto the interpolation constraint of one output.
///
/// Factors `Phi Phi' + ridge I` once; projecting a scenario is then two
/// matrix-vector passes and one triangular solve.
pub struct Projector {
    /// Row-major `t x R` design matrix.
    phi: Vec<f64>,
    rows: usize,
    cols: usize,
    chol: Cholesky<f64, Dyn>,
    pub ridge: f64,
}

/// Default ridge applied when the Gram matrix is numerically singular.
pub fn auto_ridge(design: &DesignMatrix) -> f64 {
    let t = design.rows().max(1);
    let frob2: f64 = design.entries.iter().map(|v| v * v).sum();
    1e-8 * frob2 / t as f64
}

impl Projector {
    pub fn from_design(design: &DesignMatrix, ridge: f64) -> Result<Self> {
        let t = design.rows();
        let r = design.entries.ncols();
        assert!(t >= 1, "projector needs at least one observation");
        let mut phi = vec![0.0; t * r];
        for i in 0..t {
            for c in 0..r {
                phi[i * r + c] = design.entries[(i, c)];
            }
        }
        let mut gram = DMatrix::zeros(t, t);
        for i in 0..t {
            for j in i..t {
                let dot: f64 = (0..r).map(|c| phi[i * r + c] * phi[j * r + c]).sum();
                gram[(i, j)] = dot;
                gram[(j, i)] = dot;
            }
        }
        let trace_mean = gram.trace() / t as f64;
        for i in 0..t {
            gram[(i, i)] += ridge;
        }
        let chol = match Cholesky::new(gram) {
            Some(c) => c,
            None => return Err(Error::RankDeficient),
        };
        if ridge == 0.0 {
            let min_diag = (0..t).map(|i| chol.l_dirty()[(i, i)]).fold(f64::INFINITY, f64::min);
            if !(min_diag * min_diag > trace_mean * 1e-12) {
                return Err(Error::RankDeficient);
            }
        }
        Ok(Projector {
            phi,
            rows: t,
            cols: r,
            chol,
            ridge,
        })
    }

    /// Replace `coeffs` with its minimum-norm update onto `Phi c = target`.
    pub fn project(&self, coeffs: &mut [f64], target: &[f64]) {
        debug_assert_eq!(coeffs.len(), self.cols);
        debug_assert_eq!(target.len(), self.rows);
        let mut deficit = DVector::zeros(self.rows);
        for i in 0..self.rows {
            let row = &self.phi[i * self.cols..(i + 1) * self.cols];
            let fit: f64 = row.iter().zip(coeffs.iter()).map(|(a, b)| a * b).sum();
            deficit[i] = target[i] - fit;
        }
        self.chol.solve_mut(&mut deficit);
        for i in 0..self.rows {
            let alpha = deficit[i];
            let row = &self.phi[i * self.cols..(i + 1) * self.cols];
            for (c, &p) in coeffs.iter_mut().zip(row) {
                *c += alpha * p;
            }
        }
    }
}

/// Minimum-norm coefficient update (the one-shot form of [`Projector`]).
///
/// With `ridge = 0` and a full-row-rank design, the result interpolates
/// `target` exactly and minimizes the Euclidean distance to `c_p`. A singular
/// Gram matrix with `ridge = 0` is reported as [`Error::RankDeficient`]; the
/// caller decides the ridge.
pub fn project_coeffs(
    c_p: &[f64],
    design: &DesignMatrix,
    target: &[f64],
    ridge: f64,
) -> Result<Vec<f64>> {
    if design.rows() != target.len() {
        return Err(Error::InvalidDataset(format!(
            "design has {} rows but target has {} entries",
            design.rows(),
            target.len()
        )));
    }
    let mut out = c_p.to_vec();
    if design.rows() == 0 {
        return Ok(out);
    }
    let projector = Projector::from_design(design, ridge)?;
    projector.project(&mut out, target);
    Ok(out)
}

/// Grid evaluation backend for one output basis.
pub enum Evaluator {
    /// Row-major `R x N` transposed basis matrix; evaluation is one GEMM.
    Dense { bt: Vec<f64>, r: usize, n: usize },
    /// FFT convolution for stationary kernels on large lattices.
    Lattice(LatticeConv),
}

impl Evaluator {
    pub fn build(family: &BasisFamily, grid: &DomainGrid) -> Result<Self> {
        family.validate(grid)?;
        if let BasisFamily::KernelSections { kernel } = family {
            if grid.len() >= LATTICE_THRESHOLD {
                if let Some(conv) = LatticeConv::build(kernel, grid) {
                    return Ok(Evaluator::Lattice(conv));
                }
            }
        }
        let n = grid.len();
        let r = family.size(grid);
        let mut bt = vec![0.0; r * n];
        let mut row = vec![0.0; r];
        for p in 0..n {
            family.eval_row(grid, grid.point(p), &mut row);
            for (rr, &v) in row.iter().enumerate() {
                bt[rr * n + p] = v;
            }
        }
        Ok(Evaluator::Dense { bt, r, n })
    }

    /// Evaluate a block of coefficient rows (row-major `rows x R`) onto the
    /// grid (row-major `rows x N`).
    pub fn eval_block(&self, coeffs: &[f64], out: &mut [f64]) {
        match self {
            Evaluator::Dense { bt, r, n } => {
                let rows = coeffs.len() / r;
                debug_assert_eq!(out.len(), rows * n);
                unsafe {
                    matrixmultiply::dgemm(
                        rows,
                        *r,
                        *n,
                        1.0,
                        coeffs.as_ptr(),
                        *r as isize,
                        1,
                        bt.as_ptr(),
                        *n as isize,
                        1,
                        0.0,
                        out.as_mut_ptr(),
                        *n as isize,
                        1,
                    );
                }
            }
            Evaluator::Lattice(conv) => {
                // Kernel sections have R = N, so rows of coefficients and
                // rows of values share one width.
                let n = conv.n_points();
                let mut scratch = conv.make_scratch();
                for (c_row, o_row) in coeffs.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
                    conv.apply(c_row, o_row, &mut scratch);
                }
            }
        }
    }
}

/// Evaluation backends for every output of a model, built once and shared
/// across tube constructions.
pub struct ModelEvaluators {
    pub list: Vec<Evaluator>,
}

impl ModelEvaluators {
    pub fn build(model: &FunctionModel) -> Result<Self> {
        let list = model
            .bases
            .iter()
            .map(|b| Evaluator::build(b, &model.grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelEvaluators { list })
    }
}

/// A batch of scenarios: coefficients and grid evaluations per output, plus
/// the stream that reproduces them.
pub struct ScenarioBatch {
    m: usize,
    n_points: usize,
    outputs: usize,
    /// Per output, row-major `m x N` scenario values on the grid.
    pub values: Vec<Vec<f64>>,
    /// Per output, row-major `m x R` projected coefficients.
    pub coeffs: Vec<Vec<f64>>,
    stream: Stream,
}

impl ScenarioBatch {
    /// Assemble a batch from raw per-output buffers (row-major `m x N`
    /// values and `m x R` coefficients). Used to rebuild stored batches and
    /// to craft hand-made batches in tests.
    pub fn from_raw_parts(
        values: Vec<Vec<f64>>,
        coeffs: Vec<Vec<f64>>,
        m: usize,
        n_points: usize,
        stream: Stream,
    ) -> Self {
        assert_eq!(values.len(), coeffs.len());
        for v in &values {
            assert_eq!(v.len(), m * n_points);
        }
        ScenarioBatch {
            m,
            n_points,
            outputs: values.len(),
            values,
            coeffs,
            stream,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }

    /// Values of scenario `j` for one output, over all grid points.
    pub fn scenario(&self, output: usize, j: usize) -> &[f64] {
        &self.values[output][j * self.n_points..(j + 1) * self.n_points]
    }

    pub fn scenario_coeffs(&self, output: usize, j: usize) -> &[f64] {
        let r = self.coeffs[output].len() / self.m;
        &self.coeffs[output][j * r..(j + 1) * r]
    }

    /// Remove scenario `j` (used by the removal oracle in tests and debug
    /// tooling; not part of the sampling path).
    pub fn without_scenario(&self, j: usize) -> ScenarioBatch {
        assert!(j < self.m);
        let take = |data: &[f64], width: usize| {
            let mut out = Vec::with_capacity((self.m - 1) * width);
            out.extend_from_slice(&data[..j * width]);
            out.extend_from_slice(&data[(j + 1) * width..]);
            out
        };
        ScenarioBatch {
            m: self.m - 1,
            n_points: self.n_points,
            outputs: self.outputs,
            values: self
                .values
                .iter()
                .map(|v| take(v, self.n_points))
                .collect(),
            coeffs: self
                .coeffs
                .iter()
                .map(|c| take(c, c.len() / self.m))
                .collect(),
            stream: self.stream,
        }
    }
}

/// Reusable scenario generator for one `(model, dataset)` pair.
pub struct ScenarioSampler<'a> {
    model: &'a FunctionModel,
    evaluators: &'a ModelEvaluators,
    projectors: Vec<Option<Projector>>,
    stream: Stream,
}

impl<'a> ScenarioSampler<'a> {
    /// Prepare projectors (one per output) for the current dataset. An empty
    /// dataset yields pure prior draws. A numerically singular design (for
    /// example repeated sample points) falls back to the default ridge.
    pub fn new(
        model: &'a FunctionModel,
        evaluators: &'a ModelEvaluators,
        data: &Dataset,
        stream: Stream,
    ) -> Result<Self> {
        if !data.is_empty() && data.outputs() != model.outputs() {
            return Err(Error::InvalidDataset(format!(
                "dataset has {} outputs, model has {}",
                data.outputs(),
                model.outputs()
            )));
        }
        let mut projectors = Vec::with_capacity(model.outputs());
        for basis in &model.bases {
            if data.is_empty() {
                projectors.push(None);
            } else {
                let design = vandermonde_at_indices(basis, &model.grid, data.param_indices())?;
                let projector = match Projector::from_design(&design, 0.0) {
                    Ok(p) => p,
                    Err(Error::RankDeficient) => {
                        Projector::from_design(&design, auto_ridge(&design))?
                    }
                    Err(e) => return Err(e),
                };
                projectors.push(Some(projector));
            }
        }
        Ok(ScenarioSampler {
            model,
            evaluators,
            projectors,
            stream,
        })
    }

    /// Draw a fresh batch of `m` scenarios.
    pub fn draw(&self, data: &Dataset, m: usize) -> Result<ScenarioBatch> {
        if m < 1 {
            return Err(Error::EmptyBatch);
        }
        let mut batch = ScenarioBatch {
            m: 0,
            n_points: self.model.grid.len(),
            outputs: self.model.outputs(),
            values: vec![Vec::new(); self.model.outputs()],
            coeffs: vec![Vec::new(); self.model.outputs()],
            stream: self.stream,
        };
        self.extend(&mut batch, data, m)?;
        Ok(batch)
    }

    /// Grow `batch` to `new_m` scenarios. Scenario `j` depends only on the
    /// batch stream and `j`, so already-drawn scenarios are untouched.
    pub fn extend(&self, batch: &mut ScenarioBatch, data: &Dataset, new_m: usize) -> Result<()> {
        assert_eq!(batch.stream, self.stream, "batch belongs to another stream");
        let old_m = batch.m;
        if new_m <= old_m {
            return Ok(());
        }
        let n = self.model.grid.len();
        let t = data.len();

        for (i, basis) in self.model.bases.iter().enumerate() {
            let r = basis.size(&self.model.grid);
            let projector = self.projectors[i].as_ref();
            let y = if t > 0 { data.observations(i) } else { &[][..] };

            batch.coeffs[i].resize(new_m * r, 0.0);
            let stream = self.stream;
            let prior = self.model.prior;
            let noise = self.model.noise;
            batch.coeffs[i][old_m * r..]
                .par_chunks_mut(SCENARIO_CHUNK * r)
                .enumerate()
                .for_each(|(chunk_idx, chunk)| {
                    let base = old_m + chunk_idx * SCENARIO_CHUNK;
                    let mut target = vec![0.0; t];
                    for (offset, row) in chunk.chunks_exact_mut(r).enumerate() {
                        let j = (base + offset) as u64;
                        let mut prior_rng =
                            stream.child(j).tagged(StreamTag::Prior).child(i as u64).rng();
                        prior.sample_into(&mut prior_rng, row);
                        if let Some(projector) = projector {
                            let mut noise_rng =
                                stream.child(j).tagged(StreamTag::Noise).child(i as u64).rng();
                            for (slot, &obs) in target.iter_mut().zip(y) {
                                *slot = obs - noise.sample(&mut noise_rng);
                            }
                            projector.project(row, &target);
                        }
                    }
                });

            batch.values[i].resize(new_m * n, 0.0);
            let evaluator = &self.evaluators.list[i];
            let coeffs_new = &batch.coeffs[i][old_m * r..];
            batch.values[i][old_m * n..]
                .par_chunks_mut(SCENARIO_CHUNK * n)
                .zip(coeffs_new.par_chunks(SCENARIO_CHUNK * r))
                .for_each(|(out_chunk, coeff_chunk)| {
                    evaluator.eval_block(coeff_chunk, out_chunk);
                });
        }
        batch.m = new_m;
        Ok(())
    }
}

/// Draw `m` data-consistent scenarios (the one-shot form of
/// [`ScenarioSampler`]).
pub fn draw_scenarios(
    model: &FunctionModel,
    data: &Dataset,
    m: usize,
    stream: Stream,
) -> Result<ScenarioBatch> {
    let evaluators = ModelEvaluators::build(model)?;
    ScenarioSampler::new(model, &evaluators, data, stream)?.draw(data, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::vandermonde;
    use crate::grid::build_grid;

    fn trig_model(n: usize, noise: NoiseDistribution) -> FunctionModel {
        let grid = build_grid(&[(0.0, 1.0)], &[n]).unwrap();
        FunctionModel::new(
            grid,
            vec![BasisFamily::Trigonometric {
                frequency_step: 0.05 * std::f64::consts::PI,
                size: None,
            }],
            CoeffDistribution::gaussian(0.0, 0.1).unwrap(),
            noise,
        )
        .unwrap()
    }

    #[test]
    fn zero_variance_gaussian_is_rejected() {
        assert!(CoeffDistribution::gaussian(0.0, 0.0).is_err());
        assert!(NoiseDistribution::uniform(0.0).is_err());
        assert!(NoiseDistribution::gaussian(-1.0).is_err());
    }

    #[test]
    fn gaussian_sample_variance_matches() {
        let dist = CoeffDistribution::gaussian(0.0, 0.1).unwrap();
        let draws = sample_prior_coeffs(&dist, 1_000_000, 1, Stream::root(11)).unwrap();
        let row = &draws[0];
        let mean: f64 = row.iter().sum::<f64>() / row.len() as f64;
        let var: f64 =
            row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (row.len() - 1) as f64;
        assert!((var - 0.1).abs() < 0.001, "var = {var}");
    }

    #[test]
    fn student_t_is_heavier_tailed_than_gaussian() {
        let kurtosis = |xs: &[f64]| {
            let n = xs.len() as f64;
            let mean: f64 = xs.iter().sum::<f64>() / n;
            let m2: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let m4: f64 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
            m4 / (m2 * m2)
        };
        let t = sample_prior_coeffs(
            &CoeffDistribution::student_t(10.0, 1e-2).unwrap(),
            200_000,
            1,
            Stream::root(5),
        )
        .unwrap();
        let g = sample_prior_coeffs(
            &CoeffDistribution::gaussian(0.0, 1e-4).unwrap(),
            200_000,
            1,
            Stream::root(6),
        )
        .unwrap();
        assert!(kurtosis(&t[0]) > kurtosis(&g[0]));
    }

    #[test]
    fn projection_hand_case() {
        let grid = build_grid(&[(0.0, 1.0)], &[3]).unwrap();
        // Design with a single row [1, 0, 1]: cook it via a custom matrix.
        let design = DesignMatrix {
            entries: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 1.0]),
            row_indices: vec![0],
            row_points: vec![vec![0.0]],
        };
        let out = project_coeffs(&[1.0, 1.0, 1.0], &design, &[4.0], 0.0).unwrap();
        assert_eq!(out, vec![2.0, 1.0, 2.0]);
        let _ = grid;
    }

    #[test]
    fn projection_is_identity_on_satisfied_constraints() {
        let design = DesignMatrix {
            entries: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 1.0]),
            row_indices: vec![0],
            row_points: vec![vec![0.0]],
        };
        let out = project_coeffs(&[1.0, 1.0, 1.0], &design, &[2.0], 0.0).unwrap();
        for (a, b) in out.iter().zip(&[1.0, 1.0, 1.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn projection_matches_equality_constrained_least_squares() {
        // KKT oracle: minimize ||c - c_p||^2 s.t. Phi c = b solves
        // [I Phi'; Phi 0] [c; lambda] = [c_p; b].
        let mut rng = Stream::root(3).rng();
        for _ in 0..20 {
            let t = 3;
            let r = 8;
            let phi = DMatrix::from_fn(t, r, |_, _| rng.random::<f64>() - 0.5);
            let c_p: Vec<f64> = (0..r).map(|_| rng.random::<f64>() - 0.5).collect();
            let target: Vec<f64> = (0..t).map(|_| 2.0 * rng.random::<f64>()).collect();

            let mut kkt = DMatrix::zeros(r + t, r + t);
            for i in 0..r {
                kkt[(i, i)] = 1.0;
            }
            kkt.view_mut((0, r), (r, t)).copy_from(&phi.transpose());
            kkt.view_mut((r, 0), (t, r)).copy_from(&phi);
            let mut rhs = DVector::zeros(r + t);
            for i in 0..r {
                rhs[i] = c_p[i];
            }
            for i in 0..t {
                rhs[r + i] = target[i];
            }
            let sol = kkt.lu().solve(&rhs).unwrap();

            let design = DesignMatrix {
                entries: phi.clone(),
                row_indices: vec![0; t],
                row_points: vec![vec![0.0]; t],
            };
            let mine = project_coeffs(&c_p, &design, &target, 0.0).unwrap();
            for i in 0..r {
                assert!((mine[i] - sol[i]).abs() < 1e-8, "entry {i}");
            }
        }
    }

    #[test]
    fn projection_update_lies_in_row_space() {
        let mut rng = Stream::root(9).rng();
        let t = 4;
        let r = 10;
        let phi = DMatrix::from_fn(t, r, |_, _| rng.random::<f64>() - 0.5);
        let c_p: Vec<f64> = (0..r).map(|_| rng.random::<f64>()).collect();
        let target: Vec<f64> = (0..t).map(|_| rng.random::<f64>()).collect();
        let design = DesignMatrix {
            entries: phi.clone(),
            row_indices: vec![0; t],
            row_points: vec![vec![0.0]; t],
        };
        let out = project_coeffs(&c_p, &design, &target, 0.0).unwrap();
        let update = DVector::from_iterator(r, out.iter().zip(&c_p).map(|(a, b)| a - b));
        // Residual after least-squares fit of the update onto Phi'.
        let svd = phi.transpose().svd(true, true);
        let fitted = &phi.transpose() * svd.solve(&update, 1e-12).unwrap();
        assert!((&update - fitted).norm() <= 1e-8 * update.norm().max(1.0));
    }

    #[test]
    fn rank_deficient_design_requires_ridge() {
        let entries = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        let design = DesignMatrix {
            entries,
            row_indices: vec![0, 0],
            row_points: vec![vec![0.0], vec![0.0]],
        };
        let err = project_coeffs(&[0.0; 3], &design, &[1.0, 2.0], 0.0);
        assert!(matches!(err, Err(Error::RankDeficient)));
        // With a ridge the projection compromises between the two targets.
        let out = project_coeffs(&[0.0; 3], &design, &[1.0, 2.0], 1e-8).unwrap();
        let fit = out[0] + out[2];
        assert!((fit - 1.5).abs() < 1e-3, "fit = {fit}");
    }

    #[test]
    fn empty_dataset_gives_prior_functions() {
        let model = trig_model(12, NoiseDistribution::uniform(0.1).unwrap());
        let data = Dataset::empty(1);
        let batch = draw_scenarios(&model, &data, 3, Stream::root(1)).unwrap();
        assert_eq!(batch.m(), 3);
        // Values are the straight basis expansion of the prior coefficients.
        let b = crate::basis::eval_basis(&model.bases[0], &model.grid).unwrap();
        for j in 0..3 {
            let c = batch.scenario_coeffs(0, j);
            let v = batch.scenario(0, j);
            for p in 0..12 {
                let expect: f64 = (0..12).map(|r| b[(p, r)] * c[r]).sum();
                assert!((v[p] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_noise_scenarios_interpolate_observations() {
        let model = trig_model(16, NoiseDistribution::Zero);
        let grid = &model.grid;
        let points = vec![vec![0.0], vec![grid.point(7)[0]], vec![1.0]];
        let data =
            Dataset::from_observations(grid, &points, &[vec![1.5], vec![-0.25], vec![0.75]])
                .unwrap();
        let batch = draw_scenarios(&model, &data, 4, Stream::root(2)).unwrap();
        for j in 0..4 {
            let v = batch.scenario(0, j);
            assert!((v[0] - 1.5).abs() < 1e-8);
            assert!((v[7] + 0.25).abs() < 1e-8);
            assert!((v[15] - 0.75).abs() < 1e-8);
        }
    }

    #[test]
    fn noisy_scenarios_satisfy_interpolation_residual() {
        let model = trig_model(64, NoiseDistribution::uniform(0.1).unwrap());
        let grid = &model.grid;
        let points: Vec<Vec<f64>> = [5usize, 20, 40, 60]
            .iter()
            .map(|&i| grid.point(i).to_vec())
            .collect();
        let rows: Vec<Vec<f64>> = vec![vec![0.3], vec![-1.0], vec![2.0], vec![0.0]];
        let data = Dataset::from_observations(grid, &points, &rows).unwrap();
        let batch = draw_scenarios(&model, &data, 32, Stream::root(4)).unwrap();
        let y_max = 2.0f64;

        // Reconstruct each scenario's noise draws to check the constraint
        // Phi c = y - noise at the sampled points.
        let design = vandermonde(&model.bases[0], grid, &points).unwrap();
        for j in 0..batch.m() {
            let mut noise_rng = batch
                .stream()
                .child(j as u64)
                .tagged(StreamTag::Noise)
                .child(0)
                .rng();
            let c = batch.scenario_coeffs(0, j);
            for (t_idx, row) in rows.iter().enumerate() {
                let eps = model.noise.sample(&mut noise_rng);
                let want = row[0] - eps;
                let got: f64 = (0..64).map(|r| design.entries[(t_idx, r)] * c[r]).sum();
                assert!(
                    (got - want).abs() <= 1e-6 * (1.0 + y_max),
                    "scenario {j} step {t_idx}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn batches_are_reproducible_and_extension_is_stable() {
        let model = trig_model(20, NoiseDistribution::uniform(0.05).unwrap());
        let grid = &model.grid;
        let data =
            Dataset::from_observations(grid, &[grid.point(10).to_vec()], &[vec![1.0]]).unwrap();

        let a = draw_scenarios(&model, &data, 8, Stream::root(7)).unwrap();
        let b = draw_scenarios(&model, &data, 8, Stream::root(7)).unwrap();
        assert_eq!(bits(&a.values[0]), bits(&b.values[0]));

        let evals = ModelEvaluators::build(&model).unwrap();
        let sampler = ScenarioSampler::new(&model, &evals, &data, Stream::root(7)).unwrap();
        let mut grown = sampler.draw(&data, 3).unwrap();
        sampler.extend(&mut grown, &data, 8).unwrap();
        assert_eq!(bits(&grown.values[0]), bits(&a.values[0]));
        assert_eq!(bits(&grown.coeffs[0]), bits(&a.coeffs[0]));
    }

    fn bits(xs: &[f64]) -> Vec<u64> {
        xs.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn disjoint_substreams_pass_two_sample_ks() {
        // Pushforward smoke test: two batches from different substreams look
        // like draws from the same law at a fixed grid point.
        let model = trig_model(32, NoiseDistribution::uniform(0.1).unwrap());
        let data = Dataset::from_observations(
            &model.grid,
            &[vec![model.grid.point(10)[0]]],
            &[vec![0.4]],
        )
        .unwrap();
        let m = 10_000;
        let a = draw_scenarios(&model, &data, m, Stream::root(100).child(0)).unwrap();
        let b = draw_scenarios(&model, &data, m, Stream::root(100).child(1)).unwrap();
        let point = 25;
        let mut xs: Vec<f64> = (0..m).map(|j| a.scenario(0, j)[point]).collect();
        let mut ys: Vec<f64> = (0..m).map(|j| b.scenario(0, j)[point]).collect();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let mut d_stat = 0.0f64;
        let (mut i, mut j) = (0usize, 0usize);
        while i < m && j < m {
            if xs[i] <= ys[j] {
                i += 1;
            } else {
                j += 1;
            }
            d_stat = d_stat.max((i as f64 / m as f64 - j as f64 / m as f64).abs());
        }
        // Critical value at level 0.01 for a two-sample KS test.
        let critical = 1.628 * (2.0 / m as f64).sqrt();
        assert!(d_stat < critical, "D = {d_stat}, critical = {critical}");
    }

    #[test]
    fn lattice_and_dense_evaluators_agree() {
        let grid = build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[40, 40]).unwrap();
        let kernel = crate::basis::KernelSpec::Matern32 { lengthscale: 0.3 };
        let family = BasisFamily::KernelSections { kernel };
        // 1600 >= threshold: build() picks the lattice path.
        let fast = Evaluator::build(&family, &grid).unwrap();
        assert!(matches!(fast, Evaluator::Lattice(_)));
        let n = grid.len();
        let mut bt = vec![0.0; n * n];
        let mut row = vec![0.0; n];
        for p in 0..n {
            family.eval_row(&grid, grid.point(p), &mut row);
            for (rr, &v) in row.iter().enumerate() {
                bt[rr * n + p] = v;
            }
        }
        let dense = Evaluator::Dense { bt, r: n, n };
        let coeffs: Vec<f64> = (0..n).map(|i| ((i % 17) as f64 - 8.0) / 8.0).collect();
        let mut out_fast = vec![0.0; n];
        let mut out_dense = vec![0.0; n];
        fast.eval_block(&coeffs, &mut out_fast);
        dense.eval_block(&coeffs, &mut out_dense);
        for (a, b) in out_fast.iter().zip(&out_dense) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
