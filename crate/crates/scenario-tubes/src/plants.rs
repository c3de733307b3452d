//! Ground-truth experiment backends.
//!
//! Synthetic plants hold one fixed draw from a function model as the unknown
//! truth and answer queries with fresh observation noise, which keeps every
//! campaign reproducible and lets tests check safety against the truth. The
//! Furuta plant simulates a discrete-time linear state-feedback loop and maps
//! rollouts to a stabilization reward and two angle-margin constraints.

pub mod furuta;

use crate::basis::BasisFamily;
use crate::error::{Error, Result};
use crate::grid::{build_grid, DomainGrid};
use crate::model::{CoeffDistribution, FunctionModel, ModelEvaluators, NoiseDistribution};
use crate::rng::{Stream, StreamTag};

pub use furuta::{
    furuta_plant, furuta_reward_constraints, furuta_rollout, FurutaParams, FurutaPlant, Trajectory,
};

/// An experiment backend: noisy queries at grid points, with optional access
/// to the noiseless truth for calibration and safety accounting.
pub trait Plant: Sync {
    fn outputs(&self) -> usize;

    /// Conduct one experiment at `point`; the stream seeds the observation
    /// noise for this query only.
    fn query(&self, point: &[f64], stream: Stream) -> Result<Vec<f64>>;

    /// Noiseless output values, when the plant can expose them.
    fn truth(&self, point: &[f64]) -> Option<Vec<f64>>;
}

/// A plant whose truth is one fixed draw from a function model.
pub struct SyntheticPlant {
    grid: DomainGrid,
    noise: NoiseDistribution,
    /// `truth[i][p]`: noiseless value of output `i` at grid point `p`.
    truth: Vec<Vec<f64>>,
    /// The coefficient draw behind each output, kept for span checks.
    coeffs: Vec<Vec<f64>>,
}

impl SyntheticPlant {
    /// Draw the ground truth from `model` using the seed's truth substream.
    pub fn from_model(model: &FunctionModel, seed: u64) -> Result<Self> {
        let evaluators = ModelEvaluators::build(model)?;
        let n = model.grid.len();
        let mut truth = Vec::with_capacity(model.outputs());
        let mut coeffs = Vec::with_capacity(model.outputs());
        for (i, basis) in model.bases.iter().enumerate() {
            let mut rng = Stream::root(seed)
                .tagged(StreamTag::Truth)
                .child(i as u64)
                .rng();
            let mut c = vec![0.0; basis.size(&model.grid)];
            model.prior.sample_into(&mut rng, &mut c);
            let mut values = vec![0.0; n];
            evaluators.list[i].eval_block(&c, &mut values);
            truth.push(values);
            coeffs.push(c);
        }
        Ok(SyntheticPlant {
            grid: model.grid.clone(),
            noise: model.noise,
            truth,
            coeffs,
        })
    }

    pub fn truth_values(&self, output: usize) -> &[f64] {
        &self.truth[output]
    }

    pub fn truth_coeffs(&self, output: usize) -> &[f64] {
        &self.coeffs[output]
    }

    /// Empirical quantile of one output's truth (used to place thresholds).
    pub fn truth_quantile(&self, output: usize, q: f64) -> f64 {
        let mut vals = self.truth[output].clone();
        vals.sort_by(f64::total_cmp);
        let idx = ((vals.len() as f64 - 1.0) * q).round() as usize;
        vals[idx]
    }
}

impl Plant for SyntheticPlant {
    fn outputs(&self) -> usize {
        self.truth.len()
    }

    fn query(&self, point: &[f64], stream: Stream) -> Result<Vec<f64>> {
        let idx = self.grid.locate(point)?;
        let mut rng = stream.tagged(StreamTag::PlantQuery).rng();
        Ok(self
            .truth
            .iter()
            .map(|values| values[idx] + self.noise.sample(&mut rng))
            .collect())
    }

    fn truth(&self, point: &[f64]) -> Option<Vec<f64>> {
        let idx = self.grid.locate(point).ok()?;
        Some(self.truth.iter().map(|values| values[idx]).collect())
    }
}

/// Default seed for the shipped synthetic presets. Chosen so that the 20%
/// quantile of the reward truth lands near the -2.15 threshold the synthetic
/// campaign uses.
pub const EXAMPLE1_DEFAULT_SEED: u64 = 3;

/// Cosine count of the trigonometric preset. With unit-interval domains and
/// frequency step `0.05 pi` this caps the content at 2.5 cycles, which is
/// what reproduces the reported support counts (about 40 at the classic
/// count) and function range (values within roughly [-6, 6], 20% quantile
/// near -2.15) of the reference experiments.
pub const EXAMPLE1_HARMONICS: usize = 101;

/// Trigonometric single-output model: cosine basis with step `0.05 pi` and
/// 101 harmonics, Gaussian coefficients with variance 0.1, uniform noise of
/// half-width 0.1.
pub fn example1_model(n: usize) -> Result<FunctionModel> {
    let grid = build_grid(&[(0.0, 1.0)], &[n])?;
    FunctionModel::new(
        grid,
        vec![BasisFamily::Trigonometric {
            frequency_step: 0.05 * std::f64::consts::PI,
            size: Some(EXAMPLE1_HARMONICS),
        }],
        CoeffDistribution::gaussian(0.0, 0.1)?,
        NoiseDistribution::uniform(0.1)?,
    )
}

/// Fixed truth drawn from the trigonometric model.
pub fn example1_plant(seed: u64, n: usize) -> Result<SyntheticPlant> {
    let model = example1_model(n)?;
    SyntheticPlant::from_model(&model, seed)
}

/// Haar-basis single-output model: heavy-tailed Student-t coefficients
/// (10 degrees of freedom, scale 0.01) and Gaussian noise with variance 0.01.
pub fn haar_model(n: usize) -> Result<FunctionModel> {
    let grid = build_grid(&[(0.0, 1.0)], &[n])?;
    FunctionModel::new(
        grid,
        vec![BasisFamily::Haar],
        CoeffDistribution::student_t(10.0, 1e-2)?,
        NoiseDistribution::gaussian(1e-2)?,
    )
}

/// Fixed piecewise-constant truth drawn from the Haar model.
pub fn haar_plant(seed: u64, n: usize) -> Result<SyntheticPlant> {
    let model = haar_model(n)?;
    SyntheticPlant::from_model(&model, seed)
}

/// A plant wrapper that fails after a fixed number of queries. Exercises the
/// abort-with-partial-history path.
pub struct FailingPlant<P> {
    pub inner: P,
    pub fail_after: std::sync::atomic::AtomicUsize,
}

impl<P: Plant> Plant for FailingPlant<P> {
    fn outputs(&self) -> usize {
        self.inner.outputs()
    }

    fn query(&self, point: &[f64], stream: Stream) -> Result<Vec<f64>> {
        use std::sync::atomic::Ordering;
        if self
            .fail_after
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_err()
        {
            return Err(Error::PlantFailure("injected failure".into()));
        }
        self.inner.query(point, stream)
    }

    fn truth(&self, point: &[f64]) -> Option<Vec<f64>> {
        self.inner.truth(point)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_truth() {
        let a = example1_plant(7, 64).unwrap();
        let b = example1_plant(7, 64).unwrap();
        assert_eq!(a.truth_values(0), b.truth_values(0));
        let c = example1_plant(8, 64).unwrap();
        assert_ne!(a.truth_values(0), c.truth_values(0));
    }

    #[test]
    fn bounded_noise_keeps_queries_close() {
        let plant = example1_plant(EXAMPLE1_DEFAULT_SEED, 128).unwrap();
        let grid = build_grid(&[(0.0, 1.0)], &[128]).unwrap();
        for p in (0..128).step_by(7) {
            let point = grid.point(p).to_vec();
            let y = plant
                .query(&point, Stream::root(1).child(p as u64))
                .unwrap();
            let truth = plant.truth(&point).unwrap();
            assert!((y[0] - truth[0]).abs() <= 0.1 + 1e-12);
        }
    }

    #[test]
    fn shipped_seed_quantile_is_calibrated() {
        let plant = example1_plant(EXAMPLE1_DEFAULT_SEED, 1000).unwrap();
        let q20 = plant.truth_quantile(0, 0.2);
        assert!(
            (q20 - (-2.15)).abs() <= 0.5,
            "20% quantile {q20} is not within 0.5 of -2.15"
        );
    }

    #[test]
    fn haar_truth_is_piecewise_constant() {
        // A 1000-column Haar expansion is constant on dyadic half-cells of
        // width 1/1024, so its image stays finite no matter how finely it is
        // probed: evaluate the drawn function far off the model grid.
        let model = haar_model(1000).unwrap();
        let plant = SyntheticPlant::from_model(&model, 5).unwrap();
        let coeffs = plant.truth_coeffs(0);
        let probes = 8192;
        let mut row = vec![0.0; 1000];
        let mut seen: Vec<u64> = (0..probes)
            .map(|k| {
                let x = k as f64 / (probes - 1) as f64;
                model.bases[0].eval_row(&model.grid, &[x], &mut row);
                let v: f64 = row.iter().zip(coeffs).map(|(b, c)| b * c).sum();
                v.to_bits()
            })
            .collect();
        seen.sort_unstable();
        seen.dedup();
        assert!(
            seen.len() <= 1100,
            "{} distinct values over {probes} probe points",
            seen.len()
        );
    }

    #[test]
    fn heavy_tail_exceeds_gaussian_counterpart() {
        let t_dist = CoeffDistribution::student_t(10.0, 1e-2).unwrap();
        let g_dist = CoeffDistribution::gaussian(0.0, 1e-4).unwrap();
        let max_abs = |dist: &CoeffDistribution, seed: u64| {
            let mut rng = Stream::root(seed).rng();
            let mut buf = vec![0.0; 1000];
            dist.sample_into(&mut rng, &mut buf);
            buf.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
        };
        assert!(max_abs(&t_dist, 11) > max_abs(&g_dist, 11));
    }

    #[test]
    fn truth_does_not_depend_on_query_stream() {
        let plant = haar_plant(9, 256).unwrap();
        let grid = build_grid(&[(0.0, 1.0)], &[256]).unwrap();
        let point = grid.point(100).to_vec();
        let t1 = plant.truth(&point).unwrap();
        let _ = plant.query(&point, Stream::root(123)).unwrap();
        let t2 = plant.truth(&point).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn off_grid_query_fails() {
        let plant = example1_plant(1, 32).unwrap();
        assert!(plant.query(&[0.123456], Stream::root(0)).is_err());
    }

    #[test]
    fn query_noise_averages_to_truth() {
        let plant = example1_plant(2, 64).unwrap();
        let grid = build_grid(&[(0.0, 1.0)], &[64]).unwrap();
        let point = grid.point(20).to_vec();
        let truth = plant.truth(&point).unwrap()[0];
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|k| {
                plant
                    .query(&point, Stream::root(50).child(k as u64))
                    .unwrap()[0]
            })
            .sum::<f64>()
            / n as f64;
        // Uniform(-0.1, 0.1) noise: sd of the mean is 0.1/sqrt(3 n).
        let tol = 3.0 * 0.1 / (3.0 * n as f64).sqrt();
        assert!((mean - truth).abs() < tol, "mean {mean} truth {truth}");
    }
}
