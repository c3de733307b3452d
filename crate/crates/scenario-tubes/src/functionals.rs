//! Scalar functionals of discretized functions and their high-probability
//! bounds via order statistics of scenario functionals.
//!
//! The bound machinery is one-sided: draw `m` scenarios, evaluate the
//! functional on each, and report the `p`-th smallest value, where `(m, p)`
//! come from [`crate::certificates::scalar_sample_size`]. Lower bounds run
//! the same machinery on the negated functional.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisFamily;
use crate::certificates::scalar_sample_size;
use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::model::{Dataset, Evaluator, FunctionModel, ModelEvaluators, ScenarioSampler};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Lipschitz,
    Supremum,
    Infimum,
    Integral,
    RkhsNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Upper,
    Lower,
}

/// A scalar functional together with the side to bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Functional {
    pub kind: FunctionalKind,
    pub orientation: Orientation,
}

/// Largest discrete slope: `max |f(a) - f(a')| / ||a - a'||` over distinct
/// pairs. On a one-dimensional grid the maximum is attained on an adjacent
/// pair, so the scan is linear there.
fn lipschitz(values: &[f64], grid: &DomainGrid) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    if grid.dim() == 1 {
        let mut best = 0.0f64;
        for p in 0..n - 1 {
            let gap = grid.point(p + 1)[0] - grid.point(p)[0];
            best = best.max((values[p + 1] - values[p]).abs() / gap);
        }
        return best;
    }
    (0..n - 1)
        .into_par_iter()
        .map(|p| {
            let ap = grid.point(p);
            let mut best = 0.0f64;
            for q in (p + 1)..n {
                let aq = grid.point(q);
                let dist2: f64 = ap.iter().zip(aq).map(|(x, y)| (x - y) * (x - y)).sum();
                best = best.max((values[q] - values[p]).abs() / dist2.sqrt());
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// Exhaustive pairwise slope, kept as the oracle for the adjacent-pair scan.
pub fn lipschitz_pairwise(values: &[f64], grid: &DomainGrid) -> f64 {
    let n = values.len();
    let mut best = 0.0f64;
    for p in 0..n {
        for q in (p + 1)..n {
            let dist2: f64 = grid
                .point(p)
                .iter()
                .zip(grid.point(q))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            best = best.max((values[q] - values[p]).abs() / dist2.sqrt());
        }
    }
    best
}

/// Evaluate a scalar functional of one discretized function.
///
/// `coeffs` and `gram` are needed only for the RKHS norm, which is
/// `sqrt(c' K c)` for a kernel-sections expansion with Gram matrix `K`.
pub fn eval_functional(
    kind: FunctionalKind,
    values: &[f64],
    grid: &DomainGrid,
    coeffs: Option<&[f64]>,
    gram: Option<&DMatrix<f64>>,
) -> Result<f64> {
    match kind {
        FunctionalKind::Lipschitz => Ok(lipschitz(values, grid)),
        FunctionalKind::Supremum => Ok(values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
        FunctionalKind::Infimum => Ok(values.iter().cloned().fold(f64::INFINITY, f64::min)),
        FunctionalKind::Integral => {
            if grid.dim() != 1 {
                return Err(Error::FunctionalUnsupported {
                    functional: "integral",
                    requirement: "a one-dimensional grid",
                });
            }
            let mut acc = 0.0;
            for p in 0..values.len().saturating_sub(1) {
                acc += (grid.point(p + 1)[0] - grid.point(p)[0]) * values[p];
            }
            Ok(acc)
        }
        FunctionalKind::RkhsNorm => {
            let (coeffs, gram) = match (coeffs, gram) {
                (Some(c), Some(g)) => (c, g),
                _ => {
                    return Err(Error::FunctionalUnsupported {
                        functional: "rkhs_norm",
                        requirement: "coefficients and a kernel Gram matrix",
                    })
                }
            };
            let mut quad = 0.0;
            for (r, &cr) in coeffs.iter().enumerate() {
                let mut row = 0.0;
                for (c, &cc) in coeffs.iter().enumerate() {
                    row += gram[(r, c)] * cc;
                }
                quad += cr * row;
            }
            Ok(quad.max(0.0).sqrt())
        }
    }
}

/// Result of a scalar bound run, ready for JSON serialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarBound {
    pub functional: FunctionalKind,
    pub orientation: Orientation,
    pub output: usize,
    pub bound: f64,
    pub m: usize,
    pub p: usize,
    pub discards: usize,
    pub nu: f64,
    pub kappa_t: f64,
}

fn functional_of_scenario(
    kind: FunctionalKind,
    model: &FunctionModel,
    evaluator: &Evaluator,
    values: &[f64],
    coeffs: &[f64],
) -> f64 {
    match kind {
        FunctionalKind::RkhsNorm => {
            // c' K c without materializing K: the kernel-sections basis
            // matrix is the Gram matrix, so K c is one evaluator pass.
            let mut kc = vec![0.0; values.len()];
            evaluator.eval_block(coeffs, &mut kc);
            let quad: f64 = coeffs.iter().zip(&kc).map(|(a, b)| a * b).sum();
            quad.max(0.0).sqrt()
        }
        _ => eval_functional(kind, values, &model.grid, None, None)
            .expect("non-RKHS functionals cannot fail"),
    }
}

/// Draw scenarios and bound `S(h)` by the `p`-th order statistic of the
/// sampled functional values (`upper`), or the mirrored statistic of the
/// negated functional (`lower`).
pub fn scalar_bound(
    model: &FunctionModel,
    data: &Dataset,
    functional: Functional,
    output: usize,
    nu: f64,
    kappa_t: f64,
    discards: usize,
    stream: Stream,
) -> Result<ScalarBound> {
    if output >= model.outputs() {
        return Err(Error::Config(format!(
            "output {output} out of range for a {}-output model",
            model.outputs()
        )));
    }
    if functional.kind == FunctionalKind::RkhsNorm
        && !matches!(model.bases[output], BasisFamily::KernelSections { .. })
    {
        return Err(Error::FunctionalUnsupported {
            functional: "rkhs_norm",
            requirement: "a kernel-sections basis",
        });
    }
    let (m, p) = scalar_sample_size(nu, kappa_t, discards)?;
    let evaluators = ModelEvaluators::build(model)?;
    let sampler = ScenarioSampler::new(model, &evaluators, data, stream)?;
    let batch = sampler.draw(data, m)?;

    let evaluator = &evaluators.list[output];
    let mut sampled: Vec<f64> = (0..m)
        .map(|j| {
            functional_of_scenario(
                functional.kind,
                model,
                evaluator,
                batch.scenario(output, j),
                batch.scenario_coeffs(output, j),
            )
        })
        .collect();
    sampled.sort_by(f64::total_cmp);
    let bound = match functional.orientation {
        Orientation::Upper => sampled[p - 1],
        Orientation::Lower => sampled[m - p],
    };
    Ok(ScalarBound {
        functional: functional.kind,
        orientation: functional.orientation,
        output,
        bound,
        m,
        p,
        discards,
        nu,
        kappa_t,
    })
}
