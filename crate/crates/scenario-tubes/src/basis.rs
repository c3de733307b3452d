//! Basis-function families and the design matrices they induce.
//!
//! Three families are supported, all with as many basis functions as grid
//! points (R = N):
//!
//! * **kernel sections** — column `r` is `k(a_r, ·)` for a positive-definite
//!   kernel, so the full basis matrix doubles as the Gram matrix;
//! * **trigonometric** — column 0 is constant one, column `r` is
//!   `cos(step * r * a)` on a one-dimensional grid;
//! * **Haar** — the scaling function followed by wavelets in order of
//!   increasing scale then shift, truncated to N columns and evaluated
//!   pointwise after mapping the axis to `[0, 1]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DomainGrid;

/// Positive-definite kernel specification for the kernel-sections family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// Matérn 3/2 with unit output scale:
    /// `k(a, a') = (1 + sqrt(3) r / l) * exp(-sqrt(3) r / l)` with Euclidean
    /// distance `r`.
    Matern32 { lengthscale: f64 },
}

impl KernelSpec {
    pub fn evaluate(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KernelSpec::Matern32 { lengthscale } => {
                let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                let s = 3.0f64.sqrt() * r2.sqrt() / lengthscale;
                (1.0 + s) * (-s).exp()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Matern32 { lengthscale } => {
                if !(lengthscale.is_finite() && *lengthscale > 0.0) {
                    return Err(Error::InvalidBasis(
                        "Matérn32 lengthscale must be positive and finite".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A family of basis functions over a fixed grid.
///
/// Kernel sections and Haar always span R = N functions; the trigonometric
/// family defaults to R = N but accepts an explicit size (the cosine index
/// then runs `0..R`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisFamily {
    KernelSections {
        kernel: KernelSpec,
    },
    Trigonometric {
        frequency_step: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        size: Option<usize>,
    },
    Haar,
}

impl BasisFamily {
    /// Check the family against a grid. Trigonometric and Haar bases are
    /// defined on one-dimensional grids only.
    pub fn validate(&self, grid: &DomainGrid) -> Result<()> {
        match self {
            BasisFamily::KernelSections { kernel } => kernel.validate(),
            BasisFamily::Trigonometric {
                frequency_step,
                size,
            } => {
                if !(frequency_step.is_finite() && *frequency_step > 0.0) {
                    return Err(Error::InvalidBasis(
                        "trigonometric frequency step must be positive and finite".into(),
                    ));
                }
                if size == &Some(0) {
                    return Err(Error::InvalidBasis(
                        "trigonometric basis size must be at least 1".into(),
                    ));
                }
                if grid.dim() != 1 {
                    return Err(Error::InvalidBasis(
                        "trigonometric basis requires a one-dimensional grid".into(),
                    ));
                }
                Ok(())
            }
            BasisFamily::Haar => {
                if grid.dim() != 1 {
                    return Err(Error::InvalidBasis(
                        "Haar basis requires a one-dimensional grid".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Number of basis functions R (the grid size unless overridden).
    pub fn size(&self, grid: &DomainGrid) -> usize {
        match self {
            BasisFamily::Trigonometric { size, .. } => size.unwrap_or(grid.len()),
            _ => grid.len(),
        }
    }

    /// Fill `out` (length R) with all basis functions evaluated at `point`.
    pub fn eval_row(&self, grid: &DomainGrid, point: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.size(grid));
        match self {
            BasisFamily::KernelSections { kernel } => {
                for (r, slot) in out.iter_mut().enumerate() {
                    *slot = kernel.evaluate(grid.point(r), point);
                }
            }
            BasisFamily::Trigonometric { frequency_step, .. } => {
                let a = point[0];
                for (r, slot) in out.iter_mut().enumerate() {
                    *slot = (frequency_step * r as f64 * a).cos();
                }
            }
            BasisFamily::Haar => {
                out.fill(0.0);
                out[0] = 1.0;
                let (lo, hi) = grid.bounds()[0];
                let x = if hi > lo { (point[0] - lo) / (hi - lo) } else { 0.0 };
                let n = out.len();
                let mut level: u32 = 0;
                loop {
                    let cells = 1usize << level;
                    let first_col = cells; // 1 + (2^j - 1)
                    if first_col >= n {
                        break;
                    }
                    let cell = ((x * cells as f64).floor() as usize).min(cells - 1);
                    let col = first_col + cell;
                    if col < n {
                        let halves = cells * 2;
                        let half = ((x * halves as f64).floor() as usize).min(halves - 1);
                        let amp = (cells as f64).sqrt();
                        out[col] = if half == 2 * cell { amp } else { -amp };
                    }
                    level += 1;
                }
            }
        }
    }
}

/// Evaluate the full N x R basis matrix: column `r` holds basis function `r`
/// at every grid point.
///
/// Materializes N*R doubles; at hardware scale (N around 10^4) prefer the
/// lattice evaluator in [`crate::model`], which never forms this matrix.
pub fn eval_basis(family: &BasisFamily, grid: &DomainGrid) -> Result<DMatrix<f64>> {
    family.validate(grid)?;
    let n = grid.len();
    let r_count = family.size(grid);
    let mut m = DMatrix::zeros(n, r_count);
    let mut row = vec![0.0; r_count];
    for p in 0..n {
        family.eval_row(grid, grid.point(p), &mut row);
        for (r, &v) in row.iter().enumerate() {
            m[(p, r)] = v;
        }
    }
    Ok(m)
}

/// Generalized Vandermonde matrix: basis functions evaluated at sampled
/// parameters, one row per sample in the given order.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub entries: DMatrix<f64>,
    /// Grid indices of the sampled parameters.
    pub row_indices: Vec<usize>,
    /// Coordinates of the sampled parameters.
    pub row_points: Vec<Vec<f64>>,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }
}

/// Build the design matrix for a list of sampled parameters.
///
/// Every sampled parameter must lie on the grid; rows are evaluated at the
/// resolved grid coordinates, so they match rows of [`eval_basis`] exactly.
pub fn vandermonde(
    family: &BasisFamily,
    grid: &DomainGrid,
    sampled: &[Vec<f64>],
) -> Result<DesignMatrix> {
    family.validate(grid)?;
    let r = family.size(grid);
    let mut entries = DMatrix::zeros(sampled.len(), r);
    let mut row_indices = Vec::with_capacity(sampled.len());
    let mut row_points = Vec::with_capacity(sampled.len());
    let mut row = vec![0.0; r];
    for (t, point) in sampled.iter().enumerate() {
        let idx = grid.locate(point)?;
        family.eval_row(grid, grid.point(idx), &mut row);
        for (c, &v) in row.iter().enumerate() {
            entries[(t, c)] = v;
        }
        row_indices.push(idx);
        row_points.push(grid.point(idx).to_vec());
    }
    Ok(DesignMatrix {
        entries,
        row_indices,
        row_points,
    })
}

/// Design matrix from grid indices instead of coordinates.
pub fn vandermonde_at_indices(
    family: &BasisFamily,
    grid: &DomainGrid,
    indices: &[usize],
) -> Result<DesignMatrix> {
    family.validate(grid)?;
    let r = family.size(grid);
    let mut entries = DMatrix::zeros(indices.len(), r);
    let mut row = vec![0.0; r];
    for (t, &idx) in indices.iter().enumerate() {
        family.eval_row(grid, grid.point(idx), &mut row);
        for (c, &v) in row.iter().enumerate() {
            entries[(t, c)] = v;
        }
    }
    Ok(DesignMatrix {
        entries,
        row_indices: indices.to_vec(),
        row_points: indices.iter().map(|&i| grid.point(i).to_vec()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn unit_grid(n: usize) -> DomainGrid {
        build_grid(&[(0.0, 1.0)], &[n]).unwrap()
    }

    #[test]
    fn trig_column_zero_is_ones() {
        let g = unit_grid(16);
        let b = eval_basis(
            &BasisFamily::Trigonometric {
                frequency_step: 0.05 * std::f64::consts::PI,
                size: None,
            },
            &g,
        )
        .unwrap();
        for p in 0..16 {
            assert_eq!(b[(p, 0)], 1.0);
        }
    }

    #[test]
    fn matern_diagonal_is_unit() {
        let g = unit_grid(12);
        let b = eval_basis(
            &BasisFamily::KernelSections {
                kernel: KernelSpec::Matern32 { lengthscale: 0.2 },
            },
            &g,
        )
        .unwrap();
        for r in 0..12 {
            assert!((b[(r, r)] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matern_basis_matrix_is_positive_semidefinite() {
        let g = unit_grid(24);
        let b = eval_basis(
            &BasisFamily::KernelSections {
                kernel: KernelSpec::Matern32 { lengthscale: 0.15 },
            },
            &g,
        )
        .unwrap();
        let sym = (&b + b.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-8, "min eigenvalue {min}");
    }

    #[test]
    fn haar_mother_wavelet_on_eight_point_grid() {
        // Eight points covering [0, 1) as k/8.
        let g = build_grid(&[(0.0, 0.875)], &[8]).unwrap();
        let b = eval_basis(&BasisFamily::Haar, &g).unwrap();
        for p in 0..8 {
            let expect = if p < 4 { 1.0 } else { -1.0 };
            assert_eq!(b[(p, 1)], expect, "point {p}");
        }
    }

    #[test]
    fn haar_columns_orthogonal_on_dyadic_grid() {
        for n in [2usize, 4, 8, 16, 32] {
            let g = unit_grid(n);
            let b = eval_basis(&BasisFamily::Haar, &g).unwrap();
            for i in 0..n {
                let ci = b.column(i);
                for j in (i + 1)..n {
                    let cj = b.column(j);
                    let dot = ci.dot(&cj);
                    let bound = 1e-8 * ci.norm() * cj.norm();
                    assert!(dot.abs() <= bound, "n={n} cols {i},{j} dot={dot}");
                }
            }
        }
    }

    #[test]
    fn haar_enumeration_is_scale_major() {
        let g = unit_grid(8);
        let b = eval_basis(&BasisFamily::Haar, &g).unwrap();
        // Column 2 is the level-1 wavelet on [0, 1/2): amplitude sqrt(2).
        assert!((b[(0, 2)] - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(b[(7, 2)], 0.0);
        // Column 4 is the first level-2 wavelet on [0, 1/4): amplitude 2.
        assert!((b[(0, 4)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn vandermonde_matches_basis_rows_exactly() {
        let g = unit_grid(9);
        let fam = BasisFamily::Trigonometric {
            frequency_step: 0.05 * std::f64::consts::PI,
            size: None,
        };
        let b = eval_basis(&fam, &g).unwrap();
        let sampled = vec![vec![0.5], vec![0.125], vec![0.5]];
        let v = vandermonde(&fam, &g, &sampled).unwrap();
        assert_eq!(v.rows(), 3);
        for (t, &idx) in v.row_indices.iter().enumerate() {
            for c in 0..9 {
                assert_eq!(v.entries[(t, c)], b[(idx, c)], "row {t} col {c}");
            }
        }
        // Repeated samples give identical rows.
        assert_eq!(v.row_indices[0], v.row_indices[2]);
    }

    #[test]
    fn vandermonde_empty_and_off_grid() {
        let g = unit_grid(5);
        let fam = BasisFamily::Haar;
        let v = vandermonde(&fam, &g, &[]).unwrap();
        assert_eq!(v.rows(), 0);
        assert!(vandermonde(&fam, &g, &[vec![0.3]]).is_err());
    }

    #[test]
    fn trig_row_at_zero_is_all_ones() {
        let g = unit_grid(5);
        let fam = BasisFamily::Trigonometric {
            frequency_step: 0.05 * std::f64::consts::PI,
            size: None,
        };
        let v = vandermonde(&fam, &g, &[vec![0.0]]).unwrap();
        for c in 0..5 {
            assert_eq!(v.entries[(0, c)], 1.0);
        }
    }

    #[test]
    fn trig_rejects_two_dimensional_grids() {
        let g = build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[3, 3]).unwrap();
        let fam = BasisFamily::Trigonometric {
            frequency_step: 0.05 * std::f64::consts::PI,
            size: None,
        };
        assert!(eval_basis(&fam, &g).is_err());
    }
}
