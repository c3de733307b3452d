//! Finite discretized domains.
//!
//! A [`DomainGrid`] is a row-major lattice of equidistant points covering a
//! box in R^n. Every operation downstream (tube construction, safe-set
//! bookkeeping, plant queries) addresses points through their index in this
//! fixed ordering, so grid construction is the single source of truth for
//! point identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when matching a coordinate back onto the lattice.
const SNAP_TOL: f64 = 1e-9;

/// A finite, ordered lattice of points in R^n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainGrid {
    bounds: Vec<(f64, f64)>,
    points_per_axis: Vec<usize>,
    /// Flattened point coordinates, `len = N * dim`, row-major over axes
    /// (last axis varies fastest).
    coords: Vec<f64>,
}

impl DomainGrid {
    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim().max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Dimensionality n of the parameter space.
    pub fn dim(&self) -> usize {
        self.points_per_axis.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn points_per_axis(&self) -> &[usize] {
        &self.points_per_axis
    }

    /// Coordinates of point `index`.
    pub fn point(&self, index: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[index * d..(index + 1) * d]
    }

    /// Iterator over all points in grid order.
    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim())
    }

    /// Lattice spacing along `axis` (0 for single-point axes).
    pub fn spacing(&self, axis: usize) -> f64 {
        let n = self.points_per_axis[axis];
        if n < 2 {
            0.0
        } else {
            let (lo, hi) = self.bounds[axis];
            (hi - lo) / (n - 1) as f64
        }
    }

    /// True when every axis has equidistant spacing, which holds by
    /// construction; exposed for evaluators that rely on lattice structure.
    pub fn is_lattice(&self) -> bool {
        true
    }

    /// Locate the grid index of `coords`, requiring it to sit on the lattice
    /// up to a tight relative tolerance.
    pub fn locate(&self, coords: &[f64]) -> Result<usize> {
        if coords.len() != self.dim() {
            return Err(Error::PointNotOnGrid(coords.to_vec()));
        }
        let mut index = 0usize;
        for (axis, &x) in coords.iter().enumerate() {
            let (lo, hi) = self.bounds[axis];
            let n = self.points_per_axis[axis];
            let scale = (hi - lo).abs().max(1.0);
            let k = if n == 1 {
                if (x - lo).abs() > SNAP_TOL * scale {
                    return Err(Error::PointNotOnGrid(coords.to_vec()));
                }
                0
            } else {
                let step = self.spacing(axis);
                let k = ((x - lo) / step).round();
                if !(0.0..=(n - 1) as f64).contains(&k)
                    || (x - (lo + k * step)).abs() > SNAP_TOL * scale
                {
                    return Err(Error::PointNotOnGrid(coords.to_vec()));
                }
                k as usize
            };
            index = index * n + k;
        }
        Ok(index)
    }

    /// Decompose a flat index into per-axis lattice indices.
    pub fn axis_indices(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0usize; self.dim()];
        for axis in (0..self.dim()).rev() {
            let n = self.points_per_axis[axis];
            out[axis] = index % n;
            index /= n;
        }
        out
    }
}

/// Build a row-major lattice of equidistant points.
///
/// Each axis needs `lo < hi` with at least two points, or exactly one point
/// with `lo == hi`. The last axis varies fastest in the point ordering.
pub fn build_grid(bounds: &[(f64, f64)], points_per_axis: &[usize]) -> Result<DomainGrid> {
    if bounds.is_empty() || bounds.len() != points_per_axis.len() {
        return Err(Error::InvalidGrid(format!(
            "bounds ({}) and points_per_axis ({}) must be nonempty and of equal length",
            bounds.len(),
            points_per_axis.len()
        )));
    }
    for (axis, (&(lo, hi), &n)) in bounds.iter().zip(points_per_axis).enumerate() {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidGrid(format!("axis {axis}: non-finite bounds")));
        }
        match n {
            0 => return Err(Error::InvalidGrid(format!("axis {axis}: zero points"))),
            1 => {
                if lo != hi {
                    return Err(Error::InvalidGrid(format!(
                        "axis {axis}: a single-point axis requires lo == hi"
                    )));
                }
            }
            _ => {
                if lo >= hi {
                    return Err(Error::InvalidGrid(format!(
                        "axis {axis}: lo must be strictly below hi"
                    )));
                }
            }
        }
    }

    let dim = bounds.len();
    let total: usize = points_per_axis.iter().product();
    let mut coords = Vec::with_capacity(total * dim);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        for axis in 0..dim {
            let (lo, hi) = bounds[axis];
            let n = points_per_axis[axis];
            let x = if n == 1 {
                lo
            } else {
                lo + (hi - lo) * idx[axis] as f64 / (n - 1) as f64
            };
            coords.push(x);
        }
        // Row-major increment: last axis fastest.
        for axis in (0..dim).rev() {
            idx[axis] += 1;
            if idx[axis] < points_per_axis[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }

    Ok(DomainGrid {
        bounds: bounds.to_vec(),
        points_per_axis: points_per_axis.to_vec(),
        coords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_unit_interval() {
        let g = build_grid(&[(0.0, 1.0)], &[3]).unwrap();
        let pts: Vec<f64> = g.points().map(|p| p[0]).collect();
        assert_eq!(pts, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn hardware_scale_square_grid() {
        let g = build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[101, 101]).unwrap();
        assert_eq!(g.len(), 10201);
        // Last axis varies fastest.
        assert_eq!(g.point(0), &[0.0, 0.0]);
        assert_eq!(g.point(1), &[0.0, 0.01]);
        assert_eq!(g.point(101), &[0.01, 0.0]);
    }

    #[test]
    fn first_gap_of_thousand_point_grid() {
        let g = build_grid(&[(0.0, 1.0)], &[1000]).unwrap();
        let gap = g.point(1)[0] - g.point(0)[0];
        assert!((gap - 1.0 / 999.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_axes() {
        assert!(build_grid(&[(0.0, 1.0)], &[0]).is_err());
        assert!(build_grid(&[(1.0, 0.0)], &[5]).is_err());
        assert!(build_grid(&[(f64::NAN, 1.0)], &[5]).is_err());
        assert!(build_grid(&[(0.0, 1.0)], &[1]).is_err());
        assert!(build_grid(&[(0.5, 0.5)], &[1]).is_ok());
    }

    #[test]
    fn one_dimensional_points_strictly_increase() {
        let g = build_grid(&[(-2.0, 3.0)], &[17]).unwrap();
        let pts: Vec<f64> = g.points().map(|p| p[0]).collect();
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
        assert!(pts.iter().all(|&x| (-2.0..=3.0).contains(&x)));
    }

    #[test]
    fn locate_roundtrips_and_rejects_off_lattice() {
        let g = build_grid(&[(0.0, 1.0), (0.0, 2.0)], &[5, 9]).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.locate(g.point(i)).unwrap(), i);
        }
        assert!(g.locate(&[0.26, 0.0]).is_err());
        assert!(g.locate(&[0.25]).is_err());
    }

    #[test]
    fn axis_indices_invert_row_major_order() {
        let g = build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[3, 4]).unwrap();
        for i in 0..g.len() {
            let idx = g.axis_indices(i);
            assert_eq!(idx[0] * 4 + idx[1], i);
        }
    }
}
