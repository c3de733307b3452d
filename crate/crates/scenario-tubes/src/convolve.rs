//! Exact basis evaluation for stationary kernels on equidistant lattices.
//!
//! For a kernel-sections basis on a regular grid, evaluating a coefficient
//! vector on the whole grid is a discrete convolution with the kernel's
//! displacement tile. Zero-padded FFTs compute it in O(N log N) instead of
//! the O(N^2) dense product, bit-stable across runs, and never materialize
//! the N x N basis matrix. Supports one- and two-axis lattices.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::basis::KernelSpec;
use crate::grid::DomainGrid;

/// Smallest integer >= `n` whose factors are all in {2, 3, 5}.
fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for f in [2usize, 3, 5] {
            while k % f == 0 {
                k /= f;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

/// Convolution engine for one kernel on one lattice.
pub struct LatticeConv {
    dims: Vec<usize>,
    padded: Vec<usize>,
    kernel_hat: Vec<Complex<f64>>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

/// Per-thread work buffers for [`LatticeConv::apply`].
pub struct ConvScratch {
    field: Vec<Complex<f64>>,
    transposed: Vec<Complex<f64>>,
    fft: Vec<Complex<f64>>,
}

impl LatticeConv {
    /// Lattice size (number of grid points).
    pub fn n_points(&self) -> usize {
        self.dims.iter().product()
    }

    /// Build the engine, or `None` when the grid shape is unsupported
    /// (more than two axes, or an axis with fewer than two points).
    pub fn build(kernel: &KernelSpec, grid: &DomainGrid) -> Option<Self> {
        let dims: Vec<usize> = grid.points_per_axis().to_vec();
        if dims.is_empty() || dims.len() > 2 || dims.iter().any(|&n| n < 2) {
            return None;
        }
        let spacings: Vec<f64> = (0..dims.len()).map(|a| grid.spacing(a)).collect();
        let padded: Vec<usize> = dims.iter().map(|&n| next_fast_len(2 * n - 1)).collect();

        let mut planner = FftPlanner::new();
        let fwd: Vec<_> = padded
            .iter()
            .map(|&p| planner.plan_fft_forward(p))
            .collect();
        let inv: Vec<_> = padded
            .iter()
            .map(|&p| planner.plan_fft_inverse(p))
            .collect();

        // Kernel displacement tile with wraparound layout: index u along an
        // axis of padded length p encodes displacement u for u < n and
        // u - p for u >= p - (n - 1).
        let total: usize = padded.iter().product();
        let mut tile = vec![Complex::new(0.0, 0.0); total];
        let origin = vec![0.0; dims.len()];
        match dims.len() {
            1 => {
                let (n, p, h) = (dims[0], padded[0], spacings[0]);
                for d in 0..n {
                    let v = kernel.evaluate(&[d as f64 * h], &origin);
                    tile[d] = Complex::new(v, 0.0);
                    if d > 0 {
                        tile[p - d] = Complex::new(v, 0.0);
                    }
                }
            }
            2 => {
                let (n0, n1) = (dims[0], dims[1]);
                let (p0, p1) = (padded[0], padded[1]);
                for d0 in 0..n0 {
                    for d1 in 0..n1 {
                        let v = kernel.evaluate(
                            &[d0 as f64 * spacings[0], d1 as f64 * spacings[1]],
                            &origin,
                        );
                        let rows = if d0 == 0 { vec![0] } else { vec![d0, p0 - d0] };
                        let cols = if d1 == 0 { vec![0] } else { vec![d1, p1 - d1] };
                        for &u in &rows {
                            for &w in &cols {
                                tile[u * p1 + w] = Complex::new(v, 0.0);
                            }
                        }
                    }
                }
            }
            _ => unreachable!(),
        }

        let mut conv = LatticeConv {
            dims,
            padded,
            kernel_hat: Vec::new(),
            fwd,
            inv,
        };
        let mut scratch = conv.make_scratch();
        conv.fft_forward(&mut tile, &mut scratch);
        conv.kernel_hat = tile;
        Some(conv)
    }

    pub fn make_scratch(&self) -> ConvScratch {
        let total: usize = self.padded.iter().product();
        let max_fft = self
            .fwd
            .iter()
            .chain(self.inv.iter())
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        ConvScratch {
            field: vec![Complex::new(0.0, 0.0); total],
            transposed: vec![Complex::new(0.0, 0.0); total],
            fft: vec![Complex::new(0.0, 0.0); max_fft],
        }
    }

    fn fft_axis(
        data: &mut [Complex<f64>],
        plan: &Arc<dyn Fft<f64>>,
        fft_scratch: &mut [Complex<f64>],
    ) {
        let len = plan.len();
        let scratch = &mut fft_scratch[..plan.get_inplace_scratch_len()];
        for chunk in data.chunks_exact_mut(len) {
            plan.process_with_scratch(chunk, scratch);
        }
    }

    fn transform(&self, data: &mut [Complex<f64>], scratch: &mut ConvScratch, forward: bool) {
        let plans = if forward { &self.fwd } else { &self.inv };
        match self.padded.len() {
            1 => Self::fft_axis(data, &plans[0], &mut scratch.fft),
            2 => {
                let (p0, p1) = (self.padded[0], self.padded[1]);
                // Rows (contiguous along axis 1), then columns via transpose.
                Self::fft_axis(data, &plans[1], &mut scratch.fft);
                for i in 0..p0 {
                    for j in 0..p1 {
                        scratch.transposed[j * p0 + i] = data[i * p1 + j];
                    }
                }
                Self::fft_axis(&mut scratch.transposed, &plans[0], &mut scratch.fft);
                for j in 0..p1 {
                    for i in 0..p0 {
                        data[i * p1 + j] = scratch.transposed[j * p0 + i];
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    fn fft_forward(&self, data: &mut [Complex<f64>], scratch: &mut ConvScratch) {
        self.transform(data, scratch, true);
    }

    /// Convolve one coefficient field (row-major over the lattice) with the
    /// kernel tile; `out` receives the basis expansion on the grid.
    pub fn apply(&self, coeffs: &[f64], out: &mut [f64], scratch: &mut ConvScratch) {
        let total: usize = self.padded.iter().product();
        let norm = 1.0 / total as f64;
        scratch.field.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        match self.dims.len() {
            1 => {
                for (i, &c) in coeffs.iter().enumerate() {
                    scratch.field[i] = Complex::new(c, 0.0);
                }
            }
            2 => {
                let (n1, p1) = (self.dims[1], self.padded[1]);
                for (row, chunk) in coeffs.chunks_exact(n1).enumerate() {
                    for (j, &c) in chunk.iter().enumerate() {
                        scratch.field[row * p1 + j] = Complex::new(c, 0.0);
                    }
                }
            }
            _ => unreachable!(),
        }

        let mut field = std::mem::take(&mut scratch.field);
        self.transform(&mut field, scratch, true);
        for (f, k) in field.iter_mut().zip(&self.kernel_hat) {
            *f *= k;
        }
        self.transform(&mut field, scratch, false);

        match self.dims.len() {
            1 => {
                for (o, f) in out.iter_mut().zip(field.iter()) {
                    *o = f.re * norm;
                }
            }
            2 => {
                let (n1, p1) = (self.dims[1], self.padded[1]);
                for (row, chunk) in out.chunks_exact_mut(n1).enumerate() {
                    for (j, o) in chunk.iter_mut().enumerate() {
                        *o = field[row * p1 + j].re * norm;
                    }
                }
            }
            _ => unreachable!(),
        }
        scratch.field = field;
    }
}
