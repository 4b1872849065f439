//! Uniform space-time grids on the flat torus `[-1, 1]^N` (period 2 per axis).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial period of every axis.
pub const PERIOD: f64 = 2.0;

/// Discretization of `[0, T] x Omega` with `Omega` the 2-periodic torus.
///
/// Spatial nodes sit at `x_i = -1 + 2 i / nx` (left-closed, periodic wrap);
/// time slices at `t_k = k dt` with `dt = T / (nt - 1)`, so both endpoints
/// `t = 0` and `t = T` are sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    nx: Vec<usize>,
    nt: usize,
    t_final: f64,
}

impl TorusGrid {
    pub fn new(nx: &[usize], nt: usize, t_final: f64) -> Result<Self> {
        let dim = nx.len();
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        for &n in nx {
            if n < 4 || !n.is_power_of_two() {
                return Err(Error::InvalidGrid(format!(
                    "axis node counts must be powers of two >= 4, got {n}"
                )));
            }
        }
        if nt < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 time slices, got {nt}"
            )));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        Ok(Self {
            nx: nx.to_vec(),
            nt,
            t_final,
        })
    }

    /// Square/cubic grid with `n` nodes on every axis.
    pub fn uniform(dim: usize, n: usize, nt: usize, t_final: f64) -> Result<Self> {
        Self::new(&vec![n; dim], nt, t_final)
    }

    pub fn dim(&self) -> usize {
        self.nx.len()
    }

    pub fn nx(&self) -> &[usize] {
        &self.nx
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn dt(&self) -> f64 {
        self.t_final / (self.nt - 1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    /// Number of spatial nodes in one slice.
    pub fn node_count(&self) -> usize {
        self.nx.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        PERIOD / self.nx[axis] as f64
    }

    /// Quadrature weight of one spatial node, `prod_i (2 / nx_i)`.
    pub fn cell_volume(&self) -> f64 {
        self.nx.iter().map(|&n| PERIOD / n as f64).product()
    }

    /// `|Omega| = 2^N`.
    pub fn domain_volume(&self) -> f64 {
        PERIOD.powi(self.dim() as i32)
    }

    /// Row-major strides of the spatial index.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dim()];
        for a in (0..self.dim() - 1).rev() {
            strides[a] = strides[a + 1] * self.nx[a + 1];
        }
        strides
    }

    /// Multi-index of a flat C-order node index.
    pub fn unravel(&self, mut node: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = node % self.nx[a];
            node /= self.nx[a];
        }
        idx
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        -1.0 + PERIOD * i as f64 / self.nx[axis] as f64
    }

    /// Physical coordinates of a flat node index.
    pub fn node_position(&self, node: usize) -> Vec<f64> {
        self.unravel(node)
            .into_iter()
            .enumerate()
            .map(|(a, i)| self.coordinate(a, i))
            .collect()
    }

    /// Same spatial discretization (time axis ignored).
    pub fn same_space(&self, other: &TorusGrid) -> bool {
        self.nx == other.nx
    }

    /// Copy of this grid with a different time axis.
    pub fn with_time(&self, nt: usize, t_final: f64) -> Result<Self> {
        Self::new(&self.nx, nt, t_final)
    }

    /// Largest resolvable |wavenumber| along an axis (excluding Nyquist).
    pub fn max_wavenumber(&self, axis: usize) -> usize {
        self.nx[axis] / 2 - 1
    }

    /// Time slices strictly inside the open interval `(lo, hi)`.
    pub fn slices_in(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let dt = self.dt();
        let eps = 1e-12 * dt;
        let first = (0..self.nt).find(|&k| self.time(k) > lo + eps);
        let last = (0..self.nt).rev().find(|&k| self.time(k) < hi - eps);
        match (first, last) {
            (Some(f), Some(l)) if f <= l => f..l + 1,
            _ => 0..0,
        }
    }
}
