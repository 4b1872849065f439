//! Pointwise symmetric-matrix algebra for `N = 2, 3`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::sym_index;

/// Symmetric matrix stored as its packed upper triangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymMat {
    dim: usize,
    e: [f64; 6],
}

impl SymMat {
    pub fn zeros(dim: usize) -> Self {
        assert!((2..=3).contains(&dim), "dimension must be 2 or 3");
        Self { dim, e: [0.0; 6] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// From the packed upper triangle (`N(N+1)/2` entries).
    pub fn from_packed(dim: usize, packed: &[f64]) -> Self {
        let mut m = Self::zeros(dim);
        let n = dim * (dim + 1) / 2;
        m.e[..n].copy_from_slice(&packed[..n]);
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn packed(&self) -> &[f64] {
        &self.e[..self.dim * (self.dim + 1) / 2]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.e[sym_index(self.dim, i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.e[sym_index(self.dim, i, j)] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.e.iter_mut().for_each(|v| *v *= s);
        self
    }

    pub fn add(mut self, other: &SymMat) -> Self {
        self.e.iter_mut().zip(&other.e).for_each(|(a, b)| *a += b);
        self
    }

    pub fn sub(mut self, other: &SymMat) -> Self {
        self.e.iter_mut().zip(&other.e).for_each(|(a, b)| *a -= b);
        self
    }

    pub fn lambda_max(&self) -> f64 {
        lambda_max(self)
    }
}

/// Trace-free symmetric matrix. The last diagonal entry is not stored; it
/// is the negated sum of the other diagonal entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DevMat {
    dim: usize,
    c: [f64; 5],
}

impl DevMat {
    pub fn zeros(dim: usize) -> Self {
        assert!((2..=3).contains(&dim), "dimension must be 2 or 3");
        Self { dim, c: [0.0; 5] }
    }

    /// From the stored components (`N(N+1)/2 - 1` entries).
    pub fn from_components(dim: usize, comps: &[f64]) -> Self {
        let mut m = Self::zeros(dim);
        let n = dim * (dim + 1) / 2 - 1;
        m.c[..n].copy_from_slice(&comps[..n]);
        m
    }

    /// Trace-free part of `a`.
    pub fn from_sym(a: &SymMat) -> Self {
        let dim = a.dim();
        let shift = a.trace() / dim as f64;
        let mut s = *a;
        for i in 0..dim {
            s.set(i, i, a.get(i, i) - shift);
        }
        Self::from_components(dim, s.packed())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[f64] {
        &self.c[..self.dim * (self.dim + 1) / 2 - 1]
    }

    pub fn to_sym(&self) -> SymMat {
        let dim = self.dim;
        let mut m = SymMat::zeros(dim);
        let n = dim * (dim + 1) / 2;
        m.e[..n - 1].copy_from_slice(&self.c[..n - 1]);
        let partial: f64 = (0..dim - 1).map(|i| m.get(i, i)).sum();
        m.e[n - 1] = -partial;
        m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.to_sym().get(i, j)
    }

    pub fn add(mut self, other: &DevMat) -> Self {
        self.c.iter_mut().zip(&other.c).for_each(|(a, b)| *a += b);
        self
    }

    pub fn sub(mut self, other: &DevMat) -> Self {
        self.c.iter_mut().zip(&other.c).for_each(|(a, b)| *a -= b);
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.c.iter_mut().for_each(|v| *v *= s);
        self
    }

    /// Frobenius norm of the full matrix.
    pub fn norm(&self) -> f64 {
        let m = self.to_sym();
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += m.get(i, j).powi(2);
            }
        }
        s.sqrt()
    }
}

pub fn outer_self(v: &[f64]) -> SymMat {
    let dim = v.len();
    let mut m = SymMat::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            m.set(i, j, v[i] * v[j]);
        }
    }
    m
}

/// `v (x) v - |v|^2 / N I`.
pub fn deviatoric_self(v: &[f64]) -> DevMat {
    let dim = v.len();
    let iso = v.iter().map(|x| x * x).sum::<f64>() / dim as f64;
    let mut m = outer_self(v);
    for i in 0..dim {
        m.set(i, i, v[i] * v[i] - iso);
    }
    DevMat::from_components(dim, m.packed())
}

/// Largest eigenvalue in closed form.
pub fn lambda_max(a: &SymMat) -> f64 {
    match a.dim() {
        2 => {
            let (p, q, r) = (a.get(0, 0), a.get(0, 1), a.get(1, 1));
            let mid = 0.5 * (p + r);
            let rad = (0.25 * (p - r) * (p - r) + q * q).sqrt();
            mid + rad
        }
        _ => {
            let (a00, a01, a02) = (a.get(0, 0), a.get(0, 1), a.get(0, 2));
            let (a11, a12, a22) = (a.get(1, 1), a.get(1, 2), a.get(2, 2));
            let q = (a00 + a11 + a22) / 3.0;
            let off = a01 * a01 + a02 * a02 + a12 * a12;
            let (b00, b11, b22) = (a00 - q, a11 - q, a22 - q);
            let p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * off;
            if p2 == 0.0 {
                return q;
            }
            let p = (p2 / 6.0).sqrt();
            // det((A - qI) / p) / 2, clamped against roundoff
            let det = b00 * (b11 * b22 - a12 * a12) - a01 * (a01 * b22 - a12 * a02)
                + a02 * (a01 * a12 - b11 * a02);
            let r = (det / (2.0 * p * p * p)).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            q + 2.0 * p * phi.cos()
        }
    }
}

/// Kinetic energy density `|vh|^2 / (2 r)`.
pub fn kinetic_energy_density(vh: &[f64], r: f64) -> Result<f64> {
    check_density(r)?;
    Ok(0.5 * vh.iter().map(|x| x * x).sum::<f64>() / r)
}

/// The trace-free tensor for which the convex bound
/// `N/2 lambda_max[vh (x) vh / r - H] >= |vh|^2 / (2r)` is an equality.
pub fn equality_tensor(vh: &[f64], r: f64) -> Result<DevMat> {
    check_density(r)?;
    Ok(deviatoric_self(vh).scaled(1.0 / r))
}

fn check_density(r: f64) -> Result<()> {
    if !(r > 0.0) {
        return Err(Error::NonPositiveDensity {
            value: r,
            slice: None,
            node: None,
        });
    }
    Ok(())
}

/// Values of `v + h`, `r`, `e`, `F` and `H` at one space-time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointState {
    pub vh: [f64; 3],
    pub dim: usize,
    pub r: f64,
    pub e: f64,
    pub f: DevMat,
    pub h: DevMat,
}

impl PointState {
    pub fn new(vh: &[f64], r: f64, e: f64, f: DevMat, h: DevMat) -> Self {
        let mut v = [0.0; 3];
        v[..vh.len()].copy_from_slice(vh);
        Self {
            vh: v,
            dim: vh.len(),
            r,
            e,
            f,
            h,
        }
    }

    pub fn vh(&self) -> &[f64] {
        &self.vh[..self.dim]
    }

    /// `vh (x) vh / r - F + H`.
    pub fn relaxed_matrix(&self) -> SymMat {
        outer_self(self.vh())
            .scaled(1.0 / self.r)
            .sub(&self.f.to_sym())
            .add(&self.h.to_sym())
    }
}

/// `e - N/2 lambda_max[vh (x) vh / r - F + H]`; positive means the point is
/// strictly inside the relaxed set.
pub fn relaxed_gap(p: &PointState) -> Result<f64> {
    check_density(p.r)?;
    Ok(relaxed_gap_unchecked(p))
}

pub(crate) fn relaxed_gap_unchecked(p: &PointState) -> f64 {
    p.e - 0.5 * p.dim as f64 * lambda_max(&p.relaxed_matrix())
}
