//! Global linear solves on the torus.
//!
//! All gauges are fixed: the mean of a momentum goes to its solenoidal part,
//! potentials and displacement fields have zero mean.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{sym_index, Field, FieldKind, SpaceTimeField};
use crate::grid::TorusGrid;
use crate::spectral::{self, forward, inverse_real, ModeTable};

const C0: Complex64 = Complex64 { re: 0.0, im: 0.0 };

fn expect(f: &Field, kind: FieldKind) -> Result<()> {
    if f.kind() != kind {
        return Err(Error::KindMismatch {
            expected: kind,
            found: f.kind(),
        });
    }
    Ok(())
}

fn check_zero_mean(values: &[f64]) -> Result<()> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let scale = values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    if mean.abs() > 1e-10 * scale {
        return Err(Error::NonZeroMean { mean });
    }
    Ok(())
}

/// Split `m = v + grad phi` with `div v = 0`.
pub fn helmholtz_decompose(m: &Field) -> Result<(Field, Field)> {
    expect(m, FieldKind::Vector)?;
    let grid = m.grid();
    let dim = grid.dim();
    let modes = ModeTable::new(grid);
    let specs: Vec<Vec<Complex64>> = m.components().iter().map(|c| forward(grid, c)).collect();
    let mut phi = vec![C0; grid.node_count()];
    for (mode, p) in phi.iter_mut().enumerate() {
        let kd = modes.derivative_wavenumber(mode);
        let k2: f64 = kd.iter().map(|k| k * k).sum();
        if k2 == 0.0 {
            continue;
        }
        // sum_j D_j m_j / sum_j D_j^2 with D_j = i pi k_j
        let mut num = C0;
        for a in 0..dim {
            num += specs[a][mode] * Complex64::new(0.0, PI * kd[a]);
        }
        *p = num / (-PI * PI * k2);
    }
    let mut v_comps = Vec::with_capacity(dim);
    for (a, spec) in specs.into_iter().enumerate() {
        let sol: Vec<Complex64> = spec
            .into_iter()
            .enumerate()
            .map(|(mode, c)| {
                c - phi[mode] * Complex64::new(0.0, PI * modes.derivative_wavenumber(mode)[a])
            })
            .collect();
        v_comps.push(inverse_real(grid, sol));
    }
    let v = Field::from_components(grid, FieldKind::Vector, &v_comps)?;
    let phi = Field::from_vec(grid, FieldKind::Scalar, inverse_real(grid, phi))?;
    Ok((v, phi))
}

/// Real `n x n` Gaussian elimination with partial pivoting, applied to a
/// complex right-hand side.
fn dense_solve(a: &[[f64; 3]; 3], b: &[Complex64], n: usize) -> [Complex64; 3] {
    let mut m = *a;
    let mut rhs = [C0; 3];
    rhs[..n].copy_from_slice(&b[..n]);
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()))
            .unwrap();
        m.swap(k, p);
        rhs.swap(k, p);
        for i in k + 1..n {
            let l = m[i][k] / m[k][k];
            for j in k..n {
                m[i][j] -= l * m[k][j];
            }
            let sub = rhs[k] * l;
            rhs[i] -= sub;
        }
    }
    let mut x = [C0; 3];
    for k in (0..n).rev() {
        let mut s = rhs[k];
        for j in k + 1..n {
            s -= x[j] * m[k][j];
        }
        x[k] = s / m[k][k];
    }
    x
}

/// Per-mode symbol of `U -> div(grad U + grad U^T - 2/N div U I)`.
fn lame_symbol(kd: &[f64]) -> [[f64; 3]; 3] {
    let dim = kd.len();
    let c = 1.0 - 2.0 / dim as f64;
    let k2: f64 = kd.iter().map(|k| k * k).sum();
    let mut a = [[0.0; 3]; 3];
    for i in 0..dim {
        for j in 0..dim {
            a[i][j] = -PI * PI * (c * kd[i] * kd[j] + if i == j { k2 } else { 0.0 });
        }
    }
    a
}

/// Solve `div G = f` for a trace-free symmetric `G = grad U + grad U^T -
/// 2/N div U I`, one dense system per Fourier mode. Modes with vanishing
/// derivative symbol (the mean and pure Nyquist modes) are left at zero.
fn solve_lame(grid: &TorusGrid, rhs: &[Vec<Complex64>]) -> Result<Field> {
    let dim = grid.dim();
    let modes = ModeTable::new(grid);
    let nn = grid.node_count();
    let mut u = vec![vec![C0; nn]; dim];
    let mut b = [C0; 3];
    for mode in 0..nn {
        let kd = modes.derivative_wavenumber(mode);
        if kd.iter().all(|&k| k == 0.0) {
            continue;
        }
        for a in 0..dim {
            b[a] = rhs[a][mode];
        }
        let x = dense_solve(&lame_symbol(kd), &b, dim);
        for a in 0..dim {
            u[a][mode] = x[a];
        }
    }
    let ncomp = FieldKind::DevTensor.components(dim);
    let mut comps = Vec::with_capacity(ncomp);
    for i in 0..dim {
        for j in i..dim {
            if i == dim - 1 && j == dim - 1 {
                continue;
            }
            let spec: Vec<Complex64> = (0..nn)
                .map(|mode| {
                    let kd = modes.derivative_wavenumber(mode);
                    let d = |a: usize| Complex64::new(0.0, PI * kd[a]);
                    let mut h = u[i][mode] * d(j) + u[j][mode] * d(i);
                    if i == j {
                        let div: Complex64 = (0..dim).map(|a| u[a][mode] * d(a)).sum();
                        h -= div * (2.0 / dim as f64);
                    }
                    h
                })
                .collect();
            debug_assert_eq!(comps.len(), sym_index(dim, i, j));
            comps.push(inverse_real(grid, spec));
        }
    }
    Field::from_components(grid, FieldKind::DevTensor, &comps)
}

/// Trace-free `H` with `div H = grad pi`. `pi` must have zero mean.
pub fn lame_pressure_tensor(pi: &Field) -> Result<Field> {
    expect(pi, FieldKind::Scalar)?;
    check_zero_mean(pi.data())?;
    let grid = pi.grid();
    let modes = ModeTable::new(grid);
    let spec = forward(grid, pi.data());
    let rhs: Vec<Vec<Complex64>> = (0..grid.dim())
        .map(|a| {
            spec.iter()
                .enumerate()
                .map(|(mode, &c)| {
                    c * Complex64::new(0.0, PI * modes.derivative_wavenumber(mode)[a])
                })
                .collect()
        })
        .collect();
    solve_lame(grid, &rhs)
}

/// Trace-free `G` with `div G = f` for a zero-mean vector field `f`.
/// Pure Nyquist content of `f` is outside the range of the divergence and
/// is dropped.
pub fn inverse_divergence(f: &Field) -> Result<Field> {
    expect(f, FieldKind::Vector)?;
    let grid = f.grid();
    let comps = f.components();
    for c in &comps {
        check_zero_mean(c)?;
    }
    let rhs: Vec<Vec<Complex64>> = comps.iter().map(|c| forward(grid, c)).collect();
    solve_lame(grid, &rhs)
}

/// Zero-mean `V` with `lap V = rhs`.
pub fn poisson_solve(rhs: &Field) -> Result<Field> {
    expect(rhs, FieldKind::Scalar)?;
    check_zero_mean(rhs.data())?;
    let grid = rhs.grid();
    let modes = ModeTable::new(grid);
    let mut spec = forward(grid, rhs.data());
    for (mode, c) in spec.iter_mut().enumerate() {
        let k2 = modes.k_squared(mode);
        *c = if k2 == 0.0 { C0 } else { *c / (-PI * PI * k2) };
    }
    Field::from_vec(grid, FieldKind::Scalar, inverse_real(grid, spec))
}

/// Per-slice `L^2` norms of `dt v + div F` and `div v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicewiseResidual {
    /// `None` on slices where no time derivative is formed
    pub momentum: Vec<Option<f64>>,
    pub divergence: Vec<f64>,
}

impl SlicewiseResidual {
    pub fn r_mom(&self) -> f64 {
        self.momentum
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(*v))
    }

    pub fn r_div(&self) -> f64 {
        self.divergence.iter().fold(0.0, |m: f64, v| m.max(*v))
    }
}

/// Residuals of `dt v + div F = 0`, `div v = 0` slice by slice. The time
/// derivative is a centred difference on interior slices; with only two
/// slices a single forward difference is used instead.
pub fn slicewise_residual(v: &SpaceTimeField, f: &SpaceTimeField) -> Result<SlicewiseResidual> {
    v.expect_kind(FieldKind::Vector)?;
    f.expect_kind(FieldKind::DevTensor)?;
    if v.grid() != f.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = v.grid();
    let nt = grid.nt();
    let dt = grid.dt();
    let divergence: Vec<f64> = (0..nt)
        .into_par_iter()
        .map(|k| spectral::divergence(&v.slice(k)).map(|d| spectral::l2_norm(&d)))
        .collect::<Result<_>>()?;
    let momentum: Vec<Option<f64>> = (0..nt)
        .into_par_iter()
        .map(|k| -> Result<Option<f64>> {
            let (lo, hi, span) = if nt == 2 {
                (0, 1, dt)
            } else if k == 0 || k == nt - 1 {
                return Ok(None);
            } else {
                (k - 1, k + 1, 2.0 * dt)
            };
            let mut res = spectral::tensor_divergence(&f.slice(k))?;
            let (a, b) = (v.slice_data(lo), v.slice_data(hi));
            for (r, (x, y)) in res.data_mut().iter_mut().zip(a.iter().zip(b)) {
                *r += (y - x) / span;
            }
            Ok(Some(spectral::l2_norm(&res)))
        })
        .collect::<Result<_>>()?;
    Ok(SlicewiseResidual {
        momentum,
        divergence,
    })
}

/// `(r_mom, r_div)`: worst slice norms of `dt v + div F` and `div v`.
pub fn spacetime_divergence_residual(v: &SpaceTimeField, f: &SpaceTimeField) -> Result<(f64, f64)> {
    let r = slicewise_residual(v, f)?;
    Ok((r.r_mom(), r.r_div()))
}

/// `e = Z(t) - N/2 pi` node by node.
pub fn absorb_pressure(pi: &SpaceTimeField, z: impl Fn(f64) -> f64) -> Result<SpaceTimeField> {
    pi.expect_kind(FieldKind::Scalar)?;
    let grid = pi.grid();
    let half_n = 0.5 * grid.dim() as f64;
    let mut out = pi.clone();
    for k in 0..grid.nt() {
        let zk = z(grid.time(k));
        out.slice_data_mut(k)
            .iter_mut()
            .for_each(|p| *p = zk - half_n * *p);
    }
    Ok(out)
}
