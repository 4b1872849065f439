//! Fourier calculus on the flat torus.
//!
//! The fundamental wavenumber is `pi` (period 2), so the derivative along
//! axis `a` is the multiplier `i pi k_a`. Odd-order multipliers drop the
//! Nyquist mode; the Laplacian keeps it.

use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::field::{sym_index, Field, FieldKind};
use crate::grid::TorusGrid;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Signed integer wavenumber of FFT index `j` on an axis with `n` nodes.
/// The Nyquist index maps to `+n/2`.
pub fn signed_wavenumber(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Per-mode wavenumber table of a grid.
#[derive(Debug, Clone)]
pub struct ModeTable {
    dim: usize,
    /// signed wavenumbers, `dim` per mode
    k: Vec<i64>,
    /// wavenumbers used by first-derivative multipliers (Nyquist zeroed)
    kd: Vec<f64>,
}

impl ModeTable {
    pub fn new(grid: &TorusGrid) -> Self {
        let dim = grid.dim();
        let n = grid.node_count();
        let mut k = Vec::with_capacity(n * dim);
        let mut kd = Vec::with_capacity(n * dim);
        for node in 0..n {
            let idx = grid.unravel(node);
            for (a, &j) in idx.iter().enumerate() {
                let na = grid.nx()[a];
                let s = signed_wavenumber(j, na);
                k.push(s);
                kd.push(if 2 * j == na { 0.0 } else { s as f64 });
            }
        }
        Self { dim, k, kd }
    }

    pub fn len(&self) -> usize {
        self.k.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    pub fn wavenumber(&self, mode: usize) -> &[i64] {
        &self.k[mode * self.dim..(mode + 1) * self.dim]
    }

    /// Derivative wavenumbers (Nyquist components set to zero).
    pub fn derivative_wavenumber(&self, mode: usize) -> &[f64] {
        &self.kd[mode * self.dim..(mode + 1) * self.dim]
    }

    /// `|k|^2` including Nyquist components.
    pub fn k_squared(&self, mode: usize) -> f64 {
        self.wavenumber(mode).iter().map(|&k| (k * k) as f64).sum()
    }

    /// True if any component sits on the Nyquist index.
    pub fn has_nyquist(&self, mode: usize, grid: &TorusGrid) -> bool {
        self.wavenumber(mode)
            .iter()
            .zip(grid.nx())
            .any(|(&k, &n)| k == (n / 2) as i64)
    }
}

fn transform_axis(grid: &TorusGrid, data: &mut [Complex64], axis: usize, inverse: bool) {
    let n = grid.nx()[axis];
    let stride = grid.strides()[axis];
    let total = data.len();
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    // lines along `axis`: every node whose axis index is 0
    let block = stride * n;
    for outer in (0..total).step_by(block) {
        for inner in 0..stride {
            let base = outer + inner;
            for (i, l) in line.iter_mut().enumerate() {
                *l = data[base + i * stride];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (i, l) in line.iter().enumerate() {
                data[base + i * stride] = *l;
            }
        }
    }
}

/// Unnormalized forward transform of a real node array.
pub fn forward(grid: &TorusGrid, values: &[f64]) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for a in 0..grid.dim() {
        transform_axis(grid, &mut data, a, false);
    }
    data
}

/// Inverse transform (with `1/n` normalization) returning the real part.
pub fn inverse_real(grid: &TorusGrid, mut spec: Vec<Complex64>) -> Vec<f64> {
    for a in 0..grid.dim() {
        transform_axis(grid, &mut spec, a, true);
    }
    let scale = 1.0 / grid.node_count() as f64;
    spec.into_iter().map(|c| c.re * scale).collect()
}

/// Normalized Fourier coefficients `(1/n) sum_x f(x) e^{-i pi k.x}` indexed
/// like [`ModeTable`]. The phase is taken relative to the node `x = -1`.
pub fn fourier_coefficients(grid: &TorusGrid, values: &[f64]) -> Vec<Complex64> {
    let scale = 1.0 / grid.node_count() as f64;
    forward(grid, values)
        .into_iter()
        .map(|c| c * scale)
        .collect()
}

fn apply_multiplier(
    grid: &TorusGrid,
    values: &[f64],
    mult: impl Fn(usize) -> Complex64,
) -> Vec<f64> {
    let mut spec = forward(grid, values);
    for (m, c) in spec.iter_mut().enumerate() {
        *c *= mult(m);
    }
    inverse_real(grid, spec)
}

/// `d/dx_axis` of a raw scalar node array.
pub fn derivative_raw(grid: &TorusGrid, values: &[f64], axis: usize) -> Vec<f64> {
    let modes = ModeTable::new(grid);
    apply_multiplier(grid, values, |m| {
        Complex64::new(0.0, PI * modes.derivative_wavenumber(m)[axis])
    })
}

/// Laplacian of a raw scalar node array (multiplier `-pi^2 |k|^2`).
pub fn laplacian_raw(grid: &TorusGrid, values: &[f64]) -> Vec<f64> {
    let modes = ModeTable::new(grid);
    apply_multiplier(grid, values, |m| {
        Complex64::new(-PI * PI * modes.k_squared(m), 0.0)
    })
}

fn expect(f: &Field, kind: FieldKind) -> Result<()> {
    if f.kind() != kind {
        return Err(Error::KindMismatch {
            expected: kind,
            found: f.kind(),
        });
    }
    Ok(())
}

/// Spectral partial derivative of a scalar field.
pub fn spectral_derivative(f: &Field, axis: usize) -> Result<Field> {
    expect(f, FieldKind::Scalar)?;
    let grid = f.grid();
    if axis >= grid.dim() {
        return Err(Error::AxisOutOfRange {
            axis,
            dim: grid.dim(),
        });
    }
    Field::from_vec(
        grid,
        FieldKind::Scalar,
        derivative_raw(grid, f.data(), axis),
    )
}

pub fn gradient(f: &Field) -> Result<Field> {
    expect(f, FieldKind::Scalar)?;
    let grid = f.grid();
    let comps: Vec<Vec<f64>> = (0..grid.dim())
        .map(|a| derivative_raw(grid, f.data(), a))
        .collect();
    Field::from_components(grid, FieldKind::Vector, &comps)
}

/// `sum_i d v_i / dx_i`, assembled in Fourier space.
pub fn divergence(v: &Field) -> Result<Field> {
    expect(v, FieldKind::Vector)?;
    let grid = v.grid();
    let modes = ModeTable::new(grid);
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.node_count()];
    for a in 0..grid.dim() {
        let spec = forward(grid, &v.component(a));
        for (m, (o, c)) in acc.iter_mut().zip(spec).enumerate() {
            *o += c * Complex64::new(0.0, PI * modes.derivative_wavenumber(m)[a]);
        }
    }
    Field::from_vec(grid, FieldKind::Scalar, inverse_real(grid, acc))
}

pub fn laplacian(f: &Field) -> Result<Field> {
    expect(f, FieldKind::Scalar)?;
    Field::from_vec(
        f.grid(),
        FieldKind::Scalar,
        laplacian_raw(f.grid(), f.data()),
    )
}

/// Full symmetric components `T_ij` of a symmetric or deviatoric tensor field,
/// as `dim x dim` node arrays (`out[i][j]`).
pub fn tensor_entries(t: &Field) -> Result<Vec<Vec<Vec<f64>>>> {
    let grid = t.grid();
    let dim = grid.dim();
    let comps = t.components();
    let packed: Vec<Vec<f64>> = match t.kind() {
        FieldKind::SymTensor => comps,
        FieldKind::DevTensor => {
            let mut full = comps;
            let mut last = vec![0.0; grid.node_count()];
            for i in 0..dim - 1 {
                let c = &full[sym_index(dim, i, i)];
                for (l, v) in last.iter_mut().zip(c) {
                    *l -= v;
                }
            }
            full.push(last);
            full
        }
        other => {
            return Err(Error::KindMismatch {
                expected: FieldKind::SymTensor,
                found: other,
            })
        }
    };
    Ok((0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| packed[sym_index(dim, i, j)].clone())
                .collect()
        })
        .collect())
}

/// Row-wise divergence `(div T)_i = sum_j d T_ij / dx_j`.
pub fn tensor_divergence(t: &Field) -> Result<Field> {
    let grid = t.grid();
    let dim = grid.dim();
    let entries = tensor_entries(t)?;
    let modes = ModeTable::new(grid);
    let specs: Vec<Vec<Vec<Complex64>>> = entries
        .iter()
        .map(|row| row.iter().map(|e| forward(grid, e)).collect())
        .collect();
    let mut comps = Vec::with_capacity(dim);
    for row in specs.iter() {
        let mut acc = vec![Complex64::new(0.0, 0.0); grid.node_count()];
        for (j, spec) in row.iter().enumerate() {
            for (m, (o, c)) in acc.iter_mut().zip(spec).enumerate() {
                *o += c * Complex64::new(0.0, PI * modes.derivative_wavenumber(m)[j]);
            }
        }
        comps.push(inverse_real(grid, acc));
    }
    Field::from_components(grid, FieldKind::Vector, &comps)
}

/// Uniform-node quadrature of `a . b`, weight `(2/nx)^N` per node.
pub fn l2_inner(a: &Field, b: &Field) -> Result<f64> {
    a.check_compatible(b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    Ok(s * a.grid().cell_volume())
}

/// `sqrt(l2_inner(a, a))`, counting every stored component once.
pub fn l2_norm(a: &Field) -> f64 {
    let s: f64 = a.data().iter().map(|x| x * x).sum();
    (s * a.grid().cell_volume()).sqrt()
}
