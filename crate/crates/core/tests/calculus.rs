use std::f64::consts::PI;

use proptest::prelude::*;

use cil_core::spectral::{
    divergence, fourier_coefficients, gradient, l2_inner, l2_norm, laplacian, spectral_derivative,
    tensor_divergence,
};
use cil_core::torus::{
    helmholtz_decompose, inverse_divergence, lame_pressure_tensor, poisson_solve,
};
use cil_core::{Field, FieldKind, TorusGrid};

/// Eighth-order central difference weights for offsets 1..=4.
const FD8: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];

fn fd8(grid: &TorusGrid, values: &[f64], axis: usize) -> Vec<f64> {
    let n = grid.nx()[axis];
    let h = grid.spacing(axis);
    let stride: usize = grid.nx()[axis + 1..].iter().product();
    (0..values.len())
        .map(|i| {
            let j = (i / stride) % n;
            let base = i - j * stride;
            let at = |off: isize| {
                values[base + ((j as isize + off).rem_euclid(n as isize) as usize) * stride]
            };
            FD8.iter()
                .enumerate()
                .map(|(m, w)| w * (at(m as isize + 1) - at(-(m as isize) - 1)))
                .sum::<f64>()
                / h
        })
        .collect()
}

fn bump(x: &[f64]) -> f64 {
    ((PI * x[0]).sin() + 0.5 * (PI * x[1]).cos()).exp()
}

#[test]
fn derivative_matches_finite_difference_oracle() {
    let grid = TorusGrid::uniform(2, 128, 2, 1.0).unwrap();
    let f = Field::scalar_fn(&grid, bump);
    for axis in 0..2 {
        let spec = spectral_derivative(&f, axis).unwrap();
        let fd = fd8(&grid, f.data(), axis);
        let err = spec
            .data()
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "axis {axis}: {err:e}");
    }
}

#[test]
fn divergence_matches_finite_difference_oracle() {
    let grid = TorusGrid::uniform(2, 128, 2, 1.0).unwrap();
    let v = Field::from_fn(&grid, FieldKind::Vector, |x, o| {
        o[0] = bump(x);
        o[1] = bump(&[x[1], x[0]]);
    });
    let div = divergence(&v).unwrap();
    let comps = v.components();
    let fd: Vec<f64> = fd8(&grid, &comps[0], 0)
        .iter()
        .zip(fd8(&grid, &comps[1], 1))
        .map(|(a, b)| a + b)
        .collect();
    let err = div
        .data()
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-8, "{err:e}");
}

#[test]
fn parseval() {
    let grid = TorusGrid::uniform(2, 32, 2, 1.0).unwrap();
    let f = Field::scalar_fn(&grid, bump);
    let coeffs = fourier_coefficients(&grid, f.data());
    let volume = 4.0;
    let spectral: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() * volume;
    let physical = l2_norm(&f).powi(2);
    assert!(
        (spectral - physical).abs() < 1e-12 * physical,
        "{spectral} vs {physical}"
    );
}

/// Scalar field from a list of `(k1, k2, cos, sin)` modes.
fn modes_field(grid: &TorusGrid, modes: &[(i64, i64, f64, f64)]) -> Field {
    Field::scalar_fn(grid, |x| {
        modes
            .iter()
            .map(|&(a, b, c, s)| {
                let ph = PI * (a as f64 * x[0] + b as f64 * x[1]);
                c * ph.cos() + s * ph.sin()
            })
            .sum()
    })
}

fn modes(zero_mean: bool) -> impl Strategy<Value = Vec<(i64, i64, f64, f64)>> {
    prop::collection::vec((-6i64..=6, -6i64..=6, -1.0..1.0f64, -1.0..1.0f64), 1..8).prop_map(
        move |mut v| {
            if zero_mean {
                v.retain(|m| (m.0, m.1) != (0, 0));
            }
            v
        },
    )
}

fn grid16() -> TorusGrid {
    TorusGrid::uniform(2, 16, 2, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn helmholtz_splits_orthogonally(a in modes(false), b in modes(false)) {
        let g = grid16();
        let comps = vec![modes_field(&g, &a).into_data(), modes_field(&g, &b).into_data()];
        let m = Field::from_components(&g, FieldKind::Vector, &comps).unwrap();
        let (v, phi) = helmholtz_decompose(&m).unwrap();
        let gphi = gradient(&phi).unwrap();
        let mut back = v.clone();
        back.axpy(1.0, &gphi).unwrap();
        prop_assert!(back.max_abs_diff(&m).unwrap() < 1e-11);
        prop_assert!(divergence(&v).unwrap().max_abs() < 1e-11);
        prop_assert!(l2_inner(&v, &gphi).unwrap().abs() < 1e-11);
    }

    #[test]
    fn lame_tensor_absorbs_the_gradient(a in modes(true)) {
        let g = grid16();
        let pi = modes_field(&g, &a);
        let h = lame_pressure_tensor(&pi).unwrap();
        let mut res = tensor_divergence(&h).unwrap();
        res.axpy(-1.0, &gradient(&pi).unwrap()).unwrap();
        prop_assert!(res.max_abs() < 1e-11);
    }

    #[test]
    fn inverse_divergence_inverts(a in modes(true), b in modes(true)) {
        let g = grid16();
        let comps = vec![modes_field(&g, &a).into_data(), modes_field(&g, &b).into_data()];
        let f = Field::from_components(&g, FieldKind::Vector, &comps).unwrap();
        let gt = inverse_divergence(&f).unwrap();
        prop_assert!(tensor_divergence(&gt).unwrap().max_abs_diff(&f).unwrap() < 1e-11);
    }

    #[test]
    fn poisson_inverts_the_laplacian(a in modes(true)) {
        let g = grid16();
        let rhs = modes_field(&g, &a);
        let v = poisson_solve(&rhs).unwrap();
        prop_assert!(laplacian(&v).unwrap().max_abs_diff(&rhs).unwrap() < 1e-11);
        prop_assert!(v.mean()[0].abs() < 1e-13);
    }
}
