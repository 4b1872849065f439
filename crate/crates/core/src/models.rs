//! Concrete systems: the Euler-Fourier reduction with its causal temperature
//! solver, the quantum-fluid coefficients, and the dissipative energy balance.

use std::f64::consts::PI;
use std::ops::Range;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{sym_index, Field, FieldKind, SpaceTimeField, SpaceTimeMask};
use crate::grid::TorusGrid;
use crate::relaxation::{BundleEval, OperatorBundle, SubsolutionState};
use crate::spectral::{
    divergence, forward, gradient, inverse_real, laplacian, tensor_divergence, ModeTable,
};
use crate::tensor::{lambda_max, outer_self, DevMat};
use crate::torus::poisson_solve;

/// A scalar field given by a named preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarSpec {
    Constant(f64),
    /// `mean + amplitude cos(mode pi x_axis + phase)`
    Cosine {
        mean: f64,
        amplitude: f64,
        axis: usize,
        #[serde(default = "unit_mode")]
        mode: i64,
        #[serde(default)]
        phase: f64,
    },
}

fn unit_mode() -> i64 {
    1
}

impl ScalarSpec {
    pub fn field(&self, grid: &TorusGrid) -> Result<Field> {
        match *self {
            ScalarSpec::Constant(c) => Field::constant(grid, FieldKind::Scalar, &[c]),
            ScalarSpec::Cosine {
                mean,
                amplitude,
                axis,
                mode,
                phase,
            } => {
                if axis >= grid.dim() {
                    return Err(Error::AxisOutOfRange {
                        axis,
                        dim: grid.dim(),
                    });
                }
                Ok(Field::scalar_fn(grid, |x| {
                    mean + amplitude * (mode as f64 * PI * x[axis] + phase).cos()
                }))
            }
        }
    }
}

/// How the density is prescribed in time.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityMode {
    /// `rho = rho0`, `Phi = 0`
    Constant,
    /// `rho = rho0 + t g` with zero-mean `g`, `Phi` solving `Delta Phi = -g`
    Manufactured(Field),
}

/// `(rho, Phi)` with `d_t rho + Delta Phi = 0`.
pub fn euler_fourier_setup(
    grid: &TorusGrid,
    rho0: &Field,
    mode: &DensityMode,
) -> Result<(SpaceTimeField, SpaceTimeField)> {
    if !grid.same_space(rho0.grid()) || rho0.kind() != FieldKind::Scalar {
        return Err(Error::GridMismatch);
    }
    check_positive(rho0.data(), None)?;
    match mode {
        DensityMode::Constant => Ok((
            SpaceTimeField::constant_in_time(grid, rho0)?,
            SpaceTimeField::zeros(grid, FieldKind::Scalar),
        )),
        DensityMode::Manufactured(g) => {
            if !grid.same_space(g.grid()) || g.kind() != FieldKind::Scalar {
                return Err(Error::GridMismatch);
            }
            let mean = g.mean()[0];
            if mean.abs() > 1e-10 * g.max_abs().max(1.0) {
                return Err(Error::NonZeroMean { mean });
            }
            let t = grid.t_final();
            let end: Vec<f64> = rho0
                .data()
                .iter()
                .zip(g.data())
                .map(|(r, s)| r + t * s)
                .collect();
            check_positive(&end, Some(grid.nt() - 1))?;
            let mut data = Vec::with_capacity(grid.nt() * grid.node_count());
            for k in 0..grid.nt() {
                let t = grid.time(k);
                data.extend(rho0.data().iter().zip(g.data()).map(|(r, s)| r + t * s));
            }
            let rho = SpaceTimeField::from_vec(grid, FieldKind::Scalar, data)?;
            let mut neg = g.clone();
            neg.scale(-1.0);
            let phi = poisson_solve(&neg)?;
            Ok((rho, SpaceTimeField::constant_in_time(grid, &phi)?))
        }
    }
}

fn check_positive(values: &[f64], slice: Option<usize>) -> Result<()> {
    match values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        Some((node, &value)) => Err(Error::NonPositiveDensity {
            value,
            slice,
            node: Some(node),
        }),
        None => Ok(()),
    }
}

/// Time derivative by centred differences, one-sided at the ends.
fn time_derivative(f: &SpaceTimeField) -> SpaceTimeField {
    let grid = f.grid();
    let nt = grid.nt();
    let dt = grid.dt();
    let mut out = SpaceTimeField::zeros(grid, f.kind());
    for k in 0..nt {
        let (lo, hi) = (k.saturating_sub(1), (k + 1).min(nt - 1));
        let h = (hi - lo) as f64 * dt;
        let (a, b) = (f.slice_data(lo).to_vec(), f.slice_data(hi));
        for ((o, x), y) in out.slice_data_mut(k).iter_mut().zip(a).zip(b) {
            *o = (y - x) / h;
        }
    }
    out
}

/// Density, acoustic potential, initial temperature and the per-slice
/// energy level `Z(t_k)` of the Euler-Fourier reduction.
#[derive(Debug, Clone)]
pub struct EulerFourierData {
    pub rho: SpaceTimeField,
    pub phi: SpaceTimeField,
    pub theta0: Field,
    pub z: Vec<f64>,
    dphi: SpaceTimeField,
    grad_phi: SpaceTimeField,
}

impl EulerFourierData {
    pub fn new(
        rho: SpaceTimeField,
        phi: SpaceTimeField,
        theta0: Field,
        z: Vec<f64>,
    ) -> Result<Self> {
        rho.expect_kind(FieldKind::Scalar)?;
        phi.expect_kind(FieldKind::Scalar)?;
        rho.check_compatible(&phi)?;
        let grid = rho.grid().clone();
        if !grid.same_space(theta0.grid()) || theta0.kind() != FieldKind::Scalar {
            return Err(Error::GridMismatch);
        }
        if z.len() != grid.nt() {
            return Err(Error::LengthMismatch {
                expected: grid.nt(),
                found: z.len(),
            });
        }
        for k in 0..grid.nt() {
            check_positive(rho.slice_data(k), Some(k))?;
        }
        if let Some(node) = theta0.data().iter().position(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "initial temperature must be positive, found {} at node {node}",
                theta0.data()[node]
            )));
        }
        let dphi = time_derivative(&phi);
        let drho = time_derivative(&rho);
        let mut grad = Vec::with_capacity(grid.nt());
        let mut worst = 0.0_f64;
        for k in 0..grid.nt() {
            let p = phi.slice(k);
            let lap = laplacian(&p)?;
            for (a, b) in drho.slice_data(k).iter().zip(lap.data()) {
                worst = worst.max((a + b).abs());
            }
            grad.push(gradient(&p)?);
        }
        if worst > 1e-8 {
            return Err(Error::InvalidState(format!(
                "d_t rho + Delta Phi has residual {worst:e}"
            )));
        }
        let grad_phi = SpaceTimeField::from_slices(&grid, &grad)?;
        Ok(Self {
            rho,
            phi,
            theta0,
            z,
            dphi,
            grad_phi,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        self.rho.grid()
    }

    pub fn grad_phi(&self) -> &SpaceTimeField {
        &self.grad_phi
    }

    pub fn dphi(&self) -> &SpaceTimeField {
        &self.dphi
    }

    /// Replace the energy level.
    pub fn with_z(mut self, z: Vec<f64>) -> Result<Self> {
        if z.len() != self.grid().nt() {
            return Err(Error::LengthMismatch {
                expected: self.grid().nt(),
                found: z.len(),
            });
        }
        self.z = z;
        Ok(self)
    }
}

/// Substeps of the temperature march between two slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substeps {
    /// as many as the transport bound requires
    #[default]
    Auto,
    Fixed(usize),
}

/// Transport stability bound `4 / (3 rho_max s^2)` with `s = max |u| / rho`.
pub fn temperature_step_bound(rho: &[f64], u: &[f64], dim: usize) -> f64 {
    let rho_max = rho.iter().fold(0.0_f64, |m, v| m.max(*v));
    let s = rho
        .iter()
        .enumerate()
        .map(|(node, r)| {
            u[node * dim..(node + 1) * dim]
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                / r
        })
        .fold(0.0_f64, f64::max);
    if s == 0.0 {
        f64::INFINITY
    } else {
        4.0 / (3.0 * rho_max * s * s)
    }
}

/// March `(3/2)(rho d_t theta + u . grad theta) - Delta theta = -rho theta div(u / rho)`,
/// `u = v + grad Phi`, from `theta0`. Diffusion is implicit per Fourier mode
/// with the largest coefficient, the remainder and transport are explicit;
/// slice `k + 1` only reads slice `k` of `v`.
pub fn temperature_solve(
    d: &EulerFourierData,
    v: &SpaceTimeField,
    substeps: Substeps,
) -> Result<SpaceTimeField> {
    let grid = d.grid().clone();
    v.expect_kind(FieldKind::Vector)?;
    if v.grid() != &grid {
        return Err(Error::GridMismatch);
    }
    let dim = grid.dim();
    let nn = grid.node_count();
    let modes = ModeTable::new(&grid);
    let mut theta = SpaceTimeField::zeros(&grid, FieldKind::Scalar);
    theta.slice_data_mut(0).copy_from_slice(d.theta0.data());
    let mut current = d.theta0.clone();
    for k in 0..grid.nt() - 1 {
        let rho = d.rho.slice_data(k);
        let u: Vec<f64> = v
            .slice_data(k)
            .iter()
            .zip(d.grad_phi.slice_data(k))
            .map(|(a, b)| a + b)
            .collect();
        let bound = temperature_step_bound(rho, &u, dim);
        let m = match substeps {
            Substeps::Fixed(n) => {
                let n = n.max(1);
                let h = grid.dt() / n as f64;
                if h > bound {
                    return Err(Error::StabilityBound { dt: h, bound });
                }
                n
            }
            Substeps::Auto => ((grid.dt() / (0.9 * bound)).ceil() as usize).max(1),
        };
        let h = grid.dt() / m as f64;
        let kappa: Vec<f64> = rho.iter().map(|r| 2.0 / (3.0 * r)).collect();
        let kref = kappa.iter().fold(0.0_f64, |a, b| a.max(*b));
        let b: Vec<f64> = u
            .iter()
            .enumerate()
            .map(|(i, x)| x / rho[i / dim])
            .collect();
        let divb = divergence(&Field::from_vec(&grid, FieldKind::Vector, b)?)?;
        for _ in 0..m {
            let lap = laplacian(&current)?;
            let grad = gradient(&current)?;
            let rhs: Vec<f64> = (0..nn)
                .map(|node| {
                    let th = current.data()[node];
                    let adv: f64 = (0..dim)
                        .map(|a| u[node * dim + a] * grad.data()[node * dim + a])
                        .sum();
                    th + h
                        * ((kappa[node] - kref) * lap.data()[node]
                            - adv / rho[node]
                            - 2.0 / 3.0 * th * divb.data()[node])
                })
                .collect();
            let mut spec = forward(&grid, &rhs);
            for (mode, c) in spec.iter_mut().enumerate() {
                *c /= Complex64::new(1.0 + h * kref * PI * PI * modes.k_squared(mode), 0.0);
            }
            current = Field::from_vec(&grid, FieldKind::Scalar, inverse_real(&grid, spec))?;
        }
        theta.slice_data_mut(k + 1).copy_from_slice(current.data());
    }
    Ok(theta)
}

/// `h = grad Phi`, `r = rho`, `H = 0`, `e = Z - (N/2)(d_t Phi + rho theta[v])`.
#[derive(Debug, Clone)]
pub struct EulerFourierBundle {
    pub data: EulerFourierData,
    pub substeps: Substeps,
    mask: SpaceTimeMask,
    e_bar: f64,
}

pub fn euler_fourier_bundle(d: EulerFourierData, substeps: Substeps) -> EulerFourierBundle {
    let grid = d.grid().clone();
    let half_n = 0.5 * grid.dim() as f64;
    let zmax = d.z.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let dmin = d.dphi.data().iter().fold(f64::INFINITY, |m, v| m.min(*v));
    EulerFourierBundle {
        mask: SpaceTimeMask::full(&grid),
        e_bar: zmax - half_n * dmin.min(0.0),
        data: d,
        substeps,
    }
}

impl EulerFourierBundle {
    pub fn theta(&self, v: &SpaceTimeField) -> Result<SpaceTimeField> {
        temperature_solve(&self.data, v, self.substeps)
    }

    /// `(N/2)(d_t Phi + rho theta)` at every node; `Z` must dominate it.
    fn pressure_energy(&self, theta: &SpaceTimeField) -> SpaceTimeField {
        let half_n = 0.5 * self.data.grid().dim() as f64;
        let data: Vec<f64> = theta
            .data()
            .iter()
            .zip(self.data.rho.data())
            .zip(self.data.dphi.data())
            .map(|((th, r), dp)| half_n * (dp + r * th))
            .collect();
        SpaceTimeField::from_vec(theta.grid(), FieldKind::Scalar, data).expect("shape")
    }

    /// Smallest `Z` keeping `e >= 0`, per slice.
    pub fn z_floor(&self, v: &SpaceTimeField) -> Result<Vec<f64>> {
        let p = self.pressure_energy(&self.theta(v)?);
        Ok((0..p.nt())
            .map(|k| {
                p.slice_data(k)
                    .iter()
                    .fold(f64::NEG_INFINITY, |m, x| m.max(*x))
            })
            .collect())
    }
}

impl OperatorBundle for EulerFourierBundle {
    fn evaluate(&self, v: &SpaceTimeField) -> Result<BundleEval> {
        let grid = self.data.grid();
        let theta = self.theta(v)?;
        let p = self.pressure_energy(&theta);
        let mut energy = p.clone();
        let mut min_energy = f64::INFINITY;
        for k in 0..grid.nt() {
            let z = self.data.z[k];
            for e in energy.slice_data_mut(k) {
                *e = z - *e;
                min_energy = min_energy.min(*e);
            }
        }
        if min_energy < 0.0 {
            let floor = (0..grid.nt())
                .map(|k| {
                    p.slice_data(k)
                        .iter()
                        .fold(f64::NEG_INFINITY, |m, x| m.max(*x))
                        - self.data.z[k]
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let z_floor = self.data.z.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) + floor;
            return Err(Error::EnergyFloor {
                min_energy,
                z_floor,
            });
        }
        Ok(BundleEval {
            shift: self.data.grad_phi.clone(),
            density: self.data.rho.clone(),
            energy,
            stress: SpaceTimeField::zeros(grid, FieldKind::DevTensor),
        })
    }

    fn qmask(&self) -> &SpaceTimeMask {
        &self.mask
    }

    fn energy_bound(&self) -> f64 {
        self.e_bar
    }
}

/// Per-slice `Z` leaving a relaxed gap of exactly `margin` at the worst node of
/// each slice for the state `s`.
pub fn z_for_margin(
    d: &EulerFourierData,
    s: &SubsolutionState,
    margin: f64,
    substeps: Substeps,
) -> Result<Vec<f64>> {
    let grid = d.grid();
    let dim = grid.dim();
    let half_n = 0.5 * dim as f64;
    let theta = temperature_solve(d, &s.v, substeps)?;
    let z = (0..grid.nt())
        .into_par_iter()
        .map(|k| {
            (0..grid.node_count())
                .map(|node| {
                    let r = d.rho.value(k, node)[0];
                    let vh: Vec<f64> =
                        s.v.value(k, node)
                            .iter()
                            .zip(d.grad_phi.value(k, node))
                            .map(|(a, b)| a + b)
                            .collect();
                    let f = DevMat::from_components(dim, s.f.value(k, node)).to_sym();
                    let lm = lambda_max(&outer_self(&vh).scaled(1.0 / r).sub(&f));
                    half_n * lm + half_n * (d.dphi.value(k, node)[0] + r * theta.value(k, node)[0])
                })
                .fold(f64::NEG_INFINITY, f64::max)
                + margin
        })
        .collect();
    Ok(z)
}

/// Capillarity law `K(rho)`; `chi = rho K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum Capillarity {
    /// `K = k`
    Constant { k: f64 },
    /// `K = hbar / (4 rho)`, so `chi = hbar / 4`
    #[serde(rename = "hbar_over_4rho")]
    HbarOver4Rho { hbar: f64 },
}

impl Capillarity {
    pub fn k(&self, rho: f64) -> f64 {
        match *self {
            Capillarity::Constant { k } => k,
            Capillarity::HbarOver4Rho { hbar } => hbar / (4.0 * rho),
        }
    }

    pub fn dk(&self, rho: f64) -> f64 {
        match *self {
            Capillarity::Constant { .. } => 0.0,
            Capillarity::HbarOver4Rho { hbar } => -hbar / (4.0 * rho * rho),
        }
    }

    pub fn chi(&self, rho: f64) -> f64 {
        rho * self.k(rho)
    }

    pub fn dchi(&self, rho: f64) -> f64 {
        self.k(rho) + rho * self.dk(rho)
    }
}

/// Barotropic pressure `p = a rho^gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaLaw {
    pub a: f64,
    pub gamma: f64,
}

impl GammaLaw {
    pub fn p(&self, rho: f64) -> f64 {
        self.a * rho.max(0.0).powf(self.gamma)
    }
}

/// Density, momentum potential `M` and Poisson potential `V` of the
/// Euler-Korteweg-Poisson system in three dimensions.
#[derive(Debug, Clone)]
pub struct QuantumData {
    pub rho: SpaceTimeField,
    pub m: SpaceTimeField,
    /// `d_t M`; centred differences unless supplied
    pub dm: SpaceTimeField,
    pub v_pot: SpaceTimeField,
    pub rho_bar: f64,
    pub capillarity: Capillarity,
    pub pressure: GammaLaw,
    /// absolute vacuum threshold
    pub rho_vac: f64,
}

impl QuantumData {
    /// `rho_vac_rel` is relative to `max rho`.
    pub fn new(
        rho: SpaceTimeField,
        m: SpaceTimeField,
        capillarity: Capillarity,
        pressure: GammaLaw,
        rho_vac_rel: f64,
    ) -> Result<Self> {
        rho.expect_kind(FieldKind::Scalar)?;
        m.expect_kind(FieldKind::Scalar)?;
        rho.check_compatible(&m)?;
        let grid = rho.grid().clone();
        if grid.dim() != 3 {
            return Err(Error::InvalidArgument(format!(
                "the quantum reformulation is defined for N = 3, got N = {}",
                grid.dim()
            )));
        }
        if let Some(&value) = rho.data().iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::NonPositiveDensity {
                value,
                slice: None,
                node: None,
            });
        }
        let rho_bar = rho.slice(0).mean()[0];
        let mut pots = Vec::with_capacity(grid.nt());
        for k in 0..grid.nt() {
            let mut s = rho.slice(k);
            let mean = s.mean()[0];
            if (mean - rho_bar).abs() > 1e-10 * rho_bar.abs().max(1.0) {
                return Err(Error::InvalidState(format!(
                    "slice {k} has mass {mean} instead of {rho_bar}"
                )));
            }
            s.data_mut().iter_mut().for_each(|x| *x -= mean);
            pots.push(poisson_solve(&s)?);
        }
        let v_pot = SpaceTimeField::from_slices(&grid, &pots)?;
        let rho_max = rho.max_abs();
        let dm = time_derivative(&m);
        Ok(Self {
            rho,
            m,
            dm,
            v_pot,
            rho_bar,
            capillarity,
            pressure,
            rho_vac: rho_vac_rel * rho_max,
        })
    }

    pub fn with_dm(mut self, dm: SpaceTimeField) -> Result<Self> {
        dm.expect_kind(FieldKind::Scalar)?;
        dm.check_compatible(&self.m)?;
        self.dm = dm;
        Ok(self)
    }

    pub fn grid(&self) -> &TorusGrid {
        self.rho.grid()
    }

    /// Nodes with `rho >= rho_vac`.
    pub fn qmask(&self) -> SpaceTimeMask {
        let data = self.rho.data().iter().map(|r| *r >= self.rho_vac).collect();
        SpaceTimeMask::from_vec(self.grid(), data).expect("shape")
    }
}

/// Coefficients of the reformulated momentum equation.
#[derive(Debug, Clone)]
pub struct QuantumCoefficients {
    pub r: SpaceTimeField,
    pub h: SpaceTimeField,
    pub hh: SpaceTimeField,
    pub pi: SpaceTimeField,
    pub qmask: SpaceTimeMask,
}

struct SliceCoeffs {
    r: Vec<f64>,
    h: Vec<f64>,
    hh: Vec<f64>,
    pi: Vec<f64>,
}

fn slice_coefficients(q: &QuantumData, k: usize) -> Result<SliceCoeffs> {
    let grid = q.grid();
    let nn = grid.node_count();
    let et = grid.time(k).exp();
    let rho = q.rho.slice(k);
    let grad_rho = gradient(&rho)?;
    let lap_rho = laplacian(&rho)?;
    let grad_v = gradient(&q.v_pot.slice(k))?;
    let grad_m = gradient(&q.m.slice(k))?;
    let mut r = Vec::with_capacity(nn);
    let mut hh = Vec::with_capacity(nn * 5);
    let mut pi = Vec::with_capacity(nn);
    for node in 0..nn {
        let rv = rho.data()[node];
        let gr = grad_rho.value(node);
        let gv = grad_v.value(node);
        // grad sqrt(rho), zero in vacuum
        let gs: Vec<f64> = if rv >= q.rho_vac && rv > 0.0 {
            gr.iter().map(|g| g / (2.0 * rv.sqrt())).collect()
        } else {
            vec![0.0; 3]
        };
        let chi = q.capillarity.chi(rv);
        let gs2: f64 = gs.iter().map(|x| x * x).sum();
        let gv2: f64 = gv.iter().map(|x| x * x).sum();
        let gr2: f64 = gr.iter().map(|x| x * x).sum();
        let mut c = [0.0; 5];
        for i in 0..3 {
            for j in i..3 {
                let idx = sym_index(3, i, j);
                if idx == 5 {
                    continue;
                }
                let mut t = chi * gs[i] * gs[j] - 0.25 * gv[i] * gv[j];
                if i == j {
                    t += -chi * gs2 / 3.0 + gv2 / 12.0;
                }
                c[idx] = 4.0 * et * t;
            }
        }
        hh.extend_from_slice(&c);
        r.push(et * rv);
        pi.push(
            et * (q.pressure.p(rv) + q.dm.value(k, node)[0] + q.m.value(k, node)[0]
                - chi * lap_rho.data()[node]
                - 0.5 * q.capillarity.dchi(rv) * gr2
                + 4.0 / 3.0 * chi * gs2
                - q.rho_bar * q.v_pot.value(k, node)[0]
                + gv2 / 6.0),
        );
    }
    let h = grad_m.data().iter().map(|x| et * x).collect();
    Ok(SliceCoeffs { r, h, hh, pi })
}

/// `r = e^t rho`, `h = e^t grad M`, the trace-free `H` and the pressure `Pi`.
pub fn quantum_coefficients(q: &QuantumData) -> Result<QuantumCoefficients> {
    let grid = q.grid().clone();
    let slices: Vec<SliceCoeffs> = (0..grid.nt())
        .into_par_iter()
        .map(|k| slice_coefficients(q, k))
        .collect::<Result<_>>()?;
    let mut r = Vec::new();
    let mut h = Vec::new();
    let mut hh = Vec::new();
    let mut pi = Vec::new();
    for s in slices {
        r.extend(s.r);
        h.extend(s.h);
        hh.extend(s.hh);
        pi.extend(s.pi);
    }
    Ok(QuantumCoefficients {
        r: SpaceTimeField::from_vec(&grid, FieldKind::Scalar, r)?,
        h: SpaceTimeField::from_vec(&grid, FieldKind::Vector, h)?,
        hh: SpaceTimeField::from_vec(&grid, FieldKind::DevTensor, hh)?,
        pi: SpaceTimeField::from_vec(&grid, FieldKind::Scalar, pi)?,
        qmask: q.qmask(),
    })
}

fn outer_over(grid: &TorusGrid, u: &[f64], w: &[f64]) -> Result<Field> {
    let dim = grid.dim();
    let nc = FieldKind::SymTensor.components(dim);
    let mut data = vec![0.0; grid.node_count() * nc];
    for (node, (chunk, wv)) in data.chunks_exact_mut(nc).zip(w).enumerate() {
        let x = &u[node * dim..(node + 1) * dim];
        for i in 0..dim {
            for j in i..dim {
                chunk[sym_index(dim, i, j)] = x[i] * x[j] / wv;
            }
        }
    }
    Field::from_vec(grid, FieldKind::SymTensor, data)
}

/// `d_t v + div((v + h)(v + h) / r + H) + grad Pi` on slice `k`.
pub fn reformulated_momentum_residual(
    c: &QuantumCoefficients,
    k: usize,
    v: &Field,
    dv: &Field,
) -> Result<Field> {
    let grid = c.r.grid();
    v.check_compatible(dv)?;
    let vh: Vec<f64> = v
        .data()
        .iter()
        .zip(c.h.slice_data(k))
        .map(|(a, b)| a + b)
        .collect();
    let mut out = tensor_divergence(&outer_over(grid, &vh, c.r.slice_data(k))?)?;
    out.axpy(1.0, &tensor_divergence(&c.hh.slice(k))?)?;
    out.axpy(1.0, &gradient(&c.pi.slice(k))?)?;
    out.axpy(1.0, dv)?;
    Ok(out)
}

/// `J = e^-t v + grad M` and `d_t J = e^-t (d_t v - v) + grad d_t M`.
pub fn momentum_from_potential(
    q: &QuantumData,
    k: usize,
    v: &Field,
    dv: &Field,
) -> Result<(Field, Field)> {
    let emt = (-q.grid().time(k)).exp();
    let mut j = gradient(&q.m.slice(k))?;
    j.axpy(emt, v)?;
    let mut dj = gradient(&q.dm.slice(k))?;
    dj.axpy(emt, dv)?;
    dj.axpy(-emt, v)?;
    Ok((j, dj))
}

/// `d_t J + J + div(J J / rho) + grad p - rho grad(K Delta rho + K'/2 |grad rho|^2) - rho grad V`
/// on slice `k`.
pub fn original_momentum_residual(
    q: &QuantumData,
    k: usize,
    j: &Field,
    dj: &Field,
) -> Result<Field> {
    let grid = q.grid();
    j.check_compatible(dj)?;
    let rho = q.rho.slice(k);
    let grad_rho = gradient(&rho)?;
    let lap_rho = laplacian(&rho)?;
    let mut out = tensor_divergence(&outer_over(grid, j.data(), rho.data())?)?;
    out.axpy(1.0, dj)?;
    out.axpy(1.0, j)?;
    let p = Field::from_vec(
        grid,
        FieldKind::Scalar,
        rho.data().iter().map(|r| q.pressure.p(*r)).collect(),
    )?;
    out.axpy(1.0, &gradient(&p)?)?;
    let kort: Vec<f64> = (0..grid.node_count())
        .map(|node| {
            let r = rho.data()[node];
            let g2: f64 = grad_rho.value(node).iter().map(|x| x * x).sum();
            q.capillarity.k(r) * lap_rho.data()[node] + 0.5 * q.capillarity.dk(r) * g2
        })
        .collect();
    let gk = gradient(&Field::from_vec(grid, FieldKind::Scalar, kort)?)?;
    let gv = gradient(&q.v_pot.slice(k))?;
    let dim = grid.dim();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let r = rho.data()[i / dim];
        *o -= r * (gk.data()[i] + gv.data()[i]);
    }
    Ok(out)
}

/// Outcome of [`dissipative_energy_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativeReport {
    pub pass: bool,
    /// `max_t |E(t) - E(t_0)| / |E(t_0)|` over the window
    pub defect: f64,
    pub energy: Vec<f64>,
}

/// Total energy `int (rho |u|^2 / 2 + 3/2 rho theta)` per slice of `window`
/// and its largest relative deviation from the first slice.
pub fn dissipative_energy_check(
    rho: &SpaceTimeField,
    theta: &SpaceTimeField,
    u: &SpaceTimeField,
    window: Range<usize>,
    tol: f64,
) -> Result<DissipativeReport> {
    rho.expect_kind(FieldKind::Scalar)?;
    theta.expect_kind(FieldKind::Scalar)?;
    u.expect_kind(FieldKind::Vector)?;
    rho.check_compatible(theta)?;
    if rho.grid() != u.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = rho.grid();
    if window.is_empty() || window.end > grid.nt() {
        return Err(Error::InvalidArgument(format!(
            "window {window:?} outside 0..{}",
            grid.nt()
        )));
    }
    let dim = grid.dim();
    let vol = grid.cell_volume();
    let energy: Vec<f64> = window
        .clone()
        .map(|k| {
            let uk = u.slice_data(k);
            rho.slice_data(k)
                .iter()
                .zip(theta.slice_data(k))
                .enumerate()
                .map(|(node, (r, th))| {
                    let u2: f64 = uk[node * dim..(node + 1) * dim].iter().map(|x| x * x).sum();
                    0.5 * r * u2 + 1.5 * r * th
                })
                .sum::<f64>()
                * vol
        })
        .collect();
    let e0 = energy[0];
    if e0 == 0.0 {
        return Err(Error::Degenerate("initial total energy vanishes".into()));
    }
    let defect = energy.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs();
    Ok(DissipativeReport {
        pass: defect <= tol,
        defect,
        energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relaxation::{causality_probe, default_tau_list, verify_subsolution, Tolerances};

    fn constant_data(grid: &TorusGrid, margin: f64) -> EulerFourierData {
        let rho0 = Field::constant(grid, FieldKind::Scalar, &[2.0]).unwrap();
        let (rho, phi) = euler_fourier_setup(grid, &rho0, &DensityMode::Constant).unwrap();
        let theta0 = Field::constant(grid, FieldKind::Scalar, &[1.0]).unwrap();
        let d = EulerFourierData::new(rho, phi, theta0, vec![0.0; grid.nt()]).unwrap();
        let s = SubsolutionState::stationary(grid, &Field::zeros(grid, FieldKind::Vector)).unwrap();
        let z = z_for_margin(&d, &s, margin, Substeps::Auto).unwrap();
        d.with_z(z).unwrap()
    }

    #[test]
    fn constant_preset_energy() {
        let g = TorusGrid::uniform(2, 8, 5, 4.0).unwrap();
        let d = constant_data(&g, 0.5);
        assert!(d.z.iter().all(|z| (z - 2.5).abs() < 1e-12));
        let b = euler_fourier_bundle(d, Substeps::Auto);
        let eval = b
            .evaluate(&SpaceTimeField::zeros(&g, FieldKind::Vector))
            .unwrap();
        assert!(eval.energy.data().iter().all(|e| (e - 0.5).abs() < 1e-12));
        assert!(eval.shift.max_abs() == 0.0);
        let s = SubsolutionState::stationary(&g, &Field::zeros(&g, FieldKind::Vector)).unwrap();
        let rep =
            verify_subsolution(&s, &b, &default_tau_list(4.0), &Tolerances::default()).unwrap();
        assert!(rep.pass);
    }

    #[test]
    fn low_energy_level_is_rejected_with_floor() {
        let g = TorusGrid::uniform(2, 8, 3, 1.0).unwrap();
        let d = constant_data(&g, 0.5).with_z(vec![1.0; 3]).unwrap();
        let b = euler_fourier_bundle(d, Substeps::Auto);
        match b.evaluate(&SpaceTimeField::zeros(&g, FieldKind::Vector)) {
            Err(Error::EnergyFloor {
                min_energy,
                z_floor,
            }) => {
                assert!((min_energy + 1.0).abs() < 1e-12);
                assert!((z_floor - 2.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manufactured_density_and_potential() {
        let g = TorusGrid::uniform(2, 16, 5, 0.5).unwrap();
        let rho0 = Field::constant(&g, FieldKind::Scalar, &[2.0]).unwrap();
        let gf = Field::scalar_fn(&g, |x| (PI * x[0]).cos());
        let (rho, phi) = euler_fourier_setup(&g, &rho0, &DensityMode::Manufactured(gf)).unwrap();
        let expect = Field::scalar_fn(&g, |x| (PI * x[0]).cos() / (PI * PI));
        assert!(phi.slice(3).max_abs_diff(&expect).unwrap() < 1e-12);
        let theta0 = Field::constant(&g, FieldKind::Scalar, &[1.0]).unwrap();
        assert!(EulerFourierData::new(rho, phi, theta0, vec![10.0; 5]).is_ok());

        let shifted = Field::scalar_fn(&g, |x| 0.1 + (PI * x[0]).cos());
        assert!(matches!(
            euler_fourier_setup(&g, &rho0, &DensityMode::Manufactured(shifted)),
            Err(Error::NonZeroMean { .. })
        ));
        let long = TorusGrid::uniform(2, 16, 5, 5.0).unwrap();
        let gf = Field::scalar_fn(&long, |x| (PI * x[0]).cos());
        assert!(matches!(
            euler_fourier_setup(&long, &rho0, &DensityMode::Manufactured(gf)),
            Err(Error::NonPositiveDensity { .. })
        ));
    }

    fn heat_setup(nx: usize, nt: usize, t: f64) -> EulerFourierData {
        let g = TorusGrid::uniform(2, nx, nt, t).unwrap();
        let rho0 = Field::constant(&g, FieldKind::Scalar, &[1.0]).unwrap();
        let (rho, phi) = euler_fourier_setup(&g, &rho0, &DensityMode::Constant).unwrap();
        let theta0 = Field::scalar_fn(&g, |x| 2.0 + (PI * x[0]).cos());
        EulerFourierData::new(rho, phi, theta0, vec![10.0; nt]).unwrap()
    }

    #[test]
    fn heat_decay_matches_the_discrete_and_exact_rates() {
        let t = 0.1;
        let d = heat_setup(16, 11, t);
        let g = d.grid().clone();
        let v = SpaceTimeField::zeros(&g, FieldKind::Vector);
        let th = temperature_solve(&d, &v, Substeps::Auto).unwrap();
        let rate = 2.0 / 3.0 * PI * PI;
        // one implicit Euler step per slice, exact in space
        let amp = (1.0 + g.dt() * rate).powi(10).recip();
        let discrete = Field::scalar_fn(&g, |x| 2.0 + amp * (PI * x[0]).cos());
        assert!(th.slice(10).max_abs_diff(&discrete).unwrap() < 1e-12);
        let exact = Field::scalar_fn(&g, |x| 2.0 + (-rate * t).exp() * (PI * x[0]).cos());
        assert!(th.slice(10).max_abs_diff(&exact).unwrap() < 2.0 * g.dt());
        // mean conserved by pure diffusion
        assert!((th.slice(10).mean()[0] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn constant_temperature_stays_constant() {
        let g = TorusGrid::uniform(2, 8, 6, 2.0).unwrap();
        let d = constant_data(&g, 0.5);
        let th = temperature_solve(
            &d,
            &SpaceTimeField::zeros(&g, FieldKind::Vector),
            Substeps::Fixed(1),
        )
        .unwrap();
        assert!(th.data().iter().all(|x| (x - 1.0).abs() < 1e-14));
    }

    #[test]
    fn fixed_substeps_respect_the_transport_bound() {
        let g = TorusGrid::uniform(2, 8, 3, 4.0).unwrap();
        let d = constant_data(&g, 0.5);
        let v = SpaceTimeField::from_fn(&g, FieldKind::Vector, |_, x, o| {
            o[0] = 3.0 * (PI * x[1]).sin();
            o[1] = 0.0;
        });
        assert!(matches!(
            temperature_solve(&d, &v, Substeps::Fixed(1)),
            Err(Error::StabilityBound { .. })
        ));
        assert!(temperature_solve(&d, &v, Substeps::Auto).is_ok());
    }

    #[test]
    fn temperature_is_causal() {
        let g = TorusGrid::uniform(2, 8, 9, 2.0).unwrap();
        let rho0 = Field::scalar_fn(&g, |x| 2.0 + 0.3 * (PI * x[1]).sin());
        let (rho, phi) = euler_fourier_setup(&g, &rho0, &DensityMode::Constant).unwrap();
        let theta0 = Field::scalar_fn(&g, |x| 1.0 + 0.2 * (PI * x[0]).cos());
        let d = EulerFourierData::new(rho, phi, theta0, vec![20.0; 9]).unwrap();
        let b = euler_fourier_bundle(d, Substeps::Auto);
        let v = SpaceTimeField::from_fn(&g, FieldKind::Vector, |t, x, o| {
            o[0] = 0.3 * t * (PI * x[1]).sin();
            o[1] = 0.0;
        });
        let p = SpaceTimeField::from_fn(&g, FieldKind::Vector, |_, x, o| {
            o[0] = 0.0;
            o[1] = 0.2 * (PI * x[0]).cos();
        });
        for tau in [0.25, 0.5, 1.0, 1.5] {
            assert!(causality_probe(&b, &v, tau, &p).unwrap());
        }
    }

    fn quantum_case(nx: usize, cap: Capillarity) -> (QuantumData, SpaceTimeField, SpaceTimeField) {
        let g = TorusGrid::uniform(3, nx, 3, 0.2).unwrap();
        let rho = SpaceTimeField::from_fn(&g, FieldKind::Scalar, |_, x, o| {
            o[0] = 2.0 + 0.5 * (PI * x[0]).cos()
        });
        let m = SpaceTimeField::from_fn(&g, FieldKind::Scalar, |t, x, o| {
            o[0] = (1.0 + t) * (PI * x[1]).sin()
        });
        let dm = SpaceTimeField::from_fn(&g, FieldKind::Scalar, |_, x, o| o[0] = (PI * x[1]).sin());
        let q = QuantumData::new(rho, m, cap, GammaLaw { a: 1.0, gamma: 2.0 }, 1e-6)
            .unwrap()
            .with_dm(dm)
            .unwrap();
        let v = SpaceTimeField::from_fn(&g, FieldKind::Vector, |t, x, o| {
            o[0] = (1.0 + t) * (PI * x[2]).sin();
            o[1] = 0.0;
            o[2] = 0.5 * (PI * x[0]).cos();
        });
        let dv = SpaceTimeField::from_fn(&g, FieldKind::Vector, |_, x, o| {
            o[0] = (PI * x[2]).sin();
            o[1] = 0.0;
            o[2] = 0.0;
        });
        (q, v, dv)
    }

    #[test]
    fn quantum_trivial_state() {
        let g = TorusGrid::uniform(3, 4, 3, 1.0).unwrap();
        let rho = SpaceTimeField::zeros(&g, FieldKind::Scalar).map(|_| 1.0);
        let m = SpaceTimeField::zeros(&g, FieldKind::Scalar);
        let law = GammaLaw { a: 3.0, gamma: 1.4 };
        let q = QuantumData::new(rho, m, Capillarity::Constant { k: 0.1 }, law, 1e-6).unwrap();
        let c = quantum_coefficients(&q).unwrap();
        assert_eq!(q.v_pot.max_abs(), 0.0);
        assert_eq!(c.h.max_abs(), 0.0);
        assert_eq!(c.hh.max_abs(), 0.0);
        for k in 0..3 {
            let et = g.time(k).exp();
            assert!(c.r.slice_data(k).iter().all(|r| (r - et).abs() < 1e-15));
            assert!(c
                .pi
                .slice_data(k)
                .iter()
                .all(|p| (p - 3.0 * et).abs() < 1e-12));
        }
    }

    #[test]
    fn quantum_requires_three_dimensions() {
        let g = TorusGrid::uniform(2, 4, 2, 1.0).unwrap();
        let rho = SpaceTimeField::zeros(&g, FieldKind::Scalar).map(|_| 1.0);
        let m = SpaceTimeField::zeros(&g, FieldKind::Scalar);
        let law = GammaLaw { a: 1.0, gamma: 1.0 };
        assert!(QuantumData::new(rho, m, Capillarity::Constant { k: 1.0 }, law, 1e-6).is_err());
    }

    #[test]
    fn reformulation_matches_original_momentum() {
        // K = hbar / (4 rho) has a slower-decaying spectrum and needs the finer grid
        for (cap, nx) in [
            (Capillarity::Constant { k: 0.3 }, 16),
            (Capillarity::HbarOver4Rho { hbar: 0.5 }, 32),
        ] {
            let (q, v, dv) = quantum_case(nx, cap);
            let c = quantum_coefficients(&q).unwrap();
            for k in 0..3 {
                let tr: Vec<f64> = (0..q.grid().node_count())
                    .map(|n| {
                        DevMat::from_components(3, c.hh.value(k, n))
                            .to_sym()
                            .trace()
                    })
                    .collect();
                assert!(tr.iter().all(|t| *t == 0.0));
                let r_new =
                    reformulated_momentum_residual(&c, k, &v.slice(k), &dv.slice(k)).unwrap();
                let (j, dj) = momentum_from_potential(&q, k, &v.slice(k), &dv.slice(k)).unwrap();
                let mut r_old = original_momentum_residual(&q, k, &j, &dj).unwrap();
                r_old.scale(q.grid().time(k).exp());
                let diff = r_new.max_abs_diff(&r_old).unwrap();
                assert!(diff < 1e-8, "{cap:?} slice {k}: {diff:e}");
            }
        }
    }

    #[test]
    fn energy_balance_check() {
        let g = TorusGrid::uniform(2, 8, 5, 1.0).unwrap();
        let rho = SpaceTimeField::zeros(&g, FieldKind::Scalar).map(|_| 2.0);
        let th = SpaceTimeField::zeros(&g, FieldKind::Scalar).map(|_| 1.0);
        let u = SpaceTimeField::zeros(&g, FieldKind::Vector).map(|_| 0.5);
        let rep = dissipative_energy_check(&rho, &th, &u, 0..5, 1e-12).unwrap();
        assert!(rep.pass && rep.defect == 0.0);
        let cooling = SpaceTimeField::from_fn(&g, FieldKind::Scalar, |t, _, o| o[0] = (-t).exp());
        let rep = dissipative_energy_check(&rho, &cooling, &u, 0..5, 1e-3).unwrap();
        assert!(!rep.pass);
        let zero = SpaceTimeField::zeros(&g, FieldKind::Scalar);
        assert!(dissipative_energy_check(&zero, &th, &u, 0..5, 1e-3).is_err());
    }
}
