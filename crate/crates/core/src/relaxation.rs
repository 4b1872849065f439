//! Subsolution certificates, weak-solution checks, energy functionals and
//! the causality probe for operator bundles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::field::{Field, FieldKind, SpaceTimeField, SpaceTimeMask};
use crate::grid::TorusGrid;
use crate::tensor::{equality_tensor, relaxed_gap_unchecked, DevMat, PointState};
use crate::torus::slicewise_residual;

/// Outputs of an operator bundle evaluated on some `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleEval {
    /// `h[v]`, vector
    pub shift: SpaceTimeField,
    /// `r[v]`, scalar
    pub density: SpaceTimeField,
    /// `e[v]`, scalar
    pub energy: SpaceTimeField,
    /// `H[v]`, trace-free tensor
    pub stress: SpaceTimeField,
}

impl BundleEval {
    /// `h = 0`, `H = 0`, constant `r` and `e`.
    pub fn constant(grid: &TorusGrid, r: f64, e: f64) -> Self {
        Self {
            shift: SpaceTimeField::zeros(grid, FieldKind::Vector),
            density: SpaceTimeField::zeros(grid, FieldKind::Scalar).map(|_| r),
            energy: SpaceTimeField::zeros(grid, FieldKind::Scalar).map(|_| e),
            stress: SpaceTimeField::zeros(grid, FieldKind::DevTensor),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        self.shift.grid()
    }

    fn check_shapes(&self, grid: &TorusGrid) -> Result<()> {
        let parts = [
            (&self.shift, FieldKind::Vector),
            (&self.density, FieldKind::Scalar),
            (&self.energy, FieldKind::Scalar),
            (&self.stress, FieldKind::DevTensor),
        ];
        for (f, kind) in parts {
            f.expect_kind(kind)?;
            if f.grid() != grid {
                return Err(Error::GridMismatch);
            }
        }
        Ok(())
    }

    /// Check `r > 0` and `0 <= e <= e_bar` on the mask.
    pub fn validate(&self, mask: &SpaceTimeMask, e_bar: f64) -> Result<()> {
        let grid = mask.grid();
        self.check_shapes(grid)?;
        for k in 0..grid.nt() {
            let q = mask.slice(k);
            let r = self.density.slice_data(k);
            let e = self.energy.slice_data(k);
            for node in 0..grid.node_count() {
                if !q[node] {
                    continue;
                }
                if !(r[node] > 0.0) {
                    return Err(Error::NonPositiveDensity {
                        value: r[node],
                        slice: Some(k),
                        node: Some(node),
                    });
                }
                if !(e[node] >= 0.0) || e[node] > e_bar {
                    return Err(Error::BundleViolation(format!(
                        "energy {:e} outside [0, {e_bar:e}] at slice {k}, node {node}",
                        e[node]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Pointwise state at one node.
    pub fn point(
        &self,
        v: &SpaceTimeField,
        f: &SpaceTimeField,
        k: usize,
        node: usize,
    ) -> PointState {
        let dim = v.grid().dim();
        let mut vh = [0.0; 3];
        for ((o, a), b) in vh
            .iter_mut()
            .zip(v.value(k, node))
            .zip(self.shift.value(k, node))
        {
            *o = a + b;
        }
        PointState::new(
            &vh[..dim],
            self.density.value(k, node)[0],
            self.energy.value(k, node)[0],
            DevMat::from_components(dim, f.value(k, node)),
            DevMat::from_components(dim, self.stress.value(k, node)),
        )
    }
}

/// Causal evaluators `h, r, e, H` with a declared mask `Q` and energy bound.
///
/// Continuity in the weak topology is an analytic hypothesis of each bundle
/// and is not checked; causality and bounds are.
pub trait OperatorBundle {
    fn evaluate(&self, v: &SpaceTimeField) -> Result<BundleEval>;
    fn qmask(&self) -> &SpaceTimeMask;
    /// Upper bound `e_bar` on the energy operator.
    fn energy_bound(&self) -> f64;
}

/// A bundle whose outputs do not depend on `v`.
#[derive(Debug, Clone)]
pub struct FixedBundle {
    pub eval: BundleEval,
    pub mask: SpaceTimeMask,
    pub e_bar: f64,
}

impl FixedBundle {
    pub fn new(eval: BundleEval, mask: SpaceTimeMask) -> Self {
        let e_bar = eval.energy.data().iter().fold(0.0_f64, |m, v| m.max(*v));
        Self { eval, mask, e_bar }
    }

    /// `h = 0, H = 0` with constant `r`, `e` on the full domain.
    pub fn constant(grid: &TorusGrid, r: f64, e: f64) -> Self {
        Self::new(BundleEval::constant(grid, r, e), SpaceTimeMask::full(grid))
    }
}

impl OperatorBundle for FixedBundle {
    fn evaluate(&self, v: &SpaceTimeField) -> Result<BundleEval> {
        if v.grid() != self.mask.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(self.eval.clone())
    }

    fn qmask(&self) -> &SpaceTimeMask {
        &self.mask
    }

    fn energy_bound(&self) -> f64 {
        self.e_bar
    }
}

/// A bundle given by a closure; used for synthetic operators.
pub struct FnBundle<F> {
    pub f: F,
    pub mask: SpaceTimeMask,
    pub e_bar: f64,
}

impl<F: Fn(&SpaceTimeField) -> Result<BundleEval>> OperatorBundle for FnBundle<F> {
    fn evaluate(&self, v: &SpaceTimeField) -> Result<BundleEval> {
        (self.f)(v)
    }

    fn qmask(&self) -> &SpaceTimeMask {
        &self.mask
    }

    fn energy_bound(&self) -> f64 {
        self.e_bar
    }
}

/// A pair `(v, F)` with endpoint data and the mask `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsolutionState {
    pub v: SpaceTimeField,
    pub f: SpaceTimeField,
    pub u0: Field,
    pub ut: Field,
    pub qmask: SpaceTimeMask,
}

impl SubsolutionState {
    /// Endpoint data are read off the first and last slices of `v`.
    pub fn new(v: SpaceTimeField, f: SpaceTimeField, qmask: SpaceTimeMask) -> Result<Self> {
        v.expect_kind(FieldKind::Vector)?;
        f.expect_kind(FieldKind::DevTensor)?;
        if v.grid() != f.grid() || v.grid() != qmask.grid() {
            return Err(Error::GridMismatch);
        }
        let u0 = v.slice(0);
        let ut = v.slice(v.nt() - 1);
        Ok(Self {
            v,
            f,
            u0,
            ut,
            qmask,
        })
    }

    /// `v` constant in time equal to `u0`, zero flux, full mask.
    pub fn stationary(grid: &TorusGrid, u0: &Field) -> Result<Self> {
        let v = SpaceTimeField::constant_in_time(grid, u0)?;
        let f = SpaceTimeField::zeros(grid, FieldKind::DevTensor);
        Self::new(v, f, SpaceTimeMask::full(grid))
    }

    pub fn grid(&self) -> &TorusGrid {
        self.v.grid()
    }

    pub fn endpoints_match(&self) -> bool {
        let nt = self.v.nt();
        self.v.slice_data(0) == self.u0.data() && self.v.slice_data(nt - 1) == self.ut.data()
    }

    /// Every slice of `Q` covers at least `1 - eps_q` of the nodes.
    pub fn coverage_ok(&self, eps_q: f64) -> bool {
        (0..self.grid().nt()).all(|k| self.qmask.slice_fraction(k) >= 1.0 - eps_q)
    }

    /// Endpoint equality and the per-slice coverage of `Q`.
    pub fn check_invariants(&self, eps_q: f64) -> Result<()> {
        if !self.endpoints_match() {
            return Err(Error::InvalidState(
                "endpoint slices differ from u0/uT".into(),
            ));
        }
        if let Some(k) = (0..self.grid().nt()).find(|&k| self.qmask.slice_fraction(k) < 1.0 - eps_q)
        {
            return Err(Error::InvalidState(format!(
                "mask covers {:.4} of slice {k}, below 1 - {eps_q}",
                self.qmask.slice_fraction(k)
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub residual: f64,
    pub energy: f64,
    /// allowed uncovered fraction of each slice
    pub eps_q: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            residual: 1e-8,
            energy: 1e-8,
            eps_q: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauGap {
    pub tau: f64,
    pub value: f64,
}

/// Outcome of a certificate or weak-solution check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub pass: bool,
    pub r_mom: f64,
    pub r_div: f64,
    pub gap_min: Vec<TauGap>,
    pub e2_defect: f64,
    pub details: serde_json::Value,
}

pub type CertificateReport = VerificationReport;
pub type SolutionReport = VerificationReport;

impl VerificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// `T 2^{-1}, ..., T 2^{-8}`.
pub fn default_tau_list(t_final: f64) -> Vec<f64> {
    (1..=8).map(|i| t_final * 0.5f64.powi(i)).collect()
}

/// Relaxed gap at every node; `+inf` outside the mask and on the endpoint
/// slices, which lie outside the open time interval.
pub fn gap_field(
    v: &SpaceTimeField,
    f: &SpaceTimeField,
    eval: &BundleEval,
    mask: &SpaceTimeMask,
) -> SpaceTimeField {
    let grid = v.grid();
    let nn = grid.node_count();
    let nt = grid.nt();
    let data: Vec<f64> = (0..nt)
        .into_par_iter()
        .flat_map_iter(|k| {
            (0..nn).map(move |node| {
                if k == 0 || k == nt - 1 || !mask.get(k, node) {
                    f64::INFINITY
                } else {
                    relaxed_gap_unchecked(&eval.point(v, f, k, node))
                }
            })
        })
        .collect();
    SpaceTimeField::from_vec(grid, FieldKind::Scalar, data).expect("shape")
}

/// `|v + h|^2 / (2 r)` at every node.
pub fn kinetic_field(v: &SpaceTimeField, eval: &BundleEval) -> SpaceTimeField {
    let grid = v.grid();
    let dim = grid.dim();
    let nn = grid.node_count();
    let mut out = SpaceTimeField::zeros(grid, FieldKind::Scalar);
    for k in 0..grid.nt() {
        let vs = v.slice_data(k);
        let hs = eval.shift.slice_data(k);
        let rs = eval.density.slice_data(k);
        let o = out.slice_data_mut(k);
        for node in 0..nn {
            let s: f64 = (0..dim)
                .map(|a| (vs[node * dim + a] + hs[node * dim + a]).powi(2))
                .sum();
            o[node] = 0.5 * s / rs[node];
        }
    }
    out
}

fn check_density_on(eval: &BundleEval, mask: &SpaceTimeMask) -> Result<()> {
    let grid = mask.grid();
    for k in 0..grid.nt() {
        for (node, (&r, &q)) in eval
            .density
            .slice_data(k)
            .iter()
            .zip(mask.slice(k))
            .enumerate()
        {
            if q && !(r > 0.0) {
                return Err(Error::NonPositiveDensity {
                    value: r,
                    slice: Some(k),
                    node: Some(node),
                });
            }
        }
    }
    Ok(())
}

/// Largest `|kinetic - e|` over masked interior nodes.
fn e2_defect(v: &SpaceTimeField, eval: &BundleEval, mask: &SpaceTimeMask) -> f64 {
    let kin = kinetic_field(v, eval);
    let nt = v.nt();
    let mut worst = 0.0_f64;
    for k in 1..nt.saturating_sub(1) {
        for (node, (a, b)) in kin
            .slice_data(k)
            .iter()
            .zip(eval.energy.slice_data(k))
            .enumerate()
        {
            if mask.get(k, node) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Check the subsolution certificate: the linear system, the endpoint data
/// and strict positivity of the relaxed gap after each `tau`.
pub fn verify_subsolution(
    s: &SubsolutionState,
    b: &dyn OperatorBundle,
    taus: &[f64],
    tol: &Tolerances,
) -> Result<CertificateReport> {
    let eval = b.evaluate(&s.v)?;
    verify_subsolution_with(s, &eval, taus, tol)
}

/// As [`verify_subsolution`] with a bundle evaluation already at hand.
pub fn verify_subsolution_with(
    s: &SubsolutionState,
    eval: &BundleEval,
    taus: &[f64],
    tol: &Tolerances,
) -> Result<CertificateReport> {
    let grid = s.grid();
    eval.check_shapes(grid)?;
    let t_final = grid.t_final();
    if let Some(&bad) = taus.iter().find(|&&t| !(t > 0.0 && t < t_final)) {
        return Err(Error::InvalidArgument(format!(
            "tau {bad} outside (0, {t_final})"
        )));
    }
    check_density_on(eval, &s.qmask)?;

    let res = slicewise_residual(&s.v, &s.f)?;
    let (r_mom, r_div) = (res.r_mom(), res.r_div());
    let residual_ok = r_mom < tol.residual && r_div < tol.residual;
    let endpoints_ok = s.endpoints_match();
    let coverage_ok = s.coverage_ok(tol.eps_q);

    let gaps = gap_field(&s.v, &s.f, eval, &s.qmask);
    let nn = grid.node_count();
    let slice_min: Vec<f64> = (0..grid.nt())
        .map(|k| {
            gaps.slice_data(k)
                .iter()
                .fold(f64::INFINITY, |m, v| m.min(*v))
        })
        .collect();
    let gap_min: Vec<TauGap> = taus
        .iter()
        .map(|&tau| {
            let value = (0..grid.nt())
                .filter(|&k| grid.time(k) > tau)
                .map(|k| slice_min[k])
                .fold(f64::INFINITY, f64::min);
            TauGap { tau, value }
        })
        .collect();
    let gaps_ok = gap_min.iter().all(|g| g.value > 0.0);

    let mut worst = (0, 0, f64::INFINITY);
    for k in 0..grid.nt() {
        for node in 0..nn {
            let g = gaps.slice_data(k)[node];
            if g < worst.2 {
                worst = (k, node, g);
            }
        }
    }
    let worst_json = if worst.2.is_finite() {
        json!({
            "slice": worst.0,
            "t": grid.time(worst.0),
            "node": worst.1,
            "x": grid.node_position(worst.1),
            "gap": worst.2,
        })
    } else {
        serde_json::Value::Null
    };
    let slice_min_json: Vec<Option<f64>> = slice_min
        .iter()
        .map(|v| v.is_finite().then_some(*v))
        .collect();
    let pass = residual_ok && endpoints_ok && gaps_ok && coverage_ok;
    Ok(VerificationReport {
        pass,
        r_mom,
        r_div,
        gap_min,
        e2_defect: e2_defect(&s.v, eval, &s.qmask),
        details: json!({
            "kind": "subsolution",
            "residual_ok": residual_ok,
            "endpoints_ok": endpoints_ok,
            "coverage_ok": coverage_ok,
            "gaps_ok": gaps_ok,
            "worst": worst_json,
            "slice_min_gap": slice_min_json,
            "tolerances": tol,
        }),
    })
}

/// Flux closed by the equality tensor: `F* = (u+h) (x) (u+h) / r - |u+h|^2/(N r) I + H`
/// on the mask, `H` elsewhere.
pub fn closed_flux(
    u: &SpaceTimeField,
    eval: &BundleEval,
    mask: &SpaceTimeMask,
) -> Result<SpaceTimeField> {
    let grid = u.grid();
    let dim = grid.dim();
    let mut out = eval.stress.clone();
    let nc = FieldKind::DevTensor.components(dim);
    for k in 0..grid.nt() {
        for node in 0..grid.node_count() {
            if !mask.get(k, node) {
                continue;
            }
            let mut vh = [0.0; 3];
            for ((o, a), b) in vh
                .iter_mut()
                .zip(u.value(k, node))
                .zip(eval.shift.value(k, node))
            {
                *o = a + b;
            }
            let r = eval.density.value(k, node)[0];
            let eq = equality_tensor(&vh[..dim], r).map_err(|_| Error::NonPositiveDensity {
                value: r,
                slice: Some(k),
                node: Some(node),
            })?;
            let off = node * nc;
            let slot = &mut out.slice_data_mut(k)[off..off + nc];
            for (s, e) in slot.iter_mut().zip(eq.components()) {
                *s += e;
            }
        }
    }
    Ok(out)
}

/// Check that `u` is a weak solution: close the flux with the equality
/// tensor and measure the linear residuals and the energy defect.
pub fn verify_weak_solution(
    u: &SpaceTimeField,
    b: &dyn OperatorBundle,
    tol: &Tolerances,
) -> Result<SolutionReport> {
    u.expect_kind(FieldKind::Vector)?;
    let eval = b.evaluate(u)?;
    eval.check_shapes(u.grid())?;
    let mask = b.qmask();
    check_density_on(&eval, mask)?;
    let flux = closed_flux(u, &eval, mask)?;
    let res = slicewise_residual(u, &flux)?;
    let (r_mom, r_div) = (res.r_mom(), res.r_div());
    let defect = e2_defect(u, &eval, mask);
    let pass = r_mom < tol.residual && r_div < tol.residual && defect < tol.energy;
    Ok(VerificationReport {
        pass,
        r_mom,
        r_div,
        gap_min: Vec::new(),
        e2_defect: defect,
        details: json!({ "kind": "weak_solution", "tolerances": tol }),
    })
}

/// Region of integration for [`energy_functional`].
#[derive(Debug, Clone)]
pub enum Window<'a> {
    /// slices strictly inside `(lo, hi)`
    Time(f64, f64),
    Mask(&'a SpaceTimeMask),
}

impl Window<'_> {
    pub fn to_mask(&self, grid: &TorusGrid) -> Result<SpaceTimeMask> {
        match self {
            Window::Time(lo, hi) => Ok(SpaceTimeMask::time_window(grid, *lo, *hi)),
            Window::Mask(m) => {
                if m.grid() != grid {
                    return Err(Error::GridMismatch);
                }
                Ok((*m).clone())
            }
        }
    }
}

/// `sum (|v+h|^2/(2r) - e) dt dx` over the window intersected with `Q`.
pub fn energy_functional(
    v: &SpaceTimeField,
    b: &dyn OperatorBundle,
    window: Window<'_>,
) -> Result<f64> {
    let eval = b.evaluate(v)?;
    let mask = window.to_mask(v.grid())?.intersect(b.qmask())?;
    energy_functional_with(v, &eval, &mask)
}

/// [`energy_functional`] with a bundle evaluation already at hand. Endpoint
/// slices never contribute.
pub fn energy_functional_with(
    v: &SpaceTimeField,
    eval: &BundleEval,
    mask: &SpaceTimeMask,
) -> Result<f64> {
    let grid = v.grid();
    let nt = grid.nt();
    let interior = |k: usize| k > 0 && k + 1 < nt;
    if !(0..nt).any(|k| interior(k) && !mask.slice_is_empty(k)) {
        return Err(Error::InvalidArgument("empty integration window".into()));
    }
    let kin = kinetic_field(v, eval);
    let mut total = 0.0;
    for k in (0..nt).filter(|&k| interior(k)) {
        let q = mask.slice(k);
        let s: f64 = kin
            .slice_data(k)
            .iter()
            .zip(eval.energy.slice_data(k))
            .zip(q)
            .filter(|(_, &inside)| inside)
            .map(|((a, e), _)| a - e)
            .sum();
        total += s;
    }
    Ok(total * grid.cell_volume() * grid.dt())
}

/// Discrete measure of a window as used by [`energy_functional_with`].
pub fn window_measure(mask: &SpaceTimeMask) -> f64 {
    let grid = mask.grid();
    let nt = grid.nt();
    let count: usize = (1..nt.saturating_sub(1)).map(|k| mask.slice_count(k)).sum();
    count as f64 * grid.cell_volume() * grid.dt()
}

/// Evaluate `b` on `v` and on `v + perturbation` (the perturbation applied
/// only on slices after `tau`) and report whether all four outputs agree on
/// slices up to `tau`.
pub fn causality_probe(
    b: &dyn OperatorBundle,
    v: &SpaceTimeField,
    tau: f64,
    perturbation: &SpaceTimeField,
) -> Result<bool> {
    v.check_compatible(perturbation)?;
    let grid = v.grid();
    let mut w = v.clone();
    for k in (0..grid.nt()).filter(|&k| grid.time(k) > tau) {
        let p = perturbation.slice_data(k).to_vec();
        w.slice_data_mut(k)
            .iter_mut()
            .zip(p)
            .for_each(|(a, d)| *a += d);
    }
    let base = b.evaluate(v)?;
    let moved = b.evaluate(&w)?;
    let eps = 1e-12 * grid.dt();
    let same = |a: &SpaceTimeField, c: &SpaceTimeField| {
        (0..grid.nt())
            .filter(|&k| grid.time(k) <= tau + eps)
            .all(|k| {
                a.slice_data(k)
                    .iter()
                    .zip(c.slice_data(k))
                    .all(|(x, y)| (x - y).abs() <= 1e-10 * x.abs().max(1.0))
            })
    };
    Ok(same(&base.shift, &moved.shift)
        && same(&base.density, &moved.density)
        && same(&base.energy, &moved.energy)
        && same(&base.stress, &moved.stress))
}
