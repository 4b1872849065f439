//! Oscillatory perturbation pairs `(w, G)` with `dt w + div G = 0`,
//! `div w = 0`, supported on a union of time cells inside `U`.
//!
//! A cell is a run of consecutive slices `[k_lo, k_hi]`. Inside it
//! `w = mu chi(t) a f(n pi xi . x)` with an integer lattice direction `xi`,
//! a unit vector `a` orthogonal to `xi` and a smoothed square wave `f` made
//! of odd harmonics. Such a `w` is exactly divergence-free for the spectral
//! derivative. The flux is
//!
//! `G = gamma mu^2 chi^2 / r_bar (a (x) a - I/N) + G_corr`
//!
//! where the first term is spatially constant and `G_corr` inverts the
//! divergence of the centred time difference of `w`, so the discrete
//! linear system holds to round-off. `w` vanishes on the first and last
//! slice of every cell, hence on slices `0` and `nt - 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::field::{Field, FieldKind, SpaceTimeField, SpaceTimeMask};
use crate::grid::TorusGrid;
use crate::relaxation::BundleEval;
use crate::tensor::{deviatoric_self, lambda_max, outer_self, DevMat};
use crate::torus::{inverse_divergence, spacetime_divergence_residual};

/// The state `(h, r, H, e)` on which perturbations are built, with the
/// region `U` where they may live.
#[derive(Debug, Clone)]
pub struct LocalState {
    pub h: SpaceTimeField,
    pub r: SpaceTimeField,
    pub hh: SpaceTimeField,
    pub e: SpaceTimeField,
    pub e_bar: f64,
    pub umask: SpaceTimeMask,
}

impl LocalState {
    /// Constant `h`, `r`, `e` with `H = 0` on the given region.
    pub fn constant(umask: &SpaceTimeMask, h: &[f64], r: f64, e: f64) -> Result<Self> {
        let grid = umask.grid();
        if h.len() != grid.dim() {
            return Err(Error::InvalidArgument(
                "vector length must equal the dimension".into(),
            ));
        }
        let hf = Field::constant(grid, FieldKind::Vector, h)?;
        Ok(Self {
            h: SpaceTimeField::constant_in_time(grid, &hf)?,
            r: SpaceTimeField::zeros(grid, FieldKind::Scalar).map(|_| r),
            hh: SpaceTimeField::zeros(grid, FieldKind::DevTensor),
            e: SpaceTimeField::zeros(grid, FieldKind::Scalar).map(|_| e),
            e_bar: e,
            umask: umask.clone(),
        })
    }

    /// `h~ = v + h[v]`, `r~ = r[v]`, `H~ = F - H[v]`, `e~ = e[v] - delta`.
    pub fn from_subsolution(
        v: &SpaceTimeField,
        f: &SpaceTimeField,
        eval: &BundleEval,
        delta: &SpaceTimeField,
        e_bar: f64,
        umask: &SpaceTimeMask,
    ) -> Result<Self> {
        let mut h = v.clone();
        h.add_assign(&eval.shift)?;
        let mut hh = f.clone();
        let mut neg = eval.stress.clone();
        neg.scale(-1.0);
        hh.add_assign(&neg)?;
        let mut e = eval.energy.clone();
        let mut d = delta.clone();
        d.scale(-1.0);
        e.add_assign(&d)?;
        Ok(Self {
            h,
            r: eval.density.clone(),
            hh,
            e,
            e_bar,
            umask: umask.clone(),
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        self.h.grid()
    }

    fn gap_at(&self, k: usize, node: usize, w: Option<&[f64]>, g: Option<&[f64]>) -> f64 {
        let dim = self.grid().dim();
        let mut vh = [0.0; 3];
        vh[..dim].copy_from_slice(self.h.value(k, node));
        if let Some(w) = w {
            for a in 0..dim {
                vh[a] += w[a];
            }
        }
        let r = self.r.value(k, node)[0];
        let mut stress = DevMat::from_components(dim, self.hh.value(k, node));
        if let Some(g) = g {
            stress = stress.add(&DevMat::from_components(dim, g));
        }
        let m = outer_self(&vh[..dim]).scaled(1.0 / r).sub(&stress.to_sym());
        self.e.value(k, node)[0] - 0.5 * dim as f64 * lambda_max(&m)
    }

    /// `e~ - N/2 lambda_max[h~ (x) h~ / r~ - H~]` at every node.
    pub fn margin_field(&self) -> SpaceTimeField {
        let grid = self.grid();
        let nn = grid.node_count();
        let data: Vec<f64> = (0..grid.nt())
            .into_par_iter()
            .flat_map_iter(|k| (0..nn).map(move |node| self.gap_at(k, node, None, None)))
            .collect();
        SpaceTimeField::from_vec(grid, FieldKind::Scalar, data).expect("shape")
    }

    /// Smallest margin over the masked nodes of slice `k`.
    fn slice_margin(&self, k: usize) -> f64 {
        let nn = self.grid().node_count();
        (0..nn)
            .filter(|&node| self.umask.get(k, node))
            .map(|node| self.gap_at(k, node, None, None))
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest perturbed gap over the masked nodes of slice `k`.
    fn perturbed_slice_gap(&self, k: usize, w: &[f64], g: &[f64]) -> f64 {
        let grid = self.grid();
        let dim = grid.dim();
        let nc = FieldKind::DevTensor.components(dim);
        (0..grid.node_count())
            .filter(|&node| self.umask.get(k, node))
            .map(|node| {
                self.gap_at(
                    k,
                    node,
                    Some(&w[node * dim..(node + 1) * dim]),
                    Some(&g[node * nc..(node + 1) * nc]),
                )
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Kinetic gain `sum (|h+w|^2 - |h|^2) / (2 r)` on slice `k`, per unit volume weight.
    fn slice_gain(&self, k: usize, w: &[f64]) -> f64 {
        let dim = self.grid().dim();
        let h = self.h.slice_data(k);
        let r = self.r.slice_data(k);
        let mut s = 0.0;
        for (node, rv) in r.iter().enumerate() {
            if !self.umask.get(k, node) {
                continue;
            }
            let mut d = 0.0;
            for a in 0..dim {
                let i = node * dim + a;
                d += w[i] * (2.0 * h[i] + w[i]);
            }
            s += 0.5 * d / rv;
        }
        s
    }

    fn harmonic_mean_r(&self, k: usize) -> f64 {
        let r = self.r.slice_data(k);
        r.len() as f64 / r.iter().map(|x| 1.0 / x).sum::<f64>()
    }
}

/// Tuning knobs of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OscillatorParams {
    /// initial amplitude in units of `sqrt(2 r_min margin)` of the cell
    pub amplitude: f64,
    /// slices per cell, at least 3
    pub cell_slices: usize,
    /// factor applied at each backtracking step
    pub backtrack: f64,
    /// the amplitude may shrink by at most `2^-max_halvings`
    pub max_halvings: u32,
    /// weight of the isotropizing flux term
    pub gamma: f64,
    /// bisection steps refining an amplitude found by backtracking
    pub refine: u32,
}

impl Default for OscillatorParams {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            cell_slices: 3,
            backtrack: 0.5f64.powf(0.25),
            max_halvings: 40,
            gamma: 1.0,
            refine: 16,
        }
    }
}

impl OscillatorParams {
    fn max_steps(&self) -> u32 {
        (self.max_halvings as f64 * 2f64.ln() / -self.backtrack.ln()).ceil() as u32
    }

    fn validate(&self) -> Result<()> {
        if self.cell_slices < 3 {
            return Err(Error::InvalidArgument(
                "cells need at least 3 slices".into(),
            ));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidArgument(
                "backtracking factor must lie in (0, 1)".into(),
            ));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "amplitude must be finite and >= 0, got {}",
                self.amplitude
            )));
        }
        Ok(())
    }
}

/// A run of slices `[k_lo, k_hi]` spanning the whole torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub k_lo: usize,
    pub k_hi: usize,
}

impl Cell {
    pub fn width(&self) -> usize {
        self.k_hi - self.k_lo + 1
    }

    pub fn center(&self) -> usize {
        (self.k_lo + self.k_hi) / 2
    }

    /// Time profile: zero at both ends, peak one.
    fn chi(&self) -> Vec<f64> {
        let w = self.width();
        (0..w)
            .map(|j| {
                (std::f64::consts::PI * j as f64 / (w - 1) as f64)
                    .sin()
                    .powi(2)
            })
            .map(|c| if c < 1e-15 { 0.0 } else { c })
            .collect()
    }
}

/// Oscillation direction: wave vector `xi` and polarization `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub xi: Vec<i64>,
    pub a: Vec<f64>,
}

/// Lattice directions `xi` in `{e_i, e_i +- e_j}` with unit `a` orthogonal
/// to `xi` from the same family. The first entry has `a = e_1`.
pub fn candidate_directions(dim: usize) -> Vec<Direction> {
    let unit = |i: usize| {
        let mut v = vec![0i64; dim];
        v[i] = 1;
        v
    };
    let mut lattice: Vec<Vec<i64>> = (0..dim).map(unit).collect();
    for i in 0..dim {
        for j in i + 1..dim {
            for s in [1, -1] {
                let mut v = unit(i);
                v[j] = s;
                lattice.push(v);
            }
        }
    }
    let polar: Vec<Vec<f64>> = lattice
        .iter()
        .map(|v| {
            let n = (v.iter().map(|x| x * x).sum::<i64>() as f64).sqrt();
            v.iter().map(|&x| x as f64 / n).collect()
        })
        .collect();
    let mut out = Vec::new();
    for a in &polar {
        for xi in &lattice {
            let dot: f64 = a.iter().zip(xi).map(|(p, &q)| p * q as f64).sum();
            if dot.abs() < 1e-14 {
                out.push(Direction {
                    xi: xi.clone(),
                    a: a.clone(),
                });
            }
        }
    }
    out
}

/// Largest odd harmonic count usable at frequency `n` along `xi`.
pub fn harmonic_count(grid: &TorusGrid, xi: &[i64], n: usize) -> Option<usize> {
    let reach = (0..grid.dim())
        .filter(|&a| xi[a] != 0)
        .map(|a| grid.max_wavenumber(a) / (n * xi[a].unsigned_abs() as usize))
        .min()?;
    if reach == 0 {
        return None;
    }
    Some(if reach % 2 == 0 { reach - 1 } else { reach })
}

/// One spatial building block: profile, its divergence inverse and the
/// mean square of the profile.
#[derive(Debug, Clone)]
struct Mode {
    dir: Direction,
    harmonics: usize,
    /// `a f(n pi xi . x)`, vector
    profile: Field,
    /// trace-free `C` with `div C = a f`
    corr: Field,
    /// `a (x) a - I/N`
    iso: DevMat,
}

impl Mode {
    fn build(grid: &TorusGrid, dir: &Direction, n: usize) -> Result<Option<Self>> {
        let Some(harmonics) = harmonic_count(grid, &dir.xi, n) else {
            return Ok(None);
        };
        let dim = grid.dim();
        let pi = std::f64::consts::PI;
        let sigma = |j: usize| {
            let z = pi * j as f64 / (harmonics + 1) as f64;
            z.sin() / z
        };
        let scalar: Vec<f64> = (0..grid.node_count())
            .map(|node| {
                let x = grid.node_position(node);
                let s = n as f64
                    * pi
                    * x.iter()
                        .zip(&dir.xi)
                        .map(|(p, &q)| p * q as f64)
                        .sum::<f64>();
                (1..=harmonics)
                    .step_by(2)
                    .map(|j| sigma(j) * (j as f64 * s).sin() / j as f64)
                    .sum()
            })
            .collect();
        let peak = scalar.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return Ok(None);
        }
        let mut data = Vec::with_capacity(scalar.len() * dim);
        for v in &scalar {
            data.extend(dir.a.iter().map(|a| a * v / peak));
        }
        let profile = Field::from_vec(grid, FieldKind::Vector, data)?;
        let corr = inverse_divergence(&profile)?;
        let iso = deviatoric_self(&dir.a);
        Ok(Some(Self {
            dir: dir.clone(),
            harmonics,
            profile,
            corr,
            iso,
        }))
    }
}

/// Per-cell outcome of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell: Cell,
    pub direction: Direction,
    pub harmonics: usize,
    pub amplitude: f64,
    pub backtracks: u32,
    pub exhausted: bool,
}

/// A perturbation pair with its support and construction record.
#[derive(Debug, Clone)]
pub struct PerturbationPair {
    pub w: SpaceTimeField,
    pub g: SpaceTimeField,
    pub support: SpaceTimeMask,
    pub n: usize,
    pub cells: Vec<CellRecord>,
    /// `int_U |w|^2 / r~`
    pub energy: f64,
    pub warning: Option<String>,
}

impl PerturbationPair {
    pub fn zero(grid: &TorusGrid, n: usize) -> Self {
        Self {
            w: SpaceTimeField::zeros(grid, FieldKind::Vector),
            g: SpaceTimeField::zeros(grid, FieldKind::DevTensor),
            support: SpaceTimeMask::empty(grid),
            n,
            cells: Vec::new(),
            energy: 0.0,
            warning: None,
        }
    }

    /// `(s w, s G)`. Stays admissible for `0 <= s <= 1` by convexity of
    /// the relaxed set.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.w.scale(s);
        out.g.scale(s);
        out.energy *= s * s;
        for c in &mut out.cells {
            c.amplitude *= s;
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.w.max_abs() == 0.0 && self.g.max_abs() == 0.0
    }

    /// `{n, cells, amplitudes, residuals, energy}`.
    pub fn sidecar(&self) -> Result<serde_json::Value> {
        let (r_mom, r_div) = spacetime_divergence_residual(&self.w, &self.g)?;
        Ok(json!({
            "n": self.n,
            "cells": self.cells,
            "amplitudes": self.cells.iter().map(|c| c.amplitude).collect::<Vec<_>>(),
            "residuals": { "r_mom": r_mom, "r_div": r_div },
            "energy": self.energy,
            "warning": self.warning,
        }))
    }
}

/// `int |w|^2 / r` over the masked interior slices.
pub fn weighted_energy(w: &SpaceTimeField, r: &SpaceTimeField, mask: &SpaceTimeMask) -> f64 {
    let grid = w.grid();
    let dim = grid.dim();
    let nt = grid.nt();
    let mut s = 0.0;
    for k in 1..nt.saturating_sub(1) {
        let ws = w.slice_data(k);
        for (node, rv) in r.slice_data(k).iter().enumerate() {
            if mask.get(k, node) {
                s += ws[node * dim..(node + 1) * dim]
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    / rv;
            }
        }
    }
    s * grid.cell_volume() * grid.dt()
}

#[derive(Debug, Clone)]
struct Plan {
    cell: Cell,
    mode: usize,
    chi: Vec<f64>,
    mu: f64,
    steps: u32,
    exhausted: bool,
}

struct Generator<'a> {
    state: &'a LocalState,
    params: OscillatorParams,
    modes: Vec<Mode>,
}

impl<'a> Generator<'a> {
    fn new(state: &'a LocalState, n: usize, params: OscillatorParams) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "oscillation index must be >= 1".into(),
            ));
        }
        params.validate()?;
        let grid = state.grid();
        let modes: Vec<Mode> = candidate_directions(grid.dim())
            .par_iter()
            .map(|d| Mode::build(grid, d, n))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        if modes.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "frequency {n} exceeds the grid resolution"
            )));
        }
        Ok(Self {
            state,
            params,
            modes,
        })
    }

    /// Add the contribution of `plan` on slice `k` to `(w, g)`.
    fn add_slice(&self, plan: &Plan, k: usize, w: &mut [f64], g: &mut [f64]) {
        if plan.mu == 0.0 || k < plan.cell.k_lo || k > plan.cell.k_hi {
            return;
        }
        let grid = self.state.grid();
        let dim = grid.dim();
        let nc = FieldKind::DevTensor.components(dim);
        let mode = &self.modes[plan.mode];
        let j = k - plan.cell.k_lo;
        let chi = |i: isize| {
            if i < 0 {
                0.0
            } else {
                plan.chi.get(i as usize).copied().unwrap_or(0.0)
            }
        };
        let cw = plan.mu * chi(j as isize);
        if cw != 0.0 {
            for (o, p) in w.iter_mut().zip(mode.profile.data()) {
                *o += cw * p;
            }
        }
        // div G_corr = -dt w (centred)
        let dchi = (chi(j as isize + 1) - chi(j as isize - 1)) / (2.0 * grid.dt());
        let cc = -plan.mu * dchi;
        if cc != 0.0 {
            for (o, p) in g.iter_mut().zip(mode.corr.data()) {
                *o += cc * p;
            }
        }
        let ci = self.params.gamma * cw * cw / self.state.harmonic_mean_r(k);
        if ci != 0.0 {
            let iso = mode.iso.components();
            for chunk in g.chunks_exact_mut(nc) {
                for (o, s) in chunk.iter_mut().zip(iso) {
                    *o += ci * s;
                }
            }
        }
    }

    fn slice_pair(&self, plans: &[Plan], k: usize) -> (Vec<f64>, Vec<f64>) {
        let grid = self.state.grid();
        let nn = grid.node_count();
        let mut w = vec![0.0; nn * grid.dim()];
        let mut g = vec![0.0; nn * FieldKind::DevTensor.components(grid.dim())];
        for p in plans {
            self.add_slice(p, k, &mut w, &mut g);
        }
        (w, g)
    }

    fn initial_mu(&self, cell: Cell) -> f64 {
        let st = self.state;
        let margin = (cell.k_lo..=cell.k_hi)
            .map(|k| st.slice_margin(k))
            .fold(f64::INFINITY, f64::min);
        if !(margin > 0.0) {
            return 0.0;
        }
        let r_min = (cell.k_lo..=cell.k_hi)
            .flat_map(|k| st.r.slice_data(k).iter().copied())
            .fold(f64::INFINITY, f64::min);
        self.params.amplitude * (2.0 * r_min * margin).sqrt()
    }

    /// Gain of a single plan if it keeps the gap positive on its cell.
    fn admissible(&self, plan: &Plan) -> Option<f64> {
        let mut gain = 0.0;
        for k in plan.cell.k_lo..=plan.cell.k_hi {
            let (w, g) = self.slice_pair(std::slice::from_ref(plan), k);
            if self.state.perturbed_slice_gap(k, &w, &g) <= 0.0 {
                return None;
            }
            gain += self.state.slice_gain(k, &w);
        }
        Some(gain)
    }

    /// Backtrack a single cell in isolation, then bisect towards the last
    /// rejected amplitude; returns the plan and its gain.
    fn fit_alone(&self, cell: Cell, mode: usize, mu0: f64) -> (Plan, f64) {
        let mut plan = Plan {
            cell,
            mode,
            chi: cell.chi(),
            mu: mu0,
            steps: 0,
            exhausted: mu0 == 0.0,
        };
        let max = self.params.max_steps();
        while !plan.exhausted {
            if let Some(mut gain) = self.admissible(&plan) {
                if plan.steps > 0 {
                    let mut hi = plan.mu / self.params.backtrack;
                    for _ in 0..self.params.refine {
                        let mut trial = plan.clone();
                        trial.mu = 0.5 * (plan.mu + hi);
                        match self.admissible(&trial) {
                            Some(g) => {
                                plan = trial;
                                gain = g;
                            }
                            None => hi = trial.mu,
                        }
                    }
                }
                return (plan, gain);
            }
            plan.steps += 1;
            plan.mu *= self.params.backtrack;
            if plan.steps > max {
                plan.mu = 0.0;
                plan.exhausted = true;
            }
        }
        (plan, 0.0)
    }

    /// Mode whose polarization is most orthogonal to the mean of `h~` on
    /// the centre slice; the first candidate (`a = e_1`) when `h~` vanishes.
    fn preferred_mode(&self, cell: Cell) -> usize {
        let h = self.state.h.slice(cell.center()).mean();
        let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0;
        }
        let score = |m: &Mode| {
            m.dir
                .a
                .iter()
                .zip(&h)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .abs()
                / norm
        };
        let mut best = 0;
        for (i, m) in self.modes.iter().enumerate() {
            if score(m) < score(&self.modes[best]) - 1e-12 {
                best = i;
            }
        }
        best
    }

    fn plan_cell(&self, cell: Cell) -> Plan {
        let mu0 = self.initial_mu(cell);
        let preferred = self.preferred_mode(cell);
        let (mut best, mut best_gain) = self.fit_alone(cell, preferred, mu0);
        for m in (0..self.modes.len()).filter(|&m| m != preferred) {
            let (plan, gain) = self.fit_alone(cell, m, mu0);
            if gain > best_gain * (1.0 + 1e-9) + 1e-300 {
                best = plan;
                best_gain = gain;
            }
        }
        if best_gain <= 0.0 {
            best.mu = 0.0;
        }
        best
    }

    fn fixed_plan(&self, cell: Cell, amplitude: f64) -> Plan {
        let mode = self.preferred_mode(cell);
        Plan {
            cell,
            mode,
            chi: cell.chi(),
            mu: amplitude,
            steps: 0,
            exhausted: false,
        }
    }

    /// Shrink cells touching slices where the joint pair breaks the gap,
    /// in steps finer than the single-cell backtracking.
    fn settle(&self, plans: &mut [Plan]) {
        let nt = self.state.grid().nt();
        let fine = self.params.backtrack.powf(0.125);
        let max = 8 * self.params.max_steps();
        let mut shrinks = vec![0u32; plans.len()];
        loop {
            let touched: Vec<usize> = (0..nt)
                .filter(|&k| {
                    plans
                        .iter()
                        .any(|p| p.mu > 0.0 && p.cell.k_lo <= k && k <= p.cell.k_hi)
                })
                .collect();
            let bad: Vec<usize> = touched
                .par_iter()
                .filter(|&&k| {
                    let (w, g) = self.slice_pair(plans, k);
                    self.state.perturbed_slice_gap(k, &w, &g) <= 0.0
                })
                .copied()
                .collect();
            if bad.is_empty() {
                // a shrunk amplitude can turn the cross term against the gain
                let mut dropped = false;
                for p in plans.iter_mut().filter(|p| p.mu > 0.0) {
                    let gain: f64 = (p.cell.k_lo..=p.cell.k_hi)
                        .map(|k| {
                            self.state
                                .slice_gain(k, &self.slice_pair(std::slice::from_ref(p), k).0)
                        })
                        .sum();
                    if gain <= 0.0 {
                        p.mu = 0.0;
                        dropped = true;
                    }
                }
                if !dropped {
                    return;
                }
                continue;
            }
            for (p, count) in plans
                .iter_mut()
                .zip(shrinks.iter_mut())
                .filter(|(p, _)| p.mu > 0.0)
            {
                if bad.iter().any(|&k| p.cell.k_lo <= k && k <= p.cell.k_hi) {
                    *count += 1;
                    p.mu *= fine;
                    if *count > max {
                        p.mu = 0.0;
                        p.exhausted = true;
                    }
                }
            }
        }
    }

    fn assemble(&self, plans: &[Plan], n: usize) -> Result<PerturbationPair> {
        let grid = self.state.grid();
        let mut w = SpaceTimeField::zeros(grid, FieldKind::Vector);
        let mut g = SpaceTimeField::zeros(grid, FieldKind::DevTensor);
        let mut support = SpaceTimeMask::empty(grid);
        let slices: Vec<(usize, Vec<f64>, Vec<f64>)> = (0..grid.nt())
            .into_par_iter()
            .filter(|&k| {
                plans
                    .iter()
                    .any(|p| p.mu > 0.0 && p.cell.k_lo <= k && k <= p.cell.k_hi)
            })
            .map(|k| {
                let (ws, gs) = self.slice_pair(plans, k);
                (k, ws, gs)
            })
            .collect();
        for (k, ws, gs) in slices {
            w.slice_data_mut(k).copy_from_slice(&ws);
            g.slice_data_mut(k).copy_from_slice(&gs);
            for node in 0..grid.node_count() {
                support.set(k, node, true);
            }
        }
        let cells: Vec<CellRecord> = plans
            .iter()
            .map(|p| CellRecord {
                cell: p.cell,
                direction: self.modes[p.mode].dir.clone(),
                harmonics: self.modes[p.mode].harmonics,
                amplitude: p.mu,
                backtracks: p.steps,
                exhausted: p.exhausted,
            })
            .collect();
        let energy = weighted_energy(&w, &self.state.r, &self.state.umask);
        let warning = if !plans.is_empty() && plans.iter().all(|p| p.exhausted) {
            Some("amplitude backtracking exhausted on every cell; the margin is too thin to oscillate".to_string())
        } else if plans.is_empty() {
            Some("no admissible cell inside U".to_string())
        } else {
            None
        };
        if let Some(msg) = &warning {
            log::warn!("{msg}");
        }
        Ok(PerturbationPair {
            w,
            g,
            support,
            n,
            cells,
            energy,
            warning,
        })
    }
}

/// Cells of `cell_slices` slices tiling the interior slices that `U`
/// covers completely; consecutive cells share their end slices.
pub fn tile_cells(umask: &SpaceTimeMask, cell_slices: usize) -> Vec<Cell> {
    let grid = umask.grid();
    let nt = grid.nt();
    let eligible: Vec<bool> = (0..nt)
        .map(|k| k > 0 && k + 1 < nt && umask.slice_is_full(k))
        .collect();
    let stride = cell_slices.saturating_sub(2).max(1);
    let mut cells = Vec::new();
    let mut k = 0;
    while k < nt {
        if !eligible[k] {
            k += 1;
            continue;
        }
        let start = k;
        while k < nt && eligible[k] {
            k += 1;
        }
        let end = k - 1;
        let mut lo = start;
        while lo + cell_slices - 1 <= end {
            cells.push(Cell {
                k_lo: lo,
                k_hi: lo + cell_slices - 1,
            });
            lo += stride;
        }
    }
    cells
}

/// A single-cell pair at a fixed amplitude, polarized orthogonally to
/// `h~` at the cell centre.
pub fn plane_wave_pair(
    state: &LocalState,
    cell: Cell,
    n: usize,
    amplitude: f64,
) -> Result<PerturbationPair> {
    let grid = state.grid();
    if !amplitude.is_finite() || amplitude < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "amplitude must be finite and >= 0, got {amplitude}"
        )));
    }
    if cell.k_lo == 0 || cell.k_hi + 1 >= grid.nt() || cell.width() < 3 {
        return Err(Error::InvalidArgument(
            "cell must have >= 3 slices strictly inside (0, T)".into(),
        ));
    }
    if !(cell.k_lo..=cell.k_hi).all(|k| state.umask.slice_is_full(k)) {
        return Err(Error::InvalidArgument("cell lies outside U".into()));
    }
    let gen = Generator::new(state, n, OscillatorParams::default())?;
    let plan = gen.fixed_plan(cell, amplitude);
    let mut pair = gen.assemble(std::slice::from_ref(&plan), n)?;
    if amplitude == 0.0 {
        pair.warning = None;
    }
    Ok(pair)
}

/// Tile `U` with cells, pick a direction per cell by measured energy gain
/// and backtrack the amplitudes until the perturbed gap is positive at
/// every node of `U`.
pub fn oscillatory_step(
    state: &LocalState,
    n: usize,
    params: &OscillatorParams,
) -> Result<PerturbationPair> {
    let gen = Generator::new(state, n, *params)?;
    let cells = tile_cells(&state.umask, params.cell_slices);
    let mut plans: Vec<Plan> = cells.par_iter().map(|&c| gen.plan_cell(c)).collect();
    gen.settle(&mut plans);
    gen.assemble(&plans, n)
}

/// Per-`n` record of [`measure_lambda`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSample {
    pub n: usize,
    pub energy: f64,
    pub ratio: f64,
}

/// `min_n int_U |w_n|^2 / r~  /  int_U (e~ - |h~|^2 / (2 r~))^2`.
pub fn measure_lambda(
    state: &LocalState,
    n_list: &[usize],
    params: &OscillatorParams,
) -> Result<(f64, Vec<LambdaSample>)> {
    let grid = state.grid();
    let dim = grid.dim();
    let nt = grid.nt();
    let mut denom = 0.0;
    for k in 1..nt.saturating_sub(1) {
        let h = state.h.slice_data(k);
        for (node, (&r, &e)) in state
            .r
            .slice_data(k)
            .iter()
            .zip(state.e.slice_data(k))
            .enumerate()
        {
            if state.umask.get(k, node) {
                let ke = 0.5
                    * h[node * dim..(node + 1) * dim]
                        .iter()
                        .map(|x| x * x)
                        .sum::<f64>()
                    / r;
                denom += (e - ke).powi(2);
            }
        }
    }
    denom *= grid.cell_volume() * grid.dt();
    if !(denom > 1e-300) || state.margin_field().data().iter().all(|&m| m <= 0.0) {
        return Err(Error::Degenerate(
            "energy equals the kinetic energy on U".into(),
        ));
    }
    if n_list.is_empty() {
        return Err(Error::InvalidArgument("empty frequency list".into()));
    }
    let mut samples = Vec::new();
    for &n in n_list {
        let pair = oscillatory_step(state, n, params)?;
        samples.push(LambdaSample {
            n,
            energy: pair.energy,
            ratio: pair.energy / denom,
        });
    }
    let lam = samples
        .iter()
        .map(|s| s.ratio)
        .fold(f64::INFINITY, f64::min);
    Ok((lam, samples))
}

/// Largest `|<w_a, phi>|` over components `a` and the lowest modes
/// `phi in {sin(pi x_i), cos(pi x_i)}`, integrated over space-time.
pub fn lowest_mode_pairing(w: &SpaceTimeField) -> f64 {
    let grid = w.grid();
    let dim = grid.dim();
    let pi = std::f64::consts::PI;
    let mut best = 0.0_f64;
    for axis in 0..dim {
        for trig in [f64::sin, f64::cos] {
            let phi: Vec<f64> = (0..grid.node_count())
                .map(|node| trig(pi * grid.node_position(node)[axis]))
                .collect();
            for a in 0..dim {
                let mut s = 0.0;
                for k in 0..grid.nt() {
                    let ws = w.slice_data(k);
                    s += phi
                        .iter()
                        .enumerate()
                        .map(|(node, p)| ws[node * dim + a] * p)
                        .sum::<f64>();
                }
                best = best.max((s * grid.cell_volume() * grid.dt()).abs());
            }
        }
    }
    best
}
