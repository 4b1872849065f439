//! Iteration drivers: repeated improvement steps on a fixed window, and the
//! nested-interval recursion that removes the energy jump at a chosen time.

use std::io::Write;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, FieldKind, SpaceTimeField, SpaceTimeMask};
use crate::grid::TorusGrid;
use crate::oscillator::{oscillatory_step, LocalState, OscillatorParams, PerturbationPair};
use crate::relaxation::{
    default_tau_list, energy_functional_with, gap_field, kinetic_field, verify_subsolution_with,
    window_measure, BundleEval, CertificateReport, OperatorBundle, SubsolutionState, Tolerances,
};
use crate::spectral::{fourier_coefficients, ModeTable};

/// Default cutoff `|k|_inf <= 8` of [`weak_distance`].
pub const WEAK_MODES: i64 = 8;

/// `sum_k 2^{-|k|_1} |u_k - v_k|` over non-Nyquist modes with `|k|_inf <= 8`.
pub fn weak_distance(u: &Field, v: &Field) -> Result<f64> {
    weak_distance_modes(u, v, WEAK_MODES)
}

pub fn weak_distance_modes(u: &Field, v: &Field, kmax: i64) -> Result<f64> {
    u.check_compatible(v)?;
    if u.kind() != FieldKind::Vector {
        return Err(Error::KindMismatch {
            expected: FieldKind::Vector,
            found: u.kind(),
        });
    }
    let grid = u.grid();
    let dim = grid.dim();
    let diff: Vec<Vec<f64>> = (0..dim)
        .map(|a| {
            u.component(a)
                .iter()
                .zip(v.component(a))
                .map(|(x, y)| x - y)
                .collect()
        })
        .collect();
    if diff.iter().all(|c| c.iter().all(|&x| x == 0.0)) {
        return Ok(0.0);
    }
    let coeffs: Vec<Vec<Complex64>> = diff.iter().map(|c| fourier_coefficients(grid, c)).collect();
    let modes = ModeTable::new(grid);
    let mut d = 0.0;
    for m in 0..modes.len() {
        let k = modes.wavenumber(m);
        if modes.has_nyquist(m, grid) || k.iter().any(|x| x.abs() > kmax) {
            continue;
        }
        let l1: i64 = k.iter().map(|x| x.abs()).sum();
        let mag = coeffs.iter().map(|c| c[m].norm_sqr()).sum::<f64>().sqrt();
        d += 0.5f64.powi(l1 as i32) * mag;
    }
    Ok(d)
}

/// `sup_t d(w(t), 0)`.
pub fn sup_weak_norm(w: &SpaceTimeField) -> Result<f64> {
    let zero = Field::zeros(w.grid(), FieldKind::Vector);
    let mut best = 0.0_f64;
    for k in 0..w.nt() {
        if w.slice_data(k).iter().any(|&x| x != 0.0) {
            best = best.max(weak_distance(&w.slice(k), &zero)?);
        }
    }
    Ok(best)
}

/// Step counts, margins and oscillation indices of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterationSchedule {
    /// number of outer steps `K`
    pub steps: usize,
    /// `delta_k = delta0 * delta_ratio^k`
    pub delta0: f64,
    pub delta_ratio: f64,
    /// first oscillation index; doubled every step up to the cap
    pub n0: usize,
    /// cap on `n`; defaults to an eighth of the smallest axis node count
    pub n_cap: Option<usize>,
    /// first interval length of the recursion, `eps_k = eps0 2^-k`;
    /// defaults to the length of the initial interval
    pub eps0: Option<f64>,
    /// stop once `|I_D|` falls below this
    pub tol_energy: f64,
    /// halvings of a rejected pair before the step is given up
    pub retries: usize,
    pub tolerances: Tolerances,
    pub oscillator: OscillatorParams,
}

impl Default for IterationSchedule {
    fn default() -> Self {
        Self {
            steps: 8,
            delta0: 0.01,
            delta_ratio: 0.5,
            n0: 1,
            n_cap: None,
            eps0: None,
            tol_energy: 1e-8,
            retries: 6,
            tolerances: Tolerances::default(),
            oscillator: OscillatorParams::default(),
        }
    }
}

impl IterationSchedule {
    pub fn delta(&self, k: usize) -> f64 {
        self.delta0 * self.delta_ratio.powi(k as i32)
    }

    pub fn n_cap(&self, grid: &TorusGrid) -> usize {
        self.n_cap
            .unwrap_or_else(|| (grid.nx().iter().min().copied().unwrap_or(8) / 8).max(1))
    }

    /// `n_k = min(n0 2^k, cap)` for `k >= 1`.
    pub fn n(&self, k: usize, grid: &TorusGrid) -> usize {
        let cap = self.n_cap(grid);
        let mut n = self.n0.max(1);
        for _ in 1..k {
            n = (2 * n).min(cap);
        }
        n.min(cap)
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta0 > 0.0) || !(self.delta_ratio > 0.0 && self.delta_ratio <= 1.0) {
            return Err(Error::InvalidSchedule(
                "margins must be positive and non-increasing".into(),
            ));
        }
        if self.n0 == 0 {
            return Err(Error::InvalidSchedule(
                "oscillation index must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One row of an [`IterationTrace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    #[serde(rename = "I_D")]
    pub i_d: f64,
    pub jump_defect: Option<f64>,
    pub tau_k: Option<f64>,
    pub alpha_k: Option<f64>,
    pub lambda_hat: Option<f64>,
    pub wdist: Option<f64>,
    pub n: Option<usize>,
    /// factor applied to the generated pair before acceptance
    pub scale: Option<f64>,
    pub certificate_pass: bool,
    pub note: Option<String>,
}

impl IterationRecord {
    fn new(k: usize, i_d: f64) -> Self {
        Self {
            k,
            i_d,
            jump_defect: None,
            tau_k: None,
            alpha_k: None,
            lambda_hat: None,
            wdist: None,
            n: None,
            scale: None,
            certificate_pass: true,
            note: None,
        }
    }
}

/// Append-only per-step log of a driver run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    records: Vec<IterationRecord>,
}

pub const TRACE_HEADER: [&str; 7] = [
    "k",
    "I_D",
    "jump_defect",
    "tau_k",
    "alpha_k",
    "lambda_hat",
    "wdist",
];

impl IterationTrace {
    pub fn push(&mut self, r: IterationRecord) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn i_d(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.i_d).collect()
    }

    pub fn jump_defects(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.jump_defect).collect()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(TRACE_HEADER).map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.records {
            out.write_record([
                r.k.to_string(),
                format!("{:e}", r.i_d),
                opt(r.jump_defect),
                opt(r.tau_k),
                opt(r.alpha_k),
                opt(r.lambda_hat),
                opt(r.wdist),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.records).expect("trace serializes")
    }
}

/// Result of one improvement step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SubsolutionState,
    pub i_before: f64,
    pub i_after: f64,
    pub accepted: bool,
    pub scale: f64,
    pub pair: Option<PerturbationPair>,
    pub report: Option<CertificateReport>,
    pub warning: Option<String>,
}

fn constant_field(grid: &TorusGrid, value: f64) -> SpaceTimeField {
    SpaceTimeField::zeros(grid, FieldKind::Scalar).map(|_| value)
}

fn apply(s: &SubsolutionState, pair: &PerturbationPair) -> Result<SubsolutionState> {
    let mut out = s.clone();
    out.v.add_assign(&pair.w)?;
    out.f.add_assign(&pair.g)?;
    Ok(out)
}

/// One oscillatory improvement on `D`: perturb with `e~ = e - delta`, then
/// re-evaluate the bundle and halve the pair until the new state is
/// certified and `I_D` has not decreased.
pub fn improvement_step(
    s: &SubsolutionState,
    b: &dyn OperatorBundle,
    d_mask: &SpaceTimeMask,
    delta: f64,
    n: usize,
    schedule: &IterationSchedule,
) -> Result<StepOutcome> {
    let grid = s.grid().clone();
    let umask = d_mask.intersect(b.qmask())?;
    let eval = b.evaluate(&s.v)?;
    let i_before = energy_functional_with(&s.v, &eval, &umask)?;
    let unchanged = |accepted: bool, warning: Option<String>| StepOutcome {
        state: s.clone(),
        i_before,
        i_after: i_before,
        accepted,
        scale: 0.0,
        pair: None,
        report: None,
        warning,
    };
    if i_before.abs() <= schedule.tol_energy {
        return Ok(unchanged(true, None));
    }
    let state = LocalState::from_subsolution(
        &s.v,
        &s.f,
        &eval,
        &constant_field(&grid, delta),
        b.energy_bound(),
        &umask,
    )?;
    let pair = oscillatory_step(&state, n, &schedule.oscillator)?;
    if pair.is_zero() {
        return Ok(unchanged(
            false,
            pair.warning.clone().or(Some("empty perturbation".into())),
        ));
    }
    let taus = default_tau_list(grid.t_final());
    let mut scale = 1.0;
    for _ in 0..=schedule.retries {
        let p = pair.scaled(scale);
        let next = apply(s, &p)?;
        let eval2 = b.evaluate(&next.v)?;
        let report = verify_subsolution_with(&next, &eval2, &taus, &schedule.tolerances)?;
        let i_after = energy_functional_with(&next.v, &eval2, &umask)?;
        if report.pass && i_after >= i_before - 1e-12 * i_before.abs().max(1.0) {
            return Ok(StepOutcome {
                state: next,
                i_before,
                i_after,
                accepted: true,
                scale,
                pair: Some(p),
                report: Some(report),
                warning: None,
            });
        }
        log::debug!("improvement step rejected at scale {scale}; halving");
        scale *= 0.5;
    }
    Ok(unchanged(
        false,
        Some("step rejected after bundle re-evaluation".into()),
    ))
}

/// Final state, trace and halt reason of a driver run.
#[derive(Debug, Clone)]
pub struct DriverOutcome {
    pub state: SubsolutionState,
    pub trace: IterationTrace,
    /// `Some` if the run stopped on repeated rejections
    pub halted: Option<String>,
    /// selected time of the recursion
    pub tau: Option<f64>,
}

/// Apply up to `schedule.steps` improvement steps on `D`.
pub fn run_improvement(
    s: &SubsolutionState,
    b: &dyn OperatorBundle,
    d_mask: &SpaceTimeMask,
    schedule: &IterationSchedule,
) -> Result<DriverOutcome> {
    schedule.validate()?;
    let grid = s.grid().clone();
    let umask = d_mask.intersect(b.qmask())?;
    let measure = window_measure(&umask);
    let eval = b.evaluate(&s.v)?;
    let mut trace = IterationTrace::default();
    trace.push(IterationRecord::new(
        0,
        energy_functional_with(&s.v, &eval, &umask)?,
    ));
    let mut state = s.clone();
    let mut rejected = 0;
    for k in 1..=schedule.steps {
        let current = trace.last().unwrap().i_d;
        if current.abs() < schedule.tol_energy {
            break;
        }
        let n = schedule.n(k, &grid);
        let out = improvement_step(&state, b, d_mask, schedule.delta(k), n, schedule)?;
        let mut rec = IterationRecord::new(k, out.i_after);
        rec.n = Some(n);
        rec.scale = Some(out.scale);
        rec.note = out.warning.clone();
        if let Some(pair) = out.pair.as_ref().filter(|_| out.accepted) {
            rejected = 0;
            let gain = out.i_after - out.i_before;
            rec.lambda_hat = Some(gain * measure / (out.i_before * out.i_before));
            rec.wdist = Some(sup_weak_norm(&pair.w)?);
            rec.certificate_pass = out.report.as_ref().is_some_and(|r| r.pass);
            state = out.state;
        } else if !out.accepted {
            rejected += 1;
        }
        trace.push(rec);
        if rejected >= 2 {
            return Ok(DriverOutcome {
                state,
                trace,
                halted: Some(format!("step {k} rejected twice in a row")),
                tau: None,
            });
        }
    }
    Ok(DriverOutcome {
        state,
        trace,
        halted: None,
        tau: None,
    })
}

/// `int kinetic` and `int e` over the masked nodes of slice `k`.
fn slice_energies(
    kin: &SpaceTimeField,
    eval: &BundleEval,
    mask: &SpaceTimeMask,
    k: usize,
) -> (f64, f64) {
    let vol = mask.grid().cell_volume();
    let q = mask.slice(k);
    let mut a = 0.0;
    let mut e = 0.0;
    for ((kv, ev), &inside) in kin
        .slice_data(k)
        .iter()
        .zip(eval.energy.slice_data(k))
        .zip(q)
    {
        if inside {
            a += kv;
            e += ev;
        }
    }
    (a * vol, e * vol)
}

/// Earliest slice in `(lo, hi)` maximizing the slice kinetic energy.
fn argmax_slice(
    kin: &SpaceTimeField,
    eval: &BundleEval,
    mask: &SpaceTimeMask,
    lo: f64,
    hi: f64,
) -> Option<usize> {
    let grid = kin.grid();
    let mut best: Option<(usize, f64)> = None;
    for k in grid.slices_in(lo, hi) {
        let (a, _) = slice_energies(kin, eval, mask, k);
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((k, a));
        }
    }
    best.map(|(k, _)| k)
}

/// `sup_t |int w . u / r|` over slices.
fn sup_pairing(w: &SpaceTimeField, u: &SpaceTimeField, r: &SpaceTimeField) -> f64 {
    let grid = w.grid();
    let dim = grid.dim();
    let vol = grid.cell_volume();
    let mut best = 0.0_f64;
    for k in 0..grid.nt() {
        let ws = w.slice_data(k);
        if ws.iter().all(|&x| x == 0.0) {
            continue;
        }
        let us = u.slice_data(k);
        let s: f64 = r
            .slice_data(k)
            .iter()
            .enumerate()
            .map(|(node, rv)| {
                (0..dim)
                    .map(|a| ws[node * dim + a] * us[node * dim + a])
                    .sum::<f64>()
                    / rv
            })
            .sum();
        best = best.max((s * vol).abs());
    }
    best
}

/// Nested intervals `(a_k, b_k)` of length `eps_k = eps0 2^-k`, each
/// containing the previous selected time.
fn next_interval(prev: (f64, f64), tau: f64, eps: f64) -> (f64, f64) {
    let lo = prev.0.max(tau - eps);
    let hi = (prev.1 - eps).min(tau);
    let pad = 0.01 * (hi - lo);
    let a = (tau - 0.5 * eps).clamp(lo + pad, hi - pad);
    (a, a + eps)
}

/// Check that every `eps_k` leaves interior slices and that the nesting fits.
pub fn validate_recursion_schedule(
    grid: &TorusGrid,
    interval: (f64, f64),
    schedule: &IterationSchedule,
) -> Result<()> {
    schedule.validate()?;
    let (a0, b0) = interval;
    if !(0.0 < a0 && a0 < b0 && b0 < grid.t_final()) {
        return Err(Error::InvalidSchedule(format!(
            "interval ({a0}, {b0}) must lie inside (0, T)"
        )));
    }
    let eps0 = schedule.eps0.unwrap_or(b0 - a0);
    if !(eps0 > 0.0 && eps0 <= b0 - a0) {
        return Err(Error::InvalidSchedule(format!(
            "eps0 = {eps0} must lie in (0, {}]",
            b0 - a0
        )));
    }
    let two_dt = 2.0 * grid.dt();
    for k in 1..=schedule.steps {
        let eps = eps0 * 0.5f64.powi(k as i32);
        if eps <= two_dt {
            return Err(Error::InvalidSchedule(format!(
                "eps_{k} = {eps:e} does not exceed 2 dt = {two_dt:e}; refine the time grid or shorten the run"
            )));
        }
    }
    Ok(())
}

/// Nested-interval recursion: on each `(a_k, b_k)` add an oscillatory pair
/// with margin `delta_k (1 + 2^{-(k-1)})`, small in the weak distance and in
/// its pairing with all earlier iterates, and select `tau_k` as the slice of
/// largest kinetic energy.
pub fn run_jump_recursion(
    s0: &SubsolutionState,
    b: &dyn OperatorBundle,
    interval: (f64, f64),
    schedule: &IterationSchedule,
) -> Result<DriverOutcome> {
    let grid = s0.grid().clone();
    validate_recursion_schedule(&grid, interval, schedule)?;
    let eps0 = schedule.eps0.unwrap_or(interval.1 - interval.0);
    let q = b.qmask();
    let taus = default_tau_list(grid.t_final());
    let cap = schedule.n_cap(&grid);

    let mut state = s0.clone();
    let mut eval = b.evaluate(&state.v)?;
    let mut kin = kinetic_field(&state.v, &eval);
    let k0 = argmax_slice(&kin, &eval, q, interval.0, interval.1)
        .ok_or_else(|| Error::InvalidSchedule("initial interval holds no slice".into()))?;
    let mut tau = grid.time(k0);
    let (a, e) = slice_energies(&kin, &eval, q, k0);
    let d0 = SpaceTimeMask::time_window(&grid, interval.0, interval.1).intersect(q)?;
    let mut trace = IterationTrace::default();
    let mut rec = IterationRecord::new(0, energy_functional_with(&state.v, &eval, &d0)?);
    rec.jump_defect = Some((a - e).abs());
    rec.tau_k = Some(tau);
    trace.push(rec);

    // earlier iterates v_j / r[v_j] for the pairing bound
    let mut history: Vec<(SpaceTimeField, SpaceTimeField)> =
        vec![(state.v.clone(), eval.density.clone())];
    let mut prev = interval;
    let mut n = schedule.n0.max(1).min(cap);
    for k in 1..=schedule.steps {
        let eps = eps0 * 0.5f64.powi(k as i32);
        let (ak, bk) = next_interval(prev, tau, eps);
        let umask = SpaceTimeMask::time_window(&grid, ak, bk).intersect(q)?;
        let alpha = -energy_functional_with(&state.v, &eval, &umask)?;
        let prev_defect = trace
            .last()
            .and_then(|r| r.jump_defect)
            .unwrap_or(f64::INFINITY);
        if alpha <= 1e-14 * window_measure(&umask).max(1e-300) {
            let mut r = IterationRecord::new(k, -alpha);
            r.alpha_k = Some(alpha);
            r.tau_k = Some(tau);
            r.jump_defect = Some(prev_defect);
            r.note = Some("no energy gap left on the interval".into());
            trace.push(r);
            return Ok(DriverOutcome {
                state,
                trace,
                halted: None,
                tau: Some(tau),
            });
        }
        let delta = schedule.delta(k);
        let tilde = delta * (1.0 + 0.5f64.powi(k as i32 - 1));
        let required = delta * (1.0 + 0.5f64.powi(k as i32));
        let local = LocalState::from_subsolution(
            &state.v,
            &state.f,
            &eval,
            &constant_field(&grid, tilde),
            b.energy_bound(),
            &umask,
        )?;
        let bound = 0.5f64.powi(k as i32);

        // raise n until the weak-distance and pairing bounds hold, then
        // shrink the pair if they still fail at the cap
        let mut pair = oscillatory_step(&local, n, &schedule.oscillator)?;
        let measure = |p: &PerturbationPair| -> Result<(f64, f64)> {
            let wd = sup_weak_norm(&p.w)?;
            let pr = history
                .iter()
                .map(|(v, r)| sup_pairing(&p.w, v, r))
                .fold(0.0, f64::max);
            Ok((wd, pr))
        };
        let (mut wd, mut pr) = measure(&pair)?;
        while (wd >= bound || pr >= bound) && n < cap {
            n = (2 * n).min(cap);
            pair = oscillatory_step(&local, n, &schedule.oscillator)?;
            (wd, pr) = measure(&pair)?;
        }
        let mut scale = 1.0;
        let worst = wd.max(pr);
        if worst >= bound {
            scale = 0.9 * bound / worst;
        }

        let mut record = IterationRecord::new(k, 0.0);
        record.alpha_k = Some(alpha);
        record.n = Some(n);
        let before_max = grid
            .slices_in(ak, bk)
            .map(|j| slice_energies(&kin, &eval, q, j).0)
            .fold(f64::NEG_INFINITY, f64::max);

        let mut accepted = None;
        if !pair.is_zero() {
            for _ in 0..=schedule.retries {
                let p = pair.scaled(scale);
                let next = apply(&state, &p)?;
                let eval2 = b.evaluate(&next.v)?;
                let report = verify_subsolution_with(&next, &eval2, &taus, &schedule.tolerances)?;
                let gaps = gap_field(&next.v, &next.f, &eval2, &umask);
                let local_ok = gaps.data().iter().all(|&g| g > required);
                let kin2 = kinetic_field(&next.v, &eval2);
                let kt = argmax_slice(&kin2, &eval2, q, ak, bk).expect("interval holds slices");
                let (a2, e2) = slice_energies(&kin2, &eval2, q, kt);
                let defect = (a2 - e2).abs();
                if report.pass && local_ok && defect <= prev_defect + 1e-12 {
                    accepted = Some((next, eval2, kin2, kt, a2, defect, report.pass, p));
                    break;
                }
                scale *= 0.5;
            }
        }
        match accepted {
            Some((next, eval2, kin2, kt, a2, defect, pass, p)) => {
                state = next;
                eval = eval2;
                kin = kin2;
                tau = grid.time(kt);
                record.i_d = energy_functional_with(&state.v, &eval, &umask)?;
                record.jump_defect = Some(defect);
                record.tau_k = Some(tau);
                record.wdist = Some(wd * scale);
                record.scale = Some(scale);
                record.lambda_hat = Some((a2 - before_max) * eps * eps / (alpha * alpha));
                record.certificate_pass = pass;
                history.push((state.v.clone(), eval.density.clone()));
                drop(p);
            }
            None => {
                // keep the iterate; the interval still shrinks around tau
                let kt = argmax_slice(&kin, &eval, q, ak, bk).expect("interval holds slices");
                tau = grid.time(kt);
                let (a2, e2) = slice_energies(&kin, &eval, q, kt);
                record.i_d = -alpha;
                record.jump_defect = Some((a2 - e2).abs().min(prev_defect));
                record.tau_k = Some(tau);
                record.scale = Some(0.0);
                record.note = Some(
                    pair.warning
                        .clone()
                        .unwrap_or_else(|| "pair rejected".into()),
                );
            }
        }
        trace.push(record);
        prev = (ak, bk);
        n = (2 * n).min(cap);
    }
    Ok(DriverOutcome {
        state,
        trace,
        halted: None,
        tau: Some(tau),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relaxation::FixedBundle;
    use std::f64::consts::PI;

    #[test]
    fn weak_distance_axioms() {
        let g = TorusGrid::uniform(2, 16, 2, 1.0).unwrap();
        let mk = |s: f64| {
            Field::from_fn(&g, FieldKind::Vector, move |x, o| {
                o[0] = (PI * x[1] + s).sin();
                o[1] = s * (2.0 * PI * x[0]).cos();
            })
        };
        let (u, v, w) = (mk(0.1), mk(0.7), mk(1.9));
        assert_eq!(weak_distance(&u, &u).unwrap(), 0.0);
        let duv = weak_distance(&u, &v).unwrap();
        assert!((duv - weak_distance(&v, &u).unwrap()).abs() < 1e-15);
        assert!(weak_distance(&u, &w).unwrap() <= duv + weak_distance(&v, &w).unwrap() + 1e-15);
    }

    #[test]
    fn high_frequencies_are_weakly_small() {
        let g = TorusGrid::uniform(2, 64, 2, 1.0).unwrap();
        let zero = Field::zeros(&g, FieldKind::Vector);
        let d = |m: f64| {
            // unit L2 norm on a domain of area 4
            let w = Field::from_fn(&g, FieldKind::Vector, |x, o| {
                o[0] = 0.0;
                o[1] = 2f64.sqrt() / 2.0 * (m * PI * x[0]).sin();
            });
            weak_distance(&zero, &w).unwrap()
        };
        assert!(d(1.0) > 0.1);
        assert!(d(4.0) < d(1.0) / 4.0);
        assert!(d(12.0) < 1e-12);
    }

    #[test]
    fn schedule_indices() {
        let g = TorusGrid::uniform(2, 32, 4, 1.0).unwrap();
        let s = IterationSchedule::default();
        let ns: Vec<usize> = (1..=5).map(|k| s.n(k, &g)).collect();
        assert_eq!(ns, vec![1, 2, 4, 4, 4]);
        assert!((s.delta(2) - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn rejects_unresolved_schedule() {
        let g = TorusGrid::uniform(2, 8, 17, 16.0).unwrap();
        let s = IterationSchedule {
            steps: 5,
            ..Default::default()
        };
        assert!(matches!(
            validate_recursion_schedule(&g, (4.0, 12.0), &s),
            Err(Error::InvalidSchedule(_))
        ));
        let s = IterationSchedule {
            steps: 1,
            ..Default::default()
        };
        assert!(validate_recursion_schedule(&g, (4.0, 12.0), &s).is_ok());
    }

    #[test]
    fn trace_csv_has_declared_header() {
        let mut t = IterationTrace::default();
        let mut r = IterationRecord::new(0, -1.5);
        r.tau_k = Some(0.25);
        t.push(r);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "k,I_D,jump_defect,tau_k,alpha_k,lambda_hat,wdist"
        );
        assert_eq!(lines.next().unwrap(), "0,-1.5e0,,2.5e-1,,,");
    }

    fn desk(nt: usize, t: f64) -> (SubsolutionState, FixedBundle) {
        let g = TorusGrid::uniform(2, 16, nt, t).unwrap();
        let u0 = Field::zeros(&g, FieldKind::Vector);
        (
            SubsolutionState::stationary(&g, &u0).unwrap(),
            FixedBundle::constant(&g, 1.0, 1.0),
        )
    }

    #[test]
    fn zero_steps_is_identity() {
        let (s, b) = desk(8, 14.0);
        let d = SpaceTimeMask::time_window(s.grid(), 3.5, 10.5);
        let sched = IterationSchedule {
            steps: 0,
            ..Default::default()
        };
        let out = run_improvement(&s, &b, &d, &sched).unwrap();
        assert_eq!(out.state, s);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn improvement_raises_energy_and_keeps_endpoints() {
        let (s, b) = desk(12, 22.0);
        let d = SpaceTimeMask::time_window(s.grid(), 5.5, 16.5);
        let sched = IterationSchedule {
            steps: 3,
            ..Default::default()
        };
        let out = run_improvement(&s, &b, &d, &sched).unwrap();
        assert!(out.halted.is_none());
        let ids = out.trace.i_d();
        assert!(ids.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(ids.last().unwrap() > &(0.6 * ids[0]));
        assert_eq!(out.state.v.slice_data(0), s.v.slice_data(0));
        assert_eq!(out.state.v.slice_data(11), s.v.slice_data(11));
    }

    #[test]
    fn fixed_point_when_energy_is_saturated() {
        let (s, _) = desk(15, 14.0);
        let b = FixedBundle::constant(s.grid(), 1.0, 0.0);
        let d = SpaceTimeMask::time_window(s.grid(), 3.5, 10.5);
        let out = improvement_step(&s, &b, &d, 0.01, 1, &IterationSchedule::default()).unwrap();
        assert_eq!(out.i_before, 0.0);
        assert_eq!(out.state, s);
        let rec = run_jump_recursion(
            &s,
            &b,
            (3.5, 10.5),
            &IterationSchedule {
                steps: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rec.state, s);
        assert!(rec.tau.unwrap() > 3.5 && rec.tau.unwrap() < 10.5);
    }

    #[test]
    fn recursion_reduces_the_jump() {
        let (s, b) = desk(65, 64.0);
        let sched = IterationSchedule {
            steps: 3,
            ..Default::default()
        };
        let out = run_jump_recursion(&s, &b, (16.0, 48.0), &sched).unwrap();
        let j = out.trace.jump_defects();
        assert!(j.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(j.last().unwrap() < &(0.5 * j[0]));
        let tau = out.tau.unwrap();
        assert!(tau > 16.0 && tau < 48.0);
        for k in (0..65).filter(|&k| !(16.0 < k as f64 && (k as f64) < 48.0)) {
            assert_eq!(out.state.v.slice_data(k), s.v.slice_data(k));
        }
        for r in &out.trace.records()[1..] {
            if let Some(wd) = r.wdist {
                assert!(wd < 0.5f64.powi(r.k as i32));
            }
        }
    }
}
