//! Acceptance suite: one PASS/FAIL line per criterion with its runtime.
#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cil_core::driver::{run_improvement, run_jump_recursion, IterationSchedule};
use cil_core::models::{
    euler_fourier_bundle, euler_fourier_setup, momentum_from_potential, original_momentum_residual,
    quantum_coefficients, reformulated_momentum_residual, temperature_solve, z_for_margin,
    Capillarity, DensityMode, EulerFourierBundle, EulerFourierData, GammaLaw, QuantumData,
    Substeps,
};
use cil_core::oscillator::{
    lowest_mode_pairing, measure_lambda, oscillatory_step, LocalState, OscillatorParams,
};
use cil_core::relaxation::{
    causality_probe, default_tau_list, verify_subsolution, BundleEval, FnBundle, OperatorBundle,
    SubsolutionState, Tolerances,
};
use cil_core::spectral::{divergence, gradient, l2_inner, laplacian, tensor_divergence};
use cil_core::tensor::{equality_tensor, lambda_max, outer_self, DevMat, PointState, SymMat};
use cil_core::torus::{
    helmholtz_decompose, lame_pressure_tensor, poisson_solve, spacetime_divergence_residual,
};
use cil_core::{Field, FieldKind, SpaceTimeField, SpaceTimeMask, TorusGrid};

type Check = Result<String, String>;
type Criterion = (&'static str, f64, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Debug>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| format!("{e:?}"))
}

// ---------------------------------------------------------------- 1

/// Number of eigenvalues of `a` below `x`, from the pivots of `a - x I`.
fn count_below(a: &SymMat, x: f64) -> usize {
    let n = a.dim();
    let mut m = [[0.0; 3]; 3];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a.get(i, j) - if i == j { x } else { 0.0 };
        }
    }
    let mut count = 0;
    for p in 0..n {
        if m[p][p] == 0.0 {
            m[p][p] = -1e-300;
        }
        if m[p][p] < 0.0 {
            count += 1;
        }
        for i in p + 1..n {
            let l = m[i][p] / m[p][p];
            for j in p + 1..n {
                m[i][j] -= l * m[p][j];
            }
        }
    }
    count
}

fn oracle_lambda_max(a: &SymMat) -> f64 {
    let n = a.dim();
    let bound: f64 = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| a.get(i, j).abs())
        .sum::<f64>()
        + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    while hi - lo > 1e-14 * bound {
        let mid = 0.5 * (lo + hi);
        if count_below(a, mid) == n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn random_dev(rng: &mut ChaCha8Rng, dim: usize) -> DevMat {
    let n = dim * (dim + 1) / 2 - 1;
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    DevMat::from_components(dim, &c)
}

fn algebraic_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst_violation = f64::INFINITY;
    let mut worst_equality = 0.0_f64;
    for i in 0..100_000 {
        let dim = 2 + i % 2;
        let vh: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let r = rng.gen_range(0.5..4.0);
        let ke = 0.5 * vh.iter().map(|x| x * x).sum::<f64>() / r;
        let f = random_dev(&mut rng, dim);
        let h = random_dev(&mut rng, dim);
        let bound =
            0.5 * dim as f64 * lambda_max(&PointState::new(&vh, r, 0.0, f, h).relaxed_matrix());
        worst_violation = worst_violation.min(bound - ke);
        let feq = h.add(&ok(equality_tensor(&vh, r))?);
        let eq =
            0.5 * dim as f64 * lambda_max(&PointState::new(&vh, r, 0.0, feq, h).relaxed_matrix());
        worst_equality = worst_equality.max((eq - ke).abs());
    }
    ensure(worst_violation >= -1e-9, || {
        format!("convex bound violated by {worst_violation:e}")
    })?;
    ensure(worst_equality <= 1e-12, || {
        format!("equality defect {worst_equality:e}")
    })?;
    let mut worst_eig = 0.0_f64;
    for i in 0..10_000 {
        let dim = 2 + i % 2;
        let packed: Vec<f64> = (0..dim * (dim + 1) / 2)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let a = SymMat::from_packed(dim, &packed);
        worst_eig = worst_eig.max((lambda_max(&a) - oracle_lambda_max(&a)).abs());
    }
    ensure(worst_eig <= 1e-10, || {
        format!("lambda_max off the bisection oracle by {worst_eig:e}")
    })?;
    Ok(format!(
        "min violation {worst_violation:.2e}, equality defect {worst_equality:.2e}, eigenvalue error {worst_eig:.2e}"
    ))
}

// ---------------------------------------------------------------- 2

fn band_limited(rng: &mut ChaCha8Rng, grid: &TorusGrid, kmax: i64, with_mean: bool) -> Field {
    let mut modes = Vec::new();
    for k1 in -kmax..=kmax {
        for k2 in 0..=kmax {
            if k2 == 0 && k1 < 0 || (!with_mean && k1 == 0 && k2 == 0) {
                continue;
            }
            let w = 1.0 / (1.0 + (k1 * k1 + k2 * k2) as f64).sqrt();
            modes.push((
                k1 as f64,
                k2 as f64,
                w * rng.gen_range(-1.0..1.0),
                w * rng.gen_range(-1.0..1.0),
            ));
        }
    }
    Field::scalar_fn(grid, |x| {
        modes
            .iter()
            .map(|(a, b, c, s)| {
                let ph = PI * (a * x[0] + b * x[1]);
                c * ph.cos() + s * ph.sin()
            })
            .sum()
    })
}

fn spectral_calculus() -> Check {
    let grid = TorusGrid::uniform(2, 64, 2, 1.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = [0.0_f64; 4];
    for _ in 0..2 {
        let comps = vec![
            band_limited(&mut rng, &grid, 16, true).into_data(),
            band_limited(&mut rng, &grid, 16, true).into_data(),
        ];
        let m = ok(Field::from_components(&grid, FieldKind::Vector, &comps))?;
        let (v, phi) = ok(helmholtz_decompose(&m))?;
        let gphi = ok(gradient(&phi))?;
        let mut back = v.clone();
        ok(back.axpy(1.0, &gphi))?;
        worst[0] = worst[0]
            .max(ok(back.max_abs_diff(&m))?)
            .max(ok(divergence(&v))?.max_abs());
        worst[1] = worst[1].max(ok(l2_inner(&v, &gphi))?.abs());

        let pi = band_limited(&mut rng, &grid, 16, false);
        let hp = ok(lame_pressure_tensor(&pi))?;
        let mut res = ok(tensor_divergence(&hp))?;
        ok(res.axpy(-1.0, &ok(gradient(&pi))?))?;
        worst[2] = worst[2].max(res.max_abs());

        let rhs = band_limited(&mut rng, &grid, 16, false);
        let sol = ok(poisson_solve(&rhs))?;
        worst[3] = worst[3].max(ok(ok(laplacian(&sol))?.max_abs_diff(&rhs))?);
    }
    let names = [
        "Helmholtz reconstruction",
        "orthogonality",
        "Lame residual",
        "Poisson check",
    ];
    for (n, w) in names.iter().zip(worst) {
        ensure(w < 1e-10, || format!("{n} {w:e}"))?;
    }
    Ok(names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", "))
}

// ---------------------------------------------------------------- 3

fn oscillator_contract() -> Check {
    let t = 31.0;
    let grid = ok(TorusGrid::uniform(2, 64, 32, t))?;
    let umask = SpaceTimeMask::time_window(&grid, 0.0, t);
    let state = ok(LocalState::constant(&umask, &[0.0, 0.0], 1.0, 1.0))?;
    let params = OscillatorParams::default();
    let ns = [1, 2, 4, 8, 16];
    let mut pairings = Vec::new();
    for &n in &ns {
        let pair = ok(oscillatory_step(&state, n, &params))?;
        ensure(pair.support.is_subset_of(&umask), || {
            format!("n={n}: support leaves U")
        })?;
        for k in 0..grid.nt() {
            let inside = pair.support.slice(k);
            let (w, g) = (pair.w.slice_data(k), pair.g.slice_data(k));
            for (node, &s) in inside.iter().enumerate() {
                if !s {
                    ensure(w[node * 2..node * 2 + 2].iter().all(|&x| x == 0.0), || {
                        format!("n={n}: w outside support")
                    })?;
                    ensure(g[node * 2..node * 2 + 2].iter().all(|&x| x == 0.0), || {
                        format!("n={n}: G outside support")
                    })?;
                }
            }
        }
        let (r_mom, r_div) = ok(spacetime_divergence_residual(&pair.w, &pair.g))?;
        ensure(r_mom < 1e-8 && r_div < 1e-8, || {
            format!("n={n}: residuals {r_mom:e}, {r_div:e}")
        })?;
        let mut min_gap = f64::INFINITY;
        for k in umask.active_slices() {
            for node in 0..grid.node_count() {
                let m = outer_self(pair.w.value(k, node))
                    .sub(&DevMat::from_components(2, pair.g.value(k, node)).to_sym());
                min_gap = min_gap.min(1.0 - lambda_max(&m));
            }
        }
        ensure(min_gap > 0.0, || {
            format!("n={n}: perturbed gap {min_gap:e}")
        })?;
        pairings.push(lowest_mode_pairing(&pair.w));
    }
    let (lam, _) = ok(measure_lambda(&state, &ns, &params))?;
    ensure(lam > 0.005, || format!("lambda {lam}"))?;
    let drop = pairings[0] / pairings[4].max(1e-300);
    ensure(pairings[0] >= 10.0 * pairings[4], || {
        format!("lowest-mode pairing {:e} -> {:e}", pairings[0], pairings[4])
    })?;
    Ok(format!(
        "lambda {lam:.3}, pairing n=1 {:.2e} n=16 {:.2e} (ratio {drop:.1e})",
        pairings[0], pairings[4]
    ))
}

// ---------------------------------------------------------------- 4, 5

fn constant_preset(nt: usize, t: f64) -> Result<(SubsolutionState, EulerFourierBundle), String> {
    let g = ok(TorusGrid::uniform(2, 32, nt, t))?;
    let rho0 = ok(Field::constant(&g, FieldKind::Scalar, &[2.0]))?;
    let (rho, phi) = ok(euler_fourier_setup(&g, &rho0, &DensityMode::Constant))?;
    let theta0 = ok(Field::constant(&g, FieldKind::Scalar, &[1.0]))?;
    let d = ok(EulerFourierData::new(rho, phi, theta0, vec![0.0; nt]))?;
    let s = ok(SubsolutionState::stationary(
        &g,
        &Field::zeros(&g, FieldKind::Vector),
    ))?;
    let z = ok(z_for_margin(&d, &s, 0.5, Substeps::Auto))?;
    Ok((s, euler_fourier_bundle(ok(d.with_z(z))?, Substeps::Auto)))
}

fn improvement_convergence() -> Check {
    let t = 30.0;
    let (s, b) = constant_preset(16, t)?;
    let grid = s.grid().clone();
    let tol = Tolerances::default();
    ensure(
        ok(verify_subsolution(&s, &b, &default_tau_list(t), &tol))?.pass,
        || "initial certificate fails".into(),
    )?;
    let d = SpaceTimeMask::time_window(&grid, t / 4.0, 3.0 * t / 4.0);
    let sched = IterationSchedule {
        steps: 8,
        ..Default::default()
    };
    let out = ok(run_improvement(&s, &b, &d, &sched))?;
    ensure(out.halted.is_none(), || {
        format!("driver halted: {:?}", out.halted)
    })?;
    let ids = out.trace.i_d();
    ensure(ids.windows(2).all(|w| w[1] >= w[0] - 1e-12), || {
        format!("I_D not monotone: {ids:?}")
    })?;
    let reduction = 1.0 - ids.last().unwrap().abs() / ids[0].abs();
    ensure(reduction >= 0.5, || {
        format!("|I_D| reduced by {:.1}%", 100.0 * reduction)
    })?;
    let last = grid.nt() - 1;
    ensure(
        out.state.v.slice_data(0) == s.v.slice_data(0)
            && out.state.v.slice_data(last) == s.v.slice_data(last),
        || "endpoint slices changed".into(),
    )?;
    ensure(
        out.trace.records().iter().all(|r| r.certificate_pass),
        || "an intermediate certificate failed".into(),
    )?;
    ensure(
        ok(verify_subsolution(
            &out.state,
            &b,
            &default_tau_list(t),
            &tol,
        ))?
        .pass,
        || "final certificate fails".into(),
    )?;
    Ok(format!(
        "I_D {:.3} -> {:.3} ({:.1}% reduction) over {} steps",
        ids[0],
        ids.last().unwrap(),
        100.0 * reduction,
        ids.len() - 1
    ))
}

fn jump_reduction() -> Check {
    let t = 256.0;
    let (s, b) = constant_preset(257, t)?;
    let grid = s.grid().clone();
    let (a0, b0) = (t / 4.0, 3.0 * t / 4.0);
    let sched = IterationSchedule {
        steps: 5,
        ..Default::default()
    };
    let out = ok(run_jump_recursion(&s, &b, (a0, b0), &sched))?;
    let j = out.trace.jump_defects();
    ensure(j.len() == 6, || {
        format!("recursion stopped after {} steps", j.len() - 1)
    })?;
    ensure(j.windows(2).all(|w| w[1] <= w[0] + 1e-12), || {
        format!("jump defect increased: {j:?}")
    })?;
    ensure(*j.last().unwrap() <= 0.5 * j[0], || {
        format!("jump defect {:e} -> {:e}", j[0], j.last().unwrap())
    })?;
    for r in &out.trace.records()[1..] {
        if r.scale.is_some_and(|s| s > 0.0) {
            let wd = r.wdist.unwrap_or(f64::INFINITY);
            ensure(wd < 0.5f64.powi(r.k as i32), || {
                format!("step {}: weak increment {wd:e}", r.k)
            })?;
        }
        ensure(r.certificate_pass, || {
            format!("step {}: certificate fails", r.k)
        })?;
    }
    let tau = out.tau.unwrap_or(f64::NAN);
    ensure(a0 < tau && tau < b0, || {
        format!("tau {tau} outside ({a0}, {b0})")
    })?;
    for k in (0..grid.nt()).filter(|&k| !(a0 < grid.time(k) && grid.time(k) < b0)) {
        ensure(out.state.v.slice_data(k) == s.v.slice_data(k), || {
            format!("slice {k} changed outside the interval")
        })?;
    }
    Ok(format!(
        "jump defect {:.3} -> {:.3}, tau = {tau}",
        j[0],
        j.last().unwrap()
    ))
}

// ---------------------------------------------------------------- 6

fn heat_data(
    nx: usize,
    nt: usize,
    t: f64,
    theta0: impl Fn(&[f64]) -> f64,
) -> Result<EulerFourierData, String> {
    let g = ok(TorusGrid::uniform(2, nx, nt, t))?;
    let rho0 = ok(Field::constant(&g, FieldKind::Scalar, &[1.0]))?;
    let (rho, phi) = ok(euler_fourier_setup(&g, &rho0, &DensityMode::Constant))?;
    ok(EulerFourierData::new(
        rho,
        phi,
        Field::scalar_fn(&g, theta0),
        vec![10.0; nt],
    ))
}

fn temperature_order() -> Check {
    let t = 0.2;
    let rate = 2.0 / 3.0 * PI * PI;
    let mut errors = Vec::new();
    for nt in [5, 9, 17, 33, 65] {
        let d = heat_data(16, nt, t, |x| 2.0 + (PI * x[0]).cos())?;
        let v = SpaceTimeField::zeros(d.grid(), FieldKind::Vector);
        let th = ok(temperature_solve(&d, &v, Substeps::Fixed(1)))?;
        let exact = Field::scalar_fn(d.grid(), |x| 2.0 + (-rate * t).exp() * (PI * x[0]).cos());
        errors.push(ok(th.slice(nt - 1).max_abs_diff(&exact))?);
    }
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    ensure(orders.iter().all(|p| *p >= 0.9), || {
        format!("temporal orders {orders:?}")
    })?;
    // three modes, exact per-mode implicit decay at fixed dt
    let modes = [(1.0, 0.0, 1.0), (2.0, 3.0, 0.5), (0.0, 5.0, 0.25)];
    let mut spatial = 0.0_f64;
    for nx in [16, 32] {
        let nt = 9;
        let d = heat_data(nx, nt, t, |x| {
            2.0 + modes
                .iter()
                .map(|(a, b, c)| c * (PI * (a * x[0] + b * x[1])).cos())
                .sum::<f64>()
        })?;
        let dt = d.grid().dt();
        let v = SpaceTimeField::zeros(d.grid(), FieldKind::Vector);
        let th = ok(temperature_solve(&d, &v, Substeps::Fixed(1)))?;
        let expect = Field::scalar_fn(d.grid(), |x| {
            2.0 + modes
                .iter()
                .map(|(a, b, c)| {
                    let decay = (1.0 + dt * rate * (a * a + b * b))
                        .powi(nt as i32 - 1)
                        .recip();
                    c * decay * (PI * (a * x[0] + b * x[1])).cos()
                })
                .sum::<f64>()
        });
        spatial = spatial.max(ok(th.slice(nt - 1).max_abs_diff(&expect))?);
    }
    ensure(spatial < 1e-8, || format!("spatial error {spatial:e}"))?;
    Ok(format!(
        "orders {}, spatial error {spatial:.1e}",
        orders
            .iter()
            .map(|p| format!("{p:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    ))
}

// ---------------------------------------------------------------- 7

fn quantum_equivalence() -> Check {
    let g = ok(TorusGrid::uniform(3, 16, 3, 0.2))?;
    let rho = SpaceTimeField::from_fn(&g, FieldKind::Scalar, |_, x, o| {
        o[0] = 2.0 + 0.5 * (PI * x[0]).cos()
    });
    let m = SpaceTimeField::from_fn(&g, FieldKind::Scalar, |_, x, o| o[0] = (PI * x[1]).sin());
    let q = ok(QuantumData::new(
        rho,
        m,
        Capillarity::Constant { k: 0.3 },
        GammaLaw {
            a: 1.0,
            gamma: 5.0 / 3.0,
        },
        1e-6,
    ))?;
    let q = ok(q.with_dm(SpaceTimeField::zeros(&g, FieldKind::Scalar)))?;
    let v = SpaceTimeField::from_fn(&g, FieldKind::Vector, |t, x, o| {
        o[0] = (1.0 + t) * (PI * x[2]).sin();
        o[1] = 0.5 * (PI * x[0]).cos();
        o[2] = 0.0;
    });
    let dv = SpaceTimeField::from_fn(&g, FieldKind::Vector, |_, x, o| {
        o[0] = (PI * x[2]).sin();
        o[1] = 0.0;
        o[2] = 0.0;
    });
    let c = ok(quantum_coefficients(&q))?;
    let mut trace_max = 0.0_f64;
    for k in 0..g.nt() {
        for node in 0..g.node_count() {
            trace_max = trace_max.max(
                DevMat::from_components(3, c.hh.value(k, node))
                    .to_sym()
                    .trace()
                    .abs(),
            );
        }
    }
    ensure(trace_max == 0.0, || format!("trace(H) = {trace_max:e}"))?;
    let mut worst = 0.0_f64;
    for k in 0..g.nt() {
        let r_new = ok(reformulated_momentum_residual(
            &c,
            k,
            &v.slice(k),
            &dv.slice(k),
        ))?;
        let (j, dj) = ok(momentum_from_potential(&q, k, &v.slice(k), &dv.slice(k)))?;
        let mut r_old = ok(original_momentum_residual(&q, k, &j, &dj))?;
        r_old.scale(g.time(k).exp());
        worst = worst.max(ok(r_new.max_abs_diff(&r_old))?);
    }
    ensure(worst < 1e-8, || format!("residual mismatch {worst:e}"))?;
    Ok(format!("trace(H) = 0, residual mismatch {worst:.1e}"))
}

// ---------------------------------------------------------------- 8

fn causality() -> Check {
    let t = 2.0;
    let g = ok(TorusGrid::uniform(2, 16, 33, t))?;
    let rho0 = Field::scalar_fn(&g, |x| 2.0 + 0.3 * (PI * x[1]).sin());
    let (rho, phi) = ok(euler_fourier_setup(&g, &rho0, &DensityMode::Constant))?;
    let theta0 = Field::scalar_fn(&g, |x| 1.0 + 0.2 * (PI * x[0]).cos());
    let d = ok(EulerFourierData::new(rho, phi, theta0, vec![20.0; 33]))?;
    let b = euler_fourier_bundle(d, Substeps::Auto);
    let v = SpaceTimeField::from_fn(&g, FieldKind::Vector, |t, x, o| {
        o[0] = 0.3 * (1.0 + t) * (PI * x[1]).sin();
        o[1] = 0.0;
    });
    let p = SpaceTimeField::from_fn(&g, FieldKind::Vector, |_, x, o| {
        o[0] = 0.0;
        o[1] = 0.4 * (PI * x[0]).sin();
    });
    let taus = default_tau_list(t);
    for &tau in &taus {
        ensure(ok(causality_probe(&b, &v, tau, &p))?, || {
            format!("Euler-Fourier bundle fails at tau = {tau}")
        })?;
    }
    // the probe must be able to see a change at all
    let mut moved = v.clone();
    ok(moved.add_assign(&p))?;
    let e0 = ok(b.evaluate(&v))?.energy;
    let e1 = ok(b.evaluate(&moved))?.energy;
    let change = e0
        .data()
        .iter()
        .zip(e1.data())
        .map(|(a, c)| (a - c).abs())
        .fold(0.0, f64::max);
    ensure(change > 1e-8, || {
        "perturbation does not affect the energy".into()
    })?;

    let mask = SpaceTimeMask::full(&g);
    let anti = FnBundle {
        f: |v: &SpaceTimeField| {
            let grid = v.grid();
            let mut eval = BundleEval::constant(grid, 1.0, 1.0);
            for k in 0..grid.nt() {
                let next = v.slice_data((k + 1).min(grid.nt() - 1));
                let level =
                    1.0 + 0.1 * next.iter().map(|x| x * x).sum::<f64>() / grid.node_count() as f64;
                eval.energy
                    .slice_data_mut(k)
                    .iter_mut()
                    .for_each(|e| *e = level);
            }
            Ok(eval)
        },
        mask,
        e_bar: 10.0,
    };
    let caught = taus
        .iter()
        .filter(|&&tau| !causality_probe(&anti, &v, tau, &p).unwrap_or(true))
        .count();
    ensure(caught == taus.len(), || {
        format!(
            "anti-causal bundle caught at {caught} of {} times",
            taus.len()
        )
    })?;
    Ok(format!(
        "causal at {} times, anti-causal bundle rejected at all of them",
        taus.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("algebraic suite", 30.0, algebraic_suite),
        ("spectral calculus", 10.0, spectral_calculus),
        ("oscillator contract", 120.0, oscillator_contract),
        ("improvement convergence", 300.0, improvement_convergence),
        ("jump-reducing recursion", 600.0, jump_reduction),
        ("temperature solver order", 60.0, temperature_order),
        (
            "quantum reformulation equivalence",
            60.0,
            quantum_equivalence,
        ),
        ("causality", 60.0, causality),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let result = result.and_then(|m| {
            if secs <= *budget {
                Ok(m)
            } else {
                Err(format!("{m}; over the {budget} s budget"))
            }
        });
        match result {
            Ok(msg) => println!("PASS [{}] {name}: {msg} ({secs:.2} s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL [{}] {name}: {msg} ({secs:.2} s)", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
