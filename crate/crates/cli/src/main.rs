//! `cil`: batch front end for the convex-integration laboratory.

mod config;

use std::f64::consts::PI;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use cil_core::cif::{read_spacetime, write_spacetime};
use cil_core::models::{
    momentum_from_potential, original_momentum_residual, quantum_coefficients,
    reformulated_momentum_residual,
};
use cil_core::oscillator::measure_lambda;
use cil_core::relaxation::{causality_probe, default_tau_list};
use cil_core::tensor::DevMat;
use cil_core::torus::helmholtz_decompose;
use cil_core::{
    oscillatory_step, run_improvement, run_jump_recursion, verify_subsolution,
    verify_weak_solution, DriverOutcome, Field, FieldKind, LocalState, OperatorBundle,
    SpaceTimeField, SpaceTimeMask, SubsolutionState, Tolerances, TorusGrid,
};

use config::{Config, IterateMode};

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_HALT: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "cil",
    version,
    about = "Subsolution certificates and convex-integration iteration on the flat torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a stored state against the certificate or the weak-solution test
    Verify(Common),
    /// Run the improvement driver or the jump-reducing recursion
    Iterate(Common),
    /// Generate oscillatory pairs on a constant local state and measure lambda
    Oscillate(Common),
    /// Assemble the Euler-Fourier bundle and check certificate and causality
    EulerFourier(Common),
    /// Compare the two forms of the quantum momentum equation
    QuantumCheck(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// system configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// output directory
    #[arg(long, default_value = "cil-out")]
    out: PathBuf,
    /// input fields: a velocity file, or a directory holding v.cif and F.cif
    #[arg(long)]
    fields: Option<PathBuf>,
    /// overrides the seed of the configuration
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol_residual: Option<f64>,
    #[arg(long)]
    tol_energy: Option<f64>,
}

/// How a command ended when it did not fail outright.
enum Verdict {
    Pass,
    Fail,
    Halt,
}

struct Run {
    cfg: Config,
    grid: TorusGrid,
    tol: Tolerances,
    out: PathBuf,
    fields: Option<PathBuf>,
}

impl Run {
    fn new(c: &Common) -> anyhow::Result<Self> {
        let mut cfg = Config::load(&c.config)?;
        if let Some(seed) = c.seed {
            cfg.seed = seed;
        }
        let mut tol = cfg.tolerances;
        if let Some(r) = c.tol_residual {
            tol.residual = r;
        }
        if let Some(e) = c.tol_energy {
            tol.energy = e;
        }
        cfg.schedule.tolerances = tol;
        let grid = cfg.grid()?;
        fs::create_dir_all(&c.out).with_context(|| format!("cannot create {}", c.out.display()))?;
        Ok(Self {
            cfg,
            grid,
            tol,
            out: c.out.clone(),
            fields: c.fields.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> anyhow::Result<()> {
        let path = self.path(name);
        fs::write(&path, serde_json::to_string_pretty(value)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))
    }

    fn write_field(&self, name: &str, f: &SpaceTimeField) -> anyhow::Result<()> {
        write_spacetime(self.path(name), f)
            .with_context(|| format!("cannot write {}", self.path(name).display()))
    }

    fn read(&self, path: &Path, kind: FieldKind) -> anyhow::Result<SpaceTimeField> {
        let f = read_spacetime(path, self.grid.t_final())
            .with_context(|| format!("cannot load {}", path.display()))?;
        anyhow::ensure!(
            f.grid() == &self.grid,
            "{} does not match the configured grid",
            path.display()
        );
        anyhow::ensure!(
            f.kind() == kind,
            "{} holds a {:?} field, expected {kind:?}",
            path.display(),
            f.kind()
        );
        Ok(f)
    }

    /// State from `--fields`; the flux is `None` when only a velocity is given.
    fn input_state(&self) -> anyhow::Result<Option<(SpaceTimeField, Option<SpaceTimeField>)>> {
        let Some(p) = &self.fields else {
            return Ok(None);
        };
        if p.is_dir() {
            let v = self.read(&p.join("v.cif"), FieldKind::Vector)?;
            let fp = p.join("F.cif");
            let f = if fp.exists() {
                Some(self.read(&fp, FieldKind::DevTensor)?)
            } else {
                None
            };
            Ok(Some((v, f)))
        } else {
            Ok(Some((self.read(p, FieldKind::Vector)?, None)))
        }
    }
}

fn verdict(pass: bool) -> Verdict {
    if pass {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn cmd_verify(run: &Run) -> anyhow::Result<Verdict> {
    let (v, f) = run.input_state()?.context("verify needs --fields")?;
    let subsolution = f.is_some();
    let f = f.unwrap_or_else(|| SpaceTimeField::zeros(&run.grid, FieldKind::DevTensor));
    let state = SubsolutionState::new(v, f, SpaceTimeMask::full(&run.grid))?;
    let b = run.cfg.euler_fourier(&run.grid, &state)?;
    let report = if subsolution {
        let taus = default_tau_list(run.grid.t_final());
        verify_subsolution(&state, &b, &taus, &run.tol)?
    } else {
        verify_weak_solution(&state.v, &b, &run.tol)?
    };
    let value = serde_json::to_value(&report)?;
    run.write_json("report.json", &value)?;
    println!("{}", report.to_json());
    Ok(verdict(report.pass))
}

fn cmd_iterate(run: &Run) -> anyhow::Result<Verdict> {
    let state = match run.input_state()? {
        Some((v, f)) => {
            let f = f.unwrap_or_else(|| SpaceTimeField::zeros(&run.grid, FieldKind::DevTensor));
            SubsolutionState::new(v, f, SpaceTimeMask::full(&run.grid))?
        }
        None => run.cfg.initial_state(&run.grid)?,
    };
    let b = run.cfg.euler_fourier(&run.grid, &state)?;
    let spec = &run.cfg.iterate;
    let (lo, hi) = run.cfg.window(spec.window, (0.25, 0.75));
    let schedule = &run.cfg.schedule;
    info!(
        "{:?} over ({lo}, {hi}) with {} steps",
        spec.mode, schedule.steps
    );
    let outcome: DriverOutcome = match spec.mode {
        IterateMode::Improvement => {
            let d = SpaceTimeMask::time_window(&run.grid, lo, hi);
            run_improvement(&state, &b, &d, schedule)?
        }
        IterateMode::Recursion => run_jump_recursion(&state, &b, (lo, hi), schedule)?,
    };
    let trace_path = run.path("trace.csv");
    let file = fs::File::create(&trace_path)
        .with_context(|| format!("cannot write {}", trace_path.display()))?;
    outcome.trace.write_csv(BufWriter::new(file))?;
    run.write_field("v.cif", &outcome.state.v)?;
    run.write_field("F.cif", &outcome.state.f)?;
    let last = outcome.trace.last();
    let summary = json!({
        "mode": spec.mode,
        "steps": outcome.trace.len().saturating_sub(1),
        "I_D": last.map(|r| r.i_d),
        "jump_defect": last.and_then(|r| r.jump_defect),
        "tau": outcome.tau,
        "halted": outcome.halted,
        "Z": b.data.z,
    });
    run.write_json("summary.json", &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(match outcome.halted {
        Some(reason) => {
            eprintln!("driver halted: {reason}");
            Verdict::Halt
        }
        None => Verdict::Pass,
    })
}

fn cmd_oscillate(run: &Run) -> anyhow::Result<Verdict> {
    let spec = &run.cfg.oscillate;
    let (lo, hi) = run.cfg.window(spec.window, (0.0, 1.0));
    let umask = SpaceTimeMask::time_window(&run.grid, lo, hi);
    let h = spec.h.clone().unwrap_or_else(|| vec![0.0; run.grid.dim()]);
    let state = LocalState::constant(&umask, &h, spec.r, spec.e)?;
    let (lambda, samples) = match measure_lambda(&state, &spec.n_list, &spec.params) {
        Ok(m) => m,
        Err(e @ cil_core::Error::Degenerate(_)) => {
            eprintln!("error: {e}");
            return Ok(Verdict::Fail);
        }
        Err(e) => return Err(e.into()),
    };
    for &n in &spec.n_list {
        let pair = oscillatory_step(&state, n, &spec.params)?;
        run.write_field(&format!("w_n{n}.cif"), &pair.w)?;
        run.write_field(&format!("G_n{n}.cif"), &pair.g)?;
        run.write_json(&format!("pair_n{n}.json"), &pair.sidecar()?)?;
    }
    let report = json!({ "lambda": lambda, "samples": samples });
    run.write_json("lambda.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(Verdict::Pass)
}

/// Random band-limited field with modes `|k|_inf <= kmax`.
fn random_field(rng: &mut ChaCha8Rng, grid: &TorusGrid, kind: FieldKind, kmax: i64) -> Field {
    let dim = grid.dim();
    let nc = kind.components(dim);
    let mut modes = Vec::new();
    let side = (2 * kmax + 1) as usize;
    for idx in 0..side.pow(dim as u32) {
        let k: Vec<f64> = (0..dim)
            .map(|a| ((idx / side.pow(a as u32)) % side) as f64 - kmax as f64)
            .collect();
        let amp: Vec<(f64, f64)> = (0..nc)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        modes.push((k, amp));
    }
    let scale = 1.0 / (modes.len() as f64).sqrt();
    Field::from_fn(grid, kind, |x, out| {
        out.fill(0.0);
        for (k, amp) in &modes {
            let ph = PI * k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            let (c, s) = (ph.cos(), ph.sin());
            for (o, (a, b)) in out.iter_mut().zip(amp) {
                *o += scale * (a * c + b * s);
            }
        }
    })
}

fn cmd_euler_fourier(run: &Run) -> anyhow::Result<Verdict> {
    let state = run.cfg.initial_state(&run.grid)?;
    let b = run.cfg.euler_fourier(&run.grid, &state)?;
    let eval = b.evaluate(&state.v)?;
    run.write_field("theta.cif", &b.theta(&state.v)?)?;
    run.write_field("energy.cif", &eval.energy)?;
    let taus = default_tau_list(run.grid.t_final());
    let cert = verify_subsolution(&state, &b, &taus, &run.tol)?;

    let mut rng = ChaCha8Rng::seed_from_u64(run.cfg.seed);
    let p = random_field(&mut rng, &run.grid, FieldKind::Vector, 2);
    let p = helmholtz_decompose(&p)?.0;
    let perturbation = SpaceTimeField::constant_in_time(&run.grid, &p)?;
    let mut causal = Vec::new();
    for &tau in &taus {
        causal.push(
            json!({ "tau": tau, "pass": causality_probe(&b, &state.v, tau, &perturbation)? }),
        );
    }
    let causal_ok = causal.iter().all(|c| c["pass"] == true);
    let report = json!({
        "pass": cert.pass && causal_ok,
        "Z": b.data.z,
        "certificate": cert,
        "causality": causal,
    });
    run.write_json("report.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(verdict(cert.pass && causal_ok))
}

fn cmd_quantum_check(run: &Run) -> anyhow::Result<Verdict> {
    let q = run.cfg.quantum(&run.grid)?;
    let c = quantum_coefficients(&q)?;
    let grid = &run.grid;
    let mut trace = 0.0_f64;
    for k in 0..grid.nt() {
        for node in 0..grid.node_count() {
            let h = DevMat::from_components(3, c.hh.value(k, node)).to_sym();
            trace = trace.max(h.trace().abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(run.cfg.seed);
    let mut mismatch = Vec::new();
    for k in 0..grid.nt() {
        let v = random_field(&mut rng, grid, FieldKind::Vector, 2);
        let dv = random_field(&mut rng, grid, FieldKind::Vector, 2);
        let r_new = reformulated_momentum_residual(&c, k, &v, &dv)?;
        let (j, dj) = momentum_from_potential(&q, k, &v, &dv)?;
        let mut r_old = original_momentum_residual(&q, k, &j, &dj)?;
        r_old.scale(grid.time(k).exp());
        mismatch.push(r_new.max_abs_diff(&r_old)?);
    }
    let worst = mismatch.iter().copied().fold(0.0, f64::max);
    let pass = trace == 0.0 && worst < run.tol.residual;
    run.write_field("r.cif", &c.r)?;
    run.write_field("h.cif", &c.h)?;
    run.write_field("H.cif", &c.hh)?;
    run.write_field("Pi.cif", &c.pi)?;
    let report = json!({
        "pass": pass,
        "trace_H_max": trace,
        "mismatch": worst,
        "mismatch_per_slice": mismatch,
        "rho_bar": q.rho_bar,
        "seed": run.cfg.seed,
        "capillarity": q.capillarity,
        "tolerance": run.tol.residual,
    });
    run.write_json("report.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(verdict(pass))
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(s) = std::env::var("CIL_THREADS") {
        let n: usize = s
            .parse()
            .with_context(|| format!("CIL_THREADS must be a positive integer, got {s:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = init_threads().and_then(|()| {
        let (cmd, common): (fn(&Run) -> anyhow::Result<Verdict>, &Common) = match &cli.command {
            Command::Verify(c) => (cmd_verify, c),
            Command::Iterate(c) => (cmd_iterate, c),
            Command::Oscillate(c) => (cmd_oscillate, c),
            Command::EulerFourier(c) => (cmd_euler_fourier, c),
            Command::QuantumCheck(c) => (cmd_quantum_check, c),
        };
        cmd(&Run::new(common)?)
    });
    match result {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(EXIT_VERIFY),
        Ok(Verdict::Halt) => ExitCode::from(EXIT_HALT),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
