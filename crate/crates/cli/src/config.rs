//! System configuration file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use cil_core::models::{
    euler_fourier_bundle, euler_fourier_setup, z_for_margin, Capillarity, DensityMode,
    EulerFourierBundle, EulerFourierData, GammaLaw, QuantumData, ScalarSpec, Substeps,
};
use cil_core::oscillator::OscillatorParams;
use cil_core::relaxation::{SubsolutionState, Tolerances};
use cil_core::torus::helmholtz_decompose;
use cil_core::{Field, FieldKind, IterationSchedule, SpaceTimeField, TorusGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    EulerFourier,
    Quantum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "N")]
    pub dim: usize,
    pub nx: usize,
    pub nt: usize,
    #[serde(rename = "T")]
    pub t_final: f64,
}

/// `Z` given per run, either directly or through the margin it should leave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZSpec {
    Value(f64),
    Margin { margin: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiLaw {
    Constant,
    #[serde(rename = "hbar_over_4rho")]
    HbarOver4rho,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PressureLaw {
    GammaLaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterateMode {
    #[default]
    Improvement,
    Recursion,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct IterateSpec {
    pub mode: IterateMode,
    /// time window `D` (improvement) or initial interval (recursion);
    /// defaults to `(T/4, 3T/4)`
    pub window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OscillateSpec {
    pub n_list: Vec<usize>,
    /// constant shift, zero by default
    pub h: Option<Vec<f64>>,
    pub r: f64,
    pub e: f64,
    /// defaults to `(0, T)`
    pub window: Option<[f64; 2]>,
    pub params: OscillatorParams,
}

impl Default for OscillateSpec {
    fn default() -> Self {
        Self {
            n_list: vec![1, 2, 4, 8, 16, 32],
            h: None,
            r: 1.0,
            e: 1.0,
            window: None,
            params: OscillatorParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub system: SystemKind,
    pub grid: GridSpec,
    #[serde(default = "one")]
    pub rho0: ScalarSpec,
    #[serde(default = "one")]
    pub theta0: ScalarSpec,
    /// initial velocity, one entry per component; projected to its
    /// divergence-free part
    #[serde(default)]
    pub u0: Option<Vec<ScalarSpec>>,
    #[serde(rename = "Z", default = "half_margin")]
    pub z: ZSpec,
    #[serde(default)]
    pub substeps: Substeps,
    #[serde(default = "constant_chi")]
    pub chi: ChiLaw,
    #[serde(rename = "K", default = "unit")]
    pub k: f64,
    #[serde(default = "unit")]
    pub hbar: f64,
    #[serde(rename = "M", default = "zero")]
    pub m: ScalarSpec,
    #[serde(default = "gamma_law")]
    pub p: PressureLaw,
    #[serde(default = "unit")]
    pub a: f64,
    #[serde(default = "five_thirds")]
    pub gamma: f64,
    #[serde(default = "vacuum")]
    pub rho_vac: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub schedule: IterationSchedule,
    #[serde(default)]
    pub iterate: IterateSpec,
    #[serde(default)]
    pub oscillate: OscillateSpec,
}

fn one() -> ScalarSpec {
    ScalarSpec::Constant(1.0)
}
fn zero() -> ScalarSpec {
    ScalarSpec::Constant(0.0)
}
fn half_margin() -> ZSpec {
    ZSpec::Margin { margin: 0.5 }
}
fn constant_chi() -> ChiLaw {
    ChiLaw::Constant
}
fn gamma_law() -> PressureLaw {
    PressureLaw::GammaLaw
}
fn unit() -> f64 {
    1.0
}
fn five_thirds() -> f64 {
    5.0 / 3.0
}
fn vacuum() -> f64 {
    1e-6
}
fn default_seed() -> u64 {
    42
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        let cfg: Config = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?;
        Ok(cfg)
    }

    pub fn grid(&self) -> cil_core::Result<TorusGrid> {
        let g = self.grid;
        TorusGrid::uniform(g.dim, g.nx, g.nt, g.t_final)
    }

    pub fn window(&self, w: Option<[f64; 2]>, default: (f64, f64)) -> (f64, f64) {
        let t = self.grid.t_final;
        w.map(|[a, b]| (a, b))
            .unwrap_or((default.0 * t, default.1 * t))
    }

    /// Divergence-free initial velocity, zero unless `u0` is given.
    pub fn initial_velocity(&self, grid: &TorusGrid) -> anyhow::Result<Field> {
        let Some(specs) = &self.u0 else {
            return Ok(Field::zeros(grid, FieldKind::Vector));
        };
        anyhow::ensure!(
            specs.len() == grid.dim(),
            "u0 has {} components, the grid has dimension {}",
            specs.len(),
            grid.dim()
        );
        let comps = specs
            .iter()
            .map(|s| s.field(grid).map(Field::into_data))
            .collect::<cil_core::Result<Vec<_>>>()?;
        let u = Field::from_components(grid, FieldKind::Vector, &comps)?;
        Ok(helmholtz_decompose(&u)?.0)
    }

    pub fn initial_state(&self, grid: &TorusGrid) -> anyhow::Result<SubsolutionState> {
        Ok(SubsolutionState::stationary(
            grid,
            &self.initial_velocity(grid)?,
        )?)
    }

    /// Euler-Fourier bundle with `Z` resolved against `state`.
    pub fn euler_fourier(
        &self,
        grid: &TorusGrid,
        state: &SubsolutionState,
    ) -> anyhow::Result<EulerFourierBundle> {
        anyhow::ensure!(
            self.system == SystemKind::EulerFourier,
            "this command needs system = \"euler_fourier\""
        );
        let rho0 = self.rho0.field(grid)?;
        let (rho, phi) = euler_fourier_setup(grid, &rho0, &DensityMode::Constant)?;
        let theta0 = self.theta0.field(grid)?;
        let d = EulerFourierData::new(rho, phi, theta0, vec![0.0; grid.nt()])?;
        let z = match self.z {
            ZSpec::Value(z) => vec![z; grid.nt()],
            ZSpec::Margin { margin } => z_for_margin(&d, state, margin, self.substeps)?,
        };
        Ok(euler_fourier_bundle(d.with_z(z)?, self.substeps))
    }

    pub fn capillarity(&self) -> Capillarity {
        match self.chi {
            ChiLaw::Constant => Capillarity::Constant { k: self.k },
            ChiLaw::HbarOver4rho => Capillarity::HbarOver4Rho { hbar: self.hbar },
        }
    }

    pub fn quantum(&self, grid: &TorusGrid) -> anyhow::Result<QuantumData> {
        anyhow::ensure!(
            self.system == SystemKind::Quantum,
            "this command needs system = \"quantum\""
        );
        let PressureLaw::GammaLaw = self.p;
        let rho = SpaceTimeField::constant_in_time(grid, &self.rho0.field(grid)?)?;
        let m = SpaceTimeField::constant_in_time(grid, &self.m.field(grid)?)?;
        let pressure = GammaLaw {
            a: self.a,
            gamma: self.gamma,
        };
        Ok(QuantumData::new(
            rho,
            m,
            self.capillarity(),
            pressure,
            self.rho_vac,
        )?)
    }
}
