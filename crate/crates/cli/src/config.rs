//! TOML experiment configuration. Every section is optional and falls back
//! to the one-site ideal gas at ν = κ₀ = 1.

use bose_core::lattice::{
    Coupling, ModelParams, RhoMode, System, TimeGrid, TorusGeometry, TwoBodyPotential,
};
use bose_core::loopgas::Truncation;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub potential: PotentialConfig,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub mc: McConfig,
    pub truncation: TruncationConfig,
    pub observable: ObservableConfig,
    pub field: FieldConfig,
    pub limit: LimitConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Lattice,
    Circle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub kind: GeometryKind,
    pub dim: usize,
    pub side: usize,
    pub circumference: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            kind: GeometryKind::Lattice,
            dim: 1,
            side: 1,
            circumference: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Zero,
    Delta,
    Gaussian,
    Values,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialConfig {
    pub kind: PotentialKind,
    pub strength: f64,
    pub amplitude: f64,
    pub width: f64,
    /// v(x) per displacement, for `kind = "values"`.
    pub values: Vec<f64>,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig {
            kind: PotentialKind::Delta,
            strength: 1.0,
            amplitude: 1.0,
            width: 1.0,
            values: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoKind {
    Explicit,
    Wick,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub nu: f64,
    pub kappa0: f64,
    pub lambda0: f64,
    pub species: f64,
    pub coupling: Coupling,
    pub rho_mode: RhoKind,
    pub rho: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            nu: 1.0,
            kappa0: 1.0,
            lambda0: 0.0,
            species: 1.0,
            coupling: Coupling::Fixed,
            rho_mode: RhoKind::Explicit,
            rho: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub slices: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { slices: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    pub chains: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            samples: 10_000,
            seed: 1,
            chains: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationConfig {
    /// Loop-number cutoff for series, cluster order for `mayer`.
    pub n_max: usize,
    pub l_max: usize,
    /// Per-mode occupation cutoff of the Fock oracle.
    pub occupation: usize,
    pub tolerance: f64,
    /// Allowed drift of Ξ when the occupation cutoff is raised by one.
    pub drift_tolerance: f64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        TruncationConfig {
            n_max: 6,
            l_max: 6,
            occupation: 40,
            tolerance: 1e-3,
            drift_tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    Partition,
    Gamma1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservableConfig {
    pub kind: ObservableKind,
    pub x: usize,
    pub xp: usize,
    pub tau: f64,
    pub tau_p: f64,
}

impl Default for ObservableConfig {
    fn default() -> Self {
        ObservableConfig {
            kind: ObservableKind::Partition,
            x: 0,
            xp: 0,
            tau: 0.0,
            tau_p: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Single-site radial quadrature of the relative partition function.
    Radial,
    /// The same quantity from the η representation.
    Eta,
    /// Metropolis estimate of ⟨φ̄(x)φ(x′)⟩ per species.
    Gibbs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub kind: FieldKind,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            kind: FieldKind::Radial,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    Classical,
    Meanfield,
    LargeN,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitConfig {
    pub kind: LimitKind,
    pub nu_list: Vec<f64>,
    pub n_list: Vec<f64>,
    /// Slice width held fixed along a mean-field sweep.
    pub eps: f64,
    /// Classical activity.
    pub z: f64,
}

impl Default for LimitConfig {
    fn default() -> Self {
        LimitConfig {
            kind: LimitKind::Classical,
            nu_list: vec![0.4, 0.2, 0.1, 0.05],
            n_list: vec![4.0, 16.0, 64.0],
            eps: 0.125,
            z: 0.5,
        }
    }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let head = &text[..offset.min(text.len())];
    let line = head.matches('\n').count() + 1;
    let col = head.rfind('\n').map_or(head.chars().count(), |i| head[i + 1..].chars().count()) + 1;
    (line, col)
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    CliError::Parse(format!("{origin}:{line}:{col}: {msg}"))
                }
                None => CliError::Parse(format!("{origin}: {msg}")),
            }
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn geometry(&self) -> Result<TorusGeometry, CliError> {
        let g = &self.geometry;
        Ok(match g.kind {
            GeometryKind::Lattice => TorusGeometry::lattice(g.dim, g.side)?,
            GeometryKind::Circle => TorusGeometry::circle(g.circumference)?,
        })
    }

    pub fn potential(&self, geom: &TorusGeometry) -> Result<TwoBodyPotential, CliError> {
        let p = &self.potential;
        Ok(match p.kind {
            PotentialKind::Zero => TwoBodyPotential::zero(geom)?,
            PotentialKind::Delta => TwoBodyPotential::delta(geom, p.strength)?,
            PotentialKind::Gaussian => TwoBodyPotential::gaussian(geom, p.amplitude, p.width)?,
            PotentialKind::Values => TwoBodyPotential::from_values(geom, p.values.clone())?,
        })
    }

    pub fn params(&self) -> ModelParams {
        let m = &self.model;
        ModelParams {
            nu: m.nu,
            kappa0: m.kappa0,
            lambda0: m.lambda0,
            species: m.species,
            coupling: m.coupling,
            rho: match m.rho_mode {
                RhoKind::Explicit => RhoMode::Explicit(m.rho),
                RhoKind::Wick => RhoMode::Wick,
            },
        }
    }

    pub fn system(&self) -> Result<System, CliError> {
        let geom = self.geometry()?;
        let v = self.potential(&geom)?;
        Ok(System::new(geom, v, self.params())?)
    }

    pub fn time_grid(&self) -> Result<TimeGrid, CliError> {
        Ok(TimeGrid::new(self.model.nu, self.grid.slices)?)
    }

    pub fn truncation(&self) -> Truncation {
        Truncation {
            n_max: self.truncation.n_max,
            l_max: self.truncation.l_max,
            tolerance: self.truncation.tolerance,
        }
    }

    /// Checks that do not depend on the command; model-level checks happen
    /// when the system is built.
    pub fn validate(&self) -> Result<System, CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.mc.samples == 0 {
            return bad("mc.samples must be positive".into());
        }
        if self.mc.chains == 0 {
            return bad("mc.chains must be positive".into());
        }
        if self.grid.slices == 0 {
            return bad("grid.slices must be positive".into());
        }
        let t = &self.truncation;
        if t.n_max == 0 || t.l_max == 0 || t.occupation == 0 {
            return bad("truncation.n_max, l_max and occupation must be positive".into());
        }
        if !(t.tolerance > 0.0 && t.drift_tolerance > 0.0) {
            return bad("truncation tolerances must be positive".into());
        }
        let sys = self.system()?;
        let sites = sys.geom.sites();
        let o = &self.observable;
        if sys.geom.is_lattice() && (o.x >= sites || o.xp >= sites) {
            return bad(format!("observable site out of range for {sites} sites"));
        }
        let l = &self.limit;
        if !(l.eps > 0.0 && l.z > 0.0) {
            return bad("limit.eps and limit.z must be positive".into());
        }
        Ok(sys)
    }
}
