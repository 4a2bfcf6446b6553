//! Periodic spatial domains, two-body potentials, imaginary-time grids and
//! the heat propagators built on them.
//!
//! Lattice mode uses unit spacing, nearest-neighbour Laplacian and periodic
//! wrap in every coordinate. Circle mode is a continuous ring of given
//! circumference (d = 1 only) whose heat kernel is the wrapped Gaussian.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hs::SigmaField;

/// Fourier coefficients below this are treated as rounding noise.
pub const POSITIVE_TYPE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Lattice,
    Circle { circumference: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TorusGeometry {
    dim: usize,
    side: usize,
    domain: Domain,
    /// Eigenvalues of -Δ/2 indexed by the site index of the wave vector.
    kinetic: Vec<f64>,
}

impl TorusGeometry {
    pub fn lattice(dim: usize, side: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Domain(format!("dimension {dim} not in 1..=3")));
        }
        if side == 0 {
            return Err(Error::Domain("sites per side must be >= 1".into()));
        }
        let mut geom = TorusGeometry {
            dim,
            side,
            domain: Domain::Lattice,
            kinetic: Vec::new(),
        };
        geom.kinetic = (0..geom.sites())
            .map(|k| {
                geom.coords(k)
                    .iter()
                    .map(|&ki| 1.0 - (2.0 * PI * ki as f64 / side as f64).cos())
                    .sum()
            })
            .collect();
        Ok(geom)
    }

    pub fn circle(circumference: f64) -> Result<Self> {
        if !(circumference > 0.0 && circumference.is_finite()) {
            return Err(Error::Domain(format!(
                "circumference must be positive, got {circumference}"
            )));
        }
        Ok(TorusGeometry {
            dim: 1,
            side: 0,
            domain: Domain::Circle { circumference },
            kinetic: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self.domain, Domain::Lattice)
    }

    pub fn circumference(&self) -> Option<f64> {
        match self.domain {
            Domain::Circle { circumference } => Some(circumference),
            Domain::Lattice => None,
        }
    }

    /// |Λ|: number of sites, or the circumference in circle mode.
    pub fn volume(&self) -> f64 {
        match self.domain {
            Domain::Lattice => self.sites() as f64,
            Domain::Circle { circumference } => circumference,
        }
    }

    /// Number of lattice sites (0 in circle mode).
    pub fn sites(&self) -> usize {
        match self.domain {
            Domain::Lattice => self.side.pow(self.dim as u32),
            Domain::Circle { .. } => 0,
        }
    }

    pub fn coords(&self, index: usize) -> Vec<usize> {
        let mut rest = index;
        (0..self.dim)
            .map(|_| {
                let c = rest % self.side;
                rest /= self.side;
                c
            })
            .collect()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .rev()
            .fold(0, |acc, &c| acc * self.side + c % self.side)
    }

    /// Site index of the displacement x - y, wrapped.
    pub fn displacement(&self, x: usize, y: usize) -> usize {
        let (m, mut a, mut b, mut out, mut stride) = (self.side, x, y, 0, 1);
        for _ in 0..self.dim {
            let d = (a % m + m - b % m) % m;
            out += d * stride;
            stride *= m;
            a /= m;
            b /= m;
        }
        out
    }

    /// Site index of -x.
    pub fn negate(&self, x: usize) -> usize {
        self.displacement(0, x)
    }

    pub fn neighbors(&self, x: usize) -> Vec<usize> {
        let c = self.coords(x);
        let m = self.side;
        let mut out = Vec::with_capacity(2 * self.dim);
        for i in 0..self.dim {
            let mut up = c.clone();
            up[i] = (c[i] + 1) % m;
            out.push(self.index(&up));
            let mut down = c.clone();
            down[i] = (c[i] + m - 1) % m;
            out.push(self.index(&down));
        }
        out
    }

    /// Dense lattice Laplacian (unit spacing, periodic).
    pub fn laplacian_matrix(&self) -> Result<DMatrix<f64>> {
        self.require_lattice()?;
        let n = self.sites();
        let mut lap = DMatrix::zeros(n, n);
        for x in 0..n {
            for y in self.neighbors(x) {
                lap[(x, y)] += 1.0;
                lap[(x, x)] -= 1.0;
            }
        }
        Ok(lap)
    }

    /// Eigenvalues of -Δ/2, indexed by wave-vector site index.
    pub fn kinetic_energies(&self) -> Result<&[f64]> {
        self.require_lattice()?;
        Ok(&self.kinetic)
    }

    fn require_lattice(&self) -> Result<()> {
        if self.is_lattice() {
            Ok(())
        } else {
            Err(Error::UnsupportedMode("circle"))
        }
    }

    fn phase(&self, k: usize, x: usize) -> f64 {
        let (kc, xc) = (self.coords(k), self.coords(x));
        let dot: usize = kc.iter().zip(&xc).map(|(a, b)| a * b).sum();
        2.0 * PI * dot as f64 / self.side as f64
    }

    /// Translation-invariant kernel f(-Δ/2) evaluated at every displacement:
    /// out[d] = |Λ|⁻¹ Σ_k f(ε_k) cos(k·d).
    pub fn spectral_kernel(&self, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        self.require_lattice()?;
        let weights: Vec<f64> = self.kinetic.iter().map(|&e| f(e)).collect();
        self.mode_kernel(&weights)
    }

    /// Inverse transform of per-mode weights: out[d] = |Λ|⁻¹ Σ_k w_k cos(k·d).
    pub fn mode_kernel(&self, weights: &[f64]) -> Result<Vec<f64>> {
        self.require_lattice()?;
        let n = self.sites();
        Ok((0..n)
            .map(|d| {
                weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * self.phase(k, d).cos())
                    .sum::<f64>()
                    / n as f64
            })
            .collect())
    }

    /// Expand a displacement kernel into a dense circulant matrix.
    pub fn circulant(&self, kernel: &[f64]) -> DMatrix<f64> {
        let n = self.sites();
        DMatrix::from_fn(n, n, |x, y| kernel[self.displacement(x, y)])
    }
}

/// Eigenpairs of the lattice Laplacian: (eigenvalue, integer wave vector).
pub fn laplacian_spectrum(geom: &TorusGeometry) -> Result<Vec<(f64, Vec<usize>)>> {
    let kin = geom.kinetic_energies()?;
    Ok((0..geom.sites())
        .map(|k| (-2.0 * kin[k], geom.coords(k)))
        .collect())
}

/// Normalized plane wave e^{ik·x}/√|Λ| for the wave vector with site index `k`.
pub fn plane_wave(geom: &TorusGeometry, k: usize) -> Result<DVector<Complex64>> {
    geom.require_lattice()?;
    let n = geom.sites();
    let norm = (n as f64).sqrt().recip();
    Ok(DVector::from_fn(n, |x, _| {
        Complex64::from_polar(norm, geom.phase(k, x))
    }))
}

/// e^{tΔ/2} as a dense matrix (lattice mode).
pub fn heat_propagator(geom: &TorusGeometry, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("negative duration {t}")));
    }
    let kernel = geom.spectral_kernel(|e| (-t * e).exp())?;
    Ok(geom.circulant(&kernel))
}

/// Transition density p_t(x, y) of Brownian motion on the circle.
pub fn circle_density(circumference: f64, t: f64, x: f64, y: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("non-positive duration {t}")));
    }
    let l = circumference;
    let dx = (x - y).rem_euclid(l);
    let dx = if dx > 0.5 * l { dx - l } else { dx };
    // Image sum converges fast for t ≲ L²; the Fourier series for larger t.
    if t <= l * l / (2.0 * PI) {
        let norm = (2.0 * PI * t).sqrt().recip();
        let mut total = norm * (-dx * dx / (2.0 * t)).exp();
        for w in 1.. {
            let (a, b) = (dx + w as f64 * l, dx - w as f64 * l);
            let term = norm * ((-a * a / (2.0 * t)).exp() + (-b * b / (2.0 * t)).exp());
            total += term;
            if term < 1e-16 {
                break;
            }
        }
        Ok(total)
    } else {
        let mut total = 1.0 / l;
        for n in 1.. {
            let k = 2.0 * PI * n as f64 / l;
            let term = 2.0 / l * (-0.5 * t * k * k).exp();
            total += term * (k * dx).cos();
            if term < 1e-16 {
                break;
            }
        }
        Ok(total)
    }
}

/// Site-independent return density p_t(u, u).
pub fn return_density(geom: &TorusGeometry, t: f64) -> Result<f64> {
    match geom.domain() {
        Domain::Lattice => {
            if !(t >= 0.0) {
                return Err(Error::Domain(format!("negative duration {t}")));
            }
            let kin = geom.kinetic_energies()?;
            Ok(kin.iter().map(|e| (-t * e).exp()).sum::<f64>() / kin.len() as f64)
        }
        Domain::Circle { circumference } => circle_density(circumference, t, 0.0, 0.0),
    }
}

/// γ₁ of the ideal gas: M₀(1 − M₀)⁻¹ with M₀ = e^{−νκ}e^{νΔ/2}.
pub fn free_green(geom: &TorusGeometry, nu: f64, kappa: f64) -> Result<DMatrix<f64>> {
    if !(kappa > 0.0) {
        return Err(Error::DivergentSeries(format!(
            "winding sum needs kappa > 0, got {kappa}"
        )));
    }
    let kernel = geom.spectral_kernel(|e| bose_occupation(nu * (e + kappa)))?;
    Ok(geom.circulant(&kernel))
}

/// Mean ideal-gas occupation per site, |Λ|⁻¹ Σ_k (e^{ν(ε_k+κ)} − 1)⁻¹.
pub fn ideal_occupation(geom: &TorusGeometry, nu: f64, kappa: f64) -> Result<f64> {
    let kin = geom.kinetic_energies()?;
    Ok(kin
        .iter()
        .map(|e| bose_occupation(nu * (e + kappa)))
        .sum::<f64>()
        / kin.len() as f64)
}

/// d/dκ of [`ideal_occupation`].
pub fn ideal_occupation_derivative(geom: &TorusGeometry, nu: f64, kappa: f64) -> Result<f64> {
    let kin = geom.kinetic_energies()?;
    Ok(-kin
        .iter()
        .map(|e| {
            let x = nu * (e + kappa);
            let n = bose_occupation(x);
            nu * n * (1.0 + n)
        })
        .sum::<f64>()
        / kin.len() as f64)
}

/// 1/(e^x − 1) for x > 0.
pub fn bose_occupation(x: f64) -> f64 {
    1.0 / x.exp_m1()
}

/// −ln det(1 − e^{−νκ}e^{νΔ/2}) = ln Ξ⁽⁰⁾ per species.
pub fn ideal_log_xi(geom: &TorusGeometry, nu: f64, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::DivergentSeries(format!("kappa = {kappa}")));
    }
    let kin = geom.kinetic_energies()?;
    Ok(kin
        .iter()
        .map(|e| -(-(-nu * (e + kappa)).exp()).ln_1p())
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CircleProfile {
    Zero,
    /// A·Σ_w exp(−(x + wL)²/(2 w²)), periodized Gaussian.
    Gaussian { amplitude: f64, width: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum TwoBodyPotential {
    Lattice {
        values: Vec<f64>,
        fourier: Vec<f64>,
    },
    Circle {
        circumference: f64,
        profile: CircleProfile,
    },
}

impl TwoBodyPotential {
    /// Lattice potential from its values at each displacement (site index).
    pub fn from_values(geom: &TorusGeometry, values: Vec<f64>) -> Result<Self> {
        geom.require_lattice()?;
        let n = geom.sites();
        if values.len() != n {
            return Err(Error::Shape(format!(
                "potential has {} values for {} sites",
                values.len(),
                n
            )));
        }
        let fourier = (0..n)
            .map(|k| {
                values
                    .iter()
                    .enumerate()
                    .map(|(x, v)| v * geom.phase(k, x).cos())
                    .sum::<f64>()
                    / n as f64
            })
            .collect();
        Ok(TwoBodyPotential::Lattice { values, fourier })
    }

    pub fn zero(geom: &TorusGeometry) -> Result<Self> {
        match geom.domain() {
            Domain::Lattice => Self::from_values(geom, vec![0.0; geom.sites()]),
            Domain::Circle { circumference } => Ok(TwoBodyPotential::Circle {
                circumference,
                profile: CircleProfile::Zero,
            }),
        }
    }

    /// On-site interaction v(0) = strength, zero elsewhere.
    pub fn delta(geom: &TorusGeometry, strength: f64) -> Result<Self> {
        let mut values = vec![0.0; geom.sites()];
        if let Some(v0) = values.first_mut() {
            *v0 = strength;
        }
        Self::from_values(geom, values)
    }

    /// Periodized Gaussian on either domain.
    pub fn gaussian(geom: &TorusGeometry, amplitude: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::Domain(format!("width must be positive, got {width}")));
        }
        match geom.domain() {
            Domain::Circle { circumference } => Ok(TwoBodyPotential::Circle {
                circumference,
                profile: CircleProfile::Gaussian { amplitude, width },
            }),
            Domain::Lattice => {
                let m = geom.side() as i64;
                let values = (0..geom.sites())
                    .map(|x| {
                        geom.coords(x)
                            .iter()
                            .map(|&c| {
                                (-4..=4)
                                    .map(|w| {
                                        let d = c as f64 + (w * m) as f64;
                                        (-d * d / (2.0 * width * width)).exp()
                                    })
                                    .sum::<f64>()
                            })
                            .product::<f64>()
                            * amplitude
                    })
                    .collect();
                Self::from_values(geom, values)
            }
        }
    }

    /// v at a lattice displacement given as a site index.
    #[inline]
    pub fn at(&self, displacement: usize) -> f64 {
        match self {
            TwoBodyPotential::Lattice { values, .. } => values[displacement],
            TwoBodyPotential::Circle { .. } => panic!("lattice lookup on circle potential"),
        }
    }

    /// v at a real displacement on the circle.
    pub fn eval(&self, dx: f64) -> f64 {
        match self {
            TwoBodyPotential::Circle {
                circumference,
                profile,
            } => match *profile {
                CircleProfile::Zero => 0.0,
                CircleProfile::Gaussian { amplitude, width } => {
                    let l = *circumference;
                    let mut d = dx.rem_euclid(l);
                    if d > 0.5 * l {
                        d -= l;
                    }
                    let mut total = 0.0;
                    for w in -4i32..=4 {
                        let y = d + w as f64 * l;
                        total += (-y * y / (2.0 * width * width)).exp();
                    }
                    amplitude * total
                }
            },
            TwoBodyPotential::Lattice { .. } => panic!("continuous lookup on lattice potential"),
        }
    }

    pub fn v0(&self) -> f64 {
        match self {
            TwoBodyPotential::Lattice { values, .. } => values[0],
            TwoBodyPotential::Circle { .. } => self.eval(0.0),
        }
    }

    /// Σ_x v(x), or ∫ v over the circle.
    pub fn total(&self) -> f64 {
        match self {
            TwoBodyPotential::Lattice { values, .. } => values.iter().sum(),
            TwoBodyPotential::Circle { profile, .. } => match *profile {
                CircleProfile::Zero => 0.0,
                CircleProfile::Gaussian { amplitude, width } => {
                    amplitude * width * (2.0 * PI).sqrt()
                }
            },
        }
    }

    /// v̂(k) = |Λ|⁻¹ Σ_x v(x) e^{−ik·x} (lattice).
    pub fn fourier(&self) -> Option<&[f64]> {
        match self {
            TwoBodyPotential::Lattice { fourier, .. } => Some(fourier),
            TwoBodyPotential::Circle { .. } => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            TwoBodyPotential::Lattice { values, .. } => values.iter().all(|&v| v == 0.0),
            TwoBodyPotential::Circle { profile, .. } => {
                matches!(profile, CircleProfile::Zero)
                    || matches!(profile, CircleProfile::Gaussian { amplitude, .. } if *amplitude == 0.0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialReport {
    pub evenness_residual: f64,
    pub min_fourier: f64,
    pub v0: f64,
    /// Wave vectors (site index form) whose coefficient is below −tolerance.
    pub negative_modes: Vec<(Vec<usize>, f64)>,
    pub passed: bool,
}

pub fn validate_potential(geom: &TorusGeometry, v: &TwoBodyPotential) -> PotentialReport {
    match v {
        TwoBodyPotential::Lattice { values, fourier } => {
            let evenness_residual = (0..values.len())
                .map(|x| (values[x] - values[geom.negate(x)]).abs())
                .fold(0.0, f64::max);
            let min_fourier = fourier.iter().cloned().fold(f64::INFINITY, f64::min);
            let negative_modes: Vec<_> = fourier
                .iter()
                .enumerate()
                .filter(|(_, &c)| c < -POSITIVE_TYPE_TOL)
                .map(|(k, &c)| (geom.coords(k), c))
                .collect();
            let v0 = values[0];
            PotentialReport {
                evenness_residual,
                min_fourier,
                v0,
                passed: evenness_residual == 0.0 && negative_modes.is_empty() && v0.is_finite(),
                negative_modes,
            }
        }
        TwoBodyPotential::Circle {
            circumference,
            profile,
        } => {
            // Periodized Gaussian: v̂_n = A w √(2π)/L · exp(−(2πn/L)² w²/2) > 0.
            let (min_fourier, v0) = match *profile {
                CircleProfile::Zero => (0.0, 0.0),
                CircleProfile::Gaussian { amplitude, width } => {
                    let k = 2.0 * PI * 8.0 / circumference;
                    let c = amplitude * width * (2.0 * PI).sqrt() / circumference
                        * (-0.5 * k * k * width * width).exp();
                    (c, v.eval(0.0))
                }
            };
            PotentialReport {
                evenness_residual: (v.eval(0.7) - v.eval(-0.7)).abs(),
                min_fourier,
                v0,
                negative_modes: if min_fourier < -POSITIVE_TYPE_TOL {
                    vec![(vec![8], min_fourier)]
                } else {
                    vec![]
                },
                passed: min_fourier >= -POSITIVE_TYPE_TOL && v0.is_finite(),
            }
        }
    }
}

/// Uniform imaginary-time grid on [0, ν).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nu: f64,
    slices: usize,
}

impl TimeGrid {
    pub fn new(nu: f64, slices: usize) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::Domain(format!("nu must be positive, got {nu}")));
        }
        if slices == 0 {
            return Err(Error::Domain("need at least one slice".into()));
        }
        Ok(TimeGrid { nu, slices })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn step(&self) -> f64 {
        self.nu / self.slices as f64
    }

    /// Time of slice boundary `j`; boundary `slices` is exactly ν.
    pub fn time(&self, j: usize) -> f64 {
        if j == self.slices {
            self.nu
        } else {
            self.nu * j as f64 / self.slices as f64
        }
    }

    /// Slice boundary index of τ, if τ lies on the grid.
    pub fn boundary_of(&self, tau: f64) -> Option<usize> {
        let j = (tau / self.step()).round();
        if j < 0.0 || j > self.slices as f64 {
            return None;
        }
        let j = j as usize;
        ((self.time(j) - tau).abs() <= 1e-12 * self.nu.max(1.0)).then_some(j)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// λ = λ₀
    Fixed,
    /// λ = λ₀ν²/(N+1)
    MeanField,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum RhoMode {
    Explicit(f64),
    Wick,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub nu: f64,
    pub kappa0: f64,
    pub lambda0: f64,
    pub species: f64,
    pub coupling: Coupling,
    pub rho: RhoMode,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::Domain(format!("nu = {}", self.nu)));
        }
        if !(self.kappa0 > 0.0 && self.kappa0.is_finite()) {
            return Err(Error::Domain(format!("kappa0 = {}", self.kappa0)));
        }
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) {
            return Err(Error::Domain(format!("lambda0 = {}", self.lambda0)));
        }
        if !(self.species >= 0.0 && self.species.is_finite()) {
            return Err(Error::Domain(format!("species N = {}", self.species)));
        }
        if let RhoMode::Explicit(rho) = self.rho {
            if !(rho >= 0.0 && rho.is_finite()) {
                return Err(Error::Domain(format!("rho = {rho}")));
            }
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        match self.coupling {
            Coupling::Fixed => self.lambda0,
            Coupling::MeanField => self.lambda0 * self.nu * self.nu / (self.species + 1.0),
        }
    }

    /// Resolved density parameter; the Wick value is ν·[γ₁^{free}]_{xx}.
    pub fn rho_value(&self, geom: &TorusGeometry) -> Result<f64> {
        match self.rho {
            RhoMode::Explicit(rho) => Ok(rho),
            RhoMode::Wick => Ok(self.nu * ideal_occupation(geom, self.nu, self.kappa0)?),
        }
    }

    /// Killing rate of loops after absorbing the ρ-shift: κ₀ − Nλρν⁻²Σ_x v(x).
    pub fn kappa_rho(&self, rho: f64, v: &TwoBodyPotential) -> f64 {
        self.kappa0 - self.species * self.lambda() * rho * v.total() / (self.nu * self.nu)
    }

    pub fn with_species(mut self, n: f64) -> Self {
        self.species = n;
        self
    }
}

/// Strang-split slice propagators e^{εΔ/4} and e^{εΔ/2} on a fixed grid.
#[derive(Clone, Debug)]
pub struct SlicePropagator {
    half: DMatrix<Complex64>,
    full: DMatrix<Complex64>,
    grid: TimeGrid,
    sites: usize,
}

impl SlicePropagator {
    pub fn new(geom: &TorusGeometry, grid: TimeGrid) -> Result<Self> {
        let eps = grid.step();
        let half = heat_propagator(geom, 0.5 * eps)?.map(|x| Complex64::new(x, 0.0));
        let full = heat_propagator(geom, eps)?.map(|x| Complex64::new(x, 0.0));
        Ok(SlicePropagator {
            half,
            full,
            grid,
            sites: geom.sites(),
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    fn check(&self, sigma: &SigmaField) -> Result<()> {
        if sigma.slices() != self.grid.slices() || sigma.sites() != self.sites {
            return Err(Error::Shape(format!(
                "sigma is {}x{}, grid needs {}x{}",
                sigma.slices(),
                sigma.sites(),
                self.grid.slices(),
                self.sites
            )));
        }
        Ok(())
    }

    /// Γ(τ_to, τ_from; iσ) for slice boundaries from ≤ to, built as
    /// e^{εΔ/4} D_{to−1} e^{εΔ/2} ⋯ e^{εΔ/2} D_from e^{εΔ/4}.
    pub fn segment(&self, sigma: &SigmaField, from: usize, to: usize) -> Result<DMatrix<Complex64>> {
        self.check(sigma)?;
        if from > to || to > self.grid.slices() {
            return Err(Error::Shape(format!("bad slice range {from}..{to}")));
        }
        let n = self.sites;
        if from == to {
            return Ok(DMatrix::identity(n, n));
        }
        let eps = self.grid.step();
        let mut acc = self.half.clone();
        for j in from..to {
            if j > from {
                acc = &self.full * acc;
            }
            for x in 0..n {
                let phase = Complex64::from_polar(1.0, -eps * sigma.get(j, x));
                for c in acc.row_mut(x).iter_mut() {
                    *c *= phase;
                }
            }
        }
        Ok(&self.half * acc)
    }

    pub fn monodromy(&self, sigma: &SigmaField) -> Result<DMatrix<Complex64>> {
        self.segment(sigma, 0, self.grid.slices())
    }
}

/// Γ(ν, 0; iσ) with symmetric (Strang) splitting over the slices of `grid`.
pub fn monodromy(
    geom: &TorusGeometry,
    grid: TimeGrid,
    sigma: &SigmaField,
) -> Result<DMatrix<Complex64>> {
    SlicePropagator::new(geom, grid)?.monodromy(sigma)
}

/// Geometry, potential and parameters bundled for the estimators.
#[derive(Clone, Debug, PartialEq)]
pub struct System {
    pub geom: TorusGeometry,
    pub potential: TwoBodyPotential,
    pub params: ModelParams,
}

impl System {
    pub fn new(geom: TorusGeometry, potential: TwoBodyPotential, params: ModelParams) -> Result<Self> {
        params.validate()?;
        match (&potential, geom.domain()) {
            (TwoBodyPotential::Lattice { values, .. }, Domain::Lattice) if values.len() == geom.sites() => {}
            (TwoBodyPotential::Circle { circumference, .. }, Domain::Circle { circumference: l })
                if *circumference == l => {}
            _ => return Err(Error::Shape("potential does not match geometry".into())),
        }
        let report = validate_potential(&geom, &potential);
        if !report.passed {
            return Err(Error::Potential(format!(
                "evenness residual {:.3e}, min Fourier coefficient {:.3e}",
                report.evenness_residual, report.min_fourier
            )));
        }
        Ok(System {
            geom,
            potential,
            params,
        })
    }

    pub fn rho(&self) -> Result<f64> {
        self.params.rho_value(&self.geom)
    }

    /// κ(ρ) for the resolved ρ.
    pub fn kappa_rho(&self) -> Result<f64> {
        Ok(self.params.kappa_rho(self.rho()?, &self.potential))
    }

    pub fn with_params(&self, params: ModelParams) -> Result<Self> {
        params.validate()?;
        Ok(System {
            params,
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn spectrum_small_rings() {
        let one = TorusGeometry::lattice(1, 1).unwrap();
        assert_eq!(laplacian_spectrum(&one).unwrap()[0].0, 0.0);
        let two = TorusGeometry::lattice(1, 2).unwrap();
        let ev: Vec<f64> = laplacian_spectrum(&two).unwrap().iter().map(|p| p.0).collect();
        assert!((ev[0] - 0.0).abs() < 1e-15 && (ev[1] + 4.0).abs() < 1e-15);
        let four = TorusGeometry::lattice(1, 4).unwrap();
        let ev: Vec<f64> = laplacian_spectrum(&four).unwrap().iter().map(|p| p.0).collect();
        for (a, b) in ev.iter().zip([0.0, -2.0, -4.0, -2.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn spectrum_matches_dense_eigensolver() {
        for (d, m) in [(1, 5), (2, 3), (3, 2), (2, 4)] {
            let g = TorusGeometry::lattice(d, m).unwrap();
            let dense = SymmetricEigen::new(g.laplacian_matrix().unwrap()).eigenvalues;
            let formula: Vec<f64> = laplacian_spectrum(&g).unwrap().iter().map(|p| p.0).collect();
            let zeros = formula.iter().filter(|e| e.abs() < 1e-12).count();
            assert_eq!(zeros, 1);
            for (a, b) in sorted(dense.iter().cloned().collect()).iter().zip(sorted(formula)) {
                assert!((a - b).abs() < 1e-12, "d={d} m={m}");
            }
        }
    }

    #[test]
    fn plane_waves_are_orthonormal_eigenvectors() {
        let g = TorusGeometry::lattice(2, 3).unwrap();
        let lap = g.laplacian_matrix().unwrap().map(|x| Complex64::new(x, 0.0));
        let spec = laplacian_spectrum(&g).unwrap();
        for k in 0..g.sites() {
            let w = plane_wave(&g, k).unwrap();
            let r = &lap * &w - &w * Complex64::new(spec[k].0, 0.0);
            assert!(r.norm() < 1e-12);
            for q in 0..g.sites() {
                let ip = w.dotc(&plane_wave(&g, q).unwrap());
                let expect = if k == q { 1.0 } else { 0.0 };
                assert!((ip - Complex64::new(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn heat_propagator_examples() {
        let g = TorusGeometry::lattice(1, 2).unwrap();
        let h0 = heat_propagator(&g, 0.0).unwrap();
        assert!((h0 - DMatrix::identity(2, 2)).norm() < 1e-15);
        let h = heat_propagator(&g, 1.0).unwrap();
        let e2 = (-2.0f64).exp();
        assert!((h[(0, 0)] - (1.0 + e2) / 2.0).abs() < 1e-15);
        assert!((h[(0, 1)] - (1.0 - e2) / 2.0).abs() < 1e-15);
        assert!(heat_propagator(&g, -1.0).is_err());
        let p = circle_density(100.0, 1.0, 3.0, 3.0).unwrap();
        assert!((p - (2.0 * PI).sqrt().recip()).abs() < 1e-15);
    }

    #[test]
    fn heat_semigroup_and_stochasticity() {
        let g = TorusGeometry::lattice(2, 3).unwrap();
        let (s, t) = (0.37, 1.21);
        let lhs = heat_propagator(&g, s).unwrap() * heat_propagator(&g, t).unwrap();
        let rhs = heat_propagator(&g, s + t).unwrap();
        assert!((lhs - &rhs).amax() < 1e-12);
        for r in 0..g.sites() {
            assert!((rhs.row(r).sum() - 1.0).abs() < 1e-12);
            assert!(rhs.row(r).iter().all(|&x| x >= 0.0));
        }
        let dense = (g.laplacian_matrix().unwrap() * (0.5 * t)).exp();
        assert!((dense - heat_propagator(&g, t).unwrap()).amax() < 1e-12);
    }

    #[test]
    fn circle_density_two_representations_agree() {
        let l = 4.0;
        let cut = l * l / (2.0 * PI);
        for dx in [0.0, 0.7, 1.9, 3.5] {
            let below = circle_density(l, cut * 0.999, dx, 0.0).unwrap();
            let above = circle_density(l, cut * 1.001, dx, 0.0).unwrap();
            assert!((below - above).abs() < 2e-3 * below);
        }
        let total = crate::quad::integrate(|x| circle_density(l, 0.8, x, 0.3).unwrap(), 0.0, l, 1e-13, 1e-13);
        assert!((total.value.re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_green_examples() {
        let one = TorusGeometry::lattice(1, 1).unwrap();
        let e1 = (-1.0f64).exp();
        assert!((free_green(&one, 1.0, 1.0).unwrap()[(0, 0)] - e1 / (1.0 - e1)).abs() < 1e-15);
        assert!(free_green(&one, 1.0, 0.0).is_err());
        assert!(free_green(&one, 1.0, 60.0).unwrap()[(0, 0)] < 1e-25);
        let two = TorusGeometry::lattice(1, 2).unwrap();
        let mut winding = DMatrix::zeros(2, 2);
        for l in 1..=50 {
            winding += heat_propagator(&two, l as f64).unwrap() * (-(l as f64)).exp();
        }
        let fg = free_green(&two, 1.0, 1.0).unwrap();
        assert!((fg.clone() - winding).amax() < 1e-12);
        assert!((fg[(0, 0)] - ideal_occupation(&two, 1.0, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn potential_validation() {
        let g = TorusGeometry::lattice(1, 4).unwrap();
        assert!(validate_potential(&g, &TwoBodyPotential::zero(&g).unwrap()).passed);
        let d = TwoBodyPotential::delta(&g, 1.0).unwrap();
        assert!(validate_potential(&g, &d).passed);
        assert!(d.fourier().unwrap().iter().all(|c| (c - 0.25).abs() < 1e-15));
        let cos = TwoBodyPotential::from_values(&g, vec![-1.0, 0.0, 1.0, 0.0]).unwrap();
        let report = validate_potential(&g, &cos);
        assert!(!report.passed);
        assert_eq!(report.negative_modes.len(), 2);
        assert_eq!(report.negative_modes[0].0, vec![1]);
        let odd = TwoBodyPotential::from_values(&g, vec![1.0, 0.5, 0.0, 0.2]).unwrap();
        assert!(!validate_potential(&g, &odd).passed);
        let gauss = TwoBodyPotential::gaussian(&g, 1.0, 0.8).unwrap();
        assert!(validate_potential(&g, &gauss).passed);
    }

    fn random_sigma(rng: &mut ChaCha8Rng, slices: usize, sites: usize) -> SigmaField {
        let values = (0..slices * sites).map(|_| rng.random_range(-3.0..3.0)).collect();
        SigmaField::from_values(slices, sites, values).unwrap()
    }

    #[test]
    fn monodromy_trivial_cases() {
        let g = TorusGeometry::lattice(1, 3).unwrap();
        let grid = TimeGrid::new(1.3, 7).unwrap();
        let m = monodromy(&g, grid, &SigmaField::zeros(7, 3)).unwrap();
        let exact = heat_propagator(&g, 1.3).unwrap().map(|x| Complex64::new(x, 0.0));
        assert!((m - exact).camax() < 1e-13);
        let one = TorusGeometry::lattice(1, 1).unwrap();
        let m = monodromy(&one, grid, &SigmaField::constant(7, 1, 0.9)).unwrap();
        assert!((m[(0, 0)] - Complex64::from_polar(1.0, -0.9 * 1.3)).norm() < 1e-13);
        assert!(monodromy(&g, grid, &SigmaField::zeros(6, 3)).is_err());
    }

    #[test]
    fn monodromy_second_order_in_step() {
        let g = TorusGeometry::lattice(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // smooth σ(τ) sampled at slice midpoints so refinement is meaningful
        let (a, b) = ([rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)], [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
        let field = |n: usize| {
            let eps = 1.0 / n as f64;
            let mut v = Vec::new();
            for j in 0..n {
                let t = (j as f64 + 0.5) * eps;
                for x in 0..2 {
                    v.push(a[x] + b[x] * (2.0 * PI * t).sin());
                }
            }
            SigmaField::from_values(n, 2, v).unwrap()
        };
        let m = |n: usize| monodromy(&g, TimeGrid::new(1.0, n).unwrap(), &field(n)).unwrap();
        let (m8, m16, m32) = (m(8), m(16), m(32));
        let (d1, d2) = ((&m8 - &m16).camax(), (&m16 - &m32).camax());
        assert!((d1 / d2 - 4.0).abs() < 0.5, "ratio {}", d1 / d2);
    }

    #[test]
    fn monodromy_contraction_and_periodicity() {
        let g = TorusGeometry::lattice(2, 2).unwrap();
        let grid = TimeGrid::new(0.8, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prop = SlicePropagator::new(&g, grid).unwrap();
        for _ in 0..50 {
            let s = random_sigma(&mut rng, 5, 4);
            let m = prop.monodromy(&s).unwrap();
            let top = m.singular_values().max();
            assert!(top <= 1.0 + 1e-12);
            // two periods on a doubled grid with the field repeated
            let twice = {
                let mut v = Vec::new();
                for _ in 0..2 {
                    for j in 0..5 {
                        v.extend_from_slice(s.slice(j));
                    }
                }
                SigmaField::from_values(10, 4, v).unwrap()
            };
            let m2 = monodromy(&g, TimeGrid::new(1.6, 10).unwrap(), &twice).unwrap();
            assert!((m2 - &m * &m).camax() < 1e-12);
            let split = prop.segment(&s, 2, 5).unwrap() * prop.segment(&s, 0, 2).unwrap();
            assert!((split - m).camax() < 1e-12);
        }
    }

    #[test]
    fn time_grid_endpoints() {
        let grid = TimeGrid::new(0.1, 3).unwrap();
        assert_eq!(grid.time(3), 0.1);
        assert_eq!(grid.boundary_of(0.1 / 3.0), Some(1));
        assert_eq!(grid.boundary_of(0.05), None);
        assert!(TimeGrid::new(0.0, 3).is_err());
    }

    #[test]
    fn meanfield_coupling_scales() {
        let p = ModelParams {
            nu: 0.5,
            kappa0: 1.0,
            lambda0: 2.0,
            species: 3.0,
            coupling: Coupling::MeanField,
            rho: RhoMode::Explicit(0.0),
        };
        assert!((p.lambda() - 2.0 * 0.25 / 4.0).abs() < 1e-15);
    }
}
