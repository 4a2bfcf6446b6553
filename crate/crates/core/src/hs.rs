//! Auxiliary-field route: Gaussian σ on time slices, the determinant
//! formula for the relative partition function and reweighting estimators.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{
    heat_propagator, ideal_log_xi, ideal_occupation, SlicePropagator, System, TimeGrid,
    TorusGeometry, TwoBodyPotential, POSITIVE_TYPE_TOL,
};
use crate::quad;
use crate::stats::{self, ComplexEstimate};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// σ_j(x) for slices j = 0..n_τ (slice-major storage).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaField {
    slices: usize,
    sites: usize,
    values: Vec<f64>,
    pub seed: Option<u64>,
}

impl SigmaField {
    pub fn zeros(slices: usize, sites: usize) -> Self {
        SigmaField {
            slices,
            sites,
            values: vec![0.0; slices * sites],
            seed: None,
        }
    }

    pub fn constant(slices: usize, sites: usize, s: f64) -> Self {
        SigmaField {
            values: vec![s; slices * sites],
            ..Self::zeros(slices, sites)
        }
    }

    pub fn from_values(slices: usize, sites: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != slices * sites {
            return Err(Error::Shape(format!(
                "{} values for {slices} slices x {sites} sites",
                values.len()
            )));
        }
        Ok(SigmaField {
            slices,
            sites,
            values,
            seed: None,
        })
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    #[inline]
    pub fn get(&self, slice: usize, site: usize) -> f64 {
        self.values[slice * self.sites + site]
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        &self.values[j * self.sites..(j + 1) * self.sites]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&s| s == 0.0)
    }
}

/// Draws σ with per-slice covariance (λ/(νε))·v as filtered white noise.
#[derive(Clone, Debug)]
pub struct SigmaSampler {
    filter: DMatrix<f64>,
    scale: f64,
    slices: usize,
}

impl SigmaSampler {
    pub fn new(sys: &System, grid: TimeGrid) -> Result<Self> {
        let geom = &sys.geom;
        let fourier = sys
            .potential
            .fourier()
            .ok_or(Error::UnsupportedMode("circle"))?;
        let n = geom.sites();
        let mut root = Vec::with_capacity(n);
        for (k, &c) in fourier.iter().enumerate() {
            if c < -POSITIVE_TYPE_TOL {
                return Err(Error::Potential(format!(
                    "mode {:?} has coefficient {c:.3e}",
                    geom.coords(k)
                )));
            }
            root.push((n as f64 * c.max(0.0)).sqrt());
        }
        let filter = geom.circulant(&geom.mode_kernel(&root)?);
        let lambda = sys.params.lambda();
        Ok(SigmaSampler {
            filter,
            scale: (lambda / (grid.nu() * grid.step())).sqrt(),
            slices: grid.slices(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SigmaField {
        let n = self.filter.nrows();
        if self.scale == 0.0 {
            return SigmaField::zeros(self.slices, n);
        }
        let mut values = Vec::with_capacity(self.slices * n);
        for _ in 0..self.slices {
            let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let s = &self.filter * xi;
            values.extend(s.iter().map(|v| v * self.scale));
        }
        SigmaField {
            slices: self.slices,
            sites: n,
            values,
            seed: None,
        }
    }
}

pub fn sample_sigma(sys: &System, grid: TimeGrid, seed: u64) -> Result<SigmaField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = SigmaSampler::new(sys, grid)?.sample(&mut rng);
    s.seed = Some(seed);
    Ok(s)
}

/// ρ for which the phase cancels the linear-in-σ part of the determinant.
pub fn wick_rho(sys: &System) -> Result<f64> {
    let p = &sys.params;
    if !(p.kappa0 > 0.0) {
        return Err(Error::DivergentSeries(format!("kappa0 = {}", p.kappa0)));
    }
    Ok(p.nu * ideal_occupation(&sys.geom, p.nu, p.kappa0)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HsWeight {
    pub theta: f64,
    /// ln det(1 − M_σ) − ln det(1 − M_0)
    pub logdet_diff: Complex64,
    /// iNθ − N·D
    pub exponent: Complex64,
}

impl HsWeight {
    pub fn weight(&self) -> Complex64 {
        self.exponent.exp()
    }
}

/// ln det(1 − M) on the branch continuous from M = 0: the sum of principal
/// logarithms of 1 − μ over the eigenvalues μ of M.
pub fn log_det_one_minus(m: &DMatrix<Complex64>) -> Result<Complex64> {
    let n = m.nrows();
    let a = DMatrix::<Complex64>::identity(n, n) - m;
    let det = a.clone().lu().determinant();
    if det.norm() == 0.0 || !det.is_finite() {
        return Err(Error::Singular("1 - M".into()));
    }
    if let Some(eig) = m.clone().eigenvalues() {
        let log: Complex64 = eig.iter().map(|mu| (Complex64::new(1.0, 0.0) - mu).ln()).sum();
        if ((log.exp() - det).norm()) <= 1e-8 * det.norm() {
            return Ok(log);
        }
    }
    Ok(det.ln())
}

/// Shared precomputation for weights and kernels on one grid.
#[derive(Clone, Debug)]
pub struct HsEngine {
    sys: System,
    grid: TimeGrid,
    prop: SlicePropagator,
    sampler: SigmaSampler,
    decay: f64,
    logdet0: f64,
    rho: f64,
}

impl HsEngine {
    pub fn new(sys: &System, grid: TimeGrid) -> Result<Self> {
        let p = &sys.params;
        if (grid.nu() - p.nu).abs() > 1e-14 * p.nu {
            return Err(Error::Shape(format!("grid ν {} ≠ model ν {}", grid.nu(), p.nu)));
        }
        Ok(HsEngine {
            prop: SlicePropagator::new(&sys.geom, grid)?,
            sampler: SigmaSampler::new(sys, grid)?,
            decay: (-p.nu * p.kappa0).exp(),
            logdet0: -ideal_log_xi(&sys.geom, p.nu, p.kappa0)?,
            rho: sys.rho()?,
            sys: sys.clone(),
            grid,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SigmaField {
        self.sampler.sample(rng)
    }

    pub fn monodromy(&self, sigma: &SigmaField) -> Result<DMatrix<Complex64>> {
        self.prop.monodromy(sigma)
    }

    pub fn theta(&self, sigma: &SigmaField) -> f64 {
        self.rho / self.grid.nu() * self.grid.step() * sigma.sum()
    }

    fn weight_from(&self, sigma: &SigmaField, gamma: &DMatrix<Complex64>) -> Result<HsWeight> {
        let n_species = self.sys.params.species;
        if sigma.is_zero() {
            return Ok(HsWeight {
                theta: 0.0,
                logdet_diff: Complex64::new(0.0, 0.0),
                exponent: Complex64::new(0.0, 0.0),
            });
        }
        let m = gamma * Complex64::new(self.decay, 0.0);
        let d = log_det_one_minus(&m)? - self.logdet0;
        let theta = self.theta(sigma);
        Ok(HsWeight {
            theta,
            logdet_diff: d,
            exponent: I * (n_species * theta) - d * n_species,
        })
    }

    pub fn log_weight(&self, sigma: &SigmaField) -> Result<HsWeight> {
        let gamma = self.monodromy(sigma)?;
        self.weight_from(sigma, &gamma)
    }

    /// k_σ(τ, x; τ′, x′) for slice boundaries a ≤ b < n_τ, together with
    /// the weight of σ.
    pub fn weighted_kernel(
        &self,
        sigma: &SigmaField,
        a: usize,
        b: usize,
        x: usize,
        xp: usize,
    ) -> Result<(HsWeight, Complex64)> {
        let n = self.grid.slices();
        let kappa = self.sys.params.kappa0;
        let nu = self.grid.nu();
        let g_b0 = self.prop.segment(sigma, 0, b)?;
        let g_na = self.prop.segment(sigma, a, n)?;
        let g_a0 = self.prop.segment(sigma, 0, a)?;
        let gamma = &g_na * &g_a0;
        let w = self.weight_from(sigma, &gamma)?;
        let sites = gamma.nrows();
        let one_minus = DMatrix::<Complex64>::identity(sites, sites) - &gamma * Complex64::new(self.decay, 0.0);
        let col = g_na.column(xp).into_owned();
        let y = one_minus
            .lu()
            .solve(&col)
            .ok_or_else(|| Error::Singular("1 - M".into()))?;
        let dt = self.grid.time(b) - self.grid.time(a);
        let wrapped: Complex64 = (0..sites).map(|z| g_b0[(x, z)] * y[z]).sum();
        let mut k = wrapped * (-kappa * (dt + nu)).exp();
        if b > a {
            let direct = self.prop.segment(sigma, a, b)?;
            k += direct[(x, xp)] * (-kappa * dt).exp();
        }
        Ok((w, k))
    }

    fn boundaries(&self, tau: f64, tau_p: f64) -> Result<(usize, usize)> {
        let nu = self.grid.nu();
        if !(0.0..nu).contains(&tau) || !(0.0..nu).contains(&tau_p) || tau_p > tau {
            return Err(Error::Domain(format!(
                "need 0 ≤ τ′ ≤ τ < ν, got τ = {tau}, τ′ = {tau_p}"
            )));
        }
        let b = self
            .grid
            .boundary_of(tau)
            .ok_or_else(|| Error::Domain(format!("τ = {tau} is not a slice boundary")))?;
        let a = self
            .grid
            .boundary_of(tau_p)
            .ok_or_else(|| Error::Domain(format!("τ′ = {tau_p} is not a slice boundary")))?;
        Ok((a, b))
    }
}

pub fn hs_log_weight(sigma: &SigmaField, sys: &System, grid: TimeGrid) -> Result<HsWeight> {
    HsEngine::new(sys, grid)?.log_weight(sigma)
}

/// Σ_{ℓ=1..ℓ_max} (e^{−ℓνκ₀}/ℓ)·tr[Γ^ℓ − Γ₀^ℓ] and a bound on the tail.
pub fn winding_exponent(
    sigma: &SigmaField,
    sys: &System,
    grid: TimeGrid,
    l_max: usize,
) -> Result<(Complex64, f64)> {
    let p = &sys.params;
    let gamma = SlicePropagator::new(&sys.geom, grid)?.monodromy(sigma)?;
    let gamma0 = heat_propagator(&sys.geom, p.nu)?.map(|v| Complex64::new(v, 0.0));
    let q = (-p.nu * p.kappa0).exp();
    let (mut g, mut g0) = (gamma.clone(), gamma0.clone());
    let mut total = Complex64::new(0.0, 0.0);
    for l in 1..=l_max {
        if l > 1 {
            g = &g * &gamma;
            g0 = &g0 * &gamma0;
        }
        total += (g.trace() - g0.trace()) * (q.powi(l as i32) / l as f64);
    }
    let sites = sys.geom.sites() as f64;
    let next = (l_max + 1) as f64;
    let tail = 2.0 * sites * q.powf(next) / (next * (1.0 - q));
    Ok((total, tail))
}

pub fn estimate_xi_rel(
    sys: &System,
    grid: TimeGrid,
    samples: usize,
    seed: u64,
) -> Result<ComplexEstimate> {
    stats::require_samples(samples, 256)?;
    if sys.params.lambda() == 0.0 {
        return Ok(ComplexEstimate::exact(Complex64::new(1.0, 0.0), samples as u64, seed));
    }
    let engine = HsEngine::new(sys, grid)?;
    let weights = stats::try_parallel_samples(samples, seed, |rng| {
        let sigma = engine.sample(rng);
        Ok(engine.log_weight(&sigma)?.weight())
    })?;
    Ok(ComplexEstimate::from_samples(&weights, &weights, seed))
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_duhamel(
    sys: &System,
    grid: TimeGrid,
    tau: f64,
    x: usize,
    tau_p: f64,
    xp: usize,
    samples: usize,
    seed: u64,
) -> Result<ComplexEstimate> {
    stats::require_samples(samples, 256)?;
    let engine = HsEngine::new(sys, grid)?;
    let (a, b) = engine.boundaries(tau, tau_p)?;
    let sites = sys.geom.sites();
    if x >= sites || xp >= sites {
        return Err(Error::Shape(format!("site out of range for {sites} sites")));
    }
    if sys.params.lambda() == 0.0 {
        let zero = SigmaField::zeros(grid.slices(), sites);
        let (_, k) = engine.weighted_kernel(&zero, a, b, x, xp)?;
        return Ok(ComplexEstimate::exact(k, samples as u64, seed));
    }
    let pairs = stats::try_parallel_samples(samples, seed, |rng| {
        let sigma = engine.sample(rng);
        let (w, k) = engine.weighted_kernel(&sigma, a, b, x, xp)?;
        let w = w.weight();
        Ok((w * k, w))
    })?;
    let (num, den): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(ComplexEstimate::ratio(&num, &den, seed))
}

/// γ₁(x, x′) estimated at τ = τ′ = 0.
pub fn estimate_gamma1(
    sys: &System,
    grid: TimeGrid,
    x: usize,
    xp: usize,
    samples: usize,
    seed: u64,
) -> Result<ComplexEstimate> {
    estimate_duhamel(sys, grid, 0.0, x, 0.0, xp, samples, seed)
}

/// (det A)⁻¹ from exp ∫₀^∞ tr[(A + t)⁻¹ − (1 + t)⁻¹] dt; valid when the
/// Hermitian part of A is positive definite.
pub fn inverse_det_by_quadrature(a: &DMatrix<Complex64>, tol: f64) -> Result<Complex64> {
    let n = a.nrows();
    let ident = DMatrix::<Complex64>::identity(n, n);
    let failed = std::cell::Cell::new(false);
    let r = quad::integrate_to_infinity_complex(
        |t| {
            let shifted = a + &ident * Complex64::new(t, 0.0);
            match shifted.try_inverse() {
                Some(inv) => inv.trace() - Complex64::new(n as f64 / (1.0 + t), 0.0),
                None => {
                    failed.set(true);
                    Complex64::new(0.0, 0.0)
                }
            }
        },
        0.0,
        tol,
        tol,
    );
    if failed.get() {
        return Err(Error::Singular("A + t".into()));
    }
    Ok(quad::require(r, "determinant identity")?.exp())
}

/// System with an on-site potential of the given strength.
pub fn delta_system(
    geom: TorusGeometry,
    strength: f64,
    params: crate::lattice::ModelParams,
) -> Result<System> {
    let v = TwoBodyPotential::delta(&geom, strength)?;
    System::new(geom, v, params)
}
