//! Limit regimes: the classical point gas and its activity schedule, the
//! constant-field saddle point of the spherical (large-N) limit, and sweeps
//! that measure how the quantum estimators approach each limit.
//!
//! Saddle equation. With λ = λ₀ν²/(N+1) and the ρ-shifted interaction
//! (λ/2)Σ(n_x − Nρ/ν)v(n_y − Nρ/ν), stationarity of the effective action
//! over constant imaginary fields σ = −is gives the self-consistent shift
//!
//!   s = (Nλ/ν²)·Σ_x v(x)·(ν·n(κ₀ + s) − ρ),
//!
//! n(κ) = |Λ|⁻¹Σ_k (e^{ν(ε_k+κ)} − 1)⁻¹ the ideal occupation per site and
//! species. For the mean-field coupling the prefactor is λ₀N/(N+1). The
//! right side vanishes at ρ = ν·n(κ₀), and it decreases in s, so the root is
//! unique on s > −κ₀ − min ε.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hs;
use crate::lattice::{
    free_green, ideal_occupation, ideal_occupation_derivative, Coupling, Domain, ModelParams,
    RhoMode, System, TimeGrid, TorusGeometry, TwoBodyPotential,
};
use crate::loopgas::{self, Truncation};
use crate::meanfield::{self, FieldModel};
use crate::stats::{self, ComplexEstimate};

pub const MAX_CLASSICAL_ORDER: usize = 8;

/// κ with e^{−κν}·ν^{−d/2} = z.
pub fn activity_to_kappa(z: f64, nu: f64, d: usize) -> Result<f64> {
    if !(z > 0.0) || !(nu > 0.0) {
        return Err(Error::Domain(format!("need z > 0 and ν > 0, got z = {z}, ν = {nu}")));
    }
    Ok(-(z * nu.powf(0.5 * d as f64)).ln() / nu)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalXi {
    pub value: f64,
    /// Per-order terms (zN)ⁿ/n!·∫e^{−U}.
    pub terms: Vec<f64>,
    /// Relative weight of orders above n_max for v ≡ 0.
    pub tail: f64,
    /// Largest change of any order under the last grid refinement.
    pub quadrature_change: f64,
    pub flagged: bool,
}

/// Σ over multisets of grid indices for points 2..n with point 1 pinned at
/// the origin; `pair[d]` is λ₀·v at grid displacement d.
fn pinned_sum(n: usize, m: usize, pair: &[f64], self_energy: f64, disp: &dyn Fn(usize, usize) -> usize) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(
        idx: &mut Vec<usize>,
        start: usize,
        left: usize,
        m: usize,
        energy: f64,
        weight: f64,
        run: usize,
        pair: &[f64],
        disp: &dyn Fn(usize, usize) -> usize,
    ) -> f64 {
        if left == 0 {
            return weight * (-energy).exp();
        }
        let mut total = 0.0;
        for i in start..m {
            let e: f64 = idx.iter().map(|&j| pair[disp(i, j)]).sum();
            let same = idx.len() > 1 && *idx.last().unwrap() == i;
            let r = if same { run + 1 } else { 1 };
            idx.push(i);
            // multinomial weight: divide by the run length of equal indices
            total += rec(idx, i, left - 1, m, energy + e, weight / r as f64, r, pair, disp);
            idx.pop();
        }
        total
    }
    let mut idx = vec![0usize];
    let factorial: f64 = (1..n).map(|k| k as f64).product();
    factorial * rec(&mut idx, 0, n - 1, m, n as f64 * self_energy, 1.0, 0, pair, disp)
}

/// Ξ_cl = Σ_{n≤n_max} (zN)ⁿ/n!·∫Π du_k exp(−(λ₀/2)Σ_{i,j}v(u_i − u_j)), self
/// terms included. Lattice domains sum over sites; on the circle the
/// integral is a periodic trapezoid rule, refined by doubling until every
/// order changes by less than 10⁻⁸ relative to Ξ_cl.
pub fn classical_xi(
    z: f64,
    lambda0: f64,
    species: f64,
    geom: &TorusGeometry,
    potential: &TwoBodyPotential,
    n_max: usize,
    tolerance: f64,
) -> Result<ClassicalXi> {
    if n_max > MAX_CLASSICAL_ORDER {
        return Err(Error::Capacity(format!("n_max = {n_max} > {MAX_CLASSICAL_ORDER}")));
    }
    let zn = z * species;
    let volume = geom.volume();
    let ideal = loopgas::exp_partial(zn * volume, n_max);
    let tail = ((zn * volume).exp() - ideal) / ideal;
    let self_energy = 0.5 * lambda0 * potential.v0();
    let orders = |m: usize, pair: &[f64], cell: f64, disp: &dyn Fn(usize, usize) -> usize| -> Vec<f64> {
        let coeff = loopgas::exp_coefficients(zn, n_max);
        (0..=n_max)
            .map(|n| {
                if n == 0 {
                    1.0
                } else {
                    coeff[n] * volume * cell.powi(n as i32 - 1) * pinned_sum(n, m, pair, self_energy, disp)
                }
            })
            .collect()
    };
    let (terms, change) = match geom.domain() {
        Domain::Lattice => {
            let sites = geom.sites();
            let pair: Vec<f64> = (0..sites).map(|d| lambda0 * potential.at(d)).collect();
            let disp = |i: usize, j: usize| geom.displacement(i, j);
            (orders(sites, &pair, 1.0, &disp), 0.0)
        }
        Domain::Circle { circumference } => {
            let mut m = 8;
            let mut prev: Option<Vec<f64>> = None;
            loop {
                let h = circumference / m as f64;
                let pair: Vec<f64> = (0..m).map(|d| lambda0 * potential.eval(d as f64 * h)).collect();
                let disp = move |i: usize, j: usize| (i + m - j) % m;
                let cur = orders(m, &pair, h, &disp);
                if let Some(p) = prev {
                    let total: f64 = cur.iter().sum();
                    let change = cur
                        .iter()
                        .zip(&p)
                        .map(|(a, b)| (a - b).abs() / total)
                        .fold(0.0, f64::max);
                    if change < 1e-8 || m >= 64 {
                        break (cur, change);
                    }
                }
                prev = Some(cur);
                m *= 2;
            }
        }
    };
    let value = terms.iter().sum();
    Ok(ClassicalXi {
        value,
        terms,
        tail,
        quadrature_change: change,
        flagged: tail > tolerance || change > 1e-8,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleState {
    pub shift: f64,
    pub kappa_ren: f64,
    pub residual: f64,
}

/// Solve the constant-field saddle equation by Newton steps safeguarded
/// with bisection.
pub fn saddle_point(sys: &System) -> Result<SaddleState> {
    let p = &sys.params;
    let geom = &sys.geom;
    let rho = sys.rho()?;
    let c = p.species * p.lambda() / (p.nu * p.nu) * sys.potential.total();
    if c == 0.0 {
        return Ok(SaddleState {
            shift: 0.0,
            kappa_ren: p.kappa0,
            residual: 0.0,
        });
    }
    let e_min = geom
        .kinetic_energies()?
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let f = |s: f64| -> Result<f64> { Ok(s - c * (p.nu * ideal_occupation(geom, p.nu, p.kappa0 + s)? - rho)) };
    let df = |s: f64| -> Result<f64> { Ok(1.0 - c * p.nu * ideal_occupation_derivative(geom, p.nu, p.kappa0 + s)?) };
    let floor = -p.kappa0 - e_min;
    let mut lo = floor + 1e-6 * (1.0 + p.kappa0.abs());
    if f(lo)? > 0.0 {
        return Err(Error::RootNotFound(format!(
            "saddle equation positive at the lower end s = {lo}"
        )));
    }
    let mut hi = 1.0f64.max(c.abs());
    let mut grow = 0;
    while f(hi)? < 0.0 {
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(Error::RootNotFound("no sign change in the saddle bracket".into()));
        }
    }
    let mut s = if lo < 0.0 && 0.0 < hi { 0.0 } else { 0.5 * (lo + hi) };
    for _ in 0..200 {
        let fs = f(s)?;
        if fs.abs() <= 1e-12 {
            break;
        }
        if fs < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = s - fs / df(s)?;
        s = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-15 * (1.0 + s.abs()) {
            break;
        }
    }
    let residual = f(s)?.abs();
    if residual > 1e-10 {
        return Err(Error::RootNotFound(format!("residual {residual:.3e}")));
    }
    Ok(SaddleState {
        shift: s,
        kappa_ren: p.kappa0 + s,
        residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: f64,
    pub estimate: ComplexEstimate,
    pub reference: f64,
    pub discrepancy: f64,
    pub discrepancy_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitSweep {
    pub name: String,
    pub points: Vec<SweepPoint>,
    /// Every step decreases the discrepancy by more than one combined error.
    pub decreasing: bool,
    pub final_within: Option<bool>,
}

impl LimitSweep {
    fn new(name: &str, points: Vec<SweepPoint>, final_tolerance: Option<f64>) -> Self {
        let decreasing = points.windows(2).all(|w| {
            let err = (w[0].discrepancy_err.powi(2) + w[1].discrepancy_err.powi(2)).sqrt();
            w[1].discrepancy < w[0].discrepancy - err
        });
        let final_within = final_tolerance.and_then(|t| points.last().map(|p| p.discrepancy < t));
        LimitSweep {
            name: name.to_string(),
            points,
            decreasing,
            final_within,
        }
    }
}

fn require_monotone(list: &[f64], decreasing: bool, what: &str) -> Result<()> {
    let ok = list
        .windows(2)
        .all(|w| if decreasing { w[1] < w[0] } else { w[1] > w[0] });
    if list.is_empty() || !ok {
        let dir = if decreasing { "decreasing" } else { "increasing" };
        return Err(Error::Domain(format!("{what} must be non-empty and strictly {dir}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalBenchmark {
    pub z: f64,
    pub lambda0: f64,
    pub species: f64,
    pub circumference: f64,
    pub amplitude: f64,
    pub width: f64,
}

impl Default for ClassicalBenchmark {
    fn default() -> Self {
        ClassicalBenchmark {
            z: 0.5,
            lambda0: 0.5,
            species: 1.0,
            circumference: 4.0,
            amplitude: 1.0,
            width: 1.0,
        }
    }
}

/// Loop-gas series on the circle with κ(ν) from the activity schedule
/// against the classical gas at activity z·(2π)^{−1/2}, the ν → 0 weight of
/// a one-winding loop per unit length.
pub fn classical_limit_sweep(
    bench: ClassicalBenchmark,
    nu_list: &[f64],
    slices: usize,
    trunc: Truncation,
    samples: usize,
    seed: u64,
) -> Result<LimitSweep> {
    require_monotone(nu_list, true, "ν list")?;
    let geom = TorusGeometry::circle(bench.circumference)?;
    let v = TwoBodyPotential::gaussian(&geom, bench.amplitude, bench.width)?;
    let z_eff = bench.z / (2.0 * PI).sqrt();
    let reference = classical_xi(
        z_eff,
        bench.lambda0,
        bench.species,
        &geom,
        &v,
        trunc.n_max.min(MAX_CLASSICAL_ORDER),
        trunc.tolerance,
    )?;
    let mut points = Vec::with_capacity(nu_list.len());
    for (k, &nu) in nu_list.iter().enumerate() {
        let kappa = activity_to_kappa(bench.z, nu, 1)?;
        let params = ModelParams {
            nu,
            kappa0: kappa,
            lambda0: bench.lambda0,
            species: bench.species,
            coupling: Coupling::Fixed,
            rho: RhoMode::Explicit(0.0),
        };
        let sys = System::new(geom.clone(), v.clone(), params)?;
        let grid = TimeGrid::new(nu, slices)?;
        let est = loopgas::raw_series(&sys, grid, kappa, trunc, samples, stats::chain_seed(seed, k as u64))?;
        let e = est.estimate;
        points.push(SweepPoint {
            parameter: nu,
            discrepancy: (e.re / reference.value - 1.0).abs(),
            discrepancy_err: e.stderr_re / reference.value,
            reference: reference.value,
            estimate: e,
        });
    }
    Ok(LimitSweep::new("classical", points, Some(0.05)))
}

/// Field-side ⟨φ̄(x)φ(y)⟩ per species: radial quadrature on one site,
/// Metropolis otherwise.
pub fn field_two_point(model: &FieldModel, x: usize, y: usize, sweeps: usize, seed: u64) -> Result<(f64, f64)> {
    if model.geom.sites() == 1 {
        let r = meanfield::radial_moments(model)?;
        return Ok((r.norm2 / model.species, r.error * r.norm2 / model.species));
    }
    let run = meanfield::sample_gibbs_field(model, sweeps, seed)?;
    let e = run.two_point(x, 0, y, 0);
    Ok((e.re, e.stderr_re))
}

/// ν·γ₁^{(ν)}(x, y) from the auxiliary-field estimator (mean-field coupling,
/// ρ at the Wick value, fixed slice width ε) against the classical field.
#[allow(clippy::too_many_arguments)]
pub fn meanfield_sweep(
    geom: &TorusGeometry,
    potential: &TwoBodyPotential,
    kappa0: f64,
    lambda0: f64,
    species: f64,
    nu_list: &[f64],
    eps: f64,
    (x, y): (usize, usize),
    samples: usize,
    seed: u64,
) -> Result<LimitSweep> {
    require_monotone(nu_list, true, "ν list")?;
    let model = FieldModel::new(geom.clone(), potential.clone(), kappa0, lambda0, species, 0.0)?;
    let (field, field_err) = field_two_point(&model, x, y, samples, seed)?;
    let mut points = Vec::with_capacity(nu_list.len());
    for (k, &nu) in nu_list.iter().enumerate() {
        let params = ModelParams {
            nu,
            kappa0,
            lambda0,
            species,
            coupling: Coupling::MeanField,
            rho: RhoMode::Wick,
        };
        let sys = System::new(geom.clone(), potential.clone(), params)?;
        let slices = ((nu / eps).round() as usize).max(1);
        let grid = TimeGrid::new(nu, slices)?;
        let g = hs::estimate_gamma1(&sys, grid, x, y, samples, stats::chain_seed(seed, k as u64))?;
        let scaled = g.scale(nu);
        points.push(SweepPoint {
            parameter: nu,
            discrepancy: (scaled.re - field).abs(),
            discrepancy_err: (scaled.stderr_re.powi(2) + field_err.powi(2)).sqrt(),
            reference: field,
            estimate: scaled,
        });
    }
    Ok(LimitSweep::new("meanfield", points, None))
}

/// γ₁(x, x′) from the auxiliary-field estimator at growing N with the
/// mean-field coupling, against the ideal gas at the saddle κ_ren.
#[allow(clippy::too_many_arguments)]
pub fn large_n_check(
    geom: &TorusGeometry,
    potential: &TwoBodyPotential,
    base: ModelParams,
    n_list: &[f64],
    grid: TimeGrid,
    (x, xp): (usize, usize),
    samples: usize,
    seed: u64,
) -> Result<(LimitSweep, Vec<SaddleState>)> {
    require_monotone(n_list, false, "N list")?;
    let mut points = Vec::with_capacity(n_list.len());
    let mut saddles = Vec::with_capacity(n_list.len());
    for (k, &n) in n_list.iter().enumerate() {
        let params = ModelParams {
            species: n,
            coupling: Coupling::MeanField,
            ..base
        };
        let sys = System::new(geom.clone(), potential.clone(), params)?;
        let saddle = saddle_point(&sys)?;
        let reference = free_green(geom, base.nu, saddle.kappa_ren)?[(x, xp)];
        let g = hs::estimate_gamma1(&sys, grid, x, xp, samples, stats::chain_seed(seed, k as u64))?;
        points.push(SweepPoint {
            parameter: n,
            discrepancy: (g.re - reference).abs(),
            discrepancy_err: g.stderr_re,
            reference,
            estimate: g,
        });
        saddles.push(saddle);
    }
    Ok((LimitSweep::new("large_n", points, None), saddles))
}

/// Relative size of non-tree to tree contributions of the n-th cluster
/// coefficient, as a function of N at mean-field coupling.
pub fn non_tree_fraction(poly: &crate::mayer::NPolynomial, order: usize) -> Option<f64> {
    let c = poly.coefficients.get(order - 1)?;
    let t = poly.tree_parts.get(order - 1)?;
    (t.0 != 0.0).then(|| ((c.0 - t.0) / t.0).abs())
}

/// One record per sweep point: (parameter, estimate, stderr, n, ess).
pub fn sweep_rows(sweep: &LimitSweep) -> Vec<(f64, Complex64, Complex64, u64, f64)> {
    sweep
        .points
        .iter()
        .map(|p| {
            let e = &p.estimate;
            (
                p.parameter,
                e.value(),
                Complex64::new(e.stderr_re, e.stderr_im),
                e.samples,
                e.ess,
            )
        })
        .collect()
}
