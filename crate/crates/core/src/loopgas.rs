//! Brownian loop gas: bridge sampling on the slice grid, the two-loop
//! interaction, truncated grand-canonical series, open-path Duhamel
//! estimators and the Symanzik (duration-regularized) variant.
//!
//! Paths are chains of grid points separated by one slice step ε. Point p of
//! a path carries the slice label (start + p) mod n_τ; two points interact
//! only when their labels agree. With this convention the lattice series
//! reproduces the Strang-split auxiliary-field expansion term by term.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{
    heat_propagator, return_density, Domain, System, TimeGrid, TorusGeometry,
    TwoBodyPotential,
};
use crate::quad;
use crate::stats::{self, ComplexEstimate};

/// Below this a transition density counts as zero.
const UNREACHABLE: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Positions {
    Sites(Vec<usize>),
    Circle(Vec<f64>),
}

impl Positions {
    pub fn len(&self) -> usize {
        match self {
            Positions::Sites(v) => v.len(),
            Positions::Circle(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Interacting points of a path and the slice label of the first one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    pub start_label: usize,
    pub points: Positions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopPath {
    pub winding: usize,
    pub duration: f64,
    /// Positions at grid times 0, ε, …, ℓν; the last equals the first.
    pub positions: Positions,
}

impl LoopPath {
    pub fn base(&self) -> Positions {
        match &self.positions {
            Positions::Sites(v) => Positions::Sites(vec![v[0]]),
            Positions::Circle(v) => Positions::Circle(vec![v[0]]),
        }
    }

    /// Interacting points: all grid times except the closing one.
    pub fn grid_path(&self) -> GridPath {
        let points = match &self.positions {
            Positions::Sites(v) => Positions::Sites(v[..v.len() - 1].to_vec()),
            Positions::Circle(v) => Positions::Circle(v[..v.len() - 1].to_vec()),
        };
        GridPath {
            start_label: 0,
            points,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenPath {
    pub from: usize,
    pub to: usize,
    pub duration: f64,
    /// Extra full periods traversed.
    pub winding: usize,
    pub path: GridPath,
}

/// Heat matrices p_{hε/2} for h = 0, 1, 2, … on a lattice.
#[derive(Clone, Debug)]
pub struct HeatTable {
    half_step: f64,
    mats: Vec<DMatrix<f64>>,
}

impl HeatTable {
    pub fn new(geom: &TorusGeometry, grid: TimeGrid, max_half_steps: usize) -> Result<Self> {
        let half_step = 0.5 * grid.step();
        let mats = (0..=max_half_steps)
            .map(|h| heat_propagator(geom, h as f64 * half_step))
            .collect::<Result<_>>()?;
        Ok(HeatTable { half_step, mats })
    }

    #[inline]
    pub fn p(&self, half_steps: usize, x: usize, y: usize) -> f64 {
        self.mats[half_steps][(x, y)]
    }

    pub fn max_half_steps(&self) -> usize {
        self.mats.len() - 1
    }

    pub fn half_step(&self) -> f64 {
        self.half_step
    }
}

/// Sequential bridge sampling: interior points of a chain from `start` to
/// `end` whose consecutive steps last `steps[i]` half-slices.
pub fn sample_chain<R: Rng + ?Sized>(
    table: &HeatTable,
    start: usize,
    end: usize,
    steps: &[usize],
    rng: &mut R,
) -> Result<Vec<usize>> {
    let total: usize = steps.iter().sum();
    if total > table.max_half_steps() {
        return Err(Error::Shape(format!(
            "chain needs {total} half-steps, table has {}",
            table.max_half_steps()
        )));
    }
    if table.p(total, start, end) < UNREACHABLE {
        return Err(Error::Unreachable(format!("{start} -> {end}")));
    }
    let sites = table.mats[0].nrows();
    let mut out = Vec::with_capacity(steps.len().saturating_sub(1));
    let mut cur = start;
    let mut remaining = total;
    for &s in &steps[..steps.len().saturating_sub(1)] {
        let rest = remaining - s;
        let norm = table.p(remaining, cur, end);
        let mut u = rng.random::<f64>() * norm;
        let mut next = sites - 1;
        for z in 0..sites {
            let w = table.p(s, cur, z) * table.p(rest, z, end);
            if u < w {
                next = z;
                break;
            }
            u -= w;
        }
        out.push(next);
        cur = next;
        remaining = rest;
    }
    Ok(out)
}

/// Brownian bridge on the circle from x to y over `steps` equal steps of
/// length `dt`; returns positions at every step (endpoints included),
/// reduced mod L.
pub fn sample_circle_bridge<R: Rng + ?Sized>(
    circumference: f64,
    x: f64,
    y: f64,
    dt: f64,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let l = circumference;
    let t = dt * steps as f64;
    let base = (y - x).rem_euclid(l);
    // winding sector: displacement base + wL with weight exp(−d²/2T)
    let mut sectors = Vec::new();
    let reach = (8.0 * t.sqrt() / l).ceil() as i64 + 1;
    for w in -reach..=reach {
        let d = base + w as f64 * l;
        sectors.push((d, (-d * d / (2.0 * t)).exp()));
    }
    let norm: f64 = sectors.iter().map(|s| s.1).sum();
    if norm < UNREACHABLE {
        return Err(Error::Unreachable(format!("{x} -> {y} in {t}")));
    }
    let mut u = rng.random::<f64>() * norm;
    let mut target = sectors[sectors.len() - 1].0;
    for (d, w) in &sectors {
        if u < *w {
            target = *d;
            break;
        }
        u -= w;
    }
    let mut out = Vec::with_capacity(steps + 1);
    let mut z = 0.0;
    out.push(x.rem_euclid(l));
    for k in 0..steps {
        let s = t - k as f64 * dt;
        if k + 1 == steps {
            z = target;
        } else {
            let mean = z + (target - z) * dt / s;
            let var = dt * (s - dt) / s;
            z = mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        out.push((x + z).rem_euclid(l));
    }
    Ok(out)
}

/// Positions at grid times 0, ε, …, T of a bridge from x to y (lattice
/// sites as f64 indices, or circle coordinates).
pub fn sample_bridge(
    geom: &TorusGeometry,
    x: f64,
    y: f64,
    duration: f64,
    grid: TimeGrid,
    seed: u64,
) -> Result<Positions> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = grid.step();
    let steps = (duration / eps).round();
    if !(duration > 0.0) {
        return Err(Error::Domain(format!("duration {duration}")));
    }
    match geom.domain() {
        Domain::Lattice => {
            if (steps * eps - duration).abs() > 1e-9 * duration {
                return Err(Error::Domain(format!(
                    "duration {duration} is not a multiple of the step {eps}"
                )));
            }
            let steps = steps as usize;
            let (a, b) = (x as usize, y as usize);
            let table = HeatTable::new(geom, grid, 2 * steps)?;
            let inner = sample_chain(&table, a, b, &vec![2; steps], &mut rng)?;
            let mut pos = vec![a];
            pos.extend(inner);
            pos.push(b);
            Ok(Positions::Sites(pos))
        }
        Domain::Circle { circumference } => {
            let steps = (steps as usize).max(1);
            let dt = duration / steps as f64;
            Ok(Positions::Circle(sample_circle_bridge(
                circumference,
                x,
                y,
                dt,
                steps,
                &mut rng,
            )?))
        }
    }
}

/// Pair-potential lookup shared by all interaction evaluations.
#[derive(Clone, Debug)]
pub struct PairTable {
    sites: usize,
    lattice: Vec<f64>,
    circle: Option<TwoBodyPotential>,
}

impl PairTable {
    pub fn new(geom: &TorusGeometry, v: &TwoBodyPotential) -> Self {
        match geom.domain() {
            Domain::Lattice => {
                let n = geom.sites();
                let mut lattice = vec![0.0; n * n];
                for x in 0..n {
                    for y in 0..n {
                        lattice[x * n + y] = v.at(geom.displacement(x, y));
                    }
                }
                PairTable {
                    sites: n,
                    lattice,
                    circle: None,
                }
            }
            Domain::Circle { .. } => PairTable {
                sites: 0,
                lattice: Vec::new(),
                circle: Some(v.clone()),
            },
        }
    }

    /// Σ over label-matched point pairs of v, times ε/2.
    pub fn v_nu(&self, a: &GridPath, b: &GridPath, slices: usize, eps: f64) -> f64 {
        let mut total = 0.0;
        let (sa, sb) = (a.start_label, b.start_label);
        match (&a.points, &b.points) {
            (Positions::Sites(pa), Positions::Sites(pb)) => {
                for (p, &x) in pa.iter().enumerate() {
                    let t = (sa + p) % slices;
                    let q0 = (t + slices - sb % slices) % slices;
                    let row = &self.lattice[x * self.sites..(x + 1) * self.sites];
                    let mut q = q0;
                    while q < pb.len() {
                        total += row[pb[q]];
                        q += slices;
                    }
                }
            }
            (Positions::Circle(pa), Positions::Circle(pb)) => {
                let v = self.circle.as_ref().expect("circle potential");
                for (p, &x) in pa.iter().enumerate() {
                    let t = (sa + p) % slices;
                    let mut q = (t + slices - sb % slices) % slices;
                    while q < pb.len() {
                        total += v.eval(x - pb[q]);
                        q += slices;
                    }
                }
            }
            _ => panic!("mixed path domains"),
        }
        0.5 * eps * total
    }
}

/// V_ν(ω, ω′) = ½ Σ_{r,s} ε Σ_t v(ω(t + rν) − ω′(t + sν)).
pub fn loop_interaction_vnu(
    a: &GridPath,
    b: &GridPath,
    geom: &TorusGeometry,
    v: &TwoBodyPotential,
    grid: TimeGrid,
) -> Result<f64> {
    let check = |p: &GridPath| match (&p.points, geom.domain()) {
        (Positions::Sites(s), Domain::Lattice) => s.iter().all(|&x| x < geom.sites()),
        (Positions::Circle(_), Domain::Circle { .. }) => true,
        _ => false,
    };
    if !check(a) || !check(b) {
        return Err(Error::Shape("path does not live on this geometry".into()));
    }
    Ok(PairTable::new(geom, v).v_nu(a, b, grid.slices(), grid.step()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub n_max: usize,
    pub l_max: usize,
    pub tolerance: f64,
}

/// Closed-loop activity measure on one grid: weights e^{−κℓν}/ℓ·Σ_u p_{ℓν}(u,u).
#[derive(Clone, Debug)]
pub struct LoopEnsemble {
    geom: TorusGeometry,
    grid: TimeGrid,
    table: Option<HeatTable>,
    pairs: PairTable,
    activities: Vec<f64>,
    total: f64,
}

/// e^{−κℓν}/ℓ · Σ_u p_{ℓν}(u,u) for ℓ = 1..=l_max.
pub fn loop_activities(geom: &TorusGeometry, nu: f64, kappa: f64, l_max: usize) -> Result<Vec<f64>> {
    (1..=l_max)
        .map(|l| {
            let t = l as f64 * nu;
            Ok((-kappa * t).exp() / l as f64 * geom.volume() * return_density(geom, t)?)
        })
        .collect()
}

impl LoopEnsemble {
    pub fn new(sys: &System, grid: TimeGrid, kappa: f64, l_max: usize, open_half_steps: usize) -> Result<Self> {
        if l_max == 0 {
            return Err(Error::Domain("l_max must be >= 1".into()));
        }
        let activities = loop_activities(&sys.geom, grid.nu(), kappa, l_max)?;
        let total = activities.iter().sum();
        let table = if sys.geom.is_lattice() {
            let need = (2 * l_max * grid.slices()).max(open_half_steps);
            Some(HeatTable::new(&sys.geom, grid, need)?)
        } else {
            None
        };
        Ok(LoopEnsemble {
            geom: sys.geom.clone(),
            grid,
            table,
            pairs: PairTable::new(&sys.geom, &sys.potential),
            activities,
            total,
        })
    }

    /// Q = Σ_ℓ activity_ℓ.
    pub fn mass(&self) -> f64 {
        self.total
    }

    pub fn activities(&self) -> &[f64] {
        &self.activities
    }

    pub fn table(&self) -> Option<&HeatTable> {
        self.table.as_ref()
    }

    pub fn pairs(&self) -> &PairTable {
        &self.pairs
    }

    pub fn v_nu(&self, a: &GridPath, b: &GridPath) -> f64 {
        self.pairs.v_nu(a, b, self.grid.slices(), self.grid.step())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LoopPath> {
        let mut u = rng.random::<f64>() * self.total;
        let mut winding = self.activities.len();
        for (i, a) in self.activities.iter().enumerate() {
            if u < *a {
                winding = i + 1;
                break;
            }
            u -= a;
        }
        let steps = winding * self.grid.slices();
        let positions = match self.geom.domain() {
            Domain::Lattice => {
                let base = rng.random_range(0..self.geom.sites());
                let table = self.table.as_ref().expect("lattice table");
                let inner = sample_chain(table, base, base, &vec![2; steps], rng)?;
                let mut pos = Vec::with_capacity(steps + 1);
                pos.push(base);
                pos.extend(inner);
                pos.push(base);
                Positions::Sites(pos)
            }
            Domain::Circle { circumference } => {
                let base = rng.random::<f64>() * circumference;
                Positions::Circle(sample_circle_bridge(
                    circumference,
                    base,
                    base,
                    self.grid.step(),
                    steps,
                    rng,
                )?)
            }
        };
        Ok(LoopPath {
            winding,
            duration: winding as f64 * self.grid.nu(),
            positions,
        })
    }

    /// Σ_{i,j} V_ν(ω_i, ω_j) over an ensemble, self-pairs included.
    pub fn total_interaction(&self, paths: &[GridPath]) -> f64 {
        let mut total = 0.0;
        for i in 0..paths.len() {
            total += self.v_nu(&paths[i], &paths[i]);
            for j in 0..i {
                total += 2.0 * self.v_nu(&paths[i], &paths[j]);
            }
        }
        total
    }
}

/// Σ_{n≤n_max} xⁿ/n!
pub fn exp_partial(x: f64, n_max: usize) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..=n_max {
        term *= x / n as f64;
        sum += term;
    }
    sum
}

/// xⁿ/n! for n = 0..=n_max.
pub fn exp_coefficients(x: f64, n_max: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for n in 1..=n_max {
        let last = out[n - 1];
        out.push(last * x / n as f64);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesEstimate {
    pub estimate: ComplexEstimate,
    /// Per-order expectations E_n of the interaction factor (E_0 = 1).
    pub orders: Vec<ComplexEstimate>,
    /// Single-loop mass Q at κ(ρ).
    pub loop_mass: f64,
    /// Relative size of the neglected orders and windings at λ₀ = 0.
    pub tail: f64,
    pub flagged: bool,
}

/// Unnormalized truncated series Σ_n (NQ)ⁿ/n!·E_n[e^{−(λ/ν)Σ_{ij}V_ν}] with
/// loops drawn at rate κ, returned with per-order estimates.
pub fn raw_series(
    sys: &System,
    grid: TimeGrid,
    kappa: f64,
    trunc: Truncation,
    samples: usize,
    seed: u64,
) -> Result<SeriesEstimate> {
    let p = &sys.params;
    let ens = LoopEnsemble::new(sys, grid, kappa, trunc.l_max, 0)?;
    let nq = p.species * ens.mass();
    let coeff = exp_coefficients(nq, trunc.n_max);
    let coupling = p.lambda() / p.nu;
    let ideal = exp_partial(nq, trunc.n_max);
    let next_l = loop_activities(&sys.geom, p.nu, kappa, trunc.l_max + 1)?[trunc.l_max];
    let tail = (ideal_tail(nq, trunc.n_max) + p.species * next_l.abs()).abs();
    if coupling == 0.0 || trunc.n_max == 0 {
        let est = ComplexEstimate::exact(Complex64::new(ideal, 0.0), samples as u64, seed);
        let orders = (0..=trunc.n_max)
            .map(|_| ComplexEstimate::exact(Complex64::new(1.0, 0.0), samples as u64, seed))
            .collect();
        return Ok(SeriesEstimate {
            estimate: est,
            orders,
            loop_mass: ens.mass(),
            tail,
            flagged: tail > trunc.tolerance,
        });
    }
    // order n uses the first n loops of one draw
    let rows = stats::try_parallel_samples(samples, seed, |rng| {
        let mut row = Vec::with_capacity(trunc.n_max);
        let mut paths = Vec::with_capacity(trunc.n_max);
        let mut energy = 0.0;
        for _ in 0..trunc.n_max {
            let w = ens.sample(rng)?.grid_path();
            energy += ens.v_nu(&w, &w) + 2.0 * paths.iter().map(|q| ens.v_nu(&w, q)).sum::<f64>();
            paths.push(w);
            row.push((-coupling * energy).exp());
        }
        Ok(row)
    })?;
    let combined: Vec<Complex64> = rows
        .iter()
        .map(|row| {
            let s: f64 = coeff[0] + row.iter().enumerate().map(|(i, e)| coeff[i + 1] * e).sum::<f64>();
            Complex64::new(s, 0.0)
        })
        .collect();
    let mut orders = vec![ComplexEstimate::exact(Complex64::new(1.0, 0.0), samples as u64, seed)];
    for n in 0..trunc.n_max {
        let col: Vec<Complex64> = rows.iter().map(|r| Complex64::new(r[n], 0.0)).collect();
        orders.push(ComplexEstimate::from_samples(&col, &col, seed));
    }
    let mut estimate = ComplexEstimate::from_samples(&combined, &combined, seed);
    estimate.flagged |= tail > trunc.tolerance;
    Ok(SeriesEstimate {
        estimate,
        orders,
        loop_mass: ens.mass(),
        tail,
        flagged: tail > trunc.tolerance,
    })
}

/// Relative weight of orders above n_max in e^{x}.
fn ideal_tail(x: f64, n_max: usize) -> f64 {
    let partial = exp_partial(x, n_max);
    let full = x.exp();
    ((full - partial) / partial).max(0.0)
}

/// exp(−N²ρ²λ|Λ|Σv/(2ν²)): Gaussian average of the phase e^{iNθ}.
pub fn phase_constant(sys: &System) -> Result<f64> {
    let p = &sys.params;
    let rho = sys.rho()?;
    Ok((-(p.species * rho).powi(2) * p.lambda() * sys.geom.volume() * sys.potential.total()
        / (2.0 * p.nu * p.nu))
        .exp())
}

/// Ξ_rel from the loop-gas series, normalized by the ideal series with the
/// same truncation.
pub fn xi_rel_series(
    sys: &System,
    grid: TimeGrid,
    trunc: Truncation,
    samples: usize,
    seed: u64,
) -> Result<SeriesEstimate> {
    let p = &sys.params;
    let kappa = sys.kappa_rho()?;
    let raw = raw_series(sys, grid, kappa, trunc, samples, seed)?;
    let q0: f64 = loop_activities(&sys.geom, p.nu, p.kappa0, trunc.l_max)?.iter().sum();
    let norm = phase_constant(sys)? / exp_partial(p.species * q0, trunc.n_max);
    if p.lambda() == 0.0 {
        return Ok(SeriesEstimate {
            estimate: ComplexEstimate::exact(Complex64::new(1.0, 0.0), samples as u64, seed),
            ..raw
        });
    }
    Ok(SeriesEstimate {
        estimate: raw.estimate.scale(norm),
        ..raw
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuhamelLoopEstimate {
    pub estimate: ComplexEstimate,
    /// Open-path mass Σ_{ℓ₀} e^{−κT} p_T(x, x′).
    pub open_mass: f64,
    /// The estimator is for equal species indices; off-diagonal species
    /// entries vanish identically.
    pub species_diagonal: bool,
}

struct OpenSampler {
    from: usize,
    to: usize,
    start_label: usize,
    /// (interior point count K, weight) per winding ℓ₀.
    options: Vec<(usize, usize, f64)>,
    mass: f64,
}

impl OpenSampler {
    fn new(
        geom: &TorusGeometry,
        grid: TimeGrid,
        kappa: f64,
        (a, b): (usize, usize),
        (x, xp): (usize, usize),
        windings: std::ops::RangeInclusive<usize>,
    ) -> Result<Self> {
        let n = grid.slices();
        let mut options = Vec::new();
        for l0 in windings {
            let k = (b - a) + l0 * n;
            if k == 0 {
                continue;
            }
            let t = k as f64 * grid.step();
            let w = (-kappa * t).exp() * heat_propagator(geom, t)?[(x, xp)];
            options.push((l0, k, w));
        }
        let mass = options.iter().map(|o| o.2).sum();
        Ok(OpenSampler {
            from: xp,
            to: x,
            start_label: a,
            options,
            mass,
        })
    }

    fn sample<R: Rng + ?Sized>(&self, table: &HeatTable, grid: TimeGrid, rng: &mut R) -> Result<OpenPath> {
        let mut u = rng.random::<f64>() * self.mass;
        let mut pick = self.options[self.options.len() - 1];
        for o in &self.options {
            if u < o.2 {
                pick = *o;
                break;
            }
            u -= o.2;
        }
        let (l0, k, _) = pick;
        let mut steps = vec![2; k + 1];
        steps[0] = 1;
        steps[k] = 1;
        let points = sample_chain(table, self.from, self.to, &steps, rng)?;
        Ok(OpenPath {
            from: self.from,
            to: self.to,
            duration: k as f64 * grid.step(),
            winding: l0,
            path: GridPath {
                start_label: self.start_label,
                points: Positions::Sites(points),
            },
        })
    }
}

fn boundaries(grid: TimeGrid, tau: f64, tau_p: f64) -> Result<(usize, usize)> {
    let nu = grid.nu();
    if !(0.0..nu).contains(&tau) || !(0.0..nu).contains(&tau_p) || tau_p > tau {
        return Err(Error::Domain(format!(
            "need 0 ≤ τ′ ≤ τ < ν, got τ = {tau}, τ′ = {tau_p}"
        )));
    }
    let b = grid
        .boundary_of(tau)
        .ok_or_else(|| Error::Domain(format!("τ = {tau} is not a slice boundary")))?;
    let a = grid
        .boundary_of(tau_p)
        .ok_or_else(|| Error::Domain(format!("τ′ = {tau_p} is not a slice boundary")))?;
    Ok((a, b))
}

/// Duhamel function from an open path interacting with the loop gas.
#[allow(clippy::too_many_arguments)]
pub fn duhamel_loopgas(
    sys: &System,
    grid: TimeGrid,
    tau: f64,
    x: usize,
    tau_p: f64,
    xp: usize,
    trunc: Truncation,
    samples: usize,
    seed: u64,
) -> Result<DuhamelLoopEstimate> {
    let geom = &sys.geom;
    if !geom.is_lattice() {
        return Err(Error::UnsupportedMode("circle"));
    }
    let sites = geom.sites();
    if x >= sites || xp >= sites {
        return Err(Error::Shape(format!("site out of range for {sites} sites")));
    }
    let p = &sys.params;
    let (a, b) = boundaries(grid, tau, tau_p)?;
    let first = if a == b { 1 } else { 0 };
    let coupling = p.lambda() / p.nu;
    if coupling == 0.0 {
        // ideal gas: sum open windings to convergence
        let mut total = 0.0;
        let mut l0 = first;
        loop {
            let t = (b - a) as f64 * grid.step() + l0 as f64 * p.nu;
            let term = (-p.kappa0 * t).exp() * heat_propagator(geom, t)?[(x, xp)];
            total += term;
            if term < 1e-18 * total || l0 > 100_000 {
                break;
            }
            l0 += 1;
        }
        return Ok(DuhamelLoopEstimate {
            estimate: ComplexEstimate::exact(Complex64::new(total, 0.0), samples as u64, seed),
            open_mass: total,
            species_diagonal: true,
        });
    }
    let kappa = sys.kappa_rho()?;
    let open = OpenSampler::new(geom, grid, kappa, (a, b), (x, xp), first..=trunc.l_max)?;
    let need = 2 * (b - a + trunc.l_max * grid.slices());
    let ens = LoopEnsemble::new(sys, grid, kappa, trunc.l_max, need)?;
    let table = ens.table().expect("lattice table");
    let coeff = exp_coefficients(p.species * ens.mass(), trunc.n_max);
    let pairs = stats::try_parallel_samples(samples, seed, |rng| {
        let omega0 = open.sample(table, grid, rng)?.path;
        let self0 = ens.v_nu(&omega0, &omega0);
        let (mut num, mut den) = (coeff[0] * (-coupling * self0).exp(), coeff[0]);
        let mut paths = Vec::with_capacity(trunc.n_max);
        let (mut loops, mut cross) = (0.0, 0.0);
        for c in &coeff[1..] {
            let w = ens.sample(rng)?.grid_path();
            loops += ens.v_nu(&w, &w) + 2.0 * paths.iter().map(|q| ens.v_nu(&w, q)).sum::<f64>();
            cross += ens.v_nu(&omega0, &w);
            paths.push(w);
            num += c * (-coupling * (loops + self0 + 2.0 * cross)).exp();
            den += c * (-coupling * loops).exp();
        }
        Ok((Complex64::new(open.mass * num, 0.0), Complex64::new(den, 0.0)))
    })?;
    let (num, den): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(DuhamelLoopEstimate {
        estimate: ComplexEstimate::ratio(&num, &den, seed),
        open_mass: open.mass,
        species_diagonal: true,
    })
}

/// Duration floor, loop-count cutoff and path resolution for the
/// duration-regularized loop gas of the classical field theory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymanzikParams {
    pub delta: f64,
    pub n_max: usize,
    /// Grid points per loop used for the V₀ quadrature.
    pub points: usize,
    /// Density offset ρ_f of the Wick-ordered field action.
    pub rho_f: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymanzikEstimate {
    /// e^{−a²W|Λ|/2}·Σ_n (NQ_δ)ⁿ/n!·E_n[…]; equals e^{NQ₀(δ)} for v ≡ 0.
    pub estimate: ComplexEstimate,
    /// The estimate divided by the free-field series e^{NQ₀(δ)}.
    pub relative: ComplexEstimate,
    /// κ_δ after absorbing the Wick phase.
    pub kappa_delta: f64,
    /// Coefficient a of the phase θ_δ = a·Σ_x η(x).
    pub theta_coefficient: f64,
    /// Regularized Wick constant [e^{−δA}A⁻¹]_{xx}.
    pub wick_delta: f64,
    pub loop_mass: f64,
}

/// Sampler for durations T ≥ δ with density ∝ e^{−κT}·r(T)/T, r the
/// return density, on a logarithmic cell grid with in-cell rejection.
#[derive(Clone, Debug)]
pub struct DurationSampler {
    kappa: f64,
    geom: TorusGeometry,
    edges: Vec<f64>,
    masses: Vec<f64>,
    total: f64,
}

impl DurationSampler {
    pub fn new(geom: &TorusGeometry, kappa: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Domain(format!("duration floor δ = {delta} must be positive")));
        }
        if !(kappa > 0.0) {
            return Err(Error::DivergentSeries(format!("κ_δ = {kappa} must be positive")));
        }
        let t_max = delta + 60.0 / kappa;
        let cells = 96;
        let (u0, u1) = (delta.ln(), t_max.ln());
        let edges: Vec<f64> = (0..=cells)
            .map(|i| u0 + (u1 - u0) * i as f64 / cells as f64)
            .collect();
        let density = |u: f64| {
            let t = u.exp();
            (-kappa * t).exp() * return_density(geom, t).unwrap_or(0.0)
        };
        let masses: Vec<f64> = edges
            .windows(2)
            .map(|w| quad::integrate(density, w[0], w[1], 1e-15, 1e-12).value.re)
            .collect();
        let total = masses.iter().sum();
        Ok(DurationSampler {
            kappa,
            geom: geom.clone(),
            edges,
            masses,
            total,
        })
    }

    /// ∫_δ^∞ dT/T e^{−κT} r(T) (tail beyond the grid is below e^{−60}).
    pub fn mass(&self) -> f64 {
        self.total
    }

    fn density(&self, u: f64) -> f64 {
        let t = u.exp();
        (-self.kappa * t).exp() * return_density(&self.geom, t).unwrap_or(0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut u = rng.random::<f64>() * self.total;
        let mut cell = self.masses.len() - 1;
        for (i, m) in self.masses.iter().enumerate() {
            if u < *m {
                cell = i;
                break;
            }
            u -= m;
        }
        let (lo, hi) = (self.edges[cell], self.edges[cell + 1]);
        let top = self.density(lo);
        loop {
            let u = lo + (hi - lo) * rng.random::<f64>();
            if rng.random::<f64>() * top <= self.density(u) {
                return u.exp();
            }
        }
    }
}

/// Closed lattice loop of duration T sampled at `points` equally spaced times.
fn sample_symanzik_loop<R: Rng + ?Sized>(
    geom: &TorusGeometry,
    t: f64,
    points: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let sites = geom.sites();
    let base = rng.random_range(0..sites);
    if sites == 1 {
        return Ok(vec![0; points]);
    }
    let step = heat_propagator(geom, t / points as f64)?;
    // remaining-time kernels p_{(points−k)·T/points}
    let rest: Vec<DMatrix<f64>> = (0..=points)
        .map(|k| heat_propagator(geom, t * k as f64 / points as f64))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(points);
    out.push(base);
    let mut cur = base;
    for k in 1..points {
        let remaining = points - k;
        let norm = rest[remaining + 1][(cur, base)];
        let mut u = rng.random::<f64>() * norm;
        let mut next = sites - 1;
        for z in 0..sites {
            let w = step[(cur, z)] * rest[remaining][(z, base)];
            if u < w {
                next = z;
                break;
            }
            u -= w;
        }
        out.push(next);
        cur = next;
    }
    Ok(out)
}

/// Regularized field partition function
/// Z_δ = e^{−a²W|Λ|/2}·Σ_n (NQ_δ)ⁿ/n!·E_n[exp(−gΣ_{ij}V₀)],
/// with g = λ₀/(N+1), W = gΣv, a = N·c_δ + ρ_f and κ_δ = κ₀ − a·W.
pub fn symanzik_series(
    sys: &System,
    sym: SymanzikParams,
    samples: usize,
    seed: u64,
) -> Result<SymanzikEstimate> {
    let geom = &sys.geom;
    if !geom.is_lattice() {
        return Err(Error::UnsupportedMode("circle"));
    }
    if !(sym.delta > 0.0) {
        return Err(Error::Domain(format!("duration floor δ = {} must be positive", sym.delta)));
    }
    let p = &sys.params;
    let big_n = p.species;
    let g = p.lambda0 / (big_n + 1.0);
    let w_bar = g * sys.potential.total();
    let wick_delta = geom.spectral_kernel(|e| (-sym.delta * (e + p.kappa0)).exp() / (e + p.kappa0))?[0];
    let a = big_n * wick_delta + sym.rho_f;
    let kappa_delta = p.kappa0 - a * w_bar;
    let volume = geom.volume();
    let durations = DurationSampler::new(geom, kappa_delta, sym.delta)?;
    let (q, q0) = (
        volume * durations.mass(),
        volume * DurationSampler::new(geom, p.kappa0, sym.delta)?.mass(),
    );
    let prefactor = (-0.5 * a * a * w_bar * volume).exp();
    let free = (big_n * q0).exp();
    let coeff = exp_coefficients(big_n * q, sym.n_max);
    if g == 0.0 {
        let value = prefactor * coeff.iter().sum::<f64>();
        let estimate = ComplexEstimate::exact(Complex64::new(value, 0.0), samples as u64, seed);
        return Ok(SymanzikEstimate {
            relative: estimate.scale(free.recip()),
            estimate,
            kappa_delta,
            theta_coefficient: a,
            wick_delta,
            loop_mass: q,
        });
    }
    let pair = PairTable::new(geom, &sys.potential);
    let sites = geom.sites();
    let points = sym.points.max(1);
    let v0 = |a: &(f64, Vec<usize>), b: &(f64, Vec<usize>)| {
        let mut s = 0.0;
        for &x in &a.1 {
            for &y in &b.1 {
                s += pair.lattice[x * sites + y];
            }
        }
        0.5 * s * (a.0 / a.1.len() as f64) * (b.0 / b.1.len() as f64)
    };
    let values = stats::try_parallel_samples(samples, seed, |rng| {
        let mut total = coeff[0];
        let mut loops: Vec<(f64, Vec<usize>)> = Vec::with_capacity(sym.n_max);
        let mut energy = 0.0;
        for c in &coeff[1..] {
            let t = durations.sample(rng);
            let w = (t, sample_symanzik_loop(geom, t, points, rng)?);
            energy += v0(&w, &w) + 2.0 * loops.iter().map(|q| v0(&w, q)).sum::<f64>();
            loops.push(w);
            total += c * (-g * energy).exp();
        }
        Ok(Complex64::new(prefactor * total, 0.0))
    })?;
    let estimate = ComplexEstimate::from_samples(&values, &values, seed);
    Ok(SymanzikEstimate {
        relative: estimate.scale(free.recip()),
        estimate,
        kappa_delta,
        theta_coefficient: a,
        wick_delta,
        loop_mass: q,
    })
}

/// Activity ratio of two-winding to one-winding loops on the circle.
pub fn circle_activity_ratio(nu: f64, kappa: f64) -> f64 {
    let p1 = (2.0 * PI * nu).sqrt().recip();
    let p2 = (4.0 * PI * nu).sqrt().recip();
    (-kappa * nu).exp() * p2 / (2.0 * p1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Coupling, ModelParams, RhoMode};

    fn system(sites: usize, lambda0: f64) -> System {
        let geom = TorusGeometry::lattice(1, sites).unwrap();
        let v = TwoBodyPotential::delta(&geom, 1.0).unwrap();
        let params = ModelParams {
            nu: 1.0,
            kappa0: 1.0,
            lambda0,
            species: 1.0,
            coupling: Coupling::Fixed,
            rho: RhoMode::Explicit(0.0),
        };
        System::new(geom, v, params).unwrap()
    }

    #[test]
    fn single_step_and_single_site_bridges() {
        let g = TorusGeometry::lattice(1, 3).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let Positions::Sites(p) = sample_bridge(&g, 0.0, 2.0, 0.25, grid, 1).unwrap() else {
            panic!()
        };
        assert_eq!(p, vec![0, 2]);
        let one = TorusGeometry::lattice(1, 1).unwrap();
        let Positions::Sites(p) = sample_bridge(&one, 0.0, 0.0, 2.0, grid, 1).unwrap() else {
            panic!()
        };
        assert!(p.iter().all(|&x| x == 0));
        assert_eq!(p.len(), 9);
    }

    #[test]
    fn constant_path_interaction() {
        let sys = system(1, 1.0);
        let grid = TimeGrid::new(0.5, 4).unwrap();
        let path = |l: usize| GridPath {
            start_label: 0,
            points: Positions::Sites(vec![0; l * 4]),
        };
        for (l, lp) in [(1, 1), (2, 3)] {
            let v = loop_interaction_vnu(&path(l), &path(lp), &sys.geom, &sys.potential, grid).unwrap();
            assert!((v - 0.5 * (l * lp) as f64 * 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn interaction_symmetric_and_nonnegative() {
        let sys = system(3, 1.0);
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let ens = LoopEnsemble::new(&sys, grid, 1.0, 4, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = ens.sample(&mut rng).unwrap().grid_path();
            let b = ens.sample(&mut rng).unwrap().grid_path();
            let (ab, ba) = (ens.v_nu(&a, &b), ens.v_nu(&b, &a));
            assert!((ab - ba).abs() < 1e-14);
            assert!(ab >= 0.0);
        }
    }

    #[test]
    fn ideal_series_is_exponential() {
        let sys = system(2, 0.0);
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let t = Truncation { n_max: 6, l_max: 6, tolerance: 1e-3 };
        let raw = raw_series(&sys, grid, 1.0, t, 256, 1).unwrap();
        let q: f64 = loop_activities(&sys.geom, 1.0, 1.0, 6).unwrap().iter().sum();
        assert!((raw.estimate.re - exp_partial(q, 6)).abs() < 1e-14);
        assert_eq!(xi_rel_series(&sys, grid, t, 256, 1).unwrap().estimate.re, 1.0);
    }

    #[test]
    fn duration_sampler_single_site_moments() {
        let g = TorusGeometry::lattice(1, 1).unwrap();
        let s = DurationSampler::new(&g, 1.5, 0.05).unwrap();
        let exact = quad::integrate_to_infinity(|t| (-1.5 * t).exp() / t, 0.05, 1e-14, 1e-13).value.re;
        assert!((s.mass() - exact).abs() < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 40_000;
        let mean: f64 = (0..n).map(|_| s.sample(&mut rng)).sum::<f64>() / n as f64;
        // E[T] = ∫ e^{−κT} dT / mass
        let expect = (-1.5f64 * 0.05).exp() / 1.5 / exact;
        assert!((mean - expect).abs() < 0.03 * expect, "{mean} vs {expect}");
    }

    #[test]
    fn circle_ratio_scaling() {
        let r = circle_activity_ratio(0.01, 0.0);
        assert!((r - 2f64.powf(-1.5)).abs() < 1e-12);
    }
}
