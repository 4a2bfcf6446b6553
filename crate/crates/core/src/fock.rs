//! Exact grand-canonical traces on a truncated Fock space.
//!
//! The Hamiltonian is built in occupation form,
//!
//!   ℍ = ν Σ_{x,y,a} (−Δ/2 + κ₀)_{xy} b†_{x,a} b_{y,a}
//!       + (λ/2) Σ_{x,y} (n̂_x − Nρ/ν) v(x−y) (n̂_y − Nρ/ν),
//!
//! where n̂_x sums the species. The offset Nρ/ν makes the constant and
//! one-body terms agree with the auxiliary-field phase e^{iNθ}; for a single
//! species it is ρ/ν. Imaginary time is generated by h = ℍ/ν.
//!
//! ℍ conserves the particle number of each species, so it is stored and
//! diagonalized block by block.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::System;

pub const MAX_STATES: usize = 200_000;
pub const MAX_SITES: usize = 4;
pub const MAX_NMAX: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Sector {
    /// Particles of each species.
    pub counts: Vec<usize>,
    /// Occupations indexed by mode a·|Λ| + x.
    pub states: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
}

impl Sector {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn position(&self, state: &[u8]) -> Option<usize> {
        self.index.get(state).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupationBasis {
    pub sites: usize,
    pub species: usize,
    pub n_max: usize,
    pub sectors: Vec<Sector>,
}

/// Compositions of `n` into `parts` nonnegative parts, lexicographic.
fn compositions(n: usize, parts: usize) -> Vec<Vec<u8>> {
    if parts == 0 {
        return if n == 0 { vec![vec![]] } else { vec![] };
    }
    if parts == 1 {
        return vec![vec![n as u8]];
    }
    let mut out = Vec::new();
    for first in 0..=n {
        for mut rest in compositions(n - first, parts - 1) {
            let mut v = vec![first as u8];
            v.append(&mut rest);
            out.push(v);
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl OccupationBasis {
    pub fn new(sites: usize, species: usize, n_max: usize) -> Result<Self> {
        let modes = sites * species;
        let size = binomial(n_max + modes, modes);
        if size > MAX_STATES as f64 {
            return Err(Error::Capacity(format!(
                "{size} states exceeds the limit of {MAX_STATES}"
            )));
        }
        let mut sectors = Vec::new();
        for total in 0..=n_max {
            for counts in compositions(total, species) {
                let per_species: Vec<Vec<Vec<u8>>> =
                    counts.iter().map(|&c| compositions(c as usize, sites)).collect();
                let mut states: Vec<Vec<u8>> = vec![vec![]];
                for block in &per_species {
                    states = states
                        .iter()
                        .flat_map(|prefix| {
                            block.iter().map(move |occ| {
                                let mut s = prefix.clone();
                                s.extend_from_slice(occ);
                                s
                            })
                        })
                        .collect();
                }
                let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
                sectors.push(Sector {
                    counts: counts.iter().map(|&c| c as usize).collect(),
                    states,
                    index,
                });
            }
        }
        Ok(OccupationBasis {
            sites,
            species,
            n_max,
            sectors,
        })
    }

    pub fn len(&self) -> usize {
        self.sectors.iter().map(Sector::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All states in enumeration order.
    pub fn states(&self) -> impl Iterator<Item = &Vec<u8>> {
        self.sectors.iter().flat_map(|s| s.states.iter())
    }

    fn sector_of(&self, counts: &[usize]) -> Option<usize> {
        self.sectors.iter().position(|s| s.counts == counts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorLabel {
    Hamiltonian,
    Number,
    FieldBilinear,
}

/// Block-diagonal operator aligned with the sectors of its basis.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedOperator {
    pub label: OperatorLabel,
    pub blocks: Vec<DMatrix<f64>>,
}

impl TruncatedOperator {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n: usize = self.blocks.iter().map(|b| b.nrows()).sum();
        let mut out = DMatrix::zeros(n, n);
        let mut off = 0;
        for b in &self.blocks {
            out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
            off += b.nrows();
        }
        out
    }

    pub fn hermiticity_residual(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| (b - b.transpose()).amax())
            .fold(0.0, f64::max)
    }
}

fn integer_species(sys: &System) -> Result<usize> {
    let n = sys.params.species;
    if n.fract() != 0.0 || !(1.0..=2.0).contains(&n) {
        return Err(Error::Domain(format!(
            "the Fock oracle needs N ∈ {{1, 2}}, got {n}"
        )));
    }
    Ok(n as usize)
}

fn check_size(sys: &System, n_max: usize) -> Result<()> {
    let sites = sys.geom.sites();
    if !sys.geom.is_lattice() {
        return Err(Error::UnsupportedMode("circle"));
    }
    if sites > MAX_SITES {
        return Err(Error::Capacity(format!("{sites} sites exceeds {MAX_SITES}")));
    }
    if n_max > MAX_NMAX {
        return Err(Error::Capacity(format!("n_max {n_max} exceeds {MAX_NMAX}")));
    }
    Ok(())
}

pub fn build_hamiltonian(sys: &System, n_max: usize) -> Result<(OccupationBasis, TruncatedOperator)> {
    check_size(sys, n_max)?;
    let species = integer_species(sys)?;
    let sites = sys.geom.sites();
    let basis = OccupationBasis::new(sites, species, n_max)?;
    let p = &sys.params;
    let lap = sys.geom.laplacian_matrix()?;
    let hop = DMatrix::from_fn(sites, sites, |x, y| {
        p.nu * (-0.5 * lap[(x, y)] + if x == y { p.kappa0 } else { 0.0 })
    });
    let lambda = p.lambda();
    let offset = p.species * sys.rho()? / p.nu;
    let v = &sys.potential;
    let blocks = basis
        .sectors
        .iter()
        .map(|sector| {
            let dim = sector.len();
            let mut h = DMatrix::zeros(dim, dim);
            let mut occ = vec![0.0; sites];
            for (i, state) in sector.states.iter().enumerate() {
                occ.iter_mut().for_each(|o| *o = 0.0);
                for a in 0..species {
                    for x in 0..sites {
                        occ[x] += state[a * sites + x] as f64;
                    }
                }
                let mut diag = 0.0;
                for x in 0..sites {
                    diag += hop[(x, x)] * occ[x];
                    if lambda != 0.0 {
                        for y in 0..sites {
                            diag += 0.5
                                * lambda
                                * (occ[x] - offset)
                                * v.at(sys.geom.displacement(x, y))
                                * (occ[y] - offset);
                        }
                    }
                }
                h[(i, i)] = diag;
                // b†_{x,a} b_{y,a}
                for a in 0..species {
                    for y in 0..sites {
                        let ny = state[a * sites + y];
                        if ny == 0 {
                            continue;
                        }
                        for x in 0..sites {
                            if x == y || hop[(x, y)] == 0.0 {
                                continue;
                            }
                            let mut target = state.clone();
                            target[a * sites + y] -= 1;
                            target[a * sites + x] += 1;
                            let nx = target[a * sites + x];
                            let j = sector.position(&target).expect("hopping stays in sector");
                            h[(j, i)] += hop[(x, y)] * ((ny as f64) * (nx as f64)).sqrt();
                        }
                    }
                }
            }
            h
        })
        .collect();
    Ok((
        basis,
        TruncatedOperator {
            label: OperatorLabel::Hamiltonian,
            blocks,
        },
    ))
}

/// Total particle number as a truncated operator.
pub fn number_operator(basis: &OccupationBasis) -> TruncatedOperator {
    TruncatedOperator {
        label: OperatorLabel::Number,
        blocks: basis
            .sectors
            .iter()
            .map(|s| DMatrix::from_diagonal_element(s.len(), s.len(), s.total() as f64))
            .collect(),
    }
}

/// Eigendecomposition of every block of ℍ.
#[derive(Clone, Debug)]
pub struct FockSpectrum {
    pub basis: OccupationBasis,
    pub energies: Vec<Vec<f64>>,
    pub vectors: Vec<DMatrix<f64>>,
    nu: f64,
    shift: f64,
}

impl FockSpectrum {
    pub fn new(sys: &System, n_max: usize) -> Result<Self> {
        let (basis, h) = build_hamiltonian(sys, n_max)?;
        let mut energies = Vec::new();
        let mut vectors = Vec::new();
        for block in h.blocks {
            let eig = SymmetricEigen::new(block);
            energies.push(eig.eigenvalues.iter().cloned().collect::<Vec<_>>());
            vectors.push(eig.eigenvectors);
        }
        let shift = energies
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        Ok(FockSpectrum {
            basis,
            energies,
            vectors,
            nu: sys.params.nu,
            shift,
        })
    }

    /// Σ e^{−(E − E_min)} over sectors with total ≤ `up_to`.
    fn scaled_trace(&self, up_to: usize) -> f64 {
        self.basis
            .sectors
            .iter()
            .zip(&self.energies)
            .filter(|(s, _)| s.total() <= up_to)
            .map(|(_, e)| e.iter().map(|&x| (-(x - self.shift)).exp()).sum::<f64>())
            .sum()
    }

    pub fn xi(&self) -> f64 {
        (-self.shift).exp() * self.scaled_trace(self.basis.n_max)
    }

    /// |Ξ(n_max) − Ξ(n_max − 1)|/Ξ(n_max).
    pub fn drift(&self) -> f64 {
        let full = self.scaled_trace(self.basis.n_max);
        if self.basis.n_max == 0 {
            return 1.0;
        }
        (full - self.scaled_trace(self.basis.n_max - 1)) / full
    }

    /// ⟨j|b_{x,0}|i⟩ in the eigenbases of sector `from` (i) and its image (j).
    fn lowering(&self, from: usize, x: usize) -> Option<(usize, DMatrix<f64>)> {
        let sector = &self.basis.sectors[from];
        if sector.counts[0] == 0 {
            return None;
        }
        let mut counts = sector.counts.clone();
        counts[0] -= 1;
        let to = self.basis.sector_of(&counts)?;
        let target = &self.basis.sectors[to];
        let mut b = DMatrix::zeros(target.len(), sector.len());
        for (i, state) in sector.states.iter().enumerate() {
            let n = state[x];
            if n > 0 {
                let mut s = state.clone();
                s[x] -= 1;
                let j = target.position(&s).expect("lowered state in basis");
                b[(j, i)] = (n as f64).sqrt();
            }
        }
        Some((to, self.vectors[to].transpose() * b * &self.vectors[from]))
    }

    /// tr(e^{−(ν−Δτ)h} b_x e^{−Δτ h} b†_{x′})/Ξ for species 0; at Δτ = 0
    /// returns ⟨b†_x b_{x′}⟩ instead (normal order).
    pub fn duhamel(&self, dtau: f64, x: usize, xp: usize) -> f64 {
        let norm = self.scaled_trace(self.basis.n_max);
        let mut total = 0.0;
        for from in 0..self.basis.sectors.len() {
            let (Some((to, bx)), Some((_, bxp))) = (self.lowering(from, x), self.lowering(from, xp)) else {
                continue;
            };
            let (ei, ej) = (&self.energies[from], &self.energies[to]);
            for i in 0..ei.len() {
                for j in 0..ej.len() {
                    let amp = bx[(j, i)] * bxp[(j, i)];
                    if amp == 0.0 {
                        continue;
                    }
                    let w = if dtau == 0.0 {
                        -(ei[i] - self.shift)
                    } else {
                        -(1.0 - dtau / self.nu) * (ej[j] - self.shift) - dtau / self.nu * (ei[i] - self.shift)
                    };
                    total += amp * w.exp();
                }
            }
        }
        total / norm
    }

    pub fn gamma1(&self) -> DMatrix<f64> {
        let n = self.basis.sites;
        DMatrix::from_fn(n, n, |x, y| self.duhamel(0.0, x, y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct XiResult {
    pub xi: f64,
    pub xi0: f64,
    pub xi_rel: f64,
    pub drift: f64,
    pub flagged: bool,
}

pub fn xi_exact(sys: &System, n_max: usize, drift_tol: f64) -> Result<XiResult> {
    let spec = FockSpectrum::new(sys, n_max)?;
    let mut free = sys.params;
    free.lambda0 = 0.0;
    let spec0 = FockSpectrum::new(&sys.with_params(free)?, n_max)?;
    let (xi, xi0) = (spec.xi(), spec0.xi());
    let drift = spec.drift();
    Ok(XiResult {
        xi,
        xi0,
        xi_rel: xi / xi0,
        drift,
        flagged: drift > drift_tol,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn duhamel_exact(
    sys: &System,
    n_max: usize,
    tau: f64,
    x: usize,
    tau_p: f64,
    xp: usize,
) -> Result<f64> {
    let nu = sys.params.nu;
    if !(0.0..nu).contains(&tau) || !(0.0..nu).contains(&tau_p) || tau_p > tau {
        return Err(Error::Domain(format!(
            "need 0 ≤ τ′ ≤ τ < ν, got τ = {tau}, τ′ = {tau_p}"
        )));
    }
    let sites = sys.geom.sites();
    if x >= sites || xp >= sites {
        return Err(Error::Shape(format!("site out of range for {sites} sites")));
    }
    Ok(FockSpectrum::new(sys, n_max)?.duhamel(tau - tau_p, x, xp))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcrReport {
    /// max |[Φ,Φ*] − ν| over occupations n < n_max.
    pub protected: f64,
    /// [Φ,Φ*] on the top state n = n_max.
    pub top_commutator: f64,
}

/// Commutator check for a single truncated mode with Φ = √ν b.
pub fn ccr_residual(nu: f64, n_max: usize) -> CcrReport {
    let dim = n_max + 1;
    let phi = DMatrix::from_fn(dim, dim, |i, j| {
        if j == i + 1 {
            (nu * j as f64).sqrt()
        } else {
            0.0
        }
    });
    let comm = &phi * phi.transpose() - phi.transpose() * &phi;
    let mut protected: f64 = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            if i < n_max && j < n_max {
                let target = if i == j { nu } else { 0.0 };
                protected = protected.max((comm[(i, j)] - target).abs());
            }
        }
    }
    CcrReport {
        protected,
        top_commutator: comm[(n_max, n_max)],
    }
}

/// Single-site gas with any real N > 0, using the degeneracy
/// Γ(n+N)/(Γ(N) n!) of total occupation n. Returns (Ξ, Ξ⁽⁰⁾, per-species ⟨n⟩).
pub fn single_site_exact(sys: &System, n_max: usize) -> Result<(f64, f64, f64)> {
    if sys.geom.sites() != 1 {
        return Err(Error::Shape("single-site formula needs |Λ| = 1".into()));
    }
    let p = &sys.params;
    let big_n = p.species;
    if !(big_n > 0.0) {
        return Err(Error::Domain(format!("N = {big_n}")));
    }
    let lambda = p.lambda();
    let v0 = sys.potential.v0();
    let offset = big_n * sys.rho()? / p.nu;
    let energy = |n: f64, lam: f64| p.nu * p.kappa0 * n + 0.5 * lam * v0 * (n - offset).powi(2);
    let e_min = (0..=n_max)
        .map(|n| energy(n as f64, lambda))
        .fold(f64::INFINITY, f64::min);
    let e0_min = (0..=n_max).map(|n| energy(n as f64, 0.0)).fold(f64::INFINITY, f64::min);
    let (mut xi, mut xi0, mut moment) = (0.0, 0.0, 0.0);
    let mut degeneracy = 1.0;
    for n in 0..=n_max {
        let nf = n as f64;
        if n > 0 {
            degeneracy *= (nf - 1.0 + big_n) / nf;
        }
        let w = degeneracy * (-(energy(nf, lambda) - e_min)).exp();
        xi += w;
        moment += nf * w;
        xi0 += degeneracy * (-(energy(nf, 0.0) - e0_min)).exp();
    }
    Ok((
        xi * (-e_min).exp(),
        xi0 * (-e0_min).exp(),
        moment / xi / big_n,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Coupling, ModelParams, RhoMode, TorusGeometry, TwoBodyPotential};

    fn system(sites: usize, lambda0: f64, species: f64, rho: RhoMode) -> System {
        let geom = TorusGeometry::lattice(1, sites).unwrap();
        let v = TwoBodyPotential::delta(&geom, 1.0).unwrap();
        let params = ModelParams {
            nu: 1.0,
            kappa0: 1.0,
            lambda0,
            species,
            coupling: Coupling::Fixed,
            rho,
        };
        System::new(geom, v, params).unwrap()
    }

    #[test]
    fn basis_sizes_are_multiset_counts() {
        for (sites, species, n_max) in [(1, 1, 4), (2, 1, 8), (2, 2, 5), (4, 2, 3)] {
            let b = OccupationBasis::new(sites, species, n_max).unwrap();
            assert_eq!(b.len() as f64, binomial(n_max + sites * species, sites * species));
        }
        assert!(matches!(OccupationBasis::new(4, 2, 30), Err(Error::Capacity(_))));
    }

    #[test]
    fn single_site_diagonals() {
        let (_, h) = build_hamiltonian(&system(1, 0.0, 1.0, RhoMode::Explicit(0.0)), 6).unwrap();
        let d = h.to_dense();
        for n in 0..=6 {
            assert!((d[(n, n)] - n as f64).abs() < 1e-14);
        }
        let (_, h) = build_hamiltonian(&system(1, 1.0, 1.0, RhoMode::Explicit(0.0)), 6).unwrap();
        let d = h.to_dense();
        for n in 0..=6 {
            let nf = n as f64;
            assert!((d[(n, n)] - (nf + nf * nf / 2.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn rho_shift_is_a_chemical_potential_shift() {
        // (λ/2)(n − ρ)² v = (λ/2)n²v − λρv·n + const on a single site
        let rho = 0.7;
        let (_, h0) = build_hamiltonian(&system(1, 0.8, 1.0, RhoMode::Explicit(0.0)), 5).unwrap();
        let (_, h1) = build_hamiltonian(&system(1, 0.8, 1.0, RhoMode::Explicit(rho)), 5).unwrap();
        let (d0, d1) = (h0.to_dense(), h1.to_dense());
        for n in 0..=5 {
            let nf = n as f64;
            let expect = d0[(n, n)] - 0.8 * rho * nf + 0.5 * 0.8 * rho * rho;
            assert!((d1[(n, n)] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn hamiltonian_is_symmetric() {
        let (_, h) = build_hamiltonian(&system(4, 0.5, 2.0, RhoMode::Explicit(0.3)), 3).unwrap();
        assert!(h.hermiticity_residual() <= 1e-12);
    }

    #[test]
    fn ideal_gas_partition_functions() {
        let e1 = (-1.0f64).exp();
        let r = xi_exact(&system(1, 0.0, 1.0, RhoMode::Explicit(0.0)), 10, 1e-3).unwrap();
        assert!((r.xi - 1.0 / (1.0 - e1)).abs() < 1e-4);
        assert_eq!(r.xi_rel, 1.0);
        let r = xi_exact(&system(2, 0.0, 1.0, RhoMode::Explicit(0.0)), 10, 1e-3).unwrap();
        let exact = 1.0 / ((1.0 - e1) * (1.0 - (-3.0f64).exp()));
        assert!((r.xi - exact).abs() < 1e-3);
        let two = xi_exact(&system(2, 0.0, 2.0, RhoMode::Explicit(0.0)), 10, 1e-3).unwrap();
        // species factorization, up to truncation of the joint basis
        assert!((two.xi - r.xi * r.xi).abs() < 5e-3 * exact * exact);
    }

    #[test]
    fn truncation_is_monotone() {
        let s = system(2, 0.5, 1.0, RhoMode::Explicit(0.0));
        let mut last = 0.0;
        for n in 0..=8 {
            let xi = xi_exact(&s, n, 1.0).unwrap().xi;
            assert!(xi >= last);
            last = xi;
        }
    }

    #[test]
    fn stability_bound_at_zero_rho() {
        for lam in [0.1, 0.5, 2.0] {
            let r = xi_exact(&system(2, lam, 1.0, RhoMode::Explicit(0.0)), 8, 1e-2).unwrap();
            assert!(r.xi_rel <= 1.0);
        }
    }

    #[test]
    fn free_duhamel_mode_by_mode() {
        let s = system(2, 0.0, 1.0, RhoMode::Explicit(0.0));
        let spec = FockSpectrum::new(&s, 10).unwrap();
        let g1 = spec.gamma1();
        let fg = crate::lattice::free_green(&s.geom, 1.0, 1.0).unwrap();
        assert!((g1 - &fg).amax() < 1e-3);
        let dt = 0.4;
        let heat = crate::lattice::heat_propagator(&s.geom, dt).unwrap();
        let id = DMatrix::<f64>::identity(2, 2);
        let expected = heat * (&id + &fg) * (-dt * 1.0f64).exp();
        for (x, y) in [(0, 0), (0, 1)] {
            assert!((spec.duhamel(dt, x, y) - expected[(x, y)]).abs() < 2e-3);
        }
    }

    #[test]
    fn gamma1_is_positive_semidefinite() {
        let s = system(2, 0.7, 1.0, RhoMode::Explicit(0.2));
        let g = FockSpectrum::new(&s, 8).unwrap().gamma1();
        assert!((&g - g.transpose()).amax() < 1e-12);
        assert!(SymmetricEigen::new(g).eigenvalues.iter().all(|&e| e >= -1e-12));
    }

    #[test]
    fn second_order_perturbation_single_site() {
        // Ξ(λ) = Σ_n e^{−n}(1 − λa_n + λ²a_n²/2) + O(λ³), a_n = (n − ρ)²/2
        let rho = 0.6;
        let lam = 0.02;
        let n_max = 10;
        let exact = xi_exact(&system(1, lam, 1.0, RhoMode::Explicit(rho)), n_max, 1.0).unwrap();
        let (mut z0, mut z1, mut z2) = (0.0, 0.0, 0.0);
        for n in 0..=n_max {
            let w = (-(n as f64)).exp();
            let a = 0.5 * (n as f64 - rho).powi(2);
            z0 += w;
            z1 += w * a;
            z2 += w * a * a;
        }
        let pert = (z0 - lam * z1 + 0.5 * lam * lam * z2) / z0;
        assert!((exact.xi_rel - pert).abs() < 10.0 * lam.powi(3));
    }

    #[test]
    fn ccr_examples() {
        let r = ccr_residual(0.5, 5);
        assert!(r.protected < 1e-14);
        let r = ccr_residual(1.0, 2);
        assert!((r.top_commutator + 2.0).abs() < 1e-14);
        let r = ccr_residual(0.0, 4);
        assert_eq!(r.protected, 0.0);
        assert_eq!(r.top_commutator, 0.0);
    }

    #[test]
    fn single_site_formula_matches_basis() {
        let s = system(1, 0.5, 2.0, RhoMode::Explicit(0.4));
        let r = xi_exact(&s, 8, 1.0).unwrap();
        let (xi, xi0, n) = single_site_exact(&s, 8).unwrap();
        assert!((xi - r.xi).abs() < 1e-12 * xi);
        assert!((xi0 - r.xi0).abs() < 1e-12 * xi0);
        let g = FockSpectrum::new(&s, 8).unwrap().gamma1();
        assert!((g[(0, 0)] - n).abs() < 1e-12);
    }
}
