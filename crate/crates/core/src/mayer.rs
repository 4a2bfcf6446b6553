//! Cluster expansion of the loop gas: connected graphs with canonical
//! spanning trees, Ursell coefficients by Monte Carlo over loops, partial
//! sums of ln Ξ_rel and the coefficients of its expansion in powers of N.
//!
//! Each loop carries the weight N·activity·e^{−(λ/ν)V_ν(ω,ω)}; distinct loops
//! interact through e^{−(2λ/ν)V_ν(ω,ω′)}, since the double sum counts every
//! unordered pair twice. The Mayer factor of an edge is that exponential
//! minus one.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{System, TimeGrid};
use crate::loopgas::{self, GridPath, LoopEnsemble};
use crate::stats::{self, ComplexEstimate};

pub const MAX_CLUSTER: usize = 5;

/// exp(−coupling·V_ν(a, b)) − 1.
pub fn mayer_factor(a: &GridPath, b: &GridPath, ens: &LoopEnsemble, coupling: f64) -> f64 {
    (-coupling * ens.v_nu(a, b)).exp_m1()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterGraph {
    pub vertices: usize,
    /// Edges (i, j) with i < j in lexicographic order.
    pub edges: Vec<(usize, usize)>,
    /// Lexicographically minimal spanning tree.
    pub tree: Vec<(usize, usize)>,
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            out.push((i, j));
        }
    }
    out
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

/// Kruskal over edges in the given order; None when disconnected.
fn spanning_tree(n: usize, edges: &[(usize, usize)]) -> Option<Vec<(usize, usize)>> {
    let mut parent: Vec<usize> = (0..n).collect();
    let mut tree = Vec::with_capacity(n.saturating_sub(1));
    for &(i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            tree.push((i, j));
        }
    }
    (tree.len() + 1 == n).then_some(tree)
}

/// All connected labelled graphs on n ≤ 5 vertices, in order of their edge
/// bitmask over lexicographically ordered pairs.
pub fn enumerate_connected(n: usize) -> Result<Vec<ClusterGraph>> {
    if n > MAX_CLUSTER {
        return Err(Error::Capacity(format!("cluster size {n} > {MAX_CLUSTER}")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let pairs = all_pairs(n);
    let mut out = Vec::new();
    for mask in 0u32..(1 << pairs.len()) {
        let edges: Vec<_> = pairs
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, &e)| e)
            .collect();
        if let Some(tree) = spanning_tree(n, &edges) {
            out.push(ClusterGraph {
                vertices: n,
                edges,
                tree,
            });
        }
    }
    Ok(out)
}

/// A spanning tree on n labelled vertices together with the edges that may
/// be added without changing the canonical tree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeClass {
    pub tree: Vec<(usize, usize)>,
    pub compatible: Vec<(usize, usize)>,
}

/// Trees and their compatible edge sets. An edge e ∉ T is compatible when it
/// is lexicographically larger than every edge on the tree path joining its
/// endpoints; the graphs whose canonical tree is T are exactly T plus any
/// subset of compatible edges.
pub fn tree_classes(n: usize) -> Result<Vec<TreeClass>> {
    let graphs = enumerate_connected(n)?;
    let pairs = all_pairs(n);
    let mut out = Vec::new();
    for g in graphs.iter().filter(|g| g.edges.len() + 1 == n) {
        let compatible = pairs
            .iter()
            .filter(|e| !g.tree.contains(e))
            .filter(|&&e| tree_path(&g.tree, e.0, e.1).iter().all(|&t| t < e))
            .cloned()
            .collect();
        out.push(TreeClass {
            tree: g.tree.clone(),
            compatible,
        });
    }
    Ok(out)
}

fn tree_path(tree: &[(usize, usize)], from: usize, to: usize) -> Vec<(usize, usize)> {
    fn walk(tree: &[(usize, usize)], at: usize, to: usize, prev: usize, path: &mut Vec<(usize, usize)>) -> bool {
        if at == to {
            return true;
        }
        for &(i, j) in tree {
            let next = if i == at { j } else if j == at { i } else { continue };
            if next == prev {
                continue;
            }
            path.push((i, j));
            if walk(tree, next, to, at, path) {
                return true;
            }
            path.pop();
        }
        false
    }
    let mut path = Vec::new();
    walk(tree, from, to, usize::MAX, &mut path);
    path
}

/// Σ over connected graphs of Π_edges g, grouped by canonical tree, and the
/// tree bound Σ_T Π_T |g|. `g` is indexed by (i, j) with i < j.
pub fn connected_sum(classes: &[TreeClass], g: impl Fn(usize, usize) -> f64) -> (f64, f64, f64) {
    let mut total = 0.0;
    let mut trees_only = 0.0;
    let mut bound = 0.0;
    for c in classes {
        let t: f64 = c.tree.iter().map(|&(i, j)| g(i, j)).product();
        let extra: f64 = c.compatible.iter().map(|&(i, j)| 1.0 + g(i, j)).product();
        total += t * extra;
        trees_only += t;
        bound += t.abs();
    }
    (total, trees_only, bound)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UrsellEstimate {
    pub order: usize,
    pub estimate: ComplexEstimate,
    /// Part of the estimate carried by bare trees (compatible edges set to 0).
    pub tree_part: ComplexEstimate,
    /// Mean of the per-sample tree bound.
    pub tree_bound: f64,
    /// Samples whose graph sum exceeded the tree bound.
    pub bound_violations: usize,
}

/// b_n = (1/n!)·∫ Π_i w(ω_i) Σ_{connected G} Π_{edges} g, with loops drawn at
/// κ(ρ), windings up to l_max and the factor N per loop included.
pub fn ursell_coefficient(
    n: usize,
    sys: &System,
    grid: TimeGrid,
    l_max: usize,
    samples: usize,
    seed: u64,
) -> Result<UrsellEstimate> {
    if n == 0 || n > MAX_CLUSTER {
        return Err(Error::Capacity(format!("cluster size {n} outside 1..={MAX_CLUSTER}")));
    }
    let p = &sys.params;
    let kappa = sys.kappa_rho()?;
    let ens = LoopEnsemble::new(sys, grid, kappa, l_max, 0)?;
    let coupling = p.lambda() / p.nu;
    let factorial: f64 = (1..=n).map(|k| k as f64).product();
    let prefactor = (p.species * ens.mass()).powi(n as i32) / factorial;
    let exact = |v: f64| ComplexEstimate::exact(Complex64::new(v, 0.0), samples as u64, seed);
    if coupling == 0.0 {
        let v = if n == 1 { prefactor } else { 0.0 };
        return Ok(UrsellEstimate {
            order: n,
            estimate: exact(v),
            tree_part: exact(v),
            tree_bound: 0.0,
            bound_violations: 0,
        });
    }
    let classes = tree_classes(n)?;
    let rows = stats::try_parallel_samples(samples, seed, |rng| {
        let loops: Vec<GridPath> = (0..n)
            .map(|_| ens.sample(rng).map(|l| l.grid_path()))
            .collect::<Result<_>>()?;
        let selfs: f64 = loops
            .iter()
            .map(|w| (-coupling * ens.v_nu(w, w)).exp())
            .product();
        let (sum, trees, bound) = if n == 1 {
            (1.0, 1.0, 1.0)
        } else {
            let mut g = vec![0.0; n * n];
            for i in 0..n {
                for j in i + 1..n {
                    g[i * n + j] = mayer_factor(&loops[i], &loops[j], &ens, 2.0 * coupling);
                }
            }
            connected_sum(&classes, |i, j| g[i * n + j])
        };
        let c = prefactor * selfs;
        Ok((c * sum, c * trees, c * bound))
    })?;
    let vals: Vec<Complex64> = rows.iter().map(|r| Complex64::new(r.0, 0.0)).collect();
    let trees: Vec<Complex64> = rows.iter().map(|r| Complex64::new(r.1, 0.0)).collect();
    let ones = vec![Complex64::new(1.0, 0.0); rows.len()];
    let violations = rows
        .iter()
        .filter(|r| r.0.abs() > r.2 * (1.0 + 1e-12) + 1e-300)
        .count();
    Ok(UrsellEstimate {
        order: n,
        estimate: ComplexEstimate::from_samples(&vals, &ones, seed),
        tree_part: ComplexEstimate::from_samples(&trees, &ones, seed),
        tree_bound: rows.iter().map(|r| r.2).sum::<f64>() / rows.len().max(1) as f64,
        bound_violations: violations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialSums {
    /// ln C_ρ − N·Q₀, the part of ln Ξ_rel not carried by the clusters.
    pub offset: f64,
    pub coefficients: Vec<UrsellEstimate>,
    /// offset + Σ_{n≤k} b_n for k = 1..=n_max, errors added in quadrature.
    pub sums: Vec<(f64, f64)>,
}

/// Partial sums of ln Ξ_rel = ln C_ρ − N·Q₀ + Σ_n b_n.
pub fn log_xi_partial_sums(
    sys: &System,
    grid: TimeGrid,
    n_max: usize,
    l_max: usize,
    samples: usize,
    seed: u64,
) -> Result<PartialSums> {
    let p = &sys.params;
    let q0: f64 = loopgas::loop_activities(&sys.geom, p.nu, p.kappa0, l_max)?.iter().sum();
    let offset = loopgas::phase_constant(sys)?.ln() - p.species * q0;
    let coefficients: Vec<UrsellEstimate> = (1..=n_max)
        .map(|n| ursell_coefficient(n, sys, grid, l_max, samples, stats::chain_seed(seed, n as u64)))
        .collect::<Result<_>>()?;
    let mut sums = Vec::with_capacity(n_max);
    let (mut s, mut var) = (offset, 0.0);
    for b in &coefficients {
        s += b.estimate.re;
        var += b.estimate.stderr_re.powi(2);
        sums.push((s, var.sqrt()));
    }
    Ok(PartialSums {
        offset,
        coefficients,
        sums,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NPolynomial {
    /// λ used for every order; in mean-field mode it is λ₀ν²/(N+1) at the
    /// configured N, held fixed while N is treated as a variable.
    pub lambda: f64,
    pub meanfield_mode: bool,
    /// c_n with ln S ≈ Σ_n c_n Nⁿ, S the loop-gas series at κ(ρ).
    pub coefficients: Vec<(f64, f64)>,
    /// Tree-graph part of each c_n.
    pub tree_parts: Vec<(f64, f64)>,
}

impl NPolynomial {
    pub fn eval(&self, n: f64) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(k, c)| c.0 * n.powi(k as i32 + 1))
            .sum()
    }

    /// d/dN at N = 0.
    pub fn slope_at_zero(&self) -> f64 {
        self.coefficients.first().map_or(0.0, |c| c.0)
    }
}

/// Coefficients of ln S in powers of N: c_n = b_n / Nⁿ.
pub fn n_polynomial(
    sys: &System,
    grid: TimeGrid,
    n_max: usize,
    l_max: usize,
    samples: usize,
    seed: u64,
) -> Result<NPolynomial> {
    let p = &sys.params;
    let mut coefficients = Vec::with_capacity(n_max);
    let mut tree_parts = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let b = ursell_coefficient(n, sys, grid, l_max, samples, stats::chain_seed(seed, n as u64))?;
        let scale = p.species.powi(n as i32).recip();
        coefficients.push((b.estimate.re * scale, b.estimate.stderr_re * scale));
        tree_parts.push((b.tree_part.re * scale, b.tree_part.stderr_re * scale));
    }
    Ok(NPolynomial {
        lambda: p.lambda(),
        meanfield_mode: p.coupling == crate::lattice::Coupling::MeanField,
        coefficients,
        tree_parts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn connected_counts() {
        let counts: Vec<usize> = (1..=5).map(|n| enumerate_connected(n).unwrap().len()).collect();
        assert_eq!(counts, vec![1, 1, 4, 38, 728]);
        assert!(enumerate_connected(6).is_err());
    }

    #[test]
    fn trees_are_spanning_subgraphs() {
        for n in 1..=5 {
            for g in enumerate_connected(n).unwrap() {
                assert_eq!(g.tree.len() + 1, n);
                assert!(g.tree.iter().all(|e| g.edges.contains(e)));
            }
        }
    }

    #[test]
    fn tree_classes_partition_graphs() {
        for n in 2..=5 {
            let classes = tree_classes(n).unwrap();
            // Cayley: n^{n−2} labelled trees
            assert_eq!(classes.len(), n.pow(n as u32 - 2));
            let total: usize = classes.iter().map(|c| 1usize << c.compatible.len()).sum();
            assert_eq!(total, enumerate_connected(n).unwrap().len());
        }
    }

    #[test]
    fn grouped_sum_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 2..=5 {
            let classes = tree_classes(n).unwrap();
            let graphs = enumerate_connected(n).unwrap();
            let g: Vec<f64> = (0..n * n).map(|_| -rng.random::<f64>()).collect();
            let direct: f64 = graphs
                .iter()
                .map(|gr| gr.edges.iter().map(|&(i, j)| g[i * n + j]).product::<f64>())
                .sum();
            let (grouped, _, bound) = connected_sum(&classes, |i, j| g[i * n + j]);
            assert!((direct - grouped).abs() < 1e-12 * (1.0 + direct.abs()));
            assert!(grouped.abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn single_site_mayer_factor() {
        use crate::lattice::*;
        let geom = TorusGeometry::lattice(1, 1).unwrap();
        let v = TwoBodyPotential::delta(&geom, 1.0).unwrap();
        let params = ModelParams {
            nu: 1.0,
            kappa0: 1.0,
            lambda0: 1.0,
            species: 1.0,
            coupling: Coupling::Fixed,
            rho: RhoMode::Explicit(0.0),
        };
        let sys = System::new(geom, v, params).unwrap();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let ens = LoopEnsemble::new(&sys, grid, 1.0, 1, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = ens.sample(&mut rng).unwrap().grid_path();
        // V_ν = ν/2 for two constant one-winding paths
        assert!((mayer_factor(&w, &w, &ens, 1.0) + 0.393469).abs() < 1e-6);
        let zero = TwoBodyPotential::zero(&sys.geom).unwrap();
        let free = System::new(sys.geom.clone(), zero, params).unwrap();
        let ens0 = LoopEnsemble::new(&free, grid, 1.0, 1, 0).unwrap();
        assert_eq!(mayer_factor(&w, &w, &ens0, 1.0), 0.0);
    }
}
