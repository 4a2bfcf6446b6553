//! Cross-route agreement and structural properties at small sizes.

use bose_core::fock;
use bose_core::hs::{self, HsEngine, SigmaField};
use bose_core::lattice::{
    Coupling, ModelParams, RhoMode, System, TimeGrid, TorusGeometry, TwoBodyPotential,
};
use bose_core::loopgas::{self, SymanzikParams, Truncation};
use bose_core::meanfield::{self, FieldModel};
use bose_core::{limits, mayer, Error};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn params(nu: f64, lambda0: f64, rho: f64) -> ModelParams {
    ModelParams {
        nu,
        kappa0: 1.0,
        lambda0,
        species: 1.0,
        coupling: Coupling::Fixed,
        rho: RhoMode::Explicit(rho),
    }
}

fn ring(side: usize, p: ModelParams) -> System {
    let geom = TorusGeometry::lattice(1, side).unwrap();
    let v = TwoBodyPotential::delta(&geom, 1.0).unwrap();
    System::new(geom, v, p).unwrap()
}

fn agree(a: f64, ea: f64, b: f64, eb: f64, k: f64) -> bool {
    (a - b).abs() <= k * ea.hypot(eb)
}

/// Ξ for one species on the two-site ring by total-number sectors.
fn two_site_xi(nu: f64, lambda: f64, max_total: usize) -> f64 {
    let mut xi = 0.0;
    for total in 0..=max_total {
        let h = DMatrix::from_fn(total + 1, total + 1, |i, j| {
            if i == j {
                let (n0, n1) = (i as f64, (total - i) as f64);
                nu * 2.0 * total as f64 + 0.5 * lambda * (n0 * n0 + n1 * n1)
            } else if i.abs_diff(j) == 1 {
                let n0 = i.min(j);
                -nu * (((n0 + 1) * (total - n0)) as f64).sqrt()
            } else {
                0.0
            }
        });
        xi += SymmetricEigen::new(h).eigenvalues.iter().map(|e| (-e).exp()).sum::<f64>();
    }
    xi
}

#[test]
fn fock_module_matches_sector_diagonalization() {
    let sys = ring(2, params(1.0, 2.0, 0.0));
    let r = fock::xi_exact(&sys, 10, 1e-3).unwrap();
    let direct = two_site_xi(1.0, 2.0, 40);
    assert!((r.xi / direct - 1.0).abs() < 1e-8, "{} vs {direct}", r.xi);
}

#[test]
fn hs_and_loopgas_agree_with_density_shift() {
    for rho in [0.0, 0.3] {
        let sys = ring(3, params(1.0, 0.3, rho));
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let trunc = Truncation { n_max: 8, l_max: 8, tolerance: 1e-3 };
        let h = hs::estimate_xi_rel(&sys, grid, 40_000, 3).unwrap();
        let l = loopgas::xi_rel_series(&sys, grid, trunc, 40_000, 4).unwrap().estimate;
        assert!(agree(h.re, h.stderr_re, l.re, l.stderr_re, 4.0), "ρ={rho}: {} ± {} vs {} ± {}", h.re, h.stderr_re, l.re, l.stderr_re);
        let hg = hs::estimate_gamma1(&sys, grid, 0, 1, 40_000, 5).unwrap();
        let lg = loopgas::duhamel_loopgas(&sys, grid, 0.0, 0, 0.0, 1, trunc, 40_000, 6).unwrap().estimate;
        assert!(agree(hg.re, hg.stderr_re, lg.re, lg.stderr_re, 4.0), "ρ={rho}: {} vs {}", hg.re, lg.re);
    }
}

#[test]
fn unequal_times_match_oracle() {
    let sys = ring(2, params(1.0, 0.5, 0.0));
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let exact = fock::duhamel_exact(&sys, 10, 0.5, 0, 0.25, 1).unwrap();
    let h = hs::estimate_duhamel(&sys, grid, 0.5, 0, 0.25, 1, 40_000, 8).unwrap();
    assert!(agree(h.re, h.stderr_re, exact, 0.0, 4.0), "{} ± {} vs {exact}", h.re, h.stderr_re);
}

#[test]
fn first_cluster_coefficient_is_first_series_order() {
    let sys = ring(2, params(1.0, 0.5, 0.0));
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let trunc = Truncation { n_max: 2, l_max: 6, tolerance: 1e-3 };
    let b1 = mayer::ursell_coefficient(1, &sys, grid, 6, 20_000, 1).unwrap().estimate;
    let raw = loopgas::raw_series(&sys, grid, sys.kappa_rho().unwrap(), trunc, 20_000, 2).unwrap();
    let nq = sys.params.species * raw.loop_mass;
    let e1 = &raw.orders[1];
    assert!(agree(b1.re, b1.stderr_re, nq * e1.re, nq * e1.stderr_re, 4.0));
}

#[test]
fn second_cluster_coefficient_is_negative_and_tree_bounded() {
    let sys = ring(2, params(1.0, 0.5, 0.0));
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let b2 = mayer::ursell_coefficient(2, &sys, grid, 6, 20_000, 3).unwrap();
    assert!(b2.estimate.re <= 3.0 * b2.estimate.stderr_re);
    for n in 2..=4 {
        let b = mayer::ursell_coefficient(n, &sys, grid, 6, 5_000, 4).unwrap();
        assert_eq!(b.bound_violations, 0, "order {n}");
    }
}

#[test]
fn n_polynomial_structure() {
    let sys = ring(2, params(1.0, 0.0, 0.0));
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let poly = mayer::n_polynomial(&sys, grid, 3, 6, 1000, 1).unwrap();
    let q: f64 = loopgas::loop_activities(&sys.geom, 1.0, 1.0, 6).unwrap().iter().sum();
    assert!((poly.coefficients[0].0 - q).abs() < 1e-12);
    assert!(poly.coefficients[1..].iter().all(|c| c.0 == 0.0));
    assert_eq!(poly.slope_at_zero(), poly.coefficients[0].0);
    assert!((poly.eval(2.0) - 2.0 * q).abs() < 1e-12);
}

#[test]
fn trees_dominate_at_large_n() {
    let mut fractions = Vec::new();
    for n in [2.0, 32.0] {
        let p = ModelParams {
            species: n,
            coupling: Coupling::MeanField,
            ..params(1.0, 2.0, 0.0)
        };
        let sys = ring(2, p);
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let poly = mayer::n_polynomial(&sys, grid, 3, 6, 20_000, 9).unwrap();
        fractions.push(limits::non_tree_fraction(&poly, 3).unwrap());
    }
    assert!(fractions[1] < fractions[0], "{fractions:?}");
}

#[test]
fn regularized_field_series_matches_radial_quadrature() {
    let geom = TorusGeometry::lattice(1, 1).unwrap();
    let v = TwoBodyPotential::delta(&geom, 1.0).unwrap();
    let p = ModelParams {
        coupling: Coupling::MeanField,
        ..params(1.0, 0.5, 0.0)
    };
    let sys = System::new(geom.clone(), v.clone(), p).unwrap();
    let model = FieldModel::new(geom, v, 1.0, 0.5, 1.0, 0.0).unwrap();
    let radial = meanfield::radial_moments(&model).unwrap();
    let sym = SymanzikParams { delta: 0.01, n_max: 24, points: 8, rho_f: 0.0 };
    let est = loopgas::symanzik_series(&sys, sym, 100_000, 3).unwrap().relative;
    assert!(
        (est.re - radial.z_rel).abs() <= 4.0 * est.stderr_re + 2e-3,
        "{} ± {} vs {}",
        est.re,
        est.stderr_re,
        radial.z_rel
    );
}

#[test]
fn negative_type_potential_is_rejected() {
    let geom = TorusGeometry::lattice(1, 4).unwrap();
    let v = TwoBodyPotential::from_values(&geom, vec![1.0, 0.9, 0.0, 0.9]).unwrap();
    let err = System::new(geom, v, params(1.0, 1.0, 0.0)).unwrap_err();
    assert!(matches!(err, Error::Potential(_)), "{err:?}");
}

#[test]
fn fock_space_limits_are_capacity_errors() {
    let sys = ring(5, params(1.0, 1.0, 0.0));
    assert!(matches!(fock::xi_exact(&sys, 4, 1e-6), Err(Error::Capacity(_))));
    let sys = ring(2, params(1.0, 1.0, 0.0));
    assert!(matches!(fock::xi_exact(&sys, 11, 1e-6), Err(Error::Capacity(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_real_field_obeys_the_stability_bound(
        values in prop::collection::vec(-6.0f64..6.0, 24),
        nu in 0.3f64..3.0,
    ) {
        let sys = ring(3, params(nu, 1.0, 0.0));
        let grid = TimeGrid::new(nu, 8).unwrap();
        let engine = HsEngine::new(&sys, grid).unwrap();
        let sigma = SigmaField::from_values(8, 3, values).unwrap();
        let w = engine.log_weight(&sigma).unwrap();
        prop_assert!(w.logdet_diff.re >= -1e-12, "{:?}", w);
        prop_assert!(w.weight().norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn action_real_part_is_nonnegative(eta in prop::collection::vec(-20.0f64..20.0, 3)) {
        let geom = TorusGeometry::lattice(1, 3).unwrap();
        let v = TwoBodyPotential::delta(&geom, 1.0).unwrap();
        let model = FieldModel::new(geom, v, 0.7, 1.0, 2.0, 0.0).unwrap();
        let s = meanfield::action_closed_form(&eta, &model).unwrap();
        prop_assert!(s.re >= -1e-12, "{s}");
    }
}
