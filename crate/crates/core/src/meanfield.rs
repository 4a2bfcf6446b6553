//! Classical Hartree field theory on the lattice: Wick constants, the
//! Wick-ordered energy functional, a Metropolis Gibbs sampler, the action
//! S(η) of the auxiliary field and the η representation of the relative
//! partition function.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{TorusGeometry, TwoBodyPotential};
use crate::quad;
use crate::stats::{self, ComplexEstimate, Moments};

/// c = [(−Δ/2 + κ₀)⁻¹]_{xx}.
pub fn wick_constant(geom: &TorusGeometry, kappa0: f64) -> Result<f64> {
    if !(kappa0 > 0.0) {
        return Err(Error::Domain(format!("κ₀ = {kappa0} must be positive")));
    }
    Ok(geom.spectral_kernel(|e| 1.0 / (e + kappa0))?[0])
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldModel {
    pub geom: TorusGeometry,
    pub potential: TwoBodyPotential,
    pub kappa0: f64,
    pub lambda0: f64,
    pub species: f64,
    /// Density offset ρ in the Wick-ordered interaction.
    pub rho: f64,
}

impl FieldModel {
    pub fn new(
        geom: TorusGeometry,
        potential: TwoBodyPotential,
        kappa0: f64,
        lambda0: f64,
        species: f64,
        rho: f64,
    ) -> Result<Self> {
        if !geom.is_lattice() {
            return Err(Error::UnsupportedMode("circle"));
        }
        if !(kappa0 > 0.0) || !(lambda0 >= 0.0) || !(species > 0.0) || !rho.is_finite() {
            return Err(Error::Domain(format!(
                "need κ₀ > 0, λ₀ ≥ 0, N > 0: κ₀ = {kappa0}, λ₀ = {lambda0}, N = {species}, ρ = {rho}"
            )));
        }
        Ok(FieldModel {
            geom,
            potential,
            kappa0,
            lambda0,
            species,
            rho,
        })
    }

    /// λ₀/(N+1), the variance scale of η.
    pub fn coupling(&self) -> f64 {
        self.lambda0 / (self.species + 1.0)
    }

    pub fn wick(&self) -> f64 {
        wick_constant(&self.geom, self.kappa0).expect("validated model")
    }

    fn integer_species(&self) -> Result<usize> {
        let n = self.species.round();
        if (self.species - n).abs() > 1e-12 || n < 1.0 {
            return Err(Error::Domain(format!("N = {} must be a positive integer", self.species)));
        }
        Ok(n as usize)
    }

    /// −Δ/2 + κ₀ as a dense matrix.
    pub fn operator(&self) -> DMatrix<f64> {
        let k = self.geom.spectral_kernel(|e| e + self.kappa0).expect("lattice");
        self.geom.circulant(&k)
    }

    fn potential_matrix(&self) -> DMatrix<f64> {
        let n = self.geom.sites();
        DMatrix::from_fn(n, n, |x, y| self.potential.at(self.geom.displacement(x, y)))
    }
}

/// Complex N-vector per site, stored site-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalField {
    pub species: usize,
    pub values: Vec<Complex64>,
    pub seed: Option<u64>,
}

impl ClassicalField {
    pub fn zeros(sites: usize, species: usize) -> Self {
        ClassicalField {
            species,
            values: vec![Complex64::new(0.0, 0.0); sites * species],
            seed: None,
        }
    }

    pub fn sites(&self) -> usize {
        self.values.len() / self.species
    }

    pub fn at(&self, x: usize) -> &[Complex64] {
        &self.values[x * self.species..(x + 1) * self.species]
    }

    pub fn norm_sqr(&self, x: usize) -> f64 {
        self.at(x).iter().map(|z| z.norm_sqr()).sum()
    }
}

/// 𝔥 = ½Σ|∇φ|² + κ₀Σ|φ|² + (λ₀/(2(N+1)))Σ_{x,y}(:|φ(x)|²: − ρ)v(x−y)(:|φ(y)|²: − ρ).
pub fn field_action(phi: &ClassicalField, model: &FieldModel) -> Result<f64> {
    let geom = &model.geom;
    let n = geom.sites();
    if phi.sites() != n || phi.values.len() != n * phi.species {
        return Err(Error::Shape(format!("field has {} entries for {n} sites", phi.values.len())));
    }
    let mut kinetic = 0.0;
    let mut mass = 0.0;
    for x in 0..n {
        let c = geom.coords(x);
        for i in 0..geom.dim() {
            let mut up = c.clone();
            up[i] = (up[i] + 1) % geom.side();
            let y = geom.index(&up);
            kinetic += phi
                .at(x)
                .iter()
                .zip(phi.at(y))
                .map(|(a, b)| (b - a).norm_sqr())
                .sum::<f64>();
        }
        mass += phi.norm_sqr(x);
    }
    let g = model.coupling();
    let mut interaction = 0.0;
    if g != 0.0 {
        let shift = model.species * model.wick() + model.rho;
        let dens: Vec<f64> = (0..n).map(|x| phi.norm_sqr(x) - shift).collect();
        for x in 0..n {
            for y in 0..n {
                interaction += dens[x] * model.potential.at(geom.displacement(x, y)) * dens[y];
            }
        }
        interaction *= 0.5 * g;
    }
    Ok(0.5 * kinetic + model.kappa0 * mass + interaction)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsRun {
    pub sweeps: usize,
    pub step: f64,
    pub acceptance: f64,
    pub tuning_failed: bool,
    /// Integrated autocorrelation time of |φ(0)|², in sweeps.
    pub tau_int: f64,
    /// ⟨φ̄_a(x)φ_b(y)⟩ at index ((x·N + a)·|Λ|N + y·N + b).
    pub correlator: Vec<ComplexEstimate>,
    /// ⟨φ_0(0)⟩.
    pub mean: ComplexEstimate,
    pub last: ClassicalField,
}

impl GibbsRun {
    pub fn two_point(&self, x: usize, a: usize, y: usize, b: usize) -> &ComplexEstimate {
        let n = self.last.species;
        let dim = self.last.values.len();
        &self.correlator[(x * n + a) * dim + y * n + b]
    }
}

/// Integrated autocorrelation time with Sokal's automatic window (c = 6).
pub fn integrated_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return 0.5;
    }
    let m = Moments::from_slice(xs);
    let var = m.m2 / n as f64;
    if var <= 0.0 {
        return 0.5;
    }
    let mut tau = 0.5;
    for t in 1..n / 2 {
        let c: f64 = (0..n - t).map(|i| (xs[i] - m.mean) * (xs[i + t] - m.mean)).sum::<f64>()
            / ((n - t) as f64 * var);
        tau += c;
        if t as f64 >= 6.0 * tau {
            break;
        }
    }
    tau.max(0.5)
}

/// Random-walk Metropolis on exp(−𝔥); site-by-site proposals with a step
/// tuned during burn-in towards 45% acceptance.
pub fn sample_gibbs_field(model: &FieldModel, sweeps: usize, seed: u64) -> Result<GibbsRun> {
    let species = model.integer_species()?;
    let sites = model.geom.sites();
    let dim = sites * species;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = ClassicalField::zeros(sites, species);
    let mut action = field_action(&phi, model)?;
    let mut step = 1.0 / model.kappa0.sqrt();
    let sweep = |phi: &mut ClassicalField, action: &mut f64, step: f64, rng: &mut ChaCha8Rng| -> Result<(usize, usize)> {
        let mut accepted = 0;
        for x in 0..sites {
            let old: Vec<Complex64> = phi.at(x).to_vec();
            for a in 0..species {
                let dz = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                phi.values[x * species + a] += dz * (step * std::f64::consts::FRAC_1_SQRT_2);
            }
            let trial = field_action(phi, model)?;
            if rng.random::<f64>() < (*action - trial).exp() {
                *action = trial;
                accepted += 1;
            } else {
                phi.values[x * species..(x + 1) * species].copy_from_slice(&old);
            }
        }
        Ok((accepted, sites))
    };
    // burn-in with tuning
    let tune_rounds = 40;
    let round = 50;
    let mut last_rate = 0.0;
    for _ in 0..tune_rounds {
        let (mut acc, mut tot) = (0, 0);
        for _ in 0..round {
            let (a, t) = sweep(&mut phi, &mut action, step, &mut rng)?;
            acc += a;
            tot += t;
        }
        last_rate = acc as f64 / tot as f64;
        step *= (2.0 * (last_rate - 0.45)).exp();
    }
    let mut samples: Vec<Vec<Complex64>> = vec![Vec::with_capacity(sweeps); dim * dim];
    let mut mean = Vec::with_capacity(sweeps);
    let mut trace = Vec::with_capacity(sweeps);
    let (mut acc, mut tot) = (0, 0);
    for _ in 0..sweeps {
        let (a, t) = sweep(&mut phi, &mut action, step, &mut rng)?;
        acc += a;
        tot += t;
        for i in 0..dim {
            for j in 0..dim {
                samples[i * dim + j].push(phi.values[i].conj() * phi.values[j]);
            }
        }
        mean.push(phi.values[0]);
        trace.push(phi.norm_sqr(0));
    }
    let acceptance = acc as f64 / tot.max(1) as f64;
    let ones = vec![Complex64::new(1.0, 0.0); sweeps];
    phi.seed = Some(seed);
    Ok(GibbsRun {
        sweeps,
        step,
        acceptance,
        tuning_failed: !(0.05..=0.95).contains(&acceptance) || !(0.05..=0.95).contains(&last_rate),
        tau_int: integrated_autocorrelation(&trace),
        correlator: samples
            .iter()
            .map(|s| ComplexEstimate::from_samples(s, &ones, seed))
            .collect(),
        mean: ComplexEstimate::from_samples(&mean, &ones, seed),
        last: phi,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialMoments {
    /// ∫e^{−𝔥}dφ / ∫e^{−κ₀|φ|²}dφ.
    pub z_rel: f64,
    /// ⟨|φ|²⟩ summed over species.
    pub norm2: f64,
    pub error: f64,
}

/// Single-site moments from the radial integral over u = |φ|²:
/// ∫u^{N−1}e^{−𝔥(u)}du, valid for any real N > 0.
pub fn radial_moments(model: &FieldModel) -> Result<RadialMoments> {
    if model.geom.sites() != 1 {
        return Err(Error::Shape("radial formula needs |Λ| = 1".into()));
    }
    let big_n = model.species;
    let shift = big_n * model.wick() + model.rho;
    let half_gv = 0.5 * model.coupling() * model.potential.at(0);
    let k = model.kappa0;
    let h = |u: f64| k * u + half_gv * (u - shift).powi(2);
    let moment = |p: f64| {
        quad::integrate_to_infinity(|u| u.powf(p) * (-h(u)).exp(), 0.0, 1e-300, 1e-13)
    };
    // substitute u = s^{1/N} near the origin to tame u^{N−1}
    let base = if big_n < 1.0 {
        quad::integrate_to_infinity(|s| (-h(s.powf(1.0 / big_n))).exp() / big_n, 0.0, 1e-300, 1e-13)
    } else {
        moment(big_n - 1.0)
    };
    let upper = moment(big_n);
    let z0 = libm::tgamma(big_n) / k.powf(big_n);
    Ok(RadialMoments {
        z_rel: base.value.re / z0,
        norm2: upper.value.re / base.value.re,
        error: (base.error / base.value.re.abs()).max(upper.error / upper.value.re.abs()),
    })
}

/// Real η(x) per site.
pub type EtaField = Vec<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionValue {
    pub value: Complex64,
    pub error: f64,
    pub converged: bool,
}

/// S(η) = ∫₀^∞ dt tr[R_t η (R_t⁻¹ − iη)⁻¹ η R_t], R_t = (−Δ/2 + κ₀ + t)⁻¹,
/// by adaptive quadrature on the compactified half-line.
pub fn action_s_eta(eta: &[f64], model: &FieldModel, tol: f64) -> Result<ActionValue> {
    let n = model.geom.sites();
    if eta.len() != n {
        return Err(Error::Shape(format!("η has {} entries for {n} sites", eta.len())));
    }
    if eta.iter().all(|&e| e == 0.0) {
        return Ok(ActionValue {
            value: Complex64::new(0.0, 0.0),
            error: 0.0,
            converged: true,
        });
    }
    let a = model.operator().map(|v| Complex64::new(v, 0.0));
    let e = DMatrix::from_diagonal(&DVector::from_iterator(n, eta.iter().map(|&v| Complex64::new(v, 0.0))));
    let ie = e.map(|v| v * Complex64::i());
    let id = DMatrix::<Complex64>::identity(n, n);
    let failed = std::cell::Cell::new(false);
    let r = quad::integrate_to_infinity_complex(
        |t| {
            let shifted = &a + &id * Complex64::new(t, 0.0);
            let (Some(rt), Some(m)) = (shifted.clone().try_inverse(), (&shifted - &ie).try_inverse()) else {
                failed.set(true);
                return Complex64::new(0.0, 0.0);
            };
            (&rt * &e * m * &e * &rt).trace()
        },
        0.0,
        tol,
        tol,
    );
    if failed.get() {
        return Err(Error::Singular("resolvent in S(η)".into()));
    }
    Ok(ActionValue {
        value: r.value,
        error: r.error,
        converged: r.converged,
    })
}

/// Eigenvalues μ of A^{−1/2} η A^{−1/2}.
pub fn eta_spectrum(eta: &[f64], model: &FieldModel) -> Result<Vec<f64>> {
    let geom = &model.geom;
    let n = geom.sites();
    if eta.len() != n {
        return Err(Error::Shape(format!("η has {} entries for {n} sites", eta.len())));
    }
    let root = geom.circulant(&geom.spectral_kernel(|e| (e + model.kappa0).powf(-0.5))?);
    let b = &root * DMatrix::from_diagonal(&DVector::from_column_slice(eta)) * &root;
    Ok(SymmetricEigen::new(0.5 * (&b + b.transpose())).eigenvalues.iter().cloned().collect())
}

/// Σ_μ [ln(1 − iμ) + iμ].
pub fn action_closed_form(eta: &[f64], model: &FieldModel) -> Result<Complex64> {
    Ok(eta_spectrum(eta, model)?
        .into_iter()
        .map(|mu| {
            let z = Complex64::new(0.0, mu);
            (Complex64::new(1.0, 0.0) - z).ln() + z
        })
        .sum())
}

/// Gaussian η with covariance (λ₀/(N+1))·v.
#[derive(Clone, Debug)]
pub struct EtaSampler {
    filter: DMatrix<f64>,
}

impl EtaSampler {
    pub fn new(model: &FieldModel) -> Result<Self> {
        let cov = model.potential_matrix() * model.coupling();
        let eig = SymmetricEigen::new(cov);
        if let Some(min) = eig.eigenvalues.iter().cloned().reduce(f64::min) {
            if min < -1e-10 * (1.0 + eig.eigenvalues.amax()) {
                return Err(Error::Potential(format!("covariance eigenvalue {min:.3e}")));
            }
        }
        let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let filter = &eig.eigenvectors * DMatrix::from_diagonal(&root);
        Ok(EtaSampler { filter })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> EtaField {
        let xi = DVector::from_fn(self.filter.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.filter * xi).iter().cloned().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub estimate: ComplexEstimate,
    /// Samples with Re S(η) < 0 (must stay zero).
    pub positivity_violations: usize,
}

/// Z = E_η[e^{−iρΣη}·e^{−N·S(η)}]; the phase −ρΣη is what remains of Nϑ after
/// the Wick subtraction has cancelled the linear term of S exactly.
pub fn z_via_eta(model: &FieldModel, samples: usize, seed: u64) -> Result<EtaEstimate> {
    if model.coupling() == 0.0 {
        return Ok(EtaEstimate {
            estimate: ComplexEstimate::exact(Complex64::new(1.0, 0.0), samples as u64, seed),
            positivity_violations: 0,
        });
    }
    stats::require_samples(samples, 2)?;
    let sampler = EtaSampler::new(model)?;
    let rows = stats::try_parallel_samples(samples, seed, |rng| {
        let eta = sampler.sample(rng);
        let s = action_closed_form(&eta, model)?;
        let phase = Complex64::new(0.0, -model.rho * eta.iter().sum::<f64>()).exp();
        Ok((phase * (-model.species * s).exp(), s.re < -1e-12))
    })?;
    let values: Vec<Complex64> = rows.iter().map(|r| r.0).collect();
    Ok(EtaEstimate {
        estimate: ComplexEstimate::from_samples(&values, &values, seed),
        positivity_violations: rows.iter().filter(|r| r.1).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(sites: usize, lambda0: f64, species: f64, rho: f64) -> FieldModel {
        let geom = TorusGeometry::lattice(1, sites).unwrap();
        let v = TwoBodyPotential::delta(&geom, 1.0).unwrap();
        FieldModel::new(geom, v, 1.0, lambda0, species, rho).unwrap()
    }

    #[test]
    fn wick_constants() {
        let one = TorusGeometry::lattice(1, 1).unwrap();
        assert!((wick_constant(&one, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let two = TorusGeometry::lattice(1, 2).unwrap();
        assert!((wick_constant(&two, 1.0).unwrap() - 0.5 * (1.0 + 1.0 / 3.0)).abs() < 1e-14);
        assert!(wick_constant(&two, 1e9).unwrap() < 1.01e-9);
    }

    #[test]
    fn action_special_cases() {
        let m = model(3, 0.8, 2.0, 0.0);
        let c = m.wick();
        let shifted = FieldModel { rho: -2.0 * c, ..m.clone() };
        let zero = ClassicalField::zeros(3, 2);
        assert!(field_action(&zero, &shifted).unwrap().abs() < 1e-14);
        let direct = 0.5 * 0.8 / 3.0 * (2.0 * c).powi(2) * 3.0;
        assert!((field_action(&zero, &m).unwrap() - direct).abs() < 1e-12);
        let single = model(1, 0.0, 1.0, 0.0);
        let mut phi = ClassicalField::zeros(1, 1);
        phi.values[0] = Complex64::new(1.0, 0.0);
        assert!((field_action(&phi, &single).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kinetic_term_is_quadratic_form() {
        let geom = TorusGeometry::lattice(2, 2).unwrap();
        let v = TwoBodyPotential::delta(&geom, 1.0).unwrap();
        let m = FieldModel::new(geom.clone(), v, 0.7, 0.0, 1.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut phi = ClassicalField::zeros(4, 1);
        for z in phi.values.iter_mut() {
            *z = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        }
        let p = DVector::from_column_slice(&phi.values);
        let a = m.operator().map(|x| Complex64::new(x, 0.0));
        let quad = (p.adjoint() * a * &p)[(0, 0)];
        assert!((field_action(&phi, &m).unwrap() - quad.re).abs() < 1e-13);
    }

    #[test]
    fn global_rotation_invariance() {
        let m = model(2, 1.3, 2.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut phi = ClassicalField::zeros(2, 2);
        for z in phi.values.iter_mut() {
            *z = Complex64::new(rng.random::<f64>(), rng.random::<f64>());
        }
        let (th, ph) = (0.7f64, 1.1f64);
        let u = [
            [Complex64::new(th.cos(), 0.0), Complex64::from_polar(th.sin(), ph)],
            [Complex64::from_polar(-th.sin(), -ph), Complex64::new(th.cos(), 0.0)],
        ];
        let mut rot = phi.clone();
        for x in 0..2 {
            for a in 0..2 {
                rot.values[2 * x + a] = u[a][0] * phi.values[2 * x] + u[a][1] * phi.values[2 * x + 1];
            }
        }
        let (h0, h1) = (field_action(&phi, &m).unwrap(), field_action(&rot, &m).unwrap());
        assert!((h0 - h1).abs() < 1e-12);
    }

    #[test]
    fn action_quadrature_matches_closed_form() {
        let single = model(1, 1.0, 1.0, 0.0);
        for h in [0.3, -1.7, 4.0] {
            let q = action_s_eta(&[h], &single, 1e-12).unwrap();
            // ∫ h²/((κ+t)²(κ+t−ih)) dt = ln(1 − ih/κ) + ih/κ for κ = 1
            let z = Complex64::new(0.0, h);
            let exact = (Complex64::new(1.0, 0.0) - z).ln() + z;
            assert!((q.value - exact).norm() < 1e-9, "{h}: {} vs {exact}", q.value);
            assert!(q.value.re >= 0.0);
        }
        let m = model(3, 1.0, 1.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let eta: Vec<f64> = (0..3).map(|_| 3.0 * (rng.random::<f64>() - 0.5)).collect();
            let q = action_s_eta(&eta, &m, 1e-12).unwrap();
            let c = action_closed_form(&eta, &m).unwrap();
            assert!((q.value - c).norm() < 1e-8);
            assert!(c.re >= 0.0);
        }
        assert_eq!(action_s_eta(&[0.0; 3], &m, 1e-10).unwrap().value, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn action_second_order() {
        let m = model(2, 1.0, 1.0, 0.0);
        let eta = [0.4, -0.9];
        let a = m.operator();
        let id = DMatrix::<f64>::identity(2, 2);
        let e = DMatrix::from_diagonal(&DVector::from_column_slice(&eta));
        let second = quad::integrate_to_infinity(
            |t| {
                let r = (&a + &id * t).try_inverse().unwrap();
                (&r * &e * &r * &e * &r).trace()
            },
            0.0,
            1e-14,
            1e-12,
        )
        .value
        .re;
        for s in [1e-2, 5e-3] {
            let scaled: Vec<f64> = eta.iter().map(|x| x * s).collect();
            let q = action_closed_form(&scaled, &m).unwrap();
            assert!((q.re / (s * s) - second).abs() < 5.0 * s * second);
        }
    }

    #[test]
    fn free_gibbs_second_moment() {
        let m = model(1, 0.0, 1.0, 0.0);
        let run = sample_gibbs_field(&m, 40_000, 11).unwrap();
        assert!(!run.tuning_failed);
        let e = run.two_point(0, 0, 0, 0);
        assert!((e.re - 1.0).abs() < 3.0 * e.stderr_re + 1e-3, "{} ± {}", e.re, e.stderr_re);
        assert!(run.mean.re.abs() < 4.0 * run.mean.stderr_re + 1e-3);
    }

    #[test]
    fn radial_free_limit() {
        let m = model(1, 0.0, 2.0, 0.0);
        let r = radial_moments(&m).unwrap();
        assert!((r.z_rel - 1.0).abs() < 1e-10);
        assert!((r.norm2 - 2.0).abs() < 1e-10);
    }

    #[test]
    fn eta_route_free_is_exact() {
        let m = model(2, 0.0, 1.0, 0.3);
        let z = z_via_eta(&m, 100, 1).unwrap();
        assert_eq!(z.estimate.value(), Complex64::new(1.0, 0.0));
        assert_eq!(z.estimate.stderr_re, 0.0);
    }
}
