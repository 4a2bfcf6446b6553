//! Estimators with batch-means errors, mergeable sufficient statistics and
//! deterministic parallel sampling.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BATCHES: usize = 32;
pub const MIN_ESS: f64 = 10.0;
/// Samples drawn from one RNG stream; blocks are the unit of parallelism.
const BLOCK: usize = 128;

/// Count, mean and sum of squared deviations (Welford / Chan et al.).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let d = other.mean - self.mean;
        Moments {
            count: n,
            mean: self.mean + d * nb / n as f64,
            m2: self.m2 + other.m2 + d * d * na * nb / n as f64,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn from_slice(xs: &[f64]) -> Moments {
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexEstimate {
    pub re: f64,
    pub im: f64,
    pub stderr_re: f64,
    pub stderr_im: f64,
    pub samples: u64,
    /// (Σ|w|)²/Σ|w|² of the reweighting factors.
    pub ess: f64,
    pub seed: u64,
    pub flagged: bool,
    pub moments_re: Moments,
    pub moments_im: Moments,
    pub abs_sum: f64,
    pub abs_sq_sum: f64,
}

impl ComplexEstimate {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    /// A deterministic value with no statistical error.
    pub fn exact(value: Complex64, samples: u64, seed: u64) -> Self {
        let n = samples.max(1);
        ComplexEstimate {
            re: value.re,
            im: value.im,
            stderr_re: 0.0,
            stderr_im: 0.0,
            samples: n,
            ess: n as f64,
            seed,
            flagged: false,
            moments_re: Moments { count: n, mean: value.re, m2: 0.0 },
            moments_im: Moments { count: n, mean: value.im, m2: 0.0 },
            abs_sum: n as f64,
            abs_sq_sum: n as f64,
        }
    }

    /// Mean of `values` with batch-means errors; `weights` are the complex
    /// reweighting factors whose moduli define the effective sample size.
    pub fn from_samples(values: &[Complex64], weights: &[Complex64], seed: u64) -> Self {
        let n = values.len();
        let re: Vec<f64> = values.iter().map(|z| z.re).collect();
        let im: Vec<f64> = values.iter().map(|z| z.im).collect();
        let moments_re = Moments::from_slice(&re);
        let moments_im = Moments::from_slice(&im);
        let abs_sum: f64 = weights.iter().map(|w| w.norm()).sum();
        let abs_sq_sum: f64 = weights.iter().map(|w| w.norm_sqr()).sum();
        let ess = if abs_sq_sum > 0.0 {
            abs_sum * abs_sum / abs_sq_sum
        } else {
            0.0
        };
        ComplexEstimate {
            re: moments_re.mean,
            im: moments_im.mean,
            stderr_re: batch_stderr(&re),
            stderr_im: batch_stderr(&im),
            samples: n as u64,
            ess,
            seed,
            flagged: ess < MIN_ESS,
            moments_re,
            moments_im,
            abs_sum,
            abs_sq_sum,
        }
    }

    /// Ratio Σnum/Σden with delta-method errors. Internally the estimate is
    /// the mean of the influence values r + (num_i − r·den_i)/mean(den).
    pub fn ratio(num: &[Complex64], den: &[Complex64], seed: u64) -> Self {
        let n = num.len().max(1) as f64;
        let dbar: Complex64 = den.iter().sum::<Complex64>() / n;
        let nbar: Complex64 = num.iter().sum::<Complex64>() / n;
        let r = nbar / dbar;
        let influence: Vec<Complex64> = num
            .iter()
            .zip(den)
            .map(|(a, b)| r + (a - r * b) / dbar)
            .collect();
        let mut est = Self::from_samples(&influence, den, seed);
        est.re = r.re;
        est.im = r.im;
        est
    }

    /// Pool independent estimates of the same quantity.
    pub fn merge(&self, other: &ComplexEstimate) -> ComplexEstimate {
        let moments_re = self.moments_re.merge(&other.moments_re);
        let moments_im = self.moments_im.merge(&other.moments_im);
        let abs_sum = self.abs_sum + other.abs_sum;
        let abs_sq_sum = self.abs_sq_sum + other.abs_sq_sum;
        let ess = if abs_sq_sum > 0.0 {
            abs_sum * abs_sum / abs_sq_sum
        } else {
            0.0
        };
        ComplexEstimate {
            re: moments_re.mean,
            im: moments_im.mean,
            stderr_re: moments_re.stderr(),
            stderr_im: moments_im.stderr(),
            samples: moments_re.count,
            ess,
            seed: self.seed.min(other.seed),
            flagged: ess < MIN_ESS,
            moments_re,
            moments_im,
            abs_sum,
            abs_sq_sum,
        }
    }

    /// Multiply by a deterministic scalar.
    pub fn scale(&self, c: f64) -> ComplexEstimate {
        let scale_m = |m: &Moments| Moments {
            count: m.count,
            mean: m.mean * c,
            m2: m.m2 * c * c,
        };
        ComplexEstimate {
            re: self.re * c,
            im: self.im * c,
            stderr_re: self.stderr_re * c.abs(),
            stderr_im: self.stderr_im * c.abs(),
            moments_re: scale_m(&self.moments_re),
            moments_im: scale_m(&self.moments_im),
            ..self.clone()
        }
    }

    /// |estimate − target| in units of the combined standard error.
    pub fn sigmas_from(&self, target: Complex64, target_err: f64) -> f64 {
        let dre = (self.re - target.re).abs() / (self.stderr_re.powi(2) + target_err.powi(2)).sqrt().max(1e-300);
        let dim = (self.im - target.im).abs() / (self.stderr_im.powi(2) + target_err.powi(2)).sqrt().max(1e-300);
        dre.max(dim)
    }
}

/// Standard error of the mean from non-overlapping batch means.
pub fn batch_stderr(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let b = if n >= 2 * BATCHES { BATCHES } else { n };
    let size = n / b;
    let means: Vec<f64> = (0..b)
        .map(|i| xs[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    Moments::from_slice(&means).stderr()
}

/// Chain seed from a base seed and chain index (splitmix64 of the sum), so a
/// chain's stream does not depend on how many chains run beside it.
pub fn chain_seed(seed: u64, chain: u64) -> u64 {
    let mut z = seed.wrapping_add(chain).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw `n` samples in parallel. Sample i always comes from stream i/BLOCK,
/// so results do not depend on the thread count.
pub fn parallel_samples<T, F>(n: usize, seed: u64, draw: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> T + Sync,
{
    let blocks = n.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let len = BLOCK.min(n - b * BLOCK);
            (0..len).map(|_| draw(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

/// Fallible variant of [`parallel_samples`].
pub fn try_parallel_samples<T, F>(n: usize, seed: u64, draw: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<T> + Sync,
{
    parallel_samples(n, seed, draw).into_iter().collect()
}

pub fn require_samples(n: usize, min: usize) -> Result<()> {
    if n < min {
        Err(Error::Domain(format!("need at least {min} samples, got {n}")))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn merge_matches_pooled(a in prop::collection::vec(-10.0f64..10.0, 1..50),
                                b in prop::collection::vec(-10.0f64..10.0, 1..50)) {
            let pooled: Vec<f64> = a.iter().chain(&b).cloned().collect();
            let direct = Moments::from_slice(&pooled);
            let merged = Moments::from_slice(&a).merge(&Moments::from_slice(&b));
            prop_assert_eq!(direct.count, merged.count);
            prop_assert!((direct.mean - merged.mean).abs() < 1e-12);
            prop_assert!((direct.m2 - merged.m2).abs() < 1e-9 * (1.0 + direct.m2));
        }
    }

    #[test]
    fn batch_errors_on_iid_match_naive() {
        let xs: Vec<f64> = parallel_samples(1 << 14, 3, rand::Rng::random::<f64>);
        let naive = Moments::from_slice(&xs).stderr();
        let batched = batch_stderr(&xs);
        assert!((batched / naive - 1.0).abs() < 0.4, "{batched} vs {naive}");
    }

    #[test]
    fn parallel_sampling_is_deterministic() {
        let a: Vec<u64> = parallel_samples(1000, 9, rand::Rng::random);
        let b: Vec<u64> = parallel_samples(1000, 9, rand::Rng::random);
        assert_eq!(a, b);
        let c: Vec<u64> = parallel_samples(1000, 10, rand::Rng::random);
        assert_ne!(a, c);
    }

    #[test]
    fn ratio_of_constant_weights_is_plain_mean() {
        let num: Vec<Complex64> = (0..100).map(|i| Complex64::new(i as f64, 0.0)).collect();
        let den = vec![Complex64::new(2.0, 0.0); 100];
        let r = ComplexEstimate::ratio(&num, &den, 0);
        assert!((r.re - 49.5 / 2.0).abs() < 1e-12);
        assert!((r.ess - 100.0).abs() < 1e-9);
    }

    #[test]
    fn chain_seeds_differ() {
        assert_ne!(chain_seed(1, 0), chain_seed(1, 1));
        assert_eq!(chain_seed(5, 2), chain_seed(5, 2));
    }
}
