//! Densities and samplers for the distributions appearing in the model:
//! normal, truncated normal, truncated exponential, scaled inverse
//! chi-square and gamma (shape/rate).

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Maps an angle onto `[-pi, pi)`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU
    if y >= PI {
        y - TAU
    } else {
        y
    }
}

pub fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    -0.5 * z * z / var - 0.5 * var.ln() - LN_SQRT_2PI
}

/// Standard normal upper tail `P(Z > x)`.
fn upper_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `ln P(Z > x)`, accurate far into the tail.
fn ln_upper_tail(x: f64) -> f64 {
    if x < 30.0 {
        upper_tail(x).ln()
    } else {
        // Mills ratio expansion
        let x2 = x * x;
        -0.5 * x2 - x.ln() - LN_SQRT_2PI + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// `ln (Phi(hi) - Phi(lo))` for the standard normal, `lo < hi`.
pub fn ln_standard_normal_mass(lo: f64, hi: f64) -> f64 {
    debug_assert!(lo < hi);
    if lo >= 0.0 {
        // both in the upper tail
        let a = ln_upper_tail(lo);
        let b = ln_upper_tail(hi);
        a + (-(b - a).exp()).ln_1p()
    } else if hi <= 0.0 {
        ln_standard_normal_mass(-hi, -lo)
    } else {
        (1.0 - upper_tail(hi) - upper_tail(-lo)).ln()
    }
}

/// A normal distribution restricted to `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64, lo: f64, hi: f64) -> Self {
        debug_assert!(sd > 0.0 && lo < hi);
        Self { mean, sd, lo, hi }
    }

    fn standard_bounds(&self) -> (f64, f64) {
        ((self.lo - self.mean) / self.sd, (self.hi - self.mean) / self.sd)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(self.lo..self.hi).contains(&x) {
            return f64::NEG_INFINITY;
        }
        let (a, b) = self.standard_bounds();
        let z = (x - self.mean) / self.sd;
        -0.5 * z * z - LN_SQRT_2PI - self.sd.ln() - ln_standard_normal_mass(a, b)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (a, b) = self.standard_bounds();
        let z = if a > 0.0 {
            sample_std_tail(a, b, rng)
        } else if b < 0.0 {
            -sample_std_tail(-b, -a, rng)
        } else {
            sample_std_straddling(a, b, rng)
        };
        (self.mean + self.sd * z).clamp(self.lo, next_below(self.hi))
    }
}

fn next_below(x: f64) -> f64 {
    if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else {
        x - f64::EPSILON * x.abs().max(f64::MIN_POSITIVE)
    }
}

/// Standard normal on `[a, b)` with `a <= 0 <= b`.
fn sample_std_straddling<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if b - a >= 1.0 {
        // mass is at least ~0.38, plain rejection
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z >= a && z < b {
                return z;
            }
        }
    }
    // narrow interval around the mode: uniform proposal, density <= 1
    loop {
        let z = rng.random_range(a..b);
        if rng.random::<f64>() < (-0.5 * z * z).exp() {
            return z;
        }
    }
}

/// Standard normal on `[a, b)` with `0 < a`, via Robert (1995): exponential
/// proposals for long intervals, uniform proposals for short ones.
fn sample_std_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    // expected width of the exponential proposal relative to the interval
    if b - a > 1.0 / rate {
        loop {
            let z = a - rng.random::<f64>().ln() / rate;
            if z >= b {
                continue;
            }
            let d = z - rate;
            if rng.random::<f64>() < (-0.5 * d * d).exp() {
                return z;
            }
        }
    }
    loop {
        let z = rng.random_range(a..b);
        if rng.random::<f64>() < (0.5 * (a * a - z * z)).exp() {
            return z;
        }
    }
}

/// Exponential with the given rate restricted to `[0, upper)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedExp {
    pub rate: f64,
    pub upper: f64,
}

impl TruncatedExp {
    pub fn new(rate: f64, upper: f64) -> Self {
        Self { rate, upper }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(0.0..self.upper).contains(&x) {
            return f64::NEG_INFINITY;
        }
        self.rate.ln() - self.rate * x - (-(-self.rate * self.upper).exp()).ln_1p()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mass = -(-self.rate * self.upper).exp_m1();
        let u: f64 = rng.random();
        let x = -(-u * mass).ln_1p() / self.rate;
        x.min(next_below(self.upper))
    }
}

/// Scaled inverse chi-square `Inv-chi2(dof, scale)` with density proportional
/// to `x^-(dof/2+1) exp(-dof*scale/(2x))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledInvChiSq {
    pub dof: f64,
    pub scale: f64,
}

impl ScaledInvChiSq {
    pub fn new(dof: f64, scale: f64) -> Self {
        debug_assert!(dof > 0.0 && scale > 0.0);
        Self { dof, scale }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let h = 0.5 * self.dof;
        h * (h * self.scale).ln() - ln_gamma(h) - (h + 1.0) * x.ln() - h * self.scale / x
    }

    pub fn mean(&self) -> Option<f64> {
        (self.dof > 2.0).then(|| self.dof * self.scale / (self.dof - 2.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // dof*scale / chi2(dof), chi2(dof) = Gamma(dof/2, scale 2)
        let chi2 = Gamma::new(0.5 * self.dof, 2.0)
            .expect("positive shape")
            .sample(rng);
        self.dof * self.scale / chi2
    }
}

/// Gamma in shape/rate parameterization.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("positive shape and rate")
        .sample(rng)
}

pub fn exp_ln_pdf(x: f64, rate: f64) -> f64 {
    if x < 0.0 {
        f64::NEG_INFINITY
    } else {
        rate.ln() - rate * x
    }
}

/// Zero-mean normal with variance `var` restricted to `[-pi, pi)`.
pub fn wrapped_prior_ln_pdf(x: f64, var: f64) -> f64 {
    if !(-PI..PI).contains(&x) {
        return f64::NEG_INFINITY;
    }
    let s = var.sqrt();
    normal_ln_pdf(x, 0.0, var) - ln_standard_normal_mass(-PI / s, PI / s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wrap_angle_range() {
        for x in [-10.0, -PI, -PI + 1e-12, 0.0, PI, 3.0 * PI, 1e6] {
            let w = wrap_angle(x);
            assert!((-PI..PI).contains(&w), "{x} -> {w}");
            assert!(((x - w) / TAU - ((x - w) / TAU).round()).abs() < 1e-9);
        }
        assert_eq!(wrap_angle(PI), -PI);
    }

    #[test]
    fn interval_mass_matches_erfc() {
        let direct = |a: f64, b: f64| upper_tail(a) - upper_tail(b);
        for (a, b) in [(-1.0, 1.0), (0.5, 2.0), (-3.0, -0.2), (2.0, 8.0)] {
            let want = direct(a, b).ln();
            assert!((ln_standard_normal_mass(a, b) - want).abs() < 1e-12);
        }
        // deep tail stays finite
        let far = ln_standard_normal_mass(40.0, 41.0);
        assert!(far.is_finite() && far < -800.0);
    }

    #[test]
    fn truncated_normal_stays_in_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(m, s) in &[(0.0, 1.0), (-5.0, 0.1), (50.0, 1.0), (3.0, 1e-3), (-100.0, 2.0)] {
            let d = TruncatedNormal::new(m, s, 0.0, 10.0);
            for _ in 0..2000 {
                let x = d.sample(&mut rng);
                assert!((0.0..10.0).contains(&x), "{m} {s} {x}");
            }
        }
    }

    #[test]
    fn truncated_normal_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // mean of N(0,1) on [1, inf) ~ phi(1)/Q(1) = 1.525135
        let d = TruncatedNormal::new(0.0, 1.0, 1.0, 1e9);
        let n = 200_000;
        let m: f64 = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((m - 1.525_135_276).abs() < 5e-3, "{m}");
    }

    #[test]
    fn truncated_normal_density_integrates_to_one() {
        let d = TruncatedNormal::new(0.3, 0.7, 0.0, 2.0);
        let n = 200_000;
        let h = 2.0 / n as f64;
        let total: f64 = (0..n).map(|i| d.ln_pdf((i as f64 + 0.5) * h).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn truncated_exp_density_and_support() {
        let d = TruncatedExp::new(10.0, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mean = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.1).abs() < 0.002);
        assert_eq!(d.ln_pdf(10.0), f64::NEG_INFINITY);
        let tight = TruncatedExp::new(1.0, 0.5);
        let h = 0.5 / 100_000.0;
        let total: f64 = (0..100_000).map(|i| tight.ln_pdf((i as f64 + 0.5) * h).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn scaled_inv_chi_sq_density_integrates_to_one() {
        let d = ScaledInvChiSq::new(6.0, 0.5);
        // substitute x = exp(u)
        let (lo, hi, n) = (-12.0f64, 12.0f64, 400_000);
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..n)
            .map(|i| {
                let u = lo + (i as f64 + 0.5) * h;
                (d.ln_pdf(u.exp()) + u).exp() * h
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn wrapped_prior_normalized() {
        let n = 100_000;
        let h = TAU / n as f64;
        for var in [0.04, 1.0, 25.0] {
            let total: f64 = (0..n)
                .map(|i| wrapped_prior_ln_pdf(-PI + (i as f64 + 0.5) * h, var).exp() * h)
                .sum();
            assert!((total - 1.0).abs() < 1e-8);
        }
    }
}
