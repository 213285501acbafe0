//! Modified Bessel function of the second kind for real order.
//!
//! Temme's series for |μ| ≤ 1/2 at small argument, Steed's continued
//! fraction at large argument, then forward recurrence in the order.

use std::f64::consts::PI;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const SERIES_LIMIT: f64 = 2.0;

/// Taylor coefficients of 1/Γ(z) around zero (z, z², ...).
const RECIP_GAMMA: [f64; 26] = [
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_8,
    -0.042_002_635_034_095_2,
    0.166_538_611_382_291_5,
    -0.042_197_734_555_544_3,
    -0.009_621_971_527_877_0,
    0.007_218_943_246_663_0,
    -0.001_165_167_591_859_1,
    -0.000_215_241_674_114_9,
    0.000_128_050_282_388_2,
    -0.000_020_134_854_780_7,
    -0.000_001_250_493_482_1,
    0.000_001_133_027_232_0,
    -0.000_000_205_633_841_7,
    0.000_000_006_116_095_0,
    0.000_000_005_002_007_5,
    -0.000_000_001_181_274_6,
    0.000_000_000_104_342_7,
    0.000_000_000_007_782_3,
    -0.000_000_000_003_696_8,
    0.000_000_000_000_510_0,
    -0.000_000_000_000_020_6,
    -0.000_000_000_000_005_4,
    0.000_000_000_000_001_4,
    0.000_000_000_000_000_1,
];

/// Returns (gam1, gam2, 1/Γ(1+μ), 1/Γ(1−μ)) for |μ| ≤ 1/2, where
/// gam1 = (1/Γ(1−μ) − 1/Γ(1+μ)) / 2μ and gam2 = (1/Γ(1−μ) + 1/Γ(1+μ)) / 2.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let mu2 = mu * mu;
    let mut even = 0.0;
    let mut odd = 0.0;
    let mut pow = 1.0;
    for pair in RECIP_GAMMA.chunks(2) {
        odd += pair[0] * pow;
        if let Some(c) = pair.get(1) {
            even += c * pow;
        }
        pow *= mu2;
    }
    let gam1 = -even;
    let gam2 = odd;
    (gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1)
}

/// `K_ν(x) · eˣ` for `ν ≥ 0`, `x > 0`.
///
/// Returns NaN outside that domain; overflows to +∞ for large ν at small x
/// (use [`ln_bessel_k_scaled`] there).
pub fn bessel_k_scaled(nu: f64, x: f64) -> f64 {
    ln_bessel_k_scaled(nu, x).exp()
}

/// `ln(K_ν(x) · eˣ)`; never overflows.
pub fn ln_bessel_k_scaled(nu: f64, x: f64) -> f64 {
    if !(nu >= 0.0) || !(x > 0.0) || !nu.is_finite() || !x.is_finite() {
        return f64::NAN;
    }
    let nl = (nu + 0.5).floor();
    let mu = nu - nl;
    let mu2 = mu * mu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    let (mut k_mu, mut k_mu1) = if x < SERIES_LIMIT {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS {
            1.0
        } else {
            pimu / pimu.sin()
        };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..=MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        let scale = x.exp();
        (sum * scale, sum1 * xi2 * scale)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..=MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        let k = (PI / (2.0 * x)).sqrt() / s;
        (k, k * (mu + x + 0.5 - h) * xi)
    };

    // The recurrence is positive and increasing, so rescaling is exact.
    let mut log_scale = 0.0;
    for i in 1..=(nl as usize) {
        let next = (mu + i as f64) * xi2 * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
        if k_mu1 > 1e280 {
            k_mu /= 1e280;
            k_mu1 /= 1e280;
            log_scale += 1e280f64.ln();
        }
    }
    k_mu.ln() + log_scale
}

#[cfg(test)]
mod tests {
    use super::*;

    /// K_ν(x) = ∫₀^∞ exp(−x cosh t) cosh(νt) dt by the trapezoid rule,
    /// scaled by eˣ. The integrand decays doubly exponentially.
    fn k_scaled_quadrature(nu: f64, x: f64) -> f64 {
        let h: f64 = 1e-3;
        let mut sum = 0.5;
        let mut t = h;
        loop {
            let term = (-x * (t.cosh() - 1.0)).exp() * (nu * t).cosh();
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
            t += h;
        }
        sum * h
    }

    #[test]
    fn reciprocal_gamma_series_matches_libm() {
        for i in -10..=10 {
            let mu = i as f64 * 0.05;
            let (_, _, gampl, gammi) = temme_gammas(mu);
            assert!((gampl - 1.0 / libm::tgamma(1.0 + mu)).abs() < 1e-14, "mu={mu}");
            assert!((gammi - 1.0 / libm::tgamma(1.0 - mu)).abs() < 1e-14, "mu={mu}");
        }
        let (gam1, gam2, _, _) = temme_gammas(0.5);
        let rsqpi = 1.0 / PI.sqrt();
        assert!((gam1 + rsqpi).abs() < 1e-14);
        assert!((gam2 - 1.5 * rsqpi).abs() < 1e-14);
    }

    #[test]
    fn half_integer_orders_match_closed_forms() {
        for &x in &[0.01, 0.3, 1.0, 1.99, 2.0, 3.5, 10.0, 50.0] {
            let base = (PI / (2.0 * x)).sqrt();
            let k12 = base;
            let k32 = base * (1.0 + 1.0 / x);
            let k52 = base * (1.0 + 3.0 / x + 3.0 / (x * x));
            for (nu, want) in [(0.5, k12), (1.5, k32), (2.5, k52)] {
                let got = bessel_k_scaled(nu, x);
                assert!((got - want).abs() <= 1e-13 * want, "nu={nu} x={x}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn general_orders_match_quadrature() {
        for &nu in &[0.0, 0.1, 0.3, 1.0, 1.7, 2.0, 3.25, 7.0] {
            for &x in &[0.05, 0.5, 1.5, 2.5, 6.0, 20.0] {
                let got = bessel_k_scaled(nu, x);
                let want = k_scaled_quadrature(nu, x);
                assert!(
                    (got - want).abs() <= 1e-11 * want,
                    "nu={nu} x={x}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn log_form_survives_overflow() {
        // Large-order asymptotics: K_ν(x) ≈ ½Γ(ν)(x/2)^(−ν) as x → 0.
        let (nu, x) = (250.0, 0.5);
        assert!(bessel_k_scaled(nu, x).is_infinite());
        let want = (0.5f64).ln() + libm::lgamma(nu) - nu * (x / 2.0).ln() + x;
        let got = ln_bessel_k_scaled(nu, x);
        assert!((got - want).abs() < 1e-3 * want.abs(), "{got} vs {want}");
        for &(nu, x) in &[(3.25, 0.5), (7.0, 6.0)] {
            let direct = bessel_k_scaled(nu, x).ln();
            assert!((ln_bessel_k_scaled(nu, x) - direct).abs() < 1e-13 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn invalid_domain_is_nan() {
        assert!(bessel_k_scaled(-1.0, 1.0).is_nan());
        assert!(bessel_k_scaled(1.0, 0.0).is_nan());
    }
}
