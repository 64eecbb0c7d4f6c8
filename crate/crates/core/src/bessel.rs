//! Modified Bessel function of the second kind, `K_nu(x)`, for real `nu >= 0`
//! and `x > 0`.
//!
//! The fractional part `mu = nu - round(nu)` is handled with Temme's series
//! for `x < 2` and Steed's continued fraction for `x >= 2`; integer steps
//! use the upward recurrence, which is stable for `K`.

use std::f64::consts::PI;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;

/// Taylor coefficients of `1/Gamma(z)` around zero, `c[k]` multiplies `z^k`.
#[allow(clippy::excessive_precision)]
const RGAMMA_SERIES: [f64; 27] = [
    0.0,
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_9,
    -0.042_002_635_034_095_24,
    0.166_538_611_382_291_5,
    -0.042_197_734_555_544_34,
    -0.009_621_971_527_876_974,
    0.007_218_943_246_663_1,
    -0.001_165_167_591_859_065,
    -0.000_215_241_674_114_951,
    0.000_128_050_282_388_116_2,
    -0.000_020_134_854_780_788_24,
    -1.250_493_482_142_670_7e-6,
    1.133_027_231_981_695_9e-6,
    -2.056_338_416_977_607e-7,
    6.116_095_104_481_416e-9,
    5.002_007_644_469_223e-9,
    -1.181_274_570_487_020_1e-9,
    1.043_426_711_691_100_5e-10,
    7.782_263_439_905_071e-12,
    -3.696_805_618_642_205_7e-12,
    5.100_370_287_454_476e-13,
    -2.058_326_053_566_506_8e-14,
    -5.348_122_539_423_018e-15,
    1.226_778_628_238_260_8e-15,
    -1.181_259_301_697_458_8e-16,
];

/// Temme's auxiliary gamma quantities for `|mu| <= 1/2`:
/// `gam1 = (1/G(1-mu) - 1/G(1+mu)) / (2 mu)` and
/// `gam2 = (1/G(1-mu) + 1/G(1+mu)) / 2`.
///
/// With `1/G(1+z) = sum_k c[k] z^(k-1)`, gam1 is minus the even-`k` half
/// divided by `mu` and gam2 the odd-`k` half; both are series in `mu^2`, so
/// there is no cancellation as `mu -> 0`.
fn temme_gammas(mu: f64) -> (f64, f64) {
    let mu2 = mu * mu;
    let mut gam1 = 0.0;
    let mut gam2 = 0.0;
    let mut pow = 1.0;
    for pair in RGAMMA_SERIES[1..].chunks(2) {
        gam2 += pair[0] * pow;
        if let Some(c) = pair.get(1) {
            gam1 -= c * pow;
        }
        pow *= mu2;
    }
    (gam1, gam2)
}

/// `K_nu(x)` and `K_{nu+1}(x)`.
pub fn bessel_k_pair(nu: f64, x: f64) -> (f64, f64) {
    assert!(x > 0.0 && nu >= 0.0, "bessel_k needs x > 0 and nu >= 0");
    let nl = (nu + 0.5).floor() as usize;
    let mu = nu - nl as f64;
    let mu2 = mu * mu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    let (mut k_mu, mut k_mu1) = if x < 2.0 {
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
        let (gam1, gam2) = temme_gammas(mu);
        let gampl = gam2 - mu * gam1;
        let gammi = gam2 + mu * gam1;
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        let mut converged = false;
        for i in 1..=MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            let del1 = c * (p - fi * ff);
            sum1 += del1;
            if del.abs() < sum.abs() * EPS {
                converged = true;
                break;
            }
        }
        debug_assert!(converged, "Temme series did not converge");
        (sum, sum1 * xi2)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
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
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        let h = a1 * h;
        let k = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        (k, k * (mu + x + 0.5 - h) * xi)
    };

    for i in 1..=nl {
        let next = (mu + i as f64) * xi2 * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
    }
    (k_mu, k_mu1)
}

pub fn bessel_k(nu: f64, x: f64) -> f64 {
    bessel_k_pair(nu, x).0
}
