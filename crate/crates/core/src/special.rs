//! Special functions and fixed quadrature rules shared by the analytic modules.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::sync::OnceLock;

/// Arguments above this return exactly zero from [`erfc`]; `erfc(30)` is below 1e-392.
pub const ERFC_CUTOFF: f64 = 30.0;

/// Complementary error function.
///
/// Accurate to a few ulp in relative terms on the whole real line, including the far
/// right tail where the Fourier residual terms live (`erfc(8) ~ 1e-29`).
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x > ERFC_CUTOFF {
        return 0.0;
    }
    libm::erfc(x)
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Natural log of the standard normal CDF, finite far into the left tail.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > -37.0 {
        norm_cdf(x).ln()
    } else {
        // Mills-ratio asymptotics once erfc underflows.
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Inverse of the standard normal CDF.
pub fn norm_inv_cdf(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return match p {
            0.0 => f64::NEG_INFINITY,
            1.0 => f64::INFINITY,
            _ => f64::NAN,
        };
    }
    let mut x = -SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
    // Two Halley steps polish the initial guess to full precision.
    for _ in 0..2 {
        let pdf = norm_pdf(x);
        if pdf == 0.0 {
            break;
        }
        let e = (norm_cdf(x) - p) / pdf;
        x -= e / (1.0 + 0.5 * x * e);
    }
    x
}

/// Exponentially scaled modified Bessel function `I0(z)·exp(-z)` for `z >= 0`.
pub fn bessel_i0e(z: f64) -> f64 {
    let z = z.abs();
    if z <= 30.0 {
        // All series terms are positive, so there is no cancellation.
        let q = 0.25 * z * z;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        while term > sum * 1e-17 {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        sum * (-z).exp()
    } else {
        // Asymptotic expansion; the smallest term is far below machine precision here.
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            let next = term * (2.0 * k - 1.0) * (2.0 * k - 1.0) / (8.0 * k * z);
            if next < sum * 1e-17 || next > term {
                break;
            }
            term = next;
            sum += term;
            k += 1.0;
        }
        sum / (2.0 * PI * z).sqrt()
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, computed by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let nf = n as f64;
    (p1, nf * (x * p1 - p0) / (x * x - 1.0))
}

/// Cached Gauss–Legendre rule of order `n` (orders up to 64 are cached).
pub fn gauss_legendre_cached(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<Vec<(Vec<f64>, Vec<f64>)>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| (0..=64).map(|k| if k == 0 { (vec![], vec![]) } else { gauss_legendre(k) }).collect());
    &cache[n]
}

/// Positive abscissas of the 12-point Gauss–Hermite rule (weight `exp(-x²)`),
/// as tabulated by Abramowitz & Stegun, Table 25.10.
pub const GH12_ABSCISSAS: [f64; 6] = [
    0.314_240_376_254_359,
    0.947_788_391_240_164,
    1.597_682_635_152_605,
    2.279_507_080_501_060,
    3.020_637_025_120_890,
    3.889_724_897_869_782,
];

/// Weights matching [`GH12_ABSCISSAS`].
pub const GH12_WEIGHTS: [f64; 6] = [
    5.701_352_362_624_795e-1,
    2.604_923_102_641_611e-1,
    5.160_798_561_588_393e-2,
    3.905_390_584_629_062e-3,
    8.573_687_043_587_859e-5,
    2.658_551_684_356_302e-7,
];

/// Full symmetric 12-point Gauss–Hermite rule, ascending abscissas.
pub fn gauss_hermite_12() -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(12);
    let mut weights = Vec::with_capacity(12);
    for i in (0..6).rev() {
        nodes.push(-GH12_ABSCISSAS[i]);
        weights.push(GH12_WEIGHTS[i]);
    }
    for i in 0..6 {
        nodes.push(GH12_ABSCISSAS[i]);
        weights.push(GH12_WEIGHTS[i]);
    }
    (nodes, weights)
}

/// Gauss–Hermite rule of arbitrary order via Newton iteration on the orthonormal
/// Hermite recurrence. Used to cross-check the tabulated constants.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    let pim4 = PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        weights[i] = 2.0 / (pp * pp);
    }
    for i in 0..m {
        nodes[n - 1 - i] = -nodes[i];
        weights[n - 1 - i] = weights[i];
    }
    let mut pairs: Vec<(f64, f64)> = nodes.into_iter().zip(weights).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}
