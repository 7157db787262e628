//! Gaussian fits of the per-cell interference in dB and the power-lognormal fit of the
//! aggregate interference.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::bound::LStats;
use crate::channel::{FadingModel, ShadowStats, ZETA};
use crate::error::{Error, Result};
use crate::special::{gauss_hermite_12, gauss_legendre_cached, ln_norm_cdf, norm_cdf, norm_pdf};

/// Gaussian approximation of a dB-scale quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    /// Mean, dBm.
    pub mu: f64,
    /// Variance, dB².
    pub sigma2: f64,
}

impl GaussianFit {
    /// `G_b`: power-control target plus coupling gain plus combined shadowing.
    pub fn step1(stats: &LStats, shadow: &ShadowStats, p0_dbm: f64) -> Self {
        GaussianFit { mu: p0_dbm + stats.mu_l + shadow.mu_s, sigma2: stats.sigma_l2 + shadow.sigma_s2 }
    }

    /// `Q_b`: `G_b` plus the dB fading gain.
    pub fn step2(&self, fading: &FadingModel) -> Self {
        let (mu_h, sigma_h2) = fading.moments();
        GaussianFit { mu: self.mu + mu_h, sigma2: self.sigma2 + sigma_h2 }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn cdf(&self, q: f64) -> f64 {
        norm_cdf((q - self.mu) / self.sigma())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MgfFitConfig {
    /// Probe points of the MGF, 1/mW.
    pub s1: f64,
    pub s2: f64,
    /// Gauss–Hermite abscissas and weights (weight function `e^{-x²}`).
    pub abscissas: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Default for MgfFitConfig {
    fn default() -> Self {
        let (abscissas, weights) = gauss_hermite_12();
        MgfFitConfig { s1: 0.001, s2: 0.005, abscissas, weights }
    }
}

impl MgfFitConfig {
    pub fn order(&self) -> usize {
        self.abscissas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s1 > 0.0 && self.s2 > 0.0 && self.s1 != self.s2) {
            return Err(Error::InvalidParameter("MGF probes must be distinct and positive".into()));
        }
        if self.order() < 8 || self.weights.len() != self.order() {
            return Err(Error::InvalidParameter("Gauss-Hermite order must be at least 8".into()));
        }
        Ok(())
    }

    /// Node powers in mW for a lognormal with dB mean `mu` and dB std `sigma`.
    fn powers(&self, mu: f64, sigma: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let norm = PI.sqrt();
        self.abscissas
            .iter()
            .zip(&self.weights)
            .map(move |(a, w)| (w / norm, ((2f64.sqrt() * sigma * a + mu) / ZETA).exp()))
    }
}

/// Gauss–Hermite approximation of `E[exp(−s·10^{X/10})]` for `X ~ N(mu, sigma2)` in dB.
pub fn approx_mgf(mu: f64, sigma2: f64, s: f64, cfg: &MgfFitConfig) -> f64 {
    cfg.powers(mu, sigma2.max(0.0).sqrt()).map(|(w, v)| w * (-s * v).exp()).sum()
}

/// `x − 1 + e^{−x}` without cancellation for small `x`.
fn excess_exp(x: f64) -> f64 {
    if x < 0.1 {
        // x²/2 − x³/6 + x⁴/24 − ...
        let mut term = x * x / 2.0;
        let mut sum = term;
        let mut k = 3.0;
        while term.abs() > sum.abs() * 1e-17 {
            term *= -x / k;
            sum += term;
            k += 1.0;
        }
        sum
    } else {
        x + (-x).exp_m1()
    }
}

/// `−ln(1−u) − u` without cancellation for small `u`.
fn excess_log(u: f64) -> f64 {
    if u.abs() < 0.1 {
        let mut pw = u * u;
        let mut sum = 0.0f64;
        let mut k = 2.0;
        while pw.abs() / k > sum.abs() * 1e-17 && k < 200.0 {
            sum += pw / k;
            pw *= u;
            k += 1.0;
        }
        sum
    } else {
        -(-u).ln_1p() - u
    }
}

/// MGF deficit pieces of one lognormal at probe `s`: with `m` the quadrature mean power,
/// `D(s) = −ln Ψ̂(s) = s·m − K(s)`. Both are returned so that the mean can be cancelled
/// exactly when comparing two probes.
#[derive(Debug, Clone, Copy)]
struct Deficit {
    d: f64,
    k: f64,
}

fn deficit(mu: f64, sigma: f64, s: f64, cfg: &MgfFitConfig) -> Deficit {
    let (mut mean, mut r) = (0.0, 0.0);
    for (w, v) in cfg.powers(mu, sigma) {
        mean += w * v;
        r += w * excess_exp(s * v);
    }
    let u = s * mean - r;
    let k = r - excess_log(u);
    Deficit { d: s * mean - k, k }
}

/// Deficits at both probes reduced to the pair `(D(s1), s1·K(s2) − s2·K(s1))`. The second
/// member is `s2·D(s1) − s1·D(s2)` with the mean removed analytically.
fn probe_pair(mu: f64, sigma: f64, cfg: &MgfFitConfig) -> (f64, f64) {
    let a = deficit(mu, sigma, cfg.s1, cfg);
    let b = deficit(mu, sigma, cfg.s2, cfg);
    (a.d, cfg.s1 * b.k - cfg.s2 * a.k)
}

/// Lognormal `(μ_X, σ_X)` in dB whose approximate MGF at both probes equals the product
/// of the inputs' approximate MGFs.
pub fn solve_sum_stats(fits: &[GaussianFit], cfg: &MgfFitConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    if fits.is_empty() {
        return Err(Error::InvalidParameter("at least one fit is required".into()));
    }
    let (mut c1, mut c2) = (0.0, 0.0);
    for f in fits {
        let (d, j) = probe_pair(f.mu, f.sigma(), cfg);
        c1 += d;
        c2 += j;
    }
    let (mu0, sigma0) = fenton_wilkinson(fits);
    // A (numerically) deterministic sum carries no spread information.
    let scale = cfg.s1 * cfg.s2 * (cfg.s2 - cfg.s1).abs() * (c1 / cfg.s1).powi(2);
    if c2.abs() <= 1e-9 * scale {
        let mu = solve_mu_for_deficit(c1, 0.0, mu0, cfg)?;
        return Ok((mu, 0.0));
    }
    let residual = |mu: f64, tau: f64| -> [f64; 2] {
        let (d, j) = probe_pair(mu, tau.exp(), cfg);
        [(d / c1).ln(), if j > 0.0 && c2 > 0.0 { (j / c2).ln() } else { j / c2 - 1.0 }]
    };
    match newton(residual, mu0, sigma0.max(1e-3).ln()) {
        Ok((mu, tau)) => Ok((mu, tau.exp())),
        Err(_) => nested_bisection(c1, c2, mu0, sigma0, cfg),
    }
}

fn fenton_wilkinson(fits: &[GaussianFit]) -> (f64, f64) {
    // Linear-scale moments of the sum, in units of the first cell's median to stay finite.
    let anchor = fits[0].mu / ZETA;
    let (mut mean, mut var) = (0.0, 0.0);
    for f in fits {
        let (m, s2) = (f.mu / ZETA - anchor, f.sigma2 / (ZETA * ZETA));
        let e = (m + 0.5 * s2).exp();
        mean += e;
        var += e * e * s2.exp_m1();
    }
    let s2 = (var / (mean * mean)).ln_1p();
    let mu = anchor + mean.ln() - 0.5 * s2;
    (mu * ZETA, s2.sqrt() * ZETA)
}

const NEWTON_TOL: f64 = 1e-10;
const MAX_ITER: usize = 200;

fn newton<F: Fn(f64, f64) -> [f64; 2]>(f: F, mu0: f64, tau0: f64) -> Result<(f64, f64)> {
    let (mut mu, mut tau) = (mu0, tau0);
    let mut r = f(mu, tau);
    let norm = |r: [f64; 2]| r[0].abs().max(r[1].abs());
    for _ in 0..MAX_ITER {
        if !norm(r).is_finite() {
            break;
        }
        if norm(r) < NEWTON_TOL {
            return Ok((mu, tau));
        }
        let h = 1e-5;
        let (rmp, rmm) = (f(mu + h, tau), f(mu - h, tau));
        let (rtp, rtm) = (f(mu, tau + h), f(mu, tau - h));
        let j = [
            [(rmp[0] - rmm[0]) / (2.0 * h), (rtp[0] - rtm[0]) / (2.0 * h)],
            [(rmp[1] - rmm[1]) / (2.0 * h), (rtp[1] - rtm[1]) / (2.0 * h)],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dmu = -(j[1][1] * r[0] - j[0][1] * r[1]) / det;
        let dtau = -(-j[1][0] * r[0] + j[0][0] * r[1]) / det;
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-6 {
            let cand = f(mu + step * dmu, tau + step * dtau);
            if norm(cand) < norm(r) {
                mu += step * dmu;
                tau += step * dtau;
                r = cand;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Err(Error::NoConvergence { iterations: MAX_ITER, residual: norm(r) })
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo.signum() == fhi.signum() {
        return None;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 || hi - lo < tol {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn solve_mu_for_deficit(c1: f64, sigma: f64, mu0: f64, cfg: &MgfFitConfig) -> Result<f64> {
    let f = |mu: f64| (deficit(mu, sigma, cfg.s1, cfg).d / c1).ln();
    bisect(f, mu0 - 200.0, mu0 + 200.0, 1e-12)
        .ok_or(Error::NoConvergence { iterations: 0, residual: f(mu0).abs() })
}

fn nested_bisection(c1: f64, c2: f64, mu0: f64, sigma0: f64, cfg: &MgfFitConfig) -> Result<(f64, f64)> {
    let gap = |sigma: f64| -> f64 {
        match solve_mu_for_deficit(c1, sigma, mu0, cfg) {
            Ok(mu) => probe_pair(mu, sigma, cfg).1 / c2 - 1.0,
            Err(_) => f64::NAN,
        }
    };
    let hi = (4.0 * sigma0).max(60.0);
    let sigma = bisect(gap, 1e-6, hi, 1e-10).ok_or(Error::NoConvergence { iterations: MAX_ITER, residual: gap(sigma0).abs() })?;
    let mu = solve_mu_for_deficit(c1, sigma, mu0, cfg)?;
    let (d, j) = probe_pair(mu, sigma, cfg);
    let residual = (d / c1 - 1.0).abs().max((j / c2 - 1.0).abs());
    if residual > 1e-6 {
        return Err(Error::NoConvergence { iterations: MAX_ITER, residual });
    }
    Ok((mu, sigma))
}

/// Distribution with CDF `Φ^λ((q − μ_Q)/σ_Q)` in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLognormalFit {
    pub lambda: f64,
    pub mu_q: f64,
    pub sigma_q2: f64,
}

impl PowerLognormalFit {
    pub fn sigma_q(&self) -> f64 {
        self.sigma_q2.sqrt()
    }

    pub fn cdf_db(&self, q: f64) -> f64 {
        let z = (q - self.mu_q) / self.sigma_q();
        (self.lambda * ln_norm_cdf(z)).exp()
    }

    pub fn pdf_db(&self, q: f64) -> f64 {
        let z = (q - self.mu_q) / self.sigma_q();
        self.lambda * ((self.lambda - 1.0) * ln_norm_cdf(z)).exp() * norm_pdf(z) / self.sigma_q()
    }

    /// CDF of the linear power `v` in mW.
    pub fn cdf_mw(&self, v: f64) -> Result<f64> {
        if !(v > 0.0) {
            return Err(Error::Domain(format!("linear power must be positive, got {v}")));
        }
        Ok(self.cdf_db(ZETA * v.ln()))
    }

    /// Mean in dBm.
    pub fn mean(&self) -> Result<f64> {
        Ok(self.mu_q + self.sigma_q() * standard_powln_mean(self.lambda)?)
    }

    /// Residuals of the two tail-slope conditions against the solved sum statistics: the
    /// upper-tail slope of `Φ⁻¹(F_Q)` must be `1/σ_X`, the lower one `√(Σ σ_b⁻²)`.
    pub fn tail_slope_residuals(&self, sigma_x: f64, fits: &[GaussianFit]) -> (f64, f64) {
        let upper = 1.0 / self.sigma_q() - 1.0 / sigma_x;
        let lower = self.lambda.sqrt() / self.sigma_q() - fits.iter().map(|f| 1.0 / f.sigma2).sum::<f64>().sqrt();
        (upper, lower)
    }
}

const MEAN_RTOL: f64 = 1e-8;

/// `∫ z λ Φ^{λ−1}(z) φ(z) dz`, the mean of the standard power-normal.
pub fn standard_powln_mean(lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let half = 12.0 * (1.0 + lambda.ln().max(0.0));
    let integrate = |panels: usize| -> f64 {
        let (x, w) = gauss_legendre_cached(16);
        let step = 2.0 * half / panels as f64;
        let mut sum = 0.0;
        for k in 0..panels {
            let mid = -half + (k as f64 + 0.5) * step;
            for (xi, wi) in x.iter().zip(w) {
                let z = mid + 0.5 * step * xi;
                let dens = lambda * ((lambda - 1.0) * ln_norm_cdf(z)).exp() * norm_pdf(z);
                sum += 0.5 * step * wi * z * dens;
            }
        }
        sum
    };
    let mut panels = 64;
    let mut prev = integrate(panels);
    while panels < 1 << 14 {
        panels *= 2;
        let next = integrate(panels);
        if (next - prev).abs() <= MEAN_RTOL * next.abs().max(1e-3) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::QuadratureFailure("power-normal mean did not settle".into()))
}

/// Power-lognormal fit of the aggregate of independent per-cell lognormals.
pub fn power_lognormal_fit(fits: &[GaussianFit], cfg: &MgfFitConfig) -> Result<(PowerLognormalFit, (f64, f64))> {
    let (mu_x, sigma_x) = solve_sum_stats(fits, cfg)?;
    let sigma_q = sigma_x.max(1e-9);
    let lambda = sigma_q * sigma_q * fits.iter().map(|f| 1.0 / f.sigma2).sum::<f64>();
    let shift = standard_powln_mean(lambda)?;
    // The mean is μ_Q + σ_Q·shift, so bisection on μ_Q has a unique root in the bracket.
    let mean_gap = |mu_q: f64| mu_q + sigma_q * shift - mu_x;
    let mu_q = bisect(mean_gap, mu_x - 20.0 * sigma_q, mu_x + 20.0 * sigma_q, 1e-6)
        .ok_or(Error::NoConvergence { iterations: 0, residual: mean_gap(mu_x).abs() })?;
    Ok((PowerLognormalFit { lambda, mu_q, sigma_q2: sigma_q * sigma_q }, (mu_x, sigma_x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn gaussian_steps() {
        let stats = LStats::from_weighted(&[-18.0], &[1.0]);
        let g = GaussianFit::step1(&stats, &ShadowStats { mu_s: 0.0, sigma_s2: 164.0 }, -76.0);
        assert_eq!(g, GaussianFit { mu: -94.0, sigma2: 164.0 });
        let g = GaussianFit { mu: -94.6, sigma2: 174.2 };
        assert_eq!(g.step2(&FadingModel::None), g);
        let q = g.step2(&FadingModel::Rayleigh);
        assert!((q.mu - -97.1).abs() < 0.1 && (q.sigma2 - 205.2).abs() < 0.3, "{q:?}");
        let q = g.step2(&FadingModel::Rician { gamma: 10.0 });
        assert!((q.mu - -95.0).abs() < 0.2 && (q.sigma2 - 178.2).abs() < 0.6, "{q:?}");
    }

    #[test]
    fn approx_mgf_limits() {
        let cfg = MgfFitConfig::default();
        assert_relative_eq!(approx_mgf(-3.0, 0.0, 0.7, &cfg), (-0.7 * 10f64.powf(-0.3)).exp(), max_relative = 1e-14);
        assert_relative_eq!(approx_mgf(-90.0, 100.0, 1e-300, &cfg), 1.0, max_relative = 1e-13);
    }

    #[test]
    fn approx_mgf_matches_monte_carlo() {
        let cfg = MgfFitConfig::default();
        let (mu, s2, s): (f64, f64, f64) = (-97.1, 205.3, 0.001);
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let normal = Normal::new(mu, s2.sqrt()).unwrap();
        let n = 10_000_000;
        let mc: f64 = (0..n).map(|_| (-s * 10f64.powf(normal.sample(&mut rng) / 10.0)).exp()).sum::<f64>() / n as f64;
        assert!((approx_mgf(mu, s2, s, &cfg) - mc).abs() < 1e-3);
    }

    #[test]
    fn deficit_agrees_with_direct_log_at_moderate_powers() {
        let cfg = MgfFitConfig::default();
        let (mu, s2) = (20.0, 30.0);
        for s in [0.001, 0.005] {
            let direct = -approx_mgf(mu, s2, s, &cfg).ln();
            assert_relative_eq!(deficit(mu, s2.sqrt(), s, &cfg).d, direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_fit_self_match() {
        let cfg = MgfFitConfig::default();
        let q = GaussianFit { mu: -97.1, sigma2: 205.3 };
        let (mu, sigma) = solve_sum_stats(&[q], &cfg).unwrap();
        assert!((mu - q.mu).abs() < 0.05, "{mu}");
        assert!((sigma / q.sigma() - 1.0).abs() < 0.005, "{sigma}");
    }

    #[test]
    fn deterministic_pair() {
        let cfg = MgfFitConfig::default();
        let f = GaussianFit { mu: -100.0, sigma2: 0.0 };
        let (mu, sigma) = solve_sum_stats(&[f, f], &cfg).unwrap();
        assert!((mu - (-100.0 + 10.0 * 2f64.log10())).abs() < 1e-6, "{mu}");
        assert!(sigma < 1e-3);
    }

    #[test]
    fn powln_mean_identities() {
        assert!(standard_powln_mean(1.0).unwrap().abs() < 1e-10);
        assert!((standard_powln_mean(2.0).unwrap() - 1.0 / PI.sqrt()).abs() < 1e-9);
        let fit = PowerLognormalFit { lambda: 48.9, mu_q: -99.7, sigma_q2: 116.2 };
        let m = fit.mean().unwrap();
        // independent trapezoid at two resolutions
        let trap = |n: usize| {
            let (a, b) = (-99.7 - 200.0, -99.7 + 200.0);
            let h = (b - a) / n as f64;
            (0..=n).map(|i| {
                let q = a + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * h * q * fit.pdf_db(q)
            }).sum::<f64>()
        };
        assert!((trap(200_000) - m).abs() < 1e-6 * m.abs());
        assert!((trap(400_000) - m).abs() < 1e-6 * m.abs());
    }

    #[test]
    fn powln_cdf_pdf_consistency() {
        let fit = PowerLognormalFit { lambda: 7.5, mu_q: -100.0, sigma_q2: 90.0 };
        let mut last = 0.0;
        for i in 0..1000 {
            let q = -250.0 + i as f64 * 0.3;
            let c = fit.cdf_db(q);
            assert!(c >= last && (0.0..=1.0).contains(&c));
            last = c;
            assert_relative_eq!(fit.cdf_mw(10f64.powf(q / 10.0)).unwrap(), c, max_relative = 1e-10, epsilon = 1e-300);
        }
        assert!(fit.cdf_db(-1e4) == 0.0 && (fit.cdf_db(1e4) - 1.0).abs() < 1e-15);
        let q = -95.0;
        let h = 1e-4;
        let num = (fit.cdf_db(q + h) - fit.cdf_db(q - h)) / (2.0 * h);
        assert_relative_eq!(fit.pdf_db(q), num, max_relative = 1e-5);
        let plain = PowerLognormalFit { lambda: 1.0, mu_q: -97.0, sigma_q2: 9.0 };
        assert!((plain.cdf_db(-97.0) - 0.5).abs() < 1e-15);
        assert!(fit.cdf_mw(0.0).is_err());
    }

    #[test]
    fn lambda_identities() {
        let cfg = MgfFitConfig::default();
        let fits: Vec<GaussianFit> = (0..6).map(|i| GaussianFit { mu: -100.0 - 2.0 * i as f64, sigma2: 190.0 }).collect();
        let (fit, (_, sigma_x)) = power_lognormal_fit(&fits, &cfg).unwrap();
        assert_relative_eq!(fit.lambda, 6.0 * sigma_x * sigma_x / 190.0, max_relative = 1e-12);
        let mut rev = fits.clone();
        rev.reverse();
        let (fit_rev, _) = power_lognormal_fit(&rev, &cfg).unwrap();
        assert_relative_eq!(fit.lambda, fit_rev.lambda, max_relative = 1e-9);
        let (u, l) = fit.tail_slope_residuals(sigma_x, &fits);
        assert!(u.abs() < 1e-12 && l.abs() < 1e-12);
        assert!((fit.mean().unwrap() - power_lognormal_fit(&fits, &cfg).unwrap().1 .0).abs() < 1e-5);
    }

    #[test]
    fn single_cell_degenerates_to_lognormal() {
        let cfg = MgfFitConfig::default();
        let q = GaussianFit { mu: -97.1, sigma2: 205.3 };
        let (fit, _) = power_lognormal_fit(&[q], &cfg).unwrap();
        assert!((0.98..=1.02).contains(&fit.lambda), "{}", fit.lambda);
        let ks = (0..2000).map(|i| -200.0 + i as f64 * 0.1).map(|x| (fit.cdf_db(x) - q.cdf(x)).abs()).fold(0.0, f64::max);
        assert!(ks < 0.01, "{ks}");
    }
}
