//! Closed-form upper bounds on the KS distance of the per-cell Gaussian approximations.
//!
//! The bounds rest on a truncated Fourier expansion of `erfc` over one period of length
//! `π/ω`. Frequencies follow the convention `υ_n = e^{-n²ω²}/n · φ(−√2 nω/σ)`;
//! [`epsilon2_alt`] evaluates the equivalent convention with `e^{-n²ω²/2}` and `φ(−nω/σ)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{coupling_gain_fast, ChannelParams, FadingModel, ShadowStats};
use crate::error::{Error, Result};
use crate::fit::GaussianFit;
use crate::geometry::{Point, PositionModel};
use crate::special::erfc;

/// Fourier terms whose magnitude is below this cannot move the sum at reporting precision.
pub const TERM_FLOOR: f64 = 1e-18;

const BIN_WIDTH_DB: f64 = 0.05;
const TAYLOR_TERMS: usize = 9;
const TAYLOR_MAX_PHASE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundParams {
    pub omega: f64,
    pub p: u32,
    pub k1: f64,
    pub k2: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        BoundParams { omega: 0.001, p: 4000, k1: 500.0, k2: 500.0 }
    }
}

impl BoundParams {
    /// The first violated invariant as `(field, message)`.
    pub fn invalid_field(&self) -> Option<(&'static str, String)> {
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Some(("omega", format!("must be > 0, got {}", self.omega)));
        }
        if self.p == 0 || (self.p as f64) < 2.0 / self.omega {
            return Some(("p", format!("must be >= 2/omega = {}, got {}", 2.0 / self.omega, self.p)));
        }
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Some(("k1", format!("must be > 0, got {}", self.k1)));
        }
        if !(self.k2.is_finite() && self.k2 > 0.0) {
            return Some(("k2", format!("must be > 0, got {}", self.k2)));
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        match self.invalid_field() {
            Some((field, msg)) => Err(Error::InvalidParameter(format!("{field} {msg}"))),
            None => Ok(()),
        }
    }
}

/// Truncation residual of the `erfc` Fourier series, `(2/(√π ω))·erfc((2p+1)ω)`.
pub fn truncation_residual(omega: f64, p: u32) -> f64 {
    2.0 / (PI.sqrt() * omega) * erfc((2.0 * p as f64 + 1.0) * omega)
}

/// Bound on the Fourier residual of `erfc(x)` for `|x| <= k`.
pub fn delta0(omega: f64, p: u32, k: f64) -> f64 {
    truncation_residual(omega, p) + erfc(PI / (2.0 * omega) - k)
}

pub fn delta1(omega: f64, p: u32) -> f64 {
    truncation_residual(omega, p) + 2.0
}

/// The three terms of ε₁, in order.
pub fn epsilon1_terms(bp: &BoundParams, sigma_l2: f64, sigma_s2: f64) -> [f64; 3] {
    let ratio = ((sigma_l2 + sigma_s2) / sigma_s2).sqrt();
    [
        0.5 * delta1(bp.omega, bp.p) / (bp.k2 * bp.k2),
        0.5 * delta0(bp.omega, bp.p, (bp.k1 + bp.k2) * ratio * FRAC_1_SQRT_2),
        0.5 * delta0(bp.omega * ratio, bp.p, bp.k1 * FRAC_1_SQRT_2),
    ]
}

pub fn epsilon1(bp: &BoundParams, sigma_l2: f64, sigma_s2: f64) -> f64 {
    epsilon1_terms(bp, sigma_l2, sigma_s2).iter().sum()
}

fn fourier_gap<F>(omega: f64, p: u32, sigma_l2: f64, sigma_s2: f64, damping: f64, freq: f64, char_fn: F) -> f64
where
    F: Fn(f64) -> Complex64,
{
    let sigma_s = sigma_s2.sqrt();
    let spread = (sigma_l2 + sigma_s2) / sigma_s2;
    let mut sum = 0.0;
    for n in (1..2 * p as u64).step_by(2) {
        let nf = n as f64;
        let e = nf * nf * omega * omega * damping;
        let amp = (-e).exp() / nf;
        if amp < TERM_FLOOR {
            break;
        }
        let v = char_fn(-freq * nf * omega / sigma_s) * amp;
        let v_hat = (-e * spread).exp() / nf;
        sum += (v - v_hat).norm();
    }
    2.0 / PI * sum
}

/// ε₂: Fourier-domain distance between the characteristic function of `L̃ + S` and
/// that of a Gaussian of the same variance.
pub fn epsilon2<F: Fn(f64) -> Complex64>(bp: &BoundParams, sigma_l2: f64, sigma_s2: f64, char_fn: F) -> f64 {
    fourier_gap(bp.omega, bp.p, sigma_l2, sigma_s2, 1.0, SQRT_2, char_fn)
}

/// ε₂ with the `e^{-n²ω²/2}`, `φ(−nω/σ)` convention; equals [`epsilon2`] at `ω/√2`.
pub fn epsilon2_alt<F: Fn(f64) -> Complex64>(bp: &BoundParams, sigma_l2: f64, sigma_s2: f64, char_fn: F) -> f64 {
    fourier_gap(bp.omega, bp.p, sigma_l2, sigma_s2, 0.5, 1.0, char_fn)
}

pub fn epsilon3(k1: f64) -> f64 {
    1.0 / (k1 * k1) + 0.5 * erfc(k1)
}

/// Truncated Fourier series for `erfc(x)`, valid inside one period `|x| < π/(2ω)`.
pub fn erfc_fourier(x: f64, omega: f64, p: u32) -> f64 {
    // Neumaier summation: thousands of alternating terms otherwise lose several ulps.
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for n in (1..2 * p as u64).step_by(2) {
        let nf = n as f64;
        let term = (-nf * nf * omega * omega).exp() / nf * (2.0 * nf * omega * x).sin();
        let next = sum + term;
        comp += if sum.abs() >= term.abs() { (sum - next) + term } else { (term - next) + sum };
        sum = next;
    }
    1.0 - 4.0 / PI * (sum + comp)
}

/// Mean, variance and characteristic function of the centred coupling gain `L̃`.
#[derive(Debug, Clone)]
pub struct LStats {
    pub mu_l: f64,
    pub sigma_l2: f64,
    char_fn: BinnedCharFn,
}

impl LStats {
    /// From a discrete distribution: values `l` with probabilities `probs` (summing to 1).
    pub fn from_weighted(l: &[f64], probs: &[f64]) -> Self {
        let total: f64 = probs.iter().sum();
        let mu_l = l.iter().zip(probs).map(|(v, p)| v * p).sum::<f64>() / total;
        let sigma_l2 = l.iter().zip(probs).map(|(v, p)| p * (v - mu_l).powi(2)).sum::<f64>() / total;
        let centred: Vec<f64> = l.iter().map(|v| v - mu_l).collect();
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        LStats { mu_l, sigma_l2, char_fn: BinnedCharFn::new(centred, probs) }
    }

    /// `E[exp(j t L̃)]`.
    pub fn char_fn(&self, t: f64) -> Complex64 {
        self.char_fn.eval(t)
    }
}

/// Characteristic function of a weighted point set, evaluated through per-bin Taylor
/// moments so that each evaluation costs O(bins) instead of O(points).
#[derive(Debug, Clone)]
struct BinnedCharFn {
    values: Vec<f64>,
    probs: Vec<f64>,
    centres: Vec<f64>,
    /// `moments[k * TAYLOR_TERMS + m] = Σ p (v − c_k)^m` over bin k.
    moments: Vec<f64>,
}

impl BinnedCharFn {
    fn new(values: Vec<f64>, probs: Vec<f64>) -> Self {
        let mut bins: std::collections::BTreeMap<i64, [f64; TAYLOR_TERMS]> = Default::default();
        for (v, p) in values.iter().zip(&probs) {
            let k = (v / BIN_WIDTH_DB).round() as i64;
            let d = v - k as f64 * BIN_WIDTH_DB;
            let m = bins.entry(k).or_insert([0.0; TAYLOR_TERMS]);
            let mut pw = *p;
            for slot in m.iter_mut() {
                *slot += pw;
                pw *= d;
            }
        }
        let centres = bins.keys().map(|k| *k as f64 * BIN_WIDTH_DB).collect();
        let moments = bins.values().flat_map(|m| m.iter().copied()).collect();
        BinnedCharFn { values, probs, centres, moments }
    }

    fn eval(&self, t: f64) -> Complex64 {
        if t == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        if t.abs() * 0.5 * BIN_WIDTH_DB > TAYLOR_MAX_PHASE {
            return self.values.iter().zip(&self.probs).map(|(v, p)| Complex64::from_polar(*p, t * v)).sum();
        }
        let mut coef = [Complex64::new(0.0, 0.0); TAYLOR_TERMS];
        let mut c = Complex64::new(1.0, 0.0);
        for (m, slot) in coef.iter_mut().enumerate() {
            *slot = c;
            c *= Complex64::new(0.0, t) / (m as f64 + 1.0);
        }
        let mut sum = Complex64::new(0.0, 0.0);
        for (k, centre) in self.centres.iter().enumerate() {
            let row = &self.moments[k * TAYLOR_TERMS..(k + 1) * TAYLOR_TERMS];
            let local: Complex64 = row.iter().zip(&coef).map(|(mk, ck)| ck * *mk).sum();
            sum += Complex64::from_polar(1.0, t * centre) * local;
        }
        sum
    }
}

/// Statistics of `L(z) = η·L_bb(z) − L_b1(z)` under the cell's UE density.
pub fn l_stats(positions: &PositionModel, serving_bs: Point, victim_bs: Point, params: &ChannelParams) -> LStats {
    let rule = &positions.rule;
    let l: Vec<f64> = rule.points.iter().map(|z| coupling_gain_fast(*z, serving_bs, victim_bs, params)).collect();
    LStats::from_weighted(&l, &rule.probs)
}

/// `(ε₁, ε₂)` for the first approximation step (`L + S` replaced by a Gaussian).
pub fn step1_bound(stats: &LStats, shadow: &ShadowStats, bp: &BoundParams) -> Result<(f64, f64)> {
    check_corollary(bp)?;
    let e1 = epsilon1(bp, stats.sigma_l2, shadow.sigma_s2);
    let e2 = epsilon2(bp, stats.sigma_l2, shadow.sigma_s2, |t| stats.char_fn(t));
    Ok((e1, e2))
}

/// `(ε₁′, ε₂′)` for the second step (adding the dB fading gain to the Gaussian `G_b`).
pub fn step2_bound(g: &GaussianFit, fading: &FadingModel, bp: &BoundParams) -> Result<(f64, f64)> {
    check_corollary(bp)?;
    if fading.is_none() {
        return Ok((0.0, 0.0));
    }
    let q = fading.quadrature();
    let (_, sigma_h2) = q.moments();
    let e1 = epsilon1(bp, sigma_h2, g.sigma2);
    let e2 = epsilon2(bp, sigma_h2, g.sigma2, |t| q.char_fn(t));
    Ok((e1, e2))
}

fn check_corollary(bp: &BoundParams) -> Result<()> {
    bp.validate()?;
    if bp.k1 != bp.k2 {
        return Err(Error::InvalidParameter(format!("k1 and k2 must be equal, got {} and {}", bp.k1, bp.k2)));
    }
    Ok(())
}

/// Per-cell bound components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub cell_id: u32,
    pub eps1: f64,
    pub eps2: f64,
    pub eps1_prime: f64,
    pub eps2_prime: f64,
    pub eps3: f64,
    pub eps_total: f64,
    pub mu_l: f64,
    pub sigma_l2: f64,
    pub params: BoundParams,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str = "cell_id,eps1,eps2,eps1p,eps2p,eps3,eps_total,mu_L,sigma_L2";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.cell_id,
            self.eps1,
            self.eps2,
            self.eps1_prime,
            self.eps2_prime,
            self.eps3,
            self.eps_total,
            self.mu_l,
            self.sigma_l2
        )
    }

    pub fn step1(&self) -> f64 {
        self.eps1 + self.eps2
    }

    pub fn step2(&self) -> f64 {
        self.eps1_prime + self.eps2_prime
    }
}

/// Assembles both steps for one cell from its coupling-gain statistics.
pub fn total_bound(
    cell_id: u32,
    stats: &LStats,
    params: &ChannelParams,
    fading: &FadingModel,
    bp: &BoundParams,
) -> Result<BoundReport> {
    let shadow = params.shadow();
    let (eps1, eps2) = step1_bound(stats, &shadow, bp)?;
    let g = GaussianFit::step1(stats, &shadow, params.p0_dbm);
    let (eps1_prime, eps2_prime) = step2_bound(&g, fading, bp)?;
    Ok(BoundReport {
        cell_id,
        eps1,
        eps2,
        eps1_prime,
        eps2_prime,
        eps3: epsilon3(bp.k1),
        eps_total: (eps1 + eps2) + (eps1_prime + eps2_prime),
        mu_l: stats.mu_l,
        sigma_l2: stats.sigma_l2,
        params: *bp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gaussian_cf(var: f64) -> impl Fn(f64) -> Complex64 {
        move |t| Complex64::new((-0.5 * var * t * t).exp(), 0.0)
    }

    #[test]
    fn epsilon3_values() {
        assert!((epsilon3(500.0) - 4.000e-6).abs() <= 1e-9);
        assert!((epsilon3(100.0) - 1.000e-4).abs() <= 1e-7);
        assert!(epsilon3(1e9) < 1e-17);
        assert!(epsilon3(50.0) > epsilon3(60.0));
        let big = BoundParams { k2: 1e4, ..Default::default() };
        assert!(epsilon1(&big, 30.0, 164.0) > 0.9);
    }

    #[test]
    fn delta_values() {
        let r = truncation_residual(0.001, 4000);
        assert!(r > 0.0 && r < 1e-25, "{r}");
        assert!((delta1(0.001, 4000) - 2.0).abs() < 1e-20);
        assert_relative_eq!(erfc(5.0), 1.54e-12, max_relative = 2e-3);
        let e = erfc(4.001);
        assert!(e / 1.4e-8 < 1.2 && 1.4e-8 / e < 1.2, "{e}");
    }

    #[test]
    fn epsilon1_at_defaults() {
        let bp = BoundParams::default();
        let [first, a, b] = epsilon1_terms(&bp, 164.0, 164.0);
        assert!((first - 4e-6).abs() <= 1e-9);
        assert!(a + b < 1e-18, "{a} {b}");
        assert!((epsilon1(&bp, 0.0, 164.0) - 4.000e-6).abs() <= 1e-9);
    }

    #[test]
    fn epsilon1_non_increasing_in_k2() {
        // Holds while (k1 + k2)·ratio/√2 stays inside the Fourier period π/(2ω); beyond it the
        // second δ₀ term saturates at erfc(−∞) = 2.
        let mut last = f64::INFINITY;
        for k2 in [50.0, 100.0, 200.0, 500.0, 1000.0, 1500.0] {
            let e = epsilon1(&BoundParams { k2, ..Default::default() }, 30.0, 164.0);
            assert!(e <= last);
            last = e;
        }
    }

    #[test]
    fn epsilon2_vanishes_for_gaussian_and_deterministic() {
        let bp = BoundParams::default();
        assert_eq!(epsilon2(&bp, 0.0, 164.0, |_| Complex64::new(1.0, 0.0)), 0.0);
        for var in [0.5, 10.0, 80.0] {
            assert!(epsilon2(&bp, var, 164.0, gaussian_cf(var)) < 1e-12);
        }
    }

    #[test]
    fn epsilon2_conventions_agree_under_rescaling() {
        let bp = BoundParams::default();
        let half = BoundParams { omega: bp.omega / SQRT_2, ..bp };
        // a non-Gaussian L̃: two-point mixture
        let cf = |t: f64| Complex64::new(0.5 * ((3.0 * t).cos() + (5.0 * t).cos()), 0.5 * ((3.0 * t).sin() - (5.0 * t).sin()));
        let a = epsilon2_alt(&bp, 17.0, 164.0, cf);
        let b = epsilon2(&half, 17.0, 164.0, cf);
        assert!(a > 1e-6);
        assert!((a - b).abs() <= 1e-12, "{a} {b}");
    }

    #[test]
    fn fourier_series_tracks_erfc() {
        let (omega, p) = (0.001, 4000);
        for x in [-4.0, -1.0, 0.0, 0.5, 1.0, 4.0] {
            let gap = (erfc_fourier(x, omega, p) - erfc(x)).abs();
            assert!(gap <= delta0(omega, p, f64::abs(x)) + 1e-13, "x={x} gap={gap}");
        }
        let s = erfc_fourier(0.7, omega, p) + erfc_fourier(-0.7, omega, p);
        assert!((s - 2.0).abs() < 1e-13);
        assert_relative_eq!(erfc(1.0), 0.157_299_207_050_285_13, max_relative = 1e-14);
    }

    #[test]
    fn binned_char_fn_matches_direct_sum() {
        let n = 5000;
        let values: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.37).sin() * 12.0 + (i as f64 / n as f64) * 3.0).collect();
        let probs = vec![1.0 / n as f64; n];
        let stats = LStats::from_weighted(&values, &probs);
        for t in [0.0, 1e-3, 0.05, 0.3, 0.9, 4.0, 15.0] {
            let direct: Complex64 = values.iter().zip(&probs).map(|(v, p)| Complex64::from_polar(*p, t * (v - stats.mu_l))).sum();
            assert!((stats.char_fn(t) - direct).norm() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn step2_without_fading_is_zero() {
        let g = GaussianFit { mu: -94.0, sigma2: 174.0 };
        assert_eq!(step2_bound(&g, &FadingModel::None, &BoundParams::default()).unwrap(), (0.0, 0.0));
        let unequal = BoundParams { k2: 400.0, ..Default::default() };
        assert!(step2_bound(&g, &FadingModel::Rayleigh, &unequal).is_err());
    }

    #[test]
    fn step2_magnitudes_for_fading_models() {
        let g = GaussianFit { mu: -94.6, sigma2: 174.2 };
        let bp = BoundParams::default();
        let (a, b) = step2_bound(&g, &FadingModel::Rayleigh, &bp).unwrap();
        let ray = a + b;
        let (c, d) = step2_bound(&g, &FadingModel::Rician { gamma: 10.0 }, &bp).unwrap();
        let ric = c + d;
        assert!(ray > 4.5e-3 / 2.0 && ray < 4.5e-3 * 2.0, "{ray}");
        assert!(ric > 1.9e-4 / 2.0 && ric < 1.9e-4 * 2.0, "{ric}");
    }

    #[test]
    fn deterministic_cell_total() {
        let stats = LStats::from_weighted(&[-18.0], &[1.0]);
        let r = total_bound(2, &stats, &ChannelParams::default(), &FadingModel::None, &BoundParams::default()).unwrap();
        assert_eq!(r.eps2, 0.0);
        assert!((r.eps_total - 4e-6).abs() < 1e-9);
        assert!(r.eps_total >= r.eps1 && r.eps_total >= r.eps2);
    }
}
