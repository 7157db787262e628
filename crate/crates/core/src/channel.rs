//! Path loss, fractional power control, shadowing, and dB-scale multipath fading.

use std::f64::consts::LN_10;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::special::{bessel_i0e, gauss_legendre_cached};

/// `10 / ln 10`, the dB-per-neper scale.
pub const ZETA: f64 = 10.0 / LN_10;

const PDF_FLOOR: f64 = 1e-14;
const DB_WINDOW: f64 = 80.0;
const PANEL_NODES: usize = 16;

/// Link-budget parameters shared by every cell of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    /// Path loss at 1 km, dB.
    pub a_db: f64,
    /// Path-loss slope in dB per decade of distance.
    pub alpha: f64,
    /// Power-control target received power, dBm.
    pub p0_dbm: f64,
    /// Fractional path-loss compensation factor.
    pub eta: f64,
    pub sigma_shad_db: f64,
    /// Minimum BS-to-UE distance, km.
    pub d_min_km: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams { a_db: 103.8, alpha: 20.9, p0_dbm: -76.0, eta: 0.8, sigma_shad_db: 10.0, d_min_km: 0.005 }
    }
}

impl ChannelParams {
    /// The first violated invariant as `(field, message)`.
    pub fn invalid_field(&self) -> Option<(&'static str, String)> {
        if !self.a_db.is_finite() {
            return Some(("a_db", "must be finite".into()));
        }
        if !self.p0_dbm.is_finite() {
            return Some(("p0_dbm", "must be finite".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Some(("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Some(("eta", format!("must satisfy 0 < eta <= 1, got {}", self.eta)));
        }
        if !(self.sigma_shad_db.is_finite() && self.sigma_shad_db > 0.0) {
            return Some(("sigma_shad_db", format!("must be > 0, got {}", self.sigma_shad_db)));
        }
        if !(self.d_min_km.is_finite() && self.d_min_km >= 0.0) {
            return Some(("d_min_km", format!("must be >= 0, got {}", self.d_min_km)));
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        match self.invalid_field() {
            Some((field, msg)) => Err(Error::InvalidParameter(format!("{field} {msg}"))),
            None => Ok(()),
        }
    }

    pub fn shadow(&self) -> ShadowStats {
        ShadowStats::new(self)
    }
}

/// Path loss in dB at distance `d` km.
pub fn path_loss(d: f64, params: &ChannelParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("path loss needs a positive distance, got {d}")));
    }
    Ok(params.a_db + params.alpha * d.log10())
}

/// `η·L(z, serving) − L(z, victim)`: the dB coupling between the interferer's power
/// control and the path to the victim BS.
pub fn coupling_gain_l(z: Point, serving_bs: Point, victim_bs: Point, params: &ChannelParams) -> Result<f64> {
    Ok(params.eta * path_loss(z.dist(serving_bs), params)? - path_loss(z.dist(victim_bs), params)?)
}

/// Unchecked coupling gain for hot loops where the distances are known to be positive.
#[inline]
pub(crate) fn coupling_gain_fast(z: Point, serving_bs: Point, victim_bs: Point, params: &ChannelParams) -> f64 {
    // η(A + α log d_bb) − (A + α log d_b1)
    let half_log = |p: Point| 0.5 * ((z.x - p.x).powi(2) + (z.y - p.y).powi(2)).log10();
    (params.eta - 1.0) * params.a_db + params.alpha * (params.eta * half_log(serving_bs) - half_log(victim_bs))
}

/// Statistics of the combined shadowing `η·S_bb − S_b1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadowStats {
    pub mu_s: f64,
    pub sigma_s2: f64,
}

impl ShadowStats {
    pub fn new(params: &ChannelParams) -> Self {
        ShadowStats { mu_s: 0.0, sigma_s2: (1.0 + params.eta * params.eta) * params.sigma_shad_db.powi(2) }
    }
}

/// Small-scale fading of the interfering link, expressed as a unit-mean power gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FadingModel {
    None,
    Rayleigh,
    /// `gamma` is the ratio of line-of-sight to scattered power.
    Rician { gamma: f64 },
}

impl FadingModel {
    pub fn validate(&self) -> Result<()> {
        if let FadingModel::Rician { gamma } = self {
            if !(gamma.is_finite() && *gamma >= 0.0) {
                return Err(Error::InvalidParameter(format!("rician gamma must be finite and >= 0, got {gamma}")));
            }
        }
        Ok(())
    }

    pub fn is_none(&self) -> bool {
        matches!(self, FadingModel::None)
    }

    /// Density of the linear power gain. Not defined for `None`.
    fn power_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            FadingModel::None => 0.0,
            FadingModel::Rayleigh => (-x).exp(),
            FadingModel::Rician { gamma } => {
                let g1 = gamma + 1.0;
                let arg = 2.0 * (gamma * g1 * x).sqrt();
                g1 * (-gamma - g1 * x + arg).exp() * bessel_i0e(arg)
            }
        }
    }

    /// Density of `H = 10·log10 |h|²` at `h` dB. `None` is a point mass at 0 dB and
    /// has no density; this returns 0 for it.
    pub fn db_pdf(&self, h: f64) -> f64 {
        let x = 10f64.powf(h / 10.0);
        self.power_pdf(x) * x * LN_10 / 10.0
    }

    /// Rough spread of `H` in dB, used to size quadrature panels.
    fn db_spread(&self) -> f64 {
        match *self {
            FadingModel::None => 0.0,
            FadingModel::Rayleigh => ZETA * std::f64::consts::PI / 6f64.sqrt(),
            FadingModel::Rician { gamma } => {
                let rel = (2.0 * gamma + 1.0).sqrt() / (gamma + 1.0);
                (ZETA * rel).min(ZETA * std::f64::consts::PI / 6f64.sqrt())
            }
        }
    }

    /// Gauss–Legendre nodes for `H` over its truncated support, with weights
    /// normalized to sum to one. `None` yields the single node 0 dB.
    pub fn quadrature(&self) -> FadingQuadrature {
        if self.is_none() {
            return FadingQuadrature { nodes: vec![0.0], weights: vec![1.0], mean: 0.0 };
        }
        let width = (self.db_spread() / 4.0).min(1.0);
        // Both Rayleigh and unit-mean Rician densities peak near 0 dB.
        let mut hi = 0.0;
        while hi < DB_WINDOW && self.db_pdf(hi) >= PDF_FLOOR {
            hi += width;
        }
        let mut lo = 0.0;
        while lo > -DB_WINDOW && self.db_pdf(lo) >= PDF_FLOOR {
            lo -= width;
        }
        let (hi, lo) = (hi.min(DB_WINDOW), lo.max(-DB_WINDOW));
        let panels = ((hi - lo) / width).ceil().max(1.0) as usize;
        let step = (hi - lo) / panels as f64;
        let (x, w) = gauss_legendre_cached(PANEL_NODES);
        let mut nodes = Vec::with_capacity(panels * PANEL_NODES);
        let mut weights = Vec::with_capacity(panels * PANEL_NODES);
        for k in 0..panels {
            let mid = lo + (k as f64 + 0.5) * step;
            for (xi, wi) in x.iter().zip(w) {
                let h = mid + 0.5 * step * xi;
                nodes.push(h);
                weights.push(0.5 * step * wi * self.db_pdf(h));
            }
        }
        let mass: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= mass);
        let mean = nodes.iter().zip(&weights).map(|(h, w)| w * h).sum();
        FadingQuadrature { nodes, weights, mean }
    }

    /// Mean and variance of `H` in dB.
    pub fn moments(&self) -> (f64, f64) {
        self.quadrature().moments()
    }

    /// Characteristic function of the centred gain `H − μ_H`.
    pub fn char_fn(&self, t: f64) -> Complex64 {
        self.quadrature().char_fn(t)
    }

    /// Draws `H` in dB.
    pub fn sample_db<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            FadingModel::None => 0.0,
            FadingModel::Rayleigh => {
                let e: f64 = Exp1.sample(rng);
                10.0 * e.log10()
            }
            FadingModel::Rician { gamma } => {
                let los = (gamma / (gamma + 1.0)).sqrt();
                let s = (0.5 / (gamma + 1.0)).sqrt();
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                let p = (los + s * re).powi(2) + (s * im).powi(2);
                10.0 * p.log10()
            }
        }
    }
}

/// Discretized distribution of the dB fading gain.
#[derive(Debug, Clone)]
pub struct FadingQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    mean: f64,
}

impl FadingQuadrature {
    pub fn moments(&self) -> (f64, f64) {
        let var = self.nodes.iter().zip(&self.weights).map(|(h, w)| w * (h - self.mean).powi(2)).sum();
        (self.mean, var)
    }

    pub fn char_fn(&self, t: f64) -> Complex64 {
        if t == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(h, w)| Complex64::from_polar(*w, t * (h - self.mean)))
            .sum()
    }
}
