//! Exact simulation of per-cell and aggregate uplink interference, and KS distances.
//!
//! Every variate is drawn from a generator keyed by `(seed, cell, draw, tag)`, so results
//! do not depend on how draws are scheduled across threads.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{coupling_gain_fast, ChannelParams, FadingModel};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scenario::{write_atomic, PreparedCell};

/// Which variate a substream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Variate {
    Position = 0,
    Shadow = 1,
    Fading = 2,
}

fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

/// Independent generator for one variate of one draw of one cell.
pub fn substream(seed: u64, cell_id: u32, draw: u64, tag: Variate) -> SplitMix64 {
    let mut h = fmix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    h = fmix64(h ^ (cell_id as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9));
    h = fmix64(h ^ draw.wrapping_mul(0x94d0_49bb_1331_11eb));
    h = fmix64(h ^ (tag as u64 + 1).wrapping_mul(0x2545_f491_4f6c_dd1d));
    SplitMix64::seed_from_u64(h)
}

/// Sorted interference samples in dBm.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub values: Vec<f64>,
    pub seed: u64,
}

impl SampleSet {
    pub fn new(mut values: Vec<f64>, seed: u64) -> Self {
        values.sort_by(f64::total_cmp);
        SampleSet { values, seed }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.n() as f64
    }

    /// Right-continuous empirical CDF.
    pub fn ecdf(&self, x: f64) -> f64 {
        self.values.partition_point(|v| *v <= x) as f64 / self.n() as f64
    }

    /// Little-endian `u64` count followed by the `f64` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.n());
        out.extend_from_slice(&(self.n() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], seed: u64) -> Result<Self> {
        let bad = |m: &str| Error::InvalidParameter(format!("sample file: {m}"));
        if bytes.len() < 8 {
            return Err(bad("missing count header"));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        if bytes.len() != 8 + 8 * n {
            return Err(bad("length does not match count header"));
        }
        let values = bytes[8..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(SampleSet::new(values, seed))
    }

    /// Writes the binary sample file and its JSON sidecar (`<path>.json`).
    pub fn save(&self, path: &Path, scenario_hash: &str) -> Result<()> {
        write_atomic(path, &self.to_bytes())?;
        let meta = SampleMeta { seed: self.seed, n: self.n() as u64, scenario_hash: scenario_hash.to_string() };
        let json = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
        write_atomic(&sidecar_path(path), json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<(Self, SampleMeta)> {
        let meta: SampleMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)
            .map_err(|e| Error::InvalidParameter(format!("sample sidecar: {e}")))?;
        let set = SampleSet::from_bytes(&fs::read(path)?, meta.seed)?;
        if set.n() as u64 != meta.n {
            return Err(Error::InvalidParameter("sample count differs from sidecar".into()));
        }
        Ok((set, meta))
    }

    /// Empirical CDF as `value,probability` rows at each sample.
    pub fn write_ecdf_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "dbm,probability")?;
        let n = self.n() as f64;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{:.16e},{:.16e}", v, (i + 1) as f64 / n)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub n: u64,
    pub scenario_hash: String,
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// One realization of `I_b` in dBm for draw `draw`.
pub fn draw_interference(
    cell: &PreparedCell,
    victim_bs: Point,
    params: &ChannelParams,
    fading: &FadingModel,
    seed: u64,
    draw: u64,
) -> Result<f64> {
    let z = cell.positions.sample(&mut substream(seed, cell.id, draw, Variate::Position))?;
    let mut sh = substream(seed, cell.id, draw, Variate::Shadow);
    let s_bb: f64 = StandardNormal.sample(&mut sh);
    let s_b1: f64 = StandardNormal.sample(&mut sh);
    let shadow = params.sigma_shad_db * (params.eta * s_bb - s_b1);
    let h = fading.sample_db(&mut substream(seed, cell.id, draw, Variate::Fading));
    Ok(params.p0_dbm + coupling_gain_fast(z, cell.bs, victim_bs, params) + shadow + h)
}

/// Execution strategy; both give identical results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    Parallel,
}

fn run_draws<F>(n: usize, exec: Execution, f: F) -> Result<Vec<f64>>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    match exec {
        Execution::Serial => (0..n as u64).map(f).collect(),
        Execution::Parallel => (0..n as u64).into_par_iter().map(f).collect(),
    }
}

pub fn simulate_cell(
    cell: &PreparedCell,
    victim_bs: Point,
    params: &ChannelParams,
    fading: &FadingModel,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<SampleSet> {
    let values = run_draws(n, exec, |d| draw_interference(cell, victim_bs, params, fading, seed, d))?;
    Ok(SampleSet::new(values, seed))
}

/// Aggregate interference `10·log10 Σ_b 10^{I_b/10}` with cells independent per draw.
pub fn simulate_aggregate(
    cells: &[PreparedCell],
    victim_bs: Point,
    params: &ChannelParams,
    fading: &FadingModel,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<SampleSet> {
    if cells.is_empty() {
        return Err(Error::InvalidParameter("at least one interfering cell is required".into()));
    }
    let values = run_draws(n, exec, |d| {
        let mut mw = 0.0;
        for cell in cells {
            mw += 10f64.powf(draw_interference(cell, victim_bs, params, fading, seed, d)? / 10.0);
        }
        Ok(10.0 * mw.log10())
    })?;
    Ok(SampleSet::new(values, seed))
}

/// Exact one-sample KS statistic against a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &SampleSet, cdf: F) -> f64 {
    let n = samples.n() as f64;
    let v = &samples.values;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < v.len() {
        // ties: the ECDF jumps once over the whole run
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let f = cdf(v[i]);
        d = d.max((f - i as f64 / n).abs()).max(((j + 1) as f64 / n - f).abs());
        i = j + 1;
    }
    d
}

/// Dvoretzky–Kiefer–Wolfowitz half-width at confidence `1 − alpha`.
pub fn dkw_slack(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}
