//! End-to-end analytic pipeline: coupling-gain statistics, Gaussian fits and bounds per
//! cell, then the power-lognormal fit of the aggregate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{l_stats, total_bound, BoundReport, LStats};
use crate::error::Result;
use crate::fit::{power_lognormal_fit, GaussianFit, MgfFitConfig, PowerLognormalFit};
use crate::scenario::{PreparedCell, Scenario};

#[derive(Debug, Clone)]
pub struct CellAnalysis {
    pub id: u32,
    pub stats: LStats,
    /// Gaussian fit before fading.
    pub g: GaussianFit,
    /// Gaussian fit of `I_b` in dBm.
    pub q: GaussianFit,
    pub bound: BoundReport,
}

pub fn analyze_cell(cell: &PreparedCell, scenario: &Scenario) -> Result<CellAnalysis> {
    let params = &scenario.channel;
    let stats = l_stats(&cell.positions, cell.bs, scenario.victim_bs, params);
    let g = GaussianFit::step1(&stats, &params.shadow(), params.p0_dbm);
    let q = g.step2(&scenario.fading);
    let bound = total_bound(cell.id, &stats, params, &scenario.fading, &scenario.bound).map_err(|e| e.in_cell(cell.id))?;
    Ok(CellAnalysis { id: cell.id, stats, g, q, bound })
}

/// Analyzes all cells in parallel, preserving order.
pub fn analyze(scenario: &Scenario, cells: &[PreparedCell]) -> Result<Vec<CellAnalysis>> {
    cells.par_iter().map(|c| analyze_cell(c, scenario)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateFit {
    pub fit: PowerLognormalFit,
    /// Lognormal parameters of the sum matched through the approximate MGF, dB.
    pub mu_x: f64,
    pub sigma_x: f64,
}

pub fn aggregate_fit(cells: &[CellAnalysis], cfg: &MgfFitConfig) -> Result<AggregateFit> {
    let fits: Vec<GaussianFit> = cells.iter().map(|c| c.q).collect();
    let (fit, (mu_x, sigma_x)) = power_lognormal_fit(&fits, cfg)?;
    Ok(AggregateFit { fit, mu_x, sigma_x })
}
