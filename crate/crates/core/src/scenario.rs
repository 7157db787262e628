//! Scenario description, JSON persistence, and the standard evaluation layouts.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bound::BoundParams;
use crate::channel::{coupling_gain_fast, ChannelParams, FadingModel};
use crate::error::{Error, Result};
use crate::geometry::{effective_region, DensityKernel, Point, PositionModel, Region};

/// Side of the square in which hotspot base stations are dropped, km.
pub const HOTSPOT_AREA_KM: f64 = 0.5;
/// Minimum spacing between hotspot base stations, as a fraction of the cell radius.
pub const HOTSPOT_SPACING: f64 = 0.8;
pub const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Uniform,
    /// `W/ρ` with ρ measured from `origin`, defaulting to the serving BS.
    InverseRadial {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        origin: Option<Point>,
    },
}

impl DensitySpec {
    pub fn inverse_radial() -> Self {
        DensitySpec::InverseRadial { origin: None }
    }

    pub fn kernel(&self, bs: Point) -> DensityKernel {
        match self {
            DensitySpec::Uniform => DensityKernel::Uniform,
            DensitySpec::InverseRadial { origin } => DensityKernel::InverseRadial { origin: origin.unwrap_or(bs) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub id: u32,
    pub bs: Point,
    pub region: Region,
    pub density: DensitySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub victim_bs: Point,
    pub cells: Vec<CellSpec>,
    pub channel: ChannelParams,
    pub fading: FadingModel,
    #[serde(default)]
    pub bound: BoundParams,
}

impl Scenario {
    /// Checks invariants that the JSON schema alone cannot express.
    pub fn validate(&self) -> Result<()> {
        if !self.victim_bs.is_finite() {
            return Err(Error::schema("victim_bs", "coordinates must be finite"));
        }
        if self.cells.is_empty() {
            return Err(Error::schema("cells", "at least one interfering cell is required"));
        }
        if let Some((field, msg)) = self.channel.invalid_field() {
            return Err(Error::schema(format!("channel.{field}"), msg));
        }
        if let Err(e) = self.fading.validate() {
            return Err(Error::schema("fading.gamma", e.to_string()));
        }
        if let Some((field, msg)) = self.bound.invalid_field() {
            return Err(Error::schema(format!("bound.{field}"), msg));
        }
        let mut ids = HashSet::new();
        for (i, cell) in self.cells.iter().enumerate() {
            if !ids.insert(cell.id) {
                return Err(Error::schema(format!("cells[{i}].id"), format!("duplicate cell id {}", cell.id)));
            }
            if !cell.bs.is_finite() {
                return Err(Error::schema(format!("cells[{i}].bs"), "coordinates must be finite"));
            }
            if cell.bs == self.victim_bs {
                return Err(Error::schema(format!("cells[{i}].bs"), "interfering BS coincides with the victim BS"));
            }
            if let Err(e) = cell.region.validate() {
                return Err(Error::schema(format!("cells[{i}].region"), e.to_string()));
            }
            if let DensitySpec::InverseRadial { origin: Some(o) } = cell.density {
                if !o.is_finite() {
                    return Err(Error::schema(format!("cells[{i}].density.origin"), "coordinates must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical (compact, field-ordered) JSON encoding.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scenario serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            match inner.classify() {
                serde_json::error::Category::Data => {
                    let message = inner.to_string();
                    Error::schema(schema_path(&path, &message), strip_position(&message))
                }
                _ => Error::Parse { line: inner.line(), column: inner.column(), message: strip_position(&inner.to_string()) },
            }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// serde reports a missing field against its parent; point at the field itself.
fn schema_path(parent: &str, message: &str) -> String {
    let parent = if parent == "." { "" } else { parent };
    match message.strip_prefix("missing field `").and_then(|rest| rest.split('`').next()) {
        Some(field) if parent.is_empty() => field.to_string(),
        Some(field) => format!("{parent}.{field}"),
        None if parent.is_empty() => "(root)".to_string(),
        None => parent.to_string(),
    }
}

fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(i) => message[..i].to_string(),
        None => message.to_string(),
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    Scenario::from_json(&fs::read_to_string(path)?)
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    write_atomic(path, scenario.to_json().as_bytes())
}

/// Writes through a sibling temporary file and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// The two-cell layout: victim at the origin, interferer at `(1.5r, 0)` covering the
/// intersection of a square, a disk and a tilted ellipse, all scaled by `r`.
pub fn build_single_cell(r: f64, density: DensitySpec, fading: FadingModel) -> Scenario {
    let bs = Point::new(1.5 * r, 0.0);
    Scenario {
        victim_bs: Point::new(0.0, 0.0),
        cells: vec![CellSpec { id: 2, bs, region: bread_region(bs, r), density }],
        channel: ChannelParams::default(),
        fading,
        bound: BoundParams::default(),
    }
}

/// Coverage region of the two-cell layout around `bs`.
pub fn bread_region(bs: Point, r: f64) -> Region {
    Region::intersection(vec![
        Region::square(bs, 2.4 * r),
        Region::disk(Point::new(bs.x + 0.2 * r, bs.y), 1.3 * r),
        Region::ellipse(Point::new(bs.x - 0.1 * r, bs.y + 0.1 * r), 1.5 * r, 1.0 * r, 30.0),
    ])
}

/// Random drop of `b_total` base stations in a 0.5 km square with spacing at least `0.8r`.
/// The first one is the victim; the others get disk coverage of radius `r` and ids `2..`.
pub fn build_hotspot_layout(
    b_total: usize,
    r: f64,
    seed: u64,
    density: DensitySpec,
    fading: FadingModel,
) -> Result<Scenario> {
    if b_total < 2 {
        return Err(Error::InvalidParameter(format!("need at least two base stations, got {b_total}")));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("cell radius must be positive, got {r}")));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let spacing = HOTSPOT_SPACING * r;
    let mut sites: Vec<Point> = Vec::with_capacity(b_total);
    for index in 0..b_total {
        let placed = (0..PLACEMENT_ATTEMPTS).find_map(|_| {
            let p = Point::new(rng.random::<f64>() * HOTSPOT_AREA_KM, rng.random::<f64>() * HOTSPOT_AREA_KM);
            sites.iter().all(|q| q.dist(p) >= spacing).then_some(p)
        });
        sites.push(placed.ok_or(Error::PlacementFailure { index })?);
    }
    let cells = sites[1..]
        .iter()
        .enumerate()
        .map(|(i, &bs)| CellSpec { id: i as u32 + 2, bs, region: Region::disk(bs, r), density })
        .collect();
    Ok(Scenario { victim_bs: sites[0], cells, channel: ChannelParams::default(), fading, bound: BoundParams::default() })
}

/// A cell with its effective region and UE position model ready for integration and
/// sampling.
#[derive(Debug, Clone)]
pub struct PreparedCell {
    pub id: u32,
    pub bs: Point,
    pub positions: PositionModel,
}

/// Removes the exclusion disks around the serving and victim BSs and builds the
/// position model. The quadrature is refined until the moments of the coupling gain settle.
pub fn prepare_cell(cell: &CellSpec, victim_bs: Point, params: &ChannelParams) -> Result<PreparedCell> {
    let wrap = |e: Error| e.in_cell(cell.id);
    let region = effective_region(&cell.region, cell.bs, params.d_min_km).map_err(wrap)?;
    let region = effective_region(&region, victim_bs, params.d_min_km).map_err(wrap)?;
    let kernel = cell.density.kernel(cell.bs);
    // Centering the second moment keeps the relative convergence test meaningful. The
    // bounding-box center can coincide with a BS, so use a coarse area average instead.
    let coarse = region.area_rule(0, &[]).map_err(wrap)?;
    let reference = coarse
        .points
        .iter()
        .zip(&coarse.weights)
        .map(|(z, w)| w * coupling_gain_fast(*z, cell.bs, victim_bs, params))
        .sum::<f64>()
        / coarse.area();
    let positions = PositionModel::new(region, kernel, &[cell.bs, victim_bs], |z| {
        let l = coupling_gain_fast(z, cell.bs, victim_bs, params);
        [l, (l - reference).powi(2)]
    })
    .map_err(wrap)?;
    Ok(PreparedCell { id: cell.id, bs: cell.bs, positions })
}

/// Prepares every cell in parallel, preserving order.
pub fn prepare(scenario: &Scenario) -> Result<Vec<PreparedCell>> {
    scenario
        .cells
        .par_iter()
        .map(|c| prepare_cell(c, scenario.victim_bs, &scenario.channel))
        .collect()
}
