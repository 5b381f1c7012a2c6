//! Candidate duplicate pairs without the quadratic all-pairs scan.
//!
//! Records are bucketed into a latitude/longitude grid whose cells are at
//! least as wide as the blocking radius, so a 3x3 neighborhood scan returns
//! a superset of every record within the radius. Exact distance and price
//! gates then decide membership, which makes the grid path equal to the
//! brute-force path as a set.
//!
//! The grid does not wrap at the antimeridian; inputs are city-scale
//! extents, not global ones.

use std::collections::BTreeSet;
use std::collections::HashMap;

use crate::config::BlockingConfig;
use crate::model::GeoPoint;
use crate::normalize::{geo_distance_m, EARTH_RADIUS_M};

const M_PER_DEG_LAT: f64 = std::f64::consts::PI / 180.0 * EARTH_RADIUS_M;

/// One record entering the blocking stage: an ad, or a housing unit treated
/// as a pseudo-ad.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockEntity<I> {
    pub id: I,
    pub location: GeoPoint,
    pub price: f64,
    /// City key; pairs are only formed within a city.
    pub city: String,
    /// Posting agencies: one element for an agency ad, empty for a private
    /// seller, possibly several for a multi-agency unit.
    pub agencies: BTreeSet<String>,
}

impl<I> BlockEntity<I> {
    /// Two sides are "same agency" only when both carry exactly the same
    /// single agency. Private sellers never count as the same agency.
    pub fn same_agency(&self, other: &Self) -> bool {
        self.agencies.len() == 1 && self.agencies == other.agencies
    }
}

impl BlockEntity<crate::model::AdId> {
    pub fn from_ad(ad: &crate::model::Ad) -> Self {
        let mut agencies = BTreeSet::new();
        if !ad.agency_id.is_empty() {
            agencies.insert(ad.agency_id.clone());
        }
        BlockEntity {
            id: ad.id.clone(),
            location: ad.location,
            price: ad.asking_price,
            city: ad.city().unwrap_or("").to_string(),
            agencies,
        }
    }
}

/// An unordered candidate pair (`a < b`) with its comparison margins.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePair<I> {
    pub a: I,
    pub b: I,
    pub same_agency: bool,
    pub distance_m: f64,
    pub rel_price_gap: f64,
    pub abs_price_gap: f64,
}

/// Uniform grid over degree space with cells sized from the radius and the
/// worst-case latitude of the indexed points.
#[derive(Debug)]
pub struct SpatialGrid {
    cell_lat_deg: f64,
    cell_lon_deg: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl SpatialGrid {
    pub fn build(points: &[GeoPoint], radius_m: f64) -> SpatialGrid {
        assert!(radius_m > 0.0, "radius must be positive");
        let max_abs_lat = points
            .iter()
            .map(|p| p.lat.abs())
            .fold(0.0f64, f64::max)
            .min(85.0);
        let cell_lat_deg = radius_m / M_PER_DEG_LAT;
        // Small slack covers the sphere-to-grid approximation in longitude.
        let cell_lon_deg = radius_m / (M_PER_DEG_LAT * max_abs_lat.to_radians().cos()) * 1.001;
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        let mut grid = SpatialGrid { cell_lat_deg, cell_lon_deg, cells: HashMap::new() };
        for (idx, p) in points.iter().enumerate() {
            cells.entry(grid.cell_of(*p)).or_default().push(idx);
        }
        grid.cells = cells;
        grid
    }

    fn cell_of(&self, p: GeoPoint) -> (i64, i64) {
        (
            (p.lat / self.cell_lat_deg).floor() as i64,
            (p.lon / self.cell_lon_deg).floor() as i64,
        )
    }

    /// Indices of every indexed point whose cell is adjacent to `p`'s: a
    /// superset of all points within the build radius of `p`.
    pub fn lookup(&self, p: GeoPoint) -> Vec<usize> {
        let (cy, cx) = self.cell_of(p);
        let mut out = Vec::new();
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(bucket) = self.cells.get(&(cy + dy, cx + dx)) {
                    out.extend_from_slice(bucket);
                }
            }
        }
        out
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }
}

/// Whether a pair passes the price gates: relative gap (against the lower
/// price) strictly below the relative bound, or absolute gap strictly below
/// the absolute bound.
pub fn price_gate(p1: f64, p2: f64, config: &BlockingConfig) -> bool {
    let abs = (p1 - p2).abs();
    let rel = abs / p1.min(p2);
    rel < config.max_rel_price_gap || abs < config.max_abs_price_gap
}

/// Generates all candidate pairs among `entities`: same city, geographic
/// distance strictly below the radius, and a passing price gate. Output is
/// sorted by id pair and deterministic.
pub fn candidate_pairs<I: Ord + Clone>(
    entities: &[BlockEntity<I>],
    config: &BlockingConfig,
) -> Vec<CandidatePair<I>> {
    let points: Vec<GeoPoint> = entities.iter().map(|e| e.location).collect();
    let grid = SpatialGrid::build(&points, config.max_distance_m);
    let mut pairs = Vec::new();
    for (i, entity) in entities.iter().enumerate() {
        for j in grid.lookup(entity.location) {
            if j <= i {
                continue;
            }
            if let Some(pair) = evaluate_pair(entity, &entities[j], config) {
                pairs.push(pair);
            }
        }
    }
    pairs.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));
    pairs
}

/// Applies the full candidate predicate to one pair.
pub fn evaluate_pair<I: Ord + Clone>(
    a: &BlockEntity<I>,
    b: &BlockEntity<I>,
    config: &BlockingConfig,
) -> Option<CandidatePair<I>> {
    if a.id == b.id || a.city != b.city {
        return None;
    }
    let distance_m = geo_distance_m(a.location, b.location);
    if distance_m >= config.max_distance_m {
        return None;
    }
    if !price_gate(a.price, b.price, config) {
        return None;
    }
    let (lo, hi) = if a.id < b.id { (a, b) } else { (b, a) };
    let abs = (a.price - b.price).abs();
    Some(CandidatePair {
        a: lo.id.clone(),
        b: hi.id.clone(),
        same_agency: a.same_agency(b),
        distance_m,
        rel_price_gap: abs / a.price.min(b.price),
        abs_price_gap: abs,
    })
}
