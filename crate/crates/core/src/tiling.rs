//! Equirectangular tiling, per-user FoV tile sets and the partition of the
//! requested tiles by the exact set of users that need them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type UserId = u32;

/// Slack used when deciding whether a rectangle edge falls on a tile boundary.
const EDGE_EPS: f64 = 1e-9;

/// Grid and encoding ladder of the video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Per-tile encoding rate of each quality level in bits/s, lowest level first.
    pub encoding_rates: Vec<f64>,
    pub frame_rate: f64,
}

impl VideoGeometry {
    pub fn new(rows: usize, cols: usize, encoding_rates: Vec<f64>, frame_rate: f64) -> Result<Self> {
        let g = Self {
            rows,
            cols,
            encoding_rates,
            frame_rate,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn levels(&self) -> usize {
        self.encoding_rates.len()
    }

    /// Encoding rate of 1-based quality level `level`.
    pub fn rate(&self, level: u32) -> f64 {
        self.encoding_rates[level as usize - 1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return invalid("geometry needs at least one row and one column");
        }
        if self.encoding_rates.is_empty() {
            return invalid("geometry needs at least one quality level");
        }
        if self.encoding_rates.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return invalid("encoding rates must be positive and finite");
        }
        if self.encoding_rates.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("encoding rates must be strictly increasing in the quality level");
        }
        if !self.frame_rate.is_finite() || self.frame_rate <= 0.0 {
            return invalid("frame rate must be positive");
        }
        Ok(())
    }

    pub fn contains(&self, tile: TileIndex) -> bool {
        (1..=self.rows).contains(&tile.row) && (1..=self.cols).contains(&tile.col)
    }
}

/// 1-based (row, column) position of a tile; row 1 is the top of the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct TileIndex {
    pub row: usize,
    pub col: usize,
}

impl TileIndex {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl From<(usize, usize)> for TileIndex {
    fn from((row, col): (usize, usize)) -> Self {
        Self { row, col }
    }
}

impl From<TileIndex> for (usize, usize) {
    fn from(t: TileIndex) -> Self {
        (t.row, t.col)
    }
}

impl fmt::Display for TileIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// Tiles a user needs plus their quality requirement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FovRequest {
    pub user: UserId,
    pub tiles: BTreeSet<TileIndex>,
    pub requirement: u32,
}

/// Viewing rectangle in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovShape {
    /// Horizontal and vertical angular spans.
    pub span_deg: (f64, f64),
    /// Extra margin added on every side.
    pub margin_deg: f64,
}

impl Default for FovShape {
    fn default() -> Self {
        Self {
            span_deg: (100.0, 100.0),
            margin_deg: 10.0,
        }
    }
}

/// Integer cell indices `i` whose unit interval `[i, i+1)` overlaps `(lo, hi)` with positive length.
fn covered_cells(lo: f64, hi: f64) -> std::ops::Range<i64> {
    let first = (lo + EDGE_EPS).floor() as i64;
    let last = (hi - EDGE_EPS).ceil() as i64;
    first..last.max(first + 1)
}

/// Tiles of the equirectangular grid that intersect the FoV rectangle centred at
/// `direction = (longitude, latitude)` in degrees. Longitude wraps, latitude is clamped
/// to the poles.
pub fn fov_tiles(direction: (f64, f64), shape: &FovShape, geometry: &VideoGeometry) -> Result<BTreeSet<TileIndex>> {
    geometry.validate()?;
    let (span_h, span_v) = shape.span_deg;
    if !(span_h > 0.0 && span_h <= 360.0) || !(span_v > 0.0 && span_v <= 180.0) {
        return invalid(format!("FoV spans must lie in (0,360]x(0,180], got {span_h}x{span_v}"));
    }
    if !shape.margin_deg.is_finite() || shape.margin_deg < 0.0 {
        return invalid("FoV margin must be non-negative");
    }
    let (lon, lat) = direction;
    if !lon.is_finite() || !(-90.0..=90.0).contains(&lat) {
        return invalid(format!("viewing direction ({lon},{lat}) out of range"));
    }

    let tile_w = 360.0 / geometry.cols as f64;
    let tile_h = 180.0 / geometry.rows as f64;
    let half_w = span_h / 2.0 + shape.margin_deg;
    let half_h = span_v / 2.0 + shape.margin_deg;

    let cols: BTreeSet<usize> = if 2.0 * half_w >= 360.0 - EDGE_EPS {
        (1..=geometry.cols).collect()
    } else {
        covered_cells((lon - half_w) / tile_w, (lon + half_w) / tile_w)
            .map(|j| j.rem_euclid(geometry.cols as i64) as usize + 1)
            .collect()
    };

    let top = (lat + half_h).min(90.0);
    let bottom = (lat - half_h).max(-90.0);
    let rows: Vec<usize> = covered_cells((90.0 - top) / tile_h, (90.0 - bottom) / tile_h)
        .filter(|i| (0..geometry.rows as i64).contains(i))
        .map(|i| i as usize + 1)
        .collect();

    Ok(rows
        .iter()
        .flat_map(|&row| cols.iter().map(move |&col| TileIndex::new(row, col)))
        .collect())
}

/// One block of the partition: the tiles needed by exactly the users in `users`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGroup {
    pub users: Vec<UserId>,
    pub tiles: BTreeSet<TileIndex>,
}

impl TileGroup {
    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }
}

/// Partition of all requested tiles, ordered lexicographically by user set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub groups: Vec<TileGroup>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group(&self, users: &[UserId]) -> Option<&TileGroup> {
        self.groups.iter().find(|g| g.users == users)
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, g) in self.groups.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            let users: Vec<String> = g.users.iter().map(|u| u.to_string()).collect();
            let tiles: Vec<String> = g.tiles.iter().map(|t| t.to_string()).collect();
            write!(f, "P{{{}}} = {{{}}}", users.join(","), tiles.join(","))?;
        }
        Ok(())
    }
}

/// Groups every requested tile by the set of users whose FoV contains it.
pub fn build_partition(requests: &[FovRequest]) -> Result<Partition> {
    let mut seen = BTreeSet::new();
    for r in requests {
        if !seen.insert(r.user) {
            return invalid(format!("duplicate user id {}", r.user));
        }
    }

    let mut owners: BTreeMap<TileIndex, Vec<UserId>> = BTreeMap::new();
    for r in requests {
        for &tile in &r.tiles {
            owners.entry(tile).or_default().push(r.user);
        }
    }

    let mut groups: BTreeMap<Vec<UserId>, BTreeSet<TileIndex>> = BTreeMap::new();
    for (tile, mut users) in owners {
        users.sort_unstable();
        groups.entry(users).or_default().insert(tile);
    }

    Ok(Partition {
        groups: groups
            .into_iter()
            .map(|(users, tiles)| TileGroup { users, tiles })
            .collect(),
    })
}

/// Kind of multicast opportunity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpportunityKind {
    /// Identical requirements.
    Natural,
    /// Overlapping windows `[r_k, r_k + delta]`.
    Relative,
    /// Any level at or above every requirement, lower users transcode down.
    Transcoding,
}

/// Quality levels that can be multicast once to serve every requirement in `requirements`.
pub fn shared_levels(requirements: &[u32], delta: u32, levels: u32, kind: OpportunityKind) -> BTreeSet<u32> {
    let mut lo = 1;
    let mut hi = levels;
    for &r in requirements {
        let (a, b) = match kind {
            OpportunityKind::Natural => (r, r),
            OpportunityKind::Relative => (r, r.saturating_add(delta)),
            OpportunityKind::Transcoding => (r, levels),
        };
        lo = lo.max(a);
        hi = hi.min(b);
    }
    (lo..=hi).collect()
}
