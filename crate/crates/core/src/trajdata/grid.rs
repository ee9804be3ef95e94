use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Meters per degree of latitude in the equirectangular approximation.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

/// Square-cell grid over a bounding box. Degrees are converted to meters
/// equirectangularly at the box's mid-latitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
    #[serde(default = "default_cell_size")]
    pub cell_size_meters: f64,
}

fn default_cell_size() -> f64 {
    250.0
}

impl GridSpec {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64, cell_size_meters: f64) -> Result<Self> {
        let g = GridSpec {
            min_lon,
            min_lat,
            max_lon,
            max_lat,
            cell_size_meters,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.min_lon, self.min_lat, self.max_lon, self.max_lat, self.cell_size_meters]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.max_lon <= self.min_lon || self.max_lat <= self.min_lat {
            return Err(Error::Config(format!("degenerate grid bounding box {self:?}")));
        }
        if self.cell_size_meters <= 0.0 {
            return Err(Error::Config("grid cell size must be positive".into()));
        }
        Ok(())
    }

    /// Smallest box covering every point, padded by `margin_degrees`.
    pub fn covering(
        points: impl IntoIterator<Item = (f64, f64)>,
        cell_size_meters: f64,
        margin_degrees: f64,
    ) -> Result<Self> {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for (x, y) in points {
            b[0] = b[0].min(x);
            b[1] = b[1].min(y);
            b[2] = b[2].max(x);
            b[3] = b[3].max(y);
        }
        GridSpec::new(
            b[0] - margin_degrees,
            b[1] - margin_degrees,
            b[2] + margin_degrees,
            b[3] + margin_degrees,
            cell_size_meters,
        )
    }

    pub fn meters_per_degree_lon(&self) -> f64 {
        let mid = 0.5 * (self.min_lat + self.max_lat);
        METERS_PER_DEGREE * mid.to_radians().cos()
    }

    pub fn meters_per_degree_lat(&self) -> f64 {
        METERS_PER_DEGREE
    }

    pub fn n_cols(&self) -> usize {
        let w = (self.max_lon - self.min_lon) * self.meters_per_degree_lon();
        ((w / self.cell_size_meters).ceil() as usize).max(1)
    }

    pub fn n_rows(&self) -> usize {
        let h = (self.max_lat - self.min_lat) * self.meters_per_degree_lat();
        ((h / self.cell_size_meters).ceil() as usize).max(1)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cols() * self.n_rows()
    }

    /// (column, row) of a coordinate; out-of-box points clamp to the border cell.
    pub fn cell(&self, lon: f64, lat: f64) -> (usize, usize) {
        let clamp = |v: f64, n: usize| {
            if v.is_nan() || v < 0.0 {
                0
            } else {
                (v.floor() as usize).min(n - 1)
            }
        };
        let cx = (lon - self.min_lon) * self.meters_per_degree_lon() / self.cell_size_meters;
        let cy = (lat - self.min_lat) * self.meters_per_degree_lat() / self.cell_size_meters;
        (clamp(cx, self.n_cols()), clamp(cy, self.n_rows()))
    }

    /// Location index `row·n_cols + col`.
    pub fn assign(&self, lon: f64, lat: f64) -> usize {
        let (c, r) = self.cell(lon, lat);
        r * self.n_cols() + c
    }

    /// Geographic centre of a cell index.
    pub fn cell_center(&self, index: usize) -> (f64, f64) {
        let (r, c) = (index / self.n_cols(), index % self.n_cols());
        let lon = self.min_lon + (c as f64 + 0.5) * self.cell_size_meters / self.meters_per_degree_lon();
        let lat = self.min_lat + (r as f64 + 0.5) * self.cell_size_meters / self.meters_per_degree_lat();
        (lon, lat)
    }

    /// Chebyshev distance in cells between two indices.
    pub fn cell_distance(&self, a: usize, b: usize) -> usize {
        let n = self.n_cols();
        let (ra, ca) = ((a / n) as isize, (a % n) as isize);
        let (rb, cb) = ((b / n) as isize, (b % n) as isize);
        (ra - rb).unsigned_abs().max((ca - cb).unsigned_abs())
    }
}
