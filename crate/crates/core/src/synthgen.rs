//! Synthetic trajectories with known underlying paths.
//!
//! Each trajectory heads for one of a few hubs along a quadratic Bezier curve
//! through a random control point, is sampled at equal arc-length steps
//! (`speed · interval`), and is perturbed by Gaussian noise.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::trajdata::{GridSpec, Trajectory, VisitRecord};
use crate::{exec, rng, Error, Result};

const HUB_STREAM: u64 = 0x6875_6273;
const PATH_STREAM: u64 = 0x7061_7468;
/// Polyline resolution used to measure and walk each Bezier curve.
const CURVE_SEGMENTS: usize = 256;
const MAX_PATH_ATTEMPTS: usize = 200;
const MAX_HUB_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_trajectories: usize,
    /// `[min_lon, min_lat, max_lon, max_lat]` in degrees.
    pub bbox: [f64; 4],
    pub cell_size_meters: f64,
    pub n_anchor_hubs: usize,
    pub min_hub_separation_meters: f64,
    /// Inclusive range of records per trajectory.
    pub points: [usize; 2],
    /// Range of travel speeds, meters per minute.
    pub speed: [f64; 2],
    pub interval_secs: i64,
    pub noise_meters: f64,
    /// Largest sideways offset of the control point, relative to the chord.
    pub curvature: f64,
    /// Trips start uniformly within this many days of `start_epoch`.
    pub window_days: f64,
    pub start_epoch: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_trajectories: 2000,
            bbox: [104.00, 30.62, 104.10, 30.71],
            cell_size_meters: 250.0,
            n_anchor_hubs: 12,
            min_hub_separation_meters: 1200.0,
            points: [20, 40],
            speed: [60.0, 180.0],
            interval_secs: 60,
            noise_meters: 20.0,
            curvature: 0.5,
            window_days: 7.0,
            start_epoch: 1_541_001_600,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn grid(&self) -> Result<GridSpec> {
        let [a, b, c, d] = self.bbox;
        GridSpec::new(a, b, c, d, self.cell_size_meters)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        let fail = |m: String| Err(Error::Config(m));
        if self.n_trajectories == 0 || self.n_anchor_hubs == 0 {
            return fail("n_trajectories and n_anchor_hubs must be positive".into());
        }
        if self.points[0] < 2 || self.points[0] > self.points[1] {
            return fail(format!("points range {:?} must be non-empty with minimum ≥ 2", self.points));
        }
        if !(self.speed[0] > 0.0 && self.speed[0] <= self.speed[1]) {
            return fail(format!("speed range {:?} must be positive and non-empty", self.speed));
        }
        if self.interval_secs <= 0 {
            return fail("interval_secs must be positive".into());
        }
        if !(self.noise_meters >= 0.0) || !(self.curvature >= 0.0) || !(self.window_days >= 0.0) {
            return fail("noise, curvature and window must be non-negative".into());
        }
        Ok(())
    }
}

/// The curve a trajectory was sampled from, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub hub_id: usize,
    pub start: (f64, f64),
    pub control: (f64, f64),
    pub hub: (f64, f64),
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub trajectories: Vec<Trajectory>,
    pub truth: Vec<GroundTruth>,
    pub hubs: Vec<(f64, f64)>,
    pub grid: GridSpec,
}

/// Planar frame in meters anchored at the box's south-west corner.
#[derive(Clone, Copy)]
struct Frame {
    grid: GridSpec,
    mx: f64,
    my: f64,
}

impl Frame {
    fn new(grid: GridSpec) -> Self {
        Frame {
            grid,
            mx: grid.meters_per_degree_lon(),
            my: grid.meters_per_degree_lat(),
        }
    }

    fn width(&self) -> f64 {
        (self.grid.max_lon - self.grid.min_lon) * self.mx
    }

    fn height(&self) -> f64 {
        (self.grid.max_lat - self.grid.min_lat) * self.my
    }

    fn contains(&self, (x, y): (f64, f64)) -> bool {
        (0.0..=self.width()).contains(&x) && (0.0..=self.height()).contains(&y)
    }

    fn to_degrees(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (self.grid.min_lon + x / self.mx, self.grid.min_lat + y / self.my)
    }
}

fn bezier(p0: (f64, f64), p1: (f64, f64), p2: (f64, f64), u: f64) -> (f64, f64) {
    let a = (1.0 - u) * (1.0 - u);
    let b = 2.0 * (1.0 - u) * u;
    let c = u * u;
    (a * p0.0 + b * p1.0 + c * p2.0, a * p0.1 + b * p1.1 + c * p2.1)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Points at arc lengths `0, step, 2·step, …` along the polyline through
/// `vertices`. The last requested point may fall at the polyline's end.
fn walk(vertices: &[(f64, f64)], step: f64, n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    let mut covered = 0.0;
    for k in 0..n {
        let target = step * k as f64;
        loop {
            let len = dist(vertices[seg], vertices[seg + 1]);
            if covered + len >= target || seg + 2 == vertices.len() {
                let f = if len > 0.0 { ((target - covered) / len).clamp(0.0, 1.0) } else { 1.0 };
                let (a, b) = (vertices[seg], vertices[seg + 1]);
                out.push((a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1)));
                break;
            }
            covered += len;
            seg += 1;
        }
    }
    out
}

fn place_hubs<R: Rng>(cfg: &SynthConfig, frame: &Frame, rng: &mut R) -> Result<Vec<(f64, f64)>> {
    let (w, h) = (frame.width(), frame.height());
    let (mx, my) = (0.1 * w, 0.1 * h);
    let mut hubs: Vec<(f64, f64)> = Vec::with_capacity(cfg.n_anchor_hubs);
    let mut attempts = 0;
    while hubs.len() < cfg.n_anchor_hubs {
        attempts += 1;
        if attempts > MAX_HUB_ATTEMPTS {
            return Err(Error::Config(format!(
                "bounding box too small to separate {} hubs by {} m",
                cfg.n_anchor_hubs, cfg.min_hub_separation_meters
            )));
        }
        let p = (rng.random_range(mx..=w - mx), rng.random_range(my..=h - my));
        if hubs.iter().all(|&q| dist(p, q) >= cfg.min_hub_separation_meters) {
            hubs.push(p);
        }
    }
    Ok(hubs)
}

struct Drawn {
    records: Vec<VisitRecord>,
    truth: GroundTruth,
}

fn draw_trajectory<R: Rng>(cfg: &SynthConfig, frame: &Frame, hubs: &[(f64, f64)], rng: &mut R) -> Result<Drawn> {
    let hub_id = rng.random_range(0..hubs.len());
    let hub = hubs[hub_id];
    let n = rng.random_range(cfg.points[0]..=cfg.points[1]);
    let speed = rng.random_range(cfg.speed[0]..=cfg.speed[1]);
    let step = speed * cfg.interval_secs as f64 / 60.0;
    let length = step * (n - 1) as f64;

    for _ in 0..MAX_PATH_ATTEMPTS {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let bend = rng.random_range(-cfg.curvature..=cfg.curvature);
        // Shape with unit chord from the origin; the polyline length fixes the scale.
        let (ux, uy) = (theta.cos(), theta.sin());
        let unit_ctrl = (0.5 * ux - bend * uy, 0.5 * uy + bend * ux);
        let unit: Vec<(f64, f64)> = (0..=CURVE_SEGMENTS)
            .map(|i| bezier((0.0, 0.0), unit_ctrl, (ux, uy), i as f64 / CURVE_SEGMENTS as f64))
            .collect();
        let unit_len: f64 = unit.windows(2).map(|w| dist(w[0], w[1])).sum();
        let scale = length / unit_len;
        // Curve runs from the start to the hub: place the unit shape so that its end is the hub.
        let vertices: Vec<(f64, f64)> = unit
            .iter()
            .map(|&(x, y)| (hub.0 + scale * (x - ux), hub.1 + scale * (y - uy)))
            .collect();
        if !vertices.iter().all(|&p| frame.contains(p)) {
            continue;
        }
        let mut points = walk(&vertices, step, n);
        if let Some(last) = points.last_mut() {
            *last = hub;
        }
        if cfg.noise_meters > 0.0 {
            let noise = Normal::new(0.0, cfg.noise_meters).expect("finite sigma");
            for p in &mut points {
                p.0 += noise.sample(rng);
                p.1 += noise.sample(rng);
            }
        }
        let window = (cfg.window_days * 86_400.0) as i64;
        let t0 = cfg.start_epoch + if window > 0 { rng.random_range(0..window) } else { 0 };
        let records = points
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let (lon, lat) = frame.to_degrees(p);
                VisitRecord::new(frame.grid.assign(lon, lat), t0 + k as i64 * cfg.interval_secs, lon, lat)
            })
            .collect();
        let start = vertices[0];
        let control = (hub.0 + scale * (unit_ctrl.0 - ux), hub.1 + scale * (unit_ctrl.1 - uy));
        return Ok(Drawn {
            records,
            truth: GroundTruth {
                hub_id,
                start: frame.to_degrees(start),
                control: frame.to_degrees(control),
                hub: frame.to_degrees(hub),
                speed,
            },
        });
    }
    Err(Error::Config(format!(
        "could not fit a {length:.0} m path inside the bounding box; enlarge it or lower speeds/points"
    )))
}

/// Generates the dataset; identical configurations give bit-identical output
/// regardless of thread count.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let frame = Frame::new(grid);
    let hubs_m = place_hubs(cfg, &frame, &mut rng::derive(cfg.seed, &[HUB_STREAM]))?;
    let drawn = exec::map_indexed(cfg.n_trajectories, |i| {
        draw_trajectory(cfg, &frame, &hubs_m, &mut rng::derive(cfg.seed, &[PATH_STREAM, i as u64]))
    });
    let width = cfg.n_trajectories.to_string().len();
    let mut trajectories = Vec::with_capacity(cfg.n_trajectories);
    let mut truth = Vec::with_capacity(cfg.n_trajectories);
    for (i, d) in drawn.into_iter().enumerate() {
        let d = d?;
        trajectories.push(Trajectory::new(format!("s{i:0width$}"), d.records)?);
        truth.push(d.truth);
    }
    Ok(SynthDataset {
        trajectories,
        truth,
        hubs: hubs_m.iter().map(|&h| frame.to_degrees(h)).collect(),
        grid,
    })
}

impl SynthDataset {
    /// `traj_id,hub_id` rows.
    pub fn write_ground_truth(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(out, "traj_id,hub_id").map_err(io)?;
        for (t, g) in self.trajectories.iter().zip(&self.truth) {
            writeln!(out, "{},{}", t.id(), g.hub_id).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}
