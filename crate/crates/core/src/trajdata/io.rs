use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Trajectory, VisitRecord};
use crate::{Error, Result};

/// Parsed trajectories plus the bookkeeping of rows that had to be dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseReport {
    pub trajectories: Vec<Trajectory>,
    pub total_rows: usize,
    pub skipped_rows: usize,
    /// Ids whose rows collapsed to fewer than two records.
    pub dropped_short: usize,
    /// Whether the file carried a `loc_index` column.
    pub has_locations: bool,
}

struct Columns {
    id: usize,
    timestamp: usize,
    lon: usize,
    lat: usize,
    loc: Option<usize>,
}

fn columns(headers: &csv::StringRecord) -> Result<Columns> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let need = |name: &str| find(name).ok_or_else(|| Error::Data(format!("missing column `{name}`")));
    Ok(Columns {
        id: need("traj_id")?,
        timestamp: need("timestamp")?,
        lon: need("lon")?,
        lat: need("lat")?,
        loc: find("loc_index"),
    })
}

fn parse_row(row: &csv::StringRecord, cols: &Columns) -> Option<(String, VisitRecord)> {
    let field = |i: usize| row.get(i).map(str::trim);
    let id = field(cols.id).filter(|s| !s.is_empty())?.to_owned();
    let timestamp: i64 = field(cols.timestamp)?.parse().ok()?;
    let lon: f64 = field(cols.lon)?.parse().ok()?;
    let lat: f64 = field(cols.lat)?.parse().ok()?;
    if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
        return None;
    }
    let loc = match cols.loc {
        Some(i) => field(i)?.parse().ok()?,
        None => 0,
    };
    Some((id, VisitRecord::new(loc, timestamp, lon, lat)))
}

/// Reads `traj_id,timestamp,lon,lat[,loc_index]` rows from any reader.
///
/// Records are grouped by id (in order of first appearance) and sorted by
/// timestamp. Malformed rows are skipped and counted; more than half of the
/// rows being malformed is a hard failure.
pub fn read_trajectories<R: Read>(reader: R) -> Result<ParseReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("unreadable header: {e}")))?
        .clone();
    let cols = columns(&headers)?;

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<VisitRecord>> = HashMap::new();
    let (mut total, mut skipped) = (0usize, 0usize);
    let mut row = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                total += 1;
                match parse_row(&row, &cols) {
                    Some((id, rec)) => {
                        groups
                            .entry(id.clone())
                            .or_insert_with(|| {
                                order.push(id);
                                Vec::new()
                            })
                            .push(rec);
                    }
                    None => skipped += 1,
                }
            }
            Err(e) if e.is_io_error() => return Err(Error::Data(format!("read failure: {e}"))),
            Err(_) => {
                total += 1;
                skipped += 1;
            }
        }
    }
    if total > 0 && skipped * 2 > total {
        return Err(Error::Data(format!("{skipped} of {total} rows are malformed")));
    }

    let mut trajectories = Vec::with_capacity(order.len());
    let mut dropped_short = 0;
    for id in order {
        let mut recs = groups.remove(&id).unwrap_or_default();
        recs.sort_by_key(|r| r.timestamp);
        if recs.len() < 2 {
            dropped_short += 1;
            continue;
        }
        trajectories.push(Trajectory::new(id, recs)?);
    }
    Ok(ParseReport {
        trajectories,
        total_rows: total,
        skipped_rows: skipped,
        dropped_short,
        has_locations: cols.loc.is_some(),
    })
}

pub fn parse_trajectories(path: &Path) -> Result<ParseReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trajectories(std::io::BufReader::new(file))
}

/// Writes the CSV format read by [`read_trajectories`]. Floats use the
/// shortest representation that round-trips exactly.
pub fn write_trajectories<W: Write>(mut out: W, trajectories: &[Trajectory], with_locations: bool) -> std::io::Result<()> {
    if with_locations {
        writeln!(out, "traj_id,timestamp,lon,lat,loc_index")?;
    } else {
        writeln!(out, "traj_id,timestamp,lon,lat")?;
    }
    for t in trajectories {
        for r in t.records() {
            if with_locations {
                writeln!(out, "{},{},{},{},{}", t.id(), r.timestamp, r.lon, r.lat, r.loc)?;
            } else {
                writeln!(out, "{},{},{},{}", t.id(), r.timestamp, r.lon, r.lat)?;
            }
        }
    }
    out.flush()
}
