//! highD-format ingestion: per-frame track records and their reduction to
//! i.i.d. state-action pairs.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sample::{Action, ActionDims, LaneContext, Sample, StateFeatures, DEFAULT_TIME_CAP};
use crate::error::{Error, Result};

/// One row of a highD tracks file (the columns this pipeline consumes;
/// unknown extra columns are ignored).
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub frame: u64,
    pub id: u64,
    pub x: f64,
    pub lane_id: i64,
    pub x_velocity: f64,
    pub y_velocity: f64,
    pub x_acceleration: f64,
    pub y_acceleration: f64,
    pub dhw: f64,
    pub thw: f64,
    pub ttc: f64,
    /// 0 means no preceding vehicle.
    pub preceding_id: u64,
}

const REQUIRED_COLUMNS: [&str; 12] = [
    "frame",
    "id",
    "x",
    "laneId",
    "xVelocity",
    "yVelocity",
    "xAcceleration",
    "yAcceleration",
    "dhw",
    "thw",
    "ttc",
    "precedingId",
];

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn column_indices(
    reader: &mut csv::Reader<std::fs::File>,
    path: &Path,
    names: &[&str],
) -> Result<Vec<usize>> {
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.display().to_string(),
            source: e,
        })?
        .clone();
    names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::MissingColumn {
                    column: (*name).to_string(),
                    path: path.display().to_string(),
                })
        })
        .collect()
}

fn parse_cell<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    column: &str,
    row: usize,
    path: &Path,
) -> Result<T> {
    let cell = record.get(idx).unwrap_or("");
    cell.parse().map_err(|_| Error::MalformedCell {
        path: path.display().to_string(),
        row,
        column: column.to_string(),
        cell: cell.to_string(),
    })
}

/// Reads a highD tracks file plus its recording meta file. Returns the track
/// records in file order and the recording frame rate (Hz).
pub fn parse_highd(tracks_path: &Path, meta_path: &Path) -> Result<(Vec<TrackRecord>, f64)> {
    let mut reader = open_reader(tracks_path)?;
    let idx = column_indices(&mut reader, tracks_path, &REQUIRED_COLUMNS)?;
    let mut records = Vec::new();
    for (row_no, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Csv {
            path: tracks_path.display().to_string(),
            source: e,
        })?;
        let row_no = row_no + 1; // 1-based data rows for diagnostics
        let f = |k: usize| -> Result<f64> {
            parse_cell(&row, idx[k], REQUIRED_COLUMNS[k], row_no, tracks_path)
        };
        let rec = TrackRecord {
            frame: parse_cell(&row, idx[0], "frame", row_no, tracks_path)?,
            id: parse_cell(&row, idx[1], "id", row_no, tracks_path)?,
            x: f(2)?,
            lane_id: parse_cell(&row, idx[3], "laneId", row_no, tracks_path)?,
            x_velocity: f(4)?,
            y_velocity: f(5)?,
            x_acceleration: f(6)?,
            y_acceleration: f(7)?,
            dhw: f(8)?,
            thw: f(9)?,
            ttc: f(10)?,
            preceding_id: parse_cell(&row, idx[11], "precedingId", row_no, tracks_path)?,
        };
        records.push(rec);
    }

    let mut meta_reader = open_reader(meta_path)?;
    let meta_idx = column_indices(&mut meta_reader, meta_path, &["frameRate"])?;
    let first = meta_reader
        .records()
        .next()
        .ok_or(Error::EmptyInput {
            context: "recording meta file",
        })?
        .map_err(|e| Error::Csv {
            path: meta_path.display().to_string(),
            source: e,
        })?;
    let frame_rate: f64 = parse_cell(&first, meta_idx[0], "frameRate", 1, meta_path)?;

    Ok((records, frame_rate))
}

/// Knobs for [`extract_pairs`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub dims: ActionDims,
    /// Keep only frames with `frame % stride == 0` (1 = keep all). Adjacent
    /// 25 Hz frames are strongly dependent; the stride thins them.
    pub frame_stride: u64,
    /// Cap for thw/ttc; invalid (nonpositive) ttc maps here.
    pub time_cap: f64,
}

impl ExtractOptions {
    pub fn new(dims: ActionDims) -> Self {
        ExtractOptions {
            dims,
            frame_stride: 1,
            time_cap: DEFAULT_TIME_CAP,
        }
    }
}

/// Counts of records that produced no pair.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    /// precedingId != 0 but no leader record exists at that frame.
    pub dangling_leader: usize,
    /// Non-finite or nonpositive dhw, non-finite thw, or non-finite action.
    pub invalid_values: usize,
    /// Records skipped by the frame stride.
    pub stride_skipped: usize,
}

/// Turns one recording's track records into state-action pairs. A record
/// yields a pair when it has a preceding vehicle, finite positive dhw and
/// finite thw, and (for the frame) a leader record to look up the leader
/// velocity from. Invalid ttc (nonpositive, the highD no-collision-course
/// convention) maps to the cap.
pub fn extract_pairs(
    records: &[TrackRecord],
    opts: &ExtractOptions,
) -> Result<(Vec<Sample>, SkipReport)> {
    if opts.frame_stride == 0 {
        return Err(Error::invalid("extract_pairs", "frame_stride must be >= 1"));
    }
    if !(opts.time_cap > 0.0) {
        return Err(Error::invalid("extract_pairs", "time_cap must be positive"));
    }
    let mut by_frame_id: HashMap<(u64, u64), usize> = HashMap::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        by_frame_id.insert((r.frame, r.id), i);
    }
    let lane_inventory: BTreeSet<i64> = records.iter().map(|r| r.lane_id).collect();

    let mut pairs = Vec::new();
    let mut report = SkipReport::default();
    for r in records {
        if r.preceding_id == 0 {
            continue;
        }
        if r.frame % opts.frame_stride != 0 {
            report.stride_skipped += 1;
            continue;
        }
        let Some(&leader_idx) = by_frame_id.get(&(r.frame, r.preceding_id)) else {
            report.dangling_leader += 1;
            continue;
        };
        let leader = &records[leader_idx];
        let lateral = matches!(opts.dims, ActionDims::Two).then_some(r.y_acceleration);
        let finite = r.dhw.is_finite()
            && r.dhw > 0.0
            && r.thw.is_finite()
            && r.x_acceleration.is_finite()
            && lateral.map_or(true, f64::is_finite);
        if !finite {
            report.invalid_values += 1;
            continue;
        }
        let ttc = if r.ttc.is_finite() && r.ttc > 0.0 {
            r.ttc.min(opts.time_cap)
        } else {
            opts.time_cap
        };
        let lanes = matches!(opts.dims, ActionDims::Two).then(|| LaneContext {
            left: lane_inventory.range(..r.lane_id).count() as u32,
            right: lane_inventory.range(r.lane_id + 1..).count() as u32,
        });
        pairs.push(Sample {
            state: StateFeatures {
                dhw: r.dhw,
                thw: r.thw.min(opts.time_cap),
                ttc,
                follower_velocity: r.x_velocity.abs(),
                leader_velocity: leader.x_velocity.abs(),
                lanes,
            },
            action: Action {
                longitudinal: r.x_acceleration,
                lateral,
            },
        });
    }
    Ok((pairs, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    const HEADER: &str = "frame,id,x,laneId,xVelocity,yVelocity,xAcceleration,yAcceleration,dhw,thw,ttc,precedingId\n";

    #[test]
    fn empty_data_section_parses() {
        let dir = tempfile::tempdir().unwrap();
        let tracks = write_file(&dir, "tracks.csv", HEADER);
        let meta = write_file(&dir, "meta.csv", "id,frameRate\n1,25\n");
        let (records, rate) = parse_highd(&tracks, &meta).unwrap();
        assert!(records.is_empty());
        assert_eq!(rate, 25.0);
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let tracks = write_file(
            &dir,
            "tracks.csv",
            "frame,id,x,laneId,xVelocity,yVelocity,xAcceleration,yAcceleration,thw,ttc,precedingId\n",
        );
        let meta = write_file(&dir, "meta.csv", "frameRate\n25\n");
        let err = parse_highd(&tracks, &meta).unwrap_err();
        match err {
            Error::MissingColumn { column, .. } => assert_eq!(column, "dhw"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn malformed_cell_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let tracks = write_file(
            &dir,
            "tracks.csv",
            &format!("{HEADER}1,1,10.0,2,20.0,0.0,0.1,0.0,30.0,1.5,40.0,0\n2,1,10.8,2,oops,0.0,0.1,0.0,30.0,1.5,40.0,0\n"),
        );
        let meta = write_file(&dir, "meta.csv", "frameRate\n25\n");
        let err = parse_highd(&tracks, &meta).unwrap_err();
        match err {
            Error::MalformedCell { row, column, cell, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "xVelocity");
                assert_eq!(cell, "oops");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn no_preceding_vehicle_yields_no_pairs() {
        let records = vec![TrackRecord {
            frame: 0,
            id: 1,
            x: 0.0,
            lane_id: 2,
            x_velocity: 20.0,
            y_velocity: 0.0,
            x_acceleration: 0.3,
            y_acceleration: 0.0,
            dhw: 0.0,
            thw: 0.0,
            ttc: -1.0,
            preceding_id: 0,
        }];
        let (pairs, report) = extract_pairs(&records, &ExtractOptions::new(ActionDims::One)).unwrap();
        assert!(pairs.is_empty());
        assert_eq!(report, SkipReport::default());
    }

    #[test]
    fn invalid_ttc_maps_to_cap() {
        let records = vec![
            TrackRecord {
                frame: 0,
                id: 2,
                x: 50.0,
                lane_id: 2,
                x_velocity: 22.0,
                y_velocity: 0.0,
                x_acceleration: 0.0,
                y_acceleration: 0.0,
                dhw: 0.0,
                thw: 0.0,
                ttc: 0.0,
                preceding_id: 0,
            },
            TrackRecord {
                frame: 0,
                id: 1,
                x: 0.0,
                lane_id: 2,
                x_velocity: 20.0,
                y_velocity: 0.0,
                x_acceleration: 0.3,
                y_acceleration: 0.0,
                dhw: 45.0,
                thw: 2.25,
                ttc: -1.0,
                preceding_id: 2,
            },
        ];
        let (pairs, _) = extract_pairs(&records, &ExtractOptions::new(ActionDims::One)).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].state.ttc, 50.0);
        assert_eq!(pairs[0].state.leader_velocity, 22.0);
    }

    #[test]
    fn dangling_leader_is_counted() {
        let records = vec![TrackRecord {
            frame: 3,
            id: 1,
            x: 0.0,
            lane_id: 2,
            x_velocity: 20.0,
            y_velocity: 0.0,
            x_acceleration: 0.3,
            y_acceleration: 0.0,
            dhw: 45.0,
            thw: 2.25,
            ttc: 9.0,
            preceding_id: 77,
        }];
        let (pairs, report) = extract_pairs(&records, &ExtractOptions::new(ActionDims::One)).unwrap();
        assert!(pairs.is_empty());
        assert_eq!(report.dangling_leader, 1);
    }
}
