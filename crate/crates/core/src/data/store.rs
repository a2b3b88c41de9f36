//! On-disk sample store: one columnar CSV per split plus a JSON manifest
//! carrying counts, seed, normalizer statistics, and pipeline reports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::highd::SkipReport;
use super::sample::{Action, ActionDims, LaneContext, Normalizer, Sample, StateFeatures};
use super::split::OversampleReport;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// Sidecar manifest written next to the split CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub dims: ActionDims,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub normalizer: Normalizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_report: Option<SkipReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oversample: Option<OversampleReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_stride: Option<u64>,
}

fn header(dims: ActionDims) -> &'static str {
    match dims {
        ActionDims::One => "dhw,thw,ttc,follower_velocity,leader_velocity,accel_longitudinal",
        ActionDims::Two => {
            "dhw,thw,ttc,follower_velocity,leader_velocity,lanes_left,lanes_right,accel_longitudinal,accel_lateral"
        }
    }
}

/// Writes one split as CSV. Floats are written in shortest round-trip form,
/// so identical inputs produce identical bytes and reads are lossless.
pub fn write_split_csv(path: &Path, samples: &[Sample], dims: ActionDims) -> Result<()> {
    let mut out = String::new();
    out.push_str(header(dims));
    out.push('\n');
    for s in samples {
        let st = &s.state;
        match dims {
            ActionDims::One => {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    st.dhw,
                    st.thw,
                    st.ttc,
                    st.follower_velocity,
                    st.leader_velocity,
                    s.action.longitudinal
                ));
            }
            ActionDims::Two => {
                let lanes = st.lanes.ok_or_else(|| {
                    Error::invalid("write_split_csv", "2D sample without lane context")
                })?;
                let lat = s.action.lateral.ok_or_else(|| {
                    Error::invalid("write_split_csv", "2D sample without lateral action")
                })?;
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    st.dhw,
                    st.thw,
                    st.ttc,
                    st.follower_velocity,
                    st.leader_velocity,
                    lanes.left,
                    lanes.right,
                    s.action.longitudinal,
                    lat
                ));
            }
        }
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a split CSV written by [`write_split_csv`].
pub fn read_split_csv(path: &Path, dims: ActionDims) -> Result<Vec<Sample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let expected = header(dims);
    {
        let got = reader.headers().map_err(|e| Error::Csv {
            path: path.display().to_string(),
            source: e,
        })?;
        let got_line = got.iter().collect::<Vec<_>>().join(",");
        if got_line != expected {
            return Err(Error::invalid(
                "read_split_csv",
                format!("unexpected header `{got_line}` (expected `{expected}`)"),
            ));
        }
    }
    let ncols = expected.split(',').count();
    let mut samples = Vec::new();
    for (row_no, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Csv {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut vals = Vec::with_capacity(ncols);
        for (col, cell) in row.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::MalformedCell {
                path: path.display().to_string(),
                row: row_no + 1,
                column: expected.split(',').nth(col).unwrap_or("?").to_string(),
                cell: cell.to_string(),
            })?;
            vals.push(v);
        }
        if vals.len() != ncols {
            return Err(Error::ShapeMismatch {
                context: "read_split_csv row",
                expected: ncols,
                actual: vals.len(),
            });
        }
        let (lanes, action) = match dims {
            ActionDims::One => (
                None,
                Action {
                    longitudinal: vals[5],
                    lateral: None,
                },
            ),
            ActionDims::Two => (
                Some(LaneContext {
                    left: vals[5] as u32,
                    right: vals[6] as u32,
                }),
                Action {
                    longitudinal: vals[7],
                    lateral: Some(vals[8]),
                },
            ),
        };
        samples.push(Sample {
            state: StateFeatures {
                dhw: vals[0],
                thw: vals[1],
                ttc: vals[2],
                follower_velocity: vals[3],
                leader_velocity: vals[4],
                lanes,
            },
            action,
        });
    }
    Ok(samples)
}

/// Serializes any serde value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SyntheticSpec};

    #[test]
    fn split_csv_roundtrip_1d() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synth_generate(&SyntheticSpec::default(), 64, 11).unwrap();
        let path = dir.path().join("train.csv");
        write_split_csv(&path, &samples, ActionDims::One).unwrap();
        let back = read_split_csv(&path, ActionDims::One).unwrap();
        assert_eq!(samples, back);

        // Identical bytes on rewrite.
        let bytes1 = std::fs::read(&path).unwrap();
        write_split_csv(&path, &samples, ActionDims::One).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn split_csv_roundtrip_2d() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<Sample> = synth_generate(&SyntheticSpec::default(), 16, 3)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, mut s)| {
                s.state.lanes = Some(LaneContext {
                    left: (i % 3) as u32,
                    right: (i % 2) as u32,
                });
                s.action.lateral = Some(0.01 * i as f64 - 0.05);
                s
            })
            .collect();
        let path = dir.path().join("test.csv");
        write_split_csv(&path, &samples, ActionDims::Two).unwrap();
        let back = read_split_csv(&path, ActionDims::Two).unwrap();
        assert_eq!(samples, back);
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_split_csv(&path, ActionDims::One).is_err());
    }
}
