//! CSV and JSON interchange files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use msms_core::metrics::Track;
use msms_core::numeric::normalize_log_weights;
use msms_core::simulator::TruthTrack;
use msms_core::smoother::{GlmbPosterior, PosteriorStatistics};
use msms_core::types::{AssociationHistory, GlmbComponent, Label, MeasurementFrame, TrackRecord};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        io_err(path, e)
    } else {
        CliError::Config(format!("{}: {e}", path.display()))
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Position `[x, y, z]` of a `[p, v]`-per-axis state.
pub fn position(state: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(state.len() / 2, |a, _| state[2 * a])
}

#[derive(Debug, Serialize, Deserialize)]
struct StateRow {
    label_s: usize,
    label_i: usize,
    time: usize,
    x: f64,
    y: f64,
    z: f64,
    vx: f64,
    vy: f64,
    vz: f64,
}

impl StateRow {
    fn new(label: Label, time: usize, s: &DVector<f64>) -> Self {
        StateRow {
            label_s: label.birth_time,
            label_i: label.birth_index,
            time,
            x: s[0],
            y: s[2],
            z: s[4],
            vx: s[1],
            vy: s[3],
            vz: s[5],
        }
    }

    fn label(&self) -> Label {
        Label::new(self.label_s, self.label_i)
    }

    fn state(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.x, self.vx, self.y, self.vy, self.z, self.vz])
    }
}

pub fn write_truth(path: &Path, truth: &[TruthTrack]) -> Result<(), CliError> {
    let rows = truth.iter().flat_map(|t| {
        t.states
            .iter()
            .enumerate()
            .map(move |(i, s)| StateRow::new(t.label, t.start + i, s))
    });
    write_rows(path, rows)
}

/// Position tracks keyed by label.
pub fn read_truth(path: &Path) -> Result<BTreeMap<Label, Track>, CliError> {
    let mut out: BTreeMap<Label, Track> = BTreeMap::new();
    for row in read_rows::<StateRow>(path)? {
        out.entry(row.label())
            .or_default()
            .insert(row.time, position(&row.state()));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasurementRow {
    time: usize,
    sensor: usize,
    idx: usize,
    x: f64,
    y: f64,
    z: f64,
}

pub fn write_measurements(path: &Path, frames: &[MeasurementFrame]) -> Result<(), CliError> {
    let rows = frames.iter().enumerate().flat_map(|(j, f)| {
        (0..f.sensor_count()).flat_map(move |v| {
            f.sensor(v).iter().enumerate().map(move |(i, z)| MeasurementRow {
                time: j + 1,
                sensor: v + 1,
                idx: i + 1,
                x: z[0],
                y: z[1],
                z: z[2],
            })
        })
    });
    write_rows(path, rows)
}

/// Frames for scans `1..=scans` from `sensors` sensors. Indices must run
/// `1, 2, ...` within each (time, sensor) pair.
pub fn read_measurements(path: &Path, scans: usize, sensors: usize) -> Result<Vec<MeasurementFrame>, CliError> {
    let mut sets = vec![vec![Vec::new(); sensors]; scans];
    for row in read_rows::<MeasurementRow>(path)? {
        let bad = |what: String| CliError::Config(format!("{}: {what}", path.display()));
        if row.time == 0 || row.time > scans {
            return Err(bad(format!("time {} outside 1..={scans}", row.time)));
        }
        if row.sensor == 0 || row.sensor > sensors {
            return Err(bad(format!("sensor {} outside 1..={sensors}", row.sensor)));
        }
        let set: &mut Vec<DVector<f64>> = &mut sets[row.time - 1][row.sensor - 1];
        if row.idx != set.len() + 1 {
            return Err(bad(format!(
                "time {} sensor {}: index {} out of sequence",
                row.time, row.sensor, row.idx
            )));
        }
        set.push(DVector::from_vec(vec![row.x, row.y, row.z]));
    }
    Ok(sets.into_iter().map(MeasurementFrame::new).collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct EstimateRow {
    run_id: u64,
    label_s: usize,
    label_i: usize,
    time: usize,
    x: f64,
    y: f64,
    z: f64,
    vx: f64,
    vy: f64,
    vz: f64,
}

/// One estimated state of one label at one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatePoint {
    pub label: Label,
    pub time: usize,
    pub state: DVector<f64>,
}

pub fn write_estimates(path: &Path, run_id: u64, points: &[EstimatePoint]) -> Result<(), CliError> {
    let rows = points.iter().map(|p| {
        let r = StateRow::new(p.label, p.time, &p.state);
        EstimateRow {
            run_id,
            label_s: r.label_s,
            label_i: r.label_i,
            time: r.time,
            x: r.x,
            y: r.y,
            z: r.z,
            vx: r.vx,
            vy: r.vy,
            vz: r.vz,
        }
    });
    write_rows(path, rows)
}

/// Position tracks per run, keyed by label within each run.
pub fn read_estimates(path: &Path) -> Result<BTreeMap<u64, BTreeMap<Label, Track>>, CliError> {
    let mut out: BTreeMap<u64, BTreeMap<Label, Track>> = BTreeMap::new();
    for row in read_rows::<EstimateRow>(path)? {
        let s = DVector::from_vec(vec![row.x, row.y, row.z]);
        out.entry(row.run_id)
            .or_default()
            .entry(Label::new(row.label_s, row.label_i))
            .or_default()
            .insert(row.time, s);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct ErrorRow {
    pub run_id: u64,
    pub method: String,
    pub time: usize,
    pub ospa: f64,
    pub ospa2: f64,
}

pub fn write_errors(path: &Path, rows: &[ErrorRow]) -> Result<(), CliError> {
    write_rows(path, rows)
}

#[derive(Debug, Serialize)]
struct StatRow {
    statistic: &'static str,
    time: Option<usize>,
    value: usize,
    probability: f64,
}

pub fn write_stats(path: &Path, stats: &PosteriorStatistics) -> Result<(), CliError> {
    let mut rows = Vec::new();
    let mut push = |statistic, time, dist: &BTreeMap<usize, f64>| {
        for (&value, &probability) in dist {
            rows.push(StatRow {
                statistic,
                time,
                value,
                probability,
            });
        }
    };
    push("cardinality", None, &stats.cardinality);
    for (u, d) in stats.births.iter().enumerate() {
        push("births", Some(u + 1), d);
    }
    for (u, d) in stats.deaths.iter().enumerate() {
        push("deaths", Some(u + 1), d);
    }
    push("length", None, &stats.lengths);
    write_rows(path, rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelSpan {
    label: Label,
    s: usize,
    t: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ComponentDump {
    log_weight: f64,
    history: Vec<TrackRecord>,
    labels: Vec<LabelSpan>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PosteriorDump {
    k: usize,
    sensors: usize,
    components: Vec<ComponentDump>,
}

pub fn write_posterior(path: &Path, post: &GlmbPosterior, sensors: usize) -> Result<(), CliError> {
    let dump = PosteriorDump {
        k: post.scans,
        sensors,
        components: post
            .components
            .iter()
            .map(|c| {
                let history = c.history.tracks();
                let labels = history
                    .iter()
                    .map(|r| LabelSpan {
                        label: r.label,
                        s: r.label.birth_time,
                        t: r.label.birth_time + r.assocs.len() - 1,
                    })
                    .collect();
                ComponentDump {
                    log_weight: c.log_weight,
                    history,
                    labels,
                }
            })
            .collect(),
    };
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &dump).map_err(|e| io_err(path, e))?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Histories and normalized weights; trajectory densities are not stored,
/// so the components carry none.
pub fn read_posterior(path: &Path) -> Result<GlmbPosterior, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let dump: PosteriorDump =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let components = dump
        .components
        .into_iter()
        .map(|c| {
            let history = AssociationHistory::from_tracks(dump.sensors, dump.k, &c.history)?;
            Ok(GlmbComponent {
                history,
                log_weight: c.log_weight,
                trajectories: BTreeMap::new(),
            })
        })
        .collect::<msms_core::Result<Vec<_>>>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let log_w: Vec<f64> = components.iter().map(|c| c.log_weight).collect();
    Ok(GlmbPosterior {
        scans: dump.k,
        weights: normalize_log_weights(&log_w),
        components,
    })
}
