//! The four commands. Each writes fixed file names into an output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use msms_core::metrics::{error_curve, OspaParams, Track};
use msms_core::simulator::{generate_measurements, generate_truth, TruthTrack};
use msms_core::smoother::{
    batch, estimate, filter_estimate, run_recursive, statistics, EstimateMode, GlmbPosterior,
};
use msms_core::types::MeasurementFrame;
use msms_core::weights::WeightContext;

use crate::config::{Config, Mode};
use crate::io::{self, position, ErrorRow, EstimatePoint};
use crate::CliError;

pub const TRUTH_FILE: &str = "truth.csv";
pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const POSTERIOR_FILE: &str = "posterior.json";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const ERRORS_FILE: &str = "errors.csv";
pub const STATS_FILE: &str = "stats.csv";

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Truth and measurements of the configured scenario.
pub fn simulate_scenario(cfg: &Config) -> Result<(Vec<TruthTrack>, Vec<MeasurementFrame>), CliError> {
    let truth = generate_truth(&cfg.scenario)?;
    let frames = generate_measurements(&truth, &cfg.scenario)?;
    Ok((truth, frames))
}

pub fn simulate(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let (truth, frames) = simulate_scenario(cfg)?;
    ensure_dir(out)?;
    io::write_truth(&out.join(TRUTH_FILE), &truth)?;
    io::write_measurements(&out.join(MEASUREMENTS_FILE), &frames)
}

pub struct TrackOutput {
    pub posterior: GlmbPosterior,
    pub estimates: Vec<EstimatePoint>,
}

/// Runs the configured tracker on `frames`.
///
/// Batch mode estimates from the posterior over all scans, with smoothed or
/// filtered means. Recursive mode with smoothing does the same from the
/// final smoothing-while-filtering posterior; without smoothing it runs the
/// filter and reports each scan's estimate from that scan's posterior.
pub fn run_tracker(cfg: &Config, frames: Vec<MeasurementFrame>) -> Result<TrackOutput, CliError> {
    let model = Arc::new(cfg.scenario.tracking_model()?);
    let ctx = WeightContext::new(model.clone(), frames)?;
    let seed = cfg.scenario.seed;
    let t = &cfg.tracker;
    let mode = if t.smooth {
        EstimateMode::Smoothed
    } else {
        EstimateMode::Filtered
    };
    let from_posterior = |post: &GlmbPosterior| -> Result<Vec<EstimatePoint>, CliError> {
        Ok(estimate(post, mode, &model.motion)?
            .into_iter()
            .flat_map(|e| {
                let label = e.label;
                e.means
                    .into_iter()
                    .enumerate()
                    .map(move |(i, state)| EstimatePoint {
                        label,
                        time: e.start + i,
                        state,
                    })
            })
            .collect())
    };
    match (t.mode, t.smooth) {
        (Mode::Batch, _) => {
            let posterior = batch(&ctx, &t.batch_params(), seed)?;
            let estimates = from_posterior(&posterior)?;
            Ok(TrackOutput {
                posterior,
                estimates,
            })
        }
        (Mode::Recursive, true) => {
            let posterior = run_recursive(&ctx, &t.recursive_params(), seed, |_| Ok(()))?;
            let estimates = from_posterior(&posterior)?;
            Ok(TrackOutput {
                posterior,
                estimates,
            })
        }
        (Mode::Recursive, false) => {
            let mut estimates = Vec::new();
            let posterior = run_recursive(&ctx, &t.recursive_params(), seed, |post| {
                for (label, state) in filter_estimate(post) {
                    estimates.push(EstimatePoint {
                        label,
                        time: post.scans,
                        state,
                    });
                }
                Ok(())
            })?;
            estimates.sort_by_key(|p| (p.label, p.time));
            Ok(TrackOutput {
                posterior,
                estimates,
            })
        }
    }
}

pub fn track(cfg: &Config, measurements: &Path, out: &Path) -> Result<(), CliError> {
    let sc = &cfg.scenario;
    let frames = io::read_measurements(measurements, sc.scans, sc.sensors.len())?;
    let result = run_tracker(cfg, frames)?;
    ensure_dir(out)?;
    io::write_posterior(&out.join(POSTERIOR_FILE), &result.posterior, sc.sensors.len())?;
    io::write_estimates(&out.join(ESTIMATES_FILE), sc.seed, &result.estimates)
}

/// Position tracks of estimate points, one per label.
pub fn estimate_tracks(points: &[EstimatePoint]) -> Vec<Track> {
    let mut map: BTreeMap<_, Track> = BTreeMap::new();
    for p in points {
        map.entry(p.label).or_default().insert(p.time, position(&p.state));
    }
    map.into_values().collect()
}

/// Position tracks of true trajectories.
pub fn truth_tracks(truth: &[TruthTrack]) -> Vec<Track> {
    truth
        .iter()
        .map(|t| {
            t.states
                .iter()
                .enumerate()
                .map(|(i, s)| (t.start + i, position(s)))
                .collect()
        })
        .collect()
}

/// An estimates file and the method name its error rows carry.
#[derive(Clone, Debug)]
pub struct EstimateSource {
    pub method: String,
    pub path: PathBuf,
}

impl EstimateSource {
    /// Names the method after the file's directory, so `out/filter/estimates.csv`
    /// becomes `filter`.
    pub fn from_path(path: PathBuf) -> Self {
        let method = path
            .parent()
            .and_then(Path::file_name)
            .map_or_else(|| "estimates".to_string(), |n| n.to_string_lossy().into_owned());
        EstimateSource { method, path }
    }
}

/// Per-scan OSPA and OSPA² of every run in every source against `truth`.
/// `scans` defaults to the last scan present in any input.
pub fn evaluate(
    truth: &Path,
    sources: &[EstimateSource],
    params: &OspaParams,
    scans: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let truth: Vec<Track> = io::read_truth(truth)?.into_values().collect();
    let mut runs = Vec::new();
    for src in sources {
        runs.push((src, io::read_estimates(&src.path)?));
    }
    let last = |tracks: &mut dyn Iterator<Item = &Track>| {
        tracks.filter_map(|t| t.keys().next_back().copied()).max().unwrap_or(0)
    };
    let k = scans.unwrap_or_else(|| {
        let mut m = last(&mut truth.iter());
        for (_, per_run) in &runs {
            for tracks in per_run.values() {
                m = m.max(last(&mut tracks.values()));
            }
        }
        m
    });
    let mut rows = Vec::new();
    for (src, per_run) in &runs {
        for (&run_id, tracks) in per_run {
            let est: Vec<Track> = tracks.values().cloned().collect();
            for (i, (ospa, ospa2)) in error_curve(&truth, &est, params, k).into_iter().enumerate() {
                rows.push(ErrorRow {
                    run_id,
                    method: src.method.clone(),
                    time: i + 1,
                    ospa,
                    ospa2,
                });
            }
        }
    }
    ensure_dir(out)?;
    io::write_errors(&out.join(ERRORS_FILE), &rows)
}

pub fn stats(posterior: &Path, out: &Path) -> Result<(), CliError> {
    let post = io::read_posterior(posterior)?;
    ensure_dir(out)?;
    io::write_stats(&out.join(STATS_FILE), &statistics(&post))
}
