//! Ground truth and measurement generation: scripted constant-velocity
//! scenarios or trajectories sampled from the model.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{cholesky_jittered, GaussianDensity, MotionModel, SensorModel};
use crate::numeric::rng_for;
use crate::types::{Label, MeasurementFrame};
use crate::weights::{BirthComponent, BirthModel, TrackingModel};

const TRUTH_STREAM: u64 = 3;
const MEASUREMENT_STREAM: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub detection: f64,
    /// Per-axis position noise standard deviation, m.
    pub noise_sd: f64,
    /// Expected clutter points per scan. Exactly one of `clutter_rate` and
    /// `clutter_intensity` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clutter_rate: Option<f64>,
    /// Clutter intensity per unit volume of the surveillance region.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clutter_intensity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BirthSpec {
    pub existence: f64,
    /// `[p, v]` per axis.
    pub mean: Vec<f64>,
    /// Per-component standard deviations of a diagonal covariance.
    pub sd: Vec<f64>,
}

/// An object moving at constant velocity from `state` at `birth_scan` until
/// `last_scan` (inclusive, default the final scan).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedObject {
    pub birth_scan: usize,
    /// Birth component index, 1-based; labels the object `(birth_scan, birth_index)`.
    pub birth_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_scan: Option<usize>,
    /// `[p, v]` per axis.
    pub state: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scans: usize,
    pub dt: f64,
    pub sigma_a: f64,
    pub survival: f64,
    /// `[lo, hi]` per axis, m.
    pub bounds: Vec<[f64; 2]>,
    pub seed: u64,
    pub sensors: Vec<SensorSpec>,
    pub births: Vec<BirthSpec>,
    /// Scripted objects; when empty, truth is sampled from the model.
    #[serde(default)]
    pub objects: Vec<ScriptedObject>,
}

/// One true trajectory: states at scans `start..start + states.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthTrack {
    pub label: Label,
    pub start: usize,
    pub states: Vec<DVector<f64>>,
}

impl TruthTrack {
    pub fn end(&self) -> usize {
        self.start + self.states.len() - 1
    }

    pub fn state_at(&self, k: usize) -> Option<&DVector<f64>> {
        k.checked_sub(self.start).and_then(|i| self.states.get(i))
    }
}

fn benchmark_births() -> Vec<BirthSpec> {
    [
        [0.1, 0.0, 0.1, 0.0, 0.1, 0.0],
        [400.0, 0.0, -600.0, 0.0, 200.0, 0.0],
        [-800.0, 0.0, -200.0, 0.0, -400.0, 0.0],
        [-200.0, 0.0, 800.0, 0.0, 600.0, 0.0],
    ]
    .iter()
    .map(|m| BirthSpec {
        existence: 0.03,
        mean: m.to_vec(),
        sd: vec![10.0; 6],
    })
    .collect()
}

/// Object starting at birth mean `component` (1-based) with velocity `vel`.
fn scripted(births: &[BirthSpec], birth_scan: usize, component: usize, vel: [f64; 3], last_scan: Option<usize>) -> ScriptedObject {
    let m = &births[component - 1].mean;
    ScriptedObject {
        birth_scan,
        birth_index: component,
        last_scan,
        state: vec![m[0], vel[0], m[2], vel[1], m[4], vel[2]],
    }
}

/// Velocity taking `births[component]`'s mean to `target` in `steps` scans.
fn toward(births: &[BirthSpec], component: usize, target: [f64; 3], steps: f64) -> [f64; 3] {
    let m = &births[component - 1].mean;
    [
        (target[0] - m[0]) / steps,
        (target[1] - m[2]) / steps,
        (target[2] - m[4]) / steps,
    ]
}

impl ScenarioConfig {
    /// The 100-scan, 12-object, four-sensor benchmark: three objects born at
    /// scan 1 meet at (0, -400, 0) at scan 40, two born at scan 20 meet at
    /// (300, -200, 200) at scan 59, and two of the first three end at scan 70.
    pub fn benchmark(sensors: usize) -> Self {
        let births = benchmark_births();
        let first_meet = [0.0, -400.0, 0.0];
        let second_meet = [300.0, -200.0, 200.0];
        let objects = vec![
            scripted(&births, 1, 1, toward(&births, 1, first_meet, 39.0), Some(70)),
            scripted(&births, 1, 2, toward(&births, 2, first_meet, 39.0), None),
            scripted(&births, 1, 3, toward(&births, 3, first_meet, 39.0), Some(70)),
            scripted(&births, 20, 1, toward(&births, 1, second_meet, 39.0), None),
            scripted(&births, 20, 2, toward(&births, 2, second_meet, 39.0), None),
            scripted(&births, 20, 4, [5.0, -5.0, -5.0], None),
            scripted(&births, 40, 3, [5.0, 5.0, 5.0], None),
            scripted(&births, 40, 4, [-5.0, -10.0, 0.0], None),
            scripted(&births, 60, 1, [-8.0, 8.0, -8.0], None),
            scripted(&births, 60, 2, [8.0, 0.0, -8.0], None),
            scripted(&births, 80, 3, [0.0, -10.0, 5.0], None),
            scripted(&births, 80, 4, [10.0, 0.0, -10.0], None),
        ];
        ScenarioConfig {
            scans: 100,
            dt: 1.0,
            sigma_a: 5.0,
            survival: 0.95,
            bounds: vec![[-1000.0, 1000.0]; 3],
            seed: 0,
            sensors: vec![
                SensorSpec {
                    detection: 0.3,
                    noise_sd: 20.0,
                    clutter_rate: Some(3.0),
                    clutter_intensity: None,
                };
                sensors
            ],
            births,
            objects,
        }
    }

    /// A 20-scan reduction of [`ScenarioConfig::benchmark`] with three
    /// objects, two of them meeting at (200, -300, 100) at scan 15.
    pub fn reduced(sensors: usize) -> Self {
        let mut cfg = ScenarioConfig::benchmark(sensors);
        let births = &cfg.births;
        let meet = [200.0, -300.0, 100.0];
        cfg.objects = vec![
            scripted(births, 1, 1, toward(births, 1, meet, 14.0), None),
            scripted(births, 1, 2, toward(births, 2, meet, 14.0), None),
            scripted(births, 5, 3, [10.0, 5.0, 5.0], None),
        ];
        cfg.scans = 20;
        cfg
    }

    pub fn axes(&self) -> usize {
        self.bounds.len()
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|[lo, hi]| hi - lo).product()
    }

    /// Expected clutter points per scan at 0-based sensor `v`.
    pub fn clutter_rate(&self, v: usize) -> f64 {
        let s = &self.sensors[v];
        s.clutter_rate
            .unwrap_or_else(|| s.clutter_intensity.unwrap_or(0.0) * self.volume())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.scans == 0 {
            return cfg("scans: must be at least 1".into());
        }
        if !(self.dt > 0.0) {
            return cfg(format!("dt: must be positive, got {}", self.dt));
        }
        if !(self.sigma_a >= 0.0) {
            return cfg(format!("sigma_a: must be non-negative, got {}", self.sigma_a));
        }
        if !(0.0..=1.0).contains(&self.survival) {
            return cfg(format!("survival: {} outside [0, 1]", self.survival));
        }
        if self.bounds.is_empty() || self.bounds.iter().any(|[lo, hi]| !(lo < hi)) {
            return cfg("bounds: every axis needs lo < hi".into());
        }
        if self.sensors.is_empty() {
            return cfg("sensors: at least one sensor is required".into());
        }
        let d = 2 * self.axes();
        for (v, s) in self.sensors.iter().enumerate() {
            let n = v + 1;
            if !(0.0..=1.0).contains(&s.detection) {
                return cfg(format!("sensors[{n}].detection: {} outside [0, 1]", s.detection));
            }
            if !(s.noise_sd >= 0.0) {
                return cfg(format!("sensors[{n}].noise_sd: must be non-negative"));
            }
            match (s.clutter_rate, s.clutter_intensity) {
                (Some(_), Some(_)) => {
                    return cfg(format!(
                        "sensors[{n}]: give clutter_rate or clutter_intensity, not both"
                    ))
                }
                (None, None) => {
                    return cfg(format!("sensors[{n}]: missing clutter_rate or clutter_intensity"))
                }
                (Some(r), None) if !(r >= 0.0) => {
                    return cfg(format!("sensors[{n}].clutter_rate: must be non-negative"))
                }
                (None, Some(k)) if !(k >= 0.0) => {
                    return cfg(format!("sensors[{n}].clutter_intensity: must be non-negative"))
                }
                _ => {}
            }
        }
        for (i, b) in self.births.iter().enumerate() {
            let n = i + 1;
            if !(0.0..=1.0).contains(&b.existence) {
                return cfg(format!("births[{n}].existence: {} outside [0, 1]", b.existence));
            }
            if b.mean.len() != d || b.sd.len() != d {
                return cfg(format!("births[{n}]: mean and sd need {d} entries"));
            }
            if b.sd.iter().any(|s| !(*s > 0.0)) {
                return cfg(format!("births[{n}].sd: entries must be positive"));
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            let n = i + 1;
            if o.state.len() != d {
                return cfg(format!("objects[{n}].state: needs {d} entries"));
            }
            if o.birth_scan == 0 || o.birth_scan > self.scans {
                return cfg(format!("objects[{n}].birth_scan: outside 1..={}", self.scans));
            }
            if o.birth_index == 0 {
                return cfg(format!("objects[{n}].birth_index: must be at least 1"));
            }
            if let Some(last) = o.last_scan {
                if last < o.birth_scan || last > self.scans {
                    return cfg(format!(
                        "objects[{n}].last_scan: outside {}..={}",
                        o.birth_scan, self.scans
                    ));
                }
            }
            let duplicate = self.objects[..i]
                .iter()
                .any(|p| (p.birth_scan, p.birth_index) == (o.birth_scan, o.birth_index));
            if duplicate {
                return cfg(format!("objects[{n}]: label ({}, {}) used twice", o.birth_scan, o.birth_index));
            }
        }
        Ok(())
    }

    pub fn motion(&self) -> Result<MotionModel> {
        MotionModel::constant_velocity(self.axes(), self.dt, self.sigma_a, self.survival)
    }

    /// The tracking model matched to this scenario: stationary births,
    /// uniform clutter of intensity rate / volume.
    pub fn tracking_model(&self) -> Result<TrackingModel> {
        self.validate()?;
        let sensors = (0..self.sensors.len())
            .map(|v| {
                let s = &self.sensors[v];
                if !(s.noise_sd > 0.0) {
                    return Err(Error::Config(format!(
                        "sensors[{}].noise_sd: tracking needs positive noise",
                        v + 1
                    )));
                }
                let rate = self.clutter_rate(v);
                if !(rate > 0.0) {
                    return Err(Error::Config(format!(
                        "sensors[{}]: tracking needs a positive clutter rate",
                        v + 1
                    )));
                }
                SensorModel::position(self.axes(), s.noise_sd, s.detection, rate / self.volume())
            })
            .collect::<Result<Vec<_>>>()?;
        let births = self
            .births
            .iter()
            .map(|b| {
                let cov = DMatrix::from_diagonal(&DVector::from_iterator(b.sd.len(), b.sd.iter().map(|s| s * s)));
                Ok(BirthComponent {
                    existence: b.existence,
                    density: GaussianDensity::new(DVector::from_column_slice(&b.mean), cov)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        TrackingModel::new(self.motion()?, sensors, BirthModel::Stationary(births))
    }

    fn contains(&self, state: &DVector<f64>) -> bool {
        self.bounds
            .iter()
            .enumerate()
            .all(|(a, [lo, hi])| (*lo..=*hi).contains(&state[2 * a]))
    }
}

fn gaussian_sample<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let l = cholesky_jittered(cov)?.l();
    let e = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(mean + l * e)
}

/// True trajectories, scripted when `cfg.objects` is non-empty and sampled
/// from the birth, survival and motion model otherwise. Sorted by label.
pub fn generate_truth(cfg: &ScenarioConfig) -> Result<Vec<TruthTrack>> {
    cfg.validate()?;
    let motion = cfg.motion()?;
    let mut tracks = if cfg.objects.is_empty() {
        sample_truth(cfg, &motion)?
    } else {
        scripted_truth(cfg, &motion)?
    };
    tracks.sort_by_key(|t| t.label);
    Ok(tracks)
}

fn scripted_truth(cfg: &ScenarioConfig, motion: &MotionModel) -> Result<Vec<TruthTrack>> {
    cfg.objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let last = o.last_scan.unwrap_or(cfg.scans);
            let mut x = DVector::from_column_slice(&o.state);
            let mut states = Vec::with_capacity(last + 1 - o.birth_scan);
            for k in o.birth_scan..=last {
                if !cfg.contains(&x) {
                    return Err(Error::Config(format!(
                        "objects[{}]: leaves the surveillance region at scan {k}",
                        i + 1
                    )));
                }
                states.push(x.clone());
                x = &motion.transition * x;
            }
            Ok(TruthTrack {
                label: Label::new(o.birth_scan, o.birth_index),
                start: o.birth_scan,
                states,
            })
        })
        .collect()
}

fn sample_truth(cfg: &ScenarioConfig, motion: &MotionModel) -> Result<Vec<TruthTrack>> {
    let mut rng = rng_for(cfg.seed, &[TRUTH_STREAM]);
    let mut finished = Vec::new();
    let mut live: Vec<TruthTrack> = Vec::new();
    for k in 1..=cfg.scans {
        let mut next = Vec::with_capacity(live.len());
        for mut t in live.drain(..) {
            if rng.random::<f64>() < cfg.survival {
                let x = gaussian_sample(&(&motion.transition * t.states.last().unwrap()), &motion.process_noise, &mut rng)?;
                t.states.push(x);
                next.push(t);
            } else {
                finished.push(t);
            }
        }
        for (i, b) in cfg.births.iter().enumerate() {
            if rng.random::<f64>() < b.existence {
                let cov = DMatrix::from_diagonal(&DVector::from_iterator(b.sd.len(), b.sd.iter().map(|s| s * s)));
                let x = gaussian_sample(&DVector::from_column_slice(&b.mean), &cov, &mut rng)?;
                next.push(TruthTrack {
                    label: Label::new(k, i + 1),
                    start: k,
                    states: vec![x],
                });
            }
        }
        live = next;
    }
    finished.extend(live);
    Ok(finished)
}

/// Frames for scans `1..=cfg.scans`. Each live object is detected
/// independently with the sensor's detection probability and observed in
/// position with Gaussian noise; clutter is Poisson with uniform positions
/// over the bounds; each frame is shuffled. Every (scan, sensor) pair draws
/// from its own stream, so adding sensors leaves earlier sensors' data
/// unchanged.
pub fn generate_measurements(truth: &[TruthTrack], cfg: &ScenarioConfig) -> Result<Vec<MeasurementFrame>> {
    cfg.validate()?;
    let axes = cfg.axes();
    (1..=cfg.scans)
        .map(|k| {
            let sensors = (0..cfg.sensors.len())
                .map(|v| {
                    let spec = &cfg.sensors[v];
                    let mut rng = rng_for(cfg.seed, &[MEASUREMENT_STREAM, k as u64, v as u64]);
                    let mut points = Vec::new();
                    for t in truth {
                        if let Some(x) = t.state_at(k) {
                            if rng.random::<f64>() < spec.detection {
                                points.push(DVector::from_fn(axes, |a, _| {
                                    x[2 * a] + spec.noise_sd * rng.sample::<f64, _>(StandardNormal)
                                }));
                            }
                        }
                    }
                    let rate = cfg.clutter_rate(v);
                    let clutter = if rate > 0.0 {
                        let poisson = Poisson::new(rate).map_err(|e| Error::Config(format!("clutter rate: {e}")))?;
                        poisson.sample(&mut rng) as usize
                    } else {
                        0
                    };
                    for _ in 0..clutter {
                        points.push(DVector::from_fn(axes, |a, _| {
                            let [lo, hi] = cfg.bounds[a];
                            rng.random_range(lo..hi)
                        }));
                    }
                    points.shuffle(&mut rng);
                    Ok(points)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MeasurementFrame::new(sensors))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_script_matches_its_description() {
        let cfg = ScenarioConfig::benchmark(4);
        let truth = generate_truth(&cfg).unwrap();
        assert_eq!(truth.len(), 12);
        let live_at = |k: usize| truth.iter().filter(|t| t.state_at(k).is_some()).count();
        for k in 80..=100 {
            assert_eq!(live_at(k), 10);
        }
        assert_eq!((1..=100).map(live_at).max(), Some(10));
        let births: Vec<usize> = [1, 20, 40, 60, 80]
            .iter()
            .map(|&s| truth.iter().filter(|t| t.start == s).count())
            .collect();
        assert_eq!(births, vec![3, 3, 2, 2, 2]);
        let short: Vec<&TruthTrack> = truth.iter().filter(|t| t.end() == 70).collect();
        assert_eq!(short.len(), 2);
        assert!(short.iter().all(|t| t.start == 1 && t.states.len() == 70));

        let position = |x: &DVector<f64>| [x[0], x[2], x[4]];
        let near = |p: [f64; 3], q: [f64; 3]| p.iter().zip(q).all(|(a, b)| (a - b).abs() < 1e-9);
        let at40: Vec<_> = truth.iter().filter(|t| t.start == 1).map(|t| position(t.state_at(40).unwrap())).collect();
        assert!(at40.iter().all(|&p| near(p, [0.0, -400.0, 0.0])));
        let at59 = truth
            .iter()
            .filter(|t| t.start == 20)
            .filter(|t| near(position(t.state_at(59).unwrap()), [300.0, -200.0, 200.0]))
            .count();
        assert_eq!(at59, 2);
    }

    #[test]
    fn reduced_scenario_is_valid() {
        let cfg = ScenarioConfig::reduced(2);
        let truth = generate_truth(&cfg).unwrap();
        assert_eq!(truth.len(), 3);
        assert!(truth.iter().all(|t| t.end() == 20));
        cfg.tracking_model().unwrap();
    }

    #[test]
    fn scripted_objects_outside_bounds_are_rejected() {
        let mut cfg = ScenarioConfig::reduced(1);
        cfg.objects[0].state[1] = 500.0;
        assert!(matches!(generate_truth(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn certain_survival_without_script_reaches_the_last_scan() {
        let mut cfg = ScenarioConfig::benchmark(1);
        cfg.objects.clear();
        cfg.survival = 1.0;
        cfg.scans = 30;
        cfg.births.iter_mut().for_each(|b| b.existence = 0.2);
        let truth = generate_truth(&cfg).unwrap();
        assert!(!truth.is_empty());
        assert!(truth.iter().all(|t| t.end() == 30));
    }

    #[test]
    fn blind_sensor_without_clutter_sees_nothing() {
        let mut cfg = ScenarioConfig::reduced(2);
        for s in &mut cfg.sensors {
            s.detection = 0.0;
            s.clutter_rate = Some(0.0);
        }
        let truth = generate_truth(&cfg).unwrap();
        let frames = generate_measurements(&truth, &cfg).unwrap();
        assert!(frames.iter().all(|f| (0..2).all(|v| f.count(v) == 0)));
    }

    #[test]
    fn perfect_sensor_sees_exact_positions() {
        let mut cfg = ScenarioConfig::reduced(1);
        cfg.sensors[0] = SensorSpec {
            detection: 1.0,
            noise_sd: 0.0,
            clutter_rate: Some(0.0),
            clutter_intensity: None,
        };
        let truth = generate_truth(&cfg).unwrap();
        let frames = generate_measurements(&truth, &cfg).unwrap();
        for (j, f) in frames.iter().enumerate() {
            let k = j + 1;
            let mut expected: Vec<[f64; 3]> = truth
                .iter()
                .filter_map(|t| t.state_at(k))
                .map(|x| [x[0], x[2], x[4]])
                .collect();
            let mut seen: Vec<[f64; 3]> = f.sensor(0).iter().map(|z| [z[0], z[1], z[2]]).collect();
            expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
            seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(seen, expected);
        }
    }

    #[test]
    fn clutter_count_and_spread() {
        let mut cfg = ScenarioConfig::benchmark(1);
        cfg.objects.clear();
        cfg.births.clear();
        cfg.scans = 10_000;
        let frames = generate_measurements(&[], &cfg).unwrap();
        let counts: Vec<f64> = frames.iter().map(|f| f.count(0) as f64).collect();
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        // Poisson(3): sd of the mean is sqrt(3 / n)
        assert!((mean - 3.0).abs() < 3.0 * (3.0f64 / 1e4).sqrt());

        // octants of the cube: chi-square with 7 dof, 0.999 quantile 24.32
        let mut cells = [0f64; 8];
        let mut n = 0.0;
        for f in &frames {
            for z in f.sensor(0) {
                let c = usize::from(z[0] > 0.0) + 2 * usize::from(z[1] > 0.0) + 4 * usize::from(z[2] > 0.0);
                cells[c] += 1.0;
                n += 1.0;
            }
        }
        let e = n / 8.0;
        let chi2: f64 = cells.iter().map(|o| (o - e).powi(2) / e).sum();
        assert!(chi2 < 24.32, "chi2 = {chi2}");
    }

    #[test]
    fn clutter_intensity_converts_to_rate() {
        let mut cfg = ScenarioConfig::benchmark(1);
        cfg.sensors[0].clutter_rate = None;
        cfg.sensors[0].clutter_intensity = Some(3.75e-10);
        assert!((cfg.clutter_rate(0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic_and_sensor_streams_are_nested() {
        let one = ScenarioConfig::reduced(1);
        let two = ScenarioConfig::reduced(2);
        let truth = generate_truth(&two).unwrap();
        assert_eq!(truth, generate_truth(&two).unwrap());
        let a = generate_measurements(&truth, &two).unwrap();
        assert_eq!(a, generate_measurements(&truth, &two).unwrap());
        let b = generate_measurements(&truth, &one).unwrap();
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.sensor(0), fb.sensor(0));
        }
    }
}
