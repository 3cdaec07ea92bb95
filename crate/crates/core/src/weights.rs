//! Association weights, the per-label trajectory recursion, the per-sensor
//! sampling factors of both samplers, and component log weights.
//!
//! Every quantity here is a natural logarithm.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kinematics::{
    cholesky_jittered, log_det, predict, psi_weight, symmetrize, GaussianDensity, MotionModel,
    SensorModel, TrajectoryPosterior,
};
use crate::types::{
    is_live, is_not_existing, is_positive_one_to_one, live_labels, AssociationHistory,
    GlmbComponent, Label, MeasurementFrame, SensorIndex,
};

#[derive(Clone, Debug, PartialEq)]
pub struct BirthComponent {
    pub existence: f64,
    pub density: GaussianDensity,
}

/// Labelled birth model. The `i`-th component (0-based) at scan `j` births
/// label `(j, i + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub enum BirthModel {
    /// The same components at every scan.
    Stationary(Vec<BirthComponent>),
    /// Components per scan; scans not listed have no births.
    Scheduled(BTreeMap<usize, Vec<BirthComponent>>),
}

impl BirthModel {
    pub fn components(&self, j: usize) -> &[BirthComponent] {
        match self {
            BirthModel::Stationary(c) => c,
            BirthModel::Scheduled(m) => m.get(&j).map_or(&[], Vec::as_slice),
        }
    }

    pub fn labels(&self, j: usize) -> Vec<Label> {
        (1..=self.components(j).len()).map(|i| Label::new(j, i)).collect()
    }

    pub fn component(&self, label: Label) -> Option<&BirthComponent> {
        label
            .birth_index
            .checked_sub(1)
            .and_then(|i| self.components(label.birth_time).get(i))
    }

    /// `[B_1, ..., B_k]`.
    pub fn birth_spaces(&self, k: usize) -> Vec<Vec<Label>> {
        (1..=k).map(|j| self.labels(j)).collect()
    }

    fn all_components(&self) -> Box<dyn Iterator<Item = &BirthComponent> + '_> {
        match self {
            BirthModel::Stationary(c) => Box::new(c.iter()),
            BirthModel::Scheduled(m) => Box::new(m.values().flatten()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingModel {
    pub motion: MotionModel,
    pub sensors: Vec<SensorModel>,
    pub birth: BirthModel,
}

impl TrackingModel {
    pub fn new(motion: MotionModel, sensors: Vec<SensorModel>, birth: BirthModel) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::Config("at least one sensor is required".into()));
        }
        let d = motion.dim();
        for (v, s) in sensors.iter().enumerate() {
            if s.observation.ncols() != d {
                return Err(Error::Config(format!(
                    "sensor {} observes a {}-dimensional state, motion model has {d}",
                    v + 1,
                    s.observation.ncols()
                )));
            }
        }
        for c in birth.all_components() {
            if !(0.0..=1.0).contains(&c.existence) {
                return Err(Error::Config(format!(
                    "birth probability {} outside [0, 1]",
                    c.existence
                )));
            }
            if c.density.dim() != d {
                return Err(Error::Config(format!(
                    "birth density has dimension {}, motion model has {d}",
                    c.density.dim()
                )));
            }
        }
        Ok(TrackingModel {
            motion,
            sensors,
            birth,
        })
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }
}

/// Model plus the measurement frames of scans `1..=k`.
#[derive(Clone, Debug)]
pub struct WeightContext {
    pub model: Arc<TrackingModel>,
    pub frames: Vec<MeasurementFrame>,
}

impl WeightContext {
    pub fn new(model: Arc<TrackingModel>, frames: Vec<MeasurementFrame>) -> Result<Self> {
        let mut ctx = WeightContext {
            model,
            frames: Vec::with_capacity(frames.len()),
        };
        for f in frames {
            ctx.push_frame(f)?;
        }
        Ok(ctx)
    }

    pub fn push_frame(&mut self, frame: MeasurementFrame) -> Result<()> {
        let v = self.model.sensor_count();
        if frame.sensor_count() != v {
            return Err(Error::Config(format!(
                "frame {} has {} sensors, model has {v}",
                self.frames.len() + 1,
                frame.sensor_count()
            )));
        }
        for (s, sensor) in self.model.sensors.iter().enumerate() {
            if let Some(z) = frame.sensor(s).iter().find(|z| z.len() != sensor.dim()) {
                return Err(Error::Config(format!(
                    "measurement of dimension {} at sensor {}, expected {}",
                    z.len(),
                    s + 1,
                    sensor.dim()
                )));
            }
        }
        self.frames.push(frame);
        Ok(())
    }

    /// Copy restricted to the first `k` scans.
    pub fn truncated(&self, k: usize) -> Self {
        WeightContext {
            model: self.model.clone(),
            frames: self.frames[..k].to_vec(),
        }
    }

    pub fn scans(&self) -> usize {
        self.frames.len()
    }

    pub fn sensors(&self) -> usize {
        self.model.sensor_count()
    }

    /// Frame of scan `j` (1-based).
    pub fn frame(&self, j: usize) -> &MeasurementFrame {
        &self.frames[j - 1]
    }

    pub fn birth_labels(&self, j: usize) -> Vec<Label> {
        self.model.birth.labels(j)
    }

    pub fn birth_spaces(&self) -> Vec<Vec<Label>> {
        self.model.birth.birth_spaces(self.scans())
    }
}

/// What a label looks like on entering scan `j`: its prior density there and
/// the log probabilities of existing or not.
#[derive(Clone, Debug)]
pub(crate) struct Entry {
    pub prior: GaussianDensity,
    pub log_exist: f64,
    pub log_absent: f64,
}

pub(crate) fn entry(
    label: Label,
    prefix: Option<&TrajectoryPosterior>,
    ctx: &WeightContext,
    j: usize,
) -> Result<Entry> {
    match prefix {
        None => {
            let comp = ctx
                .model
                .birth
                .component(label)
                .filter(|_| label.birth_time == j)
                .ok_or_else(|| {
                    Error::Contract(format!("{label} is not a birth label of scan {j}"))
                })?;
            Ok(Entry {
                prior: comp.density.clone(),
                log_exist: comp.existence.ln(),
                log_absent: (1.0 - comp.existence).ln(),
            })
        }
        Some(t) => {
            if t.terminated || t.end + 1 != j {
                return Err(Error::Contract(format!(
                    "trajectory of {label} ends at {} and cannot enter scan {j}",
                    t.end
                )));
            }
            let p_s = ctx.model.motion.survival_prob(&t.last().mean, label);
            Ok(Entry {
                prior: predict(t.last(), &ctx.model.motion)?,
                log_exist: p_s.ln(),
                log_absent: (1.0 - p_s).ln(),
            })
        }
    }
}

/// Applies every sensor's factor for `alpha` at scan `j` in sensor order.
pub(crate) fn apply_all(
    prior: &GaussianDensity,
    alpha: &[SensorIndex],
    ctx: &WeightContext,
    j: usize,
) -> Result<(GaussianDensity, f64)> {
    let frame = ctx.frame(j);
    let mut g = prior.clone();
    let mut total = 0.0;
    for (v, (&a, sensor)) in alpha.iter().zip(&ctx.model.sensors).enumerate() {
        let (post, lp) = psi_weight(v, a, &g, sensor, frame)?;
        total += lp;
        if let Some(p) = post {
            g = p;
        }
    }
    Ok((g, total))
}

/// One step of the per-label recursion at scan `k`.
///
/// Returns the updated trajectory (`None` while the label has never
/// existed) and `log η`.
pub fn update_trajectory(
    traj: Option<&TrajectoryPosterior>,
    label: Label,
    alpha: &[SensorIndex],
    ctx: &WeightContext,
    k: usize,
) -> Result<(Option<TrajectoryPosterior>, f64)> {
    if alpha.len() != ctx.sensors() || !(is_live(alpha) || is_not_existing(alpha)) {
        return Err(Error::Contract(format!(
            "association vector {alpha:?} for {label} is malformed"
        )));
    }
    let live = is_live(alpha);
    match traj {
        None if label.birth_time == k => {
            let e = entry(label, None, ctx, k)?;
            if !live {
                return Ok((None, e.log_absent));
            }
            let (post, lp) = apply_all(&e.prior, alpha, ctx, k)?;
            let eta = e.log_exist + lp;
            Ok((Some(TrajectoryPosterior::born(label, k, post, eta)), eta))
        }
        None if label.birth_time < k && !live => Ok((None, 0.0)),
        None => Err(Error::Contract(format!(
            "{label} cannot be alive at scan {k} without a prior trajectory"
        ))),
        Some(t) if t.terminated || t.end + 1 < k => {
            if live {
                return Err(Error::Contract(format!("{label} cannot be resurrected at scan {k}")));
            }
            Ok((Some(t.clone()), 0.0))
        }
        Some(t) if t.end + 1 == k => {
            let e = entry(label, Some(t), ctx, k)?;
            if !live {
                return Ok((Some(t.terminated(e.log_absent)), e.log_absent));
            }
            let (post, lp) = apply_all(&e.prior, alpha, ctx, k)?;
            let eta = e.log_exist + lp;
            Ok((Some(t.extended(post, eta)), eta))
        }
        Some(t) => Err(Error::Contract(format!(
            "trajectory of {label} ends at {} which is not before scan {k}",
            t.end
        ))),
    }
}

/// Shared pieces of a detection update from a fixed prior: every
/// measurement of the sensor produces the same covariance and gain.
pub(crate) struct DetectionGate {
    chol: Cholesky<f64, Dyn>,
    gain: DMatrix<f64>,
    pub post_cov: DMatrix<f64>,
    predicted: DVector<f64>,
    log_const: f64,
}

impl DetectionGate {
    pub fn new(prior: &GaussianDensity, sensor: &SensorModel) -> Result<Self> {
        let h = &sensor.observation;
        let ph_t = &prior.cov * h.transpose();
        let mut s = h * &ph_t + &sensor.noise;
        symmetrize(&mut s);
        let chol = cholesky_jittered(&s)?;
        let gain = chol.solve(&ph_t.transpose()).transpose();
        let d = prior.dim();
        let i_kh = DMatrix::identity(d, d) - &gain * h;
        let mut post_cov = &i_kh * &prior.cov * i_kh.transpose() + &gain * &sensor.noise * gain.transpose();
        symmetrize(&mut post_cov);
        let m = h.nrows() as f64;
        let log_const =
            sensor.detection().ln() - 0.5 * (m * (2.0 * PI).ln() + log_det(&chol));
        Ok(DetectionGate {
            chol,
            gain,
            post_cov,
            predicted: h * &prior.mean,
            log_const,
        })
    }

    /// `log ψ` for measurement `z`.
    pub fn log_psi(&self, z: &DVector<f64>, sensor: &SensorModel) -> f64 {
        let e = z - &self.predicted;
        let maha = e.dot(&self.chol.solve(&e));
        self.log_const - 0.5 * maha - sensor.clutter_intensity(z).ln()
    }

    pub fn posterior_mean(&self, prior_mean: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        prior_mean + &self.gain * (z - &self.predicted)
    }
}

struct PlannedUpdate {
    z: DVector<f64>,
    observation: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    gain: DMatrix<f64>,
    log_const: f64,
}

/// Log-likelihood of a fixed future association run as a function of the
/// starting mean. Covariances do not depend on the mean, so they are
/// computed once and each evaluation only propagates a mean.
pub(crate) struct FuturePlan {
    transition: DMatrix<f64>,
    steps: Vec<Vec<PlannedUpdate>>,
    constant: f64,
}

impl FuturePlan {
    /// `run` holds the live vectors for scans `j+1, j+2, ...`; `dies` adds the
    /// death factor after the run.
    pub fn build(
        cov0: &DMatrix<f64>,
        run: &[&[SensorIndex]],
        dies: bool,
        ctx: &WeightContext,
        j: usize,
    ) -> Result<Self> {
        let motion = &ctx.model.motion;
        let p_s = motion.survival();
        let mut cov = cov0.clone();
        let mut constant = 0.0;
        let mut steps = Vec::with_capacity(run.len());
        for (offset, alpha) in run.iter().enumerate() {
            let frame = ctx.frame(j + 1 + offset);
            cov = &motion.transition * &cov * motion.transition.transpose() + &motion.process_noise;
            symmetrize(&mut cov);
            constant += p_s.ln();
            let mut updates = Vec::new();
            for (v, (&a, sensor)) in alpha.iter().zip(&ctx.model.sensors).enumerate() {
                if a == 0 {
                    constant += (1.0 - sensor.detection()).ln();
                    continue;
                }
                let z = frame.measurement(v, a)?.clone();
                let h = &sensor.observation;
                let ph_t = &cov * h.transpose();
                let mut s = h * &ph_t + &sensor.noise;
                symmetrize(&mut s);
                let chol = cholesky_jittered(&s)?;
                let gain = chol.solve(&ph_t.transpose()).transpose();
                let d = cov.nrows();
                let i_kh = DMatrix::identity(d, d) - &gain * h;
                cov = &i_kh * &cov * i_kh.transpose() + &gain * &sensor.noise * gain.transpose();
                symmetrize(&mut cov);
                let m = h.nrows() as f64;
                let log_const = sensor.detection().ln()
                    - sensor.clutter_intensity(&z).ln()
                    - 0.5 * (m * (2.0 * PI).ln() + log_det(&chol));
                updates.push(PlannedUpdate {
                    z,
                    observation: h.clone(),
                    chol,
                    gain,
                    log_const,
                });
            }
            steps.push(updates);
        }
        if dies {
            constant += (1.0 - p_s).ln();
        }
        Ok(FuturePlan {
            transition: motion.transition.clone(),
            steps,
            constant,
        })
    }

    pub fn eval(&self, mean0: &DVector<f64>) -> f64 {
        if self.constant == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let mut total = self.constant;
        let mut m = mean0.clone();
        for updates in &self.steps {
            m = &self.transition * m;
            for u in updates {
                let e = &u.z - &u.observation * &m;
                total += u.log_const - 0.5 * e.dot(&u.chol.solve(&e));
                m += &u.gain * e;
            }
        }
        total
    }
}

/// Per-sensor factor tables for the scan-`j` sampler: entry `a + 1` holds
/// the unnormalized log factor of association value `a`.
pub fn theta_factor_tables(
    label: Label,
    prefix: Option<&TrajectoryPosterior>,
    ctx: &WeightContext,
    j: usize,
) -> Result<Vec<Vec<f64>>> {
    let e = entry(label, prefix, ctx, j)?;
    factor_tables_from_entry(&e, ctx, j)
}

pub(crate) fn factor_tables_from_entry(e: &Entry, ctx: &WeightContext, j: usize) -> Result<Vec<Vec<f64>>> {
    let frame = ctx.frame(j);
    ctx.model
        .sensors
        .iter()
        .enumerate()
        .map(|(v, sensor)| {
            let mut table = Vec::with_capacity(frame.count(v) + 2);
            table.push(e.log_absent);
            table.push(e.log_exist + (1.0 - sensor.detection()).ln());
            if frame.count(v) > 0 {
                let gate = DetectionGate::new(&e.prior, sensor)?;
                for z in frame.sensor(v) {
                    table.push(e.log_exist + gate.log_psi(z, sensor));
                }
            }
            Ok(table)
        })
        .collect()
}

/// Single-sensor factor of the scan-`j` sampler for value `alpha_v` at sensor
/// `v` (0-based). Only sensor `v`'s detection factor enters.
pub fn theta_factor(
    label: Label,
    v: usize,
    alpha_v: SensorIndex,
    prefix: Option<&TrajectoryPosterior>,
    ctx: &WeightContext,
    j: usize,
) -> Result<f64> {
    let e = entry(label, prefix, ctx, j)?;
    if alpha_v < 0 {
        return Ok(e.log_absent);
    }
    let (_, lp) = psi_weight(v, alpha_v, &e.prior, &ctx.model.sensors[v], ctx.frame(j))?;
    Ok(e.log_exist + lp)
}

/// Splits `γ_{j+1:k}(ℓ)` into its leading live run and whether the label
/// dies inside the window.
pub(crate) fn split_future<'a>(label: Label, future: &'a [Vec<SensorIndex>]) -> Result<(Vec<&'a [SensorIndex]>, bool)> {
    let run: Vec<&[SensorIndex]> = future
        .iter()
        .take_while(|a| is_live(a))
        .map(Vec::as_slice)
        .collect();
    let dies = run.len() < future.len();
    if future[run.len()..].iter().any(|a| !is_not_existing(a)) {
        return Err(Error::Contract(format!("future of {label} resurrects or is malformed")));
    }
    Ok((run, dies))
}

/// Factor of the full sampler for value `alpha_v` at sensor `v` and scan
/// `j`: the scan-`j` weight with only sensor `v` applied, times the weights
/// of the fixed future `γ_{j+1:k}(ℓ)` up to and including the death step.
///
/// Evaluated by a plain forward pass; the samplers use a batched equivalent.
pub fn theta_full(
    label: Label,
    v: usize,
    alpha_v: SensorIndex,
    prefix: Option<&TrajectoryPosterior>,
    future: &[Vec<SensorIndex>],
    ctx: &WeightContext,
    j: usize,
) -> Result<f64> {
    let e = entry(label, prefix, ctx, j)?;
    if alpha_v < 0 {
        return Ok(e.log_absent);
    }
    let (run, dies) = split_future(label, future)?;
    let (post, lp) = psi_weight(v, alpha_v, &e.prior, &ctx.model.sensors[v], ctx.frame(j))?;
    let mut total = e.log_exist + lp;
    let mut g = post.unwrap_or(e.prior);
    let p_s = ctx.model.motion.survival();
    for (offset, alpha) in run.iter().enumerate() {
        let pred = predict(&g, &ctx.model.motion)?;
        let (next, lp) = apply_all(&pred, alpha, ctx, j + 1 + offset)?;
        total += p_s.ln() + lp;
        g = next;
    }
    if dies {
        total += (1.0 - p_s).ln();
    }
    Ok(total)
}

/// Batched full-sampler tables; same layout as [`theta_factor_tables`].
pub(crate) fn full_tables_from_entry(
    e: &Entry,
    run: &[&[SensorIndex]],
    dies: bool,
    ctx: &WeightContext,
    j: usize,
) -> Result<Vec<Vec<f64>>> {
    let frame = ctx.frame(j);
    let miss_future = if run.is_empty() {
        if dies {
            (1.0 - ctx.model.motion.survival()).ln()
        } else {
            0.0
        }
    } else {
        FuturePlan::build(&e.prior.cov, run, dies, ctx, j)?.eval(&e.prior.mean)
    };
    ctx.model
        .sensors
        .iter()
        .enumerate()
        .map(|(v, sensor)| {
            let mut table = Vec::with_capacity(frame.count(v) + 2);
            table.push(e.log_absent);
            table.push(e.log_exist + (1.0 - sensor.detection()).ln() + miss_future);
            if frame.count(v) > 0 {
                let gate = DetectionGate::new(&e.prior, sensor)?;
                let plan = FuturePlan::build(&gate.post_cov, run, dies, ctx, j)?;
                for z in frame.sensor(v) {
                    let lp = gate.log_psi(z, sensor);
                    let value = if lp == f64::NEG_INFINITY {
                        lp
                    } else {
                        e.log_exist + lp + plan.eval(&gate.posterior_mean(&e.prior.mean, z))
                    };
                    table.push(value);
                }
            }
            Ok(table)
        })
        .collect()
}

/// Full-sampler tables for a label entering scan `j`.
pub fn theta_full_tables(
    label: Label,
    prefix: Option<&TrajectoryPosterior>,
    future: &[Vec<SensorIndex>],
    ctx: &WeightContext,
    j: usize,
) -> Result<Vec<Vec<f64>>> {
    let e = entry(label, prefix, ctx, j)?;
    let (run, dies) = split_future(label, future)?;
    full_tables_from_entry(&e, &run, dies, ctx, j)
}

fn indices_in_range(assoc_alpha: &[SensorIndex], frame: &MeasurementFrame) -> bool {
    assoc_alpha
        .iter()
        .enumerate()
        .all(|(v, &a)| a <= frame.count(v) as SensorIndex)
}

/// Recomputes weight and trajectories of a history from scratch. Histories
/// violating validity get `log_weight = -inf` and no trajectories.
pub fn build_component(hist: &AssociationHistory, ctx: &WeightContext) -> Result<GlmbComponent> {
    let k = hist.scans();
    if k > ctx.scans() || hist.sensors() != ctx.sensors() {
        return Err(Error::Contract(format!(
            "history of {k} scans and {} sensors does not fit a context of {} scans and {} sensors",
            hist.sensors(),
            ctx.scans(),
            ctx.sensors()
        )));
    }
    let invalid = GlmbComponent {
        history: hist.clone(),
        log_weight: f64::NEG_INFINITY,
        trajectories: BTreeMap::new(),
    };
    let v = ctx.sensors();
    let dead = vec![-1; v];
    let mut trajectories: BTreeMap<Label, TrajectoryPosterior> = BTreeMap::new();
    let mut previous: BTreeSet<Label> = BTreeSet::new();
    let mut log_weight = 0.0;
    for j in 1..=k {
        let assoc = hist.at(j);
        if !assoc.is_well_formed() || !is_positive_one_to_one(assoc) {
            return Ok(invalid);
        }
        let mut candidates: BTreeSet<Label> = ctx.birth_labels(j).into_iter().collect();
        candidates.extend(previous.iter().copied());
        for (label, alpha) in assoc.entries() {
            if !candidates.contains(&label) || !indices_in_range(alpha, ctx.frame(j)) {
                return Ok(invalid);
            }
        }
        for &label in &candidates {
            let alpha = assoc.get(label).unwrap_or(&dead);
            let (traj, eta) = update_trajectory(trajectories.get(&label), label, alpha, ctx, j)?;
            log_weight += eta;
            if let Some(t) = traj {
                trajectories.insert(label, t);
            }
        }
        previous = live_labels(assoc);
    }
    Ok(GlmbComponent {
        history: hist.clone(),
        log_weight,
        trajectories,
    })
}

/// `log w_{0:k}` of a history; `-inf` when it is not a valid history.
pub fn component_log_weight(hist: &AssociationHistory, ctx: &WeightContext) -> Result<f64> {
    Ok(build_component(hist, ctx)?.log_weight)
}
