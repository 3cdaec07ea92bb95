//! Linear-Gaussian single-object models: prediction, Kalman update, the
//! per-sensor detection factor and fixed-interval smoothing.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::types::{Label, MeasurementFrame, SensorIndex};

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDensity {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Config(format!(
                "covariance is {}x{} for a mean of dimension {}",
                cov.nrows(),
                cov.ncols(),
                mean.len()
            )));
        }
        Ok(GaussianDensity { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let avg = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = avg;
            m[(c, r)] = avg;
        }
    }
}

/// Cholesky factor of an SPD matrix, retrying once with
/// `1e-9 * trace / d` added to the diagonal.
pub(crate) fn cholesky_jittered(s: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(s.clone()) {
        return Ok(c);
    }
    let d = s.nrows().max(1) as f64;
    let jitter = 1e-9 * s.trace().abs() / d;
    let mut jittered = s.clone();
    for i in 0..s.nrows() {
        jittered[(i, i)] += jitter.max(f64::MIN_POSITIVE);
    }
    Cholesky::new(jittered).ok_or_else(|| {
        Error::Numerical("covariance is not positive definite after jitter".into())
    })
}

pub(crate) fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()
}

/// Constant-velocity transition model with state-independent survival.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionModel {
    pub transition: DMatrix<f64>,
    pub process_noise: DMatrix<f64>,
    survival: f64,
}

impl MotionModel {
    pub fn new(transition: DMatrix<f64>, process_noise: DMatrix<f64>, survival: f64) -> Result<Self> {
        let d = transition.nrows();
        if transition.ncols() != d || process_noise.shape() != (d, d) {
            return Err(Error::Config("transition and process noise must be square and of equal size".into()));
        }
        if !(0.0..=1.0).contains(&survival) {
            return Err(Error::Config(format!("survival probability {survival} outside [0, 1]")));
        }
        Ok(MotionModel {
            transition,
            process_noise,
            survival,
        })
    }

    /// Nearly-constant-velocity model over `axes` axes, state ordered
    /// `[p, v]` per axis, with white acceleration of standard deviation
    /// `sigma_a`.
    pub fn constant_velocity(axes: usize, dt: f64, sigma_a: f64, survival: f64) -> Result<Self> {
        let d = 2 * axes;
        let mut f = DMatrix::zeros(d, d);
        let mut q = DMatrix::zeros(d, d);
        let s2 = sigma_a * sigma_a;
        for a in 0..axes {
            let (p, v) = (2 * a, 2 * a + 1);
            f[(p, p)] = 1.0;
            f[(p, v)] = dt;
            f[(v, v)] = 1.0;
            q[(p, p)] = s2 * dt.powi(4) / 4.0;
            q[(p, v)] = s2 * dt.powi(3) / 2.0;
            q[(v, p)] = s2 * dt.powi(3) / 2.0;
            q[(v, v)] = s2 * dt * dt;
        }
        MotionModel::new(f, q, survival)
    }

    pub fn dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn survival_prob(&self, _state: &DVector<f64>, _label: Label) -> f64 {
        self.survival
    }

    /// The constant survival probability.
    pub fn survival(&self) -> f64 {
        self.survival
    }
}

/// Linear position sensor with state-independent detection and uniform
/// clutter.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorModel {
    pub observation: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    detection: f64,
    clutter: f64,
}

impl SensorModel {
    pub fn new(observation: DMatrix<f64>, noise: DMatrix<f64>, detection: f64, clutter: f64) -> Result<Self> {
        let m = observation.nrows();
        if noise.shape() != (m, m) {
            return Err(Error::Config("noise covariance must match the observation dimension".into()));
        }
        if !(0.0..=1.0).contains(&detection) {
            return Err(Error::Config(format!("detection probability {detection} outside [0, 1]")));
        }
        if !(clutter > 0.0) {
            return Err(Error::Config(format!("clutter intensity {clutter} must be positive")));
        }
        Ok(SensorModel {
            observation,
            noise,
            detection,
            clutter,
        })
    }

    /// Observes the position components of a `[p, v]`-per-axis state.
    pub fn position(axes: usize, noise_sd: f64, detection: f64, clutter: f64) -> Result<Self> {
        let mut h = DMatrix::zeros(axes, 2 * axes);
        for a in 0..axes {
            h[(a, 2 * a)] = 1.0;
        }
        let r = DMatrix::identity(axes, axes) * (noise_sd * noise_sd);
        SensorModel::new(h, r, detection, clutter)
    }

    pub fn dim(&self) -> usize {
        self.observation.nrows()
    }

    pub fn detection_prob(&self, _state: &DVector<f64>, _label: Label) -> f64 {
        self.detection
    }

    pub fn detection(&self) -> f64 {
        self.detection
    }

    pub fn clutter_intensity(&self, _z: &DVector<f64>) -> f64 {
        self.clutter
    }
}

pub fn predict(g: &GaussianDensity, model: &MotionModel) -> Result<GaussianDensity> {
    if g.dim() != model.dim() {
        return Err(Error::Config(format!(
            "state dimension {} does not match motion model dimension {}",
            g.dim(),
            model.dim()
        )));
    }
    let f = &model.transition;
    let mean = f * &g.mean;
    let mut cov = f * &g.cov * f.transpose() + &model.process_noise;
    symmetrize(&mut cov);
    Ok(GaussianDensity { mean, cov })
}

/// Kalman update; also returns `log N(z; H m, H P H' + R)`.
pub fn update(g: &GaussianDensity, sensor: &SensorModel, z: &DVector<f64>) -> Result<(GaussianDensity, f64)> {
    let h = &sensor.observation;
    if h.ncols() != g.dim() || z.len() != sensor.dim() {
        return Err(Error::Config(format!(
            "measurement of dimension {} cannot update a state of dimension {} with a {}x{} observation matrix",
            z.len(),
            g.dim(),
            h.nrows(),
            h.ncols()
        )));
    }
    let ph_t = &g.cov * h.transpose();
    let mut s = h * &ph_t + &sensor.noise;
    symmetrize(&mut s);
    let chol = cholesky_jittered(&s)?;
    let innovation = z - h * &g.mean;
    let solved = chol.solve(&innovation);
    let maha = innovation.dot(&solved);
    let m = z.len() as f64;
    let log_marginal = -0.5 * (m * (2.0 * PI).ln() + log_det(&chol) + maha);

    // K = P H' S^-1
    let gain = chol.solve(&ph_t.transpose()).transpose();
    let mean = &g.mean + &gain * innovation;
    let d = g.dim();
    let i_kh = DMatrix::identity(d, d) - &gain * h;
    let mut cov = &i_kh * &g.cov * i_kh.transpose() + &gain * &sensor.noise * gain.transpose();
    symmetrize(&mut cov);
    Ok((GaussianDensity { mean, cov }, log_marginal))
}

/// Detection factor of sensor `v` for association value `i >= 0`.
///
/// Returns the updated density (`None` when unchanged) and the log of the
/// integral of the factor against `g`.
pub fn psi_weight(
    v: usize,
    i: SensorIndex,
    g: &GaussianDensity,
    sensor: &SensorModel,
    frame: &MeasurementFrame,
) -> Result<(Option<GaussianDensity>, f64)> {
    let p_d = sensor.detection();
    if i == 0 {
        return Ok((None, (1.0 - p_d).ln()));
    }
    let z = frame.measurement(v, i)?;
    if p_d == 0.0 {
        return Ok((None, f64::NEG_INFINITY));
    }
    let (post, log_marginal) = update(g, sensor, z)?;
    let log_psi = p_d.ln() + log_marginal - sensor.clutter_intensity(z).ln();
    Ok((Some(post), log_psi))
}

#[derive(Debug)]
struct FilterNode {
    density: GaussianDensity,
    prev: Option<Arc<FilterNode>>,
}

/// Filtered densities of one label over `start..=end`, shared structurally
/// between extensions.
#[derive(Clone, Debug)]
pub struct TrajectoryPosterior {
    pub label: Label,
    pub start: usize,
    pub end: usize,
    /// Sum of the log association weights accumulated along the recursion.
    pub log_norm: f64,
    /// Set once the death step has been applied.
    pub terminated: bool,
    last: Arc<FilterNode>,
}

impl TrajectoryPosterior {
    pub fn born(label: Label, start: usize, density: GaussianDensity, log_eta: f64) -> Self {
        TrajectoryPosterior {
            label,
            start,
            end: start,
            log_norm: log_eta,
            terminated: false,
            last: Arc::new(FilterNode {
                density,
                prev: None,
            }),
        }
    }

    pub fn extended(&self, density: GaussianDensity, log_eta: f64) -> Self {
        TrajectoryPosterior {
            label: self.label,
            start: self.start,
            end: self.end + 1,
            log_norm: self.log_norm + log_eta,
            terminated: false,
            last: Arc::new(FilterNode {
                density,
                prev: Some(self.last.clone()),
            }),
        }
    }

    pub fn terminated(&self, log_eta: f64) -> Self {
        let mut out = self.clone();
        out.log_norm += log_eta;
        out.terminated = true;
        out
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last(&self) -> &GaussianDensity {
        &self.last.density
    }

    /// Filtered densities in time order.
    pub fn filtered(&self) -> Vec<GaussianDensity> {
        let mut out = Vec::with_capacity(self.len());
        let mut node = Some(&self.last);
        while let Some(n) = node {
            out.push(n.density.clone());
            node = n.prev.as_ref();
        }
        out.reverse();
        out
    }
}

/// Rauch-Tung-Striebel backward pass over the filtered sequence.
pub fn smooth(traj: &TrajectoryPosterior, model: &MotionModel) -> Result<Vec<GaussianDensity>> {
    smooth_sequence(&traj.filtered(), model)
}

pub fn smooth_sequence(filtered: &[GaussianDensity], model: &MotionModel) -> Result<Vec<GaussianDensity>> {
    let mut out = filtered.to_vec();
    let f = &model.transition;
    for i in (0..filtered.len().saturating_sub(1)).rev() {
        let cur = &filtered[i];
        let pred = predict(cur, model)?;
        let chol = cholesky_jittered(&pred.cov)?;
        // G = P F' Ppred^-1
        let gain = chol.solve(&(f * &cur.cov)).transpose();
        let next = &out[i + 1];
        let mean = &cur.mean + &gain * (&next.mean - &pred.mean);
        let mut cov = &cur.cov + &gain * (&next.cov - &pred.cov) * gain.transpose();
        symmetrize(&mut cov);
        out[i] = GaussianDensity { mean, cov };
    }
    Ok(out)
}
