//! Posterior drivers (batch and smoothing-while-filtering), the trajectory
//! estimator and posterior statistics.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::factor::extend_scan;
use crate::gibbs::{best, factor_sample_joint, full_gibbs, unique};
use crate::kinematics::{smooth, MotionModel};
use crate::numeric::{normalize_log_weights, rng_for};
use crate::types::{live_labels, GlmbComponent, Label};
use crate::weights::WeightContext;

/// Seed stream tag of the full-sampler stage.
const FULL_STREAM: u64 = 2;

/// Truncated GLMB posterior: distinct components with normalized weights,
/// best first.
#[derive(Clone, Debug)]
pub struct GlmbPosterior {
    pub scans: usize,
    pub components: Vec<GlmbComponent>,
    pub weights: Vec<f64>,
}

impl GlmbPosterior {
    /// The prior at scan 0: no objects, weight 1.
    pub fn initial(sensors: usize) -> Self {
        GlmbPosterior {
            scans: 0,
            components: vec![GlmbComponent::empty(sensors)],
            weights: vec![1.0],
        }
    }

    /// Drops zero-weight components, deduplicates, keeps the `keep` best and
    /// normalizes.
    pub fn from_pool(pool: Vec<GlmbComponent>, keep: usize, scans: usize) -> Result<Self> {
        let live = pool.into_iter().filter(|c| c.log_weight > f64::NEG_INFINITY).collect();
        let components = best(unique(live), keep);
        let log_w: Vec<f64> = components.iter().map(|c| c.log_weight).collect();
        if components.is_empty() {
            return Err(Error::Numerical("no component with positive weight".into()));
        }
        let weights = normalize_log_weights(&log_w);
        Ok(GlmbPosterior {
            scans,
            components,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchParams {
    /// Components kept by the factor stage at each scan.
    pub factor_keep: usize,
    /// Factor sweeps per kept component and scan.
    pub factor_iterations: usize,
    /// Factor-stage components that seed full-sampler chains.
    pub chains: usize,
    /// Full sweeps per chain.
    pub sweeps: usize,
    /// Components kept in the posterior.
    pub keep: usize,
}

fn full_stage(
    seeds: &[GlmbComponent],
    sweeps: usize,
    ctx: &WeightContext,
    seed: u64,
    scan: usize,
) -> Result<Vec<GlmbComponent>> {
    if sweeps == 0 {
        return Ok(seeds.to_vec());
    }
    let chains: Vec<Vec<GlmbComponent>> = seeds
        .par_iter()
        .enumerate()
        .map(|(q, c)| {
            let mut rng = rng_for(seed, &[FULL_STREAM, scan as u64, q as u64]);
            full_gibbs(c, sweeps, ctx, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut pool = seeds.to_vec();
    pool.extend(chains.into_iter().flatten());
    Ok(pool)
}

/// Batch posterior over all scans of `ctx`: factor initialization, then
/// full-sampler refinement from the best factor components.
pub fn batch(ctx: &WeightContext, params: &BatchParams, seed: u64) -> Result<GlmbPosterior> {
    let BatchParams {
        factor_keep,
        factor_iterations,
        chains,
        sweeps,
        keep,
    } = *params;
    if factor_keep == 0 || factor_iterations == 0 || chains == 0 || keep == 0 {
        return Err(Error::Config("batch sample counts must be at least 1".into()));
    }
    if chains > factor_keep {
        return Err(Error::Config(format!(
            "chains ({chains}) cannot exceed the factor components kept ({factor_keep})"
        )));
    }
    let k = ctx.scans();
    let initial = factor_sample_joint(factor_keep, factor_iterations, ctx, seed)?;
    let seeds = best(initial, chains);
    let pool = full_stage(&seeds, sweeps, ctx, seed, k)?;
    GlmbPosterior::from_pool(pool, keep, k)
}

/// Splits `budget` factor sweeps across components in proportion to their
/// weights, at least one each; the total equals `budget` whenever
/// `budget >= weights.len()`.
pub fn allocate_sweeps(weights: &[f64], budget: usize) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let spare = budget.saturating_sub(n);
    let total: f64 = weights.iter().sum();
    let shares: Vec<f64> = weights
        .iter()
        .map(|w| {
            if total > 0.0 {
                w / total * spare as f64
            } else {
                spare as f64 / n as f64
            }
        })
        .collect();
    let mut alloc: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut left = spare - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        alloc[i] += 1;
        left -= 1;
    }
    alloc.iter().map(|a| a + 1).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecursiveParams {
    /// Total factor sweeps per scan, split across components by weight.
    pub factor_budget: usize,
    /// Components kept after the factor stage.
    pub factor_keep: usize,
    /// Full sweeps per component; 0 gives a pure filter.
    pub sweeps: usize,
    /// Components kept in the posterior.
    pub keep: usize,
}

/// Advances `prev` (over scans `1..k-1`) by scan `k = prev.scans + 1`,
/// using the frames of `ctx`.
pub fn smoothing_while_filtering(
    prev: &GlmbPosterior,
    ctx: &WeightContext,
    params: &RecursiveParams,
    seed: u64,
) -> Result<GlmbPosterior> {
    let k = prev.scans + 1;
    if k > ctx.scans() {
        return Err(Error::Contract(format!("no frame for scan {k}")));
    }
    if params.factor_budget == 0 || params.factor_keep == 0 || params.keep == 0 {
        return Err(Error::Config("recursive sample counts must be at least 1".into()));
    }
    let iterations = allocate_sweeps(&prev.weights, params.factor_budget);
    let extended = extend_scan(&prev.components, &iterations, params.factor_keep, ctx, seed, k)?;
    let pool = full_stage(&extended, params.sweeps, ctx, seed, k)?;
    GlmbPosterior::from_pool(pool, params.keep, k)
}

/// Runs [`smoothing_while_filtering`] over every scan of `ctx`, handing each
/// intermediate posterior to `observe`.
pub fn run_recursive<F>(
    ctx: &WeightContext,
    params: &RecursiveParams,
    seed: u64,
    mut observe: F,
) -> Result<GlmbPosterior>
where
    F: FnMut(&GlmbPosterior) -> Result<()>,
{
    let mut post = GlmbPosterior::initial(ctx.sensors());
    for _ in 0..ctx.scans() {
        post = smoothing_while_filtering(&post, ctx, params, seed)?;
        observe(&post)?;
    }
    Ok(post)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EstimateMode {
    Filtered,
    #[default]
    Smoothed,
}

/// Estimated trajectory of one label over `start..=end`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackEstimate {
    pub label: Label,
    pub start: usize,
    pub end: usize,
    pub means: Vec<DVector<f64>>,
}

/// Distribution of `f(component)` under the posterior weights.
fn distribution<F>(post: &GlmbPosterior, f: F) -> BTreeMap<usize, f64>
where
    F: Fn(&GlmbComponent) -> usize,
{
    let mut out = BTreeMap::new();
    for (c, &w) in post.components.iter().zip(&post.weights) {
        *out.entry(f(c)).or_insert(0.0) += w;
    }
    out
}

/// Most probable value, smallest on ties.
fn most_probable(dist: &BTreeMap<usize, f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (&n, &p) in dist {
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((n, p));
        }
    }
    best.map(|(n, _)| n)
}

/// Highest-weight component satisfying `pred`, first on ties.
fn best_with<F>(post: &GlmbPosterior, pred: F) -> Option<&GlmbComponent>
where
    F: Fn(&GlmbComponent) -> bool,
{
    let mut best: Option<(usize, f64)> = None;
    for (i, (c, &w)) in post.components.iter().zip(&post.weights).enumerate() {
        if pred(c) && best.is_none_or(|(_, bw)| w > bw) {
            best = Some((i, w));
        }
    }
    best.map(|(i, _)| &post.components[i])
}

/// Trajectory estimates: the most probable number of trajectories, then the
/// best component with that many, with smoothed or filtered means.
pub fn estimate(post: &GlmbPosterior, mode: EstimateMode, motion: &MotionModel) -> Result<Vec<TrackEstimate>> {
    let card = distribution(post, GlmbComponent::cardinality);
    let Some(n_star) = most_probable(&card) else {
        return Ok(Vec::new());
    };
    let comp = best_with(post, |c| c.cardinality() == n_star).expect("mode is attained");
    comp.trajectories
        .values()
        .map(|t| {
            let densities = match mode {
                EstimateMode::Filtered => t.filtered(),
                EstimateMode::Smoothed => smooth(t, motion)?,
            };
            Ok(TrackEstimate {
                label: t.label,
                start: t.start,
                end: t.end,
                means: densities.into_iter().map(|g| g.mean).collect(),
            })
        })
        .collect()
}

/// Filter output at the last scan: the most probable number of live
/// objects, then the best component with that many, with filtered means.
pub fn filter_estimate(post: &GlmbPosterior) -> Vec<(Label, DVector<f64>)> {
    let k = post.scans;
    if k == 0 {
        return Vec::new();
    }
    let live = |c: &GlmbComponent| live_labels(c.history.at(k)).len();
    let card = distribution(post, live);
    let Some(n_star) = most_probable(&card) else {
        return Vec::new();
    };
    let comp = best_with(post, |c| live(c) == n_star).expect("mode is attained");
    live_labels(comp.history.at(k))
        .into_iter()
        .map(|l| (l, comp.trajectories[&l].last().mean.clone()))
        .collect()
}

/// Ensemble statistics of a posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorStatistics {
    /// Number of trajectories.
    pub cardinality: BTreeMap<usize, f64>,
    /// Number of trajectories starting at scan `u`, for `u = 1..=k`.
    pub births: Vec<BTreeMap<usize, f64>>,
    /// Number of trajectories whose last live scan is `u`, for `u = 1..=k`.
    pub deaths: Vec<BTreeMap<usize, f64>>,
    /// Trajectory length, over components with at least one trajectory;
    /// a point mass at 0 when there are none.
    pub lengths: BTreeMap<usize, f64>,
}

/// Computed from the association histories alone, so trajectory densities
/// may be absent.
pub fn statistics(post: &GlmbPosterior) -> PosteriorStatistics {
    let k = post.scans;
    let spans = |c: &GlmbComponent| -> Vec<(usize, usize)> {
        let labels: BTreeSet<Label> = c.history.labels();
        labels
            .into_iter()
            .filter_map(|l| c.history.span(l))
            .collect()
    };
    let cardinality = distribution(post, |c| spans(c).len());
    let births = (1..=k)
        .map(|u| distribution(post, |c| spans(c).iter().filter(|s| s.0 == u).count()))
        .collect();
    let deaths = (1..=k)
        .map(|u| distribution(post, |c| spans(c).iter().filter(|s| s.1 == u).count()))
        .collect();

    let mut lengths: BTreeMap<usize, f64> = BTreeMap::new();
    let mut mass = 0.0;
    for (c, &w) in post.components.iter().zip(&post.weights) {
        let s = spans(c);
        if s.is_empty() {
            continue;
        }
        mass += w;
        let each = w / s.len() as f64;
        for (start, end) in s {
            *lengths.entry(end - start + 1).or_insert(0.0) += each;
        }
    }
    if mass > 0.0 {
        lengths.values_mut().for_each(|p| *p /= mass);
    } else {
        lengths.insert(0, 1.0);
    }
    PosteriorStatistics {
        cardinality,
        births,
        deaths,
        lengths,
    }
}
