//! Scan-by-scan sampler: draws scan-`j` associations conditioned on a fixed
//! prefix history.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rayon::prelude::*;

use super::{best, draw_from_tables, normalize_tables, unique, Occupancy, SamplerAudit};
use crate::error::{Error, Result};
use crate::kinematics::TrajectoryPosterior;
use crate::numeric::rng_for;
use crate::types::{
    live_labels, GlmbComponent, Label, MultiSensorAssociation, SensorIndex, MISSED,
};
use crate::weights::{entry, factor_tables_from_entry, update_trajectory, WeightContext};

/// Seed stream tag of the factor stage.
pub(crate) const FACTOR_STREAM: u64 = 1;

/// `B_j ⊎ L(γ_{j-1})` in label order.
pub(crate) fn scan_candidates(prefix: &GlmbComponent, ctx: &WeightContext, j: usize) -> Vec<Label> {
    let mut labels: BTreeSet<Label> = ctx.birth_labels(j).into_iter().collect();
    if j > 1 {
        labels.extend(live_labels(prefix.history.at(j - 1)));
    }
    labels.into_iter().collect()
}

fn frame_counts(ctx: &WeightContext, j: usize) -> Vec<usize> {
    let frame = ctx.frame(j);
    (0..ctx.sensors()).map(|v| frame.count(v)).collect()
}

fn next_scan(prefix: &GlmbComponent, ctx: &WeightContext) -> Result<usize> {
    let j = prefix.scans() + 1;
    if j > ctx.scans() {
        return Err(Error::Contract(format!(
            "prefix already covers all {} scans of the context",
            ctx.scans()
        )));
    }
    Ok(j)
}

/// One coordinate draw for `label` at the scan following `prefix`, with
/// the other labels' scan-`j` associations taken from `current`.
pub fn factor_sample_coord<R: Rng + ?Sized>(
    prefix: &GlmbComponent,
    current: &MultiSensorAssociation,
    label: Label,
    ctx: &WeightContext,
    rng: &mut R,
) -> Result<Vec<SensorIndex>> {
    let j = next_scan(prefix, ctx)?;
    if !scan_candidates(prefix, ctx, j).contains(&label) {
        return Err(Error::Contract(format!("{label} cannot exist at scan {j}")));
    }
    let e = entry(label, prefix.trajectories.get(&label), ctx, j)?;
    let mut tables = factor_tables_from_entry(&e, ctx, j)?;
    normalize_tables(&mut tables);
    let mut occ = Occupancy::new(&frame_counts(ctx, j));
    for (slot, (other, alpha)) in current.entries().enumerate() {
        if other != label {
            occ.claim(slot + 1, alpha);
        }
    }
    draw_from_tables(&tables, &occ, 0, false, rng)
}

/// `R` sweeps over scan `prefix.scans() + 1`, starting from every candidate
/// label existing and missed. Emits one extended component per sweep.
pub fn factor_gibbs<R: Rng + ?Sized>(
    prefix: &GlmbComponent,
    iterations: usize,
    ctx: &WeightContext,
    rng: &mut R,
) -> Result<Vec<GlmbComponent>> {
    let mut audit = SamplerAudit::default();
    let out = factor_gibbs_audited(prefix, iterations, ctx, rng, &mut audit)?;
    debug_assert!(audit.is_clean(), "factor sampler violated a constraint: {audit:?}");
    Ok(out)
}

pub fn factor_gibbs_audited<R: Rng + ?Sized>(
    prefix: &GlmbComponent,
    iterations: usize,
    ctx: &WeightContext,
    rng: &mut R,
    audit: &mut SamplerAudit,
) -> Result<Vec<GlmbComponent>> {
    let j = next_scan(prefix, ctx)?;
    let labels = scan_candidates(prefix, ctx, j);
    let v = ctx.sensors();
    let tables: Vec<Vec<Vec<f64>>> = labels
        .iter()
        .map(|&l| {
            let e = entry(l, prefix.trajectories.get(&l), ctx, j)?;
            let mut t = factor_tables_from_entry(&e, ctx, j)?;
            normalize_tables(&mut t);
            Ok(t)
        })
        .collect::<Result<_>>()?;

    let mut occ = Occupancy::new(&frame_counts(ctx, j));
    let mut state: Vec<Vec<SensorIndex>> = vec![vec![MISSED; v]; labels.len()];
    let mut step_cache: HashMap<(usize, Vec<SensorIndex>), (Option<TrajectoryPosterior>, f64)> =
        HashMap::new();
    let mut emitted: HashMap<Vec<Vec<SensorIndex>>, GlmbComponent> = HashMap::new();
    let mut out = Vec::with_capacity(iterations);

    for _ in 0..iterations {
        for n in 0..labels.len() {
            occ.release(n, &state[n]);
            let alpha = draw_from_tables(&tables[n], &occ, n, false, rng)?;
            occ.claim(n, &alpha);
            state[n] = alpha;
            audit.coordinates += 1;
            if !one_to_one_against(&state, n) {
                audit.one_to_one_violations += 1;
            }
        }
        if let Some(c) = emitted.get(&state) {
            out.push(c.clone());
            continue;
        }
        let mut assoc = MultiSensorAssociation::new(v);
        let mut trajectories = prefix.trajectories.clone();
        let mut log_weight = prefix.log_weight;
        for (n, &label) in labels.iter().enumerate() {
            assoc.insert(label, &state[n])?;
            let key = (n, state[n].clone());
            if !step_cache.contains_key(&key) {
                let step = update_trajectory(prefix.trajectories.get(&label), label, &state[n], ctx, j)?;
                step_cache.insert(key.clone(), step);
            }
            let (traj, eta) = &step_cache[&key];
            log_weight += eta;
            if let Some(t) = traj {
                trajectories.insert(label, t.clone());
            }
        }
        let component = GlmbComponent {
            history: prefix.history.extended(&assoc)?,
            log_weight,
            trajectories,
        };
        emitted.insert(state.clone(), component.clone());
        out.push(component);
    }
    Ok(out)
}

/// Positive indices of `state[n]` are not used by any other label.
pub(crate) fn one_to_one_against(state: &[Vec<SensorIndex>], n: usize) -> bool {
    state.iter().enumerate().all(|(m, other)| {
        m == n
            || other
                .iter()
                .zip(&state[n])
                .all(|(&a, &b)| b <= 0 || a != b)
    })
}

/// Scan-by-scan propagation keeping the `q_max` best distinct histories,
/// with `iterations` sweeps per retained component and scan.
///
/// Chains run in parallel; each one's generator is derived from `seed`, the
/// scan and the component position, so the result does not depend on the
/// thread count.
pub fn factor_sample_joint(
    q_max: usize,
    iterations: usize,
    ctx: &WeightContext,
    seed: u64,
) -> Result<Vec<GlmbComponent>> {
    if q_max == 0 || iterations == 0 {
        return Err(Error::Config("sample counts must be at least 1".into()));
    }
    let mut pool = vec![GlmbComponent::empty(ctx.sensors())];
    for j in 1..=ctx.scans() {
        pool = extend_scan(&pool, &vec![iterations; pool.len()], q_max, ctx, seed, j)?;
    }
    Ok(pool)
}

/// Runs the factor sampler from each component with its own sweep count and
/// keeps the `keep` best distinct extensions.
pub(crate) fn extend_scan(
    pool: &[GlmbComponent],
    iterations: &[usize],
    keep: usize,
    ctx: &WeightContext,
    seed: u64,
    j: usize,
) -> Result<Vec<GlmbComponent>> {
    let extended: Vec<Vec<GlmbComponent>> = pool
        .par_iter()
        .zip(iterations.par_iter())
        .enumerate()
        .map(|(q, (c, &r))| {
            let mut rng = rng_for(seed, &[FACTOR_STREAM, j as u64, q as u64]);
            factor_gibbs(c, r, ctx, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(best(unique(extended.into_iter().flatten().collect()), keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{GaussianDensity, MotionModel, SensorModel};
    use crate::numeric::normalize_log_weights;
    use crate::types::{is_positive_one_to_one, validate_history, MeasurementFrame};
    use crate::weights::{component_log_weight, BirthComponent, BirthModel, TrackingModel};
    use nalgebra::{dmatrix, dvector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;
    use std::sync::Arc;

    fn ctx(existence: f64, births: usize, frames: Vec<Vec<Vec<f64>>>) -> WeightContext {
        let motion = MotionModel::new(dmatrix![1.0], dmatrix![0.5], 0.8).unwrap();
        let v = frames.first().map_or(1, Vec::len);
        let sensors = (0..v)
            .map(|_| SensorModel::new(dmatrix![1.0], dmatrix![1.0], 0.6, 0.1).unwrap())
            .collect();
        let birth = BirthModel::Stationary(
            (0..births)
                .map(|b| BirthComponent {
                    existence,
                    density: GaussianDensity::new(dvector![b as f64], dmatrix![4.0]).unwrap(),
                })
                .collect(),
        );
        let frames = frames
            .into_iter()
            .map(|f| {
                MeasurementFrame::new(
                    f.into_iter()
                        .map(|zs| zs.into_iter().map(|z| dvector![z]).collect())
                        .collect(),
                )
            })
            .collect();
        WeightContext::new(Arc::new(TrackingModel::new(motion, sensors, birth).unwrap()), frames)
            .unwrap()
    }

    #[test]
    fn no_labels_extends_with_empty_association() {
        let c = ctx(0.5, 0, vec![vec![vec![0.1]]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = factor_gibbs(&GlmbComponent::empty(1), 1, &c, &mut rng).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].scans(), 1);
        assert!(out[0].history.at(1).is_empty());
        assert_eq!(out[0].log_weight, 0.0);
    }

    #[test]
    fn certain_birth_always_exists() {
        let c = ctx(1.0, 1, vec![vec![vec![0.1]]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cur = MultiSensorAssociation::new(1);
        for _ in 0..200 {
            let a = factor_sample_coord(&GlmbComponent::empty(1), &cur, Label::new(1, 1), &c, &mut rng).unwrap();
            assert!(a[0] >= 0);
        }
        let c = ctx(0.0, 1, vec![vec![vec![0.1]]]);
        for _ in 0..200 {
            let a = factor_sample_coord(&GlmbComponent::empty(1), &cur, Label::new(1, 1), &c, &mut rng).unwrap();
            assert_eq!(a, vec![-1]);
        }
    }

    #[test]
    fn existence_frequency_matches_closed_form() {
        let c = ctx(0.3, 1, vec![vec![vec![0.5]]]);
        let l = Label::new(1, 1);
        let w = |a: i32| {
            crate::weights::theta_factor(l, 0, a, None, &c, 1).unwrap().exp()
        };
        let p = (w(0) + w(1)) / (w(-1) + w(0) + w(1));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cur = MultiSensorAssociation::new(1);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                factor_sample_coord(&GlmbComponent::empty(1), &cur, l, &c, &mut rng).unwrap()[0] >= 0
            })
            .count() as f64;
        let sd = (p * (1.0 - p) * n as f64).sqrt();
        assert!((hits - p * n as f64).abs() < 3.0 * sd, "{hits} vs {}", p * n as f64);
    }

    #[test]
    fn single_label_law_matches_exact_conditional() {
        let c = ctx(0.4, 1, vec![vec![vec![0.5]]]);
        let l = Label::new(1, 1);
        let weights: Vec<f64> = [-1, 0, 1]
            .iter()
            .map(|&a| {
                let mut assoc = MultiSensorAssociation::new(1);
                assoc.insert(l, &[a]).unwrap();
                let mut h = crate::types::AssociationHistory::new(1);
                h.push(&assoc).unwrap();
                component_log_weight(&h, &c).unwrap()
            })
            .collect();
        let exact = normalize_log_weights(&weights);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let out = factor_gibbs(&GlmbComponent::empty(1), n, &c, &mut rng).unwrap();
        let mut counts = [0usize; 3];
        for comp in &out {
            let a = comp.history.at(1).get(l).map_or(-1, |x| x[0]);
            counts[(a + 1) as usize] += 1;
        }
        let tv: f64 = 0.5
            * counts
                .iter()
                .zip(&exact)
                .map(|(&k, &p)| (k as f64 / n as f64 - p).abs())
                .sum::<f64>();
        assert!(tv < 0.02, "tv {tv}");
        // emitted weights are the exact weights
        for comp in &out {
            let w = component_log_weight(&comp.history, &c).unwrap();
            assert!((w - comp.log_weight).abs() < 1e-12);
        }
    }

    #[test]
    fn sweeps_preserve_constraints() {
        let c = ctx(0.5, 3, vec![vec![vec![0.1, 1.2], vec![2.0]], vec![vec![0.3], vec![1.0, 2.0]]]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut audit = SamplerAudit::default();
        let first = factor_gibbs_audited(&GlmbComponent::empty(2), 200, &c, &mut rng, &mut audit).unwrap();
        for comp in first.iter().take(20) {
            let out = factor_gibbs_audited(comp, 50, &c, &mut rng, &mut audit).unwrap();
            for o in out {
                assert!(validate_history(&o.history, &c.birth_spaces()));
                assert!(is_positive_one_to_one(o.history.at(2)));
            }
        }
        assert!(audit.is_clean());
        assert!(audit.coordinates > 0);
    }

    #[test]
    fn joint_sampler_weights_and_coverage() {
        let c = ctx(0.5, 1, vec![vec![vec![0.2]]]);
        let out = factor_sample_joint(10, 500, &c, 42).unwrap();
        // three distinct histories at k = 1
        assert_eq!(out.len(), 3);
        let w = normalize_log_weights(&out.iter().map(|c| c.log_weight).collect::<Vec<_>>());
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best_only = factor_sample_joint(1, 500, &c, 42).unwrap();
        assert_eq!(best_only[0].history, out[0].history);
        let mut seen = HashMap::new();
        for comp in &out {
            seen.insert(comp.history.clone(), comp.log_weight);
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn joint_sampler_is_deterministic() {
        let c = ctx(0.5, 2, vec![vec![vec![0.2, 1.0]], vec![vec![0.4]], vec![vec![]]]);
        let a = factor_sample_joint(5, 20, &c, 7).unwrap();
        let b = factor_sample_joint(5, 20, &c, 7).unwrap();
        let ha: Vec<_> = a.iter().map(|c| c.history.clone()).collect();
        let hb: Vec<_> = b.iter().map(|c| c.history.clone()).collect();
        assert_eq!(ha, hb);
    }
}
