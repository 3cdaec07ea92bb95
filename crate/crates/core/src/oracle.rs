//! Exhaustive enumeration of valid association histories with exact
//! weights, for tiny instances.
//!
//! Weights are evaluated by re-running each label's Kalman filter from its
//! birth at every scan, independently of the trajectory recursion used by the
//! samplers.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::kinematics::{predict, update, GaussianDensity};
use crate::types::{AssociationHistory, Label, MultiSensorAssociation, SensorIndex};
use crate::weights::WeightContext;

/// Largest state space the oracle will enumerate.
pub const MAX_HISTORIES: u64 = 1_000_000;

const MAX_CANDIDATES: usize = 20;

fn injective_partial(n: usize, m: usize) -> u128 {
    // labels choose distinct positive indices or 0
    let mut total: u128 = 0;
    for used in 0..=n.min(m) {
        let choose = (0..used).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128);
        let arrange = (0..used).fold(1u128, |acc, i| acc * (m - i) as u128);
        total = total.saturating_add(choose.saturating_mul(arrange));
    }
    total
}

/// Number of valid histories of `ctx.scans()` scans.
pub fn count_histories(ctx: &WeightContext) -> Result<u128> {
    count_histories_up_to(ctx, u128::MAX)
}

/// Like [`count_histories`], but may stop early with a lower bound once the
/// count is known to exceed `stop_above`.
fn count_histories_up_to(ctx: &WeightContext, stop_above: u128) -> Result<u128> {
    let mut states: BTreeMap<Vec<Label>, u128> = BTreeMap::new();
    states.insert(Vec::new(), 1);
    for j in 1..=ctx.scans() {
        let frame = ctx.frame(j);
        let counts: Vec<usize> = (0..ctx.sensors()).map(|v| frame.count(v)).collect();
        let mut next: BTreeMap<Vec<Label>, u128> = BTreeMap::new();
        for (alive, ways) in &states {
            let mut candidates: BTreeSet<Label> = ctx.birth_labels(j).into_iter().collect();
            candidates.extend(alive.iter().copied());
            let candidates: Vec<Label> = candidates.into_iter().collect();
            if candidates.len() > MAX_CANDIDATES {
                return Ok(u128::MAX);
            }
            for mask in 0u32..(1u32 << candidates.len()) {
                let live: Vec<Label> = candidates
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, &l)| l)
                    .collect();
                let assignments = counts
                    .iter()
                    .fold(1u128, |acc, &m| acc.saturating_mul(injective_partial(live.len(), m)));
                let e = next.entry(live).or_insert(0);
                *e = e.saturating_add(ways.saturating_mul(assignments));
            }
        }
        states = next;
        // every partial history has at least one continuation
        let partial = states.values().fold(0u128, |a, &b| a.saturating_add(b));
        if partial > stop_above {
            return Ok(partial);
        }
    }
    Ok(states.values().fold(0u128, |a, &b| a.saturating_add(b)))
}

struct Enumerator<'a> {
    ctx: &'a WeightContext,
    out: Vec<AssociationHistory>,
}

impl Enumerator<'_> {
    fn scan(&mut self, hist: &AssociationHistory) -> Result<()> {
        let j = hist.scans() + 1;
        if j > self.ctx.scans() {
            self.out.push(hist.clone());
            return Ok(());
        }
        let mut candidates: BTreeSet<Label> = self.ctx.birth_labels(j).into_iter().collect();
        if j > 1 {
            candidates.extend(crate::types::live_labels(hist.at(j - 1)));
        }
        let candidates: Vec<Label> = candidates.into_iter().collect();
        let mut assoc = MultiSensorAssociation::new(self.ctx.sensors());
        self.label(hist, j, &candidates, 0, &mut assoc)
    }

    fn label(
        &mut self,
        hist: &AssociationHistory,
        j: usize,
        candidates: &[Label],
        n: usize,
        assoc: &mut MultiSensorAssociation,
    ) -> Result<()> {
        if n == candidates.len() {
            let extended = hist.extended(assoc)?;
            return self.scan(&extended);
        }
        // not existing
        self.label(hist, j, candidates, n + 1, assoc)?;
        let frame = self.ctx.frame(j);
        let v = self.ctx.sensors();
        let counts: Vec<usize> = (0..v).map(|s| frame.count(s)).collect();
        let total: usize = counts.iter().map(|m| m + 1).product();
        for code in 0..total {
            let mut rest = code;
            let alpha: Vec<SensorIndex> = counts
                .iter()
                .map(|&m| {
                    let a = rest % (m + 1);
                    rest /= m + 1;
                    a as SensorIndex
                })
                .collect();
            let clash = assoc.entries().any(|(_, other)| {
                other.iter().zip(&alpha).any(|(&x, &y)| y > 0 && x == y)
            });
            if clash {
                continue;
            }
            let mut with = assoc.clone();
            with.insert(candidates[n], &alpha)?;
            self.label(hist, j, candidates, n + 1, &mut with)?;
        }
        Ok(())
    }
}

/// Filtered density of `label` at scan `through`, re-run from its birth.
fn filter_from_birth(
    label: Label,
    hist: &AssociationHistory,
    ctx: &WeightContext,
    through: usize,
) -> Result<GaussianDensity> {
    let comp = ctx
        .model
        .birth
        .component(label)
        .ok_or_else(|| Error::Contract(format!("{label} is not a birth label")))?;
    let mut g = comp.density.clone();
    for t in label.birth_time..=through {
        if t > label.birth_time {
            g = predict(&g, &ctx.model.motion)?;
        }
        let alpha = hist.at(t).get(label).expect("alive on its run");
        g = detect(&g, alpha, ctx, t)?.0;
    }
    Ok(g)
}

fn detect(
    g: &GaussianDensity,
    alpha: &[SensorIndex],
    ctx: &WeightContext,
    t: usize,
) -> Result<(GaussianDensity, f64)> {
    let mut g = g.clone();
    let mut log_psi = 0.0;
    for (v, (&a, sensor)) in alpha.iter().zip(&ctx.model.sensors).enumerate() {
        if a == 0 {
            log_psi += (1.0 - sensor.detection()).ln();
            continue;
        }
        let z: &DVector<f64> = ctx.frame(t).measurement(v, a)?;
        let (post, ll) = update(&g, sensor, z)?;
        log_psi += sensor.detection().ln() + ll - sensor.clutter_intensity(z).ln();
        g = post;
    }
    Ok((g, log_psi))
}

/// Exact `log w_{0:k}` of a valid history by direct per-scan evaluation.
pub fn oracle_log_weight(hist: &AssociationHistory, ctx: &WeightContext) -> Result<f64> {
    let mut total = 0.0;
    let p_s = ctx.model.motion.survival();
    for j in 1..=hist.scans() {
        let mut candidates: BTreeSet<Label> = ctx.birth_labels(j).into_iter().collect();
        if j > 1 {
            candidates.extend(crate::types::live_labels(hist.at(j - 1)));
        }
        for label in candidates {
            let comp = ctx.model.birth.component(label);
            let alpha = hist.at(j).get(label);
            total += match (alpha, label.birth_time == j) {
                (None, true) => (1.0 - comp.expect("birth label").existence).ln(),
                (None, false) => (1.0 - p_s).ln(),
                (Some(a), true) => {
                    let prior = comp.expect("birth label").density.clone();
                    comp.expect("birth label").existence.ln() + detect(&prior, a, ctx, j)?.1
                }
                (Some(a), false) => {
                    let prev = filter_from_birth(label, hist, ctx, j - 1)?;
                    let prior = predict(&prev, &ctx.model.motion)?;
                    p_s.ln() + detect(&prior, a, ctx, j)?.1
                }
            };
        }
    }
    Ok(total)
}

/// Every valid history of `ctx.scans()` scans with its exact log weight.
pub fn enumerate_histories(ctx: &WeightContext) -> Result<Vec<(AssociationHistory, f64)>> {
    let count = count_histories_up_to(ctx, MAX_HISTORIES as u128)?;
    if count > MAX_HISTORIES as u128 {
        return Err(Error::StateSpaceOverflow {
            count: count.min(u64::MAX as u128) as u64,
            limit: MAX_HISTORIES,
        });
    }
    let mut e = Enumerator {
        ctx,
        out: Vec::new(),
    };
    e.scan(&AssociationHistory::new(ctx.sensors()))?;
    e.out
        .into_iter()
        .map(|h| {
            let w = oracle_log_weight(&h, ctx)?;
            Ok((h, w))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{MotionModel, SensorModel};
    use crate::numeric::normalize_log_weights;
    use crate::types::{validate_history, MeasurementFrame};
    use crate::weights::{component_log_weight, BirthComponent, BirthModel, TrackingModel};
    use nalgebra::{dmatrix, dvector};
    use std::collections::HashSet;
    use std::sync::Arc;

    fn ctx(births: usize, frames: Vec<Vec<Vec<f64>>>, scheduled: bool) -> WeightContext {
        let motion = MotionModel::new(dmatrix![1.0], dmatrix![0.5], 0.8).unwrap();
        let v = frames.first().map_or(1, Vec::len);
        let sensors = (0..v)
            .map(|_| SensorModel::new(dmatrix![1.0], dmatrix![1.0], 0.6, 0.1).unwrap())
            .collect();
        let comps: Vec<BirthComponent> = (0..births)
            .map(|b| BirthComponent {
                existence: 0.4,
                density: GaussianDensity::new(dvector![b as f64], dmatrix![4.0]).unwrap(),
            })
            .collect();
        let birth = if scheduled {
            BirthModel::Scheduled([(1, comps)].into_iter().collect())
        } else {
            BirthModel::Stationary(comps)
        };
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
    fn one_label_one_measurement_has_three_histories() {
        let c = ctx(1, vec![vec![vec![0.5]]], false);
        let all = enumerate_histories(&c).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(count_histories(&c).unwrap(), 3);
    }

    #[test]
    fn two_scan_count_follows_recurrence() {
        // one label born at scan 1 only, one measurement per scan: dead at 1
        // stays dead (1), alive at 1 (2 ways) then dead (1) or alive (2 ways).
        let c = ctx(1, vec![vec![vec![0.5]], vec![vec![0.7]]], true);
        let all = enumerate_histories(&c).unwrap();
        assert_eq!(all.len(), 1 + 2 * (1 + 2));
        assert_eq!(count_histories(&c).unwrap(), 7);
    }

    #[test]
    fn one_to_one_excludes_one_pair() {
        let c = ctx(2, vec![vec![vec![0.5]]], false);
        assert_eq!(enumerate_histories(&c).unwrap().len(), 8);
    }

    #[test]
    fn histories_are_distinct_valid_and_weights_agree() {
        let c = ctx(
            2,
            vec![vec![vec![0.5], vec![0.1, 1.0]], vec![vec![], vec![0.3]]],
            false,
        );
        let all = enumerate_histories(&c).unwrap();
        let set: HashSet<_> = all.iter().map(|(h, _)| h.clone()).collect();
        assert_eq!(set.len(), all.len());
        assert_eq!(count_histories(&c).unwrap(), all.len() as u128);
        for (h, w) in &all {
            assert!(validate_history(h, &c.birth_spaces()));
            let other = component_log_weight(h, &c).unwrap();
            assert!((w - other).abs() < 1e-10 * (1.0 + w.abs()), "{w} vs {other}");
        }
        let norm = normalize_log_weights(&all.iter().map(|x| x.1).collect::<Vec<_>>());
        assert!((norm.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refuses_large_spaces_with_the_count() {
        let frames = vec![vec![vec![0.1, 0.2, 0.3, 0.4]; 2]; 6];
        let c = ctx(3, frames, false);
        match enumerate_histories(&c) {
            Err(Error::StateSpaceOverflow { count, limit }) => {
                assert!(count > limit);
            }
            other => panic!("expected overflow, got {:?}", other.map(|v| v.len())),
        }
    }
}
