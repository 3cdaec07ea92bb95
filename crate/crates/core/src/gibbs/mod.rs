//! Gibbs samplers over association histories: the scan-by-scan factor
//! sampler and the full space-time sampler, plus their shared per-coordinate
//! machinery.

pub mod factor;
pub mod full;

use std::collections::HashSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{log_add_exp, log_sum_exp};
use crate::types::{AssociationHistory, GlmbComponent, SensorIndex, NOT_EXISTING};

pub use factor::{factor_gibbs, factor_gibbs_audited, factor_sample_coord, factor_sample_joint};
pub use full::{full_gibbs, full_gibbs_audited, full_sample_coord, future_mask, FullChain};

const NO_OWNER: usize = usize::MAX;

/// One-to-one exclusion: 0 when `candidate` is a positive index already used by
/// another label at this sensor, 1 otherwise.
pub fn beta_mask(candidate: SensorIndex, others: &[SensorIndex], measurement_count: usize) -> u8 {
    let positive = candidate >= 1 && candidate as usize <= measurement_count;
    u8::from(!(positive && others.contains(&candidate)))
}

/// Which label slot holds each positive measurement index, per sensor.
#[derive(Clone, Debug)]
pub struct Occupancy {
    owners: Vec<Vec<usize>>,
}

impl Occupancy {
    pub fn new(counts: &[usize]) -> Self {
        Occupancy {
            owners: counts.iter().map(|&m| vec![NO_OWNER; m]).collect(),
        }
    }

    pub fn release(&mut self, slot: usize, alpha: &[SensorIndex]) {
        for (v, &a) in alpha.iter().enumerate() {
            if a > 0 && self.owners[v][a as usize - 1] == slot {
                self.owners[v][a as usize - 1] = NO_OWNER;
            }
        }
    }

    pub fn claim(&mut self, slot: usize, alpha: &[SensorIndex]) {
        for (v, &a) in alpha.iter().enumerate() {
            if a > 0 {
                self.owners[v][a as usize - 1] = slot;
            }
        }
    }

    /// Whether index `i >= 1` of sensor `v` is free for `slot`.
    pub fn is_free(&self, v: usize, i: usize, slot: usize) -> bool {
        let owner = self.owners[v][i - 1];
        owner == NO_OWNER || owner == slot
    }
}

/// Subtracts each table's log-sum-exp so every table sums to one over
/// `{-1, 0, ..., M}`.
pub(crate) fn normalize_tables(tables: &mut [Vec<f64>]) {
    for t in tables {
        let z = log_sum_exp(t);
        if z.is_finite() {
            t.iter_mut().for_each(|x| *x -= z);
        }
    }
}

/// `log Υ_v` per sensor: the log mass of the live values allowed by the
/// masks.
fn log_upsilon(tables: &[Vec<f64>], occ: &Occupancy, slot: usize) -> Vec<f64> {
    tables
        .iter()
        .enumerate()
        .map(|(v, t)| {
            let live: Vec<f64> = t[1..]
                .iter()
                .enumerate()
                .filter(|&(a, _)| a == 0 || occ.is_free(v, a, slot))
                .map(|(_, &x)| x)
                .collect();
            log_sum_exp(&live)
        })
        .collect()
}

/// Probability of the existence branch,
/// `∏Υ / (∏ϑ(-1) + ∏Υ)`, with the absent branch optionally masked out.
pub fn existence_probability(tables: &[Vec<f64>], occ: &Occupancy, slot: usize, forbid_absent: bool) -> f64 {
    let log_up: f64 = log_upsilon(tables, occ, slot).iter().sum();
    let log_absent = if forbid_absent {
        f64::NEG_INFINITY
    } else {
        tables.iter().map(|t| t[0]).sum()
    };
    let denom = log_add_exp(log_absent, log_up);
    if denom == f64::NEG_INFINITY || log_up == f64::NEG_INFINITY {
        return 0.0;
    }
    (log_up - denom).exp()
}

fn categorical<R: Rng + ?Sized>(log_mass: &[f64], rng: &mut R) -> Option<usize> {
    let max = log_mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mass: Vec<f64> = log_mass.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = mass.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &m) in mass.iter().enumerate() {
        if m > 0.0 {
            last = Some(i);
            if u < m {
                return Some(i);
            }
            u -= m;
        }
    }
    last
}

/// Draws the live branch: per sensor in order, a categorical over
/// `{0, ..., M_v}` with mass `ϑ · β`. Falls back to a miss when every mass
/// at a sensor is zero.
///
/// `_p_plus` scales every mass of the first sensor equally, so it does not
/// change the draw; it is kept to mirror the conditional's structure.
pub fn sample_coord<R: Rng + ?Sized>(
    _p_plus: f64,
    tables: &[Vec<f64>],
    occ: &Occupancy,
    slot: usize,
    rng: &mut R,
) -> Vec<SensorIndex> {
    tables
        .iter()
        .enumerate()
        .map(|(v, t)| {
            let masked: Vec<f64> = t[1..]
                .iter()
                .enumerate()
                .map(|(a, &x)| {
                    if a == 0 || occ.is_free(v, a, slot) {
                        x
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            categorical(&masked, rng).map_or(0, |a| a as SensorIndex)
        })
        .collect()
}

/// Existence flip followed by [`sample_coord`] on the live branch.
pub(crate) fn draw_from_tables<R: Rng + ?Sized>(
    tables: &[Vec<f64>],
    occ: &Occupancy,
    slot: usize,
    forbid_absent: bool,
    rng: &mut R,
) -> Result<Vec<SensorIndex>> {
    let p = existence_probability(tables, occ, slot, forbid_absent);
    if forbid_absent && p == 0.0 {
        return Err(Error::Invariant(
            "label must exist at this scan but every live association has zero weight".into(),
        ));
    }
    let u = rng.random::<f64>();
    if u < p {
        Ok(sample_coord(p, tables, occ, slot, rng))
    } else {
        Ok(vec![NOT_EXISTING; tables.len()])
    }
}

/// Counts of sampled coordinates and of constraint violations found by the
/// inline checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SamplerAudit {
    pub coordinates: u64,
    pub one_to_one_violations: u64,
    pub resurrections: u64,
}

impl SamplerAudit {
    pub fn is_clean(&self) -> bool {
        self.one_to_one_violations == 0 && self.resurrections == 0
    }

    pub fn merge(&mut self, other: &SamplerAudit) {
        self.coordinates += other.coordinates;
        self.one_to_one_violations += other.one_to_one_violations;
        self.resurrections += other.resurrections;
    }
}

/// Drops repeated histories, keeping the first occurrence.
pub fn unique(components: Vec<GlmbComponent>) -> Vec<GlmbComponent> {
    let mut seen: HashSet<AssociationHistory> = HashSet::new();
    components
        .into_iter()
        .filter(|c| seen.insert(c.history.clone()))
        .collect()
}

/// Sorts by log weight descending, then canonical bytes ascending, and keeps
/// the first `n`.
pub fn best(mut components: Vec<GlmbComponent>, n: usize) -> Vec<GlmbComponent> {
    let mut keyed: Vec<(Vec<u8>, GlmbComponent)> = components
        .drain(..)
        .map(|c| (c.history.canonical_bytes(), c))
        .collect();
    keyed.sort_by(|(ba, a), (bb, b)| {
        b.log_weight
            .total_cmp(&a.log_weight)
            .then_with(|| ba.cmp(bb))
    });
    keyed.truncate(n);
    keyed.into_iter().map(|(_, c)| c).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn beta_mask_examples() {
        assert_eq!(beta_mask(0, &[0, 1, 2], 3), 1);
        assert_eq!(beta_mask(-1, &[1, 2, 3], 3), 1);
        assert_eq!(beta_mask(3, &[1, 3], 3), 0);
        assert_eq!(beta_mask(2, &[1, 3], 3), 1);
    }

    #[test]
    fn single_sensor_draw_frequency() {
        // ϑ(0) = 1, ϑ(1) = 3 → P(1 | live) = 0.75
        let tables = vec![vec![f64::NEG_INFINITY, 0.0, 3f64.ln()]];
        let occ = Occupancy::new(&[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample_coord(1.0, &tables, &occ, 0, &mut rng)[0] == 1)
            .count() as f64;
        let p = 0.75;
        let sd = (p * (1.0 - p) * n as f64).sqrt();
        assert!((hits - p * n as f64).abs() < 3.0 * sd);
    }

    #[test]
    fn claimed_measurements_force_misses() {
        let tables = vec![vec![0.0, 0.0, 5.0, 5.0]];
        let mut occ = Occupancy::new(&[2]);
        occ.claim(1, &[1]);
        occ.claim(2, &[2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(sample_coord(1.0, &tables, &occ, 0, &mut rng), vec![0]);
        }
    }

    #[test]
    fn two_sensor_draws_factorize() {
        let tables = vec![
            vec![f64::NEG_INFINITY, 0.0, 1f64.ln()],
            vec![f64::NEG_INFINITY, 2f64.ln(), 0.0, 1f64.ln()],
        ];
        let occ = Occupancy::new(&[1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut counts = [[0usize; 3]; 2];
        for _ in 0..n {
            let a = sample_coord(1.0, &tables, &occ, 0, &mut rng);
            counts[a[0] as usize][a[1] as usize] += 1;
        }
        let p1 = [0.5, 0.5];
        let p2 = [0.5, 0.25, 0.25];
        for a in 0..2 {
            for b in 0..3 {
                let p = p1[a] * p2[b];
                let sd = (p * (1.0 - p) * n as f64).sqrt();
                assert!((counts[a][b] as f64 - p * n as f64).abs() < 4.0 * sd);
            }
        }
    }

    #[test]
    fn existence_probability_degenerate_cases() {
        let occ = Occupancy::new(&[1]);
        let always = vec![vec![f64::NEG_INFINITY, 0.0, 0.0]];
        assert_eq!(existence_probability(&always, &occ, 0, false), 1.0);
        let never = vec![vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]];
        assert_eq!(existence_probability(&never, &occ, 0, false), 0.0);
        let even = vec![vec![0.0, 0.0, f64::NEG_INFINITY]];
        assert!((existence_probability(&even, &occ, 0, false) - 0.5).abs() < 1e-15);
        assert_eq!(existence_probability(&even, &occ, 0, true), 1.0);
    }

    #[test]
    fn forbidden_absence_without_live_mass_is_an_invariant_error() {
        let occ = Occupancy::new(&[0]);
        let tables = vec![vec![0.0, f64::NEG_INFINITY]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            draw_from_tables(&tables, &occ, 0, true, &mut rng),
            Err(Error::Invariant(_))
        ));
    }
}
