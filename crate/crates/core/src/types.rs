//! Labels, association maps and histories, measurement frames and GLMB
//! components.
//!
//! Association values follow the usual tracking convention per sensor:
//! `-1` means the label does not exist, `0` means it exists but was missed,
//! and `i > 0` means it generated the `i`-th measurement (1-based).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::TrajectoryPosterior;

/// Per-sensor association value, see the module docs.
pub type SensorIndex = i32;

pub const NOT_EXISTING: SensorIndex = -1;
pub const MISSED: SensorIndex = 0;

/// Object identity: birth scan and an index among objects born at that scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Label {
    pub birth_time: usize,
    pub birth_index: usize,
}

impl Label {
    pub fn new(birth_time: usize, birth_index: usize) -> Self {
        Label {
            birth_time,
            birth_index,
        }
    }
}

impl From<(usize, usize)> for Label {
    fn from((s, i): (usize, usize)) -> Self {
        Label::new(s, i)
    }
}

impl From<Label> for (usize, usize) {
    fn from(l: Label) -> Self {
        (l.birth_time, l.birth_index)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.birth_time, self.birth_index)
    }
}

/// True when every entry is `-1`.
pub fn is_not_existing(alpha: &[SensorIndex]) -> bool {
    alpha.iter().all(|&a| a == NOT_EXISTING)
}

/// True when every entry is `>= 0`, i.e. the vector lies in the live space.
pub fn is_live(alpha: &[SensorIndex]) -> bool {
    !alpha.is_empty() && alpha.iter().all(|&a| a >= 0)
}

/// Multi-sensor association map at one scan.
///
/// Labels not listed are implicitly `-1^V`. Entries are kept sorted by label.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiSensorAssociation {
    sensors: usize,
    labels: Vec<Label>,
    indices: Vec<SensorIndex>,
}

impl MultiSensorAssociation {
    pub fn new(sensors: usize) -> Self {
        MultiSensorAssociation {
            sensors,
            labels: Vec::new(),
            indices: Vec::new(),
        }
    }

    pub fn from_entries<I>(sensors: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Label, Vec<SensorIndex>)>,
    {
        let mut out = MultiSensorAssociation::new(sensors);
        for (label, alpha) in entries {
            out.insert(label, &alpha)?;
        }
        Ok(out)
    }

    /// Inserts or replaces the vector for `label`.
    pub fn insert(&mut self, label: Label, alpha: &[SensorIndex]) -> Result<()> {
        if alpha.len() != self.sensors {
            return Err(Error::Contract(format!(
                "association vector for {label} has {} entries, expected {}",
                alpha.len(),
                self.sensors
            )));
        }
        if let Some(&bad) = alpha.iter().find(|&&a| a < NOT_EXISTING) {
            return Err(Error::Contract(format!(
                "association value {bad} for {label} is below -1"
            )));
        }
        let v = self.sensors;
        match self.labels.binary_search(&label) {
            Ok(pos) => self.indices[pos * v..(pos + 1) * v].copy_from_slice(alpha),
            Err(pos) => {
                self.labels.insert(pos, label);
                let at = pos * v;
                self.indices.splice(at..at, alpha.iter().copied());
            }
        }
        Ok(())
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Stored vector of `label`; `None` stands for the implicit `-1^V`.
    pub fn get(&self, label: Label) -> Option<&[SensorIndex]> {
        let v = self.sensors;
        self.labels
            .binary_search(&label)
            .ok()
            .map(|pos| &self.indices[pos * v..(pos + 1) * v])
    }

    pub fn is_alive(&self, label: Label) -> bool {
        self.get(label).is_some_and(is_live)
    }

    pub fn entries(&self) -> impl Iterator<Item = (Label, &[SensorIndex])> + '_ {
        self.labels
            .iter()
            .copied()
            .zip(self.indices.chunks(self.sensors.max(1)))
    }

    /// Every vector is either `-1^V` or entirely non-negative.
    pub fn is_well_formed(&self) -> bool {
        self.entries()
            .all(|(_, a)| is_not_existing(a) || is_live(a))
    }

    /// Copy without explicit `-1^V` entries.
    pub fn normalized(&self) -> Self {
        let mut out = MultiSensorAssociation::new(self.sensors);
        for (label, alpha) in self.entries() {
            if !is_not_existing(alpha) {
                out.labels.push(label);
                out.indices.extend_from_slice(alpha);
            }
        }
        out
    }
}

/// No two labels share a positive measurement index at any sensor.
pub fn is_positive_one_to_one(assoc: &MultiSensorAssociation) -> bool {
    for v in 0..assoc.sensors() {
        let mut seen = BTreeSet::new();
        for (_, alpha) in assoc.entries() {
            if alpha[v] > 0 && !seen.insert(alpha[v]) {
                return false;
            }
        }
    }
    true
}

/// Labels whose vector lies in the live space.
pub fn live_labels(assoc: &MultiSensorAssociation) -> BTreeSet<Label> {
    assoc
        .entries()
        .filter(|(_, a)| is_live(a))
        .map(|(l, _)| l)
        .collect()
}

/// Association history `γ_{1:k}`; scan 0 is empty by convention.
///
/// Only live entries are stored, which makes the derived equality, ordering
/// and hash canonical.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AssociationHistory {
    sensors: usize,
    scans: Vec<MultiSensorAssociation>,
}

/// One label's contiguous run of association vectors, starting at its birth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub label: Label,
    pub assocs: Vec<Vec<SensorIndex>>,
}

impl AssociationHistory {
    pub fn new(sensors: usize) -> Self {
        AssociationHistory {
            sensors,
            scans: Vec::new(),
        }
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    /// Number of scans `k`.
    pub fn scans(&self) -> usize {
        self.scans.len()
    }

    pub fn push(&mut self, assoc: &MultiSensorAssociation) -> Result<()> {
        if assoc.sensors() != self.sensors {
            return Err(Error::Contract(format!(
                "association has {} sensors, history has {}",
                assoc.sensors(),
                self.sensors
            )));
        }
        self.scans.push(assoc.normalized());
        Ok(())
    }

    pub fn extended(&self, assoc: &MultiSensorAssociation) -> Result<Self> {
        let mut out = self.clone();
        out.push(assoc)?;
        Ok(out)
    }

    /// Association at scan `j` (1-based).
    pub fn at(&self, j: usize) -> &MultiSensorAssociation {
        &self.scans[j - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = &MultiSensorAssociation> {
        self.scans.iter()
    }

    pub fn prefix(&self, j: usize) -> AssociationHistory {
        AssociationHistory {
            sensors: self.sensors,
            scans: self.scans[..j].to_vec(),
        }
    }

    /// Union of live labels over all scans.
    pub fn labels(&self) -> BTreeSet<Label> {
        self.scans.iter().flat_map(live_labels).collect()
    }

    /// First and last scans at which `label` is alive.
    pub fn span(&self, label: Label) -> Option<(usize, usize)> {
        let mut span: Option<(usize, usize)> = None;
        for (idx, assoc) in self.scans.iter().enumerate() {
            if assoc.is_alive(label) {
                let j = idx + 1;
                span = Some(span.map_or((j, j), |(s, _)| (s, j)));
            }
        }
        span
    }

    /// Per-label records in label order; assumes temporal validity.
    pub fn tracks(&self) -> Vec<TrackRecord> {
        let mut map: BTreeMap<Label, Vec<Vec<SensorIndex>>> = BTreeMap::new();
        for assoc in &self.scans {
            for (label, alpha) in assoc.entries() {
                map.entry(label).or_default().push(alpha.to_vec());
            }
        }
        map.into_iter()
            .map(|(label, assocs)| TrackRecord { label, assocs })
            .collect()
    }

    /// Builds a history of `scans` scans from per-label records, each record
    /// starting at its label's birth scan.
    pub fn from_tracks(sensors: usize, scans: usize, tracks: &[TrackRecord]) -> Result<Self> {
        let mut per_scan = vec![MultiSensorAssociation::new(sensors); scans];
        for rec in tracks {
            let s = rec.label.birth_time;
            if s == 0 || s - 1 + rec.assocs.len() > scans {
                return Err(Error::Contract(format!(
                    "track {} does not fit in {scans} scans",
                    rec.label
                )));
            }
            for (offset, alpha) in rec.assocs.iter().enumerate() {
                per_scan[s - 1 + offset].insert(rec.label, alpha)?;
            }
        }
        let mut out = AssociationHistory::new(sensors);
        for assoc in &per_scan {
            out.push(assoc)?;
        }
        Ok(out)
    }

    /// Canonical byte encoding: per label in order, birth time, index, run
    /// length and the association values, all little-endian.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.scans.len() as u32).to_le_bytes());
        for rec in self.tracks() {
            out.extend_from_slice(&(rec.label.birth_time as u32).to_le_bytes());
            out.extend_from_slice(&(rec.label.birth_index as u32).to_le_bytes());
            out.extend_from_slice(&(rec.assocs.len() as u32).to_le_bytes());
            for alpha in &rec.assocs {
                for &a in alpha {
                    out.extend_from_slice(&a.to_le_bytes());
                }
            }
        }
        out
    }
}

/// Checks positive 1-1 at every scan, well-formed vectors, and temporal
/// validity: a live label at scan `j` is either born at `j` (and listed in
/// `birth_spaces[j - 1]`) or alive at `j - 1`.
pub fn validate_history(hist: &AssociationHistory, birth_spaces: &[Vec<Label>]) -> bool {
    let mut previous: BTreeSet<Label> = BTreeSet::new();
    for (idx, assoc) in hist.iter().enumerate() {
        let j = idx + 1;
        if !assoc.is_well_formed() || !is_positive_one_to_one(assoc) {
            return false;
        }
        let current = live_labels(assoc);
        for label in &current {
            if previous.contains(label) {
                continue;
            }
            let born_here = label.birth_time == j
                && birth_spaces
                    .get(idx)
                    .is_some_and(|b| b.contains(label));
            if !born_here {
                return false;
            }
        }
        previous = current;
    }
    true
}

/// Per-sensor measurement sets at one scan. Indices are 1-based at the API.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementFrame {
    sensors: Vec<Vec<DVector<f64>>>,
}

impl MeasurementFrame {
    pub fn new(sensors: Vec<Vec<DVector<f64>>>) -> Self {
        MeasurementFrame { sensors }
    }

    pub fn empty(sensors: usize) -> Self {
        MeasurementFrame {
            sensors: vec![Vec::new(); sensors],
        }
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    /// `|Z^{(v)}|` for 0-based sensor `v`.
    pub fn count(&self, v: usize) -> usize {
        self.sensors[v].len()
    }

    pub fn sensor(&self, v: usize) -> &[DVector<f64>] {
        &self.sensors[v]
    }

    /// Measurement `i` (1-based) of 0-based sensor `v`.
    pub fn measurement(&self, v: usize, i: SensorIndex) -> Result<&DVector<f64>> {
        let available = self.sensors.get(v).map_or(0, Vec::len);
        if i < 1 || i as usize > available {
            return Err(Error::Index {
                sensor: v,
                index: i,
                available,
            });
        }
        Ok(&self.sensors[v][i as usize - 1])
    }
}

/// One GLMB posterior term.
#[derive(Clone, Debug)]
pub struct GlmbComponent {
    pub history: AssociationHistory,
    /// Unnormalized log weight `log w_{0:k}`.
    pub log_weight: f64,
    pub trajectories: BTreeMap<Label, TrajectoryPosterior>,
}

impl GlmbComponent {
    pub fn empty(sensors: usize) -> Self {
        GlmbComponent {
            history: AssociationHistory::new(sensors),
            log_weight: 0.0,
            trajectories: BTreeMap::new(),
        }
    }

    pub fn scans(&self) -> usize {
        self.history.scans()
    }

    /// Number of trajectories `|L(γ_{0:k})|`.
    pub fn cardinality(&self) -> usize {
        self.trajectories.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(s: usize, i: usize) -> Label {
        Label::new(s, i)
    }

    fn assoc(entries: &[(Label, &[i32])]) -> MultiSensorAssociation {
        let v = entries.first().map_or(1, |e| e.1.len());
        MultiSensorAssociation::from_entries(v, entries.iter().map(|(l, a)| (*l, a.to_vec())))
            .unwrap()
    }

    #[test]
    fn label_order_is_birth_time_then_index() {
        assert!(l(1, 5) < l(2, 1));
        assert!(l(2, 1) < l(2, 2));
        assert_eq!(l(3, 1), l(3, 1));
    }

    #[test]
    fn one_to_one_examples() {
        assert!(!is_positive_one_to_one(&assoc(&[
            (l(1, 1), &[2]),
            (l(1, 2), &[2])
        ])));
        assert!(is_positive_one_to_one(&assoc(&[
            (l(1, 1), &[0, 0]),
            (l(1, 2), &[0, 0])
        ])));
        assert!(is_positive_one_to_one(&assoc(&[
            (l(1, 1), &[-1, -1]),
            (l(1, 2), &[-1, -1])
        ])));
        // same index at different sensors is fine
        assert!(is_positive_one_to_one(&assoc(&[
            (l(1, 1), &[1, 2]),
            (l(1, 2), &[2, 1])
        ])));
    }

    #[test]
    fn live_label_examples() {
        let a = assoc(&[(l(1, 1), &[0, 0]), (l(1, 2), &[-1, -1])]);
        assert_eq!(live_labels(&a), [l(1, 1)].into_iter().collect());
        assert!(live_labels(&MultiSensorAssociation::new(2)).is_empty());
        let b = assoc(&[(l(1, 1), &[2, 0]), (l(1, 2), &[0, 1])]);
        assert_eq!(live_labels(&b).len(), 2);
    }

    #[test]
    fn mixed_vectors_are_malformed() {
        let a = assoc(&[(l(1, 1), &[-1, 0])]);
        assert!(!a.is_well_formed());
    }

    fn history(scans: &[&[(Label, &[i32])]]) -> AssociationHistory {
        let mut h = AssociationHistory::new(1);
        for s in scans {
            let mut a = MultiSensorAssociation::new(1);
            for (label, alpha) in *s {
                a.insert(*label, alpha).unwrap();
            }
            h.push(&a).unwrap();
        }
        h
    }

    fn births(k: usize) -> Vec<Vec<Label>> {
        (1..=k).map(|s| vec![l(s, 1)]).collect()
    }

    #[test]
    fn resurrection_is_invalid() {
        let h = history(&[
            &[(l(1, 1), &[0])],
            &[(l(1, 1), &[1])],
            &[(l(1, 1), &[-1])],
            &[(l(1, 1), &[0])],
        ]);
        assert!(!validate_history(&h, &births(4)));
    }

    #[test]
    fn late_birth_surviving_is_valid() {
        let h = history(&[&[], &[(l(2, 1), &[1])], &[(l(2, 1), &[0])], &[(l(2, 1), &[2])]]);
        assert!(validate_history(&h, &births(4)));
    }

    #[test]
    fn all_negative_history_is_valid() {
        let h = history(&[&[(l(1, 1), &[-1])], &[(l(2, 1), &[-1])], &[]]);
        assert!(validate_history(&h, &births(3)));
    }

    #[test]
    fn appearing_after_birth_time_is_invalid() {
        let h = history(&[&[], &[(l(1, 1), &[0])]]);
        assert!(!validate_history(&h, &births(2)));
    }

    #[test]
    fn explicit_negative_entries_do_not_change_identity() {
        let a = history(&[&[(l(1, 1), &[-1])], &[]]);
        let b = history(&[&[], &[]]);
        assert_eq!(a, b);
        assert_eq!(a.canonical_bytes(), b.canonical_bytes());
    }

    #[test]
    fn tracks_round_trip() {
        let h = history(&[
            &[(l(1, 1), &[0]), (l(1, 2), &[1])],
            &[(l(1, 1), &[2]), (l(2, 1), &[1])],
        ]);
        let rebuilt = AssociationHistory::from_tracks(1, 2, &h.tracks()).unwrap();
        assert_eq!(h, rebuilt);
        assert_eq!(h.span(l(1, 1)), Some((1, 2)));
        assert_eq!(h.span(l(1, 2)), Some((1, 1)));
    }

    #[test]
    fn measurement_indices_are_one_based() {
        let f = MeasurementFrame::new(vec![vec![DVector::from_vec(vec![1.0])]]);
        assert_eq!(f.measurement(0, 1).unwrap()[0], 1.0);
        assert!(f.measurement(0, 0).is_err());
        assert!(f.measurement(0, 2).is_err());
    }
}
