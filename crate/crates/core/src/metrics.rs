//! OSPA between point sets and OSPA² between track sets over a scan window.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::assignment::min_cost_assignment;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OspaParams {
    /// Cutoff distance, > 0.
    pub cutoff: f64,
    /// Order, >= 1.
    pub order: f64,
    /// Scan window of OSPA², >= 1.
    pub window: usize,
}

impl Default for OspaParams {
    fn default() -> Self {
        OspaParams {
            cutoff: 100.0,
            order: 1.0,
            window: 10,
        }
    }
}

impl OspaParams {
    pub fn new(cutoff: f64, order: f64, window: usize) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::Config(format!("OSPA cutoff must be positive, got {cutoff}")));
        }
        if !(order >= 1.0 && order.is_finite()) {
            return Err(Error::Config(format!("OSPA order must be at least 1, got {order}")));
        }
        if window == 0 {
            return Err(Error::Config("OSPA² window must be at least 1".into()));
        }
        Ok(OspaParams {
            cutoff,
            order,
            window,
        })
    }
}

/// Time-indexed point sequence; gaps are allowed.
pub type Track = BTreeMap<usize, DVector<f64>>;

/// OSPA over a generic base distance, already cut off at `c`.
fn ospa_with<F>(nx: usize, ny: usize, params: &OspaParams, base: F) -> f64
where
    F: Fn(usize, usize) -> f64,
{
    let n = nx.max(ny);
    if n == 0 {
        return 0.0;
    }
    let c = params.cutoff;
    let p = params.order;
    let penalty = c.powf(p);
    let mut cost = vec![penalty; n * n];
    for i in 0..nx {
        for j in 0..ny {
            cost[i * n + j] = base(i, j).min(c).powf(p);
        }
    }
    // The optimum of the transposed problem can differ in the last bits;
    // taking the smaller of both makes the distance exactly symmetric.
    let transposed: Vec<f64> = (0..n * n).map(|idx| cost[(idx % n) * n + idx / n]).collect();
    let total = min_cost_assignment(&cost, n).0.min(min_cost_assignment(&transposed, n).0);
    (total / n as f64).powf(1.0 / p).min(c)
}

/// OSPA distance between two finite point sets. Both empty gives 0.
pub fn ospa(x: &[DVector<f64>], y: &[DVector<f64>], params: &OspaParams) -> f64 {
    ospa_with(x.len(), y.len(), params, |i, j| (&x[i] - &y[j]).norm())
}

/// Base distance between two tracks over scans `lo..=hi`: the order-`p` mean of the
/// per-scan cut-off distance over scans where at least one of them exists;
/// a scan where only one exists counts as `c`.
fn track_distance(a: &Track, b: &Track, lo: usize, hi: usize, params: &OspaParams) -> f64 {
    let c = params.cutoff;
    let p = params.order;
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in lo..=hi {
        let d = match (a.get(&t), b.get(&t)) {
            (Some(x), Some(y)) => (x - y).norm().min(c),
            (None, None) => continue,
            _ => c,
        };
        sum += d.powf(p);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).powf(1.0 / p)
    }
}

/// OSPA² at scan `k` over the window `[k - w + 1, k]`. Tracks with no point
/// in the window are ignored; an empty window on both sides gives 0.
pub fn ospa2(x: &[Track], y: &[Track], params: &OspaParams, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let hi = k;
    let lo = (k + 1).saturating_sub(params.window).max(1);
    let in_window = |t: &&Track| t.range(lo..=hi).next().is_some();
    let xs: Vec<&Track> = x.iter().filter(in_window).collect();
    let ys: Vec<&Track> = y.iter().filter(in_window).collect();
    ospa_with(xs.len(), ys.len(), params, |i, j| track_distance(xs[i], ys[j], lo, hi, params))
}

/// Point set of `tracks` at scan `k`.
pub fn points_at(tracks: &[Track], k: usize) -> Vec<DVector<f64>> {
    tracks.iter().filter_map(|t| t.get(&k).cloned()).collect()
}

/// Per-scan `(ospa, ospa2)` for scans `1..=scans`.
pub fn error_curve(truth: &[Track], estimate: &[Track], params: &OspaParams, scans: usize) -> Vec<(f64, f64)> {
    (1..=scans)
        .map(|k| {
            let o = ospa(&points_at(truth, k), &points_at(estimate, k), params);
            let o2 = ospa2(truth, estimate, params, k);
            (o, o2)
        })
        .collect()
}
