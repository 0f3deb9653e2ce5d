//! Central finite-difference gradient verification.
//!
//! The checker re-evaluates a black-box loss at `theta +/- h` for a probe
//! set of entries per parameter tensor and compares against the analytic
//! gradients produced by the tape. It never looks at the backward rules
//! it is checking.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::math;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GroupReport {
    pub path: String,
    pub probes: usize,
    pub max_rel_err: f64,
    /// Flat index of the worst probe.
    pub worst_index: usize,
}

impl GroupReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Relative error with an absolute denominator floor.
///
/// Central differences at h=1e-5 on an O(1) loss carry ~1e-10 of
/// roundoff/truncation noise, so gradients much smaller than the floor
/// cannot be resolved relatively — they compare against the floor
/// instead. (Key-projection biases, for example, have exactly zero true
/// gradient because softmax ignores per-row score shifts; the numeric
/// side reads pure cancellation noise there.) Systematic backward bugs
/// still surface loudly on the larger entries of the same tensor.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = math::abs(analytic).max(math::abs(numeric)).max(1e-4);
    math::abs(analytic - numeric) / denom
}

/// Deterministic probe indices: ends plus an evenly spaced interior sample.
pub fn probe_indices(numel: usize, max_probes: usize) -> Vec<usize> {
    if numel <= max_probes {
        return (0..numel).collect();
    }
    let mut out = Vec::with_capacity(max_probes);
    for i in 0..max_probes {
        out.push(i * (numel - 1) / (max_probes - 1));
    }
    out.dedup();
    out
}

/// Checks one parameter group.
///
/// `loss` evaluates the full forward pass at the current parameter values;
/// `entry` gives mutable access to the group's flat storage so the checker
/// can nudge single entries. `analytic` is the tape gradient for the group.
pub fn check_group(
    path: &str,
    numel: usize,
    analytic: &[f64],
    entry: &mut dyn FnMut(usize, f64),
    loss: &mut dyn FnMut() -> Result<f64>,
    step: f64,
    max_probes: usize,
) -> Result<GroupReport> {
    let mut max_rel_err: f64 = 0.0;
    let mut worst_index = 0;
    let probes = probe_indices(numel, max_probes);
    for &i in &probes {
        entry(i, step);
        let plus = loss()?;
        entry(i, -2.0 * step);
        let minus = loss()?;
        entry(i, step); // restore
        let numeric = (plus - minus) / (2.0 * step);
        let rel = relative_error(analytic[i], numeric);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_index = i;
        }
    }
    Ok(GroupReport {
        path: String::from(path),
        probes: probes.len(),
        max_rel_err,
        worst_index,
    })
}
