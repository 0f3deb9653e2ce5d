//! Word error rate via edit-distance dynamic programming.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// Minimum number of substitutions, deletions and insertions turning
/// `a` into `b` (unit costs), classic two-row DP.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `(substitutions + deletions + insertions) / len(reference)`; can exceed
/// 1 with enough insertions. The reference must be nonempty.
pub fn wer(reference: &[usize], hypothesis: &[usize]) -> Result<f64> {
    if reference.is_empty() {
        return Err(CoreError::Usage("wer needs a nonempty reference".into()));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}
