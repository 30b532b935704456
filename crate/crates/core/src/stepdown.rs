//! Max-t stepdown adjustment across several outcomes.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::StepdownMethod;

/// Adjusted one-sided p-values for `t_obs` (one entry per outcome) given the
/// joint permutation distribution `t_perm` (one row per replicate, columns in
/// the same outcome order).
///
/// Hypotheses are visited by descending observed t. `Rw16` compares each
/// against the max over itself and every lower-ranked hypothesis; `Rp`
/// compares every hypothesis against the max over all of them. Both use
/// `(1 + count) / (np + 1)` and enforce monotonicity along the visiting
/// order. Results come back in the original outcome order.
pub fn stepdown_adjust(t_obs: &[f64], t_perm: &[Vec<f64>], method: StepdownMethod) -> Vec<f64> {
    let k = t_obs.len();
    if k == 0 {
        return Vec::new();
    }
    let np = t_perm.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| t_obs[b].total_cmp(&t_obs[a]).then(a.cmp(&b)));

    // For Rw16 the max over ranks j..k is accumulated from the bottom.
    let mut counts = vec![0usize; k];
    for row in t_perm {
        debug_assert_eq!(row.len(), k);
        match method {
            StepdownMethod::Rw16 => {
                let mut running = f64::NEG_INFINITY;
                for j in (0..k).rev() {
                    running = running.max(row[order[j]]);
                    if running >= t_obs[order[j]] {
                        counts[j] += 1;
                    }
                }
            }
            StepdownMethod::Rp => {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for j in 0..k {
                    if m >= t_obs[order[j]] {
                        counts[j] += 1;
                    }
                }
            }
        }
    }

    let mut adjusted = vec![0.0; k];
    let mut floor = 0.0f64;
    for j in 0..k {
        let p = (1 + counts[j]) as f64 / (np + 1) as f64;
        floor = floor.max(p);
        adjusted[order[j]] = floor;
    }
    adjusted
}
