//! Shared test oracles, kept deliberately independent of the library's
//! attribution internals: Shapley values straight from the permutation
//! definition, and coalition values by composing and evaluating rows.
//!
//! Each integration target pulls in the subset it needs.
#![allow(dead_code)]

use xshift::data::DataMatrix;
use xshift::models::Model;

/// All permutations of `0..p` via Heap's algorithm.
fn permutations(p: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, items: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(items.clone());
            return;
        }
        for i in 0..k {
            rec(k - 1, items, out);
            if k % 2 == 0 {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
    }
    let mut items: Vec<usize> = (0..p).collect();
    let mut out = Vec::new();
    rec(p, &mut items, &mut out);
    out
}

/// Shapley values from the definition: the marginal contribution of each
/// player averaged over every ordering. `val` maps a coalition bitmask to
/// its value. Exponential in `p`; intended for cross-checks with p <= 4.
pub fn shapley_by_permutations<F: Fn(usize) -> f64>(p: usize, val: F) -> Vec<f64> {
    let perms = permutations(p);
    let mut phi = vec![0.0; p];
    for perm in &perms {
        let mut mask = 0usize;
        let mut prev = val(0);
        for &j in perm {
            mask |= 1 << j;
            let next = val(mask);
            phi[j] += next - prev;
            prev = next;
        }
    }
    for v in phi.iter_mut() {
        *v /= perms.len() as f64;
    }
    phi
}

/// Interventional coalition value by brute force: overwrite the masked
/// coordinates of every background row with the explained row's, evaluate
/// the model, and average.
pub fn composed_mean(model: &Model, row: &[f64], mask: usize, background: &DataMatrix) -> f64 {
    let p = row.len();
    let mut buf = vec![0.0; p];
    let mut s = 0.0;
    for b in background.rows_iter() {
        for j in 0..p {
            buf[j] = if mask & (1 << j) != 0 { row[j] } else { b[j] };
        }
        s += model.predict_row(&buf);
    }
    s / background.n_rows() as f64
}
