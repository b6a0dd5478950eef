//! Dense linear assignment by shortest augmenting paths.
//!
//! Jonker–Volgenant-family solver: rows are inserted one at a time and each
//! insertion runs a Dijkstra search over reduced costs, maintaining dual
//! potentials `u`, `v`. Worst case O(n^3) for an n x n cost matrix. The
//! result is an exact minimum-cost perfect matching, which is what the
//! Wasserstein oracle role requires.

use ndarray::ArrayView2;

const UNASSIGNED: usize = usize::MAX;

/// Solve the square assignment problem for `cost` (n x n, finite entries).
///
/// Returns `(row_to_col, total_cost)` where `row_to_col[i]` is the column
/// matched to row `i`.
pub(crate) fn solve(cost: ArrayView2<'_, f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment cost matrix must be square");
    assert!(n > 0, "assignment cost matrix must be nonempty");

    let mut u = vec![0.0_f64; n]; // row potentials
    let mut v = vec![0.0_f64; n]; // column potentials
    let mut col_of_row = vec![UNASSIGNED; n];
    let mut row_of_col = vec![UNASSIGNED; n];

    // Scratch reused across augmentations.
    let mut shortest = vec![f64::INFINITY; n];
    let mut pred = vec![0_usize; n]; // predecessor row of each column
    let mut scanned_rows = vec![false; n];
    let mut scanned_cols = vec![false; n];
    let mut remaining: Vec<usize> = Vec::with_capacity(n);

    for cur_row in 0..n {
        shortest.fill(f64::INFINITY);
        scanned_rows.fill(false);
        scanned_cols.fill(false);
        remaining.clear();
        remaining.extend(0..n);

        let mut min_val = 0.0_f64;
        let mut i = cur_row;
        let mut sink = UNASSIGNED;

        while sink == UNASSIGNED {
            scanned_rows[i] = true;
            let mut lowest = f64::INFINITY;
            let mut index = UNASSIGNED;
            for (it, &j) in remaining.iter().enumerate() {
                let r = min_val + cost[(i, j)] - u[i] - v[j];
                if r < shortest[j] {
                    pred[j] = i;
                    shortest[j] = r;
                }
                if shortest[j] < lowest || (shortest[j] == lowest && row_of_col[j] == UNASSIGNED) {
                    lowest = shortest[j];
                    index = it;
                }
            }
            debug_assert!(lowest.is_finite(), "augmenting path search stalled");
            min_val = lowest;
            let j = remaining[index];
            if row_of_col[j] == UNASSIGNED {
                sink = j;
            } else {
                i = row_of_col[j];
            }
            scanned_cols[j] = true;
            remaining.swap_remove(index);
        }

        // Dual update keeps reduced costs nonnegative on scanned arcs.
        u[cur_row] += min_val;
        for r in 0..n {
            if scanned_rows[r] && r != cur_row {
                u[r] += min_val - shortest[col_of_row[r]];
            }
        }
        for c in 0..n {
            if scanned_cols[c] {
                v[c] -= min_val - shortest[c];
            }
        }

        // Augment along the alternating path ending in `sink`.
        let mut j = sink;
        loop {
            let r = pred[j];
            row_of_col[j] = r;
            std::mem::swap(&mut col_of_row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }

    let total = (0..n).map(|i| cost[(i, col_of_row[i])]).sum();
    (col_of_row, total)
}
