//! Exact rectangular linear assignment by shortest augmenting paths
//! (Hungarian method with row/column potentials).
//!
//! Forbidden pairs carry `f64::INFINITY`. The caller must guarantee that a
//! finite complete assignment of every row exists.

/// Minimum-cost assignment of every row to a distinct column.
///
/// `cost` is row-major with `rows <= cols`. Returns the column chosen for
/// each row.
pub fn solve(cost: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    assert!(rows <= cols, "assignment needs rows <= cols ({rows} > {cols})");
    assert_eq!(cost.len(), rows * cols);
    if rows == 0 {
        return Vec::new();
    }

    // 1-based internally; index 0 is the virtual root column / row.
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    let at = |i: usize, j: usize| cost[(i - 1) * cols + (j - 1)];

    for row in 1..=rows {
        owner[0] = row;
        let mut j0 = 0;
        let mut min_slack = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let c = at(i0, j);
                if c.is_finite() {
                    let reduced = c - u[i0] - v[j];
                    if reduced < min_slack[j] {
                        min_slack[j] = reduced;
                        way[j] = j0;
                    }
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            assert!(delta.is_finite(), "no feasible assignment for row {row}");
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        // unwind the augmenting path
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![usize::MAX; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn total(cost: &[f64], cols: usize, assignment: &[usize]) -> f64 {
        assignment.iter().enumerate().map(|(i, &j)| cost[i * cols + j]).sum()
    }

    fn brute_force(cost: &[f64], rows: usize, cols: usize) -> f64 {
        fn go(cost: &[f64], rows: usize, cols: usize, row: usize, used: &mut [bool]) -> f64 {
            if row == rows {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..cols {
                let c = cost[row * cols + j];
                if !used[j] && c.is_finite() {
                    used[j] = true;
                    best = best.min(c + go(cost, rows, cols, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        go(cost, rows, cols, 0, &mut vec![false; cols])
    }

    #[test]
    fn square_classic() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = solve(&cost, 3, 3);
        assert_eq!(total(&cost, 3, &a), 5.0);
    }

    #[test]
    fn empty_and_rectangular() {
        assert!(solve(&[], 0, 3).is_empty());
        let cost = [10.0, 1.0, 7.0, 2.0, 9.0, 1.5];
        let a = solve(&cost, 2, 3);
        assert_eq!(a, vec![1, 2]);
    }

    #[test]
    fn respects_forbidden_pairs() {
        let inf = f64::INFINITY;
        let cost = [inf, 5.0, 1.0, inf];
        assert_eq!(solve(&cost, 2, 2), vec![1, 0]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(rows in 0usize..5, extra in 0usize..3,
                               seed in proptest::collection::vec((0.0f64..100.0, proptest::bool::weighted(0.3)), 40)) {
            let cols = rows + extra;
            let mut cost: Vec<f64> = (0..rows * cols)
                .map(|k| if seed[k].1 { f64::INFINITY } else { seed[k].0 })
                .collect();
            // keep the diagonal finite so a complete assignment exists
            for i in 0..rows {
                cost[i * cols + i] = seed[i].0;
            }
            let a = solve(&cost, rows, cols);
            let mut seen = std::collections::HashSet::new();
            for &j in &a {
                prop_assert!(seen.insert(j));
            }
            prop_assert!((total(&cost, cols, &a) - brute_force(&cost, rows, cols)).abs() < 1e-9);
        }
    }
}
