//! Exact one-to-one assignment (Hungarian method).
//!
//! Used by the scorer to map reference speakers to hypothesis clusters so
//! the reported confusion is the minimum over all pairings. Potentials +
//! shortest augmenting path, O(n²m) — trivial at the speaker counts seen
//! here.

/// Max-weight one-to-one assignment. `w[i][j]` is the weight of pairing
/// row i with column j (weights may be any finite reals). Returns the
/// matched column per row, `None` where rows outnumber columns.
pub fn max_weight_assignment(w: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = w.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = w[0].len();
    if cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        // Transpose so the solver sees rows ≤ cols, then invert the match.
        let t: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| w[i][j]).collect())
            .collect();
        let back = max_weight_assignment(&t);
        let mut out = vec![None; rows];
        for (j, m) in back.iter().enumerate() {
            if let Some(i) = m {
                out[*i] = Some(j);
            }
        }
        return out;
    }

    // Minimization form on negated weights, 1-indexed as is conventional
    // for the potentials formulation.
    let n = rows;
    let m = cols;
    let cost = |i: usize, j: usize| -w[i - 1][j - 1];
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1]; // row matched to column j (0 = free)
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![None; rows];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Total weight of an assignment under `w`.
pub fn assignment_weight(w: &[Vec<f64>], assignment: &[Option<usize>]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| w[i][j]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn brute_force_best(w: &[Vec<f64>]) -> f64 {
        // Permute the larger side so every injective pairing is covered.
        let rows = w.len();
        let cols = w[0].len();
        let mut best = f64::NEG_INFINITY;
        if rows <= cols {
            let mut perm: Vec<usize> = (0..cols).collect();
            permute(&mut perm, 0, &mut |p| {
                let total: f64 = (0..rows).map(|i| w[i][p[i]]).sum();
                best = best.max(total);
            });
        } else {
            let mut perm: Vec<usize> = (0..rows).collect();
            permute(&mut perm, 0, &mut |p| {
                let total: f64 = (0..cols).map(|j| w[p[j]][j]).sum();
                best = best.max(total);
            });
        }
        best
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn test_known_square_case() {
        let w = vec![
            vec![7.0, 5.0, 11.0],
            vec![5.0, 4.0, 1.0],
            vec![9.0, 3.0, 2.0],
        ];
        let a = max_weight_assignment(&w);
        assert_eq!(a, vec![Some(2), Some(1), Some(0)]);
        assert_eq!(assignment_weight(&w, &a), 24.0);
    }

    #[test]
    fn test_matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha20Rng::seed_from_u64(103);
        for _ in 0..40 {
            let rows = rng.random_range(1..7);
            let cols = rng.random_range(1..7);
            let w: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| rng.random_range(0.0..10.0)).collect())
                .collect();
            let a = max_weight_assignment(&w);
            // One-to-one.
            let used: Vec<usize> = a.iter().filter_map(|m| *m).collect();
            let mut dedup = used.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(used.len(), dedup.len());
            assert_eq!(used.len(), rows.min(cols));
            let got = assignment_weight(&w, &a);
            let want = brute_force_best(&w);
            assert!((got - want).abs() < 1e-9, "{rows}x{cols}: {got} vs {want}");
        }
    }

    #[test]
    fn test_rectangular_shapes() {
        // More rows than columns: one row stays unmatched.
        let w = vec![vec![1.0], vec![5.0], vec![3.0]];
        let a = max_weight_assignment(&w);
        assert_eq!(a, vec![None, Some(0), None]);
        // More columns than rows.
        let w = vec![vec![1.0, 9.0, 4.0]];
        assert_eq!(max_weight_assignment(&w), vec![Some(1)]);
    }

    #[test]
    fn test_empty_inputs() {
        assert!(max_weight_assignment(&[]).is_empty());
        let w: Vec<Vec<f64>> = vec![vec![], vec![]];
        assert_eq!(max_weight_assignment(&w), vec![None, None]);
    }
}
