//! Minimum-cost bipartite assignment (Hungarian method with potentials).

use ndarray::Array2;

use crate::error::{ensure, Result};

/// Optimal one-to-one assignment of `min(n, m)` pairs, returned as
/// `(row, col)` sorted by row.
pub fn hungarian(cost: &Array2<f64>) -> Result<Vec<(usize, usize)>> {
    ensure!(
        cost.iter().all(|c| c.is_finite()),
        "tracker",
        "hungarian",
        "cost matrix has non-finite entries"
    );
    let (n, m) = cost.dim();
    if n == 0 || m == 0 {
        return Ok(Vec::new());
    }
    if n <= m {
        Ok(solve(cost))
    } else {
        let t = cost.t().to_owned();
        let mut pairs: Vec<(usize, usize)> = solve(&t).into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        Ok(pairs)
    }
}

/// Total cost of an assignment.
pub fn assignment_cost(cost: &Array2<f64>, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| cost[[r, c]]).sum()
}

// Rows <= columns. Arrays are 1-based with index 0 as the virtual source.
fn solve(a: &Array2<f64>) -> Vec<(usize, usize)> {
    let (n, m) = a.dim();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = a[[i0 - 1, j - 1]] - u[i0] - v[j];
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
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_force(cost: &Array2<f64>) -> f64 {
        let (n, m) = cost.dim();
        let (small, large, transposed) = if n <= m { (n, m, false) } else { (m, n, true) };
        let mut best = f64::INFINITY;
        let mut used = vec![false; large];
        fn rec(
            i: usize,
            small: usize,
            large: usize,
            acc: f64,
            used: &mut [bool],
            get: &dyn Fn(usize, usize) -> f64,
            best: &mut f64,
        ) {
            if i == small {
                *best = best.min(acc);
                return;
            }
            for j in 0..large {
                if !used[j] {
                    used[j] = true;
                    rec(i + 1, small, large, acc + get(i, j), used, get, best);
                    used[j] = false;
                }
            }
        }
        let get = |i: usize, j: usize| if transposed { cost[[j, i]] } else { cost[[i, j]] };
        rec(0, small, large, 0.0, &mut used, &get, &mut best);
        best
    }

    #[test]
    fn one_by_one() {
        let c = array![[3.5]];
        assert_eq!(hungarian(&c).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn two_by_two() {
        let c = array![[1.0, 2.0], [3.0, 1.0]];
        let p = hungarian(&c).unwrap();
        assert_eq!(p, vec![(0, 0), (1, 1)]);
        assert_eq!(assignment_cost(&c, &p), 2.0);
    }

    #[test]
    fn empty_and_nonfinite() {
        assert!(hungarian(&Array2::zeros((0, 3))).unwrap().is_empty());
        assert!(hungarian(&array![[f64::NAN]]).is_err());
    }

    #[test]
    fn random_rectangular_matches_enumeration() {
        let mut rng = seed::rng(17);
        for _ in 0..200 {
            let n = rng.random_range(1..=6);
            let m = rng.random_range(1..=6);
            let c = Array2::from_shape_fn((n, m), |_| rng.random_range(0.0..10.0));
            let p = hungarian(&c).unwrap();
            assert_eq!(p.len(), n.min(m));
            let rows: std::collections::BTreeSet<_> = p.iter().map(|x| x.0).collect();
            let cols: std::collections::BTreeSet<_> = p.iter().map(|x| x.1).collect();
            assert_eq!(rows.len(), p.len());
            assert_eq!(cols.len(), p.len());
            assert!((assignment_cost(&c, &p) - brute_force(&c)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn constant_shift_keeps_assignment(vals in proptest::collection::vec(0.0f64..5.0, 16), k in -10.0f64..10.0) {
            let c = Array2::from_shape_vec((4, 4), vals).unwrap();
            let shifted = &c + k;
            let a = hungarian(&c).unwrap();
            let b = hungarian(&shifted).unwrap();
            prop_assert!((assignment_cost(&c, &a) - assignment_cost(&c, &b)).abs() < 1e-9);
        }
    }
}
