//! Exact `W₂` between two empirical measures with the same number of atoms.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials, `O(n³)`). Returns `assignment[row] = column`.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Result<Vec<usize>> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::Dimension(format!(
            "assignment needs a square cost matrix, got {}x{}",
            n,
            cost.ncols()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment cost".into()));
    }
    // 1-based arrays with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut min_v = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if reduced < min_v[j] {
                    min_v[j] = reduced;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// `W₂` between the uniform measures on the columns of `a` and `b`.
pub fn w2_empirical(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() || a.ncols() == 0 {
        return Err(Error::Dimension(format!(
            "need two clouds of equal shape, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let n = a.ncols();
    let cost = DMatrix::from_fn(n, n, |i, j| (a.column(i) - b.column(j)).norm_squared());
    let assignment = min_cost_assignment(&cost)?;
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    Ok((total / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn brute_force(cost: &DMatrix<f64>) -> f64 {
        fn go(cost: &DMatrix<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.nrows() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..cost.ncols() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[(row, j)] + go(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        go(cost, 0, &mut vec![false; cost.ncols()])
    }

    #[test]
    fn matches_exhaustive_search() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for n in 1..=7 {
            let cost = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
            let a = min_cost_assignment(&cost).unwrap();
            let mut seen = a.clone();
            seen.sort();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            let got: f64 = a.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
            assert!((got - brute_force(&cost)).abs() < 1e-12);
        }
    }

    #[test]
    fn permuted_cloud_has_zero_distance() {
        let a = dmatrix![0.0, 1.0, 5.0; 2.0, -1.0, 3.0];
        let b = dmatrix![5.0, 0.0, 1.0; 3.0, 2.0, -1.0];
        assert!(w2_empirical(&a, &b).unwrap() < 1e-15);
    }

    #[test]
    fn shift_distance() {
        let a = dmatrix![0.0, 1.0, 2.0];
        let b = a.add_scalar(0.5);
        assert!((w2_empirical(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    }
}
