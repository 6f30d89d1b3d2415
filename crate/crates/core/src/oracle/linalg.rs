/// Solves `m · x = rhs` by Gaussian elimination with partial pivoting.
///
/// `m` is row-major and square. Returns `None` when a pivot falls below
/// `1e-12` times the largest entry, which the callers treat as singular.
pub fn solve_dense(m: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    debug_assert!(m.len() == n && m.iter().all(|r| r.len() == n));
    let scale = m.iter().flatten().fold(0.0_f64, |s, v| s.max(v.abs()));
    if n == 0 {
        return Some(Vec::new());
    }
    if scale == 0.0 {
        return None;
    }
    let tol = 1e-12 * scale;

    let mut a: Vec<Vec<f64>> = m
        .iter()
        .zip(rhs)
        .map(|(row, &r)| {
            let mut row = row.clone();
            row.push(r);
            row
        })
        .collect();

    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() <= tol {
            return None;
        }
        a.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            let (head, tail) = a.split_at_mut(row);
            for (t, &p) in tail[0][col..].iter_mut().zip(&head[col][col..]) {
                *t -= factor * p;
            }
        }
    }

    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (a[row][n] - tail) / a[row][row];
    }
    Some(x)
}

/// `max |m·x − rhs|`.
pub fn residual_max(m: &[Vec<f64>], x: &[f64], rhs: &[f64]) -> f64 {
    m.iter()
        .zip(rhs)
        .map(|(row, &r)| (row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - r).abs())
        .fold(0.0, f64::max)
}
