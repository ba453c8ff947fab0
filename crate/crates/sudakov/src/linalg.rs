//! Small dense linear algebra over a [`Scalar`] backend.
//!
//! Everything here operates on `Vec<S>` rows at desk scale (dimensions ≤ 4,
//! point counts in the thousands). Pivoting uses exact nonzero tests in
//! rational mode and magnitude-with-tolerance tests in float mode.

use crate::scalar::Scalar;

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        acc += x.clone() * y.clone();
    }
    acc
}

pub fn add<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(x, y)| x.clone() + y.clone()).collect()
}

pub fn sub<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(x, y)| x.clone() - y.clone()).collect()
}

pub fn scale<S: Scalar>(a: &[S], k: &S) -> Vec<S> {
    a.iter().map(|x| x.clone() * k.clone()).collect()
}

pub fn neg<S: Scalar>(a: &[S]) -> Vec<S> {
    a.iter().map(|x| -x.clone()).collect()
}

/// Max-norm |v|_∞ (no square roots; scale comparisons stay exact).
pub fn norm_inf<S: Scalar>(a: &[S]) -> S {
    let mut best = S::zero();
    for x in a {
        let m = x.abs();
        if m > best {
            best = m;
        }
    }
    best
}

pub fn norm_sq<S: Scalar>(a: &[S]) -> S {
    dot(a, a)
}

pub fn is_zero_vec<S: Scalar>(a: &[S]) -> bool {
    a.iter().all(|x| x.abs() <= S::tol())
}

/// Row-echelon elimination in place; returns the pivot column of each
/// eliminated row. Rows are modified destructively.
#[allow(clippy::needless_range_loop)] // cross-row updates need index access
fn eliminate<S: Scalar>(rows: &mut [Vec<S>]) -> Vec<usize> {
    let mut pivots = Vec::new();
    if rows.is_empty() {
        return pivots;
    }
    let cols = rows[0].len();
    let mut r = 0;
    for c in 0..cols {
        // Best pivot in column c at or below row r.
        let mut best: Option<(usize, S)> = None;
        for (i, row) in rows.iter().enumerate().skip(r) {
            let m = row[c].abs();
            if m > S::tol() {
                match &best {
                    Some((_, bm)) if *bm >= m => {}
                    _ => best = Some((i, m)),
                }
            }
        }
        let Some((pi, _)) = best else { continue };
        rows.swap(r, pi);
        let inv_pivot = S::one() / rows[r][c].clone();
        for x in rows[r].iter_mut() {
            *x = x.clone() * inv_pivot.clone();
        }
        for i in 0..rows.len() {
            if i != r && !rows[i][c].is_zero() {
                let f = rows[i][c].clone();
                for c2 in 0..cols {
                    let delta = f.clone() * rows[r][c2].clone();
                    rows[i][c2] -= delta;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    pivots
}

/// Rank of the row span.
pub fn rank<S: Scalar>(rows: &[Vec<S>]) -> usize {
    let mut m: Vec<Vec<S>> = rows.to_vec();
    eliminate(&mut m).len()
}

/// Affine dimension of a point set (rank of differences from the first point).
pub fn affine_dim<S: Scalar>(points: &[Vec<S>]) -> usize {
    match points.split_first() {
        None => 0,
        Some((base, rest)) => {
            let diffs: Vec<Vec<S>> = rest.iter().map(|p| sub(p, base)).collect();
            rank(&diffs)
        }
    }
}

/// Is `v` in the linear span of `basis`?
pub fn in_span<S: Scalar>(basis: &[Vec<S>], v: &[S]) -> bool {
    if is_zero_vec(v) {
        return true;
    }
    let mut rows: Vec<Vec<S>> = basis.to_vec();
    let r0 = eliminate(&mut rows).len();
    let mut rows2: Vec<Vec<S>> = basis.to_vec();
    rows2.push(v.to_vec());
    let r1 = eliminate(&mut rows2).len();
    r0 == r1
}

/// A spanning subset of the rows (indices into `rows`) forming a basis of the
/// row span, chosen greedily in index order so the result is deterministic.
pub fn basis_subset<S: Scalar>(rows: &[Vec<S>]) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    let mut current: Vec<Vec<S>> = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        if is_zero_vec(row) {
            continue;
        }
        if !in_span(&current, row) {
            current.push(row.clone());
            chosen.push(i);
        }
    }
    chosen
}

/// Solve `A x = b` for square-or-tall A by elimination on the augmented
/// matrix; returns None when inconsistent or underdetermined beyond the
/// pivot columns (free variables are set to zero).
pub fn solve<S: Scalar>(a: &[Vec<S>], b: &[S]) -> Option<Vec<S>> {
    let rows_n = a.len();
    if rows_n == 0 {
        return Some(Vec::new());
    }
    let cols = a[0].len();
    let mut m: Vec<Vec<S>> = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.clone();
            r.push(rhs.clone());
            r
        })
        .collect();
    let pivots = eliminate(&mut m);
    // Inconsistency: a row with zero coefficients but nonzero rhs.
    for row in &m {
        let (coef, rhs) = row.split_at(cols);
        if is_zero_vec(coef) && rhs[0].abs() > S::tol() {
            return None;
        }
    }
    let mut x = vec![S::zero(); cols];
    for (r, &c) in pivots.iter().enumerate() {
        x[c] = m[r][cols].clone();
    }
    Some(x)
}

/// Nullspace basis of the row system `A v = 0` (free-variable columns set to
/// one in turn). Deterministic column order.
pub fn nullspace<S: Scalar>(a: &[Vec<S>]) -> Vec<Vec<S>> {
    if a.is_empty() {
        return Vec::new();
    }
    let cols = a[0].len();
    let mut m: Vec<Vec<S>> = a.to_vec();
    let pivots = eliminate(&mut m);
    let pivot_set: std::collections::BTreeSet<usize> = pivots.iter().copied().collect();
    let mut out = Vec::new();
    for free in 0..cols {
        if pivot_set.contains(&free) {
            continue;
        }
        let mut v = vec![S::zero(); cols];
        v[free] = S::one();
        for (r, &pc) in pivots.iter().enumerate() {
            v[pc] = -m[r][free].clone();
        }
        out.push(v);
    }
    out
}

/// Does `Σ λ_i cols_i = rhs` admit a solution with all λ_i ≥ 0?
///
/// Dense phase-1 simplex with one artificial variable per row and Bland's
/// rule; exact in rational mode, tolerance-guarded in float mode. Small
/// systems only (a handful of rows, at most a few hundred columns).
#[allow(clippy::needless_range_loop)] // tableau pivots need index access
pub fn nonneg_combination_exists<S: Scalar>(cols: &[Vec<S>], rhs: &[S]) -> bool {
    let rows_n = rhs.len();
    let n = cols.len();
    if n == 0 {
        return is_zero_vec(rhs);
    }
    // Flip rows so the right-hand side is ≥ 0.
    let mut tab: Vec<Vec<S>> = Vec::with_capacity(rows_n);
    let mut rhs_v: Vec<S> = Vec::with_capacity(rows_n);
    for r in 0..rows_n {
        let mut row: Vec<S> = cols.iter().map(|c| c[r].clone()).collect();
        let b = rhs[r].clone();
        if b < S::zero() {
            for x in row.iter_mut() {
                *x = -x.clone();
            }
            rhs_v.push(-b);
        } else {
            rhs_v.push(b);
        }
        tab.push(row);
    }
    let mut rhs = rhs_v;
    // Phase-1: minimize the sum of artificials. Basis starts as artificials;
    // reduced cost of column j is −Σ_r tab[r][j]; stop when none negative.
    let mut basis: Vec<Option<usize>> = vec![None; rows_n]; // None = artificial
    loop {
        // Reduced costs: for artificial basis rows the multiplier is 1.
        let mut entering: Option<usize> = None;
        for j in 0..n {
            let mut red = S::zero();
            for r in 0..rows_n {
                if basis[r].is_none() {
                    red -= tab[r][j].clone();
                }
            }
            if red < -S::tol() {
                entering = Some(j);
                break; // Bland: lowest index
            }
        }
        let Some(j) = entering else { break };
        // Ratio test over rows with positive coefficient.
        let mut leave: Option<usize> = None;
        let mut best: Option<S> = None;
        for r in 0..rows_n {
            if tab[r][j] > S::tol() {
                let ratio = rhs[r].clone() / tab[r][j].clone();
                let better = match &best {
                    None => true,
                    Some(b) => {
                        ratio < *b
                            || (ratio == *b
                                && basis[r].is_none()
                                && basis[leave.unwrap()].is_some())
                    }
                };
                if better {
                    best = Some(ratio);
                    leave = Some(r);
                }
            }
        }
        let Some(lr) = leave else {
            // Unbounded phase-1 cannot happen (objective bounded below by 0);
            // numerically treat as infeasible.
            return false;
        };
        // Pivot on (lr, j).
        let inv_pivot = S::one() / tab[lr][j].clone();
        for c in 0..n {
            tab[lr][c] = tab[lr][c].clone() * inv_pivot.clone();
        }
        rhs[lr] = rhs[lr].clone() * inv_pivot;
        for r in 0..rows_n {
            if r != lr && !tab[r][j].is_zero() {
                let f = tab[r][j].clone();
                for c in 0..n {
                    let delta = f.clone() * tab[lr][c].clone();
                    tab[r][c] -= delta;
                }
                let delta = f * rhs[lr].clone();
                rhs[r] -= delta;
            }
        }
        basis[lr] = Some(j);
    }
    // Feasible iff all artificial basic variables carry (numerically) zero.
    for r in 0..rows_n {
        if basis[r].is_none() && rhs[r].abs() > S::tol() {
            return false;
        }
    }
    true
}

/// Is `u` a convex combination of `dirs`? (λ ≥ 0, Σλ = 1.)
pub fn in_convex_hull<S: Scalar>(dirs: &[Vec<S>], u: &[S]) -> bool {
    if dirs.is_empty() {
        return false;
    }
    let cols: Vec<Vec<S>> = dirs
        .iter()
        .map(|d| {
            let mut c = d.clone();
            c.push(S::one());
            c
        })
        .collect();
    let mut rhs = u.to_vec();
    rhs.push(S::one());
    nonneg_combination_exists(&cols, &rhs)
}

/// Is `u` a non-negative combination of `dirs` (conical hull membership)?
pub fn in_conical_hull<S: Scalar>(dirs: &[Vec<S>], u: &[S]) -> bool {
    if is_zero_vec(u) {
        return true;
    }
    if dirs.is_empty() {
        return false;
    }
    nonneg_combination_exists(dirs, u)
}

/// Indices of the convex-hull vertices of planar points (first two
/// coordinates), by Andrew's monotone chain: counterclockwise from the
/// lexicographically smallest point, collinear middle points dropped.
/// Exact with rational scalars.
pub fn convex_hull_2d<S: Scalar>(points: &[Vec<S>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a][0]
            .total_cmp(&points[b][0])
            .then_with(|| points[a][1].total_cmp(&points[b][1]))
    });
    idx.dedup_by(|a, b| {
        (points[*a][0].clone() - points[*b][0].clone()).abs() <= S::tol()
            && (points[*a][1].clone() - points[*b][1].clone()).abs() <= S::tol()
    });
    if idx.len() <= 2 {
        return idx;
    }
    let cross = |o: usize, a: usize, b: usize| -> S {
        (points[a][0].clone() - points[o][0].clone())
            * (points[b][1].clone() - points[o][1].clone())
            - (points[a][1].clone() - points[o][1].clone())
                * (points[b][0].clone() - points[o][0].clone())
    };
    let mut hull: Vec<usize> = Vec::with_capacity(idx.len() + 1);
    for &p in &idx {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= S::tol() {
            hull.pop();
        }
        hull.push(p);
    }
    // Upper hull continues on the same stack but never pops into the lower.
    let floor = hull.len() + 1;
    for &p in idx.iter().rev().skip(1) {
        while hull.len() >= floor && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= S::tol()
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop(); // closing point repeats the start
    hull
}
