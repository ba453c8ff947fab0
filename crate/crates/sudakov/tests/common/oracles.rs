//! Independent oracles, frozen before the library was written.
//!
//! Naming convention: `*_oracle` functions recompute a quantity from scratch
//! with the most transparent algorithm available; `REF_*` constants are frozen
//! analytic values. Tests compare library output against these, never the
//! other way around.

use num::bigint::BigInt;
use num::{BigRational, Zero};
use std::collections::{BTreeMap, BTreeSet};

// ---------------------------------------------------------------------------
// Frozen reference values
// ---------------------------------------------------------------------------

/// Mean of |x₁| over a uniform unit disc centered at (2,0) (equally, (−2,0)):
/// the disc lies entirely in {x₁ > 0}, so E|x₁| = E x₁ = 2 by symmetry.
/// This is the exact optimal-transport value of the two-disc example.
pub const REF_TWO_DISC_VALUE: f64 = 2.0;

/// Relative tolerance for the Monte Carlo two-disc value (acceptance gate).
pub const REF_TWO_DISC_RTOL: f64 = 0.01;

/// Area-estimate bound for the canonical shrink test: ((s−ε)/(t̄−ε))^h with
/// t̄=1, s=1/2, ε=1/4, h=2 gives (1/3)² = 1/9.
pub const REF_SHRINK_BOUND_2D: f64 = 1.0 / 9.0;

/// Grid-count slack at resolution 1/200 (acceptance gate).
pub const REF_SHRINK_SLACK: f64 = 0.05;

// ---------------------------------------------------------------------------
// Small deterministic RNG (rand-independent, frozen)
// ---------------------------------------------------------------------------

/// SplitMix64: tiny, fully deterministic generator for oracle-side instance
/// construction. Deliberately not the library's RNG.
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn int_in(&mut self, lo: i64, hi: i64) -> i64 {
        let span = (hi - lo + 1) as u64;
        lo + (self.next_u64() % span) as i64
    }

    /// Uniform f64 in [0,1).
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

// ---------------------------------------------------------------------------
// Polyhedral cost oracles (exhaustive loops over pieces)
// ---------------------------------------------------------------------------

/// c(q) = max_i (a_i·q + b_i), exhaustive.
pub fn cost_value_oracle_r(pieces: &[(Vec<BigRational>, BigRational)], q: &[BigRational]) -> BigRational {
    let mut best: Option<BigRational> = None;
    for (a, b) in pieces {
        let mut v = b.clone();
        for (ai, qi) in a.iter().zip(q) {
            v += ai * qi;
        }
        best = Some(match best {
            None => v,
            Some(cur) => {
                if v > cur {
                    v
                } else {
                    cur
                }
            }
        });
    }
    best.expect("pieces nonempty")
}

/// Exhaustive float version.
pub fn cost_value_oracle_f(pieces: &[(Vec<f64>, f64)], q: &[f64]) -> f64 {
    pieces
        .iter()
        .map(|(a, b)| a.iter().zip(q).map(|(x, y)| x * y).sum::<f64>() + b)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Exact active set {i : a_i·q + b_i = c(q)} by exhaustive comparison.
pub fn active_set_oracle_r(pieces: &[(Vec<BigRational>, BigRational)], q: &[BigRational]) -> BTreeSet<usize> {
    let c = cost_value_oracle_r(pieces, q);
    let mut out = BTreeSet::new();
    for (i, (a, b)) in pieces.iter().enumerate() {
        let mut v = b.clone();
        for (ai, qi) in a.iter().zip(q) {
            v += ai * qi;
        }
        if v == c {
            out.insert(i);
        }
    }
    out
}

/// Membership of p in the projected face determined by an active set:
/// p ∈ O_A iff a_i·p + b_i = c(p) for every i ∈ A. Exhaustive.
pub fn face_membership_oracle_r(
    pieces: &[(Vec<BigRational>, BigRational)],
    active: &BTreeSet<usize>,
    p: &[BigRational],
) -> bool {
    let c = cost_value_oracle_r(pieces, p);
    active.iter().all(|&i| {
        let (a, b) = &pieces[i];
        let mut v = b.clone();
        for (ai, pi) in a.iter().zip(p) {
            v += ai * pi;
        }
        v == c
    })
}

// ---------------------------------------------------------------------------
// Assignment / matching oracles (permutation enumeration)
// ---------------------------------------------------------------------------

/// Minimum-cost perfect assignment over all n! permutations (n ≤ 9 sane).
/// Returns (assignment, value): assignment[i] = matched column of row i.
/// Ties resolved toward the lexicographically smallest assignment vector.
pub fn assignment_oracle_f(cost: &dyn Fn(usize, usize) -> f64, n: usize) -> (Vec<usize>, f64) {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    permute(&mut perm, 0, &mut |p| {
        let v: f64 = (0..n).map(|i| cost(i, p[i])).sum();
        match &best {
            Some((bp, bv)) if (v > bv - 1e-12 && v < bv + 1e-12 && p >= &bp[..]) || v >= *bv + 1e-12 => {}
            _ => best = Some((p.to_vec(), v)),
        }
    });
    best.expect("n >= 1")
}

fn permute(perm: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

// ---------------------------------------------------------------------------
// Duality and cyclical monotonicity oracles
// ---------------------------------------------------------------------------

/// Exact duality audit of a plan. Returns Err(description) on first failure.
///
/// Checks: (1) marginals reproduced exactly, (2) dual feasibility
/// ψ_j − φ_i ≤ c_ij on ALL pairs, (3) equality on support, (4) primal value =
/// dual value = reported value.
#[allow(clippy::too_many_arguments)]
pub fn duality_audit_oracle_r(
    mu: &[BigRational],
    nu: &[BigRational],
    cost: &dyn Fn(usize, usize) -> Option<BigRational>, // None = masked pair
    entries: &[(usize, usize, BigRational)],
    phi: &[BigRational],
    psi: &[BigRational],
    value: &BigRational,
) -> Result<(), String> {
    let zero = BigRational::zero();
    let mut row = vec![zero.clone(); mu.len()];
    let mut col = vec![zero.clone(); nu.len()];
    let mut primal = zero.clone();
    for (i, j, m) in entries {
        if *m <= zero {
            return Err(format!("nonpositive mass on entry ({i},{j})"));
        }
        let c = cost(*i, *j).ok_or_else(|| format!("support pair ({i},{j}) is masked"))?;
        row[*i] += m;
        col[*j] += m;
        primal += &c * m;
        if &psi[*j] - &phi[*i] != c {
            return Err(format!("no complementary slackness on support pair ({i},{j})"));
        }
    }
    for (i, (r, m)) in row.iter().zip(mu).enumerate() {
        if r != m {
            return Err(format!("row sum mismatch at source {i}"));
        }
    }
    for (j, (c, n)) in col.iter().zip(nu).enumerate() {
        if c != n {
            return Err(format!("column sum mismatch at target {j}"));
        }
    }
    for (i, phi_i) in phi.iter().enumerate() {
        for (j, psi_j) in psi.iter().enumerate() {
            if let Some(c) = cost(i, j) {
                if psi_j - phi_i > c {
                    return Err(format!("dual infeasible at pair ({i},{j})"));
                }
            }
        }
    }
    if &primal != value {
        return Err("reported value differs from recomputed primal objective".into());
    }
    let mut dual = zero.clone();
    for (j, w) in nu.iter().enumerate() {
        dual += &psi[j] * w;
    }
    for (i, w) in mu.iter().enumerate() {
        dual -= &phi[i] * w;
    }
    if dual != primal {
        return Err("duality gap: dual objective differs from primal".into());
    }
    Ok(())
}

/// Brute-force cyclical monotonicity over support pairs: for every cycle of
/// length 2..=max_len of distinct support entries, the cyclic exchange
/// Σ c(x_{i_k}, y_{i_{k+1}}) − Σ c(x_{i_k}, y_{i_k}) must be ≥ 0 (masked
/// exchange pairs count as +∞, i.e. never violate). Returns a violating cycle
/// of entry indices if one exists.
pub fn cyclical_monotonicity_oracle_r(
    support: &[(usize, usize)],
    cost: &dyn Fn(usize, usize) -> Option<BigRational>,
    max_len: usize,
) -> Option<Vec<usize>> {
    let n = support.len();
    let idx: Vec<usize> = (0..n).collect();
    for len in 2..=max_len.min(n) {
        let mut combo = vec![0usize; len];
        if let Some(cycle) = search_cycles(&idx, &mut combo, 0, 0, support, cost, len) {
            return Some(cycle);
        }
    }
    None
}

fn search_cycles(
    idx: &[usize],
    combo: &mut Vec<usize>,
    depth: usize,
    start: usize,
    support: &[(usize, usize)],
    cost: &dyn Fn(usize, usize) -> Option<BigRational>,
    len: usize,
) -> Option<Vec<usize>> {
    if depth == len {
        // Evaluate the cyclic exchange on this ordered tuple.
        let zero = BigRational::zero();
        let mut delta = zero.clone();
        for k in 0..len {
            let (i, j_cur) = support[combo[k]];
            let (_, j_next) = support[combo[(k + 1) % len]];
            let stay = cost(i, j_cur).expect("support pair must be unmasked");
            {
                let go = cost(i, j_next)?;
                delta += go - stay
            }
        }
        if delta < zero {
            return Some(combo.clone());
        }
        return None;
    }
    // Ordered tuples of distinct entries; fix combo[0] minimal to cut rotations.
    for (pos, &e) in idx.iter().enumerate() {
        if depth == 0 && pos < start {
            continue;
        }
        if combo[..depth].contains(&e) {
            continue;
        }
        if depth > 0 && e < combo[0] {
            continue;
        }
        combo[depth] = e;
        if let Some(v) = search_cycles(idx, combo, depth + 1, start, support, cost, len) {
            return Some(v);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Axial-path reachability and ternary-digit oracles
// ---------------------------------------------------------------------------

/// Node id convention used by the graph oracles: sources are 0..n_src,
/// targets are n_src..n_src+n_tgt.
pub fn target_node(n_src: usize, t: usize) -> usize {
    n_src + t
}

/// Exhaustive axial-path closure from one seed source.
///
/// An axial path alternates forward steps along support pairs (source →
/// its paired target) and return steps (target → any node that is further
/// along the cone, decided by `cone_step(from, to)`). The closure includes a
/// final cone step from any reached target. This enumerates ALL paths up to
/// `max_steps` alternations instead of doing a clever BFS, as an oracle
/// should.
pub fn axial_reach_oracle(
    n_src: usize,
    n_tgt: usize,
    pairs: &[(usize, usize)],
    cone_step: &dyn Fn(usize, usize) -> bool, // (target node, any node) → reachable
    seed_source: usize,
    max_steps: usize,
) -> BTreeSet<usize> {
    let n_nodes = n_src + n_tgt;
    let mut reached: BTreeSet<usize> = BTreeSet::new();
    reached.insert(seed_source);
    // frontier of source nodes whose pair step we have not yet expanded
    let mut frontier: Vec<usize> = vec![seed_source];
    for _ in 0..max_steps {
        let mut next_frontier = Vec::new();
        for &s in &frontier {
            for &(ps, pt) in pairs {
                if ps != s {
                    continue;
                }
                let tn = target_node(n_src, pt);
                reached.insert(tn);
                // return step: target → any node further along the cone
                for node in 0..n_nodes {
                    if cone_step(tn, node) && reached.insert(node) && node < n_src {
                        next_frontier.push(node);
                    }
                }
            }
        }
        if next_frontier.is_empty() {
            break;
        }
        frontier = next_frontier;
    }
    reached
}

/// Ternary digit strings: digit n of node w is 1 iff w ∈ H_n (reachable from
/// seed source n). Independent of the library's BFS and of its SCC route.
#[allow(clippy::needless_range_loop)] // seed indexes the inner digit position
pub fn theta_digits_oracle(
    n_src: usize,
    n_tgt: usize,
    pairs: &[(usize, usize)],
    cone_step: &dyn Fn(usize, usize) -> bool,
) -> Vec<Vec<bool>> {
    let n_nodes = n_src + n_tgt;
    let mut digits = vec![vec![false; n_src]; n_nodes];
    for seed in 0..n_src {
        let reach = axial_reach_oracle(n_src, n_tgt, pairs, cone_step, seed, n_nodes + 1);
        for w in reach {
            digits[w][seed] = true;
        }
    }
    digits
}

/// θ′ value from a digit string: max{0, Σ 2·3^{−(n+1)} · digit_n} as an exact
/// rational (digit index n is 0-based here; the sum uses exponent n+1).
pub fn theta_value_from_digits(digits: &[bool]) -> BigRational {
    let mut v = BigRational::zero();
    let three = BigInt::from(3);
    let mut pow = BigInt::from(1);
    for &d in digits {
        pow = &pow * &three;
        if d {
            v += BigRational::new(BigInt::from(2), pow.clone());
        }
    }
    v
}

/// Every vertex of a masked transportation polytope, by brute force: each
/// acyclic arc subset touching all atoms whose leaf-elimination flow is
/// nonnegative and exactly clears the marginals is a basic feasible plan.
/// Deduplicated by positive support. Exponential in the arc count on purpose —
/// the inputs are tiny and the transparency is the point.
pub fn vertex_plans_oracle(
    mu: &[BigRational],
    nu: &[BigRational],
    allowed: &[(usize, usize)],
) -> Vec<Vec<(usize, usize, BigRational)>> {
    fn root(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }

    let n_src = mu.len();
    let n_tgt = nu.len();
    let n = n_src + n_tgt;
    assert!(allowed.len() <= 16, "vertex enumeration is exponential in the arc count");
    let mut plans: BTreeMap<Vec<(usize, usize)>, Vec<(usize, usize, BigRational)>> =
        BTreeMap::new();
    for subset in 1u32..1 << allowed.len() {
        let arcs: Vec<(usize, usize)> = (0..allowed.len())
            .filter(|k| subset >> k & 1 == 1)
            .map(|k| allowed[k])
            .collect();
        if arcs.len() > n - 1 {
            continue;
        }
        let mut degree = vec![0usize; n];
        for &(i, j) in &arcs {
            degree[i] += 1;
            degree[n_src + j] += 1;
        }
        if degree.iter().any(|&d| d == 0) {
            continue;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        let mut forest = true;
        for &(i, j) in &arcs {
            let (a, b) = (root(&mut parent, i), root(&mut parent, n_src + j));
            if a == b {
                forest = false;
                break;
            }
            parent[a] = b;
        }
        if !forest {
            continue;
        }
        // On a forest the flows are forced: repeatedly settle an arc at a
        // degree-one atom with that atom's remaining mass.
        let mut remaining: Vec<BigRational> = mu.iter().chain(nu.iter()).cloned().collect();
        let mut flows: Vec<BigRational> = vec![BigRational::zero(); arcs.len()];
        let mut alive = vec![true; arcs.len()];
        let mut feasible = true;
        for _ in 0..arcs.len() {
            let Some(k) = (0..arcs.len()).find(|&k| {
                alive[k] && (degree[arcs[k].0] == 1 || degree[n_src + arcs[k].1] == 1)
            }) else {
                feasible = false;
                break;
            };
            let (i, j) = arcs[k];
            let (leaf, other) = if degree[i] == 1 { (i, n_src + j) } else { (n_src + j, i) };
            let f = remaining[leaf].clone();
            if f < BigRational::zero() {
                feasible = false;
                break;
            }
            remaining[leaf] = BigRational::zero();
            remaining[other] = remaining[other].clone() - f.clone();
            flows[k] = f;
            alive[k] = false;
            degree[i] -= 1;
            degree[n_src + j] -= 1;
        }
        if !feasible || remaining.iter().any(|m| !m.is_zero()) {
            continue;
        }
        let plan: Vec<(usize, usize, BigRational)> = arcs
            .into_iter()
            .zip(flows)
            .filter(|(_, f)| f > &BigRational::zero())
            .map(|((i, j), f)| (i, j, f))
            .collect();
        if plan.is_empty() {
            continue;
        }
        let support: Vec<(usize, usize)> = plan.iter().map(|&(i, j, _)| (i, j)).collect();
        plans.entry(support).or_insert(plan);
    }
    plans.into_values().collect()
}

// ---------------------------------------------------------------------------
// Convex hull oracle (gift wrapping, f64, 2-d)
// ---------------------------------------------------------------------------

/// Gift-wrapping hull of 2-d points; returns hull vertices in CCW order
/// starting from the lexicographically smallest point. Collinear middle
/// points are dropped. Independent of the library's monotone chain.
pub fn hull2d_oracle_f(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= 2 {
        let mut v = points.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        return v;
    }
    let start = *points
        .iter()
        .min_by(|a, b| a.partial_cmp(b).unwrap())
        .unwrap();
    let mut hull = vec![start];
    let mut cur = start;
    loop {
        let mut cand = points[0];
        if (cand.0 - cur.0).abs() < 1e-15 && (cand.1 - cur.1).abs() < 1e-15 {
            cand = points[points.len() - 1];
        }
        for &p in points {
            if (p.0 - cur.0).abs() < 1e-15 && (p.1 - cur.1).abs() < 1e-15 {
                continue;
            }
            let cross = (cand.0 - cur.0) * (p.1 - cur.1) - (cand.1 - cur.1) * (p.0 - cur.0);
            let further = (p.0 - cur.0).powi(2) + (p.1 - cur.1).powi(2)
                > (cand.0 - cur.0).powi(2) + (cand.1 - cur.1).powi(2);
            if cross < -1e-12 || (cross.abs() <= 1e-12 && further) {
                cand = p;
            }
        }
        if (cand.0 - start.0).abs() < 1e-15 && (cand.1 - start.1).abs() < 1e-15 {
            break;
        }
        hull.push(cand);
        cur = cand;
        if hull.len() > points.len() {
            panic!("gift wrapping failed to close");
        }
    }
    hull
}

// ---------------------------------------------------------------------------
// Integer grid shrink-count oracle (area estimate)
// ---------------------------------------------------------------------------

/// Count distinct cells hit by the ρ = 1/3 shrink toward the origin of an
/// integer grid set, at the same grid resolution: |{(⌊i/3⌋, ⌊j/3⌋)}| with
/// floor toward −∞. Returns (image cells, source points).
pub fn shrink_count_oracle(points: &[(i64, i64)]) -> (usize, usize) {
    let img: BTreeSet<(i64, i64)> = points
        .iter()
        .map(|&(i, j)| (i.div_euclid(3), j.div_euclid(3)))
        .collect();
    (img.len(), points.len())
}
