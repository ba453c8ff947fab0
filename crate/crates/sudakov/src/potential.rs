//! Dual potentials on the lifted half-space and the first directed locally
//! affine partition.
//!
//! The target-side potential ψ extends to all of `[0,∞)×ℝᵈ` by the Lax
//! formula `φ̄(t,x) = min_j { −ψ(x′_j) + c̄(t, x−x′_j) }`. Equality cases of
//! the defining inequality `φ̄(z) − φ̄(z′) ≤ c̄(z−z′)` single out discrete
//! super- and sub-differentials; the normalized directions from a point into
//! its differential span a cone face, and points whose forward and backward
//! direction sets are convex, full, and interior-witnessed are the regular
//! points. Grouping regular sources by the exact combinatorial face data
//! yields the first partition into directed locally affine classes.
//!
//! Direction sets read from target atoms alone are systematically flat:
//! every atom sits on the `t=0` layer, so all atom directions share the same
//! time drop. The analysis therefore probes intermediate points `z ∓ s(1,v)`
//! along the candidate face and keeps exactly the probes whose equality the
//! Lax evaluator confirms — dimensions are measured on verified directions
//! only, never assumed from the face.

use crate::cone::{self, Cone, CostKind, LiftedCost};
use crate::linalg;
use crate::scalar::Scalar;
use crate::solver::{Plan, TransportInstance};
use crate::{Error, Result};
use rayon::prelude::*;
use std::collections::BTreeSet;

/// A point `z = (t,x)` of the lifted half-space; sources live at `t=1`,
/// targets at `t=0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPoint<S: Scalar> {
    pub t: S,
    pub x: Vec<S>,
}

impl<S: Scalar> LiftedPoint<S> {
    pub fn new(t: S, x: Vec<S>) -> Result<Self> {
        if t < -S::tol() {
            return Err(Error::Input("lifted points need t ≥ 0".into()));
        }
        Ok(Self { t, x })
    }

    pub fn source(x: Vec<S>) -> Self {
        Self { t: S::one(), x }
    }

    pub fn target(x: Vec<S>) -> Self {
        Self { t: S::zero(), x }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Coordinates as one `(t, x…)` vector.
    pub fn coords(&self) -> Vec<S> {
        let mut c = Vec::with_capacity(self.x.len() + 1);
        c.push(self.t.clone());
        c.extend(self.x.iter().cloned());
        c
    }
}

/// The displacement `a − b` as a lifted vector `(Δt, Δx)`.
fn lifted_diff<S: Scalar>(a: &LiftedPoint<S>, b: &LiftedPoint<S>) -> Vec<S> {
    let mut d = Vec::with_capacity(a.x.len() + 1);
    d.push(a.t.clone() - b.t.clone());
    for (xa, xb) in a.x.iter().zip(&b.x) {
        d.push(xa.clone() - xb.clone());
    }
    d
}

/// Target-side dual potential with its Lax extension.
#[derive(Debug, Clone)]
pub struct PotentialField<S: Scalar> {
    targets: Vec<Vec<S>>,
    psi: Vec<S>,
}

impl<S: Scalar> PotentialField<S> {
    pub fn new(targets: Vec<Vec<S>>, psi: Vec<S>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Input("a potential field needs at least one target atom".into()));
        }
        if targets.len() != psi.len() {
            return Err(Error::Input(format!(
                "{} targets but {} potential values",
                targets.len(),
                psi.len()
            )));
        }
        let d = targets[0].len();
        if targets.iter().any(|t| t.len() != d) {
            return Err(Error::Input("target atoms have mixed dimensions".into()));
        }
        Ok(Self { targets, psi })
    }

    /// Read the target potential off a solved plan.
    pub fn from_plan(instance: &TransportInstance<S>, plan: &Plan<S>) -> Result<Self> {
        Self::new(
            instance.nu.iter().map(|(p, _)| p.clone()).collect(),
            plan.psi.clone(),
        )
    }

    pub fn targets(&self) -> &[Vec<S>] {
        &self.targets
    }

    pub fn psi(&self) -> &[S] {
        &self.psi
    }

    /// Lax evaluation: `min_j { −ψ_j + c̄(t, x−x′_j) }`. `None` is +∞ (only
    /// possible on the `t=0` layer away from the atoms, or for superlinear
    /// costs at `t=0`).
    pub fn lax(&self, lifted: &LiftedCost<S>, z: &LiftedPoint<S>) -> Result<Option<S>> {
        if z.t < -S::tol() {
            return Err(Error::Input("potential queried at negative time".into()));
        }
        if z.x.len() + 1 != lifted.ambient() {
            return Err(Error::Input("point dimension does not match the cost".into()));
        }
        let mut best: Option<S> = None;
        let mut diff = vec![S::zero(); z.x.len() + 1];
        for (xj, psi) in self.targets.iter().zip(&self.psi) {
            diff[0] = z.t.clone();
            for (slot, (xi, xji)) in diff[1..].iter_mut().zip(z.x.iter().zip(xj)) {
                *slot = xi.clone() - xji.clone();
            }
            if let Some(c) = lifted.value(&diff) {
                let cand = c - psi.clone();
                best = Some(match best {
                    None => cand,
                    Some(b) if cand < b => cand,
                    Some(b) => b,
                });
            }
        }
        Ok(best)
    }

    /// Boundary and monotonicity audit: `φ̄(0,x′_j) = −ψ_j` on every atom,
    /// and `φ̄(z) − φ̄(z′) ≤ c̄(z−z′)` over all sample pairs with `t ≥ t′`.
    pub fn audit(&self, lifted: &LiftedCost<S>, samples: &[LiftedPoint<S>]) -> Result<()> {
        for (j, (xj, psi)) in self.targets.iter().zip(&self.psi).enumerate() {
            let z = LiftedPoint::target(xj.clone());
            let got = self
                .lax(lifted, &z)?
                .ok_or_else(|| Error::Invariant(format!("potential undefined on atom {j}")))?;
            if !(got.clone() + psi.clone()).abs().approx_le(&S::coarse_tol()) {
                return Err(Error::Invariant(format!(
                    "boundary value at atom {j}: φ̄ = {}, expected {}",
                    got.render(),
                    (-psi.clone()).render()
                )));
            }
        }
        let values: Vec<Option<S>> =
            samples.iter().map(|z| self.lax(lifted, z)).collect::<Result<_>>()?;
        for (i, zi) in samples.iter().enumerate() {
            for (j, zj) in samples.iter().enumerate() {
                if i == j || zi.t < zj.t {
                    continue;
                }
                let (Some(vi), Some(vj)) = (&values[i], &values[j]) else { continue };
                if let Some(c) = lifted.value(&lifted_diff(zi, zj)) {
                    let slack = c.clone() - (vi.clone() - vj.clone());
                    if slack < -S::coarse_tol() * (S::one() + c.abs()) {
                        return Err(Error::Invariant(format!(
                            "monotonicity fails between samples {i} and {j} (slack {})",
                            slack.render()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// The Lax extension as a free operation.
pub fn lax_extend<S: Scalar>(
    field: &PotentialField<S>,
    lifted: &LiftedCost<S>,
    z: &LiftedPoint<S>,
) -> Result<Option<S>> {
    field.lax(lifted, z)
}

/// Potential values at many points, in parallel.
pub fn lax_values<S: Scalar + Send + Sync>(
    field: &PotentialField<S>,
    lifted: &LiftedCost<S>,
    points: &[LiftedPoint<S>],
) -> Result<Vec<Option<S>>> {
    points.par_iter().map(|z| field.lax(lifted, z)).collect()
}

/// Discrete differential data of `φ̄` at one point, over a finite candidate
/// list: indices realizing the sub/super equality, and the corresponding
/// normalized directions `(1, v)` (time component one; the zero displacement
/// carries no direction).
#[derive(Debug, Clone)]
pub struct DifferentialData<S: Scalar> {
    /// Candidates `z′` below with `φ̄(z) − φ̄(z′) = c̄(z−z′)`.
    pub sub: Vec<usize>,
    /// Candidates `z″` above with `φ̄(z″) − φ̄(z) = c̄(z″−z)`.
    pub sup: Vec<usize>,
    pub dirs_back: Vec<Vec<S>>,
    pub dirs_fwd: Vec<Vec<S>>,
    /// Directions to candidates reachable at finite cost whose equality
    /// fails. Diagnostic only: a slack atom does not exclude its direction
    /// from the differential (another chain may realize it), so these are
    /// never held against the hull.
    pub slack_back: Vec<Vec<S>>,
    pub slack_fwd: Vec<Vec<S>>,
}

impl<S: Scalar> DifferentialData<S> {
    fn empty() -> Self {
        Self {
            sub: Vec::new(),
            sup: Vec::new(),
            dirs_back: Vec::new(),
            dirs_fwd: Vec::new(),
            slack_back: Vec::new(),
            slack_fwd: Vec::new(),
        }
    }
}

/// Equality of `hi − lo` with `cost`, at the coarse tolerance scaled by the
/// cost magnitude (exact for rationals).
fn realizes<S: Scalar>(hi: &S, lo: &S, cost: &S) -> bool {
    let lhs = hi.clone() - lo.clone();
    (lhs - cost.clone()).abs() <= S::coarse_tol() * (S::one() + cost.abs())
}

fn normalized_dir<S: Scalar>(diff: &[S]) -> Option<Vec<S>> {
    let dt = &diff[0];
    if *dt <= S::coarse_tol() {
        return None;
    }
    let mut v = Vec::with_capacity(diff.len());
    v.push(S::one());
    for c in &diff[1..] {
        v.push(c.clone() / dt.clone());
    }
    Some(v)
}

/// Differential data at `z` over `candidates`, values computed internally.
pub fn superdiff_pairs<S: Scalar>(
    field: &PotentialField<S>,
    lifted: &LiftedCost<S>,
    z: &LiftedPoint<S>,
    candidates: &[LiftedPoint<S>],
) -> Result<DifferentialData<S>> {
    let phi_z = field.lax(lifted, z)?;
    let values: Vec<Option<S>> =
        candidates.iter().map(|c| field.lax(lifted, c)).collect::<Result<_>>()?;
    Ok(superdiff_core(lifted, z, &phi_z, candidates, &values))
}

fn superdiff_core<S: Scalar>(
    lifted: &LiftedCost<S>,
    z: &LiftedPoint<S>,
    phi_z: &Option<S>,
    candidates: &[LiftedPoint<S>],
    values: &[Option<S>],
) -> DifferentialData<S> {
    let Some(phi_z) = phi_z else { return DifferentialData::empty() };
    let mut data = DifferentialData::empty();
    for (k, (cand, val)) in candidates.iter().zip(values).enumerate() {
        let Some(val) = val else { continue };
        let dt = z.t.clone() - cand.t.clone();
        if dt >= -S::tol() {
            let diff = lifted_diff(z, cand);
            if let Some(c) = lifted.value(&diff) {
                if realizes(phi_z, val, &c) {
                    data.sub.push(k);
                    if let Some(dir) = normalized_dir(&diff) {
                        data.dirs_back.push(dir);
                    }
                } else if let Some(dir) = normalized_dir(&diff) {
                    data.slack_back.push(dir);
                }
            }
        }
        if dt <= S::tol() {
            let diff = lifted_diff(cand, z);
            if let Some(c) = lifted.value(&diff) {
                if realizes(val, phi_z, &c) {
                    data.sup.push(k);
                    if let Some(dir) = normalized_dir(&diff) {
                        data.dirs_fwd.push(dir);
                    }
                } else if let Some(dir) = normalized_dir(&diff) {
                    data.slack_fwd.push(dir);
                }
            }
        }
    }
    data.dirs_back = cone::dedupe_vectors(data.dirs_back);
    data.dirs_fwd = cone::dedupe_vectors(data.dirs_fwd);
    data
}

/// Knobs for the direction analysis.
#[derive(Debug, Clone)]
pub struct ClassifyOptions<S: Scalar> {
    /// Fraction of the available time budget used for probe points
    /// (`z ∓ s·(1,v)`). The defining conditions of regularity ask for an
    /// interior witness at *some* positive depth; the depth itself is a
    /// resolution choice, so it is a parameter.
    pub witness_step: S,
    /// Cap on hull-vertex pairs probed by the convexity check.
    pub max_probe_pairs: usize,
}

impl<S: Scalar> Default for ClassifyOptions<S> {
    fn default() -> Self {
        Self { witness_step: S::from_ratio(1, 2), max_probe_pairs: 24 }
    }
}

/// Verified direction structure on one side of a point.
#[derive(Debug, Clone)]
pub struct SideReport<S: Scalar> {
    /// All verified directions `(1, v)`, atom-derived and probe-confirmed.
    pub dirs: Vec<Vec<S>>,
    /// Hull vertices of the `t=1` section, as `(1, v)` directions.
    pub hull_vertices: Vec<Vec<S>>,
    /// Affine dimension of the section of the direction hull.
    pub dim: usize,
    /// Midpoints and barycenter of the hull verify their own equalities.
    pub convex: bool,
    /// An interior (barycentric) probe verifies the equality and itself
    /// connects onward to the candidate set.
    pub witness: bool,
    /// Intersection of lifted active sets over the hull vertices (empty for
    /// superlinear costs).
    pub active: BTreeSet<usize>,
}

/// Direction analysis of one point: differential data plus per-side verdicts.
#[derive(Debug, Clone)]
pub struct DirectionReport<S: Scalar> {
    pub differential: DifferentialData<S>,
    pub backward: Option<SideReport<S>>,
    pub forward: Option<SideReport<S>>,
}

/// Which defining condition of regularity failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// (i) the sampled direction set is not convex.
    Convexity,
    /// (ii) the two sides disagree in dimension or face.
    Dimension,
    /// (iii) no interior witness verified.
    Witness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualReason {
    Backward(Condition),
    Forward(Condition),
    /// Backward and forward pass separately but with different dimensions
    /// or faces.
    SidesDisagree,
    /// No equality pair at all.
    NoDirections,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PointClass {
    /// Mass stays put: the only verified transport direction is vertical.
    Fixed,
    BackwardRegular { h: usize },
    ForwardRegular { h: usize },
    Regular { h: usize },
    Residual { reasons: Vec<ResidualReason> },
}

#[derive(Debug, Clone)]
pub struct Classification<S: Scalar> {
    pub point: LiftedPoint<S>,
    pub class: PointClass,
    pub backward: Option<SideReport<S>>,
    pub forward: Option<SideReport<S>>,
}

fn is_vertical<S: Scalar>(dir: &[S]) -> bool {
    dir[1..].iter().all(|c| c.abs() <= S::coarse_tol())
}

/// Probe the equality at `z ∓ step·(1,v)`; `Some(true)` means verified.
fn probe_equality<S: Scalar>(
    field: &PotentialField<S>,
    lifted: &LiftedCost<S>,
    z: &LiftedPoint<S>,
    phi_z: &S,
    v: &[S],
    step: &S,
    downward: bool,
) -> Result<Option<(bool, LiftedPoint<S>)>> {
    let mut x = Vec::with_capacity(z.x.len());
    let t = if downward {
        for (xi, vi) in z.x.iter().zip(v) {
            x.push(xi.clone() - step.clone() * vi.clone());
        }
        z.t.clone() - step.clone()
    } else {
        for (xi, vi) in z.x.iter().zip(v) {
            x.push(xi.clone() + step.clone() * vi.clone());
        }
        z.t.clone() + step.clone()
    };
    if t < -S::tol() {
        return Ok(None);
    }
    let w = LiftedPoint { t: if t < S::zero() { S::zero() } else { t }, x };
    let Some(phi_w) = field.lax(lifted, &w)? else { return Ok(None) };
    let mut diff = Vec::with_capacity(v.len() + 1);
    diff.push(step.clone());
    diff.extend(v.iter().map(|vi| step.clone() * vi.clone()));
    let Some(c) = lifted.value(&diff) else { return Ok(None) };
    let ok = if downward {
        realizes(phi_z, &phi_w, &c)
    } else {
        realizes(&phi_w, phi_z, &c)
    };
    Ok(Some((ok, w)))
}

/// Hull vertices of direction sections (as indices into `sections`).
fn section_hull_vertices<S: Scalar>(sections: &[Vec<S>]) -> Vec<usize> {
    match sections.len() {
        0..=2 => (0..sections.len()).collect(),
        _ => {
            if sections[0].len() == 2 {
                return linalg::convex_hull_2d(sections);
            }
            let sdim = linalg::affine_dim(sections);
            if sdim <= 1 {
                // Endpoints of the segment: extremes of the projection onto
                // its direction.
                let base = &sections[0];
                let dir = sections
                    .iter()
                    .map(|s| linalg::sub(s, base))
                    .find(|d| !linalg::is_zero_vec(d))
                    .unwrap_or_else(|| vec![S::zero(); base.len()]);
                if linalg::is_zero_vec(&dir) {
                    return vec![0];
                }
                let proj: Vec<S> =
                    sections.iter().map(|s| linalg::dot(&linalg::sub(s, base), &dir)).collect();
                let lo = (0..proj.len())
                    .min_by(|&a, &b| proj[a].total_cmp(&proj[b]))
                    .expect("nonempty");
                let hi = (0..proj.len())
                    .max_by(|&a, &b| proj[a].total_cmp(&proj[b]))
                    .expect("nonempty");
                if lo == hi {
                    vec![lo]
                } else {
                    vec![lo, hi]
                }
            } else if sections.len() <= 120 {
                // Greedy reduction: a point is a vertex iff it is not in the
                // hull of the others.
                let mut keep = Vec::new();
                for i in 0..sections.len() {
                    let others: Vec<Vec<S>> = sections
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i && !keep.contains(j))
                        .map(|(_, s)| s.clone())
                        .chain(keep.iter().map(|&j: &usize| sections[j].clone()))
                        .collect();
                    if !linalg::in_convex_hull(&others, &sections[i]) {
                        keep.push(i);
                    }
                }
                if keep.is_empty() {
                    vec![0]
                } else {
                    keep
                }
            } else {
                (0..sections.len()).collect()
            }
        }
    }
}

/// Analyze one side of a point. `atom_dirs` are pre-verified directions
/// from candidate equalities; `seed_extra` directions are probe-verified
/// before use (the forward side of a source has no atoms above it and is
/// seeded from the backward side). Returns `None` when there is no room on
/// that side or nothing verifies.
#[allow(clippy::too_many_arguments)]
fn analyze_side<S: Scalar>(
    field: &PotentialField<S>,
    lifted: &LiftedCost<S>,
    z: &LiftedPoint<S>,
    phi_z: &S,
    atom_dirs: &[Vec<S>],
    seed_extra: &[Vec<S>],
    candidates: &[LiftedPoint<S>],
    values: &[Option<S>],
    downward: bool,
    opts: &ClassifyOptions<S>,
) -> Result<Option<SideReport<S>>> {
    let step = if downward {
        let budget = z.t.clone();
        if budget <= S::coarse_tol() {
            return Ok(None);
        }
        opts.witness_step.clone() * budget
    } else {
        opts.witness_step.clone()
    };
    let mut dirs: Vec<Vec<S>> = atom_dirs.to_vec();
    for v in seed_extra {
        if let Some((true, _)) = probe_equality(field, lifted, z, phi_z, &v[1..], &step, downward)?
        {
            dirs.push(v.clone());
        }
    }
    if dirs.is_empty() {
        return Ok(None);
    }

    let probe = |v: &[S]| probe_equality(field, lifted, z, phi_z, v, &step, downward);
    let dim_x = z.x.len();
    let mean = |vs: &[Vec<S>]| -> Vec<S> {
        let n = S::from_int(vs.len() as i64);
        (0..dim_x)
            .map(|k| {
                vs.iter().fold(S::zero(), |acc, v| acc + v[1 + k].clone()) / n.clone()
            })
            .collect()
    };

    // Face probes: directions suggested by the smallest common face of the
    // verified directions, each accepted only if its own equality verifies.
    let bary = mean(&dirs);
    let mut probes: Vec<Vec<S>> = vec![bary.clone()];
    probes.push(linalg::scale(&bary, &S::from_ratio(1, 2)));
    probes.push(linalg::scale(&bary, &S::from_ratio(3, 2)));
    if lifted.base.kind == CostKind::Polyhedral {
        let mut common: Option<BTreeSet<usize>> = None;
        for d in &dirs {
            let a = lifted.active_set(d, &S::tol());
            common = Some(match common {
                None => a,
                Some(c) => c.intersection(&a).copied().collect(),
            });
        }
        if let Some(active) = common.filter(|a| !a.is_empty()) {
            if let Ok(face) = lifted.cone_from_active(&active, false) {
                let half = S::from_ratio(1, 2);
                for g in &face.generators {
                    if g[0] > S::coarse_tol() {
                        let sec: Vec<S> =
                            g[1..].iter().map(|c| c.clone() / g[0].clone()).collect();
                        probes.push(sec.clone());
                        probes.push(
                            sec.iter()
                                .zip(&bary)
                                .map(|(a, b)| (a.clone() + b.clone()) * half.clone())
                                .collect(),
                        );
                    } else {
                        probes.push(
                            bary.iter()
                                .zip(&g[1..])
                                .map(|(b, gc)| b.clone() + half.clone() * gc.clone())
                                .collect(),
                        );
                        probes.push(
                            bary.iter()
                                .zip(&g[1..])
                                .map(|(b, gc)| b.clone() - half.clone() * gc.clone())
                                .collect(),
                        );
                    }
                }
            }
        }
    }
    for v in probes {
        if let Some((true, _)) = probe(&v)? {
            let mut dir = Vec::with_capacity(dim_x + 1);
            dir.push(S::one());
            dir.extend(v);
            dirs.push(dir);
        }
    }
    let dirs = cone::dedupe_vectors(dirs);

    // Hull of the t=1 section.
    let sections: Vec<Vec<S>> = dirs.iter().map(|d| d[1..].to_vec()).collect();
    let dim = linalg::affine_dim(&sections);
    let vertex_idx = section_hull_vertices(&sections);
    let vertices: Vec<Vec<S>> = vertex_idx.iter().map(|&i| dirs[i].clone()).collect();
    let vertex_secs: Vec<Vec<S>> = vertex_idx.iter().map(|&i| sections[i].clone()).collect();

    // Convexity: hull midpoints and the barycenter must verify their own
    // equalities. (Directions to non-tight atoms are deliberately NOT held
    // against the hull: an atom can carry dual slack while the direction to
    // it still belongs to the differential through another chain; hull
    // membership is decided by the probes, which test the equality itself.)
    let mut convex = true;
    let vbary = mean(&vertices);
    let bary_ok = matches!(probe(&vbary)?, Some((true, _)));
    if !bary_ok {
        convex = false;
    }
    let half = S::from_ratio(1, 2);
    let mut pairs_probed = 0;
    'pairs: for i in 0..vertex_secs.len() {
        for j in (i + 1)..vertex_secs.len() {
            if pairs_probed >= opts.max_probe_pairs {
                break 'pairs;
            }
            pairs_probed += 1;
            let mid: Vec<S> = vertex_secs[i]
                .iter()
                .zip(&vertex_secs[j])
                .map(|(a, b)| (a.clone() + b.clone()) * half.clone())
                .collect();
            if !matches!(probe(&mid)?, Some((true, _))) {
                convex = false;
                break 'pairs;
            }
        }
    }
    // Interior witness: the barycentric probe point verifies and is itself
    // anchored to the candidate set by a downward equality of its own (the
    // candidates all live at or below the top time layer, so anchoring is
    // always read downward, on both sides).
    let witness = if bary_ok {
        match probe(&vbary)? {
            Some((true, w)) => match field.lax(lifted, &w)? {
                None => false,
                Some(phi_w) => candidates.iter().zip(values).any(|(cand, val)| {
                    let Some(val) = val else { return false };
                    if cand.t.clone() >= w.t.clone() - S::coarse_tol() {
                        return false;
                    }
                    lifted
                        .value(&lifted_diff(&w, cand))
                        .map(|c| realizes(&phi_w, val, &c))
                        .unwrap_or(false)
                }),
            },
            _ => false,
        }
    } else {
        false
    };

    // Exact combinatorial face of the verified hull.
    let mut active: Option<BTreeSet<usize>> = None;
    if lifted.base.kind == CostKind::Polyhedral {
        for v in &vertices {
            let a = lifted.active_set(v, &S::tol());
            active = Some(match active {
                None => a,
                Some(c) => c.intersection(&a).copied().collect(),
            });
        }
    }

    Ok(Some(SideReport {
        dirs,
        hull_vertices: vertices,
        dim,
        convex,
        witness,
        active: active.unwrap_or_default(),
    }))
}

/// Full direction analysis of one point against a candidate list, values
/// computed internally. For batch work use [`classify_all`], which caches
/// the candidate values once.
pub fn analyze_directions<S: Scalar>(
    field: &PotentialField<S>,
    lifted: &LiftedCost<S>,
    z: &LiftedPoint<S>,
    candidates: &[LiftedPoint<S>],
    opts: &ClassifyOptions<S>,
) -> Result<DirectionReport<S>> {
    let phi_z = field.lax(lifted, z)?;
    let values: Vec<Option<S>> =
        candidates.iter().map(|c| field.lax(lifted, c)).collect::<Result<_>>()?;
    analyze_directions_cached(field, lifted, z, &phi_z, candidates, &values, opts)
}

#[allow(clippy::too_many_arguments)]
fn analyze_directions_cached<S: Scalar>(
    field: &PotentialField<S>,
    lifted: &LiftedCost<S>,
    z: &LiftedPoint<S>,
    phi_z: &Option<S>,
    candidates: &[LiftedPoint<S>],
    values: &[Option<S>],
    opts: &ClassifyOptions<S>,
) -> Result<DirectionReport<S>> {
    let differential = superdiff_core(lifted, z, phi_z, candidates, values);
    let Some(phi_z) = phi_z else {
        return Ok(DirectionReport { differential, backward: None, forward: None });
    };
    let backward = analyze_side(
        field,
        lifted,
        z,
        phi_z,
        &differential.dirs_back,
        &[],
        candidates,
        values,
        true,
        opts,
    )?;
    // The forward side of a source has no candidates above it; seed it with
    // the backward directions (for a regular point the cone continues).
    let seed: Vec<Vec<S>> = match (&backward, differential.dirs_fwd.is_empty()) {
        (Some(b), true) => b.hull_vertices.clone(),
        _ => Vec::new(),
    };
    let forward = analyze_side(
        field,
        lifted,
        z,
        phi_z,
        &differential.dirs_fwd,
        &seed,
        candidates,
        values,
        false,
        opts,
    )?;
    Ok(DirectionReport { differential, backward, forward })
}

/// Verdict from a direction report.
pub fn classify_point<S: Scalar>(
    z: &LiftedPoint<S>,
    report: DirectionReport<S>,
) -> Classification<S> {
    let DirectionReport { differential, backward, forward } = report;
    let any_pair = !differential.sub.is_empty() || !differential.sup.is_empty();
    let all_vertical = |r: &Option<SideReport<S>>| {
        r.as_ref().is_none_or(|s| s.dirs.iter().all(|d| is_vertical(d)))
    };
    let side_nonempty = |r: &Option<SideReport<S>>| {
        r.as_ref().is_some_and(|s| s.dirs.iter().any(|d| !is_vertical(d)))
    };

    let class = if !side_nonempty(&backward) && !side_nonempty(&forward) {
        if any_pair && (all_vertical(&backward) && all_vertical(&forward)) {
            PointClass::Fixed
        } else {
            PointClass::Residual { reasons: vec![ResidualReason::NoDirections] }
        }
    } else {
        let verdict = |r: &Option<SideReport<S>>, side: fn(Condition) -> ResidualReason| {
            match r {
                None => (None, Vec::new()),
                Some(s) => {
                    let mut reasons = Vec::new();
                    if !s.convex {
                        reasons.push(side(Condition::Convexity));
                    }
                    if !s.witness {
                        reasons.push(side(Condition::Witness));
                    }
                    if reasons.is_empty() {
                        (Some(s.dim), Vec::new())
                    } else {
                        (None, reasons)
                    }
                }
            }
        };
        let (back_h, mut back_reasons) = verdict(&backward, ResidualReason::Backward);
        let (fwd_h, fwd_reasons) = verdict(&forward, ResidualReason::Forward);
        match (back_h, fwd_h) {
            (Some(hb), Some(hf)) => {
                let faces_agree = match (&backward, &forward) {
                    (Some(b), Some(f)) => b.active == f.active,
                    _ => false,
                };
                if hb == hf && faces_agree {
                    PointClass::Regular { h: hb }
                } else {
                    PointClass::Residual { reasons: vec![ResidualReason::SidesDisagree] }
                }
            }
            (Some(hb), None) => PointClass::BackwardRegular { h: hb },
            (None, Some(hf)) => PointClass::ForwardRegular { h: hf },
            (None, None) => {
                back_reasons.extend(fwd_reasons);
                if back_reasons.is_empty() {
                    back_reasons.push(ResidualReason::NoDirections);
                }
                PointClass::Residual { reasons: back_reasons }
            }
        }
    };
    Classification { point: z.clone(), class, backward, forward }
}

/// Classify many points against a shared candidate list, in parallel.
pub fn classify_all<S: Scalar + Send + Sync>(
    field: &PotentialField<S>,
    lifted: &LiftedCost<S>,
    points: &[LiftedPoint<S>],
    candidates: &[LiftedPoint<S>],
    opts: &ClassifyOptions<S>,
) -> Result<Vec<Classification<S>>> {
    let values = lax_values(field, lifted, candidates)?;
    points
        .par_iter()
        .map(|z| {
            let phi_z = field.lax(lifted, z)?;
            let report =
                analyze_directions_cached(field, lifted, z, &phi_z, candidates, &values, opts)?;
            Ok(classify_point(z, report))
        })
        .collect()
}

/// One directed locally affine class of the first partition.
#[derive(Debug, Clone)]
pub struct FaceClass<S: Scalar> {
    pub label: String,
    pub h: usize,
    /// Indices into the source atoms.
    pub members: Vec<usize>,
    /// The extremal cone the class moves along, in lifted coordinates
    /// (direction convention: source minus target).
    pub cone: Cone<S>,
    /// Basis of the linear span of the cone (the class's affine span is the
    /// base point plus this span; dimension h+1).
    pub span_basis: Vec<Vec<S>>,
    pub base_point: Vec<S>,
    pub mass: S,
    /// Shared active piece set (empty for superlinear costs).
    pub active: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub index: usize,
    pub reasons: Vec<ResidualReason>,
}

/// First partition: classes, fixed points, residuals, and the full per-source
/// classification.
#[derive(Debug, Clone)]
pub struct Partition<S: Scalar> {
    pub classes: Vec<FaceClass<S>>,
    pub fixed: Vec<usize>,
    pub residual: Vec<ResidualReport>,
    pub classifications: Vec<Classification<S>>,
}

impl<S: Scalar> Partition<S> {
    /// Every support pair of a class member must move along the class cone.
    pub fn check_support_confinement(
        &self,
        instance: &TransportInstance<S>,
        plan: &Plan<S>,
    ) -> Result<()> {
        for class in &self.classes {
            for &i in &class.members {
                for (pi, pj, _) in plan.entries.iter().filter(|(pi, _, _)| *pi == i) {
                    let src = &instance.mu[*pi].0;
                    let tgt = &instance.nu[*pj].0;
                    let mut diff = Vec::with_capacity(src.len() + 1);
                    diff.push(S::one());
                    for (a, b) in src.iter().zip(tgt) {
                        diff.push(a.clone() - b.clone());
                    }
                    if !class.cone.contains(&diff) {
                        return Err(Error::Invariant(format!(
                            "support pair ({pi},{pj}) leaves the cone of class {}",
                            class.label
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Group regular sources into directed locally affine classes.
///
/// Sources classified regular (or backward regular — the partition works on
/// the backward side) are keyed by the exact face data: dimension, active
/// set, quantized span basis, and the quantized offset of the source across
/// the span. Fixed and residual sources are reported, never force-assigned.
pub fn first_partition<S: Scalar + Send + Sync>(
    instance: &TransportInstance<S>,
    lifted: &LiftedCost<S>,
    plan: &Plan<S>,
    field: &PotentialField<S>,
    opts: &ClassifyOptions<S>,
) -> Result<Partition<S>> {
    let _ = plan; // the plan fixes the potentials; classification reads the field
    let sources: Vec<LiftedPoint<S>> =
        instance.mu.iter().map(|(x, _)| LiftedPoint::source(x.clone())).collect();
    let targets: Vec<LiftedPoint<S>> =
        instance.nu.iter().map(|(x, _)| LiftedPoint::target(x.clone())).collect();
    let mut candidates = targets;
    candidates.extend(sources.iter().cloned());
    let classifications = classify_all(field, lifted, &sources, &candidates, opts)?;

    // Key → (dimension, active set, cone, member indices).
    type ClassData<S> = (usize, BTreeSet<usize>, Cone<S>, Vec<usize>);
    let mut fixed = Vec::new();
    let mut residual = Vec::new();
    let mut keyed: std::collections::BTreeMap<String, ClassData<S>> =
        std::collections::BTreeMap::new();
    for (i, cls) in classifications.iter().enumerate() {
        match &cls.class {
            PointClass::Fixed => fixed.push(i),
            PointClass::Residual { reasons } => {
                residual.push(ResidualReport { index: i, reasons: clone_reasons(reasons) })
            }
            PointClass::ForwardRegular { .. } => residual.push(ResidualReport {
                index: i,
                reasons: vec![ResidualReason::Backward(Condition::Dimension)],
            }),
            PointClass::Regular { h } | PointClass::BackwardRegular { h } => {
                let side = cls.backward.as_ref().expect("backward side present");
                let cone = class_cone(lifted, side)?;
                let key = class_key(*h, &side.active, &cone, &sources[i].coords());
                keyed
                    .entry(key)
                    .or_insert_with(|| (*h, side.active.clone(), cone, Vec::new()))
                    .3
                    .push(i);
            }
        }
    }

    let mut classes = Vec::with_capacity(keyed.len());
    let mut seq_by_h: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for (_, (h, active, cone, members)) in keyed {
        let seq = seq_by_h.entry(h).or_insert(0);
        let label = format!("h{h}.{seq}");
        *seq += 1;
        let basis_idx = linalg::basis_subset(&cone.generators);
        let span_basis: Vec<Vec<S>> =
            basis_idx.iter().map(|&k| cone.generators[k].clone()).collect();
        let mass = members
            .iter()
            .fold(S::zero(), |acc, &i| acc + instance.mu[i].1.clone());
        let base_point = sources_coords(&instance.mu[members[0]].0);
        classes.push(FaceClass {
            label,
            h,
            members,
            cone,
            span_basis,
            base_point,
            mass,
            active,
        });
    }
    Ok(Partition { classes, fixed, residual, classifications })
}

fn clone_reasons(reasons: &[ResidualReason]) -> Vec<ResidualReason> {
    reasons.to_vec()
}

fn sources_coords<S: Scalar>(x: &[S]) -> Vec<S> {
    let mut c = Vec::with_capacity(x.len() + 1);
    c.push(S::one());
    c.extend(x.iter().cloned());
    c
}

/// The extremal cone of one side: rebuilt from the exact active set for
/// piecewise linear costs; the ray (or hull) of the verified directions for
/// superlinear ones.
fn class_cone<S: Scalar>(lifted: &LiftedCost<S>, side: &SideReport<S>) -> Result<Cone<S>> {
    if lifted.base.kind == CostKind::Polyhedral && !side.active.is_empty() {
        let cone = lifted.cone_from_active(&side.active, false)?;
        // A plan may explore only part of a face, leaving the verified
        // differential thinner than the active-set cone. The class must
        // chart onto [0,∞)×ℝʰ, so the cone is kept only when its span is
        // exactly h+1; otherwise fall back to the hull of the verified
        // directions.
        if cone.dim() == side.dim + 1 {
            return Ok(cone);
        }
    }
    let nonvertical: Vec<Vec<S>> =
        side.hull_vertices.iter().filter(|d| !is_vertical(d)).cloned().collect();
    match nonvertical.len() {
        0 => cone::ray_cone(&[], lifted.ambient()),
        1 => cone::ray_cone(&[cone::canonical_ray(nonvertical[0].clone())], lifted.ambient()),
        _ => cone::direction_hull(&nonvertical),
    }
}

fn class_key<S: Scalar>(
    h: usize,
    active: &BTreeSet<usize>,
    cone: &Cone<S>,
    source_coords: &[S],
) -> String {
    use std::fmt::Write;
    let basis_idx = linalg::basis_subset(&cone.generators);
    let basis: Vec<Vec<S>> = basis_idx.iter().map(|&i| cone.generators[i].clone()).collect();
    let complement = linalg::nullspace(&basis);
    let mut key = format!("h{h}|A:");
    for i in active {
        let _ = write!(key, "{i},");
    }
    key.push_str("|B:");
    for b in &basis {
        for c in b {
            let _ = write!(key, "{},", c.quantize().render());
        }
        key.push(';');
    }
    key.push_str("|O:");
    for n in &complement {
        let _ = write!(key, "{},", linalg::dot(n, source_coords).quantize().render());
    }
    key
}
