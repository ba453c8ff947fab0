//! Polyhedral convex cost algebra and cone geometry.
//!
//! A cost is a finite max of affine pieces `c(q) = max_i (a_i·q + b_i)`
//! (plus one analytic strictly convex preset). This module provides
//! evaluation, active sets, subdifferentials, minimal extremal faces, the
//! homogeneous lifting `c̄(t,x) = t·c(−x/t)` on `[0,∞)×ℝᵈ`, polyhedral cones
//! in dual V/H representation, order diamonds `(w+C)∩(w′−C)`, and convex
//! direction hulls.
//!
//! Faces of homogeneous costs and of lifted costs are polyhedral cones and
//! are represented by their extreme rays; faces of costs with affine offsets
//! are general polyhedra and are represented by a base point plus in-face
//! points along an affine basis. All operations are pure; exactness follows
//! the [`Scalar`] backend.

use std::collections::BTreeSet;

use crate::linalg::{
    self, add, dot, in_conical_hull, in_convex_hull, norm_inf, nullspace, rank, sub,
};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// One affine piece `q ↦ a·q + b` of a polyhedral cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece<S: Scalar> {
    pub a: Vec<S>,
    pub b: S,
}

/// Whether a cost is a finite max of affine pieces or the analytic strictly
/// convex preset (half the squared Euclidean norm).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    Polyhedral,
    StrictlyConvex,
}

/// A convex translation-invariant cost `c(q)`.
///
/// Polyhedral: `c(q) = max_i (a_i·q + b_i)`, pieces nonempty. Strictly
/// convex preset: `c(q) = |q|²/2`, handled analytically with an empty piece
/// list (its extremal faces are single points, so none of the polyhedral
/// face machinery applies).
#[derive(Debug, Clone, PartialEq)]
pub struct PolyhedralCost<S: Scalar> {
    pub dim: usize,
    pub kind: CostKind,
    pub pieces: Vec<Piece<S>>,
}

/// Affine support plane `p ↦ linear·p + offset` that reproduces the cost on
/// one of its faces.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportPlane<S: Scalar> {
    pub linear: Vec<S>,
    pub offset: S,
}

impl<S: Scalar> SupportPlane<S> {
    pub fn eval(&self, p: &[S]) -> S {
        dot(&self.linear, p) + self.offset.clone()
    }
}

/// A minimal extremal face of a cost (or of a lifted cost), identified by
/// its active piece set.
///
/// For conic faces (`conic == true`: homogeneous costs and every lifted
/// cost) the generators are extreme rays scaled to max-norm one, and
/// `affine_dim` equals the rank of their span. For non-conic faces the
/// generators are the base point followed by in-face points reaching along
/// an affine basis of the face.
#[derive(Debug, Clone, PartialEq)]
pub struct Face<S: Scalar> {
    /// Piece indices active on the whole face (empty for strictly convex).
    pub active: BTreeSet<usize>,
    pub generators: Vec<Vec<S>>,
    pub affine_dim: usize,
    pub support: SupportPlane<S>,
    /// The query point; lies in the relative interior of the face.
    pub base_point: Vec<S>,
    pub conic: bool,
}

/// One homogeneous constraint `normal·v ≥ 0` (or `= 0`) of a cone.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeConstraint<S: Scalar> {
    pub normal: Vec<S>,
    pub equality: bool,
}

/// A polyhedral cone in dual representation: generators (V-form, conical
/// hull) and homogeneous constraints (H-form), describing the same set.
#[derive(Debug, Clone, PartialEq)]
pub struct Cone<S: Scalar> {
    pub ambient: usize,
    pub generators: Vec<Vec<S>>,
    pub constraints: Vec<ConeConstraint<S>>,
}

/// One affine constraint `normal·v ≥ rhs` (or `= rhs`) of a polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConstraint<S: Scalar> {
    pub normal: Vec<S>,
    pub rhs: S,
    pub equality: bool,
}

/// The order diamond `(lower + C) ∩ (upper − C)` of a cone `C`, in H-form.
///
/// Empty exactly when `upper − lower ∉ C`; an empty diamond is a valid
/// result, not an error.
#[derive(Debug, Clone, PartialEq)]
pub struct Diamond<S: Scalar> {
    pub ambient: usize,
    pub constraints: Vec<AffineConstraint<S>>,
    pub empty: bool,
    pub lower: Vec<S>,
    pub upper: Vec<S>,
}

impl<S: Scalar> PolyhedralCost<S> {
    /// Build a polyhedral cost from explicit pieces.
    pub fn from_pieces(dim: usize, pieces: Vec<Piece<S>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("cost dimension must be positive".into()));
        }
        if pieces.is_empty() {
            return Err(Error::Input("polyhedral cost needs at least one piece".into()));
        }
        for (i, p) in pieces.iter().enumerate() {
            if p.a.len() != dim {
                return Err(Error::Input(format!(
                    "piece {i} has {} coefficients, expected {dim}",
                    p.a.len()
                )));
            }
        }
        Ok(Self { dim, kind: CostKind::Polyhedral, pieces })
    }

    /// Named preset: `linf`, `l1`, or `quadratic`.
    pub fn preset(name: &str, dim: usize) -> Result<Self> {
        match name {
            "linf" => Ok(Self::linf(dim)),
            "l1" => Self::l1(dim),
            "quadratic" => Ok(Self::quadratic(dim)),
            other => Err(Error::Input(format!(
                "unknown cost preset {other:?} (expected linf, l1, or quadratic)"
            ))),
        }
    }

    /// Max norm `|q|_∞`: pieces `+e_1..+e_d` then `−e_1..−e_d`.
    pub fn linf(dim: usize) -> Self {
        let mut pieces = Vec::with_capacity(2 * dim);
        for sign in [1i64, -1] {
            for i in 0..dim {
                let mut a = vec![S::zero(); dim];
                a[i] = S::from_int(sign);
                pieces.push(Piece { a, b: S::zero() });
            }
        }
        Self { dim, kind: CostKind::Polyhedral, pieces }
    }

    /// Sum norm `|q|_1`: one piece per sign vector, all-plus first, counting
    /// in binary. Guarded to `dim ≤ 12` (2^d pieces).
    pub fn l1(dim: usize) -> Result<Self> {
        if dim > 12 {
            return Err(Error::Unsupported(format!(
                "l1 preset in dimension {dim} would need {} pieces",
                1u64 << dim
            )));
        }
        let mut pieces = Vec::with_capacity(1 << dim);
        for mask in 0..(1u32 << dim) {
            let a = (0..dim)
                .map(|i| S::from_int(if mask >> i & 1 == 1 { -1 } else { 1 }))
                .collect();
            pieces.push(Piece { a, b: S::zero() });
        }
        Ok(Self { dim, kind: CostKind::Polyhedral, pieces })
    }

    /// Strictly convex preset `c(q) = |q|²/2`, handled analytically.
    pub fn quadratic(dim: usize) -> Self {
        Self { dim, kind: CostKind::StrictlyConvex, pieces: Vec::new() }
    }

    pub fn is_strictly_convex(&self) -> bool {
        self.kind == CostKind::StrictlyConvex
    }

    /// True when every piece has zero offset, so every face is a cone with
    /// apex at the origin. The strictly convex preset is not counted here:
    /// it is homogeneous of degree two, not one.
    pub fn is_homogeneous(&self) -> bool {
        self.kind == CostKind::Polyhedral && self.pieces.iter().all(|p| Scalar::is_zero(&p.b))
    }

    /// `c(q)`.
    pub fn value(&self, q: &[S]) -> S {
        debug_assert_eq!(q.len(), self.dim);
        match self.kind {
            CostKind::StrictlyConvex => {
                linalg::norm_sq(q) / S::from_int(2)
            }
            CostKind::Polyhedral => {
                let mut best: Option<S> = None;
                for p in &self.pieces {
                    let v = dot(&p.a, q) + p.b.clone();
                    match &best {
                        Some(b) if *b >= v => {}
                        _ => best = Some(v),
                    }
                }
                best.expect("pieces nonempty")
            }
        }
    }

    /// `c(q)` with input checking: dimension match and non-negativity
    /// (a cost that goes negative is rejected as invalid input).
    pub fn checked_value(&self, q: &[S]) -> Result<S> {
        if q.len() != self.dim {
            return Err(Error::Input(format!(
                "point has dimension {}, cost has dimension {}",
                q.len(),
                self.dim
            )));
        }
        let v = self.value(q);
        if v < -S::tol() {
            return Err(Error::Input(format!(
                "cost is negative ({}) at a queried point; costs must be ≥ 0",
                v.render()
            )));
        }
        Ok(v)
    }

    /// `{i : a_i·q + b_i ≥ c(q) − tol}`. Empty for the strictly convex
    /// preset, which has no pieces.
    pub fn active_set(&self, q: &[S], tol: &S) -> BTreeSet<usize> {
        if self.kind == CostKind::StrictlyConvex {
            return BTreeSet::new();
        }
        let c = self.value(q);
        let cut = c - tol.clone();
        self.pieces
            .iter()
            .enumerate()
            .filter(|(_, p)| dot(&p.a, q) + p.b.clone() >= cut)
            .map(|(i, _)| i)
            .collect()
    }

    /// Is every piece of `active` still active at `p` (i.e. does `p` lie on
    /// the face identified by that active set)?
    pub fn face_contains(&self, active: &BTreeSet<usize>, p: &[S]) -> bool {
        let at_p = self.active_set(p, &S::tol());
        active.is_subset(&at_p)
    }

    /// Subdifferential `∂c(q) = conv{a_i : i active}` in V-form; the
    /// analytic gradient `{q}` for the strictly convex preset.
    pub fn subdifferential(&self, q: &[S]) -> Vec<Vec<S>> {
        match self.kind {
            CostKind::StrictlyConvex => vec![q.to_vec()],
            CostKind::Polyhedral => {
                let active = self.active_set(q, &S::tol());
                dedupe_vectors(active.iter().map(|&i| self.pieces[i].a.clone()).collect())
            }
        }
    }

    /// The minimal extremal face of the cost containing `q` (projected to
    /// the domain): `{p : a_i·p + b_i = c(p) for all active i}`, with `q` in
    /// its relative interior.
    pub fn minimal_face(&self, q: &[S]) -> Face<S> {
        debug_assert_eq!(q.len(), self.dim);
        if self.kind == CostKind::StrictlyConvex {
            // Extremal faces of a strictly convex cost are single points.
            return Face {
                active: BTreeSet::new(),
                generators: Vec::new(),
                affine_dim: 0,
                support: SupportPlane {
                    linear: q.to_vec(),
                    offset: -linalg::norm_sq(q) / S::from_int(2),
                },
                base_point: q.to_vec(),
                conic: false,
            };
        }
        let active = self.active_set(q, &S::tol());
        let pivot = *active.iter().next().expect("active set nonempty");
        let support = SupportPlane {
            linear: self.pieces[pivot].a.clone(),
            offset: self.pieces[pivot].b.clone(),
        };
        let equalities: Vec<Vec<S>> = active
            .iter()
            .filter(|&&i| i != pivot)
            .map(|&i| sub(&self.pieces[i].a, &self.pieces[pivot].a))
            .collect();
        if self.is_homogeneous() {
            let inequalities: Vec<Vec<S>> = (0..self.pieces.len())
                .filter(|i| !active.contains(i))
                .map(|j| sub(&self.pieces[pivot].a, &self.pieces[j].a))
                .collect();
            let generators = cone_generators(&equalities, &inequalities, self.dim);
            let affine_dim = self.dim - rank(&equalities);
            Face { active, generators, affine_dim, support, base_point: q.to_vec(), conic: true }
        } else {
            // Affine face: base point plus a reachable point along each
            // direction of the face's affine hull.
            let directions = nullspace(&equalities);
            let affine_dim = directions.len();
            let mut generators = vec![q.to_vec()];
            for u in &directions {
                let step = self.max_step_in_face(&active, pivot, q, u);
                generators.push(add(q, &linalg::scale(u, &step)));
            }
            Face { active, generators, affine_dim, support, base_point: q.to_vec(), conic: false }
        }
    }

    /// Largest safe step `σ ≤ 1` such that `q + σ·u` keeps all inactive
    /// pieces inactive (half the distance to the nearest one).
    fn max_step_in_face(&self, active: &BTreeSet<usize>, pivot: usize, q: &[S], u: &[S]) -> S {
        let mut sigma = S::one();
        for (j, p) in self.pieces.iter().enumerate() {
            if active.contains(&j) {
                continue;
            }
            let gap = sub(&self.pieces[pivot].a, &p.a);
            let slack = dot(&gap, q) + self.pieces[pivot].b.clone() - p.b.clone();
            let coef = dot(&gap, u);
            if coef < -S::tol() {
                let limit = slack / -coef / S::from_int(2);
                if limit < sigma {
                    sigma = limit;
                }
            }
        }
        sigma
    }

    /// Homogeneous lifting to `[0,∞) × ℝᵈ`.
    pub fn lift(&self) -> LiftedCost<S> {
        let pieces = self
            .pieces
            .iter()
            .map(|p| {
                let mut g = Vec::with_capacity(self.dim + 1);
                g.push(p.b.clone());
                g.extend(p.a.iter().map(|x| -x.clone()));
                g
            })
            .collect();
        LiftedCost { base: self.clone(), pieces }
    }
}

/// The 1-homogeneous lifting `c̄(t,x) = t·c(−x/t)` of a cost to
/// `[0,∞) × ℝᵈ`, with `c̄(0,·)` the indicator of `{x=0}` and `+∞` for
/// `t < 0`.
///
/// Two evaluation semantics coexist. [`LiftedCost::value`] is the definition
/// above, used by the Lax transform and subdifferential machinery, where a
/// zero time step forbids any spatial displacement. [`LiftedCost::cone_value`]
/// is the closed polyhedral formula `max_i (b_i·t − a_i·x)` on `t ≥ 0`,
/// whose extremal faces include the `t = 0` boundary rays; all face and cone
/// computations run on it.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedCost<S: Scalar> {
    pub base: PolyhedralCost<S>,
    /// Per base piece `(a_i, b_i)`: the linear functional `(b_i, −a_i)` on
    /// `(t, x)`. Empty for the strictly convex preset.
    pub pieces: Vec<Vec<S>>,
}

impl<S: Scalar> LiftedCost<S> {
    pub fn ambient(&self) -> usize {
        self.base.dim + 1
    }

    fn split<'a>(&self, z: &'a [S]) -> (&'a S, &'a [S]) {
        debug_assert_eq!(z.len(), self.ambient());
        (&z[0], &z[1..])
    }

    /// `c̄(t,x)` with indicator semantics; `None` means `+∞`.
    pub fn value(&self, z: &[S]) -> Option<S> {
        let (t, x) = self.split(z);
        if *t < -S::tol() {
            return None;
        }
        if t.abs() <= S::tol() {
            return if linalg::is_zero_vec(x) { Some(S::zero()) } else { None };
        }
        match self.base.kind {
            CostKind::Polyhedral => Some(self.max_piece_value(z)),
            CostKind::StrictlyConvex => {
                Some(linalg::norm_sq(x) / (S::from_int(2) * t.clone()))
            }
        }
    }

    /// The closed-cone value: for polyhedral bases, `max_i (b_i·t − a_i·x)`
    /// on all of `t ≥ 0` (finite on the boundary); `None` only for `t < 0`,
    /// or off the time axis at `t = 0` for the strictly convex preset, which
    /// stays superlinear after lifting.
    pub fn cone_value(&self, z: &[S]) -> Option<S> {
        let (t, x) = self.split(z);
        if *t < -S::tol() {
            return None;
        }
        match self.base.kind {
            CostKind::Polyhedral => Some(self.max_piece_value(z)),
            CostKind::StrictlyConvex => {
                if t.abs() <= S::tol() {
                    if linalg::is_zero_vec(x) {
                        Some(S::zero())
                    } else {
                        None
                    }
                } else {
                    Some(linalg::norm_sq(x) / (S::from_int(2) * t.clone()))
                }
            }
        }
    }

    fn max_piece_value(&self, z: &[S]) -> S {
        let mut best: Option<S> = None;
        for g in &self.pieces {
            let v = dot(g, z);
            match &best {
                Some(b) if *b >= v => {}
                _ => best = Some(v),
            }
        }
        best.expect("pieces nonempty")
    }

    /// Active lifted pieces at `z` (closed-cone semantics, `t ≥ 0`).
    pub fn active_set(&self, z: &[S], tol: &S) -> BTreeSet<usize> {
        if self.base.kind == CostKind::StrictlyConvex {
            return BTreeSet::new();
        }
        let c = self.max_piece_value(z);
        let cut = c - tol.clone();
        self.pieces
            .iter()
            .enumerate()
            .filter(|(_, g)| dot(g, z) >= cut)
            .map(|(i, _)| i)
            .collect()
    }

    /// Is every piece of `active` active at `z`?
    pub fn face_contains(&self, active: &BTreeSet<usize>, z: &[S]) -> bool {
        let (t, _) = self.split(z);
        if *t < -S::tol() {
            return false;
        }
        active.is_subset(&self.active_set(z, &S::tol()))
    }

    /// The minimal extremal face of the lifted cone cost containing `z`
    /// (`z` in its relative interior). Always a polyhedral cone inside
    /// `t ≥ 0`; a boundary query with `t = 0` pins the face into `{t = 0}`.
    pub fn minimal_face(&self, z: &[S]) -> Result<Face<S>> {
        let ambient = self.ambient();
        let (t, x) = self.split(z);
        if *t < -S::tol() {
            return Err(Error::Input("lifted cost queried at negative time".into()));
        }
        let on_boundary = t.abs() <= S::tol();
        if self.base.kind == CostKind::StrictlyConvex {
            if on_boundary && !linalg::is_zero_vec(x) {
                return Err(Error::Input(
                    "strictly convex lifted cost is infinite at t = 0 off the origin".into(),
                ));
            }
            if linalg::is_zero_vec(z) {
                return Ok(Face {
                    active: BTreeSet::new(),
                    generators: Vec::new(),
                    affine_dim: 0,
                    support: SupportPlane { linear: vec![S::zero(); ambient], offset: S::zero() },
                    base_point: z.to_vec(),
                    conic: true,
                });
            }
            // Extremal faces of the strictly convex lifted cone are rays.
            let tt = t.clone();
            let mut linear = Vec::with_capacity(ambient);
            linear.push(-linalg::norm_sq(x) / (S::from_int(2) * tt.clone() * tt.clone()));
            linear.extend(x.iter().map(|xi| xi.clone() / tt.clone()));
            return Ok(Face {
                active: BTreeSet::new(),
                generators: vec![canonical_ray(z.to_vec())],
                affine_dim: 1,
                support: SupportPlane { linear, offset: S::zero() },
                base_point: z.to_vec(),
                conic: true,
            });
        }
        let active = self.active_set(z, &S::tol());
        let pivot = *active.iter().next().expect("active set nonempty");
        let mut equalities: Vec<Vec<S>> = active
            .iter()
            .filter(|&&i| i != pivot)
            .map(|&i| sub(&self.pieces[i], &self.pieces[pivot]))
            .collect();
        let mut inequalities: Vec<Vec<S>> = (0..self.pieces.len())
            .filter(|i| !active.contains(i))
            .map(|j| sub(&self.pieces[pivot], &self.pieces[j]))
            .collect();
        let mut time_axis = vec![S::zero(); ambient];
        time_axis[0] = S::one();
        if on_boundary {
            equalities.push(time_axis);
        } else {
            inequalities.push(time_axis);
        }
        let generators = cone_generators(&equalities, &inequalities, ambient);
        let affine_dim = ambient - rank(&equalities);
        Ok(Face {
            active,
            generators,
            affine_dim,
            support: SupportPlane { linear: self.pieces[pivot].clone(), offset: S::zero() },
            base_point: z.to_vec(),
            conic: true,
        })
    }

    /// The face as a standalone cone (H-form rebuilt from the active set,
    /// V-form from its extreme rays).
    pub fn face_to_cone(&self, face: &Face<S>) -> Result<Cone<S>> {
        if !face.conic {
            return Err(Error::Input("only conic faces convert to cones".into()));
        }
        if self.base.kind == CostKind::StrictlyConvex || face.active.is_empty() {
            return ray_cone(&face.generators, self.ambient());
        }
        let at_time_boundary = face.base_point[0].abs() <= S::tol();
        self.cone_from_active(&face.active, at_time_boundary)
    }

    /// The extremal face of the lifted cone carved out by an active piece
    /// set, as a standalone cone: pieces in the set are tied to the maximum,
    /// the rest stay below it, and time is nonnegative (pinned to zero when
    /// `at_time_boundary`). This is how per-class cones are rebuilt from the
    /// exact combinatorial data shared by the class members.
    pub fn cone_from_active(
        &self,
        active: &BTreeSet<usize>,
        at_time_boundary: bool,
    ) -> Result<Cone<S>> {
        if self.base.kind == CostKind::StrictlyConvex {
            return Err(Error::Input(
                "active-set cones are defined for piecewise linear costs only".into(),
            ));
        }
        let pivot = match active.iter().next() {
            Some(&i) => i,
            None => return Err(Error::Input("active set is empty".into())),
        };
        if active.iter().any(|&i| i >= self.pieces.len()) {
            return Err(Error::Input("active set references a missing piece".into()));
        }
        let mut equalities: Vec<Vec<S>> = active
            .iter()
            .filter(|&&i| i != pivot)
            .map(|&i| sub(&self.pieces[i], &self.pieces[pivot]))
            .collect();
        let mut inequalities: Vec<Vec<S>> = (0..self.pieces.len())
            .filter(|i| !active.contains(i))
            .map(|j| sub(&self.pieces[pivot], &self.pieces[j]))
            .collect();
        let mut time_axis = vec![S::zero(); self.ambient()];
        time_axis[0] = S::one();
        if at_time_boundary {
            equalities.push(time_axis);
        } else {
            inequalities.push(time_axis);
        }
        Ok(Cone::from_h_form(self.ambient(), equalities, inequalities))
    }
}

/// A cone that is a single ray (or the origin): V-form as given, H-form from
/// the orthogonal complement plus the in-line halfspace.
pub(crate) fn ray_cone<S: Scalar>(generators: &[Vec<S>], ambient: usize) -> Result<Cone<S>> {
    match generators.len() {
        0 => {
            // The origin: H-form pins every coordinate to zero.
            let constraints = (0..ambient)
                .map(|i| {
                    let mut n = vec![S::zero(); ambient];
                    n[i] = S::one();
                    ConeConstraint { normal: n, equality: true }
                })
                .collect();
            Ok(Cone { ambient, generators: Vec::new(), constraints })
        }
        1 => {
            let g = &generators[0];
            let mut constraints: Vec<ConeConstraint<S>> = nullspace(std::slice::from_ref(g))
                .into_iter()
                .map(|n| ConeConstraint { normal: canonical_ray(n), equality: true })
                .collect();
            constraints.push(ConeConstraint { normal: canonical_ray(g.clone()), equality: false });
            Ok(Cone { ambient, generators: vec![canonical_ray(g.clone())], constraints })
        }
        _ => Err(Error::Input("ray cone expects at most one generator".into())),
    }
}

impl<S: Scalar> Cone<S> {
    /// Build from homogeneous equalities `e·v = 0` and inequalities
    /// `n·v ≥ 0`; generators are computed by extreme-ray enumeration.
    ///
    /// The stored H-form is minimal: every facet necessarily appears in any
    /// inequality description, so rows whose contact set is too small to be
    /// a facet are redundant and get pruned. A cone that collapses to the
    /// origin is stored as the all-coordinate equality system.
    pub fn from_h_form(ambient: usize, equalities: Vec<Vec<S>>, inequalities: Vec<Vec<S>>) -> Self {
        let generators = cone_generators(&equalities, &inequalities, ambient);
        if generators.is_empty() {
            let constraints = (0..ambient)
                .map(|i| {
                    let mut n = vec![S::zero(); ambient];
                    n[i] = S::one();
                    ConeConstraint { normal: n, equality: true }
                })
                .collect();
            return Self { ambient, generators, constraints };
        }
        let span = rank(&generators);
        let mut eq_normals: Vec<Vec<S>> = Vec::new();
        for e in equalities {
            if !linalg::is_zero_vec(&e) {
                eq_normals.push(canonical_ray(e));
            }
        }
        let mut facet_normals: Vec<Vec<S>> = Vec::new();
        for n in inequalities {
            if linalg::is_zero_vec(&n) {
                continue;
            }
            let n = canonical_ray(n);
            let tight: Vec<Vec<S>> = generators
                .iter()
                .filter(|g| dot(&n, g).abs() <= S::tol())
                .cloned()
                .collect();
            if rank(&tight) + 1 >= span {
                facet_normals.push(n);
            }
        }
        let mut constraints: Vec<ConeConstraint<S>> = dedupe_vectors(eq_normals)
            .into_iter()
            .map(|normal| ConeConstraint { normal, equality: true })
            .collect();
        constraints.extend(
            dedupe_vectors(facet_normals)
                .into_iter()
                .map(|normal| ConeConstraint { normal, equality: false }),
        );
        Self { ambient, generators, constraints }
    }

    /// H-form membership test.
    pub fn contains(&self, v: &[S]) -> bool {
        debug_assert_eq!(v.len(), self.ambient);
        self.constraints.iter().all(|c| {
            let s = dot(&c.normal, v);
            if c.equality {
                s.abs() <= S::tol()
            } else {
                s >= -S::tol()
            }
        })
    }

    /// Relative-interior membership: equalities hold, all inequality
    /// constraints strictly positive.
    pub fn contains_rel_interior(&self, v: &[S]) -> bool {
        self.constraints.iter().all(|c| {
            let s = dot(&c.normal, v);
            if c.equality {
                s.abs() <= S::tol()
            } else {
                s > S::tol()
            }
        })
    }

    /// V-form membership test (non-negative combination of generators).
    pub fn in_v_form(&self, v: &[S]) -> bool {
        in_conical_hull(&self.generators, v)
    }

    /// Dimension of the cone's linear span.
    pub fn dim(&self) -> usize {
        rank(&self.generators)
    }

    /// The minimal extremal face of the cone containing `u`: all inequality
    /// constraints tight at `u` become equalities.
    pub fn minimal_face_containing(&self, u: &[S]) -> Result<Cone<S>> {
        if !self.contains(u) {
            return Err(Error::Input("point is outside the cone".into()));
        }
        let mut equalities = Vec::new();
        let mut inequalities = Vec::new();
        for c in &self.constraints {
            if c.equality || dot(&c.normal, u).abs() <= S::tol() {
                equalities.push(c.normal.clone());
            } else {
                inequalities.push(c.normal.clone());
            }
        }
        Ok(Cone::from_h_form(self.ambient, equalities, inequalities))
    }

    /// Cross-check that V-form and H-form describe the same set; returns a
    /// description of the first failure.
    ///
    /// Checked: every generator and simple conical combinations satisfy the
    /// H-form; reflected exterior points violate the V-form; and every
    /// inequality facet carries enough generators to span it.
    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        for (i, g) in self.generators.iter().enumerate() {
            if !self.contains(g) {
                return Err(format!("generator {i} violates the H-form"));
            }
        }
        if !self.generators.is_empty() {
            let mut total = vec![S::zero(); self.ambient];
            for g in &self.generators {
                total = add(&total, g);
            }
            if !self.contains(&total) {
                return Err("sum of generators violates the H-form".into());
            }
            for (i, g) in self.generators.iter().enumerate().take(10) {
                for (j, g2) in self.generators.iter().enumerate().take(10).skip(i + 1) {
                    let mid = linalg::scale(&add(g, g2), &S::from_ratio(1, 2));
                    if !self.contains(&mid) {
                        return Err(format!("midpoint of generators {i},{j} violates the H-form"));
                    }
                }
            }
            // Exterior sampling: push the generator sum across each facet.
            for (k, c) in self.constraints.iter().enumerate() {
                if c.equality {
                    continue;
                }
                let nn = linalg::norm_sq(&c.normal);
                if Scalar::is_zero(&nn) {
                    continue;
                }
                let shift = (dot(&c.normal, &total) + S::one()) / nn;
                let outside = sub(&total, &linalg::scale(&c.normal, &shift));
                if self.in_v_form(&outside) {
                    return Err(format!(
                        "point beyond inequality {k} is still a combination of generators"
                    ));
                }
            }
            // Facet coverage: tight generators must span each facet.
            let span = rank(&self.generators);
            if span >= 1 {
                for (k, c) in self.constraints.iter().enumerate() {
                    if c.equality {
                        continue;
                    }
                    let tight: Vec<Vec<S>> = self
                        .generators
                        .iter()
                        .filter(|g| dot(&c.normal, g).abs() <= S::tol())
                        .cloned()
                        .collect();
                    if rank(&tight) + 1 < span {
                        return Err(format!(
                            "inequality {k} is tight on too few generators to be a facet"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

impl<S: Scalar> Diamond<S> {
    pub fn contains(&self, v: &[S]) -> bool {
        debug_assert_eq!(v.len(), self.ambient);
        self.constraints.iter().all(|c| {
            let s = dot(&c.normal, v) - c.rhs.clone();
            if c.equality {
                s.abs() <= S::tol()
            } else {
                s >= -S::tol()
            }
        })
    }
}

/// The order diamond `(w + C) ∩ (w2 − C)` in H-form. Empty exactly when
/// `w2 − w ∉ C`; the positive hull of `(diamond − w)` spans the minimal
/// extremal face of `C` containing `w2 − w`.
pub fn cone_diamond<S: Scalar>(w: &[S], w2: &[S], cone: &Cone<S>) -> Diamond<S> {
    debug_assert_eq!(w.len(), cone.ambient);
    debug_assert_eq!(w2.len(), cone.ambient);
    let empty = !cone.contains(&sub(w2, w));
    let mut constraints = Vec::with_capacity(2 * cone.constraints.len());
    for c in &cone.constraints {
        // v − w ∈ C:  n·v ≥ n·w
        constraints.push(AffineConstraint {
            normal: c.normal.clone(),
            rhs: dot(&c.normal, w),
            equality: c.equality,
        });
        // w2 − v ∈ C:  −n·v ≥ −n·w2
        constraints.push(AffineConstraint {
            normal: linalg::neg(&c.normal),
            rhs: -dot(&c.normal, w2),
            equality: c.equality,
        });
    }
    Diamond { ambient: cone.ambient, constraints, empty, lower: w.to_vec(), upper: w2.to_vec() }
}

/// The convex direction envelope: the cone `ℝ⁺·conv(dirs)` over directions
/// normalized to time component one, in both representations. The section at
/// `t = 1` is `conv(dirs)`.
pub fn direction_hull<S: Scalar>(dirs: &[Vec<S>]) -> Result<Cone<S>> {
    if dirs.is_empty() {
        return Err(Error::Input("direction hull of an empty set".into()));
    }
    let ambient = dirs[0].len();
    if ambient < 2 {
        return Err(Error::Input("directions need a time and at least one space coordinate".into()));
    }
    for d in dirs {
        if d.len() != ambient {
            return Err(Error::Input("directions have mixed dimensions".into()));
        }
        if !(d[0].clone() - S::one()).abs().approx_le(&S::coarse_tol()) {
            return Err(Error::Input(format!(
                "direction not normalized: time component {} ≠ 1",
                d[0].render()
            )));
        }
    }
    let deduped = dedupe_vectors(dirs.to_vec());
    // Vertex reduction on the t = 1 section.
    let sections: Vec<Vec<S>> = deduped.iter().map(|d| d[1..].to_vec()).collect();
    let mut vertices: Vec<Vec<S>> = Vec::new();
    for (i, d) in deduped.iter().enumerate() {
        let others: Vec<Vec<S>> =
            (0..sections.len()).filter(|&j| j != i).map(|j| sections[j].clone()).collect();
        if !in_convex_hull(&others, &sections[i]) {
            vertices.push(d.clone());
        }
    }
    if vertices.is_empty() {
        // All points coincide up to tolerance after deduplication.
        vertices.push(deduped[0].clone());
    }
    let equalities = nullspace(&vertices);
    let r = ambient - equalities.len();
    if r == 0 {
        return Err(Error::Invariant("direction hull collapsed to the origin".into()));
    }
    let n = vertices.len();
    let k = r - 1;
    if binomial(n, k) > 2_000_000 {
        return Err(Error::Unsupported(format!(
            "direction hull facet enumeration over {n} vertices in rank {r} is too large"
        )));
    }
    let mut inequalities: Vec<Vec<S>> = Vec::new();
    for_each_subset(n, k, &mut |subset| {
        let mut rows: Vec<Vec<S>> = subset.iter().map(|&i| vertices[i].clone()).collect();
        rows.extend(equalities.iter().cloned());
        let ns = nullspace(&rows);
        if ns.len() != 1 {
            return;
        }
        let cand = canonical_ray(ns.into_iter().next().unwrap());
        let pos = vertices.iter().all(|v| dot(&cand, v) >= -S::tol());
        let neg = vertices.iter().all(|v| dot(&cand, v) <= S::tol());
        if pos {
            inequalities.push(cand);
        } else if neg {
            inequalities.push(linalg::neg(&cand));
        }
    });
    let inequalities = dedupe_vectors(inequalities);
    let mut constraints: Vec<ConeConstraint<S>> = equalities
        .into_iter()
        .map(|e| ConeConstraint { normal: canonical_ray(e), equality: true })
        .collect();
    constraints
        .extend(inequalities.into_iter().map(|n| ConeConstraint { normal: n, equality: false }));
    Ok(Cone { ambient, generators: vertices, constraints })
}

/// Extreme-ray enumeration for `{v : E v = 0, N v ≥ 0}`.
///
/// Works inside the equality nullspace; splits off the lineality space and
/// enumerates extreme rays of the pointed quotient by tight-row subsets.
/// When the cone contains lines, their span is returned as ± a basis, so the
/// conical hull of the output always equals the cone.
pub fn cone_generators<S: Scalar>(
    equalities: &[Vec<S>],
    inequalities: &[Vec<S>],
    ambient: usize,
) -> Vec<Vec<S>> {
    let basis: Vec<Vec<S>> = if equalities.is_empty() {
        (0..ambient)
            .map(|i| {
                let mut v = vec![S::zero(); ambient];
                v[i] = S::one();
                v
            })
            .collect()
    } else {
        nullspace(equalities)
    };
    let k = basis.len();
    if k == 0 {
        return Vec::new();
    }
    // Inequality rows in basis coordinates, zero rows dropped.
    let reduced: Vec<Vec<S>> = inequalities
        .iter()
        .map(|n| basis.iter().map(|u| dot(n, u)).collect::<Vec<S>>())
        .filter(|row| !linalg::is_zero_vec(row))
        .collect();
    let to_ambient = |y: &[S]| -> Vec<S> {
        let mut v = vec![S::zero(); ambient];
        for (c, u) in y.iter().zip(&basis) {
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi += c.clone() * ui.clone();
            }
        }
        v
    };
    let mut rays: Vec<Vec<S>> = Vec::new();
    // Lineality: directions on which every inequality vanishes.
    let lineality = if reduced.is_empty() {
        (0..k)
            .map(|i| {
                let mut v = vec![S::zero(); k];
                v[i] = S::one();
                v
            })
            .collect::<Vec<_>>()
    } else {
        nullspace(&reduced)
    };
    for l in &lineality {
        rays.push(to_ambient(l));
        rays.push(linalg::neg(&to_ambient(l)));
    }
    let q = k - lineality.len();
    if q > 0 {
        // Pointed quotient: work in a complement of the lineality space.
        // The row space of the reduced inequalities is the orthogonal
        // complement of their nullspace, which is exactly the lineality.
        let w_basis: Vec<Vec<S>> = linalg::basis_subset(&reduced)
            .into_iter()
            .map(|i| reduced[i].clone())
            .collect();
        debug_assert_eq!(w_basis.len(), q);
        // Rows of the quotient system: n·(W c) for c in ℝ^q.
        let quot: Vec<Vec<S>> =
            reduced.iter().map(|n| w_basis.iter().map(|w| dot(n, w)).collect()).collect();
        let push_candidate = |rays: &mut Vec<Vec<S>>, c: &[S]| {
            let feasible = |c: &[S]| quot.iter().all(|row| dot(row, c) >= -S::tol());
            let lift = |c: &[S]| {
                let mut y = vec![S::zero(); k];
                for (ci, w) in c.iter().zip(&w_basis) {
                    for (yi, wi) in y.iter_mut().zip(w) {
                        *yi += ci.clone() * wi.clone();
                    }
                }
                to_ambient(&y)
            };
            if feasible(c) {
                rays.push(lift(c));
            }
            let neg_c = linalg::neg(c);
            if feasible(&neg_c) {
                rays.push(lift(&neg_c));
            }
        };
        if q == 1 {
            push_candidate(&mut rays, &[S::one()]);
        } else {
            for_each_subset(quot.len(), q - 1, &mut |subset| {
                let rows: Vec<Vec<S>> = subset.iter().map(|&i| quot[i].clone()).collect();
                let ns = nullspace(&rows);
                if ns.len() == 1 {
                    push_candidate(&mut rays, &ns[0]);
                }
            });
        }
    }
    let rays: Vec<Vec<S>> =
        rays.into_iter().filter(|r| !linalg::is_zero_vec(r)).map(canonical_ray).collect();
    sort_and_dedupe(rays)
}

/// Scale a vector so its largest coordinate magnitude is one (direction is
/// preserved; the zero vector passes through unchanged).
pub fn canonical_ray<S: Scalar>(v: Vec<S>) -> Vec<S> {
    let m = norm_inf(&v);
    if Scalar::is_zero(&m) {
        return v;
    }
    v.into_iter().map(|x| x / m.clone()).collect()
}

/// Deterministic lexicographic sort plus adjacent deduplication.
fn sort_and_dedupe<S: Scalar>(mut vs: Vec<Vec<S>>) -> Vec<Vec<S>> {
    vs.sort_by(|a, b| cmp_vecs(a, b));
    vs.dedup_by(|a, b| vecs_close(a, b));
    vs
}

fn cmp_vecs<S: Scalar>(a: &[S], b: &[S]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let c = x.total_cmp(y);
        if c != std::cmp::Ordering::Equal {
            return c;
        }
    }
    a.len().cmp(&b.len())
}

fn vecs_close<S: Scalar>(a: &[S], b: &[S]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.approx_eq(y))
}

/// Deduplicate preserving first-occurrence order (coarse quantization keys
/// in float mode, exact values in rational mode).
pub fn dedupe_vectors<S: Scalar>(vs: Vec<Vec<S>>) -> Vec<Vec<S>> {
    let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut out = Vec::with_capacity(vs.len());
    for v in vs {
        let key: Vec<String> = v.iter().map(|x| x.quantize().render()).collect();
        if seen.insert(key) {
            out.push(v);
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u64) / (i as u64 + 1);
    }
    acc
}

/// Visit every k-subset of `0..n` in lexicographic order.
fn for_each_subset(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // Advance to the next combination.
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
