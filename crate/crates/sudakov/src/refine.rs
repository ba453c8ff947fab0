//! Refinement of directed locally affine classes into cyclically connected
//! pieces.
//!
//! A class of the first partition moves along a single extremal cone, but its
//! members need not be mutually reachable through the plan: mass may flow one
//! way between groups that never trade back, and such a class still splits
//! into independently transported parts. This module charts each class onto
//! `[0,∞) × ℝʰ`, builds the carriage graph of the restricted plan — pair
//! steps from the support, return steps along the cone — measures mutual
//! reachability with a ternary level field, and cuts the class into strongly
//! connected subclasses. A subclass that keeps the full horizontal dimension
//! is cyclically connected and final; a thinner one restarts the procedure on
//! a lower-dimensional extremal subcone, so the iteration stabilizes after at
//! most one round per dimension.
//!
//! The level field gives every node the ternary value `Σ 2·3^{−(k+1)}` over
//! the seeds whose reach sets contain it. Two sources get equal digit strings
//! exactly when each reaches the other, so level sets and strongly connected
//! components agree; the agreement is re-checked at run time rather than
//! assumed. Off the nodes the field extends as the upper envelope over all
//! targets a point sits cone-forward of, evaluated here on boxed grids level
//! by level in time.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;

use crate::cone::{self, Cone, CostKind, LiftedCost};
use crate::linalg::{self, add, is_zero_vec, norm_inf, norm_sq, scale, sub};
use crate::potential::{FaceClass, Partition};
use crate::scalar::Scalar;
use crate::solver::{Plan, TransportInstance};
use crate::{Error, Result};

/// Tuning knobs for the refinement pass.
#[derive(Debug, Clone)]
pub struct RefineOptions<S: Scalar> {
    /// Reject a chart whose projection contracts some node distance by more
    /// than this squared factor.
    pub min_kappa_sq: S,
    /// Deterministic cap on the number of nodes sampled for the contraction
    /// estimate.
    pub kappa_sample_cap: usize,
}

impl<S: Scalar> Default for RefineOptions<S> {
    fn default() -> Self {
        Self { min_kappa_sq: S::from_ratio(1, 1_000_000), kappa_sample_cap: 200 }
    }
}

/// Affine chart of one class onto `[0,∞) × ℝʰ`.
///
/// The chart keeps the time coordinate and book-keeps the spatial part in a
/// basis of the class span: a point decomposes as
/// `z = base + (t − t_base)·vertical + Σ sᵢ·horizontalᵢ` and charts to
/// `(t, s)`. When the class already spans the ambient space the chart is the
/// identity.
#[derive(Debug, Clone)]
pub struct FibrationChart<S: Scalar> {
    /// Horizontal dimension of the chart; chart coordinates have length
    /// `h + 1`. At least the class's transport dimension, and strictly larger
    /// when the class carries several parallel fibers of its cone span — the
    /// first coordinates always follow the cone, the extra ones the fiber
    /// offsets.
    pub h: usize,
    /// Squared lower bound on how much the chart shrinks distances between
    /// the charted nodes (exactly one for the identity chart).
    pub kappa_sq: S,
    ambient: usize,
    identity: bool,
    base: Vec<S>,
    vertical: Vec<S>,
    horizontal: Vec<Vec<S>>,
}

impl<S: Scalar> FibrationChart<S> {
    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn chart_dim(&self) -> usize {
        self.h + 1
    }

    /// Chart an ambient point to `(t, s)` coordinates. Points off the affine
    /// span of the class are rejected.
    pub fn to_fibration_coords(&self, z: &[S]) -> Result<Vec<S>> {
        if z.len() != self.ambient {
            return Err(Error::Input(format!(
                "point has {} coordinates, the chart lives in {}",
                z.len(),
                self.ambient
            )));
        }
        if self.identity {
            return Ok(z.to_vec());
        }
        let dt = z[0].clone() - self.base[0].clone();
        let rhs = sub(&sub(z, &self.base), &scale(&self.vertical, &dt));
        let s = if self.horizontal.is_empty() {
            Vec::new()
        } else {
            let rows: Vec<Vec<S>> = (0..self.ambient)
                .map(|r| self.horizontal.iter().map(|hv| hv[r].clone()).collect())
                .collect();
            linalg::solve(&rows, &rhs).ok_or_else(off_span)?
        };
        // Exact backends solve exactly; the residual guards the float one.
        let mut recon = vec![S::zero(); self.ambient];
        for (si, hv) in s.iter().zip(&self.horizontal) {
            recon = add(&recon, &scale(hv, si));
        }
        let err = norm_inf(&sub(&recon, &rhs));
        if err > S::coarse_tol() * (S::one() + norm_inf(&rhs)) {
            return Err(off_span());
        }
        let mut out = Vec::with_capacity(self.h + 1);
        out.push(z[0].clone());
        out.extend(s);
        Ok(out)
    }

    /// Map `(t, s)` chart coordinates back to the ambient point.
    pub fn from_fibration_coords(&self, f: &[S]) -> Result<Vec<S>> {
        if f.len() != self.h + 1 {
            return Err(Error::Input(format!(
                "chart point has {} coordinates, expected {}",
                f.len(),
                self.h + 1
            )));
        }
        if self.identity {
            return Ok(f.to_vec());
        }
        let dt = f[0].clone() - self.base[0].clone();
        let mut z = add(&self.base, &scale(&self.vertical, &dt));
        for (si, hv) in f[1..].iter().zip(&self.horizontal) {
            z = add(&z, &scale(hv, si));
        }
        Ok(z)
    }

    /// Map a chart direction `(Δt, Δs)` to the ambient direction it stands
    /// for.
    pub fn linear_from_fibration(&self, v: &[S]) -> Result<Vec<S>> {
        if v.len() != self.h + 1 {
            return Err(Error::Input(format!(
                "chart direction has {} coordinates, expected {}",
                v.len(),
                self.h + 1
            )));
        }
        if self.identity {
            return Ok(v.to_vec());
        }
        let mut z = scale(&self.vertical, &v[0]);
        for (si, hv) in v[1..].iter().zip(&self.horizontal) {
            z = add(&z, &scale(hv, si));
        }
        Ok(z)
    }
}

fn off_span() -> Error {
    Error::Invariant("point lies off the affine span of its class".into())
}

/// Build the chart of a class and gauge it on the given ambient node
/// coordinates.
///
/// The vertical direction is the first cone generator moving forward in
/// time, rescaled to unit speed; the horizontal basis spans the remaining
/// generator components with the time coordinate removed exactly, extended by
/// whatever directions the nodes themselves add — a class whose members sit
/// on parallel fibers of its cone span charts against the full affine hull,
/// and the later component analysis separates the fibers (no carriage step
/// can cross between them). The returned `kappa_sq` is the least squared
/// contraction of the chart over sampled node pairs, and charts contracting
/// below the configured bound are rejected as degenerate.
pub fn fibration_chart<S: Scalar>(
    class: &FaceClass<S>,
    nodes: &[Vec<S>],
    opts: &RefineOptions<S>,
) -> Result<FibrationChart<S>> {
    let ambient = class.base_point.len();
    if class.h + 1 == ambient {
        return Ok(identity_chart(class.h, ambient));
    }
    let vertical = class
        .cone
        .generators
        .iter()
        .find(|g| g[0] > S::tol())
        .map(|g| scale(g, &(S::one() / g[0].clone())))
        .ok_or_else(|| {
            Error::Invariant(format!(
                "class {} has no forward direction to chart along",
                class.label
            ))
        })?;
    let mut spanning: Vec<Vec<S>> = Vec::new();
    for g in &class.cone.generators {
        let mut w = sub(g, &scale(&vertical, &g[0]));
        w[0] = S::zero();
        if !is_zero_vec(&w) {
            spanning.push(w);
        }
    }
    let picked = linalg::basis_subset(&spanning);
    if picked.len() != class.h {
        return Err(Error::Invariant(format!(
            "class {} spans {} horizontal directions, expected {}",
            class.label,
            picked.len(),
            class.h
        )));
    }
    // Cone directions first, then fiber offsets contributed by the nodes.
    let mut extended: Vec<Vec<S>> = picked.into_iter().map(|k| spanning[k].clone()).collect();
    for node in nodes {
        let dt = node[0].clone() - class.base_point[0].clone();
        let mut w = sub(&sub(node, &class.base_point), &scale(&vertical, &dt));
        w[0] = S::zero();
        if !is_zero_vec(&w) {
            extended.push(w);
        }
    }
    let picked = linalg::basis_subset(&extended);
    let horizontal: Vec<Vec<S>> = picked.into_iter().map(|k| extended[k].clone()).collect();
    if horizontal.len() + 1 == ambient {
        return Ok(identity_chart(horizontal.len(), ambient));
    }
    let mut chart = FibrationChart {
        h: horizontal.len(),
        kappa_sq: S::one(),
        ambient,
        identity: false,
        base: class.base_point.clone(),
        vertical,
        horizontal,
    };
    chart.kappa_sq = chart_contraction(&chart, nodes, opts.kappa_sample_cap)?;
    if chart.kappa_sq < opts.min_kappa_sq {
        return Err(Error::Invariant(format!(
            "chart for class {} contracts node distances by {} squared, below the configured bound",
            class.label,
            chart.kappa_sq.render()
        )));
    }
    Ok(chart)
}

fn unit_vector<S: Scalar>(n: usize, k: usize) -> Vec<S> {
    let mut e = vec![S::zero(); n];
    e[k] = S::one();
    e
}

fn identity_chart<S: Scalar>(h: usize, ambient: usize) -> FibrationChart<S> {
    FibrationChart {
        h,
        kappa_sq: S::one(),
        ambient,
        identity: true,
        base: vec![S::zero(); ambient],
        vertical: unit_vector(ambient, 0),
        horizontal: (1..ambient).map(|k| unit_vector(ambient, k)).collect(),
    }
}

/// Least squared contraction of the chart over pairs of (subsampled) nodes.
fn chart_contraction<S: Scalar>(
    chart: &FibrationChart<S>,
    nodes: &[Vec<S>],
    cap: usize,
) -> Result<S> {
    let stride = nodes.len().div_ceil(cap.max(1)).max(1);
    let sampled: Vec<&Vec<S>> = nodes.iter().step_by(stride).collect();
    let charted: Vec<Vec<S>> = sampled
        .iter()
        .map(|z| chart.to_fibration_coords(z))
        .collect::<Result<_>>()?;
    let mut least: Option<S> = None;
    for a in 0..sampled.len() {
        for b in a + 1..sampled.len() {
            let den = norm_sq(&sub(sampled[a], sampled[b]));
            if den.is_zero() {
                continue;
            }
            let num = norm_sq(&sub(&charted[a], &charted[b]));
            let ratio = num / den;
            if least.as_ref().is_none_or(|l| ratio < *l) {
                least = Some(ratio);
            }
        }
    }
    Ok(least.unwrap_or_else(S::one))
}

/// The carriage graph of one class: plan support restricted to the class,
/// with two edge families.
///
/// Nodes are the member sources followed by the targets they ship to, held
/// both in ambient and in chart coordinates. A forward edge is a support
/// pair; a return edge runs from a target to every other node lying
/// cone-forward of it. Mutual reachability in this graph is exactly the
/// relation that cuts the class into independently transported parts.
#[derive(Debug, Clone)]
pub struct CarriageGraph<S: Scalar> {
    pub label: String,
    pub h: usize,
    /// Member source indices into the instance; node `k` for `k <
    /// sources.len()`.
    pub sources: Vec<usize>,
    /// Target indices into the instance; node `sources.len() + k`.
    pub targets: Vec<usize>,
    /// Chart coordinates per node.
    pub nodes: Vec<Vec<S>>,
    /// Ambient coordinates per node.
    pub ambient: Vec<Vec<S>>,
    /// Support pairs as `(source node, target node)`.
    pub forward: Vec<(usize, usize)>,
    /// Cone steps as `(target node, node cone-forward of it)`.
    pub returns: Vec<(usize, usize)>,
    /// The class cone, in ambient coordinates.
    pub cone: Cone<S>,
    pub chart: FibrationChart<S>,
}

impl<S: Scalar> CarriageGraph<S> {
    /// Restrict the plan to the class members and assemble the graph. Every
    /// support pair must move along the class cone.
    pub fn build(
        instance: &TransportInstance<S>,
        class: &FaceClass<S>,
        chart: FibrationChart<S>,
        plan: &Plan<S>,
    ) -> Result<Self> {
        let members: BTreeSet<usize> = class.members.iter().copied().collect();
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut shipped: BTreeSet<usize> = BTreeSet::new();
        for (i, j, _) in &plan.entries {
            if members.contains(i) {
                pairs.push((*i, *j));
                shipped.insert(*j);
            }
        }
        if pairs.is_empty() {
            return Err(Error::Input(format!(
                "class {} carries no plan mass",
                class.label
            )));
        }
        let sources = class.members.clone();
        let targets: Vec<usize> = shipped.into_iter().collect();
        let source_node: BTreeMap<usize, usize> =
            sources.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let target_node: BTreeMap<usize, usize> = targets
            .iter()
            .enumerate()
            .map(|(k, &j)| (j, sources.len() + k))
            .collect();
        let mut ambient: Vec<Vec<S>> = Vec::with_capacity(sources.len() + targets.len());
        for &i in &sources {
            ambient.push(lift_source(&instance.mu[i].0));
        }
        for &j in &targets {
            ambient.push(lift_target(&instance.nu[j].0));
        }
        let nodes: Vec<Vec<S>> = ambient
            .iter()
            .map(|z| chart.to_fibration_coords(z))
            .collect::<Result<_>>()?;
        let mut forward = Vec::with_capacity(pairs.len());
        for (i, j) in pairs {
            let u = source_node[&i];
            let v = target_node[&j];
            if !class.cone.contains(&sub(&ambient[u], &ambient[v])) {
                return Err(Error::Invariant(format!(
                    "support pair ({i},{j}) leaves the cone of class {}",
                    class.label
                )));
            }
            forward.push((u, v));
        }
        forward.sort_unstable();
        forward.dedup();
        let n = ambient.len();
        let mut returns = Vec::new();
        for tk in 0..targets.len() {
            let tn = sources.len() + tk;
            for w in 0..n {
                if w != tn && class.cone.contains(&sub(&ambient[w], &ambient[tn])) {
                    returns.push((tn, w));
                }
            }
        }
        Ok(Self {
            label: class.label.clone(),
            h: class.h,
            sources,
            targets,
            nodes,
            ambient,
            forward,
            returns,
            cone: class.cone.clone(),
            chart,
        })
    }

    pub fn node_count(&self) -> usize {
        self.sources.len() + self.targets.len()
    }

    pub fn is_source_node(&self, n: usize) -> bool {
        n < self.sources.len()
    }

    /// Node of an instance source index, if it belongs to the class.
    pub fn source_node(&self, i: usize) -> Option<usize> {
        self.sources.iter().position(|&s| s == i)
    }

    /// Node of an instance target index, if the class ships to it.
    pub fn target_node(&self, j: usize) -> Option<usize> {
        self.targets.iter().position(|&t| t == j).map(|k| self.sources.len() + k)
    }

    /// Whether a chart direction `(Δt, Δs)` moves along the class cone.
    pub fn cone_member(&self, v: &[S]) -> Result<bool> {
        Ok(self.cone.contains(&self.chart.linear_from_fibration(v)?))
    }

    /// Out-neighbours over both edge families, sorted and deduplicated.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for &(u, v) in self.forward.iter().chain(&self.returns) {
            adj[u].push(v);
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

fn lift_source<S: Scalar>(x: &[S]) -> Vec<S> {
    let mut z = Vec::with_capacity(x.len() + 1);
    z.push(S::one());
    z.extend(x.iter().cloned());
    z
}

fn lift_target<S: Scalar>(y: &[S]) -> Vec<S> {
    let mut z = Vec::with_capacity(y.len() + 1);
    z.push(S::zero());
    z.extend(y.iter().cloned());
    z
}

/// Every node reachable from a seed source through pair and return steps,
/// the seed included.
///
/// A reached node is exactly one that some chain of pairs, each hooked to
/// the previous target by a cone step, can end at; targets count as reached
/// through their own pair and a zero cone step.
pub fn reach_set<S: Scalar>(graph: &CarriageGraph<S>, seed: usize) -> Result<BTreeSet<usize>> {
    if !graph.is_source_node(seed) {
        return Err(Error::Input(format!("reach seed {seed} is not a source node")));
    }
    if !graph.forward.iter().any(|&(u, _)| u == seed) {
        return Err(Error::Input(format!("reach seed {seed} carries no pair")));
    }
    let adj = graph.adjacency();
    let mut seen = BTreeSet::new();
    seen.insert(seed);
    let mut queue = VecDeque::from([seed]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    Ok(seen)
}

/// Reach digits of every node: digit `k` is set when seed `k` reaches the
/// node.
#[derive(Debug, Clone)]
pub struct ReachDigits {
    /// Seed source nodes, one digit per seed in this order.
    pub seeds: Vec<usize>,
    /// Digit strings indexed `[node][seed]`.
    pub digits: Vec<Vec<bool>>,
}

/// Reach digits seeded by every source node in index order.
pub fn theta_prime<S: Scalar>(graph: &CarriageGraph<S>) -> Result<ReachDigits> {
    let seeds: Vec<usize> = (0..graph.sources.len()).collect();
    theta_prime_with_seeds(graph, &seeds)
}

/// Reach digits under a caller-chosen seed order. The seeds must enumerate
/// every source node exactly once: reordering permutes digit positions and
/// changes the ternary values, but never the level sets.
pub fn theta_prime_with_seeds<S: Scalar>(
    graph: &CarriageGraph<S>,
    seeds: &[usize],
) -> Result<ReachDigits> {
    let mut seen = BTreeSet::new();
    for &s in seeds {
        if !graph.is_source_node(s) {
            return Err(Error::Input(format!("seed {s} is not a source node")));
        }
        if !seen.insert(s) {
            return Err(Error::Input(format!("seed {s} appears twice")));
        }
    }
    if seen.len() != graph.sources.len() {
        return Err(Error::Input(format!(
            "{} seeds for {} sources; every source seeds exactly one digit",
            seeds.len(),
            graph.sources.len()
        )));
    }
    let mut digits = vec![vec![false; seeds.len()]; graph.node_count()];
    for (k, &s) in seeds.iter().enumerate() {
        for w in reach_set(graph, s)? {
            digits[w][k] = true;
        }
    }
    Ok(ReachDigits { seeds: seeds.to_vec(), digits })
}

/// The ternary level field of one carriage graph.
#[derive(Debug, Clone)]
pub struct ThetaField<S: Scalar> {
    /// Seed source nodes, one digit per seed in this order.
    pub seeds: Vec<usize>,
    /// Reach digits per node.
    pub prime_digits: Vec<Vec<bool>>,
    /// Ternary value of the reach digits.
    pub theta_prime: Vec<S>,
    /// Envelope digits per node: the lexicographically largest reach digits
    /// over the targets the node sits cone-forward of.
    pub digits: Vec<Vec<bool>>,
    /// Ternary value of the envelope digits.
    pub theta: Vec<S>,
    /// Nodes grouped by equal envelope digits, highest value first.
    pub levels: Vec<Vec<usize>>,
}

/// Extend reach digits to the envelope field and group nodes into levels.
///
/// The envelope at a node maximizes the reach digits over every target the
/// node sits cone-forward of; a target is always cone-forward of itself. The
/// digit strings all share one length, so lexicographic comparison agrees
/// with comparing ternary values.
pub fn theta_envelope<S: Scalar>(
    graph: &CarriageGraph<S>,
    prime: &ReachDigits,
) -> Result<ThetaField<S>> {
    let n = graph.node_count();
    if prime.digits.len() != n {
        return Err(Error::Input(format!(
            "reach digits cover {} nodes, the graph has {n}",
            prime.digits.len()
        )));
    }
    let mut eligible: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(tn, w) in &graph.returns {
        eligible[w].push(tn);
    }
    for (tn, slot) in eligible.iter_mut().enumerate().skip(graph.sources.len()) {
        slot.push(tn);
    }
    let mut digits: Vec<Vec<bool>> = Vec::with_capacity(n);
    for (w, targets_below) in eligible.iter().enumerate() {
        let mut best: Option<&Vec<bool>> = None;
        for &tn in targets_below {
            let cand = &prime.digits[tn];
            if best.is_none_or(|b| cand > b) {
                best = Some(cand);
            }
        }
        // A node with no target below it keeps its own reach digits.
        digits.push(best.unwrap_or(&prime.digits[w]).clone());
    }
    let theta: Vec<S> = digits.iter().map(|d| ternary_value(d)).collect();
    let theta_prime_vals: Vec<S> = prime.digits.iter().map(|d| ternary_value(d)).collect();
    let mut groups: BTreeMap<&Vec<bool>, Vec<usize>> = BTreeMap::new();
    for (w, d) in digits.iter().enumerate() {
        groups.entry(d).or_default().push(w);
    }
    let levels: Vec<Vec<usize>> = groups.into_values().rev().collect();
    Ok(ThetaField {
        seeds: prime.seeds.clone(),
        prime_digits: prime.digits.clone(),
        theta_prime: theta_prime_vals,
        digits,
        theta,
        levels,
    })
}

/// Reach digits and envelope in one call, seeded canonically.
pub fn theta_field<S: Scalar>(graph: &CarriageGraph<S>) -> Result<ThetaField<S>> {
    theta_envelope(graph, &theta_prime(graph)?)
}

/// Evaluate the envelope field at an arbitrary chart point: the largest
/// reach digits over the targets the point sits cone-forward of, zero when
/// there is none. Returns the ternary value with its digit string.
pub fn envelope_at<S: Scalar>(
    graph: &CarriageGraph<S>,
    field: &ThetaField<S>,
    point: &[S],
) -> Result<(S, Vec<bool>)> {
    let z = graph.chart.from_fibration_coords(point)?;
    let mut best: Option<&Vec<bool>> = None;
    for tk in 0..graph.targets.len() {
        let tn = graph.sources.len() + tk;
        if graph.cone.contains(&sub(&z, &graph.ambient[tn])) {
            let cand = &field.prime_digits[tn];
            if best.is_none_or(|b| cand > b) {
                best = Some(cand);
            }
        }
    }
    Ok(match best {
        Some(d) => (ternary_value(d), d.clone()),
        None => (S::zero(), vec![false; field.seeds.len()]),
    })
}

/// Value of a digit string: digit `k` contributes `2·3^{−(k+1)}`.
pub fn ternary_value<S: Scalar>(digits: &[bool]) -> S {
    let two = S::from_int(2);
    let three = S::from_int(3);
    let mut v = S::zero();
    for &d in digits.iter().rev() {
        let num = if d { v + two.clone() } else { v };
        v = num / three.clone();
    }
    v
}

/// Strongly connected components of the carriage graph over both edge
/// families: the cyclically connected pieces of the class. Components are
/// sorted ascending and ordered by their smallest node.
pub fn indecomposable_classes<S: Scalar>(graph: &CarriageGraph<S>) -> Vec<Vec<usize>> {
    strongly_connected_components(graph.node_count(), &graph.adjacency())
}

/// Iterative Tarjan with an explicit traversal stack.
fn strongly_connected_components(n: usize, adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    const UNSEEN: usize = usize::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_index = 0usize;
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut frames: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        frames.push((root, 0));
        while let Some(&(v, start)) = frames.last() {
            if start == 0 {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            let mut child = None;
            let mut cursor = start;
            while cursor < adj[v].len() {
                let w = adj[v][cursor];
                cursor += 1;
                if index[w] == UNSEEN {
                    child = Some(w);
                    break;
                }
                if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            }
            frames.last_mut().expect("frame present").1 = cursor;
            if let Some(w) = child {
                frames.push((w, 0));
                continue;
            }
            frames.pop();
            if let Some(&(parent, _)) = frames.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut component = Vec::new();
                loop {
                    let w = stack.pop().expect("component member on stack");
                    on_stack[w] = false;
                    component.push(w);
                    if w == v {
                        break;
                    }
                }
                component.sort_unstable();
                components.push(component);
            }
        }
    }
    components.sort_by_key(|c| c[0]);
    components
}

/// One cyclically connected subclass of a refined class.
#[derive(Debug, Clone)]
pub struct SubClass<S: Scalar> {
    pub parent: String,
    /// Lineage label `{parent}/{k}`, highest level first.
    pub label: String,
    /// Horizontal dimension actually spanned by the subclass pairs.
    pub ell: usize,
    /// Member source indices into the instance.
    pub members: Vec<usize>,
    /// Extremal subcone the subclass moves along, in ambient coordinates.
    pub subcone: Cone<S>,
    pub base_point: Vec<S>,
    pub mass: S,
    /// Common active piece set of the subclass pair directions.
    pub active: BTreeSet<usize>,
    /// Whether the subclass keeps the parent's full horizontal dimension and
    /// is therefore final.
    pub indecomposable: bool,
    /// A closed alternating walk of pair and cone steps through every
    /// member, as node indices.
    pub witness: Vec<usize>,
    /// The shared reach digits of the members.
    pub theta_digits: Vec<bool>,
}

/// A fully refined class: its chart and carriage graph, the level field,
/// and the subclasses in level order.
#[derive(Debug, Clone)]
pub struct ClassRefinement<S: Scalar> {
    pub class_label: String,
    pub graph: CarriageGraph<S>,
    pub theta: ThetaField<S>,
    pub subclasses: Vec<SubClass<S>>,
}

/// Refine one class of the first partition into cyclically connected
/// subclasses.
///
/// Builds the chart and carriage graph, computes the level field, checks
/// that its level sets agree with the strongly connected components, and
/// extracts one subclass per component with its spanned dimension, extremal
/// subcone, and witness walk.
pub fn refine_partition<S: Scalar>(
    instance: &TransportInstance<S>,
    lifted: &LiftedCost<S>,
    class: &FaceClass<S>,
    plan: &Plan<S>,
    opts: &RefineOptions<S>,
) -> Result<ClassRefinement<S>> {
    let members: BTreeSet<usize> = class.members.iter().copied().collect();
    let mut coords: Vec<Vec<S>> =
        class.members.iter().map(|&i| lift_source(&instance.mu[i].0)).collect();
    let mut shipped = BTreeSet::new();
    for (i, j, _) in &plan.entries {
        if members.contains(i) && shipped.insert(*j) {
            coords.push(lift_target(&instance.nu[*j].0));
        }
    }
    let chart = fibration_chart(class, &coords, opts)?;
    let graph = CarriageGraph::build(instance, class, chart, plan)?;
    let theta = theta_field(&graph)?;
    let components = indecomposable_classes(&graph);
    check_components_match_levels(&graph, &theta, &components)?;
    let subclasses = extract_subclasses(instance, lifted, &graph, &theta, &components, class)?;
    Ok(ClassRefinement { class_label: class.label.clone(), graph, theta, subclasses })
}

/// Mutual reachability and equal reach digits cut the sources the same way;
/// a mismatch means the graph or the field is broken.
fn check_components_match_levels<S: Scalar>(
    graph: &CarriageGraph<S>,
    theta: &ThetaField<S>,
    components: &[Vec<usize>],
) -> Result<()> {
    let mut component_of = vec![usize::MAX; graph.node_count()];
    for (c, component) in components.iter().enumerate() {
        for &w in component {
            component_of[w] = c;
        }
    }
    let mut by_digits: BTreeMap<&[bool], usize> = BTreeMap::new();
    let mut by_component: BTreeMap<usize, &[bool]> = BTreeMap::new();
    for (&c, d) in
        component_of.iter().zip(&theta.prime_digits).take(graph.sources.len())
    {
        let d: &[bool] = d;
        if *by_digits.entry(d).or_insert(c) != c || *by_component.entry(c).or_insert(d) != d {
            return Err(Error::Invariant(
                "cyclically connected components disagree with the level field".into(),
            ));
        }
    }
    Ok(())
}

fn extract_subclasses<S: Scalar>(
    instance: &TransportInstance<S>,
    lifted: &LiftedCost<S>,
    graph: &CarriageGraph<S>,
    theta: &ThetaField<S>,
    components: &[Vec<usize>],
    class: &FaceClass<S>,
) -> Result<Vec<SubClass<S>>> {
    let n_src = graph.sources.len();
    let mut ordered: Vec<&Vec<usize>> = components.iter().collect();
    // Highest level first; distinct components carry distinct digit strings.
    ordered.sort_by(|a, b| theta.prime_digits[b[0]].cmp(&theta.prime_digits[a[0]]));
    let mut subclasses = Vec::new();
    for (k, component) in ordered.into_iter().enumerate() {
        let src_nodes: Vec<usize> = component.iter().copied().filter(|&w| w < n_src).collect();
        if src_nodes.is_empty() {
            return Err(Error::Invariant(format!(
                "a component of class {} contains transported targets only",
                class.label
            )));
        }
        let in_component: BTreeSet<usize> = component.iter().copied().collect();
        let mut dirs: Vec<Vec<S>> = Vec::new();
        for &(u, v) in &graph.forward {
            if in_component.contains(&u) {
                let d = sub(&graph.ambient[u], &graph.ambient[v]);
                if !dirs.iter().any(|e| norm_inf(&sub(e, &d)) <= S::tol()) {
                    dirs.push(d);
                }
            }
        }
        if dirs.is_empty() {
            return Err(Error::Invariant(format!(
                "a component of class {} carries no pair",
                class.label
            )));
        }
        let ell = linalg::affine_dim(&dirs);
        let mut active = lifted.active_set(&dirs[0], &S::tol());
        for d in &dirs[1..] {
            let a = lifted.active_set(d, &S::tol());
            active = active.intersection(&a).copied().collect();
        }
        let subcone = subclass_cone(lifted, &dirs, ell, &active)?;
        let members: Vec<usize> = src_nodes.iter().map(|&w| graph.sources[w]).collect();
        let mass = members.iter().fold(S::zero(), |acc, &i| acc + instance.mu[i].1.clone());
        let witness = witness_cycle(graph, &src_nodes)?;
        verify_witness(graph, &witness)?;
        subclasses.push(SubClass {
            parent: class.label.clone(),
            label: format!("{}/{k}", class.label),
            ell,
            members,
            subcone,
            base_point: graph.ambient[src_nodes[0]].clone(),
            mass,
            active,
            indecomposable: ell == class.h,
            witness,
            theta_digits: theta.prime_digits[component[0]].clone(),
        });
    }
    Ok(subclasses)
}

/// The extremal subcone spanned by a component's pair directions: rebuilt
/// from their common active set when that face has exactly the spanned
/// dimension, otherwise the hull (or ray) of the directions themselves.
fn subclass_cone<S: Scalar>(
    lifted: &LiftedCost<S>,
    dirs: &[Vec<S>],
    ell: usize,
    active: &BTreeSet<usize>,
) -> Result<Cone<S>> {
    if lifted.base.kind == CostKind::Polyhedral && !active.is_empty() {
        let cand = lifted.cone_from_active(active, false)?;
        if cand.dim() == ell + 1 {
            return Ok(cand);
        }
    }
    if dirs.len() == 1 {
        return cone::ray_cone(&[cone::canonical_ray(dirs[0].clone())], dirs[0].len());
    }
    cone::direction_hull(dirs)
}

/// A closed walk of strictly alternating pair and cone steps visiting every
/// given source node, built leg by leg from breadth-first searches over the
/// two-step relation "a pair out of `u`, then a cone step into `v`".
fn witness_cycle<S: Scalar>(graph: &CarriageGraph<S>, src_nodes: &[usize]) -> Result<Vec<usize>> {
    let in_component: BTreeSet<usize> = src_nodes.iter().copied().collect();
    let mut pair_targets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(u, v) in &graph.forward {
        if in_component.contains(&u) {
            pair_targets.entry(u).or_default().push(v);
        }
    }
    let mut return_adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(t, w) in &graph.returns {
        if in_component.contains(&w) {
            return_adj.entry(t).or_default().push(w);
        }
    }
    let mut step: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &u in src_nodes {
        let mut out: Vec<(usize, usize)> = Vec::new();
        let mut covered: BTreeSet<usize> = BTreeSet::new();
        if let Some(ts) = pair_targets.get(&u) {
            for &t in ts {
                if let Some(ws) = return_adj.get(&t) {
                    for &w in ws {
                        if covered.insert(w) {
                            out.push((w, t));
                        }
                    }
                }
            }
        }
        step.insert(u, out);
    }
    let mut path = vec![src_nodes[0]];
    for leg in 1..=src_nodes.len() {
        let goal = src_nodes[leg % src_nodes.len()];
        let cur = *path.last().expect("path nonempty");
        let leg_path = alternating_leg(&step, cur, goal)?;
        path.extend(leg_path.into_iter().skip(1));
    }
    Ok(path)
}

/// Shortest two-step walk from one source to another (at least one step,
/// so `from == to` yields a genuine loop), expanded to node level.
fn alternating_leg(
    step: &BTreeMap<usize, Vec<(usize, usize)>>,
    from: usize,
    to: usize,
) -> Result<Vec<usize>> {
    let mut prev: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut queue = VecDeque::from([from]);
    let mut first = true;
    while let Some(u) = queue.pop_front() {
        if !first && u == to {
            break;
        }
        first = false;
        for &(v, t) in step.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
            if let Entry::Vacant(e) = prev.entry(v) {
                e.insert((u, t));
                queue.push_back(v);
            }
        }
    }
    if !prev.contains_key(&to) {
        return Err(Error::Invariant(
            "no alternating cycle inside a cyclically connected component".into(),
        ));
    }
    let mut walk = vec![to];
    let mut cur = to;
    loop {
        let &(p, t) = prev.get(&cur).expect("walk stays inside the search tree");
        walk.push(t);
        walk.push(p);
        if p == from {
            break;
        }
        cur = p;
    }
    walk.reverse();
    Ok(walk)
}

/// Replay a witness walk edge by edge: it must close, alternate, and use
/// only genuine pair and cone steps of the graph.
pub fn verify_witness<S: Scalar>(graph: &CarriageGraph<S>, witness: &[usize]) -> Result<()> {
    if witness.len() < 3 || witness.len().is_multiple_of(2) {
        return Err(Error::Invariant(
            "witness walk must alternate pair and cone steps and close".into(),
        ));
    }
    if witness.first() != witness.last() {
        return Err(Error::Invariant("witness walk does not close".into()));
    }
    let pairs: BTreeSet<(usize, usize)> = graph.forward.iter().copied().collect();
    let steps: BTreeSet<(usize, usize)> = graph.returns.iter().copied().collect();
    for (k, edge) in witness.windows(2).enumerate() {
        let (a, b) = (edge[0], edge[1]);
        if k % 2 == 0 {
            if !pairs.contains(&(a, b)) {
                return Err(Error::Invariant(format!(
                    "witness step {k} ({a}→{b}) is not a plan pair"
                )));
            }
        } else if !steps.contains(&(a, b)) {
            return Err(Error::Invariant(format!(
                "witness step {k} ({a}→{b}) is not a cone step"
            )));
        }
    }
    Ok(())
}

/// A final piece of the refined decomposition, with the provenance needed to
/// look up its witness.
#[derive(Debug, Clone)]
pub struct RefinedPiece<S: Scalar> {
    pub class: FaceClass<S>,
    /// Index into `Refinement::steps` of the refinement that produced it.
    pub step: usize,
    /// Index into that refinement's subclasses.
    pub sub: usize,
}

/// The full refinement run: every per-class refinement performed, in order,
/// and the final cyclically connected pieces.
#[derive(Debug, Clone)]
pub struct Refinement<S: Scalar> {
    pub rounds: usize,
    pub steps: Vec<ClassRefinement<S>>,
    pub pieces: Vec<RefinedPiece<S>>,
}

/// Refine every class of the first partition to a fixed point.
///
/// Classes are refined independently (in parallel, one thread per class,
/// deterministic within a class). A subclass keeping the full horizontal
/// dimension is final; one that spans less restarts the next round as a
/// class over its extremal subcone, with a strictly smaller dimension, so
/// the loop ends after at most one round per ambient dimension.
pub fn refine_to_fixpoint<S: Scalar>(
    instance: &TransportInstance<S>,
    lifted: &LiftedCost<S>,
    partition: &Partition<S>,
    plan: &Plan<S>,
    opts: &RefineOptions<S>,
) -> Result<Refinement<S>> {
    let round_cap = lifted.ambient();
    let mut queue: Vec<FaceClass<S>> = partition.classes.clone();
    let mut steps: Vec<ClassRefinement<S>> = Vec::new();
    let mut pieces: Vec<RefinedPiece<S>> = Vec::new();
    let mut rounds = 0usize;
    while !queue.is_empty() {
        rounds += 1;
        if rounds > round_cap {
            return Err(Error::Invariant(
                "refinement failed to stabilize within the dimension bound".into(),
            ));
        }
        let refined: Vec<ClassRefinement<S>> = queue
            .par_iter()
            .map(|class| refine_partition(instance, lifted, class, plan, opts))
            .collect::<Result<_>>()?;
        let mut next = Vec::new();
        for refinement in refined {
            let step = steps.len();
            for (sub, subclass) in refinement.subclasses.iter().enumerate() {
                let class = subclass_to_class(subclass);
                if subclass.indecomposable {
                    pieces.push(RefinedPiece { class, step, sub });
                } else {
                    next.push(class);
                }
            }
            steps.push(refinement);
        }
        queue = next;
    }
    Ok(Refinement { rounds, steps, pieces })
}

/// Recast a subclass as a class over its own subcone, for the next round or
/// for the final report.
pub fn subclass_to_class<S: Scalar>(sub: &SubClass<S>) -> FaceClass<S> {
    let picked = linalg::basis_subset(&sub.subcone.generators);
    FaceClass {
        label: sub.label.clone(),
        h: sub.ell,
        members: sub.members.clone(),
        cone: sub.subcone.clone(),
        span_basis: picked.into_iter().map(|k| sub.subcone.generators[k].clone()).collect(),
        base_point: sub.base_point.clone(),
        mass: sub.mass.clone(),
        active: sub.active.clone(),
    }
}

/// A boxed evaluation grid in chart coordinates: time levels crossed with a
/// uniform lattice over a box in the horizontal coordinates.
#[derive(Debug, Clone)]
pub struct GridSpec<S: Scalar> {
    /// Ascending nonnegative time levels.
    pub t_levels: Vec<S>,
    pub mins: Vec<S>,
    pub maxs: Vec<S>,
    /// Cells per axis; each axis gets `resolution + 1` points.
    pub resolution: usize,
}

#[derive(Debug, Clone)]
pub struct GridLevel<S: Scalar> {
    pub t: S,
    pub points: Vec<Vec<S>>,
    pub values: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct GridField<S: Scalar> {
    pub spec: GridSpec<S>,
    pub levels: Vec<GridLevel<S>>,
}

const GRID_BUDGET: u128 = 200_000;

/// Evaluate the upper envelope of the level field on a grid, one level per
/// requested time.
///
/// The box must cover the horizontal coordinates of every node; the value at
/// a grid point is the largest reach value over the targets the point sits
/// cone-forward of, zero when there is none.
pub fn grid_usc_envelope<S: Scalar>(
    graph: &CarriageGraph<S>,
    field: &ThetaField<S>,
    spec: &GridSpec<S>,
) -> Result<GridField<S>> {
    validate_grid(graph, spec)?;
    let points = grid_points(spec);
    let mut levels = Vec::with_capacity(spec.t_levels.len());
    for t in &spec.t_levels {
        let mut values = Vec::with_capacity(points.len());
        for s in &points {
            let mut chart_point = Vec::with_capacity(s.len() + 1);
            chart_point.push(t.clone());
            chart_point.extend(s.iter().cloned());
            let (v, _) = envelope_at(graph, field, &chart_point)?;
            values.push(v);
        }
        levels.push(GridLevel { t: t.clone(), points: points.clone(), values });
    }
    Ok(GridField { spec: spec.clone(), levels })
}

fn validate_grid<S: Scalar>(graph: &CarriageGraph<S>, spec: &GridSpec<S>) -> Result<()> {
    let h = graph.chart.h;
    if spec.mins.len() != h || spec.maxs.len() != h {
        return Err(Error::Input(format!(
            "grid box is {}-dimensional, the class chart needs {h}",
            spec.mins.len()
        )));
    }
    if spec.resolution == 0 {
        return Err(Error::Input("grid resolution must be at least one".into()));
    }
    if spec.t_levels.is_empty() {
        return Err(Error::Input("grid needs at least one time level".into()));
    }
    let mut prev: Option<&S> = None;
    for t in &spec.t_levels {
        if *t < S::zero() {
            return Err(Error::Input("grid time levels must be nonnegative".into()));
        }
        if let Some(p) = prev {
            if t < p {
                return Err(Error::Input("grid time levels must be ascending".into()));
            }
        }
        prev = Some(t);
    }
    for i in 0..h {
        if spec.maxs[i] < spec.mins[i] {
            return Err(Error::Input("grid box is empty".into()));
        }
    }
    let per_axis = spec.resolution as u128 + 1;
    let mut total: u128 = spec.t_levels.len() as u128;
    for _ in 0..h {
        total = total.saturating_mul(per_axis);
    }
    if total > GRID_BUDGET {
        return Err(Error::Unsupported(format!(
            "grid with {total} evaluation points exceeds the budget of {GRID_BUDGET}"
        )));
    }
    for f in &graph.nodes {
        for i in 0..h {
            let s = &f[i + 1];
            if *s < spec.mins[i].clone() - S::coarse_tol()
                || *s > spec.maxs[i].clone() + S::coarse_tol()
            {
                return Err(Error::Input("grid does not cover the class".into()));
            }
        }
    }
    Ok(())
}

/// The lattice points of the box, last axis fastest.
fn grid_points<S: Scalar>(spec: &GridSpec<S>) -> Vec<Vec<S>> {
    let h = spec.mins.len();
    let res = spec.resolution;
    let axes: Vec<Vec<S>> = (0..h)
        .map(|i| {
            (0..=res)
                .map(|k| {
                    spec.mins[i].clone()
                        + (spec.maxs[i].clone() - spec.mins[i].clone())
                            * S::from_ratio(k as i64, res as i64)
                })
                .collect()
        })
        .collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for v in axis {
                let mut p = prefix.clone();
                p.push(v.clone());
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// One forward-in-time evolution step of a value field between point sets in
/// horizontal coordinates: each output takes the largest input value sitting
/// a cone step behind it, zero when nothing does. Evolving twice through an
/// intermediate set that carries the field agrees with evolving once.
pub fn evolve<S: Scalar>(
    graph: &CarriageGraph<S>,
    from_t: &S,
    from_points: &[Vec<S>],
    from_values: &[S],
    to_t: &S,
    to_points: &[Vec<S>],
) -> Result<Vec<S>> {
    if from_points.len() != from_values.len() {
        return Err(Error::Input(format!(
            "{} evolution points carry {} values",
            from_points.len(),
            from_values.len()
        )));
    }
    if to_t < from_t {
        return Err(Error::Input("the level field evolves forward in time only".into()));
    }
    let dt = to_t.clone() - from_t.clone();
    let mut out = Vec::with_capacity(to_points.len());
    for p in to_points {
        let mut best = S::zero();
        for (q, v) in from_points.iter().zip(from_values) {
            let mut step = Vec::with_capacity(p.len() + 1);
            step.push(dt.clone());
            step.extend(sub(p, q));
            if *v > best && graph.cone_member(&step)? {
                best = v.clone();
            }
        }
        out.push(best);
    }
    Ok(out)
}
