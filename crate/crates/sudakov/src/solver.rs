//! Exact discrete optimal transport: primal vertex plans and dual
//! potentials via network simplex on the bipartite transportation graph.
//!
//! The solver is deterministic: entering arcs are found by a fixed
//! block-search order, ties in the ratio test are resolved by the
//! strongly-feasible-tree rule (last blocking arc when the pivot cycle is
//! traversed from its apex in the entering direction), which also rules out
//! cycling on degenerate instances. Exactness follows the scalar backend:
//! with rationals every pivot, marginal, and dual value is exact.
//!
//! Masked pairs (forbidden transports) are absent edges, not large finite
//! costs; feasibility of a masked instance is established up front by a
//! max-flow check. Artificial connectivity arcs carry a symbolic infinite
//! cost — ordered pairs `(m, v)` compared lexicographically, where `m`
//! counts infinite units — so no numeric big-M constant ever mixes with
//! real costs.

use crate::cone::PolyhedralCost;
use crate::linalg::sub;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Dense cost matrix with an optional mask; a masked pair means the
/// transport is forbidden (+∞), implemented as an absent edge.
#[derive(Debug, Clone)]
pub struct CostMatrix<S: Scalar> {
    rows: usize,
    cols: usize,
    values: Vec<S>,
    mask: Option<Vec<bool>>, // true = allowed
}

impl<S: Scalar> CostMatrix<S> {
    pub fn dense(rows: usize, cols: usize, values: Vec<S>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Input(format!(
                "cost matrix has {} entries, expected {rows}×{cols}",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values, mask: None })
    }

    pub fn masked(rows: usize, cols: usize, values: Vec<S>, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != rows * cols {
            return Err(Error::Input("mask shape does not match cost matrix".into()));
        }
        let mut m = Self::dense(rows, cols, values)?;
        if mask.iter().all(|&a| a) {
            return Ok(m);
        }
        m.mask = Some(mask);
        Ok(m)
    }

    /// Evaluate a cost on all displacement differences `x′_j − x_i`.
    pub fn from_cost(cost: &PolyhedralCost<S>, mu: &[Vec<S>], nu: &[Vec<S>]) -> Result<Self> {
        let mut values = Vec::with_capacity(mu.len() * nu.len());
        for x in mu {
            for y in nu {
                values.push(cost.checked_value(&sub(y, x))?);
            }
        }
        Self::dense(mu.len(), nu.len(), values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn is_masked(&self) -> bool {
        self.mask.is_some()
    }

    /// `None` when the pair is forbidden.
    pub fn get(&self, i: usize, j: usize) -> Option<&S> {
        let k = i * self.cols + j;
        match &self.mask {
            Some(m) if !m[k] => None,
            _ => Some(&self.values[k]),
        }
    }
}

/// A discrete transport instance: weighted atoms on both sides and a cost
/// matrix. Weights are normalized to unit total mass per side on
/// construction.
#[derive(Debug, Clone)]
pub struct TransportInstance<S: Scalar> {
    pub mu: Vec<(Vec<S>, S)>,
    pub nu: Vec<(Vec<S>, S)>,
    pub cost: CostMatrix<S>,
}

impl<S: Scalar> TransportInstance<S> {
    pub fn new(
        mu: Vec<(Vec<S>, S)>,
        nu: Vec<(Vec<S>, S)>,
        cost: CostMatrix<S>,
    ) -> Result<Self> {
        if mu.is_empty() || nu.is_empty() {
            return Err(Error::Input("both marginals need at least one atom".into()));
        }
        if cost.rows() != mu.len() || cost.cols() != nu.len() {
            return Err(Error::Input(format!(
                "cost matrix is {}×{}, marginals have {}/{} atoms",
                cost.rows(),
                cost.cols(),
                mu.len(),
                nu.len()
            )));
        }
        let mu = normalize(mu, "source")?;
        let nu = normalize(nu, "target")?;
        Ok(Self { mu, nu, cost })
    }

    /// Convenience: build the cost matrix from a cost function.
    pub fn with_cost(
        mu: Vec<(Vec<S>, S)>,
        nu: Vec<(Vec<S>, S)>,
        cost: &PolyhedralCost<S>,
    ) -> Result<Self> {
        let mu_pts: Vec<Vec<S>> = mu.iter().map(|(p, _)| p.clone()).collect();
        let nu_pts: Vec<Vec<S>> = nu.iter().map(|(p, _)| p.clone()).collect();
        let matrix = CostMatrix::from_cost(cost, &mu_pts, &nu_pts)?;
        Self::new(mu, nu, matrix)
    }
}

fn normalize<S: Scalar>(atoms: Vec<(Vec<S>, S)>, side: &str) -> Result<Vec<(Vec<S>, S)>> {
    let mut total = S::zero();
    for (k, (_, w)) in atoms.iter().enumerate() {
        if *w <= S::tol() {
            return Err(Error::Input(format!(
                "{side} atom {k} has non-positive weight {}",
                w.render()
            )));
        }
        total += w.clone();
    }
    if total <= S::tol() {
        return Err(Error::Input(format!("{side} marginal has zero total mass")));
    }
    Ok(atoms.into_iter().map(|(p, w)| (p, w / total.clone())).collect())
}

/// An optimal transport plan: sparse positive entries, objective value, and
/// dual potentials with `psi[j] − phi[i] ≤ c_ij`, equality on the support.
#[derive(Debug, Clone)]
pub struct Plan<S: Scalar> {
    pub entries: Vec<(usize, usize, S)>,
    pub value: S,
    pub phi: Vec<S>,
    pub psi: Vec<S>,
}

impl<S: Scalar> Plan<S> {
    pub fn support(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|&(i, j, _)| (i, j)).collect()
    }

    pub fn row_sums(&self, rows: usize) -> Vec<S> {
        let mut out = vec![S::zero(); rows];
        for (i, _, m) in &self.entries {
            out[*i] += m.clone();
        }
        out
    }

    pub fn col_sums(&self, cols: usize) -> Vec<S> {
        let mut out = vec![S::zero(); cols];
        for (_, j, m) in &self.entries {
            out[*j] += m.clone();
        }
        out
    }
}

/// Solve the instance for its own cost matrix.
pub fn solve_primal<S: Scalar>(instance: &TransportInstance<S>) -> Result<Plan<S>> {
    solve_matrix(instance, &instance.cost)
}

/// Solve the instance for a secondary cost evaluated on the unmasked pairs
/// only (the mask of the instance is kept). Used to pick a distinguished
/// plan — e.g. a quadratic secondary inside an affine class — among the
/// optimizers of the primary cost.
pub fn solve_constrained<S: Scalar>(
    instance: &TransportInstance<S>,
    secondary: &PolyhedralCost<S>,
) -> Result<Plan<S>> {
    let rows = instance.cost.rows();
    let cols = instance.cost.cols();
    let mut values = Vec::with_capacity(rows * cols);
    let mut mask = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let allowed = instance.cost.get(i, j).is_some();
            mask.push(allowed);
            if allowed {
                values.push(secondary.checked_value(&sub(&instance.nu[j].0, &instance.mu[i].0))?);
            } else {
                values.push(S::zero());
            }
        }
    }
    let matrix = CostMatrix::masked(rows, cols, values, mask)?;
    solve_matrix(instance, &matrix)
}

fn solve_matrix<S: Scalar>(
    instance: &TransportInstance<S>,
    cost: &CostMatrix<S>,
) -> Result<Plan<S>> {
    let mu_w: Vec<S> = instance.mu.iter().map(|(_, w)| w.clone()).collect();
    let nu_w: Vec<S> = instance.nu.iter().map(|(_, w)| w.clone()).collect();
    if cost.is_masked() && !max_flow_feasible(&mu_w, &nu_w, cost) {
        return Err(Error::Infeasible(
            "the feasibility mask admits no transport plan with these marginals".into(),
        ));
    }
    Simplex::new(&mu_w, &nu_w, cost).run()
}

/// Feasibility of a masked instance by max flow: send each source weight
/// through the allowed pairs; feasible iff everything arrives at the
/// targets. Shortest augmenting paths (breadth-first) on the residual
/// graph; exact with rational scalars.
fn max_flow_feasible<S: Scalar>(mu: &[S], nu: &[S], cost: &CostMatrix<S>) -> bool {
    let m = mu.len();
    let n = nu.len();
    let nodes = m + n + 2;
    let src = m + n;
    let snk = m + n + 1;
    let total: S = mu.iter().fold(S::zero(), |a, w| a + w.clone());
    let cap = |u: usize, v: usize| -> S {
        if u == src && v < m {
            mu[v].clone()
        } else if u < m && (m..m + n).contains(&v) && cost.get(u, v - m).is_some() {
            total.clone() // effectively unbounded on a unit-mass instance
        } else if (m..m + n).contains(&u) && v == snk {
            nu[u - m].clone()
        } else {
            S::zero()
        }
    };
    let mut flow: Vec<S> = vec![S::zero(); nodes * nodes];
    let mut sent = S::zero();
    loop {
        // Breadth-first search for an augmenting path in the residual graph.
        let mut parent: Vec<Option<usize>> = vec![None; nodes];
        parent[src] = Some(src);
        let mut queue = std::collections::VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            if u == snk {
                break;
            }
            for v in 0..nodes {
                if parent[v].is_some() {
                    continue;
                }
                let residual = cap(u, v) - flow[u * nodes + v].clone() + flow[v * nodes + u].clone();
                if residual > S::tol() {
                    parent[v] = Some(u);
                    queue.push_back(v);
                }
            }
        }
        if parent[snk].is_none() {
            break;
        }
        // Bottleneck along the recorded path, then augment.
        let mut bottleneck: Option<S> = None;
        let mut v = snk;
        while v != src {
            let u = parent[v].expect("path recorded");
            let residual = cap(u, v) - flow[u * nodes + v].clone() + flow[v * nodes + u].clone();
            bottleneck = Some(match bottleneck {
                None => residual,
                Some(b) if residual < b => residual,
                Some(b) => b,
            });
            v = u;
        }
        let theta = bottleneck.expect("path has at least one edge");
        let mut v = snk;
        while v != src {
            let u = parent[v].expect("path recorded");
            // Cancel reverse flow first, then use forward capacity.
            let back = flow[v * nodes + u].clone();
            if back >= theta {
                flow[v * nodes + u] = back - theta.clone();
            } else {
                flow[v * nodes + u] = S::zero();
                flow[u * nodes + v] += theta.clone() - back;
            }
            v = u;
        }
        sent += theta;
    }
    (total - sent).abs() <= S::coarse_tol()
}

/// Symbolic cost `m·∞ + v`, compared lexicographically.
#[derive(Debug, Clone, PartialEq)]
struct MCost<S: Scalar>(i64, S);

impl<S: Scalar> MCost<S> {
    fn zero() -> Self {
        MCost(0, S::zero())
    }
    fn real(v: S) -> Self {
        MCost(0, v)
    }
    fn artificial() -> Self {
        MCost(1, S::zero())
    }
    fn add(&self, o: &Self) -> Self {
        MCost(self.0 + o.0, self.1.clone() + o.1.clone())
    }
    fn sub(&self, o: &Self) -> Self {
        MCost(self.0 - o.0, self.1.clone() - o.1.clone())
    }
    /// Strictly negative, with the scalar tolerance on the finite part.
    fn is_negative(&self) -> bool {
        self.0 < 0 || (self.0 == 0 && self.1 < -S::tol())
    }
    /// Lexicographic strict order (for picking the most negative).
    fn lt(&self, o: &Self) -> bool {
        self.0 < o.0 || (self.0 == o.0 && self.1 < o.1)
    }
}

const ROOT_ARC_NONE: usize = usize::MAX;

/// Network simplex state. Node layout: sources `0..m`, targets `m..m+n`,
/// artificial root `m+n`. Arc layout: real arcs row-major `i·n + j`
/// (source i → target j), then `i → root` for each source, then
/// `root → target j`.
struct Simplex<'a, S: Scalar> {
    m: usize,
    n: usize,
    cost: &'a CostMatrix<S>,
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    /// Flow on the edge to the parent, in the arc's own direction (≥ 0).
    flow: Vec<S>,
    children: Vec<Vec<usize>>,
    pot: Vec<MCost<S>>,
    depth: Vec<usize>,
    next_start: usize,
}

impl<'a, S: Scalar> Simplex<'a, S> {
    fn new(mu: &'a [S], nu: &'a [S], cost: &'a CostMatrix<S>) -> Self {
        let m = mu.len();
        let n = nu.len();
        let nodes = m + n + 1;
        let root = m + n;
        let mut parent = vec![root; nodes];
        parent[root] = ROOT_ARC_NONE;
        let mut parent_arc = vec![ROOT_ARC_NONE; nodes];
        let mut flow = vec![S::zero(); nodes];
        let mut children = vec![Vec::new(); nodes];
        for i in 0..m {
            parent_arc[i] = m * n + i;
            flow[i] = mu[i].clone();
            children[root].push(i);
        }
        for j in 0..n {
            parent_arc[m + j] = m * n + m + j;
            flow[m + j] = nu[j].clone();
            children[root].push(m + j);
        }
        let mut s = Self {
            m,
            n,
            cost,
            parent,
            parent_arc,
            flow,
            children,
            pot: vec![MCost::zero(); nodes],
            depth: vec![0; nodes],
            next_start: 0,
        };
        s.refresh_tree_values();
        s
    }

    fn num_arcs(&self) -> usize {
        self.m * self.n + self.m + self.n
    }

    fn arc_ends(&self, k: usize) -> (usize, usize) {
        let mn = self.m * self.n;
        let root = self.m + self.n;
        if k < mn {
            (k / self.n, self.m + k % self.n)
        } else if k < mn + self.m {
            (k - mn, root)
        } else {
            (root, self.m + (k - mn - self.m))
        }
    }

    /// `None` for masked real arcs.
    fn arc_cost(&self, k: usize) -> Option<MCost<S>> {
        let mn = self.m * self.n;
        if k < mn {
            self.cost.get(k / self.n, k % self.n).map(|c| MCost::real(c.clone()))
        } else {
            Some(MCost::artificial())
        }
    }

    /// Recompute potentials and depths from the tree (root has zero
    /// potential; across each tree arc the potential difference equals the
    /// arc cost). Preorder first, then one top-down pass.
    fn refresh_tree_values(&mut self) {
        let root = self.m + self.n;
        let mut order = Vec::with_capacity(root + 1);
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            order.push(u);
            stack.extend(self.children[u].iter().copied());
        }
        self.pot[root] = MCost::zero();
        self.depth[root] = 0;
        for &c in order.iter().skip(1) {
            let u = self.parent[c];
            let arc = self.parent_arc[c];
            let cost = self.arc_cost(arc).expect("tree arcs are never masked");
            let (from, _to) = self.arc_ends(arc);
            // Invariant: pot[to] − pot[from] = cost.
            self.pot[c] = if from == c {
                self.pot[u].sub(&cost)
            } else {
                self.pot[u].add(&cost)
            };
            self.depth[c] = self.depth[u] + 1;
        }
    }

    fn reduced(&self, k: usize) -> Option<MCost<S>> {
        let (f, t) = self.arc_ends(k);
        self.arc_cost(k).map(|c| c.sub(&self.pot[t].sub(&self.pot[f])))
    }

    /// Block search: scan fixed-size blocks cyclically from `next_start`,
    /// return the most negative reduced-cost arc of the first block that
    /// contains any.
    fn find_entering(&mut self) -> Option<usize> {
        let arcs = self.num_arcs();
        let block = ((arcs as f64).sqrt() as usize + 1).max(64).min(arcs);
        let mut best: Option<(usize, MCost<S>)> = None;
        let mut scanned = 0;
        let mut k = self.next_start % arcs;
        while scanned < arcs {
            let in_tree = {
                let (f, t) = self.arc_ends(k);
                self.parent_arc[f] == k || self.parent_arc[t] == k
            };
            if !in_tree {
                if let Some(r) = self.reduced(k) {
                    if r.is_negative() {
                        match &best {
                            Some((_, b)) if !r.lt(b) => {}
                            _ => best = Some((k, r)),
                        }
                    }
                }
            }
            scanned += 1;
            k = (k + 1) % arcs;
            if scanned % block == 0 && best.is_some() {
                break;
            }
        }
        if let Some((k, _)) = &best {
            self.next_start = (k + 1) % arcs;
        }
        best.map(|(k, _)| k)
    }

    fn run(mut self) -> Result<Plan<S>> {
        let pivot_cap = 200 * (self.m + self.n) + 10_000;
        let mut pivots = 0usize;
        while let Some(e) = self.find_entering() {
            pivots += 1;
            if pivots > pivot_cap {
                return Err(Error::Invariant(format!(
                    "network simplex exceeded the pivot cap ({pivot_cap})"
                )));
            }
            self.pivot(e)?;
        }
        self.extract()
    }

    fn pivot(&mut self, entering: usize) -> Result<()> {
        let (eu, ev) = self.arc_ends(entering);
        // Apex: deepest common ancestor.
        let (mut a, mut b) = (eu, ev);
        while self.depth[a] > self.depth[b] {
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b];
        }
        while a != b {
            a = self.parent[a];
            b = self.parent[b];
        }
        let apex = a;
        // Cycle in push direction, starting at the apex: down the u-side to
        // eu, across the entering arc, up the v-side back to the apex.
        // Each element: (child node owning the tree edge, decreases?).
        let mut order: Vec<(usize, bool)> = Vec::new();
        {
            let mut side = Vec::new();
            let mut u = eu;
            while u != apex {
                // Traversed downward (parent → child): flow decreases when
                // the arc agrees with the child→parent direction.
                let arc = self.parent_arc[u];
                let (from, _) = self.arc_ends(arc);
                side.push((u, from == u));
                u = self.parent[u];
            }
            side.reverse();
            order.extend(side);
        }
        {
            let mut v = ev;
            while v != apex {
                // Traversed upward (child → parent): flow decreases when the
                // arc points parent → child.
                let arc = self.parent_arc[v];
                let (from, _) = self.arc_ends(arc);
                order.push((v, from != v));
                v = self.parent[v];
            }
        }
        // Ratio test; the last blocking arc in traversal order leaves, which
        // keeps the tree strongly feasible.
        let mut theta: Option<S> = None;
        let mut leaving: Option<usize> = None;
        for &(node, decreases) in &order {
            if decreases {
                let f = self.flow[node].clone();
                let blocked = match &theta {
                    None => true,
                    Some(t) => f <= t.clone() + S::tol(),
                };
                if blocked {
                    match &theta {
                        Some(t) if f + S::tol() < t.clone() => theta = Some(self.flow[node].clone()),
                        None => theta = Some(self.flow[node].clone()),
                        _ => {}
                    }
                    leaving = Some(node);
                }
            }
        }
        let Some(theta) = theta else {
            return Err(Error::Invariant("unbounded pivot cycle in a bounded polytope".into()));
        };
        let leave_child = leaving.expect("a blocking arc accompanies a finite ratio");
        // Apply the flow change.
        for &(node, decreases) in &order {
            if decreases {
                self.flow[node] -= theta.clone();
                if self.flow[node] < S::zero() {
                    self.flow[node] = S::zero();
                }
            } else {
                self.flow[node] += theta.clone();
            }
        }
        // Re-hang the subtree under the leaving edge through the entering
        // arc: reverse parent pointers from the entering endpoint inside the
        // subtree up to the leaving child.
        let inside = self.collect_subtree(leave_child);
        let in2 = if inside.contains(&eu) { eu } else { ev };
        let out2 = if in2 == eu { ev } else { eu };
        debug_assert!(!inside.contains(&out2));
        let mut carry_arc = entering;
        let mut carry_flow = theta.clone();
        let mut prev = out2;
        let mut cur = in2;
        loop {
            let next_parent = self.parent[cur];
            let next_arc = self.parent_arc[cur];
            let next_flow = self.flow[cur].clone();
            // Detach cur from its old parent.
            if cur != leave_child || prev != next_parent {
                if let Some(pos) = self.children[next_parent].iter().position(|&c| c == cur) {
                    self.children[next_parent].remove(pos);
                }
            }
            if let Some(pos) = self.children[prev].iter().position(|&c| c == cur) {
                self.children[prev].remove(pos);
            }
            self.parent[cur] = prev;
            self.parent_arc[cur] = carry_arc;
            self.flow[cur] = carry_flow.clone();
            self.children[prev].push(cur);
            if cur == leave_child {
                break;
            }
            carry_arc = next_arc;
            carry_flow = next_flow;
            prev = cur;
            cur = next_parent;
        }
        self.refresh_tree_values();
        Ok(())
    }

    fn collect_subtree(&self, top: usize) -> std::collections::BTreeSet<usize> {
        let mut set = std::collections::BTreeSet::new();
        let mut stack = vec![top];
        while let Some(u) = stack.pop() {
            if set.insert(u) {
                stack.extend(self.children[u].iter().copied());
            }
        }
        set
    }

    fn extract(self) -> Result<Plan<S>> {
        let mn = self.m * self.n;
        let root = self.m + self.n;
        // Residual artificial flow means infeasibility slipped through.
        for node in 0..root {
            let arc = self.parent_arc[node];
            if arc >= mn && self.flow[node] > S::coarse_tol() {
                return Err(Error::Infeasible(
                    "optimum still routes mass through artificial arcs".into(),
                ));
            }
        }
        let mut entries: Vec<(usize, usize, S)> = Vec::new();
        for node in 0..root {
            let arc = self.parent_arc[node];
            if arc < mn && self.flow[node] > S::tol() {
                entries.push((arc / self.n, arc % self.n, self.flow[node].clone()));
            }
        }
        entries.sort_by_key(|a| (a.0, a.1));
        let mut value = S::zero();
        for (i, j, m) in &entries {
            let c = self.cost.get(*i, *j).expect("support pairs are unmasked");
            value += c.clone() * m.clone();
        }
        let potentials = self.finite_potentials();
        Ok(Plan {
            entries,
            value,
            phi: potentials[..self.m].to_vec(),
            psi: potentials[self.m..].to_vec(),
        })
    }

    /// Finite dual potentials. The basic real arcs form a forest whose
    /// components each carry a uniform symbolic part, so inside a component
    /// the finite parts are already consistent; across components the
    /// symbolic part may dominate the optimality test, leaving the finite
    /// parts unconstrained. A shortest-path correction over the component
    /// graph (edge weight = minimum finite slack) restores dual feasibility
    /// everywhere without touching the support equalities.
    fn finite_potentials(&self) -> Vec<S> {
        let mn = self.m * self.n;
        let root = self.m + self.n;
        // Components of the basic-real-arc forest.
        let mut comp = vec![usize::MAX; root];
        let mut n_comp = 0;
        for start in 0..root {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = n_comp;
            n_comp += 1;
            let mut stack = vec![start];
            comp[start] = id;
            while let Some(u) = stack.pop() {
                // Neighbors over basic real arcs: parent and children.
                let mut neigh = Vec::new();
                if self.parent[u] != ROOT_ARC_NONE && self.parent[u] != root
                    && self.parent_arc[u] < mn {
                        neigh.push(self.parent[u]);
                    }
                for &c in &self.children[u] {
                    if self.parent_arc[c] < mn {
                        neigh.push(c);
                    }
                }
                for v in neigh {
                    if v < root && comp[v] == usize::MAX {
                        comp[v] = id;
                        stack.push(v);
                    }
                }
            }
        }
        let mut vals: Vec<S> = self.pot[..root].iter().map(|p| p.1.clone()).collect();
        if n_comp > 1 {
            // Minimum finite slack between components over unmasked arcs.
            let mut w: Vec<Option<S>> = vec![None; n_comp * n_comp];
            for i in 0..self.m {
                for j in 0..self.n {
                    let (ca, cb) = (comp[i], comp[self.m + j]);
                    if ca == cb {
                        continue;
                    }
                    if let Some(c) = self.cost.get(i, j) {
                        let slack = c.clone() - (vals[self.m + j].clone() - vals[i].clone());
                        let slot = &mut w[ca * n_comp + cb];
                        match slot {
                            Some(s) if *s <= slack => {}
                            _ => *slot = Some(slack),
                        }
                    }
                }
            }
            // Bellman-Ford relaxation of component offsets.
            let mut delta: Vec<S> = vec![S::zero(); n_comp];
            for _round in 0..n_comp {
                let mut changed = false;
                for a in 0..n_comp {
                    for b in 0..n_comp {
                        if let Some(s) = &w[a * n_comp + b] {
                            let bound = delta[a].clone() + s.clone();
                            if delta[b] > bound.clone() + S::tol() {
                                delta[b] = bound;
                                changed = true;
                            }
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            for u in 0..root {
                vals[u] = vals[u].clone() + delta[comp[u]].clone();
            }
        }
        vals
    }
}
