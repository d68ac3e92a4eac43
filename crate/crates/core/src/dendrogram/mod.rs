// Copyright 2026 The sgfusion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Hierarchical random graph over zones.
//!
//! A [`Dendrogram`] is a rooted binary tree whose leaves are the zones of a
//! [`ZoneDistanceGraph`]. Each internal node `r` caches the mean distance
//! between the zones of its left and right subtrees,
//!
//! ```text
//! d_r = sum_{z in L_r, z' in R_r} d(z, z') / (|L_r| * |R_r|)
//! ```
//!
//! and the loss of the tree is the sum of `d_r` over all internal nodes.
//! [`mcmc`] searches tree space with nearest-neighbour interchanges.

mod format;
pub(crate) use format::check_zone_id;
pub mod mcmc;

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::label_stats::ZoneDistanceGraph;

pub use mcmc::{accept_prob, optimize, McmcConfig, McmcOutcome, MetropolisChain};

/// Index into a dendrogram's node arena. Ids below the zone count are leaves
/// (leaf `i` is zone `i` of the graph); the rest are internal nodes.
pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Transition {
    /// `(L, R)` under sibling `S` becomes `((L, S), R)`.
    Alpha,
    /// `(L, R)` under sibling `S` becomes `((R, S), L)`.
    Beta,
}

impl Transition {
    pub const ALL: [Transition; 2] = [Transition::Alpha, Transition::Beta];
}

#[derive(Clone, Debug, PartialEq)]
struct Node {
    parent: Option<NodeId>,
    children: Option<(NodeId, NodeId)>,
    /// Sorted zone indices under this node.
    leaves: Vec<usize>,
    score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dendrogram {
    zone_ids: Vec<String>,
    nodes: Vec<Node>,
    root: NodeId,
}

/// Mean cross distance between two disjoint leaf sets.
fn mean_cross_distance(graph: &ZoneDistanceGraph, left: &[usize], right: &[usize]) -> f64 {
    let mut sum = 0.0;
    for &a in left {
        for &b in right {
            sum += graph.distance(a, b);
        }
    }
    sum / (left.len() * right.len()) as f64
}

fn merge_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] < b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

impl Dendrogram {
    /// A uniformly random leaf-labelled rooted binary tree over the graph's
    /// zones, built by inserting each zone onto a uniformly chosen edge of
    /// the tree so far (including the edge above the root).
    pub fn random<R: Rng + ?Sized>(graph: &ZoneDistanceGraph, rng: &mut R) -> Result<Self> {
        let n = graph.len();
        if n < 2 {
            return Err(Error::Domain(format!("a dendrogram needs at least 2 zones, got {n}")));
        }
        let mut parent: Vec<Option<NodeId>> = vec![None; 2 * n - 1];
        let mut children: Vec<Option<(NodeId, NodeId)>> = vec![None; 2 * n - 1];
        // First internal node joins leaves 0 and 1.
        let first = n;
        children[first] = Some((0, 1));
        parent[0] = Some(first);
        parent[1] = Some(first);
        let mut root = first;
        let mut existing: Vec<NodeId> = vec![0, 1, first];
        for leaf in 2..n {
            let target = existing[rng.random_range(0..existing.len())];
            let joint = n + leaf - 1;
            let pair = if rng.random_bool(0.5) {
                (target, leaf)
            } else {
                (leaf, target)
            };
            children[joint] = Some(pair);
            match parent[target] {
                Some(p) => {
                    let (l, r) = children[p].expect("parent is internal");
                    children[p] = Some(if l == target { (joint, r) } else { (l, joint) });
                    parent[joint] = Some(p);
                }
                None => root = joint,
            }
            parent[target] = Some(joint);
            parent[leaf] = Some(joint);
            existing.push(leaf);
            existing.push(joint);
        }
        Self::assemble(graph.zone_ids().to_vec(), parent, children, root, graph)
    }

    /// Builds the arena from raw links, then fills leaf sets and scores.
    fn assemble(
        zone_ids: Vec<String>,
        parent: Vec<Option<NodeId>>,
        children: Vec<Option<(NodeId, NodeId)>>,
        root: NodeId,
        graph: &ZoneDistanceGraph,
    ) -> Result<Self> {
        let n = zone_ids.len();
        let mut nodes: Vec<Node> = parent
            .into_iter()
            .zip(children)
            .enumerate()
            .map(|(id, (parent, children))| Node {
                parent,
                children,
                leaves: if id < n { vec![id] } else { Vec::new() },
                score: 0.0,
            })
            .collect();
        for id in post_order(&nodes, root) {
            if let Some((l, r)) = nodes[id].children {
                let leaves = merge_sorted(&nodes[l].leaves, &nodes[r].leaves);
                nodes[id].score = mean_cross_distance(graph, &nodes[l].leaves, &nodes[r].leaves);
                nodes[id].leaves = leaves;
            }
        }
        let t = Dendrogram { zone_ids, nodes, root };
        t.validate(Some(graph))?;
        Ok(t)
    }

    pub fn zone_count(&self) -> usize {
        self.zone_ids.len()
    }

    pub fn zone_ids(&self) -> &[String] {
        &self.zone_ids
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        id < self.zone_ids.len()
    }

    pub fn children(&self, id: NodeId) -> Option<(NodeId, NodeId)> {
        self.nodes[id].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    /// Sorted zone indices in the subtree rooted at `id`.
    pub fn leaves(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].leaves
    }

    /// Cached `d_r` of an internal node.
    pub fn score(&self, id: NodeId) -> f64 {
        self.nodes[id].score
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.zone_ids.len()..self.nodes.len()
    }

    /// Internal nodes that have a parent, i.e. the nodes a transition can act on.
    pub fn eligible_nodes(&self) -> Vec<NodeId> {
        self.internal_nodes().filter(|&r| r != self.root).collect()
    }

    /// Internal ancestors of a leaf, from its parent up to the root.
    pub fn ancestors(&self, leaf: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = self.nodes[leaf].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p].parent;
        }
        out
    }

    pub fn loss(&self) -> f64 {
        self.internal_nodes().map(|r| self.nodes[r].score).sum()
    }

    fn sibling(&self, id: NodeId) -> Option<NodeId> {
        let p = self.nodes[id].parent?;
        let (l, r) = self.nodes[p].children?;
        Some(if l == id { r } else { l })
    }

    fn replace_child(&mut self, parent: NodeId, old: NodeId, new: NodeId) {
        let (l, r) = self.nodes[parent].children.expect("internal node");
        self.nodes[parent].children = Some(if l == old { (new, r) } else { (l, new) });
        self.nodes[new].parent = Some(parent);
    }

    /// Applies a transition in place and returns the two internal nodes whose
    /// scores were recomputed. Applying the same transition to the same node
    /// again restores the previous tree exactly.
    pub(crate) fn apply(&mut self, r: NodeId, kind: Transition, graph: &ZoneDistanceGraph) -> Result<[NodeId; 2]> {
        let (w, sib) = match (self.nodes.get(r).and_then(|n| n.parent), self.sibling(r)) {
            (Some(w), Some(s)) if !self.is_leaf(r) => (w, s),
            _ => return Err(Error::Domain(format!("node {r} is not a non-root internal node"))),
        };
        let (left, right) = self.nodes[r].children.expect("internal node");
        let moved = match kind {
            Transition::Alpha => right,
            Transition::Beta => left,
        };
        // Swap `moved` (a child of r) with the sibling subtree (a child of w).
        self.replace_child(r, moved, sib);
        self.replace_child(w, sib, moved);
        let (l, rr) = self.nodes[r].children.expect("internal node");
        self.nodes[r].leaves = merge_sorted(&self.nodes[l].leaves, &self.nodes[rr].leaves);
        for id in [r, w] {
            let (l, rr) = self.nodes[id].children.expect("internal node");
            self.nodes[id].score = mean_cross_distance(graph, &self.nodes[l].leaves, &self.nodes[rr].leaves);
        }
        Ok([r, w])
    }

    /// The tree obtained by applying `kind` at `r`; `self` is left untouched.
    pub fn candidate(&self, r: NodeId, kind: Transition, graph: &ZoneDistanceGraph) -> Result<Dendrogram> {
        let mut t = self.clone();
        t.apply(r, kind, graph)?;
        Ok(t)
    }

    /// Picks a non-root internal node uniformly and one of the two
    /// transitions with equal probability.
    pub fn propose<R: Rng + ?Sized>(&self, graph: &ZoneDistanceGraph, rng: &mut R) -> Result<(Dendrogram, NodeId)> {
        let eligible = self.eligible_nodes();
        if eligible.is_empty() {
            return Err(Error::Domain(format!(
                "no transitions exist with {} zones",
                self.zone_count()
            )));
        }
        let r = eligible[rng.random_range(0..eligible.len())];
        let kind = if rng.random_bool(0.5) {
            Transition::Alpha
        } else {
            Transition::Beta
        };
        Ok((self.candidate(r, kind, graph)?, r))
    }

    /// Recomputes every cached score against `graph`.
    pub fn rescore(&mut self, graph: &ZoneDistanceGraph) {
        for r in self.zone_ids.len()..self.nodes.len() {
            let (l, rr) = self.nodes[r].children.expect("internal node");
            self.nodes[r].score = mean_cross_distance(graph, &self.nodes[l].leaves, &self.nodes[rr].leaves);
        }
    }

    /// Full structural check. With a graph, also checks every cached score
    /// against a fresh computation to 1e-10.
    pub fn validate(&self, graph: Option<&ZoneDistanceGraph>) -> Result<()> {
        let n = self.zone_ids.len();
        let bad = |m: String| Err(Error::Domain(format!("invalid dendrogram: {m}")));
        if n < 2 || self.nodes.len() != 2 * n - 1 {
            return bad(format!("{} nodes for {n} leaves", self.nodes.len()));
        }
        if self.root < n || self.nodes[self.root].parent.is_some() {
            return bad("root must be a parentless internal node".into());
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if (id < n) != node.children.is_none() {
                return bad(format!("node {id} has the wrong arity"));
            }
            if id != self.root && node.parent.is_none() {
                return bad(format!("node {id} is detached"));
            }
            if let Some((l, r)) = node.children {
                if l == r || l >= self.nodes.len() || r >= self.nodes.len() {
                    return bad(format!("node {id} has bad children"));
                }
                if self.nodes[l].parent != Some(id) || self.nodes[r].parent != Some(id) {
                    return bad(format!("parent links around node {id} disagree"));
                }
                let expected = merge_sorted(&self.nodes[l].leaves, &self.nodes[r].leaves);
                if expected != node.leaves {
                    return bad(format!("stale leaf set at node {id}"));
                }
                if !(node.score.is_finite() && node.score >= 0.0) {
                    return bad(format!("score {} at node {id}", node.score));
                }
                if let Some(g) = graph {
                    let fresh = mean_cross_distance(g, &self.nodes[l].leaves, &self.nodes[r].leaves);
                    if (fresh - node.score).abs() > 1e-10 {
                        return bad(format!("stale score at node {id}: {} vs {fresh}", node.score));
                    }
                }
            }
        }
        // Reachability from the root covers every node exactly once.
        let order = post_order(&self.nodes, self.root);
        let mut seen = vec![false; self.nodes.len()];
        for id in &order {
            if std::mem::replace(&mut seen[*id], true) {
                return bad("cycle".into());
            }
        }
        if order.len() != self.nodes.len() || self.nodes[self.root].leaves.len() != n {
            return bad("tree does not span all zones".into());
        }
        if let Some(g) = graph {
            if g.zone_ids() != self.zone_ids.as_slice() {
                return bad("zone ids differ from the graph".into());
            }
        }
        Ok(())
    }

    /// Order-independent shape key: children written smallest-leaf first.
    pub fn canonical(&self) -> String {
        fn walk(t: &Dendrogram, id: NodeId, out: &mut String) {
            match t.nodes[id].children {
                None => out.push_str(&id.to_string()),
                Some((l, r)) => {
                    let (a, b) = if t.nodes[l].leaves[0] < t.nodes[r].leaves[0] {
                        (l, r)
                    } else {
                        (r, l)
                    };
                    out.push('(');
                    walk(t, a, out);
                    out.push(',');
                    walk(t, b, out);
                    out.push(')');
                }
            }
        }
        let mut s = String::new();
        walk(self, self.root, &mut s);
        s
    }
}

impl fmt::Display for Dendrogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn post_order(nodes: &[Node], root: NodeId) -> Vec<NodeId> {
    let mut out = Vec::with_capacity(nodes.len());
    let mut stack = vec![(root, false)];
    while let Some((id, expanded)) = stack.pop() {
        if out.len() > nodes.len() {
            break;
        }
        match nodes[id].children {
            Some((l, r)) if !expanded => {
                stack.push((id, true));
                stack.push((r, false));
                stack.push((l, false));
            }
            _ => out.push(id),
        }
    }
    out
}

/// `d_r` computed from scratch for internal node `r`.
pub fn score_node(t: &Dendrogram, r: NodeId, graph: &ZoneDistanceGraph) -> f64 {
    let (l, rr) = t.children(r).expect("score_node called on a leaf");
    mean_cross_distance(graph, t.leaves(l), t.leaves(rr))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::label_stats::Metric;
    use crate::rng::SimRng;
    use rand::SeedableRng;
    use std::collections::{BTreeMap, BTreeSet};

    pub(crate) fn graph_from(d: Vec<Vec<f64>>) -> ZoneDistanceGraph {
        let ids = (0..d.len()).map(|i| format!("z{i}")).collect();
        ZoneDistanceGraph::from_matrix(ids, d, Metric::Euclidean).unwrap()
    }

    pub(crate) fn random_graph(n: usize, seed: u64) -> ZoneDistanceGraph {
        let mut rng = SimRng::seed_from_u64(seed);
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.random_range(0.0..2.0);
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        graph_from(d)
    }

    /// Every leaf-labelled rooted binary tree over `n` zones, as nested
    /// pairs, built by inserting leaves onto every edge.
    #[derive(Clone, Debug)]
    pub(crate) enum Shape {
        Leaf(usize),
        Join(Box<Shape>, Box<Shape>),
    }

    fn insert_everywhere(s: &Shape, leaf: usize) -> Vec<Shape> {
        let mut out = vec![Shape::Join(Box::new(s.clone()), Box::new(Shape::Leaf(leaf)))];
        if let Shape::Join(a, b) = s {
            for a2 in insert_everywhere(a, leaf) {
                out.push(Shape::Join(Box::new(a2), b.clone()));
            }
            for b2 in insert_everywhere(b, leaf) {
                out.push(Shape::Join(a.clone(), Box::new(b2)));
            }
        }
        out
    }

    pub(crate) fn all_shapes(n: usize) -> Vec<Shape> {
        let mut shapes = vec![Shape::Join(Box::new(Shape::Leaf(0)), Box::new(Shape::Leaf(1)))];
        for leaf in 2..n {
            shapes = shapes.iter().flat_map(|s| insert_everywhere(s, leaf)).collect();
        }
        shapes
    }

    pub(crate) fn build_shape(s: &Shape, graph: &ZoneDistanceGraph) -> Dendrogram {
        let n = graph.len();
        let mut parent = vec![None; 2 * n - 1];
        let mut children = vec![None; 2 * n - 1];
        let mut next = n;
        fn go(
            s: &Shape,
            parent: &mut [Option<NodeId>],
            children: &mut [Option<(NodeId, NodeId)>],
            next: &mut usize,
        ) -> NodeId {
            match s {
                Shape::Leaf(i) => *i,
                Shape::Join(a, b) => {
                    let id = *next;
                    *next += 1;
                    let l = go(a, parent, children, next);
                    let r = go(b, parent, children, next);
                    parent[l] = Some(id);
                    parent[r] = Some(id);
                    children[id] = Some((l, r));
                    id
                }
            }
        }
        let root = go(s, &mut parent, &mut children, &mut next);
        Dendrogram::assemble(graph.zone_ids().to_vec(), parent, children, root, graph).unwrap()
    }

    /// Loss straight from the nested shape, without the arena.
    fn shape_loss(s: &Shape, g: &ZoneDistanceGraph) -> (Vec<usize>, f64) {
        match s {
            Shape::Leaf(i) => (vec![*i], 0.0),
            Shape::Join(a, b) => {
                let (la, xa) = shape_loss(a, g);
                let (lb, xb) = shape_loss(b, g);
                let mut sum = 0.0;
                for &i in &la {
                    for &j in &lb {
                        sum += g.distance(i, j);
                    }
                }
                let d = sum / (la.len() * lb.len()) as f64;
                (la.into_iter().chain(lb).collect(), xa + xb + d)
            }
        }
    }

    fn double_factorial(k: usize) -> usize {
        (1..=k).rev().step_by(2).product()
    }

    #[test]
    fn shape_enumeration_counts() {
        for n in 2..=6 {
            let g = random_graph(n, n as u64);
            let keys: BTreeSet<String> = all_shapes(n).iter().map(|s| build_shape(s, &g).canonical()).collect();
            assert_eq!(keys.len(), double_factorial(2 * n - 3));
        }
    }

    #[test]
    fn two_zones_have_one_shape() {
        let g = graph_from(vec![vec![0.0, 0.7], vec![0.7, 0.0]]);
        let mut rng = SimRng::seed_from_u64(0);
        let t = Dendrogram::random(&g, &mut rng).unwrap();
        assert_eq!(t.canonical(), "(0,1)");
        assert_eq!(t.loss(), 0.7);
        assert!(t.eligible_nodes().is_empty());
        assert!(t.propose(&g, &mut rng).is_err());
        let one = graph_from(vec![vec![0.0]]);
        assert!(matches!(Dendrogram::random(&one, &mut rng), Err(Error::Domain(_))));
    }

    #[test]
    fn random_three_is_uniform() {
        let g = random_graph(3, 1);
        let mut rng = SimRng::seed_from_u64(2);
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        let draws = 30_000;
        for _ in 0..draws {
            *freq
                .entry(Dendrogram::random(&g, &mut rng).unwrap().canonical())
                .or_default() += 1;
        }
        assert_eq!(freq.len(), 3);
        for c in freq.values() {
            assert!((*c as f64 / draws as f64 - 1.0 / 3.0).abs() < 0.02);
        }
    }

    #[test]
    fn random_four_reaches_all_fifteen_shapes_uniformly() {
        let g = random_graph(4, 1);
        let mut rng = SimRng::seed_from_u64(3);
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        let draws = 60_000;
        for _ in 0..draws {
            let t = Dendrogram::random(&g, &mut rng).unwrap();
            t.validate(Some(&g)).unwrap();
            *freq.entry(t.canonical()).or_default() += 1;
        }
        assert_eq!(freq.len(), 15);
        for c in freq.values() {
            assert!((*c as f64 / draws as f64 - 1.0 / 15.0).abs() < 0.01);
        }
    }

    #[test]
    fn score_examples() {
        let g = graph_from(vec![vec![0.0, 0.5, 1.0], vec![0.5, 0.0, 3.0], vec![1.0, 3.0, 0.0]]);
        let shape = Shape::Join(
            Box::new(Shape::Join(Box::new(Shape::Leaf(0)), Box::new(Shape::Leaf(1)))),
            Box::new(Shape::Leaf(2)),
        );
        let t = build_shape(&shape, &g);
        let (inner, _) = t.children(t.root()).unwrap();
        assert_eq!(score_node(&t, inner, &g), 0.5);
        assert_eq!(score_node(&t, t.root(), &g), 2.0);
        assert_eq!(t.loss(), 2.5);
    }

    #[test]
    fn score_matches_brute_force_on_eight_leaves() {
        let g = random_graph(8, 9);
        let mut rng = SimRng::seed_from_u64(4);
        let t = Dendrogram::random(&g, &mut rng).unwrap();
        for r in t.internal_nodes() {
            // Collect subtree leaves by walking children, independent of the cache.
            fn collect(t: &Dendrogram, id: NodeId, out: &mut Vec<usize>) {
                match t.children(id) {
                    None => out.push(id),
                    Some((a, b)) => {
                        collect(t, a, out);
                        collect(t, b, out);
                    }
                }
            }
            let (a, b) = t.children(r).unwrap();
            let (mut la, mut lb) = (Vec::new(), Vec::new());
            collect(&t, a, &mut la);
            collect(&t, b, &mut lb);
            let mut sum = 0.0;
            for &i in &la {
                for &j in &lb {
                    sum += g.distance(i, j);
                }
            }
            let oracle = sum / (la.len() * lb.len()) as f64;
            assert!((t.score(r) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_matches_enumeration_for_all_four_leaf_shapes() {
        let g = random_graph(4, 5);
        for s in all_shapes(4) {
            let t = build_shape(&s, &g);
            let (_, oracle) = shape_loss(&s, &g);
            assert!((t.loss() - oracle).abs() < 1e-12);
        }
        let zero = graph_from(vec![vec![0.0; 4]; 4]);
        for s in all_shapes(4) {
            assert_eq!(build_shape(&s, &zero).loss(), 0.0);
        }
    }

    #[test]
    fn three_leaf_proposals_form_a_triangle() {
        let g = random_graph(3, 6);
        for s in all_shapes(3) {
            let t = build_shape(&s, &g);
            let r = t.eligible_nodes()[0];
            let mut targets: BTreeSet<String> = BTreeSet::new();
            for kind in Transition::ALL {
                targets.insert(t.candidate(r, kind, &g).unwrap().canonical());
            }
            assert_eq!(targets.len(), 2);
            assert!(!targets.contains(&t.canonical()));
        }
    }

    #[test]
    fn incremental_rescore_matches_full_recompute() {
        let g = random_graph(8, 7);
        let mut rng = SimRng::seed_from_u64(8);
        let mut t = Dendrogram::random(&g, &mut rng).unwrap();
        for _ in 0..100 {
            let before = t.clone();
            let (cand, r) = t.propose(&g, &mut rng).unwrap();
            assert_eq!(t, before, "propose must not modify its input");
            let mut full = cand.clone();
            full.rescore(&g);
            for id in cand.internal_nodes() {
                assert_eq!(cand.score(id), full.score(id));
            }
            cand.validate(Some(&g)).unwrap();
            // Only r and its parent change.
            let changed: Vec<NodeId> = cand
                .internal_nodes()
                .filter(|&id| cand.score(id) != before.score(id) || cand.leaves(id) != before.leaves(id))
                .collect();
            assert!(changed.len() <= 2);
            assert!(changed.iter().all(|&id| id == r || Some(id) == before.parent(r)));
            t = cand;
        }
    }

    #[test]
    fn transitions_are_involutions() {
        let g = random_graph(7, 10);
        let mut rng = SimRng::seed_from_u64(11);
        let t = Dendrogram::random(&g, &mut rng).unwrap();
        for r in t.eligible_nodes() {
            for kind in Transition::ALL {
                let mut u = t.clone();
                u.apply(r, kind, &g).unwrap();
                u.apply(r, kind, &g).unwrap();
                assert_eq!(u, t);
            }
        }
        let mut u = t.clone();
        assert!(u.apply(t.root(), Transition::Alpha, &g).is_err());
        assert!(u.apply(0, Transition::Alpha, &g).is_err());
    }

    #[test]
    fn proposal_probabilities_are_symmetric_on_four_leaves() {
        let g = random_graph(4, 12);
        let shapes: Vec<Dendrogram> = all_shapes(4).iter().map(|s| build_shape(s, &g)).collect();
        let mut prob: BTreeMap<(String, String), f64> = BTreeMap::new();
        for t in &shapes {
            let eligible = t.eligible_nodes();
            for &r in &eligible {
                for kind in Transition::ALL {
                    let c = t.candidate(r, kind, &g).unwrap();
                    *prob.entry((t.canonical(), c.canonical())).or_default() += 0.5 / eligible.len() as f64;
                }
            }
        }
        for ((a, b), p) in &prob {
            assert_eq!(Some(p), prob.get(&(b.clone(), a.clone())), "{a} -> {b}");
        }
    }
}
