//! Rooted Gaussian forests with on-demand re-rooting.
//!
//! Each tree stores a Gaussian marginal at its root and an affine
//! conditional on every other node, so the joint density of a tree is the
//! root marginal times the product of the edge conditionals. Reading the
//! marginal of a node re-roots its tree at that node by reversing the
//! edges on the path from the old root, leaving every other edge intact.
//!
//! Observing or sampling a node removes it from its tree: once the tree
//! is rooted there, each child becomes the root of its own tree with the
//! edge conditional evaluated at the known value.
//!
//! # Liveness
//!
//! A node is *held* while client code keeps its handle. Handles are plain
//! copyable identifiers, so the client states what it still needs through
//! [`GaussForest::release`] or [`GaussForest::retain_only`]. Nodes that are
//! no longer held are marginalized out whenever this is exact and local:
//!
//! * an unheld leaf is dropped together with its edge;
//! * an unheld root with no children is dropped;
//! * an unheld root with one child passes its marginal to that child.
//!
//! Unheld nodes that sit on a path between held nodes are kept. For a
//! first-order Markov filter this bounds the number of stored nodes
//! independently of the step index.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::gauss::{matrix_to_rows, push_forward, reverse, AffineEdge, Gaussian};

/// Identifier of a forest node. Stale handles (observed, sampled or
/// released nodes) are rejected by every operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeHandle {
    index: u32,
    generation: u32,
}

impl NodeHandle {
    /// Slot index; unique among live nodes only.
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone)]
enum Link {
    Root(Gaussian),
    Child { parent: usize, edge: AffineEdge },
}

#[derive(Debug, Clone)]
struct Node {
    dim: usize,
    link: Link,
    children: Vec<usize>,
    held: bool,
}

#[derive(Debug, Clone)]
struct Slot {
    generation: u32,
    node: Option<Node>,
}

/// A forest of rooted Gaussian trees.
#[derive(Debug, Clone, Default)]
pub struct GaussForest {
    slots: Vec<Slot>,
    free: Vec<usize>,
    live: usize,
}

impl GaussForest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes currently stored, held or not.
    pub fn live_node_count(&self) -> usize {
        self.live
    }

    /// Whether `h` refers to a node the client may still use.
    pub fn is_live(&self, h: NodeHandle) -> bool {
        self.resolve(h).is_ok()
    }

    pub fn dim(&self, h: NodeHandle) -> Result<usize> {
        let idx = self.resolve(h)?;
        Ok(self.node(idx).dim)
    }

    pub fn new_root(&mut self, prior: Gaussian) -> NodeHandle {
        let dim = prior.dim();
        self.insert(Node {
            dim,
            link: Link::Root(prior),
            children: Vec::new(),
            held: true,
        })
    }

    pub fn add_child(&mut self, parent: NodeHandle, edge: AffineEdge) -> Result<NodeHandle> {
        let p = self.resolve(parent)?;
        check_dim("add_child parent", self.node(p).dim, edge.parent_dim())?;
        let child = self.insert(Node {
            dim: edge.child_dim(),
            link: Link::Child { parent: p, edge },
            children: Vec::new(),
            held: true,
        });
        self.node_mut(p).children.push(child.index());
        Ok(child)
    }

    /// Re-roots the tree containing `v` at `v`.
    pub fn retarget(&mut self, v: NodeHandle) -> Result<()> {
        let idx = self.resolve(v)?;
        let path = self.path_to_root(idx);
        self.reroot_along(&path)?;
        // Former ancestors now hang below `v`; drop the unheld ones that
        // became leaves.
        self.reclaim(path[1..].iter().rev().copied());
        Ok(())
    }

    /// Exact marginal of `v`. Re-roots the tree at `v`.
    pub fn marginal(&mut self, v: NodeHandle) -> Result<Gaussian> {
        self.retarget(v)?;
        match &self.node(v.index()).link {
            Link::Root(g) => Ok(g.clone()),
            Link::Child { .. } => unreachable!("retarget leaves the node at the root"),
        }
    }

    /// Conditions on `x_v = value`, returning the predictive log-density of
    /// the observation. The node is removed and its handle invalidated.
    pub fn observe(&mut self, v: NodeHandle, value: &DVector<f64>) -> Result<f64> {
        let marginal = self.marginal(v)?;
        check_dim("observe value", marginal.dim(), value.len())?;
        let loglik = marginal.logpdf(value)?;
        self.split_at(v.index(), value)?;
        Ok(loglik)
    }

    /// Draws `x_v` from its marginal and conditions the forest on the draw.
    /// No weight is returned: the draw comes from the exact marginal.
    pub fn sample_node<R: Rng + ?Sized>(
        &mut self,
        v: NodeHandle,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        let marginal = self.marginal(v)?;
        let value = marginal.draw(rng);
        self.split_at(v.index(), &value)?;
        Ok(value)
    }

    /// `Cov(x_v, x_u)`, a `dim(v) × dim(u)` matrix. Re-roots at `u`.
    pub fn joint_moments(&mut self, u: NodeHandle, v: NodeHandle) -> Result<DMatrix<f64>> {
        let ui = self.resolve(u)?;
        let vi = self.resolve(v)?;
        if self.root_of(ui) != self.root_of(vi) {
            return Err(Error::DifferentTrees(u, v));
        }
        let sigma_u = self.marginal(u)?.cov().clone();
        let vi = self.resolve(v)?;
        let mut gain = DMatrix::identity(self.node(vi).dim, self.node(vi).dim);
        let mut cur = vi;
        while let Link::Child { parent, edge } = &self.node(cur).link {
            gain = &gain * edge.a();
            cur = *parent;
        }
        debug_assert_eq!(cur, ui);
        Ok(gain * sigma_u)
    }

    /// Marks `h` as no longer needed and reclaims whatever becomes
    /// unreachable. The handle is dead afterwards.
    pub fn release(&mut self, h: NodeHandle) -> Result<()> {
        let idx = self.resolve(h)?;
        self.node_mut(idx).held = false;
        self.reclaim(std::iter::once(idx));
        Ok(())
    }

    /// Keeps exactly the given handles held; every other node is released.
    /// Stale handles in `keep` are ignored.
    pub fn retain_only(&mut self, keep: &[NodeHandle]) {
        let mut wanted = vec![false; self.slots.len()];
        for &h in keep {
            if let Ok(idx) = self.resolve(h) {
                wanted[idx] = true;
            }
        }
        let mut released = Vec::new();
        for (idx, slot) in self.slots.iter_mut().enumerate() {
            if let Some(node) = slot.node.as_mut() {
                if node.held && !wanted[idx] {
                    node.held = false;
                    released.push(idx);
                }
            }
        }
        self.reclaim(released);
    }

    /// Handles of all held nodes, in slot order.
    pub fn held_handles(&self) -> Vec<NodeHandle> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.node.as_ref().is_some_and(|n| n.held))
            .map(|(i, s)| NodeHandle {
                index: i as u32,
                generation: s.generation,
            })
            .collect()
    }

    /// Structured snapshot of the forest for debugging and golden tests.
    pub fn dump(&self) -> ForestDump {
        let nodes = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.node.as_ref().map(|n| (i, s.generation, n)))
            .map(|(i, generation, n)| {
                let (parent, marginal, edge) = match &n.link {
                    Link::Root(g) => (None, Some(g.clone()), None),
                    Link::Child { parent, edge } => (
                        Some(*parent),
                        None,
                        Some(EdgeDump {
                            a: matrix_to_rows(edge.a()),
                            b: edge.b().iter().copied().collect(),
                            noise_cov: matrix_to_rows(edge.noise_cov()),
                        }),
                    ),
                };
                NodeDump {
                    id: i,
                    generation,
                    dim: n.dim,
                    held: n.held,
                    parent,
                    children: n.children.clone(),
                    marginal,
                    edge,
                }
            })
            .collect();
        ForestDump { nodes }
    }

    fn insert(&mut self, node: Node) -> NodeHandle {
        self.live += 1;
        match self.free.pop() {
            Some(idx) => {
                let slot = &mut self.slots[idx];
                slot.node = Some(node);
                NodeHandle {
                    index: idx as u32,
                    generation: slot.generation,
                }
            }
            None => {
                self.slots.push(Slot {
                    generation: 0,
                    node: Some(node),
                });
                NodeHandle {
                    index: (self.slots.len() - 1) as u32,
                    generation: 0,
                }
            }
        }
    }

    fn remove(&mut self, idx: usize) -> Node {
        let slot = &mut self.slots[idx];
        let node = slot.node.take().expect("removing an empty slot");
        slot.generation = slot.generation.wrapping_add(1);
        self.free.push(idx);
        self.live -= 1;
        node
    }

    fn resolve(&self, h: NodeHandle) -> Result<usize> {
        match self.slots.get(h.index()) {
            Some(slot) if slot.generation == h.generation => match &slot.node {
                Some(node) if node.held => Ok(h.index()),
                _ => Err(Error::DeadHandle(h)),
            },
            _ => Err(Error::DeadHandle(h)),
        }
    }

    fn node(&self, idx: usize) -> &Node {
        self.slots[idx].node.as_ref().expect("dangling node index")
    }

    fn node_mut(&mut self, idx: usize) -> &mut Node {
        self.slots[idx].node.as_mut().expect("dangling node index")
    }

    fn exists(&self, idx: usize) -> bool {
        self.slots.get(idx).is_some_and(|s| s.node.is_some())
    }

    /// `[idx, parent(idx), ..., root]`.
    fn path_to_root(&self, idx: usize) -> Vec<usize> {
        let mut path = vec![idx];
        let mut cur = idx;
        while let Link::Child { parent, .. } = self.node(cur).link {
            path.push(parent);
            cur = parent;
        }
        path
    }

    fn root_of(&self, idx: usize) -> usize {
        *self.path_to_root(idx).last().unwrap()
    }

    /// Reverses the edges of `path` (ordered target first, root last).
    fn reroot_along(&mut self, path: &[usize]) -> Result<()> {
        for k in (1..path.len()).rev() {
            let (old_root, next) = (path[k], path[k - 1]);
            let prior = match &self.node(old_root).link {
                Link::Root(g) => g,
                Link::Child { .. } => unreachable!("path is rooted"),
            };
            let edge = match &self.node(next).link {
                Link::Child { edge, .. } => edge,
                Link::Root(_) => unreachable!("path nodes below the root have parents"),
            };
            let (marginal, reversed) = reverse(prior, edge)?;

            let old = self.node_mut(old_root);
            old.link = Link::Child {
                parent: next,
                edge: reversed,
            };
            let pos = old
                .children
                .iter()
                .position(|&c| c == next)
                .expect("path edge");
            old.children.remove(pos);
            let new = self.node_mut(next);
            new.link = Link::Root(marginal);
            new.children.push(old_root);
        }
        Ok(())
    }

    /// Removes the root `idx`, turning each child into a root with its
    /// edge conditional evaluated at `value`.
    fn split_at(&mut self, idx: usize, value: &DVector<f64>) -> Result<()> {
        // Validate every conditional before mutating anything.
        let priors = self
            .node(idx)
            .children
            .iter()
            .map(|&c| match &self.node(c).link {
                Link::Child { edge, .. } => edge.condition(value).map(|g| (c, g)),
                Link::Root(_) => unreachable!("children have parent edges"),
            })
            .collect::<Result<Vec<_>>>()?;
        self.remove(idx);
        let children: Vec<usize> = priors.iter().map(|(c, _)| *c).collect();
        for (c, prior) in priors {
            self.node_mut(c).link = Link::Root(prior);
        }
        self.reclaim(children);
        Ok(())
    }

    /// Marginalizes out unheld nodes reachable from `start` whenever that
    /// is exact: unheld leaves, isolated roots, and roots of degree one.
    fn reclaim<I: IntoIterator<Item = usize>>(&mut self, start: I) {
        let mut work: Vec<usize> = start.into_iter().collect();
        while let Some(idx) = work.pop() {
            if !self.exists(idx) || self.node(idx).held {
                continue;
            }
            let node = self.node(idx);
            match (&node.link, node.children.len()) {
                (Link::Child { parent, .. }, 0) => {
                    let parent = *parent;
                    self.remove(idx);
                    let siblings = &mut self.node_mut(parent).children;
                    let pos = siblings.iter().position(|&c| c == idx).expect("child link");
                    siblings.remove(pos);
                    work.push(parent);
                }
                (Link::Root(_), 0) => {
                    self.remove(idx);
                }
                (Link::Root(prior), 1) => {
                    let child = node.children[0];
                    let pushed = match &self.node(child).link {
                        Link::Child { edge, .. } => push_forward(prior, edge),
                        Link::Root(_) => unreachable!("children have parent edges"),
                    };
                    // A failed push leaves the node in place; it is still exact.
                    if let Ok(marginal) = pushed {
                        self.remove(idx);
                        self.node_mut(child).link = Link::Root(marginal);
                        work.push(child);
                    }
                }
                _ => {}
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeDump {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub noise_cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeDump {
    pub id: usize,
    pub generation: u32,
    pub dim: usize,
    pub held: bool,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub marginal: Option<Gaussian>,
    pub edge: Option<EdgeDump>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ForestDump {
    pub nodes: Vec<NodeDump>,
}
