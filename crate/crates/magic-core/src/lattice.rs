//! Lattice geometry: chains and square tori for spin models, link layout
//! for the gauge theory, and the site orderings used by the two backends.
//!
//! Dense states index 2D sites row-major: `site(x, y) = y*lx + x`.
//! The tree backend flattens 2D lattices by recursive quadrant bipartition
//! so that every subtree covers a spatially contiguous block.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    Periodic,
    Open,
}

/// Nearest-neighbour bonds of a 1D chain.
pub fn chain_bonds(l: usize, boundary: Boundary) -> Vec<(usize, usize)> {
    let mut bonds: Vec<(usize, usize)> = (0..l - 1).map(|i| (i, i + 1)).collect();
    if boundary == Boundary::Periodic && l >= 2 {
        bonds.push((l - 1, 0));
    }
    bonds
}

/// Nearest-neighbour bonds of an `lx × ly` square lattice, row-major sites.
pub fn square_bonds(lx: usize, ly: usize, boundary: Boundary) -> Vec<(usize, usize)> {
    let site = |x: usize, y: usize| y * lx + x;
    let mut bonds = Vec::new();
    for y in 0..ly {
        for x in 0..lx {
            match boundary {
                Boundary::Periodic => {
                    bonds.push((site(x, y), site((x + 1) % lx, y)));
                    bonds.push((site(x, y), site(x, (y + 1) % ly)));
                }
                Boundary::Open => {
                    if x + 1 < lx {
                        bonds.push((site(x, y), site(x + 1, y)));
                    }
                    if y + 1 < ly {
                        bonds.push((site(x, y), site(x, y + 1)));
                    }
                }
            }
        }
    }
    bonds
}

/// Map lattice sites to the leaf slots of a complete binary tree over
/// `n_leaves` (a power of two ≥ lx·ly).
///
/// Sites are first ordered by recursive bipartition of the lattice (the
/// longer axis halves first, which is quadrant recursion for square
/// power-of-two lattices; a chain is the case `ly = 1`). The ordered list is
/// then split in balanced halves onto the two subtrees, recursively, so
/// every subtree covers a contiguous block of the ordering and padding slots
/// land at block boundaries. Returns `leaf_of_site` (row-major sites).
pub fn tree_leaf_order(lx: usize, ly: usize, n_leaves: usize) -> Vec<usize> {
    assert!(n_leaves.is_power_of_two() && n_leaves >= lx * ly);
    let mut order = Vec::with_capacity(lx * ly);
    bipartition_sequence(0, lx, 0, ly, lx, &mut order);
    let mut leaf_of_site = vec![0; lx * ly];
    assign_balanced(&order, 0, n_leaves, &mut leaf_of_site);
    leaf_of_site
}

fn bipartition_sequence(x0: usize, wx: usize, y0: usize, wy: usize, lx: usize, out: &mut Vec<usize>) {
    if wx == 1 && wy == 1 {
        out.push(y0 * lx + x0);
        return;
    }
    if wx >= wy {
        let half = wx.div_ceil(2);
        bipartition_sequence(x0, half, y0, wy, lx, out);
        bipartition_sequence(x0 + half, wx - half, y0, wy, lx, out);
    } else {
        let half = wy.div_ceil(2);
        bipartition_sequence(x0, wx, y0, half, lx, out);
        bipartition_sequence(x0, wx, y0 + half, wy - half, lx, out);
    }
}

fn assign_balanced(sites: &[usize], leaf0: usize, span: usize, out: &mut [usize]) {
    debug_assert!(sites.len() <= span);
    if sites.len() == 1 && span == 1 {
        out[sites[0]] = leaf0;
        return;
    }
    if sites.is_empty() {
        return;
    }
    let cut = sites.len().div_ceil(2).min(span / 2);
    assign_balanced(&sites[..cut], leaf0, span / 2, out);
    assign_balanced(&sites[cut..], leaf0 + span / 2, span / 2, out);
}

/// Links of an `lx × ly` torus: two per vertex, index `2*(y*lx + x) + dir`
/// with `dir = 0` for the +x link and `dir = 1` for the +y link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusLinks {
    pub lx: usize,
    pub ly: usize,
}

impl TorusLinks {
    pub fn new(lx: usize, ly: usize) -> Self {
        Self { lx, ly }
    }

    pub fn link_count(&self) -> usize {
        2 * self.lx * self.ly
    }

    pub fn vertex_count(&self) -> usize {
        self.lx * self.ly
    }

    pub fn plaquette_count(&self) -> usize {
        self.lx * self.ly
    }

    pub fn vertex(&self, x: usize, y: usize) -> usize {
        (y % self.ly) * self.lx + (x % self.lx)
    }

    pub fn link(&self, x: usize, y: usize, dir: usize) -> usize {
        2 * self.vertex(x, y) + dir
    }

    /// Links on the plaquette whose lower-left corner is vertex `(x, y)`.
    pub fn plaquette_links_at(&self, x: usize, y: usize) -> [usize; 4] {
        [
            self.link(x, y, 0),
            self.link(x, y, 1),
            self.link(x, y + 1, 0),
            self.link(x + 1, y, 1),
        ]
    }

    pub fn plaquette_links(&self, p: usize) -> [usize; 4] {
        self.plaquette_links_at(p % self.lx, p / self.lx)
    }

    /// The four links touching a vertex (the Gauss-law star).
    pub fn links_at_vertex(&self, v: usize) -> [usize; 4] {
        let (x, y) = (v % self.lx, v / self.lx);
        [
            self.link(x, y, 0),
            self.link(x, y, 1),
            self.link(x + self.lx - 1, y, 0),
            self.link(x, y + self.ly - 1, 1),
        ]
    }

    /// All +x links in column `x = 0`: the set cut by a non-contractible
    /// dual path winding around the y-cycle.
    pub fn winding_cut_x(&self) -> Vec<usize> {
        (0..self.ly).map(|y| self.link(0, y, 0)).collect()
    }

    /// All +y links in row `y = 0`: cut by a dual path winding in x.
    pub fn winding_cut_y(&self) -> Vec<usize> {
        (0..self.lx).map(|x| self.link(x, 0, 1)).collect()
    }
}
