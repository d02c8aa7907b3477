//! Binary tree tensor network states.
//!
//! Tensors sit at nodes `[l, n]` (layer `l` from the root, position `n`),
//! stored rank-3 as `[left, right, parent]` with the root's parent leg of
//! dimension 1. Physical sites map to the `2^depth` leaves below the bottom
//! layer; slots beyond the site count are padding with dimension-1 legs. In
//! the central canonical form every non-root tensor is an isometry toward
//! the root and the root carries the state norm.

mod cache;
mod variational;

pub use cache::LinkOperatorCache;
pub use variational::{variational_ground_state, VariationalOptions, VariationalReport};

use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::io::{Read, Write};
use std::path::Path;

use crate::dense::DenseState;
use crate::error::{MagicError, Result};
use crate::lattice;
use crate::linalg;
use crate::pauli::PauliString;

#[derive(Debug, Clone)]
pub struct TtnState {
    d: u8,
    n_sites: usize,
    depth: usize,
    /// `leaf_of_site[site]` = leaf slot; padding slots carry dimension 1.
    leaf_of_site: Vec<usize>,
    site_of_leaf: Vec<Option<usize>>,
    /// Node tensors in id order (`id = 2^l − 1 + n`), shape [l, r, p].
    tensors: Vec<Array3<Complex64>>,
    /// Conjugated `(l·r) × p` views of each tensor, kept for contractions.
    conj_mats: Vec<Array2<Complex64>>,
}

impl TtnState {
    pub fn d(&self) -> u8 {
        self.d
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_leaves(&self) -> usize {
        1 << self.depth
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn node_count(&self) -> usize {
        (1 << self.depth) - 1
    }

    pub fn leaf_of_site(&self) -> &[usize] {
        &self.leaf_of_site
    }

    pub fn tensor(&self, node: usize) -> &Array3<Complex64> {
        &self.tensors[node]
    }

    pub(crate) fn tensor_mut(&mut self, node: usize) -> &mut Array3<Complex64> {
        &mut self.tensors[node]
    }

    pub(crate) fn conj_mat(&self, node: usize) -> &Array2<Complex64> {
        &self.conj_mats[node]
    }

    pub(crate) fn set_conj_mat(&mut self, node: usize, m: Array2<Complex64>) {
        self.conj_mats[node] = m;
    }

    /// Dimension of the physical leg at a leaf slot (d, or 1 for padding).
    pub fn leaf_dim(&self, leaf: usize) -> usize {
        if self.site_of_leaf[leaf].is_some() {
            self.d as usize
        } else {
            1
        }
    }

    pub fn site_at_leaf(&self, leaf: usize) -> Option<usize> {
        self.site_of_leaf[leaf]
    }

    /// Maximum bond dimension over all links.
    pub fn max_bond_dim(&self) -> usize {
        self.tensors.iter().map(|t| t.dim().2).max().unwrap_or(1)
    }

    pub fn is_bottom(&self, node: usize) -> bool {
        node >= (1 << (self.depth - 1)) - 1
    }

    pub fn children(&self, node: usize) -> (usize, usize) {
        (2 * node + 1, 2 * node + 2)
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        if node == 0 {
            None
        } else {
            Some((node - 1) / 2)
        }
    }

    /// Leaves under a bottom-layer node.
    pub fn bottom_leaves(&self, node: usize) -> (usize, usize) {
        let first_bottom = (1 << (self.depth - 1)) - 1;
        let k = node - first_bottom;
        (2 * k, 2 * k + 1)
    }

    pub fn node_of_leaf(&self, leaf: usize) -> usize {
        (1 << (self.depth - 1)) - 1 + leaf / 2
    }

    /// Norm of the state (norm of the center tensor; the canonical center
    /// is the root for every constructor here).
    pub fn norm(&self) -> f64 {
        self.tensors[0].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub(crate) fn rebuild_conj_mats(&mut self) {
        self.conj_mats = self
            .tensors
            .iter()
            .map(|t| {
                let (l, r, p) = t.dim();
                Array2::from_shape_fn((l * r, p), |(lr, pp)| t[(lr / r, lr % r, pp)].conj())
            })
            .collect();
    }

    /// Largest deviation of any non-root tensor from isometry toward the
    /// root: `‖M†M − I‖_max` with `M = T` reshaped `(l·r) × p`.
    pub fn isometry_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for node in 1..self.node_count() {
            let t = &self.tensors[node];
            let (l, r, p) = t.dim();
            let m = t.view().into_shape_with_order((l * r, p)).expect("standard layout");
            for i in 0..p {
                for j in 0..p {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in 0..l * r {
                        acc += m[(k, i)].conj() * m[(k, j)];
                    }
                    let expect = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((acc - expect).norm());
                }
            }
        }
        worst
    }

    /// Fresh full contraction of `⟨ψ|P|ψ⟩` (no cache reuse); the reference
    /// the incremental path is tested against.
    pub fn expectation_full(&self, p: &PauliString) -> Result<Complex64> {
        let cache = LinkOperatorCache::new(self, p)?;
        Ok(cache.expectation_cached(self, p)?)
    }

    /// Contract the whole tree into a dense site-ordered amplitude vector.
    pub fn to_dense(&self) -> Result<DenseState> {
        let dim = (self.d as usize)
            .checked_pow(self.n_sites as u32)
            .filter(|&x| x <= 1 << 24)
            .ok_or_else(|| MagicError::Unsupported("to_dense only at small N".into()))?;
        // bottom-up: per node, amplitudes over (leaf-block state, parent leg)
        let mut blocks: Vec<Option<Array2<Complex64>>> = vec![None; self.node_count()];
        for node in (0..self.node_count()).rev() {
            let t = &self.tensors[node];
            let (dl, dr, dp) = t.dim();
            let (bl, br) = if self.is_bottom(node) {
                let eye = |k: usize| {
                    Array2::from_shape_fn((k, k), |(i, j)| {
                        Complex64::new(f64::from(u8::from(i == j)), 0.0)
                    })
                };
                let (leaf_l, leaf_r) = self.bottom_leaves(node);
                (eye(self.leaf_dim(leaf_l)), eye(self.leaf_dim(leaf_r)))
            } else {
                let (c1, c2) = self.children(node);
                (blocks[c1].take().unwrap(), blocks[c2].take().unwrap())
            };
            let (nl, nr) = (bl.dim().0, br.dim().0);
            let mut out = Array2::<Complex64>::zeros((nl * nr, dp));
            for a in 0..dl {
                for b in 0..dr {
                    for pp in 0..dp {
                        let tv = t[(a, b, pp)];
                        if tv.norm_sqr() == 0.0 {
                            continue;
                        }
                        for xl in 0..nl {
                            let blv = bl[(xl, a)];
                            if blv.norm_sqr() == 0.0 {
                                continue;
                            }
                            for xr in 0..nr {
                                // left leaf block is the less-significant digit group
                                out[(xl + nl * xr, pp)] += blv * br[(xr, b)] * tv;
                            }
                        }
                    }
                }
            }
            blocks[node] = Some(out);
        }
        let root_block = blocks[0].take().unwrap();
        // root block rows are leaf-ordered amplitudes; permute to site order
        let mut amps = vec![Complex64::new(0.0, 0.0); dim];
        let d = self.d as usize;
        for row in 0..root_block.dim().0 {
            let mut rest = row;
            let mut site_index = 0usize;
            for leaf in 0..self.n_leaves() {
                let ld = self.leaf_dim(leaf);
                let digit = rest % ld;
                rest /= ld;
                if let Some(site) = self.site_of_leaf[leaf] {
                    site_index += digit * d.pow(site as u32);
                }
            }
            amps[site_index] = root_block[(row, 0)];
        }
        DenseState::from_complex_amplitudes(self.d, self.n_sites, amps)
    }

    // -----------------------------------------------------------------
    // constructors

    /// Random TTN in central canonical form: seeded random isometries with
    /// the exact rank profile for the requested maximum bond dimension.
    pub fn random(d: u8, n_sites: usize, chi: usize, seed: u64) -> Result<Self> {
        Self::random_with_leaf_order(d, n_sites, chi, seed, default_leaf_order(n_sites))
    }

    pub fn random_with_leaf_order(
        d: u8,
        n_sites: usize,
        chi: usize,
        seed: u64,
        leaf_of_site: Vec<usize>,
    ) -> Result<Self> {
        let mut state = Self::scaffold(d, n_sites, chi, leaf_of_site)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for node in (0..state.node_count()).rev() {
            let (dl, dr, dp) = state.tensors[node].dim();
            let raw = Array2::from_shape_fn((dl * dr, dp), |_| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            let t = if node == 0 {
                let nrm = raw.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                raw.mapv(|z| z / nrm)
            } else {
                let (q, _) = linalg::qr_thin_c64(&raw);
                q
            };
            state.tensors[node] =
                Array3::from_shape_fn((dl, dr, dp), |(a, b, p)| t[(a * dr + b, p)]);
        }
        state.rebuild_conj_mats();
        Ok(state)
    }

    /// Exact (up to truncation) compression of a dense state by recursive
    /// splitting along the tree. Returns the state and the accumulated
    /// discarded weight.
    pub fn from_dense(dense: &DenseState, chi_max: usize, svd_cutoff: f64) -> Result<(Self, f64)> {
        Self::from_dense_with_leaf_order(dense, chi_max, svd_cutoff, default_leaf_order(dense.n()))
    }

    pub fn from_dense_with_leaf_order(
        dense: &DenseState,
        chi_max: usize,
        svd_cutoff: f64,
        leaf_of_site: Vec<usize>,
    ) -> Result<(Self, f64)> {
        let d = dense.d();
        let n_sites = dense.n();
        let mut state = Self::scaffold(d, n_sites, chi_max, leaf_of_site)?;

        // permute amplitudes into leaf order (padding legs have dim 1)
        let leaf_dims: Vec<usize> = (0..state.n_leaves()).map(|l| state.leaf_dim(l)).collect();
        let dim = dense.dim();
        let mut leaf_amps = Array1::<Complex64>::zeros(dim);
        let dd = d as usize;
        for x in 0..dim {
            let mut leaf_index = 0usize;
            let mut stride = 1usize;
            for (leaf, &ld) in leaf_dims.iter().enumerate() {
                if ld > 1 {
                    let site = state.site_of_leaf[leaf].unwrap();
                    let digit = (x / dd.pow(site as u32)) % dd;
                    leaf_index += digit * stride;
                }
                stride *= ld;
            }
            leaf_amps[leaf_index] = dense.amplitudes().get(x);
        }

        let mut discarded = 0.0f64;
        let root_mat = leaf_amps.into_shape_with_order((dim, 1)).unwrap();
        state.split_node(0, root_mat, chi_max, svd_cutoff, &mut discarded)?;
        state.rebuild_conj_mats();
        Ok((state, discarded))
    }

    /// Recursively turn the matrix `u` (rows: leaf-block states of this
    /// node's leaf range, left block little-endian first; cols: parent leg)
    /// into the subtree tensors.
    fn split_node(
        &mut self,
        node: usize,
        u: Array2<Complex64>,
        chi_max: usize,
        cutoff: f64,
        discarded: &mut f64,
    ) -> Result<()> {
        let dp = u.dim().1;
        if self.is_bottom(node) {
            let (leaf_l, leaf_r) = self.bottom_leaves(node);
            let (dl, dr) = (self.leaf_dim(leaf_l), self.leaf_dim(leaf_r));
            debug_assert_eq!(u.dim().0, dl * dr);
            self.tensors[node] =
                Array3::from_shape_fn((dl, dr, dp), |(a, b, p)| u[(a + dl * b, p)]);
            return Ok(());
        }
        let (c1, c2) = self.children(node);
        let rows = u.dim().0;
        let dl_block = self.block_dim(c1);
        let dr_block = rows / dl_block;

        // left basis: rows (xl), cols (xr, p)
        let a = Array2::from_shape_fn((dl_block, dr_block * dp), |(xl, c)| {
            u[(xl + dl_block * (c % dr_block), c / dr_block)]
        });
        let (ul, k1) = truncated_basis(&a, chi_max, cutoff, discarded)?;
        // right basis
        let b = Array2::from_shape_fn((dr_block, dl_block * dp), |(xr, c)| {
            u[((c % dl_block) + dl_block * xr, c / dl_block)]
        });
        let (ur, k2) = truncated_basis(&b, chi_max, cutoff, discarded)?;

        // node tensor C[a,b,p] = Σ conj(ul[xl,a]) conj(ur[xr,b]) u[(xl,xr),p]
        let mut c = Array3::<Complex64>::zeros((k1, k2, dp));
        for p in 0..dp {
            for xr in 0..dr_block {
                for xl in 0..dl_block {
                    let uv = u[(xl + dl_block * xr, p)];
                    if uv.norm_sqr() == 0.0 {
                        continue;
                    }
                    for ai in 0..k1 {
                        let f = ul[(xl, ai)].conj() * uv;
                        for bi in 0..k2 {
                            c[(ai, bi, p)] += f * ur[(xr, bi)].conj();
                        }
                    }
                }
            }
        }
        self.tensors[node] = c;
        self.split_node(c1, ul, chi_max, cutoff, discarded)?;
        self.split_node(c2, ur, chi_max, cutoff, discarded)?;
        Ok(())
    }

    /// Product of leaf dims in the subtree of `node`.
    fn block_dim(&self, node: usize) -> usize {
        let (lo, hi) = self.leaf_range(node);
        (lo..hi).map(|l| self.leaf_dim(l)).product()
    }

    /// Leaf slots covered by the subtree of `node`.
    pub fn leaf_range(&self, node: usize) -> (usize, usize) {
        let l = (node + 1).ilog2() as usize;
        let n = node - ((1 << l) - 1);
        let span = 1 << (self.depth - l);
        (n * span, (n + 1) * span)
    }

    fn scaffold(d: u8, n_sites: usize, chi: usize, leaf_of_site: Vec<usize>) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(MagicError::InvalidLocalDim(d));
        }
        if n_sites < 2 {
            return Err(MagicError::ShapeMismatch("tree needs at least 2 sites".into()));
        }
        if chi == 0 {
            return Err(MagicError::ShapeMismatch("bond dimension must be ≥ 1".into()));
        }
        let n_leaves = n_sites.next_power_of_two().max(2);
        let depth = n_leaves.ilog2() as usize;
        if leaf_of_site.len() != n_sites {
            return Err(MagicError::ShapeMismatch("leaf order length mismatch".into()));
        }
        let mut site_of_leaf = vec![None; n_leaves];
        for (site, &leaf) in leaf_of_site.iter().enumerate() {
            if leaf >= n_leaves || site_of_leaf[leaf].is_some() {
                return Err(MagicError::ShapeMismatch("leaf order is not injective".into()));
            }
            site_of_leaf[leaf] = Some(site);
        }
        let mut state = Self {
            d,
            n_sites,
            depth,
            leaf_of_site,
            site_of_leaf,
            tensors: Vec::new(),
            conj_mats: Vec::new(),
        };
        // bond dims capped by χ and both ambient Schmidt bounds
        let node_count = (1 << depth) - 1;
        let mut parent_dim = vec![1usize; node_count];
        for node in (0..node_count).rev() {
            let (lo, hi) = state.leaf_range(node);
            let inside = (lo..hi).filter(|&l| state.site_of_leaf[l].is_some()).count();
            let outside = n_sites - inside;
            let bound_in = capped_pow(d as usize, inside, chi);
            let bound_out = capped_pow(d as usize, outside, chi);
            parent_dim[node] = if node == 0 { 1 } else { chi.min(bound_in).min(bound_out) };
        }
        state.tensors = (0..node_count)
            .map(|node| {
                let (dl, dr) = if state.is_bottom(node) {
                    let (ll, lr) = state.bottom_leaves(node);
                    (state.leaf_dim(ll), state.leaf_dim(lr))
                } else {
                    let (c1, c2) = state.children(node);
                    (parent_dim[c1], parent_dim[c2])
                };
                Array3::zeros((dl, dr, parent_dim[node]))
            })
            .collect();
        Ok(state)
    }

    // -----------------------------------------------------------------
    // serialization (versioned)

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"MGTTN001")?;
        f.write_all(&[self.d])?;
        f.write_all(&(self.n_sites as u64).to_le_bytes())?;
        f.write_all(&(self.depth as u64).to_le_bytes())?;
        for &leaf in &self.leaf_of_site {
            f.write_all(&(leaf as u64).to_le_bytes())?;
        }
        for t in &self.tensors {
            let (l, r, p) = t.dim();
            for v in [l, r, p] {
                f.write_all(&(v as u64).to_le_bytes())?;
            }
            for z in t.iter() {
                f.write_all(&z.re.to_le_bytes())?;
                f.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != b"MGTTN001" {
            return Err(MagicError::Format("bad tree-state header".into()));
        }
        let mut b1 = [0u8; 1];
        let mut b8 = [0u8; 8];
        f.read_exact(&mut b1)?;
        let d = b1[0];
        f.read_exact(&mut b8)?;
        let n_sites = u64::from_le_bytes(b8) as usize;
        f.read_exact(&mut b8)?;
        let depth = u64::from_le_bytes(b8) as usize;
        let n_leaves = 1usize << depth;
        let mut leaf_of_site = vec![0usize; n_sites];
        for leaf in leaf_of_site.iter_mut() {
            f.read_exact(&mut b8)?;
            *leaf = u64::from_le_bytes(b8) as usize;
        }
        let mut site_of_leaf = vec![None; n_leaves];
        for (site, &leaf) in leaf_of_site.iter().enumerate() {
            site_of_leaf[leaf] = Some(site);
        }
        let node_count = n_leaves - 1;
        let mut tensors = Vec::with_capacity(node_count);
        for _ in 0..node_count {
            let mut dims = [0usize; 3];
            for v in dims.iter_mut() {
                f.read_exact(&mut b8)?;
                *v = u64::from_le_bytes(b8) as usize;
            }
            let mut t = Array3::zeros((dims[0], dims[1], dims[2]));
            for z in t.iter_mut() {
                f.read_exact(&mut b8)?;
                let re = f64::from_le_bytes(b8);
                f.read_exact(&mut b8)?;
                let im = f64::from_le_bytes(b8);
                *z = Complex64::new(re, im);
            }
            tensors.push(t);
        }
        let mut state = Self {
            d,
            n_sites,
            depth,
            leaf_of_site,
            site_of_leaf,
            tensors,
            conj_mats: Vec::new(),
        };
        state.rebuild_conj_mats();
        Ok(state)
    }
}

pub fn default_leaf_order(n_sites: usize) -> Vec<usize> {
    lattice::tree_leaf_order(n_sites, 1, n_sites.next_power_of_two().max(2))
}

fn capped_pow(base: usize, exp: usize, cap: usize) -> usize {
    let mut acc = 1usize;
    for _ in 0..exp {
        acc = acc.saturating_mul(base);
        if acc >= cap {
            return cap;
        }
    }
    acc
}

/// Column basis of `a` from its SVD, truncated at `chi` columns and at
/// relative discarded weight `cutoff`; accumulates the discarded weight.
fn truncated_basis(
    a: &Array2<Complex64>,
    chi: usize,
    cutoff: f64,
    discarded: &mut f64,
) -> Result<(Array2<Complex64>, usize)> {
    let (u, s, _) = linalg::svd_c64(a)?;
    let total: f64 = s.iter().map(|x| x * x).sum();
    let mut keep = s.len().min(chi);
    while keep > 1 && s[keep - 1] * s[keep - 1] <= cutoff * total.max(1e-300) {
        keep -= 1;
    }
    let dropped: f64 = s[keep..].iter().map(|x| x * x).sum();
    if total > 0.0 {
        *discarded += dropped / total;
    }
    Ok((u.slice(ndarray::s![.., ..keep]).to_owned(), keep))
}

// shared contraction helpers used by the cache and the variational sweep

/// `out[..., i', ...] = Σ_i op[i', i] · t[..., i, ...]` over the given leg.
pub(crate) fn apply_on_axis(
    t: &Array3<Complex64>,
    op: &Array2<Complex64>,
    axis: usize,
) -> Array3<Complex64> {
    let (l, r, p) = t.dim();
    match axis {
        0 => {
            let m = t.view().into_shape_with_order((l, r * p)).unwrap();
            let out = op.dot(&m);
            let k = op.dim().0;
            out.into_shape_with_order((k, r, p)).unwrap()
        }
        1 => {
            let perm = t.view().permuted_axes([1, 0, 2]);
            let m = perm
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((r, l * p))
                .unwrap();
            let out = op.dot(&m);
            let k = op.dim().0;
            let back = out.into_shape_with_order((k, l, p)).unwrap();
            back.permuted_axes([1, 0, 2]).as_standard_layout().into_owned()
        }
        2 => {
            let perm = t.view().permuted_axes([2, 0, 1]);
            let m = perm
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((p, l * r))
                .unwrap();
            let out = op.dot(&m);
            let k = op.dim().0;
            let back = out.into_shape_with_order((k, l, r)).unwrap();
            back.permuted_axes([1, 2, 0]).as_standard_layout().into_owned()
        }
        _ => unreachable!(),
    }
}

/// Coarse-grain child-leg operators through a tensor:
/// `out[p', p] = Σ conj(T[a',b',p']) OL[a',a] OR[b',b] T[a,b,p]`,
/// with `None` meaning the identity. `conj_mat` is the precomputed
/// conjugated `(l·r) × p` reshape of the tensor.
pub(crate) fn coarse_grain(
    t: &Array3<Complex64>,
    conj_mat: &Array2<Complex64>,
    op_left: Option<&Array2<Complex64>>,
    op_right: Option<&Array2<Complex64>>,
) -> Array2<Complex64> {
    let (l, r, p) = t.dim();
    let y = match (op_left, op_right) {
        (None, None) => t.clone(),
        (Some(ol), None) => apply_on_axis(t, ol, 0),
        (None, Some(or)) => apply_on_axis(t, or, 1),
        (Some(ol), Some(or)) => apply_on_axis(&apply_on_axis(t, ol, 0), or, 1),
    };
    let ym = y.into_shape_with_order((l * r, p)).unwrap();
    conj_mat.t().dot(&ym)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{ground_state, GroundStateOptions};
    use crate::models::{build_hamiltonian, ModelFamily, ModelSpec};

    fn overlap(a: &DenseState, b: &DenseState) -> f64 {
        (0..a.dim())
            .map(|x| a.amplitudes().get(x).conj() * b.amplitudes().get(x))
            .sum::<Complex64>()
            .norm()
    }

    #[test]
    fn product_state_compresses_to_chi_1() {
        let dense = DenseState::basis_state(2, 6, 0).unwrap();
        let (ttn, eps) = TtnState::from_dense(&dense, 16, 1e-14).unwrap();
        assert!(eps < 1e-12);
        assert_eq!(ttn.max_bond_dim(), 1);
        let back = ttn.to_dense().unwrap();
        assert!((overlap(&dense, &back) - 1.0).abs() < 1e-10);
        assert!(ttn.isometry_error() < 1e-12);
    }

    #[test]
    fn ghz_has_chi_2_everywhere() {
        let dense = DenseState::ghz(2, 8).unwrap();
        let (ttn, eps) = TtnState::from_dense(&dense, 16, 1e-14).unwrap();
        assert!(eps < 1e-12);
        for node in 1..ttn.node_count() {
            assert_eq!(ttn.tensor(node).dim().2, 2, "node {node}");
        }
        let back = ttn.to_dense().unwrap();
        assert!((overlap(&dense, &back) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ising_ground_state_compresses_exactly_at_full_rank() {
        let spec = ModelSpec::chain(ModelFamily::Ising1D, 8, 1.0);
        let terms = build_hamiltonian(&spec).unwrap();
        let dense =
            ground_state(&terms, &spec.symmetry(), &GroundStateOptions::default()).unwrap();
        let (ttn, eps) = TtnState::from_dense(&dense, 16, 0.0).unwrap();
        assert!(eps < 1e-20);
        let back = ttn.to_dense().unwrap();
        assert!(
            (overlap(&dense, &back) - 1.0).abs() < 1e-10,
            "overlap {}",
            overlap(&dense, &back)
        );
        assert!(ttn.isometry_error() < 1e-12);
        assert!((ttn.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn padded_tree_round_trips() {
        // 6 sites → 8 leaves with 2 padding slots
        let spec = ModelSpec::chain(ModelFamily::Ising1D, 6, 0.7);
        let terms = build_hamiltonian(&spec).unwrap();
        let dense =
            ground_state(&terms, &spec.symmetry(), &GroundStateOptions::default()).unwrap();
        let (ttn, _) = TtnState::from_dense(&dense, 8, 0.0).unwrap();
        let back = ttn.to_dense().unwrap();
        assert!((overlap(&dense, &back) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn qutrit_tree_round_trips() {
        let spec = ModelSpec::chain(ModelFamily::Clock3, 4, 1.1);
        let terms = build_hamiltonian(&spec).unwrap();
        let dense =
            ground_state(&terms, &spec.symmetry(), &GroundStateOptions::default()).unwrap();
        let (ttn, _) = TtnState::from_dense(&dense, 9, 0.0).unwrap();
        let back = ttn.to_dense().unwrap();
        assert!((overlap(&dense, &back) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn random_state_is_canonical() {
        let ttn = TtnState::random(2, 16, 8, 42).unwrap();
        assert!(ttn.isometry_error() < 1e-12);
        assert!((ttn.norm() - 1.0).abs() < 1e-12);
        let dense = ttn.to_dense().unwrap();
        let total: f64 =
            (0..dense.dim()).map(|x| dense.amplitudes().get(x).norm_sqr()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn serialization_round_trip() {
        let ttn = TtnState::random(2, 6, 4, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ttn");
        ttn.write_to(&path).unwrap();
        let back = TtnState::read_from(&path).unwrap();
        assert_eq!(back.n_sites(), 6);
        assert_eq!(back.d(), 2);
        for node in 0..ttn.node_count() {
            let a = ttn.tensor(node);
            let b = back.tensor(node);
            assert_eq!(a.dim(), b.dim());
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x, y);
            }
        }
    }
}
