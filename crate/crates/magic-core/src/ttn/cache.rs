//! Cached coarse-grained link operators for Pauli expectations on a tree
//! state.
//!
//! For a string P the committed cache holds, per node, the operator carried
//! by its parent link after coarse-graining everything below; the root entry
//! is the 1×1 value block. A proposal touching ≤ 2 sites recomputes only the
//! path (union) from the touched leaves to the root into an overlay, which a
//! Metropolis step then commits or discards. `None` entries are exact
//! identities (isometry shortcut), so stabilizer-limit chains cost nothing.

use ndarray::Array2;
use num_complex::Complex64;
use std::collections::BTreeSet;

use super::{coarse_grain, TtnState};
use crate::error::{MagicError, Result};
use crate::pauli::PauliString;

#[derive(Debug, Clone)]
pub struct LinkOperatorCache {
    /// Committed operator on each node's parent link (`ops[0]` = value block).
    ops: Vec<Option<Array2<Complex64>>>,
    current: PauliString,
    /// Pending path recomputation for an open proposal.
    overlay: Vec<(usize, Option<Array2<Complex64>>)>,
    pending: Option<PauliString>,
    /// Link operators recomputed by the most recent proposal.
    pub last_recompute_count: usize,
    pub total_recomputes: u64,
    accepted_since_rebuild: u64,
    /// Committed cache is rebuilt from scratch every this many accepted
    /// moves to bound accumulated floating-point drift.
    pub rebuild_every: u64,
}

impl LinkOperatorCache {
    pub fn new(state: &TtnState, p: &PauliString) -> Result<Self> {
        check_shape(state, p)?;
        let mut cache = Self {
            ops: vec![None; state.node_count()],
            current: p.clone(),
            overlay: Vec::new(),
            pending: None,
            last_recompute_count: 0,
            total_recomputes: 0,
            accepted_since_rebuild: 0,
            rebuild_every: 10_000,
        };
        cache.rebuild(state);
        Ok(cache)
    }

    fn rebuild(&mut self, state: &TtnState) {
        for node in (0..state.node_count()).rev() {
            self.ops[node] = self.recompute_node(state, node, &self.current, &[]);
        }
        self.accepted_since_rebuild = 0;
    }

    /// Coarse-grain one node from its children, reading pending entries from
    /// `overlay` (sorted by node id) and leaf operators from `string`.
    fn recompute_node(
        &self,
        state: &TtnState,
        node: usize,
        string: &PauliString,
        overlay: &[(usize, Option<Array2<Complex64>>)],
    ) -> Option<Array2<Complex64>> {
        // overlays hold at most 2·depth entries; linear scan is fine
        let lookup = |child: usize| -> &Option<Array2<Complex64>> {
            overlay
                .iter()
                .find(|e| e.0 == child)
                .map(|e| &e.1)
                .unwrap_or(&self.ops[child])
        };
        let (ol, or);
        if state.is_bottom(node) {
            let (leaf_l, leaf_r) = state.bottom_leaves(node);
            ol = leaf_operator(state, string, leaf_l);
            or = leaf_operator(state, string, leaf_r);
            if ol.is_none() && or.is_none() {
                return None;
            }
            Some(coarse_grain(state.tensor(node), state.conj_mat(node), ol.as_ref(), or.as_ref()))
        } else {
            let (c1, c2) = state.children(node);
            let l = lookup(c1);
            let r = lookup(c2);
            if l.is_none() && r.is_none() {
                return None;
            }
            Some(coarse_grain(state.tensor(node), state.conj_mat(node), l.as_ref(), r.as_ref()))
        }
    }

    /// Committed expectation value `⟨ψ|P|ψ⟩`, with a defensive staleness
    /// check that `p` is the string the cache was built for.
    pub fn expectation_cached(&self, state: &TtnState, p: &PauliString) -> Result<Complex64> {
        if *p != self.current {
            return Err(MagicError::Chain(
                "stale link-operator cache: string does not match".into(),
            ));
        }
        Ok(self.value_of(&self.ops[0], state) * p.phase_value())
    }

    fn value_of(&self, root_entry: &Option<Array2<Complex64>>, _state: &TtnState) -> Complex64 {
        match root_entry {
            None => Complex64::new(1.0, 0.0),
            Some(block) => block[(0, 0)],
        }
    }

    /// Candidate expectation after a move touching `moved_sites`, computed
    /// by recomputing only the link operators on the union of leaf-to-root
    /// paths. The committed cache is untouched until `commit`.
    pub fn propose(
        &mut self,
        state: &TtnState,
        candidate: &PauliString,
        moved_sites: &[usize],
    ) -> Result<Complex64> {
        check_shape(state, candidate)?;
        if moved_sites.len() > 2 {
            return Err(MagicError::Chain(
                "proposals may touch at most two sites".into(),
            ));
        }
        let mut path = BTreeSet::new();
        for &site in moved_sites {
            let leaf = state.leaf_of_site()[site];
            let mut node = state.node_of_leaf(leaf);
            loop {
                path.insert(node);
                match state.parent(node) {
                    Some(p) => node = p,
                    None => break,
                }
            }
        }
        self.overlay.clear();
        // descending id order is bottom-up in the heap indexing, so every
        // child needed by a recompute is already in the overlay
        let mut staged = std::mem::take(&mut self.overlay);
        for &node in path.iter().rev() {
            let op = self.recompute_node(state, node, candidate, &staged);
            staged.push((node, op));
        }
        self.overlay = staged;
        self.last_recompute_count = path.len();
        self.total_recomputes += path.len() as u64;
        self.pending = Some(candidate.clone());
        let root = self
            .overlay
            .iter()
            .find(|e| e.0 == 0)
            .map(|e| e.1.clone())
            .unwrap_or_else(|| self.ops[0].clone());
        Ok(self.value_of(&root, state) * candidate.phase_value())
    }

    /// Promote the open proposal; periodically rebuilds the whole cache to
    /// bound rounding drift.
    pub fn commit(&mut self, state: &TtnState) {
        if let Some(candidate) = self.pending.take() {
            for (node, op) in self.overlay.drain(..) {
                self.ops[node] = op;
            }
            self.current = candidate;
            self.accepted_since_rebuild += 1;
            if self.accepted_since_rebuild >= self.rebuild_every {
                self.rebuild(state);
            }
        }
    }

    pub fn discard(&mut self) {
        self.overlay.clear();
        self.pending = None;
    }

    pub fn current_string(&self) -> &PauliString {
        &self.current
    }
}

fn check_shape(state: &TtnState, p: &PauliString) -> Result<()> {
    if p.d() != state.d() || p.len() != state.n_sites() {
        return Err(MagicError::ShapeMismatch(format!(
            "string (d={}, n={}) against tree (d={}, n={})",
            p.d(),
            p.len(),
            state.d(),
            state.n_sites()
        )));
    }
    Ok(())
}

/// Single-site Weyl matrix `W|k⟩ = ω^{bk} |k+a⟩` at a leaf; `None` for the
/// identity and for padding slots.
fn leaf_operator(state: &TtnState, p: &PauliString, leaf: usize) -> Option<Array2<Complex64>> {
    let site = state.site_at_leaf(leaf)?;
    let (a, b) = p.site(site);
    if (a, b) == (0, 0) {
        return None;
    }
    let d = state.d() as usize;
    let mut m = Array2::zeros((d, d));
    for k in 0..d {
        let phase = std::f64::consts::TAU * (b as usize * k) as f64 / d as f64;
        m[((k + a as usize) % d, k)] = Complex64::from_polar(1.0, phase);
    }
    Some(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{ground_state, GroundStateOptions};
    use crate::models::{build_hamiltonian, ModelFamily, ModelSpec};
    use crate::pauli::{propose_move, SymmetrySector};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn identity_string_costs_nothing_and_is_one() {
        let ttn = TtnState::random(2, 16, 8, 1).unwrap();
        let id = PauliString::identity(16, 2).unwrap();
        let cache = LinkOperatorCache::new(&ttn, &id).unwrap();
        let val = cache.expectation_cached(&ttn, &id).unwrap();
        assert!((val - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn cached_matches_dense_on_compressed_state() {
        let spec = ModelSpec::chain(ModelFamily::Ising1D, 8, 1.0);
        let terms = build_hamiltonian(&spec).unwrap();
        let dense =
            ground_state(&terms, &spec.symmetry(), &GroundStateOptions::default()).unwrap();
        let (ttn, _) = TtnState::from_dense(&dense, 16, 0.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..40 {
            let sites: Vec<(u8, u8)> =
                (0..8).map(|_| (rng.gen_range(0..2), rng.gen_range(0..2))).collect();
            let p = PauliString::from_exponents(2, sites).unwrap();
            let reference = dense.expectation(&p, None).unwrap();
            let via_ttn = ttn.expectation_full(&p).unwrap();
            assert!(
                (reference - via_ttn).norm() < 1e-9,
                "{p}: {reference} vs {via_ttn}"
            );
        }
    }

    #[test]
    fn padded_subsystem_matches_dense() {
        let spec = ModelSpec::chain(ModelFamily::Ising1D, 6, 1.0);
        let terms = build_hamiltonian(&spec).unwrap();
        let dense =
            ground_state(&terms, &spec.symmetry(), &GroundStateOptions::default()).unwrap();
        let (ttn, _) = TtnState::from_dense(&dense, 8, 0.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..30 {
            let mut sites = vec![(0u8, 0u8); 6];
            for s in [1usize, 2] {
                sites[s] = (rng.gen_range(0..2), rng.gen_range(0..2));
            }
            let p = PauliString::from_exponents(2, sites).unwrap();
            let reference = dense.expectation(&p, Some(&[1, 2])).unwrap();
            let via_ttn = ttn.expectation_full(&p).unwrap();
            assert!((reference - via_ttn).norm() < 1e-9);
        }
    }

    #[test]
    fn incremental_matches_full_over_many_moves() {
        let ttn = TtnState::random(2, 16, 8, 9).unwrap();
        let sector = SymmetrySector::None;
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let mut p = PauliString::identity(16, 2).unwrap();
        let mut cache = LinkOperatorCache::new(&ttn, &p).unwrap();
        let mut current = cache.expectation_cached(&ttn, &p).unwrap().norm_sqr();
        for step in 0..10_000 {
            let mv = propose_move(&p, &sector, 0.5, &mut rng);
            let candidate = p.with_move(&mv);
            let sites: Vec<usize> = mv.touched_sites().collect();
            let cand_val = cache.propose(&ttn, &candidate, &sites).unwrap();
            let cand_p2 = cand_val.norm_sqr();
            // Metropolis on Ξ
            let accept = cand_p2 >= current || rng.gen::<f64>() < cand_p2 / current.max(1e-300);
            if accept {
                cache.commit(&ttn);
                p = candidate;
                current = cand_p2;
            } else {
                cache.discard();
            }
            if step % 500 == 0 {
                let full = ttn.expectation_full(&p).unwrap();
                let cached = cache.expectation_cached(&ttn, &p).unwrap();
                assert!(
                    (full - cached).norm() < 1e-10,
                    "step {step}: {full} vs {cached}"
                );
            }
        }
    }

    #[test]
    fn single_site_recompute_count_equals_depth() {
        for n in [16usize, 64, 256] {
            let ttn = TtnState::random(2, n, 4, 3).unwrap();
            let p = PauliString::identity(n, 2).unwrap();
            let mut cache = LinkOperatorCache::new(&ttn, &p).unwrap();
            let mut candidate = p.clone();
            let mv = crate::pauli::MoveProposal::single(n / 2, 1, 0);
            candidate.apply_move(&mv);
            cache.propose(&ttn, &candidate, &[n / 2]).unwrap();
            assert_eq!(
                cache.last_recompute_count,
                n.ilog2() as usize,
                "n = {n}"
            );
            cache.discard();
        }
    }

    #[test]
    fn two_site_moves_share_ancestors() {
        let ttn = TtnState::random(2, 16, 4, 6).unwrap();
        let p = PauliString::identity(16, 2).unwrap();
        let mut cache = LinkOperatorCache::new(&ttn, &p).unwrap();
        // adjacent sites under one bottom node: path union is depth + 1...
        // sites 0 and 1 share every node on the path: count = depth
        let mut cand = p.clone();
        cand.apply_move(&crate::pauli::MoveProposal::pair((0, 1, 0), (1, 1, 0)));
        cache.propose(&ttn, &cand, &[0, 1]).unwrap();
        assert_eq!(cache.last_recompute_count, 4);
        cache.discard();
        // opposite halves: paths only share the root
        let mut cand = p.clone();
        cand.apply_move(&crate::pauli::MoveProposal::pair((0, 1, 0), (15, 1, 0)));
        cache.propose(&ttn, &cand, &[0, 15]).unwrap();
        assert_eq!(cache.last_recompute_count, 2 * 4 - 1);
        cache.discard();
    }

    #[test]
    fn discard_restores_previous_value_bit_for_bit() {
        let ttn = TtnState::random(2, 8, 6, 12).unwrap();
        let mut p = PauliString::identity(8, 2).unwrap();
        p.apply_move(&crate::pauli::MoveProposal::single(2, 0, 1));
        let mut cache = LinkOperatorCache::new(&ttn, &p).unwrap();
        let before = cache.expectation_cached(&ttn, &p).unwrap();
        let mut cand = p.clone();
        cand.apply_move(&crate::pauli::MoveProposal::single(5, 1, 1));
        cache.propose(&ttn, &cand, &[5]).unwrap();
        cache.discard();
        let after = cache.expectation_cached(&ttn, &p).unwrap();
        assert_eq!(before.re.to_bits(), after.re.to_bits());
        assert_eq!(before.im.to_bits(), after.im.to_bits());
    }

    #[test]
    fn stale_cache_is_detected() {
        let ttn = TtnState::random(2, 8, 4, 2).unwrap();
        let p = PauliString::identity(8, 2).unwrap();
        let cache = LinkOperatorCache::new(&ttn, &p).unwrap();
        let mut other = p.clone();
        other.apply_move(&crate::pauli::MoveProposal::single(0, 1, 1));
        assert!(cache.expectation_cached(&ttn, &other).is_err());
    }

    #[test]
    fn proposal_equals_fresh_cache_value() {
        let spec = ModelSpec::chain(ModelFamily::Ising1D, 8, 0.8);
        let terms = build_hamiltonian(&spec).unwrap();
        let dense =
            ground_state(&terms, &spec.symmetry(), &GroundStateOptions::default()).unwrap();
        let (ttn, _) = TtnState::from_dense(&dense, 16, 0.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let mut p = PauliString::identity(8, 2).unwrap();
        let mut cache = LinkOperatorCache::new(&ttn, &p).unwrap();
        for _ in 0..200 {
            let mv = propose_move(&p, &SymmetrySector::None, 0.5, &mut rng);
            let candidate = p.with_move(&mv);
            let sites: Vec<usize> = mv.touched_sites().collect();
            let via_path = cache.propose(&ttn, &candidate, &sites).unwrap();
            let fresh = LinkOperatorCache::new(&ttn, &candidate)
                .unwrap()
                .expectation_cached(&ttn, &candidate)
                .unwrap();
            assert!((via_path - fresh).norm() < 1e-10);
            cache.commit(&ttn);
            p = candidate;
        }
    }

    #[test]
    fn qutrit_cache_matches_dense() {
        let spec = ModelSpec::chain(ModelFamily::Clock3, 4, 1.0);
        let terms = build_hamiltonian(&spec).unwrap();
        let dense =
            ground_state(&terms, &spec.symmetry(), &GroundStateOptions::default()).unwrap();
        let (ttn, _) = TtnState::from_dense(&dense, 9, 0.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(30);
        for _ in 0..30 {
            let sites: Vec<(u8, u8)> =
                (0..4).map(|_| (rng.gen_range(0..3), rng.gen_range(0..3))).collect();
            let p = PauliString::from_exponents(3, sites).unwrap();
            let reference = dense.expectation(&p, None).unwrap();
            let via_ttn = ttn.expectation_full(&p).unwrap();
            assert!(
                (reference - via_ttn).norm() < 1e-9,
                "{p}: {reference} vs {via_ttn}"
            );
        }
    }
}
