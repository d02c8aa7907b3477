//! Variational ground-state search on the tree: single-tensor updates with
//! a Krylov solve of each effective local problem, sweeping depth-first with
//! the canonical center carried along by QR moves.
//!
//! Per-term environments are accumulated: terms fully below or fully outside
//! a leg collapse into one effective matrix per leg, so the local apply
//! costs O(χ⁴) plus one O(χ⁴) pass per term actually crossing the node.

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use super::{apply_on_axis, coarse_grain, TtnState};
use crate::error::{MagicError, Result};
use crate::linalg::{self, lowest_eigenpair};
use crate::models::HamiltonianTerms;

#[derive(Debug, Clone)]
pub struct VariationalOptions {
    pub chi: usize,
    pub max_sweeps: usize,
    pub seed: u64,
    /// Relative energy change per sweep below which the search stops.
    pub energy_tol: f64,
    /// Krylov basis size of each local solve.
    pub local_krylov: usize,
    pub local_restarts: usize,
    /// Site-to-leaf map; `None` uses the chain default.
    pub leaf_of_site: Option<Vec<usize>>,
}

impl Default for VariationalOptions {
    fn default() -> Self {
        Self {
            chi: 8,
            max_sweeps: 30,
            seed: 1,
            energy_tol: 1e-10,
            local_krylov: 10,
            local_restarts: 1,
            leaf_of_site: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VariationalReport {
    /// Energy after each sweep.
    pub sweep_energies: Vec<f64>,
    pub sweeps_used: usize,
    pub converged: bool,
    pub final_energy: f64,
}

struct TreeTerm {
    coeff: f64,
    factors: Vec<(usize, Array2<Complex64>)>,
    leaves: Vec<usize>,
}

impl TreeTerm {
    fn factor_at(&self, leaf: usize) -> Option<&Array2<Complex64>> {
        self.factors.iter().find(|(l, _)| *l == leaf).map(|(_, m)| m)
    }

    fn count_in(&self, lo: usize, hi: usize) -> usize {
        self.leaves.iter().filter(|&&l| l >= lo && l < hi).count()
    }
}

#[derive(Default, Clone)]
struct Env {
    hsum: Option<Array2<Complex64>>,
    partial: Vec<(usize, Array2<Complex64>)>,
}

impl Env {
    fn partial_of(&self, term: usize) -> Option<&Array2<Complex64>> {
        self.partial.iter().find(|(t, _)| *t == term).map(|(_, m)| m)
    }
}

fn add_into(acc: &mut Option<Array2<Complex64>>, m: Array2<Complex64>, scale: f64) {
    let scaled = if scale == 1.0 { m } else { m.mapv(|z| z * scale) };
    match acc {
        None => *acc = Some(scaled),
        Some(a) => *a += &scaled,
    }
}

/// Ground-state search over `terms` with maximum bond dimension `chi`.
pub fn variational_ground_state(
    terms: &HamiltonianTerms,
    opts: &VariationalOptions,
) -> Result<(TtnState, VariationalReport)> {
    let order = opts
        .leaf_of_site
        .clone()
        .unwrap_or_else(|| super::default_leaf_order(terms.n_sites));
    let mut state =
        TtnState::random_with_leaf_order(terms.d, terms.n_sites, opts.chi, opts.seed, order)?;

    let tree_terms: Vec<TreeTerm> = terms
        .product_terms()?
        .into_iter()
        .map(|t| {
            let mut factors: Vec<(usize, Array2<Complex64>)> = t
                .factors
                .iter()
                .map(|(site, m)| {
                    (state.leaf_of_site()[*site], m.mapv(|x| Complex64::new(x, 0.0)))
                })
                .collect();
            factors.sort_by_key(|(l, _)| *l);
            let leaves = factors.iter().map(|(l, _)| *l).collect();
            TreeTerm { coeff: t.coeff, factors, leaves }
        })
        .collect();

    let mut sweep = Sweeper {
        terms: &tree_terms,
        down: vec![Env::default(); state.node_count()],
        leaf_down: build_leaf_envs(&state, &tree_terms),
        opts,
        last_energy: f64::INFINITY,
        energies: Vec::new(),
    };
    for node in (0..state.node_count()).rev() {
        sweep.down[node] = sweep.compute_down(&state, node);
    }

    let mut report = VariationalReport {
        sweep_energies: Vec::new(),
        sweeps_used: 0,
        converged: false,
        final_energy: f64::NAN,
    };
    for s in 0..opts.max_sweeps {
        sweep.sweep_node(&mut state, 0, &Env::default())?;
        let e = *sweep.energies.last().unwrap();
        report.sweep_energies.push(e);
        report.sweeps_used = s + 1;
        if s > 0 {
            let prev = report.sweep_energies[s - 1];
            if (prev - e).abs() <= opts.energy_tol * 1.0f64.max(e.abs()) {
                report.converged = true;
                break;
            }
        }
    }
    report.final_energy = *sweep.energies.last().unwrap();

    // leave a clean canonical state: unit-normalize the center (root)
    let nrm = state.norm();
    state.tensor_mut(0).mapv_inplace(|z| z / nrm);
    state.rebuild_conj_mats();
    debug_assert!(state.isometry_error() < 1e-9);
    Ok((state, report))
}

struct Sweeper<'a> {
    terms: &'a [TreeTerm],
    down: Vec<Env>,
    leaf_down: Vec<Env>,
    opts: &'a VariationalOptions,
    last_energy: f64,
    energies: Vec<f64>,
}

enum Handle {
    Node(usize),
    Leaf(usize),
}

impl Sweeper<'_> {
    fn handle_env<'s>(&'s self, h: &Handle) -> &'s Env {
        match h {
            Handle::Node(v) => &self.down[*v],
            Handle::Leaf(l) => &self.leaf_down[*l],
        }
    }

    fn handle_range(&self, state: &TtnState, h: &Handle) -> (usize, usize) {
        match h {
            Handle::Node(v) => state.leaf_range(*v),
            Handle::Leaf(l) => (*l, l + 1),
        }
    }

    fn child_handles(&self, state: &TtnState, node: usize) -> (Handle, Handle) {
        if state.is_bottom(node) {
            let (l, r) = state.bottom_leaves(node);
            (Handle::Leaf(l), Handle::Leaf(r))
        } else {
            let (c1, c2) = state.children(node);
            (Handle::Node(c1), Handle::Node(c2))
        }
    }

    /// Down environment of `node` from its children's (already current)
    /// environments.
    fn compute_down(&self, state: &TtnState, node: usize) -> Env {
        let (hl, hr) = self.child_handles(state, node);
        let el = self.handle_env(&hl);
        let er = self.handle_env(&hr);
        let (lo, hi) = state.leaf_range(node);
        let t = state.tensor(node);
        let cm = state.conj_mat(node);
        let mut out = Env::default();
        if let Some(h) = &el.hsum {
            add_into(&mut out.hsum, coarse_grain(t, cm, Some(h), None), 1.0);
        }
        if let Some(h) = &er.hsum {
            add_into(&mut out.hsum, coarse_grain(t, cm, None, Some(h)), 1.0);
        }
        for (tid, term) in self.terms.iter().enumerate() {
            let inside = term.count_in(lo, hi);
            if inside == 0 {
                continue;
            }
            let ol = el.partial_of(tid);
            let or = er.partial_of(tid);
            if ol.is_none() && or.is_none() {
                continue; // fully absorbed into a child hsum already
            }
            let m = coarse_grain(t, cm, ol, or);
            if inside == term.leaves.len() {
                add_into(&mut out.hsum, m, term.coeff);
            } else {
                out.partial.push((tid, m));
            }
        }
        out
    }

    /// Environment on the link between `node` and the child at `leg`,
    /// looking away from that child.
    fn compute_up(&self, state: &TtnState, node: usize, leg: usize, up: &Env) -> Env {
        let (hl, hr) = self.child_handles(state, node);
        let (child_h, sib_h, sib_leg) = if leg == 0 { (hl, hr, 1) } else { (hr, hl, 0) };
        let sib_env = self.handle_env(&sib_h);
        let (clo, chi_) = self.handle_range(state, &child_h);
        let t = state.tensor(node);
        let mut out = Env::default();
        if let Some(h) = &sib_env.hsum {
            add_into(&mut out.hsum, env_toward(t, leg, sib_leg, Some(h), None), 1.0);
        }
        if let Some(h) = &up.hsum {
            add_into(&mut out.hsum, env_toward(t, leg, sib_leg, None, Some(h)), 1.0);
        }
        for (tid, term) in self.terms.iter().enumerate() {
            let in_child = term.count_in(clo, chi_);
            let elsewhere = term.leaves.len() - in_child;
            if elsewhere == 0 {
                continue; // nothing outside the child
            }
            let os = sib_env.partial_of(tid);
            let op = up.partial_of(tid);
            if os.is_none() && op.is_none() {
                continue; // already inside a collapsed hsum
            }
            let m = env_toward(t, leg, sib_leg, os, op);
            if in_child == 0 {
                // term complete outside the child
                add_into(&mut out.hsum, m, term.coeff);
            } else {
                out.partial.push((tid, m));
            }
        }
        out
    }

    /// Solve the local problem at `node` (center there), then recurse.
    fn sweep_node(&mut self, state: &mut TtnState, node: usize, up: &Env) -> Result<()> {
        self.solve_local(state, node, up)?;
        if !state.is_bottom(node) {
            let (c1, c2) = state.children(node);
            for (child, leg) in [(c1, 0usize), (c2, 1usize)] {
                move_center_to_child(state, node, leg);
                let up_child = self.compute_up(state, node, leg, up);
                self.sweep_node(state, child, &up_child)?;
                move_center_to_parent(state, node, leg);
                self.down[child] = self.compute_down(state, child);
            }
            // final re-solve so the sweep's reported energy sits at this node
            self.solve_local(state, node, up)?;
        }
        Ok(())
    }

    fn solve_local(&mut self, state: &mut TtnState, node: usize, up: &Env) -> Result<()> {
        let (hl, hr) = self.child_handles(state, node);
        let el = self.handle_env(&hl);
        let er = self.handle_env(&hr);
        let (llo, lhi) = self.handle_range(state, &hl);
        let (rlo, rhi) = self.handle_range(state, &hr);

        let mut crossing: Vec<(
            f64,
            Option<&Array2<Complex64>>,
            Option<&Array2<Complex64>>,
            Option<&Array2<Complex64>>,
        )> = Vec::new();
        for (tid, term) in self.terms.iter().enumerate() {
            let n_l = term.count_in(llo, lhi);
            let n_r = term.count_in(rlo, rhi);
            let n_out = term.leaves.len() - n_l - n_r;
            let regions = usize::from(n_l > 0) + usize::from(n_r > 0) + usize::from(n_out > 0);
            if regions >= 2 {
                crossing.push((
                    term.coeff,
                    el.partial_of(tid),
                    er.partial_of(tid),
                    up.partial_of(tid),
                ));
            }
        }

        let t = state.tensor(node);
        let (dl, dr, dp) = t.dim();
        let dim = dl * dr * dp;
        let start: Vec<Complex64> = t.iter().cloned().collect();
        let apply = |x: &[Complex64], out: &mut [Complex64]| {
            let x3 = ndarray::ArrayView3::from_shape((dl, dr, dp), x).unwrap().to_owned();
            let mut acc = Array3::<Complex64>::zeros((dl, dr, dp));
            if let Some(h) = &el.hsum {
                acc += &apply_on_axis(&x3, h, 0);
            }
            if let Some(h) = &er.hsum {
                acc += &apply_on_axis(&x3, h, 1);
            }
            if let Some(h) = &up.hsum {
                acc += &apply_on_axis(&x3, h, 2);
            }
            for (coeff, ol, or, op) in &crossing {
                let mut y = x3.clone();
                if let Some(o) = ol {
                    y = apply_on_axis(&y, o, 0);
                }
                if let Some(o) = or {
                    y = apply_on_axis(&y, o, 1);
                }
                if let Some(o) = op {
                    y = apply_on_axis(&y, o, 2);
                }
                acc.zip_mut_with(&y, |a, &b| *a += b * *coeff);
            }
            out.copy_from_slice(acc.as_slice().unwrap());
        };
        let mut apply_dyn = apply;
        let pair = lowest_eigenpair(
            &mut apply_dyn,
            start,
            self.opts.local_krylov.min(dim),
            1e-11,
            self.opts.local_restarts,
            None,
        )?;

        // the Krylov space contains the previous tensor, so the Ritz value
        // can only go down; anything else is a bug in the environments
        if pair.value > self.last_energy + 1e-9 * (1.0 + self.last_energy.abs()) {
            return Err(MagicError::NoConvergence(format!(
                "local energy rose from {} to {}",
                self.last_energy, pair.value
            )));
        }
        self.last_energy = pair.value;
        self.energies.push(pair.value);
        let new_t = Array3::from_shape_vec((dl, dr, dp), pair.vector).unwrap();
        *state.tensor_mut(node) = new_t;
        refresh_conj(state, node);
        Ok(())
    }
}

fn build_leaf_envs(state: &TtnState, terms: &[TreeTerm]) -> Vec<Env> {
    (0..state.n_leaves())
        .map(|leaf| {
            let mut env = Env::default();
            for (tid, term) in terms.iter().enumerate() {
                if let Some(f) = term.factor_at(leaf) {
                    if term.leaves.len() == 1 {
                        add_into(&mut env.hsum, f.clone(), term.coeff);
                    } else {
                        env.partial.push((tid, f.clone()));
                    }
                }
            }
            env
        })
        .collect()
}

/// `out[c', c] = Σ conj(T[.. c' ..]) O_sib[s', s] O_up[p', p] T[.. c ..]`
/// with the output leg `out_leg`, the sibling leg `sib_leg`, and the parent
/// leg 2 contracted.
fn env_toward(
    t: &Array3<Complex64>,
    out_leg: usize,
    sib_leg: usize,
    op_sib: Option<&Array2<Complex64>>,
    op_up: Option<&Array2<Complex64>>,
) -> Array2<Complex64> {
    let mut y = t.clone();
    if let Some(o) = op_sib {
        y = apply_on_axis(&y, o, sib_leg);
    }
    if let Some(o) = op_up {
        y = apply_on_axis(&y, o, 2);
    }
    // out[c', c] = Σ_rest conj(T[rest, c']) y[rest, c]
    let perm = match out_leg {
        0 => [1usize, 2, 0],
        1 => [0usize, 2, 1],
        _ => unreachable!("output leg is a child leg"),
    };
    let tp = t.view().permuted_axes(perm).as_standard_layout().into_owned();
    let yp = y.view().permuted_axes(perm).as_standard_layout().into_owned();
    let (ra, rb, c) = tp.dim();
    let tm = tp.into_shape_with_order((ra * rb, c)).unwrap().mapv(|z| z.conj());
    let ym = yp.into_shape_with_order((ra * rb, c)).unwrap();
    tm.t().dot(&ym)
}

/// QR the center tensor at `node` so its `leg` child leg becomes the open
/// direction, absorbing R into that child. Center moves to the child.
fn move_center_to_child(state: &mut TtnState, node: usize, leg: usize) {
    let t = state.tensor(node).clone();
    let (dl, dr, dp) = t.dim();
    let (perm, back, rows, cols) = match leg {
        0 => ([1usize, 2, 0], [2usize, 0, 1], dr * dp, dl),
        1 => ([0usize, 2, 1], [0usize, 2, 1], dl * dp, dr),
        _ => unreachable!(),
    };
    let m = t
        .view()
        .permuted_axes(perm)
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((rows, cols))
        .unwrap();
    let (q, r) = linalg::qr_thin_c64(&m);
    let k = q.dim().1;
    let q3 = match leg {
        0 => q.into_shape_with_order((dr, dp, k)).unwrap().permuted_axes(back),
        1 => q.into_shape_with_order((dl, dp, k)).unwrap().permuted_axes(back),
        _ => unreachable!(),
    };
    *state.tensor_mut(node) = q3.as_standard_layout().into_owned();
    refresh_conj(state, node);
    let child = if leg == 0 { 2 * node + 1 } else { 2 * node + 2 };
    let updated = apply_on_axis(state.tensor(child), &r, 2);
    *state.tensor_mut(child) = updated;
    refresh_conj(state, child);
}

/// Inverse move: QR the child toward its parent leg, absorb R upward.
fn move_center_to_parent(state: &mut TtnState, node: usize, leg: usize) {
    let child = if leg == 0 { 2 * node + 1 } else { 2 * node + 2 };
    let t = state.tensor(child).clone();
    let (dl, dr, dp) = t.dim();
    let m = t.view().into_shape_with_order((dl * dr, dp)).unwrap().to_owned();
    let (q, r) = linalg::qr_thin_c64(&m);
    let k = q.dim().1;
    *state.tensor_mut(child) =
        Array3::from_shape_fn((dl, dr, k), |(a, b, p)| q[(a * dr + b, p)]);
    refresh_conj(state, child);
    let updated = apply_on_axis(state.tensor(node), &r, leg);
    *state.tensor_mut(node) = updated;
    refresh_conj(state, node);
}

fn refresh_conj(state: &mut TtnState, node: usize) {
    let t = state.tensor(node);
    let (l, r, p) = t.dim();
    let cm = Array2::from_shape_fn((l * r, p), |(lr, pp)| t[(lr / r, lr % r, pp)].conj());
    state.set_conj_mat(node, cm);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{ground_state, GroundStateOptions};
    use crate::models::{build_hamiltonian, ModelFamily, ModelSpec};

    fn solve(spec: &ModelSpec, chi: usize, seed: u64) -> (TtnState, VariationalReport) {
        let terms = build_hamiltonian(spec).unwrap();
        let opts = VariationalOptions { chi, seed, ..Default::default() };
        variational_ground_state(&terms, &opts).unwrap()
    }

    #[test]
    fn ising_l8_matches_dense_energy() {
        let spec = ModelSpec::chain(ModelFamily::Ising1D, 8, 1.0);
        let terms = build_hamiltonian(&spec).unwrap();
        let dense =
            ground_state(&terms, &spec.symmetry(), &GroundStateOptions::default()).unwrap();
        let (ttn, report) = solve(&spec, 16, 3);
        let e_dense = dense.energy().unwrap();
        assert!(
            (report.final_energy - e_dense).abs() < 1e-8,
            "ttn {} vs dense {e_dense}",
            report.final_energy
        );
        // variational bound: never below the true ground energy
        assert!(report.final_energy >= e_dense - 1e-9);
        assert!(ttn.isometry_error() < 1e-9);
        // energies non-increasing across sweeps
        for w in report.sweep_energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn strong_field_converges_fast_to_product_state() {
        let spec = ModelSpec::chain(ModelFamily::Ising1D, 8, 1e6);
        let terms = build_hamiltonian(&spec).unwrap();
        let opts = VariationalOptions { chi: 4, seed: 5, max_sweeps: 30, ..Default::default() };
        let (_, report) = variational_ground_state(&terms, &opts).unwrap();
        // representable at χ=1: a couple of sweeps must nail it
        assert!(report.converged);
        assert!(report.sweeps_used <= 3, "{} sweeps", report.sweeps_used);
        let expect = -1e6 * 8.0 - 8.0 / (4.0 * 1e6); // leading perturbative shift
        assert!(
            (report.final_energy - expect).abs() / expect.abs() < 1e-9,
            "{} vs {expect}",
            report.final_energy
        );
    }

    #[test]
    fn padded_site_count_works() {
        let spec = ModelSpec::chain(ModelFamily::Ising1D, 6, 1.2);
        let terms = build_hamiltonian(&spec).unwrap();
        let dense =
            ground_state(&terms, &spec.symmetry(), &GroundStateOptions::default()).unwrap();
        let (_, report) = solve(&spec, 8, 11);
        assert!(
            (report.final_energy - dense.energy().unwrap()).abs() < 1e-7,
            "{} vs {}",
            report.final_energy,
            dense.energy().unwrap()
        );
    }

    #[test]
    fn clock_chain_matches_dense() {
        let spec = ModelSpec::chain(ModelFamily::Clock3, 4, 1.0);
        let terms = build_hamiltonian(&spec).unwrap();
        let dense =
            ground_state(&terms, &spec.symmetry(), &GroundStateOptions::default()).unwrap();
        let (_, report) = solve(&spec, 9, 2);
        assert!(
            (report.final_energy - dense.energy().unwrap()).abs() < 1e-7,
            "{} vs {}",
            report.final_energy,
            dense.energy().unwrap()
        );
    }

    #[test]
    fn xxz_chain_matches_dense() {
        let spec = ModelSpec::xxz(4, 1.0, 0.5);
        let terms = build_hamiltonian(&spec).unwrap();
        let dense = ground_state(
            &terms,
            &crate::pauli::SymmetrySector::None,
            &GroundStateOptions::default(),
        )
        .unwrap();
        let (_, report) = solve(&spec, 9, 8);
        assert!(
            (report.final_energy - dense.energy().unwrap()).abs() < 1e-7,
            "{} vs {}",
            report.final_energy,
            dense.energy().unwrap()
        );
    }

    #[test]
    fn ising_2d_small_matches_dense() {
        let spec = ModelSpec::square(ModelFamily::Ising2D, 2, 2, 3.0);
        let terms = build_hamiltonian(&spec).unwrap();
        let dense =
            ground_state(&terms, &spec.symmetry(), &GroundStateOptions::default()).unwrap();
        let opts = VariationalOptions {
            chi: 4,
            seed: 7,
            leaf_of_site: Some(crate::lattice::tree_leaf_order(2, 2, 4)),
            ..Default::default()
        };
        let (_, report) = variational_ground_state(&terms, &opts).unwrap();
        assert!(
            (report.final_energy - dense.energy().unwrap()).abs() < 1e-7,
            "{} vs {}",
            report.final_energy,
            dense.energy().unwrap()
        );
    }
}
