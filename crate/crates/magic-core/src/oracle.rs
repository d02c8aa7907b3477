//! Brute-force ground truth: every sampled quantity recomputed by exhaustive
//! enumeration of Pauli strings on a dense state.
//!
//! Enumeration batches the sum over Z-exponents: for a fixed X-pattern `a`
//! the values `⟨W_{a,b}⟩` for *all* `b` are one multi-dimensional DFT of
//! `u_x = conj(v_{x+a}) v_x` over the site digits, which turns the naive
//! `d^{2N} · d^N` cost into `d^{2N} · N · d` and keeps the oracle usable at
//! its default caps. Reductions use compensated accumulation.

use num_complex::Complex64;
use serde::Serialize;
use std::collections::HashMap;

use crate::dense::DenseState;
use crate::error::{MagicError, Result};
use crate::pauli::PauliString;

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    /// Maximum number of strings a single enumeration may visit.
    pub string_cap: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        // 4^10 for qubits; the qutrit default 9^6 is below this
        Self { string_cap: 1 << 20 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExactSREReport {
    pub d: u8,
    pub n_sites: usize,
    /// (n, M_n) pairs for the requested Rényi indices.
    pub renyi: Vec<(f64, f64)>,
    /// (n, m_n = M_n / N) densities.
    pub densities: Vec<(f64, f64)>,
    /// Σ_P Ξ_P; equals 1 for a normalized pure state.
    pub xi_normalization: f64,
}

impl ExactSREReport {
    pub fn m(&self, n: f64) -> Option<f64> {
        self.renyi.iter().find(|(nn, _)| (nn - n).abs() < 1e-12).map(|&(_, v)| v)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LongRangeReport {
    pub i2: f64,
    pub w: f64,
    /// L = I₂ − W.
    pub l: f64,
    /// The same quantity from the mixed-state SRE difference, as a cross-check.
    pub l_direct: f64,
    pub m2_mixed_ab: f64,
    pub m2_mixed_a: f64,
    pub m2_mixed_b: f64,
}

struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn new() -> Self {
        Self { sum: 0.0, c: 0.0 }
    }
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Visit |⟨P⟩|² for every string supported on `support`, in batches over the
/// Z-exponents of a fixed X-pattern.
///
/// The callback receives `(a_digits, b_index, p2)` where `b_index` encodes
/// the Z-exponents of the support sites in mixed radix d (site order as in
/// `support`).
fn enumerate_p2(
    state: &DenseState,
    support: &[usize],
    cap: usize,
    mut visit: impl FnMut(&[u8], usize, f64),
) -> Result<()> {
    let d = state.d() as usize;
    let k = support.len();
    let strings = d
        .checked_pow(2 * k as u32)
        .ok_or_else(|| MagicError::EnumerationCap(usize::MAX, cap))?;
    if strings > cap {
        return Err(MagicError::EnumerationCap(strings, cap));
    }
    let v = state.to_complex_vec();
    let dim = v.len();
    let n = state.n();
    let full_stride: Vec<usize> = (0..n).map(|i| d.pow(i as u32)).collect();
    let sup_dim = d.pow(k as u32);
    let sup_stride: Vec<usize> = (0..k).map(|i| d.pow(i as u32)).collect();
    let in_support: Vec<Option<usize>> = (0..n)
        .map(|site| support.iter().position(|&s| s == site))
        .collect();

    let mut a_digits = vec![0u8; k];
    let mut u = vec![Complex64::new(0.0, 0.0); sup_dim];
    loop {
        // u(b-axes) = Σ_{off-support digits} conj(v[x+a]) v[x], walked with
        // an odometer that tracks the shifted and the reduced index
        for z in u.iter_mut() {
            *z = Complex64::new(0.0, 0.0);
        }
        let mut digits = vec![0u8; n];
        let mut shifted: usize = support
            .iter()
            .zip(&a_digits)
            .map(|(&s, &a)| a as usize * full_stride[s])
            .sum();
        let mut reduced = 0usize;
        for x in 0..dim {
            u[reduced] += v[shifted].conj() * v[x];
            if x + 1 == dim {
                break;
            }
            for site in 0..n {
                let a = in_support[site]
                    .map(|pos| a_digits[pos] as usize)
                    .unwrap_or(0);
                if (digits[site] as usize) < d - 1 {
                    digits[site] += 1;
                    let old = (digits[site] as usize - 1 + a) % d;
                    let new = (digits[site] as usize + a) % d;
                    shifted = shifted + new * full_stride[site] - old * full_stride[site];
                    if let Some(pos) = in_support[site] {
                        reduced += sup_stride[pos];
                    }
                    break;
                } else {
                    digits[site] = 0;
                    let old = (d - 1 + a) % d;
                    let new = a % d;
                    shifted = shifted + new * full_stride[site] - old * full_stride[site];
                    if let Some(pos) = in_support[site] {
                        reduced -= (d - 1) * sup_stride[pos];
                    }
                }
            }
        }
        // F(b) = Σ_x ω^{+b·x} u_x over the support axes
        dft_axes(&mut u, d, k);
        for (b_index, f) in u.iter().enumerate() {
            visit(&a_digits, b_index, f.norm_sqr());
        }
        // next X-pattern
        let mut done = true;
        for a in a_digits.iter_mut() {
            if (*a as usize) < d - 1 {
                *a += 1;
                done = false;
                break;
            }
            *a = 0;
        }
        if done {
            break;
        }
    }
    Ok(())
}

fn dft_axes(u: &mut [Complex64], d: usize, k: usize) {
    if d == 2 {
        for axis in 0..k {
            let stride = 1usize << axis;
            let mut base = 0;
            while base < u.len() {
                for off in 0..stride {
                    let i0 = base + off;
                    let i1 = i0 + stride;
                    let (a, b) = (u[i0], u[i1]);
                    u[i0] = a + b;
                    u[i1] = a - b;
                }
                base += 2 * stride;
            }
        }
    } else {
        let w1 = Complex64::from_polar(1.0, std::f64::consts::TAU / 3.0);
        let w2 = w1 * w1;
        for axis in 0..k {
            let stride = 3usize.pow(axis as u32);
            let mut base = 0;
            while base < u.len() {
                for off in 0..stride {
                    let i0 = base + off;
                    let i1 = i0 + stride;
                    let i2 = i1 + stride;
                    let (a, b, c) = (u[i0], u[i1], u[i2]);
                    u[i0] = a + b + c;
                    u[i1] = a + w1 * b + w2 * c;
                    u[i2] = a + w2 * b + w1 * c;
                }
                base += 3 * stride;
            }
        }
    }
}

/// Exact stabilizer Rényi entropies of a pure dense state for each index in
/// `n_list`.
pub fn exact_sre(state: &DenseState, n_list: &[f64], opts: &OracleOptions) -> Result<ExactSREReport> {
    let support: Vec<usize> = (0..state.n()).collect();
    let d_pow_n = (state.d() as f64).powi(state.n() as i32);
    let mut sums: Vec<Kahan> = n_list.iter().map(|_| Kahan::new()).collect();
    let mut m1 = Kahan::new();
    let mut xi_norm = Kahan::new();
    enumerate_p2(state, &support, opts.string_cap, |_, _, p2| {
        xi_norm.add(p2 / d_pow_n);
        if p2 > 1e-300 {
            m1.add(-(p2 / d_pow_n) * p2.ln());
        }
        for (slot, &n) in n_list.iter().enumerate() {
            if (n - 1.0).abs() > 1e-12 {
                sums[slot].add(p2.powf(n) / d_pow_n);
            }
        }
    })?;
    let renyi: Vec<(f64, f64)> = n_list
        .iter()
        .enumerate()
        .map(|(slot, &n)| {
            if (n - 1.0).abs() <= 1e-12 {
                (n, m1.sum)
            } else {
                (n, sums[slot].sum.ln() / (1.0 - n))
            }
        })
        .collect();
    let densities = renyi.iter().map(|&(n, m)| (n, m / state.n() as f64)).collect();
    Ok(ExactSREReport {
        d: state.d(),
        n_sites: state.n(),
        renyi,
        densities,
        xi_normalization: xi_norm.sum,
    })
}

/// Full Ξ distribution as a map from strings to probabilities.
pub fn exact_distribution(
    state: &DenseState,
    opts: &OracleOptions,
) -> Result<HashMap<PauliString, f64>> {
    let support: Vec<usize> = (0..state.n()).collect();
    let d = state.d();
    let d_pow_n = (d as f64).powi(state.n() as i32);
    let mut map = HashMap::new();
    enumerate_p2(state, &support, opts.string_cap, |a_digits, b_index, p2| {
        let mut sites = Vec::with_capacity(a_digits.len());
        let mut b = b_index;
        for &a in a_digits {
            sites.push((a, (b % d as usize) as u8));
            b /= d as usize;
        }
        let p = PauliString::from_exponents(d, sites).expect("valid exponents");
        map.insert(p, p2 / d_pow_n);
    })?;
    Ok(map)
}

/// Σ over strings on `support` of |⟨P⟩|² and |⟨P⟩|⁴ (padded expectations).
fn subsystem_sums(state: &DenseState, support: &[usize], cap: usize) -> Result<(f64, f64)> {
    let mut s2 = Kahan::new();
    let mut s4 = Kahan::new();
    enumerate_p2(state, support, cap, |_, _, p2| {
        s2.add(p2);
        s4.add(p2 * p2);
    })?;
    Ok((s2.sum, s4.sum))
}

/// Mixed-state Rényi-2 SRE of the reduced state on `support`:
/// `M̃₂ = −log(Σ Tr⁴ / Σ Tr²)`.
pub fn exact_mixed_m2(state: &DenseState, support: &[usize], opts: &OracleOptions) -> Result<f64> {
    let (s2, s4) = subsystem_sums(state, support, opts.string_cap)?;
    Ok(-(s4 / s2).ln())
}

/// Long-range magic of two disjoint subsystems, both as `I₂ − W` and as the
/// direct mixed-SRE difference.
pub fn exact_long_range(
    state: &DenseState,
    part_a: &[usize],
    part_b: &[usize],
    opts: &OracleOptions,
) -> Result<LongRangeReport> {
    if part_a.iter().any(|s| part_b.contains(s)) {
        return Err(MagicError::ShapeMismatch("subsystems overlap".into()));
    }
    let mut ab: Vec<usize> = part_a.iter().chain(part_b).cloned().collect();
    ab.sort_unstable();
    let d = state.d() as f64;
    let (sa2, sa4) = subsystem_sums(state, part_a, opts.string_cap)?;
    let (sb2, sb4) = subsystem_sums(state, part_b, opts.string_cap)?;
    let (sab2, sab4) = subsystem_sums(state, &ab, opts.string_cap)?;

    let w = -((sa4 * sb4) / sab4).ln();
    // S₂(C) = −log(Σ_P Tr² / d^{|C|})
    let s2_a = -(sa2 / d.powi(part_a.len() as i32)).ln();
    let s2_b = -(sb2 / d.powi(part_b.len() as i32)).ln();
    let s2_ab = -(sab2 / d.powi(ab.len() as i32)).ln();
    let i2 = s2_a + s2_b - s2_ab;

    let m2_ab = -(sab4 / sab2).ln();
    let m2_a = -(sa4 / sa2).ln();
    let m2_b = -(sb4 / sb2).ln();

    Ok(LongRangeReport {
        i2,
        w,
        l: i2 - w,
        l_direct: m2_ab - m2_a - m2_b,
        m2_mixed_ab: m2_ab,
        m2_mixed_a: m2_a,
        m2_mixed_b: m2_b,
    })
}

/// Subleading term `c_N = 2 M_n(N/2) − M_n(N)` from two exact reports.
pub fn exact_subleading(
    state_full: &DenseState,
    state_half: &DenseState,
    n: f64,
    opts: &OracleOptions,
) -> Result<f64> {
    if state_full.n() % 2 != 0 || state_half.n() * 2 != state_full.n() {
        return Err(MagicError::ShapeMismatch(
            "subleading term needs sizes N and N/2".into(),
        ));
    }
    let full = exact_sre(state_full, &[n], opts)?;
    let half = exact_sre(state_half, &[n], opts)?;
    Ok(2.0 * half.m(n).unwrap() - full.m(n).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{ground_state, DenseState, GroundStateOptions};
    use crate::models::{build_hamiltonian, ModelFamily, ModelSpec};
    use approx::assert_relative_eq;

    fn t_state() -> DenseState {
        let phase =
            Complex64::from_polar(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_PI_4);
        DenseState::from_complex_amplitudes(
            2,
            1,
            vec![Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0), phase],
        )
        .unwrap()
    }

    #[test]
    fn zero_state_has_no_magic() {
        let state = DenseState::basis_state(2, 4, 0).unwrap();
        let report = exact_sre(&state, &[1.0, 2.0, 3.0], &OracleOptions::default()).unwrap();
        for &(_, m) in &report.renyi {
            assert!(m.abs() < 1e-12);
        }
        assert_relative_eq!(report.xi_normalization, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn t_state_magic() {
        // Ξ over {I, X, Y, Z} = {1/2, 1/4, 1/4, 0}: M₂ = log(4/3), M₁ = log(2)/2
        let report = exact_sre(&t_state(), &[1.0, 2.0], &OracleOptions::default()).unwrap();
        assert_relative_eq!(report.m(2.0).unwrap(), (4.0f64 / 3.0).ln(), epsilon = 1e-12);
        assert_relative_eq!(report.m(1.0).unwrap(), 0.5 * 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn strange_qutrit_state_maximizes_product_m1() {
        // (|1⟩ − |2⟩)/√2 has |⟨P⟩|² = 1/4 for all P ≠ I, so m₁ = (2/3)log 4
        let s = 0.5f64.sqrt();
        let state = DenseState::from_real_amplitudes(3, 1, vec![0.0, s, -s]).unwrap();
        let report = exact_sre(&state, &[1.0], &OracleOptions::default()).unwrap();
        assert_relative_eq!(report.m(1.0).unwrap(), 2.0 / 3.0 * 4.0f64.ln(), epsilon = 1e-12);
        // and the same density for a 3-site product of strange states
        let mut amps = vec![0.0; 27];
        let c = [0.0, s, -s];
        for (i, &ai) in c.iter().enumerate() {
            for (j, &aj) in c.iter().enumerate() {
                for (k, &ak) in c.iter().enumerate() {
                    amps[i + 3 * j + 9 * k] = ai * aj * ak;
                }
            }
        }
        let prod = DenseState::from_real_amplitudes(3, 3, amps).unwrap();
        let report = exact_sre(&prod, &[1.0], &OracleOptions::default()).unwrap();
        assert_relative_eq!(report.densities[0].1, 2.0 / 3.0 * 4.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn distribution_of_zero_state_n2() {
        let state = DenseState::basis_state(2, 2, 0).unwrap();
        let dist = exact_distribution(&state, &OracleOptions::default()).unwrap();
        let mut nonzero = 0;
        for (p, xi) in &dist {
            let z_only = p.sites().iter().all(|&(a, _)| a == 0);
            if z_only {
                assert_relative_eq!(*xi, 0.25, epsilon = 1e-12);
                nonzero += 1;
            } else {
                assert!(xi.abs() < 1e-14);
            }
        }
        assert_eq!(nonzero, 4);
    }

    #[test]
    fn distribution_of_bell_state() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let state = DenseState::from_real_amplitudes(2, 2, vec![s, 0.0, 0.0, s]).unwrap();
        let dist = exact_distribution(&state, &OracleOptions::default()).unwrap();
        let supported: Vec<_> = dist.iter().filter(|(_, &xi)| xi > 1e-14).collect();
        assert_eq!(supported.len(), 4);
        for (_, &xi) in &supported {
            assert_relative_eq!(xi, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn ising_xi_normalization_and_monotonicity() {
        let spec = ModelSpec::chain(ModelFamily::Ising1D, 4, 1.0);
        let terms = build_hamiltonian(&spec).unwrap();
        let state =
            ground_state(&terms, &spec.symmetry(), &GroundStateOptions::default()).unwrap();
        let report = exact_sre(&state, &[1.0, 1.5, 2.0, 3.0], &OracleOptions::default()).unwrap();
        assert_relative_eq!(report.xi_normalization, 1.0, epsilon = 1e-12);
        // Rényi entropies weakly decrease in n
        for w in report.renyi.windows(2) {
            assert!(w[0].1 >= w[1].1 - 1e-12, "{:?}", report.renyi);
        }
    }

    #[test]
    fn xi_normalization_random_states() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
        for (d, n) in [(2u8, 6usize), (3, 4)] {
            let dim = (d as usize).pow(n as u32);
            let amps: Vec<Complex64> = (0..dim)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let state = DenseState::from_complex_amplitudes(d, n, amps).unwrap();
            let report = exact_sre(&state, &[2.0], &OracleOptions::default()).unwrap();
            assert_relative_eq!(report.xi_normalization, 1.0, epsilon = 1e-11);
        }
    }

    #[test]
    fn mixed_m2_of_ghz_single_site_is_zero() {
        // one site of a GHZ pair is maximally mixed: Σ Tr⁴ / Σ Tr² = 1
        let state = DenseState::ghz(2, 2).unwrap();
        let m2 = exact_mixed_m2(&state, &[0], &OracleOptions::default()).unwrap();
        assert!(m2.abs() < 1e-12);
    }

    #[test]
    fn mixed_m2_full_support_of_stabilizer_state_is_zero() {
        let state = DenseState::ghz(2, 4).unwrap();
        let m2 = exact_mixed_m2(&state, &[0, 1, 2, 3], &OracleOptions::default()).unwrap();
        assert!(m2.abs() < 1e-12);
    }

    #[test]
    fn long_range_of_product_state_is_zero() {
        // product of two T states: everything factorizes
        let t = t_state();
        let amps: Vec<Complex64> = (0..4)
            .map(|x| t.amplitudes().get(x & 1) * t.amplitudes().get((x >> 1) & 1))
            .collect();
        let state = DenseState::from_complex_amplitudes(2, 2, amps).unwrap();
        let report = exact_long_range(&state, &[0], &[1], &OracleOptions::default()).unwrap();
        assert!(report.i2.abs() < 1e-12);
        assert!(report.w.abs() < 1e-12);
        assert!(report.l.abs() < 1e-12);
    }

    #[test]
    fn ghz_halves_renyi2_mutual_information() {
        // I₂(A:B) for the two halves of GHZ₄ is 2 log 2 (ρ_AB is pure,
        // S₂(A) = S₂(B) = log 2)
        let state = DenseState::ghz(2, 4).unwrap();
        let report =
            exact_long_range(&state, &[0, 1], &[2, 3], &OracleOptions::default()).unwrap();
        assert_relative_eq!(report.i2, 2.0 * 2.0f64.ln(), epsilon = 1e-12);
        // GHZ is a stabilizer state: its long-range magic vanishes
        assert!(report.l.abs() < 1e-12);
    }

    #[test]
    fn l_identity_matches_direct_difference() {
        let spec = ModelSpec::chain(ModelFamily::Ising1D, 6, 1.0);
        let terms = build_hamiltonian(&spec).unwrap();
        let state =
            ground_state(&terms, &spec.symmetry(), &GroundStateOptions::default()).unwrap();
        let report =
            exact_long_range(&state, &[0, 1], &[3, 4], &OracleOptions::default()).unwrap();
        assert_relative_eq!(report.l, report.l_direct, epsilon = 1e-12);
        assert!(report.l.is_finite());
    }

    #[test]
    fn m2_equals_collision_entropy_of_xi() {
        let spec = ModelSpec::chain(ModelFamily::Ising1D, 4, 0.8);
        let terms = build_hamiltonian(&spec).unwrap();
        let state =
            ground_state(&terms, &spec.symmetry(), &GroundStateOptions::default()).unwrap();
        let report = exact_sre(&state, &[2.0], &OracleOptions::default()).unwrap();
        let dist = exact_distribution(&state, &OracleOptions::default()).unwrap();
        let collision: f64 = dist.values().map(|&x| x * x).sum();
        let d_pow_n = 2f64.powi(4);
        assert_relative_eq!(report.m(2.0).unwrap(), -(collision * d_pow_n).ln(), epsilon = 1e-12);
    }

    #[test]
    fn subleading_vanishes_for_product_state() {
        let full = DenseState::basis_state(2, 8, 0).unwrap();
        let half = DenseState::basis_state(2, 4, 0).unwrap();
        let c = exact_subleading(&full, &half, 2.0, &OracleOptions::default()).unwrap();
        assert!(c.abs() < 1e-12);
    }

    #[test]
    fn cap_is_enforced() {
        let state = DenseState::basis_state(2, 4, 0).unwrap();
        let err = exact_sre(&state, &[2.0], &OracleOptions { string_cap: 10 });
        assert!(matches!(err, Err(MagicError::EnumerationCap(..))));
    }
}
