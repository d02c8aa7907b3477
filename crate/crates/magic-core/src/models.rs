//! Declarative model construction: the supported Hamiltonian families as
//! lists of local product terms, their symmetry sectors, and local-operator
//! matrices.
//!
//! A [`HamiltonianTerm`] is a Hermitian unit: `coeff · ∏ factors` or
//! `coeff · (∏ factors + h.c.)`. For computation the list flattens to
//! [`ProductTerm`]s with strictly real matrices (imaginary factors such as
//! `S^y` are folded in pairs), which is what the dense matvec and the tree
//! environments consume.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{MagicError, Result};
use crate::lattice::{self, Boundary};
use crate::pauli::SymmetrySector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFamily {
    Ising1D,
    Clock3,
    XXZSpin1,
    Ising2D,
    Z2Gauge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Lattice {
    Chain { l: usize },
    Square { lx: usize, ly: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    /// Transverse field (Ising, clock, gauge families).
    #[serde(default)]
    pub h: f64,
    /// Easy-axis anisotropy Δ (XXZ).
    #[serde(default)]
    pub delta: f64,
    /// Single-ion anisotropy D (XXZ).
    #[serde(default)]
    pub dee: f64,
    pub lattice: Lattice,
    pub boundary: Boundary,
}

impl ModelSpec {
    pub fn chain(family: ModelFamily, l: usize, h: f64) -> Self {
        Self { family, h, delta: 0.0, dee: 0.0, lattice: Lattice::Chain { l }, boundary: Boundary::Periodic }
    }

    pub fn square(family: ModelFamily, lx: usize, ly: usize, h: f64) -> Self {
        Self { family, h, delta: 0.0, dee: 0.0, lattice: Lattice::Square { lx, ly }, boundary: Boundary::Periodic }
    }

    pub fn xxz(l: usize, delta: f64, dee: f64) -> Self {
        Self {
            family: ModelFamily::XXZSpin1,
            h: 0.0,
            delta,
            dee,
            lattice: Lattice::Chain { l },
            boundary: Boundary::Periodic,
        }
    }

    pub fn local_dim(&self) -> u8 {
        match self.family {
            ModelFamily::Clock3 | ModelFamily::XXZSpin1 => 3,
            _ => 2,
        }
    }

    /// Number of qudits carrying the state (gauge spins live on links).
    pub fn site_count(&self) -> usize {
        match (self.family, self.lattice) {
            (ModelFamily::Z2Gauge, Lattice::Square { lx, ly }) => 2 * lx * ly,
            (_, Lattice::Chain { l }) => l,
            (_, Lattice::Square { lx, ly }) => lx * ly,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(MagicError::InvalidModel(m));
        match (self.family, self.lattice) {
            (ModelFamily::Ising1D | ModelFamily::Clock3 | ModelFamily::XXZSpin1, Lattice::Chain { l }) => {
                if l < 2 {
                    return err(format!("chain length {l} < 2"));
                }
            }
            (ModelFamily::Ising2D | ModelFamily::Z2Gauge, Lattice::Square { lx, ly }) => {
                if lx < 2 || ly < 2 {
                    return err(format!("square lattice {lx}x{ly} too small"));
                }
                if self.family == ModelFamily::Z2Gauge && self.boundary != Boundary::Periodic {
                    return err("the gauge theory is defined on a torus only".into());
                }
            }
            (f, l) => return err(format!("family {f:?} does not fit lattice {l:?}")),
        }
        Ok(())
    }

    pub fn symmetry(&self) -> SymmetrySector {
        symmetry_of(self)
    }
}

/// One Hermitian term: `coeff · ∏ factors` (`plus_hc` adds the conjugate).
#[derive(Debug, Clone)]
pub struct HamiltonianTerm {
    pub coeff: f64,
    pub factors: Vec<(usize, LocalOp)>,
    pub plus_hc: bool,
}

#[derive(Debug, Clone)]
pub struct LocalOp {
    pub label: &'static str,
    pub mat: Array2<Complex64>,
}

#[derive(Debug, Clone)]
pub struct HamiltonianTerms {
    pub d: u8,
    pub n_sites: usize,
    pub terms: Vec<HamiltonianTerm>,
}

/// A single product of strictly real local matrices; the form consumed by
/// the dense matvec and by tree-environment coarse-graining.
#[derive(Debug, Clone)]
pub struct ProductTerm {
    pub coeff: f64,
    pub factors: Vec<(usize, Array2<f64>)>,
}

impl HamiltonianTerms {
    /// Flatten Hermitian units into real product terms. Purely imaginary
    /// factors (like `S^y`) are extracted as `i·B` and the `i`s folded into
    /// the coefficient, which must come out real.
    pub fn product_terms(&self) -> Result<Vec<ProductTerm>> {
        let mut out = Vec::new();
        for term in &self.terms {
            if term.plus_hc && term.factors.len() == 1 && !is_pure(&term.factors[0].1.mat) {
                // single-site M + M† is Hermitian; store it as one real matrix
                let (site, op) = (&term.factors[0].0, &term.factors[0].1);
                let m = &op.mat + &op.mat.t().mapv(|z| z.conj());
                out.push(ProductTerm { coeff: term.coeff, factors: vec![(*site, realify(&m)?)] });
                continue;
            }
            out.push(fold_product(term.coeff, &term.factors, false)?);
            if term.plus_hc {
                out.push(fold_product(term.coeff, &term.factors, true)?);
            }
        }
        Ok(out)
    }

    /// Dense matrix of the full Hamiltonian; for small systems and tests.
    pub fn dense_matrix(&self) -> Result<Array2<Complex64>> {
        let dim = (self.d as usize)
            .checked_pow(self.n_sites as u32)
            .filter(|&x| x <= 1 << 16)
            .ok_or_else(|| MagicError::Unsupported("dense matrix only at small N".into()))?;
        let d = self.d as usize;
        let mut h = Array2::<Complex64>::zeros((dim, dim));
        for term in self.product_terms()? {
            for col in 0..dim {
                // scatter column `col` of the term into h by digit replacement
                let mut entries: Vec<(usize, f64)> = vec![(col, term.coeff)];
                for &(site, ref m) in &term.factors {
                    let stride = d.pow(site as u32);
                    let kin = (col / stride) % d;
                    let mut next = Vec::with_capacity(entries.len() * d);
                    for &(row, amp) in &entries {
                        for kout in 0..d {
                            let val = m[(kout, kin)];
                            if val != 0.0 {
                                next.push((row - kin * stride + kout * stride, amp * val));
                            }
                        }
                    }
                    entries = next;
                }
                for (row, amp) in entries {
                    h[(row, col)] += Complex64::new(amp, 0.0);
                }
            }
        }
        Ok(h)
    }
}

fn is_pure(m: &Array2<Complex64>) -> bool {
    let re: f64 = m.iter().map(|z| z.re.abs()).sum();
    let im: f64 = m.iter().map(|z| z.im.abs()).sum();
    re < 1e-14 || im < 1e-14
}

fn realify(m: &Array2<Complex64>) -> Result<Array2<f64>> {
    if m.iter().any(|z| z.im.abs() > 1e-12) {
        return Err(MagicError::Unsupported("operator is not real".into()));
    }
    Ok(m.mapv(|z| z.re))
}

fn fold_product(coeff: f64, factors: &[(usize, LocalOp)], adjoint: bool) -> Result<ProductTerm> {
    let mut i_count = 0usize;
    let mut real_factors = Vec::with_capacity(factors.len());
    for (site, op) in factors {
        let m = if adjoint { op.mat.t().mapv(|z| z.conj()) } else { op.mat.clone() };
        let re_norm: f64 = m.iter().map(|z| z.re.abs()).sum();
        let im_norm: f64 = m.iter().map(|z| z.im.abs()).sum();
        if im_norm < 1e-14 {
            real_factors.push((*site, m.mapv(|z| z.re)));
        } else if re_norm < 1e-14 {
            i_count += 1;
            real_factors.push((*site, m.mapv(|z| z.im)));
        } else {
            return Err(MagicError::Unsupported(format!(
                "mixed real/imaginary local operator {} cannot be folded",
                op.label
            )));
        }
    }
    if i_count % 2 != 0 {
        return Err(MagicError::Unsupported(
            "product with an odd number of imaginary factors is not real".into(),
        ));
    }
    let sign = if (i_count / 2) % 2 == 0 { 1.0 } else { -1.0 };
    Ok(ProductTerm { coeff: coeff * sign, factors: real_factors })
}

// ---------------------------------------------------------------------------
// local operator matrices

pub fn sigma_x() -> LocalOp {
    LocalOp { label: "sx", mat: carr2(&[[0., 1.], [1., 0.]]) }
}

pub fn sigma_z() -> LocalOp {
    LocalOp { label: "sz", mat: carr2(&[[1., 0.], [0., -1.]]) }
}

/// Qutrit shift `X|k⟩ = |k+1 mod 3⟩`.
pub fn clock_x() -> LocalOp {
    let mut m = Array2::zeros((3, 3));
    for k in 0..3 {
        m[((k + 1) % 3, k)] = Complex64::new(1.0, 0.0);
    }
    LocalOp { label: "X", mat: m }
}

/// Qutrit clock `Z = diag(1, ω, ω²)`, `ω = exp(2πi/3)`.
pub fn clock_z() -> LocalOp {
    let mut m = Array2::zeros((3, 3));
    for k in 0..3 {
        m[(k, k)] = Complex64::from_polar(1.0, std::f64::consts::TAU * k as f64 / 3.0);
    }
    LocalOp { label: "Z", mat: m }
}

/// Spin-1 operators in the `m = +1, 0, −1` basis (k = 0, 1, 2).
pub fn spin1_sx() -> LocalOp {
    let s = 1.0 / 2f64.sqrt();
    LocalOp { label: "Sx", mat: carr2(&[[0., s, 0.], [s, 0., s], [0., s, 0.]]) }
}

pub fn spin1_sy() -> LocalOp {
    let s = 1.0 / 2f64.sqrt();
    let mut m = Array2::zeros((3, 3));
    m[(0, 1)] = Complex64::new(0.0, -s);
    m[(1, 0)] = Complex64::new(0.0, s);
    m[(1, 2)] = Complex64::new(0.0, -s);
    m[(2, 1)] = Complex64::new(0.0, s);
    LocalOp { label: "Sy", mat: m }
}

pub fn spin1_sz() -> LocalOp {
    LocalOp { label: "Sz", mat: carr2(&[[1., 0., 0.], [0., 0., 0.], [0., 0., -1.]]) }
}

pub fn spin1_sz2() -> LocalOp {
    LocalOp { label: "Sz2", mat: carr2(&[[1., 0., 0.], [0., 0., 0.], [0., 0., 1.]]) }
}

fn carr2<const N: usize>(rows: &[[f64; N]; N]) -> Array2<Complex64> {
    Array2::from_shape_fn((N, N), |(i, j)| Complex64::new(rows[i][j], 0.0))
}

// ---------------------------------------------------------------------------
// builders

pub fn build_hamiltonian(spec: &ModelSpec) -> Result<HamiltonianTerms> {
    spec.validate()?;
    let n = spec.site_count();
    let mut terms = Vec::new();
    match spec.family {
        ModelFamily::Ising1D | ModelFamily::Ising2D => {
            let bonds = model_bonds(spec);
            for (i, j) in bonds {
                terms.push(HamiltonianTerm {
                    coeff: -1.0,
                    factors: vec![(i, sigma_x()), (j, sigma_x())],
                    plus_hc: false,
                });
            }
            for i in 0..n {
                terms.push(HamiltonianTerm {
                    coeff: -spec.h,
                    factors: vec![(i, sigma_z())],
                    plus_hc: false,
                });
            }
        }
        ModelFamily::Clock3 => {
            for (i, j) in model_bonds(spec) {
                let mut xdag = clock_x();
                xdag.mat = xdag.mat.t().mapv(|z| z.conj());
                xdag.label = "Xdag";
                terms.push(HamiltonianTerm {
                    coeff: -1.0,
                    factors: vec![(i, clock_x()), (j, xdag)],
                    plus_hc: true,
                });
            }
            for i in 0..n {
                terms.push(HamiltonianTerm {
                    coeff: -spec.h,
                    factors: vec![(i, clock_z())],
                    plus_hc: true,
                });
            }
        }
        ModelFamily::XXZSpin1 => {
            for (i, j) in model_bonds(spec) {
                terms.push(HamiltonianTerm {
                    coeff: -1.0,
                    factors: vec![(i, spin1_sx()), (j, spin1_sx())],
                    plus_hc: false,
                });
                terms.push(HamiltonianTerm {
                    coeff: -1.0,
                    factors: vec![(i, spin1_sy()), (j, spin1_sy())],
                    plus_hc: false,
                });
                terms.push(HamiltonianTerm {
                    coeff: -spec.delta,
                    factors: vec![(i, spin1_sz()), (j, spin1_sz())],
                    plus_hc: false,
                });
            }
            for i in 0..n {
                terms.push(HamiltonianTerm {
                    coeff: spec.dee,
                    factors: vec![(i, spin1_sz2())],
                    plus_hc: false,
                });
            }
        }
        ModelFamily::Z2Gauge => {
            let Lattice::Square { lx, ly } = spec.lattice else { unreachable!() };
            let geom = lattice::TorusLinks::new(lx, ly);
            for p in 0..geom.plaquette_count() {
                let links = geom.plaquette_links(p);
                terms.push(HamiltonianTerm {
                    coeff: -spec.h,
                    factors: links.iter().map(|&l| (l, sigma_x())).collect(),
                    plus_hc: false,
                });
            }
            for l in 0..geom.link_count() {
                terms.push(HamiltonianTerm {
                    coeff: -1.0,
                    factors: vec![(l, sigma_z())],
                    plus_hc: false,
                });
            }
        }
    }
    Ok(HamiltonianTerms { d: spec.local_dim(), n_sites: n, terms })
}

fn model_bonds(spec: &ModelSpec) -> Vec<(usize, usize)> {
    match spec.lattice {
        Lattice::Chain { l } => lattice::chain_bonds(l, spec.boundary),
        Lattice::Square { lx, ly } => lattice::square_bonds(lx, ly, spec.boundary),
    }
}

pub fn symmetry_of(spec: &ModelSpec) -> SymmetrySector {
    match (spec.family, spec.lattice) {
        (ModelFamily::Ising1D | ModelFamily::Ising2D, _) => SymmetrySector::Z2Parity,
        (ModelFamily::Clock3, _) => SymmetrySector::Z3Clock,
        (ModelFamily::XXZSpin1, _) => SymmetrySector::U1Magnetization,
        (ModelFamily::Z2Gauge, Lattice::Square { lx, ly }) => SymmetrySector::GaussLaw { lx, ly },
        (ModelFamily::Z2Gauge, _) => SymmetrySector::None,
    }
}
