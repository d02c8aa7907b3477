//! Wegner duality between the transverse-field Ising model on the dual
//! lattice and the Z₂ gauge theory on torus links.
//!
//! Generator dictionary: `σ^z_p ↦ ∏_{l ∈ □_p} τ^x_l` (the plaquette around
//! dual site p) and `σ^x_i σ^x_j ↦ τ^z_{⟨ij⟩}` (the link crossed by the dual
//! bond). An X-pattern with an even number of marked sites maps through
//! fixed defect paths to the origin, which makes the map linear over GF(2)
//! and hence a homomorphism up to phase. Odd X-charge operators are not
//! Z₂-even and have no image.

use crate::error::{MagicError, Result};
use crate::lattice::TorusLinks;
use crate::pauli::PauliString;

/// Map a Pauli string on the `lx × ly` dual (Ising) sites to a string on
/// the `2·lx·ly` gauge links.
pub fn dual_map(p: &PauliString, lx: usize, ly: usize) -> Result<PauliString> {
    if p.d() != 2 {
        return Err(MagicError::InvalidLocalDim(p.d()));
    }
    if p.len() != lx * ly {
        return Err(MagicError::ShapeMismatch(format!(
            "string has {} sites, dual lattice has {}",
            p.len(),
            lx * ly
        )));
    }
    if p.x_charge() != 0 {
        return Err(MagicError::NotDualizable(
            "odd σ^x charge (e.g. a single isolated σ^x) is not Z₂-even".into(),
        ));
    }
    let geom = TorusLinks::new(lx, ly);
    let mut a = vec![0u8; geom.link_count()]; // τ^x exponents
    let mut b = vec![0u8; geom.link_count()]; // τ^z exponents

    for (site, &(ax, bz)) in p.sites().iter().enumerate() {
        if bz == 1 {
            for l in geom.plaquette_links(site) {
                a[l] ^= 1;
            }
        }
        if ax == 1 {
            for l in defect_path_to_origin(site, lx, ly) {
                b[l] ^= 1;
            }
        }
    }
    PauliString::from_exponents(2, a.into_iter().zip(b).collect())
}

/// τ^z links of the canonical defect string from a dual site to the origin:
/// first walk x down to 0, then y down to 0. An x-step (x,y) → (x−1,y)
/// crosses link (x, y, +y); a y-step (x,y) → (x,y−1) crosses (x, y, +x).
fn defect_path_to_origin(site: usize, lx: usize, ly: usize) -> Vec<usize> {
    let geom = TorusLinks::new(lx, ly);
    let (mut x, mut y) = (site % lx, site / lx);
    let mut links = Vec::new();
    while x > 0 {
        links.push(geom.link(x, y, 1));
        x -= 1;
    }
    while y > 0 {
        links.push(geom.link(x, y, 0));
        y -= 1;
    }
    links
}
