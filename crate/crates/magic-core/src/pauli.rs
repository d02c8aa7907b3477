//! Generalized Pauli (Weyl) strings for qudits of dimension 2 or 3.
//!
//! A string is stored as per-site exponent pairs `(a, b)` encoding `X^a Z^b`,
//! together with an integer exponent `phase` of the global phase `ω_{2d}^phase`,
//! where `ω_k = exp(2πi/k)`. Site operators follow the conventions
//! `X|k⟩ = |k+1 mod d⟩` and `Z|k⟩ = ω_d^k |k⟩`, so that
//! `Z^b X^a = ω_d^{ab} X^a Z^b`. The global phase never enters `|⟨P⟩|²` and
//! exists only so that the group law closes exactly.
//!
//! Text encoding (used by logs and config files):
//! * `d = 2` — optional phase prefix (`+`, `-`, `+i`, `-i`) followed by one
//!   letter per site from `IXYZ`. `Y` stands for exponents `(1,1)` with a
//!   phase increment of `+i`, so the parsed operator is the Hermitian Y.
//! * `d = 3` — optional prefix `w^k:` (meaning `ω_6^k`), then per-site tokens
//!   separated by dots: `i`, `x1`, `x2`, `z1`, `z2`, `x1z2`, ... with
//!   exponents in `{1, 2}` and omitted factors equal to zero.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{MagicError, Result};

/// One site of a Weyl string: exponents of `X^a Z^b`.
pub type SiteExponents = (u8, u8);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PauliString {
    d: u8,
    sites: Vec<SiteExponents>,
    /// Exponent of ω_{2d}; irrelevant to every estimator, tracked mod 2d.
    phase: u16,
}

impl PauliString {
    /// All-identity string on `n` sites.
    pub fn identity(n: usize, d: u8) -> Result<Self> {
        check_dim(d)?;
        if n == 0 {
            return Err(MagicError::ShapeMismatch("site count must be ≥ 1".into()));
        }
        Ok(Self { d, sites: vec![(0, 0); n], phase: 0 })
    }

    pub fn from_exponents(d: u8, sites: Vec<SiteExponents>) -> Result<Self> {
        check_dim(d)?;
        if sites.is_empty() {
            return Err(MagicError::ShapeMismatch("site count must be ≥ 1".into()));
        }
        if sites.iter().any(|&(a, b)| a >= d || b >= d) {
            return Err(MagicError::ShapeMismatch(format!("exponents out of range for d = {d}")));
        }
        Ok(Self { d, sites, phase: 0 })
    }

    pub fn d(&self) -> u8 {
        self.d
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site(&self, i: usize) -> SiteExponents {
        self.sites[i]
    }

    pub fn sites(&self) -> &[SiteExponents] {
        &self.sites
    }

    pub fn phase_exponent(&self) -> u16 {
        self.phase
    }

    pub fn set_phase_exponent(&mut self, phase: u16) {
        self.phase = phase % (2 * self.d as u16);
    }

    pub fn is_identity(&self) -> bool {
        self.sites.iter().all(|&s| s == (0, 0))
    }

    /// Number of sites where the string acts non-trivially.
    pub fn weight(&self) -> usize {
        self.sites.iter().filter(|&&s| s != (0, 0)).count()
    }

    /// Complex value of the tracked global phase ω_{2d}^phase.
    pub fn phase_value(&self) -> Complex64 {
        let arg = std::f64::consts::TAU * self.phase as f64 / (2.0 * self.d as f64);
        Complex64::new(arg.cos(), arg.sin())
    }

    /// Group product `self · rhs` with exact phase bookkeeping:
    /// per site, `(X^a Z^b)(X^a' Z^b') = ω_d^{b a'} X^{a+a'} Z^{b+b'}`.
    pub fn multiply(&self, rhs: &Self) -> Result<Self> {
        self.check_same_shape(rhs)?;
        let d = self.d as u16;
        let mut sites = Vec::with_capacity(self.sites.len());
        let mut phase = (self.phase + rhs.phase) % (2 * d);
        for (&(a, b), &(a2, b2)) in self.sites.iter().zip(&rhs.sites) {
            phase = (phase + 2 * ((b as u16 * a2 as u16) % d)) % (2 * d);
            sites.push((((a + a2) % self.d), ((b + b2) % self.d)));
        }
        Ok(Self { d: self.d, sites, phase })
    }

    /// Group inverse: per site `(X^a Z^b)^{-1} = ω_d^{ab} X^{-a} Z^{-b}`.
    pub fn inverse(&self) -> Self {
        let d = self.d as u16;
        let mut phase = (2 * d - self.phase % (2 * d)) % (2 * d);
        let sites = self
            .sites
            .iter()
            .map(|&(a, b)| {
                phase = (phase + 2 * ((a as u16 * b as u16) % d)) % (2 * d);
                (((self.d - a) % self.d), ((self.d - b) % self.d))
            })
            .collect();
        Self { d: self.d, sites, phase }
    }

    /// Sum of X-exponents mod d; zero iff the string commutes with `∏_i Z_i`.
    pub fn x_charge(&self) -> u8 {
        let d = self.d as u32;
        (self.sites.iter().map(|&(a, _)| a as u32).sum::<u32>() % d) as u8
    }

    /// Restriction to a site subset: identity everywhere outside `support`.
    pub fn restrict_to(&self, support: &[usize]) -> Self {
        let mut sites = vec![(0, 0); self.sites.len()];
        for &i in support {
            sites[i] = self.sites[i];
        }
        Self { d: self.d, sites, phase: 0 }
    }

    /// Sub-string on `sites[range]` reindexed from zero; used by the
    /// half-system ratio estimators.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self { d: self.d, sites: self.sites[range].to_vec(), phase: 0 }
    }

    /// Apply the move in place. Caller guarantees the proposal shape.
    pub fn apply_move(&mut self, mv: &MoveProposal) {
        for &(site, a, b) in mv.changes() {
            self.sites[site] = (a, b);
        }
    }

    pub fn with_move(&self, mv: &MoveProposal) -> Self {
        let mut p = self.clone();
        p.apply_move(mv);
        p
    }

    /// `P · v` on a dense amplitude vector of length `d^n`, including the
    /// tracked global phase. Site 0 is the least-significant digit.
    pub fn apply_to_amplitudes(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.sites.len();
        let dim = (self.d as usize).checked_pow(n as u32).ok_or_else(|| {
            MagicError::ShapeMismatch("d^N overflows usize".into())
        })?;
        if v.len() != dim {
            return Err(MagicError::ShapeMismatch(format!(
                "amplitude vector has length {}, expected {}",
                v.len(),
                dim
            )));
        }
        let d = self.d as usize;
        let omega_arg = std::f64::consts::TAU / self.d as f64;
        let omega: Vec<Complex64> = (0..self.d as usize)
            .map(|k| Complex64::from_polar(1.0, omega_arg * k as f64))
            .collect();
        let mut out = vec![Complex64::new(0.0, 0.0); dim];
        // (X^a Z^b)|k⟩ = ω^{bk} |k+a⟩, applied site-by-site via mixed-radix digits.
        for (x, &amp) in v.iter().enumerate() {
            let mut target = 0usize;
            let mut stride = 1usize;
            let mut ph = 0usize;
            let mut rest = x;
            for &(a, b) in &self.sites {
                let k = rest % d;
                rest /= d;
                ph += b as usize * k;
                target += ((k + a as usize) % d) * stride;
                stride *= d;
            }
            out[target] += omega[ph % d] * amp;
        }
        if self.phase != 0 {
            let pv = self.phase_value();
            for z in &mut out {
                *z *= pv;
            }
        }
        Ok(out)
    }

    fn check_same_shape(&self, rhs: &Self) -> Result<()> {
        if self.d != rhs.d || self.sites.len() != rhs.sites.len() {
            return Err(MagicError::ShapeMismatch(format!(
                "strings have shapes (d={}, n={}) vs (d={}, n={})",
                self.d,
                self.sites.len(),
                rhs.d,
                rhs.sites.len()
            )));
        }
        Ok(())
    }

    /// Pack exponents into one integer (site 0 least significant); usable
    /// for histogramming when `d²ⁿ` fits in a `u64`. Phase is not packed.
    pub fn code(&self) -> u64 {
        let dd = (self.d as u64) * (self.d as u64);
        let mut code = 0u64;
        for &(a, b) in self.sites.iter().rev() {
            code = code * dd + (a as u64 + self.d as u64 * b as u64);
        }
        code
    }

    /// Canonical text form; see the module docs for the grammar.
    pub fn encode(&self) -> String {
        let mut s = String::new();
        if self.d == 2 {
            // Fold the i-per-Y convention back out so Y prints as Y.
            let y_count = self.sites.iter().filter(|&&(a, b)| a == 1 && b == 1).count() as u16;
            let prefix = (self.phase + 4 - (y_count % 4)) % 4;
            s.push_str(match prefix {
                0 => "+",
                1 => "+i",
                2 => "-",
                _ => "-i",
            });
            for &(a, b) in &self.sites {
                s.push(match (a, b) {
                    (0, 0) => 'I',
                    (1, 0) => 'X',
                    (0, 1) => 'Z',
                    _ => 'Y',
                });
            }
        } else {
            s.push_str(&format!("w^{}:", self.phase % 6));
            let mut first = true;
            for &(a, b) in &self.sites {
                if !first {
                    s.push('.');
                }
                first = false;
                if (a, b) == (0, 0) {
                    s.push('i');
                } else {
                    if a > 0 {
                        s.push_str(&format!("x{a}"));
                    }
                    if b > 0 {
                        s.push_str(&format!("z{b}"));
                    }
                }
            }
        }
        s
    }

    /// Parse the canonical text form for the given local dimension.
    pub fn decode(text: &str, d: u8) -> Result<Self> {
        check_dim(d)?;
        let bad = |m: &str| MagicError::Parse(format!("{m} in {text:?}"));
        if d == 2 {
            let (mut phase, body): (u16, &str) = if let Some(r) = text.strip_prefix("+i") {
                (1, r)
            } else if let Some(r) = text.strip_prefix("-i") {
                (3, r)
            } else if let Some(r) = text.strip_prefix('+') {
                (0, r)
            } else if let Some(r) = text.strip_prefix('-') {
                (2, r)
            } else {
                (0, text)
            };
            let mut sites = Vec::with_capacity(body.len());
            for c in body.chars() {
                sites.push(match c {
                    'I' => (0, 0),
                    'X' => (1, 0),
                    'Z' => (0, 1),
                    'Y' => {
                        phase = (phase + 1) % 4;
                        (1, 1)
                    }
                    _ => return Err(bad("unexpected token")),
                });
            }
            let mut p = Self::from_exponents(2, sites)?;
            p.phase = phase;
            Ok(p)
        } else {
            let (phase, body) = match text.find(':') {
                Some(pos) => {
                    let head = &text[..pos];
                    let k: u16 = head
                        .strip_prefix("w^")
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("malformed phase prefix"))?;
                    (k % 6, &text[pos + 1..])
                }
                None => (0, text),
            };
            let mut sites = Vec::new();
            for tok in body.split('.') {
                if tok == "i" {
                    sites.push((0, 0));
                    continue;
                }
                let mut a = 0u8;
                let mut b = 0u8;
                let mut chars = tok.chars().peekable();
                while let Some(c) = chars.next() {
                    let e: u8 = chars
                        .next()
                        .and_then(|x| x.to_digit(10))
                        .map(|x| x as u8)
                        .ok_or_else(|| bad("missing exponent"))?;
                    if e == 0 || e >= d {
                        return Err(bad("exponent out of range"));
                    }
                    match c {
                        'x' => a = e,
                        'z' => b = e,
                        _ => return Err(bad("unexpected factor")),
                    }
                }
                sites.push((a, b));
            }
            let mut p = Self::from_exponents(3, sites)?;
            p.phase = phase;
            Ok(p)
        }
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

fn check_dim(d: u8) -> Result<()> {
    if d == 2 || d == 3 {
        Ok(())
    } else {
        Err(MagicError::InvalidLocalDim(d))
    }
}

/// Symmetry sector of the sampled state; decides which strings can have
/// non-zero expectation and which proposal kernel keeps the chain on them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymmetrySector {
    /// No constraint: single- and two-site updates over all exponents.
    None,
    /// `∏_i σ^z_i` conservation (d = 2): even X-charge strings.
    Z2Parity,
    /// `∏_i Z_i` conservation (d = 3): X-charge ≡ 0 mod 3.
    Z3Clock,
    /// Total-magnetization U(1); the conserved Weyl subgroup is the
    /// commutant of `∏_i Z_i`, the same test as the clock sector.
    U1Magnetization,
    /// Z₂ gauge theory on an `lx × ly` torus of links: strings whose
    /// X-content touches every vertex an even number of times.
    GaussLaw { lx: usize, ly: usize },
}

impl SymmetrySector {
    /// True iff every listed generator commutes with `p` (trivial phase).
    pub fn is_symmetric(&self, p: &PauliString) -> bool {
        match self {
            SymmetrySector::None => true,
            SymmetrySector::Z2Parity | SymmetrySector::Z3Clock | SymmetrySector::U1Magnetization => {
                p.x_charge() == 0
            }
            SymmetrySector::GaussLaw { lx, ly } => {
                let geom = crate::lattice::TorusLinks::new(*lx, *ly);
                if p.len() != geom.link_count() {
                    return false;
                }
                (0..geom.vertex_count()).all(|v| {
                    geom.links_at_vertex(v)
                        .iter()
                        .map(|&l| p.site(l).0 as usize)
                        .sum::<usize>()
                        % 2
                        == 0
                })
            }
        }
    }

    pub fn is_constrained(&self) -> bool {
        !matches!(self, SymmetrySector::None)
    }
}

impl fmt::Display for SymmetrySector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymmetrySector::None => write!(f, "none"),
            SymmetrySector::Z2Parity => write!(f, "z2-parity"),
            SymmetrySector::Z3Clock => write!(f, "z3-clock"),
            SymmetrySector::U1Magnetization => write!(f, "u1-magnetization"),
            SymmetrySector::GaussLaw { lx, ly } => write!(f, "gauss-law-{lx}x{ly}"),
        }
    }
}

/// A candidate elementary update: at most two touched sites with their
/// replacement exponents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MoveProposal {
    changes: [(usize, u8, u8); 2],
    len: u8,
}

impl MoveProposal {
    pub fn single(site: usize, a: u8, b: u8) -> Self {
        Self { changes: [(site, a, b), (0, 0, 0)], len: 1 }
    }

    pub fn pair(s1: (usize, u8, u8), s2: (usize, u8, u8)) -> Self {
        debug_assert_ne!(s1.0, s2.0);
        Self { changes: [s1, s2], len: 2 }
    }

    pub fn changes(&self) -> &[(usize, u8, u8)] {
        &self.changes[..self.len as usize]
    }

    pub fn touched_sites(&self) -> impl Iterator<Item = usize> + '_ {
        self.changes().iter().map(|&(s, _, _)| s)
    }

    pub fn is_trivial_for(&self, p: &PauliString) -> bool {
        self.changes().iter().all(|&(s, a, b)| p.site(s) == (a, b))
    }
}

/// Draw a symmetric proposal for the Metropolis kernel.
///
/// * unconstrained — with probability `single_site_fraction` redraw one site
///   uniformly among its `d²−1` other exponent pairs, otherwise redraw two
///   distinct sites the same way;
/// * sector-constrained — either redraw the Z-exponent at one site, or apply
///   `(X^k, X^{−k})` at a random site pair (a random plaquette flip for the
///   Gauss sector), so symmetric strings map to symmetric strings.
///
/// Every branch has equal forward and reverse probability, so the Metropolis
/// rule needs no Hastings correction.
pub fn propose_move<R: Rng + ?Sized>(
    p: &PauliString,
    sector: &SymmetrySector,
    single_site_fraction: f64,
    rng: &mut R,
) -> MoveProposal {
    let pool: Vec<usize> = (0..p.len()).collect();
    propose_move_in(p, sector, single_site_fraction, &pool, rng)
}

/// Like [`propose_move`] but drawing touched sites from `pool` only, so a
/// chain restricted to a subsystem support never leaves it.
pub fn propose_move_in<R: Rng + ?Sized>(
    p: &PauliString,
    sector: &SymmetrySector,
    single_site_fraction: f64,
    pool: &[usize],
    rng: &mut R,
) -> MoveProposal {
    let n = pool.len();
    assert!(n >= 1, "empty proposal pool");
    let d = p.d();
    match sector {
        SymmetrySector::None => {
            if n >= 2 && rng.gen::<f64>() >= single_site_fraction {
                let (i, j) = distinct_pair(n, rng);
                let (i, j) = (pool[i], pool[j]);
                let (a1, b1) = redraw_site(p.site(i), d, rng);
                let (a2, b2) = redraw_site(p.site(j), d, rng);
                MoveProposal::pair((i, a1, b1), (j, a2, b2))
            } else {
                let i = pool[rng.gen_range(0..n)];
                let (a, b) = redraw_site(p.site(i), d, rng);
                MoveProposal::single(i, a, b)
            }
        }
        SymmetrySector::GaussLaw { .. } => {
            // Gauge-side chains are not a production path (those computations
            // run on the dual Ising side); a Z-exponent redraw keeps the
            // Gauss constraint and the ≤ 2-site contract.
            let i = pool[rng.gen_range(0..n)];
            let (a, b) = p.site(i);
            let nb = redraw_exponent(b, d, rng);
            MoveProposal::single(i, a, nb)
        }
        _ => {
            if rng.gen::<f64>() < single_site_fraction || n < 2 {
                let i = pool[rng.gen_range(0..n)];
                let (a, b) = p.site(i);
                let nb = redraw_exponent(b, d, rng);
                MoveProposal::single(i, a, nb)
            } else {
                let (i, j) = distinct_pair(n, rng);
                let (i, j) = (pool[i], pool[j]);
                let k = rng.gen_range(1..d);
                let (a1, b1) = p.site(i);
                let (a2, b2) = p.site(j);
                MoveProposal::pair(
                    (i, (a1 + k) % d, b1),
                    (j, (a2 + d - k) % d, b2),
                )
            }
        }
    }
}

fn redraw_site<R: Rng + ?Sized>(current: SiteExponents, d: u8, rng: &mut R) -> SiteExponents {
    let dd = d as usize * d as usize;
    let cur = current.0 as usize * d as usize + current.1 as usize;
    let mut pick = rng.gen_range(0..dd - 1);
    if pick >= cur {
        pick += 1;
    }
    ((pick / d as usize) as u8, (pick % d as usize) as u8)
}

fn redraw_exponent<R: Rng + ?Sized>(current: u8, d: u8, rng: &mut R) -> u8 {
    let mut pick = rng.gen_range(0..d - 1);
    if pick >= current {
        pick += 1;
    }
    pick
}

fn distinct_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (usize, usize) {
    let i = rng.gen_range(0..n);
    let mut j = rng.gen_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}
