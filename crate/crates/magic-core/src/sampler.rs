//! Metropolis Markov chains over Pauli strings and the estimators built on
//! their output.
//!
//! A chain owns one primary [`PauliTracker`] (its value drives acceptance)
//! plus optional auxiliary trackers recorded at sample time: subsystem
//! factors for the ratio estimators, and half-system expectations on an
//! independently prepared half-size state for the subleading term. Proposals
//! are symmetric, so acceptance is `min(1, (|⟨P'⟩|²/|⟨P⟩|²)^n)` with no
//! Hastings correction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::analysis::{self, EstimatorResult};
use crate::dense::DenseState;
use crate::error::{MagicError, Result};
use crate::models::ModelSpec;
use crate::oracle::{self, OracleOptions};
use crate::pauli::{propose_move_in, MoveProposal, PauliString, SymmetrySector};
use crate::ttn::{LinkOperatorCache, TtnState};

// ---------------------------------------------------------------------------
// targets and configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    /// Ξ_P ∝ |⟨P⟩|² on the full lattice.
    Xi,
    /// Ξ̃_P ∝ |⟨P⟩|² for strings supported on a subsystem.
    XiTilde,
    /// Π_{P,n} ∝ |⟨P⟩|^{2n}.
    PiN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDistribution {
    pub kind: TargetKind,
    /// Proposal/string support; `None` means the full lattice.
    pub support: Option<Vec<usize>>,
    /// Rényi exponent for `PiN`; ignored for the others.
    pub n: f64,
}

impl TargetDistribution {
    pub fn xi_full() -> Self {
        Self { kind: TargetKind::Xi, support: None, n: 1.0 }
    }

    pub fn xi_tilde(support: Vec<usize>) -> Self {
        Self { kind: TargetKind::XiTilde, support: Some(support), n: 1.0 }
    }

    pub fn pi_n(n: f64, support: Option<Vec<usize>>) -> Self {
        Self { kind: TargetKind::PiN, support, n }
    }

    /// Exponent n in the acceptance ratio `(p2'/p2)^n`.
    pub fn exponent(&self) -> f64 {
        match self.kind {
            TargetKind::Xi | TargetKind::XiTilde => 1.0,
            TargetKind::PiN => self.n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Retained samples.
    pub n_samples: usize,
    /// Discarded leading steps.
    pub burn_in: usize,
    /// Keep every `thinning`-th step (default 1: keep all).
    pub thinning: usize,
    /// Fraction of single-site proposals in the move mix.
    pub single_site_fraction: f64,
    pub seed: u64,
    /// Also record packed string codes (diagnostics; needs d^{2N} ≤ 2^64).
    pub record_string_codes: bool,
}

impl ChainConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            burn_in: 0,
            thinning: 1,
            single_site_fraction: 0.5,
            seed,
            record_string_codes: false,
        }
    }

    /// Default burn-in of 10·N steps.
    pub fn with_default_burn_in(mut self, n_sites: usize) -> Self {
        self.burn_in = 10 * n_sites;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(MagicError::Chain("n_samples must be ≥ 1".into()));
        }
        if self.thinning == 0 {
            return Err(MagicError::Chain("thinning must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.single_site_fraction) {
            return Err(MagicError::Chain("move mix fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// expectation trackers

/// How a tracker derives its string from the chain's full-lattice string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Extract {
    /// The string as-is.
    Identity,
    /// Identity outside the listed sites.
    Restrict(Vec<usize>),
    /// Reindex sites [offset, offset+m) onto a smaller state of m sites.
    Window { offset: usize, len: usize },
}

impl Extract {
    fn touches(&self, mv: &MoveProposal) -> bool {
        match self {
            Extract::Identity => true,
            Extract::Restrict(sites) => mv.touched_sites().any(|s| sites.contains(&s)),
            Extract::Window { offset, len } => {
                mv.touched_sites().any(|s| s >= *offset && s < offset + len)
            }
        }
    }

    fn extract(&self, p: &PauliString) -> PauliString {
        match self {
            Extract::Identity => p.clone(),
            Extract::Restrict(sites) => p.restrict_to(sites),
            Extract::Window { offset, len } => p.slice(*offset..offset + len),
        }
    }
}

/// Incremental view of `|⟨P⟩|²` for the chain's evolving string.
pub trait PauliTracker {
    /// Full (re)initialization from the incumbent string; returns p².
    fn reset(&mut self, p: &PauliString) -> Result<f64>;
    /// Value for the candidate string; must leave committed state intact.
    fn propose(&mut self, candidate: &PauliString, mv: &MoveProposal) -> Result<f64>;
    fn commit(&mut self);
    fn discard(&mut self);
    fn current_p2(&self) -> f64;
}

/// Tracker over a dense state: every evaluation is a fresh statevector pass.
pub struct DenseTracker<'a> {
    state: &'a DenseState,
    extract: Extract,
    current: f64,
    candidate: Option<f64>,
}

impl<'a> DenseTracker<'a> {
    pub fn new(state: &'a DenseState, extract: Extract) -> Self {
        Self { state, extract, current: f64::NAN, candidate: None }
    }

    fn evaluate(&self, p: &PauliString) -> Result<f64> {
        let sub = self.extract.extract(p);
        Ok(self.state.expectation(&sub, None)?.norm_sqr())
    }
}

impl PauliTracker for DenseTracker<'_> {
    fn reset(&mut self, p: &PauliString) -> Result<f64> {
        self.current = self.evaluate(p)?;
        self.candidate = None;
        Ok(self.current)
    }

    fn propose(&mut self, candidate: &PauliString, mv: &MoveProposal) -> Result<f64> {
        let value = if self.extract.touches(mv) {
            self.evaluate(candidate)?
        } else {
            self.current
        };
        self.candidate = Some(value);
        Ok(value)
    }

    fn commit(&mut self) {
        if let Some(v) = self.candidate.take() {
            self.current = v;
        }
    }

    fn discard(&mut self) {
        self.candidate = None;
    }

    fn current_p2(&self) -> f64 {
        self.current
    }
}

/// Tracker over a tree state: incremental path updates through a private
/// link-operator cache.
pub struct TtnTracker<'a> {
    state: &'a TtnState,
    cache: Option<LinkOperatorCache>,
    extract: Extract,
    current: f64,
    candidate: Option<f64>,
}

impl<'a> TtnTracker<'a> {
    pub fn new(state: &'a TtnState, extract: Extract) -> Self {
        Self { state, cache: None, extract, current: f64::NAN, candidate: None }
    }

    /// Map a full-lattice move onto the extracted string's coordinates.
    fn extract_move(&self, mv: &MoveProposal, candidate: &PauliString) -> Vec<usize> {
        match &self.extract {
            Extract::Identity => mv.touched_sites().collect(),
            Extract::Restrict(sites) => {
                mv.touched_sites().filter(|s| sites.contains(s)).collect()
            }
            Extract::Window { offset, len } => {
                let _ = candidate;
                mv.touched_sites()
                    .filter(|s| s >= offset && *s < offset + len)
                    .map(|s| s - offset)
                    .collect()
            }
        }
    }
}

impl PauliTracker for TtnTracker<'_> {
    fn reset(&mut self, p: &PauliString) -> Result<f64> {
        let sub = self.extract.extract(p);
        let cache = LinkOperatorCache::new(self.state, &sub)?;
        self.current = cache.expectation_cached(self.state, &sub)?.norm_sqr();
        self.cache = Some(cache);
        self.candidate = None;
        Ok(self.current)
    }

    fn propose(&mut self, candidate: &PauliString, mv: &MoveProposal) -> Result<f64> {
        let value = if self.extract.touches(mv) {
            let sub = self.extract.extract(candidate);
            let sites = self.extract_move(mv, candidate);
            let cache = self.cache.as_mut().expect("tracker not reset");
            cache.propose(self.state, &sub, &sites)?.norm_sqr()
        } else {
            self.current
        };
        self.candidate = Some(value);
        Ok(value)
    }

    fn commit(&mut self) {
        if let Some(v) = self.candidate.take() {
            if let Some(cache) = self.cache.as_mut() {
                cache.commit(self.state);
            }
            self.current = v;
        }
    }

    fn discard(&mut self) {
        if self.candidate.take().is_some() {
            if let Some(cache) = self.cache.as_mut() {
                cache.discard();
            }
        }
    }

    fn current_p2(&self) -> f64 {
        self.current
    }
}

// ---------------------------------------------------------------------------
// chain record

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainMeta {
    pub d: u8,
    pub n_sites: usize,
    pub target: TargetDistribution,
    pub sector: SymmetrySector,
    pub config: ChainConfig,
    pub acceptance_rate: f64,
    pub warnings: Vec<String>,
    /// Column labels for `columns`, in order.
    pub labels: Vec<String>,
}

/// Columnar chain output: per retained sample a step index, the log of the
/// target value, optional factor columns (also logs), and whether the step
/// that produced it was accepted.
#[derive(Debug, Clone)]
pub struct ChainRecord {
    pub meta: ChainMeta,
    pub steps: Vec<u64>,
    /// `columns[k][i]` is ln of the k-th tracked p² at sample i.
    pub columns: Vec<Vec<f64>>,
    pub accepted: Vec<bool>,
    pub string_codes: Option<Vec<u64>>,
}

impl ChainRecord {
    pub fn column(&self, label: &str) -> Option<&[f64]> {
        self.meta
            .labels
            .iter()
            .position(|l| l == label)
            .map(|k| self.columns[k].as_slice())
    }

    pub fn log_p2(&self) -> &[f64] {
        self.column("log_p2").expect("primary column always present")
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let meta = serde_json::to_string(&self.meta).map_err(|e| MagicError::Format(e.to_string()))?;
        writeln!(f, "#MGCHAIN1 {meta}")?;
        let mut header = vec!["step".to_string()];
        header.extend(self.meta.labels.iter().cloned());
        header.push("accepted".into());
        if self.string_codes.is_some() {
            header.push("string_code".into());
        }
        writeln!(f, "{}", header.join(","))?;
        for i in 0..self.steps.len() {
            write!(f, "{}", self.steps[i])?;
            for col in &self.columns {
                write!(f, ",{:.17e}", col[i])?;
            }
            write!(f, ",{}", u8::from(self.accepted[i]))?;
            if let Some(codes) = &self.string_codes {
                write!(f, ",{}", codes[i])?;
            }
            writeln!(f)?;
        }
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let head = lines
            .next()
            .ok_or_else(|| MagicError::Format("empty chain file".into()))??;
        let meta: ChainMeta = head
            .strip_prefix("#MGCHAIN1 ")
            .ok_or_else(|| MagicError::Format("bad chain-file header".into()))
            .and_then(|j| serde_json::from_str(j).map_err(|e| MagicError::Format(e.to_string())))?;
        let header = lines
            .next()
            .ok_or_else(|| MagicError::Format("missing column header".into()))??;
        let has_codes = header.trim_end().ends_with("string_code");
        let ncols = meta.labels.len();
        let mut steps = Vec::new();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); ncols];
        let mut accepted = Vec::new();
        let mut codes = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| MagicError::Format("short row".into()))?
                    .parse()
                    .map_err(|e| MagicError::Format(format!("bad number: {e}")))
            };
            steps.push(parse(parts.next())? as u64);
            for col in columns.iter_mut() {
                col.push(parse(parts.next())?);
            }
            accepted.push(parse(parts.next())? != 0.0);
            if has_codes {
                codes.push(parse(parts.next())? as u64);
            }
        }
        Ok(Self {
            meta,
            steps,
            columns,
            accepted,
            string_codes: if has_codes { Some(codes) } else { None },
        })
    }
}

// ---------------------------------------------------------------------------
// the Metropolis driver

/// Run a Metropolis chain. `trackers[0]` is the primary (acceptance) value;
/// the remaining trackers are recorded under the matching extra label.
pub fn run_chain_with_trackers(
    trackers: &mut [&mut dyn PauliTracker],
    extra_labels: &[&str],
    d: u8,
    n_sites: usize,
    target: &TargetDistribution,
    sector: &SymmetrySector,
    config: &ChainConfig,
) -> Result<ChainRecord> {
    config.validate()?;
    assert_eq!(trackers.len(), extra_labels.len() + 1);
    let pool: Vec<usize> = match &target.support {
        None => (0..n_sites).collect(),
        Some(sites) => {
            if sites.is_empty() {
                return Err(MagicError::Chain("empty support".into()));
            }
            sites.clone()
        }
    };
    let exponent = target.exponent();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

    let mut p = PauliString::identity(n_sites, d)?;
    let mut p2 = f64::NAN;
    for t in trackers.iter_mut() {
        p2 = t.reset(&p)?;
    }
    let _ = p2;
    p2 = trackers[0].current_p2();
    if p2 <= 0.0 {
        return Err(MagicError::Chain("initial string has zero target probability".into()));
    }

    let total_steps = config.burn_in + config.n_samples * config.thinning;
    let mut accepted_count = 0u64;
    let mut window_accepts = 0u64;
    let mut warnings = Vec::new();
    let mut steps = Vec::with_capacity(config.n_samples);
    let mut columns: Vec<Vec<f64>> =
        vec![Vec::with_capacity(config.n_samples); trackers.len()];
    let mut accepted_col = Vec::with_capacity(config.n_samples);
    let mut codes = if config.record_string_codes { Some(Vec::new()) } else { None };
    const STALL_WINDOW: u64 = 10_000;

    for step in 0..total_steps as u64 {
        let mv = propose_move_in(&p, sector, config.single_site_fraction, &pool, &mut rng);
        let candidate = p.with_move(&mv);
        let cand_p2 = trackers[0].propose(&candidate, &mv)?;
        // re-read the incumbent: measurement-noise trackers may refresh it
        p2 = trackers[0].current_p2();
        let ratio = if cand_p2 <= 0.0 {
            0.0
        } else {
            (cand_p2 / p2).powf(exponent)
        };
        let accept = ratio >= 1.0 || rng.gen::<f64>() < ratio;
        if accept {
            for t in trackers[1..].iter_mut() {
                t.propose(&candidate, &mv)?;
            }
            for t in trackers.iter_mut() {
                t.commit();
            }
            p = candidate;
            p2 = cand_p2;
            accepted_count += 1;
            window_accepts += 1;
        } else {
            trackers[0].discard();
        }
        if sector.is_constrained() {
            debug_assert!(sector.is_symmetric(&p));
        }

        if step >= config.burn_in as u64
            && (step - config.burn_in as u64 + 1) % config.thinning as u64 == 0
        {
            steps.push(step);
            for (k, t) in trackers.iter().enumerate() {
                columns[k].push(t.current_p2().max(f64::MIN_POSITIVE).ln());
            }
            accepted_col.push(accept);
            if let Some(c) = codes.as_mut() {
                c.push(p.code());
            }
        }

        if (step + 1) % STALL_WINDOW == 0 {
            if window_accepts == 0 || (window_accepts as f64) < 0.001 * STALL_WINDOW as f64 {
                warnings.push(format!(
                    "acceptance below 0.1% in the {} steps ending at {}",
                    STALL_WINDOW,
                    step + 1
                ));
            }
            window_accepts = 0;
        }
    }

    let mut labels = vec!["log_p2".to_string()];
    labels.extend(extra_labels.iter().map(|s| s.to_string()));
    Ok(ChainRecord {
        meta: ChainMeta {
            d,
            n_sites,
            target: target.clone(),
            sector: sector.clone(),
            config: config.clone(),
            acceptance_rate: accepted_count as f64 / total_steps as f64,
            warnings,
            labels,
        },
        steps,
        columns,
        accepted: accepted_col,
        string_codes: codes,
    })
}

/// Plain chain on a dense state.
pub fn run_chain_dense(
    state: &DenseState,
    target: &TargetDistribution,
    sector: &SymmetrySector,
    config: &ChainConfig,
) -> Result<ChainRecord> {
    let extract = match &target.support {
        None => Extract::Identity,
        Some(sites) => Extract::Restrict(sites.clone()),
    };
    let mut primary = DenseTracker::new(state, extract);
    run_chain_with_trackers(
        &mut [&mut primary],
        &[],
        state.d(),
        state.n(),
        target,
        sector,
        config,
    )
}

/// Chain on `A ∪ B` recording the per-factor subsystem values needed by the
/// long-range estimators.
pub fn run_chain_dense_long_range(
    state: &DenseState,
    part_a: &[usize],
    part_b: &[usize],
    target: &TargetDistribution,
    sector: &SymmetrySector,
    config: &ChainConfig,
) -> Result<ChainRecord> {
    let mut support: Vec<usize> = part_a.iter().chain(part_b).cloned().collect();
    support.sort_unstable();
    let expected: Option<Vec<usize>> = Some(support.clone());
    if target.support != expected {
        return Err(MagicError::Chain("target support must equal A ∪ B".into()));
    }
    let mut primary = DenseTracker::new(state, Extract::Restrict(support));
    let mut fa = DenseTracker::new(state, Extract::Restrict(part_a.to_vec()));
    let mut fb = DenseTracker::new(state, Extract::Restrict(part_b.to_vec()));
    run_chain_with_trackers(
        &mut [&mut primary, &mut fa, &mut fb],
        &["log_pa2", "log_pb2"],
        state.d(),
        state.n(),
        target,
        sector,
        config,
    )
}

/// Chain on the size-N state tracking the two halves of each string on an
/// independently prepared size-N/2 state.
pub fn run_chain_dense_subleading(
    state_full: &DenseState,
    state_half: &DenseState,
    target: &TargetDistribution,
    sector: &SymmetrySector,
    config: &ChainConfig,
) -> Result<ChainRecord> {
    let n = state_full.n();
    if n % 2 != 0 || state_half.n() * 2 != n {
        return Err(MagicError::Chain("subleading chains need sizes N and N/2".into()));
    }
    let mut primary = DenseTracker::new(state_full, Extract::Identity);
    let mut h1 = DenseTracker::new(state_half, Extract::Window { offset: 0, len: n / 2 });
    let mut h2 = DenseTracker::new(state_half, Extract::Window { offset: n / 2, len: n / 2 });
    run_chain_with_trackers(
        &mut [&mut primary, &mut h1, &mut h2],
        &["log_ph1", "log_ph2"],
        state_full.d(),
        n,
        target,
        sector,
        config,
    )
}

/// Plain chain on a tree state with incremental cache updates.
pub fn run_chain_ttn(
    state: &TtnState,
    target: &TargetDistribution,
    sector: &SymmetrySector,
    config: &ChainConfig,
) -> Result<ChainRecord> {
    let extract = match &target.support {
        None => Extract::Identity,
        Some(sites) => Extract::Restrict(sites.clone()),
    };
    let mut primary = TtnTracker::new(state, extract);
    run_chain_with_trackers(
        &mut [&mut primary],
        &[],
        state.d(),
        state.n_sites(),
        target,
        sector,
        config,
    )
}

/// Long-range chain on a tree state; every tracker owns its own cache.
pub fn run_chain_ttn_long_range(
    state: &TtnState,
    part_a: &[usize],
    part_b: &[usize],
    target: &TargetDistribution,
    sector: &SymmetrySector,
    config: &ChainConfig,
) -> Result<ChainRecord> {
    let mut support: Vec<usize> = part_a.iter().chain(part_b).cloned().collect();
    support.sort_unstable();
    if target.support.as_deref() != Some(support.as_slice()) {
        return Err(MagicError::Chain("target support must equal A ∪ B".into()));
    }
    let mut primary = TtnTracker::new(state, Extract::Restrict(support));
    let mut fa = TtnTracker::new(state, Extract::Restrict(part_a.to_vec()));
    let mut fb = TtnTracker::new(state, Extract::Restrict(part_b.to_vec()));
    run_chain_with_trackers(
        &mut [&mut primary, &mut fa, &mut fb],
        &["log_pa2", "log_pb2"],
        state.d(),
        state.n_sites(),
        target,
        sector,
        config,
    )
}

// ---------------------------------------------------------------------------
// estimators

/// `M₁ = ⟨−log p²⟩` over a Ξ chain; reported with τ-corrected errors.
pub fn estimate_m1(record: &ChainRecord) -> Result<EstimatorResult> {
    expect_kind(record, &[TargetKind::Xi])?;
    let series: Vec<f64> = record.log_p2().iter().map(|&l| -l).collect();
    analysis::mean_with_error(&series)
}

/// `M_n = 1/(1−n) · log ⟨(p²)^{n−1}⟩` over a Ξ chain (n ≠ 1).
pub fn estimate_mn(record: &ChainRecord, n: f64) -> Result<EstimatorResult> {
    expect_kind(record, &[TargetKind::Xi])?;
    if (n - 1.0).abs() < 1e-12 {
        return Err(MagicError::Estimator("use estimate_m1 for n = 1".into()));
    }
    let series: Vec<f64> = record.log_p2().iter().map(|&l| ((n - 1.0) * l).exp()).collect();
    analysis::log_mean_with_error(&series, 1.0 / (1.0 - n))
}

/// Mixed-state `M̃₂ = −log ⟨p²⟩` over a Ξ̃ chain on a subsystem.
pub fn estimate_m2_mixed(record: &ChainRecord) -> Result<EstimatorResult> {
    expect_kind(record, &[TargetKind::XiTilde, TargetKind::Xi])?;
    let series: Vec<f64> = record.log_p2().iter().map(|&l| l.exp()).collect();
    analysis::log_mean_with_error(&series, -1.0)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LongRangeEstimate {
    pub w: EstimatorResult,
    pub i2: EstimatorResult,
    pub l: EstimatorResult,
}

/// Long-range magic `L = I₂ − W` from a Π₂ chain (for W) and a Ξ chain
/// (for I₂), both on `A ∪ B` with factor columns.
pub fn estimate_long_range(
    record_pi2: &ChainRecord,
    record_xi: &ChainRecord,
) -> Result<LongRangeEstimate> {
    expect_kind(record_pi2, &[TargetKind::PiN])?;
    expect_kind(record_xi, &[TargetKind::Xi, TargetKind::XiTilde])?;
    if record_pi2.meta.target.support != record_xi.meta.target.support {
        return Err(MagicError::Estimator("mismatched partitions".into()));
    }
    let ratio_series = |rec: &ChainRecord, power: f64| -> Result<Vec<f64>> {
        let la = rec
            .column("log_pa2")
            .ok_or_else(|| MagicError::Estimator("missing factor columns".into()))?;
        let lb = rec.column("log_pb2").unwrap();
        let lab = rec.log_p2();
        Ok(la
            .iter()
            .zip(lb)
            .zip(lab)
            .map(|((&a, &b), &ab)| (power * (a + b - ab)).exp())
            .collect())
    };
    // W over Π₂: ⟨ (p_A² p_B²)² / (p_AB²)² ⟩ in Tr⁴ form means power 2 on p²
    let w = analysis::log_mean_with_error(&ratio_series(record_pi2, 2.0)?, -1.0)?;
    let i2 = analysis::log_mean_with_error(&ratio_series(record_xi, 1.0)?, -1.0)?;
    let l_val = i2.value - w.value;
    let l_err = (i2.stderr * i2.stderr + w.stderr * w.stderr).sqrt();
    let l = EstimatorResult::from_value(
        l_val,
        l_err,
        w.tau_int.max(i2.tau_int),
        w.n_samples.min(i2.n_samples),
    );
    Ok(LongRangeEstimate { w, i2, l })
}

/// Subleading term `c_N = 1/(1−n) · log ⟨ (p½⁽¹⁾ p½⁽²⁾)^n / (p_N)^n ⟩` over a
/// Π_n chain with half-state factor columns.
pub fn estimate_subleading(record: &ChainRecord, n: f64) -> Result<EstimatorResult> {
    expect_kind(record, &[TargetKind::PiN])?;
    if (n - 1.0).abs() < 1e-12 {
        return Err(MagicError::Estimator("subleading estimator needs n ≠ 1".into()));
    }
    let l1 = record
        .column("log_ph1")
        .ok_or_else(|| MagicError::Estimator("missing half-state columns".into()))?;
    let l2 = record.column("log_ph2").unwrap();
    let lf = record.log_p2();
    let series: Vec<f64> = l1
        .iter()
        .zip(l2)
        .zip(lf)
        .map(|((&a, &b), &f)| (n * (a + b - f)).exp())
        .collect();
    analysis::log_mean_with_error(&series, 1.0 / (1.0 - n))
}

/// Predicted sampling variance of the M_n estimator (n ≠ 1):
/// `(exp[2(n−1)(M_n − M_{2n−1})] − 1) / |n−1|`.
pub fn predicted_variance(m_n: f64, m_2n_minus_1: f64, n: f64) -> f64 {
    ((2.0 * (n - 1.0) * (m_n - m_2n_minus_1)).exp() - 1.0) / (n - 1.0).abs()
}

fn expect_kind(record: &ChainRecord, kinds: &[TargetKind]) -> Result<()> {
    if kinds.contains(&record.meta.target.kind) {
        Ok(())
    } else {
        Err(MagicError::Estimator(format!(
            "estimator expects a {:?} chain, record holds {:?}",
            kinds, record.meta.target.kind
        )))
    }
}

// ---------------------------------------------------------------------------
// increment trick

#[derive(Debug, Clone, Serialize)]
pub struct IncrementResult {
    pub estimate: EstimatorResult,
    /// (size, c_size estimate) terms entering the telescoping combination.
    pub increments: Vec<(usize, EstimatorResult)>,
    pub base_size: usize,
    pub base_value: f64,
}

/// Estimate M_n(N) through the telescoping combination
/// `M_n(N) = 2^J M_n(N₀) − Σ_j 2^j c_{N/2^j}`, with each subleading term
/// estimated by its own Π_n chain and the base evaluated exactly.
pub fn increment_mn_dense(
    spec: &ModelSpec,
    n: f64,
    base_size: usize,
    config: &ChainConfig,
    make_state: &mut dyn FnMut(usize) -> Result<DenseState>,
) -> Result<IncrementResult> {
    let n_sites = spec.site_count();
    if !n_sites.is_power_of_two() || !base_size.is_power_of_two() || base_size >= n_sites {
        return Err(MagicError::Chain(
            "increment trick needs power-of-two sizes with base < N".into(),
        ));
    }
    let sector = spec.symmetry();
    let mut increments = Vec::new();
    let mut total = 0.0;
    let mut var = 0.0;
    let mut size = n_sites;
    let mut weight = 1.0;
    let mut seed_bump = 0u64;
    while size > base_size {
        let full = make_state(size)?;
        let half = make_state(size / 2)?;
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(seed_bump);
        seed_bump += 1;
        let target = TargetDistribution::pi_n(n, None);
        let record = run_chain_dense_subleading(&full, &half, &target, &sector, &cfg)?;
        let c = estimate_subleading(&record, n)?;
        total -= weight * c.value;
        var += (weight * c.stderr).powi(2);
        increments.push((size, c));
        weight *= 2.0;
        size /= 2;
    }
    let base_state = make_state(base_size)?;
    let base_report = oracle::exact_sre(&base_state, &[n], &OracleOptions::default())?;
    let base_value = base_report.m(n).unwrap();
    total += weight * base_value;
    let samples = increments.first().map(|(_, c)| c.n_samples).unwrap_or(0);
    let tau = increments.iter().map(|(_, c)| c.tau_int).fold(1.0, f64::max);
    Ok(IncrementResult {
        estimate: EstimatorResult::from_value(total, var.sqrt(), tau, samples),
        increments,
        base_size,
        base_value,
    })
}
