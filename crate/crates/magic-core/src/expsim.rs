//! Simulated experimental protocol: Metropolis over Pauli strings where
//! every expectation is an estimate from `N_M` projective measurements,
//! modelled as Gaussian noise of width `ΔP = sqrt((1−⟨P⟩²)/N_M)` (a
//! binomial resampling mode exists behind a flag). The incumbent's noisy
//! value is measured once per occupancy and reused until the string is
//! replaced, mirroring a measurement budget of `N_M × N_S`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use crate::analysis::EstimatorResult;
use crate::dense::DenseState;
use crate::error::{MagicError, Result};
use crate::pauli::{MoveProposal, PauliString, SymmetrySector};
use crate::sampler::{
    estimate_m1, estimate_mn, run_chain_with_trackers, ChainConfig, Extract, PauliTracker,
    TargetDistribution,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum NoiseLaw {
    /// Gaussian perturbation with the binomial standard error.
    Gaussian,
    /// Actual binomial resampling of N_M outcomes A_i ∈ {±1}.
    Binomial,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ShotModel {
    pub n_measurements: u64,
    pub law: NoiseLaw,
    /// Re-measure the incumbent at every comparison instead of caching one
    /// value per occupancy.
    pub remeasure_incumbent: bool,
}

impl ShotModel {
    pub fn gaussian(n_measurements: u64) -> Self {
        Self { n_measurements, law: NoiseLaw::Gaussian, remeasure_incumbent: false }
    }
}

/// One noisy estimate of `⟨P⟩` for a true value in [−1, 1].
pub fn noisy_expectation<R: Rng + ?Sized>(
    true_value: f64,
    model: &ShotModel,
    rng: &mut R,
) -> f64 {
    debug_assert!(true_value.abs() <= 1.0 + 1e-12);
    let t = true_value.clamp(-1.0, 1.0);
    match model.law {
        NoiseLaw::Gaussian => {
            let dp = ((1.0 - t * t).max(0.0) / model.n_measurements as f64).sqrt();
            if dp == 0.0 {
                return t;
            }
            (t + dp * gaussian(rng)).clamp(-1.0, 1.0)
        }
        NoiseLaw::Binomial => {
            let p_up = (1.0 + t) / 2.0;
            let k = Binomial::new(model.n_measurements, p_up.clamp(0.0, 1.0))
                .expect("valid binomial")
                .sample(rng);
            2.0 * k as f64 / model.n_measurements as f64 - 1.0
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(1e-300f64..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Dense-backend tracker whose values pass through the shot-noise model.
/// Requires d = 2 (real expectations of Hermitian-up-to-phase strings).
pub struct NoisyDenseTracker<'a> {
    state: &'a DenseState,
    model: ShotModel,
    rng: ChaCha12Rng,
    current: f64,
    current_string: Option<PauliString>,
    candidate: Option<(f64, PauliString)>,
}

impl<'a> NoisyDenseTracker<'a> {
    pub fn new(state: &'a DenseState, model: ShotModel, noise_seed: u64) -> Result<Self> {
        if state.d() != 2 {
            return Err(MagicError::Unsupported(
                "the measurement protocol is defined for qubit strings".into(),
            ));
        }
        Ok(Self {
            state,
            model,
            rng: ChaCha12Rng::seed_from_u64(noise_seed),
            current: f64::NAN,
            current_string: None,
            candidate: None,
        })
    }

    fn measure(&mut self, p: &PauliString) -> Result<f64> {
        // strings are measured in their Hermitian form: the tracked phase
        // makes ⟨P⟩ real for every qubit string the chain visits
        let raw = self.state.expectation(p, None)?;
        let hermitian_value = raw.norm() * raw.re.signum();
        Ok(noisy_expectation(hermitian_value, &self.model, &mut self.rng))
    }
}

impl PauliTracker for NoisyDenseTracker<'_> {
    fn reset(&mut self, p: &PauliString) -> Result<f64> {
        let v = self.measure(p)?;
        self.current = v * v;
        self.current_string = Some(p.clone());
        self.candidate = None;
        Ok(self.current)
    }

    fn propose(&mut self, candidate: &PauliString, _mv: &MoveProposal) -> Result<f64> {
        if self.model.remeasure_incumbent {
            // alternative protocol: the incumbent is re-measured at every
            // comparison instead of keeping one batch per occupancy
            let incumbent = self.current_string.clone().expect("tracker not reset");
            let v = self.measure(&incumbent)?;
            self.current = v * v;
        }
        let v = self.measure(candidate)?;
        self.candidate = Some((v * v, candidate.clone()));
        Ok(v * v)
    }

    fn commit(&mut self) {
        if let Some((v, s)) = self.candidate.take() {
            self.current = v;
            self.current_string = Some(s);
        }
    }

    fn discard(&mut self) {
        self.candidate = None;
    }

    fn current_p2(&self) -> f64 {
        self.current
    }
}

/// Noisy Metropolis chain against Ξ on a dense state.
pub fn run_noisy_chain(
    state: &DenseState,
    model: ShotModel,
    sector: &SymmetrySector,
    config: &ChainConfig,
) -> Result<crate::sampler::ChainRecord> {
    let mut tracker = NoisyDenseTracker::new(state, model, config.seed.wrapping_mul(0x9E37_79B9))?;
    run_chain_with_trackers(
        &mut [&mut tracker],
        &[],
        state.d(),
        state.n(),
        &TargetDistribution::xi_full(),
        sector,
        config,
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationRow {
    pub n_measurements: u64,
    pub n_samples: usize,
    pub renyi_n: f64,
    /// |m_n(sim. exp.) − m_n(exact)| averaged over seeds.
    pub delta_m: f64,
    /// Standard deviation of the deviation over seeds.
    pub scatter: f64,
    pub per_seed: Vec<f64>,
}

/// Sweep a grid of (N_M, N_S) against exact densities, averaging the
/// deviation over the provided seeds.
pub fn run_noisy_sweep(
    state: &DenseState,
    exact_densities: &[(f64, f64)],
    grid: &[(u64, usize)],
    seeds: &[u64],
    sector: &SymmetrySector,
    law: NoiseLaw,
) -> Result<Vec<DeviationRow>> {
    let n_sites = state.n() as f64;
    let mut rows = Vec::new();
    for &(n_m, n_s) in grid {
        for &(n, exact) in exact_densities {
            let mut devs = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let config = ChainConfig::new(n_s, seed).with_default_burn_in(state.n());
                let model = ShotModel { n_measurements: n_m, law, remeasure_incumbent: false };
                let record = run_noisy_chain(state, model, sector, &config)?;
                let est = if (n - 1.0).abs() < 1e-12 {
                    estimate_m1(&record)?
                } else {
                    match estimate_mn(&record, n) {
                        Ok(e) => e,
                        // the documented exponential-variance failure mode:
                        // treat a degenerate mean as a maximal deviation
                        Err(_) => EstimatorResult::from_value(f64::NAN, f64::NAN, 1.0, n_s),
                    }
                };
                let dev = if est.value.is_nan() {
                    f64::NAN
                } else {
                    (est.value / n_sites - exact).abs()
                };
                devs.push(dev);
            }
            let finite: Vec<f64> = devs.iter().cloned().filter(|x| x.is_finite()).collect();
            let mean = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
            let scatter = (finite.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                / (finite.len().saturating_sub(1)).max(1) as f64)
                .sqrt();
            rows.push(DeviationRow {
                n_measurements: n_m,
                n_samples: n_s,
                renyi_n: n,
                delta_m: mean,
                scatter,
                per_seed: devs,
            });
        }
    }
    Ok(rows)
}

/// Keep the dense tracker available for callers pairing noisy and noiseless
/// runs on one state.
pub fn noiseless_reference(
    state: &DenseState,
    sector: &SymmetrySector,
    config: &ChainConfig,
) -> Result<crate::sampler::ChainRecord> {
    let mut tracker = crate::sampler::DenseTracker::new(state, Extract::Identity);
    run_chain_with_trackers(
        &mut [&mut tracker],
        &[],
        state.d(),
        state.n(),
        &TargetDistribution::xi_full(),
        sector,
        config,
    )
}
