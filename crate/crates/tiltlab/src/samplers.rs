//! Stochastic samplers: seeded random streams, rejection sampling, empirical
//! normalizer estimates, resampling schemes, multi-particle SMC, and the
//! single-particle stepwise guided sampler.
//!
//! Every run is driven by a [`RandomStream`], a splittable seed: identical
//! (instance, parameters, stream) triples reproduce identical outputs byte
//! for byte, and distinct split paths give independent randomness, so
//! replicate runs can be distributed freely without sharing mutable state.
//!
//! Query accounting: `base_queries` counts draws from the reference (or
//! proposal) model, `reward_queries` counts twist evaluations. In exact
//! modes the twist enters through one lookup per particle at initialization
//! and one per particle per weighting round, so a naive-proposal SMC run
//! performs exactly `N*T` base and `N*(T+1)` reward queries. In Monte Carlo
//! modes every draw and every score evaluation of the inner estimators is
//! counted individually. The stepwise guided sampler charges the full local
//! row (`B` twist values per emitted symbol) in exact-tilt mode and one
//! evaluation per pool candidate in pool mode.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fk::{self, ProposalKind};
use crate::model::{Instance, Prefix};
use crate::numeric::{neumaier_cumsum, neumaier_sum, RunningSum};

/// Deterministic splittable source of randomness.
///
/// A stream is a 64-bit seed plus a path of split labels; the generator it
/// yields is keyed by a hash of the whole path, so children with different
/// labels are independent and the same `(seed, path)` always reproduces the
/// same draws.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RandomStream {
    seed: u64,
    path: Vec<u64>,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream {
            seed,
            path: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Derives the child stream with the given label.
    pub fn child(&self, label: u64) -> Self {
        let mut path = self.path.clone();
        path.push(label);
        RandomStream {
            seed: self.seed,
            path,
        }
    }

    /// Generator keyed by this stream's full path.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(b"tiltlab.random-stream.v1");
        h.update(self.seed.to_le_bytes());
        for &label in &self.path {
            h.update(label.to_le_bytes());
        }
        ChaCha8Rng::from_seed(h.finalize().into())
    }
}

/// One sampler run: the emitted trajectory plus query accounting.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SamplerOutput {
    /// Symbols of the emitted length-`T` sequence.
    pub trajectory: Vec<u32>,
    /// Number of next-symbol draws from the base/proposal model.
    pub base_queries: u64,
    /// Number of twist evaluations.
    pub reward_queries: u64,
    /// Set when any inner rejection-sampling call exhausted its trial budget
    /// and fell back to an untilted draw.
    pub failed: bool,
}

fn validate_scores(scores: &[f64], b: usize) -> Result<()> {
    if scores.len() != b {
        return Err(Error::dimension_mismatch(
            "score vector length",
            b,
            scores.len(),
        ));
    }
    for (i, &g) in scores.iter().enumerate() {
        if !g.is_finite() || g < 0.0 {
            return Err(Error::InvalidProbabilities {
                context: "rejection scores".into(),
                reason: format!("score {i} is {g}"),
            });
        }
    }
    Ok(())
}

/// Cumulative row with the final entry pinned to the total, for inverse-CDF
/// draws.
fn row_cdf(row: &[f64]) -> Vec<f64> {
    let mut cdf = neumaier_cumsum(row);
    if let Some(last) = cdf.last_mut() {
        *last = last.max(1.0);
    }
    cdf
}

fn draw_cdf<R: Rng>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Trial budget of the rejection sampler: `ceil(4*M*ln(4/delta))`, also the
/// number of draws spent on the empirical normalizer.
pub fn rejection_trial_budget(threshold: f64, delta: f64) -> Result<u64> {
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(Error::invalid_argument(
            "threshold",
            "must be positive",
            threshold,
        ));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid_argument("delta", "must lie in (0,1)", delta));
    }
    Ok((4.0 * threshold * (4.0 / delta).ln()).ceil() as u64)
}

/// Result of one rejection-sampling call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RejectionOutcome {
    pub symbol: u32,
    /// False when the trial budget ran out and the symbol is an untilted
    /// fallback draw.
    pub accepted: bool,
    /// Base draws spent: normalizer draws, trial draws, and the fallback.
    pub base_draws: u64,
    /// Score evaluations spent on the normalizer draws and the trials.
    pub score_evals: u64,
}

/// Draws one symbol approximately from the base row tilted by `scores`.
///
/// Budget `N = ceil(4*threshold*ln(4/delta))`: first `N` base draws estimate
/// the normalizer `Z` by their mean score, then up to `N` trials
/// accept-reject with probability `min(score/(threshold*Z), 1)`. On
/// exhaustion the result is a fresh untilted draw with `accepted = false`.
pub fn rejection_sample<R: Rng>(
    scores: &[f64],
    base_row: &[f64],
    threshold: f64,
    delta: f64,
    rng: &mut R,
) -> Result<RejectionOutcome> {
    validate_scores(scores, base_row.len())?;
    let mean: f64 = base_row
        .iter()
        .zip(scores)
        .map(|(&p, &g)| p * g)
        .sum();
    if !(mean > 0.0) {
        return Err(Error::EmptyMeasure {
            context: "rejection sampling scores have zero mean under the base row".into(),
        });
    }
    let cdf = row_cdf(base_row);
    Ok(rejection_sample_prepared(
        scores, &cdf, threshold, delta, rng,
    )?)
}

/// Rejection sampling against a precomputed base CDF; the hot path used by
/// samplers that draw from the same rows repeatedly.
pub(crate) fn rejection_sample_prepared<R: Rng>(
    scores: &[f64],
    base_cdf: &[f64],
    threshold: f64,
    delta: f64,
    rng: &mut R,
) -> Result<RejectionOutcome> {
    let budget = rejection_trial_budget(threshold, delta)?;
    let mut base_draws = 0u64;
    let mut score_evals = 0u64;
    let mut acc = RunningSum::new();
    for _ in 0..budget {
        let z = draw_cdf(base_cdf, rng);
        acc.add(scores[z]);
        base_draws += 1;
        score_evals += 1;
    }
    let zhat = acc.value() / budget as f64;
    for _ in 0..budget {
        let z = draw_cdf(base_cdf, rng);
        base_draws += 1;
        score_evals += 1;
        let g = scores[z];
        // A zero empirical normalizer with a positive score means the tilt
        // is unbounded relative to the estimate; accept outright.
        let accept_p = if zhat == 0.0 {
            if g > 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (g / (threshold * zhat)).min(1.0)
        };
        if rng.random::<f64>() < accept_p {
            return Ok(RejectionOutcome {
                symbol: z as u32,
                accepted: true,
                base_draws,
                score_evals,
            });
        }
    }
    let z = draw_cdf(base_cdf, rng);
    base_draws += 1;
    Ok(RejectionOutcome {
        symbol: z as u32,
        accepted: false,
        base_draws,
        score_evals,
    })
}

/// Mean of `scores` over `n_m` i.i.d. draws from the row.
pub fn empirical_expectation<R: Rng>(
    scores: &[f64],
    row: &[f64],
    n_m: usize,
    rng: &mut R,
) -> Result<f64> {
    validate_scores(scores, row.len())?;
    if n_m == 0 {
        return Err(Error::invalid_argument("n_m", "must be at least 1", n_m));
    }
    let cdf = row_cdf(row);
    Ok(empirical_expectation_prepared(scores, &cdf, n_m, rng))
}

pub(crate) fn empirical_expectation_prepared<R: Rng>(
    scores: &[f64],
    cdf: &[f64],
    n_m: usize,
    rng: &mut R,
) -> f64 {
    let mut acc = RunningSum::new();
    for _ in 0..n_m {
        acc.add(scores[draw_cdf(cdf, rng)]);
    }
    acc.value() / n_m as f64
}

/// `n` i.i.d. categorical draws from the normalized weights, as indices into
/// the weight vector.
pub fn resample_multinomial<R: Rng>(
    weights: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidProbabilities {
                context: "multinomial resampling weights".into(),
                reason: format!("weight {i} is {w}"),
            });
        }
    }
    let cdf = neumaier_cumsum(weights);
    let total = cdf.last().copied().unwrap_or(0.0);
    if !(total > 0.0) {
        return Err(Error::EmptyMeasure {
            context: "multinomial resampling".into(),
        });
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * total;
        let idx = cdf.partition_point(|&c| c <= u).min(weights.len() - 1);
        out.push(idx);
    }
    Ok(out)
}

/// One stratum of the quantile partition: atom indices with the share of
/// total mass they contribute to this stratum.
#[derive(Clone, Debug, Default)]
pub struct Stratum {
    pub pieces: Vec<(usize, f64)>,
}

impl Stratum {
    pub fn mass(&self) -> f64 {
        let mut acc = RunningSum::new();
        for &(_, m) in &self.pieces {
            acc.add(m);
        }
        acc.value()
    }
}

/// Splits the normalized weights into `n` contiguous equal-mass strata along
/// the score order (ties broken by `ties`, then by index). Atoms straddling
/// a stratum boundary are split fractionally, so each stratum has mass
/// exactly `1/n` up to rounding and the mixture of the conditional laws
/// reproduces the normalized weights.
pub fn stratified_partition(
    weights: &[f64],
    scores: &[f64],
    ties: &[u64],
    n: usize,
) -> Result<Vec<Stratum>> {
    if weights.len() != scores.len() || weights.len() != ties.len() {
        return Err(Error::dimension_mismatch(
            "stratified resampling inputs",
            format!("weights/scores/ties of one length"),
            format!("{}/{}/{}", weights.len(), scores.len(), ties.len()),
        ));
    }
    if n == 0 {
        return Err(Error::invalid_argument("n", "must be at least 1", n));
    }
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidProbabilities {
                context: "stratified resampling weights".into(),
                reason: format!("weight {i} is {w}"),
            });
        }
        if !scores[i].is_finite() {
            return Err(Error::InvalidProbabilities {
                context: "stratified resampling scores".into(),
                reason: format!("score {i} is {}", scores[i]),
            });
        }
    }
    let total = neumaier_sum(weights);
    if !(total > 0.0) {
        return Err(Error::EmptyMeasure {
            context: "stratified resampling".into(),
        });
    }

    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[a]
            .total_cmp(&scores[b])
            .then(ties[a].cmp(&ties[b]))
            .then(a.cmp(&b))
    });

    // Cumulative normalized mass along the sorted order; the last entry is
    // pinned to 1 so the partition covers the whole interval.
    let sorted_weights: Vec<f64> = order.iter().map(|&i| weights[i] / total).collect();
    let mut cums = neumaier_cumsum(&sorted_weights);
    if let Some(last) = cums.last_mut() {
        *last = 1.0;
    }

    let nf = n as f64;
    let boundary = |j: usize| j as f64 / nf;
    let mut strata = vec![Stratum::default(); n];
    let mut lo = 0.0f64;
    let mut j = 0usize;
    for (rank, &atom) in order.iter().enumerate() {
        let hi = cums[rank];
        if hi <= lo {
            lo = hi;
            continue;
        }
        while j + 1 < n && boundary(j + 1) <= lo {
            j += 1;
        }
        let mut jj = j;
        while jj < n && boundary(jj) < hi {
            let piece_lo = lo.max(boundary(jj));
            let piece_hi = hi.min(if jj + 1 == n { 1.0 } else { boundary(jj + 1) });
            let piece = piece_hi - piece_lo;
            if piece > 0.0 {
                strata[jj].pieces.push((atom, piece));
            }
            jj += 1;
        }
        lo = hi;
    }
    Ok(strata)
}

/// Quantile-stratified resampling: partition by [`stratified_partition`],
/// then draw the `i`-th new atom from the `i`-th stratum's conditional law.
pub fn resample_stratified_quantile<R: Rng>(
    weights: &[f64],
    scores: &[f64],
    ties: &[u64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let strata = stratified_partition(weights, scores, ties, n)?;
    let mut out = Vec::with_capacity(n);
    for stratum in &strata {
        let total = stratum.mass();
        if !(total > 0.0) {
            return Err(Error::EmptyMeasure {
                context: "stratified resampling stratum".into(),
            });
        }
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = stratum.pieces[stratum.pieces.len() - 1].0;
        for &(atom, mass) in &stratum.pieces {
            acc += mass;
            if u < acc {
                chosen = atom;
                break;
            }
        }
        out.push(chosen);
    }
    Ok(out)
}

/// Resampling scheme used between SMC steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleScheme {
    /// Independent categorical draws from the normalized weights.
    Multinomial,
    /// Quantile-stratified draws ordered by the one-step twist ratio.
    StratifiedQuantile,
}

impl ResampleScheme {
    pub fn label(&self) -> &'static str {
        match self {
            ResampleScheme::Multinomial => "multinomial",
            ResampleScheme::StratifiedQuantile => "stratified-quantile",
        }
    }
}

/// How SMC weights obtain the per-step normalizers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormalizerMode {
    /// Exact enumeration (oracle normalizers baked into the potentials).
    Exact,
    /// Fresh `n_m`-draw empirical estimate per particle per step.
    MonteCarlo { n_m: usize },
}

/// Knobs of the rejection-sampling propagation used by the Monte Carlo
/// normalizer mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RejectionParams {
    /// Score threshold `M` of the accept-reject step.
    pub threshold: f64,
    /// Total failure budget; each inner call runs at `delta/(2*N*T)`.
    pub delta: f64,
}

/// Configuration of one SMC sampler.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmcConfig {
    pub particles: usize,
    pub scheme: ResampleScheme,
    pub normalizers: NormalizerMode,
    /// Required exactly when `normalizers` is Monte Carlo.
    pub rejection: Option<RejectionParams>,
}

enum SmcEngine {
    Exact {
        /// Proposal kernel CDF rows per level.
        kernel_cdfs: Vec<Vec<f64>>,
        /// `ln G_t` per step, over level-`t` states.
        log_potentials: Vec<Vec<f64>>,
    },
    McOptimal {
        n_m: usize,
        rejection: RejectionParams,
        /// Reference row CDFs per level.
        ref_cdfs: Vec<Vec<f64>>,
    },
}

/// A prepared SMC sampler: all per-instance tables are built once so
/// replicate runs only consume randomness.
pub struct SmcSampler {
    b: usize,
    horizon: usize,
    config: SmcConfig,
    engine: SmcEngine,
    /// Twist values per level (stratified scores, MC scores and weights).
    v: Vec<Vec<f64>>,
}

impl SmcSampler {
    pub fn prepare(
        instance: &Instance,
        proposal: &ProposalKind,
        config: &SmcConfig,
    ) -> Result<Self> {
        if config.particles == 0 {
            return Err(Error::invalid_argument(
                "particles",
                "must be at least 1",
                config.particles,
            ));
        }
        let b = instance.b();
        let horizon = instance.horizon();
        let v: Vec<Vec<f64>> = (0..=horizon)
            .map(|t| instance.twist().values_at(t).to_vec())
            .collect();
        let engine = match config.normalizers {
            NormalizerMode::Exact => {
                if config.rejection.is_some() {
                    return Err(Error::invalid_argument(
                        "rejection",
                        "rejection parameters apply to Monte Carlo normalizers only",
                        "Some(..)",
                    ));
                }
                let fk_model = fk::build_fk(instance, proposal)?;
                let kernel_cdfs = (1..=horizon)
                    .map(|step| {
                        let mut level = Vec::new();
                        let parents = v[step - 1].len();
                        for parent in 0..parents {
                            level.extend(row_cdf(fk_model.kernel_row(step, parent)));
                        }
                        level
                    })
                    .collect();
                let log_potentials = (1..=horizon)
                    .map(|step| {
                        fk_model
                            .potentials_at(step)
                            .iter()
                            .map(|&g| g.ln())
                            .collect()
                    })
                    .collect();
                SmcEngine::Exact {
                    kernel_cdfs,
                    log_potentials,
                }
            }
            NormalizerMode::MonteCarlo { n_m } => {
                if !matches!(proposal, ProposalKind::Optimal) {
                    return Err(Error::invalid_argument(
                        "normalizers",
                        "Monte Carlo normalizers implement the tilted-proposal sampler only",
                        proposal.label(),
                    ));
                }
                if n_m == 0 {
                    return Err(Error::invalid_argument("n_m", "must be at least 1", n_m));
                }
                let rejection = config.rejection.ok_or_else(|| {
                    Error::invalid_argument(
                        "rejection",
                        "Monte Carlo normalizers require rejection parameters",
                        "None",
                    )
                })?;
                if !rejection.threshold.is_finite() || rejection.threshold <= 0.0 {
                    return Err(Error::invalid_argument(
                        "rejection.threshold",
                        "must be positive",
                        rejection.threshold,
                    ));
                }
                if !(rejection.delta > 0.0 && rejection.delta < 1.0) {
                    return Err(Error::invalid_argument(
                        "rejection.delta",
                        "must lie in (0,1)",
                        rejection.delta,
                    ));
                }
                let ref_cdfs = (0..horizon)
                    .map(|t| {
                        let mut level = Vec::new();
                        let parents = v[t].len();
                        for parent in 0..parents {
                            level.extend(row_cdf(instance.reference().row(t, parent)));
                        }
                        level
                    })
                    .collect();
                SmcEngine::McOptimal {
                    n_m,
                    rejection,
                    ref_cdfs,
                }
            }
        };
        Ok(SmcSampler {
            b,
            horizon,
            config: *config,
            engine,
            v,
        })
    }

    pub fn config(&self) -> &SmcConfig {
        &self.config
    }

    /// Per-call failure budget of the inner rejection sampler.
    fn rs_delta(&self, rejection: &RejectionParams) -> f64 {
        rejection.delta / (2.0 * self.config.particles as f64 * self.horizon as f64)
    }

    /// One full SMC run.
    pub fn run(&self, stream: &RandomStream) -> Result<SamplerOutput> {
        let mut rng = stream.rng();
        let b = self.b;
        let horizon = self.horizon;
        let n = self.config.particles;
        let mut base_queries = 0u64;
        let mut reward_queries = 0u64;
        let mut failed = false;

        let mut particles: Vec<usize> = Vec::with_capacity(n);
        match &self.engine {
            SmcEngine::Exact { kernel_cdfs, .. } => {
                let root = &kernel_cdfs[0][0..b];
                for _ in 0..n {
                    particles.push(draw_cdf(root, &mut rng));
                }
                base_queries += n as u64;
                reward_queries += n as u64;
            }
            SmcEngine::McOptimal {
                rejection,
                ref_cdfs,
                ..
            } => {
                let delta = self.rs_delta(rejection);
                let root = &ref_cdfs[0][0..b];
                for _ in 0..n {
                    let out = rejection_sample_prepared(
                        &self.v[1][0..b],
                        root,
                        rejection.threshold,
                        delta,
                        &mut rng,
                    )?;
                    failed |= !out.accepted;
                    base_queries += out.base_draws;
                    reward_queries += out.score_evals;
                    particles.push(out.symbol as usize);
                }
            }
        }

        let mut log_weights = vec![0.0f64; n];
        let mut weights = vec![0.0f64; n];
        for t in 2..=horizon + 1 {
            let level = t - 1;
            match &self.engine {
                SmcEngine::Exact { log_potentials, .. } => {
                    let log_g = &log_potentials[level - 1];
                    for (lw, &x) in log_weights.iter_mut().zip(&particles) {
                        *lw = log_g[x];
                    }
                    reward_queries += n as u64;
                }
                SmcEngine::McOptimal {
                    n_m, ref_cdfs, ..
                } => {
                    for (lw, &x) in log_weights.iter_mut().zip(&particles) {
                        let parent = x / b;
                        let scores = &self.v[level][parent * b..(parent + 1) * b];
                        let cdf = &ref_cdfs[level - 1][parent * b..(parent + 1) * b];
                        let zhat =
                            empirical_expectation_prepared(scores, cdf, *n_m, &mut rng);
                        *lw = zhat.ln() - self.v[level - 1][parent].ln();
                        base_queries += *n_m as u64;
                        reward_queries += *n_m as u64;
                    }
                }
            }

            let max_lw = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (w, &lw) in weights.iter_mut().zip(&log_weights) {
                *w = (lw - max_lw).exp();
            }
            if !(neumaier_sum(&weights) > 0.0) {
                return Err(Error::EmptyMeasure {
                    context: format!("smc weights at step {t}"),
                });
            }

            let ancestors = match self.config.scheme {
                ResampleScheme::Multinomial => resample_multinomial(&weights, n, &mut rng)?,
                ResampleScheme::StratifiedQuantile => {
                    let scores: Vec<f64> = particles
                        .iter()
                        .map(|&x| self.v[level][x] / self.v[level - 1][x / b])
                        .collect();
                    let ties: Vec<u64> = particles.iter().map(|&x| x as u64).collect();
                    resample_stratified_quantile(&weights, &scores, &ties, n, &mut rng)?
                }
            };

            if t <= horizon {
                let mut next = Vec::with_capacity(n);
                match &self.engine {
                    SmcEngine::Exact { kernel_cdfs, .. } => {
                        for &a in &ancestors {
                            let parent = particles[a];
                            let cdf =
                                &kernel_cdfs[t - 1][parent * b..(parent + 1) * b];
                            next.push(parent * b + draw_cdf(cdf, &mut rng));
                        }
                        base_queries += n as u64;
                    }
                    SmcEngine::McOptimal {
                        rejection,
                        ref_cdfs,
                        ..
                    } => {
                        let delta = self.rs_delta(rejection);
                        for &a in &ancestors {
                            let parent = particles[a];
                            let scores = &self.v[t][parent * b..(parent + 1) * b];
                            let cdf = &ref_cdfs[t - 1][parent * b..(parent + 1) * b];
                            let out = rejection_sample_prepared(
                                scores,
                                cdf,
                                rejection.threshold,
                                delta,
                                &mut rng,
                            )?;
                            failed |= !out.accepted;
                            base_queries += out.base_draws;
                            reward_queries += out.score_evals;
                            next.push(parent * b + out.symbol as usize);
                        }
                    }
                }
                particles = next;
            } else {
                particles = ancestors.iter().map(|&a| particles[a]).collect();
            }
        }

        let pick = particles[rng.random_range(0..n)];
        Ok(SamplerOutput {
            trajectory: Prefix::from_index(horizon, pick, b).symbols().to_vec(),
            base_queries,
            reward_queries,
            failed,
        })
    }
}

/// Prepares and runs one SMC sampler; see [`SmcSampler`] for the reusable
/// form.
pub fn smc_run(
    instance: &Instance,
    proposal: &ProposalKind,
    config: &SmcConfig,
    stream: &RandomStream,
) -> Result<SamplerOutput> {
    SmcSampler::prepare(instance, proposal, config)?.run(stream)
}

/// Mode of the single-particle stepwise guided sampler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpgsmcMode {
    /// Sample each step from the exactly normalized local tilt.
    ExactTilt,
    /// Draw `pool_size` candidates from the reference row and resample one
    /// by score.
    Pool { pool_size: usize },
}

impl SpgsmcMode {
    pub fn label(&self) -> &'static str {
        match self {
            SpgsmcMode::ExactTilt => "exact-tilt",
            SpgsmcMode::Pool { .. } => "pool",
        }
    }
}

/// One stepwise-guided run: the output plus the per-step normalizers and the
/// cumulative importance weight `w = prod_t V(s_{1:t})/Zbar_t` (exact
/// normalizers in exact-tilt mode, pool means in pool mode).
#[derive(Clone, Debug, PartialEq)]
pub struct SpgsmcRun {
    pub output: SamplerOutput,
    pub zbars: Vec<f64>,
    pub log_weight: f64,
}

/// Prepared single-particle stepwise guided sampler.
pub struct SpgsmcSampler {
    b: usize,
    horizon: usize,
    mode: SpgsmcMode,
    /// Exact-tilt mode: tilted row CDFs per level and exact normalizers.
    tilt_cdfs: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    /// Pool mode: reference row CDFs per level.
    ref_cdfs: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl SpgsmcSampler {
    pub fn prepare(instance: &Instance, mode: SpgsmcMode) -> Result<Self> {
        if let SpgsmcMode::Pool { pool_size } = mode {
            if pool_size == 0 {
                return Err(Error::invalid_argument(
                    "pool_size",
                    "must be at least 1",
                    pool_size,
                ));
            }
        }
        let b = instance.b();
        let horizon = instance.horizon();
        let v: Vec<Vec<f64>> = (0..=horizon)
            .map(|t| instance.twist().values_at(t).to_vec())
            .collect();
        let mut tilt_cdfs = Vec::new();
        let mut z = Vec::new();
        let mut ref_cdfs = Vec::new();
        match mode {
            SpgsmcMode::ExactTilt => {
                let rows = instance.stepwise_tilted_rows();
                z = instance.step_normalizers();
                for (t, level_rows) in rows.iter().enumerate() {
                    let parents = v[t].len();
                    let mut level = Vec::new();
                    for parent in 0..parents {
                        level.extend(row_cdf(&level_rows[parent * b..(parent + 1) * b]));
                    }
                    tilt_cdfs.push(level);
                }
            }
            SpgsmcMode::Pool { .. } => {
                for t in 0..horizon {
                    let parents = v[t].len();
                    let mut level = Vec::new();
                    for parent in 0..parents {
                        level.extend(row_cdf(instance.reference().row(t, parent)));
                    }
                    ref_cdfs.push(level);
                }
            }
        }
        Ok(SpgsmcSampler {
            b,
            horizon,
            mode,
            tilt_cdfs,
            z,
            ref_cdfs,
            v,
        })
    }

    pub fn mode(&self) -> SpgsmcMode {
        self.mode
    }

    /// One full-trajectory proposal, consuming the caller's generator. Used
    /// directly by the Metropolis-Hastings chains.
    pub fn propose<R: Rng>(&self, rng: &mut R) -> SpgsmcRun {
        let b = self.b;
        let mut prefix = 0usize;
        let mut zbars = Vec::with_capacity(self.horizon);
        let mut log_weight = 0.0f64;
        let mut base_queries = 0u64;
        let mut reward_queries = 0u64;
        for t in 0..self.horizon {
            match self.mode {
                SpgsmcMode::ExactTilt => {
                    let cdf = &self.tilt_cdfs[t][prefix * b..(prefix + 1) * b];
                    let sym = draw_cdf(cdf, rng);
                    let child = prefix * b + sym;
                    let zbar = self.z[t][prefix];
                    zbars.push(zbar);
                    log_weight += self.v[t + 1][child].ln() - zbar.ln();
                    prefix = child;
                    base_queries += 1;
                    reward_queries += b as u64;
                }
                SpgsmcMode::Pool { pool_size } => {
                    let cdf = &self.ref_cdfs[t][prefix * b..(prefix + 1) * b];
                    let mut candidates = Vec::with_capacity(pool_size);
                    let mut acc = RunningSum::new();
                    for _ in 0..pool_size {
                        let sym = draw_cdf(cdf, rng);
                        let score = self.v[t + 1][prefix * b + sym];
                        candidates.push((sym, score));
                        acc.add(score);
                    }
                    let total = acc.value();
                    let zbar = total / pool_size as f64;
                    zbars.push(zbar);
                    let u: f64 = rng.random::<f64>() * total;
                    let mut cum = 0.0;
                    let mut chosen = candidates[pool_size - 1];
                    for &(sym, score) in &candidates {
                        cum += score;
                        if u < cum {
                            chosen = (sym, score);
                            break;
                        }
                    }
                    log_weight += chosen.1.ln() - zbar.ln();
                    prefix = prefix * b + chosen.0;
                    base_queries += pool_size as u64;
                    reward_queries += pool_size as u64;
                }
            }
        }
        SpgsmcRun {
            output: SamplerOutput {
                trajectory: Prefix::from_index(self.horizon, prefix, b)
                    .symbols()
                    .to_vec(),
                base_queries,
                reward_queries,
                failed: false,
            },
            zbars,
            log_weight,
        }
    }

    pub fn run(&self, stream: &RandomStream) -> Result<SpgsmcRun> {
        let mut rng = stream.rng();
        Ok(self.propose(&mut rng))
    }
}

/// Prepares and runs one stepwise guided sample; see [`SpgsmcSampler`] for
/// the reusable form.
pub fn spgsmc_run(
    instance: &Instance,
    mode: SpgsmcMode,
    stream: &RandomStream,
) -> Result<SpgsmcRun> {
    SpgsmcSampler::prepare(instance, mode)?.run(stream)
}
