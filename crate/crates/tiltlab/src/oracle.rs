//! Exact enumeration oracle: tilted targets, intermediate targets, total
//! variation, instance diagnostics, and the exact law of the stepwise guided
//! sampler.
//!
//! Everything here is closed-form over the fully enumerated tree. These
//! functions are the ground truth the stochastic samplers are tested
//! against, so they avoid Monte Carlo entirely and keep their arithmetic
//! compensated where sums grow with the tree size.
//!
//! The diagnostics bundle the constants the error bounds are phrased in:
//!
//! - `l`: worst directional one-step twist ratio between a prefix and any
//!   child.
//! - `eps`: worst directional deviation of the one-step lookahead
//!   (reference-expected child twist over own twist) from 1, over prefix
//!   lengths `0..T-1`; the length-`T` lookahead is the identity by
//!   convention.
//! - `eps_g`: same deviation measured against the full lookahead (expected
//!   terminal twist given the prefix).
//! - `c_act`: worst child twist over its parent's one-step lookahead; always
//!   at least 1 and at most `l*(1+eps)`.
//! - `q_table`: ratio spread of the expected remaining potential product of
//!   the Feynman-Kac model between steps `p` and `n`, the quantity the
//!   particle bounds control.

use std::io;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fk::{self, ProposalKind};
use crate::model::{level_size, Instance, Prefix};
use crate::numeric::{neumaier_sum, RunningSum};

/// Exact probability vector over every length-`level` prefix, indexed like
/// all per-level tables.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDistribution {
    b: usize,
    level: usize,
    probs: Vec<f64>,
}

impl TrajectoryDistribution {
    /// Validates the support size and that the mass sums to 1 within 1e-12.
    pub fn new(b: usize, level: usize, probs: Vec<f64>) -> Result<Self> {
        let expected = level_size(b, level)?;
        if probs.len() != expected {
            return Err(Error::dimension_mismatch(
                format!("distribution support at level {level}"),
                expected,
                probs.len(),
            ));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidProbabilities {
                    context: format!("distribution at level {level}"),
                    reason: format!("entry {i} is {p}"),
                });
            }
        }
        let total = neumaier_sum(&probs);
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidProbabilities {
                context: format!("distribution at level {level}"),
                reason: format!("mass sums to {total}"),
            });
        }
        Ok(TrajectoryDistribution { b, level, probs })
    }

    /// Normalizes nonnegative masses; errors if they are all zero.
    pub fn from_unnormalized(b: usize, level: usize, mut masses: Vec<f64>) -> Result<Self> {
        for (i, &m) in masses.iter().enumerate() {
            if !m.is_finite() || m < 0.0 {
                return Err(Error::InvalidProbabilities {
                    context: format!("unnormalized masses at level {level}"),
                    reason: format!("entry {i} is {m}"),
                });
            }
        }
        let total = neumaier_sum(&masses);
        if total <= 0.0 {
            return Err(Error::EmptyMeasure {
                context: format!("distribution at level {level}"),
            });
        }
        for m in masses.iter_mut() {
            *m /= total;
        }
        TrajectoryDistribution::new(b, level, masses)
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    /// Probability of the prefix set whose first `markers.len()` symbols
    /// equal `markers`.
    pub fn prefix_set_mass(&self, markers: &[u32]) -> Result<f64> {
        if markers.len() > self.level {
            return Err(Error::dimension_mismatch(
                "prefix set marker length",
                format!("at most {}", self.level),
                markers.len(),
            ));
        }
        let mut acc = RunningSum::new();
        for (i, &p) in self.probs.iter().enumerate() {
            let prefix = Prefix::from_index(self.level, i, self.b);
            if prefix.symbols().starts_with(markers) {
                acc.add(p);
            }
        }
        Ok(acc.value())
    }
}

/// Total variation distance `(1/2) sum |p - q|`.
pub fn tv_distance(p: &TrajectoryDistribution, q: &TrajectoryDistribution) -> Result<f64> {
    if p.b() != q.b() || p.level() != q.level() {
        return Err(Error::dimension_mismatch(
            "tv distance operands",
            format!("B={}, level={}", p.b(), p.level()),
            format!("B={}, level={}", q.b(), q.level()),
        ));
    }
    let mut acc = RunningSum::new();
    for (a, b) in p.probs().iter().zip(q.probs()) {
        acc.add((a - b).abs());
    }
    Ok(0.5 * acc.value())
}

/// The tilted target: reference path probabilities reweighted by the
/// terminal twist, normalized over the leaves.
pub fn target_distribution(instance: &Instance) -> TrajectoryDistribution {
    // Positivity of the twist makes the mass positive, so this cannot fail.
    intermediate_target(instance, instance.horizon()).expect("horizon is always in range")
}

/// The level-`t` intermediate target: reference prefix probabilities
/// reweighted by the level-`t` twist.
pub fn intermediate_target(instance: &Instance, t: usize) -> Result<TrajectoryDistribution> {
    if t > instance.horizon() {
        return Err(Error::invalid_argument(
            "level",
            "exceeds the instance horizon",
            t,
        ));
    }
    let paths = instance.reference().path_probabilities();
    let twist = instance.twist().values_at(t);
    let masses: Vec<f64> = paths[t]
        .iter()
        .zip(twist)
        .map(|(&p, &v)| p * v)
        .collect();
    TrajectoryDistribution::from_unnormalized(instance.b(), t, masses)
}

/// Ratio spread `q_{p,n}` of the expected remaining potential product of a
/// Feynman-Kac model, for all `1 <= p <= n <= T+1`.
#[derive(Clone, Debug, Serialize)]
pub struct QTable {
    /// Number of steps `T+1` of the underlying model.
    pub steps: usize,
    /// `rows[p-1][n-p]` holds `q_{p,n}`.
    pub rows: Vec<Vec<f64>>,
}

impl QTable {
    /// `q_{p,n}` for `1 <= p <= n <= T+1`.
    pub fn value(&self, p: usize, n: usize) -> f64 {
        self.rows[p - 1][n - p]
    }
}

/// Constants of an instance's error bounds, plus the potential-ratio table
/// of the chosen proposal.
#[derive(Clone, Debug, Serialize)]
pub struct InstanceDiagnostics {
    pub instance_id: String,
    pub b: usize,
    pub horizon: usize,
    pub proposal: String,
    pub l: f64,
    pub eps: f64,
    pub eps_g: f64,
    pub c_act: f64,
    pub q_table: QTable,
}

/// Computes all diagnostics. The ratio table is proposal-dependent; only the
/// naive and optimal proposals are supported here (custom proposals get
/// their coverage constant from [`fk::proposal_coverage_bound`] instead).
pub fn diagnostics(instance: &Instance, proposal: &ProposalKind) -> Result<InstanceDiagnostics> {
    if matches!(proposal, ProposalKind::Custom(_)) {
        return Err(Error::invalid_argument(
            "proposal_kind",
            "ratio-table diagnostics cover the naive and optimal proposals only",
            proposal.label(),
        ));
    }
    let b = instance.b();
    let t_max = instance.horizon();
    let v = instance.twist();
    let z = instance.step_normalizers();

    let mut l: f64 = 1.0;
    let mut c_act: f64 = 1.0;
    for t in 1..=t_max {
        let values = v.values_at(t);
        for (x, &vx) in values.iter().enumerate() {
            let parent = x / b;
            let ratio = vx / v.value(t - 1, parent);
            l = l.max(ratio).max(1.0 / ratio);
            c_act = c_act.max(vx / z[t - 1][parent]);
        }
    }

    let mut eps: f64 = 0.0;
    for t in 0..t_max {
        for (p, &zp) in z[t].iter().enumerate() {
            let ratio = v.value(t, p) / zp;
            eps = eps.max(ratio - 1.0).max(1.0 / ratio - 1.0);
        }
    }

    let mut eps_g: f64 = 0.0;
    let mut w: Vec<f64> = v.values_at(t_max).to_vec();
    for t in (0..t_max).rev() {
        let parents = level_size(b, t)?;
        let mut w_prev = vec![0.0; parents];
        for (p, wp) in w_prev.iter_mut().enumerate() {
            let row = instance.reference().row(t, p);
            let mut acc = RunningSum::new();
            for (k, &c) in row.iter().enumerate() {
                acc.add(c * w[p * b + k]);
            }
            *wp = acc.value();
            let ratio = v.value(t, p) / *wp;
            eps_g = eps_g.max(ratio - 1.0).max(1.0 / ratio - 1.0);
        }
        w = w_prev;
    }

    let fk_model = fk::build_fk(instance, proposal)?;
    let steps = t_max + 1;
    let mut rows: Vec<Vec<f64>> = (1..=steps).map(|p| vec![0.0; steps - p + 1]).collect();
    for n in 1..=steps {
        rows[n - 1][0] = 1.0;
        // Backward expected potential product from step n; r starts as the
        // constant 1 on the state space of step n (level min(n, T)).
        let mut r = vec![1.0; level_size(b, n.min(t_max))?];
        for p in (1..n).rev() {
            let states = level_size(b, p)?;
            let mut rp = vec![0.0; states];
            if p + 1 == steps {
                // Terminal step keeps the state; only G_T multiplies.
                for (x, out) in rp.iter_mut().enumerate() {
                    *out = fk_model.potential(p, x) * r[x];
                }
            } else {
                for (x, out) in rp.iter_mut().enumerate() {
                    let row = fk_model.kernel_row(p + 1, x);
                    let mut acc = RunningSum::new();
                    for (k, &c) in row.iter().enumerate() {
                        acc.add(c * r[x * b + k]);
                    }
                    *out = fk_model.potential(p, x) * acc.value();
                }
            }
            r = rp;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &val in &r {
                lo = lo.min(val);
                hi = hi.max(val);
            }
            rows[p - 1][n - p] = hi / lo;
        }
    }

    Ok(InstanceDiagnostics {
        instance_id: instance.id().to_string(),
        b,
        horizon: t_max,
        proposal: proposal.label().to_string(),
        l,
        eps,
        eps_g,
        c_act,
        q_table: QTable { steps, rows },
    })
}

/// Per-level exact marginals of the stepwise locally tilted sampler, levels
/// `0..=T`. Level `t` is the product of the tilted rows along each length-`t`
/// path.
pub fn spgsmc_exact_marginals(instance: &Instance) -> Result<Vec<TrajectoryDistribution>> {
    let b = instance.b();
    let rows = instance.stepwise_tilted_rows();
    let mut out = Vec::with_capacity(instance.horizon() + 1);
    let mut cur = vec![1.0];
    out.push(TrajectoryDistribution::from_unnormalized(b, 0, cur.clone())?);
    for (t, level_rows) in rows.iter().enumerate() {
        let mut next = vec![0.0; cur.len() * b];
        for (p, &mass) in cur.iter().enumerate() {
            for k in 0..b {
                next[p * b + k] = mass * level_rows[p * b + k];
            }
        }
        cur = next;
        out.push(TrajectoryDistribution::from_unnormalized(
            b,
            t + 1,
            cur.clone(),
        )?);
    }
    Ok(out)
}

/// Exact output law of the stepwise locally tilted sampler on full-length
/// trajectories.
pub fn spgsmc_exact_law(instance: &Instance) -> Result<TrajectoryDistribution> {
    Ok(spgsmc_exact_marginals(instance)?
        .pop()
        .expect("marginals are nonempty"))
}

/// Writes a distribution as CSV with columns `prefix,probability`, one row
/// per support point in index order. Probabilities are written with 17
/// significant digits.
pub fn write_distribution_csv<W: io::Write>(
    dist: &TrajectoryDistribution,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["prefix", "probability"])?;
    for (i, &p) in dist.probs().iter().enumerate() {
        let prefix = Prefix::from_index(dist.level(), i, dist.b());
        w.write_record([prefix.to_string(), format!("{p:.16e}")])?;
    }
    w.flush()?;
    Ok(())
}
