//! Feynman-Kac representations of tilted targets.
//!
//! For a chosen proposal kernel the tilted target is written as the terminal
//! distribution of a reweight-propagate recursion: starting from the
//! proposal's first-step law, each step multiplies by a potential `G_t` and
//! pushes forward through a kernel `M_t`. The model always carries a final
//! step `T+1` whose kernel is the identity, so the last potential `G_T` is
//! applied before the terminal distribution is read off; the potential
//! product along any trajectory telescopes to exactly the importance weight
//! of the proposal against the tilted target.
//!
//! Three proposals are materialized:
//!
//! - naive: propagate with the reference model itself; `G_t` is the one-step
//!   twist ratio.
//! - optimal: propagate with the exactly normalized locally tilted rows;
//!   `G_t` is the lookahead normalizer over the parent's twist, constant
//!   across siblings.
//! - custom: any conditional table covering the reference support; `G_t`
//!   additionally carries the reference-over-proposal density ratio.
//!
//! This module also evaluates the particle-count budgets that the sampler
//! error bounds prescribe for each proposal regime.

use crate::error::{Error, Result};
use crate::model::{self, Instance, Prefix};
use crate::oracle::TrajectoryDistribution;

/// Proposal used to build a Feynman-Kac model.
#[derive(Clone, Debug, PartialEq)]
pub enum ProposalKind {
    /// Propagate with the reference model.
    Naive,
    /// Propagate with the exact locally tilted rows.
    Optimal,
    /// Propagate with the given conditional table (same layout as
    /// [`model::ReferenceModel`] rows: one level per entry, rows concatenated
    /// in prefix-index order).
    Custom(Vec<Vec<f64>>),
}

impl ProposalKind {
    /// Short name for reports and file naming.
    pub fn label(&self) -> &'static str {
        match self {
            ProposalKind::Naive => "naive",
            ProposalKind::Optimal => "optimal",
            ProposalKind::Custom(_) => "custom",
        }
    }
}

/// Potentials and kernels of the tilted-target representation for one
/// proposal.
///
/// Steps are numbered `1..=T+1`: step `t <= T` moves from level `t-1` to
/// level `t` through `kernel_row` and weights level-`t` states by
/// `potential`; step `T+1` keeps the state (identity kernel) and weights by
/// the final potential `G_T` beforehand, i.e. the recursion applies
/// potentials `G_1..G_T` exactly once each.
#[derive(Clone, Debug)]
pub struct FKModel {
    b: usize,
    horizon: usize,
    label: &'static str,
    /// `kernels[t]` holds the rows of `M_{t+1}` (level `t` to `t+1`).
    kernels: Vec<Vec<f64>>,
    /// `potentials[t]` holds `G_{t+1}` over level-`t+1` states.
    potentials: Vec<Vec<f64>>,
}

impl FKModel {
    pub fn b(&self) -> usize {
        self.b
    }

    /// Number of symbol-emitting steps `T`; the model itself has `T+1` steps.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Label of the proposal this model was built from.
    pub fn proposal_label(&self) -> &'static str {
        self.label
    }

    /// Row of the kernel `M_step` out of the level-`step-1` prefix `parent`,
    /// for `step` in `1..=T`. Step `T+1` is the identity and has no rows.
    pub fn kernel_row(&self, step: usize, parent: usize) -> &[f64] {
        let b = self.b;
        &self.kernels[step - 1][parent * b..(parent + 1) * b]
    }

    /// All values of the potential `G_step` (over level-`step` prefixes), for
    /// `step` in `1..=T`.
    pub fn potentials_at(&self, step: usize) -> &[f64] {
        &self.potentials[step - 1]
    }

    /// Potential `G_step` at the level-`step` prefix `state`.
    pub fn potential(&self, step: usize, state: usize) -> f64 {
        self.potentials[step - 1][state]
    }
}

/// Builds the potential/kernel tables of the chosen proposal.
pub fn build_fk(instance: &Instance, proposal: &ProposalKind) -> Result<FKModel> {
    let b = instance.b();
    let t_max = instance.horizon();
    let v = instance.twist();
    let reference = instance.reference();

    let kernels: Vec<Vec<f64>> = match proposal {
        ProposalKind::Naive => (0..t_max).map(|t| reference.rows_at(t).to_vec()).collect(),
        ProposalKind::Optimal => instance.stepwise_tilted_rows(),
        ProposalKind::Custom(rows) => {
            if rows.len() != t_max {
                return Err(Error::dimension_mismatch(
                    "custom proposal levels",
                    t_max,
                    rows.len(),
                ));
            }
            let mut rows = rows.clone();
            for (t, level_rows) in rows.iter_mut().enumerate() {
                let parents = model::level_size(b, t)?;
                if level_rows.len() != parents * b {
                    return Err(Error::dimension_mismatch(
                        format!("custom proposal rows at level {t}"),
                        parents * b,
                        level_rows.len(),
                    ));
                }
                for p in 0..parents {
                    let row = &mut level_rows[p * b..(p + 1) * b];
                    model::validate_row(row, || {
                        format!(
                            "custom proposal row at prefix `{}`",
                            Prefix::from_index(t, p, b)
                        )
                    })?;
                    model::renormalize_row_fixpoint(row);
                }
            }
            rows
        }
    };

    let z = instance.step_normalizers();
    let mut potentials = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let states = model::level_size(b, t)?;
        let mut g = vec![0.0; states];
        for (x, gx) in g.iter_mut().enumerate() {
            let parent = x / b;
            let sym = x % b;
            let parent_v = v.value(t - 1, parent);
            *gx = match proposal {
                ProposalKind::Naive => v.value(t, x) / parent_v,
                ProposalKind::Optimal => z[t - 1][parent] / parent_v,
                ProposalKind::Custom(_) => {
                    let p_ref = reference.row(t - 1, parent)[sym];
                    let p_prop = kernels[t - 1][x];
                    // Transitions outside both supports never occur; give
                    // them the ratio-free weight so potentials stay positive.
                    let density_ratio = if p_ref == 0.0 && p_prop == 0.0 {
                        1.0
                    } else if p_prop == 0.0 {
                        return Err(Error::CoverageViolation {
                            prefix: Prefix::from_index(t - 1, parent, b).to_string(),
                            symbol: sym as u32,
                            reference_mass: p_ref,
                        });
                    } else {
                        p_ref / p_prop
                    };
                    density_ratio * v.value(t, x) / parent_v
                }
            };
            if !gx.is_finite() || *gx <= 0.0 {
                return Err(Error::NonPositive {
                    context: format!(
                        "potential G_{t} at prefix `{}`",
                        Prefix::from_index(t, x, b)
                    ),
                    reason: format!("value is {gx}"),
                });
            }
        }
        potentials.push(g);
    }

    Ok(FKModel {
        b,
        horizon: t_max,
        label: proposal.label(),
        kernels,
        potentials,
    })
}

/// Exact distribution flow of the model: the normalized laws
/// `eta_1, ..., eta_{T+1}` of the reweight-propagate recursion. `eta_t` for
/// `t <= T` lives on level-`t` prefixes; `eta_{T+1}` lives on the leaves and
/// equals the tilted target.
pub fn exact_flow(fk: &FKModel) -> Result<Vec<TrajectoryDistribution>> {
    let b = fk.b();
    let t_max = fk.horizon();
    let mut out = Vec::with_capacity(t_max + 1);
    // eta_1: the proposal's first-step law.
    let mut gamma: Vec<f64> = fk.kernels[0].clone();
    out.push(TrajectoryDistribution::from_unnormalized(
        b,
        1,
        gamma.clone(),
    )?);
    for t in 2..=t_max {
        // Reweight by G_{t-1}, then push through M_t; each child has one
        // parent, so the propagation is a single pass.
        let prev_states = gamma.len();
        let mut next = vec![0.0; prev_states * b];
        for parent in 0..prev_states {
            let weighted = gamma[parent] * fk.potential(t - 1, parent);
            let row = fk.kernel_row(t, parent);
            for (k, &c) in row.iter().enumerate() {
                next[parent * b + k] = weighted * c;
            }
        }
        gamma = next;
        out.push(TrajectoryDistribution::from_unnormalized(
            b,
            t,
            gamma.clone(),
        )?);
    }
    // Terminal step: reweight by G_T, keep the state.
    for (x, g) in gamma.iter_mut().enumerate() {
        *g *= fk.potential(t_max, x);
    }
    out.push(TrajectoryDistribution::from_unnormalized(b, t_max, gamma)?);
    Ok(out)
}

/// Worst-case directional importance-weight bound of a proposal: the maximum
/// over all transitions of the potential value and its inverse. Finite and
/// at least 1 whenever the proposal covers the reference support.
pub fn proposal_coverage_bound(instance: &Instance, proposal: &ProposalKind) -> Result<f64> {
    let fk = build_fk(instance, proposal)?;
    let mut bound: f64 = 1.0;
    for step in 1..=fk.horizon() {
        for &g in fk.potentials_at(step) {
            bound = bound.max(g).max(1.0 / g);
        }
    }
    Ok(bound)
}

/// Inputs of the particle-count budgets. `ratio_bound` is the one-step twist
/// ratio bound (or the proposal coverage bound for custom proposals);
/// `bellman_error` is the local or global lookahead error matching the
/// regime.
#[derive(Clone, Copy, Debug)]
pub struct BudgetInputs {
    pub ratio_bound: f64,
    pub bellman_error: f64,
    pub horizon: usize,
    pub delta_tv: f64,
}

/// Which sampler error bound the budget is read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BudgetRegime {
    /// Naive proposal, local lookahead error.
    NaiveLocal,
    /// Exact locally tilted proposal, local lookahead error.
    OptimalLocal,
    /// Arbitrary covered proposal with coverage bound `ratio_bound`.
    ArbitraryLocal,
    /// Naive proposal, global lookahead error.
    NaiveGlobal,
    /// Arbitrary covered proposal, global lookahead error.
    ArbitraryGlobal,
}

impl BudgetRegime {
    pub fn label(&self) -> &'static str {
        match self {
            BudgetRegime::NaiveLocal => "naive-local",
            BudgetRegime::OptimalLocal => "optimal-local",
            BudgetRegime::ArbitraryLocal => "arbitrary-local",
            BudgetRegime::NaiveGlobal => "naive-global",
            BudgetRegime::ArbitraryGlobal => "arbitrary-global",
        }
    }
}

/// Number of particles sufficient for terminal TV error `delta_tv` in the
/// chosen regime: the ceiling of the corresponding bound formula, floored at
/// one particle.
pub fn particle_budget(inputs: &BudgetInputs, regime: BudgetRegime) -> Result<u64> {
    let BudgetInputs {
        ratio_bound: l,
        bellman_error: eps,
        horizon,
        delta_tv: delta,
    } = *inputs;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid_argument(
            "delta_tv",
            "must lie in (0, 1)",
            delta,
        ));
    }
    if horizon < 2 {
        return Err(Error::invalid_argument(
            "horizon",
            "budget formulas require T >= 2",
            horizon,
        ));
    }
    if !l.is_finite() || l < 1.0 {
        return Err(Error::invalid_argument(
            "ratio_bound",
            "must be finite and at least 1",
            l,
        ));
    }
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::invalid_argument(
            "bellman_error",
            "must be finite and nonnegative",
            eps,
        ));
    }
    let t = horizon as f64;
    let one_plus = 1.0 + eps;
    let value = match regime {
        BudgetRegime::NaiveLocal | BudgetRegime::ArbitraryLocal => {
            l.powi(6) * t * one_plus.powi(6 * (horizon as i32 - 1)) / (2.0 * delta)
        }
        BudgetRegime::OptimalLocal => {
            (one_plus.powi(4) - 1.0) * t * t * one_plus.powi(6 * horizon as i32) / (2.0 * delta)
        }
        BudgetRegime::NaiveGlobal | BudgetRegime::ArbitraryGlobal => {
            l.powi(6) * t * one_plus.powi(6) / (2.0 * delta)
        }
    };
    if !value.is_finite() || value >= u64::MAX as f64 {
        return Err(Error::invalid_argument(
            "budget",
            "formula value overflows a 64-bit count",
            value,
        ));
    }
    Ok((value.ceil() as u64).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{optimal_twist, Alphabet, ReferenceModel, TwistModel};
    use crate::oracle;

    fn small_instance() -> Instance {
        let alphabet = Alphabet::new(2).unwrap();
        let reference = ReferenceModel::new(
            alphabet,
            2,
            vec![vec![0.25, 0.75], vec![0.5, 0.5, 0.1, 0.9]],
        )
        .unwrap();
        let twist = TwistModel::new(
            2,
            vec![vec![1.0], vec![0.8, 1.2], vec![0.5, 1.5, 2.0, 0.25]],
        )
        .unwrap();
        Instance::new("small", reference, twist).unwrap()
    }

    fn constant_twist_instance() -> Instance {
        let alphabet = Alphabet::new(2).unwrap();
        let reference = ReferenceModel::new(
            alphabet,
            2,
            vec![vec![0.3, 0.7], vec![0.6, 0.4, 0.2, 0.8]],
        )
        .unwrap();
        let twist = optimal_twist(&reference, &[1.0; 4]).unwrap();
        Instance::new("flat", reference, twist).unwrap()
    }

    #[test]
    fn constant_twist_gives_unit_naive_potentials() {
        let inst = constant_twist_instance();
        let fk = build_fk(&inst, &ProposalKind::Naive).unwrap();
        for step in 1..=fk.horizon() {
            for &g in fk.potentials_at(step) {
                assert!((g - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn naive_potentials_telescope_to_leaf_twist() {
        let inst = small_instance();
        let fk = build_fk(&inst, &ProposalKind::Naive).unwrap();
        let b = inst.b();
        for leaf in 0..4usize {
            let product = fk.potential(2, leaf) * fk.potential(1, leaf / b);
            let twist = inst.twist().value(2, leaf);
            assert!(
                (product / twist - 1.0).abs() <= 1e-12,
                "leaf {leaf}: product {product} vs twist {twist}"
            );
        }
    }

    #[test]
    fn optimal_potentials_are_constant_across_siblings() {
        let inst = small_instance();
        let fk = build_fk(&inst, &ProposalKind::Optimal).unwrap();
        let z = inst.step_normalizers();
        let b = inst.b();
        for step in 1..=fk.horizon() {
            let g = fk.potentials_at(step);
            for (x, &gx) in g.iter().enumerate() {
                let parent = x / b;
                let expected = z[step - 1][parent] / inst.twist().value(step - 1, parent);
                assert!((gx - expected).abs() < 1e-14);
                assert_eq!(gx, g[parent * b]);
            }
        }
    }

    #[test]
    fn custom_proposal_requires_coverage() {
        let inst = small_instance();
        let bad = ProposalKind::Custom(vec![vec![0.0, 1.0], vec![0.5, 0.5, 0.1, 0.9]]);
        match build_fk(&inst, &bad) {
            Err(Error::CoverageViolation { prefix, symbol, .. }) => {
                assert_eq!(prefix, "-");
                assert_eq!(symbol, 0);
            }
            other => panic!("expected coverage violation, got {other:?}"),
        }
    }

    #[test]
    fn exact_flow_terminal_matches_target_all_proposals() {
        let inst = small_instance();
        let target = oracle::target_distribution(&inst);
        let uniform = ProposalKind::Custom(vec![vec![0.5, 0.5], vec![0.5; 4]]);
        for proposal in [ProposalKind::Naive, ProposalKind::Optimal, uniform] {
            let fk = build_fk(&inst, &proposal).unwrap();
            let flow = exact_flow(&fk).unwrap();
            assert_eq!(flow.len(), inst.horizon() + 1);
            let tv = oracle::tv_distance(flow.last().unwrap(), &target).unwrap();
            assert!(tv <= 1e-12, "proposal {}: tv {tv}", proposal.label());
        }
    }

    #[test]
    fn constant_potentials_flow_along_reference_marginals() {
        let inst = constant_twist_instance();
        let fk = build_fk(&inst, &ProposalKind::Naive).unwrap();
        let flow = exact_flow(&fk).unwrap();
        let paths = inst.reference().path_probabilities();
        for (t, eta) in flow.iter().enumerate().take(inst.horizon()) {
            let level = t + 1;
            for (i, &p) in eta.probs().iter().enumerate() {
                assert!((p - paths[level][i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn naive_flow_reweighted_by_potential_gives_intermediate_target() {
        let inst = small_instance();
        let fk = build_fk(&inst, &ProposalKind::Naive).unwrap();
        let flow = exact_flow(&fk).unwrap();
        for t in 1..=inst.horizon() {
            let eta = &flow[t - 1];
            let reweighted: Vec<f64> = eta
                .probs()
                .iter()
                .enumerate()
                .map(|(x, &p)| p * fk.potential(t, x))
                .collect();
            let got =
                TrajectoryDistribution::from_unnormalized(inst.b(), t, reweighted).unwrap();
            let want = oracle::intermediate_target(&inst, t).unwrap();
            let tv = oracle::tv_distance(&got, &want).unwrap();
            assert!(tv <= 1e-12, "level {t}: tv {tv}");
        }
    }

    #[test]
    fn coverage_bound_naive_equals_ratio_diagnostic() {
        let inst = small_instance();
        let l_p = proposal_coverage_bound(&inst, &ProposalKind::Naive).unwrap();
        let diag = oracle::diagnostics(&inst, &ProposalKind::Naive).unwrap();
        assert!((l_p - diag.l).abs() < 1e-12);
    }

    #[test]
    fn coverage_bound_optimal_is_within_lookahead_error() {
        let inst = small_instance();
        let l_p = proposal_coverage_bound(&inst, &ProposalKind::Optimal).unwrap();
        let diag = oracle::diagnostics(&inst, &ProposalKind::Optimal).unwrap();
        assert!(l_p <= 1.0 + diag.eps + 1e-12);
    }

    #[test]
    fn coverage_bound_custom_matches_exhaustive_scan() {
        let inst = small_instance();
        let rows = vec![vec![0.5, 0.5], vec![0.5; 4]];
        let l_p =
            proposal_coverage_bound(&inst, &ProposalKind::Custom(rows.clone())).unwrap();
        let mut expected: f64 = 1.0;
        let b = inst.b();
        for t in 1..=inst.horizon() {
            for x in 0..model::level_size(b, t).unwrap() {
                let parent = x / b;
                let sym = x % b;
                let w = inst.reference().row(t - 1, parent)[sym] / rows[t - 1][x]
                    * inst.twist().value(t, x)
                    / inst.twist().value(t - 1, parent);
                expected = expected.max(w).max(1.0 / w);
            }
        }
        assert!((l_p - expected).abs() < 1e-12);
    }

    #[test]
    fn particle_budget_matches_hand_value() {
        let inputs = BudgetInputs {
            ratio_bound: 2.0,
            bellman_error: 0.0,
            horizon: 3,
            delta_tv: 0.1,
        };
        assert_eq!(
            particle_budget(&inputs, BudgetRegime::NaiveLocal).unwrap(),
            960
        );
        assert_eq!(
            particle_budget(&inputs, BudgetRegime::NaiveGlobal).unwrap(),
            960
        );
    }

    #[test]
    fn particle_budget_optimal_floors_at_one() {
        let inputs = BudgetInputs {
            ratio_bound: 1.0,
            bellman_error: 0.0,
            horizon: 3,
            delta_tv: 0.1,
        };
        assert_eq!(
            particle_budget(&inputs, BudgetRegime::OptimalLocal).unwrap(),
            1
        );
    }

    #[test]
    fn particle_budget_validates_inputs() {
        let good = BudgetInputs {
            ratio_bound: 2.0,
            bellman_error: 0.1,
            horizon: 3,
            delta_tv: 0.1,
        };
        let bad_delta = BudgetInputs {
            delta_tv: 1.0,
            ..good
        };
        assert!(particle_budget(&bad_delta, BudgetRegime::NaiveLocal).is_err());
        let bad_horizon = BudgetInputs { horizon: 1, ..good };
        assert!(particle_budget(&bad_horizon, BudgetRegime::NaiveLocal).is_err());
    }
}
