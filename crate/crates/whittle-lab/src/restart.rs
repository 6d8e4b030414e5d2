//! Fast evaluation for controlled-restart bandits.
//!
//! When every active row equals one distribution `Q`, the active action
//! redraws the state from `Q` regardless of where the arm is. Aggregated
//! under `Q`, the discounted cost and activation measure of any policy
//! reduce to two scalars obtained from the hitting behaviour of the
//! passive chain:
//!
//! ```text
//! l = E[ sum_{t=0..tau} beta^t c(X_t, g(X_t)) | X_0 ~ Q ]
//! m = E[ sum_{t=0..tau} beta^t              | X_0 ~ Q ]
//! d_agg = l / m          n_agg = 1/(beta m) - (1-beta)/beta
//! ```
//!
//! where `tau` is the hitting time of the active set. `l` and `m` come
//! from linear solves on the passive block alone, so the greedy index
//! pass only ever factors systems of the current passive-set size.

use nalgebra::{DMatrix, DVector};

use crate::mdp::MdpError;
use crate::model::{BanditModel, PolicyVec, RESTART_TOL};
use crate::whittle::{eps_mu, eps_n, TableBuilder, WhittleError, WhittleTable};

/// Renewal-form evaluation of one policy on a restart model.
#[derive(Debug, Clone, Copy)]
pub struct RenewalEval {
    /// Expected discounted cost to (and including) the first activation.
    pub l: f64,
    /// Expected discounted time mass up to the first activation,
    /// in `[1, 1/(1-beta)]`.
    pub m: f64,
    /// `Q`-aggregated discounted cost.
    pub d_agg: f64,
    /// `Q`-aggregated activation measure, in `[0, 1]`.
    pub n_agg: f64,
}

/// Hitting functionals `(l, m)` of the passive chain under policy `g`,
/// started from `Q`.
///
/// The passive block uses the passive transition matrix; mass leaving it
/// lands in the active block where the clock stops with one discounted
/// active cost. An empty active block is the no-hit case, where both
/// functionals reduce to the plain resolvent.
pub fn hitting_lm(
    model: &BanditModel,
    g: &PolicyVec,
    q: &DVector<f64>,
) -> Result<(f64, f64), MdpError> {
    let k = model.num_states();
    assert_eq!(g.len(), k, "policy length {} does not match K={k}", g.len());
    let beta = model.discount();
    let p0 = model.p(false);
    let c1 = model.cost(true);

    let passive = g.passive_states();
    let active = g.active_states();

    let mut l: f64 = active.iter().map(|&x| q[x] * c1[x]).sum();
    let mut m: f64 = active.iter().map(|&x| q[x]).sum();

    if !passive.is_empty() {
        let np = passive.len();
        let mut a = DMatrix::<f64>::identity(np, np);
        let mut rhs_l = DVector::<f64>::zeros(np);
        let mut rhs_m = DVector::<f64>::zeros(np);
        for (i, &x) in passive.iter().enumerate() {
            for (j, &y) in passive.iter().enumerate() {
                a[(i, j)] -= beta * p0[(x, y)];
            }
            let mut exit_cost = 0.0;
            let mut exit_mass = 0.0;
            for &y in &active {
                exit_cost += p0[(x, y)] * c1[y];
                exit_mass += p0[(x, y)];
            }
            rhs_l[i] = model.cost_at(x, false) + beta * exit_cost;
            rhs_m[i] = 1.0 + beta * exit_mass;
        }
        let lu = a.lu();
        let u = lu.solve(&rhs_l).ok_or(MdpError::SingularSystem)?;
        let v = lu.solve(&rhs_m).ok_or(MdpError::SingularSystem)?;
        for (i, &x) in passive.iter().enumerate() {
            l += q[x] * u[i];
            m += q[x] * v[i];
        }
    }
    Ok((l, m))
}

/// Aggregated cost and activation measure of `g` via the renewal route.
pub fn restart_dn(
    model: &BanditModel,
    g: &PolicyVec,
    q: &DVector<f64>,
) -> Result<RenewalEval, MdpError> {
    let beta = model.discount();
    let (l, m) = hitting_lm(model, g, q)?;
    Ok(RenewalEval {
        l,
        m,
        d_agg: l / m,
        n_agg: 1.0 / (beta * m) - (1.0 - beta) / beta,
    })
}

/// Greedy index pass specialized to restart models: each candidate is
/// scored by the scalar
///
/// ```text
/// mu_hat = (d_agg(h_dy) - d_agg(h_d)) / (n_agg(h_d) - n_agg(h_dy))
/// ```
///
/// with the same group mechanics as the general pass. Candidates whose
/// aggregated activation gap is below tolerance are unusable; a step with
/// no usable candidate is reported as degenerate.
pub fn compute_whittle_restart(model: &BanditModel) -> Result<WhittleTable, WhittleError> {
    let q = model.restart_distribution(RESTART_TOL).ok_or(WhittleError::NotRestart)?;
    let k = model.num_states();
    let mut builder = TableBuilder::new(k);

    let mut step = 0;
    while !builder.done() {
        let h_d = builder.policy();
        let base = restart_dn(model, &h_d, &q)?;

        let mut best: Option<f64> = None;
        let mut scores: Vec<(usize, f64)> = Vec::new();
        for y in 0..k {
            if builder.is_passive(y) {
                continue;
            }
            let cand = restart_dn(model, &h_d.with_passive(y), &q)?;
            let gap = base.n_agg - cand.n_agg;
            if gap.abs() <= eps_n(base.n_agg.abs().max(cand.n_agg.abs())) {
                continue;
            }
            let mu_hat = (cand.d_agg - base.d_agg) / gap;
            best = Some(best.map_or(mu_hat, |b: f64| b.min(mu_hat)));
            scores.push((y, mu_hat));
        }

        let lambda_next = best.ok_or(WhittleError::DegenerateStep { step })?;
        let tie = eps_mu(lambda_next);
        let chosen: Vec<usize> = scores
            .iter()
            .filter(|(_, mu)| *mu <= lambda_next + tie)
            .map(|&(y, _)| y)
            .collect();
        builder.push_group(&chosen, lambda_next)?;
        step += 1;
    }
    Ok(builder.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::policy_eval;
    use crate::rng::SplitMix64;
    use crate::whittle::compute_whittle;
    use approx::assert_abs_diff_eq;

    fn reset_rows(k: usize) -> Vec<Vec<f64>> {
        (0..k)
            .map(|_| {
                let mut row = vec![0.0; k];
                row[0] = 1.0;
                row
            })
            .collect()
    }

    /// Upward-drifting passive chain with reset-on-activate dynamics and
    /// the quadratic cost family.
    fn drift_restart_model(k: usize, beta: f64) -> BanditModel {
        let mut p0 = vec![vec![0.0; k]; k];
        for x in 0..k {
            if x + 1 < k {
                p0[x][x] = 0.35;
                p0[x][x + 1] = 0.65;
            } else {
                p0[x][x] = 1.0;
            }
        }
        let c0: Vec<f64> = (0..k).map(|x| (x as f64).powi(2)).collect();
        let c1 = vec![0.5 * ((k - 1) as f64).powi(2); k];
        BanditModel::from_rows(&p0, &reset_rows(k), &c0, &c1, beta).unwrap()
    }

    fn random_restart_model(k: usize, beta: f64, seed: u64) -> BanditModel {
        let mut rng = SplitMix64::new(seed);
        let mut random_row = |k: usize| {
            let raw: Vec<f64> = (0..k).map(|_| rng.next_f64() + 0.01).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let p0: Vec<Vec<f64>> = (0..k).map(|_| random_row(k)).collect();
        let q = random_row(k);
        let p1: Vec<Vec<f64>> = (0..k).map(|_| q.clone()).collect();
        let c0: Vec<f64> = (0..k).map(|_| rng.next_range(-1.0, 1.0)).collect();
        let c1: Vec<f64> = (0..k).map(|_| rng.next_range(-1.0, 1.0)).collect();
        BanditModel::from_rows(&p0, &p1, &c0, &c1, beta).unwrap()
    }

    #[test]
    fn all_active_hits_immediately() {
        let model = random_restart_model(4, 0.9, 1);
        let q = model.restart_distribution(RESTART_TOL).unwrap();
        let g = PolicyVec::all_active(4);
        let (l, m) = hitting_lm(&model, &g, &q).unwrap();
        let expected_l: f64 = (0..4).map(|x| q[x] * model.cost_at(x, true)).sum();
        assert_abs_diff_eq!(m, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l, expected_l, epsilon = 1e-12);
        assert_abs_diff_eq!(restart_dn(&model, &g, &q).unwrap().n_agg, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn all_passive_never_hits() {
        let model = random_restart_model(4, 0.9, 2);
        let q = model.restart_distribution(RESTART_TOL).unwrap();
        let g = PolicyVec::all_passive(4);
        let eval = restart_dn(&model, &g, &q).unwrap();
        assert_abs_diff_eq!(eval.m, 1.0 / (1.0 - 0.9), epsilon = 1e-9);
        assert_abs_diff_eq!(eval.n_agg, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn renewal_route_matches_direct_aggregation() {
        for seed in 0..5u64 {
            let model = random_restart_model(5, 0.9, 100 + seed);
            let q = model.restart_distribution(RESTART_TOL).unwrap();
            let mut rng = SplitMix64::new(seed);
            for _ in 0..8 {
                let g = PolicyVec::from_fn(5, |_| rng.next_f64() < 0.5);
                let renewal = restart_dn(&model, &g, &q).unwrap();
                let direct = policy_eval(&model, &g).unwrap();
                let d_ref: f64 = (0..5).map(|x| q[x] * direct.d[x]).sum();
                let n_ref: f64 = (0..5).map(|x| q[x] * direct.n[x]).sum();
                assert_abs_diff_eq!(renewal.d_agg, d_ref, epsilon = 1e-8);
                assert_abs_diff_eq!(renewal.n_agg, n_ref, epsilon = 1e-8);
                assert!(renewal.m >= 1.0 - 1e-12 && renewal.m <= 1.0 / (1.0 - 0.9) + 1e-9);
            }
        }
    }

    #[test]
    fn restart_pass_matches_general_pass_on_quadratic_model() {
        let model = drift_restart_model(5, 0.95);
        let fast = compute_whittle_restart(&model).unwrap();
        let general = compute_whittle(&model).unwrap().table;
        for x in 0..5 {
            assert_abs_diff_eq!(fast.index[x], general.index[x], epsilon = 1e-6);
        }
    }

    #[test]
    fn identical_action_restart_model_has_equal_indices() {
        let k = 4;
        let q_rows = vec![vec![0.4, 0.3, 0.2, 0.1]; k];
        let c = vec![1.0, 2.0, 3.0, 4.0];
        let model = BanditModel::from_rows(&q_rows, &q_rows, &c, &c, 0.9).unwrap();
        let table = compute_whittle_restart(&model).unwrap();
        assert_eq!(table.distinct.len(), 1);
        for x in 1..k {
            assert_abs_diff_eq!(table.index[x], table.index[0], epsilon = 1e-9);
        }
    }

    #[test]
    fn non_restart_input_is_rejected() {
        let model = BanditModel::from_rows(
            &[vec![0.5, 0.5], vec![0.5, 0.5]],
            &[vec![0.9, 0.1], vec![0.1, 0.9]],
            &[0.0, 1.0],
            &[1.0, 0.0],
            0.9,
        )
        .unwrap();
        assert!(matches!(compute_whittle_restart(&model), Err(WhittleError::NotRestart)));
    }
}
