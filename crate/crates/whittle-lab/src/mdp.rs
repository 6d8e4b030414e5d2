//! Exact solvers for the penalty-parameterized single-arm problem.
//!
//! For a stationary policy `g` the discounted cost and activation measure
//! are solved as linear systems,
//!
//! ```text
//! d = (1-beta) (I - beta P_g)^-1 c_g
//! n = (1-beta) (I - beta P_g)^-1 g
//! ```
//!
//! so that the penalized value of `g` is `j(lambda) = d + lambda n`. The
//! optimal policy for a fixed penalty comes from policy iteration over
//! these exact evaluations, which keeps the value function and the d/n
//! measures on a single numerical pathway.

use nalgebra::DVector;
use thiserror::Error;

use crate::model::{BanditModel, PolicyVec};

/// Hard cap on policy-iteration sweeps; with exact evaluations the loop
/// terminates after at most one sweep per policy switch.
const MAX_POLICY_ITERATIONS: usize = 10_000;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("internal error: linear system for policy evaluation is singular")]
    SingularSystem,
    #[error("internal error: policy iteration did not settle in {0} sweeps")]
    NoConvergence(usize),
}

/// Per-state discounted cost `d` and activation measure `n` of a policy.
///
/// Entries of `n` lie in `[0, 1]`: 1 under the all-active policy, 0 under
/// the all-passive policy.
#[derive(Debug, Clone)]
pub struct PolicyEval {
    pub d: DVector<f64>,
    pub n: DVector<f64>,
}

impl PolicyEval {
    /// Penalized value `d + lambda * n`.
    pub fn j(&self, lambda: f64) -> DVector<f64> {
        &self.d + lambda * &self.n
    }
}

/// Optimal value and policy for one activation penalty.
#[derive(Debug, Clone)]
pub struct LambdaSolution {
    pub value: DVector<f64>,
    pub policy: PolicyVec,
    pub penalty: f64,
}

/// Scale-aware tolerance for treating the two action values as tied.
pub fn tie_tolerance(model: &BanditModel, lambda: f64) -> f64 {
    1e-9 * (1.0 + lambda.abs()) * (1.0 + model.max_abs_cost())
}

/// Evaluate `d` and `n` for a policy by one LU factorization and two solves.
///
/// # Panics
/// Panics if the policy length does not match the model.
pub fn policy_eval(model: &BanditModel, g: &PolicyVec) -> Result<PolicyEval, MdpError> {
    let k = model.num_states();
    assert_eq!(g.len(), k, "policy length {} does not match K={k}", g.len());
    let beta = model.discount();

    let mut a = nalgebra::DMatrix::<f64>::identity(k, k);
    let mut c_g = DVector::zeros(k);
    let mut act = DVector::zeros(k);
    for x in 0..k {
        let active = g.is_active(x);
        let p = model.p(active);
        for y in 0..k {
            a[(x, y)] -= beta * p[(x, y)];
        }
        c_g[x] = model.cost_at(x, active);
        act[x] = active as u8 as f64;
    }

    let lu = a.lu();
    let d = lu.solve(&c_g).ok_or(MdpError::SingularSystem)?;
    let n = lu.solve(&act).ok_or(MdpError::SingularSystem)?;
    Ok(PolicyEval {
        d: (1.0 - beta) * d,
        n: (1.0 - beta) * n,
    })
}

/// Solve the penalized problem for a fixed `lambda` by policy iteration.
///
/// Starts from the all-active policy. The improvement step only switches
/// an action on a strict gain beyond a noise threshold, which keeps the
/// policy sequence strictly improving and therefore finite; a symmetric
/// tie rule would let evaluation noise flip near-tied states back and
/// forth forever. The active-on-tie convention is then applied once, on
/// the converged fixed point, so the returned policy is a deterministic
/// function of the inputs.
pub fn solve_lambda(model: &BanditModel, lambda: f64) -> Result<LambdaSolution, MdpError> {
    let k = model.num_states();
    let beta = model.discount();
    // Above linear-solve noise, below any action gap worth switching for.
    let delta = 1e-10 * (1.0 + lambda.abs()) * (1.0 + model.max_abs_cost());

    let action_value = |value: &DVector<f64>, x: usize, active: bool| {
        let penalty = if active { lambda } else { 0.0 };
        let mut v = (1.0 - beta) * (model.cost_at(x, active) + penalty);
        let p = model.p(active);
        for y in 0..k {
            v += beta * p[(x, y)] * value[y];
        }
        v
    };

    let mut policy = PolicyVec::all_active(k);
    let mut value = policy_eval(model, &policy)?.j(lambda);
    for _ in 0..MAX_POLICY_ITERATIONS {
        let improved = PolicyVec::from_fn(k, |x| {
            let h0 = action_value(&value, x, false);
            let h1 = action_value(&value, x, true);
            if policy.is_active(x) {
                h1 <= h0 + delta
            } else {
                h1 < h0 - delta
            }
        });
        if improved == policy {
            let eps = tie_tolerance(model, lambda);
            let tied = PolicyVec::from_fn(k, |x| {
                action_value(&value, x, true) <= action_value(&value, x, false) + eps
            });
            return Ok(LambdaSolution { value, policy: tied, penalty: lambda });
        }
        policy = improved;
        value = policy_eval(model, &policy)?.j(lambda);
    }
    Err(MdpError::NoConvergence(MAX_POLICY_ITERATIONS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn model_e() -> BanditModel {
        BanditModel::from_rows(
            &[
                vec![0.3629, 0.5028, 0.1343],
                vec![0.0823, 0.7534, 0.1643],
                vec![0.2460, 0.0294, 0.7246],
            ],
            &[
                vec![0.1719, 0.1749, 0.6532],
                vec![0.0547, 0.9317, 0.0136],
                vec![0.1547, 0.6271, 0.2182],
            ],
            &[0.0, 0.0, 0.0],
            &[-0.44138, -0.8033, -0.14257],
            0.9,
        )
        .unwrap()
    }

    fn identical_actions_model() -> BanditModel {
        BanditModel::from_rows(
            &[vec![0.7, 0.3], vec![0.4, 0.6]],
            &[vec![0.7, 0.3], vec![0.4, 0.6]],
            &[1.0, 2.0],
            &[1.0, 2.0],
            0.9,
        )
        .unwrap()
    }

    #[test]
    fn all_active_has_unit_activation() {
        let eval = policy_eval(&model_e(), &PolicyVec::all_active(3)).unwrap();
        for x in 0..3 {
            assert_abs_diff_eq!(eval.n[x], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn all_passive_has_zero_activation() {
        let eval = policy_eval(&model_e(), &PolicyVec::all_passive(3)).unwrap();
        for x in 0..3 {
            assert_abs_diff_eq!(eval.n[x], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn activation_measure_matches_worked_example() {
        // Printed unnormalized as [7.88, 9.29, 9.13]; compare after scaling
        // by (1-beta) = 0.1.
        let g = PolicyVec::new(vec![false, true, true]);
        let eval = policy_eval(&model_e(), &g).unwrap();
        assert_abs_diff_eq!(eval.n[0], 0.788, epsilon = 5e-4);
        assert_abs_diff_eq!(eval.n[1], 0.929, epsilon = 5e-4);
        assert_abs_diff_eq!(eval.n[2], 0.913, epsilon = 5e-4);
    }

    #[test]
    fn j_value_arithmetic() {
        let eval = PolicyEval {
            d: DVector::from_vec(vec![1.0, 2.0]),
            n: DVector::from_vec(vec![0.0, 1.0]),
        };
        assert_eq!(eval.j(3.0).as_slice(), &[1.0, 5.0]);
        assert_eq!(eval.j(0.0).as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn optimal_value_equals_policy_value() {
        let model = model_e();
        for lambda in [-1.0, 0.18, 0.5, 0.9] {
            let sol = solve_lambda(&model, lambda).unwrap();
            let eval = policy_eval(&model, &sol.policy).unwrap();
            let j = eval.j(lambda);
            for x in 0..3 {
                assert_abs_diff_eq!(j[x], sol.value[x], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn worked_example_policy_at_half() {
        // Indices are [0.18, 0.8, 0.57]: at lambda = 0.5 only state 1 rests.
        let sol = solve_lambda(&model_e(), 0.5).unwrap();
        assert_eq!(sol.policy.bits(), vec![0, 1, 1]);
    }

    #[test]
    fn deep_penalty_reward_forces_all_active() {
        let model = model_e();
        let bound = -(2.0 * model.max_abs_cost()) / (1.0 - model.discount());
        let sol = solve_lambda(&model, bound - 1.0).unwrap();
        assert_eq!(sol.policy.count_active(), 3);
    }

    #[test]
    fn identical_actions_split_on_penalty_sign() {
        let model = identical_actions_model();
        assert_eq!(solve_lambda(&model, 1.0).unwrap().policy.count_active(), 0);
        assert_eq!(solve_lambda(&model, -1.0).unwrap().policy.count_active(), 2);
        // Exact tie at lambda = 0 resolves to active.
        assert_eq!(solve_lambda(&model, 0.0).unwrap().policy.count_active(), 2);
    }
}
