//! Multi-armed policy execution and Monte-Carlo comparison.
//!
//! Three policies are supported: the Whittle index policy (activate the
//! arms whose current states carry the largest indices), the myopic
//! policy (activate the arms with the smallest one-step activation cost
//! difference), and the exact optimal policy from value iteration on the
//! product process, feasible only at desk scale.
//!
//! All compared policies consume the same transition draws: the uniform
//! variate for arm `i` at step `t` of trajectory `s` is addressed by
//! `(seed, s, i, t)` through the counter RNG and mapped through the
//! arm's row by inverse CDF. Per-trajectory costs are collected into a
//! vector indexed by trajectory and reduced sequentially, so estimates do
//! not depend on execution order or thread count.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::mdp::MdpError;
use crate::model::{BanditModel, MultiArmModel};
use crate::rng::{stream_unit_f64, RNG_NAME};
use crate::whittle::{compute_whittle, WhittleError, WhittleTable};

/// Default cap on product state-action pairs for the exact policy.
pub const DEFAULT_OPT_BUDGET: usize = 200_000;

/// Sup-norm stopping threshold for product value iteration.
pub const OPT_VI_TOL: f64 = 1e-10;

const OPT_VI_MAX_SWEEPS: usize = 1_000_000;

/// Stream id for transition draws.
const STREAM_TRANSITION: u64 = 0x7472_616e;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("product dynamic program needs {required} state-action pairs, budget is {budget}")]
    BudgetExceeded { required: usize, budget: usize },
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Whittle(#[from] WhittleError),
    #[error("product value iteration did not converge")]
    NoConvergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Wip,
    Myp,
    Opt,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Wip => "wip",
            PolicyKind::Myp => "myp",
            PolicyKind::Opt => "opt",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "wip" => Some(Self::Wip),
            "myp" => Some(Self::Myp),
            "opt" => Some(Self::Opt),
            _ => None,
        }
    }
}

/// Simulation parameters.
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Trajectory length `T`.
    pub horizon: usize,
    /// Number of trajectories `S`.
    pub trajectories: usize,
    pub seed: u64,
    pub policies: Vec<PolicyKind>,
    /// Per-arm initial states (0-based); all arms start in state 1 when
    /// absent.
    pub initial: Option<Vec<usize>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 250,
            trajectories: 2500,
            seed: 0,
            policies: vec![PolicyKind::Wip, PolicyKind::Myp],
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Monte-Carlo comparison output.
#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub cost: BTreeMap<PolicyKind, CostEstimate>,
    /// `J(opt) / J(wip)`; present when both were simulated.
    pub alpha_opt: Option<f64>,
    /// `(J(myp) - J(wip)) / J(myp)`; present when both were simulated.
    pub eps_myp: Option<f64>,
    /// `beta^T * max|joint cost|`, the discarded-tail bound.
    pub truncation_bound: f64,
    pub seed: u64,
    pub trajectories: usize,
    pub horizon: usize,
    pub rng: &'static str,
}

/// Activate the `m` arms whose current states carry the largest indices;
/// ties go to the lower arm id. Exactly `m` entries are true.
pub fn wip_action(tables: &[WhittleTable], states: &[usize], m: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..tables.len()).collect();
    order.sort_by(|&a, &b| {
        tables[b].index[states[b]]
            .total_cmp(&tables[a].index[states[a]])
            .then(a.cmp(&b))
    });
    let mut out = vec![false; tables.len()];
    for &arm in order.iter().take(m) {
        out[arm] = true;
    }
    out
}

/// Activate the `m` arms with the smallest one-step cost of switching to
/// active, `c(x,1) - c(x,0)`; ties go to the lower arm id.
pub fn myp_action(arms: &[BanditModel], states: &[usize], m: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..arms.len()).collect();
    order.sort_by(|&a, &b| {
        let da = arms[a].cost_at(states[a], true) - arms[a].cost_at(states[a], false);
        let db = arms[b].cost_at(states[b], true) - arms[b].cost_at(states[b], false);
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let mut out = vec![false; arms.len()];
    for &arm in order.iter().take(m) {
        out[arm] = true;
    }
    out
}

/// Exact joint policy as a lookup over product states.
#[derive(Debug, Clone)]
pub struct JointPolicy {
    dims: Vec<usize>,
    actions: Vec<Vec<usize>>,
    choice: Vec<u32>,
}

impl JointPolicy {
    fn flat_index(&self, states: &[usize]) -> usize {
        let mut idx = 0;
        for (i, &x) in states.iter().enumerate() {
            idx = idx * self.dims[i] + x;
        }
        idx
    }

    /// Active arms for a joint state.
    pub fn action(&self, states: &[usize]) -> Vec<bool> {
        let subset = &self.actions[self.choice[self.flat_index(states)] as usize];
        let mut out = vec![false; self.dims.len()];
        for &arm in subset {
            out[arm] = true;
        }
        out
    }
}

/// Number of product state-action pairs the exact policy would need.
pub fn opt_budget_required(multi: &MultiArmModel) -> usize {
    let size: usize = multi.arms().iter().map(|a| a.num_states()).product();
    size * combinations(multi.num_arms(), multi.budget()).len()
}

/// All `m`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(m);
    fn rec(start: usize, n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, m, cur, out);
            cur.pop();
        }
    }
    rec(0, n, m, &mut cur, &mut out);
    out
}

/// Expectation of `v` over one arm's transition row, taken along `axis`
/// of the row-major product tensor.
fn contract_axis(src: &[f64], dst: &mut [f64], dims: &[usize], axis: usize, p: &DMatrix<f64>) {
    let k = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    for o in 0..outer {
        let base = o * k * inner;
        for inn in 0..inner {
            for x in 0..k {
                let mut acc = 0.0;
                for y in 0..k {
                    acc += p[(x, y)] * src[base + y * inner + inn];
                }
                dst[base + x * inner + inn] = acc;
            }
        }
    }
}

/// Value iteration on the product process over the feasible joint actions.
///
/// The expectation under a joint action factorizes over arms, so each
/// backup contracts the value tensor one arm at a time instead of
/// enumerating successor states.
pub fn opt_policy(multi: &MultiArmModel, budget: usize) -> Result<JointPolicy, SimError> {
    let n = multi.num_arms();
    let m = multi.budget();
    let beta = multi.discount();
    let dims: Vec<usize> = multi.arms().iter().map(|a| a.num_states()).collect();
    let size: usize = dims.iter().product();
    let actions = combinations(n, m);
    let required = size * actions.len();
    if required > budget {
        return Err(SimError::BudgetExceeded { required, budget });
    }

    // (1-beta)-normalized immediate cost tensor per joint action.
    let mut cost: Vec<Vec<f64>> = Vec::with_capacity(actions.len());
    for subset in &actions {
        let active: Vec<bool> = {
            let mut v = vec![false; n];
            for &arm in subset {
                v[arm] = true;
            }
            v
        };
        let mut tensor = vec![0.0; size];
        for (i, arm) in multi.arms().iter().enumerate() {
            let inner: usize = dims[i + 1..].iter().product();
            let outer: usize = dims[..i].iter().product();
            for o in 0..outer {
                for x in 0..dims[i] {
                    let c = (1.0 - beta) * arm.cost_at(x, active[i]);
                    let base = (o * dims[i] + x) * inner;
                    for cell in &mut tensor[base..base + inner] {
                        *cell += c;
                    }
                }
            }
        }
        cost.push(tensor);
    }

    let mut v = vec![0.0; size];
    let mut scratch_a = vec![0.0; size];
    let mut scratch_b = vec![0.0; size];
    let mut converged = false;
    for _ in 0..OPT_VI_MAX_SWEEPS {
        let mut new_v = vec![f64::INFINITY; size];
        for (a_idx, subset) in actions.iter().enumerate() {
            scratch_a.copy_from_slice(&v);
            for (i, arm) in multi.arms().iter().enumerate() {
                let p = arm.p(subset.contains(&i));
                contract_axis(&scratch_a, &mut scratch_b, &dims, i, p);
                std::mem::swap(&mut scratch_a, &mut scratch_b);
            }
            let c = &cost[a_idx];
            for s in 0..size {
                let q = c[s] + beta * scratch_a[s];
                if q < new_v[s] {
                    new_v[s] = q;
                }
            }
        }
        let delta = v
            .iter()
            .zip(new_v.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        v = new_v;
        if delta < OPT_VI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SimError::NoConvergence);
    }

    // Greedy extraction; the first minimizing action wins, and subsets are
    // enumerated in lexicographic order, so ties prefer lower arm ids.
    let mut best_q = vec![f64::INFINITY; size];
    let mut choice = vec![0u32; size];
    for (a_idx, subset) in actions.iter().enumerate() {
        scratch_a.copy_from_slice(&v);
        for (i, arm) in multi.arms().iter().enumerate() {
            let p = arm.p(subset.contains(&i));
            contract_axis(&scratch_a, &mut scratch_b, &dims, i, p);
            std::mem::swap(&mut scratch_a, &mut scratch_b);
        }
        let c = &cost[a_idx];
        for s in 0..size {
            let q = c[s] + beta * scratch_a[s];
            if q < best_q[s] {
                best_q[s] = q;
                choice[s] = a_idx as u32;
            }
        }
    }
    Ok(JointPolicy { dims, actions, choice })
}

/// A policy ready to drive trajectories.
pub enum SimPolicy<'a> {
    Whittle(&'a [WhittleTable]),
    Myopic,
    Optimal(&'a JointPolicy),
}

impl SimPolicy<'_> {
    fn decide(&self, multi: &MultiArmModel, states: &[usize]) -> Vec<bool> {
        match self {
            SimPolicy::Whittle(tables) => wip_action(tables, states, multi.budget()),
            SimPolicy::Myopic => myp_action(multi.arms(), states, multi.budget()),
            SimPolicy::Optimal(joint) => joint.action(states),
        }
    }
}

fn sample_row(p: &DMatrix<f64>, from: usize, u: f64) -> usize {
    let k = p.ncols();
    let mut acc = 0.0;
    for y in 0..k {
        acc += p[(from, y)];
        if u < acc {
            return y;
        }
    }
    k - 1
}

fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
    let pool = POOL.get_or_init(|| {
        std::env::var("WHITTLE_LAB_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .map(|n| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .expect("thread pool")
            })
    });
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

/// Discounted cost of every trajectory, indexed by trajectory.
pub fn simulate_costs(multi: &MultiArmModel, policy: &SimPolicy, cfg: &SimConfig) -> Vec<f64> {
    let n = multi.num_arms();
    let beta = multi.discount();
    let x0 = cfg.initial.clone().unwrap_or_else(|| vec![0; n]);
    assert_eq!(x0.len(), n, "initial state vector length mismatch");
    let policy_ref = &policy;
    with_pool(|| {
        (0..cfg.trajectories as u64)
            .into_par_iter()
            .map(|traj| {
                let mut states = x0.clone();
                let mut disc = 1.0;
                let mut total = 0.0;
                for t in 0..cfg.horizon as u64 {
                    let actions = policy_ref.decide(multi, &states);
                    let step_cost: f64 = (0..n)
                        .map(|i| multi.arms()[i].cost_at(states[i], actions[i]))
                        .sum();
                    total += disc * step_cost;
                    for (i, state) in states.iter_mut().enumerate() {
                        let u = stream_unit_f64(
                            cfg.seed,
                            &[STREAM_TRANSITION, traj, i as u64, t],
                        );
                        *state = sample_row(multi.arms()[i].p(actions[i]), *state, u);
                    }
                    disc *= beta;
                }
                (1.0 - beta) * total
            })
            .collect()
    })
}

fn estimate(costs: &[f64]) -> CostEstimate {
    let s = costs.len();
    let mean = costs.iter().sum::<f64>() / s as f64;
    let stderr = if s > 1 {
        let var = costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (s - 1) as f64;
        (var / s as f64).sqrt()
    } else {
        0.0
    };
    CostEstimate { mean, stderr }
}

/// Mean discounted cost with its standard error.
pub fn run_mc(multi: &MultiArmModel, policy: &SimPolicy, cfg: &SimConfig) -> CostEstimate {
    estimate(&simulate_costs(multi, policy, cfg))
}

/// Largest absolute joint per-step cost, from per-arm extremes.
pub fn max_abs_joint_cost(multi: &MultiArmModel) -> f64 {
    let mut hi = 0.0;
    let mut lo = 0.0;
    for arm in multi.arms() {
        let values = || {
            (0..arm.num_states())
                .flat_map(|x| [arm.cost_at(x, false), arm.cost_at(x, true)])
        };
        hi += values().fold(f64::NEG_INFINITY, f64::max);
        lo += values().fold(f64::INFINITY, f64::min);
    }
    hi.abs().max(lo.abs())
}

/// Per-arm index tables, taking the restart shortcut when it applies.
///
/// The aggregated restart route cannot rank states the restart
/// distribution never reaches (its activation gaps vanish there), so a
/// degenerate step falls back to the general per-state pass.
pub fn compute_tables(multi: &MultiArmModel) -> Result<Vec<WhittleTable>, WhittleError> {
    multi
        .arms()
        .iter()
        .map(|arm| {
            if arm.is_restart() {
                match crate::restart::compute_whittle_restart(arm) {
                    Err(WhittleError::DegenerateStep { .. }) => {
                        compute_whittle(arm).map(|run| run.table)
                    }
                    other => other,
                }
            } else {
                compute_whittle(arm).map(|run| run.table)
            }
        })
        .collect()
}

/// Simulate the requested policies from precomputed inputs and assemble
/// the comparison report. Every policy sees the same transition draws.
///
/// # Panics
/// Panics if a requested policy is missing its precomputed input.
pub fn compare_policies(
    multi: &MultiArmModel,
    cfg: &SimConfig,
    tables: Option<&[WhittleTable]>,
    joint: Option<&JointPolicy>,
) -> SimReport {
    let mut cost = BTreeMap::new();
    for &kind in &cfg.policies {
        let policy = match kind {
            PolicyKind::Wip => SimPolicy::Whittle(tables.expect("index tables required for wip")),
            PolicyKind::Myp => SimPolicy::Myopic,
            PolicyKind::Opt => SimPolicy::Optimal(joint.expect("joint policy required for opt")),
        };
        cost.insert(kind, run_mc(multi, &policy, cfg));
    }

    let get = |k: PolicyKind| cost.get(&k).map(|e| e.mean);
    let alpha_opt = match (get(PolicyKind::Opt), get(PolicyKind::Wip)) {
        (Some(opt), Some(wip)) => Some(opt / wip),
        _ => None,
    };
    let eps_myp = match (get(PolicyKind::Myp), get(PolicyKind::Wip)) {
        (Some(myp), Some(wip)) => Some((myp - wip) / myp),
        _ => None,
    };

    SimReport {
        cost,
        alpha_opt,
        eps_myp,
        truncation_bound: multi.discount().powi(cfg.horizon as i32) * max_abs_joint_cost(multi),
        seed: cfg.seed,
        trajectories: cfg.trajectories,
        horizon: cfg.horizon,
        rng: RNG_NAME,
    }
}

/// Compute whatever the requested policies need, then compare them under
/// common random numbers.
pub fn run_comparison(
    multi: &MultiArmModel,
    cfg: &SimConfig,
    opt_budget: usize,
) -> Result<SimReport, SimError> {
    let tables = if cfg.policies.contains(&PolicyKind::Wip) {
        Some(compute_tables(multi)?)
    } else {
        None
    };
    let joint = if cfg.policies.contains(&PolicyKind::Opt) {
        Some(opt_policy(multi, opt_budget)?)
    } else {
        None
    };
    Ok(compare_policies(multi, cfg, tables.as_deref(), joint.as_ref()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn table(values: Vec<f64>) -> WhittleTable {
        WhittleTable::from_indices(values)
    }

    fn identity_arm(costs: Vec<f64>, beta: f64) -> BanditModel {
        let k = costs.len();
        let eye: Vec<Vec<f64>> = (0..k)
            .map(|x| (0..k).map(|y| (x == y) as u8 as f64).collect())
            .collect();
        BanditModel::from_rows(&eye, &eye, &costs, &costs, beta).unwrap()
    }

    #[test]
    fn wip_activates_largest_index() {
        let tables = vec![table(vec![0.5]), table(vec![0.2]), table(vec![0.9])];
        assert_eq!(wip_action(&tables, &[0, 0, 0], 1), vec![false, false, true]);
    }

    #[test]
    fn wip_ties_prefer_lower_arm() {
        let tables = vec![table(vec![0.3]); 3];
        assert_eq!(wip_action(&tables, &[0, 0, 0], 2), vec![true, true, false]);
    }

    #[test]
    fn wip_uses_current_state_indices() {
        // Two copies of the worked model in states 2 and 3: indices 0.8 vs
        // 0.57, so the first arm wins.
        let t = table(vec![0.18, 0.8, 0.57]);
        let tables = vec![t.clone(), t];
        assert_eq!(wip_action(&tables, &[1, 2], 1), vec![true, false]);
    }

    #[test]
    fn myp_activates_smallest_cost_difference() {
        let a = identity_arm(vec![0.0], 0.9);
        let mut fa = a.to_file();
        fa.cost_active = vec![5.0];
        let mut fb = a.to_file();
        fb.cost_active = vec![-1.0];
        let arms = vec![fa.into_model().unwrap(), fb.into_model().unwrap()];
        assert_eq!(myp_action(&arms, &[0, 0], 1), vec![false, true]);

        let same = vec![identity_arm(vec![1.0], 0.9), identity_arm(vec![1.0], 0.9)];
        assert_eq!(myp_action(&same, &[0, 0], 1), vec![true, false]);
    }

    #[test]
    fn deterministic_chain_matches_analytic_cost() {
        // Identity transitions: each arm sits in its start state forever.
        let beta: f64 = 0.9;
        let arms = vec![
            identity_arm(vec![1.0, 2.0], beta),
            identity_arm(vec![3.0, 4.0], beta),
        ];
        let multi = MultiArmModel::new(arms, 1).unwrap();
        let cfg = SimConfig {
            horizon: 200,
            trajectories: 4,
            seed: 5,
            policies: vec![PolicyKind::Myp],
            initial: Some(vec![1, 0]),
        };
        let est = run_mc(&multi, &SimPolicy::Myopic, &cfg);
        // Per-step joint cost is 2 + 3 = 5 regardless of the action.
        let expected = 5.0 * (1.0 - beta.powi(200));
        assert_abs_diff_eq!(est.mean, expected, epsilon = 1e-9);
        assert_eq!(est.stderr, 0.0);
    }

    fn mixing_arm(seed: u64) -> BanditModel {
        let mut rng = crate::rng::SplitMix64::new(seed);
        let mut row = |k: usize| {
            let raw: Vec<f64> = (0..k).map(|_| rng.next_f64() + 0.05).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let p0: Vec<Vec<f64>> = (0..3).map(|_| row(3)).collect();
        let p1: Vec<Vec<f64>> = (0..3).map(|_| row(3)).collect();
        BanditModel::from_rows(&p0, &p1, &[0.0, 1.0, 2.0], &[1.5, 1.5, 1.5], 0.9).unwrap()
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let arms = vec![mixing_arm(11), mixing_arm(12)];
        let multi = MultiArmModel::new(arms, 1).unwrap();
        let cfg = SimConfig {
            horizon: 50,
            trajectories: 40,
            seed: 99,
            policies: vec![PolicyKind::Myp],
            initial: None,
        };
        let a = simulate_costs(&multi, &SimPolicy::Myopic, &cfg);
        let b = simulate_costs(&multi, &SimPolicy::Myopic, &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn every_action_vector_has_budget_ones() {
        let t = vec![table(vec![0.1, 0.4, 0.2]); 5];
        for states in [[0, 1, 2, 0, 1], [2, 2, 2, 2, 2]] {
            assert_eq!(wip_action(&t, &states, 2).iter().filter(|&&a| a).count(), 2);
        }
    }

    #[test]
    fn identical_action_product_model_has_flat_optimum() {
        let beta: f64 = 0.9;
        let arms = vec![
            identity_arm(vec![1.0, 1.0], beta),
            identity_arm(vec![2.0, 2.0], beta),
        ];
        let multi = MultiArmModel::new(arms, 1).unwrap();
        let joint = opt_policy(&multi, DEFAULT_OPT_BUDGET).unwrap();
        // Any feasible policy is optimal; simulated cost equals the fixed
        // discounted stream of 3 per step.
        let cfg = SimConfig {
            horizon: 300,
            trajectories: 2,
            seed: 1,
            policies: vec![],
            initial: None,
        };
        let est = run_mc(&multi, &SimPolicy::Optimal(&joint), &cfg);
        assert_abs_diff_eq!(est.mean, 3.0 * (1.0 - beta.powi(300)), epsilon = 1e-9);
    }

    #[test]
    fn budget_gate_trips() {
        let arms = vec![identity_arm(vec![0.0; 10], 0.9); 6];
        let multi = MultiArmModel::new(arms, 3).unwrap();
        match opt_policy(&multi, DEFAULT_OPT_BUDGET) {
            Err(SimError::BudgetExceeded { required, budget }) => {
                assert_eq!(required, 10usize.pow(6) * 20);
                assert_eq!(budget, DEFAULT_OPT_BUDGET);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }

}
