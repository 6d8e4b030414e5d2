//! Whittle index computation.
//!
//! The main entry point is [`compute_whittle`], a greedy pass that grows
//! the nested family of passive sets. At step `d`, with passive set `P_d`
//! and its policy `h_d`, every candidate state `y` outside `P_d` is tried
//! as an extra passive state (`h_dy`). Over the states where the two
//! activation measures differ,
//!
//! ```text
//! mu_dy(x) = (d_hdy(x) - d_hd(x)) / (n_hd(x) - n_hdy(x))
//! ```
//!
//! the candidate score is `mu*_dy = min_x mu_dy(x)`; the smallest score
//! becomes the next index value and every minimizing candidate joins the
//! passive set at once. For indexable models the produced values are
//! strictly increasing and equal the Whittle indices.
//!
//! [`whittle_oracle`] provides the independent route: bisection on the
//! penalty at which the optimal action for a state flips. The two routes
//! are kept separate so each can check the other.
//!
//! [`adaptive_greedy_pcl`] is the classical one-state-per-step variant
//! driven by measures aggregated under a start distribution; it is only
//! guaranteed correct under the PCL conditions, which [`check_pcl`]
//! verifies by exhaustive subset enumeration at small state counts.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::mdp::{policy_eval, solve_lambda, MdpError};
use crate::model::{BanditModel, PolicyVec};

/// Number of penalty samples in the oracle's monotonicity pre-scan.
pub const ORACLE_PRESCAN_POINTS: usize = 128;

/// Default bisection width for the oracle.
pub const ORACLE_DEFAULT_TOL: f64 = 1e-7;

/// Cap on window doublings in [`index_bounds`].
const MAX_DOUBLINGS: u32 = 60;

#[derive(Debug, Error)]
pub enum WhittleError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("index window expansion exceeded {0} doublings; the model appears malformed")]
    BoundsExpansion(u32),
    #[error("non-indexable or degenerate: no candidate has a usable activation gap at step {step}")]
    DegenerateStep { step: usize },
    #[error("indexability violation: index values decreased from {previous} to {next}")]
    IndexOrderViolation { previous: f64, next: f64 },
    #[error("indexability violation for state {}: optimal action flips {changes} times over the penalty scan", .state + 1)]
    NonMonotoneFlip { state: usize, changes: usize },
    #[error("model is not a controlled-restart bandit: active rows differ beyond tolerance")]
    NotRestart,
    #[error("{0}")]
    PclCondition1(PclConditionFailure),
}

/// Membership tolerance for the set of states with a usable activation
/// gap between two policies.
pub fn eps_n(n_scale: f64) -> f64 {
    1e-9 * (1.0 + n_scale)
}

/// Tolerance for treating candidate scores as tied.
pub fn eps_mu(lambda: f64) -> f64 {
    1e-8 * (1.0 + lambda.abs())
}

/// Per-state Whittle indices together with the sorted distinct values and
/// the nested passive sets that generate them. States are 0-based.
#[derive(Debug, Clone)]
pub struct WhittleTable {
    pub index: Vec<f64>,
    pub distinct: Vec<f64>,
    pub sets: Vec<Vec<usize>>,
}

impl WhittleTable {
    /// Group states by index value (ties within [`eps_mu`]) and rebuild
    /// the nested-set view. Used by computation paths that produce the
    /// per-state values directly.
    pub fn from_indices(index: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..index.len()).collect();
        order.sort_by(|&a, &b| index[a].total_cmp(&index[b]).then(a.cmp(&b)));
        let mut distinct = Vec::new();
        let mut sets: Vec<Vec<usize>> = Vec::new();
        let mut cumulative = Vec::new();
        for &x in &order {
            let v = index[x];
            match distinct.last() {
                Some(&last) if v <= last + eps_mu(last) => {
                    cumulative.push(x);
                    let set = sets.last_mut().expect("group exists");
                    set.push(x);
                    set.sort_unstable();
                }
                _ => {
                    distinct.push(v);
                    cumulative.push(x);
                    let mut set = cumulative.clone();
                    set.sort_unstable();
                    sets.push(set);
                }
            }
        }
        Self { index, distinct, sets }
    }

    pub fn num_states(&self) -> usize {
        self.index.len()
    }

    /// 1-based group label of a state: the position of its index value in
    /// the sorted distinct list.
    pub fn group_of(&self, state: usize) -> usize {
        for (d, set) in self.sets.iter().enumerate() {
            if set.binary_search(&state).is_ok() {
                return d + 1;
            }
        }
        self.sets.len()
    }
}

/// One candidate evaluation inside a greedy step.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateEval {
    /// States (0-based) where the activation measures differ.
    pub members: Vec<usize>,
    /// Minimum score over `members`; absent when the gap set is empty.
    pub mu_star: Option<f64>,
    /// Max-min score spread over `members`; a health diagnostic that
    /// should stay within ~10x [`eps_mu`] for the chosen candidates.
    pub mu_spread: f64,
}

/// Log record of one greedy step.
#[derive(Debug, Clone, Serialize)]
pub struct GreedyStep {
    pub d: usize,
    pub candidates: BTreeMap<usize, CandidateEval>,
    pub chosen: Vec<usize>,
    pub lambda_next: f64,
}

/// Table plus the full step log.
#[derive(Debug, Clone)]
pub struct WhittleRun {
    pub table: WhittleTable,
    pub steps: Vec<GreedyStep>,
}

/// Incremental construction of a [`WhittleTable`] by successive greedy
/// groups, shared by the general and restart-specialized passes.
pub(crate) struct TableBuilder {
    passive: Vec<bool>,
    index: Vec<f64>,
    distinct: Vec<f64>,
    sets: Vec<Vec<usize>>,
}

impl TableBuilder {
    pub(crate) fn new(k: usize) -> Self {
        Self { passive: vec![false; k], index: vec![0.0; k], distinct: Vec::new(), sets: Vec::new() }
    }

    pub(crate) fn done(&self) -> bool {
        self.passive.iter().all(|&p| p)
    }

    pub(crate) fn is_passive(&self, x: usize) -> bool {
        self.passive[x]
    }

    pub(crate) fn policy(&self) -> PolicyVec {
        PolicyVec::from_fn(self.passive.len(), |x| !self.passive[x])
    }

    /// Add one greedy group. A backward step within [`eps_mu`] is folded
    /// into the previous group as a numerical tie; a larger backward step
    /// is an indexability violation.
    pub(crate) fn push_group(
        &mut self,
        chosen: &[usize],
        lambda_next: f64,
    ) -> Result<(), WhittleError> {
        let mut group_value = lambda_next;
        if let Some(&previous) = self.distinct.last() {
            if lambda_next <= previous - eps_mu(lambda_next) {
                return Err(WhittleError::IndexOrderViolation { previous, next: lambda_next });
            }
            if lambda_next <= previous {
                group_value = previous;
            }
        }
        for &y in chosen {
            self.passive[y] = true;
            self.index[y] = group_value;
        }
        if self.distinct.last() == Some(&group_value) {
            let set = self.sets.last_mut().expect("previous group exists");
            set.extend(chosen.iter().copied());
            set.sort_unstable();
        } else {
            self.distinct.push(group_value);
            let mut set: Vec<usize> =
                (0..self.passive.len()).filter(|&x| self.passive[x]).collect();
            set.sort_unstable();
            self.sets.push(set);
        }
        Ok(())
    }

    pub(crate) fn finish(self) -> WhittleTable {
        WhittleTable { index: self.index, distinct: self.distinct, sets: self.sets }
    }
}

/// A penalty window `(lo, hi)` with the all-active policy optimal at `lo`
/// and the all-passive policy optimal at `hi`; every index lies inside.
///
/// Found by doubling expansion from `±(1 + max|c|) / (1 - beta)`.
pub fn index_bounds(model: &BanditModel) -> Result<(f64, f64), WhittleError> {
    let k = model.num_states();
    let base = (1.0 + model.max_abs_cost()) / (1.0 - model.discount());

    let mut lo = -base;
    let mut ok = false;
    for _ in 0..=MAX_DOUBLINGS {
        if solve_lambda(model, lo)?.policy.count_active() == k {
            ok = true;
            break;
        }
        lo *= 2.0;
    }
    if !ok {
        return Err(WhittleError::BoundsExpansion(MAX_DOUBLINGS));
    }

    let mut hi = base;
    ok = false;
    for _ in 0..=MAX_DOUBLINGS {
        if solve_lambda(model, hi)?.policy.count_active() == 0 {
            ok = true;
            break;
        }
        hi *= 2.0;
    }
    if !ok {
        return Err(WhittleError::BoundsExpansion(MAX_DOUBLINGS));
    }
    Ok((lo, hi))
}

fn gap_eps(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = a.iter().chain(b.iter()).fold(0.0f64, |m, &v| m.max(v.abs()));
    eps_n(scale)
}

/// Run the generalized greedy pass over all states.
///
/// The caller is responsible for indexability; on non-indexable input the
/// pass either reports a degenerate step, a decreasing index sequence, or
/// silently returns values that [`whittle_oracle`] will contradict.
pub fn compute_whittle(model: &BanditModel) -> Result<WhittleRun, WhittleError> {
    let k = model.num_states();
    let mut builder = TableBuilder::new(k);
    let mut steps: Vec<GreedyStep> = Vec::new();

    let mut d = 0;
    while !builder.done() {
        let h_d = builder.policy();
        let eval_d = policy_eval(model, &h_d)?;

        let mut candidates: BTreeMap<usize, CandidateEval> = BTreeMap::new();
        let mut best: Option<f64> = None;
        for y in 0..k {
            if builder.is_passive(y) {
                continue;
            }
            let eval_y = policy_eval(model, &h_d.with_passive(y))?;
            let eps = gap_eps(&eval_d.n, &eval_y.n);
            let members: Vec<usize> =
                (0..k).filter(|&x| (eval_d.n[x] - eval_y.n[x]).abs() > eps).collect();
            let (mu_star, mu_spread) = if members.is_empty() {
                (None, 0.0)
            } else {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for &x in &members {
                    let mu = (eval_y.d[x] - eval_d.d[x]) / (eval_d.n[x] - eval_y.n[x]);
                    min = min.min(mu);
                    max = max.max(mu);
                }
                (Some(min), max - min)
            };
            if let Some(mu) = mu_star {
                best = Some(best.map_or(mu, |b: f64| b.min(mu)));
            }
            candidates.insert(y, CandidateEval { members, mu_star, mu_spread });
        }

        let lambda_next = best.ok_or(WhittleError::DegenerateStep { step: d })?;
        let tie = eps_mu(lambda_next);
        let chosen: Vec<usize> = candidates
            .iter()
            .filter(|(_, c)| c.mu_star.is_some_and(|mu| mu <= lambda_next + tie))
            .map(|(&y, _)| y)
            .collect();
        builder.push_group(&chosen, lambda_next)?;
        steps.push(GreedyStep { d, candidates, chosen, lambda_next });
        d += 1;
    }

    Ok(WhittleRun { table: builder.finish(), steps })
}

struct OracleScan {
    grid: Vec<f64>,
    active: Vec<Vec<bool>>, // per grid point, per state
}

fn oracle_prescan(model: &BanditModel) -> Result<OracleScan, WhittleError> {
    let (lo, hi) = index_bounds(model)?;
    let grid = crate::indexability::equispaced(lo, hi, ORACLE_PRESCAN_POINTS);
    let mut active = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let sol = solve_lambda(model, lambda)?;
        active.push((0..model.num_states()).map(|x| sol.policy.is_active(x)).collect());
    }
    Ok(OracleScan { grid, active })
}

fn bisect_state(
    model: &BanditModel,
    scan: &OracleScan,
    state: usize,
    tol: f64,
) -> Result<f64, WhittleError> {
    let activity: Vec<bool> = scan.active.iter().map(|row| row[state]).collect();
    let changes = activity.windows(2).filter(|w| w[0] != w[1]).count();
    if changes != 1 {
        return Err(WhittleError::NonMonotoneFlip { state, changes });
    }
    let i = activity.windows(2).position(|w| w[0] != w[1]).expect("one flip");
    let (mut lo, mut hi) = (scan.grid[i], scan.grid[i + 1]);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if solve_lambda(model, mid)?.policy.is_active(state) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bisection on the penalty at which the optimal action for `state`
/// flips from active to passive. Independent of the greedy pass.
pub fn whittle_oracle(model: &BanditModel, state: usize, tol: f64) -> Result<f64, WhittleError> {
    let scan = oracle_prescan(model)?;
    bisect_state(model, &scan, state, tol)
}

/// Oracle indices for every state, sharing one pre-scan.
pub fn whittle_oracle_all(model: &BanditModel, tol: f64) -> Result<Vec<f64>, WhittleError> {
    let scan = oracle_prescan(model)?;
    (0..model.num_states()).map(|x| bisect_state(model, &scan, x, tol)).collect()
}

/// Witness that the aggregated activation measure failed to decrease when
/// a state was added to the passive set. States are 0-based internally.
#[derive(Debug, Clone, Serialize)]
pub struct PclConditionFailure {
    pub subset: Vec<usize>,
    pub y: usize,
    pub g: PolicyVec,
    pub h: PolicyVec,
    pub n_g: f64,
    pub n_h: f64,
}

impl std::fmt::Display for PclConditionFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let subset: Vec<usize> = self.subset.iter().map(|s| s + 1).collect();
        write!(
            f,
            "PCL condition 1 fails at passive set {:?} with candidate state {}: \
             aggregated activation {} under g={} does not exceed {} under h={}",
            subset,
            self.y + 1,
            self.n_g,
            self.g,
            self.n_h,
            self.h
        )
    }
}

impl std::error::Error for PclConditionFailure {}

/// One step of the classical adaptive greedy pass.
#[derive(Debug, Clone, Serialize)]
pub struct PclStep {
    pub k: usize,
    pub scores: BTreeMap<usize, f64>,
    pub picked: usize,
    pub value: f64,
}

/// Output of the classical pass.
#[derive(Debug, Clone)]
pub struct AdaptiveGreedyRun {
    pub index: Vec<f64>,
    pub steps: Vec<PclStep>,
    /// Whether the generated value sequence is monotonically
    /// non-decreasing (the second PCL condition).
    pub nondecreasing: bool,
}

fn aggregate(weights: &[f64], v: &DVector<f64>) -> f64 {
    weights.iter().zip(v.iter()).map(|(w, x)| w * x).sum()
}

/// Classical adaptive greedy: one state per step, scores formed from
/// measures aggregated under the start distribution `pi0`.
///
/// Fails with a condition-1 witness as soon as a candidate's aggregated
/// activation gap is not strictly positive.
///
/// # Panics
/// Panics if `pi0` is not a distribution over the model's states.
pub fn adaptive_greedy_pcl(
    model: &BanditModel,
    pi0: &[f64],
) -> Result<AdaptiveGreedyRun, WhittleError> {
    let k = model.num_states();
    assert_eq!(pi0.len(), k, "pi0 length {} does not match K={k}", pi0.len());
    let total: f64 = pi0.iter().sum();
    assert!(
        pi0.iter().all(|&w| w >= 0.0) && (total - 1.0).abs() <= 1e-9,
        "pi0 must be a probability distribution"
    );

    let mut passive: Vec<usize> = Vec::new();
    let mut index = vec![0.0; k];
    let mut steps = Vec::new();
    for step_k in 0..k {
        let g = PolicyVec::from_passive_set(k, &passive);
        let eval_g = policy_eval(model, &g)?;
        let (d_g, n_g) = (aggregate(pi0, &eval_g.d), aggregate(pi0, &eval_g.n));

        let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
        for y in 0..k {
            if passive.contains(&y) {
                continue;
            }
            let h = g.with_passive(y);
            let eval_h = policy_eval(model, &h)?;
            let (d_h, n_h) = (aggregate(pi0, &eval_h.d), aggregate(pi0, &eval_h.n));
            let gap = n_g - n_h;
            if gap <= eps_n(n_g.abs().max(n_h.abs())) {
                return Err(WhittleError::PclCondition1(PclConditionFailure {
                    subset: passive.clone(),
                    y,
                    g,
                    h,
                    n_g,
                    n_h,
                }));
            }
            scores.insert(y, (d_h - d_g) / gap);
        }

        let min = scores.values().copied().fold(f64::INFINITY, f64::min);
        let picked = *scores
            .iter()
            .find(|(_, &mu)| mu <= min + eps_mu(min))
            .expect("nonempty candidate set")
            .0;
        index[picked] = min;
        passive.push(picked);
        passive.sort_unstable();
        steps.push(PclStep { k: step_k, scores, picked, value: min });
    }

    let nondecreasing = steps
        .windows(2)
        .all(|w| w[1].value >= w[0].value - eps_mu(w[0].value));
    Ok(AdaptiveGreedyRun { index, steps, nondecreasing })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PclScope {
    /// Condition 1 verified over every subset.
    Exact,
    /// Condition 1 checked only along the greedy trajectory.
    Partial,
}

/// Verdict of the PCL check.
#[derive(Debug, Clone)]
pub struct PclReport {
    pub pcl_indexable: bool,
    pub scope: PclScope,
    pub condition1_holds: bool,
    pub violations: Vec<PclConditionFailure>,
    /// Second condition (non-decreasing generated values); `None` when the
    /// greedy pass aborted on a condition-1 failure.
    pub condition2: Option<bool>,
    pub sequence: Vec<f64>,
}

/// Check both PCL conditions.
///
/// For `K <= k_cap` condition 1 is verified by exhaustive subset
/// enumeration (every violation is collected); beyond the cap only the
/// greedy trajectory is checked and the result is labelled partial.
pub fn check_pcl(
    model: &BanditModel,
    pi0: &[f64],
    k_cap: usize,
) -> Result<PclReport, MdpError> {
    let k = model.num_states();

    let (condition2, sequence, trajectory_failure) = match adaptive_greedy_pcl(model, pi0) {
        Ok(run) => {
            let seq = run.steps.iter().map(|s| s.value).collect();
            (Some(run.nondecreasing), seq, None)
        }
        Err(WhittleError::PclCondition1(f)) => (None, Vec::new(), Some(f)),
        Err(WhittleError::Mdp(e)) => return Err(e),
        Err(other) => unreachable!("unexpected greedy failure: {other}"),
    };

    let (scope, mut violations) = if k <= k_cap {
        let num = 1usize << k;
        let mut n_agg = vec![0.0; num];
        for mask in 0..num {
            // Bit set means the state is passive.
            let g = PolicyVec::from_fn(k, |x| mask >> x & 1 == 0);
            n_agg[mask] = aggregate(pi0, &policy_eval(model, &g)?.n);
        }
        let mut violations = Vec::new();
        for mask in 0..num {
            for y in 0..k {
                if mask >> y & 1 == 1 {
                    continue;
                }
                let with_y = mask | 1 << y;
                let gap = n_agg[mask] - n_agg[with_y];
                if gap <= eps_n(n_agg[mask].abs().max(n_agg[with_y].abs())) {
                    violations.push(PclConditionFailure {
                        subset: (0..k).filter(|&x| mask >> x & 1 == 1).collect(),
                        y,
                        g: PolicyVec::from_fn(k, |x| mask >> x & 1 == 0),
                        h: PolicyVec::from_fn(k, |x| with_y >> x & 1 == 0),
                        n_g: n_agg[mask],
                        n_h: n_agg[with_y],
                    });
                }
            }
        }
        (PclScope::Exact, violations)
    } else {
        (PclScope::Partial, Vec::new())
    };

    if let Some(f) = trajectory_failure {
        if !violations
            .iter()
            .any(|v| v.subset == f.subset && v.y == f.y)
        {
            violations.push(f);
        }
    }

    let condition1_holds = violations.is_empty();
    Ok(PclReport {
        pcl_indexable: condition1_holds && condition2 == Some(true),
        scope,
        condition1_holds,
        violations,
        condition2,
        sequence,
    })
}
