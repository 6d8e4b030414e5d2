//! Domain types for a single restless bandit arm and for multi-armed
//! instances.
//!
//! A [`BanditModel`] is a two-action controlled Markov chain over states
//! `{1, ..., K}`: a passive transition matrix `P(0)`, an active matrix
//! `P(1)`, per-state costs for each action, and a discount factor
//! `beta` in `(0, 1)`. States are 0-based in code; every file format and
//! report uses 1-based labels.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default absolute tolerance for row-sum validation.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Default tolerance when detecting a common active row.
pub const RESTART_TOL: f64 = 1e-9;

/// Structural errors raised while assembling models.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("inconsistent dimensions: {0}")]
    Shape(String),
    #[error("{0}")]
    Invalid(#[from] InvalidModel),
    #[error("all arms must share one discount factor (arm {arm} has beta={beta}, arm 1 has beta={expected})")]
    MixedDiscount { arm: usize, beta: f64, expected: f64 },
    #[error("activation budget m={m} must satisfy 1 <= m < n={n}")]
    BadBudget { m: usize, n: usize },
    #[error("failed to read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse model file: {0}")]
    Json(#[from] serde_json::Error),
}

/// A validation failure, carrying enough context to locate it.
/// State and row labels are 1-based, matching file formats.
#[derive(Debug, Clone, Serialize)]
pub enum Violation {
    NonStochasticRow { action: u8, row: usize, sum: f64 },
    NegativeEntry { action: u8, row: usize, col: usize, value: f64 },
    NonFiniteCost { action: u8, state: usize },
    DiscountOutOfRange { beta: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonStochasticRow { action, row, sum } => write!(
                f,
                "row {row} of P({action}) sums to {sum} (expected 1 within {ROW_SUM_TOL:e})"
            ),
            Violation::NegativeEntry { action, row, col, value } => write!(
                f,
                "P({action})[{row},{col}] = {value} is negative"
            ),
            Violation::NonFiniteCost { action, state } => {
                write!(f, "cost c({state},{action}) is not finite")
            }
            Violation::DiscountOutOfRange { beta } => {
                write!(f, "discount out of range: beta={beta} (requires 0 < beta < 1)")
            }
        }
    }
}

/// All invariant violations found in one model.
#[derive(Debug, Clone, Error, Serialize)]
pub struct InvalidModel {
    pub violations: Vec<Violation>,
}

impl std::fmt::Display for InvalidModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid model ({} violation(s)):", self.violations.len())?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

/// One restless bandit arm.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditModel {
    p_passive: DMatrix<f64>,
    p_active: DMatrix<f64>,
    cost_passive: DVector<f64>,
    cost_active: DVector<f64>,
    discount: f64,
}

impl BanditModel {
    /// Assemble a model from row-major matrix rows. Numeric invariants are
    /// *not* checked here; call [`BanditModel::validate`] for that.
    pub fn from_rows(
        p_passive: &[Vec<f64>],
        p_active: &[Vec<f64>],
        cost_passive: &[f64],
        cost_active: &[f64],
        discount: f64,
    ) -> Result<Self, ModelError> {
        let k = p_passive.len();
        if k == 0 {
            return Err(ModelError::Shape("model must have at least one state".into()));
        }
        for (name, m) in [("P0", p_passive), ("P1", p_active)] {
            if m.len() != k {
                return Err(ModelError::Shape(format!(
                    "{name} has {} rows, expected {k}",
                    m.len()
                )));
            }
            for (i, row) in m.iter().enumerate() {
                if row.len() != k {
                    return Err(ModelError::Shape(format!(
                        "{name} row {} has {} entries, expected {k}",
                        i + 1,
                        row.len()
                    )));
                }
            }
        }
        for (name, c) in [("cost_passive", cost_passive), ("cost_active", cost_active)] {
            if c.len() != k {
                return Err(ModelError::Shape(format!(
                    "{name} has {} entries, expected {k}",
                    c.len()
                )));
            }
        }
        let flat = |m: &[Vec<f64>]| DMatrix::from_row_iterator(k, k, m.iter().flatten().copied());
        Ok(Self {
            p_passive: flat(p_passive),
            p_active: flat(p_active),
            cost_passive: DVector::from_column_slice(cost_passive),
            cost_active: DVector::from_column_slice(cost_active),
            discount,
        })
    }

    pub fn num_states(&self) -> usize {
        self.cost_passive.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Transition matrix for action `a`.
    pub fn p(&self, active: bool) -> &DMatrix<f64> {
        if active {
            &self.p_active
        } else {
            &self.p_passive
        }
    }

    /// Cost vector for action `a`.
    pub fn cost(&self, active: bool) -> &DVector<f64> {
        if active {
            &self.cost_active
        } else {
            &self.cost_passive
        }
    }

    /// `c(x, a)` for a 0-based state.
    pub fn cost_at(&self, state: usize, active: bool) -> f64 {
        self.cost(active)[state]
    }

    /// Largest absolute cost over both actions.
    pub fn max_abs_cost(&self) -> f64 {
        self.cost_passive
            .iter()
            .chain(self.cost_active.iter())
            .fold(0.0, |m, &c| m.max(c.abs()))
    }

    /// Collect every violated invariant. An empty list means valid.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.discount > 0.0 && self.discount < 1.0) {
            out.push(Violation::DiscountOutOfRange { beta: self.discount });
        }
        for (action, m) in [(0u8, &self.p_passive), (1u8, &self.p_active)] {
            for i in 0..m.nrows() {
                let mut sum = 0.0;
                for j in 0..m.ncols() {
                    let v = m[(i, j)];
                    if !(v >= 0.0) {
                        out.push(Violation::NegativeEntry {
                            action,
                            row: i + 1,
                            col: j + 1,
                            value: v,
                        });
                    }
                    sum += v;
                }
                if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                    out.push(Violation::NonStochasticRow { action, row: i + 1, sum });
                }
            }
        }
        for (action, c) in [(0u8, &self.cost_passive), (1u8, &self.cost_active)] {
            for (i, v) in c.iter().enumerate() {
                if !v.is_finite() {
                    out.push(Violation::NonFiniteCost { action, state: i + 1 });
                }
            }
        }
        out
    }

    /// Check every invariant, returning the full violation list on failure.
    pub fn validate(&self) -> Result<(), InvalidModel> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(InvalidModel { violations })
        }
    }

    /// If every row of `P(1)` agrees entrywise within `tol`, return the
    /// common row: the restart distribution the active action draws from.
    pub fn restart_distribution(&self, tol: f64) -> Option<DVector<f64>> {
        let k = self.num_states();
        for i in 1..k {
            for j in 0..k {
                if (self.p_active[(i, j)] - self.p_active[(0, j)]).abs() > tol {
                    return None;
                }
            }
        }
        Some(self.p_active.row(0).transpose())
    }

    pub fn is_restart(&self) -> bool {
        self.restart_distribution(RESTART_TOL).is_some()
    }

    pub fn to_file(&self) -> ModelFile {
        let k = self.num_states();
        let rows = |m: &DMatrix<f64>| {
            (0..k)
                .map(|i| (0..k).map(|j| m[(i, j)]).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        ModelFile {
            beta: self.discount,
            p0: rows(&self.p_passive),
            p1: rows(&self.p_active),
            cost_passive: self.cost_passive.iter().copied().collect(),
            cost_active: self.cost_active.iter().copied().collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// On-disk JSON schema: matrices row-major, states implicitly 1-based.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub beta: f64,
    #[serde(rename = "P0")]
    pub p0: Vec<Vec<f64>>,
    #[serde(rename = "P1")]
    pub p1: Vec<Vec<f64>>,
    pub cost_passive: Vec<f64>,
    pub cost_active: Vec<f64>,
}

impl ModelFile {
    pub fn into_model(self) -> Result<BanditModel, ModelError> {
        BanditModel::from_rows(&self.p0, &self.p1, &self.cost_passive, &self.cost_active, self.beta)
    }
}

/// A deterministic stationary policy: `true` means active.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PolicyVec(Vec<bool>);

impl PolicyVec {
    pub fn new(actions: Vec<bool>) -> Self {
        Self(actions)
    }

    pub fn all_active(k: usize) -> Self {
        Self(vec![true; k])
    }

    pub fn all_passive(k: usize) -> Self {
        Self(vec![false; k])
    }

    /// Passive exactly on the given 0-based states.
    pub fn from_passive_set(k: usize, passive: &[usize]) -> Self {
        let mut v = vec![true; k];
        for &x in passive {
            v[x] = false;
        }
        Self(v)
    }

    pub fn from_fn(k: usize, f: impl FnMut(usize) -> bool) -> Self {
        Self((0..k).map(f).collect())
    }

    /// Copy of this policy with one extra passive state.
    pub fn with_passive(&self, state: usize) -> Self {
        let mut v = self.0.clone();
        v[state] = false;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_active(&self, state: usize) -> bool {
        self.0[state]
    }

    pub fn active_states(&self) -> Vec<usize> {
        (0..self.len()).filter(|&x| self.0[x]).collect()
    }

    pub fn passive_states(&self) -> Vec<usize> {
        (0..self.len()).filter(|&x| !self.0[x]).collect()
    }

    pub fn count_active(&self) -> usize {
        self.0.iter().filter(|&&a| a).count()
    }

    /// 0/1 view, 1 meaning active.
    pub fn bits(&self) -> Vec<u8> {
        self.0.iter().map(|&a| a as u8).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }
}

impl std::fmt::Display for PolicyVec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", *a as u8)?;
        }
        write!(f, "]")
    }
}

impl Serialize for PolicyVec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|&a| a as u8))
    }
}

/// A multi-armed instance: `n` arms sharing one discount factor, of which
/// `m` must be activated each step.
#[derive(Debug, Clone)]
pub struct MultiArmModel {
    arms: Vec<BanditModel>,
    budget: usize,
}

impl MultiArmModel {
    pub fn new(arms: Vec<BanditModel>, budget: usize) -> Result<Self, ModelError> {
        let n = arms.len();
        if budget < 1 || budget >= n {
            return Err(ModelError::BadBudget { m: budget, n });
        }
        let beta = arms[0].discount();
        for (i, arm) in arms.iter().enumerate().skip(1) {
            if arm.discount() != beta {
                return Err(ModelError::MixedDiscount {
                    arm: i + 1,
                    beta: arm.discount(),
                    expected: beta,
                });
            }
        }
        Ok(Self { arms, budget })
    }

    pub fn arms(&self) -> &[BanditModel] {
        &self.arms
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn discount(&self) -> f64 {
        self.arms[0].discount()
    }

    pub fn validate(&self) -> Result<(), InvalidModel> {
        let mut violations = Vec::new();
        for arm in &self.arms {
            violations.extend(arm.violations());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(InvalidModel { violations })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn worked_model_is_valid() {
        assert!(model_e().validate().is_ok());
    }

    #[test]
    fn non_stochastic_row_is_named() {
        let m = BanditModel::from_rows(
            &[vec![0.5, 0.4], vec![0.5, 0.5]],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[0.0, 0.0],
            &[0.0, 0.0],
            0.5,
        )
        .unwrap();
        let v = m.violations();
        assert_eq!(v.len(), 1);
        match &v[0] {
            Violation::NonStochasticRow { action: 0, row: 1, sum } => {
                assert!((sum - 0.9).abs() < 1e-12)
            }
            other => panic!("unexpected violation {other:?}"),
        }
    }

    #[test]
    fn discount_boundary_is_rejected() {
        let m = BanditModel::from_rows(
            &[vec![1.0]],
            &[vec![1.0]],
            &[0.0],
            &[0.0],
            1.0,
        )
        .unwrap();
        let err = m.validate().unwrap_err();
        assert!(err.to_string().contains("discount out of range"));
    }

    #[test]
    fn nan_entries_are_caught() {
        let m = BanditModel::from_rows(
            &[vec![f64::NAN, 1.0], vec![0.0, 1.0]],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[0.0, f64::INFINITY],
            &[0.0, 0.0],
            0.5,
        )
        .unwrap();
        let v = m.violations();
        assert!(v.iter().any(|v| matches!(v, Violation::NonStochasticRow { .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::NonFiniteCost { action: 0, state: 2 })));
    }

    #[test]
    fn restart_detection() {
        // Identical active rows: unit mass on state 1.
        let m = BanditModel::from_rows(
            &[vec![0.5, 0.5], vec![0.2, 0.8]],
            &[vec![1.0, 0.0], vec![1.0, 0.0]],
            &[0.0, 1.0],
            &[0.5, 0.5],
            0.9,
        )
        .unwrap();
        let q = m.restart_distribution(RESTART_TOL).unwrap();
        assert_eq!(q.as_slice(), &[1.0, 0.0]);

        // The worked model has distinct active rows.
        assert!(model_e().restart_distribution(RESTART_TOL).is_none());

        // Rows differing by 1e-12 count as identical at tol 1e-9.
        let m = BanditModel::from_rows(
            &[vec![0.5, 0.5], vec![0.2, 0.8]],
            &[vec![0.3, 0.7], vec![0.3 + 1e-12, 0.7 - 1e-12]],
            &[0.0, 1.0],
            &[0.5, 0.5],
            0.9,
        )
        .unwrap();
        let q = m.restart_distribution(1e-9).unwrap();
        assert_eq!(q[0], 0.3);
    }

    #[test]
    fn validate_is_pure() {
        let m = model_e();
        let a = m.violations().len();
        let b = m.violations().len();
        assert_eq!(a, b);
        assert_eq!(m, model_e());
    }

    #[test]
    fn json_round_trip() {
        let m = model_e();
        let back = BanditModel::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn policy_vec_basics() {
        let g = PolicyVec::from_passive_set(4, &[1, 3]);
        assert_eq!(g.bits(), vec![1, 0, 1, 0]);
        assert_eq!(g.passive_states(), vec![1, 3]);
        assert_eq!(g.count_active(), 2);
        assert_eq!(g.to_string(), "[1,0,1,0]");
        let h = g.with_passive(0);
        assert_eq!(h.bits(), vec![0, 0, 1, 0]);
        assert_eq!(g.bits(), vec![1, 0, 1, 0]);
    }

    #[test]
    fn multi_arm_invariants() {
        let a = model_e();
        let err = MultiArmModel::new(vec![a.clone(), a.clone()], 2).unwrap_err();
        assert!(matches!(err, ModelError::BadBudget { m: 2, n: 2 }));
        let mut b = model_e().to_file();
        b.beta = 0.95;
        let err = MultiArmModel::new(vec![a.clone(), b.into_model().unwrap()], 1).unwrap_err();
        assert!(matches!(err, ModelError::MixedDiscount { arm: 2, .. }));
        assert!(MultiArmModel::new(vec![a.clone(), a], 1).is_ok());
    }
}
