//! Rendering of tables and reports.
//!
//! CSV files carry `#`-prefixed metadata lines (tool version, seed,
//! generator parameters, tolerances) so a run can be replayed
//! byte-identically; nothing time- or host-dependent is written. All
//! state labels in rendered output are 1-based.

use serde_json::{json, Value};
use std::fmt::Write as _;

use crate::indexability::{CheckMode, CheckOutcome, ConditionReport, NestingVerdict, Thm1Check};
use crate::model::BanditModel;
use crate::monotone::{MonotoneCheck, MonotoneReport, MonotoneWitness, ThresholdReport};
use crate::sim::SimReport;
use crate::whittle::{PclReport, PclScope, WhittleTable};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Render `#`-prefixed metadata lines in the order given.
pub fn meta_block(meta: &[(String, String)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# tool: whittle-lab {TOOL_VERSION}");
    for (k, v) in meta {
        let _ = writeln!(out, "# {k}: {v}");
    }
    out
}

pub fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

/// Index table as CSV with columns `state,index,group` (all 1-based).
pub fn table_csv(table: &WhittleTable, meta: &[(String, String)]) -> String {
    let mut out = meta_block(meta);
    out.push_str("state,index,group\n");
    for x in 0..table.num_states() {
        let _ = writeln!(out, "{},{},{}", x + 1, table.index[x], table.group_of(x));
    }
    out
}

/// Index table as JSON: per-state values, sorted distinct values, and the
/// nested sets (1-based states).
pub fn table_json(table: &WhittleTable) -> Value {
    json!({
        "index": table.index,
        "distinct": table.distinct,
        "sets": table.sets.iter()
            .map(|s| s.iter().map(|x| x + 1).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    })
}

/// Simulation comparison as CSV with one row per policy.
pub fn sim_csv(report: &SimReport, meta: &[(String, String)]) -> String {
    let mut out = meta_block(meta);
    let _ = writeln!(out, "# rng: {}", report.rng);
    out.push_str("policy,mean_cost,stderr,S,T,seed\n");
    for (kind, est) in &report.cost {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            kind.name(),
            est.mean,
            est.stderr,
            report.trajectories,
            report.horizon,
            report.seed
        );
    }
    out
}

pub fn sim_json(report: &SimReport) -> Value {
    serde_json::to_value(report).expect("sim report serializes")
}

fn outcome_str(o: CheckOutcome) -> &'static str {
    match o {
        CheckOutcome::Holds => "holds",
        CheckOutcome::Fails => "fails",
        CheckOutcome::Skipped => "skipped",
    }
}

fn thm1_json(check: &Thm1Check) -> Value {
    json!({
        "outcome": outcome_str(check.outcome),
        "mode": check.mode.map(|m| match m {
            CheckMode::Exact => "exact",
            CheckMode::Conservative => "conservative",
        }),
        "lhs_max": check.lhs_max,
        "bound": check.bound,
        "witness": check.witness.as_ref().map(|w| json!({
            "g": w.g.bits(),
            "h": w.h.bits(),
            "x": w.x + 1,
            "z": w.z.map(|z| z + 1),
            "lhs": w.lhs,
        })),
    })
}

pub fn conditions_json(report: &ConditionReport) -> Value {
    let prop = |p: &crate::indexability::PropCheck| {
        json!({"holds": p.holds, "lhs": p.lhs, "bound": p.bound})
    };
    json!({
        "thm1a": thm1_json(&report.thm1a),
        "thm1b": thm1_json(&report.thm1b),
        "prop_a": prop(&report.prop_a),
        "prop_b": prop(&report.prop_b),
        "prop_c": prop(&report.prop_c),
        "prop_d": prop(&report.prop_d),
    })
}

fn monotone_witness_json(w: &MonotoneWitness) -> Value {
    match *w {
        MonotoneWitness::TailSum { action, z, x } => {
            json!({"kind": "tail_sum", "action": action, "z": z + 1, "x": x + 1})
        }
        MonotoneWitness::TailGap { z, x } => json!({"kind": "tail_gap", "z": z + 1, "x": x + 1}),
        MonotoneWitness::Cost { action, x } => json!({"kind": "cost", "action": action, "x": x + 1}),
        MonotoneWitness::CostGap { x } => json!({"kind": "cost_gap", "x": x + 1}),
    }
}

pub fn monotone_json(report: &MonotoneReport) -> Value {
    let check = |c: &MonotoneCheck| {
        json!({
            "holds": c.holds,
            "witness": c.witness.as_ref().map(monotone_witness_json),
        })
    };
    json!({
        "d1": check(&report.d1),
        "d2": check(&report.d2),
        "d3": check(&report.d3),
        "d4": check(&report.d4),
    })
}

pub fn nesting_json(verdict: &NestingVerdict, grid_points: usize, window: (f64, f64)) -> Value {
    match verdict {
        NestingVerdict::Nested => json!({
            "ok": true,
            "grid_points": grid_points,
            "lambda_lo": window.0,
            "lambda_hi": window.1,
        }),
        NestingVerdict::Violated { lambda_lo, lambda_hi, state } => json!({
            "ok": false,
            "grid_points": grid_points,
            "lambda_lo": window.0,
            "lambda_hi": window.1,
            "violation": {"between": [lambda_lo, lambda_hi], "state": state + 1},
        }),
    }
}

pub fn pcl_json(report: &PclReport) -> Value {
    json!({
        "pcl_indexable": report.pcl_indexable,
        "scope": match report.scope {
            PclScope::Exact => "exact",
            PclScope::Partial => "partial",
        },
        "condition1_holds": report.condition1_holds,
        "violations": report.violations.iter().take(32).map(|v| json!({
            "subset": v.subset.iter().map(|s| s + 1).collect::<Vec<_>>(),
            "y": v.y + 1,
            "g": v.g.bits(),
            "h": v.h.bits(),
            "n_g": v.n_g,
            "n_h": v.n_h,
        })).collect::<Vec<_>>(),
        "condition2": report.condition2,
        "sequence": report.sequence,
    })
}

pub fn threshold_json(report: &ThresholdReport) -> Value {
    json!({
        "certified": report.certified,
        "n_monotone": report.n_monotone,
        "n_witness": report.n_witness.map(|(ell, x)| json!({"ell": ell, "state": x + 1})),
        "index_monotone": report.index_monotone,
        "index_witness": report.index_witness.map(|x| x + 1),
        "threshold_structure": report.threshold_structure,
        "structure_witness": report.structure_witness,
        "spread_ok": report.spread_ok,
        "worst_spread": report.worst_spread,
        "basis": report.basis,
    })
}

pub fn validation_json(model: &BanditModel) -> Value {
    let violations = model.violations();
    json!({
        "ok": violations.is_empty(),
        "violations": violations.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_csv_shape() {
        let t = WhittleTable::from_indices(vec![0.5, 0.25]);
        let csv = table_csv(&t, &[kv("seed", 7)]);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("# tool: whittle-lab"));
        assert_eq!(lines.next().unwrap(), "# seed: 7");
        assert_eq!(lines.next().unwrap(), "state,index,group");
        assert_eq!(lines.next().unwrap(), "1,0.5,2");
        assert_eq!(lines.next().unwrap(), "2,0.25,1");
    }

    #[test]
    fn table_json_is_one_based() {
        let t = WhittleTable::from_indices(vec![0.5, 0.25]);
        let v = table_json(&t);
        assert_eq!(v["sets"][0], json!([2]));
        assert_eq!(v["sets"][1], json!([1, 2]));
    }
}
