//! Transition-matrix generators used by the experiment suite.
//!
//! Four structured banded families with a mixing parameter `p`, a random
//! stochastically-monotone generator driven by a width parameter `d`, and
//! a heavy-tailed random generator based on normalized Levy draws.

use serde::Serialize;
use thiserror::Error;

use crate::rng::SplitMix64;

/// Stream ids separating generator randomness from simulation randomness.
const STREAM_MONOTONE: u64 = 0x6d6f_6e6f;
const STREAM_LEVY: u64 = 0x6c65_7679;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("{kind:?}: parameter {param} outside [{lo}, {hi}]")]
    ParamOutOfRange { kind: GenKind, param: f64, lo: f64, hi: f64 },
    #[error("{kind:?} requires at least {min} states, got {k}")]
    SizeTooSmall { kind: GenKind, k: usize, min: usize },
    #[error("internal fault: empty draw interval at row {row}, column {col} ({lb} > {ub})")]
    IntervalFault { row: usize, col: usize, lb: f64, ub: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenKind {
    P1,
    P2,
    P3,
    P4,
    RandMonotone,
    LevyRandom,
}

impl GenKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "p1" => Some(Self::P1),
            "p2" => Some(Self::P2),
            "p3" => Some(Self::P3),
            "p4" => Some(Self::P4),
            "rand-monotone" => Some(Self::RandMonotone),
            "levy" | "levy-random" => Some(Self::LevyRandom),
            _ => None,
        }
    }
}

/// One generator request. `param` is `p` for the structured families,
/// `d` for the random monotone generator, and the scale `c` for Levy.
#[derive(Debug, Clone, Serialize)]
pub struct GenSpec {
    pub kind: GenKind,
    pub size: usize,
    pub param: f64,
    pub seed: u64,
}

impl GenSpec {
    /// Produce the transition matrix. Structured kinds are held to their
    /// monotone parameter range.
    pub fn matrix(&self) -> Result<Vec<Vec<f64>>, GenError> {
        match self.kind {
            GenKind::P1 | GenKind::P2 | GenKind::P3 | GenKind::P4 => {
                gen_structured(self.kind, self.size, self.param, true)
            }
            GenKind::RandMonotone => gen_rand_monotone(self.size, self.param, self.seed),
            GenKind::LevyRandom => Ok(gen_levy_matrix(self.size, self.seed, self.param)),
        }
    }
}

/// Parameter range within which a structured family is stochastically
/// monotone: `[1/3, 1]`, `[1/4, 1]`, `[1/5, 1]`, and `[1/K, 1]`.
pub fn monotone_p_range(kind: GenKind, k: usize) -> (f64, f64) {
    match kind {
        GenKind::P1 => (1.0 / 3.0, 1.0),
        GenKind::P2 => (0.25, 1.0),
        GenKind::P3 => (0.2, 1.0),
        GenKind::P4 => (1.0 / k as f64, 1.0),
        _ => (0.0, 1.0),
    }
}

/// Structured banded matrix with diagonal weight `p`.
///
/// The band is `[q2, q1, p, q1, q2]` with `(q1, q2)` equal to
/// `((1-p)/2, 0)`, `((1-p)/4, (1-p)/4)`, `((1-p)/3, (1-p)/6)` for the
/// three banded kinds; band mass falling outside the state range is
/// folded onto the nearest in-range column, which makes the first and
/// last rows heavier on the diagonal. The fourth kind spreads `1-p`
/// uniformly over all off-diagonal columns.
///
/// With `require_monotone`, `p` must lie in [`monotone_p_range`].
pub fn gen_structured(
    kind: GenKind,
    k: usize,
    p: f64,
    require_monotone: bool,
) -> Result<Vec<Vec<f64>>, GenError> {
    let (lo, hi) = if require_monotone { monotone_p_range(kind, k) } else { (0.0, 1.0) };
    if !(lo..=hi).contains(&p) {
        return Err(GenError::ParamOutOfRange { kind, param: p, lo, hi });
    }
    match kind {
        GenKind::P1 | GenKind::P2 | GenKind::P3 => {
            if k < 3 {
                return Err(GenError::SizeTooSmall { kind, k, min: 3 });
            }
            let (q1, q2) = match kind {
                GenKind::P1 => ((1.0 - p) / 2.0, 0.0),
                GenKind::P2 => ((1.0 - p) / 4.0, (1.0 - p) / 4.0),
                _ => ((1.0 - p) / 3.0, (1.0 - p) / 6.0),
            };
            let band = [(-2i64, q2), (-1, q1), (0, p), (1, q1), (2, q2)];
            let mut m = vec![vec![0.0; k]; k];
            for (x, row) in m.iter_mut().enumerate() {
                for (offset, w) in band {
                    let j = (x as i64 + offset).clamp(0, k as i64 - 1) as usize;
                    row[j] += w;
                }
            }
            Ok(m)
        }
        GenKind::P4 => {
            if k < 2 {
                return Err(GenError::SizeTooSmall { kind, k, min: 2 });
            }
            let q = (1.0 - p) / (k - 1) as f64;
            Ok((0..k)
                .map(|x| (0..k).map(|y| if y == x { p } else { q }).collect())
                .collect())
        }
        other => panic!("gen_structured called with {other:?}"),
    }
}

/// Random stochastically-monotone matrix.
///
/// Row 1 is drawn left to right with the leading entry in `[1-d, 1]` and
/// the final entry taking the remainder. Each later row is built from its
/// tail sums, right to left: every tail is drawn from the window that
/// keeps it at least the previous row's tail (the monotonicity constraint)
/// and at most `d` above it, and the first column absorbs what is left.
/// Drawing in tail space keeps the constraint satisfied without rounding
/// slack. `d = 0` degenerates every window to a point, so all rows equal
/// row 1.
pub fn gen_rand_monotone(k: usize, d: f64, seed: u64) -> Result<Vec<Vec<f64>>, GenError> {
    if !(0.0..=1.0).contains(&d) {
        return Err(GenError::ParamOutOfRange {
            kind: GenKind::RandMonotone,
            param: d,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let mut rng = SplitMix64::from_stream(seed, &[STREAM_MONOTONE, k as u64]);

    let mut first = vec![0.0; k];
    first[0] = rng.next_range(1.0 - d, 1.0);
    let mut rem = 1.0 - first[0];
    for j in 1..k.saturating_sub(1) {
        first[j] = rng.next_range(0.0, rem);
        rem -= first[j];
    }
    if k > 1 {
        first[k - 1] = rem.max(0.0);
    }

    let mut m = vec![first; k];
    if d == 0.0 {
        return Ok(m);
    }

    // f_prev[j] = tail sum of the previous row from column j; f[k] = 0.
    let mut f_prev = vec![0.0; k + 1];
    for j in (0..k).rev() {
        f_prev[j] = m[0][j] + f_prev[j + 1];
    }
    for i in 1..k {
        let mut f = vec![0.0; k + 1];
        f[k - 1] = rng.next_range(f_prev[k - 1], (f_prev[k - 1] + d).min(1.0));
        for j in (1..k - 1).rev() {
            let lb = f[j + 1].max(f_prev[j]);
            let ub = (f_prev[j] + d).min(1.0);
            if ub < lb - 1e-12 {
                return Err(GenError::IntervalFault { row: i + 1, col: j + 1, lb, ub });
            }
            f[j] = rng.next_range(lb, ub);
        }
        f[0] = 1.0;
        for j in 1..k {
            m[i][j] = f[j] - f[j + 1];
        }
        m[i][0] = 1.0 - f[1];
        f_prev = f;
    }
    Ok(m)
}

/// One Levy(`c`) sample via the inverse-square-normal construction; a zero
/// normal draw is resampled.
fn levy_sample(rng: &mut SplitMix64, c: f64) -> f64 {
    loop {
        let z = rng.next_gaussian();
        if z != 0.0 {
            return c / (z * z);
        }
    }
}

/// Row of `k` Levy draws normalized to sum 1.
pub fn gen_levy_row(k: usize, rng: &mut SplitMix64, c: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| levy_sample(rng, c)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Random stochastic matrix with heavy-tailed rows.
pub fn gen_levy_matrix(k: usize, seed: u64, c: f64) -> Vec<Vec<f64>> {
    let mut rng = SplitMix64::from_stream(seed, &[STREAM_LEVY, k as u64]);
    (0..k).map(|_| gen_levy_row(k, &mut rng, c)).collect()
}

/// Restart active matrix: every row is a unit mass on `target`.
pub fn reset_rows(k: usize, target: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| {
            let mut row = vec![0.0; k];
            row[target] = 1.0;
            row
        })
        .collect()
}

/// The experiment cost family: passive cost grows quadratically with the
/// state, active cost is the flat value `0.5 (K-1)^2`.
pub fn quadratic_costs(k: usize) -> (Vec<f64>, Vec<f64>) {
    let c0 = (0..k).map(|x| (x as f64).powi(2)).collect();
    let c1 = vec![0.5 * ((k - 1) as f64).powi(2); k];
    (c0, c1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BanditModel;
    use approx::assert_abs_diff_eq;

    fn validate_matrix(m: &[Vec<f64>]) {
        let k = m.len();
        let model =
            BanditModel::from_rows(m, &reset_rows(k, 0), &vec![0.0; k], &vec![0.0; k], 0.5)
                .unwrap();
        model.validate().unwrap();
    }

    #[test]
    fn uniform_mix_three_states() {
        let m = gen_structured(GenKind::P4, 3, 0.5, true).unwrap();
        assert_eq!(m[0], vec![0.5, 0.25, 0.25]);
        assert_eq!(m[1], vec![0.25, 0.5, 0.25]);
        assert_eq!(m[2], vec![0.25, 0.25, 0.5]);
    }

    #[test]
    fn degenerate_band_is_identity() {
        let m = gen_structured(GenKind::P1, 5, 1.0, true).unwrap();
        for (x, row) in m.iter().enumerate() {
            for (y, &v) in row.iter().enumerate() {
                assert_eq!(v, if x == y { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn structured_rows_are_stochastic() {
        for kind in [GenKind::P1, GenKind::P2, GenKind::P3, GenKind::P4] {
            let (lo, _) = monotone_p_range(kind, 7);
            for p in [lo, 0.5 * (lo + 1.0), 1.0] {
                validate_matrix(&gen_structured(kind, 7, p, true).unwrap());
            }
        }
    }

    #[test]
    fn out_of_range_parameter_is_rejected() {
        assert!(matches!(
            gen_structured(GenKind::P1, 5, 0.2, true),
            Err(GenError::ParamOutOfRange { .. })
        ));
        assert!(gen_structured(GenKind::P1, 5, 0.2, false).is_ok());
    }

    #[test]
    fn rand_monotone_is_stochastic_and_tail_ordered() {
        for seed in 0..20u64 {
            let m = gen_rand_monotone(5, 1.0, seed).unwrap();
            validate_matrix(&m);
            // Tail sums from every column never decrease down the rows.
            for i in 0..4 {
                for j in 1..5 {
                    let t0: f64 = m[i][j..].iter().sum();
                    let t1: f64 = m[i + 1][j..].iter().sum();
                    assert!(t0 <= t1, "seed {seed}: tails {t0} > {t1} at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn rand_monotone_zero_width_copies_first_row() {
        let m = gen_rand_monotone(6, 0.0, 9).unwrap();
        for i in 1..6 {
            assert_eq!(m[i], m[0]);
        }
        assert_eq!(m[0][0], 1.0);
    }

    #[test]
    fn rand_monotone_is_seed_stable() {
        assert_eq!(gen_rand_monotone(8, 0.4, 77).unwrap(), gen_rand_monotone(8, 0.4, 77).unwrap());
        assert_ne!(gen_rand_monotone(8, 0.4, 77).unwrap(), gen_rand_monotone(8, 0.4, 78).unwrap());
    }

    #[test]
    fn levy_rows_normalize_and_reproduce() {
        let m = gen_levy_matrix(6, 5, 1.0);
        for row in &m {
            let sum: f64 = row.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
        assert_eq!(m, gen_levy_matrix(6, 5, 1.0));
    }

    #[test]
    fn levy_rows_are_heavier_tailed_than_uniform() {
        let trials = 10_000;
        let k = 25;
        let mut rng = SplitMix64::new(123);
        let mut levy_hits = 0;
        let mut uniform_hits = 0;
        for t in 0..trials {
            let row = gen_levy_row(k, &mut SplitMix64::from_stream(9, &[t]), 1.0);
            if row.iter().any(|&v| v > 0.5) {
                levy_hits += 1;
            }
            let raw: Vec<f64> = (0..k).map(|_| rng.next_f64()).collect();
            let sum: f64 = raw.iter().sum();
            if raw.iter().any(|&v| v / sum > 0.5) {
                uniform_hits += 1;
            }
        }
        assert!(levy_hits > trials / 20, "levy max>0.5 in {levy_hits}/{trials}");
        assert_eq!(uniform_hits, 0);
    }

    #[test]
    fn quadratic_cost_values() {
        let (c0, c1) = quadratic_costs(5);
        assert_eq!(c0, vec![0.0, 1.0, 4.0, 9.0, 16.0]);
        assert_eq!(c1, vec![8.0; 5]);
    }
}
