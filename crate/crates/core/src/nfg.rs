//! Normal-form zero-sum games: the cost matrix, the reduction to online
//! linear minimization, and a certified min-max solver.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::olm::{dot, CostVector, SimplexStrategy};

/// Alice's raw cost matrix `U` (entries in `[-1, 1]`) and its `[0, 1]` rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct GameMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    rescaled: Vec<f64>,
}

impl GameMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let rows = entries.len();
        if rows == 0 {
            return Err(Error::InvalidGame("matrix has no rows".into()));
        }
        let cols = entries[0].len();
        if cols == 0 {
            return Err(Error::InvalidGame("matrix has no columns".into()));
        }
        let mut flat = Vec::with_capacity(rows * cols);
        for (i, row) in entries.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::InvalidGame(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            for &u in row {
                if !u.is_finite() || !(-1.0..=1.0).contains(&u) {
                    return Err(Error::InvalidGame(format!("entry {u} outside [-1, 1]")));
                }
                flat.push(u);
            }
        }
        let rescaled = flat.iter().map(|u| (1.0 + u) / 2.0).collect();
        Ok(Self {
            rows,
            cols,
            entries: flat,
            rescaled,
        })
    }

    /// Number of Alice actions.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of Bob actions.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn raw(&self, a: usize, b: usize) -> f64 {
        self.entries[a * self.cols + b]
    }

    pub fn rescaled(&self, a: usize, b: usize) -> f64 {
        self.rescaled[a * self.cols + b]
    }

    /// The game seen from Bob's side: `-Uᵀ`.
    pub fn transpose_negated(&self) -> GameMatrix {
        let rows = (0..self.cols)
            .map(|b| (0..self.rows).map(|a| -self.raw(a, b)).collect())
            .collect();
        GameMatrix::new(rows).expect("negated transpose of a valid matrix")
    }

    /// `U ν` on the raw matrix.
    pub fn raw_column_mix(&self, nu: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|a| dot(&self.entries[a * self.cols..(a + 1) * self.cols], nu))
            .collect()
    }

    /// `μᵀ U` on the raw matrix.
    pub fn raw_row_mix(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (a, &p) in mu.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (b, o) in out.iter_mut().enumerate() {
                *o += p * self.raw(a, b);
            }
        }
        out
    }

    /// Alice's rescaled expected cost vector against a mixed Bob strategy.
    pub fn cost_against(&self, nu: &SimplexStrategy) -> CostVector {
        let c = self
            .raw_column_mix(nu.probs())
            .into_iter()
            .map(|v| ((1.0 + v) / 2.0).clamp(0.0, 1.0))
            .collect();
        CostVector::from_raw(c)
    }
}

impl FromStr for GameMatrix {
    type Err = Error;

    /// Parses `"A B"` followed by `A` rows of `B` whitespace-separated raw entries.
    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: hline,
                msg: e.to_string(),
            })?;
        let [a, b] = dims[..] else {
            return Err(Error::Parse {
                line: hline,
                msg: "header must be `A B`".into(),
            });
        };
        let mut rows = Vec::with_capacity(a);
        for (line, text) in lines.by_ref().take(a) {
            let row: Vec<f64> = text
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line,
                    msg: e.to_string(),
                })?;
            if row.len() != b {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {b} entries, found {}", row.len()),
                });
            }
            rows.push(row);
        }
        if rows.len() != a {
            return Err(Error::Parse {
                line: hline,
                msg: format!("expected {a} rows, found {}", rows.len()),
            });
        }
        if let Some((line, _)) = lines.next() {
            return Err(Error::Parse {
                line,
                msg: "trailing data".into(),
            });
        }
        GameMatrix::new(rows)
    }
}

impl fmt::Display for GameMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {}", self.rows, self.cols)?;
        for a in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|b| format!("{}", self.raw(a, b))).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Alice's rescaled cost vector when Bob plays `bob_action`.
pub fn nfg_round(game: &GameMatrix, bob_action: usize) -> Result<CostVector> {
    if bob_action >= game.cols {
        return Err(Error::ActionOutOfRange {
            action: bob_action,
            count: game.cols,
        });
    }
    Ok(CostVector::from_raw(
        (0..game.rows).map(|a| game.rescaled(a, bob_action)).collect(),
    ))
}

/// `μᵀ U ν` in raw units.
pub fn expected_value_nfg(game: &GameMatrix, mu: &SimplexStrategy, nu: &SimplexStrategy) -> Result<f64> {
    if mu.len() != game.rows {
        return Err(Error::Dimension {
            expected: game.rows,
            got: mu.len(),
        });
    }
    if nu.len() != game.cols {
        return Err(Error::Dimension {
            expected: game.cols,
            got: nu.len(),
        });
    }
    Ok(dot(mu.probs(), &game.raw_column_mix(nu.probs())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NfgEquilibrium {
    pub alice: SimplexStrategy,
    pub bob: SimplexStrategy,
    pub value: f64,
    pub exploitability: f64,
}

/// Exploitability of a profile, computed by exact best-response scans.
pub fn nfg_exploitability(game: &GameMatrix, mu: &SimplexStrategy, nu: &SimplexStrategy) -> Result<(f64, f64)> {
    let value = expected_value_nfg(game, mu, nu)?;
    let bob_best = game
        .raw_row_mix(mu.probs())
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let alice_best = game
        .raw_column_mix(nu.probs())
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok((value, (bob_best - value).max(value - alice_best).max(0.0)))
}

const CERTIFY_EVERY: usize = 1000;
const ITERATION_BUDGET: usize = 1_000_000;
const SELF_PLAY_RATE: f64 = 0.1;

/// Min-max equilibrium by optimistic multiplicative-weights self-play.
///
/// Both the running average and the last iterate are certified every
/// thousand iterations; whichever certifies first is returned.
pub fn solve_minmax_nfg(game: &GameMatrix, epsilon: f64) -> Result<NfgEquilibrium> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {epsilon}")));
    }
    let (n, m) = (game.rows, game.cols);
    let mut x = vec![1.0 / n as f64; n];
    let mut y = vec![1.0 / m as f64; m];
    let mut gx_prev = game.raw_column_mix(&y);
    let mut gy_prev = game.raw_row_mix(&x);
    let mut logx = vec![0.0; n];
    let mut logy = vec![0.0; m];
    let mut sum_x = vec![0.0; n];
    let mut sum_y = vec![0.0; m];
    let mut best_gap = f64::INFINITY;

    for it in 1..=ITERATION_BUDGET {
        let gx = game.raw_column_mix(&y);
        let gy = game.raw_row_mix(&x);
        // Optimistic step: last gradient counted twice, previous once subtracted.
        for a in 0..n {
            logx[a] -= SELF_PLAY_RATE * (2.0 * gx[a] - gx_prev[a]);
        }
        for b in 0..m {
            logy[b] += SELF_PLAY_RATE * (2.0 * gy[b] - gy_prev[b]);
        }
        gx_prev = gx;
        gy_prev = gy;
        softmax_into(&logx, &mut x);
        softmax_into(&logy, &mut y);
        for (s, v) in sum_x.iter_mut().zip(&x) {
            *s += v;
        }
        for (s, v) in sum_y.iter_mut().zip(&y) {
            *s += v;
        }

        if it % CERTIFY_EVERY == 0 || n * m == 1 {
            let avg_x = normalized(&sum_x);
            let avg_y = normalized(&sum_y);
            for (cx, cy) in [(avg_x, avg_y), (x.clone(), y.clone())] {
                let mu = SimplexStrategy::new(cx)?;
                let nu = SimplexStrategy::new(cy)?;
                let (value, gap) = nfg_exploitability(game, &mu, &nu)?;
                best_gap = best_gap.min(gap);
                if gap <= epsilon {
                    return Ok(NfgEquilibrium {
                        alice: mu,
                        bob: nu,
                        value,
                        exploitability: gap,
                    });
                }
            }
        }
    }
    Err(Error::NoConvergence {
        gap: best_gap,
        iterations: ITERATION_BUDGET,
    })
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub(crate) fn normalized(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    let mut out: Vec<f64> = v.iter().map(|x| x / s).collect();
    fix_sum(&mut out);
    out
}

/// Pushes the rounding residual of a probability vector onto its largest entry.
pub(crate) fn fix_sum(p: &mut [f64]) {
    let s: f64 = p.iter().sum();
    if let Some(i) = (0..p.len()).max_by(|&i, &j| p[i].total_cmp(&p[j])) {
        p[i] = (p[i] + 1.0 - s).max(0.0);
    }
}
