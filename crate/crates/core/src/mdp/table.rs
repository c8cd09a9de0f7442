use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a row is a probability distribution.
pub const DISTRIBUTION_TOL: f64 = 1e-9;

/// Next-state distributions for every `(state, joint action)` pair.
///
/// Rows are stored sparsely (sorted by next state, zeros dropped). On the wire
/// the table is the dense `[state][action][next_state]` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Vec<f64>>>", into = "Vec<Vec<Vec<f64>>>")]
pub struct TransitionTable {
    num_states: usize,
    num_actions: usize,
    offsets: Vec<usize>,
    next: Vec<usize>,
    prob: Vec<f64>,
}

/// Borrowed view of one sparse row.
#[derive(Debug, Clone, Copy)]
pub struct Row<'a> {
    pub next: &'a [usize],
    pub prob: &'a [f64],
}

impl<'a> Row<'a> {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.next.iter().copied().zip(self.prob.iter().copied())
    }

    pub fn expectation(&self, values: &[f64]) -> f64 {
        self.next
            .iter()
            .zip(self.prob)
            .map(|(&n, &p)| p * values[n])
            .sum()
    }

    pub fn mass(&self) -> f64 {
        self.prob.iter().sum()
    }

    /// Dense copy of the row.
    pub fn to_dense(&self, num_states: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_states];
        for (n, p) in self.iter() {
            out[n] = p;
        }
        out
    }
}

impl TransitionTable {
    /// Builds a table from sparse rows indexed by `state * num_actions + action`.
    /// Duplicate next states are summed and exact zeros dropped.
    pub fn from_sparse_rows(
        num_states: usize,
        num_actions: usize,
        rows: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMmdp(
                "transition table needs at least one state and one action".into(),
            ));
        }
        if rows.len() != num_states * num_actions {
            return Err(Error::Dimension(format!(
                "expected {} transition rows, got {}",
                num_states * num_actions,
                rows.len()
            )));
        }
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut next = Vec::new();
        let mut prob = Vec::new();
        offsets.push(0);
        for (idx, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(n, _)| n);
            let start = next.len();
            for (n, p) in row {
                if n >= num_states {
                    return Err(Error::Dimension(format!(
                        "row {idx} references next state {n} of {num_states}"
                    )));
                }
                if !p.is_finite() {
                    return Err(Error::InvalidMmdp(format!("row {idx} has non-finite entry")));
                }
                if next.len() > start && *next.last().unwrap() == n {
                    *prob.last_mut().unwrap() += p;
                } else {
                    next.push(n);
                    prob.push(p);
                }
            }
            // drop exact zeros produced by input or by merging
            let mut w = start;
            for r in start..next.len() {
                if prob[r] != 0.0 {
                    next[w] = next[r];
                    prob[w] = prob[r];
                    w += 1;
                }
            }
            next.truncate(w);
            prob.truncate(w);
            offsets.push(next.len());
        }
        Ok(Self {
            num_states,
            num_actions,
            offsets,
            next,
            prob,
        })
    }

    /// Table where `(s, u)` moves to `next[s * num_actions + u]` with certainty.
    pub fn deterministic(num_states: usize, num_actions: usize, next: Vec<usize>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || next.len() != num_states * num_actions {
            return Err(Error::Dimension(format!(
                "{} successors for {num_states} states x {num_actions} actions",
                next.len()
            )));
        }
        if let Some(bad) = next.iter().position(|&n| n >= num_states) {
            return Err(Error::Dimension(format!(
                "row {bad} references next state {} of {num_states}",
                next[bad]
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            offsets: (0..=next.len()).collect(),
            prob: vec![1.0; next.len()],
            next,
        })
    }

    pub fn from_dense(dense: &[Vec<Vec<f64>>]) -> Result<Self> {
        let num_states = dense.len();
        let num_actions = dense.first().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(num_states * num_actions);
        for (s, per_action) in dense.iter().enumerate() {
            if per_action.len() != num_actions {
                return Err(Error::Dimension(format!(
                    "state {s} has {} action rows, expected {num_actions}",
                    per_action.len()
                )));
            }
            for (u, row) in per_action.iter().enumerate() {
                if row.len() != num_states {
                    return Err(Error::Dimension(format!(
                        "row ({s},{u}) has length {}, expected {num_states}",
                        row.len()
                    )));
                }
                rows.push(row.iter().copied().enumerate().collect());
            }
        }
        Self::from_sparse_rows(num_states, num_actions, rows)
    }

    pub fn to_dense(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.num_states)
            .map(|s| {
                (0..self.num_actions)
                    .map(|u| self.row(s, u).to_dense(self.num_states))
                    .collect()
            })
            .collect()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Total number of stored (nonzero) entries.
    pub fn nnz(&self) -> usize {
        self.next.len()
    }

    #[inline]
    pub fn row(&self, state: usize, action: usize) -> Row<'_> {
        let idx = state * self.num_actions + action;
        let (a, b) = (self.offsets[idx], self.offsets[idx + 1]);
        Row {
            next: &self.next[a..b],
            prob: &self.prob[a..b],
        }
    }

    /// Checks every row is componentwise nonnegative and sums to one.
    pub fn validate_distributions(&self) -> Result<()> {
        for s in 0..self.num_states {
            for u in 0..self.num_actions {
                let row = self.row(s, u);
                let sum = row.mass();
                if row.prob.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > DISTRIBUTION_TOL {
                    return Err(Error::InvalidTransitionRow {
                        state: s,
                        action: u,
                        sum,
                    });
                }
            }
        }
        Ok(())
    }

    /// Sum over next states of `|self(s'|s,u) - other(s'|s,u)|` for one pair.
    pub fn row_l1_distance(&self, other: &Self, state: usize, action: usize) -> f64 {
        merge_rows(self.row(state, action), other.row(state, action))
            .map(|(_, a, b)| (a - b).abs())
            .sum()
    }

    /// Largest entrywise difference for one pair.
    pub fn row_max_entry_distance(&self, other: &Self, state: usize, action: usize) -> f64 {
        merge_rows(self.row(state, action), other.row(state, action))
            .map(|(_, a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.num_states == other.num_states && self.num_actions == other.num_actions
    }
}

/// Walks the union support of two sorted rows, yielding `(next, p_a, p_b)`.
fn merge_rows<'a>(a: Row<'a>, b: Row<'a>) -> impl Iterator<Item = (usize, f64, f64)> + 'a {
    let (mut i, mut j) = (0, 0);
    std::iter::from_fn(move || {
        let ai = a.next.get(i).copied();
        let bj = b.next.get(j).copied();
        match (ai, bj) {
            (None, None) => None,
            (Some(x), None) => {
                i += 1;
                Some((x, a.prob[i - 1], 0.0))
            }
            (None, Some(y)) => {
                j += 1;
                Some((y, 0.0, b.prob[j - 1]))
            }
            (Some(x), Some(y)) if x == y => {
                i += 1;
                j += 1;
                Some((x, a.prob[i - 1], b.prob[j - 1]))
            }
            (Some(x), Some(y)) if x < y => {
                i += 1;
                Some((x, a.prob[i - 1], 0.0))
            }
            (Some(_), Some(y)) => {
                j += 1;
                Some((y, 0.0, b.prob[j - 1]))
            }
        }
    })
}

impl TryFrom<Vec<Vec<Vec<f64>>>> for TransitionTable {
    type Error = Error;

    fn try_from(dense: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        Self::from_dense(&dense)
    }
}

impl From<TransitionTable> for Vec<Vec<Vec<f64>>> {
    fn from(table: TransitionTable) -> Self {
        table.to_dense()
    }
}
