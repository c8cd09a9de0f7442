use serde::{Deserialize, Serialize};

use super::{JointPolicy, TabularMMDP};
use crate::error::{Error, Result};

/// Convergence settings shared by all iterative solvers.
///
/// Iteration stops once the sup-norm change between sweeps, scaled by
/// `γ/(1−γ)`, drops to `tol`. That guarantees the returned values are within
/// `tol` of the exact fixed point and that the Bellman residual is at most `tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 1_000_000,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "solver tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be positive".into()));
        }
        Ok(())
    }

    fn converged(&self, delta: f64, gamma: f64) -> bool {
        // error to the fixed point is at most γ·delta/(1−γ)
        delta * gamma <= self.tol * (1.0 - gamma)
    }
}

/// Per-state values, optionally with action values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub v: Vec<f64>,
    /// Row-major `q[s * joint_actions + u]`.
    pub q: Option<Vec<f64>>,
    /// `Σ_s ρ(s) v(s)`.
    pub scalar: f64,
    pub iterations: usize,
    /// Sup-norm change of the final sweep.
    pub last_delta: f64,
}

impl ValueTable {
    pub fn max_value(&self) -> f64 {
        self.v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn q_row(&self, state: usize, joint_actions: usize) -> Option<&[f64]> {
        self.q
            .as_ref()
            .map(|q| &q[state * joint_actions..(state + 1) * joint_actions])
    }
}

/// Discounted feature occupancy of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessorFeatures {
    /// Row-major `|S| × k`.
    pub mu_per_state: Vec<f64>,
    pub dim: usize,
    /// `Σ_s ρ(s) μ(s)`.
    pub mu_scalar: Vec<f64>,
}

impl SuccessorFeatures {
    pub fn state(&self, s: usize) -> &[f64] {
        &self.mu_per_state[s * self.dim..(s + 1) * self.dim]
    }
}

/// One synchronous Bellman optimality sweep. Returns the new values and the
/// action values used to produce them.
pub fn bellman_backup(mmdp: &TabularMMDP, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let s_count = mmdp.num_states();
    let joint = mmdp.num_joint_actions();
    let gamma = mmdp.gamma();
    let table = mmdp.transitions();
    let rewards = mmdp.rewards();
    let mut q = vec![0.0; s_count * joint];
    let mut out = vec![0.0; s_count];
    for s in 0..s_count {
        let mut best = f64::NEG_INFINITY;
        for u in 0..joint {
            let val = rewards[s] + gamma * table.row(s, u).expectation(v);
            q[s * joint + u] = val;
            if val > best {
                best = val;
            }
        }
        out[s] = best;
    }
    (out, q)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Greedy policy with respect to action values, lowest joint index on ties.
fn greedy_from_q(q: &[f64], joint: usize) -> JointPolicy {
    JointPolicy::new(
        q.chunks_exact(joint)
            .map(|row| {
                let mut best = 0;
                for (u, &x) in row.iter().enumerate().skip(1) {
                    if x > row[best] {
                        best = u;
                    }
                }
                best
            })
            .collect(),
    )
}

/// Greedy policy with respect to a value vector.
pub fn greedy_policy(mmdp: &TabularMMDP, v: &[f64]) -> JointPolicy {
    let (_, q) = bellman_backup(mmdp, v);
    greedy_from_q(&q, mmdp.num_joint_actions())
}

/// Optimal values by synchronous value iteration from zero.
pub fn value_iteration(
    mmdp: &TabularMMDP,
    settings: &SolverSettings,
) -> Result<(ValueTable, JointPolicy)> {
    settings.validate()?;
    let mut v = vec![0.0; mmdp.num_states()];
    let mut delta = f64::INFINITY;
    for it in 1..=settings.max_iters {
        let (next, _) = bellman_backup(mmdp, &v);
        delta = sup_diff(&next, &v);
        v = next;
        if settings.converged(delta, mmdp.gamma()) {
            // recompute q on the returned v so that v(s) = max_u q(s,u) up to one sweep
            let (_, q_final) = bellman_backup(mmdp, &v);
            let policy = greedy_from_q(&q_final, mmdp.num_joint_actions());
            let scalar = mmdp.expected(&v);
            return Ok((
                ValueTable {
                    v,
                    q: Some(q_final),
                    scalar,
                    iterations: it,
                    last_delta: delta,
                },
                policy,
            ));
        }
    }
    Err(Error::NonConvergence {
        iterations: settings.max_iters,
        residual: delta,
    })
}

/// Values of a fixed deterministic policy by iterating the expectation backup.
pub fn policy_evaluation(
    mmdp: &TabularMMDP,
    pi: &JointPolicy,
    settings: &SolverSettings,
) -> Result<ValueTable> {
    settings.validate()?;
    pi.validate(mmdp)?;
    let gamma = mmdp.gamma();
    let table = mmdp.transitions();
    let rewards = mmdp.rewards();
    let mut v = vec![0.0; mmdp.num_states()];
    let mut next = v.clone();
    let mut delta = f64::INFINITY;
    for it in 1..=settings.max_iters {
        for (s, slot) in next.iter_mut().enumerate() {
            *slot = rewards[s] + gamma * table.row(s, pi.action[s]).expectation(&v);
        }
        delta = sup_diff(&next, &v);
        std::mem::swap(&mut v, &mut next);
        if settings.converged(delta, gamma) {
            let scalar = mmdp.expected(&v);
            return Ok(ValueTable {
                v,
                q: None,
                scalar,
                iterations: it,
                last_delta: delta,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: settings.max_iters,
        residual: delta,
    })
}

/// Successor features `μ(s) = φ(s) + γ Σ_{s'} P_π(s'|s) μ(s')`.
pub fn successor_features(
    mmdp: &TabularMMDP,
    pi: &JointPolicy,
    settings: &SolverSettings,
) -> Result<SuccessorFeatures> {
    settings.validate()?;
    pi.validate(mmdp)?;
    let gamma = mmdp.gamma();
    let table = mmdp.transitions();
    let states = mmdp.states();
    let k = states.dim();
    let n = mmdp.num_states();
    let mut mu = vec![0.0; n * k];
    let mut next = mu.clone();
    let mut delta = f64::INFINITY;
    for _ in 0..settings.max_iters {
        for s in 0..n {
            let out = &mut next[s * k..(s + 1) * k];
            out.copy_from_slice(states.feature(s));
            for (sp, p) in table.row(s, pi.action[s]).iter() {
                let src = &mu[sp * k..(sp + 1) * k];
                for (o, x) in out.iter_mut().zip(src) {
                    *o += gamma * p * x;
                }
            }
        }
        delta = sup_diff(&next, &mu);
        std::mem::swap(&mut mu, &mut next);
        if settings.converged(delta, gamma) {
            let mut mu_scalar = vec![0.0; k];
            for (s, &p) in mmdp.rho().iter().enumerate() {
                for (acc, x) in mu_scalar.iter_mut().zip(&mu[s * k..(s + 1) * k]) {
                    *acc += p * x;
                }
            }
            return Ok(SuccessorFeatures {
                mu_per_state: mu,
                dim: k,
                mu_scalar,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: settings.max_iters,
        residual: delta,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::mdp::{StateSpace, TransitionTable};

    fn random_mmdp(rng: &mut ChaCha8Rng, states: usize, joint: usize, gamma: f64) -> TabularMMDP {
        let features: Vec<Vec<f64>> = (0..states)
            .map(|_| (0..3).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let rows = (0..states * joint)
            .map(|_| {
                let w: Vec<f64> = (0..states).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let total: f64 = w.iter().sum();
                w.into_iter().map(|x| x / total).enumerate().collect()
            })
            .collect();
        let t = TransitionTable::from_sparse_rows(states, joint, rows).unwrap();
        let rewards = (0..states).map(|_| rng.gen::<f64>()).collect();
        let mut rho = vec![0.0; states];
        rho[0] = 1.0;
        TabularMMDP::new(
            StateSpace::new(features).unwrap(),
            1,
            joint,
            rewards,
            Arc::new(t),
            gamma,
            rho,
        )
        .unwrap()
    }

    fn single_state(reward: f64, gamma: f64) -> TabularMMDP {
        let t = TransitionTable::from_dense(&[vec![vec![1.0]]]).unwrap();
        TabularMMDP::new(
            StateSpace::new(vec![vec![1.0, 0.0]]).unwrap(),
            1,
            1,
            vec![reward],
            Arc::new(t),
            gamma,
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn single_state_geometric_series() {
        let m = single_state(1.0, 0.9);
        let (vt, pi) = value_iteration(&m, &SolverSettings::default()).unwrap();
        assert!((vt.v[0] - 10.0).abs() < 1e-9);
        assert!((vt.scalar - 10.0).abs() < 1e-9);
        assert_eq!(pi.action, vec![0]);
    }

    #[test]
    fn zero_reward_gives_zero_and_lowest_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_mmdp(&mut rng, 6, 4, 0.9);
        let m = m.with_rewards(vec![0.0; 6]).unwrap();
        let (vt, pi) = value_iteration(&m, &SolverSettings::default()).unwrap();
        assert!(vt.v.iter().all(|&x| x == 0.0));
        assert!(pi.action.iter().all(|&u| u == 0));
    }

    #[test]
    fn matches_long_plain_backup() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_mmdp(&mut rng, 10, 4, 0.9);
        let (vt, _) = value_iteration(&m, &SolverSettings::default()).unwrap();
        // oracle: fixed 10,000 plain backups written out independently
        let mut v = vec![0.0; 10];
        for _ in 0..10_000 {
            let mut nv = vec![0.0; 10];
            for s in 0..10 {
                let mut best = f64::NEG_INFINITY;
                for u in 0..4 {
                    let dense = m.transitions().row(s, u).to_dense(10);
                    let ev: f64 = dense.iter().zip(&v).map(|(p, x)| p * x).sum();
                    best = best.max(m.rewards()[s] + 0.9 * ev);
                }
                nv[s] = best;
            }
            v = nv;
        }
        for s in 0..10 {
            assert!((vt.v[s] - v[s]).abs() < 1e-6);
        }
    }

    #[test]
    fn bellman_residual_within_tol() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let settings = SolverSettings::default();
        for _ in 0..20 {
            let m = random_mmdp(&mut rng, 8, 3, 0.9);
            let (vt, _) = value_iteration(&m, &settings).unwrap();
            let (next, _) = bellman_backup(&m, &vt.v);
            assert!(sup_diff(&next, &vt.v) <= settings.tol);
            let q = vt.q.as_ref().unwrap();
            for s in 0..8 {
                let mx = q[s * 3..s * 3 + 3].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert!((mx - vt.v[s]).abs() <= settings.tol);
            }
        }
    }

    #[test]
    fn non_convergence_reports_residual() {
        let m = single_state(1.0, 0.99);
        let err = value_iteration(
            &m,
            &SolverSettings {
                tol: 1e-12,
                max_iters: 5,
            },
        )
        .unwrap_err();
        match err {
            Error::NonConvergence {
                iterations,
                residual,
            } => {
                assert_eq!(iterations, 5);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn policy_evaluation_gamma_zero_is_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_mmdp(&mut rng, 5, 2, 0.0);
        let pi = JointPolicy::constant(5, 1);
        let vt = policy_evaluation(&m, &pi, &SolverSettings::default()).unwrap();
        assert_eq!(vt.v, m.rewards());
    }

    #[test]
    fn greedy_policy_evaluation_matches_value_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let settings = SolverSettings::default();
        for _ in 0..20 {
            let m = random_mmdp(&mut rng, 9, 4, 0.9);
            let (vt, pi) = value_iteration(&m, &settings).unwrap();
            let pe = policy_evaluation(&m, &pi, &settings).unwrap();
            for s in 0..9 {
                assert!((vt.v[s] - pe.v[s]).abs() <= 2.0 * settings.tol);
            }
        }
    }

    /// Solves `(I − γP)v = r` by Gaussian elimination with partial pivoting.
    fn linear_solve_oracle(p: &[Vec<f64>], r: &[f64], gamma: f64) -> Vec<f64> {
        let n = r.len();
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n)
                    .map(|j| if i == j { 1.0 } else { 0.0 } - gamma * p[i][j])
                    .collect();
                row.push(r[i]);
                row
            })
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .unwrap();
            a.swap(col, piv);
            for row in 0..n {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for c in col..=n {
                        a[row][c] -= f * a[col][c];
                    }
                }
            }
        }
        (0..n).map(|i| a[i][n] / a[i][i]).collect()
    }

    #[test]
    fn chain_matches_linear_solve() {
        // 5-state chain: action 0 moves right with prob 0.8, stays otherwise; last state absorbs
        let n = 5;
        let mut dense = vec![vec![vec![0.0; n]; 2]; n];
        for s in 0..n {
            let right = (s + 1).min(n - 1);
            dense[s][0][right] += 0.8;
            dense[s][0][s] += 0.2;
            let left = s.saturating_sub(1);
            dense[s][1][left] += 1.0;
        }
        let t = TransitionTable::from_dense(&dense).unwrap();
        let features = (0..n).map(|s| vec![s as f64 / 4.0]).collect();
        let rewards = vec![0.0, 0.1, 0.0, 0.3, 1.0];
        let m = TabularMMDP::new(
            StateSpace::new(features).unwrap(),
            1,
            2,
            rewards.clone(),
            Arc::new(t),
            0.95,
            vec![0.2; 5],
        )
        .unwrap();
        for pi in [JointPolicy::constant(n, 0), JointPolicy::new(vec![0, 1, 0, 1, 0])] {
            let vt = policy_evaluation(&m, &pi, &SolverSettings::default()).unwrap();
            let p_pi: Vec<Vec<f64>> = (0..n).map(|s| dense[s][pi.action[s]].clone()).collect();
            let oracle = linear_solve_oracle(&p_pi, &rewards, 0.95);
            for s in 0..n {
                assert!((vt.v[s] - oracle[s]).abs() < 1e-8, "{} vs {}", vt.v[s], oracle[s]);
            }
        }
    }

    #[test]
    fn successor_features_single_state() {
        let m = single_state(0.0, 0.9);
        let sf = successor_features(&m, &JointPolicy::constant(1, 0), &SolverSettings::default())
            .unwrap();
        assert!((sf.mu_scalar[0] - 10.0).abs() < 1e-9);
        assert_eq!(sf.mu_scalar[1], 0.0);
    }

    #[test]
    fn successor_features_gamma_zero_is_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_mmdp(&mut rng, 4, 2, 0.0);
        let sf = successor_features(&m, &JointPolicy::constant(4, 0), &SolverSettings::default())
            .unwrap();
        for s in 0..4 {
            assert_eq!(sf.state(s), m.states().feature(s));
        }
    }

    #[test]
    fn successor_features_satisfy_feature_bellman() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_mmdp(&mut rng, 7, 3, 0.8);
        let pi = JointPolicy::new((0..7).map(|s| s % 3).collect());
        let settings = SolverSettings::default();
        let sf = successor_features(&m, &pi, &settings).unwrap();
        for s in 0..7 {
            for j in 0..3 {
                let mut rhs = m.states().feature(s)[j];
                for (sp, p) in m.transitions().row(s, pi.action[s]).iter() {
                    rhs += 0.8 * p * sf.state(sp)[j];
                }
                assert!((rhs - sf.state(s)[j]).abs() <= settings.tol);
            }
        }
        let scalar: f64 = (0..7).map(|s| m.rho()[s] * sf.state(s)[1]).sum();
        assert!((scalar - sf.mu_scalar[1]).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sweeps_contract_by_gamma(seed in any::<u64>(), gamma in 0.1f64..0.95) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_mmdp(&mut rng, 6, 3, gamma);
            let mut v = vec![0.0; 6];
            let (mut prev, _) = bellman_backup(&m, &v);
            let mut prev_delta = sup_diff(&prev, &v);
            for _ in 0..30 {
                v = prev;
                let (next, _) = bellman_backup(&m, &v);
                let delta = sup_diff(&next, &v);
                prop_assert!(delta <= gamma * prev_delta + 1e-12);
                prev_delta = delta;
                prev = next;
            }
        }
    }
}
