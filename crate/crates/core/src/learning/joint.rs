use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::TrainSchedule;
use crate::error::{Error, Result};
use crate::mdp::{policy_evaluation, JointPolicy, SolverSettings, TabularMMDP};

/// Greedy policy captured during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub step: u64,
    pub policy: JointPolicy,
}

fn sample_start<R: Rng>(rho: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (s, &p) in rho.iter().enumerate() {
        acc += p;
        if u < acc {
            return s;
        }
    }
    rho.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn greedy(q: &[f64], joint: usize) -> JointPolicy {
    JointPolicy::new(
        q.chunks_exact(joint)
            .map(|row| {
                let mut best = 0;
                for u in 1..joint {
                    if row[u] > row[best] {
                        best = u;
                    }
                }
                best
            })
            .collect(),
    )
}

/// Centralized tabular Q-learning over joint actions of an exact MMDP.
/// Episodes restart from ρ every `horizon` steps and bootstrap at the cut.
/// The schedule's γ is ignored in favour of the MMDP's own.
pub fn joint_q_learning(
    mmdp: &TabularMMDP,
    schedule: &TrainSchedule,
    horizon: u64,
    seed: u64,
) -> Result<Vec<PolicySnapshot>> {
    schedule.validate()?;
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let joint = mmdp.num_joint_actions();
    let gamma = mmdp.gamma();
    let table = mmdp.transitions();
    let rewards = mmdp.rewards();
    let mut q = vec![0.0; mmdp.num_states() * joint];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut snapshots = vec![PolicySnapshot {
        step: 0,
        policy: greedy(&q, joint),
    }];
    let mut s = sample_start(mmdp.rho(), &mut rng);
    for step in 1..=schedule.total_steps {
        let u = if rng.gen::<f64>() < schedule.epsilon(step - 1) {
            rng.gen_range(0..joint)
        } else {
            let row = &q[s * joint..(s + 1) * joint];
            (1..joint).fold(0, |b, u| if row[u] > row[b] { u } else { b })
        };
        let row = table.row(s, u);
        let x: f64 = rng.gen();
        let mut acc = 0.0;
        let mut next = *row.next.last().expect("nonempty row");
        for (n, p) in row.iter() {
            acc += p;
            if x < acc {
                next = n;
                break;
            }
        }
        let best_next = q[next * joint..(next + 1) * joint]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let cell = &mut q[s * joint + u];
        *cell += schedule.learning_rate * (rewards[s] + gamma * best_next - *cell);
        s = if step % horizon == 0 {
            sample_start(mmdp.rho(), &mut rng)
        } else {
            next
        };
        if schedule.eval_interval > 0 && step % schedule.eval_interval == 0 {
            snapshots.push(PolicySnapshot {
                step,
                policy: greedy(&q, joint),
            });
        }
    }
    Ok(snapshots)
}

/// Exact ρ-expected value of each snapshot on `mmdp`.
pub fn evaluate_snapshots(
    mmdp: &TabularMMDP,
    snapshots: &[PolicySnapshot],
    solver: &SolverSettings,
) -> Result<Vec<(u64, f64)>> {
    snapshots
        .iter()
        .map(|s| Ok((s.step, policy_evaluation(mmdp, &s.policy, solver)?.scalar)))
        .collect()
}
