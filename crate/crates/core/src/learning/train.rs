use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::qtable::{random_legal, QTable};
use crate::envs::{MultiAgentEnv, PPTask, PredatorPrey, PredatorPreyConfig};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub total_steps: u64,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_steps: u64,
    pub gamma: f64,
    /// Steps between evaluations; 0 disables the curve.
    pub eval_interval: u64,
    pub eval_episodes: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total_steps: 200_000,
            learning_rate: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_steps: 50_000,
            gamma: 0.99,
            eval_interval: 20_000,
            eval_episodes: 16,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning rate {} outside (0,1]", self.learning_rate));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.epsilon_start) || !unit.contains(&self.epsilon_end) {
            return bad("epsilon values must lie in [0,1]".into());
        }
        if self.epsilon_end > self.epsilon_start {
            return bad(format!(
                "epsilon end {} exceeds start {}",
                self.epsilon_end, self.epsilon_start
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0,1)", self.gamma));
        }
        if self.eval_interval > 0 && self.eval_episodes == 0 {
            return bad("evaluation needs at least one episode".into());
        }
        Ok(())
    }

    /// Linearly annealed exploration rate.
    pub fn epsilon(&self, step: u64) -> f64 {
        if self.epsilon_anneal_steps == 0 || step >= self.epsilon_anneal_steps {
            return self.epsilon_end;
        }
        let frac = step as f64 / self.epsilon_anneal_steps as f64;
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationMode {
    CapabilityAware,
    CapabilityBlind,
}

impl ObservationMode {
    pub fn label(self) -> &'static str {
        match self {
            ObservationMode::CapabilityAware => "capability-aware",
            ObservationMode::CapabilityBlind => "capability-blind",
        }
    }
}

/// Builds one environment per task.
pub trait EnvBuilder {
    type Env: MultiAgentEnv;

    fn num_tasks(&self) -> usize;
    fn build(&self, task: usize, mode: ObservationMode, seed: u64) -> Result<Self::Env>;
}

/// Predator Prey tasks over a shared base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PPBuilder {
    pub base: PredatorPreyConfig,
    pub tasks: Vec<PPTask>,
}

impl EnvBuilder for PPBuilder {
    type Env = PredatorPrey;

    fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    fn build(&self, task: usize, mode: ObservationMode, seed: u64) -> Result<PredatorPrey> {
        let t = self
            .tasks
            .get(task)
            .ok_or_else(|| Error::InvalidArgument(format!("no task {task}")))?;
        let config = PredatorPreyConfig {
            predator_capabilities: t.predators.clone(),
            penalty: t.penalty,
            capability_observable: mode == ObservationMode::CapabilityAware,
            ..self.base.clone()
        };
        PredatorPrey::new(config, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub mean_return: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub qtable: QTable,
    pub curve: Vec<CurvePoint>,
    pub episodes: u64,
}

/// Independent learners sharing one table (agent id is part of every key).
/// One task is drawn uniformly per episode; episode ends are time limits and bootstrap.
pub fn q_learning_train<B: EnvBuilder>(
    builder: &B,
    schedule: &TrainSchedule,
    mode: ObservationMode,
    seed: u64,
) -> Result<TrainOutput> {
    schedule.validate()?;
    if builder.num_tasks() == 0 {
        return Err(Error::InvalidArgument("training needs at least one task".into()));
    }
    let mut envs = (0..builder.num_tasks())
        .map(|t| builder.build(t, mode, derive_seed(seed, t as u64)))
        .collect::<Result<Vec<_>>>()?;
    let num_actions = envs[0].num_actions();
    let mut q = QTable::new(num_actions);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let mut curve = Vec::new();
    let mut step = 0u64;
    let mut episodes = 0u64;
    let alpha = schedule.learning_rate;
    let gamma = schedule.gamma;

    let checkpoint = |q: &QTable, step: u64, curve: &mut Vec<CurvePoint>| -> Result<()> {
        if schedule.eval_interval > 0 && step % schedule.eval_interval == 0 {
            let eval = evaluate_policy_empirical(
                q,
                builder,
                mode,
                schedule.eval_episodes,
                derive_seed(seed ^ 0xE7A1, step),
            )?;
            curve.push(CurvePoint {
                step,
                mean_return: eval.pooled_mean,
            });
        }
        Ok(())
    };
    checkpoint(&q, 0, &mut curve)?;

    while step < schedule.total_steps {
        let task = rng.gen_range(0..envs.len());
        let env = &mut envs[task];
        let mut obs = env.reset();
        let n = env.num_agents();
        episodes += 1;
        loop {
            let eps = schedule.epsilon(step);
            let masks: Vec<Vec<bool>> = (0..n).map(|i| env.available(i)).collect();
            let actions: Vec<usize> = (0..n)
                .map(|i| {
                    if rng.gen::<f64>() < eps {
                        random_legal(&masks[i], &mut rng)
                    } else {
                        q.act(obs[i], &masks[i], &mut rng)
                    }
                })
                .collect();
            let out = env.step(&actions)?;
            for i in 0..n {
                let next_mask = env.available(i);
                let target = out.reward + gamma * q.max_legal(out.observations[i], &next_mask);
                q.update(obs[i], actions[i], target, alpha);
            }
            obs = out.observations;
            step += 1;
            checkpoint(&q, step, &mut curve)?;
            if out.done || step >= schedule.total_steps {
                break;
            }
        }
    }
    Ok(TrainOutput {
        qtable: q,
        curve,
        episodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub task: usize,
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_task: Vec<TaskStats>,
    pub pooled_mean: f64,
}

fn stats(task: usize, returns: &[f64]) -> TaskStats {
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = if returns.len() > 1 {
        returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    TaskStats {
        task,
        mean,
        std: var.sqrt(),
        episodes: returns.len(),
    }
}

fn run_episodes<B: EnvBuilder>(
    builder: &B,
    mode: ObservationMode,
    episodes: usize,
    seed: u64,
    mut policy: impl FnMut(u128, &[bool], &mut ChaCha8Rng) -> usize,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let mut per_task = Vec::with_capacity(builder.num_tasks());
    for task in 0..builder.num_tasks() {
        // every task replays the same seed stream so identical tasks give identical stats
        let mut env = builder.build(task, mode, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
        let mut returns = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let mut obs = env.reset();
            let mut total = 0.0;
            loop {
                let actions: Vec<usize> = (0..env.num_agents())
                    .map(|i| policy(obs[i], &env.available(i), &mut rng))
                    .collect();
                let out = env.step(&actions)?;
                total += out.reward;
                obs = out.observations;
                if out.done {
                    break;
                }
            }
            returns.push(total);
        }
        per_task.push(stats(task, &returns));
    }
    let pooled_mean = per_task.iter().map(|t| t.mean).sum::<f64>() / per_task.len() as f64;
    Ok(EvalReport {
        per_task,
        pooled_mean,
    })
}

/// Greedy decentralized execution (lowest legal index on ties).
pub fn evaluate_policy_empirical<B: EnvBuilder>(
    qtable: &QTable,
    builder: &B,
    mode: ObservationMode,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    run_episodes(builder, mode, episodes, seed, |key, mask, rng| {
        qtable.act(key, mask, rng)
    })
}

/// Uniform legal actions; consumes the same random stream as an empty table.
pub fn evaluate_random_policy<B: EnvBuilder>(
    builder: &B,
    mode: ObservationMode,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    run_episodes(builder, mode, episodes, seed, |_, mask, rng| {
        random_legal(mask, rng)
    })
}

/// Mean return on `train_task` minus mean return on `test_task`.
pub fn generalization_gap(
    qtable: &QTable,
    base: &PredatorPreyConfig,
    train_task: &PPTask,
    test_task: &PPTask,
    mode: ObservationMode,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let builder = PPBuilder {
        base: base.clone(),
        tasks: vec![train_task.clone(), test_task.clone()],
    };
    let eval = evaluate_policy_empirical(qtable, &builder, mode, episodes, seed)?;
    Ok(eval.per_task[0].mean - eval.per_task[1].mean)
}
