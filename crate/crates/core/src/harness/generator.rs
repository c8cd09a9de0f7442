use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    CapabilityVector, InfluenceWeights, LinearMMDPSpec, RewardKernel, SharedDynamics,
    TeamComposition, TransitionKernel,
};
use crate::error::{Error, Result};
use crate::mdp::{StateSpace, TransitionTable};

/// Inclusive integer range written as `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct IntRange {
    pub lo: usize,
    pub hi: usize,
}

impl IntRange {
    pub const fn new(lo: usize, hi: usize) -> Self {
        Self { lo, hi }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        rng.gen_range(self.lo..=self.hi)
    }

    fn check(&self, name: &str, min: usize) -> Result<()> {
        if self.lo > self.hi || self.lo < min {
            return Err(Error::Config(format!(
                "{name}: range [{}, {}] must be nonempty with lower end >= {min}",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

impl From<[usize; 2]> for IntRange {
    fn from([lo, hi]: [usize; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<IntRange> for [usize; 2] {
    fn from(r: IntRange) -> Self {
        [r.lo, r.hi]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    pub states: IntRange,
    pub agents: IntRange,
    pub capability_dim: IntRange,
    pub feature_dim: IntRange,
    pub actions_per_agent: IntRange,
    pub max_joint_actions: usize,
    pub gamma: f64,
    pub count: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            states: IntRange::new(1, 20),
            agents: IntRange::new(1, 4),
            capability_dim: IntRange::new(1, 4),
            feature_dim: IntRange::new(1, 4),
            actions_per_agent: IntRange::new(1, 3),
            max_joint_actions: 9,
            gamma: 0.9,
            count: 200,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        self.states.check("generator.states", 1)?;
        self.agents.check("generator.agents", 1)?;
        self.capability_dim.check("generator.capability_dim", 1)?;
        self.feature_dim.check("generator.feature_dim", 1)?;
        self.actions_per_agent.check("generator.actions_per_agent", 1)?;
        if self.count == 0 {
            return Err(Error::Config("generator.count must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "generator.gamma must lie in (0,1), got {}",
                self.gamma
            )));
        }
        let worst = (self.actions_per_agent.lo as u128).checked_pow(self.agents.hi as u32);
        if worst.map_or(true, |w| w > self.max_joint_actions as u128) {
            return Err(Error::Config(format!(
                "generator.max_joint_actions {} is below {}^{}",
                self.max_joint_actions, self.actions_per_agent.lo, self.agents.hi
            )));
        }
        Ok(())
    }
}

/// Seeded source of random linear tasks.
#[derive(Debug, Clone)]
pub struct InstanceGenerator {
    pub params: GeneratorParams,
    rng: ChaCha8Rng,
}

impl InstanceGenerator {
    pub fn new(params: GeneratorParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Flat Dirichlet(1) draw.
    pub fn simplex(&mut self, dim: usize) -> Vec<f64> {
        let mut x: Vec<f64> = (0..dim)
            .map(|_| -(1.0 - self.rng.gen::<f64>()).ln() + 1e-12)
            .collect();
        let s: f64 = x.iter().sum();
        x.iter_mut().for_each(|v| *v /= s);
        x
    }

    pub fn team(&mut self, n: usize, d: usize) -> TeamComposition {
        let rows = (0..n).map(|_| self.simplex(d)).collect();
        TeamComposition::from_rows(rows).expect("simplex rows are valid capabilities")
    }

    pub fn capability(&mut self, d: usize) -> CapabilityVector {
        CapabilityVector::new(self.simplex(d)).expect("simplex row is a valid capability")
    }

    pub fn weights(&mut self, n: usize) -> InfluenceWeights {
        InfluenceWeights::new(self.simplex(n)).expect("simplex weights")
    }

    fn actions_for(&mut self, n: usize) -> usize {
        let r = self.params.actions_per_agent;
        let cap = self.params.max_joint_actions as u128;
        let hi = (r.lo..=r.hi)
            .rev()
            .find(|&u| (u as u128).checked_pow(n as u32).is_some_and(|j| j <= cap))
            .unwrap_or(r.lo);
        self.rng.gen_range(r.lo..=hi)
    }

    fn transition_component(&mut self, s: usize, u: usize) -> TransitionTable {
        let rows = (0..s * u)
            .map(|_| self.simplex(s).into_iter().enumerate().collect())
            .collect();
        TransitionTable::from_sparse_rows(s, u, rows).expect("generated rows are in range")
    }

    /// Environment with `d` capability-specific transition components.
    pub fn environment(&mut self) -> Arc<SharedDynamics> {
        let p = self.params.clone();
        let s = p.states.sample(&mut self.rng);
        let n = p.agents.sample(&mut self.rng);
        let d = p.capability_dim.sample(&mut self.rng);
        let k = p.feature_dim.sample(&mut self.rng);
        let per = self.actions_for(n);
        let joint = per.pow(n as u32);
        let features: Vec<f64> = (0..s * k).map(|_| self.rng.gen()).collect();
        let kernel: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..k).map(|_| self.rng.gen()).collect())
            .collect();
        let components = (0..d)
            .map(|_| Arc::new(self.transition_component(s, joint)))
            .collect();
        let rho = self.simplex(s);
        Arc::new(SharedDynamics {
            states: StateSpace::from_flat(k, features).expect("features in [0,1)"),
            reward_kernel: RewardKernel::new(kernel).expect("kernel rows share a length"),
            transition_kernel: TransitionKernel::PerCapability { components },
            num_agents: n,
            actions_per_agent: per,
            gamma: p.gamma,
            rho,
        })
    }

    /// Same states, rewards and actions with one capability-independent transition table.
    pub fn shared_environment(&mut self) -> Arc<SharedDynamics> {
        let env = self.environment();
        let table = Arc::new(
            self.transition_component(env.states.size(), env.actions_per_agent.pow(env.num_agents as u32)),
        );
        Arc::new(SharedDynamics {
            transition_kernel: TransitionKernel::Shared { table },
            ..(*env).clone()
        })
    }

    /// Team size drawn from the agent range.
    pub fn team_size(&mut self) -> usize {
        self.params.agents.sample(&mut self.rng)
    }
}

/// One random linear task on a fresh environment.
pub fn generate_linear_instance(gen: &mut InstanceGenerator) -> Result<LinearMMDPSpec> {
    let env = gen.environment();
    let n = gen.team_size();
    let team = gen.team(n, env.capability_dim());
    let weights = gen.weights(n);
    LinearMMDPSpec::new(team, weights, env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::assemble_linear_mmdp;

    #[test]
    fn same_seed_same_bytes() {
        let p = GeneratorParams::default();
        let a = generate_linear_instance(&mut InstanceGenerator::new(p.clone(), 5).unwrap()).unwrap();
        let b = generate_linear_instance(&mut InstanceGenerator::new(p, 5).unwrap()).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn thousand_specs_assemble() {
        let mut g = InstanceGenerator::new(GeneratorParams::default(), 1).unwrap();
        for _ in 0..1000 {
            let spec = generate_linear_instance(&mut g).unwrap();
            let m = assemble_linear_mmdp(&spec).unwrap();
            assert!(m.num_joint_actions() <= 9);
            assert!(m.num_states() <= 20);
        }
    }

    #[test]
    fn single_state_range() {
        let p = GeneratorParams {
            states: IntRange::new(1, 1),
            ..GeneratorParams::default()
        };
        let spec = generate_linear_instance(&mut InstanceGenerator::new(p, 0).unwrap()).unwrap();
        assert_eq!(assemble_linear_mmdp(&spec).unwrap().num_states(), 1);
    }

    #[test]
    fn bad_ranges_rejected() {
        let p = GeneratorParams {
            states: IntRange::new(5, 2),
            ..GeneratorParams::default()
        };
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        let p = GeneratorParams {
            actions_per_agent: IntRange::new(2, 3),
            ..GeneratorParams::default()
        };
        assert!(p.validate().is_err());
        let p = GeneratorParams {
            gamma: 1.0,
            ..GeneratorParams::default()
        };
        assert!(p.validate().is_err());
    }
}
