use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::generator::{GeneratorParams, InstanceGenerator};
use crate::bounds::{
    bound_approx_dynamics, bound_capability_estimation, bound_lipschitz,
    bound_out_of_distribution, bound_polynomial_deviation, bound_population_change,
    bound_policy_transfer, bound_team_generalization, reward_chain_report, s_max,
    transition_chain_report, BoundOptions, BoundReport, PopulationChange, TaskDistribution,
};
use crate::dynamics::{
    assemble_linear_mmdp, perturb_dynamics, polynomial_rewards, CapabilityVector,
    InfluenceWeights, LinearMMDPSpec, LipschitzRewardSpec, PolynomialRewardSpec, SharedDynamics,
    TeamComposition,
};
use crate::error::Result;
use crate::seeding::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    TeamGeneralization,
    PolicyTransfer,
    PopulationRemove,
    PopulationAdd,
    ApproxDynamics,
    CapabilityEstimation,
    OutOfDistribution,
    Lipschitz,
    PolynomialDeviation,
    RewardChain,
    TransitionChain,
}

impl BoundKind {
    pub const ALL: [BoundKind; 11] = [
        BoundKind::TeamGeneralization,
        BoundKind::PolicyTransfer,
        BoundKind::PopulationRemove,
        BoundKind::PopulationAdd,
        BoundKind::ApproxDynamics,
        BoundKind::CapabilityEstimation,
        BoundKind::OutOfDistribution,
        BoundKind::Lipschitz,
        BoundKind::PolynomialDeviation,
        BoundKind::RewardChain,
        BoundKind::TransitionChain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundKind::TeamGeneralization => "team_generalization",
            BoundKind::PolicyTransfer => "policy_transfer",
            BoundKind::PopulationRemove => "population_remove",
            BoundKind::PopulationAdd => "population_add",
            BoundKind::ApproxDynamics => "approx_dynamics",
            BoundKind::CapabilityEstimation => "capability_estimation",
            BoundKind::OutOfDistribution => "out_of_distribution",
            BoundKind::Lipschitz => "lipschitz",
            BoundKind::PolynomialDeviation => "polynomial_deviation",
            BoundKind::RewardChain => "reward_chain",
            BoundKind::TransitionChain => "transition_chain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationDraw {
    pub eps_r: f64,
    pub eps_p: f64,
    pub seed_x: u64,
    pub seed_y: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodDraw {
    pub support: Vec<TeamComposition>,
    pub query: TeamComposition,
    pub weights: InfluenceWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzDraw {
    pub environment: Arc<SharedDynamics>,
    /// Per-member coefficients of the clipped quadratic map.
    pub coefficients: Vec<f64>,
    pub team_x: TeamComposition,
    pub team_y: TeamComposition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialDraw {
    pub spec: PolynomialRewardSpec,
    pub team: TeamComposition,
    pub member: usize,
    pub replacement: CapabilityVector,
    pub delta: f64,
}

/// Everything needed to recompute every bound kind for one random instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInstance {
    pub index: usize,
    pub seed: u64,
    pub x: LinearMMDPSpec,
    pub y: LinearMMDPSpec,
    pub population: LinearMMDPSpec,
    pub added_capability: CapabilityVector,
    pub added_weight: f64,
    pub perturbation: PerturbationDraw,
    pub inferred: LinearMMDPSpec,
    pub ood: OodDraw,
    pub lipschitz: LipschitzDraw,
    pub polynomial: PolynomialDraw,
}

fn nudge(gen: &mut InstanceGenerator, c: &CapabilityVector, t: f64) -> CapabilityVector {
    let mut v: Vec<f64> = c
        .as_slice()
        .iter()
        .map(|x| (x + gen.rng().gen_range(-t..=t)).max(0.0))
        .collect();
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        v = c.as_slice().to_vec();
    }
    CapabilityVector::new(v).expect("nonnegative")
}

impl BoundInstance {
    pub fn generate(params: &GeneratorParams, master_seed: u64, index: usize) -> Result<Self> {
        let seed = derive_seed(master_seed, index as u64);
        let mut g = InstanceGenerator::new(params.clone(), seed)?;
        let env = g.environment();
        let d = env.capability_dim();

        let n = g.team_size();
        let tx = g.team(n, d);
        let ax = g.weights(n);
        let ty = g.team(n, d);
        let ay = if g.rng().gen_bool(0.5) { ax.clone() } else { g.weights(n) };
        let x = LinearMMDPSpec::new(tx, ax.clone(), env.clone())?;
        let y = LinearMMDPSpec::new(ty, ay, env.clone())?;

        let np = g.rng().gen_range(2..=params.agents.hi.max(2));
        let population =
            LinearMMDPSpec::new(g.team(np, d), g.weights(np), env.clone())?;
        let added_capability = g.capability(d);
        let added_weight = g.rng().gen_range(0.0..0.9);

        let perturbation = PerturbationDraw {
            eps_r: g.rng().gen_range(0.0..=0.02),
            eps_p: g.rng().gen_range(0.0..=0.005),
            seed_x: g.rng().gen(),
            seed_y: g.rng().gen(),
        };

        let t = g.rng().gen_range(0.0..=0.1);
        let members = x
            .team
            .members()
            .to_vec()
            .iter()
            .map(|c| nudge(&mut g, c, t))
            .collect();
        let inferred = x.with_team(TeamComposition::new(members)?, ax.clone())?;

        let support_size = g.rng().gen_range(1..=5);
        let support = (0..support_size).map(|_| g.team(n, d)).collect();
        let ood = OodDraw {
            support,
            query: g.team(n, d),
            weights: ax,
        };

        let lenv = g.shared_environment();
        let ln = g.team_size();
        let ld = lenv.capability_dim();
        let coefficients = (0..ln).map(|_| g.rng().gen_range(0.0..=1.0)).collect();
        let lipschitz = LipschitzDraw {
            team_x: g.team(ln, ld),
            team_y: g.team(ln, ld),
            environment: lenv,
            coefficients,
        };

        let pn = g.rng().gen_range(1..=params.agents.hi.min(3));
        let degree = g.rng().gen_range(1..=3u32);
        let mut terms = BTreeMap::new();
        for idx in multi_indices(pn, degree) {
            terms.insert(idx, g.rng().gen_range(-1.0..=1.0));
        }
        let spec = PolynomialRewardSpec::new(terms, 1.0, degree)?;
        let team = g.team(pn, d);
        let member = g.rng().gen_range(0..pn);
        let delta = if g.rng().gen_bool(0.5) { 0.01 } else { 0.1 };
        let replacement = CapabilityVector::new(
            team.member(member)
                .as_slice()
                .iter()
                .map(|c| (c + g.rng().gen_range(-delta..=delta)).clamp(0.0, 1.0))
                .collect(),
        )?;
        let polynomial = PolynomialDraw {
            spec,
            team,
            member,
            replacement,
            delta,
        };

        Ok(Self {
            index,
            seed,
            x,
            y,
            population,
            added_capability,
            added_weight,
            perturbation,
            inferred,
            ood,
            lipschitz,
            polynomial,
        })
    }

    pub fn evaluate(&self, kind: BoundKind, opts: &BoundOptions) -> Result<BoundReport> {
        match kind {
            BoundKind::TeamGeneralization => bound_team_generalization(&self.x, &self.y, opts),
            BoundKind::PolicyTransfer => bound_policy_transfer(&self.x, &self.y, opts),
            BoundKind::PopulationRemove => {
                bound_population_change(&self.population, &PopulationChange::RemoveLast, opts)
            }
            BoundKind::PopulationAdd => bound_population_change(
                &self.population,
                &PopulationChange::AddMember {
                    capability: self.added_capability.clone(),
                    weight: self.added_weight,
                },
                opts,
            ),
            BoundKind::ApproxDynamics => {
                let p = &self.perturbation;
                let ax = perturb_dynamics(&assemble_linear_mmdp(&self.x)?, p.eps_r, p.eps_p, p.seed_x)?;
                let ay = perturb_dynamics(&assemble_linear_mmdp(&self.y)?, p.eps_r, p.eps_p, p.seed_y)?;
                bound_approx_dynamics(&self.x, &self.y, &ax, &ay, opts)
            }
            BoundKind::CapabilityEstimation => {
                bound_capability_estimation(&self.x, &self.inferred, opts)
            }
            BoundKind::OutOfDistribution => {
                let dist = TaskDistribution::uniform(
                    self.ood
                        .support
                        .iter()
                        .map(|t| (t.clone(), self.ood.weights.clone()))
                        .collect(),
                )?;
                bound_out_of_distribution(
                    &dist,
                    &self.ood.query,
                    &self.ood.weights,
                    &self.x.environment,
                    false,
                    opts,
                )
            }
            BoundKind::Lipschitz => {
                let l = &self.lipschitz;
                let spec = LipschitzRewardSpec::clipped_quadratic(l.coefficients.clone())?;
                bound_lipschitz(&spec, &l.team_x, &l.team_y, &l.environment, &l.environment, opts)
            }
            BoundKind::PolynomialDeviation => self.polynomial_report(),
            BoundKind::RewardChain => reward_chain_report(&self.x, &self.y),
            BoundKind::TransitionChain => transition_chain_report(&self.x, &self.y),
        }
    }

    fn polynomial_report(&self) -> Result<BoundReport> {
        let p = &self.polynomial;
        let env = &self.x.environment;
        let moved = p.team.with_member(p.member, p.replacement.clone())?;
        let r0 = polynomial_rewards(&p.spec, &p.team, env)?;
        let r1 = polynomial_rewards(&p.spec, &moved, env)?;
        let eps_r = r0
            .iter()
            .zip(&r1)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let sm = s_max(&env.reward_kernel, &env.states)?;
        let bound = bound_polynomial_deviation(&p.spec, sm, p.delta)?;
        let mut c = BTreeMap::new();
        c.insert("alpha".into(), p.spec.alpha());
        c.insert("degree".into(), f64::from(p.spec.degree()));
        c.insert("delta".into(), p.delta);
        c.insert(
            "member_shift".into(),
            p.team.member(p.member).sup_distance(&p.replacement),
        );
        c.insert("s_max".into(), sm);
        Ok(BoundReport::new("polynomial_deviation", c, bound, eps_r))
    }
}

/// All exponent vectors of length `n` with total degree at most `k`.
pub fn multi_indices(n: usize, k: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; n];
    fn rec(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if pos == cur.len() {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur[pos] = e;
            rec(pos + 1, left - e, cur, out);
        }
        cur[pos] = 0;
    }
    rec(0, k, &mut cur, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(1, 3).len(), 4);
        assert_eq!(multi_indices(3, 2).len(), 10);
        assert!(multi_indices(2, 3).iter().all(|m| m.iter().sum::<u32>() <= 3));
    }

    #[test]
    fn instance_json_round_trip_and_replay() {
        let inst = BoundInstance::generate(&GeneratorParams::default(), 3, 4).unwrap();
        let back: BoundInstance =
            serde_json::from_str(&serde_json::to_string(&inst).unwrap()).unwrap();
        assert_eq!(back, inst);
        let opts = BoundOptions::default();
        for kind in BoundKind::ALL {
            let a = inst.evaluate(kind, &opts).unwrap();
            let b = back.evaluate(kind, &opts).unwrap();
            assert_eq!(a, b, "{}", kind.as_str());
            assert_eq!(a.bound_name, kind.as_str());
        }
    }
}
