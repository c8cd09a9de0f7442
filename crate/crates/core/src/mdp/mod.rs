//! Finite multi-agent MDPs and their exact solvers.

mod solve;
mod table;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use solve::{
    bellman_backup, greedy_policy, policy_evaluation, successor_features, value_iteration,
    SolverSettings, SuccessorFeatures, ValueTable,
};
pub use table::{Row, TransitionTable, DISTRIBUTION_TOL};

/// Feature vectors for every state, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct StateSpace {
    dim: usize,
    features: Vec<f64>,
}

impl StateSpace {
    pub fn new(features: Vec<Vec<f64>>) -> Result<Self> {
        let dim = features.first().map_or(0, Vec::len);
        if features.is_empty() || dim == 0 {
            return Err(Error::InvalidMmdp(
                "state space needs at least one state with a nonempty feature vector".into(),
            ));
        }
        let mut flat = Vec::with_capacity(features.len() * dim);
        for (s, f) in features.iter().enumerate() {
            if f.len() != dim {
                return Err(Error::Dimension(format!(
                    "state {s} has feature dimension {}, expected {dim}",
                    f.len()
                )));
            }
            flat.extend_from_slice(f);
        }
        Self::from_flat(dim, flat)
    }

    /// Builds from a flat row-major buffer of `size * dim` features.
    pub fn from_flat(dim: usize, features: Vec<f64>) -> Result<Self> {
        if dim == 0 || features.is_empty() || features.len() % dim != 0 {
            return Err(Error::Dimension(format!(
                "flat feature buffer of length {} does not split into rows of {dim}",
                features.len()
            )));
        }
        if let Some(pos) = features
            .iter()
            .position(|x| !(0.0..=1.0).contains(x) || x.is_nan())
        {
            return Err(Error::InvalidMmdp(format!(
                "feature {} of state {} is {}, outside [0,1]",
                pos % dim,
                pos / dim,
                features[pos]
            )));
        }
        Ok(Self { dim, features })
    }

    pub fn size(&self) -> usize {
        self.features.len() / self.dim
    }

    /// Feature dimension k.
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn feature(&self, state: usize) -> &[f64] {
        &self.features[state * self.dim..(state + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }
}

impl TryFrom<Vec<Vec<f64>>> for StateSpace {
    type Error = Error;

    fn try_from(value: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<StateSpace> for Vec<Vec<f64>> {
    fn from(space: StateSpace) -> Self {
        space.iter().map(<[f64]>::to_vec).collect()
    }
}

/// Number of joint actions for `num_agents` agents with `per_agent` actions each.
pub fn joint_action_count(num_agents: usize, per_agent: usize) -> Option<usize> {
    per_agent.checked_pow(u32::try_from(num_agents).ok()?)
}

/// Row-major joint-action index, agent 0 varying slowest.
pub fn joint_action_index(actions: &[usize], per_agent: usize) -> usize {
    actions.iter().fold(0, |acc, &a| acc * per_agent + a)
}

/// Inverse of [`joint_action_index`].
pub fn decode_joint_action(mut index: usize, num_agents: usize, per_agent: usize) -> Vec<usize> {
    let mut out = vec![0; num_agents];
    for slot in out.iter_mut().rev() {
        *slot = index % per_agent;
        index /= per_agent;
    }
    out
}

/// Deterministic joint policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointPolicy {
    pub action: Vec<usize>,
}

impl JointPolicy {
    pub fn new(action: Vec<usize>) -> Self {
        Self { action }
    }

    pub fn constant(num_states: usize, action: usize) -> Self {
        Self {
            action: vec![action; num_states],
        }
    }

    pub fn validate(&self, mmdp: &TabularMMDP) -> Result<()> {
        if self.action.len() != mmdp.num_states() {
            return Err(Error::Dimension(format!(
                "policy covers {} states, MMDP has {}",
                self.action.len(),
                mmdp.num_states()
            )));
        }
        let joint = mmdp.num_joint_actions();
        if let Some(s) = self.action.iter().position(|&u| u >= joint) {
            return Err(Error::InvalidArgument(format!(
                "policy action {} at state {s} exceeds {joint} joint actions",
                self.action[s]
            )));
        }
        Ok(())
    }
}

/// A validated finite MMDP with state-based rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MmdpDocument", into = "MmdpDocument")]
pub struct TabularMMDP {
    states: StateSpace,
    num_agents: usize,
    actions_per_agent: usize,
    rewards: Vec<f64>,
    transitions: Arc<TransitionTable>,
    gamma: f64,
    rho: Vec<f64>,
}

/// JSON layout of a [`TabularMMDP`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MmdpDocument {
    features: StateSpace,
    num_agents: usize,
    actions_per_agent: usize,
    rewards: Vec<f64>,
    transitions: TransitionTable,
    gamma: f64,
    rho: Vec<f64>,
}

impl TryFrom<MmdpDocument> for TabularMMDP {
    type Error = Error;

    fn try_from(doc: MmdpDocument) -> Result<Self> {
        TabularMMDP::new(
            doc.features,
            doc.num_agents,
            doc.actions_per_agent,
            doc.rewards,
            Arc::new(doc.transitions),
            doc.gamma,
            doc.rho,
        )
    }
}

impl From<TabularMMDP> for MmdpDocument {
    fn from(m: TabularMMDP) -> Self {
        MmdpDocument {
            features: m.states,
            num_agents: m.num_agents,
            actions_per_agent: m.actions_per_agent,
            rewards: m.rewards,
            transitions: Arc::unwrap_or_clone(m.transitions),
            gamma: m.gamma,
            rho: m.rho,
        }
    }
}

impl TabularMMDP {
    pub fn new(
        states: StateSpace,
        num_agents: usize,
        actions_per_agent: usize,
        rewards: Vec<f64>,
        transitions: Arc<TransitionTable>,
        gamma: f64,
        rho: Vec<f64>,
    ) -> Result<Self> {
        let size = states.size();
        if num_agents == 0 || actions_per_agent == 0 {
            return Err(Error::InvalidMmdp(
                "need at least one agent and one action per agent".into(),
            ));
        }
        let joint = joint_action_count(num_agents, actions_per_agent).ok_or_else(|| {
            Error::InvalidMmdp("joint action count overflows".into())
        })?;
        if transitions.num_states() != size || transitions.num_actions() != joint {
            return Err(Error::Dimension(format!(
                "transition table is {}x{}, expected {size} states x {joint} joint actions",
                transitions.num_states(),
                transitions.num_actions()
            )));
        }
        if rewards.len() != size {
            return Err(Error::Dimension(format!(
                "{} rewards for {size} states",
                rewards.len()
            )));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMmdp("rewards must be finite".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidMmdp(format!("gamma {gamma} outside [0,1)")));
        }
        validate_distribution("rho", &rho, size)?;
        transitions.validate_distributions()?;
        Ok(Self {
            states,
            num_agents,
            actions_per_agent,
            rewards,
            transitions,
            gamma,
            rho,
        })
    }

    /// Same MMDP with a different reward vector.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self> {
        if rewards.len() != self.num_states() {
            return Err(Error::Dimension(format!(
                "{} rewards for {} states",
                rewards.len(),
                self.num_states()
            )));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMmdp("rewards must be finite".into()));
        }
        Ok(Self {
            rewards,
            ..self.clone()
        })
    }

    /// Same MMDP with a different (validated) transition table.
    pub fn with_transitions(&self, transitions: Arc<TransitionTable>) -> Result<Self> {
        if !transitions.same_shape(&self.transitions) {
            return Err(Error::Dimension("transition table shape differs".into()));
        }
        transitions.validate_distributions()?;
        Ok(Self {
            transitions,
            ..self.clone()
        })
    }

    pub fn states(&self) -> &StateSpace {
        &self.states
    }

    pub fn num_states(&self) -> usize {
        self.states.size()
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn actions_per_agent(&self) -> usize {
        self.actions_per_agent
    }

    pub fn num_joint_actions(&self) -> usize {
        self.transitions.num_actions()
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn transitions(&self) -> &TransitionTable {
        &self.transitions
    }

    pub fn transitions_arc(&self) -> &Arc<TransitionTable> {
        &self.transitions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// `Σ_s ρ(s) v(s)`.
    pub fn expected(&self, v: &[f64]) -> f64 {
        self.rho.iter().zip(v).map(|(p, x)| p * x).sum()
    }

    /// True when both MMDPs share state count, feature dimension and joint actions.
    pub fn same_spaces(&self, other: &Self) -> bool {
        self.num_states() == other.num_states()
            && self.states.dim() == other.states.dim()
            && self.num_joint_actions() == other.num_joint_actions()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub(crate) fn validate_distribution(name: &str, p: &[f64], size: usize) -> Result<()> {
    if p.len() != size {
        return Err(Error::Dimension(format!(
            "{name} has length {}, expected {size}",
            p.len()
        )));
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(Error::InvalidMmdp(format!(
            "{name} is not a probability distribution (sum {sum})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> TabularMMDP {
        let states = StateSpace::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let t = TransitionTable::from_dense(&[
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.5, 0.5], vec![0.0, 1.0]],
        ])
        .unwrap();
        TabularMMDP::new(states, 1, 2, vec![0.0, 1.0], Arc::new(t), 0.9, vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn joint_action_indexing_is_row_major() {
        assert_eq!(joint_action_index(&[1, 0], 3), 3);
        assert_eq!(joint_action_index(&[0, 2], 3), 2);
        for idx in 0..27 {
            let acts = decode_joint_action(idx, 3, 3);
            assert_eq!(joint_action_index(&acts, 3), idx);
        }
        assert_eq!(decode_joint_action(5, 2, 3), vec![1, 2]);
    }

    #[test]
    fn rejects_bad_features() {
        assert!(StateSpace::new(vec![vec![0.5, 1.5]]).is_err());
        assert!(StateSpace::new(vec![vec![0.5], vec![0.5, 0.5]]).is_err());
        assert!(StateSpace::new(vec![]).is_err());
    }

    #[test]
    fn rejects_bad_gamma_and_rho() {
        let m = two_state();
        let t = m.transitions_arc().clone();
        let s = m.states().clone();
        assert!(TabularMMDP::new(s.clone(), 1, 2, vec![0.0; 2], t.clone(), 1.0, vec![1.0, 0.0]).is_err());
        assert!(TabularMMDP::new(s.clone(), 1, 2, vec![0.0; 2], t.clone(), 0.5, vec![0.7, 0.7]).is_err());
        assert!(TabularMMDP::new(s, 2, 2, vec![0.0; 2], t, 0.5, vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = two_state();
        let text = m.to_json().unwrap();
        assert!(text.contains("\"transitions\":[[[1.0,0.0],[0.0,1.0]]"));
        let back = TabularMMDP::from_json(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn json_rejects_unknown_field() {
        let mut v: serde_json::Value = serde_json::from_str(&two_state().to_json().unwrap()).unwrap();
        v["horizon"] = 3.into();
        assert!(TabularMMDP::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn policy_validation() {
        let m = two_state();
        assert!(JointPolicy::new(vec![0, 1]).validate(&m).is_ok());
        assert!(JointPolicy::new(vec![0, 2]).validate(&m).is_err());
        assert!(JointPolicy::new(vec![0]).validate(&m).is_err());
    }
}
