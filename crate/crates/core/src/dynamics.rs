//! Capability vectors, kernels, and assembly of capability-dependent MMDPs.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{SuccessorFeatures, TabularMMDP, TransitionTable};

/// Sum tolerance for simplex membership.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Nonnegative capability vector of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CapabilityVector(Vec<f64>);

impl CapabilityVector {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::InvalidArgument("capability vector is empty".into()));
        }
        if c.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "capability {c:?} has a negative or non-finite component"
            )));
        }
        Ok(Self(c))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_simplex(&self) -> bool {
        (self.sum() - 1.0).abs() <= SIMPLEX_TOL
    }

    /// `|self − other|_∞`.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        sup_norm_diff(&self.0, &other.0)
    }
}

impl TryFrom<Vec<f64>> for CapabilityVector {
    type Error = Error;

    fn try_from(c: Vec<f64>) -> Result<Self> {
        Self::new(c)
    }
}

impl From<CapabilityVector> for Vec<f64> {
    fn from(c: CapabilityVector) -> Self {
        c.0
    }
}

/// Ordered team of capability vectors sharing one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CapabilityVector>", into = "Vec<CapabilityVector>")]
pub struct TeamComposition {
    members: Vec<CapabilityVector>,
}

impl TeamComposition {
    pub fn new(members: Vec<CapabilityVector>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::InvalidArgument("team needs at least one member".into()));
        };
        let d = first.dim();
        if let Some(i) = members.iter().position(|m| m.dim() != d) {
            return Err(Error::Dimension(format!(
                "member {i} has capability dimension {}, expected {d}",
                members[i].dim()
            )));
        }
        Ok(Self { members })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            rows.into_iter()
                .map(CapabilityVector::new)
                .collect::<Result<_>>()?,
        )
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn members(&self) -> &[CapabilityVector] {
        &self.members
    }

    pub fn member(&self, i: usize) -> &CapabilityVector {
        &self.members[i]
    }

    /// `Σ_i a_i c_i`.
    pub fn weighted_sum(&self, weights: &InfluenceWeights) -> Result<Vec<f64>> {
        self.check_weights(weights)?;
        let mut out = vec![0.0; self.dim()];
        for (m, &a) in self.members.iter().zip(weights.as_slice()) {
            for (o, c) in out.iter_mut().zip(m.as_slice()) {
                *o += a * c;
            }
        }
        Ok(out)
    }

    pub fn check_weights(&self, weights: &InfluenceWeights) -> Result<()> {
        if weights.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} influence weights for {} members",
                weights.len(),
                self.len()
            )));
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() || self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "teams of shape {}x{} and {}x{}",
                self.len(),
                self.dim(),
                other.len(),
                other.dim()
            )));
        }
        Ok(())
    }

    /// Reorders members: output member `i` is input member `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            members: perm.iter().map(|&p| self.members[p].clone()).collect(),
        }
    }

    /// Copy with member `i` replaced.
    pub fn with_member(&self, i: usize, c: CapabilityVector) -> Result<Self> {
        let mut members = self.members.clone();
        members[i] = c;
        Self::new(members)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.members.iter().map(|m| m.0.clone()).collect()
    }
}

impl TryFrom<Vec<CapabilityVector>> for TeamComposition {
    type Error = Error;

    fn try_from(members: Vec<CapabilityVector>) -> Result<Self> {
        Self::new(members)
    }
}

impl From<TeamComposition> for Vec<CapabilityVector> {
    fn from(t: TeamComposition) -> Self {
        t.members
    }
}

/// Influence weights on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct InfluenceWeights(Vec<f64>);

impl InfluenceWeights {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidArgument("influence weights are empty".into()));
        }
        let sum: f64 = a.iter().sum();
        if a.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidArgument(format!(
                "influence weights {a:?} are not on the simplex (sum {sum})"
            )));
        }
        Ok(Self(a))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(perm.iter().map(|&p| self.0[p]).collect())
    }
}

impl TryFrom<Vec<f64>> for InfluenceWeights {
    type Error = Error;

    fn try_from(a: Vec<f64>) -> Result<Self> {
        Self::new(a)
    }
}

impl From<InfluenceWeights> for Vec<f64> {
    fn from(a: InfluenceWeights) -> Self {
        a.0
    }
}

/// `d × k` reward kernel `W_R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct RewardKernel {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
}

impl RewardKernel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 {
            return Err(Error::InvalidArgument("reward kernel is empty".into()));
        }
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("reward kernel rows differ in length".into()));
        }
        let w: Vec<f64> = rows.concat();
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("reward kernel has non-finite entries".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            w,
        })
    }

    /// Capability dimension d.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Feature dimension k.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.w[row * self.cols + col]
    }

    /// `W_R φ` as a d-vector.
    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        self.w
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(phi).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// `⟨c, W_R φ⟩`.
    pub fn bilinear(&self, c: &[f64], phi: &[f64]) -> f64 {
        self.apply(phi).iter().zip(c).map(|(x, y)| x * y).sum()
    }
}

impl TryFrom<Vec<Vec<f64>>> for RewardKernel {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<RewardKernel> for Vec<Vec<f64>> {
    fn from(k: RewardKernel) -> Self {
        k.w.chunks_exact(k.cols).map(<[f64]>::to_vec).collect()
    }
}

/// Capability-indexed transition kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionKernel {
    /// One distribution table `P_j` per capability dimension; the assembled
    /// kernel is `Σ_j m_j P_j` with `m = Σ_i a_i c_i`.
    PerCapability { components: Vec<Arc<TransitionTable>> },
    /// Every `P_j` equals `table`; assembly uses it unchanged.
    Shared { table: Arc<TransitionTable> },
}

impl TransitionKernel {
    fn shape(&self) -> Result<(usize, usize)> {
        match self {
            TransitionKernel::PerCapability { components } => {
                let first = components.first().ok_or_else(|| {
                    Error::InvalidArgument("transition kernel has no components".into())
                })?;
                if components.iter().any(|c| !c.same_shape(first)) {
                    return Err(Error::Dimension(
                        "transition components differ in shape".into(),
                    ));
                }
                Ok((first.num_states(), first.num_actions()))
            }
            TransitionKernel::Shared { table } => Ok((table.num_states(), table.num_actions())),
        }
    }

    fn mix(&self, mixture: &[f64]) -> Result<Arc<TransitionTable>> {
        match self {
            TransitionKernel::Shared { table } => Ok(table.clone()),
            TransitionKernel::PerCapability { components } => {
                let (s_count, u_count) = self.shape()?;
                let mut rows = Vec::with_capacity(s_count * u_count);
                for s in 0..s_count {
                    for u in 0..u_count {
                        let mut row = Vec::new();
                        for (m, comp) in mixture.iter().zip(components) {
                            if *m != 0.0 {
                                row.extend(comp.row(s, u).iter().map(|(n, p)| (n, m * p)));
                            }
                        }
                        rows.push(row);
                    }
                }
                Ok(Arc::new(TransitionTable::from_sparse_rows(s_count, u_count, rows)?))
            }
        }
    }
}

/// Everything a family of tasks shares: states, kernels, action structure, γ, ρ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedDynamics {
    pub states: crate::mdp::StateSpace,
    pub reward_kernel: RewardKernel,
    pub transition_kernel: TransitionKernel,
    pub num_agents: usize,
    pub actions_per_agent: usize,
    pub gamma: f64,
    pub rho: Vec<f64>,
}

impl SharedDynamics {
    /// Capability dimension d.
    pub fn capability_dim(&self) -> usize {
        self.reward_kernel.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (s_count, _) = self.transition_kernel.shape()?;
        if s_count != self.states.size() {
            return Err(Error::Dimension(format!(
                "transition kernel covers {s_count} states, state space has {}",
                self.states.size()
            )));
        }
        if self.reward_kernel.cols() != self.states.dim() {
            return Err(Error::Dimension(format!(
                "reward kernel has {} columns, features have dimension {}",
                self.reward_kernel.cols(),
                self.states.dim()
            )));
        }
        if let TransitionKernel::PerCapability { components } = &self.transition_kernel {
            if components.len() != self.capability_dim() {
                return Err(Error::Dimension(format!(
                    "{} transition components for capability dimension {}",
                    components.len(),
                    self.capability_dim()
                )));
            }
        }
        Ok(())
    }

    /// Rewards `⟨m, W_R φ(s)⟩` for a capability mixture `m`.
    pub fn rewards_for_mixture(&self, mixture: &[f64]) -> Vec<f64> {
        self.states
            .iter()
            .map(|phi| self.reward_kernel.bilinear(mixture, phi))
            .collect()
    }

    fn build(&self, rewards: Vec<f64>, transitions: Arc<TransitionTable>) -> Result<TabularMMDP> {
        TabularMMDP::new(
            self.states.clone(),
            self.num_agents,
            self.actions_per_agent,
            rewards,
            transitions,
            self.gamma,
            self.rho.clone(),
        )
    }
}

/// A team, its influence weights, and the shared dynamics it acts in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearMMDPSpec {
    pub team: TeamComposition,
    pub weights: InfluenceWeights,
    pub environment: Arc<SharedDynamics>,
    #[serde(default)]
    pub relax_simplex: bool,
}

impl LinearMMDPSpec {
    pub fn new(
        team: TeamComposition,
        weights: InfluenceWeights,
        environment: Arc<SharedDynamics>,
    ) -> Result<Self> {
        let spec = Self {
            team,
            weights,
            environment,
            relax_simplex: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn relaxed(mut self) -> Self {
        self.relax_simplex = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.environment.validate()?;
        self.team.check_weights(&self.weights)?;
        if self.team.dim() != self.environment.capability_dim() {
            return Err(Error::Dimension(format!(
                "team capability dimension {} but reward kernel has {} rows",
                self.team.dim(),
                self.environment.capability_dim()
            )));
        }
        Ok(())
    }

    /// Same environment with a different team and weights.
    pub fn with_team(&self, team: TeamComposition, weights: InfluenceWeights) -> Result<Self> {
        let spec = Self {
            team,
            weights,
            environment: self.environment.clone(),
            relax_simplex: self.relax_simplex,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mixture(&self) -> Result<Vec<f64>> {
        self.team.weighted_sum(&self.weights)
    }

    /// Spec with the last member removed and the remaining weights renormalized.
    pub fn without_last_member(&self) -> Result<Self> {
        let n = self.team.len();
        if n < 2 {
            return Err(Error::InvalidArgument(
                "removing a member needs at least two members".into(),
            ));
        }
        let a = self.weights.as_slice();
        let rest = 1.0 - a[n - 1];
        if rest <= 0.0 {
            return Err(Error::InvalidArgument(
                "last member carries all the influence weight; cannot renormalize".into(),
            ));
        }
        let weights = renormalize(a[..n - 1].iter().map(|x| x / rest).collect())?;
        let team = TeamComposition::new(self.team.members()[..n - 1].to_vec())?;
        self.with_team(team, weights)
    }

    /// Spec with a new member of weight `w` appended; old weights scale by `1 − w`.
    pub fn with_added_member(&self, c: CapabilityVector, w: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&w) {
            return Err(Error::InvalidArgument(format!(
                "new member weight {w} outside [0,1)"
            )));
        }
        let lambda = 1.0 - w;
        let mut a: Vec<f64> = self.weights.as_slice().iter().map(|x| x * lambda).collect();
        a.push(w);
        let mut members = self.team.members().to_vec();
        members.push(c);
        self.with_team(TeamComposition::new(members)?, renormalize(a)?)
    }
}

/// Builds weights, absorbing rounding so the sum check cannot trip.
fn renormalize(mut a: Vec<f64>) -> Result<InfluenceWeights> {
    let sum: f64 = a.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL * 0.5 && sum > 0.0 {
        for x in &mut a {
            *x /= sum;
        }
    }
    InfluenceWeights::new(a)
}

/// `Σ_{i<n} a_i c_i / (1 − a_n)`: the mixture left after removing the last member.
pub fn remaining_mixture(team: &TeamComposition, weights: &InfluenceWeights) -> Result<Vec<f64>> {
    team.check_weights(weights)?;
    let n = team.len();
    let a = weights.as_slice();
    let rest = 1.0 - a[n - 1];
    if n < 2 || rest <= 0.0 {
        return Err(Error::InvalidArgument(
            "remaining mixture needs n >= 2 and a_n < 1".into(),
        ));
    }
    let mut out = vec![0.0; team.dim()];
    for (m, &ai) in team.members()[..n - 1].iter().zip(a) {
        for (o, c) in out.iter_mut().zip(m.as_slice()) {
            *o += ai * c;
        }
    }
    Ok(out.into_iter().map(|x| x / rest).collect())
}

/// Assembles `R(s) = Σ_i a_i ⟨c_i, W_R φ(s)⟩` and `P = Σ_j m_j P_j`.
pub fn assemble_linear_mmdp(spec: &LinearMMDPSpec) -> Result<TabularMMDP> {
    spec.validate()?;
    if !spec.relax_simplex {
        if let Some(i) = spec.team.members().iter().position(|c| !c.is_simplex()) {
            return Err(Error::NonSimplexCapability {
                member: i,
                sum: spec.team.member(i).sum(),
            });
        }
    }
    let env = &spec.environment;
    let a = spec.weights.as_slice();
    let rewards = env
        .states
        .iter()
        .map(|phi| {
            let wphi = env.reward_kernel.apply(phi);
            spec.team
                .members()
                .iter()
                .zip(a)
                .map(|(c, ai)| ai * dot(c.as_slice(), &wphi))
                .sum()
        })
        .collect();
    let transitions = env.transition_kernel.mix(&spec.mixture()?)?;
    env.build(rewards, transitions)
}

/// `Σ_i a_i ⟨c_i, W_R μ⟩` using the ρ-averaged successor features.
pub fn value_from_successor_features(
    spec: &LinearMMDPSpec,
    sf: &SuccessorFeatures,
) -> Result<f64> {
    let k = spec.environment.reward_kernel.cols();
    if sf.mu_scalar.len() != k {
        return Err(Error::Dimension(format!(
            "successor features of dimension {}, reward kernel has {k} columns",
            sf.mu_scalar.len()
        )));
    }
    let wmu = spec.environment.reward_kernel.apply(&sf.mu_scalar);
    Ok(spec
        .team
        .members()
        .iter()
        .zip(spec.weights.as_slice())
        .map(|(c, a)| a * dot(c.as_slice(), &wmu))
        .sum())
}

fn check_same_states(x: &TabularMMDP, y: &TabularMMDP) -> Result<()> {
    if x.num_states() != y.num_states() {
        return Err(Error::Dimension(format!(
            "state spaces of size {} and {}",
            x.num_states(),
            y.num_states()
        )));
    }
    Ok(())
}

fn check_same_spaces(x: &TabularMMDP, y: &TabularMMDP) -> Result<()> {
    check_same_states(x, y)?;
    if x.num_joint_actions() != y.num_joint_actions() {
        return Err(Error::Dimension(format!(
            "joint action spaces of size {} and {}",
            x.num_joint_actions(),
            y.num_joint_actions()
        )));
    }
    Ok(())
}

/// `ε_R = max_s |R_x(s) − R_y(s)|`.
pub fn reward_deviation_exact(x: &TabularMMDP, y: &TabularMMDP) -> Result<f64> {
    check_same_states(x, y)?;
    Ok(sup_norm_diff(x.rewards(), y.rewards()))
}

/// `ε_P = max_{s,u} |P_x(·|s,u) − P_y(·|s,u)|_1`, i.e. twice the total variation.
pub fn transition_deviation_exact(x: &TabularMMDP, y: &TabularMMDP) -> Result<f64> {
    check_same_spaces(x, y)?;
    if Arc::ptr_eq(x.transitions_arc(), y.transitions_arc()) {
        return Ok(0.0);
    }
    let (tx, ty) = (x.transitions(), y.transitions());
    let mut worst = 0.0f64;
    for s in 0..x.num_states() {
        for u in 0..x.num_joint_actions() {
            worst = worst.max(tx.row_l1_distance(ty, s, u));
        }
    }
    Ok(worst)
}

/// `max_{s,u,s'} |P_x(s'|s,u) − P_y(s'|s,u)|`.
pub fn transition_entry_deviation(x: &TabularMMDP, y: &TabularMMDP) -> Result<f64> {
    check_same_spaces(x, y)?;
    if Arc::ptr_eq(x.transitions_arc(), y.transitions_arc()) {
        return Ok(0.0);
    }
    let (tx, ty) = (x.transitions(), y.transitions());
    let mut worst = 0.0f64;
    for s in 0..x.num_states() {
        for u in 0..x.num_joint_actions() {
            worst = worst.max(tx.row_max_entry_distance(ty, s, u));
        }
    }
    Ok(worst)
}

/// Polynomial capability reward with sparse multi-index coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolynomialDocument", into = "PolynomialDocument")]
pub struct PolynomialRewardSpec {
    terms: BTreeMap<Vec<u32>, f64>,
    alpha: f64,
    degree: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolynomialDocument {
    alpha: f64,
    degree: u32,
    terms: Vec<PolynomialTerm>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolynomialTerm {
    exponents: Vec<u32>,
    coefficient: f64,
}

impl PolynomialRewardSpec {
    pub fn new(terms: BTreeMap<Vec<u32>, f64>, alpha: f64, degree: u32) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} must be >= 0")));
        }
        let n = terms.keys().next().map(Vec::len);
        for (idx, &coef) in &terms {
            if Some(idx.len()) != n {
                return Err(Error::Dimension(
                    "multi-indices have different lengths".into(),
                ));
            }
            if idx.iter().sum::<u32>() > degree {
                return Err(Error::InvalidArgument(format!(
                    "multi-index {idx:?} exceeds degree {degree}"
                )));
            }
            if !(coef.abs() <= alpha) {
                return Err(Error::InvalidArgument(format!(
                    "coefficient {coef} of {idx:?} exceeds alpha {alpha}"
                )));
            }
        }
        let terms = terms.into_iter().filter(|(_, c)| *c != 0.0).collect();
        Ok(Self {
            terms,
            alpha,
            degree,
        })
    }

    /// First-order spec reproducing the linear reward with weights `a`.
    pub fn linear(weights: &InfluenceWeights) -> Self {
        let n = weights.len();
        let terms = (0..n)
            .map(|i| {
                let mut idx = vec![0; n];
                idx[i] = 1;
                (idx, weights.as_slice()[i])
            })
            .collect();
        Self::new(terms, 1.0, 1).expect("simplex weights are valid first-order coefficients")
    }

    pub fn terms(&self) -> &BTreeMap<Vec<u32>, f64> {
        &self.terms
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// `Σ a_{k} Π_i c_i^{k_i}` (element-wise powers), a d-vector.
    pub fn capability_vector(&self, team: &TeamComposition) -> Result<Vec<f64>> {
        let mut out = vec![0.0; team.dim()];
        for (idx, &coef) in &self.terms {
            if idx.len() != team.len() {
                return Err(Error::Dimension(format!(
                    "multi-index of length {} for a team of {}",
                    idx.len(),
                    team.len()
                )));
            }
            for (j, o) in out.iter_mut().enumerate() {
                let mut prod = coef;
                for (m, &e) in team.members().iter().zip(idx) {
                    prod *= m.as_slice()[j].powi(e as i32);
                }
                *o += prod;
            }
        }
        Ok(out)
    }
}

impl TryFrom<PolynomialDocument> for PolynomialRewardSpec {
    type Error = Error;

    fn try_from(doc: PolynomialDocument) -> Result<Self> {
        let mut terms = BTreeMap::new();
        for t in doc.terms {
            if terms.insert(t.exponents.clone(), t.coefficient).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate multi-index {:?}",
                    t.exponents
                )));
            }
        }
        Self::new(terms, doc.alpha, doc.degree)
    }
}

impl From<PolynomialRewardSpec> for PolynomialDocument {
    fn from(p: PolynomialRewardSpec) -> Self {
        PolynomialDocument {
            alpha: p.alpha,
            degree: p.degree,
            terms: p
                .terms
                .into_iter()
                .map(|(exponents, coefficient)| PolynomialTerm {
                    exponents,
                    coefficient,
                })
                .collect(),
        }
    }
}

/// `⟨Σ a_k Π c_i^{k_i}, W_R φ⟩` for one state.
pub fn polynomial_reward(
    spec: &PolynomialRewardSpec,
    team: &TeamComposition,
    reward_kernel: &RewardKernel,
    state_features: &[f64],
) -> Result<f64> {
    if team.dim() != reward_kernel.rows() || state_features.len() != reward_kernel.cols() {
        return Err(Error::Dimension(
            "team, reward kernel and features disagree on dimensions".into(),
        ));
    }
    let c = spec.capability_vector(team)?;
    Ok(reward_kernel.bilinear(&c, state_features))
}

/// Polynomial rewards for every state of an environment.
pub fn polynomial_rewards(
    spec: &PolynomialRewardSpec,
    team: &TeamComposition,
    env: &SharedDynamics,
) -> Result<Vec<f64>> {
    if team.dim() != env.capability_dim() {
        return Err(Error::Dimension("team does not match reward kernel".into()));
    }
    let c = spec.capability_vector(team)?;
    Ok(env.rewards_for_mixture(&c))
}

type TeamMap = dyn Fn(&TeamComposition) -> Vec<f64> + Send + Sync;

/// Reward `⟨f(T), W_R φ(s)⟩` for a black-box `f` with caller-supplied
/// sup-norm Lipschitz constants.
#[derive(Clone)]
pub struct LipschitzRewardSpec {
    pub name: String,
    pub f: Arc<TeamMap>,
    pub lipschitz_constants: Vec<f64>,
}

impl fmt::Debug for LipschitzRewardSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LipschitzRewardSpec")
            .field("name", &self.name)
            .field("lipschitz_constants", &self.lipschitz_constants)
            .finish_non_exhaustive()
    }
}

impl LipschitzRewardSpec {
    pub fn new(
        name: impl Into<String>,
        f: Arc<TeamMap>,
        lipschitz_constants: Vec<f64>,
    ) -> Result<Self> {
        if lipschitz_constants.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::InvalidArgument(
                "Lipschitz constants must be nonnegative".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            f,
            lipschitz_constants,
        })
    }

    /// `f_j(T) = Σ_i w_i min(c_ij², 1)`, Lipschitz with `L_i = 2 w_i` on nonnegative capabilities.
    pub fn clipped_quadratic(w: Vec<f64>) -> Result<Self> {
        let coeffs = w.clone();
        let f = Arc::new(move |team: &TeamComposition| {
            let mut out = vec![0.0; team.dim()];
            for (m, wi) in team.members().iter().zip(&coeffs) {
                for (o, c) in out.iter_mut().zip(m.as_slice()) {
                    *o += wi * (c * c).min(1.0);
                }
            }
            out
        });
        let l = w.iter().map(|x| 2.0 * x.abs()).collect();
        Self::new("clipped_quadratic", f, l)
    }

    /// `f(T) = Σ_i a_i c_i`, Lipschitz with `L_i = a_i`.
    pub fn linear(weights: &InfluenceWeights) -> Self {
        let a = weights.as_slice().to_vec();
        let coeffs = a.clone();
        let f = Arc::new(move |team: &TeamComposition| {
            let mut out = vec![0.0; team.dim()];
            for (m, ai) in team.members().iter().zip(&coeffs) {
                for (o, c) in out.iter_mut().zip(m.as_slice()) {
                    *o += ai * c;
                }
            }
            out
        });
        Self::new("linear", f, a).expect("simplex weights are nonnegative")
    }

    pub fn evaluate(&self, team: &TeamComposition) -> Result<Vec<f64>> {
        if self.lipschitz_constants.len() != team.len() {
            return Err(Error::Dimension(format!(
                "{} Lipschitz constants for a team of {}",
                self.lipschitz_constants.len(),
                team.len()
            )));
        }
        let v = (self.f)(team);
        if v.len() != team.dim() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "reward map {} returned an invalid vector",
                self.name
            )));
        }
        Ok(v)
    }
}

/// MMDP with Lipschitz rewards over the environment's shared transitions.
pub fn assemble_lipschitz_mmdp(
    spec: &LipschitzRewardSpec,
    team: &TeamComposition,
    env: &SharedDynamics,
) -> Result<TabularMMDP> {
    env.validate()?;
    let TransitionKernel::Shared { table } = &env.transition_kernel else {
        return Err(Error::InvalidArgument(
            "Lipschitz rewards require a shared transition kernel".into(),
        ));
    };
    if team.dim() != env.capability_dim() {
        return Err(Error::Dimension("team does not match reward kernel".into()));
    }
    let f = spec.evaluate(team)?;
    env.build(env.rewards_for_mixture(&f), table.clone())
}

/// Largest table (states² × actions) that [`perturb_dynamics`] will densify.
pub const PERTURB_DENSE_CAP: usize = 20_000_000;

/// Adds seeded uniform noise of size `eps_r` to rewards and `eps_p` to every
/// transition entry, then clips at zero and renormalizes rows.
pub fn perturb_dynamics(
    mmdp: &TabularMMDP,
    eps_r: f64,
    eps_p: f64,
    seed: u64,
) -> Result<TabularMMDP> {
    if !(eps_r >= 0.0 && eps_r.is_finite() && eps_p >= 0.0 && eps_p.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "perturbation sizes must be finite and >= 0 (got {eps_r}, {eps_p})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rewards: Vec<f64> = if eps_r == 0.0 {
        mmdp.rewards().to_vec()
    } else {
        mmdp.rewards()
            .iter()
            .map(|&r| {
                let x = r + rng.gen_range(-eps_r..=eps_r);
                if r >= 0.0 {
                    x.max(0.0)
                } else {
                    x
                }
            })
            .collect()
    };
    let out = mmdp.with_rewards(rewards)?;
    if eps_p == 0.0 {
        return Ok(out);
    }
    let s_count = mmdp.num_states();
    let u_count = mmdp.num_joint_actions();
    if s_count.saturating_mul(s_count).saturating_mul(u_count) > PERTURB_DENSE_CAP {
        return Err(Error::InfeasiblePerturbation(format!(
            "{s_count} states x {u_count} actions is too large to perturb densely"
        )));
    }
    let table = mmdp.transitions();
    let mut rows = Vec::with_capacity(s_count * u_count);
    for s in 0..s_count {
        for u in 0..u_count {
            let mut dense = table.row(s, u).to_dense(s_count);
            for p in &mut dense {
                *p = (*p + rng.gen_range(-eps_p..=eps_p)).max(0.0);
            }
            let total: f64 = dense.iter().sum();
            if !(total > 0.0) {
                return Err(Error::InfeasiblePerturbation(format!(
                    "row ({s},{u}) lost all mass"
                )));
            }
            rows.push(dense.into_iter().map(|p| p / total).enumerate().collect());
        }
    }
    let t = TransitionTable::from_sparse_rows(s_count, u_count, rows)?;
    out.with_transitions(Arc::new(t))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
