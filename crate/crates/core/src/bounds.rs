//! Generalization, transfer, and population-change bounds, each certified
//! against brute-force optimal values.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    assemble_linear_mmdp, assemble_lipschitz_mmdp, reward_deviation_exact,
    transition_deviation_exact, transition_entry_deviation, CapabilityVector, InfluenceWeights,
    LinearMMDPSpec, LipschitzRewardSpec, PolynomialRewardSpec, RewardKernel, SharedDynamics,
    TeamComposition, TransitionKernel,
};
use crate::error::{Error, Result};
use crate::mdp::{
    policy_evaluation, value_iteration, JointPolicy, SolverSettings, StateSpace, TabularMMDP,
    ValueTable,
};

/// Additive slack allowed when comparing an actual gap with its bound.
pub const BOUND_TOLERANCE: f64 = 1e-7;

/// Largest team for which Ψ may be minimized over all permutations.
pub const MAX_PERMUTATION_AGENTS: usize = 8;

/// A computed bound next to the quantity it is supposed to dominate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound_name: String,
    pub constituents: BTreeMap<String, f64>,
    pub bound_value: f64,
    pub actual_value: f64,
    pub satisfied: bool,
    pub slack: f64,
    /// Permutation of the y team used for Ψ, when minimization was on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
}

impl BoundReport {
    pub fn new(
        bound_name: impl Into<String>,
        constituents: BTreeMap<String, f64>,
        bound_value: f64,
        actual_value: f64,
    ) -> Self {
        Self {
            bound_name: bound_name.into(),
            constituents,
            bound_value,
            actual_value,
            satisfied: actual_value <= bound_value + BOUND_TOLERANCE,
            slack: bound_value - actual_value,
            permutation: None,
        }
    }

    fn with_permutation(mut self, permutation: Option<Vec<usize>>) -> Self {
        self.permutation = permutation;
        self
    }

    pub fn constituent(&self, name: &str) -> Option<f64> {
        self.constituents.get(name).copied()
    }

    /// Whether the per-state form of the gap also sits under the bound.
    pub fn state_max_satisfied(&self) -> Option<bool> {
        self.constituent("actual_state_max")
            .map(|x| x <= self.bound_value + BOUND_TOLERANCE)
    }
}

/// Finite task distribution over (team, weights) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDistribution {
    pub support: Vec<(TeamComposition, InfluenceWeights)>,
    pub probabilities: Vec<f64>,
}

impl TaskDistribution {
    pub fn new(
        support: Vec<(TeamComposition, InfluenceWeights)>,
        probabilities: Vec<f64>,
    ) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::EmptySupport);
        }
        if probabilities.len() != support.len() {
            return Err(Error::Dimension(format!(
                "{} probabilities for {} support members",
                probabilities.len(),
                support.len()
            )));
        }
        let sum: f64 = probabilities.iter().sum();
        if probabilities.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "task probabilities sum to {sum}"
            )));
        }
        Ok(Self {
            support,
            probabilities,
        })
    }

    pub fn uniform(support: Vec<(TeamComposition, InfluenceWeights)>) -> Result<Self> {
        let n = support.len();
        Self::new(support, vec![1.0 / n.max(1) as f64; n])
    }
}

/// The two-term quantity Ψ and how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiValue {
    pub value: f64,
    /// `|Σ a^x_i (T^x_i − T^y_i)|_∞`
    pub substitution: f64,
    /// `|Σ (a^x_i − a^y_i) T^y_i|_∞`
    pub influence: f64,
    pub permutation: Option<Vec<usize>>,
}

fn psi_terms(
    tx: &TeamComposition,
    ax: &InfluenceWeights,
    ty: &TeamComposition,
    ay: &InfluenceWeights,
) -> (f64, f64) {
    let d = tx.dim();
    let mut sub = vec![0.0; d];
    let mut inf = vec![0.0; d];
    for i in 0..tx.len() {
        let (cx, cy) = (tx.member(i).as_slice(), ty.member(i).as_slice());
        let (wx, wy) = (ax.as_slice()[i], ay.as_slice()[i]);
        for j in 0..d {
            sub[j] += wx * (cx[j] - cy[j]);
            inf[j] += (wx - wy) * cy[j];
        }
    }
    let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (norm(&sub), norm(&inf))
}

/// Lexicographic successor; false once the last permutation is reached.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap();
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Ψ between two weighted teams. With `minimize_over_permutations`, the y team
/// and its weights are permuted jointly (which leaves the y task unchanged) and
/// the smallest value is returned, lowest permutation first on ties.
pub fn psi(
    tx: &TeamComposition,
    ax: &InfluenceWeights,
    ty: &TeamComposition,
    ay: &InfluenceWeights,
    minimize_over_permutations: bool,
) -> Result<PsiValue> {
    tx.check_compatible(ty)?;
    tx.check_weights(ax)?;
    ty.check_weights(ay)?;
    if !minimize_over_permutations {
        let (substitution, influence) = psi_terms(tx, ax, ty, ay);
        return Ok(PsiValue {
            value: substitution + influence,
            substitution,
            influence,
            permutation: None,
        });
    }
    let n = tx.len();
    if n > MAX_PERMUTATION_AGENTS {
        return Err(Error::InvalidArgument(format!(
            "permutation search over {n} agents exceeds the limit of {MAX_PERMUTATION_AGENTS}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best: Option<PsiValue> = None;
    loop {
        let (s, i) = psi_terms(tx, ax, &ty.permuted(&perm), &ay.permuted(&perm));
        if best.as_ref().map_or(true, |b| s + i < b.value) {
            best = Some(PsiValue {
                value: s + i,
                substitution: s,
                influence: i,
                permutation: Some(perm.clone()),
            });
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best.expect("at least the identity permutation is evaluated"))
}

/// `max_s |W_R φ(s)|_1`.
pub fn s_max(reward_kernel: &RewardKernel, states: &StateSpace) -> Result<f64> {
    if reward_kernel.cols() != states.dim() {
        return Err(Error::Dimension(format!(
            "reward kernel has {} columns, features have dimension {}",
            reward_kernel.cols(),
            states.dim()
        )));
    }
    Ok(states
        .iter()
        .map(|phi| reward_kernel.apply(phi).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max))
}

/// Half the largest per-state optimal value of the reference task.
pub fn v_mid(v_star_reference: &ValueTable) -> f64 {
    0.5 * v_star_reference.max_value()
}

/// Crossover below which `(1+γ)/(1−γ)` is the tighter horizon factor.
pub fn gamma_crossover() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}

/// `1/(γ(1−γ))`, or `(1+γ)/(1−γ)` when that is tighter below the crossover.
pub fn gamma_factor(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma factor needs gamma in (0,1), got {gamma}"
        )));
    }
    let base = 1.0 / (gamma * (1.0 - gamma));
    if gamma < gamma_crossover() {
        Ok(base.min((1.0 + gamma) / (1.0 - gamma)))
    } else {
        Ok(base)
    }
}

/// `d_a(T^x, T^y) = |Σ_i a_i (T^x_i − T^y_i)|_∞`.
pub fn d_a_metric(
    tx: &TeamComposition,
    ty: &TeamComposition,
    a: &InfluenceWeights,
) -> Result<f64> {
    tx.check_compatible(ty)?;
    tx.check_weights(a)?;
    let mut acc = vec![0.0; tx.dim()];
    for (i, &w) in a.as_slice().iter().enumerate() {
        for (j, o) in acc.iter_mut().enumerate() {
            *o += w * (tx.member(i).as_slice()[j] - ty.member(i).as_slice()[j]);
        }
    }
    Ok(acc.iter().fold(0.0, |m, x| m.max(x.abs())))
}

/// Index of the support member nearest the query under `d_a`, lowest index on ties.
pub fn oracle_policy_select(
    distribution: &TaskDistribution,
    query: &TeamComposition,
    a: &InfluenceWeights,
) -> Result<usize> {
    let (idx, _) = nearest_support(distribution, query, a)?;
    Ok(idx)
}

/// `(argmin, min)` of `d_a` over the support.
pub fn nearest_support(
    distribution: &TaskDistribution,
    query: &TeamComposition,
    a: &InfluenceWeights,
) -> Result<(usize, f64)> {
    if distribution.support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut best = (0, f64::INFINITY);
    for (j, (team, _)) in distribution.support.iter().enumerate() {
        let d = d_a_metric(query, team, a)?;
        if d < best.1 {
            best = (j, d);
        }
    }
    Ok(best)
}

/// Solver settings and Ψ options shared by every bound.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundOptions {
    pub solver: SolverSettings,
    pub minimize_over_permutations: bool,
}

struct Solved {
    mmdp: TabularMMDP,
    values: ValueTable,
    policy: JointPolicy,
}

fn solve(mmdp: TabularMMDP, settings: &SolverSettings) -> Result<Solved> {
    let (values, policy) = value_iteration(&mmdp, settings)?;
    Ok(Solved {
        mmdp,
        values,
        policy,
    })
}

fn solve_spec(spec: &LinearMMDPSpec, settings: &SolverSettings) -> Result<Solved> {
    solve(assemble_linear_mmdp(spec)?, settings)
}

fn check_same_environment(x: &LinearMMDPSpec, y: &LinearMMDPSpec) -> Result<()> {
    if !Arc::ptr_eq(&x.environment, &y.environment) && x.environment != y.environment {
        return Err(Error::InvalidArgument(
            "bounds compare tasks that share kernels, states, gamma and rho".into(),
        ));
    }
    Ok(())
}

/// Constants that depend only on the shared environment.
struct EnvConstants {
    s_max: f64,
    gamma: f64,
    gamma_factor: f64,
    d: f64,
}

impl EnvConstants {
    fn new(env: &SharedDynamics) -> Result<Self> {
        Ok(Self {
            s_max: s_max(&env.reward_kernel, &env.states)?,
            gamma: env.gamma,
            gamma_factor: gamma_factor(env.gamma)?,
            d: env.capability_dim() as f64,
        })
    }

    /// `gamma_factor · (s_max + γ d V_mid)`.
    fn scale(&self, v_mid: f64) -> f64 {
        self.gamma_factor * (self.s_max + self.gamma * self.d * v_mid)
    }

    fn record(&self, c: &mut BTreeMap<String, f64>, v_mid: f64) {
        c.insert("s_max".into(), self.s_max);
        c.insert("gamma".into(), self.gamma);
        c.insert("gamma_factor".into(), self.gamma_factor);
        c.insert("d".into(), self.d);
        c.insert("v_mid".into(), v_mid);
    }
}

fn abs_state_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn signed_state_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn record_psi(c: &mut BTreeMap<String, f64>, p: &PsiValue) {
    c.insert("psi".into(), p.value);
    c.insert("psi_substitution".into(), p.substitution);
    c.insert("psi_influence".into(), p.influence);
}

/// Optimal-value gap between two team compositions.
pub fn bound_team_generalization(
    spec_x: &LinearMMDPSpec,
    spec_y: &LinearMMDPSpec,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    check_same_environment(spec_x, spec_y)?;
    let k = EnvConstants::new(&spec_x.environment)?;
    let p = psi(
        &spec_x.team,
        &spec_x.weights,
        &spec_y.team,
        &spec_y.weights,
        opts.minimize_over_permutations,
    )?;
    let x = solve_spec(spec_x, &opts.solver)?;
    let y = solve_spec(spec_y, &opts.solver)?;
    let vm = v_mid(&y.values);
    let bound = k.scale(vm) * p.value;
    let mut c = BTreeMap::new();
    k.record(&mut c, vm);
    record_psi(&mut c, &p);
    c.insert("v_star_x".into(), x.values.scalar);
    c.insert("v_star_y".into(), y.values.scalar);
    c.insert(
        "actual_state_max".into(),
        abs_state_gap(&x.values.v, &y.values.v),
    );
    let actual = (x.values.scalar - y.values.scalar).abs();
    Ok(BoundReport::new("team_generalization", c, bound, actual).with_permutation(p.permutation))
}

/// Loss from running the optimal policy of task y on task x.
pub fn bound_policy_transfer(
    spec_x: &LinearMMDPSpec,
    spec_y: &LinearMMDPSpec,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    check_same_environment(spec_x, spec_y)?;
    let k = EnvConstants::new(&spec_x.environment)?;
    let p = psi(
        &spec_x.team,
        &spec_x.weights,
        &spec_y.team,
        &spec_y.weights,
        opts.minimize_over_permutations,
    )?;
    let x = solve_spec(spec_x, &opts.solver)?;
    let y = solve_spec(spec_y, &opts.solver)?;
    let transferred = policy_evaluation(&x.mmdp, &y.policy, &opts.solver)?;
    let vm = v_mid(&y.values);
    let bound = 2.0 * k.scale(vm) * p.value;
    let mut c = BTreeMap::new();
    k.record(&mut c, vm);
    record_psi(&mut c, &p);
    c.insert("v_star_x".into(), x.values.scalar);
    c.insert("v_transfer_x".into(), transferred.scalar);
    c.insert(
        "actual_state_max".into(),
        signed_state_gap(&x.values.v, &transferred.v),
    );
    let actual = x.values.scalar - transferred.scalar;
    Ok(BoundReport::new("policy_transfer", c, bound, actual).with_permutation(p.permutation))
}

/// Loss of the d_a-nearest support task's optimal policy on a query team.
pub fn bound_out_of_distribution(
    distribution: &TaskDistribution,
    query: &TeamComposition,
    weights: &InfluenceWeights,
    environment: &Arc<SharedDynamics>,
    relax_simplex: bool,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    for (j, (_, a)) in distribution.support.iter().enumerate() {
        if a.len() != weights.len()
            || a.as_slice()
                .iter()
                .zip(weights.as_slice())
                .any(|(x, y)| (x - y).abs() > 1e-12)
        {
            return Err(Error::InvalidArgument(format!(
                "support member {j} uses different influence weights; d_a needs one fixed weight vector"
            )));
        }
    }
    let (j, dist) = nearest_support(distribution, query, weights)?;
    let k = EnvConstants::new(environment)?;
    let mk = |team: &TeamComposition| -> Result<LinearMMDPSpec> {
        let mut s = LinearMMDPSpec::new(team.clone(), weights.clone(), environment.clone())?;
        s.relax_simplex = relax_simplex;
        Ok(s)
    };
    let q = solve_spec(&mk(query)?, &opts.solver)?;
    let sup = solve_spec(&mk(&distribution.support[j].0)?, &opts.solver)?;
    let oracle = policy_evaluation(&q.mmdp, &sup.policy, &opts.solver)?;
    let vm = v_mid(&sup.values);
    let bound = 2.0 * k.scale(vm) * dist;
    let mut c = BTreeMap::new();
    k.record(&mut c, vm);
    c.insert("d_a".into(), dist);
    c.insert("selected_support".into(), j as f64);
    c.insert("support_size".into(), distribution.support.len() as f64);
    c.insert("v_star_query".into(), q.values.scalar);
    c.insert("v_oracle_query".into(), oracle.scalar);
    c.insert(
        "actual_state_max".into(),
        signed_state_gap(&q.values.v, &oracle.v),
    );
    let actual = q.values.scalar - oracle.scalar;
    Ok(BoundReport::new("out_of_distribution", c, bound, actual))
}

/// Population change applied to a team.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PopulationChange {
    RemoveLast,
    AddMember {
        capability: CapabilityVector,
        weight: f64,
    },
}

/// Optimal-value change from removing the last member or adding a new one.
pub fn bound_population_change(
    spec: &LinearMMDPSpec,
    change: &PopulationChange,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    let k = EnvConstants::new(&spec.environment)?;
    let a = spec.weights.as_slice();
    let (name, changed, factor) = match change {
        PopulationChange::RemoveLast => {
            let smaller = spec.without_last_member()?;
            let n = spec.team.len();
            let rest = crate::dynamics::remaining_mixture(&spec.team, &spec.weights)?;
            let dev = crate::dynamics::sup_norm_diff(&rest, spec.team.member(n - 1).as_slice());
            ("population_remove", smaller, a[n - 1] * dev)
        }
        PopulationChange::AddMember { capability, weight } => {
            if capability.dim() != spec.team.dim() {
                return Err(Error::Dimension(format!(
                    "new member has dimension {}, team has {}",
                    capability.dim(),
                    spec.team.dim()
                )));
            }
            let bigger = spec.with_added_member(capability.clone(), *weight)?;
            let mix = spec.mixture()?;
            let dev = crate::dynamics::sup_norm_diff(&mix, capability.as_slice());
            ("population_add", bigger, weight * dev)
        }
    };
    let base = solve_spec(spec, &opts.solver)?;
    let other = solve_spec(&changed, &opts.solver)?;
    let vm = v_mid(&other.values);
    let bound = k.scale(vm) * factor;
    let mut c = BTreeMap::new();
    k.record(&mut c, vm);
    c.insert("mixture_deviation".into(), factor);
    c.insert("v_star_original".into(), base.values.scalar);
    c.insert("v_star_changed".into(), other.values.scalar);
    c.insert(
        "actual_state_max".into(),
        abs_state_gap(&base.values.v, &other.values.v),
    );
    let actual = (base.values.scalar - other.values.scalar).abs();
    Ok(BoundReport::new(name, c, bound, actual))
}

/// Team generalization gap when the actual dynamics are only close to linear.
pub fn bound_approx_dynamics(
    spec_x: &LinearMMDPSpec,
    spec_y: &LinearMMDPSpec,
    actual_x: &TabularMMDP,
    actual_y: &TabularMMDP,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    check_same_environment(spec_x, spec_y)?;
    let k = EnvConstants::new(&spec_x.environment)?;
    let lin_x = assemble_linear_mmdp(spec_x)?;
    let lin_y = assemble_linear_mmdp(spec_y)?;
    for (lin, act) in [(&lin_x, actual_x), (&lin_y, actual_y)] {
        if !lin.same_spaces(act) || lin.gamma() != act.gamma() {
            return Err(Error::Dimension(
                "actual MMDP does not share spaces and gamma with its linear model".into(),
            ));
        }
    }
    let eps_r = reward_deviation_exact(&lin_x, actual_x)?.max(reward_deviation_exact(&lin_y, actual_y)?);
    let eps_p = transition_entry_deviation(&lin_x, actual_x)?
        .max(transition_entry_deviation(&lin_y, actual_y)?);
    let eps_p_l1 = transition_deviation_exact(&lin_x, actual_x)?
        .max(transition_deviation_exact(&lin_y, actual_y)?);
    let p = psi(
        &spec_x.team,
        &spec_x.weights,
        &spec_y.team,
        &spec_y.weights,
        opts.minimize_over_permutations,
    )?;
    let x = solve(actual_x.clone(), &opts.solver)?;
    let y = solve(actual_y.clone(), &opts.solver)?;
    let vm = v_mid(&y.values);
    let bound =
        k.scale(vm) * p.value + 2.0 * k.gamma_factor * (eps_r + k.gamma * eps_p * vm);
    let mut c = BTreeMap::new();
    k.record(&mut c, vm);
    record_psi(&mut c, &p);
    c.insert("eps_hat_r".into(), eps_r);
    c.insert("eps_hat_p".into(), eps_p);
    c.insert("eps_hat_p_l1".into(), eps_p_l1);
    c.insert("v_star_x".into(), x.values.scalar);
    c.insert("v_star_y".into(), y.values.scalar);
    c.insert(
        "actual_state_max".into(),
        abs_state_gap(&x.values.v, &y.values.v),
    );
    let actual = (x.values.scalar - y.values.scalar).abs();
    Ok(BoundReport::new("approx_dynamics", c, bound, actual).with_permutation(p.permutation))
}

/// Loss from planning with estimated capabilities `T̂` instead of the true `T`.
pub fn bound_capability_estimation(
    spec_true: &LinearMMDPSpec,
    spec_inferred: &LinearMMDPSpec,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    check_same_environment(spec_true, spec_inferred)?;
    spec_true.team.check_compatible(&spec_inferred.team)?;
    if spec_true.weights != spec_inferred.weights {
        return Err(Error::InvalidArgument(
            "true and inferred tasks must use identical influence weights".into(),
        ));
    }
    let k = EnvConstants::new(&spec_true.environment)?;
    let eps_t = spec_true
        .team
        .members()
        .iter()
        .zip(spec_inferred.team.members())
        .map(|(a, b)| a.sup_distance(b))
        .fold(0.0, f64::max);
    let t = solve_spec(spec_true, &opts.solver)?;
    let inferred = solve_spec(spec_inferred, &opts.solver)?;
    let transferred = policy_evaluation(&t.mmdp, &inferred.policy, &opts.solver)?;
    let vm = v_mid(&inferred.values);
    let bound = 2.0 * k.scale(vm) * eps_t;
    let mut c = BTreeMap::new();
    k.record(&mut c, vm);
    c.insert("eps_t".into(), eps_t);
    c.insert("v_star_true".into(), t.values.scalar);
    c.insert("v_inferred_policy".into(), transferred.scalar);
    c.insert(
        "actual_state_max".into(),
        signed_state_gap(&t.values.v, &transferred.v),
    );
    let actual = t.values.scalar - transferred.scalar;
    Ok(BoundReport::new("capability_estimation", c, bound, actual))
}

/// Optimal-value gap for Lipschitz capability rewards over identical transitions.
pub fn bound_lipschitz(
    spec: &LipschitzRewardSpec,
    team_x: &TeamComposition,
    team_y: &TeamComposition,
    env_x: &SharedDynamics,
    env_y: &SharedDynamics,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    let (TransitionKernel::Shared { table: px }, TransitionKernel::Shared { table: py }) =
        (&env_x.transition_kernel, &env_y.transition_kernel)
    else {
        return Err(Error::InvalidArgument(
            "Lipschitz bound needs shared (capability-independent) transitions".into(),
        ));
    };
    if !Arc::ptr_eq(px, py) && px != py {
        return Err(Error::InvalidArgument(
            "Lipschitz bound only covers tasks whose transitions are identical".into(),
        ));
    }
    if env_x.states != env_y.states
        || env_x.reward_kernel != env_y.reward_kernel
        || env_x.gamma != env_y.gamma
        || env_x.rho != env_y.rho
    {
        return Err(Error::InvalidArgument(
            "Lipschitz bound compares tasks in one environment".into(),
        ));
    }
    team_x.check_compatible(team_y)?;
    let sm = s_max(&env_x.reward_kernel, &env_x.states)?;
    let gf = gamma_factor(env_x.gamma)?;
    let weighted: f64 = spec
        .lipschitz_constants
        .iter()
        .zip(team_x.members().iter().zip(team_y.members()))
        .map(|(l, (a, b))| l * a.sup_distance(b))
        .sum();
    let x = solve(assemble_lipschitz_mmdp(spec, team_x, env_x)?, &opts.solver)?;
    let y = solve(assemble_lipschitz_mmdp(spec, team_y, env_y)?, &opts.solver)?;
    let bound = gf * sm * weighted;
    let mut c = BTreeMap::new();
    c.insert("s_max".into(), sm);
    c.insert("gamma".into(), env_x.gamma);
    c.insert("gamma_factor".into(), gf);
    c.insert("lipschitz_sum".into(), weighted);
    c.insert("v_star_x".into(), x.values.scalar);
    c.insert("v_star_y".into(), y.values.scalar);
    c.insert(
        "actual_state_max".into(),
        abs_state_gap(&x.values.v, &y.values.v),
    );
    let actual = (x.values.scalar - y.values.scalar).abs();
    Ok(BoundReport::new("lipschitz", c, bound, actual))
}

/// `Σ_{j=0}^{k} j 2^{j−1}`.
pub fn polynomial_series(degree: u32) -> f64 {
    (1..=degree).map(|j| j as f64 * 2f64.powi(j as i32 - 1)).sum()
}

/// `α δ s_max Σ_{j=0}^{k} j 2^{j−1}`: reward change bound for one substituted
/// member moving by at most `δ` in sup norm.
pub fn bound_polynomial_deviation(
    spec: &PolynomialRewardSpec,
    s_max: f64,
    delta: f64,
) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} must be >= 0")));
    }
    Ok(spec.alpha() * delta * s_max * polynomial_series(spec.degree()))
}

/// Reward-deviation chain check: `ε_R ≤ s_max·Ψ` on one linear pair.
pub fn reward_chain_report(
    spec_x: &LinearMMDPSpec,
    spec_y: &LinearMMDPSpec,
) -> Result<BoundReport> {
    check_same_environment(spec_x, spec_y)?;
    let env = &spec_x.environment;
    let sm = s_max(&env.reward_kernel, &env.states)?;
    let p = psi(&spec_x.team, &spec_x.weights, &spec_y.team, &spec_y.weights, false)?;
    let eps = reward_deviation_exact(&assemble_linear_mmdp(spec_x)?, &assemble_linear_mmdp(spec_y)?)?;
    let mut c = BTreeMap::new();
    c.insert("s_max".into(), sm);
    record_psi(&mut c, &p);
    c.insert("eps_r".into(), eps);
    Ok(BoundReport::new("reward_chain", c, sm * p.value, eps))
}

/// Transition-deviation chain check: `ε_P ≤ d·Ψ` on one linear pair.
pub fn transition_chain_report(
    spec_x: &LinearMMDPSpec,
    spec_y: &LinearMMDPSpec,
) -> Result<BoundReport> {
    check_same_environment(spec_x, spec_y)?;
    let d = spec_x.environment.capability_dim() as f64;
    let p = psi(&spec_x.team, &spec_x.weights, &spec_y.team, &spec_y.weights, false)?;
    let eps = transition_deviation_exact(
        &assemble_linear_mmdp(spec_x)?,
        &assemble_linear_mmdp(spec_y)?,
    )?;
    let mut c = BTreeMap::new();
    c.insert("d".into(), d);
    record_psi(&mut c, &p);
    c.insert("eps_p".into(), eps);
    Ok(BoundReport::new("transition_chain", c, d * p.value, eps))
}
