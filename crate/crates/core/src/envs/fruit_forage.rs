//! Fruit Forage: agents walk a grid and collect fruit from one tree per fruit
//! type; each type pays the team its capability-weighted utility once.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    InfluenceWeights, LinearMMDPSpec, RewardKernel, SharedDynamics, TeamComposition,
    TransitionKernel,
};
use crate::error::{Error, Result};
use crate::mdp::{decode_joint_action, joint_action_count, StateSpace, TransitionTable};

/// Agent actions: up, down, left, right, stay.
pub const FORAGE_ACTIONS: usize = 5;

/// Default cap on enumerated states for exact builds.
pub const DEFAULT_STATE_CAP: usize = 200_000;

/// Reference team `T_x`.
pub const T_X: [[f64; 4]; 4] = [
    [0.05, 0.1, 0.6, 2.8],
    [0.05, 0.1, 2.1, 0.8],
    [0.05, 0.1, 1.8, 1.2],
    [0.05, 0.1, 0.9, 2.4],
];

/// Reference team `T_y`.
pub const T_Y: [[f64; 4]; 4] = [
    [0.7, 0.4, 0.15, 0.2],
    [0.2, 1.4, 0.15, 0.2],
    [0.3, 1.2, 0.15, 0.2],
    [0.6, 0.6, 0.15, 0.2],
];

/// Reference team `T_z`.
pub const T_Z: [[f64; 4]; 4] = [
    [0.1, 0.3, 0.6, 0.0],
    [0.4, 0.1, 0.5, 0.0],
    [0.05, 0.06, 0.89, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// Team built from the first `n` rows of a reference composition.
pub fn reference_team(rows: &[[f64; 4]; 4], n: usize) -> Result<TeamComposition> {
    if n == 0 || n > 4 {
        return Err(Error::InvalidArgument(format!(
            "reference teams have 1 to 4 members, asked for {n}"
        )));
    }
    TeamComposition::from_rows(rows[..n].iter().map(|r| r.to_vec()).collect())
}

/// Tree life cycle. A tree pays out in the step it turns `Fresh`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum TreeStatus {
    Standing = 0,
    Fresh = 1,
    Consumed = 2,
}

impl TreeStatus {
    fn from_digit(x: usize) -> Self {
        match x {
            0 => TreeStatus::Standing,
            1 => TreeStatus::Fresh,
            _ => TreeStatus::Consumed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FruitForageConfig {
    pub grid_size: usize,
    pub num_agents: usize,
    pub team: TeamComposition,
    /// Uniform when absent.
    #[serde(default)]
    pub weights: Option<InfluenceWeights>,
    pub gamma: f64,
    /// `(row, col)` of the tree for each fruit type; corners when absent.
    #[serde(default)]
    pub tree_positions: Option<Vec<[usize; 2]>>,
    /// `(row, col)` start cell per agent; the non-tree cells nearest the centre when absent.
    #[serde(default)]
    pub start_positions: Option<Vec<[usize; 2]>>,
    #[serde(default = "default_state_cap")]
    pub state_cap: usize,
}

fn default_state_cap() -> usize {
    DEFAULT_STATE_CAP
}

impl FruitForageConfig {
    /// 4×4 grid, two agents, first two members of `team`, γ = 0.9.
    pub fn desk(rows: &[[f64; 4]; 4]) -> Self {
        Self {
            grid_size: 4,
            num_agents: 2,
            team: reference_team(rows, 2).expect("two reference members"),
            weights: None,
            gamma: 0.9,
            tree_positions: None,
            start_positions: None,
            state_cap: DEFAULT_STATE_CAP,
        }
    }

    /// Full-size 8×8 grid with four agents (simulation only).
    pub fn full(rows: &[[f64; 4]; 4]) -> Self {
        Self {
            grid_size: 8,
            num_agents: 4,
            team: reference_team(rows, 4).expect("four reference members"),
            ..Self::desk(rows)
        }
    }

    pub fn num_fruit_types(&self) -> usize {
        self.team.dim()
    }

    pub fn weights(&self) -> InfluenceWeights {
        self.weights
            .clone()
            .unwrap_or_else(|| InfluenceWeights::uniform(self.team.len()))
    }
}

/// Static map of a validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ForageLayout {
    pub grid_size: usize,
    pub num_agents: usize,
    pub trees: Vec<usize>,
    pub starts: Vec<usize>,
}

/// Agent cells plus tree statuses.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ForageState {
    pub positions: Vec<usize>,
    pub status: Vec<TreeStatus>,
}

impl ForageLayout {
    pub fn new(config: &FruitForageConfig) -> Result<Self> {
        let g = config.grid_size;
        let d = config.num_fruit_types();
        if g == 0 || config.num_agents == 0 {
            return Err(Error::InvalidArgument(
                "fruit forage needs a nonempty grid and at least one agent".into(),
            ));
        }
        let cell = |[r, c]: [usize; 2], what: &str| -> Result<usize> {
            if r >= g || c >= g {
                return Err(Error::InvalidArgument(format!(
                    "{what} ({r},{c}) lies outside the {g}x{g} grid"
                )));
            }
            Ok(r * g + c)
        };
        let trees: Vec<usize> = match &config.tree_positions {
            Some(ps) => ps.iter().map(|&p| cell(p, "tree")).collect::<Result<_>>()?,
            None => {
                let corners = [0, g - 1, (g - 1) * g, g * g - 1];
                let mut uniq = corners.to_vec();
                uniq.dedup();
                if d > uniq.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{d} fruit types need explicit tree positions on a {g}x{g} grid"
                    )));
                }
                uniq[..d].to_vec()
            }
        };
        if trees.len() != d {
            return Err(Error::Dimension(format!(
                "{} tree positions for {d} fruit types",
                trees.len()
            )));
        }
        let mut sorted = trees.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != trees.len() {
            return Err(Error::InvalidArgument("tree positions must be distinct".into()));
        }
        let starts = match &config.start_positions {
            Some(ps) => {
                if ps.len() != config.num_agents {
                    return Err(Error::Dimension(format!(
                        "{} start positions for {} agents",
                        ps.len(),
                        config.num_agents
                    )));
                }
                ps.iter().map(|&p| cell(p, "start")).collect::<Result<_>>()?
            }
            None => {
                let centre = (g as f64 - 1.0) / 2.0;
                let mut free: Vec<usize> = (0..g * g).filter(|c| !trees.contains(c)).collect();
                if free.is_empty() {
                    free = (0..g * g).collect();
                }
                free.sort_by(|&a, &b| {
                    let dist = |c: usize| {
                        let (r, k) = ((c / g) as f64, (c % g) as f64);
                        (r - centre).powi(2) + (k - centre).powi(2)
                    };
                    dist(a).total_cmp(&dist(b)).then(a.cmp(&b))
                });
                (0..config.num_agents).map(|i| free[i % free.len()]).collect()
            }
        };
        Ok(Self {
            grid_size: g,
            num_agents: config.num_agents,
            trees,
            starts,
        })
    }

    pub fn num_fruit_types(&self) -> usize {
        self.trees.len()
    }

    pub fn num_cells(&self) -> usize {
        self.grid_size * self.grid_size
    }

    /// `(g²)^n · 3^d`, or `None` on overflow.
    pub fn num_states(&self) -> Option<usize> {
        let pos = self.num_cells().checked_pow(self.num_agents as u32)?;
        pos.checked_mul(3usize.checked_pow(self.num_fruit_types() as u32)?)
    }

    pub fn initial_state(&self) -> ForageState {
        ForageState {
            positions: self.starts.clone(),
            status: vec![TreeStatus::Standing; self.num_fruit_types()],
        }
    }

    /// Cell reached by one agent action; moves off the grid leave the agent in place.
    pub fn move_cell(&self, cell: usize, action: usize) -> usize {
        let g = self.grid_size;
        let (r, c) = (cell / g, cell % g);
        match action {
            0 if r > 0 => cell - g,
            1 if r + 1 < g => cell + g,
            2 if c > 0 => cell - 1,
            3 if c + 1 < g => cell + 1,
            _ => cell,
        }
    }

    /// Deterministic successor: fresh trees are consumed, agents move, and any
    /// standing tree under an agent becomes fresh.
    pub fn step(&self, state: &ForageState, actions: &[usize]) -> ForageState {
        let positions: Vec<usize> = state
            .positions
            .iter()
            .zip(actions)
            .map(|(&p, &a)| self.move_cell(p, a))
            .collect();
        let status = state
            .status
            .iter()
            .zip(&self.trees)
            .map(|(&st, tree)| match st {
                TreeStatus::Fresh | TreeStatus::Consumed => TreeStatus::Consumed,
                TreeStatus::Standing if positions.contains(tree) => TreeStatus::Fresh,
                TreeStatus::Standing => TreeStatus::Standing,
            })
            .collect();
        ForageState { positions, status }
    }

    /// Mixed-radix index: agent cells (agent 0 most significant) then tree digits.
    pub fn encode(&self, state: &ForageState) -> usize {
        let cells = self.num_cells();
        let mut idx = 0;
        for &p in &state.positions {
            idx = idx * cells + p;
        }
        for &st in &state.status {
            idx = idx * 3 + st as usize;
        }
        idx
    }

    pub fn decode(&self, mut index: usize) -> ForageState {
        let d = self.num_fruit_types();
        let mut status = vec![TreeStatus::Standing; d];
        for slot in status.iter_mut().rev() {
            *slot = TreeStatus::from_digit(index % 3);
            index /= 3;
        }
        let cells = self.num_cells();
        let mut positions = vec![0; self.num_agents];
        for slot in positions.iter_mut().rev() {
            *slot = index % cells;
            index /= cells;
        }
        ForageState { positions, status }
    }

    /// Normalized agent coordinates, then fresh bits, then consumed bits.
    pub fn features(&self, state: &ForageState) -> Vec<f64> {
        let g = self.grid_size;
        let scale = if g > 1 { (g - 1) as f64 } else { 1.0 };
        let mut f = Vec::with_capacity(self.feature_dim());
        for &p in &state.positions {
            f.push((p / g) as f64 / scale);
            f.push((p % g) as f64 / scale);
        }
        f.extend(state.status.iter().map(|&s| f64::from(u8::from(s == TreeStatus::Fresh))));
        f.extend(
            state
                .status
                .iter()
                .map(|&s| f64::from(u8::from(s == TreeStatus::Consumed))),
        );
        f
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.num_agents + 2 * self.num_fruit_types()
    }

    /// `W_R`: row j reads the fresh bit of tree j.
    pub fn reward_kernel(&self) -> Result<RewardKernel> {
        let d = self.num_fruit_types();
        let k = self.feature_dim();
        let rows = (0..d)
            .map(|j| {
                let mut row = vec![0.0; k];
                row[2 * self.num_agents + j] = 1.0;
                row
            })
            .collect();
        RewardKernel::new(rows)
    }
}

/// Exact environment shared by all teams on one configuration.
pub fn fruit_forage_environment(config: &FruitForageConfig) -> Result<Arc<SharedDynamics>> {
    let layout = ForageLayout::new(config)?;
    let size = layout.num_states().unwrap_or(usize::MAX);
    if size > config.state_cap {
        return Err(Error::StateSpaceTooLarge {
            size,
            cap: config.state_cap,
        });
    }
    let joint = joint_action_count(layout.num_agents, FORAGE_ACTIONS)
        .ok_or_else(|| Error::InvalidArgument("joint action count overflows".into()))?;
    let actions: Vec<Vec<usize>> = (0..joint)
        .map(|u| decode_joint_action(u, layout.num_agents, FORAGE_ACTIONS))
        .collect();
    let mut next = Vec::with_capacity(size * joint);
    let mut features = Vec::with_capacity(size * layout.feature_dim());
    for s in 0..size {
        let state = layout.decode(s);
        features.extend(layout.features(&state));
        for a in &actions {
            next.push(layout.encode(&layout.step(&state, a)));
        }
    }
    let table = TransitionTable::deterministic(size, joint, next)?;
    let mut rho = vec![0.0; size];
    rho[layout.encode(&layout.initial_state())] = 1.0;
    Ok(Arc::new(SharedDynamics {
        states: StateSpace::from_flat(layout.feature_dim(), features)?,
        reward_kernel: layout.reward_kernel()?,
        transition_kernel: TransitionKernel::Shared {
            table: Arc::new(table),
        },
        num_agents: layout.num_agents,
        actions_per_agent: FORAGE_ACTIONS,
        gamma: config.gamma,
        rho,
    }))
}

/// Exact linear spec for the configured team (capabilities need not lie on the simplex).
pub fn build_fruit_forage(config: &FruitForageConfig) -> Result<LinearMMDPSpec> {
    let env = fruit_forage_environment(config)?;
    Ok(LinearMMDPSpec::new(config.team.clone(), config.weights(), env)?.relaxed())
}

/// Step-based simulator for configurations too large to enumerate.
#[derive(Debug, Clone)]
pub struct FruitForageSim {
    layout: ForageLayout,
    mixture: Vec<f64>,
    state: ForageState,
}

impl FruitForageSim {
    pub fn new(config: &FruitForageConfig) -> Result<Self> {
        let layout = ForageLayout::new(config)?;
        let mixture = config.team.weighted_sum(&config.weights())?;
        let state = layout.initial_state();
        Ok(Self {
            layout,
            mixture,
            state,
        })
    }

    pub fn layout(&self) -> &ForageLayout {
        &self.layout
    }

    pub fn state(&self) -> &ForageState {
        &self.state
    }

    pub fn reset(&mut self) -> &ForageState {
        self.state = self.layout.initial_state();
        &self.state
    }

    /// Advances one step and returns the reward of the new state.
    pub fn step(&mut self, actions: &[usize]) -> Result<f64> {
        if actions.len() != self.layout.num_agents {
            return Err(Error::Dimension(format!(
                "{} actions for {} agents",
                actions.len(),
                self.layout.num_agents
            )));
        }
        if let Some(i) = actions.iter().position(|&a| a >= FORAGE_ACTIONS) {
            return Err(Error::UnavailableAction {
                agent: i,
                action: actions[i],
            });
        }
        self.state = self.layout.step(&self.state, actions);
        Ok(self
            .state
            .status
            .iter()
            .zip(&self.mixture)
            .filter(|(s, _)| **s == TreeStatus::Fresh)
            .map(|(_, m)| m)
            .sum())
    }

    pub fn done(&self) -> bool {
        self.state.status.iter().all(|&s| s == TreeStatus::Consumed)
    }
}
