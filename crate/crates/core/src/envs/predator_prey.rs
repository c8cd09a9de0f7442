//! Predator Prey: predators with hit-point capabilities must jointly capture
//! prey whose health sets the capture threshold.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MultiAgentEnv;
use crate::error::{Error, Result};

pub const UP: usize = 0;
pub const LEFT: usize = 1;
pub const DOWN: usize = 2;
pub const RIGHT: usize = 3;
pub const NOOP: usize = 4;
pub const CAPTURE: usize = 5;
pub const PP_ACTIONS: usize = 6;

const CELL_EMPTY: u128 = 0;
const CELL_SELF: u128 = 1;
const CELL_PREDATOR: u128 = 2;
const CELL_PREY: u128 = 3;
const CELL_OUTSIDE: u128 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredatorPreyConfig {
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    pub predator_capabilities: Vec<u32>,
    pub prey_health: Vec<u32>,
    #[serde(default)]
    pub penalty: f64,
    #[serde(default = "default_capture_reward")]
    pub capture_reward: f64,
    #[serde(default = "default_episode_limit")]
    pub episode_limit: usize,
    #[serde(default = "default_prey_move_prob")]
    pub prey_move_prob: f64,
    /// Teammate and own capabilities enter the observation.
    #[serde(default)]
    pub capability_observable: bool,
    /// Window radius; the whole grid is visible when absent and `grid_size <= 5`,
    /// otherwise radius 2.
    #[serde(default)]
    pub view_radius: Option<usize>,
    #[serde(default = "default_max_capability")]
    pub max_capability: u32,
}

fn default_grid() -> usize {
    8
}
fn default_capture_reward() -> f64 {
    1.0
}
fn default_episode_limit() -> usize {
    100
}
fn default_prey_move_prob() -> f64 {
    0.7
}
fn default_max_capability() -> u32 {
    7
}

impl PredatorPreyConfig {
    /// 8×8 grid with the given teams and the standard constants.
    pub fn standard(predators: Vec<u32>, prey: Vec<u32>, penalty: f64) -> Self {
        Self {
            grid_size: 8,
            predator_capabilities: predators,
            prey_health: prey,
            penalty,
            capture_reward: 1.0,
            episode_limit: 100,
            prey_move_prob: 0.7,
            capability_observable: false,
            view_radius: None,
            max_capability: 7,
        }
    }

    pub fn num_predators(&self) -> usize {
        self.predator_capabilities.len()
    }

    pub fn num_prey(&self) -> usize {
        self.prey_health.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.grid_size == 0 || self.num_predators() == 0 || self.num_prey() == 0 {
            return bad("predator prey needs a grid, predators and prey".into());
        }
        if self.num_predators() + self.num_prey() > self.grid_size * self.grid_size {
            return bad(format!(
                "{} pieces do not fit on a {0}x{0} grid",
                self.num_predators() + self.num_prey()
            ));
        }
        if !(self.penalty <= 0.0) || !self.penalty.is_finite() {
            return bad(format!("penalty must be <= 0, got {}", self.penalty));
        }
        if !self.capture_reward.is_finite() {
            return bad("capture reward must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.prey_move_prob) {
            return bad(format!(
                "prey move probability {} outside [0,1]",
                self.prey_move_prob
            ));
        }
        if self.episode_limit == 0 {
            return bad("episode limit must be positive".into());
        }
        if let Some(c) = self
            .predator_capabilities
            .iter()
            .find(|&&c| c > self.max_capability)
        {
            return bad(format!(
                "capability {c} exceeds max_capability {}",
                self.max_capability
            ));
        }
        ObservationLayout::new(self).map(|_| ())
    }

    fn full_view(&self) -> bool {
        self.view_radius.is_none() && self.grid_size <= 5
    }

    fn radius(&self) -> usize {
        self.view_radius.unwrap_or(2)
    }
}

/// Mixed-radix layout of the integer observation key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub fields: Vec<(String, u128)>,
}

impl ObservationLayout {
    pub fn new(config: &PredatorPreyConfig) -> Result<Self> {
        let n = config.num_predators() as u128;
        let mut fields = vec![("agent_id".to_string(), n)];
        if config.full_view() {
            for c in 0..config.grid_size * config.grid_size {
                fields.push((format!("cell_{c}"), 4));
            }
        } else {
            let w = 2 * config.radius() + 1;
            for c in 0..w * w {
                fields.push((format!("view_{c}"), 5));
            }
        }
        if config.capability_observable {
            let radix = u128::from(config.max_capability) + 1;
            fields.push(("own_capability".into(), radix));
            for j in 1..config.num_predators() {
                fields.push((format!("teammate_{j}_capability"), radix));
            }
        }
        let layout = Self { fields };
        if layout.cardinality().is_none() {
            return Err(Error::InvalidArgument(
                "observation key does not fit in 128 bits; reduce view radius".into(),
            ));
        }
        Ok(layout)
    }

    /// Number of distinct keys, `None` on overflow.
    pub fn cardinality(&self) -> Option<u128> {
        self.fields
            .iter()
            .try_fold(1u128, |acc, (_, r)| acc.checked_mul(*r))
    }

    pub fn encode(&self, digits: &[u128]) -> u128 {
        debug_assert_eq!(digits.len(), self.fields.len());
        self.fields
            .iter()
            .zip(digits)
            .fold(0u128, |acc, ((_, r), d)| acc * r + d)
    }

    pub fn decode(&self, mut key: u128) -> Vec<u128> {
        let mut out = vec![0; self.fields.len()];
        for (slot, (_, r)) in out.iter_mut().zip(&self.fields).rev() {
            *slot = key % r;
            key /= r;
        }
        out
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observations: Vec<u128>,
    pub reward: f64,
    pub done: bool,
    pub captures: usize,
    pub failed_captures: usize,
}

#[derive(Serialize)]
struct TrajectoryRecord<'a> {
    t: usize,
    actions: &'a [usize],
    reward: f64,
    predators: &'a [usize],
    prey: &'a [usize],
}

pub struct PredatorPrey {
    config: PredatorPreyConfig,
    layout: ObservationLayout,
    rng: ChaCha8Rng,
    predators: Vec<usize>,
    prey: Vec<usize>,
    t: usize,
    log: Option<(PathBuf, BufWriter<File>)>,
}

impl std::fmt::Debug for PredatorPrey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PredatorPrey")
            .field("predators", &self.predators)
            .field("prey", &self.prey)
            .field("t", &self.t)
            .finish()
    }
}

pub fn build_predator_prey(config: &PredatorPreyConfig, seed: u64) -> Result<PredatorPrey> {
    PredatorPrey::new(config.clone(), seed)
}

impl PredatorPrey {
    pub fn new(config: PredatorPreyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = ObservationLayout::new(&config)?;
        let mut env = Self {
            layout,
            rng: ChaCha8Rng::seed_from_u64(seed),
            predators: Vec::new(),
            prey: Vec::new(),
            t: 0,
            log: None,
            config,
        };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &PredatorPreyConfig {
        &self.config
    }

    pub fn layout(&self) -> &ObservationLayout {
        &self.layout
    }

    pub fn predator_cells(&self) -> &[usize] {
        &self.predators
    }

    pub fn prey_cells(&self) -> &[usize] {
        &self.prey
    }

    pub fn time(&self) -> usize {
        self.t
    }

    /// Appends one JSON line per step to `path`.
    pub fn log_trajectory(&mut self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.log = Some((path.to_path_buf(), BufWriter::new(file)));
        Ok(())
    }

    /// Random placement on distinct cells.
    pub fn reset(&mut self) -> Vec<u128> {
        let g = self.config.grid_size;
        let mut cells: Vec<usize> = (0..g * g).collect();
        cells.shuffle(&mut self.rng);
        let np = self.config.num_predators();
        self.predators = cells[..np].to_vec();
        self.prey = cells[np..np + self.config.num_prey()].to_vec();
        self.t = 0;
        self.observations()
    }

    /// Places pieces explicitly.
    pub fn reset_to(&mut self, predators: Vec<usize>, prey: Vec<usize>) -> Result<Vec<u128>> {
        let cells = self.config.grid_size * self.config.grid_size;
        if predators.len() != self.config.num_predators() || prey.len() != self.config.num_prey() {
            return Err(Error::Dimension("piece counts do not match the config".into()));
        }
        let mut all: Vec<usize> = predators.iter().chain(&prey).copied().collect();
        if all.iter().any(|&c| c >= cells) {
            return Err(Error::InvalidArgument("piece outside the grid".into()));
        }
        all.sort_unstable();
        all.dedup();
        if all.len() != predators.len() + prey.len() {
            return Err(Error::InvalidArgument("pieces must occupy distinct cells".into()));
        }
        self.predators = predators;
        self.prey = prey;
        self.t = 0;
        Ok(self.observations())
    }

    fn neighbour(&self, cell: usize, dir: usize) -> Option<usize> {
        let g = self.config.grid_size;
        let (r, c) = (cell / g, cell % g);
        match dir {
            UP if r > 0 => Some(cell - g),
            LEFT if c > 0 => Some(cell - 1),
            DOWN if r + 1 < g => Some(cell + g),
            RIGHT if c + 1 < g => Some(cell + 1),
            _ => None,
        }
    }

    fn occupied(&self, cell: usize) -> bool {
        self.predators.contains(&cell) || self.prey.contains(&cell)
    }

    fn adjacent_prey(&self, cell: usize) -> Option<usize> {
        let near: Vec<usize> = (0..4).filter_map(|d| self.neighbour(cell, d)).collect();
        self.prey.iter().position(|p| near.contains(p))
    }

    /// Legal-action mask for one predator.
    pub fn available_actions(&self, agent: usize) -> [bool; PP_ACTIONS] {
        let cell = self.predators[agent];
        let mut mask = [false; PP_ACTIONS];
        for dir in [UP, LEFT, DOWN, RIGHT] {
            mask[dir] = self
                .neighbour(cell, dir)
                .is_some_and(|n| !self.occupied(n));
        }
        mask[NOOP] = true;
        mask[CAPTURE] = self.adjacent_prey(cell).is_some();
        mask
    }

    pub fn observations(&self) -> Vec<u128> {
        (0..self.config.num_predators())
            .map(|i| self.observe(i))
            .collect()
    }

    fn cell_code(&self, agent: usize, cell: usize) -> u128 {
        if self.predators[agent] == cell {
            CELL_SELF
        } else if self.predators.contains(&cell) {
            CELL_PREDATOR
        } else if self.prey.contains(&cell) {
            CELL_PREY
        } else {
            CELL_EMPTY
        }
    }

    fn observe(&self, agent: usize) -> u128 {
        let g = self.config.grid_size;
        let mut digits = Vec::with_capacity(self.layout.fields.len());
        digits.push(agent as u128);
        if self.config.full_view() {
            digits.extend((0..g * g).map(|c| self.cell_code(agent, c)));
        } else {
            let r = self.config.radius() as isize;
            let (ar, ac) = ((self.predators[agent] / g) as isize, (self.predators[agent] % g) as isize);
            for dr in -r..=r {
                for dc in -r..=r {
                    let (rr, cc) = (ar + dr, ac + dc);
                    let inside = (0..g as isize).contains(&rr) && (0..g as isize).contains(&cc);
                    digits.push(if inside {
                        self.cell_code(agent, rr as usize * g + cc as usize)
                    } else {
                        CELL_OUTSIDE
                    });
                }
            }
        }
        if self.config.capability_observable {
            let caps = &self.config.predator_capabilities;
            digits.push(u128::from(caps[agent]));
            digits.extend(
                (0..caps.len())
                    .filter(|&j| j != agent)
                    .map(|j| u128::from(caps[j])),
            );
        }
        self.layout.encode(&digits)
    }

    fn legal_prey_moves(&self, cell: usize) -> Vec<usize> {
        (0..4)
            .filter_map(|d| self.neighbour(cell, d))
            .filter(|&n| !self.occupied(n))
            .collect()
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        let np = self.config.num_predators();
        if actions.len() != np {
            return Err(Error::Dimension(format!(
                "{} actions for {np} predators",
                actions.len()
            )));
        }
        for (agent, &a) in actions.iter().enumerate() {
            if a >= PP_ACTIONS || !self.available_actions(agent)[a] {
                return Err(Error::UnavailableAction { agent, action: a });
            }
        }

        // captures resolve against positions at the start of the step
        let mut damage = vec![0u32; self.prey.len()];
        let mut attacked = vec![false; self.prey.len()];
        for (agent, &a) in actions.iter().enumerate() {
            if a == CAPTURE {
                let target = self
                    .adjacent_prey(self.predators[agent])
                    .expect("capture masked without adjacent prey");
                attacked[target] = true;
                damage[target] += self.config.predator_capabilities[agent];
            }
        }
        let mut reward = 0.0;
        let (mut captures, mut failed) = (0, 0);
        let mut captured = vec![false; self.prey.len()];
        for j in 0..self.prey.len() {
            if !attacked[j] {
                continue;
            }
            if damage[j] >= self.config.prey_health[j] {
                reward += self.config.capture_reward;
                captures += 1;
                captured[j] = true;
            } else {
                reward += self.config.penalty;
                failed += 1;
            }
        }
        const GONE: usize = usize::MAX;
        for j in 0..self.prey.len() {
            if captured[j] {
                self.prey[j] = GONE;
            }
        }

        for agent in 0..np {
            let a = actions[agent];
            if a < NOOP {
                if let Some(n) = self.neighbour(self.predators[agent], a) {
                    if !self.occupied(n) {
                        self.predators[agent] = n;
                    }
                }
            }
        }

        for j in 0..self.prey.len() {
            if self.prey[j] == GONE || self.config.prey_move_prob == 0.0 {
                continue;
            }
            if self.rng.gen::<f64>() < self.config.prey_move_prob {
                let moves = self.legal_prey_moves(self.prey[j]);
                if let Some(&n) = moves.choose(&mut self.rng) {
                    self.prey[j] = n;
                }
            }
        }

        let cells = self.config.grid_size * self.config.grid_size;
        for j in 0..self.prey.len() {
            if self.prey[j] == GONE {
                let empty: Vec<usize> = (0..cells).filter(|&c| !self.occupied(c)).collect();
                self.prey[j] = *empty.choose(&mut self.rng).expect("grid has a free cell");
            }
        }

        self.t += 1;
        let done = self.t >= self.config.episode_limit;
        if let Some((path, w)) = &mut self.log {
            let rec = TrajectoryRecord {
                t: self.t,
                actions,
                reward,
                predators: &self.predators,
                prey: &self.prey,
            };
            serde_json::to_writer(&mut *w, &rec)?;
            writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path.clone(), e))?;
        }
        Ok(StepOutcome {
            observations: self.observations(),
            reward,
            done,
            captures,
            failed_captures: failed,
        })
    }
}

impl MultiAgentEnv for PredatorPrey {
    fn num_agents(&self) -> usize {
        self.config.num_predators()
    }

    fn num_actions(&self) -> usize {
        PP_ACTIONS
    }

    fn reset(&mut self) -> Vec<u128> {
        PredatorPrey::reset(self)
    }

    fn available(&self, agent: usize) -> Vec<bool> {
        self.available_actions(agent).to_vec()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        PredatorPrey::step(self, actions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(preds: Vec<u32>, prey: Vec<u32>) -> PredatorPreyConfig {
        PredatorPreyConfig {
            grid_size: 4,
            prey_move_prob: 0.0,
            ..PredatorPreyConfig::standard(preds, prey, -0.5)
        }
    }

    #[test]
    fn single_predator_meets_threshold() {
        let mut env = PredatorPrey::new(small(vec![5], vec![5]), 0).unwrap();
        env.reset_to(vec![0], vec![1]).unwrap();
        let out = env.step(&[CAPTURE]).unwrap();
        assert_eq!(out.reward, 1.0);
        assert_eq!(out.captures, 1);
        assert_eq!(env.prey_cells().len(), 1);
    }

    #[test]
    fn weak_pair_pays_penalty() {
        let mut env = PredatorPrey::new(small(vec![1, 1], vec![5]), 0).unwrap();
        env.reset_to(vec![0, 2], vec![1]).unwrap();
        let out = env.step(&[CAPTURE, CAPTURE]).unwrap();
        assert_eq!(out.reward, -0.5);
        assert_eq!(out.failed_captures, 1);
        assert_eq!(env.prey_cells(), &[1]);
    }

    #[test]
    fn joint_capture_sums_capabilities() {
        let mut env = PredatorPrey::new(small(vec![2, 3], vec![5]), 0).unwrap();
        env.reset_to(vec![0, 2], vec![1]).unwrap();
        assert_eq!(env.step(&[CAPTURE, CAPTURE]).unwrap().reward, 1.0);
    }

    #[test]
    fn unavailable_action_named() {
        let mut env = PredatorPrey::new(small(vec![1], vec![1]), 0).unwrap();
        env.reset_to(vec![0], vec![15]).unwrap();
        match env.step(&[UP]) {
            Err(Error::UnavailableAction { agent, action }) => assert_eq!((agent, action), (0, UP)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            env.step(&[CAPTURE]),
            Err(Error::UnavailableAction { agent: 0, action: CAPTURE })
        ));
    }

    #[test]
    fn episode_ends_at_limit() {
        let mut cfg = small(vec![1], vec![1]);
        cfg.episode_limit = 3;
        let mut env = PredatorPrey::new(cfg, 1).unwrap();
        env.reset_to(vec![0], vec![15]).unwrap();
        assert!(!env.step(&[NOOP]).unwrap().done);
        assert!(!env.step(&[NOOP]).unwrap().done);
        assert!(env.step(&[NOOP]).unwrap().done);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = small(vec![1], vec![1]);
        cfg.penalty = 0.1;
        assert!(cfg.validate().is_err());
        let mut cfg = small(vec![1], vec![1]);
        cfg.prey_move_prob = 1.5;
        assert!(cfg.validate().is_err());
        let cfg = small(vec![9], vec![1]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn observation_layouts_differ_only_in_capability_fields() {
        let mut cfg = PredatorPreyConfig::standard(vec![1, 2, 1, 2], vec![2, 2, 2, 3], 0.0);
        let blind = ObservationLayout::new(&cfg).unwrap();
        cfg.capability_observable = true;
        let aware = ObservationLayout::new(&cfg).unwrap();
        assert_eq!(&aware.fields[..blind.fields.len()], &blind.fields[..]);
        let extra: Vec<&str> = aware.fields[blind.fields.len()..]
            .iter()
            .map(|(n, _)| n.as_str())
            .collect();
        assert_eq!(extra.len(), 4);
        assert!(extra.iter().all(|n| n.contains("capability")));
    }

    #[test]
    fn random_rollout_invariants() {
        let cfg = PredatorPreyConfig::standard(vec![1, 2, 1, 2], vec![2, 2, 2, 3], -0.25);
        let mut env = PredatorPrey::new(cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let actions: Vec<usize> = (0..4)
                .map(|i| {
                    let mask = env.available_actions(i);
                    let legal: Vec<usize> = (0..PP_ACTIONS).filter(|&a| mask[a]).collect();
                    *legal.choose(&mut rng).unwrap()
                })
                .collect();
            let out = env.step(&actions).unwrap();
            let expected =
                out.captures as f64 * 1.0 + out.failed_captures as f64 * -0.25;
            assert!((out.reward - expected).abs() < 1e-12);
            let mut cells: Vec<usize> = env
                .predator_cells()
                .iter()
                .chain(env.prey_cells())
                .copied()
                .collect();
            cells.sort_unstable();
            cells.dedup();
            assert_eq!(cells.len(), 8);
            assert_eq!(env.prey_cells().len(), 4);
            if out.done {
                env.reset();
            }
        }
    }

    #[test]
    fn seed_determinism() {
        let cfg = PredatorPreyConfig::standard(vec![1, 2, 1, 2], vec![2, 2, 2, 3], 0.0);
        let run = |seed| {
            let mut env = PredatorPrey::new(cfg.clone(), seed).unwrap();
            let mut trace = Vec::new();
            for _ in 0..50 {
                let out = env.step(&[NOOP; 4]).unwrap();
                trace.push((out.observations, env.prey_cells().to_vec()));
            }
            trace
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn trajectory_log_writes_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.jsonl");
        let mut env = PredatorPrey::new(small(vec![1], vec![1]), 2).unwrap();
        env.log_trajectory(&path).unwrap();
        for _ in 0..4 {
            env.step(&[NOOP]).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["t"], 1);
    }

    proptest! {
        #[test]
        fn masks_match_geometry(seed in 0u64..500) {
            let cfg = PredatorPreyConfig {
                grid_size: 4,
                ..PredatorPreyConfig::standard(vec![1, 2, 3], vec![2, 2, 2], 0.0)
            };
            let env = PredatorPrey::new(cfg, seed).unwrap();
            let g = 4usize;
            let taken: Vec<usize> = env.predator_cells().iter().chain(env.prey_cells()).copied().collect();
            for agent in 0..3 {
                let cell = env.predator_cells()[agent];
                let (r, c) = ((cell / g) as i64, (cell % g) as i64);
                let mask = env.available_actions(agent);
                let deltas = [(-1, 0), (0, -1), (1, 0), (0, 1)];
                let mut any_prey = false;
                for (dir, (dr, dc)) in deltas.iter().enumerate() {
                    let (rr, cc) = (r + dr, c + dc);
                    let inside = (0..4).contains(&rr) && (0..4).contains(&cc);
                    let target = (rr * 4 + cc) as usize;
                    prop_assert_eq!(mask[dir], inside && !taken.contains(&target));
                    any_prey |= inside && env.prey_cells().contains(&target);
                }
                prop_assert!(mask[NOOP]);
                prop_assert_eq!(mask[CAPTURE], any_prey);
            }
        }

        #[test]
        fn observation_key_round_trips(seed in 0u64..200) {
            let mut cfg = PredatorPreyConfig::standard(vec![1, 2, 1, 2], vec![2, 2, 2, 3], 0.0);
            cfg.capability_observable = true;
            let env = PredatorPrey::new(cfg, seed).unwrap();
            for (i, key) in env.observations().into_iter().enumerate() {
                let digits = env.layout().decode(key);
                prop_assert_eq!(digits[0], i as u128);
                prop_assert_eq!(env.layout().encode(&digits), key);
            }
        }
    }
}
