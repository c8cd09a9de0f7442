//! Train/test composition splits for the Predator Prey generalization experiments.

use serde::{Deserialize, Serialize};

/// One predator team at one miscoordination penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PPTask {
    pub predators: Vec<u32>,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuite {
    pub name: String,
    pub prey_health: Vec<u32>,
    pub train_teams: Vec<Vec<u32>>,
    pub test_teams: Vec<Vec<u32>>,
    pub penalties: Vec<f64>,
    /// `(train team, test team)` compared for the generalization gap.
    pub gap_pair: (Vec<u32>, Vec<u32>),
}

impl TaskSuite {
    /// Lowercase identifier usable in file names, e.g. `unseen_team_agent`.
    pub fn slug(&self) -> String {
        let name = self.name.strip_prefix("PP ").unwrap_or(&self.name);
        let mut out = String::new();
        for ch in name.chars() {
            if ch.is_ascii_alphanumeric() {
                out.push(ch.to_ascii_lowercase());
            } else if !out.ends_with('_') {
                out.push('_');
            }
        }
        out.trim_matches('_').to_string()
    }

    fn expand(&self, teams: &[Vec<u32>]) -> Vec<PPTask> {
        teams
            .iter()
            .flat_map(|t| {
                self.penalties.iter().map(move |&p| PPTask {
                    predators: t.clone(),
                    penalty: p,
                })
            })
            .collect()
    }

    pub fn train_tasks(&self) -> Vec<PPTask> {
        self.expand(&self.train_teams)
    }

    pub fn test_tasks(&self) -> Vec<PPTask> {
        self.expand(&self.test_teams)
    }
}

pub const UNSEEN_TEAM: &str = "PP Unseen Team";
pub const UNSEEN_TEAM_AGENT: &str = "PP Unseen Team, Agent";

pub fn pp_task_suites() -> Vec<TaskSuite> {
    vec![
        TaskSuite {
            name: UNSEEN_TEAM.into(),
            prey_health: vec![2, 2, 2, 3],
            train_teams: vec![vec![2, 3, 2, 3], vec![1, 2, 1, 2]],
            test_teams: vec![vec![1, 1, 2, 3], vec![1, 1, 1, 3]],
            penalties: vec![0.0, -0.008],
            gap_pair: (vec![1, 2, 1, 2], vec![1, 1, 1, 3]),
        },
        TaskSuite {
            name: UNSEEN_TEAM_AGENT.into(),
            prey_health: vec![1, 2, 3, 4],
            train_teams: vec![vec![1, 2, 2, 3], vec![1, 1, 2, 2], vec![1, 3, 2, 1]],
            test_teams: vec![vec![1, 1, 1, 4], vec![1, 1, 3, 4], vec![1, 1, 2, 4]],
            penalties: vec![0.0, -0.008],
            gap_pair: (vec![1, 3, 2, 1], vec![1, 1, 1, 4]),
        },
    ]
}
