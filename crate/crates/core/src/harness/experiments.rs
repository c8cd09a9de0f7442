use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use super::generator::{GeneratorParams, IntRange};
use super::instance::{BoundInstance, BoundKind};
use super::output::{determinism_hash, emit_results, sort_rows, write_atomic, ResultRow};
use crate::bounds::{
    bound_policy_transfer, bound_population_change, bound_team_generalization, BoundOptions,
    BoundReport, PopulationChange,
};
use crate::dynamics::{assemble_linear_mmdp, InfluenceWeights, LinearMMDPSpec};
use crate::envs::{
    reference_team, fruit_forage_environment, pp_task_suites, FruitForageConfig, TaskSuite, T_X,
    T_Y, T_Z,
};
use crate::error::{Error, Result};
use crate::learning::{
    evaluate_policy_empirical, evaluate_snapshots, generalization_gap, joint_q_learning,
    q_learning_train, ObservationMode, PPBuilder, TrainSchedule,
};
use crate::mdp::policy_evaluation;
use crate::seeding::derive_seed;

/// A bound that failed, with enough data to recompute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub experiment: String,
    pub instance: usize,
    pub kind: Option<BoundKind>,
    pub report: BoundReport,
    pub options: BoundOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_instance: Option<BoundInstance>,
}

/// Extra file written next to the results.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub file_name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub experiment: ExperimentKind,
    pub rows: Vec<ResultRow>,
    pub violations: Vec<Violation>,
    pub artifacts: Vec<Artifact>,
    pub determinism_hash: String,
}

impl ExperimentOutcome {
    fn new(
        experiment: ExperimentKind,
        mut rows: Vec<ResultRow>,
        violations: Vec<Violation>,
        artifacts: Vec<Artifact>,
    ) -> Self {
        sort_rows(&mut rows);
        let determinism_hash = determinism_hash(&rows);
        Self {
            experiment,
            rows,
            violations,
            artifacts,
            determinism_hash,
        }
    }
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn options(config: &ExperimentConfig) -> BoundOptions {
    BoundOptions {
        solver: config.solver,
        minimize_over_permutations: config.minimize_over_permutations,
    }
}

fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs the configured experiment on `jobs` worker threads (0 picks the core count).
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutcome> {
    config.validate()?;
    match config.experiment {
        ExperimentKind::VerifyBounds => in_pool(jobs, || verify_bounds(config))?,
        ExperimentKind::Sweep => in_pool(jobs, || sweep(config))?,
        ExperimentKind::FruitForage => fruit_forage(config),
        ExperimentKind::PredatorPrey => in_pool(jobs, || predator_prey(config))?,
    }
}

type InstanceRows = (Vec<ResultRow>, Vec<Violation>);

fn certify_instances(
    config: &ExperimentConfig,
    params: &GeneratorParams,
    master_seed: u64,
    instance_offset: usize,
    extra: &BTreeMap<String, f64>,
) -> Result<InstanceRows> {
    let experiment = config.experiment.as_str();
    let hash = config.short_hash();
    let opts = options(config);
    let kinds = config.bound_kinds();
    let per_instance: Vec<InstanceRows> = (0..params.count)
        .into_par_iter()
        .map(|i| -> Result<InstanceRows> {
            let inst = BoundInstance::generate(params, master_seed, i)?;
            let mut rows = Vec::with_capacity(kinds.len());
            let mut violations = Vec::new();
            for &kind in &kinds {
                let t = Instant::now();
                let report = inst.evaluate(kind, &opts)?;
                let mut row = ResultRow::from_report(
                    experiment,
                    config.seed,
                    instance_offset + i,
                    &report,
                    &hash,
                    elapsed_ms(t),
                );
                row.constituents.extend(extra.iter().map(|(k, v)| (k.clone(), *v)));
                if !report.satisfied {
                    violations.push(Violation {
                        experiment: experiment.into(),
                        instance: instance_offset + i,
                        kind: Some(kind),
                        report,
                        options: opts,
                        bound_instance: Some(inst.clone()),
                    });
                }
                rows.push(row);
            }
            Ok((rows, violations))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for (r, v) in per_instance {
        rows.extend(r);
        violations.extend(v);
    }
    Ok((rows, violations))
}

fn verify_bounds(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let (rows, violations) =
        certify_instances(config, &config.generator, config.seed, 0, &BTreeMap::new())?;
    Ok(ExperimentOutcome::new(
        config.experiment,
        rows,
        violations,
        Vec::new(),
    ))
}

fn sweep(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    let mut cell = 0usize;
    for &gamma in &config.sweep.gammas {
        for &size in &config.sweep.state_sizes {
            let params = GeneratorParams {
                gamma,
                states: IntRange::new(size, size),
                ..config.generator.clone()
            };
            let extra = BTreeMap::from([
                ("sweep_gamma".to_string(), gamma),
                ("sweep_states".to_string(), size as f64),
            ]);
            let (r, v) = certify_instances(
                config,
                &params,
                derive_seed(config.seed, cell as u64),
                cell * params.count,
                &extra,
            )?;
            rows.extend(r);
            violations.extend(v);
            cell += 1;
        }
    }
    Ok(ExperimentOutcome::new(
        config.experiment,
        rows,
        violations,
        Vec::new(),
    ))
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv buffer: {e}")))
}

/// The three reference comparisons on a shared Fruit Forage environment.
pub struct ForageComparisons {
    pub x: LinearMMDPSpec,
    pub y: LinearMMDPSpec,
    pub z: LinearMMDPSpec,
}

pub fn forage_specs(config: &ExperimentConfig) -> Result<ForageComparisons> {
    let p = &config.fruit_forage;
    let base = FruitForageConfig {
        grid_size: p.grid_size,
        num_agents: p.num_agents,
        gamma: p.gamma,
        state_cap: p.state_cap,
        ..FruitForageConfig::desk(&T_X)
    };
    let base = FruitForageConfig {
        team: reference_team(&T_X, p.num_agents)?,
        ..base
    };
    let env = fruit_forage_environment(&base)?;
    let mk = |rows: &[[f64; 4]; 4]| -> Result<LinearMMDPSpec> {
        Ok(LinearMMDPSpec::new(
            reference_team(rows, p.num_agents)?,
            InfluenceWeights::uniform(p.num_agents),
            env.clone(),
        )?
        .relaxed())
    };
    Ok(ForageComparisons {
        x: mk(&T_X)?,
        y: mk(&T_Y)?,
        z: mk(&T_Z)?,
    })
}

fn fruit_forage(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let experiment = config.experiment.as_str();
    let hash = config.short_hash();
    let opts = options(config);
    let specs = forage_specs(config)?;
    let timed = |f: &dyn Fn() -> Result<BoundReport>| -> Result<(BoundReport, f64)> {
        let t = Instant::now();
        Ok((f()?, elapsed_ms(t)))
    };
    let reports = [
        ("team_generalization", timed(&|| bound_team_generalization(&specs.x, &specs.y, &opts))?),
        ("policy_transfer", timed(&|| bound_policy_transfer(&specs.x, &specs.y, &opts))?),
        (
            "population_remove",
            timed(&|| bound_population_change(&specs.z, &PopulationChange::RemoveLast, &opts))?,
        ),
    ];
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    let mut fig = Vec::new();
    for (i, (label, (report, ms))) in reports.iter().enumerate() {
        rows.push(ResultRow::from_report(experiment, config.seed, i, report, &hash, *ms));
        fig.push(vec![
            label.to_string(),
            "0".into(),
            "optimal".into(),
            report.bound_value.to_string(),
            report.actual_value.to_string(),
        ]);
        if !report.satisfied {
            violations.push(Violation {
                experiment: experiment.into(),
                instance: i,
                kind: None,
                report: report.clone(),
                options: opts,
                bound_instance: None,
            });
        }
    }

    let p = &config.fruit_forage;
    if p.learning_steps > 0 {
        let schedule = TrainSchedule {
            total_steps: p.learning_steps,
            eval_interval: p.checkpoint_interval,
            epsilon_anneal_steps: p.learning_steps / 4,
            learning_rate: 0.5,
            ..TrainSchedule::default()
        };
        let mx = assemble_linear_mmdp(&specs.x)?;
        let my = assemble_linear_mmdp(&specs.y)?;
        let mz = assemble_linear_mmdp(&specs.z)?;
        let mzm = assemble_linear_mmdp(&specs.z.without_last_member()?)?;
        let learn = |m, i| joint_q_learning(m, &schedule, p.episode_horizon, derive_seed(config.seed, i));
        let (sx, sy, sz, szm) = (learn(&mx, 0)?, learn(&my, 1)?, learn(&mz, 2)?, learn(&mzm, 3)?);
        let vx = evaluate_snapshots(&mx, &sx, &opts.solver)?;
        let vy = evaluate_snapshots(&my, &sy, &opts.solver)?;
        let vz = evaluate_snapshots(&mz, &sz, &opts.solver)?;
        let vzm = evaluate_snapshots(&mzm, &szm, &opts.solver)?;
        for (k, snap) in sy.iter().enumerate() {
            let step = snap.step.to_string();
            let transfer = policy_evaluation(&mx, &snap.policy, &opts.solver)?.scalar;
            let curves = [
                ("team_generalization", (vx[k].1 - vy[k].1).abs()),
                ("policy_transfer", vx[k].1 - transfer),
                ("population_remove", (vzm[k].1 - vz[k].1).abs()),
            ];
            for (j, (label, actual)) in curves.into_iter().enumerate() {
                fig.push(vec![
                    label.to_string(),
                    step.clone(),
                    "learned".into(),
                    reports[j].1 .0.bound_value.to_string(),
                    actual.to_string(),
                ]);
            }
        }
    }
    let artifacts = vec![Artifact {
        file_name: "forage_curve.csv".into(),
        bytes: csv_bytes(&["name", "step", "source", "bound_value", "actual_value"], &fig)?,
    }];
    Ok(ExperimentOutcome::new(
        config.experiment,
        rows,
        violations,
        artifacts,
    ))
}

fn selected_suites(config: &ExperimentConfig) -> Result<Vec<TaskSuite>> {
    let all = pp_task_suites();
    let wanted = &config.predator_prey.suites;
    if wanted.is_empty() {
        return Ok(all);
    }
    wanted
        .iter()
        .map(|w| {
            all.iter()
                .find(|s| &s.name == w || s.slug() == *w)
                .cloned()
                .ok_or_else(|| Error::Config(format!("predator_prey.suites: unknown suite {w:?}")))
        })
        .collect()
}

struct PPRun {
    suite: usize,
    mode: ObservationMode,
    rows: Vec<ResultRow>,
    curve: Vec<Vec<String>>,
    qtable: Vec<u8>,
}

fn predator_prey(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let experiment = config.experiment.as_str();
    let hash = config.short_hash();
    let params = &config.predator_prey;
    let suites = selected_suites(config)?;
    let modes = [ObservationMode::CapabilityAware, ObservationMode::CapabilityBlind];
    let jobs: Vec<(usize, ObservationMode)> = (0..suites.len())
        .flat_map(|s| modes.iter().map(move |&m| (s, m)))
        .collect();
    let runs: Vec<PPRun> = jobs
        .par_iter()
        .map(|&(si, mode)| -> Result<PPRun> {
            let suite = &suites[si];
            let t = Instant::now();
            let base = params.base_config(suite.prey_health.clone());
            let train = PPBuilder {
                base: base.clone(),
                tasks: suite.train_tasks(),
            };
            let test = PPBuilder {
                base: base.clone(),
                tasks: suite.test_tasks(),
            };
            // both modes share the training seed so they see the same task stream
            let seed = derive_seed(config.seed, si as u64);
            let out = q_learning_train(&train, &params.schedule, mode, seed)?;
            let eval_seed = derive_seed(seed, 1);
            let tr = evaluate_policy_empirical(&out.qtable, &train, mode, params.eval_episodes, eval_seed)?;
            let te = evaluate_policy_empirical(&out.qtable, &test, mode, params.eval_episodes, eval_seed)?;
            let ms = elapsed_ms(t);
            let instance = si * modes.len() + modes.iter().position(|&m| m == mode).unwrap_or(0);
            let prefix = format!("{}/{}", suite.slug(), mode.label());
            let stats = |report: &crate::learning::EvalReport| {
                let mut c = BTreeMap::new();
                for ts in &report.per_task {
                    c.insert(format!("task{}_mean", ts.task), ts.mean);
                    c.insert(format!("task{}_std", ts.task), ts.std);
                }
                c.insert("episodes".into(), params.eval_episodes as f64);
                c
            };
            let mut rows = vec![
                ResultRow::measurement(experiment, config.seed, instance, format!("{prefix}/train_return"), tr.pooled_mean, stats(&tr), &hash, ms),
                ResultRow::measurement(experiment, config.seed, instance, format!("{prefix}/test_return"), te.pooled_mean, stats(&te), &hash, ms),
            ];
            for &penalty in &suite.penalties {
                let mk = |team: &Vec<u32>| crate::envs::PPTask {
                    predators: team.clone(),
                    penalty,
                };
                let gap = generalization_gap(
                    &out.qtable,
                    &base,
                    &mk(&suite.gap_pair.0),
                    &mk(&suite.gap_pair.1),
                    mode,
                    params.eval_episodes,
                    eval_seed,
                )?;
                let c = BTreeMap::from([
                    ("penalty".to_string(), penalty),
                    ("train_team_hp".to_string(), suite.gap_pair.0.iter().sum::<u32>() as f64),
                    ("test_team_hp".to_string(), suite.gap_pair.1.iter().sum::<u32>() as f64),
                ]);
                rows.push(ResultRow::measurement(experiment, config.seed, instance, format!("{prefix}/generalization_gap"), gap, c, &hash, ms));
            }
            let curve = out
                .curve
                .iter()
                .map(|p| {
                    vec![
                        suite.slug(),
                        mode.label().to_string(),
                        p.step.to_string(),
                        p.mean_return.to_string(),
                    ]
                })
                .collect();
            Ok(PPRun {
                suite: si,
                mode,
                rows,
                curve,
                qtable: out.qtable.to_bytes()?,
            })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut curve = Vec::new();
    let mut artifacts = Vec::new();
    for run in runs {
        rows.extend(run.rows);
        curve.extend(run.curve);
        artifacts.push(Artifact {
            file_name: format!("qtable_{}_{}.bin", suites[run.suite].slug(), run.mode.label()),
            bytes: run.qtable,
        });
    }
    artifacts.insert(
        0,
        Artifact {
            file_name: "curve.csv".into(),
            bytes: csv_bytes(&["suite", "mode", "step", "mean_return"], &curve)?,
        },
    );
    Ok(ExperimentOutcome::new(
        config.experiment,
        rows,
        Vec::new(),
        artifacts,
    ))
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'a str,
    config_hash: String,
    rows: usize,
    violations: usize,
    determinism_hash: &'a str,
}

/// Writes `<out>/<experiment>/<config-hash>/` with results, config snapshot,
/// violations (when any), artifacts and a summary. Returns the directory.
pub fn write_outputs(
    outcome: &ExperimentOutcome,
    config: &ExperimentConfig,
    out_root: &Path,
) -> Result<PathBuf> {
    let dir = super::output::results_dir(out_root, outcome.experiment.as_str(), &config.short_hash());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_atomic(&dir.join("config.json"), &serde_json::to_vec_pretty(config)?)?;
    let file = match config.format {
        super::config::OutputFormat::Csv => "results.csv",
        super::config::OutputFormat::Json => "results.json",
    };
    emit_results(&outcome.rows, config.format, &dir.join(file))?;
    let vpath = dir.join("violations.json");
    if outcome.violations.is_empty() {
        if vpath.exists() {
            fs::remove_file(&vpath).map_err(|e| Error::io(&vpath, e))?;
        }
    } else {
        write_atomic(&vpath, &serde_json::to_vec_pretty(&outcome.violations)?)?;
    }
    for a in &outcome.artifacts {
        write_atomic(&dir.join(&a.file_name), &a.bytes)?;
    }
    let summary = Summary {
        experiment: outcome.experiment.as_str(),
        config_hash: config.hash(),
        rows: outcome.rows.len(),
        violations: outcome.violations.len(),
        determinism_hash: &outcome.determinism_hash,
    };
    write_atomic(&dir.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub checked: usize,
    /// Violations that recomputed to the identical failing report.
    pub reproduced: usize,
    pub skipped: usize,
}

/// Recomputes every stored violation that carries its instance.
pub fn replay(path: &Path) -> Result<ReplayOutcome> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let violations: Vec<Violation> =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut out = ReplayOutcome {
        checked: 0,
        reproduced: 0,
        skipped: 0,
    };
    for v in &violations {
        let (Some(kind), Some(inst)) = (v.kind, &v.bound_instance) else {
            out.skipped += 1;
            continue;
        };
        out.checked += 1;
        let again = inst.evaluate(kind, &v.options)?;
        if !again.satisfied && again == v.report {
            out.reproduced += 1;
        }
    }
    Ok(out)
}
