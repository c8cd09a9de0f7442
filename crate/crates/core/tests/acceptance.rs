//! Acceptance criteria. Runs as a plain binary and prints one PASS/FAIL line each.

use std::collections::VecDeque;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use capgen::bounds::{
    bound_approx_dynamics, bound_population_change, bound_team_generalization, gamma_crossover,
    gamma_factor, psi, BoundOptions, PopulationChange,
};
use capgen::dynamics::{
    assemble_linear_mmdp, remaining_mixture, CapabilityVector, LinearMMDPSpec, TeamComposition,
};
use capgen::envs::predator_prey::CAPTURE;
use capgen::envs::{pp_task_suites, PPTask, PredatorPrey, PredatorPreyConfig};
use capgen::harness::{
    generate_linear_instance, run_experiment, write_outputs, BoundInstance, BoundKind,
    ExperimentConfig, ExperimentKind, GeneratorParams, InstanceGenerator,
};
use capgen::learning::{q_learning_train, ObservationMode, PPBuilder, TrainSchedule};
use capgen::mdp::{policy_evaluation, successor_features, JointPolicy, SolverSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn ac01_certification_sweep() -> Check {
    let mut cfg = ExperimentConfig::new(ExperimentKind::VerifyBounds);
    cfg.seed = 7;
    cfg.generator.count = 200;
    cfg.generator.gamma = 0.9;
    cfg.solver = SolverSettings {
        tol: 1e-9,
        ..SolverSettings::default()
    };
    let t = Instant::now();
    let out = run_experiment(&cfg, 1).map_err(e2s)?;
    let elapsed = t.elapsed();
    let gated = [
        "team_generalization",
        "policy_transfer",
        "population_remove",
        "population_add",
        "capability_estimation",
        "out_of_distribution",
    ];
    let mut counted = 0;
    for name in gated {
        let rows: Vec<_> = out.rows.iter().filter(|r| r.name == name).collect();
        ensure(rows.len() == 200, format!("{name}: {} rows", rows.len()))?;
        let bad = rows.iter().filter(|r| r.violated()).count();
        ensure(bad == 0, format!("{name}: {bad} violations"))?;
        counted += rows.len();
    }
    ensure(out.violations.is_empty(), format!("{} violations overall", out.violations.len()))?;
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{counted} gated reports, {} total, 0 violations, {:.2}s single core",
        out.rows.len(),
        elapsed.as_secs_f64()
    ))
}

fn ac02_approx_dynamics() -> Check {
    let params = GeneratorParams::default();
    let opts = BoundOptions::default();
    let mut worst_eps = 0.0f64;
    let mut worst_zero = 0.0f64;
    for i in 0..200 {
        let inst = BoundInstance::generate(&params, 21, i).map_err(e2s)?;
        let r = inst.evaluate(BoundKind::ApproxDynamics, &opts).map_err(e2s)?;
        let er = r.constituent("eps_hat_r").unwrap_or(f64::NAN);
        let ep = r.constituent("eps_hat_p").unwrap_or(f64::NAN);
        ensure(er <= 0.02 && ep <= 0.02, format!("instance {i}: eps_hat ({er}, {ep}) above 0.02"))?;
        worst_eps = worst_eps.max(er).max(ep);
        ensure(r.satisfied, format!("instance {i}: bound {} < actual {}", r.bound_value, r.actual_value))?;

        let lx = assemble_linear_mmdp(&inst.x).map_err(e2s)?;
        let ly = assemble_linear_mmdp(&inst.y).map_err(e2s)?;
        let zero = bound_approx_dynamics(&inst.x, &inst.y, &lx, &ly, &opts).map_err(e2s)?;
        let thm1 = bound_team_generalization(&inst.x, &inst.y, &opts).map_err(e2s)?;
        let diff = (zero.bound_value - thm1.bound_value).abs();
        ensure(
            diff <= 4.0 * f64::EPSILON * thm1.bound_value.abs().max(1.0),
            format!("instance {i}: eps=0 bound differs from team_generalization by {diff:e}"),
        )?;
        worst_zero = worst_zero.max(diff);
    }
    Ok(format!(
        "200 perturbations satisfied, max eps_hat {worst_eps:.4}, eps=0 max diff {worst_zero:e}"
    ))
}

fn ac03_chain() -> Check {
    let mut g = InstanceGenerator::new(GeneratorParams::default(), 33).map_err(e2s)?;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..500 {
        let x = generate_linear_instance(&mut g).map_err(e2s)?;
        let n = x.team.len();
        let d = x.team.dim();
        let ty = g.team(n, d);
        let ay = if g.rng().gen_bool(0.5) { x.weights.clone() } else { g.weights(n) };
        let y = x.with_team(ty, ay).map_err(e2s)?;
        let mx = assemble_linear_mmdp(&x).map_err(e2s)?;
        let my = assemble_linear_mmdp(&y).map_err(e2s)?;
        // independent dense recomputation
        let eps_r = mx
            .rewards()
            .iter()
            .zip(my.rewards())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let (dx, dy) = (mx.transitions().to_dense(), my.transitions().to_dense());
        let mut eps_p = 0.0f64;
        for (rx, ry) in dx.iter().zip(&dy) {
            for (px, py) in rx.iter().zip(ry) {
                eps_p = eps_p.max(px.iter().zip(py).map(|(a, b)| (a - b).abs()).sum());
            }
        }
        let env = &x.environment;
        let s_max = env
            .states
            .iter()
            .map(|phi| {
                (0..env.reward_kernel.rows())
                    .map(|j| {
                        (0..phi.len())
                            .map(|l| env.reward_kernel.entry(j, l) * phi[l])
                            .sum::<f64>()
                            .abs()
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        let p = psi(&x.team, &x.weights, &y.team, &y.weights, false).map_err(e2s)?.value;
        let r_gap = eps_r - s_max * p;
        let p_gap = eps_p - d as f64 * p;
        ensure(r_gap <= 1e-12, format!("pair {i}: eps_R exceeds s_max*psi by {r_gap:e}"))?;
        ensure(p_gap <= 1e-12, format!("pair {i}: eps_P exceeds d*psi by {p_gap:e}"))?;
        worst = worst.max(r_gap).max(p_gap);
    }
    Ok(format!("500 pairs, max excess {worst:e}"))
}

fn ac04_successor_identity() -> Check {
    let mut g = InstanceGenerator::new(GeneratorParams::default(), 44).map_err(e2s)?;
    let solver = SolverSettings::default();
    let mut worst = 0.0f64;
    for i in 0..100 {
        let spec = generate_linear_instance(&mut g).map_err(e2s)?;
        let m = assemble_linear_mmdp(&spec).map_err(e2s)?;
        let joint = m.num_joint_actions();
        let pi = JointPolicy::new((0..m.num_states()).map(|_| g.rng().gen_range(0..joint)).collect());
        let v = policy_evaluation(&m, &pi, &solver).map_err(e2s)?;
        let sf = successor_features(&m, &pi, &solver).map_err(e2s)?;
        let mix = spec.mixture().map_err(e2s)?;
        for s in 0..m.num_states() {
            let w_mu = spec.environment.reward_kernel.apply(sf.state(s));
            let by_members: f64 = spec
                .team
                .members()
                .iter()
                .zip(spec.weights.as_slice())
                .map(|(c, a)| a * c.as_slice().iter().zip(&w_mu).map(|(x, y)| x * y).sum::<f64>())
                .sum();
            let by_mix: f64 = mix.iter().zip(&w_mu).map(|(x, y)| x * y).sum();
            let err = (v.v[s] - by_members).abs().max((v.v[s] - by_mix).abs());
            ensure(err <= 1e-6, format!("instance {i} state {s}: error {err:e}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("100 policies, max error {worst:e}"))
}

fn ac05_gamma_factor() -> Check {
    for g in [0.1, 0.3, 0.5] {
        let f = gamma_factor(g).map_err(e2s)?;
        ensure(f == (1.0 + g) / (1.0 - g), format!("gamma {g}: {f}"))?;
    }
    for g in [0.7, 0.9] {
        let f = gamma_factor(g).map_err(e2s)?;
        ensure(f == 1.0 / (g * (1.0 - g)), format!("gamma {g}: {f}"))?;
    }
    let c = gamma_crossover();
    let below = gamma_factor(c - 1e-9).map_err(e2s)?;
    let above = gamma_factor(c + 1e-9).map_err(e2s)?;
    ensure((below - above).abs() <= 1e-6, format!("jump {} at crossover", below - above))?;
    Ok(format!("crossover {c:.9}, jump {:e}", (below - above).abs()))
}

fn ac06_population_redundant() -> Check {
    let mut g = InstanceGenerator::new(GeneratorParams::default(), 66).map_err(e2s)?;
    let opts = BoundOptions::default();
    let tol = opts.solver.tol;
    let mut worst = 0.0f64;
    for i in 0..50 {
        let base = generate_linear_instance(&mut g).map_err(e2s)?;
        let n = g.rng().gen_range(2..=4);
        let d = base.team.dim();
        let first = g.team(n - 1, d);
        let weights = g.weights(n);
        // last member equals the renormalized mixture of the others
        let probe = TeamComposition::from_rows(
            first.to_rows().into_iter().chain([vec![0.0; d]]).collect(),
        )
        .map_err(e2s)?;
        let last = remaining_mixture(&probe, &weights).map_err(e2s)?;
        let team = probe
            .with_member(n - 1, CapabilityVector::new(last).map_err(e2s)?)
            .map_err(e2s)?;
        let spec = LinearMMDPSpec::new(team, weights, base.environment.clone()).map_err(e2s)?;
        let r = bound_population_change(&spec, &PopulationChange::RemoveLast, &opts).map_err(e2s)?;
        ensure(r.bound_value.abs() <= 1e-12, format!("instance {i}: bound {}", r.bound_value))?;
        ensure(r.actual_value <= 2.0 * tol, format!("instance {i}: gap {}", r.actual_value))?;
        worst = worst.max(r.actual_value);
    }
    Ok(format!("50 constructed teams, bound 0, max gap {worst:e}"))
}

fn ac07_lipschitz_polynomial() -> Check {
    let params = GeneratorParams::default();
    let opts = BoundOptions::default();
    let mut max_ratio = 0.0f64;
    let mut deltas = [0usize; 2];
    for i in 0..200 {
        let inst = BoundInstance::generate(&params, 77, i).map_err(e2s)?;
        let l = inst.evaluate(BoundKind::Lipschitz, &opts).map_err(e2s)?;
        ensure(l.satisfied, format!("lipschitz {i}: bound {} < actual {}", l.bound_value, l.actual_value))?;
        let p = inst.evaluate(BoundKind::PolynomialDeviation, &opts).map_err(e2s)?;
        let poly = &inst.polynomial;
        ensure(
            poly.spec.alpha() == 1.0 && poly.spec.degree() <= 3 && poly.team.len() <= 3,
            format!("polynomial {i}: out of range"),
        )?;
        ensure(
            p.actual_value <= p.bound_value + 1e-12,
            format!("polynomial {i}: eps_R {} > bound {}", p.actual_value, p.bound_value),
        )?;
        deltas[usize::from(poly.delta == 0.1)] += 1;
        if p.bound_value > 0.0 {
            max_ratio = max_ratio.max(p.actual_value / p.bound_value);
        }
    }
    ensure(deltas[0] > 0 && deltas[1] > 0, "both delta values must occur")?;
    Ok(format!(
        "200 Lipschitz pairs satisfied; 200 polynomial instances (delta 0.01: {}, 0.1: {}), max eps_R/bound {max_ratio:.3}",
        deltas[0], deltas[1]
    ))
}

fn ac08_fruit_forage() -> Check {
    let cfg = ExperimentConfig::new(ExperimentKind::FruitForage);
    let t = Instant::now();
    let out = run_experiment(&cfg, 1).map_err(e2s)?;
    let elapsed = t.elapsed();
    let names: Vec<&str> = out.rows.iter().map(|r| r.name.as_str()).collect();
    ensure(
        names == ["team_generalization", "policy_transfer", "population_remove"],
        format!("rows {names:?}"),
    )?;
    for r in &out.rows {
        ensure(r.satisfied == Some(true), format!("{} violated", r.name))?;
    }
    ensure(elapsed < Duration::from_secs(300), format!("took {elapsed:?}"))?;
    let summary: Vec<String> = out
        .rows
        .iter()
        .map(|r| format!("{} {:.4} <= {:.4}", r.name, r.actual_value.unwrap_or(f64::NAN), r.bound_value.unwrap_or(f64::NAN)))
        .collect();
    Ok(format!("{} ({:.1}s)", summary.join("; "), elapsed.as_secs_f64()))
}

fn neighbours(cell: usize, g: usize) -> Vec<usize> {
    let (r, c) = (cell / g, cell % g);
    let mut out = Vec::new();
    if r > 0 {
        out.push(cell - g);
    }
    if c > 0 {
        out.push(cell - 1);
    }
    if r + 1 < g {
        out.push(cell + g);
    }
    if c + 1 < g {
        out.push(cell + 1);
    }
    out
}

/// Walk (avoiding the prey) to a cell next to it, then one capture step.
fn bfs_capture_time(pred: usize, prey: usize, g: usize) -> usize {
    let mut dist = vec![usize::MAX; g * g];
    let mut queue = VecDeque::from([pred]);
    dist[pred] = 0;
    while let Some(c) = queue.pop_front() {
        if neighbours(c, g).contains(&prey) {
            return dist[c] + 1;
        }
        for n in neighbours(c, g) {
            if n != prey && dist[n] == usize::MAX {
                dist[n] = dist[c] + 1;
                queue.push_back(n);
            }
        }
    }
    usize::MAX
}

fn bfs_fraction(seed: u64) -> Result<f64, String> {
    let g = 3;
    let base = PredatorPreyConfig {
        grid_size: g,
        prey_move_prob: 0.0,
        ..PredatorPreyConfig::standard(vec![1], vec![1], 0.0)
    };
    let builder = PPBuilder {
        base: base.clone(),
        tasks: vec![PPTask {
            predators: vec![1],
            penalty: 0.0,
        }],
    };
    let sched = TrainSchedule {
        eval_interval: 0,
        gamma: 0.9,
        ..TrainSchedule::default()
    };
    let out = q_learning_train(&builder, &sched, ObservationMode::CapabilityAware, seed).map_err(e2s)?;
    let mut env = PredatorPrey::new(
        PredatorPreyConfig {
            capability_observable: true,
            ..base
        },
        seed,
    )
    .map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hits, mut total) = (0usize, 0usize);
    for pred in 0..g * g {
        for prey in (0..g * g).filter(|&p| p != pred) {
            total += 1;
            let mut obs = env.reset_to(vec![pred], vec![prey]).map_err(e2s)?;
            let oracle = bfs_capture_time(pred, prey, g);
            let mut t = 0;
            loop {
                let mask = env.available_actions(0);
                let a = out.qtable.act(obs[0], &mask, &mut rng);
                let step = env.step(&[a]).map_err(e2s)?;
                t += 1;
                if (a == CAPTURE && step.captures > 0) || t > oracle {
                    break;
                }
                obs = step.observations;
            }
            if t <= oracle {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / total as f64)
}

fn ac09_predator_prey() -> Check {
    let suites = pp_task_suites();
    ensure(suites.len() == 2, "two suites")?;
    let (a, b) = (&suites[0], &suites[1]);
    ensure(
        a.name == "PP Unseen Team"
            && a.prey_health == [2, 2, 2, 3]
            && a.train_teams == [vec![2, 3, 2, 3], vec![1, 2, 1, 2]]
            && a.test_teams == [vec![1, 1, 2, 3], vec![1, 1, 1, 3]]
            && a.penalties == [0.0, -0.008]
            && a.gap_pair == (vec![1, 2, 1, 2], vec![1, 1, 1, 3]),
        "Unseen Team split differs",
    )?;
    ensure(
        b.name == "PP Unseen Team, Agent"
            && b.prey_health == [1, 2, 3, 4]
            && b.train_teams == [vec![1, 2, 2, 3], vec![1, 1, 2, 2], vec![1, 3, 2, 1]]
            && b.test_teams == [vec![1, 1, 1, 4], vec![1, 1, 3, 4], vec![1, 1, 2, 4]],
        "Unseen Team, Agent split differs",
    )?;

    let frac = bfs_fraction(17)?;
    ensure(frac >= 0.95, format!("3x3 BFS-optimal captures on {:.1}% of starts", 100.0 * frac))?;

    let cfg = ExperimentConfig::new(ExperimentKind::PredatorPrey);
    let out = run_experiment(&cfg, 0).map_err(e2s)?;
    let dir = tempfile::tempdir().map_err(e2s)?;
    let written = write_outputs(&out, &cfg, dir.path()).map_err(e2s)?;
    let csv = std::fs::read_to_string(written.join("results.csv")).map_err(e2s)?;
    ensure(csv.lines().count() == out.rows.len() + 1, "results.csv row count")?;
    ensure(written.join("curve.csv").exists(), "curve.csv missing")?;
    let gap = |suite: &str, mode: &str| {
        let rows: Vec<f64> = out
            .rows
            .iter()
            .filter(|r| r.name == format!("{suite}/{mode}/generalization_gap"))
            .filter_map(|r| r.actual_value)
            .collect();
        rows.iter().sum::<f64>() / rows.len().max(1) as f64
    };
    let mut direction = Vec::new();
    for s in ["unseen_team", "unseen_team_agent"] {
        direction.push(format!(
            "{s} gap aware {:.3} blind {:.3}",
            gap(s, "capability-aware"),
            gap(s, "capability-blind")
        ));
    }
    Ok(format!(
        "splits verbatim; 3x3 BFS {:.1}%; 8x8 run emitted {} rows ({})",
        100.0 * frac,
        out.rows.len(),
        direction.join(", ")
    ))
}

fn ac10_determinism() -> Check {
    let mut verify = ExperimentConfig::new(ExperimentKind::VerifyBounds);
    verify.generator.count = 40;
    let ff = ExperimentConfig::new(ExperimentKind::FruitForage);
    let mut pp = ExperimentConfig::new(ExperimentKind::PredatorPrey);
    pp.predator_prey.schedule.total_steps = 30_000;
    pp.predator_prey.schedule.eval_interval = 10_000;
    let mut sweep = ExperimentConfig::new(ExperimentKind::Sweep);
    sweep.generator.count = 5;
    let mut hashes = Vec::new();
    for (cfg, jobs) in [(verify, (1, 4)), (ff, (1, 1)), (pp, (1, 4)), (sweep, (2, 1))] {
        let a = run_experiment(&cfg, jobs.0).map_err(e2s)?;
        let b = run_experiment(&cfg, jobs.1).map_err(e2s)?;
        ensure(
            a.determinism_hash == b.determinism_hash,
            format!("{} hash differs between runs", cfg.experiment.as_str()),
        )?;
        hashes.push(format!("{} {}", cfg.experiment.as_str(), &a.determinism_hash[..12]));
    }
    Ok(hashes.join(", "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("AC01 bound certification sweep", ac01_certification_sweep),
        ("AC02 approximate dynamics bound", ac02_approx_dynamics),
        ("AC03 reward/transition chain", ac03_chain),
        ("AC04 successor-feature identity", ac04_successor_identity),
        ("AC05 gamma factor", ac05_gamma_factor),
        ("AC06 redundant population member", ac06_population_redundant),
        ("AC07 Lipschitz and polynomial rewards", ac07_lipschitz_polynomial),
        ("AC08 Fruit Forage desk instance", ac08_fruit_forage),
        ("AC09 Predator Prey pipeline", ac09_predator_prey),
        ("AC10 determinism", ac10_determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.to_lowercase().contains(&p.to_lowercase())) {
            continue;
        }
        let t = Instant::now();
        match f() {
            Ok(detail) => println!("PASS {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{:.1}s]", t.elapsed().as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
