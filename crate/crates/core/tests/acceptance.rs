//! Acceptance checks, one line of output per criterion. Exits non-zero if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use immunoevo::agent::{EvoRecord, IterationRecord, SelectionEvent};
use immunoevo::arena::{integrate_pose, Arena, ArenaConfig, Pose, RobotState, ScenarioKind};
use immunoevo::controller::Topology;
use immunoevo::experiment::{
    distinct_epitopes, final_fitness, replay_repertoire, replay_stream, run_scenario, run_sharing, ExperimentConfig,
    SharingReport,
};
use immunoevo::immune::{create_new_antibody, find_candidates, select_best_antibody, AntibodyId, Epitope, ImmuneConfig, Repertoire};
use immunoevo::net::{default_packet_counts, median, NetworkConfig, Scheme, SharingRun};
use immunoevo::scenario::{run_scenario_seed, ScenarioConfig, ScenarioOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn seeds(n: u64) -> Vec<u64> {
    (1..=n).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..4).map(|_| rng.gen::<f64>()).collect()
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let epsilon = match rng.gen_range(0..10) {
            0 => 0.0,
            1 => 2.0,
            _ => rng.gen_range(0.0..1.2),
        };
        let cfg = ImmuneConfig { epsilon, ..ImmuneConfig::default() };
        let mut rep = Repertoire::new();
        let ep = Epitope::new(random_unit(&mut rng)).unwrap();
        for _ in 0..rng.gen_range(0..30) {
            // Some paratopes sit exactly on the epitope to exercise psi = 0.
            let pt = if rng.gen_bool(0.1) { ep.clone() } else { Epitope::new(random_unit(&mut rng)).unwrap() };
            let id = create_new_antibody(&pt, &mut rep, &cfg, Topology::ARENA, &mut rng);
            // Coarse levels so that ties in concentration are common.
            rep.get_mut(id).unwrap().concentration = f64::from(rng.gen_range(0..5)) * 0.25;
        }
        let before: Vec<(AntibodyId, f64, f64)> =
            rep.iter().map(|a| (a.id, a.concentration, dist(ep.values(), a.paratope().values()))).collect();

        let expect_best = before
            .iter()
            .filter(|&&(_, _, psi)| psi <= epsilon)
            .fold(None::<(AntibodyId, f64)>, |best, &(id, c, _)| match best {
                Some((bid, bc)) if bc > c || (bc == c && bid < id) => Some((bid, bc)),
                _ => Some((id, c)),
            })
            .map(|(id, _)| id);
        let got_best = select_best_antibody(rep.iter(), &ep, &cfg).unwrap().map(|a| a.id);

        let expect: Vec<AntibodyId> = before.iter().filter(|&&(_, _, psi)| psi <= epsilon).map(|&(id, _, _)| id).collect();
        let got = find_candidates(&mut rep, &ep, &cfg).unwrap();

        let mut ok = got == expect && got_best == expect_best;
        for &(id, c, psi) in &before {
            let gain = if psi > epsilon {
                0.0
            } else if epsilon == 0.0 {
                cfg.kappa
            } else {
                cfg.kappa * (1.0 - psi / epsilon)
            };
            let now = rep.get(id).unwrap().concentration;
            ok &= (now - (c + gain)).abs() <= 1e-12;
        }
        if !ok {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!("1000 instances, {mismatches} mismatches, {:.2}s", elapsed.as_secs_f64()),
    )
}

fn epsilon_extremes() -> Verdict {
    let mut cfg = ScenarioConfig::new(ScenarioKind::S1);
    cfg.immune.epsilon = 2.0;
    let counts: Vec<u64> = seeds(20).iter().map(|&s| run_scenario_seed(&cfg, s).unwrap().created(0)).collect();
    let covering = counts.iter().all(|&c| c == 1);

    let stream = replay_stream(500, 50, 4, 1);
    let distinct = distinct_epitopes(&stream);
    let zero = ImmuneConfig { epsilon: 0.0, ..ImmuneConfig::default() };
    let created = replay_repertoire(&stream, &zero, 1).unwrap().created();
    verdict(
        covering && created as usize == distinct,
        format!(
            "epsilon 2: {}/20 runs with one antibody; epsilon 0 replay: {created} created for {distinct} distinct epitopes",
            counts.iter().filter(|&&c| c == 1).count()
        ),
    )
}

fn scenario_experiment(kind: ScenarioKind, epsilon: f64, seeds: Vec<u64>, trace: bool, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        scenario: kind,
        epsilon: Some(epsilon),
        seeds,
        trace_steps: trace,
        out: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn outcomes(cfg: &ExperimentConfig) -> Vec<(u64, ScenarioOutcome)> {
    run_scenario(cfg).unwrap().outcomes
}

fn repertoire_emergence(s1: &[(u64, ScenarioOutcome)], elapsed: Duration) -> Verdict {
    let many = s1.iter().filter(|(_, o)| o.created(0) >= 2).count();
    let replacements: Vec<&IterationRecord> = s1
        .iter()
        .flat_map(|(_, o)| &o.records)
        .filter(|r| r.evo_outcome == EvoRecord::ReplaceOffspring)
        .collect();
    let strict = replacements.iter().all(|r| r.fitness > r.parent_fitness_before);
    verdict(
        many * 10 >= 9 * s1.len() && strict && elapsed < Duration::from_secs(120),
        format!(
            "{many}/{} seeds with >= 2 antibodies; {} replacements, all strictly better: {strict}; {:.1}s",
            s1.len(),
            replacements.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn s3_dynamics(s3: &[(u64, ScenarioOutcome)]) -> Verdict {
    let mut reacted = 0;
    for (_, o) in s3 {
        if let Some(t) = o.first_toggle() {
            if o.records.iter().filter(|r| r.tick >= t).take(10).any(|r| r.event == SelectionEvent::Create) {
                reacted += 1;
            }
        }
    }
    let steps: usize = s3.iter().map(|(_, o)| o.trace.len()).sum();
    let clashes = s3.iter().flat_map(|(_, o)| &o.trace).filter(|s| s.puck != 0.0 && s.antipuck != 0.0).count();
    verdict(
        reacted * 10 >= 8 * s3.len() && clashes == 0 && steps > 0,
        format!("{reacted}/{} seeds create an antibody within 10 iterations of the first toggle; {clashes} of {steps} steps with both terms", s3.len()),
    )
}

fn monolithic_vs_immune(immune: &[(u64, ScenarioOutcome)], mono: &[(u64, ScenarioOutcome)], elapsed: Duration) -> Verdict {
    let mut wins = 0;
    let mut sums = (0.0, 0.0);
    for ((sa, a), (sb, b)) in immune.iter().zip(mono) {
        assert_eq!(sa, sb);
        let (fa, fb) = (final_fitness(a, 0), final_fitness(b, 0));
        sums.0 += fa;
        sums.1 += fb;
        if fa > fb {
            wins += 1;
        }
    }
    let n = immune.len();
    verdict(
        wins * 10 >= 7 * n && elapsed < Duration::from_secs(300),
        format!(
            "immune ahead in {wins}/{n} paired seeds (need 70%); mean final fitness immune {:.3}, monolithic {:.3}; {:.1}s",
            sums.0 / n as f64,
            sums.1 / n as f64,
            elapsed.as_secs_f64()
        ),
    )
}

fn sigma_dynamics(runs: &[&[(u64, ScenarioOutcome)]]) -> Verdict {
    let cfg = ImmuneConfig::default();
    let (mut checked, mut bad) = (0, 0);
    for (_, o) in runs.iter().flat_map(|r| r.iter()) {
        for r in &o.records {
            let expect = match r.evo_outcome {
                EvoRecord::ReplaceOffspring => (r.sigma_before / 2.0).max(cfg.sigma_min),
                EvoRecord::KeepParent => (r.sigma_before * 2.0).min(cfg.sigma_max),
                EvoRecord::FirstEvaluation | EvoRecord::ParentRerun => r.sigma_before,
            };
            checked += 1;
            if r.sigma_after != expect {
                bad += 1;
            }
        }
    }
    verdict(bad == 0 && checked > 0, format!("{checked} logged updates, {bad} violations"))
}

/// Fourth-order Runge-Kutta on the unicycle equations with 10 substeps.
fn rk4_oracle(p: Pose, vl: f64, vr: f64, wheelbase: f64, dt: f64) -> Pose {
    let v = 0.5 * (vl + vr);
    let w = (vr - vl) / wheelbase;
    let f = |s: [f64; 3]| [v * s[2].cos(), v * s[2].sin(), w];
    let h = dt / 10.0;
    let mut s = [p.x, p.y, p.heading];
    for _ in 0..10 {
        let k1 = f(s);
        let k2 = f([s[0] + h / 2.0 * k1[0], s[1] + h / 2.0 * k1[1], s[2] + h / 2.0 * k1[2]]);
        let k3 = f([s[0] + h / 2.0 * k2[0], s[1] + h / 2.0 * k2[1], s[2] + h / 2.0 * k2[2]]);
        let k4 = f([s[0] + h * k3[0], s[1] + h * k3[1], s[2] + h * k3[2]]);
        for i in 0..3 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Pose { x: s[0], y: s[1], heading: s[2] }
}

fn kinematics_oracle() -> Verdict {
    // Walls far enough away never to be touched.
    let cfg = ArenaConfig { width: 1000.0, height: 1000.0, ..ArenaConfig::default() };
    let mut arena = Arena::new(cfg, false);
    let start = Pose { x: 500.0, y: 500.0, heading: 0.3 };
    arena.robots.push(RobotState::at(start));
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cap = cfg.wheel_speed_cap();
    let mut oracle = start;
    let mut worst: f64 = 0.0;
    let mut exact_gap: f64 = 0.0;
    for _ in 0..1000 {
        let motor = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let before = arena.robots[0].pose;
        arena.step_physics(0, motor, cfg.dt);
        let p = arena.robots[0].pose;
        exact_gap = exact_gap.max((integrate_pose(before, motor[0] * cap, motor[1] * cap, cfg.wheelbase, cfg.dt).x - p.x).abs());
        oracle = rk4_oracle(oracle, motor[0] * cap, motor[1] * cap, cfg.wheelbase, cfg.dt);
        worst = worst.max((p.x - oracle.x).abs()).max((p.y - oracle.y).abs());
    }
    verdict(worst <= 1e-6 && exact_gap == 0.0, format!("1000 steps, max coordinate deviation {worst:.3e} m"))
}

fn conscientious_routing() -> Verdict {
    let cfg = NetworkConfig { rounds: 400, ..NetworkConfig::default() };
    let (mut moves, mut bad, mut runs) = (0usize, 0usize, 0usize);
    let mut conserved = true;
    for n in [20usize, 40, 80] {
        for x in default_packet_counts(n) {
            for seed in 1..=3u64 {
                runs += 1;
                let mut run = SharingRun::new(Scheme::Ipm { packets: x }, n, &cfg, seed).unwrap();
                // Independent visit bookkeeping per packet.
                let mut visits: Vec<BTreeMap<usize, u64>> =
                    run.packets.iter().map(|p| BTreeMap::from([(p.current_node, 1)])).collect();
                for _ in 0..cfg.rounds {
                    let log = run.step();
                    conserved &= run.packets.len() == x;
                    let mut moved = vec![false; x];
                    for m in &log.migrations {
                        moves += 1;
                        conserved &= m.packet < x && !moved[m.packet];
                        moved[m.packet] = true;
                        let seen = &visits[m.packet];
                        let listed: Vec<usize> = m.neighbor_visits.iter().map(|&(n, _)| n).collect();
                        let actual: Vec<usize> = run.topology.neighbors(m.from).iter().copied().collect();
                        let counts_match = m.neighbor_visits.iter().all(|&(n, v)| seen.get(&n).copied().unwrap_or(0) == v);
                        let min = actual.iter().map(|nb| seen.get(nb).copied().unwrap_or(0)).min();
                        let dest = seen.get(&m.to).copied().unwrap_or(0);
                        if listed != actual || !counts_match || Some(dest) != min {
                            bad += 1;
                        }
                        *visits[m.packet].entry(m.to).or_insert(0) += 1;
                    }
                }
            }
        }
    }
    verdict(
        bad == 0 && conserved && moves > 0,
        format!("{runs} runs, {moves} migrations, {bad} to a non-minimal neighbour; packet count conserved: {conserved}"),
    )
}

fn sharing_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig { seeds: seeds(10), out: out.to_path_buf(), ..ExperimentConfig::default() }
}

fn fig5_ordering(report: &SharingReport, elapsed: Duration) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [20usize, 40, 80] {
        let cells: Vec<_> = report.cells.iter().filter(|c| c.n == n).collect();
        let bcast = cells.iter().find(|c| c.scheme == Scheme::Broadcast).expect("broadcast cell");
        let xs = default_packet_counts(n);
        let ipm: Vec<_> =
            xs.iter().map(|&x| cells.iter().find(|c| c.scheme == Scheme::Ipm { packets: x }).expect("ipm cell")).collect();
        let cheaper = ipm[0].gamma_avg() < bcast.gamma_avg();
        let etas: Vec<Option<f64>> = ipm.iter().map(|c| median(&c.etas())).collect();
        let faster = matches!(etas.as_slice(), [Some(a), Some(b), Some(c)] if a > b && b > c);
        ok &= cheaper && faster;
        let fmt = |e: &Option<f64>| e.map_or("-".to_string(), |v| format!("{v}"));
        parts.push(format!(
            "n={n}: gamma bcast {:.1} vs ipm-{} {:.1}, median eta {}/{}/{}",
            bcast.gamma_avg(),
            xs[0],
            ipm[0].gamma_avg(),
            fmt(&etas[0]),
            fmt(&etas[1]),
            fmt(&etas[2])
        ));
    }
    parts.push(format!("{:.1}s", elapsed.as_secs_f64()));
    verdict(ok && elapsed < Duration::from_secs(300), parts.join("; "))
}

fn or_convergence(report: &SharingReport) -> Verdict {
    let cell = report.cells.iter().find(|c| c.n == 20 && c.scheme == Scheme::Broadcast).expect("broadcast n=20");
    let converged = cell.runs.iter().filter(|r| r.round_90pct.is_some_and(|t| t <= 2000)).count();
    verdict(converged >= 8, format!("{converged}/{} broadcast runs reach 90% solved within 2000 rounds", cell.runs.len()))
}

fn same_files(a: &Path, b: &Path) -> (usize, Vec<String>) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let differing = names
        .iter()
        .filter(|n| fs::read(a.join(n)).ok() != fs::read(b.join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    (names.len(), differing)
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = |p: &str| dir.path().join(p);
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();

    results.push((1, "oracle equivalence", oracle_equivalence()));
    results.push((2, "epsilon extremes", epsilon_extremes()));

    let t = Instant::now();
    let s1 = outcomes(&ExperimentConfig { iterations: Some(200), ..scenario_experiment(ScenarioKind::S1, 0.45, seeds(20), false, &path("c3a")) });
    results.push((3, "repertoire emergence", repertoire_emergence(&s1, t.elapsed())));

    let s3 = outcomes(&scenario_experiment(ScenarioKind::S3, 0.25, seeds(20), true, &path("c4")));
    results.push((4, "S3 dynamics", s3_dynamics(&s3)));

    let t = Instant::now();
    let immune = outcomes(&scenario_experiment(ScenarioKind::S2, 0.4, seeds(20), false, &path("c5a-immune")));
    let mono = outcomes(&ExperimentConfig {
        monolithic: true,
        ..scenario_experiment(ScenarioKind::S2, 0.4, seeds(20), false, &path("c5a-mono"))
    });
    results.push((5, "monolithic vs immune", monolithic_vs_immune(&immune, &mono, t.elapsed())));

    results.push((6, "sigma dynamics", sigma_dynamics(&[&s1, &s3, &immune, &mono])));
    results.push((7, "kinematics oracle", kinematics_oracle()));
    results.push((8, "conscientious routing", conscientious_routing()));

    let t = Instant::now();
    let sharing = run_sharing(&sharing_config(&path("c9a"))).unwrap();
    results.push((9, "broadcast vs packets ordering", fig5_ordering(&sharing, t.elapsed())));
    results.push((10, "OR-gate convergence", or_convergence(&sharing)));

    run_scenario(&ExperimentConfig { iterations: Some(200), ..scenario_experiment(ScenarioKind::S1, 0.45, seeds(20), false, &path("c3b")) }).unwrap();
    run_scenario(&scenario_experiment(ScenarioKind::S2, 0.4, seeds(20), false, &path("c5b-immune"))).unwrap();
    run_scenario(&ExperimentConfig {
        monolithic: true,
        ..scenario_experiment(ScenarioKind::S2, 0.4, seeds(20), false, &path("c5b-mono"))
    })
    .unwrap();
    run_sharing(&sharing_config(&path("c9b"))).unwrap();
    let mut files = 0;
    let mut differing = Vec::new();
    for (a, b) in [("c3a", "c3b"), ("c5a-immune", "c5b-immune"), ("c5a-mono", "c5b-mono"), ("c9a", "c9b")] {
        let (n, d) = same_files(&path(a), &path(b));
        files += n;
        differing.extend(d);
    }
    results.push((
        11,
        "determinism",
        verdict(differing.is_empty() && files > 0, format!("{files} files compared, {} differ {differing:?}", differing.len())),
    ));

    let mut failed = 0;
    for (n, name, v) in &results {
        println!("{} criterion {n} ({name}): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
