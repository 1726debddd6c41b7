//! Configuration-driven experiment runners that write CSV reports.
//!
//! Every CSV starts with the resolved configuration as `# `-prefixed TOML
//! lines, followed by a header row. Output depends only on the configuration
//! (not on the output directory), so equal configs give byte-identical files.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arena::{ArenaConfig, ScenarioKind, ScenarioSpec};
use crate::controller::{EvoConfig, Topology};
use crate::error::{Error, Result};
use crate::immune::{decay_and_purge, immune_step, write_snapshot, AntibodyId, Epitope, ImmuneConfig, Repertoire};
use crate::net::{default_packet_counts, run_sharing_experiment, ArenaSharing, MetricsReport, NetworkConfig, Scheme, SchemeKind};
use crate::rng::{stream_rng, streams};
use crate::scenario::{run_scenario_seed, ScenarioConfig, ScenarioOutcome};

/// Epsilon that covers the whole normalized sensor space.
pub const MONOLITHIC_EPSILON: f64 = 2.0;

/// Iterations at the end of a run whose window fitness is averaged into the
/// summary.
pub const FINAL_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioKind,
    /// `None` uses the scenario's default.
    pub epsilon: Option<f64>,
    /// `None` uses the scenario's default budget.
    pub iterations: Option<u64>,
    /// Forces epsilon to cover the whole sensor space.
    pub monolithic: bool,
    pub seeds: Vec<u64>,
    pub robots: usize,
    pub sharing: ArenaSharing,
    /// Also write per-step fitness terms.
    pub trace_steps: bool,
    /// Values for `sweep-epsilon`.
    pub epsilons: Vec<f64>,
    /// Length of the replayed epitope stream in a sweep; 0 disables replay.
    pub replay_length: usize,
    /// Distinct epitopes the replayed stream is drawn from.
    pub replay_pool: usize,
    pub schemes: Vec<SchemeKind>,
    #[serde(skip_serializing)]
    pub out: PathBuf,
    pub spec: ScenarioSpec,
    pub immune: ImmuneConfig,
    pub evo: EvoConfig,
    pub arena: ArenaConfig,
    pub network: NetworkConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::S1,
            epsilon: None,
            iterations: None,
            monolithic: false,
            seeds: (1..=10).collect(),
            robots: 1,
            sharing: ArenaSharing::Off,
            trace_steps: false,
            epsilons: vec![0.25, 0.4, 0.45],
            replay_length: 0,
            replay_pool: 50,
            schemes: vec![SchemeKind::Bcast, SchemeKind::Ipm],
            out: PathBuf::from("out"),
            spec: ScenarioSpec::default(),
            immune: ImmuneConfig::default(),
            evo: EvoConfig::default(),
            arena: ArenaConfig::default(),
            network: NetworkConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Epsilon actually used by scenario runs.
    pub fn resolved_epsilon(&self) -> f64 {
        if self.monolithic {
            MONOLITHIC_EPSILON
        } else {
            self.epsilon.unwrap_or(self.scenario.default_epsilon())
        }
    }

    pub fn resolved_iterations(&self) -> u64 {
        self.iterations.unwrap_or(self.scenario.default_iterations())
    }

    /// Fills in scenario-dependent defaults so the header shows the values used.
    pub fn resolve(&self) -> Self {
        let mut r = self.clone();
        r.epsilon = Some(self.resolved_epsilon());
        r.iterations = Some(self.resolved_iterations());
        r
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        let mut spec = self.spec.clone();
        spec.kind = self.scenario;
        spec.total_iterations = self.resolved_iterations();
        ScenarioConfig {
            spec,
            immune: ImmuneConfig { epsilon: self.resolved_epsilon(), ..self.immune },
            evo: self.evo,
            arena: self.arena,
            robots: self.robots,
            sharing: self.sharing,
            trace_steps: self.trace_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let unique: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        self.scenario_config().validate()?;
        self.network.validate()
    }

    /// The resolved configuration as `# `-prefixed TOML lines.
    pub fn header(&self) -> Result<String> {
        let text = toml::to_string(&self.resolve()).map_err(|e| Error::Config(e.to_string()))?;
        Ok(text.lines().map(|l| if l.is_empty() { "#\n".to_string() } else { format!("# {l}\n") }).collect())
    }
}

fn csv_bytes<T: Serialize>(header: &str, rows: &[T]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(header.as_bytes().to_vec());
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Creates the output directory and writes every file, or nothing if the
/// directory cannot be created.
fn write_all(out: &Path, files: Vec<(String, Vec<u8>)>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = out.join(name);
        fs::write(&path, bytes)?;
        written.push(path);
    }
    Ok(written)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean window fitness over the last `FINAL_WINDOW` iterations of `robot`.
pub fn final_fitness(outcome: &ScenarioOutcome, robot: usize) -> f64 {
    let recs: Vec<f64> = outcome.records.iter().filter(|r| r.robot == robot).map(|r| r.fitness).collect();
    let start = recs.len().saturating_sub(FINAL_WINDOW);
    mean(recs[start..].iter().copied())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub robot: usize,
    pub epsilon: f64,
    pub iterations: u64,
    pub antibodies_created: u64,
    pub final_irep_size: usize,
    pub mean_final_fitness: f64,
    pub first_light_toggle: Option<u64>,
    pub ticks: u64,
}

fn summarize(seed: u64, epsilon: f64, iterations: u64, o: &ScenarioOutcome) -> Vec<SeedSummary> {
    (0..o.repertoires.len())
        .map(|robot| SeedSummary {
            seed,
            robot,
            epsilon,
            iterations,
            antibodies_created: o.created(robot),
            final_irep_size: o.repertoires[robot].len(),
            mean_final_fitness: final_fitness(o, robot),
            first_light_toggle: o.first_toggle(),
            ticks: o.ticks,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub summaries: Vec<SeedSummary>,
    pub outcomes: Vec<(u64, ScenarioOutcome)>,
    pub files: Vec<PathBuf>,
}

/// Runs every seed and writes `events_seed<N>.csv`, `snapshot_seed<N>_robot<R>.tsv`,
/// optionally `trace_seed<N>.csv`, and a merged `summary.csv`.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let header = cfg.header()?;
    let sc = cfg.scenario_config();
    let mut files = Vec::new();
    let mut summaries = Vec::new();
    let mut outcomes = Vec::new();
    for &seed in &cfg.seeds {
        let o = run_scenario_seed(&sc, seed)?;
        files.push((format!("events_seed{seed}.csv"), csv_bytes(&header, &o.records)?));
        if cfg.trace_steps {
            files.push((format!("trace_seed{seed}.csv"), csv_bytes(&header, &o.trace)?));
        }
        for (r, rep) in o.repertoires.iter().enumerate() {
            let text = format!("{header}{}", write_snapshot(rep, Topology::ARENA));
            files.push((format!("snapshot_seed{seed}_robot{r}.tsv"), text.into_bytes()));
        }
        summaries.extend(summarize(seed, sc.immune.epsilon, sc.spec.total_iterations, &o));
        outcomes.push((seed, o));
    }
    files.push(("summary.csv".into(), csv_bytes(&header, &summaries)?));
    let files = write_all(&cfg.out, files)?;
    Ok(ScenarioReport { summaries, outcomes, files })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct RunRow {
    scheme: String,
    n: usize,
    packets: usize,
    run: usize,
    seed: u64,
    gamma: f64,
    hello_per_node: f64,
    payload_per_node: f64,
    first_solution: Option<u64>,
    round_90pct: Option<u64>,
    eta: Option<u64>,
    rounds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub scheme: String,
    pub n: usize,
    pub packets: usize,
    pub runs: usize,
    pub converged_runs: usize,
    pub gamma_avg: f64,
    pub gamma_std: Option<f64>,
    pub eta_median: Option<f64>,
    pub eta_std: Option<f64>,
}

impl CellSummary {
    fn of(report: &MetricsReport) -> Self {
        Self {
            scheme: report.scheme.name().into(),
            n: report.n,
            packets: report.scheme.packets(),
            runs: report.runs.len(),
            converged_runs: report.converged_runs(),
            gamma_avg: report.gamma_avg(),
            gamma_std: report.gamma_std(),
            eta_median: report.eta_median(),
            eta_std: report.eta_std(),
        }
    }
}

/// The scheme and packet-count grid for one network size.
pub fn sharing_grid(cfg: &ExperimentConfig, n: usize) -> Vec<Scheme> {
    let mut grid = Vec::new();
    for kind in &cfg.schemes {
        match kind {
            SchemeKind::Bcast => grid.push(Scheme::Broadcast),
            SchemeKind::Ipm => {
                let counts =
                    if cfg.network.packets.is_empty() { default_packet_counts(n).to_vec() } else { cfg.network.packets.clone() };
                grid.extend(counts.into_iter().map(|packets| Scheme::Ipm { packets }));
            }
        }
    }
    grid
}

#[derive(Debug, Clone)]
pub struct SharingReport {
    pub cells: Vec<MetricsReport>,
    pub summary: Vec<CellSummary>,
    pub files: Vec<PathBuf>,
}

/// Runs the scheme x size x packets grid, one run per seed, and writes
/// `sharing_runs.csv` and `sharing_summary.csv`.
pub fn run_sharing(cfg: &ExperimentConfig) -> Result<SharingReport> {
    cfg.validate()?;
    if cfg.schemes.is_empty() {
        return Err(Error::Config("no sharing scheme selected".into()));
    }
    for &n in &cfg.network.nodes {
        for scheme in sharing_grid(cfg, n) {
            if scheme.packets() > n {
                return Err(Error::Config(format!("{} packets exceed {n} nodes", scheme.packets())));
            }
        }
    }
    let header = cfg.header()?;
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    for &n in &cfg.network.nodes {
        for scheme in sharing_grid(cfg, n) {
            let report = run_sharing_experiment(scheme, n, &cfg.network, &cfg.seeds)?;
            for (m, &seed) in report.runs.iter().zip(&cfg.seeds) {
                rows.push(RunRow {
                    scheme: scheme.name().into(),
                    n,
                    packets: scheme.packets(),
                    run: m.run,
                    seed,
                    gamma: m.gamma,
                    hello_per_node: m.hello_per_node,
                    payload_per_node: m.payload_per_node,
                    first_solution: m.first_solution,
                    round_90pct: m.round_90pct,
                    eta: m.eta,
                    rounds: m.rounds,
                });
            }
            cells.push(report);
        }
    }
    let summary: Vec<CellSummary> = cells.iter().map(CellSummary::of).collect();
    let files = write_all(
        &cfg.out,
        vec![
            ("sharing_runs.csv".into(), csv_bytes(&header, &rows)?),
            ("sharing_summary.csv".into(), csv_bytes(&header, &summary)?),
        ],
    )?;
    Ok(SharingReport { cells, summary, files })
}

/// `length` epitopes drawn uniformly, with repetition, from a pool of `pool`
/// random points.
pub fn replay_stream(length: usize, pool: usize, dims: usize, seed: u64) -> Vec<Epitope> {
    let mut rng = stream_rng(seed, streams::REPLAY);
    let points: Vec<Epitope> = (0..pool)
        .map(|_| Epitope::new((0..dims).map(|_| rng.gen::<f64>()).collect()).expect("unit values"))
        .collect();
    (0..length).map(|_| points[rng.gen_range(0..pool)].clone()).collect()
}

/// Feeds a fixed epitope stream through the selection loop alone, keeping
/// the current antibody while it still recognizes the next epitope.
pub fn replay_repertoire(stream: &[Epitope], cfg: &ImmuneConfig, seed: u64) -> Result<Repertoire> {
    let mut rng = stream_rng(seed, streams::ROBOT_BASE);
    let mut irep = Repertoire::new();
    let xrep = Repertoire::new();
    let mut current: Option<AntibodyId> = None;
    for ep in stream {
        if let Some(id) = current {
            if irep.get(id).map_or(Ok(false), |ab| ab.recognizes(ep, cfg.epsilon))? {
                continue;
            }
            decay_and_purge(&mut irep, Some(id), cfg);
        }
        current = Some(immune_step(&mut irep, &xrep, ep, cfg, Topology::ARENA, &mut rng)?.selection.id);
    }
    Ok(irep)
}

/// Number of distinct epitopes, compared bit-for-bit.
pub fn distinct_epitopes(stream: &[Epitope]) -> usize {
    stream
        .iter()
        .map(|e| e.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect::<BTreeSet<_>>()
        .len()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub seed: u64,
    pub antibodies_created: u64,
    pub final_irep_size: usize,
    pub mean_final_fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepGroup {
    pub epsilon: f64,
    pub seeds: usize,
    pub mean_antibodies: f64,
    pub mean_final_fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayRow {
    pub epsilon: f64,
    pub seed: u64,
    pub stream_length: usize,
    pub distinct_epitopes: usize,
    pub antibodies_created: u64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub groups: Vec<SweepGroup>,
    pub replay: Vec<ReplayRow>,
    pub files: Vec<PathBuf>,
}

/// Runs the scenario for every epsilon in `cfg.epsilons` and seed; writes
/// `sweep.csv`, `sweep_summary.csv` and, when replay is enabled, `replay.csv`.
pub fn sweep_epsilon(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    if cfg.epsilons.is_empty() {
        return Err(Error::Config("sweep needs at least one epsilon".into()));
    }
    if let Some(e) = cfg.epsilons.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::Config(format!("epsilon {e} must be finite and non-negative")));
    }
    if cfg.replay_length > 0 && cfg.replay_pool == 0 {
        return Err(Error::Config("replay_pool must be positive".into()));
    }
    let header = cfg.header()?;
    let mut rows = Vec::new();
    let mut groups = Vec::new();
    let mut replay = Vec::new();
    for &epsilon in &cfg.epsilons {
        let point = ExperimentConfig { epsilon: Some(epsilon), monolithic: false, ..cfg.clone() };
        let sc = point.scenario_config();
        let first = rows.len();
        for &seed in &cfg.seeds {
            let o = run_scenario_seed(&sc, seed)?;
            rows.push(SweepRow {
                epsilon,
                seed,
                antibodies_created: o.created(0),
                final_irep_size: o.repertoires[0].len(),
                mean_final_fitness: final_fitness(&o, 0),
            });
            if cfg.replay_length > 0 {
                let stream = replay_stream(cfg.replay_length, cfg.replay_pool, 4, seed);
                let rep = replay_repertoire(&stream, &sc.immune, seed)?;
                replay.push(ReplayRow {
                    epsilon,
                    seed,
                    stream_length: stream.len(),
                    distinct_epitopes: distinct_epitopes(&stream),
                    antibodies_created: rep.created(),
                });
            }
        }
        let group = &rows[first..];
        groups.push(SweepGroup {
            epsilon,
            seeds: group.len(),
            mean_antibodies: mean(group.iter().map(|r| r.antibodies_created as f64)),
            mean_final_fitness: mean(group.iter().map(|r| r.mean_final_fitness)),
        });
    }
    let mut files =
        vec![("sweep.csv".into(), csv_bytes(&header, &rows)?), ("sweep_summary.csv".into(), csv_bytes(&header, &groups)?)];
    if cfg.replay_length > 0 {
        files.push(("replay.csv".into(), csv_bytes(&header, &replay)?));
    }
    let files = write_all(&cfg.out, files)?;
    Ok(SweepReport { rows, groups, replay, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("immunoevo-exp-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    fn quick(tag: &str) -> ExperimentConfig {
        ExperimentConfig { iterations: Some(30), seeds: vec![1, 2], out: tmp(tag), ..Default::default() }
    }

    #[test]
    fn header_records_scenario_epsilon() {
        let h = quick("hdr").header().unwrap();
        assert!(h.lines().all(|l| l == "#" || l.starts_with("# ")));
        assert!(h.contains("# epsilon = 0.45"));
        let s3 = ExperimentConfig { scenario: ScenarioKind::S3, ..quick("hdr3") };
        assert!(s3.header().unwrap().contains("# epsilon = 0.25"));
        assert!(!h.contains("immunoevo-exp"));
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let cfg = ExperimentConfig::from_toml("scenario = \"s2\"\nseeds = [4]\n[immune]\np_sharing = 0.5\n").unwrap();
        assert_eq!(cfg.scenario, ScenarioKind::S2);
        assert_eq!(cfg.resolved_epsilon(), 0.4);
        assert_eq!(cfg.immune.p_sharing, 0.5);
        assert!(ExperimentConfig::from_toml("[immune]\nepsilon = 0.3\n").is_err());
        assert!(ExperimentConfig::from_toml("sedes = [1]\n").is_err());
        let back = ExperimentConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back.seeds, cfg.seeds);
        assert_eq!(back.immune, cfg.immune);
    }

    #[test]
    fn scenario_output_is_reproducible() {
        let a = quick("rep-a");
        let b = ExperimentConfig { out: tmp("rep-b"), ..a.clone() };
        let ra = run_scenario(&a).unwrap();
        run_scenario(&b).unwrap();
        for f in &ra.files {
            let name = f.file_name().unwrap();
            assert_eq!(fs::read(f).unwrap(), fs::read(b.out.join(name)).unwrap(), "{name:?}");
        }
        assert_eq!(ra.summaries.len(), 2);
        let _ = fs::remove_dir_all(&a.out);
        let _ = fs::remove_dir_all(&b.out);
    }

    #[test]
    fn monolithic_mode_keeps_one_antibody() {
        let cfg = ExperimentConfig { monolithic: true, ..quick("mono") };
        let r = run_scenario(&cfg).unwrap();
        assert!(r.summaries.iter().all(|s| s.antibodies_created == 1 && s.epsilon == 2.0));
        let snap = fs::read_to_string(cfg.out.join("snapshot_seed1_robot0.tsv")).unwrap();
        let body: Vec<&str> = snap.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body.len(), 1);
        let _ = fs::remove_dir_all(&cfg.out);
    }

    #[test]
    fn invalid_config_writes_nothing() {
        let cfg = ExperimentConfig { seeds: vec![], ..quick("bad") };
        assert!(run_scenario(&cfg).is_err());
        assert!(!cfg.out.exists());
        let cfg = ExperimentConfig { epsilons: vec![], ..quick("bad2") };
        assert!(sweep_epsilon(&cfg).is_err());
        assert!(!cfg.out.exists());
    }

    #[test]
    fn single_run_has_empty_dispersion() {
        let mut cfg = quick("share");
        cfg.seeds = vec![3];
        cfg.network.nodes = vec![20];
        let r = run_sharing(&cfg).unwrap();
        assert_eq!(r.summary.len(), 4);
        assert!(r.summary.iter().all(|c| c.gamma_std.is_none() && c.eta_std.is_none()));
        let text = fs::read_to_string(cfg.out.join("sharing_summary.csv")).unwrap();
        let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert!(body[0].starts_with("scheme,n,packets"));
        assert!(body[1].starts_with("b-cast,20,0,1,"));
        assert!(body[2].starts_with("ipm,20,2,1,"));
        let _ = fs::remove_dir_all(&cfg.out);
    }

    #[test]
    fn sweep_groups_follow_values() {
        let mut cfg = quick("sweep");
        cfg.epsilons = vec![0.25, 0.4, 0.45, 2.0];
        cfg.replay_length = 200;
        cfg.replay_pool = 20;
        let r = sweep_epsilon(&cfg).unwrap();
        assert_eq!(r.groups.len(), 4);
        assert!(r.rows.iter().filter(|x| x.epsilon == 2.0).all(|x| x.antibodies_created == 1));
        assert!(r.replay.iter().filter(|x| x.epsilon == 2.0).all(|x| x.antibodies_created == 1));
        let _ = fs::remove_dir_all(&cfg.out);
    }

    #[test]
    fn zero_epsilon_replay_creates_one_per_distinct_epitope() {
        let stream = replay_stream(500, 40, 4, 7);
        let cfg = ImmuneConfig { epsilon: 0.0, ..ImmuneConfig::default() };
        let rep = replay_repertoire(&stream, &cfg, 7).unwrap();
        assert_eq!(rep.created() as usize, distinct_epitopes(&stream));
    }
}
