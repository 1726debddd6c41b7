//! Full scenario runs: one arena, one or more robots, a light schedule and
//! optional antibody sharing between robots.

use crate::agent::{IterationRecord, Robot, StepContext, StepRecord};
use crate::arena::{Arena, ArenaConfig, LightSchedule, ScenarioKind, ScenarioSpec};
use crate::controller::EvoConfig;
use crate::error::{Error, Result};
use crate::immune::{ImmuneConfig, Repertoire};
use crate::net::{arena_share_adapter, ArenaSharing, CommLedger, Topology};
use crate::rng::{stream_rng, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub spec: ScenarioSpec,
    pub immune: ImmuneConfig,
    pub evo: EvoConfig,
    pub arena: ArenaConfig,
    pub robots: usize,
    pub sharing: ArenaSharing,
    /// Keep per-step fitness terms.
    pub trace_steps: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::new(ScenarioKind::S1)
    }
}

impl ScenarioConfig {
    /// Defaults for `kind`, including its epsilon.
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            spec: ScenarioSpec::new(kind),
            immune: ImmuneConfig { epsilon: kind.default_epsilon(), ..ImmuneConfig::default() },
            evo: EvoConfig::default(),
            arena: ArenaConfig::default(),
            robots: 1,
            sharing: ArenaSharing::Off,
            trace_steps: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.immune.validate()?;
        self.evo.validate()?;
        self.arena.validate()?;
        if self.robots == 0 {
            return Err(Error::Config("at least one robot is required".into()));
        }
        Ok(())
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub records: Vec<IterationRecord>,
    pub trace: Vec<StepRecord>,
    pub repertoires: Vec<Repertoire>,
    pub schedule: LightSchedule,
    pub b_light_threshold: f64,
    pub ticks: u64,
    pub messages: CommLedger,
}

impl ScenarioOutcome {
    /// First tick at which the light changed, if it did within the run.
    pub fn first_toggle(&self) -> Option<u64> {
        self.schedule.toggles.first().copied().filter(|&t| t < self.ticks)
    }

    /// Antibodies ever created by `robot`.
    pub fn created(&self, robot: usize) -> u64 {
        self.repertoires[robot].created()
    }
}

pub fn run_scenario_seed(cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let kind = cfg.spec.kind;
    let mut arena = Arena::random(cfg.arena, kind.uses_gripper(), cfg.robots, &mut stream_rng(seed, streams::LAYOUT));
    let schedule = if kind == ScenarioKind::S3 {
        let horizon = cfg.spec.total_iterations * cfg.spec.tau;
        LightSchedule::alternating(
            cfg.spec.light_segment_min,
            cfg.spec.light_segment_max,
            horizon,
            &mut stream_rng(seed, streams::LIGHT),
        )
    } else {
        LightSchedule::always_on()
    };
    let b_light_threshold = cfg.spec.b_light_threshold.unwrap_or_else(|| arena.calibrate_light_threshold());
    let ctx = StepContext {
        kind,
        epsilon: cfg.immune.epsilon,
        b_light_threshold,
        dt: cfg.arena.dt,
        tau: cfg.spec.tau,
    };
    let mut robots: Vec<Robot> =
        (0..cfg.robots).map(|i| Robot::new(i, stream_rng(seed, streams::ROBOT_BASE + i as u64))).collect();
    let links = Topology::complete(cfg.robots, cfg.robots.saturating_sub(1))?;
    let mut messages = CommLedger::new(cfg.robots);
    let mut records = Vec::new();
    let mut trace = Vec::new();
    let total = cfg.spec.total_iterations;

    let mut tick = 0;
    while robots.iter().any(|r| r.iterations_done < total) {
        arena.light_on = schedule.is_on(tick);
        for robot in &mut robots {
            let trace = cfg.trace_steps.then_some(&mut trace);
            robot.tick(&mut arena, tick, &ctx, &cfg.immune, &cfg.evo, total, &mut records, trace)?;
        }
        tick += 1;
        if cfg.robots > 1 && tick % cfg.spec.tau == 0 {
            let ireps: Vec<Repertoire> = robots.iter().map(|r| r.irep.clone()).collect();
            let refs: Vec<&Repertoire> = ireps.iter().collect();
            let mut xreps: Vec<Repertoire> = robots.iter_mut().map(|r| std::mem::take(&mut r.xrep)).collect();
            arena_share_adapter(&refs, &mut xreps, &links, &mut messages, cfg.sharing);
            for (robot, x) in robots.iter_mut().zip(xreps) {
                robot.xrep = x;
            }
            messages.end_round();
        }
    }

    Ok(ScenarioOutcome {
        records,
        trace,
        repertoires: robots.into_iter().map(|r| r.irep).collect(),
        schedule,
        b_light_threshold,
        ticks: tick,
        messages,
    })
}
