//! Deterministic 2-D arena: differential-drive robots, wall obstacles, pucks
//! that can be gripped, a switchable light at the centre, and the per-step
//! fitness terms of the three scenarios.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::immune::{normalize_epitope, Epitope, ARENA_SENSOR_RANGES};

/// Colour sensor code for a yellow puck.
pub const CS_PUCK: f64 = 3.0;
/// Colour sensor reading with nothing in front.
pub const CS_DEFAULT: f64 = 7.0;
pub const US_MAX_CM: f64 = 200.0;
pub const LS_MAX: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArenaConfig {
    /// Metres.
    pub width: f64,
    pub height: f64,
    pub puck_count: usize,
    /// Light position; `None` means the arena centre.
    pub light_pos: Option<Point>,
    /// Light falloff radius in metres; `None` means the arena diagonal.
    pub light_cutoff: Option<f64>,
    /// Fraction of the motor's top speed used in operation.
    pub max_speed_fraction: f64,
    /// Top wheel speed in m/s.
    pub v_max: f64,
    pub robot_radius: f64,
    pub wheelbase: f64,
    /// Seconds per simulation step.
    pub dt: f64,
    pub puck_radius: f64,
    /// Maximum distance from the gripper mouth to a capturable puck centre.
    pub capture_distance: f64,
    pub capture_half_angle_deg: f64,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            width: 2.0,
            height: 2.0,
            puck_count: 10,
            light_pos: None,
            light_cutoff: None,
            max_speed_fraction: 0.7,
            v_max: 0.2,
            robot_radius: 0.09,
            wheelbase: 0.14,
            dt: 0.1,
            puck_radius: 0.03,
            capture_distance: 0.06,
            capture_half_angle_deg: 30.0,
        }
    }
}

impl ArenaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.width > 2.0 * self.robot_radius && self.height > 2.0 * self.robot_radius) {
            return bad(format!("arena {}x{} too small for the robot", self.width, self.height));
        }
        if !(8..=12).contains(&self.puck_count) {
            return bad(format!("puck_count {} outside [8, 12]", self.puck_count));
        }
        if !(self.max_speed_fraction > 0.0 && self.max_speed_fraction <= 1.0) {
            return bad(format!("max_speed_fraction {} outside (0, 1]", self.max_speed_fraction));
        }
        if !(self.v_max > 0.0 && self.wheelbase > 0.0 && self.robot_radius > 0.0 && self.dt > 0.0) {
            return bad("v_max, wheelbase, robot_radius and dt must be positive".into());
        }
        if let Some(c) = self.light_cutoff {
            if !(c > 0.0) {
                return bad(format!("light_cutoff {c} must be positive"));
            }
        }
        Ok(())
    }

    pub fn light(&self) -> Point {
        self.light_pos.unwrap_or(Point::new(self.width / 2.0, self.height / 2.0))
    }

    pub fn cutoff(&self) -> f64 {
        self.light_cutoff.unwrap_or(self.width.hypot(self.height))
    }

    /// Largest wheel speed reachable at the configured operating fraction.
    pub fn wheel_speed_cap(&self) -> f64 {
        self.max_speed_fraction * self.v_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Phototaxis with obstacle avoidance.
    S1,
    /// S1 plus pushing pucks towards the light.
    S2,
    /// S2 while the light is on, puck repulsion while it is off.
    S3,
}

impl ScenarioKind {
    /// Cross-reactivity threshold used for this scenario by default.
    pub fn default_epsilon(self) -> f64 {
        match self {
            ScenarioKind::S1 => 0.45,
            ScenarioKind::S2 => 0.4,
            ScenarioKind::S3 => 0.25,
        }
    }

    pub fn default_iterations(self) -> u64 {
        match self {
            ScenarioKind::S1 => 200,
            ScenarioKind::S2 | ScenarioKind::S3 => 500,
        }
    }

    pub fn uses_gripper(self) -> bool {
        !matches!(self, ScenarioKind::S1)
    }

    /// Upper bound of the per-step fitness summand.
    pub fn step_bound(self) -> f64 {
        match self {
            ScenarioKind::S1 => 2.0,
            ScenarioKind::S2 | ScenarioKind::S3 => 4.0,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::S1 => "s1",
            ScenarioKind::S2 => "s2",
            ScenarioKind::S3 => "s3",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(ScenarioKind::S1),
            "s2" => Ok(ScenarioKind::S2),
            "s3" => Ok(ScenarioKind::S3),
            other => Err(Error::Config(format!("unknown scenario {other:?} (expected s1, s2 or s3)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(skip)]
    pub kind: ScenarioKind,
    /// Evaluation window length in simulation steps.
    pub tau: u64,
    #[serde(skip)]
    pub total_iterations: u64,
    /// Bounds on the length of each light ON/OFF segment, in steps (S3 only).
    pub light_segment_min: u64,
    pub light_segment_max: u64,
    /// Light level (0-100) at or above which `b_light` is set. `None`
    /// calibrates it from a probe grid at scenario start.
    pub b_light_threshold: Option<f64>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self::new(ScenarioKind::S1)
    }
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind) -> Self {
        let tau = 30;
        Self {
            kind,
            tau,
            total_iterations: kind.default_iterations(),
            light_segment_min: 60 * tau,
            light_segment_max: 120 * tau,
            b_light_threshold: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::Config("tau must be at least 1".into()));
        }
        if self.total_iterations == 0 {
            return Err(Error::Config("total_iterations must be at least 1".into()));
        }
        if self.kind == ScenarioKind::S3 {
            if self.light_segment_min < 5 * self.tau {
                return Err(Error::Config(format!(
                    "light segments of {} steps cannot hold 5 windows of {} steps",
                    self.light_segment_min, self.tau
                )));
            }
            if self.light_segment_max < self.light_segment_min {
                return Err(Error::Config("light_segment_max below light_segment_min".into()));
            }
        }
        Ok(())
    }
}

/// Light on/off state over simulation time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LightSchedule {
    pub initially_on: bool,
    /// Steps at which the light flips, ascending.
    pub toggles: Vec<u64>,
}

impl LightSchedule {
    pub fn always_on() -> Self {
        Self { initially_on: true, toggles: Vec::new() }
    }

    /// Starts dark and flips after segments of random length in
    /// `[min_len, max_len]` steps until `horizon` is covered.
    pub fn alternating<R: Rng + ?Sized>(min_len: u64, max_len: u64, horizon: u64, rng: &mut R) -> Self {
        let mut toggles = Vec::new();
        let mut t = 0;
        loop {
            t += rng.gen_range(min_len..=max_len);
            if t >= horizon {
                break;
            }
            toggles.push(t);
        }
        Self { initially_on: false, toggles }
    }

    pub fn is_on(&self, step: u64) -> bool {
        let flips = self.toggles.partition_point(|&t| t <= step);
        self.initially_on ^ (flips % 2 == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians, counter-clockwise from +x.
    pub heading: f64,
}

impl Pose {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn forward(&self) -> (f64, f64) {
        (self.heading.cos(), self.heading.sin())
    }
}

/// Exact differential-drive motion over `dt` with constant wheel speeds.
pub fn integrate_pose(pose: Pose, v_left: f64, v_right: f64, wheelbase: f64, dt: f64) -> Pose {
    let v = 0.5 * (v_left + v_right);
    let omega = (v_right - v_left) / wheelbase;
    let heading = pose.heading + omega * dt;
    if omega.abs() < 1e-12 {
        Pose { x: pose.x + v * dt * pose.heading.cos(), y: pose.y + v * dt * pose.heading.sin(), heading }
    } else {
        let r = v / omega;
        Pose {
            x: pose.x + r * (heading.sin() - pose.heading.sin()),
            y: pose.y - r * (heading.cos() - pose.heading.cos()),
            heading,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose,
    /// Wheel speeds in m/s from the last command.
    pub v_left: f64,
    pub v_right: f64,
    pub held: Option<usize>,
}

impl RobotState {
    pub fn at(pose: Pose) -> Self {
        Self { pose, v_left: 0.0, v_right: 0.0, held: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Puck {
    pub pos: Point,
    pub held_by: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    /// Centimetres to the nearest wall along the heading, capped at 200.
    pub us: f64,
    pub cs: f64,
    pub ls_left: f64,
    pub ls_right: f64,
}

impl SensorFrame {
    pub fn epitope(&self) -> Epitope {
        normalize_epitope(&[self.us, self.cs, self.ls_left, self.ls_right], &ARENA_SENSOR_RANGES)
            .expect("sensor frame has one reading per arena sensor")
    }

    pub fn puck_seen(&self) -> bool {
        self.cs == CS_PUCK
    }

    pub fn max_light(&self) -> f64 {
        self.ls_left.max(self.ls_right)
    }
}

/// Result of advancing one robot by one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub collided: bool,
    /// Share of the commanded forward travel actually made, in [0, 1].
    /// Below 1 only when a wall stopped the robot.
    pub progress: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arena {
    pub config: ArenaConfig,
    pub pucks: Vec<Puck>,
    pub robots: Vec<RobotState>,
    pub light_on: bool,
    pub gripper: bool,
}

impl Arena {
    pub fn new(config: ArenaConfig, gripper: bool) -> Self {
        Self { config, pucks: Vec::new(), robots: Vec::new(), light_on: true, gripper }
    }

    /// Scatters `puck_count` pucks and places `robots` robots at random poses.
    pub fn random<R: Rng + ?Sized>(config: ArenaConfig, gripper: bool, robots: usize, rng: &mut R) -> Self {
        let mut arena = Self::new(config, gripper);
        let margin = 0.1;
        for _ in 0..config.puck_count {
            let pos = Point::new(
                rng.gen_range(margin..config.width - margin),
                rng.gen_range(margin..config.height - margin),
            );
            arena.pucks.push(Puck { pos, held_by: None });
        }
        let r = config.robot_radius + 0.01;
        for _ in 0..robots {
            let pose = Pose {
                x: rng.gen_range(r..config.width - r),
                y: rng.gen_range(r..config.height - r),
                heading: rng.gen_range(-PI..PI),
            };
            arena.robots.push(RobotState::at(pose));
        }
        arena
    }

    fn mouth(&self, pose: &Pose) -> Point {
        let (c, s) = pose.forward();
        let r = self.config.robot_radius;
        Point::new(pose.x + r * c, pose.y + r * s)
    }

    fn in_capture_zone(&self, pose: &Pose, p: &Point) -> bool {
        let mouth = self.mouth(pose);
        if mouth.dist(p) > self.config.capture_distance {
            return false;
        }
        let bearing = (p.y - pose.y).atan2(p.x - pose.x) - pose.heading;
        let bearing = (bearing + PI).rem_euclid(2.0 * PI) - PI;
        bearing.abs() <= self.config.capture_half_angle_deg.to_radians()
    }

    /// Maps motor outputs in (-1, 1) to wheel speeds, moves the robot, clamps
    /// it at the walls and carries, captures or releases pucks.
    pub fn step_physics(&mut self, robot: usize, motor: [f64; 2], dt: f64) -> Motion {
        let cap = self.config.wheel_speed_cap();
        let v_left = motor[0].clamp(-1.0, 1.0) * cap;
        let v_right = motor[1].clamp(-1.0, 1.0) * cap;
        let reversing = v_left + v_right < 0.0;

        if reversing {
            if let Some(p) = self.robots[robot].held.take() {
                self.pucks[p].held_by = None;
            }
        }

        let cfg = self.config;
        let state = &mut self.robots[robot];
        state.v_left = v_left;
        state.v_right = v_right;
        let start = state.pose;
        let mut pose = integrate_pose(start, v_left, v_right, cfg.wheelbase, dt);
        let r = cfg.robot_radius;
        let (x, y) = (pose.x.clamp(r, cfg.width - r), pose.y.clamp(r, cfg.height - r));
        let collided = x != pose.x || y != pose.y;
        let (c, s) = start.forward();
        let wanted = (pose.x - start.x) * c + (pose.y - start.y) * s;
        let made = (x - start.x) * c + (y - start.y) * s;
        let progress = match (collided, wanted > 0.0) {
            (true, true) if made > 0.0 => (made / wanted).min(1.0),
            (true, true) => 0.0,
            _ => 1.0,
        };
        pose.x = x;
        pose.y = y;
        state.pose = pose;

        if let Some(p) = state.held {
            let mouth = self.mouth(&pose);
            self.pucks[p].pos = mouth;
        } else if self.gripper && !reversing {
            let free = (0..self.pucks.len())
                .find(|&i| self.pucks[i].held_by.is_none() && self.in_capture_zone(&pose, &self.pucks[i].pos));
            if let Some(p) = free {
                self.pucks[p].held_by = Some(robot);
                self.pucks[p].pos = self.mouth(&pose);
                self.robots[robot].held = Some(p);
            }
        }
        Motion { collided, progress }
    }

    /// Distance in metres from `from` along `heading` to the nearest wall.
    fn ray_to_wall(&self, from: Point, heading: f64) -> f64 {
        let (c, s) = (heading.cos(), heading.sin());
        let mut best = f64::INFINITY;
        if c > 1e-12 {
            best = best.min((self.config.width - from.x) / c);
        } else if c < -1e-12 {
            best = best.min(-from.x / c);
        }
        if s > 1e-12 {
            best = best.min((self.config.height - from.y) / s);
        } else if s < -1e-12 {
            best = best.min(-from.y / s);
        }
        best.max(0.0)
    }

    fn light_level(&self, at: Point) -> f64 {
        if !self.light_on {
            return 0.0;
        }
        let d = at.dist(&self.config.light());
        LS_MAX * (1.0 - d / self.config.cutoff()).max(0.0)
    }

    fn light_sensors(&self, pose: &Pose) -> (Point, Point) {
        let r = self.config.robot_radius;
        let (c, s) = pose.forward();
        (Point::new(pose.x - r * s, pose.y + r * c), Point::new(pose.x + r * s, pose.y - r * c))
    }

    pub fn sense(&self, robot: usize) -> SensorFrame {
        let state = &self.robots[robot];
        let pose = state.pose;
        let us = (self.ray_to_wall(self.mouth(&pose), pose.heading) * 100.0).min(US_MAX_CM);
        let puck_in_zone = state.held.is_some()
            || self.pucks.iter().any(|p| p.held_by.is_none() && self.in_capture_zone(&pose, &p.pos));
        let (left, right) = self.light_sensors(&pose);
        SensorFrame {
            us,
            cs: if puck_in_zone { CS_PUCK } else { CS_DEFAULT },
            ls_left: self.light_level(left),
            ls_right: self.light_level(right),
        }
    }

    /// Mean light-sensor reading with the light on over a 5x5 grid of probe
    /// positions at cell centres.
    pub fn calibrate_light_threshold(&self) -> f64 {
        let mut probe = self.clone();
        probe.light_on = true;
        probe.robots = vec![RobotState::at(Pose { x: 0.0, y: 0.0, heading: 0.0 })];
        let mut sum = 0.0;
        let mut n = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                probe.robots[0].pose.x = (i as f64 + 0.5) * self.config.width / 5.0;
                probe.robots[0].pose.y = (j as f64 + 0.5) * self.config.height / 5.0;
                let f = probe.sense(0);
                sum += f.ls_left + f.ls_right;
                n += 2.0;
            }
        }
        sum / n
    }
}

/// Obstacle-avoidance term: fast, straight and far from walls.
pub fn fitness_obstacle(v_trans: f64, v_rot: f64, d: f64) -> f64 {
    v_trans * (1.0 - v_rot) * d
}

/// Phototaxis term: the brighter of the two normalized light readings.
pub fn fitness_light(ls_left: f64, ls_right: f64) -> f64 {
    ls_left.max(ls_right)
}

pub fn fitness_puck(b_puck: bool, v_trans: f64) -> f64 {
    f64::from(u8::from(b_puck)) + v_trans
}

/// Rewards moving on without holding a puck once one has been detected.
pub fn fitness_antipuck(b_detected: bool, b_puck: bool, v_trans: f64) -> f64 {
    if b_detected && !b_puck {
        v_trans
    } else {
        0.0
    }
}

/// Normalized quantities the fitness terms are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInputs {
    pub v_trans: f64,
    pub v_rot: f64,
    /// Normalized obstacle distance; zero on a wall contact.
    pub d: f64,
    pub ls_left: f64,
    pub ls_right: f64,
    pub b_puck: bool,
    pub b_light: bool,
    pub b_detected: bool,
}

impl StepInputs {
    /// Translational and rotational speed from motor outputs in (-1, 1).
    /// Only forward motion counts as translation.
    pub fn speeds(motor: [f64; 2]) -> (f64, f64) {
        let (l, r) = (motor[0].clamp(-1.0, 1.0), motor[1].clamp(-1.0, 1.0));
        ((0.5 * (l + r)).clamp(0.0, 1.0), 0.5 * (l - r).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepTerms {
    pub obstacle: f64,
    pub light: f64,
    /// Puck term after gating.
    pub puck: f64,
    /// Antipuck term after gating.
    pub antipuck: f64,
}

impl StepTerms {
    pub fn total(&self) -> f64 {
        self.obstacle + self.light + self.puck + self.antipuck
    }
}

pub fn fitness_step(kind: ScenarioKind, x: &StepInputs) -> StepTerms {
    let obstacle = fitness_obstacle(x.v_trans, x.v_rot, x.d);
    let light = fitness_light(x.ls_left, x.ls_right);
    let (puck, antipuck) = match kind {
        ScenarioKind::S1 => (0.0, 0.0),
        ScenarioKind::S2 => (fitness_puck(x.b_puck, x.v_trans), 0.0),
        ScenarioKind::S3 if x.b_light => (fitness_puck(x.b_puck, x.v_trans), 0.0),
        ScenarioKind::S3 => (0.0, fitness_antipuck(x.b_detected, x.b_puck, x.v_trans)),
    };
    StepTerms { obstacle, light, puck, antipuck }
}
