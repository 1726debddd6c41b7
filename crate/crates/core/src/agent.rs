//! One robot's control loop: pick an antibody for the sensed state, run its
//! controller (or a mutant) for an evaluation window and feed the result back
//! into the antibody's evolution state.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arena::{fitness_step, Arena, ScenarioKind, StepInputs, StepTerms, US_MAX_CM, LS_MAX};
use crate::controller::{evolve_step, ControllerGenome, EvoConfig, EvoOutcome, Topology};
use crate::error::{Error, Result};
use crate::immune::{decay_and_purge, immune_step, Antibody, AntibodyId, ImmuneConfig, Repertoire, Source};

use rand::Rng;

/// How the current antibody was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionEvent {
    Create,
    SelectSame,
    Transition,
}

/// Which controller a window ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Evaluated {
    /// The antibody's untested initial controller.
    First,
    Parent,
    Offspring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvoRecord {
    FirstEvaluation,
    ParentRerun,
    ReplaceOffspring,
    KeepParent,
}

/// Per-run constants a window needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub kind: ScenarioKind,
    pub epsilon: f64,
    pub b_light_threshold: f64,
    pub dt: f64,
    pub tau: u64,
}

/// One completed evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub robot: usize,
    pub iteration: u64,
    /// Arena tick at which the window started.
    pub tick: u64,
    pub antibody_id: u64,
    pub event: SelectionEvent,
    /// `local` or `peer-<robot>-<id>` for adopted antibodies.
    pub source: String,
    pub evaluated: Evaluated,
    pub evo_outcome: EvoRecord,
    pub steps: u64,
    pub aborted: bool,
    pub fitness: f64,
    pub parent_fitness_before: f64,
    pub sigma_before: f64,
    pub sigma_after: f64,
    pub concentration: f64,
    pub light_on: bool,
    pub irep_size: usize,
}

/// Fitness terms of one simulation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub robot: usize,
    pub iteration: u64,
    pub step: u64,
    pub light_on: bool,
    pub b_light: bool,
    pub obstacle: f64,
    pub light: f64,
    pub puck: f64,
    pub antipuck: f64,
}

fn source_label(source: Source) -> String {
    match source {
        Source::Intrinsic => "local".to_string(),
        Source::Extrinsic(p) => format!("peer-{}-{}", p.sender, p.sender_id),
    }
}

/// An evaluation window in progress.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub antibody: AntibodyId,
    pub evaluated: Evaluated,
    pub genome: ControllerGenome,
    pub steps: u64,
    pub sum: f64,
    pub aborted: bool,
    /// A puck was in the gripper zone at some point of this window.
    pub b_detected: bool,
}

impl Window {
    pub fn new(antibody: AntibodyId, evaluated: Evaluated, genome: ControllerGenome) -> Self {
        Self { antibody, evaluated, genome, steps: 0, sum: 0.0, aborted: false, b_detected: false }
    }

    /// Senses, and if the epitope is still within the antibody's active region,
    /// runs one control and physics step. Returns `None` (and marks the window
    /// aborted) when the epitope has left.
    pub fn step(&mut self, arena: &mut Arena, robot: usize, ab: &Antibody, ctx: &StepContext) -> Result<Option<StepTerms>> {
        let frame = arena.sense(robot);
        let ep = frame.epitope();
        if !ab.recognizes(&ep, ctx.epsilon)? {
            self.aborted = true;
            return Ok(None);
        }
        let out = self.genome.forward(ep.values())?;
        let motor = [out[0], out[1]];
        let motion = arena.step_physics(robot, motor, ctx.dt);
        let after = arena.sense(robot);
        self.b_detected |= frame.puck_seen() || after.puck_seen();
        let (v_trans, v_rot) = StepInputs::speeds(motor);
        let inputs = StepInputs {
            v_trans: v_trans * motion.progress,
            v_rot,
            d: if motion.collided { 0.0 } else { after.us / US_MAX_CM },
            ls_left: after.ls_left / LS_MAX,
            ls_right: after.ls_right / LS_MAX,
            b_puck: arena.robots[robot].held.is_some(),
            b_light: after.max_light() >= ctx.b_light_threshold,
            b_detected: self.b_detected,
        };
        let terms = fitness_step(ctx.kind, &inputs);
        self.steps += 1;
        self.sum += terms.total();
        Ok(Some(terms))
    }

    pub fn is_complete(&self, tau: u64) -> bool {
        self.aborted || self.steps >= tau
    }

    /// Mean per-step fitness over the steps actually run.
    pub fn fitness(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.sum / self.steps as f64
        }
    }
}

/// Result of a standalone window run.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    pub fitness: f64,
    pub steps: u64,
    pub aborted: bool,
    pub terms: Vec<StepTerms>,
}

/// Runs `genome` on behalf of `ab` for up to `ctx.tau` steps, stopping early
/// once the sensed epitope leaves the antibody's active region.
pub fn run_evaluation_window(
    arena: &mut Arena,
    robot: usize,
    ab: &Antibody,
    genome: ControllerGenome,
    ctx: &StepContext,
) -> Result<WindowResult> {
    let mut w = Window::new(ab.id, Evaluated::Parent, genome);
    let mut terms = Vec::new();
    while !w.is_complete(ctx.tau) {
        if let Some(t) = w.step(arena, robot, ab, ctx)? {
            terms.push(t);
        }
    }
    Ok(WindowResult { fitness: w.fitness(), steps: w.steps, aborted: w.aborted, terms })
}

struct OpenWindow {
    window: Window,
    event: SelectionEvent,
    source: Source,
    tick: u64,
    light_on: bool,
}

/// A robot carrying its repertoires and the state of its control loop.
pub struct Robot {
    pub index: usize,
    pub irep: Repertoire,
    pub xrep: Repertoire,
    pub iterations_done: u64,
    current: Option<(AntibodyId, Source)>,
    open: Option<OpenWindow>,
    rng: ChaCha8Rng,
}

impl Robot {
    pub fn new(index: usize, rng: ChaCha8Rng) -> Self {
        Self {
            index,
            irep: Repertoire::new(),
            xrep: Repertoire::new(),
            iterations_done: 0,
            current: None,
            open: None,
            rng,
        }
    }

    pub fn current(&self) -> Option<AntibodyId> {
        self.current.map(|(id, _)| id)
    }

    /// Chooses the antibody for the next window and how to evaluate it.
    fn begin(&mut self, arena: &Arena, tick: u64, immune: &ImmuneConfig, evo: &EvoConfig) -> Result<()> {
        let ep = arena.sense(self.index).epitope();
        let same = match self.current {
            Some((id, _)) => self.irep.get(id).map_or(Ok(false), |ab| ab.recognizes(&ep, immune.epsilon))?,
            None => false,
        };
        let event = if same {
            SelectionEvent::SelectSame
        } else {
            if let Some((prev, _)) = self.current {
                decay_and_purge(&mut self.irep, Some(prev), immune);
            }
            let out = immune_step(&mut self.irep, &self.xrep, &ep, immune, Topology::ARENA, &mut self.rng)?;
            self.xrep.clear();
            self.current = Some((out.selection.id, out.selection.source));
            if out.created {
                SelectionEvent::Create
            } else {
                SelectionEvent::Transition
            }
        };
        let (id, source) = self.current.expect("set above");
        let ab = self.irep.get(id).ok_or_else(|| Error::ContractViolation(format!("antibody {id} missing")))?;
        let (evaluated, genome) = if !ab.evo.is_evaluated() {
            (Evaluated::First, ab.controller.clone())
        } else if self.rng.gen::<f64>() < evo.p_offspring {
            (Evaluated::Offspring, ab.controller.mutate(ab.evo.sigma, &mut self.rng))
        } else {
            (Evaluated::Parent, ab.controller.clone())
        };
        self.open = Some(OpenWindow {
            window: Window::new(id, evaluated, genome),
            event,
            source,
            tick,
            light_on: arena.light_on,
        });
        Ok(())
    }

    fn finish(&mut self, immune: &ImmuneConfig) -> Result<IterationRecord> {
        let open = self.open.take().expect("window open");
        let w = open.window;
        if w.steps == 0 {
            return Err(Error::ContractViolation("evaluation window ended without a step".into()));
        }
        let fitness = w.fitness();
        let ab = self
            .irep
            .get_mut(w.antibody)
            .ok_or_else(|| Error::ContractViolation(format!("antibody {} missing", w.antibody)))?;
        let parent_fitness_before = ab.evo.parent_fitness;
        let sigma_before = ab.evo.sigma;
        let evo_outcome = match w.evaluated {
            Evaluated::First => {
                ab.evo.record_parent_run(fitness);
                EvoRecord::FirstEvaluation
            }
            Evaluated::Parent => {
                ab.evo.record_parent_run(fitness);
                EvoRecord::ParentRerun
            }
            Evaluated::Offspring => {
                let parent = std::mem::replace(&mut ab.controller, ControllerGenome::zeros(Topology::ARENA));
                let (genome, evo, outcome) =
                    evolve_step(ab.evo, parent, w.genome, fitness, immune.sigma_bounds());
                ab.controller = genome;
                ab.evo = evo;
                match outcome {
                    EvoOutcome::Replaced => EvoRecord::ReplaceOffspring,
                    EvoOutcome::Kept => EvoRecord::KeepParent,
                }
            }
        };
        ab.absorb_fitness();
        self.iterations_done += 1;
        Ok(IterationRecord {
            robot: self.index,
            iteration: self.iterations_done,
            tick: open.tick,
            antibody_id: w.antibody.0,
            event: open.event,
            source: source_label(open.source),
            evaluated: w.evaluated,
            evo_outcome,
            steps: w.steps,
            aborted: w.aborted,
            fitness,
            parent_fitness_before,
            sigma_before,
            sigma_after: ab.evo.sigma,
            concentration: ab.concentration,
            light_on: open.light_on,
            irep_size: self.irep.len(),
        })
    }

    /// Advances the robot by one simulation step, opening and closing windows
    /// as needed. A window that aborts is closed and the next one starts in
    /// the same tick, so every tick moves the robot exactly once until its
    /// iteration budget is spent.
    #[allow(clippy::too_many_arguments)]
    pub fn tick(
        &mut self,
        arena: &mut Arena,
        tick: u64,
        ctx: &StepContext,
        immune: &ImmuneConfig,
        evo: &EvoConfig,
        total_iterations: u64,
        records: &mut Vec<IterationRecord>,
        trace: Option<&mut Vec<StepRecord>>,
    ) -> Result<()> {
        loop {
            if self.iterations_done >= total_iterations {
                return Ok(());
            }
            if self.open.is_none() {
                self.begin(arena, tick, immune, evo)?;
            }
            let open = self.open.as_mut().expect("opened above");
            let ab = self
                .irep
                .get(open.window.antibody)
                .ok_or_else(|| Error::ContractViolation("selected antibody missing".into()))?;
            match open.window.step(arena, self.index, ab, ctx)? {
                Some(terms) => {
                    if let Some(trace) = trace {
                        let after = arena.sense(self.index);
                        trace.push(StepRecord {
                            robot: self.index,
                            iteration: self.iterations_done + 1,
                            step: open.window.steps,
                            light_on: arena.light_on,
                            b_light: after.max_light() >= ctx.b_light_threshold,
                            obstacle: terms.obstacle,
                            light: terms.light,
                            puck: terms.puck,
                            antipuck: terms.antipuck,
                        });
                    }
                    if open.window.is_complete(ctx.tau) {
                        records.push(self.finish(immune)?);
                    }
                    return Ok(());
                }
                None => records.push(self.finish(immune)?),
            }
        }
    }
}
