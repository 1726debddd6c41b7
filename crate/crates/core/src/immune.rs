//! Shape-space affinity and the per-robot clonal selection loop.
//!
//! Sensor readings are normalized into an [`Epitope`]. Each [`Antibody`] pairs a
//! fixed [`Paratope`] with an evolving controller; the antibodies whose paratope
//! lies within `epsilon` of the current epitope are the candidates, and the one
//! with the highest concentration is executed.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerGenome, EvoState, SigmaBounds, Topology};
use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorRange {
    pub lo: f64,
    pub hi: f64,
}

impl SensorRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
}

/// Ultrasonic (cm), colour code, left light, right light.
pub const ARENA_SENSOR_RANGES: [SensorRange; 4] = [
    SensorRange::new(0.0, 200.0),
    SensorRange::new(0.0, 9.0),
    SensorRange::new(0.0, 100.0),
    SensorRange::new(0.0, 100.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epitope(Vec<f64>);

impl Epitope {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("epitope component {v} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Clamps each reading into its range and rescales it to [0, 1].
pub fn normalize_epitope(raw: &[f64], ranges: &[SensorRange]) -> Result<Epitope> {
    if raw.len() != ranges.len() {
        return Err(Error::Config(format!(
            "{} sensor readings but {} sensor ranges",
            raw.len(),
            ranges.len()
        )));
    }
    let mut values = Vec::with_capacity(raw.len());
    for (&x, r) in raw.iter().zip(ranges) {
        if !(r.hi > r.lo) {
            return Err(Error::Config(format!("degenerate sensor range [{}, {}]", r.lo, r.hi)));
        }
        if x.is_nan() {
            return Err(Error::Config("NaN sensor reading".into()));
        }
        values.push((x.clamp(r.lo, r.hi) - r.lo) / (r.hi - r.lo));
    }
    Ok(Epitope(values))
}

/// Fixed point in shape space an antibody responds to. Set once from the
/// triggering epitope and never modified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paratope(Vec<f64>);

impl Paratope {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl From<&Epitope> for Paratope {
    fn from(ep: &Epitope) -> Self {
        Paratope(ep.0.clone())
    }
}

/// Euclidean distance between epitope and paratope. Smaller is a stronger match.
pub fn measure_affinity(ep: &Epitope, pt: &Paratope) -> Result<f64> {
    ensure_len(pt.0.len(), ep.0.len())?;
    Ok(distance(&ep.0, &pt.0))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AntibodyId(pub u64);

impl fmt::Display for AntibodyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where a foreign antibody came from: the sending robot and its id there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub sender: usize,
    pub sender_id: AntibodyId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Antibody {
    pub id: AntibodyId,
    paratope: Paratope,
    pub controller: ControllerGenome,
    pub concentration: f64,
    pub evo: EvoState,
    pub provenance: Option<Provenance>,
}

impl Antibody {
    pub fn paratope(&self) -> &Paratope {
        &self.paratope
    }

    pub fn affinity(&self, ep: &Epitope) -> Result<f64> {
        measure_affinity(ep, &self.paratope)
    }

    /// Whether `ep` lies inside this antibody's active region.
    pub fn recognizes(&self, ep: &Epitope, epsilon: f64) -> Result<bool> {
        Ok(self.affinity(ep)? <= epsilon)
    }

    /// Folds an evaluated parent fitness into the concentration.
    pub fn absorb_fitness(&mut self) {
        if self.evo.is_evaluated() {
            self.concentration = self.concentration.max(self.evo.parent_fitness);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repertoire {
    antibodies: Vec<Antibody>,
    next_id: u64,
}

impl Default for Repertoire {
    fn default() -> Self {
        Self::new()
    }
}

impl Repertoire {
    pub fn new() -> Self {
        Self { antibodies: Vec::new(), next_id: 1 }
    }

    pub fn len(&self) -> usize {
        self.antibodies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.antibodies.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Antibody> {
        self.antibodies.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = AntibodyId> + '_ {
        self.antibodies.iter().map(|a| a.id)
    }

    /// Id the next created antibody will receive.
    pub fn next_id(&self) -> AntibodyId {
        AntibodyId(self.next_id)
    }

    /// Total antibodies ever created here, including purged ones.
    pub fn created(&self) -> u64 {
        self.next_id - 1
    }

    pub fn get(&self, id: AntibodyId) -> Option<&Antibody> {
        self.antibodies.iter().find(|a| a.id == id)
    }

    pub fn get_mut(&mut self, id: AntibodyId) -> Option<&mut Antibody> {
        self.antibodies.iter_mut().find(|a| a.id == id)
    }

    pub fn clear(&mut self) {
        self.antibodies.clear();
    }

    fn insert_fresh(
        &mut self,
        paratope: Paratope,
        controller: ControllerGenome,
        concentration: f64,
        evo: EvoState,
        provenance: Option<Provenance>,
    ) -> AntibodyId {
        let id = AntibodyId(self.next_id);
        self.next_id += 1;
        self.antibodies.push(Antibody { id, paratope, controller, concentration, evo, provenance });
        id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImmuneConfig {
    /// Cross-reactivity threshold: radius of each active region. Configured
    /// per experiment rather than in the immune table.
    #[serde(skip)]
    pub epsilon: f64,
    /// Probability of executing a locally evolved candidate instead of a
    /// foreign antibody.
    pub p_sharing: f64,
    pub c_init: f64,
    /// Stimulation gain.
    pub kappa: f64,
    /// Multiplicative decay applied to non-selected antibodies per outer iteration.
    pub decay: f64,
    pub c_purge: f64,
    pub sigma_init: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for ImmuneConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.45,
            p_sharing: 0.7,
            c_init: 0.1,
            kappa: 0.1,
            decay: 0.995,
            c_purge: 0.01,
            sigma_init: 0.2,
            sigma_min: 0.01,
            sigma_max: 1.0,
        }
    }
}

impl ImmuneConfig {
    pub fn sigma_bounds(&self) -> SigmaBounds {
        SigmaBounds { min: self.sigma_min, max: self.sigma_max }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon {} must be finite and non-negative", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.p_sharing) {
            return bad(format!("p_sharing {} outside [0, 1]", self.p_sharing));
        }
        if !(self.kappa >= 0.0) {
            return bad(format!("kappa {} must be non-negative", self.kappa));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("decay {} outside (0, 1]", self.decay));
        }
        if !(self.c_purge >= 0.0 && self.c_init > self.c_purge) {
            return bad(format!("need c_init ({}) > c_purge ({}) >= 0", self.c_init, self.c_purge));
        }
        if !(self.sigma_min > 0.0
            && self.sigma_min <= self.sigma_init
            && self.sigma_init <= self.sigma_max)
        {
            return bad(format!(
                "need 0 < sigma_min ({}) <= sigma_init ({}) <= sigma_max ({})",
                self.sigma_min, self.sigma_init, self.sigma_max
            ));
        }
        Ok(())
    }
}

/// Concentration increment for a match at distance `psi`: `kappa` at a
/// perfect match, falling linearly to zero at the active-region boundary.
pub fn stimulation_increment(psi: f64, cfg: &ImmuneConfig) -> Result<f64> {
    if psi > cfg.epsilon {
        return Err(Error::ContractViolation(format!(
            "stimulation at psi {psi} beyond epsilon {}",
            cfg.epsilon
        )));
    }
    if cfg.epsilon == 0.0 {
        return Ok(cfg.kappa);
    }
    Ok(cfg.kappa * (1.0 - psi / cfg.epsilon))
}

/// Raises the antibody's concentration by the stimulation increment and
/// returns the new concentration.
pub fn ag_stimulation(psi: f64, ab: &mut Antibody, cfg: &ImmuneConfig) -> Result<f64> {
    ab.concentration += stimulation_increment(psi, cfg)?;
    Ok(ab.concentration)
}

/// Ids of every antibody whose active region contains `ep`, in repertoire
/// order. Each returned antibody is stimulated.
pub fn find_candidates(
    irep: &mut Repertoire,
    ep: &Epitope,
    cfg: &ImmuneConfig,
) -> Result<Vec<AntibodyId>> {
    let mut out = Vec::new();
    for ab in &mut irep.antibodies {
        let psi = ab.affinity(ep)?;
        if psi <= cfg.epsilon {
            ag_stimulation(psi, ab, cfg)?;
            out.push(ab.id);
        }
    }
    Ok(out)
}

/// Appends a fresh antibody centred on `ep` with a random controller.
pub fn create_new_antibody<R: Rng + ?Sized>(
    ep: &Epitope,
    rep: &mut Repertoire,
    cfg: &ImmuneConfig,
    topology: Topology,
    rng: &mut R,
) -> AntibodyId {
    let controller = ControllerGenome::init_random(topology, rng);
    rep.insert_fresh(Paratope::from(ep), controller, cfg.c_init, EvoState::new(cfg.sigma_init), None)
}

/// Matching antibody (psi <= epsilon) with the highest concentration; lowest
/// id on ties.
pub fn select_best_antibody<'a, I>(pool: I, ep: &Epitope, cfg: &ImmuneConfig) -> Result<Option<&'a Antibody>>
where
    I: IntoIterator<Item = &'a Antibody>,
{
    let mut best: Option<&Antibody> = None;
    for ab in pool {
        if !ab.recognizes(ep, cfg.epsilon)? {
            continue;
        }
        best = match best {
            Some(b)
                if b.concentration > ab.concentration
                    || (b.concentration == ab.concentration && b.id <= ab.id) =>
            {
                Some(b)
            }
            _ => Some(ab),
        };
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Intrinsic,
    /// Chosen from the extrinsic repertoire and adopted locally.
    Extrinsic(Provenance),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    /// Local id in the intrinsic repertoire.
    pub id: AntibodyId,
    pub source: Source,
}

/// Picks the antibody to execute from the local candidates or, with
/// probability `1 - p_sharing`, from the extrinsic repertoire. A foreign
/// winner is adopted into `irep` so its evolution persists after `xrep` is
/// cleared.
pub fn choose_execution_source<R: Rng + ?Sized>(
    candidates: &[AntibodyId],
    irep: &mut Repertoire,
    xrep: &Repertoire,
    ep: &Epitope,
    cfg: &ImmuneConfig,
    rng: &mut R,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::ContractViolation("no candidate antibodies".into()));
    }
    let draw: f64 = rng.gen();
    if !(draw < cfg.p_sharing || xrep.is_empty()) {
        if let Some(foreign) = select_best_antibody(xrep.iter(), ep, cfg)? {
            let id = adopt(irep, foreign);
            let provenance = irep.get(id).and_then(|a| a.provenance).expect("adopted antibody has provenance");
            return Ok(Selection { id, source: Source::Extrinsic(provenance) });
        }
    }
    let local = select_best_antibody(candidates.iter().filter_map(|&id| irep.get(id)), ep, cfg)?
        .ok_or_else(|| Error::ContractViolation("candidates do not match the epitope".into()))?;
    Ok(Selection { id: local.id, source: Source::Intrinsic })
}

/// Copies a foreign antibody into `irep`. An earlier adoption of the same
/// (sender, id) is refreshed in place when the incoming controller scored
/// better.
fn adopt(irep: &mut Repertoire, foreign: &Antibody) -> AntibodyId {
    let provenance = foreign.provenance;
    if let Some(existing) = irep.antibodies.iter_mut().find(|a| a.provenance.is_some() && a.provenance == provenance) {
        if foreign.evo.is_evaluated()
            && (!existing.evo.is_evaluated() || foreign.evo.parent_fitness > existing.evo.parent_fitness)
        {
            existing.controller = foreign.controller.clone();
            existing.evo = foreign.evo;
        }
        existing.concentration = existing.concentration.max(foreign.concentration);
        return existing.id;
    }
    irep.insert_fresh(
        foreign.paratope.clone(),
        foreign.controller.clone(),
        foreign.concentration,
        foreign.evo,
        provenance,
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub selection: Selection,
    pub created: bool,
    /// Candidate ids after creation, in repertoire order.
    pub candidates: Vec<AntibodyId>,
}

/// One pass of the outer selection loop: stimulate candidates, create an
/// antibody if none match, then choose what to execute.
pub fn immune_step<R: Rng + ?Sized>(
    irep: &mut Repertoire,
    xrep: &Repertoire,
    ep: &Epitope,
    cfg: &ImmuneConfig,
    topology: Topology,
    rng: &mut R,
) -> Result<StepOutcome> {
    let mut candidates = find_candidates(irep, ep, cfg)?;
    let created = candidates.is_empty();
    if created {
        candidates.push(create_new_antibody(ep, irep, cfg, topology, rng));
    }
    let selection = choose_execution_source(&candidates, irep, xrep, ep, cfg, rng)?;
    Ok(StepOutcome { selection, created, candidates })
}

/// Closes an outer iteration: foreign antibodies are dropped, then every
/// antibody except `selected` decays and those below the purge level leave.
pub fn end_outer_iteration(irep: &mut Repertoire, xrep: &mut Repertoire, selected: AntibodyId, cfg: &ImmuneConfig) {
    xrep.clear();
    decay_and_purge(irep, Some(selected), cfg);
}

pub fn decay_and_purge(irep: &mut Repertoire, selected: Option<AntibodyId>, cfg: &ImmuneConfig) {
    for ab in &mut irep.antibodies {
        if Some(ab.id) != selected {
            ab.concentration *= cfg.decay;
        }
    }
    irep.antibodies.retain(|ab| Some(ab.id) == selected || ab.concentration >= cfg.c_purge);
}

/// Stores a copy of a peer's antibody. A newer copy of the same
/// (sender, sender id) replaces the older one.
pub fn ingest_foreign(xrep: &mut Repertoire, ab: &Antibody, sender: usize) {
    let provenance = Provenance { sender, sender_id: ab.id };
    let mut copy = ab.clone();
    copy.provenance = Some(provenance);
    if let Some(slot) = xrep.antibodies.iter_mut().find(|a| a.provenance == Some(provenance)) {
        copy.id = slot.id;
        *slot = copy;
    } else {
        copy.id = AntibodyId(xrep.next_id);
        xrep.next_id += 1;
        xrep.antibodies.push(copy);
    }
}

/// Tab-separated snapshot: a `#topology` line, a `#next_id` line, then one
/// line per antibody with id, concentration, sigma, paratope and weights.
/// Vector fields hold space-separated decimals.
pub fn write_snapshot(rep: &Repertoire, topology: Topology) -> String {
    let mut out = format!(
        "#topology\t{}\t{}\t{}\n#next_id\t{}\n#id\tconcentration\tsigma\tparatope\tweights\n",
        topology.n_in, topology.n_hidden, topology.n_out, rep.next_id
    );
    for ab in &rep.antibodies {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            ab.id,
            ab.concentration,
            ab.evo.sigma,
            join(ab.paratope.values()),
            join(ab.controller.weights())
        ));
    }
    out
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn parse_snapshot(text: &str) -> Result<Repertoire> {
    let mut topology = None;
    let mut next_id = None;
    let mut antibodies = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let err = |message: String| Error::Parse { line: lineno, message };
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            "" => continue,
            "#topology" => {
                let n: Vec<usize> = fields[1..]
                    .iter()
                    .map(|f| f.parse().map_err(|e| err(format!("bad topology: {e}"))))
                    .collect::<Result<_>>()?;
                if n.len() != 3 {
                    return Err(err("topology needs three sizes".into()));
                }
                topology = Some(Topology::new(n[0], n[1], n[2]));
            }
            "#next_id" => {
                let v = fields.get(1).ok_or_else(|| err("missing next_id".into()))?;
                next_id = Some(v.parse::<u64>().map_err(|e| err(format!("bad next_id: {e}")))?);
            }
            f if f.starts_with('#') => continue,
            _ => {
                let topology = topology.ok_or_else(|| err("antibody before #topology".into()))?;
                if fields.len() != 5 {
                    return Err(err(format!("expected 5 fields, found {}", fields.len())));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("bad number {s:?}: {e}")));
                let vec = |s: &str| s.split(' ').filter(|t| !t.is_empty()).map(num).collect::<Result<Vec<f64>>>();
                let id = AntibodyId(fields[0].parse().map_err(|e| err(format!("bad id: {e}")))?);
                let paratope = Paratope(vec(fields[3])?);
                let controller = ControllerGenome::from_weights(topology, vec(fields[4])?)
                    .map_err(|e| err(e.to_string()))?;
                antibodies.push(Antibody {
                    id,
                    paratope,
                    controller,
                    concentration: num(fields[1])?,
                    evo: EvoState::new(num(fields[2])?),
                    provenance: None,
                });
            }
        }
    }
    let max_id = antibodies.iter().map(|a| a.id.0).max().unwrap_or(0);
    let next_id = next_id.unwrap_or(max_id + 1);
    if next_id <= max_id {
        return Err(Error::Parse { line: 0, message: format!("next_id {next_id} not above max id {max_id}") });
    }
    Ok(Repertoire { antibodies, next_id })
}
