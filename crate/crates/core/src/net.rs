//! Round-based emulation of the collective's communication layer.
//!
//! Nodes learn the OR soft task individually with the (1+1) strategy and share
//! genomes either by broadcasting to all neighbours every round or through a
//! fixed number of intelligent packets that migrate conscientiously (to the
//! least-visited neighbour). Every transfer is booked in a [`CommLedger`] so the
//! schemes can be compared by communications per node.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{evolve_step, ControllerGenome, EvoState, SigmaBounds, Topology as NetTopology};
use crate::error::{Error, Result};
use crate::immune::{ingest_foreign, Repertoire};
use crate::rng::{stream_rng, streams};

pub const DEFAULT_MAX_DEGREE: usize = 5;

/// Undirected communication graph with a per-node degree cap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    adj: Vec<BTreeSet<usize>>,
    max_degree: usize,
}

impl Topology {
    /// Random graph: each node draws a target degree in `0..=max_degree`, then
    /// node pairs are visited in random order and joined while both still
    /// have room.
    pub fn build<R: Rng + ?Sized>(n: usize, max_degree: usize, rng: &mut R) -> Self {
        let target: Vec<usize> = (0..n).map(|_| rng.gen_range(0..=max_degree)).collect();
        let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        pairs.shuffle(rng);
        let mut adj = vec![BTreeSet::new(); n];
        for (i, j) in pairs {
            if adj[i].len() < target[i] && adj[j].len() < target[j] {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
        Self { adj, max_degree }
    }

    /// Every node linked to every other. Fails if that breaks the degree cap.
    pub fn complete(n: usize, max_degree: usize) -> Result<Self> {
        if n > 0 && n - 1 > max_degree {
            return Err(Error::Config(format!("complete graph on {n} nodes exceeds degree cap {max_degree}")));
        }
        let adj = (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
        Ok(Self { adj, max_degree })
    }

    pub fn from_edges(n: usize, max_degree: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::Config(format!("invalid edge ({a}, {b}) for {n} nodes")));
            }
            adj[a].insert(b);
            adj[b].insert(a);
        }
        if adj.iter().any(|s| s.len() > max_degree) {
            return Err(Error::Config(format!("edge list exceeds degree cap {max_degree}")));
        }
        Ok(Self { adj, max_degree })
    }

    /// With probability `p`, replaces the graph by a fresh random one under
    /// the same cap. Returns whether it did.
    pub fn rewire<R: Rng + ?Sized>(&mut self, p: f64, rng: &mut R) -> bool {
        if rng.gen::<f64>() < p {
            *self = Self::build(self.len(), self.max_degree, rng);
            true
        } else {
            false
        }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn neighbors(&self, node: usize) -> &BTreeSet<usize> {
        &self.adj[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adj[node].len()
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Hop distance from `src` to every node; `None` when unreachable.
    pub fn bfs_depths(&self, src: usize) -> Vec<Option<usize>> {
        let mut depth = vec![None; self.len()];
        depth[src] = Some(0);
        let mut frontier = vec![src];
        let mut d = 0;
        while !frontier.is_empty() {
            d += 1;
            let mut next = Vec::new();
            for u in frontier {
                for &v in &self.adj[u] {
                    if depth[v].is_none() {
                        depth[v] = Some(d);
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
        depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Genome,
    Antibody,
    Hello,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Payload,
}

/// In-memory wire record between emulated nodes. A packet exchanging with
/// its host node is recorded with `sender == receiver`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub sender: usize,
    pub receiver: usize,
    pub kind: MessageKind,
    pub size: SizeClass,
    /// Antibodies or genomes carried.
    pub items: usize,
}

impl Message {
    pub fn hello(sender: usize, receiver: usize) -> Self {
        Self { sender, receiver, kind: MessageKind::Hello, size: SizeClass::Small, items: 0 }
    }

    pub fn genome(sender: usize, receiver: usize) -> Self {
        Self { sender, receiver, kind: MessageKind::Genome, size: SizeClass::Payload, items: 1 }
    }
}

/// Each message counts one send at the sender and one receive at the receiver.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommLedger {
    pub sends: Vec<u64>,
    pub receives: Vec<u64>,
    /// Sends plus receives booked in each closed round.
    pub round_totals: Vec<u64>,
    pub hello: u64,
    pub payload: u64,
    open_round: u64,
}

impl CommLedger {
    pub fn new(n: usize) -> Self {
        Self { sends: vec![0; n], receives: vec![0; n], ..Default::default() }
    }

    pub fn record(&mut self, m: &Message) {
        self.sends[m.sender] += 1;
        self.receives[m.receiver] += 1;
        self.open_round += 2;
        match m.size {
            SizeClass::Small => self.hello += 2,
            SizeClass::Payload => self.payload += 2,
        }
    }

    pub fn end_round(&mut self) {
        self.round_totals.push(self.open_round);
        self.open_round = 0;
    }

    /// Sends plus receives.
    pub fn total(&self) -> u64 {
        self.sends.iter().sum::<u64>() + self.receives.iter().sum::<u64>()
    }

    pub fn per_node(&self) -> f64 {
        if self.sends.is_empty() {
            0.0
        } else {
            self.total() as f64 / self.sends.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrGateScore {
    /// Mean squared error of the mapped output over the four cases.
    pub error: f64,
    /// All four thresholded outputs correct.
    pub solved: bool,
}

impl OrGateScore {
    /// Higher is better.
    pub fn fitness(&self) -> f64 {
        1.0 - self.error
    }
}

const OR_CASES: [([f64; 2], f64); 4] = [([0.0, 0.0], 0.0), ([0.0, 1.0], 1.0), ([1.0, 0.0], 1.0), ([1.0, 1.0], 1.0)];

pub fn or_gate_fitness(g: &ControllerGenome) -> Result<OrGateScore> {
    if g.topology() != NetTopology::OR_GATE {
        return Err(Error::Config(format!("OR task needs a 2-3-1 genome, got {:?}", g.topology())));
    }
    let mut sse = 0.0;
    let mut solved = true;
    for (x, y) in OR_CASES {
        let out = (g.forward(&x)?[0] + 1.0) / 2.0;
        sse += (out - y) * (out - y);
        solved &= (out >= 0.5) == (y == 1.0);
    }
    Ok(OrGateScore { error: sse / 4.0, solved })
}

/// A node of the emulated network learning the OR task.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerNode {
    pub genome: ControllerGenome,
    pub score: OrGateScore,
    pub evo: EvoState,
}

impl LearnerNode {
    pub fn random<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Self {
        let genome = ControllerGenome::init_random(NetTopology::OR_GATE, rng);
        Self::with_genome(genome, sigma)
    }

    pub fn with_genome(genome: ControllerGenome, sigma: f64) -> Self {
        let score = or_gate_fitness(&genome).expect("learner genomes use the OR topology");
        let mut evo = EvoState::new(sigma);
        evo.record_parent_run(score.fitness());
        Self { genome, score, evo }
    }

    pub fn fitness(&self) -> f64 {
        self.score.fitness()
    }

    /// One (1+1) individual-learning evaluation.
    pub fn learn<R: Rng + ?Sized>(&mut self, bounds: SigmaBounds, rng: &mut R) {
        let child = self.genome.mutate(self.evo.sigma, rng);
        let score = or_gate_fitness(&child).expect("mutation preserves topology");
        let parent = std::mem::replace(&mut self.genome, ControllerGenome::zeros(NetTopology::OR_GATE));
        let (genome, evo, outcome) = evolve_step(self.evo, parent, child, score.fitness(), bounds);
        self.genome = genome;
        self.evo = evo;
        if outcome == crate::controller::EvoOutcome::Replaced {
            self.score = score;
        }
    }

    /// Takes `genome` if it beats the node's current best.
    pub fn offer(&mut self, genome: &ControllerGenome, score: OrGateScore) -> bool {
        if score.fitness() > self.fitness() {
            self.genome = genome.clone();
            self.score = score;
            self.evo.parent_fitness = score.fitness();
            self.evo.parent_samples = 1;
            true
        } else {
            false
        }
    }
}

/// Every node sends its current best genome to each neighbour; receivers keep
/// it if it beats their own. Senders' genomes are snapshotted first so the
/// round is synchronous.
pub fn broadcast_round(nodes: &mut [LearnerNode], t: &Topology, ledger: &mut CommLedger) {
    let snapshot: Vec<(ControllerGenome, OrGateScore)> =
        nodes.iter().map(|n| (n.genome.clone(), n.score)).collect();
    for (sender, (genome, score)) in snapshot.iter().enumerate() {
        for &receiver in t.neighbors(sender) {
            ledger.record(&Message::genome(sender, receiver));
            nodes[receiver].offer(genome, *score);
        }
    }
}

/// Roaming message carrying a controller and the nodes it has visited.
#[derive(Debug, Clone, PartialEq)]
pub struct IntelligentPacket {
    pub payload: ControllerGenome,
    pub payload_score: OrGateScore,
    pub visited: BTreeMap<usize, u64>,
    pub current_node: usize,
}

impl IntelligentPacket {
    /// Spawns at `node` carrying that node's genome.
    pub fn spawn(node: usize, host: &LearnerNode) -> Self {
        Self {
            payload: host.genome.clone(),
            payload_score: host.score,
            visited: BTreeMap::from([(node, 1)]),
            current_node: node,
        }
    }

    pub fn payload_fitness(&self) -> f64 {
        self.payload_score.fitness()
    }

    pub fn visits(&self, node: usize) -> u64 {
        self.visited.get(&node).copied().unwrap_or(0)
    }
}

/// One logged packet move.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Migration {
    pub packet: usize,
    pub from: usize,
    pub to: usize,
    /// Visit counts of every neighbour of `from` before the move.
    pub neighbor_visits: Vec<(usize, u64)>,
}

impl Migration {
    /// Whether the destination had the minimal visit count among the
    /// neighbours offered.
    pub fn is_conscientious(&self) -> bool {
        let min = self.neighbor_visits.iter().map(|&(_, v)| v).min();
        let dest = self.neighbor_visits.iter().find(|&&(n, _)| n == self.to).map(|&(_, v)| v);
        dest.is_some() && dest == min
    }
}

/// For each packet in turn: exchange payloads with the host node, say hello
/// to the host's neighbours, then migrate to a least-visited neighbour (ties
/// broken uniformly at random). A packet on an isolated node stays put.
pub fn ipm_round<R: Rng + ?Sized>(
    packets: &mut [IntelligentPacket],
    nodes: &mut [LearnerNode],
    t: &Topology,
    ledger: &mut CommLedger,
    rng: &mut R,
) -> Vec<Migration> {
    let mut log = Vec::new();
    for (idx, pkt) in packets.iter_mut().enumerate() {
        let here = pkt.current_node;
        let host = &mut nodes[here];
        if host.fitness() > pkt.payload_fitness() {
            pkt.payload = host.genome.clone();
            pkt.payload_score = host.score;
            ledger.record(&Message::genome(here, here));
        } else if host.offer(&pkt.payload, pkt.payload_score) {
            ledger.record(&Message::genome(here, here));
        }

        let neighbors: Vec<usize> = t.neighbors(here).iter().copied().collect();
        for &n in &neighbors {
            ledger.record(&Message::hello(here, n));
        }
        if neighbors.is_empty() {
            continue;
        }

        let neighbor_visits: Vec<(usize, u64)> = neighbors.iter().map(|&n| (n, pkt.visits(n))).collect();
        let min = neighbor_visits.iter().map(|&(_, v)| v).min().expect("non-empty neighbours");
        let least: Vec<usize> = neighbor_visits.iter().filter(|&&(_, v)| v == min).map(|&(n, _)| n).collect();
        let to = *least.choose(rng).expect("non-empty");
        ledger.record(&Message::genome(here, to));
        *pkt.visited.entry(to).or_insert(0) += 1;
        pkt.current_node = to;
        log.push(Migration { packet: idx, from: here, to, neighbor_visits });
    }
    log
}

/// Latches each node's first solve and derives the convergence count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvergenceTracker {
    pub solved: Vec<bool>,
    pub round_first_solution: Option<u64>,
    pub round_90pct: Option<u64>,
}

impl ConvergenceTracker {
    pub fn new(n: usize) -> Self {
        Self { solved: vec![false; n], round_first_solution: None, round_90pct: None }
    }

    /// Nodes needed for the 90% mark.
    pub fn quota(&self) -> usize {
        (self.solved.len() * 9).div_ceil(10)
    }

    pub fn observe(&mut self, round: u64, solved_now: impl IntoIterator<Item = bool>) {
        for (flag, now) in self.solved.iter_mut().zip(solved_now) {
            *flag |= now;
        }
        let count = self.solved.iter().filter(|&&s| s).count();
        if count > 0 && self.round_first_solution.is_none() {
            self.round_first_solution = Some(round);
        }
        if count >= self.quota() && self.round_90pct.is_none() {
            self.round_90pct = Some(round);
        }
    }

    pub fn converged(&self) -> bool {
        self.round_90pct.is_some()
    }

    /// Rounds from the first solve until 90% of nodes have solved.
    pub fn eta(&self) -> Option<u64> {
        Some(self.round_90pct? - self.round_first_solution?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Scheme {
    Broadcast,
    Ipm { packets: usize },
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Broadcast => "b-cast",
            Scheme::Ipm { .. } => "ipm",
        }
    }

    pub fn packets(&self) -> usize {
        match self {
            Scheme::Broadcast => 0,
            Scheme::Ipm { packets } => *packets,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Broadcast => f.write_str("b-cast"),
            Scheme::Ipm { packets } => write!(f, "iPkt-{packets}"),
        }
    }
}

/// Parses `bcast`/`broadcast`/`b-cast` or `ipm`. The latter needs a packet count
/// supplied separately, so it parses to `Ipm { packets: 0 }`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Bcast,
    Ipm,
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bcast" | "b-cast" | "broadcast" => Ok(SchemeKind::Bcast),
            "ipm" => Ok(SchemeKind::Ipm),
            other => Err(Error::Config(format!("unknown scheme {other:?} (expected bcast or ipm)"))),
        }
    }
}

/// Packet counts proportional to the network size: ceil(n/10), ceil(n/5), ceil(n/2).
pub fn default_packet_counts(n: usize) -> [usize; 3] {
    [n.div_ceil(10), n.div_ceil(5), n.div_ceil(2)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub nodes: Vec<usize>,
    pub max_degree: usize,
    pub rewire_prob: f64,
    /// Round budget per run; a run also stops once 90% of nodes have solved.
    pub rounds: u64,
    /// Explicit packet counts for IPM; empty means `default_packet_counts`.
    pub packets: Vec<usize>,
    pub sigma_init: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            nodes: vec![20, 40, 80],
            max_degree: DEFAULT_MAX_DEGREE,
            rewire_prob: 0.1,
            rounds: 2000,
            packets: Vec::new(),
            sigma_init: 0.2,
            sigma_min: 0.01,
            sigma_max: 1.0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.nodes.is_empty() || self.nodes.contains(&0) {
            return bad("node counts must be non-empty and positive".into());
        }
        if !(0.0..=1.0).contains(&self.rewire_prob) {
            return bad(format!("rewire_prob {} outside [0, 1]", self.rewire_prob));
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.packets.contains(&0) {
            return bad("IPM needs at least one packet".into());
        }
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_init && self.sigma_init <= self.sigma_max) {
            return bad("need 0 < sigma_min <= sigma_init <= sigma_max".into());
        }
        Ok(())
    }

    pub fn sigma_bounds(&self) -> SigmaBounds {
        SigmaBounds { min: self.sigma_min, max: self.sigma_max }
    }

    pub fn packet_counts(&self, n: usize) -> Vec<usize> {
        if self.packets.is_empty() {
            default_packet_counts(n).to_vec()
        } else {
            self.packets.clone()
        }
    }
}

/// State of one sharing run, advanced a round at a time.
#[derive(Debug, Clone)]
pub struct SharingRun {
    pub scheme: Scheme,
    pub nodes: Vec<LearnerNode>,
    pub topology: Topology,
    pub packets: Vec<IntelligentPacket>,
    pub ledger: CommLedger,
    pub tracker: ConvergenceTracker,
    pub round: u64,
    rewire_prob: f64,
    bounds: SigmaBounds,
    rng: rand_chacha::ChaCha8Rng,
}

/// What happened in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: u64,
    pub rewired: bool,
    pub migrations: Vec<Migration>,
}

impl SharingRun {
    pub fn new(scheme: Scheme, n: usize, cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        if let Scheme::Ipm { packets } = scheme {
            if packets == 0 || packets > n {
                return Err(Error::Config(format!("IPM needs between 1 and {n} packets, got {packets}")));
            }
        }
        let mut rng = stream_rng(seed, streams::NETWORK);
        let nodes: Vec<LearnerNode> = (0..n).map(|_| LearnerNode::random(cfg.sigma_init, &mut rng)).collect();
        let topology = Topology::build(n, cfg.max_degree, &mut rng);
        let packets = match scheme {
            Scheme::Broadcast => Vec::new(),
            Scheme::Ipm { packets } => {
                let mut hosts: Vec<usize> = (0..n).collect();
                hosts.shuffle(&mut rng);
                hosts[..packets].iter().map(|&h| IntelligentPacket::spawn(h, &nodes[h])).collect()
            }
        };
        let mut tracker = ConvergenceTracker::new(n);
        tracker.observe(0, nodes.iter().map(|n| n.score.solved));
        Ok(Self {
            scheme,
            nodes,
            topology,
            packets,
            ledger: CommLedger::new(n),
            tracker,
            round: 0,
            rewire_prob: cfg.rewire_prob,
            bounds: cfg.sigma_bounds(),
            rng,
        })
    }

    /// Rewire, one learning step per node, one sharing step, then observe.
    pub fn step(&mut self) -> RoundLog {
        self.round += 1;
        let rewired = self.topology.rewire(self.rewire_prob, &mut self.rng);
        for node in &mut self.nodes {
            node.learn(self.bounds, &mut self.rng);
        }
        let migrations = match self.scheme {
            Scheme::Broadcast => {
                broadcast_round(&mut self.nodes, &self.topology, &mut self.ledger);
                Vec::new()
            }
            Scheme::Ipm { .. } => {
                ipm_round(&mut self.packets, &mut self.nodes, &self.topology, &mut self.ledger, &mut self.rng)
            }
        };
        self.ledger.end_round();
        self.tracker.observe(self.round, self.nodes.iter().map(|n| n.score.solved));
        RoundLog { round: self.round, rewired, migrations }
    }

    pub fn metrics(&self, run: usize) -> RunMetrics {
        let n = self.nodes.len() as f64;
        RunMetrics {
            run,
            gamma: self.ledger.per_node(),
            hello_per_node: self.ledger.hello as f64 / n,
            payload_per_node: self.ledger.payload as f64 / n,
            first_solution: self.tracker.round_first_solution,
            round_90pct: self.tracker.round_90pct,
            eta: self.tracker.eta(),
            rounds: self.round,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub run: usize,
    /// Communications (sends plus receives) per node.
    pub gamma: f64,
    pub hello_per_node: f64,
    pub payload_per_node: f64,
    pub first_solution: Option<u64>,
    pub round_90pct: Option<u64>,
    pub eta: Option<u64>,
    pub rounds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scheme: Scheme,
    pub n: usize,
    pub runs: Vec<RunMetrics>,
}

impl MetricsReport {
    pub fn gamma_avg(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.gamma))
    }

    pub fn gamma_std(&self) -> Option<f64> {
        std_dev(&self.runs.iter().map(|r| r.gamma).collect::<Vec<_>>())
    }

    /// Convergence counts of the runs that reached 90%.
    pub fn etas(&self) -> Vec<u64> {
        self.runs.iter().filter_map(|r| r.eta).collect()
    }

    pub fn eta_median(&self) -> Option<f64> {
        median(&self.etas())
    }

    pub fn eta_std(&self) -> Option<f64> {
        std_dev(&self.etas().iter().map(|&e| e as f64).collect::<Vec<_>>())
    }

    pub fn converged_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.round_90pct.is_some()).count()
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Sample standard deviation; `None` below two samples.
pub fn std_dev(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs.iter().copied());
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

pub fn median(xs: &[u64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_unstable();
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 { (v[mid - 1] + v[mid]) as f64 / 2.0 } else { v[mid] as f64 })
}

/// One independent run per seed.
pub fn run_sharing_experiment(scheme: Scheme, n: usize, cfg: &NetworkConfig, seeds: &[u64]) -> Result<MetricsReport> {
    cfg.validate()?;
    let mut runs = Vec::with_capacity(seeds.len());
    for (r, &seed) in seeds.iter().enumerate() {
        let mut run = SharingRun::new(scheme, n, cfg, seed)?;
        while !run.tracker.converged() && run.round < cfg.rounds {
            run.step();
        }
        runs.push(run.metrics(r));
    }
    Ok(MetricsReport { scheme, n, runs })
}

/// How robots in a shared arena exchange antibodies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum ArenaSharing {
    #[default]
    Off,
    /// Each robot sends its intrinsic repertoire, or its `top_k` antibodies
    /// by concentration, to every neighbour in one message.
    Broadcast { top_k: Option<usize> },
}

/// Delivers repertoires into peers' extrinsic repertoires. Returns the number
/// of antibodies carried by each message sent.
pub fn arena_share_adapter(
    ireps: &[&Repertoire],
    xreps: &mut [Repertoire],
    t: &Topology,
    ledger: &mut CommLedger,
    mode: ArenaSharing,
) -> Vec<usize> {
    let ArenaSharing::Broadcast { top_k } = mode else {
        return Vec::new();
    };
    let mut sizes = Vec::new();
    for (sender, irep) in ireps.iter().enumerate() {
        let mut chosen: Vec<_> = irep.iter().collect();
        if let Some(k) = top_k {
            chosen.sort_by(|a, b| b.concentration.total_cmp(&a.concentration).then(a.id.cmp(&b.id)));
            chosen.truncate(k);
        }
        if chosen.is_empty() {
            continue;
        }
        for &receiver in t.neighbors(sender) {
            ledger.record(&Message {
                sender,
                receiver,
                kind: MessageKind::Antibody,
                size: SizeClass::Payload,
                items: chosen.len(),
            });
            for ab in &chosen {
                ingest_foreign(&mut xreps[receiver], ab, sender);
            }
            sizes.push(chosen.len());
        }
    }
    sizes
}
