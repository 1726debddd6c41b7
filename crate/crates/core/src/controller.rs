//! Feed-forward tanh controllers and the (1+1)-online evolution strategy.
//!
//! A genome is a flat weight vector laid out layer by layer. For every hidden
//! unit the `n_in` input weights come first, followed by its bias; the output
//! layer follows the same pattern over the hidden activations.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Topology {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
}

impl Topology {
    /// Ultrasonic, colour and two light sensors in; left and right motor out.
    pub const ARENA: Topology = Topology::new(4, 5, 2);
    /// Soft task used by the sharing study.
    pub const OR_GATE: Topology = Topology::new(2, 3, 1);

    pub const fn new(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Self { n_in, n_hidden, n_out }
    }

    /// Number of weights including one bias per hidden and output unit.
    pub const fn genome_len(&self) -> usize {
        (self.n_in + 1) * self.n_hidden + (self.n_hidden + 1) * self.n_out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGenome {
    topology: Topology,
    weights: Vec<f64>,
}

impl ControllerGenome {
    pub fn from_weights(topology: Topology, weights: Vec<f64>) -> Result<Self> {
        ensure_len(topology.genome_len(), weights.len())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("genome weights must be finite".into()));
        }
        Ok(Self { topology, weights })
    }

    pub fn zeros(topology: Topology) -> Self {
        Self { topology, weights: vec![0.0; topology.genome_len()] }
    }

    /// Weights drawn i.i.d. from U[-1, 1].
    pub fn init_random<R: Rng + ?Sized>(topology: Topology, rng: &mut R) -> Self {
        let weights = (0..topology.genome_len()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        Self { topology, weights }
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn forward(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let Topology { n_in, n_hidden, n_out } = self.topology;
        ensure_len(n_in, inputs.len())?;

        let (hidden_w, output_w) = self.weights.split_at((n_in + 1) * n_hidden);
        let hidden: Vec<f64> = hidden_w
            .chunks_exact(n_in + 1)
            .map(|row| neuron(row, inputs))
            .collect();
        Ok(output_w.chunks_exact(n_hidden + 1).take(n_out).map(|row| neuron(row, &hidden)).collect())
    }

    /// Offspring with every weight perturbed by an independent N(0, sigma) draw.
    pub fn mutate<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> Self {
        let mut child = self.clone();
        // Normal::new only fails for non-finite or negative sigma.
        let Ok(normal) = Normal::new(0.0, sigma.max(0.0)) else {
            return child;
        };
        for w in &mut child.weights {
            *w += normal.sample(rng);
        }
        child
    }
}

fn neuron(row: &[f64], inputs: &[f64]) -> f64 {
    let (weights, bias) = row.split_at(row.len() - 1);
    let sum: f64 = weights.iter().zip(inputs).map(|(w, x)| w * x).sum::<f64>() + bias[0];
    sum.tanh()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaBounds {
    pub min: f64,
    pub max: f64,
}

impl SigmaBounds {
    pub fn clamp(&self, sigma: f64) -> f64 {
        sigma.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvoConfig {
    /// Probability that an iteration evaluates a fresh mutant instead of
    /// re-running the parent.
    pub p_offspring: f64,
}

impl Default for EvoConfig {
    fn default() -> Self {
        Self { p_offspring: 0.8 }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_offspring) {
            return Err(Error::Config(format!("p_offspring {} outside [0, 1]", self.p_offspring)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvoState {
    pub sigma: f64,
    /// Fitness of the current parent. Meaningless until `is_evaluated()`.
    pub parent_fitness: f64,
    pub evaluations: u64,
    /// Number of windows averaged into `parent_fitness` since the parent
    /// was installed.
    pub parent_samples: u64,
}

impl EvoState {
    pub fn new(sigma: f64) -> Self {
        Self { sigma, parent_fitness: 0.0, evaluations: 0, parent_samples: 0 }
    }

    pub fn is_evaluated(&self) -> bool {
        self.parent_samples > 0
    }

    /// Records a window run with the parent itself, folding it into the
    /// running mean of the parent's fitness.
    pub fn record_parent_run(&mut self, fitness: f64) {
        self.parent_samples += 1;
        self.evaluations += 1;
        self.parent_fitness += (fitness - self.parent_fitness) / self.parent_samples as f64;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvoOutcome {
    Replaced,
    Kept,
}

/// One (1+1) selection step. A strictly better offspring replaces the parent
/// and halves sigma; otherwise the parent survives and sigma doubles. Sigma is
/// clamped to `bounds` either way.
pub fn evolve_step(
    state: EvoState,
    parent: ControllerGenome,
    offspring: ControllerGenome,
    offspring_fitness: f64,
    bounds: SigmaBounds,
) -> (ControllerGenome, EvoState, EvoOutcome) {
    let mut next = state;
    next.evaluations += 1;
    if offspring_fitness > state.parent_fitness {
        next.parent_fitness = offspring_fitness;
        next.parent_samples = 1;
        next.sigma = bounds.clamp(state.sigma / 2.0);
        (offspring, next, EvoOutcome::Replaced)
    } else {
        next.sigma = bounds.clamp(state.sigma * 2.0);
        (parent, next, EvoOutcome::Kept)
    }
}
