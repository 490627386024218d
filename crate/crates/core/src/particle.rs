//! Exact event-driven simulation of the branching random walk in a random
//! environment.
//!
//! Every particle at `x` jumps to each of its `2d` neighbours at rate `n²`,
//! splits in two at rate `(ξ_e)₊(x)` and dies at rate `(ξ_e)₋(x)`. In
//! offspring mode it is in addition replaced by `k` particles at rate
//! `n^ϱ p_k`. The process starts from `⌊n^ϱ⌋` particles at the origin and is
//! observed through `μ_t(φ) = ⌊n^ϱ⌋^{-1} Σ_x u(t, x) φ(x)`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Exp1;

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::{Field, LatticeBox};
use crate::rng::{Ensemble, ReplicaRng};

pub const DEFAULT_POPULATION_CAP: u64 = 10_000_000;

/// `⌊n^ϱ⌋`, rounding values within `1e-9` of an integer to that integer.
pub fn floor_power(n: usize, rho: f64) -> u64 {
    let v = (n as f64).powf(rho);
    let r = v.round();
    if (v - r).abs() <= 1e-9 * r.max(1.0) {
        r as u64
    } else {
        v.floor() as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BranchingMode {
    Binary,
    /// Offspring law `p_k`, `k = 0, 1, …`.
    Offspring { probs: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchingSpec {
    pub mode: BranchingMode,
    /// Averaging exponent `ϱ ≥ 0`.
    pub rho: f64,
}

impl BranchingSpec {
    pub fn binary(rho: f64) -> Self {
        Self {
            mode: BranchingMode::Binary,
            rho,
        }
    }

    /// Offspring mode; the law must be critical, `Σ k p_k = 1`.
    pub fn offspring(rho: f64, probs: Vec<f64>) -> Result<Self> {
        let spec = Self {
            mode: BranchingMode::Offspring { probs },
            rho,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidParameter(format!("rho {} must be >= 0", self.rho)));
        }
        if let BranchingMode::Offspring { probs } = &self.mode {
            if probs.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::InvalidParameter("offspring probabilities must be >= 0".into()));
            }
            let total: f64 = probs.iter().sum();
            let mean: f64 = probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!("offspring law sums to {total}")));
            }
            if (mean - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "offspring law has mean {mean}, branching must be critical"
                )));
            }
        }
        Ok(())
    }

    /// Number of initial particles `⌊n^ϱ⌋`.
    pub fn initial_count(&self, n: usize) -> u64 {
        floor_power(n, self.rho)
    }

    /// Rate `n^ϱ` of the offspring clock (zero in binary mode).
    pub fn offspring_rate(&self, n: usize) -> f64 {
        match self.mode {
            BranchingMode::Binary => 0.0,
            BranchingMode::Offspring { .. } => (n as f64).powf(self.rho),
        }
    }

    /// `σ² = Σ_k p_k (k - 1)² = Ψ''(1)` (zero in binary mode).
    pub fn offspring_variance(&self) -> f64 {
        match &self.mode {
            BranchingMode::Binary => 0.0,
            BranchingMode::Offspring { probs } => probs
                .iter()
                .enumerate()
                .map(|(k, p)| p * (k as f64 - 1.0).powi(2))
                .sum(),
        }
    }

    /// Generating function `Ψ(h) = Σ_k p_k h^k` (identity in binary mode).
    pub fn generating_function(&self, h: f64) -> f64 {
        match &self.mode {
            BranchingMode::Binary => h,
            BranchingMode::Offspring { probs } => probs.iter().rev().fold(0.0, |acc, p| acc * h + p),
        }
    }

    fn keep_probability(&self) -> f64 {
        match &self.mode {
            BranchingMode::Binary => 1.0,
            BranchingMode::Offspring { probs } => probs.get(1).copied().unwrap_or(0.0),
        }
    }
}

/// Sparse occupation numbers of a particle configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleState {
    lattice: LatticeBox,
    occupation: BTreeMap<usize, u64>,
    population: u64,
    time: f64,
}

impl ParticleState {
    pub fn empty(lattice: LatticeBox) -> Self {
        Self {
            lattice,
            occupation: BTreeMap::new(),
            population: 0,
            time: 0.0,
        }
    }

    /// `count` particles on `site` at time zero.
    pub fn concentrated(lattice: LatticeBox, site: usize, count: u64) -> Result<Self> {
        if site >= lattice.num_sites() {
            return Err(Error::InvalidParameter(format!("site {site} outside the box")));
        }
        let mut state = Self::empty(lattice);
        if count > 0 {
            state.occupation.insert(site, count);
            state.population = count;
        }
        Ok(state)
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn occupation(&self) -> &BTreeMap<usize, u64> {
        &self.occupation
    }

    pub fn count(&self, site: usize) -> u64 {
        self.occupation.get(&site).copied().unwrap_or(0)
    }

    pub fn population(&self) -> u64 {
        self.population
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// `Σ_x u(x) f(x)`.
    pub fn pairing(&self, f: &Field) -> f64 {
        self.occupation
            .iter()
            .map(|(&x, &c)| c as f64 * f.at(x))
            .sum()
    }
}

/// `⌊n^ϱ⌋` particles at the origin.
pub fn init_state(lattice: LatticeBox, rho: f64) -> ParticleState {
    let count = floor_power(lattice.scale(), rho);
    ParticleState::concentrated(lattice, lattice.origin(), count).expect("origin is a site")
}

/// Treatment of particles leaving `(-L/2, L/2)^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KillRule {
    None,
    /// The particle is removed.
    Remove { side: usize },
    /// The particle and its descendants are tagged but kept; untagged
    /// particles form the killed process, all particles the free one.
    Mark { side: usize },
}

impl KillRule {
    fn side(self) -> Option<usize> {
        match self {
            KillRule::None => None,
            KillRule::Remove { side } | KillRule::Mark { side } => Some(side),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Event {
    /// `to` is `None` when the particle left the domain and was removed.
    Jump {
        from: usize,
        direction: usize,
        to: Option<usize>,
    },
    Birth { site: usize },
    Death { site: usize },
    Offspring { site: usize, children: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub time: f64,
    pub waiting_time: f64,
    pub event: Event,
}

/// Fenwick tree of nonnegative weights.
#[derive(Clone, Debug)]
struct Fenwick {
    tree: Vec<f64>,
    top: usize,
}

impl Fenwick {
    fn from_weights(weights: &[f64]) -> Self {
        let len = weights.len();
        let mut tree = vec![0.0; len + 1];
        for (i, w) in weights.iter().enumerate() {
            tree[i + 1] += w;
            let parent = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if parent <= len {
                tree[parent] += tree[i + 1];
            }
        }
        let top = if len == 0 { 0 } else { 1 << (usize::BITS - 1 - len.leading_zeros()) };
        Self { tree, top }
    }

    fn add(&mut self, index: usize, delta: f64) {
        let mut i = index + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    fn total(&self) -> f64 {
        let mut i = self.tree.len() - 1;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }

    /// Smallest index whose prefix sum exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let mut pos = 0;
        let mut step = self.top;
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && self.tree[next] <= target {
                pos = next;
                target -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}

const REBUILD_INTERVAL: usize = 1 << 16;

/// Mutable simulation state: dense occupation per (site, tag) with a
/// Fenwick tree over the slot rates.
#[derive(Clone, Debug)]
pub struct Engine {
    lattice: LatticeBox,
    kill: KillRule,
    population_cap: u64,
    n2: f64,
    birth: Vec<f64>,
    death: Vec<f64>,
    /// Cumulative law of the number of children given that the offspring
    /// clock fired with `k ≠ 1`.
    offspring_cdf: Vec<(u32, f64)>,
    per_particle: Vec<f64>,
    counts: Vec<u64>,
    populations: [u64; 2],
    tree: Fenwick,
    updates: usize,
    time: f64,
    pending: Option<f64>,
}

impl Engine {
    pub fn new(
        state: &ParticleState,
        env: &Environment,
        spec: &BranchingSpec,
        kill: KillRule,
        population_cap: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let lattice = *env.lattice();
        lattice.check_same(state.lattice())?;
        if let Some(side) = kill.side() {
            if side % 2 != 0 || side == 0 || side > lattice.side() {
                return Err(Error::InvalidParameter(format!(
                    "killing box side {side} must be even and at most {}",
                    lattice.side()
                )));
            }
            if state.occupation.keys().any(|&x| !lattice.strictly_inside(x, side)) {
                return Err(Error::InvalidParameter(
                    "initial particles must lie strictly inside the killing box".into(),
                ));
            }
        }
        let n = lattice.scale();
        let n2 = (n * n) as f64;
        let birth = env.birth_rates().into_values();
        let death = env.death_rates().into_values();
        let offspring_rate = spec.offspring_rate(n);
        let off_total = offspring_rate * (1.0 - spec.keep_probability());
        let mut offspring_cdf = Vec::new();
        if let BranchingMode::Offspring { probs } = &spec.mode {
            let mut acc = 0.0;
            for (k, p) in probs.iter().enumerate() {
                if k != 1 && *p > 0.0 {
                    acc += p;
                    offspring_cdf.push((k as u32, acc));
                }
            }
            for entry in &mut offspring_cdf {
                entry.1 /= acc;
            }
        }
        let jump_total = lattice.num_directions() as f64 * n2;
        let per_particle: Vec<f64> = birth
            .iter()
            .zip(&death)
            .map(|(b, d)| jump_total + b + d + off_total)
            .collect();
        let mut counts = vec![0u64; 2 * lattice.num_sites()];
        for (&x, &c) in &state.occupation {
            counts[2 * x] = c;
        }
        let mut engine = Self {
            lattice,
            kill,
            population_cap,
            n2,
            birth,
            death,
            offspring_cdf,
            per_particle,
            counts,
            populations: [state.population, 0],
            tree: Fenwick::from_weights(&[]),
            updates: 0,
            time: state.time,
            pending: None,
        };
        engine.rebuild();
        Ok(engine)
    }

    fn rebuild(&mut self) {
        let weights: Vec<f64> = self
            .counts
            .iter()
            .enumerate()
            .map(|(slot, &c)| c as f64 * self.per_particle[slot / 2])
            .collect();
        self.tree = Fenwick::from_weights(&weights);
        self.updates = 0;
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Population of untagged particles (the killed process under
    /// [`KillRule::Mark`]).
    pub fn population(&self) -> u64 {
        self.populations[0]
    }

    pub fn total_population(&self) -> u64 {
        self.populations[0] + self.populations[1]
    }

    /// `Σ_x u(x) f(x)` over untagged particles, or all particles.
    pub fn pairing(&self, f: &Field, include_tagged: bool) -> f64 {
        let values = f.values();
        let mut acc = 0.0;
        for (x, v) in values.iter().enumerate() {
            let c = self.counts[2 * x] + if include_tagged { self.counts[2 * x + 1] } else { 0 };
            if c > 0 {
                acc += c as f64 * v;
            }
        }
        acc
    }

    /// Current configuration of untagged particles.
    pub fn state(&self) -> ParticleState {
        let mut occupation = BTreeMap::new();
        for x in 0..self.lattice.num_sites() {
            if self.counts[2 * x] > 0 {
                occupation.insert(x, self.counts[2 * x]);
            }
        }
        ParticleState {
            lattice: self.lattice,
            population: self.populations[0],
            occupation,
            time: self.time,
        }
    }

    fn change(&mut self, slot: usize, delta: i64) {
        self.counts[slot] = (self.counts[slot] as i64 + delta) as u64;
        let tag = slot % 2;
        self.populations[tag] = (self.populations[tag] as i64 + delta) as u64;
        self.tree.add(slot, delta as f64 * self.per_particle[slot / 2]);
        self.updates += 1;
    }

    fn check_cap(&self) -> Result<()> {
        if self.total_population() > self.population_cap {
            return Err(Error::PopulationCap {
                cap: self.population_cap,
                time: self.time,
            });
        }
        Ok(())
    }

    fn draw_slot<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        loop {
            let total = self.tree.total();
            let slot = self.tree.find(rng.random::<f64>() * total);
            if slot < self.counts.len() && self.counts[slot] > 0 {
                return slot;
            }
            // rounding drift in the tree; start over from exact weights
            self.rebuild();
        }
    }

    fn apply_event<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Event> {
        if self.updates >= REBUILD_INTERVAL {
            self.rebuild();
        }
        let slot = self.draw_slot(rng);
        let site = slot / 2;
        let tag = slot % 2;
        let mut u = rng.random::<f64>() * self.per_particle[site];
        let directions = self.lattice.num_directions();
        let jump_total = directions as f64 * self.n2;
        if u < jump_total {
            let direction = ((u / self.n2) as usize).min(directions - 1);
            self.change(slot, -1);
            let to = self.lattice.neighbor(site, direction);
            let landed = match (to, self.kill) {
                (None, _) => None,
                (Some(t), KillRule::None) => Some(2 * t + tag),
                (Some(t), KillRule::Remove { side }) => {
                    self.lattice.strictly_inside(t, side).then_some(2 * t + tag)
                }
                (Some(t), KillRule::Mark { side }) => {
                    let tag = if self.lattice.strictly_inside(t, side) { tag } else { 1 };
                    Some(2 * t + tag)
                }
            };
            if let Some(target) = landed {
                self.change(target, 1);
            }
            return Ok(Event::Jump {
                from: site,
                direction,
                to: landed.map(|s| s / 2),
            });
        }
        u -= jump_total;
        if u < self.birth[site] {
            self.change(slot, 1);
            self.check_cap()?;
            return Ok(Event::Birth { site });
        }
        u -= self.birth[site];
        if u < self.death[site] || self.offspring_cdf.is_empty() {
            self.change(slot, -1);
            return Ok(Event::Death { site });
        }
        let v = rng.random::<f64>();
        let children = self
            .offspring_cdf
            .iter()
            .find(|(_, c)| v < *c)
            .unwrap_or(self.offspring_cdf.last().expect("non-empty"))
            .0;
        self.change(slot, children as i64 - 1);
        self.check_cap()?;
        Ok(Event::Offspring { site, children })
    }

    fn next_event_time<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        if let Some(t) = self.pending {
            return t;
        }
        let total = self.tree.total();
        let t = if self.total_population() == 0 || total <= 0.0 {
            f64::INFINITY
        } else {
            let e: f64 = rng.sample(Exp1);
            self.time + e / total
        };
        self.pending = Some(t);
        t
    }

    /// Performs one event; `None` once the population is extinct.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<StepRecord>> {
        let next = self.next_event_time(rng);
        if !next.is_finite() {
            return Ok(None);
        }
        let waiting_time = next - self.time;
        self.time = next;
        self.pending = None;
        let event = self.apply_event(rng)?;
        Ok(Some(StepRecord {
            time: next,
            waiting_time,
            event,
        }))
    }

    /// Runs all events up to time `until` and stops there.
    pub fn advance<R: Rng + ?Sized>(&mut self, until: f64, rng: &mut R) -> Result<()> {
        loop {
            let next = self.next_event_time(rng);
            if next > until {
                self.time = until;
                return Ok(());
            }
            self.time = next;
            self.pending = None;
            self.apply_event(rng)?;
        }
    }
}

/// One event from `state`; the state is returned unchanged once extinct.
pub fn step<R: Rng + ?Sized>(
    state: &ParticleState,
    env: &Environment,
    spec: &BranchingSpec,
    rng: &mut R,
) -> Result<(ParticleState, Option<StepRecord>)> {
    let mut engine = Engine::new(state, env, spec, KillRule::None, DEFAULT_POPULATION_CAP)?;
    let record = engine.step(rng)?;
    Ok((engine.state(), record))
}

/// Observations `(u(t), φ_j)` at a list of times.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurePath {
    pub replica: u64,
    /// `⌊n^ϱ⌋`, the divisor turning pairings into `⟨μ_t, φ⟩`.
    pub normalization: f64,
    pub times: Vec<f64>,
    /// `pairings[k][j] = Σ_x u(t_k, x) φ_j(x)`.
    pub pairings: Vec<Vec<f64>>,
    pub populations: Vec<u64>,
}

impl MeasurePath {
    /// `⟨μ_{t_k}, φ_j⟩`.
    pub fn measure(&self, k: usize, j: usize) -> f64 {
        self.pairings[k][j] / self.normalization
    }

    pub fn final_measure(&self, j: usize) -> f64 {
        self.measure(self.times.len() - 1, j)
    }
}

fn check_observation(obs_times: &[f64], fields: &[Field], lattice: &LatticeBox, start: f64) -> Result<()> {
    if obs_times.iter().any(|t| !t.is_finite())
        || obs_times.windows(2).any(|w| w[1] < w[0])
        || obs_times.first().is_some_and(|&t| t < start)
    {
        return Err(Error::InvalidParameter(
            "observation times must be finite, sorted and not before the start".into(),
        ));
    }
    for f in fields {
        lattice.check_same(f.lattice())?;
    }
    Ok(())
}

/// Configuration of a simulation run beyond the model itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub kill: KillRule,
    pub population_cap: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            kill: KillRule::None,
            population_cap: DEFAULT_POPULATION_CAP,
        }
    }
}

/// Simulates from `state0` and records the untagged process and, under
/// [`KillRule::Mark`], the full process.
fn run_observed<R: Rng + ?Sized>(
    state0: &ParticleState,
    env: &Environment,
    spec: &BranchingSpec,
    options: RunOptions,
    obs_times: &[f64],
    fields: &[Field],
    rng: &mut R,
) -> Result<(MeasurePath, MeasurePath)> {
    let lattice = *env.lattice();
    check_observation(obs_times, fields, &lattice, state0.time())?;
    let mut engine = Engine::new(state0, env, spec, options.kill, options.population_cap)?;
    let normalization = spec.initial_count(lattice.scale()) as f64;
    let empty = || MeasurePath {
        replica: 0,
        normalization,
        times: obs_times.to_vec(),
        pairings: Vec::with_capacity(obs_times.len()),
        populations: Vec::with_capacity(obs_times.len()),
    };
    let (mut own, mut full) = (empty(), empty());
    for &t in obs_times {
        engine.advance(t, rng)?;
        own.pairings.push(fields.iter().map(|f| engine.pairing(f, false)).collect());
        own.populations.push(engine.population());
        full.pairings.push(fields.iter().map(|f| engine.pairing(f, true)).collect());
        full.populations.push(engine.total_population());
    }
    Ok((own, full))
}

pub fn simulate_path<R: Rng + ?Sized>(
    state0: &ParticleState,
    env: &Environment,
    spec: &BranchingSpec,
    obs_times: &[f64],
    fields: &[Field],
    rng: &mut R,
) -> Result<MeasurePath> {
    simulate_path_with(state0, env, spec, RunOptions::default(), obs_times, fields, rng)
}

pub fn simulate_path_with<R: Rng + ?Sized>(
    state0: &ParticleState,
    env: &Environment,
    spec: &BranchingSpec,
    options: RunOptions,
    obs_times: &[f64],
    fields: &[Field],
    rng: &mut R,
) -> Result<MeasurePath> {
    Ok(run_observed(state0, env, spec, options, obs_times, fields, rng)?.0)
}

/// Simulation with particles removed on leaving `(-L/2, L/2)^d`.
pub fn killed_simulate<R: Rng + ?Sized>(
    state0: &ParticleState,
    env: &Environment,
    spec: &BranchingSpec,
    side: usize,
    obs_times: &[f64],
    fields: &[Field],
    rng: &mut R,
) -> Result<MeasurePath> {
    let options = RunOptions {
        kill: KillRule::Remove { side },
        ..RunOptions::default()
    };
    simulate_path_with(state0, env, spec, options, obs_times, fields, rng)
}

/// Killed and free process driven by the same event stream: returns
/// `(killed, free)` with the killed population never above the free one.
pub fn coupled_killed_simulate<R: Rng + ?Sized>(
    state0: &ParticleState,
    env: &Environment,
    spec: &BranchingSpec,
    side: usize,
    obs_times: &[f64],
    fields: &[Field],
    rng: &mut R,
) -> Result<(MeasurePath, MeasurePath)> {
    let options = RunOptions {
        kill: KillRule::Mark { side },
        ..RunOptions::default()
    };
    run_observed(state0, env, spec, options, obs_times, fields, rng)
}

/// Independent replicas from `state0`, in replica order. Replicas that
/// abort keep their error.
pub fn simulate_ensemble(
    state0: &ParticleState,
    env: &Environment,
    spec: &BranchingSpec,
    options: RunOptions,
    obs_times: &[f64],
    fields: &[Field],
    ensemble: &Ensemble,
) -> Result<Vec<Result<MeasurePath>>> {
    ensemble.run(|r, rng: &mut ReplicaRng| {
        simulate_path_with(state0, env, spec, options, obs_times, fields, rng).map(|mut p| {
            p.replica = r;
            p
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_environment, EnvironmentSpec, PotentialLaw};
    use crate::lattice::TestFunction;
    use crate::pam::{Semigroup, SemigroupBackend};
    use crate::rng::replica_rng;
    use crate::stats::SampleStats;

    #[test]
    fn initial_counts() {
        assert_eq!(init_state(LatticeBox::periodic(1, 4, 4).unwrap(), 0.5).population(), 2);
        assert_eq!(init_state(LatticeBox::periodic(1, 4, 4).unwrap(), 0.0).population(), 1);
        assert_eq!(init_state(LatticeBox::periodic(2, 3, 2).unwrap(), 1.0).population(), 3);
        assert_eq!(init_state(LatticeBox::periodic(2, 3, 2).unwrap(), 2.0).population(), 9);
        assert_eq!(floor_power(16, 0.5), 4);
        assert_eq!(floor_power(8, 0.5), 2);
        assert_eq!(floor_power(4, 1.5), 8);
    }

    #[test]
    fn offspring_law_validation() {
        assert!(BranchingSpec::offspring(0.5, vec![0.5, 0.0, 0.5]).is_ok());
        assert!(BranchingSpec::offspring(0.5, vec![0.4, 0.0, 0.6]).is_err());
        assert!(BranchingSpec::offspring(0.5, vec![0.5, 0.0, 0.4]).is_err());
        let s = BranchingSpec::offspring(0.5, vec![0.25, 0.5, 0.25]).unwrap();
        assert!((s.offspring_variance() - 0.5).abs() < 1e-15);
        assert!((s.generating_function(0.5) - (0.25 + 0.25 + 0.0625)).abs() < 1e-15);
    }

    #[test]
    fn fenwick_find_and_total() {
        let mut f = Fenwick::from_weights(&[1.0, 0.0, 2.0, 3.0, 0.5]);
        assert!((f.total() - 6.5).abs() < 1e-15);
        assert_eq!(f.find(0.5), 0);
        assert_eq!(f.find(1.0), 2);
        assert_eq!(f.find(2.99), 2);
        assert_eq!(f.find(3.0), 3);
        assert_eq!(f.find(6.2), 4);
        f.add(1, 4.0);
        assert_eq!(f.find(1.5), 1);
        assert!((f.total() - 10.5).abs() < 1e-15);
    }

    #[test]
    fn waiting_time_and_isotropy() {
        let lat = LatticeBox::periodic(2, 2, 4).unwrap();
        let env = Environment::zero(lat);
        let spec = BranchingSpec::binary(0.0);
        let state = init_state(lat, 0.0);
        let mut rng = replica_rng(1, 0);
        let samples = 100_000;
        let mut waits = Vec::with_capacity(samples);
        let mut bins = [0usize; 4];
        for _ in 0..samples {
            let (_, rec) = step(&state, &env, &spec, &mut rng).unwrap();
            let rec = rec.unwrap();
            waits.push(rec.waiting_time);
            match rec.event {
                Event::Jump { direction, .. } => bins[direction] += 1,
                other => panic!("unexpected {other:?}"),
            }
        }
        let stats = SampleStats::from_samples(&waits);
        assert!(stats.mean_z(1.0 / 16.0) < 3.0);
        let expected = samples as f64 / 4.0;
        let chi2: f64 = bins.iter().map(|&b| (b as f64 - expected).powi(2) / expected).sum();
        // 0.99 quantile of chi-square with 3 degrees of freedom
        assert!(chi2 < 11.345, "chi-square {chi2}");
    }

    #[test]
    fn constant_growth_mean() {
        let lat = LatticeBox::periodic(1, 2, 4).unwrap();
        let c = 1.5;
        let env = Environment::constant(lat, c);
        let spec = BranchingSpec::binary(1.0);
        let state = init_state(lat, 1.0);
        let t = 1.0;
        let ens = Ensemble::new(4000, 3);
        let one = Field::constant(lat, 1.0);
        let paths = simulate_ensemble(&state, &env, &spec, RunOptions::default(), &[t], &[one], &ens).unwrap();
        let pops: Vec<f64> = paths.iter().map(|p| p.as_ref().unwrap().populations[0] as f64).collect();
        let stats = SampleStats::from_samples(&pops);
        assert!(stats.mean_z(2.0 * (c * t).exp()) < 3.0);
    }

    #[test]
    fn observation_at_time_zero() {
        let lat = LatticeBox::periodic(1, 4, 4).unwrap();
        let env = Environment::zero(lat);
        let spec = BranchingSpec::binary(0.5);
        let phi = TestFunction::gaussian(1.0, 0.5).sample(lat);
        let path = simulate_path(&init_state(lat, 0.5), &env, &spec, &[0.0], std::slice::from_ref(&phi), &mut replica_rng(0, 0)).unwrap();
        assert_eq!(path.measure(0, 0), phi.at_origin());
    }

    #[test]
    fn free_mean_matches_heat_kernel() {
        let lat = LatticeBox::periodic(1, 2, 4).unwrap();
        let env = Environment::zero(lat);
        let spec = BranchingSpec::binary(0.0);
        let phi = TestFunction::gaussian(1.0, 0.5).sample(lat);
        let t = 0.3;
        let ens = Ensemble::new(10_000, 9);
        let paths = simulate_ensemble(&init_state(lat, 0.0), &env, &spec, RunOptions::default(), &[t], std::slice::from_ref(&phi), &ens).unwrap();
        let values: Vec<f64> = paths.iter().map(|p| p.as_ref().unwrap().final_measure(0)).collect();
        let target = Semigroup::new(&env, SemigroupBackend::dense()).unwrap().apply(&phi, t).unwrap().at_origin();
        assert!(SampleStats::from_samples(&values).mean_z(target) < 3.0);
    }

    #[test]
    fn killed_survival_matches_dirichlet_kernel() {
        let lat = LatticeBox::periodic(1, 2, 4).unwrap();
        let env = Environment::zero(lat);
        let spec = BranchingSpec::binary(0.0);
        let t = 0.2;
        let ens = Ensemble::new(10_000, 4);
        let one = Field::constant(lat, 1.0);
        let state = init_state(lat, 0.0);
        let survivals = ens
            .run(|_, rng| killed_simulate(&state, &env, &spec, 2, &[t], std::slice::from_ref(&one), rng).unwrap().populations[0] as f64)
            .unwrap();
        // (-1, 1) at n = 2 holds sites -1, 0, 1 (in lattice units 1/2)
        let inner = LatticeBox::dirichlet(1, 2, 2).unwrap();
        let sg = Semigroup::free(inner, SemigroupBackend::dense()).unwrap();
        let h = sg.dense_hamiltonian();
        let interior: Vec<usize> = (0..inner.num_sites()).filter(|&i| inner.strictly_inside(i, 2)).collect();
        let sub = nalgebra::DMatrix::from_fn(interior.len(), interior.len(), |a, b| h[(interior[a], interior[b])]);
        let kernel = crate::linalg::expm(&(sub * t)).unwrap();
        let o = interior.iter().position(|&i| i == inner.origin()).unwrap();
        let mass: f64 = (0..interior.len()).map(|a| kernel[(a, o)]).sum();
        assert!(SampleStats::from_samples(&survivals).mean_z(mass) < 3.0, "target {mass}");
    }

    #[test]
    fn coupling_orders_populations() {
        let env = sample_environment(&EnvironmentSpec {
            law: PotentialLaw::Rademacher,
            lattice: LatticeBox::periodic(1, 2, 8).unwrap(),
            seed: 5,
        })
        .unwrap();
        let lat = *env.lattice();
        let spec = BranchingSpec::binary(0.5);
        let one = Field::constant(lat, 1.0);
        let times: Vec<f64> = (0..=20).map(|k| 0.1 * k as f64).collect();
        for r in 0..50 {
            let (killed, free) = coupled_killed_simulate(&init_state(lat, 0.5), &env, &spec, 8, &times, std::slice::from_ref(&one), &mut replica_rng(2, r)).unwrap();
            for k in 0..times.len() {
                assert!(killed.populations[k] <= free.populations[k]);
            }
        }
    }

    #[test]
    fn outside_support_observable_vanishes() {
        let lat = LatticeBox::periodic(1, 2, 8).unwrap();
        let env = Environment::constant(lat, 0.5);
        let spec = BranchingSpec::binary(0.0);
        let phi = Field::from_fn(lat, |x| if x[0].abs() >= 1.0 { 1.0 } else { 0.0 });
        let path = killed_simulate(&init_state(lat, 0.0), &env, &spec, 2, &[0.5, 1.0], &[phi], &mut replica_rng(1, 1)).unwrap();
        assert!(path.pairings.iter().all(|p| p[0] == 0.0));
    }

    #[test]
    fn reproducible_and_binary_jumps_are_unit() {
        let env = sample_environment(&EnvironmentSpec {
            law: PotentialLaw::Rademacher,
            lattice: LatticeBox::periodic(1, 4, 4).unwrap(),
            seed: 1,
        })
        .unwrap();
        let lat = *env.lattice();
        let spec = BranchingSpec::binary(0.5);
        let phi = TestFunction::gaussian(1.0, 0.5).sample(lat);
        let a = simulate_path(&init_state(lat, 0.5), &env, &spec, &[0.25, 0.5], std::slice::from_ref(&phi), &mut replica_rng(3, 7)).unwrap();
        let b = simulate_path(&init_state(lat, 0.5), &env, &spec, &[0.25, 0.5], &[phi], &mut replica_rng(3, 7)).unwrap();
        assert_eq!(a, b);
        let mut engine = Engine::new(&init_state(lat, 0.5), &env, &spec, KillRule::None, 100).unwrap();
        let mut rng = replica_rng(4, 0);
        let mut last = engine.population();
        while engine.step(&mut rng).unwrap().is_some() {
            let p = engine.population();
            assert!(p.abs_diff(last) <= 1);
            last = p;
            if engine.time() > 2.0 {
                break;
            }
        }
    }

    #[test]
    fn population_cap_is_reported() {
        let lat = LatticeBox::periodic(1, 1, 4).unwrap();
        let env = Environment::constant(lat, 50.0);
        let spec = BranchingSpec::binary(0.0);
        let options = RunOptions {
            kill: KillRule::None,
            population_cap: 100,
        };
        let err = simulate_path_with(&init_state(lat, 0.0), &env, &spec, options, &[10.0], &[], &mut replica_rng(0, 0));
        assert!(matches!(err, Err(Error::PopulationCap { cap: 100, .. })));
    }

    #[test]
    fn critical_offspring_dies_out() {
        let lat = LatticeBox::periodic(1, 4, 4).unwrap();
        let env = Environment::zero(lat);
        let spec = BranchingSpec::offspring(0.0, vec![0.5, 0.0, 0.5]).unwrap();
        let ens = Ensemble::new(2000, 8);
        let state = init_state(lat, 0.0);
        let alive = ens
            .run(|_, rng| {
                let p = simulate_path(&state, &env, &spec, &[200.0], &[], rng).unwrap();
                (p.populations[0] > 0) as u8 as f64
            })
            .unwrap();
        // survival of critical binary splitting at rate 1 decays like 2/t
        let stats = SampleStats::from_samples(&alive);
        assert!(stats.mean < 0.02, "survival fraction {}", stats.mean);
    }
}
