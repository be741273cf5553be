//! The stigmergic cooperation loop.
//!
//! Each iteration selects the highest-priority agents as active, lets each
//! active agent (in shuffled order) sense pheromone, pick an attractor, step
//! toward it and deposit, then refreshes every agent's priority from the
//! reward table and decays the medium.

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::canonical_hash;
use crate::federated::{self, ExperienceBatch, GradientVector, LinearQ, ParamVector, Transition};
use crate::grid::{
    similarity, AgentId, Direction, GridSpec, InvariantViolation, LabeledMask, Occupancy,
    OccupancyError, Position,
};
use crate::pheromone::{
    response_amplitude, ChannelNoise, PheromoneError, PheromoneField, PheromoneParams, Sensed,
};
use crate::view::LocalView;

#[derive(Debug, Error)]
pub enum SealError {
    #[error("invalid config: {field} {reason}")]
    Config { field: &'static str, reason: String },
    #[error(transparent)]
    Pheromone(#[from] PheromoneError),
    #[error("cannot place {requested} agents on {capacity} free cells")]
    Capacity { requested: usize, capacity: usize },
    #[error("mask is {mask_w}x{mask_h} but grid is {grid_w}x{grid_h}")]
    MaskMismatch {
        mask_w: usize,
        mask_h: usize,
        grid_w: usize,
        grid_h: usize,
    },
    #[error("invariant violated at iteration {iteration}: {violation}")]
    Invariant {
        iteration: usize,
        violation: InvariantViolation,
    },
    #[error(transparent)]
    Placement(#[from] OccupancyError),
    #[error("Q-value {value} at iteration {iteration} exceeds the bound {bound}")]
    QBound {
        iteration: usize,
        value: f64,
        bound: f64,
    },
}

fn bad(field: &'static str, reason: impl Into<String>) -> SealError {
    SealError::Config {
        field,
        reason: reason.into(),
    }
}

/// Priority deltas keyed by (on labeled cell, occupied 4-neighbors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardTable {
    pub labeled: [f64; 5],
    pub unlabeled: [f64; 5],
}

impl RewardTable {
    pub fn delta(&self, on_labeled: bool, neighbors: usize) -> f64 {
        if on_labeled {
            self.labeled[neighbors]
        } else {
            self.unlabeled[neighbors]
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.labeled
            .iter()
            .chain(&self.unlabeled)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Default for RewardTable {
    /// Settled agents calm down and stray agents grow restless, both more
    /// so the more neighbors they have.
    fn default() -> Self {
        Self {
            labeled: [-1.0, -2.0, -3.0, -4.0, -5.0],
            unlabeled: [0.5, 1.0, 1.5, 2.0, 2.5],
        }
    }
}

/// How action priorities are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorityMode {
    /// Accumulate reward-table deltas.
    #[default]
    Table,
    /// Priority is the negated greedy value of a shared linear Q-function
    /// trained by federated semi-gradient TD rounds, one per iteration.
    Federated { learning_rate: f64, gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SealConfig {
    pub active_fraction: f64,
    pub sense_radius: usize,
    pub response_sigma: f64,
    /// Standard deviation of the sensing noise.
    pub noise_std: f64,
    pub max_iterations: usize,
    pub seed: u64,
    #[serde(default = "default_priority_min")]
    pub priority_min: f64,
    #[serde(default = "default_priority_max")]
    pub priority_max: f64,
    #[serde(default)]
    pub pheromone: PheromoneParams,
    #[serde(default)]
    pub reward_table: RewardTable,
    #[serde(default)]
    pub priority: PriorityMode,
}

fn default_priority_min() -> f64 {
    -10.0
}

fn default_priority_max() -> f64 {
    10.0
}

impl Default for SealConfig {
    fn default() -> Self {
        Self {
            active_fraction: 0.5,
            sense_radius: 3,
            response_sigma: 1.5,
            noise_std: 0.0,
            max_iterations: 300,
            seed: 1,
            priority_min: default_priority_min(),
            priority_max: default_priority_max(),
            pheromone: PheromoneParams::default(),
            reward_table: RewardTable::default(),
            priority: PriorityMode::Table,
        }
    }
}

impl SealConfig {
    pub fn validate(&self) -> Result<(), SealError> {
        if !(self.active_fraction > 0.0 && self.active_fraction <= 1.0) {
            return Err(bad(
                "active_fraction",
                format!("must lie in (0, 1], got {}", self.active_fraction),
            ));
        }
        if self.sense_radius == 0 {
            return Err(bad("sense_radius", "must be positive"));
        }
        if !(self.response_sigma.is_finite() && self.response_sigma > 0.0) {
            return Err(bad(
                "response_sigma",
                format!("must be positive, got {}", self.response_sigma),
            ));
        }
        ChannelNoise::new(self.noise_std)?;
        self.pheromone.validate()?;
        if !(self.priority_min.is_finite()
            && self.priority_max.is_finite()
            && self.priority_min <= self.priority_max)
        {
            return Err(bad(
                "priority_min/priority_max",
                "must be finite with min <= max",
            ));
        }
        let table = &self.reward_table;
        if table
            .labeled
            .iter()
            .chain(&table.unlabeled)
            .any(|v| !v.is_finite())
        {
            return Err(bad("reward_table", "entries must be finite"));
        }
        if let PriorityMode::Federated {
            learning_rate,
            gamma,
        } = self.priority
        {
            if !(learning_rate.is_finite() && learning_rate > 0.0) {
                return Err(bad("priority.learning_rate", "must be positive"));
            }
            if !(0.0..=1.0).contains(&gamma) {
                return Err(bad("priority.gamma", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn noise(&self) -> ChannelNoise {
        ChannelNoise::new(self.noise_std).expect("validated")
    }

    pub fn config_hash(&self) -> String {
        canonical_hash(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub id: AgentId,
    pub pos: Position,
    pub priority: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// Similarity after each executed iteration.
    pub similarity: Vec<f64>,
    /// Final agent positions indexed by agent id.
    pub final_positions: Vec<Position>,
    pub config_hash: String,
    pub seed: u64,
}

impl RunRecord {
    pub fn final_similarity(&self) -> Option<f64> {
        self.similarity.last().copied()
    }

    /// Similarity after the given 1-based iteration.
    pub fn similarity_at(&self, iteration: usize) -> Option<f64> {
        iteration
            .checked_sub(1)
            .and_then(|i| self.similarity.get(i))
            .copied()
    }
}

/// Number of agents activated for a given population and fraction.
pub fn active_count(agents: usize, fraction: f64) -> usize {
    if agents == 0 {
        return 0;
    }
    // Guard against products like 0.1 * 30 = 3.0000000000000004.
    let k = (fraction * agents as f64 - 1e-9).ceil().max(1.0) as usize;
    k.min(agents)
}

/// Ids of the ⌈fraction·N⌉ highest-priority agents, sorted by id. Ties are
/// broken uniformly at random.
pub fn select_active<R: Rng + ?Sized>(
    agents: &[AgentState],
    fraction: f64,
    rng: &mut R,
) -> Vec<AgentId> {
    let k = active_count(agents.len(), fraction);
    let mut order: Vec<usize> = (0..agents.len()).collect();
    order.shuffle(rng);
    // Stable sort over a random permutation leaves tied agents in random order.
    order.sort_by(|&a, &b| agents[b].priority.total_cmp(&agents[a].priority));
    let mut ids: Vec<AgentId> = order[..k].iter().map(|&i| agents[i].id).collect();
    ids.sort();
    ids
}

/// Samples an attractor with probability proportional to
/// `perceived · response(distance)`. Returns `None` when all weights vanish.
pub fn select_attractor<R: Rng + ?Sized>(
    from: Position,
    sensed: &[Sensed],
    sigma: f64,
    spec: &GridSpec,
    rng: &mut R,
) -> Option<Position> {
    let weights: Vec<f64> = sensed
        .iter()
        .map(|s| s.perceived * response_amplitude(spec.torus_distance(from, s.pos), sigma))
        .collect();
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return None;
    }
    let mut target = rng.random::<f64>() * total;
    let mut last = None;
    for (s, w) in sensed.iter().zip(&weights) {
        if *w <= 0.0 {
            continue;
        }
        if target < *w {
            return Some(s.pos);
        }
        target -= w;
        last = Some(s.pos);
    }
    // Rounding can leave a sliver past the final bucket.
    last
}

/// One movement step.
///
/// Toward an attractor the agent tries the dominant axis first. If that cell
/// is taken, an agent off the target tries both perpendicular directions in
/// random order, while an agent on the target stays put. Without an attractor an agent off the target wanders to a random free
/// neighbor, while an agent already on the target holds its cell.
pub fn step_move<R: Rng + ?Sized>(
    pos: Position,
    attractor: Option<Position>,
    on_labeled: bool,
    occ: &Occupancy,
    spec: &GridSpec,
    rng: &mut R,
) -> Position {
    let free = |dir: Direction| spec.neighbor(pos, dir).filter(|&p| occ.is_free(p));
    match attractor {
        Some(target) => {
            let (dx, dy) = spec.displacement(pos, target);
            let horizontal = match dx.abs().cmp(&dy.abs()) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => rng.random_bool(0.5),
            };
            let primary = if horizontal {
                if dx > 0 {
                    Direction::Right
                } else {
                    Direction::Left
                }
            } else if dy > 0 {
                Direction::Down
            } else {
                Direction::Up
            };
            if let Some(p) = free(primary) {
                return p;
            }
            // Side-stepping would walk settled agents off the shape.
            if on_labeled {
                return pos;
            }
            let mut sides = primary.perpendicular();
            sides.shuffle(rng);
            sides.into_iter().find_map(free).unwrap_or(pos)
        }
        None if on_labeled => pos,
        None => {
            let options: Vec<Position> = Direction::ALL.into_iter().filter_map(free).collect();
            options.choose(rng).copied().unwrap_or(pos)
        }
    }
}

/// `priority + table(label, neighbors)`, clamped to `[min, max]`.
pub fn update_priority(
    agent: &AgentState,
    table: &RewardTable,
    occ: &Occupancy,
    mask: &LabeledMask,
    bounds: (f64, f64),
) -> f64 {
    let delta = table.delta(mask.is_labeled(agent.pos), occ.neighbor_count(agent.pos));
    (agent.priority + delta).clamp(bounds.0, bounds.1)
}

/// What happened during one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub active: Vec<AgentId>,
    pub similarity: f64,
}

/// Complete simulation state.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    spec: GridSpec,
    mask: LabeledMask,
    occupancy: Occupancy,
    field: PheromoneField,
    agents: Vec<AgentState>,
    learner: Option<FederatedPriority>,
}

#[derive(Debug, Clone, PartialEq)]
struct FederatedPriority {
    model: LinearQ,
    params: ParamVector,
}

impl World {
    /// Places agents at the given cells with priority 0.
    pub fn with_positions(
        spec: GridSpec,
        mask: LabeledMask,
        pheromone: PheromoneParams,
        positions: &[Position],
    ) -> Result<Self, SealError> {
        if mask.width() != spec.width() || mask.height() != spec.height() {
            return Err(SealError::MaskMismatch {
                mask_w: mask.width(),
                mask_h: mask.height(),
                grid_w: spec.width(),
                grid_h: spec.height(),
            });
        }
        if positions.len() > spec.cell_count() {
            return Err(SealError::Capacity {
                requested: positions.len(),
                capacity: spec.cell_count(),
            });
        }
        let mut occupancy = Occupancy::new(spec);
        let mut agents = Vec::with_capacity(positions.len());
        for (i, &pos) in positions.iter().enumerate() {
            occupancy.place(AgentId(i), pos)?;
            agents.push(AgentState {
                id: AgentId(i),
                pos,
                priority: 0.0,
            });
        }
        Ok(Self {
            spec,
            mask,
            occupancy,
            field: PheromoneField::new(spec, pheromone),
            agents,
            learner: None,
        })
    }

    /// Places `count` agents uniformly at random over distinct cells.
    pub fn random<R: Rng + ?Sized>(
        spec: GridSpec,
        mask: LabeledMask,
        pheromone: PheromoneParams,
        count: usize,
        rng: &mut R,
    ) -> Result<Self, SealError> {
        let capacity = spec.cell_count();
        if count > capacity {
            return Err(SealError::Capacity {
                requested: count,
                capacity,
            });
        }
        let positions: Vec<Position> = index::sample(rng, capacity, count)
            .into_iter()
            .map(|i| spec.position(i))
            .collect();
        Self::with_positions(spec, mask, pheromone, &positions)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn mask(&self) -> &LabeledMask {
        &self.mask
    }

    pub fn occupancy(&self) -> &Occupancy {
        &self.occupancy
    }

    pub fn field(&self) -> &PheromoneField {
        &self.field
    }

    pub fn field_mut(&mut self) -> &mut PheromoneField {
        &mut self.field
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn set_priority(&mut self, id: AgentId, priority: f64) {
        self.agents[id.0].priority = priority;
    }

    pub fn similarity(&self) -> f64 {
        similarity(&self.occupancy, &self.mask)
    }

    pub fn positions(&self) -> Vec<Position> {
        self.agents.iter().map(|a| a.pos).collect()
    }

    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        self.occupancy.check_invariants()?;
        if self.occupancy.len() != self.agents.len() {
            return Err(InvariantViolation::Conservation {
                occupied: self.occupancy.len(),
                live: self.agents.len(),
            });
        }
        self.field.check_bounds()
    }

    fn local_view(&self, pos: Position, sensed: &[Sensed]) -> LocalView {
        LocalView::observe(pos, &self.occupancy, &self.mask, &self.spec, sensed)
    }

    /// Executes one iteration.
    pub fn tick<R: Rng + ?Sized>(&mut self, cfg: &SealConfig, rng: &mut R) -> TickReport {
        if self.agents.is_empty() {
            self.field.decay_tick();
            return TickReport {
                active: Vec::new(),
                similarity: self.similarity(),
            };
        }
        if matches!(cfg.priority, PriorityMode::Federated { .. }) && self.learner.is_none() {
            let model = LinearQ::new(federated::FEATURE_DIM, federated::ACTIONS);
            self.learner = Some(FederatedPriority {
                params: ParamVector::zeros(model.dimension()),
                model,
            });
        }

        let active = select_active(&self.agents, cfg.active_fraction, rng);
        let mut order = active.clone();
        order.shuffle(rng);

        let noise = cfg.noise();
        let mut experience: Vec<Transition> = Vec::new();
        for id in order {
            let from = self.agents[id.0].pos;
            let on_labeled = self.mask.is_labeled(from);
            let sensed = self.field.sense(from, cfg.sense_radius, noise, rng);
            let before = self
                .learner
                .as_ref()
                .map(|_| self.local_view(from, &sensed));
            let attractor = select_attractor(from, &sensed, cfg.response_sigma, &self.spec, rng);
            let to = step_move(
                from,
                attractor,
                on_labeled,
                &self.occupancy,
                &self.spec,
                rng,
            );
            self.occupancy
                .move_agent(id, to)
                .expect("step_move only returns the current cell or a free neighbor");
            self.agents[id.0].pos = to;
            if to != from {
                self.field.deposit(to, self.mask.is_labeled(to));
            }
            if let Some(view) = before {
                let after = self.local_view(
                    to,
                    &self
                        .field
                        .sense(to, cfg.sense_radius, ChannelNoise::NOISELESS, rng),
                );
                let reward = -cfg
                    .reward_table
                    .delta(after.on_labeled, after.neighbor_count());
                experience.push(Transition {
                    features: federated::featurize(&view),
                    action: move_index(&self.spec, from, to),
                    reward,
                    next_features: federated::featurize(&after),
                    terminal: false,
                });
            }
        }

        self.refresh_priorities(cfg, experience, rng);
        self.field.decay_tick();
        TickReport {
            active,
            similarity: self.similarity(),
        }
    }

    fn refresh_priorities<R: Rng + ?Sized>(
        &mut self,
        cfg: &SealConfig,
        experience: Vec<Transition>,
        rng: &mut R,
    ) {
        let bounds = (cfg.priority_min, cfg.priority_max);
        match (&cfg.priority, self.learner.as_mut()) {
            (
                PriorityMode::Federated {
                    learning_rate,
                    gamma,
                },
                Some(learner),
            ) => {
                // One federated round: each active agent contributes the
                // gradient of its own single-transition batch.
                let grads: Vec<GradientVector> = experience
                    .into_iter()
                    .map(|t| {
                        let batch = ExperienceBatch::new(vec![t]).expect("one transition");
                        learner
                            .model
                            .local_gradient(&learner.params, &batch, *gamma)
                            .expect("featurized dims")
                    })
                    .collect();
                if !grads.is_empty() {
                    let fused = federated::aggregate(&grads).expect("same model dimension");
                    learner.params =
                        federated::apply_update(&learner.params, &fused, *learning_rate)
                            .expect("same model dimension");
                }
                let learner = self.learner.as_ref().expect("present");
                for i in 0..self.agents.len() {
                    let pos = self.agents[i].pos;
                    let sensed =
                        self.field
                            .sense(pos, cfg.sense_radius, ChannelNoise::NOISELESS, rng);
                    let view = self.local_view(pos, &sensed);
                    let value = learner
                        .model
                        .greedy_value(&learner.params, &federated::featurize(&view));
                    self.agents[i].priority = (-value).clamp(bounds.0, bounds.1);
                }
            }
            _ => {
                let updated: Vec<f64> = self
                    .agents
                    .iter()
                    .map(|a| {
                        update_priority(a, &cfg.reward_table, &self.occupancy, &self.mask, bounds)
                    })
                    .collect();
                for (agent, p) in self.agents.iter_mut().zip(updated) {
                    agent.priority = p;
                }
            }
        }
    }

    /// Learned parameters of the federated priority variant, if active.
    pub fn learned_params(&self) -> Option<&ParamVector> {
        self.learner.as_ref().map(|l| &l.params)
    }
}

/// Action index (Up, Down, Left, Right, Stay) of a single step.
fn move_index(spec: &GridSpec, from: Position, to: Position) -> usize {
    Direction::ALL
        .iter()
        .find(|&&d| spec.neighbor(from, d) == Some(to))
        .map_or(4, |d| d.index())
}

/// Runs `cfg.max_iterations` ticks on an existing world, checking structural
/// invariants after every tick.
pub fn run_world(mut world: World, cfg: &SealConfig) -> Result<(RunRecord, World), SealError> {
    cfg.validate()?;
    let mut rng = run_rng(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.max_iterations);
    for iteration in 1..=cfg.max_iterations {
        let report = world.tick(cfg, &mut rng);
        world
            .check_invariants()
            .map_err(|violation| SealError::Invariant {
                iteration,
                violation,
            })?;
        trace.push(report.similarity);
    }
    let record = RunRecord {
        similarity: trace,
        final_positions: world.positions(),
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
    };
    Ok((record, world))
}

/// Seeded placement followed by `cfg.max_iterations` ticks. Placement and
/// dynamics draw from separate streams of the run seed.
pub fn run(
    cfg: &SealConfig,
    spec: GridSpec,
    mask: &LabeledMask,
    agent_count: usize,
) -> Result<RunRecord, SealError> {
    cfg.validate()?;
    let mut placement = placement_rng(cfg.seed);
    let world = World::random(
        spec,
        mask.clone(),
        cfg.pheromone,
        agent_count,
        &mut placement,
    )?;
    run_world(world, cfg).map(|(record, _)| record)
}

/// Stream 0 of the run seed: dynamics.
pub fn run_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream 1 of the run seed: initial placement.
pub fn placement_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}
