//! Tabular multi-agent Q-learning baselines on the pattern-formation task:
//! independent, hysteretic and lenient Q-learning.
//!
//! Baseline agents observe the same local view as SEAL agents, minus the
//! pheromone gradient, and move by epsilon-greedy choice over Up, Down,
//! Left, Right and Stay. Each iteration a uniformly random subset of the
//! same size as SEAL's active set acts. An agent is rewarded with the
//! negated reward-table delta of the cell it ends up on, so a step that
//! would calm a SEAL agent is a positive reward here.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{similarity, AgentId, Direction, GridSpec, LabeledMask, Occupancy, Position};
use crate::seal::{
    active_count, placement_rng, run_rng, RewardTable, RunRecord, SealConfig, SealError,
};
use crate::view::{LocalView, VIEW_COUNT};

/// Up, Down, Left, Right, Stay.
pub const ACTIONS: usize = 5;

/// Guard that keeps a fully cooled temperature from dividing by zero.
const TEMPERATURE_EPSILON: f64 = 1e-12;

pub fn encode_state(view: &LocalView) -> usize {
    view.encode()
}

/// Dense Q-table over every local view. Entries start at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: Vec<f64>,
}

impl Default for QTable {
    fn default() -> Self {
        Self::new()
    }
}

impl QTable {
    pub fn new() -> Self {
        Self {
            values: vec![0.0; VIEW_COUNT * ACTIONS],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * ACTIONS + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * ACTIONS + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * ACTIONS..(s + 1) * ACTIONS]
    }

    pub fn max_value(&self, s: usize) -> f64 {
        self.row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn td_error(&self, s: usize, a: usize, r: f64, next: usize, gamma: f64) -> f64 {
        r + gamma * self.max_value(next) - self.get(s, a)
    }
}

pub fn iql_update(q: &mut QTable, s: usize, a: usize, r: f64, next: usize, alpha: f64, gamma: f64) {
    let delta = q.td_error(s, a, r, next, gamma);
    q.set(s, a, q.get(s, a) + alpha * delta);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HqlParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Learns at `alpha` from positive errors and at the smaller `beta` from
/// negative ones.
pub fn hql_update(q: &mut QTable, s: usize, a: usize, r: f64, next: usize, params: &HqlParams) {
    debug_assert!(params.beta <= params.alpha);
    let delta = q.td_error(s, a, r, next, params.gamma);
    let rate = if delta >= 0.0 {
        params.alpha
    } else {
        params.beta
    };
    q.set(s, a, q.get(s, a) + rate * delta);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LenientParams {
    pub alpha: f64,
    pub gamma: f64,
    pub initial_temperature: f64,
    /// Multiplicative cooling per visit.
    pub cooling: f64,
    /// Leniency shape.
    pub k: f64,
}

/// Per-pair temperatures for lenient learning.
#[derive(Debug, Clone, PartialEq)]
pub struct Temperatures {
    values: Vec<f64>,
}

impl Temperatures {
    pub fn new(initial: f64) -> Self {
        Self {
            values: vec![initial; VIEW_COUNT * ACTIONS],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * ACTIONS + a]
    }

    pub fn set(&mut self, s: usize, a: usize, t: f64) {
        self.values[s * ACTIONS + a] = t;
    }
}

/// Probability of ignoring a negative update at temperature `t`.
pub fn leniency(t: f64, k: f64) -> f64 {
    (-k / t.max(TEMPERATURE_EPSILON)).exp()
}

/// Positive errors always apply. Negative errors apply with probability
/// `1 - leniency`, drawing from `rng` only when that probability is strictly
/// between 0 and 1. The visited pair then cools.
#[allow(clippy::too_many_arguments)]
pub fn lmrl_update<R: Rng + ?Sized>(
    q: &mut QTable,
    temps: &mut Temperatures,
    s: usize,
    a: usize,
    r: f64,
    next: usize,
    params: &LenientParams,
    rng: &mut R,
) {
    let delta = q.td_error(s, a, r, next, params.gamma);
    let t = temps.get(s, a);
    let apply = if delta > 0.0 {
        true
    } else {
        let l = leniency(t, params.k);
        if l <= 0.0 {
            true
        } else if l >= 1.0 {
            false
        } else {
            rng.random::<f64>() >= l
        }
    };
    if apply {
        q.set(s, a, q.get(s, a) + params.alpha * delta);
    }
    temps.set(s, a, params.cooling * t);
}

/// Uniform action with probability `epsilon`, otherwise a greedy action with
/// ties broken uniformly.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &QTable, s: usize, epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return rng.random_range(0..ACTIONS);
    }
    let best = q.max_value(s);
    let ties: Vec<usize> = (0..ACTIONS).filter(|&a| q.get(s, a) == best).collect();
    if ties.len() == 1 {
        ties[0]
    } else {
        *ties.choose(rng).expect("at least one maximal action")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Iql,
    Hql,
    Lmrl,
}

impl Algo {
    pub const ALL: [Algo; 3] = [Algo::Iql, Algo::Hql, Algo::Lmrl];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Iql => "iql",
            Algo::Hql => "hql",
            Algo::Lmrl => "lmrl",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "iql" => Ok(Algo::Iql),
            "hql" => Ok(Algo::Hql),
            "lmrl" => Ok(Algo::Lmrl),
            other => Err(format!("unknown algorithm {other:?}")),
        }
    }
}

/// Learning hyperparameters shared by the three baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub initial_temperature: f64,
    pub cooling: f64,
    pub leniency_k: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.01,
            gamma: 0.9,
            epsilon_start: 0.1,
            epsilon_end: 0.01,
            initial_temperature: 1.0,
            cooling: 0.995,
            leniency_k: 1.0,
        }
    }
}

impl BaselineParams {
    pub fn validate(&self) -> Result<(), SealError> {
        let bad = |field: &'static str, reason: &str| {
            Err(SealError::Config {
                field,
                reason: reason.into(),
            })
        };
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha", "must lie in (0, 1]");
        }
        if !(self.beta > 0.0 && self.beta <= self.alpha) {
            return bad("beta", "must lie in (0, alpha]");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        for (field, e) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&e) {
                return bad(field, "must lie in [0, 1]");
            }
        }
        if !(self.initial_temperature.is_finite() && self.initial_temperature >= 0.0) {
            return bad("initial_temperature", "must be finite and non-negative");
        }
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return bad("cooling", "must lie in (0, 1)");
        }
        if !(self.leniency_k.is_finite() && self.leniency_k > 0.0) {
            return bad("leniency_k", "must be positive");
        }
        Ok(())
    }

    /// Exploration rate for a 0-based iteration, linear from start to end.
    pub fn epsilon_at(&self, iteration: usize, iterations: usize) -> f64 {
        if iterations <= 1 {
            return self.epsilon_start;
        }
        let t = iteration as f64 / (iterations - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }

    pub fn hql(&self) -> HqlParams {
        HqlParams {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn lenient(&self) -> LenientParams {
        LenientParams {
            alpha: self.alpha,
            gamma: self.gamma,
            initial_temperature: self.initial_temperature,
            cooling: self.cooling,
            k: self.leniency_k,
        }
    }
}

/// One learner per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub q: QTable,
    pub temperatures: Temperatures,
}

fn observe(pos: Position, occ: &Occupancy, mask: &LabeledMask, spec: &GridSpec) -> usize {
    encode_state(&LocalView::observe(pos, occ, mask, spec, &[]))
}

/// Cell reached by an action, or the current cell if it is blocked.
fn resolve_action(pos: Position, action: usize, occ: &Occupancy, spec: &GridSpec) -> Position {
    Direction::ALL
        .get(action)
        .and_then(|&d| spec.neighbor(pos, d))
        .filter(|&p| occ.is_free(p))
        .unwrap_or(pos)
}

/// Runs a baseline on the same task, placement and iteration budget as the
/// SEAL configuration `task`. Only `task.active_fraction`, the reward table,
/// `max_iterations` and `seed` are used.
pub fn run_baseline(
    algo: Algo,
    task: &SealConfig,
    params: &BaselineParams,
    spec: GridSpec,
    mask: &LabeledMask,
    agent_count: usize,
) -> Result<RunRecord, SealError> {
    task.validate()?;
    params.validate()?;
    if mask.width() != spec.width() || mask.height() != spec.height() {
        return Err(SealError::MaskMismatch {
            mask_w: mask.width(),
            mask_h: mask.height(),
            grid_w: spec.width(),
            grid_h: spec.height(),
        });
    }
    let capacity = spec.cell_count();
    if agent_count > capacity {
        return Err(SealError::Capacity {
            requested: agent_count,
            capacity,
        });
    }
    let mut placement = placement_rng(task.seed);
    let mut occ = Occupancy::new(spec);
    let mut positions: Vec<Position> = index::sample(&mut placement, capacity, agent_count)
        .into_iter()
        .map(|i| spec.position(i))
        .collect();
    for (i, &p) in positions.iter().enumerate() {
        occ.place(AgentId(i), p)?;
    }

    let mut rng = run_rng(task.seed);
    let template = Learner {
        q: QTable::new(),
        temperatures: Temperatures::new(params.initial_temperature),
    };
    let mut learners = vec![template; agent_count];
    let table: &RewardTable = &task.reward_table;
    let bound = table.max_abs() / (1.0 - params.gamma) + 1e-9;
    let k = active_count(agent_count, task.active_fraction);
    let (hql, lenient) = (params.hql(), params.lenient());

    let mut trace = Vec::with_capacity(task.max_iterations);
    for it in 0..task.max_iterations {
        let epsilon = params.epsilon_at(it, task.max_iterations);
        let mut order: Vec<usize> = index::sample(&mut rng, agent_count, k).into_vec();
        order.shuffle(&mut rng);
        for i in order {
            let from = positions[i];
            let s = observe(from, &occ, mask, &spec);
            let learner = &mut learners[i];
            let a = epsilon_greedy(&learner.q, s, epsilon, &mut rng);
            let to = resolve_action(from, a, &occ, &spec);
            occ.move_agent(AgentId(i), to)
                .expect("resolve_action only returns the current cell or a free neighbor");
            positions[i] = to;
            let next = observe(to, &occ, mask, &spec);
            let r = -table.delta(mask.is_labeled(to), occ.neighbor_count(to));
            match algo {
                Algo::Iql => iql_update(&mut learner.q, s, a, r, next, params.alpha, params.gamma),
                Algo::Hql => hql_update(&mut learner.q, s, a, r, next, &hql),
                Algo::Lmrl => lmrl_update(
                    &mut learner.q,
                    &mut learner.temperatures,
                    s,
                    a,
                    r,
                    next,
                    &lenient,
                    &mut rng,
                ),
            }
            let value = learner.q.get(s, a);
            if value.is_nan() || value.abs() > bound {
                return Err(SealError::QBound {
                    iteration: it + 1,
                    value,
                    bound,
                });
            }
        }
        occ.check_invariants()
            .map_err(|violation| SealError::Invariant {
                iteration: it + 1,
                violation,
            })?;
        trace.push(similarity(&occ, mask));
    }
    Ok(RunRecord {
        similarity: trace,
        final_positions: positions,
        config_hash: task.config_hash(),
        seed: task.seed,
    })
}
