//! Anytime universal intelligence test for a team of agents.
//!
//! Agents share a toroidal space with two moving objects, Good and Evil,
//! that follow movement patterns. Each step an agent earns
//! `(d_evil - d_good) / D`, where `D` is the largest distance on the torus.
//! Cells are shareable. Task complexity is varied through the patterns and
//! environment complexity through the space size.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Boundary, GridSpec, Position};

/// Symbols a pattern is expanded to before compression.
pub const COMPLEXITY_LENGTH: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuitError {
    #[error("movement pattern is empty")]
    EmptyPattern,
    #[error("unknown action mnemonic {0:?}")]
    UnknownAction(String),
    #[error("AUIT space must be toroidal")]
    NotToroidal,
    #[error("space {width}x{height} is too small")]
    TooSmall { width: usize, height: usize },
    #[error("team has no agents")]
    EmptyTeam,
    #[error("invalid setting: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AuitAction {
    Left,
    Right,
    Up,
    Down,
    UpLeft,
    UpRight,
    DownLeft,
    DownRight,
    Stay,
}

impl AuitAction {
    pub const ALL: [AuitAction; 9] = [
        AuitAction::Left,
        AuitAction::Right,
        AuitAction::Up,
        AuitAction::Down,
        AuitAction::UpLeft,
        AuitAction::UpRight,
        AuitAction::DownLeft,
        AuitAction::DownRight,
        AuitAction::Stay,
    ];

    /// Screen offset, y growing downward.
    pub fn offset(self) -> (isize, isize) {
        match self {
            AuitAction::Left => (-1, 0),
            AuitAction::Right => (1, 0),
            AuitAction::Up => (0, -1),
            AuitAction::Down => (0, 1),
            AuitAction::UpLeft => (-1, -1),
            AuitAction::UpRight => (1, -1),
            AuitAction::DownLeft => (-1, 1),
            AuitAction::DownRight => (1, 1),
            AuitAction::Stay => (0, 0),
        }
    }

    pub fn from_offset(dx: isize, dy: isize) -> AuitAction {
        match (dx.signum(), dy.signum()) {
            (-1, 0) => AuitAction::Left,
            (1, 0) => AuitAction::Right,
            (0, -1) => AuitAction::Up,
            (0, 1) => AuitAction::Down,
            (-1, -1) => AuitAction::UpLeft,
            (1, -1) => AuitAction::UpRight,
            (-1, 1) => AuitAction::DownLeft,
            (1, 1) => AuitAction::DownRight,
            _ => AuitAction::Stay,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            AuitAction::Left => "L",
            AuitAction::Right => "R",
            AuitAction::Up => "U",
            AuitAction::Down => "D",
            AuitAction::UpLeft => "UL",
            AuitAction::UpRight => "UR",
            AuitAction::DownLeft => "DL",
            AuitAction::DownRight => "DR",
            AuitAction::Stay => "S",
        }
    }

    pub fn index(self) -> usize {
        AuitAction::ALL
            .iter()
            .position(|&a| a == self)
            .expect("listed")
    }
}

impl fmt::Display for AuitAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl FromStr for AuitAction {
    type Err = AuitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AuitAction::ALL
            .into_iter()
            .find(|a| a.mnemonic().eq_ignore_ascii_case(s))
            .ok_or_else(|| AuitError::UnknownAction(s.to_string()))
    }
}

/// A non-empty action string repeated cyclically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MovementPattern {
    actions: Vec<AuitAction>,
}

impl MovementPattern {
    pub fn new(actions: Vec<AuitAction>) -> Result<Self, AuitError> {
        if actions.is_empty() {
            return Err(AuitError::EmptyPattern);
        }
        Ok(Self { actions })
    }

    /// Uniformly random actions, fixed by `seed`.
    pub fn random_walk(length: usize, seed: u64) -> Result<Self, AuitError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(
            (0..length)
                .map(|_| *AuitAction::ALL.choose(&mut rng).expect("non-empty"))
                .collect(),
        )
    }

    /// Comma-separated mnemonics; whitespace is ignored.
    pub fn parse(text: &str) -> Result<Self, AuitError> {
        let actions = text
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(actions)
    }

    pub fn actions(&self) -> &[AuitAction] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn at(&self, cursor: usize) -> AuitAction {
        self.actions[cursor % self.actions.len()]
    }

    pub fn expand(&self, length: usize) -> Vec<AuitAction> {
        (0..length).map(|i| self.at(i)).collect()
    }

    pub fn to_text(&self) -> String {
        let parts: Vec<&str> = self.actions.iter().map(|a| a.mnemonic()).collect();
        parts.join(",")
    }
}

/// Compressed size in bits of the pattern expanded to `COMPLEXITY_LENGTH`
/// symbols, one byte per symbol. A Kolmogorov proxy with ordinal meaning only.
pub fn pattern_complexity(pattern: &MovementPattern) -> u64 {
    let bytes: Vec<u8> = pattern
        .expand(COMPLEXITY_LENGTH)
        .iter()
        .map(|a| b'0' + a.index() as u8)
        .collect();
    compressed_bits(&bytes)
}

fn compressed_bits(bytes: &[u8]) -> u64 {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::best());
    enc.write_all(bytes).expect("in-memory write");
    let out = enc.finish().expect("in-memory write");
    out.len() as u64 * 8
}

/// Entropy in bits of a uniform position on the grid.
pub fn env_entropy(spec: &GridSpec) -> f64 {
    (spec.cell_count() as f64).log2()
}

/// Reference patterns: constant, period 8 and a seeded random walk.
pub fn reference_patterns() -> Vec<(&'static str, MovementPattern)> {
    [
        ("constant", include_str!("../patterns/auit/constant.txt")),
        ("period8", include_str!("../patterns/auit/period8.txt")),
        (
            "random-walk",
            include_str!("../patterns/auit/random-walk.txt"),
        ),
    ]
    .into_iter()
    .map(|(id, text)| {
        (
            id,
            MovementPattern::parse(text).expect("shipped pattern parses"),
        )
    })
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSpec {
    /// Normalization distance.
    pub scale: f64,
}

impl RewardSpec {
    pub fn for_space(spec: &GridSpec) -> Self {
        Self {
            scale: spec.max_distance(),
        }
    }

    pub fn reward(&self, spec: &GridSpec, agent: Position, good: Position, evil: Position) -> f64 {
        let diff = spec.torus_distance(agent, evil) - spec.torus_distance(agent, good);
        (diff / self.scale).clamp(-1.0, 1.0)
    }
}

/// How agents pool what they see.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CommMode {
    /// Everyone learns every observation exactly.
    Direct,
    /// Foreign observations arrive with Gaussian positional error.
    Indirect { bias_std: f64 },
    /// Agents see their own observations and the last actions of agents
    /// within `range`. A range of 0 isolates every agent.
    Imitation { range: f64 },
}

impl CommMode {
    pub fn name(&self) -> &'static str {
        match self {
            CommMode::Direct => "direct",
            CommMode::Indirect { .. } => "indirect",
            CommMode::Imitation { .. } => "imitation",
        }
    }

    pub fn validate(&self) -> Result<(), AuitError> {
        match *self {
            CommMode::Indirect { bias_std } if !(bias_std.is_finite() && bias_std >= 0.0) => {
                Err(AuitError::Config(format!(
                    "bias_std must be finite and non-negative, got {bias_std}"
                )))
            }
            CommMode::Imitation { range } if !(range.is_finite() && range >= 0.0) => {
                Err(AuitError::Config(format!(
                    "range must be finite and non-negative, got {range}"
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectId {
    Agent(usize),
    Good,
    Evil,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Observation {
    pub object: ObjectId,
    pub pos: Position,
}

/// What an agent believes after communication.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Belief {
    /// Sorted and deduplicated.
    pub observations: Vec<Observation>,
    /// Last actions of observed peers, by agent index.
    pub peer_actions: Vec<(usize, AuitAction)>,
}

/// Toroidal space holding the team and the two special objects.
#[derive(Debug, Clone, PartialEq)]
pub struct AuitSpace {
    spec: GridSpec,
    pub agents: Vec<Position>,
    pub good: Position,
    pub evil: Position,
}

impl AuitSpace {
    pub fn new(
        spec: GridSpec,
        agents: Vec<Position>,
        good: Position,
        evil: Position,
    ) -> Result<Self, AuitError> {
        if spec.boundary() != Boundary::Toroidal {
            return Err(AuitError::NotToroidal);
        }
        if spec.max_distance() <= 0.0 {
            return Err(AuitError::TooSmall {
                width: spec.width(),
                height: spec.height(),
            });
        }
        if let Some(p) = agents
            .iter()
            .chain([&good, &evil])
            .find(|p| !spec.contains(**p))
        {
            return Err(AuitError::Config(format!("{p} lies outside the space")));
        }
        Ok(Self {
            spec,
            agents,
            good,
            evil,
        })
    }

    /// Uniform independent placement of every object.
    pub fn random<R: Rng + ?Sized>(
        spec: GridSpec,
        agents: usize,
        rng: &mut R,
    ) -> Result<Self, AuitError> {
        let mut cell = || spec.position(rng.random_range(0..spec.cell_count()));
        let team = (0..agents).map(|_| cell()).collect();
        let good = cell();
        let evil = cell();
        Self::new(spec, team, good, evil)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn apply(&self, pos: Position, action: AuitAction) -> Position {
        let (dx, dy) = action.offset();
        self.spec
            .offset(pos, dx, dy)
            .expect("toroidal offsets always land in bounds")
    }

    pub fn rewards(&self) -> Vec<f64> {
        let spec = RewardSpec::for_space(&self.spec);
        self.agents
            .iter()
            .map(|&a| spec.reward(&self.spec, a, self.good, self.evil))
            .collect()
    }

    /// Everything agent `i` sees within `radius`, excluding itself.
    pub fn observe(&self, i: usize, radius: f64) -> Vec<Observation> {
        let me = self.agents[i];
        let mut seen: Vec<Observation> = self
            .agents
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, &pos)| Observation {
                object: ObjectId::Agent(j),
                pos,
            })
            .chain([
                Observation {
                    object: ObjectId::Good,
                    pos: self.good,
                },
                Observation {
                    object: ObjectId::Evil,
                    pos: self.evil,
                },
            ])
            .filter(|o| self.spec.torus_distance(me, o.pos) <= radius)
            .collect();
        seen.sort();
        seen
    }
}

/// Moves the agents, then advances Good and Evil one symbol each, then
/// scores every agent. Cursors are advanced in place.
pub fn step_auit(
    space: &mut AuitSpace,
    actions: &[AuitAction],
    good: &MovementPattern,
    evil: &MovementPattern,
    cursors: &mut (usize, usize),
) -> Vec<f64> {
    assert_eq!(actions.len(), space.agents.len(), "one action per agent");
    for (i, &action) in actions.iter().enumerate() {
        space.agents[i] = space.apply(space.agents[i], action);
    }
    space.good = space.apply(space.good, good.at(cursors.0));
    space.evil = space.apply(space.evil, evil.at(cursors.1));
    cursors.0 += 1;
    cursors.1 += 1;
    space.rewards()
}

/// Combines per-agent observations into per-agent beliefs. Only the
/// indirect mode with a positive bias draws from `rng`.
pub fn share_observations<R: Rng + ?Sized>(
    space: &AuitSpace,
    own: &[Vec<Observation>],
    last_actions: &[AuitAction],
    mode: &CommMode,
    rng: &mut R,
) -> Vec<Belief> {
    let n = own.len();
    match *mode {
        CommMode::Direct => {
            let union = merged(own.iter().flatten().copied());
            vec![
                Belief {
                    observations: union,
                    peer_actions: Vec::new()
                };
                n
            ]
        }
        CommMode::Indirect { bias_std } => {
            let normal =
                (bias_std > 0.0).then(|| Normal::new(0.0, bias_std).expect("validated std"));
            (0..n)
                .map(|i| {
                    let mut all = own[i].clone();
                    for (j, obs) in own.iter().enumerate() {
                        if j == i {
                            continue;
                        }
                        for o in obs {
                            let pos = match &normal {
                                Some(d) => {
                                    let dx = d.sample(rng).round() as isize;
                                    let dy = d.sample(rng).round() as isize;
                                    space.spec.offset(o.pos, dx, dy).expect("toroidal")
                                }
                                None => o.pos,
                            };
                            all.push(Observation {
                                object: o.object,
                                pos,
                            });
                        }
                    }
                    Belief {
                        observations: merged(all),
                        peer_actions: Vec::new(),
                    }
                })
                .collect()
        }
        CommMode::Imitation { range } => (0..n)
            .map(|i| {
                let peer_actions = (0..n)
                    .filter(|&j| {
                        j != i
                            && range > 0.0
                            && space.spec.torus_distance(space.agents[i], space.agents[j]) <= range
                    })
                    .map(|j| (j, last_actions[j]))
                    .collect();
                Belief {
                    observations: own[i].clone(),
                    peer_actions,
                }
            })
            .collect(),
    }
}

fn merged(obs: impl IntoIterator<Item = Observation>) -> Vec<Observation> {
    let mut v: Vec<Observation> = obs.into_iter().collect();
    v.sort();
    v.dedup();
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Stay,
    UniformRandom,
    /// Heads for the nearest believed Good position. Without one it copies
    /// the lowest-indexed peer it imitates, and otherwise moves at random.
    GreedyTowardGood,
}

impl Policy {
    pub fn act<R: Rng + ?Sized>(
        &self,
        me: Position,
        belief: &Belief,
        spec: &GridSpec,
        rng: &mut R,
    ) -> AuitAction {
        let random = |rng: &mut R| *AuitAction::ALL.choose(rng).expect("non-empty");
        match self {
            Policy::Stay => AuitAction::Stay,
            Policy::UniformRandom => random(rng),
            Policy::GreedyTowardGood => {
                let target = belief
                    .observations
                    .iter()
                    .filter(|o| o.object == ObjectId::Good)
                    .min_by(|a, b| {
                        spec.torus_distance(me, a.pos)
                            .total_cmp(&spec.torus_distance(me, b.pos))
                    });
                if let Some(o) = target {
                    let (dx, dy) = spec.displacement(me, o.pos);
                    AuitAction::from_offset(dx, dy)
                } else if let Some(&(_, a)) = belief.peer_actions.first() {
                    a
                } else {
                    random(rng)
                }
            }
        }
    }
}

/// Team composition and evaluation budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeamConfig {
    pub agents: usize,
    pub policy: Policy,
    pub comm: CommMode,
    /// Euclidean torus distance within which objects are seen.
    pub sense_radius: f64,
    pub episodes: usize,
    pub steps: usize,
    /// Anytime scores are reported every this many steps and at the end.
    pub report_every: usize,
    pub seed: u64,
}

impl Default for TeamConfig {
    fn default() -> Self {
        Self {
            agents: 5,
            policy: Policy::GreedyTowardGood,
            comm: CommMode::Direct,
            sense_radius: 2.0,
            episodes: 100,
            steps: 100,
            report_every: 10,
            seed: 1,
        }
    }
}

impl TeamConfig {
    pub fn validate(&self) -> Result<(), AuitError> {
        if self.agents == 0 {
            return Err(AuitError::EmptyTeam);
        }
        if !(self.sense_radius.is_finite() && self.sense_radius >= 0.0) {
            return Err(AuitError::Config(format!(
                "sense_radius must be non-negative, got {}",
                self.sense_radius
            )));
        }
        if self.report_every == 0 {
            return Err(AuitError::Config("report_every must be positive".into()));
        }
        self.comm.validate()
    }
}

/// One point on the complexity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityCell {
    pub pattern_id: String,
    pub pattern: MovementPattern,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub pattern_id: String,
    pub space_w: usize,
    pub space_h: usize,
    pub comm_mode: String,
    pub episode: usize,
    pub prefix_steps: usize,
    pub anytime_score: f64,
}

impl ScoreRow {
    pub const CSV_HEADER: &'static str =
        "pattern_id,space_w,space_h,comm_mode,episode,prefix_steps,anytime_score";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6}",
            self.pattern_id,
            self.space_w,
            self.space_h,
            self.comm_mode,
            self.episode,
            self.prefix_steps,
            self.anytime_score
        )
    }
}

/// Placement and policy streams of an episode. They depend only on the
/// team seed and the episode index, so different policies and cells are
/// compared on the same draws.
pub fn episode_rngs(seed: u64, episode: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let base = seed.wrapping_add(episode as u64);
    let mut placement = ChaCha8Rng::seed_from_u64(base);
    placement.set_stream(2);
    let mut policy = ChaCha8Rng::seed_from_u64(base);
    policy.set_stream(3);
    (placement, policy)
}

/// Per-step team rewards of one episode. Evil follows the Good pattern
/// shifted by half its length.
pub fn run_episode(
    team: &TeamConfig,
    cell: &ComplexityCell,
    episode: usize,
) -> Result<Vec<f64>, AuitError> {
    team.validate()?;
    let spec = GridSpec::new(cell.width, cell.height, Boundary::Toroidal).map_err(|_| {
        AuitError::TooSmall {
            width: cell.width,
            height: cell.height,
        }
    })?;
    let (mut placement, mut rng) = episode_rngs(team.seed, episode);
    let mut space = AuitSpace::random(spec, team.agents, &mut placement)?;
    let mut cursors = (0, cell.pattern.len() / 2);
    let mut last = vec![AuitAction::Stay; team.agents];
    let mut out = Vec::with_capacity(team.steps);
    for _ in 0..team.steps {
        let own: Vec<Vec<Observation>> = (0..team.agents)
            .map(|i| space.observe(i, team.sense_radius))
            .collect();
        let beliefs = share_observations(&space, &own, &last, &team.comm, &mut rng);
        let actions: Vec<AuitAction> = (0..team.agents)
            .map(|i| {
                team.policy
                    .act(space.agents[i], &beliefs[i], &spec, &mut rng)
            })
            .collect();
        let rewards = step_auit(
            &mut space,
            &actions,
            &cell.pattern,
            &cell.pattern,
            &mut cursors,
        );
        out.push(rewards.iter().sum::<f64>() / rewards.len() as f64);
        last = actions;
    }
    Ok(out)
}

/// Running means of `rewards`, one per prefix length.
pub fn anytime_scores(rewards: &[f64]) -> Vec<f64> {
    let mut sum = 0.0;
    rewards
        .iter()
        .enumerate()
        .map(|(i, r)| {
            sum += r;
            sum / (i + 1) as f64
        })
        .collect()
}

/// Anytime scores for every cell and episode, at every `report_every`
/// steps and at the final step.
pub fn evaluate_ci(
    team: &TeamConfig,
    cells: &[ComplexityCell],
) -> Result<Vec<ScoreRow>, AuitError> {
    team.validate()?;
    let mut rows = Vec::new();
    for cell in cells {
        for episode in 0..team.episodes {
            let scores = anytime_scores(&run_episode(team, cell, episode)?);
            for (i, &score) in scores.iter().enumerate() {
                let prefix = i + 1;
                if prefix % team.report_every == 0 || prefix == scores.len() {
                    rows.push(ScoreRow {
                        pattern_id: cell.pattern_id.clone(),
                        space_w: cell.width,
                        space_h: cell.height,
                        comm_mode: team.comm.name().to_string(),
                        episode,
                        prefix_steps: prefix,
                        anytime_score: score,
                    });
                }
            }
        }
    }
    Ok(rows)
}
