//! Discrete cell environment: geometry, target mask, exclusive occupancy and
//! the shape similarity metric.
//!
//! Coordinates have their origin at the top-left cell and `y` grows downward,
//! matching the row order of pattern files.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Header tag of the pattern file format.
pub const PATTERN_MAGIC: &str = "P-PAT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Steps that leave the grid are rejected.
    Bounded,
    /// Coordinates wrap around both axes.
    Toroidal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Position {
    pub x: usize,
    pub y: usize,
}

impl Position {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// The four lattice moves available to pattern-formation agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    pub fn offset(self) -> (isize, isize) {
        match self {
            Direction::Up => (0, -1),
            Direction::Down => (0, 1),
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    /// The two directions orthogonal to `self`.
    pub fn perpendicular(self) -> [Direction; 2] {
        match self {
            Direction::Up | Direction::Down => [Direction::Left, Direction::Right],
            Direction::Left | Direction::Right => [Direction::Up, Direction::Down],
        }
    }

    pub fn index(self) -> usize {
        match self {
            Direction::Up => 0,
            Direction::Down => 1,
            Direction::Left => 2,
            Direction::Right => 3,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("grid dimensions must be positive, got {width}x{height}")]
    EmptyGrid { width: usize, height: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    width: usize,
    height: usize,
    boundary: Boundary,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, boundary: Boundary) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::EmptyGrid { width, height });
        }
        Ok(Self {
            width,
            height,
            boundary,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn with_boundary(self, boundary: Boundary) -> Self {
        Self { boundary, ..self }
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, pos: Position) -> bool {
        pos.x < self.width && pos.y < self.height
    }

    /// Row-major cell index.
    pub fn index(&self, pos: Position) -> usize {
        debug_assert!(self.contains(pos));
        pos.y * self.width + pos.x
    }

    pub fn position(&self, index: usize) -> Position {
        Position::new(index % self.width, index / self.width)
    }

    /// Applies an arbitrary lattice offset, wrapping or rejecting according
    /// to the boundary.
    pub fn offset(&self, pos: Position, dx: isize, dy: isize) -> Option<Position> {
        let x = pos.x as isize + dx;
        let y = pos.y as isize + dy;
        match self.boundary {
            Boundary::Bounded => {
                if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
                    None
                } else {
                    Some(Position::new(x as usize, y as usize))
                }
            }
            Boundary::Toroidal => Some(Position::new(
                x.rem_euclid(self.width as isize) as usize,
                y.rem_euclid(self.height as isize) as usize,
            )),
        }
    }

    pub fn neighbor(&self, pos: Position, dir: Direction) -> Option<Position> {
        let (dx, dy) = dir.offset();
        self.offset(pos, dx, dy)
    }

    /// Signed displacement from `from` to `to`. On a torus each axis takes
    /// the shortest way around; exact half-way ties resolve to the positive
    /// direction.
    pub fn displacement(&self, from: Position, to: Position) -> (isize, isize) {
        let dx = to.x as isize - from.x as isize;
        let dy = to.y as isize - from.y as isize;
        match self.boundary {
            Boundary::Bounded => (dx, dy),
            Boundary::Toroidal => (
                wrap_signed(dx, self.width as isize),
                wrap_signed(dy, self.height as isize),
            ),
        }
    }

    /// Euclidean distance over per-axis minimal displacements.
    pub fn torus_distance(&self, a: Position, b: Position) -> f64 {
        let (dx, dy) = self.displacement(a, b);
        ((dx * dx + dy * dy) as f64).sqrt()
    }

    /// Largest value `torus_distance` can take on this grid.
    pub fn max_distance(&self) -> f64 {
        let (mx, my) = match self.boundary {
            Boundary::Bounded => (self.width - 1, self.height - 1),
            Boundary::Toroidal => (self.width / 2, self.height / 2),
        };
        ((mx * mx + my * my) as f64).sqrt()
    }
}

fn wrap_signed(d: isize, n: isize) -> isize {
    let d = d.rem_euclid(n);
    if 2 * d > n {
        d - n
    } else {
        d
    }
}

/// Target shape: which cells belong to the pattern agents must fill.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledMask {
    width: usize,
    height: usize,
    cells: Vec<bool>,
    labeled_count: usize,
}

impl LabeledMask {
    /// Builds a mask from row-major cells. Returns `None` if the cell count
    /// does not match the dimensions.
    pub fn from_cells(width: usize, height: usize, cells: Vec<bool>) -> Option<Self> {
        if cells.len() != width * height {
            return None;
        }
        let labeled_count = cells.iter().filter(|&&c| c).count();
        Some(Self {
            width,
            height,
            cells,
            labeled_count,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled_count
    }

    pub fn is_labeled(&self, pos: Position) -> bool {
        self.cells[pos.y * self.width + pos.x]
    }

    pub fn labeled_positions(&self) -> impl Iterator<Item = Position> + '_ {
        let w = self.width;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(move |(i, _)| Position::new(i % w, i / w))
    }

    /// Serializes to the pattern file format, always with a trailing newline.
    pub fn to_pattern_string(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height + 16);
        out.push_str(&format!("{PATTERN_MAGIC} {} {}\n", self.width, self.height));
        for row in self.cells.chunks(self.width) {
            out.extend(row.iter().map(|&c| if c { '1' } else { '0' }));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PatternError {
    #[error("malformed pattern header: {0}")]
    MalformedHeader(String),
    #[error("pattern has {found} rows, header declares {expected}")]
    RowCountMismatch { expected: usize, found: usize },
    #[error("pattern row {row} has {found} cells, header declares {expected}")]
    RowLengthMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid cell {found:?} at row {row}, column {col}")]
    InvalidCell { row: usize, col: usize, found: char },
    #[error("pattern has no labeled cells")]
    NoLabeledCells,
}

/// Parses pattern file text into a bounded grid and its target mask.
pub fn load_pattern(text: &str) -> Result<(GridSpec, LabeledMask), PatternError> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut lines = body.split('\n');
    let header = lines.next().unwrap_or_default();
    let (width, height) = parse_header(header)?;
    let spec = GridSpec::new(width, height, Boundary::Bounded)
        .map_err(|e| PatternError::MalformedHeader(e.to_string()))?;

    let rows: Vec<&str> = lines.collect();
    if rows.len() != height {
        return Err(PatternError::RowCountMismatch {
            expected: height,
            found: rows.len(),
        });
    }
    let mut cells = Vec::with_capacity(width * height);
    for (row, line) in rows.iter().enumerate() {
        let found = line.chars().count();
        if found != width {
            return Err(PatternError::RowLengthMismatch {
                row,
                expected: width,
                found,
            });
        }
        for (col, ch) in line.chars().enumerate() {
            match ch {
                '1' => cells.push(true),
                '0' => cells.push(false),
                other => {
                    return Err(PatternError::InvalidCell {
                        row,
                        col,
                        found: other,
                    })
                }
            }
        }
    }
    let mask = LabeledMask::from_cells(width, height, cells).expect("cell count checked per row");
    if mask.labeled_count() == 0 {
        return Err(PatternError::NoLabeledCells);
    }
    Ok((spec, mask))
}

fn parse_header(line: &str) -> Result<(usize, usize), PatternError> {
    let bad = || PatternError::MalformedHeader(line.to_string());
    let mut parts = line.split(' ');
    if parts.next() != Some(PATTERN_MAGIC) {
        return Err(bad());
    }
    let width = parts
        .next()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(bad)?;
    let height = parts
        .next()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(bad)?;
    if parts.next().is_some() || width == 0 || height == 0 {
        return Err(bad());
    }
    Ok((width, height))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentId(pub usize);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent#{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OccupancyError {
    #[error("cell {pos} is already occupied by {by}")]
    Occupied { pos: Position, by: AgentId },
    #[error("unknown {0}")]
    UnknownAgent(AgentId),
    #[error("{agent} is already placed")]
    AlreadyPlaced { agent: AgentId },
    #[error("position {0} is outside the grid")]
    OutOfBounds(Position),
    #[error("{agent} cannot jump from {from} to {to}")]
    NotAdjacent {
        agent: AgentId,
        from: Position,
        to: Position,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InvariantViolation {
    #[error("cell {pos} maps to {mapped} but {mapped} is recorded at {recorded:?}")]
    Inconsistent {
        pos: Position,
        mapped: AgentId,
        recorded: Option<Position>,
    },
    #[error("{agent} recorded at {pos} but the cell holds {found:?}")]
    Ghost {
        agent: AgentId,
        pos: Position,
        found: Option<AgentId>,
    },
    #[error("{occupied} occupied cells for {live} live agents")]
    Conservation { occupied: usize, live: usize },
    #[error("pheromone amount {amount} at {pos} is outside [0, {cap}]")]
    PheromoneBounds {
        pos: Position,
        amount: f64,
        cap: f64,
    },
}

/// Exclusive cell → agent map with the reverse index kept alongside.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occupancy {
    spec: GridSpec,
    cells: Vec<Option<AgentId>>,
    agents: Vec<Option<Position>>,
}

impl Occupancy {
    pub fn new(spec: GridSpec) -> Self {
        Self {
            spec,
            cells: vec![None; spec.cell_count()],
            agents: Vec::new(),
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn place(&mut self, agent: AgentId, pos: Position) -> Result<(), OccupancyError> {
        if !self.spec.contains(pos) {
            return Err(OccupancyError::OutOfBounds(pos));
        }
        if self.position_of(agent).is_some() {
            return Err(OccupancyError::AlreadyPlaced { agent });
        }
        let idx = self.spec.index(pos);
        if let Some(by) = self.cells[idx] {
            return Err(OccupancyError::Occupied { pos, by });
        }
        if self.agents.len() <= agent.0 {
            self.agents.resize(agent.0 + 1, None);
        }
        self.cells[idx] = Some(agent);
        self.agents[agent.0] = Some(pos);
        Ok(())
    }

    /// Moves `agent` to `to`, which must be its current cell or a 4-neighbor.
    /// The occupancy is left untouched on error.
    pub fn move_agent(&mut self, agent: AgentId, to: Position) -> Result<(), OccupancyError> {
        let from = self
            .position_of(agent)
            .ok_or(OccupancyError::UnknownAgent(agent))?;
        if from == to {
            return Ok(());
        }
        if !self.spec.contains(to) {
            return Err(OccupancyError::OutOfBounds(to));
        }
        let adjacent = Direction::ALL
            .iter()
            .any(|&d| self.spec.neighbor(from, d) == Some(to));
        if !adjacent {
            return Err(OccupancyError::NotAdjacent { agent, from, to });
        }
        let dst = self.spec.index(to);
        if let Some(by) = self.cells[dst] {
            return Err(OccupancyError::Occupied { pos: to, by });
        }
        let src = self.spec.index(from);
        self.cells[src] = None;
        self.cells[dst] = Some(agent);
        self.agents[agent.0] = Some(to);
        Ok(())
    }

    pub fn position_of(&self, agent: AgentId) -> Option<Position> {
        self.agents.get(agent.0).copied().flatten()
    }

    pub fn agent_at(&self, pos: Position) -> Option<AgentId> {
        self.cells[self.spec.index(pos)]
    }

    pub fn is_free(&self, pos: Position) -> bool {
        self.spec.contains(pos) && self.agent_at(pos).is_none()
    }

    /// Number of live (placed) agents.
    pub fn len(&self) -> usize {
        self.agents.iter().filter(|p| p.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Occupied 4-neighbors of `pos`.
    pub fn neighbor_count(&self, pos: Position) -> usize {
        Direction::ALL
            .iter()
            .filter_map(|&d| self.spec.neighbor(pos, d))
            .filter(|&p| self.agent_at(p).is_some())
            .count()
    }

    pub fn occupied_positions(&self) -> impl Iterator<Item = Position> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_some())
            .map(|(i, _)| self.spec.position(i))
    }

    /// Verifies exclusivity and agent conservation.
    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        let mut occupied = 0;
        for (i, cell) in self.cells.iter().enumerate() {
            if let Some(agent) = cell {
                occupied += 1;
                let pos = self.spec.position(i);
                let recorded = self.position_of(*agent);
                if recorded != Some(pos) {
                    return Err(InvariantViolation::Inconsistent {
                        pos,
                        mapped: *agent,
                        recorded,
                    });
                }
            }
        }
        for (id, slot) in self.agents.iter().enumerate() {
            if let Some(pos) = slot {
                let found = self.agent_at(*pos);
                if found != Some(AgentId(id)) {
                    return Err(InvariantViolation::Ghost {
                        agent: AgentId(id),
                        pos: *pos,
                        found,
                    });
                }
            }
        }
        let live = self.len();
        if occupied != live {
            return Err(InvariantViolation::Conservation { occupied, live });
        }
        Ok(())
    }
}

/// Fraction of labeled cells currently holding an agent.
pub fn similarity(occ: &Occupancy, mask: &LabeledMask) -> f64 {
    let filled = mask
        .labeled_positions()
        .filter(|&p| occ.agent_at(p).is_some())
        .count();
    filled as f64 / mask.labeled_count() as f64
}

/// Renders the mask in pattern file format with `A` overlaid on agents.
pub fn render_frame(mask: &LabeledMask, occ: &Occupancy) -> String {
    let mut out = String::with_capacity((mask.width + 1) * mask.height + 16);
    out.push_str(&format!("{PATTERN_MAGIC} {} {}\n", mask.width, mask.height));
    for y in 0..mask.height {
        for x in 0..mask.width {
            let pos = Position::new(x, y);
            out.push(if occ.agent_at(pos).is_some() {
                'A'
            } else if mask.is_labeled(pos) {
                '1'
            } else {
                '0'
            });
        }
        out.push('\n');
    }
    out
}

/// Converts a frame (pattern format, optionally with `A` cells) into an
/// ASCII portable graymap: agents white, empty target cells mid-gray,
/// background black.
pub fn frame_to_pgm(frame: &str) -> Result<String, PatternError> {
    let body = frame.strip_suffix('\n').unwrap_or(frame);
    let mut lines = body.split('\n');
    let (width, height) = parse_header(lines.next().unwrap_or_default())?;
    let rows: Vec<&str> = lines.collect();
    if rows.len() != height {
        return Err(PatternError::RowCountMismatch {
            expected: height,
            found: rows.len(),
        });
    }
    let mut out = format!("P2\n{width} {height}\n255\n");
    for (row, line) in rows.iter().enumerate() {
        let found = line.chars().count();
        if found != width {
            return Err(PatternError::RowLengthMismatch {
                row,
                expected: width,
                found,
            });
        }
        let values: Result<Vec<&str>, PatternError> = line
            .chars()
            .enumerate()
            .map(|(col, ch)| match ch {
                'A' => Ok("255"),
                '1' => Ok("128"),
                '0' => Ok("0"),
                other => Err(PatternError::InvalidCell {
                    row,
                    col,
                    found: other,
                }),
            })
            .collect();
        out.push_str(&values?.join(" "));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounded(w: usize, h: usize) -> GridSpec {
        GridSpec::new(w, h, Boundary::Bounded).unwrap()
    }

    fn toroidal(w: usize, h: usize) -> GridSpec {
        GridSpec::new(w, h, Boundary::Toroidal).unwrap()
    }

    #[test]
    fn shipped_four_has_119_labeled_cells() {
        let text = include_str!("../patterns/four.pat");
        let (spec, mask) = load_pattern(text).unwrap();
        assert_eq!((spec.width(), spec.height()), (28, 28));
        assert_eq!(mask.labeled_count(), 119);
        assert_eq!(mask.to_pattern_string(), text);
    }

    #[test]
    fn all_zero_pattern_is_rejected() {
        assert_eq!(
            load_pattern("P-PAT 2 2\n00\n00\n"),
            Err(PatternError::NoLabeledCells)
        );
    }

    #[test]
    fn single_center_cell() {
        let (_, mask) = load_pattern("P-PAT 3 3\n000\n010\n000").unwrap();
        assert_eq!(mask.labeled_count(), 1);
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(mask.is_labeled(Position::new(x, y)), (x, y) == (1, 1));
            }
        }
    }

    #[test]
    fn pattern_parse_errors_are_distinct() {
        assert!(matches!(
            load_pattern("PAT 2 2\n11\n11\n"),
            Err(PatternError::MalformedHeader(_))
        ));
        assert!(matches!(
            load_pattern("P-PAT 2 x\n11\n11\n"),
            Err(PatternError::MalformedHeader(_))
        ));
        assert!(matches!(
            load_pattern("P-PAT 0 2\n\n\n"),
            Err(PatternError::MalformedHeader(_))
        ));
        assert!(matches!(
            load_pattern("P-PAT 2 2\n11\n1\n"),
            Err(PatternError::RowLengthMismatch {
                row: 1,
                expected: 2,
                found: 1
            })
        ));
        assert!(matches!(
            load_pattern("P-PAT 2 2\n11\n"),
            Err(PatternError::RowCountMismatch {
                expected: 2,
                found: 1
            })
        ));
        assert!(matches!(
            load_pattern("P-PAT 2 1\n1x\n"),
            Err(PatternError::InvalidCell {
                row: 0,
                col: 1,
                found: 'x'
            })
        ));
    }

    #[test]
    fn neighbor_examples() {
        let p = Position::new(0, 3);
        assert_eq!(bounded(5, 5).neighbor(p, Direction::Left), None);
        assert_eq!(
            toroidal(5, 5).neighbor(p, Direction::Left),
            Some(Position::new(4, 3))
        );
        assert_eq!(
            bounded(5, 5).neighbor(Position::new(2, 2), Direction::Up),
            Some(Position::new(2, 1))
        );
    }

    #[test]
    fn torus_distance_examples() {
        let a = Position::new(0, 0);
        assert_eq!(toroidal(5, 5).torus_distance(a, a), 0.0);
        assert_eq!(toroidal(5, 5).torus_distance(a, Position::new(4, 0)), 1.0);
        assert_eq!(bounded(5, 5).torus_distance(a, Position::new(3, 4)), 5.0);
        assert_eq!(toroidal(9, 9).max_distance(), 32f64.sqrt());
    }

    #[test]
    fn move_agent_rules() {
        let spec = bounded(4, 4);
        let mut occ = Occupancy::new(spec);
        occ.place(AgentId(0), Position::new(1, 1)).unwrap();
        occ.place(AgentId(1), Position::new(2, 1)).unwrap();

        occ.move_agent(AgentId(0), Position::new(1, 2)).unwrap();
        assert!(occ.is_free(Position::new(1, 1)));
        assert_eq!(occ.position_of(AgentId(0)), Some(Position::new(1, 2)));

        occ.move_agent(AgentId(0), Position::new(1, 2)).unwrap();
        assert_eq!(occ.position_of(AgentId(0)), Some(Position::new(1, 2)));

        occ.move_agent(AgentId(0), Position::new(2, 2)).unwrap();
        let snapshot = occ.clone();
        let err = occ.move_agent(AgentId(0), Position::new(2, 1)).unwrap_err();
        assert_eq!(
            err,
            OccupancyError::Occupied {
                pos: Position::new(2, 1),
                by: AgentId(1)
            }
        );
        assert_eq!(snapshot, occ);

        assert_eq!(
            occ.move_agent(AgentId(7), Position::new(0, 0)),
            Err(OccupancyError::UnknownAgent(AgentId(7)))
        );
        assert!(matches!(
            occ.move_agent(AgentId(1), Position::new(0, 3)),
            Err(OccupancyError::NotAdjacent { .. })
        ));
        occ.check_invariants().unwrap();
    }

    #[test]
    fn similarity_counts() {
        let (spec, mask) = load_pattern(include_str!("../patterns/four.pat")).unwrap();
        let mut occ = Occupancy::new(spec);
        assert_eq!(similarity(&occ, &mask), 0.0);
        for (i, p) in mask.labeled_positions().enumerate() {
            occ.place(AgentId(i), p).unwrap();
        }
        assert_eq!(similarity(&occ, &mask), 1.0);
    }

    #[test]
    fn frame_renders_agents_and_converts_to_pgm() {
        let (spec, mask) = load_pattern("P-PAT 3 2\n010\n011\n").unwrap();
        let mut occ = Occupancy::new(spec);
        occ.place(AgentId(0), Position::new(1, 0)).unwrap();
        occ.place(AgentId(1), Position::new(0, 1)).unwrap();
        let frame = render_frame(&mask, &occ);
        assert_eq!(frame, "P-PAT 3 2\n0A0\nA11\n");
        assert_eq!(
            frame_to_pgm(&frame).unwrap(),
            "P2\n3 2\n255\n0 255 0\n255 128 128\n"
        );
    }
}
