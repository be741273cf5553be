//! An agent's local view of the pattern-formation world.
//!
//! The view combines the label of the agent's own cell, which of its four
//! neighbors are occupied, and the quantized direction of the sensed
//! pheromone mass. It has 2 · 16 · 9 = 288 distinct values.

use std::f64::consts::FRAC_PI_4;

use crate::grid::{Direction, GridSpec, LabeledMask, Occupancy, Position};
use crate::pheromone::Sensed;

/// Number of distinct local views.
pub const VIEW_COUNT: usize = 2 * 16 * 9;

/// Number of pheromone direction bins, bin 0 meaning "no gradient".
pub const GRADIENT_BINS: u8 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LocalView {
    pub on_labeled: bool,
    /// Occupancy of the Up, Down, Left, Right neighbors, in that order.
    pub neighbors: [bool; 4],
    /// 0 when nothing is sensed, otherwise 1 + one of 8 compass sectors,
    /// counter-clockwise from east in screen coordinates.
    pub gradient: u8,
}

impl LocalView {
    pub fn observe(
        pos: Position,
        occ: &Occupancy,
        mask: &LabeledMask,
        spec: &GridSpec,
        sensed: &[Sensed],
    ) -> Self {
        let mut neighbors = [false; 4];
        for dir in Direction::ALL {
            neighbors[dir.index()] = spec.neighbor(pos, dir).is_some_and(|p| !occ.is_free(p));
        }
        Self {
            on_labeled: mask.is_labeled(pos),
            neighbors,
            gradient: gradient_direction(pos, spec, sensed),
        }
    }

    pub fn neighbor_count(&self) -> usize {
        self.neighbors.iter().filter(|&&n| n).count()
    }

    pub fn neighbor_bits(&self) -> usize {
        self.neighbors
            .iter()
            .enumerate()
            .map(|(i, &n)| (n as usize) << i)
            .sum()
    }

    /// Dense index in `0..VIEW_COUNT`.
    pub fn encode(&self) -> usize {
        debug_assert!(self.gradient < GRADIENT_BINS);
        (self.on_labeled as usize) * 144 + self.neighbor_bits() * 9 + self.gradient as usize
    }

    pub fn decode(key: usize) -> Option<Self> {
        if key >= VIEW_COUNT {
            return None;
        }
        let on_labeled = key >= 144;
        let bits = (key % 144) / 9;
        let mut neighbors = [false; 4];
        for (i, n) in neighbors.iter_mut().enumerate() {
            *n = bits & (1 << i) != 0;
        }
        Some(Self {
            on_labeled,
            neighbors,
            gradient: (key % 9) as u8,
        })
    }

    /// Every view, in key order.
    pub fn all() -> impl Iterator<Item = LocalView> {
        (0..VIEW_COUNT).map(|k| Self::decode(k).expect("in range"))
    }
}

/// Quantizes the perceived-mass-weighted mean displacement of the sensed
/// cells into one of 8 sectors.
pub fn gradient_direction(pos: Position, spec: &GridSpec, sensed: &[Sensed]) -> u8 {
    let (mut sx, mut sy) = (0.0, 0.0);
    for s in sensed {
        let (dx, dy) = spec.displacement(pos, s.pos);
        sx += s.perceived * dx as f64;
        sy += s.perceived * dy as f64;
    }
    if sx == 0.0 && sy == 0.0 {
        return 0;
    }
    // Screen y grows downward, so flip it to get a counter-clockwise angle.
    let angle = (-sy).atan2(sx);
    let sector = (angle / FRAC_PI_4).round().rem_euclid(8.0) as u8;
    1 + sector
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;
    use std::collections::HashSet;

    #[test]
    fn encode_is_a_bijection() {
        let keys: HashSet<usize> = LocalView::all().map(|v| v.encode()).collect();
        assert_eq!(keys.len(), VIEW_COUNT);
        for v in LocalView::all() {
            assert_eq!(LocalView::decode(v.encode()), Some(v));
        }
        assert_eq!(LocalView::decode(VIEW_COUNT), None);
    }

    #[test]
    fn gradient_sectors() {
        let spec = GridSpec::new(9, 9, Boundary::Bounded).unwrap();
        let at = Position::new(4, 4);
        let one = |x, y| {
            vec![Sensed {
                pos: Position::new(x, y),
                perceived: 1.0,
            }]
        };
        assert_eq!(gradient_direction(at, &spec, &[]), 0);
        assert_eq!(gradient_direction(at, &spec, &one(6, 4)), 1); // east
        assert_eq!(gradient_direction(at, &spec, &one(4, 2)), 3); // north (up)
        assert_eq!(gradient_direction(at, &spec, &one(2, 4)), 5); // west
        assert_eq!(gradient_direction(at, &spec, &one(4, 6)), 7); // south
        assert_eq!(gradient_direction(at, &spec, &one(5, 5)), 8); // south-east
        let balanced = vec![
            Sensed {
                pos: Position::new(3, 4),
                perceived: 2.0,
            },
            Sensed {
                pos: Position::new(5, 4),
                perceived: 2.0,
            },
        ];
        assert_eq!(gradient_direction(at, &spec, &balanced), 0);
    }
}
