//! Digital pheromone medium: deposit, multiplicative decay and noisy sensing.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridSpec, InvariantViolation, Position};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PheromoneError {
    #[error("decay factor must lie in [0, 1), got {0}")]
    Decay(f64),
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("noise std must be finite and non-negative, got {0}")]
    Noise(f64),
}

/// Medium constants. Amounts live in `[0, cap]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PheromoneParams {
    /// Multiplicative retention per tick.
    pub decay: f64,
    pub deposit_inc: f64,
    pub deposit_dec: f64,
    pub cap: f64,
    /// Amounts that decay below this are snapped to zero.
    pub floor: f64,
}

impl Default for PheromoneParams {
    fn default() -> Self {
        Self {
            decay: 0.9,
            deposit_inc: 1.0,
            deposit_dec: 1.0,
            cap: 10.0,
            floor: 1e-6,
        }
    }
}

impl PheromoneParams {
    pub fn validate(&self) -> Result<(), PheromoneError> {
        if !(0.0..1.0).contains(&self.decay) {
            return Err(PheromoneError::Decay(self.decay));
        }
        for (name, value) in [
            ("deposit_inc", self.deposit_inc),
            ("deposit_dec", self.deposit_dec),
            ("cap", self.cap),
            ("floor", self.floor),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(PheromoneError::NonPositive { name, value });
            }
        }
        Ok(())
    }
}

/// Standard deviation of the additive Gaussian noise on sensed amounts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelNoise {
    std: f64,
}

impl ChannelNoise {
    pub const NOISELESS: ChannelNoise = ChannelNoise { std: 0.0 };

    pub fn new(std: f64) -> Result<Self, PheromoneError> {
        if std.is_finite() && std >= 0.0 {
            Ok(Self { std })
        } else {
            Err(PheromoneError::Noise(std))
        }
    }

    pub fn std(&self) -> f64 {
        self.std
    }
}

/// A sensed cell and the amount perceived through the channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensed {
    pub pos: Position,
    pub perceived: f64,
}

/// Gaussian response `exp(-d² / 2σ²)`.
pub fn response_amplitude(distance: f64, sigma: f64) -> f64 {
    (-(distance * distance) / (2.0 * sigma * sigma)).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PheromoneField {
    spec: GridSpec,
    amounts: Vec<f64>,
    params: PheromoneParams,
}

impl PheromoneField {
    pub fn new(spec: GridSpec, params: PheromoneParams) -> Self {
        Self {
            spec,
            amounts: vec![0.0; spec.cell_count()],
            params,
        }
    }

    pub fn params(&self) -> &PheromoneParams {
        &self.params
    }

    pub fn amount(&self, pos: Position) -> f64 {
        self.amounts[self.spec.index(pos)]
    }

    /// Overwrites a cell, clamped to `[0, cap]`.
    pub fn set_amount(&mut self, pos: Position, amount: f64) {
        let idx = self.spec.index(pos);
        self.amounts[idx] = amount.clamp(0.0, self.params.cap);
    }

    pub fn total(&self) -> f64 {
        self.amounts.iter().sum()
    }

    /// Raises the cell on the target shape, lowers it elsewhere.
    pub fn deposit(&mut self, pos: Position, on_labeled: bool) {
        let idx = self.spec.index(pos);
        let delta = if on_labeled {
            self.params.deposit_inc
        } else {
            -self.params.deposit_dec
        };
        self.amounts[idx] = (self.amounts[idx] + delta).clamp(0.0, self.params.cap);
    }

    pub fn decay_tick(&mut self) {
        let PheromoneParams { decay, floor, .. } = self.params;
        for a in &mut self.amounts {
            *a *= decay;
            if *a < floor {
                *a = 0.0;
            }
        }
    }

    /// Every cell within Chebyshev distance `radius` of `pos`, excluding
    /// `pos`, in row-major window order. Noise is drawn once per returned
    /// cell in that order; a noiseless channel draws nothing.
    pub fn sense<R: Rng + ?Sized>(
        &self,
        pos: Position,
        radius: usize,
        noise: ChannelNoise,
        rng: &mut R,
    ) -> Vec<Sensed> {
        let normal =
            (noise.std() > 0.0).then(|| Normal::new(0.0, noise.std()).expect("validated std"));
        // Keep the window from overlapping itself on small tori.
        let rx = radius.min((self.spec.width() - 1) / 2) as isize;
        let ry = radius.min((self.spec.height() - 1) / 2) as isize;
        let mut out = Vec::with_capacity(((2 * rx + 1) * (2 * ry + 1)) as usize);
        for dy in -ry..=ry {
            for dx in -rx..=rx {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let Some(cell) = self.spec.offset(pos, dx, dy) else {
                    continue;
                };
                let amount = self.amount(cell);
                let perceived = match &normal {
                    Some(n) => (amount + n.sample(rng)).max(0.0),
                    None => amount,
                };
                out.push(Sensed {
                    pos: cell,
                    perceived,
                });
            }
        }
        out
    }

    pub fn check_bounds(&self) -> Result<(), InvariantViolation> {
        let cap = self.params.cap;
        match self.amounts.iter().position(|a| !(0.0..=cap).contains(a)) {
            Some(i) => Err(InvariantViolation::PheromoneBounds {
                pos: self.spec.position(i),
                amount: self.amounts[i],
                cap,
            }),
            None => Ok(()),
        }
    }

    /// Row-major text dump, 6 decimals, space separated.
    pub fn to_snapshot_string(&self) -> String {
        let mut out = String::new();
        for row in self.amounts.chunks(self.spec.width()) {
            let cells: Vec<String> = row.iter().map(|a| format!("{a:.6}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }
}
