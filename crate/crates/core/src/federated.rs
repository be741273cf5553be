//! Federated semi-gradient TD learning for a shared linear action-value
//! function.
//!
//! Agents compute gradients of the squared TD error on their own experience;
//! a cloud aggregator averages them and applies one descent step to the
//! shared parameters.

use thiserror::Error;

use crate::view::{LocalView, GRADIENT_BINS};

/// Label flag + 4 neighbor bits + 9-way gradient one-hot.
pub const FEATURE_DIM: usize = 1 + 4 + GRADIENT_BINS as usize;

/// Up, Down, Left, Right, Stay.
pub const ACTIONS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("action {action} out of range for {actions} actions")]
    Action { action: usize, actions: usize },
    #[error("nothing to aggregate")]
    EmptyAggregate,
    #[error("experience batch is empty")]
    EmptyBatch,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, FedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FedError::NonFinite("parameters"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dimension: usize) -> Self {
        Self(vec![0.0; dimension])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Two-line CSV: `p0,…,pN-1` header, then the values at 6 decimals.
    pub fn to_csv(&self) -> String {
        let header: Vec<String> = (0..self.0.len()).map(|i| format!("p{i}")).collect();
        let row: Vec<String> = self.0.iter().map(|v| format!("{v:.6}")).collect();
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Result<Self, FedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FedError::NonFinite("gradient"));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub features: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_features: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceBatch(Vec<Transition>);

impl ExperienceBatch {
    pub fn new(transitions: Vec<Transition>) -> Result<Self, FedError> {
        let first = transitions.first().ok_or(FedError::EmptyBatch)?;
        let dim = first.features.len();
        for t in &transitions {
            for v in [&t.features, &t.next_features] {
                if v.len() != dim {
                    return Err(FedError::Dimension {
                        expected: dim,
                        found: v.len(),
                    });
                }
            }
        }
        Ok(Self(transitions))
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Binary encoding of a local view, see [`FEATURE_DIM`].
pub fn featurize(view: &LocalView) -> Vec<f64> {
    let mut f = vec![0.0; FEATURE_DIM];
    f[0] = if view.on_labeled { 1.0 } else { 0.0 };
    for (i, &n) in view.neighbors.iter().enumerate() {
        f[1 + i] = if n { 1.0 } else { 0.0 };
    }
    f[5 + view.gradient as usize] = 1.0;
    f
}

/// `q(s, a) = θ_a · φ(s)` with one parameter block per action, laid out
/// action-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearQ {
    features: usize,
    actions: usize,
}

impl LinearQ {
    pub fn new(features: usize, actions: usize) -> Self {
        Self { features, actions }
    }

    pub fn dimension(&self) -> usize {
        self.features * self.actions
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    fn check(&self, params: &ParamVector, features: &[f64]) -> Result<(), FedError> {
        if params.len() != self.dimension() {
            return Err(FedError::Dimension {
                expected: self.dimension(),
                found: params.len(),
            });
        }
        if features.len() != self.features {
            return Err(FedError::Dimension {
                expected: self.features,
                found: features.len(),
            });
        }
        Ok(())
    }

    fn block<'a>(&self, params: &'a ParamVector, action: usize) -> &'a [f64] {
        &params.0[action * self.features..(action + 1) * self.features]
    }

    pub fn q_value(
        &self,
        params: &ParamVector,
        features: &[f64],
        action: usize,
    ) -> Result<f64, FedError> {
        self.check(params, features)?;
        if action >= self.actions {
            return Err(FedError::Action {
                action,
                actions: self.actions,
            });
        }
        Ok(self
            .block(params, action)
            .iter()
            .zip(features)
            .map(|(w, x)| w * x)
            .sum())
    }

    /// `max_a q(s, a)`. Panics on dimension mismatch.
    pub fn greedy_value(&self, params: &ParamVector, features: &[f64]) -> f64 {
        (0..self.actions)
            .map(|a| {
                self.q_value(params, features, a)
                    .expect("dimensions checked by caller")
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Gradient of the mean squared TD error with the bootstrap target held
    /// fixed at the current parameters.
    pub fn local_gradient(
        &self,
        params: &ParamVector,
        batch: &ExperienceBatch,
        gamma: f64,
    ) -> Result<GradientVector, FedError> {
        let mut grad = vec![0.0; self.dimension()];
        let n = batch.len() as f64;
        for t in batch.transitions() {
            self.check(params, &t.features)?;
            let target = if t.terminal {
                t.reward
            } else {
                t.reward + gamma * self.greedy_value(params, &t.next_features)
            };
            let td_error = target - self.q_value(params, &t.features, t.action)?;
            let block = &mut grad[t.action * self.features..(t.action + 1) * self.features];
            for (g, x) in block.iter_mut().zip(&t.features) {
                *g += -2.0 * td_error * x / n;
            }
        }
        GradientVector::new(grad)
    }

    /// Mean squared TD error with targets computed from `target_params`.
    pub fn td_loss(
        &self,
        params: &ParamVector,
        target_params: &ParamVector,
        batch: &ExperienceBatch,
        gamma: f64,
    ) -> Result<f64, FedError> {
        let mut total = 0.0;
        for t in batch.transitions() {
            let target = if t.terminal {
                t.reward
            } else {
                t.reward + gamma * self.greedy_value(target_params, &t.next_features)
            };
            let e = target - self.q_value(params, &t.features, t.action)?;
            total += e * e;
        }
        Ok(total / batch.len() as f64)
    }
}

/// Element-wise mean. Each coordinate is summed in sorted order so the
/// result does not depend on the order of `grads`.
pub fn aggregate(grads: &[GradientVector]) -> Result<GradientVector, FedError> {
    let dim = grads.first().ok_or(FedError::EmptyAggregate)?.len();
    if let Some(g) = grads.iter().find(|g| g.len() != dim) {
        return Err(FedError::Dimension {
            expected: dim,
            found: g.len(),
        });
    }
    let n = grads.len() as f64;
    let mut column = Vec::with_capacity(grads.len());
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim {
        column.clear();
        column.extend(grads.iter().map(|g| g.0[i]));
        column.sort_by(f64::total_cmp);
        out.push(column.iter().sum::<f64>() / n);
    }
    GradientVector::new(out)
}

/// `params − lr · grad`.
pub fn apply_update(
    params: &ParamVector,
    grad: &GradientVector,
    learning_rate: f64,
) -> Result<ParamVector, FedError> {
    if params.len() != grad.len() {
        return Err(FedError::Dimension {
            expected: params.len(),
            found: grad.len(),
        });
    }
    ParamVector::new(
        params
            .0
            .iter()
            .zip(&grad.0)
            .map(|(p, g)| p - learning_rate * g)
            .collect(),
    )
}

/// Largest relative deviation between the analytic gradient and central
/// finite differences of [`LinearQ::td_loss`] with frozen targets.
pub fn gradient_check(
    model: &LinearQ,
    params: &ParamVector,
    batch: &ExperienceBatch,
    gamma: f64,
    step: f64,
) -> Result<f64, FedError> {
    let analytic = model.local_gradient(params, batch, gamma)?;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus.0[i] += step;
        minus.0[i] -= step;
        let numeric = (model.td_loss(&plus, params, batch, gamma)?
            - model.td_loss(&minus, params, batch, gamma)?)
            / (2.0 * step);
        let scale = analytic.0[i].abs().max(numeric.abs()).max(1.0);
        worst = worst.max((analytic.0[i] - numeric).abs() / scale);
    }
    Ok(worst)
}

/// CSV report with one `(instance, max_relative_error)` row per instance.
pub fn gradient_check_report(errors: &[f64]) -> String {
    let mut out = String::from("instance,max_relative_error\n");
    for (i, e) in errors.iter().enumerate() {
        out.push_str(&format!("{i},{e:.6e}\n"));
    }
    out
}
