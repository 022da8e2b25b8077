//! The quadratic MAML experiment in closed form and by integration.
//!
//! With `L(t, m) = sum (m_i - t_i)^2` and the flow started at the origin,
//! `m(k) = t (1 - e^{-2k})` and `L(t, m(k)) = |t|^2 e^{-4k}`. Tasks reaching
//! accuracy `eps` at time `k` therefore lie on the sphere
//! `|t|^2 = eps e^{4k}`: the leaves of a regular foliation of the punctured
//! task space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CoordinateVector;
use crate::learning::{gradient_flow, FlowConfig, LossSurface, ModelPoint, TaskPoint};

/// Leaf-scan parameters. Task coordinates are taken relative to `m0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticMamlSetup {
    pub dim: usize,
    pub m0: ModelPoint,
    pub eps: f64,
    pub k: f64,
    /// RK4 step for the numeric flow.
    pub step: f64,
    /// Seeds the sphere directions when `dim > 2`.
    pub seed: u64,
}

impl QuadraticMamlSetup {
    pub fn planar(eps: f64, k: f64) -> Self {
        Self {
            dim: 2,
            m0: CoordinateVector::zeros(2),
            eps,
            k,
            step: 1e-3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if self.m0.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: self.m0.dim(),
            });
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "k must be non-negative, got {}",
                self.k
            )));
        }
        FlowConfig::new(self.step, self.k.max(self.step)).map(|_| ())
    }

    /// Radius of the leaf `|t|^2 = eps e^{4k}`.
    pub fn leaf_radius(&self) -> f64 {
        (self.eps * (4.0 * self.k).exp()).sqrt()
    }

    /// `n` tasks on the leaf. In the plane they sit at angles `2 pi j / n`;
    /// in higher dimension along seeded Gaussian directions; on the line
    /// they alternate between `+r` and `-r`.
    pub fn leaf_tasks(&self, n: usize) -> Vec<TaskPoint> {
        let r = self.leaf_radius();
        let directions: Vec<Vec<f64>> = match self.dim {
            1 => (0..n).map(|j| vec![if j % 2 == 0 { 1.0 } else { -1.0 }]).collect(),
            2 => (0..n)
                .map(|j| {
                    let a = std::f64::consts::TAU * j as f64 / n as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect(),
            d => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                (0..n)
                    .map(|_| loop {
                        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                        let len = crate::geometry::norm(&g);
                        if len > 1e-12 {
                            break g.into_iter().map(|x| x / len).collect();
                        }
                    })
                    .collect()
            }
        };
        directions
            .into_iter()
            .map(|u| self.m0.add(&u.iter().map(|x| r * x).collect::<Vec<_>>()))
            .collect()
    }
}

/// Per-task outcome of [`scan_leaf`], in task order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafReport {
    pub tasks: Vec<TaskPoint>,
    /// `|sum t_i^2 - eps e^{4k}|`.
    pub residuals: Vec<f64>,
    /// Loss after the numeric flow for time `k`.
    pub numeric_losses: Vec<f64>,
    pub eps: f64,
}

impl LeafReport {
    /// `|loss - eps|` per task.
    pub fn loss_errors(&self) -> Vec<f64> {
        self.numeric_losses.iter().map(|l| (l - self.eps).abs()).collect()
    }

    pub fn max_loss_error(&self) -> f64 {
        self.loss_errors().into_iter().fold(0.0, f64::max)
    }

    pub fn certifies(&self, tol: f64) -> bool {
        self.loss_errors().iter().all(|e| *e <= tol)
    }
}

/// `m_i(k) = t_i (1 - e^{-2k})`, centered at the flow's starting model.
pub fn analytic_flow(t: &[f64], k: f64) -> ModelPoint {
    let shrink = 1.0 - (-2.0 * k).exp();
    t.iter().map(|x| x * shrink).collect::<Vec<_>>().into()
}

/// `sum t_i^2 - eps e^{4k}`; zero exactly on the `(k, eps)` leaf.
pub fn leaf_residual(t: &[f64], eps: f64, k: f64) -> f64 {
    t.iter().map(|x| x * x).sum::<f64>() - eps * (4.0 * k).exp()
}

fn accuracy_norm(t: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let sq: f64 = t.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        return Err(Error::DegenerateTask);
    }
    if sq < eps {
        return Err(Error::AlreadySatisfied { loss: sq, eps });
    }
    Ok(sq)
}

/// `k = ln(sum t_i^2 / eps) / 4`, the time at which the flow from the
/// origin first reaches loss `eps`.
pub fn time_to_accuracy(t: &[f64], eps: f64) -> Result<f64> {
    Ok(0.25 * (accuracy_norm(t, eps)? / eps).ln())
}

/// `m_i = t_i (1 - sqrt(eps / sum t_j^2))`, the model at that time.
pub fn model_at_accuracy(t: &[f64], eps: f64) -> Result<ModelPoint> {
    let shrink = 1.0 - (eps / accuracy_norm(t, eps)?).sqrt();
    Ok(t.iter().map(|x| x * shrink).collect::<Vec<_>>().into())
}

/// Places `n_tasks` tasks on the leaf and integrates each flow from `m0`
/// for time `k`.
pub fn scan_leaf(setup: &QuadraticMamlSetup, n_tasks: usize) -> Result<LeafReport> {
    setup.validate()?;
    if n_tasks == 0 {
        return Err(Error::InvalidArgument("scan_leaf needs at least one task".into()));
    }
    let loss = LossSurface::quadratic();
    let cfg = FlowConfig::new(setup.step, setup.k.max(setup.step))?;
    let tasks = setup.leaf_tasks(n_tasks);
    let numeric_losses = tasks
        .par_iter()
        .map(|t| {
            let m = gradient_flow(&loss, t, &setup.m0, setup.k, &cfg)?;
            Ok(loss.eval(t, &m))
        })
        .collect::<Result<Vec<f64>>>()?;
    let residuals = tasks
        .iter()
        .map(|t| leaf_residual(&t.sub(&setup.m0), setup.eps, setup.k).abs())
        .collect();
    Ok(LeafReport {
        tasks,
        residuals,
        numeric_losses,
        eps: setup.eps,
    })
}
