//! Loss surfaces over task × model coordinates and the learning machinery
//! built on them: gradients, RK4 gradient flow, single-task solving, loss
//! balls and the topology they induce on task space, model equivalence,
//! equivariance defects and plaque-restricted retraining.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::CoordinateVector;
use crate::relatedness::Transformation;

/// A task, in the reference chart of task space.
pub type TaskPoint = CoordinateVector;

/// A model, in the reference chart of model space.
pub type ModelPoint = CoordinateVector;

/// Central-difference step used when no analytic gradient is supplied.
pub const DEFAULT_GRADIENT_STEP: f64 = 1e-5;

/// Outputs closer than this count as equal in [`model_equivalent`].
pub const DEFAULT_EQUIVALENCE_TOL: f64 = 1e-9;

/// Time resolution of the first-crossing bisection.
pub const CROSSING_TIME_TOL: f64 = 1e-9;

type LossFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
type SolveFn = Arc<dyn Fn(&[f64]) -> Result<ModelPoint> + Send + Sync>;

/// `L(task, model) >= 0`, optionally with its model gradient.
#[derive(Clone)]
pub struct LossSurface {
    name: String,
    eval: LossFn,
    gradient: Option<GradientFn>,
}

impl fmt::Debug for LossSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LossSurface")
            .field("name", &self.name)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl LossSurface {
    pub fn new(name: impl Into<String>, eval: LossFn) -> Self {
        Self {
            name: name.into(),
            eval,
            gradient: None,
        }
    }

    pub fn with_gradient(mut self, gradient: GradientFn) -> Self {
        self.gradient = Some(gradient);
        self
    }

    /// `sum (m_i - t_i)^2` with gradient `2 (m - t)`.
    pub fn quadratic() -> Self {
        Self::new(
            "quadratic",
            Arc::new(|t, m| m.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum()),
        )
        .with_gradient(Arc::new(|t, m| m.iter().zip(t).map(|(a, b)| 2.0 * (a - b)).collect()))
    }

    /// The quadratic loss plus a unit jump when the first task coordinate
    /// is non-negative. Discontinuous in the task, smooth in the model.
    pub fn quadratic_with_step() -> Self {
        Self::new(
            "quadratic-step",
            Arc::new(|t, m| {
                let q: f64 = m.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
                q + if t[0] >= 0.0 { 1.0 } else { 0.0 }
            }),
        )
        .with_gradient(Arc::new(|t, m| m.iter().zip(t).map(|(a, b)| 2.0 * (a - b)).collect()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn eval(&self, t: &[f64], m: &[f64]) -> f64 {
        (self.eval)(t, m)
    }

    /// Analytic gradient when present, central differences otherwise.
    pub fn gradient(&self, t: &[f64], m: &[f64]) -> Result<CoordinateVector> {
        let g = match &self.gradient {
            Some(g) => CoordinateVector::from(g(t, m)),
            None => return self.finite_difference_gradient(t, m, DEFAULT_GRADIENT_STEP),
        };
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", self.name)));
        }
        Ok(g)
    }

    pub fn finite_difference_gradient(&self, t: &[f64], m: &[f64], step: f64) -> Result<CoordinateVector> {
        let mut probe = m.to_vec();
        let mut out = Vec::with_capacity(m.len());
        for i in 0..m.len() {
            probe[i] = m[i] + step;
            let up = self.eval(t, &probe);
            probe[i] = m[i] - step;
            let down = self.eval(t, &probe);
            probe[i] = m[i];
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!("{} near the model point", self.name)));
            }
            out.push((up - down) / (2.0 * step));
        }
        Ok(out.into())
    }
}

pub fn loss_gradient(l: &LossSurface, t: &[f64], m: &[f64]) -> Result<CoordinateVector> {
    l.gradient(t, m)
}

/// A deterministic map from tasks to models.
#[derive(Clone)]
pub struct LearnerMap {
    name: String,
    solve: SolveFn,
}

impl fmt::Debug for LearnerMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LearnerMap")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

impl LearnerMap {
    pub fn new(name: impl Into<String>, solve: SolveFn) -> Self {
        Self {
            name: name.into(),
            solve,
        }
    }

    /// The exact minimizer of the quadratic loss: `solve(t) = t`.
    pub fn exact_quadratic() -> Self {
        Self::new("exact-quadratic", Arc::new(|t| Ok(CoordinateVector::from(t))))
    }

    /// Gradient flow from `m0` until the loss drops to `eps`.
    pub fn gradient_flow(loss: LossSurface, m0: ModelPoint, eps: f64, cfg: FlowConfig) -> Self {
        Self::new(
            format!("flow({})", loss.name()),
            Arc::new(move |t| solve_single_task(&loss, t, &m0, eps, &cfg).map(|o| o.model)),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn solve(&self, t: &[f64]) -> Result<ModelPoint> {
        (self.solve)(t)
    }
}

/// Fixed-step RK4 settings.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub step: f64,
    pub max_time: f64,
    /// Losses above this (or non-finite) abort with [`Error::Diverged`].
    pub divergence_ceiling: f64,
    /// Plaque optimization stops once the restricted gradient is this small.
    pub stationary_tol: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            max_time: 100.0,
            divergence_ceiling: 1e12,
            stationary_tol: 1e-9,
        }
    }
}

impl FlowConfig {
    pub fn new(step: f64, max_time: f64) -> Result<Self> {
        let cfg = Self {
            step,
            max_time,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "flow step must be positive, got {}",
                self.step
            )));
        }
        if !(self.max_time >= self.step && self.max_time.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "max_time {} must be finite and at least the step {}",
                self.max_time, self.step
            )));
        }
        Ok(())
    }
}

/// Why an optimization stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    ReachedAccuracy,
    Stationary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowOutcome {
    pub model: ModelPoint,
    pub time: f64,
    pub loss: f64,
    pub stop: StopReason,
}

/// `-grad_m L`, zeroed outside `active` when a mask is given.
fn velocity(l: &LossSurface, t: &[f64], m: &[f64], active: Option<&[bool]>) -> Result<Vec<f64>> {
    let g = l.gradient(t, m)?;
    Ok(g.iter()
        .enumerate()
        .map(|(i, v)| if active.is_none_or(|a| a[i]) { -v } else { 0.0 })
        .collect())
}

fn rk4_step(l: &LossSurface, t: &[f64], m: &[f64], h: f64, active: Option<&[bool]>) -> Result<Vec<f64>> {
    let shifted =
        |base: &[f64], k: &[f64], s: f64| -> Vec<f64> { base.iter().zip(k).map(|(b, v)| b + s * v).collect() };
    let k1 = velocity(l, t, m, active)?;
    let k2 = velocity(l, t, &shifted(m, &k1, h / 2.0), active)?;
    let k3 = velocity(l, t, &shifted(m, &k2, h / 2.0), active)?;
    let k4 = velocity(l, t, &shifted(m, &k3, h), active)?;
    let mut out: Vec<f64> = (0..m.len())
        .map(|i| m[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if let Some(a) = active {
        for (i, v) in out.iter_mut().enumerate() {
            if !a[i] {
                *v = m[i];
            }
        }
    }
    Ok(out)
}

fn guard(l: &LossSurface, t: &[f64], m: &[f64], cfg: &FlowConfig) -> Result<f64> {
    let loss = l.eval(t, m);
    if !loss.is_finite() || loss > cfg.divergence_ceiling {
        return Err(Error::Diverged {
            loss,
            ceiling: cfg.divergence_ceiling,
        });
    }
    Ok(loss)
}

/// RK4 integration of `dm/ds = -grad_m L(t, m)` for time `k`, landing
/// exactly on `k` with a shortened final step.
pub fn gradient_flow(l: &LossSurface, t: &[f64], m0: &[f64], k: f64, cfg: &FlowConfig) -> Result<ModelPoint> {
    cfg.validate()?;
    if !(k >= 0.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "flow time must be non-negative, got {k}"
        )));
    }
    let mut m = m0.to_vec();
    let full = (k / cfg.step).floor() as usize;
    for _ in 0..full {
        m = rk4_step(l, t, &m, cfg.step, None)?;
        guard(l, t, &m, cfg)?;
    }
    let rest = k - full as f64 * cfg.step;
    if rest > 0.0 {
        m = rk4_step(l, t, &m, rest, None)?;
        guard(l, t, &m, cfg)?;
    }
    Ok(m.into())
}

/// Flow until the loss first reaches `eps`. The crossing is bisected inside
/// the bracketing step down to [`CROSSING_TIME_TOL`].
pub fn solve_single_task(l: &LossSurface, t: &[f64], m0: &[f64], eps: f64, cfg: &FlowConfig) -> Result<FlowOutcome> {
    optimize(l, t, m0, None, eps, cfg, false)
}

/// Gradient flow on the plaque through `m0` where the coordinates in
/// `fixed` are frozen. Stops when the loss reaches `eps` or the gradient
/// along the retrained coordinates falls below `cfg.stationary_tol`.
pub fn plaque_restricted_optimize(
    l: &LossSurface,
    t: &[f64],
    m0: &[f64],
    fixed: &[usize],
    retrain: &[usize],
    eps: f64,
    cfg: &FlowConfig,
) -> Result<FlowOutcome> {
    let mut seen = vec![0u8; m0.len()];
    for &i in fixed.iter().chain(retrain) {
        if i >= m0.len() {
            return Err(Error::InvalidArgument(format!(
                "index {i} out of range for {} coordinates",
                m0.len()
            )));
        }
        seen[i] += 1;
    }
    if seen.iter().any(|&c| c != 1) {
        return Err(Error::InvalidArgument(
            "fixed and retrain indices must partition the coordinates".into(),
        ));
    }
    let mut active = vec![false; m0.len()];
    for &i in retrain {
        active[i] = true;
    }
    if retrain.is_empty() {
        let loss = guard(l, t, m0, cfg)?;
        return Ok(FlowOutcome {
            model: m0.into(),
            time: 0.0,
            loss,
            stop: if loss <= eps {
                StopReason::ReachedAccuracy
            } else {
                StopReason::Stationary
            },
        });
    }
    optimize(l, t, m0, Some(&active), eps, cfg, true)
}

fn optimize(
    l: &LossSurface,
    t: &[f64],
    m0: &[f64],
    active: Option<&[bool]>,
    eps: f64,
    cfg: &FlowConfig,
    stop_when_stationary: bool,
) -> Result<FlowOutcome> {
    cfg.validate()?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "accuracy target must be positive, got {eps}"
        )));
    }
    let mut m = m0.to_vec();
    let mut time = 0.0;
    let mut loss = guard(l, t, &m, cfg)?;
    loop {
        if loss <= eps {
            return Ok(FlowOutcome {
                model: m.into(),
                time,
                loss,
                stop: StopReason::ReachedAccuracy,
            });
        }
        if stop_when_stationary && crate::geometry::norm(&velocity(l, t, &m, active)?) <= cfg.stationary_tol {
            return Ok(FlowOutcome {
                model: m.into(),
                time,
                loss,
                stop: StopReason::Stationary,
            });
        }
        let remaining = cfg.max_time - time;
        if remaining <= 0.0 {
            return Err(Error::BudgetExhausted {
                max_time: cfg.max_time,
                loss,
                target: eps,
            });
        }
        let h = cfg.step.min(remaining);
        let next = rk4_step(l, t, &m, h, active)?;
        let next_loss = guard(l, t, &next, cfg)?;
        if next_loss <= eps {
            let (mut lo, mut hi) = (0.0, h);
            let mut best = (next, next_loss);
            while hi - lo > CROSSING_TIME_TOL {
                let mid = 0.5 * (lo + hi);
                let probe = rk4_step(l, t, &m, mid, active)?;
                let probe_loss = l.eval(t, &probe);
                if probe_loss <= eps {
                    hi = mid;
                    best = (probe, probe_loss);
                } else {
                    lo = mid;
                }
            }
            return Ok(FlowOutcome {
                model: best.0.into(),
                time: time + hi,
                loss: best.1,
                stop: StopReason::ReachedAccuracy,
            });
        }
        m = next;
        loss = next_loss;
        time += h;
    }
}

/// Candidates `s` with `|L(s, solve(t)) - L(t, solve(t))| < eps`.
pub fn loss_ball(
    l: &LossSurface,
    learner: &LearnerMap,
    t: &[f64],
    eps: f64,
    candidates: &[TaskPoint],
) -> Result<Vec<TaskPoint>> {
    let m = learner.solve(t)?;
    let centre = l.eval(t, &m);
    Ok(candidates
        .iter()
        .filter(|s| (l.eval(s, &m) - centre).abs() < eps)
        .cloned()
        .collect())
}

/// Which open-set property a counterexample breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TopologyAxiom {
    /// A member of a sampled set has no loss ball inside the set.
    InnerBall,
    Union,
    Intersection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopologyCounterexample {
    pub axiom: TopologyAxiom,
    /// Indices into the sample sets.
    pub sets: Vec<usize>,
    pub task: TaskPoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopologyReport {
    pub universe_size: usize,
    pub inner_ball_checks: usize,
    pub union_checks: usize,
    pub intersection_checks: usize,
    pub counterexamples: Vec<TopologyCounterexample>,
}

impl TopologyReport {
    pub fn passed(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// Loss-ball deviations `D[t][s] = |L(s, m_t) - L(t, m_t)|` over a finite
/// universe, used to decide openness at the resolution of an eps grid.
/// Each row is sorted by deviation so ball queries scan only the ball.
struct Deviations {
    rows: Vec<Vec<(f64, u32)>>,
    eps_grid: Vec<f64>,
}

impl Deviations {
    fn new(l: &LossSurface, learner: &LearnerMap, universe: &[TaskPoint], eps_grid: &[f64]) -> Result<Self> {
        let rows = universe
            .par_iter()
            .map(|t| {
                let m = learner.solve(t)?;
                let centre = l.eval(t, &m);
                let mut row: Vec<(f64, u32)> = universe
                    .iter()
                    .enumerate()
                    .map(|(i, s)| ((l.eval(s, &m) - centre).abs(), i as u32))
                    .collect();
                row.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut eps_grid: Vec<f64> = eps_grid.iter().copied().filter(|e| *e > 0.0).collect();
        eps_grid.sort_by(f64::total_cmp);
        Ok(Self { rows, eps_grid })
    }

    /// Largest grid radius whose ball about `t` stays inside `member`.
    fn witness(&self, t: usize, member: &[bool]) -> Option<f64> {
        let gap = self.rows[t]
            .iter()
            .find(|(_, s)| !member[*s as usize])
            .map_or(f64::INFINITY, |(d, _)| *d);
        self.eps_grid.iter().rev().copied().find(|e| *e <= gap)
    }

    fn ball_inside(&self, t: usize, eps: f64, member: &[bool]) -> bool {
        self.rows[t]
            .iter()
            .take_while(|(d, _)| *d < eps)
            .all(|(_, s)| member[*s as usize])
    }
}

/// Checks, on a finite universe of tasks, that the sampled sets are open
/// (every member has a loss ball inside the set), that unions of pairs are
/// open and that pairwise intersections contain the ball of radius
/// `min(eps_1, eps_2)` at each member. The empty set and the whole
/// universe are always included. Radii come from `eps_grid`.
pub fn verify_topology_axioms(
    l: &LossSurface,
    learner: &LearnerMap,
    universe: &[TaskPoint],
    sample_sets: &[Vec<TaskPoint>],
    eps_grid: &[f64],
) -> Result<TopologyReport> {
    if universe.is_empty() {
        return Err(Error::InvalidArgument(
            "topology check needs a non-empty universe".into(),
        ));
    }
    let n = universe.len();
    let key = |p: &[f64]| p.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let index: HashMap<Vec<u64>, usize> = universe.iter().enumerate().rev().map(|(i, u)| (key(u), i)).collect();
    let mut sets: Vec<Vec<bool>> = vec![vec![false; n], vec![true; n]];
    for set in sample_sets {
        let mut member = vec![false; n];
        for p in set {
            let idx = index
                .get(&key(p))
                .copied()
                .or_else(|| universe.iter().position(|u| u.distance(p) <= 1e-12))
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("sample point {:?} is not in the universe", p.as_slice()))
                })?;
            member[idx] = true;
        }
        sets.push(member);
    }
    // Report set indices relative to the caller's list; -1 and -2 are not
    // representable, so the trivial sets use usize::MAX - 1 and usize::MAX.
    let label = |i: usize| if i < 2 { usize::MAX - 1 + i } else { i - 2 };
    let dev = Deviations::new(l, learner, universe, eps_grid)?;

    let mut report = TopologyReport {
        universe_size: n,
        inner_ball_checks: 0,
        union_checks: 0,
        intersection_checks: 0,
        counterexamples: Vec::new(),
    };

    let witnesses: Vec<Vec<Option<f64>>> = sets
        .par_iter()
        .map(|set| {
            (0..n)
                .map(|t| if set[t] { dev.witness(t, set) } else { None })
                .collect()
        })
        .collect();
    for (si, set) in sets.iter().enumerate() {
        for t in (0..n).filter(|&t| set[t]) {
            report.inner_ball_checks += 1;
            if witnesses[si][t].is_none() {
                report.counterexamples.push(TopologyCounterexample {
                    axiom: TopologyAxiom::InnerBall,
                    sets: vec![label(si)],
                    task: universe[t].clone(),
                });
            }
        }
    }

    // Each set is paired with its successor and with its mirror in the
    // list, which covers every set at least twice without the quadratic
    // blow-up of all pairs.
    let s = sets.len();
    let mut pairs: Vec<(usize, usize)> = (0..s)
        .flat_map(|i| [(i, (i + 1) % s), (i, s - 1 - i)])
        .filter(|(a, b)| a != b)
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();

    let results: Vec<(usize, usize, Vec<TopologyCounterexample>)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let union: Vec<bool> = (0..n).map(|t| sets[a][t] || sets[b][t]).collect();
            let inter: Vec<bool> = (0..n).map(|t| sets[a][t] && sets[b][t]).collect();
            let mut found = Vec::new();
            let (mut u_checks, mut i_checks) = (0, 0);
            for t in 0..n {
                if union[t] {
                    u_checks += 1;
                    if dev.witness(t, &union).is_none() {
                        found.push(TopologyCounterexample {
                            axiom: TopologyAxiom::Union,
                            sets: vec![label(a), label(b)],
                            task: universe[t].clone(),
                        });
                    }
                }
                if inter[t] {
                    i_checks += 1;
                    let ok = match (witnesses[a][t], witnesses[b][t]) {
                        (Some(ea), Some(eb)) => dev.ball_inside(t, ea.min(eb), &inter),
                        _ => false,
                    };
                    if !ok {
                        found.push(TopologyCounterexample {
                            axiom: TopologyAxiom::Intersection,
                            sets: vec![label(a), label(b)],
                            task: universe[t].clone(),
                        });
                    }
                }
            }
            (u_checks, i_checks, found)
        })
        .collect();
    for (u, i, found) in results {
        report.union_checks += u;
        report.intersection_checks += i;
        report.counterexamples.extend(found);
    }
    Ok(report)
}

/// Loss balls about each centre for each radius, in centre-major order.
pub fn loss_ball_family(
    l: &LossSurface,
    learner: &LearnerMap,
    universe: &[TaskPoint],
    centres: &[TaskPoint],
    radii: &[f64],
) -> Result<Vec<Vec<TaskPoint>>> {
    let mut out = Vec::with_capacity(centres.len() * radii.len());
    for c in centres {
        for &r in radii {
            out.push(loss_ball(l, learner, c, r, universe)?);
        }
    }
    Ok(out)
}

/// Whether two parameter vectors define the same function on the probes.
pub fn model_equivalent<F>(arch: F, p1: &[f64], p2: &[f64], probe_inputs: &[CoordinateVector]) -> Result<bool>
where
    F: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    if probe_inputs.is_empty() {
        return Err(Error::InvalidArgument(
            "model equivalence needs at least one probe input".into(),
        ));
    }
    Ok(probe_inputs.iter().all(|x| {
        let (a, b) = (arch(p1, x), arch(p2, x));
        a.len() == b.len() && a.iter().zip(&b).all(|(u, v)| (u - v).abs() <= DEFAULT_EQUIVALENCE_TOL)
    }))
}

/// `max_t |learner(pi(t)) - rho(learner(t))|`.
pub fn equivariance_defect(
    learner: &LearnerMap,
    task_transform: &Transformation,
    model_transform: &Transformation,
    tasks: &[TaskPoint],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in tasks {
        let moved = learner.solve(&task_transform.apply(t)?)?;
        let expected = model_transform.apply(&learner.solve(t)?)?;
        worst = worst.max(moved.distance(&expected));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> CoordinateVector {
        CoordinateVector::from(x)
    }

    fn grid(n: usize) -> Vec<TaskPoint> {
        let step = 2.0 / (n - 1) as f64;
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                out.push(v(&[-1.0 + step * i as f64, -1.0 + step * j as f64]));
            }
        }
        out
    }

    #[test]
    fn quadratic_gradient() {
        let l = LossSurface::quadratic();
        assert_eq!(
            loss_gradient(&l, &[1.0, 0.0], &[0.0, 0.0]).unwrap().as_slice(),
            &[-2.0, 0.0]
        );
        assert_eq!(
            loss_gradient(&l, &[0.3, 0.4], &[0.3, 0.4]).unwrap().as_slice(),
            &[0.0, 0.0]
        );
    }

    #[test]
    fn finite_differences_used_without_analytic_gradient() {
        let l = LossSurface::new("cubic", Arc::new(|t, m| (m[0] - t[0]).powi(4)));
        let g = loss_gradient(&l, &[0.0], &[1.0]).unwrap();
        assert!((g[0] - 4.0).abs() < 1e-8);
        let bad = LossSurface::new("nan", Arc::new(|_, m| if m[0] > 0.0 { f64::NAN } else { 0.0 }));
        assert!(matches!(loss_gradient(&bad, &[0.0], &[0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn flow_examples() {
        let l = LossSurface::quadratic();
        let cfg = FlowConfig::default();
        let t = [1.0, 0.0];
        assert_eq!(
            gradient_flow(&l, &t, &[0.0, 0.0], 0.0, &cfg).unwrap().as_slice(),
            &[0.0, 0.0]
        );
        let far = gradient_flow(&l, &t, &[0.0, 0.0], 10.0, &cfg).unwrap();
        assert!(far.distance(&t) < 1e-6);
        let half = gradient_flow(&l, &t, &[0.0, 0.0], 0.5, &cfg).unwrap();
        assert!((half[0] - (1.0 - (-1.0f64).exp())).abs() < 1e-6);
        assert!(gradient_flow(&l, &t, &[0.0, 0.0], -1.0, &cfg).is_err());
    }

    #[test]
    fn flow_lands_on_non_grid_times() {
        let l = LossSurface::quadratic();
        let cfg = FlowConfig::default();
        let k = 0.123_456_7;
        let m = gradient_flow(&l, &[2.0], &[0.0], k, &cfg).unwrap();
        assert!((m[0] - 2.0 * (1.0 - (-2.0 * k).exp())).abs() < 1e-9);
    }

    #[test]
    fn flow_divergence_guard() {
        let l = LossSurface::new("unstable", Arc::new(|_, m| m[0] * m[0]))
            .with_gradient(Arc::new(|_, m| vec![-2.0 * m[0]]));
        let cfg = FlowConfig {
            divergence_ceiling: 1e6,
            ..FlowConfig::default()
        };
        assert!(matches!(
            gradient_flow(&l, &[0.0], &[1.0], 20.0, &cfg),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn semigroup_property() {
        let l = LossSurface::quadratic();
        let cfg = FlowConfig::default();
        let t = [0.7, -0.4];
        let a = gradient_flow(&l, &t, &[0.0, 0.0], 0.8, &cfg).unwrap();
        let ab = gradient_flow(&l, &t, &a, 0.6, &cfg).unwrap();
        let direct = gradient_flow(&l, &t, &[0.0, 0.0], 1.4, &cfg).unwrap();
        assert!(ab.distance(&direct) < 1e-6);
    }

    #[test]
    fn single_task_crossing_time() {
        let l = LossSurface::quadratic();
        let cfg = FlowConfig::default();
        let out = solve_single_task(&l, &[1.0, 0.0], &[0.0, 0.0], 0.01, &cfg).unwrap();
        assert!((out.time - 100f64.ln() / 4.0).abs() < 1e-6, "{}", out.time);
        assert!(out.loss <= 0.01 && out.loss > 0.01 - 1e-6);

        let already = solve_single_task(&l, &[1.0, 0.0], &[0.99, 0.0], 0.01, &cfg).unwrap();
        assert_eq!(already.time, 0.0);

        let short = FlowConfig::new(1e-3, 0.5).unwrap();
        assert!(matches!(
            solve_single_task(&l, &[1.0, 0.0], &[0.0, 0.0], 1e-6, &short),
            Err(Error::BudgetExhausted { .. })
        ));
    }

    #[test]
    fn loss_ball_examples() {
        let l = LossSurface::quadratic();
        let learner = LearnerMap::exact_quadratic();
        let g = grid(21);
        let ball = loss_ball(&l, &learner, &[0.0, 0.0], 0.25, &g).unwrap();
        let expected: Vec<_> = g.iter().filter(|s| s.norm_squared() < 0.25).cloned().collect();
        assert_eq!(ball, expected);
        let t = v(&[0.3, -0.2]);
        assert!(loss_ball(&l, &learner, &t, 1e-12, std::slice::from_ref(&t))
            .unwrap()
            .contains(&t));
        assert_eq!(loss_ball(&l, &learner, &t, f64::INFINITY, &g).unwrap().len(), g.len());
    }

    #[test]
    fn topology_quadratic_passes_and_step_fails() {
        let universe = grid(11);
        let learner = LearnerMap::exact_quadratic();
        let quadratic = LossSurface::quadratic();
        let centres = [v(&[0.0, 0.0]), v(&[0.4, 0.2]), v(&[-0.6, 0.6])];
        let radii = [0.05, 0.3];
        let eps_grid = [1e-4, 1e-2, 0.1];
        let sets = loss_ball_family(&quadratic, &learner, &universe, &centres, &radii).unwrap();
        let report = verify_topology_axioms(&quadratic, &learner, &universe, &sets, &eps_grid).unwrap();
        assert!(
            report.passed(),
            "{:?}",
            &report.counterexamples[..report.counterexamples.len().min(3)]
        );
        assert!(report.union_checks > 0 && report.intersection_checks > 0);

        let step = LossSurface::quadratic_with_step();
        let sets = loss_ball_family(&step, &learner, &universe, &centres, &radii).unwrap();
        let report = verify_topology_axioms(&step, &learner, &universe, &sets, &eps_grid).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn trivial_sets_are_open() {
        let universe = grid(5);
        let report = verify_topology_axioms(
            &LossSurface::quadratic(),
            &LearnerMap::exact_quadratic(),
            &universe,
            &[],
            &[1e-4],
        )
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.inner_ball_checks, universe.len());
    }

    #[test]
    fn model_equivalence_examples() {
        let arch = |p: &[f64], x: &[f64]| vec![(x[0] + p[0]).sin()];
        let probes: Vec<_> = (0..8).map(|i| v(&[i as f64 * 0.4])).collect();
        assert!(model_equivalent(arch, &[0.3], &[0.3 + std::f64::consts::TAU], &probes).unwrap());
        assert!(!model_equivalent(arch, &[0.0], &[std::f64::consts::PI], &probes).unwrap());
        assert!(model_equivalent(arch, &[1.1], &[1.1], &probes).unwrap());
        assert!(model_equivalent(arch, &[0.0], &[0.0], &[]).is_err());
    }

    #[test]
    fn equivariance_examples() {
        let learner = LearnerMap::exact_quadratic();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tasks: Vec<_> = (0..20)
            .map(|_| v(&[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]))
            .collect();
        let shift = Transformation::translation(&[0.7, -1.3]);
        assert!(equivariance_defect(&learner, &shift, &shift, &tasks).unwrap() <= 1e-12);
        let id = Transformation::identity();
        assert_eq!(equivariance_defect(&learner, &id, &id, &tasks).unwrap(), 0.0);
        let unit = Transformation::translation(&[1.0, 0.0]);
        let d = equivariance_defect(&learner, &unit, &id, &tasks).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
    }

    #[test]
    fn plaque_examples() {
        let l = LossSurface::quadratic();
        let cfg = FlowConfig::default();
        let out = plaque_restricted_optimize(&l, &[1.0, 1.0], &[0.0, 0.0], &[0], &[1], 1e-3, &cfg).unwrap();
        assert_eq!(out.model[0].to_bits(), 0.0f64.to_bits());
        assert!(out.model.distance(&[0.0, 1.0]) < 1e-6);
        assert!((out.loss - 1.0).abs() < 1e-6);
        assert_eq!(out.stop, StopReason::Stationary);

        let free = plaque_restricted_optimize(&l, &[1.0, 0.0], &[0.0, 0.0], &[], &[0, 1], 0.01, &cfg).unwrap();
        let direct = solve_single_task(&l, &[1.0, 0.0], &[0.0, 0.0], 0.01, &cfg).unwrap();
        assert_eq!(free.model, direct.model);
        assert_eq!(free.time, direct.time);

        let frozen = plaque_restricted_optimize(&l, &[1.0, 0.0], &[0.25, 0.5], &[0, 1], &[], 0.01, &cfg).unwrap();
        assert_eq!(frozen.model.as_slice(), &[0.25, 0.5]);

        assert!(plaque_restricted_optimize(&l, &[1.0, 0.0], &[0.0, 0.0], &[0], &[0], 0.01, &cfg).is_err());
    }

    #[test]
    fn flow_learner_matches_solver() {
        let l = LossSurface::quadratic();
        let learner = LearnerMap::gradient_flow(l.clone(), v(&[0.0, 0.0]), 0.01, FlowConfig::default());
        let m = learner.solve(&[0.6, 0.8]).unwrap();
        assert!((l.eval(&[0.6, 0.8], &m) - 0.01).abs() < 1e-6);
    }
}
