//! Charted-manifold plumbing.
//!
//! Abstract points are represented by their coordinates in a designated
//! reference chart, so a [`Chart`] is a pair of maps between reference
//! coordinates and local coordinates together with membership predicates for
//! its domain and codomain. A [`BallChart`] is a chart whose codomain is an
//! open ball centered at the origin; it carries the homeomorphism
//! `h(x) = x / (r - |x|)` onto the whole Euclidean space.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default step for central finite differences.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Default tolerance for roundtrip identities.
pub const DEFAULT_ROUNDTRIP_TOL: f64 = 1e-9;

/// Default tolerance on Jacobian jumps once two samples are within a few
/// finite-difference steps of each other.
pub const DEFAULT_JUMP_TOL: f64 = 1e-3;

pub type Predicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;
pub type PointMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A point of `R^d`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoordinateVector(Vec<f64>);

impl CoordinateVector {
    /// Validating constructor; rejects non-finite entries.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if let Some(bad) = entries.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("coordinate entry {bad}")));
        }
        Ok(Self(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        distance(&self.0, other)
    }

    pub fn add(&self, other: &[f64]) -> Self {
        Self(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &[f64]) -> Self {
        Self(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    /// Concatenation `(self, other)`.
    pub fn concat(&self, other: &[f64]) -> Self {
        let mut out = self.0.clone();
        out.extend_from_slice(other);
        Self(out)
    }

    pub fn split_at(&self, mid: usize) -> (Self, Self) {
        let (a, b) = self.0.split_at(mid);
        (Self(a.to_vec()), Self(b.to_vec()))
    }
}

impl Deref for CoordinateVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for CoordinateVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for CoordinateVector {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl<const N: usize> From<[f64; N]> for CoordinateVector {
    fn from(v: [f64; N]) -> Self {
        Self(v.to_vec())
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// A coordinate chart: an invertible map from a domain of reference
/// coordinates onto a codomain in `R^dim`.
#[derive(Clone)]
pub struct Chart {
    dim: usize,
    domain: Predicate,
    codomain: Predicate,
    forward: PointMap,
    inverse: PointMap,
}

impl fmt::Debug for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Chart").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl Chart {
    pub fn new(dim: usize, domain: Predicate, codomain: Predicate, forward: PointMap, inverse: PointMap) -> Self {
        Self {
            dim,
            domain,
            codomain,
            forward,
            inverse,
        }
    }

    /// The reference chart itself on all of `R^dim`.
    pub fn identity(dim: usize) -> Self {
        Self::new(
            dim,
            Arc::new(move |p| p.len() == dim),
            Arc::new(move |x| x.len() == dim),
            Arc::new(|p| p.to_vec()),
            Arc::new(|x| x.to_vec()),
        )
    }

    /// `p -> p + offset` on all of `R^d`.
    pub fn translation(offset: CoordinateVector) -> Self {
        let dim = offset.dim();
        let fwd = offset.clone();
        let inv = offset;
        Self::new(
            dim,
            Arc::new(move |p| p.len() == dim),
            Arc::new(move |x| x.len() == dim),
            Arc::new(move |p| fwd.add(p).into_inner()),
            Arc::new(move |x| CoordinateVector::from(x).sub(&inv).into_inner()),
        )
    }

    /// `p -> A p + b` for an invertible square `A`.
    pub fn affine(matrix: DMatrix<f64>, offset: CoordinateVector) -> Result<Self> {
        let dim = offset.dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: matrix.nrows(),
            });
        }
        let inverse = matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("affine chart matrix is singular".into()))?;
        let b_fwd = offset.clone();
        Ok(Self::new(
            dim,
            Arc::new(move |p| p.len() == dim),
            Arc::new(move |x| x.len() == dim),
            Arc::new(move |p| {
                let v = &matrix * nalgebra::DVector::from_column_slice(p);
                v.iter().zip(b_fwd.iter()).map(|(a, b)| a + b).collect()
            }),
            Arc::new(move |x| {
                let shifted: Vec<f64> = x.iter().zip(offset.iter()).map(|(a, b)| a - b).collect();
                (&inverse * nalgebra::DVector::from_vec(shifted))
                    .iter()
                    .copied()
                    .collect()
            }),
        ))
    }

    /// Restricts the chart to the points of its domain that also satisfy
    /// `pred`. The codomain shrinks to the image of the restricted domain.
    pub fn restrict(&self, pred: Predicate) -> Self {
        let domain = self.domain.clone();
        let codomain = self.codomain.clone();
        let inverse = self.inverse.clone();
        let pred_cod = pred.clone();
        Self {
            dim: self.dim,
            domain: Arc::new(move |p| domain(p) && pred(p)),
            codomain: Arc::new(move |x| codomain(x) && pred_cod(&inverse(x))),
            forward: self.forward.clone(),
            inverse: self.inverse.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        (self.domain)(p)
    }

    pub fn in_codomain(&self, x: &[f64]) -> bool {
        x.len() == self.dim && (self.codomain)(x)
    }

    pub fn forward(&self, p: &[f64]) -> Result<CoordinateVector> {
        if !self.contains(p) {
            return Err(Error::OutsideDomain);
        }
        Ok(self.forward_unchecked(p))
    }

    pub fn inverse(&self, x: &[f64]) -> Result<CoordinateVector> {
        if !self.in_codomain(x) {
            return Err(Error::OutsideDomain);
        }
        Ok(self.inverse_unchecked(x))
    }

    pub fn forward_unchecked(&self, p: &[f64]) -> CoordinateVector {
        (self.forward)(p).into()
    }

    pub fn inverse_unchecked(&self, x: &[f64]) -> CoordinateVector {
        (self.inverse)(x).into()
    }

    pub fn domain_predicate(&self) -> Predicate {
        self.domain.clone()
    }

    pub fn codomain_predicate(&self) -> Predicate {
        self.codomain.clone()
    }

    pub fn forward_map(&self) -> PointMap {
        self.forward.clone()
    }

    pub fn inverse_map(&self) -> PointMap {
        self.inverse.clone()
    }

    /// Worst `|forward(inverse(x)) - x|` over codomain samples; samples
    /// outside the codomain are skipped.
    pub fn roundtrip_error(&self, codomain_samples: &[CoordinateVector]) -> f64 {
        codomain_samples
            .iter()
            .filter(|x| self.in_codomain(x))
            .map(|x| distance(&(self.forward)(&(self.inverse)(x)), x))
            .fold(0.0, f64::max)
    }

    /// Worst `|inverse(forward(p)) - p|` over domain samples.
    pub fn inverse_roundtrip_error(&self, domain_samples: &[CoordinateVector]) -> f64 {
        domain_samples
            .iter()
            .filter(|p| self.contains(p))
            .map(|p| distance(&(self.inverse)(&(self.forward)(p)), p))
            .fold(0.0, f64::max)
    }
}

/// A finite collection of charts of a common dimension.
#[derive(Clone, Debug)]
pub struct Atlas {
    charts: Vec<Chart>,
    dim: usize,
}

impl Atlas {
    pub fn new(charts: Vec<Chart>) -> Result<Self> {
        let first = charts
            .first()
            .ok_or_else(|| Error::InvalidArgument("an atlas needs at least one chart".into()))?;
        let dim = first.dim();
        if let Some(bad) = charts.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        Ok(Self { charts, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn charts(&self) -> &[Chart] {
        &self.charts
    }

    /// Index of the first chart whose domain contains `p`.
    pub fn chart_containing(&self, p: &[f64]) -> Option<usize> {
        self.charts.iter().position(|c| c.contains(p))
    }

    /// Indices of samples not covered by any chart.
    pub fn uncovered(&self, samples: &[CoordinateVector]) -> Vec<usize> {
        samples
            .iter()
            .enumerate()
            .filter(|(_, p)| self.chart_containing(p).is_none())
            .map(|(i, _)| i)
            .collect()
    }
}

/// `b.forward(a.inverse(x))` for `x` in the codomain of `a` whose preimage
/// lies in the domain of `b`.
pub fn transition_map(a: &Chart, b: &Chart, x: &[f64]) -> Result<CoordinateVector> {
    if !a.in_codomain(x) {
        return Err(Error::OutsideOverlap);
    }
    let p = a.inverse_unchecked(x);
    if !b.contains(&p) {
        return Err(Error::OutsideOverlap);
    }
    Ok(b.forward_unchecked(&p))
}

/// A chart onto the open ball of radius `radius` about the origin.
#[derive(Clone, Debug)]
pub struct BallChart {
    center: CoordinateVector,
    radius: f64,
    chart: Chart,
}

impl BallChart {
    /// Ball of radius `radius` about `center` in reference coordinates,
    /// charted by `p -> p - center`.
    pub fn euclidean(center: CoordinateVector, radius: f64) -> Result<Self> {
        check_radius(radius)?;
        let dim = center.dim();
        let c_dom = center.clone();
        let c_fwd = center.clone();
        let c_inv = center.clone();
        let chart = Chart::new(
            dim,
            Arc::new(move |p| p.len() == dim && distance(p, &c_dom) < radius),
            Arc::new(move |x| norm(x) < radius),
            Arc::new(move |p| CoordinateVector::from(p).sub(&c_fwd).into_inner()),
            Arc::new(move |x| c_inv.add(x).into_inner()),
        );
        Ok(Self { center, radius, chart })
    }

    /// Wraps an arbitrary chart, restricting it to the preimage of the ball
    /// of radius `radius` about the origin. The center is the preimage of 0.
    pub fn from_chart(chart: Chart, radius: f64) -> Result<Self> {
        check_radius(radius)?;
        let center = chart.inverse_unchecked(&vec![0.0; chart.dim()]);
        if !center.is_finite() {
            return Err(Error::NonFinite("ball chart center".into()));
        }
        let fwd = chart.forward_map();
        let domain = chart.domain_predicate();
        let codomain = chart.codomain_predicate();
        let restricted = Chart::new(
            chart.dim(),
            Arc::new(move |p| domain(p) && norm(&fwd(p)) < radius),
            Arc::new(move |x| norm(x) < radius && codomain(x)),
            chart.forward_map(),
            chart.inverse_map(),
        );
        Ok(Self {
            center,
            radius,
            chart: restricted,
        })
    }

    pub fn center(&self) -> &CoordinateVector {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.chart.contains(p)
    }

    /// `h(x) = x / (r - |x|)`, a diffeomorphism from the ball onto `R^d`.
    pub fn ball_to_euclidean(&self, x: &[f64]) -> Result<CoordinateVector> {
        let n = norm(x);
        if !(n < self.radius) {
            return Err(Error::OutsideBall {
                norm: n,
                radius: self.radius,
            });
        }
        let denom = self.radius - n;
        Ok(x.iter().map(|v| v / denom).collect::<Vec<_>>().into())
    }

    /// `h^{-1}(y) = r y / (1 + |y|)`.
    pub fn euclidean_to_ball(&self, y: &[f64]) -> Result<CoordinateVector> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("euclidean coordinates".into()));
        }
        let denom = 1.0 + norm(y);
        Ok(y.iter().map(|v| self.radius * v / denom).collect::<Vec<_>>().into())
    }

    /// Deterministic lattice of points inside the ball, in reference
    /// coordinates. `per_axis` lattice steps are taken on each side of the
    /// center along every axis; points on or outside the sphere are dropped.
    pub fn sample_points(&self, per_axis: usize) -> Vec<CoordinateVector> {
        let d = self.dim();
        if d == 0 {
            return vec![self.chart.inverse_unchecked(&[])];
        }
        let per_axis = per_axis.max(1) as i64;
        let spacing = self.radius / (per_axis as f64 + 0.5);
        let side = 2 * per_axis + 1;
        let total = (side as usize).pow(d as u32);
        let mut out = Vec::new();
        for flat in 0..total {
            let mut rem = flat;
            let mut x = Vec::with_capacity(d);
            for _ in 0..d {
                let k = (rem % side as usize) as i64 - per_axis;
                rem /= side as usize;
                x.push(k as f64 * spacing);
            }
            if norm(&x) < self.radius && self.chart.in_codomain(&x) {
                out.push(self.chart.inverse_unchecked(&x));
            }
        }
        out
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if radius > 0.0 && radius.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "ball radius must be positive, got {radius}"
        )))
    }
}

pub fn ball_to_euclidean(b: &BallChart, x: &[f64]) -> Result<CoordinateVector> {
    b.ball_to_euclidean(x)
}

pub fn euclidean_to_ball(b: &BallChart, y: &[f64]) -> Result<CoordinateVector> {
    b.euclidean_to_ball(y)
}

/// Central-difference Jacobian of `f` at `x`; rows index outputs.
pub fn central_jacobian<F>(f: F, x: &[f64], step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let centre = f(x)?;
    let mut jac = DMatrix::zeros(centre.len(), x.len());
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        probe[j] = x[j] + step;
        let plus = f(&probe)?;
        probe[j] = x[j] - step;
        let minus = f(&probe)?;
        probe[j] = x[j];
        for i in 0..centre.len() {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    Ok(jac)
}

/// Outcome of [`verify_transition_smoothness`].
#[derive(Clone, Debug)]
pub struct SmoothnessReport {
    /// Central-difference Jacobian of the transition at each sample.
    pub jacobians: Vec<DMatrix<f64>>,
    /// Largest entrywise Jacobian difference between consecutive samples.
    pub max_jump: f64,
    /// Indices `i` such that the Jacobian jumps between samples `i` and
    /// `i + 1` and the jump survives refinement down to the step scale.
    pub discontinuities: Vec<usize>,
    pub all_finite: bool,
    pub passed: bool,
}

pub fn verify_transition_smoothness(
    a: &Chart,
    b: &Chart,
    samples: &[CoordinateVector],
    step: f64,
) -> Result<SmoothnessReport> {
    verify_transition_smoothness_with_tol(a, b, samples, step, DEFAULT_JUMP_TOL)
}

/// Samples are treated as an ordered path: continuity is judged between
/// neighbours in the list. A jump larger than `tol` is bisected until the
/// two ends are within four steps; a jump that persists at that scale is a
/// discontinuity.
pub fn verify_transition_smoothness_with_tol(
    a: &Chart,
    b: &Chart,
    samples: &[CoordinateVector],
    step: f64,
    tol: f64,
) -> Result<SmoothnessReport> {
    let transition = |x: &[f64]| transition_map(a, b, x).map(CoordinateVector::into_inner);
    let jacobians = samples
        .iter()
        .map(|x| central_jacobian(transition, x, step))
        .collect::<Result<Vec<_>>>()?;
    let all_finite = jacobians.iter().all(|j| j.iter().all(|v| v.is_finite()));

    let mut max_jump: f64 = 0.0;
    let mut discontinuities = Vec::new();
    for i in 0..samples.len().saturating_sub(1) {
        let jump = max_entry_diff(&jacobians[i], &jacobians[i + 1]);
        max_jump = max_jump.max(jump);
        if jump <= tol {
            continue;
        }
        let mut lo = samples[i].clone();
        let mut hi = samples[i + 1].clone();
        let mut j_lo = jacobians[i].clone();
        let mut j_hi = jacobians[i + 1].clone();
        while lo.distance(&hi) > 4.0 * step {
            let mid = lo.add(&hi).scale(0.5);
            let Ok(j_mid) = central_jacobian(transition, &mid, step) else {
                break;
            };
            if max_entry_diff(&j_lo, &j_mid) >= max_entry_diff(&j_mid, &j_hi) {
                hi = mid;
                j_hi = j_mid;
            } else {
                lo = mid;
                j_lo = j_mid;
            }
        }
        if max_entry_diff(&j_lo, &j_hi) > tol {
            discontinuities.push(i);
        }
    }
    let passed = all_finite && discontinuities.is_empty();
    Ok(SmoothnessReport {
        jacobians,
        max_jump,
        discontinuities,
        all_finite,
        passed,
    })
}

fn max_entry_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
