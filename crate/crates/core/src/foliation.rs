//! Regular and singular foliations, and transitive pseudogroups on leaves.
//!
//! Foliated charts order their coordinates as `(transverse, leaf)`: the first
//! `d - n` entries are constant along a plaque and the last `n` move along
//! the leaf. A leaf is given extensionally as a cover of [`BallChart`]s. On
//! each ball the translations of `R^n` are conjugated through the ball chart
//! and the homeomorphism `h`; chaining these maps through waypoints in
//! consecutive ball intersections carries any point of the leaf to any other.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{central_jacobian, transition_map, BallChart, Chart, CoordinateVector, DEFAULT_FD_STEP};
use crate::relatedness::{compose_unchecked, AxiomReport, Pseudogroup, Transformation};

/// Tolerance on the transverse/leaf off-diagonal Jacobian block.
pub const DEFAULT_FOLIATED_TOL: f64 = 1e-6;

/// Tolerance for landing on a target point.
pub const DEFAULT_NAV_TOL: f64 = 1e-9;

/// Lattice resolution used to sample ball intersections.
pub const DEFAULT_BALL_SAMPLES_PER_AXIS: usize = 16;

/// A chart whose coordinates split into `transverse_dim` transverse entries
/// followed by `leaf_dim` leaf entries.
#[derive(Clone, Debug)]
pub struct FoliatedChart {
    chart: Chart,
    leaf_dim: usize,
}

impl FoliatedChart {
    pub fn new(chart: Chart, leaf_dim: usize) -> Result<Self> {
        if leaf_dim > chart.dim() {
            return Err(Error::InvalidArgument(format!(
                "leaf dimension {leaf_dim} exceeds chart dimension {}",
                chart.dim()
            )));
        }
        Ok(Self { chart, leaf_dim })
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn leaf_dim(&self) -> usize {
        self.leaf_dim
    }

    pub fn transverse_dim(&self) -> usize {
        self.chart.dim() - self.leaf_dim
    }

    /// `(transverse, leaf)` coordinates of `p`.
    pub fn leaf_coordinates(&self, p: &[f64]) -> Result<(CoordinateVector, CoordinateVector)> {
        let coords = self.chart.forward(p)?;
        Ok(coords.split_at(self.transverse_dim()))
    }
}

pub fn leaf_coordinates(f: &FoliatedChart, p: &[f64]) -> Result<(CoordinateVector, CoordinateVector)> {
    f.leaf_coordinates(p)
}

/// An atlas of foliated charts sharing `(ambient_dim, leaf_dim)`.
#[derive(Clone, Debug)]
pub struct RegularFoliation {
    charts: Vec<FoliatedChart>,
    ambient_dim: usize,
    leaf_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    /// Largest Frobenius norm of d(transverse out)/d(leaf in).
    pub max_off_block: f64,
    pub samples: usize,
    pub foliated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoliationReport {
    /// `(a, b, report)` for every ordered chart pair with sampled overlap.
    pub pairs: Vec<(usize, usize, BlockReport)>,
    pub worst_off_block: f64,
    pub passed: bool,
}

impl RegularFoliation {
    pub fn new(charts: Vec<FoliatedChart>) -> Result<Self> {
        let first = charts
            .first()
            .ok_or_else(|| Error::InvalidArgument("a foliation needs at least one chart".into()))?;
        let (ambient_dim, leaf_dim) = (first.dim(), first.leaf_dim());
        for c in &charts {
            if c.dim() != ambient_dim {
                return Err(Error::DimensionMismatch {
                    expected: ambient_dim,
                    got: c.dim(),
                });
            }
            if c.leaf_dim() != leaf_dim {
                return Err(Error::DimensionMismatch {
                    expected: leaf_dim,
                    got: c.leaf_dim(),
                });
            }
        }
        Ok(Self {
            charts,
            ambient_dim,
            leaf_dim,
        })
    }

    pub fn charts(&self) -> &[FoliatedChart] {
        &self.charts
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn leaf_dim(&self) -> usize {
        self.leaf_dim
    }

    /// Checks every ordered chart pair on the reference-coordinate samples
    /// that lie in both domains.
    pub fn verify(&self, reference_samples: &[CoordinateVector]) -> Result<FoliationReport> {
        let mut pairs = Vec::new();
        for (i, a) in self.charts.iter().enumerate() {
            for (j, b) in self.charts.iter().enumerate() {
                if i == j {
                    continue;
                }
                let local: Vec<CoordinateVector> = reference_samples
                    .iter()
                    .filter(|p| a.chart().contains(p) && b.chart().contains(p))
                    .map(|p| a.chart().forward_unchecked(p))
                    .collect();
                if local.is_empty() {
                    continue;
                }
                // Stencil points may leave the overlap near its boundary;
                // keep only samples whose whole stencil stays inside.
                let usable: Vec<CoordinateVector> = local
                    .into_iter()
                    .filter(|x| off_block_norm(self, a, b, x).is_ok())
                    .collect();
                if usable.is_empty() {
                    continue;
                }
                pairs.push((i, j, verify_foliated_transition(self, a, b, &usable)?));
            }
        }
        let worst_off_block = pairs.iter().map(|(_, _, r)| r.max_off_block).fold(0.0, f64::max);
        Ok(FoliationReport {
            passed: pairs.iter().all(|(_, _, r)| r.foliated),
            pairs,
            worst_off_block,
        })
    }
}

fn off_block_norm(f: &RegularFoliation, a: &FoliatedChart, b: &FoliatedChart, x: &[f64]) -> Result<f64> {
    let jac = central_jacobian(
        |y| transition_map(a.chart(), b.chart(), y).map(CoordinateVector::into_inner),
        x,
        DEFAULT_FD_STEP,
    )?;
    let split = f.ambient_dim - f.leaf_dim;
    let mut sq = 0.0;
    for r in 0..split {
        for c in split..f.ambient_dim {
            sq += jac[(r, c)] * jac[(r, c)];
        }
    }
    Ok(sq.sqrt())
}

/// Worst off-diagonal block of the transition Jacobian from `a` to `b`,
/// over samples given in the coordinates of `a`.
pub fn verify_foliated_transition(
    f: &RegularFoliation,
    a: &FoliatedChart,
    b: &FoliatedChart,
    samples: &[CoordinateVector],
) -> Result<BlockReport> {
    let mut worst: f64 = 0.0;
    for x in samples {
        worst = worst.max(off_block_norm(f, a, b, x)?);
    }
    Ok(BlockReport {
        max_off_block: worst,
        samples: samples.len(),
        foliated: worst <= DEFAULT_FOLIATED_TOL,
    })
}

/// `x -> x + offsets`: the composite of the standard-frame flows, each
/// coordinate flow run for the matching offset.
pub fn standard_frame_translation(offsets: &[f64]) -> Result<Transformation> {
    if offsets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("translation offsets".into()));
    }
    Ok(Transformation::translation(offsets))
}

/// `phi^-1 ∘ h^-1 ∘ tau ∘ h ∘ phi` at a single point.
pub fn ball_transform_point(b: &BallChart, p: &[f64], offsets: &[f64]) -> Result<CoordinateVector> {
    if !b.chart().contains(p) {
        let x = b.chart().forward_unchecked(p);
        return Err(Error::OutsideBall {
            norm: x.norm(),
            radius: b.radius(),
        });
    }
    let y = b.ball_to_euclidean(&b.chart().forward_unchecked(p))?;
    let moved = b.euclidean_to_ball(&y.add(offsets))?;
    Ok(b.chart().inverse_unchecked(&moved))
}

/// The translation by `offsets` conjugated onto the ball; a diffeomorphism
/// of the ball onto itself.
pub fn ball_transformation(b: &BallChart, offsets: &[f64]) -> Result<Transformation> {
    if offsets.len() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            got: offsets.len(),
        });
    }
    if offsets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ball transformation offsets".into()));
    }
    let (fb, ib, db) = (b.clone(), b.clone(), b.clone());
    let fwd = offsets.to_vec();
    let inv: Vec<f64> = offsets.iter().map(|v| -v).collect();
    Ok(Transformation::new(
        format!("pi{offsets:?}"),
        Arc::new(move |p| db.contains(p)),
        Arc::new(move |p| {
            ball_transform_point(&fb, p, &fwd).map_or_else(|_| vec![f64::NAN; p.len()], |c| c.into_inner())
        }),
        Arc::new(move |p| {
            ball_transform_point(&ib, p, &inv).map_or_else(|_| vec![f64::NAN; p.len()], |c| c.into_inner())
        }),
    ))
}

/// Offsets in `h`-coordinates that carry `p` onto `q` inside one ball.
pub fn offsets_between(b: &BallChart, p: &[f64], q: &[f64]) -> Result<CoordinateVector> {
    let hp = b.ball_to_euclidean(&b.chart().forward(p).map_err(|_| outside(b, p))?)?;
    let hq = b.ball_to_euclidean(&b.chart().forward(q).map_err(|_| outside(b, q))?)?;
    Ok(hq.sub(&hp))
}

fn outside(b: &BallChart, p: &[f64]) -> Error {
    Error::OutsideBall {
        norm: b.chart().forward_unchecked(p).norm(),
        radius: b.radius(),
    }
}

/// Consecutively intersecting balls on a leaf with one waypoint in each
/// intersection.
#[derive(Clone, Debug)]
pub struct LeafChain {
    balls: Vec<BallChart>,
    waypoints: Vec<CoordinateVector>,
}

impl LeafChain {
    pub fn new(balls: Vec<BallChart>, waypoints: Vec<CoordinateVector>) -> Result<Self> {
        if balls.is_empty() {
            return Err(Error::BrokenChain("chain has no balls".into()));
        }
        if waypoints.len() + 1 != balls.len() {
            return Err(Error::BrokenChain(format!(
                "{} balls need {} waypoints, got {}",
                balls.len(),
                balls.len() - 1,
                waypoints.len()
            )));
        }
        for (i, w) in waypoints.iter().enumerate() {
            if !balls[i].contains(w) || !balls[i + 1].contains(w) {
                return Err(Error::BrokenChain(format!(
                    "waypoint {i} is outside the intersection of balls {i} and {}",
                    i + 1
                )));
            }
        }
        Ok(Self { balls, waypoints })
    }

    pub fn balls(&self) -> &[BallChart] {
        &self.balls
    }

    pub fn waypoints(&self) -> &[CoordinateVector] {
        &self.waypoints
    }

    /// Per-ball `h`-coordinate offsets for the trip `p -> w_1 -> ... -> q`.
    pub fn offsets(&self, p: &[f64], q: &[f64]) -> Result<Vec<CoordinateVector>> {
        let mut stops: Vec<&[f64]> = Vec::with_capacity(self.balls.len() + 1);
        stops.push(p);
        stops.extend(self.waypoints.iter().map(|w| w.as_slice()));
        stops.push(q);
        self.balls
            .iter()
            .enumerate()
            .map(|(i, b)| {
                offsets_between(b, stops[i], stops[i + 1])
                    .map_err(|_| Error::BrokenChain(format!("stop {i} or {} is outside ball {i}", i + 1)))
            })
            .collect()
    }
}

/// Composite of ball transformations carrying `p` to `q` along the chain.
pub fn leaf_navigate(chain: &LeafChain, p: &[f64], q: &[f64]) -> Result<Transformation> {
    let offsets = chain.offsets(p, q)?;
    let mut maps = chain.balls.iter().zip(&offsets).map(|(b, o)| ball_transformation(b, o));
    let mut total = maps.next().expect("chain has at least one ball")?;
    for m in maps {
        total = compose_unchecked(&m?, &total);
    }
    Ok(total)
}

/// A ball cover of one leaf with its sampled intersection graph.
#[derive(Clone, Debug)]
pub struct LeafCover {
    balls: Vec<BallChart>,
    samples: Vec<Vec<CoordinateVector>>,
    adjacency: Vec<Vec<usize>>,
}

impl LeafCover {
    pub fn new(balls: Vec<BallChart>) -> Result<Self> {
        Self::with_resolution(balls, DEFAULT_BALL_SAMPLES_PER_AXIS)
    }

    pub fn with_resolution(balls: Vec<BallChart>, per_axis: usize) -> Result<Self> {
        if balls.is_empty() {
            return Err(Error::InvalidArgument("a leaf cover needs at least one ball".into()));
        }
        let dim = balls[0].dim();
        if let Some(b) = balls.iter().find(|b| b.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: b.dim(),
            });
        }
        let samples: Vec<Vec<CoordinateVector>> = balls.iter().map(|b| b.sample_points(per_axis)).collect();
        let adjacency: Vec<Vec<usize>> = (0..balls.len())
            .map(|i| {
                (0..balls.len())
                    .filter(|&j| i != j && !intersection_samples(&balls, &samples, i, j).is_empty())
                    .collect()
            })
            .collect();
        Ok(Self {
            balls,
            samples,
            adjacency,
        })
    }

    pub fn balls(&self) -> &[BallChart] {
        &self.balls
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.balls.iter().any(|b| b.contains(p))
    }

    pub fn sample_points(&self) -> Vec<CoordinateVector> {
        self.samples.iter().flatten().cloned().collect()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.balls.len()];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &self.adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Shortest chain of balls from `p` to `q`: fewest balls, then lowest
    /// ball indices. Waypoints sit at the midpoint of the sampled
    /// intersection, taken in the coordinates of the earlier ball; when
    /// that midpoint falls outside the intersection the nearest sampled
    /// intersection point is used.
    pub fn chain(&self, p: &[f64], q: &[f64]) -> Result<LeafChain> {
        let starts: Vec<usize> = (0..self.balls.len()).filter(|&i| self.balls[i].contains(p)).collect();
        if starts.is_empty() {
            return Err(Error::NotInDomain("leaf cover (start point)".into()));
        }
        if !self.contains(q) {
            return Err(Error::NotInDomain("leaf cover (end point)".into()));
        }
        let mut prev = vec![usize::MAX; self.balls.len()];
        let mut seen = vec![false; self.balls.len()];
        let mut queue = VecDeque::new();
        for &s in &starts {
            seen[s] = true;
            queue.push_back(s);
        }
        let mut end = None;
        while let Some(i) = queue.pop_front() {
            if self.balls[i].contains(q) {
                end = Some(i);
                break;
            }
            for &j in &self.adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    prev[j] = i;
                    queue.push_back(j);
                }
            }
        }
        let end = end.ok_or(Error::DisconnectedCover)?;
        let mut path = vec![end];
        while prev[*path.last().unwrap()] != usize::MAX {
            path.push(prev[*path.last().unwrap()]);
        }
        path.reverse();

        let mut waypoints = Vec::with_capacity(path.len() - 1);
        for w in path.windows(2) {
            waypoints.push(self.waypoint(w[0], w[1])?);
        }
        LeafChain::new(path.iter().map(|&i| self.balls[i].clone()).collect(), waypoints)
    }

    fn waypoint(&self, i: usize, j: usize) -> Result<CoordinateVector> {
        let shared = intersection_samples(&self.balls, &self.samples, i, j);
        if shared.is_empty() {
            return Err(Error::BrokenChain(format!("balls {i} and {j} do not intersect")));
        }
        let chart = self.balls[i].chart();
        let dim = chart.dim();
        let mut mean = vec![0.0; dim];
        for s in &shared {
            for (m, c) in mean.iter_mut().zip(chart.forward_unchecked(s).iter()) {
                *m += c / shared.len() as f64;
            }
        }
        let mid = chart.inverse_unchecked(&mean);
        if mid.is_finite() && self.balls[i].contains(&mid) && self.balls[j].contains(&mid) {
            return Ok(mid);
        }
        Ok(shared
            .into_iter()
            .min_by(|a, b| a.distance(&mid).total_cmp(&b.distance(&mid)))
            .expect("non-empty"))
    }
}

fn intersection_samples(
    balls: &[BallChart],
    samples: &[Vec<CoordinateVector>],
    i: usize,
    j: usize,
) -> Vec<CoordinateVector> {
    samples[i]
        .iter()
        .filter(|s| balls[j].contains(s))
        .chain(samples[j].iter().filter(|s| balls[i].contains(s)))
        .cloned()
        .collect()
}

/// The pseudogroup of ball transformations on a leaf, with navigation as
/// its transport map.
#[derive(Clone)]
pub struct LeafPseudogroup {
    cover: Arc<LeafCover>,
    offsets: Vec<CoordinateVector>,
    pseudogroup: Pseudogroup,
}

impl fmt::Debug for LeafPseudogroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LeafPseudogroup")
            .field("balls", &self.cover.balls.len())
            .field("offsets", &self.offsets)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitivityReport {
    pub pairs: usize,
    pub failures: usize,
    pub worst_endpoint_error: f64,
    pub worst_inverse_error: f64,
    pub passed: bool,
}

/// Leaf pseudogroup with the unit axis offsets of the leaf dimension and
/// closure depth 2.
pub fn leaf_pseudogroup(balls: Vec<BallChart>) -> Result<LeafPseudogroup> {
    let dim = balls.first().map(|b| b.dim()).unwrap_or(0);
    let offsets = (0..dim)
        .map(|k| {
            let mut e = vec![0.0; dim];
            e[k] = 1.0;
            CoordinateVector::from(e)
        })
        .collect();
    LeafPseudogroup::new(balls, offsets, 2)
}

impl LeafPseudogroup {
    /// Generators are the identity on the cover and `pi_{±v}` on every
    /// ball for every offset `v`. Navigation is admitted only when each
    /// per-ball offset lies in the span of `offsets`.
    pub fn new(balls: Vec<BallChart>, offsets: Vec<CoordinateVector>, closure_depth: usize) -> Result<Self> {
        let cover = Arc::new(LeafCover::new(balls)?);
        if !cover.is_connected() {
            return Err(Error::DisconnectedCover);
        }
        let dim = cover.balls[0].dim();
        if let Some(o) = offsets.iter().find(|o| o.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: o.dim(),
            });
        }
        let on_leaf = cover.clone();
        let mut generators = vec![Transformation::identity().restrict(Arc::new(move |p| on_leaf.contains(p)))];
        for b in &cover.balls {
            for o in &offsets {
                generators.push(ball_transformation(b, o)?);
                generators.push(ball_transformation(b, &o.scale(-1.0))?);
            }
        }
        let transport_cover = cover.clone();
        let transport_offsets = offsets.clone();
        let pseudogroup = Pseudogroup::new(generators, closure_depth)?.with_transport(Arc::new(move |p, q| {
            navigate(&transport_cover, &transport_offsets, p, q).ok()
        }));
        Ok(Self {
            cover,
            offsets,
            pseudogroup,
        })
    }

    pub fn pseudogroup(&self) -> &Pseudogroup {
        &self.pseudogroup
    }

    pub fn cover(&self) -> &LeafCover {
        &self.cover
    }

    pub fn navigate(&self, p: &[f64], q: &[f64]) -> Result<Transformation> {
        navigate(&self.cover, &self.offsets, p, q)
    }

    pub fn verify_axioms(&self) -> Result<AxiomReport> {
        crate::relatedness::verify_pseudogroup_axioms(&self.pseudogroup, &self.cover.sample_points())
    }

    pub fn verify_transitivity(&self, pairs: &[(CoordinateVector, CoordinateVector)]) -> TransitivityReport {
        let mut report = TransitivityReport {
            pairs: pairs.len(),
            failures: 0,
            worst_endpoint_error: 0.0,
            worst_inverse_error: 0.0,
            passed: true,
        };
        for (p, q) in pairs {
            let Ok(map) = self.navigate(p, q) else {
                report.failures += 1;
                continue;
            };
            let image = map.apply_unchecked(p);
            let back = map.inverse_unchecked(&image);
            let (e_end, e_inv) = (image.distance(q), back.distance(p));
            report.worst_endpoint_error = report.worst_endpoint_error.max(e_end);
            report.worst_inverse_error = report.worst_inverse_error.max(e_inv);
            if !(e_end <= DEFAULT_NAV_TOL && e_inv <= DEFAULT_NAV_TOL) {
                report.failures += 1;
            }
        }
        report.passed = report.failures == 0;
        report
    }
}

fn navigate(cover: &LeafCover, offsets: &[CoordinateVector], p: &[f64], q: &[f64]) -> Result<Transformation> {
    let chain = cover.chain(p, q)?;
    for step in chain.offsets(p, q)? {
        let residual = span_residual(offsets, &step);
        if residual > DEFAULT_NAV_TOL * step.norm().max(1.0) {
            return Err(Error::NotTransitive(format!("{:?}", step.as_slice())));
        }
    }
    leaf_navigate(&chain, p, q)
}

/// Distance from `v` to the linear span of `basis`.
fn span_residual(basis: &[CoordinateVector], v: &[f64]) -> f64 {
    if basis.is_empty() {
        return crate::geometry::norm(v);
    }
    let a = DMatrix::from_fn(v.len(), basis.len(), |r, c| basis[c][r]);
    let b = DVector::from_column_slice(v);
    let svd = a.clone().svd(true, true);
    match svd.solve(&b, 1e-12) {
        Ok(x) => (&a * x - b).norm(),
        Err(_) => crate::geometry::norm(v),
    }
}

type LeafDimFn = Arc<dyn Fn(&[f64]) -> usize + Send + Sync>;
type DistinguishedChartFn = Arc<dyn Fn(&[f64]) -> FoliatedChart + Send + Sync>;
type MembershipFn = Arc<dyn Fn(&[f64], &[f64]) -> bool + Send + Sync>;

/// A singular foliation known through its leaf dimension, a distinguished
/// chart at every point and a same-leaf test.
#[derive(Clone)]
pub struct SingularFoliationSample {
    ambient_dim: usize,
    leaf_dim_at: LeafDimFn,
    distinguished_chart_at: DistinguishedChartFn,
    leaf_membership: MembershipFn,
}

impl fmt::Debug for SingularFoliationSample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SingularFoliationSample")
            .field("ambient_dim", &self.ambient_dim)
            .finish_non_exhaustive()
    }
}

impl SingularFoliationSample {
    pub fn new(
        ambient_dim: usize,
        leaf_dim_at: LeafDimFn,
        distinguished_chart_at: DistinguishedChartFn,
        leaf_membership: MembershipFn,
    ) -> Self {
        Self {
            ambient_dim,
            leaf_dim_at,
            distinguished_chart_at,
            leaf_membership,
        }
    }

    /// Circles about the origin plus the origin itself: the orbits of the
    /// rotation group. Away from the origin the distinguished chart is
    /// `(|p| - |x|, angle(p) - angle(x))`; at the origin it is the identity
    /// with an empty leaf block.
    pub fn concentric_circles() -> Self {
        Self::new(
            2,
            Arc::new(|x| usize::from(x[0] != 0.0 || x[1] != 0.0)),
            Arc::new(polar_chart_at),
            Arc::new(|a, b| (a[0].hypot(a[1]) - b[0].hypot(b[1])).abs() <= DEFAULT_NAV_TOL),
        )
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn leaf_dim_at(&self, x: &[f64]) -> usize {
        (self.leaf_dim_at)(x)
    }

    pub fn distinguished_chart_at(&self, x: &[f64]) -> FoliatedChart {
        (self.distinguished_chart_at)(x)
    }

    pub fn same_leaf(&self, a: &[f64], b: &[f64]) -> bool {
        (self.leaf_membership)(a, b)
    }
}

fn polar_chart_at(x: &[f64]) -> FoliatedChart {
    let r0 = x[0].hypot(x[1]);
    if r0 == 0.0 {
        return FoliatedChart::new(Chart::identity(2), 0).expect("leaf dim 0");
    }
    let a0 = x[1].atan2(x[0]);
    let wrap = move |a: f64| {
        let mut d = (a - a0) % std::f64::consts::TAU;
        if d > std::f64::consts::PI {
            d -= std::f64::consts::TAU;
        } else if d <= -std::f64::consts::PI {
            d += std::f64::consts::TAU;
        }
        d
    };
    let chart = Chart::new(
        2,
        Arc::new(move |p| {
            p.len() == 2 && (p[0] != 0.0 || p[1] != 0.0) && wrap(p[1].atan2(p[0])).abs() < std::f64::consts::PI - 1e-9
        }),
        Arc::new(move |c| c[0] > -r0 && c[1].abs() < std::f64::consts::PI - 1e-9),
        Arc::new(move |p| vec![p[0].hypot(p[1]) - r0, wrap(p[1].atan2(p[0]))]),
        Arc::new(move |c| {
            let (r, a) = (r0 + c[0], a0 + c[1]);
            vec![r * a.cos(), r * a.sin()]
        }),
    );
    FoliatedChart::new(chart, 1).expect("leaf dim 1")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingularChartReport {
    pub leaf_dim: usize,
    pub chart_leaf_dim: usize,
    /// `|phi(x)|`; zero for a chart centered at `x`.
    pub centered_residual: f64,
    pub centered: bool,
    pub leaf_mates: usize,
    pub non_mates: usize,
    /// Samples whose leaf membership disagrees with lying on the slice
    /// through `x`.
    pub slice_violations: Vec<usize>,
    pub passed: bool,
}

/// Checks that the distinguished chart at `x` sends `x` to the origin and
/// that, among samples in its domain, exactly the leaf-mates of `x` lie on
/// the slice `{w} × U_2` through `x`.
pub fn verify_singular_distinguished_chart(
    s: &SingularFoliationSample,
    x: &[f64],
    samples: &[CoordinateVector],
) -> SingularChartReport {
    verify_distinguished_chart(s, &s.distinguished_chart_at(x), x, samples)
}

/// Same as [`verify_singular_distinguished_chart`] with a caller-supplied
/// chart in place of the built-in one.
pub fn verify_distinguished_chart(
    s: &SingularFoliationSample,
    chart: &FoliatedChart,
    x: &[f64],
    samples: &[CoordinateVector],
) -> SingularChartReport {
    let leaf_dim = s.leaf_dim_at(x);
    let (centered_residual, slice) = match chart.leaf_coordinates(x) {
        Ok((w, l)) => (w.concat(&l).norm(), Some(w)),
        Err(_) => (f64::INFINITY, None),
    };
    let centered = centered_residual <= DEFAULT_NAV_TOL;
    let mut report = SingularChartReport {
        leaf_dim,
        chart_leaf_dim: chart.leaf_dim(),
        centered_residual,
        centered,
        leaf_mates: 0,
        non_mates: 0,
        slice_violations: Vec::new(),
        passed: false,
    };
    if let Some(w) = slice {
        for (i, p) in samples.iter().enumerate() {
            let Ok((t, _)) = chart.leaf_coordinates(p) else {
                continue;
            };
            let mate = s.same_leaf(x, p);
            if mate {
                report.leaf_mates += 1;
            } else {
                report.non_mates += 1;
            }
            let on_slice = t.distance(&w) <= DEFAULT_NAV_TOL;
            if mate != on_slice {
                report.slice_violations.push(i);
            }
        }
    }
    report.passed = centered && leaf_dim == chart.leaf_dim() && report.slice_violations.is_empty();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relatedness::verify_pseudogroup_axioms;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> CoordinateVector {
        CoordinateVector::from(x)
    }

    /// Horizontal-line foliation of the plane: transverse = y, leaf = x.
    fn horizontal_chart() -> FoliatedChart {
        let chart = Chart::new(
            2,
            Arc::new(|p| p.len() == 2),
            Arc::new(|c| c.len() == 2),
            Arc::new(|p| vec![p[1], p[0]]),
            Arc::new(|c| vec![c[1], c[0]]),
        );
        FoliatedChart::new(chart, 1).unwrap()
    }

    fn transition_chart(
        fwd: fn(&[f64]) -> Vec<f64>,
        inv: fn(&[f64]) -> Vec<f64>,
        dom: fn(&[f64]) -> bool,
    ) -> FoliatedChart {
        let chart = Chart::new(
            2,
            Arc::new(dom),
            Arc::new(|c| c.len() == 2),
            Arc::new(fwd),
            Arc::new(inv),
        );
        FoliatedChart::new(chart, 1).unwrap()
    }

    fn overlap_samples() -> Vec<CoordinateVector> {
        (0..100)
            .map(|i| v(&[0.5 + 0.01 * i as f64, -1.0 + 0.02 * i as f64]))
            .collect()
    }

    #[test]
    fn leaf_coordinates_split() {
        let (t, l) = horizontal_chart().leaf_coordinates(&[3.0, 5.0]).unwrap();
        assert_eq!(t.as_slice(), &[5.0]);
        assert_eq!(l.as_slice(), &[3.0]);

        let single = FoliatedChart::new(Chart::identity(2), 2).unwrap();
        let (t, l) = single.leaf_coordinates(&[1.0, 2.0]).unwrap();
        assert_eq!(t.dim(), 0);
        assert_eq!(l.as_slice(), &[1.0, 2.0]);

        let points = FoliatedChart::new(Chart::identity(2), 0).unwrap();
        let (t, l) = points.leaf_coordinates(&[1.0, 2.0]).unwrap();
        assert_eq!(t.as_slice(), &[1.0, 2.0]);
        assert_eq!(l.dim(), 0);

        assert!(FoliatedChart::new(Chart::identity(2), 3).is_err());
        let ball = BallChart::euclidean(v(&[0.0, 0.0]), 1.0).unwrap();
        let local = FoliatedChart::new(ball.chart().clone(), 1).unwrap();
        assert_eq!(local.leaf_coordinates(&[2.0, 0.0]).unwrap_err(), Error::OutsideDomain);
    }

    #[test]
    fn foliated_transition_detector() {
        let id = FoliatedChart::new(Chart::identity(2), 1).unwrap();
        let fol = RegularFoliation::new(vec![id.clone()]).unwrap();
        let good = transition_chart(
            |p| vec![p[0] + 1.0, p[0] * p[1]],
            |c| vec![c[0] - 1.0, c[1] / (c[0] - 1.0)],
            |p| p.len() == 2 && p[0] > 0.1,
        );
        let r = verify_foliated_transition(&fol, &id, &good, &overlap_samples()).unwrap();
        assert!(r.foliated && r.max_off_block <= 1e-6, "{r:?}");

        let bad = transition_chart(
            |p| vec![p[0] + p[1], p[1]],
            |c| vec![c[0] - c[1], c[1]],
            |p| p.len() == 2,
        );
        let r = verify_foliated_transition(&fol, &id, &bad, &overlap_samples()).unwrap();
        assert!(!r.foliated);
        assert!((r.max_off_block - 1.0).abs() < 1e-6);

        let r = verify_foliated_transition(&fol, &id, &id, &overlap_samples()).unwrap();
        assert_eq!(r.max_off_block, 0.0);

        let far = vec![v(&[-3.0, 0.0])];
        assert_eq!(
            verify_foliated_transition(&fol, &id, &good, &far).unwrap_err(),
            Error::OutsideOverlap
        );
    }

    #[test]
    fn regular_foliation_verify_pairs() {
        let id = FoliatedChart::new(Chart::identity(2), 1).unwrap();
        let good = transition_chart(
            |p| vec![p[0] + 1.0, p[0] * p[1]],
            |c| vec![c[0] - 1.0, c[1] / (c[0] - 1.0)],
            |p| p.len() == 2 && p[0] > 0.1,
        );
        let fol = RegularFoliation::new(vec![id, good]).unwrap();
        let report = fol.verify(&overlap_samples()).unwrap();
        assert_eq!(report.pairs.len(), 2);
        assert!(report.passed, "{report:?}");
        assert!(RegularFoliation::new(vec![
            FoliatedChart::new(Chart::identity(2), 1).unwrap(),
            FoliatedChart::new(Chart::identity(2), 2).unwrap()
        ])
        .is_err());
    }

    #[test]
    fn standard_frame_translations() {
        let zero = standard_frame_translation(&[0.0, 0.0]).unwrap();
        assert_eq!(zero.apply(&[0.3, 0.4]).unwrap().as_slice(), &[0.3, 0.4]);
        let t = standard_frame_translation(&[1.0, 2.0]).unwrap();
        assert_eq!(t.apply(&[0.0, 0.0]).unwrap().as_slice(), &[1.0, 2.0]);
        let a = standard_frame_translation(&[0.5, -1.0]).unwrap();
        let b = standard_frame_translation(&[2.0, 0.25]).unwrap();
        let ab = compose_unchecked(&a, &b);
        let sum = standard_frame_translation(&[2.5, -0.75]).unwrap();
        for x in [[0.0, 0.0], [1.0, -3.0], [7.5, 2.0]] {
            assert!(ab.apply(&x).unwrap().distance(&sum.apply(&x).unwrap()) < 1e-12);
        }
        assert!(standard_frame_translation(&[f64::NAN]).is_err());
    }

    #[test]
    fn ball_transformation_properties() {
        let ball = BallChart::euclidean(v(&[0.0]), 1.0).unwrap();
        let id = ball_transformation(&ball, &[0.0]).unwrap();
        assert_eq!(id.apply(&[0.3]).unwrap().as_slice(), &[0.3]);

        let (p, q) = ([-0.4], [0.7]);
        let offsets = offsets_between(&ball, &p, &q).unwrap();
        let pi = ball_transformation(&ball, &offsets).unwrap();
        assert!(pi.apply(&p).unwrap().distance(&q) <= 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ball2 = BallChart::euclidean(v(&[1.0, -1.0]), 0.8).unwrap();
        for _ in 0..1000 {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r: f64 = rng.random_range(0.0..0.8);
            let p = [1.0 + r * angle.cos(), -1.0 + r * angle.sin()];
            let o = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let image = ball_transform_point(&ball2, &p, &o).unwrap();
            assert!(image.distance(&[1.0, -1.0]) < 0.8);
        }
        assert!(matches!(
            ball_transform_point(&ball, &[1.5], &[0.0]),
            Err(Error::OutsideBall { .. })
        ));
        assert!(ball_transformation(&ball, &[0.0, 0.0]).is_err());
    }

    fn segment_balls() -> Vec<BallChart> {
        [0.0, 1.5, 3.0]
            .iter()
            .map(|&c| BallChart::euclidean(v(&[c]), 1.0).unwrap())
            .collect()
    }

    #[test]
    fn single_ball_chain_identity() {
        let ball = BallChart::euclidean(v(&[0.0]), 1.0).unwrap();
        let chain = LeafChain::new(vec![ball], vec![]).unwrap();
        let map = leaf_navigate(&chain, &[0.2], &[0.2]).unwrap();
        for x in [-0.9, -0.1, 0.2, 0.8] {
            assert!(map.apply(&[x]).unwrap().distance(&[x]) < 1e-12);
        }
    }

    #[test]
    fn two_ball_navigation() {
        let a = BallChart::euclidean(v(&[0.0]), 1.0).unwrap();
        let b = BallChart::euclidean(v(&[1.5]), 1.0).unwrap();
        let chain = LeafChain::new(vec![a, b], vec![v(&[0.75])]).unwrap();
        let (p, q) = ([-0.6], [2.2]);
        let map = leaf_navigate(&chain, &p, &q).unwrap();
        let image = map.apply(&p).unwrap();
        assert!(image.distance(&q) <= 1e-9);
        assert!(map.inverse_unchecked(&image).distance(&p) <= 1e-9);
    }

    #[test]
    fn broken_chain_is_rejected() {
        let a = BallChart::euclidean(v(&[0.0]), 1.0).unwrap();
        let b = BallChart::euclidean(v(&[1.5]), 1.0).unwrap();
        assert!(matches!(
            LeafChain::new(vec![a.clone(), b.clone()], vec![v(&[0.2])]),
            Err(Error::BrokenChain(_))
        ));
        assert!(matches!(LeafChain::new(vec![a, b], vec![]), Err(Error::BrokenChain(_))));
    }

    #[test]
    fn chain_search_prefers_fewest_balls() {
        let cover = LeafCover::new(segment_balls()).unwrap();
        assert!(cover.is_connected());
        let chain = cover.chain(&[-0.5], &[3.5]).unwrap();
        assert_eq!(chain.balls().len(), 3);
        let chain = cover.chain(&[0.2], &[0.3]).unwrap();
        assert_eq!(chain.balls().len(), 1);
        let chain = cover.chain(&[-0.5], &[2.0]).unwrap();
        let w = &chain.waypoints()[0];
        assert!((w[0] - 0.75).abs() < 0.1);
    }

    #[test]
    fn endpoint_is_chain_independent() {
        let balls = segment_balls();
        let (p, q) = ([-0.3], [3.4]);
        let c1 = LeafChain::new(balls.clone(), vec![v(&[0.6]), v(&[2.1])]).unwrap();
        let c2 = LeafChain::new(balls, vec![v(&[0.9]), v(&[2.4])]).unwrap();
        let i1 = leaf_navigate(&c1, &p, &q).unwrap().apply(&p).unwrap();
        let i2 = leaf_navigate(&c2, &p, &q).unwrap().apply(&p).unwrap();
        assert!(i1.distance(&q) <= 1e-6 && i2.distance(&q) <= 1e-6);
    }

    #[test]
    fn leaf_pseudogroup_is_transitive_and_a_pseudogroup() {
        let lp = leaf_pseudogroup(segment_balls()).unwrap();
        let report = lp.verify_axioms().unwrap();
        assert!(report.all_passed(), "{report:#?}");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<_> = (0..50)
            .map(|_| (v(&[rng.random_range(-0.99..3.99)]), v(&[rng.random_range(-0.99..3.99)])))
            .collect();
        let t = lp.verify_transitivity(&pairs);
        assert!(t.passed, "{t:?}");
    }

    #[test]
    fn single_ball_leaf_pseudogroup() {
        let lp = leaf_pseudogroup(vec![BallChart::euclidean(v(&[0.0, 0.0]), 1.0).unwrap()]).unwrap();
        let pairs = vec![(v(&[0.1, 0.2]), v(&[-0.5, 0.3])), (v(&[0.0, -0.9]), v(&[0.6, 0.6]))];
        assert!(lp.verify_transitivity(&pairs).passed);
    }

    #[test]
    fn empty_offsets_are_not_transitive() {
        let lp = LeafPseudogroup::new(segment_balls(), vec![], 2).unwrap();
        let t = lp.verify_transitivity(&[(v(&[0.0]), v(&[2.0]))]);
        assert!(!t.passed);
        assert!(matches!(lp.navigate(&[0.0], &[2.0]), Err(Error::NotTransitive(_))));
    }

    #[test]
    fn disconnected_cover_is_rejected() {
        let balls = vec![
            BallChart::euclidean(v(&[0.0]), 1.0).unwrap(),
            BallChart::euclidean(v(&[5.0]), 1.0).unwrap(),
        ];
        assert_eq!(leaf_pseudogroup(balls).unwrap_err(), Error::DisconnectedCover);
    }

    #[test]
    fn leaf_pseudogroup_on_a_circle_arc() {
        // 1-D leaf: the unit circle, charted by angle about three centres.
        let arc_ball = |centre: f64| {
            let chart = Chart::new(
                1,
                Arc::new(|p: &[f64]| p.len() == 2 && ((p[0].hypot(p[1])) - 1.0).abs() < 1e-9),
                Arc::new(|c: &[f64]| c.len() == 1),
                Arc::new(move |p: &[f64]| vec![p[1].atan2(p[0]) - centre]),
                Arc::new(move |c: &[f64]| vec![(c[0] + centre).cos(), (c[0] + centre).sin()]),
            );
            BallChart::from_chart(chart, 0.8).unwrap()
        };
        let lp = leaf_pseudogroup(vec![arc_ball(0.0), arc_ball(1.0), arc_ball(2.0)]).unwrap();
        let p = v(&[(-0.5f64).cos(), (-0.5f64).sin()]);
        let q = v(&[2.5f64.cos(), 2.5f64.sin()]);
        let t = lp.verify_transitivity(&[(p, q)]);
        assert!(t.passed, "{t:?}");
    }

    #[test]
    fn concentric_circle_distinguished_charts() {
        let s = SingularFoliationSample::concentric_circles();
        let mut samples = Vec::new();
        for r in [0.5, 1.0, 1.5] {
            for k in 0..12 {
                let a = -1.2 + 0.2 * k as f64;
                samples.push(v(&[r * a.cos(), r * a.sin()]));
            }
        }
        let at_one = verify_singular_distinguished_chart(&s, &[1.0, 0.0], &samples);
        assert!(at_one.passed, "{at_one:?}");
        assert_eq!(at_one.leaf_dim, 1);
        assert_eq!(at_one.leaf_mates, 12);

        samples.push(v(&[0.0, 0.0]));
        let at_origin = verify_singular_distinguished_chart(&s, &[0.0, 0.0], &samples);
        assert!(at_origin.passed, "{at_origin:?}");
        assert_eq!(at_origin.leaf_dim, 0);
        assert_eq!(at_origin.leaf_mates, 1);
    }

    #[test]
    fn off_centre_chart_fails() {
        let s = SingularFoliationSample::concentric_circles();
        let shifted = polar_chart_at(&[1.0, 0.3]);
        let report = verify_distinguished_chart(&s, &shifted, &[1.0, 0.0], &[v(&[0.0, 1.0])]);
        assert!(!report.centered);
        assert!(!report.passed);
    }

    #[test]
    fn leaf_dimension_constant_on_rotation_orbits() {
        let s = SingularFoliationSample::concentric_circles();
        let p = crate::relatedness::rotations(12).unwrap();
        for start in [[0.5, 0.0], [1.0, 1.0], [0.0, 0.0]] {
            let orbit = if start == [0.0, 0.0] {
                vec![v(&start)]
            } else {
                p.orbit(&start, 50).unwrap()
            };
            let d0 = s.leaf_dim_at(&start);
            assert!(orbit.iter().all(|q| s.leaf_dim_at(q) == d0));
        }
    }

    #[test]
    fn translation_pseudogroup_axioms_on_leaf_samples() {
        let cover = LeafCover::new(segment_balls()).unwrap();
        let p = crate::relatedness::translations(1, 2).unwrap();
        assert!(verify_pseudogroup_axioms(&p, &cover.sample_points())
            .unwrap()
            .all_passed());
    }
}
