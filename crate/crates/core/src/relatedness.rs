//! Transformations, pseudogroups and the orbit structure they induce.
//!
//! A pseudogroup is represented by a finite generator set and a closure
//! depth: only compositions of at most `closure_depth` generators are ever
//! materialized. Every axiom is checked on a finite sample set, so a passing
//! report means that no counterexample was found at that resolution.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{distance, CoordinateVector, PointMap, Predicate};

/// Default tolerance for pointwise identities between transformations.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Orbit enumeration budget used when a pseudogroup has no transport map.
pub const DEFAULT_ORBIT_BUDGET: usize = 256;

/// Given two points, returns an element carrying the first onto the second
/// when one exists.
pub type Transport = Arc<dyn Fn(&[f64], &[f64]) -> Option<Transformation> + Send + Sync>;

pub type DistanceFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// A partially defined invertible map of `R^d`.
#[derive(Clone)]
pub struct Transformation {
    label: String,
    domain: Predicate,
    forward: PointMap,
    inverse: PointMap,
}

impl fmt::Debug for Transformation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Transformation")
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

impl Transformation {
    pub fn new(label: impl Into<String>, domain: Predicate, forward: PointMap, inverse: PointMap) -> Self {
        Self {
            label: label.into(),
            domain,
            forward,
            inverse,
        }
    }

    /// A transformation defined everywhere.
    pub fn global(label: impl Into<String>, forward: PointMap, inverse: PointMap) -> Self {
        Self::new(label, Arc::new(|_| true), forward, inverse)
    }

    pub fn identity() -> Self {
        Self::global("id", Arc::new(|x| x.to_vec()), Arc::new(|x| x.to_vec()))
    }

    pub fn translation(offset: &[f64]) -> Self {
        let fwd = offset.to_vec();
        let inv = offset.to_vec();
        Self::global(
            format!("translate{offset:?}"),
            Arc::new(move |x| x.iter().zip(&fwd).map(|(a, b)| a + b).collect()),
            Arc::new(move |x| x.iter().zip(&inv).map(|(a, b)| a - b).collect()),
        )
    }

    /// Rotation of the plane about the origin.
    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::global(
            format!("rotate({angle})"),
            Arc::new(move |x| vec![c * x[0] - s * x[1], s * x[0] + c * x[1]]),
            Arc::new(move |x| vec![c * x[0] + s * x[1], -s * x[0] + c * x[1]]),
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (self.domain)(x)
    }

    pub fn apply(&self, x: &[f64]) -> Result<CoordinateVector> {
        if !self.contains(x) {
            return Err(Error::NotInDomain(self.label.clone()));
        }
        Ok(self.apply_unchecked(x))
    }

    pub fn apply_unchecked(&self, x: &[f64]) -> CoordinateVector {
        (self.forward)(x).into()
    }

    /// Applies the inverse map. `y` is expected to lie in the image of the
    /// domain; this is verified by mapping back.
    pub fn apply_inverse(&self, y: &[f64]) -> Result<CoordinateVector> {
        let x = (self.inverse)(y);
        if !self.contains(&x) {
            return Err(Error::NotInDomain(format!("inverse of {}", self.label)));
        }
        Ok(x.into())
    }

    pub fn inverse_unchecked(&self, y: &[f64]) -> CoordinateVector {
        (self.inverse)(y).into()
    }

    /// The inverse transformation, defined on the image of this one.
    pub fn inverted(&self) -> Transformation {
        let domain = self.domain.clone();
        let inverse = self.inverse.clone();
        Transformation {
            label: format!("{}^-1", self.label),
            domain: Arc::new(move |y| domain(&inverse(y))),
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
        }
    }

    pub fn restrict(&self, pred: Predicate) -> Transformation {
        let domain = self.domain.clone();
        Transformation {
            label: format!("{}|U", self.label),
            domain: Arc::new(move |x| domain(x) && pred(x)),
            forward: self.forward.clone(),
            inverse: self.inverse.clone(),
        }
    }

    /// Glues transformations defined on the pieces of a cover. On overlaps
    /// the first piece in the list wins; consistency is the caller's to check.
    pub fn patch(label: impl Into<String>, pieces: Vec<Transformation>) -> Transformation {
        let pieces = Arc::new(pieces);
        let (dom, fwd, inv) = (pieces.clone(), pieces.clone(), pieces);
        Transformation::new(
            label,
            Arc::new(move |x| dom.iter().any(|p| p.contains(x))),
            Arc::new(move |x| match fwd.iter().find(|p| p.contains(x)) {
                Some(p) => (p.forward)(x),
                None => vec![f64::NAN; x.len()],
            }),
            Arc::new(move |y| {
                inv.iter()
                    .map(|p| (p.inverse)(y))
                    .find(|x| inv.iter().any(|p| p.contains(x)))
                    .unwrap_or_else(|| vec![f64::NAN; y.len()])
            }),
        )
    }

    /// Worst `|inverse(forward(x)) - x|` over samples in the domain.
    pub fn inverse_error(&self, samples: &[CoordinateVector]) -> f64 {
        samples
            .iter()
            .filter(|x| self.contains(x))
            .map(|x| distance(&(self.inverse)(&(self.forward)(x)), x))
            .fold(0.0, f64::max)
    }
}

/// `g ∘ f` without any sample check.
pub fn compose_unchecked(g: &Transformation, f: &Transformation) -> Transformation {
    let (f_dom, f_fwd, g_dom) = (f.domain.clone(), f.forward.clone(), g.domain.clone());
    let (g_fwd, f_fwd2) = (g.forward.clone(), f.forward.clone());
    let (f_inv, g_inv) = (f.inverse.clone(), g.inverse.clone());
    Transformation {
        label: format!("{}∘{}", g.label, f.label),
        domain: Arc::new(move |x| f_dom(x) && g_dom(&f_fwd(x))),
        forward: Arc::new(move |x| g_fwd(&f_fwd2(x))),
        inverse: Arc::new(move |y| f_inv(&g_inv(y))),
    }
}

/// `g ∘ f` on the points of `f`'s domain that `f` sends into `g`'s domain.
/// Fails when none of `samples` survives both domains.
pub fn compose(g: &Transformation, f: &Transformation, samples: &[CoordinateVector]) -> Result<Transformation> {
    let composed = compose_unchecked(g, f);
    if samples.iter().any(|x| composed.contains(x)) {
        Ok(composed)
    } else {
        Err(Error::EmptyOverlap)
    }
}

/// A materialized pseudogroup element: the composition of generators in
/// `word`, applied left to right.
#[derive(Clone, Debug)]
pub struct Element {
    pub word: Vec<usize>,
    pub map: Transformation,
}

/// A pseudogroup given by generators and a finite closure depth.
#[derive(Clone)]
pub struct Pseudogroup {
    generators: Vec<Transformation>,
    closure_depth: usize,
    transport: Option<Transport>,
}

impl fmt::Debug for Pseudogroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pseudogroup")
            .field(
                "generators",
                &self.generators.iter().map(|g| g.label()).collect::<Vec<_>>(),
            )
            .field("closure_depth", &self.closure_depth)
            .field("transport", &self.transport.is_some())
            .finish()
    }
}

impl Pseudogroup {
    pub fn new(generators: Vec<Transformation>, closure_depth: usize) -> Result<Self> {
        if closure_depth == 0 {
            return Err(Error::InvalidArgument("closure depth must be positive".into()));
        }
        Ok(Self {
            generators,
            closure_depth,
            transport: None,
        })
    }

    /// Generators together with the identity and the inverse of each
    /// generator, in the order `[id, g_0, g_0^-1, g_1, g_1^-1, ...]`.
    pub fn symmetric(generators: Vec<Transformation>, closure_depth: usize) -> Result<Self> {
        let mut all = vec![Transformation::identity()];
        for g in generators {
            let inv = g.inverted();
            all.push(g);
            all.push(inv);
        }
        Self::new(all, closure_depth)
    }

    /// Attaches a map that produces an element connecting two points. Used
    /// for continuous pseudogroups whose orbits cannot be reached by
    /// enumerating finitely many generator words.
    pub fn with_transport(mut self, transport: Transport) -> Self {
        self.transport = Some(transport);
        self
    }

    pub fn generators(&self) -> &[Transformation] {
        &self.generators
    }

    pub fn closure_depth(&self) -> usize {
        self.closure_depth
    }

    pub fn transport(&self, x: &[f64], y: &[f64]) -> Option<Transformation> {
        self.transport.as_ref().and_then(|t| t(x, y))
    }

    /// All words of length `1..=closure_depth`, shortest first and
    /// lexicographic within a length.
    pub fn elements(&self) -> Vec<Element> {
        let mut out: Vec<Element> = self
            .generators
            .iter()
            .enumerate()
            .map(|(i, g)| Element {
                word: vec![i],
                map: g.clone(),
            })
            .collect();
        let mut layer_start = 0;
        for _ in 1..self.closure_depth {
            let layer_end = out.len();
            for e in layer_start..layer_end {
                for (i, g) in self.generators.iter().enumerate() {
                    let mut word = out[e].word.clone();
                    word.push(i);
                    let map = compose_unchecked(g, &out[e].map);
                    out.push(Element { word, map });
                }
            }
            layer_start = layer_end;
        }
        out
    }

    /// Breadth-first closure of `x` under the generators and their inverses,
    /// stopping after `budget` distinct points. Points closer than
    /// [`DEFAULT_TOL`] are identified. Letters are tried in the order
    /// `g_0, g_0^-1, g_1, g_1^-1, ...`.
    pub fn orbit(&self, x: &[f64], budget: usize) -> Result<Vec<CoordinateVector>> {
        if !self.generators.iter().any(|g| g.contains(x)) {
            return Err(Error::NotInDomain(format!("{self:?}")));
        }
        let mut found = vec![CoordinateVector::from(x)];
        let mut queue = VecDeque::from([CoordinateVector::from(x)]);
        while let Some(p) = queue.pop_front() {
            if found.len() >= budget {
                break;
            }
            for g in &self.generators {
                let mut images = Vec::with_capacity(2);
                if g.contains(&p) {
                    images.push(g.apply_unchecked(&p));
                }
                if let Ok(q) = g.apply_inverse(&p) {
                    images.push(q);
                }
                for q in images {
                    if found.len() >= budget {
                        break;
                    }
                    if q.is_finite() && !found.iter().any(|f| f.distance(&q) <= DEFAULT_TOL) {
                        found.push(q.clone());
                        queue.push_back(q);
                    }
                }
            }
        }
        Ok(found)
    }

    /// Whether `y` is reachable from `x`: through the transport map when
    /// present, otherwise by orbit enumeration.
    pub fn relates(&self, x: &[f64], y: &[f64], tol: f64) -> bool {
        if let Some(transport) = &self.transport {
            return match transport(x, y) {
                Some(t) => t.contains(x) && t.apply_unchecked(x).distance(y) <= tol,
                None => false,
            };
        }
        match self.orbit(x, DEFAULT_ORBIT_BUDGET) {
            Ok(points) => points.iter().any(|p| p.distance(y) <= tol),
            Err(_) => false,
        }
    }
}

pub fn orbit(p: &Pseudogroup, x: &[f64], budget: usize) -> Result<Vec<CoordinateVector>> {
    p.orbit(x, budget)
}

/// Result of checking one pseudogroup axiom.
#[derive(Clone, Debug, PartialEq)]
pub struct AxiomOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub checks: usize,
    pub failures: usize,
    pub worst_residual: f64,
}

impl AxiomOutcome {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            passed: true,
            checks: 0,
            failures: 0,
            worst_residual: 0.0,
        }
    }

    fn record(&mut self, residual: f64, ok: bool) {
        self.checks += 1;
        if residual.is_nan() {
            self.worst_residual = f64::INFINITY;
        } else {
            self.worst_residual = self.worst_residual.max(residual);
        }
        if !ok {
            self.failures += 1;
            self.passed = false;
        }
    }

    fn fail(&mut self) {
        self.failures += 1;
        self.passed = false;
    }
}

/// The five pseudogroup conditions: restriction, patching, composition,
/// identity and inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct AxiomReport {
    pub restriction: AxiomOutcome,
    pub patching: AxiomOutcome,
    pub composition: AxiomOutcome,
    pub identity: AxiomOutcome,
    pub inverse: AxiomOutcome,
}

impl AxiomReport {
    pub fn outcomes(&self) -> [&AxiomOutcome; 5] {
        [
            &self.restriction,
            &self.patching,
            &self.composition,
            &self.identity,
            &self.inverse,
        ]
    }

    pub fn all_passed(&self) -> bool {
        self.outcomes().iter().all(|o| o.passed)
    }

    pub fn total_checks(&self) -> usize {
        self.outcomes().iter().map(|o| o.checks).sum()
    }

    pub fn total_failures(&self) -> usize {
        self.outcomes().iter().map(|o| o.failures).sum()
    }
}

pub fn verify_pseudogroup_axioms(p: &Pseudogroup, samples: &[CoordinateVector]) -> Result<AxiomReport> {
    verify_pseudogroup_axioms_with_tol(p, samples, DEFAULT_TOL)
}

pub fn verify_pseudogroup_axioms_with_tol(
    p: &Pseudogroup,
    samples: &[CoordinateVector],
    tol: f64,
) -> Result<AxiomReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("axiom checks need at least one sample".into()));
    }
    let elements = p.elements();
    let spread = sample_spread(samples);
    let within = |a: &CoordinateVector, b: &CoordinateVector| a.is_finite() && a.distance(b) <= tol;

    // (a) restriction to open balls around a few samples.
    let mut restriction = AxiomOutcome::new("restriction");
    let centres: Vec<CoordinateVector> = samples
        .iter()
        .step_by((samples.len() / 4).max(1))
        .take(4)
        .cloned()
        .collect();
    for e in &elements {
        for c in &centres {
            let radius = 0.5 * spread;
            let cc = c.clone();
            let u: Predicate = Arc::new(move |x| distance(x, &cc) < radius);
            let r = e.map.restrict(u.clone());
            for x in samples {
                let expect = e.map.contains(x) && u(x);
                if r.contains(x) != expect {
                    restriction.record(f64::INFINITY, false);
                } else if expect {
                    let d = r.apply_unchecked(x).distance(&e.map.apply_unchecked(x));
                    restriction.record(d, d <= tol);
                }
            }
        }
    }

    // (b) patching: split each element's sampled domain in two overlapping
    // halves along the first axis and glue the restrictions back together.
    let mut patching = AxiomOutcome::new("patching");
    for e in &elements {
        let dom: Vec<&CoordinateVector> = samples.iter().filter(|x| e.map.contains(x)).collect();
        if dom.len() < 2 || dom[0].dim() == 0 {
            continue;
        }
        let mut firsts: Vec<f64> = dom.iter().map(|x| x[0]).collect();
        firsts.sort_by(f64::total_cmp);
        let median = firsts[firsts.len() / 2];
        let margin = 0.1 * spread + f64::EPSILON;
        let lower = e.map.restrict(Arc::new(move |x| x[0] <= median + margin));
        let upper = e.map.restrict(Arc::new(move |x| x[0] >= median - margin));
        let patched = Transformation::patch("patched", vec![lower.clone(), upper.clone()]);
        for x in samples {
            if patched.contains(x) != e.map.contains(x) {
                patching.record(f64::INFINITY, false);
                continue;
            }
            if !e.map.contains(x) {
                continue;
            }
            let target = e.map.apply_unchecked(x);
            let mut residual = patched.apply_unchecked(x).distance(&target);
            if lower.contains(x) && upper.contains(x) {
                residual = residual.max(lower.apply_unchecked(x).distance(&upper.apply_unchecked(x)));
            }
            patching.record(residual, residual <= tol);
        }
    }

    // (c) composition: every product of two words whose total length fits
    // the closure depth agrees with the materialized element for the
    // concatenated word.
    let mut composition = AxiomOutcome::new("composition");
    let index: HashMap<&[usize], usize> = elements
        .iter()
        .enumerate()
        .map(|(i, e)| (e.word.as_slice(), i))
        .collect();
    for u in &elements {
        for v in &elements {
            if u.word.len() + v.word.len() > p.closure_depth() {
                continue;
            }
            let word: Vec<usize> = u.word.iter().chain(&v.word).copied().collect();
            let Some(&target) = index.get(word.as_slice()) else {
                composition.fail();
                continue;
            };
            let target = &elements[target].map;
            let product = compose_unchecked(&v.map, &u.map);
            for x in samples {
                if product.contains(x) != target.contains(x) {
                    composition.record(f64::INFINITY, false);
                } else if product.contains(x) {
                    let d = product.apply_unchecked(x).distance(&target.apply_unchecked(x));
                    composition.record(d, d <= tol);
                }
            }
        }
    }

    // (d) identity: some element is defined on every sample and fixes it.
    let mut identity = AxiomOutcome::new("identity");
    let mut best_identity = f64::INFINITY;
    for e in &elements {
        let mut worst: f64 = 0.0;
        for x in samples {
            identity.checks += 1;
            if !e.map.contains(x) {
                worst = f64::INFINITY;
                break;
            }
            let y = e.map.apply_unchecked(x);
            worst = if within(&y, x) {
                worst.max(y.distance(x))
            } else {
                f64::INFINITY
            };
            if worst > tol {
                break;
            }
        }
        best_identity = best_identity.min(worst);
        if best_identity <= tol {
            break;
        }
    }
    identity.worst_residual = best_identity;
    if best_identity > tol {
        identity.fail();
    }

    // (e) inverses: every generator has an element undoing it on its sampled
    // domain, and its own inverse map is consistent.
    let mut inverse = AxiomOutcome::new("inverse");
    let mut worst_best: f64 = 0.0;
    for g in p.generators() {
        let own = g.inverse_error(samples);
        inverse.record(own, own <= tol);
        let dom: Vec<&CoordinateVector> = samples.iter().filter(|x| g.contains(x)).collect();
        if dom.is_empty() {
            continue;
        }
        let images: Vec<CoordinateVector> = dom.iter().map(|x| g.apply_unchecked(x)).collect();
        let mut best = f64::INFINITY;
        for h in &elements {
            let mut worst: f64 = 0.0;
            for (x, y) in dom.iter().zip(&images) {
                inverse.checks += 1;
                if !h.map.contains(y) {
                    worst = f64::INFINITY;
                    break;
                }
                let back = h.map.apply_unchecked(y);
                worst = if within(&back, x) {
                    worst.max(back.distance(x))
                } else {
                    f64::INFINITY
                };
                if worst > tol {
                    break;
                }
            }
            best = best.min(worst);
            if best <= tol {
                break;
            }
        }
        worst_best = worst_best.max(best);
        if best > tol {
            inverse.fail();
        }
    }
    inverse.worst_residual = inverse.worst_residual.max(worst_best);

    Ok(AxiomReport {
        restriction,
        patching,
        composition,
        identity,
        inverse,
    })
}

fn sample_spread(samples: &[CoordinateVector]) -> f64 {
    let d = samples[0].dim();
    let mut sq = 0.0;
    for k in 0..d {
        let lo = samples.iter().map(|x| x[k]).fold(f64::INFINITY, f64::min);
        let hi = samples.iter().map(|x| x[k]).fold(f64::NEG_INFINITY, f64::max);
        sq += (hi - lo) * (hi - lo);
    }
    sq.sqrt().max(1e-6)
}

/// One member of a notion of relatedness: a pseudogroup acting on the
/// region cut out by `domain`.
#[derive(Clone)]
pub struct RelatednessMember {
    pub label: String,
    pub pseudogroup: Pseudogroup,
    pub domain: Predicate,
}

impl fmt::Debug for RelatednessMember {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RelatednessMember")
            .field("label", &self.label)
            .field("pseudogroup", &self.pseudogroup)
            .finish_non_exhaustive()
    }
}

/// A family of pseudogroups on disjoint domains whose orbits should
/// partition the task space.
#[derive(Clone, Debug)]
pub struct RelatednessNotion {
    pub members: Vec<RelatednessMember>,
    pub ambient_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelatednessReport {
    /// Samples lying in more than one member domain.
    pub overlapping_samples: Vec<usize>,
    /// Samples lying in no member domain.
    pub uncovered_samples: Vec<usize>,
    /// Pairs `(i, j)` that land in the same cell without being directly
    /// related, or are related in one direction only.
    pub partition_violations: Vec<(usize, usize)>,
    /// Induced partition of the sample indices, in order of first member.
    pub cells: Vec<Vec<usize>>,
    pub disjoint: bool,
    pub covers: bool,
    pub orbits_partition: bool,
}

impl RelatednessReport {
    pub fn passed(&self) -> bool {
        self.disjoint && self.covers && self.orbits_partition
    }
}

pub fn verify_relatedness(n: &RelatednessNotion, samples: &[CoordinateVector]) -> Result<RelatednessReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "relatedness checks need at least one sample".into(),
        ));
    }
    let owners: Vec<Vec<usize>> = samples
        .iter()
        .map(|x| {
            n.members
                .iter()
                .enumerate()
                .filter(|(_, m)| (m.domain)(x))
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    let overlapping_samples: Vec<usize> = (0..samples.len()).filter(|&i| owners[i].len() > 1).collect();
    let uncovered_samples: Vec<usize> = (0..samples.len()).filter(|&i| owners[i].is_empty()).collect();

    let count = samples.len();
    let related = |i: usize, j: usize| -> bool {
        match (owners[i].first(), owners[j].first()) {
            (Some(a), Some(b)) if a == b => n.members[*a].pseudogroup.relates(&samples[i], &samples[j], DEFAULT_TOL),
            _ => false,
        }
    };
    let mut relation = vec![vec![false; count]; count];
    for (i, row) in relation.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = related(i, j);
        }
    }

    let mut parent: Vec<usize> = (0..count).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (i, row) in relation.iter().enumerate() {
        for (j, &related) in row.iter().enumerate() {
            if related {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut cells: Vec<Vec<usize>> = Vec::new();
    let mut cell_of_root: HashMap<usize, usize> = HashMap::new();
    for i in 0..count {
        let root = find(&mut parent, i);
        let idx = *cell_of_root.entry(root).or_insert_with(|| {
            cells.push(Vec::new());
            cells.len() - 1
        });
        cells[idx].push(i);
    }

    let mut partition_violations = Vec::new();
    for i in 0..count {
        if !relation[i][i] && !owners[i].is_empty() {
            partition_violations.push((i, i));
        }
    }
    for cell in &cells {
        for &i in cell {
            for &j in cell {
                if i < j && !(relation[i][j] && relation[j][i]) {
                    partition_violations.push((i, j));
                }
            }
        }
    }

    Ok(RelatednessReport {
        disjoint: overlapping_samples.is_empty(),
        covers: uncovered_samples.is_empty(),
        orbits_partition: partition_violations.is_empty(),
        overlapping_samples,
        uncovered_samples,
        partition_violations,
        cells,
    })
}

/// Worst `|f(x) - f(t(x))|` over samples and transformations. A quantity
/// is invariant when this stays within tolerance.
pub fn invariant_check<F>(f: F, ts: &[Transformation], samples: &[CoordinateVector]) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut worst: f64 = 0.0;
    for t in ts {
        for x in samples {
            let y = t.apply(x)?;
            worst = worst.max((f(x) - f(&y)).abs());
        }
    }
    Ok(worst)
}

/// A distance function on coordinate vectors.
#[derive(Clone)]
pub struct Metric {
    name: String,
    distance: DistanceFn,
}

impl fmt::Debug for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Metric({})", self.name)
    }
}

impl Metric {
    pub fn new(name: impl Into<String>, distance: DistanceFn) -> Self {
        Self {
            name: name.into(),
            distance,
        }
    }

    pub fn euclidean() -> Self {
        Self::new("euclidean", Arc::new(distance))
    }

    /// Squared Euclidean distance. Not a metric in the strict sense (the
    /// triangle inequality fails) but the usual choice for prototype
    /// classifiers.
    pub fn squared_euclidean() -> Self {
        Self::new(
            "squared-euclidean",
            Arc::new(|a, b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()),
        )
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "euclidean" => Ok(Self::euclidean()),
            "squared-euclidean" => Ok(Self::squared_euclidean()),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        (self.distance)(a, b)
    }

    /// Worst violations of `d(x,x) = 0`, symmetry and the triangle
    /// inequality over all sample pairs and triples.
    pub fn axiom_violations(&self, samples: &[CoordinateVector]) -> MetricViolations {
        let mut out = MetricViolations::default();
        for a in samples {
            out.identity = out.identity.max(self.distance(a, a).abs());
            for b in samples {
                let dab = self.distance(a, b);
                out.negativity = out.negativity.max(-dab);
                out.symmetry = out.symmetry.max((dab - self.distance(b, a)).abs());
                for c in samples {
                    let excess = dab - (self.distance(a, c) + self.distance(c, b));
                    out.triangle = out.triangle.max(excess);
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricViolations {
    pub identity: f64,
    pub negativity: f64,
    pub symmetry: f64,
    pub triangle: f64,
}

impl MetricViolations {
    pub fn within(&self, tol: f64) -> bool {
        self.identity <= tol && self.negativity <= tol && self.symmetry <= tol && self.triangle <= tol
    }
}

/// Index of the nearest reference for every sample; ties go to the lowest
/// reference index.
pub fn similarity_partition(refs: &[CoordinateVector], m: &Metric, samples: &[CoordinateVector]) -> Result<Vec<usize>> {
    if refs.is_empty() {
        return Err(Error::InvalidArgument(
            "similarity partition needs at least one reference".into(),
        ));
    }
    Ok(samples
        .iter()
        .map(|x| {
            let mut best = (0, m.distance(&refs[0], x));
            for (i, r) in refs.iter().enumerate().skip(1) {
                let d = m.distance(r, x);
                if d < best.1 {
                    best = (i, d);
                }
            }
            best.0
        })
        .collect())
}

/// Horizontal translations of the plane, acting on all of `R^2`; orbits are
/// horizontal lines.
pub fn horizontal_translations() -> Pseudogroup {
    Pseudogroup::symmetric(vec![Transformation::translation(&[1.0, 0.0])], 2)
        .expect("positive depth")
        .with_transport(Arc::new(|x, y| {
            ((x[1] - y[1]).abs() <= DEFAULT_TOL).then(|| Transformation::translation(&[y[0] - x[0], 0.0]))
        }))
}

/// All translations of `R^d`, generated by the unit axis translations.
pub fn translations(dim: usize, closure_depth: usize) -> Result<Pseudogroup> {
    let gens = (0..dim)
        .map(|k| {
            let mut e = vec![0.0; dim];
            e[k] = 1.0;
            Transformation::translation(&e)
        })
        .collect();
    Ok(
        Pseudogroup::symmetric(gens, closure_depth)?.with_transport(Arc::new(|x, y| {
            let offset: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
            Some(Transformation::translation(&offset))
        })),
    )
}

/// Rotations of the punctured plane about the origin, generated by
/// `samples` equally spaced angles; orbits are concentric circles.
pub fn rotations(samples: usize) -> Result<Pseudogroup> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one rotation angle".into()));
    }
    let punctured: Predicate = Arc::new(|x| x.len() == 2 && (x[0] != 0.0 || x[1] != 0.0));
    let gens = (0..samples)
        .map(|k| {
            Transformation::rotation(std::f64::consts::TAU * k as f64 / samples as f64).restrict(punctured.clone())
        })
        .collect();
    Ok(Pseudogroup::new(gens, 2)?.with_transport(Arc::new(|x, y| {
        let (rx, ry) = (x[0].hypot(x[1]), y[0].hypot(y[1]));
        if rx == 0.0 || ry == 0.0 || (rx - ry).abs() > DEFAULT_TOL {
            return None;
        }
        Some(Transformation::rotation(y[1].atan2(y[0]) - x[1].atan2(x[0])))
    })))
}
