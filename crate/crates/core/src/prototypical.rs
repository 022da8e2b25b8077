//! Prototypical networks as a foliated chart on parameter space.
//!
//! The embedding parameters are the global (transverse) coordinates shared
//! by every task; the class prototypes of an episode are the leaf
//! coordinates, computed directly from the support set with no training.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CoordinateVector;
use crate::relatedness::Metric;

/// Central-difference step for training gradients.
pub const DEFAULT_TRAIN_FD_STEP: f64 = 1e-5;

const BUNDLED_TOY: &str = include_str!("../data/toy_two_class.json");

/// Affine layers with `tanh` between them (not after the last). For each
/// layer the parameters are the `out × in` weights in row-major order
/// followed by the `out` biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    layer_dims: Vec<usize>,
    params: CoordinateVector,
}

impl Embedding {
    pub fn new(layer_dims: Vec<usize>, params: CoordinateVector) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer dims need at least two positive entries, got {layer_dims:?}"
            )));
        }
        let expected = Self::param_count(&layer_dims);
        if params.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.dim(),
            });
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("embedding parameters".into()));
        }
        Ok(Self { layer_dims, params })
    }

    /// `sum (in_i + 1) out_i`.
    pub fn param_count(layer_dims: &[usize]) -> usize {
        layer_dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// A single affine layer with identity weights and zero bias.
    pub fn identity(dim: usize) -> Self {
        let mut params = vec![0.0; (dim + 1) * dim];
        for i in 0..dim {
            params[i * dim + i] = 1.0;
        }
        Self::new(vec![dim, dim], params.into()).expect("consistent identity layout")
    }

    /// Parameters drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng>(layer_dims: Vec<usize>, scale: f64, rng: &mut R) -> Result<Self> {
        let n = Self::param_count(&layer_dims);
        let params: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        Self::new(layer_dims, params.into())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn params(&self) -> &CoordinateVector {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }

    pub fn with_params(&self, params: CoordinateVector) -> Result<Self> {
        Self::new(self.layer_dims.clone(), params)
    }

    pub fn embed(&self, x: &[f64]) -> Result<CoordinateVector> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(forward(&self.layer_dims, &self.params, x).into())
    }
}

fn forward(layer_dims: &[usize], params: &[f64], x: &[f64]) -> Vec<f64> {
    let mut act = x.to_vec();
    let mut offset = 0;
    let layers = layer_dims.len() - 1;
    for (li, w) in layer_dims.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = &params[offset..offset + n_in * n_out];
        let bias = &params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
        offset += (n_in + 1) * n_out;
        act = (0..n_out)
            .map(|r| {
                let z = bias[r]
                    + weights[r * n_in..(r + 1) * n_in]
                        .iter()
                        .zip(&act)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                if li + 1 < layers {
                    z.tanh()
                } else {
                    z
                }
            })
            .collect();
    }
    act
}

pub fn embed(e: &Embedding, x: &[f64]) -> Result<CoordinateVector> {
    e.embed(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Support,
    Query,
}

/// One record of the episode file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub x: Vec<f64>,
    pub y: usize,
    pub role: Role,
}

/// Labelled support and query examples of one few-shot task.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub support: Vec<(CoordinateVector, usize)>,
    pub query: Vec<(CoordinateVector, usize)>,
}

impl Episode {
    pub fn new(support: Vec<(CoordinateVector, usize)>, query: Vec<(CoordinateVector, usize)>) -> Result<Self> {
        let ep = Self { support, query };
        ep.validate()?;
        Ok(ep)
    }

    pub fn validate(&self) -> Result<()> {
        let Some((first, _)) = self.support.first() else {
            return Err(Error::InvalidEpisode("episode has no support examples".into()));
        };
        let dim = first.dim();
        for (x, _) in self.support.iter().chain(&self.query) {
            if x.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.dim(),
                });
            }
            if !x.is_finite() {
                return Err(Error::NonFinite("episode input".into()));
            }
        }
        let classes = self.classes();
        if let Some((_, y)) = self.query.iter().find(|(_, y)| !classes.contains(y)) {
            return Err(Error::EmptyClass(*y));
        }
        Ok(())
    }

    /// The task's label set, ascending.
    pub fn classes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.support.iter().map(|(_, y)| *y).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn from_records(records: Vec<EpisodeRecord>) -> Result<Self> {
        let (mut support, mut query) = (Vec::new(), Vec::new());
        for r in records {
            let x = CoordinateVector::new(r.x)?;
            match r.role {
                Role::Support => support.push((x, r.y)),
                Role::Query => query.push((x, r.y)),
            }
        }
        Self::new(support, query)
    }

    pub fn to_records(&self) -> Vec<EpisodeRecord> {
        let tag = |role| {
            move |(x, y): &(CoordinateVector, usize)| EpisodeRecord {
                x: x.to_vec(),
                y: *y,
                role,
            }
        };
        self.support
            .iter()
            .map(tag(Role::Support))
            .chain(self.query.iter().map(tag(Role::Query)))
            .collect()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let records: Vec<EpisodeRecord> = serde_json::from_str(s).map_err(|e| Error::InvalidEpisode(e.to_string()))?;
        Self::from_records(records)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::InvalidEpisode(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Two classes on the line, labelled 0 around -1 and 1 around +1.
    pub fn bundled_toy() -> Self {
        Self::from_json_str(BUNDLED_TOY).expect("bundled toy episode is valid")
    }

    /// Relabels every example through `map`.
    pub fn relabel(&self, map: impl Fn(usize) -> usize) -> Self {
        let f = |v: &Vec<(CoordinateVector, usize)>| v.iter().map(|(x, y)| (x.clone(), map(*y))).collect();
        Self {
            support: f(&self.support),
            query: f(&self.query),
        }
    }
}

/// Class prototypes, ordered by ascending class label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub classes: Vec<usize>,
    pub prototypes: Vec<CoordinateVector>,
}

impl PrototypeSet {
    pub fn get(&self, class: usize) -> Option<&CoordinateVector> {
        self.classes
            .iter()
            .position(|c| *c == class)
            .map(|i| &self.prototypes[i])
    }
}

/// Mean embedding of each class's support examples.
pub fn compute_prototypes(e: &Embedding, ep: &Episode) -> Result<PrototypeSet> {
    ep.validate()?;
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (x, y) in &ep.support {
        let z = e.embed(x)?;
        let entry = sums.entry(*y).or_insert_with(|| (vec![0.0; z.dim()], 0));
        for (s, v) in entry.0.iter_mut().zip(z.iter()) {
            *s += v;
        }
        entry.1 += 1;
    }
    let (classes, prototypes) = sums
        .into_iter()
        .map(|(c, (s, n))| (c, s.into_iter().map(|v| v / n as f64).collect::<Vec<_>>().into()))
        .unzip();
    Ok(PrototypeSet { classes, prototypes })
}

/// Logits `-rho(f(x), c_k)` in prototype order.
fn logits(p: &PrototypeSet, e: &Embedding, x: &[f64], metric: &Metric) -> Result<Vec<f64>> {
    if p.prototypes.is_empty() {
        return Err(Error::InvalidArgument("no prototypes".into()));
    }
    let z = e.embed(x)?;
    let out: Vec<f64> = p.prototypes.iter().map(|c| -metric.distance(&z, c)).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prototype distances".into()));
    }
    Ok(out)
}

/// Sum taken in ascending order, so that it does not depend on how the
/// terms are labelled.
fn ordered_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum()
}

/// `(class, probability)` pairs: a softmax of negative distances to the
/// prototypes.
pub fn class_probabilities(p: &PrototypeSet, e: &Embedding, x: &[f64], metric: &Metric) -> Result<Vec<(usize, f64)>> {
    let l = logits(p, e, x, metric)?;
    let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = l.iter().map(|v| (v - max).exp()).collect();
    let total = ordered_sum(&exps);
    Ok(p.classes.iter().copied().zip(exps.iter().map(|v| v / total)).collect())
}

/// Mean over queries of `-log p(true class)`.
pub fn episode_nll(e: &Embedding, ep: &Episode, metric: &Metric) -> Result<f64> {
    if ep.query.is_empty() {
        return Err(Error::InvalidEpisode("episode has no query examples".into()));
    }
    let protos = compute_prototypes(e, ep)?;
    let mut total = 0.0;
    for (x, y) in &ep.query {
        let l = logits(&protos, e, x, metric)?;
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = l.iter().map(|v| (v - max).exp()).collect();
        let lse = max + ordered_sum(&exps).ln();
        let own = protos
            .classes
            .iter()
            .position(|c| c == y)
            .ok_or(Error::EmptyClass(*y))?;
        total += lse - l[own];
    }
    Ok(total / ep.query.len() as f64)
}

fn mean_nll(e: &Embedding, episodes: &[Episode], metric: &Metric) -> Result<f64> {
    let mut total = 0.0;
    for ep in episodes {
        total += episode_nll(e, ep, metric)?;
    }
    Ok(total / episodes.len() as f64)
}

/// Central-difference gradient of the mean episode NLL over the parameters.
pub fn nll_gradient(e: &Embedding, episodes: &[Episode], metric: &Metric, step: f64) -> Result<CoordinateVector> {
    let base = e.params().to_vec();
    let grad = (0..base.len())
        .into_par_iter()
        .map(|i| {
            let mut probe = base.clone();
            probe[i] = base[i] + step;
            let up = mean_nll(&e.with_params(probe.clone().into())?, episodes, metric)?;
            probe[i] = base[i] - step;
            let down = mean_nll(&e.with_params(probe.into())?, episodes, metric)?;
            Ok((up - down) / (2.0 * step))
        })
        .collect::<Result<Vec<f64>>>()?;
    CoordinateVector::new(grad)
}

/// Forward-difference gradient; a coarser second opinion on [`nll_gradient`].
pub fn nll_forward_gradient(
    e: &Embedding,
    episodes: &[Episode],
    metric: &Metric,
    step: f64,
) -> Result<CoordinateVector> {
    let base = e.params().to_vec();
    let at = mean_nll(e, episodes, metric)?;
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut probe = base.clone();
        probe[i] += step;
        grad.push((mean_nll(&e.with_params(probe.into())?, episodes, metric)? - at) / step);
    }
    CoordinateVector::new(grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingOutcome {
    pub embedding: Embedding,
    /// Mean NLL before training and after every step.
    pub trace: Vec<f64>,
}

/// Plain gradient descent on the mean episode NLL with finite-difference
/// gradients.
pub fn train_embedding(
    e: &Embedding,
    episodes: &[Episode],
    steps: usize,
    lr: f64,
    metric: &Metric,
) -> Result<TrainingOutcome> {
    if episodes.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one episode".into()));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be non-negative, got {lr}"
        )));
    }
    let mut current = e.clone();
    let mut trace = vec![mean_nll(&current, episodes, metric)?];
    for _ in 0..steps {
        let g = nll_gradient(&current, episodes, metric, DEFAULT_TRAIN_FD_STEP)?;
        let next: Vec<f64> = current.params().iter().zip(g.iter()).map(|(p, d)| p - lr * d).collect();
        let next = CoordinateVector::new(next)?;
        current = current.with_params(next)?;
        let nll = mean_nll(&current, episodes, metric)?;
        if !nll.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        trace.push(nll);
    }
    Ok(TrainingOutcome {
        embedding: current,
        trace,
    })
}

/// The chart split of a prediction: shared parameters and per-task
/// prototypes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafSplit {
    pub global: CoordinateVector,
    /// Prototypes concatenated in ascending class order.
    pub local: CoordinateVector,
    pub classes: Vec<usize>,
}

pub fn leaf_split_coordinates(e: &Embedding, ep: &Episode) -> Result<LeafSplit> {
    let protos = compute_prototypes(e, ep)?;
    let local = protos
        .prototypes
        .iter()
        .flat_map(|c| c.iter().copied())
        .collect::<Vec<_>>();
    Ok(LeafSplit {
        global: e.params().clone(),
        local: local.into(),
        classes: protos.classes,
    })
}

/// One row of the probabilities table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRow {
    pub query: usize,
    pub class: usize,
    pub probability: f64,
}

/// Class probabilities for every query, query-major.
pub fn query_probabilities(e: &Embedding, ep: &Episode, metric: &Metric) -> Result<Vec<ProbabilityRow>> {
    let protos = compute_prototypes(e, ep)?;
    let mut rows = Vec::new();
    for (qi, (x, _)) in ep.query.iter().enumerate() {
        for (class, probability) in class_probabilities(&protos, e, x, metric)? {
            rows.push(ProbabilityRow {
                query: qi,
                class,
                probability,
            });
        }
    }
    Ok(rows)
}

pub fn write_probabilities_csv<W: Write>(rows: &[ProbabilityRow], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> CoordinateVector {
        CoordinateVector::from(x)
    }

    fn line_episode(support: &[(f64, usize)], query: &[(f64, usize)]) -> Episode {
        Episode::new(
            support.iter().map(|(x, y)| (v(&[*x]), *y)).collect(),
            query.iter().map(|(x, y)| (v(&[*x]), *y)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn embedding_examples() {
        let id = Embedding::identity(2);
        assert_eq!(id.embed(&[0.3, -0.7]).unwrap().as_slice(), &[0.3, -0.7]);
        let constant = Embedding::new(vec![2, 2], v(&[0.0, 0.0, 0.0, 0.0, 1.5, -2.0])).unwrap();
        assert_eq!(constant.embed(&[9.0, 4.0]).unwrap().as_slice(), &[1.5, -2.0]);
        assert_eq!(Embedding::param_count(&[1, 2, 1]), 7);
        assert!(Embedding::new(vec![1, 2, 1], v(&[0.0; 6])).is_err());
        assert!(matches!(id.embed(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn small_network_against_hand_rolled_pass() {
        // 1-2-1: w1 = (0.5, -1.0), b1 = (0.1, 0.2), w2 = (2.0, 0.3), b2 = -0.4.
        let e = Embedding::new(vec![1, 2, 1], v(&[0.5, -1.0, 0.1, 0.2, 2.0, 0.3, -0.4])).unwrap();
        let x = 0.5;
        let h1 = (0.5 * x + 0.1f64).tanh();
        let h2 = (-x + 0.2f64).tanh();
        let expected = 2.0 * h1 + 0.3 * h2 - 0.4;
        assert!((e.embed(&[x]).unwrap()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn prototype_examples() {
        let id = Embedding::identity(1);
        let ep = line_episode(&[(1.0, 0), (3.0, 0), (-2.0, 1)], &[(0.0, 0)]);
        let p = compute_prototypes(&id, &ep).unwrap();
        assert_eq!(p.classes, vec![0, 1]);
        assert_eq!(p.get(0).unwrap().as_slice(), &[2.0]);
        assert_eq!(p.get(1).unwrap().as_slice(), &[-2.0]);
        let twice = line_episode(&[(1.5, 0), (1.5, 0)], &[(0.0, 0)]);
        assert_eq!(
            compute_prototypes(&id, &twice).unwrap().get(0).unwrap().as_slice(),
            &[1.5]
        );
    }

    #[test]
    fn probability_examples() {
        let id = Embedding::identity(1);
        let ep = line_episode(&[(0.0, 0), (2.0, 1)], &[(1.0, 0)]);
        let p = compute_prototypes(&id, &ep).unwrap();
        let e = Metric::euclidean();
        let probs = class_probabilities(&p, &id, &[1.0], &e).unwrap();
        assert_eq!(probs, vec![(0, 0.5), (1, 0.5)]);
        let probs = class_probabilities(&p, &id, &[0.0], &e).unwrap();
        assert!((probs[0].1 - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-12);
        assert!((probs[0].1 - 0.880_797).abs() < 1e-6);
        let single = line_episode(&[(0.0, 4)], &[(1.0, 4)]);
        let p = compute_prototypes(&id, &single).unwrap();
        assert_eq!(class_probabilities(&p, &id, &[7.0], &e).unwrap(), vec![(4, 1.0)]);
    }

    #[test]
    fn nll_examples() {
        let id = Embedding::identity(1);
        let m = Metric::squared_euclidean();
        let far = line_episode(&[(0.0, 0), (100.0, 1)], &[(0.0, 0), (100.0, 1)]);
        assert!(episode_nll(&id, &far, &m).unwrap() < 1e-12);
        let tied = line_episode(&[(-1.0, 0), (1.0, 1)], &[(0.0, 0), (0.0, 1)]);
        assert!((episode_nll(&id, &tied, &m).unwrap() - 2f64.ln()).abs() < 1e-15);
        let single = line_episode(&[(0.0, 3)], &[(5.0, 3)]);
        assert_eq!(episode_nll(&id, &single, &m).unwrap(), 0.0);
    }

    #[test]
    fn invalid_episodes() {
        assert!(matches!(
            Episode::new(vec![(v(&[0.0]), 0)], vec![(v(&[0.0]), 1)]),
            Err(Error::EmptyClass(1))
        ));
        assert!(Episode::new(vec![], vec![]).is_err());
        assert!(Episode::from_json_str(r#"[{"x":[1.0],"y":0,"role":"other"}]"#).is_err());
    }

    #[test]
    fn label_permutation_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = Embedding::random(vec![1, 3, 2], 1.0, &mut rng).unwrap();
        let ep = Episode::bundled_toy();
        let swapped = ep.relabel(|y| 1 - y);
        let m = Metric::squared_euclidean();
        let a = query_probabilities(&e, &ep, &m).unwrap();
        let b = query_probabilities(&e, &swapped, &m).unwrap();
        for ra in &a {
            let rb = b
                .iter()
                .find(|r| r.query == ra.query && r.class == 1 - ra.class)
                .unwrap();
            assert_eq!(ra.probability.to_bits(), rb.probability.to_bits());
        }
    }

    #[test]
    fn training_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = Embedding::random(vec![1, 4, 2], 0.5, &mut rng).unwrap();
        let eps = vec![Episode::bundled_toy()];
        let m = Metric::squared_euclidean();
        let none = train_embedding(&e, &eps, 0, 0.1, &m).unwrap();
        assert_eq!(none.embedding, e);
        let frozen = train_embedding(&e, &eps, 3, 0.0, &m).unwrap();
        assert!(frozen.trace.windows(2).all(|w| w[0] == w[1]));
        let trained = train_embedding(&e, &eps, 20, 0.2, &m).unwrap();
        assert!(trained.trace.last().unwrap() < &trained.trace[0]);
    }

    #[test]
    fn leaf_split_examples() {
        let id = Embedding::identity(1);
        let a = line_episode(&[(1.0, 0), (3.0, 0), (5.0, 1)], &[(0.0, 0)]);
        let b = line_episode(&[(-1.0, 0), (7.0, 1)], &[(0.0, 1)]);
        let (sa, sb) = (
            leaf_split_coordinates(&id, &a).unwrap(),
            leaf_split_coordinates(&id, &b).unwrap(),
        );
        assert_eq!(sa.global, sb.global);
        assert_ne!(sa.local, sb.local);
        assert_eq!(sa.local.as_slice(), &[2.0, 5.0]);

        let five = line_episode(&[(0.2, 2), (0.4, 4), (0.5, 5)], &[(0.2, 2)]);
        let split = leaf_split_coordinates(&id, &five).unwrap();
        assert_eq!(split.classes, vec![2, 4, 5]);
        assert_eq!(split.local.dim(), 3);
        assert_eq!(split, leaf_split_coordinates(&id, &five).unwrap());
    }

    #[test]
    fn episode_json_roundtrip_and_csv() {
        let ep = Episode::bundled_toy();
        let text = serde_json::to_string(&ep.to_records()).unwrap();
        assert_eq!(Episode::from_json_str(&text).unwrap(), ep);
        let rows = query_probabilities(&Embedding::identity(1), &ep, &Metric::euclidean()).unwrap();
        let mut buf = Vec::new();
        write_probabilities_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("query,class,probability\n"));
        assert_eq!(text.lines().count(), rows.len() + 1);
    }
}
