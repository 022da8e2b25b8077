//! A two-class few-shot episode: compute prototypes, classify queries by a
//! softmax over negative distances, then train a small tanh embedding with
//! finite-difference descent. The embedding weights are the global
//! coordinates of the model; the prototypes are the per-task local ones.
//!
//! cargo run --release --example prototypical_episode [episode.json]

use foliate::prototypical::{self, Embedding, Episode};
use foliate::relatedness::Metric;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let episode = match std::env::args().nth(1) {
        Some(path) => Episode::from_path(path.as_ref())?,
        None => Episode::bundled_toy(),
    };
    let metric = Metric::squared_euclidean();
    println!(
        "{} support, {} query, classes {:?}",
        episode.support.len(),
        episode.query.len(),
        episode.classes()
    );

    let identity = Embedding::identity(episode.support[0].0.dim());
    let protos = prototypical::compute_prototypes(&identity, &episode)?;
    for (c, p) in protos.classes.iter().zip(&protos.prototypes) {
        println!("  prototype of class {c}: {:?}", p.as_slice());
    }
    println!(
        "identity-embedding NLL {:.6}",
        prototypical::episode_nll(&identity, &episode, &metric)?
    );

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let start = Embedding::random(vec![identity.input_dim(), 4, 2], 0.5, &mut rng)?;
    let trained = prototypical::train_embedding(&start, std::slice::from_ref(&episode), 50, 0.1, &metric)?;
    let trace = &trained.trace;
    println!(
        "training NLL: {:.4} -> {:.4} -> {:.4}",
        trace[0],
        trace[trace.len() / 2],
        trace[trace.len() - 1]
    );

    let split = prototypical::leaf_split_coordinates(&trained.embedding, &episode)?;
    println!(
        "global coordinates: {} parameters, local coordinates: {:?}",
        split.global.dim(),
        split.local.as_slice()
    );

    let rows = prototypical::query_probabilities(&trained.embedding, &episode, &metric)?;
    prototypical::write_probabilities_csv(&rows, std::io::stdout())?;
    Ok(())
}
