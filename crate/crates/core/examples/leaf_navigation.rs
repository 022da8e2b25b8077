//! Moving along a leaf covered by overlapping balls. Each ball carries the
//! transformations conjugated from translations of R^d, and a chain of balls
//! composes them into a map sending any point of the leaf to any other.
//!
//! cargo run --example leaf_navigation

use foliate::foliation;
use foliate::geometry::{BallChart, CoordinateVector};

fn main() -> foliate::Result<()> {
    let balls = [0.0, 1.5, 3.0]
        .iter()
        .map(|c| BallChart::euclidean(CoordinateVector::from(vec![*c]), 1.0))
        .collect::<foliate::Result<Vec<_>>>()?;
    let leaf = foliation::leaf_pseudogroup(balls)?;
    println!("cover connected: {}", leaf.cover().is_connected());

    let (p, q) = ([-0.7], [3.6]);
    let chain = leaf.cover().chain(&p, &q)?;
    println!(
        "chain from {p:?} to {q:?} through {} balls, waypoints {:?}",
        chain.balls().len(),
        chain.waypoints()
    );
    let map = leaf.navigate(&p, &q)?;
    let image = map.apply(&p)?;
    println!(
        "image of p = {:.15}, back = {:.15}",
        image[0],
        map.apply_inverse(&image)?[0]
    );

    // A single ball transformation never leaves its ball, however large the
    // underlying translation.
    let b = &leaf.cover().balls()[1];
    for v in [0.5, 5.0, 50.0, 5e6] {
        let x = foliation::ball_transform_point(b, &[1.5], &[v])?;
        println!("translate centre of ball 1 by {v:>8}: {:.12}", x[0]);
    }

    let pairs: Vec<_> = (0..20)
        .map(|i| {
            let a = -0.95 + 0.24 * i as f64;
            (CoordinateVector::from(vec![a]), CoordinateVector::from(vec![2.95 - a]))
        })
        .collect();
    let report = leaf.verify_transitivity(&pairs);
    println!(
        "transitivity on {} pairs: {} failures, endpoint {:.1e}, inverse {:.1e}",
        report.pairs, report.failures, report.worst_endpoint_error, report.worst_inverse_error
    );

    let axioms = leaf.verify_axioms()?;
    for o in axioms.outcomes() {
        println!("  {:<12} {} checks, {} failures", o.name, o.checks, o.failures);
    }
    Ok(())
}
