//! Notions of task relatedness as pseudogroup orbits. Translations relate
//! every pair of tasks, rotations relate tasks at the same distance from the
//! origin, and a nearest-reference partition under a metric gives a coarser,
//! similarity-based grouping.
//!
//! cargo run --example relatedness_orbits

use foliate::geometry::CoordinateVector;
use foliate::relatedness::{self, Metric};

fn main() -> foliate::Result<()> {
    let samples: Vec<CoordinateVector> = (0..12)
        .map(|i| {
            let a = 0.7 * i as f64;
            let r = 0.5 + (i % 3) as f64;
            CoordinateVector::from(vec![r * a.cos(), r * a.sin()])
        })
        .collect();

    let rot = relatedness::rotations(12)?;
    let report = relatedness::verify_pseudogroup_axioms(&rot, &samples)?;
    println!(
        "rotations: {} axiom checks, {} failures",
        report.total_checks(),
        report.total_failures()
    );

    let x = &samples[0];
    let orbit = rot.orbit(x, 12)?;
    println!(
        "orbit of ({:.3}, {:.3}) under the generated rotations: {} points",
        x[0],
        x[1],
        orbit.len()
    );
    for (i, y) in samples.iter().enumerate() {
        println!(
            "  sample {i:>2} radius {:.2}: rotation-related {}, translation-related {}",
            y.norm(),
            rot.relates(x, y, 1e-9),
            relatedness::translations(2, 1)?.relates(x, y, 1e-9)
        );
    }

    let refs: Vec<CoordinateVector> = vec![vec![1.0, 0.0].into(), vec![-1.0, 0.0].into(), vec![0.0, 2.0].into()];
    for metric in [Metric::euclidean(), Metric::squared_euclidean()] {
        let cells = relatedness::similarity_partition(&refs, &metric, &samples)?;
        let v = metric.axiom_violations(&samples);
        println!(
            "{} partition {cells:?}, triangle violation {:.3}",
            metric.name(),
            v.triangle
        );
    }
    Ok(())
}
