//! Loss balls around tasks as candidate open sets. For the plain quadratic
//! loss they behave like a topology on the task grid; adding a step in the
//! first coordinate breaks the inner-ball property at the discontinuity.
//!
//! cargo run --release --example loss_topology

use foliate::geometry::CoordinateVector;
use foliate::learning::{self, LearnerMap, LossSurface, TopologyAxiom};

fn main() -> foliate::Result<()> {
    let n = 21;
    let h = 2.0 / (n - 1) as f64;
    let universe: Vec<CoordinateVector> = (0..n)
        .flat_map(|i| (0..n).map(move |j| CoordinateVector::from(vec![-1.0 + h * i as f64, -1.0 + h * j as f64])))
        .collect();
    let centres: Vec<CoordinateVector> = vec![vec![0.0, 0.0].into(), vec![0.5, -0.5].into(), vec![-0.1, 0.3].into()];
    let learner = LearnerMap::exact_quadratic();

    for loss in [LossSurface::quadratic(), LossSurface::quadratic_with_step()] {
        let sets = learning::loss_ball_family(&loss, &learner, &universe, &centres, &[0.05, 0.3])?;
        let report = learning::verify_topology_axioms(&loss, &learner, &universe, &sets, &[1e-3, 1e-2, 0.1])?;
        let count = |a| report.counterexamples.iter().filter(|c| c.axiom == a).count();
        println!(
            "{:<16} {} sets, {} inner / {} union / {} intersection checks -> {} / {} / {} counterexamples",
            loss.name(),
            sets.len(),
            report.inner_ball_checks,
            report.union_checks,
            report.intersection_checks,
            count(TopologyAxiom::InnerBall),
            count(TopologyAxiom::Union),
            count(TopologyAxiom::Intersection),
        );
        if let Some(c) = report.counterexamples.first() {
            println!("  first: {:?} at ({:.2}, {:.2})", c.axiom, c.task[0], c.task[1]);
        }
    }

    let t = [0.0, 0.2];
    let ball = learning::loss_ball(&LossSurface::quadratic_with_step(), &learner, &t, 0.5, &universe)?;
    let left = ball.iter().filter(|s| s[0] < 0.0).count();
    println!(
        "step-loss ball around {t:?} with eps 0.5: {} tasks, {left} left of the step",
        ball.len()
    );
    Ok(())
}
