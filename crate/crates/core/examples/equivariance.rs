//! A learner is equivariant when transforming the task transforms the
//! learned model the same way. For the quadratic loss the exact learner
//! commutes with translations; pairing the task translation with the wrong
//! model transformation leaves a defect equal to the translation length.
//!
//! cargo run --example equivariance

use foliate::geometry::CoordinateVector;
use foliate::learning::{self, FlowConfig, LearnerMap, LossSurface};
use foliate::relatedness::Transformation;

fn main() -> foliate::Result<()> {
    let tasks: Vec<CoordinateVector> = (0..25)
        .map(|i| CoordinateVector::from(vec![(i % 5) as f64 - 2.0, (i / 5) as f64 - 2.0]))
        .collect();
    let shift = Transformation::translation(&[0.7, -1.3]);
    let rotate = Transformation::rotation(0.4);

    let exact = LearnerMap::exact_quadratic();
    println!(
        "exact learner, matched translation: {:.3e}",
        learning::equivariance_defect(&exact, &shift, &shift, &tasks)?
    );
    println!(
        "exact learner, identity on models:  {:.6}",
        learning::equivariance_defect(&exact, &shift, &Transformation::identity(), &tasks)?
    );
    println!(
        "exact learner, matched rotation:    {:.3e}",
        learning::equivariance_defect(&exact, &rotate, &rotate, &tasks)?
    );

    // A flow from a fixed start is not translation equivariant: the start
    // does not move with the task.
    let flow = LearnerMap::gradient_flow(
        LossSurface::quadratic(),
        vec![0.0, 0.0].into(),
        1e-2,
        FlowConfig::default(),
    );
    println!(
        "flow learner, matched translation:  {:.6}",
        learning::equivariance_defect(&flow, &shift, &shift, &tasks)?
    );
    println!(
        "flow learner, matched rotation:     {:.3e}",
        learning::equivariance_defect(&flow, &rotate, &rotate, &tasks)?
    );

    // Two parameter vectors are the same model when they agree on every probe.
    let arch = |p: &[f64], x: &[f64]| vec![p[0] * x[0] + p[1] * p[2]];
    let probes: Vec<CoordinateVector> = (0..5).map(|i| vec![i as f64].into()).collect();
    println!(
        "(1, 2, 3) ~ (1, 3, 2): {}, (1, 2, 3) ~ (2, 2, 3): {}",
        learning::model_equivalent(arch, &[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0], &probes)?,
        learning::model_equivalent(arch, &[1.0, 2.0, 3.0], &[2.0, 2.0, 3.0], &probes)?
    );
    Ok(())
}
