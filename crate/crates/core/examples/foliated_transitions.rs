//! Detecting whether chart transitions preserve a foliation. A foliated
//! transition never mixes leaf coordinates into transverse ones, so the
//! off-diagonal block of its Jacobian vanishes. Also checks the
//! distinguished charts of the concentric-circle singular foliation.
//!
//! cargo run --example foliated_transitions

use foliate::foliation::{self, FoliatedChart, RegularFoliation, SingularFoliationSample};
use foliate::geometry::{Chart, CoordinateVector};
use foliate::harness;

fn main() -> foliate::Result<()> {
    let samples: Vec<CoordinateVector> = (0..25)
        .map(|i| vec![0.5 + 0.06 * (i % 5) as f64, -1.0 + 0.5 * (i / 5) as f64].into())
        .collect();
    let reference = FoliatedChart::new(Chart::identity(2), 1)?;
    let fol = RegularFoliation::new(vec![reference.clone()])?;
    for (name, chart) in [
        ("(x + 1, x y)", harness::sheared_product_chart()),
        ("(x + y, y)", harness::shear_chart()),
    ] {
        let r = foliation::verify_foliated_transition(&fol, &reference, &chart, &samples)?;
        println!("{name:<14} off-block {:.3e}, foliated: {}", r.max_off_block, r.foliated);
    }

    let circles = SingularFoliationSample::concentric_circles();
    let grid: Vec<CoordinateVector> = (0..15)
        .flat_map(|i| (0..15).map(move |j| vec![-1.4 + 0.2 * i as f64, -1.4 + 0.2 * j as f64].into()))
        .collect();
    for x in [[0.0, 0.0], [1.0, 0.0], [0.0, -0.6], [0.8, 0.6]] {
        let r = foliation::verify_singular_distinguished_chart(&circles, &x, &grid);
        println!(
            "x = {x:?}: leaf dim {}, chart leaf dim {}, {} leaf-mates, {} others, {} violations, passed {}",
            r.leaf_dim,
            r.chart_leaf_dim,
            r.leaf_mates,
            r.non_mates,
            r.slice_violations.len(),
            r.passed
        );
    }
    Ok(())
}
