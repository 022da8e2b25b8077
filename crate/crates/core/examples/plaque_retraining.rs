//! Retraining inside a plaque: some model coordinates stay frozen while the
//! rest follow the restricted gradient flow. Frozen coordinates come back
//! bit-for-bit, and the flow stops at the restricted minimizer when the
//! accuracy target is out of reach.
//!
//! cargo run --example plaque_retraining

use foliate::learning::{self, FlowConfig, LossSurface};

fn main() -> foliate::Result<()> {
    let loss = LossSurface::quadratic();
    let cfg = FlowConfig::default();

    let (t, m0) = ([1.0, 1.0], [0.0, 0.0]);
    let out = learning::plaque_restricted_optimize(&loss, &t, &m0, &[0], &[1], 1e-3, &cfg)?;
    println!(
        "t = {t:?}, freeze m1: model ({:e}, {:.9}) loss {:.9} after {:.3} ({:?})",
        out.model[0], out.model[1], out.loss, out.time, out.stop
    );

    let out = learning::solve_single_task(&loss, &t, &m0, 1e-3, &cfg)?;
    println!(
        "t = {t:?}, all free: model ({:.6}, {:.6}) loss {:.3e} after {:.3} ({:?})",
        out.model[0], out.model[1], out.loss, out.time, out.stop
    );

    // Transfer: start from the model of one task and only retrain the last
    // coordinate for a nearby task.
    let source = [0.8, -0.4, 1.2];
    let m = learning::solve_single_task(&loss, &source, &[0.0; 3], 1e-6, &cfg)?.model;
    let target = [0.8, -0.4, 0.3];
    let out = learning::plaque_restricted_optimize(&loss, &target, &m, &[0, 1], &[2], 1e-3, &cfg)?;
    println!(
        "transfer {source:?} -> {target:?}: frozen unchanged {}, loss {:.3e} after {:.3}",
        out.model[0].to_bits() == m[0].to_bits() && out.model[1].to_bits() == m[1].to_bits(),
        out.loss,
        out.time
    );
    Ok(())
}
