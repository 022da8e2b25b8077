//! Tasks that reach a target loss after the same training time lie on a
//! sphere around the shared initialization. This scans that sphere for the
//! quadratic loss, compares the numeric flow against the closed form, and
//! shows how the training time grows as the accuracy target shrinks.
//!
//! cargo run --example maml_leaf

use foliate::maml::{self, QuadraticMamlSetup};

fn main() -> foliate::Result<()> {
    let eps = 0.01;
    let k = 100f64.ln() / 4.0;
    let setup = QuadraticMamlSetup::planar(eps, k);
    println!("eps = {eps}, k = {k:.6}, leaf radius = {:.12}", setup.leaf_radius());

    let report = maml::scan_leaf(&setup, 16)?;
    println!("{:>10} {:>10} {:>14} {:>12}", "t1", "t2", "numeric loss", "residual");
    for ((t, loss), r) in report.tasks.iter().zip(&report.numeric_losses).zip(&report.residuals) {
        println!("{:>10.6} {:>10.6} {:>14.3e} {:>12.1e}", t[0], t[1], loss, r);
    }
    println!(
        "max |loss - eps| = {:.3e}, certified: {}",
        report.max_loss_error(),
        report.certifies(1e-6)
    );

    // The same task needs longer and longer flows as eps tightens.
    let t = [0.6, -0.8];
    println!("\ntask {t:?}");
    for target in [0.5, 0.1, 1e-2, 1e-4, 1e-8] {
        let k = maml::time_to_accuracy(&t, target)?;
        let m = maml::model_at_accuracy(&t, target)?;
        println!("  eps {target:>7.0e}: k = {k:.6}, model = ({:.8}, {:.8})", m[0], m[1]);
    }
    Ok(())
}
