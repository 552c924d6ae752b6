//! AUROC, FPR at 95% TPR and score densities on hand-made scores.
//!
//! ```text
//! cargo run -p lgplug --example metrics
//! ```

use lgplug::eval::{auroc, fpr_at_tpr, Histogram};

fn main() -> lgplug::Result<()> {
    let id = [0.1, 0.4, 0.35, 0.8, 0.2, 0.3];
    let ood = [0.9, 0.7, 0.4, 0.95];
    let scores: Vec<f64> = id.iter().chain(&ood).copied().collect();
    let is_ood: Vec<bool> = id.iter().map(|_| false).chain(ood.iter().map(|_| true)).collect();

    println!("AUROC {:.4}", auroc(&scores, &is_ood)?);
    let (fpr, threshold) = fpr_at_tpr(&scores, &is_ood, 0.95)?;
    println!("FPR95 {fpr:.4} at threshold {threshold}");

    let hist = Histogram::new(&id, &ood, 5)?;
    for ((c, a), b) in hist.centers().iter().zip(&hist.id).zip(&hist.ood) {
        println!("{c:>6.3}  id {a:.3}  ood {b:.3}");
    }
    Ok(())
}
