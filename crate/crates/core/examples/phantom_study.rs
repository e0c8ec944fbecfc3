//! Checks the metrics against closed forms on synthetic phantoms: deleting a
//! fraction f of voxels gives Dice 2(1-f)/(2-f), dropping k of K tubes gives
//! cluster sensitivity (K-k)/K.
//!
//! cargo run --example phantom_study

use pvseval::ccl::Connectivity;
use pvseval::metrics::evaluate_subject;
use pvseval::phantom::{generate_truth, perturb, Perturbation, PhantomSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (truth, tubes) = generate_truth(&PhantomSpec { n_tubes: 10, seed: 99, ..Default::default() })?;
    let n = truth.foreground_count();
    println!("{} tubes, {n} voxels\n", tubes.len());

    println!("{:>5} {:>10} {:>10}", "f", "dsc_vox", "expected");
    for f in [0.0, 0.1, 0.25, 0.5, 0.75, 0.9] {
        let pred = perturb(&truth, Perturbation::DeleteFraction { fraction: f }, 1)?;
        let rec = evaluate_subject("p", &pred, &truth, &[], Connectivity::TwentySix)?.remove(0);
        let fp = (n - pred.foreground_count()) as f64 / n as f64;
        println!("{f:>5} {:>10.6} {:>10.6}", rec.dsc_vox.unwrap(), 2.0 * (1.0 - fp) / (2.0 - fp));
    }

    println!("\n{:>5} {:>10} {:>10}", "k", "sen_num", "expected");
    for k in [0, 2, 5, 9] {
        let pred = perturb(&truth, Perturbation::DropClusters { count: k }, 1)?;
        let rec = evaluate_subject("p", &pred, &truth, &[], Connectivity::TwentySix)?.remove(0);
        println!("{k:>5} {:>10.6} {:>10.6}", rec.sen_num.unwrap(), (tubes.len() - k) as f64 / tubes.len() as f64);
    }
    Ok(())
}
