//! Voxel- and cluster-level agreement between a reference and a few
//! degraded predictions of it.
//!
//! cargo run --example subject_metrics

use pvseval::ccl::Connectivity;
use pvseval::metrics::{evaluate_subject, Metric};
use pvseval::phantom::{generate_truth, perturb, Perturbation, PhantomSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (truth, _) = generate_truth(&PhantomSpec { n_tubes: 10, seed: 11, ..Default::default() })?;
    let cases = [
        ("identical", None),
        ("delete 30%", Some(Perturbation::DeleteFraction { fraction: 0.3 })),
        ("drop 4 tubes", Some(Perturbation::DropClusters { count: 4 })),
        ("dilate once", Some(Perturbation::DilateOnce { connectivity: Connectivity::Six })),
        ("shift 1 voxel", Some(Perturbation::Translate { offset: [1, 0, 0] })),
    ];

    print!("{:<14}", "prediction");
    for m in Metric::ALL {
        print!("{:>9}", m.name());
    }
    println!();
    for (name, p) in cases {
        let pred = match p {
            Some(p) => perturb(&truth, p, 5)?,
            None => truth.clone(),
        };
        let rec = evaluate_subject("demo", &pred, &truth, &[], Connectivity::TwentySix)?.remove(0);
        print!("{name:<14}");
        for m in Metric::ALL {
            match rec.get(m) {
                Some(v) => print!("{v:>9.3}"),
                None => print!("{:>9}", "-"),
            }
        }
        println!();
    }
    Ok(())
}
