//! Two simulated models scored on the same subjects, compared with paired
//! signed-rank tests and BH-adjusted p-values.
//!
//! cargo run --example paired_comparison

use pvseval::ccl::Connectivity;
use pvseval::metrics::{evaluate_subject, Metric, SubjectMetrics};
use pvseval::phantom::{generate_truth, perturb, Perturbation, PhantomSpec};
use pvseval::stats::{compare_models, FdrFamily};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut a: Vec<SubjectMetrics> = Vec::new();
    let mut b: Vec<SubjectMetrics> = Vec::new();
    for s in 0..15u64 {
        let (truth, _) = generate_truth(&PhantomSpec { n_tubes: 8, seed: s, ..Default::default() })?;
        let id = format!("sub-{s:02}");
        let good = perturb(&truth, Perturbation::DeleteFraction { fraction: 0.1 + 0.01 * s as f64 }, s)?;
        let poor = perturb(&truth, Perturbation::DeleteFraction { fraction: 0.3 }, s)?;
        a.extend(evaluate_subject(&id, &good, &truth, &[], Connectivity::TwentySix)?);
        b.extend(evaluate_subject(&id, &poor, &truth, &[], Connectivity::TwentySix)?);
    }

    let rows = compare_models(&a, &b, &Metric::ALL, 0.05, FdrFamily::PerRegion)?;
    println!("{:<8} {:>3} {:>9} {:>9} {:>10} {:>10} {:>6}", "metric", "n", "median_a", "median_b", "p_raw", "p_fdr", "r");
    for r in rows {
        let f = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.4}"));
        println!(
            "{:<8} {:>3} {:>9} {:>9} {:>10} {:>10} {:>6}{}",
            r.metric.name(),
            r.n,
            f(r.median_a),
            f(r.median_b),
            f(r.p_raw),
            f(r.p_fdr),
            f(r.rank_biserial),
            if r.significant { " *" } else { "" }
        );
    }
    Ok(())
}
