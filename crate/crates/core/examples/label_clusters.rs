//! Labels a phantom's tubes under each connectivity and prints the size histogram.
//!
//! cargo run --example label_clusters

use pvseval::ccl::{component_sizes, label_components, size_histogram, Binning, Connectivity};
use pvseval::phantom::{generate_truth, PhantomSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PhantomSpec { n_tubes: 25, radius: [0.5, 1.5], seed: 3, ..Default::default() };
    let (truth, tubes) = generate_truth(&spec)?;
    println!("{} tubes, {} foreground voxels", tubes.len(), truth.foreground_count());

    for conn in Connectivity::ALL {
        let labels = label_components(&truth, conn);
        println!("{:>2}-connectivity: {} clusters", conn.neighbours(), labels.component_count());
    }

    let labels = label_components(&truth, Connectivity::TwentySix);
    let sizes: Vec<usize> = component_sizes(&labels).into_iter().map(|(_, s)| s).collect();
    println!("\nlog2 size histogram (26-connectivity)");
    for bin in size_histogram(&sizes, Binning::Log2)? {
        println!("[{:>4}, {:>4})  {:>3}  {:.3}", bin.lower, bin.upper, bin.count, bin.density);
    }
    Ok(())
}
