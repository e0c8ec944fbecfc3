//! Mean intensity inside a mask against its one-voxel shell, globally and per cluster.
//!
//! cargo run --example contrast_analysis

use pvseval::ccl::Connectivity;
use pvseval::morphology::{contrast, shell, ContrastMode};
use pvseval::phantom::{generate, PhantomSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for offset in [-20.0, 0.0, 6.0, 30.0] {
        let p = generate(&PhantomSpec { offset, n_tubes: 15, seed: 8, ..Default::default() })?;
        let ring = shell(&p.truth, Connectivity::TwentySix);
        let global = contrast(&p.image, &p.truth, Connectivity::TwentySix, ContrastMode::Global)?;
        let per = contrast(&p.image, &p.truth, Connectivity::TwentySix, ContrastMode::PerCluster)?;
        println!(
            "offset {offset:>5}: mask {:>6.2} shell {:>6.2} |diff| {:>5.2} (shell {} voxels); per cluster {:>5.2} over {}",
            global.mask_mean,
            global.shell_mean,
            global.abs_contrast,
            ring.mask.foreground_count(),
            per.abs_contrast,
            per.clusters
        );
    }
    Ok(())
}
