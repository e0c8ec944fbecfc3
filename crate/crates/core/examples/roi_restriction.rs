//! Splits the grid into white matter and basal ganglia and evaluates each
//! region separately. The basal ganglia are carved out of the white matter
//! before evaluation.
//!
//! cargo run --example roi_restriction

use pvseval::ccl::Connectivity;
use pvseval::metrics::evaluate_subject;
use pvseval::phantom::{generate_truth, perturb, Perturbation, PhantomSpec};
use pvseval::volume::{wm_bg_rois, BinaryMask};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PhantomSpec { n_tubes: 20, seed: 21, ..Default::default() };
    let (truth, _) = generate_truth(&spec)?;
    let pred = perturb(&truth, Perturbation::DeleteFraction { fraction: 0.25 }, 1)?;

    let grid = *truth.grid();
    let [nx, ny, nz] = grid.dims;
    let ball = |radius: f64| {
        let data = (0..grid.len())
            .map(|i| {
                let [x, y, z] = grid.coords(i);
                let d = |v: usize, n: usize| (v as f64 + 0.5) / n as f64 - 0.5;
                d(x, nx).powi(2) + d(y, ny).powi(2) + d(z, nz).powi(2) < radius * radius
            })
            .collect();
        BinaryMask::from_bools(grid, data)
    };
    let (wm, bg) = wm_bg_rois(&ball(0.45)?, &ball(0.2)?)?;
    println!("WM ROI {} voxels, BG ROI {} voxels", wm.mask.foreground_count(), bg.mask.foreground_count());

    for rec in evaluate_subject("demo", &pred, &truth, &[wm, bg], Connectivity::TwentySix)? {
        println!(
            "{:<3} reference voxels {:>5}  clusters {:>2}  dsc_vox {}  sen_num {}",
            rec.region.as_str(),
            rec.voxels.manual,
            rec.clusters.n_manual,
            show(rec.dsc_vox),
            show(rec.sen_num)
        );
    }
    Ok(())
}

fn show(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.3}"))
}
