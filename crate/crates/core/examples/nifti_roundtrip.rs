//! Writes a small intensity volume in every supported datatype, reads it back
//! and prints what survived.
//!
//! cargo run --example nifti_roundtrip

use pvseval::nifti::{read_mask, read_volume_with_header, write_volume, Datatype, ReadMode};
use pvseval::volume::{Grid, Volume3D};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile_dir()?;
    let grid = Grid::new([16, 12, 8], [0.9, 0.9, 1.2])?;
    let values: Vec<f64> = (0..grid.len()).map(|i| (i % 200) as f64).collect();
    let vol = Volume3D::new(grid, values)?;

    for dt in Datatype::ALL {
        let path = dir.join(format!("volume_{dt:?}.nii.gz").to_lowercase());
        write_volume(&vol, &path, dt, true)?;
        let (header, back) = read_volume_with_header(&path, ReadMode::Intensity)?;
        println!(
            "{dt:?}: datatype {} bitpix {} dims {:?} spacing {:.2?} identical={}",
            header.datatype_code,
            header.bitpix,
            back.dims(),
            back.grid().spacing,
            back.data() == vol.data()
        );
    }

    let mask = read_mask(dir.join("volume_u8.nii.gz"))?;
    println!("as a mask: {} of {} voxels are foreground", mask.foreground_count(), mask.len());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("pvseval-nifti-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
