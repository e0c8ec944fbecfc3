//! Evaluation of 3D binary segmentations of small, thin structures such as
//! enlarged perivascular spaces.
//!
//! The crate covers NIfTI-1 input/output, connected-component labeling,
//! voxel- and cluster-level overlap metrics, mask-versus-surroundings
//! contrast, paired statistical comparison of models, cross-validation
//! bookkeeping and a synthetic phantom generator for known-answer tests.
//!
//! ```
//! use pvseval::prelude::*;
//!
//! let grid = Grid::new([8, 8, 8], [1.0, 1.0, 1.0]).unwrap();
//! let truth = BinaryMask::from_points(grid, &[[1, 1, 1], [2, 2, 2], [6, 6, 6]]).unwrap();
//! let pred = BinaryMask::from_points(grid, &[[1, 1, 1], [5, 5, 1]]).unwrap();
//! let m = &evaluate_subject("s01", &pred, &truth, &[], Connectivity::TwentySix).unwrap()[0];
//! assert_eq!(m.dsc_vox, Some(0.4));
//! assert_eq!(m.sen_num, Some(0.5));
//! ```

pub mod ccl;
pub mod cli;
pub mod harness;
pub mod metrics;
pub mod morphology;
pub mod nifti;
pub mod phantom;
pub mod report;
pub mod stats;
pub mod volume;

pub mod prelude {
    pub use crate::ccl::{label_components, size_histogram, Binning, Connectivity, LabelMap};
    pub use crate::harness::{
        aggregate, evaluate_manifest, losocv_table, make_folds, EvaluatedSubject, FoldSpec,
        GroupBy, LosoFold, Scheme, SubjectRecord,
    };
    pub use crate::metrics::{
        cluster_metrics, evaluate_subject, pearson_r, voxel_metrics, Metric, SubjectMetrics,
    };
    pub use crate::morphology::{contrast, dilate_once, shell, ContrastMode, ContrastStat};
    pub use crate::nifti::{read_mask, read_volume, write_mask, write_volume, Datatype, ReadMode};
    pub use crate::phantom::{generate, perturb, Perturbation, PhantomSpec};
    pub use crate::stats::{bh_fdr, compare_models, wilcoxon_signed_rank, FdrFamily};
    pub use crate::volume::{BinaryMask, Grid, Region, RoiMask, Volume3D};
}
