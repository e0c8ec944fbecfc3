mod common;

use common::{bfs_labels, cube, random_mask, rng, same_partition};
use proptest::prelude::*;
use pvseval::ccl::{component_sizes, label_components, size_histogram, Binning, Connectivity};
use pvseval::volume::{BinaryMask, Grid};

#[test]
fn labels_match_flood_fill_in_scan_order() {
    let mut r = rng(11);
    for &n in &[5usize, 9, 14] {
        for density in [0.05, 0.2, 0.35, 0.6] {
            let m = random_mask(cube(n), density, &mut r);
            for conn in Connectivity::ALL {
                let got = label_components(&m, conn);
                let (want, k) = bfs_labels(m.data(), m.dims(), conn.neighbours());
                assert_eq!(got.component_count(), k);
                assert_eq!(got.labels(), &want[..], "n={n} density={density} conn={conn}");
            }
        }
    }
}

#[test]
fn anisotropic_grids() {
    let mut r = rng(5);
    for dims in [[1, 1, 30], [30, 1, 1], [2, 17, 3], [13, 4, 1]] {
        let g = Grid::new(dims, [0.5, 0.7, 1.2]).unwrap();
        let m = random_mask(g, 0.45, &mut r);
        for conn in Connectivity::ALL {
            let (want, _) = bfs_labels(m.data(), dims, conn.neighbours());
            assert!(same_partition(label_components(&m, conn).labels(), &want));
        }
    }
}

#[test]
fn diagonal_chain_splits_by_connectivity() {
    let g = cube(4);
    let corners = BinaryMask::from_points(g, &[[0, 0, 0], [1, 1, 1], [2, 2, 2]]).unwrap();
    assert_eq!(label_components(&corners, Connectivity::TwentySix).component_count(), 1);
    assert_eq!(label_components(&corners, Connectivity::Eighteen).component_count(), 3);
    let edges = BinaryMask::from_points(g, &[[0, 0, 0], [1, 1, 0], [2, 2, 0]]).unwrap();
    assert_eq!(label_components(&edges, Connectivity::Eighteen).component_count(), 1);
    assert_eq!(label_components(&edges, Connectivity::Six).component_count(), 3);
}

#[test]
fn sizes_sum_to_foreground_and_histogram_normalizes() {
    let m = random_mask(cube(12), 0.2, &mut rng(3));
    let lm = label_components(&m, Connectivity::Six);
    let sizes: Vec<usize> = component_sizes(&lm).into_iter().map(|(_, s)| s).collect();
    assert_eq!(sizes.iter().sum::<usize>(), m.foreground_count());
    for binning in [Binning::Linear, Binning::Log2] {
        let h = size_histogram(&sizes, binning).unwrap();
        let total: f64 = h.iter().map(|b| b.density).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), sizes.len());
    }
}

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (1usize..7, 1usize..7, 1usize..7).prop_flat_map(|(x, y, z)| {
        proptest::collection::vec(any::<bool>(), x * y * z).prop_map(move |bits| {
            BinaryMask::from_bools(Grid::new([x, y, z], [1.0; 3]).unwrap(), bits).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn partition_equals_oracle(m in mask_strategy(), c in 0usize..3) {
        let conn = Connectivity::ALL[c];
        let (want, k) = bfs_labels(m.data(), m.dims(), conn.neighbours());
        let got = label_components(&m, conn);
        prop_assert_eq!(got.component_count(), k);
        prop_assert!(same_partition(got.labels(), &want));
    }

    #[test]
    fn coarser_connectivity_never_merges_more(m in mask_strategy()) {
        let k6 = label_components(&m, Connectivity::Six).component_count();
        let k18 = label_components(&m, Connectivity::Eighteen).component_count();
        let k26 = label_components(&m, Connectivity::TwentySix).component_count();
        prop_assert!(k26 <= k18 && k18 <= k6);
    }
}
