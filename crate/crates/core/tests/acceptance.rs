//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use pvseval::ccl::{label_components, Connectivity};
use pvseval::harness::{
    evaluate_manifest, losocv_table, make_folds, LosoFold, Scheme, SubjectRecord,
};
use pvseval::metrics::{evaluate_subject, Metric, SubjectMetrics};
use pvseval::morphology::{contrast, ContrastMode};
use pvseval::nifti::{
    decode_volume, read_volume_with_header, write_mask, write_volume, Datatype, ReadMode,
};
use pvseval::phantom::{generate, generate_truth, perturb, Perturbation, PhantomSpec};
use pvseval::stats::{bh_fdr, wilcoxon_signed_rank, wilcoxon_signed_rank_with, PValueMethod};
use pvseval::volume::{wm_bg_rois, BinaryMask, Grid, Region, Volume3D};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("{what} took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn ccl_oracle() -> Check {
    let start = Instant::now();
    let mut r = rng(1001);
    let mut compared = 0;
    for n in [8usize, 12, 16] {
        for conn in Connectivity::ALL {
            for _ in 0..50 {
                let density = r.random_range(0.05..0.6);
                let m = random_mask(cube(n), density, &mut r);
                let got = label_components(&m, conn);
                let (want, k) = bfs_labels(m.data(), m.dims(), conn.neighbours());
                ensure(got.component_count() == k && same_partition(got.labels(), &want), || {
                    format!("partition differs at {n}^3, conn {conn}, density {density:.3}")
                })?;
                compared += 1;
            }
        }
    }
    let t = start.elapsed();
    within(t, 5.0, "labeling")?;
    Ok(format!("{compared} masks identical to BFS flood fill in {:.3} s", t.as_secs_f64()))
}

fn eval(pred: &BinaryMask, reference: &BinaryMask) -> SubjectMetrics {
    evaluate_subject("s", pred, reference, &[], Connectivity::TwentySix)
        .unwrap()
        .remove(0)
}

fn metric_identities() -> Check {
    let mut r = rng(2002);
    let mut harmonic_checked = 0;
    for case in 0..200 {
        let dims = [r.random_range(2..12), r.random_range(2..12), r.random_range(1..10)];
        let g = Grid::new(dims, [1.0; 3]).unwrap();
        let a = random_mask(g, r.random_range(0.0..0.5), &mut r);
        let b = random_mask(g, r.random_range(0.0..0.5), &mut r);
        let ab = eval(&a, &b);
        let ba = eval(&b, &a);
        let brute = brute_metrics(a.data(), b.data(), dims, 26);
        let got = [ab.dsc_vox, ab.sen_vox, ab.ppv_vox, ab.dsc_num, ab.sen_num, ab.ppv_num];
        let want = [brute.dsc_vox, brute.sen_vox, brute.ppv_vox, brute.dsc_num, brute.sen_num, brute.ppv_num];
        ensure(got == want, || format!("case {case}: {got:?} != brute force {want:?}"))?;
        for m in Metric::ALL {
            if let Some(v) = ab.get(m) {
                ensure((0.0..=1.0).contains(&v), || format!("case {case}: {m} = {v}"))?;
            }
        }
        ensure(ab.dsc_vox == ba.dsc_vox && ab.dsc_num == ba.dsc_num, || {
            format!("case {case}: Dice not symmetric")
        })?;
        ensure(ab.sen_vox == ba.ppv_vox && ab.ppv_vox == ba.sen_vox, || {
            format!("case {case}: voxel role swap fails")
        })?;
        ensure(ab.sen_num == ba.ppv_num && ab.ppv_num == ba.sen_num, || {
            format!("case {case}: cluster role swap fails")
        })?;
        if let (Some(s), Some(p)) = (ab.sen_vox, ab.ppv_vox) {
            if s > 0.0 && p > 0.0 {
                let h = 2.0 * s * p / (s + p);
                ensure((ab.dsc_vox.unwrap() - h).abs() <= 1e-12, || {
                    format!("case {case}: dsc {} vs harmonic {h}", ab.dsc_vox.unwrap())
                })?;
                harmonic_checked += 1;
            }
        }
    }
    Ok(format!("200 pairs, harmonic-mean identity checked on {harmonic_checked}"))
}

fn analytic_perturbation() -> Check {
    let mut r = rng(3003);
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let spec = PhantomSpec {
            dims: [r.random_range(24..48), r.random_range(24..48), r.random_range(16..32)],
            n_tubes: r.random_range(2..7),
            seed: case,
            ..Default::default()
        };
        let (truth, tubes) = generate_truth(&spec).map_err(|e| e.to_string())?;
        let f: f64 = r.random_range(0.0..1.0);
        let pred = perturb(&truth, Perturbation::DeleteFraction { fraction: f }, case).unwrap();
        let n = truth.foreground_count();
        let deleted = n - pred.foreground_count();
        ensure(deleted == (f * n as f64).round() as usize, || {
            format!("case {case}: deleted {deleted} of {n} for f = {f}")
        })?;
        let fp = deleted as f64 / n as f64;
        let dsc = eval(&pred, &truth).dsc_vox.unwrap();
        let err = (dsc - 2.0 * (1.0 - fp) / (2.0 - fp)).abs();
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("case {case}: dsc {dsc}, f' {fp}"))?;

        let big_k = tubes.len();
        let k = r.random_range(0..=big_k);
        let dropped = perturb(&truth, Perturbation::DropClusters { count: k }, case).unwrap();
        let sen_num = eval(&dropped, &truth).sen_num.unwrap();
        let want = (big_k - k) as f64 / big_k as f64;
        ensure(sen_num == want, || format!("case {case}: sen_num {sen_num}, expected {want}"))?;
    }
    Ok(format!("100 deletion cases, max |dsc - 2(1-f')/(2-f')| = {worst:.1e}; drop_clusters exact"))
}

fn wilcoxon_exactness() -> Check {
    let mut r = rng(4004);
    let mut compared = 0;
    for n in 1..=12 {
        for _ in 0..40 {
            let d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
            let zeros = vec![0.0; n];
            let (ranks, w) = signed_ranks(&d);
            let p = wilcoxon_signed_rank(&d, &zeros).unwrap().p_value;
            let want = enumerate_wilcoxon_p(&ranks, w);
            ensure((p - want).abs() <= 1e-12, || format!("n = {n}: p {p} vs enumeration {want}"))?;
            compared += 1;
        }
    }
    let p5 = wilcoxon_signed_rank(&[0.5, 1.0, 1.5, 2.0, 2.5], &[0.0; 5]).unwrap().p_value;
    ensure(p5 == 0.0625, || format!("all-positive n = 5 gives {p5}"))?;

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let shift: f64 = r.random_range(-0.6..0.6);
        let d: Vec<f64> = (0..20).map(|_| shift + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)).collect();
        let (ranks, w) = signed_ranks(&d);
        let approx = wilcoxon_signed_rank_with(&d, &[0.0; 20], PValueMethod::NormalApprox)
            .unwrap()
            .p_value;
        worst = worst.max((approx - enumerate_wilcoxon_p(&ranks, w)).abs());
    }
    ensure(worst <= 0.01, || format!("normal approximation off by {worst}"))?;
    Ok(format!("{compared} exact cases within 1e-12; n=5 p=0.0625; normal approx max error {worst:.4} at n=20"))
}

fn bh_correctness() -> Check {
    let start = Instant::now();
    let adj = bh_fdr(&[0.01, 0.02, 0.03]).unwrap();
    ensure(adj.iter().all(|a| (a - 0.03).abs() < 1e-15), || format!("got {adj:?}"))?;
    let mut r = rng(5005);
    for v in 0..1000 {
        let m = r.random_range(1..60);
        let p: Vec<f64> = (0..m).map(|_| r.random_range(1e-9..=1.0)).collect();
        let adj = bh_fdr(&p).unwrap();
        ensure(adj.iter().zip(&p).all(|(a, raw)| a >= raw), || format!("vector {v}: p_fdr < p_raw"))?;
    }

    let datasets = 1000u64;
    let mut rejections = 0u64;
    for _ in 0..datasets {
        let a: Vec<f64> = (0..20).map(|_| StandardNormal.sample(&mut r)).collect();
        let b: Vec<f64> = (0..20).map(|_| StandardNormal.sample(&mut r)).collect();
        if wilcoxon_signed_rank(&a, &b).unwrap().p_value < 0.05 {
            rejections += 1;
        }
    }
    let (lo, hi) = binomial_band(datasets, 0.05, 0.99);
    ensure((lo..=hi).contains(&rejections), || {
        format!("null rejection count {rejections} outside 99% band [{lo}, {hi}]")
    })?;
    let t = start.elapsed();
    within(t, 60.0, "BH and calibration")?;
    Ok(format!(
        "reference vector exact; 1000 vectors dominate; null rate {:.3} in [{:.3}, {:.3}]; {:.2} s",
        rejections as f64 / datasets as f64,
        lo as f64 / datasets as f64,
        hi as f64 / datasets as f64,
        t.as_secs_f64()
    ))
}

fn nifti_round_trip() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng(6006);
    let grid = Grid::new([9, 7, 5], [0.7, 0.8, 1.1]).unwrap();
    for dt in Datatype::ALL {
        let values: Vec<f64> = (0..grid.len())
            .map(|_| match dt {
                Datatype::U8 => r.random_range(0..=255u8) as f64,
                Datatype::I16 => r.random_range(i16::MIN..=i16::MAX) as f64,
                Datatype::I32 => r.random_range(i32::MIN..=i32::MAX) as f64,
                Datatype::F32 => r.random_range(-1e5f32..1e5) as f64,
                Datatype::F64 => StandardNormal.sample(&mut r),
            })
            .collect();
        let vol = Volume3D::new(grid, values.clone()).unwrap();
        for gzip in [false, true] {
            let path = dir.path().join(format!("v{}{}.nii", dt.code(), gzip));
            write_volume(&vol, &path, dt, gzip).map_err(|e| e.to_string())?;
            let (h, back) = read_volume_with_header(&path, ReadMode::Intensity).map_err(|e| e.to_string())?;
            ensure(back.data() == &values[..], || format!("{dt:?}: voxel data changed"))?;
            ensure(h.dim[..4] == [3, 9, 7, 5], || format!("{dt:?}: dims {:?}", h.dim))?;
            ensure(h.pixdim[1..4] == [0.7f32, 0.8, 1.1], || format!("{dt:?}: pixdim {:?}", h.pixdim))?;
            ensure(h.datatype_code == dt.code(), || format!("{dt:?}: datatype {}", h.datatype_code))?;
        }
        let code = dt.code();
        let le = handmade_nifti([9, 7, 5], [0.7, 0.8, 1.1], code, dt.bitpix(), false, &encode_elements(&values, code, false));
        let be = handmade_nifti([9, 7, 5], [0.7, 0.8, 1.1], code, dt.bitpix(), true, &encode_elements(&values, code, true));
        let (hl, vl) = decode_volume(&le, ReadMode::Intensity).map_err(|e| e.to_string())?;
        let (hb, vb) = decode_volume(&be, ReadMode::Intensity).map_err(|e| e.to_string())?;
        ensure(vl == vb && vl.data() == &values[..], || format!("{dt:?}: byte-swapped data differs"))?;
        ensure(hl.dim == hb.dim && hl.pixdim == hb.pixdim && hl.datatype_code == hb.datatype_code, || {
            format!("{dt:?}: byte-swapped header differs")
        })?;
    }
    Ok("u8, i16, i32, f32, f64 exact (plain and gzip); byte-swapped files identical".into())
}

fn contrast_sanity() -> Check {
    let mut worst_z = 0.0f64;
    for seed in 0..20 {
        let spec = PhantomSpec { offset: 6.0, background_sd: 1.0, seed, ..Default::default() };
        let p = generate(&spec).map_err(|e| e.to_string())?;
        let c = contrast(&p.image, &p.truth, Connectivity::TwentySix, ContrastMode::Global)
            .map_err(|e| e.to_string())?;
        let se = 1.0 / (c.mask_voxels.min(c.shell_voxels) as f64).sqrt();
        let z = (c.abs_contrast - 6.0).abs() / se;
        worst_z = worst_z.max(z);
        ensure(z <= 3.0, || format!("seed {seed}: contrast {:.3}, {z:.2} SE from 6", c.abs_contrast))?;
    }
    Ok(format!("20 seeds, largest deviation {worst_z:.2} SE"))
}

const SITES: [&str; 6] = ["ADNI", "AF", "ASC", "CGS", "FTD", "MCIS"];
const PER_SITE: [usize; 6] = [9, 7, 7, 6, 6, 5];

fn synthetic(id: &str, r: &mut rand_chacha::ChaCha8Rng) -> SubjectMetrics {
    let mut v = || Some(r.random_range(0.2..0.95));
    SubjectMetrics {
        subject_id: id.into(),
        region: Region::Wm,
        connectivity: Connectivity::TwentySix,
        dsc_vox: v(),
        sen_vox: v(),
        ppv_vox: v(),
        dsc_num: v(),
        sen_num: v(),
        ppv_num: v(),
        voxels: Default::default(),
        clusters: Default::default(),
        vol_manual_mm3: 0.0,
        vol_algo_mm3: 0.0,
        flags: Default::default(),
    }
}

fn harness_shapes() -> Check {
    let mut r = rng(7007);
    let mut manifest = Vec::new();
    let mut metrics = Vec::new();
    for (site, &n) in SITES.iter().zip(&PER_SITE) {
        for i in 0..n {
            let id = format!("{site}-{i}");
            manifest.push(SubjectRecord {
                subject_id: id.clone(),
                site: site.to_string(),
                pred_path: "p".into(),
                ref_path: "r".into(),
                roi_wm_path: None,
                roi_bg_path: None,
                image_path: None,
            });
            metrics.push(synthetic(&id, &mut r));
        }
    }
    ensure(manifest.len() == 40, || "manifest size".into())?;

    let loso = make_folds(&manifest, Scheme::Losocv, 0).map_err(|e| e.to_string())?;
    let mut folds = Vec::new();
    for site in &loso.folds {
        let members = loso.members(site);
        let (ext, int): (Vec<_>, Vec<_>) = metrics
            .iter()
            .cloned()
            .partition(|m| members.contains(&m.subject_id.as_str()));
        folds.extend(LosoFold::from_records("model", site, &int, &ext));
    }
    for metric in Metric::ALL {
        let t = losocv_table(&folds, &loso.folds, metric).map_err(|e| e.to_string())?;
        ensure(t.sites.len() == 6 && t.rows.iter().all(|row| row.external.len() == 6), || {
            format!("{metric}: table is not 6 external columns wide")
        })?;
        ensure(t.rows.len() == 6, || format!("{metric}: {} rows", t.rows.len()))?;
        let values: Vec<f64> = metrics.iter().map(|m| m.get(metric).unwrap()).collect();
        let (mean, sd) = two_pass_mean_sd(&values);
        let avg = t.averages[0].cell;
        ensure(avg.n == 40, || format!("{metric}: pooled n {}", avg.n))?;
        let (dm, ds) = ((avg.mean.unwrap() - mean).abs(), (avg.sd.unwrap() - sd).abs());
        ensure(dm <= 1e-12 && ds <= 1e-12, || {
            format!("{metric}: pooled ({}, {}) vs hand pooling ({mean}, {sd})", avg.mean.unwrap(), avg.sd.unwrap())
        })?;
    }

    let a = make_folds(&manifest, Scheme::FiveFoldCv, 99).map_err(|e| e.to_string())?;
    let b = make_folds(&manifest, Scheme::FiveFoldCv, 99).map_err(|e| e.to_string())?;
    ensure(a == b, || "5FCV replay differs".into())?;
    let sizes: Vec<usize> = a.folds.iter().map(|f| a.members(f).len()).collect();
    ensure(sizes == [8; 5], || format!("5FCV sizes {sizes:?}"))?;
    for fold in &a.folds {
        for (site, &n) in SITES.iter().zip(&PER_SITE) {
            let c = a.assignments.iter().filter(|x| &x.fold == fold && x.site == *site).count();
            ensure((c as f64 - n as f64 / 5.0).abs() <= 1.0, || format!("{fold}/{site}: {c}"))?;
        }
    }
    Ok("LOSOCV: 6 external columns, pooled averages match hand pooling within 1e-12; 5FCV {8,8,8,8,8}, replayable".into())
}

/// A pair shaped like a full-resolution scan: a few hundred thin tubes,
/// a prediction missing some and adding others, and WM/BG ROIs.
fn full_size_subject(seed: u64) -> (BinaryMask, BinaryMask, BinaryMask, BinaryMask) {
    let spec = PhantomSpec { dims: [320, 300, 208], n_tubes: 400, seed, ..Default::default() };
    let (truth, _) = generate_truth(&spec).unwrap();
    let missed = perturb(&truth, Perturbation::DropClusters { count: 60 }, seed).unwrap();
    let thinned = perturb(&missed, Perturbation::DeleteFraction { fraction: 0.15 }, seed).unwrap();
    let extra = generate_truth(&PhantomSpec { n_tubes: 50, seed: seed + 1000, ..spec }).unwrap().0;
    let pred = thinned.union(&extra).unwrap();
    let g = *truth.grid();
    let [nx, ny, nz] = g.dims;
    let mut wm = vec![false; g.len()];
    let mut bg = vec![false; g.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = g.index(x, y, z);
                let (dx, dy, dz) = (x as f64 / nx as f64 - 0.5, y as f64 / ny as f64 - 0.5, z as f64 / nz as f64 - 0.5);
                let r2 = dx * dx + dy * dy + dz * dz;
                wm[i] = r2 < 0.2;
                bg[i] = r2 < 0.01;
            }
        }
    }
    (
        pred,
        truth,
        BinaryMask::from_bools(g, wm).unwrap(),
        BinaryMask::from_bools(g, bg).unwrap(),
    )
}

fn performance() -> Check {
    let (pred, truth, raw_wm, bg) = full_size_subject(1);
    let (wm, bg_roi) = wm_bg_rois(&raw_wm, &bg).unwrap();
    let rois = [wm, bg_roi];
    let start = Instant::now();
    let recs = evaluate_subject("s", &pred, &truth, &[], Connectivity::TwentySix).unwrap();
    let whole = start.elapsed();
    let start = Instant::now();
    let roi_recs = evaluate_subject("s", &pred, &truth, &rois, Connectivity::TwentySix).unwrap();
    let with_rois = start.elapsed();
    ensure(recs[0].clusters.n_manual == 400 && roi_recs.len() == 2, || "unexpected evaluation".into())?;
    within(whole, 2.0, "one 320x300x208 pair")?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let distinct = 4;
    for s in 0..distinct {
        let (pred, truth, raw_wm, bg) = if s == 1 { (pred.clone(), truth.clone(), raw_wm.clone(), bg.clone()) } else { full_size_subject(s as u64 + 10) };
        for (name, m) in [("pred", &pred), ("ref", &truth), ("wm", &raw_wm), ("bg", &bg)] {
            write_mask(m, dir.path().join(format!("{name}{s}.nii.gz")), true).map_err(|e| e.to_string())?;
        }
    }
    let manifest: Vec<SubjectRecord> = (0..40)
        .map(|i| {
            let s = i % distinct;
            let p = |name: &str| dir.path().join(format!("{name}{s}.nii.gz"));
            SubjectRecord {
                subject_id: format!("sub{i:02}"),
                site: SITES[i % 6].into(),
                pred_path: p("pred"),
                ref_path: p("ref"),
                roi_wm_path: Some(p("wm")),
                roi_bg_path: Some(p("bg")),
                image_path: None,
            }
        })
        .collect();
    let start = Instant::now();
    let out = evaluate_manifest(&manifest, Connectivity::TwentySix, 4).map_err(|e| e.to_string())?;
    let batch = start.elapsed();
    ensure(out.len() == 80, || format!("{} records", out.len()))?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    within(batch, 30.0, &format!("40 subjects with 4 workers on {cores} core(s)"))?;
    Ok(format!(
        "one pair {:.2} s ({:.2} s with WM/BG ROIs); 40 subjects with ROIs {:.1} s on {cores} core(s)",
        whole.as_secs_f64(),
        with_rois.as_secs_f64(),
        batch.as_secs_f64()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("ccl-oracle-equivalence", ccl_oracle),
        ("metric-identities", metric_identities),
        ("analytic-perturbation", analytic_perturbation),
        ("wilcoxon-exactness", wilcoxon_exactness),
        ("bh-correctness", bh_correctness),
        ("nifti-round-trip", nifti_round_trip),
        ("contrast-sanity", contrast_sanity),
        ("harness-shapes", harness_shapes),
        ("performance", performance),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
