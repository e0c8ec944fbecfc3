use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{internal, CliError, RunConfig};
use super::{AggregateArgs, ClustersArgs, CompareArgs, ContrastArgs, FoldsArgs, MetricsArgs, PhantomArgs};
use crate::ccl::{component_sizes, label_components, size_histogram};
use crate::harness::{
    aggregate as aggregate_records, evaluate_manifest, losocv_table, make_folds, read_manifest,
    sites_in_order, GroupBy, LosoFold, SubjectRecord,
};
use crate::metrics::{evaluate_subject, Metric, MetricsError};
use crate::morphology::{contrast as contrast_of, MorphologyError};
use crate::nifti::{read_mask, read_volume, write_mask, write_volume, Datatype, ReadMode};
use crate::phantom::{generate, perturb, Perturbation, PhantomSpec};
use crate::report::{
    read_json, read_subject_csv, write_aggregate_csv, write_contrast_csv, write_histogram_csv,
    write_json, write_loso_csv, write_sizes_csv, write_stats_csv, write_subject_csv, ContrastRow,
};
use crate::stats::compare_models;
use crate::volume::{wm_bg_rois, BinaryMask, Region, RoiMask, VolumeUnits};

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn metrics_err(e: MetricsError) -> CliError {
    CliError::Input(e.to_string())
}

/// File name without `.nii` / `.nii.gz`.
fn stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.trim_end_matches(".gz").trim_end_matches(".nii").to_string()
}

fn check_pair(a: &BinaryMask, a_path: &Path, b: &BinaryMask, b_path: &Path) -> Result<(), CliError> {
    a.grid().check_compatible(b.grid()).map_err(|e| {
        CliError::Input(format!("{} vs {}: {e}", a_path.display(), b_path.display()))
    })
}

pub fn metrics(cfg: &RunConfig, a: MetricsArgs) -> Result<(), CliError> {
    let pred = read_mask(&a.pred)?;
    let reference = read_mask(&a.reference)?;
    check_pair(&pred, &a.pred, &reference, &a.reference)?;
    let mut rois = Vec::new();
    let wm = a.roi_wm.as_ref().map(read_mask).transpose()?;
    let bg = a.roi_bg.as_ref().map(read_mask).transpose()?;
    for (m, p) in [(&wm, &a.roi_wm), (&bg, &a.roi_bg)] {
        if let (Some(m), Some(p)) = (m, p) {
            check_pair(&reference, &a.reference, m, p)?;
        }
    }
    match (wm, bg) {
        (Some(wm), Some(bg)) => {
            let (wm, bg) = wm_bg_rois(&wm, &bg)?;
            rois.extend([wm, bg]);
        }
        (Some(wm), None) => rois.push(RoiMask::new(Region::Wm, wm)),
        (None, Some(bg)) => rois.push(RoiMask::new(Region::Bg, bg)),
        (None, None) => {}
    }
    let records = evaluate_subject(&a.subject_id, &pred, &reference, &rois, cfg.connectivity)
        .map_err(metrics_err)?;

    let mut contrast_rows = Vec::new();
    if let Some(image_path) = &a.image {
        let image = read_volume(image_path, ReadMode::Intensity)?;
        let modality = stem(image_path);
        for (label, mask) in [("manual", &reference), ("algo", &pred)] {
            match contrast_of(&image, mask, cfg.connectivity, Default::default()) {
                Ok(stat) => contrast_rows.push(ContrastRow {
                    subject_id: a.subject_id.clone(),
                    modality: modality.clone(),
                    mask: label.into(),
                    stat,
                }),
                Err(MorphologyError::EmptyMask | MorphologyError::EmptyShell) => {}
                Err(e) => return Err(CliError::Input(format!("{}: {e}", image_path.display()))),
            }
        }
        write_contrast_csv(out(cfg, "contrast.csv"), &contrast_rows).map_err(internal)?;
    }

    write_subject_csv(out(cfg, "metrics.csv"), &records).map_err(internal)?;
    write_json(
        out(cfg, "metrics.json"),
        &json!({ "config": cfg, "subjects": records, "contrast": contrast_rows }),
    )
    .map_err(internal)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LosoFoldFile {
    model: String,
    held_out: String,
    internal: PathBuf,
    external: PathBuf,
}

pub fn aggregate(cfg: &RunConfig, a: AggregateArgs) -> Result<(), CliError> {
    if a.manifest.is_none() && a.loso_folds.is_none() {
        return Err(CliError::Input("aggregate needs --manifest and/or --loso-folds".into()));
    }
    if let Some(manifest) = &a.manifest {
        let records = read_manifest(manifest)?;
        let evaluated = evaluate_manifest(&records, cfg.connectivity, cfg.threads)?;
        let subjects: Vec<_> = evaluated.iter().map(|e| e.metrics.clone()).collect();
        let scheme = a.scheme.as_deref();
        let mut reports = aggregate_records(&evaluated, GroupBy::Region, scheme);
        reports.extend(aggregate_records(&evaluated, GroupBy::RegionSite, scheme));
        write_subject_csv(out(cfg, "subjects.csv"), &subjects).map_err(internal)?;
        write_json(out(cfg, "subjects.json"), &json!({ "config": cfg, "subjects": evaluated }))
            .map_err(internal)?;
        write_aggregate_csv(out(cfg, "aggregate.csv"), &reports).map_err(internal)?;
        write_json(out(cfg, "aggregate.json"), &json!({ "config": cfg, "reports": reports }))
            .map_err(internal)?;
    }
    if let Some(path) = &a.loso_folds {
        let entries: Vec<LosoFoldFile> = read_json(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let mut folds = Vec::new();
        for e in &entries {
            let internal_recs = read_subject_csv(resolve(&e.internal))?;
            let external_recs = read_subject_csv(resolve(&e.external))?;
            folds.extend(LosoFold::from_records(&e.model, &e.held_out, &internal_recs, &external_recs));
        }
        let sites = sites_in_order(entries.iter().map(|e| e.held_out.as_str()));
        let mut tables = Vec::new();
        for metric in Metric::ALL {
            let table = losocv_table(&folds, &sites, metric)?;
            write_loso_csv(out(cfg, &format!("loso_{}.csv", metric.name())), &table, 4)
                .map_err(internal)?;
            tables.push(table);
        }
        write_json(out(cfg, "loso.json"), &json!({ "config": cfg, "folds": folds, "tables": tables }))
            .map_err(internal)?;
    }
    Ok(())
}

pub fn compare(cfg: &RunConfig, a: CompareArgs) -> Result<(), CliError> {
    let report_a = read_subject_csv(&a.a)?;
    let report_b = read_subject_csv(&a.b)?;
    let metrics = if a.metrics.is_empty() { Metric::ALL.to_vec() } else { a.metrics.clone() };
    let rows = compare_models(&report_a, &report_b, &metrics, cfg.fdr_q, cfg.fdr_family)?;
    write_stats_csv(out(cfg, "compare.csv"), &rows).map_err(internal)?;
    write_json(
        out(cfg, "compare.json"),
        &json!({ "config": cfg, "a": a.a, "b": a.b, "rows": rows }),
    )
    .map_err(internal)
}

pub fn contrast(cfg: &RunConfig, a: ContrastArgs) -> Result<(), CliError> {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    if let Some(manifest) = &a.manifest {
        for rec in read_manifest(manifest)? {
            let Some(image_path) = &rec.image_path else {
                return Err(CliError::Input(format!(
                    "{}: subject '{}' has no image_path",
                    manifest.display(),
                    rec.subject_id
                )));
            };
            let image = read_volume(image_path, ReadMode::Intensity)?;
            for (label, path) in [("manual", &rec.ref_path), ("algo", &rec.pred_path)] {
                let mask = read_mask(path)?;
                match contrast_of(&image, &mask, cfg.connectivity, a.mode) {
                    Ok(stat) => rows.push(ContrastRow {
                        subject_id: rec.subject_id.clone(),
                        modality: a.modality.clone(),
                        mask: label.into(),
                        stat,
                    }),
                    Err(MorphologyError::EmptyMask | MorphologyError::EmptyShell) => {
                        skipped.push(json!({ "subject_id": rec.subject_id, "mask": label }))
                    }
                    Err(e) => {
                        return Err(CliError::Input(format!("subject '{}': {e}", rec.subject_id)))
                    }
                }
            }
        }
    } else {
        let image_path = a.image.as_ref().expect("clap enforces --image");
        if a.masks.is_empty() {
            return Err(CliError::Input("contrast needs at least one --mask".into()));
        }
        let image = read_volume(image_path, ReadMode::Intensity)?;
        for path in &a.masks {
            let mask = read_mask(path)?;
            let stat = contrast_of(&image, &mask, cfg.connectivity, a.mode)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            rows.push(ContrastRow {
                subject_id: a.subject_id.clone(),
                modality: a.modality.clone(),
                mask: stem(path),
                stat,
            });
        }
    }
    write_contrast_csv(out(cfg, "contrast.csv"), &rows).map_err(internal)?;
    write_json(
        out(cfg, "contrast.json"),
        &json!({ "config": cfg, "rows": rows, "skipped": skipped }),
    )
    .map_err(internal)
}

#[derive(Serialize)]
struct MaskClusters {
    subject_id: String,
    clusters: usize,
    voxels: usize,
}

pub fn clusters(cfg: &RunConfig, a: ClustersArgs) -> Result<(), CliError> {
    let inputs: Vec<(String, PathBuf)> = match &a.manifest {
        Some(manifest) => {
            let pick: fn(&SubjectRecord) -> &PathBuf = match a.source.as_str() {
                "ref" => |r| &r.ref_path,
                "pred" => |r| &r.pred_path,
                other => {
                    return Err(CliError::Input(format!("--source must be ref or pred, got '{other}'")))
                }
            };
            read_manifest(manifest)?
                .iter()
                .map(|r| (r.subject_id.clone(), pick(r).clone()))
                .collect()
        }
        None => a.masks.iter().map(|p| (stem(p), p.clone())).collect(),
    };

    let mut sizes = Vec::new();
    let mut per_mask = Vec::new();
    let mut all = Vec::new();
    for (id, path) in &inputs {
        let mask = read_mask(path)?;
        let voxel_volume = match cfg.units {
            VolumeUnits::Voxels => 1.0,
            VolumeUnits::Mm3 => mask.grid().voxel_volume(),
        };
        let labels = label_components(&mask, cfg.connectivity);
        for (label, size) in component_sizes(&labels) {
            sizes.push((id.clone(), label, size, size as f64 * voxel_volume));
            all.push(size);
        }
        per_mask.push(MaskClusters {
            subject_id: id.clone(),
            clusters: labels.component_count(),
            voxels: mask.foreground_count(),
        });
    }
    // a set of empty masks has no distribution to report
    let histogram = if all.is_empty() {
        Vec::new()
    } else {
        size_histogram(&all, a.binning).map_err(internal)?
    };
    write_sizes_csv(out(cfg, "sizes.csv"), &sizes).map_err(internal)?;
    write_histogram_csv(out(cfg, "histogram.csv"), &histogram).map_err(internal)?;
    write_json(
        out(cfg, "clusters.json"),
        &json!({ "config": cfg, "binning": a.binning, "masks": per_mask, "histogram": histogram }),
    )
    .map_err(internal)
}

/// Parses `delete:F`, `dilate`, `drop:K` or `translate:X,Y,Z`.
pub fn parse_perturbation(s: &str, cfg: &RunConfig) -> Result<Perturbation, CliError> {
    let bad = || CliError::Input(format!("cannot parse perturbation '{s}'"));
    let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "delete" => Ok(Perturbation::DeleteFraction { fraction: arg.parse().map_err(|_| bad())? }),
        "dilate" if arg.is_empty() => Ok(Perturbation::DilateOnce { connectivity: cfg.connectivity }),
        "drop" => Ok(Perturbation::DropClusters { count: arg.parse().map_err(|_| bad())? }),
        "translate" => {
            let v: Vec<i64> = arg
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| bad())?;
            let offset: [i64; 3] = v.try_into().map_err(|_| bad())?;
            Ok(Perturbation::Translate { offset })
        }
        _ => Err(bad()),
    }
}

pub fn phantom(cfg: &RunConfig, a: PhantomArgs) -> Result<(), CliError> {
    let mut spec: PhantomSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => PhantomSpec::default(),
    };
    if let Some(d) = a.dims {
        spec.dims = d;
    }
    if let Some(s) = a.spacing {
        spec.spacing = s;
    }
    if let Some(n) = a.n_tubes {
        spec.n_tubes = n;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(o) = a.offset {
        spec.offset = o;
    }
    if let Some(sd) = a.noise_sd {
        spec.background_sd = sd;
    }
    let perturbation = a.perturb.as_deref().map(|s| parse_perturbation(s, cfg)).transpose()?;

    let ph = generate(&spec)?;
    let ext = if a.gzip { "nii.gz" } else { "nii" };
    let image_name = format!("image.{ext}");
    let truth_name = format!("truth.{ext}");
    write_volume(&ph.image, out(cfg, &image_name), Datatype::F32, a.gzip).map_err(internal)?;
    write_mask(&ph.truth, out(cfg, &truth_name), a.gzip).map_err(internal)?;
    let mut pred_name = None;
    if let Some(p) = perturbation {
        let pred = perturb(&ph.truth, p, a.perturb_seed.unwrap_or(spec.seed))?;
        let name = format!("pred.{ext}");
        write_mask(&pred, out(cfg, &name), a.gzip).map_err(internal)?;
        pred_name = Some(name);
    }
    write_json(
        out(cfg, "phantom.json"),
        &json!({
            "config": cfg,
            "spec": spec,
            "cluster_count": ph.cluster_count,
            "truth_voxels": ph.truth.foreground_count(),
            "tubes": ph.tubes,
            "perturbation": perturbation,
            "files": { "image": image_name, "truth": truth_name, "pred": pred_name },
        }),
    )
    .map_err(internal)
}

pub fn folds(cfg: &RunConfig, a: FoldsArgs) -> Result<(), CliError> {
    let manifest = read_manifest(&a.manifest)?;
    let spec = make_folds(&manifest, a.scheme, a.seed)?;
    let mut value = serde_json::to_value(&spec).map_err(internal)?;
    value["config"] = serde_json::to_value(cfg).map_err(internal)?;
    write_json(out(cfg, "folds.json"), &value).map_err(internal)
}
