//! Subcommand handlers, each a thin wrapper over the library pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ctharm_core::metrics::{read_ccc_csv, write_ccc_csv, CCCReport};
use ctharm_core::phantom::{
    write_dataset, DatasetManifest, KernelSim, PhantomTemplate,
};
use ctharm_core::pipeline::{
    evaluate, standardize, train_phase1, train_phase2, CropPolicy, PipelineError, RoiPolicy,
    RunConfig, RunManifest,
};
use ctharm_core::radiomics::{extract_all, write_feature_csv, ExtractConfig};
use ctharm_core::volume::{load_volume, roi_from_sphere, roi_from_window, save_volume, HURange};

use crate::cli::{
    resolve_run_config, EvaluateArgs, FeaturesArgs, PhantomGenArgs, ReportArgs, StandardizeArgs,
    TrainArgs,
};
use crate::error::CliError;
use crate::pgm::write_slice_pgm;

fn echo_config(cfg: &RunConfig) {
    println!(
        "effective config: {}",
        serde_json::to_string(cfg).expect("config serializes")
    );
}

pub fn phantom_gen(args: &PhantomGenArgs) -> Result<(), CliError> {
    let template = PhantomTemplate {
        dims: args.dims,
        noise_sigma_hu: args.noise_sigma,
        ..PhantomTemplate::default()
    };
    let smooth = KernelSim::smooth(args.smooth_sigma).map_err(PipelineError::from)?;
    let sharp =
        KernelSim::sharp(args.sharp_amount, args.sharp_sigma).map_err(PipelineError::from)?;
    let manifest = write_dataset(
        &args.out_dir,
        args.n,
        &template,
        &smooth,
        &sharp,
        args.seed,
        args.eval_fraction,
    )
    .map_err(PipelineError::from)?;
    println!(
        "wrote {} pairs ({}x{}x{}) to {}",
        args.n,
        args.dims.0,
        args.dims.1,
        args.dims.2,
        manifest.display()
    );
    Ok(())
}

pub fn train(phase: u8, args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = resolve_run_config(args).map_err(CliError::Usage)?;
    if let Some(e) = args.epochs {
        match phase {
            1 => cfg.epochs_phase1 = e,
            _ => cfg.epochs_phase2 = e,
        }
    }
    echo_config(&cfg);
    let mut artifacts: Vec<(String, String)> = Vec::new();
    match phase {
        1 => {
            let out = train_phase1(&cfg)?;
            println!(
                "phase1 done: {} epochs, final loss {:.6e}",
                out.curve.per_epoch.len(),
                out.curve.per_epoch.last().unwrap()
            );
            artifacts.push(("checkpoint".into(), rel_name(&out.checkpoint_path)));
            artifacts.push(("loss_curve".into(), rel_name(&out.loss_curve_path)));
        }
        _ => {
            let p1 = args
                .phase1
                .clone()
                .ok_or_else(|| CliError::Usage("--phase1 is required for phase 2".into()))?;
            let out = train_phase2(&cfg, &p1)?;
            println!(
                "phase2 done: {} epochs, final loss {:.6e}",
                out.curve.per_epoch.len(),
                out.curve.per_epoch.last().unwrap()
            );
            artifacts.push(("checkpoint".into(), rel_name(&out.checkpoint_path)));
            artifacts.push(("loss_curve".into(), rel_name(&out.loss_curve_path)));
        }
    }
    let manifest = RunManifest {
        command: format!("train phase{phase}"),
        seed: cfg.seed,
        config: cfg.clone(),
        artifacts,
    };
    manifest.save(&cfg.out_dir.join(format!("run_phase{phase}.json")))?;
    Ok(())
}

fn rel_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

pub fn run_standardize(args: &StandardizeArgs) -> Result<(), CliError> {
    let crop = if args.center_crop {
        CropPolicy::CenterCrop
    } else {
        CropPolicy::Error
    };
    match (&args.input, &args.manifest) {
        (Some(input), None) => {
            let out_path = args
                .out
                .clone()
                .ok_or_else(|| CliError::Usage("--out is required with --input".into()))?;
            let v = load_volume(input).map_err(PipelineError::from)?;
            let result = standardize(
                &v,
                &args.phase1,
                &args.phase2,
                args.start_mode,
                args.seed,
                crop,
            )?;
            save_volume(&result, &out_path).map_err(PipelineError::from)?;
            println!("standardized {} -> {}", input.display(), out_path.display());
        }
        (None, Some(manifest_path)) => {
            let out_dir = args
                .out_dir
                .clone()
                .ok_or_else(|| CliError::Usage("--out-dir is required with --manifest".into()))?;
            std::fs::create_dir_all(&out_dir).map_err(PipelineError::from)?;
            let manifest = DatasetManifest::load(manifest_path).map_err(PipelineError::from)?;
            let mut count = 0usize;
            for pair in manifest.pairs.iter().filter(|p| p.split == args.split) {
                let (a_path, _) = manifest.resolve(manifest_path, pair);
                let v = load_volume(a_path).map_err(PipelineError::from)?;
                // Per-pair seed substream: identical results whether pairs
                // are processed singly or in batch.
                let seed = ctharm_core::phantom::sub_seed(args.seed, pair.index as u64);
                let result = standardize(
                    &v,
                    &args.phase1,
                    &args.phase2,
                    args.start_mode,
                    seed,
                    crop,
                )?;
                let out_path = out_dir.join(format!("pair_{:04}_aprime.ltdv", pair.index));
                save_volume(&result, &out_path).map_err(PipelineError::from)?;
                count += 1;
            }
            println!("standardized {count} volumes into {}", out_dir.display());
        }
        _ => {
            return Err(CliError::Usage(
                "exactly one of --input or --manifest is required".into(),
            ))
        }
    }
    Ok(())
}

fn parse_spheres(s: &str) -> Result<Vec<(usize, usize, usize, f32)>, CliError> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let parts: Vec<&str> = p.split(',').map(str::trim).collect();
            if parts.len() != 4 {
                return Err(CliError::Usage(format!("bad sphere spec {p:?}")));
            }
            let u = |i: usize| {
                parts[i]
                    .parse::<usize>()
                    .map_err(|e| CliError::Usage(format!("sphere {p:?}: {e}")))
            };
            let r = parts[3]
                .parse::<f32>()
                .map_err(|e| CliError::Usage(format!("sphere {p:?}: {e}")))?;
            Ok((u(0)?, u(1)?, u(2)?, r))
        })
        .collect()
}

fn parse_windows(s: &str) -> Result<Vec<HURange>, CliError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (lo, hi) = p
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("bad window spec {p:?}")))?;
            let lo = lo
                .trim()
                .parse::<f32>()
                .map_err(|e| CliError::Usage(format!("window {p:?}: {e}")))?;
            let hi = hi
                .trim()
                .parse::<f32>()
                .map_err(|e| CliError::Usage(format!("window {p:?}: {e}")))?;
            HURange::new(lo, hi).map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect()
}

/// The four standard evaluation windows.
pub const DEFAULT_WINDOWS: [(f32, f32); 4] =
    [(-800.0, -300.0), (-100.0, 250.0), (10.0, 250.0), (300.0, 800.0)];

pub fn features(args: &FeaturesArgs) -> Result<(), CliError> {
    let v = load_volume(&args.volume).map_err(PipelineError::from)?;
    let cfg = ExtractConfig {
        ng: args.ng,
        nbins: args.nbins,
    };
    let mut rois = Vec::new();
    if let Some(s) = &args.spheres {
        for (i, (x, y, z, r)) in parse_spheres(s)?.into_iter().enumerate() {
            let mask = roi_from_sphere(&v, (x, y, z), r).map_err(PipelineError::from)?;
            rois.push((format!("sphere{i}"), mask));
        }
    }
    if let Some(s) = &args.windows {
        for (i, w) in parse_windows(s)?.into_iter().enumerate() {
            rois.push((format!("win{i}"), roi_from_window(&v, w)));
        }
    }
    if rois.is_empty() {
        for (i, (lo, hi)) in DEFAULT_WINDOWS.iter().enumerate() {
            let w = HURange::new(*lo, *hi).expect("static windows are valid");
            rois.push((format!("win{i}"), roi_from_window(&v, w)));
        }
    }
    let volume_id = args
        .volume
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "volume".into());
    let mut out = Vec::new();
    let mut wrote_header = false;
    for (roi_id, mask) in &rois {
        if mask.voxel_count() < 16 {
            eprintln!("skipping {roi_id}: only {} voxels", mask.voxel_count());
            continue;
        }
        let fv = extract_all(&v, mask, &cfg).map_err(PipelineError::from)?;
        write_feature_csv(&mut out, !wrote_header, &volume_id, roi_id, &fv)
            .map_err(PipelineError::from)?;
        wrote_header = true;
    }
    if !wrote_header {
        return Err(CliError::Data("no ROI had enough voxels".into()));
    }
    std::fs::write(&args.out, out).map_err(PipelineError::from)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn run_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let manifest = DatasetManifest::load(&args.manifest).map_err(PipelineError::from)?;
    let mut aprime = BTreeMap::new();
    for pair in manifest.pairs.iter().filter(|p| p.split == args.split) {
        let path = args
            .standardized_dir
            .join(format!("pair_{:04}_aprime.ltdv", pair.index));
        if !path.exists() {
            return Err(PipelineError::MissingVolume(path.display().to_string()).into());
        }
        aprime.insert(pair.index, load_volume(&path).map_err(PipelineError::from)?);
    }
    let policy = match args.roi.as_str() {
        "lesions" => RoiPolicy::LesionSpheres,
        "windows" => {
            let ws = DEFAULT_WINDOWS
                .iter()
                .map(|(lo, hi)| HURange::new(*lo, *hi).expect("static windows"))
                .collect();
            RoiPolicy::HuWindows(ws)
        }
        other => return Err(CliError::Usage(format!("unknown roi policy {other:?}"))),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.max(1))
        .build()
        .expect("thread pool");
    let out = evaluate(
        &args.manifest,
        args.split,
        &aprime,
        &policy,
        &ExtractConfig::default(),
        &pool,
    )?;
    std::fs::create_dir_all(&args.out_dir).map_err(PipelineError::from)?;
    let write_report = |name: &str, rep: &CCCReport| -> Result<PathBuf, CliError> {
        let path = args.out_dir.join(name);
        let mut buf = Vec::new();
        write_ccc_csv(&mut buf, rep).map_err(PipelineError::from)?;
        std::fs::write(&path, buf).map_err(PipelineError::from)?;
        Ok(path)
    };
    let base_path = write_report("ccc_baseline.csv", &out.baseline)?;
    let model_path = write_report("ccc_model.csv", &out.model)?;
    let relerr_path = args.out_dir.join("relerr.csv");
    let mut buf = Vec::new();
    out.write_relerr_csv(&mut buf).map_err(PipelineError::from)?;
    std::fs::write(&relerr_path, buf).map_err(PipelineError::from)?;
    println!("wrote {}", base_path.display());
    println!("wrote {}", model_path.display());
    println!("wrote {}", relerr_path.display());
    for c in &out.model.per_class {
        let base = out
            .baseline
            .class_mean(c.class)
            .expect("same classes in both reports");
        println!(
            "{}: baseline {:.3} -> model {:.3}",
            c.class.label(),
            base,
            c.mean_ccc
        );
    }
    println!(
        "mean relative error: baseline {:.4} -> model {:.4}",
        out.mean_relerr_baseline, out.mean_relerr_model
    );
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<(), CliError> {
    let labels: Vec<String> = match &args.labels {
        Some(s) => s.split(',').map(|x| x.trim().to_string()).collect(),
        None => args
            .ccc
            .iter()
            .map(|p| {
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string())
            })
            .collect(),
    };
    if labels.len() != args.ccc.len() {
        return Err(CliError::Usage(format!(
            "{} labels for {} files",
            labels.len(),
            args.ccc.len()
        )));
    }
    let mut reports = Vec::new();
    for path in &args.ccc {
        let text = std::fs::read_to_string(path).map_err(PipelineError::from)?;
        let rep = read_ccc_csv(&text)
            .ok_or_else(|| CliError::Data(format!("cannot parse {}", path.display())))?;
        reports.push(rep);
    }
    let classes = ctharm_core::radiomics::FeatureClass::ALL;
    let label_width = labels.iter().map(|l| l.len()).max().unwrap_or(6).max(6);
    print!("{:label_width$}", "");
    for c in classes {
        print!("  {:>13}", c.label());
    }
    println!();
    for (label, rep) in labels.iter().zip(&reports) {
        print!("{label:label_width$}");
        for c in classes {
            match rep.per_class.iter().find(|s| s.class == c) {
                Some(s) => print!("  {:>5.2} ± {:>4.2}", s.mean_ccc, s.std_ccc),
                None => print!("  {:>13}", "-"),
            }
        }
        println!();
    }

    if let Some(images) = &args.images {
        let prefix = args
            .out_pgm
            .clone()
            .ok_or_else(|| CliError::Usage("--out-pgm is required with --images".into()))?;
        let names = ["a", "b", "aprime"];
        for (path, name) in images.iter().zip(names) {
            let v = load_volume(path).map_err(PipelineError::from)?;
            if args.slice >= v.dims().2 {
                return Err(CliError::Data(format!(
                    "slice {} out of range for {}",
                    args.slice,
                    path.display()
                )));
            }
            let out = PathBuf::from(format!("{}_{name}.pgm", prefix.display()));
            write_slice_pgm(&v, args.slice, &out).map_err(PipelineError::from)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
