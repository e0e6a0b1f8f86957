use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{error, info};
use rayon::prelude::*;

use gradreg::deform::{jacobian_det, warp, warp_labels, DeformationField};
use gradreg::engine::{gradient_check, register_pair, write_trace, RegistrationConfig, MAX_CHECK_AXIS};
use gradreg::metrics::{evaluate_pair, sdlogj, write_metrics_file, PairMetrics};
use gradreg::phantom::{make_pair, AnalyticWarp, PhantomSpec};
use gradreg::volume::{
    read_volume, stack_windows, volume_paths, write_labels, write_volume, Dims, LabelId, LabelVolume, ScalarType,
    Volume, CT_WINDOWS,
};

use crate::display::{opt_sig6, sig6};
use crate::{Cli, Command, GradcheckArgs, JacobianArgs, MetricsArgs, PhantomArgs, RegisterArgs, WarpArgs};

pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Register(args) => register(args, cli.jobs as usize),
        Command::Warp(args) => warp_cmd(args).map(|_| 0),
        Command::Jacobian(args) => jacobian(args).map(|_| 0),
        Command::Metrics(args) => metrics(args).map(|_| 0),
        Command::Phantom(args) => phantom(args).map(|_| 0),
        Command::Gradcheck(args) => gradcheck(args),
    }
}

fn read_image(path: &Path) -> Result<Volume> {
    read_volume(path)
        .and_then(|v| v.into_image())
        .with_context(|| format!("reading image {}", path.display()))
}

fn read_labels(path: &Path) -> Result<LabelVolume> {
    read_volume(path)
        .and_then(|v| v.into_labels())
        .with_context(|| format!("reading labels {}", path.display()))
}

fn read_field(path: &Path) -> Result<DeformationField> {
    let v = read_image(path)?;
    DeformationField::from_volume(&v).with_context(|| format!("reading field {}", path.display()))
}

fn write_field(phi: &DeformationField, spacing: [f64; 3], path: &Path) -> Result<()> {
    let v = phi.to_volume().with_spacing(spacing)?.with_storage(ScalarType::F64)?;
    write_volume(&v, path).with_context(|| format!("writing {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<RegistrationConfig> {
    match path {
        Some(p) => RegistrationConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RegistrationConfig::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn foreground_union(a: &LabelVolume, b: &LabelVolume) -> Vec<LabelId> {
    let mut set = a.present_labels();
    set.extend(b.present_labels());
    set.sort_unstable();
    set.dedup();
    set.retain(|&l| l != 0);
    set
}

/// Input files of one registration.
#[derive(Clone, Debug)]
struct PairFiles {
    id: String,
    fixed: PathBuf,
    moving: PathBuf,
    labels: Option<(PathBuf, PathBuf)>,
}

/// `after` metrics of a labelled pair.
type PairOutcome = Option<PairMetrics>;

fn register_files(
    files: &PairFiles,
    config: &RegistrationConfig,
    ct_windows: bool,
    out_dir: &Path,
) -> Result<PairOutcome> {
    let mut fixed = read_image(&files.fixed)?;
    let mut moving = read_image(&files.moving)?;
    let labels = match &files.labels {
        Some((f, m)) => Some((read_labels(f)?, read_labels(m)?)),
        None => None,
    };
    if ct_windows {
        fixed = stack_windows(&fixed, &CT_WINDOWS)?;
        moving = stack_windows(&moving, &CT_WINDOWS)?;
    }
    let spacing = fixed.spacing();
    let reg = register_pair(&moving, &fixed, labels.as_ref().map(|(f, m)| (m, f)), config)
        .with_context(|| format!("registering {}", files.id))?;
    let r = &reg.result;

    create_dir(out_dir)?;
    write_field(&r.phi_ab, spacing, &out_dir.join("phi_ab"))?;
    write_field(&r.phi_ba, spacing, &out_dir.join("phi_ba"))?;
    write_volume(&r.a_warp, out_dir.join("moving_warped"))?;
    write_volume(&r.b_warp, out_dir.join("fixed_warped"))?;
    let trace_path = out_dir.join("loss_trace.csv");
    let trace_file = fs::File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?;
    write_trace(std::io::BufWriter::new(trace_file), &r.trace)?;
    info!(
        "{}: {} iterations{}, final loss {}",
        files.id,
        r.iterations(),
        if r.converged { " (converged)" } else { "" },
        sig6(r.final_loss.total)
    );

    let Some((fixed_labels, moving_labels)) = labels else {
        return Ok(None);
    };
    let moving_warped = reg.a_labels_warp.as_ref().expect("labels were given");
    let fixed_warped = reg.b_labels_warp.as_ref().expect("labels were given");
    write_labels(moving_warped, out_dir.join("moving_labels_warped"))?;
    write_labels(fixed_warped, out_dir.join("fixed_labels_warped"))?;
    let set = foreground_union(&fixed_labels, &moving_labels);
    let dims = fixed.dims();
    let before = evaluate_pair(
        &fixed_labels,
        &moving_labels,
        &DeformationField::identity(dims),
        &set,
        fixed_labels.spacing(),
    )?;
    let after = evaluate_pair(&fixed_labels, moving_warped, &r.phi_ab, &set, fixed_labels.spacing())?;
    write_metrics_file(
        out_dir.join("metrics.csv"),
        &[
            ("before".to_string(), before.clone()),
            ("after".to_string(), after.clone()),
        ],
    )?;
    info!(
        "{}: mean Dice {} -> {}, SdLogJ {}",
        files.id,
        opt_sig6(before.mean_dice),
        opt_sig6(after.mean_dice),
        sig6(after.sdlogj)
    );
    Ok(Some(after))
}

fn batch_pairs(dir: &Path) -> Result<Vec<PairFiles>> {
    let mut pairs = Vec::new();
    let entries = fs::read_dir(dir).with_context(|| format!("reading batch directory {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if !path.is_dir() {
            continue;
        }
        let id = path
            .file_name()
            .expect("directory entry has a name")
            .to_string_lossy()
            .into_owned();
        let has = |name: &str| volume_paths(&path.join(name)).0.exists();
        if !has("fixed") || !has("moving") {
            bail!("{}: pair directory needs fixed and moving volumes", path.display());
        }
        let labels = match (has("fixed_labels"), has("moving_labels")) {
            (true, true) => Some((path.join("fixed_labels"), path.join("moving_labels"))),
            (false, false) => None,
            _ => bail!("{}: both or neither label maps must be present", path.display()),
        };
        pairs.push(PairFiles {
            id,
            fixed: path.join("fixed"),
            moving: path.join("moving"),
            labels,
        });
    }
    if pairs.is_empty() {
        bail!("{}: no pair directories found", dir.display());
    }
    pairs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(pairs)
}

pub fn failure_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<gradreg::Error>())
        .any(gradreg::Error::is_numerical);
    if numerical {
        2
    } else {
        1
    }
}

fn register(args: &RegisterArgs, jobs: usize) -> Result<u8> {
    let config = load_config(args.config.as_deref())?;
    let Some(batch_dir) = &args.batch_dir else {
        let files = PairFiles {
            id: "pair".into(),
            fixed: args.fixed.clone().expect("required by clap"),
            moving: args.moving.clone().expect("required by clap"),
            labels: args.fixed_labels.clone().zip(args.moving_labels.clone()),
        };
        register_files(&files, &config, args.ct_windows, &args.out_dir)?;
        return Ok(0);
    };

    let pairs = batch_pairs(batch_dir)?;
    create_dir(&args.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let outcomes: Vec<Result<PairOutcome>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|p| register_files(p, &config, args.ct_windows, &args.out_dir.join(&p.id)))
            .collect()
    });
    let mut code = 0;
    let mut failed = 0;
    let mut summary = Vec::new();
    for (p, outcome) in pairs.iter().zip(outcomes) {
        match outcome {
            Ok(Some(after)) => summary.push((p.id.clone(), after)),
            Ok(None) => {}
            Err(e) => {
                error!("{}: {e:#}", p.id);
                failed += 1;
                code = code.max(failure_code(&e));
            }
        }
    }
    if !summary.is_empty() {
        write_metrics_file(args.out_dir.join("metrics.csv"), &summary)?;
    }
    info!("{} of {} pairs registered", pairs.len() - failed, pairs.len());
    Ok(code)
}

fn warp_cmd(args: &WarpArgs) -> Result<()> {
    let phi = read_field(&args.field)?;
    if let Some(path) = &args.image {
        let img = read_image(path)?;
        let out = warp(&img, &phi).context("warping image")?;
        write_volume(&out, &args.out)?;
    } else {
        let path = args.labels.as_ref().expect("clap requires image or labels");
        let labels = read_labels(path)?;
        let out = warp_labels(&labels, &phi).context("warping labels")?;
        write_labels(&out, &args.out)?;
    }
    Ok(())
}

fn jacobian(args: &JacobianArgs) -> Result<()> {
    let v = read_image(&args.field)?;
    let phi = DeformationField::from_volume(&v)?;
    let det = jacobian_det(&phi)?
        .with_spacing(v.spacing())?
        .with_storage(ScalarType::F64)?;
    write_volume(&det, &args.out)?;
    let negative = det.data().iter().filter(|&&d| d <= 0.0).count();
    info!(
        "{negative} of {} voxels with non-positive determinant",
        det.data().len()
    );
    if args.sdlogj {
        println!("{}", sig6(sdlogj(&phi)?));
    }
    Ok(())
}

fn metrics(args: &MetricsArgs) -> Result<()> {
    let fixed = read_labels(&args.fixed_labels)?;
    let warped = read_labels(&args.warped_labels)?;
    let phi = read_field(&args.field)?;
    let set = match &args.labels {
        Some(l) => l.clone(),
        None => foreground_union(&fixed, &warped),
    };
    if set.contains(&0) {
        bail!("label 0 is background and cannot be evaluated");
    }
    let m = evaluate_pair(&fixed, &warped, &phi, &set, fixed.spacing())?;
    for l in &m.labels {
        info!(
            "label {}: Dice {}, HD95 {} mm",
            l.label,
            opt_sig6(l.dice),
            opt_sig6(l.hd95_mm)
        );
    }
    info!(
        "mean Dice {}, Dice30 {}, SdLogJ {}",
        opt_sig6(m.mean_dice),
        opt_sig6(m.dice30),
        sig6(m.sdlogj)
    );
    write_metrics_file(&args.out, &[(args.pair_id.clone(), m)])?;
    Ok(())
}

fn parse_warp(text: &str) -> Result<AnalyticWarp> {
    let json = if text.trim_start().starts_with('{') {
        text.to_string()
    } else {
        fs::read_to_string(text).with_context(|| format!("reading warp {text}"))?
    };
    serde_json::from_str(&json).with_context(|| format!("parsing warp {text}"))
}

fn phantom(args: &PhantomArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<PhantomSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => PhantomSpec::abdominal(Dims::cube(args.size), args.seed),
    };
    let w = parse_warp(&args.warp)?;
    let pair = make_pair(&spec, &w)?;
    let out = &args.out_dir;
    create_dir(out)?;
    write_volume(&pair.fixed, out.join("fixed"))?;
    write_labels(&pair.fixed_labels, out.join("fixed_labels"))?;
    write_volume(&pair.moving, out.join("moving"))?;
    write_labels(&pair.moving_labels, out.join("moving_labels"))?;
    write_field(&pair.forward, spec.spacing_mm, &out.join("phi_forward"))?;
    write_field(&pair.inverse, spec.spacing_mm, &out.join("phi_inverse"))?;
    info!("phantom {:?} written to {}", spec.dims.0, out.display());
    Ok(())
}

fn gradcheck(args: &GradcheckArgs) -> Result<u8> {
    let dims = match args.dims.as_slice() {
        [n] => Dims::cube(*n),
        [x, y, z] => Dims::new(*x, *y, *z),
        _ => bail!("--dims takes one edge length or three comma-separated values"),
    };
    if dims.0.iter().any(|&n| n > MAX_CHECK_AXIS) {
        bail!(
            "--dims {:?} too large for a finite-difference check (at most {MAX_CHECK_AXIS} per axis)",
            dims.0
        );
    }
    let config = load_config(args.config.as_deref())?;
    let report = gradient_check(dims, &config, args.seed)?;
    for t in &report.terms {
        println!(
            "{:<6} weight {:<8} max relative error {:<12} max |derivative| {}",
            t.term,
            sig6(t.weight),
            sig6(t.max_rel_error),
            sig6(t.max_abs_derivative)
        );
    }
    println!("negative Jacobian voxels: {}", report.negative_jacobians);
    println!(
        "{} (max relative error {}, tolerance {})",
        if report.passed { "PASS" } else { "FAIL" },
        sig6(report.max_rel_error()),
        sig6(report.tolerance)
    );
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&report)?;
        fs::write(out, json + "\n").with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(if report.passed { 0 } else { 2 })
}
