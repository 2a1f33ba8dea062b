use std::path::Path;

use ic_align::geometry::log_se3_lossy;
use ic_align::io::{write_batch_csv, BatchRow, DEFAULT_DEPTH_SCALE, REPORT_SCHEMA_VERSION};
use ic_align::metrics::{affine_l1, depth_points, epe3d, relative_pose_error, success_ratio, PoseError};
use ic_align::solver::{align, Estimate, Family, SolverConfig};
use rayon::prelude::*;

use crate::args::EvalArgs;
use crate::manifest::{Manifest, PairEntry};
use crate::CliError;

/// Thresholds of the success ratio: rotation in degrees, translation in cm.
pub const SUCCESS_THRESHOLDS: (f64, f64) = (5.0, 5.0);
/// An affine pair counts as aligned below this L1 parameter error.
pub const AFFINE_SUCCESS_L1: f64 = 0.05;

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    let run_cfg = args.solver.run_config()?;
    let cfg = args.solver.resolve(&run_cfg.solver)?;
    let manifest = Manifest::load(&args.manifest)?;
    let dir = args.manifest.parent().unwrap_or(Path::new("")).to_path_buf();
    let depth_scale = manifest.depth_scale.or(run_cfg.depth_scale).unwrap_or(DEFAULT_DEPTH_SCALE);
    let csv = args.csv.clone().unwrap_or_else(|| dir.join("eval.csv"));

    // Collecting an indexed parallel iterator keeps manifest order.
    let rows: Vec<BatchRow> = manifest
        .pairs
        .par_iter()
        .map(|p| eval_pair(p, &dir, depth_scale, manifest.family, &cfg))
        .collect::<Result<_, _>>()?;
    write_batch_csv(&rows, &csv)?;
    print!("{}", summary_table(&rows, manifest.family, &cfg));
    println!("wrote {}", csv.display());
    Ok(())
}

fn eval_pair(p: &PairEntry, dir: &Path, depth_scale: f64, family: Family, cfg: &SolverConfig) -> Result<BatchRow, CliError> {
    let context = |e: ic_align::Error| CliError::Runtime(format!("pair `{}`: {e}", p.name));
    let (template, image) = p.load(dir, depth_scale).map_err(context)?;
    let r = align(&template, &image, family, cfg).map_err(context)?;
    let mut row = BatchRow {
        schema_version: REPORT_SCHEMA_VERSION,
        pair: p.name.clone(),
        family,
        method: cfg.method.to_string(),
        converged: r.converged,
        reason: serde_json::to_value(r.reason)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        iterations: r.iteration_count(),
        final_objective: r.final_objective,
        affine_l1: None,
        rotation_deg: None,
        translation_cm: None,
        epe3d_cm: None,
        p1: 0.0,
        p2: 0.0,
        p3: 0.0,
        p4: 0.0,
        p5: 0.0,
        p6: 0.0,
    };
    let params: [f64; 6] = match (&r.estimate, p.xi_gt, p.t_gt) {
        (Estimate::Affine(est), Some(gt), _) => {
            row.affine_l1 = Some(affine_l1(est, &gt));
            est.0
        }
        (Estimate::Rigid(est), _, Some(gt)) => {
            let e = relative_pose_error(est, &gt);
            row.rotation_deg = Some(e.rotation_deg);
            row.translation_cm = Some(e.translation_cm);
            let depth = template.depth.as_ref().expect("rigid pairs carry depth");
            let k = template.intrinsics.as_ref().expect("rigid pairs carry intrinsics");
            row.epe3d_cm = Some(epe3d(&depth_points(depth, k), est, &gt).map_err(context)?);
            let v = log_se3_lossy(est).to_vector();
            [v[0], v[1], v[2], v[3], v[4], v[5]]
        }
        _ => unreachable!("manifest validated ground truth"),
    };
    [row.p1, row.p2, row.p3, row.p4, row.p5, row.p6] = params;
    Ok(row)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub fn summary_table(rows: &[BatchRow], family: Family, cfg: &SolverConfig) -> String {
    let mut out = String::new();
    out.push_str(&format!("pairs: {}  family: {}  method: {}\n", rows.len(), family, cfg.method));
    out.push_str(&format!("{:<26}{:>14}\n", "metric", "value"));
    let mut line = |name: &str, v: f64| out.push_str(&format!("{name:<26}{v:>14.6}\n"));
    line("mean final objective", mean(rows.iter().map(|r| r.final_objective)));
    match family {
        Family::Affine => {
            let l1: Vec<f64> = rows.iter().filter_map(|r| r.affine_l1).collect();
            line("mean L1 error", mean(l1.iter().copied()));
            let ok = l1.iter().filter(|&&v| v <= AFFINE_SUCCESS_L1).count();
            line("success ratio (L1<=0.05)", ok as f64 / l1.len().max(1) as f64);
        }
        Family::Rigid => {
            let errs: Vec<PoseError> = rows
                .iter()
                .filter_map(|r| {
                    Some(PoseError {
                        rotation_deg: r.rotation_deg?,
                        translation_cm: r.translation_cm?,
                    })
                })
                .collect();
            line("mean RPE rotation (deg)", mean(errs.iter().map(|e| e.rotation_deg)));
            line("mean RPE translation (cm)", mean(errs.iter().map(|e| e.translation_cm)));
            line("mean EPE (cm)", mean(rows.iter().filter_map(|r| r.epe3d_cm)));
            let (rot, trans) = SUCCESS_THRESHOLDS;
            line("success ratio (5deg,5cm)", success_ratio(&errs, rot, trans).unwrap_or(f64::NAN));
        }
    }
    out
}
