use std::path::Path;

use ic_align::imaging::ScalarImage;
use ic_align::io::{save_intensity, write_report_json, BitDepth, FramePaths, Report, DEFAULT_DEPTH_SCALE};
use ic_align::solver::{align, AlignmentResult, Estimate, Family, Frame};
use ic_align::warp::{is_visible, warp_rigid};

use crate::args::AlignArgs;
use crate::CliError;

pub fn run(args: &AlignArgs) -> Result<(), CliError> {
    let run_cfg = args.solver.run_config()?;
    let cfg = args.solver.resolve(&run_cfg.solver)?;
    let family: Family = match args.family.map(Family::from).or(run_cfg.family) {
        Some(f) => f,
        None => return Err(CliError::Usage("--family is required (affine or rigid)".into())),
    };
    let depth_scale = args.depth_scale.or(run_cfg.depth_scale).unwrap_or(DEFAULT_DEPTH_SCALE);
    if !(depth_scale > 0.0) {
        return Err(CliError::Usage(format!("--depth-scale {depth_scale} must be positive")));
    }
    if family == Family::Rigid {
        if args.intrinsics.is_none() {
            return Err(CliError::Usage("--family rigid requires --intrinsics".into()));
        }
        if args.template_depth.is_none() {
            return Err(CliError::Usage("--family rigid requires --template-depth".into()));
        }
    }
    let rigid = family == Family::Rigid;
    let template = FramePaths {
        intensity: args.template.clone(),
        depth: args.template_depth.clone().filter(|_| rigid),
        intrinsics: args.intrinsics.clone().filter(|_| rigid),
    }
    .load(depth_scale)?;
    let image = FramePaths {
        intensity: args.image.clone(),
        depth: args.image_depth.clone().filter(|_| rigid),
        intrinsics: None,
    }
    .load(depth_scale)?;

    let result = align(&template, &image, family, &cfg)?;
    println!("{}", summary_line(&result));
    if let Some(path) = &args.report {
        write_report_json(&Report::new(&result, &cfg), path)?;
    }
    if let Some(dir) = &args.dump_debug_images {
        dump_debug_images(dir, &template, &image, &result.estimate)?;
    }
    Ok(())
}

pub fn summary_line(r: &AlignmentResult) -> String {
    let params = match &r.estimate {
        Estimate::Affine(a) => a.0.to_vec(),
        Estimate::Rigid(t) => {
            let xi = ic_align::geometry::log_se3_lossy(t);
            xi.to_vector().iter().copied().collect()
        }
    };
    let params: Vec<String> = params.iter().map(|v| format!("{v:.6e}")).collect();
    format!(
        "objective={:.6e} iterations={} converged={} reason={} estimate=[{}]",
        r.final_objective,
        r.iteration_count(),
        r.converged,
        serde_json::to_value(r.reason).expect("reason serializes").as_str().unwrap_or_default(),
        params.join(", ")
    )
}

/// Writes the template, the image warped into the template frame, and the
/// residual mapped to `0.5 + r`. Pixels without a valid warp are black.
fn dump_debug_images(dir: &Path, template: &Frame, image: &Frame, estimate: &Estimate) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let t = &template.intensity;
    let (w, h) = t.dims();
    let mut warped = ScalarImage::constant(w, h, 0.0);
    let mut residual = ScalarImage::constant(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let s = match estimate {
                Estimate::Affine(a) => {
                    let (wx, wy) = a.apply(x as f64, y as f64);
                    image.intensity.bilinear_sample(wx, wy)
                }
                Estimate::Rigid(pose) => {
                    let (Some(depth), Some(k)) = (&template.depth, &template.intrinsics) else {
                        continue;
                    };
                    let p = warp_rigid(x as f64, y as f64, depth.get(x, y), k, pose, image.intensity.dims());
                    let visible = match &image.depth {
                        Some(d) => is_visible(&p, d, ic_align::warp::DEFAULT_OCCLUSION_SLACK),
                        None => p.valid,
                    };
                    if !visible {
                        continue;
                    }
                    image.intensity.bilinear_sample(p.x, p.y)
                }
            };
            if s.valid {
                warped.set(x, y, s.value);
                residual.set(x, y, 0.5 + s.value - t.get(x, y));
            }
        }
    }
    save_intensity(t, dir.join("template.png"), BitDepth::Eight)?;
    save_intensity(&warped, dir.join("warped.png"), BitDepth::Eight)?;
    save_intensity(&residual, dir.join("residual.png"), BitDepth::Eight)?;
    Ok(())
}
