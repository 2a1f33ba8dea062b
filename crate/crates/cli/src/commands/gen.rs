use std::path::PathBuf;

use ic_align::datagen::{default_affine_source, derive_seeds, gen_affine_pair, gen_rgbd_pair, AffineGenSpec, RgbdSceneSpec};
use ic_align::io::{
    load_intensity, save_depth, save_intensity, save_intrinsics, save_poses_tum, write_text, BitDepth, PoseRecord,
    DEFAULT_DEPTH_SCALE,
};
use ic_align::solver::Family;

use crate::args::{GenArgs, RunConfig};
use crate::manifest::{Manifest, PairEntry, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION};
use crate::CliError;

pub fn run(args: &GenArgs) -> Result<(), CliError> {
    let run_cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let family = args
        .family
        .map(Family::from)
        .or(run_cfg.family)
        .ok_or_else(|| CliError::Usage("--family is required (affine or rigid)".into()))?;
    let count = args.count.or(run_cfg.count).unwrap_or(10);
    let seed = args.seed.or(run_cfg.seed).unwrap_or(0);
    if !(args.noise >= 0.0 && args.noise.is_finite()) {
        return Err(CliError::Usage(format!("--noise {} must be non-negative", args.noise)));
    }
    if args.source.is_some() && family == Family::Rigid {
        return Err(CliError::Usage("--source only applies to affine pairs".into()));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Runtime(format!("{}: {e}", args.out.display())))?;

    let seeds = derive_seeds(seed, count);
    let manifest = match family {
        Family::Affine => gen_affine(args, seed, &seeds)?,
        Family::Rigid => gen_rigid(args, seed, &seeds)?,
    };
    let path = args.out.join(MANIFEST_FILE);
    write_text(&path, &manifest.to_json())?;
    println!("wrote {} {} pairs to {}", manifest.pairs.len(), family, path.display());
    Ok(())
}

fn gen_affine(args: &GenArgs, seed: u64, seeds: &[u64]) -> Result<Manifest, CliError> {
    let base = AffineGenSpec {
        noise_sigma: args.noise,
        ..Default::default()
    };
    let external = args.source.as_ref().map(load_intensity).transpose()?;
    let mut pairs = Vec::with_capacity(seeds.len());
    for (i, &s) in seeds.iter().enumerate() {
        let spec = base.with_seed(s);
        let source = match &external {
            Some(img) => img.clone(),
            None => default_affine_source(s, spec.crop),
        };
        let pair = gen_affine_pair(&source, &spec)?;
        let name = format!("pair_{i:04}");
        let template = PathBuf::from(format!("{name}_template.png"));
        let image = PathBuf::from(format!("{name}_image.png"));
        save_intensity(&pair.template, args.out.join(&template), BitDepth::Sixteen)?;
        save_intensity(&pair.image, args.out.join(&image), BitDepth::Sixteen)?;
        pairs.push(PairEntry {
            name,
            seed: s,
            template,
            image,
            template_depth: None,
            image_depth: None,
            intrinsics: None,
            xi_gt: Some(pair.xi_gt),
            t_gt: None,
        });
    }
    Ok(Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        family: Family::Affine,
        seed,
        depth_scale: None,
        generator: serde_json::json!({
            "crop": base.crop,
            "bounds": base.bounds,
            "noise_sigma": base.noise_sigma,
            "source": args.source.as_ref().map(|p| p.display().to_string()),
        }),
        pairs,
    })
}

fn gen_rigid(args: &GenArgs, seed: u64, seeds: &[u64]) -> Result<Manifest, CliError> {
    let base = RgbdSceneSpec {
        noise_sigma: args.noise,
        ..Default::default()
    };
    let intrinsics = PathBuf::from("intrinsics.txt");
    save_intrinsics(&base.intrinsics, args.out.join(&intrinsics))?;
    let mut pairs = Vec::with_capacity(seeds.len());
    let mut trajectory = Vec::with_capacity(seeds.len());
    for (i, &s) in seeds.iter().enumerate() {
        let pair = gen_rgbd_pair(&base.with_seed(s))?;
        let name = format!("pair_{i:04}");
        let files = ["template", "template_depth", "image", "image_depth"].map(|f| PathBuf::from(format!("{name}_{f}.png")));
        save_intensity(&pair.template.intensity, args.out.join(&files[0]), BitDepth::Sixteen)?;
        save_depth(pair.template.depth.as_ref().expect("rendered depth"), args.out.join(&files[1]), DEFAULT_DEPTH_SCALE)?;
        save_intensity(&pair.image.intensity, args.out.join(&files[2]), BitDepth::Sixteen)?;
        save_depth(pair.image.depth.as_ref().expect("rendered depth"), args.out.join(&files[3]), DEFAULT_DEPTH_SCALE)?;
        let [template, template_depth, image, image_depth] = files;
        trajectory.push(PoseRecord {
            timestamp: i as f64,
            pose: pair.t_gt,
        });
        pairs.push(PairEntry {
            name,
            seed: s,
            template,
            image,
            template_depth: Some(template_depth),
            image_depth: Some(image_depth),
            intrinsics: Some(intrinsics.clone()),
            xi_gt: None,
            t_gt: Some(pair.t_gt),
        });
    }
    save_poses_tum(&trajectory, args.out.join("groundtruth.txt"))?;
    Ok(Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        family: Family::Rigid,
        seed,
        depth_scale: Some(DEFAULT_DEPTH_SCALE),
        generator: serde_json::to_value(base).expect("spec serializes"),
        pairs,
    })
}
