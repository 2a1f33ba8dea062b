//! Seeded synthetic pairs with exact ground truth.
//!
//! Affine pairs resample a procedural source image through a random affine
//! warp. RGB-D pairs render one or two textured planes analytically from two
//! camera poses, so depth and motion are exact.

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AffineParams, RigidTransform};
use crate::imaging::{InverseDepthImage, ScalarImage};
use crate::solver::Frame;
use crate::warp::{is_visible, warp_rigid, CameraIntrinsics};

/// Shape of a procedural texture: `components` cosines with wavelengths
/// drawn log-uniformly from `[min_wavelength, max_wavelength]`. Units are
/// pixels for image-plane textures and meters for surface textures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub components: usize,
    pub min_wavelength: f64,
    pub max_wavelength: f64,
}

impl TextureSpec {
    fn validate(&self) -> Result<()> {
        if self.components == 0 || !(self.min_wavelength > 0.0 && self.min_wavelength <= self.max_wavelength) {
            return Err(Error::InvalidConfig(format!("invalid texture spec {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct Wave {
    k: [f64; 3],
    phase: f64,
    amplitude: f64,
}

/// Band-limited texture `0.5 + Σ aᵢ·cos(kᵢ·p + φᵢ)` with `Σ aᵢ = 0.45`, so
/// values stay inside `[0.05, 0.95]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProceduralTexture {
    waves: Vec<Wave>,
}

impl ProceduralTexture {
    /// Wave vectors in the image plane.
    pub fn planar(spec: &TextureSpec, rng: &mut impl Rng) -> Result<Self> {
        Self::generate(spec, rng, |rng| {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            [theta.cos(), theta.sin(), 0.0]
        })
    }

    /// Wave vectors pointing anywhere in 3D, for texturing surfaces.
    pub fn solid(spec: &TextureSpec, rng: &mut impl Rng) -> Result<Self> {
        Self::generate(spec, rng, |rng| UnitSphere.sample(rng))
    }

    fn generate<R: Rng>(spec: &TextureSpec, rng: &mut R, mut direction: impl FnMut(&mut R) -> [f64; 3]) -> Result<Self> {
        spec.validate()?;
        let (lo, hi) = (spec.min_wavelength.ln(), spec.max_wavelength.ln());
        let mut waves: Vec<Wave> = (0..spec.components)
            .map(|_| {
                let wavelength = if hi > lo { rng.random_range(lo..=hi) } else { lo }.exp();
                let d = direction(rng);
                let s = std::f64::consts::TAU / wavelength;
                Wave {
                    k: [d[0] * s, d[1] * s, d[2] * s],
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amplitude: rng.random_range(0.5..1.0),
                }
            })
            .collect();
        let total: f64 = waves.iter().map(|w| w.amplitude).sum();
        for w in &mut waves {
            w.amplitude *= 0.45 / total;
        }
        Ok(Self { waves })
    }

    pub fn eval(&self, p: [f64; 3]) -> f64 {
        0.5 + self
            .waves
            .iter()
            .map(|w| w.amplitude * (w.k[0] * p[0] + w.k[1] * p[1] + w.k[2] * p[2] + w.phase).cos())
            .sum::<f64>()
    }

    pub fn render(&self, width: usize, height: usize) -> ScalarImage {
        ScalarImage::from_fn(width, height, |x, y| self.eval([x as f64, y as f64, 0.0]))
    }
}

fn add_noise(img: &ScalarImage, sigma: f64, rng: &mut impl Rng) -> ScalarImage {
    if sigma == 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let data = img.data().iter().map(|v| v + normal.sample(rng)).collect();
    ScalarImage::new(img.width(), img.height(), data).expect("same dimensions")
}

/// Per-pair seeds of a batch, drawn from one base seed so batches with
/// nearby base seeds do not share pairs.
pub fn derive_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random()).collect()
}

/// Texture used for affine sources when none is supplied. The shortest
/// wavelength is still 6 px at the coarsest default level of a 320×240 crop.
pub const DEFAULT_AFFINE_TEXTURE: TextureSpec = TextureSpec {
    components: 8,
    min_wavelength: 48.0,
    max_wavelength: 160.0,
};

/// Margin around the crop of the default affine source, in pixels.
pub const DEFAULT_AFFINE_MARGIN: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffineGenSpec {
    pub seed: u64,
    /// Width and height of both emitted images.
    pub crop: (usize, usize),
    /// Magnitude caps for ξ₁..ξ₆; each parameter is drawn uniformly from
    /// `[−bᵢ, bᵢ]`.
    pub bounds: [f64; 6],
    /// Standard deviation of additive Gaussian intensity noise; 0 = off.
    pub noise_sigma: f64,
}

impl Default for AffineGenSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            crop: (320, 240),
            bounds: [0.05, 0.05, 0.05, 0.05, 8.0, 8.0],
            noise_sigma: 0.0,
        }
    }
}

impl AffineGenSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.crop.0 < 8 || self.crop.1 < 8 {
            return Err(Error::ImageTooSmall {
                width: self.crop.0,
                height: self.crop.1,
                min: 8,
            });
        }
        if self.bounds.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(Error::InvalidConfig(format!("affine bounds {:?} must be finite and non-negative", self.bounds)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise sigma {} must be non-negative", self.noise_sigma)));
        }
        Ok(())
    }
}

/// A synthetic affine pair: `template(u) = image(W(u; xi_gt))`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinePair {
    pub template: ScalarImage,
    pub image: ScalarImage,
    /// In crop-local pixel coordinates.
    pub xi_gt: AffineParams,
}

/// Procedural source large enough for the default crop and bounds.
pub fn default_affine_source(seed: u64, crop: (usize, usize)) -> ScalarImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7e47);
    let texture = ProceduralTexture::planar(&DEFAULT_AFFINE_TEXTURE, &mut rng).expect("valid default texture");
    texture.render(crop.0 + 2 * DEFAULT_AFFINE_MARGIN, crop.1 + 2 * DEFAULT_AFFINE_MARGIN)
}

/// Draws `ξ_gt` within the bounds and resamples the central crop of `source`
/// into the template. The image is the plain central crop.
pub fn gen_affine_pair(source: &ScalarImage, spec: &AffineGenSpec) -> Result<AffinePair> {
    spec.validate()?;
    let (w, h) = spec.crop;
    let (sw, sh) = source.dims();
    let max_t = spec.bounds[4].max(spec.bounds[5]);
    if sw < w || sh < h || ((sw - w) as f64) < 2.0 * max_t || ((sh - h) as f64) < 2.0 * max_t {
        return Err(Error::InsufficientMargin);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let xi = AffineParams(std::array::from_fn(|i| {
        let b = spec.bounds[i];
        if b > 0.0 {
            rng.random_range(-b..=b)
        } else {
            0.0
        }
    }));
    let pair = affine_pair_from(source, spec.crop, &xi)?;
    Ok(AffinePair {
        template: add_noise(&pair.template, spec.noise_sigma, &mut rng),
        image: add_noise(&pair.image, spec.noise_sigma, &mut rng),
        xi_gt: xi,
    })
}

/// Noise-free pair for a given crop-local `xi`.
pub fn affine_pair_from(source: &ScalarImage, crop: (usize, usize), xi: &AffineParams) -> Result<AffinePair> {
    let (w, h) = crop;
    let (sw, sh) = source.dims();
    if sw < w || sh < h {
        return Err(Error::InsufficientMargin);
    }
    let (ox, oy) = ((sw - w) / 2, (sh - h) / 2);

    // The warped crop is convex, so its corners decide the margin.
    let corners = [(0.0, 0.0), ((w - 1) as f64, 0.0), (0.0, (h - 1) as f64), ((w - 1) as f64, (h - 1) as f64)];
    for (x, y) in corners {
        let (wx, wy) = xi.apply(x, y);
        let (sx, sy) = (wx + ox as f64, wy + oy as f64);
        if !(sx >= 0.0 && sy >= 0.0 && sx <= (sw - 1) as f64 && sy <= (sh - 1) as f64) {
            return Err(Error::InsufficientMargin);
        }
    }

    let image = source.crop(ox, oy, w, h)?;
    let template = ScalarImage::from_fn(w, h, |x, y| {
        let (wx, wy) = xi.apply(x as f64, y as f64);
        source.bilinear_sample(wx + ox as f64, wy + oy as f64).value
    });

    let err = affine_consistency_error(&template, &image, xi);
    const TOLERANCE: f64 = 1e-6;
    if !(err <= TOLERANCE) {
        return Err(Error::GroundTruthMismatch {
            mean_abs_error: err,
            tolerance: TOLERANCE,
        });
    }
    Ok(AffinePair { template, image, xi_gt: *xi })
}

/// Mean absolute difference between `template(u)` and `image(W(u; ξ))` over
/// pixels whose warp lands inside the image.
pub fn affine_consistency_error(template: &ScalarImage, image: &ScalarImage, xi: &AffineParams) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..template.height() {
        for x in 0..template.width() {
            let (wx, wy) = xi.apply(x as f64, y as f64);
            let s = image.bilinear_sample(wx, wy);
            if s.valid {
                sum += (s.value - template.get(x, y)).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

/// Pastes rectangular occluders over `img` until at least `fraction` of the
/// pixels are covered. Each occluder is flat, with an intensity drawn
/// uniformly from `[0, 1]`; per-pixel white noise would make the objective
/// favour half-pixel offsets, where interpolation averages it down.
pub fn corrupt_with_occluders(img: &ScalarImage, fraction: f64, seed: u64) -> ScalarImage {
    let (w, h) = img.dims();
    let target = (fraction.clamp(0.0, 1.0) * (w * h) as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covered = vec![false; w * h];
    let mut count = 0usize;
    let mut out = img.clone();
    let max_side = (w.min(h) / 4).max(2);
    while count < target {
        let bw = rng.random_range(2..=max_side).min(w);
        let bh = rng.random_range(2..=max_side).min(h);
        let x0 = rng.random_range(0..=w - bw);
        let y0 = rng.random_range(0..=h - bh);
        let value = rng.random_range(0.0..=1.0);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                out.set(x, y, value);
                if !covered[y * w + x] {
                    covered[y * w + x] = true;
                    count += 1;
                }
            }
        }
    }
    out
}

/// Surfaces rendered for RGB-D pairs, in the template camera frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scene {
    /// Plane through `(0, 0, depth)` with the given normal.
    TexturedPlane { depth: f64, normal: [f64; 3] },
    /// Fronto-parallel planes. The near one covers `X < split·near` (the
    /// template pixels left of normalized coordinate `split`); the far one
    /// is unbounded behind it.
    TwoPlanes { near: f64, far: f64, split: f64 },
}

impl Scene {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Scene::TexturedPlane { depth, normal } => {
                let n = Vector3::from(normal);
                (0.1..10.0).contains(&depth) && n.norm() > 0.0 && n.z.abs() > 1e-3
            }
            Scene::TwoPlanes { near, far, split } => {
                near > 0.1 && far < 10.0 && near < far && split.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid scene {self:?}")))
        }
    }

    /// First positive hit of the ray `origin + s·dir`, as `s`, plus the
    /// point.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let hit_plane = |n: Vector3<f64>, h: f64| {
            let denom = n.dot(dir);
            if denom.abs() < 1e-12 {
                return None;
            }
            let s = (h - n.dot(origin)) / denom;
            (s > 0.0).then(|| (s, origin + dir * s))
        };
        match *self {
            Scene::TexturedPlane { depth, normal } => {
                let n = Vector3::from(normal).normalize();
                hit_plane(n, n.z * depth)
            }
            Scene::TwoPlanes { near, far, split } => {
                let z = Vector3::z();
                let near_hit = hit_plane(z, near).filter(|(_, p)| p.x < split * near);
                near_hit.or_else(|| hit_plane(z, far))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RgbdSceneSpec {
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    pub width: usize,
    pub height: usize,
    pub scene: Scene,
    /// Surface texture; wavelengths in meters.
    pub texture: TextureSpec,
    pub max_rotation_deg: f64,
    pub max_translation_m: f64,
    /// Standard deviation of additive Gaussian intensity noise; 0 = off.
    pub noise_sigma: f64,
}

impl Default for RgbdSceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            intrinsics: CameraIntrinsics {
                fx: 131.25,
                fy: 131.25,
                cx: 79.5,
                cy: 59.5,
            },
            width: 160,
            height: 120,
            scene: Scene::TexturedPlane {
                depth: 1.5,
                normal: [0.2, -0.15, -1.0],
            },
            texture: TextureSpec {
                components: 8,
                min_wavelength: 0.3,
                max_wavelength: 1.2,
            },
            max_rotation_deg: 3.0,
            max_translation_m: 0.03,
            noise_sigma: 0.0,
        }
    }
}

impl RgbdSceneSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.scene.validate()?;
        self.texture.validate()?;
        if self.width < 8 || self.height < 8 {
            return Err(Error::ImageTooSmall {
                width: self.width,
                height: self.height,
                min: 8,
            });
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg < 180.0 && self.max_translation_m >= 0.0) {
            return Err(Error::InvalidConfig("motion bounds must be non-negative".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise sigma {} must be non-negative", self.noise_sigma)));
        }
        Ok(())
    }
}

/// A synthetic RGB-D pair. `t_gt` maps points from the template camera
/// frame into the image camera frame.
#[derive(Clone, Debug)]
pub struct RgbdPair {
    pub template: Frame,
    pub image: Frame,
    pub t_gt: RigidTransform,
    /// Fraction of template pixels with depth that stay visible in the image.
    pub visible_fraction: f64,
}

/// Minimum fraction of template pixels that must remain visible.
pub const MIN_VISIBLE_FRACTION: f64 = 0.7;

/// Renders intensity and inverse depth seen by a camera whose pose maps
/// template-frame points into its own frame.
fn render_view(
    scene: &Scene,
    texture: &ProceduralTexture,
    k: &CameraIntrinsics,
    (w, h): (usize, usize),
    pose: &RigidTransform,
) -> (ScalarImage, InverseDepthImage) {
    let to_template = pose.inverse();
    let origin = to_template.translation;
    let mut intensity = vec![0.0; w * h];
    let mut depth = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = k.normalize(x as f64, y as f64);
            let dir = to_template.rotation * Vector3::new(u, v, 1.0);
            if let Some((s, p)) = scene.intersect(&origin, &dir) {
                // The ray direction has unit z in the viewing camera, so `s`
                // is the depth there.
                intensity[y * w + x] = texture.eval([p.x, p.y, p.z]);
                depth[y * w + x] = s;
            }
        }
    }
    let intensity = ScalarImage::new(w, h, intensity).expect("finite intensities");
    let depth = InverseDepthImage::from_depth(w, h, |x, y| {
        let z = depth[y * w + x];
        if z > 0.1 && z < 10.0 {
            z
        } else {
            0.0
        }
    });
    (intensity, depth)
}

/// Renders the template at the origin and the image from `t_gt`.
pub fn render_rgbd_pair(spec: &RgbdSceneSpec, t_gt: &RigidTransform) -> Result<RgbdPair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let texture = ProceduralTexture::solid(&spec.texture, &mut rng)?;
    render_with(spec, &texture, *t_gt, &mut rng)
}

fn render_with(spec: &RgbdSceneSpec, texture: &ProceduralTexture, t_gt: RigidTransform, rng: &mut ChaCha8Rng) -> Result<RgbdPair> {
    let dims = (spec.width, spec.height);
    let k = spec.intrinsics;
    let (t_int, t_depth) = render_view(&spec.scene, texture, &k, dims, &RigidTransform::identity());
    let (i_int, i_depth) = render_view(&spec.scene, texture, &k, dims, &t_gt);

    let (visible, total, err) = reprojection_check(&t_int, &t_depth, &i_int, &i_depth, &k, &t_gt);
    let visible_fraction = if total == 0 { 0.0 } else { visible as f64 / total as f64 };
    if visible_fraction < MIN_VISIBLE_FRACTION {
        return Err(Error::MotionTooLarge {
            visible: 100.0 * visible_fraction,
            required: 100.0 * MIN_VISIBLE_FRACTION,
        });
    }
    const TOLERANCE: f64 = 1e-3;
    if !(err <= TOLERANCE) {
        return Err(Error::GroundTruthMismatch {
            mean_abs_error: err,
            tolerance: TOLERANCE,
        });
    }

    let t_int = add_noise(&t_int, spec.noise_sigma, rng);
    let i_int = add_noise(&i_int, spec.noise_sigma, rng);
    Ok(RgbdPair {
        template: Frame::rgbd(t_int, t_depth, k),
        image: Frame::rgbd(i_int, i_depth, k),
        t_gt,
        visible_fraction,
    })
}

/// Counts template pixels with depth, those still visible after warping by
/// `t`, and the mean absolute intensity difference over the visible ones.
pub fn reprojection_check(
    template: &ScalarImage,
    template_depth: &InverseDepthImage,
    image: &ScalarImage,
    image_depth: &InverseDepthImage,
    k: &CameraIntrinsics,
    t: &RigidTransform,
) -> (usize, usize, f64) {
    let (mut visible, mut total, mut sum) = (0usize, 0usize, 0.0);
    for y in 0..template.height() {
        for x in 0..template.width() {
            let d = template_depth.get(x, y);
            if d <= 0.0 {
                continue;
            }
            total += 1;
            let w = warp_rigid(x as f64, y as f64, d, k, t, image.dims());
            if !is_visible(&w, image_depth, crate::warp::DEFAULT_OCCLUSION_SLACK) {
                continue;
            }
            let s = image.bilinear_sample(w.x, w.y);
            if s.valid {
                visible += 1;
                sum += (s.value - template.get(x, y)).abs();
            }
        }
    }
    let err = if visible == 0 { f64::INFINITY } else { sum / visible as f64 };
    (visible, total, err)
}

/// Draws a motion within the spec's bounds and renders the pair.
pub fn gen_rgbd_pair(spec: &RgbdSceneSpec) -> Result<RgbdPair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let texture = ProceduralTexture::solid(&spec.texture, &mut rng)?;
    let axis: [f64; 3] = UnitSphere.sample(&mut rng);
    let angle = rng.random_range(0.0..=spec.max_rotation_deg).to_radians();
    let dir: [f64; 3] = UnitSphere.sample(&mut rng);
    let dist = rng.random_range(0.0..=spec.max_translation_m);
    let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
    let t_gt = RigidTransform::new(*rotation.matrix(), Vector3::from(dir) * dist);
    render_with(spec, &texture, t_gt, &mut rng)
}
