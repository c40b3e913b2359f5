use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Label, LabeledVolume, Split, Volume};
use crate::error::{Error, Result};
use crate::util::derive_seed;

/// Background intensity at the centre of the brain ellipsoid.
const TISSUE_BASE: f32 = 0.30;
/// Extra intensity toward the ellipsoid centre.
const TISSUE_GRADIENT: f32 = 0.10;

/// Parameters of the synthetic brain-like phantom generator.
///
/// Volumes are rendered at `native_xy × native_xy × nz` with `nz` drawn from
/// `native_z_range`, then reduced in-plane to `out_dims` by block-mean
/// pooling and zero-padded caudally to the output depth. Lesion radii are
/// given in output voxels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub out_dims: [usize; 3],
    pub native_xy: usize,
    pub native_z_range: (usize, usize),
    pub lesion_count_range: (usize, usize),
    pub lesion_radius_range: (f64, f64),
    pub lesion_contrast: f64,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl PhantomConfig {
    /// 64×64×36 output from 256×256 slices, 28 to 36 slices deep.
    pub fn paper(rng_seed: u64) -> Self {
        Self {
            out_dims: [64, 64, 36],
            native_xy: 256,
            native_z_range: (28, 36),
            lesion_count_range: (1, 3),
            lesion_radius_range: (2.5, 4.5),
            lesion_contrast: 0.5,
            noise_sigma: 0.03,
            rng_seed,
        }
    }

    /// 32×32×16 output; cheap enough for full training runs on a laptop CPU.
    pub fn desk(rng_seed: u64) -> Self {
        Self {
            out_dims: [32, 32, 16],
            native_xy: 64,
            native_z_range: (12, 16),
            lesion_count_range: (2, 4),
            lesion_radius_range: (3.5, 5.0),
            lesion_contrast: 0.9,
            noise_sigma: 0.03,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [ox, oy, oz] = self.out_dims;
        if ox == 0 || oy == 0 || oz == 0 {
            return Err(Error::invalid(format!("output dims {:?} must be positive", self.out_dims)));
        }
        if ox != oy {
            return Err(Error::invalid("output volumes must be square in-plane"));
        }
        if self.native_xy < ox || self.native_xy % ox != 0 {
            return Err(Error::invalid(format!(
                "native in-plane size {} is not a multiple of output size {ox}",
                self.native_xy
            )));
        }
        let (zmin, zmax) = self.native_z_range;
        if zmin == 0 || zmin > zmax || zmax > oz {
            return Err(Error::invalid(format!(
                "native z range {zmin}..={zmax} must be non-empty and fit in {oz} slices"
            )));
        }
        let (cmin, cmax) = self.lesion_count_range;
        if cmin == 0 || cmin > cmax {
            return Err(Error::invalid("lesion count range must be non-empty and start at 1 or more"));
        }
        let (rmin, rmax) = self.lesion_radius_range;
        if !(rmin > 0.0 && rmin <= rmax) {
            return Err(Error::invalid(format!("lesion radius range ({rmin}, {rmax}) is invalid")));
        }
        // a lesion must fit inside the brain region in every axis
        if 2.0 * rmax >= ox as f64 * 0.5 || 2.0 * rmax >= zmin as f64 {
            return Err(Error::invalid(format!(
                "lesion radius {rmax} exceeds the volume ({ox}×{oy}, at least {zmin} slices)"
            )));
        }
        if self.noise_sigma < 0.0 || !self.lesion_contrast.is_finite() {
            return Err(Error::invalid("noise sigma must be >= 0 and contrast finite"));
        }
        Ok(())
    }

    fn factor(&self) -> usize {
        self.native_xy / self.out_dims[0]
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    /// Normalised squared radius; < 1 inside.
    fn rho2(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2)).sum()
    }
}

/// Spherical lesion in output-voxel units (z in slices).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lesion {
    pub center: [f64; 3],
    pub radius: f64,
}

/// Generates one labelled phantom.
///
/// The background (brain shape, depth, noise) depends only on
/// `(config.rng_seed, id)`, so the label-1 volume for an id is its label-0
/// counterpart plus lesions.
pub fn generate_phantom(config: &PhantomConfig, label: Label, id: &str) -> Result<LabeledVolume> {
    let (volume, _) = generate_with_lesions(config, label, id)?;
    Ok(LabeledVolume { id: id.to_string(), volume, label, split: Split::Train })
}

/// Like [`generate_phantom`] but also returns the lesions that were placed.
pub fn generate_with_lesions(config: &PhantomConfig, label: Label, id: &str) -> Result<(Volume, Vec<Lesion>)> {
    config.validate()?;
    let mut bg_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, &format!("background/{id}")));
    let mut lesion_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, &format!("lesions/{id}")));

    let f = config.factor();
    let nx = config.native_xy;
    let nz = bg_rng.random_range(config.native_z_range.0..=config.native_z_range.1);
    let out_xy = config.out_dims[0];

    // brain ellipsoid in output-voxel coordinates
    let brain = Ellipsoid {
        center: [
            out_xy as f64 * bg_rng.random_range(0.46..0.54),
            out_xy as f64 * bg_rng.random_range(0.46..0.54),
            nz as f64 * bg_rng.random_range(0.47..0.53),
        ],
        radii: [
            out_xy as f64 * bg_rng.random_range(0.36..0.44),
            out_xy as f64 * bg_rng.random_range(0.40..0.46),
            nz as f64 * bg_rng.random_range(0.42..0.48),
        ],
    };

    let lesions = match label {
        Label::Normal => Vec::new(),
        Label::Tumor => place_lesions(config, &brain, nz, &mut lesion_rng),
    };

    let noise = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let contrast = config.lesion_contrast as f32;
    let mut native = Volume::zeros([nx, nx, nz]);
    let inv_f = 1.0 / f as f64;
    for z in 0..nz {
        let pz = z as f64 + 0.5;
        for y in 0..nx {
            let py = (y as f64 + 0.5) * inv_f;
            for x in 0..nx {
                let px = (x as f64 + 0.5) * inv_f;
                let p = [px, py, pz];
                let rho2 = brain.rho2(p);
                let mut v = if rho2 < 1.0 {
                    let edge = smoothstep(1.0, 0.85, rho2.sqrt()) as f32;
                    (TISSUE_BASE + TISSUE_GRADIENT * (1.0 - rho2 as f32)) * edge
                } else {
                    0.0
                };
                for lesion in &lesions {
                    let d = ((0..3).map(|a| (p[a] - lesion.center[a]).powi(2)).sum::<f64>()).sqrt();
                    if d < lesion.radius + 0.5 {
                        v += contrast * smoothstep(lesion.radius + 0.5, lesion.radius - 0.5, d) as f32;
                    }
                }
                // noise is drawn for every voxel so the stream is label-independent
                let n = if config.noise_sigma > 0.0 { noise.sample(&mut bg_rng) as f32 } else { 0.0 };
                let idx = native.index(x, y, z);
                native.voxels_mut()[idx] = (v + n).clamp(0.0, 1.0);
            }
        }
    }
    let volume = native.downsample_xy(out_xy)?.pad_z(config.out_dims[2])?;
    Ok((volume, lesions))
}

fn place_lesions(config: &PhantomConfig, brain: &Ellipsoid, nz: usize, rng: &mut ChaCha8Rng) -> Vec<Lesion> {
    let count = rng.random_range(config.lesion_count_range.0..=config.lesion_count_range.1);
    let (rmin, rmax) = config.lesion_radius_range;
    (0..count)
        .map(|_| {
            let radius = if rmax > rmin { rng.random_range(rmin..=rmax) } else { rmin };
            loop {
                // rejection-sample a centre well inside the brain and the imaged slab
                let c = [
                    brain.center[0] + brain.radii[0] * rng.random_range(-0.6..0.6),
                    brain.center[1] + brain.radii[1] * rng.random_range(-0.6..0.6),
                    brain.center[2] + brain.radii[2] * rng.random_range(-0.6..0.6),
                ];
                if brain.rho2(c) <= 0.36 && c[2] >= radius && c[2] <= nz as f64 - radius {
                    break Lesion { center: c, radius };
                }
            }
        })
        .collect()
}

/// 1 at `inner`, 0 at `outer`, smooth in between (either ordering).
fn smoothstep(outer: f64, inner: f64, x: f64) -> f64 {
    let t = ((x - outer) / (inner - outer)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}
