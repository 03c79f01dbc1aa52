//! Seeded synthetic data: latent-family feature sets and a small face-like
//! image collection.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg32;

use crate::dataset::{write_manifest, DatasetManifest, FeatureBlock, ImageEntry, Role, MANIFEST_SCHEMA};
use crate::error::{Error, Result};
use crate::imaging::{save_png, Image, Plane};
use crate::protocol::{feature_map, FeatureMap};

/// Feature-level generator: every family owns a unit latent `ℓ_f` drawn from
/// a fixed rank-`rank.0 × rank.1` Kronecker subspace of the `mode1 × mode2`
/// layout; each sample is `ℓ + noise·N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSpec {
    pub families: usize,
    pub mode1: usize,
    pub mode2: usize,
    pub rank: (usize, usize),
    pub noise: f64,
    /// When false, parent and child draw independent latents.
    pub informative: bool,
}

impl Default for LatentSpec {
    fn default() -> Self {
        Self {
            families: 100,
            mode1: 32,
            mode2: 4,
            rank: (4, 2),
            noise: 0.1,
            informative: true,
        }
    }
}

fn gaussian(rng: &mut Pcg32, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Generates a parent and a child sample per family. Ids are `fNNNN_p` /
/// `fNNNN_c`, families `fNNNN`.
pub fn latent_features(spec: &LatentSpec, seed: u64) -> Result<(DatasetManifest, FeatureMap)> {
    let (r1, r2) = spec.rank;
    if spec.families < 2 || r1 == 0 || r2 == 0 || r1 > spec.mode1 || r2 > spec.mode2 {
        return Err(Error::InvalidArgument("need >= 2 families and a rank within the layout".into()));
    }
    let mut rng = Pcg32::seed_from_u64(seed);
    let a = gaussian(&mut rng, spec.mode1, r1).qr().q();
    let b = gaussian(&mut rng, spec.mode2, r2).qr().q();
    let latent = |rng: &mut Pcg32| {
        let m = &a * gaussian(rng, r1, r2) * b.transpose();
        let norm = m.norm();
        m / norm
    };
    let mut images = Vec::new();
    let mut blocks = Vec::new();
    for f in 0..spec.families {
        let family = format!("f{f:04}");
        let shared = latent(&mut rng);
        for (suffix, role) in [("p", Role::Parent), ("c", Role::Child)] {
            let base = if spec.informative { shared.clone() } else { latent(&mut rng) };
            let sample = base + gaussian(&mut rng, spec.mode1, spec.mode2) * spec.noise;
            let id = format!("{family}_{suffix}");
            blocks.push(FeatureBlock::new(
                id.clone(),
                spec.mode1,
                spec.mode2,
                sample.iter().map(|&v| v as f32).collect(),
            )?);
            images.push(ImageEntry {
                path: format!("{id}.png"),
                id,
                role,
                family_id: family.clone(),
                subset: None,
            });
        }
    }
    let manifest = DatasetManifest {
        schema: MANIFEST_SCHEMA,
        name: "synthetic-latent".into(),
        images,
        pairs: None,
        base_dir: PathBuf::new(),
    };
    Ok((manifest, feature_map(blocks)?))
}

struct FaceParams {
    width: f64,
    height: f64,
    eye_gap: f64,
    eye_y: f64,
    mouth_y: f64,
    tone: [f64; 3],
    freq: (f64, f64),
    phase: f64,
}

impl FaceParams {
    fn random(rng: &mut Pcg32) -> Self {
        Self {
            width: rng.random_range(0.30..0.40),
            height: rng.random_range(0.38..0.46),
            eye_gap: rng.random_range(0.12..0.20),
            eye_y: rng.random_range(-0.14..-0.06),
            mouth_y: rng.random_range(0.16..0.24),
            tone: [
                rng.random_range(150.0..220.0),
                rng.random_range(110.0..170.0),
                rng.random_range(90.0..140.0),
            ],
            freq: (rng.random_range(4.0..12.0), rng.random_range(4.0..12.0)),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    fn mix(&self, other: &Self, t: f64, rng: &mut Pcg32, jitter: f64) -> Self {
        let mut j = |a: f64, b: f64, scale: f64| a + t * (b - a) + rng.random_range(-1.0..1.0) * jitter * scale;
        Self {
            width: j(self.width, other.width, 0.02),
            height: j(self.height, other.height, 0.02),
            eye_gap: j(self.eye_gap, other.eye_gap, 0.01),
            eye_y: j(self.eye_y, other.eye_y, 0.01),
            mouth_y: j(self.mouth_y, other.mouth_y, 0.01),
            tone: [
                j(self.tone[0], other.tone[0], 10.0),
                j(self.tone[1], other.tone[1], 10.0),
                j(self.tone[2], other.tone[2], 10.0),
            ],
            freq: (j(self.freq.0, other.freq.0, 0.5), j(self.freq.1, other.freq.1, 0.5)),
            phase: j(self.phase, other.phase, 0.3),
        }
    }

    fn render(&self, size: usize, rng: &mut Pcg32) -> Result<Image> {
        let gain = rng.random_range(0.6..1.2);
        let slope = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let n = size as f64;
        let mut planes = Vec::with_capacity(3);
        let noise: Vec<f64> = (0..size * size).map(|_| rng.random_range(-6.0..6.0)).collect();
        for (c, &tone) in self.tone.iter().enumerate() {
            planes.push(Plane::from_fn(size, size, |x, y| {
                let u = (x as f64 + 0.5) / n - 0.5;
                let v = (y as f64 + 0.5) / n - 0.5;
                let inside = (u / self.width).powi(2) + (v / self.height).powi(2) <= 1.0;
                let mut value = if inside {
                    let texture = 12.0 * (self.freq.0 * u * 6.3 + self.phase).sin() * (self.freq.1 * v * 6.3).cos();
                    let eye = [-1.0, 1.0].iter().any(|s| {
                        ((u - s * self.eye_gap / 2.0) / 0.045).powi(2) + ((v - self.eye_y) / 0.025).powi(2) <= 1.0
                    });
                    let mouth = (u / 0.09).powi(2) + ((v - self.mouth_y) / 0.02).powi(2) <= 1.0;
                    if eye {
                        40.0
                    } else if mouth {
                        tone * 0.55
                    } else {
                        tone + texture
                    }
                } else {
                    70.0 + 20.0 * c as f64
                };
                value *= gain * (1.0 + slope.0 * u + slope.1 * v);
                (value + noise[y * size + x]).clamp(0.0, 255.0)
            })?);
        }
        Ok(Image::from_planes(planes)?.quantized())
    }
}

/// Writes `families` families of father, mother and one child as
/// `size×size` RGB PNGs plus `manifest.json` into `dir`.
pub fn write_synthetic_faces(dir: &Path, families: usize, size: usize, seed: u64) -> Result<DatasetManifest> {
    if families < 2 || size < 16 {
        return Err(Error::InvalidArgument("need >= 2 families and size >= 16".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = Pcg32::seed_from_u64(seed);
    let mut images = Vec::new();
    for f in 0..families {
        let family = format!("fam{f:02}");
        let father = FaceParams::random(&mut rng);
        let mother = FaceParams::random(&mut rng);
        let child = father.mix(&mother, rng.random_range(0.3..0.7), &mut rng, 1.0);
        let child_role = if f % 2 == 0 { Role::Son } else { Role::Daughter };
        for (params, role, tag) in [(&father, Role::Father, "f"), (&mother, Role::Mother, "m"), (&child, child_role, "c")] {
            let id = format!("{family}_{tag}");
            let path = format!("{id}.png");
            save_png(&params.render(size, &mut rng)?, &dir.join(&path))?;
            images.push(ImageEntry {
                id,
                path,
                role,
                family_id: family.clone(),
                subset: None,
            });
        }
    }
    let manifest = DatasetManifest {
        schema: MANIFEST_SCHEMA,
        name: "synthetic-faces".into(),
        images,
        pairs: None,
        base_dir: dir.to_path_buf(),
    };
    write_manifest(&manifest, &dir.join("manifest.json"))?;
    Ok(manifest)
}
