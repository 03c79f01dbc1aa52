//! Seeded inputs shared by the benchmarks.

use kinship_core::dataset::{assemble_tensor, FeatureBlock};
use kinship_core::imaging::Plane;
use kinship_core::subspace::Tensor3;
use kinship_core::synth::{latent_features, LatentSpec};

/// Deterministic textured plane with values in `[0, 255]`.
pub fn textured_plane(width: usize, height: usize) -> Plane {
    Plane::from_fn(width, height, |x, y| {
        let (u, v) = (x as f64, y as f64);
        127.5 + 60.0 * (0.21 * u).sin() * (0.13 * v).cos() + 40.0 * ((u * 7.0 + v * 13.0) % 17.0 / 17.0 - 0.5)
    })
    .expect("non-empty plane")
}

/// Parent and child tensors with their family labels from the latent
/// generator.
pub fn latent_views(families: usize, seed: u64) -> (Tensor3, Tensor3, Vec<usize>) {
    let spec = LatentSpec {
        families,
        ..Default::default()
    };
    let (manifest, features) = latent_features(&spec, seed).expect("valid spec");
    let layout = (spec.mode1, spec.mode2);
    let pick = |suffix: &str| -> Vec<&FeatureBlock> {
        manifest
            .images
            .iter()
            .filter(|i| i.id.ends_with(suffix))
            .map(|i| &features[&i.id])
            .collect()
    };
    let x = assemble_tensor(&pick("_p"), layout).expect("uniform layout");
    let z = assemble_tensor(&pick("_c"), layout).expect("uniform layout");
    (x, z, (0..families).collect())
}
