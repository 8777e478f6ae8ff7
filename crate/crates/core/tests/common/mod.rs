//! Shared fixtures for the integration suites: a 32^3 toy head with four
//! named structures and a reproducible intensity volume.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxreport::report::TemplateTable;
use voxreport::synth::{ElasticParams, SynthConfig};
use voxreport::volume::{AtlasLabelMap, Dims, Volume};

pub const TOY_NAMES: [&str; 4] = ["alpha cortex", "beta nucleus", "gamma lobe", "delta tract"];

/// A ball of radius 13 centered in a 32^3 grid, split into four structures
/// by x/y quadrant.
pub fn toy_atlas() -> AtlasLabelMap {
    let dims = Dims::new(32, 32, 32).unwrap();
    let c = 15.5f64;
    let mut labels = vec![0u16; dims.voxel_count()];
    for z in 0..32 {
        for y in 0..32 {
            for x in 0..32 {
                let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2);
                if d2 <= 169.0 {
                    let label = 1 + (x >= 16) as u16 + 2 * (y >= 16) as u16;
                    labels[dims.index(x, y, z)] = label;
                }
            }
        }
    }
    let names: BTreeMap<u16, String> = TOY_NAMES
        .iter()
        .enumerate()
        .map(|(i, &n)| (i as u16 + 1, n.to_string()))
        .collect();
    AtlasLabelMap::new(dims, labels, names).unwrap()
}

/// Smooth gradient plus seeded noise; every region has a usable intensity
/// spread.
pub fn toy_volume(seed: u64) -> Volume {
    let dims = Dims::new(32, 32, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..dims.voxel_count())
        .map(|i| {
            let (x, y, z) = dims.coords(i);
            100.0 + 0.8 * x as f32 + 1.6 * y as f32 + 0.4 * z as f32 + rng.random_range(0.0f32..5.0)
        })
        .collect();
    Volume::new(dims, (1.0, 1.0, 1.0), data).unwrap()
}

pub fn toy_templates() -> TemplateTable {
    let json = r#"{
        "alpha cortex": "the alpha cortex is unremarkable",
        "beta nucleus": "the beta nucleus is unremarkable",
        "gamma lobe": "the gamma lobe is unremarkable",
        "__fallback__": "the {structure} shows no abnormality"
    }"#;
    TemplateTable::from_json_str(json).unwrap()
}

pub fn toy_config() -> SynthConfig {
    SynthConfig {
        lesion_count_range: (1, 3),
        polarity_probability_hyper: 0.5,
        edge_probability: 0.5,
        ellipsoid_axis_range: (1.5, 3.5),
        elastic: ElasticParams { alpha: 1.5, sigma_e: 1.5 },
        epsilon: None,
        sigma_b: None,
        shape_init_structure_probability: 0.1,
    }
}
