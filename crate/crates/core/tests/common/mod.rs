#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sspfield::config::RunConfig;
use sspfield::datamodel::{GeoCoordinate, Reference, ReferenceSet, Sample, SoundSpeedProfile, YearMonth};
use sspfield::ingest::{build_samples, synthesize_field, GridField, MonthRange, SampleSplit, SplitSpec, SynthSpec};

pub fn desk_field(seed: u64) -> GridField {
    let cfg = RunConfig { seed, ..RunConfig::desk() };
    synthesize_field(&cfg.synth()).unwrap()
}

pub fn desk_split(seed: u64) -> SampleSplit {
    build_samples(&desk_field(seed), &RunConfig::desk().split().unwrap()).unwrap()
}

/// A small field: 8 x 8 cells, 3 months, `d` depths; two training months.
pub fn small_split(seed: u64, d: usize) -> SampleSplit {
    let f = synthesize_field(&SynthSpec::new(seed, 8, 8, 3, d)).unwrap();
    let ym = |k| YearMonth::new(2022, 1).unwrap().plus_months(k);
    build_samples(
        &f,
        &SplitSpec {
            train_months: MonthRange::new(ym(0), ym(1)).unwrap(),
            test_months: MonthRange::new(ym(2), ym(2)).unwrap(),
            train_stride_deg: 3.0,
            test_offset_deg: 1.0,
        },
    )
    .unwrap()
}

pub fn random_profile(rng: &mut ChaCha8Rng, d: usize) -> SoundSpeedProfile {
    let base = rng.gen_range(1480.0..1520.0);
    SoundSpeedProfile::new((0..d).map(|_| base + rng.gen_range(-5.0..5.0)).collect()).unwrap()
}

/// Target at the origin-ish point with 8 references at random positions.
pub fn random_sample(rng: &mut ChaCha8Rng, d: usize) -> Sample {
    let target = GeoCoordinate::new(rng.gen_range(10.0..20.0), rng.gen_range(-50.0..-40.0)).unwrap();
    let refs = (0..8)
        .map(|_| Reference {
            coord: GeoCoordinate::new(
                target.lon + rng.gen_range(-2.0..2.0),
                target.lat + rng.gen_range(-2.0..2.0),
            )
            .unwrap(),
            sst: rng.gen_range(2.0..15.0),
            profile: random_profile(rng, d),
        })
        .collect();
    let truth = random_profile(rng, d);
    Sample::new(
        target,
        rng.gen_range(2.0..15.0),
        ReferenceSet::new(refs).unwrap(),
        Some(truth),
        YearMonth::new(2022, 10).unwrap(),
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
