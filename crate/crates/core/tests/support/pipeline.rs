//! Small end-to-end runs: the frozen-encoder contract and LOO determinism.

use shapeseg::data::{extract_slices, generate_synthetic_dataset, Dataset, SlicePair, SyntheticConfig};
use shapeseg::harness::{run_loo, AblationTable, ExperimentConfig};
use shapeseg::trainer::{train_cae, train_segmenter, Ablation, LrSchedule, NetworkSettings, StageConfig};

/// Four small subjects of the benchmark family.
pub fn smoke_data() -> SyntheticConfig {
    SyntheticConfig {
        n_subjects: 4,
        volume_shape: (8, 32, 32),
        ..SyntheticConfig::scapula_like_v1()
    }
}

pub fn smoke_dataset() -> Dataset {
    Dataset {
        subjects: generate_synthetic_dataset(&smoke_data()).unwrap(),
    }
}

/// Two epochs per stage on 32x32 slices with narrow networks.
pub fn smoke_experiment() -> ExperimentConfig {
    let mut c = ExperimentConfig::reference("smoke-data", "smoke-out");
    c.train.networks = NetworkSettings::desk_scale((32, 32), 4);
    c.train.networks.cae.latent_dim = 16;
    c.train.stage1 = StageConfig::new(0.001, 8, 2).with_schedule(LrSchedule::Cosine);
    c.train.stage2 = StageConfig::new(0.001, 8, 2);
    c
}

pub fn smoke_pairs(ds: &Dataset) -> Vec<SlicePair> {
    ds.subjects.iter().flat_map(|(v, m)| extract_slices(v, m).unwrap()).collect()
}

/// Encoder checksum before stage 2, the trainer's before/after pair, and
/// the checksum of the encoder object after training.
pub fn frozen_encoder_smoke() -> [String; 4] {
    let ds = smoke_dataset();
    let pairs = smoke_pairs(&ds);
    let cfg = smoke_experiment().method_config(Ablation::Full);
    let masks: Vec<_> = pairs.iter().map(|p| p.mask.clone()).collect();
    let cae = train_cae(&masks, &cfg).unwrap();
    let outside = cae.encoder.params().checksum();
    let seg = train_segmenter(&pairs, Some(&cae.encoder), &cfg).unwrap();
    assert_eq!(seg.log.records.iter().map(|r| r.epoch).max(), Some(1));
    [
        outside,
        seg.encoder_checksum_before.unwrap(),
        seg.encoder_checksum_after.unwrap(),
        cae.encoder.params().checksum(),
    ]
}

/// Two smoke LOO runs over all four methods.
pub fn determinism_smoke() -> (AblationTable, AblationTable) {
    let ds = smoke_dataset();
    let cfg = smoke_experiment();
    let a = run_loo(&cfg, &ds, None, &mut |_| {}).unwrap();
    let b = run_loo(&cfg, &ds, None, &mut |_| {}).unwrap();
    (a, b)
}
