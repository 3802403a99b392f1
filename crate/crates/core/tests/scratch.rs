//! Temporary tuning harness; removed before finalizing.

use gazefuse::config::{GamMode, ModelConfig, Regime, TrainConfig};
use gazefuse::geom::AnnotationPerturbation;
use gazefuse::rngs;
use gazefuse::synth::render::Appearance;
use gazefuse::synth::{Dataset, DatasetSpec};
use gazefuse::train::{evaluate, train_run, GazeEstimator};
use gazefuse::ttgf::FusionTopology;

fn small_model() -> ModelConfig {
    ModelConfig {
        topology: FusionTopology::EhLr,
        feature_dim: 16,
        num_heads: 2,
        num_blocks: 1,
        mlp_hidden: 32,
        proj_dim: 8,
        gaze_hidden: 16,
        gam_hidden: 8,
        face_size: 32,
        eye_size: 16,
        in_channels: 1,
        conv_channels: vec![6, 12, 24],
    }
}

#[test]
#[ignore]
fn tune_single_set() {
    let spec = DatasetSpec {
        name: "D1".into(),
        dataset_id: 1,
        num_subjects: 10,
        samples_per_subject: 100,
        gaze_range_deg: (20.0, 15.0),
        head_range_deg: (10.0, 8.0),
        appearance: Appearance::default(),
        perturbation: AnnotationPerturbation::yaw_rotation_deg(8.0),
        seed: 601,
    };
    let datasets = vec![Dataset::generate(&spec, 32, 16).unwrap()];
    for (label, lr0, epochs, gamma, seed) in [
        ("s1 lr3e-3 e40 g0.95", 3e-3, 40usize, 0.95, 1u64),
        ("s2 lr3e-3 e40 g0.95", 3e-3, 40, 0.95, 2),
        ("s3 lr3e-3 e40 g0.95", 3e-3, 40, 0.95, 3),
        ("s2 lr2e-3 e16 g0.94", 2e-3, 16, 0.94, 2),
        ("s3 lr2e-3 e16 g0.94", 2e-3, 16, 0.94, 3),
    ] {
        let start = std::time::Instant::now();
        let cfg = TrainConfig {
            lr0,
            warmup_steps: 20,
            gamma,
            epochs,
            batch_size: 32,
            weight_decay: 0.01,
            seed,
            regime: Regime::Single,
            gam_enabled: false,
            dataset: Some("D1".into()),
            ..TrainConfig::default()
        };
        let mut est = GazeEstimator::new(
            small_model(),
            2,
            GamMode::OffsetMlp,
            &mut rngs::substream(seed, &[0x4d4f44, 1]),
        )
        .unwrap();
        let out = train_run(&mut est, &datasets, &cfg, None).unwrap();
        let ds = &datasets[0];
        let stats = evaluate(&est.model, &est.gam, ds, &ds.test_indices(), false).unwrap();
        println!(
            "{label}: steps {}, final err {:.2}°, last loss {:.4}, {:.0}s",
            out.step_losses.len(),
            stats.err_vs_label_deg,
            out.step_losses.last().unwrap(),
            start.elapsed().as_secs_f64()
        );
    }
}
