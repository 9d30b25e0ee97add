use fishcore::firefly::{CodecArch, CodecModel, SamplingMode};
use fishcore::train::{constant_dataset, synth_dataset, train_codec, SynthSpec, TrainConfig};
use fishcore::{Error, GfsqConfig};

fn short(steps: u64) -> TrainConfig {
    TrainConfig {
        total_steps: steps,
        warmup_steps: steps / 10,
        log_every: 10,
        ..TrainConfig::toy()
    }
}

#[test]
fn constant_signals_are_learned_within_500_steps() {
    // three levels cannot express ±0.5 until the learned down/up pair rescales
    let q = GfsqConfig::new(1, vec![3], 2).unwrap();
    let model = CodecModel::new(CodecArch::identity(q, SamplingMode::Learned), 0).unwrap();
    let data = constant_dataset(&[-0.5, 0.0, 0.5], 16).unwrap();
    let report = train_codec(
        &data,
        model,
        &TrainConfig {
            batch_size: 3,
            ..short(500)
        },
    )
    .unwrap();
    assert!(report.initial_mse > 0.1, "initial {}", report.initial_mse);
    let best = report.curve.iter().map(|p| p.loss).fold(f64::INFINITY, f64::min);
    assert!(
        report.final_mse <= 1e-3 || best <= 1e-3,
        "final {} best {best}",
        report.final_mse
    );
}

#[test]
fn equal_seeds_give_identical_curves() {
    let data = synth_dataset(&SynthSpec {
        num_signals: 8,
        length: 64,
        num_tones: 2,
        seed: 3,
    })
    .unwrap();
    let q = GfsqConfig::new(2, vec![3], 2).unwrap();
    let run = || {
        let model = CodecModel::new(CodecArch::toy(q.clone(), 4), 5).unwrap();
        train_codec(&data, model, &short(60)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.model.flat_params(), b.model.flat_params());
    assert!(a.curve_csv().starts_with("step,lr,loss,utilization\n"));
    assert_eq!(a.curve_csv().lines().count(), a.curve.len() + 1);
}

#[test]
fn multi_sine_loss_drops() {
    let data = synth_dataset(&SynthSpec {
        num_signals: 16,
        length: 64,
        num_tones: 3,
        seed: 1,
    })
    .unwrap();
    let model = CodecModel::new(CodecArch::toy(GfsqConfig::new(4, vec![3], 2).unwrap(), 8), 1).unwrap();
    let report = train_codec(&data, model, &short(400)).unwrap();
    assert!(
        report.final_mse <= 0.5 * report.initial_mse,
        "{} -> {}",
        report.initial_mse,
        report.final_mse
    );
}

#[test]
fn divergence_aborts_with_step() {
    let data = synth_dataset(&SynthSpec {
        num_signals: 4,
        length: 32,
        num_tones: 2,
        seed: 0,
    })
    .unwrap();
    let model = CodecModel::new(CodecArch::toy(GfsqConfig::new(1, vec![3], 2).unwrap(), 4), 0).unwrap();
    let config = TrainConfig {
        lr_max: 1e200,
        weight_decay: 0.0,
        ..short(50)
    };
    match train_codec(&data, model, &config) {
        Err(Error::Training(msg)) => assert!(msg.contains("step"), "{msg}"),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.final_mse)),
    }
}
