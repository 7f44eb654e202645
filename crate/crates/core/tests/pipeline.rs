use dawn_core::eval::score;
use dawn_core::model::{Ablation, ModelConfig};
use dawn_core::sim::{generate_dataset, DatasetBundle, ScenarioConfig, Split, SplitCounts};
use dawn_core::training::{train, TrainConfig};
use dawn_core::{Model64, WaveletBank64};

fn small_bundle(seed: u64, train: usize) -> DatasetBundle {
    let cfg = ScenarioConfig {
        rng_seed: seed,
        ..Default::default()
    };
    let counts = SplitCounts {
        train,
        val: 32,
        test_per_class: 32,
    };
    generate_dataset(&cfg, counts).unwrap()
}

fn fit(bundle: &DatasetBundle, cfg: &TrainConfig) -> (Model64, WaveletBank64, Vec<f64>) {
    let mut model = Model64::new(ModelConfig::default().with_ablation(cfg.ablation), cfg.seed).unwrap();
    let mut bank = WaveletBank64::new(&cfg.wavelet_scales, cfg.learnable_bank).unwrap();
    let rep = train(&bundle.inputs(Split::Train).unwrap(), &mut model, &mut bank, cfg).unwrap();
    (model, bank, rep.loss_history)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn training_reduces_loss_and_separates_classes() {
    let bundle = small_bundle(11, 512);
    let cfg = TrainConfig {
        epochs: 10,
        seed: 4,
        ..Default::default()
    };
    let (model, bank, history) = fit(&bundle, &cfg);
    assert_eq!(history.len(), 10);
    assert!(history[9] < history[0], "{history:?}");

    let test = bundle.inputs::<f64>(Split::Test).unwrap();
    let scores = score(&model, &bank, &test, cfg.lambda1, cfg.lambda2).unwrap();
    let by_class = |c: u8| -> Vec<f64> {
        scores
            .iter()
            .zip(&test.labels)
            .filter(|(_, &l)| l == c)
            .map(|(s, _)| *s)
            .collect()
    };
    let (clean, hit) = (median(by_class(0)), median(by_class(1)));
    assert!(hit > clean, "median score interference {hit} vs clean {clean}");
}

#[test]
fn no_wavelet_variant_is_full_with_zero_lambda2() {
    let bundle = small_bundle(12, 96);
    let base = TrainConfig {
        epochs: 2,
        batch_size: 32,
        seed: 8,
        ..Default::default()
    };
    let (m_full, _, h_full) = fit(
        &bundle,
        &TrainConfig {
            lambda2: 0.0,
            ..base.clone()
        },
    );
    let (m_nw, _, h_nw) = fit(
        &bundle,
        &TrainConfig {
            ablation: Ablation::NoWaveletLoss,
            ..base
        },
    );
    assert_eq!(h_full, h_nw);
    for ((n1, p1), (n2, p2)) in m_full.params().iter().zip(m_nw.params().iter()) {
        assert_eq!(n1, n2);
        assert_eq!(p1.value.data(), p2.value.data(), "{n1}");
    }
}

#[test]
fn f32_and_f64_pipelines_agree_roughly() {
    let bundle = small_bundle(13, 64);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 32,
        ..Default::default()
    };
    let (model, bank, _) = fit(&bundle, &cfg);
    let test64 = bundle.inputs::<f64>(Split::Test).unwrap();
    let test32 = bundle.inputs::<f32>(Split::Test).unwrap();
    let s64 = score(&model, &bank, &test64, 1.0, 0.1).unwrap();
    let bank32 = dawn_core::WaveletBank32::new(&cfg.wavelet_scales, false).unwrap();
    let s32 = score(&model.cast::<f32>(), &bank32, &test32, 1.0, 0.1).unwrap();
    for (a, b) in s64.iter().zip(&s32) {
        assert!((a - b).abs() <= 1e-3 * a.abs().max(1.0), "{a} vs {b}");
    }
}
