use ptdebias_core::encoder::{build_encoder, BackboneSource, EncoderConfig, EncoderHandle};
use ptdebias_core::gradcheck::check_prompt_gradients;
use ptdebias_core::head::{trainable_parameters, TaskKind};
use ptdebias_core::lexicon::{augment_corpus, BiasLexicon, CounterfactualExample, Label, LabeledText, TextUnit};
use ptdebias_core::toy::{generate_toy_task, ToyTaskConfig};
use ptdebias_core::train::{train, Method, Model, TrainConfig, TrainData};

fn encoder(layers: usize, hidden: usize, seed: u64) -> EncoderHandle {
    build_encoder(BackboneSource::Toy {
        config: EncoderConfig::toy(layers, hidden, 2),
        seed,
    })
    .unwrap()
}

fn small_task() -> (Vec<CounterfactualExample>, Vec<LabeledText>) {
    let task = generate_toy_task(&ToyTaskConfig {
        train_size: 48,
        dev_size: 16,
        ..ToyTaskConfig::default()
    });
    (augment_corpus(&task.train, &BiasLexicon::default_gender()), task.dev)
}

fn cfg(method: Method) -> TrainConfig {
    TrainConfig {
        method,
        prompt_length: 3,
        batch_size: 8,
        epochs: 1,
        max_len: 24,
        ..TrainConfig::default()
    }
}

#[test]
fn prompt_gradients_match_finite_differences() {
    let h = encoder(1, 8, 3);
    let (train_set, _) = small_task();
    let batch: Vec<CounterfactualExample> = train_set.iter().filter(|e| e.has_attribute()).take(4).cloned().collect();
    for method in [Method::Pt, Method::Co2pt, Method::PtCdaClP] {
        let c = cfg(method);
        let model = Model::init(&h, &c, Some(2.5));
        let g = check_prompt_gradients(&h, &model, &c, &batch, &[], 1e-3).unwrap();
        assert_eq!(g.checked, 2 * 3 * 8);
        assert!(g.max_rel_error < 1e-4, "{method}: {g:?}");
    }
}

#[test]
fn zero_alpha_reduces_to_plain_prompt_tuning() {
    let h = encoder(1, 8, 5);
    let (train_set, dev) = small_task();
    let data = TrainData {
        train: &train_set,
        dev: &dev,
        auxiliary: &[],
    };
    let pt = train(&h, &cfg(Method::Pt), data, |_| Ok(None)).unwrap();
    let co = train(
        &h,
        &TrainConfig {
            alpha: 0.0,
            ..cfg(Method::Co2pt)
        },
        data,
        |_| Ok(None),
    )
    .unwrap();
    assert_eq!(pt.model, co.model);
    assert_eq!(pt.history[0].total_loss.to_bits(), co.history[0].total_loss.to_bits());
}

#[test]
fn only_prompt_and_head_train() {
    let h = encoder(2, 8, 1);
    let before = h.backbone().clone();
    let (train_set, dev) = small_task();
    let c = TrainConfig {
        max_steps: Some(5),
        ..cfg(Method::Co2pt)
    };
    let out = train(
        &h,
        &c,
        TrainData {
            train: &train_set,
            dev: &dev,
            auxiliary: &[],
        },
        |_| Ok(None),
    )
    .unwrap();
    assert_eq!(out.steps, 5);
    assert_eq!(h.backbone(), &before);
    let census = trainable_parameters(&h, &out.model.prompt, &out.model.head);
    assert_eq!(census.backbone_trainable, 0);
    assert_eq!(census.prompt, 2 * 2 * 3 * 8);
    assert_eq!(census.head, 8 + 1);
}

#[test]
fn best_epoch_has_the_highest_dev_metric() {
    let h = encoder(1, 8, 2);
    let (train_set, dev) = small_task();
    let out = train(
        &h,
        &TrainConfig {
            epochs: 4,
            ..cfg(Method::Co2pt)
        },
        TrainData {
            train: &train_set,
            dev: &dev,
            auxiliary: &[],
        },
        |_| Ok(Some(0.0)),
    )
    .unwrap();
    let best = out.history.iter().map(|r| r.dev_metric).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_dev_metric, best);
    assert_eq!(out.history[out.best_epoch].dev_metric, best);
    assert!(out.history.len() <= 4);
}

#[test]
fn classification_training_runs() {
    let h = encoder(1, 8, 2);
    let lex = BiasLexicon::default_gender();
    let data: Vec<LabeledText> = (0..12)
        .map(|i| {
            LabeledText::new(
                TextUnit::pair(format!("The man ate {i} bagels"), "A person ate"),
                Label::Class(i % 3),
            )
        })
        .collect();
    let train_set = augment_corpus(&data, &lex);
    let out = train(
        &h,
        &TrainConfig {
            task: TaskKind::Classification { num_classes: 3 },
            ..cfg(Method::Co2pt)
        },
        TrainData {
            train: &train_set,
            dev: &data,
            auxiliary: &[],
        },
        |_| Ok(None),
    )
    .unwrap();
    assert!((0.0..=1.0).contains(&out.best_dev_metric));
}
