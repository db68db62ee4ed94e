use chainlabel::data::{synth_generate, Dataset, Example, LabelVocab, SynthConfig};
use chainlabel::model::Hyper;
use chainlabel::train::{fit, order_labels, TrainConfig};
use chainlabel::{Checkpoint, Error};

fn small() -> (Dataset, LabelVocab) {
    let data = synth_generate(&SynthConfig {
        examples_per_group: 30,
        ..SynthConfig::default()
    })
    .unwrap();
    let vocab = LabelVocab::from_dataset(&data);
    (data, vocab)
}

fn config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 16,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    }
}

fn checkpoint_text(data: &Dataset, vocab: &LabelVocab, cfg: &TrainConfig) -> String {
    let hyper = Hyper::new(vocab.len(), 6, 10, data.feature_dim()).unwrap();
    let out = fit(data, vocab, hyper, cfg).unwrap();
    Checkpoint::new(vocab.clone(), out.order, out.params)
        .unwrap()
        .to_json()
        .unwrap()
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let (data, vocab) = small();
    let cfg = config();
    assert_eq!(
        checkpoint_text(&data, &vocab, &cfg),
        checkpoint_text(&data, &vocab, &cfg)
    );
    let other = TrainConfig { seed: 43, ..cfg };
    assert_ne!(
        checkpoint_text(&data, &vocab, &cfg),
        checkpoint_text(&data, &vocab, &other)
    );
}

#[test]
fn thread_count_does_not_change_results() {
    let (data, vocab) = small();
    let cfg = config();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| checkpoint_text(&data, &vocab, &cfg))
    };
    let single = run(1);
    assert_eq!(single, run(3));
    assert_eq!(single, run(8));
}

#[test]
fn loss_goes_down() {
    let (data, vocab) = small();
    let hyper = Hyper::new(vocab.len(), 6, 10, data.feature_dim()).unwrap();
    let cfg = TrainConfig { epochs: 15, ..config() };
    let history = fit(&data, &vocab, hyper, &cfg).unwrap().history;
    assert_eq!(history.len(), 15);
    assert!(history.iter().enumerate().all(|(i, r)| r.epoch == i + 1));
    assert!(history[14].mean_loss < 0.7 * history[0].mean_loss, "{history:?}");
}

#[test]
fn empty_label_examples_are_skipped_and_counted() {
    let (mut data, vocab) = small();
    for i in 0..3 {
        data.examples.push(Example {
            id: format!("blank-{i}"),
            features: vec![0.0; data.feature_dim()],
            labels: vec![],
        });
    }
    let hyper = Hyper::new(vocab.len(), 6, 10, data.feature_dim()).unwrap();
    let out = fit(&data, &vocab, hyper, &config()).unwrap();
    assert!(out.history.iter().all(|r| r.examples_skipped == 3));
}

#[test]
fn mismatched_hyper_and_empty_training_set_are_errors() {
    let (data, vocab) = small();
    let wrong_vocab = Hyper::new(vocab.len() + 1, 6, 10, data.feature_dim()).unwrap();
    assert!(fit(&data, &vocab, wrong_vocab, &config()).is_err());
    let wrong_dim = Hyper::new(vocab.len(), 6, 10, data.feature_dim() + 1).unwrap();
    assert!(fit(&data, &vocab, wrong_dim, &config()).is_err());

    let blank = Dataset::new(vec![Example {
        id: "x".into(),
        features: vec![1.0, 2.0],
        labels: vec![],
    }])
    .unwrap();
    let vocab = LabelVocab::from_labels(vec!["a".into(), "b".into()]).unwrap();
    let hyper = Hyper::new(2, 2, 2, 2).unwrap();
    assert!(fit(&blank, &vocab, hyper, &config()).is_err());
}

#[test]
fn more_frequent_label_leads_the_target_sequence() {
    let ex = |id: &str, labels: &[&str]| Example {
        id: id.into(),
        features: vec![0.0],
        labels: labels.iter().map(|s| s.to_string()).collect(),
    };
    let data = Dataset::new(vec![
        ex("1", &["zebra", "elephant"]),
        ex("2", &["elephant"]),
        ex("3", &["grass", "elephant", "zebra"]),
    ])
    .unwrap();
    let vocab = LabelVocab::from_dataset(&data);
    let order = order_labels(&data, &vocab).unwrap();
    let seq = chainlabel::train::build_target_sequence(&data.examples[0].labels, &vocab, &order).unwrap();
    let names: Vec<&str> = seq[..2].iter().map(|&id| vocab.label(id).unwrap()).collect();
    assert_eq!(names, ["elephant", "zebra"]);
    assert_eq!(seq[2], vocab.end_id());
    let unknown = chainlabel::train::build_target_sequence(&["lion".to_string()], &vocab, &order);
    assert!(matches!(unknown, Err(Error::UnknownLabel(_))));
}
