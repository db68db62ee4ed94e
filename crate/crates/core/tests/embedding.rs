//! After training on the synthetic benchmark, context labels sit closer to
//! their own group in the label embedding space than to other groups.

use chainlabel::data::{synth_generate, LabelVocab, SynthConfig};
use chainlabel::metrics::{image_query, nearest_labels};
use chainlabel::model::Hyper;
use chainlabel::train::{fit, TrainConfig};

const SEEDS: u64 = 10;

#[test]
fn context_neighbours_come_from_their_own_group() {
    let mut majority_seeds = 0;
    let mut tallies = Vec::new();
    for seed in 0..SEEDS {
        let synth = SynthConfig {
            examples_per_group: 100,
            seed,
            ..SynthConfig::default()
        };
        let data = synth_generate(&synth).unwrap();
        let vocab = LabelVocab::from_dataset(&data);
        let hyper = Hyper::new(vocab.len(), 16, 32, data.feature_dim()).unwrap();
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            epochs: 20,
            seed,
            ..TrainConfig::default()
        };
        let params = fit(&data, &vocab, hyper, &cfg).unwrap().params;

        // Each context label has `context_labels` co-members: its dominant
        // label and the other context labels of the group.
        let m = synth.context_labels;
        let (mut same, mut cross) = (0, 0);
        for (id, label) in vocab.labels().iter().enumerate() {
            let Some((group, _)) = SynthConfig::parse_context_label(label) else {
                continue;
            };
            let query = params.label_embedding.row(id).to_vec();
            for (other, _) in nearest_labels(&query, &params, m, &[id]).unwrap() {
                if SynthConfig::group_of(vocab.label(other).unwrap()) == Some(group) {
                    same += 1;
                } else {
                    cross += 1;
                }
            }
        }
        if same > cross {
            majority_seeds += 1;
        }
        tallies.push((same, cross));
    }
    assert!(majority_seeds * 2 > SEEDS as usize, "same/cross per seed: {tallies:?}");
}

#[test]
fn image_queries_find_the_dominant_label_of_their_group() {
    let synth = SynthConfig {
        examples_per_group: 100,
        noise: 0.0,
        ..SynthConfig::default()
    };
    let data = synth_generate(&synth).unwrap();
    let vocab = LabelVocab::from_dataset(&data);
    let hyper = Hyper::new(vocab.len(), 16, 32, data.feature_dim()).unwrap();
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        epochs: 20,
        ..TrainConfig::default()
    };
    let params = fit(&data, &vocab, hyper, &cfg).unwrap().params;
    for group in 0..synth.groups {
        let ex = &data.examples[group * synth.examples_per_group];
        let query = image_query(&params, &ex.features).unwrap();
        let top = nearest_labels(&query, &params, 3, &[]).unwrap();
        let groups: Vec<Option<usize>> = top
            .iter()
            .map(|&(id, _)| SynthConfig::group_of(vocab.label(id).unwrap()))
            .collect();
        assert!(groups.contains(&Some(group)), "group {group}: {groups:?}");
    }
}
