use chainlabel::baseline::{baseline_fit, baseline_threshold, BaselineLoss};
use chainlabel::data::{synth_generate, LabelVocab, SynthConfig};
use chainlabel::train::TrainConfig;

// Context labels carry no feature signal beyond the group, so a per-label
// threshold classifier cannot be right more often than the base rate.
#[test]
fn thresholded_context_precision_is_capped_by_the_base_rate() {
    for seed in 0..10u64 {
        let synth = SynthConfig {
            co_occurrence: 0.7,
            seed,
            ..SynthConfig::default()
        };
        let data = synth_generate(&synth).unwrap();
        let (train, test) = data.split(0.25, seed).unwrap();
        let vocab = LabelVocab::from_dataset(&data);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 20,
            seed,
            ..TrainConfig::default()
        };
        let params = baseline_fit(&train, &vocab, &cfg, BaselineLoss::Logistic)
            .unwrap()
            .params;
        let (mut predicted, mut correct) = (0usize, 0usize);
        for ex in &test.examples {
            for id in baseline_threshold(&ex.features, &params).unwrap() {
                let label = vocab.label(id).unwrap();
                if SynthConfig::parse_context_label(label).is_some() {
                    predicted += 1;
                    correct += ex.labels.iter().any(|l| l == label) as usize;
                }
            }
        }
        assert!(predicted > 0, "seed {seed}: no context label passed the threshold");
        let p = synth.co_occurrence;
        let precision = correct as f64 / predicted as f64;
        let slack = 3.0 * (p * (1.0 - p) / predicted as f64).sqrt();
        assert!(
            precision <= p + slack,
            "seed {seed}: precision {precision} vs base rate {p} + {slack}"
        );
    }
}
