use unifier_core::ruleworld::Lexicon;
use unifier_neural::gradcheck::{grad_check, grad_check_spliced};
use unifier_neural::{tokenize, EncoderConfig, EncoderParams, Vocab};

fn small(vocab: &Vocab, seed: u64) -> EncoderConfig {
    EncoderConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        ffn_mult: 2,
        max_len: 40,
        vocab_size: vocab.len(),
        init_std: 0.5,
        seed,
        ..EncoderConfig::default()
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let vocab = Vocab::from_lexicon(&Lexicon::default());
    let cfg = EncoderConfig {
        n_layers: 2,
        ..small(&vocab, 3)
    };
    let params = EncoderParams::<f64>::init(&cfg).unwrap();
    let a = tokenize("Bob is big. If someone is big then they are red.", "Bob is red?", &vocab, 40).unwrap();
    let b = tokenize("Anne is not kind.", "Anne is kind?", &vocab, 40).unwrap();
    let report = grad_check(&params, &[&a, &b], &[true, false], 1e-5, None).unwrap();
    assert_eq!(report.checked, params.len());
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn spliced_gradients_match_finite_differences() {
    let vocab = Vocab::from_lexicon(&Lexicon::default());
    let mut fu = EncoderParams::<f64>::init(&small(&vocab, 1)).unwrap();
    fu.frozen = true;
    let uu = EncoderParams::<f64>::init(&small(&vocab, 2)).unwrap();
    let a = tokenize("Bob is rough. Rough things are green.", "Bob is green?", &vocab, 40).unwrap();
    let b = tokenize("Gary is young.", "Gary is not green?", &vocab, 40).unwrap();
    let report = grad_check_spliced(&fu, &uu, &[&a, &b], &[true, true], 1e-5, None).unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}
