//! End-to-end checks of the library against independent oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vhred::data::{load_corpus, Dialogue, TokenId, BOS, EOS, NUM_RESERVED, UNK};
use vhred::decoding::{beam_search, DecodeConfig, LatentMode};
use vhred::init::randomize_params;
use vhred::models::{
    gaussian_kl, hred_forward, latent_noise, load_checkpoint, rnnlm_nll, save_checkpoint,
    vhred_elbo, warm_start, ModelBundle, ModelConfig, ModelKind, RngState,
};
use vhred::tensor::HasParams;
use vhred::training::{train, TrainConfig};

fn random_model(kind: ModelKind, vocab: usize, dz: usize, seed: u64, scale: f64) -> ModelBundle {
    let mut m = ModelBundle::new(ModelConfig::small(kind, vocab, 4, dz), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    randomize_params(m.params_mut(), scale, &mut rng);
    m
}

fn random_dialogue(rng: &mut impl Rng, vocab: usize, utterances: usize, max_len: usize) -> Dialogue {
    let words = (0..utterances)
        .map(|_| {
            let n = rng.random_range(1..=max_len);
            (0..n).map(|_| rng.random_range(NUM_RESERVED..vocab)).collect()
        })
        .collect();
    Dialogue::from_words(words).unwrap()
}

/// Log-probability of `words </s>` after `context`, by teacher forcing.
fn response_log_prob(m: &ModelBundle, context: &Dialogue, words: &[TokenId]) -> f64 {
    let mut response = vec![BOS];
    response.extend_from_slice(words);
    response.push(EOS);
    if m.kind() == ModelKind::Rnnlm {
        let ctx = context.flatten();
        let mut all = ctx.clone();
        all.extend_from_slice(&response);
        let nll = rnnlm_nll(m, &all).unwrap();
        // per_token[i] predicts all[i + 1]; skip the prediction of `<s>`.
        return -nll.per_token[ctx.len()..].iter().sum::<f64>();
    }
    let mut d = context.clone();
    d.push(response).unwrap();
    let z = m.prior_for_target(&d, d.len() - 1).ok().map(|p| p.mean);
    m.utterance_log_likelihood(&d, d.len() - 1, z.as_deref()).unwrap()
}

/// Best `(words, normalized score)` over every response of at most
/// `max_tokens` tokens, `</s>` included.
fn brute_force(m: &ModelBundle, context: &Dialogue, max_tokens: usize) -> (Vec<TokenId>, f64) {
    let alphabet: Vec<TokenId> = std::iter::once(UNK)
        .chain(NUM_RESERVED..m.config().vocab_size)
        .collect();
    let mut frontier: Vec<Vec<TokenId>> = vec![vec![]];
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    for len in 0..max_tokens {
        for words in &frontier {
            let score = response_log_prob(m, context, words) / (len + 1) as f64;
            let better = match &best {
                None => true,
                Some((bw, bs)) => score > *bs || (score == *bs && (words.len(), words) < (bw.len(), bw)),
            };
            if better {
                best = Some((words.clone(), score));
            }
        }
        frontier = frontier
            .iter()
            .flat_map(|w| {
                alphabet.iter().map(move |&t| {
                    let mut n = w.clone();
                    n.push(t);
                    n
                })
            })
            .collect();
    }
    best.unwrap()
}

#[test]
fn exhaustive_beam_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let max_tokens = 5;
    for (i, kind) in [ModelKind::Rnnlm, ModelKind::Hred, ModelKind::Vhred].into_iter().cycle().take(9).enumerate() {
        let m = random_model(kind, 6, 2, i as u64, 1.5);
        let ctx = random_dialogue(&mut rng, 6, 2, 3);
        let cfg = DecodeConfig {
            beam_width: 1024,
            max_tokens,
            latent_mode: LatentMode::PriorMean,
            seed: 0,
        };
        let got = beam_search(&m, &ctx, &cfg).unwrap();
        let (words, score) = brute_force(&m, &ctx, max_tokens);
        assert!(!got.truncated);
        assert_eq!(got.words(), words.as_slice(), "model {i} ({kind:?})");
        assert!((got.score - score).abs() < 1e-9, "{} vs {score}", got.score);
    }
}

/// `log p(w_n | context)` with the latent integrated out on a grid.
fn quadrature_log_marginal(m: &ModelBundle, d: &Dialogue, target: usize) -> f64 {
    let prior = m.prior_for_target(d, target).unwrap();
    let (mu, sd) = (prior.mean[0], prior.variance[0].sqrt());
    let points = 2000;
    let (lo, hi) = (mu - 12.0 * sd, mu + 12.0 * sd);
    let h = (hi - lo) / (points - 1) as f64;
    let logs: Vec<f64> = (0..points)
        .map(|i| {
            let z = lo + h * i as f64;
            let w = if i == 0 || i == points - 1 { 0.5 * h } else { h };
            w.ln() + prior.log_density(&[z]) + m.utterance_log_likelihood(d, target, Some(&[z])).unwrap()
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

#[test]
fn monte_carlo_bound_stays_below_quadrature_marginal() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..2 {
        let m = random_model(ModelKind::Vhred, 7, 1, 100 + seed, 0.5);
        let d = random_dialogue(&mut rng, 7, 3, 3);
        let marginal: f64 = (1..d.len()).map(|t| quadrature_log_marginal(&m, &d, t)).sum();
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| vhred_elbo(&m, &d, 1.0, &latent_noise(&d, 1, &mut rng), None).unwrap().bound)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(mean <= marginal + 3.0 * se, "bound {mean} marginal {marginal} se {se}");
    }
}

#[test]
fn kl_closed_form_against_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 3;
    let mut g = || {
        let mean = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let var = (0..dim).map(|_| rng.random_range(0.3..2.0)).collect();
        vhred::models::DiagGaussian::new(mean, var).unwrap()
    };
    let (q, p) = (g(), g());
    let kl = gaussian_kl(&q, &p).unwrap();
    let n = 200_000;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for _ in 0..n {
        let z: Vec<f64> = (0..dim)
            .map(|i| q.mean[i] + q.variance[i].sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let x = q.log_density(&z) - p.log_density(&z);
        sum += x;
        sq += x * x;
    }
    let mean = sum / n as f64;
    let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - kl).abs() <= 3.0 * se, "{mean} vs {kl} (se {se})");
}

fn toy_corpus() -> (vhred::data::Corpus, vhred::data::Vocabulary) {
    load_corpus(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/toy.txt"), None).unwrap()
}

#[test]
fn trained_hred_is_order_sensitive() {
    let (corpus, vocab) = toy_corpus();
    let mut cfg = ModelConfig::small(ModelKind::Hred, vocab.len(), 16, 0);
    cfg.decoder_hidden = 24;
    let mut m = ModelBundle::new(cfg, 3).unwrap();
    let tc = TrainConfig {
        learning_rate: 0.01,
        batch_size: 10,
        max_batches: 300,
        validate_every: 1000,
        validation_samples: 1,
        ..TrainConfig::default()
    };
    train(&mut m, &corpus, &corpus, &tc).unwrap();
    let d = &corpus.dialogues[0];
    let mut swapped: Vec<Vec<TokenId>> = d.utterances().to_vec();
    swapped.swap(0, 1);
    let swapped = Dialogue::new(swapped).unwrap();
    let a: f64 = hred_forward(&m, d).unwrap().iter().sum();
    let b: f64 = hred_forward(&m, &swapped).unwrap().iter().sum();
    assert!((a - b).abs() > 1e-3, "{a} vs {b}");
}

#[test]
fn warm_start_from_a_saved_hred_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hred.ckpt");
    let hred = random_model(ModelKind::Hred, 9, 0, 4, 0.5);
    save_checkpoint(&path, &hred, RngState { seed: 4, batches: 0 }).unwrap();
    let (loaded, _) = load_checkpoint(&path).unwrap();
    let mut cfg = hred.config().clone();
    cfg.kind = ModelKind::Vhred;
    cfg.latent_dim = 3;
    let mut vhred = ModelBundle::new(cfg, 8).unwrap();
    warm_start(&mut vhred, &loaded).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let d = random_dialogue(&mut rng, 9, 3, 4);
        let want = hred_forward(&hred, &d).unwrap();
        let elbo = vhred_elbo(&vhred, &d, 1.0, &latent_noise(&d, 3, &mut rng), None).unwrap();
        for (r, w) in elbo.reconstruction.iter().zip(&want) {
            assert!((-r - w).abs() < 1e-9);
        }
    }
}
