use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use vhred::data::{
    load_corpus, load_corpus_with_vocab, read_corpus, read_corpus_with_vocab, synthesize_corpus,
    utterance_to_text, Corpus, SyntheticSpec, Vocabulary,
};
use vhred::decoding::{rollout, sample_response, write_responses, Decoded, LatentMode};
use vhred::evaluation::{
    evaluate_responses, preference_ci, EmbeddingTable, MetricSet, PreferenceCounts, TfIdfIndex,
    UnigramModel,
};
use vhred::init::randomize_params;
use vhred::models::{
    bound_var, dialogue_word_drop, latent_noise, load_checkpoint, save_checkpoint, warm_start,
    LatentSource, ModelBundle, ModelConfig, ModelKind, ObjectiveOptions, RngState,
};
use vhred::rng::{derive_seed, rng_for, Stream};
use vhred::tensor::{grad_check, HasParams};
use vhred::training::{
    format_batch_line, format_validation_line, train_with, TrainEvent, TRAIN_LOG_HEADER,
    VALID_LOG_HEADER,
};

use crate::settings::Settings;
use crate::{ConfigArgs, EvaluateArgs, GenerateArgs, GradcheckArgs, SynthesizeArgs, TrainArgs, RUN_ROOT_ENV};

fn run_dir(out: &Path) -> PathBuf {
    match std::env::var_os(RUN_ROOT_ENV) {
        Some(root) if out.is_relative() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}

fn split_setting(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects key=value, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn resolve(c: &ConfigArgs, mut flags: Vec<(String, String)>) -> Result<Settings> {
    let mut all: Vec<(String, String)> = c.set.iter().map(|s| split_setting(s)).collect::<Result<_>>()?;
    if let Some(seed) = c.seed {
        all.push(("seed".into(), seed.to_string()));
    }
    all.append(&mut flags);
    Settings::resolve(c.preset.as_deref(), c.config.as_deref(), &all)
}

fn push<T: ToString>(flags: &mut Vec<(String, String)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        flags.push((key.to_string(), v.to_string()));
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

pub(crate) fn train(a: TrainArgs) -> Result<()> {
    let mut flags = Vec::new();
    push(&mut flags, "corpus", a.corpus.as_ref().map(|p| p.display()));
    push(&mut flags, "valid", a.valid.as_ref().map(|p| p.display()));
    push(&mut flags, "warm_start", a.warm_start.as_ref().map(|p| p.display()));
    push(&mut flags, "model", a.model);
    push(&mut flags, "max_batches", a.max_batches);
    push(&mut flags, "batch_size", a.batch_size);
    push(&mut flags, "learning_rate", a.learning_rate);
    push(&mut flags, "kl_ramp_batches", a.kl_ramp);
    push(&mut flags, "word_drop_rate", a.word_drop);
    push(&mut flags, "validate_every", a.validate_every);
    push(&mut flags, "patience", a.patience);
    let s = resolve(&a.config, flags)?;
    eprintln!("{}", s.banner());

    let corpus_path = s
        .corpus
        .clone()
        .ok_or_else(|| anyhow!("no training corpus (use --corpus or corpus= in the config)"))?;
    let (corpus, vocab) = load_corpus(&corpus_path, s.preset.vocab_limit)
        .with_context(|| format!("loading {}", corpus_path.display()))?;
    let valid = match &s.valid {
        Some(p) => load_corpus_with_vocab(p, &vocab).with_context(|| format!("loading {}", p.display()))?,
        None => corpus.clone(),
    };
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        ..s.preset.model.clone()
    };
    let train_cfg = &s.preset.train;
    let mut model = ModelBundle::new(cfg, train_cfg.seed)?.with_vocab(vocab)?;
    if let Some(p) = &s.warm_start {
        let (source, _) = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
        let copied = warm_start(&mut model, &source)?;
        eprintln!("warm start: {copied} parameters from {}", p.display());
    }

    let dir = run_dir(&a.out);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.txt"), s.describe())?;
    let mut train_log = BufWriter::new(File::create(dir.join("train.log"))?);
    let mut valid_log = BufWriter::new(File::create(dir.join("valid.log"))?);
    writeln!(train_log, "{TRAIN_LOG_HEADER}")?;
    writeln!(valid_log, "{VALID_LOG_HEADER}")?;
    let best_path = dir.join("best.ckpt");
    let seed = train_cfg.seed;

    let outcome = train_with(&mut model, &corpus, &valid, train_cfg, |event| {
        match event {
            TrainEvent::Batch(r) => writeln!(train_log, "{}", format_batch_line(r, a.wall_clock))?,
            TrainEvent::Validation { record, model } => {
                writeln!(valid_log, "{}", format_validation_line(record))?;
                let d = &record.report.deterministic;
                eprintln!(
                    "batch {}: bound/token {:.4} nll/token {:.4} kl/utt {:.4}{}",
                    record.batch,
                    d.bound_per_token,
                    d.nll_per_token,
                    d.kl_per_utterance,
                    if record.improved { " (best)" } else { "" }
                );
                if record.improved {
                    let rng = RngState { seed, batches: record.batch as u64 };
                    save_checkpoint(&best_path, model, rng)?;
                }
            }
        }
        Ok(())
    })?;
    train_log.flush()?;
    valid_log.flush()?;
    save_checkpoint(
        dir.join("last.ckpt"),
        &model,
        RngState { seed, batches: outcome.batches as u64 },
    )?;
    println!(
        "trained {} batches{}; best validation bound/token {}; run directory {}",
        outcome.batches,
        if outcome.stopped_early { " (early stop)" } else { "" },
        outcome.best_bound.map_or("n/a".to_string(), |b| format!("{b:.6}")),
        dir.display()
    );
    Ok(())
}

fn retrieval_responses(pool_path: &Path, contexts: &str) -> Result<Vec<String>> {
    let text = fs::read_to_string(pool_path).with_context(|| format!("reading {}", pool_path.display()))?;
    let (pool, vocab) = read_corpus(&text, &pool_path.display().to_string(), None)?;
    let pairs: Vec<(String, String)> = pool
        .dialogues
        .iter()
        .filter(|d| d.len() >= 2)
        .map(|d| {
            let (last, ctx) = d.utterances().split_last().expect("two utterances");
            let ctx: Vec<String> = ctx.iter().map(|u| utterance_to_text(u, &vocab)).collect();
            (ctx.join(" "), utterance_to_text(last, &vocab))
        })
        .collect();
    let index = TfIdfIndex::new(pairs)?;
    Ok(contexts
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let words: Vec<&str> = l.split_whitespace().filter(|w| *w != "</u>").collect();
            index.retrieve(&words.join(" ")).response.to_string()
        })
        .collect())
}

pub(crate) fn generate(a: GenerateArgs) -> Result<()> {
    let contexts = fs::read_to_string(&a.context_file)
        .with_context(|| format!("reading {}", a.context_file.display()))?;
    let mut out = open_out(a.out.as_deref())?;
    if let Some(pool) = &a.retrieval_pool {
        for line in retrieval_responses(pool, &contexts)? {
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        return Ok(());
    }

    let mut flags = Vec::new();
    push(&mut flags, "beam_width", a.beam);
    push(&mut flags, "max_tokens", a.max_tokens);
    push(&mut flags, "latent_mode", a.latent_mode);
    let s = resolve(&a.config, flags)?;
    let cfg = s.preset.decode;
    cfg.validate()?;
    if a.n_turns == 0 {
        bail!("--n-turns must be at least 1");
    }
    let ckpt = a.checkpoint.as_ref().expect("clap requires a checkpoint here");
    let (model, _) = load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let vocab: &Vocabulary = model
        .vocab()
        .ok_or_else(|| anyhow!("checkpoint {} carries no vocabulary", ckpt.display()))?;
    let corpus: Corpus = read_corpus_with_vocab(&contexts, &a.context_file.display().to_string(), vocab)?;

    let mut responses: Vec<Vec<Decoded>> = Vec::with_capacity(corpus.len());
    for d in &corpus.dialogues {
        let turns = match a.temperature {
            None => rollout(&model, d, a.n_turns, &cfg)?,
            Some(t) => {
                let mut ctx = d.clone();
                let mut turns = Vec::with_capacity(a.n_turns);
                for turn in 0..a.n_turns {
                    let seed = derive_seed(cfg.seed, Stream::Decode, turn as u64);
                    let r = sample_response(&model, &ctx, t, cfg.max_tokens, seed)?;
                    ctx.push(r.utterance())?;
                    turns.push(r);
                }
                turns
            }
        };
        responses.push(turns);
    }
    write_responses(&mut out, &responses, vocab)?;
    out.flush()?;
    if cfg.latent_mode == LatentMode::PriorMean && model.kind() != ModelKind::Vhred {
        eprintln!("note: latent mode has no effect on a {:?} model", model.kind());
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?
        .lines()
        .map(str::to_string)
        .collect())
}

fn parse_counts(s: &str) -> Result<PreferenceCounts> {
    let v: Vec<u64> = s
        .split(',')
        .map(|x| x.trim().parse::<u64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| anyhow!("--preferences expects wins,losses,ties: {e}"))?;
    match v[..] {
        [wins, losses, ties] => Ok(PreferenceCounts { wins, losses, ties }),
        _ => bail!("--preferences expects three counts, got {}", v.len()),
    }
}

pub(crate) fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut metrics = MetricSet::none();
    let mut ci = false;
    for m in a.metrics.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        match m {
            "avg" | "average" => metrics.average = true,
            "greedy" => metrics.greedy = true,
            "extrema" => metrics.extrema = true,
            "stats" => metrics.stats = true,
            "ci" => ci = true,
            _ => bail!("unknown metric `{m}` (expected avg, greedy, extrema, stats, ci)"),
        }
    }
    let mut out = open_out(a.out.as_deref())?;
    if metrics != MetricSet::none() {
        let responses = read_lines(a.responses.as_deref().ok_or_else(|| anyhow!("--responses is required"))?)?;
        let references = match &a.references {
            Some(p) => read_lines(p)?,
            None if metrics.needs_embeddings() => bail!("--references is required for embedding metrics"),
            None => Vec::new(),
        };
        let table = match &a.embeddings {
            Some(p) => Some(EmbeddingTable::load(p).with_context(|| format!("loading {}", p.display()))?),
            None if metrics.needs_embeddings() => bail!("--embeddings is required for embedding metrics"),
            None => None,
        };
        let unigram = match &a.train_corpus {
            Some(p) => {
                let (corpus, vocab) = load_corpus(p, None).with_context(|| format!("loading {}", p.display()))?;
                Some(UnigramModel::from_corpus(&corpus, &vocab)?)
            }
            None if metrics.stats => bail!("--train-corpus is required for stats"),
            None => None,
        };
        let report = evaluate_responses(&responses, &references, metrics, table.as_ref(), unigram.as_ref())?;
        write!(out, "{}", report.to_tsv())?;
    }
    if ci {
        let counts = parse_counts(a.preferences.as_deref().ok_or_else(|| anyhow!("--preferences is required for ci"))?)?;
        let r = preference_ci(&counts, a.level)?;
        writeln!(out, "preference\tpercent\tmargin\tz={:.6}", r.z)?;
        for (name, share) in [("wins", r.wins), ("losses", r.losses), ("ties", r.ties)] {
            writeln!(out, "{name}\t{:.4}\t{:.4}", share.percent, share.margin)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let s = resolve(&a.config, Vec::new())?;
    eprintln!("{}", s.banner());
    let seed = s.preset.train.seed;
    let words = a.vocab.saturating_sub(vhred::data::NUM_RESERVED);
    if words < 2 {
        bail!("--vocab must leave at least 2 non-reserved words");
    }
    let spec = SyntheticSpec {
        topics: 2,
        words_per_topic: words.div_ceil(2),
        dialogues: 1,
        seed,
        ..SyntheticSpec::default()
    };
    let (corpus, vocab) = read_corpus(&synthesize_corpus(&spec)?.corpus_text(), "gradcheck", Some(words))?;
    let d = corpus.dialogues[0].clone();
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        ..s.preset.model.clone()
    };
    let mut model = ModelBundle::new(cfg, seed)?;
    if a.init_scale > 0.0 {
        randomize_params(model.params_mut(), a.init_scale, &mut rng_for(seed, Stream::Init, u64::MAX));
    }
    let vhred = model.kind() == ModelKind::Vhred;
    let mut rng = rng_for(seed, Stream::Test, 0);
    let noise = latent_noise(&d, model.config().latent_dim, &mut rng);
    let rate = s.preset.train.word_drop_rate;
    let masks = if vhred && rate > 0.0 {
        Some(dialogue_word_drop(&d, rate, &mut rng)?)
    } else {
        None
    };
    let kl_weight = a.kl_weight;
    let report = grad_check(&mut model, a.eps, |m, tape| {
        let opts = ObjectiveOptions {
            latent: if vhred { LatentSource::Noise(&noise) } else { LatentSource::PosteriorMean },
            word_drop: masks.as_deref(),
            max_unroll: None,
        };
        let terms = m.objective(tape, m.params(), &d, &opts)?;
        bound_var(tape, &terms, kl_weight)
    })?;
    let worst = report
        .worst
        .as_ref()
        .map(|(name, j, an, nu)| format!(" at {name}[{j}] (analytic {an:.6e}, numeric {nu:.6e})"))
        .unwrap_or_default();
    println!(
        "max relative discrepancy {:.3e}{worst} over {} entries",
        report.max_discrepancy, report.entries
    );
    if report.max_discrepancy >= a.threshold {
        bail!(
            "gradient check failed: {:.3e} >= threshold {:.1e}",
            report.max_discrepancy,
            a.threshold
        );
    }
    Ok(())
}

pub(crate) fn synthesize(a: SynthesizeArgs) -> Result<()> {
    let spec = SyntheticSpec {
        topics: a.topics,
        words_per_topic: a.words_per_topic,
        stickiness: a.stickiness,
        min_utterance_len: a.min_len,
        max_utterance_len: a.max_len,
        min_utterances: a.min_utterances,
        max_utterances: a.max_utterances,
        dialogues: a.dialogues,
        seed: a.seed,
    };
    let labels = a.labels.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".labels");
        PathBuf::from(p)
    });
    synthesize_corpus(&spec)?.write(&a.out, &labels)?;
    println!(
        "wrote {} dialogues to {} and labels to {}",
        spec.dialogues,
        a.out.display(),
        labels.display()
    );
    Ok(())
}
