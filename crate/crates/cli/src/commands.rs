//! The five subcommands. Each takes the parsed configuration and writes its
//! report to `out`; errors carry their exit code.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ketm::checkpoint::Checkpoint;
use ketm::data::{export_attention, load_pairs, DatasetSplit, LabelMap, SplitName};
use ketm::embedding::Vocabulary;
use ketm::fusion::{Classifier, FusionParams, GateOverride};
use ketm::gradcheck::{grad_check, GradCheckOptions, GradReport};
use ketm::knowledge::{DictionaryStore, Retriever};
use ketm::matching::{pool, Matcher, Seq};
use ketm::model::{argmax, Ketm, PairInput};
use ketm::synth::nli_labels;
use ketm::tape::{Tape, Var};
use ketm::text::tokenize;
use ketm::train::{evaluate, Trainer};
use ketm::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::{Cli, Command, Overrides};
use crate::config::RunConfig;
use crate::CliError;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const EMPTY_KNOWLEDGE: &str = "<none>";

/// End-to-end tolerance on the relative gradient error.
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Per-layer tolerance.
pub const LAYER_TOLERANCE: f64 = 1e-4;

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Train { overrides } => train(apply(config, overrides)?, out),
        Command::Eval {
            checkpoint,
            split,
            data,
        } => eval(&config, checkpoint.as_deref(), split, data.as_deref(), out),
        Command::Predict {
            checkpoint,
            dictionary,
            attention,
            premise,
            hypothesis,
        } => predict(
            &config,
            checkpoint.as_deref(),
            dictionary.as_deref(),
            attention.as_deref(),
            premise,
            hypothesis,
            out,
        ),
        Command::Gradcheck {
            overrides,
            coords,
            eps,
            corrupt_gradient,
        } => gradcheck(
            &apply(config, overrides)?,
            *coords,
            *eps,
            corrupt_gradient.clone(),
            out,
        ),
        Command::Retrieve {
            dictionary,
            sentence,
        } => retrieve(&config, dictionary.as_deref(), sentence, out),
    }
}

pub fn apply(mut config: RunConfig, o: &Overrides) -> Result<RunConfig> {
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    if o.no_knowledge {
        config.model.knowledge = false;
    }
    if let Some(head) = o.head {
        config.model.head = head;
    }
    if let Some(blocks) = o.blocks {
        config.model.blocks = blocks;
    }
    config.validate()?;
    Ok(config)
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Config(format!("data.{key} is not set")))
}

fn labels(config: &RunConfig) -> Result<LabelMap> {
    Ok(match &config.data.labels {
        Some(path) => LabelMap::load(path)?,
        None => nli_labels()?,
    })
}

fn dictionary(config: &RunConfig, flag: Option<&Path>) -> Result<DictionaryStore> {
    let path = match flag {
        Some(p) => p,
        None => required(&config.data.dictionary, "dictionary")?,
    };
    Ok(DictionaryStore::load(path)?)
}

fn load_split(
    path: &Path,
    labels: &LabelMap,
    name: SplitName,
    retriever: Option<&Retriever<'_>>,
) -> Result<DatasetSplit> {
    let mut split = load_pairs(path, labels, name)?;
    if let Some(r) = retriever {
        split.attach_knowledge(r)?;
    }
    Ok(split)
}

/// Trains, logging one `epoch=… loss=… val_acc=…` line per epoch. Saves the
/// best-validation parameters as `best.ckpt` and the full final state as
/// `last.ckpt`. Without a validation split the training split is scored.
pub fn train(config: RunConfig, out: &mut dyn Write) -> Result<()> {
    let labels = labels(&config)?;
    let train_path = required(&config.data.train, "train")?;
    // Load everything before training so a bad path fails fast.
    let dict = if config.model.knowledge {
        Some(dictionary(&config, None)?)
    } else {
        None
    };
    let retriever = dict.as_ref().map(Retriever::new);
    let train_split = load_split(train_path, &labels, SplitName::Train, retriever.as_ref())?;
    let val_split = match &config.data.validation {
        Some(p) => Some(load_split(
            p,
            &labels,
            SplitName::Validation,
            retriever.as_ref(),
        )?),
        None => None,
    };
    let test_split = match &config.data.test {
        Some(p) => Some(load_split(p, &labels, SplitName::Test, retriever.as_ref())?),
        None => None,
    };

    let vocab = Vocabulary::build(train_split.corpus(), config.data.min_freq.unwrap_or(1))?;
    let max_len = config.model.max_len;
    let train_data = train_split.encode(&vocab, max_len);
    let val_data = val_split.as_ref().map(|s| s.encode(&vocab, max_len));
    let model_config = config.model_config(vocab.len(), labels.len());
    let mut trainer = Trainer::<f32>::new(model_config, config.train_config())?;
    writeln!(
        out,
        "params={} vocab={} train={} validation={}",
        trainer.store.num_scalars(),
        vocab.len(),
        train_data.len(),
        val_data.as_ref().map_or(0, Vec::len)
    )?;

    let mut log_error = None;
    let val = val_data.as_deref().unwrap_or(&train_data);
    let summary = trainer.fit(&train_data, Some(val), |record| {
        if let Err(e) = writeln!(out, "{record}") {
            log_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_error {
        return Err(e.into());
    }

    let dir = config.checkpoint_dir();
    fs::create_dir_all(&dir).map_err(|e| ketm::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let mut best = Checkpoint::from_trainer(&trainer, &vocab, &labels);
    best.params = summary.best.clone();
    best.optimizer = None;
    best.rng = None;
    best.epoch = summary.best_epoch;
    let best_path = dir.join(BEST_CHECKPOINT);
    best.save(&best_path)?;
    Checkpoint::from_trainer(&trainer, &vocab, &labels).save(dir.join(LAST_CHECKPOINT))?;

    writeln!(
        out,
        "best_epoch={} val_acc={:.4}",
        summary.best_epoch, summary.best_val_acc
    )?;
    if let Some(test) = test_split {
        let acc = evaluate(&trainer.model, &summary.best, &test.encode(&vocab, max_len))?;
        writeln!(out, "test_acc={acc:.4}")?;
    }
    writeln!(out, "checkpoint={}", best_path.display())?;
    Ok(())
}

fn checkpoint_path(config: &RunConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .unwrap_or_else(|| config.checkpoint_dir().join(BEST_CHECKPOINT))
}

/// Scores a checkpoint; prints `accuracy=<4 decimals> examples=<n>`.
pub fn eval(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    split: &str,
    data: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let ckpt = Checkpoint::<f32>::load(checkpoint_path(config, checkpoint))?;
    if config.data.labels.is_some() {
        let configured = labels(config)?;
        if configured != ckpt.labels {
            return Err(CliError::Data(ketm::Error::LabelSpace {
                checkpoint: ckpt.labels.labels().to_vec(),
                data: configured.labels().to_vec(),
            }));
        }
    }
    let (path, name) = match data {
        Some(p) => (p, SplitName::Test),
        None => match split {
            "train" => (required(&config.data.train, "train")?, SplitName::Train),
            "validation" => (
                required(&config.data.validation, "validation")?,
                SplitName::Validation,
            ),
            _ => (required(&config.data.test, "test")?, SplitName::Test),
        },
    };
    let dict = if ckpt.model.knowledge {
        Some(dictionary(config, None)?)
    } else {
        None
    };
    let retriever = dict.as_ref().map(Retriever::new);
    let split = load_split(path, &ckpt.labels, name, retriever.as_ref())?;
    let model = ckpt.build_model()?;
    let data = split.encode(&ckpt.vocab, ckpt.model.max_len);
    let acc = evaluate(&model, &ckpt.params, &data)?;
    writeln!(out, "accuracy={acc:.4} examples={}", data.len())?;
    Ok(())
}

/// Prints `label=<name>` and one `<label>\t<probability>` line per class.
pub fn predict(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    dictionary_flag: Option<&Path>,
    attention: Option<&Path>,
    premise: &str,
    hypothesis: &str,
    out: &mut dyn Write,
) -> Result<()> {
    let a = tokenize(premise);
    let b = tokenize(hypothesis);
    if a.is_empty() || b.is_empty() {
        return Err(CliError::Usage(
            "premise and hypothesis must be nonempty".into(),
        ));
    }
    let ckpt = Checkpoint::<f32>::load(checkpoint_path(config, checkpoint))?;
    let model = ckpt.build_model()?;
    let (ka, kb) = if ckpt.model.knowledge {
        let dict = dictionary(config, dictionary_flag)?;
        let (ka, kb) = Retriever::new(&dict).build_pair_knowledge(&a, &b)?;
        (tokenize(&ka.text), tokenize(&kb.text))
    } else {
        (Vec::new(), Vec::new())
    };
    let max_len = ckpt.model.max_len;
    let input = PairInput::encode(&ckpt.vocab, &a, &b, &ka, &kb, max_len);

    let mut tape = Tape::<f32>::new();
    let output = model.forward(
        &mut tape,
        &ckpt.params,
        &input,
        model.default_options(),
        None,
    )?;
    let probs = tape.value(output.probs).data().to_vec();
    let best = argmax(&probs);
    writeln!(out, "label={}", ckpt.labels.label(best).unwrap_or("?"))?;
    for (label, p) in ckpt.labels.labels().iter().zip(&probs) {
        writeln!(out, "{label}\t{p}")?;
    }
    if let Some(path) = attention {
        let (a, b) = (&a[..a.len().min(max_len)], &b[..b.len().min(max_len)]);
        export_attention(tape.value(output.attention), a, b, path)?;
        writeln!(out, "attention={}", path.display())?;
    }
    Ok(())
}

/// Runs every layer check and the end-to-end check; every failure is named
/// and the command fails with the gradient-check exit code.
pub fn gradcheck(
    config: &RunConfig,
    coords: usize,
    eps: f64,
    corrupt: Option<String>,
    out: &mut dyn Write,
) -> Result<()> {
    let mut config = config.clone();
    config.model.dropout = 0.0;
    let classes = labels(&config)?.len();
    let opts = GradCheckOptions {
        eps,
        tolerance: LAYER_TOLERANCE,
        max_coords: (coords > 0).then_some(coords),
        seed: config.seed,
        corrupt,
        ..GradCheckOptions::default()
    };
    let mut failures = Vec::new();

    for (layer, report) in layer_reports(&config, classes, &opts)? {
        writeln!(
            out,
            "layer={layer} params={} max_rel_err={:.3e} status={}",
            report.params.len(),
            report.max_rel_err(),
            if report.passed() { "ok" } else { "FAIL" }
        )?;
        failures.extend(report.failures().iter().map(|p| format!("{layer}:{p}")));
    }

    let vocab_size = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::<f64>::new();
    let model = Ketm::new(
        config.model_config(vocab_size, classes),
        &mut store,
        &mut rng,
    )?;
    let mut ids = |lo: usize, hi: usize| -> Vec<usize> {
        let n = rng.gen_range(lo..=hi);
        (0..n).map(|_| rng.gen_range(2..vocab_size)).collect()
    };
    let pairs: Vec<(PairInput, usize)> = (0..2)
        .map(|i| {
            let input = PairInput {
                a: ids(3, 6),
                b: ids(2, 5),
                ka: ids(4, 8),
                kb: ids(4, 8),
            };
            (input, i % classes)
        })
        .collect();
    let batch: Vec<(&PairInput, usize)> = pairs.iter().map(|(x, y)| (x, *y)).collect();
    let model_opts = GradCheckOptions {
        tolerance: MODEL_TOLERANCE,
        ..opts
    };
    let report = grad_check(&mut store, &model_opts, |tape, store| {
        model.batch_loss(tape, store, &batch, model.default_options(), None)
    })?;
    write!(out, "{report}")?;
    writeln!(
        out,
        "end-to-end params={} max_rel_err={:.3e} tolerance={:e}",
        report.params.len(),
        report.max_rel_err(),
        MODEL_TOLERANCE
    )?;
    failures.extend(report.failures().iter().map(|p| p.to_string()));

    if failures.is_empty() {
        writeln!(out, "gradcheck: ok")?;
        Ok(())
    } else {
        writeln!(out, "gradcheck: FAIL {}", failures.join(" "))?;
        Err(CliError::GradCheck(failures))
    }
}

fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("shape matches data")
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output coordinate matters.
fn weighted_sum(tape: &mut Tape<f64>, out: Var) -> ketm::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let r = tape.constant(random(&mut rng, tape.shape(out)));
    let p = tape.mul(out, r)?;
    Ok(tape.sum(p))
}

type LayerFn<'a> = dyn FnMut(&mut Tape<f64>, &ParamStore<f64>) -> ketm::Result<Var> + 'a;

/// Each layer alone at the configured widths, with its inputs registered as
/// parameters named `input.*` so their gradients are checked too.
fn layer_reports(
    config: &RunConfig,
    classes: usize,
    opts: &GradCheckOptions,
) -> Result<Vec<(&'static str, GradReport)>> {
    let k = config.model.embed_dim;
    let d = config.model.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1a7e);
    let mut match_config = config.match_config();
    match_config.blocks = 1;
    let mut out = Vec::new();

    let mut store = ParamStore::<f64>::new();
    let matcher = Matcher::new(match_config.clone(), k, &mut store, "match", &mut rng)?;
    let x = store.add("input.x", random(&mut rng, &[5, k]))?;
    let p = store.add("input.p", random(&mut rng, &[4, d]))?;
    let q = store.add("input.q", random(&mut rng, &[3, d]))?;
    let block = &matcher.blocks[0];
    let checks: Vec<(&'static str, Box<LayerFn<'_>>)> = vec![
        (
            "encoder",
            Box::new(|t, s| {
                let x = t.param(s, x);
                let x = Seq::full(t, x);
                Ok(matcher.encode(t, s, block, x)?.p)
            }),
        ),
        (
            "co_attention",
            Box::new(|t, s| {
                let (p, q) = (t.param(s, p), t.param(s, q));
                let (p, q) = (Seq::full(t, p), Seq::full(t, q));
                let co = matcher.co_attention(t, s, block, p, q)?;
                t.concat_rows(&[co.p_attn, co.h_attn])
            }),
        ),
        (
            "aggregation",
            Box::new(|t, s| {
                let p = t.param(s, p);
                let attended = t.affine(p, 0.5, 0.1);
                matcher.aggregate(t, s, block, p, attended)
            }),
        ),
        (
            "bidirectional_attention",
            Box::new(|t, s| {
                let (p, q) = (t.param(s, p), t.param(s, q));
                let (p, q) = (Seq::full(t, p), Seq::full(t, q));
                Ok(matcher.bidirectional_attention(t, s, p, q)?.g)
            }),
        ),
        (
            "pooling",
            Box::new(|t, s| {
                let p = t.param(s, p);
                let p = Seq::full(t, p);
                pool(t, p)
            }),
        ),
    ];
    for (name, mut f) in checks {
        let report = grad_check(&mut store, opts, |t, s| {
            let v = f(t, s)?;
            weighted_sum(t, v)
        })?;
        out.push((name, report));
    }

    let width = match_config.output_dim();
    let mut store = ParamStore::<f64>::new();
    let h = store.add("input.h", random(&mut rng, &[width]))?;
    let kh = store.add("input.kh", random(&mut rng, &[width]))?;
    let fusion = FusionParams::new(&mut store, "fusion", width, &mut rng)?;
    let report = grad_check(&mut store, opts, |t, s| {
        let (h, kh) = (t.param(s, h), t.param(s, kh));
        let z = fusion.fuse(t, s, h, kh, GateOverride::Computed)?.z;
        weighted_sum(t, z)
    })?;
    out.push(("fusion", report));

    let mut store = ParamStore::<f64>::new();
    let z = store.add("input.z", random(&mut rng, &[2, width]))?;
    let classifier = Classifier::new(
        &mut store,
        "output",
        width,
        classes,
        config.model.head,
        &mut rng,
    )?;
    let report = grad_check(&mut store, opts, |t, s| {
        let z = t.param(s, z);
        let probs = classifier.classify(t, s, z)?;
        weighted_sum(t, probs)
    })?;
    out.push(("classifier", report));
    Ok(out)
}

/// Prints the knowledge text (or the empty marker) and a
/// `token  lemma  definition` table.
pub fn retrieve(
    config: &RunConfig,
    dictionary_flag: Option<&Path>,
    sentence: &str,
    out: &mut dyn Write,
) -> Result<()> {
    let dict = dictionary(config, dictionary_flag)?;
    let tokens = tokenize(sentence);
    let knowledge = Retriever::new(&dict).retrieve(&tokens)?;
    let text = if knowledge.is_empty() {
        EMPTY_KNOWLEDGE
    } else {
        knowledge.text.as_str()
    };
    writeln!(out, "knowledge: {text}")?;
    writeln!(out, "token\tlemma\tdefinition")?;
    for e in &knowledge.entries {
        let def = match (&e.definition, e.stopword) {
            (Some(d), _) => d.as_str(),
            (None, true) => "(stopword)",
            (None, false) => "-",
        };
        writeln!(out, "{}\t{}\t{def}", e.token, e.lemma)?;
    }
    Ok(())
}
