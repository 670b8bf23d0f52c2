use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use nmm::corpus::{encode, EncodedCorpus, Vocabulary};
use nmm::evaluation::{
    format_table, grid_search_weights, interpolate_ppl, perplexity, EvalOptions, EvalReport, LanguageModel,
};
use nmm::linalg::{Precision, Real, Rng};
use nmm::mixture::{count_params, param_growth, MixtureSpec, Nmm, NmmConfig};
use nmm::training::{load_checkpoint, read_header, save_checkpoint, train as train_loop, EpochRecord, TrainState};

use crate::config::{check_file, ExperimentConfig, Preset};
use crate::{fixture, EvalArgs, InterpArgs, ParamsArgs, TrainArgs, UsageError, VocabArgs};

const LOG_FILE: &str = "train_log.csv";
const VOCAB_FILE: &str = "vocab.tsv";
const LAST_CKPT: &str = "last.ckpt";
const BEST_CKPT: &str = "best.ckpt";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Quotes a CSV field when it contains a delimiter.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn eval_options(include_eos: bool) -> EvalOptions {
    EvalOptions {
        include_eos,
        eos_id: Vocabulary::EOS_ID,
    }
}

/// Prints the rows as CSV and optionally writes the same text to `report`.
fn emit(rows: &[(String, EvalReport)], report: Option<&Path>) -> Result<()> {
    let mut text = format!("{}\n", EvalReport::CSV_HEADER);
    for (name, r) in rows {
        text.push_str(&r.csv_row(&csv_field(name)));
        text.push('\n');
    }
    print!("{text}");
    if let Some(path) = report {
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

struct Texts {
    train: String,
    valid: Option<String>,
    test: Option<String>,
}

impl Texts {
    fn load(toy: bool, train: Option<&Path>, valid: Option<&Path>, test: Option<&Path>) -> Result<Self> {
        if toy {
            return Ok(Self {
                train: fixture::TRAIN.to_string(),
                valid: Some(fixture::VALID.to_string()),
                test: Some(fixture::TEST.to_string()),
            });
        }
        let train = train.ok_or_else(|| UsageError("--train is required without --toy-fixture".into()))?;
        Ok(Self {
            train: read_text(train)?,
            valid: valid.map(read_text).transpose()?,
            test: test.map(read_text).transpose()?,
        })
    }
}

pub fn vocab(a: &VocabArgs) -> Result<()> {
    if a.vocab_cap == 0 {
        return Err(UsageError("--vocab-cap must be at least 1".into()).into());
    }
    if !a.toy_fixture {
        let train = a
            .train
            .as_ref()
            .ok_or_else(|| UsageError("--train is required without --toy-fixture".into()))?;
        for p in [Some(train), a.valid.as_ref(), a.test.as_ref()].into_iter().flatten() {
            check_file(p)?;
        }
    }
    let texts = Texts::load(a.toy_fixture, a.train.as_deref(), a.valid.as_deref(), a.test.as_deref())?;
    let vocab = Vocabulary::from_text(&texts.train, a.vocab_cap)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    vocab.save(&a.out.join(VOCAB_FILE))?;

    let mut stats = String::from("split,tokens,unk,unk_rate\n");
    let splits = [
        ("train", Some(&texts.train)),
        ("valid", texts.valid.as_ref()),
        ("test", texts.test.as_ref()),
    ];
    for (name, text) in splits {
        if let Some(text) = text {
            let c = encode(text, &vocab);
            stats.push_str(&format!(
                "{name},{},{},{:.6}\n",
                c.token_count,
                c.unk_count,
                c.unk_rate()
            ));
        }
    }
    fs::write(a.out.join("vocab_stats.csv"), &stats)?;
    println!("vocabulary: {} entries (hash {})", vocab.len(), vocab.hash());
    print!("{stats}");
    Ok(())
}

/// Preset, then config file, then the run's own echo when resuming, then flags.
fn experiment_config(a: &TrainArgs) -> Result<ExperimentConfig, UsageError> {
    let build = |echo: Option<(&str, &Path)>| -> Result<ExperimentConfig, UsageError> {
        let mut c = ExperimentConfig::preset(a.preset.parse::<Preset>()?);
        if let Some(path) = &a.config {
            let text = fs::read_to_string(path)
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
            c.apply_file(&text, path)?;
        }
        if let Some((text, path)) = echo {
            c.apply_file(text, path)?;
        }
        apply_flags(&mut c, a)?;
        Ok(c)
    };
    let c = build(None)?;
    if !a.resume {
        return Ok(c);
    }
    let echo = c.out.join("config.txt");
    match fs::read_to_string(&echo) {
        Ok(text) => build(Some((&text, &echo))),
        Err(_) => Ok(c),
    }
}

fn apply_flags(c: &mut ExperimentConfig, a: &TrainArgs) -> Result<(), UsageError> {
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let flags: [(&str, Option<String>); 21] = [
        ("train", path(&a.train)),
        ("valid", path(&a.valid)),
        ("test", path(&a.test)),
        ("toy_fixture", a.toy_fixture.then(|| "true".into())),
        ("vocab_cap", a.vocab_cap.map(|v| v.to_string())),
        ("spec", a.spec.clone()),
        ("embedding_size", a.emb.map(|v| v.to_string())),
        ("mixture_size", a.mix.map(|v| v.to_string())),
        ("fnn_depth", a.fnn_depth.map(|v| v.to_string())),
        ("learning_rate", a.lr.map(|v| v.to_string())),
        ("momentum", a.momentum.map(|v| v.to_string())),
        ("weight_decay", a.weight_decay.map(|v| v.to_string())),
        ("model_dropout", a.dropout.map(|v| v.to_string())),
        ("batch_size", a.batch.map(|v| v.to_string())),
        ("bptt_steps", a.bptt.map(|v| v.to_string())),
        ("max_epochs", a.epochs.map(|v| v.to_string())),
        ("min_improvement", a.min_improvement.map(|v| v.to_string())),
        ("clip", a.clip.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("precision", a.precision.clone()),
        ("out", path(&a.out)),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            c.set(key, &v)?;
        }
    }
    if a.exclude_eos {
        c.include_eos = false;
    }
    Ok(())
}

struct Data {
    vocab: Vocabulary,
    train: EncodedCorpus,
    valid: EncodedCorpus,
    test: Option<EncodedCorpus>,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = experiment_config(a)?;
    cfg.validate()?;
    if a.resume {
        check_file(&cfg.out.join(LAST_CKPT))?;
        check_file(&cfg.out.join(VOCAB_FILE))?;
    }

    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let texts = Texts::load(
        cfg.toy_fixture,
        cfg.train.as_deref(),
        cfg.valid.as_deref(),
        cfg.test.as_deref(),
    )?;
    let vocab = if a.resume {
        Vocabulary::load(&cfg.out.join(VOCAB_FILE))?
    } else {
        Vocabulary::from_text(&texts.train, cfg.vocab_cap)?
    };
    let data = Data {
        train: encode(&texts.train, &vocab),
        valid: encode(texts.valid.as_deref().unwrap_or_default(), &vocab),
        test: texts.test.as_deref().map(|t| encode(t, &vocab)),
        vocab,
    };
    fs::write(cfg.out.join("config.txt"), cfg.render())?;
    data.vocab.save(&cfg.out.join(VOCAB_FILE))?;

    match cfg.precision {
        Precision::F32 => run::<f32>(&cfg, &data, a.resume),
        Precision::F64 => run::<f64>(&cfg, &data, a.resume),
    }
}

fn run<T: Real>(cfg: &ExperimentConfig, data: &Data, resume: bool) -> Result<()> {
    let hash = data.vocab.hash();
    let model_config = cfg.model_config(data.vocab.len())?;
    let tc = &cfg.train_config;
    let last = cfg.out.join(LAST_CKPT);
    let best = cfg.out.join(BEST_CKPT);

    let (mut model, mut state) = if resume {
        let ck = load_checkpoint::<T>(&last, Some(&hash))?;
        if ck.header.config != model_config {
            return Err(UsageError(format!(
                "{} holds a different model layout ({})",
                last.display(),
                ck.header.config.spec.render()
            ))
            .into());
        }
        let state = ck
            .state
            .ok_or_else(|| anyhow!("{} holds no training state", last.display()))?;
        (ck.model, state)
    } else {
        let mut rng = Rng::new(tc.seed);
        let model = Nmm::<T>::new(model_config.clone(), Vocabulary::EOS_ID, &mut rng)?;
        let mut state = TrainState::new(&model, tc);
        // dropout masks continue the initialization stream
        state.rng = rng;
        (model, state)
    };

    let log_path = cfg.out.join(LOG_FILE);
    let mut log = if resume && log_path.exists() {
        OpenOptions::new().append(true).open(&log_path)?
    } else {
        let mut f = File::create(&log_path)?;
        writeln!(f, "{}", EpochRecord::CSV_HEADER)?;
        f
    };

    eprintln!(
        "training {} ({} parameters, {}) on {} tokens",
        model_config.spec.render(),
        model.param_count(true),
        T::PRECISION.as_str(),
        data.train.len()
    );
    let opts = eval_options(cfg.include_eos);
    train_loop(
        &mut model,
        &mut state,
        &data.train,
        &data.valid,
        tc,
        &opts,
        |record, model, state| {
            writeln!(log, "{}", record.csv_row())?;
            log.flush()?;
            save_checkpoint(&last, model, Some(state), &hash)?;
            if record.is_best {
                save_checkpoint(&best, model, None, &hash)?;
            }
            eprintln!(
                "epoch {:>3}  lr {:<10}  train ce {:.4}  valid ppl {:.2}  {:?}",
                record.epoch, record.lr, record.train_ce, record.valid_ppl, record.decision
            );
            Ok(())
        },
    )?;

    let final_model = if best.exists() {
        load_checkpoint::<T>(&best, Some(&hash))?.model
    } else {
        model
    };
    let nop = count_params(final_model.config(), true);
    let mut rows = vec![(
        "valid".to_string(),
        perplexity(&final_model, &data.valid, &opts)?.with_params(nop, None)?,
    )];
    if let Some(test) = &data.test {
        rows.push((
            "test".to_string(),
            perplexity(&final_model, test, &opts)?.with_params(nop, None)?,
        ));
    }
    let mut report = format!("{}\n", EvalReport::CSV_HEADER);
    for (name, r) in &rows {
        report.push_str(&r.csv_row(name));
        report.push('\n');
    }
    fs::write(cfg.out.join("report.csv"), report)?;
    print!("{}", format_table(&rows));
    Ok(())
}

struct Loaded {
    model: Box<dyn LanguageModel>,
    nop: u64,
    spec: String,
}

/// Loads a checkpoint in whatever precision it was written.
fn load_model(path: &Path, vocab_hash: &str) -> Result<Loaded> {
    let header = read_header(path).with_context(|| format!("reading {}", path.display()))?;
    let model: Box<dyn LanguageModel> = match header.precision {
        Precision::F32 => Box::new(load_checkpoint::<f32>(path, Some(vocab_hash))?.model),
        Precision::F64 => Box::new(load_checkpoint::<f64>(path, Some(vocab_hash))?.model),
    };
    Ok(Loaded {
        model,
        nop: count_params(&header.config, true),
        spec: header.config.spec.render(),
    })
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    for p in [&a.checkpoint, &a.vocab, &a.corpus] {
        check_file(p)?;
    }
    let vocab = Vocabulary::load(&a.vocab)?;
    let corpus = encode(&read_text(&a.corpus)?, &vocab);
    let loaded = load_model(&a.checkpoint, &vocab.hash())?;
    let report = perplexity(loaded.model.as_ref(), &corpus, &eval_options(!a.exclude_eos))?
        .with_params(loaded.nop, a.baseline_nop)?;
    let name = a.name.clone().unwrap_or(loaded.spec);
    emit(&[(name, report)], a.report.as_deref())
}

pub fn interp(a: &InterpArgs) -> Result<()> {
    let k = a.checkpoints.len();
    if k < 2 {
        return Err(UsageError("interpolation needs at least two --checkpoint".into()).into());
    }
    if let Some(w) = &a.weights {
        if w.len() != k {
            return Err(UsageError(format!("{} weights given for {k} checkpoints", w.len())).into());
        }
        if w.iter().any(|x| x.is_nan() || *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(UsageError("weights must be non-negative and sum to 1".into()).into());
        }
    }
    let steps = (1.0 / a.grid_step).round();
    if !(a.grid_step > 0.0 && a.grid_step <= 1.0) || (steps * a.grid_step - 1.0).abs() > 1e-9 {
        return Err(UsageError(format!("--grid-step {} does not divide 1", a.grid_step)).into());
    }
    for p in a
        .checkpoints
        .iter()
        .chain([&a.vocab, &a.corpus])
        .chain(a.valid.as_ref())
    {
        check_file(p)?;
    }

    let vocab = Vocabulary::load(&a.vocab)?;
    let hash = vocab.hash();
    let corpus = encode(&read_text(&a.corpus)?, &vocab);
    let loaded = a
        .checkpoints
        .iter()
        .map(|p| load_model(p, &hash))
        .collect::<Result<Vec<_>>>()?;
    let models: Vec<&dyn LanguageModel> = loaded.iter().map(|l| l.model.as_ref()).collect();
    let opts = eval_options(!a.exclude_eos);

    let weights = match (&a.weights, &a.valid) {
        (Some(w), _) => w.clone(),
        (None, Some(valid)) => {
            let held_out = encode(&read_text(valid)?, &vocab);
            let grid = grid_search_weights(&models, &held_out, a.grid_step, &opts)?;
            eprintln!(
                "grid search over {} candidates: held-out ppl {:.4}",
                grid.candidates, grid.report.perplexity
            );
            grid.weights
        }
        (None, None) => vec![1.0 / k as f64; k],
    };
    let nop = loaded.iter().map(|l| l.nop).sum();
    let report = interpolate_ppl(&models, &weights, &corpus, &opts)?.with_params(nop, None)?;
    let label = weights.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(";");
    eprintln!("weights: {label}");
    let name = format!(
        "{}[{label}]",
        loaded.iter().map(|l| l.spec.as_str()).collect::<Vec<_>>().join("|")
    );
    emit(&[(name, report)], a.report.as_deref())
}

fn layout(spec: &str, emb: usize, mix: usize, vocab: usize, depth: usize) -> Result<NmmConfig, UsageError> {
    let spec = MixtureSpec::parse(spec).map_err(|e| UsageError(format!("spec `{spec}`: {e}")))?;
    let cfg = NmmConfig::new(spec, emb, (mix > 0).then_some(mix), vocab).with_fnn_depth(depth);
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(cfg)
}

pub fn params(a: &ParamsArgs) -> Result<()> {
    let cfg = layout(&a.spec, a.emb, a.mix, a.vocab, a.fnn_depth)?;
    let biases = !a.no_biases;
    let nop = count_params(&cfg, biases);
    let baseline = a
        .baseline_spec
        .as_deref()
        .map(|s| layout(s, a.baseline_emb.unwrap_or(a.emb), a.baseline_mix, a.vocab, a.fnn_depth))
        .transpose()?
        .map(|b| (b.spec.render(), count_params(&b, biases)));

    println!("model,nop,nop_m,pg");
    let pg = match &baseline {
        Some((_, b)) => format!("{:.2}", param_growth(nop, *b)?),
        None => String::new(),
    };
    println!("{},{nop},{:.2},{pg}", csv_field(&cfg.spec.render()), nop as f64 / 1e6);
    if let Some((name, b)) = baseline {
        println!("{},{b},{:.2},", csv_field(&name), b as f64 / 1e6);
    }
    Ok(())
}
