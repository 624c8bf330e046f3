use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use tssr_core::checkpoint::{Checkpoint, CheckpointError};
use tssr_core::chemcheck::detect_problems;
use tssr_core::config::RunConfig;
use tssr_core::metrics::{evaluate, repair_stats, throughput, Reference};
use tssr_core::molparse::parse_smiles;
use tssr_core::pretrain::{encode_corpus, evaluate as heldout_loss, pretrain as run_pretrain};
use tssr_core::trainer::{train as run_train, EpisodeRecord, Mode, TrainError, T_MAX};
use tssr_core::tssr::{item_rng, RewardBreakdown, Tssr};
use tssr_core::vocab::{build_vocabulary, compute_priors, TokenPriors, Vocabulary};

use crate::{invalid, CliError};

const SAMPLE_STREAM_SALT: u64 = 0x5a3b_1e00_0000_0003;

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    path.as_deref().ok_or_else(|| invalid(format!("missing required setting `{key}`")))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Runtime)
}

/// Non-empty lines of a corpus file.
fn read_corpus(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read_text(path)?
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Every line of a samples file, empty ones included.
fn read_samples(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read_text(path)?
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect())
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocabulary, CliError> {
    let path = require(&cfg.vocab, "vocab")?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Vocabulary::read_from(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Runtime)
}

fn load_priors(cfg: &RunConfig, vocab: &Vocabulary) -> Result<TokenPriors, CliError> {
    let path = require(&cfg.priors, "priors")?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    TokenPriors::read_from(vocab, BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Runtime)
}

fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> Result<Checkpoint, CliError> {
    let ck = Checkpoint::load(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(CliError::Runtime)?;
    match ck.check_vocab(vocab) {
        Ok(()) => Ok(ck),
        Err(e @ CheckpointError::VocabMismatch { .. }) => Err(invalid(format!("{}: {e}", path.display()))),
        Err(e) => Err(CliError::Runtime(e.into())),
    }
}

fn build_tssr(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Tssr, CliError> {
    let priors = load_priors(cfg, vocab)?;
    Tssr::new(vocab, &priors, cfg.tssr).map_err(|e| invalid(e.to_string()))
}

/// Creates the output directory and records the effective configuration.
fn prepare_output(cfg: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(format!("{name}.config")), cfg.to_text())?;
    Ok(dir)
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|()| w.flush())
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Runtime)
}

fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), CliError> {
    ck.save(path)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Runtime)
}

pub fn vocab_build(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = read_corpus(require(&cfg.corpus, "corpus")?)?;
    let vocab = build_vocabulary(&corpus).context("building vocabulary")?;
    let priors = compute_priors(&corpus, &vocab).context("counting tokens")?;
    let dir = prepare_output(cfg, "vocab")?;
    write_file(&dir.join("vocab.txt"), |w| vocab.write_to(w))?;
    write_file(&dir.join("priors.tsv"), |w| priors.write_to(&vocab, w))?;
    eprintln!("vocabulary: {} tokens from {} lines", vocab.len(), corpus.len());
    Ok(())
}

pub fn pretrain(cfg: &RunConfig) -> Result<(), CliError> {
    let vocab = load_vocab(cfg)?;
    let corpus = read_corpus(require(&cfg.corpus, "corpus")?)?;
    let encoded = encode_corpus(&corpus, &vocab).context("encoding corpus")?;
    if encoded.skipped > 0 {
        eprintln!("warning: skipped {} lines longer than the padded length", encoded.skipped);
    }
    let heldout = match &cfg.heldout {
        Some(p) => Some(encode_corpus(read_corpus(p)?, &vocab).context("encoding held-out set")?),
        None => None,
    };
    let dir = prepare_output(cfg, "pretrain")?;
    let dims = cfg.dims(vocab.len());
    let mut log = Vec::new();
    let outcome = run_pretrain(&encoded.rows, dims, &cfg.pretrain, cfg.seed, |step, loss| {
        log.push(format!("{step}\t{loss}"));
        if step % 10 == 0 {
            eprintln!("step {step}\tloss {loss:.4}");
        }
    })
    .context("pretraining")?;
    write_file(&dir.join("pretrain_log.tsv"), |w| {
        writeln!(w, "step\tloss")?;
        log.iter().try_for_each(|l| writeln!(w, "{l}"))
    })?;
    let ck = Checkpoint::from_actor(&vocab, outcome.actor.clone(), Some(outcome.adam), cfg.seed);
    save_checkpoint(&ck, &dir.join("pretrain.ckpt"))?;

    let mut report = format!(
        "rows = {}\nskipped = {}\nsteps = {}\nfinal_loss = {:.6}\nlog_vocab = {:.6}\n",
        encoded.rows.len(),
        encoded.skipped,
        outcome.losses.len(),
        outcome.losses.last().copied().unwrap_or(f64::NAN),
        (vocab.len() as f64).ln()
    );
    if let Some(h) = heldout {
        let (nll, penalized) = heldout_loss(&outcome.actor, &h.rows, cfg.pretrain.beta).context("held-out loss")?;
        report.push_str(&format!("heldout_nll = {nll:.6}\nheldout_loss = {penalized:.6}\n"));
        eprintln!("held-out per-token NLL {nll:.4} (log|V| = {:.4})", (vocab.len() as f64).ln());
    }
    fs::write(dir.join("pretrain_report.txt"), report)?;
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let vocab = load_vocab(cfg)?;
    let tssr = build_tssr(cfg, &vocab)?;
    let init = match (cfg.mode, &cfg.init_checkpoint) {
        (Mode::FRl, None) => return Err(invalid("fine-tuning (mode = frl) requires `init_checkpoint`")),
        (Mode::PRl, Some(_)) => return Err(invalid("mode = prl does not take `init_checkpoint`")),
        (Mode::FRl, Some(p)) => Some(load_checkpoint(p, &vocab)?),
        (Mode::PRl, None) => None,
    };
    let dims = match &init {
        Some(ck) => ck.dims(),
        None => cfg.dims(vocab.len()),
    };
    let dir = prepare_output(cfg, "train")?;
    let ppo = cfg.ppo_config();

    let log_path = dir.join("episodes.tsv");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    writeln!(log, "{}", EpisodeRecord::HEADER)?;
    let mut io_error = None;
    let mut window = Vec::new();
    let outcome = run_train(&tssr, dims, cfg.mode, &ppo, init.as_ref().map(|c| &c.actor), cfg.seed, |e| {
        if io_error.is_none() {
            if let Err(err) = writeln!(log, "{}", e.to_line()) {
                io_error = Some(err);
            }
        }
        window.push(e.terminal_reward);
        if window.len() == 500 {
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            eprintln!("episode {}\tmean terminal reward {mean:.4}", e.episode);
            window.clear();
        }
    })
    .map_err(|e| match e {
        TrainError::Config(_)
        | TrainError::VocabMismatch { .. }
        | TrainError::DimsMismatch
        | TrainError::InitRequired
        | TrainError::InitForbidden => invalid(e.to_string()),
        other => CliError::Runtime(other.into()),
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    log.flush()?;

    save_checkpoint(
        &Checkpoint::from_model(&vocab, outcome.model.clone(), Some(outcome.adam.clone()), cfg.seed),
        &dir.join("final.ckpt"),
    )?;
    let mut report = String::new();
    if let Some(best) = &outcome.best {
        save_checkpoint(
            &Checkpoint::from_model(&vocab, best.model.clone(), Some(best.adam.clone()), cfg.seed),
            &dir.join("best.ckpt"),
        )?;
        report.push_str(&format!(
            "peak_reward = {}\nbest_episode = {}\n",
            best.discounted_return, best.episode
        ));
    }
    let n_episodes = outcome.episodes.len();
    let mean_length = if n_episodes == 0 {
        0.0
    } else {
        outcome.episodes.iter().map(|e| e.length).sum::<usize>() as f64 / n_episodes as f64
    };
    let seconds = outcome.seconds.max(f64::MIN_POSITIVE);
    report.push_str(&format!(
        "episodes = {n_episodes}\nupdates = {}\ntransitions = {}\nmean_length = {mean_length:.6}\nseconds = {:.3}\n\
         tokens_per_second = {:.3}\nthroughput_formula = {:.3}\n",
        outcome.updates.len(),
        outcome.transitions,
        outcome.seconds,
        outcome.transitions as f64 / seconds,
        throughput(outcome.updates.len() as u64, ppo.batch, mean_length, seconds).unwrap_or(0.0),
    ));
    fs::write(dir.join("train_report.txt"), report)?;
    eprintln!(
        "trained {} episodes, {} updates in {:.1}s",
        n_episodes,
        outcome.updates.len(),
        outcome.seconds
    );
    Ok(())
}

pub fn sample(cfg: &RunConfig) -> Result<(), CliError> {
    let vocab = load_vocab(cfg)?;
    let ck = load_checkpoint(require(&cfg.checkpoint, "checkpoint")?, &vocab)?;
    let dir = prepare_output(cfg, "sample")?;
    let lines: Vec<String> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = item_rng(cfg.seed ^ SAMPLE_STREAM_SALT, i);
            let s = ck.actor.sample_sequence(&mut rng, T_MAX);
            vocab.detokenize(&s.tokens)
        })
        .collect();
    write_file(&dir.join("samples.smi"), |w| lines.iter().try_for_each(|l| writeln!(w, "{l}")))?;
    Ok(())
}

/// Terminal reward of every line; lines outside the vocabulary score as an
/// empty string.
fn score_lines(tssr: &Tssr, vocab: &Vocabulary, lines: &[String], seed: u64) -> Vec<RewardBreakdown> {
    lines
        .par_iter()
        .enumerate()
        .map(|(i, line)| {
            let tokens = vocab.tokenize(line).unwrap_or_default();
            tssr.reward(&tokens, &mut item_rng(seed, i as u64))
        })
        .collect()
}

pub fn repair(cfg: &RunConfig) -> Result<(), CliError> {
    let vocab = load_vocab(cfg)?;
    let tssr = build_tssr(cfg, &vocab)?;
    let lines = read_samples(require(&cfg.samples, "samples")?)?;
    let dir = prepare_output(cfg, "repair")?;
    let scored = score_lines(&tssr, &vocab, &lines, cfg.seed);
    write_file(&dir.join("repair.tsv"), |w| {
        for (line, b) in lines.iter().zip(&scored) {
            let repaired = b.repaired_sequence.as_deref().map(|s| vocab.detokenize(s)).unwrap_or_default();
            writeln!(w, "{line}\t{repaired}\t{}\t{}", b.path.as_str(), b.reward)?;
        }
        Ok(())
    })
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let vocab = load_vocab(cfg)?;
    let tssr = build_tssr(cfg, &vocab)?;
    let lines = read_samples(require(&cfg.samples, "samples")?)?;
    if lines.is_empty() {
        return Err(invalid("samples file is empty"));
    }
    let reference = match &cfg.corpus {
        Some(p) => Reference::from_smiles(&read_corpus(p)?),
        None => Reference::default(),
    };
    let dir = prepare_output(cfg, "eval")?;
    let report = evaluate(&lines, &reference).context("evaluating samples")?;
    let stats = repair_stats(&score_lines(&tssr, &vocab, &lines, cfg.seed)).context("repair statistics")?;
    fs::write(dir.join("metrics.txt"), report.with_repair(stats).to_text())?;
    Ok(())
}

pub fn oracle_export(cfg: &RunConfig) -> Result<(), CliError> {
    let lines = read_samples(require(&cfg.samples, "samples")?)?;
    let dir = prepare_output(cfg, "oracle-export")?;
    let rows: Vec<String> = lines
        .par_iter()
        .enumerate()
        .map(|(i, s)| match parse_smiles(s) {
            Ok(g) => format!("{i}\t{s}\t1\t{}", detect_problems(&g).count()),
            Err(_) => format!("{i}\t{s}\t0\t"),
        })
        .collect();
    write_file(&dir.join("judgments.tsv"), |w| {
        writeln!(w, "idx\tsmiles\tparse_ok\tchem_problems")?;
        rows.iter().try_for_each(|r| writeln!(w, "{r}"))
    })
}
