//! Command implementations behind the `freqattn` executable.
//!
//! Every command writes its report lines to the supplied writer so tests can
//! run them in-process.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DataSource, RunConfig};
use crate::dct::{basis_plane, verify_properties, PlaneFn};
use crate::error::{Error, Result};
use crate::eval::{cosine_score, evaluate_trials, make_trials, parse_scores, parse_trials, EvalMetrics, TrialSet};
use crate::features::{
    encode_feat, logmel, mvn, read_feat, read_wav, synth_dataset, synth_speakers, synth_wave, utterances, write_wav,
    FeatureMatrix, LabeledFeatures,
};
use crate::speakernet::{checkpoint, AamHead, EpochMetrics, SpeakerNet, TrainExample, Trainer};
/// Held-out utterances per synthetic speaker.
pub const HELDOUT_UTTS: usize = 6;
pub const HELDOUT_TARGETS: usize = 200;
pub const HELDOUT_NONTARGETS: usize = 200;

/// Largest grid used by `verify-dct`.
pub const VERIFY_GRID: usize = 8;

// rng streams derived from the run seed
const STREAM_INIT: u64 = 0;
const STREAM_HELDOUT: u64 = 3;
const STREAM_TRIALS: u64 = 4;
const STREAM_WAVE: u64 = 5;

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `<dir>/<id with its extension replaced by .feat>`.
pub fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(Path::new(id).with_extension("feat"))
}

fn read_feature(dir: &Path, id: &str) -> Result<FeatureMatrix> {
    let path = feature_path(dir, id);
    if !path.is_file() {
        return Err(Error::Input(format!("no features for {id}: {} not found", path.display())));
    }
    read_feat(&path)
}

/// Training examples (MVN applied) and the speaker names behind each label.
pub fn load_training_set(cfg: &RunConfig) -> Result<(Vec<TrainExample>, Vec<String>)> {
    match cfg.data.source {
        DataSource::Synthetic => {
            let data = synth_dataset(&cfg.synth_config())?;
            let names = (0..cfg.data.num_speakers).map(|i| format!("spk{i:03}")).collect();
            let examples = data
                .into_iter()
                .map(|d| Ok(TrainExample { features: mvn(&d.features)?, label: d.label }))
                .collect::<Result<_>>()?;
            Ok((examples, names))
        }
        DataSource::List => {
            let list = cfg.paths.train_list.as_ref().ok_or_else(|| Error::Config("paths.train_list is not set".into()))?;
            let dir = cfg.paths.features.as_ref().ok_or_else(|| Error::Config("paths.features is not set".into()))?;
            let text = fs::read_to_string(list)?;
            let mut rows = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() != 2 {
                    return Err(Error::Parse { line: i + 1, msg: "expected <speaker> <utterance>".into() });
                }
                rows.push((toks[0].to_string(), toks[1].to_string()));
            }
            let labels: BTreeMap<&str, usize> = {
                let mut names: Vec<&str> = rows.iter().map(|r| r.0.as_str()).collect();
                names.sort_unstable();
                names.dedup();
                names.into_iter().enumerate().map(|(i, n)| (n, i)).collect()
            };
            if labels.len() < 2 {
                return Err(Error::Input(format!("training list names {} speaker(s), need at least 2", labels.len())));
            }
            let examples = rows
                .iter()
                .map(|(spk, utt)| Ok(TrainExample { features: mvn(&read_feature(dir, utt)?)?, label: labels[spk.as_str()] }))
                .collect::<Result<_>>()?;
            Ok((examples, labels.keys().map(|s| s.to_string()).collect()))
        }
    }
}

/// A trained or loaded network plus the configuration it was built from.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: RunConfig,
    pub net: SpeakerNet,
    pub head: AamHead,
}

impl Model {
    pub fn init(config: &RunConfig, num_speakers: usize) -> Result<Self> {
        let mut rng = seeded(config.seed, STREAM_INIT);
        let net = SpeakerNet::new(config.network_config(num_speakers)?, &mut rng)?;
        let head = AamHead::new(num_speakers, net.embedding_dim(), config.loss.margin, config.loss.scale, &mut rng)?;
        Ok(Model { config: config.clone(), net, head })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut params = self.net.parameters();
        params.push(&self.head.weight);
        checkpoint::save(path, &self.config.to_text(), &params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = checkpoint::load(path)?;
        let config = RunConfig::parse(&ck.config)?;
        let Some(((head_name, head_w), net_params)) = ck.params.split_last() else {
            return Err(Error::Format("checkpoint holds no parameters".into()));
        };
        if head_name != "aam.weight" || head_w.rank() != 2 {
            return Err(Error::Format(format!("last parameter must be aam.weight, found {head_name}")));
        }
        let mut model = Model::init(&config, head_w.shape()[0])?;
        model.net.load_parameters(net_params)?;
        model.head = AamHead::with_weight(head_w.clone(), config.loss.margin, config.loss.scale)?;
        Ok(model)
    }

    /// Embedding of a whole (un-normalized) utterance.
    pub fn embed(&self, fm: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self.net.forward_embed(&mvn(fm)?.values)?.into_vec())
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochMetrics>,
    pub speakers: Vec<String>,
}

/// Trains on the configured data, reporting each epoch through `log`.
pub fn train(cfg: &RunConfig, mut log: impl FnMut(usize, &EpochMetrics)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (data, speakers) = load_training_set(cfg)?;
    let model = Model::init(cfg, speakers.len())?;
    let mut trainer = Trainer::new(model.net, model.head, cfg.optimizer(), cfg.train_config(), cfg.seed)?;
    let history = trainer.fit(&data, cfg.optimizer.epochs, &mut log)?;
    let model = Model { config: cfg.clone(), net: trainer.net, head: trainer.head };
    Ok(TrainOutcome { model, history, speakers })
}

/// Fresh utterances of the synthetic training speakers plus a trial list
/// over them.
pub fn synth_heldout(cfg: &RunConfig) -> Result<(Vec<LabeledFeatures>, TrialSet)> {
    let sc = cfg.synth_config();
    let speakers = synth_speakers(sc.num_speakers, sc.n_mels, sc.seed)?;
    let utts = utterances(&speakers, HELDOUT_UTTS, sc.frames, sc.utts_per_speaker, &mut seeded(cfg.seed, STREAM_HELDOUT))?;
    let ids: Vec<(String, usize)> = utts.iter().map(|u| (u.utt.clone(), u.label)).collect();
    let trials = make_trials(&ids, HELDOUT_TARGETS, HELDOUT_NONTARGETS, &mut seeded(cfg.seed, STREAM_TRIALS))?;
    Ok((utts, trials))
}

/// Scores every trial, embedding each utterance once.
pub fn score_trials(
    model: &Model,
    trials: &TrialSet,
    mut lookup: impl FnMut(&str) -> Result<FeatureMatrix>,
) -> Result<TrialSet> {
    let mut cache: HashMap<String, Vec<f64>> = HashMap::new();
    let mut out = trials.clone();
    for t in &mut out.trials {
        for id in [&t.enroll, &t.test] {
            if !cache.contains_key(id.as_str()) {
                let emb = model.embed(&lookup(id)?)?;
                cache.insert(id.clone(), emb);
            }
        }
        t.score = Some(cosine_score(&cache[&t.enroll], &cache[&t.test])?);
    }
    Ok(out)
}

/// Held-out metrics of a model trained on synthetic data.
pub fn heldout_metrics(model: &Model) -> Result<EvalMetrics> {
    let (utts, trials) = synth_heldout(&model.config)?;
    let by_id: HashMap<&str, &FeatureMatrix> = utts.iter().map(|u| (u.utt.as_str(), &u.features)).collect();
    let scored = score_trials(model, &trials, |id| {
        by_id.get(id).map(|f| (*f).clone()).ok_or_else(|| Error::Input(format!("unknown utterance {id}")))
    })?;
    evaluate_trials(&scored)
}

pub fn epoch_line(epoch: usize, m: &EpochMetrics) -> String {
    format!("epoch={epoch} loss={:.6} acc={:.4}", m.mean_loss, m.accuracy)
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => {
            let mut cfg = RunConfig::default();
            cfg.apply_env()?;
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

/// Runs the DCT property suite with the given plane generator. Returns
/// whether every property held.
pub fn verify_dct_with(plane_fn: PlaneFn<'_>, out: &mut dyn Write) -> Result<bool> {
    let results = verify_properties(plane_fn, VERIFY_GRID, 0)?;
    let mut ok = true;
    for r in &results {
        writeln!(out, "{} {} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail)?;
        ok &= r.passed;
    }
    Ok(ok)
}

pub fn cmd_verify_dct(out: &mut dyn Write) -> Result<()> {
    if verify_dct_with(&basis_plane, out)? {
        Ok(())
    } else {
        Err(Error::Numeric("DCT property check failed".into()))
    }
}

/// One FEAT file per `*.wav` in `input` (non-recursive, sorted by name).
pub fn cmd_extract(input: &Path, output: &Path, config: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(config)?;
    let mut wavs: Vec<PathBuf> = fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    wavs.sort();
    fs::create_dir_all(output)?;
    let mut failed = 0;
    for wav in &wavs {
        let result = read_wav(wav).and_then(|w| {
            if w.sample_rate != cfg.features.sample_rate {
                return Err(Error::Format(format!(
                    "{}: sample_rate={} but config expects {}",
                    wav.display(),
                    w.sample_rate,
                    cfg.features.sample_rate
                )));
            }
            logmel(&w, &cfg.features.mel)
        });
        match result {
            Ok(fm) => {
                let name = wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let dest = output.join(format!("{name}.feat"));
                fs::write(&dest, encode_feat(&fm.values))?;
                writeln!(out, "extracted {} frames={} -> {}", wav.display(), fm.frames(), dest.display())?;
            }
            Err(e) => {
                failed += 1;
                writeln!(out, "error {}: {e}", wav.display())?;
            }
        }
    }
    if failed > 0 {
        return Err(Error::Input(format!("{failed} of {} files failed", wavs.len())));
    }
    Ok(())
}

pub fn cmd_train(config: &Path, output: &Path, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let mut io_err = None;
    let outcome = train(&cfg, |epoch, m| {
        if let Err(e) = writeln!(out, "{}", epoch_line(epoch, m)) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    outcome.model.save(output)?;
    writeln!(
        out,
        "saved {} speakers={} params={}",
        output.display(),
        outcome.speakers.len(),
        outcome.model.net.param_count()
    )?;
    Ok(())
}

pub fn cmd_score(checkpoint: &Path, trials: &Path, features: &Path, output: &Path, out: &mut dyn Write) -> Result<()> {
    let model = Model::load(checkpoint)?;
    let trials = parse_trials(&fs::read_to_string(trials)?)?;
    let scored = score_trials(&model, &trials, |id| read_feature(features, id))?;
    fs::write(output, scored.to_scores_text())?;
    writeln!(out, "scored {} trials -> {}", scored.len(), output.display())?;
    Ok(())
}

pub fn cmd_metrics(scores: &Path, out: &mut dyn Write) -> Result<()> {
    let trials = parse_scores(&fs::read_to_string(scores)?)?;
    writeln!(out, "{}", evaluate_trials(&trials)?)?;
    Ok(())
}

/// Writes the synthetic corpus under `dir`:
///
/// - `feats/<utt>.feat` for training and held-out utterances
/// - `train.lst` (`<speaker> <utt>`) and `trials.lst`
/// - `train.conf`, a config that trains from those files
/// - with `wav`, a rendered `wav/<utt>.wav` per utterance
pub fn cmd_synth(config: Option<&Path>, dir: &Path, wav: bool, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(config)?;
    let train = synth_dataset(&cfg.synth_config())?;
    let (heldout, trials) = synth_heldout(&cfg)?;
    let feats = dir.join("feats");
    fs::create_dir_all(&feats)?;
    let mut list = String::new();
    for u in train.iter().chain(&heldout) {
        fs::write(feature_path(&feats, &u.utt), encode_feat(&u.features.values))?;
    }
    for u in &train {
        list.push_str(&format!("spk{:03} {}\n", u.label, u.utt));
    }
    fs::write(dir.join("train.lst"), list)?;
    fs::write(dir.join("trials.lst"), trials.to_scores_text())?;
    cfg.data.source = DataSource::List;
    cfg.paths.train_list = Some(dir.join("train.lst"));
    cfg.paths.features = Some(feats.clone());
    fs::write(dir.join("train.conf"), cfg.to_text())?;

    if wav {
        let wav_dir = dir.join("wav");
        fs::create_dir_all(&wav_dir)?;
        let speakers = synth_speakers(cfg.data.num_speakers, cfg.features.mel.n_mels, cfg.seed)?;
        let mut rng = seeded(cfg.seed, STREAM_WAVE);
        let seconds = cfg.data.frames as f64 * cfg.features.mel.frame_shift_ms / 1000.0;
        for u in train.iter().chain(&heldout) {
            let w = synth_wave(&speakers[u.label], seconds, cfg.features.sample_rate, &cfg.features.mel, &mut rng)?;
            write_wav(wav_dir.join(format!("{}.wav", u.utt)), &w.samples, w.sample_rate)?;
        }
    }
    writeln!(
        out,
        "wrote {} training and {} held-out utterances, {} trials -> {}",
        train.len(),
        heldout.len(),
        trials.len(),
        dir.display()
    )?;
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "freqattn", version, about = "DCT frequency-channel attention for speaker verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the DCT basis properties and print PASS/FAIL per property
    VerifyDct,
    /// Turn a directory of 16-bit mono WAV files into FEAT files
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a speaker network and write a checkpoint
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trial list with a checkpoint
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print EER and minDCF for a scores file
    Metrics {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Write the synthetic corpus, a training list, trials and a config
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also render every utterance as a WAV file
        #[arg(long)]
        wav: bool,
    },
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::VerifyDct => cmd_verify_dct(out),
        Command::Extract { input, out: dest, config } => cmd_extract(&input, &dest, config.as_deref(), out),
        Command::Train { config, out: dest } => cmd_train(&config, &dest, out),
        Command::Score { checkpoint, trials, features, out: dest } => cmd_score(&checkpoint, &trials, &features, &dest, out),
        Command::Metrics { scores } => cmd_metrics(&scores, out),
        Command::Synth { out: dest, config, wav } => cmd_synth(config.as_deref(), &dest, wav, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn feature_paths_replace_the_extension() {
        let d = Path::new("/f");
        assert_eq!(feature_path(d, "a.wav"), Path::new("/f/a.feat"));
        assert_eq!(feature_path(d, "spk001_utt002"), Path::new("/f/spk001_utt002.feat"));
        assert_eq!(feature_path(d, "x/y.feat"), Path::new("/f/x/y.feat"));
    }

    #[test]
    fn verify_dct_passes_and_catches_perturbation() {
        let mut buf = Vec::new();
        assert!(verify_dct_with(&basis_plane, &mut buf).unwrap());
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");

        let bent = |r: usize, c: usize, idx| {
            let p = basis_plane(r, c, idx)?;
            let mut d = p.into_vec();
            d[0] += 1e-3;
            Tensor::from_vec(&[r, c], d)
        };
        let mut buf = Vec::new();
        assert!(!verify_dct_with(&bent, &mut buf).unwrap());
        assert!(String::from_utf8(buf).unwrap().contains("FAIL orthogonality"));
    }

    #[test]
    fn heldout_trials_are_balanced_and_fresh() {
        let cfg = RunConfig::default();
        let (utts, trials) = synth_heldout(&cfg).unwrap();
        assert_eq!(utts.len(), 20 * HELDOUT_UTTS);
        assert_eq!(trials.len(), 400);
        assert_eq!(trials.trials.iter().filter(|t| t.target).count(), 200);
        // numbering continues after the training utterances
        assert!(utts.iter().all(|u| u.utt[10..].parse::<usize>().unwrap() >= 20));
    }

    #[test]
    fn epoch_line_format() {
        let m = EpochMetrics { mean_loss: 1.5, accuracy: 0.25, steps: 3 };
        assert_eq!(epoch_line(4, &m), "epoch=4 loss=1.500000 acc=0.2500");
    }
}
