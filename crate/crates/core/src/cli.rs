//! Command-line entry point: `synth`, `build-vocab`, `train`, `caption`,
//! `eval` and `gradcheck`.
//!
//! Model and training flags carry the same names as the [`ModelConfig`] and
//! [`TrainConfig`] fields; `--config` picks the preset they override. Every
//! output file gets a `<file>.manifest.json` next to it recording the fully
//! resolved configuration. Failures print one line,
//! `error[<category>]: <message>`, to stderr. Log verbosity is read from
//! `MTSM_LOG` (for example `MTSM_LOG=info`).

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    read_captions, read_detections, synth_corpus, write_captions, write_detections, CaptionLine, DetectionFilter,
    DetectionSet, Vocabulary, DEFAULT_MIN_COUNT,
};
use crate::decoding::{beam_decode, greedy_decode, DEFAULT_MAX_LEN};
use crate::error::Error;
use crate::geometry::LogBase;
use crate::gradcheck::{run_preset, DEFAULT_TOLERANCE};
use crate::metrics::{corpus_bleu_with, BleuReport, Smoothing};
use crate::model::{CaptionModel, Checkpoint, ModelConfig};
use crate::training::{pair_examples, TrainConfig, TrainOutputs, Trainer};

/// Environment variable holding the `env_logger` filter.
pub const LOG_ENV: &str = "MTSM_LOG";

/// Provenance written next to every output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Resolved configuration, defaults included.
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
}

impl RunManifest {
    fn new(subcommand: &str, seed: Option<u64>, config: impl Serialize) -> Self {
        RunManifest {
            subcommand: subcommand.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed,
            config: serde_json::to_value(config).expect("configuration serialises"),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.to_owned(), path.to_owned());
        self
    }

    fn output(mut self, name: &str, path: &Path) -> Self {
        self.outputs.insert(name.to_owned(), path.to_owned());
        self
    }

    /// `<output>.manifest.json`.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    /// Writes one copy beside each output.
    fn write(&self) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        for out in self.outputs.values() {
            let path = RunManifest::path_for(out);
            std::fs::write(&path, format!("{text}\n")).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[derive(Parser, Debug)]
#[command(name = "mtsm", version, about = "Geometry-gated transformer image captioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic detections and spatial-relation captions.
    Synth(SynthArgs),
    /// Build a vocabulary file from a captions file.
    BuildVocab(BuildVocabArgs),
    /// Train a model and write a checkpoint.
    Train(Box<TrainArgs>),
    /// Caption every image of a detections file.
    Caption(CaptionArgs),
    /// Corpus BLEU-1..4 of candidate captions, or of a checkpoint's greedy and beam output.
    Eval(EvalArgs),
    /// Finite-difference check of every parameter gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
#[command(rename_all = "snake_case")]
struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Preset supplying `d_feat`.
    #[arg(long, default_value = "tiny")]
    config: String,
    #[arg(long)]
    d_feat: Option<usize>,
    /// Keep only the first caption of each scene.
    #[arg(long)]
    first_caption_only: bool,
    /// Detections file, then captions file.
    #[arg(long, num_args = 2, value_names = ["DETECTIONS", "CAPTIONS"], required = true)]
    out: Vec<PathBuf>,
}

#[derive(Args, Debug)]
#[command(rename_all = "snake_case")]
struct BuildVocabArgs {
    #[arg(long)]
    captions: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Default)]
#[command(rename_all = "snake_case")]
struct ModelFlags {
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    d_feat: Option<usize>,
    #[arg(long)]
    d_g: Option<usize>,
    #[arg(long)]
    max_objects: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// `ten` or `natural`.
    #[arg(long, value_parser = parse_log_base)]
    log_base: Option<LogBase>,
    #[arg(long)]
    eps_center: Option<f64>,
    #[arg(long)]
    eps_g: Option<f64>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    /// `false` disables the geometric gate (ablation).
    #[arg(long)]
    geometry: Option<bool>,
}

impl ModelFlags {
    fn apply(&self, c: &mut ModelConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(d_model, layers, heads, d_ff, d_feat, d_g, max_objects, max_len, log_base, eps_center, eps_g, dropout_rate, geometry);
    }
}

fn parse_log_base(s: &str) -> Result<LogBase, String> {
    match s {
        "ten" | "10" => Ok(LogBase::Ten),
        "natural" | "e" => Ok(LogBase::Natural),
        _ => Err(format!("expected `ten` or `natural`, got `{s}`")),
    }
}

#[derive(Args, Debug, Default)]
#[command(rename_all = "snake_case")]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    lr_decay_gamma: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seeds initialisation, shuffling and dropout.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long, conflicts_with = "no_clip")]
    clip_norm: Option<f64>,
    /// Disable gradient clipping.
    #[arg(long)]
    no_clip: bool,
}

impl TrainFlags {
    fn apply(&self, c: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(epochs, base_lr, lr_decay_gamma, batch_size, seed);
        if self.checkpoint_every.is_some() {
            c.checkpoint_every = self.checkpoint_every;
        }
        if self.clip_norm.is_some() {
            c.clip_norm = self.clip_norm;
        }
        if self.no_clip {
            c.clip_norm = None;
        }
    }
}

#[derive(Args, Debug)]
#[command(rename_all = "snake_case")]
struct TrainArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    captions: PathBuf,
    /// Vocabulary file; built from `--captions` with `--min_count` when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: usize,
    /// Preset: tiny, desk or paper.
    #[arg(long, default_value = "tiny")]
    config: String,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Checkpoint to continue from; its configuration is kept, except that
    /// `--epochs` and `--checkpoint_every` may be changed.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Per-epoch log (JSON lines).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(rename_all = "snake_case")]
struct DecodeFlags {
    /// 1 decodes greedily.
    #[arg(long, default_value_t = 1)]
    beam_width: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    /// Exponent `alpha` of the beam length normalisation.
    #[arg(long, default_value_t = 0.0)]
    length_penalty: f64,
    #[arg(long, default_value_t = DetectionFilter::default().min_score)]
    min_score: f64,
}

#[derive(Args, Debug)]
#[command(rename_all = "snake_case")]
struct CaptionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[command(flatten)]
    decode: DecodeFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(rename_all = "snake_case")]
struct EvalArgs {
    /// Candidate captions; the first line per image is scored.
    #[arg(long, conflicts_with_all = ["checkpoint", "detections"], required_unless_present = "checkpoint")]
    cand: Option<PathBuf>,
    /// Reference captions, any number per image.
    #[arg(long)]
    refs: PathBuf,
    /// Caption with this checkpoint instead, greedy and beam.
    #[arg(long, requires = "detections")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Beam width of the beam row.
    #[arg(long, default_value_t = 3)]
    beam_width: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    #[arg(long, default_value_t = 0.0)]
    length_penalty: f64,
    #[arg(long, default_value_t = DetectionFilter::default().min_score)]
    min_score: f64,
    /// Add-one smoothing of the 2- to 4-gram precisions.
    #[arg(long)]
    smooth: bool,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(rename_all = "snake_case")]
struct GradcheckArgs {
    #[arg(long, default_value = "tiny")]
    config: String,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    objects: usize,
    /// Decoder positions.
    #[arg(long, default_value_t = 4)]
    tokens: usize,
    /// Vocabulary size of the random model.
    #[arg(long, default_value_t = 12)]
    vocab_size: usize,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Anything that ends a run with a nonzero exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn report(&self) -> (String, i32) {
        match self {
            Failure::Usage(m) => (format!("error[usage]: {m}"), 2),
            Failure::Lib(e) => (format!("error[{}]: {}", e.category(), one_line(&e.to_string())), 1),
            Failure::Check(m) => (format!("error[check]: {m}"), 1),
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            return emit(Failure::Usage(one_line(first)));
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::BuildVocab(a) => build_vocab(a),
        Command::Train(a) => train(*a),
        Command::Caption(a) => caption(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => emit(f),
    }
}

fn emit(f: Failure) -> i32 {
    let (line, code) = f.report();
    eprintln!("{line}");
    code
}

#[derive(Serialize)]
struct SynthConfig {
    scenes: usize,
    d_feat: usize,
    first_caption_only: bool,
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let d_feat = match a.d_feat {
        Some(d) => d,
        None => ModelConfig::preset(&a.config, 0)?.d_feat,
    };
    let corpus = synth_corpus(a.seed, a.scenes, d_feat)?;
    let (det_path, cap_path) = (&a.out[0], &a.out[1]);
    write_detections(det_path, corpus.iter().map(|(d, _)| d))?;
    let take = if a.first_caption_only { 1 } else { usize::MAX };
    let lines: Vec<CaptionLine> = corpus
        .iter()
        .flat_map(|(d, caps)| {
            caps.iter().take(take).map(|c| CaptionLine {
                image_id: d.image_id.clone(),
                caption: c.clone(),
            })
        })
        .collect();
    write_captions(cap_path, &lines)?;
    let cfg = SynthConfig {
        scenes: a.scenes,
        d_feat,
        first_caption_only: a.first_caption_only,
    };
    RunManifest::new("synth", Some(a.seed), cfg)
        .output("detections", det_path)
        .output("captions", cap_path)
        .write()?;
    println!("wrote {} scenes, {} captions", corpus.len(), lines.len());
    Ok(())
}

fn build_vocab(a: BuildVocabArgs) -> Result<(), Failure> {
    let caps = read_captions(&a.captions)?;
    let vocab = Vocabulary::build(caps.iter().map(|c| c.caption.as_str()), a.min_count)?;
    vocab.save(&a.out)?;
    RunManifest::new("build-vocab", None, serde_json::json!({ "min_count": a.min_count }))
        .input("captions", &a.captions)
        .output("vocab", &a.out)
        .write()?;
    println!("{} words (+{} reserved ids)", vocab.num_words(), vocab.len() - vocab.num_words());
    Ok(())
}

#[derive(Serialize)]
struct ResolvedTrain<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    min_count: usize,
    resumed_from_epoch: usize,
}

fn load_detections(path: &Path, max_objects: usize, min_score: f64) -> Result<Vec<DetectionSet>, Failure> {
    let filter = DetectionFilter { min_score, max_objects };
    let loaded = read_detections(path, filter)?;
    if loaded.skipped > 0 {
        log::warn!("{}: skipped {} images with no detections", path.display(), loaded.skipped);
    }
    Ok(loaded.sets)
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let mut trainer = match &a.resume {
        Some(path) => {
            let mut t = Trainer::from_checkpoint(Checkpoint::load(path)?)?;
            if let Some(e) = a.train.epochs {
                t.config_mut().epochs = e;
            }
            if a.train.checkpoint_every.is_some() {
                t.config_mut().checkpoint_every = a.train.checkpoint_every;
            }
            t.config().validate()?;
            t
        }
        None => {
            let vocab = match &a.vocab {
                Some(p) => Vocabulary::load(p)?,
                None => {
                    let caps = read_captions(&a.captions)?;
                    Vocabulary::build(caps.iter().map(|c| c.caption.as_str()), a.min_count)?
                }
            };
            let mut mc = ModelConfig::preset(&a.config, vocab.len())?;
            a.model.apply(&mut mc);
            let mut tc = TrainConfig::preset(&a.config)?;
            a.train.apply(&mut tc);
            let model = CaptionModel::new(mc, tc.seed)?;
            let seed = tc.seed;
            Trainer::new(model, vocab, tc, seed)?
        }
    };
    let resumed_from_epoch = trainer.epoch();
    let ck = trainer.checkpoint();
    let sets = load_detections(&a.detections, ck.model_config.max_objects, DetectionFilter::default().min_score)?;
    let caps = read_captions(&a.captions)?;
    let data = pair_examples(&sets, &caps, &ck.vocab)?;
    log::info!("{} training pairs from {} images", data.len(), sets.len());

    let outputs = TrainOutputs {
        checkpoint: Some(a.out.clone()),
        log: a.log.clone(),
    };
    let final_ck = trainer.run_with(&data, &outputs, |e| {
        println!("epoch {:>4}  loss {:.5}  lr {:.3e}", e.epoch, e.mean_loss, e.lr)
    })?;

    let resolved = ResolvedTrain {
        model: &final_ck.model_config,
        train: &final_ck.train_config,
        min_count: ck.vocab.min_count(),
        resumed_from_epoch,
    };
    let mut m = RunManifest::new("train", Some(final_ck.train_config.seed), resolved)
        .input("detections", &a.detections)
        .input("captions", &a.captions)
        .output("checkpoint", &a.out);
    if let Some(v) = &a.vocab {
        m = m.input("vocab", v);
    }
    if let Some(r) = &a.resume {
        m = m.input("resume", r);
    }
    if let Some(l) = &a.log {
        m = m.output("log", l);
    }
    m.write()?;
    Ok(())
}

fn caption_all(
    model: &CaptionModel,
    vocab: &Vocabulary,
    sets: &[DetectionSet],
    beam_width: usize,
    max_len: usize,
    length_penalty: f64,
) -> Result<Vec<CaptionLine>, Failure> {
    sets.iter()
        .map(|det| {
            let ids = if beam_width <= 1 {
                greedy_decode(model, det, max_len)?
            } else {
                beam_decode(model, det, beam_width, max_len, length_penalty)?
            };
            Ok(CaptionLine {
                image_id: det.image_id.clone(),
                caption: vocab.decode(&ids)?.join(" "),
            })
        })
        .collect()
}

fn caption(a: CaptionArgs) -> Result<(), Failure> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.model()?;
    let sets = load_detections(&a.detections, model.config.max_objects, a.decode.min_score)?;
    let d = &a.decode;
    let lines = caption_all(&model, &ck.vocab, &sets, d.beam_width, d.max_len, d.length_penalty)?;
    write_captions(&a.out, &lines)?;
    RunManifest::new("caption", None, &a.decode)
        .input("checkpoint", &a.checkpoint)
        .input("detections", &a.detections)
        .output("captions", &a.out)
        .write()?;
    println!("captioned {} images", lines.len());
    Ok(())
}

/// Aligns candidates with their references, in candidate order. The first
/// candidate line per image is used.
/// Tokenised candidates and their reference sets, in matching order.
type Aligned = (Vec<Vec<String>>, Vec<Vec<Vec<String>>>);

fn align(cands: &[CaptionLine], refs: &[CaptionLine]) -> Result<Aligned, Failure> {
    let mut by_id: HashMap<&str, Vec<Vec<String>>> = HashMap::new();
    for r in refs {
        by_id.entry(&r.image_id).or_default().push(tokens(&r.caption));
    }
    let mut seen = std::collections::HashSet::new();
    let (mut c, mut r) = (Vec::new(), Vec::new());
    for cand in cands {
        if !seen.insert(cand.image_id.as_str()) {
            continue;
        }
        let refs = by_id
            .get(cand.image_id.as_str())
            .ok_or_else(|| Error::Config(format!("no reference captions for image `{}`", cand.image_id)))?;
        c.push(tokens(&cand.caption));
        r.push(refs.clone());
    }
    if c.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    Ok((c, r))
}

/// Same cleaning as training captions; a caption that cleans to nothing is empty.
fn tokens(caption: &str) -> Vec<String> {
    crate::data::preprocess_caption(caption).unwrap_or_default()
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let refs = read_captions(&a.refs)?;
    let smoothing = if a.smooth { Smoothing::AddOne } else { Smoothing::None };
    let mut rows: Vec<(String, BleuReport)> = Vec::new();
    let mut m = RunManifest::new(
        "eval",
        None,
        serde_json::json!({
            "smoothing": smoothing,
            "beam_width": a.beam_width,
            "max_len": a.max_len,
            "length_penalty": a.length_penalty,
            "min_score": a.min_score,
        }),
    )
    .input("refs", &a.refs);
    match (&a.cand, &a.checkpoint, &a.detections) {
        (Some(cand), _, _) => {
            let cands = read_captions(cand)?;
            let (c, r) = align(&cands, &refs)?;
            rows.push(("candidates".into(), corpus_bleu_with(&c, &r, smoothing)?));
            m = m.input("cand", cand);
        }
        (None, Some(ckp), Some(det)) => {
            let ck = Checkpoint::load(ckp)?;
            let model = ck.model()?;
            let sets = load_detections(det, model.config.max_objects, a.min_score)?;
            for (label, width) in [("greedy".to_string(), 1), (format!("beam-{}", a.beam_width), a.beam_width.max(2))] {
                let cands = caption_all(&model, &ck.vocab, &sets, width, a.max_len, a.length_penalty)?;
                let (c, r) = align(&cands, &refs)?;
                rows.push((label, corpus_bleu_with(&c, &r, smoothing)?));
            }
            m = m.input("checkpoint", ckp).input("detections", det);
        }
        _ => return Err(Failure::Usage("eval needs --cand, or --checkpoint with --detections".into())),
    }
    let table: Vec<(&str, &BleuReport)> = rows.iter().map(|(l, r)| (l.as_str(), r)).collect();
    print!("{}", BleuReport::table(&table));
    if let Some(out) = &a.out {
        let report: BTreeMap<&str, &BleuReport> = table.into_iter().collect();
        let text = serde_json::to_string_pretty(&report).expect("report serialises");
        std::fs::write(out, format!("{text}\n")).map_err(|e| Error::io(out, e))?;
        m.output("report", out).write()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ResolvedGradcheck<'a> {
    model: &'a ModelConfig,
    objects: usize,
    tokens: usize,
    tolerance: f64,
}

fn gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let mut mc = ModelConfig::preset(&a.config, a.vocab_size)?;
    a.model.apply(&mut mc);
    mc.dropout_rate = 0.0;
    let report = run_preset(mc.clone(), a.seed, a.objects, a.tokens)?;
    for p in &report.params {
        println!("{:<28} {:>6}  {:.3e}", p.name, p.numel, p.relative_error);
    }
    println!("max relative error {:.3e} ({})", report.max_relative_error, report.worst);
    if let Some(out) = &a.out {
        let text = serde_json::to_string_pretty(&report).expect("report serialises");
        std::fs::write(out, format!("{text}\n")).map_err(|e| Error::io(out, e))?;
        let resolved = ResolvedGradcheck {
            model: &mc,
            objects: a.objects,
            tokens: a.tokens,
            tolerance: a.tolerance,
        };
        RunManifest::new("gradcheck", Some(a.seed), resolved).output("report", out).write()?;
    }
    if report.passed(a.tolerance) {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max relative error {:.3e} in `{}` is not below {:e}",
            report.max_relative_error, report.worst, a.tolerance
        )))
    }
}
