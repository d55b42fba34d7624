//! The `morphovoc` command line.
//!
//! Every subcommand writes into its own directory under `--out` together
//! with a `manifest.json`. Settings come from defaults, then the `--config`
//! TOML file, then `--preset`, then explicit flags.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::{bench_decode, BenchSpec};
use crate::compose::{CompositionalVocab, ComposeError, InputSlot};
use crate::decomp::{build_map, filter_map, load_map, reduction_stats, serialize_map, DecompError, DecompositionMap, TransformId};
use crate::lexicon::{parse_unimorph, Lexicon, LexiconError, ParseOptions, Relation};
use crate::manifest::{sha256_file, RunManifest};
use crate::pipeline::{self, held_out_texts, PipelineError, PipelineSpec};
use crate::probe::{accuracy_report, scaling_study, PatchSlots, ProbeError, ScalingSpec};
use crate::toylm::{generate, output_text, per_word_perplexity, Head, LmError, ModelParams, TrainReport, TrainSpec};
use crate::transforms::{collect_pairs, consistency_score, extract_table, EmbeddingMatrix, MatrixRole, TransformError, TransformationTable};
use crate::vocab::{load_vocab, redundancy_report, LetterSet, SpaceMarker, VocabError, VocabFormat, Vocabulary};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_error!(VocabError, LexiconError, DecompError, ComposeError, toml::de::Error);

impl From<TransformError> for CliError {
    fn from(e: TransformError) -> Self {
        match e {
            TransformError::NonFinite | TransformError::ZeroOffset => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::Numeric(_) => CliError::Numeric(e.to_string()),
            LmError::InvalidConfig(_) | LmError::StageOrderViolation(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        match e {
            ProbeError::Lm(e) => e.into(),
            ProbeError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            ProbeError::DimensionMismatch { .. } => CliError::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Lexicon(e) => e.into(),
            PipelineError::Vocab(e) => e.into(),
            PipelineError::Transform(e) => e.into(),
            PipelineError::Lm(e) => e.into(),
            PipelineError::Probe(e) => e.into(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "morphovoc", version, about = "Compositional vocabularies: base tokens plus transformation vectors")]
pub struct Cli {
    /// TOML file with [pipeline], [scaling] and [bench] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Run directory; each subcommand writes a subdirectory.
    #[arg(long, short, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Seed for model initialisation and training order.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Small models that train on a laptop CPU.
    Desk,
    /// Distillation hyperparameters of the billion-parameter runs.
    Paper,
}

#[derive(Args, Debug, Clone)]
pub struct VocabArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    /// tiktoken, lines, json or tokenizer; guessed from the file if absent.
    #[arg(long)]
    pub format: Option<String>,
    /// literal_space, g_marker or underbar_marker.
    #[arg(long, default_value = "literal_space")]
    pub space_marker: String,
}

#[derive(Args, Debug, Clone)]
pub struct LexiconArgs {
    /// UniMorph-style TSV (lemma, form, tags); repeatable.
    #[arg(long, required = true)]
    pub lexicon: Vec<PathBuf>,
    /// TSV whose entries are all derivations; repeatable.
    #[arg(long)]
    pub derivations: Vec<PathBuf>,
    /// Tag segment that marks a derivation; repeatable.
    #[arg(long)]
    pub derivation_marker: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Count whole-word tokens, case-folded types and base forms of a vocabulary.
    AnalyzeVocab {
        #[command(flatten)]
        vocab: VocabArgs,
        #[command(flatten)]
        lexicon: LexiconArgs,
        /// alphabetic, ascii, or an explicit character list.
        #[arg(long, default_value = "ascii")]
        letters: String,
    },
    /// Build the decomposition map of a vocabulary.
    BuildMap {
        #[command(flatten)]
        vocab: VocabArgs,
        #[command(flatten)]
        lexicon: LexiconArgs,
        #[arg(long)]
        no_derivations: bool,
        /// Only surfaces that are tokens of the vocabulary.
        #[arg(long)]
        in_vocab_only: bool,
        /// Surfaces to drop, one per line.
        #[arg(long)]
        failed: Option<PathBuf>,
    },
    /// Extract mean-offset transformation vectors.
    Extract {
        #[command(flatten)]
        vocab: VocabArgs,
        #[arg(long)]
        map: PathBuf,
        /// Checkpoint directory to read embeddings from.
        #[arg(long, conflicts_with_all = ["embeddings", "unembeddings"])]
        checkpoint: Option<PathBuf>,
        #[arg(long, requires = "unembeddings")]
        embeddings: Option<PathBuf>,
        #[arg(long, requires = "embeddings")]
        unembeddings: Option<PathBuf>,
    },
    /// Generate the toy language, train its tokenizer and pretrain a baseline.
    Pretrain {
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        examples: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f32>,
    },
    /// Two-stage distillation of the transformation rows.
    Distill {
        #[arg(long)]
        examples: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f32>,
        #[arg(long)]
        temperature: Option<f32>,
        /// Stage 2 masks the union softmax instead of renormalising.
        #[arg(long)]
        no_renormalize: bool,
        #[arg(long)]
        no_derivations: bool,
        /// Surfaces to leave out of the map, one per line.
        #[arg(long)]
        failed: Option<PathBuf>,
    },
    /// Patchscope accuracy of composed embeddings.
    Probe {
        #[arg(long)]
        k_layers: Option<usize>,
        #[arg(long)]
        max_gen: Option<usize>,
        #[arg(long, value_enum)]
        patch_slots: Option<PatchSlotsArg>,
        #[arg(long)]
        embed_layer: Option<usize>,
        #[arg(long)]
        prefix: Option<String>,
        /// Decode with the original vocabulary rows.
        #[arg(long)]
        plain_head: bool,
        /// Probe at most this many composed entries.
        #[arg(long)]
        max_words: Option<usize>,
    },
    /// Interpretation accuracy and consistency across vocabulary sizes.
    Scaling {
        /// Comma-separated vocabulary sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        max_words: Option<usize>,
    },
    /// Greedy decoding from a trained model.
    Generate {
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 16)]
        max_new: usize,
        #[arg(long, value_enum, default_value = "stage2")]
        model: ModelChoice,
        #[arg(long, value_enum, default_value = "union")]
        head: HeadArg,
        /// Bases kept by the pruned head.
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Decoding throughput of the baseline against the compositional model.
    Bench {
        #[arg(long, default_value_t = 20)]
        prompts: usize,
        #[arg(long)]
        max_new: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Comma-separated pruned-mode k values.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        /// Compare against the baseline with an empty map attached.
        #[arg(long)]
        empty_map: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PatchSlotsArg {
    All,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Base,
    Stage1,
    Stage2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Plain,
    Union,
    Pruned,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub pipeline: PipelineSpec,
    pub scaling: ScalingSpec,
    pub bench: BenchSpec,
}

impl RunConfig {
    /// Defaults, then the file, then the preset, then `--seed`.
    pub fn resolve(cli: &Cli) -> Result<Self, CliError> {
        let mut c = match &cli.config {
            Some(p) => toml::from_str(&fs::read_to_string(p)?)?,
            None => RunConfig::default(),
        };
        if cli.preset == Some(Preset::Paper) {
            c.pipeline.distill = TrainSpec {
                seed: c.pipeline.distill.seed,
                batch: c.pipeline.distill.batch,
                kd_temperature: c.pipeline.distill.kd_temperature,
                ..TrainSpec::paper()
            };
            c.pipeline.model.max_seq = 256;
        }
        if let Some(s) = cli.seed {
            c.pipeline.model.seed = s;
            c.pipeline.pretrain.seed = s;
            c.pipeline.distill.seed = s;
            c.scaling.model.seed = s;
            c.scaling.pretrain.seed = s;
        }
        Ok(c)
    }
}

/// Output directory of one subcommand.
struct Output {
    dir: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Output {
    fn new(root: &Path, name: &str, config: &impl Serialize, seed: u64) -> Result<Self, CliError> {
        let dir = root.join(name);
        fs::create_dir_all(&dir)?;
        let config = serde_json::to_value(config).map_err(|e| CliError::Data(e.to_string()))?;
        Ok(Self {
            dir,
            manifest: RunManifest::new(std::env::args().collect(), config, seed),
            started: Instant::now(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        fs::write(self.path(name), contents)?;
        Ok(())
    }

    fn input(&mut self, name: &str, path: &Path) -> Result<(), CliError> {
        if path.is_file() {
            self.manifest.add_input(name, path)?;
        }
        Ok(())
    }

    fn time(&mut self, phase: &str, since: Instant) {
        self.manifest.timings.insert(phase.to_string(), since.elapsed().as_secs_f64());
    }

    fn finish(mut self) -> Result<PathBuf, CliError> {
        self.manifest.timings.insert("total".into(), self.started.elapsed().as_secs_f64());
        self.manifest.hash_artifacts(&self.dir)?;
        self.manifest.write(&self.dir)?;
        Ok(self.dir)
    }
}

fn pretty_json(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn read_vocab(a: &VocabArgs) -> Result<Vocabulary, CliError> {
    let bytes = fs::read(&a.vocab)?;
    let marker = SpaceMarker::parse(&a.space_marker).ok_or_else(|| CliError::Usage(format!("unknown space marker {:?}", a.space_marker)))?;
    let ext = a.vocab.extension().and_then(|e| e.to_str()).unwrap_or("");
    let format = a.format.clone().unwrap_or_else(|| {
        match ext {
            "tiktoken" => "tiktoken",
            "json" if bytes.windows(19).any(|w| w == b"morphovoc-tokenizer") => "tokenizer",
            "json" => "json",
            _ => "lines",
        }
        .to_string()
    });
    if format == "tokenizer" {
        return Ok(Vocabulary::from_tokenizer_json(&bytes)?);
    }
    let f = VocabFormat::parse(&format).ok_or_else(|| CliError::Usage(format!("unknown vocabulary format {format:?}")))?;
    Ok(load_vocab(&bytes, f, marker)?)
}

fn read_lexicon(a: &LexiconArgs) -> Result<Lexicon, CliError> {
    let mut opts = ParseOptions::default();
    if !a.derivation_marker.is_empty() {
        opts.derivation_markers = a.derivation_marker.clone();
    }
    let mut lex = Lexicon::from_entries(Vec::new());
    for p in &a.lexicon {
        lex = lex.merged(parse_unimorph(&fs::read(p)?, &opts)?);
    }
    for p in &a.derivations {
        lex = lex.merged(parse_unimorph(&fs::read(p)?, &ParseOptions::with_relation(Relation::Derivation))?);
    }
    Ok(lex)
}

fn read_lines_set(path: &Path) -> Result<BTreeSet<String>, CliError> {
    Ok(fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn loss_tsv(reports: &[(&str, &TrainReport)]) -> String {
    let mut s = String::from("stage\tstep\tloss\n");
    for (name, r) in reports {
        for (i, l) in r.losses.iter().enumerate() {
            s.push_str(&format!("{name}\t{i}\t{l:.6}\n"));
        }
    }
    s
}

/// Artifacts of `pretrain` and `distill` inside a run directory.
struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn pretrain(&self) -> PathBuf {
        self.root.join("pretrain")
    }

    fn distill(&self) -> PathBuf {
        self.root.join("distill")
    }

    fn vocab(&self) -> Result<Vocabulary, CliError> {
        let p = self.pretrain().join("tokenizer.json");
        Ok(Vocabulary::from_tokenizer_json(&fs::read(&p).map_err(|e| missing(&p, e))?)?)
    }

    fn lexicon(&self) -> Result<Lexicon, CliError> {
        let p = self.pretrain().join("lexicon.tsv");
        Ok(parse_unimorph(&fs::read(&p).map_err(|e| missing(&p, e))?, &ParseOptions::default())?)
    }

    fn base(&self) -> Result<ModelParams, CliError> {
        Ok(ModelParams::load_checkpoint(&self.pretrain().join("model"), None)?)
    }

    fn cv(&self) -> Result<Arc<CompositionalVocab>, CliError> {
        let d = self.distill();
        let map = load_map(&fs::read(d.join("map.json")).map_err(|e| missing(&d.join("map.json"), e))?)?;
        let table = TransformationTable::load(&d.join("table"))?;
        Ok(Arc::new(CompositionalVocab::new(self.vocab()?, map, table)?))
    }

    fn model(&self, which: ModelChoice, cv: Option<Arc<CompositionalVocab>>) -> Result<ModelParams, CliError> {
        match which {
            ModelChoice::Base => self.base(),
            ModelChoice::Stage1 => Ok(ModelParams::load_checkpoint(&self.distill().join("stage1"), cv)?),
            ModelChoice::Stage2 => Ok(ModelParams::load_checkpoint(&self.distill().join("stage2"), cv)?),
        }
    }
}

fn missing(p: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e} (run the earlier subcommand first)", p.display()))
}

/// Caps rayon at `MORPHOVOC_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("MORPHOVOC_THREADS") {
        let n: usize = v.parse().map_err(|_| CliError::Usage(format!("MORPHOVOC_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

/// Runs one subcommand; returns the directory it wrote, if any.
pub fn run(cli: &Cli) -> Result<Option<PathBuf>, CliError> {
    let cfg = RunConfig::resolve(cli)?;
    let run = RunDir { root: cli.out.clone() };
    let mut spec = cfg.pipeline.clone();
    match &cli.command {
        Command::AnalyzeVocab { vocab, lexicon, letters } => {
            let mut out = Output::new(&cli.out, "analyze", &serde_json::json!({ "letters": letters }), 0)?;
            let t = Instant::now();
            let v = read_vocab(vocab)?;
            let lex = read_lexicon(lexicon)?;
            out.input("vocab", &vocab.vocab)?;
            for (i, p) in lexicon.lexicon.iter().enumerate() {
                out.input(&format!("lexicon{i}"), p)?;
            }
            let map = build_map(&v, &lex, &Default::default()).map;
            let mut report = redundancy_report(&v, &lex, &map, &LetterSet::parse(letters))?;
            report.input_checksums = out.manifest.inputs.iter().map(|(k, h)| format!("{k}:{h}")).collect();
            out.time("analyze", t);
            out.write("redundancy.txt", report.to_text())?;
            out.write("redundancy.json", pretty_json(&report))?;
            print!("{}", report.to_text());
            out.finish().map(Some)
        }
        Command::BuildMap {
            vocab,
            lexicon,
            no_derivations,
            in_vocab_only,
            failed,
        } => {
            let mut opts = spec.build.clone();
            opts.include_derivations &= !no_derivations;
            opts.include_oov &= !in_vocab_only;
            let mut out = Output::new(&cli.out, "map", &opts, 0)?;
            let v = read_vocab(vocab)?;
            let lex = read_lexicon(lexicon)?;
            out.input("vocab", &vocab.vocab)?;
            for (i, p) in lexicon.lexicon.iter().enumerate() {
                out.input(&format!("lexicon{i}"), p)?;
            }
            let built = build_map(&v, &lex, &opts);
            let mut map = built.map;
            if let Some(f) = failed {
                out.input("failed", f)?;
                let (m, warnings) = filter_map(&map, &read_lines_set(f)?, false);
                for w in warnings {
                    log::warn!("{w}");
                }
                map = m;
            }
            map.set_checksum("vocab", sha256_file(&vocab.vocab)?);
            let (removed, union) = reduction_stats(&map, &v);
            let stats = format!(
                "entries\t{}\ntransforms\t{}\nremoved\t{removed}\nunion_size\t{union}\nskipped_base_not_in_vocab\t{}\nskipped_base_without_leading_space\t{}\nskipped_conflicting_surface\t{}\nskipped_multiword_form\t{}\nskipped_surface_is_base\t{}\n",
                map.len(),
                map.transforms().len(),
                built.skips.base_not_in_vocab,
                built.skips.base_without_leading_space,
                built.skips.conflicting_surface,
                built.skips.multiword_form,
                built.skips.surface_is_base,
            );
            out.write("map.json", serialize_map(&map))?;
            out.write("stats.tsv", &stats)?;
            print!("{stats}");
            out.finish().map(Some)
        }
        Command::Extract {
            vocab,
            map,
            checkpoint,
            embeddings,
            unembeddings,
        } => {
            let mut out = Output::new(&cli.out, "extract", &serde_json::json!({}), 0)?;
            let v = read_vocab(vocab)?;
            let m = load_map(&fs::read(map)?)?;
            out.input("vocab", &vocab.vocab)?;
            out.input("map", map)?;
            let (e, u) = match (checkpoint, embeddings, unembeddings) {
                (Some(dir), _, _) => ModelParams::load_checkpoint(dir, None)?.embedding_matrices(),
                (None, Some(e), Some(u)) => {
                    out.input("embeddings", e)?;
                    out.input("unembeddings", u)?;
                    (EmbeddingMatrix::load(e)?, EmbeddingMatrix::load(u)?.with_role(MatrixRole::OutputUnembedding))
                }
                _ => return Err(CliError::Usage("give --checkpoint or --embeddings with --unembeddings".into())),
            };
            let table = extract_table(&m, &v, &e, &u)?;
            table.save(&out.path("table"))?;
            let mut s = String::from("transform\tsupport\tconsistency\n");
            for t in 0..table.len() {
                let pairs = collect_pairs(&m, &v, TransformId(t as u32));
                let c = consistency_score(&e, &pairs, table.input_offsets.row(t)).map(|(c, _)| format!("{c:.6}")).unwrap_or_else(|_| "nan".into());
                s.push_str(&format!("{}\t{}\t{c}\n", table.labels[t], table.support[t]));
            }
            out.write("consistency.tsv", &s)?;
            print!("{s}");
            out.finish().map(Some)
        }
        Command::Pretrain {
            vocab_size,
            examples,
            epochs,
            learning_rate,
        } => {
            if let Some(v) = vocab_size {
                spec.vocab_size = *v;
            }
            if let Some(n) = examples {
                spec.pretrain.n_examples = *n;
            }
            if let Some(n) = epochs {
                spec.pretrain.n_epochs = *n;
            }
            if let Some(lr) = learning_rate {
                spec.pretrain.learning_rate = *lr;
            }
            let mut out = Output::new(&cli.out, "pretrain", &spec, spec.pretrain.seed)?;
            let t = Instant::now();
            let (lex, sampler) = pipeline::language(&spec)?;
            let vocab = pipeline::tokenizer(&spec, &sampler)?;
            out.time("tokenizer", t);
            let t = Instant::now();
            let (base, report) = pipeline::pretrain(&spec, &sampler, &vocab)?;
            out.time("pretrain", t);
            out.write("lexicon.tsv", lex.to_tsv())?;
            out.write("tokenizer.json", vocab.to_tokenizer_json())?;
            out.write("loss.tsv", loss_tsv(&[("pretrain", &report)]))?;
            out.write("spec.toml", toml::to_string(&spec).map_err(|e| CliError::Data(e.to_string()))?)?;
            base.save_checkpoint(&out.path("model"))?;
            println!("tokens {} final loss {:.4}", vocab.len(), report.final_loss().unwrap_or(f64::NAN));
            out.finish().map(Some)
        }
        Command::Distill {
            examples,
            learning_rate,
            temperature,
            no_renormalize,
            no_derivations,
            failed,
        } => {
            if let Some(n) = examples {
                spec.distill.n_examples = *n;
            }
            if let Some(lr) = learning_rate {
                spec.distill.learning_rate = *lr;
            }
            if let Some(t) = temperature {
                spec.distill.kd_temperature = *t;
            }
            spec.distill.renormalize_stage2 &= !no_renormalize;
            spec.build.include_derivations &= !no_derivations;
            let mut out = Output::new(&cli.out, "distill", &spec, spec.distill.seed)?;
            out.input("tokenizer", &run.pretrain().join("tokenizer.json"))?;
            out.input("lexicon", &run.pretrain().join("lexicon.tsv"))?;
            let vocab = run.vocab()?;
            let lex = run.lexicon()?;
            let base = run.base()?;
            let mut map = build_map(&vocab, &lex, &spec.build).map;
            if let Some(f) = failed {
                out.input("failed", f)?;
                map = filter_map(&map, &read_lines_set(f)?, false).0;
            }
            let cv = pipeline::compositional_vocab(&vocab, map, &base)?;
            let (_, sampler) = pipeline::language(&spec)?;
            let t = Instant::now();
            let d = pipeline::distill(&spec, &sampler, &base, cv.clone())?;
            out.time("distill", t);
            let held = held_out_texts(&spec, &sampler, &vocab)?;
            let pb = per_word_perplexity(&base, &vocab, &held, Head::Plain)?;
            let pc = per_word_perplexity(&d.stage2, &vocab, &held, Head::Union)?;
            let ex = pipeline::held_out_examples(&cv, &held)?;
            let l2 = crate::toylm::stage2_loss(&d.stage2, &d.stage1, &ex, &spec.distill)?;
            let summary = format!("baseline_perplexity\t{pb:.6}\ncompositional_perplexity\t{pc:.6}\nheld_out_stage2_loss\t{l2:.6}\n");
            out.write("map.json", serialize_map(&cv.map))?;
            cv.table.save(&out.path("table"))?;
            d.stage1.save_checkpoint(&out.path("stage1"))?;
            d.stage2.save_checkpoint(&out.path("stage2"))?;
            out.write("loss.tsv", loss_tsv(&[("stage1", &d.reports[0]), ("stage2", &d.reports[1])]))?;
            out.write("summary.tsv", &summary)?;
            print!("{summary}");
            out.finish().map(Some)
        }
        Command::Probe {
            k_layers,
            max_gen,
            patch_slots,
            embed_layer,
            prefix,
            plain_head,
            max_words,
        } => {
            let p = &mut spec.probe;
            if let Some(k) = k_layers {
                p.k_layers = *k;
            }
            if let Some(n) = max_gen {
                p.max_gen = *n;
            }
            if let Some(s) = patch_slots {
                p.patch_slots = match s {
                    PatchSlotsArg::All => PatchSlots::All,
                    PatchSlotsArg::Last => PatchSlots::Last,
                };
            }
            if let Some(l) = embed_layer {
                p.embed_layer = *l;
            }
            if prefix.is_some() {
                p.language_prefix = prefix.clone();
            }
            p.plain_head |= plain_head;
            if let Some(n) = max_words {
                spec.sample.max_words = *n;
            }
            let mut out = Output::new(&cli.out, "probe", &(&spec.probe, &spec.sample), 0)?;
            out.input("stage2", &run.distill().join("stage2").join("config.json"))?;
            let cv = run.cv()?;
            let model = run.model(ModelChoice::Stage2, Some(cv.clone()))?;
            let t = Instant::now();
            let result = accuracy_report(&model, &spec.probe, &spec.sample)?;
            out.time("probe", t);
            let (filtered, _) = filter_map(&cv.map, &result.failed, false);
            out.write("report.json", pretty_json(&result))?;
            out.write("report.tsv", result.to_table())?;
            out.write("failed.txt", result.failed.iter().map(|s| format!("{s}\n")).collect::<String>())?;
            out.write("filtered_map.json", serialize_map(&filtered))?;
            print!("{}", result.to_table());
            out.finish().map(Some)
        }
        Command::Scaling { sizes, max_words } => {
            let mut s = cfg.scaling.clone();
            if let Some(v) = sizes {
                s.vocab_sizes = v.clone();
            }
            if let Some(n) = max_words {
                s.sample.max_words = *n;
            }
            let mut out = Output::new(&cli.out, "scaling", &s, s.model.seed)?;
            let t = Instant::now();
            let report = scaling_study(&s)?;
            out.time("scaling", t);
            out.write("curve.tsv", report.to_tsv())?;
            out.write("scaling.json", pretty_json(&report))?;
            print!("{}", report.to_tsv());
            println!("trend tied: {} untied: {}", report.trend(true), report.trend(false));
            out.finish().map(Some)
        }
        Command::Generate {
            prompt,
            max_new,
            model,
            head,
            k,
        } => {
            let vocab = run.vocab()?;
            let cv = if *model == ModelChoice::Base { None } else { Some(run.cv()?) };
            let m = run.model(*model, cv.clone())?;
            let h = match head {
                HeadArg::Plain => Head::Plain,
                HeadArg::Union => Head::Union,
                HeadArg::Pruned => Head::Pruned(*k),
            };
            let slots: Vec<InputSlot> = match &cv {
                Some(cv) => cv.restructure_input(prompt)?,
                None => vocab.encode(prompt)?.into_iter().map(InputSlot::Plain).collect(),
            };
            let ids = generate(&m, &slots, *max_new, h, &[])?;
            let text: String = ids.into_iter().map(|i| output_text(&m, &vocab, h, i)).collect();
            println!("{prompt}{text}");
            Ok(None)
        }
        Command::Bench {
            prompts,
            max_new,
            rounds,
            k,
            empty_map,
        } => {
            let mut b = cfg.bench.clone();
            if let Some(n) = max_new {
                b.max_new = *n;
            }
            if let Some(r) = rounds {
                b.rounds = *r;
            }
            if let Some(k) = k {
                b.pruned_k = k.clone();
            }
            let vocab = run.vocab()?;
            let base = run.base()?;
            let comp = if *empty_map {
                let cv = CompositionalVocab::new(vocab.clone(), DecompositionMap::empty(), TransformationTable::empty(base.config.dim))?;
                b.pruned_k.clear();
                base.attach(Arc::new(cv))?
            } else {
                run.model(ModelChoice::Stage2, Some(run.cv()?))?
            };
            let (_, sampler) = pipeline::language(&spec)?;
            let texts = pipeline::bench_prompts(&sampler, *prompts, 6);
            let mut out = Output::new(&cli.out, "bench", &b, 0)?;
            let t = Instant::now();
            let report = bench_decode(&base, &comp, &vocab, &texts, &b)?;
            out.time("bench", t);
            out.write("bench.txt", report.to_text())?;
            print!("{}", report.to_text());
            // throughput varies run to run, so it lives beside the artifacts
            out.manifest.timings.insert("baseline_tokens_per_sec".into(), report.baseline_tokens_per_sec);
            out.finish().map(Some)
        }
    }
}

pub fn main_with_args(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("{e}");
        return e.exit_code();
    }
    match run(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
