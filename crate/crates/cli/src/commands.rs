//! Subcommands of the `sceneformer` binary.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sceneformer_core::assembly::{AssemblyConfig, Catalog};
use sceneformer_core::eval::{
    baseline_sampler, category_accuracy, config_hash, hardware_descriptor, in_room_count, pairwise_heatmap,
    scene_category_names, timing_benchmark, Baseline, MetricReport, DEFAULT_BINS, DEFAULT_RANGE,
};
use sceneformer_core::model::set::ModelSet;
use sceneformer_core::model::train::TrainingExample;
use sceneformer_core::model::Conditioning;
use sceneformer_core::sampler::{generate_scene, SamplerConfig, SceneCondition};
use sceneformer_core::scene::io::{load_dataset, read_scene_file, save_dataset, scene_file_name, SceneFile};
use sceneformer_core::scene::{make_synthetic_dataset, sub_seed, Dataset, Scene, SyntheticConfig};
use sceneformer_core::text::describe::DescriptionRecord;
use sceneformer_core::text::{
    description_vocabulary, extract_relations, generate_description, load_embedding_table, text_condition, tokenize,
    DescribeConfig, EmbeddingTable, Templates, TEXT_SENTENCES,
};

use crate::api::{FloorFile, Mode};
use crate::config::RunConfig;
use crate::pipeline::{self, Settings};
use crate::service::{self, AppState, Models, ServiceConfig};

pub const DESCRIPTIONS_FILE: &str = "descriptions.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const CONFIG_FILE: &str = "run.json";

#[derive(Debug, Parser)]
#[command(name = "sceneformer", version, about = "Indoor scene generation with per-property transformers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic bedroom dataset with descriptions and word vectors.
    MakeData(MakeDataArgs),
    /// Train the four models from a run config.
    Train(TrainArgs),
    /// Sample and place a new scene.
    Generate(GenerateArgs),
    /// Add objects to an existing scene.
    Complete(CompleteArgs),
    /// Describe a scene in English.
    Describe(DescribeArgs),
    /// Compute an evaluation metric.
    Eval(EvalArgs),
    /// Time scene generation.
    Bench(BenchArgs),
    /// Serve the /v1 HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct MakeDataArgs {
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub descriptions_per_scene: usize,
    #[arg(long, default_value_t = 100)]
    pub embedding_dim: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Print the loss every this many steps (0 silences progress).
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Word-vector table; needed in text mode.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Box catalog JSON; the bundled one by default.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Nucleus mass of the category model.
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; stdout by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Floor file (polygon plus openings) or a scene file whose floor to use.
    #[arg(long, conflicts_with = "text")]
    pub floor: Option<PathBuf>,
    #[arg(long)]
    pub text: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub max_new: Option<usize>,
    #[arg(long)]
    pub text: Option<String>,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(subcommand)]
    pub metric: Metric,
    /// Append the report to this JSONL file as well.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineArg {
    Uniform,
    GtFrequency,
}

impl From<BaselineArg> for Baseline {
    fn from(b: BaselineArg) -> Self {
        match b {
            BaselineArg::Uniform => Baseline::Uniform,
            BaselineArg::GtFrequency => Baseline::GtFrequency,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Metric {
    /// Share of mentioned categories present in the generated scene.
    CategoryAccuracy(CategoryAccuracyArgs),
    /// Relative-location heatmap of one category around another.
    Heatmap(HeatmapArgs),
    /// Share of generated objects inside the floor polygon.
    InRoom(InRoomArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct CategoryAccuracyArgs {
    /// JSONL of `{"mentioned": [..], "generated": [..]}` pairs.
    #[arg(long, conflicts_with_all = ["data", "checkpoint", "baseline"])]
    pub pairs: Option<PathBuf>,
    /// Dataset whose scenes are described and regenerated.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, conflicts_with = "baseline", requires = "embeddings")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
    /// Category frequencies of the gt-frequency baseline; `data` by default.
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    /// Scenes to use from `data`; all by default.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct HeatmapArgs {
    /// Scenes to count; generated by `checkpoint` when given.
    #[arg(long)]
    pub data: PathBuf,
    /// Generate one scene per dataset floor (or per seed) and count those.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub anchor: String,
    #[arg(long)]
    pub other: String,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = DEFAULT_RANGE)]
    pub range: f64,
    /// Writes `<out>.pgm` and `<out>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct InRoomArgs {
    /// Shape-conditioned checkpoint, or an unconditioned one for reference.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Floor plans to generate for.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Objects generated per scene.
    #[arg(long, default_value_t = 20)]
    pub objects: usize,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Dataset providing floors (shape mode) or descriptions (text mode).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Checkpoint directory; repeat once per mode.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Concurrent generations before requests get 503.
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::MakeData(a) => make_data(&a),
        Command::Train(a) => train(&a),
        Command::Generate(a) => generate(&a),
        Command::Complete(a) => complete(&a),
        Command::Describe(a) => describe(&a),
        Command::Eval(a) => eval(&a),
        Command::Bench(a) => bench(&a),
        Command::Serve(a) => serve(a),
    }
}

fn write_output<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| anyhow!("{}: field `{}`: {}", path.display(), e.path(), e.inner()))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let f = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(&line);
        out.push(
            serde_path_to_error::deserialize(de)
                .map_err(|e| anyhow!("{} line {}: field `{}`: {}", path.display(), i + 1, e.path(), e.inner()))?,
        );
    }
    Ok(out)
}

fn fresh_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

pub fn make_data(a: &MakeDataArgs) -> anyhow::Result<()> {
    let data = make_synthetic_dataset(&SyntheticConfig::default(), a.n, a.seed)?;
    save_dataset(&a.out, &data)?;
    let cfg = DescribeConfig::default();
    let mut lines = String::new();
    for (i, s) in data.scenes.iter().enumerate() {
        let relations = extract_relations(s, cfg.threshold);
        for k in 0..a.descriptions_per_scene {
            let seed = sub_seed(a.seed, (i * a.descriptions_per_scene + k) as u64);
            let d = generate_description(s, &data.table, &relations, &cfg, seed)?;
            lines += &serde_json::to_string(&DescriptionRecord::new(scene_file_name(i), &d))?;
            lines.push('\n');
        }
    }
    fs::write(a.out.join(DESCRIPTIONS_FILE), lines)?;
    let words = description_vocabulary(&data.table, Templates::bundled());
    EmbeddingTable::synthetic(&words, a.embedding_dim, a.seed)?.save(&a.out.join(EMBEDDINGS_FILE))?;
    eprintln!("wrote {} scenes to {}", data.scenes.len(), a.out.display());
    Ok(())
}

/// Examples carrying every description of their scene, cut to the
/// sentences a model reads.
pub fn text_examples(
    data: &Dataset,
    records: &[DescriptionRecord],
    embeddings: &EmbeddingTable,
    max_len: usize,
) -> anyhow::Result<Vec<TrainingExample>> {
    let mut by_scene: HashMap<&str, Vec<&DescriptionRecord>> = HashMap::new();
    for r in records {
        by_scene.entry(r.scene_path.as_str()).or_default().push(r);
    }
    let mut out = Vec::with_capacity(data.scenes.len());
    for (i, s) in data.scenes.iter().enumerate() {
        let name = scene_file_name(i);
        let Some(rs) = by_scene.get(name.as_str()) else { continue };
        let texts = rs
            .iter()
            .map(|r| {
                let text = r.sentences.iter().take(TEXT_SENTENCES).cloned().collect::<Vec<_>>().join(" ");
                text_condition(&tokenize(&text), embeddings, max_len)
            })
            .collect::<sceneformer_core::Result<_>>()?;
        out.push(TrainingExample { scene: s.clone(), texts });
    }
    if out.is_empty() {
        bail!("no description matches a scene of the dataset");
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    out: PathBuf,
    mode: Mode,
    examples: usize,
    final_loss: HashMap<&'static str, f32>,
}

pub fn train(a: &TrainArgs) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let data = load_dataset(&cfg.data).with_context(|| format!("loading dataset {}", cfg.data.display()))?;
    let table = data.table.clone();
    let extent = data.scenes.first().map_or(SyntheticConfig::default().extent, |s| s.extent);
    let mode = Conditioning::from(cfg.mode);
    let mut set = ModelSet::init(table.clone(), extent, cfg.seed, |k| cfg.model.transformer(k, table.len(), mode))?;
    let examples = if cfg.mode == Mode::Text {
        let (Some(desc), Some(emb)) = (&cfg.descriptions, &cfg.embeddings) else {
            bail!("text mode needs `descriptions` and `embeddings`");
        };
        let embeddings = load_embedding_table(emb)?;
        let max_len = set.models.iter().map(|m| m.config.max_text_len).min().unwrap_or(0);
        text_examples(&data, &read_jsonl(desc)?, &embeddings, max_len)?
    } else {
        data.scenes.iter().cloned().map(TrainingExample::new).collect()
    };
    let mut final_loss = HashMap::new();
    set.train(
        &examples,
        |k| cfg.train_for(k),
        |kind, log| {
            final_loss.insert(kind.name(), log.loss);
            if a.log_every > 0 && (log.step + 1) % a.log_every == 0 {
                eprintln!("{} step {} lr {:.2e} loss {:.4}", kind.name(), log.step + 1, log.lr, log.loss);
            }
        },
    )?;
    set.save(&cfg.out, false)?;
    fs::write(cfg.out.join(CONFIG_FILE), cfg.to_canonical_json())?;
    write_output(&TrainSummary { out: cfg.out.clone(), mode: cfg.mode, examples: examples.len(), final_loss }, None)
}

struct Loaded {
    set: ModelSet,
    embeddings: Option<EmbeddingTable>,
    catalog: Catalog,
    settings: Settings,
}

fn load_models(a: &ModelArgs) -> anyhow::Result<Loaded> {
    let set = ModelSet::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let embeddings = a.embeddings.as_deref().map(load_embedding_table).transpose()?;
    let catalog = match &a.catalog {
        Some(p) => Catalog::load(p)?,
        None => Catalog::bundled(),
    };
    let mut settings = Settings::default();
    if let Some(p) = a.top_p {
        settings.sampler.top_p = p;
    }
    Ok(Loaded { set, embeddings, catalog, settings })
}

/// A floor file, or the floor of a scene file.
pub fn read_floor(path: &Path) -> anyhow::Result<FloorFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(f) = serde_json::from_str::<FloorFile>(&text) {
        return Ok(f);
    }
    match serde_json::from_str::<SceneFile>(&text) {
        Ok(s) => Ok(FloorFile::from_scene_file(&s)),
        Err(_) => read_json::<FloorFile>(path),
    }
}

pub fn generate(a: &GenerateArgs) -> anyhow::Result<()> {
    let m = load_models(&a.model)?;
    let mode = Mode::from(m.set.conditioning);
    let floor = a.floor.as_deref().map(read_floor).transpose()?;
    let out = pipeline::generate(
        &m.set,
        m.embeddings.as_ref(),
        &m.catalog,
        mode,
        floor.as_ref(),
        a.text.as_deref(),
        &m.settings,
        fresh_seed(a.model.seed),
    )?;
    write_output(&out, a.model.out.as_deref())
}

pub fn complete(a: &CompleteArgs) -> anyhow::Result<()> {
    let m = load_models(&a.model)?;
    let mode = Mode::from(m.set.conditioning);
    let scene = read_scene_file(&a.scene)?;
    let out = pipeline::complete(
        &m.set,
        m.embeddings.as_ref(),
        &m.catalog,
        mode,
        &scene,
        a.text.as_deref(),
        a.max_new,
        &m.settings,
        fresh_seed(a.model.seed),
    )?;
    write_output(&out, a.model.out.as_deref())
}

pub fn describe(a: &DescribeArgs) -> anyhow::Result<()> {
    let scene = read_scene_file(&a.scene)?;
    write_output(&pipeline::describe(&scene, None, fresh_seed(a.seed))?, a.out.as_deref())
}

fn finish_report(report: MetricReport, append: Option<&Path>) -> anyhow::Result<()> {
    if let Some(p) = append {
        report.append_jsonl(p)?;
    }
    write_output(&report, None)
}

#[derive(Debug, Deserialize)]
struct PairLine {
    mentioned: Vec<String>,
    generated: Vec<String>,
}

fn take_scenes(data: &Dataset, n: Option<usize>) -> &[Scene] {
    &data.scenes[..n.unwrap_or(data.scenes.len()).min(data.scenes.len())]
}

pub fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    match &a.metric {
        Metric::CategoryAccuracy(m) => eval_category_accuracy(m, a.report.as_deref()),
        Metric::Heatmap(m) => eval_heatmap(m, a.report.as_deref()),
        Metric::InRoom(m) => eval_in_room(m, a.report.as_deref()),
    }
}

fn eval_category_accuracy(a: &CategoryAccuracyArgs, report: Option<&Path>) -> anyhow::Result<()> {
    let pairs: Vec<(Vec<String>, Vec<String>)> = if let Some(p) = &a.pairs {
        read_jsonl::<PairLine>(p)?.into_iter().map(|l| (l.mentioned, l.generated)).collect()
    } else {
        let Some(dir) = &a.data else { bail!("category-accuracy needs --pairs or --data") };
        let data = load_dataset(dir)?;
        let scenes = take_scenes(&data, a.n);
        let cfg = DescribeConfig::default();
        let mut generated_by: Box<dyn FnMut(usize, &str) -> anyhow::Result<Vec<String>>> = match (&a.checkpoint, a.baseline) {
            (Some(ckpt), None) => {
                let set = ModelSet::load(ckpt)?;
                if set.conditioning != Conditioning::Text {
                    bail!("category accuracy needs a text-conditioned checkpoint");
                }
                let emb = load_embedding_table(a.embeddings.as_deref().ok_or_else(|| anyhow!("--embeddings missing"))?)?;
                let sampler = SamplerConfig::default();
                let seed = a.seed;
                Box::new(move |i, text| {
                    let cond = pipeline::text_to_condition(text, Some(&emb), &set)?;
                    let g = generate_scene(&set, &SceneCondition::Text(cond), &sampler, sub_seed(seed, i as u64))?;
                    Ok(scene_category_names(&g.scene.objects, &set.table))
                })
            }
            (None, Some(b)) => {
                let freq = match &a.train_data {
                    Some(p) => load_dataset(p)?.table,
                    None => data.table.clone(),
                };
                let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
                Box::new(move |_, _| {
                    let cats = baseline_sampler(b.into(), &freq, &mut rng)?;
                    Ok(cats.into_iter().map(|c| freq.name(c).to_string()).collect())
                })
            }
            _ => bail!("category-accuracy needs --checkpoint or --baseline"),
        };
        let mut pairs = Vec::with_capacity(scenes.len());
        for (i, s) in scenes.iter().enumerate() {
            let d = generate_description(s, &data.table, &extract_relations(s, cfg.threshold), &cfg, sub_seed(a.seed ^ 0xD35C, i as u64))?
                .truncated(TEXT_SENTENCES);
            let mentioned = d.mentioned.iter().map(|m| m.category.clone()).collect();
            pairs.push((mentioned, generated_by(i, &d.text())?));
        }
        pairs
    };
    let acc = category_accuracy(&pairs);
    finish_report(MetricReport::new("category_accuracy_percent", acc.percent, acc.scored, config_hash(a)?)?, report)
}

fn eval_heatmap(a: &HeatmapArgs, report: Option<&Path>) -> anyhow::Result<()> {
    let data = load_dataset(&a.data)?;
    let table = data.table.clone();
    let scenes: Vec<Scene> = match &a.checkpoint {
        None => data.scenes.clone(),
        Some(ckpt) => {
            let set = ModelSet::load(ckpt)?;
            let sampler = SamplerConfig::default();
            data.scenes
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let cond = match set.conditioning {
                        Conditioning::Shape => SceneCondition::Floor(s.floor_plan(&set.table)),
                        Conditioning::None => SceneCondition::None,
                        Conditioning::Text => bail!("heatmaps are drawn from shape or unconditioned checkpoints"),
                    };
                    Ok(generate_scene(&set, &cond, &sampler, sub_seed(a.seed, i as u64))?.scene)
                })
                .collect::<anyhow::Result<_>>()?
        }
    };
    let h = pairwise_heatmap(&scenes, table.index(&a.anchor)?, table.index(&a.other)?, a.bins, a.range)?;
    if let Some(stem) = &a.out {
        h.save(stem, &table)?;
    }
    finish_report(MetricReport::new("heatmap_pairs", h.samples as f64, scenes.len(), config_hash(a)?)?, report)
}

fn eval_in_room(a: &InRoomArgs, report: Option<&Path>) -> anyhow::Result<()> {
    let set = ModelSet::load(&a.checkpoint)?;
    let data = load_dataset(&a.data)?;
    let sampler = SamplerConfig::default();
    let (mut inside, mut total) = (0, 0);
    for (i, s) in take_scenes(&data, a.n).iter().enumerate() {
        let cond = match set.conditioning {
            Conditioning::Shape => SceneCondition::Floor(s.floor_plan(&set.table)),
            Conditioning::None => SceneCondition::None,
            Conditioning::Text => bail!("in-room rate is measured on shape or unconditioned checkpoints"),
        };
        let g = generate_scene(&set, &cond, &sampler, sub_seed(a.seed, i as u64))?;
        let new = &g.scene.objects[g.given..];
        inside += in_room_count(new, &s.polygon);
        total += new.len();
    }
    if total == 0 {
        bail!("no objects were generated");
    }
    finish_report(MetricReport::new("in_room_percent", 100.0 * inside as f64 / total as f64, total, config_hash(a)?)?, report)
}

pub fn bench(a: &BenchArgs) -> anyhow::Result<()> {
    let set = ModelSet::load(&a.checkpoint)?;
    let data = a.data.as_deref().map(load_dataset).transpose()?;
    let scene = data.as_ref().and_then(|d| d.scenes.first());
    let cond = match set.conditioning {
        Conditioning::None => SceneCondition::None,
        Conditioning::Shape => {
            let s = scene.ok_or_else(|| anyhow!("shape mode needs --data for a floor plan"))?;
            SceneCondition::Floor(s.floor_plan(&set.table))
        }
        Conditioning::Text => {
            let emb = load_embedding_table(a.embeddings.as_deref().ok_or_else(|| anyhow!("text mode needs --embeddings"))?)?;
            let text = match scene {
                Some(s) => {
                    let cfg = DescribeConfig::default();
                    generate_description(s, &set.table, &extract_relations(s, cfg.threshold), &cfg, 0)?.text()
                }
                None => "there is a bed in the room.".to_string(),
            };
            SceneCondition::Text(pipeline::text_to_condition(&text, Some(&emb), &set)?)
        }
    };
    let given = match &cond {
        SceneCondition::Floor(p) => p.openings.len(),
        _ => 0,
    };
    let sampler = SamplerConfig { min_new_objects: a.objects, max_objects: given + a.objects, ..SamplerConfig::default() };
    let t = timing_benchmark(a.runs, |i| {
        let g = generate_scene(&set, &cond, &sampler, i as u64)?;
        debug_assert_eq!(g.scene.objects.len() - g.given, a.objects);
        Ok(())
    })?;
    let mut r = MetricReport::new("generation_seconds", t.mean, t.runs, config_hash(a)?)?;
    r.sd = Some(t.sd);
    r.hardware = Some(hardware_descriptor());
    finish_report(r, a.report.as_deref())
}

pub fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let cfg = ServiceConfig {
        checkpoints: a.checkpoint,
        embeddings: a.embeddings,
        catalog: a.catalog,
        workers: a.workers,
        settings: Settings { sampler: SamplerConfig::default(), assembly: AssemblyConfig::default() },
    };
    let models = Models::load(&cfg)?;
    let state = AppState::new(models, cfg);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(a.addr, state))
}

/// Name of a core error variant for the one-line JSON error of the binary.
pub fn error_kind(e: &anyhow::Error) -> &'static str {
    use sceneformer_core::Error;
    match e.downcast_ref::<Error>() {
        Some(Error::ModeMismatch(_)) => "mode_mismatch",
        Some(Error::DegeneratePolygon(_)) => "degenerate_polygon",
        Some(Error::Unsatisfiable(_)) => "unsatisfiable",
        Some(Error::Unsorted(_)) => "unsorted",
        Some(Error::TooManyObjects { .. }) => "too_many_objects",
        Some(Error::UnknownCategory(_)) => "unknown_category",
        Some(Error::InvalidArgument(_)) | Some(Error::Shape(_)) => "invalid_argument",
        Some(Error::Io(_)) => "io",
        Some(_) => "internal",
        None => "error",
    }
}
