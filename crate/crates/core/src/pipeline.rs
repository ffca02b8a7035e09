//! Training, evaluation, prediction and the experiment commands.
//!
//! A run directory holds `config.json`, `vocab.txt`, `chars.txt`, one
//! `checkpoint-epoch{N}.bin` per epoch, `ema.bin` and `train_log.csv`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::albert_retro::{self, AlbertConfig, RetroGold, RetroLogits};
use crate::bidaf::{self, BidafConfig};
use crate::config::{Architecture, ConfidenceMode, OptimizerKind, RunConfig};
use crate::docqa::{self, DocqaConfig, DocumentAnswer, SpanScorer};
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{em_f1, evaluate_predictions, MetricReport, Predictions};
use crate::squad::{
    build_packed, build_packed_query, build_pair, char_slice, group_features, load_squad, sample_paragraphs,
    Batches, PackedFeature, PairFeature, Paragraph, Question, SquadDataset, SquadDocument, Vocabularies,
};
use crate::tensor::{
    ema_update, load_checkpoint, save_checkpoint, Adadelta, Adam, DiffEntry, Gradients, Graph, Optimizer,
    ParameterStore, Tensor, Var,
};

/// Environment variable capping evaluation threads.
pub const THREADS_ENV: &str = "SPANFORGE_THREADS";

/// Seed offset for the re-initialization stream, so re-drawn values
/// differ from the ones drawn at construction.
const REINIT_STREAM: u64 = 0x7265_696e_6974;

/// Architecture-specific network configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Bidaf(BidafConfig),
    Docqa(DocqaConfig),
    Albert(AlbertConfig),
}

impl ModelSpec {
    pub fn from_run(cfg: &RunConfig, vocabs: &Vocabularies) -> Self {
        let m = &cfg.model;
        let encoder = EncoderConfig {
            word_dim: m.word_dim,
            char_dim: m.char_dim,
            cnn_width: m.cnn_width,
            hidden: m.hidden,
            dropout_keep: cfg.train.dropout_keep,
        };
        let chars = m.use_chars.then(|| vocabs.chars.len());
        match cfg.arch {
            Architecture::Bidaf => ModelSpec::Bidaf(BidafConfig {
                encoder,
                vocab: vocabs.words.len(),
                chars,
            }),
            Architecture::Docqa => ModelSpec::Docqa(DocqaConfig {
                encoder,
                vocab: vocabs.words.len(),
                chars,
                max_span: m.max_span,
                max_context: cfg.train.seq_len,
            }),
            Architecture::Albert => ModelSpec::Albert(AlbertConfig {
                vocab: vocabs.words.len(),
                embed: m.embed,
                hidden: m.hidden,
                layers: m.layers,
                heads: m.heads,
                ffn: m.ffn,
                seq_len: cfg.train.seq_len,
                dropout_keep: cfg.train.dropout_keep,
            }),
        }
    }

    pub fn init_store(&self, seed: u64) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        match self {
            ModelSpec::Bidaf(c) => bidaf::init_bidaf(&mut store, c, seed)?,
            ModelSpec::Docqa(c) => docqa::init_docqa(&mut store, c, seed)?,
            ModelSpec::Albert(c) => albert_retro::init_albert(&mut store, c, seed)?,
        }
        Ok(store)
    }
}

/// Configuration, vocabularies and network layout of one model. The
/// parameters are passed separately so live and EMA weights share it.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: RunConfig,
    pub vocabs: Vocabularies,
    pub spec: ModelSpec,
}

/// Vocabularies built from the training data under the configured cap.
pub fn build_vocabularies(cfg: &RunConfig, data: &SquadDataset) -> Vocabularies {
    Vocabularies::build(data, 1, Some(cfg.model.vocab_cap))
}

impl Model {
    pub fn new(config: RunConfig, vocabs: Vocabularies) -> Result<Self> {
        config.validate()?;
        let spec = ModelSpec::from_run(&config, &vocabs);
        Ok(Model { config, vocabs, spec })
    }

    /// Fresh parameters for this model. With `reinit_last_linear` set the
    /// shared block's last linear is re-drawn right after construction.
    pub fn init_store(&self) -> Result<ParameterStore> {
        let t = &self.config.train;
        let mut store = self.spec.init_store(t.seed)?;
        if t.reinit_last_linear {
            albert_retro::reinit_last_linear(&mut store, t.reinit_mode, t.seed ^ REINIT_STREAM)?;
        }
        Ok(store)
    }

    /// Store layout without the re-initialization, for shape checks.
    fn template(&self) -> Result<ParameterStore> {
        self.spec.init_store(self.config.train.seed)
    }

    fn max_span(&self) -> usize {
        self.config.model.max_span
    }

    fn seq_len(&self) -> usize {
        self.config.train.seq_len
    }

    /// Answer text for `question` over the given paragraphs.
    pub fn answer(&self, store: &ParameterStore, doc: &SquadDocument, question: &Question) -> Result<ModelAnswer> {
        match &self.spec {
            ModelSpec::Bidaf(c) => {
                let reader = BidafReader { cfg: c, store };
                let a = docqa::multi_paragraph_answer(
                    &reader,
                    doc,
                    question,
                    &self.vocabs,
                    self.config.train.confidence_mode,
                    self.max_span(),
                    self.seq_len(),
                )?;
                Ok(ModelAnswer::from_document(a))
            }
            ModelSpec::Docqa(c) => {
                let reader = docqa::DocqaReader { cfg: c, store };
                let a = docqa::multi_paragraph_answer(
                    &reader,
                    doc,
                    question,
                    &self.vocabs,
                    self.config.train.confidence_mode,
                    self.max_span(),
                    self.seq_len(),
                )?;
                Ok(ModelAnswer::from_document(a))
            }
            ModelSpec::Albert(c) => self.albert_answer(c, store, doc, question),
        }
    }

    fn albert_answer(
        &self,
        cfg: &AlbertConfig,
        store: &ParameterStore,
        doc: &SquadDocument,
        question: &Question,
    ) -> Result<ModelAnswer> {
        if doc.paragraphs.is_empty() {
            return Err(Error::Empty("document paragraphs"));
        }
        let mut best: Option<(f64, usize, usize, usize, PackedFeature)> = None;
        for (p, para) in doc.paragraphs.iter().enumerate() {
            let Some(f) = build_packed_query(question, &para.context, &self.vocabs, cfg.seq_len) else {
                continue;
            };
            let mut g = Graph::new();
            let out = albert_retro::forward(&mut g, store, cfg, &f, None)?;
            let logits = RetroLogits::from_output(&g, &out);
            if let Some((s, e, margin)) = albert_retro::retro_margin(&logits, &f.context_mask, self.max_span())? {
                if best.as_ref().is_none_or(|b| margin > b.0) {
                    best = Some((margin, p, s, e, f));
                }
            }
        }
        let threshold = self.config.train.na_threshold;
        match best {
            Some((margin, p, s, e, f)) if margin > threshold => {
                let (cs, _) = f.offsets[s].expect("context position");
                let (_, ce) = f.offsets[e].expect("context position");
                Ok(ModelAnswer {
                    text: char_slice(&doc.paragraphs[p].context, cs, ce),
                    paragraph: Some(p),
                    score: margin,
                })
            }
            Some((margin, ..)) => Ok(ModelAnswer::abstain(margin)),
            None => Ok(ModelAnswer::abstain(f64::NEG_INFINITY)),
        }
    }

    /// One prediction per question. BiDAF and ALBERT read the question's
    /// own paragraph; DocumentQA reads the whole document.
    pub fn predict(&self, store: &ParameterStore, data: &SquadDataset) -> Result<Predictions> {
        let jobs: Vec<(&SquadDocument, usize, &Question)> = data
            .documents
            .iter()
            .flat_map(|d| d.questions().map(move |(p, q)| (d, p, q)))
            .collect();
        let answers: Vec<(String, String)> = with_eval_pool(|| {
            jobs.par_iter()
                .map(|&(doc, p, q)| {
                    let a = match self.spec {
                        ModelSpec::Docqa(_) => self.answer(store, doc, q)?,
                        _ => self.answer(store, &single_paragraph(doc, p), q)?,
                    };
                    Ok((q.id.clone(), a.text))
                })
                .collect::<Result<Vec<_>>>()
        })??;
        Predictions::from_pairs(answers)
    }

    pub fn evaluate(&self, store: &ParameterStore, data: &SquadDataset) -> Result<(Predictions, MetricReport)> {
        if data.question_count() == 0 {
            return Err(Error::Empty("evaluation dataset"));
        }
        let preds = self.predict(store, data)?;
        let report = evaluate_predictions(&preds, data, true)?;
        Ok((preds, report))
    }
}

fn single_paragraph(doc: &SquadDocument, p: usize) -> SquadDocument {
    SquadDocument {
        title: doc.title.clone(),
        paragraphs: vec![Paragraph {
            context: doc.paragraphs[p].context.clone(),
            questions: Vec::new(),
        }],
    }
}

/// A single prediction. `paragraph` is `None` when the model abstains.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelAnswer {
    pub text: String,
    pub paragraph: Option<usize>,
    /// Span confidence (DocumentQA/BiDAF) or has-answer margin (ALBERT).
    pub score: f64,
}

impl ModelAnswer {
    fn from_document(a: DocumentAnswer) -> Self {
        ModelAnswer {
            text: a.text,
            paragraph: Some(a.paragraph),
            score: a.confidence,
        }
    }

    fn abstain(score: f64) -> Self {
        ModelAnswer {
            text: String::new(),
            paragraph: None,
            score,
        }
    }
}

/// BiDAF as a [`SpanScorer`].
pub struct BidafReader<'a> {
    pub cfg: &'a BidafConfig,
    pub store: &'a ParameterStore,
}

impl SpanScorer for BidafReader<'_> {
    fn logits(&self, f: &PairFeature) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let st = bidaf::forward(&mut g, self.store, self.cfg, f, None)?;
        Ok((g.value(st.start_logits).data().to_vec(), g.value(st.end_logits).data().to_vec()))
    }
}

fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs `f` on a pool capped by `SPANFORGE_THREADS`, or on the global
/// pool when the variable is unset.
pub fn with_eval_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match thread_count() {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// One optimization unit: a question read against one or more
/// paragraphs, or one packed sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainItem {
    Paragraphs {
        features: Vec<PairFeature>,
        /// Which feature carries the answer.
        gold_index: usize,
        gold: (usize, usize),
    },
    Packed(PackedFeature),
}

/// Training units for `model` and the number of questions dropped
/// because their answer did not survive truncation.
pub fn training_items(model: &Model, data: &SquadDataset) -> (Vec<TrainItem>, usize) {
    let cfg = &model.config;
    let seq_len = cfg.train.seq_len;
    let mut items = Vec::new();
    let mut dropped = 0;
    for (d, doc) in data.documents.iter().enumerate() {
        match cfg.arch {
            Architecture::Bidaf => {
                for (p, q) in doc.questions().filter(|(_, q)| !q.is_impossible) {
                    match build_pair(q, &doc.paragraphs[p].context, &model.vocabs, seq_len) {
                        Some(f) => {
                            let gold = f.gold.expect("answerable");
                            items.push(TrainItem::Paragraphs {
                                features: vec![f],
                                gold_index: 0,
                                gold,
                            });
                        }
                        None => dropped += 1,
                    }
                }
            }
            Architecture::Docqa => {
                let questions: HashMap<&str, &Question> = doc.questions().map(|(_, q)| (q.id.as_str(), q)).collect();
                let seed = cfg.train.seed ^ (d as u64).wrapping_mul(0x9e37_79b9);
                for group in sample_paragraphs(doc, cfg.train.confidence_mode, cfg.train.negatives, seed) {
                    let q = questions[group.qid.as_str()];
                    let features = group_features(doc, q, &group, &model.vocabs, seq_len);
                    let Some(features) = features else {
                        dropped += 1;
                        continue;
                    };
                    let (gold_index, gold) = features
                        .iter()
                        .enumerate()
                        .find_map(|(i, f)| f.gold.map(|g| (i, g)))
                        .expect("group holds its answer paragraph");
                    items.push(TrainItem::Paragraphs {
                        features,
                        gold_index,
                        gold,
                    });
                }
            }
            Architecture::Albert => {
                for (p, q) in doc.questions() {
                    match build_packed(q, &doc.paragraphs[p].context, &model.vocabs, seq_len) {
                        Some(f) => items.push(TrainItem::Packed(f)),
                        None => dropped += 1,
                    }
                }
            }
        }
    }
    (items, dropped)
}

/// Loss of one item in graph `g`.
pub fn item_loss(
    g: &mut Graph,
    spec: &ModelSpec,
    store: &ParameterStore,
    item: &TrainItem,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    match (spec, item) {
        (
            ModelSpec::Bidaf(c),
            TrainItem::Paragraphs {
                features, gold, ..
            },
        ) => {
            let st = bidaf::forward(g, store, c, &features[0], rng)?;
            bidaf::bidaf_loss(g, &[(st.start_logits, st.end_logits)], &[*gold])
        }
        (
            ModelSpec::Docqa(c),
            TrainItem::Paragraphs {
                features,
                gold_index,
                gold,
            },
        ) => {
            let outputs = features
                .iter()
                .map(|f| docqa::forward(g, store, c, f, rng.as_deref_mut()))
                .collect::<Result<Vec<_>>>()?;
            docqa::group_loss(g, &outputs, *gold_index, *gold)
        }
        (ModelSpec::Albert(c), TrainItem::Packed(f)) => {
            let out = albert_retro::forward(g, store, c, f, rng)?;
            let gold = RetroGold::from_feature(f)?;
            Ok(albert_retro::retro_loss(g, &[out], &[gold])?.total)
        }
        _ => Err(Error::invalid("item_loss", "training item does not match the architecture")),
    }
}

fn zero_gradients(store: &ParameterStore) -> Gradients {
    let mut grads = Gradients::new();
    for (name, t) in store.iter() {
        grads.insert(name, Tensor::zeros(t.shape().to_vec()));
    }
    grads
}

fn stream(seed: u64, step: usize, index: usize) -> u64 {
    seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (index as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

/// Live weights, EMA shadow and optimizer state of one training run.
pub struct Trainer {
    pub model: Model,
    pub store: ParameterStore,
    pub shadow: ParameterStore,
    pub items: Vec<TrainItem>,
    pub steps: usize,
    optimizer: Box<dyn Optimizer + Send + Sync>,
    batches: Batches,
}

impl Trainer {
    pub fn new(model: Model, items: Vec<TrainItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("training examples"));
        }
        let store = model.init_store()?;
        Self::with_store(model, items, store)
    }

    pub fn with_store(model: Model, items: Vec<TrainItem>, store: ParameterStore) -> Result<Self> {
        let t = &model.config.train;
        let optimizer: Box<dyn Optimizer + Send + Sync> = match t.optimizer {
            OptimizerKind::Adam => Box::new(Adam::new(t.lr)),
            OptimizerKind::Adadelta => Box::new(Adadelta::new(t.lr)),
        };
        let batches = Batches::singletons(items.len(), t.batch_size)?;
        Ok(Trainer {
            shadow: store.clone(),
            model,
            store,
            items,
            steps: 0,
            optimizer,
            batches,
        })
    }

    /// Mean loss of the batch and its averaged parameter gradients.
    pub fn batch_gradients(&self, batch: &[usize]) -> Result<(f64, Gradients)> {
        let t = &self.model.config.train;
        let training = t.dropout_keep < 1.0;
        let per_item: Vec<(f64, Gradients)> = batch
            .par_iter()
            .map(|&i| {
                let mut g = Graph::new();
                let mut rng = ChaCha8Rng::seed_from_u64(stream(t.seed, self.steps, i));
                let loss = item_loss(&mut g, &self.model.spec, &self.store, &self.items[i], training.then_some(&mut rng))?;
                g.backward(loss)?;
                Ok((g.value(loss).data()[0], g.gradients(&self.store)?))
            })
            .collect::<Result<_>>()?;
        let mut grads = zero_gradients(&self.store);
        let mut loss = 0.0;
        for (l, g) in &per_item {
            loss += l;
            grads.accumulate(g)?;
        }
        let scale = 1.0 / batch.len() as f64;
        grads.scale(scale);
        Ok((loss * scale, grads))
    }

    /// One optimizer step on `batch` (item indices); returns its mean loss.
    pub fn step(&mut self, batch: &[usize]) -> Result<f64> {
        let (loss, grads) = self.batch_gradients(batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { op: "training loss" });
        }
        self.optimizer.step(&mut self.store, &grads)?;
        let t = &self.model.config.train;
        self.store.round_to(t.precision);
        ema_update(&mut self.shadow, &self.store, t.ema_decay)?;
        self.shadow.round_to(t.precision);
        self.steps += 1;
        Ok(loss)
    }

    fn step_budget_left(&self) -> bool {
        self.model.config.train.max_steps.is_none_or(|m| self.steps < m)
    }

    /// One pass over the data in the seeded order for `epoch`; returns the
    /// mean batch loss.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<f64> {
        let order = self.batches.epoch(self.model.config.train.seed, epoch);
        let mut total = 0.0;
        let mut n = 0;
        for batch in &order {
            if !self.step_budget_left() {
                break;
            }
            total += self.step(batch)?;
            n += 1;
        }
        Ok(if n == 0 { f64::NAN } else { total / n as f64 })
    }
}

/// One row of `train_log.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_em: Option<f64>,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub steps: usize,
    pub dropped: usize,
    pub out: PathBuf,
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out.clone().ok_or_else(|| Error::Config("--out is required".into()))?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

fn load_required(path: &Option<PathBuf>, what: &str) -> Result<SquadDataset> {
    let p = path.as_ref().ok_or_else(|| Error::Config(format!("{what} is required")))?;
    load_squad(p)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains from `cfg` and writes the run directory. Data and configuration
/// problems are reported before the first step.
pub fn train(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let train_data = load_required(&cfg.data_train, "--data-train")?;
    let dev = cfg.data_dev.as_ref().map(|p| load_squad(p)).transpose()?;
    let out = out_dir(cfg)?;
    let vocabs = build_vocabularies(cfg, &train_data);
    let model = Model::new(cfg.clone(), vocabs)?;
    let (items, dropped) = training_items(&model, &train_data);
    let mut trainer = Trainer::new(model, items)?;
    write_text(&out.join("config.json"), &cfg.to_json())?;
    trainer.model.vocabs.save(&out)?;
    info!(
        "training {} on {} items ({} dropped), seed {}",
        cfg.arch,
        trainer.items.len(),
        dropped,
        cfg.train.seed
    );
    let mut log = Vec::new();
    for epoch in 1..=cfg.train.epochs {
        if !trainer.step_budget_left() {
            break;
        }
        let train_loss = trainer.run_epoch(epoch)?;
        let p = cfg.train.precision;
        save_checkpoint(&trainer.store, p, &out.join(format!("checkpoint-epoch{epoch}.bin")))?;
        save_checkpoint(&trainer.shadow, p, &out.join("ema.bin"))?;
        let (dev_em, dev_f1) = match &dev {
            Some(d) => {
                let (_, r) = trainer.model.evaluate(&trainer.shadow, d)?;
                (Some(r.exact), Some(r.f1))
            }
            None => (None, None),
        };
        info!("epoch {epoch}: loss {train_loss:.4} dev_em {dev_em:?} dev_f1 {dev_f1:?}");
        log.push(EpochLog {
            epoch,
            train_loss,
            dev_em,
            dev_f1,
        });
        write_csv(&out.join("train_log.csv"), &log)?;
    }
    Ok(TrainReport {
        log,
        steps: trainer.steps,
        dropped,
        out,
    })
}

/// A model rebuilt from a run directory plus the weights of one checkpoint.
pub struct LoadedRun {
    pub model: Model,
    pub store: ParameterStore,
}

/// Loads `checkpoint` with the `config.json` and vocabularies stored next
/// to it. The checkpoint must match the configured layout.
pub fn load_run(checkpoint: &Path) -> Result<LoadedRun> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let cfg_path = dir.join("config.json");
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let config = RunConfig::from_json(&text)?;
    let vocabs = Vocabularies::load(dir)?;
    let model = Model::new(config, vocabs)?;
    let (store, _) = load_checkpoint(checkpoint)?;
    store.check_compatible(&model.template()?)?;
    model.template()?.check_compatible(&store)?;
    Ok(LoadedRun { model, store })
}

/// Writes `predictions.json` and `metrics.json` into `out`.
pub fn evaluate(checkpoint: &Path, data_path: &Path, arch: Option<Architecture>, out: &Path) -> Result<MetricReport> {
    let run = load_run(checkpoint)?;
    if let Some(a) = arch.filter(|a| *a != run.model.config.arch) {
        return Err(Error::Config(format!(
            "checkpoint holds a {} model, not {a}",
            run.model.config.arch
        )));
    }
    let data = load_squad(data_path)?;
    let (preds, report) = run.model.evaluate(&run.store, &data)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    preds.save(&out.join("predictions.json"))?;
    write_text(
        &out.join("metrics.json"),
        &serde_json::to_string_pretty(&report.to_json())?,
    )?;
    Ok(report)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ParagraphInput {
    Text(String),
    Object { context: String },
}

#[derive(Deserialize)]
struct DocumentInput {
    #[serde(default)]
    title: String,
    paragraphs: Vec<ParagraphInput>,
}

/// Parses `{"title": ..., "paragraphs": [...]}` where each paragraph is a
/// string or an object with a `context` field.
pub fn parse_document(bytes: &[u8]) -> Result<SquadDocument> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let doc: DocumentInput = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        msg: e.inner().to_string(),
    })?;
    if doc.paragraphs.is_empty() {
        return Err(Error::Empty("document paragraphs"));
    }
    Ok(SquadDocument {
        title: doc.title,
        paragraphs: doc
            .paragraphs
            .into_iter()
            .map(|p| Paragraph {
                context: match p {
                    ParagraphInput::Text(t) | ParagraphInput::Object { context: t } => t,
                },
                questions: Vec::new(),
            })
            .collect(),
    })
}

pub fn load_document(path: &Path) -> Result<SquadDocument> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_document(&bytes)
}

/// Answers one free-text question about a document.
pub fn predict(run: &LoadedRun, doc: &SquadDocument, question: &str) -> Result<ModelAnswer> {
    let q = Question {
        id: "query".into(),
        text: question.to_string(),
        answers: Vec::new(),
        is_impossible: false,
        plausible_answers: None,
    };
    run.model.answer(&run.store, doc, &q)
}

/// One row of `ablation.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub epoch: usize,
    pub variant: String,
    pub dev_em: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub reinit_diff: Vec<DiffEntry>,
    pub control_diff: Vec<DiffEntry>,
}

fn diff_text(diff: &[DiffEntry]) -> String {
    diff.iter().map(|d| format!("{}\t{:.6e}\n", d.name, d.l2_delta)).collect()
}

/// Trains the control and re-initialized variants with the same seed and
/// data order, scoring both on the dev set after every epoch. Writes
/// `ablation.csv`, `reinit_diff.txt` and `control_diff.txt`.
pub fn ablate_reinit(cfg: &RunConfig) -> Result<AblationReport> {
    if cfg.arch != Architecture::Albert {
        return Err(Error::Config(format!("ablate-reinit needs albert, not {}", cfg.arch)));
    }
    cfg.validate()?;
    let train_data = load_required(&cfg.data_train, "--data-train")?;
    let dev = match &cfg.data_dev {
        Some(p) => load_squad(p)?,
        None => train_data.clone(),
    };
    let out = out_dir(cfg)?;
    let vocabs = build_vocabularies(cfg, &train_data);
    write_text(&out.join("config.json"), &cfg.to_json())?;
    vocabs.save(&out)?;

    let variant = |reinit: bool| -> Result<(Vec<AblationRow>, Vec<DiffEntry>)> {
        let mut c = cfg.clone();
        c.train.reinit_last_linear = reinit;
        let model = Model::new(c, vocabs.clone())?;
        let base = model.template()?;
        let store = model.init_store()?;
        let diff = store.diff(&base)?;
        let (items, _) = training_items(&model, &train_data);
        if items.is_empty() {
            return Err(Error::Empty("training examples"));
        }
        let mut trainer = Trainer::with_store(model, items, store)?;
        let name = if reinit { "reinit" } else { "control" };
        let mut rows = Vec::new();
        for epoch in 1..=cfg.train.epochs {
            trainer.run_epoch(epoch)?;
            let (_, r) = trainer.model.evaluate(&trainer.shadow, &dev)?;
            rows.push(AblationRow {
                epoch,
                variant: name.into(),
                dev_em: r.exact,
                dev_f1: r.f1,
            });
        }
        Ok((rows, diff))
    };
    let (control, reinit) = rayon::join(|| variant(false), || variant(true));
    let (mut rows, control_diff) = control?;
    let (reinit_rows, reinit_diff) = reinit?;
    rows.extend(reinit_rows);
    rows.sort_by_key(|r| (r.epoch, r.variant != "control"));
    write_csv(&out.join("ablation.csv"), &rows)?;
    write_text(&out.join("reinit_diff.txt"), &diff_text(&reinit_diff))?;
    write_text(&out.join("control_diff.txt"), &diff_text(&control_diff))?;
    Ok(AblationReport {
        rows,
        reinit_diff,
        control_diff,
    })
}

/// One row of the paragraph-scaling CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_paragraphs: usize,
    pub mode: String,
    pub f1: f64,
}

/// The question's own paragraph followed by up to `n − 1` other
/// paragraphs of its document, in document order.
pub fn restrict_document(doc: &SquadDocument, gold: usize, n: usize) -> SquadDocument {
    let others = (0..doc.paragraphs.len()).filter(|&p| p != gold).take(n.saturating_sub(1));
    let mut keep: Vec<usize> = std::iter::once(gold).chain(others).collect();
    keep.sort_unstable();
    SquadDocument {
        title: doc.title.clone(),
        paragraphs: keep.iter().map(|&p| doc.paragraphs[p].clone()).collect(),
    }
}

/// Mean F1 of `model` when each question is read against its own
/// paragraph plus distractors, for every count in `counts`.
pub fn paragraph_scaling(
    model: &Model,
    store: &ParameterStore,
    data: &SquadDataset,
    counts: &[usize],
    mode: ConfidenceMode,
) -> Result<Vec<ScalingRow>> {
    let mut m = model.clone();
    m.config.train.confidence_mode = mode;
    let mut rows = Vec::new();
    for &n in counts {
        let jobs: Vec<(SquadDocument, &Question)> = data
            .documents
            .iter()
            .flat_map(|d| d.questions().map(move |(p, q)| (restrict_document(d, p, n), q)))
            .collect();
        if jobs.is_empty() {
            return Err(Error::Empty("scaling questions"));
        }
        let f1s: Vec<f64> = with_eval_pool(|| {
            jobs.par_iter()
                .map(|(doc, q)| {
                    let a = m.answer(store, doc, q)?;
                    let golds: Vec<&str> = if q.is_impossible {
                        Vec::new()
                    } else {
                        q.answers.iter().map(|a| a.text.as_str()).collect()
                    };
                    Ok(em_f1(&a.text, &golds).1)
                })
                .collect::<Result<Vec<_>>>()
        })??;
        rows.push(ScalingRow {
            n_paragraphs: n,
            mode: mode.to_string(),
            f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
        });
    }
    Ok(rows)
}

pub fn write_scaling_csv(path: &Path, rows: &[ScalingRow]) -> Result<()> {
    write_csv(path, rows)
}
