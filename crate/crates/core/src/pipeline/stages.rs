//! Stage execution over one output directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{ablation_course, RunConfig};
use super::manifest::{checksum_artifacts, unix_now, DirLock, RunManifest, StageRecord};
use crate::corpus::{SubgraphCorpus, SubgraphSource};
use crate::curriculum::train::{run_finetune, run_pretraining, score_pair, TrainContext, TrainState};
use crate::curriculum::CourseConfig;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::eval::{build_candidates, evaluate, pretty_table, CutoffMetrics, Holdout, MetricsReport, CSV_HEADER};
use crate::hin::{split_leave_one_out, Hin, InteractionSplit, Schema};
use crate::metapath::MetaPath;
use crate::model::{Checkpoint, CheckpointMeta, ModelDims, ModelParams};
use crate::priority::{generate_walks, train_skipgram, NodeVectors, SkipGramConfig};
use crate::rng;
use crate::sampler::PathSampler;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Embed,
    BuildSubgraphs,
    Pretrain,
    Finetune,
    Evaluate,
    Ablate,
}

/// Stages run by `all`, in order.
pub const MAIN_STAGES: [Stage; 6] = [
    Stage::Ingest,
    Stage::Embed,
    Stage::BuildSubgraphs,
    Stage::Pretrain,
    Stage::Finetune,
    Stage::Evaluate,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Embed => "embed",
            Stage::BuildSubgraphs => "build-subgraphs",
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Evaluate => "evaluate",
            Stage::Ablate => "ablate",
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Embed => &[Stage::Ingest],
            Stage::BuildSubgraphs => &[Stage::Embed],
            Stage::Pretrain => &[Stage::BuildSubgraphs],
            Stage::Finetune => &[Stage::Pretrain],
            Stage::Evaluate => &[Stage::Finetune],
            Stage::Ablate => &[Stage::BuildSubgraphs],
        }
    }

    /// Config keys the stage reads (prefixes end in `.`).
    fn selectors(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &["data.", "seed"],
            Stage::Embed => &["embed.", "metapaths"],
            Stage::BuildSubgraphs => &["sampler.", "metapaths"],
            Stage::Pretrain => &[
                "model.",
                "train.w_mnp",
                "train.w_mep",
                "train.w_mtp",
                "train.w_scl",
                "train.mask_node_prob",
                "train.mask_edge_prob",
                "train.pairwise_mode",
                "train.elementary_epochs",
                "train.advanced_epochs",
                "train.tau",
                "train.aug_ratio",
                "train.scl_negatives",
                "train.batch_size",
                "train.lr_pretrain",
                "train.pretrain_fraction",
                "train.mode",
            ],
            Stage::Finetune => &["train."],
            Stage::Evaluate => &["eval."],
            Stage::Ablate => &["model.", "train.", "eval.", "ablate."],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Stage> {
        MAIN_STAGES
            .iter()
            .chain(&[Stage::Ablate])
            .find(|st| st.name() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    /// Completed earlier with the same inputs; nothing was touched.
    UpToDate,
}

/// Metrics of one trained model as written by `evaluate` and `ablate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: String,
    pub key: String,
    pub report: MetricsReport,
    pub best_valid_hr10: Option<f64>,
}

/// Loaded inputs shared by the training and evaluation stages.
pub struct World {
    pub schema: Schema,
    pub hin: Hin,
    /// `hin` with only the training interactions.
    pub train_hin: Hin,
    pub split: InteractionSplit,
    pub metapaths: Vec<MetaPath>,
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub manifest: RunManifest,
    _lock: DirLock,
}

fn write_jsonl_fresh(path: &Path) -> Result<()> {
    std::fs::write(path, b"").map_err(|e| Error::io(path, e))
}

impl Pipeline {
    /// Validate the config, lock the output directory and load its manifest.
    pub fn open(cfg: RunConfig) -> Result<Pipeline> {
        cfg.validate()?;
        let out = cfg
            .out
            .clone()
            .ok_or_else(|| Error::Config("no output directory (set `out` or pass --out)".into()))?;
        let lock = DirLock::acquire(&out)?;
        let mut manifest = RunManifest::load_or_new(&out)?;
        manifest.config_hash = cfg.hash();
        let effective = out.join("config.json");
        std::fs::write(&effective, cfg.to_json()).map_err(|e| Error::io(&effective, e))?;
        Ok(Pipeline {
            cfg,
            out,
            manifest,
            _lock: lock,
        })
    }

    /// Content key of a stage: its config keys plus its upstream keys.
    pub fn stage_key(&self, stage: Stage) -> String {
        let mut s = self.cfg.hash_of(stage.selectors());
        for d in stage.deps() {
            s.push_str(&self.stage_key(*d));
        }
        sha256_hex(s.as_bytes())[..16].to_string()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn require(&self, stage: Stage) -> Result<()> {
        for &d in stage.deps() {
            if !self.manifest.stages.contains_key(d.name()) {
                return Err(Error::Dependency(format!(
                    "stage `{stage}` needs `{d}`, which has not been run"
                )));
            }
            if !self.manifest.is_current(&self.out, d.name(), &self.stage_key(d)) {
                return Err(Error::Dependency(format!(
                    "stage `{stage}` needs `{d}`, whose output is stale for this config; rerun `{d}`"
                )));
            }
        }
        Ok(())
    }

    /// Run one stage unless it is already complete for this config.
    pub fn run_stage(&mut self, stage: Stage) -> Result<StageOutcome> {
        let key = self.stage_key(stage);
        if self.manifest.is_current(&self.out, stage.name(), &key) {
            info!("stage {stage}: up to date, nothing to do");
            return Ok(StageOutcome::UpToDate);
        }
        self.require(stage)?;
        info!("stage {stage}: running");
        let started = unix_now();
        let files = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Embed => self.embed()?,
            Stage::BuildSubgraphs => self.build_subgraphs()?,
            Stage::Pretrain => self.pretrain()?,
            Stage::Finetune => self.finetune()?,
            Stage::Evaluate => self.evaluate_stage()?,
            Stage::Ablate => self.ablate()?,
        };
        let artifacts = checksum_artifacts(&self.out, &files)?;
        self.manifest.stages.insert(
            stage.name().to_string(),
            StageRecord {
                key,
                started,
                finished: unix_now(),
                artifacts,
            },
        );
        self.manifest.save(&self.out)?;
        info!("stage {stage}: done");
        Ok(StageOutcome::Ran)
    }

    pub fn run_all(&mut self) -> Result<Vec<(Stage, StageOutcome)>> {
        MAIN_STAGES.iter().map(|&s| Ok((s, self.run_stage(s)?))).collect()
    }

    // ---- artifact loading ----

    pub fn load_world(&self) -> Result<World> {
        let dir = self.path("hin");
        let schema = Schema::from_json_file(&dir.join("schema.json"))?;
        let hin = Hin::load(&schema, &schema.relation_files(&dir)?)?;
        let split = InteractionSplit::load(&self.path("split.json"))?;
        let train_hin = hin.with_interactions(split.train_pairs());
        let metapaths = self.cfg.parse_metapaths(&schema)?;
        Ok(World {
            schema,
            hin,
            train_hin,
            split,
            metapaths,
        })
    }

    pub fn model_dims(&self, w: &World) -> ModelDims {
        let m = &self.cfg.model;
        ModelDims {
            d: m.d,
            heads: m.heads,
            layers: m.layers,
            d_ff: m.d_ff,
            num_nodes: w.hin.num_nodes(),
            num_types: w.hin.num_types(),
            num_slots: w.metapaths.iter().map(|p| p.types.len()).max().unwrap_or(2),
            max_positions: m.max_positions,
            num_metapaths: w.metapaths.len(),
            layer_norm: true,
        }
    }

    // ---- stages ----

    fn ingest(&self) -> Result<Vec<(String, PathBuf)>> {
        let schema = self.cfg.schema()?;
        let base = self.cfg.data.schema.parent().unwrap_or(Path::new("."));
        let hin = Hin::load(&schema, &schema.relation_files(base)?)?;
        for s in hin.stats() {
            info!("{s:?}");
        }
        let dir = self.path("hin");
        let files = hin.write_relations(&dir)?;
        let mut local = schema.clone();
        for e in &mut local.edge_types {
            e.file = Some(format!("{}.tsv", e.name));
        }
        local.metapaths = self.cfg.metapath_names(&schema);
        let schema_path = dir.join("schema.json");
        std::fs::write(&schema_path, serde_json::to_string_pretty(&local)? + "\n")
            .map_err(|e| Error::io(&schema_path, e))?;
        let split = split_leave_one_out(&hin, self.cfg.seed);
        let split_path = self.path("split.json");
        split.save(&split_path)?;
        info!(
            "{} users ({} evaluable), {} items, {} training interactions",
            hin.num_users(),
            split.evaluable_users().count(),
            hin.num_items(),
            split.num_train()
        );
        let mut out = vec![("schema".to_string(), schema_path), ("split".to_string(), split_path)];
        out.extend(files.into_iter().map(|(n, p)| (format!("relation:{n}"), p)));
        Ok(out)
    }

    fn embed(&self) -> Result<Vec<(String, PathBuf)>> {
        let w = self.load_world()?;
        let e = &self.cfg.embed;
        let seed = rng::mix(self.cfg.seed, &[rng::tag::EMBED]);
        let walks = generate_walks(&w.train_hin, &w.metapaths, e.walks_per_node, e.walk_length, seed)?;
        info!("{} walks", walks.len());
        let (vectors, losses) = train_skipgram(
            &w.train_hin,
            &walks,
            &SkipGramConfig {
                dim: e.dim,
                window: e.window,
                negatives: e.negatives,
                epochs: e.epochs,
                learning_rate: e.learning_rate as f32,
                seed,
            },
        );
        info!("skip-gram loss per epoch: {losses:?}");
        if !vectors.all_finite() {
            return Err(Error::NumericFault("node vectors contain non-finite values".into()));
        }
        let path = self.path("vectors.bin");
        vectors.save(&path)?;
        Ok(vec![("vectors".into(), path)])
    }

    fn build_subgraphs(&self) -> Result<Vec<(String, PathBuf)>> {
        let w = self.load_world()?;
        let vectors = NodeVectors::load(&self.path("vectors.bin"))?;
        let sampler = PathSampler::new(&w.train_hin, &vectors, w.metapaths.clone(), self.cfg.sampler.clone())?;
        let pairs: Vec<(u32, u32)> = w.split.train_pairs().collect();
        let corpus = SubgraphCorpus::build(&sampler, &pairs, rng::mix(self.cfg.seed, &[rng::tag::SAMPLE]));
        let empty = corpus.entries().filter(|e| e.paths.is_empty()).count();
        let mean_len = corpus.entries().map(|e| e.sequence.len()).sum::<usize>() as f64 / corpus.len().max(1) as f64;
        let max_len = corpus.entries().map(|e| e.sequence.len()).max().unwrap_or(0);
        info!("{} subgraphs, {empty} without paths, sequence length mean {mean_len:.1} max {max_len}", corpus.len());
        let path = self.path("corpus.bin");
        corpus.save(&path)?;
        Ok(vec![("corpus".into(), path)])
    }

    /// Load the world, vectors and corpus, then run `f` with a subgraph source.
    pub fn with_source<T>(&self, f: impl FnOnce(&World, &SubgraphSource<'_>) -> Result<T>) -> Result<T> {
        let w = self.load_world()?;
        let vectors = NodeVectors::load(&self.path("vectors.bin"))?;
        let corpus = SubgraphCorpus::load(&self.path("corpus.bin"))?;
        let sampler = PathSampler::new(&w.train_hin, &vectors, w.metapaths.clone(), self.cfg.sampler.clone())?;
        let source = SubgraphSource::new(&sampler, &corpus);
        f(&w, &source)
    }

    fn save_checkpoint(&self, path: &Path, p: &ModelParams<f32>, st: &TrainState, course: &CourseConfig) -> Result<()> {
        Checkpoint {
            meta: CheckpointMeta {
                dims: p.dims.clone(),
                config_hash: self.cfg.hash(),
                course: st.current().map_or("init", |c| c.name()).to_string(),
                epoch: st.epoch,
                rng_seed: course.seed,
                rng_counter: st.history.len() as u64,
                adam: None,
            },
            params: p.clone(),
            adam: st.adam.clone(),
        }
        .save(path)
    }

    fn pretrain(&self) -> Result<Vec<(String, PathBuf)>> {
        let ckdir = self.path("checkpoints");
        std::fs::create_dir_all(&ckdir).map_err(|e| Error::io(&ckdir, e))?;
        let log = self.path("pretrain_log.jsonl");
        write_jsonl_fresh(&log)?;
        let path = ckdir.join("pretrained.ckpt");
        self.with_source(|w, source| {
            let ctx = TrainContext {
                hin: &w.train_hin,
                split: &w.split,
                source,
                checkpoint_dir: Some(ckdir.clone()),
                log_path: Some(log.clone()),
                config_hash: self.cfg.hash(),
            };
            let mut p = ModelParams::init(self.model_dims(w), rng::mix(self.cfg.seed, &[rng::tag::INIT]))?;
            let mut st = TrainState::new();
            run_pretraining(&ctx, &self.cfg.train, &mut p, &mut st)?;
            self.save_checkpoint(&path, &p, &st, &self.cfg.train)
        })?;
        Ok(vec![("checkpoint".into(), path), ("log".into(), log)])
    }

    fn finetune(&self) -> Result<Vec<(String, PathBuf)>> {
        let ckdir = self.path("checkpoints");
        let log = self.path("finetune_log.jsonl");
        write_jsonl_fresh(&log)?;
        let path = ckdir.join("finetuned.ckpt");
        self.with_source(|w, source| {
            let ctx = TrainContext {
                hin: &w.train_hin,
                split: &w.split,
                source,
                checkpoint_dir: Some(ckdir.clone()),
                log_path: Some(log.clone()),
                config_hash: self.cfg.hash(),
            };
            let mut p = Checkpoint::load_expecting(&ckdir.join("pretrained.ckpt"), &self.model_dims(w))?.params;
            let mut st = TrainState::new();
            run_finetune(&ctx, &self.cfg.train, &mut p, &mut st)?;
            self.save_checkpoint(&path, &p, &st, &self.cfg.train)
        })?;
        Ok(vec![("checkpoint".into(), path), ("log".into(), log)])
    }

    /// Test-set metrics of `p`.
    pub fn evaluate_params(&self, w: &World, source: &SubgraphSource<'_>, p: &ModelParams<f32>) -> Result<MetricsReport> {
        let lists = build_candidates(
            w.hin.num_items(),
            &w.split,
            Holdout::Test,
            self.cfg.eval.n_neg,
            rng::mix(self.cfg.seed, &[rng::tag::EVAL]),
        );
        let (report, _) = evaluate(&lists, &[10, 20], &self.cfg.hash(), |u, i| score_pair(p, &w.train_hin, source, u, i))?;
        Ok(report)
    }

    fn evaluate_stage(&self) -> Result<Vec<(String, PathBuf)>> {
        let ck = self.path("checkpoints/finetuned.ckpt");
        let metrics = self.with_source(|w, source| {
            let c = Checkpoint::load_expecting(&ck, &self.model_dims(w))?;
            self.evaluate_params(w, source, &c.params)
        })?;
        let best = last_valid(&self.path("finetune_log.jsonl"));
        let rm = RunMetrics {
            run: "chest".into(),
            key: self.stage_key(Stage::Evaluate),
            report: metrics,
            best_valid_hr10: best,
        };
        info!("\n{}", pretty_table(&[(rm.run.clone(), &rm.report)]));
        let path = self.path("metrics.json");
        std::fs::write(&path, serde_json::to_string_pretty(&rm)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(vec![("metrics".into(), path)])
    }

    /// Train and evaluate one ablation variant with one training seed.
    /// Finished runs are kept on disk and reused when their key matches.
    pub fn ablation_run(&self, variant: &str, seed: u64) -> Result<RunMetrics> {
        let course = ablation_course(&self.cfg.train, variant, seed)?;
        let key = sha256_hex(
            format!("{}{}{}", self.stage_key(Stage::Ablate), variant, serde_json::to_string(&course)?).as_bytes(),
        )[..16]
            .to_string();
        let dir = self.path(&format!("ablation/{variant}/seed-{seed}"));
        let result = dir.join("metrics.json");
        if let Ok(text) = std::fs::read_to_string(&result) {
            if let Ok(prev) = serde_json::from_str::<RunMetrics>(&text) {
                if prev.key == key {
                    info!("ablation {variant} seed {seed}: reusing finished run");
                    return Ok(prev);
                }
            }
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let log = dir.join("train_log.jsonl");
        write_jsonl_fresh(&log)?;
        info!("ablation {variant} seed {seed}: training");
        let (report, best) = self.with_source(|w, source| {
            let ctx = TrainContext {
                hin: &w.train_hin,
                split: &w.split,
                source,
                checkpoint_dir: None,
                log_path: Some(log.clone()),
                config_hash: self.cfg.hash(),
            };
            let mut p = ModelParams::init(self.model_dims(w), rng::mix(seed, &[rng::tag::INIT]))?;
            let mut st = TrainState::new();
            run_pretraining(&ctx, &course, &mut p, &mut st)?;
            run_finetune(&ctx, &course, &mut p, &mut st)?;
            self.save_checkpoint(&dir.join("model.ckpt"), &p, &st, &course)?;
            Ok((self.evaluate_params(w, source, &p)?, st.best_valid_hr10))
        })?;
        let rm = RunMetrics {
            run: format!("{variant}/seed-{seed}"),
            key,
            report,
            best_valid_hr10: best,
        };
        std::fs::write(&result, serde_json::to_string_pretty(&rm)? + "\n").map_err(|e| Error::io(&result, e))?;
        info!("ablation {variant} seed {seed}: HR@20 {:.4} NDCG@20 {:.4}", rm.report.hr(20), rm.report.ndcg(20));
        Ok(rm)
    }

    fn ablate(&self) -> Result<Vec<(String, PathBuf)>> {
        let seeds = self.cfg.ablation_seeds();
        let mut runs = Vec::new();
        let mut summary = Vec::new();
        for variant in &self.cfg.ablate.variants {
            let per_seed: Vec<RunMetrics> = seeds
                .iter()
                .map(|&s| self.ablation_run(variant, s))
                .collect::<Result<_>>()?;
            summary.push(RunMetrics {
                run: variant.clone(),
                key: self.stage_key(Stage::Ablate),
                report: mean_report(&per_seed.iter().map(|r| &r.report).collect::<Vec<_>>(), &self.cfg.hash()),
                best_valid_hr10: None,
            });
            runs.extend(per_seed);
        }
        let rows: Vec<(String, &MetricsReport)> = summary.iter().map(|r| (r.run.clone(), &r.report)).collect();
        info!("ablation (mean over {} seed(s))\n{}", seeds.len(), pretty_table(&rows));
        let path = self.path("ablation.json");
        std::fs::write(&path, serde_json::to_string_pretty(&AblationSummary { seeds, summary, runs })? + "\n")
            .map_err(|e| Error::io(&path, e))?;
        Ok(vec![("ablation".into(), path)])
    }

    /// Write `metrics.csv` (main run, then ablation variants) and return the
    /// CSV text and a table for display.
    pub fn export_metrics(&self) -> Result<(String, String)> {
        let mut reports: Vec<RunMetrics> = Vec::new();
        if self.manifest.is_current(&self.out, Stage::Evaluate.name(), &self.stage_key(Stage::Evaluate)) {
            let text = std::fs::read_to_string(self.path("metrics.json")).map_err(|e| Error::io(self.path("metrics.json"), e))?;
            reports.push(serde_json::from_str(&text)?);
        }
        if self.manifest.is_current(&self.out, Stage::Ablate.name(), &self.stage_key(Stage::Ablate)) {
            let text = std::fs::read_to_string(self.path("ablation.json")).map_err(|e| Error::io(self.path("ablation.json"), e))?;
            let a: AblationSummary = serde_json::from_str(&text)?;
            reports.extend(a.summary);
        }
        if reports.is_empty() {
            return Err(Error::Dependency("no completed `evaluate` or `ablate` stage to export".into()));
        }
        let mut csv = String::from(CSV_HEADER);
        csv.push('\n');
        for r in &reports {
            csv.push_str(&r.report.csv_row(&self.cfg.data.name, &r.run));
            csv.push('\n');
        }
        let path = self.path("metrics.csv");
        std::fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
        let rows: Vec<(String, &MetricsReport)> = reports.iter().map(|r| (r.run.clone(), &r.report)).collect();
        Ok((csv, pretty_table(&rows)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub seeds: Vec<u64>,
    /// One row per variant, averaged over seeds.
    pub summary: Vec<RunMetrics>,
    pub runs: Vec<RunMetrics>,
}

/// Per-cutoff mean of several reports.
pub fn mean_report(reports: &[&MetricsReport], config_hash: &str) -> MetricsReport {
    let n = reports.len().max(1) as f64;
    let first = reports.first().expect("at least one report");
    MetricsReport {
        cutoffs: first
            .cutoffs
            .iter()
            .map(|c| CutoffMetrics {
                k: c.k,
                hr: reports.iter().map(|r| r.hr(c.k)).sum::<f64>() / n,
                ndcg: reports.iter().map(|r| r.ndcg(c.k)).sum::<f64>() / n,
            })
            .collect(),
        users: first.users,
        capped_users: first.capped_users,
        config_hash: config_hash.to_string(),
    }
}

fn last_valid(log: &Path) -> Option<f64> {
    let text = std::fs::read_to_string(log).ok()?;
    text.lines()
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .filter_map(|v| v.get("valid_hr10").and_then(|x| x.as_f64()))
        .fold(None, |best: Option<f64>, x| Some(best.map_or(x, |b| b.max(x))))
}
