//! The elementary -> advanced -> fine-tune schedule.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment_subgraph, AugmentedPair, STRATEGIES};
use super::loss::PairwiseMode;
use super::mask::{mask_edges, mask_nodes};
use crate::corpus::SubgraphSource;
use crate::error::{Error, Result};
use crate::eval::{build_candidates, evaluate, CandidateList, Holdout};
use crate::hin::{Hin, InteractionSplit};
use crate::model::{
    loss_parts_and_gradients, score_input, AdamState, Checkpoint, CheckpointMeta, EncoderInput, Example,
    LossParts, ModelParams, Term,
};
use crate::rng;
use crate::subgraph::to_multislot;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumMode {
    /// Elementary, then advanced, then fine-tuning.
    #[default]
    Standard,
    /// All pre-training losses in one joint course.
    MultiTask,
    /// Advanced before elementary.
    ReverseCourses,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Course {
    Elementary,
    Advanced,
    MultiTask,
    Finetune,
}

impl Course {
    pub fn name(self) -> &'static str {
        match self {
            Course::Elementary => "elementary",
            Course::Advanced => "advanced",
            Course::MultiTask => "multi_task",
            Course::Finetune => "finetune",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CourseConfig {
    pub w_mnp: f64,
    pub w_mep: f64,
    pub w_mtp: f64,
    pub w_scl: f64,
    pub mask_node_prob: f64,
    pub mask_edge_prob: f64,
    pub pairwise_mode: PairwiseMode,
    pub elementary_epochs: usize,
    pub advanced_epochs: usize,
    /// Upper bound; fine-tuning stops early on validation HR@10.
    pub finetune_epochs: usize,
    pub patience: usize,
    pub tau: f64,
    pub aug_ratio: f64,
    pub scl_negatives: usize,
    pub batch_size: usize,
    pub lr_pretrain: f64,
    pub lr_finetune: f64,
    /// Fraction of training pairs visited per pre-training epoch.
    pub pretrain_fraction: f64,
    /// Negatives per user in the validation lists used for early stopping.
    pub valid_negatives: usize,
    pub mode: CurriculumMode,
    pub seed: u64,
}

impl Default for CourseConfig {
    fn default() -> Self {
        CourseConfig {
            w_mnp: 0.4,
            w_mep: 0.2,
            w_mtp: 0.4,
            w_scl: 1.0,
            mask_node_prob: 0.4,
            mask_edge_prob: 0.2,
            pairwise_mode: PairwiseMode::Pairwise,
            elementary_epochs: 10,
            advanced_epochs: 10,
            finetune_epochs: 100,
            patience: 5,
            tau: 1.0,
            aug_ratio: 0.2,
            scl_negatives: 4,
            batch_size: 256,
            lr_pretrain: 1e-3,
            lr_finetune: 1e-4,
            pretrain_fraction: 1.0,
            valid_negatives: 1000,
            mode: CurriculumMode::Standard,
            seed: 2023,
        }
    }
}

impl CourseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, w) in [("w_mnp", self.w_mnp), ("w_mep", self.w_mep), ("w_mtp", self.w_mtp), ("w_scl", self.w_scl)] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("loss weight {name} = {w} must be finite and >= 0"));
            }
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau = {} must be > 0", self.tau));
        }
        for (name, r) in [
            ("mask_node_prob", self.mask_node_prob),
            ("mask_edge_prob", self.mask_edge_prob),
            ("aug_ratio", self.aug_ratio),
        ] {
            if !(r > 0.0 && r < 1.0) {
                return bad(format!("{name} = {r} must lie in (0, 1)"));
            }
        }
        if !(self.pretrain_fraction > 0.0 && self.pretrain_fraction <= 1.0) {
            return bad(format!("pretrain_fraction = {} must lie in (0, 1]", self.pretrain_fraction));
        }
        if self.batch_size == 0 || self.scl_negatives == 0 {
            return bad("batch_size and scl_negatives must be positive".into());
        }
        if !(self.lr_pretrain >= 0.0 && self.lr_finetune >= 0.0) {
            return bad("learning rates must be >= 0".into());
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("serializable");
        crate::digest::sha256_hex(&json)[..16].to_string()
    }

    /// Pre-training courses in run order.
    pub fn pretrain_courses(&self) -> Vec<Course> {
        let elem = self.elementary_epochs > 0 && self.w_mnp + self.w_mep + self.w_mtp > 0.0;
        let adv = self.advanced_epochs > 0 && self.w_scl > 0.0;
        match self.mode {
            CurriculumMode::Standard => [(elem, Course::Elementary), (adv, Course::Advanced)]
                .into_iter()
                .filter_map(|(on, c)| on.then_some(c))
                .collect(),
            CurriculumMode::ReverseCourses => [(adv, Course::Advanced), (elem, Course::Elementary)]
                .into_iter()
                .filter_map(|(on, c)| on.then_some(c))
                .collect(),
            CurriculumMode::MultiTask => {
                if elem || adv {
                    vec![Course::MultiTask]
                } else {
                    vec![]
                }
            }
        }
    }

    fn epochs(&self, course: Course) -> usize {
        match course {
            Course::Elementary => self.elementary_epochs,
            Course::Advanced => self.advanced_epochs,
            // same number of optimizer steps as the two separate courses
            Course::MultiTask => self.elementary_epochs + self.advanced_epochs,
            Course::Finetune => self.finetune_epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub course: Course,
    pub epoch: usize,
    pub loss: f64,
    pub parts: LossParts,
    pub examples: usize,
    pub skipped: usize,
    pub wall_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_hr10: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Courses in the order they were entered.
    pub courses: Vec<Course>,
    pub epoch: usize,
    pub adam: Option<AdamState<f32>>,
    pub history: Vec<EpochLog>,
    pub best_valid_hr10: Option<f64>,
}

impl TrainState {
    pub fn new() -> Self {
        TrainState {
            courses: Vec::new(),
            epoch: 0,
            adam: None,
            history: Vec::new(),
            best_valid_hr10: None,
        }
    }

    pub fn current(&self) -> Option<Course> {
        self.courses.last().copied()
    }
}

impl Default for TrainState {
    fn default() -> Self {
        Self::new()
    }
}

/// Everything the trainer reads besides the parameters.
pub struct TrainContext<'a> {
    /// The training-only network (held-out interactions removed).
    pub hin: &'a Hin,
    pub split: &'a InteractionSplit,
    pub source: &'a SubgraphSource<'a>,
    pub checkpoint_dir: Option<PathBuf>,
    /// JSON-lines training log.
    pub log_path: Option<PathBuf>,
    pub config_hash: String,
}

/// Score one pair with the current parameters.
pub fn score_pair(p: &ModelParams<f32>, hin: &Hin, source: &SubgraphSource<'_>, user: u32, item: u32) -> Result<f64> {
    let entry = source.entry(user, item);
    score_input(&EncoderInput::from_sequence(&entry.sequence, hin), p)
}

struct Trainer<'a, 'b> {
    ctx: &'b TrainContext<'a>,
    cfg: &'b CourseConfig,
    num_metapaths: usize,
    max_positions: usize,
}

impl Trainer<'_, '_> {
    fn fits(&self, ex: &Example) -> bool {
        ex.inputs.iter().all(|x| x.len() <= self.max_positions)
    }

    /// Uniform item the user has no training interaction with.
    fn negative_item<R: Rng>(&self, user: u32, item: u32, r: &mut R) -> Option<u32> {
        let n = self.ctx.hin.num_items() as u32;
        let known = &self.ctx.split.train[user as usize];
        if known.len() + 1 >= n as usize {
            return None;
        }
        loop {
            let j = r.gen_range(0..n);
            if j != item && known.binary_search(&j).is_err() {
                return Some(j);
            }
        }
    }

    fn input(&self, user: u32, item: u32) -> EncoderInput {
        EncoderInput::from_sequence(&self.ctx.source.entry(user, item).sequence, self.ctx.hin)
    }

    fn elementary(&self, user: u32, item: u32, seed: u64) -> (Option<EncoderInput>, Vec<(f64, Term)>) {
        let cfg = self.cfg;
        let entry = self.ctx.source.entry(user, item);
        let mut x = EncoderInput::from_sequence(&entry.sequence, self.ctx.hin);
        let mut terms = Vec::new();
        if cfg.w_mnp > 0.0 {
            if let Some((m, targets)) = mask_nodes(&x, cfg.mask_node_prob, self.ctx.hin, rng::mix(seed, &[0])) {
                x = m;
                terms.push((cfg.w_mnp, Term::Mnp { input: 0, targets, mode: cfg.pairwise_mode }));
            }
        }
        if cfg.w_mep > 0.0 {
            if let Some((m, targets)) = mask_edges(&x, cfg.mask_edge_prob, rng::mix(seed, &[1])) {
                x = m;
                terms.push((cfg.w_mep, Term::Mep { input: 0, targets, mode: cfg.pairwise_mode }));
            }
        }
        if cfg.w_mtp > 0.0 {
            let mut labels = vec![false; self.num_metapaths];
            for p in &entry.paths {
                labels[p.metapath] = true;
            }
            terms.push((cfg.w_mtp, Term::Mtp { input: 0, labels }));
        }
        if terms.is_empty() {
            (None, terms)
        } else {
            (Some(x), terms)
        }
    }

    /// Anchor, augmented positive and negatives, as encoder inputs.
    fn contrastive(&self, user: u32, item: u32, seed: u64) -> Result<Option<Vec<EncoderInput>>> {
        let cfg = self.cfg;
        let entry = self.ctx.source.entry(user, item);
        if entry.paths.is_empty() {
            return Ok(None);
        }
        let mut r = rng::stream(seed, &[rng::tag::AUGMENT]);
        let strategy = *STRATEGIES.choose(&mut r).unwrap();
        let aug = augment_subgraph(&entry.subgraph(), strategy, cfg.aug_ratio, &entry.pool, rng::mix(seed, &[2]))?;
        let mut negatives = Vec::with_capacity(cfg.scl_negatives);
        for _ in 0..cfg.scl_negatives {
            let Some(j) = self.negative_item(user, item, &mut r) else {
                return Ok(None);
            };
            negatives.push(self.ctx.source.entry(user, j).sequence.clone());
        }
        let pair = AugmentedPair {
            anchor: entry.sequence.clone(),
            positive: to_multislot(&aug.graph)?,
            negatives,
            strategy,
        };
        pair.check()?;
        let hin = self.ctx.hin;
        let mut inputs = vec![
            EncoderInput::from_sequence(&pair.anchor, hin),
            EncoderInput::from_sequence(&pair.positive, hin),
        ];
        inputs.extend(pair.negatives.iter().map(|s| EncoderInput::from_sequence(s, hin)));
        Ok(Some(inputs))
    }

    fn scl_term(&self, anchor: usize, n: usize) -> (f64, Term) {
        (
            self.cfg.w_scl,
            Term::Scl {
                anchor,
                positive: anchor + 1,
                negatives: (anchor + 2..anchor + 2 + n).collect(),
                tau: self.cfg.tau,
            },
        )
    }

    fn example(&self, course: Course, user: u32, item: u32, seed: u64) -> Result<Option<Example>> {
        let ex = match course {
            Course::Elementary => {
                let (x, terms) = self.elementary(user, item, seed);
                x.map(|x| Example { inputs: vec![x], terms })
            }
            Course::Advanced => self.contrastive(user, item, seed)?.map(|inputs| {
                let term = self.scl_term(0, inputs.len() - 2);
                Example { inputs, terms: vec![term] }
            }),
            Course::MultiTask => {
                let (x, mut terms) = self.elementary(user, item, seed);
                let mut inputs: Vec<EncoderInput> = x.into_iter().collect();
                if self.cfg.w_scl > 0.0 {
                    if let Some(c) = self.contrastive(user, item, seed)? {
                        let base = inputs.len();
                        terms.push(self.scl_term(base, c.len() - 2));
                        inputs.extend(c);
                    }
                }
                (!terms.is_empty()).then_some(Example { inputs, terms })
            }
            Course::Finetune => {
                let mut r = rng::stream(seed, &[rng::tag::TRAIN]);
                self.negative_item(user, item, &mut r).map(|j| Example {
                    inputs: vec![self.input(user, item), self.input(user, j)],
                    terms: vec![(1.0, Term::Rec { positive: 0, negative: 1 })],
                })
            }
        };
        Ok(ex.filter(|e| self.fits(e)))
    }

    fn log(&self, entry: &EpochLog) -> Result<()> {
        info!(
            "{} epoch {}: loss {:.5} ({} examples, {} skipped, {:.1}s){}",
            entry.course.name(),
            entry.epoch,
            entry.loss,
            entry.examples,
            entry.skipped,
            entry.wall_secs,
            entry.valid_hr10.map(|h| format!(", valid HR@10 {h:.4}")).unwrap_or_default()
        );
        if let Some(path) = &self.ctx.log_path {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            writeln!(f, "{}", serde_json::to_string(entry)?).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    fn checkpoint(&self, p: &ModelParams<f32>, st: &TrainState, name: &str) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.ctx.checkpoint_dir else {
            return Ok(None);
        };
        let path = dir.join(format!("{name}.ckpt"));
        Checkpoint {
            meta: CheckpointMeta {
                dims: p.dims.clone(),
                config_hash: self.ctx.config_hash.clone(),
                course: st.current().map_or("init", |c| c.name()).to_string(),
                epoch: st.epoch,
                rng_seed: self.cfg.seed,
                rng_counter: st.history.len() as u64,
                adam: None,
            },
            params: p.clone(),
            adam: st.adam.clone(),
        }
        .save(&path)?;
        Ok(Some(path))
    }

    fn run_epoch(
        &self,
        course: Course,
        epoch: usize,
        pairs: &[(u32, u32)],
        p: &mut ModelParams<f32>,
        st: &mut TrainState,
    ) -> Result<EpochLog> {
        let start = Instant::now();
        let seed = self.cfg.seed;
        let mut order = pairs.to_vec();
        order.shuffle(&mut rng::stream(seed, &[rng::tag::TRAIN, course.tag(), epoch as u64]));
        if course != Course::Finetune && self.cfg.pretrain_fraction < 1.0 {
            let keep = ((order.len() as f64) * self.cfg.pretrain_fraction).ceil() as usize;
            order.truncate(keep.max(1));
        }
        let mut sum = LossParts::default();
        let mut total = 0.0;
        let mut examples = 0;
        let mut skipped = 0;
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let built: Vec<Option<Example>> = chunk
                .par_iter()
                .enumerate()
                .map(|(j, &(u, i))| {
                    let s = rng::mix(seed, &[rng::tag::MASK, course.tag(), epoch as u64, b as u64, j as u64]);
                    self.example(course, u, i, s)
                })
                .collect::<Result<_>>()?;
            let batch: Vec<Example> = built.into_iter().flatten().collect();
            skipped += chunk.len() - batch.len();
            if batch.is_empty() {
                continue;
            }
            let (parts, g) = match loss_parts_and_gradients(p, &batch) {
                Ok(v) => v,
                Err(e @ Error::NumericFault(_)) => {
                    if let Some(path) = self.checkpoint(p, st, "last_good")? {
                        warn!("numeric fault; last good state saved to {}", path.display());
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let adam = st.adam.as_mut().expect("optimizer initialized per course");
            adam.step(p, &g)?;
            let n = batch.len() as f64;
            total += parts.total * n;
            sum.add_scaled(&parts, n);
            examples += batch.len();
        }
        let scale = 1.0 / examples.max(1) as f64;
        let mut parts = LossParts::default();
        parts.add_scaled(&sum, scale);
        Ok(EpochLog {
            course,
            epoch,
            loss: total * scale,
            parts,
            examples,
            skipped,
            wall_secs: start.elapsed().as_secs_f64(),
            valid_hr10: None,
        })
    }

    fn enter(&self, course: Course, p: &ModelParams<f32>, st: &mut TrainState) {
        let lr = if course == Course::Finetune {
            self.cfg.lr_finetune
        } else {
            self.cfg.lr_pretrain
        };
        st.courses.push(course);
        st.epoch = 0;
        st.adam = Some(AdamState::new(p, lr));
    }
}

fn trainer<'a, 'b>(ctx: &'b TrainContext<'a>, cfg: &'b CourseConfig, p: &ModelParams<f32>) -> Result<Trainer<'a, 'b>> {
    cfg.validate()?;
    Ok(Trainer {
        ctx,
        cfg,
        num_metapaths: ctx.source.sampler().metapaths().len(),
        max_positions: p.dims.max_positions,
    })
}

/// Pre-training courses (elementary and advanced, in the configured order).
pub fn run_pretraining(ctx: &TrainContext<'_>, cfg: &CourseConfig, p: &mut ModelParams<f32>, st: &mut TrainState) -> Result<()> {
    let t = trainer(ctx, cfg, p)?;
    let pairs: Vec<(u32, u32)> = ctx.split.train_pairs().collect();
    for course in cfg.pretrain_courses() {
        t.enter(course, p, st);
        for epoch in 0..cfg.epochs(course) {
            let log = t.run_epoch(course, epoch, &pairs, p, st)?;
            st.epoch = epoch + 1;
            t.log(&log)?;
            st.history.push(log);
        }
        t.checkpoint(p, st, course.name())?;
    }
    Ok(())
}

/// Validation lists used for early stopping.
pub fn validation_lists(ctx: &TrainContext<'_>, cfg: &CourseConfig) -> Vec<CandidateList> {
    build_candidates(ctx.hin.num_items(), ctx.split, Holdout::Valid, cfg.valid_negatives, cfg.seed)
}

/// Fine-tune on the recommendation loss with one sampled negative per
/// positive; keeps the parameters with the best validation HR@10.
pub fn run_finetune(ctx: &TrainContext<'_>, cfg: &CourseConfig, p: &mut ModelParams<f32>, st: &mut TrainState) -> Result<()> {
    let t = trainer(ctx, cfg, p)?;
    let pairs: Vec<(u32, u32)> = ctx.split.train_pairs().collect();
    let lists = validation_lists(ctx, cfg);
    t.enter(Course::Finetune, p, st);
    let mut best: Option<(f64, ModelParams<f32>)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.finetune_epochs {
        let mut log = t.run_epoch(Course::Finetune, epoch, &pairs, p, st)?;
        st.epoch = epoch + 1;
        let params = &*p;
        let (report, _) = evaluate(&lists, &[10], &ctx.config_hash, |u, i| score_pair(params, ctx.hin, ctx.source, u, i))?;
        let hr = report.hr(10);
        log.valid_hr10 = Some(hr);
        t.log(&log)?;
        st.history.push(log);
        if best.as_ref().is_none_or(|(b, _)| hr > *b) {
            best = Some((hr, p.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    if let Some((hr, params)) = best {
        st.best_valid_hr10 = Some(hr);
        *p = params;
    }
    t.checkpoint(p, st, Course::Finetune.name())?;
    Ok(())
}

/// Full schedule: pre-training courses then fine-tuning.
pub fn run_curriculum(
    ctx: &TrainContext<'_>,
    cfg: &CourseConfig,
    mut params: ModelParams<f32>,
) -> Result<(ModelParams<f32>, TrainState)> {
    let mut st = TrainState::new();
    run_pretraining(ctx, cfg, &mut params, &mut st)?;
    run_finetune(ctx, cfg, &mut params, &mut st)?;
    Ok((params, st))
}

/// Path of the checkpoint a course writes into `dir`.
pub fn course_checkpoint(dir: &Path, course: Course) -> PathBuf {
    dir.join(format!("{}.ckpt", course.name()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SubgraphCorpus;
    use crate::hin::{split_leave_one_out, EdgeType, NodeType, Schema};
    use crate::metapath::MetaPath;
    use crate::model::ModelDims;
    use crate::priority::NodeVectors;
    use crate::sampler::{PathSampler, SamplerConfig};

    fn small_hin() -> Hin {
        let nt = |name: &str, count| NodeType { name: name.into(), count };
        let et = |name: &str, src: &str, dst: &str| EdgeType {
            name: name.into(),
            src: src.into(),
            dst: dst.into(),
            symmetric: false,
            file: None,
        };
        let schema = Schema {
            node_types: vec![nt("U", 8), nt("M", 12), nt("G", 3)],
            edge_types: vec![et("UM", "U", "M"), et("MG", "M", "G")],
            interaction: "UM".into(),
            metapaths: vec![],
        };
        let um = (0..8u64).flat_map(|u| (0..5u64).map(move |k| (u, (u * 3 + k * 2) % 12))).collect();
        let mg = (0..12u64).map(|m| (m, m % 3)).collect();
        Hin::from_raw(&schema, vec![um, mg]).unwrap()
    }

    fn run(cfg: &CourseConfig) -> TrainState {
        let full = small_hin();
        let split = split_leave_one_out(&full, 1);
        let hin = full.with_interactions(split.train_pairs());
        let vectors = NodeVectors::random(&hin, 8, 3);
        let mps = ["UMUM", "UMGM"].iter().map(|s| MetaPath::parse(s, hin.schema()).unwrap()).collect();
        let sampler = PathSampler::new(&hin, &vectors, mps, SamplerConfig::default()).unwrap();
        let pairs: Vec<_> = split.train_pairs().collect();
        let corpus = SubgraphCorpus::build(&sampler, &pairs, 5);
        let source = SubgraphSource::new(&sampler, &corpus);
        let dims = ModelDims {
            d: 8,
            heads: 2,
            layers: 1,
            d_ff: 16,
            num_nodes: hin.num_nodes(),
            num_types: 3,
            num_slots: 4,
            max_positions: 64,
            num_metapaths: 2,
            layer_norm: true,
        };
        let ctx = TrainContext {
            hin: &hin,
            split: &split,
            source: &source,
            checkpoint_dir: None,
            log_path: None,
            config_hash: cfg.hash(),
        };
        let (p, st) = run_curriculum(&ctx, cfg, ModelParams::init(dims, 9).unwrap()).unwrap();
        assert!(p.all_finite());
        st
    }

    fn quick() -> CourseConfig {
        CourseConfig {
            elementary_epochs: 1,
            advanced_epochs: 1,
            finetune_epochs: 2,
            batch_size: 8,
            valid_negatives: 4,
            ..CourseConfig::default()
        }
    }

    #[test]
    fn standard_course_sequence() {
        let st = run(&quick());
        assert_eq!(st.courses, vec![Course::Elementary, Course::Advanced, Course::Finetune]);
        assert_eq!(st.history.len(), 4);
        for h in &st.history {
            assert!(h.loss.is_finite() && h.examples > 0, "{h:?}");
        }
        let e = &st.history[0];
        assert!(e.parts.mnp > 0.0 && e.parts.mtp > 0.0 && e.parts.scl == 0.0);
        assert!(st.history[1].parts.scl > 0.0);
        assert!(st.history[3].valid_hr10.is_some());
    }

    #[test]
    fn ablation_schedules() {
        let st = run(&CourseConfig { mode: CurriculumMode::MultiTask, ..quick() });
        assert_eq!(st.courses, vec![Course::MultiTask, Course::Finetune]);
        assert_eq!(st.history.len(), 4);
        assert!(st.history[0].parts.scl > 0.0 && st.history[0].parts.mnp > 0.0);
        let st = run(&CourseConfig { mode: CurriculumMode::ReverseCourses, ..quick() });
        assert_eq!(st.courses, vec![Course::Advanced, Course::Elementary, Course::Finetune]);
        let st = run(&CourseConfig { elementary_epochs: 0, advanced_epochs: 0, ..quick() });
        assert_eq!(st.courses, vec![Course::Finetune]);
        let st = run(&CourseConfig { w_mnp: 0.0, ..quick() });
        assert_eq!(st.history[0].parts.mnp, 0.0);
    }

    #[test]
    fn config_checks_and_hash() {
        assert!(CourseConfig { tau: 0.0, ..quick() }.validate().is_err());
        assert!(CourseConfig { mask_node_prob: 1.0, ..quick() }.validate().is_err());
        assert_eq!(quick().hash(), quick().hash());
        assert_ne!(quick().hash(), CourseConfig { seed: 1, ..quick() }.hash());
    }
}
