use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::encoders::Teachers;
use crate::env::StratumMetrics;
use crate::layout::{build_layout, build_mask_with, MaskVariant, QuerySelfAttention};
use crate::policy::{StreamPolicy, N_ACTIONS};
use crate::rng::derive_seed;
use crate::training::{build_dataset, fit, prepare_all, StepLog, TrainError};

use super::checkpoint::{checkpoint_of, decode_checkpoint, encode_checkpoint, policy_from_checkpoint};
use super::config::RunConfig;
use super::eval::{episode_set_hash, eval_episodes, evaluate, Driver};
use super::HarnessError;

pub const TRAIN_LOG: &str = "train_log.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const EVAL_CSV: &str = "eval.csv";
pub const ABLATION_CSV: &str = "ablation.csv";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn fresh_policy(cfg: &RunConfig) -> Result<StreamPolicy, HarnessError> {
    let pcfg = cfg.policy_config()?;
    let teachers = Arc::new(Teachers::new(pcfg.encoder).map_err(crate::policy::PolicyError::from)?);
    Ok(StreamPolicy::new(pcfg, teachers)?)
}

pub fn train_log_csv(logs: &[StepLog]) -> String {
    let mut s = String::from("step,nav_loss,l2d,l3d,loss_all\n");
    for r in logs {
        let l = r.loss;
        writeln!(s, "{},{},{},{},{}", r.step, l.nav, l.l2d, l.l3d, l.total).expect("string write");
    }
    s
}

pub struct TrainOutcome {
    pub policy: StreamPolicy,
    pub logs: Vec<StepLog>,
    /// Draws of the data generator that yielded no usable episode.
    pub skipped: usize,
}

/// Train from scratch without touching the filesystem.
pub fn train_policy(cfg: &RunConfig, mut progress: impl FnMut(&StepLog)) -> Result<TrainOutcome, (HarnessError, Option<StreamPolicy>)> {
    let mut policy = fresh_policy(cfg).map_err(|e| (e, None))?;
    let tcfg = cfg.train_config().map_err(|e| (e.into(), None))?;
    let data = build_dataset(&cfg.generator(), cfg.train.episodes, cfg.train_data_seed());
    if data.samples.is_empty() {
        return Err((HarnessError::Train(TrainError::EmptyBatch), None));
    }
    let prepared = prepare_all(&policy, &data.samples).map_err(|e| (e.into(), None))?;
    match fit(&mut policy, &prepared, &tcfg, |row, _| progress(row)) {
        Ok(logs) => Ok(TrainOutcome {
            policy,
            logs,
            skipped: data.skipped,
        }),
        Err(e) => Err((e.into(), Some(policy))),
    }
}

/// Train, then write the training log and the final checkpoint under `out`.
/// On a numeric abort the last good weights are still written.
pub fn cmd_train(cfg: &RunConfig, out: &Path, progress: impl FnMut(&StepLog)) -> Result<TrainOutcome, HarnessError> {
    match train_policy(cfg, progress) {
        Ok(o) => {
            write_file(&out.join(TRAIN_LOG), train_log_csv(&o.logs).as_bytes())?;
            write_file(&out.join(CHECKPOINT), &encode_checkpoint(&checkpoint_of(&o.policy, cfg)))?;
            Ok(o)
        }
        Err((e, Some(last_good))) => {
            write_file(&out.join(CHECKPOINT), &encode_checkpoint(&checkpoint_of(&last_good, cfg)))?;
            Err(e)
        }
        Err((e, None)) => Err(e),
    }
}

pub fn load_policy(cfg: &RunConfig, path: &Path) -> Result<StreamPolicy, HarnessError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(policy_from_checkpoint(&decode_checkpoint(&bytes)?, cfg)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(rows: &[StratumMetrics]) -> String {
    let mut s = String::from("stratum,episodes,sr,spl,osr,ne,ndtw\n");
    for r in rows {
        let name = r.stratum.map(|s| s.to_string()).unwrap_or_else(|| "overall".into());
        let m = r.metrics;
        writeln!(
            s,
            "{name},{},{},{},{},{},{}",
            r.episodes,
            fmt_opt(m.map(|m| m.sr)),
            fmt_opt(m.map(|m| m.spl)),
            fmt_opt(m.map(|m| m.osr)),
            fmt_opt(m.map(|m| m.ne)),
            fmt_opt(m.map(|m| m.ndtw)),
        )
        .expect("string write");
    }
    s
}

/// Evaluate a checkpoint (or the expert) on the config's evaluation set
/// and write the stratified metrics CSV.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    expert: bool,
    out: &Path,
) -> Result<Vec<StratumMetrics>, HarnessError> {
    let episodes = eval_episodes(&cfg.generator(), cfg.eval.episodes, cfg.eval_seed());
    let rows = if expert {
        evaluate(Driver::Expert, &episodes)?
    } else {
        let path = checkpoint.ok_or(HarnessError::MissingCheckpoint)?;
        let policy = load_policy(cfg, path)?;
        evaluate(Driver::Policy(&policy), &episodes)?
    };
    write_file(&out.join(EVAL_CSV), metrics_csv(&rows).as_bytes())?;
    Ok(rows)
}

/// One ablation cell: a mask variant paired with a latent-loss setting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationCell {
    pub variant: MaskVariant,
    /// `none`, `2d`, `3d` or `both`.
    pub losses: &'static str,
}

impl AblationCell {
    pub fn name(&self) -> String {
        format!("{}-{}", self.variant.name(), self.losses)
    }

    fn apply(&self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        c.policy.variant = self.variant.name().to_string();
        match self.losses {
            "none" => c.loss.gamma = 0.0,
            "2d" => c.loss.beta = 0.0,
            "3d" => c.loss.alpha = 0.0,
            _ => {}
        }
        c
    }
}

/// Three mask variants with both losses, plus the Strict mask under each
/// remaining loss setting.
pub fn ablation_cells() -> Vec<AblationCell> {
    let mut cells: Vec<AblationCell> = MaskVariant::ALL
        .iter()
        .map(|&variant| AblationCell { variant, losses: "both" })
        .collect();
    for losses in ["none", "2d", "3d"] {
        cells.push(AblationCell {
            variant: MaskVariant::Strict,
            losses,
        });
    }
    cells
}

/// Seed-level config of ablation repeat `index`.
pub fn ablation_seed_config(cfg: &RunConfig, index: usize) -> RunConfig {
    let mut c = cfg.clone();
    c.run.seed = derive_seed(cfg.run.seed, "ablate", index as u64);
    c
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub cell: String,
    /// Seed index, or `None` for the per-cell mean.
    pub seed: Option<usize>,
    pub episodes: usize,
    pub sr: f64,
    pub spl: f64,
    pub osr: f64,
    pub ne: f64,
    pub ndtw: f64,
    pub sr_short: Option<f64>,
    pub sr_medium: Option<f64>,
    pub sr_long: Option<f64>,
    pub eval_hash: String,
}

const ABLATION_HEADER: &str = "cell,seed,episodes,sr,spl,osr,ne,ndtw,sr_short,sr_medium,sr_long,eval_hash\n";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_HEADER);
    for r in rows {
        let seed = r.seed.map(|i| i.to_string()).unwrap_or_else(|| "mean".into());
        writeln!(
            s,
            "{},{seed},{},{},{},{},{},{},{},{},{},{}",
            r.cell,
            r.episodes,
            r.sr,
            r.spl,
            r.osr,
            r.ne,
            r.ndtw,
            fmt_opt(r.sr_short),
            fmt_opt(r.sr_medium),
            fmt_opt(r.sr_long),
            r.eval_hash
        )
        .expect("string write");
    }
    s
}

fn mean_opt(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn ablation_row(cell: String, seed: usize, metrics: &[StratumMetrics], hash: &str) -> AblationRow {
    let overall = metrics[0].metrics.expect("non-empty evaluation set");
    let sr_of = |i: usize| metrics[i].metrics.map(|m| m.sr);
    AblationRow {
        cell,
        seed: Some(seed),
        episodes: overall.episodes,
        sr: overall.sr,
        spl: overall.spl,
        osr: overall.osr,
        ne: overall.ne,
        ndtw: overall.ndtw,
        sr_short: sr_of(1),
        sr_medium: sr_of(2),
        sr_long: sr_of(3),
        eval_hash: hash.to_string(),
    }
}

/// Mean row of every cell, in cell order.
pub fn ablation_means(rows: &[AblationRow]) -> Vec<AblationRow> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows.iter().filter(|r| r.seed.is_some()) {
        if !names.contains(&r.cell.as_str()) {
            names.push(&r.cell);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rs: Vec<&AblationRow> = rows.iter().filter(|r| r.cell == name && r.seed.is_some()).collect();
            let n = rs.len() as f64;
            let mean = |f: fn(&AblationRow) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            AblationRow {
                cell: name.to_string(),
                seed: None,
                episodes: rs[0].episodes,
                sr: mean(|r| r.sr),
                spl: mean(|r| r.spl),
                osr: mean(|r| r.osr),
                ne: mean(|r| r.ne),
                ndtw: mean(|r| r.ndtw),
                sr_short: mean_opt(rs.iter().map(|r| r.sr_short)),
                sr_medium: mean_opt(rs.iter().map(|r| r.sr_medium)),
                sr_long: mean_opt(rs.iter().map(|r| r.sr_long)),
                eval_hash: rs[0].eval_hash.clone(),
            }
        })
        .collect()
}

/// Train and evaluate every ablation cell for `cfg.ablate.seeds` repeats.
/// Cells of one repeat share training data, evaluation tasks and initial
/// weights.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path, mut progress: impl FnMut(&str)) -> Result<Vec<AblationRow>, HarnessError> {
    let cells = ablation_cells();
    let mut rows = Vec::new();
    for s in 0..cfg.ablate.seeds {
        let seed_cfg = ablation_seed_config(cfg, s);
        let episodes = eval_episodes(&seed_cfg.generator(), seed_cfg.eval.episodes, seed_cfg.eval_seed());
        let hash = episode_set_hash(&episodes);
        for cell in &cells {
            let c = cell.apply(&seed_cfg);
            c.validate()?;
            let trained = train_policy(&c, |_| {}).map_err(|(e, _)| e)?;
            let metrics = evaluate(Driver::Policy(&trained.policy), &episodes)?;
            let row = ablation_row(cell.name(), s, &metrics, &hash);
            progress(&format!("seed {s} {}: sr {}", row.cell, row.sr));
            rows.push(row);
        }
    }
    let means = ablation_means(&rows);
    rows.extend(means);
    write_file(&out.join(ABLATION_CSV), ablation_csv(&rows).as_bytes())?;
    Ok(rows)
}

/// Layout of a mask dump: every turn has the same segment lengths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskDumpLayout {
    pub turns: usize,
    pub instruction: usize,
    pub memory: usize,
    pub ctxt: usize,
    /// Query tokens per modality; 0 leaves queries out.
    pub queries: usize,
}

impl Default for MaskDumpLayout {
    fn default() -> Self {
        MaskDumpLayout {
            turns: 2,
            instruction: 3,
            memory: 2,
            ctxt: 4,
            queries: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskFormat {
    Ascii,
    Pgm,
}

impl MaskFormat {
    pub fn parse(s: &str) -> Option<MaskFormat> {
        match s {
            "ascii" => Some(MaskFormat::Ascii),
            "pgm" => Some(MaskFormat::Pgm),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            MaskFormat::Ascii => "txt",
            MaskFormat::Pgm => "pgm",
        }
    }
}

pub fn cmd_mask_dump(
    layout: MaskDumpLayout,
    variant: MaskVariant,
    within_query: QuerySelfAttention,
    format: MaskFormat,
) -> Result<String, HarnessError> {
    let l = build_layout(
        layout.turns,
        layout.instruction,
        layout.memory,
        layout.ctxt,
        N_ACTIONS,
        layout.queries,
        layout.queries > 0,
    )
    .map_err(crate::policy::PolicyError::from)?;
    let mask = build_mask_with(&l, variant, within_query);
    Ok(match format {
        MaskFormat::Ascii => mask.to_ascii(),
        MaskFormat::Pgm => mask.to_pgm(),
    })
}

pub fn mask_dump_path(out: &Path, variant: MaskVariant, format: MaskFormat) -> PathBuf {
    out.join(format!("mask_{}.{}", variant.name(), format.extension()))
}

pub fn write_output(path: &Path, text: &str) -> Result<(), HarnessError> {
    write_file(path, text.as_bytes())
}
