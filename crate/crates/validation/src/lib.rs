//! Release criteria for `streamnav`. Each check returns an [`Outcome`];
//! the `acceptance` test target runs them all and reports PASS/FAIL.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use streamnav::encoders::{EncoderConfig, Teachers, ToyObservation};
use streamnav::env::GeneratorConfig;
use streamnav::harness::{
    ablation_csv, cmd_ablate, cmd_eval, cmd_mask_dump, cmd_train, eval_episodes, evaluate, parse_config, AblationRow,
    Driver, MaskDumpLayout, MaskFormat, RunConfig, ABLATION_CSV, CHECKPOINT, EVAL_CSV, TRAIN_LOG,
};
use streamnav::layout::{build_layout, build_mask, check_mask_oracle, MaskVariant, QuerySelfAttention, TokenLayout};
use streamnav::numerics::{cosine_distance, Tensor};
use streamnav::policy::{PolicyConfig, StreamPolicy};
use streamnav::rng::rng_for;
use streamnav::training::{
    batch_gradients, build_dataset, gradient_check, loss_all, prepare, prepare_all, teacher_gradient_sum,
    LossWeights, TrainSample,
};

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

pub fn random_layouts() -> Vec<TokenLayout> {
    let mut rng = rng_for(2024, "acceptance-layouts", 0);
    (0..200)
        .map(|_| {
            let mut len = || rng.gen_range(1..=6);
            let (i, m, c, a) = (len(), len(), len(), len());
            let turns = rng.gen_range(1..=8);
            let q = rng.gen_range(1..=3);
            build_layout(turns, i, m, c, a, q, true).unwrap()
        })
        .collect()
}

pub fn mask_oracle(layouts: &[TokenLayout]) -> Outcome {
    let t0 = Instant::now();
    let mut mismatched = 0;
    for l in layouts {
        for v in MaskVariant::ALL {
            if build_mask(l, v) != check_mask_oracle(l, v) {
                mismatched += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        mismatched == 0 && secs < 10.0,
        format!("{mismatched} of {} masks differ, {secs:.2}s", layouts.len() * 3),
    )
}

pub fn leakage_audit(layouts: &[TokenLayout]) -> Outcome {
    let (mut nav_to_query, mut cross_modality, mut cross_turn, mut future) = (0, 0, 0, 0);
    for l in layouts {
        let m = build_mask(l, MaskVariant::Strict);
        let roles = l.roles();
        for q in 0..l.total() {
            for k in 0..l.total() {
                if !m.allows(q, k) {
                    continue;
                }
                let (rq, rk) = (roles[q], roles[k]);
                if k > q {
                    future += 1;
                }
                if rq.is_navigation() && rk.is_query() {
                    nav_to_query += 1;
                }
                if rq.is_query() && rk.is_query() {
                    if std::mem::discriminant(&rq) != std::mem::discriminant(&rk) {
                        cross_modality += 1;
                    }
                    if rq.turn() != rk.turn() {
                        cross_turn += 1;
                    }
                } else if rq.is_query() && rk.turn().is_some_and(|t| Some(t) > rq.turn()) {
                    cross_turn += 1;
                }
            }
        }
    }
    let total = nav_to_query + cross_modality + cross_turn + future;
    outcome(
        total == 0,
        format!("nav->query {nav_to_query}, cross-modality {cross_modality}, cross-turn {cross_turn}, future {future}"),
    )
}

fn small_config(seed: u64, window: usize) -> PolicyConfig {
    PolicyConfig {
        layers: 2,
        heads: 2,
        d_model: 16,
        ff_hidden: 32,
        window,
        memory_keyframes: 8,
        queries_per_modality: 2,
        masked_tokens: 4,
        fusion_dk: 8,
        fusion_dv: 8,
        encoder: EncoderConfig {
            image: 16,
            channels: 3,
            patch_h: 8,
            patch_w: 8,
            d2: 8,
            d3: 8,
            d_state: 8,
            d_pose: 4,
            seed: seed ^ 0x5eed,
        },
        seed,
        ..PolicyConfig::default()
    }
}

fn new_policy(cfg: PolicyConfig) -> StreamPolicy {
    let teachers = Arc::new(Teachers::new(cfg.encoder).unwrap());
    StreamPolicy::new(cfg, teachers).unwrap()
}

fn random_obs(seed: u64, turns: usize, image: usize) -> Vec<ToyObservation> {
    let mut rng = rng_for(seed, "acceptance-obs", 0);
    (0..turns)
        .map(|_| {
            let px = (0..image * image * 3).map(|_| rng.gen::<f64>()).collect();
            ToyObservation::from_pixels(image, image, 3, px).unwrap()
        })
        .collect()
}

fn random_instruction(seed: u64, vocab: usize) -> Vec<u32> {
    let mut rng = rng_for(seed, "acceptance-instr", 0);
    let n = rng.gen_range(2..10);
    (0..n).map(|_| rng.gen_range(0..vocab as u32)).collect()
}

pub fn query_invariance() -> Outcome {
    let mut worst = 0.0f64;
    for m in 0..20u64 {
        let variant = MaskVariant::ALL[m as usize % 3];
        let p = new_policy(PolicyConfig {
            variant,
            ..small_config(100 + m, 8)
        });
        let instr = random_instruction(m, p.config().vocab);
        let obs = random_obs(m, 6, 16);
        let (mut on, mut off) = (p.begin_episode(&instr).unwrap(), p.begin_episode(&instr).unwrap());
        for o in &obs {
            let a = p.step(&mut on, o, true).unwrap();
            let b = p.step(&mut off, o, false).unwrap();
            worst = worst.max(a.logits.max_abs_diff(&b.logits));
        }
    }
    outcome(worst <= 1e-9, format!("max |dlogit| {worst:.3e} over 20 models"))
}

pub fn stream_dense() -> Outcome {
    let mut worst = 0.0f64;
    for m in 0..4u64 {
        let p = new_policy(small_config(200 + m, 8));
        let instr = random_instruction(50 + m, p.config().vocab);
        let obs = random_obs(50 + m, 10, 16);
        let mut state = p.begin_episode(&instr).unwrap();
        let dense = p.forward_full(&instr, &obs, false).unwrap();
        for (o, d) in obs.iter().zip(&dense) {
            let s = p.step(&mut state, o, false).unwrap();
            worst = worst.max(s.logits.max_abs_diff(&d.logits));
        }
    }
    outcome(worst <= 1e-5, format!("max |dlogit| {worst:.3e}, 10 turns, window 8"))
}

fn micro_model() -> (StreamPolicy, TrainSample) {
    let cfg = PolicyConfig {
        layers: 1,
        heads: 2,
        d_model: 8,
        ff_hidden: 8,
        window: 2,
        memory_keyframes: 2,
        queries_per_modality: 1,
        masked_tokens: 2,
        fusion_dk: 4,
        fusion_dv: 4,
        trainable_2d_input: true,
        encoder: EncoderConfig {
            image: 8,
            channels: 3,
            patch_h: 8,
            patch_w: 4,
            d2: 4,
            d3: 4,
            d_state: 4,
            d_pose: 2,
            seed: 31,
        },
        seed: 37,
        ..PolicyConfig::default()
    };
    let p = new_policy(cfg);
    let gen = GeneratorConfig {
        width: 5,
        height: 5,
        ..GeneratorConfig::default()
    };
    let data = build_dataset(&gen, 4, 41);
    // shortest episode with at least two turns, rendered at the micro size
    let sample = data.samples.iter().filter(|s| s.turns() >= 2).min_by_key(|s| s.turns()).unwrap();
    let obs = random_obs(43, 3, 8);
    let sample = TrainSample::new(sample.instruction.clone(), obs, sample.actions[..2].to_vec()).unwrap();
    (p, sample)
}

pub fn gradient_verification() -> Outcome {
    let t0 = Instant::now();
    let (p, sample) = micro_model();
    let ep = prepare(&p, &sample).unwrap();
    let w = LossWeights {
        gamma: 1.0,
        alpha: 0.5,
        beta: 0.5,
    };
    let rows = gradient_check(&p, &ep, w, 1e-5, 6, 1e-6).unwrap();
    let groups = ["block0", "proj", "fusion", "query", "dec2d", "dec3d", "input2d", "head", "condense"];
    let missing: Vec<&str> = groups
        .iter()
        .copied()
        .filter(|g| !rows.iter().any(|r| r.name.starts_with(g)))
        .collect();
    let worst = rows.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        missing.is_empty() && worst.max_rel_error <= 1e-4 && secs < 60.0,
        format!(
            "{} tensors, worst {} at {:.2e}, missing groups {missing:?}, {secs:.1}s",
            rows.len(),
            worst.name,
            worst.max_rel_error
        ),
    )
}

pub fn loss_identities() -> Outcome {
    let total = loss_all(1.0, 0.4, 0.2, LossWeights::default()).unwrap();
    let identity = (total - 1.0025).abs() <= 1e-12;

    let mut rng = rng_for(7, "acceptance-cos", 0);
    let mut out_of_range = 0;
    for _ in 0..2000 {
        let (r, c) = (rng.gen_range(1..8), rng.gen_range(1..8));
        let scale = 10f64.powi(rng.gen_range(-6..6));
        let mut draw = || {
            let d = (0..r * c).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
            Tensor::from_rows(r, c, d).unwrap()
        };
        let (a, b) = (draw(), draw());
        for pair in [(&a, &b), (&a, &a)] {
            if let Ok(l) = cosine_distance(pair.0, pair.1) {
                out_of_range += usize::from(!(0.0..=2.0).contains(&l));
            }
        }
    }

    let mut teacher_sum = 0.0f64;
    let mut model_l2d_ok = true;
    let gen = GeneratorConfig {
        width: 6,
        height: 6,
        ..GeneratorConfig::default()
    };
    let data = build_dataset(&gen, 6, 9);
    for m in 0..3u64 {
        let cfg = small_config(300 + m, 4);
        let p = new_policy(cfg);
        let prepared = prepare_all(&p, &data.samples).unwrap();
        let w = LossWeights::default();
        for ep in &prepared {
            let (loss, _) = batch_gradients(&p, std::slice::from_ref(ep), w).unwrap();
            model_l2d_ok &= (0.0..=2.0).contains(&loss.l2d);
            teacher_sum += teacher_gradient_sum(&p, ep, w).unwrap().abs();
        }
    }
    outcome(
        identity && out_of_range == 0 && model_l2d_ok && teacher_sum == 0.0,
        format!(
            "loss_all {total}, l2d out of range {out_of_range}, model l2d in range {model_l2d_ok}, teacher grad sum {teacher_sum}"
        ),
    )
}

pub fn metric_sanity() -> Outcome {
    let cfg = RunConfig::default();
    let episodes = eval_episodes(&cfg.generator(), 50, 77);
    let rows = evaluate(Driver::Expert, &episodes).unwrap();
    let m = rows[0].metrics.unwrap();
    outcome(
        episodes.len() == 50 && m.sr == 1.0 && m.spl == 1.0 && m.osr == 1.0 && m.ndtw == 1.0 && m.ne <= 0.36,
        format!(
            "{} episodes: sr {} spl {} osr {} ndtw {} ne {:.3}",
            episodes.len(),
            m.sr,
            m.spl,
            m.osr,
            m.ndtw,
            m.ne
        ),
    )
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub struct Grid {
    pub rows: Vec<AblationRow>,
    pub seeds: usize,
}

impl Grid {
    fn row(&self, cell: &str, seed: usize) -> &AblationRow {
        self.rows
            .iter()
            .find(|r| r.cell == cell && r.seed == Some(seed))
            .unwrap_or_else(|| panic!("missing {cell} seed {seed}"))
    }

    fn mean(&self, cell: &str) -> f64 {
        self.rows.iter().find(|r| r.cell == cell && r.seed.is_none()).unwrap().sr
    }
}

/// Train and evaluate the full grid from `configs/ablation.toml`.
pub fn run_ablation(scratch: &Path) -> Grid {
    let text = fs::read_to_string(workspace_root().join("configs/ablation.toml")).unwrap();
    let cfg = parse_config(&text).unwrap();
    let out = scratch.join("ablation");
    fs::create_dir_all(&out).unwrap();
    let t0 = Instant::now();
    let rows = cmd_ablate(&cfg, &out, |msg| eprintln!("  {msg}")).unwrap();
    let minutes = t0.elapsed().as_secs_f64() / 60.0;
    println!(
        "INFO  ablation grid: {} seeds in {minutes:.1} min, table at {}",
        cfg.ablate.seeds,
        out.join(ABLATION_CSV).display()
    );
    for line in ablation_csv(&rows).lines() {
        println!("      {line}");
    }
    Grid {
        rows,
        seeds: cfg.ablate.seeds,
    }
}

const EPS: f64 = 1e-12;

pub fn mask_ablation(g: &Grid) -> Outcome {
    let (s, l, n) = (g.mean("strict-both"), g.mean("leaky-both"), g.mean("noiso-both"));
    let holding = (0..g.seeds)
        .filter(|&i| {
            let s = g.row("strict-both", i).sr;
            s > g.row("leaky-both", i).sr + EPS && s > g.row("noiso-both", i).sr + EPS
        })
        .count();
    outcome(
        s > l + EPS && s > n + EPS && holding >= 4,
        format!("mean SR strict {s:.3} leaky {l:.3} noiso {n:.3}; ordering holds in {holding}/{}", g.seeds),
    )
}

pub fn module_ablation(g: &Grid) -> Outcome {
    let (both, none, d2, d3) = (
        g.mean("strict-both"),
        g.mean("strict-none"),
        g.mean("strict-2d"),
        g.mean("strict-3d"),
    );
    outcome(
        both + EPS >= none && d2 + EPS >= none - 0.01 && d3 + EPS >= none - 0.01,
        format!("mean SR both {both:.3} none {none:.3} 2d-only {d2:.3} 3d-only {d3:.3}"),
    )
}

pub fn horizon(g: &Grid, scratch: &Path) -> Outcome {
    let dir = scratch.join("strata");
    fs::create_dir_all(&dir).unwrap();
    cmd_eval(&RunConfig::default(), None, true, &dir).unwrap();
    let csv = fs::read_to_string(dir.join(EVAL_CSV)).unwrap();
    let names: Vec<&str> = csv.lines().skip(1).filter_map(|l| l.split(',').next()).collect();
    let strata_rows = names == ["overall", "short", "medium", "long"];

    let gap = |i: usize, f: fn(&AblationRow) -> Option<f64>| -> Option<f64> {
        Some(f(g.row("strict-both", i))? - f(g.row("strict-none", i))?)
    };
    let mut holding = 0;
    let mut gaps = Vec::new();
    for i in 0..g.seeds {
        let (short, long) = (gap(i, |r| r.sr_short), gap(i, |r| r.sr_long));
        if let (Some(s), Some(l)) = (short, long) {
            holding += usize::from(l + EPS >= s);
        }
        let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:+.2}"));
        gaps.push(format!("{}/{}", show(long), show(short)));
    }
    outcome(
        strata_rows && holding >= 3,
        format!(
            "strata rows {names:?}; long gap >= short gap in {holding}/{} seeds (long/short: {})",
            g.seeds,
            gaps.join(" ")
        ),
    )
}

pub fn reproducibility(scratch: &Path) -> Outcome {
    let cfg = parse_config(
        r#"
[policy]
layers = 1
heads = 2
d_model = 16
ff_hidden = 16
window = 3
memory_keyframes = 2
queries_per_modality = 1
masked_tokens = 4
fusion_dk = 4
fusion_dv = 4

[encoder]
patch_h = 8
patch_w = 8
d2 = 4
d3 = 4
d_state = 4
d_pose = 2

[train]
episodes = 6
steps = 4
batch_size = 2

[env]
width = 7
height = 7

[eval]
episodes = 8

[ablate]
seeds = 2
"#,
    )
    .unwrap();
    let base = scratch.join("repro");
    let run = |tag: &str| -> Vec<(String, Vec<u8>)> {
        let dir = base.join(tag);
        let _ = fs::remove_dir_all(&dir);
        for sub in ["train", "eval", "expert", "ablate", "mask"] {
            fs::create_dir_all(dir.join(sub)).unwrap();
        }
        cmd_train(&cfg, &dir.join("train"), |_| {}).unwrap();
        cmd_eval(&cfg, Some(&dir.join("train").join(CHECKPOINT)), false, &dir.join("eval")).unwrap();
        cmd_eval(&cfg, None, true, &dir.join("expert")).unwrap();
        cmd_ablate(&cfg, &dir.join("ablate"), |_| {}).unwrap();
        let mut files = vec![
            ("train/checkpoint", fs::read(dir.join("train").join(CHECKPOINT)).unwrap()),
            ("train/log", fs::read(dir.join("train").join(TRAIN_LOG)).unwrap()),
            ("eval", fs::read(dir.join("eval").join(EVAL_CSV)).unwrap()),
            ("expert", fs::read(dir.join("expert").join(EVAL_CSV)).unwrap()),
            ("ablate", fs::read(dir.join("ablate").join(ABLATION_CSV)).unwrap()),
        ];
        for v in MaskVariant::ALL {
            for f in [MaskFormat::Ascii, MaskFormat::Pgm] {
                let text = cmd_mask_dump(MaskDumpLayout::default(), v, QuerySelfAttention::Causal, f).unwrap();
                files.push(("mask", text.into_bytes()));
            }
        }
        files.into_iter().map(|(n, b)| (n.to_string(), b)).collect()
    };
    let (a, b) = (run("a"), run("b"));
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    outcome(
        differing.is_empty(),
        format!("{} outputs compared across two runs, differing {differing:?}", a.len()),
    )
}

