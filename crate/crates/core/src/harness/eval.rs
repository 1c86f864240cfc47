use sha2::{Digest, Sha256};

use crate::env::{
    gen_instruction, generate_map, plan_reference, run_episode, stratify, Action, EpisodeResult, EvalReference,
    GeneratorConfig, GridMap, ScriptedPolicy, StratumMetrics, MAX_STEPS, SUCCESS_RADIUS,
};
use crate::policy::{PolicyError, StreamPolicy};
use crate::rng::rng_for;

use super::agent::PolicyAgent;

/// One held-out navigation task.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalEpisode {
    pub map: GridMap,
    pub instruction: Vec<u32>,
    pub plan: Vec<Action>,
    pub reference: EvalReference,
}

/// `count` evaluation tasks, each from its own seed stream. Draws with no
/// solvable map are skipped.
pub fn eval_episodes(gen: &GeneratorConfig, count: usize, seed: u64) -> Vec<EvalEpisode> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = rng_for(seed, "eval", i as u64);
        let Ok(map) = generate_map(gen, &mut rng) else { continue };
        let Ok((plan, _)) = plan_reference(&map, SUCCESS_RADIUS) else { continue };
        let Ok(reference) = EvalReference::from_map(&map, SUCCESS_RADIUS) else { continue };
        let instruction = gen_instruction(&map, &plan, &mut rng);
        out.push(EvalEpisode {
            map,
            instruction,
            plan,
            reference,
        });
    }
    out
}

/// Hex SHA-256 over map texts and instructions; equal hashes mean the same
/// evaluation set.
pub fn episode_set_hash(episodes: &[EvalEpisode]) -> String {
    let mut h = Sha256::new();
    for ep in episodes {
        h.update(ep.map.to_text().as_bytes());
        for t in &ep.instruction {
            h.update(t.to_le_bytes());
        }
        h.update([0xff]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Who drives the agent during evaluation.
#[derive(Clone, Copy)]
pub enum Driver<'a> {
    Policy(&'a StreamPolicy),
    /// Replays the expert plan of each episode.
    Expert,
}

pub fn run_eval(driver: Driver<'_>, episodes: &[EvalEpisode]) -> Result<Vec<EpisodeResult>, PolicyError> {
    episodes
        .iter()
        .map(|ep| match driver {
            Driver::Policy(p) => run_episode(&mut PolicyAgent::new(p), &ep.map, &ep.instruction, MAX_STEPS, SUCCESS_RADIUS),
            Driver::Expert => {
                let mut s = ScriptedPolicy::new(ep.plan.clone());
                Ok(run_episode(&mut s, &ep.map, &ep.instruction, MAX_STEPS, SUCCESS_RADIUS).expect("infallible"))
            }
        })
        .collect()
}

/// Overall plus per-stratum metrics of `driver` on `episodes`.
pub fn evaluate(driver: Driver<'_>, episodes: &[EvalEpisode]) -> Result<Vec<StratumMetrics>, super::HarnessError> {
    let results = run_eval(driver, episodes)?;
    let refs: Vec<EvalReference> = episodes.iter().map(|e| e.reference.clone()).collect();
    Ok(stratify(&results, &refs)?)
}
