use rand::Rng;

use super::{step_env, Action, GridMap};

const VOCAB: &[&str] = &[
    "stop", "go", "walk", "forward", "turn", "left", "right", "slightly", "around", "then", "and", "past", "the",
    "red", "green", "blue", "yellow", "purple", "orange", "pillar", "a", "bit", "far", "at", "goal",
];

pub const VOCAB_SIZE: usize = VOCAB.len();

/// Landmarks further than this from the end of a straight run are not named.
const LANDMARK_REACH: f64 = 1.6;

pub fn vocabulary() -> &'static [&'static str] {
    VOCAB
}

fn id(word: &str) -> u32 {
    VOCAB.iter().position(|w| *w == word).expect("word is in the vocabulary") as u32
}

pub fn decode_instruction(tokens: &[u32]) -> String {
    tokens
        .iter()
        .map(|&t| VOCAB.get(t as usize).copied().unwrap_or("<unk>"))
        .collect::<Vec<_>>()
        .join(" ")
}

enum Segment {
    Move { steps: usize, end: (f64, f64) },
    Turn { left: bool, steps: usize },
}

fn segments(map: &GridMap, plan: &[Action]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut pose = map.start();
    let mut i = 0;
    while i < plan.len() && plan[i] != Action::Stop {
        let run_is_forward = plan[i] == Action::Forward;
        let mut net: i64 = 0;
        let mut steps = 0;
        while i < plan.len() && plan[i] != Action::Stop && (plan[i] == Action::Forward) == run_is_forward {
            match plan[i] {
                Action::Left => net += 1,
                Action::Right => net -= 1,
                _ => {}
            }
            steps += 1;
            pose = step_env(map, pose, plan[i]).pose;
            i += 1;
        }
        if run_is_forward {
            out.push(Segment::Move {
                steps,
                end: pose.position(),
            });
        } else if net != 0 {
            out.push(Segment::Turn {
                left: net > 0,
                steps: net.unsigned_abs() as usize,
            });
        }
    }
    out
}

/// Templated route description: straight runs (optionally naming a nearby
/// pillar) and turns, joined by connectives, ending at the goal.
pub fn gen_instruction<R: Rng>(map: &GridMap, plan: &[Action], rng: &mut R) -> Vec<u32> {
    let segs = segments(map, plan);
    if segs.is_empty() {
        return vec![id("stop")];
    }
    let landmarks = map.landmarks();
    let mut words: Vec<&str> = Vec::new();
    for (k, seg) in segs.iter().enumerate() {
        if k > 0 {
            words.push(if rng.gen_bool(0.5) { "then" } else { "and" });
        }
        match *seg {
            Segment::Move { steps, end } => {
                words.push(if rng.gen_bool(0.5) { "go" } else { "walk" });
                words.push("forward");
                if steps <= 3 {
                    words.extend(["a", "bit"]);
                } else if steps >= 12 {
                    words.push("far");
                }
                let nearest = landmarks
                    .iter()
                    .map(|&((x, y), c)| ((x as f64 + 0.5 - end.0).hypot(y as f64 + 0.5 - end.1), c))
                    .filter(|&(d, _)| d <= LANDMARK_REACH)
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                if let Some((_, color)) = nearest {
                    if rng.gen_bool(0.75) {
                        words.extend(["past", "the", color.name(), "pillar"]);
                    }
                }
            }
            Segment::Turn { left, steps } => {
                words.push("turn");
                words.push(if left { "left" } else { "right" });
                if steps <= 3 {
                    words.push("slightly");
                } else if steps >= 9 {
                    words.push("around");
                }
            }
        }
    }
    words.extend(["and", "stop", "at", "the", "goal"]);
    words.into_iter().map(id).collect()
}
