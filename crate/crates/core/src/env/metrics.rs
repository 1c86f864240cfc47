use std::fmt;

use super::{plan_reference, Action, AgentPose, EnvError, EpisodeResult, GridMap, STEP_LENGTH};

/// What an executed episode is scored against.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReference {
    pub expert_path: Vec<AgentPose>,
    pub expert_steps: usize,
    pub shortest_length: f64,
    pub radius: f64,
}

impl EvalReference {
    pub fn from_map(map: &GridMap, radius: f64) -> Result<Self, EnvError> {
        let (plan, path) = plan_reference(map, radius)?;
        let forwards = plan.iter().filter(|&&a| a == Action::Forward).count();
        Ok(EvalReference {
            expert_path: path,
            expert_steps: plan.len(),
            shortest_length: forwards as f64 * STEP_LENGTH,
            radius,
        })
    }

    pub fn stratum(&self) -> Stratum {
        Stratum::of_steps(self.expert_steps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub episodes: usize,
    pub sr: f64,
    pub spl: f64,
    pub osr: f64,
    pub ne: f64,
    pub ndtw: f64,
}

/// Dynamic time warping over positions with Euclidean point cost.
pub fn dtw_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for p in a {
        cur[0] = f64::INFINITY;
        for (j, q) in b.iter().enumerate() {
            let cost = (p.0 - q.0).hypot(p.1 - q.1);
            cur[j + 1] = cost + prev[j].min(prev[j + 1]).min(cur[j]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

pub fn ndtw(path: &[(f64, f64)], reference: &[(f64, f64)], radius: f64) -> f64 {
    (-dtw_distance(path, reference) / (reference.len() as f64 * radius)).exp()
}

fn positions(path: &[AgentPose]) -> Vec<(f64, f64)> {
    path.iter().map(AgentPose::position).collect()
}

pub fn compute_metrics(results: &[EpisodeResult], refs: &[EvalReference]) -> Result<Metrics, EnvError> {
    if results.len() != refs.len() {
        return Err(EnvError::LengthMismatch {
            results: results.len(),
            references: refs.len(),
        });
    }
    if results.is_empty() {
        return Err(EnvError::Empty);
    }
    let n = results.len() as f64;
    let (mut sr, mut spl, mut osr, mut ne, mut nd) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (r, e) in results.iter().zip(refs) {
        let s = if r.success { 1.0 } else { 0.0 };
        let l = e.shortest_length;
        let p = r.path_length();
        let ratio = if l == 0.0 && p == 0.0 { 1.0 } else { l / p.max(l) };
        sr += s;
        spl += s * ratio;
        if r.distances.iter().any(|&d| d <= e.radius) {
            osr += 1.0;
        }
        ne += r.final_distance;
        nd += ndtw(&positions(&r.path), &positions(&e.expert_path), e.radius);
    }
    Ok(Metrics {
        episodes: results.len(),
        sr: sr / n,
        spl: spl / n,
        osr: osr / n,
        ne: ne / n,
        ndtw: nd / n,
    })
}

/// Task-horizon buckets by expert step count: short < 20, medium 20..=60, long > 60.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stratum {
    Short,
    Medium,
    Long,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Short, Stratum::Medium, Stratum::Long];

    pub fn of_steps(steps: usize) -> Stratum {
        match steps {
            s if s < 20 => Stratum::Short,
            s if s <= 60 => Stratum::Medium,
            _ => Stratum::Long,
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stratum::Short => "short",
            Stratum::Medium => "medium",
            Stratum::Long => "long",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StratumMetrics {
    /// `None` for the overall row.
    pub stratum: Option<Stratum>,
    pub episodes: usize,
    /// `None` when the stratum is empty.
    pub metrics: Option<Metrics>,
}

/// Overall row followed by one row per horizon stratum.
pub fn stratify(results: &[EpisodeResult], refs: &[EvalReference]) -> Result<Vec<StratumMetrics>, EnvError> {
    let overall = compute_metrics(results, refs)?;
    let mut rows = vec![StratumMetrics {
        stratum: None,
        episodes: overall.episodes,
        metrics: Some(overall),
    }];
    for s in Stratum::ALL {
        let (rs, es): (Vec<_>, Vec<_>) = results
            .iter()
            .zip(refs)
            .filter(|(_, e)| e.stratum() == s)
            .map(|(r, e)| (r.clone(), e.clone()))
            .unzip();
        rows.push(StratumMetrics {
            stratum: Some(s),
            episodes: rs.len(),
            metrics: if rs.is_empty() { None } else { Some(compute_metrics(&rs, &es)?) },
        });
    }
    Ok(rows)
}
