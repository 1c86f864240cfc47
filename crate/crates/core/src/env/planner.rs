//! A* over the lattice `(4x, 4y, h)`: forward moves exist only at the four
//! cardinal headings, every action costs 1.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{step_env, Action, AgentPose, EnvError, GridMap, HEADINGS, STEP_LENGTH};

const LATTICE: f64 = 4.0;

#[derive(PartialEq)]
struct Open {
    f: f64,
    seq: u64,
    state: usize,
}

impl Eq for Open {}

impl Ord for Open {
    // BinaryHeap is a max-heap: invert so the smallest f, then the oldest entry, pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Lattice {
    nx: usize,
    ny: usize,
}

impl Lattice {
    fn index(&self, ix: usize, iy: usize, h: u8) -> usize {
        (iy * self.nx + ix) * HEADINGS as usize + h as usize
    }

    fn decode(&self, s: usize) -> (usize, usize, u8) {
        let h = (s % HEADINGS as usize) as u8;
        let cell = s / HEADINGS as usize;
        (cell % self.nx, cell / self.nx, h)
    }

    fn pose(&self, s: usize) -> AgentPose {
        let (ix, iy, h) = self.decode(s);
        AgentPose::new(ix as f64 / LATTICE, iy as f64 / LATTICE, h)
    }
}

fn on_lattice(v: f64) -> Option<usize> {
    let scaled = v * LATTICE;
    let r = scaled.round();
    ((scaled - r).abs() < 1e-9 && r >= 0.0).then_some(r as usize)
}

/// Minimal action sequence (in the lattice metric) from `start` to within
/// `radius` of `goal`, terminated by `Stop`.
pub fn expert_plan(map: &GridMap, start: AgentPose, goal: (f64, f64), radius: f64) -> Result<Vec<Action>, EnvError> {
    let lat = Lattice {
        nx: map.width() * LATTICE as usize + 1,
        ny: map.height() * LATTICE as usize + 1,
    };
    let (sx, sy) = match (on_lattice(start.x), on_lattice(start.y)) {
        (Some(x), Some(y)) if x < lat.nx && y < lat.ny => (x, y),
        _ => return Err(EnvError::OffLattice),
    };
    let heuristic = |p: &AgentPose| (p.distance_to(goal) - radius).max(0.0) / STEP_LENGTH;
    let total = lat.nx * lat.ny * HEADINGS as usize;
    let mut best = vec![u32::MAX; total];
    let mut parent: Vec<Option<(usize, Action)>> = vec![None; total];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;

    let s0 = lat.index(sx, sy, start.heading);
    best[s0] = 0;
    heap.push(Open {
        f: heuristic(&start),
        seq,
        state: s0,
    });
    while let Some(Open { state, f, .. }) = heap.pop() {
        let pose = lat.pose(state);
        let g = best[state];
        if f > f64::from(g) + heuristic(&pose) + 1e-9 {
            continue;
        }
        if pose.distance_to(goal) <= radius {
            return Ok(reconstruct(&parent, state));
        }
        for action in [Action::Forward, Action::Left, Action::Right] {
            if action == Action::Forward && pose.heading % (HEADINGS / 4) != 0 {
                continue;
            }
            let out = step_env(map, pose, action);
            if out.blocked {
                continue;
            }
            let (nx, ny) = (on_lattice(out.pose.x), on_lattice(out.pose.y));
            let (Some(nx), Some(ny)) = (nx, ny) else { continue };
            let next = lat.index(nx, ny, out.pose.heading);
            if g + 1 < best[next] {
                best[next] = g + 1;
                parent[next] = Some((state, action));
                seq += 1;
                heap.push(Open {
                    f: f64::from(g + 1) + heuristic(&out.pose),
                    seq,
                    state: next,
                });
            }
        }
    }
    Err(EnvError::Unsolvable)
}

fn reconstruct(parent: &[Option<(usize, Action)>], mut state: usize) -> Vec<Action> {
    let mut rev = vec![Action::Stop];
    while let Some((prev, a)) = parent[state] {
        rev.push(a);
        state = prev;
    }
    rev.reverse();
    rev
}

/// Expert plan for the map's own start and goal, with the pose path it
/// traces (start pose first, one pose per action including the final Stop).
pub fn plan_reference(map: &GridMap, radius: f64) -> Result<(Vec<Action>, Vec<AgentPose>), EnvError> {
    let plan = expert_plan(map, map.start(), map.goal(), radius)?;
    let mut pose = map.start();
    let mut path = vec![pose];
    for &a in &plan {
        pose = step_env(map, pose, a).pose;
        path.push(pose);
    }
    Ok((plan, path))
}
