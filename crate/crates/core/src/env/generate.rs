use rand::seq::SliceRandom;
use rand::Rng;

use super::{expert_plan, Cell, Color, EnvError, GridMap, HEADINGS, SUCCESS_RADIUS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub width: usize,
    pub height: usize,
    /// Fraction of interior cells turned into walls.
    pub wall_density: f64,
    pub landmarks: usize,
    pub attempts: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            width: 10,
            height: 10,
            wall_density: 0.12,
            landmarks: 4,
            attempts: 64,
        }
    }
}

/// Random walled room with scattered wall cells and colored pillars.
/// Draws until a solvable layout appears or `attempts` run out.
pub fn generate_map<R: Rng>(cfg: &GeneratorConfig, rng: &mut R) -> Result<GridMap, EnvError> {
    for _ in 0..cfg.attempts.max(1) {
        let map = draw(cfg, rng);
        if let Some(map) = map {
            if expert_plan(&map, map.start(), map.goal(), SUCCESS_RADIUS).is_ok() {
                return Ok(map);
            }
        }
    }
    Err(EnvError::Unsolvable)
}

fn draw<R: Rng>(cfg: &GeneratorConfig, rng: &mut R) -> Option<GridMap> {
    let (w, h) = (cfg.width.max(3), cfg.height.max(3));
    let mut rows = vec![vec![Cell::Free; w]; h];
    for (y, row) in rows.iter_mut().enumerate() {
        for (x, c) in row.iter_mut().enumerate() {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                *c = Cell::Wall;
            }
        }
    }
    let mut interior: Vec<(usize, usize)> = (1..h - 1).flat_map(|y| (1..w - 1).map(move |x| (x, y))).collect();
    interior.shuffle(rng);
    let walls = ((interior.len() as f64) * cfg.wall_density).round() as usize;
    let need = walls + cfg.landmarks + 2;
    if interior.len() < need {
        return None;
    }
    let mut cells = interior.into_iter();
    for (x, y) in cells.by_ref().take(walls) {
        rows[y][x] = Cell::Wall;
    }
    let mut palette = Color::ALL.to_vec();
    palette.shuffle(rng);
    for (i, (x, y)) in cells.by_ref().take(cfg.landmarks).enumerate() {
        // the first two pillars always get distinct colors
        let color = if i < 2 { palette[i] } else { *palette.choose(rng)? };
        rows[y][x] = Cell::Landmark(color);
    }
    let start = cells.next()?;
    let goal = cells.next()?;
    let heading = rng.gen_range(0..HEADINGS);
    GridMap::new(rows, start, heading, goal).ok()
}
