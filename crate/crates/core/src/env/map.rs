use super::{AgentPose, EnvError, HEADINGS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Purple,
        Color::Orange,
    ];

    pub fn letter(self) -> char {
        match self {
            Color::Red => 'r',
            Color::Green => 'g',
            Color::Blue => 'b',
            Color::Yellow => 'y',
            Color::Purple => 'p',
            Color::Orange => 'o',
        }
    }

    pub fn from_letter(c: char) -> Option<Color> {
        Color::ALL.into_iter().find(|col| col.letter() == c)
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Orange => "orange",
        }
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
            Color::Purple => [0.6, 0.0, 1.0],
            Color::Orange => [1.0, 0.5, 0.0],
        }
    }
}

/// Landmarks are colored pillars: they block motion like walls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Wall,
    Landmark(Color),
}

impl Cell {
    pub fn is_blocking(self) -> bool {
        !matches!(self, Cell::Free)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    start: AgentPose,
    goal_cell: (usize, usize),
}

impl GridMap {
    /// `rows[y][x]`, with `y = 0` the bottom row.
    pub fn new(
        rows: Vec<Vec<Cell>>,
        start_cell: (usize, usize),
        heading: u8,
        goal_cell: (usize, usize),
    ) -> Result<GridMap, EnvError> {
        let err = |msg: &str| EnvError::Parse {
            line: 0,
            msg: msg.to_string(),
        };
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(err("grid must be a non-empty rectangle"));
        }
        if heading >= HEADINGS {
            return Err(err("heading out of range"));
        }
        let cells: Vec<Cell> = rows.into_iter().flatten().collect();
        let map = GridMap {
            width,
            height,
            cells,
            start: AgentPose::new(start_cell.0 as f64 + 0.5, start_cell.1 as f64 + 0.5, heading),
            goal_cell,
        };
        for (x, y) in [start_cell, goal_cell] {
            if map.cell(x as i64, y as i64).map_or(true, Cell::is_blocking) {
                return Err(err("start and goal must be free cells inside the grid"));
            }
        }
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start(&self) -> AgentPose {
        self.start
    }

    pub fn goal(&self) -> (f64, f64) {
        (self.goal_cell.0 as f64 + 0.5, self.goal_cell.1 as f64 + 0.5)
    }

    pub fn goal_cell(&self) -> (usize, usize) {
        self.goal_cell
    }

    /// `None` outside the grid.
    pub fn cell(&self, x: i64, y: i64) -> Option<Cell> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return None;
        }
        Some(self.cells[y as usize * self.width + x as usize])
    }

    pub fn is_free_point(&self, x: f64, y: f64) -> bool {
        x >= 0.0
            && y >= 0.0
            && self
                .cell(x.floor() as i64, y.floor() as i64)
                .is_some_and(|c| !c.is_blocking())
    }

    pub fn landmarks(&self) -> Vec<((usize, usize), Color)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if let Cell::Landmark(c) = self.cells[y * self.width + x] {
                    out.push(((x, y), c));
                }
            }
        }
        out
    }

    /// Text form accepted by [`parse_map`].
    pub fn to_text(&self) -> String {
        let start = (self.start.x.floor() as usize, self.start.y.floor() as usize);
        let mut s = format!("heading={}\n", self.start.heading);
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                let ch = if (x, y) == start {
                    'S'
                } else if (x, y) == self.goal_cell {
                    'G'
                } else {
                    match self.cells[y * self.width + x] {
                        Cell::Free => '.',
                        Cell::Wall => '#',
                        Cell::Landmark(c) => c.letter(),
                    }
                };
                s.push(ch);
            }
            s.push('\n');
        }
        s
    }
}

/// Parse the text map format: a `heading=<0..23>` header line, then one text
/// row per grid row (top row first). `#` wall, `.` free, `S` start, `G` goal,
/// lowercase color letters for landmark pillars.
pub fn parse_map(text: &str) -> Result<GridMap, EnvError> {
    let perr = |line: usize, msg: String| EnvError::Parse { line, msg };
    let mut lines = text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .skip_while(|(_, l)| l.trim().is_empty());
    let (hline, header) = lines.next().ok_or_else(|| perr(1, "empty map".into()))?;
    let heading = header
        .trim()
        .strip_prefix("heading")
        .and_then(|r| r.trim_start().strip_prefix('='))
        .ok_or_else(|| perr(hline, "expected header `heading=<0..23>`".into()))?
        .trim()
        .parse::<u8>()
        .ok()
        .filter(|&h| h < HEADINGS)
        .ok_or_else(|| perr(hline, "heading must be an integer in 0..23".into()))?;

    let body: Vec<(usize, &str)> = lines.collect();
    let last = body.iter().rposition(|(_, l)| !l.trim().is_empty());
    let body = &body[..last.map_or(0, |i| i + 1)];
    if body.is_empty() {
        return Err(perr(hline + 1, "map has no grid rows".into()));
    }
    let width = body[0].1.chars().count();
    let height = body.len();
    let mut rows = vec![Vec::with_capacity(width); height];
    let (mut start, mut goal) = (None, None);
    for (row_idx, &(line, text)) in body.iter().enumerate() {
        if text.chars().count() != width {
            return Err(perr(line, format!("row width {} differs from {}", text.chars().count(), width)));
        }
        let y = height - 1 - row_idx;
        for (x, ch) in text.chars().enumerate() {
            let cell = match ch {
                '#' => Cell::Wall,
                '.' => Cell::Free,
                'S' | 'G' => {
                    let slot = if ch == 'S' { &mut start } else { &mut goal };
                    if slot.replace((x, y)).is_some() {
                        return Err(perr(line, format!("more than one `{ch}`")));
                    }
                    Cell::Free
                }
                c => Cell::Landmark(
                    Color::from_letter(c).ok_or_else(|| perr(line, format!("unknown map character {c:?}")))?,
                ),
            };
            rows[y].push(cell);
        }
    }
    let start = start.ok_or_else(|| perr(hline, "map has no start `S`".into()))?;
    let goal = goal.ok_or_else(|| perr(hline, "map has no goal `G`".into()))?;
    GridMap::new(rows, start, heading, goal)
}
