//! Static occupancy grid with lazily built BFS distance fields.

use std::collections::VecDeque;
use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A grid coordinate. `x` grows to the right, `y` grows downward (row index
/// of the map text), so `Up` decreases `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Cell {
        Cell::new(self.x + dx, self.y + dy)
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl From<[i32; 2]> for Cell {
    fn from([x, y]: [i32; 2]) -> Self {
        Cell { x, y }
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Shortest-path lengths from every cell to one goal, agents ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceField {
    width: usize,
    dist: Vec<u32>,
}

impl DistanceField {
    pub const UNREACHABLE: u32 = u32::MAX;

    /// `None` for cells outside the map, on obstacles, or walled off.
    pub fn get(&self, cell: Cell) -> Option<u32> {
        if cell.x < 0 || cell.y < 0 || cell.x as usize >= self.width {
            return None;
        }
        let idx = cell.y as usize * self.width + cell.x as usize;
        match self.dist.get(idx) {
            Some(&d) if d != Self::UNREACHABLE => Some(d),
            _ => None,
        }
    }

    pub fn raw(&self) -> &[u32] {
        &self.dist
    }
}

#[derive(Debug, Clone)]
pub struct GridMap {
    width: usize,
    height: usize,
    blocked: Vec<bool>,
    fields: Vec<OnceLock<Arc<DistanceField>>>,
}

impl PartialEq for GridMap {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.blocked == other.blocked
    }
}

impl Eq for GridMap {}

impl GridMap {
    /// Builds a map from a row-major obstacle mask.
    pub fn from_mask(width: usize, height: usize, blocked: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("size", "map must have at least one cell"));
        }
        if blocked.len() != width * height {
            return Err(Error::param(
                "blocked",
                format!("mask has {} cells, expected {}", blocked.len(), width * height),
            ));
        }
        if width > i32::MAX as usize || height > i32::MAX as usize {
            return Err(Error::param("size", "map too large"));
        }
        Ok(GridMap {
            width,
            height,
            fields: (0..width * height).map(|_| OnceLock::new()).collect(),
            blocked,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::from_mask(width, height, vec![false; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    fn index(&self, c: Cell) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    /// Out-of-bounds cells count as obstacles.
    pub fn is_blocked(&self, c: Cell) -> bool {
        !self.in_bounds(c) || self.blocked[self.index(c)]
    }

    pub fn is_free(&self, c: Cell) -> bool {
        !self.is_blocked(c)
    }

    pub fn obstacles(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells().filter(|&c| self.blocked[self.index(c)])
    }

    pub fn obstacle_count(&self) -> usize {
        self.blocked.iter().filter(|&&b| b).count()
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells().filter(|&c| !self.blocked[self.index(c)])
    }

    fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Cell::new(x as i32, y as i32)))
    }

    pub fn neighbors(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        [(0, -1), (0, 1), (-1, 0), (1, 0)]
            .into_iter()
            .map(move |(dx, dy)| c.offset(dx, dy))
            .filter(|&n| self.is_free(n))
    }

    /// Distance field for `goal`, built on first use and cached.
    pub fn distance_field(&self, goal: Cell) -> Result<Arc<DistanceField>> {
        if self.is_blocked(goal) {
            return Err(Error::param("goal", format!("{goal} is not a free cell")));
        }
        let slot = &self.fields[self.index(goal)];
        Ok(Arc::clone(slot.get_or_init(|| Arc::new(self.bfs(goal)))))
    }

    /// Obstacle-aware shortest-path length from `from` to `goal`;
    /// `Ok(None)` when unreachable.
    pub fn distance(&self, goal: Cell, from: Cell) -> Result<Option<u32>> {
        Ok(self.distance_field(goal)?.get(from))
    }

    fn bfs(&self, goal: Cell) -> DistanceField {
        let mut dist = vec![DistanceField::UNREACHABLE; self.width * self.height];
        let mut queue = VecDeque::new();
        dist[self.index(goal)] = 0;
        queue.push_back(goal);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.index(c)];
            for n in self.neighbors(c) {
                let ni = self.index(n);
                if dist[ni] == DistanceField::UNREACHABLE {
                    dist[ni] = d + 1;
                    queue.push_back(n);
                }
            }
        }
        DistanceField {
            width: self.width,
            dist,
        }
    }

    /// Renders back to the `.`/`#` text format.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(if self.blocked[y * self.width + x] { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }
}

/// Parses rows of `.` (free) and `#` (obstacle). Trailing `\r` and a final
/// newline are accepted; blank lines are not.
pub fn load_map(text: &str) -> Result<GridMap> {
    let rows: Vec<&str> = text
        .trim_end_matches(['\n', '\r'])
        .split('\n')
        .map(|r| r.strip_suffix('\r').unwrap_or(r))
        .collect();
    if rows.len() == 1 && rows[0].is_empty() {
        return Err(Error::MapFormat {
            line: 1,
            message: "empty grid".into(),
        });
    }
    let width = rows[0].chars().count();
    let mut blocked = Vec::with_capacity(width * rows.len());
    for (i, row) in rows.iter().enumerate() {
        let line = i + 1;
        if row.chars().count() != width {
            return Err(Error::MapFormat {
                line,
                message: format!("row has {} cells, expected {width}", row.chars().count()),
            });
        }
        for ch in row.chars() {
            match ch {
                '.' => blocked.push(false),
                '#' => blocked.push(true),
                other => {
                    return Err(Error::MapFormat {
                        line,
                        message: format!("illegal character {other:?}"),
                    })
                }
            }
        }
    }
    if width == 0 {
        return Err(Error::MapFormat {
            line: 1,
            message: "empty grid".into(),
        });
    }
    GridMap::from_mask(width, rows.len(), blocked)
}

/// Random map where every cell is independently an obstacle with
/// probability `density`. Cells are drawn in row-major order from a
/// ChaCha8 stream seeded with `seed`.
pub fn generate_map(width: usize, height: usize, density: f64, seed: u64) -> Result<GridMap> {
    if width < 2 || height < 2 {
        return Err(Error::param("size", format!("{width}x{height}: both sides must be >= 2")));
    }
    if !(0.0..1.0).contains(&density) {
        return Err(Error::param("density", format!("{density} not in [0, 1)")));
    }
    let mut rng = rng::seeded(seed);
    let blocked = (0..width * height).map(|_| rng.gen::<f64>() < density).collect();
    GridMap::from_mask(width, height, blocked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_small_maps() {
        let m = load_map("..\n..").unwrap();
        assert_eq!((m.width(), m.height(), m.obstacle_count()), (2, 2, 0));

        let m = load_map(".#\n..\n").unwrap();
        assert_eq!(m.obstacles().collect::<Vec<_>>(), vec![Cell::new(1, 0)]);
    }

    #[test]
    fn load_counts_obstacles() {
        let text = "#.#.#.#.#.\n\
                    ..........\n\
                    ##.##.##..\n\
                    ..........\n\
                    #.#.#.#.#.\n\
                    ..........\n\
                    ##.##.##..\n\
                    ..........\n\
                    #.#.#.#.#.\n\
                    ..###.....";
        let expected = text.chars().filter(|&c| c == '#').count();
        assert_eq!(expected, 30);
        assert_eq!(load_map(text).unwrap().obstacle_count(), expected);
    }

    #[test]
    fn load_rejects_bad_input() {
        assert!(matches!(load_map(""), Err(Error::MapFormat { .. })));
        assert!(matches!(load_map("..\n."), Err(Error::MapFormat { line: 2, .. })));
        assert!(matches!(load_map(".x"), Err(Error::MapFormat { .. })));
        assert!(matches!(load_map("..\n\n.."), Err(Error::MapFormat { .. })));
    }

    #[test]
    fn text_round_trip() {
        let text = ".#.\n#..\n";
        assert_eq!(load_map(text).unwrap().to_text(), text);
    }

    #[test]
    fn generate_zero_density_is_empty() {
        for seed in 0..5 {
            assert_eq!(generate_map(40, 40, 0.0, seed).unwrap().obstacle_count(), 0);
        }
    }

    #[test]
    fn generate_density_matches_binomial() {
        // n = 1600, p = 0.3: mean 480, sigma = sqrt(1600 * 0.3 * 0.7) ~ 18.3
        let sigma = (1600.0f64 * 0.3 * 0.7).sqrt();
        let m = generate_map(40, 40, 0.3, 7).unwrap();
        assert!((m.obstacle_count() as f64 - 480.0).abs() <= 3.0 * sigma);
        let mean = (0..100)
            .map(|s| generate_map(40, 40, 0.3, s).unwrap().obstacle_count() as f64)
            .sum::<f64>()
            / 100.0;
        // standard error of the 100-seed mean is sigma / 10
        assert!((mean - 480.0).abs() <= 3.0 * sigma / 10.0, "mean {mean}");
    }

    #[test]
    fn generate_is_deterministic_and_validated() {
        assert_eq!(generate_map(12, 9, 0.3, 42).unwrap(), generate_map(12, 9, 0.3, 42).unwrap());
        assert!(generate_map(12, 9, 1.0, 0).is_err());
        assert!(generate_map(12, 9, -0.1, 0).is_err());
        assert!(generate_map(1, 9, 0.1, 0).is_err());
    }

    #[test]
    fn distances() {
        let m = load_map("...\n##.\n...").unwrap();
        let g = Cell::new(0, 2);
        assert_eq!(m.distance(g, g).unwrap(), Some(0));
        assert_eq!(m.distance(g, Cell::new(1, 2)).unwrap(), Some(1));
        assert_eq!(m.distance(g, Cell::new(0, 0)).unwrap(), Some(6));
        assert_eq!(m.distance(g, Cell::new(0, 1)).unwrap(), None);
        assert!(m.distance(Cell::new(0, 1), g).is_err());

        let walled = load_map(".#.\n.#.").unwrap();
        assert_eq!(walled.distance(Cell::new(0, 0), Cell::new(2, 0)).unwrap(), None);
    }

    #[test]
    fn distance_field_is_consistent() {
        let m = generate_map(15, 15, 0.3, 5).unwrap();
        let goal = m.free_cells().next().unwrap();
        let f = m.distance_field(goal).unwrap();
        assert_eq!(f.get(goal), Some(0));
        for c in m.free_cells() {
            for n in m.neighbors(c) {
                match (f.get(c), f.get(n)) {
                    (Some(a), Some(b)) => assert!(a.abs_diff(b) <= 1),
                    (None, None) => {}
                    _ => panic!("adjacent free cells in different components"),
                }
            }
        }
        // cached: same allocation on second request
        assert!(Arc::ptr_eq(&f, &m.distance_field(goal).unwrap()));
    }
}
