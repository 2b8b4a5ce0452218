//! Kitchen layouts parsed from plain-text grids.
//!
//! One character per tile: `.` (or space) floor, `X` counter, `O` onion pile,
//! `P` pot, `D` plate pile, `S` serve. `1` and `2` mark the agents' start cells
//! (floor); without them the first two floor cells in reading order are used.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Result, TbsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tile {
    Floor,
    Counter,
    OnionPile,
    PlatePile,
    Pot,
    Serve,
}

pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub tiles: Vec<Tile>,
    pub starts: [Cell; 2],
    /// Pot cells in reading order.
    pub pots: Vec<Cell>,
    /// Counter cells in reading order.
    pub counters: Vec<Cell>,
    /// Special-tile slot per cell; interior counters get 1..=3, border counters 0.
    pub slots: Vec<u8>,
}

pub const CRAMPED_ROOM: &str = "\
XXPXX
O.2.O
X1..X
XDXSX
";

pub const LARGE_ROOM: &str = "\
XXXPXXX
O.....O
X.....X
X.1.2.X
X.....X
X.....X
XDXXXSX
";

pub const FORCED_COORDINATION: &str = "\
XXXPX
O.X1P
O2X.X
D.X.X
XXXSX
";

pub const BUILTIN: [(&str, &str); 3] = [
    ("cramped_room", CRAMPED_ROOM),
    ("large_room", LARGE_ROOM),
    ("forced_coordination", FORCED_COORDINATION),
];

impl Layout {
    /// Loads a built-in layout by name, or parses the file at `name_or_path`.
    pub fn load(name_or_path: &str) -> Result<Layout> {
        if let Some((name, text)) = BUILTIN.iter().find(|(n, _)| *n == name_or_path) {
            return Layout::parse(name, text);
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path).map_err(|e| {
            TbsError::Layout(format!(
                "`{name_or_path}` is not a built-in layout and could not be read: {e}"
            ))
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| name_or_path.to_string());
        Layout::parse(&name, &text)
    }

    pub fn parse(name: &str, text: &str) -> Result<Layout> {
        let rows: Vec<&str> = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.trim().is_empty())
            .collect();
        if rows.is_empty() {
            return Err(TbsError::Layout("empty layout".into()));
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        let mut tiles = Vec::with_capacity(width * height);
        let mut marked: [Option<Cell>; 2] = [None, None];
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(TbsError::Layout(format!(
                    "row {r} has {} tiles, expected {width}",
                    row.chars().count()
                )));
            }
            for (c, ch) in row.chars().enumerate() {
                let tile = match ch {
                    '.' | ' ' => Tile::Floor,
                    '1' | '2' => {
                        let i = if ch == '1' { 0 } else { 1 };
                        if marked[i].replace((r, c)).is_some() {
                            return Err(TbsError::Layout(format!("start `{ch}` appears twice")));
                        }
                        Tile::Floor
                    }
                    'X' => Tile::Counter,
                    'O' => Tile::OnionPile,
                    'P' => Tile::Pot,
                    'D' => Tile::PlatePile,
                    'S' => Tile::Serve,
                    other => {
                        return Err(TbsError::Layout(format!(
                            "unknown tile `{other}` at ({r}, {c})"
                        )))
                    }
                };
                tiles.push(tile);
            }
        }

        let cells_of = |kind: Tile| -> Vec<Cell> {
            (0..height)
                .flat_map(|r| (0..width).map(move |c| (r, c)))
                .filter(|&(r, c)| tiles[r * width + c] == kind)
                .collect()
        };
        for (kind, label) in [
            (Tile::Pot, "pot"),
            (Tile::OnionPile, "onion pile"),
            (Tile::PlatePile, "plate pile"),
            (Tile::Serve, "serve tile"),
        ] {
            if cells_of(kind).is_empty() {
                return Err(TbsError::Layout(format!("layout `{name}` has no {label}")));
            }
        }
        let floor = cells_of(Tile::Floor);
        let starts = match marked {
            [Some(a), Some(b)] => [a, b],
            [None, None] if floor.len() >= 2 => [floor[0], floor[1]],
            _ => {
                return Err(TbsError::Layout(
                    "need both `1` and `2` start markers, or neither and two floor cells".into(),
                ))
            }
        };

        let mut slots = vec![0u8; width * height];
        for kind in [Tile::OnionPile, Tile::PlatePile, Tile::Pot, Tile::Serve] {
            for (i, (r, c)) in cells_of(kind).into_iter().enumerate() {
                slots[r * width + c] = i.min(3) as u8;
            }
        }
        let counters = cells_of(Tile::Counter);
        let interior = counters
            .iter()
            .filter(|&&(r, c)| r > 0 && c > 0 && r + 1 < height && c + 1 < width);
        for (i, &(r, c)) in interior.enumerate() {
            slots[r * width + c] = (i + 1).min(3) as u8;
        }

        Ok(Layout {
            name: name.to_string(),
            width,
            height,
            pots: cells_of(Tile::Pot),
            counters,
            tiles,
            starts,
            slots,
        })
    }

    pub fn tile(&self, (r, c): Cell) -> Tile {
        self.tiles[r * self.width + c]
    }

    pub fn slot(&self, (r, c): Cell) -> u8 {
        self.slots[r * self.width + c]
    }

    /// Neighbouring cell in a direction, if it lies inside the grid.
    pub fn neighbour(&self, (r, c): Cell, dr: isize, dc: isize) -> Option<Cell> {
        let nr = r as isize + dr;
        let nc = c as isize + dc;
        (nr >= 0 && nc >= 0 && (nr as usize) < self.height && (nc as usize) < self.width)
            .then_some((nr as usize, nc as usize))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        let cramped = Layout::load("cramped_room").unwrap();
        assert_eq!((cramped.width, cramped.height), (5, 4));
        assert_eq!(cramped.starts, [(2, 1), (1, 2)]);
        let large = Layout::load("large_room").unwrap();
        assert_eq!((large.width, large.height), (7, 7));
        let forced = Layout::load("forced_coordination").unwrap();
        assert_eq!(forced.pots.len(), 2);
        // the pass-through counters in the middle column are special
        assert_eq!(forced.slot((1, 2)), 1);
        assert_eq!(forced.slot((2, 2)), 2);
        assert_eq!(forced.slot((0, 0)), 0);
    }

    #[test]
    fn rejects_malformed_grids() {
        assert!(Layout::parse("x", "XXP\nO.\n").is_err());
        assert!(Layout::parse("x", "XXXX\nX..X\nXXXX\n").is_err());
        assert!(Layout::parse("x", "XPX\nO?D\nXSX\n").is_err());
    }

    #[test]
    fn starts_default_to_first_floor_cells() {
        let l = Layout::parse("t", "XPXX\nO..D\nXXSX\n").unwrap();
        assert_eq!(l.starts, [(1, 1), (1, 2)]);
    }

    #[test]
    fn loads_from_file() {
        let dir = std::env::temp_dir().join(format!("tbs-layout-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tiny.layout");
        std::fs::write(&path, "XPXX\nO12D\nXXSX\n").unwrap();
        let l = Layout::load(path.to_str().unwrap()).unwrap();
        assert_eq!(l.name, "tiny");
        assert_eq!(l.starts, [(1, 1), (1, 2)]);
        assert!(Layout::load("/definitely/not/here.layout").is_err());
    }
}
