//! Plain-text domain maps.
//!
//! A map file is a header of `key: value` lines followed by the tile grid.
//! Grid characters: `#` wall, `.` floor, `E` exit, `I` item, `D` door,
//! `G` goal pad, `S` spawnable floor. If any `S` appears, spawning is
//! restricted to those cells; otherwise every floor cell is spawnable.
//!
//! Header keys: `name`, `limit`, `task` (required); `goal: ROW COL`
//! (required for `reach_exit` when the grid has several exits), `carry`,
//! `bonus`, `step_reward`, `goal_reward` (optional). Unknown keys are
//! rejected with their line number.

use std::path::Path;

use crate::env::{DomainSpec, TaskKind, Tile, GOAL_REWARD, STEP_REWARD};
use crate::error::{Error, Result};

const GRID_CHARS: &str = "#.EIDGS";

/// Reads and parses a map file from disk.
pub fn load_map_file(path: &Path) -> Result<DomainSpec> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_map(&text, &path.display().to_string())
}

/// Parses map text. `origin` names the source in error messages.
pub fn parse_map(text: &str, origin: &str) -> Result<DomainSpec> {
    let fail = |reason: String| Error::InvalidMap {
        path: origin.to_string(),
        reason,
    };

    let mut name = None;
    let mut limit = None;
    let mut task_name: Option<String> = None;
    let mut goal_pos: Option<(usize, usize)> = None;
    let mut carry = false;
    let mut bonus = 0.0;
    let mut step_reward = STEP_REWARD;
    let mut goal_reward = GOAL_REWARD;

    let mut grid: Vec<Vec<char>> = Vec::new();
    let mut grid_done = false;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end();
        if line.trim().is_empty() {
            if !grid.is_empty() {
                grid_done = true;
            }
            continue;
        }
        let is_grid_row = line.chars().all(|c| GRID_CHARS.contains(c));
        if is_grid_row {
            if grid_done {
                return Err(fail(format!("line {lineno}: grid rows must be contiguous")));
            }
            grid.push(line.chars().collect());
            continue;
        }
        if !grid.is_empty() {
            return Err(fail(format!("line {lineno}: content after the grid")));
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| fail(format!("line {lineno}: expected 'key: value' or a grid row")))?;
        let value = value.trim();
        match key.trim() {
            "name" => name = Some(value.to_string()),
            "limit" => {
                let n: u32 = value
                    .parse()
                    .map_err(|_| fail(format!("line {lineno}: limit must be a positive integer")))?;
                if n == 0 {
                    return Err(fail(format!("line {lineno}: limit must be positive")));
                }
                limit = Some(n);
            }
            "task" => task_name = Some(value.to_string()),
            "goal" => {
                let mut parts = value.split_whitespace();
                let row = parts.next().and_then(|v| v.parse().ok());
                let col = parts.next().and_then(|v| v.parse().ok());
                match (row, col, parts.next()) {
                    (Some(r), Some(c), None) => goal_pos = Some((r, c)),
                    _ => return Err(fail(format!("line {lineno}: goal expects 'ROW COL'"))),
                }
            }
            "carry" => {
                carry = match value {
                    "1" | "true" => true,
                    "0" | "false" => false,
                    _ => return Err(fail(format!("line {lineno}: carry must be 0 or 1"))),
                }
            }
            "bonus" => {
                bonus = value
                    .parse()
                    .map_err(|_| fail(format!("line {lineno}: bonus must be a number")))?;
            }
            "step_reward" => {
                step_reward = value
                    .parse()
                    .map_err(|_| fail(format!("line {lineno}: step_reward must be a number")))?;
            }
            "goal_reward" => {
                goal_reward = value
                    .parse()
                    .map_err(|_| fail(format!("line {lineno}: goal_reward must be a number")))?;
            }
            other => {
                return Err(fail(format!("line {lineno}: unknown header key '{other}'")));
            }
        }
    }

    let name = name.ok_or_else(|| fail("missing 'name' header".into()))?;
    let limit = limit.ok_or_else(|| fail("missing 'limit' header".into()))?;
    let task_name = task_name.ok_or_else(|| fail("missing 'task' header".into()))?;
    if grid.is_empty() {
        return Err(fail("map has no grid".into()));
    }

    let rows = grid.len();
    let cols = grid[0].len();
    for (i, row) in grid.iter().enumerate() {
        if row.len() != cols {
            return Err(fail(format!(
                "grid is not rectangular: row {} has {} tiles, expected {cols}",
                i + 1,
                row.len()
            )));
        }
    }

    let mut tiles = Vec::with_capacity(rows * cols);
    let mut spawn_marks = Vec::new();
    let mut floors = Vec::new();
    let mut exits = Vec::new();
    let mut items = Vec::new();
    let mut doors = Vec::new();
    let mut goals = Vec::new();
    for (r, row) in grid.iter().enumerate() {
        for (c, &ch) in row.iter().enumerate() {
            let tile = match ch {
                '#' => Tile::Wall,
                '.' => Tile::Floor,
                'S' => {
                    spawn_marks.push((r, c));
                    Tile::Floor
                }
                'E' => {
                    exits.push((r, c));
                    Tile::Exit
                }
                'I' => {
                    items.push((r, c));
                    Tile::Item
                }
                'D' => {
                    doors.push((r, c));
                    Tile::Door
                }
                'G' => {
                    goals.push((r, c));
                    Tile::Goal
                }
                _ => unreachable!("grid rows are pre-filtered to legend characters"),
            };
            if tile == Tile::Floor {
                floors.push((r, c));
            }
            tiles.push(tile);
        }
    }

    if items.len() > 1 || doors.len() > 1 || goals.len() > 1 {
        return Err(fail("at most one item, door, and goal pad are supported".into()));
    }

    let spawn_cells = if spawn_marks.is_empty() { floors } else { spawn_marks };
    if spawn_cells.is_empty() {
        return Err(fail("no spawnable floor cell".into()));
    }

    let task = match task_name.as_str() {
        "reach_exit" => {
            let target = match (exits.as_slice(), goal_pos) {
                ([], _) => return Err(fail("task reach_exit needs an 'E' tile".into())),
                ([only], None) => *only,
                (_, None) => {
                    return Err(fail(
                        "several exits in the grid; add 'goal: ROW COL' to pick the terminal one"
                            .into(),
                    ))
                }
                (_, Some(pos)) => {
                    if !exits.contains(&pos) {
                        return Err(fail(format!(
                            "goal ({}, {}) is not an 'E' tile",
                            pos.0, pos.1
                        )));
                    }
                    pos
                }
            };
            TaskKind::ReachExit {
                row: target.0,
                col: target.1,
            }
        }
        "pickup" => {
            if items.is_empty() {
                return Err(fail("task pickup needs an 'I' tile".into()));
            }
            TaskKind::Pickup
        }
        "break" => {
            if doors.is_empty() {
                return Err(fail("task break needs a 'D' tile".into()));
            }
            TaskKind::Break
        }
        "place" => {
            if goals.is_empty() {
                return Err(fail("task place needs a 'G' tile".into()));
            }
            if !carry && items.is_empty() {
                return Err(fail(
                    "task place needs either 'carry: 1' or an 'I' tile to pick up".into(),
                ));
            }
            TaskKind::Place
        }
        other => {
            return Err(fail(format!(
                "unknown task '{other}' (expected reach_exit, pickup, break, or place)"
            )))
        }
    };

    if bonus < 0.0 {
        return Err(fail("bonus must be non-negative".into()));
    }
    if bonus > 0.0 && items.is_empty() {
        return Err(fail("bonus requires an 'I' tile".into()));
    }
    if step_reward.abs() > 1.0 || goal_reward.abs() > 1.0 || step_reward.abs() + bonus > 1.0 {
        return Err(fail("rewards must stay within [-1, 1]".into()));
    }
    if goal_reward <= step_reward {
        return Err(fail("goal_reward must exceed step_reward".into()));
    }

    Ok(DomainSpec {
        name,
        rows,
        cols,
        tiles,
        spawn_cells,
        step_limit: limit,
        step_reward,
        goal_reward,
        approach_bonus: bonus,
        task,
        spawn_carrying: carry,
        item_cell: items.first().copied(),
        door_cell: doors.first().copied(),
        goal_cell: goals.first().copied(),
    })
}
