//! Egocentric observations: a rotated 7x7 crop around the agent, stacked
//! over the last four frames.
//!
//! Frames are stored compactly (one byte per cell) so replay buffers stay
//! small; [`Observation::to_vector`] expands to the one-hot float layout
//! the networks consume.

use super::{DomainSpec, Heading, Tile, WorldState};

/// Crop side length. The agent sits at the center cell.
pub const CROP: usize = 7;
const HALF: i64 = (CROP as i64 - 1) / 2;
/// One-hot channels per cell, one per tile category.
pub const CHANNELS: usize = 6;
/// Floats per decoded frame: cell one-hots plus heading and carrying.
pub const FRAME_LEN: usize = CHANNELS * CROP * CROP + 2;
/// Frames in an observation stack.
pub const STACK: usize = 4;
/// Total decoded observation length.
pub const OBS_LEN: usize = STACK * FRAME_LEN;

/// One rendered frame in compact form: tile category per crop cell
/// (row-major, facing direction toward row 0), plus heading and carrying.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Frame {
    pub cells: [u8; CROP * CROP],
    pub heading: u8,
    pub carrying: u8,
}

/// The last [`STACK`] frames, newest last. At episode start the initial
/// frame fills all four slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Observation {
    pub frames: [Frame; STACK],
}

impl Observation {
    pub(crate) fn initial(frame: Frame) -> Self {
        Observation {
            frames: [frame; STACK],
        }
    }

    /// Shifts the stack left and appends the newest frame.
    pub(crate) fn push(&self, frame: Frame) -> Self {
        let mut frames = self.frames;
        frames.rotate_left(1);
        frames[STACK - 1] = frame;
        Observation { frames }
    }

    /// Decodes to the network input layout: per frame, per cell a one-hot
    /// tile encoding, then heading scaled to [0, 1] and the carrying flag.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; OBS_LEN];
        for (f, frame) in self.frames.iter().enumerate() {
            let base = f * FRAME_LEN;
            for (c, &tile) in frame.cells.iter().enumerate() {
                v[base + c * CHANNELS + tile as usize] = 1.0;
            }
            v[base + CHANNELS * CROP * CROP] = frame.heading as f64 / 3.0;
            v[base + CHANNELS * CROP * CROP + 1] = frame.carrying as f64;
        }
        v
    }
}

/// Maps a crop offset to a world offset. di = -HALF is the row furthest
/// ahead of the agent, dj = -HALF the column at its far left.
fn rotate(heading: Heading, di: i64, dj: i64) -> (i64, i64) {
    match heading {
        Heading::North => (di, dj),
        Heading::East => (dj, -di),
        Heading::South => (-di, -dj),
        Heading::West => (-dj, di),
    }
}

/// Renders the crop around the agent, rotated so the facing direction
/// points toward the top of the crop. Out-of-bounds cells render as wall;
/// consumed items and broken doors render as floor.
pub(crate) fn render_frame(spec: &DomainSpec, state: &WorldState) -> Frame {
    let mut cells = [0u8; CROP * CROP];
    for di in -HALF..=HALF {
        for dj in -HALF..=HALF {
            let (dr, dc) = rotate(state.heading, di, dj);
            let r = state.row as i64 + dr;
            let c = state.col as i64 + dc;
            let tile = spec.effective_tile(state, r, c);
            let idx = ((di + HALF) * CROP as i64 + (dj + HALF)) as usize;
            cells[idx] = tile.channel() as u8;
        }
    }
    Frame {
        cells,
        heading: state.heading.index() as u8,
        carrying: state.carrying as u8,
    }
}

impl Tile {
    /// One-hot channel index, also the compact byte encoding.
    pub fn channel(self) -> usize {
        match self {
            Tile::Wall => 0,
            Tile::Floor => 1,
            Tile::Exit => 2,
            Tile::Item => 3,
            Tile::Door => 4,
            Tile::Goal => 5,
        }
    }
}
