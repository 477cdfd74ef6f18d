use serde::{Deserialize, Serialize};

use super::world::{Arena, Cell, PickupKind, WorldState, DIRECTIONS};

pub const CHANNELS: usize = 6;

/// Channel order of the egocentric tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Channel {
    Walls = 0,
    Enemies = 1,
    HealthPickups = 2,
    AmmoPickups = 3,
    Roi = 4,
    Projectiles = 5,
}

/// Binary `CHANNELS x K x K` occupancy tensor plus the normalised
/// `[health, ammo]` features. Row 0 is the far edge of the view; the agent
/// sits at the centre cell facing up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub view: usize,
    /// Channel-major, then row, then column.
    pub cells: Vec<u8>,
    pub features: [f64; 2],
}

impl ObservationFrame {
    pub fn empty(view: usize) -> Self {
        Self {
            view,
            cells: vec![0; CHANNELS * view * view],
            features: [0.0; 2],
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn index(&self, ch: Channel, row: usize, col: usize) -> usize {
        (ch as usize * self.view + row) * self.view + col
    }

    pub fn get(&self, ch: Channel, row: usize, col: usize) -> bool {
        self.cells[self.index(ch, row, col)] != 0
    }

    fn mark(&mut self, ch: Channel, row: usize, col: usize) {
        let i = self.index(ch, row, col);
        self.cells[i] = 1;
    }

    pub fn count(&self, ch: Channel) -> usize {
        let k = self.view * self.view;
        let start = ch as usize * k;
        self.cells[start..start + k]
            .iter()
            .filter(|&&c| c != 0)
            .count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.cells.iter().map(|&c| c as f64).collect()
    }
}

/// Unit forward and right vectors for `facing` as reals.
fn basis(facing: u8) -> ((f64, f64), (f64, f64)) {
    let norm = |(x, y): (i32, i32)| {
        let l = ((x * x + y * y) as f64).sqrt();
        (x as f64 / l, y as f64 / l)
    };
    (
        norm(DIRECTIONS[facing as usize]),
        norm(DIRECTIONS[(facing as usize + 2) % 8]),
    )
}

struct EgoMap {
    half: i32,
    fwd: (f64, f64),
    right: (f64, f64),
    origin: Cell,
}

impl EgoMap {
    fn new(view: usize, facing: u8, origin: Cell) -> Self {
        let (fwd, right) = basis(facing);
        Self {
            half: (view / 2) as i32,
            fwd,
            right,
            origin,
        }
    }

    /// World cell shown at view position `(row, col)`.
    fn world_at(&self, row: usize, col: usize) -> Cell {
        let f = (self.half - row as i32) as f64;
        let r = (col as i32 - self.half) as f64;
        let x = f * self.fwd.0 + r * self.right.0;
        let y = f * self.fwd.1 + r * self.right.1;
        self.origin.offset(x.round() as i32, y.round() as i32)
    }

    /// Ego coordinates `(forward, right)` of a world cell, unrounded.
    fn ego(&self, c: Cell) -> (f64, f64) {
        let dx = (c.x - self.origin.x) as f64;
        let dy = (c.y - self.origin.y) as f64;
        (
            dx * self.fwd.0 + dy * self.fwd.1,
            dx * self.right.0 + dy * self.right.1,
        )
    }

    fn to_view(&self, f: f64, r: f64) -> Option<(usize, usize)> {
        let (f, r) = (f.round() as i32, r.round() as i32);
        if f.abs() > self.half || r.abs() > self.half {
            return None;
        }
        Some(((self.half - f) as usize, (self.half + r) as usize))
    }

    fn in_view(&self, c: Cell) -> Option<(usize, usize)> {
        let (f, r) = self.ego(c);
        self.to_view(f, r)
    }

    /// In-view position, or the border cell along the bearing for distant cells.
    fn radar(&self, c: Cell) -> (usize, usize) {
        let (f, r) = self.ego(c);
        if let Some(v) = self.to_view(f, r) {
            return v;
        }
        let s = self.half as f64 / f.abs().max(r.abs());
        self.to_view(f * s, r * s)
            .expect("border projection lies inside the view")
    }
}

pub fn observe(arena: &Arena, state: &WorldState) -> ObservationFrame {
    let view = arena.config().view_size;
    let mut frame = ObservationFrame::empty(view);
    frame.features = state.features(arena.config());
    let map = EgoMap::new(view, state.facing, state.agent);

    let mut roi_visible = false;
    for row in 0..view {
        for col in 0..view {
            let w = map.world_at(row, col);
            if arena.is_wall(w) {
                frame.mark(Channel::Walls, row, col);
            }
            if state.roi.contains(w) {
                frame.mark(Channel::Roi, row, col);
                roi_visible = true;
            }
        }
    }
    if !roi_visible {
        let (row, col) = map.radar(state.roi.center);
        frame.mark(Channel::Roi, row, col);
    }
    for e in &state.enemies {
        if let Some((row, col)) = map.in_view(e.pos) {
            frame.mark(Channel::Enemies, row, col);
        }
    }
    for p in &state.projectiles {
        if let Some((row, col)) = map.in_view(p.pos) {
            frame.mark(Channel::Projectiles, row, col);
        }
    }
    for p in &state.pickups {
        let ch = match p.kind {
            PickupKind::Health => Channel::HealthPickups,
            PickupKind::Ammo => Channel::AmmoPickups,
        };
        let (row, col) = map.radar(p.pos);
        frame.mark(ch, row, col);
    }
    frame
}

/// Rolling window of the last `depth` frames, oldest first. A fresh episode
/// fills every slot with its first frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    depth: usize,
    frames: std::collections::VecDeque<ObservationFrame>,
}

impl FrameStack {
    pub fn new(depth: usize, first: &ObservationFrame) -> Self {
        assert!(depth > 0, "frame stack depth must be positive");
        Self {
            depth,
            frames: std::iter::repeat_n(first.clone(), depth).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn reset(&mut self, first: &ObservationFrame) {
        *self = Self::new(self.depth, first);
    }

    pub fn push(&mut self, frame: &ObservationFrame) {
        self.frames.pop_front();
        self.frames.push_back(frame.clone());
    }

    pub fn latest(&self) -> &ObservationFrame {
        self.frames.back().expect("stack is never empty")
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.depth * self.latest().len());
        self.write_stacked(&mut out);
        out
    }

    pub fn write_stacked(&self, out: &mut Vec<f64>) {
        for f in &self.frames {
            out.extend(f.cells.iter().map(|&c| c as f64));
        }
    }

    pub fn features(&self) -> [f64; 2] {
        self.latest().features
    }
}
