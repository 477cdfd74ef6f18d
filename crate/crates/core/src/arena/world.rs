use std::hash::Hasher;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::EnvConfig;
use super::observe::{observe, ObservationFrame};
use crate::error::{Error, Result};
use crate::policy::ActionMask;

pub const N_ACTIONS: usize = 7;

/// Primitive action indices within a mask, in the order they appear on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Action {
    Forward = 0,
    Back = 1,
    StrafeLeft = 2,
    StrafeRight = 3,
    TurnLeft = 4,
    TurnRight = 5,
    Fire = 6,
}

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [
        Action::Forward,
        Action::Back,
        Action::StrafeLeft,
        Action::StrafeRight,
        Action::TurnLeft,
        Action::TurnRight,
        Action::Fire,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::Back => "back",
            Action::StrafeLeft => "strafe_left",
            Action::StrafeRight => "strafe_right",
            Action::TurnLeft => "turn_left",
            Action::TurnRight => "turn_right",
            Action::Fire => "fire",
        }
    }
}

/// Builds a mask from a list of actions.
pub fn mask_of(actions: &[Action]) -> ActionMask {
    let mut m = ActionMask::zeros(N_ACTIONS);
    for &a in actions {
        m.set(a as usize, true);
    }
    m
}

/// Unit steps for the eight facings, clockwise from north. `y` grows southward.
pub const DIRECTIONS: [(i32, i32); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize,
)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    pub fn chebyshev(self, other: Cell) -> i32 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }

    pub fn dist2(self, other: Cell) -> i32 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PickupKind {
    Health,
    Ammo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Enemy {
    pub pos: Cell,
    pub health: i32,
    pub wave: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pickup {
    pub pos: Cell,
    pub kind: PickupKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub center: Cell,
    pub radius: i32,
}

impl Roi {
    pub fn contains(&self, c: Cell) -> bool {
        self.center.chebyshev(c) <= self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Projectile {
    pub pos: Cell,
    pub facing: u8,
    pub travelled: i32,
}

/// Complete dynamic state of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub agent: Cell,
    /// Index into [`DIRECTIONS`].
    pub facing: u8,
    pub health: i32,
    pub ammo: i32,
    pub enemies: Vec<Enemy>,
    pub pickups: Vec<Pickup>,
    pub roi: Roi,
    pub projectiles: Vec<Projectile>,
    pub step: u32,
    pub waves_spawned: u32,
    pub score: f64,
    pub done: bool,
    pub rng: ChaCha8Rng,
}

impl WorldState {
    /// FNV-1a digest of every field, including the RNG position.
    pub fn state_hash(&self) -> u64 {
        let mut h = FnvHasher::default();
        let mut put = |v: i64| h.write_i64(v);
        put(self.agent.x as i64);
        put(self.agent.y as i64);
        put(self.facing as i64);
        put(self.health as i64);
        put(self.ammo as i64);
        put(self.step as i64);
        put(self.waves_spawned as i64);
        put(self.done as i64);
        put(self.score.to_bits() as i64);
        put(self.roi.center.x as i64);
        put(self.roi.center.y as i64);
        put(self.roi.radius as i64);
        put(self.enemies.len() as i64);
        for e in &self.enemies {
            put(e.pos.x as i64);
            put(e.pos.y as i64);
            put(e.health as i64);
            put(e.wave as i64);
        }
        put(self.pickups.len() as i64);
        for p in &self.pickups {
            put(p.pos.x as i64);
            put(p.pos.y as i64);
            put(p.kind as i64);
        }
        put(self.projectiles.len() as i64);
        for p in &self.projectiles {
            put(p.pos.x as i64);
            put(p.pos.y as i64);
            put(p.facing as i64);
            put(p.travelled as i64);
        }
        let word = self.rng.get_word_pos();
        put(word as i64);
        put((word >> 64) as i64);
        h.finish()
    }

    pub fn features(&self, config: &EnvConfig) -> [f64; 2] {
        [
            self.health as f64 / config.max_health as f64,
            self.ammo as f64 / config.max_ammo as f64,
        ]
    }
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub frame: ObservationFrame,
    pub reward: f64,
    pub done: bool,
    pub events: StepEvents,
}

/// Counts of the reward-bearing events in one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepEvents {
    pub kills: u32,
    pub pickups: u32,
    pub in_roi: bool,
    pub died: bool,
    pub moved: bool,
    pub fired: bool,
}

/// Static arena geometry plus the transition rules.
#[derive(Debug, Clone, PartialEq)]
pub struct Arena {
    config: EnvConfig,
    walls: Vec<bool>,
}

impl Arena {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let mut walls = vec![false; (config.width * config.height) as usize];
        for r in &config.walls {
            for y in r.y..r.y + r.h {
                for x in r.x..r.x + r.w {
                    if x >= 0 && y >= 0 && x < config.width && y < config.height {
                        walls[(y * config.width + x) as usize] = true;
                    }
                }
            }
        }
        if walls.iter().all(|&w| w) {
            return Err(Error::Config("arena has no open cells".into()));
        }
        Ok(Self { config, walls })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.config.width && c.y < self.config.height
    }

    /// Off-grid cells count as walls.
    pub fn is_wall(&self, c: Cell) -> bool {
        !self.in_bounds(c) || self.walls[(c.y * self.config.width + c.x) as usize]
    }

    /// Open, on-grid and unoccupied by an enemy.
    pub fn is_free(&self, state: &WorldState, c: Cell) -> bool {
        !self.is_wall(c) && !state.enemies.iter().any(|e| e.pos == c)
    }

    pub fn reset(&self, seed: u64) -> (WorldState, ObservationFrame) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = self.random_open_cell(&mut rng, |_| true);
        let facing = rng.random_range(0..8u8);
        let mut state = WorldState {
            agent,
            facing,
            health: self.config.max_health,
            ammo: self.config.max_ammo / 2,
            enemies: Vec::new(),
            pickups: Vec::new(),
            roi: Roi {
                center: agent,
                radius: self.config.roi_radius,
            },
            projectiles: Vec::new(),
            step: 0,
            waves_spawned: 0,
            score: 0.0,
            done: false,
            rng,
        };
        self.relocate(&mut state);
        self.spawn_wave(&mut state);
        let frame = observe(self, &state);
        (state, frame)
    }

    pub fn observe(&self, state: &WorldState) -> ObservationFrame {
        observe(self, state)
    }

    /// Applies one joint action. Resolution order: turn, move, collect,
    /// fire, projectiles, enemies, ROI, clock, death/horizon, then the
    /// periodic relocation and wave spawns.
    pub fn step(&self, state: &mut WorldState, mask: &ActionMask) -> Result<StepOutcome> {
        if mask.len() != N_ACTIONS {
            return Err(Error::Config(format!(
                "action mask has {} entries, arena expects {N_ACTIONS}",
                mask.len()
            )));
        }
        if state.done {
            return Err(Error::Config("step called on a finished episode".into()));
        }
        let cfg = &self.config;
        let on = |a: Action| mask.get(a as usize) as i32;
        let mut ev = StepEvents::default();
        let mut reward = 0.0;

        let turn = on(Action::TurnRight) - on(Action::TurnLeft);
        state.facing = (state.facing as i32 + turn).rem_euclid(8) as u8;

        let fwd = on(Action::Forward) - on(Action::Back);
        let strafe = on(Action::StrafeRight) - on(Action::StrafeLeft);
        let (dx, dy) = displacement(state.facing, fwd, strafe);
        if (dx, dy) != (0, 0) {
            let target = state.agent.offset(dx, dy);
            if self.is_free(state, target) {
                state.agent = target;
                ev.moved = true;
            }
        }

        if let Some(i) = state.pickups.iter().position(|p| p.pos == state.agent) {
            let p = state.pickups.remove(i);
            match p.kind {
                PickupKind::Health => {
                    state.health = (state.health + cfg.health_pickup_amount).min(cfg.max_health)
                }
                PickupKind::Ammo => {
                    state.ammo = (state.ammo + cfg.ammo_pickup_amount).min(cfg.max_ammo)
                }
            }
            ev.pickups += 1;
            reward += cfg.rewards.pickup;
        }

        if on(Action::Fire) == 1 && state.ammo > 0 {
            state.ammo -= 1;
            state.projectiles.push(Projectile {
                pos: state.agent,
                facing: state.facing,
                travelled: 0,
            });
            ev.fired = true;
        }

        ev.kills += self.advance_projectiles(state);
        reward += ev.kills as f64 * cfg.rewards.enemy_killed;

        if state.step.is_multiple_of(cfg.enemy_move_period) {
            self.advance_enemies(state);
        }
        let hits = if state.step.is_multiple_of(cfg.enemy_attack_period) {
            state
                .enemies
                .iter()
                .filter(|e| e.pos.chebyshev(state.agent) <= 1)
                .count() as i32
        } else {
            0
        };
        state.health = (state.health - hits * cfg.enemy_damage).max(0);

        if state.roi.contains(state.agent) {
            ev.in_roi = true;
            reward += cfg.rewards.roi_step;
        }

        state.step += 1;
        if state.health == 0 {
            ev.died = true;
            reward += cfg.rewards.death;
            state.done = true;
        } else if state.step >= cfg.horizon {
            state.done = true;
        }
        if !state.done {
            if state.step.is_multiple_of(cfg.relocate_period) {
                self.relocate(state);
            }
            if state.step.is_multiple_of(cfg.wave_period) {
                self.spawn_wave(state);
            }
        }

        state.score += reward;
        Ok(StepOutcome {
            frame: observe(self, state),
            reward,
            done: state.done,
            events: ev,
        })
    }

    fn advance_projectiles(&self, state: &mut WorldState) -> u32 {
        let mut kills = 0;
        let mut projectiles = std::mem::take(&mut state.projectiles);
        let mut hit =
            |enemies: &mut Vec<Enemy>, c: Cell| match enemies.iter().position(|e| e.pos == c) {
                Some(i) => {
                    enemies[i].health -= 1;
                    if enemies[i].health <= 0 {
                        enemies.remove(i);
                        kills += 1;
                    }
                    true
                }
                None => false,
            };
        projectiles.retain_mut(|p| {
            // an enemy may have stepped onto the projectile since the last step
            if hit(&mut state.enemies, p.pos) {
                return false;
            }
            let (dx, dy) = DIRECTIONS[p.facing as usize];
            for _ in 0..self.config.projectile_speed {
                let next = p.pos.offset(dx, dy);
                p.travelled += 1;
                if self.is_wall(next) {
                    return false;
                }
                p.pos = next;
                if hit(&mut state.enemies, next) {
                    return false;
                }
                if p.travelled >= self.config.projectile_range {
                    return false;
                }
            }
            true
        });
        state.projectiles = projectiles;
        kills
    }

    fn advance_enemies(&self, state: &mut WorldState) {
        for i in 0..state.enemies.len() {
            let pos = state.enemies[i].pos;
            if pos.chebyshev(state.agent) <= 1 {
                continue;
            }
            let sx = (state.agent.x - pos.x).signum();
            let sy = (state.agent.y - pos.y).signum();
            for (dx, dy) in [(sx, sy), (sx, 0), (0, sy)] {
                if (dx, dy) == (0, 0) {
                    continue;
                }
                let next = pos.offset(dx, dy);
                if next != state.agent && self.is_free(state, next) {
                    state.enemies[i].pos = next;
                    break;
                }
            }
        }
    }

    fn random_open_cell(&self, rng: &mut ChaCha8Rng, accept: impl Fn(Cell) -> bool) -> Cell {
        let open: Vec<Cell> = (0..self.config.height)
            .flat_map(|y| (0..self.config.width).map(move |x| Cell::new(x, y)))
            .filter(|&c| !self.is_wall(c))
            .collect();
        let preferred: Vec<Cell> = open.iter().copied().filter(|&c| accept(c)).collect();
        let pool = if preferred.is_empty() {
            &open
        } else {
            &preferred
        };
        pool[rng.random_range(0..pool.len())]
    }

    /// Redraws every pickup (restoring collected ones) and the ROI centre.
    fn relocate(&self, state: &mut WorldState) {
        let cfg = &self.config;
        let mut rng = state.rng.clone();
        let agent = state.agent;
        state.roi = Roi {
            center: self.random_open_cell(&mut rng, |_| true),
            radius: cfg.roi_radius,
        };
        let mut pickups: Vec<Pickup> = Vec::new();
        let kinds = std::iter::repeat_n(PickupKind::Health, cfg.health_pickups)
            .chain(std::iter::repeat_n(PickupKind::Ammo, cfg.ammo_pickups));
        for kind in kinds {
            let pos = self.random_open_cell(&mut rng, |c| {
                c != agent && !pickups.iter().any(|p| p.pos == c)
            });
            pickups.push(Pickup { pos, kind });
        }
        state.pickups = pickups;
        state.rng = rng;
    }

    fn spawn_wave(&self, state: &mut WorldState) {
        let cfg = &self.config;
        let mut rng = state.rng.clone();
        let wave = state.waves_spawned;
        let room = cfg.max_enemies.saturating_sub(state.enemies.len());
        for _ in 0..cfg.wave_size.min(room) {
            let agent = state.agent;
            let taken: Vec<Cell> = state.enemies.iter().map(|e| e.pos).collect();
            let pos = self.random_open_cell(&mut rng, |c| {
                c.chebyshev(agent) >= cfg.enemy_spawn_distance && !taken.contains(&c)
            });
            if pos == agent || taken.contains(&pos) {
                continue;
            }
            state.enemies.push(Enemy {
                pos,
                health: cfg.enemy_health,
                wave,
            });
        }
        state.waves_spawned += 1;
        state.rng = rng;
    }
}

/// World displacement for forward/strafe intents under `facing`, clamped to
/// one king move.
pub fn displacement(facing: u8, fwd: i32, strafe: i32) -> (i32, i32) {
    let (fx, fy) = DIRECTIONS[facing as usize];
    let (rx, ry) = DIRECTIONS[(facing as usize + 2) % 8];
    (
        (fwd * fx + strafe * rx).clamp(-1, 1),
        (fwd * fy + strafe * ry).clamp(-1, 1),
    )
}
