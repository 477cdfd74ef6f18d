use rand::Rng;
use serde::{Deserialize, Serialize};

use super::world::{
    displacement, Action, Arena, Cell, PickupKind, WorldState, DIRECTIONS, N_ACTIONS,
};
use crate::policy::ActionMask;

/// Knobs of the scripted demonstrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    /// Seek health when `health / max` is at or below this.
    pub low_health: f64,
    /// Seek ammo when `ammo / max` is at or below this.
    pub low_ammo: f64,
    /// Euclidean radius within which enemies are engaged.
    pub engage_range: f64,
    /// Probability of replacing the chosen mask with a uniformly random one.
    pub epsilon: f64,
    /// Recording only: probability of executing a uniformly random mask
    /// while the expert's own mask is stored as the label.
    pub exec_noise: f64,
    /// Circle the zone centre instead of standing on it.
    pub patrol: bool,
    /// With no enemy in range, turn toward the direction of travel.
    pub face_travel: bool,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            low_health: 0.4,
            low_ammo: 0.25,
            engage_range: 5.0,
            epsilon: 0.0,
            exec_noise: 0.0,
            patrol: true,
            face_travel: true,
        }
    }
}

/// Facing index whose direction best matches the vector `(dx, dy)`; ties go
/// to the lowest index.
pub fn facing_toward(dx: i32, dy: i32) -> Option<u8> {
    if dx == 0 && dy == 0 {
        return None;
    }
    let len = ((dx * dx + dy * dy) as f64).sqrt();
    let mut best = 0u8;
    let mut best_dot = f64::NEG_INFINITY;
    for (i, &(ux, uy)) in DIRECTIONS.iter().enumerate() {
        let ul = ((ux * ux + uy * uy) as f64).sqrt();
        let dot = (dx * ux + dy * uy) as f64 / (len * ul);
        if dot > best_dot + 1e-12 {
            best_dot = dot;
            best = i as u8;
        }
    }
    Some(best)
}

/// Next cell clockwise on the Chebyshev ring of radius 1 around `center`.
fn ring_next(center: Cell, at: Cell) -> Cell {
    let (dx, dy) = (at.x - center.x, at.y - center.y);
    if (dx, dy) == (0, 0) || dx.abs().max(dy.abs()) > 1 {
        return center.offset(0, -1);
    }
    let k = DIRECTIONS
        .iter()
        .position(|&d| d == (dx, dy))
        .expect("ring offsets are compass directions");
    let (nx, ny) = DIRECTIONS[(k + 1) % 8];
    center.offset(nx, ny)
}

fn current_objective(arena: &Arena, state: &WorldState, cfg: &ExpertConfig) -> Cell {
    let env = arena.config();
    let nearest = |kind: PickupKind| {
        state
            .pickups
            .iter()
            .filter(|p| p.kind == kind)
            .min_by_key(|p| p.pos.dist2(state.agent))
            .map(|p| p.pos)
    };
    let health = state.health as f64 / env.max_health as f64;
    let ammo = state.ammo as f64 / env.max_ammo as f64;
    if health <= cfg.low_health {
        if let Some(c) = nearest(PickupKind::Health) {
            return c;
        }
    }
    if ammo <= cfg.low_ammo {
        if let Some(c) = nearest(PickupKind::Ammo) {
            return c;
        }
    }
    let c = state.roi.center;
    if cfg.patrol && state.agent.chebyshev(c) <= 1 {
        return ring_next(c, state.agent);
    }
    c
}

/// King step toward `target`, trying the two neighbouring headings when the
/// direct cell is blocked.
fn step_toward(arena: &Arena, state: &WorldState, target: Cell) -> Option<(i32, i32)> {
    let sx = (target.x - state.agent.x).signum();
    let sy = (target.y - state.agent.y).signum();
    if (sx, sy) == (0, 0) {
        return None;
    }
    let candidates = if sx != 0 && sy != 0 {
        [(sx, sy), (sx, 0), (0, sy)]
    } else if sx != 0 {
        [(sx, 0), (sx, 1), (sx, -1)]
    } else {
        [(0, sy), (1, sy), (-1, sy)]
    };
    candidates
        .into_iter()
        .find(|&(dx, dy)| arena.is_free(state, state.agent.offset(dx, dy)))
}

/// Forward/strafe intents producing world displacement `d` under `facing`.
fn intents_for(facing: u8, d: (i32, i32)) -> (i32, i32) {
    const ORDER: [(i32, i32); 8] = [
        (1, 0),
        (-1, 0),
        (0, -1),
        (0, 1),
        (1, -1),
        (1, 1),
        (-1, -1),
        (-1, 1),
    ];
    ORDER
        .into_iter()
        .find(|&(f, s)| displacement(facing, f, s) == d)
        .unwrap_or((0, 0))
}

/// First enemy along the facing ray within projectile range, stopping at walls.
fn enemy_on_ray(arena: &Arena, state: &WorldState, from: Cell, facing: u8) -> bool {
    let (dx, dy) = DIRECTIONS[facing as usize];
    let mut c = from;
    for _ in 0..arena.config().projectile_range {
        c = c.offset(dx, dy);
        if arena.is_wall(c) {
            return false;
        }
        if state.enemies.iter().any(|e| e.pos == c) {
            return true;
        }
    }
    false
}

/// Heuristic oracle with full state access: heads for its current objective
/// while turning toward and shooting at the nearest enemy in range.
pub fn scripted_expert<R: Rng + ?Sized>(
    arena: &Arena,
    state: &WorldState,
    cfg: &ExpertConfig,
    rng: &mut R,
) -> ActionMask {
    if cfg.epsilon > 0.0 && rng.random::<f64>() < cfg.epsilon {
        return ActionMask::from_code(N_ACTIONS, rng.random_range(0..1u64 << N_ACTIONS));
    }
    let mut mask = ActionMask::zeros(N_ACTIONS);
    let range2 = cfg.engage_range * cfg.engage_range;
    let target = state
        .enemies
        .iter()
        .filter(|e| (e.pos.dist2(state.agent) as f64) <= range2)
        .min_by_key(|e| e.pos.dist2(state.agent));

    let mut facing = state.facing;
    if let Some(e) = target {
        if let Some(want) = facing_toward(e.pos.x - state.agent.x, e.pos.y - state.agent.y) {
            let diff = (want as i32 - facing as i32).rem_euclid(8);
            if (1..=4).contains(&diff) {
                mask.set(Action::TurnRight as usize, true);
                facing = (facing + 1) % 8;
            } else if diff >= 5 {
                mask.set(Action::TurnLeft as usize, true);
                facing = (facing + 7) % 8;
            }
        }
    }

    let mut pos = state.agent;
    let objective = current_objective(arena, state, cfg);
    let step = step_toward(arena, state, objective);
    if let (None, Some(d), true) = (target, step, cfg.face_travel) {
        if let Some(want) = facing_toward(d.0, d.1) {
            let diff = (want as i32 - facing as i32).rem_euclid(8);
            if (1..=4).contains(&diff) {
                mask.set(Action::TurnRight as usize, true);
                facing = (facing + 1) % 8;
            } else if diff >= 5 {
                mask.set(Action::TurnLeft as usize, true);
                facing = (facing + 7) % 8;
            }
        }
    }
    if let Some(d) = step {
        let (f, s) = intents_for(facing, d);
        match f {
            1 => mask.set(Action::Forward as usize, true),
            -1 => mask.set(Action::Back as usize, true),
            _ => {}
        }
        match s {
            1 => mask.set(Action::StrafeRight as usize, true),
            -1 => mask.set(Action::StrafeLeft as usize, true),
            _ => {}
        }
        pos = pos.offset(d.0, d.1);
    }

    if state.ammo > 0 && enemy_on_ray(arena, state, pos, facing) {
        mask.set(Action::Fire as usize, true);
    }
    mask
}
