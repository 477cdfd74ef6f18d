use serde::{Deserialize, Serialize};

/// Axis-aligned block of wall cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WallRect {
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub enemy_killed: f64,
    pub pickup: f64,
    pub roi_step: f64,
    pub death: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            enemy_killed: 1.0,
            pickup: 0.5,
            roi_step: 0.02,
            death: -1.0,
        }
    }
}

/// Static arena parameters. Every field has a default, so config files only
/// need to list overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub width: i32,
    pub height: i32,
    pub walls: Vec<WallRect>,
    pub horizon: u32,
    pub max_health: i32,
    pub max_ammo: i32,
    pub relocate_period: u32,
    pub health_pickups: usize,
    pub ammo_pickups: usize,
    pub health_pickup_amount: i32,
    pub ammo_pickup_amount: i32,
    pub roi_radius: i32,
    pub wave_period: u32,
    pub wave_size: usize,
    pub max_enemies: usize,
    pub enemy_health: i32,
    pub enemy_damage: i32,
    /// Enemies advance on steps that are multiples of this.
    pub enemy_move_period: u32,
    /// Adjacent enemies strike on steps that are multiples of this.
    pub enemy_attack_period: u32,
    /// Minimum Chebyshev distance from the agent for a spawning enemy.
    pub enemy_spawn_distance: i32,
    /// Cells a projectile travels per step.
    pub projectile_speed: i32,
    /// Cells a projectile travels before it expires.
    pub projectile_range: i32,
    /// Side length of the square egocentric view (odd).
    pub view_size: usize,
    pub rewards: RewardConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            width: 24,
            height: 24,
            walls: vec![
                WallRect {
                    x: 5,
                    y: 5,
                    w: 3,
                    h: 2,
                },
                WallRect {
                    x: 16,
                    y: 5,
                    w: 2,
                    h: 3,
                },
                WallRect {
                    x: 5,
                    y: 16,
                    w: 2,
                    h: 3,
                },
                WallRect {
                    x: 15,
                    y: 17,
                    w: 3,
                    h: 2,
                },
            ],
            horizon: 1000,
            max_health: 100,
            max_ammo: 40,
            relocate_period: 150,
            health_pickups: 2,
            ammo_pickups: 2,
            health_pickup_amount: 30,
            ammo_pickup_amount: 15,
            roi_radius: 2,
            wave_period: 120,
            wave_size: 3,
            max_enemies: 9,
            enemy_health: 1,
            enemy_damage: 1,
            enemy_move_period: 2,
            enemy_attack_period: 4,
            enemy_spawn_distance: 8,
            projectile_speed: 2,
            projectile_range: 8,
            view_size: 11,
            rewards: RewardConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::Config(format!("arena: {m}")));
        if self.width < 4 || self.height < 4 {
            return bad("grid must be at least 4x4");
        }
        if self.view_size.is_multiple_of(2) || self.view_size < 3 {
            return bad("view_size must be odd and at least 3");
        }
        if self.horizon == 0
            || self.relocate_period == 0
            || self.wave_period == 0
            || self.enemy_move_period == 0
            || self.enemy_attack_period == 0
        {
            return bad("periods and horizon must be positive");
        }
        if self.max_health <= 0 || self.max_ammo <= 0 || self.enemy_health <= 0 {
            return bad("health, ammo and enemy health maxima must be positive");
        }
        if self.projectile_speed <= 0 || self.projectile_range <= 0 {
            return bad("projectile speed and range must be positive");
        }
        Ok(())
    }
}
