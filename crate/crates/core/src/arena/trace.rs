//! Reference trajectories: one line per step, `step mask reward state_hash`.

use super::world::{Arena, N_ACTIONS};
use crate::error::{Error, Result};
use crate::policy::ActionMask;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: u32,
    pub mask: ActionMask,
    pub reward: f64,
    pub state_hash: u64,
}

/// Deterministic action script used for reference traces.
pub fn script_mask(t: u32) -> ActionMask {
    ActionMask::from_code(N_ACTIONS, (t as u64 * 37 + 11) % (1 << N_ACTIONS))
}

/// Plays `script` from `reset(seed)` for up to `steps` steps.
pub fn run_trace(
    arena: &Arena,
    seed: u64,
    steps: u32,
    script: impl Fn(u32) -> ActionMask,
) -> Result<Vec<TraceRecord>> {
    let (mut state, _) = arena.reset(seed);
    let mut out = Vec::new();
    for t in 0..steps {
        let mask = script(t);
        let o = arena.step(&mut state, &mask)?;
        out.push(TraceRecord {
            step: state.step,
            mask,
            reward: o.reward,
            state_hash: state.state_hash(),
        });
        if o.done {
            break;
        }
    }
    Ok(out)
}

pub fn format_trace(records: &[TraceRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&format!(
            "{} {} {} {:016x}\n",
            r.step, r.mask, r.reward, r.state_hash
        ));
    }
    s
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>> {
    let bad = |n: usize, what: &str| Error::Config(format!("trace line {}: {what}", n + 1));
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad(n, "expected 4 fields"));
            }
            Ok(TraceRecord {
                step: f[0].parse().map_err(|_| bad(n, "step"))?,
                mask: f[1].parse()?,
                reward: f[2].parse().map_err(|_| bad(n, "reward"))?,
                state_hash: u64::from_str_radix(f[3], 16).map_err(|_| bad(n, "hash"))?,
            })
        })
        .collect()
}
