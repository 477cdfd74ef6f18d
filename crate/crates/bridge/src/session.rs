use std::path::PathBuf;

use mail_core::arena::{Arena, ObservationFrame, WorldState, CHANNELS, N_ACTIONS};
use mail_core::expert_data::{DatasetMeta, DemoDataset, Episode, ExpertSample, Source};
use mail_core::policy::ActionMask;

use crate::protocol::{state_frame, Command, EpisodeStatus, Frame, ProtocolError, StateFrame};

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    /// Episode `k` of the session is reset with `seed + k`.
    pub seed: u64,
    /// Keep an unfinished episode when the client disconnects.
    pub keep_partials: bool,
    /// Where recorded episodes are written; `None` keeps them in memory.
    pub out_path: Option<PathBuf>,
    /// Share of recorded episodes marked as held out on save.
    pub heldout_frac: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            keep_partials: false,
            out_path: None,
            heldout_frac: 0.2,
        }
    }
}

/// One client's play session: the environment, the latest key state and the
/// recording buffer. Pure state machine, driven by the server loop.
#[derive(Debug)]
pub struct Session {
    arena: Arena,
    cfg: SessionConfig,
    episode: u32,
    state: WorldState,
    frame: ObservationFrame,
    status: EpisodeStatus,
    tick: u64,
    mask: ActionMask,
    buffer: Vec<ExpertSample>,
    dataset: DemoDataset,
}

impl Session {
    pub fn new(arena: Arena, cfg: SessionConfig) -> Self {
        let (state, frame) = arena.reset(cfg.seed);
        let meta = DatasetMeta {
            source: Source::Human,
            session: format!("bridge-seed-{}", cfg.seed),
            view: arena.config().view_size,
            channels: CHANNELS,
            n_actions: N_ACTIONS,
            n_features: 2,
        };
        Self {
            arena,
            cfg,
            episode: 0,
            state,
            frame,
            status: EpisodeStatus::Idle,
            tick: 0,
            mask: ActionMask::zeros(N_ACTIONS),
            buffer: Vec::new(),
            dataset: DemoDataset::new(meta),
        }
    }

    pub fn status(&self) -> EpisodeStatus {
        self.status
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn world(&self) -> &WorldState {
        &self.state
    }

    pub fn dataset(&self) -> &DemoDataset {
        &self.dataset
    }

    pub fn into_dataset(self) -> DemoDataset {
        self.dataset
    }

    pub fn snapshot(&self) -> StateFrame {
        state_frame(
            &self.arena,
            &self.state,
            &self.frame,
            self.tick,
            self.episode,
            self.status,
            self.dataset.episodes.len(),
        )
    }

    fn next_episode(&mut self) {
        self.episode += 1;
        let (state, frame) = self.arena.reset(self.cfg.seed + self.episode as u64);
        self.state = state;
        self.frame = frame;
        self.buffer.clear();
        self.mask = ActionMask::zeros(N_ACTIONS);
    }

    /// Applies one client frame. Input frames replace the key state; the
    /// mask takes effect on the next tick.
    pub fn handle(&mut self, frame: Frame) -> Result<(), SessionError> {
        match frame {
            Frame::Input(input) => {
                self.mask = input.to_mask()?;
            }
            Frame::Control(c) => match c.command {
                Command::Start => match self.status {
                    EpisodeStatus::Ended => {
                        self.next_episode();
                        self.status = EpisodeStatus::Running;
                    }
                    _ => self.status = EpisodeStatus::Running,
                },
                Command::Pause => {
                    if self.status == EpisodeStatus::Running {
                        self.status = EpisodeStatus::Paused;
                    }
                }
                Command::Reset => {
                    if !self.buffer.is_empty() {
                        self.close_partial();
                    }
                    if self.state.step > 0 {
                        self.next_episode();
                    }
                    self.status = EpisodeStatus::Running;
                }
                Command::Save => self.save()?,
            },
            Frame::State(_) => return Err(ProtocolError::Unexpected("state").into()),
            Frame::Error(_) => return Err(ProtocolError::Unexpected("error").into()),
        }
        Ok(())
    }

    /// Advances one tick with the latest key state if the episode is
    /// running. Returns whether the environment moved.
    pub fn step(&mut self) -> Result<bool, SessionError> {
        if self.status != EpisodeStatus::Running {
            return Ok(false);
        }
        let out = self.arena.step(&mut self.state, &self.mask)?;
        let frame = std::mem::replace(&mut self.frame, out.frame);
        self.buffer.push(ExpertSample {
            features: frame.features.to_vec(),
            frame,
            mask: self.mask.clone(),
            reward: out.reward,
            terminal: out.done,
        });
        self.tick += 1;
        if out.done {
            self.finish_episode();
            self.status = EpisodeStatus::Ended;
            self.save()?;
        }
        Ok(true)
    }

    fn finish_episode(&mut self) {
        let samples = std::mem::take(&mut self.buffer);
        if samples.is_empty() {
            return;
        }
        self.dataset.episodes.push(Episode {
            samples,
            score: self.state.score,
        });
    }

    /// Handles an unfinished episode per `keep_partials`.
    fn close_partial(&mut self) {
        if self.cfg.keep_partials {
            if let Some(last) = self.buffer.last_mut() {
                last.terminal = true;
            }
            self.finish_episode();
        } else {
            self.buffer.clear();
        }
    }

    /// Client went away: the running episode is closed and the recording
    /// flushed.
    pub fn disconnect(&mut self) -> Result<(), SessionError> {
        if !self.buffer.is_empty() {
            self.close_partial();
        }
        if self.state.step > 0 {
            self.next_episode();
        }
        self.status = EpisodeStatus::Idle;
        self.save()
    }

    /// Writes all recorded episodes to the output path, if any.
    pub fn save(&mut self) -> Result<(), SessionError> {
        let Some(path) = self.cfg.out_path.clone() else {
            return Ok(());
        };
        if self.dataset.episodes.is_empty() {
            return Ok(());
        }
        self.dataset
            .split_heldout(self.cfg.heldout_frac, self.cfg.seed.wrapping_add(1));
        self.dataset.save(&path)?;
        log::info!(
            "saved {} episodes ({} samples) to {}",
            self.dataset.episodes.len(),
            self.dataset.n_samples(),
            path.display()
        );
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Core(#[from] mail_core::Error),
}
