use std::path::PathBuf;

use mail_bridge::protocol::{Command, ControlFrame, EpisodeStatus, Frame, InputFrame};
use mail_bridge::session::{Session, SessionConfig, SessionError};
use mail_core::arena::{mask_of, parse_trace, script_mask, Action, Arena, EnvConfig, N_ACTIONS};
use mail_core::expert_data::{DemoDataset, Source};
use mail_core::policy::ActionMask;

fn arena() -> Arena {
    Arena::new(EnvConfig::default()).unwrap()
}

fn control(command: Command) -> Frame {
    Frame::Control(ControlFrame { command })
}

fn input(mask: &ActionMask) -> Frame {
    Frame::Input(InputFrame::from_mask(mask))
}

fn session(seed: u64, out: Option<PathBuf>) -> Session {
    Session::new(
        arena(),
        SessionConfig {
            seed,
            out_path: out,
            ..Default::default()
        },
    )
}

fn golden() -> Vec<f64> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/data/golden_trace_seed42.txt");
    parse_trace(&std::fs::read_to_string(path).unwrap())
        .unwrap()
        .into_iter()
        .map(|r| r.reward)
        .collect()
}

#[test]
fn nothing_moves_before_start() {
    let mut s = session(0, None);
    assert_eq!(s.status(), EpisodeStatus::Idle);
    assert!(!s.step().unwrap());
    assert_eq!(s.tick(), 0);
    s.handle(control(Command::Start)).unwrap();
    assert!(s.step().unwrap());
    s.handle(control(Command::Pause)).unwrap();
    assert!(!s.step().unwrap());
    assert_eq!(s.world().step, 1);
}

#[test]
fn all_zero_client_idles_until_episode_end() {
    let a = arena();
    let (mut mirror, _) = a.reset(5);
    let zeros = ActionMask::zeros(N_ACTIONS);
    let mut expected = 0;
    loop {
        expected += 1;
        if a.step(&mut mirror, &zeros).unwrap().done {
            break;
        }
    }
    let mut s = session(5, None);
    s.handle(control(Command::Start)).unwrap();
    while s.status() == EpisodeStatus::Running {
        s.handle(input(&zeros)).unwrap();
        s.step().unwrap();
    }
    assert_eq!(s.status(), EpisodeStatus::Ended);
    assert_eq!(s.tick(), expected);
    let ds = s.dataset();
    assert_eq!(ds.episodes.len(), 1);
    let ep = &ds.episodes[0];
    assert_eq!(ep.samples.len() as u64, expected);
    assert!(ep.samples.iter().all(|x| x.mask == zeros));
    assert!(ep.samples.last().unwrap().terminal);
    assert_eq!(ep.score, mirror.score);
    assert!(!s.step().unwrap());
}

#[test]
fn scripted_inputs_reproduce_golden_rewards() {
    let want = golden();
    let mut s = session(42, None);
    s.handle(control(Command::Start)).unwrap();
    let mut cumulative = 0.0;
    for (t, r) in want.iter().enumerate() {
        s.handle(input(&script_mask(t as u32))).unwrap();
        assert!(s.step().unwrap());
        cumulative += r;
        assert_eq!(s.world().score, cumulative, "step {t}");
    }
}

#[test]
fn held_keys_produce_matching_bits() {
    let held = mask_of(&[Action::Forward, Action::StrafeLeft, Action::Fire]);
    let frame = InputFrame::from_mask(&held);
    assert_eq!(frame.mask, "1010001");
    assert_eq!(frame.to_mask().unwrap().count_ones(), 3);
}

#[test]
fn replaying_recorded_inputs_reproduces_rewards() {
    let mut s = session(9, None);
    s.handle(control(Command::Start)).unwrap();
    let mut t = 0u32;
    while s.status() == EpisodeStatus::Running {
        s.handle(input(&script_mask(t * 3 + 1))).unwrap();
        s.step().unwrap();
        t += 1;
    }
    let ep = s.dataset().episodes[0].clone();
    let mut replay = session(9, None);
    replay.handle(control(Command::Start)).unwrap();
    let mut score = 0.0;
    for sample in &ep.samples {
        let wire = wire_frame(&sample.mask);
        let before = replay.world().score;
        replay.handle(wire).unwrap();
        replay.step().unwrap();
        assert_eq!(replay.world().score - before, sample.reward);
        score += sample.reward;
    }
    assert_eq!(replay.status(), EpisodeStatus::Ended);
    assert!((score - ep.score).abs() < 1e-9);
}

fn wire_frame(mask: &ActionMask) -> Frame {
    let text = mail_bridge::encode(&input(mask));
    mail_bridge::decode(&text).unwrap()
}

#[test]
fn bad_frames_are_protocol_errors() {
    let mut s = session(0, None);
    let err = s
        .handle(Frame::Input(InputFrame { mask: "11".into() }))
        .unwrap_err();
    assert!(matches!(err, SessionError::Protocol(_)));
    let state = Frame::State(s.snapshot());
    assert!(matches!(s.handle(state), Err(SessionError::Protocol(_))));
}

#[test]
fn reset_discards_partial_episode_by_default() {
    let mut s = session(3, None);
    s.handle(control(Command::Start)).unwrap();
    for _ in 0..10 {
        s.step().unwrap();
    }
    s.handle(control(Command::Reset)).unwrap();
    assert_eq!(s.world().step, 0);
    assert!(s.dataset().episodes.is_empty());
    assert_eq!(s.snapshot().episode, 1);
}

#[test]
fn partial_episode_kept_on_disconnect_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("partial.mdemo");
    let mut s = Session::new(
        arena(),
        SessionConfig {
            seed: 3,
            keep_partials: true,
            out_path: Some(path.clone()),
            ..Default::default()
        },
    );
    s.handle(control(Command::Start)).unwrap();
    for _ in 0..10 {
        s.step().unwrap();
    }
    s.disconnect().unwrap();
    assert_eq!(s.status(), EpisodeStatus::Idle);
    let ds = DemoDataset::load(&path).unwrap();
    assert_eq!(ds.meta.source, Source::Human);
    assert_eq!(ds.episodes.len(), 1);
    assert_eq!(ds.episodes[0].samples.len(), 10);
    assert!(ds.episodes[0].samples[9].terminal);
    ds.check_terminals().unwrap();
}

#[test]
fn finished_episodes_are_saved_and_next_start_moves_on() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.mdemo");
    let mut s = session(1, Some(path.clone()));
    for episode in 0..2 {
        s.handle(control(Command::Start)).unwrap();
        assert_eq!(s.snapshot().episode, episode);
        while s.status() == EpisodeStatus::Running {
            s.step().unwrap();
        }
    }
    let ds = DemoDataset::load(&path).unwrap();
    assert_eq!(ds.episodes.len(), 2);
    assert_eq!(ds.n_samples(), s.tick() as usize);
}
