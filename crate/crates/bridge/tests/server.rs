use std::net::{SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use mail_bridge::protocol::{Command, ControlFrame, EpisodeStatus, Frame, InputFrame, StateFrame};
use mail_bridge::{decode, encode, ServeConfig, Server, Session};
use mail_core::arena::{parse_trace, script_mask, scripted_expert, Arena, EnvConfig, ExpertConfig};
use mail_core::expert_data::{heldout_action_accuracy, DemoDataset, NetPolicy};
use mail_core::policy::ActionMask;
use mail_core::trainer::{Mode, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn start(seed: u64, out: &Path, max_sessions: usize) -> (SocketAddr, JoinHandle<Session>) {
    let server = Server::bind(ServeConfig {
        addr: "127.0.0.1:0".into(),
        seed,
        out_path: out.to_path_buf(),
        tick_hz: 0.0,
        max_sessions: Some(max_sessions),
        ..Default::default()
    })
    .unwrap();
    let addr = server.local_addr().unwrap();
    (addr, thread::spawn(move || server.run().unwrap()))
}

fn connect(addr: SocketAddr) -> Client {
    let (ws, _) = tungstenite::connect(format!("ws://{addr}")).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    }
    ws
}

fn send(ws: &mut Client, frame: &Frame) {
    ws.send(Message::text(encode(frame))).unwrap();
}

fn recv(ws: &mut Client) -> Option<Frame> {
    loop {
        match ws.read() {
            Ok(Message::Text(t)) => return Some(decode(t.as_str()).unwrap()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => {}
        }
    }
}

fn recv_state(ws: &mut Client) -> StateFrame {
    match recv(ws) {
        Some(Frame::State(s)) => s,
        other => panic!("expected state frame, got {other:?}"),
    }
}

fn control(ws: &mut Client, command: Command) -> StateFrame {
    send(ws, &Frame::Control(ControlFrame { command }));
    recv_state(ws)
}

fn tick(ws: &mut Client, mask: &ActionMask) -> StateFrame {
    send(ws, &Frame::Input(InputFrame::from_mask(mask)));
    recv_state(ws)
}

fn golden_rewards() -> Vec<f64> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/data/golden_trace_seed42.txt");
    parse_trace(&std::fs::read_to_string(path).unwrap())
        .unwrap()
        .into_iter()
        .map(|r| r.reward)
        .collect()
}

#[test]
fn lockstep_replay_matches_golden_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, handle) = start(42, &dir.path().join("g.mdemo"), 1);
    let mut ws = connect(addr);
    let first = recv_state(&mut ws);
    assert_eq!(first.status, EpisodeStatus::Idle);
    assert_eq!(
        control(&mut ws, Command::Start).status,
        EpisodeStatus::Running
    );
    let mut cumulative = 0.0;
    for (t, r) in golden_rewards().iter().enumerate() {
        let s = tick(&mut ws, &script_mask(t as u32));
        cumulative += r;
        assert_eq!(s.tick, t as u64 + 1);
        assert_eq!(s.hud.score, cumulative, "step {t}");
    }
    ws.close(None).unwrap();
    while recv(&mut ws).is_some() {}
    handle.join().unwrap();
}

#[test]
fn second_client_is_turned_away() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, handle) = start(0, &dir.path().join("b.mdemo"), 1);
    let mut first = connect(addr);
    recv_state(&mut first);
    let mut second = connect(addr);
    match recv(&mut second) {
        Some(Frame::Error(e)) => assert!(e.message.contains("busy"), "{}", e.message),
        other => panic!("expected error frame, got {other:?}"),
    }
    assert!(recv(&mut second).is_none());
    assert_eq!(
        control(&mut first, Command::Start).status,
        EpisodeStatus::Running
    );
    first.close(None).unwrap();
    while recv(&mut first).is_some() {}
    handle.join().unwrap();
}

#[test]
fn malformed_frame_gets_error_and_close() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, handle) = start(0, &dir.path().join("m.mdemo"), 1);
    let mut ws = connect(addr);
    recv_state(&mut ws);
    ws.send(Message::text("7:{\"type\"")).unwrap();
    match recv(&mut ws) {
        Some(Frame::Error(_)) => {}
        other => panic!("expected error frame, got {other:?}"),
    }
    assert!(recv(&mut ws).is_none());
    handle.join().unwrap();
}

#[test]
fn wrong_mask_length_gets_error_and_close() {
    let dir = tempfile::tempdir().unwrap();
    let (addr, handle) = start(0, &dir.path().join("w.mdemo"), 1);
    let mut ws = connect(addr);
    recv_state(&mut ws);
    send(
        &mut ws,
        &Frame::Input(InputFrame {
            mask: "1111".into(),
        }),
    );
    match recv(&mut ws) {
        Some(Frame::Error(e)) => assert!(e.message.contains("expected 7"), "{}", e.message),
        other => panic!("expected error frame, got {other:?}"),
    }
    assert!(recv(&mut ws).is_none());
    handle.join().unwrap();
}

#[test]
fn stop_handle_ends_idle_server() {
    let server = Server::bind(ServeConfig {
        addr: "127.0.0.1:0".into(),
        tick_hz: 30.0,
        ..Default::default()
    })
    .unwrap();
    let stop = server.stop_handle();
    let handle = thread::spawn(move || server.run().unwrap());
    thread::sleep(Duration::from_millis(50));
    stop.store(true, Ordering::Relaxed);
    let session = handle.join().unwrap();
    assert_eq!(session.tick(), 0);
}

#[test]
fn scripted_client_recording_trains_imitation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scripted.mdemo");
    let seed = 500;
    let episodes = 4u64;
    let (addr, handle) = start(seed, &out, 1);
    let arena = Arena::new(EnvConfig::default()).unwrap();
    let expert = ExpertConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ws = connect(addr);
    recv_state(&mut ws);
    for k in 0..episodes {
        let (mut mirror, _) = arena.reset(seed + k);
        let s = control(&mut ws, Command::Start);
        assert_eq!(s.episode, k as u32);
        loop {
            let mask = scripted_expert(&arena, &mirror, &expert, &mut rng);
            arena.step(&mut mirror, &mask).unwrap();
            let s = tick(&mut ws, &mask);
            assert_eq!(
                (s.grid.agent.x, s.grid.agent.y),
                (mirror.agent.x, mirror.agent.y)
            );
            assert_eq!(s.hud.score, mirror.score);
            if mirror.done {
                assert_eq!(s.status, EpisodeStatus::Ended);
                assert_eq!(s.saved_episodes, k as usize + 1);
                break;
            }
        }
    }
    ws.close(None).unwrap();
    while recv(&mut ws).is_some() {}
    let session = handle.join().unwrap();
    assert_eq!(session.dataset().episodes.len(), episodes as usize);

    let ds = DemoDataset::load(&out).unwrap();
    ds.check_terminals().unwrap();
    assert_eq!(ds.episodes.len(), episodes as usize);
    assert!(!ds.heldout_indices().is_empty());
    let cfg = TrainConfig {
        mode: Mode::IlOnly,
        seed: 0,
        total_steps: 4_000,
        eval_interval: 4_000,
        eval_episodes: 1,
        ..Default::default()
    };
    let mut trainer = Trainer::new(cfg, EnvConfig::default(), Some(ds.clone())).unwrap();
    let rows = trainer.run(|_| {}).unwrap();
    assert!(rows.last().unwrap().policy_expert.is_finite());
    let acc = heldout_action_accuracy(
        &ds,
        &NetPolicy {
            net: &trainer.net,
            store: &trainer.store,
        },
        trainer.cfg.frame_stack,
        0.5,
    )
    .unwrap();
    assert!((0.0..=1.0).contains(&acc));
}
