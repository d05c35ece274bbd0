use std::time::Duration;

use rollsurf_core::control::{run_sim, Algorithm, ControlParams};
use rollsurf_core::scene::{Preset, Scenario, Scene};
use rollsurf_ctrlnet::*;

fn small_scene(seed: u64) -> Scene {
    let mut s = Scenario::with_frequencies(Preset::Setup1, vec![2.412e9])
        .build(seed)
        .unwrap();
    s.panels.truncate(2);
    for p in &mut s.panels {
        p.rolls.truncate(3);
    }
    s
}

#[test]
fn transports_match_in_process_run() {
    for seed in 0..3 {
        let scene = Scenario::with_frequencies(Preset::Setup1, vec![2.412e9, 5.21e9])
            .build(seed)
            .unwrap();
        let params = ControlParams {
            seed,
            ..Default::default()
        };
        for alg in [Algorithm::Group, Algorithm::Enumerate] {
            let sim = run_sim(alg, &scene, &params).unwrap();
            let (local, _) = run_distributed(alg, &scene, &params, &NetConfig::default()).unwrap();
            let (sock, stats) = run_distributed(alg, &scene, &params, &NetConfig::socket(0)).unwrap();
            assert_eq!(local, sim, "seed {seed} {alg:?}");
            assert_eq!(sock, sim, "seed {seed} {alg:?}");
            assert_eq!(stats.moves_applied, sim.log.moves);
            assert_eq!(stats.traffic.dropped, 0);
        }
    }
}

#[test]
fn several_controllers_route_by_panel() {
    let scene = Scenario::default().build(4).unwrap();
    let params = ControlParams {
        seed: 4,
        ..Default::default()
    };
    let sim = run_sim(Algorithm::Group, &scene, &params).unwrap();
    let cfg = NetConfig {
        controllers: 3,
        ..NetConfig::default()
    };
    let (out, _) = run_distributed(Algorithm::Group, &scene, &params, &cfg).unwrap();
    assert_eq!(out, sim);
}

#[test]
fn lossy_links_still_converge_without_double_moves() {
    for seed in 0..3 {
        let scene = small_scene(seed);
        let params = ControlParams::noiseless(seed);
        let clean = run_sim(Algorithm::Group, &scene, &params).unwrap();
        let cfg = NetConfig {
            link: LinkModel {
                loss: 0.2,
                latency: Duration::from_micros(200),
                jitter: Duration::from_micros(300),
                seed,
            },
            ..NetConfig::default()
        };
        let (out, stats) = run_distributed(Algorithm::Group, &scene, &params, &cfg).unwrap();
        assert_eq!(out.config, clean.config);
        assert_eq!(out, clean);
        assert!(stats.traffic.dropped > 0);
        assert!(stats.plant.retries > 0);
        assert_eq!(stats.moves_applied, clean.log.moves, "a duplicate command moved a roll");
    }
}

#[test]
fn capture_replays_to_final_surface() {
    let scene = small_scene(7);
    let params = ControlParams {
        seed: 7,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traffic.log");
    let cfg = NetConfig {
        capture: Some(path.clone()),
        link: LinkModel {
            loss: 0.1,
            seed: 3,
            ..LinkModel::default()
        },
        ..NetConfig::socket(0)
    };
    let (out, stats) = run_distributed(Algorithm::Enumerate, &scene, &params, &cfg).unwrap();
    let records = read_capture(&path).unwrap();
    assert_eq!(records.len() as u64, stats.traffic.sent);
    assert_eq!(
        records.iter().filter(|r| !r.delivered).count() as u64,
        stats.traffic.dropped
    );
    let replayed = replay_surface(&records, &scene, params.motor);
    let expected: std::collections::BTreeMap<_, _> = out
        .config
        .lengths
        .iter()
        .map(|(&r, &m)| (r, (m * 1000.0).round() as u32))
        .collect();
    assert_eq!(replayed, expected);
}

#[test]
fn unreachable_nodes_fail_the_handshake_by_name() {
    let scene = small_scene(1);
    let cfg = NetConfig {
        link: LinkModel {
            loss: 0.999,
            ..LinkModel::default()
        },
        handshake_timeout: Duration::from_millis(100),
        ..NetConfig::default()
    };
    let err = run_distributed(Algorithm::Group, &scene, &ControlParams::default(), &cfg).unwrap_err();
    let text = err.to_string();
    assert!(
        text.contains("no hello from") && (text.contains("controller") || text.contains("endpoint")),
        "{text}"
    );
}
