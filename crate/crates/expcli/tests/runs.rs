use std::path::Path;
use std::process::Command;

use rollsurf_expcli::{run, ExperimentSpec, CATALOG};

fn quick(name: &str, dir: &Path, trials: u64) -> rollsurf_expcli::RunOutput {
    let spec = ExperimentSpec::named(name);
    let mut p = spec.params().unwrap();
    p.trials = trials;
    p.study.grid_cap = 24;
    run(&spec, &p, dir).unwrap()
}

#[test]
fn same_seed_gives_identical_files() {
    for name in ["concurrent-links", "fig3b-power", "cache-replay"] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let oa = quick(name, a.path(), 4);
        quick(name, b.path(), 4);
        for f in &oa.files {
            let (x, y) = (
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
            );
            assert!(x == y, "{name}: {f} differs");
        }
    }
}

#[test]
fn different_seeds_differ() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = ExperimentSpec::named("single-link-gain");
    let mut p = spec.params().unwrap();
    p.trials = 4;
    run(&spec, &p, a.path()).unwrap();
    p.seed = 2;
    run(&spec, &p, b.path()).unwrap();
    assert_ne!(
        std::fs::read(a.path().join("results.csv")).unwrap(),
        std::fs::read(b.path().join("results.csv")).unwrap()
    );
}

#[test]
fn gain_is_achieved_minus_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let o = quick("concurrent-links", dir.path(), 6);
    assert!(!o.rows.is_empty());
    for r in &o.rows {
        assert_eq!(r.gain_db, r.achieved_dbm - r.baseline_dbm);
    }
    let mut rd = csv::Reader::from_path(dir.path().join("results.csv")).unwrap();
    assert_eq!(
        rd.headers().unwrap().iter().collect::<Vec<_>>(),
        rollsurf_expcli::ResultRow::HEADER
    );
    assert_eq!(rd.records().count(), o.rows.len());
}

#[test]
fn every_experiment_writes_a_complete_manifest() {
    for e in CATALOG {
        let dir = tempfile::tempdir().unwrap();
        let o = quick(e.name, dir.path(), 2);
        assert!(o.failures.is_empty(), "{}: {:?}", e.name, o.failures);
        let text = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
        let m: toml::Table = text.parse().unwrap();
        for key in [
            "experiment",
            "algorithm",
            "code_version",
            "seed",
            "trials",
            "scene",
            "files",
            "params",
            "metrics",
        ] {
            assert!(m.contains_key(key), "{}: manifest lacks {key}", e.name);
        }
        assert_eq!(m["experiment"].as_str(), Some(e.name));
        for f in m["files"].as_array().unwrap() {
            assert!(dir.path().join(f.as_str().unwrap()).exists(), "{}: {f} missing", e.name);
        }
        let params: rollsurf_expcli::RunParams = m["params"].clone().try_into().unwrap();
        assert_eq!(params, o.params);
    }
}

#[test]
fn fixed_scene_from_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let scene = rollsurf_core::scene::Scenario::with_frequencies(rollsurf_core::scene::Preset::Setup2, vec![5.21e9])
        .build(3)
        .unwrap();
    std::fs::write(dir.path().join("desk.toml"), scene.to_toml()).unwrap();
    std::fs::write(
        dir.path().join("spec.toml"),
        "name = \"single-link-gain\"\nscene = \"desk.toml\"\ntrials = 2\n[set]\n\"policy.noise_sigma_db\" = 0.0\n",
    )
    .unwrap();
    let spec = ExperimentSpec::load(&dir.path().join("spec.toml")).unwrap();
    let o = run(&spec, &spec.params().unwrap(), &dir.path().join("out")).unwrap();
    assert_eq!(o.rows.len(), 2);
    assert_eq!(o.rows[0].config_digest, o.rows[1].config_digest);
    assert_eq!(o.rows[0].frequency_hz, 5.21e9);
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rollsurf"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn cli_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cache");
    let o = cli(&[
        "run",
        "cache-replay",
        "--trials",
        "2",
        "--seed",
        "5",
        "--set",
        "policy.noise_sigma_db=0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: toml::Table = std::fs::read_to_string(out.join("manifest.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(m["seed"].as_integer(), Some(5));
    assert_eq!(m["params"]["policy"]["noise_sigma_db"].as_float(), Some(0.0));

    let listing = String::from_utf8(cli(&["list"]).stdout).unwrap();
    assert_eq!(listing.lines().count(), CATALOG.len());

    let bad = cli(&[
        "run",
        "cache-replay",
        "--set",
        "policy.nope=1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("policy.nope"));

    let scene = rollsurf_core::scene::Scenario::default().build(1).unwrap();
    let scene_path = dir.path().join("scene.toml");
    std::fs::write(&scene_path, scene.to_toml()).unwrap();
    assert!(cli(&["validate", scene_path.to_str().unwrap()]).status.success());
    std::fs::write(dir.path().join("broken.toml"), "panels = 3").unwrap();
    assert!(!cli(&["validate", dir.path().join("broken.toml").to_str().unwrap()])
        .status
        .success());

    // The stored entries belong to other random scenes.
    let r = cli(&[
        "replay-cache",
        out.join("cache.toml").to_str().unwrap(),
        scene_path.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stdout).starts_with("miss"));
}

#[test]
fn replay_cache_hits_its_own_scene() {
    let dir = tempfile::tempdir().unwrap();
    let scene =
        rollsurf_core::scene::Scenario::with_frequencies(rollsurf_core::scene::Preset::Setup1, vec![2.412e9, 5.21e9])
            .build(8)
            .unwrap();
    let scene_path = dir.path().join("scene.toml");
    std::fs::write(&scene_path, scene.to_toml()).unwrap();
    let spec_path = dir.path().join("spec.toml");
    std::fs::write(
        &spec_path,
        "name = \"cache-replay\"\nscene = \"scene.toml\"\ntrials = 1\nout = \"out\"\n[set]\n\"policy.noise_sigma_db\" = 0.0\n",
    )
    .unwrap();
    let o = cli(&[
        "run",
        spec_path.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = cli(&[
        "replay-cache",
        dir.path().join("out/cache.toml").to_str().unwrap(),
        scene_path.to_str().unwrap(),
        "--set",
        "policy.noise_sigma_db=0",
    ]);
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(r.status.success(), "{stdout}");
    assert!(stdout.contains("valid = true"));
}

#[test]
fn completed_rows_never_lose_more_than_the_margin() {
    for name in ["single-link-gain", "concurrent-links", "extended-rolls-per-panel"] {
        let dir = tempfile::tempdir().unwrap();
        let o = quick(name, dir.path(), 12);
        let margin = o.params.policy.noise_floor_margin_db;
        for r in &o.rows {
            assert!(r.achieved_dbm >= r.baseline_dbm - margin, "{name}: {r:?}");
        }
    }
}

#[test]
fn overrides_land_in_the_manifest() {
    let spec = ExperimentSpec::named("perturbation-stability");
    let mut p = spec.params().unwrap();
    for pair in [
        "trials=2",
        "policy.dwell_s=0.25",
        "policy.samples_per_point=3",
        "motor.rpm=40",
        "scenario.tx_power_dbm=10",
        "scenario.frequencies_hz=915e6,5.21e9",
        "cache.tolerance_m=0.01",
        "net.latency_ms=1.5",
        "perturb_distance_m=0.3",
    ] {
        p.set_pair(pair).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    run(&spec, &p, dir.path()).unwrap();
    let m: toml::Table = std::fs::read_to_string(dir.path().join("manifest.toml"))
        .unwrap()
        .parse()
        .unwrap();
    let recorded: rollsurf_expcli::RunParams = m["params"].clone().try_into().unwrap();
    assert_eq!(recorded.entries(), p.entries());
    assert_eq!(m["params"]["motor"]["rpm"].as_float(), Some(40.0));
    assert_eq!(m["params"]["policy"]["samples_per_point"].as_integer(), Some(3));
}
