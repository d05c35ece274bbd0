use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rollsurf_core::em::{self, reflectivity, resonant_frequency, wavelength};
use rollsurf_core::scene::{Preset, RollId, Scenario, Scene};
use rollsurf_core::{Frequency, ResonanceModel, SurfaceConfig};

fn random_config(scene: &Scene, rng: &mut ChaCha8Rng) -> SurfaceConfig {
    let mut cfg = scene.all_off();
    for id in scene.roll_ids() {
        if rng.random_bool(0.3) {
            cfg.set(id, rng.random_range(10..=160) as f64 / 1000.0);
        }
    }
    cfg
}

#[test]
fn half_wave_round_trip_many_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let f = Frequency::from_hz(rng.random_range(100e6..=10e9)).unwrap();
        let back = resonant_frequency(wavelength(f) / 2.0).unwrap();
        assert_relative_eq!(back.hz(), f.hz(), max_relative = 1e-9);
    }
}

#[test]
fn half_maximum_points() {
    let model = ResonanceModel::default();
    for length in [0.02, 0.0625, 0.09, 0.15] {
        let fr = em::half_wave_resonance_hz(length);
        for side in [-1.0, 1.0] {
            let f = Frequency::from_hz(fr * (1.0 + side * model.fractional_bandwidth / 2.0)).unwrap();
            assert_relative_eq!(
                reflectivity(length, f, &model),
                model.peak_reflectivity / 2.0,
                max_relative = 1e-9
            );
        }
    }
}

#[test]
fn reciprocity_over_random_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..200 {
        let preset = Preset::ALL[i % 3];
        let scene = Scenario::with_frequencies(preset, vec![915e6, 2.412e9, 5.21e9])
            .build(i as u64)
            .unwrap();
        let cfg = random_config(&scene, &mut rng);
        for link in &scene.links {
            let a = scene.total_channel(link, &cfg).unwrap().norm();
            let b = scene.total_channel(&link.reversed(), &cfg).unwrap().norm();
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }
}

#[test]
fn off_surface_is_invisible() {
    let scene = Scenario::with_frequencies(Preset::Setup3, vec![3.7e9])
        .build(2)
        .unwrap();
    let link = &scene.links[0];
    assert_eq!(
        scene.total_channel(link, &scene.all_off()).unwrap(),
        scene.direct_term(link).unwrap()
    );
}

#[test]
fn element_count_is_conserved() {
    let mut scene = Scenario::default().build(4).unwrap();
    assert_eq!(scene.element_count(), 4 * 9 * 14);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let cfg = random_config(&scene, &mut rng);
        scene.apply_config(&cfg).unwrap();
        assert_eq!(scene.element_positions(&cfg).unwrap().len(), 504);
        assert_eq!(scene.element_count(), 504);
    }
}

#[test]
fn geometry_is_deterministic() {
    let scene = Scenario::default().build(9).unwrap();
    let mut cfg = scene.all_off();
    cfg.set(RollId::new(1, 4), 0.08);
    assert_eq!(
        scene.element_positions(&cfg).unwrap(),
        scene.clone().element_positions(&cfg).unwrap()
    );
}

#[test]
fn scene_file_round_trip_through_disk() {
    let scene = Scenario::with_frequencies(Preset::Setup1, vec![2.412e9, 5.21e9])
        .build(12)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.toml");
    std::fs::write(&path, scene.to_toml()).unwrap();
    let back = Scene::from_toml(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, scene);
}

proptest! {
    #[test]
    fn reflectivity_stays_in_unit_range(len_mm in 1u32..200, ghz in 0.1f64..10.0) {
        let model = ResonanceModel::default();
        let r = reflectivity(len_mm as f64 / 1000.0, Frequency::from_ghz(ghz).unwrap(), &model);
        prop_assert!((0.0..=model.peak_reflectivity).contains(&r));
        if len_mm <= 10 {
            prop_assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn direct_amplitude_inverse_distance(d in 0.5f64..50.0, ghz in 0.1f64..10.0) {
        let f = Frequency::from_ghz(ghz).unwrap();
        let a = em::direct_amplitude(em::Vec3::new(0.0, 0.0, 0.0), em::Vec3::new(d, 0.0, 0.0), f).unwrap();
        let b = em::direct_amplitude(em::Vec3::new(0.0, 0.0, 0.0), em::Vec3::new(2.0 * d, 0.0, 0.0), f).unwrap();
        prop_assert!((a.norm() / b.norm() - 2.0).abs() < 1e-9);
    }
}
