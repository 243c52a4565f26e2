use edgelit::optics::Vec3;
use edgelit::seed::Seed;
use edgelit::sensor::{extract_features, SensorConfig, TraceCache, FEATURE_DIM};
use edgelit::surface::IndenterState;
use proptest::prelude::*;

fn config(rays: usize) -> SensorConfig {
    SensorConfig {
        rays_per_state: rays,
        ..SensorConfig::default()
    }
}

fn rot(a: [f64; 3]) -> [f64; 3] {
    let v = Vec3::new(a[0], a[1], a[2]).rot90();
    [v.x, v.y, v.z]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ambient_light_cancels_in_features(
        x in -10.0..10.0, y in -10.0..10.0, d in -3.0..5.0,
        a1 in 0.0..2.0f64, a2 in 0.0..2.0f64, seed in any::<u64>(),
    ) {
        let cache = TraceCache::new(&config(2000), Seed(seed)).unwrap();
        let ind = IndenterState::new(x, y, d);
        let f1 = extract_features(&cache.scan_with(&ind, a1, 0.0, Seed(1)).unwrap());
        let f2 = extract_features(&cache.scan_with(&ind, a2, 0.0, Seed(1)).unwrap());
        prop_assert_eq!(f1.as_slice().len(), FEATURE_DIM);
        prop_assert_eq!(f1, f2);
    }

    #[test]
    fn rotated_sensor_sees_rotated_press_identically(
        x in -10.0..10.0, y in -10.0..10.0, d in 0.0..5.0, seed in any::<u64>(),
    ) {
        let cfg = config(2000);
        let mut turned = cfg.clone();
        for e in &mut turned.emitters {
            e.position_mm = rot(e.position_mm);
            e.facing = rot(e.facing);
        }
        for r in &mut turned.receivers {
            r.position_mm = rot(r.position_mm);
            r.facing = rot(r.facing);
        }
        let v = Vec3::new(x, y, 0.0).rot90();
        let a = TraceCache::new(&cfg, Seed(seed)).unwrap()
            .scan_with(&IndenterState::new(x, y, d), 0.0, 0.0, Seed(0)).unwrap();
        let b = TraceCache::new(&turned, Seed(seed)).unwrap()
            .scan_with(&IndenterState::new(v.x, v.y, d), 0.0, 0.0, Seed(0)).unwrap();
        for (ra, rb) in a.readings.iter().zip(&b.readings) {
            for (p, q) in ra.iter().zip(rb) {
                prop_assert!((p - q).abs() <= 1e-9, "{} vs {}", p, q);
            }
        }
    }
}

#[test]
fn hover_scans_equal_the_undisturbed_sensor() {
    let cache = TraceCache::new(&config(4000), Seed(5)).unwrap();
    let flat = cache.scan_with(&IndenterState::hovering(), 0.3, 0.0, Seed(2)).unwrap();
    for (x, y, d) in [(0.0, 0.0, -1.0), (7.0, -3.0, -10.0), (-9.0, 9.0, 0.0)] {
        let s = cache.scan_with(&IndenterState::new(x, y, d), 0.3, 0.0, Seed(2)).unwrap();
        assert_eq!(s, flat);
    }
}

#[test]
fn negative_lighting_is_rejected() {
    let cache = TraceCache::new(&config(1000), Seed(5)).unwrap();
    let ind = IndenterState::new(0.0, 0.0, 1.0);
    assert!(cache.scan_with(&ind, -0.1, 0.0, Seed(0)).is_err());
    assert!(cache.scan_with(&ind, 0.0, -1e-3, Seed(0)).is_err());
}
