use mblb_core::estimation::mc_eta;
use mblb_core::lqr::{generate_behavior_dataset, riccati_optimal, BehaviorConfig, LinearPolicy, Lqr1DParams, LqrWorld};

#[test]
fn behavior_dataset_has_expected_shape() {
    let params = Lqr1DParams::default();
    let data = generate_behavior_dataset(&params, &BehaviorConfig::default(), 9).unwrap();
    assert_eq!(data.len(), 8 * 2000 * 20);
    let starts: Vec<f64> = data.records().iter().filter(|r| r.t == 0).map(|r| r.s).collect();
    assert_eq!(starts.len(), 16_000);
    let mean = starts.iter().sum::<f64>() / starts.len() as f64;
    // Standard error of the start mean is 0.2 / sqrt(16000) ~ 1.6e-3.
    assert!((mean - 0.5).abs() < 0.01, "start mean {mean}");
    assert_eq!(data.trajectories().len(), 16_000);
}

#[test]
fn behavior_dataset_is_reproducible() {
    let params = Lqr1DParams::default();
    let cfg = BehaviorConfig { n_traj_per_policy: 50, horizon: 5, ..BehaviorConfig::default() };
    let a = generate_behavior_dataset(&params, &cfg, 4).unwrap();
    let b = generate_behavior_dataset(&params, &cfg, 4).unwrap();
    let c = generate_behavior_dataset(&params, &cfg, 5).unwrap();
    assert_eq!(a.records(), b.records());
    assert_ne!(a.records(), c.records());
}

#[test]
fn riccati_gain_beats_nearby_gains_in_simulation() {
    let params = Lqr1DParams::default();
    let world = LqrWorld::new(params).unwrap();
    let (k, _) = riccati_optimal(&params).unwrap();
    let run = |slope: f64| {
        let policy = LinearPolicy { v: 0.0, slope, action_noise_std: 0.0 };
        mc_eta(&world, &policy, 4000, 100, params.gamma, 21).unwrap().mean
    };
    let best = run(k);
    assert!(best > run(k + 0.3));
    assert!(best > run(k - 0.3));
}
