//! Monte Carlo agreement with the analytic oracle over random profiles.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use punforge::simzoo::{expected_accuracy, run_rng, sample_run, SuccessProfile};

#[test]
fn empirical_accuracy_tracks_analytic_within_three_sigma() {
    let mut profile_rng = StdRng::seed_from_u64(404);
    let n = 100_000u32;
    for profile_index in 0..3 {
        let rounds = profile_rng.gen_range(2..=6);
        let ps: Vec<f64> = (0..rounds).map(|_| profile_rng.gen_range(0.02..0.7)).collect();
        let profile = SuccessProfile::new(format!("random {profile_index}"), ps).unwrap();
        let k = rounds as u32;
        let analytic = expected_accuracy(&profile, k);

        let matched = (0..n)
            .filter(|i| {
                let mut rng = run_rng(500 + profile_index, &format!("mc {i}"), "mc");
                sample_run(&profile, k, &mut rng).is_some()
            })
            .count();
        let empirical = matched as f64 / n as f64;
        let sigma = (analytic * (1.0 - analytic) / n as f64).sqrt();
        let bound = 3.0 * sigma + 1e-9;
        assert!(
            (empirical - analytic).abs() <= bound,
            "profile {profile_index}: |{empirical} - {analytic}| > 3σ = {bound}"
        );
    }
}
