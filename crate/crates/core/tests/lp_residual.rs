use gciforge::lpc::{lp_residual, LpConfig};
use gciforge::rng::SplitMix64;
use proptest::prelude::*;

fn step_up(reflection: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = Vec::new();
    for &k in reflection {
        let prev = a.clone();
        a.push(k);
        for j in 0..prev.len() {
            a[j] = prev[j] - k * prev[prev.len() - 1 - j];
        }
    }
    a
}

fn ar_filter(a: &[f64], excitation: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; excitation.len()];
    for n in 0..x.len() {
        let mut v = excitation[n];
        for (k, &ak) in a.iter().enumerate().take(n) {
            v += ak * x[n - 1 - k];
        }
        x[n] = v;
    }
    x
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn residual_energy_does_not_exceed_input(seed in any::<u64>(), kmax in 0.1f64..0.95) {
        let mut g = SplitMix64::new(seed);
        let reflection: Vec<f64> = (0..12).map(|_| g.uniform(-kmax, kmax)).collect();
        let noise: Vec<f64> = (0..6000).map(|_| g.normal()).collect();
        let x = ar_filter(&step_up(&reflection), &noise);
        let e = lp_residual(&x, &LpConfig::default()).unwrap();
        prop_assert!(energy(&e) <= 1.05 * energy(&x), "{} vs {}", energy(&e), energy(&x));
    }

    #[test]
    fn residual_peaks_at_impulse_train_excitation(seed in any::<u64>(), period in 60usize..200) {
        let mut g = SplitMix64::new(seed);
        let reflection: Vec<f64> = (0..12).map(|_| g.uniform(-0.8, 0.8)).collect();
        let len = 8000;
        let mut excitation: Vec<f64> = (0..len).map(|_| 0.01 * g.normal()).collect();
        let impulses: Vec<usize> = (period..len - period).step_by(period).collect();
        for &p in &impulses {
            excitation[p] += 1.0;
        }
        let x = ar_filter(&step_up(&reflection), &excitation);
        let e: Vec<f64> = lp_residual(&x, &LpConfig::default()).unwrap().iter().map(|v| v.abs()).collect();
        // the largest |e| over the whole cycle around each impulse lies
        // within 1 ms (16 samples) of it
        let hits = impulses
            .iter()
            .filter(|&&p| {
                let peak = (p - period / 2..p + period / 2).max_by(|&i, &j| e[i].total_cmp(&e[j])).unwrap();
                peak.abs_diff(p) <= 16
            })
            .count();
        prop_assert!(hits as f64 >= 0.95 * impulses.len() as f64, "{hits}/{}", impulses.len());
    }
}
