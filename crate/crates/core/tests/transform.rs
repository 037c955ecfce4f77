use duet_core::duet::marginals;
use duet_core::equivariance::{
    check_group_axioms, lipschitz_tg, lipschitz_tg_sweep, mu_hat, recover_parameter, transform_representation,
    FeatureTransformContext,
};
use duet_core::targets::{discretize_target, kappa_from_sigma, Partition, TargetShape};

fn vm() -> TargetShape {
    TargetShape::VonMises {
        kappa: kappa_from_sigma(0.2).unwrap(),
    }
}

fn exact_target_z(content: usize, g0: f64, beta: f64, seed: usize) -> Vec<f64> {
    let part = Partition::new(8).unwrap();
    let q = discretize_target(vm(), g0, part).unwrap();
    let mu = mu_hat(&q.probs, beta);
    let mut z = vec![0.0; content * 8];
    for i in 0..content {
        for j in 0..8 {
            let noise = (((i * 31 + j * 17 + seed) % 13) as f64 - 6.0) * 0.05;
            z[i * 8 + j] = mu[j] / content as f64 + noise;
        }
    }
    // re-center noise per column so column sums are exactly mu
    for j in 0..8 {
        let s: f64 = (0..content).map(|i| z[i * 8 + j]).sum();
        for i in 0..content {
            z[i * 8 + j] += (mu[j] - s) / content as f64;
        }
    }
    z
}

#[test]
fn recovery_of_exact_targets() {
    let part = Partition::new(8).unwrap();
    for g in [0.0, 0.1, 0.37, 0.5, 0.93] {
        let q = discretize_target(vm(), g, part).unwrap();
        let r = recover_parameter(&q.probs, vm(), part).unwrap();
        let d = (r - g).rem_euclid(1.0);
        assert!(d.min(1.0 - d) < 1e-9, "{g} -> {r}");
    }
    let gauss = TargetShape::Gaussian { sigma: 0.2 };
    for g in [0.05, 0.3, 0.6, 0.95] {
        let q = discretize_target(gauss, g, part).unwrap();
        assert!((recover_parameter(&q.probs, gauss, part).unwrap() - g).abs() < 1e-9);
    }
}

#[test]
fn axioms_hold_on_exact_cyclic_inputs() {
    let ctx = FeatureTransformContext::new(vec![0.1; 8], vm(), Partition::new(8).unwrap()).unwrap();
    let gs = [0.0, 0.1, -0.25, 0.4, 0.77];
    for (k, g0) in [0.0, 0.2, 0.55, 0.8].into_iter().enumerate() {
        let z = marginals(&exact_target_z(4, g0, 0.1, k), 4, 8).unwrap();
        let r = check_group_axioms(&z, &gs, &ctx).unwrap();
        assert!(r.max_residual() < 1e-8, "{r:?}");
        assert_eq!(r.closure_failures, 0);
    }
}

#[test]
fn transform_preserves_content_and_moves_marginal() {
    let part = Partition::new(8).unwrap();
    let ctx = FeatureTransformContext::new(vec![0.0; 8], vm(), part).unwrap();
    let z = marginals(&exact_target_z(3, 0.25, 0.0, 1), 3, 8).unwrap();
    let t = transform_representation(&z, 0.5, &ctx).unwrap();
    for (a, b) in t.content.iter().zip(&z.content) {
        assert!((a - b).abs() < 1e-12);
    }
    let want = discretize_target(vm(), 0.75, part).unwrap().probs;
    for (a, b) in t.group_marginal.iter().zip(&want) {
        assert!((a - b).abs() < 1e-10);
    }
}

fn sweep_oracle(sigma: f64, bins: usize, n: usize) -> f64 {
    let part = Partition::new(bins).unwrap();
    let mu = |g: f64| {
        let q = discretize_target(TargetShape::Gaussian { sigma }, g, part).unwrap().probs;
        let logs: Vec<f64> = q.iter().map(|v| v.ln()).collect();
        let m = logs.iter().sum::<f64>() / bins as f64;
        logs.into_iter().map(|l| l - m).collect::<Vec<_>>()
    };
    let mut best = 0.0f64;
    let mut prev = mu(0.0);
    for k in 1..n {
        let g = k as f64 / (n - 1) as f64;
        let cur = mu(g);
        for j in 0..bins {
            best = best.max((cur[j] - prev[j]).abs() * (n - 1) as f64);
        }
        prev = cur;
    }
    best
}

#[test]
fn lipschitz_constant_matches_sweep() {
    let part = Partition::new(8).unwrap();
    let l = lipschitz_tg(0.2, part).unwrap();
    let oracle = sweep_oracle(0.2, 8, 10_000);
    assert!((l - oracle).abs() < 1e-4, "{l} vs {oracle}");
    let sweep = lipschitz_tg_sweep(TargetShape::Gaussian { sigma: 0.2 }, part, 10_000).unwrap();
    assert!((sweep - oracle).abs() < 1e-9);
}
