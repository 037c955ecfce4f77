use duet_core::duet::{group_loss, marginals, ntxent_loss};
use duet_core::Tensor;

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn js(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for (a, b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if *a > 0.0 {
            s += 0.5 * a * (a / m).ln();
        }
        if *b > 0.0 {
            s += 0.5 * b * (b / m).ln();
        }
    }
    s
}

#[test]
fn marginals_match_strided_sums() {
    let (c, g) = (5, 3);
    let z: Vec<f64> = (0..c * g).map(|k| ((k * 7 % 11) as f64 - 5.0) * 0.3).collect();
    let r = marginals(&z, c, g).unwrap();
    for j in 0..g {
        let s: f64 = (0..c).map(|i| z[i * g + j]).sum();
        assert!((r.column_sums[j] - s).abs() < 1e-12);
    }
    for i in 0..c {
        let s: f64 = z[i * g..(i + 1) * g].iter().sum();
        assert!((r.content[i] - s).abs() < 1e-12);
    }
    let p = softmax(&r.column_sums);
    for (a, b) in r.group_marginal.iter().zip(&p) {
        assert!((a - b).abs() < 1e-15);
    }
    let total: f64 = z.iter().sum();
    assert!((r.content.iter().sum::<f64>() - total).abs() < 1e-12);
    assert!((r.column_sums.iter().sum::<f64>() - total).abs() < 1e-12);
    assert!(marginals(&z, 4, 3).is_err());
}

#[test]
fn group_loss_matches_naive_js_mean() {
    let p = Tensor::from_rows(&[
        vec![0.7, 0.2, 0.1],
        vec![0.1, 0.1, 0.8],
        vec![0.3, 0.3, 0.4],
        vec![0.0, 0.5, 0.5],
    ])
    .unwrap();
    let q = Tensor::from_rows(&[
        vec![0.6, 0.3, 0.1],
        vec![0.2, 0.2, 0.6],
        vec![1.0, 0.0, 0.0],
        vec![0.25, 0.25, 0.5],
    ])
    .unwrap();
    let oracle: f64 = (0..4).map(|r| js(p.row(r), q.row(r))).sum::<f64>() / 4.0;
    assert!((group_loss(&p, &q).unwrap() - oracle).abs() < 1e-9);
}

fn ntxent_oracle(h1: &[Vec<f64>], h2: &[Vec<f64>], tau: f64) -> f64 {
    let all: Vec<Vec<f64>> = h1.iter().chain(h2).map(|v| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }).collect();
    let n = h1.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    for i in 0..2 * n {
        let pos = (i + n) % (2 * n);
        let denom: f64 = (0..2 * n).filter(|k| *k != i).map(|k| (dot(&all[i], &all[k]) / tau).exp()).sum();
        total += -((dot(&all[i], &all[pos]) / tau).exp() / denom).ln();
    }
    total / (2 * n) as f64
}

#[test]
fn ntxent_matches_direct_formula() {
    let h1 = vec![vec![1.0, 0.2, -0.3], vec![0.1, 0.9, 0.4], vec![-0.5, 0.5, 1.0]];
    let h2 = vec![vec![0.8, 0.1, -0.1], vec![0.3, 1.1, 0.2], vec![-0.2, 0.7, 0.6]];
    let t1 = Tensor::from_rows(&h1).unwrap();
    let t2 = Tensor::from_rows(&h2).unwrap();
    for tau in [0.1, 0.5, 1.0] {
        let got = ntxent_loss(&t1, &t2, tau).unwrap();
        assert!((got - ntxent_oracle(&h1, &h2, tau)).abs() < 1e-12, "tau {tau}");
    }
}
