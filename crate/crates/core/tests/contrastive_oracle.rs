use proptest::prelude::*;
use ptdebias_core::objectives::{
    contrastive_loss, contrastive_loss_with_grad, pairwise_entailment_contrastive_loss,
    pairwise_entailment_contrastive_loss_with_grad, unsupervised_contrastive_loss, ContrastiveBatch,
};

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn cat(p: &[f64], h: &[f64]) -> Vec<f64> {
    p.iter().chain(h).copied().collect()
}

/// Term by term: `-(1/N) Σ_i log( e^{s_ii/τ} / Σ_j e^{s_ij/τ} )`.
fn oracle(b: &ContrastiveBatch) -> f64 {
    let n = b.anchors.len();
    let mut total = 0.0;
    for i in 0..n {
        let a = cat(&b.prompt, &b.anchors[i]);
        let mut denom = 0.0;
        for j in 0..n {
            denom += (cos(&a, &cat(&b.prompt, &b.counterparts[j])) / b.temperature).exp();
        }
        let num = (cos(&a, &cat(&b.prompt, &b.counterparts[i])) / b.temperature).exp();
        total += -(num / denom).ln();
    }
    total / n as f64
}

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn batch() -> impl Strategy<Value = ContrastiveBatch> {
    (1usize..=8, 1usize..=16, 0usize..3, prop::sample::select(vec![0.005, 0.05, 0.5])).prop_flat_map(
        |(n, dim, pdim, t)| {
            (
                vector(pdim.max(1)).prop_map(move |p| if pdim == 0 { Vec::new() } else { p }),
                prop::collection::vec(vector(dim), n),
                prop::collection::vec(vector(dim), n),
            )
                .prop_map(move |(prompt, anchors, counterparts)| ContrastiveBatch {
                    prompt,
                    anchors,
                    counterparts,
                    temperature: t,
                })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_scalar_recomputation(b in batch()) {
        let got = contrastive_loss(&b).unwrap();
        let want = oracle(&b);
        // small temperatures give large logits; compare relative to scale
        prop_assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "{} vs {}", got, want);
    }

    #[test]
    fn joint_permutation_invariance(b in batch(), seed in any::<u64>()) {
        let n = b.anchors.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let p = ContrastiveBatch {
            anchors: order.iter().map(|&i| b.anchors[i].clone()).collect(),
            counterparts: order.iter().map(|&i| b.counterparts[i].clone()).collect(),
            ..b.clone()
        };
        let (x, y) = (contrastive_loss(&b).unwrap(), contrastive_loss(&p).unwrap());
        prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
    }

    #[test]
    fn gradient_matches_finite_differences(b in batch()) {
        prop_assume!(b.temperature >= 0.05);
        for symmetric in [false, true] {
            let g = contrastive_loss_with_grad(&b, symmetric).unwrap();
            let f = |bb: &ContrastiveBatch| contrastive_loss_with_grad(bb, symmetric).unwrap().loss;
            let eps = 1e-6;
            for i in 0..b.anchors.len() {
                for k in 0..b.anchors[i].len() {
                    let mut plus = b.clone();
                    plus.anchors[i][k] += eps;
                    let mut minus = b.clone();
                    minus.anchors[i][k] -= eps;
                    let num = (f(&plus) - f(&minus)) / (2.0 * eps);
                    prop_assert!((num - g.d_groups[0][i][k]).abs() < 1e-5 * num.abs().max(1.0));
                }
            }
            for k in 0..b.prompt.len() {
                let mut plus = b.clone();
                plus.prompt[k] += eps;
                let mut minus = b.clone();
                minus.prompt[k] -= eps;
                let num = (f(&plus) - f(&minus)) / (2.0 * eps);
                prop_assert!((num - g.d_prompt[k]).abs() < 1e-5 * num.abs().max(1.0));
            }
        }
    }

    #[test]
    fn pairwise_loss_sums_both_directions(b in batch(), extra in prop::collection::vec(vector(16), 8)) {
        let n = b.anchors.len();
        let dim = b.anchors[0].len();
        let aug: Vec<Vec<f64>> = extra.iter().take(n).map(|v| v[..dim].to_vec()).collect();
        prop_assume!(aug.iter().all(|v| v.iter().any(|x| x.abs() > 1e-3)));
        let got = pairwise_entailment_contrastive_loss(&b.prompt, &b.anchors, &b.counterparts, &aug, b.temperature).unwrap();
        let t = b.temperature;
        let e = |x: &[f64], y: &[f64]| (cos(&cat(&b.prompt, x), &cat(&b.prompt, y)) / t).exp();
        let mut fwd = 0.0;
        let mut bwd = 0.0;
        for i in 0..n {
            let mut denom: f64 = (0..n).map(|j| e(&b.anchors[i], &b.counterparts[j])).sum();
            denom += e(&b.anchors[i], &aug[i]);
            fwd -= (e(&b.anchors[i], &b.counterparts[i]) / denom).ln();
            let denom2: f64 = (0..n).map(|j| e(&b.counterparts[i], &b.anchors[j])).sum();
            bwd -= (e(&b.counterparts[i], &b.anchors[i]) / denom2).ln();
        }
        let want = (fwd + bwd) / n as f64;
        prop_assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "{} vs {}", got, want);
        let g = pairwise_entailment_contrastive_loss_with_grad(&b.prompt, &b.anchors, &b.counterparts, &aug, t).unwrap();
        prop_assert_eq!(g.d_groups.len(), 3);
    }
}

#[test]
fn single_pair_is_exactly_zero() {
    for t in [0.005, 0.05, 0.5] {
        let b = ContrastiveBatch::new(vec![0.3], vec![vec![1.0, 2.0]], vec![vec![-4.0, 0.5]], t).unwrap();
        assert_eq!(contrastive_loss(&b).unwrap(), 0.0);
        assert_eq!(unsupervised_contrastive_loss(&[], &[vec![1.0]], &[vec![2.0]], t).unwrap(), 0.0);
    }
}

#[test]
fn rejects_bad_input() {
    assert!(ContrastiveBatch::new(vec![], vec![vec![1.0]], vec![vec![1.0]], 0.0).is_err());
    assert!(ContrastiveBatch::new(vec![], vec![vec![1.0]], vec![], 0.05).is_err());
    assert!(ContrastiveBatch::new(vec![], vec![vec![1.0]], vec![vec![1.0, 2.0]], 0.05).is_err());
}
