use proptest::prelude::*;

use super::*;
use crate::model::{decode_slate, DecodeMode};
use crate::tensor::Tensor;

fn inst(features: Vec<Vec<f64>>) -> RankingInstance {
    let n = features.len();
    RankingInstance::from_grades("q", features, vec![], vec![0; n])
}

fn is_permutation(p: &[usize], n: usize) -> bool {
    let mut s = p.to_vec();
    s.sort_unstable();
    s == (0..n).collect::<Vec<_>>()
}

/// Leibniz expansion, independent of the LU routine.
fn leibniz(a: &[f64], n: usize) -> f64 {
    fn perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }
    perms(n)
        .into_iter()
        .map(|p| {
            let inversions = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| p[i] > p[j])
                .count();
            let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
            sign * (0..n).map(|i| a[i * n + p[i]]).product::<f64>()
        })
        .sum()
}

fn random_instance(seed: u64, n: usize, m: usize) -> (RankingInstance, Vec<f64>) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = (0..n).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let u = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    (inst(features), u)
}

#[test]
fn pointwise_sort_fixture() {
    assert_eq!(pointwise_rank(&[0.1, 0.9, 0.5]), vec![1, 2, 0]);
    assert_eq!(pointwise_rank(&[0.7; 5]), vec![0, 1, 2, 3, 4]);
    let monotone: Vec<f64> = [0.1, 0.9, 0.5].iter().map(|s: &f64| s.powi(3) * 10.0 - 4.0).collect();
    assert_eq!(pointwise_rank(&monotone), vec![1, 2, 0]);
}

#[test]
fn zero_gamma_reduces_to_pointwise() {
    for seed in 0..20 {
        let (x, u) = random_instance(seed, 7, 3);
        assert_eq!(submodular_greedy(&x, &u, 0.0), pointwise_rank(&u));
    }
}

#[test]
fn strong_gamma_separates_identical_top_items() {
    let x = inst(vec![
        vec![1.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ]);
    let u = [0.9, 0.89, 0.5, 0.4];
    let order = submodular_greedy(&x, &u, 5.0);
    let pos = |i: usize| order.iter().position(|&v| v == i).unwrap();
    assert!(pos(0).abs_diff(pos(1)) > 1, "{order:?}");
    assert_eq!(pointwise_rank(&u)[..2], [0, 1]);
}

#[test]
fn submodular_prefix_matches_naive_recomputation() {
    for seed in 0..30 {
        let n = 3 + (seed as usize % 5);
        let (x, u) = random_instance(seed, n, 3);
        let gamma = 0.7;
        let got = submodular_greedy(&x, &u, gamma);
        // recompute every marginal gain from scratch at each step
        let mut chosen: Vec<usize> = Vec::new();
        for _ in 0..3.min(n) {
            let mut best = None;
            for c in (0..n).filter(|c| !chosen.contains(c)) {
                let penalty = chosen
                    .iter()
                    .map(|&j| cosine(&x.item_features[c], &x.item_features[j]))
                    .fold(f64::NEG_INFINITY, f64::max);
                let gain = u[c] - gamma * if chosen.is_empty() { 0.0 } else { penalty };
                if best.is_none_or(|(_, g)| gain > g) {
                    best = Some((c, gain));
                }
            }
            chosen.push(best.unwrap().0);
        }
        assert_eq!(got[..chosen.len()], chosen[..], "seed {seed}");
    }
}

#[test]
fn dpp_orthogonal_equal_utilities_is_identity() {
    let x = inst(vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 3.0]]);
    assert_eq!(dpp_greedy(&x, &[0.5, 0.5, 0.5]), vec![0, 1, 2]);
}

#[test]
fn dpp_defers_duplicate() {
    let x = inst(vec![
        vec![1.0, 0.0, 0.2],
        vec![1.0, 0.0, 0.2],
        vec![0.1, 1.0, 0.0],
        vec![0.0, 0.3, 1.0],
    ]);
    let order = dpp_greedy(&x, &[0.9, 0.85, 0.3, 0.2]);
    assert_eq!(order[0], 0);
    assert_eq!(order[3], 1, "{order:?}");
}

#[test]
fn dpp_prefix_matches_leibniz_enumeration() {
    for seed in 0..25 {
        let n = 3 + (seed as usize % 4);
        let (x, u) = random_instance(100 + seed, n, 4);
        let got = dpp_greedy(&x, &u);
        let sim = feature_similarity(&x);
        let kernel: Vec<f64> = (0..n * n).map(|k| u[k / n] * sim[k] * u[k % n]).collect();
        let kernel = &kernel;
        let det_of = |rows: &[usize]| {
            let sub: Vec<f64> = rows
                .iter()
                .flat_map(|&i| rows.iter().map(move |&j| kernel[i * n + j]))
                .collect();
            leibniz(&sub, rows.len())
        };
        // every ordered 3-prefix, scored by greedy's own step criterion
        let mut best_prefix = None;
        for a in 0..n {
            let first_ok = (0..n).all(|o| det_of(&[o]) <= det_of(&[a]) + 1e-12 * det_of(&[a]).abs());
            if !first_ok {
                continue;
            }
            for b in (0..n).filter(|&b| b != a) {
                let second_ok = (0..n)
                    .filter(|&o| o != a)
                    .all(|o| det_of(&[a, o]) <= det_of(&[a, b]) + 1e-12);
                if !second_ok {
                    continue;
                }
                for c in (0..n).filter(|&c| c != a && c != b) {
                    let third_ok = (0..n)
                        .filter(|&o| o != a && o != b)
                        .all(|o| det_of(&[a, b, o]) <= det_of(&[a, b, c]) + 1e-12);
                    if third_ok && best_prefix.is_none() {
                        best_prefix = Some(vec![a, b, c]);
                    }
                }
            }
        }
        assert_eq!(got[..3], best_prefix.unwrap()[..], "seed {seed}");
    }
}

#[test]
fn prm_emits_a_permutation_for_identical_items() {
    let params = DivNetParams::init(ModelConfig::new(2, 0).with_dims(4, 4), 3).unwrap();
    let zero_pe = RankingInstance::from_grades("q", vec![vec![0.4, -0.2]; 4], vec![], vec![0; 4]);
    let order = PrmRanker { params: &params }.rank(&zero_pe).unwrap();
    assert!(is_permutation(&order, 4));
}

#[test]
fn prm_first_choice_agrees_with_utility_only_decode() {
    let mut params = DivNetParams::init(ModelConfig::new(3, 1).with_dims(4, 4), 8).unwrap();
    // pass-through decoder values
    params.w_v_d = Tensor::identity(4).with_grad();
    for seed in 0..10 {
        let (mut x, _) = random_instance(seed, 6, 3);
        x.user_features = vec![0.3];
        let prm = PrmRanker { params: &params }.rank(&x).unwrap();
        let greedy = decode_slate(&params, &x, 0.0, &DecodeMode::Greedy, 0).unwrap();
        assert_eq!(prm[0], greedy.permutation[0], "seed {seed}");
    }
}

#[test]
fn pointwise_training_learns_a_separable_signal() {
    let data: Vec<RankingInstance> = (0..40)
        .map(|q| {
            let features: Vec<Vec<f64>> = (0..6)
                .map(|i| vec![((q * 7 + i * 3) % 11) as f64 / 10.0 - 0.5, (i % 2) as f64])
                .collect();
            let grades = features.iter().map(|f| if f[1] > 0.5 { 4 } else { 0 }).collect();
            RankingInstance::from_grades(q.to_string(), features, vec![1.0], grades)
        })
        .collect();
    let cfg = FitConfig {
        epochs: 30,
        ..FitConfig::default()
    };
    let scorer = train_pointwise(&data, 16, &cfg).unwrap();
    let refs: Vec<&RankingInstance> = data.iter().collect();
    assert!(scorer.batch_loss(&refs).unwrap() < 0.1);
    assert_eq!(scorer, train_pointwise(&data, 16, &cfg).unwrap());
    let wrong = RankingInstance::from_grades("w", vec![vec![1.0]], vec![], vec![0]);
    assert!(scorer.score(&wrong).is_err());
}

#[test]
fn prm_training_reduces_loss() {
    let data: Vec<RankingInstance> = (0..16)
        .map(|q| {
            let features: Vec<Vec<f64>> = (0..5).map(|i| vec![(i % 2) as f64, 0.1 * q as f64]).collect();
            let grades = features.iter().map(|f| if f[0] > 0.5 { 4 } else { 0 }).collect();
            RankingInstance::from_grades(q.to_string(), features, vec![], grades)
        })
        .collect();
    let config = ModelConfig::new(2, 0).with_dims(8, 8);
    let cfg = FitConfig {
        epochs: 40,
        batch_size: 4,
        ..FitConfig::default()
    };
    let loss = |p: &DivNetParams| -> f64 {
        data.iter()
            .map(|inst| {
                let u = item_utilities(p, inst).unwrap();
                u.iter()
                    .zip(&inst.click_labels)
                    .map(|(y, &l)| -if l == 1 { y.ln() } else { (1.0 - y).ln() })
                    .sum::<f64>()
            })
            .sum()
    };
    let before = loss(&DivNetParams::init(config, cfg.seed).unwrap());
    let trained = train_prm(&data, config, &cfg).unwrap();
    assert!(loss(&trained) < 0.5 * before, "{} vs {before}", loss(&trained));
    let hits = data
        .iter()
        .filter(|inst| {
            let order = PrmRanker { params: &trained }.rank(inst).unwrap();
            inst.click_labels[order[0]] == 1
        })
        .count();
    assert_eq!(hits, data.len());
}

proptest! {
    #[test]
    fn baselines_emit_valid_deterministic_permutations(seed in any::<u64>(), n in 1usize..10, gamma in 0.0f64..3.0) {
        let (x, u) = random_instance(seed, n, 3);
        let s = submodular_greedy(&x, &u, gamma);
        let d = dpp_greedy(&x, &u);
        prop_assert!(is_permutation(&s, n));
        prop_assert!(is_permutation(&d, n));
        prop_assert_eq!(s, submodular_greedy(&x, &u, gamma));
        prop_assert_eq!(d, dpp_greedy(&x, &u));
    }

    #[test]
    fn diversity_baselines_pull_duplicates_apart(seed in any::<u64>(), extra in 2usize..6) {
        let (mut x, mut u) = random_instance(seed, extra, 3);
        // a duplicated pair carrying the two highest utilities
        let dup = vec![3.0, -2.0, 5.0];
        x.item_features.insert(0, dup.clone());
        x.item_features.insert(1, dup);
        u.insert(0, 1.5);
        u.insert(1, 1.4);
        let n = x.item_features.len();
        x.relevance_grades = vec![0; n];
        x.click_labels = vec![0; n];
        x.display_order = (0..n).collect();
        let gap = |order: &[usize]| {
            let p = |i: usize| order.iter().position(|&v| v == i).unwrap();
            p(0).abs_diff(p(1))
        };
        let base = gap(&pointwise_rank(&u));
        prop_assert_eq!(base, 1);
        prop_assert!(gap(&submodular_greedy(&x, &u, 10.0)) > base);
        prop_assert!(gap(&dpp_greedy(&x, &u)) > base);
    }
}

#[test]
fn upstream_lists_sort_rows_by_score_and_keep_labels() {
    let data: Vec<RankingInstance> = (0..12)
        .map(|q| {
            let features: Vec<Vec<f64>> = (0..5)
                .map(|i| vec![((q * 5 + i * 7) % 9) as f64 / 8.0, ((q + i) % 3) as f64 / 2.0])
                .collect();
            let grades = (0..5).map(|i| ((q + i) % 5) as u8).collect();
            RankingInstance::from_grades(format!("u{q}"), features, vec![], grades)
        })
        .collect();
    let scorer = train_pointwise(&data, 8, &FitConfig::default()).unwrap();
    let (lists, orders) = upstream_lists(&scorer, &data).unwrap();
    for ((orig, list), order) in data.iter().zip(&lists).zip(&orders) {
        assert!(is_permutation(order, orig.num_items()));
        let scores = scorer.score(list).unwrap();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");
        for (row, &src) in order.iter().enumerate() {
            assert_eq!(list.item_features[row], orig.item_features[src]);
            assert_eq!(list.relevance_grades[row], orig.relevance_grades[src]);
        }
        assert_eq!(list.display_order, (0..orig.num_items()).collect::<Vec<_>>());
    }
}
