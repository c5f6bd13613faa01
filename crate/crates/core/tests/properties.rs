use ckg_core::autodiff::{load_binary, load_json, save_binary, save_json, Adam, Graph, ParamStore, Tensor};
use ckg_core::forecast::{mhsa, transition_supports, AttentionBlock, DcgruCell};
use ckg_core::integrate::{combine, min_max_normalize, AttributeNormalizer};
use ckg_core::kg::{encode_day, encode_hour, EntityId, Fact, RelationId};
use ckg_core::kge::{train, EmbeddingSet, Family, TrainConfig, SIGMA_MAX, SIGMA_MIN};
use ckg_core::rank::{evaluate_mr, realistic_rank, Side};
use ckg_core::synth::{generate_city, generate_series, WeatherVar};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Scores drawn from a handful of values so ties are frequent.
fn tied_scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0i32..4).prop_map(|v| v as f64 * 0.5), 1..25)
}

fn brute_rank(scores: &[f64], i: usize) -> f64 {
    let better = scores.iter().filter(|&&v| v > scores[i]).count();
    let others = scores.iter().enumerate().filter(|&(j, &v)| j != i && v == scores[i]).count();
    1.0 + better as f64 + others as f64 / 2.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rank_matches_brute_force(scores in tied_scores(), pick in any::<prop::sample::Index>()) {
        let i = pick.index(scores.len());
        prop_assert_eq!(realistic_rank(&scores, i).unwrap(), brute_rank(&scores, i));
    }

    #[test]
    fn rank_ignores_order_of_tied_candidates(scores in tied_scores(), pick in any::<prop::sample::Index>(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let i = pick.index(scores.len());
        let base = realistic_rank(&scores, i).unwrap();
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled: Vec<f64> = order.iter().map(|&j| scores[j]).collect();
        let at = order.iter().position(|&j| j == i).unwrap();
        prop_assert_eq!(realistic_rank(&shuffled, at).unwrap(), base);
    }

    #[test]
    fn worse_candidate_never_lowers_rank(scores in tied_scores(), pick in any::<prop::sample::Index>(), worse in 0.0f64..5.0) {
        let i = pick.index(scores.len());
        let before = realistic_rank(&scores, i).unwrap();
        let mut more = scores.clone();
        more.push(scores[i] - worse);
        prop_assert!(realistic_rank(&more, i).unwrap() >= before);
    }

    #[test]
    fn cosine_encodings_bounded(h in 1u32..=24, d in 1u32..=7) {
        let (a, b) = (encode_hour(h).unwrap(), encode_day(d).unwrap());
        prop_assert!((-1.0..=1.0).contains(&a) && (-1.0..=1.0).contains(&b));
    }

    #[test]
    fn min_max_in_unit_interval(col in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let out = min_max_normalize(&col);
        prop_assert_eq!(out.len(), col.len());
        prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn min_max_scale_invariant(col in prop::collection::vec(1.0f64..100.0, 2..30), c in 0.5f64..8.0) {
        // Powers of two keep the rescaling exact in floating point.
        let c = c.log2().round().exp2();
        let a = min_max_normalize(&col);
        let scaled: Vec<f64> = col.iter().map(|v| v * c).collect();
        prop_assert_eq!(a, min_max_normalize(&scaled));
        let fa = AttributeNormalizer::fit(col.iter().map(|&v| (0, v)));
        let fb = AttributeNormalizer::fit(scaled.iter().map(|&v| (0, v)));
        for &v in &col {
            prop_assert_eq!(fa.apply(0, Some(v)), fb.apply(0, Some(v * c)));
        }
    }

    #[test]
    fn combine_uses_one_branch(
        e in prop::collection::vec(-1.0f64..1.0, 4),
        r in prop::collection::vec(-1.0f64..1.0, 4),
        x in 0.0f64..=1.0,
        y in 0.0f64..=1.0,
    ) {
        let add: Vec<f64> = e.iter().zip(&r).map(|(a, b)| y * a + x * b).collect();
        let mul: Vec<f64> = e.iter().zip(&r).map(|(a, b)| y * a * (x * b)).collect();
        for family in Family::ALL {
            let got = combine(family, &e, y, &[(&r, x)]);
            match family {
                Family::TransE | Family::TransR | Family::KG2E => prop_assert_eq!(&got, &add),
                Family::RESCAL | Family::NTN => prop_assert_eq!(&got, &mul),
                Family::ComplEx => {
                    let (re, im) = (y * e[0] * x * r[0] - y * e[2] * x * r[2], y * e[0] * x * r[2] + y * e[2] * x * r[0]);
                    prop_assert!((got[0] - re).abs() < 1e-15 && (got[2] - im).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(data in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![3, 4], data.clone()).unwrap());
        let s = g.softmax(x);
        for row in g.value(s).data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let x = g.input(Tensor::new(vec![1, 3, 4], data[..12].to_vec()).unwrap());
        let x = g.slice(x, 2, 0, 3).unwrap();
        let c = g.softmax_causal(x).unwrap();
        for (i, row) in g.value(c).data().chunks(3).enumerate() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row[i + 1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_is_linear(a in prop::collection::vec(-1.0f64..1.0, 6), b in prop::collection::vec(-1.0f64..1.0, 6)) {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(vec![2, 3], a).unwrap());
        let bt = Tensor::new(vec![3, 2], b).unwrap();
        let grad = |which: u8| {
            let mut g = Graph::new();
            let wv = g.param(&store, w);
            let bv = g.input(bt.clone());
            let m = g.matmul(wv, bv).unwrap();
            let l1 = { let t = g.tanh(m); g.sum(t) };
            let l2 = { let q = g.square(wv); g.sum(q) };
            let out = match which { 0 => l1, 1 => l2, _ => g.add(l1, l2).unwrap() };
            g.backward(out).unwrap().get(w).unwrap().into_data()
        };
        let (g1, g2, g12) = (grad(0), grad(1), grad(2));
        for i in 0..6 {
            prop_assert!((g1[i] + g2[i] - g12[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn checkpoints_round_trip_bitwise(data in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
        let mut store = ParamStore::new();
        store.add("a", Tensor::vector(data.clone()));
        store.add("b", Tensor::new(vec![1, data.len()], data).unwrap());
        let bits = |s: &ParamStore| s.ids().flat_map(|id| s.get(id).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&load_binary(&save_binary(&store)).unwrap()), bits(&store));
        prop_assert_eq!(bits(&load_json(&save_json(&store)).unwrap()), bits(&store));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mr_both_is_mean_of_all_ranks(seed in 0u64..500, n_facts in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let n = 12;
        let facts: Vec<Fact> = (0..n_facts)
            .map(|_| Fact::new(EntityId(rng.gen_range(0..n as u32)), RelationId(rng.gen_range(0..3)), EntityId(rng.gen_range(0..n as u32)), None))
            .collect();
        let emb = EmbeddingSet::init(Family::TransE, n, 3, &TrainConfig { dim: 3, rel_dim: 3, seed, ..TrainConfig::default() }).unwrap();
        let rep = evaluate_mr(&facts, &emb, Side::Both).unwrap();
        let all: Vec<f64> = rep.left_ranks.iter().chain(&rep.right_ranks).copied().collect();
        prop_assert_eq!(rep.mr_both, all.iter().sum::<f64>() / all.len() as f64);
        prop_assert!(all.iter().all(|&r| r >= 1.0 && r <= n as f64));
    }

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), t in 1usize..10, causal in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let block = AttentionBlock::standard(&mut store, "a", 6, 3, causal, &mut rng).unwrap();
        let x = Tensor::uniform(&[t, 6], 2.0, &mut rng);
        let (out, w) = mhsa(&block, &store, &x).unwrap();
        prop_assert!(out.is_finite());
        for (i, row) in w.data().chunks(t).enumerate() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            if causal {
                prop_assert!(row[i + 1..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn dcgru_state_stays_bounded(seed in any::<u64>(), steps in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adjacency = vec![vec![1], vec![0, 2], vec![1]];
        let supports = transition_supports(&adjacency);
        let mut store = ParamStore::new();
        let cell = DcgruCell::new(&mut store, "c", 1, 4, 2, supports.len(), &mut rng);
        let mut g = Graph::new();
        let mut h = g.input(Tensor::zeros(&[3, 2, 4]));
        for _ in 0..steps {
            let x = g.input(Tensor::uniform(&[3, 2, 1], 3.0, &mut rng));
            h = cell.forward(&mut g, &store, &supports, x, h).unwrap();
        }
        prop_assert!(g.value(h).data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn lazy_adam_leaves_untouched_rows(seed in any::<u64>(), rows in prop::collection::btree_set(0usize..6, 1..4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let id = store.add("table", Tensor::uniform(&[6, 3], 1.0, &mut rng));
        let before = store.get(id).clone();
        let rows: Vec<usize> = rows.into_iter().collect();
        let mut opt = Adam::new(0.1);
        for _ in 0..3 {
            let mut g = Graph::new();
            let v = g.gather_param(&store, id, &rows).unwrap();
            let s = g.square(v);
            let l = g.sum(s);
            let grads = g.backward(l).unwrap();
            opt.step(&mut store, &grads);
        }
        for r in 0..6 {
            let same = store.get(id).row(r) == before.row(r);
            prop_assert_eq!(same, !rows.contains(&r));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn constraints_hold_after_training(seed in 0u64..100) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 15;
        let mut facts: Vec<Fact> = (0..60)
            .map(|_| Fact::new(EntityId(rng.gen_range(0..n as u32)), RelationId(rng.gen_range(0..3)), EntityId(rng.gen_range(0..n as u32)), None))
            .collect();
        facts.sort_by_key(|f| (f.head.0, f.relation.0, f.tail.0));
        facts.dedup_by_key(|f| (f.head.0, f.relation.0, f.tail.0));
        let cfg = TrainConfig { dim: 8, rel_dim: 8, epochs: 5, lr: 0.1, seed, ..TrainConfig::default() };
        for family in [Family::TransE, Family::TransR] {
            let emb = train(&facts, n, 3, family, &cfg).unwrap();
            for e in 0..n {
                let norm: f64 = emb.entity_vector(e).iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!(norm <= 1.0 + 1e-12);
            }
        }
        let emb = train(&facts, n, 3, Family::KG2E, &cfg).unwrap();
        for name in ["ent_sigma", "rel_sigma"] {
            let t = emb.params.get(emb.params.find(name).unwrap());
            prop_assert!(t.data().iter().all(|&s| (SIGMA_MIN..=SIGMA_MAX).contains(&s)));
        }
        // KG2E vectors used downstream are the means.
        let mu = emb.params.get(emb.params.find("ent_mu").unwrap());
        prop_assert_eq!(emb.entity_vector(3), mu.row(3).to_vec());
    }

    #[test]
    fn synthetic_series_in_range(seed in 0u64..1000, roads in 2usize..8) {
        let city = generate_city(roads, seed).unwrap();
        let series = generate_series(&city, 1, seed).unwrap();
        for (r, road) in city.roads.iter().enumerate() {
            prop_assert!((20.0..=90.0).contains(&road.free_flow));
            for t in 0..series.n_slots {
                let (v, j) = (series.speed.get(r, t), series.jam.get(r, t));
                prop_assert!(v > 0.0 && v <= road.free_flow);
                prop_assert!((0.0..=10.0).contains(&j));
            }
        }
        for w in &series.weather {
            for xs in WeatherVar::ALL.iter().filter_map(|&v| w.var(v)) {
                prop_assert!(xs.iter().all(|x| x.is_finite()));
            }
        }
    }
}
