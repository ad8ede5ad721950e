use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use opcrecipe::features::{bin_movement, builtin_pool, class_to_offset, step_nm, Labeler, TypeTag};
use opcrecipe::geometry::{fragment_clip, parse_layout, synth_clip, FragmentPolicy, PointKind, SynthParams};
use opcrecipe::litho::{resist_value, LithoConfig};
use opcrecipe::metrics::{EpeReport, LossWeights, OpcLoss};
use opcrecipe::recipes::{apply_rules, emit_rules, evaluate, train_tree, validate_rules, LabeledSet, Node, TreeParams};
use opcrecipe::rl::nn::{entropy, log_softmax, softmax};
use opcrecipe::rl::{discounted_returns, gae, ActorCritic, Mlp, OpcEnvConfig, PointEncoder, PpoConfig};

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cfg(24))]

    #[test]
    fn synthetic_clips_are_valid_and_round_trip(seed in 0u64..100_000) {
        let clip = synth_clip(seed, &SynthParams::default()).unwrap();
        clip.validate().unwrap();
        prop_assert_eq!(parse_layout(&clip.to_text()).unwrap(), clip.clone());
        for poly in &clip.polygons {
            prop_assert!(poly.area() > 0);
            for e in poly.edges() {
                prop_assert!(e.length_nm >= 1);
                // Half a nanometre along the outward normal leaves the polygon, half inward stays.
                let (x, y) = e.point_at(e.length_nm as f64 / 2.0);
                let (nx, ny) = e.outward_normal.unit_f64();
                prop_assert!(!poly.contains(x + 0.5 * nx, y + 0.5 * ny));
                prop_assert!(poly.contains(x - 0.5 * nx, y - 0.5 * ny));
            }
        }
    }

    #[test]
    fn fragment_points_stay_on_their_edges(seed in 0u64..100_000, offsets in prop::collection::vec(-40i64..=40, 64)) {
        let clip = synth_clip(seed, &SynthParams::default()).unwrap();
        let frag = fragment_clip(&clip, &FragmentPolicy::default()).unwrap();
        for (p, o) in frag.points.iter().zip(offsets.iter().cycle()) {
            if let Ok(q) = p.clone().with_offset(*o) {
                prop_assert!(q.tangential_offset_nm.abs() <= 40);
                let s = q.arclength_nm + q.tangential_offset_nm;
                prop_assert!(0 <= s && s <= q.edge_length_nm);
            }
        }
    }

    #[test]
    fn every_point_has_one_type_and_one_orientation(seed in 0u64..100_000) {
        let clip = synth_clip(seed, &SynthParams::default()).unwrap();
        let frag = fragment_clip(&clip, &FragmentPolicy::default()).unwrap();
        let pool = builtin_pool();
        let lab = Labeler::new(&clip, pool.thresholds);
        for p in &frag.points {
            let v = lab.label(p, &pool).unwrap();
            prop_assert_eq!(v.values.len(), pool.features.len());
            prop_assert_eq!(v.columns()[..4].iter().filter(|b| **b).count(), 1);
            let h = v.get(&pool, "on_horizontal_edge").unwrap();
            let vert = v.get(&pool, "on_vertical_edge").unwrap();
            prop_assert!(h ^ vert);
            let horizontal_tag = matches!(v.type_tag, TypeTag::H | TypeTag::CH);
            prop_assert_eq!(h, horizontal_tag);
        }
    }

    #[test]
    fn encoding_length_is_fixed(seed in 0u64..100_000) {
        let clip = synth_clip(seed, &SynthParams::default()).unwrap();
        let frag = fragment_clip(&clip, &FragmentPolicy::default()).unwrap();
        let ecfg = OpcEnvConfig::default();
        let enc = PointEncoder::new(&clip, &frag, &ecfg);
        for i in 0..frag.points.len() {
            prop_assert_eq!(enc.encode(i, &frag.points).len(), PointEncoder::dim(&ecfg));
        }
    }
}

proptest! {
    #![proptest_config(cfg(512))]

    #[test]
    fn binning_is_odd_and_centres_round_trip(d in -40.0f64..=40.0, classes in prop::sample::select(vec![1, 2, 4, 5, 8, 10])) {
        let c = bin_movement(d, classes).unwrap();
        prop_assert_eq!(bin_movement(-d, classes).unwrap(), -c);
        prop_assert!(c.abs() <= classes);
        prop_assert_eq!(c == 0, d.abs() < step_nm(classes) / 2.0);
        let centre = class_to_offset(c, classes).unwrap();
        prop_assert_eq!(bin_movement(centre as f64, classes).unwrap(), c);
    }

    #[test]
    fn resist_is_strictly_inside_the_unit_interval(a in -10.0f64..10.0) {
        let r = resist_value(a, &LithoConfig::default());
        prop_assert!(r > 0.0 && r < 1.0);
    }

    #[test]
    fn epe_report_bounds(d in prop::collection::vec(-50.0f64..50.0, 0..60), th in 0.0f64..5.0) {
        let r = EpeReport::from_distances(d.clone(), th);
        prop_assert!(r.epe_n <= d.len());
        prop_assert!(r.epe_d >= r.epe_n as f64 * th);
    }

    #[test]
    fn loss_is_the_weighted_sum(l2 in 0u64..100_000, e in 0.0f64..1e4, p in 0u64..100_000, a in 0.0f64..10.0, b in 0.0f64..200.0, g in 0.0f64..10.0) {
        let w = LossWeights { alpha: a, beta: b, gamma_w: g, ..LossWeights::default() };
        let l = OpcLoss::new(l2, e, p, &w);
        prop_assert_eq!(l.total, a * l2 as f64 + b * e + g * p as f64);
        prop_assert!(l.total >= 0.0);
    }

    #[test]
    fn softmax_and_entropy_bounds(logits in prop::collection::vec(-30.0f64..30.0, 1..12)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let h = entropy(&p, &log_softmax(&logits));
        prop_assert!(h >= -1e-12 && h <= (logits.len() as f64).ln() + 1e-9);
    }

    #[test]
    fn gae_with_unit_lambda_and_zero_values_is_the_return(r in prop::collection::vec(-1.0f64..1.0, 1..50), gamma in 0.0f64..1.0) {
        let a = gae(&r, &vec![0.0; r.len()], gamma, 1.0);
        let ret = discounted_returns(&r, gamma);
        for (x, y) in a.iter().zip(&ret) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(cfg(64))]

    #[test]
    fn action_space_covers_forty_nm(classes in prop::sample::select(vec![1usize, 2, 4, 5, 8, 10, 20, 40])) {
        let c = PpoConfig { classes, ..PpoConfig::default() };
        c.validate().unwrap();
        prop_assert_eq!(c.num_actions(), 2 * classes + 1);
        prop_assert_eq!(classes as i64 * c.step_nm(), 40);
    }

    #[test]
    fn backward_matches_central_differences(seed in 0u64..1_000_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [rng.random_range(1..6), rng.random_range(2..7), rng.random_range(1..5)];
        let mut net = Mlp::new(&sizes, 1.0, &mut rng);
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..sizes[2]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |n: &Mlp| n.forward(&x).output().iter().zip(&w).map(|(o, w)| o * w).sum::<f64>();
        let mut g = vec![0.0; net.params.len()];
        net.backward(&net.forward(&x), &w, &mut g);
        let h = 1e-6;
        for i in 0..g.len() {
            let p0 = net.params[i];
            net.params[i] = p0 + h;
            let up = f(&net);
            net.params[i] = p0 - h;
            let down = f(&net);
            net.params[i] = p0;
            let fd = (up - down) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {}: {} vs {}", i, fd, g[i]);
        }
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in 0u64..1_000_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ac = ActorCritic::new(5, 7, &[6, 3], 9, &mut rng);
        let back: ActorCritic = serde_json::from_str(&serde_json::to_string(&ac).unwrap()).unwrap();
        prop_assert!(ac.policy.params.iter().zip(&back.policy.params).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert!(ac.value.params.iter().zip(&back.value.params).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn trees_rules_and_reports_are_consistent(seed in 0u64..1_000_000, n_cols in 2usize..8, n_rows in 1usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<String> = (0..n_cols).map(|i| format!("f{i}")).collect();
        let mut set = LabeledSet::new(cols.clone());
        for _ in 0..n_rows {
            let row: Vec<bool> = (0..n_cols).map(|_| rng.random()).collect();
            let label = if rng.random_bool(0.8) { i32::from(row[0]) - i32::from(row[1]) } else { rng.random_range(-2..=2) };
            set.push(row, label);
        }
        let tree = train_tree(&set, PointKind::Epe, 2, &TreeParams::default()).unwrap();
        // Internal nodes use known features; leaves stay in range.
        let mut stack = vec![&tree.root];
        while let Some(n) = stack.pop() {
            match n {
                Node::Split { feature, if_true, if_false, .. } => {
                    prop_assert!(cols.contains(feature));
                    stack.push(if_true);
                    stack.push(if_false);
                }
                Node::Leaf { class, .. } => prop_assert!(class.abs() <= 2),
            }
        }
        let imp: f64 = tree.importance().values().sum();
        prop_assert!((imp - 1.0).abs() < 1e-9 || (imp == 0.0 && tree.depth() == 0));
        let rules = emit_rules(&tree);
        validate_rules(&rules, &cols, 2).unwrap();
        for _ in 0..64 {
            let row: Vec<bool> = (0..n_cols).map(|_| rng.random()).collect();
            prop_assert_eq!(apply_rules(&rules, PointKind::Epe, &cols, &row).unwrap(), Some(tree.predict(&row)));
        }
        let rep = evaluate(&tree, &set).unwrap();
        for (t, row) in rep.confusion.iter().enumerate() {
            prop_assert_eq!(row.iter().sum::<usize>(), rep.support[t]);
        }
        for v in rep.precision.iter().chain(&rep.recall).chain(&rep.f1).chain([&rep.accuracy, &rep.macro_precision]) {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }
}
