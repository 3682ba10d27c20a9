use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use prowras::data::{load_csv, stratified_folds, write_csv};
use prowras::metrics::{iscore, wsrt, ComparisonCube, ConfusionMatrix};
use prowras::partition::{partition_minority, PartitionParams};
use prowras::samplers::{prowras, ProwrasParams, SchemePreset};
use prowras::synth::{generate_points, ConvexWeights, GenerationParams, ShadowConfig};
use prowras::{Dataset, Points};

fn dataset(coords: Vec<(f64, f64)>, n_min: usize) -> Dataset {
    let n = coords.len();
    let flat = coords.into_iter().flat_map(|(x, y)| [x, y]).collect();
    let mask: Vec<bool> = (0..n).map(|i| i < n_min).collect();
    Dataset::from_mask(Points::from_flat(flat, 2).unwrap(), &mask).unwrap()
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (4usize..60)
        .prop_flat_map(|n| (prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), n), 1..=n / 2))
        .prop_map(|(coords, n_min)| dataset(coords, n_min))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_covers_minority_disjointly(
        d in arb_dataset(),
        max_levels in 1usize..7,
        n_neighbours_max in 1usize..7,
        theta in 0.1..3.0f64,
    ) {
        let p = partition_minority(&d, &PartitionParams { max_levels, n_neighbours_max, theta }).unwrap();
        let mut seen = BTreeSet::new();
        for level in &p.levels {
            prop_assert!(!level.indices.is_empty());
            for &i in &level.indices {
                prop_assert!(d.is_minority(i));
                prop_assert!(seen.insert(i), "row {} in two levels", i);
            }
        }
        prop_assert_eq!(seen.len(), d.minority_count());
        prop_assert!(p.len() <= max_levels);
        prop_assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for w in p.weights().windows(2) {
            prop_assert!(w[0] > w[1]);
        }
    }

    #[test]
    fn prowras_count_and_label(d in arb_dataset(), scheme in 0usize..4, n in 0usize..200, seed: u64) {
        let scheme = SchemePreset::ALL[scheme];
        let mut params = ProwrasParams::default().with_scheme(scheme, d.n_feats(), d.minority_count());
        params.num_samples_to_generate = Some(n);
        let batch = prowras(&d, &params, seed).unwrap();
        let levels = partition_minority(&d, &params.partition()).unwrap().len();
        prop_assert!(batch.len() >= n && batch.len() <= n + levels);
        prop_assert_eq!(batch.origins.len(), batch.len());
        prop_assert_eq!(&batch.label, d.minority_label());
        prop_assert!(batch.points.all_finite());
        for o in &batch.origins {
            prop_assert!(o.parents.iter().all(|&p| d.is_minority(p)));
        }
    }

    #[test]
    fn raw_combinations_stay_in_bounding_box(
        pts in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64), 2..20),
        seed: u64,
    ) {
        let rows: Vec<[f64; 3]> = pts.iter().map(|&(a, b, c)| [a, b, c]).collect();
        let cluster = Points::from_rows(&rows).unwrap();
        let params = GenerationParams { neb_conv: 5, shadow: ShadowConfig::new(10, 0.0), num_feats: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for num_convcomb in [1, 3] {
            let g = generate_points(&cluster, 50, num_convcomb, &params, &mut rng).unwrap();
            for p in g.points.rows() {
                for j in 0..3 {
                    let lo = cluster.rows().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                    let hi = cluster.rows().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(p[j] >= lo - 1e-12 && p[j] <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn convex_weights_sum_to_one(k in 1usize..40, seed: u64) {
        let w = ConvexWeights::sample(k, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(w.as_slice().len(), k);
        prop_assert!(w.as_slice().iter().all(|&x| x > 0.0));
        prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip(rows in prop::collection::vec((any::<f64>(), -1e300..1e300f64, any::<bool>()), 2..30)) {
        prop_assume!(rows.iter().all(|r| r.0.is_finite()));
        let n_min = rows.iter().filter(|r| r.2).count();
        prop_assume!(n_min >= 1 && 2 * n_min <= rows.len());
        let mask: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let pts = Points::from_rows(&rows.iter().map(|r| [r.0, r.1]).collect::<Vec<_>>()).unwrap();
        let d = Dataset::from_mask(pts, &mask).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        write_csv(&d, file.path()).unwrap();
        let back = load_csv(file.path(), d.label_name(), Some(d.minority_label())).unwrap();
        prop_assert_eq!(back.features(), d.features());
        prop_assert_eq!(back.labels(), d.labels());
    }

    #[test]
    fn folds_partition_every_row(d in arb_dataset(), folds in 2usize..5, seed: u64) {
        prop_assume!(d.minority_count() >= folds);
        let plan = stratified_folds(&d, 2, folds, seed).unwrap();
        for r in 0..2 {
            let mut all = Vec::new();
            for f in 0..folds {
                let test = plan.test_indices(r, f);
                prop_assert!(test.iter().any(|&i| d.is_minority(i)));
                let n_min = test.iter().filter(|&&i| d.is_minority(i)).count();
                prop_assert!(n_min.abs_diff(d.minority_count() / folds) <= 1);
                all.extend(test);
            }
            all.sort_unstable();
            prop_assert_eq!(all, (0..d.n_samples()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn kappa_symmetric_under_transpose(tp in 0u64..100, fp in 0u64..100, fn_ in 0u64..100, tn in 0u64..100) {
        prop_assume!(tp + fp + fn_ + tn > 0);
        let a = ConfusionMatrix::new(tp, fp, fn_, tn).kappa();
        let b = ConfusionMatrix::new(tp, fn_, fp, tn).kappa();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn iscore_bounded_and_order_invariant(
        scores in prop::collection::vec(prop::collection::vec(prop::collection::vec(0u8..6, 3), 4), 1..4),
        target in 0usize..3,
    ) {
        let build = |f: &dyn Fn(f64) -> f64| {
            let mut entries = Vec::new();
            let names: Vec<(String, String, String)> = (0..scores.len())
                .flat_map(|c| (0..4).flat_map(move |d| (0..3).map(move |o| (format!("c{c}"), format!("d{d}"), format!("o{o}")))))
                .collect();
            let flat: Vec<f64> = scores.iter().flatten().flatten().map(|&s| f(f64::from(s) / 5.0)).collect();
            for ((c, d, o), s) in names.iter().zip(flat) {
                entries.push((c.clone(), d.clone(), o.clone(), s));
            }
            ComparisonCube::from_entries(entries.iter().map(|(c, d, o, s)| (c.as_str(), d.as_str(), o.as_str(), *s))).unwrap()
        };
        let target = format!("o{target}");
        let plain = iscore(&build(&|x| x), &target, 0.0).unwrap();
        let warped = iscore(&build(&|x| (3.0 * x).exp() - 7.0), &target, 0.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&plain));
        prop_assert_eq!(plain, warped);
    }

    #[test]
    fn wsrt_antisymmetric_and_translation_invariant(
        pairs in prop::collection::vec((-512i32..512, -512i32..512, -4096i32..4096), 1..25),
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| f64::from(p.0) / 64.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| f64::from(p.1) / 64.0).collect();
        let shift: Vec<f64> = pairs.iter().map(|p| f64::from(p.2) / 16.0).collect();
        let r = wsrt(&a, &b).unwrap();
        let s = wsrt(&b, &a).unwrap();
        prop_assert_eq!(r.w_plus, s.w_minus);
        prop_assert_eq!(r.w_minus, s.w_plus);
        prop_assert_eq!(r.z.abs(), s.z.abs());
        let a2: Vec<f64> = a.iter().zip(&shift).map(|(x, c)| x + c).collect();
        let b2: Vec<f64> = b.iter().zip(&shift).map(|(x, c)| x + c).collect();
        prop_assert_eq!(wsrt(&a2, &b2).unwrap(), r.clone());
        if !r.degenerate {
            let n = r.n_effective as f64;
            prop_assert!((r.w_plus + r.w_minus - n * (n + 1.0) / 2.0).abs() < 1e-9);
            prop_assert!(r.z <= 0.0);
            prop_assert!((0.0..=1.0).contains(&r.p_one_sided) && (0.0..=1.0).contains(&r.p_two_sided));
        }
    }
}
