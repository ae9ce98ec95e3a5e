use std::collections::BTreeSet;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use begin_core::bitgroup::{build_index_sets, span_generate_in, span_intersect, Mask};
use begin_core::distribution::{interaction_cov, make_generic_pmf, Pmf};
use begin_core::hadamard::{fwht, prism, xor_convolution};
use begin_core::quantize::{cell_index, deltas, quantize_value, ExactMode, Source};
use begin_core::schur::{pinv_sym, RankTol};
use begin_core::Partition;

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn brute_closure(gens: &[u32]) -> BTreeSet<u32> {
    let mut set = BTreeSet::from([0u32]);
    loop {
        let next: BTreeSet<u32> = set.iter().flat_map(|&x| gens.iter().map(move |&g| x ^ g)).chain(set.iter().copied()).collect();
        if next.len() == set.len() {
            return set;
        }
        set = next;
    }
}

fn masks(bits: &[u32], width: usize) -> Vec<Mask> {
    bits.iter().map(|&b| Mask::new(b, width).unwrap()).collect()
}

proptest! {
    #[test]
    fn mask_product_is_group_law(width in 1usize..=24, a in any::<u32>(), b in any::<u32>(), c in any::<u32>()) {
        let lim = (1u64 << width) as u32;
        let wrap = |x: u32| if width == 32 { x } else { x % lim.max(1) };
        let (a, b, c) = (
            Mask::new(wrap(a), width).unwrap(),
            Mask::new(wrap(b), width).unwrap(),
            Mask::new(wrap(c), width).unwrap(),
        );
        prop_assert_eq!(a.product(b).unwrap(), b.product(a).unwrap());
        prop_assert_eq!(a.product(b).unwrap().product(c).unwrap(), a.product(b.product(c).unwrap()).unwrap());
        prop_assert!(a.product(a).unwrap().is_zero());
        prop_assert_eq!(a.product(Mask::zero(width)).unwrap(), a);
    }

    #[test]
    fn span_is_closure(gens in prop::collection::vec(0u32..256, 0..6)) {
        let span = span_generate_in(&masks(&gens, 8), 8).unwrap();
        let got: BTreeSet<u32> = span.elements().iter().map(|m| m.bits()).collect();
        prop_assert_eq!(got.len(), 1usize << span.dim());
        prop_assert_eq!(got, brute_closure(&gens));
    }

    #[test]
    fn intersection_dimension_formula(u in prop::collection::vec(0u32..1024, 0..6), v in prop::collection::vec(0u32..1024, 0..6)) {
        let su = span_generate_in(&masks(&u, 10), 10).unwrap();
        let sv = span_generate_in(&masks(&v, 10), 10).unwrap();
        let cap = span_intersect(&su, &sv).unwrap();
        let sum = su.sum(&sv).unwrap();
        prop_assert_eq!(su.dim() + sv.dim(), sum.dim() + cap.dim());
        let eu: BTreeSet<u32> = su.elements().iter().map(|m| m.bits()).collect();
        let ev: BTreeSet<u32> = sv.elements().iter().map(|m| m.bits()).collect();
        let ec: BTreeSet<u32> = cap.elements().iter().map(|m| m.bits()).collect();
        prop_assert_eq!(ec, eu.intersection(&ev).copied().collect::<BTreeSet<_>>());
    }

    #[test]
    fn index_set_sizes_for_disjoint_blocks(r in 0usize..=3, s in 0usize..=3, t in 0usize..=3) {
        prop_assume!(r + s + t > 0);
        let sets = build_index_sets(&Partition::contiguous(r, s, t).unwrap()).unwrap();
        prop_assert_eq!(sets.center.len(), (1 << s) - 1);
        prop_assert_eq!(sets.left.len(), (1 << (r + s)) - (1 << s));
        prop_assert_eq!(sets.right.len(), (1 << (s + t)) - (1 << s));
        prop_assert!(!sets.wings_overlap);
    }

    #[test]
    fn intersection_contains_center(p in 2usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<Mask> {
            (0..n).map(|_| Mask::new(rng.random_range(1..1u32 << p), p).unwrap()).collect()
        };
        let (a, b, c) = (draw(2), draw(2), draw(2));
        let ab = span_generate_in(&[a.clone(), b.clone()].concat(), p).unwrap();
        let bc = span_generate_in(&[b.clone(), c.clone()].concat(), p).unwrap();
        let center = span_generate_in(&b, p).unwrap();
        prop_assert!(center.is_subspace_of(&span_intersect(&ab, &bc).unwrap()));
    }

    #[test]
    fn moments_invert_and_satisfy_parseval(p in 1usize..=8, seed in any::<u64>(), zeros in 0.0f64..0.5) {
        let pmf = make_generic_pmf(p, seed, zeros).unwrap();
        let m = pmf.moments();
        prop_assert_eq!(m.as_slice()[0], 1.0);
        prop_assert!(m.as_slice().iter().all(|v| v.abs() <= 1.0 + 1e-12));
        let back = fwht(m.as_slice()).unwrap();
        let n = (1usize << p) as f64;
        for (b, pr) in back.iter().zip(pmf.probs()) {
            prop_assert!((b / n - pr).abs() <= 1e-12);
        }
        let lhs: f64 = m.as_slice().iter().map(|v| v * v).sum();
        let rhs: f64 = n * pmf.probs().iter().map(|v| v * v).sum::<f64>();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0));
    }

    #[test]
    fn interaction_cov_is_symmetric_psd(p in 1usize..=5, seed in any::<u64>(), zeros in 0.0f64..0.7) {
        let pmf = make_generic_pmf(p, seed, zeros).unwrap();
        let all = masks(&(1..1u32 << p).collect::<Vec<_>>(), p);
        let sigma = interaction_cov(&pmf, &all, &all);
        prop_assert_eq!(max_abs(&(&sigma - sigma.transpose())), 0.0);
        let min = sigma.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-10, "min eigenvalue {}", min);
    }

    #[test]
    fn prism_is_linear(p in 0usize..=5, seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1 << p;
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = y.iter().zip(&z).map(|(u, v)| a * u + b * v).collect();
        let lhs = prism(&mix).unwrap().to_dense().unwrap();
        let rhs = prism(&y).unwrap().to_dense().unwrap() * a + prism(&z).unwrap().to_dense().unwrap() * b;
        prop_assert!(max_abs(&(lhs - rhs)) <= 1e-12);
    }

    #[test]
    fn prism_product_is_prism_of_convolution(p in 0usize..=5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1usize << p;
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let brute: Vec<f64> = (0..n).map(|k| (0..n).map(|i| y[i] * z[i ^ k]).sum()).collect();
        let conv = xor_convolution(&y, &z).unwrap();
        for (c, b) in conv.iter().zip(&brute) {
            prop_assert!((c - b).abs() <= 1e-12);
        }
        let product = prism(&y).unwrap().to_dense().unwrap() * prism(&z).unwrap().to_dense().unwrap();
        prop_assert!(max_abs(&(product - prism(&brute).unwrap().to_dense().unwrap())) <= 1e-12);
    }

    #[test]
    fn pmf_csv_round_trip(p in 1usize..=6, seed in any::<u64>(), zeros in 0.0f64..0.6) {
        let pmf = make_generic_pmf(p, seed, zeros).unwrap();
        let back = Pmf::from_csv_reader(pmf.to_csv_string().as_bytes()).unwrap();
        prop_assert_eq!(back.probs(), pmf.probs());
        prop_assert_eq!(back.meta(), pmf.meta());
    }

    #[test]
    fn quantizer_properties(x in -1.0f64..=1.0, y in -1.0f64..=1.0, d in 1u32..=12) {
        let q = quantize_value(x, d).unwrap();
        let step = 0.5f64.powi(d as i32 - 1);
        let k = (q + 1.0 - 0.5f64.powi(d as i32)) / step;
        prop_assert_eq!(k, k.round());
        prop_assert!((0.0..(1u64 << d) as f64).contains(&k));
        prop_assert!((x - q).abs() <= 0.5f64.powi(d as i32));
        if x <= y {
            prop_assert!(q <= quantize_value(y, d).unwrap());
        }
        // one more bit refines: truncating it recovers the coarser cell
        prop_assert_eq!(cell_index(x, d + 1).unwrap() >> 1, cell_index(x, d).unwrap());
        prop_assert_eq!(quantize_value(quantize_value(x, d + 1).unwrap(), d).unwrap(), q);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn pinv_satisfies_penrose_identities(n in 1usize..=40, deficit in 0usize..=3, seed in any::<u64>()) {
        prop_assume!(deficit < n || n == deficit);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = g.qr().q();
        let rank = n.saturating_sub(deficit);
        let lambda = DMatrix::from_fn(n, n, |i, j| if i == j && i < rank { rng.random_range(0.2..3.0) } else { 0.0 });
        let mut a = &q * lambda * q.transpose();
        a = (&a + a.transpose()) * 0.5;
        let (ap, r) = pinv_sym(&a, RankTol::default()).unwrap();
        prop_assert_eq!(r, rank);
        prop_assert!(max_abs(&(&a * &ap * &a - &a)) <= 1e-8);
        prop_assert!(max_abs(&(&ap * &a * &ap - &ap)) <= 1e-8);
        let aap = &a * &ap;
        let apa = &ap * &a;
        prop_assert!(max_abs(&(&aap - aap.transpose())) <= 1e-8);
        prop_assert!(max_abs(&(&apa - apa.transpose())) <= 1e-8);
    }
}

fn random_table(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // dyadic weights summing to one
    let mut counts: Vec<u32> = (0..n).map(|_| rng.random_range(0..8)).collect();
    if counts.iter().all(|&c| c == 0) {
        counts[0] = 1;
    }
    let total: u32 = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn delta_tiers_are_ordered_for_coarse_tables(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_table(&mut rng, 4);
        let u: Vec<Vec<f64>> = (0..4).map(|_| random_table(&mut rng, 4)).collect();
        let w: Vec<Vec<f64>> = (0..4).map(|_| random_table(&mut rng, 2)).collect();
        let json = serde_json::json!({
            "r": 1, "s": 1, "t": 1,
            "v": {"depth": 2, "weights": v},
            "u": {"kind": "table", "depth": 2, "tables": u},
            "w": {"kind": "table", "depth": 1, "tables": w},
        });
        let src = Source::from_json(&json.to_string()).unwrap();
        // depth 1 is coarser than the grid, so the quantized fields are dependent
        let point = deltas(&src.quantized_joint(1).unwrap(), ExactMode::Required).unwrap();
        let exact = point.delta_exact.unwrap();
        prop_assert!(point.delta_rect <= exact && exact <= point.delta_upper, "{:?}", point);
    }

    #[test]
    fn delta_tiers_are_ordered_for_tilted_sources(seed in any::<u64>(), d in 1u32..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tilt = || {
            let a: f64 = rng.random_range(-0.5..0.5);
            let b: f64 = rng.random_range(0.1..(1.0 - a.abs())) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (a, b)
        };
        let ((au, bu), (aw, bw)) = (tilt(), tilt());
        let v = random_table(&mut rng, 2);
        let json = serde_json::json!({
            "r": 1, "s": 1, "t": 1,
            "v": {"depth": 1, "weights": v},
            "u": {"kind": "linear", "intercept": [au], "slope": [[bu]]},
            "w": {"kind": "linear", "intercept": [aw], "slope": [[bw]]},
        });
        let src = Source::from_json(&json.to_string()).unwrap();
        let point = deltas(&src.quantized_joint(d).unwrap(), ExactMode::Required).unwrap();
        let exact = point.delta_exact.unwrap();
        prop_assert!(exact > 0.0);
        prop_assert!(point.delta_rect <= exact && exact <= point.delta_upper, "{:?}", point);
    }
}
