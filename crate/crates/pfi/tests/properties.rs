//! Property tests over randomized trees and assignments.

use proptest::prelude::*;

use pfi::oscillatory::FrequencyAssignment;
use pfi::sympoly::ROOT_SYMBOL;
use pfi::trees::{DecoratedTree, DispersionSpec, LinearFrequency};

fn spec_for(idx: bool) -> DispersionSpec {
    if idx {
        DispersionSpec::kdv()
    } else {
        DispersionSpec::nls()
    }
}

/// A generated tree together with a random assignment of its symbols.
fn tree_and_assignment(
    kdv: bool,
    tree_pick: usize,
    vals: Vec<i64>,
) -> (DispersionSpec, DecoratedTree, FrequencyAssignment) {
    let spec = spec_for(kdv);
    let trees = pfi::duhamel_trees(&spec, 1);
    let tree = trees[tree_pick % trees.len()].clone();
    let mut a = FrequencyAssignment::new(1);
    a.set(ROOT_SYMBOL, vec![*vals.first().unwrap_or(&1)]);
    for (i, s) in tree
        .all_symbols()
        .into_iter()
        .filter(|&s| s != ROOT_SYMBOL)
        .enumerate()
    {
        a.set(s, vec![vals.get(i + 1).copied().unwrap_or(2)]);
    }
    (spec, tree, a)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_trees_satisfy_kirchhoff(kdv: bool, r in 0i32..=1) {
        let spec = spec_for(kdv);
        for t in pfi::duhamel_trees(&spec, r) {
            prop_assert!(pfi::kirchhoff_valid(&t));
        }
    }

    #[test]
    fn symmetry_factor_ignores_node_decorations(
        kdv: bool,
        pick in 0usize..4,
        vals in proptest::collection::vec(-9i64..=9, 6),
    ) {
        let spec = spec_for(kdv);
        let trees = pfi::duhamel_trees(&spec, 1);
        let tree = trees[pick % trees.len()].clone();
        let s0 = pfi::symmetry_factor(&tree);
        // randomize every node frequency; the factor only sees the skeleton
        let mut i = 0usize;
        let mut scrambled = tree.clone();
        fn scramble(t: &mut DecoratedTree, vals: &[i64], i: &mut usize) {
            t.freq = LinearFrequency::from_terms(&[(7, vals[*i % vals.len()] as i32)]);
            *i += 1;
            for c in &mut t.children {
                scramble(c, vals, i);
            }
        }
        scramble(&mut scrambled, &vals, &mut i);
        scrambled.canonicalize();
        prop_assert_eq!(s0, pfi::symmetry_factor(&scrambled));
    }

    #[test]
    fn canonical_form_is_permutation_invariant(
        kdv: bool,
        pick in 0usize..4,
        seed in 0u64..1000,
    ) {
        let spec = spec_for(kdv);
        let trees = pfi::duhamel_trees(&spec, 1);
        let tree = trees[pick % trees.len()].clone();
        // rotate children at every node, then re-canonicalize
        fn rotate(t: &mut DecoratedTree, seed: u64) {
            if !t.children.is_empty() {
                let k = (seed as usize) % t.children.len();
                t.children.rotate_left(k);
            }
            for c in &mut t.children {
                rotate(c, seed / 2 + 1);
            }
        }
        let mut shuffled = tree.clone();
        rotate(&mut shuffled, seed);
        shuffled.canonicalize();
        prop_assert_eq!(tree.canonical_bytes(), shuffled.canonical_bytes());
    }

    #[test]
    fn exact_character_is_multiplicative(
        kdv: bool,
        pa in 0usize..4,
        pb in 0usize..4,
        vals in proptest::collection::vec(-8i64..=8, 8),
        tau in 0.01f64..0.3,
    ) {
        let (spec, ta, a1) = tree_and_assignment(kdv, pa, vals.clone());
        let (_, tb, _) = tree_and_assignment(kdv, pb, vals.clone());
        // one assignment covering both trees
        let mut a = a1;
        for (i, s) in tb
            .all_symbols()
            .into_iter()
            .filter(|&s| s != ROOT_SYMBOL)
            .enumerate()
        {
            a.set(s, vec![vals.get(i + 1).copied().unwrap_or(-3)]);
        }
        let forest = [ta.clone(), tb.clone()];
        let prod = pfi::eval_pi_forest(&forest, &spec, &a).eval(tau);
        let split = pfi::eval_pi(&ta, &spec, &a).eval(tau) * pfi::eval_pi(&tb, &spec, &a).eval(tau);
        prop_assert!((prod - split).norm() <= 1e-10 * split.norm().max(1.0));
    }

    #[test]
    fn truncated_approximation_is_stable_in_the_order(
        kdv: bool,
        pick in 0usize..4,
        vals in proptest::collection::vec(-8i64..=8, 6),
        tau in 0.01f64..0.2,
    ) {
        // Q_{<= r+1} Pi^{n,r} agrees with Q_{<= r+1} Pi^{n,r'} for r <= r'
        let (spec, tree, a) = tree_and_assignment(kdv, pick, vals);
        for r in 0i32..=1 {
            let lo = pfi::eval_pi_nr(&tree, r, &spec, &a);
            for rp in r..=3 {
                let hi = pfi::eval_pi_nr(&tree, rp, &spec, &a);
                if lo.is_zero() {
                    continue;
                }
                // compare tau-coefficients up to r+1 (the sums share one
                // carrier phase, so coefficients are comparable directly)
                for j in 0..=(r + 1) as usize {
                    let cl: num_complex::Complex64 =
                        lo.terms.iter().map(|t| t.coeffs.get(j).copied().unwrap_or_default()).sum();
                    let ch: num_complex::Complex64 =
                        hi.terms.iter().map(|t| t.coeffs.get(j).copied().unwrap_or_default()).sum();
                    prop_assert!((cl - ch).norm() <= 1e-9 * ch.norm().max(1.0),
                        "r={} r'={} j={} tau={}", r, rp, j, tau);
                }
            }
        }
    }

    #[test]
    fn upsilon_factor_count_equals_leaf_count(kdv: bool, pick in 0usize..4) {
        let spec = spec_for(kdv);
        let trees = pfi::duhamel_trees(&spec, 1);
        let tree = &trees[pick % trees.len()];
        let u = pfi::upsilon(tree, &spec).unwrap();
        prop_assert_eq!(u.factors.len(), tree.leaf_count());
    }
}
