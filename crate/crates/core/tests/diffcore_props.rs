use std::collections::HashSet;

use convsurgeon::diffcore::{align_layers, diff_params, DiffReport};
use convsurgeon::fixture::{random_cnn, random_corpus, rename_nodes, to_nhwc};
use convsurgeon::interpreter::execute;
use convsurgeon::nmif::{canonicalize_layout, ModelGraph};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A different topological order of the same nodes.
fn shuffle_topologically(model: &ModelGraph, rng: &mut ChaCha8Rng) -> ModelGraph {
    let mut available: HashSet<String> = model.inputs.iter().map(|v| v.name.clone()).chain(model.initializers.keys().cloned()).collect();
    let mut pending: Vec<usize> = (0..model.nodes.len()).collect();
    let mut order = Vec::new();
    while !pending.is_empty() {
        let ready: Vec<usize> = pending.iter().copied().filter(|&i| model.nodes[i].inputs.iter().all(|x| available.contains(x))).collect();
        let pick = ready[rng.random_range(0..ready.len())];
        pending.retain(|&i| i != pick);
        available.extend(model.nodes[pick].outputs.iter().cloned());
        order.push(pick);
    }
    let mut g = model.clone();
    g.nodes = order.into_iter().map(|i| model.nodes[i].clone()).collect();
    g
}

/// Adds `delta` to one element of a random initializer.
fn nudge(model: &ModelGraph, rng: &mut ChaCha8Rng, delta: f32) -> ModelGraph {
    let mut g = model.clone();
    let keys: Vec<String> = g.initializers.keys().cloned().collect();
    let key = &keys[rng.random_range(0..keys.len())];
    let values = g.initializers.get_mut(key).unwrap().as_f32_mut().unwrap();
    let i = rng.random_range(0..values.len());
    values[i] += delta;
    g
}

fn has_params(model: &ModelGraph) -> bool {
    !model.initializers.is_empty()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn param_diff_is_symmetric(seed in any::<u64>(), delta in -0.5f32..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_cnn(seed);
        prop_assume!(has_params(&a));
        let b = nudge(&a, &mut rng, delta);
        let (b, _) = rename_nodes(&b, &mut rng, "r_");
        let ab = diff_params(&a, &b, &align_layers(&a, &b));
        let ba = diff_params(&b, &a, &align_layers(&b, &a));
        prop_assert_eq!(ab.len(), ba.len());
        for (x, y) in ab.iter().zip(&ba) {
            prop_assert_eq!(&x.pair.0, &y.pair.1);
            prop_assert_eq!(&x.pair.1, &y.pair.0);
            prop_assert_eq!(x.slot, y.slot);
            prop_assert_eq!(x.mean_abs_diff.to_bits(), y.mean_abs_diff.to_bits());
            prop_assert_eq!(x.max_abs_diff.to_bits(), y.max_abs_diff.to_bits());
        }
    }

    #[test]
    fn alignment_is_stable_under_renaming_and_reordering(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_cnn(seed);
        let (renamed, ids) = rename_nodes(&a, &mut rng, "n_");
        let al = align_layers(&a, &renamed);
        prop_assert_eq!(al.pairs.len(), a.nodes.len());
        prop_assert_eq!(al.score, 1.0);
        for (s, t) in &al.pairs {
            prop_assert_eq!(&ids[s], t);
        }

        let shuffled = shuffle_topologically(&renamed, &mut rng);
        prop_assert_eq!(&align_layers(&a, &shuffled).pairs, &al.pairs);
        let shuffled_source = shuffle_topologically(&a, &mut rng);
        prop_assert_eq!(&align_layers(&shuffled_source, &renamed).pairs, &al.pairs);
    }

    /// Whenever all three diffs come back empty or zero, the two models agree
    /// bitwise on every input.
    #[test]
    fn clean_diff_implies_equal_outputs(seed in any::<u64>(), mode in 0u8..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_cnn(seed);
        prop_assume!(has_params(&a));
        let b = match mode {
            0 => nudge(&a, &mut rng, 0.0),
            1 => nudge(&a, &mut rng, 1e-3),
            2 => canonicalize_layout(&to_nhwc(&a).unwrap()).unwrap(),
            _ => a.clone(),
        };
        let (b, _) = rename_nodes(&b, &mut rng, "t_");
        let report = DiffReport::compute(&a, &b);
        let numerically_clean = report.params.iter().all(|p| p.max_abs_diff == 0.0);
        prop_assert_eq!(report.is_clean(), numerically_clean && report.hypers.is_empty() && report.structure.is_empty());
        if mode == 1 {
            prop_assert!(!report.is_clean());
        }
        if report.is_clean() {
            for input in random_corpus(seed ^ 0xabc, &a.inputs[0].shape, 8) {
                let x = execute(&a, &input.id, &input.tensor, false, 5).unwrap();
                let y = execute(&b, &input.id, &input.tensor, false, 5).unwrap();
                prop_assert!(x.output.values().bit_eq(y.output.values()));
            }
        }
    }
}
