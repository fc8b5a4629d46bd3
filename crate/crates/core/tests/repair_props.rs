use convsurgeon::fixture::{build_chain, corpus_for, preset_faults, Fault, FixtureKind, FixtureParams};
use convsurgeon::interpreter::execute;
use convsurgeon::localize::{localize, LocalizeConfig};
use convsurgeon::nmif::validate_model;
use convsurgeon::repair::{apply, invert, plan_repairs, repair_chain, Verdict};

const FAULT_KINDS: [FixtureKind; 4] = [
    FixtureKind::ChainParamFault,
    FixtureKind::ChainHyperFault,
    FixtureKind::ChainSubstitution,
    FixtureKind::ChainExtraNode,
];

/// Every fault preset at once, so one plan mixes all action kinds.
fn combined_faults(params: &FixtureParams) -> Vec<Fault> {
    FAULT_KINDS.iter().flat_map(|&k| preset_faults(k, params).unwrap()).collect()
}

#[test]
fn actions_invert_and_leave_the_input_untouched() {
    let params = FixtureParams::default();
    for seed in 0..4 {
        let cases = FAULT_KINDS
            .iter()
            .map(|&k| (k, preset_faults(k, &params).unwrap()))
            .chain([(FixtureKind::ChainParamFault, combined_faults(&params))]);
        for (kind, faults) in cases {
            let built = build_chain(kind, seed, &faults, &params).unwrap();
            let canon = built.chain.canonicalized().unwrap();
            let report = localize(&built.chain, &corpus_for(seed, 40), &LocalizeConfig::default()).unwrap();
            let donor = &canon.stages()[report.compared_stages.0].model;
            let target = canon.target().clone();
            let plan = plan_repairs(&report, donor, &target).unwrap();
            assert!(!plan.actions.is_empty(), "{kind:?} seed {seed}");

            let repaired = apply(&target, &plan.actions).unwrap();
            assert!(target.structurally_eq(canon.target()));
            assert!(validate_model(&target).is_empty() && validate_model(&repaired).is_empty());
            let restored = apply(&repaired, &invert(&plan.actions)).unwrap();
            assert!(restored.structurally_eq(&target), "{kind:?} seed {seed}");
            for action in &plan.actions {
                let one = apply(&target, std::slice::from_ref(action));
                if let Ok(one) = one {
                    assert!(apply(&one, &[action.inverse()]).unwrap().structurally_eq(&target));
                }
            }
        }
    }
}

#[test]
fn every_fault_class_is_resolved_bitwise() {
    for kind in FAULT_KINDS {
        for seed in 0..4 {
            let params = FixtureParams::default();
            let built = build_chain(kind, seed, &preset_faults(kind, &params).unwrap(), &params).unwrap();
            let corpus = corpus_for(seed, 100);
            let result = repair_chain(&built.chain, &corpus, &LocalizeConfig::default()).unwrap();
            let outcome = &result.session.outcome;
            assert_eq!(outcome.verdict, Verdict::Resolved, "{kind:?} seed {seed}");
            assert_eq!(outcome.rate_after, 0.0);
            for input in &corpus {
                let a = execute(&result.source, &input.id, &input.tensor, false, 5).unwrap();
                let b = execute(&result.session.repaired, &input.id, &input.tensor, false, 5).unwrap();
                assert!(a.output.values().bit_eq(b.output.values()), "{kind:?} seed {seed} {}", input.id);
            }
        }
    }
}

#[test]
fn clean_chain_needs_no_actions() {
    let params = FixtureParams::default();
    let built = build_chain(FixtureKind::CleanChain, 2, &[], &params).unwrap();
    let result = repair_chain(&built.chain, &corpus_for(2, 100), &LocalizeConfig::default()).unwrap();
    assert!(result.plan.actions.is_empty());
    assert_eq!(result.session.outcome.verdict, Verdict::Resolved);
    assert!(result.session.repaired.structurally_eq(built.chain.canonicalized().unwrap().target()));
}
