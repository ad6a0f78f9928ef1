mod common;

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use opinion_core::dynamics::{self, Ordering, SimulationOptions};
use opinion_core::graph;
use opinion_core::model::{self, validate_logic, validate_profile, LogicProfile};
use opinion_core::oracle;
use opinion_core::predict::{self, BlockFamily, Verdict};
use opinion_core::scenario::{generate_scenario, GeneratorSpec, Scenario, SignMode};
use proptest::prelude::*;

fn spec(n: usize, m: usize, density: f64, signs: SignMode, competition: bool, irreducible: bool) -> GeneratorSpec {
    GeneratorSpec {
        n,
        m,
        extra_edge_prob: 0.3,
        density,
        pattern: None,
        irreducible,
        signs,
        sign_flip_prob: 0.5,
        competition,
    }
}

fn build(spec: &GeneratorSpec, seed: u64) -> Option<Scenario> {
    generate_scenario(spec, seed).ok()?.resolve().ok()
}

fn sign_mode() -> impl Strategy<Value = SignMode> {
    prop_oneof![Just(SignMode::Random), Just(SignMode::Balanced), Just(SignMode::Unbalanced)]
}

fn any_scenario() -> impl Strategy<Value = Option<Scenario>> {
    (2usize..9, 1usize..7, 0.0f64..0.8, sign_mode(), any::<bool>(), any::<bool>(), any::<u64>()).prop_map(
        |(n, m, d, s, c, irr, seed)| build(&spec(n, m, d, s, c, irr), seed),
    )
}

fn permute_topics(c: &DMatrix<f64>, sigma: &[usize]) -> DMatrix<f64> {
    // new topic sigma[p] is old topic p
    let m = c.nrows();
    let mut out = DMatrix::zeros(m, m);
    for p in 0..m {
        for q in 0..m {
            out[(sigma[p], sigma[q])] = c[(p, q)];
        }
    }
    out
}

fn relabel(profile: &LogicProfile, sigma: &[usize]) -> LogicProfile {
    let mats = profile
        .matrices()
        .iter()
        .map(|c| validate_logic(permute_topics(c.matrix(), sigma)).unwrap())
        .collect();
    validate_profile(mats).unwrap()
}

fn block_set(blocks: &[Vec<usize>]) -> BTreeSet<Vec<usize>> {
    blocks
        .iter()
        .map(|b| {
            let mut b = b.clone();
            b.sort();
            b
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn partition_ignores_individual_order(s in any_scenario()) {
        let Some(s) = s else { return Ok(()) };
        let mut mats = s.profile.matrices().to_vec();
        mats.reverse();
        let reversed = validate_profile(mats).unwrap();
        let a = graph::condense_logic(&s.profile);
        let b = graph::condense_logic(&reversed);
        prop_assert_eq!(a.blocks, b.blocks);
        prop_assert_eq!(a.closed, b.closed);
        for p in 0..s.profile.m() {
            prop_assert_eq!(
                model::detect_competing(&s.profile, p).is_empty(),
                model::detect_competing(&reversed, p).is_empty()
            );
        }
    }

    #[test]
    fn competition_depends_only_on_signs(s in any_scenario(), scale in 0.1f64..0.9) {
        let Some(s) = s else { return Ok(()) };
        // shrink every off-diagonal entry and give the slack to the diagonal
        let m = s.profile.m();
        let mats: Vec<_> = s
            .profile
            .matrices()
            .iter()
            .map(|c| {
                let mut x = c.matrix().clone();
                for p in 0..m {
                    let mut moved = 0.0;
                    for q in 0..m {
                        if p != q {
                            moved += x[(p, q)].abs() * (1.0 - scale);
                            x[(p, q)] *= scale;
                        }
                    }
                    x[(p, p)] += if x[(p, p)] < 0.0 { -moved } else { moved };
                }
                x
            })
            .collect();
        let Ok(mats) = mats.into_iter().map(validate_logic).collect::<Result<Vec<_>, _>>() else {
            return Ok(());
        };
        let Ok(scaled) = validate_profile(mats) else { return Ok(()) };
        for p in 0..m {
            let a: BTreeSet<_> = model::detect_competing(&s.profile, p).into_iter().collect();
            let b: BTreeSet<_> = model::detect_competing(&scaled, p).into_iter().collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn competition_witnesses_are_genuine(s in any_scenario()) {
        let Some(s) = s else { return Ok(()) };
        for p in 0..s.profile.m() {
            for w in model::detect_competing(&s.profile, p) {
                prop_assert!(w.q != p);
                prop_assert!(s.profile.entry(w.i, p, w.q) * s.profile.entry(w.j, p, w.q) < 0.0);
            }
        }
    }

    #[test]
    fn partition_is_equivariant_under_topic_relabelling(s in any_scenario(), shift in 0usize..5, flip in any::<bool>()) {
        let Some(s) = s else { return Ok(()) };
        let m = s.profile.m();
        let sigma: Vec<usize> = (0..m).map(|p| {
            let r = (p + shift) % m;
            if flip { m - 1 - r } else { r }
        }).collect();
        let relabelled = relabel(&s.profile, &sigma);
        let a = graph::condense_logic(&s.profile);
        let b = graph::condense_logic(&relabelled);
        let mapped: Vec<Vec<usize>> = a.blocks.iter().map(|blk| blk.iter().map(|&p| sigma[p]).collect()).collect();
        prop_assert_eq!(block_set(&mapped), block_set(&b.blocks));
        // topological order: every dependency of a block comes earlier
        for (k, blk) in b.blocks.iter().enumerate() {
            for &t in &b.external_dependencies[k] {
                prop_assert!(b.block_of[t] < k, "block {:?} depends on topic {} of a later block", blk, t);
            }
        }
    }

    #[test]
    fn logic_powers_stay_bounded(s in any_scenario()) {
        let Some(s) = s else { return Ok(()) };
        for c in s.profile.matrices() {
            let mut power = DMatrix::identity(c.m(), c.m());
            for _ in 0..64 {
                power = &power * c.matrix();
                let norm = (0..c.m()).map(|r| power.row(r).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
                prop_assert!(norm <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn balance_verdict_is_certified(s in any_scenario()) {
        let Some(s) = s else { return Ok(()) };
        let a = graph::build_multiplex_pattern(&s.net, &s.profile);
        for target in [s.profile.matrix(0).clone(), a] {
            let v = graph::structural_balance(&target);
            let len = target.nrows();
            if v.balanced {
                let sides = v.sides(len).unwrap();
                for r in 0..len {
                    for c in 0..len {
                        if target[(r, c)] != 0.0 {
                            prop_assert!(sides[r] * sides[c] * target[(r, c)] > 0.0);
                        }
                    }
                }
            } else {
                let w = v.witness.unwrap();
                prop_assert!(w.is_witness_for(&target));
                prop_assert_eq!(w.negative_count() % 2, 1);
            }
        }
    }

    #[test]
    fn balance_is_invariant_under_positive_rescaling(s in any_scenario(), seed in any::<u64>()) {
        let Some(s) = s else { return Ok(()) };
        let c = s.profile.matrix(0);
        let factors = common::random_state(c.len(), seed);
        let scaled = DMatrix::from_fn(c.nrows(), c.ncols(), |r, k| c[(r, k)] * (1.5 + factors[r * c.ncols() + k]));
        prop_assert_eq!(graph::structural_balance(c).balanced, graph::structural_balance(&scaled).balanced);
    }

    #[test]
    fn lemma_matches_direct_balance(
        n in 2usize..9, m in 1usize..7, d in 0.0f64..0.8, signs in sign_mode(), comp in any::<bool>(), seed in any::<u64>()
    ) {
        let Some(s) = build(&spec(n, m, d, signs, comp, true), seed) else { return Ok(()) };
        let lemma = graph::multiplex_balance_via_lemma(&s.net, &s.profile).unwrap();
        let a = graph::build_multiplex_pattern(&s.net, &s.profile);
        let direct = graph::structural_balance(&a);
        prop_assert_eq!(lemma.balanced, direct.balanced);
        if let Some(w) = lemma.witness {
            prop_assert!(w.is_witness_for(&a));
        }
    }

    #[test]
    fn orderings_agree_and_states_stay_bounded(s in any_scenario()) {
        let Some(s) = s else { return Ok(()) };
        let (n, m) = (s.net.n(), s.profile.m());
        let b = dynamics::build_system(&s.net, &s.profile, Ordering::IndividualMajor);
        let a = dynamics::build_system(&s.net, &s.profile, Ordering::TopicMajor);
        let xs = dynamics::iterate(&b, &s.x0, 40);
        let ys = dynamics::iterate(&a, &dynamics::to_topic_major(&s.x0, n, m), 40);
        let bound = s.x0.amax();
        for (x, y) in xs.iter().zip(&ys) {
            prop_assert!((dynamics::to_topic_major(x, n, m) - y).amax() < 1e-12);
            prop_assert!(x.amax() <= bound + 1e-12);
        }
    }

    #[test]
    fn residuals_decay_geometrically(s in any_scenario()) {
        let Some(s) = s else { return Ok(()) };
        let sys = dynamics::build_system(&s.net, &s.profile, Ordering::IndividualMajor);
        let traj = dynamics::simulate(&sys, &s.x0, &SimulationOptions::default()).unwrap();
        let r = &traj.residuals;
        // no plateau: after the first quarter the residual keeps shrinking by a
        // constant factor on average
        let k = r.len() / 4;
        let tail = r.len() - 1;
        prop_assume!(tail > k + 4 && r[k] > 1e-10);
        prop_assert!(r[tail] < r[k] * 1e-2 || r[tail] == 0.0);
    }

    #[test]
    fn homogeneous_limit_matches_simulation(
        n in 2usize..9, m in 1usize..7, d in 0.0f64..0.8, signs in sign_mode(), seed in any::<u64>()
    ) {
        let Some(s) = build(&spec(n, m, d, signs, false, false), seed) else { return Ok(()) };
        let c = s.profile.matrices()[0].clone();
        let profile = validate_profile(vec![c.clone(); n]).unwrap();
        let sys = dynamics::build_system(&s.net, &profile, Ordering::IndividualMajor);
        let traj = dynamics::simulate(&sys, &s.x0, &SimulationOptions::default()).unwrap();
        let closed = dynamics::homogeneous_limit(&s.net, &c, &s.x0).unwrap();
        prop_assert!((traj.limit.unwrap() - closed).amax() < 1e-8);
    }

    #[test]
    fn closed_consensus_blocks_share_one_magnitude(s in any_scenario()) {
        let Some(s) = s else { return Ok(()) };
        let report = predict::predict_all(&s.net, &s.profile, &s.x0).unwrap();
        for b in report.blocks.iter().filter(|b| b.family == BlockFamily::Closed) {
            let alphas: Vec<f64> = b.topics.iter().filter_map(|&p| report.topics[p].verdict.alpha()).collect();
            if let Some(first) = alphas.first() {
                for a in &alphas {
                    prop_assert!((a.abs() - first.abs()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn oracle_agrees_with_simulation(s in any_scenario()) {
        let Some(s) = s else { return Ok(()) };
        let report = oracle::cross_validate(&s.net, &s.profile, &s.x0, &s.tolerances).unwrap();
        prop_assert!(report.fixed_point_residual < 1e-10);
        for t in &report.topics {
            prop_assert!(t.oracle_deviation <= 1e-6, "topic {} deviation {}", t.topic, t.oracle_deviation);
            prop_assert!(t.oracle_limit.iter().all(|v| v.abs() <= s.x0.amax() + 1e-9));
            if let Verdict::Consensus { alpha } = t.predicted {
                prop_assert!(alpha.abs() <= 1.0 + 1e-9);
            }
        }
        prop_assert!(report.agreement, "mismatches {:?}", report.mismatches());
    }
}

#[test]
fn uniform_zero_state_is_fixed() {
    let (net, profile) = common::two_group_model(common::logic_group_b());
    let sys = dynamics::build_system(&net, &profile, Ordering::TopicMajor);
    let states = dynamics::iterate(&sys, &DVector::zeros(30), 5);
    assert!(states.iter().all(|x| x.amax() == 0.0));
}

