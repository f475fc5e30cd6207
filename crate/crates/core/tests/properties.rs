use proptest::prelude::*;
use specs_core::oracle::{tilted_policy, total_variation};
use specs_core::rng::{substream, Lane};
use specs_core::selection::{compute_scores, selection_distribution, subsample};
use specs_core::{
    fixtures, BeamMode, Block, BlockTrace, Engine, Execution, GenerationSource, MethodSpec,
    RunConfig, ScoreMode,
};

#[test]
fn importance_reweighting_recovers_tilt() {
    for inst in [fixtures::t1(), fixtures::lower_bound(2.0)] {
        let ctx = BlockTrace::new("x");
        let blocks = vec![Block::symbol(0), Block::symbol(1)];
        let (set, _) = compute_scores(
            &ctx,
            blocks,
            GenerationSource::Draft,
            &inst.draft,
            &inst.target,
            &inst.prm,
            inst.beta,
            ScoreMode::Full,
            false,
        )
        .unwrap();
        let gen = inst.draft.response_distribution().unwrap();
        let w: Vec<f64> = gen.iter().zip(set.scores()).map(|(g, s)| g * s.exp()).collect();
        let z: f64 = w.iter().sum();
        let star = tilted_policy(&inst.target, &inst.reward, inst.beta).unwrap();
        for (a, b) in w.iter().zip(&star.probs) {
            assert!((a / z - b).abs() < 1e-10);
        }
    }
}

#[test]
fn subsample_frequencies_match_distribution() {
    let t1 = fixtures::t1();
    let ctx = BlockTrace::new("x");
    let blocks = vec![Block::symbol(0), Block::symbol(1), Block::symbol(1), Block::symbol(0)];
    let (set, _) = compute_scores(
        &ctx,
        blocks,
        GenerationSource::Draft,
        &t1.draft,
        &t1.target,
        &t1.prm,
        1.0,
        ScoreMode::Full,
        true,
    )
    .unwrap();
    let probs = selection_distribution(&set).unwrap();
    let mut counts = vec![0.0; 4];
    for i in 0..100_000 {
        let o = subsample(&set, &mut substream(11, i, Lane::Select, 0)).unwrap();
        counts[o.chosen_index] += 1e-5;
    }
    assert!(total_variation(&counts, &probs) < 0.01);
}

#[test]
fn poisson_widths_have_requested_mean() {
    let t1 = fixtures::t1();
    let engine = Engine::new(&t1.draft, &t1.target, &t1.prm).with_execution(Execution::Sequential);
    let mut total = 0usize;
    let mut min = usize::MAX;
    let episodes = 100_000u64;
    for seed in 0..episodes {
        let cfg = RunConfig {
            n: 6,
            seed,
            horizon: 1,
            gamma: 1,
            beam_mode: BeamMode::PoissonTruncated,
            ..RunConfig::default()
        };
        let w = engine.run(MethodSpec::Specs, "x", &cfg).unwrap().widths[0];
        total += w;
        min = min.min(w);
    }
    let mean = total as f64 / episodes as f64;
    assert!(min >= 1);
    assert!((mean - 6.0).abs() <= 0.02 * 6.0, "mean {mean}");
}

fn one_way(tags: &str) -> bool {
    let t = tags.trim_start_matches('T');
    t.chars().all(|c| c == 'D')
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn specs_switches_at_most_once(seed in 0u64..10_000, tau in -1.0f64..1.0, n in 1usize..6) {
        let inst = fixtures::random_instance(seed % 7, 3, 4);
        let engine = Engine::new(&inst.draft, &inst.target, &inst.prm);
        let cfg = RunConfig { n, tau, seed, horizon: 4, gamma: 1, ..RunConfig::default() };
        let r = engine.run(MethodSpec::Specs, "x", &cfg).unwrap();
        prop_assert!(one_way(&r.trace.source_string()));
        prop_assert_eq!(r.trace.len(), 4);
    }

    #[test]
    fn episodes_are_seed_deterministic(seed in 0u64..10_000, p in 0.0f64..1.0) {
        let inst = fixtures::t2();
        let engine = Engine::new(&inst.draft, &inst.target, &inst.prm);
        let cfg = RunConfig { n: 3, seed, horizon: 2, gamma: 1, ..RunConfig::default() };
        for m in [MethodSpec::Specs, MethodSpec::RandomSwitch { p_big: p }, MethodSpec::RsdPlusPlus] {
            let a = engine.with_execution(Execution::Sequential).run(m, "x", &cfg).unwrap();
            let b = engine.with_execution(Execution::Concurrent).run(m, "x", &cfg).unwrap();
            prop_assert_eq!(&a.trace, &b.trace);
            prop_assert_eq!(&a.step_rewards, &b.step_rewards);
        }
    }
}
