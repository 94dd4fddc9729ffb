mod common;

use common::*;
use dynattack_core::attack::{poison_model, PoisonScheme};
use dynattack_core::cost::{flops_closed_form, stack_flops, trace_cost, HardwareProfile, PathDescriptor};
use dynattack_core::defense::{guarded_infer, BreachPolicy, GuardConfig};
use dynattack_core::models::*;
use proptest::prelude::*;
use rand::Rng as _;

const POLICIES: [BreachPolicy; 2] = [BreachPolicy::AbortAndFlag, BreachPolicy::ExitNow];

proptest! {
    #![proptest_config(fixed(200))]

    #[test]
    fn never_exceeds_the_ceiling(seed in any::<u64>(), b in 0usize..4) {
        let mut rng = rng(seed);
        let spec = random_spec(&mut rng, BEHAVIORS[b], false);
        let model = build_model(&spec).unwrap();
        let profile = HardwareProfile::default();
        for _ in 0..5 {
            let x = random_input(&mut rng, &spec);
            let th = random_thresholds(&mut rng);
            let full = model.infer(&x, &th).unwrap();
            let ceiling = rng.random_range(1.0..=full.flops as f64 * 1.5 + 2.0);
            for policy in POLICIES {
                let g = guarded_infer(&model, &x, &th, &GuardConfig { ceiling, policy }, &profile).unwrap();
                prop_assert!(g.cost.flops as f64 <= ceiling);
                prop_assert!(g.trace.total_flops() as f64 <= ceiling);
                prop_assert_eq!(g.breached, (full.flops as f64) > ceiling);
                if !g.breached {
                    prop_assert_eq!(g.output.as_ref(), Some(&full.output));
                    prop_assert_eq!(&g.trace, &full.trace);
                }
                if g.breached && policy == BreachPolicy::AbortAndFlag {
                    prop_assert!(g.output.is_none());
                }
            }
        }
    }

    #[test]
    fn infinite_ceiling_is_transparent(seed in any::<u64>(), b in 0usize..4) {
        let mut rng = rng(seed);
        let spec = random_spec(&mut rng, BEHAVIORS[b], false);
        let model = build_model(&spec).unwrap();
        let profile = HardwareProfile::default();
        let x = random_input(&mut rng, &spec);
        let th = random_thresholds(&mut rng);
        let full = model.infer(&x, &th).unwrap();
        for policy in POLICIES {
            let g = guarded_infer(&model, &x, &th, &GuardConfig { ceiling: f64::INFINITY, policy }, &profile).unwrap();
            prop_assert!(!g.breached);
            prop_assert_eq!(g.output, Some(full.output.clone()));
            prop_assert_eq!(&g.trace, &full.trace);
            prop_assert_eq!(g.cost, trace_cost(&full.trace, full.flops, &profile).unwrap());
        }
    }
}

#[test]
fn exit_now_keeps_completed_work() {
    let mut rng = rng(4);
    let profile = HardwareProfile::default();
    for _ in 0..100 {
        let spec = random_spec(&mut rng, Behavior::D1, false);
        let ModelSpec::EarlyExit(s) = &spec else { unreachable!() };
        let model = build_model(&spec).unwrap();
        let x = random_input(&mut rng, &spec);
        let th = Thresholds { tau: 1.0, ..Thresholds::default() };
        let first = flops_closed_form(&spec, &PathDescriptor::Exit(0)).unwrap();
        let below = GuardConfig { ceiling: first as f64 - 1.0, policy: BreachPolicy::ExitNow };
        let g = guarded_infer(&model, &x, &th, &below, &profile).unwrap();
        assert!(g.breached && g.output.is_none() && g.cost.flops < first);
        // enough for exit 1 only: the answer comes from exit 1
        let second = flops_closed_form(&spec, &PathDescriptor::Exit(1)).unwrap();
        let seg2 = stack_flops(&s.segment_layers(2.min(s.widths.len() - 1)));
        let guard = GuardConfig { ceiling: (second + seg2 - 1) as f64, policy: BreachPolicy::ExitNow };
        let g = guarded_infer(&model, &x, &th, &guard, &profile).unwrap();
        match g.output {
            Some(Prediction::Exit(d)) => assert_eq!(d.exit_index, 1),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn suppressed_generator_stops_at_ten_steps() {
    let spec = GeneratorSpec { seed: 2, ..GeneratorSpec::default() };
    let per_step = flops_closed_form(&ModelSpec::Generator(spec.clone()), &PathDescriptor::Steps(1)).unwrap();
    let model = poison_model(&build_model(&ModelSpec::Generator(spec)).unwrap(), PoisonScheme::EosBias, 1e6).unwrap();
    let x = Sample::Tokens(Alphabet.encode("the fox ").unwrap());
    let th = Thresholds::default();
    assert_eq!(model.infer(&x, &th).unwrap().flops, 64 * per_step);
    for policy in POLICIES {
        let guard = GuardConfig { ceiling: (10 * per_step) as f64, policy };
        let g = guarded_infer(&model, &x, &th, &guard, &HardwareProfile::default()).unwrap();
        assert!(g.breached);
        assert_eq!(g.cost.flops, 10 * per_step);
        match (policy, g.output) {
            (BreachPolicy::ExitNow, Some(Prediction::Tokens(t))) => assert_eq!(t.len(), 10),
            (BreachPolicy::AbortAndFlag, None) => {}
            (_, other) => panic!("{other:?}"),
        }
    }
}

#[test]
fn gated_exit_now_falls_back_to_light() {
    let spec = ModelSpec::Gated(GatedSpec {
        seed: 1,
        input_dim: 2,
        gate_hidden: 0,
        light: vec![],
        heavy: vec![16, 16],
        classes: 2,
    });
    let ModelSpec::Gated(s) = &spec else { unreachable!() };
    let model = build_model(&spec).unwrap();
    let gate = stack_flops(&s.gate_layers());
    let light = stack_flops(&s.path_layers(Route::Light));
    let x = Sample::Vector(dynattack_core::tensor::Tensor::vector(vec![0.3, -0.2]).unwrap());
    let th = Thresholds { theta: 0.0, ..Thresholds::default() };
    let guard = GuardConfig { ceiling: (gate + light) as f64, policy: BreachPolicy::ExitNow };
    let g = guarded_infer(&model, &x, &th, &guard, &HardwareProfile::default()).unwrap();
    assert!(g.breached);
    assert_eq!(g.cost.flops, gate + light);
    assert!(matches!(g.output, Some(Prediction::Gate(GateDecision { route: Route::Light, .. }))));
}

#[test]
fn rejects_nonpositive_ceiling() {
    let model = build_model(&ModelSpec::reference_early_exit(0)).unwrap();
    let x = Sample::Vector(dynattack_core::tensor::Tensor::zeros(&[8]));
    for ceiling in [0.0, -1.0, f64::NAN] {
        let guard = GuardConfig { ceiling, policy: BreachPolicy::ExitNow };
        assert!(guarded_infer(&model, &x, &Thresholds::default(), &guard, &HardwareProfile::default()).is_err());
    }
}
