mod common;

use common::*;
use dynattack_core::cost::{flops_closed_form, PathDescriptor};
use dynattack_core::models::*;
use proptest::prelude::*;

/// Dense with bias, then the activation that follows it.
fn dense(i: u64, o: u64) -> u64 {
    2 * i * o + o
}

/// Independent hand count for every path a model can take.
fn oracle(spec: &ModelSpec, path: PathDescriptor) -> u64 {
    match (spec, path) {
        (ModelSpec::EarlyExit(s), PathDescriptor::Exit(e)) => {
            let c = s.classes as u64;
            let mut prev = s.input_dim as u64;
            let mut total = 0;
            for &w in &s.widths[..=e] {
                let w = w as u64;
                total += dense(prev, w) + w + dense(w, c) + 4 * c - 1;
                prev = w;
            }
            total
        }
        (ModelSpec::Generator(s), PathDescriptor::Steps(n)) => {
            let (k, e, h, v) = (s.context as u64, s.embed_dim as u64, s.hidden as u64, s.vocab_size as u64);
            n as u64 * (dense(k * e, h) + h + dense(h, v) + 4 * v - 1)
        }
        (ModelSpec::Detector(s), PathDescriptor::Detection { passing, retained }) => {
            let (d, h, out) = (s.input_dim as u64, s.hidden as u64, 5 * s.grid as u64);
            let m = passing as u64;
            dense(d, h) + h + dense(h, out) + 4 * out + 15 * (m * m.saturating_sub(1) / 2)
                + s.downstream_flops * retained as u64
        }
        (ModelSpec::Gated(s), PathDescriptor::Route(r)) => {
            let d = s.input_dim as u64;
            let gh = s.gate_hidden as u64;
            let gate = if gh == 0 { dense(d, 1) + 4 } else { dense(d, gh) + gh + dense(gh, 1) + 4 };
            let widths = if r == Route::Light { &s.light } else { &s.heavy };
            let mut prev = d;
            let mut path = 0;
            for &w in widths {
                path += dense(prev, w as u64) + w as u64;
                prev = w as u64;
            }
            let c = s.classes as u64;
            gate + path + dense(prev, c) + 4 * c - 1
        }
        _ => unreachable!(),
    }
}

proptest! {
    #![proptest_config(fixed(64))]

    #[test]
    fn instrumented_flops_equal_closed_form(seed in any::<u64>(), b in 0usize..4) {
        let mut rng = rng(seed);
        let spec = random_spec(&mut rng, BEHAVIORS[b], false);
        let model = build_model(&spec).unwrap();
        for _ in 0..8 {
            let x = random_input(&mut rng, &spec);
            let th = random_thresholds(&mut rng);
            let run = model.infer(&x, &th).unwrap();
            let path = PathDescriptor::of_trace(&run.trace);
            prop_assert_eq!(run.flops, oracle(&spec, path));
            prop_assert_eq!(run.flops, flops_closed_form(&spec, &path).unwrap());
            prop_assert_eq!(run.flops, run.trace.total_flops());
            let cps = &run.trace.checkpoints;
            prop_assert!(cps.windows(2).all(|w| w[0].cumulative_flops < w[1].cumulative_flops));
        }
    }

    #[test]
    fn closed_form_covers_every_exit_and_route(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let d1 = random_spec(&mut rng, Behavior::D1, false);
        let ModelSpec::EarlyExit(s) = &d1 else { unreachable!() };
        for e in 0..s.widths.len() {
            prop_assert_eq!(flops_closed_form(&d1, &PathDescriptor::Exit(e)).unwrap(), oracle(&d1, PathDescriptor::Exit(e)));
        }
        prop_assert!(flops_closed_form(&d1, &PathDescriptor::Exit(s.widths.len())).is_err());
        let d4 = random_spec(&mut rng, Behavior::D4, false);
        for r in [Route::Light, Route::Heavy] {
            prop_assert_eq!(flops_closed_form(&d4, &PathDescriptor::Route(r)).unwrap(), oracle(&d4, PathDescriptor::Route(r)));
        }
        let d2 = random_spec(&mut rng, Behavior::D2, false);
        let ModelSpec::Generator(g) = &d2 else { unreachable!() };
        for n in 0..=g.max_len {
            prop_assert_eq!(flops_closed_form(&d2, &PathDescriptor::Steps(n)).unwrap(), oracle(&d2, PathDescriptor::Steps(n)));
        }
    }
}

#[test]
fn tau_one_reaches_final_exit_at_full_cost() {
    let mut rng = rng(9);
    for _ in 0..50 {
        let spec = random_spec(&mut rng, Behavior::D1, false);
        let ModelSpec::EarlyExit(s) = &spec else { unreachable!() };
        let model = build_model(&spec).unwrap();
        let x = random_input(&mut rng, &spec);
        let th = Thresholds { tau: 1.0, ..Thresholds::default() };
        let run = model.infer(&x, &th).unwrap();
        let last = s.widths.len() - 1;
        assert_eq!(PathDescriptor::of_trace(&run.trace), PathDescriptor::Exit(last));
        assert_eq!(run.flops, oracle(&spec, PathDescriptor::Exit(last)));
    }
}
