mod common;

use common::*;
use dynattack_core::attack::{relaxed_generator_surrogate, surrogate_loss};
use dynattack_core::models::*;
use dynattack_core::tensor::{finite_diff_check, Tensor};

const TOL: f64 = 1e-4;
const PER_BEHAVIOR: u64 = 75;

/// Worst relative error over coordinates whose gradient is not negligible;
/// negligible ones must agree to 1e-10 absolute. `None` if every coordinate
/// is negligible.
fn relative_error(analytic: &Tensor, numeric: &Tensor) -> Option<f64> {
    let mut worst = None;
    for (a, n) in analytic.data().iter().zip(numeric.data()) {
        let scale = a.abs().max(n.abs());
        if scale > 1e-6 {
            let rel = (a - n).abs() / scale;
            worst = Some(worst.map_or(rel, |w: f64| w.max(rel)));
        } else {
            assert!((a - n).abs() <= 1e-10, "analytic {a} numeric {n}");
        }
    }
    worst
}

fn check_vector(model: &DynModel, x: &Tensor, th: &Thresholds) -> Option<f64> {
    let s = surrogate_loss(model, &Sample::Vector(x.clone()), th).unwrap();
    let f = |p: &Tensor| Ok(surrogate_loss(model, &Sample::Vector(p.clone()), th)?.loss);
    let r = finite_diff_check(f, x, &s.grad, TOL).unwrap();
    assert!(r.passed, "rel {} abs {}", r.max_rel_error, r.max_abs_error);
    relative_error(&s.grad, &r.numeric)
}

fn check_prompt(model: &DynModel, prompt: &[usize], th: &Thresholds) -> Option<f64> {
    let g = model.as_generator().unwrap();
    let v = g.spec().vocab_size;
    let s = surrogate_loss(model, &Sample::Tokens(prompt.to_vec()), th).unwrap();
    let generated = g.generate(prompt, g.spec().max_len).unwrap().output.tokens;
    let mut onehot = vec![0.0; prompt.len() * v];
    for (i, &t) in prompt.iter().enumerate() {
        onehot[i * v + t] = 1.0;
    }
    let at = Tensor::new(vec![prompt.len(), v], onehot).unwrap();
    let relaxed = relaxed_generator_surrogate(g, &at, &generated).unwrap();
    assert_eq!(relaxed.grad, s.grad);
    assert_eq!(relaxed.loss, s.loss);
    let f = |p: &Tensor| Ok(relaxed_generator_surrogate(g, p, &generated)?.loss);
    let r = finite_diff_check(f, &at, &s.grad, TOL).unwrap();
    assert!(r.passed, "rel {} abs {}", r.max_rel_error, r.max_abs_error);
    relative_error(&s.grad, &r.numeric)
}

#[test]
fn surrogate_gradients_match_finite_differences() {
    let mut worst = [0.0f64; 4];
    let mut informative = [0usize; 4];
    for (b, behavior) in BEHAVIORS.into_iter().enumerate() {
        for i in 0..PER_BEHAVIOR {
            let mut rng = rng(1000 * b as u64 + i);
            let spec = random_spec(&mut rng, behavior, false);
            let model = build_model(&spec).unwrap();
            let th = random_thresholds(&mut rng);
            let err = match random_input(&mut rng, &spec) {
                Sample::Vector(x) => check_vector(&model, &x, &th),
                Sample::Tokens(p) => check_prompt(&model, &p, &th),
            };
            if let Some(e) = err {
                assert!(e <= TOL, "{behavior} config {i}: relative error {e}");
                worst[b] = worst[b].max(e);
                informative[b] += 1;
            }
        }
    }
    eprintln!("worst relative error {worst:?} over {informative:?} configs with a nonzero gradient");
    assert!(informative.iter().sum::<usize>() >= 200);
    assert!(informative.iter().all(|&n| n >= 40));
}

#[test]
fn invisible_prompt_positions_get_no_gradient() {
    let spec = ModelSpec::Generator(GeneratorSpec {
        seed: 3,
        ..GeneratorSpec::default()
    });
    let model = build_model(&spec).unwrap();
    let prompt = Alphabet.encode("the fox sees a ").unwrap();
    let s = surrogate_loss(&model, &Sample::Tokens(prompt.clone()), &Thresholds::default()).unwrap();
    let v = Alphabet.vocab_size();
    let k = DEFAULT_CONTEXT;
    for (i, row) in s.grad.data().chunks(v).enumerate() {
        assert_eq!(row.iter().any(|&g| g != 0.0), i >= prompt.len() - k, "row {i}");
    }
}
