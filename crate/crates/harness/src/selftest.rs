//! Fast randomized invariant sweep, exposed as `dynattack selftest`.

use dynattack_core::attack::{
    blackbox_model_attack, linf_satisfied, pgd_cost_attack, relaxed_generator_surrogate, surrogate_loss, AttackConfig,
};
use dynattack_core::cost::{flops_closed_form, HardwareProfile, PathDescriptor};
use dynattack_core::defense::{guarded_infer, BreachPolicy, GuardConfig};
use dynattack_core::models::{
    build_model, Alphabet, Behavior, DetectorSpec, DynModel, EarlyExitSpec, GatedSpec, GeneratorSpec, ModelSpec, Sample,
    Thresholds,
};
use dynattack_core::rng::{derive_indexed, rng_from_seed, Rng};
use dynattack_core::tensor::{finite_diff_check, Tensor};
use dynattack_core::Result;
use rand::Rng as _;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    pub detail: String,
}

pub const BEHAVIORS: [Behavior; 4] = [Behavior::D1, Behavior::D2, Behavior::D3, Behavior::D4];

fn widths(rng: &mut Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(1..=6)).collect()
}

/// Small random architecture. `full_alphabet` pins a generator's vocabulary
/// to the text alphabet so edit attacks apply.
pub fn random_spec(rng: &mut Rng, behavior: Behavior, full_alphabet: bool) -> ModelSpec {
    let seed = rng.random();
    match behavior {
        Behavior::D1 => {
            let n = rng.random_range(2..=4);
            ModelSpec::EarlyExit(EarlyExitSpec {
                seed,
                input_dim: rng.random_range(1..=6),
                widths: widths(rng, n),
                classes: rng.random_range(2..=4),
            })
        }
        Behavior::D2 => ModelSpec::Generator(GeneratorSpec {
            seed,
            vocab_size: if full_alphabet {
                Alphabet.vocab_size()
            } else {
                rng.random_range(3..=12)
            },
            context: rng.random_range(1..=4),
            embed_dim: rng.random_range(1..=4),
            hidden: rng.random_range(1..=8),
            max_len: rng.random_range(1..=12),
            ..GeneratorSpec::default()
        }),
        Behavior::D3 => {
            let side: usize = rng.random_range(1..=4);
            ModelSpec::Detector(DetectorSpec {
                seed,
                input_dim: rng.random_range(1..=6),
                hidden: rng.random_range(1..=6),
                grid: side * side,
                max_box: rng.random_range(0.1..=1.0),
                downstream_flops: rng.random_range(1..=100),
            })
        }
        Behavior::D4 => {
            let classes = rng.random_range(2..=3);
            let n = rng.random_range(0..=1);
            let light = widths(rng, n);
            let mut heavy = light.clone();
            heavy.push(rng.random_range(classes..=classes + 4));
            ModelSpec::Gated(GatedSpec {
                seed,
                input_dim: rng.random_range(1..=5),
                gate_hidden: rng.random_range(0..=3),
                light,
                heavy,
                classes,
            })
        }
    }
}

/// Random input inside the behavior's domain; prompts use symbol ids only.
pub fn random_input(rng: &mut Rng, spec: &ModelSpec) -> Sample {
    let (d, lo, hi) = match spec {
        ModelSpec::Generator(s) => {
            let n = rng.random_range(1..=8);
            return Sample::Tokens((0..n).map(|_| rng.random_range(2..s.vocab_size)).collect());
        }
        ModelSpec::EarlyExit(s) => (s.input_dim, -3.0, 3.0),
        ModelSpec::Gated(s) => (s.input_dim, -3.0, 3.0),
        ModelSpec::Detector(s) => (s.input_dim, 0.0, 1.0),
    };
    Sample::Vector(Tensor::vector((0..d).map(|_| rng.random_range(lo..=hi)).collect()).expect("non-empty"))
}

pub fn random_thresholds(rng: &mut Rng) -> Thresholds {
    Thresholds {
        tau: rng.random_range(0.3..=1.0),
        conf_thresh: rng.random_range(0.2..0.8),
        iou_thresh: rng.random_range(0.1..0.9),
        theta: rng.random_range(0.0..=1.0),
        max_len: None,
    }
}

struct Case {
    behavior: Behavior,
    spec: ModelSpec,
    model: DynModel,
    x: Sample,
    th: Thresholds,
    rng: Rng,
}

fn cases(seed: u64, per_behavior: usize) -> Result<Vec<Case>> {
    let mut out = Vec::new();
    for (b, behavior) in BEHAVIORS.into_iter().enumerate() {
        for i in 0..per_behavior {
            let mut rng = rng_from_seed(derive_indexed(seed, "selftest", (b * per_behavior + i) as u64));
            let spec = random_spec(&mut rng, behavior, false);
            let model = build_model(&spec)?;
            let th = random_thresholds(&mut rng);
            let x = random_input(&mut rng, &spec);
            out.push(Case {
                behavior,
                spec,
                model,
                x,
                th,
                rng,
            });
        }
    }
    Ok(out)
}

fn gradient_ok(c: &Case) -> Result<Option<String>> {
    let s = surrogate_loss(&c.model, &c.x, &c.th)?;
    let r = match &c.x {
        Sample::Vector(x) => {
            let f = |p: &Tensor| Ok(surrogate_loss(&c.model, &Sample::Vector(p.clone()), &c.th)?.loss);
            finite_diff_check(f, x, &s.grad, 1e-4)?
        }
        Sample::Tokens(prompt) => {
            let g = c.model.as_generator()?;
            let v = g.spec().vocab_size;
            let generated = g.generate(prompt, g.spec().max_len)?.output.tokens;
            let mut onehot = vec![0.0; prompt.len() * v];
            for (i, &t) in prompt.iter().enumerate() {
                onehot[i * v + t] = 1.0;
            }
            let at = Tensor::new(vec![prompt.len(), v], onehot)?;
            let f = |p: &Tensor| Ok(relaxed_generator_surrogate(g, p, &generated)?.loss);
            finite_diff_check(f, &at, &s.grad, 1e-4)?
        }
    };
    Ok((!r.passed).then(|| format!("{}: relative error {:.3e}", c.behavior, r.max_rel_error)))
}

fn flops_ok(c: &Case) -> Result<Option<String>> {
    let run = c.model.infer(&c.x, &c.th)?;
    let closed = flops_closed_form(&c.spec, &PathDescriptor::of_trace(&run.trace))?;
    let last = run.trace.checkpoints.last().map_or(0, |k| k.cumulative_flops);
    Ok((closed != run.flops || last != run.flops)
        .then(|| format!("{}: counted {} closed form {closed} trace {last}", c.behavior, run.flops)))
}

fn guard_ok(c: &mut Case) -> Result<Option<String>> {
    let full = c.model.infer(&c.x, &c.th)?.flops;
    let ceiling = c.rng.random_range(1..=full.max(1)) as f64;
    for policy in [BreachPolicy::AbortAndFlag, BreachPolicy::ExitNow] {
        let g = guarded_infer(&c.model, &c.x, &c.th, &GuardConfig { ceiling, policy }, &HardwareProfile::default())?;
        if g.cost.flops as f64 > ceiling {
            return Ok(Some(format!("{}: {} flops over ceiling {ceiling}", c.behavior, g.cost.flops)));
        }
    }
    Ok(None)
}

fn budget_ok(c: &mut Case) -> Result<Option<String>> {
    let Sample::Vector(x) = &c.x else { return Ok(None) };
    let bounds = c.behavior.default_bounds().expect("vector behaviors are bounded");
    let eps = c.rng.random_range(0.01..=0.5);
    let cfg = AttackConfig {
        steps: 5,
        query_budget: 10,
        seed: c.rng.random(),
        ..AttackConfig::new(eps)
    };
    let hw = HardwareProfile::default();
    for r in [
        pgd_cost_attack(&c.model, x, &c.th, &cfg, &hw)?,
        blackbox_model_attack(&c.model, x, &c.th, &cfg, &hw)?,
    ] {
        if !linf_satisfied(x, r.adversarial.as_vector()?, eps, bounds) || !r.constraint_satisfied {
            return Ok(Some(format!("{}: adversarial input leaves the eps = {eps} box", c.behavior)));
        }
    }
    Ok(None)
}

fn determinism_ok(c: &Case) -> Result<Option<String>> {
    let again = build_model(&c.spec)?;
    let (a, b) = (c.model.infer(&c.x, &c.th)?, again.infer(&c.x, &c.th)?);
    Ok((a.trace != b.trace || a.flops != b.flops).then(|| format!("{}: rebuilt model diverged", c.behavior)))
}

fn check(name: &'static str, cs: &mut [Case], f: impl Fn(&mut Case) -> Result<Option<String>>) -> Check {
    let mut failures = Vec::new();
    for c in cs.iter_mut() {
        match f(c) {
            Ok(None) => {}
            Ok(Some(m)) => failures.push(m),
            Err(e) => failures.push(format!("{}: {e}", c.behavior)),
        }
    }
    Check {
        name,
        passed: failures.is_empty(),
        cases: cs.len(),
        detail: failures.into_iter().take(3).collect::<Vec<_>>().join("; "),
    }
}

/// Runs every check on `per_behavior` random configurations of each behavior.
pub fn run_selftest(seed: u64, per_behavior: usize) -> Result<Vec<Check>> {
    let mut cs = cases(seed, per_behavior)?;
    Ok(vec![
        check("gradients", &mut cs, |c| gradient_ok(c)),
        check("flops", &mut cs, |c| flops_ok(c)),
        check("guard-ceiling", &mut cs, guard_ok),
        check("attack-budget", &mut cs, budget_ok),
        check("determinism", &mut cs, |c| determinism_ok(c)),
    ])
}
