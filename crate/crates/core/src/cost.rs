//! Cost accounting: closed-form FLOP formulas, latency/energy proxies and
//! percent inflation against a benign baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelSpec, Route, TraceDetail, InferenceTrace, IOU_PAIR_FLOPS};
use crate::tensor::{LayerKind, LayerSpec};

/// FLOPs of one layer under the kernel conventions, from the descriptor alone.
pub fn layer_flops(layer: &LayerSpec) -> u64 {
    let (i, o) = (layer.in_dim as u64, layer.out_dim as u64);
    match layer.kind {
        LayerKind::Dense => 2 * i * o + if layer.has_bias { o } else { 0 },
        LayerKind::Relu => o,
        LayerKind::Softmax => 4 * o - 1,
        LayerKind::Sigmoid => 4 * o,
        LayerKind::EmbeddingLookup => 0,
    }
}

pub fn stack_flops(layers: &[LayerSpec]) -> u64 {
    layers.iter().map(layer_flops).sum()
}

/// Which decisions an inference took, enough to price it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathDescriptor {
    /// D1: stopped at this exit (0-based).
    Exit(usize),
    /// D2: decoding steps taken.
    Steps(usize),
    /// D3: candidates over the confidence threshold and boxes kept by NMS.
    Detection { passing: usize, retained: usize },
    /// D4: route chosen by the gate.
    Route(Route),
}

impl PathDescriptor {
    /// Path recorded in a complete trace.
    pub fn of_trace(trace: &InferenceTrace) -> Self {
        match &trace.detail {
            TraceDetail::EarlyExit { exit_index, .. } => PathDescriptor::Exit(*exit_index),
            TraceDetail::Generation { length, .. } => PathDescriptor::Steps(*length),
            TraceDetail::Detection { passing, retained, .. } => PathDescriptor::Detection {
                passing: *passing,
                retained: *retained,
            },
            TraceDetail::Gate { route, .. } => PathDescriptor::Route(*route),
        }
    }
}

/// Hand-formula cost of `path` through the model described by `spec`.
pub fn flops_closed_form(spec: &ModelSpec, path: &PathDescriptor) -> Result<u64> {
    spec.validate()?;
    match (spec, *path) {
        (ModelSpec::EarlyExit(s), PathDescriptor::Exit(i)) => {
            if i >= s.num_exits() {
                return Err(Error::Domain(format!("exit {i} does not exist ({} exits)", s.num_exits())));
            }
            Ok((0..=i)
                .map(|j| stack_flops(&s.segment_layers(j)) + stack_flops(&s.head_layers(j)))
                .sum())
        }
        (ModelSpec::Generator(s), PathDescriptor::Steps(n)) => {
            if n > s.max_len {
                return Err(Error::Domain(format!("{n} steps exceed the cap of {}", s.max_len)));
            }
            let per_step = layer_flops(&s.embedding_layer()) * s.context as u64 + stack_flops(&s.body_layers());
            Ok(per_step * n as u64)
        }
        (ModelSpec::Detector(s), PathDescriptor::Detection { passing, retained }) => {
            if passing > s.grid || retained > passing || (passing > 0 && retained == 0) {
                return Err(Error::Domain(format!(
                    "{retained} retained of {passing} passing is impossible on a grid of {}",
                    s.grid
                )));
            }
            let m = passing as u64;
            let pairs = if m < 2 { 0 } else { m * (m - 1) / 2 };
            Ok(stack_flops(&s.backbone_layers()) + IOU_PAIR_FLOPS * pairs + s.downstream_flops * retained as u64)
        }
        (ModelSpec::Gated(s), PathDescriptor::Route(r)) => {
            Ok(stack_flops(&s.gate_layers()) + stack_flops(&s.path_layers(r)))
        }
        (spec, path) => Err(Error::Domain(format!("path {path:?} does not apply to a {} model", spec.behavior()))),
    }
}

/// Proxy for the accelerator the model runs on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    /// FLOPs per millisecond.
    pub throughput: f64,
    /// Millijoules per FLOP.
    pub energy_per_flop: f64,
    /// Milliwatts drawn regardless of load.
    pub idle_power: f64,
}

impl Default for HardwareProfile {
    fn default() -> Self {
        HardwareProfile {
            throughput: 1e6,
            energy_per_flop: 1e-6,
            idle_power: 0.0,
        }
    }
}

impl HardwareProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.throughput.is_finite() && self.throughput > 0.0) {
            return Err(Error::invalid("hardware.throughput", "must be finite and positive"));
        }
        if !(self.energy_per_flop.is_finite() && self.energy_per_flop >= 0.0) {
            return Err(Error::invalid("hardware.energy_per_flop", "must be finite and non-negative"));
        }
        if !(self.idle_power.is_finite() && self.idle_power >= 0.0) {
            return Err(Error::invalid("hardware.idle_power", "must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub flops: u64,
    pub latency_ms: f64,
    pub energy_mj: f64,
    /// Decoding steps for generators, 1 otherwise.
    pub iterations: u64,
    /// Boxes kept by a detector, 1 otherwise.
    pub outputs: u64,
}

pub fn derive_cost(flops: u64, iterations: u64, outputs: u64, profile: &HardwareProfile) -> Result<CostReport> {
    profile.validate()?;
    let latency_ms = flops as f64 / profile.throughput;
    let energy_mj = flops as f64 * profile.energy_per_flop + profile.idle_power * latency_ms / 1000.0;
    Ok(CostReport {
        flops,
        latency_ms,
        energy_mj,
        iterations,
        outputs,
    })
}

/// Cost of a traced inference that charged `flops`.
pub fn trace_cost(trace: &InferenceTrace, flops: u64, profile: &HardwareProfile) -> Result<CostReport> {
    let (iterations, outputs) = match &trace.detail {
        TraceDetail::Generation { length, .. } => (*length as u64, 1),
        TraceDetail::Detection { retained, .. } => (1, *retained as u64),
        _ => (1, 1),
    };
    derive_cost(flops, iterations, outputs, profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationReport {
    pub flops_pct: f64,
    pub latency_pct: f64,
    pub energy_pct: f64,
    pub benign: CostReport,
    pub adversarial: CostReport,
}

fn pct(benign: f64, adv: f64) -> f64 {
    if benign == adv {
        0.0
    } else {
        100.0 * (adv - benign) / benign
    }
}

/// Percent change of each cost metric relative to the benign run.
pub fn inflation(benign: &CostReport, adv: &CostReport) -> Result<InflationReport> {
    if benign.flops == 0 {
        return Err(Error::UndefinedBaseline);
    }
    Ok(InflationReport {
        flops_pct: pct(benign.flops as f64, adv.flops as f64),
        latency_pct: pct(benign.latency_ms, adv.latency_ms),
        energy_pct: if benign.energy_mj > 0.0 {
            pct(benign.energy_mj, adv.energy_mj)
        } else if adv.energy_mj == 0.0 {
            0.0
        } else {
            return Err(Error::UndefinedBaseline);
        },
        benign: *benign,
        adversarial: *adv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// Mean and extrema. Values are summed in sorted order so that any
    /// permutation of the input gives the same bits.
    pub fn of(values: &[f64]) -> Result<Summary> {
        if values.is_empty() {
            return Err(Error::Usage("cannot summarize an empty list".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Summary {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub flops_pct: Summary,
    pub latency_pct: Summary,
    pub energy_pct: Summary,
}

pub fn aggregate(reports: &[InflationReport]) -> Result<Aggregate> {
    if reports.is_empty() {
        return Err(Error::Usage("cannot aggregate an empty list of reports".into()));
    }
    let col = |f: fn(&InflationReport) -> f64| Summary::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(Aggregate {
        count: reports.len(),
        flops_pct: col(|r| r.flops_pct)?,
        latency_pct: col(|r| r.latency_pct)?,
        energy_pct: col(|r| r.energy_pct)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GatedSpec, GeneratorSpec};

    fn report(flops: u64) -> CostReport {
        derive_cost(flops, 1, 1, &HardwareProfile::default()).unwrap()
    }

    #[test]
    fn derive_cost_examples() {
        let p = HardwareProfile {
            throughput: 100.0,
            energy_per_flop: 0.001,
            idle_power: 0.0,
        };
        let c = derive_cost(1000, 1, 1, &p).unwrap();
        assert_eq!(c.latency_ms, 10.0);
        assert_eq!(c.energy_mj, 1.0);
        let idle = HardwareProfile { idle_power: 1000.0, ..p };
        assert_eq!(derive_cost(1000, 1, 1, &idle).unwrap().energy_mj, 11.0);
        let zero = derive_cost(0, 1, 1, &p).unwrap();
        assert_eq!((zero.latency_ms, zero.energy_mj), (0.0, 0.0));
        assert!(derive_cost(1, 1, 1, &HardwareProfile { throughput: 0.0, ..p }).is_err());
    }

    #[test]
    fn inflation_examples() {
        let r = inflation(&report(100), &report(146)).unwrap();
        assert!((r.flops_pct - 46.0).abs() < 1e-12);
        assert!((r.latency_pct - 46.0).abs() < 1e-9);
        assert!((r.energy_pct - 46.0).abs() < 1e-9);
        let same = inflation(&report(100), &report(100)).unwrap();
        assert_eq!((same.flops_pct, same.latency_pct, same.energy_pct), (0.0, 0.0, 0.0));
        assert_eq!(inflation(&report(200), &report(100)).unwrap().flops_pct, -50.0);
        assert_eq!(inflation(&report(0), &report(100)), Err(Error::UndefinedBaseline));
    }

    #[test]
    fn aggregate_examples() {
        let a = inflation(&report(100), &report(100)).unwrap();
        let b = inflation(&report(100), &report(200)).unwrap();
        let one = aggregate(&[b]).unwrap();
        assert_eq!(one.flops_pct.mean, 100.0);
        assert_eq!(aggregate(&[a, b]).unwrap().flops_pct.mean, 50.0);
        assert_eq!(aggregate(&[a, b]).unwrap(), aggregate(&[b, a]).unwrap());
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn closed_forms() {
        let d1 = ModelSpec::reference_early_exit(0);
        // segment 8->8: 128 + 8 bias + 8 relu; head 8->2: 32 + 2 bias + 7 softmax
        assert_eq!(flops_closed_form(&d1, &PathDescriptor::Exit(0)).unwrap(), 144 + 41);
        assert!(flops_closed_form(&d1, &PathDescriptor::Exit(3)).is_err());
        assert!(flops_closed_form(&d1, &PathDescriptor::Steps(1)).is_err());

        let d2 = ModelSpec::Generator(GeneratorSpec::default());
        assert_eq!(flops_closed_form(&d2, &PathDescriptor::Steps(0)).unwrap(), 0);

        let d4 = ModelSpec::Gated(GatedSpec {
            seed: 0,
            input_dim: 2,
            gate_hidden: 0,
            light: vec![],
            heavy: vec![8],
            classes: 2,
        });
        let light = flops_closed_form(&d4, &PathDescriptor::Route(Route::Light)).unwrap();
        let heavy = flops_closed_form(&d4, &PathDescriptor::Route(Route::Heavy)).unwrap();
        // gate 2->1: 4 + 1 + sigmoid 4; light 2->2: 8 + 2 + 7; heavy 2->8: 32+8+8, 8->2: 32+2+7
        assert_eq!(light, 9 + 17);
        assert_eq!(heavy, 9 + 48 + 41);
        assert!(light < heavy);
    }
}
