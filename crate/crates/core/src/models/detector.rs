use serde::{Deserialize, Serialize};

use super::stack::Stack;
use super::{DetectorSpec, Inference, InferenceTrace, Meter, Run, Stage, TraceDetail};
use crate::cost::stack_flops;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::{GradTape, Tensor, ValueId};

/// FLOPs charged per IoU evaluation: 4 min/max and 2 clamps on the overlap
/// extents, 2 subtractions, 1 product for the intersection, 2 products for
/// the areas, 2 additions for the union, 1 division and 1 comparison.
pub const IOU_PAIR_FLOPS: u64 = 15;

/// Channels per candidate: `tx, ty, tw, th, confidence`.
pub const CHANNELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCandidate {
    pub index: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

impl BoxCandidate {
    pub fn iou(&self, other: &BoxCandidate) -> f64 {
        let ix = (self.cx + self.w / 2.0).min(other.cx + other.w / 2.0)
            - (self.cx - self.w / 2.0).max(other.cx - other.w / 2.0);
        let iy = (self.cy + self.h / 2.0).min(other.cy + other.h / 2.0)
            - (self.cy - self.h / 2.0).max(other.cy - other.h / 2.0);
        let inter = ix.max(0.0) * iy.max(0.0);
        let union = self.w * self.h + other.w * other.h - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Retained boxes in descending confidence order.
    pub boxes: Vec<BoxCandidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    spec: DetectorSpec,
    backbone: Stack,
    backbone_flops: u64,
}

/// Greedy NMS over `candidates` (already threshold-filtered): descending
/// confidence, lower index first on ties, drop anything overlapping a kept box
/// with IoU at or above `iou_thresh`. Returns positions into `candidates`.
pub fn greedy_nms(candidates: &[BoxCandidate], iou_thresh: f64) -> Vec<usize> {
    let m = candidates.len();
    let mut iou = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let v = candidates[i].iou(&candidates[j]);
            iou[i * m + j] = v;
            iou[j * m + i] = v;
        }
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .confidence
            .total_cmp(&candidates[a].confidence)
            .then(candidates[a].index.cmp(&candidates[b].index))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou[k * m + i] < iou_thresh) {
            kept.push(i);
        }
    }
    kept
}

/// IoU evaluations charged for `passing` threshold survivors.
pub fn nms_pairs(passing: usize) -> u64 {
    let m = passing as u64;
    if m < 2 {
        0
    } else {
        m * (m - 1) / 2
    }
}

impl DetectorModel {
    pub(crate) fn new(spec: DetectorSpec) -> Self {
        let mut rng = rng_from_seed(spec.seed);
        let backbone = Stack::init(&spec.backbone_layers(), &mut rng);
        let backbone_flops = stack_flops(&spec.backbone_layers());
        DetectorModel {
            spec,
            backbone,
            backbone_flops,
        }
    }

    pub fn spec(&self) -> &DetectorSpec {
        &self.spec
    }

    pub fn backbone(&self) -> &Stack {
        &self.backbone
    }

    pub fn backbone_mut(&mut self) -> &mut Stack {
        &mut self.backbone
    }

    pub fn backbone_flops(&self) -> u64 {
        self.backbone_flops
    }

    /// Turns backbone output into one box per grid cell.
    pub fn decode(&self, out: &[f64]) -> Vec<BoxCandidate> {
        let side = self.spec.side();
        (0..self.spec.grid)
            .map(|i| {
                let c = &out[i * CHANNELS..(i + 1) * CHANNELS];
                BoxCandidate {
                    index: i,
                    cx: ((i % side) as f64 + c[0]) / side as f64,
                    cy: ((i / side) as f64 + c[1]) / side as f64,
                    w: c[2] * self.spec.max_box,
                    h: c[3] * self.spec.max_box,
                    confidence: c[4],
                }
            })
            .collect()
    }

    pub fn candidates(&self, x: &Tensor) -> Result<Vec<BoxCandidate>> {
        Ok(self.decode(self.backbone.forward(x)?.output.data()))
    }

    pub fn detect(&self, x: &Tensor, conf_thresh: f64, iou_thresh: f64) -> Result<Inference<Detection>> {
        Ok(self.run(x, conf_thresh, iou_thresh, None)?.into_inference())
    }

    pub fn run(&self, x: &Tensor, conf_thresh: f64, iou_thresh: f64, ceiling: Option<u64>) -> Result<Run<Detection>> {
        for (name, t) in [("confidence", conf_thresh), ("IoU", iou_thresh)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Domain(format!("{name} threshold {t} must lie in (0, 1)")));
            }
        }
        if x.len() != self.spec.input_dim {
            return Err(Error::dim("detector input", self.spec.input_dim, x.len()));
        }
        let mut meter = Meter::new(ceiling);
        let mut scores = Vec::new();
        let mut passing = 0;
        let mut retained = Vec::new();
        let mut boxes = Vec::new();
        let mut started = false;
        'run: {
            if !meter.admit(self.backbone_flops) {
                break 'run;
            }
            let out = self.backbone.forward(x)?;
            debug_assert_eq!(out.flops, self.backbone_flops);
            meter.charge(Stage::Backbone, out.flops);
            started = true;
            let all = self.decode(out.output.data());
            scores = all.iter().map(|b| b.confidence).collect();
            let survivors: Vec<BoxCandidate> = all.into_iter().filter(|b| b.confidence >= conf_thresh).collect();
            passing = survivors.len();

            let nms_cost = IOU_PAIR_FLOPS * nms_pairs(passing);
            if !meter.admit(nms_cost) {
                break 'run;
            }
            retained = greedy_nms(&survivors, iou_thresh)
                .into_iter()
                .map(|i| survivors[i])
                .collect();
            meter.charge(Stage::Nms, nms_cost);

            for (k, b) in retained.iter().enumerate() {
                if !meter.admit(self.spec.downstream_flops) {
                    break 'run;
                }
                meter.charge(Stage::Output(k), self.spec.downstream_flops);
                boxes.push(*b);
            }
        }
        let halted = meter.halted();
        let flops = meter.used();
        Ok(Run {
            output: started.then_some(Detection { boxes }),
            trace: InferenceTrace {
                checkpoints: meter.into_checkpoints(),
                detail: TraceDetail::Detection {
                    scores,
                    passing,
                    retained: retained.len(),
                    grid: self.spec.grid,
                },
            },
            flops,
            halted,
        })
    }

    /// Records the backbone; returns the sigmoid output id, its pre-activation
    /// id and the parameter leaves.
    pub fn record(&self, tape: &mut GradTape, x: ValueId) -> Result<(ValueId, ValueId, Vec<ValueId>)> {
        self.backbone.record(tape, x)
    }

    /// Positions of the confidence channel in the backbone output.
    pub fn confidence_channels(&self) -> Vec<usize> {
        (0..self.spec.grid).map(|i| i * CHANNELS + CHANNELS - 1).collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.backbone.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.backbone.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(index: usize, cx: f64, confidence: f64) -> BoxCandidate {
        BoxCandidate {
            index,
            cx,
            cy: 0.5,
            w: 0.2,
            h: 0.2,
            confidence,
        }
    }

    #[test]
    fn identical_boxes_collapse() {
        let c = [bx(0, 0.5, 0.9), bx(1, 0.5, 0.9)];
        assert_eq!(greedy_nms(&c, 0.5), vec![0]);
        assert!(c[0].iou(&c[1]) > 1.0 - 1e-12);
    }

    #[test]
    fn disjoint_boxes_survive() {
        let c = [bx(0, 0.1, 0.6), bx(1, 0.9, 0.8)];
        assert_eq!(greedy_nms(&c, 0.5), vec![1, 0]);
        assert_eq!(c[0].iou(&c[1]), 0.0);
    }

    #[test]
    fn degenerate_boxes_have_zero_iou() {
        let mut a = bx(0, 0.5, 0.9);
        a.w = 0.0;
        assert_eq!(a.iou(&a), 0.0);
    }

    #[test]
    fn pair_count() {
        assert_eq!(nms_pairs(0), 0);
        assert_eq!(nms_pairs(1), 0);
        assert_eq!(nms_pairs(2), 1);
        assert_eq!(nms_pairs(64), 2016);
    }
}
