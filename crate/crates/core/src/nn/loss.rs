use crate::world::StairClass;

/// Weights of the three terrain supervision terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainLossWeights {
    pub lambda_cls: f64,
    pub lambda_h: f64,
    pub lambda_d: f64,
}

impl Default for TerrainLossWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 0.6,
            lambda_h: 1.0,
            lambda_d: 1.0,
        }
    }
}

impl TerrainLossWeights {
    pub fn validate(&self) -> crate::Result<()> {
        if [self.lambda_cls, self.lambda_h, self.lambda_d]
            .iter()
            .any(|l| !l.is_finite() || *l < 0.0)
        {
            return crate::error::config("terrain loss weights must be finite and >= 0");
        }
        Ok(())
    }
}

/// SmoothL1 with transition at |e| = 1; returns value and derivative.
pub fn smooth_l1(e: f64) -> (f64, f64) {
    if e.abs() <= 1.0 {
        (0.5 * e * e, e)
    } else {
        (e.abs() - 0.5, e.signum())
    }
}

/// Softmax cross-entropy of `logits` against `target`; returns the loss and
/// its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + m - logits[target];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| e / z - if i == target { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

/// Estimator outputs: class logits and the two step regressions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainPrediction {
    pub logits: [f64; 3],
    pub h_step: f64,
    pub d_step: f64,
}

impl TerrainPrediction {
    /// Reads `[logit x3, h, d]` from the first five network outputs.
    pub fn from_outputs(out: &[f64]) -> Self {
        Self {
            logits: [out[0], out[1], out[2]],
            h_step: out[3],
            d_step: out[4],
        }
    }

    pub fn class(&self) -> StairClass {
        let mut best = 0;
        for i in 1..3 {
            if self.logits[i] > self.logits[best] {
                best = i;
            }
        }
        StairClass::ALL[best]
    }
}

/// Supervision target for one estimator sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainTarget {
    pub class: StairClass,
    pub h_step: f64,
    pub d_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainLoss {
    pub total: f64,
    pub cls: f64,
    pub h: f64,
    pub d: f64,
    /// Gradient with respect to `[logit x3, h, d]`.
    pub grad: [f64; 5],
}

pub fn terrain_loss(pred: &TerrainPrediction, gt: &TerrainTarget, w: &TerrainLossWeights) -> TerrainLoss {
    let (cls, g_cls) = cross_entropy(&pred.logits, gt.class.index());
    let (h, g_h) = smooth_l1(pred.h_step - gt.h_step);
    let (d, g_d) = smooth_l1(pred.d_step - gt.d_step);
    TerrainLoss {
        total: w.lambda_cls * cls + w.lambda_h * h + w.lambda_d * d,
        cls,
        h,
        d,
        grad: [
            w.lambda_cls * g_cls[0],
            w.lambda_cls * g_cls[1],
            w.lambda_cls * g_cls[2],
            w.lambda_h * g_h,
            w.lambda_d * g_d,
        ],
    }
}
