//! Assembly of the full pre-training objective from branch outputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Var};

use super::angle::{angle_node, CslWindow};
use super::contrastive::{contrastive_node, DEFAULT_TAU};
use super::distill::{decoder_cross_distill_node, encoder_feature_distill_node, DEFAULT_QFL_BETA};
use super::focal::{focal_node, FocalParams};
use super::hungarian::{hungarian, MatchAssignment};
use super::matching::{match_cost, Annotations, MatchWeights, Predictions};
use super::regression::{reg_node, RegressionWeights};

/// How the plain-feature path is calibrated against the enhanced one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    /// Enhanced branch only.
    None,
    /// Feature distillation from `F_enh` to `F`.
    EncoderDistill,
    /// Cross-branch distillation of decoder outputs.
    DecoderDistill,
    /// Pseudo-label supervision of the decoder run on `F`.
    #[default]
    Siamese,
}

impl CalibrationMode {
    pub const ALL: [CalibrationMode; 4] = [
        CalibrationMode::None,
        CalibrationMode::EncoderDistill,
        CalibrationMode::DecoderDistill,
        CalibrationMode::Siamese,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationMode::None => "none",
            CalibrationMode::EncoderDistill => "encoder-distill",
            CalibrationMode::DecoderDistill => "decoder-distill",
            CalibrationMode::Siamese => "siamese",
        }
    }

    /// Whether the decoder is also run on the plain features.
    pub fn runs_aux_branch(self) -> bool {
        matches!(self, CalibrationMode::DecoderDistill | CalibrationMode::Siamese)
    }
}

impl fmt::Display for CalibrationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CalibrationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown calibration mode {s:?} (expected none, encoder-distill, decoder-distill or siamese)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub matching: MatchWeights,
    pub regression: RegressionWeights,
    pub focal: FocalParams,
    pub csl: CslWindow,
    pub qfl_beta: f64,
    /// Apply detection losses at every decoder layer rather than the last.
    pub deep_supervision: bool,
    /// Apply detection losses to the selected encoder proposals.
    pub encoder_det_loss: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            matching: MatchWeights::default(),
            regression: RegressionWeights::default(),
            focal: FocalParams::default(),
            csl: CslWindow::default(),
            qfl_beta: DEFAULT_QFL_BETA,
            deep_supervision: true,
            encoder_det_loss: true,
        }
    }
}

/// Graph handles of one set of head outputs.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub class_logits: Var,
    pub boxes: Var,
    pub angle_logits: Var,
    pub embeddings: Var,
}

/// Outputs of one detector branch: the selected encoder proposals (if the
/// branch has them) and every decoder layer, last layer final.
#[derive(Debug, Clone)]
pub struct BranchVars {
    pub encoder: Option<HeadVars>,
    pub layers: Vec<HeadVars>,
}

impl BranchVars {
    pub fn last(&self) -> Result<&HeadVars> {
        self.layers
            .last()
            .ok_or_else(|| Error::Config("branch has no decoder layers".into()))
    }
}

/// Component values of the objective. `distill` holds the distillation term
/// of the two distillation calibration modes and is zero otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ca_det: f64,
    pub cls: f64,
    pub reg: f64,
    pub ang: f64,
    pub ca_aux: f64,
    pub cls_aux: f64,
    pub reg_aux: f64,
    pub ang_aux: f64,
    pub distill: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const COMPONENTS: [&'static str; 9] = [
        "ca_det", "cls", "reg", "ang", "ca_aux", "cls_aux", "reg_aux", "ang_aux", "distill",
    ];

    pub fn components(&self) -> [f64; 9] {
        [
            self.ca_det,
            self.cls,
            self.reg,
            self.ang,
            self.ca_aux,
            self.cls_aux,
            self.reg_aux,
            self.ang_aux,
            self.distill,
        ]
    }

    /// Sum of the components in declaration order.
    pub fn resum(&self) -> f64 {
        self.components().iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|v| v.is_finite()) && self.total.is_finite()
    }
}

#[derive(Default)]
struct DetTerms {
    cls: Vec<Var>,
    reg: Vec<Var>,
    ang: Vec<Var>,
}

fn match_head(g: &Graph, head: &HeadVars, ann: Annotations<'_>, cfg: &LossConfig) -> Result<MatchAssignment> {
    let preds = Predictions {
        class_logits: g.value(head.class_logits),
        boxes: g.value(head.boxes),
        angle_logits: g.value(head.angle_logits),
    };
    let cost = match_cost(preds, ann, cfg.matching, cfg.focal, cfg.csl)?;
    hungarian(&cost)
}

fn detection_terms(
    g: &mut Graph,
    head: &HeadVars,
    ann: Annotations<'_>,
    assignment: &MatchAssignment,
    cfg: &LossConfig,
    out: &mut DetTerms,
) -> Result<()> {
    let n = g.value(head.class_logits).nrows();
    let mut targets = vec![None; n];
    for &(a, p) in &assignment.pairs {
        targets[p] = Some(ann.classes[a]);
    }
    let angles: Vec<f64> = ann.boxes.iter().map(|b| b.angle()).collect();
    out.cls.push(focal_node(g, head.class_logits, &targets, cfg.focal)?);
    out.reg.push(reg_node(g, head.boxes, ann.boxes, assignment, cfg.regression)?);
    out.ang.push(angle_node(g, head.angle_logits, &angles, assignment, cfg.csl)?);
    Ok(())
}

/// Contrastive term between the matched, normalized embeddings of `head`
/// and the normalized object embeddings.
fn alignment_term(
    g: &mut Graph,
    head: &HeadVars,
    assignment: &MatchAssignment,
    objects: Var,
    tau: f64,
) -> Result<Var> {
    let picked = g.gather_rows(head.embeddings, &assignment.predictions());
    let z = g.l2_normalize_rows(picked);
    contrastive_node(g, z, objects, tau)
}

/// Detection and alignment terms of one branch. Returns `(ca, det)`.
fn branch_terms(
    g: &mut Graph,
    branch: &BranchVars,
    ann: Annotations<'_>,
    objects: Var,
    with_encoder: bool,
    cfg: &LossConfig,
) -> Result<(Vec<Var>, DetTerms)> {
    let mut det = DetTerms::default();
    let mut ca = Vec::new();
    if ann.is_empty() {
        return Ok((ca, det));
    }
    if with_encoder {
        if let Some(enc) = &branch.encoder {
            let m = match_head(g, enc, ann, cfg)?;
            ca.push(alignment_term(g, enc, &m, objects, cfg.tau)?);
            if cfg.encoder_det_loss {
                detection_terms(g, enc, ann, &m, cfg, &mut det)?;
            }
        }
    }
    let last = branch.layers.len().checked_sub(1).ok_or_else(|| Error::Config("branch has no decoder layers".into()))?;
    for (l, head) in branch.layers.iter().enumerate() {
        if l != last && !cfg.deep_supervision {
            continue;
        }
        let m = match_head(g, head, ann, cfg)?;
        detection_terms(g, head, ann, &m, cfg, &mut det)?;
        if l == last {
            ca.push(alignment_term(g, head, &m, objects, cfg.tau)?);
        }
    }
    Ok((ca, det))
}

fn add_all(g: &mut Graph, vars: &[Var]) -> Var {
    let terms: Vec<(Var, f64)> = vars.iter().map(|&v| (v, 1.0)).collect();
    g.weighted_sum(&terms)
}

/// Everything the objective reads from one pre-training forward pass.
#[derive(Debug, Clone)]
pub struct ObjectiveInputs<'a> {
    /// Branch computed on the enhanced features.
    pub main: &'a BranchVars,
    /// Decoder branch computed on the plain features, when executed.
    pub aux: Option<&'a BranchVars>,
    /// Enhanced object embeddings, `M×C`, not yet normalized.
    pub objects: Var,
    /// `(F, F_enh)`, needed by encoder distillation.
    pub features: Option<(Var, Var)>,
    pub annotations: Annotations<'a>,
}

/// Builds the objective for `mode` and returns its graph node together with
/// the component values.
///
/// Every mode includes the detector loss of the enhanced branch (alignment
/// plus detection terms). `Siamese` adds the same terms on the plain branch
/// with the plain branch's own matching; the distillation modes add their
/// distillation term instead.
pub fn compose_losses(
    g: &mut Graph,
    inputs: &ObjectiveInputs<'_>,
    mode: CalibrationMode,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    let ann = inputs.annotations;
    if ann.classes.len() != ann.boxes.len() || g.value(inputs.objects).nrows() != ann.len() {
        return Err(Error::invalid(
            "compose_losses: annotations and object embeddings differ in count",
        ));
    }
    let objects = g.l2_normalize_rows(inputs.objects);
    let (ca, det) = branch_terms(g, inputs.main, ann, objects, true, cfg)?;
    let mut parts: Vec<(&'static str, Var)> = vec![
        ("ca_det", add_all(g, &ca)),
        ("cls", add_all(g, &det.cls)),
        ("reg", add_all(g, &det.reg)),
        ("ang", add_all(g, &det.ang)),
    ];

    match mode {
        CalibrationMode::None => {}
        CalibrationMode::Siamese => {
            let aux = inputs
                .aux
                .ok_or_else(|| Error::Config("siamese calibration needs the auxiliary branch".into()))?;
            let (ca, det) = branch_terms(g, aux, ann, objects, false, cfg)?;
            parts.push(("ca_aux", add_all(g, &ca)));
            parts.push(("cls_aux", add_all(g, &det.cls)));
            parts.push(("reg_aux", add_all(g, &det.reg)));
            parts.push(("ang_aux", add_all(g, &det.ang)));
        }
        CalibrationMode::EncoderDistill => {
            let (f, f_enh) = inputs
                .features
                .ok_or_else(|| Error::Config("encoder distillation needs F and F_enh".into()))?;
            let teacher = g.detach(f_enh);
            parts.push(("distill", encoder_feature_distill_node(g, f, teacher)?));
        }
        CalibrationMode::DecoderDistill => {
            let aux = inputs
                .aux
                .ok_or_else(|| Error::Config("decoder distillation needs the auxiliary branch".into()))?;
            let student = *aux.last()?;
            let teacher = *inputs.main.last()?;
            let t_logits = g.detach(teacher.class_logits);
            let t_emb = g.detach(teacher.embeddings);
            parts.push((
                "distill",
                decoder_cross_distill_node(
                    g,
                    student.class_logits,
                    t_logits,
                    student.embeddings,
                    t_emb,
                    cfg.qfl_beta,
                )?,
            ));
        }
    }

    let mut breakdown = LossBreakdown::default();
    for &(name, v) in &parts {
        let value = g.scalar(v);
        match name {
            "ca_det" => breakdown.ca_det = value,
            "cls" => breakdown.cls = value,
            "reg" => breakdown.reg = value,
            "ang" => breakdown.ang = value,
            "ca_aux" => breakdown.ca_aux = value,
            "cls_aux" => breakdown.cls_aux = value,
            "reg_aux" => breakdown.reg_aux = value,
            "ang_aux" => breakdown.ang_aux = value,
            _ => breakdown.distill = value,
        }
    }
    let vars: Vec<Var> = parts.iter().map(|&(_, v)| v).collect();
    let total = add_all(g, &vars);
    breakdown.total = g.scalar(total);
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in CalibrationMode::ALL {
            assert_eq!(m.as_str().parse::<CalibrationMode>().unwrap(), m);
        }
        assert!("both".parse::<CalibrationMode>().is_err());
        assert_eq!(CalibrationMode::default(), CalibrationMode::Siamese);
    }

    #[test]
    fn resum_of_zero_breakdown() {
        let b = LossBreakdown::default();
        assert_eq!(b.resum(), 0.0);
        assert!(b.is_finite());
    }
}
