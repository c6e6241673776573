use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::align::{align_classifier, AlignConfig, AlignLog};
use super::stats::{collect_stats, CovVariant, StatsStore};
use super::train::{train_task, HeadView, TrainLog, TrainLoss};
use crate::data::{Scenario, TaskStream};
use crate::error::{ensure, Error, Result};
use crate::eval::{accuracy, seen_accuracy, RunReport};
use crate::lora::{absorb_all, attach_and_init, LayerSelector, LoraInit};
use crate::losses::SceConfig;
use crate::nn::{make_groups, LearningRates, Model, SgdConfig, TuningMode};
use crate::numcore::{RngState, Tensor};

/// One cell of the ablation grid, written as `mode[+sce][+ca[+ln]]`,
/// e.g. `sl+sce+ca+ln` or `hybrid+sce+ca+ln`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Method {
    pub tuning: TuningMode,
    pub sce: bool,
    pub ca: bool,
    pub ln: bool,
}

impl Method {
    pub fn new(tuning: TuningMode) -> Self {
        Self {
            tuning,
            sce: false,
            ca: false,
            ln: false,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('+');
        let tuning: TuningMode = parts.next().unwrap_or_default().parse()?;
        let mut m = Method::new(tuning);
        for p in parts {
            let flag = match p {
                "sce" => &mut m.sce,
                "ca" => &mut m.ca,
                "ln" => &mut m.ln,
                other => return Err(Error::contract(format!("unknown method component `{other}` in `{s}`"))),
            };
            ensure!(!*flag, "component `{p}` repeated in `{s}`");
            *flag = true;
        }
        ensure!(!m.ln || m.ca, "`ln` requires `ca` in `{s}`");
        Ok(m)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tuning)?;
        for (on, name) in [(self.sce, "sce"), (self.ca, "ca"), (self.ln, "ln")] {
            if on {
                write!(f, "+{name}")?;
            }
        }
        Ok(())
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub init: LoraInit,
    #[serde(default)]
    pub layers: LayerSelector,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            init: LoraInit::Svd,
            layers: LayerSelector::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignSchedule {
    #[default]
    EveryStage,
    FinalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rates: LearningRates,
    pub sgd: SgdConfig,
    pub sce: SceConfig,
    pub align: AlignConfig,
    pub cov: CovVariant,
    /// Momentum `γ` of the shared covariance.
    pub cov_momentum: f64,
    pub lora: LoraConfig,
    pub align_schedule: AlignSchedule,
    /// Softmax scope while training a class-incremental task.
    pub head_view: HeadView,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rates: LearningRates::default(),
            sgd: SgdConfig::default(),
            sce: SceConfig::default(),
            align: AlignConfig::default(),
            cov: CovVariant::Full,
            cov_momentum: 0.9,
            lora: LoraConfig::default(),
            align_schedule: AlignSchedule::EveryStage,
            head_view: HeadView::TaskBlock,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.rates.validate()?;
        self.sgd.validate()?;
        self.sce.validate()?;
        self.align.validate()?;
        ensure!(
            (0.0..=1.0).contains(&self.cov_momentum),
            "cov_momentum must lie in [0, 1]"
        );
        ensure!(self.lora.rank >= 1, "LoRA rank must be >= 1");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub train: TrainLog,
    pub align: Option<AlignLog>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    /// Final trained model (unaligned head, adapters absorbed).
    pub model: Model,
    pub store: StatsStore,
    pub stages: Vec<StageLog>,
    /// Backbone bytes were identical before and after every alignment.
    pub purity_ok: bool,
    /// Largest logit change caused by absorbing the adapters, if any.
    pub absorb_gap: Option<f64>,
}

/// Called after every stage with the stage index and the trained model.
pub type StageHook<'a> = &'a mut dyn FnMut(usize, &Model) -> Result<()>;

/// Runs a full task sequence from a pre-trained backbone.
///
/// Precondition failures are returned as errors. Failures after the first
/// task has started yield a partial report whose `failure` field is set.
pub fn run_sequence(
    pretrained: &Model,
    stream: &TaskStream,
    method: &Method,
    cfg: &RunConfig,
    seed: u64,
    fingerprint: &str,
    hook: Option<StageHook<'_>>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    stream.audit()?;
    ensure!(
        !(method.ca && stream.scenario == Scenario::DomainIncremental),
        "classifier alignment applies to class-incremental streams only"
    );
    let mut model = pretrained.headless();
    ensure!(
        model.input_dim() == stream.tasks[0].train.input_dim(),
        "model input width {} vs data width {}",
        model.input_dim(),
        stream.tasks[0].train.input_dim()
    );
    let root = RngState::new(seed);
    if method.tuning == TuningMode::Hybrid {
        attach_and_init(&mut model, &cfg.lora.layers, cfg.lora.rank, cfg.lora.init, root.derive("lora"))?;
    }

    let mut out = RunOutcome {
        report: RunReport::new(&method.to_string(), seed, fingerprint),
        model,
        store: StatsStore::new(cfg.cov, cfg.cov_momentum)?,
        stages: Vec::new(),
        purity_ok: true,
        absorb_gap: None,
    };
    let mut hook = hook;
    if let Err(e) = run_stages(&mut out, stream, method, cfg, root, &mut hook) {
        out.report.failure = Some(e.to_string());
    }
    Ok(out)
}

fn run_stages(
    out: &mut RunOutcome,
    stream: &TaskStream,
    method: &Method,
    cfg: &RunConfig,
    root: RngState,
    hook: &mut Option<StageHook<'_>>,
) -> Result<()> {
    let domain = stream.scenario == Scenario::DomainIncremental;
    let loss = if method.sce {
        TrainLoss::Sce(cfg.sce)
    } else {
        TrainLoss::Ce
    };
    let last = stream.len() - 1;
    for (t, task) in stream.tasks.iter().enumerate() {
        let head_seed = root.derive(&format!("head-{t}"));
        if domain {
            out.model.extend_head_block(&task.classes, t, head_seed)?;
        } else {
            out.model.extend_head(&task.classes, t, head_seed)?;
        }
        let groups = make_groups(&out.model, method.tuning, &cfg.rates)?;
        let view = if domain { HeadView::TaskBlock } else { cfg.head_view };
        let mut rng = root.derive(&format!("train-{t}")).generator();
        let train = train_task(&mut out.model, &task.train, t, &groups, &loss, view, &cfg.sgd, &mut rng)?;

        if method.ca {
            collect_stats(&out.model, &task.train, &task.classes, t, &mut out.store)?;
        }
        let tests: Vec<_> = stream.tasks[..=t].iter().map(|k| &k.test).collect();
        let wants_align = method.ca && (cfg.align_schedule == AlignSchedule::EveryStage || t == last);
        let (eval_model, align_log, pre_align) = if wants_align {
            let before = out.model.backbone_bits();
            let mut rng = root.derive(&format!("align-{t}")).generator();
            let (aligned, log) = align_classifier(&out.model, &out.store, t, &cfg.align, method.ln, &mut rng)?;
            if aligned.backbone_bits() != before || out.model.backbone_bits() != before {
                out.purity_ok = false;
            }
            let pre = seen_accuracy(&out.model, &tests)?;
            (Some(aligned), Some(log), Some(pre))
        } else {
            (None, None, None)
        };
        let eval_model = eval_model.as_ref().unwrap_or(&out.model);
        let row = tests.iter().map(|d| accuracy(eval_model, d)).collect::<Result<Vec<_>>>()?;
        let seen = seen_accuracy(eval_model, &tests)?;
        out.report.push_stage(row, seen, pre_align)?;
        out.stages.push(StageLog {
            train,
            align: align_log,
        });
        if let Some(h) = hook.as_mut() {
            h(t, &out.model)?;
        }
    }

    if out.model.has_adapters() {
        let probe = Tensor::vstack(&stream.tasks.iter().map(|k| k.test.inputs.clone()).collect::<Vec<_>>())?;
        let before = out.model.forward_logits(&probe)?;
        absorb_all(&mut out.model)?;
        let after = out.model.forward_logits(&probe)?;
        out.absorb_gap = Some(before.max_abs_diff(&after));
    }
    Ok(())
}
