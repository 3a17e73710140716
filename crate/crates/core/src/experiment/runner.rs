use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geometry::BinaryMask;
use crate::metrics::MetricsReport;
use crate::phantom::Sample;
use crate::rng;

use super::learner::{FitRequest, Fitted, Learner, Stage};
use super::select::{select_weight_decay, DECAY_GRID};
use super::{make_fold_plan, CaseKey, FoldPlan, Grouping, Method};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub k_outer: usize,
    pub k_inner: usize,
    pub grouping: Grouping,
    pub seed: u64,
    pub decay_grid: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            k_outer: 3,
            k_inner: 3,
            grouping: Grouping::ByPatient,
            seed: 0,
            decay_grid: DECAY_GRID.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.methods.is_empty(), InvalidArgument, "no methods requested");
        ensure!(!self.decay_grid.is_empty(), InvalidArgument, "weight-decay grid is empty");
        ensure!(self.k_outer >= 2 && self.k_inner >= 2, InvalidArgument, "need at least 2 folds at each level");
        Ok(())
    }
}

/// Identity of everything that has shaped a model's weights.
#[derive(Debug, Clone, Default)]
struct Lineage {
    cases: BTreeSet<u64>,
}

struct Trained {
    fitted: Fitted,
    lineage: Lineage,
}

/// Counts of leakage checks performed during a run; any failed check aborts it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub train_calls: usize,
    pub predict_calls: usize,
    pub case_checks: usize,
    pub patient_checks: usize,
}

struct Guard<'a> {
    patient_of: &'a HashMap<u64, u64>,
    grouping: Grouping,
    audit: LeakageAudit,
}

impl Guard<'_> {
    fn check(&mut self, lineage: &Lineage, held_out: &[u64], what: &str) -> Result<()> {
        self.audit.case_checks += 1;
        if let Some(id) = held_out.iter().find(|id| lineage.cases.contains(id)) {
            return Err(Error::InvalidArgument(format!("leakage: case {id} is held out but shaped the {what} model")));
        }
        if self.grouping == Grouping::ByPatient {
            self.audit.patient_checks += 1;
            let seen: BTreeSet<u64> = lineage.cases.iter().map(|id| self.patient_of[id]).collect();
            if let Some(id) = held_out.iter().find(|id| seen.contains(&self.patient_of[id])) {
                return Err(Error::InvalidArgument(format!(
                    "leakage: patient {} of held-out case {id} shaped the {what} model",
                    self.patient_of[id]
                )));
            }
        }
        Ok(())
    }
}

/// One pooled prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePrediction {
    pub case_id: u64,
    pub fold: usize,
    pub pred_mm: f64,
    pub gt_mm: f64,
    #[serde(skip)]
    pub mask: Option<BinaryMask>,
}

/// What happened in one outer fold for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldLog {
    pub method: Method,
    pub fold: usize,
    pub chosen_decay: f64,
    /// `(decay, mean inner PLE)`; empty when the grid has one value.
    pub inner_scores: Vec<(f64, f64)>,
    pub loss_curve: Vec<f64>,
    pub train_cases: usize,
    pub test_cases: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer_verified: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub chosen_decay: Vec<f64>,
    pub predictions: Vec<CasePrediction>,
    pub report: Option<MetricsReport>,
    pub folds: Vec<FoldLog>,
    /// Set when training failed; results cover only the completed folds.
    pub error: Option<String>,
    /// Wall-clock seconds spent training and predicting for this method.
    pub elapsed_s: f64,
}

impl MethodResult {
    pub fn is_partial(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub plan: FoldPlan,
    pub results: Vec<MethodResult>,
    pub audit: LeakageAudit,
}

impl ExperimentOutcome {
    pub fn result(&self, method: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method)
    }
}

fn seed_for(base: u64, method: Method, fold: usize, stage: Stage, inner: usize, decay_index: usize) -> u64 {
    let stage = match stage {
        Stage::Inner => 0,
        Stage::Outer => 1,
    };
    rng::derive_key(base, &[method.index(), fold as u64, stage, inner as u64, decay_index as u64])
}

struct Ctx<'a> {
    by_id: BTreeMap<u64, &'a Sample>,
    cfg: &'a ExperimentConfig,
    plan: &'a FoldPlan,
    learner: &'a dyn Learner,
    guard: Guard<'a>,
}

impl<'a> Ctx<'a> {
    fn samples(&self, ids: &[u64]) -> Vec<&'a Sample> {
        ids.iter().map(|id| self.by_id[id]).collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        method: Method,
        stage: Stage,
        train_ids: &[u64],
        held_out: &[u64],
        decay: f64,
        seed: u64,
        source: Option<&Trained>,
    ) -> Result<Trained> {
        let mut lineage = Lineage { cases: train_ids.iter().copied().collect() };
        if let Some(s) = source {
            lineage.cases.extend(&s.lineage.cases);
        }
        self.guard.audit.train_calls += 1;
        self.guard.check(&lineage, held_out, method.name())?;
        let train = self.samples(train_ids);
        let req =
            FitRequest { method, stage, train: &train, weight_decay: decay, seed, encoder_source: source.map(|s| &s.fitted) };
        let fitted = self.learner.fit(&req)?;
        Ok(Trained { fitted, lineage })
    }

    fn predict(&mut self, method: Method, model: &Trained, ids: &[u64]) -> Result<Vec<super::CaseOutput>> {
        self.guard.audit.predict_calls += 1;
        self.guard.check(&model.lineage, ids, method.name())?;
        let cases = self.samples(ids);
        let out = self.learner.predict(method, &model.fitted, &cases)?;
        ensure!(
            out.len() == ids.len() && out.iter().zip(ids).all(|(o, id)| o.case_id == *id),
            InvalidArgument,
            "{method} predictions do not match the requested cases"
        );
        Ok(out)
    }

    fn inner_ple(&mut self, method: Method, model: &Trained, fold: usize, inner: usize) -> Result<f64> {
        let val = self.plan.inner_val(fold, inner).to_vec();
        let out = self.predict(method, model, &val)?;
        let pred: Vec<f64> = out.iter().map(|o| o.length_mm).collect();
        let gt: Vec<f64> = val.iter().map(|id| self.by_id[id].length_mm).collect();
        crate::metrics::ple(&pred, &gt)
    }
}

/// Per-fold state of one method's run.
struct FoldRun {
    log: FoldLog,
    predictions: Vec<CasePrediction>,
    elapsed_s: f64,
}

/// Runs the full protocol: for each outer fold, choose the weight decay on
/// the inner folds, retrain on the outer training set and predict the outer
/// test set. DEW models start from the segmentation model trained on the
/// same split at the same decay.
pub fn run_experiment(samples: &[Sample], cfg: &ExperimentConfig, learner: &dyn Learner) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let keys: Vec<CaseKey> = samples.iter().map(|s| CaseKey { case_id: s.case_id, patient_id: s.patient_id }).collect();
    let plan = make_fold_plan(&keys, cfg.k_outer, cfg.k_inner, cfg.grouping, cfg.seed)?;
    let patient_of: HashMap<u64, u64> = keys.iter().map(|k| (k.case_id, k.patient_id)).collect();
    let mut ctx = Ctx {
        by_id: samples.iter().map(|s| (s.case_id, s)).collect(),
        cfg,
        plan: &plan,
        learner,
        guard: Guard { patient_of: &patient_of, grouping: cfg.grouping, audit: LeakageAudit::default() },
    };
    let mut methods: Vec<Method> = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let wants = |m| methods.contains(&m);
    let need_sb = wants(Method::SB) || wants(Method::DEW);

    let mut runs: BTreeMap<Method, Vec<FoldRun>> = methods.iter().map(|&m| (m, Vec::new())).collect();
    let mut errors: BTreeMap<Method, String> = BTreeMap::new();

    for fold in 0..plan.k_outer() {
        let train_ids = plan.outer_train(fold);
        let test_ids = plan.outer_test(fold).to_vec();

        // SB first: DEW reuses its inner and outer models.
        let mut sb_inner: HashMap<(usize, usize), Trained> = HashMap::new();
        let mut sb_outer: Option<Trained> = None;
        if need_sb && !errors.contains_key(&Method::SB) {
            match run_fold(&mut ctx, Method::SB, fold, &train_ids, &test_ids, None, wants(Method::DEW).then_some(&mut sb_inner)) {
                Ok((run, model)) => {
                    if wants(Method::SB) {
                        runs.get_mut(&Method::SB).expect("requested").push(run);
                    }
                    sb_outer = Some(model);
                }
                Err(e) if is_leak(&e) => return Err(e),
                Err(e) => {
                    errors.insert(Method::SB, e.to_string());
                }
            }
        }
        for &method in methods.iter().filter(|&&m| m != Method::SB) {
            if errors.contains_key(&method) {
                continue;
            }
            let source = if method == Method::DEW {
                match &sb_outer {
                    Some(sb) => Some((sb, &sb_inner)),
                    None => {
                        let why = errors.get(&Method::SB).cloned().unwrap_or_default();
                        errors.insert(method, format!("segmentation model unavailable: {why}"));
                        continue;
                    }
                }
            } else {
                None
            };
            match run_fold(&mut ctx, method, fold, &train_ids, &test_ids, source, None) {
                Ok((run, _)) => runs.get_mut(&method).expect("requested").push(run),
                Err(e) if is_leak(&e) => return Err(e),
                Err(e) => {
                    errors.insert(method, e.to_string());
                }
            }
        }
    }

    let all_ids: BTreeSet<u64> = samples.iter().map(|s| s.case_id).collect();
    let mut results = Vec::new();
    for method in methods {
        let folds = runs.remove(&method).unwrap_or_default();
        let error = errors.remove(&method);
        let mut predictions: Vec<CasePrediction> = Vec::new();
        let mut logs = Vec::new();
        let mut elapsed_s = 0.0;
        for run in folds {
            elapsed_s += run.elapsed_s;
            predictions.extend(run.predictions);
            logs.push(run.log);
        }
        predictions.sort_by_key(|p| p.case_id);
        let predicted: Vec<u64> = predictions.iter().map(|p| p.case_id).collect();
        ensure!(predicted.windows(2).all(|w| w[0] != w[1]), InvalidArgument, "{method}: a case was predicted twice");
        if error.is_none() {
            ensure!(
                predicted.iter().copied().eq(all_ids.iter().copied()),
                InvalidArgument,
                "{method}: not every case was predicted"
            );
        }
        let report = if predictions.is_empty() {
            None
        } else {
            let pred: Vec<f64> = predictions.iter().map(|p| p.pred_mm).collect();
            let gt: Vec<f64> = predictions.iter().map(|p| p.gt_mm).collect();
            Some(if method == Method::SB {
                let pairs: Vec<(BinaryMask, BinaryMask)> = predictions
                    .iter()
                    .map(|p| {
                        let m = p
                            .mask
                            .clone()
                            .ok_or_else(|| Error::InvalidArgument("segmentation prediction without a mask".into()))?;
                        Ok((m, ctx.by_id[&p.case_id].mask.clone()))
                    })
                    .collect::<Result<_>>()?;
                MetricsReport::from_segmentation(&pred, &gt, &pairs)?
            } else {
                MetricsReport::from_lengths(&pred, &gt)?
            })
        };
        results.push(MethodResult {
            method,
            chosen_decay: logs.iter().map(|l| l.chosen_decay).collect(),
            predictions,
            report,
            folds: logs,
            error,
            elapsed_s,
        });
    }
    let audit = ctx.guard.audit;
    Ok(ExperimentOutcome { config: cfg.clone(), plan, results, audit })
}

fn is_leak(e: &Error) -> bool {
    matches!(e, Error::InvalidArgument(m) if m.starts_with("leakage"))
}

type SbSources<'s> = (&'s Trained, &'s HashMap<(usize, usize), Trained>);

/// Select the decay, retrain on the outer split and predict its test set.
///
/// With `keep_inner`, inner segmentation models are stored by
/// `(decay index, inner fold)` for later weight transfer.
fn run_fold(
    ctx: &mut Ctx<'_>,
    method: Method,
    fold: usize,
    train_ids: &[u64],
    test_ids: &[u64],
    sb: Option<SbSources<'_>>,
    mut keep_inner: Option<&mut HashMap<(usize, usize), Trained>>,
) -> Result<(FoldRun, Trained)> {
    let started = std::time::Instant::now();
    let grid = ctx.cfg.decay_grid.clone();
    let base = ctx.cfg.seed;
    let k_inner = ctx.plan.inner[fold].len();
    let selection = select_weight_decay(&grid, |decay| {
        let di = grid.iter().position(|&d| d == decay).expect("grid value");
        let mut total = 0.0;
        for j in 0..k_inner {
            let inner_train = ctx.plan.inner_train(fold, j);
            let mut held_out = ctx.plan.inner_val(fold, j).to_vec();
            held_out.extend_from_slice(test_ids);
            let source = match sb {
                Some((_, inner)) => Some(
                    inner
                        .get(&(di, j))
                        .ok_or_else(|| Error::InvalidArgument(format!("no inner segmentation model for decay {decay}")))?,
                ),
                None => None,
            };
            let seed = seed_for(base, method, fold, Stage::Inner, j, di);
            let model = ctx.fit(method, Stage::Inner, &inner_train, &held_out, decay, seed, source)?;
            total += ctx.inner_ple(method, &model, fold, j)?;
            if let Some(store) = keep_inner.as_deref_mut() {
                store.insert((di, j), model);
            }
        }
        Ok(total / k_inner as f64)
    })?;
    let di = grid.iter().position(|&d| d == selection.chosen).expect("grid value");
    let seed = seed_for(base, method, fold, Stage::Outer, 0, di);
    let model = ctx.fit(method, Stage::Outer, train_ids, test_ids, selection.chosen, seed, sb.map(|(outer, _)| outer))?;
    let outputs = ctx.predict(method, &model, test_ids)?;
    let predictions = outputs
        .into_iter()
        .map(|o| CasePrediction {
            case_id: o.case_id,
            fold,
            pred_mm: o.length_mm,
            gt_mm: ctx.by_id[&o.case_id].length_mm,
            mask: o.mask,
        })
        .collect();
    let log = FoldLog {
        method,
        fold,
        chosen_decay: selection.chosen,
        inner_scores: selection.scores,
        loss_curve: model.fitted.loss_curve.clone(),
        train_cases: train_ids.len(),
        test_cases: test_ids.to_vec(),
        transfer_verified: model.fitted.transfer_verified,
    };
    Ok((FoldRun { log, predictions, elapsed_s: started.elapsed().as_secs_f64() }, model))
}
