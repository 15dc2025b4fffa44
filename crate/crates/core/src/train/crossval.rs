use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train_fold, LabelMode, RunConfig, TrainedModel, TrainingLog};
use crate::data::{read_bag, LabeledBag, Manifest, MedianThreshold, SplitPlan, TertileThresholds};
use crate::error::{Error, Result};
use crate::eval::{kfold_report, FoldSummary};

/// Slides with resolved patient labels plus the split they are evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub struct CvData {
    pub plan: SplitPlan,
    pub bags: Vec<LabeledBag>,
    /// How labels were obtained, e.g. the fitted median.
    pub label_note: String,
}

impl CvData {
    /// Reads every slide of every patient in `plan`. Thresholds for the
    /// `median` and `tertile` modes are fitted on development patients only.
    pub fn load(manifest: &Manifest, plan: &SplitPlan, mode: LabelMode) -> Result<Self> {
        plan.validate()?;
        let (labels, label_note) = resolve_labels(manifest, plan, mode)?;
        let patients = manifest.patients();
        let mut bags = Vec::new();
        for (patient, label) in &labels {
            for &i in &patients[patient.as_str()] {
                let row = &manifest.rows[i];
                bags.push(LabeledBag {
                    bag: read_bag(&manifest.resolve(row), &row.patient_id, &row.wsi_id)?,
                    label: *label,
                });
            }
        }
        Ok(Self {
            plan: plan.clone(),
            bags,
            label_note,
        })
    }

    /// Uses already labelled bags; every planned patient must be present.
    pub fn from_bags(bags: Vec<LabeledBag>, plan: &SplitPlan) -> Result<Self> {
        plan.validate()?;
        let present: BTreeSet<&str> = bags.iter().map(|b| b.bag.patient_id.as_str()).collect();
        if let Some(p) = planned(plan).into_iter().find(|p| !present.contains(p)) {
            return Err(Error::invalid(format!("patient {p} is in the split but has no bags")));
        }
        Ok(Self {
            plan: plan.clone(),
            bags,
            label_note: "label".into(),
        })
    }

    /// Bags of the given patients, in stored order. Patients without bags
    /// (dropped by tertile labelling) are skipped.
    pub fn select(&self, patients: &[String]) -> Vec<LabeledBag> {
        let set: BTreeSet<&str> = patients.iter().map(String::as_str).collect();
        self.bags
            .iter()
            .filter(|b| set.contains(b.bag.patient_id.as_str()))
            .cloned()
            .collect()
    }
}

fn planned(plan: &SplitPlan) -> BTreeSet<&str> {
    let mut all = plan.development_patients();
    all.extend(plan.test_patients.iter().map(String::as_str));
    all
}

fn resolve_labels(manifest: &Manifest, plan: &SplitPlan, mode: LabelMode) -> Result<(BTreeMap<String, u8>, String)> {
    let known = manifest.patients();
    let all = planned(plan);
    if let Some(p) = all.iter().find(|p| !known.contains_key(*p)) {
        return Err(Error::invalid(format!("patient {p} is in the split but not in the manifest")));
    }
    let skipped = known.keys().filter(|p| !all.contains(*p)).count();
    if skipped > 0 {
        log::warn!("{skipped} manifest patients are not in the split and are ignored");
    }

    let score = |p: &str| -> Result<f64> {
        manifest
            .patient_score(p)?
            .map(|s| s as f64)
            .ok_or_else(|| Error::invalid(format!("patient {p} has no raw_score")))
    };
    let dev_scores = || -> Result<Vec<f64>> { plan.development_patients().into_iter().map(score).collect() };

    let mut labels = BTreeMap::new();
    let note = match mode {
        LabelMode::Label => {
            for p in &all {
                let l = manifest
                    .patient_label(p)?
                    .ok_or_else(|| Error::invalid(format!("patient {p} has no label")))?;
                labels.insert(p.to_string(), l);
            }
            "label".to_string()
        }
        LabelMode::Median => {
            let t = MedianThreshold::fit(&dev_scores()?)?;
            for p in &all {
                labels.insert(p.to_string(), t.apply(score(p)?));
            }
            format!("median (threshold {})", t.median)
        }
        LabelMode::Tertile => {
            let t = TertileThresholds::fit(&dev_scores()?)?;
            let mut dropped = 0;
            for p in &all {
                match t.apply(score(p)?) {
                    Some(l) => {
                        labels.insert(p.to_string(), l);
                    }
                    None => dropped += 1,
                }
            }
            format!("tertile (lower {}, upper {}, {dropped} patients dropped)", t.lower, t.upper)
        }
    };
    Ok((labels, note))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub model: TrainedModel,
    pub log: TrainingLog,
    /// Patient AUC on the shared test set; `None` when the split has none.
    pub test_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossvalResult {
    pub config: RunConfig,
    pub label_note: String,
    pub test_patients: usize,
    pub folds: Vec<FoldResult>,
}

fn summarize(values: Option<Vec<f64>>) -> Option<FoldSummary> {
    match values {
        Some(v) if v.len() >= 2 => kfold_report(&v).ok(),
        Some(v) if v.len() == 1 => Some(FoldSummary { mean: v[0], std: 0.0 }),
        _ => None,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10}")).unwrap_or_else(|| "NA".into())
}

impl CrossvalResult {
    pub fn val_aucs(&self) -> Option<Vec<f64>> {
        self.folds.iter().map(|f| f.log.best_val_auc).collect()
    }

    pub fn test_aucs(&self) -> Option<Vec<f64>> {
        self.folds.iter().map(|f| f.test_auc).collect()
    }

    pub fn val_summary(&self) -> Option<FoldSummary> {
        summarize(self.val_aucs())
    }

    pub fn test_summary(&self) -> Option<FoldSummary> {
        summarize(self.test_aucs())
    }

    fn header(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.config.describe() {
            writeln!(s, "# {k} = {v}").unwrap();
        }
        writeln!(s, "# labels = {}", self.label_note).unwrap();
        writeln!(s, "# folds = {}", self.folds.len()).unwrap();
        writeln!(s, "# test_patients = {}", self.test_patients).unwrap();
        s
    }

    /// Per-fold table as CSV, preceded by `#` config lines.
    pub fn folds_csv(&self) -> String {
        let mut s = self.header();
        s.push_str("fold,best_step,val_auc,test_auc\n");
        for f in &self.folds {
            writeln!(
                s,
                "{},{},{},{}",
                f.fold,
                f.log.best_step.map_or("NA".into(), |v| v.to_string()),
                fmt_opt(f.log.best_val_auc),
                fmt_opt(f.test_auc)
            )
            .unwrap();
        }
        s
    }

    /// Plain-text summary with mean ± std AUC.
    pub fn summary_text(&self) -> String {
        let mut s = self.header();
        let line = |s: &mut String, what: &str, sum: Option<FoldSummary>| match sum {
            Some(x) => writeln!(s, "{} {what} AUC: {:.4} ± {:.4}", self.config.model, x.mean, x.std).unwrap(),
            None => writeln!(s, "{} {what} AUC: NA", self.config.model).unwrap(),
        };
        line(&mut s, "validation", self.val_summary());
        line(&mut s, "test", self.test_summary());
        s
    }

    /// Writes `summary.txt`, `folds.csv`, and per fold `fold<i>_log.csv`
    /// and `fold<i>.ckpt` into `dir`.
    pub fn write_reports(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: &str| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put("summary.txt", &self.summary_text())?;
        put("folds.csv", &self.folds_csv())?;
        for f in &self.folds {
            let mut buf = self.header().into_bytes();
            f.log.write_csv(&mut buf)?;
            let p = dir.join(format!("fold{}_log.csv", f.fold));
            fs::write(&p, buf).map_err(|e| Error::io(&p, e))?;
            f.model.save(&dir.join(format!("fold{}.ckpt", f.fold)))?;
        }
        Ok(())
    }
}

/// Trains one model per fold, selects on validation and scores the shared
/// test set once per fold.
pub fn run_crossval(data: &CvData, cfg: &RunConfig) -> Result<CrossvalResult> {
    cfg.validate()?;
    let test = data.select(&data.plan.test_patients);
    let mut folds = Vec::with_capacity(data.plan.folds.len());
    for (i, fold) in data.plan.folds.iter().enumerate() {
        let train = data.select(&fold.train);
        let val = data.select(&fold.val);
        let (model, log) = train_fold(&train, &val, cfg)?;
        let test_auc = if test.is_empty() {
            None
        } else {
            Some(model.patient_auc(&super::prepare_bags(&test, cfg)?)?)
        };
        log::info!(
            "{} fold {i}: best step {:?}, val AUC {:?}, test AUC {:?}",
            cfg.model,
            log.best_step,
            log.best_val_auc,
            test_auc
        );
        folds.push(FoldResult {
            fold: i,
            model,
            log,
            test_auc,
        });
    }
    let test_patients = test
        .iter()
        .map(|b| b.bag.patient_id.as_str())
        .collect::<BTreeSet<_>>()
        .len();
    Ok(CrossvalResult {
        config: cfg.clone(),
        label_note: data.label_note.clone(),
        test_patients,
        folds,
    })
}

/// Lists of values whose Cartesian product is searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.learning_rates.len() * self.weight_decays.len() * self.batch_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Configurations in lr-major order.
    pub fn configs(&self, base: &RunConfig) -> Vec<RunConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &learning_rate in &self.learning_rates {
            for &weight_decay in &self.weight_decays {
                for &batch_size in &self.batch_sizes {
                    out.push(RunConfig {
                        learning_rate,
                        weight_decay,
                        batch_size,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub mean_val_auc: f64,
    pub std_val_auc: f64,
    pub mean_test_auc: Option<f64>,
}

/// Cross-validates every grid cell; rows are sorted by mean validation AUC,
/// best first, with grid order kept among ties.
pub fn grid_search(data: &CvData, base: &RunConfig, grid: &GridSpec) -> Result<Vec<GridRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("grid search needs at least one value per axis"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for cfg in grid.configs(base) {
        let res = run_crossval(data, &cfg)?;
        let val = res
            .val_summary()
            .ok_or_else(|| Error::invalid("grid search needs at least one training epoch"))?;
        rows.push(GridRow {
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            batch_size: cfg.batch_size,
            mean_val_auc: val.mean,
            std_val_auc: val.std,
            mean_test_auc: res.test_summary().map(|s| s.mean),
        });
    }
    rows.sort_by(|a, b| b.mean_val_auc.total_cmp(&a.mean_val_auc));
    Ok(rows)
}

/// Grid table as CSV, preceded by `#` lines describing the base config.
pub fn write_grid_csv<W: Write>(rows: &[GridRow], base: &RunConfig, mut out: W) -> Result<()> {
    let mut s = String::new();
    for (k, v) in base.describe() {
        if !matches!(k, "learning_rate" | "weight_decay" | "batch_size") {
            writeln!(s, "# {k} = {v}").unwrap();
        }
    }
    s.push_str("learning_rate,weight_decay,batch_size,mean_val_auc,std_val_auc,mean_test_auc\n");
    for r in rows {
        writeln!(
            s,
            "{:e},{:e},{},{:.10},{:.10},{}",
            r.learning_rate,
            r.weight_decay,
            r.batch_size,
            r.mean_val_auc,
            r.std_val_auc,
            fmt_opt(r.mean_test_auc)
        )
        .unwrap();
    }
    out.write_all(s.as_bytes()).map_err(|e| Error::io("<grid report>", e))
}
