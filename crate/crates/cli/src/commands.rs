use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use varmil::data::{stratified_split, synth_generate, write_synth_dataset, Manifest, SplitPlan, SynthConfig};
use varmil::eval::{roc_auc, ScoredSet};
use varmil::preprocess::{preprocess_dir, TilingConfig};
use varmil::ssl::{
    extract_features, load_tissue_tiles, pretrain as run_pretrain, read_slide_info, write_loss_curve,
    ContrastiveModel, EncoderParams,
};
use varmil::train::{
    grid_search, prepare_bags, run_crossval, train_fold, write_grid_csv, CrossvalResult, CvData, FoldResult,
    GridSpec, TrainedModel,
};

use crate::config::{pretrain_config, run_config};
use crate::{CvArgs, EvalArgs, ExtractArgs, GridArgs, PreprocessArgs, PretrainArgs, SplitArgs, SynthArgs, TrainArgs};

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    let cfg = TilingConfig {
        tile_size: a.tile_size,
        background_intensity_threshold: a.intensity,
        sobel_threshold: a.sobel,
        background_fraction: a.fraction,
        rule_mode: a.rule.into(),
    };
    let rows = preprocess_dir(&a.img_dir, &a.out, &cfg)?;
    let background = rows.iter().filter(|r| r.background).count();
    log::info!("{} tiles, {} background, index in {}", rows.len(), background, a.out.display());
    Ok(())
}

fn parse_tiles(s: &str) -> Result<(usize, usize)> {
    let parse = |v: &str| v.trim().parse::<usize>().with_context(|| format!("bad tile count `{v}`"));
    match s.split_once('-') {
        Some((lo, hi)) => Ok((parse(lo)?, parse(hi)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let (min_tiles, max_tiles) = parse_tiles(&a.tiles)?;
    let defaults = SynthConfig::new(a.task);
    let cfg = SynthConfig {
        n_bags: a.n_bags,
        min_tiles,
        max_tiles,
        dim: a.dim,
        noise: a.noise,
        seed: a.seed,
        mean_shift: a.mean_shift.unwrap_or(defaults.mean_shift),
        variance_ratio: a.variance_ratio.unwrap_or(defaults.variance_ratio),
        offset_scale: a.offset_scale.unwrap_or(defaults.offset_scale),
        ..defaults
    };
    let bags = synth_generate(&cfg)?;
    write_synth_dataset(&bags, &cfg, &a.out)?;
    log::info!("wrote {} bags to {}", bags.len(), a.out.display());
    Ok(())
}

pub fn pretrain(a: PretrainArgs) -> Result<()> {
    let cfg = pretrain_config(&a)?;
    let tiles = load_tissue_tiles(&a.tiles)?;
    log::info!("pre-training on {} tissue tiles", tiles.len());
    let (model, losses) = run_pretrain(&tiles, ContrastiveModel::init(&cfg), &cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    model.encoder.save(&a.out.join("encoder.ckpt"))?;
    let curve = a.out.join("loss.txt");
    write_loss_curve(&losses, fs::File::create(&curve).with_context(|| format!("creating {}", curve.display()))?)?;
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        log::info!("{} steps, loss {first:.4} -> {last:.4}", losses.len());
    }
    Ok(())
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let encoder = EncoderParams::load(&a.encoder)?;
    let slides = match &a.slides {
        Some(p) => read_slide_info(p)?,
        None => BTreeMap::new(),
    };
    let manifest = extract_features(&encoder, &a.tiles, &a.out, &slides)?;
    log::info!("wrote {} bags to {}", manifest.rows.len(), a.out.display());
    Ok(())
}

pub fn split(a: SplitArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let plan = stratified_split(&manifest, a.test_frac, a.k, &a.stratify, a.seed)?;
    let out = a
        .out
        .unwrap_or_else(|| a.manifest.parent().unwrap_or(Path::new(".")).join("split.json"));
    plan.write(&out)?;
    log::info!(
        "{} test patients, {} folds, written to {}",
        plan.test_patients.len(),
        plan.k,
        out.display()
    );
    Ok(())
}

fn load_data(manifest: &Path, split: &Path, cfg: &varmil::train::RunConfig) -> Result<CvData> {
    let manifest = Manifest::read(manifest)?;
    let plan = SplitPlan::read(split)?;
    Ok(CvData::load(&manifest, &plan, cfg.label_mode)?)
}

fn print_summary(text: &str) {
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        println!("{line}");
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = run_config(&a.run)?;
    let data = load_data(&a.manifest, &a.split, &cfg)?;
    let fold = data
        .plan
        .folds
        .get(a.fold)
        .ok_or_else(|| anyhow!("fold {} out of range (split has {})", a.fold, data.plan.k))?;
    let (model, log) = train_fold(&data.select(&fold.train), &data.select(&fold.val), &cfg)?;
    let test = data.select(&data.plan.test_patients);
    let test_auc = if test.is_empty() {
        None
    } else {
        Some(model.patient_auc(&prepare_bags(&test, &cfg)?)?)
    };
    let result = CrossvalResult {
        config: cfg,
        label_note: data.label_note.clone(),
        test_patients: test.iter().map(|b| b.bag.patient_id.as_str()).collect::<BTreeSet<_>>().len(),
        folds: vec![FoldResult { fold: a.fold, model, log, test_auc }],
    };
    result.write_reports(&a.out)?;
    print_summary(&result.summary_text());
    Ok(())
}

pub fn cv(a: CvArgs) -> Result<()> {
    let cfg = run_config(&a.run)?;
    let data = load_data(&a.manifest, &a.split, &cfg)?;
    let result = run_crossval(&data, &cfg)?;
    result.write_reports(&a.out)?;
    print_summary(&result.summary_text());
    Ok(())
}

pub fn gridsearch(a: GridArgs) -> Result<()> {
    let cfg = run_config(&a.run)?;
    let text = fs::read_to_string(&a.grid).with_context(|| format!("reading {}", a.grid.display()))?;
    let grid: GridSpec = toml::from_str(&text).with_context(|| format!("parsing {}", a.grid.display()))?;
    let data = load_data(&a.manifest, &a.split, &cfg)?;
    let rows = grid_search(&data, &cfg, &grid)?;
    let file = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_grid_csv(&rows, &cfg, file)?;
    if let Some(best) = rows.first() {
        println!(
            "best: lr {:e}, wd {:e}, batch {} -> validation AUC {:.4} ± {:.4}",
            best.learning_rate, best.weight_decay, best.batch_size, best.mean_val_auc, best.std_val_auc
        );
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let model = TrainedModel::load(&a.checkpoint)?;
    let manifest = Manifest::read(&a.manifest)?;
    let mut csv = String::from("patient_id,wsi_id,score,label\n");
    let mut labelled = Vec::new();
    for row in &manifest.rows {
        let bag = varmil::data::read_bag(&manifest.resolve(row), &row.patient_id, &row.wsi_id)?;
        if bag.dim() != model.dim() {
            bail!("{}: feature dim {} but the model expects {}", row.wsi_id, bag.dim(), model.dim());
        }
        let score = model.score(&bag)?;
        let label = row.label.map_or(String::new(), |l| l.to_string());
        csv.push_str(&format!("{},{},{score:.10},{label}\n", row.patient_id, row.wsi_id));
        if let Some(l) = row.label {
            labelled.push((row.patient_id.as_str(), score, l));
        }
    }
    match &a.out {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().write_all(csv.as_bytes())?,
    }
    if labelled.len() == manifest.rows.len() {
        let set = ScoredSet::from_slides(labelled)?;
        match roc_auc(&set) {
            Ok(auc) => log::info!("{} patient AUC: {auc:.4} over {} patients", model.choice(), set.len()),
            Err(e) => log::warn!("no AUC: {e}"),
        }
    }
    Ok(())
}
