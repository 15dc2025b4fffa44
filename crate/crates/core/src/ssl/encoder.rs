//! Fully connected tile encoder with a projection head, contrastive
//! pre-training and feature extraction into bag files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::augment::{augment_pair, AugmentConfig};
use super::ntxent::{nt_xent_loss, DEFAULT_TEMPERATURE};
use crate::checkpoint::Checkpoint;
use crate::data::{write_bag, Manifest, ManifestRow};
use crate::error::{Error, Result};
use crate::math::{he_init, AdamHyper, Param, ParamSet};
use crate::mil::TileBag;
use crate::preprocess::{read_tile_index, TileIndexRow, TILE_INDEX};
use crate::seed::{derive_seed, rng_for};

/// `z = W2 tanh(W1 x + b1) + b2`, mapping flattened pixels to an
/// H-dimensional feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
}

/// `y = P2 tanh(P1 z + c1) + c2`; only used during pre-training.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub p1: Param,
    pub c1: Param,
    pub p2: Param,
    pub c2: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveModel {
    pub encoder: EncoderParams,
    pub projection: ProjectionHead,
}

/// Pixels scaled to `[-0.5, 0.5]`, RGB interleaved, row-major.
pub fn image_to_input(img: &RgbImage) -> Vec<f64> {
    img.as_raw().iter().map(|&v| f64::from(v) / 255.0 - 0.5).collect()
}

fn tanh_layer(w: &Param, b: &Param, x: &[f64]) -> Vec<f64> {
    let mut h = w.value.matvec(x);
    for (v, bias) in h.iter_mut().zip(b.value.as_slice()) {
        *v = (*v + bias).tanh();
    }
    h
}

fn linear_layer(w: &Param, b: &Param, x: &[f64]) -> Vec<f64> {
    let mut y = w.value.matvec(x);
    for (v, bias) in y.iter_mut().zip(b.value.as_slice()) {
        *v += bias;
    }
    y
}

/// Backward through `out = tanh(w x + b)` given `d_out`; returns `d_x`.
fn tanh_layer_back(w: &mut Param, b: &mut Param, x: &[f64], out: &[f64], d_out: &[f64]) -> Vec<f64> {
    let d_pre: Vec<f64> = d_out.iter().zip(out).map(|(g, o)| g * (1.0 - o * o)).collect();
    linear_layer_back(w, b, x, &d_pre)
}

fn linear_layer_back(w: &mut Param, b: &mut Param, x: &[f64], d_out: &[f64]) -> Vec<f64> {
    for (gb, g) in b.grad.as_mut_slice().iter_mut().zip(d_out) {
        *gb += g;
    }
    w.grad.add_outer(1.0, d_out, x);
    w.value.matvec_t(d_out)
}

impl EncoderParams {
    pub fn init(input_dim: usize, hidden: usize, feature_dim: usize, seed: u64) -> Self {
        Self {
            w1: Param::new("encoder.w1", he_init(hidden, input_dim, derive_seed(seed, 21))),
            b1: Param::zeros("encoder.b1", hidden, 1),
            w2: Param::new("encoder.w2", he_init(feature_dim, hidden, derive_seed(seed, 22))),
            b2: Param::zeros("encoder.b2", feature_dim, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.value.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.value.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.w2.value.rows()
    }

    /// Side length of the square RGB input the encoder expects.
    pub fn input_side(&self) -> u32 {
        ((self.input_dim() / 3) as f64).sqrt().round() as u32
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("encoder input", self.input_dim(), x.len()));
        }
        Ok(linear_layer(&self.w2, &self.b2, &tanh_layer(&self.w1, &self.b1, x)))
    }

    /// Encodes a tile, resizing it to the input side first if needed.
    pub fn encode_image(&self, img: &RgbImage) -> Result<Vec<f64>> {
        let side = self.input_side();
        if img.dimensions() == (side, side) {
            self.encode(&image_to_input(img))
        } else {
            let small = imageops::resize(img, side, side, FilterType::Triangle);
            self.encode(&image_to_input(&small))
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params("enc", self.hidden(), self.feature_dim(), self.params())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(&["enc"])?;
        let input_dim = ckpt
            .matrices
            .first()
            .ok_or_else(|| Error::invalid("encoder checkpoint without matrices"))?
            .cols();
        let mut enc = Self::init(input_dim, ckpt.nu as usize, ckpt.dim as usize, 0);
        ckpt.load_into(enc.params_mut())?;
        Ok(enc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

impl ParamSet for EncoderParams {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

impl ProjectionHead {
    pub fn init(feature_dim: usize, hidden: usize, out_dim: usize, seed: u64) -> Self {
        Self {
            p1: Param::new("projection.p1", he_init(hidden, feature_dim, derive_seed(seed, 23))),
            c1: Param::zeros("projection.c1", hidden, 1),
            p2: Param::new("projection.p2", he_init(out_dim, hidden, derive_seed(seed, 24))),
            c2: Param::zeros("projection.c2", out_dim, 1),
        }
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ContrastiveTrace {
    pub hidden: Vec<f64>,
    pub features: Vec<f64>,
    pub proj_hidden: Vec<f64>,
    pub projection: Vec<f64>,
}

impl ContrastiveModel {
    pub fn init(cfg: &PretrainConfig) -> Self {
        let side = cfg.augment.output_size as usize;
        Self {
            encoder: EncoderParams::init(3 * side * side, cfg.hidden, cfg.feature_dim, cfg.seed),
            projection: ProjectionHead::init(cfg.feature_dim, cfg.proj_hidden, cfg.proj_dim, cfg.seed),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<ContrastiveTrace> {
        let e = &self.encoder;
        if x.len() != e.input_dim() {
            return Err(Error::shape("encoder input", e.input_dim(), x.len()));
        }
        let hidden = tanh_layer(&e.w1, &e.b1, x);
        let features = linear_layer(&e.w2, &e.b2, &hidden);
        let p = &self.projection;
        let proj_hidden = tanh_layer(&p.p1, &p.c1, &features);
        let projection = linear_layer(&p.p2, &p.c2, &proj_hidden);
        Ok(ContrastiveTrace {
            hidden,
            features,
            proj_hidden,
            projection,
        })
    }

    /// Accumulates gradients given `d_projection` for input `x`.
    pub fn backward(&mut self, x: &[f64], trace: &ContrastiveTrace, d_projection: &[f64]) {
        let p = &mut self.projection;
        let d_ph = linear_layer_back(&mut p.p2, &mut p.c2, &trace.proj_hidden, d_projection);
        let d_feat = tanh_layer_back(&mut p.p1, &mut p.c1, &trace.features, &trace.proj_hidden, &d_ph);
        let e = &mut self.encoder;
        let d_hidden = linear_layer_back(&mut e.w2, &mut e.b2, &trace.hidden, &d_feat);
        tanh_layer_back(&mut e.w1, &mut e.b1, x, &trace.hidden, &d_hidden);
    }

    /// NT-Xent of a batch of inputs laid out as `[views_a, views_b]`;
    /// gradients are accumulated into the parameters.
    pub fn batch_loss(&mut self, inputs: &[Vec<f64>], tau: f64) -> Result<f64> {
        let traces = inputs.iter().map(|x| self.forward(x)).collect::<Result<Vec<_>>>()?;
        let projections: Vec<Vec<f64>> = traces.iter().map(|t| t.projection.clone()).collect();
        let (loss, grads) = nt_xent_loss(&projections, tau)?;
        for ((x, t), g) in inputs.iter().zip(&traces).zip(&grads) {
            self.backward(x, t, g);
        }
        Ok(loss)
    }
}

impl ParamSet for ContrastiveModel {
    fn params(&self) -> Vec<&Param> {
        let p = &self.projection;
        let mut v = self.encoder.params();
        v.extend([&p.p1, &p.c1, &p.p2, &p.c2]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let p = &mut self.projection;
        let mut v = self.encoder.params_mut();
        v.extend([&mut p.p1, &mut p.c1, &mut p.p2, &mut p.c2]);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub augment: AugmentConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub hyper: AdamHyper,
    pub seed: u64,
    /// Encoder hidden width.
    pub hidden: usize,
    /// Encoder output dimension H.
    pub feature_dim: usize,
    pub proj_hidden: usize,
    pub proj_dim: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            augment: AugmentConfig::default(),
            epochs: 10,
            batch_size: 32,
            temperature: DEFAULT_TEMPERATURE,
            hyper: AdamHyper::new(3e-4, 0.0),
            seed: 0,
            hidden: 128,
            feature_dim: 32,
            proj_hidden: 64,
            proj_dim: 32,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.hyper.validate()?;
        if self.batch_size < 2 {
            return Err(Error::invalid("contrastive batches need at least two tiles"));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::invalid("temperature must be positive"));
        }
        if [self.hidden, self.feature_dim, self.proj_hidden, self.proj_dim].contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }
}

const SHUFFLE_STREAM: u64 = 0x55_1F;
const AUGMENT_STREAM: u64 = 0xA06;

/// Minimises NT-Xent over augmented pairs with Adam. Returns the trained
/// model and the loss of every step. A trailing batch with a single tile is
/// skipped.
pub fn pretrain(
    tiles: &[RgbImage],
    mut model: ContrastiveModel,
    cfg: &PretrainConfig,
) -> Result<(ContrastiveModel, Vec<f64>)> {
    cfg.validate()?;
    if tiles.len() < 2 {
        return Err(Error::invalid("pre-training needs at least two tiles"));
    }
    let mut order: Vec<usize> = (0..tiles.len()).collect();
    let shuffle_seed = derive_seed(cfg.seed, SHUFFLE_STREAM);
    let augment_seed = derive_seed(cfg.seed, AUGMENT_STREAM);
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(shuffle_seed, epoch as u64));
        for batch in order.chunks(cfg.batch_size).filter(|b| b.len() >= 2) {
            let mut rng = rng_for(augment_seed, losses.len() as u64);
            let mut a = Vec::with_capacity(batch.len());
            let mut b = Vec::with_capacity(batch.len());
            for &t in batch {
                let (va, vb) = augment_pair(&tiles[t], &cfg.augment, &mut rng)?;
                a.push(image_to_input(&va));
                b.push(image_to_input(&vb));
            }
            a.extend(b);
            model.zero_grad();
            let loss = model.batch_loss(&a, cfg.temperature)?;
            model.adam_step_all(&cfg.hyper)?;
            log::debug!("pretrain step {} loss {loss:.5}", losses.len());
            losses.push(loss);
        }
    }
    Ok((model, losses))
}

/// Writes `step loss` lines.
pub fn write_loss_curve<W: Write>(losses: &[f64], mut out: W) -> Result<()> {
    let mut s = String::with_capacity(losses.len() * 16);
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{i} {l:.10}\n"));
    }
    out.write_all(s.as_bytes()).map_err(|e| Error::io("<loss curve>", e))
}

fn tissue_tiles(tiles_dir: &Path) -> Result<BTreeMap<String, Vec<TileIndexRow>>> {
    let mut by_slide: BTreeMap<String, Vec<TileIndexRow>> = BTreeMap::new();
    for row in read_tile_index(&tiles_dir.join(TILE_INDEX))? {
        if !row.background {
            by_slide.entry(row.wsi_id.clone()).or_default().push(row);
        }
    }
    Ok(by_slide)
}

fn load_tile(tiles_dir: &Path, row: &TileIndexRow) -> Result<RgbImage> {
    Ok(image::open(tiles_dir.join(&row.wsi_id).join(row.file_name()))?.to_rgb8())
}

/// All tissue tiles listed in `tiles_dir/index.csv`, slide by slide.
pub fn load_tissue_tiles(tiles_dir: &Path) -> Result<Vec<RgbImage>> {
    let mut out = Vec::new();
    for rows in tissue_tiles(tiles_dir)?.values() {
        for row in rows {
            out.push(load_tile(tiles_dir, row)?);
        }
    }
    Ok(out)
}

/// Optional per-slide metadata for [`extract_features`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideInfo {
    pub wsi_id: String,
    pub patient_id: String,
    pub raw_score: Option<i64>,
    pub label: Option<u8>,
}

pub fn read_slide_info(path: &Path) -> Result<BTreeMap<String, SlideInfo>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for rec in csv::Reader::from_reader(file).deserialize() {
        let info: SlideInfo = rec?;
        out.insert(info.wsi_id.clone(), info);
    }
    Ok(out)
}

/// Encodes every tissue tile of every slide in `tiles_dir` and writes
/// `out_dir/bags/<wsi_id>.bag` plus `out_dir/manifest.csv`. Slides absent
/// from `slides` become their own patient without label.
pub fn extract_features(
    encoder: &EncoderParams,
    tiles_dir: &Path,
    out_dir: &Path,
    slides: &BTreeMap<String, SlideInfo>,
) -> Result<Manifest> {
    let bag_dir = out_dir.join("bags");
    fs::create_dir_all(&bag_dir).map_err(|e| Error::io(&bag_dir, e))?;
    let mut rows = Vec::new();
    for (wsi_id, tiles) in tissue_tiles(tiles_dir)? {
        let features = tiles
            .iter()
            .map(|row| encoder.encode_image(&load_tile(tiles_dir, row)?))
            .collect::<Result<Vec<_>>>()?;
        let info = slides.get(&wsi_id);
        let patient_id = info.map_or_else(|| wsi_id.clone(), |i| i.patient_id.clone());
        let bag = TileBag::from_tiles(patient_id.clone(), wsi_id.clone(), &features)?;
        let rel = format!("bags/{wsi_id}.bag");
        write_bag(&bag, &out_dir.join(&rel))?;
        rows.push(ManifestRow {
            patient_id,
            wsi_id,
            bag_path: rel,
            raw_score: info.and_then(|i| i.raw_score),
            label: info.and_then(|i| i.label),
        });
    }
    if rows.is_empty() {
        return Err(Error::invalid(format!("no tissue tiles under {}", tiles_dir.display())));
    }
    let manifest = Manifest::new(rows, out_dir)?;
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Cosine similarity of two vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
