//! Grid tiling of RGB rasters and the background-tile filter.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type RasterImage = RgbImage;

/// How the brightness and gradient tests combine per pixel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleMode {
    /// Background-like iff bright OR flat.
    #[default]
    RobustOr,
    /// Background-like iff bright AND above the gradient threshold.
    LiteralAnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TilingConfig {
    pub tile_size: u32,
    pub background_intensity_threshold: u8,
    pub sobel_threshold: f64,
    pub background_fraction: f64,
    pub rule_mode: RuleMode,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            tile_size: 224,
            background_intensity_threshold: 240,
            sobel_threshold: 15.0,
            background_fraction: 0.5,
            rule_mode: RuleMode::RobustOr,
        }
    }
}

impl TilingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0
            || !(0.0..=255.0).contains(&self.sobel_threshold)
            || !(0.0..=1.0).contains(&self.background_fraction)
        {
            return Err(Error::invalid(format!("invalid tiling config {self:?}")));
        }
        Ok(())
    }
}

/// A square crop with its pixel origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub row: u32,
    pub col: u32,
    pub image: RasterImage,
}

/// Non-overlapping `tile_size` squares in row-major order; partial tiles at
/// the right and bottom edges are dropped.
pub fn grid_tiles(image: &RasterImage, cfg: &TilingConfig) -> Result<Vec<Tile>> {
    cfg.validate()?;
    let s = cfg.tile_size;
    let (w, h) = image.dimensions();
    if w < s || h < s {
        return Err(Error::invalid(format!("{w}x{h} image is smaller than one {s}px tile")));
    }
    let mut tiles = Vec::with_capacity(((w / s) * (h / s)) as usize);
    for ty in 0..h / s {
        for tx in 0..w / s {
            let (row, col) = (ty * s, tx * s);
            let image = image::imageops::crop_imm(image, col, row, s, s).to_image();
            tiles.push(Tile { row, col, image });
        }
    }
    Ok(tiles)
}

/// Integer-rounded Rec.601 luminance, row-major.
pub fn grayscale(tile: &RasterImage) -> Vec<u8> {
    tile.pixels()
        .map(|p| {
            let [r, g, b] = p.0.map(u32::from);
            ((299 * r + 587 * g + 114 * b + 500) / 1000) as u8
        })
        .collect()
}

/// Sobel gradient magnitude with replicated borders, row-major.
pub fn sobel_magnitude(gray: &[u8], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(gray.len(), width * height, "gray buffer size");
    let at = |x: isize, y: isize| -> f64 {
        let x = x.clamp(0, width as isize - 1) as usize;
        let y = y.clamp(0, height as isize - 1) as usize;
        f64::from(gray[y * width + x])
    };
    let mut out = Vec::with_capacity(gray.len());
    for y in 0..height as isize {
        for x in 0..width as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Fraction of pixels that look like background under `cfg.rule_mode`.
pub fn background_like_fraction(tile: &RasterImage, cfg: &TilingConfig) -> Result<f64> {
    let (w, h) = tile.dimensions();
    if w != cfg.tile_size || h != cfg.tile_size {
        return Err(Error::shape(
            "tile",
            format!("{0}x{0}", cfg.tile_size),
            format!("{w}x{h}"),
        ));
    }
    let gray = grayscale(tile);
    let grad = sobel_magnitude(&gray, w as usize, h as usize);
    let bright_cut = cfg.background_intensity_threshold;
    let count = gray
        .iter()
        .zip(&grad)
        .filter(|(&g, &s)| {
            let bright = g > bright_cut;
            match cfg.rule_mode {
                RuleMode::RobustOr => bright || s < cfg.sobel_threshold,
                RuleMode::LiteralAnd => bright && s > cfg.sobel_threshold,
            }
        })
        .count();
    Ok(count as f64 / gray.len() as f64)
}

/// A tile is background when more than `background_fraction` of its pixels
/// look like background.
pub fn is_background(tile: &RasterImage, cfg: &TilingConfig) -> Result<bool> {
    Ok(background_like_fraction(tile, cfg)? > cfg.background_fraction)
}

/// One line of a tile index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileIndexRow {
    pub wsi_id: String,
    pub row: u32,
    pub col: u32,
    pub background: bool,
}

impl TileIndexRow {
    /// File name of the tile PNG inside its slide directory.
    pub fn file_name(&self) -> String {
        format!("{}_{}.png", self.row, self.col)
    }
}

pub const TILE_INDEX: &str = "index.csv";

pub fn read_tile_index(path: &Path) -> Result<Vec<TileIndexRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Tiles every PNG in `input_dir`. Tissue tiles are written to
/// `out_dir/<wsi_id>/<row>_<col>.png` (the slide id is the file stem) and
/// every tile, background or not, is listed in `out_dir/index.csv`.
pub fn preprocess_dir(input_dir: &Path, out_dir: &Path, cfg: &TilingConfig) -> Result<Vec<TileIndexRow>> {
    cfg.validate()?;
    let images = list_pngs(input_dir)?;
    if images.is_empty() {
        return Err(Error::invalid(format!("no PNG images in {}", input_dir.display())));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut index = Vec::new();
    for path in images {
        let wsi_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::format(&path, "file name is not valid UTF-8"))?
            .to_string();
        let image = image::open(&path)?.to_rgb8();
        let slide_dir = out_dir.join(&wsi_id);
        fs::create_dir_all(&slide_dir).map_err(|e| Error::io(&slide_dir, e))?;
        let mut kept = 0;
        let tiles = grid_tiles(&image, cfg)?;
        for tile in &tiles {
            let row = TileIndexRow {
                wsi_id: wsi_id.clone(),
                row: tile.row,
                col: tile.col,
                background: is_background(&tile.image, cfg)?,
            };
            if !row.background {
                tile.image.save(slide_dir.join(row.file_name()))?;
                kept += 1;
            }
            index.push(row);
        }
        log::info!("{wsi_id}: {kept} of {} tiles kept", tiles.len());
    }
    let index_path = out_dir.join(TILE_INDEX);
    let mut w = csv::Writer::from_path(&index_path)?;
    for row in &index {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&index_path, e))?;
    Ok(index)
}
