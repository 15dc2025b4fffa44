use crate::error::{Error, Result};
use crate::math::DenseMatrix;

/// One slide's tile features, stored `H × I` with tiles as columns.
///
/// The first `real_tile_count` columns are real tiles; any further columns
/// are zero padding and are masked out of every computation.
#[derive(Debug, Clone, PartialEq)]
pub struct TileBag {
    pub patient_id: String,
    pub wsi_id: String,
    features: DenseMatrix,
    real_tile_count: usize,
    mask: Vec<bool>,
}

impl TileBag {
    /// Builds an unpadded bag from an `H × I` feature matrix.
    pub fn new(
        patient_id: impl Into<String>,
        wsi_id: impl Into<String>,
        features: DenseMatrix,
    ) -> Result<Self> {
        let tiles = features.cols();
        if tiles == 0 {
            return Err(Error::EmptyBag);
        }
        if features.rows() == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        Ok(Self {
            patient_id: patient_id.into(),
            wsi_id: wsi_id.into(),
            features,
            real_tile_count: tiles,
            mask: vec![true; tiles],
        })
    }

    /// Builds a bag from tile-major rows (one feature vector per tile).
    pub fn from_tiles(
        patient_id: impl Into<String>,
        wsi_id: impl Into<String>,
        tiles: &[Vec<f64>],
    ) -> Result<Self> {
        if tiles.is_empty() {
            return Err(Error::EmptyBag);
        }
        let tile_major = DenseMatrix::from_rows(tiles)?;
        Self::new(patient_id, wsi_id, tile_major.transpose())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.features.rows()
    }

    #[inline]
    pub fn padded_len(&self) -> usize {
        self.features.cols()
    }

    #[inline]
    pub fn real_tile_count(&self) -> usize {
        self.real_tile_count
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    /// Feature row `h` restricted to the real tiles.
    #[inline]
    pub fn feature_row(&self, h: usize) -> &[f64] {
        &self.features.row(h)[..self.real_tile_count]
    }

    /// Feature vector of tile `i`.
    pub fn tile(&self, i: usize) -> Vec<f64> {
        self.features.col(i)
    }

    /// Real tiles as tile-major rows.
    pub fn tile_rows(&self) -> Vec<Vec<f64>> {
        (0..self.real_tile_count).map(|i| self.tile(i)).collect()
    }

    /// A new bag holding only the given real tiles, in the given order.
    pub fn select_tiles(&self, indices: &[usize]) -> Result<TileBag> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.real_tile_count) {
            return Err(Error::invalid(format!(
                "tile index {bad} out of range for {} real tiles",
                self.real_tile_count
            )));
        }
        let h = self.dim();
        let mut features = DenseMatrix::zeros(h, indices.len());
        for r in 0..h {
            let src = self.features.row(r);
            for (c, &i) in indices.iter().enumerate() {
                features.set(r, c, src[i]);
            }
        }
        TileBag::new(self.patient_id.clone(), self.wsi_id.clone(), features)
    }

    /// Drops any padding.
    pub fn unpadded(&self) -> TileBag {
        let all: Vec<usize> = (0..self.real_tile_count).collect();
        self.select_tiles(&all).expect("indices in range")
    }
}

/// Appends zero columns up to `target` tiles; the new columns are masked.
pub fn pad_bag(bag: &TileBag, target: usize) -> Result<TileBag> {
    let real = bag.real_tile_count();
    if target < real {
        return Err(Error::invalid(format!(
            "pad target {target} is smaller than the {real} real tiles of {}",
            bag.wsi_id
        )));
    }
    let h = bag.dim();
    let mut features = DenseMatrix::zeros(h, target);
    for r in 0..h {
        features.row_mut(r)[..real].copy_from_slice(bag.feature_row(r));
    }
    let mut mask = vec![false; target];
    mask[..real].iter_mut().for_each(|m| *m = true);
    Ok(TileBag {
        patient_id: bag.patient_id.clone(),
        wsi_id: bag.wsi_id.clone(),
        features,
        real_tile_count: real,
        mask,
    })
}
