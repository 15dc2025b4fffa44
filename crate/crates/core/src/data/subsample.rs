use rand::seq::index;

use crate::error::{Error, Result};
use crate::mil::TileBag;
use crate::seed::{hash_str, rng_for};

/// Uniform random subset of `n` tiles for bags with more than `n` tiles.
///
/// The subset is a pure function of `(seed, wsi_id)`, so a slide keeps the
/// same tiles for the whole run. Selected tiles keep their original order.
pub fn subsample_bag(bag: &TileBag, n: usize, seed: u64) -> Result<TileBag> {
    if n == 0 {
        return Err(Error::invalid("subsample size must be at least 1"));
    }
    let total = bag.real_tile_count();
    if total <= n {
        return Ok(bag.clone());
    }
    let mut rng = rng_for(seed, hash_str(&bag.wsi_id));
    let mut picked = index::sample(&mut rng, total, n).into_vec();
    picked.sort_unstable();
    bag.select_tiles(&picked)
}
