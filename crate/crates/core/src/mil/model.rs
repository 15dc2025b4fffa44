use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TileBag;
use crate::error::{Error, Result};
use crate::math::{
    he_init, masked_softmax, sigmoid, Objective,
    DenseMatrix, Param, ParamSet,
};
use crate::seed::derive_seed;

pub const DEFAULT_ATTENTION_WIDTH: usize = 128;

/// Which bag representation feeds the linear head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Attention-weighted mean only.
    DeepMil,
    /// Attention-weighted mean concatenated with attention-weighted variance.
    VarMil,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::DeepMil => "deepmil",
            ModelKind::VarMil => "varmil",
        }
    }

    /// Width of the pooled representation for feature dimension `dim`.
    pub fn representation_dim(self, dim: usize) -> usize {
        match self {
            ModelKind::DeepMil => dim,
            ModelKind::VarMil => 2 * dim,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deepmil" => Ok(ModelKind::DeepMil),
            "varmil" => Ok(ModelKind::VarMil),
            other => Err(Error::invalid(format!("unknown MIL model kind `{other}`"))),
        }
    }
}

/// Two-layer attention MLP: `W2 tanh(W1 z + b1) + b2` per tile.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// ν × H
    pub w1: Param,
    /// ν × 1
    pub b1: Param,
    /// 1 × ν
    pub w2: Param,
    /// 1 × 1
    pub b2: Param,
}

impl AttentionParams {
    /// He-initialised weights, zero biases.
    pub fn init(dim: usize, nu: usize, seed: u64) -> Self {
        Self {
            w1: Param::new("attention.w1", he_init(nu, dim, derive_seed(seed, 1))),
            b1: Param::zeros("attention.b1", nu, 1),
            w2: Param::new("attention.w2", he_init(1, nu, derive_seed(seed, 2))),
            b2: Param::zeros("attention.b2", 1, 1),
        }
    }

    pub fn zeros(dim: usize, nu: usize) -> Self {
        Self {
            w1: Param::zeros("attention.w1", nu, dim),
            b1: Param::zeros("attention.b1", nu, 1),
            w2: Param::zeros("attention.w2", 1, nu),
            b2: Param::zeros("attention.b2", 1, 1),
        }
    }

    pub fn nu(&self) -> usize {
        self.w1.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.w1.value.cols()
    }

    fn check(&self) -> Result<()> {
        let nu = self.nu();
        let ok = self.b1.shape() == (nu, 1) && self.w2.shape() == (1, nu) && self.b2.shape() == (1, 1);
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "AttentionParams",
                format!("b1 {nu}x1, w2 1x{nu}, b2 1x1"),
                format!(
                    "b1 {:?}, w2 {:?}, b2 {:?}",
                    self.b1.shape(),
                    self.w2.shape(),
                    self.b2.shape()
                ),
            ))
        }
    }
}

/// Linear two-logit classifier over the pooled representation.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub kind: ModelKind,
    /// 2 × H (DeepMIL) or 2 × 2H (VarMIL)
    pub w: Param,
    /// 2 × 1
    pub b: Param,
}

impl HeadParams {
    pub fn init(kind: ModelKind, dim: usize, seed: u64) -> Self {
        let rep = kind.representation_dim(dim);
        Self {
            kind,
            w: Param::new("head.w", he_init(2, rep, derive_seed(seed, 3))),
            b: Param::zeros("head.b", 2, 1),
        }
    }

    pub fn zeros(kind: ModelKind, dim: usize) -> Self {
        Self {
            kind,
            w: Param::zeros("head.w", 2, kind.representation_dim(dim)),
            b: Param::zeros("head.b", 2, 1),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        let rep = self.kind.representation_dim(dim);
        if self.w.shape() != (2, rep) || self.b.shape() != (2, 1) {
            return Err(Error::shape(
                "HeadParams",
                format!("w 2x{rep}, b 2x1 for {}", self.kind),
                format!("w {:?}, b {:?}", self.w.shape(), self.b.shape()),
            ));
        }
        Ok(())
    }
}

/// Intermediates of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `tanh(W1 Z + b1)` over real tiles, ν × I_m.
    pub hidden: DenseMatrix,
    /// Attention logits, padded length (zero on padding).
    pub attention_logits: Vec<f64>,
    /// Attention weights, padded length (exactly zero on padding).
    pub attention: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Option<Vec<f64>>,
    /// Input to the head: `mean` or `[mean; variance]`.
    pub representation: Vec<f64>,
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

fn attention_pass(bag: &TileBag, att: &AttentionParams) -> Result<(DenseMatrix, Vec<f64>, Vec<f64>)> {
    att.check()?;
    if att.dim() != bag.dim() {
        return Err(Error::shape("attention_weights", att.dim(), bag.dim()));
    }
    let nu = att.nu();
    let n = bag.real_tile_count();
    let w1 = &att.w1.value;
    let mut hidden = DenseMatrix::zeros(nu, n);
    for k in 0..nu {
        let row = hidden.row_mut(k);
        row.fill(att.b1.value.get(k, 0));
        for h in 0..bag.dim() {
            let w = w1.get(k, h);
            for (u, z) in row.iter_mut().zip(bag.feature_row(h)) {
                *u += w * z;
            }
        }
        row.iter_mut().for_each(|u| *u = u.tanh());
    }
    let mut logits = vec![0.0; bag.padded_len()];
    let b2 = att.b2.value.get(0, 0);
    logits[..n].fill(b2);
    for k in 0..nu {
        let w = att.w2.value.get(0, k);
        for (s, t) in logits[..n].iter_mut().zip(hidden.row(k)) {
            *s += w * t;
        }
    }
    let weights = masked_softmax(&logits, bag.mask())?;
    Ok((hidden, logits, weights))
}

/// Attention weights over the bag's tiles; zero on padding, summing to one
/// over the real tiles.
pub fn attention_weights(bag: &TileBag, att: &AttentionParams) -> Result<Vec<f64>> {
    attention_pass(bag, att).map(|(_, _, a)| a)
}

/// `Σ_i a_i Z_i` over the real tiles.
pub fn weighted_mean(bag: &TileBag, attention: &[f64]) -> Vec<f64> {
    let n = bag.real_tile_count();
    (0..bag.dim())
        .map(|h| {
            bag.feature_row(h)
                .iter()
                .zip(&attention[..n])
                .map(|(z, a)| a * z)
                .sum()
        })
        .collect()
}

/// `I/(I-1) Σ_i a_i (Z_i - Z̄)²` elementwise, with `I` the number of real
/// tiles. A single-tile bag has no spread and yields the zero vector.
pub fn weighted_variance(bag: &TileBag, attention: &[f64], mean: &[f64]) -> Vec<f64> {
    let n = bag.real_tile_count();
    if n < 2 {
        log::warn!(
            "bag {} has a single tile; weighted variance defined as zero",
            bag.wsi_id
        );
        return vec![0.0; bag.dim()];
    }
    let bessel = n as f64 / (n as f64 - 1.0);
    (0..bag.dim())
        .map(|h| {
            let m = mean[h];
            bessel
                * bag
                    .feature_row(h)
                    .iter()
                    .zip(&attention[..n])
                    .map(|(z, a)| a * (z - m) * (z - m))
                    .sum::<f64>()
        })
        .collect()
}

/// Full forward pass. Class probabilities are the elementwise sigmoid of the
/// two head logits; they are not renormalised, and `probs[1]` is the
/// positive-class score.
pub fn forward(
    bag: &TileBag,
    att: &AttentionParams,
    head: &HeadParams,
) -> Result<([f64; 2], ForwardTrace)> {
    head.check(bag.dim())?;
    let (hidden, attention_logits, attention) = attention_pass(bag, att)?;
    let mean = weighted_mean(bag, &attention);
    let (variance, representation) = match head.kind {
        ModelKind::DeepMil => (None, mean.clone()),
        ModelKind::VarMil => {
            let var = weighted_variance(bag, &attention, &mean);
            let mut rep = mean.clone();
            rep.extend_from_slice(&var);
            (Some(var), rep)
        }
    };
    let lin = head.w.value.matvec(&representation);
    let logits = [
        lin[0] + head.b.value.get(0, 0),
        lin[1] + head.b.value.get(1, 0),
    ];
    let probs = [sigmoid(logits[0]), sigmoid(logits[1])];
    Ok((
        probs,
        ForwardTrace {
            hidden,
            attention_logits,
            attention,
            mean,
            variance,
            representation,
            logits,
            probs,
        },
    ))
}

/// Accumulates the gradient of `objective` into the `grad`
/// buffers of `att` and `head`. `trace` must come from [`forward`] on the
/// same bag and parameters.
pub fn backward(
    trace: &ForwardTrace,
    bag: &TileBag,
    att: &mut AttentionParams,
    head: &mut HeadParams,
    label: usize,
    class_weights: [f64; 2],
    objective: Objective,
) -> Result<()> {
    let g_logits = objective.logit_grad(trace.probs, label, class_weights)?;
    let dim = bag.dim();
    let n = bag.real_tile_count();

    // linear head
    head.w.grad.add_outer(1.0, &g_logits, &trace.representation);
    for (c, g) in g_logits.iter().enumerate() {
        let cur = head.b.grad.get(c, 0);
        head.b.grad.set(c, 0, cur + g);
    }
    let g_rep = head.w.value.matvec_t(&g_logits);
    let g_mean = &g_rep[..dim];

    // pooled representation -> attention weights
    let mean = &trace.mean;
    let a = &trace.attention[..n];
    let mut g_attention = vec![0.0; n];
    let mut g_zbar = g_mean.to_vec();
    if head.kind == ModelKind::VarMil && n >= 2 {
        let g_var = &g_rep[dim..];
        let bessel = n as f64 / (n as f64 - 1.0);
        for h in 0..dim {
            let row = bag.feature_row(h);
            let m = mean[h];
            // d var_h / d mean_h = -2c Σ a_i (z_hi - m_h); zero when Σ a = 1
            let centred: f64 = row.iter().zip(a).map(|(z, ai)| ai * (z - m)).sum();
            g_zbar[h] += g_var[h] * (-2.0 * bessel * centred);
            let s = bessel * g_var[h];
            for (ga, z) in g_attention.iter_mut().zip(row) {
                *ga += s * (z - m) * (z - m);
            }
        }
    }
    for h in 0..dim {
        let g = g_zbar[h];
        for (ga, z) in g_attention.iter_mut().zip(bag.feature_row(h)) {
            *ga += g * z;
        }
    }

    // softmax
    let avg: f64 = a.iter().zip(&g_attention).map(|(ai, gi)| ai * gi).sum();
    let g_scores: Vec<f64> = a
        .iter()
        .zip(&g_attention)
        .map(|(ai, gi)| ai * (gi - avg))
        .collect();

    // attention MLP
    let b2g = att.b2.grad.get(0, 0);
    att.b2.grad.set(0, 0, b2g + g_scores.iter().sum::<f64>());
    let mut g_pre = vec![0.0; n];
    for k in 0..att.nu() {
        let t_row = trace.hidden.row(k);
        let w2k = att.w2.value.get(0, k);
        let gw2: f64 = t_row.iter().zip(&g_scores).map(|(t, g)| t * g).sum();
        let cur = att.w2.grad.get(0, k);
        att.w2.grad.set(0, k, cur + gw2);

        for ((gp, t), gs) in g_pre.iter_mut().zip(t_row).zip(&g_scores) {
            *gp = w2k * gs * (1.0 - t * t);
        }
        let cur = att.b1.grad.get(k, 0);
        att.b1.grad.set(k, 0, cur + g_pre.iter().sum::<f64>());
        let w1_row = att.w1.grad.row_mut(k);
        for (h, gw) in w1_row.iter_mut().enumerate() {
            *gw += g_pre
                .iter()
                .zip(bag.feature_row(h))
                .map(|(g, z)| g * z)
                .sum::<f64>();
        }
    }
    Ok(())
}

/// Attention module plus head, trained jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct MilModel {
    pub attention: AttentionParams,
    pub head: HeadParams,
}

impl MilModel {
    pub fn init(kind: ModelKind, dim: usize, nu: usize, seed: u64) -> Self {
        Self {
            attention: AttentionParams::init(dim, nu, seed),
            head: HeadParams::init(kind, dim, seed),
        }
    }

    pub fn zeros(kind: ModelKind, dim: usize, nu: usize) -> Self {
        Self {
            attention: AttentionParams::zeros(dim, nu),
            head: HeadParams::zeros(kind, dim),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.head.kind
    }

    pub fn dim(&self) -> usize {
        self.attention.dim()
    }

    pub fn nu(&self) -> usize {
        self.attention.nu()
    }

    pub fn forward(&self, bag: &TileBag) -> Result<([f64; 2], ForwardTrace)> {
        forward(bag, &self.attention, &self.head)
    }

    /// Positive-class score `p_2`.
    pub fn score(&self, bag: &TileBag) -> Result<f64> {
        Ok(self.forward(bag)?.0[1])
    }

    pub fn loss(&self, bag: &TileBag, label: usize, class_weights: [f64; 2], objective: Objective) -> Result<f64> {
        let (probs, _) = self.forward(bag)?;
        objective.loss(probs, label, class_weights)
    }

    /// Forward + backward; gradients are added to the `grad` buffers and the
    /// loss is returned.
    pub fn accumulate_gradients(
        &mut self,
        bag: &TileBag,
        label: usize,
        class_weights: [f64; 2],
        objective: Objective,
    ) -> Result<f64> {
        let (probs, trace) = self.forward(bag)?;
        let loss = objective.loss(probs, label, class_weights)?;
        backward(
            &trace,
            bag,
            &mut self.attention,
            &mut self.head,
            label,
            class_weights,
            objective,
        )?;
        Ok(loss)
    }
}

impl ParamSet for MilModel {
    fn params(&self) -> Vec<&Param> {
        vec![
            &self.attention.w1,
            &self.attention.b1,
            &self.attention.w2,
            &self.attention.b2,
            &self.head.w,
            &self.head.b,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.attention.w1,
            &mut self.attention.b1,
            &mut self.attention.w2,
            &mut self.attention.b2,
            &mut self.head.w,
            &mut self.head.b,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{finite_diff_grad, max_relative_error};
    use crate::mil::pad_bag;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_bag(values: &[f64], pad: usize) -> TileBag {
        let tiles: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        let bag = TileBag::from_tiles("p", "w", &tiles).unwrap();
        pad_bag(&bag, values.len() + pad).unwrap()
    }

    fn random_bag(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> TileBag {
        let tiles: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        TileBag::from_tiles("p", "w", &tiles).unwrap()
    }

    fn random_model(rng: &mut ChaCha8Rng, kind: ModelKind, dim: usize, nu: usize) -> MilModel {
        let mut m = MilModel::zeros(kind, dim, nu);
        for p in m.params_mut() {
            p.value
                .as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        m
    }

    #[test]
    fn two_toy_bags() {
        let bag1 = scalar_bag(&[1.0, 1.0, 1.0, 3.0, 3.0], 1);
        let a1 = [0.17, 0.17, 0.17, 0.245, 0.245, 0.0];
        let m1 = weighted_mean(&bag1, &a1);
        let v1 = weighted_variance(&bag1, &a1, &m1);
        assert!((m1[0] - 1.98).abs() < 1e-9);
        assert!((v1[0] - 1.2495).abs() < 1e-9);
        assert!((v1[0].sqrt() - 1.1178).abs() < 1e-4);

        let bag2 = scalar_bag(&[2.0, 2.0, 2.0, 2.0, 1.0], 1);
        let a2 = [0.22, 0.22, 0.22, 0.22, 0.12, 0.0];
        let m2 = weighted_mean(&bag2, &a2);
        let v2 = weighted_variance(&bag2, &a2, &m2);
        assert!((m2[0] - 1.88).abs() < 1e-9);
        assert!((v2[0] - 0.132).abs() < 1e-9);
        assert!((v2[0].sqrt() - 0.3633).abs() < 1e-4);
    }

    #[test]
    fn uniform_attention_when_w2_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bag = pad_bag(&random_bag(&mut rng, 4, 3), 6).unwrap();
        let mut att = AttentionParams::init(3, 5, 9);
        att.w2.value.fill(0.0);
        let a = attention_weights(&bag, &att).unwrap();
        for &v in &a[..4] {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert_eq!(&a[4..], &[0.0, 0.0]);
    }

    #[test]
    fn attention_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bag = random_bag(&mut rng, 3, 4);
        let m = random_model(&mut rng, ModelKind::DeepMil, 4, 6);
        let att = &m.attention;
        // straight-line evaluation of softmax(W2 tanh(W1 z + b1) + b2)
        let scores: Vec<f64> = (0..3)
            .map(|i| {
                let z = bag.tile(i);
                let mut s = att.b2.value.get(0, 0);
                for k in 0..6 {
                    let mut u = att.b1.value.get(k, 0);
                    for (h, zh) in z.iter().enumerate() {
                        u += att.w1.value.get(k, h) * zh;
                    }
                    s += att.w2.value.get(0, k) * u.tanh();
                }
                s
            })
            .collect();
        let denom: f64 = scores.iter().map(|s| s.exp()).sum();
        let a = attention_weights(&bag, att).unwrap();
        for i in 0..3 {
            assert!((a[i] - scores[i].exp() / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [ModelKind::DeepMil, ModelKind::VarMil] {
            let bag = random_bag(&mut rng, 5, 3);
            let m = random_model(&mut rng, kind, 3, 4);
            let (probs, _) = m.forward(&bag).unwrap();
            let a = attention_weights(&bag, &m.attention).unwrap();
            let mut rep = vec![0.0; 3];
            for i in 0..5 {
                for h in 0..3 {
                    rep[h] += a[i] * bag.features().get(h, i);
                }
            }
            if kind == ModelKind::VarMil {
                let mut var = vec![0.0; 3];
                for i in 0..5 {
                    for h in 0..3 {
                        var[h] += a[i] * (bag.features().get(h, i) - rep[h]).powi(2);
                    }
                }
                rep.extend(var.iter().map(|v| v * 5.0 / 4.0));
            }
            for c in 0..2 {
                let mut l = m.head.b.value.get(c, 0);
                for (j, r) in rep.iter().enumerate() {
                    l += m.head.w.value.get(c, j) * r;
                }
                let p = 1.0 / (1.0 + (-l).exp());
                assert!((probs[c] - p).abs() < 1e-12, "{kind} class {c}");
            }
        }
    }

    #[test]
    fn zero_head_gives_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bag = random_bag(&mut rng, 6, 2);
        let mut m = MilModel::init(ModelKind::VarMil, 2, 8, 0);
        m.head.w.value.fill(0.0);
        assert_eq!(m.forward(&bag).unwrap().0, [0.5, 0.5]);
    }

    #[test]
    fn varmil_with_zero_variance_block_equals_deepmil() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bag = random_bag(&mut rng, 7, 3);
        let deep = random_model(&mut rng, ModelKind::DeepMil, 3, 4);
        let mut var = MilModel::zeros(ModelKind::VarMil, 3, 4);
        var.attention = deep.attention.clone();
        var.head.b.value = deep.head.b.value.clone();
        for c in 0..2 {
            for h in 0..3 {
                var.head.w.value.set(c, h, deep.head.w.value.get(c, h));
            }
        }
        assert_eq!(deep.forward(&bag).unwrap().0, var.forward(&bag).unwrap().0);
    }

    #[test]
    fn identical_tiles_have_zero_variance_and_mean_equal_tile() {
        let tiles = vec![vec![0.3, -1.0]; 4];
        let bag = TileBag::from_tiles("p", "w", &tiles).unwrap();
        let a = [0.1, 0.2, 0.3, 0.4];
        let m = weighted_mean(&bag, &a);
        assert!((m[0] - 0.3).abs() < 1e-15 && (m[1] + 1.0).abs() < 1e-15);
        let v = weighted_variance(&bag, &a, &m);
        assert!(v.iter().all(|x| x.abs() < 1e-30));
    }

    #[test]
    fn single_tile_variance_is_zero() {
        let bag = TileBag::from_tiles("p", "w", &[vec![2.0, 5.0]]).unwrap();
        let v = weighted_variance(&bag, &[1.0], &[2.0, 5.0]);
        assert_eq!(v, vec![0.0, 0.0]);
        let m = MilModel::init(ModelKind::VarMil, 2, 3, 1);
        assert!(m.score(&bag).unwrap().is_finite());
    }

    #[test]
    fn b2_gradient_vanishes_at_zero_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bag = random_bag(&mut rng, 5, 3);
        let mut m = MilModel::zeros(ModelKind::VarMil, 3, 4);
        m.accumulate_gradients(&bag, 1, [1.0, 1.0], Objective::LabelOutput).unwrap();
        assert_eq!(m.attention.b2.grad.get(0, 0), 0.0);
    }

    #[test]
    fn doubling_class_weight_doubles_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bag = random_bag(&mut rng, 5, 3);
        let base = random_model(&mut rng, ModelKind::VarMil, 3, 4);
        let mut m1 = base.clone();
        let mut m2 = base.clone();
        m1.accumulate_gradients(&bag, 1, [1.0, 1.5], Objective::LabelOutput).unwrap();
        m2.accumulate_gradients(&bag, 1, [1.0, 3.0], Objective::LabelOutput).unwrap();
        for (g1, g2) in m1.flat_grads().iter().zip(m2.flat_grads()) {
            assert!((2.0 * g1 - g2).abs() <= 1e-12 * g2.abs().max(1.0));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..40 {
            let kind = if trial % 2 == 0 { ModelKind::DeepMil } else { ModelKind::VarMil };
            let n = rng.random_range(2..=8);
            let dim = rng.random_range(1..=5);
            let nu = rng.random_range(2..=4);
            let label = rng.random_range(0..2);
            let bag = random_bag(&mut rng, n, dim);
            let mut m = random_model(&mut rng, kind, dim, nu);
            let w = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
            let obj = if trial % 4 < 2 { Objective::LabelOutput } else { Objective::OneHotBce };
            m.accumulate_gradients(&bag, label, w, obj).unwrap();
            let analytic = m.flat_grads();
            let mut probe = m.clone();
            let numeric = finite_diff_grad(
                |theta| {
                    probe.set_flat_values(theta);
                    probe.loss(&bag, label, w, obj).unwrap()
                },
                &m.flat_values(),
                1e-5,
            );
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "trial {trial} ({kind}): rel err {err}");
        }
    }

    #[test]
    fn padding_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bag = random_bag(&mut rng, 6, 3);
        let base = random_model(&mut rng, ModelKind::VarMil, 3, 5);
        let mut m0 = base.clone();
        let (p0, t0) = m0.forward(&bag).unwrap();
        m0.accumulate_gradients(&bag, 0, [1.2, 0.8], Objective::LabelOutput).unwrap();
        for target in [6, 7, 20, 550] {
            let padded = pad_bag(&bag, target).unwrap();
            let mut m = base.clone();
            let (p, t) = m.forward(&padded).unwrap();
            assert_eq!(p, p0);
            assert_eq!(t.attention[..6], t0.attention[..]);
            assert!(t.attention[6..].iter().all(|&v| v == 0.0));
            m.accumulate_gradients(&padded, 0, [1.2, 0.8], Objective::LabelOutput).unwrap();
            assert_eq!(m.flat_grads(), m0.flat_grads());
        }
    }

    #[test]
    fn variance_scales_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let bag = random_bag(&mut rng, 6, 2);
        let a = [0.1, 0.3, 0.05, 0.25, 0.2, 0.1];
        let m = weighted_mean(&bag, &a);
        let v = weighted_variance(&bag, &a, &m);
        let scaled = TileBag::new("p", "w", {
            let mut f = bag.features().clone();
            f.scale(3.0);
            f
        })
        .unwrap();
        let ms = weighted_mean(&scaled, &a);
        let vs = weighted_variance(&scaled, &a, &ms);
        for h in 0..2 {
            assert!((vs[h] - 9.0 * v[h]).abs() < 1e-12 * vs[h].max(1.0));
        }
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bag = random_bag(&mut rng, 3, 4);
        let m = MilModel::init(ModelKind::DeepMil, 3, 4, 0);
        assert!(matches!(m.forward(&bag), Err(Error::Shape { .. })));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("VarMIL".parse::<ModelKind>().unwrap(), ModelKind::VarMil);
        assert!("maxpool".parse::<ModelKind>().is_err());
    }
}
