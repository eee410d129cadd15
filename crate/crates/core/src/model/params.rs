use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{Float, Mat};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    /// Rows of the node-ID table (all node types, global index).
    pub num_nodes: usize,
    pub num_types: usize,
    pub num_slots: usize,
    /// Longest sequence the precursor-position table can address.
    pub max_positions: usize,
    pub num_metapaths: usize,
    /// Layer normalization after each residual; disabled only in tests.
    pub layer_norm: bool,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model.d = {} must be a positive multiple of model.heads = {}",
                self.d, self.heads
            )));
        }
        if self.d_ff == 0 || self.num_nodes == 0 || self.num_types == 0 || self.num_slots == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.max_positions < 2 {
            return Err(Error::Config("max_positions must be at least 2".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    /// Query projections of all heads side by side: columns
    /// `[h*d/heads, (h+1)*d/heads)` belong to head `h`. Same for `wk`, `wv`.
    pub wq: Mat<F>,
    pub wk: Mat<F>,
    pub wv: Mat<F>,
    pub wo: Mat<F>,
    pub ln1_g: Mat<F>,
    pub ln1_b: Mat<F>,
    pub w1: Mat<F>,
    pub b1: Mat<F>,
    pub w2: Mat<F>,
    pub b2: Mat<F>,
    pub ln2_g: Mat<F>,
    pub ln2_b: Mat<F>,
}

/// All trainable tensors. A zeroed instance of the same shape doubles as the
/// gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    pub dims: ModelDims,
    pub node_emb: Mat<F>,
    pub type_emb: Mat<F>,
    pub slot_emb: Mat<F>,
    pub prec_emb: Mat<F>,
    pub mask_emb: Mat<F>,
    pub layers: Vec<LayerParams<F>>,
    pub w_mlp: Mat<F>,
    pub b_mlp: Mat<F>,
    pub w_score: Mat<F>,
    pub w_mtp: Mat<F>,
    pub w_n: Mat<F>,
    pub w_e: Mat<F>,
}

pub type Gradients<F> = ModelParams<F>;

const LAYER_FIELDS: [&str; 12] = [
    "wq", "wk", "wv", "wo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b",
];

impl<F: Float> ModelParams<F> {
    /// Uniform `[-1/sqrt(d), 1/sqrt(d)]` initialization; layer-norm gains
    /// start at 1 and biases at 0.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut p = Self::zeros(dims);
        let bound = 1.0 / (p.dims.d as f64).sqrt();
        let mut r = rng::stream(seed, &[rng::tag::INIT]);
        for (name, m) in p.named_mut() {
            if name.contains(".ln") {
                if name.ends_with("_g") {
                    m.data.iter_mut().for_each(|x| *x = F::ONE);
                }
                continue;
            }
            for x in m.data.iter_mut() {
                *x = F::from_f64(r.gen_range(-bound..=bound));
            }
        }
        Ok(p)
    }

    pub fn zeros(dims: ModelDims) -> Self {
        let d = dims.d;
        let layer = || LayerParams {
            wq: Mat::zeros(d, d),
            wk: Mat::zeros(d, d),
            wv: Mat::zeros(d, d),
            wo: Mat::zeros(d, d),
            ln1_g: Mat::zeros(1, d),
            ln1_b: Mat::zeros(1, d),
            w1: Mat::zeros(d, dims.d_ff),
            b1: Mat::zeros(1, dims.d_ff),
            w2: Mat::zeros(dims.d_ff, d),
            b2: Mat::zeros(1, d),
            ln2_g: Mat::zeros(1, d),
            ln2_b: Mat::zeros(1, d),
        };
        ModelParams {
            node_emb: Mat::zeros(dims.num_nodes, d),
            type_emb: Mat::zeros(dims.num_types, d),
            slot_emb: Mat::zeros(dims.num_slots, d),
            prec_emb: Mat::zeros(dims.max_positions, d),
            mask_emb: Mat::zeros(1, d),
            layers: (0..dims.layers).map(|_| layer()).collect(),
            w_mlp: Mat::zeros(2 * d, d),
            b_mlp: Mat::zeros(1, d),
            w_score: Mat::zeros(1, d),
            w_mtp: Mat::zeros(dims.num_metapaths, d),
            w_n: Mat::zeros(d, d),
            w_e: Mat::zeros(d, d),
            dims,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims.clone())
    }

    pub fn names(&self) -> Vec<String> {
        self.named().into_iter().map(|(n, _)| n).collect()
    }

    /// Tensors in a fixed order with stable names.
    pub fn named(&self) -> Vec<(String, &Mat<F>)> {
        let mut out: Vec<(String, &Mat<F>)> = vec![
            ("node_emb".into(), &self.node_emb),
            ("type_emb".into(), &self.type_emb),
            ("slot_emb".into(), &self.slot_emb),
            ("prec_emb".into(), &self.prec_emb),
            ("mask_emb".into(), &self.mask_emb),
        ];
        for (l, lp) in self.layers.iter().enumerate() {
            let fields = [
                &lp.wq, &lp.wk, &lp.wv, &lp.wo, &lp.ln1_g, &lp.ln1_b, &lp.w1, &lp.b1, &lp.w2,
                &lp.b2, &lp.ln2_g, &lp.ln2_b,
            ];
            for (name, m) in LAYER_FIELDS.iter().zip(fields) {
                out.push((format!("layer{l}.{name}"), m));
            }
        }
        out.extend([
            ("mlp.w".into(), &self.w_mlp),
            ("mlp.b".into(), &self.b_mlp),
            ("score.w".into(), &self.w_score),
            ("mtp.w".into(), &self.w_mtp),
            ("pretrain.w_n".into(), &self.w_n),
            ("pretrain.w_e".into(), &self.w_e),
        ]);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Mat<F>)> {
        let ModelParams {
            dims: _,
            node_emb,
            type_emb,
            slot_emb,
            prec_emb,
            mask_emb,
            layers,
            w_mlp,
            b_mlp,
            w_score,
            w_mtp,
            w_n,
            w_e,
        } = self;
        let mut out: Vec<(String, &mut Mat<F>)> = vec![
            ("node_emb".into(), node_emb),
            ("type_emb".into(), type_emb),
            ("slot_emb".into(), slot_emb),
            ("prec_emb".into(), prec_emb),
            ("mask_emb".into(), mask_emb),
        ];
        for (l, lp) in layers.iter_mut().enumerate() {
            let LayerParams {
                wq,
                wk,
                wv,
                wo,
                ln1_g,
                ln1_b,
                w1,
                b1,
                w2,
                b2,
                ln2_g,
                ln2_b,
            } = lp;
            let fields = [wq, wk, wv, wo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b];
            for (name, m) in LAYER_FIELDS.iter().zip(fields) {
                out.push((format!("layer{l}.{name}"), m));
            }
        }
        out.extend([
            ("mlp.w".into(), w_mlp),
            ("mlp.b".into(), b_mlp),
            ("score.w".into(), w_score),
            ("mtp.w".into(), w_mtp),
            ("pretrain.w_n".into(), w_n),
            ("pretrain.w_e".into(), w_e),
        ]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, m)| m.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.data.iter().all(|x| x.is_finite()))
    }

    pub fn cast<G: Float>(&self) -> ModelParams<G> {
        let mut out = ModelParams::<G>::zeros(self.dims.clone());
        for ((_, dst), (_, src)) in out.named_mut().into_iter().zip(self.named()) {
            *dst = src.cast();
        }
        out
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, alpha: F, other: &Self) -> Result<()> {
        check_congruent(self, other)?;
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += alpha * *y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: F) {
        for (_, m) in self.named_mut() {
            m.data.iter_mut().for_each(|x| *x *= alpha);
        }
    }
}

pub fn check_congruent<F: Float, G: Float>(a: &ModelParams<F>, b: &ModelParams<G>) -> Result<()> {
    let sa: Vec<(String, (usize, usize))> = a.named().into_iter().map(|(n, m)| (n, m.shape())).collect();
    let sb: Vec<(String, (usize, usize))> = b.named().into_iter().map(|(n, m)| (n, m.shape())).collect();
    if sa != sb {
        return Err(Error::Contract("parameter shapes differ".into()));
    }
    Ok(())
}
