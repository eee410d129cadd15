//! Training objectives wired to the encoder: per-example loss and exact
//! gradients, batch reduction, and the finite-difference check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{
    backward, compose_embeddings, encode, representation_backward, score_logit,
    subgraph_representation, ActivationTrace, EncoderInput, Representation,
};
use super::linalg::{axpy, dot, matvec, matvec_t, Float};
use super::params::{Gradients, ModelParams};
use crate::curriculum::loss::{
    cosine_grad, info_nce, loss_mtp, loss_rec_logits, pairwise_loss, PairwiseMode,
};
use crate::error::{Error, Result};

/// One masked node: its position, true node and sampled negative (global
/// node indices).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MnpTarget {
    pub pos: usize,
    pub node: u32,
    pub negative: u32,
}

/// One masked link `from -> to` and a negative successor position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MepTarget {
    pub from: usize,
    pub to: usize,
    pub negative: usize,
}

/// A loss term over the forward passes of an [`Example`]; `input` fields
/// index [`Example::inputs`].
#[derive(Clone, Debug, PartialEq)]
pub enum Term {
    Mnp {
        input: usize,
        targets: Vec<MnpTarget>,
        mode: PairwiseMode,
    },
    Mep {
        input: usize,
        targets: Vec<MepTarget>,
        mode: PairwiseMode,
    },
    Mtp {
        input: usize,
        labels: Vec<bool>,
    },
    Scl {
        anchor: usize,
        positive: usize,
        negatives: Vec<usize>,
        tau: f64,
    },
    Rec {
        positive: usize,
        negative: usize,
    },
}

/// Forward passes plus weighted loss terms over them. The example loss is
/// `sum(weight * term)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub inputs: Vec<EncoderInput>,
    pub terms: Vec<(f64, Term)>,
}

impl Example {
    pub fn single(input: EncoderInput, term: Term) -> Self {
        Example {
            inputs: vec![input],
            terms: vec![(1.0, term)],
        }
    }
}

/// Weighted contribution of each objective to a loss value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub mnp: f64,
    pub mep: f64,
    pub mtp: f64,
    pub scl: f64,
    pub rec: f64,
}

impl LossParts {
    pub fn add_scaled(&mut self, o: &LossParts, s: f64) {
        self.total += s * o.total;
        self.mnp += s * o.mnp;
        self.mep += s * o.mep;
        self.mtp += s * o.mtp;
        self.scl += s * o.scl;
        self.rec += s * o.rec;
    }
}

struct Pass<F> {
    trace: ActivationTrace<F>,
    rep: Option<Representation<F>>,
    d_out: Vec<F>,
    dz: Vec<F>,
}

fn needs_rep(term: &Term, k: usize) -> bool {
    match term {
        Term::Mtp { input, .. } => *input == k,
        Term::Scl {
            anchor,
            positive,
            negatives,
            ..
        } => *anchor == k || *positive == k || negatives.contains(&k),
        Term::Rec { positive, negative } => *positive == k || *negative == k,
        _ => false,
    }
}

fn to_f64<F: Float>(v: &[F]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64()).collect()
}

/// Loss of one example; its gradient is accumulated into `g`.
pub fn example_loss_and_grad<F: Float>(p: &ModelParams<F>, ex: &Example, g: &mut Gradients<F>) -> Result<f64> {
    Ok(example_loss_parts(p, ex, g)?.total)
}

/// As [`example_loss_and_grad`], itemized by objective.
pub fn example_loss_parts<F: Float>(p: &ModelParams<F>, ex: &Example, g: &mut Gradients<F>) -> Result<LossParts> {
    let d = p.dims.d;
    let mut passes = Vec::with_capacity(ex.inputs.len());
    for (k, input) in ex.inputs.iter().enumerate() {
        let trace = encode(compose_embeddings(input, p)?, p)?;
        let rep = if ex.terms.iter().any(|(_, t)| needs_rep(t, k)) {
            Some(subgraph_representation(&trace, input.user_pos, input.item_pos, p)?)
        } else {
            None
        };
        let n = trace.n;
        passes.push(Pass {
            trace,
            rep,
            d_out: vec![F::ZERO; n * d],
            dz: vec![F::ZERO; d],
        });
    }
    let check = |k: usize, pos: usize, passes: &[Pass<F>]| -> Result<()> {
        if k >= passes.len() || pos >= passes[k].trace.n {
            return Err(Error::Bounds(format!("objective refers to input {k} position {pos}")));
        }
        Ok(())
    };
    let mut parts = LossParts::default();
    let mut tmp = vec![F::ZERO; d];
    for (weight, term) in &ex.terms {
        let w = *weight;
        match term {
            Term::Mnp { input, targets, mode } => {
                if targets.is_empty() {
                    continue;
                }
                let c = w / targets.len() as f64;
                for t in targets {
                    check(*input, t.pos, &passes)?;
                    for id in [t.node, t.negative] {
                        if id as usize >= p.dims.num_nodes {
                            return Err(Error::Bounds(format!("node index {id} out of range")));
                        }
                    }
                    let f = passes[*input].trace.row(t.pos).to_vec();
                    let ev = p.node_emb.row(t.node as usize);
                    let en = p.node_emb.row(t.negative as usize);
                    let mut wv = vec![F::ZERO; d];
                    let mut wn = vec![F::ZERO; d];
                    matvec(&p.w_n, ev, &mut wv);
                    matvec(&p.w_n, en, &mut wn);
                    let (l, dp, dn) = pairwise_loss(dot(&f, &wv).to_f64(), dot(&f, &wn).to_f64(), *mode);
                    parts.mnp += c * l;
                    let (dp, dn) = (F::from_f64(c * dp), F::from_f64(c * dn));
                    let row = &mut passes[*input].d_out[t.pos * d..(t.pos + 1) * d];
                    axpy(dp, &wv, row);
                    axpy(dn, &wn, row);
                    for a in 0..d {
                        let r = g.w_n.row_mut(a);
                        axpy(dp * f[a], ev, r);
                        axpy(dn * f[a], en, r);
                    }
                    matvec_t(&p.w_n, &f, &mut tmp);
                    axpy(dp, &tmp, g.node_emb.row_mut(t.node as usize));
                    axpy(dn, &tmp, g.node_emb.row_mut(t.negative as usize));
                }
            }
            Term::Mep { input, targets, mode } => {
                if targets.is_empty() {
                    continue;
                }
                let c = w / targets.len() as f64;
                for t in targets {
                    for pos in [t.from, t.to, t.negative] {
                        check(*input, pos, &passes)?;
                    }
                    let tr = &passes[*input].trace;
                    let fj = tr.row(t.from).to_vec();
                    let fk = tr.row(t.to).to_vec();
                    let fn_ = tr.row(t.negative).to_vec();
                    let mut wk = vec![F::ZERO; d];
                    let mut wn = vec![F::ZERO; d];
                    matvec(&p.w_e, &fk, &mut wk);
                    matvec(&p.w_e, &fn_, &mut wn);
                    let (l, dp, dn) = pairwise_loss(dot(&fj, &wk).to_f64(), dot(&fj, &wn).to_f64(), *mode);
                    parts.mep += c * l;
                    let (dp, dn) = (F::from_f64(c * dp), F::from_f64(c * dn));
                    let out = &mut passes[*input].d_out;
                    axpy(dp, &wk, &mut out[t.from * d..(t.from + 1) * d]);
                    axpy(dn, &wn, &mut out[t.from * d..(t.from + 1) * d]);
                    matvec_t(&p.w_e, &fj, &mut tmp);
                    axpy(dp, &tmp, &mut out[t.to * d..(t.to + 1) * d]);
                    axpy(dn, &tmp, &mut out[t.negative * d..(t.negative + 1) * d]);
                    for a in 0..d {
                        let r = g.w_e.row_mut(a);
                        axpy(dp * fj[a], &fk, r);
                        axpy(dn * fj[a], &fn_, r);
                    }
                }
            }
            Term::Mtp { input, labels } => {
                check(*input, 0, &passes)?;
                if labels.len() != p.dims.num_metapaths {
                    return Err(Error::Contract(format!(
                        "{} meta-path labels for {} meta-paths",
                        labels.len(),
                        p.dims.num_metapaths
                    )));
                }
                let z = passes[*input].rep.as_ref().unwrap().z.clone();
                let logits: Vec<f64> = (0..labels.len()).map(|r| dot(p.w_mtp.row(r), &z).to_f64()).collect();
                let (l, dl) = loss_mtp(&logits, labels);
                parts.mtp += w * l;
                for (r, &gl) in dl.iter().enumerate() {
                    let gl = F::from_f64(w * gl);
                    axpy(gl, &z, g.w_mtp.row_mut(r));
                    axpy(gl, p.w_mtp.row(r), &mut passes[*input].dz);
                }
            }
            Term::Scl {
                anchor,
                positive,
                negatives,
                tau,
            } => {
                if *tau <= 0.0 || negatives.is_empty() {
                    return Err(Error::Contract("contrastive term needs tau > 0 and a negative".into()));
                }
                let others: Vec<usize> = std::iter::once(*positive).chain(negatives.iter().copied()).collect();
                for &k in std::iter::once(anchor).chain(&others) {
                    check(k, 0, &passes)?;
                }
                let za = to_f64(&passes[*anchor].rep.as_ref().unwrap().z);
                let mut sims = Vec::with_capacity(others.len());
                let mut grads = Vec::with_capacity(others.len());
                for &k in &others {
                    let zk = to_f64(&passes[k].rep.as_ref().unwrap().z);
                    let (s, da, dk) = cosine_grad(&za, &zk);
                    sims.push(s);
                    grads.push((da, dk));
                }
                let (l, ds) = info_nce(&sims, *tau);
                parts.scl += w * l;
                for ((&k, (da, dk)), s) in others.iter().zip(&grads).zip(&ds) {
                    let c = w * s;
                    for j in 0..d {
                        passes[*anchor].dz[j] += F::from_f64(c * da[j]);
                        passes[k].dz[j] += F::from_f64(c * dk[j]);
                    }
                }
            }
            Term::Rec { positive, negative } => {
                check(*positive, 0, &passes)?;
                check(*negative, 0, &passes)?;
                let zp = passes[*positive].rep.as_ref().unwrap().z.clone();
                let zn = passes[*negative].rep.as_ref().unwrap().z.clone();
                let (l, gp, gn) = loss_rec_logits(score_logit(&zp, p), score_logit(&zn, p));
                parts.rec += w * l;
                let (gp, gn) = (F::from_f64(w * gp), F::from_f64(w * gn));
                axpy(gp, &zp, &mut g.w_score.data);
                axpy(gn, &zn, &mut g.w_score.data);
                axpy(gp, &p.w_score.data, &mut passes[*positive].dz);
                axpy(gn, &p.w_score.data, &mut passes[*negative].dz);
            }
        }
    }
    parts.total = parts.mnp + parts.mep + parts.mtp + parts.scl + parts.rec;
    if !parts.total.is_finite() {
        return Err(Error::NumericFault(format!("non-finite loss {:?}", parts)));
    }
    for (input, mut pass) in ex.inputs.iter().zip(passes) {
        if let Some(rep) = &pass.rep {
            representation_backward(rep, &pass.dz, input.user_pos, input.item_pos, p, g, &mut pass.d_out);
        }
        if pass.d_out.iter().any(|&x| x != F::ZERO) {
            backward(input, &pass.trace, pass.d_out, p, g);
        }
    }
    Ok(parts)
}

/// Examples per gradient shard; fixed so the reduction order never depends
/// on the thread count.
const SHARD: usize = 16;

/// Mean loss over the batch and its exact gradient.
pub fn loss_and_gradients<F: Float>(p: &ModelParams<F>, batch: &[Example]) -> Result<(f64, Gradients<F>)> {
    let (parts, g) = loss_parts_and_gradients(p, batch)?;
    Ok((parts.total, g))
}

/// Mean itemized loss over the batch and its exact gradient.
pub fn loss_parts_and_gradients<F: Float>(p: &ModelParams<F>, batch: &[Example]) -> Result<(LossParts, Gradients<F>)> {
    if batch.is_empty() {
        return Ok((LossParts::default(), p.zeros_like()));
    }
    let shards: Vec<(LossParts, Gradients<F>)> = batch
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut g = p.zeros_like();
            let mut l = LossParts::default();
            for ex in chunk {
                l.add_scaled(&example_loss_parts(p, ex, &mut g)?, 1.0);
            }
            Ok((l, g))
        })
        .collect::<Result<_>>()?;
    let mut iter = shards.into_iter();
    let (mut loss, mut grad) = iter.next().unwrap();
    for (l, g) in iter {
        loss.add_scaled(&l, 1.0);
        grad.add_scaled(F::ONE, &g)?;
    }
    let inv = 1.0 / batch.len() as f64;
    grad.scale(F::from_f64(inv));
    let mut mean = LossParts::default();
    mean.add_scaled(&loss, inv);
    Ok((mean, grad))
}

/// Loss only, no gradients.
pub fn batch_loss<F: Float>(p: &ModelParams<F>, batch: &[Example]) -> Result<f64> {
    Ok(loss_and_gradients(p, batch)?.0)
}

/// Maximum relative error between analytic and central-difference gradients
/// over every parameter entry: `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_difference_check(p: &ModelParams<f64>, ex: &Example, step: f64) -> Result<f64> {
    let mut g = p.zeros_like();
    example_loss_and_grad(p, ex, &mut g)?;
    finite_difference_against(p, ex, step, &g)
}

/// As [`finite_difference_check`] but against a supplied gradient.
pub fn finite_difference_against(p: &ModelParams<f64>, ex: &Example, step: f64, g: &Gradients<f64>) -> Result<f64> {
    let mut work = p.clone();
    let mut scratch = p.zeros_like();
    let analytic: Vec<Vec<f64>> = g.named().into_iter().map(|(_, m)| m.data.clone()).collect();
    let mut worst: f64 = 0.0;
    for (ti, a_t) in analytic.iter().enumerate() {
        for idx in 0..a_t.len() {
            let orig = work.named()[ti].1.data[idx];
            work.named_mut()[ti].1.data[idx] = orig + step;
            let lp = example_loss_and_grad(&work, ex, &mut scratch)?;
            work.named_mut()[ti].1.data[idx] = orig - step;
            let lm = example_loss_and_grad(&work, ex, &mut scratch)?;
            work.named_mut()[ti].1.data[idx] = orig;
            let num = (lp - lm) / (2.0 * step);
            let a = a_t[idx];
            let err = (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::super::params::tests::tiny_dims;
    use super::*;
    use crate::model::adam::AdamState;

    fn input(shift: u32) -> EncoderInput {
        EncoderInput {
            ids: vec![Some(0), Some(3 + shift), Some(5), Some(1), Some(7), Some(2 + shift)],
            types: vec![0, 1, 2, 0, 2, 1],
            slots: vec![0, 1, 1, 2, 2, 3],
            precursors: vec![vec![], vec![0], vec![0], vec![1, 2], vec![2], vec![3, 4]],
            user_pos: 0,
            item_pos: 5,
        }
    }

    fn params() -> ModelParams<f64> {
        let mut p = ModelParams::<f64>::init(tiny_dims(), 7).unwrap();
        // perturb layer-norm parameters away from their identity init
        for (name, m) in p.named_mut() {
            if name.contains(".ln") {
                for (k, x) in m.data.iter_mut().enumerate() {
                    *x += 0.1 * ((k as f64) * 1.3).sin();
                }
            }
        }
        p
    }

    fn mnp() -> Example {
        let mut x = input(0);
        x.ids[1] = None;
        x.ids[4] = None;
        Example::single(
            x,
            Term::Mnp {
                input: 0,
                targets: vec![
                    MnpTarget { pos: 1, node: 3, negative: 4 },
                    MnpTarget { pos: 4, node: 7, negative: 8 },
                ],
                mode: PairwiseMode::Pairwise,
            },
        )
    }

    fn all_objectives() -> Vec<(&'static str, Example)> {
        let mut mep_in = input(0);
        mep_in.precursors[3] = vec![2];
        vec![
            ("mnp", mnp()),
            (
                "mep",
                Example::single(
                    mep_in,
                    Term::Mep {
                        input: 0,
                        targets: vec![MepTarget { from: 1, to: 3, negative: 4 }],
                        mode: PairwiseMode::Pairwise,
                    },
                ),
            ),
            ("mtp", Example::single(input(0), Term::Mtp { input: 0, labels: vec![true, false] })),
            (
                "scl",
                Example {
                    inputs: vec![input(0), input(1), input(2)],
                    terms: vec![(
                        1.0,
                        Term::Scl {
                            anchor: 0,
                            positive: 1,
                            negatives: vec![2],
                            tau: 1.0,
                        },
                    )],
                },
            ),
            (
                "rec",
                Example {
                    inputs: vec![input(0), input(2)],
                    terms: vec![(1.0, Term::Rec { positive: 0, negative: 1 })],
                },
            ),
        ]
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = params();
        for (name, ex) in all_objectives() {
            let err = finite_difference_check(&p, &ex, 1e-4).unwrap();
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let p = params();
        let ex = mnp();
        let mut g = p.zeros_like();
        example_loss_and_grad(&p, &ex, &mut g).unwrap();
        g.layers[0].w1.data.iter_mut().for_each(|x| *x *= 1.5);
        assert!(finite_difference_against(&p, &ex, 1e-4, &g).unwrap() > 1e-2);
    }

    #[test]
    fn rec_at_half_is_two_ln2() {
        let mut p = params();
        p.w_score.fill_zero();
        let ex = Example {
            inputs: vec![input(0), input(1)],
            terms: vec![(1.0, Term::Rec { positive: 0, negative: 1 })],
        };
        let (l, _) = loss_and_gradients(&p, &[ex]).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_step_keeps_loss_and_batch_is_mean() {
        let p = params();
        let batch: Vec<Example> = all_objectives().into_iter().map(|(_, e)| e).collect();
        let (l0, g) = loss_and_gradients(&p, &batch).unwrap();
        let mut q = p.clone();
        let mut st = AdamState::new(&q, 0.0);
        st.step(&mut q, &g).unwrap();
        assert_eq!(batch_loss(&q, &batch).unwrap(), l0);
        let singles: f64 = batch.iter().map(|e| batch_loss(&p, std::slice::from_ref(e)).unwrap()).sum();
        assert!((singles / batch.len() as f64 - l0).abs() < 1e-12);
    }

    #[test]
    fn f32_agrees_with_f64() {
        let p = params();
        let p32: ModelParams<f32> = p.cast();
        let batch: Vec<Example> = all_objectives().into_iter().map(|(_, e)| e).collect();
        let (a, ga) = loss_and_gradients(&p, &batch).unwrap();
        let (b, gb) = loss_and_gradients(&p32, &batch).unwrap();
        assert!((a - b).abs() < 1e-4);
        for ((_, x), (_, y)) in ga.named().into_iter().zip(gb.named()) {
            for (u, v) in x.data.iter().zip(&y.data) {
                assert!((u - *v as f64).abs() < 1e-3);
            }
        }
    }
}
