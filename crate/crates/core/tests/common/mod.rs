#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spanforge::albert_retro::{self, AlbertConfig, RetroGold};
use spanforge::bidaf::{self, BidafConfig};
use spanforge::config::RunConfig;
use spanforge::docqa::{self, DocqaConfig};
use spanforge::encoders::{
    bigru_encode, bilstm_encode, char_cnn_sequence, init_bigru, init_bilstm, init_char_cnn, EncoderConfig,
};
use spanforge::pipeline::{build_vocabularies, training_items, Model, Trainer};
use spanforge::squad::{load_squad, tokenize, PackedFeature, PairFeature, SquadDataset};
use spanforge::tensor::{gradient_check_store, Graph, ParameterStore, Primitive, Tensor, Var};
use spanforge::Result;

pub fn data_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn load(name: &str) -> SquadDataset {
    load_squad(&data_path(name)).unwrap()
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Weighted sum of every entry of `y`, so each output coordinate gets a
/// distinct upstream gradient.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let w = g.constant(random_tensor(&mut rng, r, c));
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn mask(rng: &mut impl Rng, n: usize) -> Vec<bool> {
    let mut m: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
    m[rng.gen_range(0..n)] = true;
    m
}

type Check = (&'static str, f64);

/// Largest relative error between the reverse-mode gradient of `f` at `x`
/// and a central difference with step 1e-5.
pub fn input_check(f: impl Fn(&mut Graph, Var) -> Result<Var>, x: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = f(&mut g, xv)?;
    g.backward(y)?;
    let analytic = g.grad(xv).expect("input gradient");
    let eval = |probe: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.input(probe.clone());
        let y = f(&mut g, v)?;
        Ok(g.value(y).data()[0])
    };
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + 1e-5;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - 1e-5;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(rel_error(analytic.data()[i], (up - down) / 2e-5));
    }
    Ok(worst)
}

/// Worst relative error of every differentiable primitive on random
/// inputs drawn from `seed`.
pub fn primitive_errors(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = (rng.gen_range(2..5), rng.gen_range(2..5));
    let x = random_tensor(&mut rng, r, c);
    let other = random_tensor(&mut rng, r, c);
    let right = random_tensor(&mut rng, c, 3);
    let colv = random_tensor(&mut rng, r, 1);
    let rowv = random_tensor(&mut rng, 1, c);
    let m = mask(&mut rng, r * c);
    let target = rng.gen_range(0..c);
    let row_mask = {
        let mut m = mask(&mut rng, c);
        m[target] = true;
        m
    };
    let indices: Vec<usize> = (0..4).map(|_| rng.gen_range(0..c)).collect();
    let s = seed;
    let mut out = Vec::new();
    macro_rules! check {
        ($name:expr, |$g:ident, $v:ident| $body:expr) => {
            out.push(($name, input_check(|$g: &mut Graph, $v: Var| {
                let y = $body?;
                project($g, y, s)
            }, &x)?));
        };
    }
    check!("add", |g, v| { let o = g.constant(other.clone()); g.add(v, o) });
    check!("sub", |g, v| { let o = g.constant(other.clone()); g.sub(o, v) });
    check!("mul", |g, v| { let o = g.constant(other.clone()); g.mul(v, o) });
    check!("scale", |g, v| g.scale(v, -1.7));
    check!("add_col", |g, v| { let b = g.constant(colv.clone()); g.add_col(v, b) });
    check!("add_row", |g, v| { let b = g.constant(rowv.clone()); g.add_row(v, b) });
    check!("mul_col", |g, v| { let o = g.constant(other.clone()); let k = g.column(v, 0)?; g.mul_col(o, k) });
    check!("matmul", |g, v| { let w = g.constant(right.clone()); g.matmul(v, w) });
    check!("matmul_right", |g, v| { let w = g.constant(other.transpose()); g.matmul(w, v) });
    check!("transpose", |g, v| g.transpose(v));
    check!("concat_rows", |g, v| { let o = g.constant(other.clone()); g.concat_rows(&[v, o, v]) });
    check!("concat_cols", |g, v| { let o = g.constant(other.clone()); g.concat_cols(&[o, v]) });
    check!("slice_rows", |g, v| g.slice_rows(v, 1, r - 1));
    check!("slice_cols", |g, v| g.slice_cols(v, 1, c - 1));
    check!("tile_cols", |g, v| { let k = g.column(v, c - 1)?; g.tile_cols(k, 3) });
    check!("lookup", |g, v| { let t = g.transpose(v)?; g.lookup(t, &indices) });
    check!("unfold", |g, v| g.unfold(v, 2));
    check!("max_over_columns", |g, v| g.max_over_columns(v));
    check!("tanh", |g, v| g.tanh(v));
    check!("relu", |g, v| g.relu(v));
    check!("sigmoid", |g, v| g.sigmoid(v));
    check!("gelu", |g, v| g.gelu(v));
    check!("softmax_rows", |g, v| g.softmax(v, 1));
    check!("softmax_cols", |g, v| g.softmax(v, 0));
    check!("masked_softmax", |g, v| g.masked_softmax(v, 1, &m));
    check!("normalize_cols", |g, v| { let o = g.constant(other.clone()); let x = g.concat_rows(&[v, o])?; g.normalize_cols(x, 1e-12) });
    check!("sum", |g, v| g.sum(v));
    check!("mean", |g, v| g.mean(v));
    check!("add_all", |g, v| { let a = g.tanh(v)?; g.add_all(&[v, a, v]) });
    check!("affine", |g, v| {
        let w = g.constant(other.transpose());
        let b = g.constant(Tensor::filled(vec![c, 1], 0.3));
        g.affine(w, v, b)
    });
    check!("apply_matmul_tanh", |g, v| {
        let w = g.constant(other.transpose());
        let y = g.apply(Primitive::MatMul, &[w, v])?;
        g.apply(Primitive::Tanh, &[y])
    });
    out.push((
        "cross_entropy",
        input_check(|g, v| { let row = g.slice_rows(v, 0, 1)?; g.cross_entropy(row, target) }, &x)?,
    ));
    out.push((
        "masked_cross_entropy",
        input_check(
            |g, v| { let row = g.slice_rows(v, 0, 1)?; g.masked_cross_entropy(row, target, &row_mask) },
            &x,
        )?,
    ));
    Ok(out)
}

fn encoder(hidden: usize) -> EncoderConfig {
    EncoderConfig {
        word_dim: 3,
        char_dim: 2,
        cnn_width: 2,
        hidden,
        dropout_keep: 1.0,
    }
}

pub fn random_pair(rng: &mut impl Rng, vocab: usize, chars: usize, t: usize, j: usize) -> PairFeature {
    let text: Vec<String> = (0..t).map(|i| format!("w{i}")).collect();
    let word = |rng: &mut dyn rand::RngCore| -> (usize, Vec<usize>) {
        let n = rng.gen_range(1..4);
        (rng.gen_range(2..vocab), (0..n).map(|_| rng.gen_range(2..chars)).collect())
    };
    let (context, context_chars): (Vec<_>, Vec<_>) = (0..t).map(|_| word(rng)).unzip();
    let (question, question_chars): (Vec<_>, Vec<_>) = (0..j).map(|_| word(rng)).unzip();
    let s = rng.gen_range(0..t);
    let e = rng.gen_range(s..t);
    PairFeature {
        qid: "q".into(),
        question,
        question_chars,
        context,
        context_chars,
        tokens: tokenize(&text.join(" ")),
        legal: vec![true; t],
        gold: Some((s, e)),
        is_impossible: false,
    }
}

pub fn random_packed(rng: &mut impl Rng, vocab: usize, s_len: usize, answerable: bool) -> PackedFeature {
    let len = rng.gen_range(6..=s_len);
    let q_len = 2;
    let mut ids: Vec<usize> = (0..s_len).map(|i| if i < len { rng.gen_range(4..vocab) } else { 0 }).collect();
    ids[0] = 1;
    ids[q_len + 1] = 2;
    ids[len - 1] = 2;
    let context_mask: Vec<bool> = (0..s_len).map(|i| i > q_len + 1 && i < len - 1).collect();
    let ctx: Vec<usize> = (0..s_len).filter(|&i| context_mask[i]).collect();
    let gold = if answerable {
        let a = rng.gen_range(0..ctx.len());
        let b = rng.gen_range(a..ctx.len());
        (ctx[a], ctx[b])
    } else {
        (0, 0)
    };
    PackedFeature {
        qid: "q".into(),
        ids,
        segments: (0..s_len).map(|i| u8::from(i > q_len + 1)).collect(),
        offsets: (0..s_len).map(|i| context_mask[i].then_some((i, i + 1))).collect(),
        context_mask,
        len,
        gold,
        is_impossible: !answerable,
    }
}

pub type LossFn = Box<dyn Fn(&mut Graph, &ParameterStore) -> Result<Var>>;

/// Each encoder and full model with fresh parameters and a scalar loss,
/// inputs drawn from `seed`.
pub fn model_cases(seed: u64) -> Result<Vec<(&'static str, ParameterStore, LossFn)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<(&'static str, ParameterStore, LossFn)> = Vec::new();

    let mut store = ParameterStore::new();
    init_char_cnn(&mut store, "cnn", 6, 3, 2, seed)?;
    let words: Vec<Vec<usize>> = (0..3).map(|_| (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..6)).collect()).collect();
    out.push(("char_cnn", store, Box::new(move |g, s| {
        let y = char_cnn_sequence(g, s, "cnn", &words, 2)?;
        project(g, y, seed)
    })));

    let x = random_tensor(&mut rng, 3, 4);
    let mut store = ParameterStore::new();
    init_bilstm(&mut store, "lstm", 3, 2, seed)?;
    let xc = x.clone();
    out.push(("lstm", store, Box::new(move |g, s| {
        let xv = g.constant(xc.clone());
        let y = bilstm_encode(g, s, "lstm", xv)?;
        project(g, y, seed)
    })));
    let mut store = ParameterStore::new();
    init_bigru(&mut store, "gru", 3, 2, seed)?;
    out.push(("gru", store, Box::new(move |g, s| {
        let xv = g.constant(x.clone());
        let y = bigru_encode(g, s, "gru", xv)?;
        project(g, y, seed)
    })));

    let f = random_pair(&mut rng, 12, 8, 5, 3);
    let gold = f.gold.unwrap();
    let cfg = BidafConfig { encoder: encoder(2), vocab: 12, chars: Some(8) };
    let mut store = ParameterStore::new();
    bidaf::init_bidaf(&mut store, &cfg, seed)?;
    let fb = f.clone();
    out.push(("bidaf", store, Box::new(move |g, s| {
        let st = bidaf::forward(g, s, &cfg, &fb, None)?;
        bidaf::bidaf_loss(g, &[(st.start_logits, st.end_logits)], &[gold])
    })));

    let cfg = DocqaConfig { encoder: encoder(2), vocab: 12, chars: Some(8), max_span: 4, max_context: 16 };
    let mut store = ParameterStore::new();
    docqa::init_docqa(&mut store, &cfg, seed)?;
    let other = random_pair(&mut rng, 12, 8, 4, 3);
    out.push(("docqa", store, Box::new(move |g, s| {
        let a = docqa::forward(g, s, &cfg, &f, None)?;
        let b = docqa::forward(g, s, &cfg, &other, None)?;
        docqa::group_loss(g, &[a, b], 0, gold)
    })));

    let cfg = AlbertConfig { vocab: 20, embed: 8, hidden: 16, layers: 2, heads: 2, ffn: 16, seq_len: 10, dropout_keep: 1.0 };
    let mut store = ParameterStore::new();
    albert_retro::init_albert(&mut store, &cfg, seed)?;
    let answerable = rng.gen_bool(0.7);
    let f = random_packed(&mut rng, 20, 10, answerable);
    let gold = RetroGold::from_feature(&f)?;
    out.push(("albert", store, Box::new(move |g, s| {
        let o = albert_retro::forward(g, s, &cfg, &f, None)?;
        Ok(albert_retro::retro_loss(g, &[o], std::slice::from_ref(&gold))?.total)
    })));
    Ok(out)
}

pub fn model_errors(seed: u64) -> Result<Vec<Check>> {
    model_cases(seed)?
        .into_iter()
        .map(|(name, store, f)| Ok((name, gradient_check_store(&store, f, 4, seed)?.max_rel_error)))
        .collect()
}

/// One probed coordinate: analytic gradient and central differences at
/// the reference step 1e-5 and at a coarser 1e-3.
#[derive(Debug, Clone)]
pub struct Coordinate {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub numeric_coarse: f64,
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs() + 1e-8)
}

impl Coordinate {
    pub fn rel_error(&self) -> f64 {
        rel_error(self.analytic, self.numeric)
    }
}

/// Finite-difference oracle over up to `per_param` seeded coordinates of
/// every trainable tensor.
pub fn probe_coordinates(
    store: &ParameterStore,
    f: &dyn Fn(&mut Graph, &ParameterStore) -> Result<Var>,
    per_param: usize,
    seed: u64,
) -> Result<Vec<Coordinate>> {
    let mut g = Graph::new();
    let y = f(&mut g, store)?;
    g.backward(y)?;
    let grads = g.gradients(store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = store.clone();
    let names: Vec<String> = store.names().filter(|n| store.requires_grad(n).unwrap()).map(str::to_string).collect();
    let mut out = Vec::new();
    for name in names {
        let n = store.get(&name)?.len();
        let picks: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, per_param).into_vec()
        };
        for i in picks {
            let orig = store.get(&name)?.data()[i];
            let mut central = |h: f64| -> Result<f64> {
                let mut at = |v: f64| -> Result<f64> {
                    probe.get_mut(&name)?.data_mut()[i] = v;
                    let mut g = Graph::new();
                    let y = f(&mut g, &probe)?;
                    Ok(g.value(y).data()[0])
                };
                let d = (at(orig + h)? - at(orig - h)?) / (2.0 * h);
                probe.get_mut(&name)?.data_mut()[i] = orig;
                Ok(d)
            };
            let numeric = central(1e-5)?;
            let numeric_coarse = central(1e-3)?;
            out.push(Coordinate {
                param: name.clone(),
                index: i,
                analytic: grads.get(&name).map_or(0.0, |t| t.data()[i]),
                numeric,
                numeric_coarse,
            });
        }
    }
    Ok(out)
}

/// Steps until train EM reaches 1.0 on `data`, checked after every
/// epoch, or `None` if the budget runs out.
pub fn steps_to_overfit(cfg: RunConfig, data: &SquadDataset, budget: usize) -> Result<(Option<usize>, Trainer)> {
    let vocabs = build_vocabularies(&cfg, data);
    let model = Model::new(cfg, vocabs)?;
    let (items, _) = training_items(&model, data);
    let mut trainer = Trainer::new(model, items)?;
    let mut epoch = 0;
    while trainer.steps < budget {
        epoch += 1;
        let before = trainer.steps;
        trainer.run_epoch(epoch)?;
        if trainer.steps == before {
            break;
        }
        let (_, r) = trainer.model.evaluate(&trainer.store, data)?;
        if r.exact == 1.0 {
            return Ok((Some(trainer.steps), trainer));
        }
    }
    Ok((None, trainer))
}

pub fn mini(arch: &str) -> RunConfig {
    RunConfig::preset(&format!("{arch}-mini")).unwrap()
}

/// Exhaustive O(S²) search for the best legal span; ties go to the
/// smallest start, then the smallest end.
pub fn brute_force_span(start: &[f64], end: &[f64], legal: &[bool], max_len: usize) -> Option<(usize, usize, f64)> {
    let mut all = Vec::new();
    for s in 0..start.len() {
        for e in 0..end.len() {
            if legal[s] && legal[e] && s <= e && e - s < max_len {
                all.push((s, e, start[s] + end[e]));
            }
        }
    }
    let best = all.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    all.into_iter().find(|c| c.2 == best)
}

/// Start and end distributions of every paragraph under one softmax over
/// the concatenated logits.
pub fn joint_softmax(paragraphs: &[(Vec<f64>, Vec<f64>)]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let norm = |v: Vec<&f64>| {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let z: f64 = v.iter().map(|&&x| (x - m).exp()).sum();
        (m, z)
    };
    let (ms, zs) = norm(paragraphs.iter().flat_map(|p| p.0.iter()).collect());
    let (me, ze) = norm(paragraphs.iter().flat_map(|p| p.1.iter()).collect());
    paragraphs
        .iter()
        .map(|(s, e)| {
            (
                s.iter().map(|x| (x - ms).exp() / zs).collect(),
                e.iter().map(|x| (x - me).exp() / ze).collect(),
            )
        })
        .collect()
}

/// Copy of an ALBERT store in which every layer owns separate tensors
/// instead of aliasing the shared block.
pub fn unroll_shared(store: &ParameterStore) -> ParameterStore {
    let mut out = ParameterStore::new();
    for (name, t) in store.iter() {
        if !name.starts_with("albert.shared.") {
            out.insert(name, t.clone()).unwrap();
        }
    }
    for (alias, target) in store.aliases() {
        out.insert(alias, store.get(target).unwrap().clone()).unwrap();
    }
    out
}

pub struct SharedUpdateCheck {
    /// Largest |shared gradient − Σ per-layer gradients|.
    pub grad_diff: f64,
    /// Largest |library Adam update − first-step Adam on the summed gradient|.
    pub update_diff: f64,
    pub tensors: usize,
}

/// Compares gradient and first Adam step of the shared encoder against
/// an unrolled copy whose per-layer gradients are summed by hand.
pub fn shared_update_check(seed: u64) -> Result<SharedUpdateCheck> {
    use spanforge::tensor::{Adam, Optimizer};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = AlbertConfig { vocab: 20, embed: 8, hidden: 16, layers: 3, heads: 2, ffn: 16, seq_len: 10, dropout_keep: 1.0 };
    let mut store = ParameterStore::new();
    albert_retro::init_albert(&mut store, &cfg, seed)?;
    let f = random_packed(&mut rng, 20, 10, true);
    let gold = RetroGold::from_feature(&f)?;
    let loss = |s: &ParameterStore| -> Result<spanforge::tensor::Gradients> {
        let mut g = Graph::new();
        let o = albert_retro::forward(&mut g, s, &cfg, &f, None)?;
        let l = albert_retro::retro_loss(&mut g, &[o], std::slice::from_ref(&gold))?.total;
        g.backward(l)?;
        g.gradients(s)
    };
    let shared_grads = loss(&store)?;
    let unrolled = unroll_shared(&store);
    let unrolled_grads = loss(&unrolled)?;

    let (lr, eps) = (1e-3, 1e-8);
    let before = store.clone();
    Adam::new(lr).step(&mut store, &shared_grads)?;

    let mut check = SharedUpdateCheck { grad_diff: 0.0, update_diff: 0.0, tensors: 0 };
    let shared: Vec<String> = before.names().filter(|n| n.starts_with("albert.shared.")).map(str::to_string).collect();
    for name in shared {
        let suffix = &name["albert.shared.".len()..];
        let n = before.get(&name)?.len();
        let mut summed = vec![0.0; n];
        for i in 0..cfg.layers {
            let gl = unrolled_grads.get(&format!("albert.layer.{i}.{suffix}")).expect("per-layer gradient");
            for (acc, v) in summed.iter_mut().zip(gl.data()) {
                *acc += v;
            }
        }
        let g = shared_grads.get(&name).expect("shared gradient");
        for (k, &sk) in summed.iter().enumerate() {
            check.grad_diff = check.grad_diff.max((g.data()[k] - sk).abs());
            // bias-corrected first moments equal g and g² on step one
            let expected = before.get(&name)?.data()[k] - lr * sk / (sk.abs() + eps);
            check.update_diff = check.update_diff.max((store.get(&name)?.data()[k] - expected).abs());
        }
        check.tensors += 1;
    }
    Ok(check)
}
