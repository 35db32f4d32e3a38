//! Finite-difference verification of every trainable block, isolated and
//! end to end.
//!
//! The oracle side only ever calls forward passes: central differences
//! `(f(p+h) - f(p-h)) / 2h` with `h` scaled to the parameter. The analytic
//! side uses the same backward code the trainer uses. Isolated blocks must
//! agree to a relative error of 1e-5, full-pipeline losses to 1e-4.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{TimeEncodeMode, TimeEncoder};
use crate::error::Result;
use crate::events::{Event, NodeId, TemporalGraph};
use crate::lha::{Aggregator, LhaConfig, LhaMemory};
use crate::model::{ModelConfig, ModelGrads, TamiModel};
use crate::nn::{bce_loss, Activation, Matrix, Mlp, MlpGrads, MlpSpec};

pub const ISOLATED_TOL: f64 = 1e-5;
pub const END_TO_END_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    pub cases: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checks: Vec<GradCheck>,
    pub all_pass: bool,
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    let diff = (analytic - fd).abs();
    if diff < 1e-9 {
        return 0.0;
    }
    diff / analytic.abs().max(fd.abs()).max(1e-9)
}

fn fd_step(param: f64) -> f64 {
    1e-5 * param.abs().max(1.0)
}

/// Central finite difference over one flat parameter vector. `loss_at(i, v)`
/// must set parameter `i` to `v` and return the loss; the original value is
/// written back through the same closure after each component.
fn fd_gradient(
    params: &[f64],
    mut loss_at: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(params.len());
    for (i, &p) in params.iter().enumerate() {
        let h = fd_step(p);
        let up = loss_at(i, p + h)?;
        let down = loss_at(i, p - h)?;
        loss_at(i, p)?;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

fn random_mlp(rng: &mut ChaCha12Rng) -> Mlp {
    let depth = rng.random_range(1..=3usize);
    let mut sizes = vec![rng.random_range(1..=5usize)];
    for _ in 0..depth {
        sizes.push(rng.random_range(1..=5usize));
    }
    let acts: Vec<Activation> = (0..depth)
        .map(|i| {
            if i + 1 == depth {
                [Activation::Identity, Activation::Sigmoid][rng.random_range(0..2usize)]
            } else {
                [Activation::Relu, Activation::Identity][rng.random_range(0..2usize)]
            }
        })
        .collect();
    Mlp::from_spec(&MlpSpec::new(sizes, acts).unwrap(), rng.random()).unwrap()
}

/// Isolated MLP blocks: parameter and input gradients of a random linear
/// functional of the output.
pub fn check_mlp_isolated(seed: u64, cases: usize) -> Result<GradCheck> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let mut mlp = random_mlp(&mut rng);
        let x: Vec<f64> = (0..mlp.in_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..mlp.out_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();

        let (_, tape) = mlp.forward_tape(&x)?;
        let mut grads = MlpGrads::zeros_like(&mlp);
        let dx = mlp.backward(&tape, &probe, &mut grads)?;
        let analytic: Vec<f64> = {
            let mut flat = Vec::new();
            for (w, b) in grads.weights.iter().zip(&grads.bias) {
                flat.extend_from_slice(&w.data);
                flat.extend_from_slice(b);
            }
            flat
        };

        let params = mlp.flat_params();
        let mut flat = params.clone();
        let fd = fd_gradient(&params, |i, v| {
            flat[i] = v;
            mlp.set_flat_params(&flat)?;
            let y = mlp.forward(&x)?;
            Ok(y.iter().zip(&probe).map(|(a, b)| a * b).sum())
        })?;
        for (a, f) in analytic.iter().zip(&fd) {
            worst = worst.max(rel_err(*a, *f));
        }

        // Input gradient against perturbed inputs.
        let mut xin = x.clone();
        let fd_x = fd_gradient(&x, |i, v| {
            xin[i] = v;
            let y = mlp.forward(&xin)?;
            Ok(y.iter().zip(&probe).map(|(a, b)| a * b).sum())
        })?;
        for (a, f) in dx.iter().zip(&fd_x) {
            worst = worst.max(rel_err(*a, *f));
        }
    }
    Ok(GradCheck {
        name: "mlp_isolated".into(),
        cases,
        max_rel_err: worst,
        tolerance: ISOLATED_TOL,
        pass: worst < ISOLATED_TOL,
    })
}

/// Isolated frequency gradients of the time encoder.
pub fn check_encoder_isolated(seed: u64, cases: usize) -> Result<GradCheck> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let d_t = rng.random_range(1..=8usize);
        let mode = if case % 2 == 0 { TimeEncodeMode::Original } else { TimeEncodeMode::Log };
        let mut enc = TimeEncoder::new(d_t, mode, true)?;
        for w in &mut enc.omega {
            *w *= rng.random_range(0.5..2.0);
        }
        let dt = rng.random_range(0.0..20.0f64);
        let (_, analytic) = enc.encode_with_grad(dt)?;
        #[allow(clippy::needless_range_loop)]
        for i in 0..d_t {
            let w0 = enc.omega[i];
            let h = 1e-6 * w0.abs().max(1.0);
            enc.omega[i] = w0 + h;
            let up = enc.encode(dt)?[i];
            enc.omega[i] = w0 - h;
            let down = enc.encode(dt)?[i];
            enc.omega[i] = w0;
            worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h)));
        }
    }
    Ok(GradCheck {
        name: "time_frequencies_isolated".into(),
        cases,
        max_rel_err: worst,
        tolerance: ISOLATED_TOL,
        pass: worst < ISOLATED_TOL,
    })
}

/// Loss gradient of the clamped binary cross-entropy.
pub fn check_bce(seed: u64, cases: usize) -> Result<GradCheck> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let p = rng.random_range(0.02..0.98);
        let label = rng.random::<bool>();
        let (_, g) = bce_loss(p, label);
        let h = 1e-7;
        let fd = (bce_loss(p + h, label).0 - bce_loss(p - h, label).0) / (2.0 * h);
        worst = worst.max(rel_err(g, fd));
    }
    Ok(GradCheck {
        name: "bce_loss".into(),
        cases,
        max_rel_err: worst,
        tolerance: ISOLATED_TOL,
        pass: worst < ISOLATED_TOL,
    })
}

/// Isolated max-aggregator transform: gradients of a linear functional of a
/// max-pooled lookup with respect to the transform parameters.
pub fn check_max_layer_isolated(seed: u64, cases: usize) -> Result<GradCheck> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let d_r = rng.random_range(1..=4usize);
        let entries = rng.random_range(1..=4usize);
        let cfg = LhaConfig::new(1.0, entries, d_r, Aggregator::Max)?;
        let mut mem = LhaMemory::new(cfg, seed ^ case as u64)?;
        for e in 0..entries {
            let c: Vec<f64> = (0..d_r).map(|_| rng.random_range(-1.0..1.0)).collect();
            mem.update(0, 1, e as f64, &c)?;
        }
        let probe: Vec<f64> = (0..d_r).map(|_| rng.random_range(-1.0..1.0)).collect();

        let (_, tape) = mem.lookup_traced(0, 1, entries as f64 + 1.0);
        let tape = tape.expect("entries exist");
        let mut gw = Matrix::zeros(d_r, d_r);
        let mut gb = vec![0.0; d_r];
        mem.max_lookup_backward(&tape, &probe, &mut gw, &mut gb);
        let mut analytic = gw.data.clone();
        analytic.extend_from_slice(&gb);

        let layer = mem.max_layer.clone().unwrap();
        let mut params = layer.weights.data.clone();
        params.extend_from_slice(&layer.bias);
        let n_w = layer.weights.data.len();
        let params_c = params.clone();
        let tau = entries as f64 + 1.0;
        let fd = fd_gradient(&params_c, |i, v| {
            let l = mem.max_layer.as_mut().unwrap();
            if i < n_w {
                l.weights.data[i] = v;
            } else {
                l.bias[i - n_w] = v;
            }
            let y = mem.lookup(0, 1, tau);
            Ok(y.iter().zip(&probe).map(|(a, b)| a * b).sum())
        })?;
        for (a, f) in analytic.iter().zip(&fd) {
            worst = worst.max(rel_err(*a, *f));
        }
    }
    Ok(GradCheck {
        name: "max_aggregator_isolated".into(),
        cases,
        max_rel_err: worst,
        tolerance: ISOLATED_TOL,
        pass: worst < ISOLATED_TOL,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockId {
    Token,
    Combine,
    CProj,
    Predictor,
    Omega,
    MaxLayer,
}

impl BlockId {
    fn name(self) -> &'static str {
        match self {
            BlockId::Token => "token_mlp",
            BlockId::Combine => "combine_mlp",
            BlockId::CProj => "pair_state_proj",
            BlockId::Predictor => "link_predictor",
            BlockId::Omega => "time_frequencies",
            BlockId::MaxLayer => "max_aggregator",
        }
    }
}

fn get_block(model: &TamiModel, id: BlockId) -> Vec<f64> {
    match id {
        BlockId::Token => model.token_mlp.flat_params(),
        BlockId::Combine => model.combine_mlp.flat_params(),
        BlockId::CProj => model.c_proj.flat_params(),
        BlockId::Predictor => model.predictor.flat_params(),
        BlockId::Omega => model.encoder.omega.clone(),
        BlockId::MaxLayer => {
            let l = model.memory.max_layer.as_ref().expect("max layer present");
            let mut v = l.weights.data.clone();
            v.extend_from_slice(&l.bias);
            v
        }
    }
}

fn set_block(model: &mut TamiModel, id: BlockId, vals: &[f64]) -> Result<()> {
    match id {
        BlockId::Token => model.token_mlp.set_flat_params(vals),
        BlockId::Combine => model.combine_mlp.set_flat_params(vals),
        BlockId::CProj => model.c_proj.set_flat_params(vals),
        BlockId::Predictor => model.predictor.set_flat_params(vals),
        BlockId::Omega => {
            model.encoder.omega.copy_from_slice(vals);
            Ok(())
        }
        BlockId::MaxLayer => {
            let l = model.memory.max_layer.as_mut().expect("max layer present");
            let n = l.weights.data.len();
            l.weights.data.copy_from_slice(&vals[..n]);
            l.bias.copy_from_slice(&vals[n..]);
            Ok(())
        }
    }
}

fn grads_of_block(grads: &ModelGrads, id: BlockId) -> Vec<f64> {
    let flat_mlp = |g: &MlpGrads| {
        let mut v = Vec::new();
        for (w, b) in g.weights.iter().zip(&g.bias) {
            v.extend_from_slice(&w.data);
            v.extend_from_slice(b);
        }
        v
    };
    match id {
        BlockId::Token => flat_mlp(&grads.token),
        BlockId::Combine => flat_mlp(&grads.combine),
        BlockId::CProj => flat_mlp(&grads.c_proj),
        BlockId::Predictor => flat_mlp(&grads.predictor),
        BlockId::Omega => grads.omega.clone(),
        BlockId::MaxLayer => {
            let mut v = grads.max_w.as_ref().expect("max grads").data.clone();
            v.extend_from_slice(grads.max_b.as_ref().expect("max grads"));
            v
        }
    }
}

fn random_model(rng: &mut ChaCha12Rng, aggregator: Aggregator) -> Result<(TamiModel, TemporalGraph)> {
    let d = rng.random_range(2..=5usize);
    let mut cfg = ModelConfig::new(d, rng.random_range(2..=5usize));
    cfg.m = rng.random_range(1..=4usize);
    cfg.d_r = rng.random_range(2..=5usize);
    cfg.k = rng.random_range(1..=2usize);
    cfg.gamma = rng.random_range(0.2..1.0);
    cfg.aggregator = aggregator;
    cfg.predictor_hidden = vec![rng.random_range(2..=5usize)];
    if rng.random::<bool>() {
        cfg.token_hidden = vec![rng.random_range(2..=4usize)];
    }
    cfg.use_lte = rng.random::<bool>();
    if rng.random::<bool>() {
        cfg.sampling = crate::model::NeighborSampling::Uniform;
    }
    cfg.seed = rng.random();

    // A small dense interaction history with edge features.
    let num_nodes = 6;
    let d_edge = rng.random_range(0..=2usize);
    let mut rows = Vec::new();
    let mut t = 0.0;
    for _ in 0..25 {
        t += rng.random_range(0.1..3.0f64);
        let u = rng.random_range(0..num_nodes as NodeId);
        let mut v = rng.random_range(0..num_nodes as NodeId);
        if u == v {
            v = (v + 1) % num_nodes as NodeId;
        }
        let feats: Vec<f64> = (0..d_edge).map(|_| rng.random_range(-1.0..1.0)).collect();
        rows.push((u, v, t, feats));
    }
    let g = TemporalGraph::new(rows, num_nodes, None)?;
    let model = TamiModel::for_graph(cfg, &g)?;
    Ok((model, g))
}

fn model_blocks(model: &TamiModel) -> Vec<BlockId> {
    let mut blocks = vec![
        BlockId::Token,
        BlockId::Combine,
        BlockId::CProj,
        BlockId::Predictor,
        BlockId::Omega,
    ];
    if model.memory.max_layer.is_some() {
        blocks.push(BlockId::MaxLayer);
    }
    blocks
}

/// End-to-end loss of one positive/negative pair against a fixed memory
/// state, every block checked by finite differences. Gradients that flow
/// only through stored memory entries are zero on both routes.
pub fn check_model_end_to_end(seed: u64, cases: usize) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst: std::collections::BTreeMap<&'static str, f64> = Default::default();
    for case in 0..cases {
        let aggregator = match case % 3 {
            0 => Aggregator::MostRecent,
            1 => Aggregator::Mean,
            _ => Aggregator::Max,
        };
        let (mut model, g) = random_model(&mut rng, aggregator)?;
        // Warm the memory so the history slot is active.
        let warm = g.len() * 2 / 3;
        for e in &g.events()[..warm] {
            model.process_event(&g, e)?;
        }
        let e = &g.events()[warm];
        let (u, v, tau) = (e.src, e.dst, e.t);
        let neg = (v + 1) % g.num_nodes() as NodeId;

        let mut grads = ModelGrads::zeros_like(&model);
        let lp = model.example_loss(&g, u, v, tau, true, &mut grads)?;
        let ln = model.example_loss(&g, u, neg, tau, false, &mut grads)?;
        debug_assert!(lp.is_finite() && ln.is_finite());

        for id in model_blocks(&model) {
            let analytic = grads_of_block(&grads, id);
            let params = get_block(&model, id);
            let mut scratch = params.clone();
            let fd = fd_gradient(&params, |i, val| {
                scratch[i] = val;
                set_block(&mut model, id, &scratch)?;
                let pp = model.predict_link(&g, u, v, tau)?;
                let pn = model.predict_link(&g, u, neg, tau)?;
                Ok(bce_loss(pp, true).0 + bce_loss(pn, false).0)
            })?;
            let w = worst.entry(id.name()).or_insert(0.0);
            for (a, f) in analytic.iter().zip(&fd) {
                *w = w.max(rel_err(*a, *f));
            }
        }
    }
    Ok(worst
        .into_iter()
        .map(|(name, err)| GradCheck {
            name: format!("end_to_end_{name}"),
            cases,
            max_rel_err: err,
            tolerance: END_TO_END_TOL,
            pass: err < END_TO_END_TOL,
        })
        .collect())
}

/// Write-then-predict composite: the memory starts empty, one event is
/// processed (writing `gamma * c` into the pair history), and the same pair
/// is predicted later. The pair-state projection and both backbone passes
/// receive nonzero gradients through the stored entry.
pub fn check_memory_write_path(seed: u64, cases: usize) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst: std::collections::BTreeMap<&'static str, f64> = Default::default();
    for case in 0..cases {
        let aggregator = if case % 2 == 0 { Aggregator::MostRecent } else { Aggregator::Max };
        let (mut model, g) = random_model(&mut rng, aggregator)?;
        let idx = g.len() * 2 / 3;
        let e = g.events()[idx].clone();
        let (u, v) = (e.src, e.dst);
        let t1 = e.t;
        let t2 = t1 + rng.random_range(0.5..5.0f64);

        let (loss, grads) = composite_loss_and_grads(&model, &g, &e, t2)?;
        debug_assert!(loss.is_finite());

        for id in model_blocks(&model) {
            let analytic = grads_of_block(&grads, id);
            let params = get_block(&model, id);
            let mut scratch = params.clone();
            let fd = fd_gradient(&params, |i, val| {
                scratch[i] = val;
                set_block(&mut model, id, &scratch)?;
                let mut probe = model.clone();
                probe.memory.clear();
                probe.process_event(&g, &e)?;
                let p = probe.predict_link(&g, u, v, t2)?;
                Ok(bce_loss(p, true).0)
            })?;
            let w = worst.entry(id.name()).or_insert(0.0);
            for (a, f) in analytic.iter().zip(&fd) {
                *w = w.max(rel_err(*a, *f));
            }
        }
    }
    Ok(worst
        .into_iter()
        .map(|(name, err)| GradCheck {
            name: format!("write_path_{name}"),
            cases,
            max_rel_err: err,
            tolerance: END_TO_END_TOL,
            pass: err < END_TO_END_TOL,
        })
        .collect())
}

/// Manual chain through write-then-predict: forward the write (backbone at
/// `t1`, pair projection, EWMA into an empty history), aggregate, predict at
/// `t2`, then push the loss gradient back through both paths.
fn composite_loss_and_grads(
    model: &TamiModel,
    g: &TemporalGraph,
    event: &Event,
    t2: f64,
) -> Result<(f64, ModelGrads)> {
    let (u, v, t1) = (event.src, event.dst, event.t);
    let d = model.cfg.d;
    let gamma = model.cfg.gamma;

    let (h_u1, tape_u1) = model.node_embedding_traced(g, u, t1)?;
    let (h_v1, tape_v1) = model.node_embedding_traced(g, v, t1)?;
    let mut x1 = h_u1;
    x1.extend(h_v1);
    let (c, c_tape) = model.c_proj.forward_tape(&x1)?;
    let r: Vec<f64> = c.iter().map(|ci| gamma * ci).collect();

    // Aggregate the single stored entry.
    let (h_uv, max_pre) = match model.cfg.aggregator {
        Aggregator::MostRecent | Aggregator::Mean => (r.clone(), None),
        Aggregator::Max => {
            let layer = model.memory.max_layer.as_ref().expect("max layer present");
            let mut pre = vec![0.0; model.cfg.d_r];
            layer.weights.matvec(&r, &mut pre);
            for (p, b) in pre.iter_mut().zip(&layer.bias) {
                *p += b;
            }
            (pre.iter().map(|&p| p.max(0.0)).collect(), Some(pre))
        }
    };

    let (h_u2, tape_u2) = model.node_embedding_traced(g, u, t2)?;
    let (h_v2, tape_v2) = model.node_embedding_traced(g, v, t2)?;
    let mut x2 = h_u2;
    x2.extend(h_v2);
    x2.extend(h_uv);
    let (y, p_tape) = model.predictor.forward_tape(&x2)?;
    let (loss, dp) = bce_loss(y[0], true);

    let mut grads = ModelGrads::zeros_like(model);
    let dx2 = model.predictor.backward(&p_tape, &[dp], &mut grads.predictor)?;
    model.node_backward(&tape_u2, &dx2[..d], &mut grads)?;
    model.node_backward(&tape_v2, &dx2[d..2 * d], &mut grads)?;
    let dh_uv = &dx2[2 * d..];

    let dr: Vec<f64> = match model.cfg.aggregator {
        Aggregator::MostRecent | Aggregator::Mean => dh_uv.to_vec(),
        Aggregator::Max => {
            let layer = model.memory.max_layer.as_ref().expect("max layer present");
            let pre = max_pre.expect("forward kept preactivations");
            let dpre: Vec<f64> = dh_uv
                .iter()
                .zip(&pre)
                .map(|(&gd, &p)| if p > 0.0 { gd } else { 0.0 })
                .collect();
            let gw = grads.max_w.as_mut().expect("max grads");
            gw.add_outer(&dpre, &r);
            for (gb, dp) in grads.max_b.as_mut().expect("max grads").iter_mut().zip(&dpre) {
                *gb += dp;
            }
            let mut dr = vec![0.0; model.cfg.d_r];
            layer.weights.matvec_transpose_add(&dpre, &mut dr);
            dr
        }
    };
    let dc: Vec<f64> = dr.iter().map(|x| gamma * x).collect();
    let dx1 = model.c_proj.backward(&c_tape, &dc, &mut grads.c_proj)?;
    model.node_backward(&tape_u1, &dx1[..d], &mut grads)?;
    model.node_backward(&tape_v1, &dx1[d..2 * d], &mut grads)?;
    Ok((loss, grads))
}

/// The full verification suite with default case counts.
pub fn run_full_suite(seed: u64) -> Result<GradcheckReport> {
    let mut checks = vec![
        check_mlp_isolated(seed, 10)?,
        check_encoder_isolated(seed.wrapping_add(1), 10)?,
        check_bce(seed.wrapping_add(2), 10)?,
        check_max_layer_isolated(seed.wrapping_add(3), 10)?,
    ];
    checks.extend(check_model_end_to_end(seed.wrapping_add(4), 10)?);
    checks.extend(check_memory_write_path(seed.wrapping_add(5), 10)?);
    let all_pass = checks.iter().all(|c| c.pass);
    Ok(GradcheckReport { checks, all_pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isolated_blocks_match_finite_differences() {
        assert!(check_mlp_isolated(100, 10).unwrap().pass);
        assert!(check_encoder_isolated(101, 10).unwrap().pass);
        assert!(check_bce(102, 10).unwrap().pass);
        assert!(check_max_layer_isolated(103, 10).unwrap().pass);
    }

    #[test]
    fn end_to_end_blocks_match_finite_differences() {
        for c in check_model_end_to_end(200, 6).unwrap() {
            assert!(c.pass, "{}: {}", c.name, c.max_rel_err);
        }
    }

    #[test]
    fn write_path_gives_projection_nonzero_gradients() {
        for c in check_memory_write_path(300, 6).unwrap() {
            assert!(c.pass, "{}: {}", c.name, c.max_rel_err);
        }
    }

    #[test]
    fn full_suite_passes() {
        let report = run_full_suite(0).unwrap();
        assert!(report.all_pass, "{report:?}");
    }
}
