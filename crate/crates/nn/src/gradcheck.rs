//! Central finite-difference checks of analytic gradients.
//!
//! Non-scalar outputs are reduced to `Σ wᵢ·outᵢ` with fixed random weights
//! before differentiation, so that identities like `Σ softmax = 1` cannot
//! hide errors. The error measure is `‖g_analytic − g_numeric‖₂ /
//! max(‖g_analytic‖₂, ‖g_numeric‖₂)` over the checked coordinates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::loss::{integrated_loss, LossConfig};
use crate::model::{multi_head_attention, FcnConfig, Model, ModelConfig, QatConfig};
use crate::params::ParamId;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub configs: usize,
    pub worst_rel_err: f64,
}

impl GradCheck {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.worst_rel_err <= tolerance
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

type GraphFn<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

fn projected(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

/// Checks `f` with respect to every entry of every input.
pub fn check_function(inputs: &[Tensor], f: &GraphFn<'_>, rng: &mut impl Rng) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let weights = Tensor::from_fn(g.shape(out), |_| rng.random_range(-1.0..1.0));
    let scalar = projected(&mut g, out, &weights)?;
    let grads = g.backward(scalar)?;
    let mut analytic = Vec::new();
    for (v, t) in vars.iter().zip(inputs) {
        match grads.wrt(*v) {
            Some(gr) => analytic.extend_from_slice(gr),
            None => analytic.extend(std::iter::repeat_n(0.0, t.len())),
        }
    }

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let s = projected(&mut g, out, &weights)?;
        Ok(g.value(s).item())
    };
    let mut work = inputs.to_vec();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..work.len() {
        for j in 0..work[i].len() {
            let x = work[i].data()[j];
            work[i].data_mut()[j] = x + FD_STEP;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x - FD_STEP;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Checks the integrated loss of `model` with respect to the listed
/// parameter coordinates. A coordinate whose `±FD_STEP` probe changes the
/// kink pattern has no valid central difference and is left out; the
/// second value counts those.
pub fn check_model_loss(
    model: &Model,
    freqs: &Tensor,
    ops: &Tensor,
    target: &Tensor,
    loss: &LossConfig,
    coords: &[(ParamId, usize)],
) -> Result<(f64, usize)> {
    let loss_of = |m: &Model, g: &mut Graph| -> Result<Var> {
        let out = m.forward(g, freqs, ops)?;
        let t = g.constant(target.clone());
        Ok(integrated_loss(g, out, t, loss)?.total)
    };
    let mut g = Graph::new();
    let l = loss_of(model, &mut g)?;
    let pattern = g.kink_pattern();
    let grads = g.backward(l)?;

    let mut work = model.clone();
    let (mut analytic, mut numeric, mut kinked) = (Vec::new(), Vec::new(), 0);
    for &(id, j) in coords {
        let x = work.params().get(id).value.data()[j];
        let mut value_at = |v: f64| -> Result<(f64, bool)> {
            work.params_mut().get_mut(id).value.data_mut()[j] = v;
            let mut g = Graph::new();
            let l = loss_of(&work, &mut g)?;
            Ok((g.value(l).item(), g.kink_pattern() == pattern))
        };
        let (up, up_smooth) = value_at(x + FD_STEP)?;
        let (down, down_smooth) = value_at(x - FD_STEP)?;
        work.params_mut().get_mut(id).value.data_mut()[j] = x;
        if !(up_smooth && down_smooth) {
            kinked += 1;
            continue;
        }
        analytic.push(grads.param(id).map_or(0.0, |gr| gr[j]));
        numeric.push((up - down) / (2.0 * FD_STEP));
    }
    Ok((relative_error(&analytic, &numeric), kinked))
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values with magnitude in `[lo, hi)` and random sign, away from kinks
/// and poles at zero.
fn signed(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(lo..hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn dim(rng: &mut impl Rng) -> usize {
    rng.random_range(1..=4)
}

/// Random valid frequency rows, `[B, G, d]`.
pub fn random_frequencies(batch: usize, d_g: usize, d: usize, rng: &mut impl Rng) -> Tensor {
    let mut data = Vec::with_capacity(batch * d_g * d);
    for _ in 0..batch * d_g {
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = row.iter().sum();
        data.extend(row.iter().map(|x| x / s));
    }
    Tensor::new(&[batch, d_g, d], data).expect("sized above")
}

type Case = (&'static str, fn(&mut ChaCha8Rng) -> Result<f64>);

fn primitive_cases() -> Vec<Case> {
    vec![
        ("matmul", |r| {
            let (b, m, k, n) = (dim(r), dim(r), dim(r), dim(r));
            let ins = [uniform(&[b, m, k], -1.0, 1.0, r), uniform(&[k, n], -1.0, 1.0, r)];
            check_function(&ins, &|g, v| g.matmul(v[0], v[1]), r)
        }),
        ("matmul_batched", |r| {
            let (b, m, k, n) = (dim(r), dim(r), dim(r), dim(r));
            let ins = [uniform(&[b, 2, m, k], -1.0, 1.0, r), uniform(&[b, 2, k, n], -1.0, 1.0, r)];
            check_function(&ins, &|g, v| g.matmul(v[0], v[1]), r)
        }),
        ("add", |r| {
            let s = [dim(r), dim(r)];
            let ins = [uniform(&s, -1.0, 1.0, r), uniform(&s, -1.0, 1.0, r)];
            check_function(&ins, &|g, v| g.add(v[0], v[1]), r)
        }),
        ("add_broadcast", |r| {
            let (a, b, c) = (dim(r), dim(r), dim(r));
            let ins = [uniform(&[a, b, c], -1.0, 1.0, r), uniform(&[b, c], -1.0, 1.0, r)];
            check_function(&ins, &|g, v| g.add_broadcast(v[0], v[1]), r)
        }),
        ("sub", |r| {
            let s = [dim(r), dim(r)];
            let ins = [uniform(&s, -1.0, 1.0, r), uniform(&s, -1.0, 1.0, r)];
            check_function(&ins, &|g, v| g.sub(v[0], v[1]), r)
        }),
        ("mul", |r| {
            let s = [dim(r), dim(r)];
            let ins = [uniform(&s, -1.0, 1.0, r), uniform(&s, -1.0, 1.0, r)];
            check_function(&ins, &|g, v| g.mul(v[0], v[1]), r)
        }),
        ("div", |r| {
            let s = [dim(r), dim(r)];
            let ins = [uniform(&s, -1.0, 1.0, r), signed(&s, 0.5, 2.0, r)];
            check_function(&ins, &|g, v| g.div(v[0], v[1]), r)
        }),
        ("scale", |r| {
            let c = r.random_range(-3.0..3.0);
            let ins = [uniform(&[dim(r), dim(r)], -1.0, 1.0, r)];
            check_function(&ins, &move |g, v| Ok(g.scale(v[0], c)), r)
        }),
        ("add_scalar", |r| {
            let ins = [uniform(&[dim(r), dim(r)], -1.0, 1.0, r)];
            check_function(&ins, &|g, v| Ok(g.add_scalar(v[0], 0.7)), r)
        }),
        ("transpose_last2", |r| {
            let ins = [uniform(&[dim(r), dim(r), dim(r)], -1.0, 1.0, r)];
            check_function(&ins, &|g, v| g.transpose_last2(v[0]), r)
        }),
        ("reshape", |r| {
            let (a, b) = (dim(r), dim(r));
            let ins = [uniform(&[a, b], -1.0, 1.0, r)];
            check_function(&ins, &move |g, v| g.reshape(v[0], &[b, a]), r)
        }),
        ("concat_last", |r| {
            let (a, b, c) = (dim(r), dim(r), dim(r));
            let ins = [uniform(&[a, b], -1.0, 1.0, r), uniform(&[a, c], -1.0, 1.0, r)];
            check_function(&ins, &|g, v| g.concat_last(v), r)
        }),
        ("slice_last", |r| {
            let (a, w) = (dim(r), dim(r) + 2);
            let start = r.random_range(0..w - 1);
            let len = r.random_range(1..=w - start);
            let ins = [uniform(&[a, w], -1.0, 1.0, r)];
            check_function(&ins, &move |g, v| g.slice_last(v[0], start, len), r)
        }),
        ("sum", |r| {
            let ins = [uniform(&[dim(r), dim(r)], -1.0, 1.0, r)];
            check_function(&ins, &|g, v| Ok(g.sum(v[0])), r)
        }),
        ("mean", |r| {
            let ins = [uniform(&[dim(r), dim(r)], -1.0, 1.0, r)];
            check_function(&ins, &|g, v| Ok(g.mean(v[0])), r)
        }),
        ("sum_last", |r| {
            let ins = [uniform(&[dim(r), dim(r), dim(r)], -1.0, 1.0, r)];
            check_function(&ins, &|g, v| g.sum_last(v[0]), r)
        }),
        ("softmax_lastdim", |r| {
            let ins = [uniform(&[dim(r), dim(r) + 1], -3.0, 3.0, r)];
            check_function(&ins, &|g, v| g.softmax_lastdim(v[0]), r)
        }),
        ("layer_norm", |r| {
            let (a, w) = (dim(r), dim(r) + 1);
            let ins = [
                uniform(&[a, w], -2.0, 2.0, r),
                uniform(&[w], 0.5, 1.5, r),
                uniform(&[w], -0.5, 0.5, r),
            ];
            check_function(&ins, &|g, v| g.layer_norm(v[0], v[1], v[2]), r)
        }),
        ("gelu", |r| {
            let ins = [uniform(&[dim(r), dim(r)], -3.0, 3.0, r)];
            check_function(&ins, &|g, v| Ok(g.gelu(v[0])), r)
        }),
        ("relu", |r| {
            let ins = [signed(&[dim(r), dim(r)], 0.1, 1.0, r)];
            check_function(&ins, &|g, v| Ok(g.relu(v[0])), r)
        }),
        ("sqrt", |r| {
            let ins = [uniform(&[dim(r), dim(r)], 0.5, 2.0, r)];
            check_function(&ins, &|g, v| Ok(g.sqrt(v[0])), r)
        }),
        ("clamp_min", |r| {
            let ins = [signed(&[dim(r), dim(r)], 0.1, 1.0, r)];
            check_function(&ins, &|g, v| Ok(g.clamp_min(v[0], 0.0)), r)
        }),
        ("split_heads", |r| {
            let h = dim(r);
            let ins = [uniform(&[dim(r), dim(r), h * dim(r)], -1.0, 1.0, r)];
            check_function(&ins, &move |g, v| g.split_heads(v[0], h), r)
        }),
        ("merge_heads", |r| {
            let ins = [uniform(&[dim(r), dim(r), dim(r), dim(r)], -1.0, 1.0, r)];
            check_function(&ins, &|g, v| g.merge_heads(v[0]), r)
        }),
        ("broadcast_batch", |r| {
            let b = dim(r);
            let ins = [uniform(&[dim(r), dim(r)], -1.0, 1.0, r)];
            check_function(&ins, &move |g, v| Ok(g.broadcast_batch(v[0], b)), r)
        }),
    ]
}

fn composite_cases() -> Vec<Case> {
    vec![
        ("attention", |r| {
            let heads = dim(r);
            let width = heads * dim(r);
            let (b, t) = (dim(r), dim(r));
            let ins = [
                uniform(&[b, t, width], -1.0, 1.0, r),
                uniform(&[b, t, width], -1.0, 1.0, r),
                uniform(&[width, width], -1.0, 1.0, r),
                uniform(&[width, width], -1.0, 1.0, r),
                uniform(&[width, width], -1.0, 1.0, r),
                uniform(&[width, width], -1.0, 1.0, r),
            ];
            check_function(
                &ins,
                &move |g, v| Ok(multi_head_attention(g, v[0], v[1], [v[2], v[3], v[4], v[5]], heads)?.0),
                r,
            )
        }),
        ("mse_distance", |r| {
            let s = [dim(r), dim(r) + 1];
            let ins = [uniform(&s, -1.0, 1.0, r), uniform(&s, -1.0, 1.0, r)];
            check_function(&ins, &|g, v| crate::loss::mse_distance(g, v[0], v[1]), r)
        }),
        ("bures_approx", |r| {
            let s = [dim(r), dim(r) + 1];
            let ins = [uniform(&s, -1.0, 1.0, r), uniform(&s, 0.1, 1.0, r)];
            check_function(&ins, &|g, v| crate::loss::bures_approx(g, v[0], v[1]), r)
        }),
        ("integrated_loss", |r| {
            let beta = r.random_range(0.0..1.0);
            let s = [dim(r), dim(r) + 1];
            let ins = [uniform(&s, -1.0, 1.0, r), uniform(&s, 0.1, 1.0, r)];
            check_function(
                &ins,
                &move |g, v| Ok(integrated_loss(g, v[0], v[1], &LossConfig { beta })?.total),
                r,
            )
        }),
        ("qat_end_to_end", |r| {
            let n_qubits = r.random_range(1..=2);
            let heads = r.random_range(1..=2);
            let cfg = QatConfig {
                d_s: 4 * heads,
                d_l: 2,
                d_h: heads,
                d_rate: 2,
                operator_embedding: r.random_bool(0.7),
                ..QatConfig::new(n_qubits, 3usize.pow(n_qubits as u32), r.random())
            };
            model_case(ModelConfig::Qat(cfg), r)
        }),
        ("fcn_end_to_end", |r| {
            let n_qubits = r.random_range(1..=2);
            let cfg = FcnConfig { n_qubits, d_g: 3usize.pow(n_qubits as u32), d: 1 << n_qubits, seed: r.random() };
            model_case(ModelConfig::Fcn(cfg), r)
        }),
    ]
}

/// Integrated-loss gradient of a freshly initialized model with respect to
/// entries of five randomly chosen parameter tensors.
fn model_case(cfg: ModelConfig, r: &mut ChaCha8Rng) -> Result<f64> {
    let model = Model::new(&cfg)?;
    let (d_g, d) = cfg.dims();
    let batch = r.random_range(1..=3);
    let freqs = random_frequencies(batch, d_g, d, r);
    let ops = Tensor::from_fn(&[d_g, 2 * d * d * d], |_| r.random_range(-0.5..0.5));
    let target = uniform(&[batch, d * d], 0.05, 1.0, r);
    let mut ids: Vec<ParamId> = model.params().ids().collect();
    ids.shuffle(r);
    let mut coords = Vec::new();
    for &id in ids.iter().take(5) {
        let n = model.params().get(id).value.len();
        for _ in 0..4 {
            coords.push((id, r.random_range(0..n)));
        }
    }
    let beta = r.random_range(0.0..1.0);
    Ok(check_model_loss(&model, &freqs, &ops, &target, &LossConfig { beta }, &coords)?.0)
}

fn run_cases(cases: Vec<Case>, configs: usize, seed: u64) -> Result<Vec<GradCheck>> {
    let mut out = Vec::with_capacity(cases.len());
    for (k, (name, case)) in cases.into_iter().enumerate() {
        let mut r = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let mut worst = 0.0f64;
        for _ in 0..configs {
            worst = worst.max(case(&mut r)?);
        }
        out.push(GradCheck { name: name.to_string(), configs, worst_rel_err: worst });
    }
    Ok(out)
}

/// Every primitive of [`Graph`] on `configs` random shapes and inputs.
pub fn primitive_suite(configs: usize, seed: u64) -> Result<Vec<GradCheck>> {
    run_cases(primitive_cases(), configs, seed)
}

/// Attention, the losses, and end-to-end model losses.
pub fn composite_suite(configs: usize, seed: u64) -> Result<Vec<GradCheck>> {
    run_cases(composite_cases(), configs, seed)
}
