//! Independent re-derivations of the forward pass in plain loops, compared
//! against the tape implementation.

use gradcore::{gelu_scalar, Tape, Tensor};
use qdt::model::{
    attention, causal_mask, embed_window, forward, init_params, ModelConfig, ModelVariant,
    ParameterSet, WindowBatch, LN_EPS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

fn add_bias(x: &mut [f64], b: &[f64]) {
    for row in x.chunks_mut(b.len()) {
        for (v, bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
}

fn add(x: &mut [f64], y: &[f64]) {
    for (v, w) in x.iter_mut().zip(y) {
        *v += w;
    }
}

fn layer_norm(x: &[f64], scale: &[f64], shift: &[f64]) -> Vec<f64> {
    let n = scale.len();
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(n) {
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..n {
            out.push((row[j] - mean) * inv * scale[j] + shift[j]);
        }
    }
    out
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn leaf<'a>(params: &'a ParameterSet<Tensor>, idx: usize) -> &'a [f64] {
    params.value(idx).data()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_window(cfg: &ModelConfig, batch: usize, rng: &mut ChaCha8Rng) -> WindowBatch {
    let bk = batch * cfg.context_len;
    WindowBatch {
        batch,
        k: cfg.context_len,
        rtg: (0..bk).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        states: (0..bk * cfg.state_dim)
            .map(|_| rng.gen_range(-1.5..1.5))
            .collect(),
        actions: (0..bk * cfg.action_dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
        timesteps: (0..bk).map(|i| (i * 3 + 1) % cfg.t_max).collect(),
        valid: vec![true; bk],
    }
}

#[test]
fn single_token_attention_matches_hand_composition() {
    // With one token the softmax collapses to 1 and attention reduces to
    // out = (v + alpha*(v W_e + b_e)) W_o + b_o with v = x W_v + b_v.
    let cfg = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        context_len: 1,
        d_ff: 16,
        t_max: 4,
        ..ModelConfig::default()
    };
    let params = init_params(&cfg, 11);
    let a = &params.layout().layers[0].attn;
    let e = a.entangle.as_ref().expect("quantum attention");
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    for _ in 0..10 {
        let x: Vec<f64> = (0..cfg.d_model).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut v = mm(&x, leaf(&params, a.w_v), 1, cfg.d_model, cfg.d_model);
        add_bias(&mut v, leaf(&params, a.b_v));
        let mut ent = mm(&v, leaf(&params, e.w_e), 1, cfg.d_model, cfg.d_model);
        add_bias(&mut ent, leaf(&params, e.b_e));
        let mixed: Vec<f64> = v
            .iter()
            .zip(&ent)
            .map(|(h, g)| h + cfg.alpha_e * g)
            .collect();
        let mut expect = mm(&mixed, leaf(&params, a.w_o), 1, cfg.d_model, cfg.d_model);
        add_bias(&mut expect, leaf(&params, a.b_o));

        let tape = Tape::new();
        let vars = params.to_vars(&tape, false).unwrap();
        let xv = tape
            .constant(&Tensor::from_vec(&[1, cfg.d_model], x).unwrap())
            .unwrap();
        let mask = tape.constant(&causal_mask(1)).unwrap();
        let got = attention(&vars, &cfg, a, &xv, &mask, 1, 1).unwrap().value();

        assert!(max_abs_diff(got.data(), &expect) < 1e-10);
    }
}

#[test]
fn one_step_window_matches_plain_loop_forward() {
    // Full pipeline oracle: one sample, one step (three tokens), one layer,
    // one head, no quantum extensions, every stage in plain loops.
    let cfg = ModelConfig {
        d_model: 4,
        n_layers: 1,
        n_heads: 1,
        context_len: 1,
        d_ff: 8,
        t_max: 9,
        variant: ModelVariant::standard(),
        ..ModelConfig::default()
    };
    let d = cfg.d_model;
    let params = init_params(&cfg, 23);
    let mut rng = ChaCha8Rng::seed_from_u64(77);

    let rtg = rng.gen_range(-1.0..1.0);
    let state: Vec<f64> = (0..11).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let action: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let t = 5usize;

    let lay = params.layout();
    let emb = &lay.embed;
    let e_t = &leaf(&params, emb.timestep)[t * d..(t + 1) * d];

    let token = |w: usize, b: usize, input: &[f64]| -> Vec<f64> {
        let mut tok = mm(input, leaf(&params, w), 1, input.len(), d);
        add_bias(&mut tok, leaf(&params, b));
        add(&mut tok, e_t);
        tok
    };
    let mut x = token(emb.w_r, emb.b_r, &[rtg]);
    x.extend(token(emb.w_s, emb.b_s, &state));
    x.extend(token(emb.w_a, emb.b_a, &action));

    // attention over the three tokens
    let at = &lay.layers[0].attn;
    let mut q = mm(&x, leaf(&params, at.w_q), 3, d, d);
    add_bias(&mut q, leaf(&params, at.b_q));
    let mut k = mm(&x, leaf(&params, at.w_k), 3, d, d);
    add_bias(&mut k, leaf(&params, at.b_k));
    let mut v = mm(&x, leaf(&params, at.w_v), 3, d, d);
    add_bias(&mut v, leaf(&params, at.b_v));

    let scale = 1.0 / (d as f64).sqrt();
    let mut probs = vec![0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..d).map(|c| q[i * d + c] * k[j * d + c]).sum();
            probs[i * 3 + j] = dot * scale + if j > i { -1e9 } else { 0.0 };
        }
        softmax_row(&mut probs[i * 3..(i + 1) * 3]);
    }
    let ctx = mm(&probs, &v, 3, 3, d);
    let mut attn_out = mm(&ctx, leaf(&params, at.w_o), 3, d, d);
    add_bias(&mut attn_out, leaf(&params, at.b_o));

    add(&mut x, &attn_out);
    let ln1 = &lay.layers[0].ln_attn;
    x = layer_norm(&x, leaf(&params, ln1.scale), leaf(&params, ln1.shift));

    // feedforward, single channel
    let ch = &lay.layers[0].ff.channels[0];
    let mut h1 = mm(&x, leaf(&params, ch.w1), 3, d, cfg.d_ff);
    add_bias(&mut h1, leaf(&params, ch.b1));
    for vv in h1.iter_mut() {
        *vv = gelu_scalar(*vv);
    }
    let mut ff_out = mm(&h1, leaf(&params, ch.w2), 3, cfg.d_ff, d);
    add_bias(&mut ff_out, leaf(&params, ch.b2));

    add(&mut x, &ff_out);
    let ln2 = &lay.layers[0].ln_ff;
    x = layer_norm(&x, leaf(&params, ln2.scale), leaf(&params, ln2.shift));

    // prediction head on the state token (row 1)
    let srow = &x[d..2 * d];
    let head = &lay.head;
    let mut f1 = mm(srow, leaf(&params, head.w1), 1, d, d);
    add_bias(&mut f1, leaf(&params, head.b1));
    for vv in f1.iter_mut() {
        *vv = gelu_scalar(*vv);
    }
    let mut f2 = mm(&f1, leaf(&params, head.w2), 1, d, d);
    add_bias(&mut f2, leaf(&params, head.b2));
    for vv in f2.iter_mut() {
        *vv = gelu_scalar(*vv);
    }
    let mut expect = mm(&f2, leaf(&params, head.w3), 1, d, 3);
    add_bias(&mut expect, leaf(&params, head.b3));
    for vv in expect.iter_mut() {
        *vv = vv.tanh();
    }

    let w = WindowBatch {
        batch: 1,
        k: 1,
        rtg: vec![rtg],
        states: state,
        actions: action,
        timesteps: vec![t],
        valid: vec![true],
    };
    let tape = Tape::new();
    let vars = params.to_vars(&tape, false).unwrap();
    let got = forward(&tape, &vars, &cfg, &w).unwrap().value();

    assert_eq!(got.shape(), vec![1, 3]);
    assert!(
        max_abs_diff(got.data(), &expect) < 1e-9,
        "forward deviates from the plain-loop oracle by {:.3e}",
        max_abs_diff(got.data(), &expect)
    );
}

#[test]
fn zeroed_token_weights_pass_timestep_rows_through() {
    let cfg = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        context_len: 4,
        d_ff: 16,
        t_max: 12,
        ..ModelConfig::default()
    };
    let mut params = init_params(&cfg, 3);
    let emb = params.layout().embed.clone();
    for idx in [emb.w_r, emb.w_s, emb.w_a] {
        params.values_mut()[idx].data_mut().fill(0.0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = random_window(&cfg, 2, &mut rng);
    let tape = Tape::new();
    let vars = params.to_vars(&tape, false).unwrap();
    let x = embed_window(&tape, &vars, &cfg, &w).unwrap().value();
    assert_eq!(x.shape(), vec![2 * 3 * cfg.context_len, cfg.d_model]);

    let table = params.value(emb.timestep).data().to_vec();
    let d = cfg.d_model;
    for (step, &t) in w.timesteps.iter().enumerate() {
        let want = &table[t * d..(t + 1) * d];
        for tok in 0..3 {
            let row = (step * 3 + tok) * d;
            assert_eq!(&x.data()[row..row + d], want, "step {step} token {tok}");
        }
    }
}

#[test]
fn embedding_shape_tracks_context_length() {
    for k in [1usize, 7, 20] {
        let cfg = ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            context_len: k,
            d_ff: 16,
            t_max: 64,
            ..ModelConfig::default()
        };
        let params = init_params(&cfg, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let w = random_window(&cfg, 2, &mut rng);
        let tape = Tape::new();
        let vars = params.to_vars(&tape, false).unwrap();
        let x = embed_window(&tape, &vars, &cfg, &w).unwrap();
        assert_eq!(x.shape(), vec![6 * k, 8]);
        let out = forward(&tape, &vars, &cfg, &w).unwrap();
        assert_eq!(out.shape(), vec![2 * k, 3]);
    }
}

#[test]
fn predictions_stay_inside_action_bounds() {
    let cfg = ModelConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        context_len: 3,
        d_ff: 16,
        t_max: 32,
        ..ModelConfig::default()
    };
    let params = init_params(&cfg, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let mut w = random_window(&cfg, 1, &mut rng);
        // exaggerated inputs so the squash actually works for a living
        for v in w.states.iter_mut() {
            *v *= 50.0;
        }
        let tape = Tape::new();
        let vars = params.to_vars(&tape, false).unwrap();
        let out = forward(&tape, &vars, &cfg, &w).unwrap().value();
        assert!(out.data().iter().all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn forward_is_reproducible_and_seed_sensitive() {
    let cfg = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        context_len: 2,
        d_ff: 16,
        t_max: 8,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = random_window(&cfg, 2, &mut rng);

    let run = |seed: u64| -> Vec<f64> {
        let params = init_params(&cfg, seed);
        let tape = Tape::new();
        let vars = params.to_vars(&tape, false).unwrap();
        forward(&tape, &vars, &cfg, &w).unwrap().value().into_data()
    };
    let a = run(42);
    let b = run(42);
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    let c = run(43);
    assert!(a.iter().zip(&c).any(|(x, y)| x != y));
}

#[test]
fn loss_gradient_reaches_only_state_inputs_without_mixing() {
    // With zero transformer layers nothing mixes tokens, so the prediction
    // depends on the state embedding, the timestep table, and the head; the
    // return and action embeddings must receive exactly zero gradient.
    let cfg = ModelConfig {
        d_model: 8,
        n_layers: 0,
        n_heads: 2,
        context_len: 3,
        d_ff: 16,
        t_max: 10,
        ..ModelConfig::default()
    };
    let params = init_params(&cfg, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let w = random_window(&cfg, 2, &mut rng);
    let bk = 2 * cfg.context_len;

    let tape = Tape::new();
    let vars = params.to_vars(&tape, true).unwrap();
    let preds = forward(&tape, &vars, &cfg, &w).unwrap();
    let target_data: Vec<f64> = (0..bk * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let target = tape
        .constant(&Tensor::from_vec(&[bk, 3], target_data).unwrap())
        .unwrap();
    let loss = preds
        .row_mse(&target, &vec![true; bk], bk as f64)
        .unwrap();
    tape.backward(&loss).unwrap();

    let g = |idx: usize| -> Tensor { vars.value(idx).grad().expect("tracked leaf") };
    let max = |t: &Tensor| t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let emb = params.layout().embed.clone();
    assert!(max(&g(emb.w_s)) > 0.0);
    assert!(max(&g(emb.b_s)) > 0.0);
    assert!(max(&g(params.layout().head.w1)) > 0.0);
    for dead in [emb.w_r, emb.b_r, emb.w_a, emb.b_a] {
        assert_eq!(max(&g(dead)), 0.0, "leaf {dead} should sit outside the path");
    }

    // the shared timestep table is read once per step: rows for timesteps
    // present in the window carry gradient, the rest stay zero
    let gt = g(emb.timestep);
    let d = cfg.d_model;
    for row in 0..cfg.t_max {
        let used = w.timesteps.contains(&row);
        let mag = gt.data()[row * d..(row + 1) * d]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(mag > 0.0, used, "timestep row {row}");
    }
}

#[test]
fn changed_timestep_changes_prediction() {
    let cfg = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        context_len: 2,
        d_ff: 16,
        t_max: 16,
        ..ModelConfig::default()
    };
    let params = init_params(&cfg, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let w = random_window(&cfg, 1, &mut rng);
    let mut w2 = w.clone();
    w2.timesteps[1] = (w.timesteps[1] + 7) % cfg.t_max;

    let run = |w: &WindowBatch| -> Vec<f64> {
        let tape = Tape::new();
        let vars = params.to_vars(&tape, false).unwrap();
        forward(&tape, &vars, &cfg, w).unwrap().value().into_data()
    };
    let base = run(&w);
    let moved = run(&w2);
    assert!(max_abs_diff(&base, &moved) > 1e-8);
}
