//! Oracle tests for the tape ops: every operation is compared against an
//! independent brute-force computation, and the trivial identities from the
//! op contracts are pinned.

#![cfg(test)]

use crate::nn::{Forward, ParamStore};
use crate::tape::{Mode, Tape, Value};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn leaf(tape: &mut Tape, t: Tensor) -> Value {
    tape.leaf(t, false)
}

// ── conv1d ──────────────────────────────────────────────────────────────

/// Nested-loop cross-correlation, written independently of the tape kernel:
/// walks output positions and sums w[co,ci,dk]·x[ci, t·s + dk − p].
fn conv1d_oracle(
    x: &[f64],
    w: &[f64],
    b: Option<&[f64]>,
    n: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let lo = (l + 2 * padding - k) / stride + 1;
    let mut out = vec![0.0; n * c_out * lo];
    for i in 0..n {
        for co in 0..c_out {
            for t in 0..lo {
                let mut acc = b.map_or(0.0, |b| b[co]);
                for ci in 0..c_in {
                    for dk in 0..k {
                        let src = (t * stride + dk) as isize - padding as isize;
                        if src >= 0 && (src as usize) < l {
                            acc += w[(co * c_in + ci) * k + dk]
                                * x[(i * c_in + ci) * l + src as usize];
                        }
                    }
                }
                out[(i * c_out + co) * lo + t] = acc;
            }
        }
    }
    out
}

#[test]
fn conv1d_zero_input_broadcasts_bias() {
    let mut tape = Tape::new();
    let x = leaf(&mut tape, Tensor::zeros(&[2, 3, 8]));
    let w = leaf(&mut tape, Tensor::full(&[4, 3, 3], 0.7));
    let b = leaf(&mut tape, Tensor::new(vec![4], vec![1.0, -2.0, 0.5, 3.0]));
    let out = tape.conv1d(x, w, Some(b), 1, 1).unwrap();
    let o = tape.value(out);
    assert_eq!(o.shape(), &[2, 4, 8]);
    for i in 0..2 {
        for (co, expect) in [1.0, -2.0, 0.5, 3.0].iter().enumerate() {
            for t in 0..8 {
                assert_eq!(o.data()[(i * 4 + co) * 8 + t], *expect);
            }
        }
    }
}

#[test]
fn conv1d_identity_kernel_returns_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::uniform(&[2, 3, 6], 1.0, &mut rng);
    // k=1 weight = identity over channels
    let mut w = vec![0.0; 3 * 3];
    for c in 0..3 {
        w[c * 3 + c] = 1.0;
    }
    let mut tape = Tape::new();
    let xv = leaf(&mut tape, x.clone());
    let wv = leaf(&mut tape, Tensor::new(vec![3, 3, 1], w));
    let bv = leaf(&mut tape, Tensor::zeros(&[3]));
    let out = tape.conv1d(xv, wv, Some(bv), 1, 0).unwrap();
    assert_eq!(tape.value(out).data(), x.data());
}

#[test]
fn conv1d_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for &(stride, padding) in &[(1usize, 1usize), (2, 1), (1, 0), (2, 2)] {
        let x = Tensor::uniform(&[2, 3, 8], 1.0, &mut rng);
        let w = Tensor::uniform(&[4, 3, 3], 1.0, &mut rng);
        let b = Tensor::uniform(&[4], 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = leaf(&mut tape, x.clone());
        let wv = leaf(&mut tape, w.clone());
        let bv = leaf(&mut tape, b.clone());
        let out = tape.conv1d(xv, wv, Some(bv), stride, padding).unwrap();
        let expect = conv1d_oracle(
            x.data(),
            w.data(),
            Some(b.data()),
            2,
            3,
            8,
            4,
            3,
            stride,
            padding,
        );
        for (a, e) in tape.value(out).data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-10, "stride {stride} pad {padding}: {a} vs {e}");
        }
    }
}

#[test]
fn conv1d_rejects_shape_mismatch_and_nonfinite() {
    let mut tape = Tape::new();
    let x = leaf(&mut tape, Tensor::zeros(&[1, 2, 8]));
    let w = leaf(&mut tape, Tensor::zeros(&[4, 3, 3]));
    assert!(matches!(
        tape.conv1d(x, w, None, 1, 1),
        Err(crate::error::Error::Config(_))
    ));

    let mut tape = Tape::new();
    let x = leaf(&mut tape, Tensor::new(vec![1, 1, 4], vec![0.0, f64::NAN, 0.0, 0.0]));
    let w = leaf(&mut tape, Tensor::zeros(&[1, 1, 3]));
    assert!(matches!(
        tape.conv1d(x, w, None, 1, 1),
        Err(crate::error::Error::Numeric(_))
    ));
}

// ── batch norm ──────────────────────────────────────────────────────────

/// Two-pass per-channel mean / biased variance over the (batch, time) axes.
fn bn_stats_oracle(x: &[f64], n: usize, ch: usize, l: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (n * l) as f64;
    let mut mean = vec![0.0; ch];
    let mut var = vec![0.0; ch];
    for c in 0..ch {
        let mut s = 0.0;
        for i in 0..n {
            for t in 0..l {
                s += x[(i * ch + c) * l + t];
            }
        }
        mean[c] = s / m;
        let mut sq = 0.0;
        for i in 0..n {
            for t in 0..l {
                let d = x[(i * ch + c) * l + t] - mean[c];
                sq += d * d;
            }
        }
        var[c] = sq / m;
    }
    (mean, var)
}

#[test]
fn batchnorm_constant_input_normalizes_to_beta() {
    let mut store = ParamStore::new();
    let bn = crate::nn::BatchNorm1d::new(&mut store, "bn", 2);
    store.param_mut(bn.beta).value = Tensor::new(vec![2], vec![0.25, -1.0]);
    let mut fw = Forward::new(&mut store, Mode::Train);
    let mut x = Tensor::zeros(&[3, 2, 4]);
    for i in 0..3 {
        for t in 0..4 {
            x.data_mut()[(i * 2) * 4 + t] = 5.0; // channel 0 constant 5
            x.data_mut()[(i * 2 + 1) * 4 + t] = -2.0; // channel 1 constant -2
        }
    }
    let xv = fw.input(x);
    let out = bn.forward(&mut fw, xv).unwrap();
    let o = fw.tape.value(out);
    for i in 0..3 {
        for t in 0..4 {
            assert!((o.data()[(i * 2) * 4 + t] - 0.25).abs() < 1e-12);
            assert!((o.data()[(i * 2 + 1) * 4 + t] + 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn batchnorm_is_near_identity_on_standardized_input() {
    // Build an input that is exactly zero-mean unit-variance per channel.
    let mut x = Tensor::zeros(&[1, 1, 4]);
    x.data_mut().copy_from_slice(&[1.0, -1.0, 1.0, -1.0]);
    let mut store = ParamStore::new();
    let bn = crate::nn::BatchNorm1d::new(&mut store, "bn", 1);
    let mut fw = Forward::new(&mut store, Mode::Train);
    let xv = fw.input(x.clone());
    let out = bn.forward(&mut fw, xv).unwrap();
    // eps pulls the scale slightly below 1
    for (o, xi) in fw.tape.value(out).data().iter().zip(x.data()) {
        assert!((o - xi).abs() < 1e-5, "{o} vs {xi}");
    }
}

#[test]
fn batchnorm_batch_stats_match_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::uniform(&[4, 2, 5], 2.0, &mut rng);
    let (mean, var) = bn_stats_oracle(x.data(), 4, 2, 5);

    let mut store = ParamStore::new();
    let bn = crate::nn::BatchNorm1d::new(&mut store, "bn", 2);
    let mut fw = Forward::new(&mut store, Mode::Train);
    let xv = fw.input(x.clone());
    let out = bn.forward(&mut fw, xv).unwrap();
    // Reconstruct the statistics the op used from its output: for gamma=1,
    // beta=0, out = (x - mean)/sqrt(var + eps).
    let o = fw.tape.value(out).data();
    for c in 0..2 {
        let inv = o[c * 5] / (x.data()[c * 5] - mean[c]);
        let implied_var = 1.0 / (inv * inv) - bn.eps;
        assert!((implied_var - var[c]).abs() < 1e-10, "channel {c}");
    }
    // Running stats after one step: (1-mom)*init + mom*batch (unbiased var).
    let m = (4 * 5) as f64;
    let rm = store.buffer(bn.running_mean).value.data();
    let rv = store.buffer(bn.running_var).value.data();
    for c in 0..2 {
        assert!((rm[c] - 0.1 * mean[c]).abs() < 1e-12);
        let unbiased = var[c] * m / (m - 1.0);
        assert!((rv[c] - (0.9 + 0.1 * unbiased)).abs() < 1e-12);
    }
}

#[test]
fn batchnorm_eval_is_pure_function_of_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let bn = crate::nn::BatchNorm1d::new(&mut store, "bn", 2);
    // one train pass to initialize running stats
    {
        let mut fw = Forward::new(&mut store, Mode::Train);
        let xv = fw.input(Tensor::uniform(&[4, 2, 5], 1.0, &mut rng));
        bn.forward(&mut fw, xv).unwrap();
    }
    let x = Tensor::uniform(&[2, 2, 5], 1.0, &mut rng);
    let run = |store: &mut ParamStore| {
        let mut fw = Forward::new(store, Mode::Eval);
        let xv = fw.input(x.clone());
        let out = bn.forward(&mut fw, xv).unwrap();
        fw.tape.value(out).data().to_vec()
    };
    let a = run(&mut store);
    let b = run(&mut store);
    assert_eq!(a, b, "eval mode must be deterministic and side-effect free");
}

// ── layer norm ──────────────────────────────────────────────────────────

#[test]
fn layer_norm_constant_rows_give_beta() {
    let mut store = ParamStore::new();
    let ln = crate::nn::LayerNorm::new(&mut store, "ln", 3);
    store.param_mut(ln.beta).value = Tensor::new(vec![3], vec![0.5, 0.5, 0.5]);
    let mut fw = Forward::new(&mut store, Mode::Eval);
    let xv = fw.input(Tensor::full(&[2, 3], 7.0));
    let out = ln.forward(&mut fw, xv).unwrap();
    for v in fw.tape.value(out).data() {
        assert!((v - 0.5).abs() < 1e-12);
    }
}

#[test]
fn layer_norm_width_one_is_zero() {
    let mut store = ParamStore::new();
    let ln = crate::nn::LayerNorm::new(&mut store, "ln", 1);
    let mut fw = Forward::new(&mut store, Mode::Eval);
    let xv = fw.input(Tensor::new(vec![3, 1], vec![5.0, -17.0, 0.3]));
    let out = ln.forward(&mut fw, xv).unwrap();
    for v in fw.tape.value(out).data() {
        assert!(v.abs() < 1e-9, "width-1 rows normalize to 0, got {v}");
    }
}

#[test]
fn layer_norm_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::uniform(&[4, 6], 2.0, &mut rng);
    let mut store = ParamStore::new();
    let ln = crate::nn::LayerNorm::new(&mut store, "ln", 6);
    let mut fw = Forward::new(&mut store, Mode::Eval);
    let xv = fw.input(x.clone());
    let out = ln.forward(&mut fw, xv).unwrap();
    let o = fw.tape.value(out).data();
    for r in 0..4 {
        let row = &x.data()[r * 6..(r + 1) * 6];
        let mu = row.iter().sum::<f64>() / 6.0;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 6.0;
        for j in 0..6 {
            let expect = (row[j] - mu) / (var + 1e-5).sqrt();
            assert!((o[r * 6 + j] - expect).abs() < 1e-10);
        }
    }
}

// ── linear ──────────────────────────────────────────────────────────────

#[test]
fn linear_identity_and_constant_cases() {
    let mut tape = Tape::new();
    let x = leaf(&mut tape, Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]));
    let mut id_w = vec![0.0; 9];
    for i in 0..3 {
        id_w[i * 3 + i] = 1.0;
    }
    let w = leaf(&mut tape, Tensor::new(vec![3, 3], id_w));
    let b = leaf(&mut tape, Tensor::zeros(&[3]));
    let out = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(out).data(), &[1., 2., 3., 4., 5., 6.]);

    let zero_w = leaf(&mut tape, Tensor::zeros(&[2, 3]));
    let bias = leaf(&mut tape, Tensor::new(vec![2], vec![-1.5, 2.5]));
    let out2 = tape.linear(x, zero_w, bias).unwrap();
    assert_eq!(tape.value(out2).data(), &[-1.5, 2.5, -1.5, 2.5]);
}

#[test]
fn linear_matches_naive_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Tensor::uniform(&[3, 4], 1.0, &mut rng);
    let w = Tensor::uniform(&[2, 4], 1.0, &mut rng);
    let b = Tensor::uniform(&[2], 1.0, &mut rng);
    let mut tape = Tape::new();
    let xv = leaf(&mut tape, x.clone());
    let wv = leaf(&mut tape, w.clone());
    let bv = leaf(&mut tape, b.clone());
    let out = tape.linear(xv, wv, bv).unwrap();
    for r in 0..3 {
        for o in 0..2 {
            let mut expect = b.data()[o];
            for j in 0..4 {
                expect += x.data()[r * 4 + j] * w.data()[o * 4 + j];
            }
            assert!((tape.value(out).data()[r * 2 + o] - expect).abs() < 1e-10);
        }
    }
}

// ── embedding ───────────────────────────────────────────────────────────

#[test]
fn embedding_gathers_rows_and_rejects_out_of_range() {
    let mut tape = Tape::new();
    let table = leaf(
        &mut tape,
        Tensor::new(vec![3, 2], vec![0.0, 0.1, 1.0, 1.1, 2.0, 2.1]),
    );
    let out = tape.embedding(table, &[0, 2, 0]).unwrap();
    assert_eq!(tape.value(out).data(), &[0.0, 0.1, 2.0, 2.1, 0.0, 0.1]);
    assert!(matches!(
        tape.embedding(table, &[3]),
        Err(crate::error::Error::Input(_))
    ));
}

#[test]
fn embedding_gradient_accumulates_repeated_ids() {
    // Sum over two lookups of the same id: the table row's gradient is 2.
    let mut tape = Tape::new();
    let table = tape.leaf(Tensor::new(vec![2, 2], vec![0.5, -0.5, 1.0, 2.0]), true);
    let e = tape.embedding(table, &[1, 1]).unwrap();
    // loss = sum of all gathered entries = via weighted CE would be awkward;
    // use mean_pool via reshape + segment trick: simplest is linear with ones.
    let ones_w = tape.leaf(Tensor::full(&[1, 2], 1.0), false);
    let zero_b = tape.leaf(Tensor::zeros(&[1]), false);
    let summed = tape.linear(e, ones_w, zero_b).unwrap(); // [2,1]
    let total = tape.segment_mean(summed, &[0, 2]).unwrap(); // mean of 2 rows
    let loss = tape.scale(total, 2.0); // back to a sum
    let loss = tape.reshape(loss, &[]);
    tape.backward(loss).unwrap();
    let g = tape.grad(table).unwrap();
    assert_eq!(g.data(), &[0.0, 0.0, 2.0, 2.0]);
}

// ── softmax cross-entropy ───────────────────────────────────────────────

#[test]
fn cross_entropy_uniform_logits_is_ln_classes() {
    let mut tape = Tape::new();
    let logits = leaf(&mut tape, Tensor::zeros(&[2, 4]));
    let loss = tape.softmax_cross_entropy(logits, &[1, 3]).unwrap();
    assert!((tape.value(loss).item() - 4.0f64.ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_saturates_to_zero_with_large_margin() {
    let mut tape = Tape::new();
    let mut logits = Tensor::zeros(&[1, 3]);
    logits.data_mut()[2] = 50.0;
    let l = leaf(&mut tape, logits);
    let loss = tape.softmax_cross_entropy(l, &[2]).unwrap();
    assert!(tape.value(loss).item() < 1e-20);
}

#[test]
fn cross_entropy_matches_log_sum_exp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = Tensor::uniform(&[3, 5], 3.0, &mut rng);
    let labels = [4usize, 0, 2];
    let mut expect = 0.0;
    for i in 0..3 {
        let row = &logits.data()[i * 5..(i + 1) * 5];
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        expect += (lse - row[labels[i]]) / 3.0;
    }
    let mut tape = Tape::new();
    let l = leaf(&mut tape, logits);
    let loss = tape.softmax_cross_entropy(l, &labels).unwrap();
    assert!((tape.value(loss).item() - expect).abs() < 1e-10);

    let mut tape = Tape::new();
    let l = leaf(&mut tape, Tensor::zeros(&[1, 3]));
    assert!(matches!(
        tape.softmax_cross_entropy(l, &[3]),
        Err(crate::error::Error::Input(_))
    ));
}

// ── pooling, segments, slot pieces ──────────────────────────────────────

#[test]
fn segment_mean_matches_filtered_sum_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::uniform(&[7, 3], 1.0, &mut rng);
    let offsets = [0usize, 2, 5, 7];
    let mut tape = Tape::new();
    let xv = leaf(&mut tape, x.clone());
    let out = tape.segment_mean(xv, &offsets).unwrap();
    for s in 0..3 {
        let (lo, hi) = (offsets[s], offsets[s + 1]);
        for j in 0..3 {
            let mut sum = 0.0;
            for r in lo..hi {
                sum += x.data()[r * 3 + j];
            }
            let expect = sum / (hi - lo) as f64;
            assert!((tape.value(out).data()[s * 3 + j] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn mean_pool_time_averages_each_channel() {
    let x = Tensor::new(vec![1, 2, 3], vec![1., 2., 3., 10., 20., 30.]);
    let mut tape = Tape::new();
    let xv = leaf(&mut tape, x);
    let out = tape.mean_pool_time(xv).unwrap();
    assert_eq!(tape.value(out).data(), &[2.0, 20.0]);
}

#[test]
fn channel_summaries_match_direct_statistics() {
    let x = Tensor::new(vec![1, 4], vec![1.0, -3.0, 2.0, 0.0]);
    let mut tape = Tape::new();
    let xv = leaf(&mut tape, x);
    let out = tape.channel_summaries(xv).unwrap();
    let s = tape.value(out).data();
    assert!((s[0] - 0.0).abs() < 1e-12, "mean");
    let var = (1.0 + 9.0 + 4.0 + 0.0) / 4.0;
    assert!((s[1] - (var + 1e-12f64).sqrt()).abs() < 1e-10, "std");
    assert_eq!(s[2], 2.0, "max");
    assert_eq!(s[3], -3.0, "min");
    assert!((s[4] - var).abs() < 1e-12, "energy = mean square (zero-mean row)");
}

#[test]
fn softmax_cols_and_row_normalize_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::uniform(&[4, 3], 2.0, &mut rng);
    let mut tape = Tape::new();
    let xv = leaf(&mut tape, x);
    let sm = tape.softmax_cols(xv).unwrap();
    // columns sum to one
    let s = tape.value(sm).data().to_vec();
    for j in 0..3 {
        let col: f64 = (0..4).map(|i| s[i * 3 + j]).sum();
        assert!((col - 1.0).abs() < 1e-12);
    }
    let rn = tape.row_normalize(sm).unwrap();
    let r = tape.value(rn).data();
    for i in 0..4 {
        let row: f64 = r[i * 3..(i + 1) * 3].iter().sum();
        assert!((row - 1.0).abs() < 1e-10);
    }
}

// ── gradient spot checks across ops ─────────────────────────────────────

#[test]
fn composite_graph_input_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x0 = Tensor::uniform(&[2, 2, 8], 1.0, &mut rng);
    let w = Tensor::uniform(&[3, 2, 3], 1.0, &mut rng);
    let labels = [1usize, 0];

    let forward = |x: &Tensor, want_grad: bool| -> (f64, Option<Tensor>) {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), true);
        let wv = tape.leaf(w.clone(), false);
        let conv = tape.conv1d(xv, wv, None, 1, 1).unwrap();
        let act = tape.relu(conv);
        let pooled = tape.mean_pool_time(act).unwrap();
        let loss = tape.softmax_cross_entropy(pooled, &labels).unwrap();
        let l = tape.value(loss).item();
        if want_grad {
            tape.backward(loss).unwrap();
            (l, Some(tape.grad(xv).unwrap().clone()))
        } else {
            (l, None)
        }
    };

    let (_, grad) = forward(&x0, true);
    let grad = grad.unwrap();
    let h = 1e-5;
    let mut max_rel: f64 = 0.0;
    for i in 0..x0.numel() {
        let mut xp = x0.clone();
        xp.data_mut()[i] += h;
        let (lp, _) = forward(&xp, false);
        let mut xm = x0.clone();
        xm.data_mut()[i] -= h;
        let (lm, _) = forward(&xm, false);
        let numeric = (lp - lm) / (2.0 * h);
        let a = grad.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
        max_rel = max_rel.max(rel);
    }
    assert!(max_rel < 1e-4, "conv1d+relu+CE composite: max rel err {max_rel}");
}

#[test]
fn matmul_variants_agree_with_explicit_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = Tensor::uniform(&[3, 4], 1.0, &mut rng);
    let b = Tensor::uniform(&[4, 2], 1.0, &mut rng);
    let bt = {
        // transpose b to [2,4]
        let mut data = vec![0.0; 8];
        for i in 0..4 {
            for j in 0..2 {
                data[j * 4 + i] = b.data()[i * 2 + j];
            }
        }
        Tensor::new(vec![2, 4], data)
    };
    let mut tape = Tape::new();
    let av = leaf(&mut tape, a.clone());
    let bv = leaf(&mut tape, b.clone());
    let btv = leaf(&mut tape, bt);
    let y1 = tape.matmul(av, bv).unwrap();
    let y2 = tape.matmul_nt(av, btv).unwrap();
    assert_eq!(tape.value(y1).data(), tape.value(y2).data());
    for i in 0..3 {
        for j in 0..2 {
            let mut expect = 0.0;
            for p in 0..4 {
                expect += a.data()[i * 4 + p] * b.data()[p * 2 + j];
            }
            assert!((tape.value(y1).data()[i * 2 + j] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn concat_and_slice_round_trip() {
    let mut tape = Tape::new();
    let a = leaf(&mut tape, Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]));
    let b = leaf(&mut tape, Tensor::new(vec![1, 2], vec![5., 6.]));
    let cat = tape.concat_rows(&[a, b]).unwrap();
    assert_eq!(tape.value(cat).shape(), &[3, 2]);
    let back = tape.slice_rows(cat, 2, 1).unwrap();
    assert_eq!(tape.value(back).data(), &[5., 6.]);

    let w = tape.concat_last(&[a, a]).unwrap();
    assert_eq!(tape.value(w).shape(), &[2, 4]);
    assert_eq!(tape.value(w).data(), &[1., 2., 1., 2., 3., 4., 3., 4.]);
}
