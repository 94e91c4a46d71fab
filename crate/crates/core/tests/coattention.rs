use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sec2sec_core::coattention::{cross_attention_subblock, multi_head_attention_with_weights, HeadParams, SubBlockParams};
use sec2sec_core::layers::{Init, NORM_EPS};
use sec2sec_core::tensor::{ParamId, ParamStore, Tape, Tensor};

fn rand_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn to_tensor(m: &[Vec<f64>]) -> Tensor<f64> {
    Tensor::from_rows(m).unwrap()
}

fn mat(store: &ParamStore<f64>, id: ParamId) -> Vec<Vec<f64>> {
    let t = store.get(id);
    let cols = t.shape()[1];
    t.data().chunks(cols).map(|r| r.to_vec()).collect()
}

fn mm(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| (0..b[0].len()).map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
        .collect()
}

/// Loop-based multi-head attention.
fn naive_mha(store: &ParamStore<f64>, hp: &HeadParams, q: &[Vec<f64>], kv: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut concat = vec![Vec::new(); q.len()];
    for head in &hp.heads {
        let qh = mm(q, &mat(store, head.w_q));
        let kh = mm(kv, &mat(store, head.w_k));
        let vh = mm(kv, &mat(store, head.w_v));
        for (i, qi) in qh.iter().enumerate() {
            let scores: Vec<f64> = kh
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (hp.d_head as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for d in 0..hp.d_head {
                concat[i].push(e.iter().zip(&vh).map(|(w, v)| w / z * v[d]).sum());
            }
        }
    }
    mm(&concat, &mat(store, hp.w_o))
}

fn naive_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / (var + NORM_EPS).sqrt() * g[i] + b[i])
        .collect()
}

fn assert_close(a: &Tensor<f64>, b: &[Vec<f64>], tol: f64) {
    let flat: Vec<f64> = b.iter().flatten().copied().collect();
    assert_eq!(a.len(), flat.len());
    for (x, y) in a.data().iter().zip(&flat) {
        assert!((x - y).abs() < tol, "{x} vs {y}");
    }
}

#[test]
fn multi_head_attention_matches_loops() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hp = HeadParams::new(&mut Init { store: &mut store, rng: &mut rng }, "mha", 8, 2).unwrap();
    let q = rand_mat(3, 8, &mut rng);
    let kv = rand_mat(5, 8, &mut rng);
    let mut tape = Tape::with_params(&store);
    let (qv, kvv) = (tape.constant(to_tensor(&q)), tape.constant(to_tensor(&kv)));
    let (out, weights) = multi_head_attention_with_weights(&mut tape, qv, kvv, kvv, &hp).unwrap();
    assert_close(tape.value(out), &naive_mha(&store, &hp, &q, &kv), 1e-12);
    for w in weights {
        let t = tape.value(w);
        assert_eq!(t.shape(), &[3, 5]);
        for r in 0..3 {
            assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn cross_subblock_matches_loops() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = SubBlockParams::new(&mut Init { store: &mut store, rng: &mut rng }, "blk", 8, 4, false).unwrap();
    // non-trivial norm affine parameters
    let g: Vec<f64> = (0..8).map(|_| rng.random_range(0.5..1.5)).collect();
    let b: Vec<f64> = (0..8).map(|_| rng.random_range(-0.5..0.5)).collect();
    store.assign("blk.norm.gamma", Tensor::new(vec![8], g.clone()).unwrap()).unwrap();
    store.assign("blk.norm.beta", Tensor::new(vec![8], b.clone()).unwrap()).unwrap();
    let q = rand_mat(2, 8, &mut rng);
    let kv = rand_mat(4, 8, &mut rng);

    let attn = naive_mha(&store, &p.attn, &q, &kv);
    let resid: Vec<Vec<f64>> = attn
        .iter()
        .zip(&q)
        .map(|(a, qi)| naive_norm(a, &g, &b).iter().zip(qi).map(|(x, y)| x + y).collect())
        .collect();
    let bias = |id: ParamId| store.get(id).data().to_vec();
    let hidden: Vec<Vec<f64>> = mm(&resid, &mat(&store, p.ffn.inner.weight))
        .into_iter()
        .map(|r| r.iter().zip(bias(p.ffn.inner.bias.unwrap())).map(|(x, b)| (x + b).max(0.0)).collect())
        .collect();
    let expected: Vec<Vec<f64>> = mm(&hidden, &mat(&store, p.ffn.outer.weight))
        .into_iter()
        .map(|r| r.iter().zip(bias(p.ffn.outer.bias.unwrap())).map(|(x, b)| x + b).collect())
        .collect();

    let mut tape = Tape::with_params(&store);
    let (qv, kvv) = (tape.constant(to_tensor(&q)), tape.constant(to_tensor(&kv)));
    let out = cross_attention_subblock(&mut tape, qv, kvv, &p).unwrap();
    assert_close(tape.value(out), &expected, 1e-12);
}
