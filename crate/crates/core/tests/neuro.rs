use dialoguekit::neuro::{
    bio_mask, cross_entropy, finite_diff_check, load_params, save_params, softmax, Crf, CrfLayer,
    Direction, Embedding, Forest, Init, Linear, Lstm, ParamStore, SequenceEncoder, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_crf(rng: &mut ChaCha8Rng, tags: usize) -> Crf {
    let mut v = |n: usize| {
        (0..n)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect::<Vec<f64>>()
    };
    Crf::new(tags, v(tags * tags), v(tags), v(tags)).unwrap()
}

fn all_paths(len: usize, tags: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..tags).map(move |t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    out
}

/// Brute-force best path with the documented tie rule: among equal scores,
/// prefer the lower tag at the latest position where paths differ.
fn brute_best(crf: &Crf, e: &Tensor) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for p in all_paths(e.rows(), crf.tags) {
        let s = crf.path_score(e, &p);
        let better = match &best {
            None => true,
            Some((bp, bs)) => {
                s > *bs
                    || (s == *bs && {
                        let j = (0..p.len()).rev().find(|&j| p[j] != bp[j]).unwrap();
                        p[j] < bp[j]
                    })
            }
        };
        if better {
            best = Some((p, s));
        }
    }
    best.unwrap()
}

#[test]
fn crf_matches_exhaustive_enumeration() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let len = rng.random_range(1..=5);
        let tags = rng.random_range(1..=4);
        let crf = random_crf(&mut rng, tags);
        let e = Tensor::from_vec(
            &[len, tags],
            (0..len * tags)
                .map(|_| rng.random_range(-3.0..3.0))
                .collect(),
        )
        .unwrap();
        let scores: Vec<f64> = all_paths(len, tags)
            .iter()
            .map(|p| crf.path_score(&e, p))
            .collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let brute_z = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        let z = crf.log_partition(&e).unwrap();
        assert!((z - brute_z).abs() < 1e-8, "{z} vs {brute_z}");
        assert!(scores.iter().all(|&s| s <= z + 1e-12));
        let (path, score) = crf.viterbi(&e).unwrap();
        let (bp, bs) = brute_best(&crf, &e);
        assert_eq!(path, bp);
        assert!((score - bs).abs() < 1e-12);
        assert!((crf.path_score(&e, &path) - score).abs() < 1e-12);
        assert!(score <= z);
    }
    assert!(started.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn viterbi_tie_rule_on_integer_potentials() {
    // small integer potentials produce many exact ties
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..300 {
        let len = rng.random_range(1..=4);
        let tags = rng.random_range(2..=3);
        let mut int = |n: usize| {
            (0..n)
                .map(|_| f64::from(rng.random_range(-1..=1)))
                .collect::<Vec<f64>>()
        };
        let crf = Crf::new(tags, int(tags * tags), int(tags), int(tags)).unwrap();
        let e = Tensor::from_vec(&[len, tags], int(len * tags)).unwrap();
        assert_eq!(crf.viterbi(&e).unwrap().0, brute_best(&crf, &e).0);
    }
}

#[test]
fn masked_crf_never_decodes_malformed_bio() {
    let types = 2;
    let (tm, sm) = bio_mask(types);
    let mut store = ParamStore::new(1);
    let layer = CrfLayer::new(&mut store, "crf", 1 + 2 * types, tm, sm).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for id in [layer.trans, layer.start, layer.stop] {
        for x in store.value_mut(id).data_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
    }
    for _ in 0..500 {
        let len = rng.random_range(1..=6);
        let e = Tensor::from_vec(
            &[len, 5],
            (0..len * 5).map(|_| rng.random_range(-4.0..4.0)).collect(),
        )
        .unwrap();
        let path = layer.decode(&store, &e).unwrap();
        for (i, &t) in path.iter().enumerate() {
            if t > 0 && t % 2 == 0 {
                assert!(
                    i > 0 && (path[i - 1] == t || path[i - 1] == t - 1),
                    "{path:?}"
                );
            }
        }
        // masked partition equals enumeration over well-formed paths only
        let crf = layer.potentials(&store);
        let ok: Vec<f64> = all_paths(len, 5)
            .iter()
            .map(|p| crf.path_score(&e, p))
            .filter(|s| s.is_finite())
            .collect();
        let m = ok.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z = m + ok.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        if len <= 4 {
            assert!((crf.log_partition(&e).unwrap() - z).abs() < 1e-8);
        }
    }
}

fn fill_random(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for x in store.value_mut(id).data_mut() {
            *x = rng.random_range(-0.8..0.8);
        }
    }
}

fn random_vecs(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

#[test]
fn crf_nll_gradient() {
    let (tm, sm) = bio_mask(1);
    let mut store = ParamStore::new(0);
    let crf = CrfLayer::new(&mut store, "crf", 3, tm, sm).unwrap();
    let proj = Linear::new(&mut store, "proj", 4, 3).unwrap();
    fill_random(&mut store, 1);
    let xs = random_vecs(2, 5, 4);
    let gold = [0, 1, 2, 2, 0];
    let check = finite_diff_check(&mut store, 1e-5, 0, |s| {
        let rows: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| proj.forward(s, x))
            .collect::<Result<_, _>>()?;
        let e = Tensor::from_vec(&[5, 3], rows.concat())?;
        let (loss, de) = crf.nll(s, &e, &gold)?;
        for (x, i) in xs.iter().zip(0..) {
            proj.backward(s, x, de.row(i));
        }
        Ok(loss)
    })
    .unwrap();
    assert!(check.max_rel_error < 1e-4, "{check:?}");
}

#[test]
fn linear_softmax_gradient_and_normalisation() {
    let mut store = ParamStore::new(0);
    let emb = Embedding::new(&mut store, "emb", 7, 3).unwrap();
    let lin = Linear::new(&mut store, "lin", 3, 5).unwrap();
    fill_random(&mut store, 3);
    let check = finite_diff_check(&mut store, 1e-5, 0, |s| {
        let x = emb.lookup(s, 4).to_vec();
        let logits = lin.forward(s, &x)?;
        let (loss, dlogits) = cross_entropy(&logits, 2);
        let dx = lin.backward(s, &x, &dlogits);
        emb.accumulate(s, 4, &dx);
        Ok(loss)
    })
    .unwrap();
    assert!(check.max_rel_error < 1e-4, "{check:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-50.0..50.0)).collect();
        let p = softmax(&lin.forward(&store, &x).unwrap());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&q| q >= 0.0));
    }
    let zero = ParamStore::new(0);
    let mut z = zero.clone();
    let l0 = Linear::new(&mut z, "l", 3, 4).unwrap();
    z.value_mut(l0.w).fill(0.0);
    let p = softmax(&l0.forward(&z, &[1.0, 2.0, 3.0]).unwrap());
    assert!(p.iter().all(|&q| (q - 0.25).abs() < 1e-15));
}

#[test]
fn lstm_single_step_by_hand() {
    let mut store = ParamStore::new(0);
    let lstm = Lstm::new(&mut store, "cell", 1, 2).unwrap();
    // [4h × (in + h)] = [8 × 3]; only the input column is non-zero
    let input_col = [0.5, -0.5, 0.3, 0.3, 1.0, -1.0, 2.0, 0.0];
    let w = store.value_mut(lstm.w);
    w.fill(0.0);
    for (r, v) in input_col.iter().enumerate() {
        w.row_mut(r)[0] = *v;
    }
    let mut f = Forest::new(lstm);
    let n = f.push(&store, None, &[1.0]).unwrap();
    // values from an independent scalar evaluation of the cell equations
    let expected = [0.3888498844368542, -0.13993119716844302];
    for (a, b) in f.h(Some(n)).iter().zip(expected) {
        assert!((a - b).abs() < 1e-15, "{a} vs {b}");
    }
}

#[test]
fn zero_lstm_gives_zero_states() {
    let mut store = ParamStore::new(0);
    let enc = SequenceEncoder::new(&mut store, "enc", 3, 4, Direction::Bi).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.value_mut(id).fill(0.0);
    }
    let tape = enc.encode(&store, &random_vecs(0, 3, 3)).unwrap();
    assert_eq!(tape.outputs.len(), 3);
    assert!(tape
        .outputs
        .iter()
        .all(|o| o.len() == 8 && o.iter().all(|&x| x == 0.0)));
    let empty = enc.encode(&store, &[]).unwrap();
    assert!(empty.outputs.is_empty());
    assert_eq!(empty.last, vec![0.0; 8]);
    assert!(enc.encode(&store, &[vec![0.0; 2]]).is_err());
}

#[test]
fn sequence_encoder_gradients_all_directions() {
    for dir in [Direction::Forward, Direction::Backward, Direction::Bi] {
        let mut store = ParamStore::new(0);
        let enc = SequenceEncoder::new(&mut store, "enc", 3, 4, dir).unwrap();
        let emb = Embedding::new(&mut store, "emb", 5, 3).unwrap();
        let head = Linear::new(&mut store, "head", enc.output_dim(), 1).unwrap();
        fill_random(&mut store, 7);
        let toks = [1usize, 3, 3, 0];
        let check = finite_diff_check(&mut store, 1e-5, 0, |s| {
            let xs: Vec<Vec<f64>> = toks.iter().map(|&t| emb.lookup(s, t).to_vec()).collect();
            let tape = enc.encode(s, &xs)?;
            // loss mixes per-position outputs and the final state
            let mut loss = 0.0;
            let mut d_out = Vec::new();
            for (t, o) in tape.outputs.iter().enumerate() {
                let y = head.forward(s, o)?[0];
                loss += (t as f64 + 1.0) * y * y;
                d_out.push(head.backward(s, o, &[2.0 * (t as f64 + 1.0) * y]));
            }
            let y = head.forward(s, &tape.last)?[0];
            loss += y.sin();
            let d_last = head.backward(s, &tape.last, &[y.cos()]);
            let dx = enc.backward(s, &tape, &d_out, &d_last);
            for (&t, g) in toks.iter().zip(&dx) {
                emb.accumulate(s, t, g);
            }
            Ok(loss)
        })
        .unwrap();
        assert!(check.max_rel_error < 1e-4, "{dir:?}: {check:?}");
    }
}

#[test]
fn forest_shares_prefixes_and_backpropagates_through_branches() {
    let mut store = ParamStore::new(0);
    let lstm = Lstm::new(&mut store, "cell", 2, 3).unwrap();
    fill_random(&mut store, 11);
    let xs = random_vecs(12, 4, 2);
    // root -> a -> {b, c}, and separate root d
    let build = |s: &ParamStore| {
        let mut f = Forest::new(lstm);
        let a = f.push(s, None, &xs[0]).unwrap();
        let ab = f.push(s, Some(a), &xs[1]).unwrap();
        let ac = f.push(s, Some(a), &xs[2]).unwrap();
        let d = f.push(s, None, &xs[3]).unwrap();
        (f, [a, ab, ac, d])
    };
    // shared prefix yields the same state as a plain sequence
    let enc = SequenceEncoder {
        direction: Direction::Forward,
        fw: Some(lstm),
        bw: None,
        input: 2,
        hidden: 3,
    };
    let (f, nodes) = build(&store);
    let seq = enc.encode(&store, &[xs[0].clone(), xs[2].clone()]).unwrap();
    assert_eq!(f.h(Some(nodes[2])), seq.last.as_slice());

    let check = finite_diff_check(&mut store, 1e-5, 0, |s| {
        let (f, nodes) = build(s);
        let weights = [0.5, -1.0, 2.0, 1.5];
        let mut loss = 0.0;
        let mut dh = vec![Vec::new(); f.len()];
        for (&n, w) in nodes.iter().zip(weights) {
            let h = f.h(Some(n));
            loss += w * h.iter().map(|x| x * x).sum::<f64>();
            dh[n] = h.iter().map(|x| 2.0 * w * x).collect();
        }
        f.backward(s, dh);
        Ok(loss)
    })
    .unwrap();
    assert!(check.max_rel_error < 1e-4, "{check:?}");
}

#[test]
fn checkpoint_of_layers_round_trips() {
    let mut store = ParamStore::new(3);
    SequenceEncoder::new(&mut store, "enc", 3, 4, Direction::Bi).unwrap();
    store
        .add("extra", &[2, 2], Init::Uniform { fan_in: 2 })
        .unwrap();
    let bytes = save_params(&store);
    let loaded = load_params(&bytes).unwrap();
    let mut fresh = ParamStore::new(99);
    SequenceEncoder::new(&mut fresh, "enc", 3, 4, Direction::Bi).unwrap();
    fresh.add("extra", &[2, 2], Init::Zeros).unwrap();
    fresh.assign(&loaded).unwrap();
    assert_eq!(save_params(&fresh), bytes);
    let mut other = ParamStore::new(0);
    other.add("different", &[1], Init::Zeros).unwrap();
    assert!(other.assign(&loaded).is_err());
}
