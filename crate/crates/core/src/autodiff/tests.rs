use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn t(shape: Vec<usize>, v: &[f64]) -> Tensor {
    Tensor::new(shape, v.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn conv_identity_kernel() {
    let mut tape = Tape::new();
    let x = tape.input(t(vec![2, 1], &[3.0, 5.0]));
    let w = tape.input(t(vec![1, 1, 1], &[1.0]));
    let b = tape.input(t(vec![1], &[0.0]));
    let y = tape.conv1d(x, w, b, ConvMode::Centered).unwrap();
    assert_eq!(tape.value(y), &[3.0, 5.0]);
}

#[test]
fn conv_zero_weights_gives_bias() {
    let mut tape = Tape::new();
    let x = tape.input(t(vec![4, 2], &[1.0, -2.0, 0.5, 3.0, 9.0, 1.0, 2.0, 2.0]));
    let w = tape.input(Tensor::zeros(vec![3, 2, 1]));
    let b = tape.input(t(vec![1], &[0.7]));
    let y = tape.conv1d(x, w, b, ConvMode::Causal).unwrap();
    assert_eq!(tape.value(y), &[0.7; 4]);
}

#[test]
fn conv_centered_sliding_window() {
    let mut tape = Tape::new();
    let x = tape.input(t(vec![3, 1], &[1.0, 2.0, 3.0]));
    let w = tape.input(t(vec![3, 1, 1], &[1.0, 1.0, 1.0]));
    let b = tape.input(t(vec![1], &[0.0]));
    let y = tape.conv1d(x, w, b, ConvMode::Centered).unwrap();
    assert_eq!(tape.value(y), &[3.0, 6.0, 5.0]);
}

#[test]
fn conv_causal_sees_only_the_past() {
    let mut tape = Tape::new();
    let x = tape.input(t(vec![3, 1], &[1.0, 2.0, 3.0]));
    let w = tape.input(t(vec![3, 1, 1], &[1.0, 10.0, 100.0]));
    let b = tape.input(t(vec![1], &[0.0]));
    let y = tape.conv1d(x, w, b, ConvMode::Causal).unwrap();
    // tap 2 hits the current position, taps 0 and 1 reach two and one steps back
    assert_eq!(tape.value(y), &[100.0, 210.0, 321.0]);
}

#[test]
fn conv_shape_error_reports_both_shapes() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::zeros(vec![3, 2]));
    let w = tape.input(Tensor::zeros(vec![3, 4, 1]));
    let b = tape.input(Tensor::zeros(vec![1]));
    match tape.conv1d(x, w, b, ConvMode::Centered) {
        Err(Error::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![3, 2]);
            assert_eq!(rhs, vec![3, 4, 1]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn glu_examples() {
    let mut tape = Tape::new();
    let x = tape.input(t(vec![1, 2], &[1.0, 0.0]));
    let y = tape.glu(x).unwrap();
    assert_eq!(tape.value(y), &[0.5]);
    let x = tape.input(t(vec![1, 2], &[0.0, 7.0]));
    let y = tape.glu(x).unwrap();
    assert_eq!(tape.value(y), &[0.0]);
    let x = tape.input(Tensor::zeros(vec![2, 3]));
    assert!(matches!(tape.glu(x), Err(Error::Shape { .. })));
}

#[test]
fn glu_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(vec![5, 8], &mut rng);
    let mut tape = Tape::new();
    let v = tape.input(x.clone());
    let y = tape.glu(v).unwrap();
    let mut expected = Vec::new();
    for row in x.values.chunks(8) {
        for j in 0..4 {
            expected.push(row[j] / (1.0 + (-row[4 + j]).exp()));
        }
    }
    assert!(close(tape.value(y), &expected, 1e-12));
    for (out, row) in tape.value(y).chunks(4).zip(x.values.chunks(8)) {
        for j in 0..4 {
            assert!(out[j].abs() < row[j].abs() || row[j] == 0.0);
        }
    }
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.input(t(vec![2], &[0.0, 0.0]));
    let y = tape.softmax_masked(x, &[true, true]).unwrap();
    assert_eq!(tape.value(y), &[0.5, 0.5]);

    let x = tape.input(t(vec![2], &[1000.0, 0.0]));
    let y = tape.softmax_masked(x, &[true, true]).unwrap();
    assert!(close(tape.value(y), &[1.0, 0.0], 1e-12));

    let x = tape.input(t(vec![3], &[1.0, 2.0, 3.0]));
    let y = tape.softmax_masked(x, &[true; 3]).unwrap();
    assert!(close(tape.value(y), &[0.09003, 0.24473, 0.66524], 1e-5));

    let x = tape.input(t(vec![3], &[1.0, 2.0, 3.0]));
    assert!(matches!(
        tape.softmax_masked(x, &[false; 3]),
        Err(Error::DegenerateMask)
    ));
}

#[test]
fn concat_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::new();
    let a = tape.input(t(vec![1, 1], &[1.0]));
    let b = tape.input(t(vec![1, 1], &[2.0]));
    let y = tape.concat(&[a, b]).unwrap();
    assert_eq!(tape.value(y), &[1.0, 2.0]);

    let single = random(vec![3, 2], &mut rng);
    let s = tape.input(single.clone());
    let y = tape.concat(&[s]).unwrap();
    assert_eq!(tape.value(y), &single.values[..]);

    let bad = tape.input(Tensor::zeros(vec![2, 1]));
    assert!(matches!(tape.concat(&[s, bad]), Err(Error::Shape { .. })));
}

#[test]
fn linear_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(vec![2, 3], &mut rng);
    let w = random(vec![3, 2], &mut rng);
    let b = random(vec![2], &mut rng);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.input(x.clone()), tape.input(w.clone()), tape.input(b.clone()));
    let y = tape.linear(xv, wv, bv).unwrap();
    let mut expected = vec![0.0; 4];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = b.values[j];
            for k in 0..3 {
                acc += x.values[i * 3 + k] * w.values[k * 2 + j];
            }
            expected[i * 2 + j] = acc;
        }
    }
    assert!(close(tape.value(y), &expected, 1e-12));

    let eye = tape.input(t(vec![3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
    let zero_b = tape.input(Tensor::zeros(vec![3]));
    let y = tape.linear(xv, eye, zero_b).unwrap();
    assert_eq!(tape.value(y), &x.values[..]);

    let zx = tape.input(Tensor::zeros(vec![4, 3]));
    let y = tape.linear(zx, wv, bv).unwrap();
    assert_eq!(tape.value(y), &b.values.repeat(4)[..]);

    assert!(matches!(tape.linear(wv, wv, bv), Err(Error::Shape { .. })));
}

#[test]
fn embed_examples() {
    let table = t(vec![4, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).with_grad();
    let mut tape = Tape::new();
    let tv = tape.leaf(&table);
    let y = tape.embed(&[0], tv).unwrap();
    assert_eq!(tape.value(y), &[1.0, 2.0]);

    let y = tape.embed(&[3, 3], tv).unwrap();
    assert_eq!(tape.value(y), &[7.0, 8.0, 7.0, 8.0]);
    let g = tape.mul_const(y, vec![1.0, 2.0, 10.0, 20.0]).unwrap();
    let loss = tape.sum(g);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(tv).unwrap(), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 11.0, 22.0]);

    match tape.embed(&[1, 4], tv) {
        Err(Error::Vocabulary { index: 4, size: 4 }) => {}
        other => panic!("expected vocabulary error, got {other:?}"),
    }
}

#[test]
fn embed_matches_row_copy() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let table = random(vec![7, 3], &mut rng);
    let ids: Vec<usize> = (0..10).map(|_| rng.random_range(0..7)).collect();
    let mut tape = Tape::new();
    let tv = tape.leaf(&table);
    let y = tape.embed(&ids, tv).unwrap();
    let expected: Vec<f64> = ids
        .iter()
        .flat_map(|&i| table.values[i * 3..i * 3 + 3].to_vec())
        .collect();
    assert_eq!(tape.value(y), &expected[..]);
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let l = tape.input(t(vec![1, 2], &[0.0, 0.0]));
    let y = tape.cross_entropy(l, &[0], 99).unwrap();
    assert!((tape.value(y)[0] - std::f64::consts::LN_2).abs() < 1e-12);

    let l = tape.input(t(vec![1, 2], &[100.0, 0.0]));
    let y = tape.cross_entropy(l, &[0], 99).unwrap();
    assert!(tape.value(y)[0].abs() < 1e-10);

    let l = tape.input(t(vec![2, 2], &[0.0, 0.0, 1.0, 1.0]));
    assert!(matches!(tape.cross_entropy(l, &[0, 0], 0), Err(Error::DegenerateBatch)));
}

#[test]
fn cross_entropy_matches_log_sum_exp() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = random(vec![3, 4], &mut rng);
    let targets = [2, 0, 3];
    let pad = 0;
    let mut tape = Tape::new();
    let l = tape.input(logits.clone());
    let y = tape.cross_entropy(l, &targets, pad).unwrap();
    // row 1 targets the pad id and is excluded
    let mut total = 0.0;
    for (row, &tgt) in logits.values.chunks(4).zip(&targets) {
        if tgt == pad {
            continue;
        }
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        total += lse - row[tgt];
    }
    assert!((tape.value(y)[0] - total / 2.0).abs() < 1e-10);
}

#[test]
fn backward_sum_and_fan_out() {
    let x = t(vec![2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).with_grad();
    let mut tape = Tape::new();
    let v = tape.leaf(&x);
    let s = tape.sum(v);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(v).unwrap(), &[1.0; 6]);

    let mut tape = Tape::new();
    let v = tape.leaf(&x);
    let doubled = tape.add(v, v).unwrap();
    let s = tape.sum(doubled);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(v).unwrap(), &[2.0; 6]);
    assert_eq!(tape.export(v).grad.unwrap(), vec![2.0; 6]);
}

#[test]
fn backward_rejects_non_scalar() {
    let x = Tensor::zeros(vec![2]).with_grad();
    let mut tape = Tape::new();
    let v = tape.leaf(&x);
    assert!(matches!(tape.backward(v), Err(Error::Shape { .. })));
}

#[test]
fn grad_check_identity_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(vec![3, 2], &mut rng);
    let report = grad_check(|_, v| Ok(v[0]), &[x], 0.0).unwrap();
    assert!(report.worst() < 1e-9, "{report:?}");
}

fn primitive_checks() -> Vec<(&'static str, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tol = 1e-6;
    let mut out = Vec::new();
    let x = random(vec![4, 3], &mut rng);
    let w = random(vec![3, 3, 2], &mut rng);
    let b = random(vec![2], &mut rng);
    for mode in [ConvMode::Centered, ConvMode::Causal] {
        let r = grad_check(
            move |tape, v| tape.conv1d(v[0], v[1], v[2], mode),
            &[x.clone(), w.clone(), b.clone()],
            tol,
        )
        .unwrap();
        out.push(("conv1d", r));
    }
    out.push((
        "glu",
        grad_check(|tape, v| tape.glu(v[0]), &[random(vec![3, 6], &mut rng)], tol).unwrap(),
    ));
    let mask = [true, false, true, true];
    out.push((
        "softmax_masked",
        grad_check(
            move |tape, v| tape.softmax_masked(v[0], &mask),
            &[random(vec![2, 4], &mut rng)],
            tol,
        )
        .unwrap(),
    ));
    out.push((
        "concat",
        grad_check(
            |tape, v| tape.concat(&[v[0], v[1], v[0]]),
            &[random(vec![3, 2], &mut rng), random(vec![3, 1], &mut rng)],
            tol,
        )
        .unwrap(),
    ));
    out.push((
        "linear",
        grad_check(
            |tape, v| tape.linear(v[0], v[1], v[2]),
            &[
                random(vec![3, 4], &mut rng),
                random(vec![4, 2], &mut rng),
                random(vec![2], &mut rng),
            ],
            tol,
        )
        .unwrap(),
    ));
    out.push((
        "matmul_nt",
        grad_check(
            |tape, v| tape.matmul_nt(v[0], v[1]),
            &[random(vec![2, 3], &mut rng), random(vec![4, 3], &mut rng)],
            tol,
        )
        .unwrap(),
    ));
    out.push((
        "embed",
        grad_check(
            |tape, v| tape.embed(&[2, 0, 2], v[0]),
            &[random(vec![3, 2], &mut rng)],
            tol,
        )
        .unwrap(),
    ));
    out.push((
        "cross_entropy",
        grad_check(
            |tape, v| tape.cross_entropy(v[0], &[1, 0, 3], 0),
            &[random(vec![3, 4], &mut rng)],
            tol,
        )
        .unwrap(),
    ));
    out.push((
        "mask_rows+slice+scale",
        grad_check(
            |tape, v| {
                let m = tape.mask_rows(v[0], &[true, false, true])?;
                let s = tape.slice_cols(m, 1, 3)?;
                Ok(tape.scale(s, -1.5))
            },
            &[random(vec![3, 4], &mut rng)],
            tol,
        )
        .unwrap(),
    ));
    out
}

#[test]
fn primitives_pass_finite_differences() {
    for (name, report) in primitive_checks() {
        assert!(report.passed(), "{name}: {report:?}");
    }
}

#[test]
fn glu_of_linear_composite_passes() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let report = grad_check(
        |tape, v| {
            let h = tape.linear(v[0], v[1], v[2])?;
            let g = tape.glu(h)?;
            Ok(tape.sum(g))
        },
        &[
            random(vec![3, 4], &mut rng),
            random(vec![4, 6], &mut rng),
            random(vec![6], &mut rng),
        ],
        1e-6,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn deterministic_forward_and_backward() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(vec![5, 3], &mut rng).with_grad();
        let w = random(vec![3, 3, 4], &mut rng).with_grad();
        let b = random(vec![4], &mut rng).with_grad();
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(&x), tape.leaf(&w), tape.leaf(&b));
        let c = tape.conv1d(xv, wv, bv, ConvMode::Causal).unwrap();
        let g = tape.glu(c).unwrap();
        let loss = tape.sum(g);
        tape.backward(loss).unwrap();
        (
            tape.value(loss).to_vec(),
            tape.grad(xv).unwrap().to_vec(),
            tape.grad(wv).unwrap().to_vec(),
        )
    };
    let a = run();
    let b = run();
    assert_eq!(
        a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(
        a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(
        a.2.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

proptest! {
    #[test]
    fn softmax_masked_properties(
        logits in prop::collection::vec(-30.0f64..30.0, 1..12),
        mask_bits in prop::collection::vec(any::<bool>(), 12),
        shift in -50.0f64..50.0,
    ) {
        let n = logits.len();
        let mut mask: Vec<bool> = mask_bits[..n].to_vec();
        mask[0] = true;
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![n], logits.clone()).unwrap());
        let y = tape.softmax_masked(x, &mask).unwrap();
        let out = tape.value(y).to_vec();
        let total: f64 = out.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        for (o, &m) in out.iter().zip(&mask) {
            if m { prop_assert!(*o >= 0.0); } else { prop_assert_eq!(*o, 0.0); }
        }
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let xs = tape.input(Tensor::new(vec![n], shifted).unwrap());
        let ys = tape.softmax_masked(xs, &mask).unwrap();
        for (a, b) in out.iter().zip(tape.value(ys)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn concat_then_slice_is_identity(widths in prop::collection::vec(1usize..5, 1..5), rows in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks: Vec<Tensor> = widths.iter().map(|&w| random(vec![rows, w], &mut rng)).collect();
        let mut tape = Tape::new();
        let vars: Vec<Var> = blocks.iter().map(|b| tape.input(b.clone())).collect();
        let cat = tape.concat(&vars).unwrap();
        let mut offset = 0;
        for (b, &w) in blocks.iter().zip(&widths) {
            let s = tape.slice_cols(cat, offset, offset + w).unwrap();
            prop_assert_eq!(tape.value(s), &b.values[..]);
            offset += w;
        }
    }
}
