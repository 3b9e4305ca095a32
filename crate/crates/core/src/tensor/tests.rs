use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck;
use super::*;
use crate::Error;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `Σ out ⊙ r` for a fixed random `r`, so every output entry matters.
fn probe(g: &mut Graph, out: Var, seed: u64) -> Result<Var, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random(g.shape(out), &mut rng);
    let r = g.input(r);
    let prod = g.mul(out, r)?;
    Ok(g.sum(prod))
}

fn assert_close(a: &[f32], b: &[f32], tol: f32) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn linear_identity_and_arithmetic() {
    let mut g = Graph::new();
    let x = g.input(Tensor::from_rows(&[&[1.0, 2.0]]).unwrap());
    let w = g.input(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
    let b = g.input(Tensor::new([2], vec![0.0, 0.0]).unwrap());
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.data(y), &[1.0, 2.0]);

    let x = g.input(Tensor::from_rows(&[&[1.0, 1.0]]).unwrap());
    let w = g.input(Tensor::from_rows(&[&[2.0], &[3.0]]).unwrap());
    let b = g.input(Tensor::new([1], vec![1.0]).unwrap());
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.data(y), &[6.0]);
}

#[test]
fn linear_rejects_mismatched_inner_dims() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros([2, 3]));
    let w = g.input(Tensor::zeros([2, 4]));
    assert!(matches!(g.linear(x, w, None), Err(Error::Dimension(_))));
}

#[test]
fn linear_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = [random(&[4, 3], &mut rng), random(&[3, 2], &mut rng), random(&[2], &mut rng)];
    let report = gradcheck::check(&params, |g: &mut Graph, v: &[Var]| {
        let y = g.linear(v[0], v[1], Some(v[2]))?;
        Ok(g.sum(y))
    })
    .unwrap();
    assert_eq!(report.passed, report.checked, "{report:?}");
}

#[test]
fn linear_applies_to_last_axis_of_rank3() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = [random(&[2, 3, 4], &mut rng), random(&[4, 5], &mut rng)];
    let report = gradcheck::check(&params, |g: &mut Graph, v: &[Var]| {
        let y = g.linear(v[0], v[1], None)?;
        assert_eq!(g.shape(y), &[2, 3, 5]);
        probe(g, y, 3)
    })
    .unwrap();
    assert_eq!(report.passed, report.checked, "{report:?}");
}

#[test]
fn batch_norm_closed_form_cases() {
    let mut g = Graph::new();
    let gamma = g.input(Tensor::filled([2], 1.0));
    let beta = g.input(Tensor::zeros([2]));
    let x = g.input(Tensor::from_rows(&[&[1.0, 5.0], &[3.0, 5.0]]).unwrap());
    let (y, update) = g.batch_norm(x, gamma, beta, &RunningStats::identity(2), true).unwrap();
    let d = g.data(y);
    assert!((d[0] + 1.0).abs() < 1e-5 && (d[2] - 1.0).abs() < 1e-5, "{d:?}");
    // constant column normalises to zero
    assert_eq!(d[1], 0.0);
    assert_eq!(d[3], 0.0);
    let update = update.unwrap();
    assert_close(&update.mean, &[0.99 * 0.0 + 0.01 * 2.0, 0.01 * 5.0], 1e-6);
    assert_close(&update.var, &[0.99 + 0.01 * 1.0, 0.99], 1e-6);
}

#[test]
fn batch_norm_eval_with_unit_stats_is_identity() {
    let mut g = Graph::new();
    let gamma = g.input(Tensor::filled([3], 1.0));
    let beta = g.input(Tensor::zeros([3]));
    let x = g.input(Tensor::new([2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, -0.25]).unwrap());
    let (y, update) = g.batch_norm(x, gamma, beta, &RunningStats::identity(3), false).unwrap();
    assert!(update.is_none());
    assert_close(g.data(y), g.data(x), 1e-5);
}

#[test]
fn batch_norm_gradients_in_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = [random(&[6, 3], &mut rng), random(&[3], &mut rng), random(&[3], &mut rng)];
    for training in [true, false] {
        let stats = RunningStats { mean: vec![0.1, -0.2, 0.3], var: vec![0.5, 1.5, 2.0] };
        let report = gradcheck::check(&params, |g: &mut Graph, v: &[Var]| {
            let (y, _) = g.batch_norm(v[0], v[1], v[2], &stats, training)?;
            probe(g, y, 5)
        })
        .unwrap();
        assert_eq!(report.passed, report.checked, "training={training} {report:?}");
    }
}

#[test]
fn relu_softmax_basics() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new([2], vec![-1.0, 2.0]).unwrap());
    let r = g.relu(x);
    assert_eq!(g.data(r), &[0.0, 2.0]);

    let z = g.input(Tensor::new([1, 2], vec![0.0, 0.0]).unwrap());
    let s = g.softmax(z, 1).unwrap();
    assert_eq!(g.data(s), &[0.5, 0.5]);

    let big = g.input(Tensor::new([1, 2], vec![1000.0, 1000.0]).unwrap());
    let s = g.softmax(big, 1).unwrap();
    assert_eq!(g.data(s), &[0.5, 0.5]);

    assert!(matches!(g.softmax(big, 2), Err(Error::Dimension(_))));
}

#[test]
fn softmax_over_middle_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = [random(&[2, 3, 4], &mut rng)];
    let report = gradcheck::check(&params, |g: &mut Graph, v: &[Var]| {
        let y = g.softmax(v[0], 1)?;
        probe(g, y, 7)
    })
    .unwrap();
    assert_eq!(report.passed, report.checked, "{report:?}");
    let mut g = Graph::new();
    let x = g.input(params[0].clone());
    let y = g.softmax(x, 1).unwrap();
    let d = g.data(y);
    for o in 0..2 {
        for i in 0..4 {
            let s: f32 = (0..3).map(|j| d[o * 12 + j * 4 + i]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn concat_and_its_gradient() {
    let mut g = Graph::new();
    let a = g.input(Tensor::from_rows(&[&[1.0], &[2.0]]).unwrap());
    let b = g.input(Tensor::from_rows(&[&[3.0, 4.0], &[5.0, 6.0]]).unwrap());
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.shape(c), &[2, 3]);
    assert_eq!(g.data(c), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    let c0 = g.concat(&[a, a], 0).unwrap();
    assert_eq!(g.data(c0), &[1.0, 2.0, 1.0, 2.0]);
    assert!(g.concat(&[a, b], 0).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = [random(&[2, 3, 2], &mut rng), random(&[2, 3, 1], &mut rng)];
    let report = gradcheck::check(&params, |g: &mut Graph, v: &[Var]| {
        let y = g.concat(&[v[0], v[1], v[0]], 2)?;
        probe(g, y, 9)
    })
    .unwrap();
    assert_eq!(report.passed, report.checked, "{report:?}");
}

#[test]
fn dropout_scaling_and_eval_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut g = Graph::new();
    let x = g.input(Tensor::filled([1000], 1.0));
    let same = g.dropout(x, 0.5, false, &mut rng).unwrap();
    assert_eq!(same, x);
    let y = g.dropout(x, 0.5, true, &mut rng).unwrap();
    let d = g.data(y);
    assert!(d.iter().all(|&v| v == 0.0 || v == 2.0));
    let kept = d.iter().filter(|&&v| v > 0.0).count();
    assert!((400..600).contains(&kept), "{kept}");
    assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
}

#[test]
fn neighbor_gather_examples() {
    let mut g = Graph::new();
    let x = g.input(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
    let own = g.neighbor_gather(x, &[0, 0, 1, 1], 2).unwrap();
    assert_eq!(g.shape(own), &[2, 2, 2]);
    assert_eq!(g.data(own), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
    let swapped = g.neighbor_gather(x, &[1, 0], 1).unwrap();
    assert_eq!(g.data(swapped), &[3.0, 4.0, 1.0, 2.0]);
    assert!(matches!(g.neighbor_gather(x, &[2, 0], 1), Err(Error::Index { index: 2, len: 2 })));
}

#[test]
fn neighbor_gather_accumulates_shared_sources() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = [random(&[3, 2], &mut rng)];
    let idx = [2, 2, 0, 1, 2, 0];
    let report = gradcheck::check(&params, |g: &mut Graph, v: &[Var]| {
        let y = g.neighbor_gather(v[0], &idx, 2)?;
        probe(g, y, 12)
    })
    .unwrap();
    assert_eq!(report.passed, report.checked, "{report:?}");

    let mut g = Graph::new();
    let x = g.param(params[0].clone());
    let y = g.neighbor_gather(x, &idx, 2).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    // row 2 is referenced three times
    assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0, 1.0, 1.0, 3.0, 3.0]);
}

#[test]
fn neighbor_max_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new([1, 3, 1], vec![3.0, 1.0, 2.0]).unwrap());
    let m = g.neighbor_max(x).unwrap();
    assert_eq!(g.data(m), &[3.0]);
    let s = g.sum(m);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0]);

    let mut g = Graph::new();
    let x = g.param(Tensor::new([2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let m = g.neighbor_max(x).unwrap();
    assert_eq!(g.shape(m), &[2, 2]);
    assert_eq!(g.data(m), &[1.0, 2.0, 3.0, 4.0]);

    // ties route to the lowest slot
    let mut g = Graph::new();
    let x = g.param(Tensor::new([1, 3, 1], vec![1.0, 5.0, 5.0]).unwrap());
    let m = g.neighbor_max(x).unwrap();
    let s = g.sum(m);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0, 0.0]);
}

#[test]
fn neighbor_max_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let t = random(&[5, 4, 3], &mut rng);
    let mut g = Graph::new();
    let x = g.input(t.clone());
    let m = g.neighbor_max(x).unwrap();
    let d = t.data();
    for i in 0..5 {
        for c in 0..3 {
            let mut best = f32::NEG_INFINITY;
            for j in 0..4 {
                best = best.max(d[i * 12 + j * 3 + c]);
            }
            assert_eq!(g.data(m)[i * 3 + c], best);
        }
    }
}

#[test]
fn neighbor_weighted_mean_limits_and_gradient() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new([1, 4, 1], vec![1.0, 2.0, 3.0, 6.0]).unwrap());
    let flat = g.input(Tensor::zeros([1, 4, 1]));
    let m = g.neighbor_weighted_mean(x, flat).unwrap();
    assert!((g.data(m)[0] - 3.0).abs() < 1e-6);
    let peaked = g.input(Tensor::new([1, 4, 1], vec![0.0, 1e4, 0.0, 0.0]).unwrap());
    let m = g.neighbor_weighted_mean(x, peaked).unwrap();
    assert!((g.data(m)[0] - 2.0).abs() < 1e-6);
    let wrong = g.input(Tensor::zeros([1, 3, 1]));
    assert!(matches!(g.neighbor_weighted_mean(x, wrong), Err(Error::Dimension(_))));

    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let params = [random(&[3, 4, 2], &mut rng), random(&[3, 4, 2], &mut rng)];
    let report = gradcheck::check(&params, |g: &mut Graph, v: &[Var]| {
        let y = g.neighbor_weighted_mean(v[0], v[1])?;
        probe(g, y, 15)
    })
    .unwrap();
    assert_eq!(report.passed, report.checked, "{report:?}");
}

#[test]
fn cross_entropy_cases() {
    let mut g = Graph::new();
    let uniform = g.input(Tensor::zeros([3, 4]));
    let l = g.cross_entropy(uniform, &[0, 1, 3], None).unwrap();
    assert!((g.value(l).item() - 4f32.ln()).abs() < 1e-6);

    let sharp = g.input(Tensor::from_rows(&[&[1e4, 0.0], &[0.0, 1e4]]).unwrap());
    let l = g.cross_entropy(sharp, &[0, 1], None).unwrap();
    assert!(g.value(l).item().abs() < 1e-6);

    assert!(matches!(g.cross_entropy(uniform, &[7, 7, 7], Some(7)), Err(Error::UndefinedLoss)));
    assert!(matches!(g.cross_entropy(uniform, &[0, 9, 1], None), Err(Error::Validation(_))));
}

#[test]
fn cross_entropy_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let t = random(&[6, 3], &mut rng);
    let labels = [0u32, 2, 1, 9, 2, 0];
    let mut g = Graph::new();
    let x = g.input(t.clone());
    let l = g.cross_entropy(x, &labels, Some(9)).unwrap();
    let mut total = 0.0f64;
    let mut count = 0;
    for (i, &lab) in labels.iter().enumerate() {
        if lab == 9 {
            continue;
        }
        let row: Vec<f64> = t.data()[i * 3..i * 3 + 3].iter().map(|&v| v as f64).collect();
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[lab as usize].exp() / z).ln();
        count += 1;
    }
    assert!((g.value(l).item() as f64 - total / count as f64).abs() < 1e-6);

    let params = [t];
    let report = gradcheck::check(&params, |g: &mut Graph, v: &[Var]| g.cross_entropy(v[0], &labels, Some(9))).unwrap();
    assert_eq!(report.passed, report.checked, "{report:?}");
}

#[test]
fn backward_basics() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new([3], vec![1.0, -2.0, 3.0]).unwrap());
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    // repeated calls accumulate
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
    g.zero_grads();
    assert!(g.grad(x).is_none());

    let mut g = Graph::new();
    let x = g.param(Tensor::new([2], vec![-1.0, 2.0]).unwrap());
    let r = g.relu(x);
    let s = g.sum(r);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0]);
    assert!(matches!(g.backward(r), Err(Error::Contract(_))));
}

#[test]
fn inputs_receive_no_gradient() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new([2], vec![1.0, 2.0]).unwrap());
    let w = g.param(Tensor::new([2], vec![3.0, 4.0]).unwrap());
    let y = g.mul(x, w).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.grad(x).is_none());
    assert_eq!(g.grad(w).unwrap(), &[1.0, 2.0]);
}

#[test]
fn elementwise_and_reduction_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let params = [random(&[4, 3], &mut rng), random(&[4, 3], &mut rng)];
    let report = gradcheck::check(&params, |g: &mut Graph, v: &[Var]| {
        let a = g.add(v[0], v[1])?;
        let b = g.sub(a, v[1])?;
        let c = g.mul(b, v[1])?;
        let d = g.scale(c, 0.7);
        let e = g.mean_rows(d)?;
        let f = g.reshape(e, [3])?;
        probe(g, f, 18)
    })
    .unwrap();
    assert_eq!(report.passed, report.checked, "{report:?}");
}

#[test]
fn center_distance_loss_values_and_gradient() {
    let mut g = Graph::new();
    let centroid = g.input(Tensor::zeros([1, 3]));
    let sym = g.input(Tensor::new([1, 2, 3], vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0]).unwrap());
    let l = g.center_distance_loss(sym, centroid, 1.0).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
    let same = g.input(Tensor::new([1, 2, 3], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap());
    let l = g.center_distance_loss(same, centroid, 1.0).unwrap();
    assert!((g.value(l).item() - 1.0).abs() < 1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let params = [random(&[4, 3, 2], &mut rng), random(&[4, 2], &mut rng)];
    let report =
        gradcheck::check(&params, |g: &mut Graph, v: &[Var]| g.center_distance_loss(v[0], v[1], 0.5)).unwrap();
    assert_eq!(report.passed, report.checked, "{report:?}");
}

#[test]
fn weighted_maps_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let params = [random(&[5, 3], &mut rng), random(&[5, 3], &mut rng), random(&[5, 2], &mut rng)];
    let report = gradcheck::check(&params, |g: &mut Graph, v: &[Var]| {
        let y = g.weighted_maps(&[v[0], v[1]], v[2])?;
        probe(g, y, 21)
    })
    .unwrap();
    assert_eq!(report.passed, report.checked, "{report:?}");
}

#[test]
fn eval_forward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = random(&[16, 6], &mut rng);
    let w = random(&[6, 4], &mut rng);
    let run = || {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let wv = g.input(w.clone());
        let y = g.linear(xv, wv, None).unwrap();
        let s = g.softmax(y, 1).unwrap();
        g.data(s).to_vec()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(values in proptest::collection::vec(-50.0f32..50.0, 12)) {
        let mut g = Graph::new();
        let x = g.input(Tensor::new([3, 4], values).unwrap());
        let s = g.softmax(x, 1).unwrap();
        for row in g.data(s).chunks(4) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn gather_conserves_gradient_mass(
        idx in proptest::collection::vec(0usize..6, 1..24),
        upstream in proptest::collection::vec(-2.0f32..2.0, 24 * 2),
    ) {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros([6, 2]));
        let y = g.gather_rows(x, &idx).unwrap();
        let r = g.input(Tensor::new([idx.len(), 2], upstream[..idx.len() * 2].to_vec()).unwrap());
        let p = g.mul(y, r).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        let sent: f32 = upstream[..idx.len() * 2].iter().sum();
        let got: f32 = g.grad(x).unwrap().iter().sum();
        prop_assert!((sent - got).abs() < 1e-4);
    }

    #[test]
    fn relu_and_linear_gradients_hold_on_random_inputs(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = [random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)];
        // skip draws where a pre-activation sits within reach of the kink
        let mut g = Graph::new();
        let (x, w) = (g.input(params[0].clone()), g.input(params[1].clone()));
        let pre = g.linear(x, w, None).unwrap();
        prop_assume!(g.data(pre).iter().all(|v| v.abs() > 1e-2));
        let report = gradcheck::check(&params, |g: &mut Graph, v: &[Var]| {
            let y = g.linear(v[0], v[1], None)?;
            let r = g.relu(y);
            probe(g, r, seed)
        }).unwrap();
        prop_assert_eq!(report.passed, report.checked, "{:?}", report);
    }
}
