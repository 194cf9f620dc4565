//! Minimal reverse-mode autodiff engine and the learned layers: graph
//! convolutions over the chart communication graph, small convolution
//! stacks, perceptual feature pooling and Adam.

mod adam;
mod gradcheck;
mod graph;
mod layers;
mod tape;
mod tensor;

pub use adam::{AdamConfig, ParamStore};
pub use gradcheck::grad_check;
pub use graph::CommGraphCsr;
pub use layers::{gcn_layer, GcnNorm};
pub use tape::{Activation, Gradients, Tape, ValueId};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::{KdTree, Vec3};
    use crate::tactile::CameraModel;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
        Tensor::uniform(shape, 1.0, rng)
    }

    #[test]
    fn sum_of_squares_grad_is_machine_precision() {
        let mut r = rng(1);
        let x = rand_tensor(&[7], &mut r);
        let err = grad_check(
            |tape, ids| {
                let sq = tape.mul_elem(ids[0], ids[0])?;
                Ok(tape.sum_all(sq))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn gcn_layer_identity_on_isolated_vertex() {
        // Isolated vertex, W = I, b = 0: normalization is 1/sqrt(1*1).
        let graph = Arc::new(CommGraphCsr::from_edges(1, &[]).unwrap());
        let mut tape = Tape::<f64>::new();
        let h = tape.input(Tensor::new(vec![1, 3], vec![0.3, -0.7, 2.0]).unwrap());
        let w = tape.input(Tensor::new(vec![3, 3], vec![
            1.0, 0.0, 0.0,
            0.0, 1.0, 0.0,
            0.0, 0.0, 1.0,
        ]).unwrap());
        let b = tape.input(Tensor::zeros(&[3]));
        let out = gcn_layer(&mut tape, h, &graph, w, b, Activation::Identity, GcnNorm::SelfLoop)
            .unwrap();
        assert_eq!(tape.value(out).data(), tape.value(h).data());
    }

    #[test]
    fn gcn_layer_two_connected_vertices_with_equal_features() {
        // Both vertices have degree 1; with self loops every term is
        // h / sqrt(2*2), summed over {u, v} giving h back.
        let graph = Arc::new(CommGraphCsr::from_edges(2, &[(0, 1)]).unwrap());
        let mut tape = Tape::<f64>::new();
        let h = tape.input(Tensor::new(vec![2, 2], vec![0.5, -1.5, 0.5, -1.5]).unwrap());
        let w = tape.input(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.input(Tensor::zeros(&[2]));
        let out = gcn_layer(&mut tape, h, &graph, w, b, Activation::Identity, GcnNorm::SelfLoop)
            .unwrap();
        for (a, b) in tape.value(out).data().iter().zip(tape.value(h).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gcn_layer_gradients_match_finite_differences() {
        let mut r = rng(2);
        // Random 12-vertex graph.
        let mut edges = Vec::new();
        for a in 0..12u32 {
            for b in (a + 1)..12 {
                if r.gen::<f64>() < 0.25 {
                    edges.push((a, b));
                }
            }
        }
        let graph = Arc::new(CommGraphCsr::from_edges(12, &edges).unwrap());
        for trial in 0..5 {
            let mut tr = rng(100 + trial);
            let h = rand_tensor(&[12, 4], &mut tr);
            let w = rand_tensor(&[4, 3], &mut tr);
            let b = rand_tensor(&[3], &mut tr);
            let g = Arc::clone(&graph);
            let err = grad_check(
                move |tape, ids| {
                    let out = gcn_layer(
                        tape,
                        ids[0],
                        &g,
                        ids[1],
                        ids[2],
                        Activation::Relu,
                        GcnNorm::SelfLoop,
                    )?;
                    let sq = tape.mul_elem(out, out)?;
                    Ok(tape.sum_all(sq))
                },
                &[h, w, b],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn gcn_layer_is_linear_in_features_with_zero_bias() {
        let graph =
            Arc::new(CommGraphCsr::from_edges(6, &[(0, 1), (1, 2), (2, 3), (4, 5)]).unwrap());
        let mut r = rng(3);
        let h1 = rand_tensor(&[6, 3], &mut r);
        let h2 = rand_tensor(&[6, 3], &mut r);
        let w = rand_tensor(&[3, 2], &mut r);
        let (alpha, beta) = (0.7, -1.3);
        let run = |h: &Tensor<f64>| -> Vec<f64> {
            let mut tape = Tape::new();
            let hid = tape.input(h.clone());
            let wid = tape.input(w.clone());
            let b = tape.input(Tensor::zeros(&[2]));
            let out =
                gcn_layer(&mut tape, hid, &graph, wid, b, Activation::Identity, GcnNorm::SelfLoop)
                    .unwrap();
            tape.value(out).data().to_vec()
        };
        let mixed = Tensor::new(
            vec![6, 3],
            h1.data()
                .iter()
                .zip(h2.data())
                .map(|(&a, &b)| alpha * a + beta * b)
                .collect(),
        )
        .unwrap();
        let lhs = run(&mixed);
        let r1 = run(&h1);
        let r2 = run(&h2);
        for i in 0..lhs.len() {
            assert!((lhs[i] - (alpha * r1[i] + beta * r2[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn conv2d_identity_kernel_preserves_input() {
        let mut r = rng(4);
        let input = rand_tensor(&[2, 5, 5], &mut r);
        let mut tape = Tape::new();
        let x = tape.input(input.clone());
        // Kernels: out channel c picks in channel c with a centered 1.
        let mut kdata = vec![0.0; 2 * 2 * 9];
        for c in 0..2 {
            kdata[((c * 2 + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        let k = tape.input(Tensor::new(vec![2, 2, 3, 3], kdata).unwrap());
        let b = tape.input(Tensor::zeros(&[2]));
        let out = tape.conv2d(x, k, b, 1, 1).unwrap();
        assert_eq!(tape.value(out).data(), input.data());
    }

    #[test]
    fn conv2d_all_ones_kernel_counts_neighborhood() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::new(vec![3, 4, 4], vec![1.0; 48]).unwrap());
        let k = tape.input(Tensor::new(vec![1, 3, 3, 3], vec![1.0; 27]).unwrap());
        let b = tape.input(Tensor::zeros(&[1]));
        let out = tape.conv2d(x, k, b, 1, 1).unwrap();
        // Interior pixel: 9 taps x 3 channels.
        assert_eq!(tape.value(out).data()[4 + 1], 27.0);
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        for (stride, pad) in [(1usize, 1usize), (2, 1), (1, 0)] {
            let mut r = rng(5 + stride as u64 * 10 + pad as u64);
            let input = rand_tensor(&[2, 8, 8], &mut r);
            let kernels = rand_tensor(&[3, 2, 3, 3], &mut r);
            let bias = rand_tensor(&[3], &mut r);
            let err = grad_check(
                move |tape, ids| {
                    let out = tape.conv2d(ids[0], ids[1], ids[2], stride, pad)?;
                    let sq = tape.mul_elem(out, out)?;
                    Ok(tape.sum_all(sq))
                },
                &[input, kernels, bias],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "stride {stride} pad {pad}: rel err {err}");
        }
    }

    #[test]
    fn upsample_and_masked_loss_gradients() {
        let mut r = rng(6);
        let input = rand_tensor(&[2, 4, 4], &mut r);
        let target = Arc::new(rand_tensor(&[2, 8, 8], &mut r));
        let mask: Arc<Vec<bool>> = Arc::new((0..128).map(|i| i % 3 != 0).collect());
        let t = Arc::clone(&target);
        let m = Arc::clone(&mask);
        let err = grad_check(
            move |tape, ids| {
                let up = tape.upsample2(ids[0])?;
                tape.masked_sq_err(up, Arc::clone(&t), Arc::clone(&m))
            },
            &[input],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn masked_loss_with_empty_mask_is_zero() {
        let mut tape = Tape::<f64>::new();
        let pred = tape.input(Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let target = Arc::new(Tensor::zeros(&[4]));
        let mask = Arc::new(vec![false; 4]);
        let loss = tape.masked_sq_err(pred, target, mask).unwrap();
        assert_eq!(tape.value(loss).scalar_value(), 0.0);
    }

    fn test_camera() -> CameraModel<f64> {
        CameraModel::look_at(
            Vec3::new(0.0, 0.0, -4.0),
            Vec3::zero(),
            Vec3::new(0.0, 1.0, 0.0),
            10.0,
            8,
            8,
        )
        .unwrap()
    }

    #[test]
    fn pool_at_exact_pixel_center_reads_that_pixel() {
        let cam = test_camera();
        let p = Vec3::new((2.5 - 4.0) * 4.0 / 10.0, (3.5 - 4.0) * 4.0 / 10.0, 0.0);
        let mut map = Tensor::<f64>::zeros(&[1, 8, 8]);
        for (i, v) in map.data_mut().iter_mut().enumerate() {
            *v = i as f64;
        }
        let mut tape = Tape::new();
        let m = tape.input(map.clone());
        let verts = tape.input(Tensor::new(vec![1, 3], vec![p.x, p.y, p.z]).unwrap());
        let out = tape.pool(&[m], verts, &cam).unwrap();
        let (u, v, _) = cam.project(p).unwrap();
        let px = (u - 0.5).round() as usize;
        let py = (v - 0.5).round() as usize;
        assert_eq!(tape.value(out).data()[0], map.data()[py * 8 + px]);
    }

    #[test]
    fn pool_midway_between_pixel_centers_averages() {
        let cam = test_camera();
        // Midway horizontally between pixel centers 2.5 and 3.5. With this
        // look-at frame, right = (-1,0,0) and down = (0,-1,0).
        let (u, v) = (3.0, 2.5);
        let p = Vec3::new(-(u - 4.0) * 4.0 / 10.0, -(v - 4.0) * 4.0 / 10.0, 0.0);
        let mut map = Tensor::<f64>::zeros(&[1, 8, 8]);
        for (i, val) in map.data_mut().iter_mut().enumerate() {
            *val = (i * i) as f64 * 0.25;
        }
        let mut tape = Tape::new();
        let m = tape.input(map.clone());
        let verts = tape.input(Tensor::new(vec![1, 3], vec![p.x, p.y, p.z]).unwrap());
        let out = tape.pool(&[m], verts, &cam).unwrap();
        let (pu, pv, _) = cam.project(p).unwrap();
        assert!((pu - 3.0).abs() < 1e-9, "pu {pu}");
        assert!((pv - 2.5).abs() < 1e-9, "pv {pv}");
        let want = 0.5 * (map.data()[2 * 8 + 2] + map.data()[2 * 8 + 3]);
        assert!((tape.value(out).data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn pool_gradients_match_finite_differences() {
        let cam = test_camera();
        let mut r = rng(7);
        // Vertices that project well inside the image.
        let mut vdata = Vec::new();
        for _ in 0..5 {
            vdata.extend([
                r.gen::<f64>() * 1.2 - 0.6,
                r.gen::<f64>() * 1.2 - 0.6,
                r.gen::<f64>() * 0.8 - 0.4,
            ]);
        }
        let verts = Tensor::new(vec![5, 3], vdata).unwrap();
        let map1 = rand_tensor(&[2, 8, 8], &mut r);
        let map2 = rand_tensor(&[1, 4, 4], &mut r);
        let err = grad_check(
            move |tape, ids| {
                let out = tape.pool(&[ids[1], ids[2]], ids[0], &cam)?;
                let sq = tape.mul_elem(out, out)?;
                Ok(tape.sum_all(sq))
            },
            &[verts, map1, map2],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-3, "rel err {err}");
    }

    #[test]
    fn chamfer_op_gradient_matches_finite_differences() {
        let mut r = rng(8);
        let target: Arc<Vec<Vec3<f64>>> = Arc::new(
            (0..24)
                .map(|_| Vec3::new(r.gen::<f64>(), r.gen::<f64>(), r.gen::<f64>()))
                .collect(),
        );
        let tree = KdTree::build(&target);
        let pred = rand_tensor(&[16, 3], &mut r);
        let t = Arc::clone(&target);
        let err = grad_check(
            move |tape, ids| tape.chamfer_vs_fixed(ids[0], Arc::clone(&t), &tree),
            &[pred],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn bary_gather_and_overwrite_rows_gradients() {
        let mut r = rng(9);
        let verts = rand_tensor(&[6, 3], &mut r);
        let faces = Arc::new(vec![[0u32, 1, 2], [2, 3, 4], [1, 4, 5]]);
        let weights = Arc::new(vec![[0.2, 0.3, 0.5], [0.6, 0.2, 0.2], [0.1, 0.8, 0.1]]);
        let rows = Arc::new(vec![1usize, 4]);
        let pinned = Arc::new(rand_tensor(&[2, 3], &mut r));
        let target: Arc<Vec<Vec3<f64>>> =
            Arc::new((0..10).map(|_| Vec3::new(r.gen(), r.gen(), r.gen())).collect());
        let tree = KdTree::build(&target);
        let err = grad_check(
            move |tape, ids| {
                let fixed = tape.overwrite_rows(ids[0], Arc::clone(&rows), Arc::clone(&pinned))?;
                let pts = tape.bary_gather(fixed, Arc::clone(&faces), Arc::clone(&weights))?;
                tape.chamfer_vs_fixed(pts, Arc::clone(&target), &tree)
            },
            &[verts],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn overwritten_rows_carry_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let pinned = Arc::new(Tensor::new(vec![1, 2], vec![9.0, 9.0]).unwrap());
        let out = tape.overwrite_rows(x, Arc::new(vec![0]), pinned).unwrap();
        let sq = tape.mul_elem(out, out).unwrap();
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss).unwrap();
        let gx = grads.get(x).unwrap();
        assert_eq!(gx.data()[0], 0.0);
        assert_eq!(gx.data()[1], 0.0);
        assert_eq!(gx.data()[2], 6.0);
        assert_eq!(gx.data()[3], 8.0);
    }

    #[test]
    fn matmul_concat_addbias_gradients() {
        let mut r = rng(10);
        let a = rand_tensor(&[4, 3], &mut r);
        let b = rand_tensor(&[4, 2], &mut r);
        let w = rand_tensor(&[5, 4], &mut r);
        let bias = rand_tensor(&[4], &mut r);
        let err = grad_check(
            move |tape, ids| {
                let cat = tape.concat_cols(&[ids[0], ids[1]])?;
                let mm = tape.matmul(cat, ids[2])?;
                let ab = tape.add_bias(mm, ids[3])?;
                let rl = tape.relu(ab);
                let sq = tape.mul_elem(rl, rl)?;
                Ok(tape.sum_all(sq))
            },
            &[a, b, w, bias],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(Tensor::zeros(&[2, 3]));
        let b = tape.input(Tensor::zeros(&[3, 2]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.matmul(a, a).is_err());
        let bias = tape.input(Tensor::zeros(&[4]));
        assert!(tape.add_bias(a, bias).is_err());
        let graph = Arc::new(CommGraphCsr::from_edges(5, &[(0, 1)]).unwrap());
        assert!(tape.csr_agg(a, &graph, true).is_err());
    }
}
