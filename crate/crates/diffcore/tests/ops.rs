use diffcore::gradcheck::{self, check_kind};
use diffcore::{DiffError, Graph, OpKind, Tensor};

const TOL: f64 = 1e-5;
const TRIALS: usize = 20;

#[test]
fn every_op_kind_passes_finite_difference_check() {
    for kind in OpKind::ALL {
        let err = check_kind(kind, TRIALS, 11).unwrap();
        assert!(err < TOL, "{kind:?}: relative error {err:e}");
    }
}

#[test]
fn mean_of_conv_output_kernel_gradient() {
    // gradient w.r.t. the kernel only, through a mean reduction
    let x = Tensor::from_vec(
        &[4, 3, 8, 8],
        diffcore::gaussian_stream(&diffcore::RngKey::new(5, 0, 0, 0, diffcore::StreamRole::Auxiliary), 768),
    )
    .unwrap();
    let k = Tensor::from_vec(
        &[2, 3, 3, 3],
        diffcore::gaussian_stream(&diffcore::RngKey::new(5, 1, 0, 0, diffcore::StreamRole::Auxiliary), 54),
    )
    .unwrap();
    let f = |g: &mut Graph<f64>, v: &[diffcore::Var]| {
        let xc = g.constant(x.clone());
        let y = g.conv3x3(xc, v[0], None)?;
        let y2 = g.mul(y, y)?;
        g.mean(y2, None)
    };
    let err = gradcheck::check(&[k], f).unwrap();
    assert!(err < TOL, "{err:e}");
}

#[test]
fn add_zero_is_identity() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap());
    let z = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
    let y = g.add(x, z).unwrap();
    assert_eq!(g.value(y), g.value(x));
}

#[test]
fn upsample_single_pixel() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::from_vec(&[1, 1, 1, 1], vec![3.0]).unwrap());
    let y = g.upsample2(x).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 2, 2]);
    assert!(g.value(y).data().iter().all(|&v| v == 3.0));
}

#[test]
fn sum_gradient_is_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let s = g.sum(x, None).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0; 4]);
}

#[test]
fn half_sum_of_squares_gradient_is_input() {
    let mut g = Graph::<f64>::new();
    let data = vec![0.5, -1.5, 2.0, 7.0];
    let x = g.param(Tensor::from_vec(&[2, 2], data.clone()).unwrap());
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq, None).unwrap();
    let l = g.scale(s, 0.5);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &data[..]);
}

#[test]
fn repeated_backward_accumulates() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let s = g.sum(x, None).unwrap();
    g.backward(s).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0; 3]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::zeros(&[1, 1, 2, 2]));
    let y = g.scale(x, 2.0);
    assert!(matches!(g.backward(y), Err(DiffError::NonScalarLoss(_))));
}

#[test]
fn shape_mismatch_names_operand() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
    let w = g.constant(Tensor::zeros(&[2, 4, 3, 3]));
    let err = g.conv3x3(x, w, None).unwrap_err();
    match err {
        DiffError::Shape { op, operand, .. } => {
            assert_eq!(op, "conv3x3");
            assert_eq!(operand, "weight");
        }
        other => panic!("unexpected {other:?}"),
    }
    let a = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
    let b = g.constant(Tensor::zeros(&[1, 3, 2, 4]));
    assert!(g.add(a, b).is_err());
    assert!(g.broadcast_mul(a, b).is_err());
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::<f64>::new();
    let c = g.constant(Tensor::ones(&[2]));
    let p = g.param(Tensor::ones(&[2]));
    let m = g.mul(c, p).unwrap();
    let s = g.sum(m, None).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(p).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn conv_matches_direct_periodic_sum() {
    // direct quadruple loop oracle for the periodic 3×3 convolution
    let (c, h, w, co) = (2, 5, 4, 3);
    let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
    let k: Vec<f64> = (0..co * c * 9).map(|i| ((i * 13 % 7) as f64) * 0.5 - 1.0).collect();
    let mut g = Graph::<f64>::new();
    let xv = g.constant(Tensor::from_vec(&[1, c, h, w], x.clone()).unwrap());
    let kv = g.constant(Tensor::from_vec(&[co, c, 3, 3], k.clone()).unwrap());
    let y = g.conv3x3(xv, kv, None).unwrap();
    for o in 0..co {
        for i in 0..h {
            for j in 0..w {
                let mut s = 0.0;
                for ci in 0..c {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let yy = (i + h + dy - 1) % h;
                            let xx = (j + w + dx - 1) % w;
                            s += k[((o * c + ci) * 3 + dy) * 3 + dx] * x[(ci * h + yy) * w + xx];
                        }
                    }
                }
                let got = g.value(y).data()[(o * h + i) * w + j];
                assert!((got - s).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_vec(&[2, 3, 8, 8], (0..384).map(|i| (i as f32 * 0.1).sin()).collect()).unwrap());
        let w = g.constant(Tensor::from_vec(&[4, 3, 3, 3], (0..108).map(|i| (i as f32 * 0.3).cos()).collect()).unwrap());
        let y = g.conv3x3(x, w, None).unwrap();
        let z = g.gelu(y);
        g.value(z).clone()
    };
    assert_eq!(run(), run());
}
