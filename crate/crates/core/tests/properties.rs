use marginflow::analysis::norm_balance_residual;
use marginflow::datasets::{generate, SyntheticSpec};
use marginflow::dynamics::{
    field_constrained_fixed_rho, field_full_lagrange, field_reparameterized, field_unconstrained,
    field_weight_norm, tangent_project, ExponentMode, Flow, FlowField, FlowKind,
    NormOrder, Projector,
};
use marginflow::integrator::{InitScheme, RunSeed};
use marginflow::oracles::fd_gradient;
use marginflow::{Dataset, Matrix, NetworkParams, Vector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn net_from(seed: u64, dims: &[usize]) -> NetworkParams {
    RunSeed {
        seed,
        init_scale: 1.0,
        init_scheme: InitScheme::Gaussian,
    }
    .init_network(dims)
    .unwrap()
}

fn dims_strategy() -> impl Strategy<Value = Vec<usize>> {
    (1usize..=4, 1usize..=8).prop_flat_map(|(depth, d)| {
        prop::collection::vec(1usize..=8, depth - 1).prop_map(move |hidden| {
            let mut dims = vec![d];
            dims.extend(hidden);
            dims.push(1);
            dims
        })
    })
}

fn input(seed: u64, d: usize) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    Vector::from_fn(d, |_, _| rng.random_range(-2.0..2.0))
}

fn blobs(seed: u64) -> Dataset {
    generate(
        &SyntheticSpec::GaussianBlobs {
            d: 2,
            n: 8,
            gap: 1.0,
            seed,
        },
        true,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn structural_identity(seed in any::<u64>(), dims in dims_strategy()) {
        let net = net_from(seed, &dims);
        let x = input(seed, dims[0]);
        let f = net.forward(&x).unwrap();
        for r in net.structural_residual(&x).unwrap() {
            prop_assert!(r / (1.0 + f.abs()) < 1e-10);
        }
        let dirs = net.decompose().unwrap().direction_net();
        let fv = dirs.forward(&x).unwrap();
        for r in dirs.structural_residual(&x).unwrap() {
            prop_assert!(r / (1.0 + fv.abs()) < 1e-10);
        }
    }

    #[test]
    fn homogeneity_and_product_form(seed in any::<u64>(), dims in dims_strategy(), alpha in 0.01f64..100.0) {
        let net = net_from(seed, &dims);
        let x = input(seed, dims[0]);
        let f = net.forward(&x).unwrap();
        let k = (seed as usize) % net.depth();
        let scaled = net.scale_layer(k, alpha).forward(&x).unwrap();
        prop_assert!((scaled - alpha * f).abs() <= 1e-12 * (alpha * f).abs().max(1e-300));
        let norm = net.decompose().unwrap();
        let fv = norm.direction_net().forward(&x).unwrap();
        prop_assert!((norm.rho_product() * fv - f).abs() <= 1e-12 * f.abs().max(1e-300));
        let back = norm.compose();
        for (a, b) in back.layers().iter().zip(net.layers()) {
            prop_assert!((a - b).norm() <= 1e-14 * b.norm());
        }
    }

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>(), dims in dims_strategy()) {
        let net = net_from(seed, &dims);
        let x = input(seed, dims[0]);
        let pass = net.forward_pass(&x).unwrap();
        prop_assume!(pass.min_abs_preactivation() > 1e-4);
        let Ok(fd) = fd_gradient(net.layers(), &x, 1e-6) else {
            return Err(TestCaseError::reject("kink"));
        };
        let g = net.grad_weights(&x).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            prop_assert!((a - b).norm() <= 1e-6 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn projector_algebra(v in prop::collection::vec(-3.0f64..3.0, 2..8)) {
        let v = Vector::from_vec(v);
        prop_assume!(v.norm() > 1e-3);
        let u = &v / v.norm();
        let p = Projector::sphere(u.as_slice()).unwrap();
        let s = p.to_dense();
        prop_assert!((&s * &s - &s).abs().max() < 1e-12);
        prop_assert!((&s * &u).norm() < 1e-12);
        prop_assert!((&s - s.transpose()).abs().max() < 1e-15);
        let eig = s.symmetric_eigenvalues();
        let zeros = eig.iter().filter(|e| e.abs() < 1e-10).count();
        let ones = eig.iter().filter(|e| (*e - 1.0).abs() < 1e-10).count();
        prop_assert_eq!(zeros, 1);
        prop_assert_eq!(ones, u.len() - 1);
    }

    #[test]
    fn tangent_projection_preserves_p_norm_to_first_order(
        u in prop::collection::vec(0.05f64..2.0, 2..6),
        signs in prop::collection::vec(any::<bool>(), 6),
        g in prop::collection::vec(-1.0f64..1.0, 6),
        p in prop_oneof![Just(1.0), Just(2.0), Just(3.0), Just(f64::INFINITY)],
    ) {
        let n = u.len();
        let mut u = Vector::from_iterator(n, u.iter().zip(&signs).map(|(v, s)| if *s { *v } else { -*v }));
        let order = NormOrder::new(p).unwrap();
        u /= order.norm(u.as_slice());
        let g = Vector::from_column_slice(&g[..n]);
        let Ok(h) = tangent_project(&u, &g, order) else {
            return Err(TestCaseError::reject("kink"));
        };
        let nu = order.gradient(u.as_slice()).unwrap();
        prop_assert!(nu.dot(&h).abs() < 1e-12 * (1.0 + g.norm()));
    }

    #[test]
    fn constrained_fields_conserve_norm(seed in any::<u64>(), rho in 0.1f64..20.0) {
        let data = blobs(seed);
        let net = net_from(seed, &[3, 4, 1]);
        let norm = net.decompose().unwrap();
        let v = field_constrained_fixed_rho(norm.dirs(), rho, &data, ExponentMode::Shifted).unwrap();
        for (a, b) in norm.dirs().iter().zip(&v.value) {
            prop_assert!(a.dot(b).abs() < 1e-12 * (1.0 + b.norm()));
        }
        let full = field_full_lagrange(&norm, &data, ExponentMode::Shifted).unwrap();
        for (a, b) in norm.dirs().iter().zip(&full.value.dir_dot) {
            prop_assert!(a.dot(b).abs() < 1e-12 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn weight_norm_equals_full_lagrange(seed in any::<u64>(), dims in dims_strategy()) {
        let mut dims = dims;
        dims[0] = 3;
        let data = blobs(seed);
        let norm = net_from(seed, &dims).decompose().unwrap();
        let wn = field_weight_norm(norm.rhos(), norm.dirs(), &data, ExponentMode::Raw).unwrap();
        let fl = field_full_lagrange(&norm, &data, ExponentMode::Raw).unwrap();
        for (a, b) in wn.value.rho_dot.iter().zip(&fl.value.rho_dot) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        for (a, b) in wn.value.dir_dot.iter().zip(&fl.value.dir_dot) {
            prop_assert!((a - b).abs().max() <= 1e-12 * (1.0 + b.abs().max()));
        }
    }

    #[test]
    fn constrained_is_rho_k_squared_times_reparameterized(seed in any::<u64>(), dims in dims_strategy()) {
        let mut dims = dims;
        dims[0] = 3;
        let data = blobs(seed);
        let net = net_from(seed, &dims);
        let norm = net.decompose().unwrap();
        let rep = field_reparameterized(&net, &data, ExponentMode::Raw).unwrap();
        let con = field_constrained_fixed_rho(norm.dirs(), norm.rho_product(), &data, ExponentMode::Raw).unwrap();
        for ((r, c), rk) in rep.value.dir_dot.iter().zip(&con.value).zip(norm.rhos()) {
            let scaled = r * (rk * rk);
            for (a, b) in scaled.iter().zip(c.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * (b.abs() + 1e-12 * c.abs().max()));
            }
        }
    }

    #[test]
    fn norm_balance_holds_everywhere(seed in any::<u64>(), dims in dims_strategy()) {
        let mut dims = dims;
        dims[0] = 3;
        let data = blobs(seed);
        let net = net_from(seed, &dims);
        prop_assert!(norm_balance_residual(&net, &data).unwrap() < 1e-10);
    }

    #[test]
    fn loss_never_increases_along_any_field(seed in any::<u64>(), which in 0usize..6) {
        let data = blobs(seed);
        let net = net_from(seed, &[3, 3, 1]);
        let kind = [
            FlowKind::Unconstrained,
            FlowKind::ConstrainedFixedRho { rho: net.rho() },
            FlowKind::FullLagrange,
            FlowKind::Reparameterized,
            FlowKind::WeightNorm,
            FlowKind::BatchNormCore { eps: 1e-3 },
        ][which];
        let flow = FlowField::new(kind, data.clone(), ExponentMode::Shifted).unwrap();
        let state = flow.initial_state(&net).unwrap();
        let value = flow.evaluate(0.0, &state).unwrap();
        // dL/dt = ⟨∇_W L, dW/dt⟩ with ∇_W L = −Ẇ; dW/dt by central differences
        // of the effective network along the field.
        let h = 1e-6;
        let mut plus = state.clone();
        plus.axpy(h, &value.derivative);
        let mut minus = state.clone();
        minus.axpy(-h, &value.derivative);
        let wp = flow.effective_network(&plus).unwrap();
        let wm = flow.effective_network(&minus).unwrap();
        let w0 = flow.effective_network(&state).unwrap();
        let grad = field_unconstrained(&w0, &data, ExponentMode::Shifted).unwrap();
        let mut rate = 0.0;
        for ((a, b), g) in wp.layers().iter().zip(wm.layers()).zip(&grad.value) {
            let dw: Matrix = (a - b) / (2.0 * h);
            rate -= g.dot(&dw);
        }
        let scale = grad.value.iter().map(|g| g.norm_squared()).sum::<f64>();
        prop_assert!(rate <= 1e-6 * (1.0 + scale), "dL/dt = {rate}");
    }
}
