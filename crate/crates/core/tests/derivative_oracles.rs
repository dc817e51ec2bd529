//! The simulation-layer Jacobian against finite differences, and the full
//! implied weight gradients against numerical differentiation of the loss.

mod common;

use causaltwin_core::learner::{
    bipolar_sigmoid, jacobian_error_contraction, sim_jacobian, sim_layer, Network, NetworkConfig,
};
use causaltwin_core::{CausalGraph, LagWindow, ParamLayout};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut ChaCha8Rng, n: usize, half_range: f64) -> Array1<f64> {
    Array1::from(
        (0..n)
            .map(|_| half_range * (2.0 * rng.random::<f64>() - 1.0))
            .collect::<Vec<_>>(),
    )
}

#[test]
fn complex_step_jacobian_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (graph, _) = common::random_system(&mut rng);
        let layout = ParamLayout::new(&graph).unwrap();
        let g = graph.node_count();
        let m = graph.lag_order();
        let x2 = random_vec(&mut rng, layout.len(), 1.0);
        let y = random_vec(&mut rng, g, 2.0);
        let lags = LagWindow::new((0..m).map(|_| random_vec(&mut rng, g, 2.0)).collect());

        let cs = sim_jacobian(x2.view(), &layout, y.view(), &lags, 1e-20).unwrap();

        let h = 1e-6;
        for j in 0..layout.len() {
            let mut plus = x2.clone();
            let mut minus = x2.clone();
            plus[j] += h;
            minus[j] -= h;
            let fp = sim_layer(plus.view(), &layout, y.view(), &lags).unwrap();
            let fm = sim_layer(minus.view(), &layout, y.view(), &lags).unwrap();
            for i in 0..g {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                let a = cs[[i, j]];
                assert!(
                    (a - fd).abs() <= 1e-8 * a.abs().max(1.0),
                    "J[{i},{j}]: complex-step {a} vs finite-diff {fd}"
                );
            }
        }
    }
}

#[test]
fn implied_weight_gradients_match_loss_finite_differences() {
    // Random small networks over random graphs; every weight of W1 and W2.
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut done = 0;
    while done < 10 {
        let (graph, _) = common::random_system(&mut rng);
        let layout = ParamLayout::new(&graph).unwrap();
        if layout.len() > 8 {
            continue; // keep the finite-difference sweep small
        }
        let g = graph.node_count();
        let m = graph.lag_order();
        let config = NetworkConfig {
            hidden_size: 4,
            context_size: 2,
            seed: 1000 + done as u64,
            ..NetworkConfig::default()
        };
        let net = Network::new(&graph, config.clone()).unwrap();
        let x0 = random_vec(&mut rng, net.input_size(), 1.0);
        let y = random_vec(&mut rng, g, 1.0);
        let lags = LagWindow::new((0..m).map(|_| random_vec(&mut rng, g, 1.0)).collect());

        let loss = |w1: &Array2<f64>, w2: &Array2<f64>| -> f64 {
            let x1 = bipolar_sigmoid(w1.dot(&x0).view());
            let x2 = w2.dot(&x1);
            let x3 = sim_layer(x2.view(), &layout, y.view(), &lags).unwrap();
            let e = &y - &x3;
            e.dot(&e)
        };

        let (x1, x2) = net.forward(x0.view()).unwrap();
        let x3 = sim_layer(x2.view(), &layout, y.view(), &lags).unwrap();
        let e = &y - &x3;
        let jac = sim_jacobian(x2.view(), &layout, y.view(), &lags, 1e-20).unwrap();
        let jte = jacobian_error_contraction(&jac, e.view());
        let mut stepped = net.clone();
        stepped
            .backprop_update(x0.view(), x1.view(), jte.view())
            .unwrap();
        let eta = config.learning_rate;
        let grad_w1 = (stepped.w1() - net.w1()).mapv(|v| -2.0 * v / eta);
        let grad_w2 = (stepped.w2() - net.w2()).mapv(|v| -2.0 * v / eta);

        let h = 1e-6;
        for pi in 0..net.hidden_size() {
            for mi in 0..net.input_size() {
                let mut wp = net.w1().to_owned();
                let mut wm = net.w1().to_owned();
                wp[[pi, mi]] += h;
                wm[[pi, mi]] -= h;
                let fd = (loss(&wp, net.w2()) - loss(&wm, net.w2())) / (2.0 * h);
                let a = grad_w1[[pi, mi]];
                assert!(
                    (a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-3),
                    "W1[{pi},{mi}]: implied {a} vs finite-diff {fd}"
                );
            }
        }
        for qi in 0..net.output_size() {
            for pi in 0..net.hidden_size() {
                let mut wp = net.w2().to_owned();
                let mut wm = net.w2().to_owned();
                wp[[qi, pi]] += h;
                wm[[qi, pi]] -= h;
                let fd = (loss(net.w1(), &wp) - loss(net.w1(), &wm)) / (2.0 * h);
                let a = grad_w2[[qi, pi]];
                assert!(
                    (a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-3),
                    "W2[{qi},{pi}]: implied {a} vs finite-diff {fd}"
                );
            }
        }
        done += 1;
    }
}

#[test]
fn logistic_derivative_flag_changes_w1_updates_only() {
    let graph = CausalGraph::new(
        common::labels(3),
        0,
        vec![(0, 1), (1, 2)],
        vec![],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base_config = NetworkConfig {
        hidden_size: 4,
        context_size: 0,
        seed: 7,
        ..NetworkConfig::default()
    };
    let alternate_config = NetworkConfig {
        logistic_activation_derivative: true,
        ..base_config.clone()
    };
    let layout = ParamLayout::new(&graph).unwrap();
    let net_a = Network::new(&graph, base_config).unwrap();
    let net_b = Network::new(&graph, alternate_config).unwrap();
    assert_eq!(net_a.w1(), net_b.w1(), "same seed, same init");

    let x0 = random_vec(&mut rng, net_a.input_size(), 1.0);
    let y = random_vec(&mut rng, 3, 1.0);
    let lags = LagWindow::zeros(0, 3);
    let (x1, x2) = net_a.forward(x0.view()).unwrap();
    let x3 = sim_layer(x2.view(), &layout, y.view(), &lags).unwrap();
    let e = &y - &x3;
    let jac = sim_jacobian(x2.view(), &layout, y.view(), &lags, 1e-20).unwrap();
    let jte = jacobian_error_contraction(&jac, e.view());

    let mut stepped_a = net_a.clone();
    let mut stepped_b = net_b.clone();
    stepped_a
        .backprop_update(x0.view(), x1.view(), jte.view())
        .unwrap();
    stepped_b
        .backprop_update(x0.view(), x1.view(), jte.view())
        .unwrap();
    assert_eq!(stepped_a.w2(), stepped_b.w2(), "W2 update has no activation term");
    assert_ne!(stepped_a.w1(), stepped_b.w1(), "W1 update depends on the derivative");
}
