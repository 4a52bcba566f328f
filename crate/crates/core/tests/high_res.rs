//! Modified equations: which continuous flow a discrete step tracks, and to what order.

mod common;

use std::sync::Arc;

use common::{loglog_slope, rk4_reference};
use gameflow::dal::{make_task, Architecture, DalGame, TaskParams};
use gameflow::integrators::Integrator;
use gameflow::quad::{example2, random_quadratic, seeded_start, SpectralProfile};
use gameflow::stability::{exact_threshold, hurwitz_check, HighResKind, HighResOde};
use gameflow::{DVector, GameDefinition, Method};

const ETAS: [f64; 4] = [0.04, 0.02, 0.01, 0.005];

fn small_dal() -> (GameDefinition, DVector<f64>) {
    let arch = Architecture {
        input_dim: 2,
        hidden: 3,
        feature_dim: 2,
        classes: 2,
        domain_hidden: 2,
    };
    let task = make_task(TaskParams {
        n_per_domain: 20,
        ..TaskParams::default()
    })
    .unwrap();
    let game = DalGame::new(arch, Arc::new(task), 1.0, 1.0).unwrap();
    (game.definition(), arch.init_params(3, 1.0))
}

/// Distance after one step of size `eta` between `step` and the flow of `kind`.
fn local_errors(def: &GameDefinition, w0: &DVector<f64>, kind: HighResKind, method: Method) -> Vec<f64> {
    ETAS.iter()
        .map(|&eta| {
            let ode = HighResOde::new(def.clone(), kind, eta);
            let flow = rk4_reference(|w| ode.eval(w).unwrap(), w0, eta, 1000);
            let mut integ = Integrator::new(method, eta, w0.len()).unwrap();
            let v = def.field(w0).unwrap();
            let step = integ.step(def, w0, &v).unwrap();
            (step - flow).norm()
        })
        .collect()
}

/// Local error of gradient descent against the plain flow (order 2)
/// and the corrected flow (order 3).
fn check_gd(def: &GameDefinition, w0: &DVector<f64>) {
    // the plain flow is the RK2 modified equation at this order
    let plain = local_errors(def, w0, HighResKind::Rk2, Method::Euler);
    let corrected = local_errors(def, w0, HighResKind::Gd, Method::Euler);
    let sp = loglog_slope(&ETAS, &plain);
    let sc = loglog_slope(&ETAS, &corrected);
    assert!((sp - 2.0).abs() < 0.2, "plain slope {sp}: {plain:?}");
    assert!((sc - 3.0).abs() < 0.3, "corrected slope {sc}: {corrected:?}");
    for (p, c) in plain.iter().zip(&corrected) {
        assert!(c < p);
    }
}

#[test]
fn gd_tracks_corrected_flow_on_linear_game() {
    let g = random_quadratic(4, 3, 2, SpectralProfile::Mixed { real_min: 0.5, real_max: 2.0, imag: 1.5 }).unwrap();
    check_gd(&g.definition(), &seeded_start(6, 4));
}

#[test]
fn gd_tracks_corrected_flow_on_network_game() {
    let (def, w0) = small_dal();
    check_gd(&def, &w0);
}

#[test]
fn heun_tracks_plain_flow_to_third_order() {
    let (def, w0) = small_dal();
    let errs = local_errors(&def, &w0, HighResKind::Rk2, Method::heun());
    let s = loglog_slope(&ETAS, &errs);
    assert!((s - 3.0).abs() < 0.3, "slope {s}: {errs:?}");
}

#[test]
fn correction_metadata() {
    let (def, _) = small_dal();
    let gd = HighResOde::new(def.clone(), HighResKind::Gd, 0.1);
    assert_eq!(gd.correction_coefficient(), -0.05);
    assert_eq!(gd.order_of_validity(), 2);
    assert_eq!(HighResOde::new(def.clone(), HighResKind::Rk2, 0.1).correction_coefficient(), 0.0);
    assert_eq!(HighResOde::new(def, HighResKind::Rk4, 0.1).order_of_validity(), 4);
}

#[test]
fn example2_bounds() {
    let m = example2().field_matrix().clone();
    let report = hurwitz_check(&(-&m)).unwrap();
    assert!(report.hurwitz_stable);
    let bound = report.gd_eta_bound.unwrap();
    let exact = exact_threshold(&m, Method::Euler).unwrap().unwrap();
    // eigenvalues -3 +- 98i: bound -2a/(b^2-a^2), exact -2a/(a^2+b^2)
    assert!((bound - 6.0 / 9787.0).abs() <= 1e-12 * bound);
    assert!((exact - 6.0 / 9805.0).abs() <= 1e-10 * exact);
    assert!((bound - exact).abs() / exact < 0.01);
}
