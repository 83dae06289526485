use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use proptest::prelude::*;

use fusion3d::filter::{predict, predict_with, run_pixel_filter, update, EpochSystem, FilterState, PixelInputs, ProcessModel};
use fusion3d::fixtures;
use fusion3d::timegrid::{Interpolated, ResampledSeries, TimeGrid};
use fusion3d::{los_unit_vector, LookSide, SensorSet};

fn unit(inc: f64, head: f64) -> Vector3<f64> {
    los_unit_vector(inc, head, LookSide::Right).unwrap()
}

fn system(rows: &[Vector3<f64>], y: &[f64], r: &[f64]) -> EpochSystem {
    let a = DMatrix::from_row_iterator(rows.len(), 3, rows.iter().flat_map(|c| c.iter().copied()));
    let ids = (0..rows.len()).map(|i| format!("s{i}")).collect();
    EpochSystem::new(0, ids, DVector::from_row_slice(y), a, DVector::from_row_slice(r)).unwrap()
}

fn min_eig(m: &Matrix3<f64>) -> f64 {
    SymmetricEigen::new(*m).eigenvalues.min()
}

fn psd(v: [f64; 9], scale: f64) -> Matrix3<f64> {
    let l = Matrix3::from_row_slice(&v);
    l * l.transpose() * scale
}

/// Normal equations over the prior and every stacked row.
fn batch_wls(x0: &Vector3<f64>, p0: &Matrix3<f64>, epochs: &[(Vec<Vector3<f64>>, Vec<f64>, Vec<f64>)]) -> Vector3<f64> {
    let w0 = p0.try_inverse().unwrap();
    let mut n = w0;
    let mut b = w0 * x0;
    for (rows, y, r) in epochs {
        for ((c, &yi), &ri) in rows.iter().zip(y).zip(r) {
            n += c * c.transpose() / ri;
            b += c * yi / ri;
        }
    }
    n.lu().solve(&b).unwrap()
}

fn angles() -> impl Strategy<Value = (f64, f64)> {
    (5.0f64..60.0, 0.0f64..360.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_batch_least_squares(
        x0 in prop::array::uniform3(-5.0f64..5.0),
        l0 in prop::array::uniform9(-1.0f64..1.0),
        truth in prop::array::uniform3(-20.0f64..20.0),
        geoms in prop::collection::vec(angles(), 3),
        noise in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 2..12),
        var in prop::array::uniform3(0.1f64..5.0),
    ) {
        let x0 = Vector3::from(x0);
        let p0 = psd(l0, 4.0) + Matrix3::identity();
        let rows: Vec<_> = geoms.iter().map(|&(i, h)| unit(i, h)).collect();
        let truth = Vector3::from(truth);
        let epochs: Vec<_> = noise
            .iter()
            .map(|e| {
                let y: Vec<f64> = rows.iter().zip(e).map(|(c, e)| c.dot(&truth) + e).collect();
                (rows.clone(), y, var.to_vec())
            })
            .collect();
        let mut state = FilterState { x: x0, p: p0 };
        for (rows, y, r) in &epochs {
            state = predict_with(&state, &Vector3::zeros(), &Matrix3::zeros());
            state = update(&state, &system(rows, y, r)).unwrap();
        }
        let oracle = batch_wls(&x0, &p0, &epochs);
        prop_assert!((state.x - oracle).norm() <= 1e-8 * oracle.norm().max(1.0), "{} vs {}", state.x, oracle);
    }

    #[test]
    fn covariance_stays_symmetric_and_psd(
        steps in prop::collection::vec(
            (prop::array::uniform9(-1.0f64..1.0), prop::collection::vec((angles(), 0.1f64..10.0, -10.0f64..10.0), 0..4)),
            1..40,
        ),
    ) {
        let mut state = FilterState::zero();
        for (lq, obs) in steps {
            let q = psd(lq, 2.0);
            let pred = predict_with(&state, &Vector3::new(0.1, -0.2, 0.0), &q);
            for i in 0..3 {
                prop_assert!((pred.p[(i, i)] - state.p[(i, i)] - q[(i, i)]).abs() <= 1e-9 * (1.0 + q[(i, i)]));
            }
            let rows: Vec<_> = obs.iter().map(|&((i, h), _, _)| unit(i, h)).collect();
            let r: Vec<f64> = obs.iter().map(|o| o.1).collect();
            let y: Vec<f64> = obs.iter().map(|o| o.2).collect();
            let post = update(&pred, &system(&rows, &y, &r)).unwrap();
            prop_assert!((post.p - post.p.transpose()).amax() <= 1e-10);
            prop_assert!(min_eig(&post.p) >= -1e-9);
            prop_assert!(min_eig(&(pred.p - post.p)) >= -1e-9);
            state = post;
        }
    }

    #[test]
    fn relative_displacements_survive_constant_offset(
        offset in prop::array::uniform3(-50.0f64..50.0),
        trend in prop::array::uniform3(-10.0f64..10.0),
    ) {
        let (sensors, grid) = dense_table1(12);
        let truth: Vec<Vector3<f64>> = grid.epochs().iter().map(|t| Vector3::from(trend) * (t - grid.epochs()[0])).collect();
        let shifted: Vec<Vector3<f64>> = truth.iter().enumerate().map(|(k, d)| if k >= 1 { d + Vector3::from(offset) } else { *d }).collect();
        let traj = run_pixel_filter(&forward(&sensors, &shifted, 1e-14), &model(trend), &sensors, &grid).unwrap();
        for j in 1..truth.len() {
            for k in j + 1..truth.len() {
                let got = traj.states[k].x - traj.states[j].x;
                let want = truth[k] - truth[j];
                prop_assert!((got - want).amax() <= 1e-6, "epochs {j},{k}: {got} vs {want}");
            }
        }
    }
}

fn dense_table1(n: usize) -> (SensorSet, TimeGrid) {
    let sensors = SensorSet::new(fixtures::geometries()).unwrap();
    let grid = TimeGrid::from_epochs((0..n).map(|k| 2008.0 + 0.1 * k as f64).collect()).unwrap();
    (sensors, grid)
}

fn forward(sensors: &SensorSet, truth: &[Vector3<f64>], var: f64) -> PixelInputs {
    let series = sensors
        .iter()
        .map(|g| ResampledSeries {
            sensor_id: g.sensor_id().to_string(),
            pixel_id: "p".into(),
            values: truth.iter().map(|d| Some(Interpolated { los_mm: g.project(d), var_mm2: var })).collect(),
        })
        .collect();
    PixelInputs { pixel_id: "p".into(), series }
}

fn model(trend: [f64; 3]) -> ProcessModel {
    ProcessModel { velocity: [trend[0], trend[1]], velocity_var: [1.0, 1.0], q_z: 1.0 }
}

#[test]
fn zero_noise_trajectory_is_recovered() {
    let (sensors, grid) = dense_table1(30);
    let t0 = grid.epochs()[0];
    let truth: Vec<Vector3<f64>> = grid
        .epochs()
        .iter()
        .map(|&t| {
            let dt = t - t0;
            Vector3::new(5.0 * dt, 10.0 * dt, -3.0 * dt + 3.0 * (std::f64::consts::TAU * dt).sin())
        })
        .collect();
    let traj = run_pixel_filter(&forward(&sensors, &truth, 1e-8), &model([5.0, 10.0, 0.0]), &sensors, &grid).unwrap();
    for (x, t) in traj.displacements().zip(&truth) {
        assert!((x - t).amax() < 1e-3, "{x} vs {t}");
    }
}

#[test]
fn prediction_grows_diagonal_by_process_noise() {
    let m = ProcessModel { velocity: [10.0, 20.0], velocity_var: [4.0, 9.0], q_z: 2.0 };
    let s = FilterState { x: Vector3::new(1.0, 2.0, 3.0), p: Matrix3::identity() };
    let p = predict(&s, 0.1, &m).unwrap();
    assert_eq!(p.x, Vector3::new(2.0, 4.0, 3.0));
    let grow = p.p.diagonal() - s.p.diagonal();
    assert!((grow - Vector3::new(0.04, 0.09, 0.2)).amax() < 1e-15);
}
