//! Statistical calibration of the smoother outputs on a linear-Gaussian
//! model, where the exact posterior is known.

use nalgebra::{DMatrix, DVector};
use smoothers::{
    nees, noniterative_smooth, simulate, DiffMap, Gaussian, LinearizationMode, NonlinearSsm,
};

/// A fixed, well-conditioned linear-Gaussian model.
fn linear_model(horizon: usize) -> NonlinearSsm {
    let d = 4;
    let f = DMatrix::from_row_slice(
        d,
        d,
        &[
            0.9, 0.1, 0.0, 0.0, //
            -0.1, 0.9, 0.05, 0.0, //
            0.0, 0.0, 0.8, 0.2, //
            0.05, 0.0, -0.2, 0.8,
        ],
    );
    let h = DMatrix::from_row_slice(2, d, &[1.0, 0.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.5]);
    let q = DMatrix::identity(d, d) * 0.04;
    let r = DMatrix::identity(2, 2) * 0.25;
    let prior = Gaussian::new(DVector::zeros(d), DMatrix::identity(d, d)).unwrap();
    NonlinearSsm::time_invariant(
        horizon,
        DiffMap::affine(f.clone(), DVector::zeros(d)),
        q,
        DiffMap::affine(h, DVector::zeros(2)),
        r,
        prior,
    )
    .unwrap()
}

#[test]
fn smoothed_nees_is_chi_square_calibrated_on_a_linear_model() {
    // For the exact posterior, e_kᵀ P̂_k⁻¹ e_k has mean d_x. Averaged over
    // 200 independent trials the sample mean must sit within d_x ± 0.3.
    let model = linear_model(50);
    let trials = 200;
    let mut total = 0.0;
    for trial in 0..trials {
        let (truth, y) = simulate(&model, 9000 + trial);
        let run = noniterative_smooth(&model, &y, LinearizationMode::Taylor).unwrap();
        let (_, mean) = nees(&run, &truth).unwrap();
        total += mean;
    }
    let grand_mean = total / trials as f64;
    assert!(
        (grand_mean - 4.0).abs() < 0.3,
        "mean NEES {grand_mean} outside 4 ± 0.3"
    );
}

#[test]
fn smoothing_beats_the_prior_spread() {
    // Sanity check that conditioning on data reduces error: the smoothed
    // full-state RMSE must clearly beat the unconditional prior spread
    // (unit variance per component, so ‖e‖ ≈ 2 without data).
    let model = linear_model(50);
    let (truth, y) = simulate(&model, 77);
    let run = noniterative_smooth(&model, &y, LinearizationMode::Taylor).unwrap();
    let err = smoothers::rmse(run.means(), &truth, &[0, 1, 2, 3]).unwrap();
    assert!(err < 1.0, "smoothed RMSE {err} did not beat the prior spread");
}
