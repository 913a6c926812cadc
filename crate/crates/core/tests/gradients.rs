mod common;

use gsn::numcore::{finite_diff_check, FdOptions, NumError};
use gsn::{AttendScope, Gsn};

fn check(model: &Gsn, rows: &[(&str, Option<usize>, &[u32])]) -> f64 {
    let session = common::session_from_rows(rows);
    let options = FdOptions {
        step: common::FD_STEP,
        max_per_tensor: None,
    };
    let report = finite_diff_check(&model.params, options, |tape| {
        model
            .session_loss(tape, &session)
            .map_err(|e| NumError::Shape(e.to_string()))
    })
    .unwrap();
    assert_eq!(report.checked, model.params.value_count());
    report.max_rel_error
}

#[test]
fn full_pipeline_gradient_single_layer() {
    let mut model = common::tiny_model(16, 4, 1, 2, 3);
    common::generic_weights(&mut model.params, 3);
    let err = check(&model, common::THREAD_SESSION);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn full_pipeline_gradient_two_layers_session_attention() {
    let mut model = common::tiny_model(16, 3, 2, 2, 4);
    model.options.attend = AttendScope::Session;
    common::generic_weights(&mut model.params, 4);
    let err = check(&model, common::THREAD_SESSION);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn full_pipeline_gradient_separate_direction_operators() {
    let base = common::tiny_model(16, 3, 1, 1, 5);
    let mut options = base.options;
    options.separate_direction_params = true;
    let mut model = Gsn::new(base.dims, options, 5);
    common::generic_weights(&mut model.params, 5);
    let err = check(&model, common::THREAD_SESSION);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn xavier_weights_pass_with_coarser_probe() {
    let model = common::tiny_model(16, 4, 1, 2, 6);
    let session = common::session_from_rows(common::THREAD_SESSION);
    let report = finite_diff_check(
        &model.params,
        FdOptions {
            step: 1e-3,
            max_per_tensor: None,
        },
        |tape| {
            model
                .session_loss(tape, &session)
                .map_err(|e| NumError::Shape(e.to_string()))
        },
    )
    .unwrap();
    assert!(report.within(1e-3), "{report:?}");
}
