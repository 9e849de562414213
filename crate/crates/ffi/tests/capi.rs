use std::ffi::{CStr, CString};
use std::ptr;

use fairaudit::mlp::{Activation, MlpParams};
use fairaudit::model::{Classifier, ModelRole, TrainedModel};
use fairaudit_ffi::*;

fn preds(ids: &[u64], scores: &[f64]) -> *mut FaPredictions {
    let mut out = ptr::null_mut();
    let status = unsafe {
        fa_predictions_from_scores(ids.as_ptr(), scores.as_ptr(), ids.len(), 0.5, &mut out)
    };
    assert_eq!(status, FaStatus::Ok);
    out
}

fn last_error() -> String {
    let p = fa_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn delta_matches_hand_count() {
    let ids = [1, 2, 3, 4];
    let s = [0u8, 1, 0, 1];
    let f = preds(&ids, &[0.1, 0.2, 0.9, 0.8]);
    let g = preds(&ids, &[0.1, 0.7, 0.9, 0.3]);
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(fa_delta_compute(f, g, s.as_ptr(), 4, &mut d), FaStatus::Ok);
        assert_eq!(fa_delta_len(d), 2);

        let mut changed = [0u64; 2];
        assert_eq!(fa_delta_ids(d, changed.as_mut_ptr(), 2), FaStatus::Ok);
        assert_eq!(changed, [2, 4]);

        let mut impact = 0.0;
        assert_eq!(fa_delta_impact_fraction(d, &mut impact), FaStatus::Ok);
        assert_eq!(impact, 0.5);

        let mut counts = [9usize; 4];
        assert_eq!(
            fa_delta_direction_counts(d, counts.as_mut_ptr()),
            FaStatus::Ok
        );
        // id 2 (s=1) went 0 -> 1, id 4 (s=1) went 1 -> 0.
        assert_eq!(counts, [0, 1, 0, 1]);

        let mut value = 0.0;
        let mut degenerate = true;
        let both = [d as *const FaDelta, d as *const FaDelta];
        assert_eq!(
            fa_iou(both.as_ptr(), 2, &mut value, &mut degenerate),
            FaStatus::Ok
        );
        assert_eq!((value, degenerate), (1.0, false));

        fa_delta_free(d);
        fa_predictions_free(f);
        fa_predictions_free(g);
    }
}

#[test]
fn empty_deltas_have_vacuous_iou() {
    let ids = [7, 8];
    let f = preds(&ids, &[0.2, 0.9]);
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(
            fa_delta_compute(f, f, [0u8, 1].as_ptr(), 2, &mut d),
            FaStatus::Ok
        );
        assert_eq!(fa_delta_len(d), 0);
        assert_eq!(fa_delta_ids(d, ptr::null_mut(), 0), FaStatus::Ok);
        let (mut value, mut degenerate) = (0.0, false);
        let both = [d as *const FaDelta, d as *const FaDelta];
        assert_eq!(
            fa_iou(both.as_ptr(), 2, &mut value, &mut degenerate),
            FaStatus::Ok
        );
        assert_eq!((value, degenerate), (1.0, true));
        fa_delta_free(d);
        fa_predictions_free(f);
    }
}

#[test]
fn fairness_scores_by_hand() {
    // Labels 1,0 | 1,1 against y 1,0 | 1,0 for groups s=0 | s=1.
    let p = preds(&[1, 2, 3, 4], &[0.9, 0.1, 0.8, 0.7]);
    let y = [1u8, 0, 1, 0];
    let s = [0u8, 0, 1, 1];
    let mut out = FaFairnessScores::default();
    unsafe {
        assert_eq!(
            fa_fairness_scores(p, y.as_ptr(), s.as_ptr(), 4, &mut out),
            FaStatus::Ok
        );
        fa_predictions_free(p);
    }
    assert_eq!(out.accuracy, 0.75);
    assert_eq!((out.positive_rate_s0, out.positive_rate_s1), (0.5, 1.0));
    assert_eq!(out.p_rule, 0.5);
    assert_eq!((out.tpr_s0, out.tpr_s1), (1.0, 1.0));
    assert_eq!((out.fpr_s0, out.fpr_s1), (0.0, 1.0));
    assert_eq!((out.d_tpr, out.d_fpr), (0.0, 1.0));
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut out = ptr::null_mut();
        let status = fa_predictions_from_scores(ptr::null(), ptr::null(), 3, 0.5, &mut out);
        assert_eq!(status, FaStatus::NullPointer);
        assert!(out.is_null());
        assert!(last_error().contains("ids"));

        let f = preds(&[1, 2], &[0.1, 0.9]);
        let g = preds(&[1, 3], &[0.1, 0.9]);
        let mut d = ptr::null_mut();
        assert_eq!(
            fa_delta_compute(f, g, [0u8, 1].as_ptr(), 2, &mut d),
            FaStatus::IdMismatch
        );
        assert!(d.is_null());

        assert_eq!(
            fa_delta_compute(f, f, [0u8, 2].as_ptr(), 2, &mut d),
            FaStatus::InvalidArgument
        );
        assert!(last_error().contains("not 0 or 1"));

        let mut fs = FaFairnessScores::default();
        assert_eq!(
            fa_fairness_scores(f, [1u8, 0].as_ptr(), [0u8, 0].as_ptr(), 2, &mut fs),
            FaStatus::Degenerate
        );

        let mut labels = [0u8; 3];
        assert_eq!(
            fa_predictions_labels(f, labels.as_mut_ptr(), 3),
            FaStatus::DimensionMismatch
        );
        assert_eq!(
            fa_predictions_labels(f, labels.as_mut_ptr(), 2),
            FaStatus::Ok
        );
        assert_eq!(&labels[..2], &[0, 1]);

        let one = [ptr::null::<FaDelta>()];
        let (mut v, mut dg) = (0.0, false);
        assert_eq!(
            fa_iou(one.as_ptr(), 1, &mut v, &mut dg),
            FaStatus::NullPointer
        );

        fa_predictions_free(f);
        fa_predictions_free(g);
        // Freeing null is a no-op.
        fa_predictions_free(ptr::null_mut());
        fa_delta_free(ptr::null_mut());
        fa_model_free(ptr::null_mut());
    }
}

#[test]
fn model_round_trip_through_a_file() {
    let mut params = MlpParams::zeros(2, &[], Activation::Relu);
    params.layers[0].weights[[0, 0]] = 2.0;
    params.layers[0].weights[[0, 1]] = -1.0;
    let model = TrainedModel::new(ModelRole::Biased, Classifier::Mlp(params), None, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.model");
    model.save(&path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(fa_model_load(cpath.as_ptr(), &mut m), FaStatus::Ok);
        let fp = CStr::from_ptr(fa_model_fingerprint(m)).to_str().unwrap();
        assert_eq!(fp, model.fingerprint());

        // Rows: (1, 0) -> logit 2, (0, 1) -> logit -1.
        let x = [1.0, 0.0, 0.0, 1.0];
        let ids = [10u64, 11];
        let mut p = ptr::null_mut();
        assert_eq!(
            fa_model_predict(m, x.as_ptr(), 2, 2, ids.as_ptr(), 0.5, &mut p),
            FaStatus::Ok
        );
        let mut labels = [9u8; 2];
        assert_eq!(
            fa_predictions_labels(p, labels.as_mut_ptr(), 2),
            FaStatus::Ok
        );
        assert_eq!(labels, [1, 0]);
        fa_predictions_free(p);

        let mut q = ptr::null_mut();
        assert_eq!(
            fa_model_predict(m, x.as_ptr(), 1, 4, ids.as_ptr(), 0.5, &mut q),
            FaStatus::DimensionMismatch
        );
        fa_model_free(m);

        let missing = CString::new(dir.path().join("absent").to_str().unwrap()).unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(
            fa_model_load(missing.as_ptr(), &mut m),
            FaStatus::MissingArtifact
        );
        assert!(last_error().contains("absent"));
    }
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fairaudit.h"),
    )
    .expect("build script writes the header");
    for name in [
        "FA_STATUS_OK",
        "FA_STATUS_PANIC",
        "typedef struct FaPredictions FaPredictions",
        "typedef struct FaDelta FaDelta",
        "FaFairnessScores",
        "fa_last_error_message",
        "fa_predictions_from_scores",
        "fa_model_load",
        "fa_model_predict",
        "fa_fairness_scores",
        "fa_delta_compute",
        "fa_delta_direction_counts",
        "fa_iou",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
