use ic_align::datagen::{default_affine_source, gen_affine_pair, gen_rgbd_pair, AffineGenSpec, RgbdSceneSpec};
use ic_align::geometry::{exp_se3, Twist};
use ic_align::io::{read_batch_csv, read_report_json, write_batch_csv, write_report_json, BatchRow, Report};
use ic_align::metrics::{epe3d, relative_pose_error};
use ic_align::solver::{align, Family, Frame, SolverConfig};
use nalgebra::Vector3;
use proptest::prelude::*;

fn twist() -> impl Strategy<Value = Twist> {
    (prop::array::uniform3(-1.5f64..1.5), prop::array::uniform3(-2.0f64..2.0))
        .prop_map(|(w, v)| Twist::new(Vector3::from(w), Vector3::from(v)))
}

fn points() -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec(prop::array::uniform3(-3.0f64..3.0).prop_map(Vector3::from), 1..20)
}

proptest! {
    #[test]
    fn epe_vanishes_on_equal_poses_and_is_symmetric(a in twist(), b in twist(), pts in points()) {
        let (ta, tb) = (exp_se3(&a), exp_se3(&b));
        prop_assert_eq!(epe3d(&pts, &ta, &ta).unwrap(), 0.0);
        let ab = epe3d(&pts, &ta, &tb).unwrap();
        let ba = epe3d(&pts, &tb, &ta).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn rpe_rotation_is_symmetric(a in twist(), b in twist()) {
        let (ta, tb) = (exp_se3(&a), exp_se3(&b));
        let ab = relative_pose_error(&ta, &tb);
        let ba = relative_pose_error(&tb, &ta);
        prop_assert!((ab.rotation_deg - ba.rotation_deg).abs() < 1e-8);
        prop_assert!(ab.rotation_deg >= 0.0 && ab.translation_cm >= 0.0);
    }
}

#[test]
fn generated_depth_is_positive_where_valid() {
    for seed in 0..4 {
        let pair = gen_rgbd_pair(&RgbdSceneSpec::default().with_seed(seed)).unwrap();
        for frame in [&pair.template, &pair.image] {
            let d = frame.depth.as_ref().unwrap();
            assert!(d.image().data().iter().all(|&v| v >= 0.0 && v.is_finite()));
            assert!(d.valid_count() > d.width() * d.height() / 2);
        }
    }
}

#[test]
fn json_report_roundtrips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = AffineGenSpec {
        crop: (96, 80),
        ..Default::default()
    };
    let pair = gen_affine_pair(&default_affine_source(1, spec.crop), &spec).unwrap();
    let cfg = SolverConfig {
        levels: 3,
        ..Default::default()
    };
    let r = align(&Frame::intensity(pair.template), &Frame::intensity(pair.image), Family::Affine, &cfg).unwrap();
    let report = Report::new(&r, &cfg);
    let path = dir.path().join("r.json");
    write_report_json(&report, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["schema_version"], 1);
    assert!(value.get("estimate").is_some() && value.get("trace").is_some());
    assert_eq!(read_report_json(&path).unwrap(), report);

    let rigid = gen_rgbd_pair(&RgbdSceneSpec::default()).unwrap();
    let r = align(&rigid.template, &rigid.image, Family::Rigid, &SolverConfig::default()).unwrap();
    let report = Report::new(&r, &SolverConfig::default());
    write_report_json(&report, &path).unwrap();
    assert_eq!(read_report_json(&path).unwrap(), report);
}

#[test]
fn batch_csv_roundtrips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.csv");
    let rows: Vec<BatchRow> = (0..5)
        .map(|i| BatchRow {
            schema_version: 1,
            pair: format!("pair_{i:04}"),
            family: if i % 2 == 0 { Family::Affine } else { Family::Rigid },
            method: "proposals".into(),
            converged: i != 3,
            reason: "iteration_budget".into(),
            iterations: 12,
            final_objective: 1.0 / (3.0 + i as f64),
            affine_l1: (i % 2 == 0).then_some(0.1f64.powi(i)),
            rotation_deg: (i % 2 == 1).then_some(std::f64::consts::PI * i as f64),
            translation_cm: (i % 2 == 1).then_some(1e-7 / 3.0),
            epe3d_cm: None,
            p1: 0.1,
            p2: -0.2,
            p3: 1e-17,
            p4: 0.0,
            p5: 7.0 / 3.0,
            p6: -1e300,
        })
        .collect();
    write_batch_csv(&rows, &path).unwrap();
    assert_eq!(read_batch_csv(&path).unwrap(), rows);
}
